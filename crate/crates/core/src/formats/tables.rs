//! CSV tables: count series, timestamps, correlation curves, jackknife
//! replicates, analytic curves and raw images.
//!
//! Floats are written with the shortest representation that parses back to
//! the same value, so every table survives a write/read cycle bit for bit.

use std::fmt::Write as _;

use crate::detect::CountSeries;
use crate::error::{Error, Result};
use crate::estimator::CorrelationCurve;
use crate::imaging::ImageMap;

/// Shortest round-trip text for a float; `nan`, `inf`, `-inf` otherwise.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x}")
    }
}

fn records<'a>(text: &'a str, header: &[&str]) -> Result<impl Iterator<Item = Result<(usize, csv::StringRecord)>> + 'a> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let found = rdr.headers().map_err(|e| Error::parse(1, e.to_string()))?.clone();
    let found: Vec<&str> = found.iter().collect();
    if found != header {
        return Err(Error::parse(1, format!("expected header `{}`, found `{}`", header.join(","), found.join(","))));
    }
    let width = header.len();
    Ok(rdr.into_records().map(move |r| {
        let rec = r.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != width {
            return Err(Error::parse(line, format!("expected {width} fields, found {}", rec.len())));
        }
        Ok((line, rec))
    }))
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, line: usize, name: &str) -> Result<T> {
    rec[i]
        .parse()
        .map_err(|_| Error::parse(line, format!("bad {name} `{}`", &rec[i])))
}

pub const COUNTS_HEADER: &str = "bin_index,count_ch1,count_ch2";

pub fn write_counts(ch1: &CountSeries, ch2: &CountSeries) -> Result<String> {
    if ch1.len() != ch2.len() {
        return Err(Error::Dimension {
            expected: format!("{} bins", ch1.len()),
            got: format!("{} bins", ch2.len()),
        });
    }
    let mut out = String::with_capacity(16 * ch1.len() + 32);
    out.push_str(COUNTS_HEADER);
    out.push('\n');
    for (i, (a, b)) in ch1.counts().iter().zip(ch2.counts()).enumerate() {
        writeln!(out, "{i},{a},{b}").unwrap();
    }
    Ok(out)
}

/// Parse a count table; bin indices must run 0, 1, 2, ...
pub fn read_counts(text: &str, bin_width: u64) -> Result<(CountSeries, CountSeries)> {
    let header: Vec<&str> = COUNTS_HEADER.split(',').collect();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for row in records(text, &header)? {
        let (line, rec) = row?;
        let idx: u64 = field(&rec, 0, line, "bin_index")?;
        if idx != a.len() as u64 {
            return Err(Error::parse(line, format!("bin_index {idx} out of sequence, expected {}", a.len())));
        }
        a.push(field(&rec, 1, line, "count_ch1")?);
        b.push(field(&rec, 2, line, "count_ch2")?);
    }
    if a.is_empty() {
        return Err(Error::parse(1, "no rows"));
    }
    Ok((CountSeries::new(a, 1, bin_width), CountSeries::new(b, 2, bin_width)))
}

pub const TIMESTAMPS_HEADER: &str = "channel,timestamp_ns";

pub fn read_timestamps(text: &str) -> Result<Vec<(u8, u64)>> {
    let header: Vec<&str> = TIMESTAMPS_HEADER.split(',').collect();
    let mut events = Vec::new();
    for row in records(text, &header)? {
        let (line, rec) = row?;
        let ch: u8 = field(&rec, 0, line, "channel")?;
        if ch != 1 && ch != 2 {
            return Err(Error::parse(line, format!("channel must be 1 or 2, got {ch}")));
        }
        events.push((ch, field(&rec, 1, line, "timestamp_ns")?));
    }
    Ok(events)
}

pub fn write_timestamps(events: &[(u8, u64)]) -> String {
    let mut out = String::from(TIMESTAMPS_HEADER);
    out.push('\n');
    for (c, t) in events {
        writeln!(out, "{c},{t}").unwrap();
    }
    out
}

/// One row of a correlation-curve table.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveRow {
    /// Lag in bins, or pixel offset for spatial curves.
    pub lag: i64,
    pub m: u64,
    pub n: u64,
    pub g2: f64,
    pub stderr: f64,
    pub events: u64,
}

/// First column name: `lag` for temporal curves, `dx` for spatial ones.
pub fn write_curves(first_column: &str, curves: &[CorrelationCurve]) -> String {
    let mut out = format!("{first_column},m,n,g2,stderr,events\n");
    for c in curves {
        for p in &c.points {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                p.lag,
                c.m,
                c.n,
                fmt_f64(p.g2),
                fmt_f64(p.stderr),
                p.events
            )
            .unwrap();
        }
    }
    out
}

pub fn read_curves(text: &str) -> Result<Vec<CurveRow>> {
    let first = text.split([',', '\n']).next().unwrap_or("").trim();
    let first = if first == "dx" { "dx" } else { "lag" };
    let header = [first, "m", "n", "g2", "stderr", "events"];
    let mut rows = Vec::new();
    for row in records(text, &header)? {
        let (line, rec) = row?;
        rows.push(CurveRow {
            lag: field(&rec, 0, line, first)?,
            m: field(&rec, 1, line, "m")?,
            n: field(&rec, 2, line, "n")?,
            g2: field(&rec, 3, line, "g2")?,
            stderr: field(&rec, 4, line, "stderr")?,
            events: field(&rec, 5, line, "events")?,
        });
    }
    Ok(rows)
}

/// One leave-one-block-out value.
#[derive(Clone, Debug, PartialEq)]
pub struct JackknifeRow {
    pub block: usize,
    pub lag: i64,
    pub m: u64,
    pub n: u64,
    pub g2: f64,
}

pub const JACKKNIFE_HEADER: &str = "block,lag,m,n,g2";

/// `replicates[b][i]` belongs to `curve.points[i]`.
pub fn write_jackknife(curves: &[(&CorrelationCurve, Vec<Vec<f64>>)]) -> String {
    let mut out = String::from(JACKKNIFE_HEADER);
    out.push('\n');
    for (curve, reps) in curves {
        for (b, rep) in reps.iter().enumerate() {
            for (p, g) in curve.points.iter().zip(rep) {
                writeln!(out, "{b},{},{},{},{}", p.lag, curve.m, curve.n, fmt_f64(*g)).unwrap();
            }
        }
    }
    out
}

pub fn read_jackknife(text: &str) -> Result<Vec<JackknifeRow>> {
    let header: Vec<&str> = JACKKNIFE_HEADER.split(',').collect();
    let mut rows = Vec::new();
    for row in records(text, &header)? {
        let (line, rec) = row?;
        rows.push(JackknifeRow {
            block: field(&rec, 0, line, "block")?,
            lag: field(&rec, 1, line, "lag")?,
            m: field(&rec, 2, line, "m")?,
            n: field(&rec, 3, line, "n")?,
            g2: field(&rec, 4, line, "g2")?,
        });
    }
    Ok(rows)
}

/// `x,m,g2` rows, e.g. `nbar,m,g2` or `tau,m,g2`.
pub fn write_xy(x_name: &str, rows: &[(f64, u32, f64)]) -> String {
    let mut out = format!("{x_name},m,g2\n");
    for (x, m, g) in rows {
        writeln!(out, "{},{m},{}", fmt_f64(*x), fmt_f64(*g)).unwrap();
    }
    out
}

pub const IMAGE_HEADER: &str = "y,x,g2,stderr,events,starved";

pub fn write_image(image: &ImageMap) -> String {
    let mut out = String::from(IMAGE_HEADER);
    out.push('\n');
    for y in 0..image.ny {
        for x in 0..image.nx {
            let p = y * image.nx + x;
            writeln!(
                out,
                "{y},{x},{},{},{},{}",
                fmt_f64(image.values[p]),
                fmt_f64(image.stderr[p]),
                image.events[p],
                image.starved[p] as u8
            )
            .unwrap();
        }
    }
    out
}

/// Raw image table back to `(nx, ny, values, stderr, events, starved)`.
pub struct ImageTable {
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
    pub events: Vec<u64>,
    pub starved: Vec<bool>,
}

pub fn read_image(text: &str) -> Result<ImageTable> {
    let header: Vec<&str> = IMAGE_HEADER.split(',').collect();
    let mut rows = Vec::new();
    for row in records(text, &header)? {
        let (line, rec) = row?;
        let y: usize = field(&rec, 0, line, "y")?;
        let x: usize = field(&rec, 1, line, "x")?;
        let starved: u8 = field(&rec, 5, line, "starved")?;
        if starved > 1 {
            return Err(Error::parse(line, "starved must be 0 or 1"));
        }
        rows.push((
            line,
            y,
            x,
            field::<f64>(&rec, 2, line, "g2")?,
            field::<f64>(&rec, 3, line, "stderr")?,
            field::<u64>(&rec, 4, line, "events")?,
            starved == 1,
        ));
    }
    let nx = rows.iter().map(|r| r.2.saturating_add(1)).max().ok_or_else(|| Error::parse(1, "no rows"))?;
    let ny = rows.iter().map(|r| r.1.saturating_add(1)).max().unwrap_or(0);
    if nx.checked_mul(ny) != Some(rows.len()) {
        return Err(Error::parse(1, format!("{} rows do not fill a {nx}x{ny} grid", rows.len())));
    }
    let mut t = ImageTable {
        nx,
        ny,
        values: vec![f64::NAN; nx * ny],
        stderr: vec![f64::NAN; nx * ny],
        events: vec![0; nx * ny],
        starved: vec![true; nx * ny],
    };
    let mut seen = vec![false; nx * ny];
    for (line, y, x, g, se, ev, st) in rows {
        let p = y * nx + x;
        if std::mem::replace(&mut seen[p], true) {
            return Err(Error::parse(line, format!("pixel ({y},{x}) repeated")));
        }
        t.values[p] = g;
        t.stderr[p] = se;
        t.events[p] = ev;
        t.starved[p] = st;
    }
    Ok(t)
}
