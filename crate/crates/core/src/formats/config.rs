//! Run configuration: flat `key = value` lines, `#` starts a comment.
//!
//! Keys not given take their defaults; flags on the command line are applied
//! on top with the same parser. All randomness of a run derives from `seed`.

use std::collections::BTreeSet;
use std::path::PathBuf;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct RunConfig {
    pub grid_nx: usize,
    pub grid_ny: usize,
    pub grain_px: f64,
    pub frames: u64,
    /// `inf` freezes the speckle pattern.
    pub coherence_frames: f64,
    pub mean_intensity: f64,
    /// Detection efficiencies; derived from `nbar_ref` / `nbar_bucket` when absent.
    pub eta_ref: Option<f64>,
    pub eta_bucket: Option<f64>,
    pub nbar_ref: f64,
    pub nbar_bucket: Option<f64>,
    pub bin_width: u64,
    pub dark_rate: f64,
    /// Histogram cap; counts above it share an overflow bucket.
    pub mmax: Option<usize>,
    pub m_list: Vec<u32>,
    /// PGM path, or `builtin:T`, `builtin:open`, `builtin:opaque`.
    pub object_path: String,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub lags: Vec<i64>,
    /// `(m, n)` pairs for curves; defaults to `(m, 0)` for every `m` in `m_list`.
    pub pairs: Option<Vec<(u64, u64)>>,
    /// Jackknife blocks.
    pub blocks: Option<usize>,
    pub include_traditional: bool,
    /// Draw the second arm from an independent field (imaging: run an extra control scan).
    pub control: bool,
    /// Bins of the independent-reference control scan of an imaging run (0 = `frames`).
    pub control_frames: u64,
    /// Largest pixel offset of the spatial curve.
    pub spatial_max_dx: Option<usize>,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            grid_nx: 64,
            grid_ny: 64,
            grain_px: 4.0,
            frames: 100_000,
            coherence_frames: 1.0,
            mean_intensity: 1.0,
            eta_ref: None,
            eta_bucket: None,
            nbar_ref: 0.2,
            nbar_bucket: None,
            bin_width: 1,
            dark_rate: 0.0,
            mmax: None,
            m_list: vec![0, 1, 2, 3, 4],
            object_path: "builtin:T".into(),
            out_dir: PathBuf::from("out"),
            seed: 0,
            lags: (0..=20).collect(),
            pairs: None,
            blocks: None,
            include_traditional: true,
            control: false,
            control_frames: 0,
            spatial_max_dx: None,
            threads: None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "grid_nx",
    "grid_ny",
    "grain_px",
    "frames",
    "coherence_frames",
    "mean_intensity",
    "eta_ref",
    "eta_bucket",
    "nbar_ref",
    "nbar_bucket",
    "bin_width",
    "dark_rate",
    "mmax",
    "m_list",
    "object_path",
    "out_dir",
    "seed",
    "lags",
    "pairs",
    "blocks",
    "include_traditional",
    "control",
    "control_frames",
    "spatial_max_dx",
    "threads",
];

fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse `{v}`"))
}

fn float(v: &str) -> std::result::Result<f64, String> {
    match v {
        "inf" | "infinity" => Ok(f64::INFINITY),
        _ => {
            let x: f64 = num(v)?;
            if x.is_nan() {
                Err("NaN is not allowed".into())
            } else {
                Ok(x)
            }
        }
    }
}

fn boolean(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got `{v}`")),
    }
}

fn list<T: std::str::FromStr>(v: &str) -> std::result::Result<Vec<T>, String> {
    v.split(',').map(|s| num(s.trim())).collect()
}

/// `a,b,c` or an inclusive range `start:stop[:step]`.
pub fn parse_lags(v: &str) -> std::result::Result<Vec<i64>, String> {
    if !v.contains(':') {
        return list(v);
    }
    let parts: Vec<i64> = v.split(':').map(|s| num(s.trim())).collect::<std::result::Result<_, _>>()?;
    let (start, stop, step) = match parts[..] {
        [a, b] => (a, b, 1),
        [a, b, c] => (a, b, c),
        _ => return Err(format!("bad range `{v}`")),
    };
    if step <= 0 || stop < start {
        return Err(format!("bad range `{v}`"));
    }
    if (stop - start) / step > 1_000_000 {
        return Err("range has too many lags".into());
    }
    Ok((start..=stop).step_by(step as usize).collect())
}

/// `m:n` pairs separated by commas.
pub fn parse_pairs(v: &str) -> std::result::Result<Vec<(u64, u64)>, String> {
    v.split(',')
        .map(|p| {
            let (m, n) = p.trim().split_once(':').ok_or(format!("expected m:n, got `{p}`"))?;
            Ok((num(m.trim())?, num(n.trim())?))
        })
        .collect()
}

impl RunConfig {
    /// Set one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim();
        match key {
            "grid_nx" => self.grid_nx = num(v)?,
            "grid_ny" => self.grid_ny = num(v)?,
            "grain_px" => self.grain_px = float(v)?,
            "frames" => self.frames = num(v)?,
            "coherence_frames" => self.coherence_frames = float(v)?,
            "mean_intensity" => self.mean_intensity = float(v)?,
            "eta_ref" => self.eta_ref = Some(float(v)?),
            "eta_bucket" => self.eta_bucket = Some(float(v)?),
            "nbar_ref" => self.nbar_ref = float(v)?,
            "nbar_bucket" => self.nbar_bucket = Some(float(v)?),
            "bin_width" => self.bin_width = num(v)?,
            "dark_rate" => self.dark_rate = float(v)?,
            "mmax" => self.mmax = Some(num(v)?),
            "m_list" => self.m_list = list(v)?,
            "object_path" => self.object_path = v.to_string(),
            "out_dir" => self.out_dir = PathBuf::from(v),
            "seed" => self.seed = num(v)?,
            "lags" => self.lags = parse_lags(v)?,
            "pairs" => self.pairs = Some(parse_pairs(v)?),
            "blocks" => self.blocks = Some(num(v)?),
            "include_traditional" => self.include_traditional = boolean(v)?,
            "control" => self.control = boolean(v)?,
            "control_frames" => self.control_frames = num(v)?,
            "spatial_max_dx" => self.spatial_max_dx = Some(num(v)?),
            "threads" => self.threads = Some(num(v)?),
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Parse a configuration file; errors name the offending line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body
                .split_once('=')
                .ok_or_else(|| Error::parse(line, format!("expected `key = value`, got `{body}`")))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::parse(line, format!("duplicate key `{key}`")));
            }
            cfg.set(key, value).map_err(|msg| Error::parse(line, format!("{key}: {msg}")))?;
        }
        Ok(cfg)
    }

    /// Apply `key=value` overrides from the command line.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::config(format!("override `{o}` is not key=value")))?;
            self.set(k.trim(), v).map_err(|m| Error::config(format!("{}: {m}", k.trim())))?;
        }
        Ok(())
    }

    /// Echo as `key = value` lines in key order, parseable by [`RunConfig::parse`].
    pub fn echo(&self) -> String {
        let f = crate::formats::tables::fmt_f64;
        let opt = |o: Option<f64>| o.map(f);
        let join = |v: Vec<String>| v.join(",");
        let mut out = String::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push_str(&format!("{k} = {v}\n"));
            }
        };
        put("grid_nx", Some(self.grid_nx.to_string()));
        put("grid_ny", Some(self.grid_ny.to_string()));
        put("grain_px", Some(f(self.grain_px)));
        put("frames", Some(self.frames.to_string()));
        put("coherence_frames", Some(f(self.coherence_frames)));
        put("mean_intensity", Some(f(self.mean_intensity)));
        put("eta_ref", opt(self.eta_ref));
        put("eta_bucket", opt(self.eta_bucket));
        put("nbar_ref", Some(f(self.nbar_ref)));
        put("nbar_bucket", opt(self.nbar_bucket));
        put("bin_width", Some(self.bin_width.to_string()));
        put("dark_rate", Some(f(self.dark_rate)));
        put("mmax", self.mmax.map(|v| v.to_string()));
        put("m_list", Some(join(self.m_list.iter().map(|m| m.to_string()).collect())));
        put("object_path", Some(self.object_path.clone()));
        put("out_dir", Some(self.out_dir.display().to_string()));
        put("seed", Some(self.seed.to_string()));
        put("lags", Some(join(self.lags.iter().map(|l| l.to_string()).collect())));
        put(
            "pairs",
            self.pairs
                .as_ref()
                .map(|p| join(p.iter().map(|(m, n)| format!("{m}:{n}")).collect())),
        );
        put("blocks", self.blocks.map(|v| v.to_string()));
        put("include_traditional", Some(self.include_traditional.to_string()));
        put("control", Some(self.control.to_string()));
        put("control_frames", Some(self.control_frames.to_string()));
        put("spatial_max_dx", self.spatial_max_dx.map(|v| v.to_string()));
        put("threads", self.threads.map(|v| v.to_string()));
        out
    }

    /// `(m, n)` pairs to report.
    pub fn curve_pairs(&self) -> Vec<(u64, u64)> {
        self.pairs
            .clone()
            .unwrap_or_else(|| self.m_list.iter().map(|&m| (m as u64, 0)).collect())
    }
}
