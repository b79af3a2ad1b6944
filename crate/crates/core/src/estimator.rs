//! Empirical joint photon-number statistics and normalized correlations.
//!
//! A [`JointHistogram`] tallies `(m, n)` outcomes of paired bins. Histograms
//! are integer-valued and merge by entrywise addition, so chunked or parallel
//! tallies reduce to exactly the same result in any order.
//!
//! Two standard errors are available for `g2_mn = N_mn N / (N_m. N_.n)`:
//!
//! * delta method on multinomial counts (independent bins). With
//!   `a = N_mn`, `R = N_m.`, `C = N_.n`:
//!   `Var(ln g) = 1/a - 1/R - 1/C + 2a/(R C) - 1/N`.
//! * delete-one-block jackknife over contiguous blocks of bins, which stays
//!   valid when consecutive bins are correlated (bins shorter than the
//!   coherence time).

use crate::detect::CountSeries;
use crate::error::{Error, Result};

pub const DEFAULT_CAP: usize = 16;

/// Tally of joint outcomes; index `cap + 1` on either axis is the overflow bucket.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JointHistogram {
    cap: usize,
    lag: i64,
    counts: Vec<u64>,
    total: u64,
}

impl JointHistogram {
    pub fn new(cap: usize, lag: i64) -> Self {
        let w = cap + 2;
        JointHistogram {
            cap,
            lag,
            counts: vec![0; w * w],
            total: 0,
        }
    }

    /// Build from a dense `(cap + 2)^2` table, overflow last on each axis.
    pub fn from_counts(cap: usize, lag: i64, counts: Vec<u64>) -> Result<Self> {
        let w = cap + 2;
        if counts.len() != w * w {
            return Err(Error::Dimension {
                expected: format!("{} cells", w * w),
                got: counts.len().to_string(),
            });
        }
        let total = counts.iter().sum();
        Ok(JointHistogram {
            cap,
            lag,
            counts,
            total,
        })
    }

    #[inline]
    fn slot(&self, m: u64, n: u64) -> usize {
        let w = self.cap + 2;
        let m = (m as usize).min(self.cap + 1);
        let n = (n as usize).min(self.cap + 1);
        m * w + n
    }

    #[inline]
    pub fn record(&mut self, m: u64, n: u64) {
        let s = self.slot(m, n);
        self.counts[s] += 1;
        self.total += 1;
    }

    pub fn cap(&self) -> usize {
        self.cap
    }
    pub fn lag(&self) -> i64 {
        self.lag
    }
    pub fn total(&self) -> u64 {
        self.total
    }

    /// `N_mn`; `m` or `n` above the cap address the overflow bucket.
    pub fn count(&self, m: u64, n: u64) -> u64 {
        self.counts[self.slot(m, n)]
    }

    /// `N_m.`, including bins whose second count overflowed.
    pub fn row_total(&self, m: u64) -> u64 {
        let w = self.cap + 2;
        let r = (m as usize).min(self.cap + 1);
        self.counts[r * w..(r + 1) * w].iter().sum()
    }

    /// `N_.n`, including bins whose first count overflowed.
    pub fn col_total(&self, n: u64) -> u64 {
        let w = self.cap + 2;
        let c = (n as usize).min(self.cap + 1);
        (0..w).map(|r| self.counts[r * w + c]).sum()
    }

    pub fn overflow_m(&self) -> u64 {
        self.row_total(self.cap as u64 + 1)
    }

    pub fn overflow_n(&self) -> u64 {
        self.col_total(self.cap as u64 + 1)
    }

    pub fn cells(&self) -> &[u64] {
        &self.counts
    }

    fn check_compatible(&self, other: &JointHistogram) -> Result<()> {
        if self.cap != other.cap || self.lag != other.lag {
            return Err(Error::Dimension {
                expected: format!("cap {} lag {}", self.cap, self.lag),
                got: format!("cap {} lag {}", other.cap, other.lag),
            });
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &JointHistogram) -> Result<()> {
        self.check_compatible(other)?;
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
        Ok(())
    }

    /// `self - other`, for leave-one-block-out replicates.
    pub fn without(&self, other: &JointHistogram) -> Result<JointHistogram> {
        self.check_compatible(other)?;
        let mut out = self.clone();
        for (a, b) in out.counts.iter_mut().zip(&other.counts) {
            *a = a
                .checked_sub(*b)
                .ok_or_else(|| Error::domain("histogram is not a sub-tally"))?;
        }
        out.total -= other.total;
        Ok(out)
    }
}

/// Pair `s1[i]` with `s2[i + lag]` over the overlap.
pub fn tally_joint(s1: &CountSeries, s2: &CountSeries, lag: i64, cap: usize) -> Result<JointHistogram> {
    let (start, end) = overlap(s1, s2, lag)?;
    let mut h = JointHistogram::new(cap, lag);
    let a = s1.counts();
    let b = s2.counts();
    for i in start..end {
        h.record(a[i], b[(i as i64 + lag) as usize]);
    }
    Ok(h)
}

fn overlap(s1: &CountSeries, s2: &CountSeries, lag: i64) -> Result<(usize, usize)> {
    if s1.bin_width() != s2.bin_width() {
        return Err(Error::Dimension {
            expected: format!("bin width {}", s1.bin_width()),
            got: format!("bin width {}", s2.bin_width()),
        });
    }
    let start = (-lag).max(0);
    let end = (s1.len() as i64).min(s2.len() as i64 - lag);
    if end - start < 1 {
        return Err(Error::InsufficientEvents {
            index: format!("lag {lag}"),
            detail: "series do not overlap".into(),
        });
    }
    Ok((start as usize, end as usize))
}

/// A normalized correlation estimate with its uncertainty.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct G2Estimate {
    pub value: f64,
    pub stderr: f64,
    /// Joint events `N_mn` (or summed count products for the intensity estimator).
    pub events: u64,
    pub row: u64,
    pub col: u64,
    pub total: u64,
}

fn point_estimate(h: &JointHistogram, m: u64, n: u64) -> Result<(f64, u64, u64, u64)> {
    if m as usize > h.cap || n as usize > h.cap {
        return Err(Error::domain(format!("index ({m}, {n}) above histogram cap {}", h.cap)));
    }
    let a = h.count(m, n);
    let r = h.row_total(m);
    let c = h.col_total(n);
    if r == 0 || c == 0 {
        return Err(Error::InsufficientEvents {
            index: format!("({m}, {n})"),
            detail: format!("marginals N_m. = {r}, N_.n = {c}"),
        });
    }
    let g = a as f64 * h.total as f64 / (r as f64 * c as f64);
    Ok((g, a, r, c))
}

/// Delta-method estimate of `g2_mn` from one histogram.
pub fn g2_hat(hist: &JointHistogram, m: u64, n: u64) -> Result<G2Estimate> {
    let (g, a, r, c) = point_estimate(hist, m, n)?;
    let (af, rf, cf, nf) = (a as f64, r as f64, c as f64, hist.total as f64);
    let stderr = if a == 0 {
        // one event's worth of signal
        nf / (rf * cf)
    } else {
        let var = 1.0 / af - 1.0 / rf - 1.0 / cf + 2.0 * af / (rf * cf) - 1.0 / nf;
        g * var.max(0.0).sqrt()
    };
    Ok(G2Estimate {
        value: g,
        stderr,
        events: a,
        row: r,
        col: c,
        total: hist.total,
    })
}

/// Jackknife standard error of any statistic over leave-one-out replicates.
pub fn jackknife_stderr(replicates: &[f64]) -> f64 {
    let b = replicates.len();
    if b < 2 {
        return f64::NAN;
    }
    let mean = replicates.iter().sum::<f64>() / b as f64;
    let ss: f64 = replicates.iter().map(|r| (r - mean).powi(2)).sum();
    ((b as f64 - 1.0) / b as f64 * ss).sqrt()
}

/// `g2_mn` from `total` with a delete-one-block jackknife error over `blocks`.
pub fn g2_jackknife(total: &JointHistogram, blocks: &[JointHistogram], m: u64, n: u64) -> Result<G2Estimate> {
    let mut est = g2_hat(total, m, n)?;
    let reps = blocks
        .iter()
        .map(|b| point_estimate(&total.without(b)?, m, n).map(|p| p.0))
        .collect::<Result<Vec<_>>>()?;
    est.stderr = jackknife_stderr(&reps);
    Ok(est)
}

/// Streaming tally of paired bins at several lags with per-block histograms.
///
/// Bin `j` of both channels is pushed together; pairs are assigned to a
/// block by the index of their first-channel bin. Memory is bounded by the
/// lag range and `cap^2 x lags x blocks`.
#[derive(Clone, Debug)]
pub struct StreamingCorrelator {
    lags: Vec<i64>,
    cap: usize,
    block_len: u64,
    ring1: Vec<u64>,
    ring2: Vec<u64>,
    pushed: u64,
    /// `blocks[b][l]`
    blocks: Vec<Vec<JointHistogram>>,
}

impl StreamingCorrelator {
    pub fn new(lags: &[i64], cap: usize, block_len: u64) -> Result<Self> {
        if lags.is_empty() {
            return Err(Error::domain("at least one lag is required"));
        }
        if block_len == 0 {
            return Err(Error::domain("block length must be >= 1"));
        }
        let pos = lags.iter().copied().max().unwrap().max(0) as usize;
        let neg = (-lags.iter().copied().min().unwrap()).max(0) as usize;
        Ok(StreamingCorrelator {
            lags: lags.to_vec(),
            cap,
            block_len,
            ring1: vec![0; pos + 1],
            ring2: vec![0; neg + 1],
            pushed: 0,
            blocks: Vec::new(),
        })
    }

    fn hist(&mut self, block: usize, l: usize) -> &mut JointHistogram {
        while self.blocks.len() <= block {
            let row = self.lags.iter().map(|&lag| JointHistogram::new(self.cap, lag)).collect();
            self.blocks.push(row);
        }
        &mut self.blocks[block][l]
    }

    pub fn push(&mut self, a: u64, b: u64) {
        let j = self.pushed;
        let r1 = self.ring1.len() as u64;
        let r2 = self.ring2.len() as u64;
        self.ring1[(j % r1) as usize] = a;
        self.ring2[(j % r2) as usize] = b;
        for l in 0..self.lags.len() {
            let lag = self.lags[l];
            if lag >= 0 {
                let lag = lag as u64;
                if j >= lag {
                    let i = j - lag;
                    let m = self.ring1[(i % r1) as usize];
                    let block = (i / self.block_len) as usize;
                    self.hist(block, l).record(m, b);
                }
            } else {
                let back = (-lag) as u64;
                if j >= back {
                    let n = self.ring2[((j - back) % r2) as usize];
                    let block = (j / self.block_len) as usize;
                    self.hist(block, l).record(a, n);
                }
            }
        }
        self.pushed += 1;
    }

    pub fn finish(self) -> LagTally {
        let mut totals: Vec<JointHistogram> = self.lags.iter().map(|&lag| JointHistogram::new(self.cap, lag)).collect();
        for row in &self.blocks {
            for (t, h) in totals.iter_mut().zip(row) {
                t.merge(h).expect("same shape");
            }
        }
        LagTally {
            lags: self.lags,
            totals,
            blocks: self.blocks,
        }
    }
}

/// Histograms for a list of lags, in total and per block.
#[derive(Clone, Debug)]
pub struct LagTally {
    lags: Vec<i64>,
    totals: Vec<JointHistogram>,
    blocks: Vec<Vec<JointHistogram>>,
}

impl LagTally {
    pub fn lags(&self) -> &[i64] {
        &self.lags
    }
    pub fn total(&self, l: usize) -> &JointHistogram {
        &self.totals[l]
    }
    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }
    fn block_hists(&self, l: usize) -> Vec<JointHistogram> {
        self.blocks.iter().map(|row| row[l].clone()).collect()
    }
}

/// Tally `s1` against `s2` at every lag, split into `blocks` contiguous blocks.
pub fn lag_tally(s1: &CountSeries, s2: &CountSeries, lags: &[i64], cap: usize, blocks: usize) -> Result<LagTally> {
    for &lag in lags {
        overlap(s1, s2, lag)?;
    }
    let len = s1.len().max(s2.len()) as u64;
    let block_len = len.div_ceil(blocks.max(1) as u64).max(1);
    if s1.len() != s2.len() {
        let (totals, blocks) = exact_tally(s1, s2, lags, cap, block_len)?;
        return Ok(LagTally {
            lags: lags.to_vec(),
            totals,
            blocks,
        });
    }
    let mut corr = StreamingCorrelator::new(lags, cap, block_len)?;
    for (&a, &b) in s1.counts().iter().zip(s2.counts()) {
        corr.push(a, b);
    }
    Ok(corr.finish())
}

/// Reference path for unequal lengths: explicit overlap per lag.
fn exact_tally(
    s1: &CountSeries,
    s2: &CountSeries,
    lags: &[i64],
    cap: usize,
    block_len: u64,
) -> Result<(Vec<JointHistogram>, Vec<Vec<JointHistogram>>)> {
    let nblocks = (s1.len() as u64).div_ceil(block_len) as usize;
    let mut blocks: Vec<Vec<JointHistogram>> = (0..nblocks)
        .map(|_| lags.iter().map(|&lag| JointHistogram::new(cap, lag)).collect())
        .collect();
    let mut totals: Vec<JointHistogram> = lags.iter().map(|&lag| JointHistogram::new(cap, lag)).collect();
    for (l, &lag) in lags.iter().enumerate() {
        let (start, end) = overlap(s1, s2, lag)?;
        for i in start..end {
            let m = s1.counts()[i];
            let n = s2.counts()[(i as i64 + lag) as usize];
            blocks[(i as u64 / block_len) as usize][l].record(m, n);
            totals[l].record(m, n);
        }
    }
    Ok((totals, blocks))
}

/// How curve uncertainties are computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StderrMethod {
    Delta,
    Jackknife { blocks: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CurveOptions {
    pub cap: usize,
    pub stderr: StderrMethod,
}

impl Default for CurveOptions {
    fn default() -> Self {
        CurveOptions {
            cap: DEFAULT_CAP,
            stderr: StderrMethod::Jackknife { blocks: 50 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct CurvePoint {
    pub lag: i64,
    /// NaN when starved.
    pub g2: f64,
    pub stderr: f64,
    pub events: u64,
    /// Reason the point could not be estimated.
    pub starved: Option<String>,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct CorrelationCurve {
    pub m: u64,
    pub n: u64,
    pub points: Vec<CurvePoint>,
}

fn estimate_at(tally: &LagTally, l: usize, m: u64, n: u64, method: StderrMethod) -> Result<G2Estimate> {
    match method {
        StderrMethod::Delta => g2_hat(tally.total(l), m, n),
        StderrMethod::Jackknife { .. } => g2_jackknife(tally.total(l), &tally.block_hists(l), m, n),
    }
}

/// Curve for `(m, n)` from an existing tally. Starved lags stay in the curve.
pub fn curve_from_tally(tally: &LagTally, m: u64, n: u64, method: StderrMethod) -> Result<CorrelationCurve> {
    let mut points = Vec::with_capacity(tally.lags.len());
    for (l, &lag) in tally.lags.iter().enumerate() {
        let p = match estimate_at(tally, l, m, n, method) {
            Ok(e) => CurvePoint {
                lag,
                g2: e.value,
                stderr: e.stderr,
                events: e.events,
                starved: None,
            },
            Err(Error::InsufficientEvents { index, detail }) => CurvePoint {
                lag,
                g2: f64::NAN,
                stderr: f64::NAN,
                events: tally.total(l).count(m, n),
                starved: Some(format!("{index}: {detail}")),
            },
            Err(e) => return Err(e),
        };
        points.push(p);
    }
    points.sort_by_key(|p| p.lag);
    Ok(CorrelationCurve { m, n, points })
}

/// Leave-one-block-out curves, `replicates[b][point]`, in the lag order of
/// [`curve_from_tally`]. NaN where a replicate is starved.
pub fn jackknife_curves(tally: &LagTally, m: u64, n: u64) -> Vec<Vec<f64>> {
    let mut order: Vec<usize> = (0..tally.lags.len()).collect();
    order.sort_by_key(|&l| tally.lags[l]);
    (0..tally.block_count())
        .map(|b| {
            order
                .iter()
                .map(|&l| {
                    tally
                        .total(l)
                        .without(&tally.blocks[b][l])
                        .and_then(|h| point_estimate(&h, m, n))
                        .map_or(f64::NAN, |p| p.0)
                })
                .collect()
        })
        .collect()
}

pub fn correlation_curve(
    s1: &CountSeries,
    s2: &CountSeries,
    m: u64,
    n: u64,
    lags: &[i64],
    opts: &CurveOptions,
) -> Result<CorrelationCurve> {
    let blocks = match opts.stderr {
        StderrMethod::Delta => 1,
        StderrMethod::Jackknife { blocks } => blocks,
    };
    let tally = lag_tally(s1, s2, lags, opts.cap, blocks)?;
    curve_from_tally(&tally, m, n, opts.stderr)
}

/// Integer moment sums of paired counts for the intensity-correlation estimator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MomentTally {
    pub bins: u64,
    pub s1: u64,
    pub s2: u64,
    pub s11: u64,
    pub s22: u64,
    pub s12: u64,
    pub s112: u64,
    pub s122: u64,
    pub s1122: u64,
}

impl MomentTally {
    #[inline]
    pub fn record(&mut self, a: u64, b: u64) {
        let ab = a * b;
        self.bins += 1;
        self.s1 += a;
        self.s2 += b;
        self.s11 += a * a;
        self.s22 += b * b;
        self.s12 += ab;
        self.s112 += ab * a;
        self.s122 += ab * b;
        self.s1122 += ab * ab;
    }

    pub fn merge(&mut self, o: &MomentTally) {
        self.bins += o.bins;
        self.s1 += o.s1;
        self.s2 += o.s2;
        self.s11 += o.s11;
        self.s22 += o.s22;
        self.s12 += o.s12;
        self.s112 += o.s112;
        self.s122 += o.s122;
        self.s1122 += o.s1122;
    }

    pub fn without(&self, o: &MomentTally) -> MomentTally {
        MomentTally {
            bins: self.bins - o.bins,
            s1: self.s1 - o.s1,
            s2: self.s2 - o.s2,
            s11: self.s11 - o.s11,
            s22: self.s22 - o.s22,
            s12: self.s12 - o.s12,
            s112: self.s112 - o.s112,
            s122: self.s122 - o.s122,
            s1122: self.s1122 - o.s1122,
        }
    }

    /// `<n1 n2> / (<n1> <n2>)`.
    pub fn ratio(&self) -> Result<f64> {
        if self.s1 == 0 || self.s2 == 0 {
            return Err(Error::InsufficientEvents {
                index: "intensity correlation".into(),
                detail: format!("photon sums {} and {}", self.s1, self.s2),
            });
        }
        Ok(self.s12 as f64 * self.bins as f64 / (self.s1 as f64 * self.s2 as f64))
    }

    /// Ratio with a delta-method error over independent bins.
    pub fn estimate(&self) -> Result<G2Estimate> {
        let g = self.ratio()?;
        let n = self.bins as f64;
        let x = self.s12 as f64 / n;
        let y = self.s1 as f64 / n;
        let z = self.s2 as f64 / n;
        let stderr = if self.s12 == 0 {
            1.0 / (n * y * z)
        } else {
            let vxx = self.s1122 as f64 / n - x * x;
            let vyy = self.s11 as f64 / n - y * y;
            let vzz = self.s22 as f64 / n - z * z;
            let cxy = self.s112 as f64 / n - x * y;
            let cxz = self.s122 as f64 / n - x * z;
            let cyz = x - y * z;
            let var_ln = (vxx / (x * x) + vyy / (y * y) + vzz / (z * z) - 2.0 * cxy / (x * y) - 2.0 * cxz / (x * z)
                + 2.0 * cyz / (y * z))
                / n;
            g * var_ln.max(0.0).sqrt()
        };
        Ok(G2Estimate {
            value: g,
            stderr,
            events: self.s12,
            row: self.s1,
            col: self.s2,
            total: self.bins,
        })
    }
}

/// `<n1(t) n2(t + lag)> / (<n1> <n2>)` over the overlap.
pub fn traditional_g2(s1: &CountSeries, s2: &CountSeries, lag: i64) -> Result<G2Estimate> {
    let (start, end) = overlap(s1, s2, lag)?;
    let mut t = MomentTally::default();
    for i in start..end {
        t.record(s1.counts()[i], s2.counts()[(i as i64 + lag) as usize]);
    }
    t.estimate()
}
