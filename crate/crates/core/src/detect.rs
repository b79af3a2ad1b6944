//! Photodetection: intensity traces to per-bin photon counts.
//!
//! Counts follow the semiclassical rule: given the mean intensity over a bin,
//! the count is Poisson with mean `eta * I_bin * T`.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fieldgen::FieldStack;
use crate::rng::StreamKey;

/// Bins per keyed random stream in [`sample_counts`].
const COUNT_CHUNK: usize = 4096;

/// Means above this use the library sampler instead of exponential gaps.
const DIRECT_POISSON_MAX: f64 = 16.0;

/// Transmittance of the imaged object, row-major `ny x nx`, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectMask {
    nx: usize,
    ny: usize,
    values: Vec<f64>,
}

impl ObjectMask {
    pub fn new(nx: usize, ny: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != nx * ny {
            return Err(Error::Dimension {
                expected: format!("{nx}x{ny} = {} values", nx * ny),
                got: values.len().to_string(),
            });
        }
        let values = values
            .into_iter()
            .map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
            .collect();
        Ok(ObjectMask { nx, ny, values })
    }

    pub fn from_fn(nx: usize, ny: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let values = (0..ny).flat_map(|y| (0..nx).map(move |x| (x, y))).map(|(x, y)| f(x, y));
        ObjectMask::new(nx, ny, values.collect()).expect("sized by construction")
    }

    pub fn all_pass(nx: usize, ny: usize) -> Self {
        Self::from_fn(nx, ny, |_, _| 1.0)
    }

    pub fn opaque(nx: usize, ny: usize) -> Self {
        Self::from_fn(nx, ny, |_, _| 0.0)
    }

    /// A block letter "T" scaled to the grid: a bar across the top fifth and
    /// a stem down the middle, each one eighth of the grid wide.
    pub fn letter_t(nx: usize, ny: usize) -> Self {
        let fx = |a: usize| a * nx / 64;
        let fy = |a: usize| a * ny / 64;
        Self::from_fn(nx, ny, |x, y| {
            let bar = y >= fy(12) && y < fy(20) && x >= fx(12) && x < fx(52);
            let stem = y >= fy(20) && y < fy(52) && x >= fx(28) && x < fx(36);
            if bar || stem {
                1.0
            } else {
                0.0
            }
        })
    }

    /// Named built-in masks: `T`, `open`, `opaque`.
    pub fn builtin(name: &str, nx: usize, ny: usize) -> Option<Self> {
        match name {
            "T" | "t" => Some(Self::letter_t(nx, ny)),
            "open" => Some(Self::all_pass(nx, ny)),
            "opaque" => Some(Self::opaque(nx, ny)),
            _ => None,
        }
    }

    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Pixel belongs to the object region (transmittance above one half).
    pub fn is_inside(&self, pixel: usize) -> bool {
        self.values[pixel] > 0.5
    }

    pub fn has_both_regions(&self) -> bool {
        let inside = (0..self.values.len()).filter(|&p| self.is_inside(p)).count();
        inside > 0 && inside < self.values.len()
    }

    pub fn total_transmission(&self) -> f64 {
        self.values.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct DetectorConfig {
    pub eta_ref: f64,
    pub eta_bucket: f64,
    /// Bin width `T` in frames.
    pub bin_width: u64,
    /// Mean dark counts per bin, added to every channel.
    pub dark_rate: f64,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            eta_ref: 0.2,
            eta_bucket: 0.5,
            bin_width: 1,
            dark_rate: 0.0,
            seed: 0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eta_ref", self.eta_ref), ("eta_bucket", self.eta_bucket), ("dark_rate", self.dark_rate)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.bin_width == 0 {
            return Err(Error::config("bin_width must be at least one frame"));
        }
        Ok(())
    }
}

/// Photon counts of one channel, one entry per bin.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountSeries {
    counts: Vec<u64>,
    channel: u8,
    bin_width: u64,
}

impl CountSeries {
    pub fn new(counts: Vec<u64>, channel: u8, bin_width: u64) -> Self {
        CountSeries {
            counts,
            channel,
            bin_width,
        }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }
    pub fn channel(&self) -> u8 {
        self.channel
    }
    pub fn bin_width(&self) -> u64 {
        self.bin_width
    }
    pub fn len(&self) -> usize {
        self.counts.len()
    }
    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
    pub fn mean(&self) -> f64 {
        if self.counts.is_empty() {
            return 0.0;
        }
        self.total() as f64 / self.counts.len() as f64
    }
}

fn pixel_index(stack: &FieldStack, pixel: (usize, usize)) -> Result<usize> {
    let c = stack.config();
    if pixel.0 >= c.nx || pixel.1 >= c.ny {
        return Err(Error::Dimension {
            expected: format!("pixel inside {}x{}", c.nx, c.ny),
            got: format!("({}, {})", pixel.0, pixel.1),
        });
    }
    Ok(pixel.1 * c.nx + pixel.0)
}

/// `|E(pixel, t)|^2` for every frame; `pixel` is `(x, y)`.
pub fn point_intensity(stack: &FieldStack, pixel: (usize, usize)) -> Result<Vec<f64>> {
    let p = pixel_index(stack, pixel)?;
    Ok((0..stack.frames()).map(|t| stack.intensity(t, p)).collect())
}

/// Mask-weighted total intensity per frame.
pub fn bucket_intensity(stack: &FieldStack, mask: &ObjectMask) -> Result<Vec<f64>> {
    let c = stack.config();
    if mask.nx != c.nx || mask.ny != c.ny {
        return Err(Error::Dimension {
            expected: format!("mask {}x{}", c.nx, c.ny),
            got: format!("{}x{}", mask.nx, mask.ny),
        });
    }
    Ok((0..stack.frames())
        .map(|t| {
            stack
                .frame(t)
                .iter()
                .zip(&mask.values)
                .map(|(e, w)| w * e.norm_sqr())
                .sum()
        })
        .collect())
}

/// Draw a Poisson variate with mean `lambda`.
///
/// Small means count unit-rate exponential gaps inside `[0, lambda]`, which
/// needs about `lambda + 1` draws and costs one draw for an empty bin.
#[inline]
pub fn poisson<R: Rng + ?Sized>(rng: &mut R, lambda: f64) -> u64 {
    if !(lambda > 0.0) {
        return 0;
    }
    if lambda < DIRECT_POISSON_MAX {
        let mut acc: f64 = Exp1.sample(rng);
        let mut k = 0;
        while acc <= lambda {
            k += 1;
            let gap: f64 = Exp1.sample(rng);
            acc += gap;
        }
        k
    } else {
        Poisson::new(lambda).expect("finite positive mean").sample(rng) as u64
    }
}

/// Mean intensity of each complete bin of `bin_width` frames.
pub fn bin_means(trace: &[f64], bin_width: u64) -> Result<Vec<f64>> {
    if bin_width == 0 {
        return Err(Error::domain("bin_width must be >= 1"));
    }
    let k = bin_width as usize;
    Ok(trace
        .chunks_exact(k)
        .map(|c| c.iter().sum::<f64>() / k as f64)
        .collect())
}

/// Photon counts from an intensity trace; `seed` fixes the draws.
pub fn sample_counts(trace: &[f64], eta: f64, bin_width: u64, seed: u64) -> Result<CountSeries> {
    sample_counts_keyed(trace, eta, bin_width, 0.0, &StreamKey::derive(seed, "counts"), 1)
}

/// As [`sample_counts`] with dark counts, an explicit stream key and a channel label.
pub fn sample_counts_keyed(
    trace: &[f64],
    eta: f64,
    bin_width: u64,
    dark_rate: f64,
    key: &StreamKey,
    channel: u8,
) -> Result<CountSeries> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::domain(format!("eta must be finite and >= 0, got {eta}")));
    }
    if !(dark_rate >= 0.0 && dark_rate.is_finite()) {
        return Err(Error::domain(format!("dark_rate must be finite and >= 0, got {dark_rate}")));
    }
    let means = bin_means(trace, bin_width)?;
    let scale = eta * bin_width as f64;
    let mut counts = vec![0u64; means.len()];
    counts
        .par_chunks_mut(COUNT_CHUNK)
        .zip(means.par_chunks(COUNT_CHUNK))
        .enumerate()
        .for_each(|(c, (out, mean))| {
            let mut rng = key.stream(c as u64);
            for (o, &i) in out.iter_mut().zip(mean) {
                *o = poisson(&mut rng, scale * i + dark_rate);
            }
        });
    Ok(CountSeries::new(counts, channel, bin_width))
}

/// Merge `k` consecutive bins; the incomplete tail is dropped.
pub fn rebin(series: &CountSeries, k: usize) -> Result<CountSeries> {
    if k == 0 {
        return Err(Error::domain("rebin factor must be >= 1"));
    }
    let counts = series.counts.chunks_exact(k).map(|c| c.iter().sum()).collect();
    Ok(CountSeries::new(counts, series.channel, series.bin_width * k as u64))
}

/// Memory allowed for the two series built from timestamps.
pub const MAX_BINNED_BYTES: u128 = 2 << 30;

/// Bin time-tagged events of channels 1 and 2 into count series.
///
/// Bins are `[i w, (i+1) w)` from time zero; the series run up to the bin of
/// the latest event in either channel.
pub fn bin_timestamps(events: &[(u8, u64)], bin_width_ns: u64) -> Result<(CountSeries, CountSeries)> {
    if bin_width_ns == 0 {
        return Err(Error::domain("bin width must be >= 1 ns"));
    }
    let last = events.iter().map(|e| e.1).max().unwrap_or(0);
    let nbins = (last / bin_width_ns) as u128 + 1;
    let bytes = nbins * 16;
    if bytes > MAX_BINNED_BYTES {
        return Err(Error::Size {
            requested: bytes,
            budget: MAX_BINNED_BYTES,
        });
    }
    let nbins = nbins as usize;
    let mut c1 = vec![0u64; nbins];
    let mut c2 = vec![0u64; nbins];
    for &(ch, t) in events {
        let b = (t / bin_width_ns) as usize;
        match ch {
            1 => c1[b] += 1,
            2 => c2[b] += 1,
            other => return Err(Error::domain(format!("unknown channel {other}; expected 1 or 2"))),
        }
    }
    Ok((CountSeries::new(c1, 1, 1), CountSeries::new(c2, 2, 1)))
}
