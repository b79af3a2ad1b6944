//! Pseudothermal speckle movies.
//!
//! A frame is a complex circular-Gaussian field on a periodic `ny x nx` grid.
//! Spatially it is white noise shaped in k-space by a Gaussian low-pass, so
//! that the intensity correlation between two pixels is
//! `exp(-|dr|^2 / grain^2)`. Temporally the white k-space frames are mixed
//! with a Gaussian FIR kernel, giving `|g1(lag)|^2 = exp(-lag^2 / tau_c^2)`.
//!
//! White frame `t` is drawn from keyed stream `t`, so any range of frames can
//! be rendered on its own and the movie does not depend on how the frame
//! range is split between threads.

use std::sync::Arc;

use num_complex::{Complex32, Complex64};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::rng::StreamKey;

/// Default cap on materialized stacks.
pub const DEFAULT_MEMORY_BUDGET: u128 = 2 << 30;

/// Amplitude below which a k-space mode is dropped (power below 1e-8).
const MODE_CUTOFF: f64 = 1e-4;

/// Relative tap amplitude at which the temporal kernel is truncated.
const TAP_CUTOFF: f64 = 1e-9;

const RENDER_CHUNK: usize = 1024;

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct SourceConfig {
    pub nx: usize,
    pub ny: usize,
    /// Speckle grain `l_c` in pixels (1/e half-width of the intensity correlation).
    pub grain_px: f64,
    pub frames: u64,
    /// Coherence time in frame intervals; `f64::INFINITY` freezes the pattern.
    pub coherence_frames: f64,
    pub mean_intensity: f64,
    pub seed: u64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig {
            nx: 64,
            ny: 64,
            grain_px: 4.0,
            frames: 100_000,
            coherence_frames: 1.0,
            mean_intensity: 1.0,
            seed: 0,
        }
    }
}

impl SourceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || self.frames == 0 {
            return Err(Error::config("nx, ny and frames must all be >= 1"));
        }
        if !(self.grain_px > 0.0 && self.grain_px.is_finite()) {
            return Err(Error::config(format!("grain_px must be finite and > 0, got {}", self.grain_px)));
        }
        if !(self.coherence_frames > 0.0) {
            return Err(Error::config(format!(
                "coherence_frames must be > 0, got {}",
                self.coherence_frames
            )));
        }
        if !(self.mean_intensity > 0.0 && self.mean_intensity.is_finite()) {
            return Err(Error::config(format!(
                "mean_intensity must be finite and > 0, got {}",
                self.mean_intensity
            )));
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.nx * self.ny
    }

    /// How grid and frame units map onto laboratory quantities. Informational.
    pub fn units_table(&self) -> Vec<(String, String)> {
        vec![
            ("frame interval".into(), "intensity resolution quantum; one bin = 1 us in the reference setup".into()),
            ("pixel".into(), format!("object-plane sample; grain of {} px = speckle 1/e radius", self.grain_px)),
            ("sigma".into(), format!("1/coherence_frames = {} per frame", 1.0 / self.coherence_frames)),
            ("nbar".into(), "eta * mean_intensity * bin_width photons per bin".into()),
        ]
    }
}

/// Intensity coherence `exp(-|dr|^2 / grain^2)` between two pixels.
pub fn spatial_mu(config: &SourceConfig, dr: (f64, f64)) -> f64 {
    let r2 = dr.0 * dr.0 + dr.1 * dr.1;
    (-r2 / (config.grain_px * config.grain_px)).exp()
}

/// Intensity coherence `exp(-(lag / tau_c)^2)` between two frames.
pub fn temporal_mu(config: &SourceConfig, lag_frames: f64) -> f64 {
    if config.coherence_frames.is_infinite() {
        return 1.0;
    }
    (-(lag_frames / config.coherence_frames).powi(2)).exp()
}

fn axis_filter(len: usize, grain: f64) -> Vec<(usize, f64)> {
    (0..len)
        .filter_map(|k| {
            let f = if 2 * k < len { k as f64 } else { k as f64 - len as f64 } / len as f64;
            let omega = 2.0 * std::f64::consts::PI * f;
            let h = (-grain * grain * omega * omega / 4.0).exp();
            (h >= MODE_CUTOFF).then_some((k, h))
        })
        .collect()
}

/// Gaussian FIR taps `exp(-s^2/tau_c^2)`, normalized to unit energy.
fn temporal_taps(coherence: f64) -> Vec<f64> {
    let reach = (coherence * (1.0 / TAP_CUTOFF).ln().sqrt()).floor() as i64;
    let mut taps: Vec<f64> = (-reach..=reach)
        .map(|s| (-(s as f64 / coherence).powi(2)).exp())
        .collect();
    let norm = taps.iter().map(|h| h * h).sum::<f64>().sqrt();
    taps.iter_mut().for_each(|h| *h /= norm);
    taps
}

/// One active k-space mode: column `ikx` of the active x set, row `ky`.
#[derive(Clone, Copy, Debug)]
struct Mode {
    ikx: usize,
    ky: usize,
    amp: f64,
}

/// Streaming generator of speckle frames.
pub struct SpeckleSource {
    config: SourceConfig,
    /// Active x wavenumbers.
    kx: Vec<usize>,
    /// Ordered column by column.
    modes: Vec<Mode>,
    /// `None` for a frozen pattern.
    taps: Option<Vec<f64>>,
    key: StreamKey,
    fft_x: Arc<dyn Fft<f32>>,
    fft_y: Arc<dyn Fft<f32>>,
}

impl SpeckleSource {
    pub fn new(config: &SourceConfig) -> Result<Self> {
        Self::with_label(config, "field")
    }

    /// Same geometry, independent randomness (e.g. a decorrelated control arm).
    pub fn with_label(config: &SourceConfig, label: &str) -> Result<Self> {
        config.validate()?;
        let fx = axis_filter(config.nx, config.grain_px);
        let fy = axis_filter(config.ny, config.grain_px);
        let mut modes = Vec::new();
        for (ikx, &(_, hx)) in fx.iter().enumerate() {
            for &(ky, hy) in &fy {
                if hx * hy >= MODE_CUTOFF {
                    modes.push(Mode { ikx, ky, amp: hx * hy });
                }
            }
        }
        let norm = (config.mean_intensity / modes.iter().map(|m| m.amp * m.amp).sum::<f64>()).sqrt();
        modes.iter_mut().for_each(|m| m.amp *= norm);
        let taps = config.coherence_frames.is_finite().then(|| temporal_taps(config.coherence_frames));
        let mut planner = FftPlanner::new();
        Ok(SpeckleSource {
            kx: fx.iter().map(|&(k, _)| k).collect(),
            modes,
            taps,
            key: StreamKey::derive(config.seed, label),
            fft_x: planner.plan_fft_inverse(config.nx),
            fft_y: planner.plan_fft_inverse(config.ny),
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &SourceConfig {
        &self.config
    }

    pub fn active_modes(&self) -> usize {
        self.modes.len()
    }

    /// Half-width of the temporal kernel in frames.
    pub fn reach(&self) -> usize {
        self.taps.as_ref().map_or(0, |t| (t.len() - 1) / 2)
    }

    fn white(&self, t: i64, out: &mut [Complex64]) {
        // frames before zero wrap to the top of the index space
        let mut rng = self.key.fast_stream(t as u64);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        for w in out.iter_mut() {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            *w = Complex64::new(re * s, im * s);
        }
    }

    fn render_raw<F>(&self, start: u64, count: usize, mut sink: F)
    where
        F: FnMut(u64, &[Complex32]),
    {
        if count == 0 {
            return;
        }
        let n = self.modes.len();
        let mut renderer = Renderer::new(self);
        let mut mixed = vec![Complex64::new(0.0, 0.0); n];
        let Some(taps) = &self.taps else {
            self.white(0, &mut mixed);
            let field = renderer.synthesize(self, &mixed).to_vec();
            for t in start..start + count as u64 {
                sink(t, &field);
            }
            return;
        };
        let reach = ((taps.len() - 1) / 2) as i64;
        let span = taps.len();
        let first = start as i64;
        if span == 1 {
            for t in first..first + count as i64 {
                self.white(t, &mut mixed);
                sink(t as u64, renderer.synthesize(self, &mixed));
            }
            return;
        }
        let mut ring = vec![Complex64::new(0.0, 0.0); span * n];
        let slot = |j: i64| (j.rem_euclid(span as i64)) as usize;
        for j in first - reach..first + reach {
            let s = slot(j);
            self.white(j, &mut ring[s * n..(s + 1) * n]);
        }
        for t in first..first + count as i64 {
            let j = t + reach;
            let s = slot(j);
            self.white(j, &mut ring[s * n..(s + 1) * n]);
            mixed.iter_mut().for_each(|m| *m = Complex64::new(0.0, 0.0));
            // E(t) = sum_s h(s) W(t - s), summed in fixed order of s
            for (i, &h) in taps.iter().enumerate() {
                let src = slot(t - (i as i64 - reach));
                let w = &ring[src * n..(src + 1) * n];
                for (m, &x) in mixed.iter_mut().zip(w) {
                    *m += x * h;
                }
            }
            sink(t as u64, renderer.synthesize(self, &mixed));
        }
    }

    /// Render frames `start .. start + count` in order, handing each complex
    /// field (row-major `ny x nx`) to `sink`.
    pub fn render<F>(&self, start: u64, count: usize, mut sink: F)
    where
        F: FnMut(u64, &[Complex64]),
    {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.config.pixels()];
        self.render_raw(start, count, |t, field| {
            for (b, e) in buf.iter_mut().zip(field) {
                *b = Complex64::new(e.re as f64, e.im as f64);
            }
            sink(t, &buf);
        });
    }

    /// Render intensities `|E|^2` instead of fields.
    pub fn render_intensity<F>(&self, start: u64, count: usize, mut sink: F)
    where
        F: FnMut(u64, &[f64]),
    {
        let mut buf = vec![0.0; self.config.pixels()];
        self.render_raw(start, count, |t, field| {
            for (b, e) in buf.iter_mut().zip(field) {
                *b = e.norm_sqr() as f64;
            }
            sink(t, &buf);
        });
    }
}

/// Scratch buffers for one sequential rendering pass. The inverse transform
/// runs along y on the active columns only, then along x on every row, and
/// is carried out in single precision.
struct Renderer {
    cols: Vec<Complex32>,
    grid: Vec<Complex32>,
    scratch: Vec<Complex32>,
}

impl Renderer {
    fn new(src: &SpeckleSource) -> Self {
        let scratch_len = src
            .fft_x
            .get_inplace_scratch_len()
            .max(src.fft_y.get_inplace_scratch_len());
        Renderer {
            cols: vec![Complex32::new(0.0, 0.0); src.kx.len() * src.config.ny],
            grid: vec![Complex32::new(0.0, 0.0); src.config.pixels()],
            scratch: vec![Complex32::new(0.0, 0.0); scratch_len],
        }
    }

    fn synthesize(&mut self, src: &SpeckleSource, modes: &[Complex64]) -> &[Complex32] {
        let (nx, ny) = (src.config.nx, src.config.ny);
        self.cols.iter_mut().for_each(|c| *c = Complex32::new(0.0, 0.0));
        for (m, w) in src.modes.iter().zip(modes) {
            let v = w * m.amp;
            self.cols[m.ikx * ny + m.ky] = Complex32::new(v.re as f32, v.im as f32);
        }
        src.fft_y.process_with_scratch(&mut self.cols, &mut self.scratch);
        self.grid.iter_mut().for_each(|g| *g = Complex32::new(0.0, 0.0));
        for (ikx, &kx) in src.kx.iter().enumerate() {
            let col = &self.cols[ikx * ny..(ikx + 1) * ny];
            for (y, &v) in col.iter().enumerate() {
                self.grid[y * nx + kx] = v;
            }
        }
        src.fft_x.process_with_scratch(&mut self.grid, &mut self.scratch);
        &self.grid
    }
}

/// A fully materialized movie, `frames x ny x nx`.
#[derive(Clone, Debug)]
pub struct FieldStack {
    config: SourceConfig,
    data: Vec<Complex64>,
}

impl FieldStack {
    /// Wrap externally produced fields (row-major `frames x ny x nx`).
    pub fn from_fields(config: SourceConfig, data: Vec<Complex64>) -> Result<Self> {
        let expected = config.frames as usize * config.pixels();
        if data.len() != expected {
            return Err(Error::Dimension {
                expected: format!("{expected} samples"),
                got: format!("{}", data.len()),
            });
        }
        Ok(FieldStack { config, data })
    }

    pub fn config(&self) -> &SourceConfig {
        &self.config
    }

    pub fn frames(&self) -> usize {
        self.config.frames as usize
    }

    pub fn frame(&self, t: usize) -> &[Complex64] {
        let n = self.config.pixels();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn intensity(&self, t: usize, pixel: usize) -> f64 {
        self.frame(t)[pixel].norm_sqr()
    }
}

pub fn generate_stack(config: &SourceConfig) -> Result<FieldStack> {
    generate_stack_with_budget(config, DEFAULT_MEMORY_BUDGET)
}

pub fn generate_stack_with_budget(config: &SourceConfig, budget_bytes: u128) -> Result<FieldStack> {
    config.validate()?;
    let requested = config.frames as u128 * config.pixels() as u128 * 16;
    if requested > budget_bytes {
        return Err(Error::Size {
            requested,
            budget: budget_bytes,
        });
    }
    let source = SpeckleSource::new(config)?;
    let n = config.pixels();
    let mut data = vec![Complex64::new(0.0, 0.0); config.frames as usize * n];
    data.par_chunks_mut(RENDER_CHUNK * n)
        .enumerate()
        .for_each(|(c, chunk)| {
            let start = (c * RENDER_CHUNK) as u64;
            source.render(start, chunk.len() / n, |t, field| {
                let off = (t - start) as usize * n;
                chunk[off..off + n].copy_from_slice(field);
            });
        });
    Ok(FieldStack {
        config: config.clone(),
        data,
    })
}
