//! Ghost-imaging scan: a reference detector at every pixel against a bucket
//! detector behind the object, reconstructed from zero-photon statistics.
//!
//! The scan streams the speckle movie frame by frame and never stores it.
//! Per pixel it keeps, for each jackknife block:
//!
//! * the joint histogram of (reference count, bucket count) restricted to
//!   reference counts `>= 1` (row 0 follows from the bucket column totals),
//! * integer moment sums for the intensity-correlation estimator.
//!
//! Only pixels that detected a photon in a bin touch memory, which keeps the
//! dominant dark-pixel case at one random draw per pixel per bin.

use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;

use crate::detect::{poisson, CountSeries, DetectorConfig, ObjectMask};
use crate::error::{Error, Result};
use crate::estimator::{g2_hat, jackknife_stderr, JointHistogram, MomentTally};
use crate::fieldgen::{SourceConfig, SpeckleSource};
use crate::rng::StreamKey;

/// Minimum events in every marginal for a pixel to count as estimated.
pub const STARVED_MIN: u64 = 100;

/// Ceiling for the PSNR of an exact reconstruction.
pub const PSNR_CAP_DB: f64 = 99.0;

pub const DEFAULT_IMAGING_CAP: usize = 8;

/// Default upper bound on tally memory.
pub const DEFAULT_TALLY_BUDGET: u128 = 3 << 30;

/// Bound on the summed reference mean per bin, far above any useful flux,
/// which keeps the fixed-point arrival sums in range.
const MAX_REFERENCE_PHOTONS: f64 = 1e7;

const FRAMES_PER_ITEM: u64 = 1024;

#[derive(Clone, Debug)]
pub struct ImagingRunConfig {
    pub source: SourceConfig,
    pub detector: DetectorConfig,
    pub object: ObjectMask,
    pub m_list: Vec<u32>,
    pub include_traditional: bool,
    /// Histogram cap; counts above it share an overflow bucket.
    pub cap: usize,
    /// Contiguous bin blocks for jackknife errors.
    pub blocks: usize,
    /// Draw the reference arm from an independent field (no correlation with the bucket).
    pub independent_reference: bool,
    pub seed: u64,
}

impl ImagingRunConfig {
    pub fn new(source: SourceConfig, detector: DetectorConfig, object: ObjectMask) -> Self {
        ImagingRunConfig {
            seed: source.seed,
            source,
            detector,
            object,
            m_list: vec![0, 1, 2, 3, 4],
            include_traditional: true,
            cap: DEFAULT_IMAGING_CAP,
            blocks: 20,
            independent_reference: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.detector.validate()?;
        if self.m_list.is_empty() {
            return Err(Error::config("m_list must not be empty"));
        }
        if let Some(&m) = self.m_list.iter().find(|&&m| m as usize > self.cap) {
            return Err(Error::config(format!("m = {m} exceeds histogram cap {}", self.cap)));
        }
        if self.object.nx() != self.source.nx || self.object.ny() != self.source.ny {
            return Err(Error::Dimension {
                expected: format!("object {}x{}", self.source.nx, self.source.ny),
                got: format!("{}x{}", self.object.nx(), self.object.ny()),
            });
        }
        if self.blocks == 0 {
            return Err(Error::config("blocks must be >= 1"));
        }
        if self.source.frames < self.detector.bin_width {
            return Err(Error::config("fewer frames than one bin"));
        }
        if self.nbar_ref() * self.source.pixels() as f64 > MAX_REFERENCE_PHOTONS {
            return Err(Error::config(format!(
                "reference arm expects more than {MAX_REFERENCE_PHOTONS:e} photons per bin"
            )));
        }
        if self.bins().div_ceil(self.blocks as u64) >= u32::MAX as u64 {
            return Err(Error::config("too many bins per block; raise blocks"));
        }
        Ok(())
    }

    pub fn bins(&self) -> u64 {
        self.source.frames / self.detector.bin_width
    }

    /// Reference photons per bin at a pixel of mean intensity.
    pub fn nbar_ref(&self) -> f64 {
        self.detector.eta_ref * self.source.mean_intensity * self.detector.bin_width as f64
    }

    /// Mean bucket photons per bin.
    pub fn nbar_bucket(&self) -> f64 {
        self.detector.eta_bucket
            * self.source.mean_intensity
            * self.object.total_transmission()
            * self.detector.bin_width as f64
    }
}

/// Moment sums of one pixel; the bucket-only sums live on the block.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct PixelMoments {
    s1: u64,
    s11: u64,
    s12: u64,
    s112: u64,
    s122: u64,
    s1122: u64,
}

impl PixelMoments {
    fn add_pair(&mut self, m: u64, n: u64, times: u64) {
        let mn = m * n;
        self.s1 += m * times;
        self.s11 += m * m * times;
        self.s12 += mn * times;
        self.s112 += mn * m * times;
        self.s122 += mn * n * times;
        self.s1122 += mn * mn * times;
    }
}

/// A lit pixel in an overflow row or column, kept exactly for the moments.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Overflow {
    pixel: u32,
    m: u64,
    n: u64,
}

/// Everything one block of bins contributes.
#[derive(Clone, Debug, PartialEq, Eq)]
struct BlockTally {
    pixels: usize,
    cap: usize,
    bins: u64,
    /// bins per bucket column (overflow last)
    cols: Vec<u64>,
    /// `[col][m - 1][pixel]` for reference counts `m >= 1`; one bin touches
    /// a single column slab.
    lit: Vec<u32>,
    overflow: Vec<Overflow>,
    bucket_s2: u64,
    bucket_s22: u64,
}

impl BlockTally {
    fn new(pixels: usize, cap: usize) -> Self {
        BlockTally {
            pixels,
            cap,
            bins: 0,
            cols: vec![0; cap + 2],
            lit: vec![0; pixels * (cap + 1) * (cap + 2)],
            overflow: Vec::new(),
            bucket_s2: 0,
            bucket_s22: 0,
        }
    }

    #[inline]
    fn lit_index(&self, row: usize, col: usize, pixel: usize) -> usize {
        (col * (self.cap + 1) + row - 1) * self.pixels + pixel
    }

    fn add(&mut self, o: &BlockTally) {
        self.bins += o.bins;
        self.cols.iter_mut().zip(&o.cols).for_each(|(a, b)| *a += b);
        self.lit.iter_mut().zip(&o.lit).for_each(|(a, b)| *a += b);
        self.overflow.extend_from_slice(&o.overflow);
        self.bucket_s2 += o.bucket_s2;
        self.bucket_s22 += o.bucket_s22;
    }

    fn histogram(&self, pixel: usize) -> JointHistogram {
        let cap = self.cap;
        let w = cap + 2;
        let mut cells = vec![0u64; w * w];
        for c in 0..w {
            let mut lit = 0;
            for r in 1..w {
                let v = self.lit[self.lit_index(r, c, pixel)] as u64;
                cells[r * w + c] = v;
                lit += v;
            }
            cells[c] = self.cols[c] - lit;
        }
        JointHistogram::from_counts(cap, 0, cells).expect("sized by construction")
    }

    /// Moment sums of every pixel: in-range cells from the histogram, the
    /// overflow cells from their exact events.
    fn pixel_moments(&self) -> Vec<PixelMoments> {
        let cap = self.cap;
        let mut out = vec![PixelMoments::default(); self.pixels];
        for c in 0..=cap {
            for r in 1..=cap {
                let base = self.lit_index(r, c, 0);
                for (p, &v) in self.lit[base..base + self.pixels].iter().enumerate() {
                    if v > 0 {
                        out[p].add_pair(r as u64, c as u64, v as u64);
                    }
                }
            }
        }
        for o in &self.overflow {
            out[o.pixel as usize].add_pair(o.m, o.n, 1);
        }
        out
    }

    fn moment_tally(&self, p: &PixelMoments) -> MomentTally {
        MomentTally {
            bins: self.bins,
            s1: p.s1,
            s2: self.bucket_s2,
            s11: p.s11,
            s22: self.bucket_s22,
            s12: p.s12,
            s112: p.s112,
            s122: p.s122,
            s1122: p.s1122,
        }
    }
}

/// Result of a scan: per-block tallies plus the bucket count series.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScanTallies {
    nx: usize,
    ny: usize,
    cap: usize,
    blocks: Vec<BlockTally>,
    total: BlockTally,
    block_moments: Vec<Vec<PixelMoments>>,
    total_moments: Vec<PixelMoments>,
    bucket: CountSeries,
}

impl ScanTallies {
    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn cap(&self) -> usize {
        self.cap
    }
    pub fn bins(&self) -> u64 {
        self.total.bins
    }
    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }
    pub fn bucket(&self) -> &CountSeries {
        &self.bucket
    }

    /// Lag-0 joint histogram of (reference at `pixel`, bucket).
    pub fn histogram(&self, pixel: usize) -> JointHistogram {
        self.total.histogram(pixel)
    }

    pub fn block_histogram(&self, block: usize, pixel: usize) -> JointHistogram {
        self.blocks[block].histogram(pixel)
    }

    pub fn moments(&self, pixel: usize) -> MomentTally {
        self.total.moment_tally(&self.total_moments[pixel])
    }

    pub fn block_moments(&self, block: usize, pixel: usize) -> MomentTally {
        self.blocks[block].moment_tally(&self.block_moments[block][pixel])
    }
}

fn tally_bytes(pixels: usize, cap: usize, blocks: usize) -> u128 {
    let per = pixels as u128 * ((cap as u128 + 1) * (cap as u128 + 2) * 4 + 48);
    per * (blocks as u128 + 2 + rayon::current_num_threads() as u128)
}

/// Simulate the two-arm experiment and tally every pixel against the bucket.
pub fn run_ghost_scan(config: &ImagingRunConfig) -> Result<ScanTallies> {
    run_ghost_scan_with_budget(config, DEFAULT_TALLY_BUDGET)
}

pub fn run_ghost_scan_with_budget(config: &ImagingRunConfig, budget_bytes: u128) -> Result<ScanTallies> {
    config.validate()?;
    let pixels = config.source.pixels();
    let requested = tally_bytes(pixels, config.cap, config.blocks);
    if requested > budget_bytes {
        return Err(Error::Size {
            requested,
            budget: budget_bytes,
        });
    }
    let bins = config.bins();
    if bins < config.blocks as u64 {
        return Err(Error::config(format!("{bins} bins cannot fill {} blocks", config.blocks)));
    }
    let bucket_source = SpeckleSource::new(&config.source)?;
    let reference_source = config
        .independent_reference
        .then(|| SpeckleSource::with_label(&config.source, "field/independent-reference"))
        .transpose()?;
    let det_key = StreamKey::derive(config.detector.seed, "detect/scan");
    let bw = config.detector.bin_width;
    let reach = bucket_source.reach() as u64;
    let bins_per_item = (FRAMES_PER_ITEM.max(8 * (2 * reach + 1)) / bw).max(1);
    let block_len = bins.div_ceil(config.blocks as u64);

    let scan = Scan {
        config,
        bucket_source: &bucket_source,
        reference_source: reference_source.as_ref(),
        det_key,
    };
    let mut blocks = Vec::with_capacity(config.blocks);
    let mut bucket = Vec::with_capacity(bins as usize);
    for b in 0..config.blocks as u64 {
        let start = b * block_len;
        let end = ((b + 1) * block_len).min(bins);
        let items: Vec<(u64, u64)> = (start..end)
            .step_by(bins_per_item as usize)
            .map(|s| (s, (s + bins_per_item).min(end)))
            .collect();
        let parts: Vec<(BlockTally, Vec<u64>)> = items.par_iter().map(|&(s, e)| scan.run(s, e)).collect();
        let mut block = BlockTally::new(pixels, config.cap);
        for (t, counts) in parts {
            block.add(&t);
            bucket.extend(counts);
        }
        blocks.push(block);
    }
    let mut total = BlockTally::new(pixels, config.cap);
    for b in &blocks {
        total.add(b);
    }
    Ok(ScanTallies {
        nx: config.source.nx,
        ny: config.source.ny,
        cap: config.cap,
        block_moments: blocks.iter().map(BlockTally::pixel_moments).collect(),
        total_moments: total.pixel_moments(),
        blocks,
        total,
        bucket: CountSeries::new(bucket, 2, bw),
    })
}

struct Scan<'a> {
    config: &'a ImagingRunConfig,
    bucket_source: &'a SpeckleSource,
    reference_source: Option<&'a SpeckleSource>,
    det_key: StreamKey,
}

impl Scan<'_> {
    /// Bins `[start, end)`.
    fn run(&self, start: u64, end: u64) -> (BlockTally, Vec<u64>) {
        let cfg = self.config;
        let pixels = cfg.source.pixels();
        let cap = cfg.cap;
        let bw = cfg.detector.bin_width;
        let frames = ((end - start) * bw) as usize;
        let first_frame = start * bw;
        let window: Vec<(usize, f64)> = cfg
            .object
            .values()
            .iter()
            .copied()
            .enumerate()
            .filter(|&(_, m)| m > 0.0)
            .collect();
        let eta_b = cfg.detector.eta_bucket;
        let dark = cfg.detector.dark_rate;
        // reference means in fixed point so the running sum is an integer chain
        let scale = FIXED_ONE * cfg.detector.eta_ref;
        let dark_fixed = to_fixed(dark * FIXED_ONE);

        // reference intensities from the independent field, if any
        let control: Option<Vec<f32>> = self.reference_source.map(|src| {
            let mut buf = Vec::with_capacity(frames * pixels);
            src.render_intensity(first_frame, frames, |_, i| buf.extend(i.iter().map(|&v| v as f32)));
            buf
        });

        let mut tally = BlockTally::new(pixels, cap);
        let mut counts = Vec::with_capacity((end - start) as usize);
        let mut acc_ref = vec![0.0; pixels];
        let mut acc_bucket = 0.0;
        let mut in_bin = 0;
        self.bucket_source.render_intensity(first_frame, frames, |t, intensity| {
            acc_bucket += window.iter().map(|&(p, m)| intensity[p] * m).sum::<f64>();
            let reference: &[f64] = match &control {
                Some(buf) => {
                    let off = (t - first_frame) as usize * pixels;
                    let frame = &buf[off..off + pixels];
                    acc_ref.iter_mut().zip(frame).for_each(|(a, &i)| *a += i as f64);
                    &acc_ref
                }
                None if bw == 1 => intensity,
                None => {
                    acc_ref.iter_mut().zip(intensity).for_each(|(a, i)| *a += i);
                    &acc_ref
                }
            };
            in_bin += 1;
            if in_bin < bw {
                return;
            }
            let bin = t / bw;
            let mut rng = self.det_key.fast_stream(bin);
            let n = poisson(&mut rng, eta_b * acc_bucket + dark);
            let col = (n as usize).min(cap + 1);
            tally.bins += 1;
            tally.cols[col] += 1;
            tally.bucket_s2 += n;
            tally.bucket_s22 += n * n;
            counts.push(n);
            // Reference pixels share one unit-rate Poisson process laid over
            // their cumulative means; arrivals inside a pixel's interval are
            // its photons, independent Poisson counts across pixels.
            let slab = tally.lit_index(1, col, 0);
            let mut edge = 0u64;
            let mut next = fixed_gap(&mut rng);
            for (p, &a) in reference.iter().enumerate() {
                edge += to_fixed(a * scale) + dark_fixed;
                if next > edge {
                    continue;
                }
                let mut m = 0u64;
                while next <= edge {
                    m += 1;
                    next += fixed_gap(&mut rng);
                }
                let row = (m as usize).min(cap + 1);
                tally.lit[slab + (row - 1) * pixels + p] += 1;
                if row > cap || col > cap {
                    tally.overflow.push(Overflow { pixel: p as u32, m, n });
                }
            }
            if bw > 1 || control.is_some() {
                acc_ref.iter_mut().for_each(|a| *a = 0.0);
            }
            acc_bucket = 0.0;
            in_bin = 0;
        });
        (tally, counts)
    }
}

/// Fixed-point unit for the reference arrival process.
const FIXED_ONE: f64 = (1u64 << 32) as f64;

/// Round a non-negative value below 2^52 to the nearest integer.
#[inline]
fn to_fixed(x: f64) -> u64 {
    const MAGIC: f64 = (1u64 << 52) as f64;
    (x + MAGIC).to_bits().wrapping_sub(MAGIC.to_bits())
}

#[inline]
fn fixed_gap<R: rand::Rng>(rng: &mut R) -> u64 {
    let e: f64 = Exp1.sample(rng);
    // exponential tails beyond 2^20 do not occur in practice
    to_fixed((e * FIXED_ONE).min(FIXED_ONE * (1u64 << 19) as f64)) + 1
}

/// Which statistic an image holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageStatistic {
    /// `g2_m0(0)` for the given `m`.
    ZeroPhoton { m: u32 },
    /// Intensity correlation `<n1 n2> / (<n1><n2>)`.
    Traditional,
}

impl ImageStatistic {
    pub fn label(&self) -> String {
        match self {
            ImageStatistic::ZeroPhoton { m } => format!("g2_{m}0"),
            ImageStatistic::Traditional => "g2_traditional".into(),
        }
    }
}

/// A reconstructed image, row-major `ny x nx`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageMap {
    pub nx: usize,
    pub ny: usize,
    pub statistic: ImageStatistic,
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
    pub events: Vec<u64>,
    pub starved: Vec<bool>,
    /// Leave-one-block-out images `[block][pixel]`; empty without blocks.
    pub replicates: Vec<Vec<f64>>,
}

impl ImageMap {
    /// Image from plain values, no uncertainty information.
    pub fn from_values(nx: usize, ny: usize, statistic: ImageStatistic, values: Vec<f64>) -> Result<Self> {
        if values.len() != nx * ny {
            return Err(Error::Dimension {
                expected: format!("{} values", nx * ny),
                got: values.len().to_string(),
            });
        }
        let n = values.len();
        let starved = values.iter().map(|v| !v.is_finite()).collect();
        Ok(ImageMap {
            nx,
            ny,
            statistic,
            values,
            stderr: vec![f64::NAN; n],
            events: vec![0; n],
            starved,
            replicates: Vec::new(),
        })
    }

    pub fn estimated_pixels(&self) -> usize {
        self.starved.iter().filter(|s| !**s).count()
    }
}

fn all_starved(label: &str) -> Error {
    Error::InsufficientEvents {
        index: label.to_string(),
        detail: format!("every pixel has fewer than {STARVED_MIN} events in a marginal"),
    }
}

/// Image of `g2_m0(0)` between every reference pixel and the bucket.
pub fn reconstruct(tallies: &ScanTallies, m: u32) -> Result<ImageMap> {
    let statistic = ImageStatistic::ZeroPhoton { m };
    if m as usize > tallies.cap {
        return Err(Error::domain(format!("m = {m} above histogram cap {}", tallies.cap)));
    }
    if tallies.bucket.total() == 0 {
        return Err(Error::InsufficientEvents {
            index: statistic.label(),
            detail: "bucket detector recorded no photons".into(),
        });
    }
    let pixels = tallies.nx * tallies.ny;
    let mut values = vec![f64::NAN; pixels];
    let mut stderr = vec![f64::NAN; pixels];
    let mut events = vec![0; pixels];
    let mut starved = vec![true; pixels];
    let mut replicates = vec![vec![f64::NAN; pixels]; if tallies.block_count() > 1 { tallies.block_count() } else { 0 }];
    for p in 0..pixels {
        let hist = tallies.histogram(p);
        let Ok(est) = g2_hat(&hist, m as u64, 0) else {
            continue;
        };
        values[p] = est.value;
        stderr[p] = est.stderr;
        events[p] = est.events;
        starved[p] = est.row < STARVED_MIN || est.col < STARVED_MIN;
        for (b, rep) in replicates.iter_mut().enumerate() {
            let h = hist.without(&tallies.block_histogram(b, p))?;
            rep[p] = g2_hat(&h, m as u64, 0).map_or(f64::NAN, |e| e.value);
        }
    }
    if starved.iter().all(|s| *s) {
        return Err(all_starved(&statistic.label()));
    }
    Ok(ImageMap {
        nx: tallies.nx,
        ny: tallies.ny,
        statistic,
        values,
        stderr,
        events,
        starved,
        replicates,
    })
}

/// Image of the intensity correlation of reference and bucket counts.
pub fn reconstruct_traditional(tallies: &ScanTallies) -> Result<ImageMap> {
    let statistic = ImageStatistic::Traditional;
    let pixels = tallies.nx * tallies.ny;
    let mut values = vec![f64::NAN; pixels];
    let mut stderr = vec![f64::NAN; pixels];
    let mut events = vec![0; pixels];
    let mut starved = vec![true; pixels];
    let nblocks = if tallies.block_count() > 1 { tallies.block_count() } else { 0 };
    let mut replicates = vec![vec![f64::NAN; pixels]; nblocks];
    for p in 0..pixels {
        let mt = tallies.moments(p);
        let Ok(est) = mt.estimate() else {
            continue;
        };
        values[p] = est.value;
        stderr[p] = est.stderr;
        events[p] = est.events;
        starved[p] = mt.s1 < STARVED_MIN || mt.s2 < STARVED_MIN;
        for (b, rep) in replicates.iter_mut().enumerate() {
            rep[p] = mt.without(&tallies.block_moments(b, p)).ratio().unwrap_or(f64::NAN);
        }
    }
    if starved.iter().all(|s| *s) {
        return Err(all_starved(&statistic.label()));
    }
    Ok(ImageMap {
        nx: tallies.nx,
        ny: tallies.ny,
        statistic,
        values,
        stderr,
        events,
        starved,
        replicates,
    })
}

/// Intensity-correlation image from explicit per-pixel reference series.
pub fn traditional_image_from_series(
    nx: usize,
    ny: usize,
    reference: &[CountSeries],
    bucket: &CountSeries,
) -> Result<ImageMap> {
    if reference.len() != nx * ny {
        return Err(Error::Dimension {
            expected: format!("{} reference series", nx * ny),
            got: reference.len().to_string(),
        });
    }
    let mut values = Vec::with_capacity(reference.len());
    let mut stderr = Vec::with_capacity(reference.len());
    let mut events = Vec::with_capacity(reference.len());
    let mut starved = Vec::with_capacity(reference.len());
    for s in reference {
        match crate::estimator::traditional_g2(s, bucket, 0) {
            Ok(e) => {
                values.push(e.value);
                stderr.push(e.stderr);
                events.push(e.events);
                starved.push(e.row < STARVED_MIN || e.col < STARVED_MIN);
            }
            Err(Error::InsufficientEvents { .. }) => {
                values.push(f64::NAN);
                stderr.push(f64::NAN);
                events.push(0);
                starved.push(true);
            }
            Err(e) => return Err(e),
        }
    }
    if starved.iter().all(|s| *s) {
        return Err(all_starved("g2_traditional"));
    }
    Ok(ImageMap {
        nx,
        ny,
        statistic: ImageStatistic::Traditional,
        values,
        stderr,
        events,
        starved,
        replicates: Vec::new(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastSign {
    Positive,
    Negative,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct ImageMetrics {
    pub statistic: String,
    /// `(mean_in - mean_out) / (mean_in + mean_out)` on raw values.
    pub visibility: f64,
    pub visibility_se: f64,
    /// `10 log10(1 / MSE)` of the min-max normalized image against the binarized object.
    pub psnr_db: f64,
    pub contrast_sign: ContrastSign,
    pub mean_in: f64,
    pub mean_in_se: f64,
    pub mean_out: f64,
    pub mean_out_se: f64,
    /// `(mean_in - mean_out)` in units of its standard error.
    pub separation_sigma: f64,
    pub pixels_in: usize,
    pub pixels_out: usize,
    pub starved: usize,
}

fn region_stats(values: &[f64], pixels: &[usize]) -> f64 {
    pixels.iter().map(|&p| values[p]).sum::<f64>() / pixels.len() as f64
}

/// Region contrast and fidelity of `image` against the object `truth`.
pub fn metrics(image: &ImageMap, truth: &ObjectMask) -> Result<ImageMetrics> {
    if image.nx != truth.nx() || image.ny != truth.ny() {
        return Err(Error::Dimension {
            expected: format!("{}x{}", truth.nx(), truth.ny()),
            got: format!("{}x{}", image.nx, image.ny),
        });
    }
    if !truth.has_both_regions() {
        return Err(Error::config("object mask must have both transmitting and opaque pixels"));
    }
    let used: Vec<usize> = (0..image.values.len())
        .filter(|&p| !image.starved[p] && image.values[p].is_finite())
        .collect();
    let inside: Vec<usize> = used.iter().copied().filter(|&p| truth.is_inside(p)).collect();
    let outside: Vec<usize> = used.iter().copied().filter(|&p| !truth.is_inside(p)).collect();
    if inside.is_empty() || outside.is_empty() {
        return Err(Error::InsufficientEvents {
            index: image.statistic.label(),
            detail: "a mask region has no estimated pixels".into(),
        });
    }
    let mean_in = region_stats(&image.values, &inside);
    let mean_out = region_stats(&image.values, &outside);
    let visibility = (mean_in - mean_out) / (mean_in + mean_out);

    let (mean_in_se, mean_out_se, diff_se, visibility_se) = if image.replicates.len() > 1 {
        let reps: Vec<(f64, f64)> = image
            .replicates
            .iter()
            .map(|r| (region_stats(r, &inside), region_stats(r, &outside)))
            .collect();
        let ins: Vec<f64> = reps.iter().map(|r| r.0).collect();
        let outs: Vec<f64> = reps.iter().map(|r| r.1).collect();
        let diffs: Vec<f64> = reps.iter().map(|r| r.0 - r.1).collect();
        let vis: Vec<f64> = reps.iter().map(|r| (r.0 - r.1) / (r.0 + r.1)).collect();
        (
            jackknife_stderr(&ins),
            jackknife_stderr(&outs),
            jackknife_stderr(&diffs),
            jackknife_stderr(&vis),
        )
    } else {
        // pixels treated as independent
        let se = |px: &[usize]| px.iter().map(|&p| image.stderr[p].powi(2)).sum::<f64>().sqrt() / px.len() as f64;
        let (si, so) = (se(&inside), se(&outside));
        let sd = si.hypot(so);
        let s = mean_in + mean_out;
        let vis_se = 2.0 * (mean_out * si).hypot(mean_in * so) / (s * s);
        (si, so, sd, vis_se)
    };

    let lo = used.iter().map(|&p| image.values[p]).fold(f64::INFINITY, f64::min);
    let hi = used.iter().map(|&p| image.values[p]).fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let mse = used
        .iter()
        .map(|&p| {
            let norm = if range > 0.0 { (image.values[p] - lo) / range } else { 0.0 };
            let t = if truth.is_inside(p) { 1.0 } else { 0.0 };
            (norm - t).powi(2)
        })
        .sum::<f64>()
        / used.len() as f64;
    let psnr_db = if mse > 0.0 {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
    } else {
        PSNR_CAP_DB
    };

    Ok(ImageMetrics {
        statistic: image.statistic.label(),
        visibility,
        visibility_se,
        psnr_db,
        contrast_sign: if mean_in >= mean_out {
            ContrastSign::Positive
        } else {
            ContrastSign::Negative
        },
        mean_in,
        mean_in_se,
        mean_out,
        mean_out_se,
        separation_sigma: (mean_in - mean_out) / diff_se,
        pixels_in: inside.len(),
        pixels_out: outside.len(),
        starved: image.starved.iter().filter(|s| **s).count(),
    })
}
