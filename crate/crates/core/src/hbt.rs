//! Object-free two-detector runs: detector 1 watches a fixed pixel, detector
//! 2 the same pixel (temporal curves) or pixels shifted along x (spatial
//! curves). Counts are sampled while the movie streams past.

use rayon::prelude::*;

use crate::detect::{poisson, CountSeries, DetectorConfig};
use crate::error::{Error, Result};
use crate::fieldgen::{SourceConfig, SpeckleSource};
use crate::rng::StreamKey;

const FRAMES_PER_CHUNK: u64 = 8192;

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct HbtConfig {
    pub source: SourceConfig,
    /// `eta_ref` drives detector 1, `eta_bucket` detector 2 and the scan.
    pub detector: DetectorConfig,
    /// Pixel `(x, y)` watched by detector 1.
    pub pixel: (usize, usize),
    /// Offsets along x (periodic) of the spatial scan.
    pub spatial_dx: Vec<usize>,
    /// Detector 2 and the scan see an independent field.
    pub independent_second_arm: bool,
}

impl HbtConfig {
    pub fn new(source: SourceConfig, detector: DetectorConfig) -> Self {
        let pixel = (source.nx / 2, source.ny / 2);
        HbtConfig {
            source,
            detector,
            pixel,
            spatial_dx: Vec::new(),
            independent_second_arm: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.detector.validate()?;
        if self.pixel.0 >= self.source.nx || self.pixel.1 >= self.source.ny {
            return Err(Error::config(format!(
                "pixel {:?} outside {}x{} grid",
                self.pixel, self.source.nx, self.source.ny
            )));
        }
        if self.source.frames < self.detector.bin_width {
            return Err(Error::config("fewer frames than one bin"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HbtCounts {
    pub ch1: CountSeries,
    pub ch2: CountSeries,
    /// `(dx, counts)` for each scanned offset.
    pub spatial: Vec<(usize, CountSeries)>,
}

struct Chunk {
    ch1: Vec<u64>,
    ch2: Vec<u64>,
    spatial: Vec<Vec<u64>>,
}

/// Stream the movie and sample both detectors (and the spatial scan) per bin.
pub fn simulate_hbt_counts(cfg: &HbtConfig) -> Result<HbtCounts> {
    cfg.validate()?;
    let first = SpeckleSource::new(&cfg.source)?;
    let second = cfg
        .independent_second_arm
        .then(|| SpeckleSource::with_label(&cfg.source, "field/independent-arm"))
        .transpose()?;
    let key = StreamKey::derive(cfg.detector.seed, "detect/hbt");
    let bw = cfg.detector.bin_width;
    let bins = cfg.source.frames / bw;
    let span = 2 * first.reach() as u64 + 1;
    let bins_per_chunk = (FRAMES_PER_CHUNK.max(8 * span) / bw).max(1);
    let nx = cfg.source.nx;
    let p1 = cfg.pixel.1 * nx + cfg.pixel.0;
    let scan: Vec<usize> = cfg
        .spatial_dx
        .iter()
        .map(|dx| cfg.pixel.1 * nx + (cfg.pixel.0 + dx) % nx)
        .collect();
    let det = &cfg.detector;

    let chunks: Vec<(u64, u64)> = (0..bins)
        .step_by(bins_per_chunk as usize)
        .map(|s| (s, (s + bins_per_chunk).min(bins)))
        .collect();
    let parts: Vec<Chunk> = chunks
        .par_iter()
        .map(|&(start, end)| {
            let frames = ((end - start) * bw) as usize;
            let f0 = start * bw;
            // per-bin summed intensities: [detector 1, detector 2, scan...]
            let width = 2 + scan.len();
            let mut sums = vec![0.0; (end - start) as usize * width];
            let mut add = |t: u64, slot: usize, v: f64| {
                sums[((t - f0) / bw) as usize * width + slot] += v;
            };
            match &second {
                None => first.render_intensity(f0, frames, |t, i| {
                    add(t, 0, i[p1]);
                    add(t, 1, i[p1]);
                    for (k, &p) in scan.iter().enumerate() {
                        add(t, 2 + k, i[p]);
                    }
                }),
                Some(src) => {
                    first.render_intensity(f0, frames, |t, i| add(t, 0, i[p1]));
                    src.render_intensity(f0, frames, |t, i| {
                        add(t, 1, i[p1]);
                        for (k, &p) in scan.iter().enumerate() {
                            add(t, 2 + k, i[p]);
                        }
                    });
                }
            }
            let n = (end - start) as usize;
            let mut out = Chunk {
                ch1: Vec::with_capacity(n),
                ch2: Vec::with_capacity(n),
                spatial: vec![Vec::with_capacity(n); scan.len()],
            };
            for (b, row) in sums.chunks_exact(width).enumerate() {
                let mut rng = key.fast_stream(start + b as u64);
                out.ch1.push(poisson(&mut rng, det.eta_ref * row[0] + det.dark_rate));
                out.ch2.push(poisson(&mut rng, det.eta_bucket * row[1] + det.dark_rate));
                for (k, s) in out.spatial.iter_mut().enumerate() {
                    s.push(poisson(&mut rng, det.eta_bucket * row[2 + k] + det.dark_rate));
                }
            }
            out
        })
        .collect();

    let mut ch1 = Vec::with_capacity(bins as usize);
    let mut ch2 = Vec::with_capacity(bins as usize);
    let mut spatial = vec![Vec::with_capacity(bins as usize); scan.len()];
    for c in parts {
        ch1.extend(c.ch1);
        ch2.extend(c.ch2);
        for (s, part) in spatial.iter_mut().zip(c.spatial) {
            s.extend(part);
        }
    }
    Ok(HbtCounts {
        ch1: CountSeries::new(ch1, 1, bw),
        ch2: CountSeries::new(ch2, 2, bw),
        spatial: cfg
            .spatial_dx
            .iter()
            .zip(spatial)
            .map(|(&dx, s)| (dx, CountSeries::new(s, 2, bw)))
            .collect(),
    })
}
