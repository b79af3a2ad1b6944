//! Runs behind the command-line subcommands. Each writes its artifacts to an
//! output directory and finishes with `manifest.json`, so a manifest's
//! presence means the run completed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::analytic::{g2_m0, g2_m0_tau, PhotonStatsParams};
use crate::detect::{bin_timestamps, rebin, CountSeries, DetectorConfig, ObjectMask};
use crate::error::{Error, Result};
use crate::estimator::{curve_from_tally, jackknife_curves, lag_tally, CorrelationCurve, CurvePoint, StderrMethod};
use crate::fieldgen::SourceConfig;
use crate::fit::{fit_curve, fit_curve_jackknife, FitPoint, FitResult};
use crate::formats::config::RunConfig;
use crate::formats::{pgm, tables};
use crate::hbt::{simulate_hbt_counts, HbtConfig, HbtCounts};
use crate::imaging::{
    metrics, reconstruct, reconstruct_traditional, run_ghost_scan, ImageMap, ImageMetrics, ImageStatistic,
    ImagingRunConfig, DEFAULT_IMAGING_CAP,
};
use crate::rng::StreamKey;

pub const HBT_DEFAULT_CAP: usize = 16;
pub const HBT_DEFAULT_BLOCKS: usize = 50;
pub const GI_DEFAULT_BLOCKS: usize = 20;
pub const DEFAULT_NBAR_BUCKET: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct OutputRecord {
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub outputs: Vec<OutputRecord>,
    pub wall_clock_seconds: f64,
    pub units: BTreeMap<String, String>,
    pub git_describe: String,
}

/// Collects artifacts written to one directory.
pub struct OutputDir {
    dir: PathBuf,
    records: Vec<OutputRecord>,
    started: Instant,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(OutputDir {
            dir: dir.to_path_buf(),
            records: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.records.push(OutputRecord {
            file: name.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len() as u64,
        });
        Ok(path)
    }

    /// Write `manifest.json` and return its path.
    pub fn finish(
        self,
        command: &str,
        seed: u64,
        config: BTreeMap<String, String>,
        units: Vec<(String, String)>,
    ) -> Result<PathBuf> {
        let manifest = RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            outputs: self.records,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            units: units.into_iter().collect(),
            git_describe: git_describe(),
        };
        let path = self.dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// `git describe --always --dirty`, or `unknown` outside a checkout.
pub fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

fn config_map(cfg: &RunConfig) -> BTreeMap<String, String> {
    cfg.echo()
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must be finite and > 0, got {v}")))
    }
}

pub fn source_config(cfg: &RunConfig) -> SourceConfig {
    SourceConfig {
        nx: cfg.grid_nx,
        ny: cfg.grid_ny,
        grain_px: cfg.grain_px,
        frames: cfg.frames,
        coherence_frames: cfg.coherence_frames,
        mean_intensity: cfg.mean_intensity,
        seed: StreamKey::derive(cfg.seed, "source").to_seed(),
    }
}

fn detector_seed(cfg: &RunConfig) -> u64 {
    StreamKey::derive(cfg.seed, "detector").to_seed()
}

fn eta_ref(cfg: &RunConfig) -> Result<f64> {
    match cfg.eta_ref {
        Some(e) => Ok(e),
        None => {
            check_positive("nbar_ref", cfg.nbar_ref)?;
            Ok(cfg.nbar_ref / (cfg.mean_intensity * cfg.bin_width.max(1) as f64))
        }
    }
}

/// Detectors of an object-free run: both arms at `nbar_ref` unless set apart.
pub fn hbt_detector(cfg: &RunConfig) -> Result<DetectorConfig> {
    let eta_ref = eta_ref(cfg)?;
    let eta_bucket = match (cfg.eta_bucket, cfg.nbar_bucket) {
        (Some(e), _) => e,
        (None, Some(nb)) => nb / (cfg.mean_intensity * cfg.bin_width.max(1) as f64),
        (None, None) => eta_ref,
    };
    let d = DetectorConfig {
        eta_ref,
        eta_bucket,
        bin_width: cfg.bin_width,
        dark_rate: cfg.dark_rate,
        seed: detector_seed(cfg),
    };
    d.validate()?;
    Ok(d)
}

/// Detectors of an imaging run; the bucket sees the transmitted light.
pub fn gi_detector(cfg: &RunConfig, object: &ObjectMask) -> Result<DetectorConfig> {
    let eta_ref = eta_ref(cfg)?;
    let eta_bucket = match cfg.eta_bucket {
        Some(e) => e,
        None => {
            let nb = cfg.nbar_bucket.unwrap_or(DEFAULT_NBAR_BUCKET);
            let through = object.total_transmission();
            if through > 0.0 {
                nb / (cfg.mean_intensity * cfg.bin_width.max(1) as f64 * through)
            } else {
                0.0
            }
        }
    };
    let d = DetectorConfig {
        eta_ref,
        eta_bucket,
        bin_width: cfg.bin_width,
        dark_rate: cfg.dark_rate,
        seed: detector_seed(cfg),
    };
    d.validate()?;
    Ok(d)
}

pub fn load_object(cfg: &RunConfig) -> Result<ObjectMask> {
    let mask = match cfg.object_path.strip_prefix("builtin:") {
        Some(name) => ObjectMask::builtin(name, cfg.grid_nx, cfg.grid_ny)
            .ok_or_else(|| Error::config(format!("unknown builtin object `{name}`")))?,
        None => pgm::read_mask(Path::new(&cfg.object_path))?,
    };
    if mask.nx() != cfg.grid_nx || mask.ny() != cfg.grid_ny {
        return Err(Error::Dimension {
            expected: format!("object {}x{}", cfg.grid_nx, cfg.grid_ny),
            got: format!("{}x{}", mask.nx(), mask.ny()),
        });
    }
    Ok(mask)
}

/// Parameters of the analytic curve tables.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvesArgs {
    pub nbar_min: f64,
    pub nbar_max: f64,
    pub nbar_points: usize,
    pub mu: f64,
    pub m_max: u32,
    /// Fixed `nbar` of the time-resolved table.
    pub nbar_tau: f64,
    pub sigma: f64,
    pub v: f64,
    pub tau_max: f64,
    pub tau_points: usize,
}

impl Default for CurvesArgs {
    fn default() -> Self {
        CurvesArgs {
            nbar_min: 0.0,
            nbar_max: 5.0,
            nbar_points: 501,
            mu: 1.0,
            m_max: 4,
            nbar_tau: 0.5,
            sigma: 1.0,
            v: 1.0,
            tau_max: 3.0,
            tau_points: 301,
        }
    }
}

/// Evenly spaced grid, both ends included.
fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Rows `(nbar, m, g2_m0(0))` and `(tau, m, g2_m0(tau))`.
pub fn analytic_tables(a: &CurvesArgs) -> Result<(Vec<(f64, u32, f64)>, Vec<(f64, u32, f64)>)> {
    if !(a.nbar_min >= 0.0 && a.nbar_max >= a.nbar_min && a.nbar_max.is_finite()) {
        return Err(Error::config("need 0 <= nbar_min <= nbar_max < inf"));
    }
    if a.nbar_points == 0 || a.tau_points == 0 || a.nbar_points > 1_000_000 || a.tau_points > 1_000_000 {
        return Err(Error::config("point counts must be in 1..=1000000"));
    }
    if !(a.tau_max >= 0.0 && a.tau_max.is_finite()) {
        return Err(Error::config("tau_max must be finite and >= 0"));
    }
    let base = PhotonStatsParams::new(a.nbar_tau, a.mu)?
        .with_sigma(a.sigma)?
        .with_v(a.v)?;
    let mut by_nbar = Vec::new();
    for m in 0..=a.m_max {
        for nbar in grid(a.nbar_min, a.nbar_max, a.nbar_points) {
            let p = PhotonStatsParams::new(nbar, a.mu)?;
            by_nbar.push((nbar, m, g2_m0(m, &p)));
        }
    }
    let mut by_tau = Vec::new();
    for m in 0..=a.m_max {
        for tau in grid(0.0, a.tau_max, a.tau_points) {
            by_tau.push((tau, m, g2_m0_tau(m, tau, &base)));
        }
    }
    Ok((by_nbar, by_tau))
}

pub fn cmd_curves(args: &CurvesArgs, out_dir: &Path) -> Result<PathBuf> {
    let (by_nbar, by_tau) = analytic_tables(args)?;
    let mut out = OutputDir::create(out_dir)?;
    out.write("g2_vs_nbar.csv", tables::write_xy("nbar", &by_nbar).as_bytes())?;
    out.write("g2_vs_tau.csv", tables::write_xy("tau", &by_tau).as_bytes())?;
    let mut cfg = BTreeMap::new();
    for (k, v) in [
        ("nbar_min", args.nbar_min),
        ("nbar_max", args.nbar_max),
        ("mu", args.mu),
        ("nbar_tau", args.nbar_tau),
        ("sigma", args.sigma),
        ("v", args.v),
        ("tau_max", args.tau_max),
    ] {
        cfg.insert(k.to_string(), tables::fmt_f64(v));
    }
    cfg.insert("nbar_points".into(), args.nbar_points.to_string());
    cfg.insert("tau_points".into(), args.tau_points.to_string());
    cfg.insert("m_max".into(), args.m_max.to_string());
    out.finish(
        "curves",
        0,
        cfg,
        vec![("tau".into(), "1/sigma units of the sigma argument".into())],
    )
}

/// How curves are estimated from a pair of count series.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisOptions {
    pub lags: Vec<i64>,
    pub pairs: Vec<(u64, u64)>,
    pub cap: usize,
    pub blocks: usize,
}

impl AnalysisOptions {
    pub fn from_config(cfg: &RunConfig) -> Self {
        AnalysisOptions {
            lags: cfg.lags.clone(),
            pairs: cfg.curve_pairs(),
            cap: cfg.mmax.unwrap_or(HBT_DEFAULT_CAP),
            blocks: cfg.blocks.unwrap_or(HBT_DEFAULT_BLOCKS),
        }
    }

    fn method(&self) -> StderrMethod {
        if self.blocks > 1 {
            StderrMethod::Jackknife { blocks: self.blocks }
        } else {
            StderrMethod::Delta
        }
    }
}

/// Temporal curves and their jackknife replicates.
pub fn temporal_curves(
    s1: &CountSeries,
    s2: &CountSeries,
    opts: &AnalysisOptions,
) -> Result<Vec<(CorrelationCurve, Vec<Vec<f64>>)>> {
    if let Some(&(m, n)) = opts.pairs.iter().find(|(m, n)| *m as usize > opts.cap || *n as usize > opts.cap) {
        return Err(Error::config(format!("pair ({m},{n}) above histogram cap {}", opts.cap)));
    }
    let tally = lag_tally(s1, s2, &opts.lags, opts.cap, opts.blocks.max(1))?;
    opts.pairs
        .iter()
        .map(|&(m, n)| {
            let curve = curve_from_tally(&tally, m, n, opts.method())?;
            let reps = if opts.blocks > 1 {
                jackknife_curves(&tally, m, n)
            } else {
                Vec::new()
            };
            Ok((curve, reps))
        })
        .collect()
}

/// One curve per pair with a point per scanned offset.
pub fn spatial_curves(
    reference: &CountSeries,
    scan: &[(usize, CountSeries)],
    opts: &AnalysisOptions,
) -> Result<Vec<CorrelationCurve>> {
    let mut curves: Vec<CorrelationCurve> = opts
        .pairs
        .iter()
        .map(|&(m, n)| CorrelationCurve {
            m,
            n,
            points: Vec::new(),
        })
        .collect();
    for (dx, series) in scan {
        let tally = lag_tally(reference, series, &[0], opts.cap, opts.blocks.max(1))?;
        for c in curves.iter_mut() {
            let one = curve_from_tally(&tally, c.m, c.n, opts.method())?;
            let p = &one.points[0];
            c.points.push(CurvePoint {
                lag: *dx as i64,
                ..p.clone()
            });
        }
    }
    Ok(curves)
}

pub struct HbtRun {
    pub counts: HbtCounts,
    pub temporal: Vec<CorrelationCurve>,
    pub spatial: Vec<CorrelationCurve>,
    pub manifest: PathBuf,
}

pub fn hbt_config(cfg: &RunConfig) -> Result<HbtConfig> {
    let source = source_config(cfg);
    let detector = hbt_detector(cfg)?;
    let mut h = HbtConfig::new(source, detector);
    let max_dx = cfg.spatial_max_dx.unwrap_or((cfg.grid_nx / 2).min(16));
    h.spatial_dx = if cfg.grid_nx > 1 { (0..=max_dx.min(cfg.grid_nx - 1)).collect() } else { Vec::new() };
    h.independent_second_arm = cfg.control;
    Ok(h)
}

/// Object-free two-detector run: counts, temporal and spatial curves.
pub fn cmd_simulate_hbt(cfg: &RunConfig) -> Result<HbtRun> {
    let h = hbt_config(cfg)?;
    let opts = AnalysisOptions::from_config(cfg);
    let counts = simulate_hbt_counts(&h)?;
    let temporal = temporal_curves(&counts.ch1, &counts.ch2, &opts)?;
    let spatial = spatial_curves(&counts.ch1, &counts.spatial, &opts)?;

    let mut out = OutputDir::create(&cfg.out_dir)?;
    out.write("counts.csv", tables::write_counts(&counts.ch1, &counts.ch2)?.as_bytes())?;
    let curves: Vec<CorrelationCurve> = temporal.iter().map(|(c, _)| c.clone()).collect();
    out.write("temporal_curve.csv", tables::write_curves("lag", &curves).as_bytes())?;
    if opts.blocks > 1 {
        let reps: Vec<(&CorrelationCurve, Vec<Vec<f64>>)> = temporal.iter().map(|(c, r)| (c, r.clone())).collect();
        out.write("temporal_jackknife.csv", tables::write_jackknife(&reps).as_bytes())?;
    }
    if !spatial.is_empty() && !counts.spatial.is_empty() {
        out.write("spatial_curve.csv", tables::write_curves("dx", &spatial).as_bytes())?;
    }
    let manifest = out.finish("simulate-hbt", cfg.seed, config_map(cfg), h.source.units_table())?;
    Ok(HbtRun {
        counts,
        temporal: curves,
        spatial,
        manifest,
    })
}

/// Everything an imaging run produced.
pub struct GiRun {
    pub images: Vec<ImageMap>,
    pub skipped: Vec<(String, String)>,
    pub metrics: Vec<ImageMetrics>,
    pub control_metrics: Vec<ImageMetrics>,
    pub manifest: PathBuf,
}

#[derive(serde::Serialize)]
struct MetricsDoc<'a> {
    seed: u64,
    git_describe: String,
    config: BTreeMap<String, String>,
    nbar_ref: f64,
    nbar_bucket: f64,
    images: &'a [ImageMetrics],
    /// Images or metrics that could not be estimated, with the reason.
    skipped: &'a [(String, String)],
    independent_reference_control: &'a [ImageMetrics],
}

pub fn imaging_config(cfg: &RunConfig) -> Result<ImagingRunConfig> {
    let object = load_object(cfg)?;
    let detector = gi_detector(cfg, &object)?;
    let mut run = ImagingRunConfig::new(source_config(cfg), detector, object);
    run.m_list = cfg.m_list.clone();
    run.include_traditional = cfg.include_traditional;
    run.cap = cfg.mmax.unwrap_or(DEFAULT_IMAGING_CAP);
    run.blocks = cfg.blocks.unwrap_or(GI_DEFAULT_BLOCKS);
    run.seed = cfg.seed;
    Ok(run)
}

fn image_name(s: &ImageStatistic) -> String {
    match s {
        ImageStatistic::ZeroPhoton { m } => format!("image_g2_{m}0"),
        ImageStatistic::Traditional => "image_traditional".into(),
    }
}

/// Images for every requested statistic from one scan. Starved statistics
/// are returned as `(label, reason)`; it is an error only when all are.
pub fn images_from_scan(
    run: &ImagingRunConfig,
    tallies: &crate::imaging::ScanTallies,
) -> Result<(Vec<ImageMap>, Vec<(String, String)>)> {
    let mut images = Vec::new();
    let mut skipped = Vec::new();
    let mut last_err = None;
    let attempts = run
        .m_list
        .iter()
        .map(|&m| (ImageStatistic::ZeroPhoton { m }, reconstruct(tallies, m)))
        .chain(
            run.include_traditional
                .then(|| (ImageStatistic::Traditional, reconstruct_traditional(tallies))),
        );
    for (stat, result) in attempts {
        match result {
            Ok(img) => images.push(img),
            Err(e @ Error::InsufficientEvents { .. }) => {
                skipped.push((stat.label(), e.to_string()));
                last_err = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    match last_err {
        Some(e) if images.is_empty() => Err(e),
        _ => Ok((images, skipped)),
    }
}

/// Metrics of each image; images whose mask regions are starved are noted in `skipped`.
fn metrics_or_skip(
    images: &[ImageMap],
    object: &ObjectMask,
    prefix: &str,
    skipped: &mut Vec<(String, String)>,
) -> Result<Vec<ImageMetrics>> {
    let mut out = Vec::new();
    for img in images {
        match metrics(img, object) {
            Ok(m) => out.push(m),
            Err(e @ Error::InsufficientEvents { .. }) => {
                skipped.push((format!("{prefix}{} metrics", img.statistic.label()), e.to_string()))
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Ghost-imaging run: images, metrics and optionally an independent-reference control.
pub fn cmd_simulate_gi(cfg: &RunConfig) -> Result<GiRun> {
    let run = imaging_config(cfg)?;
    if run.object.total_transmission() == 0.0 {
        return Err(Error::InsufficientEvents {
            index: "bucket".into(),
            detail: "opaque object: the bucket detector sees no light".into(),
        });
    }
    let tallies = run_ghost_scan(&run)?;
    let (images, mut skipped) = images_from_scan(&run, &tallies)?;
    let image_metrics = metrics_or_skip(&images, &run.object, "", &mut skipped)?;

    let mut control_metrics = Vec::new();
    if cfg.control {
        let mut c = run.clone();
        c.independent_reference = true;
        if cfg.control_frames > 0 {
            c.source.frames = cfg.control_frames * cfg.bin_width;
        }
        let t = run_ghost_scan(&c)?;
        let (control_images, control_skipped) = images_from_scan(&c, &t)?;
        skipped.extend(control_skipped.into_iter().map(|(l, r)| (format!("control {l}"), r)));
        control_metrics = metrics_or_skip(&control_images, &c.object, "control ", &mut skipped)?;
    }

    let mut out = OutputDir::create(&cfg.out_dir)?;
    for img in &images {
        let name = image_name(&img.statistic);
        out.write(&format!("{name}.pgm"), &pgm::encode(&pgm::image_greymap(img)))?;
        out.write(&format!("{name}.csv"), tables::write_image(img).as_bytes())?;
    }
    let doc = MetricsDoc {
        seed: cfg.seed,
        git_describe: git_describe(),
        config: config_map(cfg),
        nbar_ref: run.nbar_ref(),
        nbar_bucket: run.nbar_bucket(),
        images: &image_metrics,
        skipped: &skipped,
        independent_reference_control: &control_metrics,
    };
    out.write("metrics.json", serde_json::to_string_pretty(&doc).expect("serializable").as_bytes())?;
    let manifest = out.finish("simulate-gi", cfg.seed, config_map(cfg), run.source.units_table())?;
    Ok(GiRun {
        images,
        skipped,
        metrics: image_metrics,
        control_metrics,
        manifest,
    })
}

/// Input of an analysis run.
#[derive(Clone, Debug, PartialEq)]
pub enum AnalyzeInput {
    Counts { path: PathBuf, bin_width: u64 },
    Timestamps { path: PathBuf, bin_width_ns: u64 },
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Load two count series from either input format, optionally rebinned.
pub fn load_series(input: &AnalyzeInput, rebin_k: usize) -> Result<(CountSeries, CountSeries)> {
    let (a, b) = match input {
        AnalyzeInput::Counts { path, bin_width } => tables::read_counts(&read_text(path)?, *bin_width)?,
        AnalyzeInput::Timestamps { path, bin_width_ns } => {
            bin_timestamps(&tables::read_timestamps(&read_text(path)?)?, *bin_width_ns)?
        }
    };
    if rebin_k > 1 {
        Ok((rebin(&a, rebin_k)?, rebin(&b, rebin_k)?))
    } else {
        Ok((a, b))
    }
}

/// Curves from externally recorded (or previously exported) data.
pub fn cmd_analyze(input: &AnalyzeInput, rebin_k: usize, opts: &AnalysisOptions, out_dir: &Path) -> Result<Vec<CorrelationCurve>> {
    let (a, b) = load_series(input, rebin_k)?;
    let temporal = temporal_curves(&a, &b, opts)?;
    let mut out = OutputDir::create(out_dir)?;
    let curves: Vec<CorrelationCurve> = temporal.iter().map(|(c, _)| c.clone()).collect();
    out.write("temporal_curve.csv", tables::write_curves("lag", &curves).as_bytes())?;
    if opts.blocks > 1 {
        let reps: Vec<(&CorrelationCurve, Vec<Vec<f64>>)> = temporal.iter().map(|(c, r)| (c, r.clone())).collect();
        out.write("temporal_jackknife.csv", tables::write_jackknife(&reps).as_bytes())?;
    }
    let mut cfg = BTreeMap::new();
    let (src, width) = match input {
        AnalyzeInput::Counts { path, bin_width } => (path, format!("{bin_width} frames")),
        AnalyzeInput::Timestamps { path, bin_width_ns } => (path, format!("{bin_width_ns} ns")),
    };
    cfg.insert("input".into(), src.display().to_string());
    cfg.insert("bin_width".into(), width);
    cfg.insert("rebin".into(), rebin_k.to_string());
    cfg.insert("lags".into(), opts.lags.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(","));
    cfg.insert(
        "pairs".into(),
        opts.pairs.iter().map(|(m, n)| format!("{m}:{n}")).collect::<Vec<_>>().join(","),
    );
    cfg.insert("cap".into(), opts.cap.to_string());
    cfg.insert("blocks".into(), opts.blocks.to_string());
    out.finish("analyze", 0, cfg, Vec::new())?;
    Ok(curves)
}

/// Which rows of a curve table feed the fit.
#[derive(Clone, Debug, PartialEq)]
pub struct FitArgs {
    pub curve: PathBuf,
    pub jackknife: Option<PathBuf>,
    /// Only rows with these `m` (all when empty); `n` must be 0.
    pub m: Vec<u64>,
    /// Multiplies the lag column to give `tau`.
    pub tau_scale: f64,
}

fn fit_points(rows: impl Iterator<Item = (i64, u64, u64, f64, f64)>, args: &FitArgs) -> Vec<FitPoint> {
    rows.filter(|r| r.2 == 0 && (args.m.is_empty() || args.m.contains(&r.1)))
        .map(|(lag, m, _, g2, stderr)| FitPoint {
            m: m as u32,
            tau: lag as f64 * args.tau_scale,
            g2,
            stderr,
        })
        .collect()
}

/// Fit the time-resolved model to a curve table; jackknife errors when
/// replicate values are supplied.
pub fn cmd_fit(args: &FitArgs) -> Result<FitResult> {
    check_positive("tau_scale", args.tau_scale)?;
    let rows = tables::read_curves(&read_text(&args.curve)?)?;
    let points = fit_points(rows.iter().map(|r| (r.lag, r.m, r.n, r.g2, r.stderr)), args);
    let Some(jk) = &args.jackknife else {
        return fit_curve(&points);
    };
    let reps = tables::read_jackknife(&read_text(jk)?)?;
    // each replicate inherits the full-curve errors as weights
    let se: BTreeMap<(i64, u64, u64), f64> = rows.iter().map(|r| ((r.lag, r.m, r.n), r.stderr)).collect();
    let mut by_block: BTreeMap<usize, Vec<(i64, u64, u64, f64, f64)>> = BTreeMap::new();
    for r in reps {
        let s = se.get(&(r.lag, r.m, r.n)).copied().unwrap_or(f64::NAN);
        by_block.entry(r.block).or_default().push((r.lag, r.m, r.n, r.g2, s));
    }
    let replicates: Vec<Vec<FitPoint>> = by_block
        .into_values()
        .map(|rows| fit_points(rows.into_iter(), args))
        .collect();
    fit_curve_jackknife(&points, &replicates)
}

/// Region metrics of a raw image table against a mask.
pub fn cmd_metrics(image_csv: &Path, mask: &ObjectMask) -> Result<ImageMetrics> {
    let t = tables::read_image(&read_text(image_csv)?)?;
    let image = ImageMap {
        nx: t.nx,
        ny: t.ny,
        statistic: ImageStatistic::Traditional,
        values: t.values,
        stderr: t.stderr,
        events: t.events,
        starved: t.starved,
        replicates: Vec::new(),
    };
    let mut m = metrics(&image, mask)?;
    m.statistic = image_csv
        .file_stem()
        .map_or("image".into(), |s| s.to_string_lossy().into_owned());
    Ok(m)
}
