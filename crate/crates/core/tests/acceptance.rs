//! Acceptance criteria A1-A7, run in order with one pass/fail line each.
//!
//! `cargo test --release -p ghostzero --test acceptance` runs all of them;
//! pass criterion ids (`-- A2 A4`) to run a subset. Exits nonzero on failure.

mod common;

use std::path::Path;
use std::time::Instant;

use ghostzero::analytic::{g2_m0, p_m0_closed, p_mn, pmn_table, PhotonStatsParams};
use ghostzero::detect::rebin;
use ghostzero::estimator::{g2_hat, jackknife_stderr, tally_joint};
use ghostzero::formats::config::RunConfig;
use ghostzero::formats::tables;
use ghostzero::hbt::simulate_hbt_counts;
use ghostzero::imaging::{metrics, run_ghost_scan, ContrastSign, ImageMetrics, ImageStatistic};
use ghostzero::pipeline::{self, AnalysisOptions, AnalyzeInput, FitArgs};

/// Frame-bins of the imaging criteria.
const IMAGING_FRAMES: u64 = 10_000_000;
/// Frame-bins of the independent-reference control scan.
const CONTROL_FRAMES: u64 = 2_000_000;

struct Verdict {
    pass: bool,
    lines: Vec<String>,
}

impl Verdict {
    fn new() -> Self {
        Verdict {
            pass: true,
            lines: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, what: String) {
        self.pass &= ok;
        self.lines.push(format!("{} {what}", if ok { "ok  " } else { "FAIL" }));
    }

    fn note(&mut self, what: String) {
        self.lines.push(format!("     {what}"));
    }
}

fn config(lines: &[&str]) -> RunConfig {
    let mut cfg = RunConfig::default();
    let overrides: Vec<String> = lines.iter().map(|s| s.to_string()).collect();
    cfg.apply_overrides(&overrides).expect("valid overrides");
    cfg
}

fn params(nbar: f64, mu: f64) -> PhotonStatsParams {
    PhotonStatsParams::new(nbar, mu).unwrap()
}

fn a1() -> Verdict {
    let mut v = Verdict::new();
    let nbars = [0.1, 0.5, 1.0, 2.0, 5.0];
    let mus = [0.0, 0.3, 0.7, 1.0];
    let (mut closed, mut rows, mut coherent, mut quad) = (0.0f64, true, 0.0f64, 0.0f64);
    for &nbar in &nbars {
        for &mu in &mus {
            let p = params(nbar, mu);
            let table = pmn_table(&p, 400);
            let geometric = (nbar / (1.0 + nbar)).powi(401);
            for m in 0..=10u32 {
                let want = common::pm0_closed(m, nbar, mu);
                closed = closed.max((p_mn(m, 0, &p) - want).abs()).max((p_m0_closed(m, &p) - want).abs());
                let gap = (table.row_sum(m) - common::bose_einstein(m, nbar)).abs();
                rows &= gap <= table.row_tail_bound(m) + 1e-13 && table.row_tail_bound(m) <= geometric;
                if mu == 1.0 {
                    for n in 0..=10u32 {
                        coherent = coherent.max((p_mn(m, n, &p) - common::pmn_coherent(m, n, nbar)).abs());
                    }
                }
            }
            let q = if mu < 1.0 {
                common::quadrature_pmn(nbar, mu, 4)
            } else {
                common::quadrature_pmn_coherent(nbar, 4)
            };
            for m in 0..=4u32 {
                for n in 0..=4u32 {
                    quad = quad.max((p_mn(m, n, &p) - q[m as usize][n as usize]).abs());
                }
            }
        }
    }
    v.check(closed <= 1e-12, format!("max |P_m0 - closed form| = {closed:.2e} (<= 1e-12)"));
    v.check(rows, "row sums within the geometric tail bound of the Bose-Einstein marginal".into());
    v.check(coherent <= 1e-10, format!("max |P_mn - binomial form| at mu = 1: {coherent:.2e} (<= 1e-10)"));
    v.check(quad <= 1e-6, format!("max |P_mn - quadrature| for m,n <= 4: {quad:.2e} (<= 1e-6)"));
    v
}

fn a2() -> Verdict {
    let mut v = Verdict::new();
    let g10 = |n: f64| g2_m0(1, &params(n, 1.0));
    let argmin = common::golden_min(g10, 0.01, 5.0, 1e-10);
    let value = g10(argmin);
    v.check((argmin - 0.5).abs() <= 1e-3, format!("argmin g2_10(0) at mu = 1: nbar = {argmin:.6}"));
    v.check(
        (value - 27.0 / 32.0).abs() <= 1e-9,
        format!("min value {value:.12} vs 27/32 (|diff| = {:.1e})", (value - 27.0 / 32.0).abs()),
    );
    let crossing = common::bisect(|n| g10(n) - 1.0, 0.5, 5.0, 1e-12);
    v.check((crossing - 1.6180).abs() <= 1e-3, format!("unit crossing at nbar = {crossing:.6}"));

    let mut lowest = f64::INFINITY;
    for i in 0..100 {
        let nbar = 10f64.powf(-3.0 + 6.0 * i as f64 / 99.0);
        for j in 0..100 {
            lowest = lowest.min(g2_m0(0, &params(nbar, j as f64 / 99.0)));
        }
    }
    // equality holds exactly at mu = 0; allow the last bit of rounding
    v.check(lowest >= 1.0 - 1e-12, format!("min g2_00(0) over 10^4 (nbar, mu) points = {lowest:.15}"));
    let above = (0..100).all(|i| g2_m0(0, &params(4.0 + 996.0 * i as f64 / 99.0, 1.0)) > 2.0);
    v.check(above && g2_m0(0, &params(4.0, 1.0)) > 2.0, "g2_00(0) > 2 for nbar in [4, 1000] at mu = 1".into());
    let scaled = g10(200.0) * 4.0 / 200.0;
    v.check((0.98..=1.02).contains(&scaled), format!("g2_10(0) * 4 / nbar at nbar = 200: {scaled:.5}"));
    v
}

fn a3() -> Verdict {
    let mut v = Verdict::new();
    let nbars = [0.2, 0.5, 1.0, 2.0];
    let seeds = 20u64;
    let (mut within2, mut cells) = (0usize, 0usize);
    let mut worst_primary = 0.0f64;
    let mut z2 = 0.0;
    let mut base_02 = None;
    for &nbar in &nbars {
        for seed in 0..seeds {
            let cfg = config(&[
                "grid_nx=1",
                "grid_ny=1",
                "frames=1000000",
                "coherence_frames=0.1",
                &format!("nbar_ref={nbar}"),
                &format!("seed={seed}"),
            ]);
            let counts = simulate_hbt_counts(&pipeline::hbt_config(&cfg).unwrap()).unwrap();
            let hist = tally_joint(&counts.ch1, &counts.ch2, 0, 16).unwrap();
            for m in 0..4u64 {
                let e = g2_hat(&hist, m, 0).unwrap();
                let z = (e.value - common::g2_m0_closed(m as u32, nbar, 1.0)).abs() / e.stderr;
                cells += 1;
                within2 += (z <= 2.0) as usize;
                z2 += z * z;
                if seed == 0 {
                    worst_primary = worst_primary.max(z);
                    v.note(format!(
                        "nbar {nbar} m {m}: {:.5} +/- {:.5} vs {:.5} ({z:.2} SE)",
                        e.value,
                        e.stderr,
                        common::g2_m0_closed(m as u32, nbar, 1.0)
                    ));
                }
            }
            if seed == 0 && nbar == 0.2 {
                base_02 = Some(counts);
            }
        }
    }
    v.check(worst_primary <= 3.0, format!("seed 0: every cell within 3 SE (worst {worst_primary:.2} SE)"));
    let frac = within2 as f64 / cells as f64;
    // a calibrated error bar gives mean z^2 = 1 and about 4.6% of cells beyond 2 SE
    v.note(format!(
        "mean z^2 = {:.3}; {} cells beyond 2 SE, {:.1} expected",
        z2 / cells as f64,
        cells - within2,
        0.0455 * cells as f64
    ));
    v.check(frac >= 0.95, format!("{within2}/{cells} = {:.1}% of cells within 2 SE over {seeds} seeds", 100.0 * frac));

    let counts = base_02.expect("nbar 0.2 ran");
    let low = g2_hat(&tally_joint(&counts.ch1, &counts.ch2, 0, 16).unwrap(), 1, 0).unwrap();
    let (a, b) = (rebin(&counts.ch1, 20).unwrap(), rebin(&counts.ch2, 20).unwrap());
    let high = g2_hat(&tally_joint(&a, &b, 0, 64).unwrap(), 1, 0).unwrap();
    v.check(
        low.value < 1.0,
        format!("nbar {:.3}: g2_10(0) = {:.4} +/- {:.4} (antibunched)", counts.ch1.mean(), low.value, low.stderr),
    );
    v.check(
        high.value > 1.0,
        format!("rebinned x20, nbar {:.3}: g2_10(0) = {:.4} +/- {:.4} (bunched)", a.mean(), high.value, high.stderr),
    );
    v
}

fn a4(dir: &Path) -> Verdict {
    let mut v = Verdict::new();
    let (nbar, coherence) = (0.5, 20.0);
    let out = dir.join("a4");
    let cfg = config(&[
        "grid_nx=1",
        "grid_ny=1",
        "frames=1000000",
        "coherence_frames=20",
        &format!("nbar_ref={nbar}"),
        "lags=0:78:2",
        "pairs=1:0",
        "blocks=50",
        "seed=4",
        &format!("out_dir={}", out.display()),
    ]);
    let run = pipeline::cmd_simulate_hbt(&cfg).unwrap();
    let curve = &run.temporal[0];
    let truth = |lag: f64| common::g2_m0_closed(1, nbar, (-(lag / coherence).powi(2)).exp());
    let worst = curve
        .points
        .iter()
        .map(|p| (p.g2 - truth(p.lag as f64)).abs() / p.stderr)
        .fold(0.0, f64::max);
    v.check(
        worst <= 3.0,
        format!("{} lags: max |g2_10 - closed form| = {worst:.2} SE", curve.points.len()),
    );

    let plateau: Vec<usize> = (0..curve.points.len()).filter(|&i| curve.points[i].lag >= 60).collect();
    let mean = plateau.iter().map(|&i| curve.points[i].g2).sum::<f64>() / plateau.len() as f64;
    let reps = tables::read_jackknife(&std::fs::read_to_string(out.join("temporal_jackknife.csv")).unwrap()).unwrap();
    let blocks = reps.iter().map(|r| r.block).max().unwrap() + 1;
    let rep_means: Vec<f64> = (0..blocks)
        .map(|b| {
            let vals: Vec<f64> = reps.iter().filter(|r| r.block == b && r.lag >= 60).map(|r| r.g2).collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        })
        .collect();
    let se = jackknife_stderr(&rep_means);
    v.check(
        (mean - 1.0).abs() <= 3.0 * se,
        format!("plateau (lag >= 60, {} lags) = {mean:.5} +/- {se:.5}", plateau.len()),
    );

    let fit = pipeline::cmd_fit(&FitArgs {
        curve: out.join("temporal_curve.csv"),
        jackknife: Some(out.join("temporal_jackknife.csv")),
        m: vec![1],
        tau_scale: 1.0,
    })
    .unwrap();
    let p = fit.params;
    for (name, got, se, want) in [
        ("nbar", p.nbar, fit.nbar_se, nbar),
        ("sigma", p.sigma, fit.sigma_se, 1.0 / coherence),
        ("v", p.v, fit.v_se, 1.0),
    ] {
        v.check(
            (got - want).abs() <= 3.0 * se,
            format!("fit {name} = {got:.5} +/- {se:.5} (truth {want}, {:.2} SE)", (got - want).abs() / se),
        );
    }
    v.note(format!("fit chi2 = {:.1} on {} dof, se by {}", fit.chi2, fit.dof, fit.se_method));
    v
}

struct ImagingData {
    images: Vec<ImageMetrics>,
    control: Vec<ImageMetrics>,
    secs: f64,
}

fn imaging_data() -> ImagingData {
    let started = Instant::now();
    let cfg = config(&[&format!("frames={IMAGING_FRAMES}"), "seed=5"]);
    let run = pipeline::imaging_config(&cfg).unwrap();
    let tallies = run_ghost_scan(&run).unwrap();
    let (images, skipped) = pipeline::images_from_scan(&run, &tallies).unwrap();
    assert!(skipped.is_empty(), "starved images: {skipped:?}");
    let images = images.iter().map(|img| metrics(img, &run.object).unwrap()).collect();

    let mut c = run.clone();
    c.independent_reference = true;
    c.source.frames = CONTROL_FRAMES;
    let t = run_ghost_scan(&c).unwrap();
    let control = pipeline::images_from_scan(&c, &t)
        .unwrap()
        .0
        .iter()
        .map(|img| metrics(img, &c.object).unwrap())
        .collect();
    ImagingData {
        images,
        control,
        secs: started.elapsed().as_secs_f64(),
    }
}

fn find<'a>(set: &'a [ImageMetrics], stat: ImageStatistic) -> &'a ImageMetrics {
    set.iter().find(|m| m.statistic == stat.label()).expect("image present")
}

fn a5(data: &ImagingData) -> Verdict {
    let mut v = Verdict::new();
    for m in &data.images {
        v.note(format!(
            "{}: visibility {:+.5} +/- {:.5}, PSNR {:.3} dB, separation {:+.1} sigma",
            m.statistic, m.visibility, m.visibility_se, m.psnr_db, m.separation_sigma
        ));
    }
    for (stat, sign) in [
        (ImageStatistic::ZeroPhoton { m: 1 }, ContrastSign::Negative),
        (ImageStatistic::ZeroPhoton { m: 0 }, ContrastSign::Positive),
        (ImageStatistic::Traditional, ContrastSign::Positive),
    ] {
        let m = find(&data.images, stat);
        v.check(
            m.contrast_sign == sign && m.separation_sigma.abs() >= 5.0,
            format!("{} {:?} at {:+.1} sigma (want {sign:?}, >= 5)", m.statistic, m.contrast_sign, m.separation_sigma),
        );
    }
    for m in &data.control {
        v.check(
            m.separation_sigma.abs() <= 3.0,
            format!("control {}: {:+.2} sigma (flat within 3)", m.statistic, m.separation_sigma),
        );
    }
    v.note(format!(
        "{IMAGING_FRAMES} frame-bins, control {CONTROL_FRAMES} frame-bins, {:.0} s for both scans",
        data.secs
    ));
    v
}

fn a6(data: &ImagingData) -> Verdict {
    let mut v = Verdict::new();
    let sweep: Vec<&ImageMetrics> = (1..=4).map(|m| find(&data.images, ImageStatistic::ZeroPhoton { m })).collect();
    for w in sweep.windows(2) {
        let slack = (w[0].visibility_se.powi(2) + w[1].visibility_se.powi(2)).sqrt();
        v.check(
            w[1].visibility.abs() >= w[0].visibility.abs() - slack,
            format!(
                "|V({})| = {:.5} vs |V({})| = {:.5} (tie allowance {slack:.5})",
                w[1].statistic,
                w[1].visibility.abs(),
                w[0].statistic,
                w[0].visibility.abs()
            ),
        );
    }
    let ratio = sweep[3].visibility.abs() / sweep[0].visibility.abs();
    v.check(ratio >= 2.0, format!("|V(g2_40)| / |V(g2_10)| = {ratio:.2} (>= 2)"));
    let psnr: Vec<f64> = sweep.iter().map(|m| m.psnr_db).collect();
    let spread = psnr.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - psnr.iter().cloned().fold(f64::INFINITY, f64::min);
    v.check(
        spread <= 1.0,
        format!(
            "PSNR m = 1..4: {} dB, spread {spread:.3} dB (<= 1)",
            psnr.iter().map(|p| format!("{p:.3}")).collect::<Vec<_>>().join(", ")
        ),
    );
    v
}

fn payloads(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("csv" | "pgm")))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn a7(dir: &Path) -> Verdict {
    let mut v = Verdict::new();
    let base = ["grid_nx=16", "grid_ny=16", "grain_px=2", "frames=60000", "coherence_frames=3", "seed=7"];
    let mut runs: Vec<(usize, Vec<(String, Vec<u8>)>)> = Vec::new();
    for threads in [1usize, 4, 16, 1] {
        let out = dir.join(format!("a7-{threads}-{}", runs.len()));
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut lines: Vec<String> = base.iter().map(|s| s.to_string()).collect();
            lines.push(format!("out_dir={}", out.join("hbt").display()));
            pipeline::cmd_simulate_hbt(&config(&lines.iter().map(String::as_str).collect::<Vec<_>>())).unwrap();
            lines.pop();
            lines.push(format!("out_dir={}", out.join("gi").display()));
            lines.push("control=true".into());
            lines.push("control_frames=20000".into());
            pipeline::cmd_simulate_gi(&config(&lines.iter().map(String::as_str).collect::<Vec<_>>())).unwrap();
        });
        let mut files = payloads(&out.join("hbt"));
        files.extend(payloads(&out.join("gi")));
        runs.push((threads, files));
    }
    let reference = &runs[0].1;
    for (threads, files) in &runs[1..] {
        v.check(
            files == reference,
            format!("{} CSV/PGM payloads byte-identical with {threads} thread(s)", reference.len()),
        );
    }

    let hbt = dir.join("a7-1-0").join("hbt");
    let analyzed = dir.join("a7-analyze");
    let cfg = config(&base);
    pipeline::cmd_analyze(
        &AnalyzeInput::Counts {
            path: hbt.join("counts.csv"),
            bin_width: 1,
        },
        1,
        &AnalysisOptions::from_config(&cfg),
        &analyzed,
    )
    .unwrap();
    for name in ["temporal_curve.csv", "temporal_jackknife.csv"] {
        let same = std::fs::read(hbt.join(name)).unwrap() == std::fs::read(analyzed.join(name)).unwrap();
        v.check(same, format!("export -> analyze reproduces {name} bit-for-bit"));
    }
    v
}

fn report(id: &str, title: &str, limit_s: f64, run: impl FnOnce() -> Verdict, failed: &mut Vec<String>) {
    let started = Instant::now();
    let mut verdict = run();
    let secs = started.elapsed().as_secs_f64();
    if limit_s.is_finite() {
        verdict.check(secs < limit_s, format!("runtime {secs:.1} s (< {limit_s} s)"));
    }
    let word = if verdict.pass { "PASS" } else { "FAIL" };
    println!("{id} {word} {title} ({secs:.1} s)");
    for line in &verdict.lines {
        println!("    {line}");
    }
    if !verdict.pass {
        failed.push(id.to_string());
    }
}

fn main() {
    let wanted: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let on = |id: &str| wanted.is_empty() || wanted.iter().any(|w| w.eq_ignore_ascii_case(id));
    let dir = tempfile::tempdir().unwrap();
    let mut failed = Vec::new();

    if on("A1") {
        report("A1", "analytic identity suite", 10.0, a1, &mut failed);
    }
    if on("A2") {
        report("A2", "zero-photon correlation landmarks", 5.0, a2, &mut failed);
    }
    if on("A3") {
        report("A3", "Monte Carlo vs closed form, same pixel", 120.0, a3, &mut failed);
    }
    if on("A4") {
        report("A4", "temporal curve and fit", 180.0, || a4(dir.path()), &mut failed);
    }
    if on("A5") || on("A6") {
        let data = imaging_data();
        let secs = data.secs;
        if on("A5") {
            // the scans are timed inside; add them to the criterion's clock
            report("A5", "ghost imaging sign law", f64::INFINITY, || {
                let mut v = a5(&data);
                v.check(secs < 600.0, format!("runtime {secs:.1} s (< 600 s)"));
                v
            }, &mut failed);
        }
        if on("A6") {
            report("A6", "visibility trend over m", f64::INFINITY, || a6(&data), &mut failed);
        }
    }
    if on("A7") {
        report("A7", "determinism and round trip", f64::INFINITY, || a7(dir.path()), &mut failed);
    }

    if failed.is_empty() {
        println!("acceptance: all selected criteria passed");
    } else {
        println!("acceptance: FAILED {}", failed.join(", "));
        std::process::exit(1);
    }
}
