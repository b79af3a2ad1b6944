use std::path::Path;
use std::process::{Command, Output};

use ghostzero::analytic::{g2_m0_tau, PhotonStatsParams};

fn ghostzero(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ghostzero"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = ghostzero(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

fn row(table: &str, prefix: &str) -> f64 {
    let line = table.lines().find(|l| l.starts_with(prefix)).unwrap_or_else(|| panic!("no row {prefix}"));
    line.rsplit(',').next().unwrap().parse().unwrap()
}

#[test]
fn curves_tables_hit_the_landmarks() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c");
    ok(&["curves", "--nbar-max", "2", "--nbar-points", "21", "--out-dir", out.to_str().unwrap()]);
    let t = read(&out.join("g2_vs_nbar.csv"));
    assert!(t.starts_with("nbar,m,g2\n"));
    assert_eq!(row(&t, "0.5,1,"), 0.84375);
    assert!((row(&t, "1,0,") - 1.33333).abs() < 1e-5);
    assert!(read(&out.join("g2_vs_tau.csv")).starts_with("tau,m,g2\n"));

    let flat = dir.path().join("flat");
    ok(&["curves", "--mu", "0", "--nbar-points", "11", "--out-dir", flat.to_str().unwrap()]);
    let t = read(&flat.join("g2_vs_nbar.csv"));
    for line in t.lines().skip(1) {
        let g: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!((g - 1.0).abs() < 1e-12, "{line}");
    }

    let bad = ghostzero(&["curves", "--nbar-min", "3", "--nbar-max", "1", "--out-dir", flat.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn manifest_lists_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("hbt");
    ok(&[
        "simulate-hbt",
        "--set",
        "frames=20000",
        "--set",
        "grid_nx=8",
        "--set",
        "grid_ny=8",
        "--set",
        &format!("out_dir={}", out.display()),
    ]);
    let manifest: serde_json::Value = serde_json::from_str(&read(&out.join("manifest.json"))).unwrap();
    let outputs = manifest["outputs"].as_array().unwrap();
    let mut listed: Vec<String> = outputs.iter().map(|o| o["file"].as_str().unwrap().to_string()).collect();
    listed.sort();
    let mut present: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n != "manifest.json")
        .collect();
    present.sort();
    assert_eq!(listed, present);
    for o in outputs {
        use sha2::Digest;
        let bytes = std::fs::read(out.join(o["file"].as_str().unwrap())).unwrap();
        assert_eq!(o["sha256"].as_str().unwrap(), hex::encode(sha2::Sha256::digest(&bytes)));
    }
    assert_eq!(manifest["config"]["frames"], "20000");
    assert_eq!(manifest["seed"], 0);
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    let out = dir.path().join("o");
    std::fs::write(
        &cfg,
        format!("# small run\ngrid_nx = 4\ngrid_ny = 4\nframes = 5000\nseed = 3\nout_dir = {}\n", out.display()),
    )
    .unwrap();
    ok(&["simulate-hbt", "--config", cfg.to_str().unwrap(), "--set", "seed=4"]);
    let manifest = read(&out.join("manifest.json"));
    assert!(manifest.contains("\"seed\": 4"));

    std::fs::write(&cfg, "grid_nx = 4\nwibble = 1\n").unwrap();
    let bad = ghostzero(&["simulate-hbt", "--config", cfg.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("line 2"));
}

#[test]
fn independent_arm_control_is_flat() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ctl");
    ok(&[
        "simulate-hbt",
        "--set",
        "frames=200000",
        "--set",
        "grid_nx=1",
        "--set",
        "grid_ny=1",
        "--set",
        "nbar_ref=0.5",
        "--set",
        "control=true",
        "--set",
        "lags=0:4",
        "--set",
        &format!("out_dir={}", out.display()),
    ]);
    let t = read(&out.join("temporal_curve.csv"));
    for line in t.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let (g, se): (f64, f64) = (f[3].parse().unwrap(), f[4].parse().unwrap());
        if f[1].parse::<u32>().unwrap() <= 2 {
            assert!((g - 1.0).abs() < 4.5 * se, "{line}");
        }
    }
}

#[test]
fn analyze_reproduces_simulation_and_reports_bad_rows() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    ok(&[
        "simulate-hbt",
        "--set",
        "frames=30000",
        "--set",
        "grid_nx=4",
        "--set",
        "grid_ny=4",
        "--set",
        "coherence_frames=3",
        "--set",
        &format!("out_dir={}", sim.display()),
    ]);
    let an = dir.path().join("an");
    ok(&[
        "analyze",
        "--counts",
        sim.join("counts.csv").to_str().unwrap(),
        "--out-dir",
        an.to_str().unwrap(),
    ]);
    assert_eq!(read(&an.join("temporal_curve.csv")), read(&sim.join("temporal_curve.csv")));
    assert_eq!(read(&an.join("temporal_jackknife.csv")), read(&sim.join("temporal_jackknife.csv")));

    let broken = dir.path().join("broken.csv");
    std::fs::write(&broken, "bin_index,count_ch1,count_ch2\n0,1,0\n1,x,2\n").unwrap();
    let bad = ghostzero(&["analyze", "--counts", broken.to_str().unwrap(), "--out-dir", an.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("line 3"));

    let ts = dir.path().join("ts.csv");
    std::fs::write(&ts, "channel,timestamp_ns\n1,5\n2,7\n1,1500\n2,2600\n").unwrap();
    ok(&[
        "analyze",
        "--timestamps",
        ts.to_str().unwrap(),
        "--bin-width-ns",
        "1000",
        "--blocks",
        "1",
        "--lags",
        "0",
        "--pairs",
        "0:0",
        "--out-dir",
        an.to_str().unwrap(),
    ]);
}

#[test]
fn fit_recovers_a_noise_free_curve() {
    let dir = tempfile::tempdir().unwrap();
    let p = PhotonStatsParams::new(0.8, 1.0)
        .unwrap()
        .with_sigma(0.1)
        .unwrap()
        .with_v(0.7)
        .unwrap();
    let mut csv = String::from("lag,m,n,g2,stderr,events\n");
    for lag in 0..30 {
        csv.push_str(&format!("{lag},1,0,{},0.001,1000\n", g2_m0_tau(1, lag as f64, &p)));
    }
    let path = dir.path().join("curve.csv");
    std::fs::write(&path, csv).unwrap();
    let out = ok(&["fit", path.to_str().unwrap()]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let got = &v["params"];
    assert!((got["nbar"].as_f64().unwrap() - 0.8).abs() < 1e-6);
    assert!((got["sigma"].as_f64().unwrap() - 0.1).abs() < 1e-6);
    assert!((got["v"].as_f64().unwrap() - 0.7).abs() < 1e-6);

    std::fs::write(&path, "lag,m,n,g2,stderr,events\n0,1,0,1,0.1,10\n").unwrap();
    assert_eq!(ghostzero(&["fit", path.to_str().unwrap()]).status.code(), Some(3));
    assert_eq!(ghostzero(&["fit", "/nonexistent/curve.csv"]).status.code(), Some(4));
}

#[test]
fn imaging_run_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gi");
    ok(&[
        "simulate-gi",
        "--set",
        "frames=40000",
        "--set",
        "grid_nx=16",
        "--set",
        "grid_ny=16",
        "--set",
        "grain_px=1.5",
        "--set",
        "m_list=0,1",
        "--set",
        &format!("out_dir={}", out.display()),
    ]);
    for name in ["image_g2_00", "image_g2_10", "image_traditional"] {
        let pgm = std::fs::read(out.join(format!("{name}.pgm"))).unwrap();
        assert!(pgm.starts_with(b"P5\n16 16\n65535\n"));
        assert_eq!(pgm.len(), "P5\n16 16\n65535\n".len() + 2 * 256);
    }
    let doc: serde_json::Value = serde_json::from_str(&read(&out.join("metrics.json"))).unwrap();
    assert_eq!(doc["images"].as_array().unwrap().len(), 3);
    assert!(doc["git_describe"].is_string());

    let m = ok(&["metrics", out.join("image_g2_10.csv").to_str().unwrap(), "--mask", "builtin:T"]);
    let v: serde_json::Value = serde_json::from_slice(&m.stdout).unwrap();
    let first = &doc["images"][1];
    assert_eq!(first["statistic"], "g2_10");
    assert_eq!(v["visibility"], first["visibility"]);
    assert_eq!(v["psnr_db"], first["psnr_db"]);

    let opaque = ghostzero(&[
        "simulate-gi",
        "--set",
        "frames=1000",
        "--set",
        "grid_nx=8",
        "--set",
        "grid_ny=8",
        "--set",
        "object_path=builtin:opaque",
        "--set",
        &format!("out_dir={}", dir.path().join("op").display()),
    ]);
    assert_eq!(opaque.status.code(), Some(3));
}
