use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ghostzero::detect::ObjectMask;
use ghostzero::formats::config::{parse_lags, parse_pairs, RunConfig};
use ghostzero::formats::{pgm, tables};
use ghostzero::pipeline::{self, AnalysisOptions, AnalyzeInput, CurvesArgs, FitArgs};
use ghostzero::{Error, Result};

#[derive(Parser)]
#[command(name = "ghostzero", version, about = "Zero-photon correlation simulator and analyzer")]
struct Cli {
    /// Worker threads (default: all cores, or `threads` from the config file).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analytic g2_m0(0) vs nbar and g2_m0(tau) tables.
    Curves(CurvesCli),
    /// Object-free two-detector simulation with temporal and spatial curves.
    SimulateHbt(RunCli),
    /// Ghost-imaging simulation: images, metrics and optional control.
    SimulateGi(RunCli),
    /// Curves from a count or timestamp CSV.
    Analyze(AnalyzeCli),
    /// Fit nbar, sigma and v to a temporal curve CSV.
    Fit(FitCli),
    /// Region metrics of a raw image CSV against a mask.
    Metrics(MetricsCli),
}

#[derive(Args)]
struct RunCli {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set frames=1000000`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct CurvesCli {
    #[arg(long, default_value_t = 0.0)]
    nbar_min: f64,
    #[arg(long, default_value_t = 5.0)]
    nbar_max: f64,
    #[arg(long, default_value_t = 501)]
    nbar_points: usize,
    /// Degree of coherence of the nbar table.
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
    #[arg(long, default_value_t = 4)]
    m_max: u32,
    /// Mean count of the tau table.
    #[arg(long, default_value_t = 0.5)]
    nbar_tau: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 1.0)]
    v: f64,
    #[arg(long, default_value_t = 3.0)]
    tau_max: f64,
    #[arg(long, default_value_t = 301)]
    tau_points: usize,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct AnalyzeCli {
    /// Count CSV (`bin_index,count_ch1,count_ch2`).
    #[arg(long, conflicts_with = "timestamps", required_unless_present = "timestamps")]
    counts: Option<PathBuf>,
    /// Timestamp CSV (`channel,timestamp_ns`).
    #[arg(long, requires = "bin_width_ns")]
    timestamps: Option<PathBuf>,
    /// Bin width of timestamp input.
    #[arg(long)]
    bin_width_ns: Option<u64>,
    /// Bin width recorded with count input, in frames.
    #[arg(long, default_value_t = 1)]
    bin_width: u64,
    /// Merge `k` adjacent bins before analysis.
    #[arg(long, default_value_t = 1)]
    rebin: usize,
    /// Lags: comma list or `start:end[:step]`.
    #[arg(long, default_value = "0:20")]
    lags: String,
    /// `m:n` pairs, comma separated.
    #[arg(long, default_value = "0:0,1:0,2:0,3:0,4:0")]
    pairs: String,
    /// Histogram cap.
    #[arg(long, default_value_t = pipeline::HBT_DEFAULT_CAP)]
    cap: usize,
    /// Jackknife blocks; 1 gives delta-method errors.
    #[arg(long, default_value_t = pipeline::HBT_DEFAULT_BLOCKS)]
    blocks: usize,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct FitCli {
    /// Curve CSV (`lag,m,n,g2,stderr,events`).
    curve: PathBuf,
    /// Leave-one-block-out values for jackknife parameter errors.
    #[arg(long)]
    jackknife: Option<PathBuf>,
    /// Use only these `m` (comma separated); default all with `n = 0`.
    #[arg(long, value_delimiter = ',')]
    m: Vec<u64>,
    /// Frames per lag step (the fitted sigma is in 1/frames).
    #[arg(long, default_value_t = 1.0)]
    tau_scale: f64,
    /// Also write the result as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MetricsCli {
    /// Raw image CSV (`y,x,g2,stderr,events,starved`).
    image: PathBuf,
    /// Mask PGM, or `builtin:T` / `builtin:open`.
    #[arg(long)]
    mask: String,
}

fn load_config(run: &RunCli) -> Result<RunConfig> {
    let mut cfg = match &run.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&run.overrides)?;
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    if let Some(path) = out {
        std::fs::write(path, &text).map_err(|e| Error::io(path, e))?;
    }
    // a closed pipe on stdout is not an error
    let _ = writeln!(std::io::stdout(), "{text}");
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Curves(c) => {
            let args = CurvesArgs {
                nbar_min: c.nbar_min,
                nbar_max: c.nbar_max,
                nbar_points: c.nbar_points,
                mu: c.mu,
                m_max: c.m_max,
                nbar_tau: c.nbar_tau,
                sigma: c.sigma,
                v: c.v,
                tau_max: c.tau_max,
                tau_points: c.tau_points,
            };
            let manifest = pipeline::cmd_curves(&args, &c.out_dir)?;
            eprintln!("wrote {}", manifest.display());
        }
        Command::SimulateHbt(r) => {
            let cfg = load_config(&r)?;
            let out = pipeline::cmd_simulate_hbt(&cfg)?;
            for c in &out.temporal {
                if let Some(p) = c.points.first() {
                    eprintln!("g2_{}{}(lag {}) = {} +/- {}", c.m, c.n, p.lag, p.g2, p.stderr);
                }
            }
            eprintln!("wrote {}", out.manifest.display());
        }
        Command::SimulateGi(r) => {
            let cfg = load_config(&r)?;
            let out = pipeline::cmd_simulate_gi(&cfg)?;
            for (label, reason) in &out.skipped {
                eprintln!("skipped {label}: {reason}");
            }
            for m in &out.metrics {
                eprintln!(
                    "{}: visibility {:.5} +/- {:.5}, PSNR {:.2} dB, {:?} ({:.1} sigma)",
                    m.statistic, m.visibility, m.visibility_se, m.psnr_db, m.contrast_sign, m.separation_sigma
                );
            }
            eprintln!("wrote {}", out.manifest.display());
        }
        Command::Analyze(a) => {
            let input = match (a.counts, a.timestamps) {
                (Some(path), _) => AnalyzeInput::Counts {
                    path,
                    bin_width: a.bin_width,
                },
                (None, Some(path)) => AnalyzeInput::Timestamps {
                    path,
                    bin_width_ns: a.bin_width_ns.unwrap_or(0),
                },
                (None, None) => return Err(Error::config("need --counts or --timestamps")),
            };
            let opts = AnalysisOptions {
                lags: parse_lags(&a.lags).map_err(Error::config)?,
                pairs: parse_pairs(&a.pairs).map_err(Error::config)?,
                cap: a.cap,
                blocks: a.blocks,
            };
            pipeline::cmd_analyze(&input, a.rebin, &opts, &a.out_dir)?;
            eprintln!("wrote {}", a.out_dir.join("manifest.json").display());
        }
        Command::Fit(f) => {
            let result = pipeline::cmd_fit(&FitArgs {
                curve: f.curve,
                jackknife: f.jackknife,
                m: f.m,
                tau_scale: f.tau_scale,
            })?;
            print_json(&result, f.out.as_deref())?;
        }
        Command::Metrics(m) => {
            let table = tables::read_image(
                &std::fs::read_to_string(&m.image).map_err(|e| Error::io(&m.image, e))?,
            )?;
            let mask = match m.mask.strip_prefix("builtin:") {
                Some(name) => ObjectMask::builtin(name, table.nx, table.ny)
                    .ok_or_else(|| Error::config(format!("unknown builtin mask `{name}`")))?,
                None => pgm::read_mask(Path::new(&m.mask))?,
            };
            print_json(&pipeline::cmd_metrics(&m.image, &mask)?, None)?;
        }
    }
    Ok(())
}

fn threads_wanted(cli: &Cli) -> Option<usize> {
    if cli.threads.is_some() {
        return cli.threads;
    }
    let run = match &cli.command {
        Command::SimulateHbt(r) | Command::SimulateGi(r) => r,
        _ => return None,
    };
    load_config(run).ok().and_then(|c| c.threads)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match threads_wanted(&cli) {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::config(format!("thread pool: {e}")))
            .and_then(|pool| pool.install(|| run(cli.command))),
        None => run(cli.command),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
