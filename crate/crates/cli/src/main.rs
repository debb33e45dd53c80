mod plot;
mod run;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use ssmsel::certify::{run_suite, Suite, SuiteConfig};

/// Exit status contract: 0 success, 1 failed check, 2 usage or config error.
#[derive(Debug)]
enum Failure {
    Config(anyhow::Error),
    Check(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Config(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Config(e.into())
    }
}

impl From<ssmsel::Error> for Failure {
    fn from(e: ssmsel::Error) -> Self {
        Failure::Config(e.into())
    }
}

type CmdResult = Result<(), Failure>;

#[derive(Parser)]
#[command(name = "ssmsel", version, about = "Certify constructions, generate data, train sweeps, plot and benchmark")]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true, env = "SSMSEL_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run certification suites and emit a JSON array with one object per check.
    Verify(VerifyArgs),
    /// Generate datasets and run training sweeps from a JSON config.
    Run(RunArgs),
    /// Render a sweep CSV as an SVG line chart.
    Plot(PlotArgs),
    /// Time direct and FFT convolution, the recurrent scan and attention.
    Bench(BenchArgs),
}

#[derive(clap::Args)]
struct VerifyArgs {
    /// all, numerics, ssm, lemma33, lowrank, jl, solvers, exclusion or gradcheck.
    #[arg(long, default_value = "all")]
    suite: String,
    /// JSON file with suite overrides; flags win over it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Context length of the kernel-selection check [default: 63].
    #[arg(long)]
    v: Option<usize>,
    /// Key gap of the kernel-selection check [default: 0.25].
    #[arg(long)]
    delta: Option<f64>,
    /// Tolerance the kernel-selection output is held to [default: 1e-3].
    #[arg(long)]
    eps: Option<f64>,
    /// Tolerance used to size the selection temperature [default: --eps].
    #[arg(long)]
    kappa_eps: Option<f64>,
    /// Pad rate of the selective-copy check [default: 0.3].
    #[arg(long)]
    alpha: Option<f64>,
    /// Regular words of the selective-copy check [default: calibrated threshold].
    #[arg(long)]
    vocab_size: Option<usize>,
    /// Trial count for every check [default: per check].
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(clap::Args)]
struct RunArgs {
    /// JSON run config (see README for the schema).
    #[arg(long)]
    config: PathBuf,
    /// Root seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config [default: out].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct PlotArgs {
    /// Sweep CSV written by `run`.
    csv: PathBuf,
    /// SVG path [default: the CSV path with an .svg extension].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Column on the y axis: final or best.
    #[arg(long, default_value = "final")]
    metric: String,
    #[arg(long)]
    title: Option<String>,
}

#[derive(clap::Args)]
struct BenchArgs {
    /// Comma-separated sequence lengths.
    #[arg(long, value_delimiter = ',', default_values_t = ssmsel_bench::DEFAULT_GRID)]
    grid: Vec<usize>,
    /// Channels of every kernel input.
    #[arg(long, default_value_t = ssmsel_bench::DEFAULT_CHANNELS)]
    channels: usize,
    /// Repetitions per kernel; the minimum and maximum are reported.
    #[arg(long, default_value_t = ssmsel_bench::DEFAULT_REPS)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let res = configure_jobs(cli.jobs).and_then(|()| match cli.cmd {
        Cmd::Verify(a) => verify(a),
        Cmd::Run(a) => run::run(a.config, a.seed, a.out),
        Cmd::Plot(a) => plot_cmd(a),
        Cmd::Bench(a) => bench(a),
    });
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("FAILED: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn configure_jobs(jobs: Option<usize>) -> CmdResult {
    if let Some(n) = jobs {
        if n == 0 {
            return Err(Failure::Config(anyhow::anyhow!("--jobs must be positive")));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_output(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, text).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            Ok(stdout.flush()?)
        }
    }
}

fn verify(a: VerifyArgs) -> CmdResult {
    let suite = Suite::parse(&a.suite)?;
    let mut cfg: SuiteConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => SuiteConfig::default(),
    };
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.v = a.v.unwrap_or(cfg.v);
    cfg.delta = a.delta.unwrap_or(cfg.delta);
    cfg.eps = a.eps.unwrap_or(cfg.eps);
    cfg.kappa_eps = a.kappa_eps.or(cfg.kappa_eps);
    cfg.alpha = a.alpha.unwrap_or(cfg.alpha);
    cfg.vocab_size = a.vocab_size.or(cfg.vocab_size);
    cfg.trials = a.trials.or(cfg.trials);

    let reports = run_suite(suite, &cfg)?;
    let mut text = serde_json::to_string_pretty(&reports).context("serializing the report")?;
    text.push('\n');
    write_output(a.out.as_deref(), &text)?;
    for r in &reports {
        eprintln!("{} {}: measured {:e}, bound {:e}", if r.pass { "pass" } else { "FAIL" }, r.construct, r.measured, r.bound);
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.pass).map(|r| r.construct.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(failed.join(", ")))
    }
}

fn plot_cmd(a: PlotArgs) -> CmdResult {
    let best = match a.metric.as_str() {
        "final" => false,
        "best" => true,
        m => return Err(Failure::Config(anyhow::anyhow!("unknown metric {m:?}, expected final or best"))),
    };
    let file = fs::File::open(&a.csv).with_context(|| format!("opening {}", a.csv.display()))?;
    let rows = ssmsel::training::read_sweep_csv(file).with_context(|| format!("reading {}", a.csv.display()))?;
    if rows.is_empty() {
        return Err(Failure::Config(anyhow::anyhow!("{} has no rows", a.csv.display())));
    }
    let title = a.title.unwrap_or_else(|| format!("{} (V={})", rows[0].task, rows[0].v));
    let svg = plot::render(&rows, best, &title);
    let out = a.out.unwrap_or_else(|| a.csv.with_extension("svg"));
    write_output(Some(&out), &svg)?;
    Ok(())
}

fn bench(a: BenchArgs) -> CmdResult {
    if a.grid.is_empty() || a.grid.contains(&0) || a.channels == 0 {
        return Err(Failure::Config(anyhow::anyhow!("grid lengths and channels must be positive")));
    }
    let rows = ssmsel_bench::bench_grid(&a.grid, a.channels, a.reps, a.seed)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r).context("writing CSV")?;
    }
    let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?;
    write_output(a.out.as_deref(), &String::from_utf8(bytes).context("CSV is UTF-8")?)?;
    let t = a.grid.iter().max().copied().unwrap_or(0);
    match ssmsel_bench::fft_beats_naive(&rows) {
        Some(flag) => eprintln!("fft_beats_naive at T={t}: {flag}"),
        None => eprintln!("fft_beats_naive: no rows"),
    }
    Ok(())
}
