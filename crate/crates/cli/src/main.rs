//! `dpgb`: generate synthetic trip data, fit hyperparameters on a proxy,
//! release private histograms, and evaluate or sweep mechanisms.
//!
//! Exit codes: 0 success, 1 configuration or usage, 2 I/O, 3 privacy budget.

mod manifest;

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dpgb::datagen::{generate, ground_truth, GeneratorSpec};
use dpgb::dp::NoiseMode;
use dpgb::eval::{
    read_rows, render_table, summarize, sweep, sweep_with_params, weighted_relative_error, write_plot_data,
    write_summary, SweepConfig,
};
use dpgb::formats::{read_histogram, read_records, write_histogram, write_records, KeyValues};
use dpgb::mechanisms::{release, FittedParams, RunOptions, DEFAULT_QUANTILE};
use dpgb::schema::{ClipBound, Dimensions, MechanismConfig, MechanismKind, WeekDataset};
use dpgb::{Error, Result};

use manifest::Manifest;

#[derive(Parser, Debug)]
#[command(
    name = "dpgb",
    version,
    about = "Differentially private group-by-sum histogram releases"
)]
struct Cli {
    /// Worker threads (default: available cores).
    #[arg(long, global = true, env = "DPGB_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic week of trips as a record CSV.
    Generate(GenerateArgs),
    /// Fit scales and clip bounds on proxy data and write a mechanism config.
    Fit(FitArgs),
    /// Run a mechanism and write the private histogram.
    Release(ReleaseArgs),
    /// Score a released histogram against the true one.
    Eval(EvalArgs),
    /// Release and score every (mechanism, epsilon, repeat) combination.
    Sweep(SweepArgs),
    /// Summarise a sweep rows file into a table and plot data.
    Report(ReportArgs),
}

/// Histogram domain for record files (the release path takes it from the config).
#[derive(Args, Debug, Clone, Copy)]
struct DomainArgs {
    #[arg(long, default_value_t = 9)]
    activities: usize,
    #[arg(long, default_value_t = 100)]
    regions: usize,
}

impl DomainArgs {
    fn dims(self) -> Result<Dimensions> {
        Dimensions::new(self.activities, self.regions)
    }
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Generator spec (`key=value`); built-in defaults when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the spec's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Proxy record CSV; never the data that will be released.
    #[arg(long)]
    proxy: PathBuf,
    #[command(flatten)]
    domain: DomainArgs,
    #[arg(long)]
    mechanism: MechanismKind,
    #[arg(long)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.0)]
    tau: f64,
    #[arg(long, default_value_t = DEFAULT_QUANTILE)]
    quantile: f64,
    /// Noise seed written into the config.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReleaseArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config's rng_seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Cap on the week's total epsilon; defaults to the config's epsilon.
    #[arg(long)]
    budget: Option<f64>,
    // Accepted only to be refused with a clear message.
    #[arg(long, hide = true)]
    test_mode: bool,
    #[arg(long, hide = true)]
    unsafe_fit: bool,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["released", "config"])))]
struct EvalArgs {
    /// Record CSV holding the true data.
    #[arg(long)]
    data: PathBuf,
    /// Released histogram CSV to score.
    #[arg(long)]
    released: Option<PathBuf>,
    /// Release with this config first, then score.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    domain: DomainArgs,
    #[arg(long, default_value_t = dpgb::eval::DEFAULT_MIN_DEVICES)]
    min_devices: u64,
    /// Zero-noise evaluation of a config (ledger records infinite spend).
    #[arg(long, requires = "config")]
    test_mode: bool,
    #[arg(long, requires = "config")]
    seed: Option<u64>,
    /// Report path; per-cell diagnostics go to `<out>.cells.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Show duration cells in minutes in the diagnostics (storage stays in seconds).
    #[arg(long, requires = "out")]
    duration_minutes: bool,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("fit_source").required(true).args(["proxy", "unsafe_fit"])))]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    proxy: Option<PathBuf>,
    /// Fit hyperparameters on the evaluation data itself.
    #[arg(long)]
    unsafe_fit: bool,
    /// Sweep settings (`key=value`); defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    domain: DomainArgs,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    min_devices: Option<u64>,
    #[arg(long)]
    test_mode: bool,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    rows: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    epsilon: f64,
    #[arg(long)]
    plot: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> Result<()>) -> Result<()> {
    let file = fs::File::create(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    use std::io::Write;
    w.flush()?;
    Ok(())
}

fn text(bytes: &[u8], path: &Path) -> Result<String> {
    String::from_utf8(bytes.to_vec()).map_err(|_| Error::Parse {
        location: path.display().to_string(),
        message: "not valid UTF-8".into(),
    })
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn load_records(path: &Path, dims: Dimensions, manifest: &mut Manifest, key: &str) -> Result<WeekDataset> {
    let bytes = read_bytes(path)?;
    manifest.hash_input(key, path, &bytes);
    let week = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_records(&bytes[..], &week, dims)
}

fn load_config(path: &Path, manifest: &mut Manifest) -> Result<MechanismConfig> {
    let bytes = read_bytes(path)?;
    manifest.hash_input("config", path, &bytes);
    MechanismConfig::parse_str(&text(&bytes, path)?)
}

fn clip_label(clip: &ClipBound) -> String {
    match clip {
        ClipBound::Scalar(c) => c.to_string(),
        ClipBound::Grid(g) => g.iter().map(f64::to_string).collect::<Vec<_>>().join(";"),
    }
}

fn cmd_generate(a: GenerateArgs, mut m: Manifest) -> Result<()> {
    let mut spec = match &a.spec {
        Some(path) => {
            let bytes = read_bytes(path)?;
            m.hash_input("spec", path, &bytes);
            GeneratorSpec::from_key_values(&KeyValues::parse(&text(&bytes, path)?)?, path.parent())?
        }
        None => GeneratorSpec::default(),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let data = generate(&spec)?;
    write_file(&a.out, |w| write_records(&data, w))?;
    let dims = data.dims();
    m.set(
        "effective_spec_sha256",
        manifest::sha256_hex(spec.to_key_values().as_bytes()),
    );
    m.set("seed", spec.seed);
    m.set("num_activities", dims.num_activities());
    m.set("num_regions", dims.num_regions());
    m.set("num_users", data.users().len());
    m.set("num_trips", data.num_trips());
    m.output("records", &a.out);
    m.write(&with_suffix(&a.out, ".manifest"))?;
    println!(
        "wrote {} trips for {} users ({} activities, {} regions) to {}",
        data.num_trips(),
        data.users().len(),
        dims.num_activities(),
        dims.num_regions(),
        a.out.display()
    );
    Ok(())
}

fn cmd_fit(a: FitArgs, mut m: Manifest) -> Result<()> {
    let proxy = load_records(&a.proxy, a.domain.dims()?, &mut m, "proxy")?;
    let params = FittedParams::fit(&proxy, a.quantile)?;
    let config = params.config(a.mechanism, a.epsilon, a.tau, a.seed, proxy.dims());
    config.validate()?;
    fs::write(&a.out, config.to_key_values())?;
    m.set("quantile", a.quantile);
    m.set("seed", a.seed);
    m.output("config", &a.out);
    m.write(&with_suffix(&a.out, ".manifest"))?;
    println!(
        "{} clip={} -> {}",
        a.mechanism,
        clip_label(&config.clip),
        a.out.display()
    );
    Ok(())
}

fn cmd_release(a: ReleaseArgs, mut m: Manifest) -> Result<()> {
    if a.test_mode {
        return Err(Error::Config(
            "release never runs in test mode; use `eval --test-mode`".into(),
        ));
    }
    if a.unsafe_fit {
        return Err(Error::Config(
            "release takes a fitted config; --unsafe-fit belongs to `sweep`".into(),
        ));
    }
    let mut config = load_config(&a.config, &mut m)?;
    if let Some(seed) = a.seed {
        config.rng_seed = seed;
    }
    let data = load_records(&a.data, config.dims, &mut m, "data")?;
    let opts = RunOptions {
        budget: a.budget,
        ..RunOptions::default()
    };
    let r = release(&data, &config, opts)?;

    let ledger_path = with_suffix(&a.out, ".ledger");
    let run_path = with_suffix(&a.out, ".run");
    let run_line = format!(
        "{},{},{},{},{},{}",
        r.kind,
        config.epsilon,
        clip_label(&config.clip),
        config.rng_seed,
        config.dims.total_cells(),
        r.suppressed_cells
    );
    write_file(&a.out, |w| write_histogram(&r.released, w))?;
    fs::write(
        &ledger_path,
        format!("adjacency={}\n{}\n", r.ledger.adjacency(), r.ledger.render()),
    )?;
    fs::write(
        &run_path,
        format!("mechanism,epsilon,clip,seed,total_cells,suppressed\n{run_line}\n"),
    )?;

    m.set("seed", config.rng_seed);
    m.set("ledger_total", r.total_epsilon);
    m.output("histogram", &a.out);
    m.output("ledger", &ledger_path);
    m.output("run", &run_path);
    m.write(&with_suffix(&a.out, ".manifest"))?;
    println!("{run_line}");
    Ok(())
}

fn cmd_eval(a: EvalArgs, mut m: Manifest) -> Result<()> {
    let (data, released) = if let Some(path) = &a.config {
        let mut config = load_config(path, &mut m)?;
        if let Some(seed) = a.seed {
            config.rng_seed = seed;
        }
        let data = load_records(&a.data, config.dims, &mut m, "data")?;
        let opts = if a.test_mode {
            RunOptions::test_mode()
        } else {
            RunOptions::evaluation()
        };
        let r = release(&data, &config, opts)?;
        m.set("seed", config.rng_seed);
        m.set("test_mode", a.test_mode);
        m.set("ledger_total", r.total_epsilon);
        (data, r.released)
    } else {
        let path = a.released.as_ref().expect("clap requires --released or --config");
        let dims = a.domain.dims()?;
        let bytes = read_bytes(path)?;
        m.hash_input("released", path, &bytes);
        let released = read_histogram(&bytes[..], dims)?;
        (load_records(&a.data, dims, &mut m, "data")?, released)
    };
    let truth = ground_truth(&data)?;
    let report = weighted_relative_error(&truth, &released, a.min_devices)?;
    let rendered = report.render();
    m.set("min_devices", a.min_devices);
    if let Some(out) = &a.out {
        let cells = with_suffix(out, ".cells.csv");
        fs::write(out, &rendered)?;
        write_file(&cells, |w| {
            report.write_diagnostics(if a.duration_minutes { 60.0 } else { 1.0 }, w)
        })?;
        m.output("report", out);
        m.output("cells", &cells);
        m.write(&with_suffix(out, ".manifest"))?;
    }
    print!("{rendered}");
    Ok(())
}

fn cmd_sweep(a: SweepArgs, mut m: Manifest) -> Result<()> {
    let dims = a.domain.dims()?;
    let mut cfg = match &a.config {
        Some(path) => {
            let bytes = read_bytes(path)?;
            m.hash_input("sweep_config", path, &bytes);
            SweepConfig::from_key_values(&KeyValues::parse(&text(&bytes, path)?)?)?
        }
        None => SweepConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(n) = a.min_devices {
        cfg.min_devices = n;
    }
    if a.test_mode {
        cfg.mode = NoiseMode::Test;
    }
    let data = load_records(&a.data, dims, &mut m, "data")?;
    let table = match &a.proxy {
        Some(path) => {
            let proxy = load_records(path, dims, &mut m, "proxy")?;
            sweep(&data, &proxy, &cfg)?
        }
        None => {
            eprintln!("warning: --unsafe-fit tunes hyperparameters on the evaluation data; results are not private");
            let params = FittedParams::fit(&data, cfg.quantile)?;
            sweep_with_params(&data, &params, &cfg)?
        }
    };

    fs::create_dir_all(&a.out_dir)?;
    let out = |name: &str| a.out_dir.join(name);
    let summary = table.summary();
    write_file(&out("rows.csv"), |w| table.write_rows(w))?;
    write_file(&out("summary.csv"), |w| write_summary(&summary, w))?;
    write_file(&out("plot.csv"), |w| write_plot_data(&summary, w))?;
    let report_eps = if cfg.epsilons.contains(&2.0) {
        2.0
    } else {
        cfg.epsilons[0]
    };
    let rendered = render_table(&summary, report_eps);
    fs::write(out("table.txt"), &rendered)?;
    let p = &table.params;
    let list = |xs: &[f64]| xs.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
    fs::write(
        out("params.txt"),
        format!(
            "scales={}\nscaled_clip={}\njoint_clip={}\nslice_clips={}\n",
            list(p.scales.entries()),
            p.scaled_clip,
            p.joint_clip,
            list(&p.slice_clips)
        ),
    )?;

    m.set("seed", cfg.seed);
    m.set("repeats", cfg.repeats);
    m.set("epsilons", list(&cfg.epsilons));
    m.set("min_devices", cfg.min_devices);
    m.set("test_mode", a.test_mode);
    m.set("unsafe_fit", a.unsafe_fit);
    m.set("ledger_total", "per run (each run spends its grid epsilon)");
    for name in ["rows.csv", "summary.csv", "plot.csv", "table.txt", "params.txt"] {
        m.output(name.split('.').next().unwrap_or(name), &out(name));
    }
    m.write(&out("manifest"))?;
    print!("{rendered}");
    Ok(())
}

fn cmd_report(a: ReportArgs, mut m: Manifest) -> Result<()> {
    let bytes = read_bytes(&a.rows)?;
    m.hash_input("rows", &a.rows, &bytes);
    let rows = read_rows(&text(&bytes, &a.rows)?)?;
    let summary = summarize(&rows);
    let rendered = render_table(&summary, a.epsilon);
    if let Some(plot) = &a.plot {
        write_file(plot, |w| write_plot_data(&summary, w))?;
        m.output("plot", plot);
    }
    if let Some(out) = &a.out {
        fs::write(out, &rendered)?;
        m.output("table", out);
        m.write(&with_suffix(out, ".manifest"))?;
    }
    print!("{rendered}");
    Ok(())
}

fn run(cli: Cli, args: &[String]) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let name = match &cli.command {
        Command::Generate(_) => "generate",
        Command::Fit(_) => "fit",
        Command::Release(_) => "release",
        Command::Eval(_) => "eval",
        Command::Sweep(_) => "sweep",
        Command::Report(_) => "report",
    };
    let mut line = vec!["dpgb".to_string()];
    line.extend(args.iter().skip(1).cloned());
    let m = Manifest::new(name, &line);
    match cli.command {
        Command::Generate(a) => cmd_generate(a, m),
        Command::Fit(a) => cmd_fit(a, m),
        Command::Release(a) => cmd_release(a, m),
        Command::Eval(a) => cmd_eval(a, m),
        Command::Sweep(a) => cmd_sweep(a, m),
        Command::Report(a) => cmd_report(a, m),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) => 2,
        Error::BudgetExceeded { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli, &args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                Error::BudgetExceeded { message, ledger } => {
                    eprintln!("error: privacy budget exceeded: {message}\nledger:\n{ledger}")
                }
                Error::Config(_) | Error::Parse { .. } => eprintln!("error: {e}\nsee `dpgb --help` for usage"),
                _ => eprintln!("error: {e}"),
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
