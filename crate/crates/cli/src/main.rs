//! Command-line front end: dataset generation, training, evaluation,
//! complexity accounting and self-checks.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use subband_dbp::experiment::{
    evaluate, fd_baseline_rms, generate_dataset, load_checkpoint, load_dataset, rm_report, rm_report_for_counts,
    save_checkpoint, save_dataset, selftest, train_all, write_curve_csv, write_results_csv, ExperimentConfig,
    RmReport, Scale,
};
use subband_dbp::engine::EngineLayout;
use subband_dbp::{Error, Result};

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  a self-test check failed or a numerical step broke down
  2  bad configuration, arguments or unknown flags
  3  digest mismatch between configuration, dataset and checkpoint
  4  I/O error, missing or malformed file";

#[derive(Parser, Debug)]
#[command(name = "subband-dbp", version, about = "Subband time-domain digital backpropagation experiments", after_help = EXIT_CODES)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Experiment configuration (TOML); defaults to the --scale preset.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Directory for datasets, checkpoints and CSV outputs.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Override the configuration's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Preset used when no --config is given.
    #[arg(long, global = true, value_enum, default_value = "desk")]
    scale: ScaleArg,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ScaleArg {
    Desk,
    Paper,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the dataset and write DIR/dataset.sdbp.
    GenData,
    /// Train one engine per training power; writes DIR/checkpoint.sdbp and DIR/curves_p<power>.csv.
    Train,
    /// SNR of every configured method over the test powers; writes DIR/results.csv.
    Eval,
    /// Real multiplications per subband and step, with the frequency-domain comparison.
    Complexity(ComplexityArgs),
    /// Filter-bank reconstruction, gradient and step-lock checks.
    Selftest,
    /// Print the effective configuration as TOML.
    ShowConfig,
}

#[derive(Args, Debug)]
struct ComplexityArgs {
    /// Total MIMO nonzeros to account instead of a trained checkpoint.
    #[arg(long)]
    nonzeros: Option<usize>,
    /// Filter memory D of the frequency-domain overlap scheme.
    #[arg(long, default_value_t = 13)]
    fd_memory: usize,
}

fn load_config(g: &Global) -> Result<ExperimentConfig> {
    let mut config = match &g.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::preset(match g.scale {
            ScaleArg::Desk => Scale::Desk,
            ScaleArg::Paper => Scale::Paper,
        }),
    };
    if let Some(seed) = g.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn out_file(g: &Global, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(&g.out)?;
    Ok(g.out.join(name))
}

fn gen_data(g: &Global, config: &ExperimentConfig) -> Result<()> {
    let path = out_file(g, "dataset.sdbp")?;
    if path.exists() && !g.force {
        return Err(exists(&path));
    }
    let data = generate_dataset(config)?;
    save_dataset(&path, &data, g.force)?;
    println!("{} records -> {}", data.records.len(), path.display());
    println!("data digest {}", data.digest);
    Ok(())
}

fn train(g: &Global, config: &ExperimentConfig) -> Result<()> {
    let data = read(&g.out.join("dataset.sdbp"), load_dataset)?;
    let ck_path = out_file(g, "checkpoint.sdbp")?;
    if ck_path.exists() && !g.force {
        return Err(exists(&ck_path));
    }
    let ck = train_all(config, &data)?;
    for m in &ck.models {
        write_curve_csv(&g.out.join(format!("curves_p{}.csv", m.meta.power_dbm)), &m.curve, g.force)?;
        println!(
            "{:>6} dBm  validation {:6.2} dB dense, {:6.2} dB sparse  ({} of {} MIMO coefficients)",
            m.meta.power_dbm, m.meta.dense_val_snr_db, m.meta.sparse_val_snr_db, m.meta.nonzeros, m.meta.capacity
        );
    }
    save_checkpoint(&ck_path, config, &ck, g.force)?;
    println!("checkpoint -> {}", ck_path.display());
    Ok(())
}

fn eval(g: &Global, config: &ExperimentConfig) -> Result<()> {
    let data = read(&g.out.join("dataset.sdbp"), load_dataset)?;
    let ck_path = g.out.join("checkpoint.sdbp");
    let needs_ck = config.eval.methods.iter().any(|m| m.name().starts_with("subband"));
    let ck = if needs_ck { Some(read(&ck_path, load_checkpoint)?) } else { None };
    let csv = out_file(g, "results.csv")?;
    if csv.exists() && !g.force {
        return Err(exists(&csv));
    }
    let rows = evaluate(config, &data, ck.as_ref())?;
    println!("{:>9}  {:<20} {:>8}", "power_dbm", "method", "snr_db");
    for r in &rows {
        println!("{:>9}  {:<20} {:>8.2}", r.power_dbm, r.method.name(), r.snr_db);
    }
    write_results_csv(&csv, &rows, g.force)?;
    println!("results -> {}", csv.display());
    Ok(())
}

fn print_report(label: &str, r: &RmReport) {
    println!(
        "{label}: {} steps, {} of {} MIMO coefficients; RMs per subband and step: CD {:.1} + MIMO {:.1} = {:.1}",
        r.n_steps,
        r.mimo_nonzeros,
        r.mimo_capacity,
        r.cd_rm_per_subband_step,
        r.mimo_rm_per_subband_step,
        r.total_rm_per_subband_step
    );
}

fn complexity(g: &Global, config: &ExperimentConfig, args: &ComplexityArgs) -> Result<()> {
    let layout = EngineLayout::new(&config.engine, config.base_rate(), &config.fiber)?;
    let ck_path = g.out.join("checkpoint.sdbp");
    let mut reports = Vec::new();
    if let Some(n) = args.nonzeros {
        reports.push((format!("{n} nonzeros"), rm_report_for_counts(&layout, &[n])?));
    } else if ck_path.exists() {
        for m in read(&ck_path, load_checkpoint)?.models {
            reports.push((format!("model {} dBm", m.meta.power_dbm), rm_report(&m.sparse, &m.sparse.layout.plan)?));
        }
    } else {
        let dense = rm_report_for_counts(&layout, &[0])?.mimo_capacity;
        reports.push(("dense MIMO".to_string(), rm_report_for_counts(&layout, &[dense])?));
    }
    println!("step plan: {} steps, delta {:.2} km, residual {:.2} km", layout.n_steps(), layout.plan.delta_km, layout.plan.residual_km);
    for (label, r) in &reports {
        print_report(label, r);
    }
    println!("frequency-domain subband processing, memory D = {}:", args.fd_memory);
    println!("{:>6} {:>10}", "fft_n", "rms");
    let mut best: Option<(usize, f64)> = None;
    for k in 4..=12 {
        let n = 1usize << k;
        if n <= args.fd_memory {
            continue;
        }
        let rms = fd_baseline_rms(n, args.fd_memory)?;
        println!("{n:>6} {rms:>10.1}");
        if best.is_none_or(|(_, b)| rms < b) {
            best = Some((n, rms));
        }
    }
    if let Some((n, rms)) = best {
        println!("optimum n = {n}: {rms:.1} RMs");
        if let Some((_, r)) = reports.first() {
            println!("time-domain {:.1} vs frequency-domain {rms:.1} RMs per subband and step", r.total_rm_per_subband_step);
        }
    }
    Ok(())
}

fn run_selftest(config: &ExperimentConfig) -> Result<bool> {
    let checks = selftest(config)?;
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(checks.iter().all(|c| c.passed))
}

/// Load an artifact, naming the file in I/O errors.
fn read<T>(path: &Path, load: impl FnOnce(&Path) -> Result<T>) -> Result<T> {
    load(path).map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    })
}

fn exists(path: &Path) -> Error {
    Error::Io(std::io::Error::new(
        std::io::ErrorKind::AlreadyExists,
        format!("{} exists (use --force to overwrite)", path.display()),
    ))
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Inconsistent(_) | Error::Aliasing { .. } => 2,
        Error::DigestMismatch { .. } => 3,
        Error::Io(_) | Error::Format(_) => 4,
        _ => 1,
    }
}

fn run(cli: &Cli) -> Result<bool> {
    let g = &cli.global;
    if let Some(n) = g.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    let config = load_config(g)?;
    match &cli.command {
        Command::GenData => gen_data(g, &config)?,
        Command::Train => train(g, &config)?,
        Command::Eval => eval(g, &config)?,
        Command::Complexity(args) => complexity(g, &config, args)?,
        Command::Selftest => return run_selftest(&config),
        Command::ShowConfig => print!("{}", config.to_toml()),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
