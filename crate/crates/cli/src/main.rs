use clap::{Args, Parser, Subcommand};
use koopmon::checkpoint;
use koopmon::dynamics::{generate_trajectory, StateVector};
use koopmon::monitor::{run_monitoring_full, MonitoringConfig};
use koopmon::seeding;
use koopmon_cli::config::{dump_config, load_config, LoadedConfig};
use koopmon_cli::output::{emit_run, emit_sweep, write_atomic};
use koopmon_cli::sweep::run_sweep;
use koopmon_cli::{CliError, CliResult};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "koopmon",
    about = "Split Koopman autoencoder learning over a simulated wireless link",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flag overrides; every flag mirrors a config key and wins over the file.
#[derive(Args, Debug, Default)]
struct Overrides {
    #[arg(long)]
    master_seed: Option<u64>,
    #[arg(long)]
    phase1_duration_s: Option<f64>,
    #[arg(long)]
    phase2_duration_s: Option<f64>,
    #[arg(long)]
    resync_interval: Option<usize>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    tx_power_watts: Option<f64>,
    #[arg(long)]
    distance_m: Option<f64>,
    #[arg(long)]
    pathloss_exp: Option<f64>,
    #[arg(long)]
    noise_variance_w: Option<f64>,
    #[arg(long)]
    fading_floor: Option<f64>,
    #[arg(long)]
    feedback_noisy: Option<bool>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    prediction_depth: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

impl Overrides {
    fn apply(&self, cfg: &mut MonitoringConfig) {
        macro_rules! set {
            ($field:expr, $value:expr) => {
                if let Some(v) = $value {
                    $field = v;
                }
            };
        }
        set!(cfg.master_seed, self.master_seed);
        set!(cfg.phase1_duration_s, self.phase1_duration_s);
        set!(cfg.phase2_duration_s, self.phase2_duration_s);
        set!(cfg.resync_interval, self.resync_interval);
        set!(cfg.latent_dim, self.latent_dim);
        set!(cfg.channel.tx_power, self.tx_power_watts);
        set!(cfg.channel.distance_m, self.distance_m);
        set!(cfg.channel.pathloss_exp, self.pathloss_exp);
        set!(cfg.channel.noise_variance, self.noise_variance_w);
        set!(cfg.channel.fading_floor, self.fading_floor);
        set!(cfg.channel.feedback_noisy, self.feedback_noisy);
        set!(cfg.train.epochs, self.epochs);
        set!(cfg.train.batch_size, self.batch_size);
        set!(cfg.train.prediction_depth, self.prediction_depth);
        set!(cfg.train.learning_rate, self.learning_rate);
    }
}

#[derive(Args, Debug)]
struct OutDir {
    /// Output directory (defaults to $KOOPMON_OUT_DIR or ./out).
    #[arg(long, env = "KOOPMON_OUT_DIR", default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a plant trajectory and write it as CSV.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Simulated duration in seconds (defaults to the phase-1 duration).
        #[arg(long)]
        duration_s: Option<f64>,
        #[command(flatten)]
        out: OutDir,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// One full two-phase monitoring run.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Print the fully-resolved configuration instead of running.
        #[arg(long)]
        dump_config: bool,
        #[command(flatten)]
        out: OutDir,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Grid sweep over latent dimensions, powers, periods and seeds.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Worker pool size (defaults to the number of CPUs).
        #[arg(long)]
        jobs: Option<usize>,
        #[command(flatten)]
        out: OutDir,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Summarize a model checkpoint: shapes, spectrum, statistics.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn load_run_config(path: Option<&Path>, overrides: &Overrides) -> CliResult<MonitoringConfig> {
    let mut cfg = match load_config(path)? {
        LoadedConfig::Run(cfg) => cfg,
        LoadedConfig::Sweep(spec) => spec.base,
    };
    overrides.apply(&mut cfg);
    cfg.validate().map_err(CliError::from)?;
    Ok(cfg)
}

fn cmd_simulate(
    config: Option<&Path>,
    duration_s: Option<f64>,
    out: &Path,
    overrides: &Overrides,
) -> CliResult<()> {
    let cfg = load_run_config(config, overrides)?;
    let duration = duration_s.unwrap_or(cfg.phase1_duration_s);
    let n_steps = (duration / cfg.plant.dt).round() as usize;
    let initial = StateVector::from_slice(&cfg.plant.initial_state)?;
    let noise = koopmon::dynamics::NoiseConfig {
        rng_seed: seeding::mix(&[cfg.master_seed, seeding::label_hash("plant")]),
        ..cfg.plant.noise
    };
    let traj = generate_trajectory(&initial, n_steps, cfg.plant.dt, &cfg.plant.params, &noise)?;
    let mut buf = Vec::new();
    traj.write_csv(&mut buf)?;
    let path = out.join("trajectory.csv");
    write_atomic(&path, &buf)?;
    println!(
        "wrote {} ({} samples over {duration} s)",
        path.display(),
        traj.len()
    );
    Ok(())
}

fn cmd_run(config: Option<&Path>, dump: bool, out: &Path, overrides: &Overrides) -> CliResult<()> {
    let cfg = load_run_config(config, overrides)?;
    if dump {
        print!("{}", dump_config(&cfg)?);
        return Ok(());
    }
    let (result, model) = run_monitoring_full(&cfg).map_err(CliError::from)?;
    emit_run(&result, out)?;
    let mut ckpt = Vec::new();
    checkpoint::save(&model, &mut ckpt)?;
    write_atomic(&out.join("model.json"), &ckpt)?;
    println!(
        "rmse = {:.6} ({:.2} dB), epochs = {}, phase-1 transmissions = {}, phase-2 transmissions = {}",
        result.rmse,
        result.rmse_db,
        result.epochs_ran,
        result.transmissions_phase1,
        result.transmissions_phase2
    );
    println!("artifacts in {}", out.display());
    Ok(())
}

fn cmd_sweep(
    config: Option<&Path>,
    jobs: Option<usize>,
    out: &Path,
    overrides: &Overrides,
) -> CliResult<()> {
    let mut spec = match load_config(config)? {
        LoadedConfig::Sweep(spec) => spec,
        LoadedConfig::Run(base) => koopmon_cli::config::SweepSpec {
            base,
            latent_dims: vec![1, 2, 3, 4],
            tx_powers_watts: vec![0.1, 1.0, 10.0, 100.0],
            training_periods_s: vec![350.0],
            seeds: vec![0, 1, 2, 3, 4],
        },
    };
    overrides.apply(&mut spec.base);
    let outcome = run_sweep(&spec, jobs)?;
    emit_sweep(&outcome, out)?;
    for failure in &outcome.failures {
        eprintln!("warning: {failure}");
    }
    println!(
        "{} cells ({} failed), results in {}",
        outcome.table.rows.len(),
        outcome.failures.len(),
        out.display()
    );
    Ok(())
}

fn cmd_inspect(path: &Path) -> CliResult<()> {
    let model = checkpoint::load_path(path)?;
    println!("checkpoint: {}", path.display());
    println!(
        "  state dim D = {}, latent dim q = {}",
        model.state_dim(),
        model.latent_dim()
    );
    let dims = |net: &koopmon::neural::DenseNet| -> Vec<usize> {
        let mut d = vec![net.in_dim()];
        d.extend(net.layers().iter().map(|l| l.out_dim()));
        d
    };
    println!("  encoder: {:?}", dims(&model.encoder));
    println!("  decoder: {:?}", dims(&model.decoder));
    println!("  spectral radius: {:.6}", model.spectral_radius());
    for (i, eig) in model.koopman_spectrum()?.iter().enumerate() {
        println!(
            "  eigenvalue {i}: {:.6} {:+.6}i  (|.| = {:.6})",
            eig.re,
            eig.im,
            eig.norm()
        );
    }
    let stats = |name: &str, s: &koopmon::koopman::NormStats| {
        println!(
            "  {name}: mean = {:?}, scale = {:?}",
            s.mean.as_slice().unwrap_or(&[]),
            s.scale.as_slice().unwrap_or(&[])
        );
    };
    stats("state stats", &model.state_norm);
    stats("latent stats", &model.latent_norm);
    Ok(())
}

fn run_cli(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate {
            config,
            duration_s,
            out,
            overrides,
        } => cmd_simulate(config.as_deref(), duration_s, &out.out, &overrides),
        Command::Run {
            config,
            dump_config,
            out,
            overrides,
        } => cmd_run(config.as_deref(), dump_config, &out.out, &overrides),
        Command::Sweep {
            config,
            jobs,
            out,
            overrides,
        } => cmd_sweep(config.as_deref(), jobs, &out.out, &overrides),
        Command::Inspect { checkpoint } => cmd_inspect(&checkpoint),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run_cli(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ CliError::Config(_)) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
        Err(e @ CliError::Runtime(_)) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
    }
}
