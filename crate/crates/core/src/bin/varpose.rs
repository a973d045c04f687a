use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use varpose::harness::{run_experiment, sweep, write_sweep_csv, ExperimentConfig, HarnessError, Preset, SweepAxis};
use varpose::velocity::VelocitySource;

#[derive(Parser)]
#[command(name = "varpose", version, about = "Rigid-body pose and velocity estimation experiments")]
struct Cli {
    /// Print the CASE 1 preset as a config file and exit.
    #[arg(long)]
    print_default_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args)]
struct Base {
    /// TOML file layered over the preset; any field may be omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "case1")]
    preset: Preset,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write trace.csv, truth.csv and summary.toml.
    Run {
        #[command(flatten)]
        base: Base,
        #[arg(long)]
        seed: Option<u64>,
        /// Bump-noise width on beacon positions, in metres.
        #[arg(long)]
        noise_width: Option<f64>,
        #[arg(long)]
        velocity_source: Option<VelocitySource>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the cartesian product of the given field values.
    Sweep {
        #[command(flatten)]
        base: Base,
        /// FIELD=v1,v2,... with a dotted field path, e.g. gains.kappa=0.1,1,10.
        #[arg(long, required = true)]
        vary: Vec<SweepAxis>,
        /// Directory for per-cell outputs and sweep.csv; without it the table goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(base: &Base) -> Result<ExperimentConfig, HarnessError> {
    match &base.config {
        Some(path) => ExperimentConfig::load(path, base.preset),
        None => Ok(ExperimentConfig::preset(base.preset)),
    }
}

fn execute(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Run {
            base,
            seed,
            noise_width,
            velocity_source,
            out,
        } => {
            let mut cfg = load(&base)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(w) = noise_width {
                cfg.sensors.noise_width = w;
            }
            if let Some(v) = velocity_source {
                cfg.velocity_source = v;
            }
            if out.is_some() {
                cfg.output = out;
            }
            cfg.validate()?;
            let report = run_experiment(&cfg)?;
            print!("{}", toml::to_string_pretty(&report.summary).expect("summary is serialisable"));
            Ok(())
        }
        Command::Sweep { base, vary, out } => {
            let mut cfg = load(&base)?;
            if out.is_some() {
                cfg.output = out;
            }
            let cells = sweep(&cfg, &vary)?;
            match &cfg.output {
                Some(dir) => {
                    std::fs::create_dir_all(dir)?;
                    write_sweep_csv(std::fs::File::create(dir.join("sweep.csv"))?, &cells)?;
                }
                None => write_sweep_csv(std::io::stdout().lock(), &cells)?,
            }
            let failed = cells.iter().filter(|c| c.outcome.is_err()).count();
            if failed > 0 {
                eprintln!("{failed} of {} cells failed", cells.len());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.print_default_config {
        print!("{}", ExperimentConfig::preset(Preset::Case1).to_toml());
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        eprintln!("no command given; see --help");
        return ExitCode::from(2);
    };
    match execute(command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
