use clap::{Parser, Subcommand, ValueEnum};
use polent_cli::commands;
use polent_cli::output::{emit, Format};
use polent_cli::{CliError, Scenario};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "polent", version, about = "Polarization-entangled pair source simulator")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
    /// Scenario file (TOML).
    #[arg(long, global = true, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Bundled scenario: paper-repro-ent, paper-repro-ref or ideal.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<FormatArg>,
    /// Subtract measured accidentals before reconstruction.
    #[arg(long, global = true)]
    subtract_accidentals: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Verb {
    /// Emitted density matrix and entanglement metrics.
    State,
    /// Sampled count records for every projection setting.
    Counts,
    /// Reconstruct the state from a count CSV (simulated when omitted).
    Tomo {
        #[arg(long)]
        counts: Option<PathBuf>,
    },
    /// FWM conversion spectra of both modes.
    Fwm,
    /// Analyzer transmission fringe and its fit.
    Fringe {
        #[arg(long)]
        wavelength_nm: Option<f64>,
    },
    /// Device-state metrics over a parameter sweep.
    Sweep {
        /// Dotted scenario path, e.g. layout.spr.insertion_loss_db.
        #[arg(long)]
        param: Option<String>,
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Option<Vec<f64>>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut scenario = match (&cli.config, &cli.preset) {
        (Some(path), _) => Scenario::load(path)?,
        (None, Some(name)) => Scenario::preset(name)?,
        (None, None) => return Err(CliError::Config(vec!["pass --config PATH or --preset NAME".into()])),
    };
    if let Some(seed) = cli.seed {
        scenario.seed = Some(seed);
    }
    scenario.validate()?;
    for w in scenario.warnings() {
        eprintln!("warning: {w}");
    }
    let format = |default| match cli.format {
        Some(FormatArg::Json) => Format::Json,
        Some(FormatArg::Csv) => Format::Csv,
        None => default,
    };
    let artifacts = match &cli.verb {
        Verb::State => commands::cmd_state(&scenario, format(Format::Json))?,
        Verb::Counts => commands::cmd_counts(&scenario, format(Format::Csv))?,
        Verb::Tomo { counts } => {
            let records = match counts {
                Some(path) => {
                    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
                    commands::parse_records(&text)?
                }
                None => commands::simulate_counts(&scenario)?,
            };
            commands::cmd_tomo(&scenario, records, cli.subtract_accidentals, format(Format::Json))?
        }
        Verb::Fwm => commands::cmd_fwm(&scenario)?,
        Verb::Fringe { wavelength_nm } => commands::cmd_fringe(&scenario, *wavelength_nm)?,
        Verb::Sweep { param, values } => commands::cmd_sweep(&scenario, param.as_deref(), values.as_deref())?,
    };
    emit(&artifacts, cli.out.as_deref())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
