use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qmotor::cli::{preset, run, ExperimentConfig, Scale, EXIT_OK, EXIT_VALIDATION, PRESET_NAMES};

const EXIT_CODES: &str = "Exit codes:\n  0  success\n  1  invalid configuration (message names the field and line)\n  2  numerical failure at one or more parameter points (others still complete) or output failure";

#[derive(Parser)]
#[command(name = "qmotor", version, about = "Floquet and direct-propagation analysis of a two-atom ac-driven ring motor", after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON configuration file.
    Run { config: PathBuf },
    /// Run a named figure preset.
    Preset {
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "desk")]
        scale: Scale,
        /// Print the resolved configuration instead of running it.
        #[arg(long)]
        print: bool,
    },
    /// List the available presets.
    ListPresets,
}

fn execute(config: &ExperimentConfig) -> i32 {
    match run(config) {
        Ok(outcome) => {
            for p in outcome.points.iter().filter(|p| !p.ok) {
                eprintln!("point {} failed: {}", p.point, p.error.as_deref().unwrap_or("unknown"));
            }
            println!("wrote {} files, manifest {}", outcome.files.len(), outcome.manifest.display());
            outcome.exit_code()
        }
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

fn main() -> ExitCode {
    ExitCode::from(dispatch(Cli::parse()) as u8)
}

fn dispatch(cli: Cli) -> i32 {
    match cli.command {
        Command::Run { config } => {
            let text = match std::fs::read_to_string(&config) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("cannot read {}: {e}", config.display());
                    return EXIT_VALIDATION;
                }
            };
            match ExperimentConfig::parse(&text) {
                Ok(c) => execute(&c),
                Err(e) => {
                    eprintln!("{}: {e}", config.display());
                    EXIT_VALIDATION
                }
            }
        }
        Command::Preset { name, out, scale, print } => {
            let Some(mut c) = preset(&name, scale) else {
                eprintln!("unknown preset {name}; available: {}", PRESET_NAMES.join(", "));
                return EXIT_VALIDATION;
            };
            if let Some(out) = out {
                c.output = out;
            }
            if print {
                println!("{}", c.to_json());
                return EXIT_OK;
            }
            execute(&c)
        }
        Command::ListPresets => {
            for s in [Scale::Desk, Scale::Full] {
                for c in qmotor::cli::presets(s) {
                    println!("{:<6} {:<5} {}", c.name, format!("{s:?}").to_lowercase(), describe(&c));
                }
            }
            EXIT_OK
        }
    }
}

fn describe(c: &ExperimentConfig) -> String {
    use qmotor::cli::Experiment::*;
    let m = &c.model;
    let kind = match &c.experiment {
        ThetaScan { thetas, horizon, .. } => format!("theta scan, {} points, {horizon}T", thetas.values().len()),
        T0DispersionScan { sizes, horizon, .. } => format!("dispersion over L = {sizes:?}, {horizon}T"),
        LoadScan { q, r, .. } => format!("load scan, {} q values, r = {r}", q.len()),
        Trace { periods, .. } => format!("trace, {periods}T"),
        Spectrum { thetas, .. } => format!("spectra at {} theta values", thetas.values().len()),
        CrossingScan { thetas, .. } => format!("crossing scan, {} points", thetas.values().len()),
    };
    format!("{kind}; L={} omega={} A1={} A2={} W={}", m.l, m.omega, m.a1, m.a2, m.w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn code(args: &[&str]) -> i32 {
        dispatch(Cli::try_parse_from(std::iter::once("qmotor").chain(args.iter().copied())).unwrap())
    }

    #[test]
    fn exit_codes() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.json");
        let mut c = preset("fig2", Scale::Desk).unwrap();
        c.output = dir.path().join("out");
        let text = c.to_json().replace("\"samples_per_period\": 128", "\"samples_per_period\": 31");
        std::fs::write(&bad, text).unwrap();
        assert_eq!(code(&["run", bad.to_str().unwrap()]), EXIT_VALIDATION);
        assert_eq!(code(&["run", dir.path().join("missing.json").to_str().unwrap()]), EXIT_VALIDATION);
        assert_eq!(code(&["preset", "nope"]), EXIT_VALIDATION);
        assert_eq!(code(&["preset", "fig6", "--print"]), EXIT_OK);
        assert_eq!(code(&["list-presets"]), EXIT_OK);
        assert!(Cli::try_parse_from(["qmotor", "preset", "fig3", "--scale", "huge"]).is_err());
    }
}
