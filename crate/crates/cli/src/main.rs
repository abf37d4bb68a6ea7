use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use adiabat::{Error, Result};
use adiabat_cli::config::{parse_config, RunConfig};
use adiabat_cli::{error_json, exit_code, presets, run};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "adiabat",
    version,
    about = "Design and verify robust adiabatic control pulses"
)]
struct Cli {
    /// Worker threads for ensemble evaluation (0 = all cores).
    #[arg(long, global = true, env = "ADIABAT_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file or preset name.
    config: String,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a pulse and run the configured simulations.
    Optimize(ConfigArgs),
    /// Run the train, multi-spin, selectivity and Bloch blocks on a pulse.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// pulse.json or waveform CSV.
        #[arg(long)]
        pulse: PathBuf,
    },
    /// Run the Rabi and offset sweeps on a pulse.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// pulse.json or waveform CSV.
        #[arg(long)]
        pulse: PathBuf,
    },
    /// Sample a stored pulse as a waveform CSV.
    Export {
        /// pulse.json or waveform CSV.
        pulse: PathBuf,
        /// Uniform time samples including both endpoints.
        #[arg(long, default_value_t = 1001)]
        samples: usize,
        #[arg(long, default_value = "waveform.csv")]
        out: PathBuf,
    },
    /// List the built-in presets, or print one resolved.
    Presets { name: Option<String> },
}

fn load(a: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = run::load_config(&a.config)?;
    if let Some(o) = &a.out {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<serde_json::Value> {
    #[cfg(feature = "parallel")]
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| Error::config("threads", e.to_string()))?;
    }
    match cli.command {
        Command::Optimize(a) => run::optimize_cmd(&load(&a)?),
        Command::Simulate { cfg, pulse } => run::simulate_cmd(&load(&cfg)?, &pulse),
        Command::Sweep { cfg, pulse } => run::sweep_cmd(&load(&cfg)?, &pulse),
        Command::Export {
            pulse,
            samples,
            out,
        } => run::export_cmd(&pulse, samples, &out),
        Command::Presets { name: None } => Ok(serde_json::json!({ "presets": presets::names() })),
        Command::Presets { name: Some(n) } => {
            let text = presets::get(&n)
                .ok_or_else(|| Error::config("<preset>", format!("unknown preset `{n}`")))?;
            Ok(serde_json::to_value(parse_config(text)?.resolved()?)?)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(v) => {
            let _ = writeln!(
                std::io::stdout(),
                "{}",
                serde_json::to_string_pretty(&v).expect("summary serializes")
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
