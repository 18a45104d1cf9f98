//! Command-line front end: `dyadic <scenario> [--config <path>] [--out <dir>]
//! [--seed <u64>] [--set section.key=value ...]`.
//!
//! Exit codes: 0 success, 2 validation error, 3 numerical failure.

use dyadic_core::certificate::CertificateError;
use dyadic_core::harness::config::{parse_config_with_overrides, ScenarioKind};
use dyadic_core::harness::scenario::{run_scenario, HarnessError};
use dyadic_core::integrator::IntegratorError;
use std::path::PathBuf;
use std::process::ExitCode;

const USAGE: &str = "\
usage: dyadic <scenario> [--config <path>] [--out <dir>] [--seed <u64>]
              [--set section.key=value ...]

scenarios:
  simulate              integrate one configured system and record series
  regularity            weighted sup-norm bound check on a Galerkin run
  decay                 long-horizon run with a power-law fit of the sup norm
  scaling               solution-family rescaling invariance check
  energy-balance        telescoped flux and drain-identity residuals
  onsager               shellwise dissipation integrals
  galerkin-convergence  weak-distance ladder across truncation orders
  certificate           closed-form envelope verification report

The config file is a flat sectioned `key = value` text format; every key has
a default, so `dyadic <scenario>` alone runs the stock experiment. Values set
with --set override the file. Output defaults to ./out.

Stock truncation sizes respect the explicit stiffness budget (shells <= 12
for horizons past t = 1); deeper Galerkin orders need
[integrator] stepper = exponential. DYADIC_THREADS caps ladder concurrency.
";

struct CliArgs {
    scenario: ScenarioKind,
    config_path: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    seed: Option<u64>,
    sets: Vec<(String, String)>,
}

fn parse_args(args: &[String]) -> Result<Option<CliArgs>, String> {
    if args.is_empty() || args[0] == "--help" || args[0] == "-h" {
        return Ok(None);
    }
    if args[0] == "--version" {
        println!("dyadic {}", env!("CARGO_PKG_VERSION"));
        std::process::exit(0);
    }
    let scenario = ScenarioKind::parse(&args[0]).ok_or_else(|| {
        format!(
            "unknown scenario '{}' (expected one of: {})",
            args[0],
            ScenarioKind::ALL.map(|s| s.name()).join(", ")
        )
    })?;
    let mut cli = CliArgs {
        scenario,
        config_path: None,
        out_dir: None,
        seed: None,
        sets: Vec::new(),
    };
    let mut i = 1;
    while i < args.len() {
        let flag = args[i].clone();
        let mut value = || -> Result<String, String> {
            i += 1;
            args.get(i)
                .cloned()
                .ok_or_else(|| format!("{flag} needs a value"))
        };
        match flag.as_str() {
            "--config" => cli.config_path = Some(PathBuf::from(value()?)),
            "--out" => cli.out_dir = Some(PathBuf::from(value()?)),
            "--seed" => {
                let v = value()?;
                cli.seed = Some(v.parse().map_err(|_| format!("invalid seed '{v}'"))?);
            }
            "--set" => {
                let v = value()?;
                let (key, val) = v
                    .split_once('=')
                    .ok_or_else(|| format!("--set expects key=value, got '{v}'"))?;
                cli.sets
                    .push((key.trim().to_string(), val.trim().to_string()));
            }
            other => return Err(format!("unknown argument '{other}'")),
        }
        i += 1;
    }
    Ok(Some(cli))
}

fn exit_code_for(err: &HarnessError) -> u8 {
    match err {
        HarnessError::Invalid(_) | HarnessError::Model(_) => 2,
        HarnessError::Integrator(IntegratorError::InvalidConfig(_))
        | HarnessError::Integrator(IntegratorError::EmptySpan { .. }) => 2,
        HarnessError::Certificate(CertificateError::Domain { .. }) => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cli = match parse_args(&args) {
        Ok(Some(cli)) => cli,
        Ok(None) => {
            print!("{USAGE}");
            return ExitCode::from(if args.is_empty() { 2 } else { 0 });
        }
        Err(msg) => {
            eprintln!("error: {msg}");
            eprintln!("run 'dyadic --help' for usage");
            return ExitCode::from(2);
        }
    };

    let text = match &cli.config_path {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("error: cannot read {}: {e}", path.display());
                return ExitCode::from(2);
            }
        },
        None => String::new(),
    };

    let mut overrides = cli.sets.clone();
    overrides.push(("run.scenario".into(), cli.scenario.name().into()));
    if let Some(seed) = cli.seed {
        overrides.push(("run.seed".into(), seed.to_string()));
    }
    let mut config = match parse_config_with_overrides(&text, &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(out) = cli.out_dir {
        config.out_dir = out;
    }

    match run_scenario(&config) {
        Ok(record) => {
            println!("scenario:  {}", record.scenario);
            println!("digest:    {}", record.config_digest);
            println!("status:    {}", record.status);
            println!("out dir:   {}", config.out_dir.display());
            for (key, value) in &record.summary {
                println!("  {key} = {value}");
            }
            if record.status == "ok" {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(3)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
