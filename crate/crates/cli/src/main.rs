use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgMatches, Command};
use topopt::config::{RunConfig, KEYS, OUTPUT_DIR_ENV};
use topopt::report::run;

fn cli() -> Command {
    let mut run_cmd = Command::new("run")
        .about("Run a benchmark and write metrics, summary and density snapshots")
        .arg(
            Arg::new("config")
                .long("config")
                .short('c')
                .value_name("FILE")
                .value_parser(clap::value_parser!(PathBuf))
                .help("key = value config file; flags override it"),
        );
    for key in KEYS {
        let mut arg = Arg::new(key.name).long(key.name).value_name("VALUE").help(key.help);
        if !key.default.is_empty() {
            arg = arg.help(format!("{} [default: {}]", key.help, key.default));
        }
        run_cmd = run_cmd.arg(arg);
    }
    Command::new("topopt")
        .about("Topology optimization by projected gradient descent")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(run_cmd)
        .subcommand(Command::new("keys").about("Print every config key with its default"))
}

/// File, then the output-dir environment variable, then flags.
fn resolve(m: &ArgMatches) -> topopt::Result<RunConfig> {
    let mut cfg = match m.get_one::<PathBuf>("config") {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply_env();
    for key in KEYS {
        if let Some(v) = m.get_one::<String>(key.name) {
            cfg.set(key.name, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let matches = cli().get_matches();
    match matches.subcommand() {
        Some(("keys", _)) => {
            for key in KEYS {
                println!("{} = {}\n    {}", key.name, key.default, key.help);
            }
            println!("\n{OUTPUT_DIR_ENV} overrides output_dir from a config file.");
            ExitCode::SUCCESS
        }
        Some(("run", m)) => {
            let cfg = match resolve(m) {
                Ok(cfg) => cfg,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            match run(&cfg) {
                Ok(summary) => {
                    let objective = summary.final_objective.unwrap_or(f64::NAN);
                    let worst = summary.final_violations.iter().fold(0.0f64, |a, &v| a.max(v));
                    println!(
                        "{} iterations, objective {objective:.6}, max violation {worst:.2e}, output in {}",
                        summary.iterations,
                        cfg.output_dir.display()
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
        _ => unreachable!("clap enforces a subcommand"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_definition_is_consistent() {
        cli().debug_assert();
    }

    #[test]
    fn flags_override_defaults() {
        let m = cli().get_matches_from(["topopt", "run", "--nx", "8", "--ny", "4", "--problem", "min_volume"]);
        let cfg = resolve(m.subcommand_matches("run").unwrap()).unwrap();
        assert_eq!((cfg.nx, cfg.ny), (8, 4));
        assert_eq!(cfg.problem.as_str(), "min_volume");
    }
}
