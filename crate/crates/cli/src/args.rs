//! Argument definitions. Training commands get one long flag per config key,
//! generated from the key table so that flags, file keys and the echoed
//! config can never drift apart.

use clap::{value_parser, Arg, ArgAction, ArgMatches, Command as ClapCommand};

use crate::config::{Command, RunConfig, KEYS};
use crate::error::CliResult;

pub fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

fn training_command(name: &'static str, about: &'static str, cmd: Command) -> ClapCommand {
    let defaults = RunConfig::defaults(cmd).render();
    let default_of = |key: &str| {
        defaults
            .lines()
            .find_map(|l| l.split_once(" = ").filter(|(k, _)| *k == key).map(|(_, v)| v.to_string()))
            .unwrap_or_default()
    };
    let mut c = ClapCommand::new(name).about(about).arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .help("key = value config file; flags override its values [default: none]"),
    );
    for (key, desc) in KEYS {
        c = c.arg(
            Arg::new(*key)
                .long(flag_name(key))
                .value_name("VALUE")
                .help(format!("{desc} [default: {}]", default_of(key))),
        );
    }
    c
}

pub fn build() -> ClapCommand {
    ClapCommand::new("specbpp")
        .about("Spectral band permutation pretraining and regression fine-tuning")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(training_command(
            "pretrain",
            "Self-supervised permutation pretraining; writes logs and a checkpoint into a new run directory",
            Command::Pretrain,
        ))
        .subcommand(training_command(
            "finetune",
            "Fine-tune a regression head (from a checkpoint or a random encoder) and report test metrics",
            Command::Finetune,
        ))
        .subcommand(training_command(
            "eval",
            "Recompute metrics for a checkpoint, or for the mean predictor when none is given",
            Command::Eval,
        ))
        .subcommand(
            ClapCommand::new("gen-data")
                .about("Write a synthetic labeled dataset and a provenance note next to it")
                .arg(
                    Arg::new("output")
                        .long("output")
                        .short('o')
                        .required(true)
                        .value_name("FILE")
                        .help("container path to create; existing files are never overwritten"),
                )
                .arg(count_arg(2000, "number of spectra"))
                .arg(usize_arg("bands", 64, "bands per spectrum"))
                .arg(usize_arg("height", 8, "patch height"))
                .arg(usize_arg("width", 8, "patch width"))
                .arg(seed_arg()),
        )
        .subcommand(
            ClapCommand::new("sample-perm")
                .about("Draw permutations from the displacement-weighted Boltzmann distribution")
                .arg(usize_arg("n", 4, "segment count, 3 to 8"))
                .arg(
                    Arg::new("temperature")
                        .long("temperature")
                        .value_name("T")
                        .value_parser(value_parser!(f64))
                        .default_value("1")
                        .help("sampling temperature, larger is closer to uniform"),
                )
                .arg(count_arg(10, "number of draws"))
                .arg(seed_arg()),
        )
}

fn usize_arg(name: &'static str, default: usize, help: &'static str) -> Arg {
    Arg::new(name)
        .long(name)
        .value_name("N")
        .value_parser(value_parser!(usize))
        .default_value(default.to_string())
        .help(help)
}

fn count_arg(default: usize, help: &'static str) -> Arg {
    usize_arg("count", default, help)
}

fn seed_arg() -> Arg {
    Arg::new("seed")
        .long("seed")
        .value_name("SEED")
        .value_parser(value_parser!(u64))
        .default_value("0")
        .action(ArgAction::Set)
        .help("random seed")
}

/// Defaults, then the config file, then flags.
pub fn resolve(cmd: Command, m: &ArgMatches) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::defaults(cmd);
    if let Some(path) = m.get_one::<String>("config") {
        cfg.load_file(std::path::Path::new(path))?;
    }
    for (key, _) in KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}
