mod args;
mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use specbpp::data::SynthConfig;

use crate::config::Command;
use crate::error::CliResult;

fn run() -> CliResult<()> {
    let matches = args::build().get_matches();
    let (name, m) = matches.subcommand().expect("subcommand is required");
    match name {
        "pretrain" => commands::pretrain_cmd(args::resolve(Command::Pretrain, m)?),
        "finetune" => commands::finetune_cmd(args::resolve(Command::Finetune, m)?),
        "eval" => commands::eval_cmd(args::resolve(Command::Eval, m)?),
        "gen-data" => {
            let get = |k: &str| *m.get_one::<usize>(k).expect("has default");
            let cfg = SynthConfig { count: get("count"), bands: get("bands"), height: get("height"), width: get("width") };
            let out = PathBuf::from(m.get_one::<String>("output").expect("required"));
            commands::gen_data_cmd(&out, cfg, *m.get_one::<u64>("seed").expect("has default"))
        }
        "sample-perm" => {
            let text = commands::sample_perm_cmd(
                *m.get_one::<usize>("n").expect("has default"),
                *m.get_one::<f64>("temperature").expect("has default"),
                *m.get_one::<usize>("count").expect("has default"),
                *m.get_one::<u64>("seed").expect("has default"),
            )?;
            print!("{text}");
            Ok(())
        }
        other => unreachable!("unknown subcommand {other}"),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
