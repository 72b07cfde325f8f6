mod args;
mod commands;
mod error;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DANLI_LOG_LEVEL", "info"))
        .format_timestamp_millis()
        .init();

    let result = match cli.command {
        Command::Train(a) => commands::train_cmd(*a),
        Command::Eval(a) => commands::eval_cmd(a),
        Command::Predict(a) => commands::predict_cmd(a),
        Command::AttendDump(a) => commands::attend_dump_cmd(a),
        Command::Bench(a) => commands::bench_cmd(a),
        Command::Synth(a) => commands::synth_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
