use std::process::ExitCode;

use clap::Parser;
use sweepsim::cli::{run, Cli, EXIT_CONFIG};

fn exit(code: i32) -> ExitCode {
    ExitCode::from(code as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();

    if let Ok(v) = std::env::var("SWEEPSIM_THREADS") {
        let threads = match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => n,
            _ => {
                eprintln!("error: SWEEPSIM_THREADS must be a positive integer, got '{v}'");
                return exit(EXIT_CONFIG);
            }
        };
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: cannot size the worker pool: {e}");
            return exit(EXIT_CONFIG);
        }
    }

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return exit(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            exit(e.code)
        }
    }
}
