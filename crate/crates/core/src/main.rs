mod cli;

use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DYNAPRUNE_LOG", "warn")).init();
    cli::main()
}
