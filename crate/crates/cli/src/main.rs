use std::io::Write;

use clap::Parser;
use ddlpv_cli::{run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        // help and version exit 0, usage errors 2
        Err(e) => e.exit(),
    };
    let done = run(cli);
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(done.stdout.as_bytes());
    let _ = out.flush();
    std::process::exit(done.outcome.code());
}
