use clap::Parser;
use simplex_stdp_cli::{config::OUTPUT_ROOT_VAR, run, Cli, Invocation};

fn main() {
    let invocation: Invocation = Cli::parse().into();
    let env_out = std::env::var(OUTPUT_ROOT_VAR).ok();
    match run(&invocation, env_out.as_deref()) {
        Ok(report) => print!("{}", report.summary_text),
        Err(e) => {
            eprintln!("simplex-stdp: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
