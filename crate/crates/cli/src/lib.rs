//! Command-line scenarios for the simplex-stdp library: figure data, theorem
//! checks and validation runs, each writing CSV/JSON files and a manifest.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod landscape;
pub mod output;
pub mod scenarios;

use std::path::PathBuf;

use clap::Parser;

pub use config::{Invocation, ResolvedRun, ScenarioKind};
pub use error::{CliError, CliResult};
pub use scenarios::RunReport;

const SCENARIO_HELP: &str = "fig2-trajectories, fig2-ensemble, fig3-algorithm1, correlated-figure, priming, \
thm22-verify, thm23-verify, thm-corr-verify, alg2-verify, spiking-validate, mirror-compare, landscape-grid";

#[derive(Debug, Clone, Parser)]
#[command(name = "simplex-stdp", version, about = "Run a simplex-stdp scenario and write its data files")]
pub struct Cli {
    /// Scenario name
    #[arg(help = format!("Scenario: {SCENARIO_HELP}"))]
    pub scenario: String,
    /// JSON config file; flags and --set take precedence over its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory [default: $SIMPLEX_STDP_OUT/<scenario>]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads [default: logical cores]
    #[arg(long)]
    pub threads: Option<usize>,
    /// Parameter override `key=value`; dotted keys reach nested values
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Exit with status 4 when a check fails
    #[arg(long)]
    pub assert: bool,
}

impl From<Cli> for Invocation {
    fn from(c: Cli) -> Self {
        Invocation {
            scenario: c.scenario,
            config_file: c.config,
            seed: c.seed,
            out: c.out,
            threads: c.threads,
            sets: c.sets,
            assert: c.assert,
        }
    }
}

/// Resolves the configuration for `invocation`.
pub fn resolve(invocation: &Invocation, env_out: Option<&str>) -> CliResult<ResolvedRun> {
    let kind: ScenarioKind = invocation.scenario.parse()?;
    config::resolve(invocation, scenarios::defaults(kind), env_out)
}

/// Runs a resolved scenario on a pool of `run.threads` workers.
pub fn execute(run: &ResolvedRun) -> CliResult<RunReport> {
    match run.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Runtime(e.to_string()))?
            .install(|| scenarios::execute(run)),
        None => scenarios::execute(run),
    }
}

/// Runs `invocation`; in assert mode failed checks become an error after
/// all files are written.
pub fn run(invocation: &Invocation, env_out: Option<&str>) -> CliResult<RunReport> {
    let resolved = resolve(invocation, env_out)?;
    let report = execute(&resolved)?;
    let failures = report.outcome.failures();
    if resolved.assert && !failures.is_empty() {
        print!("{}", report.summary_text);
        return Err(CliError::Assertion(failures));
    }
    Ok(report)
}
