//! Scenario implementations and their dispatch.

mod figures;
mod multi_output;
mod validate;
mod verify;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use simplex_stdp::export;
use simplex_stdp::simplex::ProbabilityVector;

use crate::config::{ResolvedRun, ScenarioKind};
use crate::error::{CliError, CliResult};
use crate::landscape::BarycentricPoint;
use crate::output::{Manifest, OutputDir};

pub use figures::{CorrelatedFigure, Fig2Ensemble, Fig2Trajectories, LandscapeGrid};
pub use multi_output::{Alg2Verify, Fig3Algorithm1};
pub use validate::{MirrorCompare, SpikingValidate};
pub use verify::{Priming, Thm22Verify, Thm23Verify, ThmCorrVerify};

/// A named check with its outcome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    pub summary: Vec<String>,
    pub checks: Vec<Check>,
}

impl Outcome {
    pub fn line(&mut self, text: impl Into<String>) {
        self.summary.push(text.into());
    }

    pub fn check(&mut self, check: Check) {
        self.checks.push(check);
    }

    pub fn failures(&self) -> Vec<String> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("{}: {}", c.name, c.detail))
            .collect()
    }
}

pub trait Scenario {
    type Params: Serialize + DeserializeOwned + Default;

    /// Constraint violations found without running anything.
    fn validate(_params: &Self::Params) -> Vec<String> {
        Vec::new()
    }

    fn run(params: &Self::Params, seed: u64, out: &mut OutputDir) -> CliResult<Outcome>;
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub manifest: Manifest,
    pub outcome: Outcome,
    pub summary_text: String,
}

pub fn defaults(kind: ScenarioKind) -> Value {
    fn of<S: Scenario>() -> Value {
        serde_json::to_value(S::Params::default()).expect("default parameters serialize")
    }
    match kind {
        ScenarioKind::Fig2Trajectories => of::<Fig2Trajectories>(),
        ScenarioKind::Fig2Ensemble => of::<Fig2Ensemble>(),
        ScenarioKind::Fig3Algorithm1 => of::<Fig3Algorithm1>(),
        ScenarioKind::CorrelatedFigure => of::<CorrelatedFigure>(),
        ScenarioKind::Priming => of::<Priming>(),
        ScenarioKind::Thm22Verify => of::<Thm22Verify>(),
        ScenarioKind::Thm23Verify => of::<Thm23Verify>(),
        ScenarioKind::ThmCorrVerify => of::<ThmCorrVerify>(),
        ScenarioKind::Alg2Verify => of::<Alg2Verify>(),
        ScenarioKind::SpikingValidate => of::<SpikingValidate>(),
        ScenarioKind::MirrorCompare => of::<MirrorCompare>(),
        ScenarioKind::LandscapeGrid => of::<LandscapeGrid>(),
    }
}

/// Validates `run.params`, runs the scenario and writes summary and manifest.
pub fn execute(run: &ResolvedRun) -> CliResult<RunReport> {
    match run.scenario {
        ScenarioKind::Fig2Trajectories => execute_as::<Fig2Trajectories>(run),
        ScenarioKind::Fig2Ensemble => execute_as::<Fig2Ensemble>(run),
        ScenarioKind::Fig3Algorithm1 => execute_as::<Fig3Algorithm1>(run),
        ScenarioKind::CorrelatedFigure => execute_as::<CorrelatedFigure>(run),
        ScenarioKind::Priming => execute_as::<Priming>(run),
        ScenarioKind::Thm22Verify => execute_as::<Thm22Verify>(run),
        ScenarioKind::Thm23Verify => execute_as::<Thm23Verify>(run),
        ScenarioKind::ThmCorrVerify => execute_as::<ThmCorrVerify>(run),
        ScenarioKind::Alg2Verify => execute_as::<Alg2Verify>(run),
        ScenarioKind::SpikingValidate => execute_as::<SpikingValidate>(run),
        ScenarioKind::MirrorCompare => execute_as::<MirrorCompare>(run),
        ScenarioKind::LandscapeGrid => execute_as::<LandscapeGrid>(run),
    }
}

/// Parses and validates `value` against the schema of `S`, returning the
/// canonical parameter document.
pub fn check_params<S: Scenario>(value: &Value) -> CliResult<(S::Params, Value)> {
    let params: S::Params = serde_json::from_value(value.clone()).map_err(|e| CliError::config(e.to_string()))?;
    let canonical = serde_json::to_value(&params).map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut unknown = Vec::new();
    unknown_keys(value, &canonical, "", &mut unknown);
    if !unknown.is_empty() {
        return Err(CliError::Config(
            unknown.into_iter().map(|k| format!("unknown key `{k}`")).collect(),
        ));
    }
    let violations = S::validate(&params);
    if !violations.is_empty() {
        return Err(CliError::Config(violations));
    }
    Ok((params, canonical))
}

fn unknown_keys(given: &Value, canonical: &Value, prefix: &str, out: &mut Vec<String>) {
    if let (Value::Object(g), Value::Object(c)) = (given, canonical) {
        for (k, v) in g {
            let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match c.get(k) {
                Some(cv) => unknown_keys(v, cv, &path, out),
                None => out.push(path),
            }
        }
    }
}

fn execute_as<S: Scenario>(run: &ResolvedRun) -> CliResult<RunReport> {
    let (params, canonical) = check_params::<S>(&run.params)?;
    let mut out = OutputDir::create(&run.out)?;
    let outcome = S::run(&params, run.seed, &mut out)?;
    let summary_text = render_summary(run.scenario, run.seed, &outcome);
    out.write_text("summary.txt", &summary_text)?;
    let manifest = out.finish(run.scenario.name(), run.seed, canonical)?;
    Ok(RunReport {
        manifest,
        outcome,
        summary_text,
    })
}

fn render_summary(kind: ScenarioKind, seed: u64, outcome: &Outcome) -> String {
    let mut text = format!("scenario: {kind}\nseed: {seed}\n");
    for line in &outcome.summary {
        text.push_str(line);
        text.push('\n');
    }
    for c in &outcome.checks {
        let tag = if c.passed { "PASS" } else { "FAIL" };
        text.push_str(&format!("[{tag}] {}: {}\n", c.name, c.detail));
    }
    text
}

/// A point uniform on the simplex (flat Dirichlet).
pub(crate) fn uniform_simplex_point<R: Rng + ?Sized>(d: usize, rng: &mut R) -> ProbabilityVector {
    let e: Vec<f64> = (0..d).map(|_| Exp1.sample(rng)).collect();
    ProbabilityVector::normalized(e).expect("exponential draws are positive")
}

/// Rows `<lead columns>,k,p_1,p_2,p_3,x,y` of a d = 3 path; the header is
/// written when `lead_columns` is given.
pub(crate) fn write_planar_path(
    out: &mut Vec<u8>,
    lead_columns: Option<&[&str]>,
    lead: &[String],
    steps: &[u64],
    states: &[ProbabilityVector],
) -> simplex_stdp::Result<()> {
    if let Some(cols) = lead_columns {
        let mut columns: Vec<String> = cols.iter().map(|c| c.to_string()).collect();
        columns.push("k".into());
        columns.extend(export::indexed_header("p", 3));
        columns.extend(["x".to_string(), "y".to_string()]);
        export::write_header(out, &columns)?;
    }
    for (k, p) in steps.iter().zip(states) {
        let b = BarycentricPoint::from_probabilities(p.as_slice())
            .map_err(|e| simplex_stdp::Error::InvalidInput(e.to_string()))?;
        let mut values = p.as_slice().to_vec();
        values.extend([b.x, b.y]);
        let mut row = lead.to_vec();
        row.push(k.to_string());
        export::write_row(out, &row, &values)?;
    }
    Ok(())
}

/// `1e-3` style label for a rate.
pub(crate) fn rate_label(x: f64) -> String {
    format!("{x:e}")
}

pub(crate) fn require_dim3(name: &str, p: &ProbabilityVector, out: &mut Vec<String>) {
    if p.dim() != 3 {
        out.push(format!("{name} must have 3 entries for the planar export, got {}", p.dim()));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn every_default_passes_its_own_schema() {
        for kind in ScenarioKind::ALL {
            let run = ResolvedRun {
                scenario: kind,
                seed: 0,
                out: "unused".into(),
                threads: None,
                assert: false,
                params: defaults(kind),
            };
            let result = match kind {
                ScenarioKind::Fig2Trajectories => check_params::<Fig2Trajectories>(&run.params).map(|_| ()),
                ScenarioKind::Fig2Ensemble => check_params::<Fig2Ensemble>(&run.params).map(|_| ()),
                ScenarioKind::Fig3Algorithm1 => check_params::<Fig3Algorithm1>(&run.params).map(|_| ()),
                ScenarioKind::CorrelatedFigure => check_params::<CorrelatedFigure>(&run.params).map(|_| ()),
                ScenarioKind::Priming => check_params::<Priming>(&run.params).map(|_| ()),
                ScenarioKind::Thm22Verify => check_params::<Thm22Verify>(&run.params).map(|_| ()),
                ScenarioKind::Thm23Verify => check_params::<Thm23Verify>(&run.params).map(|_| ()),
                ScenarioKind::ThmCorrVerify => check_params::<ThmCorrVerify>(&run.params).map(|_| ()),
                ScenarioKind::Alg2Verify => check_params::<Alg2Verify>(&run.params).map(|_| ()),
                ScenarioKind::SpikingValidate => check_params::<SpikingValidate>(&run.params).map(|_| ()),
                ScenarioKind::MirrorCompare => check_params::<MirrorCompare>(&run.params).map(|_| ()),
                ScenarioKind::LandscapeGrid => check_params::<LandscapeGrid>(&run.params).map(|_| ()),
            };
            assert!(result.is_ok(), "{kind}: {result:?}");
        }
    }

    #[test]
    fn nested_unknown_keys_are_rejected() {
        let mut v = defaults(ScenarioKind::Fig2Trajectories);
        v["noise"]["colour"] = json!("pink");
        let err = check_params::<Fig2Trajectories>(&v).unwrap_err();
        assert_eq!(err, CliError::Config(vec!["unknown key `noise.colour`".into()]));
        let mut v = defaults(ScenarioKind::LandscapeGrid);
        v["grid_stepp"] = json!(0.1);
        assert_eq!(check_params::<LandscapeGrid>(&v).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn uniform_points_are_on_the_simplex() {
        let mut rng = simplex_stdp::rng::stream(3, 0);
        for _ in 0..100 {
            let p = uniform_simplex_point(5, &mut rng);
            assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn labels() {
        assert_eq!(rate_label(1e-3), "1e-3");
        assert_eq!(rate_label(0.0005), "5e-4");
    }
}
