use std::io::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use simplex_stdp::dynamics::{CorrelationMatrix, NoiseModel};
use simplex_stdp::export;
use simplex_stdp::flow::{flow_bound, integrate, Fitness, FlowSpec};
use simplex_stdp::rng::{derive_seed, stream};
use simplex_stdp::simplex::{probabilities_from_weights, IntensityVector, ProbabilityVector, WeightVector};
use simplex_stdp::theory::{
    max_alpha, priming_experiment, priming_k_star, verify, PrimingOutcome, PrimingSetup, TheoremParams,
    VerificationReport, VerificationSetup,
};

use super::{uniform_simplex_point, Check, Outcome, Scenario};
use crate::error::CliResult;
use crate::output::OutputDir;

fn pv(v: &[f64]) -> ProbabilityVector {
    ProbabilityVector::new(v.to_vec()).expect("valid default")
}

fn default_checkpoints() -> Vec<f64> {
    vec![0.0, 0.25, 0.5, 0.75, 1.0]
}

/// Shared knobs of the Monte Carlo theorem checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloParams {
    pub p0: ProbabilityVector,
    pub gamma: Option<CorrelationMatrix>,
    pub epsilon: f64,
    pub noise: NoiseModel,
    /// Learning rate; the theorem's largest admissible rate when absent.
    pub alpha: Option<f64>,
    pub horizon: u64,
    pub ensemble: usize,
    pub bound_slack: f64,
    pub theta_slack: f64,
    pub checkpoint_fractions: Vec<f64>,
}

impl MonteCarloParams {
    fn violations(&self) -> Vec<String> {
        let mut v = self.noise.violations();
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            v.push(format!("epsilon = {} must lie in (0, 1)", self.epsilon));
        }
        if let Some(a) = self.alpha {
            if !(a > 0.0 && a * self.noise.q_bound < 1.0) {
                v.push(format!("alpha = {a} must lie in (0, 1/Q)"));
            }
        }
        if let Some(g) = &self.gamma {
            if g.dim() != self.p0.dim() {
                v.push(format!("gamma is {0} x {0} but p0 has {1} entries", g.dim(), self.p0.dim()));
            }
        }
        if self.horizon == 0 || self.ensemble == 0 {
            v.push("horizon and ensemble must be positive".into());
        }
        if !(self.bound_slack >= 0.0 && self.theta_slack >= 0.0) {
            v.push("slacks must be nonnegative".into());
        }
        if self.checkpoint_fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            v.push("checkpoint_fractions must lie in [0, 1]".into());
        }
        v
    }

    fn setup(&self, theorem: &str, seed: u64) -> VerificationSetup {
        VerificationSetup {
            theorem: theorem.to_string(),
            p0: self.p0.clone(),
            gamma: self.gamma.clone(),
            epsilon: self.epsilon,
            noise: self.noise.clone(),
            alpha: self.alpha,
            horizon: self.horizon,
            ensemble: self.ensemble,
            master_seed: seed,
            bound_slack: self.bound_slack,
            theta_slack: self.theta_slack,
            checkpoint_fractions: self.checkpoint_fractions.clone(),
        }
    }
}

fn run_monte_carlo(p: &MonteCarloParams, theorem: &str, seed: u64, out: &mut OutputDir) -> CliResult<Outcome> {
    let report: VerificationReport = verify(&p.setup(theorem, seed))?;
    out.write_json("report.json", &report)?;
    out.write("checkpoints.csv", |w| {
        writeln!(w, "k,empirical,empirical_unconditional,bound")?;
        for c in &report.bound_checkpoints {
            writeln!(w, "{},{},{},{}", c.k, c.empirical, c.empirical_unconditional, c.bound)?;
        }
        Ok(())
    })?;
    let alpha = report
        .params
        .get("alpha")
        .or_else(|| report.params.get("base").and_then(|b| b.get("alpha")))
        .cloned()
        .unwrap_or_default();
    let mut outcome = Outcome::default();
    outcome.line(format!("{} paths of {} steps, α = {alpha}", report.ensemble_size, report.horizon));
    for c in &report.bound_checkpoints {
        outcome.line(format!("k = {}: mean distance on Θ {} vs bound {}", c.k, c.empirical, c.bound));
    }
    outcome.check(Check::new(
        "benign event probability",
        report.empirical_theta_probability >= report.theta_floor,
        format!("{} vs floor {}", report.empirical_theta_probability, report.theta_floor),
    ));
    let bound_ok = report
        .bound_checkpoints
        .iter()
        .all(|c| c.empirical <= c.bound * (1.0 + p.bound_slack));
    outcome.check(Check::new(
        "bound domination",
        bound_ok,
        format!("{} checkpoints with slack {}", report.bound_checkpoints.len(), p.bound_slack),
    ));
    if report.inclusion_applicable {
        outcome.check(Check::new(
            "event inclusion",
            report.inclusion_violations == 0,
            format!("{} violating steps", report.inclusion_violations),
        ));
    }
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IndependentParams(pub MonteCarloParams);

impl Default for IndependentParams {
    fn default() -> Self {
        IndependentParams(MonteCarloParams {
            p0: pv(&[0.9, 0.1]),
            gamma: None,
            epsilon: 0.5,
            noise: NoiseModel::default(),
            alpha: None,
            horizon: 200_000,
            ensemble: 200,
            bound_slack: 0.1,
            theta_slack: 0.05,
            checkpoint_fractions: default_checkpoints(),
        })
    }
}

/// Monte Carlo check of the single-neuron convergence guarantee.
pub struct Thm22Verify;

impl Scenario for Thm22Verify {
    type Params = IndependentParams;

    fn validate(p: &IndependentParams) -> Vec<String> {
        let mut v = p.0.violations();
        if p.0.gamma.is_some() {
            v.push("gamma belongs to thm-corr-verify".into());
        }
        v
    }

    fn run(p: &IndependentParams, seed: u64, out: &mut OutputDir) -> CliResult<Outcome> {
        run_monte_carlo(&p.0, "independent", seed, out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CorrelatedVerifyParams(pub MonteCarloParams);

impl Default for CorrelatedVerifyParams {
    fn default() -> Self {
        let gamma = CorrelationMatrix::new(vec![vec![1.0, 0.1, 0.1], vec![0.1, 1.0, 0.0], vec![0.1, 0.0, 1.0]])
            .expect("valid default");
        CorrelatedVerifyParams(MonteCarloParams {
            p0: pv(&[0.8, 0.1, 0.1]),
            gamma: Some(gamma),
            epsilon: 0.5,
            noise: NoiseModel::default(),
            alpha: None,
            horizon: 2_500_000,
            ensemble: 50,
            bound_slack: 0.1,
            theta_slack: 0.07,
            checkpoint_fractions: default_checkpoints(),
        })
    }
}

/// Monte Carlo check of the convergence guarantee for correlated inputs.
pub struct ThmCorrVerify;

impl Scenario for ThmCorrVerify {
    type Params = CorrelatedVerifyParams;

    fn validate(p: &CorrelatedVerifyParams) -> Vec<String> {
        let mut v = p.0.violations();
        if p.0.gamma.is_none() {
            v.push("gamma is required".into());
        }
        v
    }

    fn run(p: &CorrelatedVerifyParams, seed: u64, out: &mut OutputDir) -> CliResult<Outcome> {
        run_monte_carlo(&p.0, "correlated", seed, out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowCheckParams {
    pub points: usize,
    pub dims: Vec<usize>,
    pub min_gap: f64,
    pub dt: f64,
    pub horizon: f64,
    pub tolerance: f64,
}

impl Default for FlowCheckParams {
    fn default() -> Self {
        FlowCheckParams {
            points: 100,
            dims: vec![2, 3, 5],
            min_gap: 0.05,
            dt: 1e-3,
            horizon: 20.0,
            tolerance: 1e-12,
        }
    }
}

/// One start point of the flow check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowPointResult {
    pub index: usize,
    pub p0: ProbabilityVector,
    pub gap: f64,
    pub recorded: usize,
    /// `max_t (‖p(t) - e_lead‖₁ - bound(t))`.
    pub max_excess: f64,
    pub violations: usize,
}

/// Draws a uniform start point with leading gap at least `min_gap`.
pub fn flow_start(d: usize, min_gap: f64, seed: u64) -> ProbabilityVector {
    let mut rng = stream(seed, 0);
    loop {
        let p = uniform_simplex_point(d, &mut rng);
        if p.leading_gap().1 >= min_gap {
            return p;
        }
    }
}

/// Integrates the flow from `p0` and compares with the exponential bound.
pub fn flow_point(index: usize, p0: ProbabilityVector, p: &FlowCheckParams) -> simplex_stdp::Result<FlowPointResult> {
    let spec = FlowSpec::new(Fitness::SelfFitness, p0.clone(), p.horizon, p.dt);
    let traj = integrate(&spec)?;
    let (lead, gap) = p0.leading_gap();
    let mut max_excess = f64::NEG_INFINITY;
    let mut violations = 0;
    for (t, state) in traj.times.iter().zip(&traj.states) {
        let excess = state.l1_to_vertex(lead) - flow_bound(&p0, *t)?;
        max_excess = max_excess.max(excess);
        if excess > p.tolerance {
            violations += 1;
        }
    }
    Ok(FlowPointResult {
        index,
        p0,
        gap,
        recorded: traj.times.len(),
        max_excess,
        violations,
    })
}

/// Deterministic check of the exponential bound along the gradient flow.
pub struct Thm23Verify;

impl Scenario for Thm23Verify {
    type Params = FlowCheckParams;

    fn validate(p: &FlowCheckParams) -> Vec<String> {
        let mut v = Vec::new();
        if p.points == 0 {
            v.push("points must be positive".into());
        }
        if p.dims.is_empty() || p.dims.iter().any(|&d| d < 2) {
            v.push("dims must be nonempty with every entry at least 2".into());
        }
        if !(p.min_gap > 0.0 && p.min_gap < 1.0) {
            v.push(format!("min_gap = {} must lie in (0, 1)", p.min_gap));
        }
        if !(p.dt > 0.0 && p.horizon > 0.0 && p.dt <= p.horizon) {
            v.push("need 0 < dt <= horizon".into());
        }
        if !(p.tolerance >= 0.0) {
            v.push("tolerance must be nonnegative".into());
        }
        v
    }

    fn run(p: &FlowCheckParams, seed: u64, out: &mut OutputDir) -> CliResult<Outcome> {
        let results: Vec<FlowPointResult> = (0..p.points)
            .into_par_iter()
            .map(|i| {
                let d = p.dims[i % p.dims.len()];
                flow_point(i, flow_start(d, p.min_gap, derive_seed(seed, i as u64)), p)
            })
            .collect::<simplex_stdp::Result<_>>()?;
        out.write("points.csv", |w| {
            writeln!(w, "index,d,gap,recorded,max_excess,violations")?;
            for r in &results {
                writeln!(w, "{},{},{},{},{},{}", r.index, r.p0.dim(), r.gap, r.recorded, r.max_excess, r.violations)?;
            }
            Ok(())
        })?;
        let violations: usize = results.iter().map(|r| r.violations).sum();
        let worst = results.iter().map(|r| r.max_excess).fold(f64::NEG_INFINITY, f64::max);
        out.write_json(
            "report.json",
            &serde_json::json!({
                "points": results.len(),
                "dims": p.dims,
                "violations": violations,
                "max_excess": worst,
                "tolerance": p.tolerance,
                "results": results,
            }),
        )?;
        let mut outcome = Outcome::default();
        outcome.line(format!(
            "{} start points, {} recorded states, largest excess over the bound {worst}",
            results.len(),
            results.iter().map(|r| r.recorded).sum::<usize>()
        ));
        outcome.check(Check::new("flow bound", violations == 0, format!("{violations} violations")));
        Ok(outcome)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrimingParams {
    pub lambda_a: IntensityVector,
    pub lambda_b: IntensityVector,
    pub w0: WeightVector,
    /// Learning rate; the largest admissible rate at `λ_a ⊙ w0` when absent.
    pub alpha: Option<f64>,
    pub epsilon: f64,
    /// Fraction of the priming margin used as the target distance.
    pub delta_fraction: f64,
    /// Total steps as a multiple of the priming length.
    pub total_factor: f64,
    pub ensemble: usize,
    pub slack: f64,
    pub noise: NoiseModel,
}

impl Default for PrimingParams {
    fn default() -> Self {
        PrimingParams {
            lambda_a: IntensityVector::new(vec![9.0, 1.0]).expect("positive"),
            lambda_b: IntensityVector::new(vec![1.0, 1.5]).expect("positive"),
            w0: WeightVector::new(vec![1.0, 1.0]).expect("positive"),
            alpha: None,
            epsilon: 0.1,
            delta_fraction: 0.5,
            total_factor: 2.0,
            ensemble: 200,
            slack: 0.05,
            noise: NoiseModel::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct PrimingReport {
    alpha: f64,
    delta: f64,
    k_star: u64,
    total_k: u64,
    floor: f64,
    unprimed: PrimingOutcome,
    primed: PrimingOutcome,
}

/// Switches the intensities after `k*` steps and records which vertex wins.
pub struct Priming;

impl Scenario for Priming {
    type Params = PrimingParams;

    fn validate(p: &PrimingParams) -> Vec<String> {
        let mut v = p.noise.violations();
        if p.lambda_a.dim() != p.w0.dim() || p.lambda_b.dim() != p.w0.dim() {
            v.push("lambda_a, lambda_b and w0 must have equal length".into());
        }
        if let Some(a) = p.alpha {
            if !(a > 0.0 && a * p.noise.q_bound < 1.0) {
                v.push(format!("alpha = {a} must lie in (0, 1/Q)"));
            }
        }
        if !(p.epsilon > 0.0 && p.epsilon < 0.5) {
            v.push(format!("epsilon = {} must lie in (0, 1/2)", p.epsilon));
        }
        if !(p.delta_fraction > 0.0 && p.delta_fraction < 1.0) {
            v.push("delta_fraction must lie in (0, 1)".into());
        }
        if !(p.total_factor >= 1.0) {
            v.push("total_factor must be at least 1".into());
        }
        if p.ensemble == 0 {
            v.push("ensemble must be positive".into());
        }
        v
    }

    fn run(p: &PrimingParams, seed: u64, out: &mut OutputDir) -> CliResult<Outcome> {
        let alpha = match p.alpha {
            Some(a) => a,
            None => {
                let p0 = probabilities_from_weights(&p.lambda_a, &p.w0)?;
                max_alpha(&TheoremParams::from_initial(&p0, p.epsilon, p.noise.q_bound)?)?
            }
        };
        let mut setup = PrimingSetup {
            lambda_a: p.lambda_a.clone(),
            lambda_b: p.lambda_b.clone(),
            w0: p.w0.clone(),
            alpha,
            noise: p.noise.clone(),
            k_star: 0,
            total_k: 0,
            ensemble: p.ensemble,
            master_seed: seed,
        };
        let (delta, k_star) = priming_k_star(&setup, p.epsilon, p.delta_fraction)?;
        let total_k = ((k_star.max(1) as f64) * p.total_factor).ceil() as u64;
        setup.total_k = total_k;
        let unprimed = priming_experiment(&setup)?;
        setup.k_star = k_star;
        let primed = priming_experiment(&setup)?;
        let d = p.w0.dim();
        out.write("final_states.csv", |w| {
            let mut header = vec!["arm".to_string(), "run".to_string()];
            header.extend(export::indexed_header("p", d));
            export::write_header(w, &header)?;
            for (arm, o) in [("unprimed", &unprimed), ("primed", &primed)] {
                for (i, s) in o.final_states.iter().enumerate() {
                    export::write_row(w, &[arm.to_string(), i.to_string()], s.as_slice())?;
                }
            }
            Ok(())
        })?;
        let floor = 1.0 - 2.0 * p.epsilon - p.slack;
        let report = PrimingReport {
            alpha,
            delta,
            k_star,
            total_k,
            floor,
            unprimed,
            primed,
        };
        out.write_json("report.json", &report)?;
        let mut outcome = Outcome::default();
        outcome.line(format!("α = {alpha}, δ = {delta}, k* = {k_star}, {total_k} steps in total"));
        outcome.check(Check::new(
            "unprimed reaches the second winner",
            report.unprimed.fraction_to_b >= floor,
            format!("{} vs floor {floor}", report.unprimed.fraction_to_b),
        ));
        outcome.check(Check::new(
            "primed keeps the first winner",
            report.primed.fraction_to_a >= floor,
            format!("{} vs floor {floor}", report.primed.fraction_to_a),
        ));
        Ok(outcome)
    }
}
