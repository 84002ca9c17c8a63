//! Learning-rate conditions, convergence bounds and the proof-side events.
//!
//! The independent model is the correlated one with `Γ = I`; both share one
//! set of rate constants so the reduction holds bit for bit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{xi_into, CorrelationMatrix, DynamicsConfig, InitialState, IntensitySegment, ModelVariant, NoiseModel, Simulation, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::rng;
use crate::simplex::{gap_from, leading_gap, probabilities_from_weights, IntensityVector, ProbabilityVector, WeightVector};

/// Constants of the single-neuron convergence theorem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremParams {
    /// Initial gap between the leading coordinate and the runner-up.
    pub delta: f64,
    pub epsilon: f64,
    pub q_bound: f64,
    /// Leading initial probability.
    pub p1_initial: f64,
    pub dim: usize,
    pub alpha: f64,
    /// Zero-based index of the leading coordinate.
    #[serde(default)]
    pub leader: usize,
}

impl TheoremParams {
    /// Reads `Δ`, `p_1(0)` and the leader from `p0`; `alpha` is set to [`max_alpha`].
    pub fn from_initial(p0: &ProbabilityVector, epsilon: f64, q_bound: f64) -> Result<Self> {
        let (leader, delta) = leading_gap(p0.as_slice());
        let mut params = Self {
            delta,
            epsilon,
            q_bound,
            p1_initial: p0[leader],
            dim: p0.dim(),
            alpha: 0.0,
            leader,
        };
        params.check()?;
        params.alpha = max_alpha(&params)?;
        Ok(params)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(Error::Precondition(format!("initial gap Δ = {} must be positive", self.delta)));
        }
        let mut v = Vec::new();
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            v.push(format!("ε = {} must lie in (0, 1)", self.epsilon));
        }
        if !(self.q_bound > 1.0) {
            v.push(format!("Q = {} must exceed 1", self.q_bound));
        }
        if !(self.p1_initial > 0.0 && self.p1_initial <= 1.0) {
            v.push(format!("p_1(0) = {} must lie in (0, 1]", self.p1_initial));
        }
        if self.dim == 0 {
            v.push("dimension must be positive".into());
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v))
        }
    }

    fn constants(&self) -> RateConstants {
        RateConstants {
            delta_p: self.delta,
            delta_gamma: self.delta,
            c_star: self.delta * self.delta / 4.0,
            scale: self.delta,
            p1: self.p1_initial,
            d: self.dim as f64,
            epsilon: self.epsilon,
            q: self.q_bound,
        }
    }
}

/// Constants of the correlated-input theorem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrTheoremParams {
    #[serde(flatten)]
    pub base: TheoremParams,
    pub delta_p: f64,
    pub delta_gamma: f64,
    pub nu: f64,
    pub c_star: f64,
    pub gamma_row_norm: f64,
    /// False when `c_⋆ ≤ 0` or `Δ_Γ ≤ 0`: the theorem does not apply.
    pub valid: bool,
}

impl CorrTheoremParams {
    fn constants(&self) -> RateConstants {
        RateConstants {
            delta_p: self.delta_p,
            delta_gamma: self.delta_gamma,
            c_star: self.c_star,
            scale: self.delta_p.min(self.delta_gamma / self.gamma_row_norm),
            p1: self.base.p1_initial,
            d: self.base.dim as f64,
            epsilon: self.base.epsilon,
            q: self.base.q_bound,
        }
    }

    fn require_valid(&self) -> Result<()> {
        if self.valid {
            Ok(())
        } else {
            Err(Error::Precondition(format!(
                "correlated theorem inapplicable: c_⋆ = {}, Δ_Γ = {}",
                self.c_star, self.delta_gamma
            )))
        }
    }
}

struct RateConstants {
    delta_p: f64,
    delta_gamma: f64,
    c_star: f64,
    /// `min(Δ_p, Δ_Γ / ‖Γ‖_∞)`.
    scale: f64,
    p1: f64,
    d: f64,
    epsilon: f64,
    q: f64,
}

impl RateConstants {
    fn max_alpha(&self) -> f64 {
        let q2 = 4.0 * self.q * self.q;
        let first = self.c_star / q2;
        let second = self.scale * self.scale * self.delta_gamma * (4.0 / self.d + self.delta_p) * self.epsilon
            / (1024.0 * (1.0 - self.p1))
            / q2;
        largest_alpha(self.q, |a| (first * (1.0 - self.q * a).powi(3)).min(second))
    }

    fn lemma_alpha(&self) -> f64 {
        let first = self.c_star / (4.0 * self.q * self.q);
        largest_alpha(self.q, |a| first * (1.0 - self.q * a).powi(3))
    }

    fn rate(&self, alpha: f64) -> f64 {
        alpha * self.delta_gamma / 16.0 * (4.0 / self.d + self.delta_p)
    }

    fn bound(&self, alpha: f64, k: u64) -> f64 {
        2.0 * (1.0 - self.p1) * (-self.rate(alpha) * k as f64).exp()
    }

    fn iterations(&self, alpha: f64, delta_target: f64) -> Result<u64> {
        if !(delta_target > 0.0 && delta_target < 1.0) {
            return Err(Error::InvalidInput(format!("δ = {delta_target} must lie in (0, 1)")));
        }
        let log = (4.0 * (1.0 - self.p1) / (self.epsilon * delta_target)).ln();
        let k = 16.0 * self.d / (alpha * self.delta_gamma * (4.0 + self.d * self.delta_p)) * log;
        Ok(k.max(0.0).ceil() as u64)
    }
}

/// Largest `α ∈ [0, 1/Q)` with `α ≤ cap(α)` for a nonincreasing `cap`.
fn largest_alpha(q: f64, cap: impl Fn(f64) -> f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0 / q);
    if cap(lo) <= 0.0 {
        return 0.0;
    }
    while hi - lo > 1e-12 * lo.max(f64::MIN_POSITIVE) {
        let mid = 0.5 * (lo + hi);
        if mid <= cap(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    lo
}

/// Largest admissible learning rate of the single-neuron theorem.
///
/// ```
/// use simplex_stdp::theory::{max_alpha, TheoremParams};
///
/// let params = TheoremParams {
///     delta: 0.8, epsilon: 0.5, q_bound: 2.0, p1_initial: 0.9, dim: 2, alpha: 0.0, leader: 0,
/// };
/// assert!((max_alpha(&params).unwrap() - 4.375e-4).abs() < 1e-12);
/// ```
pub fn max_alpha(params: &TheoremParams) -> Result<f64> {
    params.check()?;
    Ok(params.constants().max_alpha())
}

/// Largest `α` with `α ≤ Δ²(1 - Qα)³ / (16Q²)`, the condition under which the
/// concentration event forces the benign event one step later.
pub fn lemma_ek_max_alpha(params: &TheoremParams) -> Result<f64> {
    params.check()?;
    Ok(params.constants().lemma_alpha())
}

/// `2(1 - p_1(0)) exp(-(α/16)(4Δ/d + Δ²) k)`.
pub fn bound(k: u64, params: &TheoremParams) -> f64 {
    params.constants().bound(params.alpha, k)
}

/// `(1 - αΔ/(4d)(1 + Δ(d - 1)/2))^k`, the contraction the bound is derived from.
pub fn contraction_factor(k: u64, params: &TheoremParams) -> f64 {
    let d = params.dim as f64;
    let delta = params.delta;
    (1.0 - params.alpha * delta / (4.0 * d) * (1.0 + delta * (d - 1.0) / 2.0)).powf(k as f64)
}

/// `⌈16d / (αΔ(4 + dΔ)) · log(4(1 - p_1(0)) / (εδ))⌉`, floored at 0.
pub fn iterations_for(delta_target: f64, params: &TheoremParams) -> Result<u64> {
    params.constants().iterations(params.alpha, delta_target)
}

/// Correlated-theorem constants at `p0`; `base.alpha` is set to
/// [`max_alpha_corr`] when the theorem applies and to 0 otherwise.
pub fn corr_params(p0: &ProbabilityVector, gamma: &CorrelationMatrix, epsilon: f64, q_bound: f64) -> Result<CorrTheoremParams> {
    crate::error::check_dim(p0.dim(), gamma.dim())?;
    let mut base = TheoremParams {
        delta: 0.0,
        epsilon,
        q_bound,
        p1_initial: 0.0,
        dim: p0.dim(),
        alpha: 0.0,
        leader: 0,
    };
    let (leader, delta_p) = leading_gap(p0.as_slice());
    base.leader = leader;
    base.delta = delta_p;
    base.p1_initial = p0[leader];
    base.check()?;
    let gp = gamma.apply(p0.as_slice());
    let delta_gamma = gap_from(&gp, leader);
    let nu = gamma.max_off_diagonal();
    let product = delta_p * delta_gamma / 4.0;
    let c_star = product - nu * (1.0 + product);
    let mut params = CorrTheoremParams {
        base,
        delta_p,
        delta_gamma,
        nu,
        c_star,
        gamma_row_norm: gamma.row_sum_norm(),
        valid: c_star > 0.0 && delta_gamma > 0.0,
    };
    if params.valid {
        params.base.alpha = params.constants().max_alpha();
    }
    Ok(params)
}

pub fn max_alpha_corr(params: &CorrTheoremParams) -> Result<f64> {
    params.require_valid()?;
    Ok(params.constants().max_alpha())
}

/// Correlated analogue of [`lemma_ek_max_alpha`]: `α ≤ (1 - Qα)³ c_⋆ / (4Q²)`.
pub fn lemma_ek_max_alpha_corr(params: &CorrTheoremParams) -> Result<f64> {
    params.require_valid()?;
    Ok(params.constants().lemma_alpha())
}

/// `2(1 - p_1(0)) exp(-(αΔ_Γ/16)(4/d + Δ_p) k)`.
pub fn bound_corr(k: u64, params: &CorrTheoremParams) -> Result<f64> {
    params.require_valid()?;
    Ok(params.constants().bound(params.base.alpha, k))
}

pub fn iterations_corr(delta_target: f64, params: &CorrTheoremParams) -> Result<u64> {
    params.require_valid()?;
    params.constants().iterations(params.base.alpha, delta_target)
}

/// Thresholds defining the benign events `Ω(k)` and concentration events `E(k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSpec {
    pub alpha: f64,
    pub leader: usize,
    /// `Ω` requires `p_lead - max_{i≠lead} p_i ≥ omega_gap`.
    pub omega_gap: f64,
    /// Correlated mode: `Ω` also requires the `Γp` gap to be at least `.1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<(CorrelationMatrix, f64)>,
    /// `E` requires `max_{u ≤ k} |M_j(u)| ≤ e_threshold` for every `j`.
    pub e_threshold: f64,
    /// Whether `α` satisfies the condition under which `E(k) ⊆ Ω(k+1)` is proven.
    pub inclusion_applicable: bool,
}

impl EventSpec {
    pub fn independent(params: &TheoremParams) -> Result<Self> {
        Ok(Self {
            alpha: params.alpha,
            leader: params.leader,
            omega_gap: params.delta / 2.0,
            gamma: None,
            e_threshold: params.delta / 4.0,
            inclusion_applicable: params.alpha <= lemma_ek_max_alpha(params)?,
        })
    }

    pub fn correlated(params: &CorrTheoremParams, gamma: &CorrelationMatrix) -> Result<Self> {
        Ok(Self {
            alpha: params.base.alpha,
            leader: params.base.leader,
            omega_gap: params.delta_p / 2.0,
            gamma: Some((gamma.clone(), params.delta_gamma / 2.0)),
            e_threshold: params.constants().scale / 4.0,
            inclusion_applicable: params.base.alpha <= lemma_ek_max_alpha_corr(params)?,
        })
    }

    fn omega_holds(&self, p: &[f64], scratch: &mut [f64]) -> bool {
        if gap_from(p, self.leader) < self.omega_gap {
            return false;
        }
        match &self.gamma {
            None => true,
            Some((g, threshold)) => {
                g.apply_into(p, scratch);
                gap_from(scratch, self.leader) >= *threshold
            }
        }
    }

    fn conditional_mean(&self, p: &[f64], out: &mut [f64]) {
        match &self.gamma {
            None => out.copy_from_slice(p),
            Some((g, _)) => g.apply_into(p, out),
        }
    }
}

/// Online evaluation of `Ω(k)`, `M_j(k)` and `E(k)` along one path.
#[derive(Debug, Clone)]
pub struct EventMonitor {
    spec: EventSpec,
    k: u64,
    omega: bool,
    martingale: Vec<f64>,
    running_max: f64,
    xi: Vec<f64>,
    scratch: Vec<f64>,
    inclusion_violations: Vec<u64>,
    first_omega_failure: Option<u64>,
}

impl EventMonitor {
    /// `p0` must satisfy `Ω(0)`, which is the whole space by convention.
    pub fn new(spec: EventSpec, dim: usize) -> Self {
        Self {
            spec,
            k: 0,
            omega: true,
            martingale: vec![0.0; dim],
            running_max: 0.0,
            xi: vec![0.0; dim],
            scratch: vec![0.0; dim],
            inclusion_violations: Vec::new(),
            first_omega_failure: None,
        }
    }

    /// Feeds step `k`: state `p(k)`, its randomness `Y(k)` and the next state.
    /// Returns `(Ω(k), E(k), Ω(k+1))`.
    pub fn observe(&mut self, p: &[f64], y: &[f64], p_next: &[f64]) -> (bool, bool, bool) {
        let omega_k = self.omega;
        if omega_k {
            let mut mean = std::mem::take(&mut self.scratch);
            self.spec.conditional_mean(p, &mut mean);
            xi_into(p, y, &mean, &mut self.xi);
            self.scratch = mean;
            for (m, x) in self.martingale.iter_mut().zip(&self.xi) {
                *m += self.spec.alpha * x;
            }
        }
        let current = self.martingale.iter().fold(0.0f64, |a, m| a.max(m.abs()));
        self.running_max = self.running_max.max(current);
        let e_k = self.running_max <= self.spec.e_threshold;
        let mut scratch = std::mem::take(&mut self.scratch);
        let omega_next = omega_k && self.spec.omega_holds(p_next, &mut scratch);
        self.scratch = scratch;
        if e_k && !omega_next {
            self.inclusion_violations.push(self.k);
        }
        if omega_k && !omega_next {
            self.first_omega_failure = Some(self.k + 1);
        }
        self.omega = omega_next;
        self.k += 1;
        (omega_k, e_k, omega_next)
    }

    /// `Ω(k)` for the next unobserved `k`.
    pub fn omega(&self) -> bool {
        self.omega
    }

    pub fn martingales(&self) -> &[f64] {
        &self.martingale
    }

    pub fn inclusion_violations(&self) -> &[u64] {
        &self.inclusion_violations
    }

    pub fn first_omega_failure(&self) -> Option<u64> {
        self.first_omega_failure
    }

    pub fn spec(&self) -> &EventSpec {
        &self.spec
    }
}

/// Full event history of a recorded path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventTracker {
    /// `Ω(k)` for `k = 0..=K`.
    pub omega_flags: Vec<bool>,
    /// `martingales[j][k] = M_j(k)` for `k = 0..K`.
    pub martingales: Vec<Vec<f64>>,
    /// `E(k)` for `k = 0..K`.
    pub e_flags: Vec<bool>,
    /// Steps `k` with `E(k)` but not `Ω(k+1)`.
    pub inclusion_violations: Vec<u64>,
    pub inclusion_applicable: bool,
}

/// Recomputes the events from a record made with `record_samples` and stride 1.
pub fn track_events(record: &TrajectoryRecord, spec: &EventSpec) -> Result<EventTracker> {
    let samples = record
        .samples
        .as_ref()
        .ok_or_else(|| Error::MissingDiagnostics("the trajectory was recorded without samples".into()))?;
    if record.states.len() != samples.len() + 1 || record.steps.iter().enumerate().any(|(i, k)| *k != i as u64) {
        return Err(Error::MissingDiagnostics(
            "event tracking needs every state (stride 1)".into(),
        ));
    }
    let d = record.dim();
    let mut monitor = EventMonitor::new(spec.clone(), d);
    let mut tracker = EventTracker {
        omega_flags: vec![true],
        martingales: vec![Vec::with_capacity(samples.len()); d],
        e_flags: Vec::with_capacity(samples.len()),
        inclusion_violations: Vec::new(),
        inclusion_applicable: spec.inclusion_applicable,
    };
    for (k, sample) in samples.iter().enumerate() {
        let (_, e_k, omega_next) = monitor.observe(
            record.states[k].as_slice(),
            &sample.combined,
            record.states[k + 1].as_slice(),
        );
        tracker.omega_flags.push(omega_next);
        tracker.e_flags.push(e_k);
        for (j, m) in monitor.martingales().iter().enumerate() {
            tracker.martingales[j].push(*m);
        }
    }
    tracker.inclusion_violations = monitor.inclusion_violations().to_vec();
    Ok(tracker)
}

/// What an ensemble verification runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationSetup {
    pub theorem: String,
    pub p0: ProbabilityVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<CorrelationMatrix>,
    pub epsilon: f64,
    #[serde(default)]
    pub noise: NoiseModel,
    /// Overrides the theorem's largest admissible rate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub horizon: u64,
    pub ensemble: usize,
    pub master_seed: u64,
    /// Relative slack on the bound at every checkpoint.
    pub bound_slack: f64,
    /// Additive Monte Carlo slack on the `Θ` probability floor `1 - ε/2`.
    pub theta_slack: f64,
    /// Checkpoints as fractions of the horizon.
    pub checkpoint_fractions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheckpoint {
    pub k: u64,
    /// Mean of `‖p(k) - e_1‖₁` over paths inside the empirical `Θ`.
    pub empirical: f64,
    /// `E[‖p(k) - e_1‖₁ 1_Θ]` estimated over all paths.
    pub empirical_unconditional: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub theorem: String,
    pub params: serde_json::Value,
    pub horizon: u64,
    pub ensemble_size: usize,
    pub empirical_theta_probability: f64,
    pub theta_floor: f64,
    pub bound_checkpoints: Vec<BoundCheckpoint>,
    /// Ensemble mean of `M_j(horizon)`, with its standard error.
    pub martingale_means: Vec<(f64, f64)>,
    pub inclusion_applicable: bool,
    pub inclusion_violations: u64,
    pub violations: Vec<String>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

struct PathSummary {
    theta: bool,
    l1: Vec<f64>,
    martingale: Vec<f64>,
    inclusion_violations: u64,
}

fn run_path(config: &DynamicsConfig, spec: &EventSpec, seed: u64, checkpoints: &[u64]) -> Result<PathSummary> {
    let mut sim = Simulation::new(config, seed)?;
    let d = sim.state().len();
    let mut monitor = EventMonitor::new(spec.clone(), d);
    let mut l1 = Vec::with_capacity(checkpoints.len());
    let mut next = 0;
    let l1_of = |p: &[f64]| 2.0 * (1.0 - p[spec.leader]);
    while next < checkpoints.len() && checkpoints[next] == 0 {
        l1.push(l1_of(sim.state()));
        next += 1;
    }
    for _ in 0..config.iterations {
        sim.advance()?;
        monitor.observe(sim.previous_state(), sim.last_combined(), sim.state());
        while next < checkpoints.len() && checkpoints[next] == sim.step_index() {
            l1.push(l1_of(sim.state()));
            next += 1;
        }
    }
    Ok(PathSummary {
        theta: monitor.omega(),
        l1,
        martingale: monitor.martingales().to_vec(),
        inclusion_violations: monitor.inclusion_violations().len() as u64,
    })
}

/// Runs the ensemble described by `setup` and checks the `Θ` probability, the
/// bound at each checkpoint and the pathwise inclusion `E(k) ⊆ Ω(k+1)`.
pub fn verify(setup: &VerificationSetup) -> Result<VerificationReport> {
    let (params_json, spec, bound_fn): (serde_json::Value, EventSpec, Box<dyn Fn(u64) -> f64 + Sync>) =
        match &setup.gamma {
            None => {
                let mut params = TheoremParams::from_initial(&setup.p0, setup.epsilon, setup.noise.q_bound)?;
                if let Some(a) = setup.alpha {
                    params.alpha = a;
                }
                let spec = EventSpec::independent(&params)?;
                let p = params.clone();
                (serde_json::to_value(&params)?, spec, Box::new(move |k| bound(k, &p)))
            }
            Some(gamma) => {
                let mut params = corr_params(&setup.p0, gamma, setup.epsilon, setup.noise.q_bound)?;
                params.require_valid()?;
                if let Some(a) = setup.alpha {
                    params.base.alpha = a;
                }
                let spec = EventSpec::correlated(&params, gamma)?;
                let p = params.clone();
                (
                    serde_json::to_value(&params)?,
                    spec,
                    Box::new(move |k| bound_corr(k, &p).unwrap_or(f64::NAN)),
                )
            }
        };
    let mut config = DynamicsConfig::new(InitialState::Probabilities(setup.p0.clone()), spec.alpha, setup.horizon);
    config.noise = setup.noise.clone();
    if let Some(g) = &setup.gamma {
        config.model = ModelVariant::Correlated { gamma: g.clone() };
    }
    config.validate()?;
    let mut checkpoints: Vec<u64> = setup
        .checkpoint_fractions
        .iter()
        .map(|f| (f * setup.horizon as f64).round() as u64)
        .collect();
    checkpoints.sort_unstable();
    checkpoints.dedup();

    let paths: Vec<PathSummary> = (0..setup.ensemble as u64)
        .into_par_iter()
        .map(|i| run_path(&config, &spec, rng::derive_seed(setup.master_seed, i), &checkpoints))
        .collect::<Result<_>>()?;

    let n = paths.len().max(1) as f64;
    let inside: Vec<&PathSummary> = paths.iter().filter(|p| p.theta).collect();
    let theta_probability = inside.len() as f64 / n;
    let theta_floor = 1.0 - setup.epsilon / 2.0 - setup.theta_slack;
    let mut violations = Vec::new();
    if theta_probability < theta_floor {
        violations.push(format!(
            "empirical Θ probability {theta_probability} below {theta_floor}"
        ));
    }
    let mut bound_checkpoints = Vec::new();
    for (c, &k) in checkpoints.iter().enumerate() {
        let sum: f64 = inside.iter().map(|p| p.l1[c]).sum();
        let empirical = if inside.is_empty() { f64::NAN } else { sum / inside.len() as f64 };
        let b = bound_fn(k);
        if !(empirical <= b * (1.0 + setup.bound_slack)) {
            violations.push(format!("k = {k}: mean distance {empirical} exceeds bound {b} with slack {}", setup.bound_slack));
        }
        bound_checkpoints.push(BoundCheckpoint {
            k,
            empirical,
            empirical_unconditional: sum / n,
            bound: b,
        });
    }
    let inclusion_violations: u64 = paths.iter().map(|p| p.inclusion_violations).sum();
    if spec.inclusion_applicable && inclusion_violations > 0 {
        violations.push(format!("{inclusion_violations} steps with E(k) but not Ω(k+1)"));
    }
    let d = setup.p0.dim();
    let martingale_means = (0..d)
        .map(|j| {
            let mean = paths.iter().map(|p| p.martingale[j]).sum::<f64>() / n;
            let var = paths.iter().map(|p| (p.martingale[j] - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            (mean, (var / n).sqrt())
        })
        .collect();
    Ok(VerificationReport {
        theorem: setup.theorem.clone(),
        params: params_json,
        horizon: setup.horizon,
        ensemble_size: paths.len(),
        empirical_theta_probability: theta_probability,
        theta_floor,
        bound_checkpoints,
        martingale_means,
        inclusion_applicable: spec.inclusion_applicable,
        inclusion_violations,
        violations,
    })
}

/// Largest `δ` admissible for priming from `lambda_a` to `lambda_b`:
/// `max_{i≠a} λ_b,i λ_a,a δ / (λ_a,i λ_b,a (1 - δ)) < 1` gives `δ < 1/(1 + r)`.
/// `a` is the leading coordinate of `λ_a ⊙ w0`.
pub fn priming_delta(lambda_a: &IntensityVector, lambda_b: &IntensityVector, w0: &WeightVector) -> Result<f64> {
    let (a, _) = priming_leaders(lambda_a, lambda_b, w0)?;
    let (la, lb) = (lambda_a.as_slice(), lambda_b.as_slice());
    let r = (0..la.len())
        .filter(|&i| i != a)
        .map(|i| lb[i] * la[a] / (la[i] * lb[a]))
        .fold(0.0, f64::max);
    Ok(1.0 / (1.0 + r))
}

fn priming_leaders(lambda_a: &IntensityVector, lambda_b: &IntensityVector, w0: &WeightVector) -> Result<(usize, usize)> {
    let pa = probabilities_from_weights(lambda_a, w0)?;
    let pb = probabilities_from_weights(lambda_b, w0)?;
    let (a, gap_a) = leading_gap(pa.as_slice());
    let (b, gap_b) = leading_gap(pb.as_slice());
    if !(gap_a > 0.0) {
        return Err(Error::Precondition("λ_a ⊙ w0 has no unique largest coordinate".into()));
    }
    if !(gap_b > 0.0) {
        return Err(Error::Precondition("λ_b ⊙ w0 has no unique largest coordinate".into()));
    }
    if a == b {
        return Err(Error::Precondition(format!(
            "λ_a and λ_b favour the same coordinate {a} at w0; priming needs distinct winners"
        )));
    }
    Ok((a, b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimingSetup {
    pub lambda_a: IntensityVector,
    pub lambda_b: IntensityVector,
    pub w0: WeightVector,
    pub alpha: f64,
    #[serde(default)]
    pub noise: NoiseModel,
    pub k_star: u64,
    pub total_k: u64,
    pub ensemble: usize,
    pub master_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimingOutcome {
    pub k_star: u64,
    pub total_k: u64,
    /// Leader under `λ_a`.
    pub leader_a: usize,
    /// Leader under `λ_b`.
    pub leader_b: usize,
    /// Number of runs whose final state has its largest entry at each index.
    pub final_argmax_counts: Vec<usize>,
    pub fraction_to_a: f64,
    pub fraction_to_b: f64,
    pub final_states: Vec<ProbabilityVector>,
}

/// The theorem-derived switch time for priming at confidence `epsilon`, with
/// `δ = delta_fraction · priming_delta`.
pub fn priming_k_star(setup: &PrimingSetup, epsilon: f64, delta_fraction: f64) -> Result<(f64, u64)> {
    let delta = delta_fraction * priming_delta(&setup.lambda_a, &setup.lambda_b, &setup.w0)?;
    let p0 = probabilities_from_weights(&setup.lambda_a, &setup.w0)?;
    let mut params = TheoremParams::from_initial(&p0, epsilon, setup.noise.q_bound)?;
    params.alpha = setup.alpha;
    Ok((delta, iterations_for(delta, &params)?))
}

/// Runs under `λ_a` for `k_star` steps, then under `λ_b`, and reports where
/// each run ends up.
pub fn priming_experiment(setup: &PrimingSetup) -> Result<PrimingOutcome> {
    let (a, b) = priming_leaders(&setup.lambda_a, &setup.lambda_b, &setup.w0)?;
    if setup.total_k < setup.k_star {
        return Err(Error::InvalidInput("total_k must be at least k_star".into()));
    }
    let mut config = DynamicsConfig::new(
        InitialState::Weights {
            lambda: setup.lambda_a.clone(),
            weights: setup.w0.clone(),
        },
        setup.alpha,
        setup.total_k,
    );
    config.noise = setup.noise.clone();
    config.model = ModelVariant::Inhomogeneous {
        schedule: vec![IntensitySegment {
            from: setup.k_star,
            lambda: setup.lambda_b.clone(),
        }],
    };
    config.validate()?;
    let finals: Vec<ProbabilityVector> = (0..setup.ensemble as u64)
        .into_par_iter()
        .map(|i| {
            let mut sim = Simulation::new(&config, rng::derive_seed(setup.master_seed, i))?;
            for _ in 0..config.iterations {
                sim.advance()?;
            }
            Ok(ProbabilityVector::from_normalized(sim.state().to_vec()))
        })
        .collect::<Result<_>>()?;
    let mut counts = vec![0; setup.w0.dim()];
    for p in &finals {
        counts[leading_gap(p.as_slice()).0] += 1;
    }
    let n = finals.len().max(1) as f64;
    Ok(PrimingOutcome {
        k_star: setup.k_star,
        total_k: setup.total_k,
        leader_a: a,
        leader_b: b,
        fraction_to_a: counts[a] as f64 / n,
        fraction_to_b: counts[b] as f64 / n,
        final_argmax_counts: counts,
        final_states: finals,
    })
}
