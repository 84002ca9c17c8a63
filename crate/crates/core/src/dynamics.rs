//! The discrete learning rule.
//!
//! At step `k` one input neuron `ζ_k ~ M(1, p(k))` triggers the postsynaptic
//! spike, every weight receives multiplicative noise, and
//! `w(k+1) = w(k) ⊙ (1 + α Y(k))` with `Y = B + Z`. On probabilities the same
//! rule reads `p ⊙ (1 + αY) / pᵀ(1 + αY)`.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::export;
use crate::rng::{self, StreamRng};
use crate::simplex::{probabilities_from_weights, IntensityVector, ProbabilityVector, WeightVector};

/// Shape of the centered noise `Z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseKind {
    /// `Unif[-a, a]`.
    UniformSymmetric,
    /// A centered discrete law on `atoms` with probabilities `weights`.
    CustomBounded { atoms: Vec<f64>, weights: Vec<f64> },
}

/// Law of the i.i.d. noise components, supported in `[-a, a]` with `a ≤ Q - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    #[serde(flatten)]
    pub kind: NoiseKind,
    pub half_width: f64,
    pub q_bound: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            kind: NoiseKind::UniformSymmetric,
            half_width: 1.0,
            q_bound: 2.0,
        }
    }
}

impl NoiseModel {
    pub fn uniform(half_width: f64, q_bound: f64) -> Result<Self> {
        let m = Self {
            kind: NoiseKind::UniformSymmetric,
            half_width,
            q_bound,
        };
        m.check()?;
        Ok(m)
    }

    pub fn custom(atoms: Vec<f64>, weights: Vec<f64>, half_width: f64, q_bound: f64) -> Result<Self> {
        let m = Self {
            kind: NoiseKind::CustomBounded { atoms, weights },
            half_width,
            q_bound,
        };
        m.check()?;
        Ok(m)
    }

    /// `Z ≡ 0`. Outside the model's assumptions; meant for deterministic checks.
    pub fn silent(q_bound: f64) -> Self {
        Self {
            kind: NoiseKind::CustomBounded {
                atoms: vec![0.0],
                weights: vec![1.0],
            },
            half_width: q_bound - 1.0,
            q_bound,
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.q_bound > 1.0) || !self.q_bound.is_finite() {
            v.push(format!("noise Q = {} must exceed 1", self.q_bound));
        }
        if !(self.half_width > 0.0) || self.half_width > self.q_bound - 1.0 {
            v.push(format!(
                "noise half width {} must lie in (0, Q - 1 = {}]",
                self.half_width,
                self.q_bound - 1.0
            ));
        }
        if let NoiseKind::CustomBounded { atoms, weights } = &self.kind {
            if atoms.is_empty() || atoms.len() != weights.len() {
                v.push("custom noise needs one weight per atom".into());
            } else {
                if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                    v.push("custom noise weights must be nonnegative and sum to 1".into());
                }
                if atoms.iter().any(|a| !(a.abs() <= self.half_width)) {
                    v.push("custom noise atoms must lie in [-half_width, half_width]".into());
                }
                let mean: f64 = atoms.iter().zip(weights).map(|(a, w)| a * w).sum();
                if mean.abs() > 1e-12 {
                    v.push(format!("custom noise must be centered, mean is {mean}"));
                }
            }
        }
        v
    }

    pub fn check(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.kind {
            NoiseKind::UniformSymmetric => self.half_width * (2.0 * rng.random::<f64>() - 1.0),
            NoiseKind::CustomBounded { atoms, weights } => {
                if atoms.len() == 1 {
                    return atoms[0];
                }
                atoms[inverse_cdf(weights, rng.random::<f64>())]
            }
        }
    }
}

/// Index `i` with `Σ_{j<i} p_j ≤ u < Σ_{j≤i} p_j`; rounding leftovers go to
/// the last positive entry.
pub(crate) fn inverse_cdf(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc && pi > 0.0 {
            return i;
        }
    }
    p.iter().rposition(|&x| x > 0.0).unwrap_or(p.len() - 1)
}

/// Draws `ζ ~ M(1, p)` and returns its index.
pub fn sample_trigger<R: Rng + ?Sized>(p: &ProbabilityVector, rng: &mut R) -> usize {
    inverse_cdf(p.as_slice(), rng.random::<f64>())
}

/// Symmetric matrix of simultaneous-spiking probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct CorrelationMatrix {
    dim: usize,
    entries: Vec<f64>,
}

impl CorrelationMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let d = rows.len();
        if d == 0 || rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidInput("correlation matrix must be square and nonempty".into()));
        }
        let entries: Vec<f64> = rows.into_iter().flatten().collect();
        let mut v = Vec::new();
        for i in 0..d {
            if entries[i * d + i] != 1.0 {
                v.push(format!("Γ[{i}][{i}] must equal 1"));
            }
            for j in 0..d {
                let g = entries[i * d + j];
                if g != entries[j * d + i] {
                    v.push(format!("Γ must be symmetric at ({i}, {j})"));
                }
                if i != j && !(0.0..1.0).contains(&g) {
                    v.push(format!("off-diagonal Γ[{i}][{j}] = {g} must lie in [0, 1)"));
                }
            }
        }
        if v.is_empty() {
            Ok(Self { dim: d, entries })
        } else {
            Err(Error::InvalidInput(v.join("; ")))
        }
    }

    pub fn identity(d: usize) -> Self {
        let mut entries = vec![0.0; d * d];
        for i in 0..d {
            entries[i * d + i] = 1.0;
        }
        Self { dim: d, entries }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    /// `Γ p`.
    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.apply_into(p, &mut out);
        out
    }

    pub(crate) fn apply_into(&self, p: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.entries[i * self.dim..(i + 1) * self.dim]
                .iter()
                .zip(p)
                .map(|(g, x)| g * x)
                .sum();
        }
    }

    /// Largest off-diagonal entry `ν`.
    pub fn max_off_diagonal(&self) -> f64 {
        let d = self.dim;
        (0..d)
            .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| self.get(i, j))
            .fold(0.0, f64::max)
    }

    /// `‖Γ‖_∞`, the largest absolute row sum.
    pub fn row_sum_norm(&self) -> f64 {
        (0..self.dim)
            .map(|i| self.entries[i * self.dim..(i + 1) * self.dim].iter().map(|x| x.abs()).sum())
            .fold(0.0, f64::max)
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for CorrelationMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(rows)
    }
}

impl From<CorrelationMatrix> for Vec<Vec<f64>> {
    fn from(g: CorrelationMatrix) -> Self {
        g.rows()
    }
}

/// The randomness of one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSample {
    pub trigger_index: usize,
    /// One-hot `B`.
    pub trigger: Vec<f64>,
    /// Correlated model only: `S = C B`, the spike pattern replacing `B`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coactivation: Option<Vec<f64>>,
    pub noise: Vec<f64>,
    /// `Y = B + Z`, or `S + Z` in the correlated model.
    pub combined: Vec<f64>,
}

impl StepSample {
    /// Builds a sample from its parts, computing `Y`.
    pub fn new(trigger_index: usize, noise: Vec<f64>) -> Self {
        let d = noise.len();
        let mut trigger = vec![0.0; d];
        trigger[trigger_index] = 1.0;
        let combined = trigger.iter().zip(&noise).map(|(b, z)| b + z).collect();
        Self {
            trigger_index,
            trigger,
            coactivation: None,
            noise,
            combined,
        }
    }

    fn with_coactivation(trigger_index: usize, s: Vec<f64>, noise: Vec<f64>) -> Self {
        let mut sample = Self::new(trigger_index, noise);
        sample.combined = s.iter().zip(&sample.noise).map(|(a, z)| a + z).collect();
        sample.coactivation = Some(s);
        sample
    }
}

/// Draws one step into `s` (the 0/1 spike pattern), `z` and `y = s + z`;
/// returns the trigger index. With `gamma`, `s` is the `ζ`-th column of a
/// Bernoulli matrix `C ~ Ber(Γ)` instead of the one-hot `B`.
pub(crate) fn draw_into<R: Rng + ?Sized>(
    p: &[f64],
    noise: &NoiseModel,
    gamma: Option<&CorrelationMatrix>,
    rng: &mut R,
    buf: &mut DrawBuffers,
) -> usize {
    let zeta = inverse_cdf(p, rng.random::<f64>());
    match gamma {
        None => {
            for (i, si) in buf.s.iter_mut().enumerate() {
                *si = if i == zeta { 1.0 } else { 0.0 };
            }
        }
        Some(g) => {
            for (i, si) in buf.s.iter_mut().enumerate() {
                let u = rng.random::<f64>();
                *si = if i == zeta || u < g.get(i, zeta) { 1.0 } else { 0.0 };
            }
        }
    }
    for ((zi, yi), si) in buf.z.iter_mut().zip(buf.y.iter_mut()).zip(&buf.s) {
        *zi = noise.sample(rng);
        *yi = si + *zi;
    }
    zeta
}

#[derive(Debug, Clone)]
pub(crate) struct DrawBuffers {
    pub s: Vec<f64>,
    pub z: Vec<f64>,
    pub y: Vec<f64>,
}

impl DrawBuffers {
    pub fn new(d: usize) -> Self {
        Self {
            s: vec![0.0; d],
            z: vec![0.0; d],
            y: vec![0.0; d],
        }
    }
}

/// Draws the randomness of one independent-model step.
pub fn sample_step<R: Rng + ?Sized>(p: &ProbabilityVector, noise: &NoiseModel, rng: &mut R) -> StepSample {
    let zeta = sample_trigger(p, rng);
    let z = (0..p.dim()).map(|_| noise.sample(rng)).collect();
    StepSample::new(zeta, z)
}

/// Draws the randomness of one correlated-model step.
pub fn sample_correlated_step<R: Rng + ?Sized>(
    p: &ProbabilityVector,
    gamma: &CorrelationMatrix,
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<StepSample> {
    check_dim(p.dim(), gamma.dim())?;
    let zeta = sample_trigger(p, rng);
    let s = (0..p.dim())
        .map(|i| {
            let u = rng.random::<f64>();
            if i == zeta || u < gamma.get(i, zeta) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let z = (0..p.dim()).map(|_| noise.sample(rng)).collect();
    Ok(StepSample::with_coactivation(zeta, s, z))
}

/// `w ⊙ (1 + α Y)`.
pub fn step_weights(w: &WeightVector, alpha: f64, y: &[f64]) -> Result<WeightVector> {
    check_dim(w.dim(), y.len())?;
    let next: Vec<f64> = w.as_slice().iter().zip(y).map(|(w, y)| w * (1.0 + alpha * y)).collect();
    WeightVector::new(next)
}

/// `p ⊙ (1 + αY) / pᵀ(1 + αY)`.
pub fn step_probabilities(p: &ProbabilityVector, alpha: f64, y: &[f64]) -> Result<ProbabilityVector> {
    check_dim(p.dim(), y.len())?;
    let mut next = p.as_slice().to_vec();
    multiplicative_update(&mut next, alpha, y);
    Ok(ProbabilityVector::from_normalized(next))
}

pub(crate) fn multiplicative_update(p: &mut [f64], alpha: f64, y: &[f64]) {
    let mut total = 0.0;
    for (pi, yi) in p.iter_mut().zip(y) {
        *pi *= 1.0 + alpha * yi;
        total += *pi;
    }
    for pi in p.iter_mut() {
        *pi /= total;
    }
}

/// One correlated step: draws the sample and applies [`step_probabilities`].
pub fn step_correlated<R: Rng + ?Sized>(
    p: &ProbabilityVector,
    gamma: &CorrelationMatrix,
    alpha: f64,
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<(ProbabilityVector, StepSample)> {
    let sample = sample_correlated_step(p, gamma, noise, rng)?;
    let next = step_probabilities(p, alpha, &sample.combined)?;
    Ok((next, sample))
}

/// Updates the weights, then reads the probabilities under the next intensities.
pub fn step_inhomogeneous(
    w: &WeightVector,
    lambda_next: &IntensityVector,
    alpha: f64,
    y: &[f64],
) -> Result<(WeightVector, ProbabilityVector)> {
    let w_next = step_weights(w, alpha, y)?;
    let p_next = probabilities_from_weights(lambda_next, &w_next)?;
    Ok((w_next, p_next))
}

/// First-order split of one step into drift, centered noise and remainder:
/// `p(k+1) = p + α·drift - α·ξ - θ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseDecomposition {
    /// `p ⊙ (m - (pᵀm) 1)` with `m = E[Y | p]`.
    pub drift: Vec<f64>,
    pub xi: Vec<f64>,
    pub theta: Vec<f64>,
    /// `α² 2Q² / (1 - Qα)³ · p_i (1 - p_i)`.
    pub theta_bound: Vec<f64>,
}

/// Decomposition for the independent model, where `E[Y | p] = p`.
pub fn decompose_step(p: &ProbabilityVector, alpha: f64, y: &[f64], q_bound: f64) -> Result<NoiseDecomposition> {
    decompose_step_with_mean(p, alpha, y, p.as_slice(), q_bound)
}

/// Decomposition given the conditional mean `m = E[Y | p]` (`Γp` when correlated).
pub fn decompose_step_with_mean(
    p: &ProbabilityVector,
    alpha: f64,
    y: &[f64],
    mean: &[f64],
    q_bound: f64,
) -> Result<NoiseDecomposition> {
    let p = p.as_slice();
    check_dim(p.len(), y.len())?;
    check_dim(p.len(), mean.len())?;
    let pm: f64 = p.iter().zip(mean).map(|(a, b)| a * b).sum();
    let s: f64 = p.iter().zip(y).map(|(a, b)| a * b).sum();
    let drift = p.iter().zip(mean).map(|(pi, mi)| pi * (mi - pm)).collect();
    let mut xi = vec![0.0; p.len()];
    xi_into(p, y, mean, &mut xi);
    let theta = p
        .iter()
        .zip(y)
        .map(|(pi, yi)| alpha * alpha * pi * s * (yi - s) / (1.0 + alpha * s))
        .collect();
    let c = theta_bound_constant(alpha, q_bound);
    let theta_bound = p.iter().map(|pi| c * pi * (1.0 - pi)).collect();
    Ok(NoiseDecomposition {
        drift,
        xi,
        theta,
        theta_bound,
    })
}

/// `ξ_i = p_i (m_i - pᵀm - Y_i + pᵀY)`.
pub(crate) fn xi_into(p: &[f64], y: &[f64], mean: &[f64], out: &mut [f64]) {
    let pm: f64 = p.iter().zip(mean).map(|(a, b)| a * b).sum();
    let s: f64 = p.iter().zip(y).map(|(a, b)| a * b).sum();
    for i in 0..p.len() {
        out[i] = p[i] * (mean[i] - pm - y[i] + s);
    }
}

/// `α² 2Q² / (1 - Qα)³`.
pub fn theta_bound_constant(alpha: f64, q_bound: f64) -> f64 {
    alpha * alpha * 2.0 * q_bound * q_bound / (1.0 - q_bound * alpha).powi(3)
}

/// Starting point of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    Probabilities(ProbabilityVector),
    /// Tracks the weights and derives `p` through the intensities.
    Weights { lambda: IntensityVector, weights: WeightVector },
}

impl InitialState {
    pub fn dim(&self) -> usize {
        match self {
            InitialState::Probabilities(p) => p.dim(),
            InitialState::Weights { weights, .. } => weights.dim(),
        }
    }
}

/// Intensities in force from step `from` on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensitySegment {
    pub from: u64,
    pub lambda: IntensityVector,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ModelVariant {
    #[default]
    Independent,
    Correlated { gamma: CorrelationMatrix },
    /// Piecewise-constant intensities; requires a weight-based initial state.
    Inhomogeneous { schedule: Vec<IntensitySegment> },
}

fn default_stride() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsConfig {
    pub alpha: f64,
    #[serde(default)]
    pub noise: NoiseModel,
    pub iterations: u64,
    pub initial: InitialState,
    #[serde(default)]
    pub model: ModelVariant,
    /// Record every `stride`-th state (the final state is always recorded).
    #[serde(default = "default_stride")]
    pub stride: u64,
    #[serde(default)]
    pub record_samples: bool,
}

impl DynamicsConfig {
    pub fn new(initial: InitialState, alpha: f64, iterations: u64) -> Self {
        Self {
            alpha,
            noise: NoiseModel::default(),
            iterations,
            initial,
            model: ModelVariant::Independent,
            stride: 1,
            record_samples: false,
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = self.noise.violations();
        let q = self.noise.q_bound;
        if !(self.alpha > 0.0) || !(self.alpha < 1.0 / q) {
            v.push(format!("learning rate α = {} must lie in (0, 1/Q = {})", self.alpha, 1.0 / q));
        }
        if self.stride == 0 {
            v.push("stride must be positive".into());
        }
        let d = self.initial.dim();
        if let InitialState::Weights { lambda, weights } = &self.initial {
            if lambda.dim() != weights.dim() {
                v.push("initial intensities and weights differ in dimension".into());
            }
        }
        match &self.model {
            ModelVariant::Independent => {}
            ModelVariant::Correlated { gamma } => {
                if gamma.dim() != d {
                    v.push(format!("Γ has dimension {} but the state has {d}", gamma.dim()));
                }
            }
            ModelVariant::Inhomogeneous { schedule } => {
                if !matches!(self.initial, InitialState::Weights { .. }) {
                    v.push("the inhomogeneous model needs initial intensities and weights".into());
                }
                if schedule.iter().any(|s| s.lambda.dim() != d) {
                    v.push("every scheduled intensity vector must match the state dimension".into());
                }
                if schedule.windows(2).any(|w| w[0].from >= w[1].from) {
                    v.push("schedule segments must start at strictly increasing steps".into());
                }
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v))
        }
    }

    pub fn digest(&self) -> Result<String> {
        export::digest(self)
    }

    pub fn gamma(&self) -> Option<&CorrelationMatrix> {
        match &self.model {
            ModelVariant::Correlated { gamma } => Some(gamma),
            _ => None,
        }
    }
}

/// A run advanced one step at a time, for callers that observe each step
/// without storing it.
pub struct Simulation<'a> {
    config: &'a DynamicsConfig,
    rng: StreamRng,
    k: u64,
    p: Vec<f64>,
    prev: Vec<f64>,
    w: Option<Vec<f64>>,
    lambda: Option<Vec<f64>>,
    draw: DrawBuffers,
    mean: Vec<f64>,
    trigger: usize,
    segment: usize,
}

impl<'a> Simulation<'a> {
    pub fn new(config: &'a DynamicsConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (p, w, lambda) = match &config.initial {
            InitialState::Probabilities(p) => (p.as_slice().to_vec(), None, None),
            InitialState::Weights { lambda, weights } => {
                let lambda = match &config.model {
                    ModelVariant::Inhomogeneous { schedule } => schedule
                        .iter()
                        .take_while(|s| s.from == 0)
                        .last()
                        .map_or(lambda.clone(), |s| s.lambda.clone()),
                    _ => lambda.clone(),
                };
                let p = probabilities_from_weights(&lambda, weights)?;
                (
                    p.into_inner(),
                    Some(weights.as_slice().to_vec()),
                    Some(lambda.as_slice().to_vec()),
                )
            }
        };
        let d = p.len();
        Ok(Self {
            config,
            rng: rng::stream(seed, 0),
            k: 0,
            prev: p.clone(),
            p,
            w,
            lambda,
            draw: DrawBuffers::new(d),
            mean: vec![0.0; d],
            trigger: 0,
            segment: 0,
        })
    }

    pub fn step_index(&self) -> u64 {
        self.k
    }

    pub fn state(&self) -> &[f64] {
        &self.p
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.w.as_deref()
    }

    /// State before the last [`advance`](Self::advance).
    pub fn previous_state(&self) -> &[f64] {
        &self.prev
    }

    /// `Y` drawn by the last [`advance`](Self::advance).
    pub fn last_combined(&self) -> &[f64] {
        &self.draw.y
    }

    pub fn last_trigger(&self) -> usize {
        self.trigger
    }

    /// `E[Y | p]` at the previous state.
    pub fn last_conditional_mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn advance(&mut self) -> Result<()> {
        let gamma = self.config.gamma();
        self.prev.copy_from_slice(&self.p);
        match gamma {
            Some(g) => g.apply_into(&self.prev, &mut self.mean),
            None => self.mean.copy_from_slice(&self.prev),
        }
        self.trigger = draw_into(&self.p, &self.config.noise, gamma, &mut self.rng, &mut self.draw);
        let alpha = self.config.alpha;
        self.k += 1;
        match (&mut self.w, &mut self.lambda) {
            (Some(w), Some(lambda)) => {
                for (wi, yi) in w.iter_mut().zip(&self.draw.y) {
                    *wi *= 1.0 + alpha * yi;
                }
                if let ModelVariant::Inhomogeneous { schedule } = &self.config.model {
                    while let Some(seg) = schedule.get(self.segment) {
                        if seg.from > self.k {
                            break;
                        }
                        lambda.copy_from_slice(seg.lambda.as_slice());
                        self.segment += 1;
                    }
                }
                let mut total = 0.0;
                for ((pi, wi), li) in self.p.iter_mut().zip(w.iter()).zip(lambda.iter()) {
                    *pi = wi * li;
                    total += *pi;
                }
                if !(total > 0.0) || !total.is_finite() {
                    return Err(Error::NonpositiveWeight {
                        iteration: self.k as usize,
                        neuron: 0,
                    });
                }
                for pi in self.p.iter_mut() {
                    *pi /= total;
                }
            }
            _ => multiplicative_update(&mut self.p, alpha, &self.draw.y),
        }
        Ok(())
    }

    fn sample(&self) -> StepSample {
        let mut sample = StepSample::new(self.trigger, self.draw.z.clone());
        if self.config.gamma().is_some() {
            sample.coactivation = Some(self.draw.s.clone());
        }
        sample.combined = self.draw.y.clone();
        sample
    }
}

/// States (and optionally weights and samples) of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    /// Step index of each recorded state.
    pub steps: Vec<u64>,
    pub states: Vec<ProbabilityVector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<WeightVector>>,
    /// One entry per step, when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<StepSample>>,
    pub seed: u64,
    pub config_digest: String,
}

impl TrajectoryRecord {
    pub fn final_state(&self) -> &ProbabilityVector {
        self.states.last().expect("a record holds at least the initial state")
    }

    pub fn dim(&self) -> usize {
        self.states[0].dim()
    }

    /// CSV `k,p_1,...,p_d[,w_1,...,w_d]`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        let d = self.dim();
        let mut header = vec!["k".to_string()];
        header.extend(export::indexed_header("p", d));
        if self.weights.is_some() {
            header.extend(export::indexed_header("w", d));
        }
        export::write_header(out, &header)?;
        for (i, (k, p)) in self.steps.iter().zip(&self.states).enumerate() {
            let mut values = p.as_slice().to_vec();
            if let Some(ws) = &self.weights {
                values.extend_from_slice(ws[i].as_slice());
            }
            export::write_row(out, &[k.to_string()], &values)?;
        }
        Ok(())
    }
}

/// Runs `config` under `seed`. Deterministic in `(config, seed)`.
///
/// ```
/// use simplex_stdp::dynamics::{run_trajectory, DynamicsConfig, InitialState};
/// use simplex_stdp::simplex::ProbabilityVector;
///
/// let p0 = ProbabilityVector::new(vec![0.3, 0.3, 0.4]).unwrap();
/// let config = DynamicsConfig::new(InitialState::Probabilities(p0), 0.01, 2000);
/// let a = run_trajectory(&config, 7).unwrap();
/// let b = run_trajectory(&config, 7).unwrap();
/// assert_eq!(a, b);
/// assert_eq!(a.states.len(), 2001);
/// ```
pub fn run_trajectory(config: &DynamicsConfig, seed: u64) -> Result<TrajectoryRecord> {
    let mut sim = Simulation::new(config, seed)?;
    let record_weights = sim.weights().is_some();
    let mut steps = vec![0];
    let mut states = vec![ProbabilityVector::from_normalized(sim.state().to_vec())];
    let mut weights = record_weights.then(|| vec![WeightVector::from_raw(sim.weights().unwrap().to_vec())]);
    let mut samples = config.record_samples.then(Vec::new);
    for _ in 0..config.iterations {
        sim.advance()?;
        if let Some(s) = &mut samples {
            s.push(sim.sample());
        }
        let k = sim.step_index();
        if k % config.stride == 0 || k == config.iterations {
            steps.push(k);
            states.push(ProbabilityVector::from_normalized(sim.state().to_vec()));
            if let Some(ws) = &mut weights {
                ws.push(WeightVector::from_raw(sim.weights().unwrap().to_vec()));
            }
        }
    }
    Ok(TrajectoryRecord {
        steps,
        states,
        weights,
        samples,
        seed,
        config_digest: config.digest()?,
    })
}

/// `count` runs seeded by [`rng::derive_seed`]`(master_seed, i)`, in parallel.
pub fn run_ensemble(config: &DynamicsConfig, master_seed: u64, count: usize) -> Result<Vec<TrajectoryRecord>> {
    config.validate()?;
    (0..count as u64)
        .into_par_iter()
        .map(|i| run_trajectory(config, rng::derive_seed(master_seed, i)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub config_digest: String,
    pub master_seed: u64,
    pub seeds: Vec<u64>,
    pub files: Vec<String>,
}

/// Writes one CSV per run and a `manifest.json` into `dir`.
pub fn write_ensemble(dir: &Path, master_seed: u64, records: &[TrajectoryRecord]) -> Result<EnsembleManifest> {
    std::fs::create_dir_all(dir)?;
    let width = records.len().saturating_sub(1).to_string().len().max(3);
    let mut files = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let name = format!("trajectory_{i:0width$}.csv");
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(&name))?);
        r.write_csv(&mut f)?;
        f.flush()?;
        files.push(name);
    }
    let manifest = EnsembleManifest {
        config_digest: records.first().map(|r| r.config_digest.clone()).unwrap_or_default(),
        master_seed,
        seeds: records.iter().map(|r| r.seed).collect(),
        files,
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn pv(v: &[f64]) -> ProbabilityVector {
        ProbabilityVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn degenerate_trigger() {
        let mut r = rng::stream(1, 0);
        let p = pv(&[0.0, 1.0, 0.0]);
        assert!((0..1000).all(|_| sample_trigger(&p, &mut r) == 1));
    }

    #[test]
    fn trigger_frequencies() {
        let mut r = rng::stream(2, 0);
        let p = pv(&[4.0 / 9.0, 1.0 / 3.0, 2.0 / 9.0]);
        let n = 1_000_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[sample_trigger(&p, &mut r)] += 1;
        }
        for i in 0..3 {
            assert!((counts[i] as f64 / n as f64 - p[i]).abs() < 0.005);
        }
    }

    #[test]
    fn weight_step_example() {
        let w = WeightVector::new(vec![1.0, 1.0]).unwrap();
        let next = step_weights(&w, 0.1, &[1.0, -0.5]).unwrap();
        assert!((next.as_slice()[0] - 1.1).abs() < 1e-15);
        assert!((next.as_slice()[1] - 0.95).abs() < 1e-15);
        assert_eq!(step_weights(&w, 0.1, &[0.0, 0.0]).unwrap(), w);
    }

    #[test]
    fn probability_step_examples() {
        let p = pv(&[0.5, 0.5]);
        let next = step_probabilities(&p, 0.1, &[1.0, 0.0]).unwrap();
        assert!((next[0] - 11.0 / 21.0).abs() < 1e-15);
        assert!((next[1] - 10.0 / 21.0).abs() < 1e-15);
        let p = pv(&[0.6, 0.4, 0.0]);
        let next = step_probabilities(&p, 0.3, &[-0.9, 1.7, 2.0]).unwrap();
        assert_eq!(next[2], 0.0);
        assert_eq!(step_probabilities(&p, 0.3, &[0.0; 3]).unwrap(), p);
    }

    #[test]
    fn xi_vanishes_at_conditional_mean() {
        let p = pv(&[0.5, 0.3, 0.2]);
        let dec = decompose_step(&p, 0.1, p.as_slice(), 2.0).unwrap();
        assert!(dec.xi.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn decomposition_reconstructs_step() {
        let mut r = rng::stream(3, 0);
        let noise = NoiseModel::default();
        let p = pv(&[0.5, 0.3, 0.2]);
        for &alpha in &[0.1, 0.01, 0.001] {
            for _ in 0..1000 {
                let s = sample_step(&p, &noise, &mut r);
                let next = step_probabilities(&p, alpha, &s.combined).unwrap();
                let dec = decompose_step(&p, alpha, &s.combined, 2.0).unwrap();
                for i in 0..3 {
                    let rebuilt = p[i] + alpha * dec.drift[i] - alpha * dec.xi[i] - dec.theta[i];
                    assert!((rebuilt - next[i]).abs() < 1e-13);
                    assert!(dec.theta[i].abs() <= dec.theta_bound[i] + 1e-15);
                }
            }
        }
    }

    #[test]
    fn correlated_identity_matches_independent_draws() {
        let g = CorrelationMatrix::identity(3);
        let p = pv(&[0.2, 0.5, 0.3]);
        let mut r = rng::stream(4, 0);
        for _ in 0..100 {
            let s = sample_correlated_step(&p, &g, &NoiseModel::default(), &mut r).unwrap();
            assert_eq!(s.coactivation.as_ref().unwrap(), &s.trigger);
        }
    }

    #[test]
    fn correlated_deterministic_trigger() {
        let g = CorrelationMatrix::new(vec![vec![1.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let p = pv(&[1.0, 0.0]);
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut second = 0;
        for _ in 0..10_000 {
            let s = sample_correlated_step(&p, &g, &NoiseModel::default(), &mut r).unwrap();
            let c = s.coactivation.unwrap();
            assert_eq!(c[0], 1.0);
            second += c[1] as usize;
        }
        assert!((second as f64 / 10_000.0 - 0.5).abs() < 0.03);
    }

    #[test]
    fn correlation_matrix_validation() {
        assert!(CorrelationMatrix::new(vec![vec![1.0, 0.2], vec![0.3, 1.0]]).is_err());
        assert!(CorrelationMatrix::new(vec![vec![1.0, 1.0], vec![1.0, 1.0]]).is_err());
        assert!(CorrelationMatrix::new(vec![vec![0.9, 0.0], vec![0.0, 1.0]]).is_err());
        let g = CorrelationMatrix::new(vec![
            vec![1.0, 0.1, 0.1],
            vec![0.1, 1.0, 0.0],
            vec![0.1, 0.0, 1.0],
        ])
        .unwrap();
        assert_eq!(g.max_off_diagonal(), 0.1);
        assert!((g.row_sum_norm() - 1.2).abs() < 1e-15);
    }

    #[test]
    fn inhomogeneous_step_forms_agree() {
        let w = WeightVector::new(vec![1.0, 2.0, 0.5]).unwrap();
        let l1 = IntensityVector::new(vec![1.0, 2.0, 3.0]).unwrap();
        let l2 = IntensityVector::new(vec![2.0, 4.0, 6.0]).unwrap();
        let y = [1.4, -0.3, 0.2];
        let (_, a) = step_inhomogeneous(&w, &l1, 0.2, &y).unwrap();
        let (_, b) = step_inhomogeneous(&w, &l2, 0.2, &y).unwrap();
        let c = step_probabilities(&probabilities_from_weights(&l1, &w).unwrap(), 0.2, &y).unwrap();
        for i in 0..3 {
            assert!((a[i] - b[i]).abs() < 1e-15);
            assert!((a[i] - c[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn config_validation_lists_every_violation() {
        let mut c = DynamicsConfig::new(InitialState::Probabilities(pv(&[0.5, 0.5])), 0.6, 10);
        c.stride = 0;
        match c.validate() {
            Err(Error::InvalidConfig(v)) => assert_eq!(v.len(), 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_iterations_keeps_initial_state() {
        let c = DynamicsConfig::new(InitialState::Probabilities(pv(&[0.3, 0.7])), 0.01, 0);
        let r = run_trajectory(&c, 1).unwrap();
        assert_eq!(r.states, vec![pv(&[0.3, 0.7])]);
        assert_eq!(r.steps, vec![0]);
    }

    #[test]
    fn stride_records_final_state() {
        let mut c = DynamicsConfig::new(InitialState::Probabilities(pv(&[0.3, 0.7])), 0.01, 25);
        c.stride = 10;
        let r = run_trajectory(&c, 1).unwrap();
        assert_eq!(r.steps, vec![0, 10, 20, 25]);
    }

    #[test]
    fn recorded_samples_replay_the_run() {
        let mut c = DynamicsConfig::new(InitialState::Probabilities(pv(&[0.3, 0.3, 0.4])), 0.05, 200);
        c.record_samples = true;
        let r = run_trajectory(&c, 9).unwrap();
        let samples = r.samples.as_ref().unwrap();
        for k in 0..200 {
            let next = step_probabilities(&r.states[k], 0.05, &samples[k].combined).unwrap();
            assert_eq!(next, r.states[k + 1]);
            assert_eq!(samples[k].trigger[samples[k].trigger_index], 1.0);
        }
    }

    #[test]
    fn csv_header_and_length() {
        let c = DynamicsConfig::new(
            InitialState::Weights {
                lambda: IntensityVector::new(vec![2.0, 1.0]).unwrap(),
                weights: WeightVector::ones(2),
            },
            0.01,
            3,
        );
        let r = run_trajectory(&c, 1).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "k,p_1,p_2,w_1,w_2");
        assert_eq!(text.lines().count(), 5);
    }
}
