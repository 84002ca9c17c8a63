//! Several output neurons reading the same inputs.
//!
//! Column `j` of a [`WeightMatrix`] holds the synapses of output neuron `j`.
//! [`algorithm1_run`] trains all columns jointly and removes from each
//! neuron's change its component along the neurons before it.
//! [`algorithm2_run`] trains the columns one after another, fixing each as a
//! scaled basis vector before the next one starts.
//!
//! Both update lines are applied as increments: `w_j(k+1) = w_j(k) + change`.
//! The readings are stored in every result under `update_reading`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{draw_into, DrawBuffers, NoiseModel};
use crate::error::{check_dim, Error, Result};
use crate::export;
use crate::rng::{self, StreamRng};
use crate::simplex::{probabilities_from_weights, IntensityVector, ProbabilityVector, WeightVector};

pub const ALGORITHM1_READING: &str =
    "w_j(k+1) = w_j(k) + (Δw_j(k) minus its projection onto span{w_1(k),...,w_{j-1}(k)})";
pub const ALGORITHM2_READING: &str = "w_j(k+1) = w_j(k) ⊙ (1 + α(B_j(k) + Z_j(k)))";

/// Square matrix of weights, one column per output neuron.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<WeightVector>", into = "Vec<WeightVector>")]
pub struct WeightMatrix {
    columns: Vec<WeightVector>,
}

impl WeightMatrix {
    pub fn new(columns: Vec<WeightVector>) -> Result<Self> {
        let d = columns.len();
        if d == 0 {
            return Err(Error::InvalidInput("weight matrix needs at least one column".into()));
        }
        for c in &columns {
            check_dim(d, c.dim())?;
        }
        Ok(Self { columns })
    }

    /// Every entry equal to one.
    pub fn ones(d: usize) -> Self {
        Self {
            columns: vec![WeightVector::ones(d); d],
        }
    }

    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[WeightVector] {
        &self.columns
    }

    pub fn column(&self, j: usize) -> &WeightVector {
        &self.columns[j]
    }
}

impl TryFrom<Vec<WeightVector>> for WeightMatrix {
    type Error = Error;
    fn try_from(v: Vec<WeightVector>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<WeightMatrix> for Vec<WeightVector> {
    fn from(m: WeightMatrix) -> Self {
        m.columns
    }
}

/// Columns `p_j = λ ⊙ w_j / λᵀw_j`.
pub type ProbabilityMatrix = Vec<ProbabilityVector>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiRunConfig {
    pub lambda: IntensityVector,
    /// One rate per output neuron for Algorithm 1; Algorithm 2 uses the first.
    pub alphas: Vec<f64>,
    pub iterations: u64,
    #[serde(default)]
    pub noise: NoiseModel,
    pub seed: u64,
    /// Record every `stride`-th step (the final step is always kept).
    #[serde(default = "default_stride")]
    pub stride: u64,
}

fn default_stride() -> u64 {
    1
}

impl MultiRunConfig {
    pub fn new(lambda: IntensityVector, alphas: Vec<f64>, iterations: u64, seed: u64) -> Self {
        Self {
            lambda,
            alphas,
            iterations,
            noise: NoiseModel::default(),
            seed,
            stride: 1,
        }
    }

    /// Rates `base · (1, 0.75, 0.5)` on `λ = (10, 7.5, 5)`.
    pub fn figure3(base: f64, iterations: u64, seed: u64) -> Self {
        let lambda = IntensityVector::new(vec![10.0, 7.5, 5.0]).expect("positive intensities");
        Self::new(lambda, vec![base, 0.75 * base, 0.5 * base], iterations, seed)
    }

    pub fn dim(&self) -> usize {
        self.lambda.dim()
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = self.noise.violations();
        if self.alphas.is_empty() {
            out.push("at least one learning rate is required".into());
        }
        for (j, &a) in self.alphas.iter().enumerate() {
            if !(a > 0.0) || !a.is_finite() {
                out.push(format!("alpha_{} = {a} must be positive", j + 1));
            } else if a * self.noise.q_bound >= 1.0 {
                out.push(format!(
                    "alpha_{} = {a} must be below 1/Q = {}",
                    j + 1,
                    1.0 / self.noise.q_bound
                ));
            }
        }
        if self.stride == 0 {
            out.push("stride must be positive".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v))
        }
    }
}

/// A negative entry set to zero after an update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipEvent {
    pub iteration: u64,
    pub neuron: usize,
    pub coordinate: usize,
    pub value: f64,
}

/// Source of `Y = B + Z` for one neuron.
pub trait StepSampler {
    /// Fills `y` given the current probabilities and returns the trigger index.
    fn draw(&mut self, p: &[f64], y: &mut [f64]) -> usize;
}

/// Draws `B ~ M(1, p)` and i.i.d. noise from one ChaCha stream.
pub struct RandomSampler<'a> {
    rng: StreamRng,
    noise: &'a NoiseModel,
    buf: DrawBuffers,
}

impl<'a> RandomSampler<'a> {
    pub fn new(noise: &'a NoiseModel, seed: u64, lane: u64, d: usize) -> Self {
        Self {
            rng: rng::stream(seed, lane),
            noise,
            buf: DrawBuffers::new(d),
        }
    }
}

impl StepSampler for RandomSampler<'_> {
    fn draw(&mut self, p: &[f64], y: &mut [f64]) -> usize {
        let zeta = draw_into(p, self.noise, None, &mut self.rng, &mut self.buf);
        y.copy_from_slice(&self.buf.y);
        zeta
    }
}

/// Weight and probability paths of an Algorithm 1 run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Algorithm1Record {
    pub steps: Vec<u64>,
    pub weights: Vec<WeightMatrix>,
    pub probabilities: Vec<ProbabilityMatrix>,
    pub clips: Vec<ClipEvent>,
    pub seed: u64,
    pub update_reading: String,
}

impl Algorithm1Record {
    pub fn final_probabilities(&self) -> &ProbabilityMatrix {
        self.probabilities.last().expect("a record holds the initial state")
    }

    pub fn final_error(&self) -> f64 {
        frobenius_half_error(self.final_probabilities())
    }

    /// CSV `k,j,p_1,...,p_d`, one row per recorded step and neuron.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        let d = self.probabilities[0].len();
        let mut header = vec!["k".to_string(), "j".to_string()];
        header.extend(export::indexed_header("p", d));
        export::write_header(out, &header)?;
        for (k, pm) in self.steps.iter().zip(&self.probabilities) {
            for (j, p) in pm.iter().enumerate() {
                export::write_row(out, &[k.to_string(), (j + 1).to_string()], p.as_slice())?;
            }
        }
        Ok(())
    }
}

fn probabilities_into(lambda: &[f64], w: &[f64], p: &mut [f64]) -> bool {
    let mut total = 0.0;
    for ((pi, wi), li) in p.iter_mut().zip(w).zip(lambda) {
        *pi = wi * li;
        total += *pi;
    }
    if !(total > 0.0) || !total.is_finite() {
        return false;
    }
    for pi in p.iter_mut() {
        *pi /= total;
    }
    true
}

/// Euclidean norm, scaled so that large weights do not overflow.
pub(crate) fn norm(v: &[f64]) -> f64 {
    let m = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if m == 0.0 || !m.is_finite() {
        return m;
    }
    m * v.iter().map(|x| (x / m) * (x / m)).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Orthonormal basis of the span of `vectors`, skipping dependent ones.
fn orthonormal_basis<'a>(vectors: impl Iterator<Item = &'a [f64]>) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        let scale = norm(v);
        if scale == 0.0 {
            continue;
        }
        let mut u: Vec<f64> = v.iter().map(|x| x / scale).collect();
        for b in &basis {
            let c = dot(&u, b);
            for (ui, bi) in u.iter_mut().zip(b) {
                *ui -= c * bi;
            }
        }
        let r = norm(&u);
        if r > 1e-12 {
            u.iter_mut().for_each(|x| *x /= r);
            basis.push(u);
        }
    }
    basis
}

fn remove_span(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let c = dot(v, b);
        for (vi, bi) in v.iter_mut().zip(b) {
            *vi -= c * bi;
        }
    }
}

fn clip(w: &mut [f64], iteration: u64, neuron: usize, clips: &mut Vec<ClipEvent>) -> Result<()> {
    for (i, wi) in w.iter_mut().enumerate() {
        if !wi.is_finite() {
            return Err(Error::NonpositiveWeight {
                iteration: iteration as usize,
                neuron,
            });
        }
        if *wi < 0.0 {
            clips.push(ClipEvent {
                iteration,
                neuron,
                coordinate: i,
                value: *wi,
            });
            *wi = 0.0;
        }
    }
    if w.iter().all(|&x| x == 0.0) {
        return Err(Error::NonpositiveWeight {
            iteration: iteration as usize,
            neuron,
        });
    }
    Ok(())
}

/// Joint training of all output neurons.
///
/// Neuron `j` draws from stream `j` of `config.seed`, so column 1 follows the
/// single-neuron run with the same seed exactly. The change of neuron `j` is
/// projected off the span of the weights of neurons `1..j` at the same step.
///
/// ```
/// use simplex_stdp::multi::{algorithm1_run, MultiRunConfig, WeightMatrix};
///
/// let mut config = MultiRunConfig::figure3(1e-3, 2000, 5);
/// config.stride = 1000;
/// let record = algorithm1_run(&WeightMatrix::ones(3), &config).unwrap();
/// assert_eq!(record.steps, vec![0, 1000, 2000]);
/// ```
pub fn algorithm1_run(w0: &WeightMatrix, config: &MultiRunConfig) -> Result<Algorithm1Record> {
    config.validate()?;
    let d = w0.dim();
    check_dim(config.dim(), d)?;
    check_dim(d, config.alphas.len())?;
    let lambda = config.lambda.as_slice();
    let mut w: Vec<Vec<f64>> = w0.columns().iter().map(|c| c.as_slice().to_vec()).collect();
    let mut p = vec![vec![0.0; d]; d];
    for (j, (pj, wj)) in p.iter_mut().zip(&w).enumerate() {
        if !probabilities_into(lambda, wj, pj) {
            return Err(Error::NonpositiveWeight { iteration: 0, neuron: j });
        }
    }
    let mut samplers: Vec<RandomSampler> = (0..d)
        .map(|j| RandomSampler::new(&config.noise, config.seed, j as u64, d))
        .collect();
    let snapshot = |w: &[Vec<f64>], p: &[Vec<f64>]| {
        (
            WeightMatrix {
                columns: w.iter().map(|c| WeightVector::from_raw(c.clone())).collect(),
            },
            p.iter()
                .map(|c| ProbabilityVector::from_normalized(c.clone()))
                .collect::<ProbabilityMatrix>(),
        )
    };
    let (w_init, p_init) = snapshot(&w, &p);
    let mut steps = vec![0];
    let mut weights = vec![w_init];
    let mut probabilities = vec![p_init];
    let mut clips = Vec::new();
    let mut y = vec![0.0; d];
    let mut change = vec![0.0; d];
    for k in 1..=config.iterations {
        let old = w.clone();
        for j in 0..d {
            let alpha = config.alphas[j];
            samplers[j].draw(&p[j], &mut y);
            if j == 0 {
                for (wi, yi) in w[0].iter_mut().zip(&y) {
                    *wi *= 1.0 + alpha * yi;
                }
            } else {
                for ((ci, wi), yi) in change.iter_mut().zip(&old[j]).zip(&y) {
                    *ci = alpha * wi * yi;
                }
                let basis = orthonormal_basis(old[..j].iter().map(|c| c.as_slice()));
                remove_span(&mut change, &basis);
                for (wi, ci) in w[j].iter_mut().zip(&change) {
                    *wi += ci;
                }
                clip(&mut w[j], k, j, &mut clips)?;
            }
            if !probabilities_into(lambda, &w[j], &mut p[j]) {
                return Err(Error::NonpositiveWeight {
                    iteration: k as usize,
                    neuron: j,
                });
            }
        }
        if k % config.stride == 0 || k == config.iterations {
            let (ws, ps) = snapshot(&w, &p);
            steps.push(k);
            weights.push(ws);
            probabilities.push(ps);
        }
    }
    Ok(Algorithm1Record {
        steps,
        weights,
        probabilities,
        clips,
        seed: config.seed,
        update_reading: ALGORITHM1_READING.into(),
    })
}

/// `‖w‖ e_{i*}` with `i*` the first index of the largest entry.
///
/// ```
/// use simplex_stdp::multi::cosine_projection;
/// use simplex_stdp::simplex::WeightVector;
///
/// let w = WeightVector::new(vec![1.0, 1.0, 0.5]).unwrap();
/// assert_eq!(cosine_projection(&w).unwrap().as_slice(), &[1.5, 0.0, 0.0]);
/// ```
pub fn cosine_projection(w: &WeightVector) -> Result<WeightVector> {
    let v = w.as_slice();
    if v.iter().all(|&x| x == 0.0) {
        return Err(Error::InvalidInput("cannot project the zero vector".into()));
    }
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    let mut out = vec![0.0; v.len()];
    out[best] = norm(v);
    Ok(WeightVector::from_raw(out))
}

/// `½ Σ_ij (P_ij − I_ij)²` where column `j` of `P` is `p[j]`.
pub fn frobenius_half_error(p: &[ProbabilityVector]) -> f64 {
    let mut total = 0.0;
    for (j, col) in p.iter().enumerate() {
        for (i, &x) in col.as_slice().iter().enumerate() {
            let e = if i == j { x - 1.0 } else { x };
            total += e * e;
        }
    }
    0.5 * total
}

/// `λ_min / λ_max`.
pub fn kappa(lambda: &IntensityVector) -> f64 {
    let l = lambda.as_slice();
    let min = l.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = l.iter().cloned().fold(0.0, f64::max);
    min / max
}

/// `⌈16d / (αΔ(4 + dΔ)) · log(4/(εδ))⌉`, valid for `δ < κ/(1+κ)`.
pub fn thm_multi_iterations(kappa: f64, delta: f64, epsilon: f64, alpha: f64, gap: f64, d: usize) -> Result<u64> {
    if !(kappa > 0.0 && kappa <= 1.0) {
        return Err(Error::InvalidInput(format!("kappa = {kappa} must lie in (0, 1]")));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) || !(alpha > 0.0) || !(gap > 0.0 && gap <= 1.0) || d == 0 {
        return Err(Error::InvalidInput(format!(
            "need ε in (0,1), α > 0, gap in (0,1], d ≥ 1; got ε = {epsilon}, α = {alpha}, gap = {gap}, d = {d}"
        )));
    }
    let limit = kappa / (1.0 + kappa);
    if !(delta > 0.0 && delta < limit) {
        return Err(Error::Precondition(format!(
            "δ = {delta} must lie in (0, κ/(1+κ)) = (0, {limit})"
        )));
    }
    let d = d as f64;
    let k = 16.0 * d / (alpha * gap * (4.0 + d * gap)) * (4.0 / (epsilon * delta)).ln();
    Ok(k.ceil().max(0.0) as u64)
}

/// Minimal gap `min_i([p_i(0)]_i − max_{j>i}[p_i(0)]_j)` of the initial
/// columns after the deflation that a fully successful run applies, which
/// zeroes the first `i − 1` coordinates of column `i`.
pub fn alg2_minimal_gap(lambda: &IntensityVector, w0: &WeightMatrix) -> Result<f64> {
    let d = w0.dim();
    check_dim(lambda.dim(), d)?;
    let mut gap = f64::INFINITY;
    for i in 0..d.saturating_sub(1) {
        let mut w = w0.column(i).as_slice().to_vec();
        w[..i].iter_mut().for_each(|x| *x = 0.0);
        let p = probabilities_from_weights(lambda, &WeightVector::new(w)?)?;
        let rest = p.as_slice()[i + 1..].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        gap = gap.min(p[i] - rest);
    }
    Ok(if gap.is_finite() { gap } else { 1.0 })
}

/// Result of one Algorithm 2 run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Algorithm2Outcome {
    /// `w_j(0)` after deflation against the earlier projections.
    pub deflated_initial: Vec<WeightVector>,
    pub final_weights: Vec<WeightVector>,
    /// `w_j*`.
    pub projections: Vec<WeightVector>,
    /// `p_j*`.
    pub p_star: ProbabilityMatrix,
    pub success: bool,
    pub final_error: f64,
    pub clips: Vec<ClipEvent>,
    pub seed: u64,
    pub update_reading: String,
}

/// Sequential training with cosine projection, drawing neuron `j` from stream
/// `j` of `config.seed` and using `config.alphas[0]` for every neuron.
pub fn algorithm2_run(w0: &WeightMatrix, config: &MultiRunConfig) -> Result<Algorithm2Outcome> {
    config.validate()?;
    let d = w0.dim();
    let mut samplers: Vec<RandomSampler> = (0..d)
        .map(|j| RandomSampler::new(&config.noise, config.seed, j as u64, d))
        .collect();
    let mut refs: Vec<&mut dyn StepSampler> = samplers.iter_mut().map(|s| s as &mut dyn StepSampler).collect();
    algorithm2_run_with(w0, config, &mut refs)
}

/// [`algorithm2_run`] with caller-supplied samplers, one per neuron.
pub fn algorithm2_run_with(
    w0: &WeightMatrix,
    config: &MultiRunConfig,
    samplers: &mut [&mut dyn StepSampler],
) -> Result<Algorithm2Outcome> {
    config.validate()?;
    let d = w0.dim();
    check_dim(config.dim(), d)?;
    check_dim(d, samplers.len())?;
    let lambda = config.lambda.as_slice();
    if lambda.windows(2).any(|l| l[1] >= l[0]) {
        return Err(Error::Precondition("intensities must be strictly decreasing".into()));
    }
    let alpha = config.alphas[0];
    let mut clips = Vec::new();
    let mut deflated_initial = Vec::with_capacity(d);
    let mut final_weights = Vec::with_capacity(d);
    let mut projections: Vec<WeightVector> = Vec::with_capacity(d);
    let mut p = vec![0.0; d];
    let mut y = vec![0.0; d];
    for j in 0..d {
        let mut w = w0.column(j).as_slice().to_vec();
        for star in &projections {
            let s = star.as_slice();
            let n = norm(s);
            let u: Vec<f64> = s.iter().map(|x| x / n).collect();
            let c = dot(&w, &u);
            for (wi, ui) in w.iter_mut().zip(&u) {
                *wi -= c * ui;
            }
        }
        clip(&mut w, 0, j, &mut clips)?;
        deflated_initial.push(WeightVector::from_raw(w.clone()));
        if !probabilities_into(lambda, &w, &mut p) {
            return Err(Error::NonpositiveWeight { iteration: 0, neuron: j });
        }
        for k in 1..=config.iterations {
            samplers[j].draw(&p, &mut y);
            for (wi, yi) in w.iter_mut().zip(&y) {
                *wi *= 1.0 + alpha * yi;
            }
            if !probabilities_into(lambda, &w, &mut p) {
                return Err(Error::NonpositiveWeight {
                    iteration: k as usize,
                    neuron: j,
                });
            }
        }
        let wk = WeightVector::from_raw(w);
        projections.push(cosine_projection(&wk)?);
        final_weights.push(wk);
    }
    let p_star: ProbabilityMatrix = projections
        .iter()
        .map(|w| probabilities_from_weights(&config.lambda, w))
        .collect::<Result<_>>()?;
    let final_error = frobenius_half_error(&p_star);
    let success = p_star.iter().enumerate().all(|(j, p)| p[j] == 1.0);
    Ok(Algorithm2Outcome {
        deflated_initial,
        final_weights,
        projections,
        p_star,
        success,
        final_error,
        clips,
        seed: config.seed,
        update_reading: ALGORITHM2_READING.into(),
    })
}

/// One row of an ensemble summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub final_frobenius_half_error: f64,
    pub success: bool,
}

fn ensemble<F>(config: &MultiRunConfig, master_seed: u64, count: usize, run: F) -> Result<Vec<RunSummary>>
where
    F: Fn(&MultiRunConfig) -> Result<(f64, bool)> + Sync,
{
    config.validate()?;
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let mut c = config.clone();
            c.seed = rng::derive_seed(master_seed, i);
            c.stride = c.iterations.max(1);
            let (error, success) = run(&c)?;
            Ok(RunSummary {
                seed: c.seed,
                final_frobenius_half_error: error,
                success,
            })
        })
        .collect()
}

/// Final errors of `count` Algorithm 1 runs seeded from `master_seed`.
/// A run succeeds when every column's largest entry is on the diagonal.
pub fn algorithm1_ensemble(
    w0: &WeightMatrix,
    config: &MultiRunConfig,
    master_seed: u64,
    count: usize,
) -> Result<Vec<RunSummary>> {
    ensemble(config, master_seed, count, |c| {
        let record = algorithm1_run(w0, c)?;
        let p = record.final_probabilities();
        let success = p.iter().enumerate().all(|(j, col)| col.leading_gap().0 == j);
        Ok((frobenius_half_error(p), success))
    })
}

/// Outcomes of `count` Algorithm 2 runs seeded from `master_seed`.
pub fn algorithm2_ensemble(
    w0: &WeightMatrix,
    config: &MultiRunConfig,
    master_seed: u64,
    count: usize,
) -> Result<Vec<RunSummary>> {
    ensemble(config, master_seed, count, |c| {
        let outcome = algorithm2_run(w0, c)?;
        Ok((outcome.final_error, outcome.success))
    })
}

/// CSV `seed,final_frobenius_half_error,success`.
pub fn write_summary_csv<W: Write>(out: &mut W, rows: &[RunSummary]) -> Result<()> {
    writeln!(out, "seed,final_frobenius_half_error,success")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.seed, r.final_frobenius_half_error, r.success)?;
    }
    Ok(())
}

/// Samples `Y` with `B` on the most likely index and no noise.
#[derive(Debug, Clone, Copy, Default)]
pub struct GreedySampler;

impl StepSampler for GreedySampler {
    fn draw(&mut self, p: &[f64], y: &mut [f64]) -> usize {
        let (lead, _) = crate::simplex::leading_gap(p);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = if i == lead { 1.0 } else { 0.0 };
        }
        lead
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{run_trajectory, DynamicsConfig, InitialState};

    fn wv(v: &[f64]) -> WeightVector {
        WeightVector::new(v.to_vec()).unwrap()
    }

    fn pv(v: &[f64]) -> ProbabilityVector {
        ProbabilityVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn cosine_projection_examples() {
        let w = wv(&[0.1, 3.0, 0.2]);
        let n = (0.01_f64 + 9.0 + 0.04).sqrt();
        let got = cosine_projection(&w).unwrap();
        assert_eq!(got.as_slice()[0], 0.0);
        assert!((got.as_slice()[1] - n).abs() < 1e-15);
        assert_eq!(got.as_slice()[2], 0.0);
        let axis = wv(&[0.0, 0.0, 2.5]);
        assert_eq!(cosine_projection(&axis).unwrap(), axis);
        let tie = cosine_projection(&wv(&[1.0, 1.0, 0.5])).unwrap();
        assert_eq!(tie.as_slice(), &[1.5, 0.0, 0.0]);
    }

    #[test]
    fn cosine_projection_rejects_zero() {
        let zero = WeightVector::from_raw(vec![0.0, 0.0]);
        assert!(matches!(cosine_projection(&zero), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn norm_survives_huge_entries() {
        let n = norm(&[1e200, 1e200]);
        assert!((n / 1e200 - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn frobenius_examples() {
        let id = vec![pv(&[1.0, 0.0, 0.0]), pv(&[0.0, 1.0, 0.0]), pv(&[0.0, 0.0, 1.0])];
        assert_eq!(frobenius_half_error(&id), 0.0);
        let swapped = vec![pv(&[0.0, 1.0, 0.0]), pv(&[1.0, 0.0, 0.0]), pv(&[0.0, 0.0, 1.0])];
        assert_eq!(frobenius_half_error(&swapped), 2.0);
        let u = ProbabilityVector::uniform(3);
        let uniform = vec![u.clone(), u.clone(), u];
        assert!((frobenius_half_error(&uniform) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn iteration_count_examples() {
        let lambda = IntensityVector::new(vec![10.0, 7.5, 5.0]).unwrap();
        let kappa = kappa(&lambda);
        assert_eq!(kappa, 0.5);
        assert!(matches!(
            thm_multi_iterations(kappa, 1.0 / 3.0, 0.2, 1e-3, 0.1, 3),
            Err(Error::Precondition(_))
        ));
        let k = thm_multi_iterations(kappa, 0.25, 0.2, 1e-3, 0.1, 3).unwrap();
        let expected = 48.0 / (1e-3 * 0.1 * 4.3) * 80f64.ln();
        assert_eq!(k, expected.ceil() as u64);
        let k6 = thm_multi_iterations(kappa, 0.25, 0.2, 1e-3, 0.1, 6).unwrap() as f64;
        let ratio = (96.0 / 4.6) / (48.0 / 4.3);
        assert!((k6 / k as f64 - ratio).abs() < 1e-4);
    }

    #[test]
    fn minimal_gap_of_equal_weights() {
        let lambda = IntensityVector::new(vec![10.0, 7.5, 5.0]).unwrap();
        let gap = alg2_minimal_gap(&lambda, &WeightMatrix::ones(3)).unwrap();
        assert!((gap - 1.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn first_column_matches_single_neuron_run() {
        let mut config = MultiRunConfig::figure3(1e-2, 300, 41);
        config.stride = 1;
        let record = algorithm1_run(&WeightMatrix::ones(3), &config).unwrap();
        let single = DynamicsConfig::new(
            InitialState::Weights {
                lambda: config.lambda.clone(),
                weights: WeightVector::ones(3),
            },
            config.alphas[0],
            300,
        );
        let reference = run_trajectory(&single, 41).unwrap();
        for k in 0..=300 {
            assert_eq!(record.probabilities[k][0], reference.states[k]);
            assert_eq!(&record.weights[k].columns[0], &reference.weights.as_ref().unwrap()[k]);
        }
    }

    #[test]
    fn deflated_change_is_orthogonal() {
        let mut config = MultiRunConfig::figure3(1e-2, 500, 3);
        config.stride = 1;
        let w0 = WeightMatrix::new(vec![wv(&[1.0, 0.9, 0.8]), wv(&[0.7, 1.2, 0.9]), wv(&[1.1, 0.6, 1.3])]).unwrap();
        let record = algorithm1_run(&w0, &config).unwrap();
        let clipped: std::collections::HashSet<(u64, usize)> =
            record.clips.iter().map(|c| (c.iteration, c.neuron)).collect();
        for k in 0..500 {
            let (old, new) = (&record.weights[k], &record.weights[k + 1]);
            for j in 1..3 {
                if clipped.contains(&(k as u64 + 1, j)) {
                    continue;
                }
                let delta: Vec<f64> =
                    new.columns[j].as_slice().iter().zip(old.columns[j].as_slice()).map(|(a, b)| a - b).collect();
                for i in 0..j {
                    let wi = old.columns[i].as_slice();
                    let c = dot(&delta, wi).abs();
                    assert!(c <= 1e-10 * norm(&delta).max(1e-300) * norm(wi), "k={k} j={j} i={i}: {c}");
                }
            }
        }
        for pm in &record.probabilities {
            for p in pm {
                assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn algorithm1_rejects_large_rates() {
        let config = MultiRunConfig::figure3(0.6, 10, 0);
        assert!(matches!(
            algorithm1_run(&WeightMatrix::ones(3), &config),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn greedy_algorithm2_recovers_identity() {
        let config = MultiRunConfig::figure3(1e-2, 500, 0);
        let mut samplers = [GreedySampler, GreedySampler, GreedySampler];
        let mut refs: Vec<&mut dyn StepSampler> = samplers.iter_mut().map(|s| s as &mut dyn StepSampler).collect();
        let outcome = algorithm2_run_with(&WeightMatrix::ones(3), &config, &mut refs).unwrap();
        assert!(outcome.success);
        assert_eq!(outcome.final_error, 0.0);
        assert_eq!(outcome.deflated_initial[2].as_slice()[..2], [0.0, 0.0]);
    }

    #[test]
    fn algorithm2_single_neuron_is_trivial() {
        let lambda = IntensityVector::new(vec![2.0]).unwrap();
        let config = MultiRunConfig::new(lambda, vec![0.1], 50, 9);
        let outcome = algorithm2_run(&WeightMatrix::ones(1), &config).unwrap();
        assert!(outcome.success);
        assert_eq!(outcome.p_star[0].as_slice(), &[1.0]);
    }

    #[test]
    fn algorithm2_requires_decreasing_intensities() {
        let lambda = IntensityVector::new(vec![5.0, 7.5, 10.0]).unwrap();
        let config = MultiRunConfig::new(lambda, vec![1e-2], 10, 0);
        assert!(matches!(
            algorithm2_run(&WeightMatrix::ones(3), &config),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn summary_csv_format() {
        let mut buf = Vec::new();
        write_summary_csv(
            &mut buf,
            &[RunSummary {
                seed: 4,
                final_frobenius_half_error: 0.5,
                success: false,
            }],
        )
        .unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "seed,final_frobenius_half_error,success\n4,0.5,false\n");
    }
}
