//! Poisson inputs, a leaky membrane with threshold reset, and the pair-based
//! STDP rule delayed to postsynaptic spike times.
//!
//! Time is measured in units of the membrane decay constant and voltage in
//! units of the jump scale, so a spike of input `j` at `τ` adds
//! `w_j e^{-(t-τ)}` to the potential at `t ≥ τ`.
//!
//! The simulation is event driven: between input spikes the potential decays
//! in closed form, so there is no discretization error.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::dynamics::TrajectoryRecord;
use crate::error::{check_dim, Error, Result};
use crate::export;
use crate::rng::{self, StreamRng};
use crate::simplex::{probabilities_from_weights, IntensityVector, WeightVector};

/// Spike times of one input neuron (`neuron_id` counts from 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeTrain {
    pub neuron_id: usize,
    times: Vec<f64>,
}

impl SpikeTrain {
    pub fn new(neuron_id: usize, times: Vec<f64>) -> Result<Self> {
        if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::InvalidInput("spike times must be finite and nonnegative".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("spike times must be strictly increasing".into()));
        }
        Ok(Self { neuron_id, times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Spikes in `(from, to]`.
    pub fn window(&self, from: f64, to: f64) -> &[f64] {
        let lo = self.times.partition_point(|&t| t <= from);
        let hi = self.times.partition_point(|&t| t <= to);
        &self.times[lo..hi]
    }
}

/// CSV `neuron_id,time`, trains in order.
pub fn write_trains_csv<W: Write>(out: &mut W, trains: &[SpikeTrain]) -> Result<()> {
    writeln!(out, "neuron_id,time")?;
    for train in trains {
        for t in &train.times {
            writeln!(out, "{},{}", train.neuron_id, t)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembraneConfig {
    pub threshold: f64,
    pub intensities: IntensityVector,
    pub weights: WeightVector,
    pub horizon: f64,
}

impl MembraneConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.threshold > 0.0) || !self.threshold.is_finite() {
            out.push(format!("threshold = {} must be positive", self.threshold));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            out.push(format!("horizon = {} must be positive", self.horizon));
        }
        if self.intensities.dim() != self.weights.dim() {
            out.push(format!(
                "{} intensities but {} weights",
                self.intensities.dim(),
                self.weights.dim()
            ));
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

    pub fn dim(&self) -> usize {
        self.intensities.dim()
    }
}

/// Output spikes of the membrane. `spike_times[0] = 0` is the start; entry
/// `k ≥ 1` is the `k`-th postsynaptic spike, caused by input
/// `trigger_ids[k-1]` with potential `pre_reset_potentials[k-1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostsynapticRecord {
    pub spike_times: Vec<f64>,
    pub trigger_ids: Vec<usize>,
    pub pre_reset_potentials: Vec<f64>,
    /// `(t, Y_t)` right after every input spike, post reset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential_samples: Option<Vec<(f64, f64)>>,
}

impl PostsynapticRecord {
    pub fn events(&self) -> usize {
        self.trigger_ids.len()
    }

    /// Fraction of postsynaptic spikes caused by each input.
    pub fn trigger_frequencies(&self, d: usize) -> Vec<f64> {
        let mut counts = vec![0.0; d];
        for &j in &self.trigger_ids {
            counts[j] += 1.0;
        }
        let n = self.trigger_ids.len().max(1) as f64;
        counts.iter().map(|c| c / n).collect()
    }

    /// CSV `k,t_k,trigger_id`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "k,t_k,trigger_id")?;
        for (k, (t, j)) in self.spike_times[1..].iter().zip(&self.trigger_ids).enumerate() {
            writeln!(out, "{},{},{}", k + 1, t, j)?;
        }
        Ok(())
    }

    /// CSV `t,Y`; empty when no trace was kept.
    pub fn write_potential_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "t,Y")?;
        for (t, y) in self.potential_samples.iter().flatten() {
            writeln!(out, "{t},{y}")?;
        }
        Ok(())
    }
}

/// Merged input spikes of independent Poisson processes, in `(time, id)` order.
pub struct PoissonEvents {
    rng: StreamRng,
    rates: Vec<f64>,
    next: Vec<f64>,
}

impl PoissonEvents {
    pub fn new(lambda: &IntensityVector, seed: u64) -> Self {
        let mut rng = rng::stream(seed, 0);
        let rates = lambda.as_slice().to_vec();
        let next = rates.iter().map(|r| exp_gap(&mut rng, *r)).collect();
        Self { rng, rates, next }
    }
}

fn exp_gap<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    let e: f64 = Exp1.sample(rng);
    e / rate
}

impl Iterator for PoissonEvents {
    type Item = (f64, usize);

    fn next(&mut self) -> Option<(f64, usize)> {
        let mut j = 0;
        for i in 1..self.next.len() {
            if self.next[i] < self.next[j] {
                j = i;
            }
        }
        let t = self.next[j];
        self.next[j] = t + exp_gap(&mut self.rng, self.rates[j]);
        Some((t, j))
    }
}

/// Independent homogeneous Poisson trains on `[0, horizon]`.
pub fn gen_poisson_trains<R: Rng + ?Sized>(
    lambda: &IntensityVector,
    horizon: f64,
    rng: &mut R,
) -> Result<Vec<SpikeTrain>> {
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidInput(format!("horizon = {horizon} must be nonnegative")));
    }
    let mut trains = Vec::with_capacity(lambda.dim());
    for (id, &rate) in lambda.as_slice().iter().enumerate() {
        let mut times = Vec::new();
        let mut t = exp_gap(rng, rate);
        while t <= horizon {
            times.push(t);
            t += exp_gap(rng, rate);
        }
        trains.push(SpikeTrain { neuron_id: id, times });
    }
    Ok(trains)
}

/// Leaky membrane state between input spikes.
#[derive(Debug, Clone)]
pub struct Membrane {
    threshold: f64,
    potential: f64,
    last: f64,
}

impl Membrane {
    pub fn new(threshold: f64) -> Self {
        Self {
            threshold,
            potential: 0.0,
            last: 0.0,
        }
    }

    pub fn potential(&self) -> f64 {
        self.potential
    }

    /// Potential at `t` without input after the last event.
    pub fn potential_at(&self, t: f64) -> f64 {
        self.potential * (self.last - t).exp()
    }

    /// Applies an input spike of size `weight` at `t`; on a crossing returns
    /// the pre-reset potential and resets to 0.
    pub fn receive(&mut self, t: f64, weight: f64) -> Option<f64> {
        self.potential = self.potential_at(t) + weight;
        self.last = t;
        if self.potential >= self.threshold {
            let y = self.potential;
            self.potential = 0.0;
            Some(y)
        } else {
            None
        }
    }
}

/// Runs the membrane over `trains` up to `config.horizon`.
pub fn simulate_membrane(
    config: &MembraneConfig,
    trains: &[SpikeTrain],
    keep_trace: bool,
) -> Result<PostsynapticRecord> {
    config.validate()?;
    let w = config.weights.as_slice();
    let mut events: Vec<(f64, usize)> = Vec::new();
    for train in trains {
        if train.neuron_id >= w.len() {
            return Err(Error::InvalidInput(format!("no weight for input {}", train.neuron_id)));
        }
        events.extend(train.times.iter().filter(|&&t| t <= config.horizon).map(|&t| (t, train.neuron_id)));
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(run_membrane(config.threshold, w, events.into_iter(), usize::MAX, keep_trace))
}

/// Runs the membrane on fresh Poisson input until `events` postsynaptic
/// spikes have occurred.
pub fn simulate_events(config: &MembraneConfig, events: usize, seed: u64) -> Result<PostsynapticRecord> {
    config.validate()?;
    let input = PoissonEvents::new(&config.intensities, seed);
    Ok(run_membrane(config.threshold, config.weights.as_slice(), input, events, false))
}

fn run_membrane(
    threshold: f64,
    w: &[f64],
    input: impl Iterator<Item = (f64, usize)>,
    max_events: usize,
    keep_trace: bool,
) -> PostsynapticRecord {
    let mut membrane = Membrane::new(threshold);
    let mut record = PostsynapticRecord {
        spike_times: vec![0.0],
        trigger_ids: Vec::new(),
        pre_reset_potentials: Vec::new(),
        potential_samples: keep_trace.then(Vec::new),
    };
    for (t, j) in input {
        if record.trigger_ids.len() >= max_events {
            break;
        }
        if let Some(y) = membrane.receive(t, w[j]) {
            record.spike_times.push(t);
            record.trigger_ids.push(j);
            record.pre_reset_potentials.push(y);
        }
        if let Some(trace) = &mut record.potential_samples {
            trace.push((t, membrane.potential()));
        }
    }
    record
}

/// `e^{-(t_next-τ)} - e^{-(τ-t_prev)}`, the net STDP contribution of one
/// input spike at `τ` in the window.
pub fn stdp_kernel(tau: f64, t_prev: f64, t_next: f64) -> f64 {
    (tau - t_next).exp() - (t_prev - tau).exp()
}

/// `w_j (1 + α Σ_τ (e^{-(t_next-τ)} - e^{-(τ-t_prev)}))` over the spikes of
/// input `j` in `(t_prev, t_next]`.
pub fn stdp_update(w_j: f64, spikes: &[f64], t_prev: f64, t_next: f64, alpha: f64) -> Result<f64> {
    if !(t_prev >= 0.0 && t_prev < t_next) {
        return Err(Error::InvalidInput(format!(
            "window ({t_prev}, {t_next}] must satisfy 0 ≤ t_prev < t_next"
        )));
    }
    if let Some(&tau) = spikes.iter().find(|&&tau| !(tau > t_prev && tau <= t_next)) {
        return Err(Error::InvalidInput(format!(
            "spike at {tau} lies outside ({t_prev}, {t_next}]"
        )));
    }
    let increment: f64 = spikes.iter().map(|&tau| stdp_kernel(tau, t_prev, t_next)).sum();
    Ok(w_j * (1.0 + alpha * increment))
}

/// Sample statistics of the STDP kernel at uniform spike times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseStats {
    pub samples: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub min: f64,
    pub max: f64,
}

impl NoiseStats {
    /// `|mean| ≤ 4 σ / √n` and every sample in `[-1, 1]`.
    pub fn is_centered(&self) -> bool {
        let n = self.samples as f64;
        self.mean.abs() <= 4.0 * self.std_dev / n.sqrt() + f64::EPSILON && self.min >= -1.0 && self.max <= 1.0
    }
}

pub fn centered_noise_check<R: Rng + ?Sized>(
    t_prev: f64,
    t_next: f64,
    samples: usize,
    rng: &mut R,
) -> Result<NoiseStats> {
    if !(t_prev < t_next) || samples == 0 {
        return Err(Error::InvalidInput("need t_prev < t_next and at least one sample".into()));
    }
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for _ in 0..samples {
        let tau = rng.random_range(t_prev..t_next);
        let x = stdp_kernel(tau, t_prev, t_next);
        sum += x;
        sum_sq += x * x;
        min = min.min(x);
        max = max.max(x);
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0).max(1.0)).max(0.0);
    Ok(NoiseStats {
        samples,
        mean,
        std_dev: var.sqrt(),
        min,
        max,
    })
}

/// One interspike window of a learning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub t_prev: f64,
    pub t_next: f64,
    pub trigger: usize,
    /// `Σ_τ kernel` per input, so `w_j` was multiplied by `1 + α · increment_j`.
    pub increments: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikingRun {
    /// `p(k) = λ ⊙ w(𝔱_k) / λᵀw(𝔱_k)` and the weights, one entry per window.
    pub trajectory: TrajectoryRecord,
    pub windows: Vec<WindowRecord>,
}

/// Learns with the delayed STDP rule for `windows` postsynaptic spikes.
pub fn spiking_learning_run(config: &MembraneConfig, alpha: f64, windows: u64, seed: u64) -> Result<SpikingRun> {
    config.validate()?;
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidInput(format!("alpha = {alpha} must be nonnegative")));
    }
    let d = config.dim();
    check_dim(d, config.weights.dim())?;
    let lambda = &config.intensities;
    let mut w = config.weights.as_slice().to_vec();
    let mut states = vec![probabilities_from_weights(lambda, &config.weights)?];
    let mut weights = vec![config.weights.clone()];
    let mut records = Vec::with_capacity(windows as usize);
    let mut membrane = Membrane::new(config.threshold);
    let mut pending: Vec<Vec<f64>> = vec![Vec::new(); d];
    let mut t_prev = 0.0;
    let mut input = PoissonEvents::new(lambda, seed);
    while (records.len() as u64) < windows {
        let (t, j) = input.next().expect("Poisson input is unbounded");
        pending[j].push(t);
        if membrane.receive(t, w[j]).is_none() {
            continue;
        }
        let mut increments = vec![0.0; d];
        for (i, spikes) in pending.iter_mut().enumerate() {
            increments[i] = spikes.iter().map(|&tau| stdp_kernel(tau, t_prev, t)).sum();
            w[i] = stdp_update(w[i], spikes, t_prev, t, alpha)?;
            spikes.clear();
        }
        let wv = WeightVector::new(w.clone()).map_err(|_| Error::NonpositiveWeight {
            iteration: records.len() + 1,
            neuron: 0,
        })?;
        states.push(probabilities_from_weights(lambda, &wv)?);
        weights.push(wv);
        records.push(WindowRecord {
            t_prev,
            t_next: t,
            trigger: j,
            increments,
        });
        t_prev = t;
    }
    let digest = export::digest(&(config, alpha, windows))?;
    Ok(SpikingRun {
        trajectory: TrajectoryRecord {
            steps: (0..=windows).collect(),
            states,
            weights: Some(weights),
            samples: None,
            seed,
            config_digest: digest,
        },
        windows: records,
    })
}

/// Split of the mean per-window increments of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementMoments {
    pub windows: usize,
    /// Mean of `1{j triggers}(1 - e^{-(𝔱_{k+1}-𝔱_k)})` per input.
    pub trigger_term: Vec<f64>,
    /// Mean kernel sum of the remaining spikes per input.
    pub residual_term: Vec<f64>,
    /// `1 - mean e^{-(𝔱_{k+1}-𝔱_k)}`.
    pub one_minus_mean_decay: f64,
}

pub fn increment_moments(windows: &[WindowRecord], d: usize) -> IncrementMoments {
    let mut trigger_term = vec![0.0; d];
    let mut residual_term = vec![0.0; d];
    let mut decay = 0.0;
    for w in windows {
        let e = (w.t_prev - w.t_next).exp();
        decay += e;
        trigger_term[w.trigger] += 1.0 - e;
        for (j, inc) in w.increments.iter().enumerate() {
            residual_term[j] += if j == w.trigger { inc - (1.0 - e) } else { *inc };
        }
    }
    let n = windows.len().max(1) as f64;
    IncrementMoments {
        windows: windows.len(),
        trigger_term: trigger_term.iter().map(|x| x / n).collect(),
        residual_term: residual_term.iter().map(|x| x / n).collect(),
        one_minus_mean_decay: 1.0 - decay / n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(lambda: &[f64], w: &[f64], s: f64, horizon: f64) -> MembraneConfig {
        MembraneConfig {
            threshold: s,
            intensities: IntensityVector::new(lambda.to_vec()).unwrap(),
            weights: WeightVector::new(w.to_vec()).unwrap(),
            horizon,
        }
    }

    #[test]
    fn spike_train_validation_and_window() {
        assert!(SpikeTrain::new(0, vec![1.0, 1.0]).is_err());
        assert!(SpikeTrain::new(0, vec![-1.0]).is_err());
        let t = SpikeTrain::new(0, vec![0.5, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(t.window(1.0, 3.0), &[2.0, 3.0]);
    }

    #[test]
    fn poisson_counts_and_gaps() {
        let lambda = IntensityVector::new(vec![1.0]).unwrap();
        let mut rng = rng::stream(3, 0);
        let horizon = 1e5;
        let trains = gen_poisson_trains(&lambda, horizon, &mut rng).unwrap();
        let n = trains[0].len() as f64;
        assert!((n - horizon).abs() < 3.0 * horizon.sqrt());
        let times = trains[0].times();
        let mean_gap = (times[times.len() - 1] - times[0]) / (n - 1.0);
        assert!((mean_gap - 1.0).abs() < 0.01);
        let empty = gen_poisson_trains(&lambda, 0.0, &mut rng).unwrap();
        assert!(empty[0].is_empty());
    }

    #[test]
    fn strong_single_input_fires_on_every_spike() {
        let c = config(&[2.0], &[5.0], 3.0, 100.0);
        let mut rng = rng::stream(1, 0);
        let trains = gen_poisson_trains(&c.intensities, c.horizon, &mut rng).unwrap();
        let record = simulate_membrane(&c, &trains, false).unwrap();
        assert_eq!(&record.spike_times[1..], trains[0].times());
    }

    #[test]
    fn membrane_invariants() {
        let c = config(&[10.0, 7.5, 5.0], &[1.0, 0.5, 2.0], 8.0, 200.0);
        let mut rng = rng::stream(2, 0);
        let trains = gen_poisson_trains(&c.intensities, c.horizon, &mut rng).unwrap();
        let record = simulate_membrane(&c, &trains, true).unwrap();
        assert!(record.events() > 10);
        assert!(record.pre_reset_potentials.iter().all(|&y| y >= 8.0));
        let trace = record.potential_samples.as_ref().unwrap();
        assert!(trace.iter().all(|&(_, y)| (0.0..8.0).contains(&y)));
        for t in &record.spike_times[1..] {
            let after = trace.iter().find(|(s, _)| s == t).unwrap();
            assert_eq!(after.1, 0.0);
        }
    }

    #[test]
    fn decay_is_exact_between_inputs() {
        let mut m = Membrane::new(10.0);
        m.receive(1.0, 2.0);
        assert_eq!(m.potential_at(3.5), 2.0 * (-2.5f64).exp());
    }

    #[test]
    fn stdp_update_examples() {
        assert_eq!(stdp_update(1.5, &[], 0.0, 2.0, 0.1).unwrap(), 1.5);
        assert_eq!(stdp_update(1.5, &[1.0], 0.0, 2.0, 0.1).unwrap(), 1.5);
        let (a, b, tau) = (0.25, 2.125, 0.75);
        let both = stdp_update(1.0, &[tau, a + b - tau], a, b, 0.5).unwrap();
        assert_eq!(both, 1.0);
        assert!(stdp_update(1.0, &[3.0], 0.0, 2.0, 0.1).is_err());
        assert!(stdp_update(1.0, &[], 2.0, 2.0, 0.1).is_err());
    }

    #[test]
    fn reflection_negates_kernel() {
        let (a, b) = (1.25, 4.5);
        for i in 1..64 {
            let u = a + (b - a) * i as f64 / 64.0;
            assert_eq!(stdp_kernel(u, a, b), -stdp_kernel(a + b - u, a, b));
        }
    }

    #[test]
    fn short_windows_give_small_noise() {
        let mut rng = rng::stream(4, 0);
        let stats = centered_noise_check(1.0, 1.0 + 1e-6, 1000, &mut rng).unwrap();
        assert!(stats.max.abs() < 1e-5 && stats.min.abs() < 1e-5);
        assert!(centered_noise_check(1.0, 1.0, 10, &mut rng).is_err());
    }

    #[test]
    fn zero_rate_keeps_weights() {
        let c = config(&[10.0, 7.5, 5.0], &[1.0, 1.0, 1.0], 5.0, 1.0);
        let run = spiking_learning_run(&c, 0.0, 50, 8).unwrap();
        let ws = run.trajectory.weights.as_ref().unwrap();
        assert!(ws.iter().all(|w| w.as_slice() == [1.0, 1.0, 1.0]));
        assert_eq!(run.trajectory.states.len(), 51);
        assert_eq!(run.windows.len(), 50);
    }

    #[test]
    fn csv_outputs() {
        let record = PostsynapticRecord {
            spike_times: vec![0.0, 1.5],
            trigger_ids: vec![2],
            pre_reset_potentials: vec![3.0],
            potential_samples: Some(vec![(1.5, 0.0)]),
        };
        let mut buf = Vec::new();
        record.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "k,t_k,trigger_id\n1,1.5,2\n");
        let mut buf = Vec::new();
        write_trains_csv(&mut buf, &[SpikeTrain::new(1, vec![0.25]).unwrap()]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "neuron_id,time\n1,0.25\n");
    }

    #[test]
    fn trigger_term_matches_indicator_update() {
        let c = config(&[10.0, 7.5, 5.0], &[1.0, 1.0, 1.0], 30.0, 1.0);
        let run = spiking_learning_run(&c, 0.0, 20_000, 3).unwrap();
        let m = increment_moments(&run.windows, 3);
        let p = [4.0 / 9.0, 1.0 / 3.0, 2.0 / 9.0];
        for j in 0..3 {
            let expected = p[j] * m.one_minus_mean_decay;
            let se = (p[j] * (1.0 - p[j]) / 20_000.0).sqrt();
            assert!((m.trigger_term[j] - expected).abs() < 4.0 * se, "input {j}");
        }
    }

    #[test]
    fn induced_drift_has_replicator_signs() {
        let c = config(&[10.0, 7.5, 5.0], &[1.0, 1.0, 1.0], 30.0, 1.0);
        let p0 = [4.0 / 9.0, 1.0 / 3.0, 2.0 / 9.0];
        let norm_sq: f64 = p0.iter().map(|x| x * x).sum();
        let mut mean = [0.0; 3];
        let runs = 200;
        for s in 0..runs {
            let run = spiking_learning_run(&c, 0.01, 100, 1000 + s).unwrap();
            let p = run.trajectory.final_state();
            for i in 0..3 {
                mean[i] += (p[i] - p0[i]) / runs as f64;
            }
        }
        for i in 0..3 {
            let drift = p0[i] * (p0[i] - norm_sq);
            assert_eq!(mean[i].signum(), drift.signum(), "coordinate {i}: {}", mean[i]);
        }
    }
}
