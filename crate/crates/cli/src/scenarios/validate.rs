use std::io::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use simplex_stdp::export;
use simplex_stdp::mirror::{order_comparison, successive_ratios, write_comparison_csv};
use simplex_stdp::rng::{derive_seed, stream};
use simplex_stdp::simplex::{probabilities_from_weights, IntensityVector, ProbabilityVector, WeightVector};
use simplex_stdp::spiking::{
    centered_noise_check, gen_poisson_trains, increment_moments, simulate_events, simulate_membrane,
    spiking_learning_run, stdp_kernel, write_trains_csv, IncrementMoments, MembraneConfig, NoiseStats,
};

use super::{uniform_simplex_point, Check, Outcome, Scenario};
use crate::error::CliResult;
use crate::output::OutputDir;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpikingParams {
    pub lambda: IntensityVector,
    /// Postsynaptic spikes per trigger-frequency case.
    pub events: usize,
    pub equal_threshold: f64,
    pub equal_weight: f64,
    /// Threshold of the unit-weight case.
    pub small_threshold: f64,
    pub unequal_weights: WeightVector,
    pub unequal_threshold: f64,
    pub tolerance: f64,
    pub noise_samples: usize,
    pub noise_window: f64,
    pub noise_mean_tolerance: f64,
    /// Length of the exported input and membrane traces.
    pub trace_horizon: f64,
    pub moment_windows: u64,
    pub learning_alpha: f64,
    pub learning_windows: u64,
    pub learning_stride: u64,
}

impl Default for SpikingParams {
    fn default() -> Self {
        SpikingParams {
            lambda: IntensityVector::new(vec![10.0, 7.5, 5.0]).expect("positive"),
            events: 100_000,
            equal_threshold: 2.5,
            equal_weight: 1.0,
            small_threshold: 30.0,
            unequal_weights: WeightVector::new(vec![1.5, 1.0, 0.5]).expect("positive"),
            unequal_threshold: 2.5,
            tolerance: 0.01,
            noise_samples: 1_000_000,
            noise_window: 1.0,
            noise_mean_tolerance: 0.002,
            trace_horizon: 20.0,
            moment_windows: 100_000,
            learning_alpha: 1e-3,
            learning_windows: 20_000,
            learning_stride: 100,
        }
    }
}

impl SpikingParams {
    fn membrane(&self, threshold: f64, weights: WeightVector) -> MembraneConfig {
        MembraneConfig {
            threshold,
            intensities: self.lambda.clone(),
            weights,
            horizon: self.trace_horizon,
        }
    }

    fn uniform_weights(&self, w: f64) -> WeightVector {
        WeightVector::new(vec![w; self.lambda.dim()]).expect("validated weight")
    }

    fn cases(&self) -> Vec<(&'static str, MembraneConfig)> {
        vec![
            ("equal", self.membrane(self.equal_threshold, self.uniform_weights(self.equal_weight))),
            ("small", self.membrane(self.small_threshold, self.uniform_weights(1.0))),
            ("unequal", self.membrane(self.unequal_threshold, self.unequal_weights.clone())),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct CaseReport {
    case: &'static str,
    threshold: f64,
    weights: WeightVector,
    expected: ProbabilityVector,
    empirical: Vec<f64>,
    max_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct SpikingReport {
    cases: Vec<CaseReport>,
    noise: NoiseStats,
    reflection_pairs: usize,
    reflection_exact: bool,
    moments: IncrementMoments,
    moment_reference: Vec<f64>,
    learning_final: ProbabilityVector,
}

/// Dyadic reflection `τ ↦ a + b - τ`, which the kernel must negate exactly.
fn reflection_pairs() -> (usize, bool) {
    let (a, b) = (0.25, 2.125);
    let steps = ((b - a) * 64.0) as usize;
    let exact = (1..steps).all(|m| {
        let tau = a + m as f64 / 64.0;
        stdp_kernel(a + b - tau, a, b) == -stdp_kernel(tau, a, b)
    });
    (steps - 1, exact)
}

/// Trigger statistics of the membrane model and the STDP noise.
pub struct SpikingValidate;

impl Scenario for SpikingValidate {
    type Params = SpikingParams;

    fn validate(p: &SpikingParams) -> Vec<String> {
        let mut v = Vec::new();
        if !(p.equal_weight > 0.0 && p.equal_weight.is_finite()) {
            v.push(format!("equal_weight = {} must be positive", p.equal_weight));
            return v;
        }
        for (name, c) in p.cases() {
            v.extend(c.violations().into_iter().map(|e| format!("{name} case: {e}")));
        }
        if p.events == 0 || p.noise_samples == 0 || p.moment_windows == 0 || p.learning_windows == 0 {
            v.push("events, noise_samples, moment_windows and learning_windows must be positive".into());
        }
        if p.learning_stride == 0 {
            v.push("learning_stride must be positive".into());
        }
        if !(p.noise_window > 0.0 && p.noise_window.is_finite()) {
            v.push("noise_window must be positive".into());
        }
        if !(p.learning_alpha >= 0.0 && p.learning_alpha < 1.0) {
            v.push("learning_alpha must lie in [0, 1)".into());
        }
        if !(p.tolerance > 0.0 && p.noise_mean_tolerance > 0.0) {
            v.push("tolerances must be positive".into());
        }
        v
    }

    fn run(p: &SpikingParams, seed: u64, out: &mut OutputDir) -> CliResult<Outcome> {
        let d = p.lambda.dim();
        let cases = p.cases();
        let records = cases
            .par_iter()
            .enumerate()
            .map(|(i, (_, c))| simulate_events(c, p.events, derive_seed(seed, i as u64)))
            .collect::<simplex_stdp::Result<Vec<_>>>()?;
        let mut case_reports = Vec::new();
        for ((name, c), r) in cases.iter().zip(&records) {
            let expected = probabilities_from_weights(&p.lambda, &c.weights)?;
            let empirical = r.trigger_frequencies(d);
            let max_deviation = expected
                .as_slice()
                .iter()
                .zip(&empirical)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            case_reports.push(CaseReport {
                case: name,
                threshold: c.threshold,
                weights: c.weights.clone(),
                expected,
                empirical,
                max_deviation,
            });
        }
        out.write("trigger_frequencies.csv", |w| {
            writeln!(w, "case,threshold,neuron,weight,expected,empirical")?;
            for c in &case_reports {
                for j in 0..d {
                    writeln!(
                        w,
                        "{},{},{},{},{},{}",
                        c.case,
                        c.threshold,
                        j + 1,
                        c.weights.as_slice()[j],
                        c.expected[j],
                        c.empirical[j]
                    )?;
                }
            }
            Ok(())
        })?;

        let trace_config = &cases[0].1;
        let trains = gen_poisson_trains(&p.lambda, p.trace_horizon, &mut stream(derive_seed(seed, 3), 0))?;
        let trace = simulate_membrane(trace_config, &trains, true)?;
        out.write("input_spikes.csv", |w| write_trains_csv(w, &trains))?;
        out.write("postsynaptic.csv", |w| trace.write_csv(w))?;
        out.write("potential.csv", |w| trace.write_potential_csv(w))?;

        let noise = centered_noise_check(0.0, p.noise_window, p.noise_samples, &mut stream(derive_seed(seed, 4), 0))?;
        let (reflection_pairs, reflection_exact) = reflection_pairs();

        let frozen = spiking_learning_run(trace_config, 0.0, p.moment_windows, derive_seed(seed, 5))?;
        let moments = increment_moments(&frozen.windows, d);
        let p_frozen = probabilities_from_weights(&p.lambda, &trace_config.weights)?;
        let moment_reference: Vec<f64> = p_frozen.as_slice().iter().map(|pj| pj * moments.one_minus_mean_decay).collect();
        let moment_deviation = moments
            .trigger_term
            .iter()
            .zip(&moment_reference)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);

        let learning = spiking_learning_run(trace_config, p.learning_alpha, p.learning_windows, derive_seed(seed, 6))?;
        let traj = &learning.trajectory;
        out.write("learning_trajectory.csv", |w| {
            let mut header = vec!["k".to_string()];
            header.extend(export::indexed_header("p", d));
            header.extend(export::indexed_header("w", d));
            export::write_header(w, &header)?;
            let weights = traj.weights.as_deref().unwrap_or_default();
            let last = traj.steps.len() - 1;
            for (i, (k, s)) in traj.steps.iter().zip(&traj.states).enumerate() {
                if k % p.learning_stride == 0 || i == last {
                    let mut values = s.as_slice().to_vec();
                    values.extend_from_slice(weights[i].as_slice());
                    export::write_row(w, &[k.to_string()], &values)?;
                }
            }
            Ok(())
        })?;

        let report = SpikingReport {
            cases: case_reports,
            noise,
            reflection_pairs,
            reflection_exact,
            moments,
            moment_reference,
            learning_final: traj.final_state().clone(),
        };
        out.write_json("report.json", &report)?;

        let mut outcome = Outcome::default();
        for c in &report.cases {
            outcome.line(format!(
                "{} (S = {}): empirical {:?} vs {:?}",
                c.case,
                c.threshold,
                c.empirical,
                c.expected.as_slice()
            ));
        }
        outcome.line(format!(
            "kernel noise: mean {} sd {} range [{}, {}] over {} samples",
            noise.mean, noise.std_dev, noise.min, noise.max, noise.samples
        ));
        outcome.line(format!(
            "per-window increments: trigger term {:?} vs {:?}, residual term {:?}",
            report.moments.trigger_term, report.moment_reference, report.moments.residual_term
        ));
        outcome.line(format!(
            "learning run: p after {} windows = {:?}",
            p.learning_windows,
            report.learning_final.as_slice()
        ));
        for c in report.cases.iter().filter(|c| c.case != "unequal") {
            outcome.check(Check::new(
                &format!("{} trigger frequencies", c.case),
                c.max_deviation <= p.tolerance,
                format!("max deviation {}", c.max_deviation),
            ));
        }
        outcome.check(Check::new(
            "noise range",
            noise.min >= -1.0 && noise.max <= 1.0,
            format!("[{}, {}]", noise.min, noise.max),
        ));
        outcome.check(Check::new(
            "noise mean",
            noise.mean.abs() < p.noise_mean_tolerance,
            format!("{}", noise.mean),
        ));
        outcome.check(Check::new(
            "reflection antisymmetry",
            reflection_exact,
            format!("{reflection_pairs} dyadic pairs"),
        ));
        outcome.check(Check::new(
            "trigger increment moments",
            moment_deviation <= p.tolerance,
            format!("max deviation {moment_deviation}"),
        ));
        Ok(outcome)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MirrorParams {
    pub point: ProbabilityVector,
    pub alphas: Vec<f64>,
    pub random_points: usize,
    pub dim: usize,
    pub ratio_min: f64,
    pub ratio_max: f64,
}

impl Default for MirrorParams {
    fn default() -> Self {
        MirrorParams {
            point: ProbabilityVector::new(vec![0.5, 0.3, 0.2]).expect("valid default"),
            alphas: vec![1e-2, 1e-3, 1e-4],
            random_points: 100,
            dim: 3,
            ratio_min: 80.0,
            ratio_max: 120.0,
        }
    }
}

/// Gap between the exponentiated-gradient step and the multiplicative update.
pub struct MirrorCompare;

impl Scenario for MirrorCompare {
    type Params = MirrorParams;

    fn validate(p: &MirrorParams) -> Vec<String> {
        let mut v = Vec::new();
        if p.alphas.len() < 2 || p.alphas.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            v.push("alphas needs at least two positive rates".into());
        }
        if p.dim < 2 {
            v.push("dim must be at least 2".into());
        }
        if !(p.ratio_min <= p.ratio_max) {
            v.push("ratio_min must not exceed ratio_max".into());
        }
        v
    }

    fn run(p: &MirrorParams, seed: u64, out: &mut OutputDir) -> CliResult<Outcome> {
        let reports = order_comparison(&p.point, &p.alphas)?;
        out.write("comparison.csv", |w| write_comparison_csv(w, &reports))?;
        let point_ratios = successive_ratios(&reports);
        let rows: Vec<(ProbabilityVector, Vec<f64>)> = (0..p.random_points as u64)
            .into_par_iter()
            .map(|i| {
                let q = uniform_simplex_point(p.dim, &mut stream(derive_seed(seed, i), 0));
                let r = order_comparison(&q, &p.alphas).map(|r| successive_ratios(&r));
                r.map(|r| (q, r))
            })
            .collect::<simplex_stdp::Result<_>>()?;
        let m = p.alphas.len() - 1;
        out.write("ratios.csv", |w| {
            let mut header = vec!["index".to_string()];
            header.extend(export::indexed_header("p", p.dim));
            header.extend(export::indexed_header("ratio", m));
            export::write_header(w, &header)?;
            for (i, (q, r)) in rows.iter().enumerate() {
                let mut values = q.as_slice().to_vec();
                values.extend_from_slice(r);
                export::write_row(w, &[i.to_string()], &values)?;
            }
            Ok(())
        })?;
        let all: Vec<f64> = point_ratios.iter().chain(rows.iter().flat_map(|(_, r)| r)).copied().collect();
        let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let inside = all.iter().all(|r| (p.ratio_min..=p.ratio_max).contains(r));
        out.write_json(
            "report.json",
            &serde_json::json!({
                "point": p.point,
                "point_ratios": point_ratios,
                "random_points": rows.len(),
                "min_ratio": lo,
                "max_ratio": hi,
                "range": [p.ratio_min, p.ratio_max],
            }),
        )?;
        let mut outcome = Outcome::default();
        outcome.line(format!("ratios at {:?}: {point_ratios:?}", p.point.as_slice()));
        outcome.line(format!("{} random points: ratios in [{lo}, {hi}]", rows.len()));
        outcome.check(Check::new(
            "quadratic order",
            inside,
            format!("[{lo}, {hi}] vs [{}, {}]", p.ratio_min, p.ratio_max),
        ));
        Ok(outcome)
    }
}
