use std::io::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use simplex_stdp::dynamics::NoiseModel;
use simplex_stdp::multi::{
    alg2_minimal_gap, algorithm1_run, algorithm2_ensemble, frobenius_half_error, kappa, thm_multi_iterations,
    write_summary_csv, Algorithm1Record, MultiRunConfig, RunSummary, WeightMatrix, ALGORITHM1_READING,
    ALGORITHM2_READING,
};
use simplex_stdp::rng::derive_seed;
use simplex_stdp::simplex::IntensityVector;

use super::{rate_label, Check, Outcome, Scenario};
use crate::error::CliResult;
use crate::output::OutputDir;

fn figure_intensities() -> IntensityVector {
    IntensityVector::new(vec![10.0, 7.5, 5.0]).expect("positive")
}

/// Mean and sample standard deviation.
fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// Fraction of `errors` within `tol` of an integer.
pub fn near_integer_fraction(errors: &[f64], tol: f64) -> f64 {
    errors.iter().filter(|e| (*e - e.round()).abs() <= tol).count() as f64 / errors.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fig3Params {
    pub lambda: IntensityVector,
    /// Rates of the output neurons relative to the base rate.
    pub rate_profile: Vec<f64>,
    pub base_rates: Vec<f64>,
    /// Iterations for each base rate.
    pub iterations: Vec<u64>,
    pub count: usize,
    /// Recorded points per Frobenius path.
    pub path_points: u64,
    pub single_run_base: f64,
    pub single_run_iterations: u64,
    pub single_run_stride: u64,
    pub plateau_tolerance: f64,
    pub noise: NoiseModel,
}

impl Default for Fig3Params {
    fn default() -> Self {
        Fig3Params {
            lambda: figure_intensities(),
            rate_profile: vec![1.0, 0.75, 0.5],
            base_rates: vec![1e-3, 1e-4],
            iterations: vec![40_000, 400_000],
            count: 100,
            path_points: 200,
            single_run_base: 1e-3,
            single_run_iterations: 40_000,
            single_run_stride: 10,
            plateau_tolerance: 0.15,
            noise: NoiseModel::default(),
        }
    }
}

impl Fig3Params {
    fn config(&self, base: f64, iterations: u64, seed: u64, stride: u64) -> MultiRunConfig {
        let alphas = self.rate_profile.iter().map(|r| r * base).collect();
        let mut c = MultiRunConfig::new(self.lambda.clone(), alphas, iterations, seed);
        c.noise = self.noise.clone();
        c.stride = stride;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct RateReport {
    base_rate: f64,
    iterations: u64,
    runs: usize,
    mean_final_error: f64,
    sd_final_error: f64,
    near_integer_fraction: f64,
    ordered_fraction: f64,
    clip_events: usize,
}

/// Simultaneous learning on the three-neuron example: one detailed run and Frobenius
/// error paths for each base rate.
pub struct Fig3Algorithm1;

impl Scenario for Fig3Algorithm1 {
    type Params = Fig3Params;

    fn validate(p: &Fig3Params) -> Vec<String> {
        let mut v = Vec::new();
        let d = p.lambda.dim();
        if p.rate_profile.len() != d {
            v.push(format!("rate_profile needs {d} entries, got {}", p.rate_profile.len()));
        }
        if p.base_rates.is_empty() || p.base_rates.len() != p.iterations.len() {
            v.push("base_rates and iterations must be nonempty and of equal length".into());
        }
        for &base in p.base_rates.iter().chain([&p.single_run_base]) {
            v.extend(p.config(base, 1, 0, 1).violations());
        }
        if p.count == 0 || p.path_points == 0 || p.single_run_stride == 0 {
            v.push("count, path_points and single_run_stride must be positive".into());
        }
        if !(p.plateau_tolerance >= 0.0 && p.plateau_tolerance < 0.5) {
            v.push("plateau_tolerance must lie in [0, 0.5)".into());
        }
        v.dedup();
        v
    }

    fn run(p: &Fig3Params, seed: u64, out: &mut OutputDir) -> CliResult<Outcome> {
        let d = p.lambda.dim();
        let w0 = WeightMatrix::ones(d);
        let mut outcome = Outcome::default();
        outcome.line(format!("update: {ALGORITHM1_READING}"));

        let single = algorithm1_run(&w0, &p.config(p.single_run_base, p.single_run_iterations, seed, p.single_run_stride))?;
        out.write("single_run.csv", |w| single.write_csv(w))?;
        outcome.line(format!(
            "single run at base rate {}: final ½‖P-I‖² = {}",
            p.single_run_base,
            single.final_error()
        ));

        let mut reports = Vec::new();
        for (&base, &iterations) in p.base_rates.iter().zip(&p.iterations) {
            let stride = (iterations / p.path_points).max(1);
            let records: Vec<Algorithm1Record> = (0..p.count as u64)
                .into_par_iter()
                .map(|i| algorithm1_run(&w0, &p.config(base, iterations, derive_seed(seed, i), stride)))
                .collect::<simplex_stdp::Result<_>>()?;
            let label = rate_label(base);
            out.write(&format!("frobenius_{label}.csv"), |w| {
                writeln!(w, "k,run,error")?;
                for (run, r) in records.iter().enumerate() {
                    for (k, pm) in r.steps.iter().zip(&r.probabilities) {
                        writeln!(w, "{k},{run},{}", frobenius_half_error(pm))?;
                    }
                }
                Ok(())
            })?;
            let summaries: Vec<RunSummary> = records
                .iter()
                .map(|r| RunSummary {
                    seed: r.seed,
                    final_frobenius_half_error: r.final_error(),
                    success: r
                        .final_probabilities()
                        .iter()
                        .enumerate()
                        .all(|(j, col)| col.leading_gap().0 == j),
                })
                .collect();
            out.write(&format!("summary_{label}.csv"), |w| write_summary_csv(w, &summaries))?;
            let errors: Vec<f64> = summaries.iter().map(|s| s.final_frobenius_half_error).collect();
            let (mean, sd) = mean_sd(&errors);
            let report = RateReport {
                base_rate: base,
                iterations,
                runs: records.len(),
                mean_final_error: mean,
                sd_final_error: sd,
                near_integer_fraction: near_integer_fraction(&errors, p.plateau_tolerance),
                ordered_fraction: summaries.iter().filter(|s| s.success).count() as f64 / records.len() as f64,
                clip_events: records.iter().map(|r| r.clips.len()).sum(),
            };
            outcome.line(format!(
                "base rate {base}: {iterations} steps, mean final error {mean} (sd {sd}), {:.0}% near an integer, {:.0}% ordered",
                100.0 * report.near_integer_fraction,
                100.0 * report.ordered_fraction
            ));
            reports.push(report);
        }
        out.write_json("report.json", &serde_json::json!({ "update": ALGORITHM1_READING, "rates": reports }))?;
        Ok(outcome)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Alg2Params {
    pub lambda: IntensityVector,
    /// Initial weights as columns; all ones when absent.
    pub w0: Option<WeightMatrix>,
    pub alpha: f64,
    pub epsilon: f64,
    pub delta: f64,
    /// Gap used in the iteration count; the minimal deflated gap when absent.
    pub gap: Option<f64>,
    pub count: usize,
    pub slack: f64,
    pub noise: NoiseModel,
}

impl Default for Alg2Params {
    fn default() -> Self {
        Alg2Params {
            lambda: figure_intensities(),
            w0: None,
            alpha: 1e-3,
            epsilon: 0.2,
            delta: 0.25,
            gap: None,
            count: 200,
            slack: 0.05,
            noise: NoiseModel::default(),
        }
    }
}

impl Alg2Params {
    fn w0(&self) -> WeightMatrix {
        self.w0.clone().unwrap_or_else(|| WeightMatrix::ones(self.lambda.dim()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct Alg2Report {
    update: &'static str,
    kappa: f64,
    gap: f64,
    iterations: u64,
    runs: usize,
    success_fraction: f64,
    success_floor: f64,
    mean_final_error: f64,
}

/// Sequential deflated learning with the iteration count of the multi-neuron
/// guarantee, checked against its success probability.
pub struct Alg2Verify;

impl Scenario for Alg2Verify {
    type Params = Alg2Params;

    fn validate(p: &Alg2Params) -> Vec<String> {
        let mut v = Vec::new();
        let d = p.lambda.dim();
        if let Some(w) = &p.w0 {
            if w.dim() != d {
                v.push(format!("w0 must be {d} x {d}"));
            }
        }
        let mut c = MultiRunConfig::new(p.lambda.clone(), vec![p.alpha], 1, 0);
        c.noise = p.noise.clone();
        v.extend(c.violations());
        if !(p.epsilon > 0.0 && p.epsilon < 1.0) {
            v.push(format!("epsilon = {} must lie in (0, 1)", p.epsilon));
        }
        if !(p.delta > 0.0) {
            v.push(format!("delta = {} must be positive", p.delta));
        }
        if let Some(g) = p.gap {
            if !(g > 0.0 && g <= 1.0) {
                v.push(format!("gap = {g} must lie in (0, 1]"));
            }
        }
        if p.count == 0 {
            v.push("count must be positive".into());
        }
        v
    }

    fn run(p: &Alg2Params, seed: u64, out: &mut OutputDir) -> CliResult<Outcome> {
        let d = p.lambda.dim();
        let w0 = p.w0();
        let k = kappa(&p.lambda);
        let gap = match p.gap {
            Some(g) => g,
            None => alg2_minimal_gap(&p.lambda, &w0)?,
        };
        let iterations = thm_multi_iterations(k, p.delta, p.epsilon, p.alpha, gap, d)?;
        let mut config = MultiRunConfig::new(p.lambda.clone(), vec![p.alpha], iterations, seed);
        config.noise = p.noise.clone();
        let rows = algorithm2_ensemble(&w0, &config, seed, p.count)?;
        out.write("summary.csv", |w| write_summary_csv(w, &rows))?;
        let successes = rows.iter().filter(|r| r.success).count();
        let report = Alg2Report {
            update: ALGORITHM2_READING,
            kappa: k,
            gap,
            iterations,
            runs: rows.len(),
            success_fraction: successes as f64 / rows.len() as f64,
            success_floor: (1.0 - p.epsilon).powi(d as i32) - p.slack,
            mean_final_error: rows.iter().map(|r| r.final_frobenius_half_error).sum::<f64>() / rows.len() as f64,
        };
        out.write_json("report.json", &report)?;
        let mut outcome = Outcome::default();
        outcome.line(format!("κ = {k}, gap = {gap}, K = {iterations} steps per neuron"));
        outcome.line(format!("{successes}/{} runs recovered the identity", rows.len()));
        outcome.check(Check::new(
            "success probability",
            report.success_fraction >= report.success_floor,
            format!("{} vs floor {}", report.success_fraction, report.success_floor),
        ));
        Ok(outcome)
    }
}
