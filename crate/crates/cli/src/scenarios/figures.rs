use serde::{Deserialize, Serialize};
use simplex_stdp::dynamics::{
    run_ensemble, run_trajectory, CorrelationMatrix, DynamicsConfig, InitialState, ModelVariant, NoiseModel,
    TrajectoryRecord,
};
use simplex_stdp::export;
use simplex_stdp::rng::derive_seed;
use simplex_stdp::simplex::ProbabilityVector;

use super::{require_dim3, write_planar_path, Check, Outcome, Scenario};
use crate::error::CliResult;
use crate::landscape::{emit_landscape, grid_divisions, BarycentricPoint, LossKind};
use crate::output::OutputDir;

fn pv(v: &[f64]) -> ProbabilityVector {
    ProbabilityVector::new(v.to_vec()).expect("valid default")
}

fn sample_starts() -> Vec<ProbabilityVector> {
    vec![pv(&[0.6, 0.25, 0.15]), pv(&[0.2, 0.5, 0.3]), pv(&[0.3, 0.3, 0.4])]
}

fn config_for(p0: &ProbabilityVector, alpha: f64, iterations: u64, noise: &NoiseModel) -> DynamicsConfig {
    let mut c = DynamicsConfig::new(InitialState::Probabilities(p0.clone()), alpha, iterations);
    c.noise = noise.clone();
    c
}

fn winner_counts(records: &[TrajectoryRecord], d: usize) -> Vec<usize> {
    let mut counts = vec![0; d];
    for r in records {
        counts[r.final_state().leading_gap().0] += 1;
    }
    counts
}

fn write_landscape(out: &mut OutputDir, name: &str, step: f64, kind: &LossKind) -> CliResult<crate::landscape::GridSummary> {
    let mut buf = Vec::new();
    let grid = emit_landscape(&mut buf, 3, step, kind)?;
    out.write_bytes(name, buf)?;
    Ok(grid)
}

fn write_final_states(out: &mut OutputDir, name: &str, records: &[TrajectoryRecord]) -> CliResult<()> {
    out.write(name, |w| {
        let mut header = vec!["run".to_string(), "seed".to_string()];
        header.extend(export::indexed_header("p", 3));
        header.extend(["x".to_string(), "y".to_string()]);
        export::write_header(w, &header)?;
        for (i, r) in records.iter().enumerate() {
            let p = r.final_state().as_slice();
            let b = BarycentricPoint::from_probabilities(p).map_err(|e| simplex_stdp::Error::InvalidInput(e.to_string()))?;
            let mut values = p.to_vec();
            values.extend([b.x, b.y]);
            export::write_row(w, &[i.to_string(), r.seed.to_string()], &values)?;
        }
        Ok(())
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fig2Params {
    pub p0s: Vec<ProbabilityVector>,
    pub alpha: f64,
    pub iterations: u64,
    pub noise: NoiseModel,
    pub grid_step: f64,
}

impl Default for Fig2Params {
    fn default() -> Self {
        Fig2Params {
            p0s: sample_starts(),
            alpha: 0.01,
            iterations: 2000,
            noise: NoiseModel::default(),
            grid_step: 0.01,
        }
    }
}

/// Sample paths of the independent model over the loss landscape.
pub struct Fig2Trajectories;

impl Scenario for Fig2Trajectories {
    type Params = Fig2Params;

    fn validate(p: &Fig2Params) -> Vec<String> {
        let mut v = Vec::new();
        if p.p0s.is_empty() {
            v.push("p0s must not be empty".into());
        }
        for (i, p0) in p.p0s.iter().enumerate() {
            require_dim3(&format!("p0s.{i}"), p0, &mut v);
            v.extend(config_for(p0, p.alpha, p.iterations, &p.noise).violations());
        }
        if let Err(e) = grid_divisions(p.grid_step) {
            v.push(e.to_string());
        }
        v.dedup();
        v
    }

    fn run(p: &Fig2Params, seed: u64, out: &mut OutputDir) -> CliResult<Outcome> {
        let mut outcome = Outcome::default();
        for (i, p0) in p.p0s.iter().enumerate() {
            let record = run_trajectory(&config_for(p0, p.alpha, p.iterations, &p.noise), derive_seed(seed, i as u64))?;
            out.write(&format!("trajectory_{}.csv", i + 1), |w| {
                write_planar_path(w, Some(&[]), &[], &record.steps, &record.states)
            })?;
            outcome.line(format!(
                "trajectory {}: p(0) = {:?} -> p({}) = {:?}",
                i + 1,
                p0.as_slice(),
                p.iterations,
                record.final_state().as_slice()
            ));
        }
        let grid = write_landscape(out, "landscape.csv", p.grid_step, &LossKind::CubicQuartic)?;
        outcome.line(format!("landscape: {} grid points, minimum {}", grid.rows, grid.min_value));
        Ok(outcome)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleParams {
    pub p0: ProbabilityVector,
    pub alpha: f64,
    pub iterations: u64,
    pub count: usize,
    /// Record every `stride`-th step of each path.
    pub stride: u64,
    pub noise: NoiseModel,
}

impl Default for EnsembleParams {
    fn default() -> Self {
        EnsembleParams {
            p0: pv(&[0.3, 0.3, 0.4]),
            alpha: 0.01,
            iterations: 2000,
            count: 100,
            stride: 1,
            noise: NoiseModel::default(),
        }
    }
}

/// Many paths from one starting point.
pub struct Fig2Ensemble;

impl Scenario for Fig2Ensemble {
    type Params = EnsembleParams;

    fn validate(p: &EnsembleParams) -> Vec<String> {
        let mut v = Vec::new();
        require_dim3("p0", &p.p0, &mut v);
        let mut c = config_for(&p.p0, p.alpha, p.iterations, &p.noise);
        c.stride = p.stride;
        v.extend(c.violations());
        if p.count == 0 {
            v.push("count must be positive".into());
        }
        v
    }

    fn run(p: &EnsembleParams, seed: u64, out: &mut OutputDir) -> CliResult<Outcome> {
        let mut config = config_for(&p.p0, p.alpha, p.iterations, &p.noise);
        config.stride = p.stride;
        let records = run_ensemble(&config, seed, p.count)?;
        let width = p.count.saturating_sub(1).to_string().len().max(3);
        for (i, r) in records.iter().enumerate() {
            out.write(&format!("trajectories/trajectory_{i:0width$}.csv"), |w| {
                write_planar_path(w, Some(&[]), &[], &r.steps, &r.states)
            })?;
        }
        write_final_states(out, "final_states.csv", &records)?;
        let mut outcome = Outcome::default();
        outcome.line(format!("{} paths of {} steps from {:?}", p.count, p.iterations, p.p0.as_slice()));
        outcome.line(format!("final leader counts per vertex: {:?}", winner_counts(&records, 3)));
        Ok(outcome)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrelatedParams {
    pub gammas: Vec<CorrelationMatrix>,
    pub p0s: Vec<ProbabilityVector>,
    pub ensemble_p0: ProbabilityVector,
    pub alpha: f64,
    pub iterations: u64,
    pub count: usize,
    /// Row stride of the stacked ensemble file.
    pub ensemble_stride: u64,
    pub grid_step: f64,
    pub noise: NoiseModel,
}

impl Default for CorrelatedParams {
    fn default() -> Self {
        let m = |rows: [[f64; 3]; 3]| CorrelationMatrix::new(rows.iter().map(|r| r.to_vec()).collect()).expect("valid default");
        CorrelatedParams {
            gammas: vec![
                m([[1.0, 0.5, 0.0], [0.5, 1.0, 0.5], [0.0, 0.5, 1.0]]),
                m([[1.0, 0.75, 0.0], [0.75, 1.0, 0.0], [0.0, 0.0, 1.0]]),
                m([[1.0, 0.1, 0.1], [0.1, 1.0, 0.0], [0.1, 0.0, 1.0]]),
            ],
            p0s: sample_starts(),
            ensemble_p0: pv(&[0.3, 0.3, 0.4]),
            alpha: 0.01,
            iterations: 2000,
            count: 100,
            ensemble_stride: 10,
            grid_step: 0.01,
            noise: NoiseModel::default(),
        }
    }
}

impl CorrelatedParams {
    fn config(&self, p0: &ProbabilityVector, gamma: &CorrelationMatrix) -> DynamicsConfig {
        let mut c = config_for(p0, self.alpha, self.iterations, &self.noise);
        c.model = ModelVariant::Correlated { gamma: gamma.clone() };
        c
    }
}

/// Paths of the correlated model over the Shahshahani landscape, one panel per `Γ`.
pub struct CorrelatedFigure;

impl Scenario for CorrelatedFigure {
    type Params = CorrelatedParams;

    fn validate(p: &CorrelatedParams) -> Vec<String> {
        let mut v = Vec::new();
        if p.gammas.is_empty() {
            v.push("gammas must not be empty".into());
        }
        for (i, p0) in p.p0s.iter().enumerate() {
            require_dim3(&format!("p0s.{i}"), p0, &mut v);
        }
        require_dim3("ensemble_p0", &p.ensemble_p0, &mut v);
        for (g, gamma) in p.gammas.iter().enumerate() {
            if gamma.dim() != 3 {
                v.push(format!("gammas.{g} must be 3 x 3"));
                continue;
            }
            for p0 in p.p0s.iter().chain([&p.ensemble_p0]) {
                v.extend(p.config(p0, gamma).violations());
            }
        }
        if p.count == 0 {
            v.push("count must be positive".into());
        }
        if p.ensemble_stride == 0 {
            v.push("ensemble_stride must be positive".into());
        }
        if let Err(e) = grid_divisions(p.grid_step) {
            v.push(e.to_string());
        }
        v.dedup();
        v
    }

    fn run(p: &CorrelatedParams, seed: u64, out: &mut OutputDir) -> CliResult<Outcome> {
        let mut outcome = Outcome::default();
        for (g, gamma) in p.gammas.iter().enumerate() {
            let panel = g + 1;
            let panel_seed = derive_seed(seed, g as u64);
            let kind = LossKind::ShahshahaniCorrelated(gamma.clone());
            let grid = write_landscape(out, &format!("panel_{panel}/landscape.csv"), p.grid_step, &kind)?;
            for (i, p0) in p.p0s.iter().enumerate() {
                let record = run_trajectory(&p.config(p0, gamma), derive_seed(panel_seed, i as u64))?;
                out.write(&format!("panel_{panel}/trajectory_{}.csv", i + 1), |w| {
                    write_planar_path(w, Some(&[]), &[], &record.steps, &record.states)
                })?;
            }
            let mut config = p.config(&p.ensemble_p0, gamma);
            config.stride = p.ensemble_stride;
            let records = run_ensemble(&config, derive_seed(panel_seed, p.p0s.len() as u64), p.count)?;
            out.write(&format!("panel_{panel}/ensemble.csv"), |w| {
                for (r, rec) in records.iter().enumerate() {
                    let cols: Option<&[&str]> = if r == 0 { Some(&["run"]) } else { None };
                    write_planar_path(w, cols, &[r.to_string()], &rec.steps, &rec.states)?;
                }
                Ok(())
            })?;
            write_final_states(out, &format!("panel_{panel}/final_states.csv"), &records)?;
            outcome.line(format!(
                "panel {panel}: Γ = {:?}, landscape minimum {} over {} points, final leader counts {:?}",
                gamma.rows(),
                grid.min_value,
                grid.rows,
                winner_counts(&records, 3)
            ));
        }
        Ok(outcome)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LandscapeParams {
    pub grid_step: f64,
    pub loss: LossKind,
}

impl Default for LandscapeParams {
    fn default() -> Self {
        LandscapeParams {
            grid_step: 0.005,
            loss: LossKind::CubicQuartic,
        }
    }
}

/// The loss evaluated on a grid over the planar simplex.
pub struct LandscapeGrid;

impl Scenario for LandscapeGrid {
    type Params = LandscapeParams;

    fn validate(p: &LandscapeParams) -> Vec<String> {
        let mut v = Vec::new();
        if let Err(e) = grid_divisions(p.grid_step) {
            v.push(e.to_string());
        }
        if let LossKind::ShahshahaniCorrelated(g) = &p.loss {
            if g.dim() != 3 {
                v.push(format!("the planar embedding needs a 3 x 3 Γ, got {0} x {0}", g.dim()));
            }
        }
        v
    }

    fn run(p: &LandscapeParams, _seed: u64, out: &mut OutputDir) -> CliResult<Outcome> {
        let grid = write_landscape(out, "landscape.csv", p.grid_step, &p.loss)?;
        let third = 1.0 / 3.0;
        let center = p.loss.evaluate(&[third, third, third]);
        let mut outcome = Outcome::default();
        outcome.line(format!("{} grid points at step {}", grid.rows, p.grid_step));
        outcome.line(format!(
            "minimum {} at ({}, {}), maximum {} at ({}, {})",
            grid.min_value, grid.min_point.x, grid.min_point.y, grid.max_value, grid.max_point.x, grid.max_point.y
        ));
        outcome.line(format!("value at the barycenter: {center}"));
        if p.loss == LossKind::CubicQuartic {
            outcome.check(Check::new(
                "minimum",
                (grid.min_value + 1.0 / 12.0).abs() <= 1e-5,
                format!("{} vs -1/12", grid.min_value),
            ));
            outcome.check(Check::new(
                "barycenter",
                (center + 1.0 / 108.0).abs() <= 1e-12,
                format!("{center} vs -1/108"),
            ));
        }
        Ok(outcome)
    }
}
