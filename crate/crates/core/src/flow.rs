//! Deterministic replicator flows `dp/dt = p ⊙ (f - (pᵀf) 1)`.
//!
//! Integration is classical fourth-order Runge-Kutta with a fixed step,
//! followed by division by the sum after every step.

use std::io::Write;
use std::sync::Arc;

use crate::dynamics::CorrelationMatrix;
use crate::error::{check_dim, Error, Result};
use crate::export;
use crate::simplex::{leading_gap, replicator_field, replicator_field_into, IntensityVector, ProbabilityVector};

/// `t ↦ d log λ / dt`.
pub type LogIntensityDerivative = Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>;

#[derive(Clone)]
pub enum Fitness {
    /// `f = p`, the gradient flow of the cubic-quartic loss.
    SelfFitness,
    /// `f = Γp`.
    Correlated(CorrelationMatrix),
    /// `f = d log λ/dt + p`.
    Inhomogeneous(LogIntensityDerivative),
}

impl std::fmt::Debug for Fitness {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Fitness::SelfFitness => write!(f, "SelfFitness"),
            Fitness::Correlated(g) => f.debug_tuple("Correlated").field(g).finish(),
            Fitness::Inhomogeneous(_) => write!(f, "Inhomogeneous(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FlowSpec {
    pub fitness: Fitness,
    pub p0: ProbabilityVector,
    pub horizon: f64,
    pub dt: f64,
    /// Record every `record_stride`-th step (the final state is always recorded).
    pub record_stride: usize,
}

impl FlowSpec {
    pub fn new(fitness: Fitness, p0: ProbabilityVector, horizon: f64, dt: f64) -> Self {
        Self {
            fitness,
            p0,
            horizon,
            dt,
            record_stride: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            v.push(format!("step size dt = {} must be positive", self.dt));
        }
        if !(self.horizon >= 0.0) || !self.horizon.is_finite() {
            v.push(format!("horizon T = {} must be nonnegative", self.horizon));
        }
        if self.record_stride == 0 {
            v.push("record stride must be positive".into());
        }
        if let Fitness::Correlated(g) = &self.fitness {
            if g.dim() != self.p0.dim() {
                v.push(format!("Γ has dimension {} but p0 has {}", g.dim(), self.p0.dim()));
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v))
        }
    }

    fn rhs(&self, t: f64, p: &[f64], fitness: &mut [f64], out: &mut [f64]) {
        match &self.fitness {
            Fitness::SelfFitness => fitness.copy_from_slice(p),
            Fitness::Correlated(g) => g.apply_into(p, fitness),
            Fitness::Inhomogeneous(g) => {
                let drift = g(t);
                for ((f, d), x) in fitness.iter_mut().zip(&drift).zip(p) {
                    *f = d + x;
                }
            }
        }
        replicator_field_into(p, fitness, out);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<ProbabilityVector>,
    /// `|Σp - 1|` just before each recorded renormalization (0 at t = 0).
    pub renorm_corrections: Vec<f64>,
}

impl FlowTrajectory {
    pub fn final_state(&self) -> &ProbabilityVector {
        self.states.last().expect("a flow holds at least its initial state")
    }

    /// CSV `t,p_1,...,p_d`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        let mut header = vec!["t".to_string()];
        header.extend(export::indexed_header("p", self.states[0].dim()));
        export::write_header(out, &header)?;
        for (t, p) in self.times.iter().zip(&self.states) {
            export::write_row(out, &[t.to_string()], p.as_slice())?;
        }
        Ok(())
    }

    /// CSV `t,renorm_correction,sum_squares`.
    pub fn write_diagnostics_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        export::write_header(
            out,
            &["t".into(), "renorm_correction".into(), "sum_squares".into()],
        )?;
        for ((t, c), p) in self.times.iter().zip(&self.renorm_corrections).zip(&self.states) {
            export::write_row(out, &[t.to_string()], &[*c, p.norm_squared()])?;
        }
        Ok(())
    }
}

/// Integrates `spec` over `[0, T]`.
///
/// ```
/// use simplex_stdp::flow::{exact_d2, integrate, Fitness, FlowSpec};
/// use simplex_stdp::simplex::ProbabilityVector;
///
/// let p0 = ProbabilityVector::new(vec![0.75, 0.25]).unwrap();
/// let flow = integrate(&FlowSpec::new(Fitness::SelfFitness, p0, 10.0, 1e-3)).unwrap();
/// let exact = exact_d2(0.75, 10.0).unwrap();
/// assert!((flow.final_state()[0] - exact).abs() < 1e-6);
/// ```
pub fn integrate(spec: &FlowSpec) -> Result<FlowTrajectory> {
    spec.validate()?;
    let d = spec.p0.dim();
    let n = ((spec.horizon / spec.dt) - 1e-9).ceil().max(0.0) as usize;
    let mut p = spec.p0.as_slice().to_vec();
    let mut times = vec![0.0];
    let mut states = vec![spec.p0.clone()];
    let mut corrections = vec![0.0];

    let mut fit = vec![0.0; d];
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let mut tmp = vec![0.0; d];

    for step in 1..=n {
        let t = (step - 1) as f64 * spec.dt;
        let h = if step == n { spec.horizon - t } else { spec.dt };
        spec.rhs(t, &p, &mut fit, &mut k1);
        for i in 0..d {
            tmp[i] = p[i] + 0.5 * h * k1[i];
        }
        spec.rhs(t + 0.5 * h, &tmp, &mut fit, &mut k2);
        for i in 0..d {
            tmp[i] = p[i] + 0.5 * h * k2[i];
        }
        spec.rhs(t + 0.5 * h, &tmp, &mut fit, &mut k3);
        for i in 0..d {
            tmp[i] = p[i] + h * k3[i];
        }
        spec.rhs(t + h, &tmp, &mut fit, &mut k4);
        for i in 0..d {
            p[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let t_next = t + h;
        if let Some(x) = p.iter().find(|x| !(**x >= -1e-9 && **x <= 1.0 + 1e-9)) {
            return Err(Error::IntegrationAborted {
                t: t_next,
                reason: format!("state entry {x} left [-1e-9, 1 + 1e-9]; reduce dt (currently {})", spec.dt),
            });
        }
        let sum: f64 = p.iter().sum();
        for x in p.iter_mut() {
            *x /= sum;
        }
        if step % spec.record_stride == 0 || step == n {
            times.push(if step == n { spec.horizon } else { t_next });
            states.push(ProbabilityVector::from_normalized(p.clone()));
            corrections.push((sum - 1.0).abs());
        }
    }
    Ok(FlowTrajectory {
        times,
        states,
        renorm_corrections: corrections,
    })
}

/// Closed-form `p_1(t)` of the d = 2 flow started at `p1_initial ∈ (1/2, 1)`.
pub fn exact_d2(p1_initial: f64, t: f64) -> Result<f64> {
    if !(p1_initial > 0.5 && p1_initial < 1.0) {
        return Err(Error::InvalidInput(format!(
            "p1_initial = {p1_initial} must lie in (1/2, 1); use p_2(t) = 1 - p_1(t) for the mirrored case"
        )));
    }
    if !(t >= 0.0) {
        return Err(Error::InvalidInput(format!("t = {t} must be nonnegative")));
    }
    let c = 1.0 / (2.0 * p1_initial - 1.0).powi(2) - 1.0;
    Ok(0.5 + 0.5 / (c * (-t).exp() + 1.0).sqrt())
}

/// `(Δ/d)(1 + (d - 1)Δ)`, the exponential rate of the flow bound.
pub fn flow_rate(p0: &ProbabilityVector) -> Result<f64> {
    let (_, delta) = leading_gap(p0.as_slice());
    if !(delta > 0.0) {
        return Err(Error::Precondition(format!(
            "the leading coordinate of p0 must be unique (gap Δ = {delta})"
        )));
    }
    let d = p0.dim() as f64;
    Ok(delta / d * (1.0 + (d - 1.0) * delta))
}

/// `2(1 - p_1(0)) exp(-(Δ/d)(1 + (d - 1)Δ) t)`, where coordinate 1 is the
/// largest entry of `p0`.
pub fn flow_bound(p0: &ProbabilityVector, t: f64) -> Result<f64> {
    let rate = flow_rate(p0)?;
    let (lead, _) = leading_gap(p0.as_slice());
    Ok(2.0 * (1.0 - p0[lead]) * (-rate * t).exp())
}

/// `p ⊙ (g + p - (pᵀ(g + p)) 1)` with `g = d log λ/dt`.
pub fn inhomogeneous_rhs(p: &ProbabilityVector, dloglambda: &[f64]) -> Result<Vec<f64>> {
    check_dim(p.dim(), dloglambda.len())?;
    let fitness: Vec<f64> = dloglambda.iter().zip(p.as_slice()).map(|(g, x)| g + x).collect();
    Ok(replicator_field(p.as_slice(), &fitness))
}

/// `p ⊙ (Γp - (pᵀΓp) 1)`.
pub fn correlated_rhs(p: &ProbabilityVector, gamma: &CorrelationMatrix) -> Result<Vec<f64>> {
    check_dim(p.dim(), gamma.dim())?;
    Ok(replicator_field(p.as_slice(), &gamma.apply(p.as_slice())))
}

/// `d log λ/dt` for intensities constant on each `(start_time, λ)` segment:
/// zero inside every segment. The jumps at the switching times belong to the
/// discrete dynamic, which applies them through the weights.
pub fn piecewise_constant_log_derivative(segments: &[(f64, IntensityVector)]) -> Result<LogIntensityDerivative> {
    let dim = segments
        .first()
        .map(|(_, l)| l.dim())
        .ok_or_else(|| Error::InvalidInput("at least one intensity segment is required".into()))?;
    for (_, l) in segments {
        check_dim(dim, l.dim())?;
    }
    if segments.windows(2).any(|w| !(w[0].0 < w[1].0)) {
        return Err(Error::InvalidInput("segment start times must increase strictly".into()));
    }
    Ok(Arc::new(move |_t| vec![0.0; dim]))
}
