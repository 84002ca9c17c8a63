//! Primitives on the probability simplex.
//!
//! The loss landscape here is the cubic-quartic potential
//! `L(p) = -(1/3) Σ p_i³ + (1/4) (Σ p_i²)²` whose negative gradient is the
//! replicator field with fitness `p`. `loss`, `loss_gradient` and
//! `loss_hessian` take plain slices so that landscape grids may include
//! points off the simplex.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Absolute tolerance on `Σ p_i - 1` for a value to count as a simplex point.
pub const SIMPLEX_TOLERANCE: f64 = 1e-12;

/// Raw sums within this distance of 1 are renormalized on construction.
pub const RENORMALIZE_TOLERANCE: f64 = 1e-9;

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    /// Validates `entries`. A sum off by at most [`RENORMALIZE_TOLERANCE`] is
    /// rescaled to 1; anything further off is rejected.
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidInput("probability vector must be nonempty".into()));
        }
        if let Some(bad) = entries.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(Error::InvalidInput(format!(
                "probability entries must be finite and nonnegative, found {bad}"
            )));
        }
        let sum: f64 = entries.iter().sum();
        let dev = (sum - 1.0).abs();
        if dev <= SIMPLEX_TOLERANCE {
            Ok(Self(entries))
        } else if dev <= RENORMALIZE_TOLERANCE {
            Ok(Self(entries.into_iter().map(|x| x / sum).collect()))
        } else {
            Err(Error::InvalidInput(format!(
                "probability entries sum to {sum}, not 1"
            )))
        }
    }

    /// Divides nonnegative finite entries with a positive sum by that sum.
    ///
    /// ```
    /// use simplex_stdp::simplex::ProbabilityVector;
    ///
    /// let p = ProbabilityVector::normalized(vec![1.0, 3.0]).unwrap();
    /// assert_eq!(p.as_slice(), &[0.25, 0.75]);
    /// assert!(ProbabilityVector::normalized(vec![0.0, 0.0]).is_err());
    /// ```
    pub fn normalized(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() || entries.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::InvalidInput("entries must be finite and nonnegative".into()));
        }
        if !(entries.iter().sum::<f64>() > 0.0) {
            return Err(Error::InvalidInput("entries must have a positive sum".into()));
        }
        Ok(Self::from_unnormalized(entries))
    }

    /// Divides by the sum.
    pub(crate) fn from_unnormalized(mut entries: Vec<f64>) -> Self {
        let sum: f64 = entries.iter().sum();
        for x in &mut entries {
            *x /= sum;
        }
        Self(entries)
    }

    /// Wraps entries already normalized by an update rule.
    pub(crate) fn from_normalized(entries: Vec<f64>) -> Self {
        Self(entries)
    }

    pub fn uniform(dim: usize) -> Self {
        assert!(dim > 0, "dimension must be positive");
        Self(vec![1.0 / dim as f64; dim])
    }

    /// The standard basis vector `e_index` (zero-based).
    pub fn vertex(dim: usize, index: usize) -> Self {
        assert!(index < dim, "vertex index {index} out of range for dimension {dim}");
        let mut v = vec![0.0; dim];
        v[index] = 1.0;
        Self(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm_squared(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum()
    }

    /// `‖p - e_index‖₁`.
    pub fn l1_to_vertex(&self, index: usize) -> f64 {
        self.0
            .iter()
            .enumerate()
            .map(|(i, &x)| if i == index { (1.0 - x).abs() } else { x.abs() })
            .sum()
    }

    /// Gap between the largest entry and the runner-up, with the index of the
    /// largest (lowest index on ties). Zero in dimension one.
    pub fn leading_gap(&self) -> (usize, f64) {
        leading_gap(&self.0)
    }
}

impl std::ops::Index<usize> for ProbabilityVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl TryFrom<Vec<f64>> for ProbabilityVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ProbabilityVector> for Vec<f64> {
    fn from(p: ProbabilityVector) -> Vec<f64> {
        p.0
    }
}

/// Nonnegative synaptic weights with at least one positive entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidInput("weight vector must be nonempty".into()));
        }
        if entries.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidInput(
                "weights must be finite and nonnegative".into(),
            ));
        }
        if entries.iter().all(|x| *x == 0.0) {
            return Err(Error::InvalidInput("weight vector is identically zero".into()));
        }
        Ok(Self(entries))
    }

    pub fn ones(dim: usize) -> Self {
        Self(vec![1.0; dim])
    }

    pub(crate) fn from_raw(entries: Vec<f64>) -> Self {
        Self(entries)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for WeightVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<WeightVector> for Vec<f64> {
    fn from(w: WeightVector) -> Vec<f64> {
        w.0
    }
}

/// Strictly positive mean firing rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct IntensityVector(Vec<f64>);

impl IntensityVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidInput("intensity vector must be nonempty".into()));
        }
        if entries.iter().any(|x| !x.is_finite() || *x <= 0.0) {
            return Err(Error::InvalidInput(
                "intensities must be finite and strictly positive".into(),
            ));
        }
        Ok(Self(entries))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

impl TryFrom<Vec<f64>> for IntensityVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<IntensityVector> for Vec<f64> {
    fn from(l: IntensityVector) -> Vec<f64> {
        l.0
    }
}

/// Spike-triggering probabilities `(λ ⊙ w) / (λᵀ w)`.
///
/// ```
/// use simplex_stdp::simplex::{probabilities_from_weights, IntensityVector, WeightVector};
///
/// let lambda = IntensityVector::new(vec![10.0, 7.5, 5.0]).unwrap();
/// let p = probabilities_from_weights(&lambda, &WeightVector::ones(3)).unwrap();
/// assert!((p[0] - 4.0 / 9.0).abs() < 1e-15);
/// ```
pub fn probabilities_from_weights(
    lambda: &IntensityVector,
    w: &WeightVector,
) -> Result<ProbabilityVector> {
    check_dim(lambda.dim(), w.dim())?;
    let products: Vec<f64> = lambda
        .as_slice()
        .iter()
        .zip(w.as_slice())
        .map(|(l, w)| l * w)
        .collect();
    let total: f64 = products.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::InvalidInput(format!(
            "λᵀw = {total} must be finite and positive"
        )));
    }
    Ok(ProbabilityVector(products.into_iter().map(|x| x / total).collect()))
}

/// `-(1/3) Σ p_i³ + (1/4) ‖p‖⁴` for any real vector.
pub fn loss(p: &[f64]) -> f64 {
    let cubes: f64 = p.iter().map(|x| x * x * x).sum();
    let squares: f64 = p.iter().map(|x| x * x).sum();
    -cubes / 3.0 + 0.25 * squares * squares
}

/// `-p ⊙ (p - ‖p‖² 1)`.
pub fn loss_gradient(p: &[f64]) -> Vec<f64> {
    let sq: f64 = p.iter().map(|x| x * x).sum();
    p.iter().map(|&x| -x * (x - sq)).collect()
}

/// `2ppᵀ + ‖p‖² I - 2 diag(p)`.
pub fn loss_hessian(p: &[f64]) -> DMatrix<f64> {
    let d = p.len();
    let sq: f64 = p.iter().map(|x| x * x).sum();
    DMatrix::from_fn(d, d, |i, j| {
        let mut h = 2.0 * p[i] * p[j];
        if i == j {
            h += sq - 2.0 * p[i];
        }
        h
    })
}

/// Eigenvalues of [`loss_hessian`], ascending.
pub fn hessian_eigenvalues(p: &[f64]) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(loss_hessian(p))
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// `p ⊙ (f - (pᵀf) 1)`.
///
/// # Panics
/// If `p` and `fitness` differ in length.
pub fn replicator_field(p: &[f64], fitness: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p.len()];
    replicator_field_into(p, fitness, &mut out);
    out
}

/// In-place form of [`replicator_field`].
pub fn replicator_field_into(p: &[f64], fitness: &[f64], out: &mut [f64]) {
    assert_eq!(p.len(), fitness.len(), "fitness dimension mismatch");
    assert_eq!(p.len(), out.len(), "output dimension mismatch");
    let mean: f64 = p.iter().zip(fitness).map(|(a, b)| a * b).sum();
    for ((o, &pi), &fi) in out.iter_mut().zip(p).zip(fitness) {
        *o = pi * (fi - mean);
    }
}

pub(crate) fn leading_gap(p: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, &x) in p.iter().enumerate() {
        if x > p[best] {
            best = i;
        }
    }
    let runner_up = p
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != best)
        .map(|(_, &x)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    if runner_up.is_finite() {
        (best, p[best] - runner_up)
    } else {
        (best, 0.0)
    }
}

/// Gap between coordinate `lead` and the largest other coordinate.
pub(crate) fn gap_from(p: &[f64], lead: usize) -> f64 {
    let other = p
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != lead)
        .map(|(_, &x)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    if other.is_finite() {
        p[lead] - other
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriticalKind {
    Minimum,
    Saddle,
}

/// A stationary point of [`loss`]: the barycenter of the face spanned by
/// `support`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    /// Zero-based, ascending.
    pub support: Vec<usize>,
    pub point: ProbabilityVector,
    /// Classification from the Hessian spectrum in `R^d`.
    pub kind: CriticalKind,
    /// Set for the full-support barycenter (d ≥ 2): a saddle in `R^d` but a
    /// maximum of the loss restricted to the simplex, because the only
    /// ascending Hessian direction is normal to it.
    pub simplex_maximum: bool,
}

/// Largest dimension accepted by [`critical_points`] (it returns `2^d - 1` points).
pub const MAX_ENUMERATION_DIM: usize = 20;

/// All `2^d - 1` critical points in lexicographic order of their supports.
pub fn critical_points(d: usize) -> Result<Vec<CriticalPoint>> {
    if d == 0 {
        return Err(Error::InvalidInput("dimension must be at least 1".into()));
    }
    if d > MAX_ENUMERATION_DIM {
        return Err(Error::InvalidInput(format!(
            "enumerating 2^{d} critical points is not supported (max d = {MAX_ENUMERATION_DIM})"
        )));
    }
    let mut supports: Vec<Vec<usize>> = (1u32..(1u32 << d))
        .map(|mask| (0..d).filter(|i| mask & (1 << i) != 0).collect())
        .collect();
    supports.sort();

    Ok(supports
        .into_iter()
        .map(|support| {
            let n = support.len() as f64;
            let mut point = vec![0.0; d];
            for &i in &support {
                point[i] = 1.0 / n;
            }
            let min_eig = hessian_eigenvalues(&point)[0];
            let kind = if min_eig > 0.0 {
                CriticalKind::Minimum
            } else {
                CriticalKind::Saddle
            };
            CriticalPoint {
                simplex_maximum: d >= 2 && support.len() == d,
                support,
                point: ProbabilityVector(point),
                kind,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lambda(v: &[f64]) -> IntensityVector {
        IntensityVector::new(v.to_vec()).unwrap()
    }
    fn weights(v: &[f64]) -> WeightVector {
        WeightVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn probabilities_examples() {
        let p = probabilities_from_weights(&lambda(&[10.0, 7.5, 5.0]), &weights(&[1.0, 1.0, 1.0]))
            .unwrap();
        for (a, b) in p.as_slice().iter().zip([4.0 / 9.0, 1.0 / 3.0, 2.0 / 9.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        let p = probabilities_from_weights(&lambda(&[1.0; 5]), &weights(&[1.0; 5])).unwrap();
        assert!(p.as_slice().iter().all(|x| (x - 0.2).abs() < 1e-15));
        let p = probabilities_from_weights(&lambda(&[2.0, 1.0]), &weights(&[1.0, 2.0])).unwrap();
        assert_eq!(p.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn probabilities_are_scale_invariant() {
        let l = lambda(&[3.0, 1.5, 0.2]);
        let a = probabilities_from_weights(&l, &weights(&[0.3, 2.0, 1.0])).unwrap();
        let b = probabilities_from_weights(&l, &weights(&[3.0, 20.0, 10.0])).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn probabilities_reject_bad_input() {
        assert!(matches!(
            probabilities_from_weights(&lambda(&[1.0, 2.0]), &weights(&[1.0, 1.0, 1.0])),
            Err(Error::DimensionMismatch { expected: 2, got: 3 })
        ));
        assert!(WeightVector::new(vec![0.0, 0.0]).is_err());
        assert!(IntensityVector::new(vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn simplex_construction_tolerances() {
        assert!(ProbabilityVector::new(vec![0.5, 0.5 + 1e-13]).is_ok());
        let p = ProbabilityVector::new(vec![0.5, 0.5 + 1e-10]).unwrap();
        assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(ProbabilityVector::new(vec![0.5, 0.5 + 1e-8]).is_err());
        assert!(ProbabilityVector::new(vec![1.1, -0.1]).is_err());
        assert!(ProbabilityVector::new(vec![]).is_err());
    }

    #[test]
    fn loss_values() {
        assert!((loss(&[1.0, 0.0, 0.0]) + 1.0 / 12.0).abs() < 1e-15);
        assert!((loss(&[1.0 / 3.0; 3]) + 1.0 / 108.0).abs() < 1e-15);
        assert!((loss(&[0.5, 0.5, 0.0]) + 1.0 / 48.0).abs() < 1e-15);
    }

    #[test]
    fn gradient_vanishes_at_vertices_and_barycenter() {
        assert!(loss_gradient(&[0.0, 1.0, 0.0]).iter().all(|g| *g == 0.0));
        assert!(loss_gradient(&[0.25; 4]).iter().all(|g| g.abs() < 1e-16));
    }

    #[test]
    fn gradient_example_against_central_differences() {
        let p = [0.5, 0.3, 0.2];
        let g = loss_gradient(&p);
        let expected = [-0.06, 0.024, 0.036];
        let h = 1e-6;
        for i in 0..3 {
            assert!((g[i] - expected[i]).abs() < 1e-12, "{g:?}");
            let mut plus = p;
            let mut minus = p;
            plus[i] += h;
            minus[i] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn hessian_at_vertex_is_identity() {
        let h = loss_hessian(&[1.0, 0.0, 0.0]);
        assert_eq!(h, DMatrix::identity(3, 3));
    }

    #[test]
    fn hessian_spectrum_at_barycenter() {
        let ev = hessian_eigenvalues(&[1.0 / 3.0; 3]);
        let third = 1.0 / 3.0;
        assert!((ev[0] + third).abs() < 1e-14);
        assert!((ev[1] + third).abs() < 1e-14);
        assert!((ev[2] - third).abs() < 1e-14);
    }

    #[test]
    fn critical_points_d2() {
        let cps = critical_points(2).unwrap();
        let supports: Vec<_> = cps.iter().map(|c| c.support.clone()).collect();
        assert_eq!(supports, vec![vec![0], vec![0, 1], vec![1]]);
        let kinds: Vec<_> = cps.iter().map(|c| c.kind).collect();
        assert_eq!(
            kinds,
            vec![CriticalKind::Minimum, CriticalKind::Saddle, CriticalKind::Minimum]
        );
        assert!(cps[1].simplex_maximum);
        assert_eq!(cps[1].point.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn critical_points_d3_loss_levels() {
        let cps = critical_points(3).unwrap();
        assert_eq!(cps.len(), 7);
        let mut levels: Vec<f64> = cps.iter().map(|c| loss(c.point.as_slice())).collect();
        levels.sort_by(f64::total_cmp);
        let expected = [
            -1.0 / 12.0,
            -1.0 / 12.0,
            -1.0 / 12.0,
            -1.0 / 48.0,
            -1.0 / 48.0,
            -1.0 / 48.0,
            -1.0 / 108.0,
        ];
        for (a, b) in levels.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        for c in &cps {
            assert_eq!(c.kind == CriticalKind::Minimum, c.support.len() == 1);
            let g = loss_gradient(c.point.as_slice());
            assert!(g.iter().all(|x| x.abs() < 1e-14));
        }
    }

    #[test]
    fn critical_points_rejects_zero_dim() {
        assert!(critical_points(0).is_err());
        assert_eq!(critical_points(1).unwrap().len(), 1);
    }

    #[test]
    fn replicator_field_examples() {
        let p = [0.5, 0.3, 0.2];
        let f = replicator_field(&p, &p);
        let g = loss_gradient(&p);
        for (a, b) in f.iter().zip(&g) {
            assert!((a + b).abs() < 1e-16);
        }
        assert!(replicator_field(&p, &[2.5; 3]).iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn leading_gap_ties_pick_lowest_index() {
        assert_eq!(leading_gap(&[0.4, 0.4, 0.2]), (0, 0.0));
        let (i, g) = leading_gap(&[0.1, 0.6, 0.3]);
        assert_eq!(i, 1);
        assert!((g - 0.3).abs() < 1e-15);
    }
}
