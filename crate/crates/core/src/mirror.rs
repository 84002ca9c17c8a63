//! Exponentiated gradient on the simplex and its first-order agreement with
//! the multiplicative update.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::simplex::ProbabilityVector;

/// `p_i e^{-α g_i} / Σ_j p_j e^{-α g_j}`. Zero entries stay zero.
///
/// ```
/// use simplex_stdp::mirror::entropic_step;
/// use simplex_stdp::simplex::ProbabilityVector;
///
/// let p = ProbabilityVector::new(vec![0.5, 0.5]).unwrap();
/// let next = entropic_step(&p, 0.1, &[-0.5, -0.5]).unwrap();
/// assert_eq!(next.as_slice(), &[0.5, 0.5]);
/// ```
pub fn entropic_step(p: &ProbabilityVector, alpha: f64, grad: &[f64]) -> Result<ProbabilityVector> {
    check_dim(p.dim(), grad.len())?;
    check_alpha(alpha)?;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::InvalidInput("gradient must be finite".into()));
    }
    let shift = grad.iter().cloned().fold(f64::INFINITY, f64::min);
    let unnormalized: Vec<f64> = p
        .as_slice()
        .iter()
        .zip(grad)
        .map(|(pi, g)| pi * (-alpha * (g - shift)).exp())
        .collect();
    Ok(ProbabilityVector::from_unnormalized(unnormalized))
}

/// `p_i (1 + α p_i) / Σ_j p_j (1 + α p_j)`.
pub fn multiplicative_step(p: &ProbabilityVector, alpha: f64) -> Result<ProbabilityVector> {
    check_alpha(alpha)?;
    let unnormalized: Vec<f64> = p.as_slice().iter().map(|pi| pi * (1.0 + alpha * pi)).collect();
    Ok(ProbabilityVector::from_unnormalized(unnormalized))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("alpha = {alpha} must be positive")))
    }
}

/// Both steps at one rate, with the gradient of `-‖p‖²/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MirrorStepReport {
    pub alpha: f64,
    pub entropic_result: ProbabilityVector,
    pub multiplicative_result: ProbabilityVector,
    /// `max_i |entropic_i − multiplicative_i|`.
    pub sup_difference: f64,
    /// `p` has zero entries, which both maps keep at zero.
    pub boundary: bool,
}

/// Compares the two steps at every rate in `alphas`.
///
/// The difference is evaluated from `e^{αp_i} − 1 − αp_i` directly instead
/// of subtracting the two results, so it stays accurate when it is far below
/// the rounding error of the iterates.
pub fn order_comparison(p: &ProbabilityVector, alphas: &[f64]) -> Result<Vec<MirrorStepReport>> {
    let grad: Vec<f64> = p.as_slice().iter().map(|x| -x).collect();
    let s1: f64 = p.as_slice().iter().sum();
    let s2: f64 = p.as_slice().iter().map(|x| x * x).sum();
    alphas
        .iter()
        .map(|&alpha| {
            let entropic_result = entropic_step(p, alpha, &grad)?;
            let multiplicative_result = multiplicative_step(p, alpha)?;
            let remainders: Vec<f64> = p
                .as_slice()
                .iter()
                .map(|&x| (alpha * x).exp_m1() - alpha * x)
                .collect();
            let weighted: f64 = p.as_slice().iter().zip(&remainders).map(|(x, r)| x * r).sum();
            let sm = s1 + alpha * s2;
            let se = sm + weighted;
            let sup_difference = p
                .as_slice()
                .iter()
                .zip(&remainders)
                .map(|(&x, &r)| (x * (r * sm - (1.0 + alpha * x) * weighted) / (se * sm)).abs())
                .fold(0.0, f64::max);
            Ok(MirrorStepReport {
                alpha,
                entropic_result,
                multiplicative_result,
                sup_difference,
                boundary: p.as_slice().contains(&0.0),
            })
        })
        .collect()
}

/// `sup_difference[i] / sup_difference[i+1]` for consecutive reports.
pub fn successive_ratios(reports: &[MirrorStepReport]) -> Vec<f64> {
    reports
        .windows(2)
        .map(|w| w[0].sup_difference / w[1].sup_difference)
        .collect()
}

/// CSV `alpha,sup_difference`.
pub fn write_comparison_csv<W: Write>(out: &mut W, reports: &[MirrorStepReport]) -> Result<()> {
    writeln!(out, "alpha,sup_difference")?;
    for r in reports {
        writeln!(out, "{},{}", r.alpha, r.sup_difference)?;
    }
    Ok(())
}

/// `Σ p_i log(p_i / q_i)`; requires `q_i > 0` wherever `p_i > 0`.
pub fn kl_divergence(p: &ProbabilityVector, q: &ProbabilityVector) -> Result<f64> {
    check_dim(p.dim(), q.dim())?;
    let mut total = 0.0;
    for (i, (&pi, &qi)) in p.as_slice().iter().zip(q.as_slice()).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(Error::InvalidInput(format!(
                "p is not absolutely continuous with respect to q at coordinate {}",
                i + 1
            )));
        }
        total += pi * (pi / qi).ln();
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ProbabilityVector {
        ProbabilityVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn entropic_fixed_points() {
        let p = pv(&[0.2, 0.3, 0.5]);
        assert_eq!(entropic_step(&p, 0.3, &[0.0; 3]).unwrap(), p);
        let shifted = entropic_step(&p, 0.3, &[2.0; 3]).unwrap();
        for (a, b) in shifted.as_slice().iter().zip(p.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn entropic_gradient_shift_invariance() {
        let p = pv(&[0.2, 0.3, 0.5]);
        let g = [0.4, -1.0, 0.25];
        let a = entropic_step(&p, 0.2, &g).unwrap();
        let b = entropic_step(&p, 0.2, &g.map(|x| x + 3.5)).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn entropic_keeps_zero_entries() {
        let p = pv(&[0.0, 0.4, 0.6]);
        let next = entropic_step(&p, 0.5, &[-3.0, 1.0, 0.0]).unwrap();
        assert_eq!(next[0], 0.0);
        assert!((next.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn multiplicative_examples() {
        let u = ProbabilityVector::uniform(4);
        let next = multiplicative_step(&u, 0.3).unwrap();
        for x in next.as_slice() {
            assert!((x - 0.25).abs() < 1e-16);
        }
        let next = multiplicative_step(&pv(&[0.6, 0.4]), 0.1).unwrap();
        assert!((next[0] - 0.636 / 1.052).abs() < 1e-15);
        assert!((next[1] - 0.416 / 1.052).abs() < 1e-15);
        let tiny = multiplicative_step(&pv(&[0.6, 0.4]), 1e-12).unwrap();
        assert!((tiny[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn difference_is_quadratic() {
        for p in [pv(&[0.5, 0.3, 0.2]), pv(&[1.0 - 1e-6, 0.5e-6, 0.5e-6])] {
            let reports = order_comparison(&p, &[1e-2, 1e-3, 1e-4]).unwrap();
            for r in successive_ratios(&reports) {
                assert!((80.0..=120.0).contains(&r), "ratio {r}");
            }
        }
    }

    #[test]
    fn stable_difference_matches_direct_one() {
        let p = pv(&[0.5, 0.3, 0.2]);
        for r in order_comparison(&p, &[0.5, 1e-1, 1e-2]).unwrap() {
            let direct = r
                .entropic_result
                .as_slice()
                .iter()
                .zip(r.multiplicative_result.as_slice())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!((direct - r.sup_difference).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_point_has_no_difference() {
        let u = ProbabilityVector::uniform(3);
        for r in order_comparison(&u, &[1e-2, 1e-3]).unwrap() {
            assert!(r.sup_difference < 1e-18);
        }
    }

    #[test]
    fn kl_support_check() {
        let p = pv(&[0.5, 0.5]);
        let q = pv(&[1.0, 0.0]);
        assert!(kl_divergence(&p, &q).is_err());
        assert_eq!(kl_divergence(&q, &p).unwrap(), 2f64.ln());
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn csv_format() {
        let p = pv(&[0.5, 0.3, 0.2]);
        let reports = order_comparison(&p, &[0.01]).unwrap();
        let mut buf = Vec::new();
        write_comparison_csv(&mut buf, &reports).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("alpha,sup_difference\n0.01,"));
    }
}
