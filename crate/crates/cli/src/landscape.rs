//! Planar embedding of the 3-simplex and loss grids over it.

use std::io::Write;

use serde::{Deserialize, Serialize};
use simplex_stdp::dynamics::CorrelationMatrix;
use simplex_stdp::simplex::loss;

use crate::error::{CliError, CliResult};

/// Image of `p` under `p ↦ (p_2 + p_3/2, (√3/2) p_3)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarycentricPoint {
    pub x: f64,
    pub y: f64,
}

impl BarycentricPoint {
    pub fn from_probabilities(p: &[f64]) -> CliResult<Self> {
        if p.len() != 3 {
            return Err(unsupported(p.len()));
        }
        Ok(BarycentricPoint {
            x: p[1] + 0.5 * p[2],
            y: 0.75f64.sqrt() * p[2],
        })
    }

    /// Inside the triangle with vertices `(0,0)`, `(1,0)`, `(1/2, √3/2)`, up to `tol`.
    pub fn in_triangle(&self, tol: f64) -> bool {
        let s = 3f64.sqrt();
        self.y >= -tol && s * self.x - self.y >= -tol && s * (1.0 - self.x) - self.y >= -tol
    }
}

fn unsupported(d: usize) -> CliError {
    CliError::config(format!("the planar embedding needs d = 3, got d = {d}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    CubicQuartic,
    /// `-½ pᵀΓp`.
    ShahshahaniCorrelated(CorrelationMatrix),
}

impl LossKind {
    pub fn evaluate(&self, p: &[f64]) -> f64 {
        match self {
            LossKind::CubicQuartic => loss(p),
            LossKind::ShahshahaniCorrelated(gamma) => {
                let gp = gamma.apply(p);
                -0.5 * p.iter().zip(&gp).map(|(a, b)| a * b).sum::<f64>()
            }
        }
    }

    fn column(&self) -> &'static str {
        match self {
            LossKind::CubicQuartic => "loss",
            LossKind::ShahshahaniCorrelated(_) => "value",
        }
    }
}

/// Divisions per edge for `grid_step`, which must divide 1.
pub fn grid_divisions(grid_step: f64) -> CliResult<usize> {
    if !(grid_step > 0.0 && grid_step < 0.5) {
        return Err(CliError::config(format!("grid_step = {grid_step} must lie in (0, 0.5)")));
    }
    let n = (1.0 / grid_step).round();
    if (n * grid_step - 1.0).abs() > 1e-6 {
        return Err(CliError::config(format!("grid_step = {grid_step} must divide 1")));
    }
    Ok(n as usize)
}

/// Size and extremes of an emitted grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSummary {
    pub rows: usize,
    pub min_point: BarycentricPoint,
    pub min_value: f64,
    pub max_point: BarycentricPoint,
    pub max_value: f64,
}

/// Writes `x,y,loss` (or `x,y,value` for the Shahshahani loss) on the points
/// `(i, j, n - i - j) / n` of the simplex, `n = 1 / grid_step`.
pub fn emit_landscape<W: Write>(out: &mut W, d: usize, grid_step: f64, kind: &LossKind) -> CliResult<GridSummary> {
    if d != 3 {
        return Err(unsupported(d));
    }
    if let LossKind::ShahshahaniCorrelated(g) = kind {
        if g.dim() != 3 {
            return Err(unsupported(g.dim()));
        }
    }
    let n = grid_divisions(grid_step)?;
    let io = |e: std::io::Error| CliError::Output(e.to_string());
    writeln!(out, "x,y,{}", kind.column()).map_err(io)?;
    let origin = BarycentricPoint { x: 0.0, y: 0.0 };
    let mut summary = GridSummary {
        rows: 0,
        min_point: origin,
        min_value: f64::INFINITY,
        max_point: origin,
        max_value: f64::NEG_INFINITY,
    };
    for k in 0..=n {
        for j in 0..=(n - k) {
            let i = n - j - k;
            let p = [i as f64 / n as f64, j as f64 / n as f64, k as f64 / n as f64];
            let b = BarycentricPoint::from_probabilities(&p)?;
            let value = kind.evaluate(&p);
            writeln!(out, "{},{},{}", b.x, b.y, value).map_err(io)?;
            if value < summary.min_value {
                (summary.min_point, summary.min_value) = (b, value);
            }
            if value > summary.max_value {
                (summary.max_point, summary.max_value) = (b, value);
            }
            summary.rows += 1;
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vertices_map_to_triangle_corners() {
        let v = |p: [f64; 3]| BarycentricPoint::from_probabilities(&p).unwrap();
        assert_eq!(v([1.0, 0.0, 0.0]), BarycentricPoint { x: 0.0, y: 0.0 });
        assert_eq!(v([0.0, 1.0, 0.0]), BarycentricPoint { x: 1.0, y: 0.0 });
        let top = v([0.0, 0.0, 1.0]);
        assert_eq!(top.x, 0.5);
        assert!((top.y - 3f64.sqrt() / 2.0).abs() < 1e-16);
        assert!(BarycentricPoint::from_probabilities(&[0.5, 0.5]).is_err());
    }

    #[test]
    fn center_and_minima() {
        let mut buf = Vec::new();
        let grid = emit_landscape(&mut buf, 3, 1.0 / 30.0, &LossKind::CubicQuartic).unwrap();
        assert_eq!(grid.rows, 31 * 32 / 2);
        assert!((grid.min_value + 1.0 / 12.0).abs() < 1e-15);
        let m = grid.min_point;
        assert!(m.y == 0.0 && (m.x == 0.0 || m.x == 1.0) || m.x == 0.5 && m.y > 0.8);
        let text = String::from_utf8(buf).unwrap();
        let mut min = f64::INFINITY;
        let mut center = None;
        for line in text.lines().skip(1) {
            let v: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
            let b = BarycentricPoint { x: v[0], y: v[1] };
            assert!(b.in_triangle(1e-12));
            min = min.min(v[2]);
            if (v[0] - 0.5).abs() < 1e-12 && (v[1] - 3f64.sqrt() / 6.0).abs() < 1e-12 {
                center = Some(v[2]);
            }
        }
        assert!((center.unwrap() + 1.0 / 108.0).abs() < 1e-12);
        assert!((min + 1.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn shahshahani_identity_is_half_norm() {
        let kind = LossKind::ShahshahaniCorrelated(CorrelationMatrix::identity(3));
        assert_eq!(kind.evaluate(&[1.0, 0.0, 0.0]), -0.5);
        assert!((kind.evaluate(&[0.5, 0.25, 0.25]) + 0.5 * 0.375).abs() < 1e-16);
        let mut buf = Vec::new();
        emit_landscape(&mut buf, 3, 0.25, &kind).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("x,y,value\n"));
    }

    #[test]
    fn rejects_bad_steps_and_dimensions() {
        let mut buf = Vec::new();
        for step in [0.0, 0.5, 0.3, -0.1, f64::NAN] {
            assert!(emit_landscape(&mut buf, 3, step, &LossKind::CubicQuartic).is_err());
        }
        assert!(emit_landscape(&mut buf, 4, 0.1, &LossKind::CubicQuartic).is_err());
    }
}
