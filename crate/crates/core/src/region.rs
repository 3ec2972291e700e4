//! Constraint regions `Θ ⊂ Θ_k` that can be checked against data.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::grouping::{group_probs, GroupSpec};
use crate::simplex::SimplexPoint;
use crate::{Error, Result};

/// Absolute tolerance for the linear equality constraints of the
/// cross-hairs and Pauli regions.
pub const EQUALITY_TOLERANCE: f64 = 1e-9;

/// The trine ellipse `{theta : (theta - c)^t C (theta - c) <= 1}` in the
/// coordinates `(theta_1, theta_2)`, with
/// `c = (2a, 1 - a) / 2` and `C = (1 - 2a)^-1 [[(1 - 1/a)^2, 2], [2, 4]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrineGeometry {
    a: f64,
    center: [f64; 2],
    form: [[f64; 2]; 2],
    /// Symmetric `C^(-1/2)`, mapping the unit disc onto the ellipse.
    inv_sqrt: [[f64; 2]; 2],
}

impl TrineGeometry {
    pub fn new(a: f64) -> Result<Self> {
        check_trine_a(a)?;
        let center = [a, 0.5 * (1.0 - a)];
        let s = 1.0 / (1.0 - 2.0 * a);
        let form = [
            [s * (1.0 - 1.0 / a).powi(2), 2.0 * s],
            [2.0 * s, 4.0 * s],
        ];
        let inv_sqrt = inverse_2x2(sqrt_spd_2x2(form));
        Ok(Self {
            a,
            center,
            form,
            inv_sqrt,
        })
    }

    /// `a = sin^2(arccos(cot(2 phi0))) / 2` from the experiment angle `phi0`.
    pub fn from_angle(phi0: f64) -> Result<Self> {
        Self::new(a_from_angle(phi0))
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn center(&self) -> [f64; 2] {
        self.center
    }

    pub fn form(&self) -> [[f64; 2]; 2] {
        self.form
    }

    pub fn inv_sqrt(&self) -> [[f64; 2]; 2] {
        self.inv_sqrt
    }

    /// The center as a 3-cell probability vector.
    pub fn center_point(&self) -> SimplexPoint {
        let [x, y] = self.center;
        SimplexPoint::from_raw(vec![x, y, 1.0 - x - y])
    }

    /// `Q(theta) = (theta - c)^t C (theta - c)` using `theta_1, theta_2`.
    pub fn quadratic_form(&self, theta1: f64, theta2: f64) -> f64 {
        let dx = theta1 - self.center[0];
        let dy = theta2 - self.center[1];
        let f = &self.form;
        f[0][0] * dx * dx + 2.0 * f[0][1] * dx * dy + f[1][1] * dy * dy
    }

    /// Maps polar coordinates `(r, angle)` with `r in [0, 1]` to the point
    /// `c + C^(-1/2) sqrt(r) (cos angle, sin angle)`, which has `Q = r`.
    pub fn point_at(&self, r: f64, angle: f64) -> SimplexPoint {
        let rho = r.sqrt();
        let (u, v) = (rho * angle.cos(), rho * angle.sin());
        let m = &self.inv_sqrt;
        let x = self.center[0] + m[0][0] * u + m[0][1] * v;
        let y = self.center[1] + m[1][0] * u + m[1][1] * v;
        let z = 1.0 - x - y;
        // the ellipse is inscribed in the simplex; clamp rounding at tangency
        let probs = [x, y, z].map(|p| p.max(0.0));
        let sum: f64 = probs.iter().sum();
        SimplexPoint::from_raw(probs.iter().map(|p| p / sum).collect())
    }
}

pub fn a_from_angle(phi0: f64) -> f64 {
    let cot = 1.0 / (2.0 * phi0).tan();
    0.5 * cot.acos().sin().powi(2)
}

fn check_trine_a(a: f64) -> Result<()> {
    if !(a > 0.0 && a < 0.5) {
        return Err(Error::InvalidParameter(format!(
            "trine parameter a must lie in (0, 1/2), got {a}"
        )));
    }
    Ok(())
}

/// Uniform-prior mass of the trine ellipse, `a π sqrt(1 - 2a)`.
pub fn trine_prior_mass(a: f64) -> Result<f64> {
    check_trine_a(a)?;
    Ok(a * PI * (1.0 - 2.0 * a).sqrt())
}

fn sqrt_spd_2x2(m: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let s = det.sqrt();
    let t = (m[0][0] + m[1][1] + 2.0 * s).sqrt();
    [
        [(m[0][0] + s) / t, m[0][1] / t],
        [m[1][0] / t, (m[1][1] + s) / t],
    ]
}

fn inverse_2x2(m: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    [
        [m[1][1] / det, -m[0][1] / det],
        [-m[1][0] / det, m[0][0] / det],
    ]
}

/// A linear equality `sum_{i in cells} theta_i = value` (0-based cells).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearEquality {
    pub cells: Vec<usize>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintRegion {
    TrineEllipse(TrineGeometry),
    OrderedCone,
    GroupedOrderedCone(GroupSpec),
    /// `sum theta_i^2 <= bound` plus optional linear equalities, on `dim` cells.
    QuadBall {
        dim: usize,
        bound: f64,
        equalities: Vec<LinearEquality>,
    },
}

impl ConstraintRegion {
    pub fn trine(a: f64) -> Result<Self> {
        Ok(ConstraintRegion::TrineEllipse(TrineGeometry::new(a)?))
    }

    pub fn quad_ball(dim: usize, bound: f64, equalities: Vec<LinearEquality>) -> Result<Self> {
        if !(bound > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "ball bound must be positive, got {bound}"
            )));
        }
        if let Some(e) = equalities.iter().find(|e| e.cells.iter().any(|&c| c >= dim)) {
            return Err(Error::InvalidParameter(format!(
                "equality cells {:?} out of range for {dim} cells",
                e.cells
            )));
        }
        Ok(ConstraintRegion::QuadBall {
            dim,
            bound,
            equalities,
        })
    }

    /// Symmetric trine written as a sphere constraint, `sum theta_i^2 <= 1/2`.
    /// Coincides with `trine(1/3)`.
    pub fn symmetric_trine_ball() -> Self {
        ConstraintRegion::QuadBall {
            dim: 3,
            bound: 0.5,
            equalities: Vec::new(),
        }
    }

    pub fn tetrahedron() -> Self {
        ConstraintRegion::QuadBall {
            dim: 4,
            bound: 1.0 / 3.0,
            equalities: Vec::new(),
        }
    }

    pub fn crosshairs() -> Self {
        ConstraintRegion::QuadBall {
            dim: 4,
            bound: 3.0 / 8.0,
            equalities: vec![
                LinearEquality {
                    cells: vec![0, 1],
                    value: 0.5,
                },
                LinearEquality {
                    cells: vec![2, 3],
                    value: 0.5,
                },
            ],
        }
    }

    pub fn pauli() -> Self {
        ConstraintRegion::QuadBall {
            dim: 6,
            bound: 2.0 / 9.0,
            equalities: (0..3)
                .map(|j| LinearEquality {
                    cells: vec![2 * j, 2 * j + 1],
                    value: 1.0 / 3.0,
                })
                .collect(),
        }
    }

    /// Required number of cells, when the region fixes one.
    pub fn dim(&self) -> Option<usize> {
        match self {
            ConstraintRegion::TrineEllipse(_) => Some(3),
            ConstraintRegion::QuadBall { dim, .. } => Some(*dim),
            _ => None,
        }
    }

    pub fn check_dim(&self, dim: usize) -> Result<()> {
        match self.dim() {
            Some(d) if d != dim => Err(Error::DimensionMismatch {
                expected: d,
                got: dim,
            }),
            _ => {
                if let ConstraintRegion::GroupedOrderedCone(spec) = self {
                    spec.validate(dim)?;
                }
                Ok(())
            }
        }
    }

    pub fn contains(&self, theta: &SimplexPoint) -> Result<bool> {
        self.check_dim(theta.dim())?;
        Ok(match self {
            ConstraintRegion::TrineEllipse(g) => {
                let p = theta.probs();
                g.quadratic_form(p[0], p[1]) <= 1.0
            }
            ConstraintRegion::OrderedCone => theta.is_ordered(),
            ConstraintRegion::GroupedOrderedCone(spec) => group_probs(theta, spec)?.is_ordered(),
            ConstraintRegion::QuadBall {
                bound, equalities, ..
            } => {
                let p = theta.probs();
                let sq: f64 = p.iter().map(|x| x * x).sum();
                sq <= *bound
                    && equalities.iter().all(|e| {
                        let s: f64 = e.cells.iter().map(|&c| p[c]).sum();
                        (s - e.value).abs() <= EQUALITY_TOLERANCE
                    })
            }
        })
    }

    /// Exact mass under the uniform prior on `dim` cells, when known in
    /// closed form. `Some(0.0)` flags a lower-dimensional region.
    pub fn analytic_uniform_mass(&self, dim: usize) -> Result<Option<f64>> {
        self.check_dim(dim)?;
        Ok(match self {
            ConstraintRegion::TrineEllipse(g) => Some(trine_prior_mass(g.a())?),
            ConstraintRegion::OrderedCone => Some(inverse_factorial(dim)),
            ConstraintRegion::GroupedOrderedCone(spec) => {
                if spec.equal_sizes(dim) {
                    Some(inverse_factorial(spec.num_groups(dim)))
                } else {
                    None
                }
            }
            ConstraintRegion::QuadBall { equalities, .. } => {
                if equalities.is_empty() {
                    None
                } else {
                    Some(0.0)
                }
            }
        })
    }
}

/// `1 / m!`, the uniform mass of the ordered cone on `m` cells (one of the
/// `m!` equally likely orderings).
pub fn inverse_factorial(m: usize) -> f64 {
    (1..=m).fold(1.0, |acc, i| acc / i as f64)
}
