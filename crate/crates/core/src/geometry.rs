//! 2x2 symmetric positive-definite matrix algebra.
//!
//! Covariances are small and fixed-size, so everything here is closed form:
//! adjugate inverses, the analytic symmetric eigendecomposition and the
//! closed-form square root of a 2x2 SPD matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Threshold below which a determinant or leading entry counts as zero.
pub const SPD_EPS: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ZERO: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn scale(self, c: f64) -> Point2 {
        Point2::new(self.x * c, self.y * c)
    }
}

impl std::ops::Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl std::ops::Neg for Point2 {
    type Output = Point2;
    fn neg(self) -> Point2 {
        Point2::new(-self.x, -self.y)
    }
}

/// Symmetric 2x2 matrix `[[xx, xy], [xy, yy]]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SymMatrix2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

/// Symmetric eigendecomposition: `M = λ₁·v vᵀ + λ₂·w wᵀ` with
/// `v = (cos, sin)` and `w = (−sin, cos)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eigen2 {
    pub lambda1: f64,
    pub lambda2: f64,
    pub cos: f64,
    pub sin: f64,
}

impl Eigen2 {
    /// Rebuild `f(λ₁)·v vᵀ + f(λ₂)·w wᵀ`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> SymMatrix2 {
        let (a, b) = (f(self.lambda1), f(self.lambda2));
        let (c, s) = (self.cos, self.sin);
        SymMatrix2 {
            xx: a * c * c + b * s * s,
            xy: (a - b) * c * s,
            yy: a * s * s + b * c * c,
        }
    }
}

impl SymMatrix2 {
    pub const IDENTITY: SymMatrix2 = SymMatrix2 { xx: 1.0, xy: 0.0, yy: 1.0 };
    pub const ZERO: SymMatrix2 = SymMatrix2 { xx: 0.0, xy: 0.0, yy: 0.0 };

    pub const fn new(xx: f64, xy: f64, yy: f64) -> Self {
        SymMatrix2 { xx, xy, yy }
    }

    pub const fn diag(xx: f64, yy: f64) -> Self {
        SymMatrix2 { xx, xy: 0.0, yy }
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    pub fn is_finite(&self) -> bool {
        self.xx.is_finite() && self.xy.is_finite() && self.yy.is_finite()
    }

    pub fn is_spd(&self) -> bool {
        self.is_finite() && self.xx > SPD_EPS && self.det() > SPD_EPS
    }

    pub fn check_spd(&self) -> Result<()> {
        if self.is_spd() {
            Ok(())
        } else {
            Err(Error::NonPositiveDefinite)
        }
    }

    pub fn scale(&self, c: f64) -> SymMatrix2 {
        SymMatrix2::new(self.xx * c, self.xy * c, self.yy * c)
    }

    pub fn add(&self, other: &SymMatrix2) -> SymMatrix2 {
        SymMatrix2::new(self.xx + other.xx, self.xy + other.xy, self.yy + other.yy)
    }

    /// Matrix-vector product.
    pub fn apply(&self, p: Point2) -> Point2 {
        Point2::new(self.xx * p.x + self.xy * p.y, self.xy * p.x + self.yy * p.y)
    }

    /// Adjugate inverse.
    pub fn inverse(&self) -> Result<SymMatrix2> {
        self.check_spd()?;
        let det = self.det();
        Ok(SymMatrix2::new(self.yy / det, -self.xy / det, self.xx / det))
    }

    /// `A·self·Aᵀ` for a symmetric `A` (the result is symmetric).
    pub fn congruence(&self, a: &SymMatrix2) -> SymMatrix2 {
        // A·M
        let m00 = a.xx * self.xx + a.xy * self.xy;
        let m01 = a.xx * self.xy + a.xy * self.yy;
        let m10 = a.xy * self.xx + a.yy * self.xy;
        let m11 = a.xy * self.xy + a.yy * self.yy;
        SymMatrix2::new(
            m00 * a.xx + m01 * a.xy,
            m00 * a.xy + m01 * a.yy,
            m10 * a.xy + m11 * a.yy,
        )
    }

    /// `R·self·Rᵀ` for the rotation by `theta` radians.
    pub fn rotate(&self, theta: f64) -> SymMatrix2 {
        let (s, c) = theta.sin_cos();
        let m00 = c * self.xx - s * self.xy;
        let m01 = c * self.xy - s * self.yy;
        let m10 = s * self.xx + c * self.xy;
        let m11 = s * self.xy + c * self.yy;
        SymMatrix2::new(
            m00 * c - m01 * s,
            m00 * s + m01 * c,
            m10 * s + m11 * c,
        )
    }

    pub fn eigen(&self) -> Eigen2 {
        let mean = 0.5 * (self.xx + self.yy);
        let half_diff = 0.5 * (self.xx - self.yy);
        let r = half_diff.hypot(self.xy);
        let lambda1 = mean + r;
        // det/λ₁ avoids cancellation in the small eigenvalue.
        let lambda2 = if lambda1 != 0.0 && mean > 0.0 {
            self.det() / lambda1
        } else {
            mean - r
        };
        let (cos, sin) = if r == 0.0 {
            (1.0, 0.0)
        } else {
            let theta = 0.5 * self.xy.atan2(half_diff);
            (theta.cos(), theta.sin())
        };
        Eigen2 { lambda1, lambda2, cos, sin }
    }

    /// Lower-triangular Cholesky factor.
    pub fn cholesky(&self) -> Result<CholeskyCovariance> {
        self.check_spd()?;
        let l11 = self.xx.sqrt();
        let l21 = self.xy / l11;
        let l22 = (self.det() / self.xx).sqrt();
        CholeskyCovariance::new(l11, l21, l22)
    }

    pub fn max_abs_diff(&self, other: &SymMatrix2) -> f64 {
        (self.xx - other.xx)
            .abs()
            .max((self.xy - other.xy).abs())
            .max((self.yy - other.yy).abs())
    }

    pub fn frobenius(&self) -> f64 {
        (self.xx * self.xx + 2.0 * self.xy * self.xy + self.yy * self.yy).sqrt()
    }
}

/// SPD covariance stored as its Cholesky factor `L = [[l11, 0], [l21, l22]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CholeskyCovariance {
    l11: f64,
    l21: f64,
    l22: f64,
}

impl CholeskyCovariance {
    pub const IDENTITY: CholeskyCovariance = CholeskyCovariance { l11: 1.0, l21: 0.0, l22: 1.0 };

    pub fn new(l11: f64, l21: f64, l22: f64) -> Result<Self> {
        if l11.is_finite() && l22.is_finite() && l21.is_finite() && l11 > 0.0 && l22 > 0.0 {
            Ok(CholeskyCovariance { l11, l21, l22 })
        } else {
            Err(Error::NonPositiveDefinite)
        }
    }

    pub fn l11(&self) -> f64 {
        self.l11
    }

    pub fn l21(&self) -> f64 {
        self.l21
    }

    pub fn l22(&self) -> f64 {
        self.l22
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.l11, self.l21, self.l22]
    }

    /// `Σ = L·Lᵀ`.
    pub fn to_covariance(&self) -> SymMatrix2 {
        SymMatrix2::new(
            self.l11 * self.l11,
            self.l11 * self.l21,
            self.l21 * self.l21 + self.l22 * self.l22,
        )
    }

    /// `|Σ|^{1/2} = l11·l22`.
    pub fn sqrt_det(&self) -> f64 {
        self.l11 * self.l22
    }

    /// `log|Σ| = 2(log l11 + log l22)`.
    pub fn log_det(&self) -> f64 {
        2.0 * (self.l11.ln() + self.l22.ln())
    }

    /// `L·p`.
    pub fn apply(&self, p: Point2) -> Point2 {
        Point2::new(self.l11 * p.x, self.l21 * p.x + self.l22 * p.y)
    }

    /// Forward substitution `L⁻¹·d`.
    pub fn solve_lower(&self, d: Point2) -> Point2 {
        let u1 = d.x / self.l11;
        Point2::new(u1, (d.y - self.l21 * u1) / self.l22)
    }

    /// Back substitution `L⁻ᵀ·u`.
    pub fn solve_upper(&self, u: Point2) -> Point2 {
        let w2 = u.y / self.l22;
        Point2::new((u.x - self.l21 * w2) / self.l11, w2)
    }
}

/// `dᵀ Σ⁻¹ d`.
pub fn mahalanobis_sq(d: Point2, sigma: &SymMatrix2) -> Result<f64> {
    let inv = sigma.inverse()?;
    Ok(d.dot(inv.apply(d)).max(0.0))
}

pub fn matrix_log(m: &SymMatrix2) -> Result<SymMatrix2> {
    m.check_spd()?;
    let e = m.eigen();
    if e.lambda2 <= 0.0 {
        return Err(Error::NonPositiveDefinite);
    }
    Ok(e.map(f64::ln))
}

pub fn matrix_exp(m: &SymMatrix2) -> SymMatrix2 {
    m.eigen().map(f64::exp)
}

/// Symmetric `S` with `S·Σ·S = I`.
pub fn inv_sqrt(sigma: &SymMatrix2) -> Result<SymMatrix2> {
    sigma.check_spd()?;
    // √Σ = (Σ + s·I)/t with s = √|Σ|, t = √(tr Σ + 2s); det(√Σ) = s.
    let s = sigma.det().sqrt();
    let t = (sigma.trace() + 2.0 * s).sqrt();
    let root = SymMatrix2::new((sigma.xx + s) / t, sigma.xy / t, (sigma.yy + s) / t);
    Ok(SymMatrix2::new(root.yy / s, -root.xy / s, root.xx / s))
}
