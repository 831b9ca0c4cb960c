//! Location likelihoods and the joint visibility/location loss.
//!
//! A landmark is a mixed random variable: a visibility bit `v` and, when
//! visible, a 2D location `p`. The per-landmark loss is
//!
//! ```text
//! L = −(1 − v)·ln(1 − v̂) − v·ln(v̂) + v·NLL(p | μ, Σ)
//! ```
//!
//! with the location NLL taken from either a 2D Gaussian or a 2D Laplacian
//! whose covariance equals `Σ`:
//!
//! ```text
//! Gaussian:  ½ ln|Σ| + ½ m      + ln(2π)
//! Laplacian: ½ ln|Σ| + √(3 m)   + ln(2π/3)        m = dᵀΣ⁻¹d, d = p − μ
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CholeskyCovariance, Point2, SymMatrix2};
use crate::par::{self, Execution};

/// Lower clamp on predicted visibility.
pub const VIS_MIN: f64 = 1e-7;
/// Upper clamp on predicted visibility.
pub const VIS_MAX: f64 = 1.0 - 1e-7;
/// Added to `ELU(x) + 1` so Cholesky diagonals stay strictly positive.
pub const CHOL_EPS: f64 = 1e-4;
/// Squared Mahalanobis distance below which the Laplacian loss is treated as
/// sitting on its cusp.
pub const CUSP_EPS: f64 = 1e-18;

const LN_2PI: f64 = 1.837_877_066_409_345_3;
const LN_2PI_OVER_3: f64 = 0.739_264_777_741_235_7;
const SQRT_3: f64 = 1.732_050_807_568_877_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LikelihoodKind {
    Gaussian,
    Laplacian,
}

impl std::str::FromStr for LikelihoodKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(LikelihoodKind::Gaussian),
            "laplacian" => Ok(LikelihoodKind::Laplacian),
            other => Err(Error::InvalidArgument(format!("unknown likelihood '{other}'"))),
        }
    }
}

impl std::fmt::Display for LikelihoodKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LikelihoodKind::Gaussian => "gaussian",
            LikelihoodKind::Laplacian => "laplacian",
        })
    }
}

/// Predicted mean, Cholesky covariance and visibility for one landmark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandmarkPrediction {
    pub mean: Point2,
    pub chol: CholeskyCovariance,
    /// Probability the landmark is visible; clamped to `[VIS_MIN, VIS_MAX]`
    /// wherever it enters a loss.
    pub visibility: f64,
}

impl LandmarkPrediction {
    pub fn new(mean: Point2, chol: CholeskyCovariance, visibility: f64) -> Self {
        LandmarkPrediction { mean, chol, visibility }
    }

    pub fn covariance(&self) -> SymMatrix2 {
        self.chol.to_covariance()
    }

    pub fn clamped_visibility(&self) -> f64 {
        clamp_visibility(self.visibility)
    }
}

/// Labelled landmark: a location when visible, nothing when not.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruthLandmark {
    pub location: Option<Point2>,
}

impl GroundTruthLandmark {
    pub fn visible(p: Point2) -> Self {
        GroundTruthLandmark { location: Some(p) }
    }

    pub fn invisible() -> Self {
        GroundTruthLandmark { location: None }
    }

    pub fn is_visible(&self) -> bool {
        self.location.is_some()
    }

    /// The binary label `v`.
    pub fn v(&self) -> f64 {
        if self.is_visible() {
            1.0
        } else {
            0.0
        }
    }
}

/// Per-stage weights `λ_i` of the multi-stage loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageLossConfig {
    weights: Vec<f64>,
}

impl StageLossConfig {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument("stage weights must be finite and non-negative".into()));
        }
        if !weights.iter().any(|&w| w > 0.0) {
            return Err(Error::InvalidArgument("at least one stage weight must be positive".into()));
        }
        Ok(StageLossConfig { weights })
    }

    /// `K` stages, all weighted 1.
    pub fn uniform(stages: usize) -> Result<Self> {
        StageLossConfig::new(vec![1.0; stages])
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn stages(&self) -> usize {
        self.weights.len()
    }
}

pub fn clamp_visibility(v: f64) -> f64 {
    v.clamp(VIS_MIN, VIS_MAX)
}

/// Location NLL from a covariance matrix.
pub fn location_nll(kind: LikelihoodKind, p: Point2, mu: Point2, sigma: &SymMatrix2) -> Result<f64> {
    let chol = sigma.cholesky()?;
    Ok(location_nll_chol(kind, p, mu, &chol))
}

/// Location NLL from a Cholesky factor.
pub fn location_nll_chol(kind: LikelihoodKind, p: Point2, mu: Point2, chol: &CholeskyCovariance) -> f64 {
    let u = chol.solve_lower(p - mu);
    let m = u.dot(u);
    let half_log_det = chol.l11().ln() + chol.l22().ln();
    match kind {
        LikelihoodKind::Gaussian => half_log_det + 0.5 * m + LN_2PI,
        LikelihoodKind::Laplacian => half_log_det + (3.0 * m).sqrt() + LN_2PI_OVER_3,
    }
}

fn bce(v: f64, vhat: f64) -> f64 {
    -(1.0 - v) * (1.0 - vhat).ln() - v * vhat.ln()
}

/// Joint visibility/location loss for one landmark.
pub fn luvli_loss(kind: LikelihoodKind, gt: &GroundTruthLandmark, pred: &LandmarkPrediction) -> f64 {
    let vhat = pred.clamped_visibility();
    match gt.location {
        Some(p) => bce(1.0, vhat) + location_nll_chol(kind, p, pred.mean, &pred.chol),
        None => bce(0.0, vhat),
    }
}

/// `Σ_i λ_i · mean_j L_ij` over a `K × N_p` grid of stage predictions.
pub fn total_loss(
    kind: LikelihoodKind,
    cfg: &StageLossConfig,
    gts: &[GroundTruthLandmark],
    preds_per_stage: &[Vec<LandmarkPrediction>],
) -> Result<f64> {
    if preds_per_stage.len() != cfg.stages() {
        return Err(Error::DimensionMismatch(format!(
            "{} stages of predictions for {} stage weights",
            preds_per_stage.len(),
            cfg.stages()
        )));
    }
    if gts.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut total = 0.0;
    for (stage, (preds, &lambda)) in preds_per_stage.iter().zip(cfg.weights()).enumerate() {
        if preds.len() != gts.len() {
            return Err(Error::DimensionMismatch(format!(
                "stage {stage} has {} predictions for {} landmarks",
                preds.len(),
                gts.len()
            )));
        }
        let stage_loss: f64 = gts.iter().zip(preds).map(|(g, p)| luvli_loss(kind, g, p)).sum();
        total += lambda * stage_loss / gts.len() as f64;
    }
    Ok(total)
}

/// Gradient of [`luvli_loss`] with respect to the mean, the Cholesky entries
/// `(l11, l21, l22)` and the pre-sigmoid visibility logit.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LuvliGrad {
    pub mean: Point2,
    pub chol: [f64; 3],
    pub logit: f64,
}

impl LuvliGrad {
    pub fn as_array(&self) -> [f64; 6] {
        [self.mean.x, self.mean.y, self.chol[0], self.chol[1], self.chol[2], self.logit]
    }
}

/// Analytic gradient of [`luvli_loss`].
///
/// Returns [`Error::NonDifferentiablePoint`] for a visible Laplacian landmark
/// whose residual is (numerically) zero. [`luvli_subgrad`] substitutes a
/// valid subgradient there instead.
pub fn luvli_grad(kind: LikelihoodKind, gt: &GroundTruthLandmark, pred: &LandmarkPrediction) -> Result<LuvliGrad> {
    grad_impl(kind, gt, pred, false)
}

/// Like [`luvli_grad`] but uses subgradient 0 for the distance term at the
/// Laplacian cusp.
pub fn luvli_subgrad(kind: LikelihoodKind, gt: &GroundTruthLandmark, pred: &LandmarkPrediction) -> LuvliGrad {
    grad_impl(kind, gt, pred, true).expect("subgradient path never fails")
}

fn grad_impl(
    kind: LikelihoodKind,
    gt: &GroundTruthLandmark,
    pred: &LandmarkPrediction,
    allow_cusp: bool,
) -> Result<LuvliGrad> {
    let vhat = pred.clamped_visibility();
    // d/dz of the BCE through v̂ = sigmoid(z); the clamp is flat.
    let logit = if vhat > VIS_MIN && vhat < VIS_MAX {
        vhat - gt.v()
    } else {
        0.0
    };
    let Some(p) = gt.location else {
        return Ok(LuvliGrad { logit, ..Default::default() });
    };

    let l = &pred.chol;
    let u = l.solve_lower(p - pred.mean);
    let w = l.solve_upper(u); // Σ⁻¹ d
    let m = u.dot(u);
    // scale on ∂m
    let c = match kind {
        LikelihoodKind::Gaussian => 0.5,
        LikelihoodKind::Laplacian => {
            if m < CUSP_EPS {
                if !allow_cusp {
                    return Err(Error::NonDifferentiablePoint);
                }
                0.0
            } else {
                SQRT_3 / (2.0 * m.sqrt())
            }
        }
    };
    Ok(LuvliGrad {
        mean: w.scale(-2.0 * c),
        chol: [
            1.0 / l.l11() - 2.0 * c * w.x * u.x,
            -2.0 * c * w.y * u.x,
            1.0 / l.l22() - 2.0 * c * w.y * u.y,
        ],
        logit,
    })
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// Map unconstrained `(d1, off, d2)` to a valid Cholesky factor:
/// diagonals `ELU(d) + 1 + 1e-4`, off-diagonal unchanged.
pub fn cholesky_activation(raw: [f64; 3]) -> CholeskyCovariance {
    CholeskyCovariance::new(
        elu(raw[0]) + 1.0 + CHOL_EPS,
        raw[1],
        elu(raw[2]) + 1.0 + CHOL_EPS,
    )
    .expect("ELU + 1 + eps is positive for finite input")
}

/// Jacobian diagonal of [`cholesky_activation`].
pub fn cholesky_activation_grad(raw: [f64; 3]) -> [f64; 3] {
    [elu_grad(raw[0]), 1.0, elu_grad(raw[2])]
}

/// Inverse of [`cholesky_activation`] (diagonals must exceed `CHOL_EPS`).
pub fn cholesky_preactivation(chol: &CholeskyCovariance) -> [f64; 3] {
    let inv = |l: f64| {
        let e = l - 1.0 - CHOL_EPS;
        if e > 0.0 {
            e
        } else {
            e.ln_1p()
        }
    };
    [inv(chol.l11()), chol.l21(), inv(chol.l22())]
}

/// Sigmoid, clamped to `[VIS_MIN, VIS_MAX]`.
pub fn visibility_activation(raw: f64) -> f64 {
    let s = if raw >= 0.0 {
        1.0 / (1.0 + (-raw).exp())
    } else {
        let e = raw.exp();
        e / (1.0 + e)
    };
    clamp_visibility(s)
}

/// Draw one location from the Gaussian or Laplacian with mean `mu` and
/// covariance `L·Lᵀ`.
pub fn sample_chol<R: Rng + ?Sized>(kind: LikelihoodKind, mu: Point2, chol: &CholeskyCovariance, rng: &mut R) -> Point2 {
    let z = match kind {
        LikelihoodKind::Gaussian => Point2::new(rng.sample(StandardNormal), rng.sample(StandardNormal)),
        LikelihoodKind::Laplacian => {
            // radial density ∝ r·e^{−√3 r}: Gamma(2, rate √3) = (E₁ + E₂)/√3
            let e1: f64 = rng.sample(Exp1);
            let e2: f64 = rng.sample(Exp1);
            let r = (e1 + e2) / SQRT_3;
            let theta = std::f64::consts::TAU * rng.random::<f64>();
            let (s, c) = theta.sin_cos();
            Point2::new(r * c, r * s)
        }
    };
    mu + chol.apply(z)
}

pub fn sample<R: Rng + ?Sized>(kind: LikelihoodKind, mu: Point2, sigma: &SymMatrix2, rng: &mut R) -> Result<Point2> {
    let chol = sigma.cholesky()?;
    Ok(sample_chol(kind, mu, &chol, rng))
}

/// Samples per independently seeded stream in [`sample_many`].
pub const SAMPLE_CHUNK: usize = 8192;

/// `n` samples drawn on independent ChaCha streams of `SAMPLE_CHUNK` draws
/// each; the output depends only on `seed`, never on the execution mode.
pub fn sample_many(
    kind: LikelihoodKind,
    mu: Point2,
    sigma: &SymMatrix2,
    n: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<Point2>> {
    let chol = sigma.cholesky()?;
    let chunks = par::map_chunks(exec, n, SAMPLE_CHUNK, |c, range| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64);
        range.map(|_| sample_chol(kind, mu, &chol, &mut rng)).collect::<Vec<_>>()
    });
    Ok(chunks.concat())
}
