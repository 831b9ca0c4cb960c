//! Synthetic scenarios and maximum-likelihood fitting of landmark groups.
//!
//! The fitter works on the same unconstrained parameters a network head
//! would output: the mean, the raw Cholesky pre-activation and the
//! visibility logit. It minimizes the mean per-sample loss with Adam plus a
//! step-halving safeguard (a step that raises the loss is rejected and the
//! learning rate halved), so the accepted loss sequence never increases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::BoundingBox;
use crate::error::{Error, Result};
use crate::geometry::{CholeskyCovariance, Point2, SymMatrix2};
use crate::likelihood::{
    self, cholesky_activation, cholesky_activation_grad, luvli_grad, luvli_loss, luvli_subgrad,
    visibility_activation, GroundTruthLandmark, LandmarkPrediction, LikelihoodKind,
};
use crate::par::{self, Execution};

/// Ground truth for one synthetic landmark.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandmarkTruth {
    pub mean: Point2,
    pub cov: SymMatrix2,
    pub visibility_rate: f64,
    /// Visible samples are labelled externally occluded rather than
    /// unoccluded.
    pub occluded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScenarioFile", into = "ScenarioFile")]
pub struct SyntheticScenario {
    pub kind: LikelihoodKind,
    pub num_samples: usize,
    pub seed: u64,
    pub landmarks: Vec<LandmarkTruth>,
    pub bbox: Option<BoundingBox>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    kind: LikelihoodKind,
    num_samples: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    bbox: Option<BoundingBox>,
    landmarks: Vec<LandmarkTruthFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LandmarkTruthFile {
    mean: [f64; 2],
    cov: [f64; 3],
    visibility_rate: f64,
    #[serde(default)]
    occluded: bool,
}

impl TryFrom<ScenarioFile> for SyntheticScenario {
    type Error = Error;
    fn try_from(f: ScenarioFile) -> Result<Self> {
        let landmarks = f
            .landmarks
            .into_iter()
            .map(|l| LandmarkTruth {
                mean: Point2::new(l.mean[0], l.mean[1]),
                cov: SymMatrix2::new(l.cov[0], l.cov[1], l.cov[2]),
                visibility_rate: l.visibility_rate,
                occluded: l.occluded,
            })
            .collect();
        SyntheticScenario::new(f.kind, f.num_samples, f.seed, landmarks, f.bbox)
    }
}

impl From<SyntheticScenario> for ScenarioFile {
    fn from(s: SyntheticScenario) -> Self {
        ScenarioFile {
            kind: s.kind,
            num_samples: s.num_samples,
            seed: s.seed,
            bbox: s.bbox,
            landmarks: s
                .landmarks
                .iter()
                .map(|l| LandmarkTruthFile {
                    mean: [l.mean.x, l.mean.y],
                    cov: [l.cov.xx, l.cov.xy, l.cov.yy],
                    visibility_rate: l.visibility_rate,
                    occluded: l.occluded,
                })
                .collect(),
        }
    }
}

impl SyntheticScenario {
    pub fn new(
        kind: LikelihoodKind,
        num_samples: usize,
        seed: u64,
        landmarks: Vec<LandmarkTruth>,
        bbox: Option<BoundingBox>,
    ) -> Result<Self> {
        if num_samples < 1 {
            return Err(Error::InvalidArgument("scenario needs at least one sample".into()));
        }
        if landmarks.is_empty() {
            return Err(Error::InvalidArgument("scenario needs at least one landmark".into()));
        }
        for (i, l) in landmarks.iter().enumerate() {
            if !l.mean.is_finite() {
                return Err(Error::InvalidArgument(format!("landmark {i}: mean must be finite")));
            }
            if !l.cov.is_spd() {
                return Err(Error::InvalidArgument(format!("landmark {i}: covariance is not SPD")));
            }
            if !(0.0..=1.0).contains(&l.visibility_rate) {
                return Err(Error::InvalidArgument(format!(
                    "landmark {i}: visibility rate {} outside [0, 1]",
                    l.visibility_rate
                )));
            }
        }
        Ok(SyntheticScenario { kind, num_samples, seed, landmarks, bbox })
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        serde_json::from_slice(bytes).map_err(|e| Error::Syntax {
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

/// Samples grouped by landmark: `result[landmark][sample]`.
pub fn generate(scenario: &SyntheticScenario) -> Vec<Vec<GroundTruthLandmark>> {
    generate_with(scenario, Execution::default())
}

/// Landmark `j` draws from ChaCha stream `j` of the scenario seed, so the
/// output is independent of the execution mode.
pub fn generate_with(scenario: &SyntheticScenario, exec: Execution) -> Vec<Vec<GroundTruthLandmark>> {
    par::map_slice(exec, &indexed(&scenario.landmarks), |&(j, truth)| {
        let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
        rng.set_stream(j as u64);
        let chol = truth.cov.cholesky().expect("validated SPD");
        (0..scenario.num_samples)
            .map(|_| {
                if rng.random::<f64>() < truth.visibility_rate {
                    let p = likelihood::sample_chol(scenario.kind, truth.mean, &chol, &mut rng);
                    GroundTruthLandmark::visible(p)
                } else {
                    GroundTruthLandmark::invisible()
                }
            })
            .collect()
    })
}

fn indexed<T: Copy>(items: &[T]) -> Vec<(usize, T)> {
    items.iter().copied().enumerate().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub max_iterations: usize,
    /// Stop once the gradient norm of the mean loss drops below this.
    pub grad_tol: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Give up once step halving has pushed the learning rate below this.
    pub min_learning_rate: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 1e-2,
            max_iterations: 10_000,
            grad_tol: 1e-8,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            min_learning_rate: 1e-12,
        }
    }
}

/// Why the optimizer stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Gradient norm fell below `grad_tol`.
    GradientTolerance,
    /// Step halving pushed the learning rate below `min_learning_rate`: no
    /// step of any representable size lowers the loss.
    Stalled,
    MaxIterations,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::GradientTolerance => "gradient tolerance",
            StopReason::Stalled => "stalled",
            StopReason::MaxIterations => "iteration limit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub prediction: LandmarkPrediction,
    pub loss: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    /// Gradient norm reached `grad_tol`.
    pub converged: bool,
    pub stop: StopReason,
    /// Whether mean and covariance were fitted (false for visibility-only
    /// fits).
    pub fitted_location: bool,
}

/// Unconstrained parameters `[μx, μy, raw11, l21, raw22, logit]`.
type Params = [f64; 6];

fn params_to_prediction(theta: &Params) -> LandmarkPrediction {
    LandmarkPrediction::new(
        Point2::new(theta[0], theta[1]),
        cholesky_activation([theta[2], theta[3], theta[4]]),
        visibility_activation(theta[5]),
    )
}

fn objective(kind: LikelihoodKind, samples: &[GroundTruthLandmark], theta: &Params, fit_location: bool) -> (f64, Params) {
    let pred = params_to_prediction(theta);
    let act = cholesky_activation_grad([theta[2], theta[3], theta[4]]);
    let mut loss = 0.0;
    let mut g = [0.0; 6];
    for s in samples {
        loss += luvli_loss(kind, s, &pred);
        let d = luvli_subgrad(kind, s, &pred);
        g[0] += d.mean.x;
        g[1] += d.mean.y;
        g[2] += d.chol[0] * act[0];
        g[3] += d.chol[1] * act[1];
        g[4] += d.chol[2] * act[2];
        g[5] += d.logit;
    }
    let n = samples.len() as f64;
    if !fit_location {
        g[..5].fill(0.0);
    }
    (loss / n, g.map(|x| x / n))
}

fn norm(g: &Params) -> f64 {
    g.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Maximum-likelihood fit of one landmark group.
///
/// With no visible samples only the visibility is fitted and the location
/// parameters stay at their initial values. One visible sample, or several
/// at the same location, leave the covariance unidentifiable and yield
/// [`Error::Degenerate`].
pub fn fit_mle(samples: &[GroundTruthLandmark], kind: LikelihoodKind, cfg: &OptimizerConfig) -> Result<FitResult> {
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let visible: Vec<Point2> = samples.iter().filter_map(|s| s.location).collect();
    if let Some(first) = visible.first() {
        if visible.iter().all(|p| p == first) {
            return Err(Error::Degenerate(format!(
                "{} visible sample(s) at a single location; covariance is unidentifiable",
                visible.len()
            )));
        }
    }
    Ok(fit_impl(samples, kind, cfg, !visible.is_empty()))
}

/// Fit only the visibility, keeping the mean at the visible centroid and
/// the covariance at its initial value.
pub fn fit_visibility_only(samples: &[GroundTruthLandmark], kind: LikelihoodKind, cfg: &OptimizerConfig) -> Result<FitResult> {
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(fit_impl(samples, kind, cfg, false))
}

fn fit_impl(samples: &[GroundTruthLandmark], kind: LikelihoodKind, cfg: &OptimizerConfig, fit_location: bool) -> FitResult {
    let visible: Vec<Point2> = samples.iter().filter_map(|s| s.location).collect();
    let centroid = if visible.is_empty() {
        Point2::ZERO
    } else {
        visible.iter().fold(Point2::ZERO, |a, &p| a + p).scale(1.0 / visible.len() as f64)
    };

    let mut theta: Params = [centroid.x, centroid.y, 0.0, 0.0, 0.0, 0.0];
    let (mut loss, mut grad) = objective(kind, samples, &theta, fit_location);
    let mut m = [0.0; 6];
    let mut v = [0.0; 6];
    let mut step = 0i32;
    let mut lr = cfg.learning_rate;
    let mut iterations = 0;
    let mut converged = false;
    let mut stop = StopReason::MaxIterations;

    while iterations < cfg.max_iterations {
        if norm(&grad) < cfg.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let t = step + 1;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let mut m_next = m;
        let mut v_next = v;
        let mut trial = theta;
        for k in 0..6 {
            m_next[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * grad[k];
            v_next[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * grad[k] * grad[k];
            let mhat = m_next[k] / bc1;
            let vhat = v_next[k] / bc2;
            trial[k] -= lr * mhat / (vhat.sqrt() + cfg.epsilon);
        }
        let (trial_loss, trial_grad) = objective(kind, samples, &trial, fit_location);
        if trial_loss <= loss {
            theta = trial;
            loss = trial_loss;
            grad = trial_grad;
            m = m_next;
            v = v_next;
            step = t;
        } else {
            lr *= 0.5;
            if lr < cfg.min_learning_rate {
                stop = StopReason::Stalled;
                break;
            }
        }
    }
    if norm(&grad) < cfg.grad_tol {
        converged = true;
    }
    if converged {
        stop = StopReason::GradientTolerance;
    }

    FitResult {
        prediction: params_to_prediction(&theta),
        loss,
        iterations,
        grad_norm: norm(&grad),
        converged,
        stop,
        fitted_location: fit_location,
    }
}

/// Fit every landmark group independently.
pub fn fit_groups(
    groups: &[Vec<GroundTruthLandmark>],
    kind: LikelihoodKind,
    cfg: &OptimizerConfig,
    exec: Execution,
) -> Vec<Result<FitResult>> {
    par::map_slice(exec, groups, |g| fit_mle(g, kind, cfg))
}

/// Worst elementwise relative error between the analytic gradient and
/// central differences `(f(p + h) − f(p − h)) / 2h`.
///
/// The relative error of each component is `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn finite_difference_check<F, G>(f: F, grad: G, params: &[f64], h: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
    G: Fn(&[f64]) -> Result<Vec<f64>>,
{
    const FLOOR: f64 = 1e-8;
    let analytic = grad(params)?;
    if analytic.len() != params.len() {
        return Err(Error::DimensionMismatch(format!(
            "gradient has {} components for {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    let mut p = params.to_vec();
    let mut worst = 0.0f64;
    for k in 0..params.len() {
        p[k] = params[k] + h;
        let fp = f(&p)?;
        p[k] = params[k] - h;
        let fm = f(&p)?;
        p[k] = params[k];
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic[k];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Build a prediction from the gradient parameterization
/// `[μx, μy, l11, l21, l22, logit]` used by [`likelihood::luvli_grad`].
pub fn prediction_from_grad_params(params: &[f64]) -> Result<LandmarkPrediction> {
    if params.len() != 6 {
        return Err(Error::DimensionMismatch(format!("expected 6 parameters, got {}", params.len())));
    }
    Ok(LandmarkPrediction::new(
        Point2::new(params[0], params[1]),
        CholeskyCovariance::new(params[2], params[3], params[4])?,
        visibility_activation(params[5]),
    ))
}

/// Finite-difference check of [`likelihood::luvli_grad`] at one configuration.
pub fn check_luvli_grad(kind: LikelihoodKind, gt: &GroundTruthLandmark, params: &[f64], h: f64) -> Result<f64> {
    finite_difference_check(
        |p| Ok(luvli_loss(kind, gt, &prediction_from_grad_params(p)?)),
        |p| Ok(luvli_grad(kind, gt, &prediction_from_grad_params(p)?)?.as_array().to_vec()),
        params,
        h,
    )
}

/// One random gradient-check configuration: visibility label and parameters
/// `[μx, μy, l11, l21, l22, logit]`.
///
/// Residuals are kept between 0.5 and 3 standard radii away from the
/// Laplacian cusp; Cholesky diagonals lie in `[0.5, 2]`.
pub fn random_grad_config<R: Rng + ?Sized>(rng: &mut R) -> (GroundTruthLandmark, [f64; 6]) {
    let mu = Point2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
    let chol = [rng.random_range(0.5..2.0), rng.random_range(-1.0..1.0), rng.random_range(0.5..2.0)];
    let logit = rng.random_range(-3.0..3.0);
    let gt = if rng.random::<f64>() < 0.75 {
        let r = rng.random_range(0.5..3.0);
        let a = rng.random_range(0.0..std::f64::consts::TAU);
        let l = CholeskyCovariance::new(chol[0], chol[1], chol[2]).expect("positive diagonal");
        GroundTruthLandmark::visible(mu + l.apply(Point2::new(r * f64::cos(a), r * f64::sin(a))))
    } else {
        GroundTruthLandmark::invisible()
    };
    (gt, [mu.x, mu.y, chol[0], chol[1], chol[2], logit])
}

/// Worst relative error over `trials` random configurations; trial `i` uses
/// ChaCha stream `i` of `seed`.
pub fn gradcheck_trials(kind: LikelihoodKind, trials: usize, seed: u64, h: f64, exec: Execution) -> Result<f64> {
    let errors = par::map_range(exec, trials, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let (gt, params) = random_grad_config(&mut rng);
        check_luvli_grad(kind, &gt, &params, h)
    });
    errors
        .into_iter()
        .try_fold(0.0f64, |worst, e| e.map(|e| worst.max(e)))
}
