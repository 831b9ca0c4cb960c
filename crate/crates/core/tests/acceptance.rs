//! Acceptance checks. Run with `cargo test --test acceptance`; prints one
//! PASS/FAIL line per criterion and exits nonzero if any fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use luvli::calibration::{self, GridSpec, ResidualRecord};
use luvli::cli;
use luvli::dataio::{self, AnnotatedFace, AnnotatedLandmark, AnnotationSet, BoundingBox, PredictedFace, PredictionFile, VisibilityClass};
use luvli::fitting::{self, LandmarkTruth, OptimizerConfig, SyntheticScenario};
use luvli::heatmap::{self, SigmaKind};
use luvli::likelihood::{self, sample_chol};
use luvli::metrics::{self, EvalOptions, FaceEvalRecord, NormalizerKind};
use luvli::par::Execution;
use luvli::{CholeskyCovariance, GroundTruthLandmark, LandmarkPrediction, LikelihoodKind, Point2, SymMatrix2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within_time(start: Instant, limit: Duration) -> Result<String, String> {
    let t = start.elapsed();
    ensure(t < limit, format!("took {:.2?}, limit {:.0?}", t, limit))?;
    Ok(format!("{:.2?}", t))
}

fn random_chol(rng: &mut ChaCha8Rng) -> CholeskyCovariance {
    CholeskyCovariance::new(rng.random_range(0.5..3.0), rng.random_range(-2.0..2.0), rng.random_range(0.5..3.0)).unwrap()
}

const KINDS: [LikelihoodKind; 2] = [LikelihoodKind::Gaussian, LikelihoodKind::Laplacian];

fn gradient_fidelity() -> Check {
    let start = Instant::now();
    let mut worst = Vec::new();
    for kind in KINDS {
        let err = fitting::gradcheck_trials(kind, 100, 20_240_601, 1e-5, Execution::default()).map_err(|e| e.to_string())?;
        ensure(err < 1e-6, format!("{kind}: max relative error {err:e}"))?;
        worst.push(format!("{kind} {err:.1e}"));
    }
    let t = within_time(start, Duration::from_secs(5))?;
    Ok(format!("{} in {t}", worst.join(", ")))
}

/// Midpoint rule over a box of ±12 standard deviations per axis.
fn integrate_density(kind: LikelihoodKind, sigma: &SymMatrix2, cells: usize) -> f64 {
    let mu = Point2::new(1.5, -2.0);
    let (hx, hy) = (12.0 * sigma.xx.sqrt(), 12.0 * sigma.yy.sqrt());
    let (dx, dy) = (2.0 * hx / cells as f64, 2.0 * hy / cells as f64);
    let mut total = 0.0;
    for iy in 0..cells {
        let y = mu.y - hy + (iy as f64 + 0.5) * dy;
        let mut row = 0.0;
        for ix in 0..cells {
            let x = mu.x - hx + (ix as f64 + 0.5) * dx;
            row += (-likelihood::location_nll(kind, Point2::new(x, y), mu, sigma).unwrap()).exp();
        }
        total += row;
    }
    total * dx * dy
}

fn density_normalization() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let sigmas: Vec<SymMatrix2> = (0..20).map(|_| random_chol(&mut rng).to_covariance()).collect();
    let mut worst: f64 = 0.0;
    for kind in KINDS {
        let masses = luvli::par::map_slice(Execution::default(), &sigmas, |s| integrate_density(kind, s, 1200));
        for (s, m) in sigmas.iter().zip(masses) {
            ensure((m - 1.0).abs() <= 1e-3, format!("{kind} {s:?}: mass {m}"))?;
            worst = worst.max((m - 1.0).abs());
        }
    }
    let t = within_time(start, Duration::from_secs(30))?;
    Ok(format!("max |mass - 1| = {worst:.1e} in {t}"))
}

fn laplacian_covariance() -> Check {
    let start = Instant::now();
    let sigma = SymMatrix2::new(4.0, 2.0, 2.0);
    let mu = Point2::new(3.0, -1.0);
    let pts = likelihood::sample_many(LikelihoodKind::Laplacian, mu, &sigma, 1_000_000, 3, Execution::default())
        .map_err(|e| e.to_string())?;
    let n = pts.len() as f64;
    let mean = pts.iter().fold(Point2::ZERO, |a, &p| a + p).scale(1.0 / n);
    let (mut xx, mut xy, mut yy) = (0.0, 0.0, 0.0);
    for p in &pts {
        let d = *p - mean;
        xx += d.x * d.x;
        xy += d.x * d.y;
        yy += d.y * d.y;
    }
    let est = [xx / n, xy / n, yy / n];
    let truth = [4.0, 2.0, 2.0];
    let rel: Vec<f64> = est.iter().zip(truth).map(|(e, t)| (e - t).abs() / t).collect();
    for (r, name) in rel.iter().zip(["xx", "xy", "yy"]) {
        ensure(*r <= 0.02, format!("{name}: relative error {r:.4}"))?;
    }
    let t = within_time(start, Duration::from_secs(10))?;
    Ok(format!("sample cov ({:.4}, {:.4}, {:.4}) in {t}", est[0], est[1], est[2]))
}

fn identity_reduction() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let ln_2pi_3 = (2.0 * std::f64::consts::PI / 3.0).ln();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let p = Point2::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
        let mu = Point2::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
        let d = (p - mu).norm();
        let gt = GroundTruthLandmark::visible(p);
        let pred = LandmarkPrediction::new(mu, CholeskyCovariance::IDENTITY, 1.0);
        let g = likelihood::luvli_loss(LikelihoodKind::Gaussian, &gt, &pred) - ln_2pi;
        let l = likelihood::luvli_loss(LikelihoodKind::Laplacian, &gt, &pred) - ln_2pi_3;
        let eg = (g - 0.5 * d * d).abs();
        let el = (l - 3f64.sqrt() * d).abs();
        ensure(eg <= 1e-6 && el <= 1e-6, format!("d = {d}: gaussian off by {eg:e}, laplacian by {el:e}"))?;
        worst = worst.max(eg).max(el);
    }
    Ok(format!("max deviation {worst:.1e} over 1000 pairs"))
}

fn mle_scenario(kind: LikelihoodKind) -> SyntheticScenario {
    let covs = [
        SymMatrix2::new(4.0, 1.0, 2.0),
        SymMatrix2::new(9.0, -2.0, 3.0),
        SymMatrix2::new(2.25, 0.5, 1.0),
        SymMatrix2::new(1.0, 0.0, 1.0),
        SymMatrix2::new(6.0, 2.5, 4.0),
    ];
    let rates = [0.0, 0.5, 0.8, 1.0, 0.3];
    let landmarks = covs
        .iter()
        .zip(rates)
        .enumerate()
        .map(|(j, (&cov, visibility_rate))| LandmarkTruth {
            mean: Point2::new(20.0 + 10.0 * j as f64, 40.0 - 5.0 * j as f64),
            cov,
            visibility_rate,
            occluded: false,
        })
        .collect();
    SyntheticScenario::new(kind, 5000, 5, landmarks, None).unwrap()
}

fn sample_stats(points: &[Point2]) -> (Point2, SymMatrix2) {
    let n = points.len() as f64;
    let mean = points.iter().fold(Point2::ZERO, |a, &p| a + p).scale(1.0 / n);
    let (mut xx, mut xy, mut yy) = (0.0, 0.0, 0.0);
    for p in points {
        let d = *p - mean;
        xx += d.x * d.x;
        xy += d.x * d.y;
        yy += d.y * d.y;
    }
    (mean, SymMatrix2::new(xx / n, xy / n, yy / n))
}

/// Diagonal entries relative to themselves; the off-diagonal relative to
/// `√(xx·yy)`, its natural scale (the true value may be zero).
fn cov_rel_error(fit: &SymMatrix2, truth: &SymMatrix2) -> f64 {
    let dxx = (fit.xx - truth.xx).abs() / truth.xx;
    let dyy = (fit.yy - truth.yy).abs() / truth.yy;
    let dxy = (fit.xy - truth.xy).abs() / (truth.xx * truth.yy).sqrt();
    dxx.max(dyy).max(dxy)
}

fn mle_recovery() -> Check {
    let start = Instant::now();
    let cfg = OptimizerConfig::default();
    let mut summary = Vec::new();
    let mut violations = Vec::new();
    for kind in KINDS {
        let scenario = mle_scenario(kind);
        let groups = fitting::generate(&scenario);
        let fits = fitting::fit_groups(&groups, kind, &cfg, Execution::default());
        let (mut mu_err, mut cov_err, mut vis_err, mut oracle_err): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
        for (j, ((truth, group), fit)) in scenario.landmarks.iter().zip(&groups).zip(fits).enumerate() {
            let fit = fit.map_err(|e| format!("{kind} landmark {j}: {e}"))?;
            let p = fit.prediction;
            let ve = (p.visibility - truth.visibility_rate).abs();
            if ve > 0.02 {
                violations.push(format!("{kind} landmark {j}: visibility {:.4} vs {}", p.visibility, truth.visibility_rate));
            }
            vis_err = vis_err.max(ve);
            let pts: Vec<Point2> = group.iter().filter_map(|g| g.location).collect();
            if pts.is_empty() {
                // location parameters are unidentifiable without visible samples
                if fit.fitted_location {
                    violations.push(format!("{kind} landmark {j}: location fitted without data"));
                }
                continue;
            }
            let me = (p.mean - truth.mean).norm();
            if me > 0.1 {
                violations.push(format!("{kind} landmark {j} ({} visible): mean off by {me:.3} px", pts.len()));
            }
            mu_err = mu_err.max(me);
            let ce = cov_rel_error(&p.covariance(), &truth.cov);
            if ce > 0.05 {
                violations.push(format!("{kind} landmark {j} ({} visible): covariance off by {:.1}%", pts.len(), 100.0 * ce));
            }
            cov_err = cov_err.max(ce);
            if kind == LikelihoodKind::Gaussian {
                let (m, c) = sample_stats(&pts);
                let rate = pts.len() as f64 / group.len() as f64;
                let e = ((p.mean - m).norm() / m.norm())
                    .max(p.covariance().max_abs_diff(&c) / c.frobenius())
                    .max((p.visibility - rate).abs() / rate);
                if e > 1e-3 {
                    violations.push(format!("landmark {j}: closed-form mismatch {e:.1e}"));
                }
                oracle_err = oracle_err.max(e);
            }
        }
        summary.push(format!("{kind}: mu {mu_err:.3} px, cov {:.1}%, vis {vis_err:.4}", 100.0 * cov_err));
        if kind == LikelihoodKind::Gaussian {
            summary.push(format!("closed form {oracle_err:.1e}"));
        }
    }
    let t = within_time(start, Duration::from_secs(60))?;
    ensure(violations.is_empty(), format!("{} [{}]", violations.join("; "), summary.join("; ")))?;
    Ok(format!("{} in {t}", summary.join("; ")))
}

fn subpixel_mean() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut se_mean, mut se_argmax) = (0.0, 0.0);
    for _ in 0..500 {
        let c = Point2::new(rng.random_range(5.0..58.0), rng.random_range(5.0..58.0));
        let h = heatmap::render_gaussian(c, 1.5, 64, 64).map_err(|e| e.to_string())?;
        let m = heatmap::spatial_mean(&h, SigmaKind::Relu).map_err(|e| e.to_string())?;
        let a = heatmap::argmax_quarter_offset(&h);
        se_mean += (m - c).dot(m - c);
        se_argmax += (a - c).dot(a - c);
    }
    let rms_mean = (se_mean / 500.0).sqrt();
    let rms_argmax = (se_argmax / 500.0).sqrt();
    ensure(rms_mean < 0.05, format!("spatial mean RMS {rms_mean:.4} px"))?;
    ensure(rms_argmax >= 3.0 * rms_mean, format!("argmax RMS {rms_argmax:.4} vs mean {rms_mean:.4}"))?;
    Ok(format!("spatial mean RMS {rms_mean:.2e} px, quarter-offset argmax RMS {rms_argmax:.3} px"))
}

/// Records with random predicted covariance and residuals drawn from the
/// Laplacian with covariance `scale·Σ`.
fn residual_population(n: usize, scale: f64, seed: u64) -> Vec<ResidualRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let chol = random_chol(&mut rng);
            let predicted = chol.to_covariance();
            let truth = predicted.scale(scale).cholesky().unwrap();
            ResidualRecord { residual: sample_chol(LikelihoodKind::Laplacian, Point2::ZERO, &truth, &mut rng), predicted }
        })
        .collect()
}

fn residual_binning() -> Check {
    let good = calibration::bin_and_correlate(&residual_population(25_000, 1.0, 7), 500).map_err(|e| e.to_string())?;
    let bad = calibration::bin_and_correlate(&residual_population(25_000, 4.0, 8), 500).map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    for (g, b) in good.components.iter().zip(&bad.components) {
        let name = g.component.as_str();
        ensure(g.bins.len() == 50, format!("{name}: {} bins", g.bins.len()))?;
        let r = g.pearson.ok_or(format!("{name}: degenerate"))?;
        let s = g.slope.ok_or(format!("{name}: no slope"))?;
        let s4 = b.slope.ok_or(format!("{name}: no slope under 4x"))?;
        ensure(r >= 0.95, format!("{name}: pearson {r:.4}"))?;
        ensure((s - 1.0).abs() <= 0.1, format!("{name}: slope {s:.4}"))?;
        ensure((s4 - 4.0).abs() <= 0.5, format!("{name}: slope under 4x {s4:.4}"))?;
        parts.push(format!("{name} r={r:.3} slope={s:.3} slope4={s4:.3}"));
    }
    Ok(parts.join(", "))
}

fn standardized_kl() -> Check {
    let records = residual_population(100_000, 1.0, 9);
    let z = calibration::standardize(&records).map_err(|e| e.to_string())?;
    let grid = GridSpec::default();
    let base = calibration::histogram_kl(&z, &grid).map_err(|e| e.to_string())?;
    let doubled: Vec<Point2> = z.iter().map(|p| p.scale(2.0)).collect();
    let wide = calibration::histogram_kl(&doubled, &grid).map_err(|e| e.to_string())?;
    ensure(base < 0.05, format!("KL {base:.4}"))?;
    ensure(wide >= 5.0 * base, format!("scaled KL {wide:.4} vs {base:.4}"))?;
    Ok(format!("KL {base:.4}, scaled x2 {wide:.4} ({:.0}x)", wide / base))
}

/// `(1/c)·∫₀ᶜ F(t) dt` by the midpoint rule on `m` points.
fn riemann_auc(nmes: &[f64], cutoff: f64, m: usize) -> f64 {
    let mut sorted = nmes.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let dt = cutoff / m as f64;
    let mut k = 0;
    let mut sum = 0.0;
    for i in 0..m {
        let t = (i as f64 + 0.5) * dt;
        while k < sorted.len() && sorted[k] <= t {
            k += 1;
        }
        sum += k as f64 / n;
    }
    sum / m as f64
}

fn lm(p: Point2) -> GroundTruthLandmark {
    GroundTruthLandmark::visible(p)
}

fn pred(p: Point2) -> LandmarkPrediction {
    LandmarkPrediction::new(p, CholeskyCovariance::IDENTITY, 0.9)
}

fn hand_fixtures() -> Result<(), String> {
    let e = |r: luvli::Result<f64>| r.map_err(|e| e.to_string());
    let o = Point2::ZERO;
    let one = FaceEvalRecord::new(vec![lm(o)], vec![pred(Point2::new(2.0, 0.0))], Some((100.0, 100.0))).unwrap();
    ensure(e(metrics::nme(&one, NormalizerKind::Box))? == 2.0, "single landmark NME")?;

    let gts: Vec<_> = (0..68).map(|j| lm(Point2::new(j as f64, 0.0))).collect();
    let preds: Vec<_> = (0..68).map(|j| pred(Point2::new(j as f64, 1.0))).collect();
    let all = FaceEvalRecord::new(gts, preds, Some((100.0, 100.0))).unwrap();
    ensure(e(metrics::nme(&all, NormalizerKind::Box))? == 1.0, "68-landmark NME")?;
    ensure(e(metrics::nme_vis(&all, NormalizerKind::Box))? == 1.0, "all-visible NME-vis")?;

    let two = FaceEvalRecord::new(
        vec![lm(o), GroundTruthLandmark::invisible()],
        vec![pred(Point2::new(0.0, 3.0)), pred(Point2::new(40.0, 40.0))],
        Some((100.0, 100.0)),
    )
    .unwrap();
    ensure(e(metrics::nme(&two, NormalizerKind::Box))? == 1.5, "NME divides by all landmarks")?;
    ensure(e(metrics::nme_vis(&two, NormalizerKind::Box))? == 3.0, "NME-vis divides by visible")?;

    ensure((e(metrics::failure_rate(&[1.0, 8.0, 12.0], 10.0))? - 100.0 / 3.0).abs() < 1e-12, "FR one in three")?;
    ensure(e(metrics::failure_rate(&[1.0, 2.0], 10.0))? == 0.0, "FR none")?;
    ensure(e(metrics::failure_rate(&[10.0], 10.0))? == 0.0, "FR at threshold")?;
    ensure((e(metrics::auc(&[1.0, 3.0], 7.0))? - 5.0 / 7.0).abs() < 1e-15, "AUC {1,3}")?;

    // Two faces through the full report.
    let face = |id: &str, w: f64, h: f64, classes: &[VisibilityClass], pts: &[Point2]| AnnotatedFace {
        id: id.into(),
        bbox: Some(BoundingBox { x: 0.0, y: 0.0, w, h }),
        landmarks: classes
            .iter()
            .zip(pts)
            .map(|(&class, &p)| AnnotatedLandmark { class, location: class.is_visible().then_some(p) })
            .collect(),
    };
    use VisibilityClass::*;
    let gt_pts = [Point2::new(1.0, 1.0), Point2::new(5.0, 2.0), Point2::new(3.0, 9.0), Point2::new(0.0, 0.0)];
    let a = face("a", 4.0, 16.0, &[Unoccluded, ExternallyOccluded, Unoccluded, SelfOccluded], &gt_pts);
    let b = face("b", 16.0, 16.0, &[Unoccluded; 4], &gt_pts);
    let shift = |v: &[Point2], d: &[Point2], vis: &[f64]| PredictedFace {
        id: String::new(),
        landmarks: v
            .iter()
            .zip(d)
            .zip(vis)
            .map(|((&p, &dp), &vh)| LandmarkPrediction::new(p + dp, CholeskyCovariance::IDENTITY, vh))
            .collect(),
    };
    let pa = PredictedFace {
        id: "a".into(),
        ..shift(&gt_pts, &[Point2::new(2.0, 0.0), Point2::new(0.0, -4.0), Point2::ZERO, Point2::new(7.0, 7.0)], &[0.9, 0.8, 0.6, 0.2])
    };
    let pb = PredictedFace { id: "b".into(), ..shift(&gt_pts, &[Point2::new(0.0, 2.0); 4], &[0.9, 0.9, 0.4, 0.7]) };
    let set = AnnotationSet { num_landmarks: 4, faces: vec![b, a] };
    let preds = PredictionFile { faces: vec![pa, pb] };
    let pairs = dataio::pair_faces(&set, &preds).map_err(|e| e.to_string())?;
    let opts = EvalOptions { normalizer: NormalizerKind::Box, auc_cutoff: 20.0, fr_threshold: 12.5 };
    let rep = metrics::evaluate(&pairs, &opts, Execution::default()).map_err(|e| e.to_string())?;
    // a: d = 8, errors 2 + 4 + 0 over 4 landmarks (3 visible); b: d = 16, errors 2 each
    ensure(rep.rows[0].id == "a" && rep.rows[1].id == "b", "rows sorted by id")?;
    ensure(rep.rows[0].nme_box == Some(18.75) && rep.rows[0].nme_vis == Some(25.0), "face a NME")?;
    ensure(rep.rows[1].nme_box == Some(12.5) && rep.rows[1].nme_vis == Some(12.5), "face b NME")?;
    let s = &rep.summary;
    ensure(s.mean_nme == 15.625 && s.mean_nme_vis == Some(18.75), "mean NME")?;
    // ∫₀²⁰ F = ½·(18.75 − 12.5) + (20 − 18.75) = 4.375
    ensure((s.auc - 4.375 / 20.0).abs() < 1e-15, format!("AUC {}", s.auc))?;
    ensure(s.failure_rate == 50.0, format!("FR {}", s.failure_rate))?;
    // correct: a all four; b three of four (0.4 on a visible landmark)
    ensure(s.visibility_accuracy_all == Some(7.0 / 8.0), "visibility accuracy")?;
    ensure(s.visibility_accuracy.get(SelfOccluded) == Some(1.0), "self-occluded accuracy")?;
    ensure(s.visibility_accuracy.get(Unoccluded) == Some(5.0 / 6.0), "unoccluded accuracy")?;
    Ok(())
}

fn metric_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let cutoff = rng.random_range(1.0..12.0);
        let n = rng.random_range(1..200);
        let nmes: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0 * cutoff)).collect();
        let a = metrics::auc(&nmes, cutoff).map_err(|e| e.to_string())?;
        let oracle = riemann_auc(&nmes, cutoff, 2_000_000);
        ensure((a - oracle).abs() <= 1e-6, format!("AUC {a} vs oracle {oracle}"))?;
        worst = worst.max((a - oracle).abs());
    }
    hand_fixtures()?;
    for _ in 0..1000 {
        let n = rng.random_range(1..70);
        let mut gts = Vec::with_capacity(n);
        let mut preds = Vec::with_capacity(n);
        for _ in 0..n {
            let p = Point2::new(rng.random_range(0.0..200.0), rng.random_range(0.0..200.0));
            gts.push(if rng.random_bool(0.7) { lm(p) } else { GroundTruthLandmark::invisible() });
            preds.push(pred(p + Point2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0))));
        }
        if gts.iter().all(|g| !g.is_visible()) {
            gts[0] = lm(Point2::new(1.0, 2.0));
        }
        let rec = FaceEvalRecord::new(gts, preds, Some((150.0, 180.0))).unwrap();
        let (a, v) = (metrics::nme(&rec, NormalizerKind::Box).unwrap(), metrics::nme_vis(&rec, NormalizerKind::Box).unwrap());
        ensure(v >= a, format!("NME-vis {v} < NME {a}"))?;
    }
    Ok(format!("AUC vs Riemann oracle max diff {worst:.1e}; hand fixtures exact; NME-vis >= NME on 1000 records"))
}

fn occlusion_ordering() -> Check {
    let base = [SymMatrix2::new(2.0, 0.4, 1.5), SymMatrix2::new(3.0, -0.6, 2.0), SymMatrix2::new(1.2, 0.1, 1.0)];
    let mut landmarks = Vec::new();
    for (j, cov) in base.iter().enumerate() {
        for occluded in [false, true] {
            landmarks.push(LandmarkTruth {
                mean: Point2::new(30.0 + 12.0 * j as f64, 50.0 + if occluded { 15.0 } else { 0.0 }),
                cov: if occluded { cov.scale(4.0) } else { *cov },
                visibility_rate: 0.9,
                occluded,
            });
        }
    }
    let bbox = Some(BoundingBox { x: 0.0, y: 0.0, w: 100.0, h: 100.0 });
    let scenario = SyntheticScenario::new(LikelihoodKind::Laplacian, 2000, 11, landmarks, bbox).unwrap();
    let groups = fitting::generate(&scenario);
    let annotations = cli::scenario_annotations(&scenario, &groups);
    let truth: Vec<Vec<GroundTruthLandmark>> = annotations.faces.iter().map(dataio::to_ground_truth).collect();
    let by_landmark: Vec<Vec<GroundTruthLandmark>> =
        (0..annotations.num_landmarks).map(|j| truth.iter().map(|t| t[j]).collect()).collect();
    let fits = fitting::fit_groups(&by_landmark, scenario.kind, &OptimizerConfig::default(), Execution::default());
    let fitted: Vec<LandmarkPrediction> =
        fits.into_iter().map(|r| r.map(|f| f.prediction)).collect::<luvli::Result<_>>().map_err(|e| e.to_string())?;
    let preds = PredictionFile {
        faces: annotations.faces.iter().map(|f| PredictedFace { id: f.id.clone(), landmarks: fitted.clone() }).collect(),
    };
    let pairs = dataio::pair_faces(&annotations, &preds).map_err(|e| e.to_string())?;
    let opts = EvalOptions { normalizer: NormalizerKind::Box, auc_cutoff: 7.0, fr_threshold: 7.0 };
    let s = metrics::evaluate(&pairs, &opts, Execution::default()).map_err(|e| e.to_string())?.summary;
    let occ = s.mean_uncertainty.get(VisibilityClass::ExternallyOccluded).ok_or("no occluded landmarks")?;
    let unocc = s.mean_uncertainty.get(VisibilityClass::Unoccluded).ok_or("no unoccluded landmarks")?;
    ensure(occ >= 2.0 * unocc, format!("occluded {occ:.3} vs unoccluded {unocc:.3}"))?;
    Ok(format!("mean |Sigma|^1/2 occluded {occ:.3}, unoccluded {unocc:.3} ({:.2}x)", occ / unocc))
}

fn random_annotations(rng: &mut ChaCha8Rng) -> AnnotationSet {
    let num_landmarks = rng.random_range(1..80);
    let faces = (0..rng.random_range(0..6))
        .map(|i| AnnotatedFace {
            id: format!("face_{i}_{}", rng.random::<u32>()),
            bbox: rng.random_bool(0.7).then(|| BoundingBox {
                x: rng.random_range(-100.0..100.0),
                y: rng.random_range(-100.0..100.0),
                w: rng.random_range(1e-3..500.0),
                h: rng.random_range(1e-3..500.0),
            }),
            landmarks: (0..num_landmarks)
                .map(|_| {
                    let class = VisibilityClass::ALL[rng.random_range(0..3)];
                    let location = class
                        .is_visible()
                        .then(|| Point2::new(rng.random_range(-1e4..1e4), rng.random::<f64>() * 1e-200));
                    AnnotatedLandmark { class, location }
                })
                .collect(),
        })
        .collect();
    AnnotationSet { num_landmarks, faces }
}

fn random_predictions(rng: &mut ChaCha8Rng) -> PredictionFile {
    PredictionFile {
        faces: (0..rng.random_range(0..6))
            .map(|i| PredictedFace {
                id: format!("p{i}"),
                landmarks: (0..rng.random_range(0..70))
                    .map(|_| {
                        LandmarkPrediction::new(
                            Point2::new(rng.random_range(-1e6..1e6), rng.random::<f64>()),
                            CholeskyCovariance::new(rng.random_range(1e-9..1e3), rng.random_range(-1e3..1e3), rng.random::<f64>() + 1e-300)
                                .unwrap(),
                            rng.random_range(1e-12..1.0 - 1e-12),
                        )
                    })
                    .collect(),
            })
            .collect(),
    }
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<(i32, Vec<u8>), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_luvli"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    Ok((out.status.code().unwrap_or(-1), out.stdout))
}

fn cli_outputs(dir: &Path) -> Result<Vec<(String, i32, Vec<u8>)>, String> {
    let cmds: [&[&str]; 6] = [
        &["synth", "--config", "scenario.json", "--out", "annotations.json", "--seed", "17"],
        &["gradcheck", "--kind", "laplacian", "--trials", "50", "--seed", "17"],
        &["gradcheck", "--kind", "gaussian", "--trials", "50", "--seed", "17"],
        &["fit", "--annotations", "annotations.json", "--kind", "laplacian", "--out", "fit.json"],
        &["eval", "--annotations", "annotations.json", "--predictions", "fit.json", "--normalizer", "box", "--out", "eval.json"],
        &["calibrate", "--annotations", "annotations.json", "--predictions", "fit.json", "--bin-size", "100", "--out", "calib.json"],
    ];
    let mut results = Vec::new();
    for args in cmds {
        let (code, stdout) = run_cli(dir, args)?;
        results.push((args[0].to_string(), code, stdout));
    }
    let mut files: Vec<_> = std::fs::read_dir(dir).map_err(|e| e.to_string())?.map(|e| e.unwrap().path()).collect();
    files.sort();
    for f in files {
        let name = f.file_name().unwrap().to_string_lossy().into_owned();
        results.push((name, 0, std::fs::read(&f).map_err(|e| e.to_string())?));
    }
    Ok(results)
}

fn roundtrip_and_determinism() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for i in 0..100 {
        let set = random_annotations(&mut rng);
        let text = dataio::write_annotations(&set);
        let back = dataio::parse_annotations(text.as_bytes()).map_err(|e| format!("dataset {i}: {e}"))?;
        ensure(back == set && dataio::write_annotations(&back) == text, format!("annotation dataset {i} changed"))?;
        let preds = random_predictions(&mut rng);
        let text = dataio::write_predictions(&preds);
        let back = dataio::parse_predictions(text.as_bytes()).map_err(|e| format!("dataset {i}: {e}"))?;
        ensure(back == preds && dataio::write_predictions(&back) == text, format!("prediction dataset {i} changed"))?;
    }

    let landmarks = (0..8)
        .map(|j| LandmarkTruth {
            mean: Point2::new(10.0 * j as f64, 5.0 * j as f64),
            cov: SymMatrix2::new(2.0 + j as f64 * 0.5, 0.3, 1.0 + j as f64 * 0.25),
            visibility_rate: 0.85,
            occluded: j % 3 == 0,
        })
        .collect();
    let scenario = SyntheticScenario::new(
        LikelihoodKind::Laplacian,
        300,
        0,
        landmarks,
        Some(BoundingBox { x: 0.0, y: 0.0, w: 90.0, h: 60.0 }),
    )
    .unwrap();
    let mut runs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        std::fs::write(dir.path().join("scenario.json"), scenario.to_json()).map_err(|e| e.to_string())?;
        runs.push(cli_outputs(dir.path())?);
    }
    let codes: Vec<i32> = runs[0].iter().take(6).map(|r| r.1).collect();
    ensure(codes == [0; 6], format!("exit codes {codes:?}"))?;
    ensure(runs[0].len() == runs[1].len(), "different file sets")?;
    for (a, b) in runs[0].iter().zip(&runs[1]) {
        ensure(a == b, format!("'{}' differs between runs", a.0))?;
    }
    Ok(format!("100 annotation + 100 prediction datasets round-trip; {} CLI outputs byte-identical", runs[0].len()))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("gradient fidelity", gradient_fidelity),
        ("density normalization", density_normalization),
        ("laplacian covariance identity", laplacian_covariance),
        ("identity-covariance reduction", identity_reduction),
        ("MLE recovery", mle_recovery),
        ("sub-pixel mean estimator", subpixel_mean),
        ("residual-vs-covariance calibration", residual_binning),
        ("standardized-residual KL", standardized_kl),
        ("metric oracles", metric_oracles),
        ("occlusion-uncertainty ordering", occlusion_ordering),
        ("round-trip and determinism", roundtrip_and_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
