//! Landmark evaluation metrics.
//!
//! All NME values are percentages. AUC is the area under the empirical CDF of
//! per-image NME from 0 to the cutoff, divided by the cutoff, so it lies in
//! `[0, 1]` (multiply by 100 for the percent display).

use serde::{Deserialize, Serialize};

use crate::dataio::{AnnotatedFace, BoundingBox, PredictedFace, VisibilityClass};
use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::likelihood::{GroundTruthLandmark, LandmarkPrediction};
use crate::par::{self, Execution};

/// Zero-based outer eye corners in the 68-point scheme.
pub const LEFT_OUTER_EYE: usize = 36;
pub const RIGHT_OUTER_EYE: usize = 45;

/// Ground truth and predictions for one face.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceEvalRecord {
    pub ground_truth: Vec<GroundTruthLandmark>,
    pub predictions: Vec<LandmarkPrediction>,
    /// `(width, height)` of the ground-truth face box.
    pub bbox: Option<(f64, f64)>,
}

impl FaceEvalRecord {
    pub fn new(
        ground_truth: Vec<GroundTruthLandmark>,
        predictions: Vec<LandmarkPrediction>,
        bbox: Option<(f64, f64)>,
    ) -> Result<Self> {
        if ground_truth.len() != predictions.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} ground-truth landmarks, {} predictions",
                ground_truth.len(),
                predictions.len()
            )));
        }
        if ground_truth.is_empty() {
            return Err(Error::EmptyInput);
        }
        if let Some((w, h)) = bbox {
            if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite()) {
                return Err(Error::InvalidArgument(format!("bbox {w}x{h} must be positive")));
            }
        }
        Ok(FaceEvalRecord { ground_truth, predictions, bbox })
    }

    pub fn from_face(face: &AnnotatedFace, pred: &PredictedFace) -> Result<Self> {
        FaceEvalRecord::new(
            crate::dataio::to_ground_truth(face),
            pred.landmarks.clone(),
            face.bbox.map(|b| (b.w, b.h)),
        )
    }

    pub fn num_landmarks(&self) -> usize {
        self.ground_truth.len()
    }

    pub fn num_visible(&self) -> usize {
        self.ground_truth.iter().filter(|g| g.is_visible()).count()
    }

    /// Box used by the box/diag normalizers: the given one, else the tight
    /// box over visible ground truth.
    pub fn effective_bbox(&self) -> Result<(f64, f64)> {
        if let Some(b) = self.bbox {
            return Ok(b);
        }
        let mut pts = self.ground_truth.iter().filter_map(|g| g.location);
        let first = pts.next().ok_or(Error::NoVisibleLandmarks)?;
        let (mut lo, mut hi) = (first, first);
        for p in pts {
            lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        Ok((hi.x - lo.x, hi.y - lo.y))
    }

    fn error_sum(&self) -> f64 {
        self.ground_truth
            .iter()
            .zip(&self.predictions)
            .filter_map(|(g, p)| g.location.map(|loc| (loc - p.mean).norm()))
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizerKind {
    /// `√(w·h)` of the face box.
    Box,
    /// Distance between the outer eye corners.
    InterOcular,
    /// Diagonal of the face box.
    Diag,
}

impl NormalizerKind {
    pub const ALL: [NormalizerKind; 3] = [NormalizerKind::Box, NormalizerKind::InterOcular, NormalizerKind::Diag];

    pub fn as_str(self) -> &'static str {
        match self {
            NormalizerKind::Box => "box",
            NormalizerKind::InterOcular => "interocular",
            NormalizerKind::Diag => "diag",
        }
    }
}

impl std::str::FromStr for NormalizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        NormalizerKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown normalizer '{s}'")))
    }
}

pub fn normalizer(rec: &FaceEvalRecord, kind: NormalizerKind) -> Result<f64> {
    let d = match kind {
        NormalizerKind::Box => {
            let (w, h) = rec.effective_bbox()?;
            (w * h).sqrt()
        }
        NormalizerKind::Diag => {
            let (w, h) = rec.effective_bbox()?;
            w.hypot(h)
        }
        NormalizerKind::InterOcular => {
            if rec.num_landmarks() != 68 {
                return Err(Error::MissingEyeCorners);
            }
            match (rec.ground_truth[LEFT_OUTER_EYE].location, rec.ground_truth[RIGHT_OUTER_EYE].location) {
                (Some(a), Some(b)) => (a - b).norm(),
                _ => return Err(Error::MissingEyeCorners),
            }
        }
    };
    if d > 0.0 {
        Ok(d)
    } else {
        Err(Error::ZeroNormalizer)
    }
}

/// `100 · Σ_j v_j‖p_j − μ_j‖ / (d · N_p)`.
pub fn nme(rec: &FaceEvalRecord, kind: NormalizerKind) -> Result<f64> {
    let d = normalizer(rec, kind)?;
    Ok(100.0 * rec.error_sum() / (d * rec.num_landmarks() as f64))
}

/// Like [`nme`] but averaged over visible landmarks only.
pub fn nme_vis(rec: &FaceEvalRecord, kind: NormalizerKind) -> Result<f64> {
    let visible = rec.num_visible();
    if visible == 0 {
        return Err(Error::NoVisibleLandmarks);
    }
    let d = normalizer(rec, kind)?;
    Ok(100.0 * rec.error_sum() / (d * visible as f64))
}

/// Area under the NME CDF on `[0, cutoff]`, normalized by the cutoff.
///
/// The CDF is a step function, so the integral is exact:
/// `Σ_i max(0, cutoff − e_i) / (n · cutoff)`.
pub fn auc(nmes: &[f64], cutoff: f64) -> Result<f64> {
    if nmes.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(cutoff > 0.0 && cutoff.is_finite()) {
        return Err(Error::InvalidArgument(format!("AUC cutoff must be positive, got {cutoff}")));
    }
    if nmes.iter().any(|e| e.is_nan() || *e < 0.0) {
        return Err(Error::InvalidArgument("NME values must be non-negative".into()));
    }
    let area: f64 = nmes.iter().map(|&e| (cutoff - e).max(0.0)).sum();
    Ok(area / (nmes.len() as f64 * cutoff))
}

/// Percentage of images with NME strictly above `threshold`.
pub fn failure_rate(nmes: &[f64], threshold: f64) -> Result<f64> {
    if nmes.is_empty() {
        return Err(Error::EmptyInput);
    }
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(Error::InvalidArgument(format!("failure threshold must be positive, got {threshold}")));
    }
    let failures = nmes.iter().filter(|&&e| e > threshold).count();
    Ok(100.0 * failures as f64 / nmes.len() as f64)
}

/// Which ground-truth landmarks enter [`visibility_accuracy`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassFilter {
    All,
    /// Unoccluded and externally occluded.
    Visible,
    Class(VisibilityClass),
}

impl ClassFilter {
    fn accepts(self, c: VisibilityClass) -> bool {
        match self {
            ClassFilter::All => true,
            ClassFilter::Visible => c.is_visible(),
            ClassFilter::Class(k) => k == c,
        }
    }
}

/// Fraction of filtered landmarks where `v̂ > 0.5` agrees with the label.
pub fn visibility_accuracy(predicted: &[f64], labels: &[VisibilityClass], filter: ClassFilter) -> Result<f64> {
    if predicted.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions, {} labels",
            predicted.len(),
            labels.len()
        )));
    }
    let (mut n, mut correct) = (0usize, 0usize);
    for (&vhat, &c) in predicted.iter().zip(labels) {
        if filter.accepts(c) {
            n += 1;
            if (vhat > 0.5) == c.is_visible() {
                correct += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptyAfterFilter);
    }
    Ok(correct as f64 / n as f64)
}

/// `|Σ|^{1/2}`.
pub fn uncertainty_scalar(pred: &LandmarkPrediction) -> f64 {
    pred.chol.sqrt_det()
}

/// `|Σ|^{1/2}` divided by the face-box area.
pub fn uncertainty_scalar_box(pred: &LandmarkPrediction, bbox: Option<(f64, f64)>) -> Result<f64> {
    let (w, h) = bbox.ok_or(Error::MissingBbox)?;
    Ok(uncertainty_scalar(pred) / (w * h))
}

// ---- report ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRow {
    pub id: String,
    pub nme_box: Option<f64>,
    pub nme_interocular: Option<f64>,
    pub nme_diag: Option<f64>,
    /// Visible-only NME under the selected normalizer.
    pub nme_vis: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PerClass {
    pub unoccluded: Option<f64>,
    pub externally_occluded: Option<f64>,
    pub self_occluded: Option<f64>,
}

impl PerClass {
    fn set(&mut self, c: VisibilityClass, v: Option<f64>) {
        match c {
            VisibilityClass::Unoccluded => self.unoccluded = v,
            VisibilityClass::ExternallyOccluded => self.externally_occluded = v,
            VisibilityClass::SelfOccluded => self.self_occluded = v,
        }
    }

    pub fn get(&self, c: VisibilityClass) -> Option<f64> {
        match c {
            VisibilityClass::Unoccluded => self.unoccluded,
            VisibilityClass::ExternallyOccluded => self.externally_occluded,
            VisibilityClass::SelfOccluded => self.self_occluded,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub normalizer: NormalizerKind,
    pub num_images: usize,
    pub mean_nme: f64,
    pub mean_nme_vis: Option<f64>,
    pub auc_cutoff: f64,
    pub auc: f64,
    pub fr_threshold: f64,
    pub failure_rate: f64,
    pub visibility_accuracy_all: Option<f64>,
    pub visibility_accuracy: PerClass,
    /// Mean `|Σ|^{1/2}` per ground-truth class.
    pub mean_uncertainty: PerClass,
    /// Mean `|Σ|^{1/2}` divided by face-box area, over faces with a box.
    pub mean_uncertainty_box: PerClass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ImageRow>,
    pub summary: EvalSummary,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub normalizer: NormalizerKind,
    pub auc_cutoff: f64,
    pub fr_threshold: f64,
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Evaluate paired faces. Rows come out in input order; callers sort first
/// (see [`crate::dataio::pair_faces`]).
pub fn evaluate(pairs: &[(&AnnotatedFace, &PredictedFace)], opts: &EvalOptions, exec: Execution) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let per_image = par::try_map_slice(exec, pairs, |(face, pred)| {
        let rec = FaceEvalRecord::from_face(face, pred)?;
        let selected = nme(&rec, opts.normalizer)?;
        let row = ImageRow {
            id: face.id.clone(),
            nme_box: nme(&rec, NormalizerKind::Box).ok(),
            nme_interocular: nme(&rec, NormalizerKind::InterOcular).ok(),
            nme_diag: nme(&rec, NormalizerKind::Diag).ok(),
            nme_vis: nme_vis(&rec, opts.normalizer).ok(),
        };
        Ok::<_, Error>((row, selected))
    })?;
    let nmes: Vec<f64> = per_image.iter().map(|(_, e)| *e).collect();
    let vis_nmes: Vec<f64> = per_image.iter().filter_map(|(r, _)| r.nme_vis).collect();

    let mut vhat = Vec::new();
    let mut classes = Vec::new();
    let mut unc: [Vec<f64>; 3] = Default::default();
    let mut unc_box: [Vec<f64>; 3] = Default::default();
    for (face, pred) in pairs {
        let bbox = face.bbox.map(|b: BoundingBox| (b.w, b.h));
        for (lm, p) in face.landmarks.iter().zip(&pred.landmarks) {
            vhat.push(p.visibility);
            classes.push(lm.class);
            let k = lm.class as usize;
            unc[k].push(uncertainty_scalar(p));
            if let Ok(u) = uncertainty_scalar_box(p, bbox) {
                unc_box[k].push(u);
            }
        }
    }
    let mut visibility_accuracy_by_class = PerClass::default();
    let mut mean_uncertainty = PerClass::default();
    let mut mean_uncertainty_box = PerClass::default();
    for c in VisibilityClass::ALL {
        visibility_accuracy_by_class.set(c, visibility_accuracy(&vhat, &classes, ClassFilter::Class(c)).ok());
        mean_uncertainty.set(c, mean(&unc[c as usize]));
        mean_uncertainty_box.set(c, mean(&unc_box[c as usize]));
    }

    let summary = EvalSummary {
        normalizer: opts.normalizer,
        num_images: pairs.len(),
        mean_nme: mean(&nmes).expect("non-empty"),
        mean_nme_vis: mean(&vis_nmes),
        auc_cutoff: opts.auc_cutoff,
        auc: auc(&nmes, opts.auc_cutoff)?,
        fr_threshold: opts.fr_threshold,
        failure_rate: failure_rate(&nmes, opts.fr_threshold)?,
        visibility_accuracy_all: visibility_accuracy(&vhat, &classes, ClassFilter::All).ok(),
        visibility_accuracy: visibility_accuracy_by_class,
        mean_uncertainty,
        mean_uncertainty_box,
    };
    Ok(EvalReport { rows: per_image.into_iter().map(|(r, _)| r).collect(), summary })
}

impl EvalReport {
    /// One row per image: `id,nme_box,nme_interocular,nme_diag,nme_vis`;
    /// unavailable values are left empty.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["id", "nme_box", "nme_interocular", "nme_diag", "nme_vis"])?;
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.id.clone(),
                fmt(r.nme_box),
                fmt(r.nme_interocular),
                fmt(r.nme_diag),
                fmt(r.nme_vis),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
