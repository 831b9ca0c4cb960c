//! Annotation and prediction file formats.
//!
//! Annotations (`luvli-annot-1`):
//!
//! ```json
//! { "schema": "luvli-annot-1", "num_landmarks": 68,
//!   "faces": [ { "id": "img_0001", "bbox": {"x": 0, "y": 0, "w": 200, "h": 220},
//!                "landmarks": [ {"class": "unoccluded", "x": 10.5, "y": 20.0},
//!                               {"class": "self_occluded"}, ... ] } ] }
//! ```
//!
//! Predictions (`luvli-pred-1`):
//!
//! ```json
//! { "schema": "luvli-pred-1",
//!   "faces": [ { "id": "img_0001",
//!                "landmarks": [ {"mu": [x, y], "chol": [l11, l21, l22], "vis": 0.97} ] } ] }
//! ```
//!
//! Floats are written in shortest round-trip form, so write → parse is
//! bit-exact.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CholeskyCovariance, Point2};
use crate::likelihood::{GroundTruthLandmark, LandmarkPrediction};

pub const ANNOTATION_SCHEMA: &str = "luvli-annot-1";
pub const PREDICTION_SCHEMA: &str = "luvli-pred-1";
pub const DEFAULT_NUM_LANDMARKS: usize = 68;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisibilityClass {
    Unoccluded,
    ExternallyOccluded,
    SelfOccluded,
}

impl VisibilityClass {
    pub const ALL: [VisibilityClass; 3] = [
        VisibilityClass::Unoccluded,
        VisibilityClass::ExternallyOccluded,
        VisibilityClass::SelfOccluded,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VisibilityClass::Unoccluded => "unoccluded",
            VisibilityClass::ExternallyOccluded => "externally_occluded",
            VisibilityClass::SelfOccluded => "self_occluded",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        VisibilityClass::ALL.into_iter().find(|c| c.as_str() == s)
    }

    /// Model visibility: everything except self-occlusion counts as visible.
    pub fn is_visible(self) -> bool {
        self != VisibilityClass::SelfOccluded
    }
}

/// Face box in original-image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnotatedLandmark {
    pub class: VisibilityClass,
    /// Present iff the class is not self-occluded.
    pub location: Option<Point2>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedFace {
    pub id: String,
    pub bbox: Option<BoundingBox>,
    pub landmarks: Vec<AnnotatedLandmark>,
}

impl AnnotatedFace {
    pub fn classes(&self) -> Vec<VisibilityClass> {
        self.landmarks.iter().map(|l| l.class).collect()
    }

    pub fn visible_count(&self) -> usize {
        self.landmarks.iter().filter(|l| l.class.is_visible()).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet {
    pub num_landmarks: usize,
    pub faces: Vec<AnnotatedFace>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictedFace {
    pub id: String,
    pub landmarks: Vec<LandmarkPrediction>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionFile {
    pub faces: Vec<PredictedFace>,
}

/// Map annotation classes onto model visibility labels, preserving order.
pub fn to_ground_truth(face: &AnnotatedFace) -> Vec<GroundTruthLandmark> {
    face.landmarks
        .iter()
        .map(|l| match (l.class.is_visible(), l.location) {
            (true, Some(p)) => GroundTruthLandmark::visible(p),
            _ => GroundTruthLandmark::invisible(),
        })
        .collect()
}

// ---- wire structs ----

#[derive(Serialize, Deserialize)]
struct AnnotationFileWire {
    schema: String,
    num_landmarks: usize,
    faces: Vec<FaceWire>,
}

#[derive(Serialize, Deserialize)]
struct FaceWire {
    id: String,
    #[serde(default)]
    bbox: Option<BoundingBox>,
    landmarks: Vec<LandmarkWire>,
}

#[derive(Serialize, Deserialize)]
struct LandmarkWire {
    class: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    y: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct PredictionFileWire {
    schema: String,
    faces: Vec<PredFaceWire>,
}

#[derive(Serialize, Deserialize)]
struct PredFaceWire {
    id: String,
    landmarks: Vec<PredLandmarkWire>,
}

#[derive(Serialize, Deserialize)]
struct PredLandmarkWire {
    mu: [f64; 2],
    chol: [f64; 3],
    vis: f64,
}

fn syntax(e: serde_json::Error) -> Error {
    Error::Syntax { line: e.line(), column: e.column(), msg: e.to_string() }
}

fn check_schema(found: &str, expected: &str) -> Result<()> {
    if found != expected {
        return Err(Error::schema(None, None, format!("schema '{found}', expected '{expected}'")));
    }
    Ok(())
}

fn check_unique_id<'a>(seen: &mut HashSet<&'a str>, id: &'a str) -> Result<()> {
    if !seen.insert(id) {
        return Err(Error::schema(Some(id), None, "duplicate face id"));
    }
    Ok(())
}

pub fn parse_annotations(bytes: &[u8]) -> Result<AnnotationSet> {
    let wire: AnnotationFileWire = serde_json::from_slice(bytes).map_err(syntax)?;
    check_schema(&wire.schema, ANNOTATION_SCHEMA)?;
    if wire.num_landmarks == 0 {
        return Err(Error::schema(None, None, "num_landmarks must be positive"));
    }
    let mut seen = HashSet::new();
    let mut faces = Vec::with_capacity(wire.faces.len());
    for f in &wire.faces {
        let id = f.id.as_str();
        check_unique_id(&mut seen, id)?;
        if let Some(b) = f.bbox {
            if ![b.x, b.y, b.w, b.h].iter().all(|v| v.is_finite()) || b.w <= 0.0 || b.h <= 0.0 {
                return Err(Error::schema(Some(id), None, "bbox must be finite with positive width and height"));
            }
        }
        if f.landmarks.len() != wire.num_landmarks {
            return Err(Error::schema(
                Some(id),
                None,
                format!("{} landmarks, expected {}", f.landmarks.len(), wire.num_landmarks),
            ));
        }
        let mut landmarks = Vec::with_capacity(f.landmarks.len());
        for (j, l) in f.landmarks.iter().enumerate() {
            let class = VisibilityClass::parse(&l.class)
                .ok_or_else(|| Error::schema(Some(id), Some(j), format!("unknown class '{}'", l.class)))?;
            let location = match (class, l.x, l.y) {
                (VisibilityClass::SelfOccluded, None, None) => None,
                (VisibilityClass::SelfOccluded, _, _) => {
                    return Err(Error::schema(Some(id), Some(j), "self-occluded landmark must not carry coordinates"));
                }
                (_, Some(x), Some(y)) if x.is_finite() && y.is_finite() => Some(Point2::new(x, y)),
                _ => {
                    return Err(Error::schema(
                        Some(id),
                        Some(j),
                        format!("{} landmark needs finite x and y", class.as_str()),
                    ));
                }
            };
            landmarks.push(AnnotatedLandmark { class, location });
        }
        faces.push(AnnotatedFace { id: f.id.clone(), bbox: f.bbox, landmarks });
    }
    Ok(AnnotationSet { num_landmarks: wire.num_landmarks, faces })
}

pub fn write_annotations(set: &AnnotationSet) -> String {
    let wire = AnnotationFileWire {
        schema: ANNOTATION_SCHEMA.into(),
        num_landmarks: set.num_landmarks,
        faces: set
            .faces
            .iter()
            .map(|f| FaceWire {
                id: f.id.clone(),
                bbox: f.bbox,
                landmarks: f
                    .landmarks
                    .iter()
                    .map(|l| LandmarkWire {
                        class: l.class.as_str().into(),
                        x: l.location.map(|p| p.x),
                        y: l.location.map(|p| p.y),
                    })
                    .collect(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&wire).expect("annotations serialize")
}

pub fn parse_predictions(bytes: &[u8]) -> Result<PredictionFile> {
    let wire: PredictionFileWire = serde_json::from_slice(bytes).map_err(syntax)?;
    check_schema(&wire.schema, PREDICTION_SCHEMA)?;
    let mut seen = HashSet::new();
    let mut faces = Vec::with_capacity(wire.faces.len());
    for f in &wire.faces {
        let id = f.id.as_str();
        check_unique_id(&mut seen, id)?;
        let mut landmarks = Vec::with_capacity(f.landmarks.len());
        for (j, l) in f.landmarks.iter().enumerate() {
            if !(l.mu[0].is_finite() && l.mu[1].is_finite()) {
                return Err(Error::schema(Some(id), Some(j), "mean must be finite"));
            }
            let chol = CholeskyCovariance::new(l.chol[0], l.chol[1], l.chol[2])
                .map_err(|_| Error::schema(Some(id), Some(j), "Cholesky diagonal must be positive and finite"))?;
            if !(l.vis > 0.0 && l.vis < 1.0) {
                return Err(Error::schema(Some(id), Some(j), format!("visibility {} outside (0, 1)", l.vis)));
            }
            landmarks.push(LandmarkPrediction::new(Point2::new(l.mu[0], l.mu[1]), chol, l.vis));
        }
        faces.push(PredictedFace { id: f.id.clone(), landmarks });
    }
    Ok(PredictionFile { faces })
}

pub fn write_predictions(preds: &PredictionFile) -> String {
    let wire = PredictionFileWire {
        schema: PREDICTION_SCHEMA.into(),
        faces: preds
            .faces
            .iter()
            .map(|f| PredFaceWire {
                id: f.id.clone(),
                landmarks: f
                    .landmarks
                    .iter()
                    .map(|l| PredLandmarkWire {
                        mu: [l.mean.x, l.mean.y],
                        chol: l.chol.as_array(),
                        vis: l.visibility,
                    })
                    .collect(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&wire).expect("predictions serialize")
}

/// Pair annotated and predicted faces by id, sorted by id.
///
/// Every annotated face needs a prediction with the same landmark count and
/// vice versa.
pub fn pair_faces<'a>(
    annotations: &'a AnnotationSet,
    predictions: &'a PredictionFile,
) -> Result<Vec<(&'a AnnotatedFace, &'a PredictedFace)>> {
    let by_id: BTreeMap<&str, &PredictedFace> = predictions.faces.iter().map(|f| (f.id.as_str(), f)).collect();
    let annotated: HashSet<&str> = annotations.faces.iter().map(|f| f.id.as_str()).collect();
    if let Some(extra) = predictions.faces.iter().find(|f| !annotated.contains(f.id.as_str())) {
        return Err(Error::CountMismatch(format!("prediction for unknown face '{}'", extra.id)));
    }
    let mut pairs = Vec::with_capacity(annotations.faces.len());
    for face in &annotations.faces {
        let pred = by_id
            .get(face.id.as_str())
            .ok_or_else(|| Error::CountMismatch(format!("no prediction for face '{}'", face.id)))?;
        if pred.landmarks.len() != face.landmarks.len() {
            return Err(Error::CountMismatch(format!(
                "face '{}': {} predicted landmarks for {} annotated",
                face.id,
                pred.landmarks.len(),
                face.landmarks.len()
            )));
        }
        pairs.push((face, *pred));
    }
    pairs.sort_by(|a, b| a.0.id.cmp(&b.0.id));
    Ok(pairs)
}
