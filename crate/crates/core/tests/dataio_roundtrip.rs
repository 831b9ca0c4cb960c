use luvli::dataio::{self, AnnotatedFace, AnnotatedLandmark, AnnotationSet, BoundingBox, PredictedFace, PredictionFile, VisibilityClass};
use luvli::{CholeskyCovariance, LandmarkPrediction, Point2};
use proptest::prelude::*;

fn coord() -> impl Strategy<Value = f64> {
    prop_oneof![-1e4..1e4f64, any::<i16>().prop_map(f64::from), Just(0.1 + 0.2)]
}

fn landmark() -> impl Strategy<Value = AnnotatedLandmark> {
    (0..3usize, coord(), coord()).prop_map(|(c, x, y)| {
        let class = VisibilityClass::ALL[c];
        let location = class.is_visible().then_some(Point2::new(x, y));
        AnnotatedLandmark { class, location }
    })
}

fn annotation_set() -> impl Strategy<Value = AnnotationSet> {
    (1..6usize).prop_flat_map(|n| {
        let face = (
            "[a-z0-9_]{1,12}",
            prop::option::of((coord(), coord(), 1.0..500.0f64, 1.0..500.0f64)),
            prop::collection::vec(landmark(), n),
        )
            .prop_map(|(id, b, landmarks)| AnnotatedFace {
                id,
                bbox: b.map(|(x, y, w, h)| BoundingBox { x, y, w, h }),
                landmarks,
            });
        prop::collection::vec(face, 0..8).prop_map(move |mut faces| {
            for (i, f) in faces.iter_mut().enumerate() {
                f.id = format!("{}_{i}", f.id);
            }
            AnnotationSet { num_landmarks: n, faces }
        })
    })
}

fn prediction() -> impl Strategy<Value = LandmarkPrediction> {
    (coord(), coord(), 1e-3..50.0f64, -20.0..20.0f64, 1e-3..50.0f64, 0.0..=1.0f64).prop_map(
        |(x, y, l11, l21, l22, v)| {
            LandmarkPrediction::new(Point2::new(x, y), CholeskyCovariance::new(l11, l21, l22).unwrap(), v)
        },
    )
}

fn prediction_file() -> impl Strategy<Value = PredictionFile> {
    let face = ("[a-z0-9_]{1,12}", prop::collection::vec(prediction(), 1..6))
        .prop_map(|(id, landmarks)| PredictedFace { id, landmarks });
    prop::collection::vec(face, 0..8).prop_map(|mut faces| {
        for (i, f) in faces.iter_mut().enumerate() {
            f.id = format!("{}_{i}", f.id);
        }
        PredictionFile { faces }
    })
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn annotations_round_trip(set in annotation_set()) {
        let text = dataio::write_annotations(&set);
        let back = dataio::parse_annotations(text.as_bytes()).unwrap();
        prop_assert_eq!(&back, &set);
        prop_assert_eq!(dataio::write_annotations(&back), text);
    }

    #[test]
    fn predictions_round_trip(preds in prediction_file()) {
        let text = dataio::write_predictions(&preds);
        let back = dataio::parse_predictions(text.as_bytes()).unwrap();
        prop_assert_eq!(&back, &preds);
        prop_assert_eq!(dataio::write_predictions(&back), text);
    }
}
