//! `luvli` command-line tool.
//!
//! Exit codes: 0 success, 1 data or tolerance failure, 2 usage or config
//! error.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::calibration::{self, GridSpec, ResidualRecord};
use crate::dataio::{self, AnnotatedFace, AnnotatedLandmark, AnnotationSet, PredictedFace, PredictionFile, VisibilityClass};
use crate::error::Error;
use crate::fitting::{self, OptimizerConfig, SyntheticScenario};
use crate::likelihood::{clamp_visibility, GroundTruthLandmark, LandmarkPrediction, LikelihoodKind};
use crate::metrics::{self, EvalOptions, FaceEvalRecord, NormalizerKind};
use crate::par::Execution;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Step size for gradient checking.
pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-6;

#[derive(Parser, Debug)]
#[command(name = "luvli", version, about = "Landmark location, uncertainty and visibility likelihood tools")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample a synthetic annotation file from a scenario config.
    Synth(SynthArgs),
    /// Compare analytic loss gradients with central differences.
    Gradcheck(GradcheckArgs),
    /// Fit one predicted landmark per landmark index by maximum likelihood.
    Fit(FitArgs),
    /// Compute NME, AUC, failure rate, visibility accuracy and uncertainty.
    Eval(EvalArgs),
    /// Residual-vs-covariance binning, standardized residual KL, rank check.
    Calibrate(CalibrateArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub kind: LikelihoodKind,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub kind: LikelihoodKind,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long, default_value = "interocular")]
    pub normalizer: NormalizerKind,
    /// AUC cutoff, in NME percent.
    #[arg(long, default_value_t = 7.0)]
    pub cutoff: f64,
    /// Failure threshold, in NME percent.
    #[arg(long, default_value_t = 7.0)]
    pub threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub bin_size: usize,
    /// Histogram half-width and cells per axis, as `extent,cells`.
    #[arg(long, default_value = "6,60", value_parser = parse_grid)]
    pub grid: GridSpec,
    /// Normalizer for the per-image NME in the rank check.
    #[arg(long, default_value = "box")]
    pub normalizer: NormalizerKind,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_grid(s: &str) -> Result<GridSpec, String> {
    let (e, c) = s.split_once(',').ok_or("expected EXTENT,CELLS")?;
    let extent: f64 = e.trim().parse().map_err(|_| format!("bad extent '{e}'"))?;
    let cells: usize = c.trim().parse().map_err(|_| format!("bad cell count '{c}'"))?;
    GridSpec::new(extent, cells).map_err(|e| e.to_string())
}

/// A failed command: exit code plus message for stderr.
#[derive(Debug)]
struct Failure {
    code: i32,
    msg: String,
}

impl Failure {
    fn usage(msg: impl std::fmt::Display) -> Self {
        Failure { code: EXIT_USAGE, msg: msg.to_string() }
    }

    fn data(msg: impl std::fmt::Display) -> Self {
        Failure { code: EXIT_FAILURE, msg: msg.to_string() }
    }
}

/// Outcome of a command that ran to completion: stdout text and exit code.
struct Outcome {
    stdout: String,
    code: i32,
}

type CmdResult = std::result::Result<Outcome, Failure>;

/// Parse `args` (including the program name) and run the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(out) => {
            print!("{}", out.stdout);
            out.code
        }
        Err(f) => {
            eprintln!("error: {}", f.msg);
            f.code
        }
    }
}

fn execute(cmd: Command) -> CmdResult {
    match cmd {
        Command::Synth(a) => synth(&a),
        Command::Gradcheck(a) => gradcheck(&a),
        Command::Fit(a) => fit(&a),
        Command::Eval(a) => eval(&a),
        Command::Calibrate(a) => calibrate(&a),
    }
}

fn read(path: &Path) -> std::result::Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: &[u8]) -> std::result::Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

/// `dir/stem.out.json` + `suffix` → `dir/stem` + `suffix`.
pub fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}{suffix}"))
}

fn json<T: serde::Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s.into_bytes()
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> crate::Result<()>) -> std::result::Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(Failure::data)?;
    Ok(buf)
}

fn load_annotations(path: &Path) -> std::result::Result<AnnotationSet, Failure> {
    let bytes = read(path)?;
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Err(Failure::usage(format!("{}: empty file", path.display())));
    }
    dataio::parse_annotations(&bytes).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn load_predictions(path: &Path) -> std::result::Result<PredictionFile, Failure> {
    let bytes = read(path)?;
    dataio::parse_predictions(&bytes).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

pub fn sample_id(i: usize) -> String {
    format!("sample_{i:06}")
}

/// Annotation file for a scenario: one face per sample, landmark `j` of
/// face `i` is sample `i` of group `j`.
pub fn scenario_annotations(scenario: &SyntheticScenario, groups: &[Vec<GroundTruthLandmark>]) -> AnnotationSet {
    let faces = (0..scenario.num_samples)
        .map(|i| AnnotatedFace {
            id: sample_id(i),
            bbox: scenario.bbox,
            landmarks: scenario
                .landmarks
                .iter()
                .zip(groups)
                .map(|(truth, g)| match g[i].location {
                    Some(p) => AnnotatedLandmark {
                        class: if truth.occluded {
                            VisibilityClass::ExternallyOccluded
                        } else {
                            VisibilityClass::Unoccluded
                        },
                        location: Some(p),
                    },
                    None => AnnotatedLandmark { class: VisibilityClass::SelfOccluded, location: None },
                })
                .collect(),
        })
        .collect();
    AnnotationSet { num_landmarks: scenario.landmarks.len(), faces }
}

/// True parameters as a one-face prediction file.
pub fn scenario_truth(scenario: &SyntheticScenario) -> crate::Result<PredictionFile> {
    let landmarks = scenario
        .landmarks
        .iter()
        .map(|t| Ok(LandmarkPrediction::new(t.mean, t.cov.cholesky()?, clamp_visibility(t.visibility_rate))))
        .collect::<crate::Result<Vec<_>>>()?;
    Ok(PredictionFile { faces: vec![PredictedFace { id: "truth".into(), landmarks }] })
}

fn synth(a: &SynthArgs) -> CmdResult {
    let bytes = read(&a.config)?;
    let mut scenario =
        SyntheticScenario::from_json(&bytes).map_err(|e| Failure::usage(format!("{}: {e}", a.config.display())))?;
    if let Some(seed) = a.seed {
        scenario.seed = seed;
    }
    let groups = fitting::generate(&scenario);
    let set = scenario_annotations(&scenario, &groups);
    let truth = scenario_truth(&scenario).map_err(Failure::usage)?;
    let truth_path = sibling(&a.out, ".truth.json");
    let mut annotations = dataio::write_annotations(&set);
    annotations.push('\n');
    write(&a.out, annotations.as_bytes())?;
    let mut truth_json = dataio::write_predictions(&truth);
    truth_json.push('\n');
    write(&truth_path, truth_json.as_bytes())?;

    let mut out = String::new();
    let visible: usize = set.faces.iter().map(|f| f.visible_count()).sum();
    writeln!(
        out,
        "synth: {} samples x {} landmarks ({} visible), kind {}, seed {}",
        scenario.num_samples,
        scenario.landmarks.len(),
        visible,
        scenario.kind,
        scenario.seed
    )
    .unwrap();
    writeln!(out, "wrote {} and {}", a.out.display(), truth_path.display()).unwrap();
    Ok(Outcome { stdout: out, code: EXIT_OK })
}

fn gradcheck(a: &GradcheckArgs) -> CmdResult {
    if a.trials == 0 {
        return Err(Failure::usage("--trials must be at least 1"));
    }
    let err = fitting::gradcheck_trials(a.kind, a.trials, a.seed, GRADCHECK_STEP, Execution::default())
        .map_err(Failure::data)?;
    let pass = err < GRADCHECK_TOLERANCE;
    let stdout = format!(
        "gradcheck {}: {} trials, seed {}, max relative error {:e} ({})\n",
        a.kind,
        a.trials,
        a.seed,
        err,
        if pass { "ok" } else { "FAILED" }
    );
    Ok(Outcome { stdout, code: if pass { EXIT_OK } else { EXIT_FAILURE } })
}

fn fit(a: &FitArgs) -> CmdResult {
    let set = load_annotations(&a.annotations)?;
    if set.faces.is_empty() {
        return Err(Failure::usage(format!("{}: no faces", a.annotations.display())));
    }
    let mut faces: Vec<&AnnotatedFace> = set.faces.iter().collect();
    faces.sort_by(|x, y| x.id.cmp(&y.id));
    let truth: Vec<Vec<GroundTruthLandmark>> = faces.iter().map(|f| dataio::to_ground_truth(f)).collect();
    let groups: Vec<Vec<GroundTruthLandmark>> =
        (0..set.num_landmarks).map(|j| truth.iter().map(|t| t[j]).collect()).collect();

    let cfg = OptimizerConfig::default();
    let results = fitting::fit_groups(&groups, a.kind, &cfg, Execution::default());
    let mut out = String::new();
    let mut code = EXIT_OK;
    let mut fitted = Vec::with_capacity(results.len());
    for (j, (r, g)) in results.into_iter().zip(&groups).enumerate() {
        let r = match r {
            Ok(r) => r,
            Err(e @ Error::Degenerate(_)) => {
                code = EXIT_FAILURE;
                writeln!(out, "landmark {j}: {e}; fitted visibility only").unwrap();
                fitting::fit_visibility_only(g, a.kind, &cfg).map_err(Failure::data)?
            }
            Err(e) => return Err(Failure::data(format!("landmark {j}: {e}"))),
        };
        let p = &r.prediction;
        writeln!(
            out,
            "landmark {j}: mu ({:.4}, {:.4}) chol ({:.4}, {:.4}, {:.4}) vis {:.4} loss {:.6} iters {} grad {:.1e} stop: {}",
            p.mean.x,
            p.mean.y,
            p.chol.l11(),
            p.chol.l21(),
            p.chol.l22(),
            p.visibility,
            r.loss,
            r.iterations,
            r.grad_norm,
            r.stop.as_str()
        )
        .unwrap();
        fitted.push(r.prediction);
    }
    let preds = PredictionFile {
        faces: faces.iter().map(|f| PredictedFace { id: f.id.clone(), landmarks: fitted.clone() }).collect(),
    };
    let mut text = dataio::write_predictions(&preds);
    text.push('\n');
    write(&a.out, text.as_bytes())?;
    writeln!(out, "wrote {}", a.out.display()).unwrap();
    Ok(Outcome { stdout: out, code })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "n/a".into())
}

fn eval(a: &EvalArgs) -> CmdResult {
    if !(a.cutoff > 0.0 && a.cutoff.is_finite()) {
        return Err(Failure::usage("--cutoff must be positive"));
    }
    let set = load_annotations(&a.annotations)?;
    let preds = load_predictions(&a.predictions)?;
    let pairs = dataio::pair_faces(&set, &preds).map_err(Failure::data)?;
    let opts = EvalOptions { normalizer: a.normalizer, auc_cutoff: a.cutoff, fr_threshold: a.threshold };
    let report = metrics::evaluate(&pairs, &opts, Execution::default()).map_err(Failure::data)?;
    let csv_path = sibling(&a.out, ".csv");
    write(&a.out, &json(&report.summary))?;
    write(&csv_path, &csv_bytes(|b| report.write_csv(b))?)?;

    let s = &report.summary;
    let mut out = String::new();
    writeln!(out, "images {}  normalizer {}", s.num_images, s.normalizer.as_str()).unwrap();
    writeln!(out, "NME {:.6}  NME-vis {}", s.mean_nme, opt(s.mean_nme_vis)).unwrap();
    writeln!(out, "AUC@{} {:.6}  FR@{} {:.6}", s.auc_cutoff, s.auc, s.fr_threshold, s.failure_rate).unwrap();
    writeln!(out, "visibility accuracy {}", opt(s.visibility_accuracy_all)).unwrap();
    for c in VisibilityClass::ALL {
        writeln!(
            out,
            "  {:<20} vis acc {}  mean |Sigma|^1/2 {}",
            c.as_str(),
            opt(s.visibility_accuracy.get(c)),
            opt(s.mean_uncertainty.get(c))
        )
        .unwrap();
    }
    writeln!(out, "wrote {} and {}", a.out.display(), csv_path.display()).unwrap();
    Ok(Outcome { stdout: out, code: EXIT_OK })
}

/// Residual records over visible annotated landmarks, plus per-image NME and
/// mean uncertainty scalar, in pair order.
pub fn calibration_inputs(
    pairs: &[(&AnnotatedFace, &PredictedFace)],
    normalizer: NormalizerKind,
) -> crate::Result<(Vec<ResidualRecord>, Vec<f64>, Vec<f64>)> {
    let mut records = Vec::new();
    let mut nmes = Vec::with_capacity(pairs.len());
    let mut uncertainty = Vec::with_capacity(pairs.len());
    for (face, pred) in pairs {
        for (lm, p) in face.landmarks.iter().zip(&pred.landmarks) {
            if let Some(loc) = lm.location {
                records.push(ResidualRecord { residual: loc - p.mean, predicted: p.covariance() });
            }
        }
        nmes.push(metrics::nme(&FaceEvalRecord::from_face(face, pred)?, normalizer)?);
        let u: f64 = pred.landmarks.iter().map(metrics::uncertainty_scalar).sum();
        uncertainty.push(u / pred.landmarks.len().max(1) as f64);
    }
    Ok((records, nmes, uncertainty))
}

fn calibrate(a: &CalibrateArgs) -> CmdResult {
    if a.bin_size == 0 {
        return Err(Failure::usage("--bin-size must be at least 1"));
    }
    let set = load_annotations(&a.annotations)?;
    let preds = load_predictions(&a.predictions)?;
    let pairs = dataio::pair_faces(&set, &preds).map_err(Failure::data)?;
    let (records, nmes, unc) = calibration_inputs(&pairs, a.normalizer).map_err(Failure::data)?;
    let report = calibration::calibration_report(&records, a.bin_size, a.grid, Some((&nmes, &unc)))
        .map_err(Failure::data)?;
    let z = calibration::standardize(&records).map_err(Failure::data)?;
    let ids: Vec<String> = pairs.iter().map(|(f, _)| f.id.clone()).collect();

    let bins_path = sibling(&a.out, ".bins.csv");
    let hist_path = sibling(&a.out, ".hist.csv");
    let rank_path = sibling(&a.out, ".rank.csv");
    write(&a.out, &json(&report))?;
    write(&bins_path, &csv_bytes(|b| calibration::write_bins_csv(&report.binning, b))?)?;
    write(&hist_path, &csv_bytes(|b| calibration::write_histogram_csv(&z, &a.grid, b))?)?;
    if let Some(rank) = &report.rank {
        write(&rank_path, &csv_bytes(|b| calibration::write_rank_csv(rank, &ids, b))?)?;
    }

    let mut out = String::new();
    writeln!(out, "records {}  bins of {}", report.num_records, a.bin_size).unwrap();
    for c in &report.binning.components {
        writeln!(
            out,
            "  {}: {} bins  pearson {}  slope {}  intercept {}",
            c.component.as_str(),
            c.bins.len(),
            opt(c.pearson),
            opt(c.slope),
            opt(c.intercept)
        )
        .unwrap();
    }
    writeln!(out, "standardized residual KL {:.6}", report.standardized_kl).unwrap();
    if let Some(r) = &report.rank {
        writeln!(
            out,
            "NME vs uncertainty spearman {:.6}{}",
            r.spearman,
            if r.degenerate { " (degenerate)" } else { "" }
        )
        .unwrap();
    }
    writeln!(out, "wrote {}, {}, {}, {}", a.out.display(), bins_path.display(), hist_path.display(), rank_path.display())
        .unwrap();
    Ok(Outcome { stdout: out, code: EXIT_OK })
}
