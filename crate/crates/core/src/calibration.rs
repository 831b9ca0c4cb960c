//! Checks that predicted covariances describe the observed residuals.
//!
//! Three diagnostics:
//!
//! 1. Residual-vs-covariance binning: records are sorted by one predicted
//!    covariance component, grouped into equal-count bins, and the bin mean
//!    of the prediction is compared with the bin mean of the matching
//!    residual product (`x²`, `x·y`, `y²`).
//! 2. Standardization: `Σ^{-1/2}(p − μ)` should follow the unit-covariance
//!    Laplacian; the gap is measured as a histogram KL divergence.
//! 3. Rank agreement between per-image uncertainty and per-image NME.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{inv_sqrt, matrix_exp, matrix_log, Point2, SymMatrix2};
use crate::par::{self, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualRecord {
    /// `p − μ` in pixels.
    pub residual: Point2,
    pub predicted: SymMatrix2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Xx,
    Xy,
    Yy,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::Xx, Component::Xy, Component::Yy];

    pub fn as_str(self) -> &'static str {
        match self {
            Component::Xx => "xx",
            Component::Xy => "xy",
            Component::Yy => "yy",
        }
    }

    fn predicted(self, m: &SymMatrix2) -> f64 {
        match self {
            Component::Xx => m.xx,
            Component::Xy => m.xy,
            Component::Yy => m.yy,
        }
    }

    fn residual_product(self, r: Point2) -> f64 {
        match self {
            Component::Xx => r.x * r.x,
            Component::Xy => r.x * r.y,
            Component::Yy => r.y * r.y,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinPair {
    pub mean_predicted: f64,
    pub mean_residual_product: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentCalibration {
    pub component: Component,
    pub bins: Vec<BinPair>,
    /// `None` when either axis has zero variance across bins.
    pub pearson: Option<f64>,
    /// Least-squares slope of residual product on prediction.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
}

impl ComponentCalibration {
    pub fn is_degenerate(&self) -> bool {
        self.pearson.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binning {
    pub n_per_bin: usize,
    pub components: Vec<ComponentCalibration>,
}

impl Binning {
    pub fn component(&self, c: Component) -> &ComponentCalibration {
        self.components.iter().find(|k| k.component == c).expect("all components present")
    }
}

fn is_constant(xs: &[f64]) -> bool {
    xs.iter().all(|&x| x == xs[0])
}

/// Pearson correlation; `None` if either series is constant.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len().min(ys.len());
    if n < 2 || is_constant(&xs[..n]) || is_constant(&ys[..n]) {
        return None;
    }
    let mx = xs[..n].iter().sum::<f64>() / n as f64;
    let my = ys[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Ordinary least squares `y ≈ slope·x + intercept`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let n = xs.len().min(ys.len());
    if n < 2 || is_constant(&xs[..n]) {
        return None;
    }
    let mx = xs[..n].iter().sum::<f64>() / n as f64;
    let my = ys[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Equal-count binning of each covariance component; the trailing partial
/// bin is dropped.
pub fn bin_and_correlate(records: &[ResidualRecord], n_per_bin: usize) -> Result<Binning> {
    if n_per_bin == 0 {
        return Err(Error::InvalidArgument("bin size must be positive".into()));
    }
    let needed = n_per_bin.saturating_mul(2);
    if records.len() < needed {
        return Err(Error::TooFewRecords { needed, got: records.len() });
    }
    let components = Component::ALL
        .iter()
        .map(|&c| {
            let mut keyed: Vec<(f64, f64)> = records
                .iter()
                .map(|r| (c.predicted(&r.predicted), c.residual_product(r.residual)))
                .collect();
            keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
            let bins: Vec<BinPair> = keyed
                .chunks_exact(n_per_bin)
                .map(|chunk| {
                    let n = chunk.len() as f64;
                    BinPair {
                        mean_predicted: chunk.iter().map(|k| k.0).sum::<f64>() / n,
                        mean_residual_product: chunk.iter().map(|k| k.1).sum::<f64>() / n,
                    }
                })
                .collect();
            let xs: Vec<f64> = bins.iter().map(|b| b.mean_predicted).collect();
            let ys: Vec<f64> = bins.iter().map(|b| b.mean_residual_product).collect();
            let fit = linear_fit(&xs, &ys);
            ComponentCalibration {
                component: c,
                pearson: pearson(&xs, &ys),
                slope: fit.map(|f| f.0),
                intercept: fit.map(|f| f.1),
                bins,
            }
        })
        .collect();
    Ok(Binning { n_per_bin, components })
}

/// Whitened residuals `Σ^{-1/2}·(p − μ)`.
pub fn standardize(records: &[ResidualRecord]) -> Result<Vec<Point2>> {
    standardize_with(records, Execution::default())
}

pub fn standardize_with(records: &[ResidualRecord], exec: Execution) -> Result<Vec<Point2>> {
    par::try_map_slice(exec, records, |r| Ok(inv_sqrt(&r.predicted)?.apply(r.residual)))
}

/// Square histogram grid `[−extent, extent]²` split into `cells × cells`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub extent: f64,
    pub cells: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { extent: 6.0, cells: 60 }
    }
}

impl GridSpec {
    pub fn new(extent: f64, cells: usize) -> Result<Self> {
        if !(extent > 0.0 && extent.is_finite()) || cells == 0 {
            return Err(Error::InvalidArgument(format!("invalid grid extent {extent} / cells {cells}")));
        }
        Ok(GridSpec { extent, cells })
    }

    pub fn cell_width(&self) -> f64 {
        2.0 * self.extent / self.cells as f64
    }

    /// Number of bins including the trailing tail bin.
    pub fn len(&self) -> usize {
        self.cells * self.cells + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Row-major cell index, or the tail index for points off the grid.
    pub fn index(&self, p: Point2) -> usize {
        let tail = self.cells * self.cells;
        let w = self.cell_width();
        let ix = ((p.x + self.extent) / w).floor();
        let iy = ((p.y + self.extent) / w).floor();
        let n = self.cells as f64;
        if ix >= 0.0 && ix < n && iy >= 0.0 && iy < n {
            iy as usize * self.cells + ix as usize
        } else {
            tail
        }
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> Point2 {
        let w = self.cell_width();
        Point2::new(-self.extent + (ix as f64 + 0.5) * w, -self.extent + (iy as f64 + 0.5) * w)
    }
}

/// Density of the unit-covariance 2D Laplacian, `3/(2π)·e^{−√3‖z‖}`.
pub fn standard_laplacian_density(z: Point2) -> f64 {
    3.0 / std::f64::consts::TAU * (-(3f64.sqrt()) * z.norm()).exp()
}

// 4-point Gauss–Legendre on [−1, 1].
const GL4_NODES: [f64; 4] = [-0.861_136_311_594_052_6, -0.339_981_043_584_856_3, 0.339_981_043_584_856_3, 0.861_136_311_594_052_6];
const GL4_WEIGHTS: [f64; 4] = [0.347_854_845_137_453_85, 0.652_145_154_862_546_1, 0.652_145_154_862_546_1, 0.347_854_845_137_453_85];

/// Reference probability per grid cell (tensor 4-point Gauss–Legendre per
/// cell), with the leftover mass in the tail bin.
pub fn reference_masses(grid: &GridSpec) -> Vec<f64> {
    let w = grid.cell_width();
    let half = 0.5 * w;
    let mut masses: Vec<f64> = (0..grid.cells * grid.cells)
        .map(|i| {
            let c = grid.cell_center(i % grid.cells, i / grid.cells);
            let mut s = 0.0;
            for (nx, wx) in GL4_NODES.iter().zip(GL4_WEIGHTS) {
                for (ny, wy) in GL4_NODES.iter().zip(GL4_WEIGHTS) {
                    let z = Point2::new(c.x + half * nx, c.y + half * ny);
                    s += wx * wy * standard_laplacian_density(z);
                }
            }
            s * half * half
        })
        .collect();
    let inside: f64 = masses.iter().sum();
    masses.push((1.0 - inside).max(0.0));
    masses
}

pub fn histogram(points: &[Point2], grid: &GridSpec) -> Vec<u64> {
    let mut counts = vec![0u64; grid.len()];
    for p in points {
        counts[grid.index(*p)] += 1;
    }
    counts
}

/// `KL(p‖q) = Σ p·ln(p/q)` with empty `p` cells contributing zero.
/// Both inputs are normalized first.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {} bins", p.len(), q.len())));
    }
    let sp: f64 = p.iter().sum();
    let sq: f64 = q.iter().sum();
    if !(sp > 0.0 && sq > 0.0) {
        return Err(Error::EmptyInput);
    }
    let mut kl = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 {
            let (a, b) = (a / sp, b / sq);
            kl += if b > 0.0 { a * (a / b).ln() } else { f64::INFINITY };
        }
    }
    Ok(kl.max(0.0))
}

pub const MIN_KL_POINTS: usize = 1000;

/// KL divergence of the points' histogram from the standard Laplacian.
pub fn histogram_kl(points: &[Point2], grid: &GridSpec) -> Result<f64> {
    if points.len() < MIN_KL_POINTS {
        return Err(Error::TooFewPoints { needed: MIN_KL_POINTS, got: points.len() });
    }
    let counts: Vec<f64> = histogram(points, grid).into_iter().map(|c| c as f64).collect();
    kl_divergence(&counts, &reference_masses(grid))
}

/// Matrix exponential of the mean matrix logarithm.
pub fn mean_covariance_logeuclidean(sigmas: &[SymMatrix2]) -> Result<SymMatrix2> {
    if sigmas.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut acc = SymMatrix2::ZERO;
    for s in sigmas {
        acc = acc.add(&matrix_log(s)?);
    }
    Ok(matrix_exp(&acc.scale(1.0 / sigmas.len() as f64)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub rank: usize,
    /// Index into the input lists.
    pub image: usize,
    pub uncertainty: f64,
    pub nme: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub entries: Vec<RankEntry>,
    pub spearman: f64,
    /// Set when either series is constant; `spearman` is then 0.
    pub degenerate: bool,
}

/// Average ranks (1-based), ties sharing the mean rank.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = 0.5 * (i + j) as f64 + 1.0;
        for &k in &order[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    pearson(&ranks(xs), &ranks(ys))
}

/// Images sorted by ascending mean uncertainty, with the Spearman
/// correlation between uncertainty and NME.
pub fn nme_vs_uncertainty_rank(nmes: &[f64], uncertainties: &[f64]) -> Result<RankReport> {
    if nmes.len() != uncertainties.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} NME values, {} uncertainties",
            nmes.len(),
            uncertainties.len()
        )));
    }
    if nmes.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut order: Vec<usize> = (0..nmes.len()).collect();
    order.sort_by(|&a, &b| uncertainties[a].total_cmp(&uncertainties[b]));
    let entries = order
        .iter()
        .enumerate()
        .map(|(rank, &i)| RankEntry { rank, image: i, uncertainty: uncertainties[i], nme: nmes[i] })
        .collect();
    let rho = spearman(uncertainties, nmes);
    Ok(RankReport { entries, spearman: rho.unwrap_or(0.0), degenerate: rho.is_none() })
}

/// Everything the `calibrate` command reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub num_records: usize,
    pub binning: Binning,
    pub grid: GridSpec,
    pub standardized_kl: f64,
    /// Sample covariance of the standardized residuals.
    pub standardized_covariance: SymMatrix2,
    pub rank: Option<RankReport>,
}

pub fn sample_covariance(points: &[Point2]) -> SymMatrix2 {
    let n = points.len() as f64;
    let mean = points.iter().fold(Point2::ZERO, |a, &p| a + p).scale(1.0 / n);
    let mut c = SymMatrix2::ZERO;
    for p in points {
        let d = *p - mean;
        c = c.add(&SymMatrix2::new(d.x * d.x, d.x * d.y, d.y * d.y));
    }
    c.scale(1.0 / n)
}

pub fn calibration_report(
    records: &[ResidualRecord],
    n_per_bin: usize,
    grid: GridSpec,
    per_image: Option<(&[f64], &[f64])>,
) -> Result<CalibrationReport> {
    let binning = bin_and_correlate(records, n_per_bin)?;
    let z = standardize(records)?;
    let standardized_kl = histogram_kl(&z, &grid)?;
    let rank = per_image.map(|(n, u)| nme_vs_uncertainty_rank(n, u)).transpose()?;
    Ok(CalibrationReport {
        num_records: records.len(),
        binning,
        grid,
        standardized_kl,
        standardized_covariance: sample_covariance(&z),
        rank,
    })
}

/// `component,bin,mean_predicted,mean_residual_product`.
pub fn write_bins_csv<W: std::io::Write>(binning: &Binning, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["component", "bin", "mean_predicted", "mean_residual_product"])?;
    for c in &binning.components {
        for (i, b) in c.bins.iter().enumerate() {
            w.write_record([
                c.component.as_str().to_string(),
                i.to_string(),
                b.mean_predicted.to_string(),
                b.mean_residual_product.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `ix,iy,x,y,empirical,reference` per cell, then a `tail` row.
pub fn write_histogram_csv<W: std::io::Write>(points: &[Point2], grid: &GridSpec, writer: W) -> Result<()> {
    let counts = histogram(points, grid);
    let total = points.len().max(1) as f64;
    let reference = reference_masses(grid);
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["ix", "iy", "x", "y", "empirical", "reference"])?;
    for iy in 0..grid.cells {
        for ix in 0..grid.cells {
            let i = iy * grid.cells + ix;
            let c = grid.cell_center(ix, iy);
            w.write_record([
                ix.to_string(),
                iy.to_string(),
                c.x.to_string(),
                c.y.to_string(),
                (counts[i] as f64 / total).to_string(),
                reference[i].to_string(),
            ])?;
        }
    }
    let t = grid.cells * grid.cells;
    w.write_record([
        "tail".to_string(),
        "tail".to_string(),
        String::new(),
        String::new(),
        (counts[t] as f64 / total).to_string(),
        reference[t].to_string(),
    ])?;
    w.flush()?;
    Ok(())
}

/// `rank,image,uncertainty,nme`, with image ids resolved by the caller.
pub fn write_rank_csv<W: std::io::Write>(rank: &RankReport, ids: &[String], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["rank", "id", "uncertainty", "nme"])?;
    for e in &rank.entries {
        let id = ids.get(e.image).cloned().unwrap_or_else(|| e.image.to_string());
        w.write_record([e.rank.to_string(), id, e.uncertainty.to_string(), e.nme.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::{sample_chol, LikelihoodKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn calibrated(n: usize, cov_scale: f64, seed: u64) -> Vec<ResidualRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let l11 = rng.random_range(0.3f64..3.0);
                let l22 = rng.random_range(0.3f64..3.0);
                let l21 = rng.random_range(-2.0..2.0);
                let chol = crate::geometry::CholeskyCovariance::new(l11, l21, l22).unwrap();
                let predicted = chol.to_covariance();
                let true_chol = predicted.scale(cov_scale).cholesky().unwrap();
                let residual = sample_chol(LikelihoodKind::Laplacian, Point2::ZERO, &true_chol, &mut rng);
                ResidualRecord { residual, predicted }
            })
            .collect()
    }

    #[test]
    fn binning_of_calibrated_population() {
        let recs = calibrated(25_000, 1.0, 1);
        let b = bin_and_correlate(&recs, 500).unwrap();
        for c in &b.components {
            assert_eq!(c.bins.len(), 50);
            assert!(c.pearson.unwrap() >= 0.95, "{:?} {:?}", c.component, c.pearson);
            assert!((c.slope.unwrap() - 1.0).abs() <= 0.1, "{:?} {:?}", c.component, c.slope);
            assert!(c.bins.windows(2).all(|w| w[0].mean_predicted <= w[1].mean_predicted));
        }
    }

    #[test]
    fn binning_detects_miscalibration() {
        let recs = calibrated(25_000, 4.0, 2);
        let b = bin_and_correlate(&recs, 500).unwrap();
        for c in &b.components {
            assert!((c.slope.unwrap() - 4.0).abs() <= 0.5, "{:?} {:?}", c.component, c.slope);
        }
    }

    #[test]
    fn constant_prediction_is_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let recs: Vec<_> = (0..100)
            .map(|_| ResidualRecord {
                residual: Point2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
                predicted: SymMatrix2::new(2.0, 0.3, 1.0),
            })
            .collect();
        let b = bin_and_correlate(&recs, 10).unwrap();
        assert!(b.components.iter().all(|c| c.is_degenerate()));
        assert!(matches!(bin_and_correlate(&recs, 51), Err(Error::TooFewRecords { .. })));
        assert!(bin_and_correlate(&recs, 0).is_err());
    }

    #[test]
    fn larger_bins_correlate_better() {
        let seeds = 20;
        let mut wins = 0;
        for seed in 0..seeds {
            let recs = calibrated(6000, 1.0, 100 + seed);
            let small = bin_and_correlate(&recs, 30).unwrap();
            let large = bin_and_correlate(&recs, 500).unwrap();
            let better = small
                .components
                .iter()
                .zip(&large.components)
                .all(|(s, l)| s.pearson.unwrap() <= l.pearson.unwrap());
            wins += better as usize;
        }
        assert!(wins * 10 >= seeds as usize * 8, "{wins}/{seeds}");
    }

    #[test]
    fn partial_last_bin_is_dropped() {
        let recs = calibrated(1050, 1.0, 4);
        let b = bin_and_correlate(&recs, 100).unwrap();
        assert!(b.components.iter().all(|c| c.bins.len() == 10));
    }

    #[test]
    fn standardize_examples() {
        let recs = [
            ResidualRecord { residual: Point2::ZERO, predicted: SymMatrix2::new(3.0, 1.0, 2.0) },
            ResidualRecord { residual: Point2::new(2.0, 3.0), predicted: SymMatrix2::diag(4.0, 9.0) },
        ];
        let z = standardize(&recs).unwrap();
        assert_eq!(z[0], Point2::ZERO);
        assert!((z[1] - Point2::new(1.0, 1.0)).norm() < 1e-15);
        let bad = [ResidualRecord { residual: Point2::ZERO, predicted: SymMatrix2::new(1.0, 1.0, 1.0) }];
        assert!(standardize(&bad).is_err());
    }

    #[test]
    fn standardized_covariance_is_identity() {
        let recs = calibrated(100_000, 1.0, 5);
        let z = standardize(&recs).unwrap();
        let c = sample_covariance(&z);
        assert!(c.max_abs_diff(&SymMatrix2::IDENTITY) < 0.03, "{c:?}");
    }

    #[test]
    fn reference_masses_sum_to_one() {
        let grid = GridSpec::default();
        let q = reference_masses(&grid);
        assert_eq!(q.len(), 3601);
        let total: f64 = q.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        // tail holds the mass beyond the square: below the mass outside
        // the inscribed disk, e^{−6√3}(1 + 6√3)
        let r = 6.0 * 3f64.sqrt();
        assert!(q[3600] > 0.0 && q[3600] < (-r).exp() * (1.0 + r));
    }

    #[test]
    fn kl_examples() {
        let grid = GridSpec::default();
        let q = reference_masses(&grid);
        assert!(kl_divergence(&q, &q).unwrap().abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pts: Vec<Point2> = (0..100_000)
            .map(|_| sample_chol(LikelihoodKind::Laplacian, Point2::ZERO, &crate::geometry::CholeskyCovariance::IDENTITY, &mut rng))
            .collect();
        let base = histogram_kl(&pts, &grid).unwrap();
        assert!(base < 0.05, "{base}");
        let scaled: Vec<Point2> = pts.iter().map(|p| p.scale(2.0)).collect();
        let wide = histogram_kl(&scaled, &grid).unwrap();
        assert!(wide >= 5.0 * base, "{wide} vs {base}");

        let mut shuffled = pts.clone();
        shuffled.reverse();
        shuffled.swap(0, 500);
        assert_eq!(histogram_kl(&shuffled, &grid).unwrap(), base);
        assert!(matches!(histogram_kl(&pts[..999], &grid), Err(Error::TooFewPoints { .. })));
    }

    #[test]
    fn logeuclidean_examples() {
        let s = SymMatrix2::new(2.25, -0.6, 0.97);
        assert!(mean_covariance_logeuclidean(&[s, s]).unwrap().max_abs_diff(&s) < 1e-12);
        let e = std::f64::consts::E;
        let m = mean_covariance_logeuclidean(&[SymMatrix2::IDENTITY, SymMatrix2::diag(e * e, e * e)]).unwrap();
        assert!(m.max_abs_diff(&SymMatrix2::diag(e, e)) < 1e-12);
        assert!(mean_covariance_logeuclidean(&[]).is_err());
        assert!(mean_covariance_logeuclidean(&[SymMatrix2::new(1.0, 2.0, 1.0)]).is_err());
    }

    #[test]
    fn logeuclidean_scalar_inputs_give_geometric_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let scales: Vec<f64> = (0..100).map(|_| rng.random_range(0.01..50.0)).collect();
        let sigmas: Vec<SymMatrix2> = scales.iter().map(|&c| SymMatrix2::IDENTITY.scale(c)).collect();
        let g = (scales.iter().map(|c| c.ln()).sum::<f64>() / 100.0).exp();
        let m = mean_covariance_logeuclidean(&sigmas).unwrap();
        assert!(m.max_abs_diff(&SymMatrix2::diag(g, g)) < 1e-10 * g);
    }

    #[test]
    fn logeuclidean_commutes_with_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let sigmas: Vec<SymMatrix2> = (0..100)
            .map(|_| {
                crate::geometry::CholeskyCovariance::new(
                    rng.random_range(0.2..3.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(0.2..3.0),
                )
                .unwrap()
                .to_covariance()
            })
            .collect();
        let m = mean_covariance_logeuclidean(&sigmas).unwrap();
        assert!(m.is_spd());
        for theta in [0.3, 1.1, 2.9] {
            let rotated: Vec<_> = sigmas.iter().map(|s| s.rotate(theta)).collect();
            let mr = mean_covariance_logeuclidean(&rotated).unwrap();
            assert!(mr.max_abs_diff(&m.rotate(theta)) < 1e-10);
        }
    }

    #[test]
    fn rank_examples() {
        let r = nme_vs_uncertainty_rank(&[1.0, 5.0, 3.0], &[0.1, 0.9, 0.5]).unwrap();
        assert_eq!(r.spearman, 1.0);
        assert!(!r.degenerate);
        assert_eq!(r.entries.iter().map(|e| e.image).collect::<Vec<_>>(), vec![0, 2, 1]);
        let r = nme_vs_uncertainty_rank(&[2.0, 2.0, 2.0], &[0.1, 0.9, 0.5]).unwrap();
        assert_eq!(r.spearman, 0.0);
        assert!(r.degenerate);
        assert!(matches!(nme_vs_uncertainty_rank(&[], &[]), Err(Error::EmptyInput)));
        assert!(nme_vs_uncertainty_rank(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn ties_get_average_ranks() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }
}
