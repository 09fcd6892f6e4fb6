use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::metrics::{binarize, f_measure, mae, pr_curve, sweep_threshold, Counts, PrPoint};
use crate::data::{mask_tensor, normalize, read_image, ImageBuffer, Manifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::model::{Model, ParamStore};
use crate::tensor::{BatchNormMode, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    /// Operating threshold for the single-number metrics.
    pub threshold: f64,
    pub beta_squared: f64,
    /// Points in the PR sweep.
    pub pr_thresholds: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            threshold: 0.5,
            beta_squared: 0.09,
            pr_thresholds: 256,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::config("threshold", format!("must lie in [0, 1], got {}", self.threshold)));
        }
        if !(self.beta_squared.is_finite() && self.beta_squared > 0.0) {
            return Err(Error::config("beta_squared", format!("must be positive, got {}", self.beta_squared)));
        }
        if self.pr_thresholds < 2 {
            return Err(Error::config("pr_thresholds", format!("need at least 2, got {}", self.pr_thresholds)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageMetrics {
    pub image: String,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub mae: f64,
}

impl ImageMetrics {
    fn csv_row(&self) -> String {
        format!("{},{:.6},{:.6},{:.6},{:.6}", self.image, self.precision, self.recall, self.f_measure, self.mae)
    }
}

/// Everything computed for one image: threshold metrics plus its PR curve.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageEval {
    pub metrics: ImageMetrics,
    pub counts: Counts,
    pub curve: Vec<PrPoint>,
}

/// Scores a `1×1×H×W` saliency map against a ground-truth mask.
///
/// Precision, recall and the PR curve use the mask thresholded at one half;
/// MAE uses it as given, so soft masks keep their grey levels.
pub fn evaluate_map(name: &str, s: &Tensor, gt: &Tensor, cfg: &EvalConfig) -> Result<ImageEval> {
    let g = binarize(gt, 0.5);
    let counts = Counts::of(&binarize(s, cfg.threshold), &g)?;
    let (precision, recall) = counts.precision_recall();
    Ok(ImageEval {
        metrics: ImageMetrics {
            image: name.to_string(),
            precision,
            recall,
            f_measure: f_measure(precision, recall, cfg.beta_squared),
            mae: mae(s, gt)?,
        },
        counts,
        curve: pr_curve(s, &g, cfg.pr_thresholds)?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub images: Vec<ImageMetrics>,
    /// Unweighted means over `images`; named `__average__`.
    pub average: ImageMetrics,
    /// Per-image curves averaged pointwise.
    pub pr_curve: Vec<PrPoint>,
    /// `(image stem, reason)` for entries that could not be scored.
    pub skipped: Vec<(String, String)>,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "image,precision,recall,f_measure,mae";
    pub const PR_CSV_HEADER: &'static str = "threshold,precision,recall";
    pub const AVERAGE_ROW: &'static str = "__average__";

    /// Aggregates per-image results in the order given.
    pub fn from_images(evals: Vec<ImageEval>, skipped: Vec<(String, String)>) -> Result<Self> {
        if evals.is_empty() {
            return Err(Error::Usage("no image could be evaluated".into()));
        }
        let n = evals.len() as f64;
        let mean = |f: &dyn Fn(&ImageMetrics) -> f64| evals.iter().map(|e| f(&e.metrics)).sum::<f64>() / n;
        let average = ImageMetrics {
            image: Self::AVERAGE_ROW.into(),
            precision: mean(&|m| m.precision),
            recall: mean(&|m| m.recall),
            f_measure: mean(&|m| m.f_measure),
            mae: mean(&|m| m.mae),
        };
        let points = evals[0].curve.len();
        if evals.iter().any(|e| e.curve.len() != points) {
            return Err(Error::dim("pr_thresholds", "per-image curves differ in length"));
        }
        let pr_curve = (0..points)
            .map(|k| PrPoint {
                threshold: sweep_threshold(k, points),
                precision: evals.iter().map(|e| e.curve[k].precision).sum::<f64>() / n,
                recall: evals.iter().map(|e| e.curve[k].recall).sum::<f64>() / n,
            })
            .collect();
        Ok(MetricsReport {
            images: evals.into_iter().map(|e| e.metrics).collect(),
            average,
            pr_curve,
            skipped,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for m in self.images.iter().chain([&self.average]) {
            writeln!(s, "{}", m.csv_row()).unwrap();
        }
        s
    }

    pub fn pr_csv(&self) -> String {
        let mut s = format!("{}\n", Self::PR_CSV_HEADER);
        for p in &self.pr_curve {
            writeln!(s, "{:.6},{:.6},{:.6}", p.threshold, p.precision, p.recall).unwrap();
        }
        s
    }

    /// The `__average__` row as written to the CSV.
    pub fn average_row(&self) -> String {
        self.average.csv_row()
    }
}

/// Where saliency maps come from during evaluation.
pub trait MapSource: Sync {
    /// Map for one manifest entry as `1×1×H×W` in `[0, 1]`.
    fn saliency(&self, entry: &ManifestEntry) -> Result<Tensor>;
}

/// Precomputed maps stored as `<dir>/<image stem>.pgm`.
pub struct PredictionDir {
    pub dir: PathBuf,
}

impl PredictionDir {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        PredictionDir { dir: dir.into() }
    }

    pub fn path_for(&self, entry: &ManifestEntry) -> PathBuf {
        self.dir.join(format!("{}.pgm", entry.stem()))
    }
}

impl MapSource for PredictionDir {
    fn saliency(&self, entry: &ManifestEntry) -> Result<Tensor> {
        let img = read_image(&self.path_for(entry))?;
        Ok(mask_tensor(&img, false))
    }
}

/// Runs the network on the entry's image at its native size.
pub struct ModelSource<'a> {
    pub model: &'a Model,
    pub params: &'a ParamStore,
    pub means: [f64; 3],
}

impl MapSource for ModelSource<'_> {
    fn saliency(&self, entry: &ManifestEntry) -> Result<Tensor> {
        predict_image(self.model, self.params, &read_image(&entry.image)?, self.means)
    }
}

/// Inference on one image; the map has the image's height and width.
pub fn predict_image(model: &Model, params: &ParamStore, img: &ImageBuffer, means: [f64; 3]) -> Result<Tensor> {
    model.forward(params, &normalize(img, means), BatchNormMode::Infer)
}

fn evaluate_entry<S: MapSource + ?Sized>(source: &S, entry: &ManifestEntry, cfg: &EvalConfig) -> Result<ImageEval> {
    let gt = mask_tensor(&read_image(&entry.mask)?, false);
    let s = source.saliency(entry)?;
    evaluate_map(&entry.stem(), &s, &gt, cfg)
}

/// Scores every manifest entry in parallel and averages per image.
///
/// Entries whose map or mask cannot be read, or whose sizes disagree, are
/// listed in `skipped`. No evaluable entry at all is a usage error.
pub fn evaluate_dataset<S: MapSource + ?Sized>(source: &S, manifest: &Manifest, cfg: &EvalConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    let results: Vec<_> = manifest
        .entries
        .par_iter()
        .map(|e| (e.stem(), evaluate_entry(source, e, cfg)))
        .collect();
    let mut evals = Vec::new();
    let mut skipped = Vec::new();
    for (stem, r) in results {
        match r {
            Ok(e) => evals.push(e),
            Err(e) => {
                log::warn!("skipping {stem}: {e}");
                skipped.push((stem, e.to_string()));
            }
        }
    }
    MetricsReport::from_images(evals, skipped)
}

/// Writes `text` to `path`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::write_image;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gray(w: usize, h: usize, data: Vec<u8>) -> ImageBuffer {
        ImageBuffer::new(w, h, 1, data).unwrap()
    }

    /// Writes masks `m<i>.pgm` and predictions `pred/m<i>.pgm`; images are never read.
    fn fixture(dir: &Path, pairs: &[(ImageBuffer, ImageBuffer)]) -> Manifest {
        std::fs::create_dir_all(dir.join("pred")).unwrap();
        let mut text = String::new();
        for (i, (pred, gt)) in pairs.iter().enumerate() {
            write_image(gt, &dir.join(format!("m{i}.pgm"))).unwrap();
            write_image(pred, &dir.join(format!("pred/m{i}.pgm"))).unwrap();
            writeln!(text, "m{i}.ppm\tm{i}.pgm").unwrap();
        }
        Manifest::parse(&text, dir).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(EvalConfig::default().validate().is_ok());
        assert_eq!(EvalConfig::default().beta_squared, 0.09);
        for (bad, field) in [
            (EvalConfig { threshold: 1.5, ..Default::default() }, "threshold"),
            (EvalConfig { beta_squared: 0.0, ..Default::default() }, "beta_squared"),
            (EvalConfig { pr_thresholds: 1, ..Default::default() }, "pr_thresholds"),
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config { field: f, .. }) if f == field));
        }
    }

    #[test]
    fn perfect_prediction_averages() {
        let dir = tempfile::tempdir().unwrap();
        let g = gray(3, 2, vec![0, 255, 255, 0, 0, 255]);
        let m = fixture(dir.path(), &[(g.clone(), g)]);
        let r = evaluate_dataset(&PredictionDir::new(dir.path().join("pred")), &m, &EvalConfig::default()).unwrap();
        let a = &r.average;
        assert_eq!((a.precision, a.recall, a.f_measure, a.mae), (1.0, 1.0, 1.0, 0.0));
        assert!(r.skipped.is_empty());
        assert_eq!(r.to_csv().lines().last().unwrap(), "__average__,1.000000,1.000000,1.000000,0.000000");
    }

    #[test]
    fn mae_is_averaged_per_image() {
        // 51 = 0.2 · 255, 102 = 0.4 · 255
        let dir = tempfile::tempdir().unwrap();
        let zero = gray(2, 2, vec![0; 4]);
        let m = fixture(dir.path(), &[(gray(2, 2, vec![51; 4]), zero.clone()), (gray(2, 2, vec![102; 4]), zero)]);
        let r = evaluate_dataset(&PredictionDir::new(dir.path().join("pred")), &m, &EvalConfig::default()).unwrap();
        assert!((r.average.mae - 0.3).abs() < 1e-7);
    }

    #[test]
    fn missing_and_mismatched_maps_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let g = gray(2, 2, vec![255, 0, 0, 0]);
        let m = fixture(dir.path(), &[(g.clone(), g.clone()), (gray(1, 1, vec![0]), g.clone()), (g.clone(), g)]);
        std::fs::remove_file(dir.path().join("pred/m2.pgm")).unwrap();
        let r = evaluate_dataset(&PredictionDir::new(dir.path().join("pred")), &m, &EvalConfig::default()).unwrap();
        assert_eq!(r.images.len(), 1);
        let names: Vec<&str> = r.skipped.iter().map(|s| s.0.as_str()).collect();
        assert_eq!(names, ["m1", "m2"]);
        let none = PredictionDir::new(dir.path().join("nowhere"));
        assert!(matches!(evaluate_dataset(&none, &m, &EvalConfig::default()), Err(Error::Usage(_))));
    }

    #[test]
    fn ten_random_pairs_match_recount() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pairs: Vec<_> = (0..10)
            .map(|_| {
                let s = gray(16, 16, (0..256).map(|_| rng.gen()).collect());
                let g = gray(16, 16, (0..256).map(|_| if rng.gen_bool(0.3) { 255 } else { 0 }).collect());
                (s, g)
            })
            .collect();
        let m = fixture(dir.path(), &pairs);
        let cfg = EvalConfig { pr_thresholds: 17, ..Default::default() };
        let r = evaluate_dataset(&PredictionDir::new(dir.path().join("pred")), &m, &cfg).unwrap();

        let (mut sp, mut sr, mut sf, mut sm) = (0.0, 0.0, 0.0, 0.0);
        let mut curve = vec![(0.0, 0.0); 17];
        for (i, (s, g)) in pairs.iter().enumerate() {
            let sv: Vec<f64> = s.data.iter().map(|&b| (b as f32 / 255.0) as f64).collect();
            let gv: Vec<bool> = g.data.iter().map(|&b| b == 255).collect();
            let score = |t: f64| {
                let hits = (0..256).filter(|&k| sv[k] > t && gv[k]).count() as f64;
                let pred = (0..256).filter(|&k| sv[k] > t).count() as f64;
                let act = gv.iter().filter(|&&b| b).count() as f64;
                (hits / pred, hits / act)
            };
            let (p, rc) = score(0.5);
            let f = 1.09 * p * rc / (0.09 * p + rc);
            let e = (0..256).map(|k| (sv[k] - gv[k] as u8 as f64).abs()).sum::<f64>() / 256.0;
            let row = &r.images[i];
            assert_eq!(row.image, format!("m{i}"));
            assert!((row.precision - p).abs() < 1e-12 && (row.recall - rc).abs() < 1e-12);
            assert!((row.f_measure - f).abs() < 1e-12 && (row.mae - e).abs() < 1e-12);
            sp += p;
            sr += rc;
            sf += f;
            sm += e;
            for (k, c) in curve.iter_mut().enumerate().take(16) {
                let (p, rc) = score(k as f64 / 16.0);
                c.0 += p;
                c.1 += rc;
            }
        }
        let a = &r.average;
        for (got, want) in [(a.precision, sp), (a.recall, sr), (a.f_measure, sf), (a.mae, sm)] {
            assert!((got - want / 10.0).abs() < 1e-12);
        }
        for (k, c) in curve.iter().enumerate().take(16) {
            assert!((r.pr_curve[k].precision - c.0 / 10.0).abs() < 1e-12);
            assert!((r.pr_curve[k].recall - c.1 / 10.0).abs() < 1e-12);
        }
        // threshold 1: empty prediction against a non-empty mask
        assert_eq!((r.pr_curve[16].precision, r.pr_curve[16].recall), (0.0, 0.0));
        assert_eq!(r.pr_csv().lines().next(), Some("threshold,precision,recall"));
        assert_eq!(r.to_csv().lines().count(), 12);
    }
}
