//! Binarization, precision/recall, F-measure, MAE, PR curves and dataset averages.

mod dataset;
mod metrics;

pub use dataset::{
    evaluate_dataset, evaluate_map, predict_image, write_text, EvalConfig, ImageEval, ImageMetrics, MapSource,
    MetricsReport, ModelSource, PredictionDir,
};
pub use metrics::{binarize, f_measure, mae, pr_curve, precision_recall, sweep_threshold, Counts, PrPoint};
