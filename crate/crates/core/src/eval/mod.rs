pub mod cv;
pub mod folds;
pub mod metrics;

pub use cv::{run_cv, CVReport, CvConfig, FoldMetrics, GridCell, PredictionMode};
pub use folds::{make_folds, Fold, FoldSpec, SplitMode};
pub use metrics::{accuracy, auc, nll};
