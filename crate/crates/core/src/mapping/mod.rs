//! Mapping from measures to predicted intelligibility.

pub mod cv;
pub mod mlp;

pub use cv::{read_cv_rows, run_cv, write_cv_rows, CvPlan, CvResult, CvRow, Fold, MeanCi};
pub use mlp::{
    fit, fit_classifier, train_classifier, train_regressor, Dataset, MlpModel, Output, Standardization, TrainConfig, TrainReport,
    HIDDEN_UNITS, MODEL_SCHEMA_VERSION,
};
