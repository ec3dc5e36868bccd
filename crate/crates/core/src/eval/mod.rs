//! Evaluation metrics, macroscopic averaging, SRT fitting and reports.

pub mod macro_avg;
pub mod metrics;
pub mod psychometric;
pub mod report;

pub use macro_avg::{macro_average, KeywordObs, MacroPoint, DEFAULT_GROUP_SIZE};
pub use metrics::{accuracy, fishers_exact, kendall_tau, ncc, rmse};
pub use psychometric::{fit_psychometric, fit_straddling, PsychometricCurve};
pub use report::{build_report, AccuracyRow, MacroRow, Metrics, SignificanceRow, SrtRow};
