//! Repeated-run reports, convergence studies, figure data and the
//! regression corrector used as a low-dimensional oracle.

mod convergence;
mod figure;
mod regression;
mod report;
pub mod stats;

pub use convergence::{convergence_study, synthetic_slope, ConvergenceConfig, ConvergenceEntry, ConvergenceReport};
pub use figure::{figure_export, FigureData};
pub use regression::{regression_corrector_solve, RegressionConfig, RegressionSolution, StepCoefficients};
pub use report::{
    bpath_seed, run_report, run_seed, sample_bpath, Corrector, QuietReport, ReportConfig, ReportObserver, ReportRow,
    RunCell, RunReport, Solved, CSV_HEADER,
};
