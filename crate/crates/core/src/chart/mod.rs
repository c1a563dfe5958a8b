//! Range-angle charting: LS, matched filter and ISTA solvers plus peak
//! detection.

pub mod detect;
pub mod grid;
pub mod solve;

pub use detect::{detect_targets, rss_db, rss_of_cell, Detection, DetectionParams};
pub use grid::{AngleAxis, ChartGrid, ChartGridConfig};
pub use solve::{
    coherent_integration, ista_chart, ista_from_integrated, ls_chart, matched_filter_chart, op_count_estimate,
    soft_threshold, ChartMethod, IstaParams, Lambda, OpCount, OpEstimate, RangeAngleChart, Window,
};
