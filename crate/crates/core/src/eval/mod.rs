//! Forecast and distribution metrics, the dense baseline, the ablation
//! harness and SVG renderings.

mod ablation;
mod dense;
mod jsd;
mod metrics;
pub mod svg;

pub use ablation::{
    dense_forecast_report, forecast_report, run_ablation, train_dense_model, train_model, AblationRow,
    AblationTable, Variant,
};
pub use dense::{train_dense, DenseModel};
pub use jsd::{jsd, jsd_histograms, BinSpec, JsdReport, SMOOTHING};
pub use metrics::{ade, evaluate, fde, onset_f1, placement_onsets, MetricReport, OnsetScore};
