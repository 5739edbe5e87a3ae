//! Metrics, the brightness-only baseline and the experiment harness.

pub mod baseline;
pub mod metrics;
pub mod protocol;
pub mod report;

pub use baseline::{brightness_only_baseline, demosaic_bilinear};
pub use metrics::{psnr, ssim};
pub use protocol::{
    ablate_direction, ablate_filter_size, baseline_row, log_linear_alpha2, run_protocol, score_model, Alpha2Mode,
    ModelKey, ModelZoo, Protocol, Recipe, TEST_EXPOSURES,
};
pub use report::{ImageScore, MetricReport, ReportRow};
