//! Experiment harness: data ingestion, momentum-GD training with divergence
//! detection, and phase-diagram sweeps over (scale, learning-rate) grids.

mod dataset;
mod svg;
mod sweep;
mod train;

pub use dataset::{
    load_idx, mnist_pair, synthetic_gaussian, synthetic_pair, Dataset, NormStats,
};
pub use svg::{emit_heatmap, heatmap_svg};
pub use sweep::{
    baseline_sweep, grid_csv, largest_stable_log_eta, PhaseCell, PhaseGrid, SweepConfig,
};
pub use sweep::phase_sweep;
pub use train::{momentum_quadratic_diverges, train, BatchMode, RunOutcome, TrainConfig};
