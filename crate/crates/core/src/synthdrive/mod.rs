//! Synthetic human drivers and the sliding-window datasets built from their
//! traces.

mod human;
mod trace;
mod window;

pub use human::{sample_driver_params, simulate_human, NoiseConfig, ParamBounds};
pub use trace::{DriveTrace, FeatureVector, N_FEATURES, TRACE_HEADER};
pub use window::{
    denormalize, normalize, split_indices, window_dataset, NormStats, WindowConfig, WindowRef,
    WindowedDataset, N_OUTPUTS, OUTPUT_CHANNELS,
};
