//! Driver-behavior models for speed advisory systems.
//!
//! * [`scenario`]: route geometry, stops and signal timing.
//! * [`edm`]: the Enhanced Driver Model and its fixed-step integrator.
//! * [`synthdrive`]: synthetic human traces and windowed datasets.
//! * [`gacal`]: genetic-algorithm calibration of EDM parameters.
//! * [`seqnet`]: the LSTM encoder-decoder driver model.
//! * [`evalcmp`]: RMSE scoring and model comparison reports.

pub mod edm;
pub mod error;
pub mod evalcmp;
pub mod gacal;
pub mod scenario;
pub mod seqnet;
pub mod synthdrive;

pub use edm::{EdmParams, ReferenceProfile, SimConfig};
pub use error::{Error, Result};
pub use scenario::RouteMap;
pub use synthdrive::{DriveTrace, FeatureVector, NormStats, WindowConfig, WindowedDataset};
