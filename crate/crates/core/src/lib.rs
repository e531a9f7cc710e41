//! Dynamic watermarking for networked control loops: plant and LQG loop,
//! keyed watermark channels, false data injection, windowed detectors,
//! closed-loop simulation and the closed-form analysis of the test statistics.

pub mod analysis;
pub mod attack;
pub mod detect;
pub mod doc;
pub mod error;
pub mod model;
pub mod numerics;
pub mod presets;
pub mod rng;
pub mod sim;
pub mod watermark;

pub use error::{Error, Result};

pub use attack::{AttackWindow, FdiaSpec};
pub use detect::DetectorConfig;
pub use doc::{LmiExportDoc, ModelDoc, Report, ScenarioDoc};
pub use model::{pendulum_preset, LoopGains, PlantModel};
pub use numerics::{Matrix, Vector};
pub use sim::{run_closed_loop, SafetyLimits, ScenarioConfig, Scheme, SimTrace, WatermarkConfig};
