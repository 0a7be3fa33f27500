//! INS/DVL underwater navigation under limited DVL beam availability.
//!
//! The crate implements a 12-state error-state EKF with loosely- and
//! tightly-coupled DVL velocity updates, plus hybrid-neural variants that
//! regress two or three missing acoustic beams from past measurements with a
//! small 1-D convolutional network. A trajectory and sensor simulator provides
//! the data to exercise everything end to end.

pub mod dvl_geometry;
pub mod ekf;
pub mod error;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod regressor;
pub mod sim;
pub mod strapdown;

pub use dvl_geometry::{BeamGeometry, DvlCorruptor, DvlErrorModel, DvlSample};
pub use ekf::{ErrorState, FilterState, NoiseConfig, UpdateOutcome};
pub use error::{Error, Result};
pub use harness::{
    run_fusion, FilterConfig, FusionOutput, FusionStrategy, FusionStrategyKind, OutputRecord,
    UpdateKind,
};
pub use metrics::{vrmse, vrte, EvaluationReport, ReportRow};
pub use regressor::{MissingPattern, RegressorInput, RegressorModel, TrainConfig};
pub use sim::{
    simulate, ImuErrorModel, Leg, LegKind, OutageWindow, RunLog, ScenarioConfig, TrajectorySpec,
};
pub use strapdown::{ImuSample, NavState};
