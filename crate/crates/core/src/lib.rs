//! Counting falling objects from event-camera streams, and regulating the
//! feeder that drops them.
//!
//! Events flow through [`filter`] → [`frame`] → [`detect`] → [`track`];
//! [`pipeline`] chains the stages, [`control`] closes the loop and [`sim`]
//! stands in for the hardware.

pub mod control;
pub mod detect;
pub mod event;
pub mod filter;
pub mod frame;
pub mod io;
pub mod pipeline;
pub mod report;
pub mod sim;
pub mod track;

pub use control::{ActuationCommand, FlowSetpoint, PidController, PidGains, SafetyMonitor};
pub use detect::{BoundingBox, Connectivity, DetectionParams};
pub use event::{Event, EventError, EventStream, Polarity, SensorGeometry};
pub use filter::ActivityFilterParams;
pub use frame::{AccumulationParams, BinaryFrame};
pub use io::EventFormat;
pub use pipeline::{CountOutcome, CountingPipeline, PipelineParams};
pub use report::{ControlTick, RunReport, SecondRecord};
pub use sim::{GrainScene, SceneParams};
pub use track::{CountLines, TrackerParams};
