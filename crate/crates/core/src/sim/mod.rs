//! Synthetic test stand and the experiment drivers built on it.

mod runs;
mod scene;

pub use runs::{
    record, run_closed_loop, run_fixed_count, write_ground_truth_csv, ClosedLoopConfig, ControlParams,
    FixedCountConfig, Recording, RecordingConfig, SimError, SimRun,
};
pub use scene::{Grain, GrainRecord, GrainScene, SceneParams};
