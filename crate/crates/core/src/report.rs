//! Run reports and their CSV renderings.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::pipeline::{CountOutcome, PipelineParams};
use crate::sim::{ControlParams, SceneParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecondRecord {
    /// 1-based second index; covers frames ending in `((s-1)·1e6, s·1e6]` µs.
    pub second: u64,
    pub count_delta: u64,
    pub count_total: u64,
}

/// One controller tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlTick {
    pub second: u64,
    pub counted: u64,
    pub error: f64,
    pub u: f64,
    pub on_fraction: f64,
    pub tripped: bool,
}

/// Parameters a run was executed with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsEcho {
    pub pipeline: PipelineParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scene: Option<SceneParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub control: Option<ControlParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub setpoint_per_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub on_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop_after: Option<u64>,
}

impl ParamsEcho {
    pub fn pipeline_only(pipeline: PipelineParams) -> Self {
        ParamsEcho {
            pipeline,
            scene: None,
            control: None,
            setpoint_per_min: None,
            on_fraction: None,
            stop_after: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub pipeline_count: u64,
    pub per_line_counts: [u64; 3],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<u64>,
    /// Grains the setpoint called for over the run (closed loop only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expected: Option<f64>,
    pub duration_s: f64,
    pub per_second: Vec<SecondRecord>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub control: Vec<ControlTick>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub safety_tripped_at_s: Option<u64>,
    pub params: ParamsEcho,
    pub events_processed: u64,
    pub events_kept: u64,
    pub frames: u64,
    pub wall_clock_s: f64,
    pub throughput_events_per_s: f64,
}

impl RunReport {
    pub fn from_outcome(outcome: CountOutcome, params: ParamsEcho, duration_s: f64, wall_clock_s: f64) -> Self {
        RunReport {
            pipeline_count: outcome.total,
            per_line_counts: outcome.per_line,
            ground_truth: None,
            expected: None,
            duration_s,
            per_second: outcome.per_second,
            control: Vec::new(),
            safety_tripped_at_s: None,
            params,
            events_processed: outcome.events_in,
            events_kept: outcome.events_kept,
            frames: outcome.frames,
            wall_clock_s,
            throughput_events_per_s: throughput(outcome.events_in, wall_clock_s),
        }
    }

    /// Pipeline count minus ground truth, when truth is known.
    pub fn count_error(&self) -> Option<i64> {
        self.ground_truth.map(|t| self.pipeline_count as i64 - t as i64)
    }

    /// Copy with the wall-clock fields zeroed, for run-to-run comparison.
    pub fn without_timing(&self) -> RunReport {
        RunReport {
            wall_clock_s: 0.0,
            throughput_events_per_s: 0.0,
            ..self.clone()
        }
    }

    /// `second,count_delta,count_total`
    pub fn write_per_second_csv<W: Write>(&self, mut sink: W) -> io::Result<()> {
        writeln!(sink, "second,count_delta,count_total")?;
        for r in &self.per_second {
            writeln!(sink, "{},{},{}", r.second, r.count_delta, r.count_total)?;
        }
        Ok(())
    }

    /// `second,error,u,on_fraction,tripped`
    pub fn write_control_csv<W: Write>(&self, mut sink: W) -> io::Result<()> {
        writeln!(sink, "second,error,u,on_fraction,tripped")?;
        for t in &self.control {
            writeln!(sink, "{},{},{},{},{}", t.second, t.error, t.u, t.on_fraction, t.tripped as u8)?;
        }
        Ok(())
    }
}

pub fn throughput(events: u64, wall_clock_s: f64) -> f64 {
    if wall_clock_s > 0.0 {
        events as f64 / wall_clock_s
    } else {
        0.0
    }
}
