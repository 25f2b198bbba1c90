//! Experiment drivers: closed-loop regulation, fixed-count batches and plain
//! open-loop recordings.

use std::io::{self, Write};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::scene::{GrainRecord, GrainScene, SceneParams};
use crate::control::{
    compute_error, to_actuation, FlowSetpoint, PidController, PidGains, SafetyMonitor, DEFAULT_ACTUATION_SCALE,
};
use crate::event::Event;
use crate::pipeline::{CountingPipeline, PipelineParams, US_PER_SECOND};
use crate::report::{ControlTick, ParamsEcho, RunReport};

#[derive(Debug, Error)]
#[error("invalid parameters: {0}")]
pub struct SimError(pub String);

impl From<String> for SimError {
    fn from(s: String) -> Self {
        SimError(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlParams {
    pub gains: PidGains,
    /// Control value to on-fraction gain.
    pub actuation_scale: f64,
    pub congestion_window_s: usize,
    pub min_expected_fraction: f64,
    pub duty_threshold: f64,
}

impl Default for ControlParams {
    fn default() -> Self {
        let m = SafetyMonitor::default();
        ControlParams {
            gains: PidGains::default(),
            actuation_scale: DEFAULT_ACTUATION_SCALE,
            congestion_window_s: m.congestion_window_s,
            min_expected_fraction: m.min_expected_fraction,
            duty_threshold: m.duty_threshold,
        }
    }
}

impl ControlParams {
    fn monitor(&self) -> SafetyMonitor {
        let mut m = SafetyMonitor::new(self.congestion_window_s);
        m.min_expected_fraction = self.min_expected_fraction;
        m.duty_threshold = self.duty_threshold;
        m
    }

    pub fn validate(&self) -> Result<(), String> {
        let g = self.gains;
        if ![g.kp, g.ki, g.kd, self.actuation_scale].iter().all(|v| v.is_finite()) {
            return Err("controller gains must be finite".into());
        }
        if self.actuation_scale <= 0.0 {
            return Err("actuation scale must be positive".into());
        }
        Ok(())
    }
}

/// A finished simulated run: the report plus the grain-by-grain truth log
/// (grains that passed the reference row).
#[derive(Debug, Clone, PartialEq)]
pub struct SimRun {
    pub report: RunReport,
    pub ground_truth: Vec<GrainRecord>,
}

fn truth_log(scene: &GrainScene) -> Vec<GrainRecord> {
    scene.records().iter().filter(|r| r.reference_t_us.is_some()).copied().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopConfig {
    pub scene: SceneParams,
    pub pipeline: PipelineParams,
    pub control: ControlParams,
    pub setpoint_per_min: f64,
    pub duration_s: u64,
}

/// Runs the stand under PID control, one controller tick per simulated
/// second. The feeder starts idle; the first tick sets the first duty.
/// A safety trip ends the run at that tick.
///
/// `observer` sees every micro-step's events before the pipeline does.
pub fn run_closed_loop(cfg: &ClosedLoopConfig, mut observer: impl FnMut(&[Event])) -> Result<SimRun, SimError> {
    let setpoint = FlowSetpoint::new(cfg.setpoint_per_min)?;
    cfg.control.validate()?;
    cfg.pipeline.validate(cfg.scene.geometry)?;
    let mut scene = GrainScene::new(cfg.scene.clone())?;
    let mut pipeline = CountingPipeline::new(cfg.scene.geometry, cfg.pipeline.clone())?;
    let mut pid = PidController::new(cfg.control.gains);
    let mut monitor = cfg.control.monitor();

    let started = Instant::now();
    let steps = cfg.scene.steps_per_second();
    let mut buf = Vec::new();
    let mut on = 0.0;
    let mut counts: Vec<u64> = Vec::new();
    let mut duties: Vec<f64> = Vec::new();
    let mut ticks = Vec::new();
    let mut tripped_at = None;
    let mut elapsed = 0;

    for n in 1..=cfg.duration_s {
        for _ in 0..steps {
            scene.step(on, &mut buf);
            observer(&buf);
            for e in &buf {
                pipeline.push(e);
            }
            buf.clear();
        }
        pipeline.advance_to(n * US_PER_SECOND);
        elapsed = n;

        let total = pipeline.total();
        counts.push(total - counts.iter().sum::<u64>());
        duties.push(on);
        let error = compute_error(setpoint, total, n);
        let u = pid.step(error);
        let tripped = monitor.check(&counts, &duties, setpoint);
        let cmd = monitor.gate(to_actuation(u, cfg.control.actuation_scale));
        on = cmd.on_fraction();
        ticks.push(ControlTick { second: n, counted: total, error, u, on_fraction: on, tripped });
        if tripped {
            tripped_at = Some(n);
            break;
        }
    }

    let outcome = pipeline.finish();
    let echo = ParamsEcho {
        scene: Some(cfg.scene.clone()),
        control: Some(cfg.control.clone()),
        setpoint_per_min: Some(cfg.setpoint_per_min),
        ..ParamsEcho::pipeline_only(cfg.pipeline.clone())
    };
    let mut report = RunReport::from_outcome(outcome, echo, elapsed as f64, started.elapsed().as_secs_f64());
    report.ground_truth = Some(scene.truth_count());
    report.expected = Some(setpoint.expected(elapsed as f64));
    report.control = ticks;
    report.safety_tripped_at_s = tripped_at;
    Ok(SimRun { report, ground_truth: truth_log(&scene) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedCountConfig {
    pub scene: SceneParams,
    pub pipeline: PipelineParams,
    pub on_fraction: f64,
    pub stop_after: u64,
    /// Gives up feeding after this much simulated time.
    pub max_duration_s: f64,
}

/// Feeds at a constant duty until the pipeline has counted `stop_after`
/// grains, then switches the feeder off and lets the grains already
/// released finish falling. Ground truth is every grain that passed the
/// reference row, including those still falling when the stop came.
pub fn run_fixed_count(cfg: &FixedCountConfig, mut observer: impl FnMut(&[Event])) -> Result<SimRun, SimError> {
    if cfg.stop_after == 0 {
        return Err(SimError("stop_after must be at least 1".into()));
    }
    if !(cfg.on_fraction > 0.0 && cfg.on_fraction <= 1.0) {
        return Err(SimError(format!("on-fraction must be in (0, 1], got {}", cfg.on_fraction)));
    }
    cfg.pipeline.validate(cfg.scene.geometry)?;
    let mut scene = GrainScene::new(cfg.scene.clone())?;
    let mut pipeline = CountingPipeline::new(cfg.scene.geometry, cfg.pipeline.clone())?;
    let limit_us = (cfg.max_duration_s.max(0.0) * US_PER_SECOND as f64) as u64;

    let started = Instant::now();
    let mut buf = Vec::new();
    let mut feeding = true;
    loop {
        scene.step(if feeding { cfg.on_fraction } else { 0.0 }, &mut buf);
        observer(&buf);
        for e in &buf {
            pipeline.push(e);
        }
        buf.clear();
        pipeline.advance_to(scene.now_us());
        if feeding && (pipeline.total() >= cfg.stop_after || scene.now_us() >= limit_us) {
            feeding = false;
        }
        if !feeding && scene.in_flight() == 0 {
            break;
        }
    }

    let outcome = pipeline.finish();
    let echo = ParamsEcho {
        scene: Some(cfg.scene.clone()),
        on_fraction: Some(cfg.on_fraction),
        stop_after: Some(cfg.stop_after),
        ..ParamsEcho::pipeline_only(cfg.pipeline.clone())
    };
    let duration = scene.now_us() as f64 / US_PER_SECOND as f64;
    let mut report = RunReport::from_outcome(outcome, echo, duration, started.elapsed().as_secs_f64());
    report.ground_truth = Some(scene.truth_count());
    Ok(SimRun { report, ground_truth: truth_log(&scene) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingConfig {
    pub scene: SceneParams,
    pub on_fraction: f64,
    pub duration_s: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub truth_count: u64,
    /// Grains that passed the reference row, by id.
    pub ground_truth: Vec<GrainRecord>,
    pub events: u64,
    pub duration_s: u64,
}

/// Open-loop recording at a constant duty. Events go only to `observer`.
pub fn record(cfg: &RecordingConfig, mut observer: impl FnMut(&[Event])) -> Result<Recording, SimError> {
    if !(0.0..=1.0).contains(&cfg.on_fraction) {
        return Err(SimError(format!("on-fraction must be in [0, 1], got {}", cfg.on_fraction)));
    }
    let mut scene = GrainScene::new(cfg.scene.clone())?;
    let end = cfg.duration_s * US_PER_SECOND;
    let mut buf = Vec::new();
    let mut events = 0u64;
    while scene.now_us() < end {
        scene.step(cfg.on_fraction, &mut buf);
        events += buf.len() as u64;
        observer(&buf);
        buf.clear();
    }
    Ok(Recording {
        truth_count: scene.truth_count(),
        ground_truth: truth_log(&scene),
        events,
        duration_s: cfg.duration_s,
    })
}

/// `grain_id,spawn_t_us,exit_t_us`; the exit column is empty for grains
/// still in view when the recording ended.
pub fn write_ground_truth_csv<W: Write>(records: &[GrainRecord], mut sink: W) -> io::Result<()> {
    writeln!(sink, "grain_id,spawn_t_us,exit_t_us")?;
    for r in records {
        match r.exit_t_us {
            Some(exit) => writeln!(sink, "{},{},{}", r.id, r.spawn_t_us, exit)?,
            None => writeln!(sink, "{},{},", r.id, r.spawn_t_us)?,
        }
    }
    Ok(())
}
