//! End-to-end counting: activity filter → polarity filter → frames →
//! detection → tracking/counting, plus per-second tallies.
//!
//! The same three stages back both the sequential [`CountingPipeline`] and
//! the threaded [`count_concurrent`]; the threaded variant only moves stage
//! boundaries onto bounded channels, so both produce identical outcomes.

use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::thread;

use serde::{Deserialize, Serialize};

use crate::detect::{BoundingBox, DetectionParams, Detector};
use crate::event::{Event, Polarity, SensorGeometry};
use crate::filter::{ActivityFilter, ActivityFilterParams};
use crate::frame::{AccumulationParams, BinaryFrame, FrameBuilder};
use crate::report::SecondRecord;
use crate::track::{CountLines, Tracker, TrackerParams};

pub const US_PER_SECOND: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineParams {
    /// `None` disables the activity filter.
    pub activity: Option<ActivityFilterParams>,
    pub accumulation: AccumulationParams,
    pub detection: DetectionParams,
    pub tracker: TrackerParams,
    /// Count-line rows; `None` places them at 40/50/60% of the height.
    pub lines: Option<[u32; 3]>,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            activity: Some(ActivityFilterParams::default()),
            accumulation: AccumulationParams::default(),
            detection: DetectionParams::default(),
            tracker: TrackerParams::default(),
            lines: None,
        }
    }
}

impl PipelineParams {
    pub fn validate(&self, geometry: SensorGeometry) -> Result<(), String> {
        if let Some(a) = &self.activity {
            a.validate()?;
        }
        self.accumulation.validate()?;
        self.detection.validate()?;
        self.tracker.validate()?;
        self.count_lines(geometry).map(|_| ())
    }

    pub fn count_lines(&self, geometry: SensorGeometry) -> Result<CountLines, String> {
        let rows = self.lines.unwrap_or_else(|| CountLines::default_rows(geometry.height));
        CountLines::new(rows, geometry.height)
    }
}

/// What a counting run produced; identical across execution modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountOutcome {
    pub total: u64,
    pub per_line: [u64; 3],
    pub per_second: Vec<SecondRecord>,
    pub events_in: u64,
    pub events_kept: u64,
    pub frames: u64,
}

/// Stage 1: event-level filtering.
#[derive(Debug)]
struct FilterStage {
    activity: Option<ActivityFilter>,
    events_in: u64,
    events_kept: u64,
}

impl FilterStage {
    fn new(geometry: SensorGeometry, params: &PipelineParams) -> Self {
        FilterStage {
            activity: params.activity.map(|p| ActivityFilter::new(geometry, p)),
            events_in: 0,
            events_kept: 0,
        }
    }

    /// The activity filter sees both polarities; only positive events pass on.
    #[inline]
    fn accept(&mut self, e: &Event) -> bool {
        self.events_in += 1;
        let active = self.activity.as_mut().is_none_or(|f| f.accept(e));
        let keep = active && e.polarity == Polarity::Positive;
        self.events_kept += keep as u64;
        keep
    }
}

/// Boxes found on one frame.
#[derive(Debug, Clone, PartialEq)]
struct FrameBoxes {
    index: u64,
    window_end: u64,
    boxes: Vec<BoundingBox>,
}

/// Stage 2: accumulation and blob detection.
#[derive(Debug)]
struct FrameStage {
    builder: FrameBuilder,
    detector: Detector,
}

impl FrameStage {
    fn new(geometry: SensorGeometry, params: &PipelineParams) -> Self {
        FrameStage {
            builder: FrameBuilder::new(geometry, params.accumulation),
            detector: Detector::new(geometry, params.detection),
        }
    }

    fn detect(detector: &mut Detector, frame: &BinaryFrame) -> FrameBoxes {
        FrameBoxes {
            index: frame.index,
            window_end: frame.window_end,
            boxes: detector.detect(frame),
        }
    }

    fn push(&mut self, e: &Event, out: &mut impl FnMut(FrameBoxes)) {
        let detector = &mut self.detector;
        self.builder.push(e, &mut |f| out(Self::detect(detector, f)));
    }

    fn advance_to(&mut self, t: u64, out: &mut impl FnMut(FrameBoxes)) {
        let detector = &mut self.detector;
        self.builder.advance_to(t, &mut |f| out(Self::detect(detector, f)));
    }

    fn finish(&mut self, out: &mut impl FnMut(FrameBoxes)) {
        let detector = &mut self.detector;
        self.builder.finish(&mut |f| out(Self::detect(detector, f)));
    }
}

/// Stage 3: tracking, counting and per-second bookkeeping.
#[derive(Debug)]
struct CountStage {
    tracker: Tracker,
    series: Vec<SecondRecord>,
    frames: u64,
}

impl CountStage {
    fn new(lines: CountLines, params: &PipelineParams) -> Self {
        CountStage {
            tracker: Tracker::new(params.tracker, lines),
            series: Vec::new(),
            frames: 0,
        }
    }

    fn consume(&mut self, fb: &FrameBoxes) {
        self.tracker.step(fb.index, &fb.boxes);
        self.frames += 1;
        let total = self.tracker.count();
        // Second `s` (1-based) holds the frames ending in ((s-1)·1e6, s·1e6].
        let second = fb.window_end.div_ceil(US_PER_SECOND).max(1);
        while (self.series.len() as u64) < second {
            let prev = self.series.last().map_or(0, |r| r.count_total);
            self.series.push(SecondRecord {
                second: self.series.len() as u64 + 1,
                count_delta: 0,
                count_total: prev,
            });
        }
        let n = self.series.len();
        let before = if n >= 2 { self.series[n - 2].count_total } else { 0 };
        let last = &mut self.series[n - 1];
        last.count_total = total;
        last.count_delta = total - before;
    }

    fn total(&self) -> u64 {
        self.tracker.count()
    }
}

/// Sequential, push-driven counting pipeline.
#[derive(Debug)]
pub struct CountingPipeline {
    geometry: SensorGeometry,
    params: PipelineParams,
    filter: FilterStage,
    frames: FrameStage,
    count: CountStage,
}

impl CountingPipeline {
    pub fn new(geometry: SensorGeometry, params: PipelineParams) -> Result<Self, String> {
        params.validate(geometry)?;
        let lines = params.count_lines(geometry)?;
        Ok(CountingPipeline {
            geometry,
            filter: FilterStage::new(geometry, &params),
            frames: FrameStage::new(geometry, &params),
            count: CountStage::new(lines, &params),
            params,
        })
    }

    pub fn geometry(&self) -> SensorGeometry {
        self.geometry
    }

    pub fn params(&self) -> &PipelineParams {
        &self.params
    }

    /// Feeds one event. Events must be timestamp-ordered and in bounds.
    pub fn push(&mut self, e: &Event) {
        if self.filter.accept(e) {
            let count = &mut self.count;
            self.frames.push(e, &mut |fb| count.consume(&fb));
        }
    }

    /// Processes every frame that ends at or before `t`. The caller promises
    /// no further events earlier than `t`.
    pub fn advance_to(&mut self, t: u64) {
        let count = &mut self.count;
        self.frames.advance_to(t, &mut |fb| count.consume(&fb));
    }

    /// Current count (max over the three lines).
    pub fn total(&self) -> u64 {
        self.count.total()
    }

    pub fn per_line(&self) -> [u64; 3] {
        self.count.tracker.lines().per_line_counts()
    }

    pub fn per_second(&self) -> &[SecondRecord] {
        &self.count.series
    }

    pub fn events_in(&self) -> u64 {
        self.filter.events_in
    }

    /// Flushes the window holding the last event and returns the outcome.
    pub fn finish(mut self) -> CountOutcome {
        let count = &mut self.count;
        self.frames.finish(&mut |fb| count.consume(&fb));
        CountOutcome {
            total: self.count.total(),
            per_line: self.count.tracker.lines().per_line_counts(),
            per_second: self.count.series,
            events_in: self.filter.events_in,
            events_kept: self.filter.events_kept,
            frames: self.count.frames,
        }
    }
}

/// Runs the pipeline over a fallible event source on the calling thread.
pub fn count_sequential<I, E>(events: I, geometry: SensorGeometry, params: PipelineParams) -> Result<CountOutcome, CountError<E>>
where
    I: IntoIterator<Item = Result<Event, E>>,
{
    let mut p = CountingPipeline::new(geometry, params).map_err(CountError::Params)?;
    for e in events {
        p.push(&e.map_err(CountError::Source)?);
    }
    Ok(p.finish())
}

#[derive(Debug, thiserror::Error)]
pub enum CountError<E> {
    #[error("invalid pipeline parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Source(E),
}

const BATCH: usize = 4096;

/// Runs the three stages on separate threads joined by bounded channels of
/// `capacity` messages each. Stage order is preserved, so the outcome equals
/// [`count_sequential`] on the same input.
pub fn count_concurrent<I, E>(
    events: I,
    geometry: SensorGeometry,
    params: PipelineParams,
    capacity: usize,
) -> Result<CountOutcome, CountError<E>>
where
    I: IntoIterator<Item = Result<Event, E>>,
    I::IntoIter: Send,
    E: Send,
{
    params.validate(geometry).map_err(CountError::Params)?;
    let lines = params.count_lines(geometry).map_err(CountError::Params)?;
    let capacity = capacity.max(1);
    let events = events.into_iter();

    thread::scope(|scope| {
        let (event_tx, event_rx): (SyncSender<Vec<Event>>, Receiver<Vec<Event>>) = sync_channel(capacity);
        let (frame_tx, frame_rx) = sync_channel::<FrameBoxes>(capacity);

        let filter_params = params.clone();
        let filter = scope.spawn(move || -> Result<(u64, u64), E> {
            let mut stage = FilterStage::new(geometry, &filter_params);
            let mut batch = Vec::with_capacity(BATCH);
            for e in events {
                let e = e?;
                if stage.accept(&e) {
                    batch.push(e);
                    if batch.len() == BATCH {
                        let full = std::mem::replace(&mut batch, Vec::with_capacity(BATCH));
                        if event_tx.send(full).is_err() {
                            break;
                        }
                    }
                }
            }
            if !batch.is_empty() {
                let _ = event_tx.send(batch);
            }
            Ok((stage.events_in, stage.events_kept))
        });

        let frame_params = params.clone();
        let framer = scope.spawn(move || {
            let mut stage = FrameStage::new(geometry, &frame_params);
            let mut send = |fb: FrameBoxes| {
                let _ = frame_tx.send(fb);
            };
            for batch in event_rx {
                for e in &batch {
                    stage.push(e, &mut send);
                }
            }
            stage.finish(&mut send);
        });

        let mut count = CountStage::new(lines, &params);
        for fb in frame_rx {
            count.consume(&fb);
        }
        framer.join().expect("frame stage panicked");
        let (events_in, events_kept) = filter.join().expect("filter stage panicked").map_err(CountError::Source)?;

        Ok(CountOutcome {
            total: count.total(),
            per_line: count.tracker.lines().per_line_counts(),
            per_second: count.series,
            events_in,
            events_kept,
            frames: count.frames,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;

    fn ok(events: Vec<Event>) -> impl Iterator<Item = Result<Event, Infallible>> + Send {
        events.into_iter().map(Ok)
    }

    /// A 10×10 block sliding down 4 rows per frame, fully lit each frame.
    fn falling_block(geometry: SensorGeometry, top0: u16, frames: u64) -> Vec<Event> {
        let mut events = Vec::new();
        for k in 0..frames {
            let top = top0 + 4 * k as u16;
            for y in top..top + 10 {
                for x in 100..110u16 {
                    if y < geometry.height {
                        events.push(Event::positive(k * 2000 + 100, x, y));
                    }
                }
            }
        }
        events
    }

    fn no_filter() -> PipelineParams {
        PipelineParams {
            activity: None,
            ..PipelineParams::default()
        }
    }

    #[test]
    fn empty_input_counts_zero() {
        let out = count_sequential(ok(vec![]), SensorGeometry::default(), PipelineParams::default()).unwrap();
        assert_eq!(out.total, 0);
        assert!(out.per_second.is_empty());
        assert_eq!(out.frames, 0);
    }

    #[test]
    fn block_crossing_all_lines_counts_once() {
        let g = SensorGeometry::new(200, 100).unwrap();
        let params = PipelineParams {
            lines: Some([30, 50, 70]),
            ..no_filter()
        };
        let out = count_sequential(ok(falling_block(g, 0, 25)), g, params).unwrap();
        assert_eq!(out.per_line, [1, 1, 1]);
        assert_eq!(out.total, 1);
        assert_eq!(out.per_second.len(), 1);
        assert_eq!(out.per_second[0].count_total, 1);
    }

    #[test]
    fn per_second_rows_fill_gaps() {
        let g = SensorGeometry::new(200, 100).unwrap();
        let params = PipelineParams {
            lines: Some([30, 50, 70]),
            ..no_filter()
        };
        let mut events = falling_block(g, 0, 25);
        // Second block starts in the third second.
        events.extend(falling_block(g, 0, 25).into_iter().map(|mut e| {
            e.t += 2_500_000;
            e
        }));
        let out = count_sequential(ok(events), g, params).unwrap();
        let rows: Vec<_> = out.per_second.iter().map(|r| (r.second, r.count_delta, r.count_total)).collect();
        assert_eq!(rows, vec![(1, 1, 1), (2, 0, 1), (3, 1, 2)]);
        assert_eq!(out.per_second.iter().map(|r| r.count_delta).sum::<u64>(), out.total);
    }

    #[test]
    fn concurrent_matches_sequential() {
        let g = SensorGeometry::new(200, 100).unwrap();
        let params = PipelineParams {
            lines: Some([30, 50, 70]),
            ..PipelineParams::default()
        };
        let mut events = falling_block(g, 0, 25);
        events.extend(falling_block(g, 2, 25).into_iter().map(|mut e| {
            e.t += 80_000;
            e.x += 40;
            e
        }));
        events.sort_by_key(|e| e.t);
        let a = count_sequential(ok(events.clone()), g, params.clone()).unwrap();
        let b = count_concurrent(ok(events), g, params, 2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.total, 2);
    }

    #[test]
    fn source_errors_propagate() {
        let g = SensorGeometry::default();
        let src = vec![Ok(Event::positive(0, 0, 0)), Err("boom")];
        assert!(matches!(
            count_sequential(src.clone(), g, PipelineParams::default()),
            Err(CountError::Source("boom"))
        ));
        assert!(matches!(
            count_concurrent(src, g, PipelineParams::default(), 4),
            Err(CountError::Source("boom"))
        ));
    }

    #[test]
    fn bad_lines_rejected() {
        let params = PipelineParams {
            lines: Some([10, 10, 20]),
            ..PipelineParams::default()
        };
        assert!(CountingPipeline::new(SensorGeometry::default(), params).is_err());
    }
}
