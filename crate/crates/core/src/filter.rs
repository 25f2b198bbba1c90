//! Event-rate reduction ahead of frame building.
//!
//! Two selectors, both producing an in-order subsequence of their input:
//! a polarity filter and a background-activity filter that keeps an event
//! only when some earlier event landed in its spatial neighbourhood recently.

use serde::{Deserialize, Serialize};

use crate::event::{Event, EventStream, Polarity, SensorGeometry};

pub fn polarity_filter(stream: &EventStream, keep: Polarity) -> EventStream {
    let events = stream
        .events()
        .iter()
        .filter(|e| e.polarity == keep)
        .copied()
        .collect();
    EventStream::from_valid(stream.geometry(), events)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivityFilterParams {
    /// Chebyshev radius of the support neighbourhood, in pixels.
    pub radius: u16,
    /// How far back a supporting event may lie, in microseconds (inclusive).
    pub window_us: u64,
}

impl Default for ActivityFilterParams {
    fn default() -> Self {
        ActivityFilterParams {
            radius: 1,
            window_us: 5000,
        }
    }
}

impl ActivityFilterParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.window_us == 0 {
            return Err("activity filter window must be > 0".into());
        }
        Ok(())
    }
}

const NEVER: u64 = u64::MAX;

/// Timestamp-map background-activity filter.
///
/// Keeps one "last seen" timestamp per pixel. An event passes iff any pixel in
/// its `(2r+1)²` neighbourhood (itself included) saw an event at most
/// `window_us` earlier. Every input event updates the map, whether it passes
/// or not.
#[derive(Debug, Clone)]
pub struct ActivityFilter {
    params: ActivityFilterParams,
    geometry: SensorGeometry,
    last_seen: Vec<u64>,
}

impl ActivityFilter {
    pub fn new(geometry: SensorGeometry, params: ActivityFilterParams) -> Self {
        ActivityFilter {
            params,
            geometry,
            last_seen: vec![NEVER; geometry.pixel_count()],
        }
    }

    pub fn params(&self) -> ActivityFilterParams {
        self.params
    }

    /// Feeds one event; returns whether it survives. Events must arrive in
    /// non-decreasing timestamp order.
    pub fn accept(&mut self, e: &Event) -> bool {
        let r = self.params.radius as i32;
        let w = self.geometry.width as i32;
        let h = self.geometry.height as i32;
        let (ex, ey) = (e.x as i32, e.y as i32);
        let x0 = (ex - r).max(0) as usize;
        let x1 = (ex + r).min(w - 1) as usize;
        let y0 = (ey - r).max(0);
        let y1 = (ey + r).min(h - 1);
        // Stream order makes `t >= last` for every seen pixel, so only the
        // lower bound needs checking.
        let oldest = e.t.saturating_sub(self.params.window_us);
        let mut supported = false;
        'rows: for y in y0..=y1 {
            let row = y as usize * w as usize;
            for &last in &self.last_seen[row + x0..=row + x1] {
                if last != NEVER && last >= oldest {
                    supported = true;
                    break 'rows;
                }
            }
        }
        let idx = self.geometry.index(e.x, e.y);
        self.last_seen[idx] = e.t;
        supported
    }

    pub fn reset(&mut self) {
        self.last_seen.fill(NEVER);
    }
}

pub fn activity_filter(stream: &EventStream, params: ActivityFilterParams) -> EventStream {
    let mut filter = ActivityFilter::new(stream.geometry(), params);
    let events = stream
        .events()
        .iter()
        .filter(|e| filter.accept(e))
        .copied()
        .collect();
    EventStream::from_valid(stream.geometry(), events)
}
