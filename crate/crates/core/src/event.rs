//! DVS event data model.
//!
//! An event is the quadruple `(t, x, y, polarity)` emitted by a single pixel
//! when its log-brightness change crosses the contrast threshold. Timestamps
//! are integer microseconds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sign of the brightness change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    Negative,
    Positive,
}

impl Polarity {
    /// On-disk encoding: 1 = positive, 0 = negative.
    pub fn to_bit(self) -> u8 {
        match self {
            Polarity::Negative => 0,
            Polarity::Positive => 1,
        }
    }

    pub fn from_bit(bit: u8) -> Option<Self> {
        match bit {
            0 => Some(Polarity::Negative),
            1 => Some(Polarity::Positive),
            _ => None,
        }
    }
}

/// A single brightness-change record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Event {
    /// Timestamp in microseconds.
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub polarity: Polarity,
}

impl Event {
    pub fn new(t: u64, x: u16, y: u16, polarity: Polarity) -> Self {
        Event { t, x, y, polarity }
    }

    pub fn positive(t: u64, x: u16, y: u16) -> Self {
        Event::new(t, x, y, Polarity::Positive)
    }

    pub fn negative(t: u64, x: u16, y: u16) -> Self {
        Event::new(t, x, y, Polarity::Negative)
    }

    pub fn is_positive(&self) -> bool {
        self.polarity == Polarity::Positive
    }
}

/// Sensor resolution in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SensorGeometry {
    pub width: u16,
    pub height: u16,
}

impl Default for SensorGeometry {
    /// 1280×720, the HD sensor of the reference stand.
    fn default() -> Self {
        SensorGeometry {
            width: 1280,
            height: 720,
        }
    }
}

impl SensorGeometry {
    pub fn new(width: u16, height: u16) -> Result<Self, EventError> {
        if width == 0 || height == 0 {
            return Err(EventError::Geometry { width, height });
        }
        Ok(SensorGeometry { width, height })
    }

    pub fn contains(&self, x: u16, y: u16) -> bool {
        x < self.width && y < self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Row-major linear index of a pixel.
    #[inline]
    pub fn index(&self, x: u16, y: u16) -> usize {
        y as usize * self.width as usize + x as usize
    }
}

#[derive(Debug, Error)]
pub enum EventError {
    #[error("invalid sensor geometry {width}x{height}")]
    Geometry { width: u16, height: u16 },
    #[error("parse error at {location}: {message}")]
    Parse { location: Location, message: String },
    #[error("event {index} at ({x},{y}) outside {width}x{height} sensor")]
    Bounds {
        index: u64,
        x: u64,
        y: u64,
        width: u16,
        height: u16,
    },
    #[error("event {index} timestamp {t} precedes previous timestamp {prev}")]
    Ordering { index: u64, prev: u64, t: u64 },
    #[error("binary header: {0}")]
    Header(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Where in the input a parse error happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    /// 1-based CSV line.
    Line(u64),
    /// Byte offset into a binary file.
    Offset(u64),
}

impl std::fmt::Display for Location {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Location::Line(n) => write!(f, "line {n}"),
            Location::Offset(n) => write!(f, "byte offset {n}"),
        }
    }
}

/// Incremental checker for the stream invariants: in-bounds coordinates and
/// non-decreasing timestamps.
#[derive(Debug, Clone)]
pub struct StreamValidator {
    geometry: SensorGeometry,
    last_t: Option<u64>,
    index: u64,
}

impl StreamValidator {
    pub fn new(geometry: SensorGeometry) -> Self {
        StreamValidator {
            geometry,
            last_t: None,
            index: 0,
        }
    }

    /// Checks raw (possibly out-of-range) coordinates before they are
    /// narrowed into an [`Event`].
    pub fn check_raw(&mut self, t: u64, x: u64, y: u64) -> Result<(), EventError> {
        let index = self.index;
        if x >= self.geometry.width as u64 || y >= self.geometry.height as u64 {
            return Err(EventError::Bounds {
                index,
                x,
                y,
                width: self.geometry.width,
                height: self.geometry.height,
            });
        }
        if let Some(prev) = self.last_t {
            if t < prev {
                return Err(EventError::Ordering { index, prev, t });
            }
        }
        self.last_t = Some(t);
        self.index += 1;
        Ok(())
    }

    pub fn check(&mut self, event: &Event) -> Result<(), EventError> {
        self.check_raw(event.t, event.x as u64, event.y as u64)
    }
}

/// A validated, timestamp-ordered sequence of events on a fixed sensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    geometry: SensorGeometry,
    events: Vec<Event>,
}

impl EventStream {
    pub fn new(geometry: SensorGeometry, events: Vec<Event>) -> Result<Self, EventError> {
        let mut validator = StreamValidator::new(geometry);
        for e in &events {
            validator.check(e)?;
        }
        Ok(EventStream { geometry, events })
    }

    pub fn empty(geometry: SensorGeometry) -> Self {
        EventStream {
            geometry,
            events: Vec::new(),
        }
    }

    /// Builds a stream from events already known to satisfy the invariants,
    /// e.g. a subsequence of a validated stream.
    pub(crate) fn from_valid(geometry: SensorGeometry, events: Vec<Event>) -> Self {
        EventStream { geometry, events }
    }

    pub fn geometry(&self) -> SensorGeometry {
        self.geometry
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polarity_bits() {
        assert_eq!(Polarity::Positive.to_bit(), 1);
        assert_eq!(Polarity::Negative.to_bit(), 0);
        assert_eq!(Polarity::from_bit(1), Some(Polarity::Positive));
        assert_eq!(Polarity::from_bit(2), None);
    }

    #[test]
    fn stream_rejects_out_of_bounds() {
        let g = SensorGeometry::new(4, 4).unwrap();
        let err = EventStream::new(g, vec![Event::positive(0, 4, 0)]).unwrap_err();
        assert!(matches!(err, EventError::Bounds { index: 0, x: 4, .. }));
    }

    #[test]
    fn stream_rejects_time_regression_but_allows_ties() {
        let g = SensorGeometry::default();
        let ok = EventStream::new(
            g,
            vec![Event::positive(5, 0, 0), Event::negative(5, 1, 0)],
        );
        assert!(ok.is_ok());
        let err = EventStream::new(
            g,
            vec![Event::positive(10, 0, 0), Event::negative(5, 0, 0)],
        )
        .unwrap_err();
        assert!(matches!(err, EventError::Ordering { index: 1, prev: 10, t: 5 }));
    }

    #[test]
    fn zero_geometry_rejected() {
        assert!(SensorGeometry::new(0, 10).is_err());
        assert_eq!(SensorGeometry::default().pixel_count(), 1280 * 720);
    }
}
