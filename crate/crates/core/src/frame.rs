//! Fixed-period binary frame accumulation.
//!
//! Frame `k` covers `[k·period, (k+1)·period)`, aligned to `t = 0`. A pixel is
//! 255 when at least one positive event hit it inside the window and 0
//! otherwise. Every window up to the one holding the last event is
//! materialized, empty ones included, so frame index maps linearly to time.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::event::{Event, EventStream, SensorGeometry};

pub const PIXEL_ON: u8 = 255;
pub const PIXEL_OFF: u8 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccumulationParams {
    pub period_us: u64,
}

impl Default for AccumulationParams {
    /// 2 ms, i.e. 500 frames per second.
    fn default() -> Self {
        AccumulationParams { period_us: 2000 }
    }
}

impl AccumulationParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.period_us == 0 {
            return Err("accumulation period must be > 0".into());
        }
        Ok(())
    }

    pub fn window_of(&self, t: u64) -> u64 {
        t / self.period_us
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryFrame {
    geometry: SensorGeometry,
    pixels: Vec<u8>,
    /// Linear indices of the 255 pixels, ascending.
    lit: Vec<u32>,
    pub index: u64,
    pub window_start: u64,
    pub window_end: u64,
}

impl BinaryFrame {
    pub fn blank(geometry: SensorGeometry) -> Self {
        BinaryFrame {
            geometry,
            pixels: vec![PIXEL_OFF; geometry.pixel_count()],
            lit: Vec::new(),
            index: 0,
            window_start: 0,
            window_end: 0,
        }
    }

    /// Builds a frame from a row-major 0/255 (or boolean-ish) pixel buffer;
    /// any non-zero value is treated as lit.
    pub fn from_pixels(geometry: SensorGeometry, pixels: &[u8]) -> Self {
        assert_eq!(pixels.len(), geometry.pixel_count(), "pixel buffer size mismatch");
        let mut frame = BinaryFrame::blank(geometry);
        for (i, &v) in pixels.iter().enumerate() {
            if v != 0 {
                frame.pixels[i] = PIXEL_ON;
                frame.lit.push(i as u32);
            }
        }
        frame
    }

    pub fn geometry(&self) -> SensorGeometry {
        self.geometry
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: u16, y: u16) -> u8 {
        self.pixels[self.geometry.index(x, y)]
    }

    pub fn is_lit(&self, x: u16, y: u16) -> bool {
        self.get(x, y) == PIXEL_ON
    }

    pub fn lit_indices(&self) -> &[u32] {
        &self.lit
    }

    pub fn lit_count(&self) -> usize {
        self.lit.len()
    }

    pub fn set(&mut self, x: u16, y: u16) {
        let i = self.geometry.index(x, y);
        if self.pixels[i] == PIXEL_OFF {
            self.pixels[i] = PIXEL_ON;
            self.lit.push(i as u32);
        }
    }

    fn seal(&mut self) {
        self.lit.sort_unstable();
    }

    fn clear(&mut self) {
        for &i in &self.lit {
            self.pixels[i as usize] = PIXEL_OFF;
        }
        self.lit.clear();
    }

    /// Writes the frame as a binary PGM (P5) image.
    pub fn write_pgm<W: Write>(&self, mut sink: W) -> io::Result<()> {
        write!(sink, "P5\n{} {}\n255\n", self.geometry.width, self.geometry.height)?;
        sink.write_all(&self.pixels)
    }
}

/// Streaming accumulator. Frames are handed to a callback by reference and
/// the buffer is reused, so only lit pixels are touched per window.
#[derive(Debug)]
pub struct FrameBuilder {
    params: AccumulationParams,
    frame: BinaryFrame,
    /// Window currently being filled.
    current: u64,
    /// Window of the most recent event, if any.
    last_event_window: Option<u64>,
}

impl FrameBuilder {
    pub fn new(geometry: SensorGeometry, params: AccumulationParams) -> Self {
        let mut frame = BinaryFrame::blank(geometry);
        frame.window_end = params.period_us;
        FrameBuilder {
            params,
            frame,
            current: 0,
            last_event_window: None,
        }
    }

    pub fn params(&self) -> AccumulationParams {
        self.params
    }

    /// Index of the next frame to be emitted.
    pub fn next_index(&self) -> u64 {
        self.current
    }

    fn emit<F: FnMut(&BinaryFrame)>(&mut self, sink: &mut F) {
        let p = self.params.period_us;
        self.frame.index = self.current;
        self.frame.window_start = self.current * p;
        self.frame.window_end = (self.current + 1) * p;
        self.frame.seal();
        sink(&self.frame);
        self.frame.clear();
        self.current += 1;
    }

    /// Adds one event, first emitting every window that ends at or before it.
    /// Negative events are ignored. Events older than the current window are
    /// dropped; callers must feed timestamp-ordered input.
    pub fn push<F: FnMut(&BinaryFrame)>(&mut self, e: &Event, sink: &mut F) {
        let w = self.params.window_of(e.t);
        if w < self.current {
            debug_assert!(false, "event at t={} precedes the open window", e.t);
            return;
        }
        while self.current < w {
            self.emit(sink);
        }
        self.last_event_window = Some(w);
        if e.is_positive() {
            self.frame.set(e.x, e.y);
        }
    }

    /// Emits every frame whose window ends at or before `t`.
    pub fn advance_to<F: FnMut(&BinaryFrame)>(&mut self, t: u64, sink: &mut F) {
        while (self.current + 1) * self.params.period_us <= t {
            self.emit(sink);
        }
    }

    /// Emits the still-open window if it holds the last event seen.
    pub fn finish<F: FnMut(&BinaryFrame)>(&mut self, sink: &mut F) {
        if self.last_event_window == Some(self.current) {
            self.emit(sink);
        }
    }
}

/// Accumulates a whole stream into frames.
pub fn accumulate(stream: &EventStream, params: AccumulationParams) -> Vec<BinaryFrame> {
    let mut builder = FrameBuilder::new(stream.geometry(), params);
    let mut frames = Vec::new();
    let mut sink = |f: &BinaryFrame| frames.push(f.clone());
    for e in stream.events() {
        builder.push(e, &mut sink);
    }
    builder.finish(&mut sink);
    frames
}
