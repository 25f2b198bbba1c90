//! IoU frame-to-frame tracking and count-line crossing.
//!
//! Boxes from consecutive frames are paired greedily by descending IoU. A
//! matched object whose centre moves from above a count line (previous frame)
//! to on-or-below it (current frame) increments that line once; a per-object
//! flag keeps re-detections from counting the same line again. The reported
//! count is the maximum over the three lines.

use serde::{Deserialize, Serialize};

use crate::detect::{box_center_y, BoundingBox};

/// Exact IoU as an `(intersection, union)` pixel-count pair.
pub fn iou_ratio(a: &BoundingBox, b: &BoundingBox) -> (u64, u64) {
    let inter = a.intersection(b).map_or(0, |i| i.area());
    (inter, a.area() + b.area() - inter)
}

/// Intersection over union (Jaccard index) of two inclusive pixel boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (inter, union) = iou_ratio(a, b);
    inter as f64 / union as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerParams {
    /// A pair matches only when IoU is strictly above this.
    pub iou_threshold: f64,
    /// Frames an unmatched object survives before it expires.
    pub max_missed_frames: u32,
}

impl Default for TrackerParams {
    fn default() -> Self {
        TrackerParams {
            iou_threshold: 0.1,
            max_missed_frames: 0,
        }
    }
}

impl TrackerParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return Err(format!("iou threshold must be in (0, 1), got {}", self.iou_threshold));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackedObject {
    pub id: u64,
    pub bbox: BoundingBox,
    pub last_center_y: f64,
    pub last_frame: u64,
    /// Consecutive frames without a match.
    pub missed: u32,
    pub crossed: [bool; 3],
}

impl TrackedObject {
    pub fn new(id: u64, bbox: BoundingBox, frame: u64) -> Self {
        TrackedObject {
            id,
            bbox,
            last_center_y: box_center_y(&bbox),
            last_frame: frame,
            missed: 0,
            crossed: [false; 3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedPair {
    /// Index into the previous objects.
    pub object: usize,
    /// Index into the current boxes.
    pub detection: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Matching {
    pub pairs: Vec<MatchedPair>,
    /// Current boxes with no partner; they start new tracks.
    pub unmatched_detections: Vec<usize>,
    /// Previous objects with no partner.
    pub unmatched_objects: Vec<usize>,
}

/// Greedy one-to-one assignment in descending IoU order among pairs whose
/// IoU exceeds the threshold. Ties break on (object, detection) index.
pub fn match_boxes(prev: &[TrackedObject], curr: &[BoundingBox], params: &TrackerParams) -> Matching {
    let mut candidates = Vec::new();
    for (oi, obj) in prev.iter().enumerate() {
        for (di, b) in curr.iter().enumerate() {
            // Cheap reject before the division.
            if obj.bbox.intersection(b).is_none() {
                continue;
            }
            let v = iou(&obj.bbox, b);
            if v > params.iou_threshold {
                candidates.push(MatchedPair {
                    object: oi,
                    detection: di,
                    iou: v,
                });
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.iou
            .total_cmp(&a.iou)
            .then(a.object.cmp(&b.object))
            .then(a.detection.cmp(&b.detection))
    });

    let mut object_used = vec![false; prev.len()];
    let mut detection_used = vec![false; curr.len()];
    let mut pairs = Vec::new();
    for c in candidates {
        if !object_used[c.object] && !detection_used[c.detection] {
            object_used[c.object] = true;
            detection_used[c.detection] = true;
            pairs.push(c);
        }
    }
    Matching {
        pairs,
        unmatched_detections: (0..curr.len()).filter(|&i| !detection_used[i]).collect(),
        unmatched_objects: (0..prev.len()).filter(|&i| !object_used[i]).collect(),
    }
}

/// Three horizontal count lines and their running tallies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountLines {
    rows: [u32; 3],
    counts: [u64; 3],
}

impl CountLines {
    /// Rows must be strictly increasing and inside the sensor.
    pub fn new(rows: [u32; 3], height: u16) -> Result<Self, String> {
        if !(rows[0] < rows[1] && rows[1] < rows[2]) {
            return Err(format!("count lines must be strictly increasing, got {rows:?}"));
        }
        if rows[2] >= height as u32 {
            return Err(format!("count line {} outside sensor height {height}", rows[2]));
        }
        Ok(CountLines { rows, counts: [0; 3] })
    }

    /// Lines at 40%, 50% and 60% of the frame height.
    pub fn default_rows(height: u16) -> [u32; 3] {
        let h = height as u32;
        [h * 2 / 5, h / 2, h * 3 / 5]
    }

    pub fn rows(&self) -> [u32; 3] {
        self.rows
    }

    pub fn per_line_counts(&self) -> [u64; 3] {
        self.counts
    }

    /// Applies the crossing rule for one matched object moving from
    /// `prev_y` to `curr_y`: line `i` counts when `prev_y < row_i <= curr_y`
    /// and the object has not crossed it before.
    pub fn register(&mut self, prev_y: f64, curr_y: f64, crossed: &mut [bool; 3]) {
        for ((&row, count), done) in self.rows.iter().zip(&mut self.counts).zip(crossed.iter_mut()) {
            let row = row as f64;
            if !*done && prev_y < row && row <= curr_y {
                *count += 1;
                *done = true;
            }
        }
    }
}

/// Applies the crossing rule to a batch of `(prev_y, curr_y, crossed flags)`.
pub fn update_counts<'a>(lines: &mut CountLines, moves: impl IntoIterator<Item = (f64, f64, &'a mut [bool; 3])>) {
    for (prev_y, curr_y, crossed) in moves {
        lines.register(prev_y, curr_y, crossed);
    }
}

/// The frame's object count: the largest per-line tally.
pub fn frame_count(lines: &CountLines) -> u64 {
    lines.counts.iter().copied().max().unwrap_or(0)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepSummary {
    pub matched: usize,
    pub new: usize,
    pub expired: usize,
}

/// Sequential tracker over a frame stream.
#[derive(Debug, Clone)]
pub struct Tracker {
    params: TrackerParams,
    objects: Vec<TrackedObject>,
    lines: CountLines,
    next_id: u64,
}

impl Tracker {
    pub fn new(params: TrackerParams, lines: CountLines) -> Self {
        Tracker {
            params,
            objects: Vec::new(),
            lines,
            next_id: 0,
        }
    }

    pub fn objects(&self) -> &[TrackedObject] {
        &self.objects
    }

    pub fn lines(&self) -> &CountLines {
        &self.lines
    }

    pub fn count(&self) -> u64 {
        frame_count(&self.lines)
    }

    /// Consumes the boxes detected on frame `frame`.
    pub fn step(&mut self, frame: u64, boxes: &[BoundingBox]) -> StepSummary {
        let m = match_boxes(&self.objects, boxes, &self.params);

        for p in &m.pairs {
            let obj = &mut self.objects[p.object];
            let b = boxes[p.detection];
            let curr_y = box_center_y(&b);
            self.lines.register(obj.last_center_y, curr_y, &mut obj.crossed);
            obj.bbox = b;
            obj.last_center_y = curr_y;
            obj.last_frame = frame;
            obj.missed = 0;
        }

        let mut expired = 0;
        for &i in &m.unmatched_objects {
            self.objects[i].missed += 1;
            if self.objects[i].missed > self.params.max_missed_frames {
                expired += 1;
            }
        }
        let max_missed = self.params.max_missed_frames;
        self.objects.retain(|o| o.missed <= max_missed);

        for &d in &m.unmatched_detections {
            self.objects.push(TrackedObject::new(self.next_id, boxes[d], frame));
            self.next_id += 1;
        }

        StepSummary {
            matched: m.pairs.len(),
            new: m.unmatched_detections.len(),
            expired,
        }
    }
}
