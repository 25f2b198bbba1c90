//! Blob extraction: connected components of lit pixels and their tight
//! axis-aligned bounding boxes.
//!
//! Labeling is the classic two-pass union-find scheme, but it walks only the
//! lit pixels of a frame (in raster order), so cost scales with foreground
//! size rather than sensor size.

use serde::{Deserialize, Serialize};

use crate::event::SensorGeometry;
use crate::frame::BinaryFrame;

/// Inclusive pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: u16,
    pub y_min: u16,
    pub x_max: u16,
    pub y_max: u16,
}

impl BoundingBox {
    /// Panics if the corners are out of order.
    pub fn new(x_min: u16, y_min: u16, x_max: u16, y_max: u16) -> Self {
        Self::try_new(x_min, y_min, x_max, y_max).expect("bounding box corners out of order")
    }

    pub fn try_new(x_min: u16, y_min: u16, x_max: u16, y_max: u16) -> Option<Self> {
        (x_min <= x_max && y_min <= y_max).then_some(BoundingBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn width(&self) -> u64 {
        (self.x_max - self.x_min) as u64 + 1
    }

    pub fn height(&self) -> u64 {
        (self.y_max - self.y_min) as u64 + 1
    }

    pub fn area(&self) -> u64 {
        self.width() * self.height()
    }

    pub fn contains(&self, x: u16, y: u16) -> bool {
        (self.x_min..=self.x_max).contains(&x) && (self.y_min..=self.y_max).contains(&y)
    }

    pub fn intersection(&self, other: &BoundingBox) -> Option<BoundingBox> {
        BoundingBox::try_new(
            self.x_min.max(other.x_min),
            self.y_min.max(other.y_min),
            self.x_max.min(other.x_max),
            self.y_max.min(other.y_max),
        )
    }

    pub fn fits(&self, geometry: SensorGeometry) -> bool {
        self.x_max < geometry.width && self.y_max < geometry.height
    }

    /// Sort key used for deterministic detection output.
    fn order_key(&self) -> (u16, u16, u16, u16) {
        (self.y_min, self.x_min, self.y_max, self.x_max)
    }
}

/// Vertical centre of a box: `(y_min + y_max) / 2`. Always an integer or a
/// half-integer, so the `f64` is exact.
pub fn box_center_y(b: &BoundingBox) -> f64 {
    (b.y_min as f64 + b.y_max as f64) / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    Four,
    Eight,
}

impl TryFrom<u8> for Connectivity {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            other => Err(format!("connectivity must be 4 or 8, got {other}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionParams {
    pub connectivity: Connectivity,
    /// Components with fewer lit pixels are discarded.
    pub min_area: u32,
}

impl Default for DetectionParams {
    fn default() -> Self {
        DetectionParams {
            connectivity: Connectivity::Eight,
            min_area: 4,
        }
    }
}

impl DetectionParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.min_area == 0 {
            return Err("min_area must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Component {
    bbox: BoundingBox,
    area: u32,
}

/// Reusable labeler; keeps a dense label plane so repeated calls on the same
/// geometry allocate nothing.
#[derive(Debug)]
pub struct Detector {
    params: DetectionParams,
    geometry: SensorGeometry,
    /// Provisional label per pixel, 0 = unlabeled. Only lit pixels are ever
    /// written and they are reset before returning.
    labels: Vec<u32>,
    parent: Vec<u32>,
    slot: Vec<u32>,
    components: Vec<Component>,
}

impl Detector {
    pub fn new(geometry: SensorGeometry, params: DetectionParams) -> Self {
        Detector {
            params,
            geometry,
            labels: vec![0; geometry.pixel_count()],
            parent: Vec::new(),
            slot: Vec::new(),
            components: Vec::new(),
        }
    }

    pub fn params(&self) -> DetectionParams {
        self.params
    }

    fn find(&mut self, mut l: u32) -> u32 {
        while self.parent[l as usize] != l {
            let grand = self.parent[self.parent[l as usize] as usize];
            self.parent[l as usize] = grand;
            l = grand;
        }
        l
    }

    fn union(&mut self, a: u32, b: u32) -> u32 {
        let ra = self.find(a);
        let rb = self.find(b);
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi as usize] = lo;
        lo
    }

    /// Appends the boxes of `frame` to `out`, sorted by `(y_min, x_min)`.
    pub fn detect_into(&mut self, frame: &BinaryFrame, out: &mut Vec<BoundingBox>) {
        assert_eq!(frame.geometry(), self.geometry, "frame geometry mismatch");
        let lit = frame.lit_indices();
        if lit.is_empty() {
            return;
        }
        let sorted;
        let lit: &[u32] = if lit.windows(2).all(|w| w[0] < w[1]) {
            lit
        } else {
            let mut v = lit.to_vec();
            v.sort_unstable();
            v.dedup();
            sorted = v;
            &sorted
        };

        let w = self.geometry.width as usize;
        let eight = self.params.connectivity == Connectivity::Eight;
        self.parent.clear();
        self.parent.push(0);

        // First pass: provisional labels, merging with already-visited
        // neighbours (W, and NW/N/NE for the row above).
        for &i in lit {
            let i = i as usize;
            let x = i % w;
            let has_left = x > 0;
            let has_right = x + 1 < w;
            let has_up = i >= w;
            let mut neighbours = [0u32; 4];
            let mut n = 0;
            if has_left {
                neighbours[n] = self.labels[i - 1];
                n += 1;
            }
            if has_up {
                let up = i - w;
                neighbours[n] = self.labels[up];
                n += 1;
                if eight {
                    if has_left {
                        neighbours[n] = self.labels[up - 1];
                        n += 1;
                    }
                    if has_right {
                        neighbours[n] = self.labels[up + 1];
                        n += 1;
                    }
                }
            }
            let mut label = 0;
            for &nb in &neighbours[..n] {
                if nb != 0 {
                    label = if label == 0 { nb } else { self.union(label, nb) };
                }
            }
            if label == 0 {
                label = self.parent.len() as u32;
                self.parent.push(label);
            }
            self.labels[i] = label;
        }

        // Second pass: resolve roots and gather component extents.
        self.slot.clear();
        self.slot.resize(self.parent.len(), u32::MAX);
        self.components.clear();
        for &i in lit {
            let i = i as usize;
            let root = self.find(self.labels[i]);
            self.labels[i] = 0;
            let x = (i % w) as u16;
            let y = (i / w) as u16;
            let s = self.slot[root as usize];
            if s == u32::MAX {
                self.slot[root as usize] = self.components.len() as u32;
                self.components.push(Component {
                    bbox: BoundingBox::new(x, y, x, y),
                    area: 1,
                });
            } else {
                let c = &mut self.components[s as usize];
                c.area += 1;
                c.bbox.x_min = c.bbox.x_min.min(x);
                c.bbox.x_max = c.bbox.x_max.max(x);
                c.bbox.y_min = c.bbox.y_min.min(y);
                c.bbox.y_max = c.bbox.y_max.max(y);
            }
        }

        let start = out.len();
        let min_area = self.params.min_area;
        out.extend(
            self.components
                .iter()
                .filter(|c| c.area >= min_area)
                .map(|c| c.bbox),
        );
        out[start..].sort_unstable_by_key(BoundingBox::order_key);
    }

    pub fn detect(&mut self, frame: &BinaryFrame) -> Vec<BoundingBox> {
        let mut out = Vec::new();
        self.detect_into(frame, &mut out);
        out
    }
}

/// One-shot detection; allocates a fresh [`Detector`].
pub fn detect(frame: &BinaryFrame, params: DetectionParams) -> Vec<BoundingBox> {
    Detector::new(frame.geometry(), params).detect(frame)
}
