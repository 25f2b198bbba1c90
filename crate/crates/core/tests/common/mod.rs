//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::VecDeque;

use evcount_core::detect::{BoundingBox, Connectivity};
use evcount_core::frame::BinaryFrame;
use evcount_core::PidGains;

/// IoU as (shared pixels, covered pixels), counted one pixel at a time.
pub fn iou_by_pixels(a: &BoundingBox, b: &BoundingBox, side: u16) -> (u64, u64) {
    let (mut inter, mut union) = (0, 0);
    for y in 0..side {
        for x in 0..side {
            let (ia, ib) = (a.contains(x, y), b.contains(x, y));
            inter += (ia && ib) as u64;
            union += (ia || ib) as u64;
        }
    }
    (inter, union)
}

/// Boxes of connected lit regions found by breadth-first flood fill,
/// keeping regions of at least `min_area` pixels, sorted.
pub fn flood_fill_boxes(frame: &BinaryFrame, connectivity: Connectivity, min_area: u32) -> Vec<BoundingBox> {
    let g = frame.geometry();
    let (w, h) = (g.width as i32, g.height as i32);
    let mut seen = vec![false; g.pixel_count()];
    let offsets: &[(i32, i32)] = match connectivity {
        Connectivity::Four => &[(1, 0), (-1, 0), (0, 1), (0, -1)],
        Connectivity::Eight => &[(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)],
    };
    let mut boxes = Vec::new();
    for y0 in 0..h {
        for x0 in 0..w {
            let i0 = (y0 * w + x0) as usize;
            if seen[i0] || !frame.is_lit(x0 as u16, y0 as u16) {
                continue;
            }
            seen[i0] = true;
            let mut queue = VecDeque::from([(x0, y0)]);
            let (mut x_min, mut y_min, mut x_max, mut y_max) = (x0, y0, x0, y0);
            let mut area = 0u32;
            while let Some((x, y)) = queue.pop_front() {
                area += 1;
                x_min = x_min.min(x);
                x_max = x_max.max(x);
                y_min = y_min.min(y);
                y_max = y_max.max(y);
                for (dx, dy) in offsets {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w || ny >= h {
                        continue;
                    }
                    let j = (ny * w + nx) as usize;
                    if !seen[j] && frame.is_lit(nx as u16, ny as u16) {
                        seen[j] = true;
                        queue.push_back((nx, ny));
                    }
                }
            }
            if area >= min_area {
                boxes.push(BoundingBox::new(x_min as u16, y_min as u16, x_max as u16, y_max as u16));
            }
        }
    }
    boxes.sort_by_key(|b| (b.y_min, b.x_min, b.y_max, b.x_max));
    boxes
}

/// Discrete PID evaluated from scratch at every step:
/// `kp·e_n + ki·(e_1 + … + e_n) + kd·(e_n − e_{n−1})`, with `e_0 = 0`.
pub fn pid_direct(gains: PidGains, errors: &[f64]) -> Vec<f64> {
    (0..errors.len())
        .map(|n| {
            let sum: f64 = errors[..=n].iter().sum();
            let prev = if n == 0 { 0.0 } else { errors[n - 1] };
            gains.kp * errors[n] + gains.ki * sum + gains.kd * (errors[n] - prev)
        })
        .collect()
}
