//! Synthetic feeder/slot stand: grains drop from a slot above the field of
//! view and free-fall through it while the sensor reports their motion.
//!
//! Event model, per micro-step and per grain: a grain is an axis-aligned
//! square whose brightness rises from its leading (lower) edge to its trailing
//! edge. Whenever its rasterized top row changes, every pixel it now covers
//! gets brighter and fires a positive event, and every pixel it stopped
//! covering fires a negative one. Each pixel fires at most once per
//! micro-step, with probability `efficiency`, at a uniform time inside the
//! step. Background noise is a Poisson process of random-polarity events.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::event::{Event, Polarity, SensorGeometry};
use crate::pipeline::US_PER_SECOND;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub geometry: SensorGeometry,
    /// Grains per second emitted at `on_fraction = 1`.
    pub emission_rate: f64,
    /// Inclusive range of square grain edge lengths, pixels.
    pub grain_size: (u16, u16),
    pub pixels_per_meter: f64,
    /// m/s².
    pub gravity: f64,
    /// Mean background events per pixel per second.
    pub noise_rate: f64,
    /// Probability that a pixel whose brightness changed emits its event.
    pub efficiency: f64,
    pub micro_step_us: u64,
    /// Columns `[lo, hi)` a grain may occupy when spawning naturally.
    pub slot_x: (u16, u16),
    /// Row of the grain centre at spawn, where it is at rest. Negative puts
    /// the slot above the field of view.
    pub slot_y: f64,
    /// Ground-truth reference row; `None` means half the height.
    pub reference_row: Option<u32>,
    /// Place grains in round-robin column lanes that never overlap.
    pub distinct_columns: bool,
    /// Grains in the hopper; the feeder releases nothing once it is empty.
    /// `None` is a bottomless hopper.
    pub hopper: Option<u64>,
    pub seed: u64,
}

impl Default for SceneParams {
    fn default() -> Self {
        let geometry = SensorGeometry::default();
        SceneParams {
            geometry,
            emission_rate: 40.0,
            grain_size: (6, 14),
            pixels_per_meter: 2000.0,
            gravity: 9.81,
            noise_rate: 0.5,
            efficiency: 0.9,
            micro_step_us: 200,
            slot_x: (geometry.width / 4, geometry.width * 3 / 4),
            slot_y: -8.0,
            reference_row: None,
            distinct_columns: false,
            hopper: None,
            seed: 0,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<(), String> {
        let (lo, hi) = self.grain_size;
        if lo == 0 || lo > hi {
            return Err(format!("grain size range {lo}-{hi} is invalid"));
        }
        if hi >= self.geometry.width || hi >= self.geometry.height {
            return Err(format!("grain size {hi} does not fit the sensor"));
        }
        if !(self.slot_x.0 < self.slot_x.1 && self.slot_x.1 <= self.geometry.width) {
            return Err(format!("slot columns {:?} outside the sensor", self.slot_x));
        }
        if self.slot_x.1 - self.slot_x.0 < hi {
            return Err("slot is narrower than the largest grain".into());
        }
        if self.distinct_columns && self.geometry.width / self.lane_pitch() == 0 {
            return Err("sensor too narrow for distinct column lanes".into());
        }
        if !(self.emission_rate >= 0.0 && self.emission_rate.is_finite()) {
            return Err(format!("emission rate must be >= 0, got {}", self.emission_rate));
        }
        if !(self.noise_rate >= 0.0 && self.noise_rate.is_finite()) {
            return Err(format!("noise rate must be >= 0, got {}", self.noise_rate));
        }
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(format!("efficiency must be in [0, 1], got {}", self.efficiency));
        }
        if !(self.pixels_per_meter > 0.0 && self.gravity > 0.0) {
            return Err("pixels_per_meter and gravity must be positive".into());
        }
        if self.micro_step_us == 0 || !US_PER_SECOND.is_multiple_of(self.micro_step_us) {
            return Err(format!("micro-step {} µs must divide one second", self.micro_step_us));
        }
        if let Some(r) = self.reference_row {
            if r >= self.geometry.height as u32 {
                return Err(format!("reference row {r} outside the sensor"));
            }
        }
        Ok(())
    }

    pub fn reference_row(&self) -> u32 {
        self.reference_row.unwrap_or(self.geometry.height as u32 / 2)
    }

    /// Gravity in px/s².
    pub fn gravity_px(&self) -> f64 {
        self.gravity * self.pixels_per_meter
    }

    fn lane_pitch(&self) -> u16 {
        self.grain_size.1 + 6
    }

    pub fn steps_per_second(&self) -> u64 {
        US_PER_SECOND / self.micro_step_us
    }

    /// On-fraction that yields `grains_per_min` on average.
    pub fn on_fraction_for_rate(&self, grains_per_min: f64) -> f64 {
        if self.emission_rate > 0.0 {
            grains_per_min / 60.0 / self.emission_rate
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grain {
    pub id: u64,
    pub x_left: u16,
    pub size: u16,
    /// Centre row, fractional pixels.
    pub center_y: f64,
    /// px/s, positive downwards.
    pub velocity: f64,
    top: i64,
}

impl Grain {
    /// Top covered row for a given centre.
    pub fn top_row(center_y: f64, size: u16) -> i64 {
        (center_y - size as f64 / 2.0).floor() as i64
    }

    pub fn top(&self) -> i64 {
        self.top
    }
}

/// Ground-truth life of one grain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrainRecord {
    pub id: u64,
    pub spawn_t_us: u64,
    pub x_left: u16,
    pub size: u16,
    /// When the centre reached the reference row.
    pub reference_t_us: Option<u64>,
    /// When the grain left the bottom of the frame.
    pub exit_t_us: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct GrainScene {
    params: SceneParams,
    rng: ChaCha8Rng,
    grains: Vec<Grain>,
    now_us: u64,
    records: Vec<GrainRecord>,
    truth: u64,
    noise: Option<Poisson<f64>>,
}

impl GrainScene {
    pub fn new(params: SceneParams) -> Result<Self, String> {
        params.validate()?;
        let dt = params.micro_step_us as f64 / US_PER_SECOND as f64;
        let lambda = params.noise_rate * params.geometry.pixel_count() as f64 * dt;
        let noise = if lambda > 0.0 {
            Some(Poisson::new(lambda).map_err(|e| format!("noise rate: {e}"))?)
        } else {
            None
        };
        Ok(GrainScene {
            rng: ChaCha8Rng::seed_from_u64(params.seed),
            params,
            grains: Vec::new(),
            now_us: 0,
            records: Vec::new(),
            truth: 0,
            noise,
        })
    }

    pub fn params(&self) -> &SceneParams {
        &self.params
    }

    pub fn now_us(&self) -> u64 {
        self.now_us
    }

    pub fn grains(&self) -> &[Grain] {
        &self.grains
    }

    pub fn in_flight(&self) -> usize {
        self.grains.len()
    }

    pub fn spawned(&self) -> u64 {
        self.records.len() as u64
    }

    /// Grains whose centre has passed the reference row.
    pub fn truth_count(&self) -> u64 {
        self.truth
    }

    pub fn records(&self) -> &[GrainRecord] {
        &self.records
    }

    /// Places a grain directly, bypassing the feeder.
    pub fn inject_grain(&mut self, x_left: u16, size: u16, center_y: f64, velocity: f64) -> u64 {
        assert!(size > 0 && x_left as u32 + size as u32 <= self.params.geometry.width as u32);
        let id = self.records.len() as u64;
        self.records.push(GrainRecord {
            id,
            spawn_t_us: self.now_us,
            x_left,
            size,
            reference_t_us: None,
            exit_t_us: None,
        });
        self.grains.push(Grain {
            id,
            x_left,
            size,
            center_y,
            velocity,
            top: Grain::top_row(center_y, size),
        });
        id
    }

    fn spawn(&mut self) {
        let (lo, hi) = self.params.grain_size;
        let size = self.rng.random_range(lo..=hi);
        let x_left = if self.params.distinct_columns {
            let pitch = self.params.lane_pitch();
            let lanes = (self.params.geometry.width / pitch) as u64;
            let lane = self.records.len() as u64 % lanes;
            lane as u16 * pitch + 3
        } else {
            let (s0, s1) = self.params.slot_x;
            self.rng.random_range(s0..=s1 - size)
        };
        self.inject_grain(x_left, size, self.params.slot_y, 0.0);
    }

    /// Advances one micro-step at the given feeder on-fraction and appends
    /// the step's events to `out`, sorted by timestamp.
    pub fn step(&mut self, on_fraction: f64, out: &mut Vec<Event>) {
        let dt_us = self.params.micro_step_us;
        let dt = dt_us as f64 / US_PER_SECOND as f64;
        let t0 = self.now_us;
        let t1 = t0 + dt_us;
        let start = out.len();

        let lambda = self.params.emission_rate * on_fraction.clamp(0.0, 1.0) * dt;
        if lambda > 0.0 {
            let n = Poisson::new(lambda).map(|p| p.sample(&mut self.rng) as u64).unwrap_or(0);
            let left = self.params.hopper.map_or(u64::MAX, |h| h.saturating_sub(self.spawned()));
            for _ in 0..n.min(left) {
                self.spawn();
            }
        }

        let g = self.params.gravity_px();
        let width = self.params.geometry.width;
        let height = self.params.geometry.height as i64;
        let eff = self.params.efficiency;
        let reference = self.params.reference_row() as f64;
        let rng = &mut self.rng;
        let mut fire = |x: u16, y: i64, polarity: Polarity, out: &mut Vec<Event>| {
            if eff < 1.0 && rng.random::<f64>() >= eff {
                return;
            }
            let t = t0 + rng.random_range(0..dt_us);
            out.push(Event::new(t, x, y as u16, polarity));
        };

        let mut i = 0;
        while i < self.grains.len() {
            let grain = &mut self.grains[i];
            let prev_center = grain.center_y;
            grain.velocity += g * dt;
            grain.center_y += grain.velocity * dt;
            let new_top = Grain::top_row(grain.center_y, grain.size);
            let old_top = grain.top;
            if new_top != old_top {
                let size = grain.size as i64;
                let cols = grain.x_left..(grain.x_left + grain.size).min(width);
                for y in old_top.max(0)..(old_top + size).min(height) {
                    if y < new_top || y >= new_top + size {
                        for x in cols.clone() {
                            fire(x, y, Polarity::Negative, out);
                        }
                    }
                }
                for y in new_top.max(0)..(new_top + size).min(height) {
                    for x in cols.clone() {
                        fire(x, y, Polarity::Positive, out);
                    }
                }
                grain.top = new_top;
            }

            let record = &mut self.records[grain.id as usize];
            if prev_center < reference && reference <= grain.center_y && record.reference_t_us.is_none() {
                record.reference_t_us = Some(t1);
                self.truth += 1;
            }
            if grain.top >= height {
                record.exit_t_us = Some(t1);
                self.grains.remove(i);
            } else {
                i += 1;
            }
        }

        if let Some(noise) = &self.noise {
            let n = noise.sample(rng) as u64;
            let h = self.params.geometry.height;
            for _ in 0..n {
                let x = rng.random_range(0..width);
                let y = rng.random_range(0..h);
                let polarity = if rng.random::<bool>() { Polarity::Positive } else { Polarity::Negative };
                let t = t0 + rng.random_range(0..dt_us);
                out.push(Event::new(t, x, y, polarity));
            }
        }

        out[start..].sort_by_key(|e| e.t);
        self.now_us = t1;
    }
}
