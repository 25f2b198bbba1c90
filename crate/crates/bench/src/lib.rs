//! Fixtures for the stage benchmarks: deterministic synthetic streams and
//! the frames they accumulate into.

use evcount_core::event::{Event, EventStream};
use evcount_core::frame::{accumulate, AccumulationParams, BinaryFrame};
use evcount_core::sim::{GrainScene, SceneParams};

/// `seconds` of the default HD stand at `grains_per_min`, with sensor noise.
pub fn stand_stream(seconds: u64, grains_per_min: f64, seed: u64) -> EventStream {
    let params = SceneParams { seed, ..SceneParams::default() };
    let on = params.on_fraction_for_rate(grains_per_min);
    let geometry = params.geometry;
    let steps = seconds * params.steps_per_second();
    let mut scene = GrainScene::new(params).expect("default scene is valid");
    let mut events: Vec<Event> = Vec::new();
    for _ in 0..steps {
        scene.step(on, &mut events);
    }
    EventStream::new(geometry, events).expect("simulator emits valid streams")
}

/// Non-empty frames of `stream` after keeping positive events only.
pub fn busy_frames(stream: &EventStream, limit: usize) -> Vec<BinaryFrame> {
    let positive = evcount_core::filter::polarity_filter(stream, evcount_core::Polarity::Positive);
    accumulate(&positive, AccumulationParams::default())
        .into_iter()
        .filter(|f| f.lit_count() > 0)
        .take(limit)
        .collect()
}
