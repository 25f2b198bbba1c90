use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;

use evcount_bench::{busy_frames, stand_stream};
use evcount_core::detect::{DetectionParams, Detector};
use evcount_core::filter::{ActivityFilter, ActivityFilterParams};
use evcount_core::frame::{AccumulationParams, FrameBuilder};
use evcount_core::io::{encode_events, read_events, EventFormat};
use evcount_core::pipeline::{count_concurrent, count_sequential, PipelineParams};

fn stages(c: &mut Criterion) {
    let stream = stand_stream(2, 300.0, 1);
    let g = stream.geometry();
    let n = stream.len() as u64;

    let mut group = c.benchmark_group("stages");
    group.sample_size(10);
    group.throughput(Throughput::Elements(n));

    group.bench_function("activity_filter", |b| {
        b.iter(|| {
            let mut f = ActivityFilter::new(g, ActivityFilterParams::default());
            black_box(stream.events().iter().filter(|e| f.accept(e)).count())
        })
    });

    group.bench_function("frame_builder", |b| {
        b.iter(|| {
            let mut builder = FrameBuilder::new(g, AccumulationParams::default());
            let mut lit = 0;
            let mut sink = |f: &evcount_core::BinaryFrame| lit += f.lit_count();
            for e in stream.events() {
                builder.push(e, &mut sink);
            }
            builder.finish(&mut sink);
            black_box(lit)
        })
    });

    let binary = encode_events(&stream, EventFormat::Binary);
    group.bench_function("binary_decode", |b| {
        b.iter(|| black_box(read_events(&binary[..], EventFormat::Binary, g).unwrap().len()))
    });

    for (name, concurrent) in [("pipeline_sequential", false), ("pipeline_concurrent", true)] {
        group.bench_function(name, |b| {
            b.iter(|| {
                let events = stream.events().iter().map(|e| Ok::<_, ()>(*e));
                let out = if concurrent {
                    count_concurrent(events, g, PipelineParams::default(), 8)
                } else {
                    count_sequential(events, g, PipelineParams::default())
                };
                black_box(out.unwrap().total)
            })
        });
    }
    group.finish();

    let frames = busy_frames(&stream, 200);
    let mut group = c.benchmark_group("detect");
    group.throughput(Throughput::Elements(frames.len() as u64));
    group.bench_with_input(BenchmarkId::new("frames", frames.len()), &frames, |b, frames| {
        let mut d = Detector::new(g, DetectionParams::default());
        let mut boxes = Vec::new();
        b.iter(|| {
            for f in frames {
                boxes.clear();
                d.detect_into(f, &mut boxes);
            }
            black_box(boxes.len())
        })
    });
    group.finish();
}

criterion_group!(benches, stages);
criterion_main!(benches);
