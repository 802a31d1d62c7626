//! ShapesWorld: a deterministic two-domain segmentation benchmark.

mod io;
mod scene;

pub use io::{
    decode_sample, encode_sample, generate_benchmark, load_benchmark, read_dataset, worker_threads,
    write_benchmark, write_dataset, Benchmark, BenchmarkSpec, SampleFile, TargetImages,
    IMAGE_MAGIC, MANIFEST,
};
pub use scene::{
    balanced_layout, class_frequency, generate_scene, generate_with_layout, render, shapes_layout,
    Domain, DomainSpec, Layout, SceneSample, BASE_PALETTE,
};
