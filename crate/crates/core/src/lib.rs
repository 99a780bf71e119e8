pub mod cli;
pub mod config;
pub mod graph;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod sampler;
pub mod synth;
pub mod train;
