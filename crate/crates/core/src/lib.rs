pub mod gateway;
pub mod ingest;
pub mod ndjson;
pub mod parallel;
pub mod taxonomy;
pub mod annotator;
pub mod program;
pub mod metrics;
pub mod optimizer;
pub mod quality;
pub mod dataset;
pub mod augmenter;
pub mod review;
pub mod config;
pub mod pipeline;
