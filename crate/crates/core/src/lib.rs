pub mod active;
pub mod adapter;
pub mod ctc;
pub mod dataset;
pub mod metrics;
pub mod render;
pub mod scheme;
pub mod seed;
pub mod study;
