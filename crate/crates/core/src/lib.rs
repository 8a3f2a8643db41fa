pub mod au;
pub mod chain;
pub mod client;
pub mod eval;
pub mod geometry;
pub mod pipeline;
pub mod render;
pub mod sidecar;
pub mod synth;
