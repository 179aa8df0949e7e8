//! Multi-animal tracking and behavior-recognition benchmark engine.

pub mod assign;
pub mod dataio;
pub mod evaluate;
pub mod geometry;
pub mod kernels;
pub mod loss;
pub mod metrics;
pub mod oracle;
pub mod report;
pub mod selfcheck;
pub mod synth;
pub mod tracker;
