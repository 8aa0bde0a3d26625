//! Graph classification with hard-assignment structural pooling.

pub mod diagnostics;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod params;
pub mod pooling;
pub mod synthetic;
pub mod tensor;
pub mod trainer;
