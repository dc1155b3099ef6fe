pub mod embeddings;
pub mod graph;
pub mod numeric;
pub mod pipeline;
pub mod rng;
pub mod tensor;
pub mod model;
pub mod ged;
pub mod metrics;
pub mod synthetic;
