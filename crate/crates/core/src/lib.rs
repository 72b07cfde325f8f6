pub mod bench;
pub mod data;
pub mod embeddings;
pub mod model;
pub mod numerics;
pub mod synthetic;
pub mod trainer;
