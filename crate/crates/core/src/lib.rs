pub mod config;
pub mod data;
pub mod eval;
pub mod experiment;
pub mod guidance;
pub mod models;
pub mod rng;
pub mod synthesis;
pub mod tensor;
pub mod train;
