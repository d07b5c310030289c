pub mod autodiff;
pub mod cli;
pub mod codec;
pub mod conditioner;
pub mod container;
pub mod corpus;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod inference;
mod kernels;
pub mod metrics;
pub mod model;
pub mod params;
pub mod tensor;
pub mod training;
pub mod wavenet;
