pub mod analysis;
pub mod corpus;
pub mod diffcore;
pub mod model;
pub mod morpheus;
pub mod objectives;
pub mod optim;
pub mod pipeline;
pub mod scalar;
pub mod seed;

/// Double-precision parameter set; gradient checks and oracles use this.
pub type Model = model::ModelParams<f64>;
/// Single-precision parameter set; the default for training runs.
pub type Model32 = model::ModelParams<f32>;
pub type Graph = diffcore::Graph<f64>;
pub type Graph32 = diffcore::Graph<f32>;
pub type Tensor = diffcore::Tensor<f64>;
pub type Tensor32 = diffcore::Tensor<f32>;
