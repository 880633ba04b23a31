// `!(x > 0.0)` style checks reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops over parallel numeric buffers read better than zipped iterators.
#![allow(clippy::needless_range_loop)]

pub mod container;
pub mod data;
pub mod diffcore;
pub mod entropy;
pub mod error;
pub mod generator;
pub mod models;
pub mod samplers;
pub mod tensor;
pub mod trainers;

pub use error::{Error, Result};
pub use tensor::Tensor;

pub use data::Dataset;
pub use diffcore::ParamSet;
pub use generator::{Generator, GeneratorSpec};
pub use models::{EnergyModel, EnergySpec};
