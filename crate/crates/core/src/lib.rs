#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod fewshot;
pub mod model;
pub mod seed;
pub mod synth;
pub mod training;
pub mod units;

pub use error::{Error, Result};
