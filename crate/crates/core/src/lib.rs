#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod entropy;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod network;
pub mod optim;
pub mod slq;

pub use error::{Error, Result};
