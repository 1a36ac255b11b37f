#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod container;
pub mod costmodel;
pub mod error;
pub mod evalkit;
pub mod labels;
pub mod losses;
pub mod net;
pub mod pipeline;
pub mod postprocess;
pub mod tensor;

pub use error::{Error, Result};
