// `!(x >= 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod encoding;
pub mod error;
pub mod fields;
pub mod image;
pub mod math;
pub mod nn;
pub mod oracle;
pub mod preconv;
pub mod renderer;
pub mod scenes;
pub mod training;
pub mod util;

pub use error::{Error, Result};
