#![no_std]
// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod bw;
pub mod diagnostics;
pub mod error;
pub mod gvi;
pub mod oracles;
pub mod potentials;
pub mod psd;
pub mod rng;

pub use error::{Error, Result};
