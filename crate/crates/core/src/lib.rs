#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod error;
pub mod estimation;
pub mod harness;
pub mod inference;
pub mod model;
pub mod policies;
pub mod sim;

pub use error::{Error, Result};
