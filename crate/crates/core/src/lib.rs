#![cfg_attr(not(feature = "std"), no_std)]
//! Selective state space (S6) layer with token-aware style augmentation.
//!
//! Everything in this crate is pure computation over `alloc` containers:
//! the S6 forward/backward kernels ([`ssm`]), saliency-driven style
//! augmentation ([`augment`]), kernel two-sample domain-gap estimators
//! ([`gap`]) and a synthetic multi-domain training harness ([`harness`]).
//! IO, configuration files and the command line live in the `start` crate.

extern crate alloc;

pub mod augment;
pub mod check;
pub mod error;
pub mod gap;
pub mod harness;
pub mod math;
pub mod rng;
pub mod ssm;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::TokenSequence;
