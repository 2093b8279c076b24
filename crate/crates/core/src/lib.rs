//! Situation-conditioned ranking over impression lists.
//!
//! A backbone recommender (factorization machine or ID embeddings) scores
//! each candidate without situations. An enhancer branch projects the shared
//! embeddings into a situation space, encodes items with a user-conditioned
//! mixture of activations, fuses the situation attributes with user-driven
//! attention, and scores the match. The two branches are turned into
//! per-list probabilities and merged by a confidence-weighted harmonic mean.
//!
//! The crate is `no_std` and only needs `alloc`; file formats and the CLI
//! live in the `sare` crate.

#![no_std]

extern crate alloc;

pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod numeric;
pub mod sare;
pub mod train;

pub use error::{Error, Result};
