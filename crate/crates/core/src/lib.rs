//! Multi-label discrete-time survival prediction from CT volumes and
//! clinical variables.
//!
//! The crate carries its own small reverse-mode autodiff engine
//! ([`autodiff`]), the MTLR survival head ([`mtlr`]), a 3D conv network
//! ([`network`]), gradient-based time-event saliency maps ([`gradteam`]),
//! the evaluation protocol ([`metrics`]) and data handling ([`data`]).

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod error;
pub mod gradteam;
pub mod metrics;
pub mod mtlr;
pub mod network;
pub mod survival;

pub use error::{Error, Result};
