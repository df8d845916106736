//! Deterministic desk-scale simulator and library for asynchronous edge
//! learning with cloned knowledge distillation.
//!
//! A central "core" model is trained on a private core dataset, dispatched
//! to edge devices that each hold a disjoint dataset, trained locally, and
//! re-collected as a distillation teacher — one round per edge, with support
//! for teacher ensembles, a temporal memory of past teachers, lagged
//! responses and label-corrupted edges. Every run is a pure function of its
//! configuration and seeds.

pub mod data;
pub mod distill;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod seed;
pub mod sim;

pub use error::{Error, Result};
