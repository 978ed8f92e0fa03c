//! Concept sliders for Gaussian-splat scenes at desk scale.
//!
//! The pipeline runs in five stages:
//!
//! 1. [`features`] samples labeled feature sets for the two sides of a concept.
//! 2. [`axis`] fits a two-class discriminant concept axis per stage and a set
//!    of attribute bases orthogonal to it (sequential deflation PCA).
//! 3. [`adapter`] trains a low-rank weight shift on a frozen toy generator so
//!    that its scale factor acts as a slider along the concept axis.
//! 4. [`splat`] is a differentiable 2D Gaussian-splat renderer with densify and
//!    prune schedules.
//! 5. [`edit`] drives score-distillation updates of a splat scene toward the
//!    slider target, restricted to the primitives most sensitive to the concept.
//!
//! [`service`] exposes a live editing session over HTTP and WebSocket, and
//! [`cli`] ties everything together behind the `acs` binary.

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapter;
pub mod axis;
pub mod cli;
pub mod config;
pub mod edit;
pub mod error;
pub mod features;
pub mod linalg;
pub mod optim;
pub mod plot;
pub mod report;
pub mod rng;
pub mod service;
pub mod splat;

pub use error::{Error, Result};
