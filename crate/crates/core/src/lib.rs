//! Simulation workbench for neural controllers that imitate nonlinear MPC.
//!
//! The pipeline: an NMPC teacher ([`nmpc`]) drives the cartpole and the
//! single-track car ([`plants`]) in closed loop; [`imitation`] records
//! state/action pairs; [`neuralnet`] trains small tanh MLPs on them with
//! quantization-aware training and magnitude pruning and runs them bit-exactly
//! in QM.N fixed point ([`qformat`]); [`evaluation`] compares the imitators
//! against the teacher and a pure-pursuit baseline ([`baseline_pp`]).

// `!(x > 0.0)` is deliberate throughout: it rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod baseline_pp;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod imitation;
pub mod neuralnet;
pub mod nmpc;
pub mod par;
pub mod plants;
pub mod qformat;
pub mod raceline;

pub use error::{Error, Result};
