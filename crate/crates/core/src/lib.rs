//! Federated spectrum occupancy detection.
//!
//! The crate covers the whole chain from baseband samples to accuracy
//! reports:
//!
//! * [`iqgen`] synthesizes GMSK captures over AWGN and reads/writes raw IQ files.
//! * [`featex`] splits captures into 10,000-sample windows, channelizes them with
//!   an FFT and extracts per-channel power plus autocorrelation statistics.
//! * [`detect`] is the energy-detection baseline calibrated to a false-alarm rate.
//! * [`learn`] holds logistic regression and a one-hidden-layer perceptron with
//!   hand-written gradients and the flat coefficient codec.
//! * [`fed`] runs FedAvg across simulated sensors, with shadow (non-federated)
//!   models, faulty sensors and coefficient-outlier flagging.
//! * [`harness`] is the configuration and command layer behind the `specsense` CLI.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the `parallel`
//! feature is enabled (the default) and plain iterators otherwise. Results are
//! identical either way.

// `!(x > 0.0)` is how NaN gets rejected along with the rest
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod detect;
pub mod error;
pub mod featex;
pub mod fed;
pub mod harness;
pub mod iqgen;
pub mod learn;
pub mod par;
pub mod pipeline;
pub mod rng;

pub use error::{Error, Result};
