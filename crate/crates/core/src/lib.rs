//! Cell-free massive MIMO integrated sensing and communication.
//!
//! Distributed multi-antenna APs either serve downlink UEs with partial
//! zero-forcing precoding or illuminate sensing zones. The crate provides the
//! network model, closed-form SINR and MASR evaluation with Monte-Carlo
//! oracles, a conic modeling layer, the joint mode-selection and power
//! allocation optimizers, and a seeded campaign harness.

pub mod channel;
pub mod conic;
pub mod metrics;
pub mod model;
pub mod precoding;
pub mod optimize;
pub mod harness;
pub mod cli;
