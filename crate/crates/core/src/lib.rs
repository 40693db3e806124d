//! Event-triggered anytime control of nonlinear plants over i.i.d. packet
//! erasure channels with random processor availability.
//!
//! * [`domain`]: plants, channel/processor parameters, assumption checks.
//! * [`runtime`]: closed-loop simulation with the baseline and the buffered
//!   anytime controller.
//! * [`analysis`]: stability factors, the buffer-length chain and its
//!   return-time distribution, bounds and stability boundaries.
//! * [`oracle`]: brute-force validators for the analysis and the controller.
//! * [`cli`]: configuration and experiment orchestration.

pub mod analysis;
pub mod cli;
pub mod domain;
pub mod oracle;
pub mod runtime;
