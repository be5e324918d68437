//! Joint synthesis of neural incremental ISS Lyapunov functions and controllers
//! for black-box discrete-time plants, with a deterministic validity certificate.

pub mod classk_barrier;
pub mod cli;
pub mod error;
pub mod lmi;
pub mod losses;
pub mod nets;
pub mod provenance;
pub mod rollout;
pub mod sampling;
pub mod systems;
pub mod trainer;
pub mod verifier;

pub use error::{Error, Result};
