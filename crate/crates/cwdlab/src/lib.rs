//! Desk-scale laboratory for sign-selective (cautious) weight decay.
//!
//! The crate couples discrete optimizer steps, their continuous-time flows,
//! closed-form Lyapunov certificates, and an experiment harness behind the
//! `cwdlab` command-line binary.

pub mod config;
pub mod flow;
pub mod harness;
pub mod linalg;
pub mod lyapunov;
pub mod objectives;
pub mod optim;
pub mod rng;
