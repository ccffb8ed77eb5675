//! Online leader selection for leader-follower collective tracking.
//!
//! A swarm of single- or double-integrator agents tracks a reference
//! velocity that an external planner sends to one agent, the leader. The
//! leader role can be handed over at fixed ticks. This crate provides the
//! grounded-Laplacian spectral tools, the closed-loop dynamics with their
//! reset semantics, error metrics with certified decay rates, the leader
//! selection strategies, the decentralized cost estimation layer and a
//! deterministic simulation harness.

pub mod error;
pub mod estimation;
pub mod first_order;
pub mod graph;
pub mod harness;
pub mod integrate;
pub mod linalg;
pub mod reference;
pub mod second_order;
pub mod selection;

pub use error::{Error, Result};
