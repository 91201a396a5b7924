//! Federated conversational bandit simulation library.
//!
//! The crate is organized around the pieces of a star-topology simulation:
//!
//! - [`linalg`]: dense symmetric eigendecomposition, G-optimal designs
//!   (Frank-Wolfe), barycentric spanners, and test oracles.
//! - [`env`]: ground-truth environments (synthetic generation, adversarial
//!   lower-bound instances, feedback-matrix ingestion) and reward sampling.
//! - [`protocol`]: client/server message schemas, phase orchestration, and
//!   exact scalar-count communication accounting.
//! - [`fedconpe`]: the phase-elimination client and server state machines
//!   with eigen-gap-driven key-term conversations.
//! - [`baselines`]: LinUCB, Arm-Con, ConUCB, and the ConLinUCB variants over
//!   shared conversation schedules.
//! - [`harness`]: experiment configs, seeded multi-run sweeps, regret
//!   accounting, theorem meters, and CSV emission.

pub mod baselines;
pub mod harness;
pub mod env;
pub mod fedconpe;
pub mod linalg;
pub mod metrics;
pub mod protocol;
