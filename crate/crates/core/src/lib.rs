//! Simulation, control and learning toolkit for goal reaching with a planar
//! manipulator.
//!
//! * [`dynamics`]: rigid-body arm model with friction/load uncertainty and an
//!   RK4 integrator.
//! * [`control`]: subsystem-based adaptive torque controller and PID baseline.
//! * [`sim`]: closed-loop step rollouts and time-domain metrics.
//! * [`cso`]: cuckoo search with Levy flights and the gain-tuning objective.
//! * [`sac`]: soft actor-critic with a value network, replay buffer and
//!   hand-derived gradients.
//! * [`reach`]: reaching environment bridging the 33.33 Hz policy and the
//!   1 kHz controller.
//! * [`harness`]: configuration, persistence, reports and the commands behind
//!   the CLI.

pub mod control;
pub mod cso;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod reach;
pub mod sac;
pub mod sim;

pub use error::{Error, Result};

/// Random stream used by every simulation component.
pub type SimRng = rand_chacha::ChaCha8Rng;
