//! Simulation, boundary control and grey-box identification of a chain of
//! torsionally coupled pendulums driven by stepper motors at its ends.

pub mod error;
pub mod ident;
pub mod model;
pub mod scenario;
pub mod sim;
pub mod sync;
pub mod wave;

pub use error::{Error, Result};
pub use model::{Boundary, ChainParams, ChainState, MotorCommand, PendulumState, StateRate};
