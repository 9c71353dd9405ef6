//! Fixed-step integration, actuator and encoder models, and the experiment loop.

pub mod engine;
pub mod integrator;
pub mod motor;
pub mod sensor;

pub use engine::{run_simulation, Controller, Experiment, LogRow, NullController, OpenLoop, TrajectoryLog};
pub use integrator::{step, Drive, IntegratorConfig, Rk4};
pub use motor::{Demand, MotorModel, Signal};
pub use sensor::{quantize, FrameHistory, MeasurementFrame, SensorConfig};
