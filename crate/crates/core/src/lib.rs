//! Simulation of a contact-area-variable fingertip: linkage kinematics,
//! camera-based contact sensing, load-dependent friction, the deadband
//! friction-mode controller and a two-finger gripper plant.

pub mod cli;
pub mod config;
pub mod control;
pub mod format;
pub mod friction;
pub mod kinematics;
pub mod plant;
pub mod sensing;

pub use config::Config;
pub use control::{control_step, dual_finger_step, ControllerConfig, FingerCommand, TargetMode};
pub use friction::{ContactState, Direction, FrictionParams};
pub use kinematics::{CavsGeometry, JointState, Linkage};
pub use plant::{run_scenario, ObjectModel, PlantState, Scenario, World};
pub use sensing::CameraModel;
