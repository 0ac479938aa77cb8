//! Attention option-critic (AOC) and option-critic (OC) on the four-rooms gridworld.

pub mod agent;
pub mod attention;
pub mod checkpoint;
pub mod env;
mod error;
pub mod harness;
pub mod metrics;
pub mod network;
pub mod transfer;

pub use agent::{Agent, AgentConfig, AttentionMode, Mode, Task, Trainer};
pub use attention::AttentionBank;
pub use env::{Action, EnvConfig, FourRooms, GoalSpec, GridLayout, HallwayId};
pub use error::{Error, Result};
pub use network::{NetShape, NetworkParams, ParamGroup};
