//! Simulated series-elastic-actuator pendulum rig with a PPO force-tracking
//! trainer, safety supervisor, PID baseline and experiment harness.

pub mod env;
pub mod nn;
pub mod pid;
pub mod plant;
pub mod ppo;
pub mod rig;
pub mod safety;
pub mod transport;
pub mod harness;
