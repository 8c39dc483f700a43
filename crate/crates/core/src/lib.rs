//! Multi-turn policy optimization from trajectory-level rewards on small
//! layered MDPs, with exact oracles for every update.
pub mod checks;
pub mod error;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod optimizers;
pub mod policy;
pub mod rng;
pub mod rollout;
pub mod scalar;
pub mod theory;
pub mod turn_mdp;

pub use error::{Error, Result};
pub use scalar::Real;

pub type MdpF64 = turn_mdp::TurnMdp<f64>;
pub type MdpF32 = turn_mdp::TurnMdp<f32>;
pub type PolicyF64 = policy::Policy<f64>;
pub type PolicyF32 = policy::Policy<f32>;
