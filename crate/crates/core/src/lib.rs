//! Model-mediated teleoperation learning lab.
//!
//! Demonstrated reaches are encoded as dynamic movement primitives on the
//! input side, sent over a delayed channel and rebuilt on the avatar side,
//! where episodic policy search (PI², PoWER, eNAC) adapts them until a
//! kinematic grasp simulation reports success.

pub mod cost;
pub mod dmp;
pub mod error;
pub mod harness;
pub mod policy;
pub mod rotation;
pub mod sim;
pub mod studies;
pub mod trajectory;

pub use error::{Error, Result};
