//! Joint parametric/contextual policy optimization on synthetic
//! knowledge-conflict tasks.

pub mod advantage;
pub mod error;
pub mod evalsuite;
pub mod experiment;
pub mod objective;
pub mod policy;
pub mod rng;
pub mod rollout;
pub mod trainer;
pub mod world;

pub use error::{Error, Result};
