pub mod bench;
pub mod error;
pub mod evalharness;
pub mod lpcore;
pub mod par;
pub mod regress;
pub mod rng;
pub mod scenario;
pub mod twostage;

pub use error::{Error, Result};
