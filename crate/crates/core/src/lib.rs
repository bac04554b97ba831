pub mod collision;
pub mod config;
pub mod constants;
pub mod error;
pub mod fit;
pub mod io;
pub mod kernel;
pub mod sphere;
pub mod model;
pub mod nonlinear;
pub mod norms;
pub mod problem;
pub mod scenario;
pub mod semigroup;
pub mod spatial;
pub mod velocity;
pub mod verify;

pub use error::{Error, Result};
