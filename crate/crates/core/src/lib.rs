pub mod acceptance;
pub mod density;
pub mod dynamics;
pub mod energy;
pub mod error;
pub mod io;
pub mod lattice;
pub mod linalg;
pub mod models;
pub mod noise;
pub mod quadrature;
pub mod rng;
pub mod stats;
pub mod timeop;

pub use error::{Error, Result};
