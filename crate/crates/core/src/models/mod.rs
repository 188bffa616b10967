//! Physical toy models that reproduce the collapse dynamics: a thermal
//! bath of briefly freed Planck-cell spins, and a tower of heavy scalar
//! fields each coupled for one Planck time.

pub mod constants;
pub mod fields;
pub mod spins;

pub use constants::PhysicalConstants;
