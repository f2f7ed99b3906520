//! Planning of multi-flyby inspection tours over constellation orbital planes.

pub mod astro;
pub mod cli;
pub mod inspection;
pub mod refine;
pub mod relative;
pub mod scenario;
pub mod search;
pub mod transfer;
pub mod verify;
