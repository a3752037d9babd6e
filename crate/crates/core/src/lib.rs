//! Classification of ultrasound envelope patches into fully developed
//! speckle (FDS) and low-density scatterers (LDS).

pub mod baselines;
pub mod envstats;
pub mod error;
pub mod evaluation;
pub mod neural;
pub mod pipeline;
pub mod rng;
pub mod specklesim;
pub mod training;

pub use error::{QusError, Result};
pub use specklesim::{EnvelopePatch, Label};
