pub mod analysis;
pub mod coalescent;
pub mod error;
pub mod experiment;
pub mod kernel;
pub mod lattice;
pub mod meeting;
pub mod rng;
pub mod semigroup;
pub mod stats;
pub mod voter;
pub mod wf;
pub mod zoo;

pub use error::{Error, Result};
pub use kernel::{Kernel, PairLaw, PairMeasure, PairSampler};
pub use lattice::Lattice;
