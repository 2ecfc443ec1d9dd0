//! Dynamic sparse training engine built around Cannistraci-Hebb link
//! prediction: bipartite topology generators, soft link removal/regrowth,
//! network percolation, density-decay schedules, and a masked-MLP trainer.

pub mod error;
pub mod evolution;
pub mod harness;
pub mod linkpred;
pub mod netgen;
pub mod sampling;
pub mod schedule;
pub mod topology;
pub mod trainer;

pub use error::{Error, Result};
pub use topology::{BipartiteMask, DegreeProfile, LinkSet, MaskChain, PercolationReport};
