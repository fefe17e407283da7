//! Subsplit Bayesian networks over unrooted topologies.

pub mod clade;
mod io;
pub mod model;
pub mod support;

pub use clade::{Clade, ParentContext, Subsplit, MAX_TAXA};
pub use model::{SbnModel, SbnScorer};
pub use support::SbnSupport;
