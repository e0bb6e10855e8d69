//! Generative model families.

pub mod gsc;
pub mod linear;
pub mod maxcauses;
pub mod mixture;

pub use gsc::{Gsc, GscParams, GscStats};
pub use linear::{DiscreteKind, DiscretePrior, LinearDiscrete, LinearParams, LinearStats};
pub use maxcauses::{MaxCauses, McaParams, McaStats, Superposition};
pub use mixture::{Gmm, GmmParams, MixtureStats, Pmm, PmmParams};
