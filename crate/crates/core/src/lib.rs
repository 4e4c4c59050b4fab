//! DNA hybridisation yield prediction at desk scale.
//!
//! The crate covers the full pipeline: sequence primitives ([`seq`]),
//! semi-global alignment ([`align`]), a two-strand nearest-neighbour
//! equilibrium oracle ([`thermo`]), synthetic dataset generation
//! ([`dataset`]), feature extraction ([`features`]), discriminant baselines
//! and metrics ([`baseline`]), a small CNN framework ([`neural`]), k-mer
//! library screening ([`libdesign`]) and an inference benchmark harness
//! ([`bench`]).

pub mod align;
pub mod baseline;
pub mod bench;
pub mod dataset;
pub mod exec;
pub mod features;
pub mod libdesign;
pub mod neural;
pub mod seq;
pub mod thermo;

pub use align::{AlignParams, AlignResult};
pub use exec::Exec;
pub use seq::DnaSeq;
