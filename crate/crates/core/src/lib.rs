//! Toolkit for large-scale open-set classification experiments: protocol
//! generation from the WordNet hierarchy, the classifier score file format,
//! OSCR and confidence metrics, reference loss kernels and report emission.

pub mod losses;
pub mod metrics;
pub mod protocol;
pub mod report;
pub mod rng;
pub mod scores;
pub mod taxonomy;
pub mod toy;

pub use taxonomy::{ParentPolicy, SynsetId, Taxonomy, TaxonomyError};
