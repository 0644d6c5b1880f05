//! Fresh approximate nearest neighbor search over a changing point set.
//!
//! The engine keeps recent inserts in small in-memory graphs
//! ([`graph::DynGraph`]), the bulk of the data in an SSD-resident long-term
//! index ([`lti::LtiIndex`]) searched with PQ-guided beam search, and folds
//! the two together with a three-phase streaming merge ([`merge`]).
//! [`system::FreshSystem`] ties these together behind an
//! insert/delete/search API with a redo log for crash recovery.

pub mod dataset;
pub mod distance;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod lti;
pub mod merge;
pub mod pq;
mod io_util;
pub mod recall;
pub mod system;

pub use dataset::{load_vectors, VectorFormat, VectorSet};
pub use distance::l2_distance;
pub use error::{Error, Result};
pub use graph::{build_static, DeletePolicy, DynGraph, GraphParams, SearchResult};
pub use lti::{write_lti, BeamStats, LtiIndex};
pub use merge::{estimate_delete_cost, merge, MergeJob, MergeOptions, MergeReport};
pub use recall::{brute_force_knn, recall_at_k, GroundTruth, GroundTruthRow, Neighbor, RecallReport};
pub use system::{FreshSystem, SystemConfig};
