//! Heterogeneous-graph node classification over a semantic tree of metapaths.
//!
//! The pipeline has an offline half and a trainable half:
//!
//! 1. [`hetgraph`] loads a typed multi-relation graph.
//! 2. [`metapath`] enumerates every metapath up to `k` hops from the target
//!    type and arranges them in a prefix tree (the semantic tree).
//! 3. [`aggregate`] averages neighbor features along every metapath, and
//!    training labels along metapaths that return to the target type, with
//!    the node itself excluded from its own label average.
//! 4. [`model`] transforms each metapath table, folds the tree bottom-up
//!    with subtree attention and predicts with residual heads.
//! 5. [`train`] fits the model and reports micro/macro F1, accuracy and AUC.

pub mod aggregate;
pub mod error;
#[cfg(test)]
mod fixtures;
pub mod hetgraph;
pub mod htft;
pub mod metapath;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod train;

pub use aggregate::{AggregateMode, AggregateOptions, AggregatedTable};
pub use error::{Error, Result};
pub use hetgraph::{FeaturelessPolicy, HetGraph, LoadOptions, Orientation, Schema};
pub use metapath::{Metapath, SemanticTree, Step};
pub use model::{HetTreeModel, ModelConfig, Variant};
pub use train::{Metrics, TrainConfig};
