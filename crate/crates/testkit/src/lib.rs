//! Synthetic datasets and independent reference implementations used to
//! check `hettree-core`.
//!
//! * [`synth`] plants classes in a random heterogeneous graph.
//! * [`oracle`] recomputes metapath means by brute-force path enumeration.
//! * [`gradcheck`] compares tape gradients with central differences.

pub mod gradcheck;
pub mod oracle;
pub mod schemas;
pub mod synth;

pub use gradcheck::{finite_diff_check, FdReport, Objective};
pub use oracle::{oracle_aggregate, OracleMeans};
pub use synth::{gen_synthetic, generate, generate_forest, SyntheticSpec};

#[derive(Debug, thiserror::Error)]
pub enum TestkitError {
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error("relation {relation}: drew {found} distinct edges of {wanted} before giving up")]
    Exhausted {
        relation: String,
        wanted: usize,
        found: usize,
    },
    #[error("oracle budget of {budget} path expansions exceeded at node {node} for {metapath}")]
    Budget {
        node: usize,
        metapath: String,
        budget: usize,
    },
    #[error(transparent)]
    Core(#[from] hettree_core::Error),
}

pub type Result<T, E = TestkitError> = std::result::Result<T, E>;
