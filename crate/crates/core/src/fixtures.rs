//! Small graphs shared by unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::hetgraph::{GraphParts, HetGraph, Labels, NodeTypeDef, RelationDef, Schema, Splits};
use crate::tensor::Matrix;

pub fn ty(name: &str, dim: usize) -> NodeTypeDef {
    NodeTypeDef {
        name: name.into(),
        feature_dim: dim,
        num_nodes: None,
    }
}

pub fn rel(name: &str, abbrev: &str, src: &str, dst: &str) -> RelationDef {
    RelationDef {
        name: name.into(),
        abbrev: abbrev.into(),
        src: src.into(),
        dst: dst.into(),
    }
}

pub fn email_schema(dim: usize) -> Schema {
    Schema {
        node_types: ["Sender", "Domain", "Message", "Recipient", "IP"]
            .into_iter()
            .map(|n| ty(n, dim))
            .collect(),
        relations: vec![
            rel("s_has_domain_of", "H", "Sender", "Domain"),
            rel("r_has_domain_of", "D", "Recipient", "Domain"),
            rel("p1_sends", "O", "Sender", "Message"),
            rel("p2_sends", "T", "Sender", "Message"),
            rel("receives", "R", "Message", "Recipient"),
            rel("is_sent_from", "F", "Message", "IP"),
        ],
        target_type: "Sender".into(),
        num_classes: Some(2),
        multi_label: false,
    }
}

/// Random graph over `schema`: `n` nodes per type, each possible edge kept
/// with probability `p`, features uniform in [-1, 1], balanced labels and a
/// half/quarter/quarter split.
pub fn random_graph(schema: Schema, n: usize, p: f64, seed: u64) -> HetGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = vec![n; schema.node_types.len()];
    let features = schema
        .node_types
        .iter()
        .map(|t| Matrix::from_fn(n, t.feature_dim, |_, _| rng.random_range(-1.0f32..1.0)))
        .collect();
    let edges = schema
        .relations
        .iter()
        .map(|_| {
            let mut e = Vec::new();
            for s in 0..n as u32 {
                for d in 0..n as u32 {
                    if rng.random_bool(p) {
                        e.push((s, d));
                    }
                }
            }
            e
        })
        .collect();
    let c = schema.num_classes.unwrap_or(2);
    let labels = Labels {
        num_classes: c,
        multi_label: false,
        classes: (0..n).map(|v| vec![v % c]).collect(),
    };
    let splits = Splits {
        train: (0..n / 2).collect(),
        val: (n / 2..3 * n / 4).collect(),
        test: (3 * n / 4..n).collect(),
    };
    HetGraph::from_parts(GraphParts {
        schema,
        node_counts: counts,
        edges,
        features,
        labels,
        splits,
    })
    .unwrap()
}
