//! Schemas used across tests.

use hettree_core::hetgraph::{NodeTypeDef, RelationDef};
use hettree_core::Schema;

fn ty(name: &str, dim: usize) -> NodeTypeDef {
    NodeTypeDef {
        name: name.into(),
        feature_dim: dim,
        num_nodes: None,
    }
}

fn rel(name: &str, abbrev: &str, src: &str, dst: &str) -> RelationDef {
    RelationDef {
        name: name.into(),
        abbrev: abbrev.into(),
        src: src.into(),
        dst: dst.into(),
    }
}

/// Sender / Domain / Message / Recipient / IP graph with target `Sender`.
pub fn email_schema(dim: usize, num_classes: usize) -> Schema {
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
        num_classes: Some(num_classes),
        multi_label: false,
    }
}

/// Target `A` linked to `B` by `r`.
pub fn two_type_schema(dim: usize, num_classes: usize) -> Schema {
    Schema {
        node_types: vec![ty("A", dim), ty("B", dim)],
        relations: vec![rel("links", "r", "A", "B")],
        target_type: "A".into(),
        num_classes: Some(num_classes),
        multi_label: false,
    }
}

/// Target `P` with a self relation `c` and an outgoing relation `w` to `Q`,
/// so metapaths mix forward, reversed and primed steps.
pub fn cite_schema(dim: usize, num_classes: usize) -> Schema {
    Schema {
        node_types: vec![ty("P", dim), ty("Q", dim)],
        relations: vec![rel("cites", "c", "P", "P"), rel("writes", "w", "P", "Q")],
        target_type: "P".into(),
        num_classes: Some(num_classes),
        multi_label: false,
    }
}
