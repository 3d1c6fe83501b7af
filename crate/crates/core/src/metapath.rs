//! Metapath enumeration and the semantic tree.
//!
//! A metapath is a sequence of oriented relation steps starting at the target
//! type. Walking a relation against its declared direction is a `Reverse`
//! step, so `OO` in the email schema is "p1_sends forward, then p1_sends
//! reverse". For relations whose two endpoints share a type, both
//! orientations start from the same type; the reverse step then displays with
//! a trailing `'` so the two remain distinguishable.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hetgraph::{Orientation, Schema};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Step {
    pub relation: String,
    pub orientation: Orientation,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metapath {
    pub steps: Vec<Step>,
    pub display_name: String,
    pub endpoint_type: String,
}

pub const INIT: &str = "init";

impl Metapath {
    pub fn init(schema: &Schema) -> Self {
        Metapath {
            steps: Vec::new(),
            display_name: INIT.to_string(),
            endpoint_type: schema.target_type.clone(),
        }
    }

    /// Appends one step; `None` if the relation does not leave the current
    /// endpoint type in that orientation.
    pub fn extend(&self, schema: &Schema, rel: usize, orient: Orientation) -> Option<Self> {
        let (src, dst) = schema.oriented_endpoints(rel, orient);
        if schema.node_types[src].name != self.endpoint_type {
            return None;
        }
        let def = &schema.relations[rel];
        let mut token = def.abbrev.clone();
        if orient == Orientation::Reverse && def.src == def.dst {
            token.push('\'');
        }
        let mut steps = self.steps.clone();
        steps.push(Step {
            relation: def.name.clone(),
            orientation: orient,
        });
        let display_name = if self.is_init() {
            token
        } else {
            format!("{}{token}", self.display_name)
        };
        Some(Metapath {
            steps,
            display_name,
            endpoint_type: schema.node_types[dst].name.clone(),
        })
    }

    pub fn is_init(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn hops(&self) -> usize {
        self.steps.len()
    }

    /// Display tokens: one per step (an abbrev, possibly primed).
    pub fn tokens(&self) -> Vec<String> {
        if self.is_init() {
            return Vec::new();
        }
        let mut out: Vec<String> = Vec::new();
        for ch in self.display_name.chars() {
            if ch == '\'' {
                if let Some(last) = out.last_mut() {
                    last.push(ch);
                }
            } else {
                out.push(ch.to_string());
            }
        }
        out
    }

    /// Checks the composability invariant against a schema.
    pub fn validate(&self, schema: &Schema) -> Result<()> {
        let mut at = schema.target_type.clone();
        for step in &self.steps {
            let r = schema.relation_index(&step.relation)?;
            let (src, dst) = schema.oriented_endpoints(r, step.orientation);
            if schema.node_types[src].name != at {
                return Err(Error::Schema(format!(
                    "metapath {} is not composable at step {}",
                    self.display_name, step.relation
                )));
            }
            at = schema.node_types[dst].name.clone();
        }
        if at != self.endpoint_type {
            return Err(Error::Schema(format!(
                "metapath {} ends at {at}, not {}",
                self.display_name, self.endpoint_type
            )));
        }
        if self.tokens().len() != self.hops() {
            return Err(Error::Schema(format!(
                "metapath {} display does not match its steps",
                self.display_name
            )));
        }
        Ok(())
    }
}

fn canonical_order(a: &Metapath, b: &Metapath) -> std::cmp::Ordering {
    a.hops()
        .cmp(&b.hops())
        .then_with(|| a.display_name.cmp(&b.display_name))
}

/// All metapaths with at most `k` steps from the target type, ordered by hop
/// count and then by display name. `init` is always first.
pub fn enumerate_metapaths(schema: &Schema, k: usize) -> Vec<Metapath> {
    let mut all = vec![Metapath::init(schema)];
    let mut frontier = all.clone();
    for _ in 0..k {
        let mut next = Vec::new();
        for p in &frontier {
            for rel in 0..schema.relations.len() {
                for orient in [Orientation::Forward, Orientation::Reverse] {
                    if let Some(q) = p.extend(schema, rel, orient) {
                        next.push(q);
                    }
                }
            }
        }
        next.sort_by(canonical_order);
        all.extend(next.iter().cloned());
        frontier = next;
    }
    all
}

/// Metapaths ending at the target type, excluding `init`.
pub fn label_metapaths(paths: &[Metapath], target_type: &str) -> Vec<Metapath> {
    paths
        .iter()
        .filter(|p| !p.is_init() && p.endpoint_type == target_type)
        .cloned()
        .collect()
}

/// Prefix tree over metapaths: the parent of a path is its longest proper
/// prefix and the root is `init`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SemanticTree {
    nodes: Vec<Metapath>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    depth: usize,
}

impl SemanticTree {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Metapath] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &Metapath {
        &self.nodes[i]
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parent[i]
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub fn is_leaf(&self, i: usize) -> bool {
        self.children[i].is_empty()
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn index_of(&self, display_name: &str) -> Option<usize> {
        self.nodes.iter().position(|p| p.display_name == display_name)
    }

    /// Node indices with every child before its parent.
    pub fn bottom_up_order(&self) -> Vec<usize> {
        // Nodes are sorted by hop count, so reverse index order is a valid
        // reverse topological order.
        (0..self.nodes.len()).rev().collect()
    }

    /// Reorders one node's children; used to check child-order invariance.
    pub fn permute_children(&mut self, node: usize, order: &[usize]) -> Result<()> {
        let kids = &self.children[node];
        if order.len() != kids.len() || {
            let mut o = order.to_vec();
            o.sort_unstable();
            o != (0..kids.len()).collect::<Vec<_>>()
        } {
            return Err(Error::Shape("child permutation has the wrong shape".into()));
        }
        self.children[node] = order.iter().map(|&i| kids[i]).collect();
        Ok(())
    }

    /// Indented pre-order listing, one metapath per line:
    /// `<display_name> endpoint=<type> parent=<display_name>`.
    pub fn render(&self) -> Vec<String> {
        let mut lines = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![(self.root(), 0usize)];
        while let Some((i, level)) = stack.pop() {
            let p = &self.nodes[i];
            let parent = self.parent[i].map_or("-", |q| self.nodes[q].display_name.as_str());
            lines.push(format!(
                "{}{} endpoint={} parent={}",
                "  ".repeat(level),
                p.display_name,
                p.endpoint_type,
                parent
            ));
            for &c in self.children[i].iter().rev() {
                stack.push((c, level + 1));
            }
        }
        lines
    }
}

/// Builds the semantic tree. Input must be prefix-closed and contain `init`.
pub fn build_semantic_tree(paths: &[Metapath]) -> Result<SemanticTree> {
    let mut nodes = paths.to_vec();
    nodes.sort_by(canonical_order);
    nodes.dedup_by(|a, b| a.steps == b.steps);
    if nodes.first().is_none_or(|p| !p.is_init()) {
        return Err(Error::NotPrefixClosed("tree without init".into()));
    }
    let index: HashMap<&[Step], usize> = nodes
        .iter()
        .enumerate()
        .map(|(i, p)| (p.steps.as_slice(), i))
        .collect();
    let mut parent = vec![None; nodes.len()];
    let mut children = vec![Vec::new(); nodes.len()];
    for (i, p) in nodes.iter().enumerate().skip(1) {
        let prefix = &p.steps[..p.steps.len() - 1];
        let q = *index
            .get(prefix)
            .ok_or_else(|| Error::NotPrefixClosed(p.display_name.clone()))?;
        parent[i] = Some(q);
        children[q].push(i);
    }
    let depth = nodes.iter().map(Metapath::hops).max().unwrap_or(0);
    Ok(SemanticTree {
        nodes,
        parent,
        children,
        depth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hetgraph::{NodeTypeDef, RelationDef};

    fn ty(name: &str) -> NodeTypeDef {
        NodeTypeDef {
            name: name.into(),
            feature_dim: 1,
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

    pub(crate) fn email_schema() -> Schema {
        Schema {
            node_types: ["Sender", "Domain", "Message", "Recipient", "IP"]
                .into_iter()
                .map(ty)
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
            num_classes: None,
            multi_label: false,
        }
    }

    fn names(paths: &[Metapath]) -> Vec<&str> {
        paths.iter().map(|p| p.display_name.as_str()).collect()
    }

    #[test]
    fn email_schema_has_fourteen_metapaths() {
        let s = email_schema();
        let paths = enumerate_metapaths(&s, 2);
        let mut got = names(&paths);
        got.sort_unstable();
        let mut want = vec![
            "init", "O", "T", "H", "OO", "OT", "OR", "OF", "TT", "TO", "TR", "TF", "HH", "HD",
        ];
        want.sort_unstable();
        assert_eq!(got, want);
        assert_eq!(paths[0].display_name, "init");
        for p in &paths {
            p.validate(&s).unwrap();
        }
    }

    #[test]
    fn label_paths_follow_the_definition() {
        let s = email_schema();
        let paths = enumerate_metapaths(&s, 2);
        let mut got = names(&label_metapaths(&paths, "Sender"))
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>();
        got.sort();
        assert_eq!(got, ["HH", "OO", "OT", "TO", "TT"]);
        assert!(label_metapaths(&enumerate_metapaths(&s, 1), "Sender").is_empty());
        assert!(label_metapaths(&enumerate_metapaths(&s, 0), "Sender").is_empty());
    }

    #[test]
    fn zero_hops_is_init_only() {
        let paths = enumerate_metapaths(&email_schema(), 0);
        assert_eq!(names(&paths), ["init"]);
        let tree = build_semantic_tree(&paths).unwrap();
        assert_eq!(tree.len(), 1);
        assert_eq!(tree.render(), ["init endpoint=Sender parent=-"]);
    }

    #[test]
    fn single_relation_chain() {
        let s = Schema {
            node_types: vec![ty("A"), ty("B")],
            relations: vec![rel("r", "r", "A", "B")],
            target_type: "A".into(),
            num_classes: None,
            multi_label: false,
        };
        let paths = enumerate_metapaths(&s, 2);
        assert_eq!(names(&paths), ["init", "r", "rr"]);
        assert_eq!(paths[2].steps[1].orientation, Orientation::Reverse);
        let tree = build_semantic_tree(&paths).unwrap();
        assert_eq!(tree.depth(), 2);
        assert_eq!(tree.children(0), &[1]);
        assert_eq!(tree.children(1), &[2]);
        assert!(tree.is_leaf(2));
    }

    #[test]
    fn self_relation_reverse_step_is_primed() {
        let s = Schema {
            node_types: vec![ty("P")],
            relations: vec![rel("cites", "c", "P", "P")],
            target_type: "P".into(),
            num_classes: None,
            multi_label: false,
        };
        let paths = enumerate_metapaths(&s, 2);
        assert_eq!(names(&paths), ["init", "c", "c'", "c'c", "c'c'", "cc", "cc'"]);
        for p in &paths {
            p.validate(&s).unwrap();
            assert_eq!(p.tokens().len(), p.hops());
        }
        assert_eq!(label_metapaths(&paths, "P").len(), 6);
    }

    #[test]
    fn email_tree_shape() {
        let tree = build_semantic_tree(&enumerate_metapaths(&email_schema(), 2)).unwrap();
        let kids = |name: &str| {
            let i = tree.index_of(name).unwrap();
            let mut v: Vec<_> = tree
                .children(i)
                .iter()
                .map(|&c| tree.node(c).display_name.clone())
                .collect();
            v.sort();
            v
        };
        assert_eq!(kids("init"), ["H", "O", "T"]);
        assert_eq!(kids("O"), ["OF", "OO", "OR", "OT"]);
        assert_eq!(kids("T"), ["TF", "TO", "TR", "TT"]);
        assert_eq!(kids("H"), ["HD", "HH"]);
        assert_eq!(tree.render().len(), 14);
    }

    #[test]
    fn missing_prefix_is_rejected() {
        let s = email_schema();
        let paths: Vec<_> = enumerate_metapaths(&s, 2)
            .into_iter()
            .filter(|p| p.display_name != "O")
            .collect();
        assert!(matches!(
            build_semantic_tree(&paths),
            Err(Error::NotPrefixClosed(_))
        ));
    }
}
