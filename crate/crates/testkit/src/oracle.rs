//! Brute-force metapath means.
//!
//! Walks every oriented path of a metapath from `v` by recursion, collects
//! the distinct endpoints and averages over them. Only the graph's public
//! neighbor lookups are used.

use std::collections::BTreeSet;

use hettree_core::{HetGraph, Metapath};

use crate::{Result, TestkitError};

#[derive(Clone, Debug, PartialEq)]
pub struct OracleMeans {
    pub features: Vec<f64>,
    /// Present when the metapath is a label metapath.
    pub labels: Option<Vec<f64>>,
}

struct Walk<'a> {
    g: &'a HetGraph,
    p: &'a Metapath,
    v: usize,
    budget: usize,
    used: usize,
    endpoints: BTreeSet<usize>,
}

impl Walk<'_> {
    fn go(&mut self, node: usize, depth: usize) -> Result<()> {
        let Some(step) = self.p.steps.get(depth) else {
            self.endpoints.insert(node);
            return Ok(());
        };
        for &u in self.g.neighbors(node, &step.relation, step.orientation)? {
            self.used += 1;
            if self.used > self.budget {
                return Err(TestkitError::Budget {
                    node: self.v,
                    metapath: self.p.display_name.clone(),
                    budget: self.budget,
                });
            }
            self.go(u as usize, depth + 1)?;
        }
        Ok(())
    }
}

fn mean<F: Fn(usize) -> Vec<f64>>(set: &BTreeSet<usize>, width: usize, row: F) -> Vec<f64> {
    let mut acc = vec![0.0; width];
    for &u in set {
        for (a, x) in acc.iter_mut().zip(row(u)) {
            *a += x;
        }
    }
    if !set.is_empty() {
        for a in &mut acc {
            *a /= set.len() as f64;
        }
    }
    acc
}

/// Means of `p` at target node `v`. Labels are visible only for nodes in
/// `visible` (the train split when `None`).
pub fn oracle_aggregate(
    g: &HetGraph,
    p: &Metapath,
    v: usize,
    visible: Option<&[usize]>,
    budget: usize,
) -> Result<OracleMeans> {
    let schema = g.schema();
    let end = schema.type_index(&p.endpoint_type)?;
    let target = schema.target_index();
    let mut walk = Walk {
        g,
        p,
        v,
        budget,
        used: 0,
        endpoints: BTreeSet::new(),
    };
    walk.go(v, 0)?;
    let endpoints = walk.endpoints;

    let x = g.features(end);
    let mut feature_set = endpoints.clone();
    if end == target {
        feature_set.insert(v);
    }
    let features = mean(&feature_set, x.cols(), |u| x.row(u).iter().map(|&f| f as f64).collect());

    let labels = if end == target && !p.steps.is_empty() {
        let visible: BTreeSet<usize> = visible.unwrap_or(&g.splits().train).iter().copied().collect();
        let c = g.labels().num_classes;
        let mut label_set = endpoints;
        label_set.remove(&v);
        Some(mean(&label_set, c, |u| {
            let mut row = vec![0.0; c];
            if visible.contains(&u) {
                for &k in &g.labels().classes[u] {
                    row[k] = 1.0;
                }
            }
            row
        }))
    } else {
        None
    };
    Ok(OracleMeans { features, labels })
}
