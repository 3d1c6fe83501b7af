//! Planted-class heterogeneous graphs.
//!
//! Every node of every type gets a latent class; target classes are
//! balanced. Each edge picks its source uniformly and, with probability
//! `beta`, a destination of the same class (otherwise any destination).
//! Features are `beta * mu[type][class] + (1 - beta + noise) * eps` with
//! standard normal `mu` and `eps`.

use std::collections::HashSet;
use std::path::Path;

use hettree_core::hetgraph::{write_dataset, GraphParts, Labels, Splits};
use hettree_core::tensor::Matrix;
use hettree_core::{HetGraph, Schema};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::{Result, TestkitError};

#[derive(Clone, Debug)]
pub struct SyntheticSpec {
    pub schema: Schema,
    /// Per node type, schema order.
    pub nodes: Vec<usize>,
    /// Per relation, schema order.
    pub edges: Vec<usize>,
    pub num_classes: usize,
    /// Class signal in `[0, 1]`: edge assortativity and feature mean weight.
    pub beta: f64,
    /// Extra feature noise scale on top of `1 - beta`.
    pub noise: f64,
    pub seed: u64,
    /// Train and validation fractions of the target nodes; the rest is test.
    pub train_frac: f64,
    pub val_frac: f64,
}

impl SyntheticSpec {
    /// `n` nodes per type and `m` edges per relation.
    pub fn uniform(schema: Schema, n: usize, m: usize, beta: f64, seed: u64) -> Self {
        let num_classes = schema.num_classes.unwrap_or(2);
        SyntheticSpec {
            nodes: vec![n; schema.node_types.len()],
            edges: vec![m; schema.relations.len()],
            schema,
            num_classes,
            beta,
            noise: 0.0,
            seed,
            train_frac: 0.5,
            val_frac: 0.25,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        let bad = |m: String| Err(TestkitError::Spec(m));
        if self.nodes.len() != self.schema.node_types.len() || self.edges.len() != self.schema.relations.len() {
            return bad("one node count per type and one edge count per relation".into());
        }
        if self.nodes.contains(&0) || self.edges.contains(&0) {
            return bad("counts must be positive".into());
        }
        if self.num_classes == 0 {
            return bad("need at least one class".into());
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad(format!("beta {} outside [0, 1]", self.beta));
        }
        if self.noise < 0.0 {
            return bad("noise must be nonnegative".into());
        }
        if self.train_frac < 0.0 || self.val_frac < 0.0 || self.train_frac + self.val_frac > 1.0 {
            return bad("split fractions must be nonnegative and sum to at most 1".into());
        }
        for (r, rel) in self.schema.relations.iter().enumerate() {
            let s = self.schema.type_index(&rel.src)?;
            let d = self.schema.type_index(&rel.dst)?;
            let pairs = self.nodes[s] as u128 * self.nodes[d] as u128;
            if self.edges[r] as u128 > pairs {
                return bad(format!("{} edges requested for {} with only {pairs} pairs", self.edges[r], rel.name));
            }
        }
        Ok(())
    }
}

fn balanced_classes(n: usize, c: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut classes: Vec<usize> = (0..n).map(|i| i % c).collect();
    classes.shuffle(rng);
    classes
}

/// Builds the graph in memory.
pub fn generate(spec: &SyntheticSpec) -> Result<HetGraph> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let c = spec.num_classes;
    let schema = &spec.schema;

    let classes: Vec<Vec<usize>> = spec.nodes.iter().map(|&n| balanced_classes(n, c, &mut rng)).collect();
    let members: Vec<Vec<Vec<u32>>> = classes
        .iter()
        .map(|cl| {
            let mut m = vec![Vec::new(); c];
            for (v, &k) in cl.iter().enumerate() {
                m[k].push(v as u32);
            }
            m
        })
        .collect();

    let mut features = Vec::with_capacity(spec.nodes.len());
    for (t, def) in schema.node_types.iter().enumerate() {
        let dim = def.feature_dim;
        let means: Vec<Vec<f64>> = (0..c)
            .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let scale = 1.0 - spec.beta + spec.noise;
        let mut x = Matrix::zeros(spec.nodes[t], dim);
        for v in 0..spec.nodes[t] {
            let mu = &means[classes[t][v]];
            for (j, out) in x.row_mut(v).iter_mut().enumerate() {
                let eps: f64 = rng.sample(StandardNormal);
                *out = (spec.beta * mu[j] + scale * eps) as f32;
            }
        }
        features.push(x);
    }

    let mut edges = Vec::with_capacity(schema.relations.len());
    for (r, rel) in schema.relations.iter().enumerate() {
        let s_t = schema.type_index(&rel.src)?;
        let d_t = schema.type_index(&rel.dst)?;
        let wanted = spec.edges[r];
        let mut seen = HashSet::with_capacity(wanted);
        let mut list = Vec::with_capacity(wanted);
        let max_attempts = 50 * wanted + 1000;
        let mut attempts = 0;
        while list.len() < wanted {
            if attempts == max_attempts {
                return Err(TestkitError::Exhausted {
                    relation: rel.name.clone(),
                    wanted,
                    found: list.len(),
                });
            }
            attempts += 1;
            let s = rng.random_range(0..spec.nodes[s_t]);
            let same = &members[d_t][classes[s_t][s]];
            let d = if !same.is_empty() && rng.random_bool(spec.beta) {
                same[rng.random_range(0..same.len())]
            } else {
                rng.random_range(0..spec.nodes[d_t] as u32)
            };
            if seen.insert((s as u32, d)) {
                list.push((s as u32, d));
            }
        }
        edges.push(list);
    }

    let target = schema.target_index();
    let n_target = spec.nodes[target];
    let mut order: Vec<usize> = (0..n_target).collect();
    order.shuffle(&mut rng);
    let n_train = (spec.train_frac * n_target as f64).round() as usize;
    let n_val = ((spec.val_frac * n_target as f64).round() as usize).min(n_target - n_train);
    let split = |range: std::ops::Range<usize>| {
        let mut ids = order[range].to_vec();
        ids.sort_unstable();
        ids
    };
    let splits = Splits {
        train: split(0..n_train),
        val: split(n_train..n_train + n_val),
        test: split(n_train + n_val..n_target),
    };

    let mut schema = schema.clone();
    schema.num_classes = Some(c);
    schema.multi_label = false;
    Ok(HetGraph::from_parts(GraphParts {
        schema,
        node_counts: spec.nodes.clone(),
        edges,
        features,
        labels: Labels {
            num_classes: c,
            multi_label: false,
            classes: classes[target].iter().map(|&k| vec![k]).collect(),
        },
        splits,
    })?)
}

/// Random forest over all nodes of all types: each node, in random order,
/// attaches by one edge to a random earlier node of a type some relation
/// joins it to. Features are standard normal, labels balanced.
pub fn generate_forest(schema: &Schema, nodes: &[usize], num_classes: usize, seed: u64) -> Result<HetGraph> {
    let spec = SyntheticSpec {
        schema: schema.clone(),
        nodes: nodes.to_vec(),
        edges: vec![1; schema.relations.len()],
        num_classes,
        beta: 0.0,
        noise: 0.0,
        seed,
        train_frac: 0.5,
        val_frac: 0.25,
    };
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all: Vec<(usize, u32)> = nodes
        .iter()
        .enumerate()
        .flat_map(|(t, &n)| (0..n as u32).map(move |v| (t, v)))
        .collect();
    all.shuffle(&mut rng);
    let ends: Vec<(usize, usize)> = schema
        .relations
        .iter()
        .map(|r| Ok((schema.type_index(&r.src)?, schema.type_index(&r.dst)?)))
        .collect::<Result<_>>()?;
    let mut edges = vec![Vec::new(); schema.relations.len()];
    let mut placed: Vec<Vec<u32>> = vec![Vec::new(); nodes.len()];
    for &(t, v) in &all {
        // (relation, new node is source, partner type)
        let options: Vec<(usize, bool, usize)> = ends
            .iter()
            .enumerate()
            .flat_map(|(r, &(s, d))| [(r, true, s, d), (r, false, d, s)])
            .filter(|&(_, _, own, other)| own == t && !placed[other].is_empty())
            .map(|(r, new_is_src, _, other)| (r, new_is_src, other))
            .collect();
        if !options.is_empty() {
            let (r, new_is_src, other) = options[rng.random_range(0..options.len())];
            let u = placed[other][rng.random_range(0..placed[other].len())];
            edges[r].push(if new_is_src { (v, u) } else { (u, v) });
        }
        placed[t].push(v);
    }
    let features = schema
        .node_types
        .iter()
        .zip(nodes)
        .map(|(def, &n)| Matrix::from_fn(n, def.feature_dim, |_, _| rng.sample::<f32, _>(StandardNormal)))
        .collect();
    let target = schema.target_index();
    let n_target = nodes[target];
    let classes = balanced_classes(n_target, num_classes, &mut rng);
    let mut order: Vec<usize> = (0..n_target).collect();
    order.shuffle(&mut rng);
    let mut train = order[..n_target / 2].to_vec();
    let mut test = order[n_target / 2..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    let mut schema = schema.clone();
    schema.num_classes = Some(num_classes);
    Ok(HetGraph::from_parts(GraphParts {
        schema,
        node_counts: nodes.to_vec(),
        edges,
        features,
        labels: Labels {
            num_classes,
            multi_label: false,
            classes: classes.into_iter().map(|k| vec![k]).collect(),
        },
        splits: Splits {
            train,
            val: Vec::new(),
            test,
        },
    })?)
}

/// Generates and writes a dataset directory readable by
/// [`hettree_core::hetgraph::load_graph`].
pub fn gen_synthetic(spec: &SyntheticSpec, dir: &Path) -> Result<HetGraph> {
    let g = generate(spec)?;
    write_dataset(dir, &g)?;
    Ok(g)
}
