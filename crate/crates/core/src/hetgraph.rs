//! Typed multi-relation graph storage.
//!
//! Node ids are zero-based and per type. Every relation is kept as CSR in
//! both orientations so metapath steps can walk an edge either way.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashSet;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::htft;
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeTypeDef {
    pub name: String,
    pub feature_dim: usize,
    /// Required only for featureless types (no `features_<name>.bin`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_nodes: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationDef {
    pub name: String,
    pub abbrev: String,
    pub src: String,
    pub dst: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub node_types: Vec<NodeTypeDef>,
    pub relations: Vec<RelationDef>,
    pub target_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub multi_label: bool,
}

impl Schema {
    pub fn from_json(text: &str) -> Result<Self> {
        let schema: Schema =
            serde_json::from_str(text).map_err(|e| Error::parse("schema.json", e))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for t in &self.node_types {
            if !names.insert(t.name.as_str()) {
                return Err(Error::Schema(format!("duplicate node type {}", t.name)));
            }
        }
        let mut rel_names = HashSet::new();
        let mut abbrevs = HashSet::new();
        for r in &self.relations {
            if !rel_names.insert(r.name.as_str()) {
                return Err(Error::Schema(format!("duplicate relation {}", r.name)));
            }
            if r.abbrev.chars().count() != 1 || r.abbrev == "'" {
                return Err(Error::Schema(format!(
                    "relation {} abbrev {:?} must be a single character",
                    r.name, r.abbrev
                )));
            }
            if !abbrevs.insert(r.abbrev.as_str()) {
                return Err(Error::Schema(format!("duplicate abbrev {}", r.abbrev)));
            }
            for end in [&r.src, &r.dst] {
                if !names.contains(end.as_str()) {
                    return Err(Error::Schema(format!(
                        "relation {} names undeclared node type {end}",
                        r.name
                    )));
                }
            }
        }
        if !names.contains(self.target_type.as_str()) {
            return Err(Error::Schema(format!(
                "target type {} is not declared",
                self.target_type
            )));
        }
        Ok(())
    }

    pub fn type_index(&self, name: &str) -> Result<usize> {
        self.node_types
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| Error::UnknownNodeType(name.to_string()))
    }

    pub fn relation_index(&self, name: &str) -> Result<usize> {
        self.relations
            .iter()
            .position(|r| r.name == name)
            .ok_or_else(|| Error::UnknownRelation(name.to_string()))
    }

    pub fn target_index(&self) -> usize {
        self.type_index(&self.target_type)
            .expect("validated schema declares its target type")
    }

    pub fn feature_dim(&self, type_idx: usize) -> usize {
        self.node_types[type_idx].feature_dim
    }

    /// `(source type, destination type)` of relation `rel` walked in `orient`.
    pub fn oriented_endpoints(&self, rel: usize, orient: Orientation) -> (usize, usize) {
        let r = &self.relations[rel];
        let src = self.type_index(&r.src).expect("validated");
        let dst = self.type_index(&r.dst).expect("validated");
        match orient {
            Orientation::Forward => (src, dst),
            Orientation::Reverse => (dst, src),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Forward,
    Reverse,
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Orientation::Forward => "forward",
            Orientation::Reverse => "reverse",
        })
    }
}

/// Compressed sparse rows with ascending neighbor ids per row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Csr {
    offsets: Vec<usize>,
    targets: Vec<u32>,
}

impl Csr {
    /// Builds from edges already sorted by `(src, dst)` without duplicates.
    fn from_sorted(n_rows: usize, edges: impl Iterator<Item = (u32, u32)>, nnz: usize) -> Self {
        let mut offsets = vec![0usize; n_rows + 1];
        let mut targets = Vec::with_capacity(nnz);
        for (s, d) in edges {
            offsets[s as usize + 1] += 1;
            targets.push(d);
        }
        for i in 0..n_rows {
            offsets[i + 1] += offsets[i];
        }
        Csr { offsets, targets }
    }

    /// Transpose via counting sort; rows of the result stay ascending.
    fn transpose(&self, n_cols: usize) -> Self {
        let mut offsets = vec![0usize; n_cols + 1];
        for &d in &self.targets {
            offsets[d as usize + 1] += 1;
        }
        for i in 0..n_cols {
            offsets[i + 1] += offsets[i];
        }
        let mut cursor = offsets.clone();
        let mut targets = vec![0u32; self.targets.len()];
        for s in 0..self.n_rows() {
            for &d in self.row(s) {
                targets[cursor[d as usize]] = s as u32;
                cursor[d as usize] += 1;
            }
        }
        Csr { offsets, targets }
    }

    pub fn n_rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.targets.len()
    }

    pub fn row(&self, v: usize) -> &[u32] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn contains(&self, v: usize, u: u32) -> bool {
        self.row(v).binary_search(&u).is_ok()
    }
}

#[derive(Clone, Debug)]
pub struct RelationAdjacency {
    pub forward: Csr,
    pub reverse: Csr,
}

impl RelationAdjacency {
    pub fn oriented(&self, orient: Orientation) -> &Csr {
        match orient {
            Orientation::Forward => &self.forward,
            Orientation::Reverse => &self.reverse,
        }
    }
}

/// Labels of the target type. An empty class list marks an unlabeled node.
#[derive(Clone, Debug, PartialEq)]
pub struct Labels {
    pub num_classes: usize,
    pub multi_label: bool,
    pub classes: Vec<Vec<usize>>,
}

impl Labels {
    /// One-hot (single-label) or multi-hot row for `v`.
    pub fn indicator(&self, v: usize) -> Vec<f32> {
        let mut row = vec![0.0; self.num_classes];
        for &c in &self.classes[v] {
            row[c] = 1.0;
        }
        row
    }

    /// First class of each listed node, for single-label tasks.
    pub fn single(&self, nodes: &[usize]) -> Vec<usize> {
        nodes.iter().map(|&v| self.classes[v][0]).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    pub fn get(&self, name: &str) -> Result<&[usize]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(Error::Split(format!("unknown split {other}"))),
        }
    }
}

/// How featureless node types receive features at load time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeaturelessPolicy {
    /// Every node gets the all-ones vector of the declared width.
    Constant,
    /// Uniform `[-1, 1]` entries from a seeded generator.
    Random { seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LoadOptions {
    pub featureless: FeaturelessPolicy,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            featureless: FeaturelessPolicy::Constant,
        }
    }
}

/// Everything needed to assemble a graph in memory.
pub struct GraphParts {
    pub schema: Schema,
    pub node_counts: Vec<usize>,
    /// Per relation, in schema order.
    pub edges: Vec<Vec<(u32, u32)>>,
    pub features: Vec<Matrix<f32>>,
    pub labels: Labels,
    pub splits: Splits,
}

#[derive(Clone, Debug)]
pub struct HetGraph {
    schema: Schema,
    node_counts: Vec<usize>,
    adjacency: Vec<RelationAdjacency>,
    features: Vec<Matrix<f32>>,
    labels: Labels,
    splits: Splits,
}

impl HetGraph {
    /// Validates and assembles a graph. Edge lists may be unsorted; duplicate
    /// edges within one relation are rejected.
    pub fn from_parts(parts: GraphParts) -> Result<Self> {
        let GraphParts {
            schema,
            node_counts,
            edges,
            features,
            labels,
            splits,
        } = parts;
        schema.validate()?;
        let n_types = schema.node_types.len();
        if node_counts.len() != n_types || features.len() != n_types {
            return Err(Error::Shape("one node count and feature matrix per type".into()));
        }
        if edges.len() != schema.relations.len() {
            return Err(Error::Shape("one edge list per relation".into()));
        }
        for (t, def) in schema.node_types.iter().enumerate() {
            if node_counts[t] > u32::MAX as usize {
                return Err(Error::IndexOutOfRange(format!("too many {} nodes", def.name)));
            }
            let f = &features[t];
            if f.cols() != def.feature_dim {
                return Err(Error::FeatureDim {
                    node_type: def.name.clone(),
                    expected: def.feature_dim,
                    found: f.cols(),
                });
            }
            if f.rows() != node_counts[t] {
                return Err(Error::Shape(format!(
                    "features of {} have {} rows for {} nodes",
                    def.name,
                    f.rows(),
                    node_counts[t]
                )));
            }
        }

        let mut adjacency = Vec::with_capacity(edges.len());
        for (r, mut list) in edges.into_iter().enumerate() {
            let rel = &schema.relations[r];
            let (s_t, d_t) = schema.oriented_endpoints(r, Orientation::Forward);
            let (ns, nd) = (node_counts[s_t], node_counts[d_t]);
            if let Some(&(s, d)) = list
                .iter()
                .find(|&&(s, d)| s as usize >= ns || d as usize >= nd)
            {
                return Err(Error::IndexOutOfRange(format!(
                    "edge ({s}, {d}) in relation {} with {ns} {} and {nd} {} nodes",
                    rel.name, rel.src, rel.dst
                )));
            }
            list.sort_unstable();
            if let Some(w) = list.windows(2).find(|w| w[0] == w[1]) {
                return Err(Error::DuplicateEdge {
                    relation: rel.name.clone(),
                    src: w[0].0 as usize,
                    dst: w[0].1 as usize,
                });
            }
            let nnz = list.len();
            let forward = Csr::from_sorted(ns, list.into_iter(), nnz);
            let reverse = forward.transpose(nd);
            adjacency.push(RelationAdjacency { forward, reverse });
        }

        let target = schema.target_index();
        let n_target = node_counts[target];
        if labels.classes.len() != n_target {
            return Err(Error::Shape(format!(
                "{} label rows for {n_target} target nodes",
                labels.classes.len()
            )));
        }
        for (v, cs) in labels.classes.iter().enumerate() {
            if let Some(&c) = cs.iter().find(|&&c| c >= labels.num_classes) {
                return Err(Error::IndexOutOfRange(format!(
                    "class {c} of node {v} with {} classes",
                    labels.num_classes
                )));
            }
            if !labels.multi_label && cs.len() > 1 {
                return Err(Error::Parse {
                    context: "labels.csv".into(),
                    message: format!("node {v} has several classes in a single-label task"),
                });
            }
        }
        let mut seen = vec![None::<&str>; n_target];
        for (name, ids) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
            for &v in ids {
                if v >= n_target {
                    return Err(Error::IndexOutOfRange(format!(
                        "split {name} node {v} with {n_target} target nodes"
                    )));
                }
                if let Some(other) = seen[v] {
                    return Err(Error::Split(format!("node {v} is in both {other} and {name}")));
                }
                seen[v] = Some(name);
                if labels.classes[v].is_empty() && !labels.multi_label {
                    return Err(Error::Split(format!("{name} node {v} has no label")));
                }
            }
        }

        Ok(HetGraph {
            schema,
            node_counts,
            adjacency,
            features,
            labels,
            splits,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn node_count(&self, type_idx: usize) -> usize {
        self.node_counts[type_idx]
    }

    pub fn node_counts(&self) -> &[usize] {
        &self.node_counts
    }

    pub fn num_targets(&self) -> usize {
        self.node_counts[self.schema.target_index()]
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(|a| a.forward.nnz()).sum()
    }

    pub fn features(&self, type_idx: usize) -> &Matrix<f32> {
        &self.features[type_idx]
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    pub fn adjacency(&self, rel: usize, orient: Orientation) -> &Csr {
        self.adjacency[rel].oriented(orient)
    }

    /// Returns a copy with different labels (same shape rules apply).
    pub fn with_labels(&self, labels: Labels) -> Result<Self> {
        if labels.classes.len() != self.labels.classes.len() {
            return Err(Error::Shape("label count changed".into()));
        }
        let mut g = self.clone();
        g.labels = labels;
        Ok(g)
    }

    /// Neighbors of `v` under relation `rel`, ascending by id.
    pub fn neighbors(&self, v: usize, rel: &str, orient: Orientation) -> Result<&[u32]> {
        let r = self.schema.relation_index(rel)?;
        let csr = self.adjacency(r, orient);
        if v >= csr.n_rows() {
            let (src, _) = self.schema.oriented_endpoints(r, orient);
            return Err(Error::IndexOutOfRange(format!(
                "node {v} of type {} ({} nodes)",
                self.schema.node_types[src].name,
                csr.n_rows()
            )));
        }
        Ok(csr.row(v))
    }

    pub fn degree(&self, v: usize, rel: &str, orient: Orientation) -> Result<usize> {
        self.neighbors(v, rel, orient).map(<[u32]>::len)
    }

    /// Deterministic text digest: node counts, per-relation degree sequences
    /// hashed, per-type feature checksums.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for (t, def) in self.schema.node_types.iter().enumerate() {
            let mut h = DefaultHasher::new();
            for v in self.features[t].as_slice() {
                v.to_bits().hash(&mut h);
            }
            out.push_str(&format!(
                "type {} nodes={} features={:016x}\n",
                def.name,
                self.node_counts[t],
                h.finish()
            ));
        }
        for (r, def) in self.schema.relations.iter().enumerate() {
            let mut h = DefaultHasher::new();
            let f = &self.adjacency[r].forward;
            for v in 0..f.n_rows() {
                f.row(v).hash(&mut h);
            }
            out.push_str(&format!("relation {} edges={} adj={:016x}\n", def.name, f.nnz(), h.finish()));
        }
        out
    }
}

/// Loads and validates a dataset directory (see README for the layout).
pub fn load_graph(dir: &Path, opts: &LoadOptions) -> Result<HetGraph> {
    let schema = Schema::from_file(&dir.join("schema.json"))?;

    let mut node_counts = Vec::new();
    let mut features = Vec::new();
    for (t, def) in schema.node_types.iter().enumerate() {
        let path = dir.join(format!("features_{}.bin", def.name));
        if path.exists() {
            let f = htft::read_matrix(&path)?;
            if f.cols() != def.feature_dim {
                return Err(Error::FeatureDim {
                    node_type: def.name.clone(),
                    expected: def.feature_dim,
                    found: f.cols(),
                });
            }
            if let Some(n) = def.num_nodes {
                if n != f.rows() {
                    return Err(Error::Shape(format!(
                        "schema declares {n} {} nodes, features have {}",
                        def.name,
                        f.rows()
                    )));
                }
            }
            node_counts.push(f.rows());
            features.push(f);
        } else {
            let n = def.num_nodes.ok_or_else(|| Error::MissingFile(path.clone()))?;
            node_counts.push(n);
            features.push(featureless(n, def.feature_dim, opts.featureless, t));
        }
    }

    let mut edges = Vec::new();
    for rel in &schema.relations {
        let path = dir.join(format!("edges_{}.csv", rel.name));
        edges.push(read_edges(&path)?);
    }

    let target = schema.target_index();
    let n_target = node_counts[target];
    let labels = read_labels(&dir.join("labels.csv"), n_target, &schema)?;
    let splits = Splits {
        train: read_split(&dir.join("split_train.txt"))?,
        val: read_split(&dir.join("split_val.txt"))?,
        test: read_split(&dir.join("split_test.txt"))?,
    };

    HetGraph::from_parts(GraphParts {
        schema,
        node_counts,
        edges,
        features,
        labels,
        splits,
    })
}

fn featureless(n: usize, dim: usize, policy: FeaturelessPolicy, type_idx: usize) -> Matrix<f32> {
    match policy {
        FeaturelessPolicy::Constant => Matrix::filled(n, dim, 1.0),
        FeaturelessPolicy::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (type_idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            Matrix::from_fn(n, dim, |_, _| rng.random_range(-1.0f32..=1.0))
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_id(tok: &str, ctx: &Path, line: usize) -> Result<u32> {
    tok.trim().parse::<u32>().map_err(|e| Error::Parse {
        context: format!("{}:{}", ctx.display(), line + 1),
        message: format!("{tok:?}: {e}"),
    })
}

fn read_edges(path: &Path) -> Result<Vec<(u32, u32)>> {
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "src,dst" => {}
        _ => return Err(Error::parse(path.display().to_string(), "expected header src,dst")),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (s, d) = line
            .split_once(',')
            .ok_or_else(|| Error::parse(format!("{}:{}", path.display(), i + 1), "expected src,dst"))?;
        out.push((parse_id(s, path, i)?, parse_id(d, path, i)?));
    }
    Ok(out)
}

fn read_labels(path: &Path, n_target: usize, schema: &Schema) -> Result<Labels> {
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "node,classes" => {}
        _ => return Err(Error::parse(path.display().to_string(), "expected header node,classes")),
    }
    let mut classes = vec![Vec::new(); n_target];
    let mut max_class = None::<usize>;
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let ctx = || format!("{}:{}", path.display(), i + 1);
        let (node, cs) = line
            .split_once(',')
            .ok_or_else(|| Error::parse(ctx(), "expected node,classes"))?;
        let v = parse_id(node, path, i)? as usize;
        if v >= n_target {
            return Err(Error::IndexOutOfRange(format!(
                "{}: label for node {v} with {n_target} target nodes",
                ctx()
            )));
        }
        let mut row = Vec::new();
        for c in cs.split(';').filter(|c| !c.trim().is_empty()) {
            let c = parse_id(c, path, i)? as usize;
            max_class = Some(max_class.map_or(c, |m| m.max(c)));
            row.push(c);
        }
        row.sort_unstable();
        row.dedup();
        classes[v] = row;
    }
    let num_classes = schema
        .num_classes
        .unwrap_or_else(|| max_class.map_or(0, |m| m + 1));
    Ok(Labels {
        num_classes,
        multi_label: schema.multi_label,
        classes,
    })
}

fn read_split(path: &Path) -> Result<Vec<usize>> {
    let text = read_text(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_id(l, path, i).map(|v| v as usize))
        .collect()
}

/// Writes the on-disk dataset layout read by [`load_graph`].
pub fn write_dataset(dir: &Path, g: &HetGraph) -> Result<()> {
    use std::io::Write;

    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, text: &str| {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write("schema.json", &g.schema.to_json())?;
    for (t, def) in g.schema.node_types.iter().enumerate() {
        htft::write_matrix(&dir.join(format!("features_{}.bin", def.name)), &g.features[t])?;
    }
    for (r, def) in g.schema.relations.iter().enumerate() {
        let p = dir.join(format!("edges_{}.csv", def.name));
        let file = std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
        let mut w = std::io::BufWriter::with_capacity(1 << 20, file);
        let f = &g.adjacency[r].forward;
        let io = |e| Error::io(&p, e);
        writeln!(w, "src,dst").map_err(io)?;
        for s in 0..f.n_rows() {
            for &d in f.row(s) {
                writeln!(w, "{s},{d}").map_err(io)?;
            }
        }
        w.flush().map_err(io)?;
    }
    let mut labels = String::from("node,classes\n");
    for (v, cs) in g.labels.classes.iter().enumerate() {
        if cs.is_empty() {
            continue;
        }
        let joined: Vec<String> = cs.iter().map(usize::to_string).collect();
        labels.push_str(&format!("{v},{}\n", joined.join(";")));
    }
    write("labels.csv", &labels)?;
    for (name, ids) in [
        ("split_train.txt", &g.splits.train),
        ("split_val.txt", &g.splits.val),
        ("split_test.txt", &g.splits.test),
    ] {
        let text: String = ids.iter().map(|v| format!("{v}\n")).collect();
        write(name, &text)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn two_type_schema() -> Schema {
        Schema {
            node_types: vec![
                NodeTypeDef {
                    name: "A".into(),
                    feature_dim: 2,
                    num_nodes: None,
                },
                NodeTypeDef {
                    name: "B".into(),
                    feature_dim: 3,
                    num_nodes: None,
                },
            ],
            relations: vec![RelationDef {
                name: "r".into(),
                abbrev: "r".into(),
                src: "A".into(),
                dst: "B".into(),
            }],
            target_type: "A".into(),
            num_classes: Some(2),
            multi_label: false,
        }
    }

    fn small(edges: Vec<(u32, u32)>) -> Result<HetGraph> {
        HetGraph::from_parts(GraphParts {
            schema: two_type_schema(),
            node_counts: vec![2, 2],
            edges: vec![edges],
            features: vec![Matrix::zeros(2, 2), Matrix::zeros(2, 3)],
            labels: Labels {
                num_classes: 2,
                multi_label: false,
                classes: vec![vec![0], vec![1]],
            },
            splits: Splits {
                train: vec![0],
                val: vec![],
                test: vec![1],
            },
        })
    }

    #[test]
    fn neighbors_both_orientations() {
        let g = small(vec![(0, 0), (0, 1), (1, 0)]).unwrap();
        assert_eq!(g.degree(0, "r", Orientation::Forward).unwrap(), 2);
        assert_eq!(g.neighbors(0, "r", Orientation::Forward).unwrap(), &[0, 1]);
        assert_eq!(g.neighbors(0, "r", Orientation::Reverse).unwrap(), &[0, 1]);
        assert_eq!(g.neighbors(1, "r", Orientation::Reverse).unwrap(), &[0]);
        assert!(matches!(
            g.neighbors(0, "q", Orientation::Forward),
            Err(Error::UnknownRelation(_))
        ));
        assert!(matches!(
            g.neighbors(2, "r", Orientation::Forward),
            Err(Error::IndexOutOfRange(_))
        ));
    }

    #[test]
    fn removing_edges_empties_row() {
        let g = small(vec![(0, 0), (0, 1)]).unwrap();
        assert!(g.neighbors(1, "r", Orientation::Forward).unwrap().is_empty());
        let empty = small(vec![]).unwrap();
        for v in 0..2 {
            assert!(empty.neighbors(v, "r", Orientation::Forward).unwrap().is_empty());
            assert!(empty.neighbors(v, "r", Orientation::Reverse).unwrap().is_empty());
        }
    }

    #[test]
    fn out_of_range_and_duplicates_rejected() {
        let err = small(vec![(5, 0)]).unwrap_err();
        assert!(err.to_string().contains("index out of range"), "{err}");
        assert!(matches!(
            small(vec![(0, 1), (0, 1)]),
            Err(Error::DuplicateEdge { .. })
        ));
    }

    #[test]
    fn schema_validation() {
        let mut s = two_type_schema();
        s.relations[0].dst = "C".into();
        assert!(s.validate().is_err());
        let mut s = two_type_schema();
        s.target_type = "Z".into();
        assert!(s.validate().is_err());
        let mut s = two_type_schema();
        s.relations.push(RelationDef {
            name: "q".into(),
            abbrev: "r".into(),
            src: "B".into(),
            dst: "B".into(),
        });
        assert!(s.validate().is_err());
    }

    #[test]
    fn overlapping_splits_rejected() {
        let err = HetGraph::from_parts(GraphParts {
            schema: two_type_schema(),
            node_counts: vec![2, 1],
            edges: vec![vec![]],
            features: vec![Matrix::zeros(2, 2), Matrix::zeros(1, 3)],
            labels: Labels {
                num_classes: 2,
                multi_label: false,
                classes: vec![vec![0], vec![1]],
            },
            splits: Splits {
                train: vec![0, 1],
                val: vec![1],
                test: vec![],
            },
        })
        .unwrap_err();
        assert!(matches!(err, Error::Split(_)));
    }
}
