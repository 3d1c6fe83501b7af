//! Offline metapath aggregation.
//!
//! For every target node `v` and metapath `P`, the feature table holds the
//! mean feature of the `P`-neighbors of `v`; when `P` returns to the target
//! type, `v` itself counts as a neighbor. For metapaths returning to the
//! target type (other than `init`) the label table holds the mean one-hot
//! training label of the `P`-neighbors with `v` removed, so a node never
//! sees its own label. Non-training nodes contribute zero vectors.
//!
//! Two modes are provided:
//!
//! * [`AggregateMode::ExactSet`]: neighbors are the deduplicated set of path
//!   endpoints, found by per-node frontier expansion.
//! * [`AggregateMode::NormalizedProduct`]: each endpoint is weighted by the
//!   number of paths reaching it. Computed by composing sparse adjacency
//!   operators right-to-left over `[X | 1]` and dividing by the path count,
//!   which costs one sparse-dense product per hop. Agrees with the exact set
//!   whenever no endpoint is reached twice.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hetgraph::{Csr, HetGraph, Orientation};
use crate::htft;
use crate::metapath::{build_semantic_tree, enumerate_metapaths, label_metapaths, Metapath, SemanticTree, Step};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AggregateMode {
    #[serde(rename = "exact")]
    ExactSet,
    #[serde(rename = "product")]
    NormalizedProduct,
}

impl fmt::Display for AggregateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AggregateMode::ExactSet => "exact",
            AggregateMode::NormalizedProduct => "product",
        })
    }
}

impl FromStr for AggregateMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(AggregateMode::ExactSet),
            "product" => Ok(AggregateMode::NormalizedProduct),
            other => Err(Error::Config(format!("unknown aggregation mode {other}"))),
        }
    }
}

pub const DEFAULT_MAX_EXPANSIONS: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AggregateOptions {
    pub mode: AggregateMode,
    /// Exact-set mode refuses any `(node, metapath)` pair whose frontier
    /// expansion traverses more edges than this.
    pub max_expansions: usize,
}

impl Default for AggregateOptions {
    fn default() -> Self {
        AggregateOptions {
            mode: AggregateMode::NormalizedProduct,
            max_expansions: DEFAULT_MAX_EXPANSIONS,
        }
    }
}

impl AggregateOptions {
    pub fn exact() -> Self {
        AggregateOptions {
            mode: AggregateMode::ExactSet,
            ..Default::default()
        }
    }

    pub fn product() -> Self {
        Self::default()
    }
}

/// Per-metapath aggregated features and labels for every target node.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregatedTable {
    pub mode: AggregateMode,
    pub hops: usize,
    pub num_classes: usize,
    pub paths: Vec<Metapath>,
    pub features: Vec<Matrix<f32>>,
    pub label_paths: Vec<Metapath>,
    pub labels: Vec<Matrix<f32>>,
}

impl AggregatedTable {
    pub fn num_targets(&self) -> usize {
        self.features.first().map_or(0, Matrix::rows)
    }

    pub fn feature(&self, name: &str) -> Option<&Matrix<f32>> {
        let i = self.paths.iter().position(|p| p.display_name == name)?;
        Some(&self.features[i])
    }

    pub fn label(&self, name: &str) -> Option<&Matrix<f32>> {
        let i = self.label_paths.iter().position(|p| p.display_name == name)?;
        Some(&self.labels[i])
    }

    /// Restricts every table to the given target rows, in order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        AggregatedTable {
            features: self.features.iter().map(|m| m.select_rows(rows)).collect(),
            labels: self.labels.iter().map(|m| m.select_rows(rows)).collect(),
            ..self.clone()
        }
    }
}

type ResolvedStep = (usize, Orientation);

fn resolve(g: &HetGraph, steps: &[Step]) -> Result<Vec<ResolvedStep>> {
    steps
        .iter()
        .map(|s| Ok((g.schema().relation_index(&s.relation)?, s.orientation)))
        .collect()
}

fn endpoint_index(g: &HetGraph, p: &Metapath) -> Result<usize> {
    p.validate(g.schema())?;
    g.schema().type_index(&p.endpoint_type)
}

/// Deduplicated endpoint set of all paths following `steps` from `v`.
fn endpoint_set(
    g: &HetGraph,
    steps: &[ResolvedStep],
    v: usize,
    ceiling: usize,
    name: &str,
) -> Result<Vec<u32>> {
    let mut frontier = vec![v as u32];
    let mut expansions = 0usize;
    for &(rel, orient) in steps {
        let csr = g.adjacency(rel, orient);
        let mut next = Vec::new();
        for &u in &frontier {
            let row = csr.row(u as usize);
            expansions += row.len();
            if expansions > ceiling {
                return Err(Error::ExpansionCeiling {
                    node: v,
                    metapath: name.to_string(),
                    ceiling,
                });
            }
            next.extend_from_slice(row);
        }
        next.sort_unstable();
        next.dedup();
        frontier = next;
    }
    Ok(frontier)
}

fn mean_rows_into(out: &mut [f32], source: &Matrix<f32>, members: &[u32]) {
    if members.is_empty() {
        out.fill(0.0);
        return;
    }
    let mut acc = vec![0f64; out.len()];
    for &u in members {
        for (a, &x) in acc.iter_mut().zip(source.row(u as usize)) {
            *a += x as f64;
        }
    }
    let n = members.len() as f64;
    for (o, a) in out.iter_mut().zip(acc) {
        *o = (a / n) as f32;
    }
}

/// `Ŷ` input rows: the indicator for training nodes, zero elsewhere.
fn visible_labels(g: &HetGraph, visible: &[usize]) -> Matrix<f32> {
    let labels = g.labels();
    let mut y = Matrix::zeros(g.num_targets(), labels.num_classes);
    for &v in visible {
        y.row_mut(v).copy_from_slice(&labels.indicator(v));
    }
    y
}

/// `csr · dense` in f64, rows in parallel, neighbors summed in ascending id
/// order.
fn spmm(csr: &Csr, dense: &Matrix<f64>) -> Matrix<f64> {
    let cols = dense.cols();
    let mut out = Matrix::zeros(csr.n_rows(), cols);
    if cols == 0 {
        return out;
    }
    out.as_mut_slice()
        .par_chunks_mut(cols)
        .enumerate()
        .for_each(|(v, orow)| {
            for &u in csr.row(v) {
                for (o, &x) in orow.iter_mut().zip(dense.row(u as usize)) {
                    *o += x;
                }
            }
        });
    out
}

/// Number of `steps`-paths from `v` back to `v` itself.
fn self_path_count(g: &HetGraph, steps: &[ResolvedStep], v: usize) -> f64 {
    let Some((&(last_rel, last_orient), init)) = steps.split_last() else {
        return 1.0;
    };
    let mut frontier: Vec<(u32, f64)> = vec![(v as u32, 1.0)];
    for &(rel, orient) in init {
        let csr = g.adjacency(rel, orient);
        let mut acc: HashMap<u32, f64> = HashMap::new();
        for &(u, c) in &frontier {
            for &w in csr.row(u as usize) {
                *acc.entry(w).or_insert(0.0) += c;
            }
        }
        frontier = acc.into_iter().collect();
        frontier.sort_unstable_by_key(|&(u, _)| u);
    }
    let last = g.adjacency(last_rel, last_orient);
    frontier
        .iter()
        .filter(|&&(u, _)| last.contains(u as usize, v as u32))
        .map(|&(_, c)| c)
        .sum()
}

/// Composes unnormalized adjacency products right-to-left, memoizing shared
/// suffixes. Each entry is `C_{steps} · [payload | 1]` over the steps' source
/// type.
struct ProductCache<'g> {
    g: &'g HetGraph,
    memo: HashMap<(Vec<ResolvedStep>, usize), Arc<Matrix<f64>>>,
}

impl<'g> ProductCache<'g> {
    fn new(g: &'g HetGraph) -> Self {
        ProductCache {
            g,
            memo: HashMap::new(),
        }
    }

    /// `payload_key` distinguishes payloads ending at the same type.
    fn get(&mut self, steps: &[ResolvedStep], payload_key: usize, payload: &Arc<Matrix<f64>>) -> Arc<Matrix<f64>> {
        if steps.is_empty() {
            return payload.clone();
        }
        let key = (steps.to_vec(), payload_key);
        if let Some(m) = self.memo.get(&key) {
            return m.clone();
        }
        let rest = self.get(&steps[1..], payload_key, payload);
        let (rel, orient) = steps[0];
        let out = Arc::new(spmm(self.g.adjacency(rel, orient), &rest));
        self.memo.insert(key, out.clone());
        out
    }
}

fn with_ones(m: &Matrix<f32>) -> Matrix<f64> {
    let c = m.cols();
    Matrix::from_fn(m.rows(), c + 1, |i, j| if j < c { m[(i, j)] as f64 } else { 1.0 })
}

/// Feature tables `X_P` for every metapath in `paths`.
pub fn aggregate_features(g: &HetGraph, paths: &[Metapath], opts: &AggregateOptions) -> Result<Vec<Matrix<f32>>> {
    let target = g.schema().target_index();
    let n = g.num_targets();
    let x_target = g.features(target);
    let mut cache = ProductCache::new(g);
    let mut payloads: HashMap<usize, Arc<Matrix<f64>>> = HashMap::new();
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let end = endpoint_index(g, p)?;
        let steps = resolve(g, &p.steps)?;
        let x_end = g.features(end);
        let dim = x_end.cols();
        let self_included = end == target;
        let mut table = Matrix::<f32>::zeros(n, dim);
        if p.is_init() {
            out.push(x_target.clone());
            continue;
        }
        match opts.mode {
            AggregateMode::ExactSet => {
                let fill = |(v, row): (usize, &mut [f32])| -> Result<()> {
                    let mut set = endpoint_set(g, &steps, v, opts.max_expansions, &p.display_name)?;
                    if self_included {
                        if let Err(pos) = set.binary_search(&(v as u32)) {
                            set.insert(pos, v as u32);
                        }
                    }
                    mean_rows_into(row, x_end, &set);
                    Ok(())
                };
                if dim == 0 {
                    for v in 0..n {
                        endpoint_set(g, &steps, v, opts.max_expansions, &p.display_name)?;
                    }
                } else {
                    table.as_mut_slice().par_chunks_mut(dim).enumerate().try_for_each(fill)?;
                }
            }
            AggregateMode::NormalizedProduct => {
                let payload = payloads
                    .entry(end)
                    .or_insert_with(|| Arc::new(with_ones(x_end)))
                    .clone();
                let sums = cache.get(&steps, end, &payload);
                let fill = |(v, row): (usize, &mut [f32])| {
                    let s = sums.row(v);
                    let mut count = s[dim];
                    // the node itself always counts exactly once
                    let self_weight = if self_included {
                        let c_vv = self_path_count(g, &steps, v);
                        count += 1.0 - c_vv;
                        1.0 - c_vv
                    } else {
                        0.0
                    };
                    if count == 0.0 {
                        return;
                    }
                    for (j, o) in row.iter_mut().enumerate() {
                        let extra = self_weight * x_target[(v, j)] as f64;
                        *o = ((s[j] + extra) / count) as f32;
                    }
                };
                if dim > 0 {
                    table.as_mut_slice().par_chunks_mut(dim).enumerate().for_each(fill);
                }
            }
        }
        out.push(table);
    }
    Ok(out)
}

/// Label tables `Ŷ_P` for every label metapath, using the graph's train split
/// as the visible label set.
pub fn aggregate_labels(g: &HetGraph, label_paths: &[Metapath], opts: &AggregateOptions) -> Result<Vec<Matrix<f32>>> {
    aggregate_labels_visible(g, label_paths, opts, &g.splits().train)
}

/// As [`aggregate_labels`] with an explicit set of nodes whose labels are
/// visible (must be a subset of the train split).
pub fn aggregate_labels_visible(
    g: &HetGraph,
    label_paths: &[Metapath],
    opts: &AggregateOptions,
    visible: &[usize],
) -> Result<Vec<Matrix<f32>>> {
    let target = g.schema().target_index();
    let n = g.num_targets();
    let c = g.labels().num_classes;
    let y = visible_labels(g, visible);
    let payload = Arc::new(with_ones(&y));
    let mut cache = ProductCache::new(g);
    let mut out = Vec::with_capacity(label_paths.len());
    for p in label_paths {
        if p.is_init() || endpoint_index(g, p)? != target {
            return Err(Error::NotLabelPath(p.display_name.clone()));
        }
        let steps = resolve(g, &p.steps)?;
        let mut table = Matrix::<f32>::zeros(n, c);
        if c == 0 {
            out.push(table);
            continue;
        }
        match opts.mode {
            AggregateMode::ExactSet => {
                table.as_mut_slice().par_chunks_mut(c).enumerate().try_for_each(
                    |(v, row)| -> Result<()> {
                        let mut set = endpoint_set(g, &steps, v, opts.max_expansions, &p.display_name)?;
                        set.retain(|&u| u as usize != v);
                        mean_rows_into(row, &y, &set);
                        Ok(())
                    },
                )?;
            }
            AggregateMode::NormalizedProduct => {
                let sums = cache.get(&steps, usize::MAX, &payload);
                table.as_mut_slice().par_chunks_mut(c).enumerate().for_each(|(v, row)| {
                    let s = sums.row(v);
                    let self_paths = self_path_count(g, &steps, v);
                    let count = s[c] - self_paths;
                    if count <= 0.0 {
                        return;
                    }
                    // Counts and 0/1 labels are integers, so removing the
                    // self term is exact in f64.
                    for (j, o) in row.iter_mut().enumerate() {
                        let own = self_paths * y[(v, j)] as f64;
                        *o = ((s[j] - own) / count) as f32;
                    }
                });
            }
        }
        out.push(table);
    }
    Ok(out)
}

/// Runs the whole offline pass: enumerate metapaths up to `hops`, aggregate
/// features and labels, build the semantic tree.
pub fn preprocess(g: &HetGraph, hops: usize, opts: &AggregateOptions) -> Result<(AggregatedTable, SemanticTree)> {
    let paths = enumerate_metapaths(g.schema(), hops);
    let label_paths = label_metapaths(&paths, &g.schema().target_type);
    let features = aggregate_features(g, &paths, opts)?;
    let labels = aggregate_labels(g, &label_paths, opts)?;
    let tree = build_semantic_tree(&paths)?;
    Ok((
        AggregatedTable {
            mode: opts.mode,
            hops,
            num_classes: g.labels().num_classes,
            paths,
            features,
            label_paths,
            labels,
        },
        tree,
    ))
}

#[derive(Debug, Serialize, Deserialize)]
struct MetaEntry {
    name: String,
    steps: Vec<Step>,
    endpoint_type: String,
    feature_shape: [usize; 2],
    #[serde(default)]
    label_shape: Option<[usize; 2]>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    hops: usize,
    mode: AggregateMode,
    num_classes: usize,
    num_targets: usize,
    metapaths: Vec<MetaEntry>,
}

/// Writes `meta.json`, `X_<name>.bin` per metapath and `Y_<name>.bin` per
/// label metapath.
pub fn write_preprocessed(table: &AggregatedTable, tree: &SemanticTree, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    if tree.len() != table.paths.len() {
        return Err(Error::Shape(format!(
            "tree has {} nodes, table {} metapaths",
            tree.len(),
            table.paths.len()
        )));
    }
    let mut entries = Vec::new();
    for (p, x) in table.paths.iter().zip(&table.features) {
        let label = table
            .label_paths
            .iter()
            .position(|q| q.steps == p.steps)
            .map(|i| &table.labels[i]);
        htft::write_matrix(&out_dir.join(format!("X_{}.bin", p.display_name)), x)?;
        if let Some(y) = label {
            htft::write_matrix(&out_dir.join(format!("Y_{}.bin", p.display_name)), y)?;
        }
        entries.push(MetaEntry {
            name: p.display_name.clone(),
            steps: p.steps.clone(),
            endpoint_type: p.endpoint_type.clone(),
            feature_shape: [x.rows(), x.cols()],
            label_shape: label.map(|y| [y.rows(), y.cols()]),
        });
    }
    let meta = Meta {
        hops: table.hops,
        mode: table.mode,
        num_classes: table.num_classes,
        num_targets: table.num_targets(),
        metapaths: entries,
    };
    let path = out_dir.join("meta.json");
    let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_preprocessed(dir: &Path) -> Result<(AggregatedTable, SemanticTree)> {
    let meta_path = dir.join("meta.json");
    if !meta_path.exists() {
        return Err(Error::MissingFile(meta_path));
    }
    let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: Meta = serde_json::from_str(&text).map_err(|e| Error::parse("meta.json", e))?;
    let load = |prefix: &str, name: &str, shape: [usize; 2]| -> Result<Matrix<f32>> {
        let path = dir.join(format!("{prefix}_{name}.bin"));
        if !path.exists() {
            return Err(Error::MissingFile(path));
        }
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let m = htft::decode(&bytes, &format!("metapath {name} ({prefix}_{name}.bin)"))?;
        if m.shape() != (shape[0], shape[1]) {
            return Err(Error::format(
                format!("metapath {name}"),
                format!("meta.json says {}x{}, file holds {:?}", shape[0], shape[1], m.shape()),
            ));
        }
        Ok(m)
    };
    let mut paths = Vec::new();
    let mut features = Vec::new();
    let mut label_paths = Vec::new();
    let mut labels = Vec::new();
    for e in &meta.metapaths {
        let p = Metapath {
            steps: e.steps.clone(),
            display_name: e.name.clone(),
            endpoint_type: e.endpoint_type.clone(),
        };
        features.push(load("X", &e.name, e.feature_shape)?);
        if let Some(shape) = e.label_shape {
            labels.push(load("Y", &e.name, shape)?);
            label_paths.push(p.clone());
        }
        paths.push(p);
    }
    let tree = build_semantic_tree(&paths)?;
    Ok((
        AggregatedTable {
            mode: meta.mode,
            hops: meta.hops,
            num_classes: meta.num_classes,
            paths,
            features,
            label_paths,
            labels,
        },
        tree,
    ))
}
