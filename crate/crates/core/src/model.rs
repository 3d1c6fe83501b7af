//! The semantic-tree network.
//!
//! Per metapath `P` the aggregated table (features, concatenated with labels
//! when `P` returns to the target type) goes through its own MLP to give
//! `M_P`. The tree is then folded bottom-up: a leaf keeps `Z_P = M_P`; an
//! inner node summarises itself and its children into a subtree reference
//! `S_P`, scores each child `Q` with `δ(W_P · [S_P ∥ Z_Q])`, softmaxes the
//! scores over the children and sets `Z_P = M_P + δ(Σ α_Q Z_Q)`. Logits are
//! `MLP(Σ_P Z_P) + MLP(X_init) + MLP(mean_P Ŷ_P)`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregate::AggregatedTable;
use crate::error::{Error, Result};
use crate::metapath::SemanticTree;
use crate::tensor::{load_checkpoint, save_checkpoint, Activation, Matrix, Mlp, ParamId, ParamStore, Scalar, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Subtree attention against `S_P`.
    Full,
    /// Learned sigmoid gate per child instead of attention.
    WeightedSum,
    /// Attention scored against the parent's own `M_P`.
    ParentAtt,
    /// Full attention, but no label inputs and no label residual.
    NoLabel,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Full => "full",
            Variant::WeightedSum => "weighted-sum",
            Variant::ParentAtt => "parent-att",
            Variant::NoLabel => "no-label",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "weighted-sum" => Ok(Variant::WeightedSum),
            "parent-att" => Ok(Variant::ParentAtt),
            "no-label" => Ok(Variant::NoLabel),
            other => Err(Error::Config(format!("unknown variant {other}"))),
        }
    }
}

impl Variant {
    pub fn uses_labels(self) -> bool {
        self != Variant::NoLabel
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: usize,
    /// Depth of the per-metapath, subtree-reference and tree-head MLPs.
    pub mlp_layers: usize,
    pub activation: Activation,
    pub dropout: f64,
    pub variant: Variant,
    /// One subtree-reference MLP and attention vector for the whole tree.
    pub share_tree_params: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 64,
            mlp_layers: 2,
            activation: Activation::LeakyRelu(0.2),
            dropout: 0.5,
            variant: Variant::Full,
            share_tree_params: false,
            seed: 0,
        }
    }
}

/// Table matrices cast to the model's scalar type, aligned with the table's
/// metapath order.
#[derive(Clone, Debug)]
pub struct ModelInput<T> {
    pub features: Vec<Matrix<T>>,
    pub labels: Vec<Matrix<T>>,
}

impl<T: Scalar> ModelInput<T> {
    pub fn from_table(table: &AggregatedTable, rows: Option<&[usize]>) -> Self {
        let conv = |m: &Matrix<f32>| match rows {
            Some(r) => m.select_rows(r).cast(),
            None => m.cast(),
        };
        ModelInput {
            features: table.features.iter().map(conv).collect(),
            labels: table.labels.iter().map(conv).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.features.first().map_or(0, Matrix::rows)
    }
}

#[derive(Clone, Debug)]
enum Children {
    Leaf,
    Attention { subtree: Option<Mlp>, weight: ParamId },
    Gates(Vec<ParamId>),
}

#[derive(Clone, Debug)]
struct TreeNode {
    name: String,
    feature_index: usize,
    label_index: Option<usize>,
    transform: Mlp,
    children: Children,
}

/// Output of [`HetTreeModel::tree_aggregate`].
pub struct TreeOutput {
    /// `Z_P` per tree node.
    pub z: Vec<Var>,
    /// Per inner node, the `n × children` attention (or gate) matrix before
    /// dropout.
    pub weights: Vec<Option<Var>>,
}

#[derive(Clone, Debug)]
pub struct HetTreeModel<T> {
    config: ModelConfig,
    tree: SemanticTree,
    nodes: Vec<TreeNode>,
    num_classes: usize,
    target_dim: usize,
    num_label_paths: usize,
    tree_head: Mlp,
    feature_head: Mlp,
    label_head: Option<Mlp>,
    store: ParamStore<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetapathWidths {
    pub name: String,
    pub input: usize,
    pub label_input: bool,
    pub children: Vec<String>,
}

/// Architecture echo written next to checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub config: ModelConfig,
    pub num_classes: usize,
    pub target_dim: usize,
    pub label_residual: bool,
    pub num_parameters: usize,
    pub metapaths: Vec<MetapathWidths>,
}

impl<T: Scalar> HetTreeModel<T> {
    pub fn new(config: ModelConfig, tree: &SemanticTree, table: &AggregatedTable) -> Result<Self> {
        if config.hidden == 0 || config.mlp_layers == 0 {
            return Err(Error::Config("hidden width and mlp depth must be positive".into()));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", config.dropout)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let d = config.hidden;
        let act = config.activation;
        let use_labels = config.variant.uses_labels();
        let stack = |input: usize, output: usize| -> Vec<usize> {
            let mut w = vec![input];
            w.extend(std::iter::repeat_n(d, config.mlp_layers - 1));
            w.push(output);
            w
        };

        let mut shared: Option<(Option<Mlp>, ParamId)> = None;
        let mut nodes = Vec::with_capacity(tree.len());
        for (i, p) in tree.nodes().iter().enumerate() {
            let feature_index = table
                .paths
                .iter()
                .position(|q| q.steps == p.steps)
                .ok_or_else(|| Error::MissingTable(format!("X_{}", p.display_name)))?;
            let label_index = table.label_paths.iter().position(|q| q.steps == p.steps);
            let is_label_path = !p.is_init() && p.endpoint_type == tree.node(0).endpoint_type;
            if use_labels && is_label_path && label_index.is_none() {
                return Err(Error::MissingTable(format!("Y_{}", p.display_name)));
            }
            let label_index = label_index.filter(|_| use_labels);
            let input = table.features[feature_index].cols() + label_index.map_or(0, |_| table.num_classes);
            let transform = Mlp::new(&mut store, &format!("mlp.{}", p.display_name), &stack(input, d), act, &mut rng)?;

            let kids = tree.children(i);
            let children = if kids.is_empty() {
                Children::Leaf
            } else if config.variant == Variant::WeightedSum {
                let gates = kids
                    .iter()
                    .map(|&c| {
                        let name = format!("gate.{}.{}", p.display_name, tree.node(c).display_name);
                        store.add(name, Matrix::zeros(1, 1))
                    })
                    .collect::<Result<_>>()?;
                Children::Gates(gates)
            } else {
                let build = |store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, tag: &str| -> Result<(Option<Mlp>, ParamId)> {
                    let subtree = if config.variant == Variant::ParentAtt {
                        None
                    } else {
                        Some(Mlp::new(store, &format!("subtree.{tag}"), &stack(2 * d, d), act, rng)?)
                    };
                    let bound = 1.0 / ((2 * d) as f64).sqrt();
                    let w = Matrix::from_fn(2 * d, 1, |_, _| T::of(rng.random_range(-bound..=bound)));
                    let weight = store.add(format!("att.{tag}"), w)?;
                    Ok((subtree, weight))
                };
                let (subtree, weight) = if config.share_tree_params {
                    if shared.is_none() {
                        shared = Some(build(&mut store, &mut rng, "shared")?);
                    }
                    shared.clone().expect("just set")
                } else {
                    build(&mut store, &mut rng, &p.display_name)?
                };
                Children::Attention { subtree, weight }
            };
            nodes.push(TreeNode {
                name: p.display_name.clone(),
                feature_index,
                label_index,
                transform,
                children,
            });
        }

        let num_classes = table.num_classes;
        let target_dim = table.features[nodes[0].feature_index].cols();
        let num_label_paths = nodes.iter().filter(|n| n.label_index.is_some()).count();
        let tree_head = Mlp::new(&mut store, "head.tree", &stack(d, num_classes), act, &mut rng)?;
        let feature_head = Mlp::new(&mut store, "head.feat", &[target_dim, num_classes], act, &mut rng)?;
        let label_head = if use_labels && num_label_paths > 0 {
            Some(Mlp::new(&mut store, "head.label", &[num_classes, num_classes], act, &mut rng)?)
        } else {
            None
        };
        Ok(HetTreeModel {
            config,
            tree: tree.clone(),
            nodes,
            num_classes,
            target_dim,
            num_label_paths,
            tree_head,
            feature_head,
            label_head,
            store,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tree(&self) -> &SemanticTree {
        &self.tree
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn has_label_residual(&self) -> bool {
        self.label_head.is_some()
    }

    /// Whether tree node `i` consumes label columns.
    pub fn uses_label_input(&self, i: usize) -> bool {
        self.nodes[i].label_index.is_some()
    }

    pub fn transform_input_width(&self, i: usize) -> usize {
        self.nodes[i].transform.input_width()
    }

    /// Whether tree node `i` owns an attention vector `W_P`.
    pub fn has_attention(&self, i: usize) -> bool {
        matches!(self.nodes[i].children, Children::Attention { .. })
    }

    pub fn attention_param(&self, i: usize) -> Option<ParamId> {
        match &self.nodes[i].children {
            Children::Attention { weight, .. } => Some(*weight),
            _ => None,
        }
    }

    pub fn subtree_mlp(&self, i: usize) -> Option<&Mlp> {
        match &self.nodes[i].children {
            Children::Attention { subtree, .. } => subtree.as_ref(),
            _ => None,
        }
    }

    pub fn transform_mlp(&self, i: usize) -> &Mlp {
        &self.nodes[i].transform
    }

    pub fn gate_params(&self, i: usize) -> &[ParamId] {
        match &self.nodes[i].children {
            Children::Gates(g) => g,
            _ => &[],
        }
    }

    pub fn heads(&self) -> (&Mlp, &Mlp, Option<&Mlp>) {
        (&self.tree_head, &self.feature_head, self.label_head.as_ref())
    }

    /// Same architecture with parameters converted to another scalar type.
    pub fn cast<U: Scalar>(&self) -> HetTreeModel<U> {
        HetTreeModel {
            config: self.config.clone(),
            tree: self.tree.clone(),
            nodes: self.nodes.clone(),
            num_classes: self.num_classes,
            target_dim: self.target_dim,
            num_label_paths: self.num_label_paths,
            tree_head: self.tree_head.clone(),
            feature_head: self.feature_head.clone(),
            label_head: self.label_head.clone(),
            store: self.store.cast(),
        }
    }

    /// Replaces the tree's child order (for invariance checks). The new tree
    /// must have the same nodes as the current one.
    pub fn with_tree(&self, tree: SemanticTree) -> Result<Self> {
        if tree.nodes() != self.tree.nodes() {
            return Err(Error::Shape("replacement tree has different metapaths".into()));
        }
        let mut m = self.clone();
        for i in 0..tree.len() {
            let old = self.tree.children(i);
            let new = tree.children(i);
            if let Children::Gates(g) = &self.nodes[i].children {
                let reordered = new
                    .iter()
                    .map(|c| g[old.iter().position(|o| o == c).expect("same children")])
                    .collect();
                m.nodes[i].children = Children::Gates(reordered);
            }
        }
        m.tree = tree;
        Ok(m)
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            config: self.config.clone(),
            num_classes: self.num_classes,
            target_dim: self.target_dim,
            label_residual: self.label_head.is_some(),
            num_parameters: self.store.num_scalars(),
            metapaths: self
                .nodes
                .iter()
                .enumerate()
                .map(|(i, n)| MetapathWidths {
                    name: n.name.clone(),
                    input: n.transform.input_width(),
                    label_input: n.label_index.is_some(),
                    children: self
                        .tree
                        .children(i)
                        .iter()
                        .map(|&c| self.nodes[c].name.clone())
                        .collect(),
                })
                .collect(),
        }
    }

    fn check_input(&self, input: &ModelInput<T>) -> Result<()> {
        let rows = input.rows();
        for n in &self.nodes {
            let x = input
                .features
                .get(n.feature_index)
                .ok_or_else(|| Error::MissingTable(format!("X_{}", n.name)))?;
            let mut width = x.cols();
            if x.rows() != rows {
                return Err(Error::Shape(format!("X_{} has {} rows, expected {rows}", n.name, x.rows())));
            }
            if let Some(l) = n.label_index {
                let y = input
                    .labels
                    .get(l)
                    .ok_or_else(|| Error::MissingTable(format!("Y_{}", n.name)))?;
                if y.rows() != rows {
                    return Err(Error::Shape(format!("Y_{} has {} rows, expected {rows}", n.name, y.rows())));
                }
                width += y.cols();
            }
            if width != n.transform.input_width() {
                return Err(Error::Shape(format!(
                    "metapath {} input width {width}, model expects {}",
                    n.name,
                    n.transform.input_width()
                )));
            }
        }
        Ok(())
    }

    /// `M_P = MLP_P(X_P ∥ Ŷ_P)` for label metapaths, `MLP_P(X_P)` otherwise.
    pub fn transform<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        input: &ModelInput<T>,
        training: bool,
        rng: &mut R,
    ) -> Result<Vec<Var>> {
        self.check_input(input)?;
        let mut out = Vec::with_capacity(self.nodes.len());
        for n in &self.nodes {
            let x = tape.constant(input.features[n.feature_index].clone());
            let x = match n.label_index {
                Some(l) => {
                    let y = tape.constant(input.labels[l].clone());
                    tape.concat_cols(&[x, y])?
                }
                None => x,
            };
            out.push(n.transform.forward(tape, &self.store, x, self.config.dropout, training, rng)?);
        }
        Ok(out)
    }

    /// Bottom-up semantic-tree fold producing `Z_P` for every node.
    pub fn tree_aggregate<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        m: &[Var],
        training: bool,
        rng: &mut R,
    ) -> Result<TreeOutput> {
        if m.len() != self.nodes.len() {
            return Err(Error::Shape(format!("{} metapath features for {} tree nodes", m.len(), self.nodes.len())));
        }
        let act = self.config.activation;
        let mut z: Vec<Option<Var>> = vec![None; self.nodes.len()];
        let mut weights = vec![None; self.nodes.len()];
        for i in self.tree.bottom_up_order() {
            let kids = self.tree.children(i);
            let child_z: Vec<Var> = kids
                .iter()
                .map(|&c| z[c].expect("children are encoded before their parent"))
                .collect();
            let zi = match &self.nodes[i].children {
                Children::Leaf => m[i],
                Children::Gates(gates) => {
                    let mut terms = Vec::with_capacity(kids.len());
                    let mut cols = Vec::with_capacity(kids.len());
                    for (&g, &zc) in gates.iter().zip(&child_z) {
                        let raw = tape.param(&self.store, g);
                        let gate = tape.activation(raw, Activation::Sigmoid);
                        cols.push(gate);
                        terms.push(tape.mul_broadcast(gate, zc)?);
                    }
                    weights[i] = Some(tape.concat_cols(&cols)?);
                    let agg = tape.sum(&terms)?;
                    let agg = tape.activation(agg, act);
                    tape.add(m[i], agg)?
                }
                Children::Attention { subtree, weight } => {
                    let reference = match subtree {
                        Some(mlp) => {
                            let kid_m: Vec<Var> = kids.iter().map(|&c| m[c]).collect();
                            let sum_m = tape.sum(&kid_m)?;
                            let joined = tape.concat_cols(&[m[i], sum_m])?;
                            mlp.forward(tape, &self.store, joined, self.config.dropout, training, rng)?
                        }
                        None => m[i],
                    };
                    let w = tape.param(&self.store, *weight);
                    let mut scores = Vec::with_capacity(kids.len());
                    for &zc in &child_z {
                        let pair = tape.concat_cols(&[reference, zc])?;
                        let e = tape.matmul(pair, w)?;
                        scores.push(tape.activation(e, act));
                    }
                    let e = tape.concat_cols(&scores)?;
                    let alpha = tape.softmax_rows(e);
                    weights[i] = Some(alpha);
                    let alpha = tape.dropout(alpha, self.config.dropout, training, rng);
                    let mut terms = Vec::with_capacity(kids.len());
                    for (j, &zc) in child_z.iter().enumerate() {
                        let a = tape.slice_cols(alpha, j, 1)?;
                        terms.push(tape.mul_broadcast(a, zc)?);
                    }
                    let agg = tape.sum(&terms)?;
                    let agg = tape.activation(agg, act);
                    tape.add(m[i], agg)?
                }
            };
            z[i] = Some(zi);
        }
        Ok(TreeOutput {
            z: z.into_iter().map(|v| v.expect("every node encoded")).collect(),
            weights,
        })
    }

    /// `MLP(Σ Z_P) + MLP(X_init) + MLP(mean Ŷ_P)`; the label term is absent
    /// when the model has no label residual.
    pub fn predict<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        input: &ModelInput<T>,
        z: &[Var],
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let dropout = self.config.dropout;
        let total = tape.sum(z)?;
        let tree_term = self.tree_head.forward(tape, &self.store, total, dropout, training, rng)?;
        let x_init = tape.constant(input.features[self.nodes[self.tree.root()].feature_index].clone());
        let feat_term = self.feature_head.forward(tape, &self.store, x_init, dropout, training, rng)?;
        let mut logits = tape.add(tree_term, feat_term)?;
        if let Some(head) = &self.label_head {
            let ys: Vec<Var> = self
                .nodes
                .iter()
                .filter_map(|n| n.label_index)
                .map(|l| tape.constant(input.labels[l].clone()))
                .collect();
            let sum = tape.sum(&ys)?;
            let mean = tape.scale(sum, T::of(1.0 / ys.len() as f64));
            let label_term = head.forward(tape, &self.store, mean, dropout, training, rng)?;
            logits = tape.add(logits, label_term)?;
        }
        Ok(logits)
    }

    /// Full forward pass; returns logits and the tree output.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        input: &ModelInput<T>,
        training: bool,
        rng: &mut R,
    ) -> Result<(Var, TreeOutput)> {
        let m = self.transform(tape, input, training, rng)?;
        let tree = self.tree_aggregate(tape, &m, training, rng)?;
        let logits = self.predict(tape, input, &tree.z, training, rng)?;
        Ok((logits, tree))
    }

    /// Inference logits without dropout.
    pub fn logits(&self, input: &ModelInput<T>) -> Result<Matrix<T>> {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (logits, _) = self.forward(&mut tape, input, false, &mut rng)?;
        Ok(tape.value(logits).clone())
    }
}

/// Writes `model.bin` (parameters) and `model.json` (architecture echo).
pub fn save_model<T: Scalar>(model: &HetTreeModel<T>, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = serde_json::to_string_pretty(&model.architecture()).expect("architecture serializes");
    let path = dir.join("model.json");
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    save_checkpoint(model.params(), &dir.join("model.bin"))
}

/// Rebuilds a model saved by [`save_model`] for `tree` and `table`. Fails if
/// the tables do not match the saved architecture.
pub fn load_model<T: Scalar>(dir: &Path, tree: &SemanticTree, table: &AggregatedTable) -> Result<HetTreeModel<T>> {
    let path = dir.join("model.json");
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let saved: Architecture = serde_json::from_str(&text).map_err(|e| Error::parse("model.json", e))?;
    let mut model = HetTreeModel::new(saved.config.clone(), tree, table)?;
    let built = model.architecture();
    if built != saved {
        let detail = saved
            .metapaths
            .iter()
            .zip(&built.metapaths)
            .find(|(a, b)| a != b)
            .map(|(a, b)| format!("metapath {}: saved input {} vs tables {}", a.name, a.input, b.input))
            .unwrap_or_else(|| "metapath set or class count differs".into());
        return Err(Error::Shape(format!("checkpoint does not match the preprocessed tables ({detail})")));
    }
    load_checkpoint(model.params_mut(), &dir.join("model.bin"))?;
    Ok(model)
}
