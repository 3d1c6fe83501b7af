//! Central-difference gradient checks in f64.

use hettree_core::hetgraph::Labels;
use hettree_core::model::{HetTreeModel, ModelInput};
use hettree_core::tensor::{Activation, Matrix, ParamId, ParamStore, Tape, Var};
use hettree_core::train::batch_loss;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Result;

/// Denominator floor of the relative error, so coordinates with (near) zero
/// gradient are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

/// Coordinates above this count are subsampled.
pub const MAX_COORDS: usize = 10_000;

pub trait Objective {
    fn params(&self) -> &ParamStore<f64>;
    fn params_mut(&mut self) -> &mut ParamStore<f64>;
    fn loss(&self) -> Result<f64>;
    /// Loss and the analytic gradient of every parameter, in id order.
    fn loss_and_grad(&mut self) -> Result<(f64, Vec<Matrix<f64>>)>;
}

#[derive(Clone, Debug)]
pub struct FdReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// `name[index]` of the worst coordinate.
    pub worst: String,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares the analytic gradient of `obj` with `(L(θ+h) - L(θ-h)) / 2h` on
/// every coordinate, or a seeded sample of [`MAX_COORDS`] of them.
pub fn finite_diff_check<O: Objective>(obj: &mut O, h: f64, seed: u64) -> Result<FdReport> {
    let (_, grads) = obj.loss_and_grad()?;
    let coords: Vec<(ParamId, usize)> = obj
        .params()
        .ids()
        .flat_map(|id| (0..obj.params().value(id).as_slice().len()).map(move |k| (id, k)))
        .collect();
    let chosen: Vec<usize> = if coords.len() > MAX_COORDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = sample(&mut rng, coords.len(), MAX_COORDS).into_vec();
        s.sort_unstable();
        s
    } else {
        (0..coords.len()).collect()
    };
    let analytic: Vec<f64> = chosen
        .iter()
        .map(|&i| {
            let (id, k) = coords[i];
            grads[id.index()].as_slice()[k]
        })
        .collect();

    let mut report = FdReport {
        checked: chosen.len(),
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: String::new(),
    };
    for (&i, &a) in chosen.iter().zip(&analytic) {
        let (id, k) = coords[i];
        let orig = obj.params().value(id).as_slice()[k];
        obj.params_mut().value_mut(id).as_mut_slice()[k] = orig + h;
        let up = obj.loss()?;
        obj.params_mut().value_mut(id).as_mut_slice()[k] = orig - h;
        let down = obj.loss()?;
        obj.params_mut().value_mut(id).as_mut_slice()[k] = orig;
        let numeric = (up - down) / (2.0 * h);
        let rel = relative_error(a, numeric);
        report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
        if rel > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = report.max_rel_error.max(rel);
            report.worst = format!("{}[{k}]", obj.params().name(id));
        }
    }
    Ok(report)
}

/// `‖θ‖² / 2`, gradient `θ`.
pub struct Quadratic {
    pub store: ParamStore<f64>,
}

impl Objective for Quadratic {
    fn params(&self) -> &ParamStore<f64> {
        &self.store
    }
    fn params_mut(&mut self) -> &mut ParamStore<f64> {
        &mut self.store
    }
    fn loss(&self) -> Result<f64> {
        Ok(self
            .store
            .ids()
            .flat_map(|id| self.store.value(id).as_slice().iter())
            .map(|x| 0.5 * x * x)
            .sum())
    }
    fn loss_and_grad(&mut self) -> Result<(f64, Vec<Matrix<f64>>)> {
        let grads = self.store.ids().map(|id| self.store.value(id).clone()).collect();
        Ok((self.loss()?, grads))
    }
}

type Builder = Box<dyn Fn(&mut Tape<f64>, &ParamStore<f64>) -> hettree_core::Result<Var>>;

/// Objective whose scalar loss is recorded on a fresh tape by `build`.
pub struct TapeObjective {
    pub store: ParamStore<f64>,
    build: Builder,
}

impl TapeObjective {
    pub fn new(store: ParamStore<f64>, build: Builder) -> Self {
        TapeObjective { store, build }
    }
}

impl Objective for TapeObjective {
    fn params(&self) -> &ParamStore<f64> {
        &self.store
    }
    fn params_mut(&mut self) -> &mut ParamStore<f64> {
        &mut self.store
    }
    fn loss(&self) -> Result<f64> {
        let mut tape = Tape::new();
        let l = (self.build)(&mut tape, &self.store)?;
        Ok(tape.value(l)[(0, 0)])
    }
    fn loss_and_grad(&mut self) -> Result<(f64, Vec<Matrix<f64>>)> {
        let mut tape = Tape::new();
        let l = (self.build)(&mut tape, &self.store)?;
        tape.backward(l, &mut self.store)?;
        let grads = self.store.ids().map(|id| self.store.grad(id).clone()).collect();
        Ok((tape.value(l)[(0, 0)], grads))
    }
}

/// Training loss of a model on fixed rows, without dropout.
pub struct ModelObjective {
    pub model: HetTreeModel<f64>,
    pub input: ModelInput<f64>,
    pub labels: Labels,
    /// Target ids of the input rows.
    pub rows: Vec<usize>,
}

impl ModelObjective {
    fn record(&self, tape: &mut Tape<f64>) -> Result<Var> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (logits, _) = self.model.forward(tape, &self.input, false, &mut rng)?;
        Ok(batch_loss(tape, logits, &self.labels, &self.rows)?)
    }
}

impl Objective for ModelObjective {
    fn params(&self) -> &ParamStore<f64> {
        self.model.params()
    }
    fn params_mut(&mut self) -> &mut ParamStore<f64> {
        self.model.params_mut()
    }
    fn loss(&self) -> Result<f64> {
        let mut tape = Tape::new();
        let l = self.record(&mut tape)?;
        Ok(tape.value(l)[(0, 0)])
    }
    fn loss_and_grad(&mut self) -> Result<(f64, Vec<Matrix<f64>>)> {
        let mut tape = Tape::new();
        let l = self.record(&mut tape)?;
        tape.backward(l, self.model.params_mut())?;
        let p = self.model.params();
        let grads = p.ids().map(|id| p.grad(id).clone()).collect();
        Ok((tape.value(l)[(0, 0)], grads))
    }
}

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix<f64> {
    Matrix::from_fn(r, c, |_, _| rng.random_range(-1.5..1.5))
}

/// Reduces an `r × c` value to the scalar `w · a · u` with fixed random
/// `w`, `u`.
fn project(tape: &mut Tape<f64>, a: Var, w: &Matrix<f64>, u: &Matrix<f64>) -> hettree_core::Result<Var> {
    let w = tape.constant(w.clone());
    let u = tape.constant(u.clone());
    let wa = tape.matmul(w, a)?;
    tape.matmul(wa, u)
}

/// One finite-difference check per tape operation, each on small random
/// inputs drawn from `seed`.
pub fn check_ops(seed: u64, h: f64) -> Result<Vec<(String, FdReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases: Vec<(String, TapeObjective)> = Vec::new();
    let mut case = |name: &str, shapes: &[(usize, usize)], out: (usize, usize), rng: &mut ChaCha8Rng, f: OpFn| {
        let mut store = ParamStore::new();
        let ids: Vec<ParamId> = shapes
            .iter()
            .enumerate()
            .map(|(i, &(r, c))| store.add(format!("{name}.{i}"), random(rng, r, c)).expect("fresh names"))
            .collect();
        let w = random(rng, 1, out.0);
        let u = random(rng, out.1, 1);
        let scalar = out == (1, 1);
        let build: Builder = Box::new(move |tape, store| {
            let vars: Vec<Var> = ids.iter().map(|&id| tape.param(store, id)).collect();
            let y = f(tape, &vars)?;
            if scalar {
                Ok(y)
            } else {
                project(tape, y, &w, &u)
            }
        });
        cases.push((name.to_string(), TapeObjective::new(store, build)));
    };

    case("matmul", &[(3, 4), (4, 2)], (3, 2), &mut rng, Box::new(|t, v| t.matmul(v[0], v[1])));
    case("add", &[(3, 4), (3, 4)], (3, 4), &mut rng, Box::new(|t, v| t.add(v[0], v[1])));
    case("add_row", &[(3, 4), (1, 4)], (3, 4), &mut rng, Box::new(|t, v| t.add_row(v[0], v[1])));
    case("scale", &[(3, 4)], (3, 4), &mut rng, Box::new(|t, v| Ok(t.scale(v[0], -1.7))));
    case("sum", &[(2, 3), (2, 3), (2, 3)], (2, 3), &mut rng, Box::new(|t, v| t.sum(v)));
    case("concat_cols", &[(3, 2), (3, 3)], (3, 5), &mut rng, Box::new(|t, v| t.concat_cols(v)));
    case("slice_cols", &[(3, 5)], (3, 2), &mut rng, Box::new(|t, v| t.slice_cols(v[0], 2, 2)));
    for act in [
        Activation::Identity,
        Activation::Relu,
        Activation::LeakyRelu(0.2),
        Activation::Gelu,
        Activation::Sigmoid,
        Activation::Tanh,
    ] {
        case(&format!("activation {act}"), &[(4, 3)], (4, 3), &mut rng, Box::new(move |t, v| Ok(t.activation(v[0], act))));
    }
    case("softmax_rows", &[(3, 4)], (3, 4), &mut rng, Box::new(|t, v| Ok(t.softmax_rows(v[0]))));
    case("mul_broadcast column", &[(3, 1), (3, 4)], (3, 4), &mut rng, Box::new(|t, v| t.mul_broadcast(v[0], v[1])));
    case("mul_broadcast scalar", &[(1, 1), (3, 4)], (3, 4), &mut rng, Box::new(|t, v| t.mul_broadcast(v[0], v[1])));
    case("dropout", &[(4, 5)], (4, 5), &mut rng, Box::new(|t, v| {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        Ok(t.dropout(v[0], 0.4, true, &mut r))
    }));
    case("softmax_cross_entropy", &[(4, 3)], (1, 1), &mut rng, Box::new(|t, v| t.softmax_cross_entropy(v[0], &[0, 2, 1, 2])));
    let targets = Matrix::from_fn(4, 3, |i, j| ((i + j) % 2) as f64);
    case("bce_with_logits", &[(4, 3)], (1, 1), &mut rng, Box::new(move |t, v| t.bce_with_logits(v[0], &targets)));

    cases
        .into_iter()
        .map(|(name, mut obj)| Ok((name, finite_diff_check(&mut obj, h, seed)?)))
        .collect()
}

type OpFn = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> hettree_core::Result<Var>>;
