//! Dynamically recorded operation tape.
//!
//! Every op pushes a node holding its forward value and the ids of its
//! inputs. [`Tape::backward`] walks the nodes in reverse creation order, which
//! is a valid reverse topological order because inputs always precede
//! outputs. Parameter leaves route their gradient into the [`ParamStore`].

use rand::Rng;

use super::nn::Activation;
use super::params::{ParamId, ParamStore};
use super::{Matrix, Scalar};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Sum(Vec<Var>),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    Act(Var, Activation),
    SoftmaxRows(Var),
    Mask(Var, Matrix<T>),
    MulBroadcast(Var, Var),
    SoftmaxCe(Var, Vec<usize>),
    Bce(Var, Matrix<T>),
}

struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Matrix<T>>>,
    consumed: bool,
    check_finite: bool,
    non_finite: Option<String>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
            check_finite: cfg!(debug_assertions),
            non_finite: None,
        }
    }

    /// Enables or disables the per-op finiteness check. When on, the first op
    /// producing NaN/Inf is remembered and reported by [`Tape::non_finite`].
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn non_finite(&self) -> Option<&str> {
        self.non_finite.as_deref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node so the tape can be reused.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.grads.clear();
        self.consumed = false;
        self.non_finite = None;
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>) -> Var {
        if self.check_finite && self.non_finite.is_none() && !value.is_finite() {
            self.non_finite = Some(op_name(&op).to_string());
        }
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward pass with respect to `v`, if `v` was
    /// reachable from the loss.
    pub fn grad(&self, v: Var) -> Option<&Matrix<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::Shape(format!("add {:?} + {:?}", x.shape(), y.shape())));
        }
        let out = x.zip_map(y, |p, q| p + q);
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds the `1 × m` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if y.rows() != 1 || y.cols() != x.cols() {
            return Err(Error::Shape(format!(
                "row broadcast {:?} + {:?}",
                x.shape(),
                y.shape()
            )));
        }
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (o, &b) in out.row_mut(i).iter_mut().zip(y.row(0)) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s))
    }

    /// Elementwise sum of equally shaped matrices.
    pub fn sum(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::Shape("sum of an empty list".into()))?;
        let mut out = self.value(*first).clone();
        for &x in &xs[1..] {
            let v = self.value(x);
            if v.shape() != out.shape() {
                return Err(Error::Shape(format!("sum {:?} + {:?}", out.shape(), v.shape())));
            }
            out.add_assign(v);
        }
        Ok(self.push(out, Op::Sum(xs.to_vec())))
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let rows = xs
            .first()
            .map(|&x| self.value(x).rows())
            .ok_or_else(|| Error::Shape("concat of an empty list".into()))?;
        if xs.iter().any(|&x| self.value(x).rows() != rows) {
            return Err(Error::Shape("concat_cols with differing row counts".into()));
        }
        let cols: usize = xs.iter().map(|&x| self.value(x).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &x in xs {
                data.extend_from_slice(self.value(x).row(i));
            }
        }
        let out = Matrix::from_vec(rows, cols, data)?;
        Ok(self.push(out, Op::Concat(xs.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let x = self.value(a);
        if start + width > x.cols() {
            return Err(Error::Shape(format!(
                "slice [{start}, {}) of {} columns",
                start + width,
                x.cols()
            )));
        }
        let out = Matrix::from_fn(x.rows(), width, |i, j| x[(i, start + j)]);
        Ok(self.push(out, Op::SliceCols(a, start)))
    }

    pub fn activation(&mut self, a: Var, act: Activation) -> Var {
        let out = self.value(a).map(|x| act.apply(x));
        self.push(out, Op::Act(a, act))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        for i in 0..out.rows() {
            softmax_in_place(out.row_mut(i));
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    /// Inverted dropout: keeps each entry with probability `1 - p` and scales
    /// kept entries by `1 / (1 - p)`. Identity when not training or `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, training: bool, rng: &mut R) -> Var {
        assert!((0.0..1.0).contains(&p), "dropout rate must lie in [0, 1)");
        if !training || p == 0.0 {
            return a;
        }
        let keep = T::of(1.0 / (1.0 - p));
        let (r, c) = self.value(a).shape();
        let mask = Matrix::from_fn(r, c, |_, _| {
            if rng.random::<f64>() < p {
                T::zero()
            } else {
                keep
            }
        });
        let out = self.value(a).zip_map(&mask, |x, m| x * m);
        self.push(out, Op::Mask(a, mask))
    }

    /// Multiplies every row `i` of `m` by `s[i]` (`s` is `n × 1`) or every
    /// entry by the scalar `s` (`1 × 1`).
    pub fn mul_broadcast(&mut self, s: Var, m: Var) -> Result<Var> {
        let (sv, mv) = (self.value(s), self.value(m));
        let per_row = match sv.shape() {
            (1, 1) => false,
            (r, 1) if r == mv.rows() => true,
            other => {
                return Err(Error::Shape(format!(
                    "broadcast scale {other:?} against {:?}",
                    mv.shape()
                )))
            }
        };
        let out = Matrix::from_fn(mv.rows(), mv.cols(), |i, j| {
            let k = if per_row { sv[(i, 0)] } else { sv[(0, 0)] };
            k * mv[(i, j)]
        });
        Ok(self.push(out, Op::MulBroadcast(s, m)))
    }

    /// Mean softmax cross-entropy of `logits` rows against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let z = self.value(logits);
        if z.rows() != targets.len() || z.rows() == 0 {
            return Err(Error::Shape(format!(
                "{} logit rows for {} targets",
                z.rows(),
                targets.len()
            )));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= z.cols()) {
            return Err(Error::Shape(format!("target class {t} of {}", z.cols())));
        }
        let mut total = 0.0f64;
        for (i, &t) in targets.iter().enumerate() {
            let row = z.row(i);
            let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<T>().ln();
            total += (lse - row[t]).to_f64_lossy();
        }
        let loss = Matrix::filled(1, 1, T::of(total / targets.len() as f64));
        Ok(self.push(loss, Op::SoftmaxCe(logits, targets.to_vec())))
    }

    /// Mean per-class binary cross-entropy with logits against multi-hot rows.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Matrix<T>) -> Result<Var> {
        let z = self.value(logits);
        if z.shape() != targets.shape() || z.rows() == 0 {
            return Err(Error::Shape(format!(
                "bce logits {:?} vs targets {:?}",
                z.shape(),
                targets.shape()
            )));
        }
        let total: f64 = z
            .as_slice()
            .iter()
            .zip(targets.as_slice())
            .map(|(&x, &y)| {
                let x = x.to_f64_lossy();
                let y = y.to_f64_lossy();
                x.max(0.0) - x * y + (-x.abs()).exp().ln_1p()
            })
            .sum();
        let n = (z.rows() * z.cols()) as f64;
        let loss = Matrix::filled(1, 1, T::of(total / n));
        Ok(self.push(loss, Op::Bce(logits, targets.clone())))
    }

    /// Reverse pass from the `1 × 1` node `loss`.
    ///
    /// Parameter gradients in `store` are overwritten: reachable parameters
    /// receive their gradient, all others are zeroed.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        if self.consumed {
            return Err(Error::BackwardTwice);
        }
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Shape(format!(
                "backward from a {:?} value",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;
        store.zero_grad();
        let mut grads: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].clone() else { continue };
            let node = &self.nodes[idx];
            let val = |v: Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => store.accumulate_grad(*id, &g),
                Op::MatMul(a, b) => {
                    let ga = g.matmul_nt(val(*b))?;
                    let gb = val(*a).matmul_tn(&g)?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::AddRow(a, b) => {
                    let mut gb = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (o, &x) in gb.row_mut(0).iter_mut().zip(g.row(i)) {
                            *o += x;
                        }
                    }
                    accumulate(&mut grads, *a, g);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, s) => {
                    let s = *s;
                    accumulate(&mut grads, *a, g.map(|x| x * s));
                }
                Op::Sum(xs) => {
                    for &x in xs {
                        accumulate(&mut grads, x, g.clone());
                    }
                }
                Op::Concat(xs) => {
                    let mut start = 0;
                    for &x in xs {
                        let w = val(x).cols();
                        let part = Matrix::from_fn(g.rows(), w, |i, j| g[(i, start + j)]);
                        accumulate(&mut grads, x, part);
                        start += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let (r, c) = val(*a).shape();
                    let mut full = Matrix::zeros(r, c);
                    for i in 0..r {
                        for j in 0..g.cols() {
                            full[(i, start + j)] = g[(i, j)];
                        }
                    }
                    accumulate(&mut grads, *a, full);
                }
                Op::Act(a, act) => {
                    let x = val(*a);
                    let act = *act;
                    let ga = Matrix::from_fn(g.rows(), g.cols(), |i, j| {
                        g[(i, j)] * act.derivative(x[(i, j)], node.value[(i, j)])
                    });
                    accumulate(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = Matrix::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let dot: T = y.row(i).iter().zip(g.row(i)).map(|(&p, &q)| p * q).sum();
                        for j in 0..y.cols() {
                            ga[(i, j)] = y[(i, j)] * (g[(i, j)] - dot);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Mask(a, mask) => {
                    accumulate(&mut grads, *a, g.zip_map(mask, |x, m| x * m));
                }
                Op::MulBroadcast(s, m) => {
                    let (sv, mv) = (val(*s), val(*m));
                    let per_row = sv.rows() > 1 || mv.rows() == 1;
                    let gm = Matrix::from_fn(mv.rows(), mv.cols(), |i, j| {
                        let k = if per_row { sv[(i, 0)] } else { sv[(0, 0)] };
                        k * g[(i, j)]
                    });
                    let mut gs = Matrix::zeros(sv.rows(), 1);
                    for i in 0..mv.rows() {
                        let d: T = mv.row(i).iter().zip(g.row(i)).map(|(&a, &b)| a * b).sum();
                        if per_row {
                            gs[(i, 0)] += d;
                        } else {
                            gs[(0, 0)] += d;
                        }
                    }
                    accumulate(&mut grads, *s, gs);
                    accumulate(&mut grads, *m, gm);
                }
                Op::SoftmaxCe(a, targets) => {
                    let z = val(*a);
                    let scale = g[(0, 0)] / T::of(targets.len() as f64);
                    let mut ga = z.clone();
                    for (i, &t) in targets.iter().enumerate() {
                        let row = ga.row_mut(i);
                        softmax_in_place(row);
                        row[t] = row[t] - T::one();
                        for x in row.iter_mut() {
                            *x = *x * scale;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Bce(a, targets) => {
                    let z = val(*a);
                    let scale = g[(0, 0)] / T::of((z.rows() * z.cols()) as f64);
                    let ga = z.zip_map(targets, |x, y| (Activation::Sigmoid.apply(x) - y) * scale);
                    accumulate(&mut grads, *a, ga);
                }
            }
        }
        self.grads = grads;
        Ok(())
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Matrix<T>>], v: Var, g: Matrix<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let mut total = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x = *x / total;
    }
}

fn op_name<T>(op: &Op<T>) -> &'static str {
    match op {
        Op::Leaf => "constant",
        Op::Param(_) => "parameter",
        Op::MatMul(..) => "matmul",
        Op::Add(..) => "add",
        Op::AddRow(..) => "add_row",
        Op::Scale(..) => "scale",
        Op::Sum(_) => "sum",
        Op::Concat(_) => "concat_cols",
        Op::SliceCols(..) => "slice_cols",
        Op::Act(..) => "activation",
        Op::SoftmaxRows(_) => "softmax_rows",
        Op::Mask(..) => "dropout",
        Op::MulBroadcast(..) => "mul_broadcast",
        Op::SoftmaxCe(..) => "softmax_cross_entropy",
        Op::Bce(..) => "bce_with_logits",
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix<f64> {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn concat_shape() {
        let mut t = Tape::<f64>::new();
        let a = t.constant(Matrix::zeros(3, 2));
        let b = t.constant(Matrix::zeros(3, 5));
        let c = t.concat_cols(&[a, b]).unwrap();
        assert_eq!(t.value(c).shape(), (3, 7));
    }

    #[test]
    fn sum_of_additive_inverses_is_zero() {
        let mut t = Tape::<f64>::new();
        let x = m(&[&[1.5, -2.0], &[0.25, 7.0]]);
        let a = t.constant(x.clone());
        let b = t.constant(x.map(|v| -v));
        let s = t.sum(&[a, b]).unwrap();
        assert!(t.value(s).as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softmax_uniform_and_closed_form() {
        let mut t = Tape::<f64>::new();
        let a = t.constant(m(&[&[0.0, 0.0, 0.0], &[2f64.ln(), 0.0, f64::NEG_INFINITY]]));
        let s = t.softmax_rows(a);
        let y = t.value(s);
        for j in 0..3 {
            assert!((y[(0, j)] - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((y[(1, 0)] - 2.0 / 3.0).abs() < 1e-15);
        assert!((y[(1, 1)] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn leaky_relu_definition() {
        let mut t = Tape::<f64>::new();
        let a = t.constant(m(&[&[-1.0, 2.0]]));
        let y = t.activation(a, Activation::LeakyRelu(0.2));
        assert_eq!(t.value(y).as_slice(), &[-0.2, 2.0]);
    }

    #[test]
    fn dropout_scales_and_is_identity_in_eval() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut t = Tape::<f64>::new();
        let a = t.constant(Matrix::filled(20, 20, 1.0));
        let same = t.dropout(a, 0.5, false, &mut rng);
        assert_eq!(same, a);
        let d = t.dropout(a, 0.25, true, &mut rng);
        let vals = t.value(d).as_slice();
        assert!(vals.iter().all(|&v| v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-15));
        let dropped = vals.iter().filter(|&&v| v == 0.0).count();
        assert!(dropped > 50 && dropped < 150, "{dropped}");
    }

    #[test]
    fn cross_entropy_closed_forms() {
        let mut t = Tape::<f64>::new();
        let uniform = t.constant(Matrix::zeros(4, 5));
        let l = t.softmax_cross_entropy(uniform, &[0, 1, 2, 4]).unwrap();
        assert!((t.value(l)[(0, 0)] - 5f64.ln()).abs() < 1e-12);

        let sat = t.constant(m(&[&[1e6, 0.0], &[0.0, 1e6]]));
        let l = t.softmax_cross_entropy(sat, &[0, 1]).unwrap();
        assert!(t.value(l)[(0, 0)].abs() < 1e-12);

        assert!(t.softmax_cross_entropy(sat, &[0, 2]).is_err());
    }

    #[test]
    fn bce_at_zero_logits_is_ln2() {
        let mut t = Tape::<f64>::new();
        let z = t.constant(Matrix::zeros(3, 2));
        let y = m(&[&[1.0, 0.0], &[0.0, 0.0], &[1.0, 1.0]]);
        let l = t.bce_with_logits(z, &y).unwrap();
        assert!((t.value(l)[(0, 0)] - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn backward_twice_errors() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", Matrix::filled(1, 1, 2.0)).unwrap();
        let mut t = Tape::new();
        let v = t.param(&store, w);
        let sq = t.matmul(v, v).unwrap();
        t.backward(sq, &mut store).unwrap();
        assert_eq!(store.grad(w)[(0, 0)], 4.0);
        assert!(matches!(t.backward(sq, &mut store), Err(Error::BackwardTwice)));
        t.reset();
        let v = t.param(&store, w);
        let sq = t.matmul(v, v).unwrap();
        assert!(t.backward(sq, &mut store).is_ok());
    }

    #[test]
    fn unreachable_params_get_zero_grad() {
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", Matrix::filled(1, 1, 3.0)).unwrap();
        let b = store.add("b", Matrix::filled(1, 1, 5.0)).unwrap();
        let mut t = Tape::new();
        let va = t.param(&store, a);
        let _vb = t.param(&store, b);
        let loss = t.scale(va, 2.0);
        t.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(a)[(0, 0)], 2.0);
        assert_eq!(store.grad(b)[(0, 0)], 0.0);
    }

    #[test]
    fn non_finite_is_flagged() {
        let mut t = Tape::<f64>::new();
        t.set_check_finite(true);
        let a = t.constant(m(&[&[1.0]]));
        let _ = t.scale(a, f64::INFINITY);
        assert_eq!(t.non_finite(), Some("scale"));
    }
}
