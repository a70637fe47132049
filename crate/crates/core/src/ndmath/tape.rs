//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! Every operation appends a node holding its value. `grad` walks the nodes
//! backwards from a scalar output and accumulates adjoints.

use std::sync::atomic::{AtomicU64, Ordering};

use super::{softmax_rows, Matrix};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    /// a · bᵀ
    MatMulT(usize, usize),
    Transpose(usize),
    AddRow(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddConst(usize),
    Relu(usize),
    Exp(usize),
    LogClamped(usize, f64),
    SoftmaxRows(usize),
    /// Row-wise log-sum-exp over the unmasked entries; output rows x 1.
    LogSumExpRows(usize, Option<Vec<bool>>),
    PickPerRow(usize, Vec<usize>),
    /// Rows divided by their norms; keeps the norms for the backward pass.
    NormalizeRows(usize, Vec<f64>),
    ConcatRows(usize, usize),
    Sum(usize),
    ColSums(usize),
    RowSums(usize),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

/// Single-owner recording of one forward evaluation.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, name: &'static str) -> Result<Var> {
        let value = value.check_finite(name)?;
        self.nodes.push(Node { value, op });
        Ok(Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        })
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::NotRecorded);
        }
        Ok(v.index)
    }

    pub fn value(&self, v: Var) -> Result<&Matrix> {
        Ok(&self.nodes[self.idx(v)?].value)
    }

    /// Records an input. Inputs that never appear in `grad`'s `wrt` list act
    /// as constants.
    pub fn leaf(&mut self, value: Matrix) -> Result<Var> {
        self.push(value, Op::Leaf, "leaf")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let v = self.nodes[ia].value.matmul(&self.nodes[ib].value)?;
        self.push(v, Op::MatMul(ia, ib), "matmul")
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let v = self.nodes[ia].value.matmul_t(&self.nodes[ib].value)?;
        self.push(v, Op::MatMulT(ia, ib), "matmul_t")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = self.nodes[ia].value.transpose();
        self.push(v, Op::Transpose(ia), "transpose")
    }

    /// Adds a 1 x cols row (a bias) to each row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(row)?);
        let v = self.nodes[ia].value.add_row(&self.nodes[ib].value)?;
        self.push(v, Op::AddRow(ia, ib), "add_row")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let v = self.nodes[ia].value.add(&self.nodes[ib].value)?;
        self.push(v, Op::Add(ia, ib), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let v = self.nodes[ia].value.sub(&self.nodes[ib].value)?;
        self.push(v, Op::Sub(ia, ib), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let v = self.nodes[ia].value.hadamard(&self.nodes[ib].value)?;
        self.push(v, Op::Mul(ia, ib), "mul")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = self.nodes[ia].value.scale(s);
        self.push(v, Op::Scale(ia, s), "scale")
    }

    /// Adds a constant to every entry.
    pub fn add_const(&mut self, a: Var, c: f64) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = self.nodes[ia].value.map(|x| x + c);
        self.push(v, Op::AddConst(ia), "add_const")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = self.nodes[ia].value.map(|x| x.max(0.0));
        self.push(v, Op::Relu(ia), "relu")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = self.nodes[ia].value.map(f64::exp);
        self.push(v, Op::Exp(ia), "exp")
    }

    /// `ln(max(a, eps))`; the gradient is zero where the clamp is active.
    pub fn log_clamped(&mut self, a: Var, eps: f64) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = self.nodes[ia].value.map(|x| x.max(eps).ln());
        self.push(v, Op::LogClamped(ia, eps), "log_clamped")
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = softmax_rows(&self.nodes[ia].value);
        self.push(v, Op::SoftmaxRows(ia), "softmax_rows")
    }

    /// Row-wise log-sum-exp. With a mask, only entries where the mask is
    /// true participate; each row needs at least one.
    pub fn logsumexp_rows(&mut self, a: Var, mask: Option<Vec<bool>>) -> Result<Var> {
        let ia = self.idx(a)?;
        let x = &self.nodes[ia].value;
        if let Some(m) = &mask {
            if m.len() != x.rows() * x.cols() {
                return Err(Error::DimensionMismatch {
                    op: "logsumexp_rows mask",
                    left: x.shape(),
                    right: (m.len(), 1),
                });
            }
        }
        let mut out = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let keep = |c: usize| mask.as_ref().is_none_or(|m| m[r * x.cols() + c]);
            let row = x.row(r);
            let max = (0..x.cols())
                .filter(|&c| keep(c))
                .map(|c| row[c])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::EmptyReduction { op: "logsumexp_rows" });
            }
            let s: f64 = (0..x.cols()).filter(|&c| keep(c)).map(|c| (row[c] - max).exp()).sum();
            out.push(max + s.ln());
        }
        self.push(Matrix::column_vector(out), Op::LogSumExpRows(ia, mask), "logsumexp_rows")
    }

    /// Picks column `cols[r]` from each row `r`; output rows x 1.
    pub fn pick_per_row(&mut self, a: Var, cols: Vec<usize>) -> Result<Var> {
        let ia = self.idx(a)?;
        let x = &self.nodes[ia].value;
        if cols.len() != x.rows() || cols.iter().any(|&c| c >= x.cols()) {
            return Err(Error::InvalidArgument(format!(
                "pick_per_row needs {} in-range column indices",
                x.rows()
            )));
        }
        let v = Matrix::column_vector(cols.iter().enumerate().map(|(r, &c)| x.get(r, c)).collect());
        self.push(v, Op::PickPerRow(ia, cols), "pick_per_row")
    }

    /// Divides each row by its Euclidean norm. A zero row is an error.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let x = &self.nodes[ia].value;
        let norms = x.row_norms();
        if let Some(index) = norms.iter().position(|&n| n == 0.0) {
            return Err(Error::ZeroNorm {
                op: "normalize_rows",
                index,
            });
        }
        let mut v = x.clone();
        for (r, &n) in norms.iter().enumerate() {
            v.row_mut(r).iter_mut().for_each(|e| *e /= n);
        }
        self.push(v, Op::NormalizeRows(ia, norms), "normalize_rows")
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let v = self.nodes[ia].value.vstack(&self.nodes[ib].value)?;
        self.push(v, Op::ConcatRows(ia, ib), "concat_rows")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = Matrix::scalar(self.nodes[ia].value.sum());
        self.push(v, Op::Sum(ia), "sum")
    }

    pub fn col_sums(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = self.nodes[ia].value.col_sums();
        self.push(v, Op::ColSums(ia), "col_sums")
    }

    pub fn row_sums(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = self.nodes[ia].value.row_sums();
        self.push(v, Op::RowSums(ia), "row_sums")
    }

    /// Gradients of the 1x1 `output` with respect to each of `wrt`.
    pub fn grad(&self, output: Var, wrt: &[Var]) -> Result<Vec<Matrix>> {
        let out = self.idx(output)?;
        let targets: Vec<usize> = wrt.iter().map(|&v| self.idx(v)).collect::<Result<_>>()?;
        let shape = self.nodes[out].value.shape();
        if shape != (1, 1) {
            return Err(Error::NotScalar(shape));
        }
        let mut adj: Vec<Option<Matrix>> = (0..=out).map(|_| None).collect();
        adj[out] = Some(Matrix::scalar(1.0));
        for i in (0..=out).rev() {
            let Some(g) = adj[i].take() else { continue };
            self.backward(i, &g, &mut adj)?;
            adj[i] = Some(g);
        }
        Ok(targets
            .into_iter()
            .map(|t| {
                adj.get(t)
                    .and_then(Clone::clone)
                    .unwrap_or_else(|| {
                        let (r, c) = self.nodes[t].value.shape();
                        Matrix::zeros(r, c)
                    })
            })
            .collect())
    }

    fn backward(&self, i: usize, g: &Matrix, adj: &mut [Option<Matrix>]) -> Result<()> {
        let val = |j: usize| &self.nodes[j].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                accumulate(adj, *a, g.matmul_t(val(*b))?)?;
                accumulate(adj, *b, val(*a).t_matmul(g)?)?;
            }
            Op::MatMulT(a, b) => {
                accumulate(adj, *a, g.matmul(val(*b))?)?;
                accumulate(adj, *b, g.t_matmul(val(*a))?)?;
            }
            Op::Transpose(a) => accumulate(adj, *a, g.transpose())?,
            Op::AddRow(a, b) => {
                accumulate(adj, *a, g.clone())?;
                accumulate(adj, *b, g.col_sums())?;
            }
            Op::Add(a, b) => {
                accumulate(adj, *a, g.clone())?;
                accumulate(adj, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                accumulate(adj, *a, g.clone())?;
                accumulate(adj, *b, g.scale(-1.0))?;
            }
            Op::Mul(a, b) => {
                accumulate(adj, *a, g.hadamard(val(*b))?)?;
                accumulate(adj, *b, g.hadamard(val(*a))?)?;
            }
            Op::Scale(a, s) => accumulate(adj, *a, g.scale(*s))?,
            Op::AddConst(a) => accumulate(adj, *a, g.clone())?,
            Op::Relu(a) => {
                let d = g.zip_map(val(*a), "relu'", |g, x| if x > 0.0 { g } else { 0.0 })?;
                accumulate(adj, *a, d)?;
            }
            Op::Exp(a) => accumulate(adj, *a, g.hadamard(val(i))?)?,
            Op::LogClamped(a, eps) => {
                let eps = *eps;
                let d = g.zip_map(val(*a), "log'", |g, x| if x > eps { g / x } else { 0.0 })?;
                accumulate(adj, *a, d)?;
            }
            Op::SoftmaxRows(a) => {
                let y = val(i);
                let mut d = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for (o, (y, g)) in d.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                        *o = y * (g - dot);
                    }
                }
                accumulate(adj, *a, d)?;
            }
            Op::LogSumExpRows(a, mask) => {
                let x = val(*a);
                let lse = val(i);
                let cols = x.cols();
                let mut d = Matrix::zeros(x.rows(), cols);
                for r in 0..x.rows() {
                    let (l, gr) = (lse.get(r, 0), g.get(r, 0));
                    for c in 0..cols {
                        if mask.as_ref().is_none_or(|m| m[r * cols + c]) {
                            d.set(r, c, gr * (x.get(r, c) - l).exp());
                        }
                    }
                }
                accumulate(adj, *a, d)?;
            }
            Op::PickPerRow(a, cols) => {
                let x = val(*a);
                let mut d = Matrix::zeros(x.rows(), x.cols());
                for (r, &c) in cols.iter().enumerate() {
                    d.set(r, c, g.get(r, 0));
                }
                accumulate(adj, *a, d)?;
            }
            Op::NormalizeRows(a, norms) => {
                let y = val(i);
                let mut d = Matrix::zeros(y.rows(), y.cols());
                for (r, &n) in norms.iter().enumerate() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for (o, (y, g)) in d.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                        *o = (g - y * dot) / n;
                    }
                }
                accumulate(adj, *a, d)?;
            }
            Op::ConcatRows(a, b) => {
                let split = val(*a).rows();
                let top: Vec<usize> = (0..split).collect();
                let bottom: Vec<usize> = (split..g.rows()).collect();
                accumulate(adj, *a, g.select_rows(&top))?;
                accumulate(adj, *b, g.select_rows(&bottom))?;
            }
            Op::Sum(a) => {
                let (r, c) = val(*a).shape();
                accumulate(adj, *a, Matrix::filled(r, c, g.get(0, 0)))?;
            }
            Op::ColSums(a) => {
                let rows = val(*a).rows();
                let mut d = Matrix::zeros(rows, g.cols());
                for r in 0..rows {
                    d.row_mut(r).copy_from_slice(g.row(0));
                }
                accumulate(adj, *a, d)?;
            }
            Op::RowSums(a) => {
                let cols = val(*a).cols();
                let mut d = Matrix::zeros(g.rows(), cols);
                for r in 0..g.rows() {
                    let gr = g.get(r, 0);
                    d.row_mut(r).iter_mut().for_each(|v| *v = gr);
                }
                accumulate(adj, *a, d)?;
            }
        }
        Ok(())
    }
}

fn accumulate(adj: &mut [Option<Matrix>], at: usize, g: Matrix) -> Result<()> {
    match &mut adj[at] {
        Some(existing) => existing.axpy(1.0, &g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndmath::{gaussian_sample, Rng};

    /// Central differences of `f` around `x`, one coordinate at a time.
    fn numeric_grad(x: &Matrix, f: &dyn Fn(&Matrix) -> f64) -> Matrix {
        let mut g = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.data().len() {
            let h = 1e-5 * x.data()[i].abs().max(1.0);
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            g.data_mut()[i] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
            .fold(0.0, f64::max)
    }

    /// Checks d(build(x))/dx against finite differences for a unary graph.
    fn check_unary(x: Matrix, build: impl Fn(&mut Tape, Var) -> Result<Var>) {
        let eval = |m: &Matrix| {
            let mut t = Tape::new();
            let v = t.leaf(m.clone()).unwrap();
            let out = build(&mut t, v).unwrap();
            t.value(out).unwrap().item().unwrap()
        };
        let mut t = Tape::new();
        let v = t.leaf(x.clone()).unwrap();
        let out = build(&mut t, v).unwrap();
        let g = t.grad(out, &[v]).unwrap().remove(0);
        let n = numeric_grad(&x, &eval);
        let e = rel_err(&g, &n);
        assert!(e <= 1e-4, "relative error {e}");
    }

    fn rand(seed: u64, r: usize, c: usize) -> Matrix {
        gaussian_sample(&mut Rng::new(seed), r, c, 0.0, 1.0).unwrap()
    }

    /// Fixed random weights so every primitive reduces to a scalar with a
    /// nontrivial upstream gradient.
    fn weighted_sum(t: &mut Tape, v: Var, seed: u64) -> Result<Var> {
        let (r, c) = t.value(v)?.shape();
        let w = t.leaf(rand(seed, r, c))?;
        let p = t.mul(v, w)?;
        t.sum(p)
    }

    #[test]
    fn square_at_three() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::scalar(3.0)).unwrap();
        let y = t.mul(x, x).unwrap();
        let g = t.grad(y, &[x]).unwrap();
        assert_eq!(g[0].item().unwrap(), 6.0);
    }

    #[test]
    fn logsumexp_gradient_sums_to_one() {
        let mut t = Tape::new();
        let x = t.leaf(rand(1, 1, 7)).unwrap();
        let y = t.logsumexp_rows(x, None).unwrap();
        let g = t.grad(y, &[x]).unwrap().remove(0);
        assert!((g.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn foreign_var_is_not_recorded() {
        let mut a = Tape::new();
        let mut b = Tape::new();
        let x = a.leaf(Matrix::scalar(1.0)).unwrap();
        let y = b.leaf(Matrix::scalar(2.0)).unwrap();
        assert!(matches!(b.grad(y, &[x]), Err(Error::NotRecorded)));
        assert!(matches!(a.relu(y), Err(Error::NotRecorded)));
    }

    #[test]
    fn non_scalar_output_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::zeros(2, 2)).unwrap();
        assert!(matches!(t.grad(x, &[x]), Err(Error::NotScalar((2, 2)))));
    }

    #[test]
    fn unused_input_has_zero_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::scalar(2.0)).unwrap();
        let unused = t.leaf(Matrix::zeros(2, 3)).unwrap();
        let y = t.scale(x, 4.0).unwrap();
        let g = t.grad(y, &[unused, x]).unwrap();
        assert_eq!(g[0], Matrix::zeros(2, 3));
        assert_eq!(g[1].item().unwrap(), 4.0);
    }

    #[test]
    fn fd_matmul_both_sides() {
        let b = rand(2, 4, 3);
        check_unary(rand(1, 5, 4), |t, x| {
            let bv = t.leaf(b.clone())?;
            let y = t.matmul(x, bv)?;
            weighted_sum(t, y, 9)
        });
        let a = rand(3, 5, 4);
        check_unary(rand(4, 4, 3), |t, x| {
            let av = t.leaf(a.clone())?;
            let y = t.matmul(av, x)?;
            weighted_sum(t, y, 9)
        });
    }

    #[test]
    fn fd_matmul_t_and_transpose() {
        let b = rand(5, 6, 4);
        check_unary(rand(6, 3, 4), |t, x| {
            let bv = t.leaf(b.clone())?;
            let y = t.matmul_t(x, bv)?;
            weighted_sum(t, y, 10)
        });
        let a = rand(7, 3, 4);
        check_unary(rand(8, 6, 4), |t, x| {
            let av = t.leaf(a.clone())?;
            let y = t.matmul_t(av, x)?;
            weighted_sum(t, y, 10)
        });
        check_unary(rand(9, 3, 5), |t, x| {
            let y = t.transpose(x)?;
            weighted_sum(t, y, 11)
        });
    }

    #[test]
    fn fd_elementwise() {
        let other = rand(12, 4, 3);
        check_unary(rand(13, 4, 3), |t, x| {
            let o = t.leaf(other.clone())?;
            let a = t.add(x, o)?;
            let s = t.sub(a, x)?;
            let s2 = t.sub(x, s)?;
            let m = t.mul(s2, x)?;
            let sc = t.scale(m, -1.7)?;
            let c = t.add_const(sc, 0.3)?;
            weighted_sum(t, c, 14)
        });
        check_unary(rand(15, 4, 3), |t, x| {
            let r = t.relu(x)?;
            weighted_sum(t, r, 16)
        });
        check_unary(rand(17, 4, 3), |t, x| {
            let e = t.exp(x)?;
            weighted_sum(t, e, 18)
        });
        let positive = rand(19, 4, 3).map(|v| v.abs() + 0.5);
        check_unary(positive, |t, x| {
            let l = t.log_clamped(x, 1e-12)?;
            weighted_sum(t, l, 20)
        });
    }

    #[test]
    fn fd_add_row_bias() {
        let a = rand(21, 5, 3);
        check_unary(rand(22, 1, 3), |t, b| {
            let av = t.leaf(a.clone())?;
            let y = t.add_row(av, b)?;
            weighted_sum(t, y, 23)
        });
    }

    #[test]
    fn fd_softmax_and_logsumexp() {
        check_unary(rand(24, 4, 5), |t, x| {
            let y = t.softmax_rows(x)?;
            weighted_sum(t, y, 25)
        });
        check_unary(rand(26, 4, 5), |t, x| {
            let y = t.logsumexp_rows(x, None)?;
            weighted_sum(t, y, 27)
        });
        let mask: Vec<bool> = (0..20).map(|i| i % 6 != 0).collect();
        check_unary(rand(28, 4, 5), move |t, x| {
            let y = t.logsumexp_rows(x, Some(mask.clone()))?;
            weighted_sum(t, y, 29)
        });
    }

    #[test]
    fn fd_pick_normalize_concat() {
        check_unary(rand(30, 4, 5), |t, x| {
            let y = t.pick_per_row(x, vec![0, 4, 2, 2])?;
            weighted_sum(t, y, 31)
        });
        check_unary(rand(32, 4, 5), |t, x| {
            let y = t.normalize_rows(x)?;
            weighted_sum(t, y, 33)
        });
        let other = rand(34, 2, 5);
        check_unary(rand(35, 3, 5), |t, x| {
            let o = t.leaf(other.clone())?;
            let y = t.concat_rows(o, x)?;
            weighted_sum(t, y, 36)
        });
    }

    #[test]
    fn fd_reductions() {
        check_unary(rand(37, 4, 5), |t, x| {
            let y = t.col_sums(x)?;
            weighted_sum(t, y, 38)
        });
        check_unary(rand(39, 4, 5), |t, x| {
            let y = t.row_sums(x)?;
            weighted_sum(t, y, 40)
        });
        check_unary(rand(41, 4, 5), |t, x| {
            let s = t.sum(x)?;
            t.mul(s, s)
        });
    }

    #[test]
    fn zero_row_normalization_reports_index() {
        let mut t = Tape::new();
        let x = t
            .leaf(Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap())
            .unwrap();
        assert!(matches!(
            t.normalize_rows(x),
            Err(Error::ZeroNorm { index: 1, .. })
        ));
    }

    #[test]
    fn reused_node_accumulates() {
        // f(x) = sum(x * x) + sum(x) -> 2x + 1
        let mut t = Tape::new();
        let x = t.leaf(Matrix::row_vector(vec![1.0, -2.0, 0.5])).unwrap();
        let sq = t.mul(x, x).unwrap();
        let a = t.sum(sq).unwrap();
        let b = t.sum(x).unwrap();
        let y = t.add(a, b).unwrap();
        let g = t.grad(y, &[x]).unwrap().remove(0);
        assert_eq!(g.data(), &[3.0, -3.0, 2.0]);
    }
}
