use super::{Result, Tensor, TensorError};
use crate::numeric::exact_sum;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
pub(super) enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulExact(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Transpose(Var),
    SumRows(Var),
    Sum(Var),
    Mean(Var),
    Clamp(Var, f64, f64),
    Mse(Var, Var),
    WeightedBce {
        pred: Var,
        target: Tensor,
        mask: Option<Tensor>,
        pos_weight: f64,
        scale: f64,
    },
    KlGaussian(Var, Var),
    BceLogits {
        logits: Var,
        target: f64,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation so gradients can be pulled back from a
/// scalar loss.
///
/// Leaf gradients persist across [`Tape::backward`] calls and accumulate until
/// [`Tape::zero_grad`].
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(super) fn push(&mut self, value: Tensor, op: Op, op_name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op_name });
        }
        let requires_grad = match &op {
            Op::Leaf => false,
            other => inputs(other).iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        let v = self.push(value, Op::Leaf, "leaf")?;
        self.nodes[v.0].requires_grad = requires_grad;
        Ok(v)
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::Shape {
                op,
                left: self.shape(a),
                right: self.shape(b),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    /// Matrix product whose inner sums are correctly rounded, making each
    /// output entry independent of the ordering of the inner index. Used for
    /// neighbourhood aggregation.
    pub fn matmul_exact(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(TensorError::Shape {
                op: "matmul_exact",
                left: av.shape(),
                right: bv.shape(),
            });
        }
        let mut out = Tensor::zeros(av.rows(), bv.cols());
        for i in 0..av.rows() {
            let arow = av.row(i);
            for j in 0..bv.cols() {
                let s = exact_sum(
                    arow.iter()
                        .enumerate()
                        .filter(|(_, &x)| x != 0.0)
                        .map(|(k, &x)| x * bv.get(k, j)),
                );
                out.set(i, j, s);
            }
        }
        self.push(out, Op::MatMulExact(a, b), "matmul_exact")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(out, Op::Add(a, b), "add")
    }

    /// Adds a 1 x cols row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        if self.shape(row) != (1, ac) {
            return Err(TensorError::Shape {
                op: "add_row",
                left: (ar, ac),
                right: self.shape(row),
            });
        }
        let rv = self.value(row).data().to_vec();
        let mut out = self.value(a).clone();
        for r in 0..ar {
            for c in 0..ac {
                let v = out.get(r, c) + rv[c];
                out.set(r, c, v);
            }
        }
        self.push(out, Op::AddRow(a, row), "add_row")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(out, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(out, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).scale(s);
        self.push(out, Op::Scale(a, s), "scale")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a), "relu")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid_value);
        self.push(out, Op::Sigmoid(a), "sigmoid")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a), "exp")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a), "transpose")
    }

    /// Column-wise sum over rows (sum pooling), 1 x cols.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).sum_rows();
        self.push(out, Op::SumRows(a), "sum_rows")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = exact_sum(self.value(a).data().iter().copied());
        self.push(Tensor::scalar(s), Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(TensorError::Invalid("mean of an empty tensor".into()));
        }
        let s = exact_sum(t.data().iter().copied()) / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), "mean")
    }

    /// Elementwise clamp; the gradient is zero wherever the bound is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(out, Op::Clamp(a, lo, hi), "clamp")
    }

    /// Back-propagates from a scalar `loss`, accumulating into the gradients
    /// of every differentiable leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(TensorError::NonScalarLoss(shape));
        }
        let mut adj: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = adj[idx].take() else { continue };
            if let Op::Leaf = self.nodes[idx].op {
                match &mut self.grads[idx] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
                continue;
            }
            for (input, contribution) in self.vjp(idx, &g)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut adj[input.0] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot @ None => *slot = Some(contribution),
                }
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `idx` against upstream gradient `g`.
    fn vjp(&self, idx: usize, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let node = &self.nodes[idx];
        let out = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let mut res = Vec::with_capacity(2);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) | Op::MatMulExact(a, b) => {
                if needs(*a) {
                    res.push((*a, g.matmul(&val(*b).transpose())?));
                }
                if needs(*b) {
                    res.push((*b, val(*a).transpose().matmul(g)?));
                }
            }
            Op::Add(a, b) => {
                res.push((*a, g.clone()));
                res.push((*b, g.clone()));
            }
            Op::AddRow(a, row) => {
                res.push((*a, g.clone()));
                if needs(*row) {
                    res.push((*row, g.sum_rows()));
                }
            }
            Op::Sub(a, b) => {
                res.push((*a, g.clone()));
                res.push((*b, g.scale(-1.0)));
            }
            Op::Mul(a, b) => {
                res.push((*a, g.zip_map(val(*b), |x, y| x * y)));
                res.push((*b, g.zip_map(val(*a), |x, y| x * y)));
            }
            Op::Scale(a, s) => res.push((*a, g.scale(*s))),
            Op::Relu(a) => {
                res.push((*a, g.zip_map(val(*a), |gx, x| if x > 0.0 { gx } else { 0.0 })))
            }
            Op::Sigmoid(a) => res.push((*a, g.zip_map(out, |gx, s| gx * s * (1.0 - s)))),
            Op::Exp(a) => res.push((*a, g.zip_map(out, |gx, e| gx * e))),
            Op::Transpose(a) => res.push((*a, g.transpose())),
            Op::SumRows(a) => {
                let (r, c) = val(*a).shape();
                let mut t = Tensor::zeros(r, c);
                for i in 0..r {
                    for j in 0..c {
                        t.set(i, j, g.get(0, j));
                    }
                }
                res.push((*a, t));
            }
            Op::Sum(a) => {
                let (r, c) = val(*a).shape();
                res.push((*a, Tensor::filled(r, c, g.item())));
            }
            Op::Mean(a) => {
                let (r, c) = val(*a).shape();
                res.push((*a, Tensor::filled(r, c, g.item() / (r * c) as f64)));
            }
            Op::Clamp(a, lo, hi) => res.push((
                *a,
                g.zip_map(val(*a), |gx, x| if x >= *lo && x <= *hi { gx } else { 0.0 }),
            )),
            loss_op => res.extend(self.loss_vjp(loss_op, g.item())?),
        }
        Ok(res)
    }

    pub(super) fn node_value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }
}

pub(super) fn inputs(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf => vec![],
        Op::MatMul(a, b)
        | Op::MatMulExact(a, b)
        | Op::Add(a, b)
        | Op::AddRow(a, b)
        | Op::Sub(a, b)
        | Op::Mul(a, b)
        | Op::Mse(a, b)
        | Op::KlGaussian(a, b) => vec![*a, *b],
        Op::Scale(a, _)
        | Op::Relu(a)
        | Op::Sigmoid(a)
        | Op::Exp(a)
        | Op::Transpose(a)
        | Op::SumRows(a)
        | Op::Sum(a)
        | Op::Mean(a)
        | Op::Clamp(a, _, _) => vec![*a],
        Op::WeightedBce { pred, .. } => vec![*pred],
        Op::BceLogits { logits, .. } => vec![*logits],
    }
}

#[inline]
pub fn sigmoid_value(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn relu_and_sigmoid_values() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[vec![-1.0, 2.0]])).unwrap();
        let r = tape.relu(x).unwrap();
        assert_eq!(tape.value(r).data(), &[0.0, 2.0]);
        let z = tape.constant(Tensor::scalar(0.0)).unwrap();
        let s = tape.sigmoid(z).unwrap();
        assert_eq!(tape.value(s).item(), 0.5);
    }

    #[test]
    fn linear_form_gradient_is_outer_product() {
        // loss = sum(W x), x fixed: dL/dW[i][j] = x[j]
        let mut tape = Tape::new();
        let w = tape.param(t(&[vec![1.0, -2.0, 0.5], vec![3.0, 0.0, 1.0]])).unwrap();
        let x = tape.constant(t(&[vec![0.2], vec![-1.5], vec![4.0]])).unwrap();
        let y = tape.matmul(w, x).unwrap();
        let loss = tape.sum(y).unwrap();
        tape.backward(loss).unwrap();
        let g = tape.grad(w).unwrap();
        for i in 0..2 {
            assert_eq!(g.row(i), &[0.2, -1.5, 4.0]);
        }
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn independent_parameter_gets_no_gradient() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::scalar(2.0)).unwrap();
        let p = tape.param(Tensor::scalar(5.0)).unwrap();
        let sq = tape.mul(a, a).unwrap();
        let loss = tape.sum(sq).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap().item(), 4.0);
        assert!(tape.grad(p).map_or(true, |g| g.item() == 0.0));
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::scalar(3.0)).unwrap();
        let loss = tape.scale(a, 2.0).unwrap();
        tape.backward(loss).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap().item(), 4.0);
        tape.zero_grad();
        assert!(tape.grad(a).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::zeros(2, 2)).unwrap();
        assert_eq!(
            tape.backward(a).unwrap_err(),
            TensorError::NonScalarLoss((2, 2))
        );
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::scalar(1000.0)).unwrap();
        assert_eq!(
            tape.exp(a).unwrap_err(),
            TensorError::NonFinite { op: "exp" }
        );
        assert!(tape.constant(Tensor::scalar(f64::NAN)).is_err());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(2, 3)).unwrap();
        let b = tape.constant(Tensor::zeros(3, 2)).unwrap();
        assert!(matches!(
            tape.add(a, b),
            Err(TensorError::Shape { op: "add", .. })
        ));
        assert!(tape.matmul(a, b).is_ok());
    }
}
