//! Dense tensor math with forward-mode directional derivatives and a
//! define-by-run reverse-mode tape.
//!
//! All tensors are row-major `(batch, features)` matrices of `f64`. Forward
//! mode carries a single tangent channel ([`DualTensor`]); reverse mode
//! records primitives on a [`Tape`] that is rebuilt for every loss
//! evaluation. Network code is written once against [`TensorOps`] and runs
//! on either backend.

use std::ops::{Add, Div, Mul, Neg, Sub};

use ndarray::{concatenate, s, Array2, Axis, Zip};

use crate::error::{Error, Result};

/// Scalar dual number `re + eps·ε` with `ε² = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dual {
    pub re: f64,
    pub eps: f64,
}

impl Dual {
    pub const fn new(re: f64, eps: f64) -> Self {
        Self { re, eps }
    }

    pub const fn constant(re: f64) -> Self {
        Self { re, eps: 0.0 }
    }

    pub fn sqrt(self) -> Self {
        let r = self.re.sqrt();
        Self::new(r, self.eps / (2.0 * r))
    }

    pub fn sin(self) -> Self {
        Self::new(self.re.sin(), self.eps * self.re.cos())
    }

    pub fn cos(self) -> Self {
        Self::new(self.re.cos(), -self.eps * self.re.sin())
    }

    /// `|x|`, with the derivative of the positive branch at zero.
    pub fn abs(self) -> Self {
        if self.re < 0.0 {
            -self
        } else {
            self
        }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, rhs: Dual) -> Dual {
        Dual::new(self.re + rhs.re, self.eps + rhs.eps)
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, rhs: Dual) -> Dual {
        Dual::new(self.re - rhs.re, self.eps - rhs.eps)
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, rhs: Dual) -> Dual {
        Dual::new(self.re * rhs.re, self.eps * rhs.re + self.re * rhs.eps)
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, rhs: Dual) -> Dual {
        let q = self.re / rhs.re;
        Dual::new(q, (self.eps - q * rhs.eps) / rhs.re)
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual::new(-self.re, -self.eps)
    }
}

impl Mul<f64> for Dual {
    type Output = Dual;
    fn mul(self, rhs: f64) -> Dual {
        Dual::new(self.re * rhs, self.eps * rhs)
    }
}

impl Add<f64> for Dual {
    type Output = Dual;
    fn add(self, rhs: f64) -> Dual {
        Dual::new(self.re + rhs, self.eps)
    }
}

/// A dense matrix with an optional tangent of identical shape.
///
/// A missing tangent means "identically zero" and lets the forward pass skip
/// the tangent arithmetic entirely.
#[derive(Debug, Clone, PartialEq)]
pub struct DualTensor {
    value: Array2<f64>,
    tangent: Option<Array2<f64>>,
}

impl DualTensor {
    pub fn constant(value: Array2<f64>) -> Self {
        Self { value, tangent: None }
    }

    pub fn with_tangent(value: Array2<f64>, tangent: Array2<f64>) -> Result<Self> {
        if value.dim() != tangent.dim() {
            return Err(Error::dim(format!(
                "tangent shape {:?} differs from value shape {:?}",
                tangent.dim(),
                value.dim()
            )));
        }
        Ok(Self {
            value,
            tangent: Some(tangent),
        })
    }

    pub fn value(&self) -> &Array2<f64> {
        &self.value
    }

    pub fn tangent(&self) -> Option<&Array2<f64>> {
        self.tangent.as_ref()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.dim()
    }

    /// Splits into `(value, tangent)`, materialising a zero tangent if absent.
    pub fn into_parts(self) -> (Array2<f64>, Array2<f64>) {
        let tangent = self.tangent.unwrap_or_else(|| Array2::zeros(self.value.raw_dim()));
        (self.value, tangent)
    }

    pub fn into_value(self) -> Array2<f64> {
        self.value
    }

    pub fn is_finite(&self) -> bool {
        self.value.iter().all(|v| v.is_finite())
            && self.tangent.as_ref().is_none_or(|t| t.iter().all(|v| v.is_finite()))
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
fn silu_prime(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// The primitive set the velocity network is written against.
///
/// Parameters are referenced by index into the parameter list the backend
/// was built over, so the same network code serves value, tangent and
/// adjoint propagation.
pub trait TensorOps {
    type Tensor;

    fn input(&mut self, x: DualTensor) -> Self::Tensor;
    /// `a · P` for the parameter matrix `P`.
    fn matmul_param(&mut self, a: &Self::Tensor, param: usize) -> Self::Tensor;
    /// `a + 1·b` with `b` a `(1, n)` parameter row broadcast over rows.
    fn add_bias_param(&mut self, a: &Self::Tensor, param: usize) -> Self::Tensor;
    /// Row `rows[i]` of the parameter table for each output row `i`.
    fn gather_param_rows(&mut self, param: usize, rows: &[usize]) -> Self::Tensor;
    fn add(&mut self, a: &Self::Tensor, b: &Self::Tensor) -> Self::Tensor;
    fn silu(&mut self, a: &Self::Tensor) -> Self::Tensor;
    fn concat_cols(&mut self, a: &Self::Tensor, b: &Self::Tensor) -> Self::Tensor;
}

/// Forward evaluation with one tangent channel. Parameters carry no tangent.
pub struct ForwardOps<'p> {
    params: &'p [Array2<f64>],
}

impl<'p> ForwardOps<'p> {
    pub fn new(params: &'p [Array2<f64>]) -> Self {
        Self { params }
    }
}

impl TensorOps for ForwardOps<'_> {
    type Tensor = DualTensor;

    fn input(&mut self, x: DualTensor) -> DualTensor {
        x
    }

    fn matmul_param(&mut self, a: &DualTensor, param: usize) -> DualTensor {
        let w = &self.params[param];
        DualTensor {
            value: a.value.dot(w),
            tangent: a.tangent.as_ref().map(|t| t.dot(w)),
        }
    }

    fn add_bias_param(&mut self, a: &DualTensor, param: usize) -> DualTensor {
        DualTensor {
            value: &a.value + &self.params[param],
            tangent: a.tangent.clone(),
        }
    }

    fn gather_param_rows(&mut self, param: usize, rows: &[usize]) -> DualTensor {
        DualTensor::constant(self.params[param].select(Axis(0), rows))
    }

    fn add(&mut self, a: &DualTensor, b: &DualTensor) -> DualTensor {
        let tangent = match (&a.tangent, &b.tangent) {
            (Some(x), Some(y)) => Some(x + y),
            (Some(x), None) | (None, Some(x)) => Some(x.clone()),
            (None, None) => None,
        };
        DualTensor {
            value: &a.value + &b.value,
            tangent,
        }
    }

    fn silu(&mut self, a: &DualTensor) -> DualTensor {
        let value = a.value.mapv(silu);
        let tangent = a.tangent.as_ref().map(|t| {
            let mut out = t.clone();
            Zip::from(&mut out).and(&a.value).for_each(|o, &x| *o *= silu_prime(x));
            out
        });
        DualTensor { value, tangent }
    }

    fn concat_cols(&mut self, a: &DualTensor, b: &DualTensor) -> DualTensor {
        let value = concatenate![Axis(1), a.value, b.value];
        let tangent = match (&a.tangent, &b.tangent) {
            (None, None) => None,
            _ => {
                let ta = a.tangent.clone().unwrap_or_else(|| Array2::zeros(a.value.raw_dim()));
                let tb = b.tangent.clone().unwrap_or_else(|| Array2::zeros(b.value.raw_dim()));
                Some(concatenate![Axis(1), ta, tb])
            }
        };
        DualTensor { value, tangent }
    }
}

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    MatMulParam { a: usize, param: usize },
    AddBiasParam { a: usize, param: usize },
    GatherParam { param: usize, rows: Vec<usize> },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { a: usize, c: f64 },
    AddScalar { a: usize, c: f64 },
    Powf { a: usize, e: f64 },
    Silu { a: usize },
    ConcatCols { a: usize, b: usize },
    StopGrad { a: usize },
    RowSqNorm { a: usize },
    Mean { a: usize },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::MatMulParam { .. } => "matmul_param",
            Op::AddBiasParam { .. } => "add_bias_param",
            Op::GatherParam { .. } => "gather_param_rows",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::AddScalar { .. } => "add_scalar",
            Op::Powf { .. } => "powf",
            Op::Silu { .. } => "silu",
            Op::ConcatCols { .. } => "concat_cols",
            Op::StopGrad { .. } => "stop_gradient",
            Op::RowSqNorm { .. } => "row_sq_norm",
            Op::Mean { .. } => "mean",
        }
    }
}

struct Node {
    op: Op,
    value: Array2<f64>,
}

/// Reverse-mode recording of one scalar computation over a fixed parameter
/// list. Single writer; rebuild per evaluation.
pub struct Tape<'p> {
    params: &'p [Array2<f64>],
    nodes: Vec<Node>,
    first_non_finite: Option<(usize, &'static str)>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [Array2<f64>]) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            first_non_finite: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `(1, 1)` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    fn compute<'a>(&self, op: &Op, get: &dyn Fn(usize) -> &'a Array2<f64>) -> Array2<f64> {
        let p = self.params;
        match op {
            Op::Input => unreachable!("inputs carry their own value"),
            Op::MatMulParam { a, param } => get(*a).dot(&p[*param]),
            Op::AddBiasParam { a, param } => get(*a) + &p[*param],
            Op::GatherParam { param, rows } => p[*param].select(Axis(0), rows),
            Op::Add { a, b } => get(*a) + get(*b),
            Op::Sub { a, b } => get(*a) - get(*b),
            Op::Mul { a, b } => get(*a) * get(*b),
            Op::Scale { a, c } => get(*a) * *c,
            Op::AddScalar { a, c } => get(*a) + *c,
            Op::Powf { a, e } => get(*a).mapv(|x| x.powf(*e)),
            Op::Silu { a } => get(*a).mapv(silu),
            Op::ConcatCols { a, b } => {
                concatenate(Axis(1), &[get(*a).view(), get(*b).view()]).expect("concat of equal-row inputs")
            }
            Op::StopGrad { a } => get(*a).clone(),
            Op::RowSqNorm { a } => {
                let x = get(*a);
                let sq = x.map_axis(Axis(1), |row| row.iter().map(|v| v * v).sum::<f64>());
                sq.insert_axis(Axis(1))
            }
            Op::Mean { a } => {
                let x = get(*a);
                let n = x.len().max(1) as f64;
                Array2::from_elem((1, 1), x.iter().sum::<f64>() / n)
            }
        }
    }

    fn push(&mut self, op: Op) -> Var {
        let value = {
            let nodes = &self.nodes;
            self.compute(&op, &|i| &nodes[i].value)
        };
        self.push_value(op, value)
    }

    fn push_value(&mut self, op: Op, value: Array2<f64>) -> Var {
        let idx = self.nodes.len();
        if self.first_non_finite.is_none() && !value.iter().all(|v| v.is_finite()) {
            self.first_non_finite = Some((idx, op.name()));
        }
        self.nodes.push(Node { op, value });
        Var(idx)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push_value(Op::Input, value)
    }

    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.clone();
        self.push_value(Op::StopGrad { a: a.0 }, value)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Sub { a: a.0, b: b.0 })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Mul { a: a.0, b: b.0 })
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.push(Op::Scale { a: a.0, c })
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.push(Op::AddScalar { a: a.0, c })
    }

    pub fn powf(&mut self, a: Var, e: f64) -> Var {
        self.push(Op::Powf { a: a.0, e })
    }

    /// Per-row squared L2 norm, shape `(rows, 1)`.
    pub fn row_sq_norm(&mut self, a: Var) -> Var {
        self.push(Op::RowSqNorm { a: a.0 })
    }

    /// Mean over all entries, shape `(1, 1)`.
    pub fn mean(&mut self, a: Var) -> Var {
        self.push(Op::Mean { a: a.0 })
    }

    /// Recomputes every node from the recorded inputs and primitives.
    pub fn replay(&self) -> Vec<Array2<f64>> {
        let mut values: Vec<Array2<f64>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match node.op {
                Op::Input => node.value.clone(),
                ref op => self.compute(op, &|i| &values[i]),
            };
            values.push(v);
        }
        values
    }
}

impl TensorOps for Tape<'_> {
    type Tensor = Var;

    fn input(&mut self, x: DualTensor) -> Var {
        self.constant(x.value)
    }

    fn matmul_param(&mut self, a: &Var, param: usize) -> Var {
        self.push(Op::MatMulParam { a: a.0, param })
    }

    fn add_bias_param(&mut self, a: &Var, param: usize) -> Var {
        self.push(Op::AddBiasParam { a: a.0, param })
    }

    fn gather_param_rows(&mut self, param: usize, rows: &[usize]) -> Var {
        self.push(Op::GatherParam {
            param,
            rows: rows.to_vec(),
        })
    }

    fn add(&mut self, a: &Var, b: &Var) -> Var {
        self.push(Op::Add { a: a.0, b: b.0 })
    }

    fn silu(&mut self, a: &Var) -> Var {
        self.push(Op::Silu { a: a.0 })
    }

    fn concat_cols(&mut self, a: &Var, b: &Var) -> Var {
        self.push(Op::ConcatCols { a: a.0, b: b.0 })
    }
}

/// Parameter gradients, one array per parameter in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub arrays: Vec<Array2<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &[Array2<f64>]) -> Self {
        Self {
            arrays: params.iter().map(|p| Array2::zeros(p.raw_dim())).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.arrays
            .iter()
            .flat_map(|a| a.iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

fn accumulate(slot: &mut Option<Array2<f64>>, g: Array2<f64>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

/// Reverse-mode gradient of the scalar `loss` with respect to every
/// parameter of the tape.
pub fn grad(tape: &Tape<'_>, loss: Var) -> Result<Gradients> {
    let loss_value = &tape.nodes[loss.0].value;
    if loss_value.dim() != (1, 1) {
        return Err(Error::dim(format!("loss must be (1, 1), got {:?}", loss_value.dim())));
    }
    if !loss_value[[0, 0]].is_finite() {
        let origin = match tape.first_non_finite {
            Some((idx, name)) => format!("first offending primitive `{name}` at node {idx}"),
            None => "no offending primitive recorded".to_string(),
        };
        return Err(Error::NonFinite(format!("loss = {}; {origin}", loss_value[[0, 0]])));
    }

    let mut grads = Gradients::zeros_like(tape.params);
    let mut adj: Vec<Option<Array2<f64>>> = vec![None; loss.0 + 1];
    adj[loss.0] = Some(Array2::ones((1, 1)));

    for i in (0..=loss.0).rev() {
        let Some(g) = adj[i].take() else { continue };
        let node = &tape.nodes[i];
        match &node.op {
            Op::Input | Op::StopGrad { .. } => {}
            Op::MatMulParam { a, param } => {
                let w = &tape.params[*param];
                let x = &tape.nodes[*a].value;
                grads.arrays[*param] += &x.t().dot(&g);
                accumulate(&mut adj[*a], g.dot(&w.t()));
            }
            Op::AddBiasParam { a, param } => {
                grads.arrays[*param] += &g.sum_axis(Axis(0)).insert_axis(Axis(0));
                accumulate(&mut adj[*a], g);
            }
            Op::GatherParam { param, rows } => {
                let table = &mut grads.arrays[*param];
                for (r, &row) in rows.iter().enumerate() {
                    let mut dst = table.row_mut(row);
                    dst += &g.row(r);
                }
            }
            Op::Add { a, b } => {
                accumulate(&mut adj[*a], g.clone());
                accumulate(&mut adj[*b], g);
            }
            Op::Sub { a, b } => {
                accumulate(&mut adj[*b], -&g);
                accumulate(&mut adj[*a], g);
            }
            Op::Mul { a, b } => {
                let ga = &g * &tape.nodes[*b].value;
                let gb = &g * &tape.nodes[*a].value;
                accumulate(&mut adj[*a], ga);
                accumulate(&mut adj[*b], gb);
            }
            Op::Scale { a, c } => accumulate(&mut adj[*a], g * *c),
            Op::AddScalar { a, .. } => accumulate(&mut adj[*a], g),
            Op::Powf { a, e } => {
                let mut ga = g;
                Zip::from(&mut ga)
                    .and(&tape.nodes[*a].value)
                    .for_each(|o, &x| *o *= e * x.powf(e - 1.0));
                accumulate(&mut adj[*a], ga);
            }
            Op::Silu { a } => {
                let mut ga = g;
                Zip::from(&mut ga)
                    .and(&tape.nodes[*a].value)
                    .for_each(|o, &x| *o *= silu_prime(x));
                accumulate(&mut adj[*a], ga);
            }
            Op::ConcatCols { a, b } => {
                let split = tape.nodes[*a].value.ncols();
                accumulate(&mut adj[*a], g.slice(s![.., ..split]).to_owned());
                accumulate(&mut adj[*b], g.slice(s![.., split..]).to_owned());
            }
            Op::RowSqNorm { a } => {
                let x = &tape.nodes[*a].value;
                let ga = x * &g * 2.0;
                accumulate(&mut adj[*a], ga);
            }
            Op::Mean { a } => {
                let x = &tape.nodes[*a].value;
                let n = x.len().max(1) as f64;
                accumulate(&mut adj[*a], Array2::from_elem(x.raw_dim(), g[[0, 0]] / n));
            }
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn dual_arithmetic_matches_hand_derivatives() {
        let x = Dual::new(2.0, 1.0);
        let y = x * x + Dual::constant(3.0) * x;
        assert_eq!(y, Dual::new(10.0, 7.0));
        let q = Dual::constant(1.0) / x;
        assert_eq!(q, Dual::new(0.5, -0.25));
        let r = Dual::new(4.0, 1.0).sqrt();
        assert_eq!(r, Dual::new(2.0, 0.25));
        assert_eq!(Dual::new(-3.0, 2.0).abs(), Dual::new(3.0, -2.0));
    }

    #[test]
    fn tangent_shape_is_checked() {
        let err = DualTensor::with_tangent(Array2::zeros((2, 3)), Array2::zeros((3, 2)));
        assert!(matches!(err, Err(Error::Dimension(_))));
    }

    #[test]
    fn stop_gradient_zeroes_contribution_but_keeps_value() {
        let params = vec![array![[1.5, -0.5], [0.25, 2.0]]];
        let x = array![[1.0, 2.0], [-1.0, 0.5]];

        let mut tape = Tape::new(&params);
        let xi = tape.constant(x.clone());
        let u = tape.matmul_param(&xi, 0);
        let frozen = tape.stop_gradient(u);
        let r = tape.sub(u, frozen);
        let sq = tape.row_sq_norm(r);
        let loss = tape.mean(sq);
        assert_eq!(tape.value(frozen), tape.value(u));
        assert_eq!(tape.scalar(loss), 0.0);
        let g = grad(&tape, loss).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let params = vec![array![[1.0]]];
        let mut tape = Tape::new(&params);
        let c = tape.constant(array![[3.0]]);
        let loss = tape.mean(c);
        let g = grad(&tape, loss).unwrap();
        assert_eq!(g.arrays[0], array![[0.0]]);
    }

    #[test]
    fn non_finite_loss_names_first_primitive() {
        let params = vec![array![[1.0]]];
        let mut tape = Tape::new(&params);
        let x = tape.constant(array![[-1.0]]);
        let y = tape.matmul_param(&x, 0);
        let z = tape.powf(y, 0.5);
        let loss = tape.mean(z);
        let err = grad(&tape, loss).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("powf"), "{msg}");
    }

    #[test]
    fn replay_is_bit_identical() {
        let params = vec![array![[0.3, -1.2], [0.7, 0.1]], array![[0.05, -0.02]]];
        let mut tape = Tape::new(&params);
        let x = tape.constant(array![[0.5, -0.25], [1.5, 2.0]]);
        let h = tape.matmul_param(&x, 0);
        let h = tape.add_bias_param(&h, 1);
        let h = tape.silu(&h);
        let sq = tape.row_sq_norm(h);
        let w = tape.add_scalar(sq, 1e-3);
        let w = tape.powf(w, -0.5);
        let w = tape.stop_gradient(w);
        let l = tape.mul(sq, w);
        let _ = tape.mean(l);
        let replayed = tape.replay();
        for (i, v) in replayed.iter().enumerate() {
            assert_eq!(v, tape.value(Var(i)));
        }
    }

    #[test]
    fn forward_linear_map_tangent_is_exact() {
        let params = vec![array![[2.0, -1.0], [0.5, 3.0]]];
        let mut ops = ForwardOps::new(&params);
        let x = DualTensor::with_tangent(array![[0.3, 0.4]], array![[1.0, 0.0]]).unwrap();
        let y = ops.matmul_param(&x, 0);
        assert_eq!(y.tangent().unwrap(), &array![[2.0, -1.0]]);
    }

    #[test]
    fn silu_derivative_matches_central_difference() {
        for &x in &[-4.0, -1.0, -0.1, 0.0, 0.3, 2.5] {
            let h = 1e-6;
            let fd = (silu(x + h) - silu(x - h)) / (2.0 * h);
            assert!((fd - silu_prime(x)).abs() < 1e-8, "x = {x}");
        }
    }
}
