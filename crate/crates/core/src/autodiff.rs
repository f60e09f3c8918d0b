//! Minimal reverse-mode differentiation tape over dense tensors.
//!
//! Values are computed eagerly as nodes are recorded; `backward` walks the
//! tape once in reverse and accumulates gradients for every leaf. The op
//! set covers what MLP encoders/decoders and Gaussian log-density graphs
//! need (affine maps, a few elementwise nonlinearities, reductions, and
//! two matrix-shaped ops: a quadratic form and the log-determinant of a
//! lower-triangular matrix). There is no broadcasting beyond
//! matrix-vector patterns.
//!
//! Second derivatives are not taped; Hessian-vector products come from
//! central differences of a gradient function, see
//! [`hvp_finite_difference`].

use std::collections::BTreeMap;

use crate::{Error, Result};

/// Tensor shapes supported by the tape. Scalars are length-1 vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A dense tensor: a shape plus row-major data.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Shape,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn scalar(x: f64) -> Self {
        Tensor {
            shape: Shape::Vector(1),
            data: vec![x],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: Shape::Vector(data.len()),
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Tensor {
            shape: Shape::Matrix(rows, cols),
            data,
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Named parameter tensors with gradient accumulators of matching shape.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, ParamEntry>,
}

#[derive(Debug, Clone)]
struct ParamEntry {
    value: Tensor,
    grad: Tensor,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let grad = Tensor::zeros(value.shape);
        self.entries.insert(name.into(), ParamEntry { value, grad });
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn value(&self, name: &str) -> &Tensor {
        &self.entries[name].value
    }

    pub fn value_mut(&mut self, name: &str) -> &mut Tensor {
        &mut self.entries.get_mut(name).unwrap().value
    }

    pub fn grad(&self, name: &str) -> &Tensor {
        &self.entries[name].grad
    }

    pub fn add_grad(&mut self, name: &str, delta: &[f64], scale: f64) {
        let entry = self.entries.get_mut(name).expect("unknown parameter");
        assert_eq!(entry.grad.len(), delta.len(), "gradient shape for {name}");
        for (g, d) in entry.grad.data.iter_mut().zip(delta) {
            *g += scale * d;
        }
    }

    pub fn zero_grads(&mut self) {
        for entry in self.entries.values_mut() {
            entry.grad.data.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Names in deterministic (sorted) order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn names_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.names().filter(move |n| n.starts_with(prefix))
    }

    pub fn grads_all_finite(&self) -> bool {
        self.entries.values().all(|e| e.grad.all_finite())
    }
}

/// Index of a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Affine { w: NodeId, x: NodeId, b: NodeId },
    MatMul { a: NodeId, b: NodeId },
    Exp(NodeId),
    Tanh(NodeId),
    Softplus(NodeId),
    Log(NodeId),
    Square(NodeId),
    Sum(NodeId),
    Dot { a: NodeId, b: NodeId },
    ScaleShift { x: NodeId, scale: NodeId, shift: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, c: f64 },
    AddConst { x: NodeId },
    Concat { a: NodeId, b: NodeId },
    Slice { x: NodeId, start: usize, len: usize },
    LogDetLowerTri(NodeId),
    QuadraticForm { a: NodeId, x: NodeId },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    param: Option<String>,
}

/// Append-only computation tape. Node ids are topologically ordered by
/// construction; the backward pass visits them in strict reverse order
/// exactly once.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, param: Option<String>) -> NodeId {
        self.nodes.push(Node { op, value, param });
        NodeId(self.nodes.len() - 1)
    }

    /// A constant leaf. Gradients flow to it but it has no parameter slot.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, None)
    }

    pub fn constant_vector(&mut self, data: &[f64]) -> NodeId {
        self.constant(Tensor::vector(data.to_vec()))
    }

    pub fn constant_scalar(&mut self, x: f64) -> NodeId {
        self.constant(Tensor::scalar(x))
    }

    /// A leaf bound to a named parameter: its current value is copied from
    /// the store and [`Tape::accumulate_params`] will route its gradient
    /// back by name.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> NodeId {
        let value = store.value(name).clone();
        self.push(Op::Leaf, value, Some(name.to_string()))
    }

    fn vec_len(&self, id: NodeId, what: &str) -> Result<usize> {
        match self.value(id).shape {
            Shape::Vector(n) => Ok(n),
            Shape::Matrix(_, _) => Err(Error::ShapeMismatch(format!("{what}: expected a vector"))),
        }
    }

    fn mat_dims(&self, id: NodeId, what: &str) -> Result<(usize, usize)> {
        match self.value(id).shape {
            Shape::Matrix(r, c) => Ok((r, c)),
            Shape::Vector(_) => Err(Error::ShapeMismatch(format!("{what}: expected a matrix"))),
        }
    }

    /// `W x + b` with `W: m x n`, `x: n`, `b: m`.
    pub fn affine(&mut self, w: NodeId, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, n) = self.mat_dims(w, "affine weight")?;
        let xn = self.vec_len(x, "affine input")?;
        let bm = self.vec_len(b, "affine bias")?;
        if xn != n || bm != m {
            return Err(Error::ShapeMismatch(format!(
                "affine: W is {m}x{n}, x has {xn}, b has {bm}"
            )));
        }
        let wv = &self.value(w).data;
        let xv = &self.value(x).data;
        let bv = &self.value(b).data;
        let mut out = vec![0.0; m];
        for i in 0..m {
            let mut s = bv[i];
            for j in 0..n {
                s += wv[i * n + j] * xv[j];
            }
            out[i] = s;
        }
        Ok(self.push(Op::Affine { w, x, b }, Tensor::vector(out), None))
    }

    /// Matrix product `A B`; `B` may be a vector (treated as a column).
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.mat_dims(a, "matmul lhs")?;
        let value = match self.value(b).shape {
            Shape::Vector(n) => {
                if n != k {
                    return Err(Error::ShapeMismatch(format!(
                        "matmul: {m}x{k} by vector of {n}"
                    )));
                }
                let av = &self.value(a).data;
                let bv = &self.value(b).data;
                let mut out = vec![0.0; m];
                for i in 0..m {
                    let mut s = 0.0;
                    for j in 0..k {
                        s += av[i * k + j] * bv[j];
                    }
                    out[i] = s;
                }
                Tensor::vector(out)
            }
            Shape::Matrix(r, c) => {
                if r != k {
                    return Err(Error::ShapeMismatch(format!("matmul: {m}x{k} by {r}x{c}")));
                }
                let av = &self.value(a).data;
                let bv = &self.value(b).data;
                let mut out = vec![0.0; m * c];
                for i in 0..m {
                    for l in 0..k {
                        let ail = av[i * k + l];
                        if ail == 0.0 {
                            continue;
                        }
                        for j in 0..c {
                            out[i * c + j] += ail * bv[l * c + j];
                        }
                    }
                }
                Tensor::matrix(m, c, out)
            }
        };
        Ok(self.push(Op::MatMul { a, b }, value, None))
    }

    fn unary(&mut self, x: NodeId, f: impl Fn(f64) -> f64, op: impl Fn(NodeId) -> Op) -> NodeId {
        let value = Tensor {
            shape: self.value(x).shape,
            data: self.value(x).data.iter().map(|&v| f(v)).collect(),
        };
        self.push(op(x), value, None)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        self.unary(x, f64::exp, Op::Exp)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.unary(x, f64::tanh, Op::Tanh)
    }

    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        self.unary(x, softplus, Op::Softplus)
    }

    pub fn log(&mut self, x: NodeId) -> NodeId {
        self.unary(x, f64::ln, Op::Log)
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |v| v * v, Op::Square)
    }

    /// Sum of all entries, a scalar node.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.value(x).data.iter().sum();
        self.push(Op::Sum(x), Tensor::scalar(s), None)
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let na = self.vec_len(a, "dot lhs")?;
        let nb = self.vec_len(b, "dot rhs")?;
        if na != nb {
            return Err(Error::ShapeMismatch(format!("dot: {na} vs {nb}")));
        }
        let s: f64 = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| x * y)
            .sum();
        Ok(self.push(Op::Dot { a, b }, Tensor::scalar(s), None))
    }

    /// Elementwise `scale .* x + shift`; all three share a shape.
    pub fn scale_shift(&mut self, x: NodeId, scale: NodeId, shift: NodeId) -> Result<NodeId> {
        let shape = self.value(x).shape;
        if self.value(scale).shape != shape || self.value(shift).shape != shape {
            return Err(Error::ShapeMismatch("scale_shift operands".into()));
        }
        let data: Vec<f64> = self
            .value(x)
            .data
            .iter()
            .zip(&self.value(scale).data)
            .zip(&self.value(shift).data)
            .map(|((x, s), t)| s * x + t)
            .collect();
        Ok(self.push(
            Op::ScaleShift { x, scale, shift },
            Tensor { shape, data },
            None,
        ))
    }

    fn binary_same_shape(
        &mut self,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
        what: &str,
    ) -> Result<NodeId> {
        let shape = self.value(a).shape;
        if self.value(b).shape != shape {
            return Err(Error::ShapeMismatch(what.into()));
        }
        let data: Vec<f64> = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| f(*x, *y))
            .collect();
        Ok(self.push(op, Tensor { shape, data }, None))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape(a, b, |x, y| x + y, Op::Add { a, b }, "add operands")
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape(a, b, |x, y| x - y, Op::Sub { a, b }, "sub operands")
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape(a, b, |x, y| x * y, Op::Mul { a, b }, "mul operands")
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let value = Tensor {
            shape: self.value(x).shape,
            data: self.value(x).data.iter().map(|v| c * v).collect(),
        };
        self.push(Op::Scale { x, c }, value, None)
    }

    pub fn add_const(&mut self, x: NodeId, c: f64) -> NodeId {
        let value = Tensor {
            shape: self.value(x).shape,
            data: self.value(x).data.iter().map(|v| c + v).collect(),
        };
        self.push(Op::AddConst { x }, value, None)
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let na = self.vec_len(a, "concat lhs")?;
        let nb = self.vec_len(b, "concat rhs")?;
        let mut data = Vec::with_capacity(na + nb);
        data.extend_from_slice(&self.value(a).data);
        data.extend_from_slice(&self.value(b).data);
        Ok(self.push(Op::Concat { a, b }, Tensor::vector(data), None))
    }

    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let n = self.vec_len(x, "slice input")?;
        if start + len > n {
            return Err(Error::ShapeMismatch(format!(
                "slice [{start}, {start}+{len}) of vector {n}"
            )));
        }
        let data = self.value(x).data[start..start + len].to_vec();
        Ok(self.push(Op::Slice { x, start, len }, Tensor::vector(data), None))
    }

    /// `sum_i log |L_ii|` for a square matrix node.
    pub fn log_det_lower_tri(&mut self, x: NodeId) -> Result<NodeId> {
        let (r, c) = self.mat_dims(x, "log_det_lower_tri")?;
        if r != c {
            return Err(Error::ShapeMismatch(format!(
                "log_det_lower_tri: {r}x{c} not square"
            )));
        }
        let v = &self.value(x).data;
        let s: f64 = (0..r).map(|i| v[i * c + i].abs().ln()).sum();
        Ok(self.push(Op::LogDetLowerTri(x), Tensor::scalar(s), None))
    }

    /// `x^T A x` for a square matrix `A` and vector `x`.
    pub fn quadratic_form(&mut self, a: NodeId, x: NodeId) -> Result<NodeId> {
        let (r, c) = self.mat_dims(a, "quadratic_form matrix")?;
        let n = self.vec_len(x, "quadratic_form vector")?;
        if r != c || n != r {
            return Err(Error::ShapeMismatch(format!(
                "quadratic_form: A {r}x{c}, x {n}"
            )));
        }
        let av = &self.value(a).data;
        let xv = &self.value(x).data;
        let mut s = 0.0;
        for i in 0..r {
            for j in 0..c {
                s += xv[i] * av[i * c + j] * xv[j];
            }
        }
        Ok(self.push(Op::QuadraticForm { a, x }, Tensor::scalar(s), None))
    }

    /// Reverse pass from a scalar output. Returns per-node gradients; the
    /// tape itself is unchanged.
    pub fn backward(&self, out: NodeId) -> Result<Gradients> {
        if self.value(out).len() != 1 {
            return Err(Error::NonScalarOutput);
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(vec![1.0]);

        for idx in (0..=out.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let add_to = |grads: &mut [Option<Vec<f64>>], id: NodeId, contrib: &[f64]| {
            let slot = grads[id.0].get_or_insert_with(|| vec![0.0; self.value(id).len()]);
            for (s, c) in slot.iter_mut().zip(contrib) {
                *s += c;
            }
        };
        match self.nodes[idx].op {
            Op::Leaf => {}
            Op::Affine { w, x, b } => {
                let (m, n) = match self.value(w).shape {
                    Shape::Matrix(m, n) => (m, n),
                    _ => unreachable!(),
                };
                let wv = &self.value(w).data;
                let xv = &self.value(x).data;
                // dW = g x^T, dx = W^T g, db = g
                let mut dw = vec![0.0; m * n];
                let mut dx = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        dw[i * n + j] = g[i] * xv[j];
                        dx[j] += wv[i * n + j] * g[i];
                    }
                }
                add_to(grads, w, &dw);
                add_to(grads, x, &dx);
                add_to(grads, b, g);
            }
            Op::MatMul { a, b } => {
                let (m, k) = match self.value(a).shape {
                    Shape::Matrix(m, k) => (m, k),
                    _ => unreachable!(),
                };
                let av = &self.value(a).data;
                match self.value(b).shape {
                    Shape::Vector(_) => {
                        let bv = &self.value(b).data;
                        let mut da = vec![0.0; m * k];
                        let mut db = vec![0.0; k];
                        for i in 0..m {
                            for j in 0..k {
                                da[i * k + j] = g[i] * bv[j];
                                db[j] += av[i * k + j] * g[i];
                            }
                        }
                        add_to(grads, a, &da);
                        add_to(grads, b, &db);
                    }
                    Shape::Matrix(_, c) => {
                        let bv = &self.value(b).data;
                        // dA = G B^T, dB = A^T G
                        let mut da = vec![0.0; m * k];
                        let mut db = vec![0.0; k * c];
                        for i in 0..m {
                            for l in 0..k {
                                let mut s = 0.0;
                                for j in 0..c {
                                    s += g[i * c + j] * bv[l * c + j];
                                }
                                da[i * k + l] = s;
                            }
                        }
                        for l in 0..k {
                            for j in 0..c {
                                let mut s = 0.0;
                                for i in 0..m {
                                    s += av[i * k + l] * g[i * c + j];
                                }
                                db[l * c + j] = s;
                            }
                        }
                        add_to(grads, a, &da);
                        add_to(grads, b, &db);
                    }
                }
            }
            Op::Exp(x) => {
                let y = &self.nodes[idx].value.data;
                let dx: Vec<f64> = g.iter().zip(y).map(|(g, y)| g * y).collect();
                add_to(grads, x, &dx);
            }
            Op::Tanh(x) => {
                let y = &self.nodes[idx].value.data;
                let dx: Vec<f64> = g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect();
                add_to(grads, x, &dx);
            }
            Op::Softplus(x) => {
                let xv = &self.value(x).data;
                let dx: Vec<f64> = g.iter().zip(xv).map(|(g, x)| g * sigmoid(*x)).collect();
                add_to(grads, x, &dx);
            }
            Op::Log(x) => {
                let xv = &self.value(x).data;
                let dx: Vec<f64> = g.iter().zip(xv).map(|(g, x)| g / x).collect();
                add_to(grads, x, &dx);
            }
            Op::Square(x) => {
                let xv = &self.value(x).data;
                let dx: Vec<f64> = g.iter().zip(xv).map(|(g, x)| 2.0 * g * x).collect();
                add_to(grads, x, &dx);
            }
            Op::Sum(x) => {
                let dx = vec![g[0]; self.value(x).len()];
                add_to(grads, x, &dx);
            }
            Op::Dot { a, b } => {
                let av = &self.value(a).data;
                let bv = &self.value(b).data;
                let da: Vec<f64> = bv.iter().map(|v| g[0] * v).collect();
                let db: Vec<f64> = av.iter().map(|v| g[0] * v).collect();
                add_to(grads, a, &da);
                add_to(grads, b, &db);
            }
            Op::ScaleShift { x, scale, shift } => {
                let xv = &self.value(x).data;
                let sv = &self.value(scale).data;
                let dx: Vec<f64> = g.iter().zip(sv).map(|(g, s)| g * s).collect();
                let ds: Vec<f64> = g.iter().zip(xv).map(|(g, x)| g * x).collect();
                add_to(grads, x, &dx);
                add_to(grads, scale, &ds);
                add_to(grads, shift, g);
            }
            Op::Add { a, b } => {
                add_to(grads, a, g);
                add_to(grads, b, g);
            }
            Op::Sub { a, b } => {
                add_to(grads, a, g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                add_to(grads, b, &neg);
            }
            Op::Mul { a, b } => {
                let av = &self.value(a).data;
                let bv = &self.value(b).data;
                let da: Vec<f64> = g.iter().zip(bv).map(|(g, v)| g * v).collect();
                let db: Vec<f64> = g.iter().zip(av).map(|(g, v)| g * v).collect();
                add_to(grads, a, &da);
                add_to(grads, b, &db);
            }
            Op::Scale { x, c } => {
                let dx: Vec<f64> = g.iter().map(|v| c * v).collect();
                add_to(grads, x, &dx);
            }
            Op::AddConst { x } => {
                add_to(grads, x, g);
            }
            Op::Concat { a, b } => {
                let na = self.value(a).len();
                add_to(grads, a, &g[..na]);
                add_to(grads, b, &g[na..]);
            }
            Op::Slice { x, start, len } => {
                let mut dx = vec![0.0; self.value(x).len()];
                dx[start..start + len].copy_from_slice(g);
                add_to(grads, x, &dx);
            }
            Op::LogDetLowerTri(x) => {
                let n = match self.value(x).shape {
                    Shape::Matrix(r, _) => r,
                    _ => unreachable!(),
                };
                let xv = &self.value(x).data;
                let mut dx = vec![0.0; n * n];
                for i in 0..n {
                    dx[i * n + i] = g[0] / xv[i * n + i];
                }
                add_to(grads, x, &dx);
            }
            Op::QuadraticForm { a, x } => {
                let n = self.value(x).len();
                let av = &self.value(a).data;
                let xv = &self.value(x).data;
                // dx = g (A + A^T) x, dA = g x x^T
                let mut dx = vec![0.0; n];
                let mut da = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..n {
                        dx[i] += g[0] * (av[i * n + j] + av[j * n + i]) * xv[j];
                        da[i * n + j] = g[0] * xv[i] * xv[j];
                    }
                }
                add_to(grads, x, &dx);
                add_to(grads, a, &da);
            }
        }
    }

    /// Adds `scale * grad` of every parameter-bound leaf into the store's
    /// accumulators. Leaves whose name the store does not carry are
    /// skipped, so a store restricted to one parameter group collects just
    /// that group.
    pub fn accumulate_params(&self, grads: &Gradients, store: &mut ParamStore, scale: f64) {
        self.accumulate_params_filtered(grads, store, scale, |_| true);
    }

    /// Like [`Tape::accumulate_params`], restricted to names accepted by
    /// `filter`.
    pub fn accumulate_params_filtered(
        &self,
        grads: &Gradients,
        store: &mut ParamStore,
        scale: f64,
        filter: impl Fn(&str) -> bool,
    ) {
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Some(name) = &node.param {
                if !store.contains(name) || !filter(name) {
                    continue;
                }
                if let Some(g) = &grads.grads[idx] {
                    store.add_grad(name, g, scale);
                }
            }
        }
    }
}

/// Per-node gradients from one backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the backward output with respect to node `id`; `None`
    /// when the node does not influence the output.
    pub fn node(&self, id: NodeId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }
}

/// Central-difference Hessian-vector product of a potential whose gradient
/// function is `grad_fn`:
///
/// `(grad_fn(z + eps v) - grad_fn(z - eps v)) / (2 eps)`
///
/// Exact (up to rounding) for quadratics. The caller owns the choice of
/// `eps`; see [`hvp_default_eps`].
pub fn hvp_finite_difference(
    grad_fn: impl Fn(&[f64]) -> Vec<f64>,
    z: &[f64],
    v: &[f64],
    eps: f64,
) -> Vec<f64> {
    let plus: Vec<f64> = z.iter().zip(v).map(|(z, v)| z + eps * v).collect();
    let minus: Vec<f64> = z.iter().zip(v).map(|(z, v)| z - eps * v).collect();
    let gp = grad_fn(&plus);
    let gm = grad_fn(&minus);
    gp.iter()
        .zip(&gm)
        .map(|(p, m)| (p - m) / (2.0 * eps))
        .collect()
}

/// Default step for finite-difference HVPs: `1e-5 * (1 + ||z||_inf)`,
/// balancing truncation against cancellation at double precision.
pub fn hvp_default_eps(z: &[f64]) -> f64 {
    let inf = z.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    1e-5 * (1.0 + inf)
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
