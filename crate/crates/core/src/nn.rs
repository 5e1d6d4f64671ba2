//! Reverse-mode automatic differentiation on a tape of dense `f64` tensors,
//! the Adam optimiser, and the normalised squared-error loss.
//!
//! A [`Tape`] records one forward pass. Every node holds a row-major value
//! and a shape; [`Tape::backward`] walks the nodes once in reverse order and
//! returns gradients for every parameter that was read.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand_core::RngCore;

use crate::error::{Error, Result};
use crate::math::{abs, cos, ln, sqrt};
use crate::reptheory::BilinearTensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(usize),
    MatVec(Var, Var),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Bilinear(Arc<BilinearTensor>, Var, Var),
    Concat(Vec<Var>),
    Gather(Var, Arc<Vec<usize>>),
    SumSq(Var),
}

#[derive(Clone, Debug)]
struct Node {
    value: Vec<f64>,
    shape: (usize, usize),
    op: Op,
}

/// Learnable tensors, stored flat in declaration order.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Params {
    names: Vec<alloc::string::String>,
    shapes: Vec<(usize, usize)>,
    data: Vec<Vec<f64>>,
}

/// Index of a tensor in a [`Params`] store.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ParamId(pub usize);

impl Default for Params {
    fn default() -> Self {
        Self::new()
    }
}

impl Params {
    pub fn new() -> Self {
        Self { names: Vec::new(), shapes: Vec::new(), data: Vec::new() }
    }

    /// Adds a zero tensor.
    pub fn zeros(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.names.push(name.into());
        self.shapes.push((rows, cols));
        self.data.push(vec![0.0; rows * cols]);
        ParamId(self.data.len() - 1)
    }

    /// Adds a tensor with entries `N(0, 2 / fan_in)`, `fan_in = cols`.
    pub fn normal(&mut self, name: &str, rows: usize, cols: usize, rng: &mut dyn RngCore) -> ParamId {
        let id = self.zeros(name, rows, cols);
        let std = sqrt(2.0 / cols.max(1) as f64);
        for v in self.data[id.0].iter_mut() {
            *v = std * standard_normal(rng);
        }
        id
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn shape(&self, id: ParamId) -> (usize, usize) {
        self.shapes[id.0]
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.data[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.data[id.0]
    }

    /// Total number of scalars.
    pub fn count(&self) -> usize {
        self.data.iter().map(|d| d.len()).sum()
    }

    /// All scalars concatenated in declaration order.
    pub fn flatten(&self) -> Vec<f64> {
        self.data.iter().flatten().copied().collect()
    }

    /// Inverse of [`Params::flatten`].
    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.count() {
            return Err(Error::DimensionMismatch { expected: self.count(), found: flat.len() });
        }
        let mut at = 0;
        for d in self.data.iter_mut() {
            let n = d.len();
            d.copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.data.len()).map(ParamId)
    }
}

/// Box–Muller draw from `N(0, 1)`.
pub fn standard_normal(rng: &mut dyn RngCore) -> f64 {
    let u1 = ((rng.next_u64() >> 11) as f64 + 1.0) / (1u64 << 53) as f64;
    let u2 = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    sqrt(-2.0 * ln(u1)) * cos(2.0 * core::f64::consts::PI * u2)
}

/// Uniform draw from `[0, 1)`.
pub fn uniform(rng: &mut dyn RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

/// Gradients of a scalar with respect to every parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    pub tensors: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros_like(params: &Params) -> Self {
        Self { tensors: params.data.iter().map(|d| vec![0.0; d.len()]).collect() }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.tensors[id.0]
    }

    /// `self += s · other`.
    pub fn add_scaled(&mut self, other: &Grads, s: f64) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += s * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.tensors.iter_mut().flatten().for_each(|v| *v *= s);
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors.iter().flatten().fold(0.0, |m, v| m.max(abs(*v)))
    }
}

/// One recorded forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, shape: (usize, usize), op: Op) -> Var {
        debug_assert_eq!(value.len(), shape.0 * shape.1);
        self.nodes.push(Node { value, shape, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].shape
    }

    /// The single entry of a `1×1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    /// Column vector constant.
    pub fn vector(&mut self, value: Vec<f64>) -> Var {
        let n = value.len();
        self.push(value, (n, 1), Op::Leaf)
    }

    /// Constant with an explicit shape.
    pub fn constant(&mut self, value: Vec<f64>, rows: usize, cols: usize) -> Result<Var> {
        if value.len() != rows * cols {
            return Err(Error::DimensionMismatch { expected: rows * cols, found: value.len() });
        }
        Ok(self.push(value, (rows, cols), Op::Leaf))
    }

    pub fn param(&mut self, params: &Params, id: ParamId) -> Var {
        self.push(params.data[id.0].clone(), params.shapes[id.0], Op::Param(id.0))
    }

    /// Same values viewed with a new shape.
    pub fn reshape(&mut self, v: Var, rows: usize, cols: usize) -> Result<Var> {
        let n = self.nodes[v.0].value.len();
        if n != rows * cols {
            return Err(Error::DimensionMismatch { expected: n, found: rows * cols });
        }
        let idx: Vec<usize> = (0..n).collect();
        let value = self.nodes[v.0].value.clone();
        Ok(self.push(value, (rows, cols), Op::Gather(v, Arc::new(idx))))
    }

    pub fn matvec(&mut self, a: Var, x: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        let xn = self.nodes[x.0].value.len();
        if xn != c {
            return Err(Error::DimensionMismatch { expected: c, found: xn });
        }
        let av = &self.nodes[a.0].value;
        let xv = &self.nodes[x.0].value;
        let out = (0..r).map(|i| av[i * c..(i + 1) * c].iter().zip(xv).map(|(p, q)| p * q).sum()).collect();
        Ok(self.push(out, (r, 1), Op::MatVec(a, x)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, k) = self.shape(a);
        let (k2, c) = self.shape(b);
        if k != k2 {
            return Err(Error::DimensionMismatch { expected: k, found: k2 });
        }
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for t in 0..k {
                let s = av[i * k + t];
                if s == 0.0 {
                    continue;
                }
                for j in 0..c {
                    out[i * c + j] += s * bv[t * c + j];
                }
            }
        }
        Ok(self.push(out, (r, c), Op::MatMul(a, b)))
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::DimensionMismatch { expected: sa.0 * sa.1, found: sb.0 * sb.1 });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let out = self.nodes[a.0].value.iter().zip(&self.nodes[b.0].value).map(|(x, y)| x + y).collect();
        let shape = self.shape(a);
        Ok(self.push(out, shape, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let out = self.nodes[a.0].value.iter().zip(&self.nodes[b.0].value).map(|(x, y)| x - y).collect();
        let shape = self.shape(a);
        Ok(self.push(out, shape, Op::Sub(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.nodes[a.0].value.iter().map(|x| s * x).collect();
        let shape = self.shape(a);
        self.push(out, shape, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].value.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let shape = self.shape(a);
        self.push(out, shape, Op::Relu(a))
    }

    /// `out[o] = Σ B[o,i,j] p[i] q[j]` for a constant tensor `B`.
    pub fn bilinear(&mut self, b: Arc<BilinearTensor>, p: Var, q: Var) -> Result<Var> {
        let (pn, qn) = (self.nodes[p.0].value.len(), self.nodes[q.0].value.len());
        if pn != b.left_dim {
            return Err(Error::DimensionMismatch { expected: b.left_dim, found: pn });
        }
        if qn != b.right_dim {
            return Err(Error::DimensionMismatch { expected: b.right_dim, found: qn });
        }
        let out = b.apply(&self.nodes[p.0].value, &self.nodes[q.0].value);
        let n = out.len();
        Ok(self.push(out, (n, 1), Op::Bilinear(b, p, q)))
    }

    /// Flat concatenation into a column vector.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut out = Vec::new();
        for p in parts {
            out.extend_from_slice(&self.nodes[p.0].value);
        }
        let n = out.len();
        self.push(out, (n, 1), Op::Concat(parts.to_vec()))
    }

    /// Equal-length vectors stacked as the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let width = rows.first().map_or(0, |r| self.nodes[r.0].value.len());
        for r in rows {
            let n = self.nodes[r.0].value.len();
            if n != width {
                return Err(Error::DimensionMismatch { expected: width, found: n });
            }
        }
        let c = self.concat(rows);
        self.nodes[c.0].shape = (rows.len(), width);
        Ok(c)
    }

    /// `out[i] = a[idx[i]]`, as a column vector.
    pub fn gather(&mut self, a: Var, idx: Arc<Vec<usize>>) -> Result<Var> {
        let src = &self.nodes[a.0].value;
        if let Some(&bad) = idx.iter().find(|&&i| i >= src.len()) {
            return Err(Error::DimensionMismatch { expected: src.len(), found: bad + 1 });
        }
        let out: Vec<f64> = idx.iter().map(|&i| src[i]).collect();
        let n = out.len();
        Ok(self.push(out, (n, 1), Op::Gather(a, idx)))
    }

    /// Row `i` of a matrix as a column vector.
    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if i >= r {
            return Err(Error::DimensionMismatch { expected: r, found: i + 1 });
        }
        self.gather(a, Arc::new((i * c..(i + 1) * c).collect()))
    }

    /// `Σ a_i²` as a `1×1` node.
    pub fn sumsq(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.iter().map(|x| x * x).sum();
        self.push(vec![s], (1, 1), Op::SumSq(a))
    }

    /// Gradients of the scalar `out` with respect to all parameters in `params`.
    pub fn backward(&self, out: Var, params: &Params) -> Grads {
        let mut grads = Grads::zeros_like(params);
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; out.0 + 1];
        adj[out.0] = Some(vec![1.0; self.nodes[out.0].value.len()]);

        fn acc(adj: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
            adj[v.0].get_or_insert_with(|| vec![0.0; len])
        }

        for idx in (0..=out.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(p) => {
                    for (a, b) in grads.tensors[*p].iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                Op::MatVec(a, x) => {
                    let (r, c) = self.nodes[a.0].shape;
                    let av = &self.nodes[a.0].value;
                    let xv = &self.nodes[x.0].value;
                    {
                        let ga = acc(&mut adj, *a, r * c);
                        for i in 0..r {
                            for j in 0..c {
                                ga[i * c + j] += g[i] * xv[j];
                            }
                        }
                    }
                    let gx = acc(&mut adj, *x, c);
                    for i in 0..r {
                        for j in 0..c {
                            gx[j] += av[i * c + j] * g[i];
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (r, k) = self.nodes[a.0].shape;
                    let c = self.nodes[b.0].shape.1;
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    {
                        let ga = acc(&mut adj, *a, r * k);
                        for i in 0..r {
                            for t in 0..k {
                                let mut s = 0.0;
                                for j in 0..c {
                                    s += g[i * c + j] * bv[t * c + j];
                                }
                                ga[i * k + t] += s;
                            }
                        }
                    }
                    let gb = acc(&mut adj, *b, k * c);
                    for i in 0..r {
                        for t in 0..k {
                            let s = av[i * k + t];
                            for j in 0..c {
                                gb[t * c + j] += s * g[i * c + j];
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    let n = g.len();
                    acc(&mut adj, *a, n).iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                    acc(&mut adj, *b, n).iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                }
                Op::Sub(a, b) => {
                    let n = g.len();
                    acc(&mut adj, *a, n).iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                    acc(&mut adj, *b, n).iter_mut().zip(&g).for_each(|(x, y)| *x -= y);
                }
                Op::Scale(a, s) => {
                    acc(&mut adj, *a, g.len()).iter_mut().zip(&g).for_each(|(x, y)| *x += s * y);
                }
                Op::Relu(a) => {
                    let av = &self.nodes[a.0].value;
                    let ga = acc(&mut adj, *a, g.len());
                    for ((x, y), v) in ga.iter_mut().zip(&g).zip(av) {
                        if *v > 0.0 {
                            *x += y;
                        }
                    }
                }
                Op::Bilinear(t, p, q) => {
                    let pv = &self.nodes[p.0].value;
                    let qv = &self.nodes[q.0].value;
                    {
                        let gp = acc(&mut adj, *p, t.left_dim);
                        for &(o, i, j, c) in &t.entries {
                            gp[i] += c * g[o] * qv[j];
                        }
                    }
                    let gq = acc(&mut adj, *q, t.right_dim);
                    for &(o, i, j, c) in &t.entries {
                        gq[j] += c * g[o] * pv[i];
                    }
                }
                Op::Concat(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let n = self.nodes[p.0].value.len();
                        acc(&mut adj, *p, n).iter_mut().zip(&g[at..at + n]).for_each(|(x, y)| *x += y);
                        at += n;
                    }
                }
                Op::Gather(a, ix) => {
                    let n = self.nodes[a.0].value.len();
                    let ga = acc(&mut adj, *a, n);
                    for (&i, y) in ix.iter().zip(&g) {
                        ga[i] += y;
                    }
                }
                Op::SumSq(a) => {
                    let av = &self.nodes[a.0].value;
                    let ga = acc(&mut adj, *a, av.len());
                    for (x, v) in ga.iter_mut().zip(av) {
                        *x += 2.0 * g[0] * v;
                    }
                }
            }
        }
        grads
    }
}

/// `‖pred − label‖² / (1 + ‖label‖²)` with a constant label.
pub fn nmse_loss(tape: &mut Tape, pred: Var, label: &[f64]) -> Result<Var> {
    let n = tape.value(pred).len();
    if n != label.len() {
        return Err(Error::DimensionMismatch { expected: n, found: label.len() });
    }
    let shape = tape.shape(pred);
    let l = tape.constant(label.to_vec(), shape.0, shape.1)?;
    let diff = tape.sub(pred, l)?;
    let sq = tape.sumsq(diff);
    let denom = 1.0 + label.iter().map(|v| v * v).sum::<f64>();
    Ok(tape.scale(sq, 1.0 / denom))
}

/// Plain-value version of [`nmse_loss`].
pub fn nmse(pred: &[f64], label: &[f64]) -> f64 {
    let num: f64 = pred.iter().zip(label).map(|(a, b)| (a - b) * (a - b)).sum();
    num / (1.0 + label.iter().map(|v| v * v).sum::<f64>())
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub const DEFAULT_LR: f64 = 3e-4;

    pub fn new(params: &Params) -> Self {
        Self::with_lr(params, Self::DEFAULT_LR)
    }

    pub fn with_lr(params: &Params, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.data.iter().map(|d| vec![0.0; d.len()]).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut Params, grads: &Grads) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - crate::math::powi(self.beta1, t);
        let c2 = 1.0 - crate::math::powi(self.beta2, t);
        for (k, data) in params.data.iter_mut().enumerate() {
            let g = &grads.tensors[k];
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..data.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                data[i] -= self.lr * mh / (sqrt(vh) + self.eps);
            }
        }
    }
}

/// Largest componentwise `|g_ad − g_fd| / (|g_fd| + 1e-8)` between the tape
/// gradient and central differences with step `h`.
pub fn grad_check<F>(params: &Params, h: f64, mut f: F) -> Result<f64>
where
    F: FnMut(&mut Tape, &Params) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, params)?;
    let grads = tape.backward(out, params);
    let mut work = params.clone();
    let mut eval = |p: &Params| -> Result<f64> {
        let mut t = Tape::new();
        let o = f(&mut t, p)?;
        Ok(t.scalar(o))
    };
    let mut worst: f64 = 0.0;
    for k in 0..params.len() {
        for i in 0..params.data[k].len() {
            let orig = work.data[k][i];
            work.data[k][i] = orig + h;
            let up = eval(&work)?;
            work.data[k][i] = orig - h;
            let down = eval(&work)?;
            work.data[k][i] = orig;
            let fd = (up - down) / (2.0 * h);
            let ad = grads.tensors[k][i];
            worst = worst.max(abs(ad - fd) / (abs(fd) + 1e-8));
        }
    }
    Ok(worst)
}
