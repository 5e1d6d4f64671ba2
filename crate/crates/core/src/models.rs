//! The three model families (a plain MLP, the SL(2)-equivariant SL2Net and
//! the rotation-equivariant SO2Net), each with a Gram-matrix head or an
//! invariant scalar head, plus the `‖p‖·g(p/‖p‖)` wrapper.
//!
//! Models record their forward pass on an [`nn::Tape`](crate::nn::Tape) so the
//! same code serves training and inference.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand_core::RngCore;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::math::{binomial, cos, sin};
use crate::nn::{ParamId, Params, Tape, Var};
use crate::polycore::{BinaryForm, GroupElement, InhomogPoly, SymMatrix};
use crate::reptheory::{transvectant_tensor, BilinearTensor, Intertwiner};

/// Inputs below this norm map to a zero output under the wrapper.
pub const ZERO_NORM: f64 = 1e-12;

/// What the model reads.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelInput {
    Form(BinaryForm),
    Inhomog(InhomogPoly),
}

impl ModelInput {
    pub fn norm(&self) -> f64 {
        match self {
            Self::Form(p) => p.norm(),
            Self::Inhomog(q) => q.norm(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        match self {
            Self::Form(p) => Self::Form(p.scale(s)),
            Self::Inhomog(q) => Self::Inhomog(q.scale(s)),
        }
    }

    /// `v ↦ input(A v)`.
    pub fn act(&self, g: &GroupElement) -> Self {
        match self {
            Self::Form(p) => Self::Form(crate::polycore::act_on_form(g, p)),
            Self::Inhomog(q) => Self::Inhomog(q.act(g)),
        }
    }

    /// Homogeneous pieces, indexed by degree.
    pub fn components(&self) -> Vec<(usize, &BinaryForm)> {
        match self {
            Self::Form(p) => vec![(p.degree(), p)],
            Self::Inhomog(q) => q.components().iter().enumerate().collect(),
        }
    }

    pub fn flat_coeffs(&self) -> Vec<f64> {
        match self {
            Self::Form(p) => p.coeffs().to_vec(),
            Self::Inhomog(q) => q.flat_coeffs(),
        }
    }
}

/// Output layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Head {
    /// Symmetric `(d+1)×(d+1)` Gram matrix for forms of degree `2d`.
    Gram { half_degree: usize },
    /// One invariant real for inhomogeneous inputs of the given degree.
    Scalar { degree: usize },
}

impl Head {
    /// Degrees of the input components the model expects.
    pub fn input_degrees(&self) -> Vec<usize> {
        match *self {
            Head::Gram { half_degree } => vec![2 * half_degree],
            Head::Scalar { degree } => (0..=degree).collect(),
        }
    }

    fn check_input(&self, input: &ModelInput) -> Result<()> {
        match (*self, input) {
            (Head::Gram { half_degree }, ModelInput::Form(p)) if p.degree() == 2 * half_degree => Ok(()),
            (Head::Gram { half_degree }, ModelInput::Form(p)) => {
                Err(Error::DimensionMismatch { expected: 2 * half_degree, found: p.degree() })
            }
            (Head::Scalar { degree }, ModelInput::Inhomog(q)) if q.degree() == degree => Ok(()),
            (Head::Scalar { degree }, ModelInput::Inhomog(q)) => {
                Err(Error::DimensionMismatch { expected: degree, found: q.degree() })
            }
            (Head::Gram { .. }, _) => Err(Error::InputKind("gram head expects a binary form")),
            (Head::Scalar { .. }, _) => Err(Error::InputKind("scalar head expects an inhomogeneous polynomial")),
        }
    }
}

/// How channels are paired in the tensor-product step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Pairing {
    /// Channel `a` of one degree with channel `a` of the other.
    #[default]
    Diagonal,
    /// Every channel with every channel.
    Full,
}

/// Model output as plain values.
#[derive(Clone, Debug, PartialEq)]
pub enum Prediction {
    Gram(SymMatrix),
    Scalar(f64),
}

impl Prediction {
    /// Row-major entries, or the single scalar.
    pub fn flat(&self) -> Vec<f64> {
        match self {
            Self::Gram(q) => q.matrix().as_slice().to_vec(),
            Self::Scalar(v) => vec![*v],
        }
    }
}

/// A ReLU MLP stored in a parameter bank.
#[derive(Clone, Debug)]
struct Dense {
    layers: Vec<(ParamId, ParamId)>,
}

impl Dense {
    fn new(params: &mut Params, prefix: &str, input: usize, hidden: &[usize], output: usize, rng: &mut dyn RngCore) -> Self {
        let mut layers = Vec::new();
        let mut width = input;
        for (i, &h) in hidden.iter().chain(core::iter::once(&output)).enumerate() {
            let w = params.normal(&format!("{prefix}.w{i}"), h, width, rng);
            let b = params.zeros(&format!("{prefix}.b{i}"), h, 1);
            layers.push((w, b));
            width = h;
        }
        Self { layers }
    }

    fn forward(&self, tape: &mut Tape, params: &Params, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let wv = tape.param(params, w);
            let bv = tape.param(params, b);
            let z = tape.matvec(wv, h)?;
            h = tape.add(z, bv)?;
            if i < last {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    /// Same map on plain slices.
    fn eval(&self, params: &Params, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let (r, c) = params.shape(w);
            let wv = params.get(w);
            let bv = params.get(b);
            let mut out = bv.to_vec();
            for (k, o) in out.iter_mut().enumerate() {
                *o += dot(&wv[k * c..(k + 1) * c], &h);
            }
            if i < last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            debug_assert_eq!(out.len(), r);
            h = out;
        }
        h
    }
}

/// Dot product with independent partial sums so it vectorises.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let (ac, bc) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ac.remainder().iter().zip(bc.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ac.zip(bc) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    acc.iter().sum::<f64>() + tail
}

/// Index map from the packed upper triangle to row-major `n×n` entries.
fn mirror_indices(n: usize) -> Vec<usize> {
    let mut pos = vec![0usize; n * n];
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            pos[i * n + j] = k;
            pos[j * n + i] = k;
            k += 1;
        }
    }
    pos
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub head: Head,
}

/// Fully connected baseline on the raw coefficient vector.
#[derive(Clone, Debug)]
pub struct Mlp {
    config: MlpConfig,
    params: Params,
    net: Dense,
    mirror: Arc<Vec<usize>>,
}

impl Mlp {
    pub fn new(config: MlpConfig, rng: &mut dyn RngCore) -> Result<Self> {
        let (input, output, n) = match config.head {
            Head::Gram { half_degree } => {
                if half_degree == 0 {
                    return Err(Error::InvalidConfig("gram head needs half-degree ≥ 1".into()));
                }
                let n = half_degree + 1;
                (2 * half_degree + 1, n * (n + 1) / 2, n)
            }
            Head::Scalar { degree } => ((degree + 1) * (degree + 2) / 2, 1, 0),
        };
        let mut params = Params::new();
        let net = Dense::new(&mut params, "mlp", input, &config.hidden, output, rng);
        Ok(Self { config, params, net, mirror: Arc::new(mirror_indices(n)) })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    fn forward(&self, tape: &mut Tape, params: &Params, input: &ModelInput) -> Result<Var> {
        self.config.head.check_input(input)?;
        let x = tape.vector(input.flat_coeffs());
        let y = self.net.forward(tape, params, x)?;
        match self.config.head {
            Head::Gram { half_degree } => {
                let n = half_degree + 1;
                let full = tape.gather(y, self.mirror.clone())?;
                tape.reshape(full, n, n)
            }
            Head::Scalar { .. } => Ok(y),
        }
    }

    /// Direct evaluation without recording a tape.
    pub fn eval_raw(&self, input: &ModelInput) -> Result<Vec<f64>> {
        self.config.head.check_input(input)?;
        let y = self.net.eval(&self.params, &input.flat_coeffs());
        Ok(match self.config.head {
            Head::Gram { .. } => self.mirror.iter().map(|&k| y[k]).collect(),
            Head::Scalar { .. } => y,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Sl2NetConfig {
    pub layers: usize,
    pub channels: usize,
    /// Transvectant outputs above this degree are dropped.
    pub max_degree: usize,
    /// Hidden widths of the per-layer MLP on invariants.
    pub mlp_hidden: Vec<usize>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub pairing: Pairing,
    pub head: Head,
}

#[derive(Clone, Debug)]
struct Product {
    left: (usize, usize),
    right: (usize, usize),
    out_degree: usize,
    tensor: Arc<BilinearTensor>,
}

#[derive(Clone, Debug)]
enum Mix {
    /// Channel combination without bias.
    Linear(ParamId),
    /// MLP on invariant scalars.
    Invariant(Dense),
}

#[derive(Clone, Debug)]
struct Gather {
    degree: usize,
    products: Vec<usize>,
    /// Channels of this degree in the layer input, used as a skip connection.
    skip: usize,
    mix: Mix,
}

#[derive(Clone, Debug)]
struct LayerPlan {
    products: Vec<Product>,
    outputs: Vec<Gather>,
}

/// Channel pairs of two groups under a pairing rule; `same` marks one group with itself.
fn channel_pairs(pairing: Pairing, ci: usize, cj: usize, same: bool) -> Vec<(usize, usize)> {
    match pairing {
        Pairing::Diagonal => (0..ci.min(cj)).map(|a| (a, a)).collect(),
        Pairing::Full => {
            let mut out = Vec::new();
            for a in 0..ci {
                for b in 0..cj {
                    if !same || a <= b {
                        out.push((a, b));
                    }
                }
            }
            out
        }
    }
}

/// Builds the per-degree gather lists and mixing parameters for one layer.
#[allow(clippy::too_many_arguments)]
fn plan_outputs(
    params: &mut Params,
    layer: usize,
    counts: &BTreeMap<usize, usize>,
    products: &[(usize, usize)],
    channels: usize,
    mlp_hidden: &[usize],
    rng: &mut dyn RngCore,
    prefix: &str,
) -> Vec<Gather> {
    let mut by_degree: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(idx, deg) in products {
        by_degree.entry(deg).or_default().push(idx);
    }
    for &deg in counts.keys() {
        by_degree.entry(deg).or_default();
    }
    by_degree
        .into_iter()
        .map(|(degree, prods)| {
            let skip = counts.get(&degree).copied().unwrap_or(0);
            let width = prods.len() + skip;
            let mix = if degree == 0 {
                Mix::Invariant(Dense::new(params, &format!("{prefix}{layer}.inv"), width, mlp_hidden, channels, rng))
            } else {
                Mix::Linear(params.normal(&format!("{prefix}{layer}.lin{degree}"), channels, width, rng))
            };
            Gather { degree, products: prods, skip, mix }
        })
        .collect()
}

/// Equivariant network built from transvectants (Clebsch–Gordan products).
#[derive(Clone, Debug)]
pub struct Sl2Net {
    config: Sl2NetConfig,
    params: Params,
    layers: Vec<LayerPlan>,
    head: HeadPlan,
}

#[derive(Clone, Debug)]
enum HeadPlan {
    Gram {
        intertwiner: Arc<Intertwiner>,
        /// `(slot degree, weights over final channels)`.
        slots: Vec<(usize, ParamId)>,
    },
    Scalar {
        weights: Option<ParamId>,
        bias: ParamId,
    },
}

impl Sl2Net {
    pub fn new(config: Sl2NetConfig, rng: &mut dyn RngCore) -> Result<Self> {
        if config.channels == 0 {
            return Err(Error::InvalidConfig("channels must be positive".into()));
        }
        if let Head::Gram { half_degree } = config.head {
            if config.max_degree < 2 * half_degree {
                return Err(Error::InvalidConfig(format!(
                    "max degree {} is below the input degree {}",
                    config.max_degree,
                    2 * half_degree
                )));
            }
        }
        let mut params = Params::new();
        let mut cache: BTreeMap<(usize, usize, usize), Arc<BilinearTensor>> = BTreeMap::new();
        let mut counts: BTreeMap<usize, usize> = config.head.input_degrees().into_iter().map(|d| (d, 1)).collect();
        let mut layers = Vec::new();
        for layer in 0..config.layers {
            let degs: Vec<(usize, usize)> = counts.iter().map(|(&d, &c)| (d, c)).collect();
            let mut products = Vec::new();
            let mut product_degrees = Vec::new();
            for (a, &(di, ci)) in degs.iter().enumerate() {
                for &(dj, cj) in &degs[a..] {
                    let same = di == dj;
                    for (x, y) in channel_pairs(config.pairing, ci, cj, same) {
                        for n in 0..=di.min(dj) {
                            // ψₙ(f, f) vanishes for odd n
                            if same && x == y && n % 2 == 1 {
                                continue;
                            }
                            let out_degree = di + dj - 2 * n;
                            if out_degree > config.max_degree {
                                continue;
                            }
                            let tensor = match cache.get(&(di, dj, n)) {
                                Some(t) => t.clone(),
                                None => {
                                    let t = Arc::new(transvectant_tensor(di, dj, n)?);
                                    cache.insert((di, dj, n), t.clone());
                                    t
                                }
                            };
                            product_degrees.push((products.len(), out_degree));
                            products.push(Product { left: (di, x), right: (dj, y), out_degree, tensor });
                        }
                    }
                }
            }
            let outputs = plan_outputs(
                &mut params,
                layer,
                &counts,
                &product_degrees,
                config.channels,
                &config.mlp_hidden,
                rng,
                "sl2.layer",
            );
            counts = outputs.iter().map(|g| (g.degree, config.channels)).collect();
            layers.push(LayerPlan { products, outputs });
        }
        let head = match config.head {
            Head::Gram { half_degree } => {
                let intertwiner = Arc::new(Intertwiner::new(half_degree)?);
                let slots = intertwiner
                    .symmetric_degrees()
                    .into_iter()
                    .filter(|&k| k != 2 * half_degree)
                    .filter_map(|k| {
                        counts
                            .get(&k)
                            .map(|&c| (k, params.normal(&format!("sl2.head.slot{k}"), 1, c, rng)))
                    })
                    .collect();
                HeadPlan::Gram { intertwiner, slots }
            }
            Head::Scalar { .. } => {
                let weights = counts.get(&0).map(|&c| params.normal("sl2.head.w", 1, c, rng));
                HeadPlan::Scalar { weights, bias: params.zeros("sl2.head.b", 1, 1) }
            }
        };
        Ok(Self { config, params, layers, head })
    }

    pub fn config(&self) -> &Sl2NetConfig {
        &self.config
    }

    /// The final bundle: one `channels × (k+1)` matrix per degree `k`.
    fn trunk(&self, tape: &mut Tape, params: &Params, input: &ModelInput) -> Result<BTreeMap<usize, Var>> {
        let mut bundle: BTreeMap<usize, Var> = BTreeMap::new();
        for (k, p) in input.components() {
            let v = tape.constant(p.coeffs().to_vec(), 1, k + 1)?;
            bundle.insert(k, v);
        }
        for plan in &self.layers {
            let mut rows: BTreeMap<(usize, usize), Var> = BTreeMap::new();
            let mut row = |tape: &mut Tape, key: (usize, usize)| -> Result<Var> {
                if let Some(v) = rows.get(&key) {
                    return Ok(*v);
                }
                let v = tape.row(bundle[&key.0], key.1)?;
                rows.insert(key, v);
                Ok(v)
            };
            let mut outs = Vec::with_capacity(plan.products.len());
            for p in &plan.products {
                let l = row(tape, p.left)?;
                let r = row(tape, p.right)?;
                outs.push(tape.bilinear(p.tensor.clone(), l, r)?);
            }
            let mut next = BTreeMap::new();
            for g in &plan.outputs {
                let mut parts: Vec<Var> = g.products.iter().map(|&i| outs[i]).collect();
                debug_assert!(g.products.iter().all(|&i| plan.products[i].out_degree == g.degree));
                for ch in 0..g.skip {
                    parts.push(row(tape, (g.degree, ch))?);
                }
                let value = match &g.mix {
                    Mix::Invariant(net) => {
                        let x = tape.concat(&parts);
                        let y = net.forward(tape, params, x)?;
                        let c = tape.shape(y).0;
                        tape.reshape(y, c, 1)?
                    }
                    Mix::Linear(w) => {
                        let stacked = tape.stack_rows(&parts)?;
                        let wv = tape.param(params, *w);
                        tape.matmul(wv, stacked)?
                    }
                };
                next.insert(g.degree, value);
            }
            bundle = next;
        }
        Ok(bundle)
    }

    fn forward(&self, tape: &mut Tape, params: &Params, input: &ModelInput) -> Result<Var> {
        self.config.head.check_input(input)?;
        let bundle = self.trunk(tape, params, input)?;
        match &self.head {
            HeadPlan::Gram { intertwiner, slots } => {
                let ModelInput::Form(p) = input else { unreachable!("checked above") };
                let mut parts: BTreeMap<usize, Var> = BTreeMap::new();
                for &(k, w) in slots {
                    let wv = tape.param(params, w);
                    parts.insert(k, tape.matmul(wv, bundle[&k])?);
                }
                parts.insert(p.degree(), tape.vector(p.coeffs().to_vec()));
                last_layer(tape, intertwiner, &parts)
            }
            HeadPlan::Scalar { weights, bias } => {
                let b = tape.param(params, *bias);
                match weights {
                    Some(w) => {
                        let wv = tape.param(params, *w);
                        let s = tape.matmul(wv, bundle[&0])?;
                        tape.add(s, b)
                    }
                    None => Ok(b),
                }
            }
        }
    }

    /// Activations of every degree after each layer, for structural checks.
    pub fn activations(&self, input: &ModelInput) -> Result<BTreeMap<usize, Vec<BinaryForm>>> {
        let mut tape = Tape::new();
        let bundle = self.trunk(&mut tape, &self.params, input)?;
        let mut out = BTreeMap::new();
        for (k, v) in bundle {
            let rows = tape.value(v).chunks(k + 1).map(|c| BinaryForm::new(c.to_vec())).collect::<Result<Vec<_>>>()?;
            out.insert(k, rows);
        }
        Ok(out)
    }
}

/// Concatenates slot forms by degree (missing slots are zero) and applies `L`.
fn last_layer(tape: &mut Tape, iw: &Intertwiner, parts: &BTreeMap<usize, Var>) -> Result<Var> {
    let d = iw.half_degree();
    let mut pieces = Vec::new();
    for half in 0..=d {
        let k = 2 * half;
        match parts.get(&k) {
            Some(&v) => pieces.push(v),
            None => pieces.push(tape.vector(vec![0.0; k + 1])),
        }
    }
    let v = tape.concat(&pieces);
    let m = iw.sym_forward_matrix();
    let mv = tape.constant(m.as_slice().to_vec(), m.rows(), m.cols())?;
    let flat = tape.matvec(mv, v)?;
    tape.reshape(flat, d + 1, d + 1)
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct So2NetConfig {
    pub layers: usize,
    pub channels: usize,
    /// Frequencies above this are dropped.
    pub max_frequency: usize,
    pub mlp_hidden: Vec<usize>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub pairing: Pairing,
    pub head: Head,
}

/// Real Fourier pairs of `p(cos θ, sin θ)`: row 0 is the constant term, row
/// `2f-1` and `2f` are the `cos fθ` and `sin fθ` amplitudes.
pub fn fourier_matrix(degree: usize) -> Matrix {
    let samples = 2 * degree + 2;
    let rows = 2 * degree + 1;
    let step = 2.0 * core::f64::consts::PI / samples as f64;
    let mut m = Matrix::zeros(rows, degree + 1);
    for t in 0..samples {
        let th = step * t as f64;
        let (c, s) = (cos(th), sin(th));
        for k in 0..=degree {
            let mono = crate::math::powi(c, k as i32) * crate::math::powi(s, (degree - k) as i32);
            m[(0, k)] += mono / samples as f64;
            for f in 1..=degree {
                let ff = f as f64 * th;
                m[(2 * f - 1, k)] += 2.0 * mono * cos(ff) / samples as f64;
                m[(2 * f, k)] += 2.0 * mono * sin(ff) / samples as f64;
            }
        }
    }
    m
}

/// Coefficients of `Re(w (x+iy)^f) (x²+y²)^((k-f)/2)` as a `(k+1)×2` matrix
/// acting on `(Re w, Im w)`; one column when `f = 0`.
pub fn frequency_lift(f: usize, k: usize) -> Result<Matrix> {
    if f > k || (k - f) % 2 != 0 {
        return Err(Error::InvalidConfig(format!("frequency {f} does not lift to degree {k}")));
    }
    // (x + iy)^f = Σ_j C(f,j) x^j (iy)^(f-j)
    let mut re = vec![0.0; f + 1];
    let mut im = vec![0.0; f + 1];
    for j in 0..=f {
        let c = binomial(f, j);
        match (f - j) % 4 {
            0 => re[j] += c,
            1 => im[j] += c,
            2 => re[j] -= c,
            _ => im[j] -= c,
        }
    }
    let m = (k - f) / 2;
    let radial: Vec<f64> = (0..=2 * m).map(|j| if j % 2 == 0 { binomial(m, j / 2) } else { 0.0 }).collect();
    let mul = |a: &[f64]| {
        let mut out = vec![0.0; k + 1];
        for (i, x) in a.iter().enumerate() {
            for (j, y) in radial.iter().enumerate() {
                out[i + j] += x * y;
            }
        }
        out
    };
    let (cr, ci) = (mul(&re), mul(&im));
    let cols = if f == 0 { 1 } else { 2 };
    // Re(w z) = Re w · Re z − Im w · Im z
    Ok(Matrix::from_fn(k + 1, cols, |r, c| if c == 0 { cr[r] } else { -ci[r] }))
}

/// Complex products as bilinear tensors over `(re, im)` pairs.
fn complex_product(left_real: bool, right_real: bool, conj_left: bool, real_out: bool) -> BilinearTensor {
    let mut entries = Vec::new();
    let sign = if conj_left { -1.0 } else { 1.0 };
    let push = |e: &mut Vec<(usize, usize, usize, f64)>, o, i, j, c: f64| {
        if c != 0.0 {
            e.push((o, i, j, c))
        }
    };
    // left = a + i·s·b (s = -1 when conjugated), right = c + i·d
    // re = a c − s b d, im = a d + s b c
    push(&mut entries, 0, 0, 0, 1.0);
    if !left_real && !right_real {
        push(&mut entries, 0, 1, 1, -sign);
    }
    if !real_out {
        if !right_real {
            push(&mut entries, 1, 0, 1, 1.0);
        }
        if !left_real {
            push(&mut entries, 1, 1, 0, sign);
        }
    }
    BilinearTensor {
        out_dim: if real_out { 1 } else { 2 },
        left_dim: if left_real { 1 } else { 2 },
        right_dim: if right_real { 1 } else { 2 },
        entries,
    }
}

/// Rotation-equivariant network on Fourier coefficients.
#[derive(Clone, Debug)]
pub struct So2Net {
    config: So2NetConfig,
    params: Params,
    /// Per input degree: the Fourier map.
    fourier: BTreeMap<usize, Matrix>,
    layers: Vec<LayerPlan>,
    head: So2Head,
}

#[derive(Clone, Debug)]
enum So2Head {
    Gram {
        intertwiner: Arc<Intertwiner>,
        /// `(slot degree, [(frequency, lift, weights)])`.
        slots: Vec<(usize, Vec<(usize, Matrix, ParamId)>)>,
    },
    Scalar {
        weights: Option<ParamId>,
        bias: ParamId,
    },
}

impl So2Net {
    pub fn new(config: So2NetConfig, rng: &mut dyn RngCore) -> Result<Self> {
        if config.channels == 0 {
            return Err(Error::InvalidConfig("channels must be positive".into()));
        }
        let input_degrees = config.head.input_degrees();
        let top = *input_degrees.iter().max().unwrap_or(&0);
        if config.max_frequency < top {
            return Err(Error::InvalidConfig(format!(
                "max frequency {} is below the input degree {top}",
                config.max_frequency
            )));
        }
        let fourier = input_degrees.iter().map(|&k| (k, fourier_matrix(k))).collect();
        let mut params = Params::new();
        // every input component contributes one channel at each frequency it reaches
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for f in 0..=top {
            let c = input_degrees.iter().filter(|&&k| k >= f).count();
            counts.insert(f, c);
        }
        let mut layers = Vec::new();
        for layer in 0..config.layers {
            let freqs: Vec<(usize, usize)> = counts.iter().map(|(&f, &c)| (f, c)).collect();
            let mut products = Vec::new();
            let mut product_degrees = Vec::new();
            for (a, &(fj, cj)) in freqs.iter().enumerate() {
                for &(fk, ck) in &freqs[a..] {
                    let same = fj == fk;
                    for (x, y) in channel_pairs(config.pairing, cj, ck, same) {
                        let (lr, rr) = (fj == 0, fk == 0);
                        if fj + fk <= config.max_frequency {
                            let t = complex_product(lr, rr, false, fj + fk == 0);
                            product_degrees.push((products.len(), fj + fk));
                            products.push(Product { left: (fj, x), right: (fk, y), out_degree: fj + fk, tensor: Arc::new(t) });
                        }
                        // conj(w_j) w_k lands on k − j; for j = 0 it repeats the sum term
                        if fj > 0 && fk - fj <= config.max_frequency {
                            let t = complex_product(false, false, true, fk == fj);
                            product_degrees.push((products.len(), fk - fj));
                            products.push(Product { left: (fj, x), right: (fk, y), out_degree: fk - fj, tensor: Arc::new(t) });
                        }
                    }
                }
            }
            let outputs = plan_outputs(
                &mut params,
                layer,
                &counts,
                &product_degrees,
                config.channels,
                &config.mlp_hidden,
                rng,
                "so2.layer",
            );
            counts = outputs.iter().map(|g| (g.degree, config.channels)).collect();
            layers.push(LayerPlan { products, outputs });
        }
        let head = match config.head {
            Head::Gram { half_degree } => {
                let intertwiner = Arc::new(Intertwiner::new(half_degree)?);
                let mut slots = Vec::new();
                for k in intertwiner.symmetric_degrees() {
                    if k == 2 * half_degree {
                        continue;
                    }
                    let mut terms = Vec::new();
                    for (&f, &c) in &counts {
                        if f <= k && (k - f) % 2 == 0 {
                            let w = params.normal(&format!("so2.head.slot{k}.f{f}"), 1, c, rng);
                            terms.push((f, frequency_lift(f, k)?, w));
                        }
                    }
                    slots.push((k, terms));
                }
                So2Head::Gram { intertwiner, slots }
            }
            Head::Scalar { .. } => {
                let weights = counts.get(&0).map(|&c| params.normal("so2.head.w", 1, c, rng));
                So2Head::Scalar { weights, bias: params.zeros("so2.head.b", 1, 1) }
            }
        };
        Ok(Self { config, params, fourier, layers, head })
    }

    pub fn config(&self) -> &So2NetConfig {
        &self.config
    }

    /// Per frequency: `channels × 1` (f = 0) or `channels × 2` matrices.
    fn trunk(&self, tape: &mut Tape, params: &Params, input: &ModelInput) -> Result<BTreeMap<usize, Var>> {
        let top = self.fourier.keys().copied().max().unwrap_or(0);
        let mut per_freq: BTreeMap<usize, Vec<Var>> = BTreeMap::new();
        for (k, p) in input.components() {
            let fm = &self.fourier[&k];
            let amps = fm.matvec(p.coeffs());
            for f in 0..=top {
                if f > k {
                    continue;
                }
                // w = a − i·b with a, b the cos and sin amplitudes
                let v = if f == 0 { vec![amps[0]] } else { vec![amps[2 * f - 1], -amps[2 * f]] };
                let node = tape.vector(v);
                per_freq.entry(f).or_default().push(node);
            }
        }
        let mut bundle = BTreeMap::new();
        for (f, rows) in per_freq {
            bundle.insert(f, tape.stack_rows(&rows)?);
        }
        for plan in &self.layers {
            let mut rows: BTreeMap<(usize, usize), Var> = BTreeMap::new();
            let mut row = |tape: &mut Tape, key: (usize, usize)| -> Result<Var> {
                if let Some(v) = rows.get(&key) {
                    return Ok(*v);
                }
                let v = tape.row(bundle[&key.0], key.1)?;
                rows.insert(key, v);
                Ok(v)
            };
            let mut outs = Vec::with_capacity(plan.products.len());
            for p in &plan.products {
                let l = row(tape, p.left)?;
                let r = row(tape, p.right)?;
                outs.push(tape.bilinear(p.tensor.clone(), l, r)?);
            }
            let mut next = BTreeMap::new();
            for g in &plan.outputs {
                let mut parts: Vec<Var> = g.products.iter().map(|&i| outs[i]).collect();
                for ch in 0..g.skip {
                    parts.push(row(tape, (g.degree, ch))?);
                }
                let value = match &g.mix {
                    Mix::Invariant(net) => {
                        let x = tape.concat(&parts);
                        let y = net.forward(tape, params, x)?;
                        let c = tape.shape(y).0;
                        tape.reshape(y, c, 1)?
                    }
                    Mix::Linear(w) => {
                        let stacked = tape.stack_rows(&parts)?;
                        let wv = tape.param(params, *w);
                        tape.matmul(wv, stacked)?
                    }
                };
                next.insert(g.degree, value);
            }
            bundle = next;
        }
        Ok(bundle)
    }

    fn forward(&self, tape: &mut Tape, params: &Params, input: &ModelInput) -> Result<Var> {
        self.config.head.check_input(input)?;
        let bundle = self.trunk(tape, params, input)?;
        match &self.head {
            So2Head::Gram { intertwiner, slots } => {
                let ModelInput::Form(p) = input else { unreachable!("checked above") };
                let mut parts: BTreeMap<usize, Var> = BTreeMap::new();
                for (k, terms) in slots {
                    let mut acc: Option<Var> = None;
                    for (f, lift, w) in terms {
                        let Some(&x) = bundle.get(f) else { continue };
                        let wv = tape.param(params, *w);
                        let mixed = tape.matmul(wv, x)?;
                        let lm = tape.constant(lift.as_slice().to_vec(), lift.rows(), lift.cols())?;
                        let form = tape.matvec(lm, mixed)?;
                        acc = Some(match acc {
                            Some(a) => tape.add(a, form)?,
                            None => form,
                        });
                    }
                    if let Some(a) = acc {
                        parts.insert(*k, a);
                    }
                }
                parts.insert(p.degree(), tape.vector(p.coeffs().to_vec()));
                last_layer(tape, intertwiner, &parts)
            }
            So2Head::Scalar { weights, bias } => {
                let b = tape.param(params, *bias);
                match weights {
                    Some(w) => {
                        let wv = tape.param(params, *w);
                        let s = tape.matmul(wv, bundle[&0])?;
                        tape.add(s, b)
                    }
                    None => Ok(b),
                }
            }
        }
    }
}

/// Any of the three families behind one interface.
#[derive(Clone, Debug)]
pub enum Model {
    Mlp(Mlp),
    Sl2Net(Sl2Net),
    So2Net(So2Net),
}

/// Serializable description of a [`Model`].
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum ModelConfig {
    Mlp(MlpConfig),
    Sl2net(Sl2NetConfig),
    So2net(So2NetConfig),
}

impl ModelConfig {
    pub fn head(&self) -> Head {
        match self {
            Self::Mlp(c) => c.head,
            Self::Sl2net(c) => c.head,
            Self::So2net(c) => c.head,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Mlp(_) => "mlp",
            Self::Sl2net(_) => "sl2net",
            Self::So2net(_) => "so2net",
        }
    }
}

impl Model {
    pub fn new(config: &ModelConfig, rng: &mut dyn RngCore) -> Result<Self> {
        Ok(match config {
            ModelConfig::Mlp(c) => Self::Mlp(Mlp::new(c.clone(), rng)?),
            ModelConfig::Sl2net(c) => Self::Sl2Net(Sl2Net::new(c.clone(), rng)?),
            ModelConfig::So2net(c) => Self::So2Net(So2Net::new(c.clone(), rng)?),
        })
    }

    pub fn config(&self) -> ModelConfig {
        match self {
            Self::Mlp(m) => ModelConfig::Mlp(m.config.clone()),
            Self::Sl2Net(m) => ModelConfig::Sl2net(m.config.clone()),
            Self::So2Net(m) => ModelConfig::So2net(m.config.clone()),
        }
    }

    pub fn head(&self) -> Head {
        self.config().head()
    }

    pub fn params(&self) -> &Params {
        match self {
            Self::Mlp(m) => &m.params,
            Self::Sl2Net(m) => &m.params,
            Self::So2Net(m) => &m.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut Params {
        match self {
            Self::Mlp(m) => &mut m.params,
            Self::Sl2Net(m) => &mut m.params,
            Self::So2Net(m) => &mut m.params,
        }
    }

    /// Records the unnormalised model `g(input)` with the given parameters.
    pub fn forward_raw(&self, tape: &mut Tape, params: &Params, input: &ModelInput) -> Result<Var> {
        match self {
            Self::Mlp(m) => m.forward(tape, params, input),
            Self::Sl2Net(m) => m.forward(tape, params, input),
            Self::So2Net(m) => m.forward(tape, params, input),
        }
    }

    /// Records `‖p‖ · g(p / ‖p‖)`, or zeros when `‖p‖ < 1e-12`.
    pub fn forward(&self, tape: &mut Tape, params: &Params, input: &ModelInput) -> Result<Var> {
        let norm = input.norm();
        if !(norm >= ZERO_NORM) {
            self.head().check_input(input)?;
            return match self.head() {
                Head::Gram { half_degree } => {
                    let n = half_degree + 1;
                    tape.constant(vec![0.0; n * n], n, n)
                }
                Head::Scalar { .. } => tape.constant(vec![0.0], 1, 1),
            };
        }
        let unit = input.scale(1.0 / norm);
        let y = self.forward_raw(tape, params, &unit)?;
        Ok(tape.scale(y, norm))
    }

    fn to_prediction(&self, values: &[f64]) -> Result<Prediction> {
        Ok(match self.head() {
            Head::Gram { half_degree } => {
                let n = half_degree + 1;
                Prediction::Gram(SymMatrix::symmetrize(&Matrix::from_vec(n, n, values.to_vec())))
            }
            Head::Scalar { .. } => Prediction::Scalar(values[0]),
        })
    }

    /// Normalised prediction.
    pub fn predict(&self, input: &ModelInput) -> Result<Prediction> {
        if let Self::Mlp(m) = self {
            let norm = input.norm();
            let values = if norm >= ZERO_NORM {
                m.eval_raw(&input.scale(1.0 / norm))?.into_iter().map(|v| v * norm).collect()
            } else {
                m.config.head.check_input(input)?;
                match m.config.head {
                    Head::Gram { half_degree } => vec![0.0; (half_degree + 1) * (half_degree + 1)],
                    Head::Scalar { .. } => vec![0.0],
                }
            };
            return self.to_prediction(&values);
        }
        let mut tape = Tape::new();
        let y = self.forward(&mut tape, self.params(), input)?;
        self.to_prediction(tape.value(y))
    }

    /// Prediction of the model without the norm wrapper.
    pub fn predict_raw(&self, input: &ModelInput) -> Result<Prediction> {
        let mut tape = Tape::new();
        let y = self.forward_raw(&mut tape, self.params(), input)?;
        self.to_prediction(tape.value(y))
    }

    /// Parameter tensors with their shapes and the total count.
    pub fn describe(&self) -> String {
        let p = self.params();
        let mut s = format!("{} ({} parameters)\n", self.config().kind(), p.count());
        for id in p.ids() {
            let (r, c) = p.shape(id);
            s.push_str(&format!("  {:<28} {r}x{c}\n", p.name(id)));
        }
        s
    }
}
