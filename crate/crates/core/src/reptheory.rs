//! Transvectants, the Clebsch–Gordan decomposition of binary forms and the
//! equivariant map from stacked irreps to symmetric Gram matrices.
//!
//! Transvectants use the classical normalisation
//!
//! ```text
//! ψₙ(p, q) = (d₁-n)!(d₂-n)!/(d₁! d₂!) · Σₘ (-1)^m C(n,m) ∂ⁿp/∂x^(n-m)∂y^m · ∂ⁿq/∂x^m∂y^(n-m)
//! ```
//!
//! so that `ψ₀(p, q) = p·q`. Derivatives are exact index shifts on the
//! coefficient vectors.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{Lu, Matrix};
use crate::math::{abs, binomial, falling};
use crate::polycore::{induced_matrix, BinaryForm, GroupElement, SymMatrix};

/// `∂^(a+b) p / ∂x^a ∂y^b`, returned on the coefficient vector of degree `d - a - b`.
fn derivative(coeffs: &[f64], a: usize, b: usize) -> Vec<f64> {
    let d = coeffs.len() - 1;
    if a + b > d {
        return Vec::new();
    }
    let out_deg = d - a - b;
    let mut out = vec![0.0; out_deg + 1];
    for (i, &c) in coeffs.iter().enumerate() {
        if c == 0.0 || i < a || d - i < b {
            continue;
        }
        out[i - a] += c * falling(i, a) * falling(d - i, b);
    }
    out
}

/// Normalising constant `(d₁-n)!(d₂-n)!/(d₁! d₂!)`.
pub fn transvectant_prefactor(d1: usize, d2: usize, n: usize) -> f64 {
    1.0 / (falling(d1, n) * falling(d2, n))
}

/// The `n`-th transvectant of `p` (degree `d₁`) and `q` (degree `d₂`).
pub fn transvectant(p: &BinaryForm, q: &BinaryForm, n: usize) -> Result<BinaryForm> {
    let (d1, d2) = (p.degree(), q.degree());
    let max = d1.min(d2);
    if n > max {
        return Err(Error::OrderOutOfRange { order: n, max });
    }
    let out_deg = d1 + d2 - 2 * n;
    let mut out = vec![0.0; out_deg + 1];
    for m in 0..=n {
        let dp = derivative(p.coeffs(), n - m, m);
        let dq = derivative(q.coeffs(), m, n - m);
        let w = binomial(n, m) * if m % 2 == 0 { 1.0 } else { -1.0 };
        for (i, a) in dp.iter().enumerate() {
            if *a == 0.0 {
                continue;
            }
            for (j, b) in dq.iter().enumerate() {
                out[i + j] += w * a * b;
            }
        }
    }
    let pref = transvectant_prefactor(d1, d2, n);
    out.iter_mut().for_each(|v| *v *= pref);
    BinaryForm::new(out)
}

/// Sparse 3-tensor of a fixed bilinear map `out[o] = Σ B[o,i,j] p[i] q[j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BilinearTensor {
    pub out_dim: usize,
    pub left_dim: usize,
    pub right_dim: usize,
    pub entries: Vec<(usize, usize, usize, f64)>,
}

impl BilinearTensor {
    pub fn apply(&self, p: &[f64], q: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.out_dim];
        for &(o, i, j, c) in &self.entries {
            out[o] += c * p[i] * q[j];
        }
        out
    }
}

/// The transvectant `ψₙ` on degrees `(d₁, d₂)` as a bilinear tensor.
pub fn transvectant_tensor(d1: usize, d2: usize, n: usize) -> Result<BilinearTensor> {
    let max = d1.min(d2);
    if n > max {
        return Err(Error::OrderOutOfRange { order: n, max });
    }
    let mut entries = Vec::new();
    for i in 0..=d1 {
        let ei = BinaryForm::monomial(d1, i, 1.0);
        for j in 0..=d2 {
            let ej = BinaryForm::monomial(d2, j, 1.0);
            let t = transvectant(&ei, &ej, n)?;
            for (o, &c) in t.coeffs().iter().enumerate() {
                if c != 0.0 {
                    entries.push((o, i, j, c));
                }
            }
        }
    }
    Ok(BilinearTensor {
        out_dim: d1 + d2 - 2 * n + 1,
        left_dim: d1 + 1,
        right_dim: d2 + 1,
        entries,
    })
}

/// Clebsch–Gordan components of `p ⊗ q`, keyed by output degree.
#[derive(Clone, Debug, PartialEq)]
pub struct CGDecomposition {
    pub parts: BTreeMap<usize, BinaryForm>,
}

pub fn cg_decompose(p: &BinaryForm, q: &BinaryForm) -> CGDecomposition {
    let (d1, d2) = (p.degree(), q.degree());
    let parts = (0..=d1.min(d2))
        .map(|n| {
            let t = transvectant(p, q, n).expect("order within range");
            (d1 + d2 - 2 * n, t)
        })
        .collect();
    CGDecomposition { parts }
}

/// Equivariant linear isomorphism between `V(0) ⊕ V(2) ⊕ … ⊕ V(2d)` and
/// `(d+1)×(d+1)` matrices; its inverse is the Clebsch–Gordan map
/// `e_i ⊗ e_j ↦ {ψₙ(e_i, e_j)}ₙ`.
///
/// Slots are concatenated in ascending degree. On symmetric matrices only the
/// slots of degree `2d - 2n` with `n` even are populated; the odd-`n` slots
/// carry the antisymmetric part, which [`Intertwiner::forward`] discards.
#[derive(Clone, Debug)]
pub struct Intertwiner {
    half_degree: usize,
    /// `(d+1)²` columns indexed by `(i, j)` row-major, rows by slot coefficients.
    cg: Matrix,
    /// Inverse of `cg` followed by symmetrisation, `(d+1)² × (d+1)²`.
    sym_forward: Matrix,
}

impl Intertwiner {
    pub fn new(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidConfig("intertwiner half-degree must be at least 1".into()));
        }
        let n = d + 1;
        let dim = n * n;
        let mut cg = Matrix::zeros(dim, dim);
        for i in 0..n {
            let ei = BinaryForm::monomial(d, i, 1.0);
            for j in 0..n {
                let ej = BinaryForm::monomial(d, j, 1.0);
                let col = i * n + j;
                for order in 0..=d {
                    let deg = 2 * d - 2 * order;
                    let off = Self::offset_of(deg);
                    let t = transvectant(&ei, &ej, order)?;
                    for (k, &c) in t.coeffs().iter().enumerate() {
                        cg[(off + k, col)] = c;
                    }
                }
            }
        }
        let forward = Lu::new(&cg)
            .ok_or(Error::Singular("Clebsch-Gordan change of basis"))?
            .inverse();
        let sym_forward = Matrix::from_fn(dim, dim, |r, c| {
            let (i, j) = (r / n, r % n);
            0.5 * (forward[(i * n + j, c)] + forward[(j * n + i, c)])
        });
        Ok(Self {
            half_degree: d,
            cg,
            sym_forward,
        })
    }

    #[inline]
    pub fn half_degree(&self) -> usize {
        self.half_degree
    }

    /// Length of the concatenated slot vector, `(d+1)²`.
    pub fn input_dim(&self) -> usize {
        (self.half_degree + 1) * (self.half_degree + 1)
    }

    /// Start of the slot for an even degree `deg` in the concatenation.
    pub fn offset_of(deg: usize) -> usize {
        debug_assert!(deg % 2 == 0);
        // Σ_{k < deg, k even} (k + 1) = (deg/2)²
        (deg / 2) * (deg / 2)
    }

    /// Degrees whose slots reach symmetric matrices: `2d, 2d-4, …`.
    pub fn symmetric_degrees(&self) -> Vec<usize> {
        (0..=self.half_degree)
            .filter(|n| n % 2 == 0)
            .map(|n| 2 * self.half_degree - 2 * n)
            .collect()
    }

    /// Maps concatenated slots to the row-major entries of a symmetric matrix.
    pub fn sym_forward_matrix(&self) -> &Matrix {
        &self.sym_forward
    }

    /// `L(v)` for the concatenated slot vector `v`.
    pub fn forward(&self, v: &[f64]) -> Result<SymMatrix> {
        if v.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), found: v.len() });
        }
        let n = self.half_degree + 1;
        let flat = self.sym_forward.matvec(v);
        Ok(SymMatrix::symmetrize(&Matrix::from_vec(n, n, flat)))
    }

    /// `L⁻¹(M)`, the Clebsch–Gordan components of `M` concatenated by degree.
    pub fn inverse(&self, m: &SymMatrix) -> Result<Vec<f64>> {
        let n = self.half_degree + 1;
        if m.dim() != n {
            return Err(Error::DimensionMismatch { expected: n, found: m.dim() });
        }
        Ok(self.cg.matvec(m.matrix().as_slice()))
    }

    /// Applies `A^[k]ᵀ` to every slot of a concatenated vector.
    pub fn act_on_slots(&self, g: &GroupElement, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for half in 0..=self.half_degree {
            let deg = 2 * half;
            let off = Self::offset_of(deg);
            let m = induced_matrix(g, deg);
            let t = m.matrix().tmatvec(&v[off..off + deg + 1]);
            out[off..off + deg + 1].copy_from_slice(&t);
        }
        out
    }
}

/// Builds the last layer for half-degree `d`.
pub fn build_intertwiner(d: usize) -> Result<Intertwiner> {
    Intertwiner::new(d)
}

/// `L(p₀, p₁, …, p_{2d})`. Odd-degree parts have no equivariant image in the
/// symmetric matrices and are ignored.
pub fn apply_last_layer(iw: &Intertwiner, parts: &[BinaryForm]) -> Result<SymMatrix> {
    let top = 2 * iw.half_degree();
    if parts.len() != top + 1 {
        return Err(Error::DimensionMismatch { expected: top + 1, found: parts.len() });
    }
    let mut v = vec![0.0; iw.input_dim()];
    for (k, p) in parts.iter().enumerate() {
        if p.degree() != k {
            return Err(Error::DimensionMismatch { expected: k, found: p.degree() });
        }
        if k % 2 == 0 {
            let off = Intertwiner::offset_of(k);
            v[off..off + k + 1].copy_from_slice(p.coeffs());
        }
    }
    iw.forward(&v)
}

/// Threshold below which a coefficient counts as a structural zero.
pub const BALANCE_TOL: f64 = 1e-12;

/// True iff every monomial `x^k y^r` with a nonzero coefficient has `k ≡ r (mod b)`.
pub fn is_balanced_mod(p: &BinaryForm, b: usize) -> bool {
    assert!(b >= 1, "modulus must be positive");
    let d = p.degree() as i64;
    p.coeffs().iter().enumerate().all(|(k, &c)| {
        abs(c) <= BALANCE_TOL || (2 * k as i64 - d).rem_euclid(b as i64) == 0
    })
}
