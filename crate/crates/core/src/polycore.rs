//! Binary forms and the SL(2,ℝ) action on them.
//!
//! A degree-`d` form is stored as `d + 1` coefficients where entry `i`
//! multiplies `x^i · y^(d-i)`. The same ascending-in-`x` ordering is used for
//! lifts, induced matrices and Gram matrices, so that
//! `p(v) = lift(v, d) · coeffs` and `(A v)^[d] = A^[d] · v^[d]`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{singular_values, Matrix};
use crate::math::{abs, binomial, cos, sin, sqrt};

/// Homogeneous polynomial in two variables.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryForm {
    coeffs: Vec<f64>,
}

impl BinaryForm {
    /// Builds a form from coefficients in ascending powers of `x`.
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::DimensionMismatch { expected: 1, found: 0 });
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { coeffs })
    }

    pub fn zero(degree: usize) -> Self {
        Self {
            coeffs: vec![0.0; degree + 1],
        }
    }

    /// `c · x^i · y^(d-i)`.
    pub fn monomial(degree: usize, x_power: usize, c: f64) -> Self {
        let mut f = Self::zero(degree);
        f.coeffs[x_power] = c;
        f
    }

    #[inline]
    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    #[inline]
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    pub fn evaluate(&self, (x, y): (f64, f64)) -> f64 {
        lift((x, y), self.degree())
            .iter()
            .zip(&self.coeffs)
            .map(|(m, c)| m * c)
            .sum()
    }

    /// Euclidean norm of the coefficient vector.
    pub fn norm(&self) -> f64 {
        sqrt(self.coeffs.iter().map(|c| c * c).sum())
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    /// Panics on degree mismatch.
    pub fn add(&self, other: &BinaryForm) -> Self {
        assert_eq!(self.degree(), other.degree(), "adding forms of different degree");
        Self {
            coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect(),
        }
    }

    /// Polynomial product.
    pub fn mul(&self, other: &BinaryForm) -> Self {
        let mut out = vec![0.0; self.degree() + other.degree() + 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            if *a == 0.0 {
                continue;
            }
            for (j, b) in other.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Self { coeffs: out }
    }

    pub fn max_abs_diff(&self, other: &BinaryForm) -> f64 {
        assert_eq!(self.degree(), other.degree());
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .fold(0.0, |m, (a, b)| m.max(abs(a - b)))
    }
}

/// Euclidean norm of the coefficient vector.
pub fn form_norm(p: &BinaryForm) -> f64 {
    p.norm()
}

pub fn evaluate(p: &BinaryForm, point: (f64, f64)) -> f64 {
    p.evaluate(point)
}

/// The d-lift `(y^d, x y^(d-1), …, x^d)`.
pub fn lift((x, y): (f64, f64), d: usize) -> Vec<f64> {
    let mut xs = vec![1.0; d + 1];
    let mut ys = vec![1.0; d + 1];
    for k in 1..=d {
        xs[k] = xs[k - 1] * x;
        ys[k] = ys[k - 1] * y;
    }
    (0..=d).map(|i| xs[i] * ys[d - i]).collect()
}

/// A 2×2 real matrix `[[a, b], [c, e]]` with unit determinant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupElement {
    a: f64,
    b: f64,
    c: f64,
    e: f64,
}

/// Tolerance on `|det − 1|` accepted by [`GroupElement::new`].
pub const DET_TOL: f64 = 1e-10;

impl GroupElement {
    pub fn new(a: f64, b: f64, c: f64, e: f64) -> Result<Self> {
        if ![a, b, c, e].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let det = a * e - b * c;
        if abs(det - 1.0) > DET_TOL {
            return Err(Error::NotUnimodular { det });
        }
        Ok(Self { a, b, c, e })
    }

    pub fn identity() -> Self {
        Self { a: 1.0, b: 0.0, c: 0.0, e: 1.0 }
    }

    /// Counter-clockwise rotation by `theta`.
    pub fn rotation(theta: f64) -> Self {
        let (s, c) = (sin(theta), cos(theta));
        Self { a: c, b: -s, c: s, e: c }
    }

    /// `diag(s, 1/s)`; panics unless `s` is finite and nonzero.
    pub fn stretch(s: f64) -> Self {
        assert!(s.is_finite() && s != 0.0, "stretch factor must be finite and nonzero");
        Self { a: s, b: 0.0, c: 0.0, e: 1.0 / s }
    }

    /// `R(θ₁) · diag(s, 1/s) · R(θ₂)`, which has condition number `s²` for `s ≥ 1`.
    pub fn from_svd(theta1: f64, s: f64, theta2: f64) -> Self {
        Self::rotation(theta1) * Self::stretch(s) * Self::rotation(theta2)
    }

    #[inline]
    pub fn entries(&self) -> [[f64; 2]; 2] {
        [[self.a, self.b], [self.c, self.e]]
    }

    pub fn det(&self) -> f64 {
        self.a * self.e - self.b * self.c
    }

    pub fn inverse(&self) -> Self {
        Self { a: self.e, b: -self.b, c: -self.c, e: self.a }
    }

    pub fn apply(&self, (x, y): (f64, f64)) -> (f64, f64) {
        (self.a * x + self.b * y, self.c * x + self.e * y)
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_rows(&[&[self.a, self.b], &[self.c, self.e]])
    }

    pub fn condition_number(&self) -> f64 {
        // κ = σ₁/σ₂ = σ₁² because σ₁σ₂ = |det| = 1
        let f2 = self.a * self.a + self.b * self.b + self.c * self.c + self.e * self.e;
        let s1sq = 0.5 * (f2 + sqrt((f2 * f2 - 4.0).max(0.0)));
        s1sq
    }
}

impl core::ops::Mul for GroupElement {
    type Output = GroupElement;

    fn mul(self, o: GroupElement) -> GroupElement {
        GroupElement {
            a: self.a * o.a + self.b * o.c,
            b: self.a * o.b + self.b * o.e,
            c: self.c * o.a + self.e * o.c,
            e: self.c * o.b + self.e * o.e,
        }
    }
}

/// Matrix of a group element acting on degree-`d` lifts.
#[derive(Clone, Debug, PartialEq)]
pub struct InducedMatrix {
    degree: usize,
    mat: Matrix,
}

impl InducedMatrix {
    #[inline]
    pub fn degree(&self) -> usize {
        self.degree
    }

    #[inline]
    pub fn matrix(&self) -> &Matrix {
        &self.mat
    }

    pub fn into_matrix(self) -> Matrix {
        self.mat
    }
}

/// Coefficients of `(u0 · y + u1 · x)^k` in ascending `x` powers.
fn linear_power(coef_x: f64, coef_y: f64, k: usize) -> Vec<f64> {
    (0..=k)
        .map(|j| binomial(k, j) * crate::math::powi(coef_x, j as i32) * crate::math::powi(coef_y, (k - j) as i32))
        .collect()
}

/// Row `i` is the coefficient vector of `(a x + b y)^i (c x + e y)^(d-i)`.
pub fn induced_matrix(g: &GroupElement, d: usize) -> InducedMatrix {
    let mut mat = Matrix::zeros(d + 1, d + 1);
    for i in 0..=d {
        let first = linear_power(g.a, g.b, i);
        let second = linear_power(g.c, g.e, d - i);
        for (j1, u) in first.iter().enumerate() {
            for (j2, v) in second.iter().enumerate() {
                mat[(i, j1 + j2)] += u * v;
            }
        }
    }
    InducedMatrix { degree: d, mat }
}

/// Coefficients of `v ↦ p(A v)`, i.e. `A^[d]ᵀ · p`.
pub fn act_on_form(g: &GroupElement, p: &BinaryForm) -> BinaryForm {
    let m = induced_matrix(g, p.degree());
    BinaryForm {
        coeffs: m.mat.tmatvec(&p.coeffs),
    }
}

/// Real symmetric matrix stored densely.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix {
    mat: Matrix,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { mat: Matrix::zeros(n, n) }
    }

    pub fn identity(n: usize) -> Self {
        Self { mat: Matrix::identity(n) }
    }

    /// Fills from the upper triangle `f(i, j)` with `i <= j` and mirrors.
    pub fn from_upper(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut mat = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = f(i, j);
                mat[(i, j)] = v;
                mat[(j, i)] = v;
            }
        }
        Self { mat }
    }

    /// Accepts only exactly symmetric, finite, square input.
    pub fn from_matrix(m: Matrix) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(Error::DimensionMismatch { expected: m.rows(), found: m.cols() });
        }
        if m.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        for i in 0..m.rows() {
            for j in i + 1..m.cols() {
                if m[(i, j)] != m[(j, i)] {
                    return Err(Error::NotSymmetric);
                }
            }
        }
        Ok(Self { mat: m })
    }

    /// `(M + Mᵀ) / 2`.
    pub fn symmetrize(m: &Matrix) -> Self {
        let n = m.rows();
        Self::from_upper(n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]))
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.mat.rows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.mat[(i, j)]
    }

    #[inline]
    pub fn matrix(&self) -> &Matrix {
        &self.mat
    }

    pub fn into_matrix(self) -> Matrix {
        self.mat
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { mat: self.mat.scale(s) }
    }

    pub fn add(&self, o: &SymMatrix) -> Self {
        Self { mat: self.mat.add(&o.mat) }
    }

    pub fn sub(&self, o: &SymMatrix) -> Self {
        Self { mat: self.mat.sub(&o.mat) }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.mat.frobenius_norm()
    }

    /// `Bᵀ · self · B`, re-symmetrised to remove rounding asymmetry.
    pub fn congruence(&self, b: &Matrix) -> Self {
        Self::symmetrize(&self.mat.congruence(b))
    }

    /// Upper triangle, row by row.
    pub fn upper(&self) -> Vec<f64> {
        let n = self.dim();
        let mut out = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in i..n {
                out.push(self.mat[(i, j)]);
            }
        }
        out
    }
}

/// Coefficient `k` of `x^[d]ᵀ Q x^[d]` is the anti-diagonal sum `Σ_{i+j=k} Q_ij`.
pub fn gram_to_coeffs(q: &SymMatrix) -> BinaryForm {
    let n = q.dim();
    let d = n.saturating_sub(1);
    let coeffs = (0..=2 * d).map(|k| antidiagonal_sum(q, k)).collect();
    BinaryForm { coeffs }
}

/// Off-diagonal pairs first, doubled, then the diagonal entry if `k` is even.
fn antidiagonal_sum(q: &SymMatrix, k: usize) -> f64 {
    let d = q.dim() - 1;
    let lo = k.saturating_sub(d);
    let mut acc = 0.0;
    for i in lo..(k + 1) / 2 {
        acc += 2.0 * q.mat[(i, k - i)];
    }
    if k % 2 == 0 {
        acc += q.mat[(k / 2, k / 2)];
    }
    acc
}

/// Number of Gram entries `(i, j)` with `i + j = k` inside a `(d+1)²` matrix.
fn antidiagonal_len(d: usize, k: usize) -> usize {
    let lo = k.saturating_sub(d);
    let hi = k.min(d);
    hi - lo + 1
}

/// A Gram matrix for `p` that spreads each coefficient evenly over its
/// anti-diagonal. Shares are rounded to a grid a few bits coarser than the
/// coefficient and the central entry takes the remainder, so
/// [`gram_to_coeffs`] recovers `p` bit for bit.
pub fn particular_gram(p: &BinaryForm) -> Result<SymMatrix> {
    if p.degree() % 2 != 0 {
        return Err(Error::OddDegree(p.degree()));
    }
    let d = p.degree() / 2;
    let mut q = SymMatrix::zeros(d + 1);
    for (k, &c) in p.coeffs.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let (_, e) = libm::frexp(c);
        let grid = libm::ldexp(1.0, e - 45);
        let share = libm::round(c / antidiagonal_len(d, k) as f64 / grid) * grid;
        let lo = k.saturating_sub(d);
        let mut used = 0.0;
        for i in lo..(k + 1) / 2 {
            if k % 2 == 1 && i == k / 2 {
                break;
            }
            q.mat[(i, k - i)] = share;
            q.mat[(k - i, i)] = share;
            used += 2.0 * share;
        }
        let rest = c - used;
        if k % 2 == 0 {
            q.mat[(k / 2, k / 2)] = rest;
        } else {
            let (i, j) = (k / 2, k / 2 + 1);
            q.mat[(i, j)] = rest / 2.0;
            q.mat[(j, i)] = rest / 2.0;
        }
    }
    Ok(q)
}

/// Basis of the kernel of [`gram_to_coeffs`] on `(d+1)×(d+1)` symmetric
/// matrices, with small integer entries so the kernel property is exact.
pub fn gram_nullspace_basis(d: usize) -> Vec<SymMatrix> {
    let n = d + 1;
    let mut basis = Vec::new();
    for k in 0..=2 * d {
        // upper-triangle positions (i, k-i) with i <= k-i
        let lo = k.saturating_sub(d);
        let positions: Vec<(usize, usize)> = (lo..=k / 2).map(|i| (i, k - i)).collect();
        for w in positions.windows(2) {
            let (p0, p1) = (w[0], w[1]);
            // weight of an entry in the anti-diagonal sum: off-diagonal entries count twice
            let w0 = if p0.0 == p0.1 { 1.0 } else { 2.0 };
            let w1 = if p1.0 == p1.1 { 1.0 } else { 2.0 };
            let mut m = Matrix::zeros(n, n);
            m[(p0.0, p0.1)] = w1;
            m[(p0.1, p0.0)] = w1;
            m[(p1.0, p1.1)] = -w0;
            m[(p1.1, p1.0)] = -w0;
            basis.push(SymMatrix { mat: m });
        }
    }
    basis
}

/// `σ_max / σ_min`; infinite when `σ_min < 1e-300`.
pub fn condition_number(m: &Matrix) -> Result<f64> {
    let sv = singular_values(m);
    let max = sv.first().copied().unwrap_or(0.0);
    if max == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    let min = sv.last().copied().unwrap_or(0.0);
    if min < 1e-300 {
        return Ok(f64::INFINITY);
    }
    Ok(max / min)
}

/// Sends `c · x^j` to `c · x^j · y^(d-j)`.
pub fn homogenize(q: &[f64], d: usize) -> Result<BinaryForm> {
    let k = q.len().saturating_sub(1);
    if k > d {
        return Err(Error::DegreeTooHigh { degree: k, target: d });
    }
    let mut coeffs = vec![0.0; d + 1];
    coeffs[..q.len()].copy_from_slice(q);
    BinaryForm::new(coeffs)
}

/// Sparse inhomogeneous polynomial in `x, y` as `(x power, y power, coefficient)` terms.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Poly2 {
    pub terms: Vec<(usize, usize, f64)>,
}

impl Poly2 {
    pub fn new(terms: Vec<(usize, usize, f64)>) -> Self {
        Self { terms }
    }

    pub fn total_degree(&self) -> usize {
        self.terms.iter().map(|&(i, j, _)| i + j).max().unwrap_or(0)
    }

    pub fn evaluate(&self, (x, y): (f64, f64)) -> f64 {
        self.terms
            .iter()
            .map(|&(i, j, c)| c * crate::math::powi(x, i as i32) * crate::math::powi(y, j as i32))
            .sum()
    }
}

/// Inhomogeneous polynomial stored as its homogeneous components of degree `0..=d`.
#[derive(Clone, Debug, PartialEq)]
pub struct InhomogPoly {
    components: Vec<BinaryForm>,
}

impl InhomogPoly {
    /// Component `k` must have degree `k`.
    pub fn new(components: Vec<BinaryForm>) -> Result<Self> {
        for (k, c) in components.iter().enumerate() {
            if c.degree() != k {
                return Err(Error::DimensionMismatch { expected: k, found: c.degree() });
            }
        }
        if components.is_empty() {
            return Err(Error::DimensionMismatch { expected: 1, found: 0 });
        }
        Ok(Self { components })
    }

    pub fn degree(&self) -> usize {
        self.components.len() - 1
    }

    pub fn components(&self) -> &[BinaryForm] {
        &self.components
    }

    pub fn evaluate(&self, v: (f64, f64)) -> f64 {
        self.components.iter().map(|c| c.evaluate(v)).sum()
    }

    /// Each component transformed by [`act_on_form`], giving `v ↦ q(A v)`.
    pub fn act(&self, g: &GroupElement) -> Self {
        Self {
            components: self.components.iter().map(|c| act_on_form(g, c)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            components: self.components.iter().map(|c| c.scale(s)).collect(),
        }
    }

    /// Norm of all coefficients concatenated.
    pub fn norm(&self) -> f64 {
        sqrt(self.components.iter().map(|c| c.norm() * c.norm()).sum())
    }

    pub fn flat_coeffs(&self) -> Vec<f64> {
        self.components.iter().flat_map(|c| c.coeffs().iter().copied()).collect()
    }

    pub fn to_poly2(&self) -> Poly2 {
        let mut terms = Vec::new();
        for (k, c) in self.components.iter().enumerate() {
            for (i, &v) in c.coeffs().iter().enumerate() {
                if v != 0.0 {
                    terms.push((i, k - i, v));
                }
            }
        }
        Poly2 { terms }
    }
}

/// Groups the monomials of `p` by total degree.
pub fn split_components(p: &Poly2) -> InhomogPoly {
    let d = p.total_degree();
    let mut components: Vec<BinaryForm> = (0..=d).map(BinaryForm::zero).collect();
    for &(i, j, c) in &p.terms {
        components[i + j].coeffs[i] += c;
    }
    InhomogPoly { components }
}
