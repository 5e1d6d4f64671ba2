//! Analytic-center Gram matrices: maximise `log det Q` over the Gram
//! matrices of a form, and validate a certificate without the solver.
//!
//! The solver minimises `-log det Q` subject to `𝒜(Q) = p`, where `𝒜` sums
//! anti-diagonals, in two phases. The first runs damped Newton on the dual
//! `-log det H(ν) + pᵀν` with `H(ν)` the Hankel matrix of `ν`, started from
//! a scaled moment sequence of the circle; `Q = H(ν)⁻¹` stays positive
//! definite and becomes feasible as the dual gradient vanishes. The second
//! takes feasible Newton steps on the upper triangle of `Q` through the dense
//! KKT system, backtracking on the objective. Every trial point must pass a
//! Cholesky factorisation.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_inverse, cholesky_logdet, min_eigenvalue, Lu, Matrix};
use crate::math::{abs, sqrt};
use crate::polycore::{gram_to_coeffs, induced_matrix, BinaryForm, GroupElement, SymMatrix};

/// Newton solver settings.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SolverConfig {
    /// Max-norm tolerance on `𝒜(Q) - p`, relative to `max(1, ‖p‖_∞)`.
    pub feas_tol: f64,
    /// Stop once `λ²/2` falls below this, λ being the Newton decrement.
    pub decrement_tol: f64,
    pub max_iters: usize,
    /// Sufficient-decrease fraction of the line search.
    pub alpha: f64,
    /// Backtracking shrink factor.
    pub beta: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            feas_tol: 1e-9,
            decrement_tol: 1e-10,
            max_iters: 200,
            alpha: 0.01,
            beta: 0.5,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.feas_tol > 0.0 && self.decrement_tol > 0.0) {
            return Err(Error::InvalidConfig("tolerances must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(Error::InvalidConfig("alpha must lie in (0, 0.5)".into()));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::InvalidConfig("beta must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// A positive definite Gram matrix for a form, with solver diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct Certificate {
    pub q: SymMatrix,
    /// Smallest eigenvalue of `q`.
    pub psd_margin: f64,
    /// `‖gram_to_coeffs(q) - p‖_∞`.
    pub coeff_residual: f64,
    /// Newton decrement λ at termination.
    pub newton_decrement: f64,
    pub iterations: usize,
}

/// Per-iteration record of a solve, for convergence studies.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolveTrace {
    /// `log det Q` after each accepted step taken while primal feasible.
    pub feasible_log_det: Vec<f64>,
    /// Step sizes of all accepted steps.
    pub step_sizes: Vec<f64>,
}

/// Upper-triangle index bookkeeping for a Gram matrix of dimension `n`.
struct Layout {
    n: usize,
    pairs: Vec<(usize, usize)>,
}

impl Layout {
    fn new(n: usize) -> Self {
        let mut pairs = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in i..n {
                pairs.push((i, j));
            }
        }
        Self { n, pairs }
    }

    fn to_matrix(&self, x: &[f64]) -> Matrix {
        let mut m = Matrix::zeros(self.n, self.n);
        for (&(i, j), &v) in self.pairs.iter().zip(x) {
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
        m
    }

    /// Weight of entry `(i, j)` in its anti-diagonal sum.
    fn weight(&self, v: usize) -> f64 {
        let (i, j) = self.pairs[v];
        if i == j {
            1.0
        } else {
            2.0
        }
    }

    /// `A x` for the anti-diagonal constraint matrix.
    fn constraint(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; 2 * self.n - 1];
        for (v, &(i, j)) in self.pairs.iter().enumerate() {
            out[i + j] += self.weight(v) * x[v];
        }
        out
    }

    /// Gradient of `-log det Q` given `W = Q⁻¹`.
    fn gradient(&self, w: &Matrix) -> Vec<f64> {
        (0..self.pairs.len())
            .map(|v| {
                let (i, j) = self.pairs[v];
                -self.weight(v) * w[(i, j)]
            })
            .collect()
    }

    /// Hessian `H[u, v] = tr(W E_u W E_v)` of `-log det Q`.
    fn hessian(&self, w: &Matrix) -> Matrix {
        let m = self.pairs.len();
        let mut h = Matrix::zeros(m, m);
        for u in 0..m {
            let (i, j) = self.pairs[u];
            for v in u..m {
                let (k, l) = self.pairs[v];
                // tr(W e_a e_bᵀ W e_c e_dᵀ) = W_da W_bc summed over both orientations
                let mut s = w[(l, i)] * w[(j, k)];
                if k != l {
                    s += w[(k, i)] * w[(j, l)];
                }
                if i != j {
                    s += w[(l, j)] * w[(i, k)];
                    if k != l {
                        s += w[(k, j)] * w[(i, l)];
                    }
                }
                h[(u, v)] = s;
                h[(v, u)] = s;
            }
        }
        h
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, a| m.max(abs(*a)))
}

fn axpy(x: &[f64], t: f64, dx: &[f64]) -> Vec<f64> {
    x.iter().zip(dx).map(|(a, b)| a + t * b).collect()
}

/// Solves `[H Aᵀ; A 0] [dx; w] = [rhs_x; rhs_c]`.
fn solve_kkt(layout: &Layout, h: &Matrix, rhs_x: &[f64], rhs_c: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = layout.pairs.len();
    let p = 2 * layout.n - 1;
    let mut k = Matrix::zeros(m + p, m + p);
    for u in 0..m {
        for v in 0..m {
            k[(u, v)] = h[(u, v)];
        }
        let (i, j) = layout.pairs[u];
        let w = layout.weight(u);
        k[(u, m + i + j)] = w;
        k[(m + i + j, u)] = w;
    }
    let rhs: Vec<f64> = rhs_x.iter().chain(rhs_c).copied().collect();
    let sol = Lu::new(&k).ok_or(Error::Singular("KKT system"))?.solve(&rhs);
    Ok((sol[..m].to_vec(), sol[m..].to_vec()))
}

/// Moments `∫ cos^k sin^(2d-k)` of the uniform measure on the circle,
/// normalised to total mass one. Their Hankel matrix is positive definite.
fn circle_moments(n: usize) -> Vec<f64> {
    let deg = 2 * (n - 1);
    (0..=deg)
        .map(|k| {
            if k % 2 == 1 {
                return 0.0;
            }
            // (k-1)!! (deg-k-1)!! / deg!!
            let mut v = 1.0;
            let mut a = k;
            let mut b = deg - k;
            let mut c = deg;
            while c > 0 {
                if a > 1 {
                    v *= (a - 1) as f64;
                    a -= 2;
                }
                if b > 1 {
                    v *= (b - 1) as f64;
                    b -= 2;
                }
                v /= c as f64;
                c -= 2;
            }
            v
        })
        .collect()
}

fn hankel(n: usize, nu: &[f64]) -> Matrix {
    Matrix::from_fn(n, n, |i, j| nu[i + j])
}

/// Newton iterations on the dual `φ(ν) = -log det H(ν) + pᵀν` with
/// `H(ν)_ij = ν_{i+j}`, whose stationary points give `Q = H(ν)⁻¹` with
/// `𝒜(Q) = p`. Runs until `Q` matches `p` to `feas_tol` and returns its upper
/// triangle with the number of iterations used.
fn dual_phase(layout: &Layout, p: &[f64], cfg: &SolverConfig, trace: &mut SolveTrace) -> Result<(Vec<f64>, usize)> {
    let n = layout.n;
    let m = 2 * n - 1;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>();
    let tol = cfg.feas_tol * max_abs(p).max(1.0);
    let boundary_resid = 1e3 * tol;

    let moments = circle_moments(n);
    let mass = dot(&moments, p);
    if !(mass > 0.0) {
        return Err(Error::NotStrictlyCertifiable { iterations: 0, residual: max_abs(p) });
    }
    // the best multiple of the moment vector
    let mut nu: Vec<f64> = moments.iter().map(|v| v * n as f64 / mass).collect();

    for iter in 0..cfg.max_iters {
        let l = cholesky(&hankel(n, &nu)).ok_or(Error::Singular("dual Hankel matrix"))?;
        let w = cholesky_inverse(&l);
        let mut grad = p.to_vec();
        for i in 0..n {
            for j in 0..n {
                grad[i + j] -= w[(i, j)];
            }
        }
        let pri_err = max_abs(&grad);
        if pri_err <= tol {
            let x = layout.pairs.iter().map(|&(i, j)| w[(i, j)]).collect();
            return Ok((x, iter));
        }
        let lam_min = min_eigenvalue(&w);
        let lam_max = 1.0 / min_eigenvalue(&hankel(n, &nu));
        if lam_min < 1e-12 * lam_max && pri_err > boundary_resid {
            return Err(Error::NotStrictlyCertifiable { iterations: iter, residual: pri_err });
        }

        let mut hess = Matrix::zeros(m, m);
        for i in 0..n {
            for j in 0..n {
                for a in 0..n {
                    for b in 0..n {
                        hess[(i + j, a + b)] += w[(j, a)] * w[(b, i)];
                    }
                }
            }
        }
        let neg: Vec<f64> = grad.iter().map(|v| -v).collect();
        let dnu = Lu::new(&hess).ok_or(Error::Singular("dual Hessian"))?.solve(&neg);
        let slope = dot(&grad, &dnu);
        if -slope < 1e-24 && pri_err <= boundary_resid {
            let x = layout.pairs.iter().map(|&(i, j)| w[(i, j)]).collect();
            return Ok((x, iter));
        }
        let phi0 = -cholesky_logdet(&l) + dot(p, &nu);
        let mut t = 1.0;
        loop {
            if t < 1e-14 {
                if pri_err <= boundary_resid {
                    // rounding floor; the feasible phase corrects the rest
                    let x = layout.pairs.iter().map(|&(i, j)| w[(i, j)]).collect();
                    return Ok((x, iter));
                }
                return Err(Error::NotStrictlyCertifiable { iterations: iter, residual: pri_err });
            }
            let nut = axpy(&nu, t, &dnu);
            if let Some(lt) = cholesky(&hankel(n, &nut)) {
                // below ~1e-10 the decrease is lost in rounding of φ; full steps are safe there
                if -slope < 1e-10 || -cholesky_logdet(&lt) + dot(p, &nut) <= phi0 + cfg.alpha * t * slope {
                    nu = nut;
                    break;
                }
            }
            t *= cfg.beta;
        }
        trace.step_sizes.push(t);
        // tr(Q H(ν)) = pᵀν > 0 for every positive definite Gram matrix Q
        if !(dot(p, &nu) > 0.0) {
            return Err(Error::NotStrictlyCertifiable { iterations: iter + 1, residual: pri_err });
        }
    }
    let w = cholesky_inverse(&cholesky(&hankel(n, &nu)).ok_or(Error::Singular("dual Hankel matrix"))?);
    let x: Vec<f64> = layout.pairs.iter().map(|&(i, j)| w[(i, j)]).collect();
    let resid: Vec<f64> = layout.constraint(&x).iter().zip(p).map(|(a, b)| a - b).collect();
    Err(Error::MaxIterations { iterations: cfg.max_iters, residual: max_abs(&resid) })
}

const STALL_STEP: f64 = 1e-8;
const STALL_DECREMENT: f64 = 1e-6;

/// Returns the maximiser of `log det Q` subject to `x^[d]ᵀ Q x^[d] = p`.
pub fn analytic_center(p: &BinaryForm, cfg: &SolverConfig) -> Result<Certificate> {
    analytic_center_traced(p, cfg).map(|(c, _)| c)
}

/// [`analytic_center`] that also reports the accepted steps.
pub fn analytic_center_traced(p: &BinaryForm, cfg: &SolverConfig) -> Result<(Certificate, SolveTrace)> {
    cfg.validate()?;
    if p.degree() % 2 != 0 {
        return Err(Error::OddDegree(p.degree()));
    }
    if p.is_zero() {
        return Err(Error::ZeroPolynomial);
    }
    let n = p.degree() / 2 + 1;
    let layout = Layout::new(n);
    let target = p.coeffs();
    let mut trace = SolveTrace::default();

    let residual_of = |x: &[f64]| -> Vec<f64> {
        layout.constraint(x).iter().zip(target).map(|(a, b)| a - b).collect()
    };

    let (mut x, start) = dual_phase(&layout, target, cfg, &mut trace)?;
    let tol = cfg.feas_tol * max_abs(target).max(1.0);

    for iter in start..cfg.max_iters {
        let q = layout.to_matrix(&x);
        let l = cholesky(&q).ok_or(Error::NotStrictlyCertifiable {
            iterations: iter,
            residual: max_abs(&residual_of(&x)),
        })?;
        let w = cholesky_inverse(&l);
        let grad = layout.gradient(&w);
        let h = layout.hessian(&w);
        let r_pri = residual_of(&x);
        let pri_err = max_abs(&r_pri);

        // feasible Newton step
        let rhs_x: Vec<f64> = grad.iter().map(|v| -v).collect();
        let rhs_c: Vec<f64> = r_pri.iter().map(|v| -v).collect();
        let (dx, _) = solve_kkt(&layout, &h, &rhs_x, &rhs_c)?;
        let hdx = h.matvec(&dx);
        let lambda_sq = dx.iter().zip(&hdx).map(|(a, b)| a * b).sum::<f64>().max(0.0);
        let decrement = sqrt(lambda_sq);
        let f0 = -cholesky_logdet(&l);
        let slope: f64 = grad.iter().zip(&dx).map(|(a, b)| a * b).sum();
        let converged = lambda_sq / 2.0 <= cfg.decrement_tol;
        let mut t = 1.0;
        let accepted = loop {
            if t < 1e-14 {
                break None;
            }
            let xt = axpy(&x, t, &dx);
            if let Some(lt) = cholesky(&layout.to_matrix(&xt)) {
                let ft = -cholesky_logdet(&lt);
                // the final polishing step is taken whenever it stays in the cone
                if converged || ft <= f0 + cfg.alpha * t * slope {
                    break Some((xt, ft));
                }
            }
            t *= cfg.beta;
        };
        // a collapsed step with a tiny decrement is the rounding floor of an
        // ill-conditioned Q, not progress
        let stalled = !converged && t < STALL_STEP && lambda_sq < STALL_DECREMENT && pri_err <= tol;
        match accepted {
            Some(_) if stalled => {}
            Some((xt, ft)) => {
                if !converged || ft <= f0 {
                    x = xt;
                    trace.feasible_log_det.push(-ft);
                    trace.step_sizes.push(t);
                }
            }
            None if converged || stalled => {}
            None => {
                return Err(Error::NotStrictlyCertifiable { iterations: iter + 1, residual: pri_err });
            }
        }
        if converged || stalled {
            let q = SymMatrix::from_matrix(layout.to_matrix(&x))?;
            let coeff_residual = max_abs(&residual_of(&x));
            let psd_margin = min_eigenvalue(q.matrix());
            return Ok((
                Certificate {
                    q,
                    psd_margin,
                    coeff_residual,
                    newton_decrement: decrement,
                    iterations: iter + 1,
                },
                trace,
            ));
        }
    }
    Err(Error::MaxIterations {
        iterations: cfg.max_iters,
        residual: max_abs(&residual_of(&x)),
    })
}

/// Outcome of [`certify`].
#[derive(Clone, Debug, PartialEq)]
pub struct CertifyReport {
    /// `‖gram_to_coeffs(Q) - p‖_∞`.
    pub coeff_residual: f64,
    pub min_eigenvalue: f64,
    pub coeff_mismatch: bool,
    pub not_psd: bool,
}

impl CertifyReport {
    pub fn is_valid(&self) -> bool {
        !self.coeff_mismatch && !self.not_psd
    }
}

/// Checks `Q` against `p` from scratch: coefficient match and eigenvalues.
pub fn certify(p: &BinaryForm, q: &SymMatrix, tol: f64) -> Result<CertifyReport> {
    if p.degree() % 2 != 0 {
        return Err(Error::OddDegree(p.degree()));
    }
    let n = p.degree() / 2 + 1;
    if q.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, found: q.dim() });
    }
    let coeff_residual = gram_to_coeffs(q).max_abs_diff(p);
    let min_eig = min_eigenvalue(q.matrix());
    Ok(CertifyReport {
        coeff_residual,
        min_eigenvalue: min_eig,
        coeff_mismatch: !(coeff_residual <= tol),
        not_psd: !(min_eig >= -tol),
    })
}

/// `A^[d]ᵀ Q A^[d]`: the certificate of `v ↦ p(A v)` obtained from one of `p`.
pub fn transform_certificate(q: &SymMatrix, g: &GroupElement, d: usize) -> Result<SymMatrix> {
    if q.dim() != d + 1 {
        return Err(Error::DimensionMismatch { expected: d + 1, found: q.dim() });
    }
    let a = induced_matrix(g, d);
    Ok(q.congruence(a.matrix()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polycore::{act_on_form, gram_nullspace_basis};

    fn form(c: &[f64]) -> BinaryForm {
        BinaryForm::new(c.to_vec()).unwrap()
    }

    fn x8_plus_y8() -> BinaryForm {
        let mut c = vec![0.0; 9];
        c[0] = 1.0;
        c[8] = 1.0;
        form(&c)
    }

    #[test]
    fn unique_feasible_point() {
        let cert = analytic_center(&form(&[1.0, 0.0, 1.0]), &SolverConfig::default()).unwrap();
        assert!(cert.q.sub(&SymMatrix::identity(2)).frobenius_norm() < 1e-12);
    }

    #[test]
    fn closed_form_quartic() {
        let cert = analytic_center(&form(&[1.0, 0.0, 2.0, 0.0, 1.0]), &SolverConfig::default()).unwrap();
        let expect = SymMatrix::from_upper(3, |i, j| match (i, j) {
            (0, 0) | (2, 2) => 1.0,
            (1, 1) => 8.0 / 3.0,
            (0, 2) => -1.0 / 3.0,
            _ => 0.0,
        });
        assert!(cert.q.sub(&expect).matrix().max_abs() < 1e-9);
        assert!(certify(&form(&[1.0, 0.0, 2.0, 0.0, 1.0]), &expect, 1e-6).unwrap().is_valid());
    }

    #[test]
    fn octic_matches_reported_matrix() {
        let cert = analytic_center(&x8_plus_y8(), &SolverConfig::default()).unwrap();
        let q = &cert.q;
        let diag = [1.0, 3.126, 14.0 / 3.0, 3.126, 1.0];
        for (i, d) in diag.iter().enumerate() {
            assert!((q.get(i, i) - d).abs() < 2e-3, "diag {i}: {}", q.get(i, i));
        }
        assert!((q.get(0, 2) + 1.563).abs() < 2e-3);
        assert!((q.get(2, 4) + 1.563).abs() < 2e-3);
        assert!((q.get(0, 4) - 1.0 / 3.0).abs() < 2e-3);
        assert!((q.get(1, 3) + 8.0 / 3.0).abs() < 2e-3);
        for (i, j) in [(0, 1), (0, 3), (1, 2), (1, 4), (2, 3), (3, 4)] {
            assert!(q.get(i, j).abs() < 2e-3);
        }
        // first-order optimality over the affine slice
        let w = crate::linalg::Lu::new(q.matrix()).unwrap().inverse();
        for nmat in gram_nullspace_basis(4) {
            let tr: f64 = (0..5).flat_map(|i| (0..5).map(move |j| (i, j))).map(|(i, j)| w[(i, j)] * nmat.get(j, i)).sum();
            assert!(tr.abs() < 1e-6);
        }
    }

    #[test]
    fn boundary_forms_are_rejected() {
        // x²y² has real zeros; -x²-y² is negative
        let cfg = SolverConfig::default();
        for p in [
            form(&[0.0, 0.0, 1.0, 0.0, 0.0]),
            form(&[-1.0, 0.0, -1.0]),
            form(&[1.0, 0.0, -1.0]),
            form(&[0.0, 0.0, -0.1, 0.0, 1.0]),
        ] {
            match analytic_center(&p, &cfg) {
                Err(Error::NotStrictlyCertifiable { .. }) => {}
                other => panic!("expected boundary failure, got {other:?}"),
            }
        }
        assert_eq!(analytic_center(&BinaryForm::zero(4), &cfg), Err(Error::ZeroPolynomial));
        assert_eq!(analytic_center(&form(&[1.0, 0.0, 0.0, 1.0]), &cfg), Err(Error::OddDegree(3)));
    }

    #[test]
    fn near_boundary_form_converges() {
        let p = form(&[1e-4, 0.0, 3.0, 0.0, 1.0]);
        let cert = analytic_center(&p, &SolverConfig::default()).unwrap();
        assert!(cert.psd_margin > 0.0);
        assert!(cert.coeff_residual <= 1e-9);
        assert!(cert.iterations < 60, "{}", cert.iterations);
    }

    #[test]
    fn max_iterations_reported() {
        let cfg = SolverConfig { max_iters: 1, ..SolverConfig::default() };
        assert!(matches!(analytic_center(&x8_plus_y8(), &cfg), Err(Error::MaxIterations { .. })));
    }

    #[test]
    fn certify_examples() {
        let p = form(&[1.0, 0.0, 1.0]);
        assert!(certify(&p, &SymMatrix::identity(2), 1e-8).unwrap().is_valid());
        let bad = SymMatrix::from_upper(2, |i, j| if i != j { 0.0 } else if i == 0 { 1.0 } else { -1.0 });
        let r = certify(&p, &bad, 1e-8).unwrap();
        assert!(r.not_psd && r.coeff_mismatch);
        assert!(certify(&p, &SymMatrix::identity(3), 1e-8).is_err());
    }

    #[test]
    fn transform_identity_and_equivariance() {
        let p = x8_plus_y8();
        let cfg = SolverConfig::default();
        let cert = analytic_center(&p, &cfg).unwrap();
        let same = transform_certificate(&cert.q, &GroupElement::identity(), 4).unwrap();
        assert_eq!(same, cert.q);
        let g = GroupElement::from_svd(0.4, 1.5, -1.2);
        let moved = transform_certificate(&cert.q, &g, 4).unwrap();
        let pg = act_on_form(&g, &p);
        assert!(certify(&pg, &moved, 1e-8).unwrap().is_valid());
        let direct = analytic_center(&pg, &cfg).unwrap();
        let rel = direct.q.sub(&moved).frobenius_norm() / moved.frobenius_norm();
        assert!(rel < 1e-6, "rel {rel}");
    }

    #[test]
    fn objective_monotone_once_feasible() {
        let p = form(&[2.0, -1.0, 3.0, 0.5, 4.0, -0.3, 1.5]);
        let (_, trace) = analytic_center_traced(&p, &SolverConfig::default()).unwrap();
        for w in trace.feasible_log_det.windows(2) {
            assert!(w[1] >= w[0] - 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        let bad = SolverConfig { alpha: 0.7, ..SolverConfig::default() };
        assert!(bad.validate().is_err());
        let bad = SolverConfig { beta: 1.0, ..SolverConfig::default() };
        assert!(bad.validate().is_err());
        let bad = SolverConfig { feas_tol: 0.0, ..SolverConfig::default() };
        assert!(bad.validate().is_err());
    }
}
