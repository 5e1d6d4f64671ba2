//! Dataset generators: random positive forms, Delsarte spherical-code
//! polynomials, polynomial-minimization instances, and augmentation banks.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::path::Path;

use anyhow::{anyhow, bail, ensure, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde_json::{json, Value};
use sosnet_core::linalg::Matrix;
use sosnet_core::models::ModelInput;
use sosnet_core::polycore::{gram_to_coeffs, induced_matrix, BinaryForm, GroupElement, InhomogPoly, SymMatrix};
use sosnet_core::soscenter::{analytic_center, certify, SolverConfig};

use crate::formats::{matrix_rows, rows_to_sym, write_jsonl, InputJson, LabelJson, RecordJson};

/// Tolerance used when validating max-det labels.
pub const CERTIFY_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Maxdet,
    Min,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dist {
    Wigner,
    Delsarte,
}

impl Dist {
    pub fn tag(self) -> &'static str {
        match self {
            Dist::Wigner => "wigner",
            Dist::Delsarte => "delsarte",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Label {
    Gram(SymMatrix),
    Scalar(f64),
}

impl Label {
    /// Row-major entries, or the scalar.
    pub fn flat(&self) -> Vec<f64> {
        match self {
            Label::Gram(q) => q.matrix().as_slice().to_vec(),
            Label::Scalar(v) => vec![*v],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub input: ModelInput,
    pub label: Label,
    pub meta: Value,
}

impl Record {
    pub fn to_json(&self) -> RecordJson {
        RecordJson {
            input: InputJson::from(&self.input),
            label: match &self.label {
                Label::Gram(q) => LabelJson::Matrix(matrix_rows(q.matrix())),
                Label::Scalar(v) => LabelJson::Scalar(*v),
            },
            meta: self.meta.clone(),
        }
    }

    pub fn from_json(r: &RecordJson) -> Result<Self> {
        Ok(Self {
            input: r.input.to_input()?,
            label: match &r.label {
                LabelJson::Matrix(rows) => Label::Gram(rows_to_sym(rows)?),
                LabelJson::Scalar(v) => Label::Scalar(*v),
            },
            meta: r.meta.clone(),
        })
    }

    /// The record moved by `g`: input `v ↦ p(A v)`; Gram labels follow by
    /// congruence, scalar (invariant) labels are kept.
    pub fn transformed(&self, g: &GroupElement) -> Self {
        let input = self.input.act(g);
        let label = match &self.label {
            Label::Gram(q) => Label::Gram(q.congruence(induced_matrix(g, q.dim() - 1).matrix())),
            Label::Scalar(v) => Label::Scalar(*v),
        };
        Self { input, label, meta: self.meta.clone() }
    }
}

/// `gram_to_coeffs(AᵀA + 1e-8·I)` for a Gaussian `(d/2+1)×(d/2+1)` matrix `A`.
pub fn random_positive_form<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<BinaryForm> {
    ensure!(d % 2 == 0, "degree {d} must be even");
    let n = d / 2 + 1;
    let a = Matrix::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    Ok(gram_from_factor(&a))
}

fn gram_from_factor(a: &Matrix) -> BinaryForm {
    let n = a.rows();
    let q = a.transpose().matmul(a).add(&Matrix::identity(n).scale(1e-8));
    gram_to_coeffs(&SymMatrix::symmetrize(&q))
}

/// Gegenbauer polynomial `C_k^λ`, `λ = (dim-2)/2`, scaled by `(dim+2k-2)/(dim-2)`;
/// ascending coefficients in `x`.
pub fn gegenbauer(k: usize, dim: usize) -> Result<Vec<f64>> {
    ensure!(dim >= 3, "dimension {dim} must be at least 3");
    let lambda = (dim as f64 - 2.0) / 2.0;
    let mut prev = vec![1.0];
    let mut cur = vec![0.0, 2.0 * lambda];
    if k == 0 {
        return Ok(prev);
    }
    for j in 1..k {
        let jf = j as f64;
        let mut next = vec![0.0; j + 2];
        for (i, c) in cur.iter().enumerate() {
            next[i + 1] += 2.0 * (jf + lambda) * c;
        }
        for (i, c) in prev.iter().enumerate() {
            next[i] -= (jf + 2.0 * lambda - 1.0) * c;
        }
        for c in &mut next {
            *c /= jf + 1.0;
        }
        prev = cur;
        cur = next;
    }
    let scale = (k as f64 + lambda) / lambda;
    Ok(cur.into_iter().map(|c| c * scale).collect())
}

pub fn eval_poly(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// Spherical-code dimension and top Gegenbauer index used for Delsarte forms.
pub const DELSARTE_DIM: usize = 3;
const DELSARTE_GRID: usize = 2001;

#[derive(Clone, Debug, PartialEq)]
pub struct DelsarteInstance {
    pub alpha: f64,
    /// `g_0 = 1, g_1, …, g_3`.
    pub weights: Vec<f64>,
    /// `Σ g_k G_k(1)`.
    pub objective: f64,
    /// `p = Σ g_k G_k` in ascending powers of `x`.
    pub poly: Vec<f64>,
    pub form: BinaryForm,
}

/// Solves the degree-3 Delsarte LP on `[-1, α]` and turns its optimum into a
/// positive sextic form.
pub fn delsarte_instance(alpha: f64) -> Result<DelsarteInstance> {
    ensure!((-1.0..=1.0).contains(&alpha), "alpha {alpha} outside [-1, 1]");
    let alpha = alpha.max(-0.999);
    let basis: Vec<Vec<f64>> = (0..=DELSARTE_DIM).map(|k| gegenbauer(k, DELSARTE_DIM)).collect::<Result<_>>()?;
    let grid = |n: usize| -> Vec<f64> { (0..n).map(|i| -1.0 + (alpha + 1.0) * i as f64 / (n - 1) as f64).collect() };
    let solve = |points: &[f64]| -> Result<Vec<f64>> {
        // minimise Σ_{k≥1} g_k G_k(1) s.t. Σ_{k≥1} g_k G_k(x_i) ≤ −G_0(x_i), g ≥ 0
        let cost: Vec<f64> = basis[1..].iter().map(|b| eval_poly(b, 1.0)).collect();
        let rows: Vec<Vec<f64>> = points.iter().map(|&x| basis[1..].iter().map(|b| eval_poly(b, x)).collect()).collect();
        let rhs: Vec<f64> = points.iter().map(|&x| -eval_poly(&basis[0], x)).collect();
        dual_simplex(&cost, &rows, &rhs).ok_or_else(|| anyhow!("Delsarte LP infeasible for alpha {alpha}"))
    };
    let combine = |g: &[f64]| -> Vec<f64> {
        let mut p = vec![0.0; DELSARTE_DIM + 1];
        for (gk, b) in core::iter::once(&1.0).chain(g).zip(&basis) {
            for (i, c) in b.iter().enumerate() {
                p[i] += gk * c;
            }
        }
        p
    };
    let fine = grid(10 * (DELSARTE_GRID - 1) + 1);
    let worst = |p: &[f64]| fine.iter().map(|&x| eval_poly(p, x)).fold(f64::NEG_INFINITY, f64::max);
    let mut g = solve(&grid(DELSARTE_GRID))?;
    if worst(&combine(&g)) > 1e-6 {
        g = solve(&fine)?;
    }
    let poly = combine(&g);
    ensure!(worst(&poly) <= 1e-6, "Delsarte polynomial violates the constraint after refinement");
    let weights: Vec<f64> = core::iter::once(1.0).chain(g.iter().copied()).collect();
    let objective = eval_poly(&poly, 1.0);
    let form = delsarte_form(&poly, alpha)?;
    Ok(DelsarteInstance { alpha, weights, objective, poly, form })
}

/// `−(x²+y²)³ p((αy² − x²)/(x²+y²)) + 1e-4 (x²+y²)³` as a sextic.
fn delsarte_form(poly: &[f64], alpha: f64) -> Result<BinaryForm> {
    let r2 = BinaryForm::new(vec![1.0, 0.0, 1.0])?;
    let t = BinaryForm::new(vec![alpha, 0.0, -1.0])?;
    let pow = |f: &BinaryForm, e: usize| (0..e).fold(BinaryForm::new(vec![1.0]).unwrap(), |acc, _| acc.mul(f));
    let mut out = BinaryForm::zero(6);
    for (j, c) in poly.iter().enumerate() {
        out = out.add(&pow(&t, j).mul(&pow(&r2, 3 - j)).scale(-c));
    }
    Ok(out.add(&pow(&r2, 3).scale(1e-4)))
}

/// Dual simplex on `min cᵀg, A g ≤ b, g ≥ 0` with `c ≥ 0`, in condensed (Tucker)
/// form. Returns `None` when infeasible.
fn dual_simplex(cost: &[f64], rows: &[Vec<f64>], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = cost.len();
    let m = rows.len();
    // basic_i = t[i][n] + Σ_j t[i][j]·nonbasic_j ; objective row m
    let mut t: Vec<Vec<f64>> = rows
        .iter()
        .zip(rhs)
        .map(|(r, &b)| r.iter().map(|a| -a).chain(core::iter::once(b)).collect())
        .collect();
    t.push(cost.iter().copied().chain(core::iter::once(0.0)).collect());
    // labels: 0..n are structural, n.. are slacks
    let mut basic: Vec<usize> = (n..n + m).collect();
    let mut nonbasic: Vec<usize> = (0..n).collect();
    for _ in 0..10 * (m + n) {
        let (r, val) = (0..m).map(|i| (i, t[i][n])).min_by(|a, b| a.1.total_cmp(&b.1))?;
        if val >= -1e-12 {
            let mut g = vec![0.0; n];
            for (i, &b) in basic.iter().enumerate() {
                if b < n {
                    g[b] = t[i][n];
                }
            }
            return Some(g);
        }
        let scale = t[r][..n].iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let j = (0..n)
            .filter(|&j| t[r][j] > 1e-12 * scale)
            .min_by(|&a, &b| (t[m][a] / t[r][a]).total_cmp(&(t[m][b] / t[r][b])))?;
        let piv = t[r][j];
        let mut new_row: Vec<f64> = t[r].iter().map(|v| -v / piv).collect();
        new_row[j] = 1.0 / piv;
        for (i, row) in t.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[j];
            if f == 0.0 {
                continue;
            }
            for k in 0..=n {
                row[k] = if k == j { f * new_row[j] } else { row[k] + f * new_row[k] };
            }
        }
        t[r] = new_row;
        core::mem::swap(&mut basic[r], &mut nonbasic[j]);
    }
    None
}

/// Dense bivariate polynomial, `c[i][j]` on `x^i y^j`.
#[derive(Clone, Debug)]
struct Bivariate(Vec<Vec<f64>>);

impl Bivariate {
    fn constant(c: f64) -> Self {
        Self(vec![vec![c]])
    }

    /// `(x − a)² + (y − b)²`.
    fn circle(a: f64, b: f64) -> Self {
        Self(vec![vec![a * a + b * b, -2.0 * b, 1.0], vec![-2.0 * a, 0.0, 0.0], vec![1.0, 0.0, 0.0]])
    }

    fn degree(&self) -> usize {
        self.0.len() - 1
    }

    fn mul(&self, o: &Self) -> Self {
        let d = self.degree() + o.degree();
        let mut c = vec![vec![0.0; d + 1]; d + 1];
        for (i, row) in self.0.iter().enumerate() {
            for (j, &a) in row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (k, orow) in o.0.iter().enumerate() {
                    for (l, &b) in orow.iter().enumerate() {
                        c[i + k][j + l] += a * b;
                    }
                }
            }
        }
        Self(c)
    }

    fn add(&self, o: &Self) -> Self {
        let d = self.degree().max(o.degree());
        let mut c = vec![vec![0.0; d + 1]; d + 1];
        for p in [self, o] {
            for (i, row) in p.0.iter().enumerate() {
                for (j, &a) in row.iter().enumerate() {
                    c[i][j] += a;
                }
            }
        }
        Self(c)
    }

    fn to_inhomog(&self) -> Result<InhomogPoly> {
        let d = self.degree();
        let comps = (0..=d)
            .map(|k| BinaryForm::new((0..=k).map(|i| self.0.get(i).and_then(|r| r.get(k - i)).copied().unwrap_or(0.0)).collect()))
            .collect::<sosnet_core::Result<Vec<_>>>()?;
        Ok(InhomogPoly::new(comps)?)
    }
}

/// All multisets of size `size` drawn from `0..n`, as non-decreasing index lists.
fn multisets(n: usize, size: usize) -> Vec<Vec<usize>> {
    if size == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for rest in multisets(n, size - 1) {
        let start = rest.last().copied().unwrap_or(0);
        for i in start..n {
            let mut v = rest.clone();
            v.push(i);
            out.push(v);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinimizationInstance {
    pub poly: InhomogPoly,
    pub minimum: f64,
    pub argmin: (f64, f64),
}

/// Polynomial of degree `d` with known global minimum `m` at a known point.
pub fn minimization_instance<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<MinimizationInstance> {
    ensure!(d % 2 == 0 && d >= 4, "degree {d} must be even and at least 4");
    let m: f64 = rng.sample(StandardNormal);
    let x0 = rng.sample::<f64, _>(StandardNormal).abs();
    let y0 = rng.sample::<f64, _>(StandardNormal).abs();
    let a: f64 = rng.gen_range(0.0..1.0);
    let b: f64 = rng.gen_range(0.0..1.0);
    let (x1, y1) = ((2.0 * a - 1.0) * x0, (2.0 * b - 1.0) * y0);
    let anchor = Bivariate::circle(x1, y1);
    let quads = [
        Bivariate::circle(-x0, -y0),
        Bivariate::circle(-x0, y0),
        Bivariate::circle(x0, -y0),
        Bivariate::circle(x0, y0),
        anchor.clone(),
    ];
    let mut p = Bivariate::constant(0.0);
    for combo in multisets(quads.len(), (d - 2) / 2) {
        let prod = combo.iter().fold(Bivariate::constant(1.0), |acc, &i| acc.mul(&quads[i]));
        p = p.add(&prod);
    }
    let full = p.mul(&anchor).add(&Bivariate::constant(m));
    Ok(MinimizationInstance { poly: full.to_inhomog()?, minimum: m, argmin: (x1, y1) })
}

/// Presampled group elements with condition numbers in a range.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentationBank {
    pub elements: Vec<GroupElement>,
    /// Induced matrices per requested degree, aligned with `elements`.
    pub induced: BTreeMap<usize, Vec<Matrix>>,
    pub kappa_range: (f64, f64),
}

impl AugmentationBank {
    /// `A = R(θ₁)·diag(s, 1/s)·R(θ₂)` with `κ = s²` log-uniform in the range.
    pub fn build(count: usize, kappa_min: f64, kappa_max: f64, degrees: &[usize], seed: u64) -> Result<Self> {
        ensure!(1.0 <= kappa_min && kappa_min <= kappa_max, "need 1 ≤ κ_min ≤ κ_max");
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let (lo, hi) = (kappa_min.ln(), kappa_max.ln());
        let elements: Vec<GroupElement> = (0..count)
            .map(|_| {
                let t1 = rng.gen_range(0.0..TAU);
                let t2 = rng.gen_range(0.0..TAU);
                let u: f64 = rng.gen_range(0.0..=1.0);
                let kappa = (lo + u * (hi - lo)).exp();
                GroupElement::from_svd(t1, kappa.sqrt(), t2)
            })
            .collect();
        let induced = degrees
            .iter()
            .map(|&d| (d, elements.iter().map(|g| induced_matrix(g, d).into_matrix()).collect()))
            .collect();
        Ok(Self { elements, induced, kappa_range: (kappa_min, kappa_max) })
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DatasetSpec {
    pub task: Task,
    pub dist: Dist,
    pub degree: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<Record>,
    pub val: Vec<Record>,
    pub test: Vec<Record>,
}

/// Independent stream for record `index` of a run seeded with `seed`.
pub fn record_rng(seed: u64, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// One record; max-det labels are solved and certified before returning.
pub fn make_record(spec: &DatasetSpec, index: u64) -> Result<Record> {
    let mut rng = record_rng(spec.seed, index);
    let mut meta = json!({ "seed": spec.seed, "index": index });
    match spec.task {
        Task::Maxdet => {
            let p = match spec.dist {
                Dist::Wigner => random_positive_form(spec.degree, &mut rng)?,
                Dist::Delsarte => {
                    ensure!(spec.degree == 6, "Delsarte forms have degree 6");
                    // α past the feasibility limit of the cubic LP is redrawn
                    let inst = loop {
                        let alpha: f64 = rng.gen_range(-1.0..=1.0);
                        if let Ok(inst) = delsarte_instance(alpha.clamp(-0.999, 1.0)) {
                            break inst;
                        }
                    };
                    meta["alpha"] = json!(inst.alpha);
                    inst.form
                }
            };
            meta["dist"] = json!(spec.dist.tag());
            let cert = analytic_center(&p, &SolverConfig::default())?;
            let report = certify(&p, &cert.q, CERTIFY_TOL)?;
            if !report.is_valid() {
                bail!("label fails certify (residual {:e}, λ_min {:e})", report.coeff_residual, report.min_eigenvalue);
            }
            Ok(Record { input: ModelInput::Form(p), label: Label::Gram(cert.q), meta })
        }
        Task::Min => {
            let inst = minimization_instance(spec.degree, &mut rng)?;
            meta["dist"] = json!("min");
            meta["argmin"] = json!([inst.argmin.0, inst.argmin.1]);
            Ok(Record { input: ModelInput::Inhomog(inst.poly), label: Label::Scalar(inst.minimum), meta })
        }
    }
}

/// All three splits in memory; records are generated in parallel with
/// per-record streams, so the result does not depend on scheduling.
pub fn generate_records(spec: &DatasetSpec) -> Result<Dataset> {
    let total = spec.n_train + spec.n_val + spec.n_test;
    let mut all: Vec<Record> = (0..total as u64)
        .into_par_iter()
        .map(|i| make_record(spec, i).with_context(|| format!("record {i}")))
        .collect::<Result<_>>()?;
    let test = all.split_off(spec.n_train + spec.n_val);
    let val = all.split_off(spec.n_train);
    Ok(Dataset { train: all, val, test })
}

/// Writes `train.jsonl`, `val.jsonl`, `test.jsonl` and `spec.json` under `out`.
pub fn generate_dataset(spec: &DatasetSpec, out: &Path) -> Result<Dataset> {
    let data = generate_records(spec)?;
    std::fs::create_dir_all(out)?;
    for (name, split) in [("train", &data.train), ("val", &data.val), ("test", &data.test)] {
        let rows: Vec<RecordJson> = split.iter().map(Record::to_json).collect();
        write_jsonl(&out.join(format!("{name}.jsonl")), &rows)?;
    }
    crate::formats::write_json(&out.join("spec.json"), spec)?;
    Ok(data)
}

pub fn load_split(path: &Path) -> Result<Vec<Record>> {
    crate::formats::read_jsonl(path)?.iter().map(Record::from_json).collect()
}
