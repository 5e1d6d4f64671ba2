//! Training, evaluation sweeps, timing and the numeric property studies.

use std::path::Path;
use std::time::Instant;

use anyhow::{bail, ensure, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use sosnet_core::linalg::{sym_eigen, Matrix};
use sosnet_core::models::{
    Head, MlpConfig, Model, ModelConfig, ModelInput, Pairing, Prediction, Sl2NetConfig, So2NetConfig,
};
use sosnet_core::nn::{nmse, nmse_loss, AdamState, Grads, Params, Tape};
use sosnet_core::polycore::{act_on_form, condition_number, induced_matrix, BinaryForm, GroupElement, SymMatrix};
use sosnet_core::soscenter::{analytic_center, certify, SolverConfig};

use crate::datagen::{AugmentationBank, Label, Record, Task, CERTIFY_TOL};

/// Anything that maps an input polynomial to a prediction.
pub trait Predictor: Sync {
    fn name(&self) -> String;
    fn predict(&self, x: &ModelInput) -> Result<Prediction>;
}

impl Predictor for Model {
    fn name(&self) -> String {
        self.config().kind().to_string()
    }

    fn predict(&self, x: &ModelInput) -> Result<Prediction> {
        Ok(Model::predict(self, x)?)
    }
}

/// The Newton solver used as a model.
#[derive(Clone, Debug, Default)]
pub struct SolverOracle {
    pub config: SolverConfig,
}

impl Predictor for SolverOracle {
    fn name(&self) -> String {
        "solver".into()
    }

    fn predict(&self, x: &ModelInput) -> Result<Prediction> {
        match x {
            ModelInput::Form(p) => Ok(Prediction::Gram(analytic_center(p, &self.config)?.q)),
            ModelInput::Inhomog(_) => bail!("the solver only handles binary forms"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mlp,
    Sl2net,
    So2net,
}

/// Output head for a task on inputs of the given degree.
pub fn head_for(task: Task, degree: usize) -> Head {
    match task {
        Task::Maxdet => Head::Gram { half_degree: degree / 2 },
        Task::Min => Head::Scalar { degree },
    }
}

/// Desk-scale configuration of each family.
pub fn default_config(kind: ModelKind, head: Head) -> ModelConfig {
    let top = match head {
        Head::Gram { half_degree } => 2 * half_degree,
        Head::Scalar { degree } => degree,
    };
    match kind {
        ModelKind::Mlp => ModelConfig::Mlp(MlpConfig { hidden: vec![128, 128], head }),
        ModelKind::Sl2net => ModelConfig::Sl2net(Sl2NetConfig {
            layers: 2,
            channels: 8,
            max_degree: top + 2,
            mlp_hidden: vec![32],
            pairing: Pairing::Diagonal,
            head,
        }),
        ModelKind::So2net => ModelConfig::So2net(So2NetConfig {
            layers: 2,
            channels: 8,
            max_frequency: top,
            mlp_hidden: vec![32],
            pairing: Pairing::Diagonal,
            head,
        }),
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub augment: Option<AugmentationBank>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 200, batch_size: 32, lr: AdamState::DEFAULT_LR, seed: 0, augment: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_nmse: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Model with the parameters of the best validation epoch.
    pub model: Model,
    pub best_epoch: usize,
    pub curve: Vec<EpochStats>,
}

/// Loss and parameter gradient of one record.
pub fn record_gradient(model: &Model, params: &Params, record: &Record) -> Result<(f64, Grads)> {
    let mut tape = Tape::new();
    let y = model.forward(&mut tape, params, &record.input)?;
    let loss = nmse_loss(&mut tape, y, &record.label.flat())?;
    Ok((tape.scalar(loss), tape.backward(loss, params)))
}

/// Mean loss and gradient over a batch, reduced in batch order.
pub fn batch_gradient(model: &Model, params: &Params, batch: &[Record]) -> Result<(f64, Grads)> {
    let parts: Vec<(f64, Grads)> =
        batch.par_iter().map(|r| record_gradient(model, params, r)).collect::<Result<_>>()?;
    let mut total = Grads::zeros_like(params);
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        total.add_scaled(g, 1.0);
    }
    let n = batch.len().max(1) as f64;
    total.scale(1.0 / n);
    Ok((loss / n, total))
}

/// Adam on shuffled minibatches, optionally augmenting every sample with a
/// bank element; keeps the parameters of the best validation epoch.
pub fn train(mut model: Model, train: &[Record], val: &[Record], cfg: &TrainConfig) -> Result<TrainOutcome> {
    ensure!(!train.is_empty(), "empty training set");
    ensure!(cfg.batch_size > 0, "batch size must be positive");
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::with_lr(model.params(), cfg.lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curve = Vec::new();
    let mut best: Option<(f64, usize, Params)> = None;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<Record> = chunk
                .iter()
                .map(|&i| match &cfg.augment {
                    Some(bank) if !bank.is_empty() => train[i].transformed(&bank.elements[rng.gen_range(0..bank.len())]),
                    _ => train[i].clone(),
                })
                .collect();
            let (loss, grads) = batch_gradient(&model, model.params(), &batch)?;
            if !loss.is_finite() || !grads.max_abs().is_finite() {
                bail!(
                    "non-finite loss {loss} at epoch {epoch}, batch {b} (records {:?})",
                    batch.iter().map(|r| r.meta.get("index").cloned()).collect::<Vec<_>>()
                );
            }
            epoch_loss += loss * chunk.len() as f64;
            adam.step(model.params_mut(), &grads);
        }
        let val_nmse = if val.is_empty() { f64::NAN } else { mean_nmse(&model, val)? };
        let score = if val.is_empty() { epoch_loss } else { val_nmse };
        if best.as_ref().is_none_or(|(s, _, _)| score < *s) {
            best = Some((score, epoch, model.params().clone()));
        }
        curve.push(EpochStats { epoch, train_loss: epoch_loss / train.len() as f64, val_nmse });
    }
    let best_epoch = match best {
        Some((_, e, params)) => {
            *model.params_mut() = params;
            e
        }
        None => 0,
    };
    Ok(TrainOutcome { model, best_epoch, curve })
}

/// Mean normalised squared error of a predictor on records.
pub fn mean_nmse(pred: &dyn Predictor, records: &[Record]) -> Result<f64> {
    let errs: Vec<f64> = records
        .par_iter()
        .map(|r| Ok(nmse(&pred.predict(&r.input)?.flat(), &r.label.flat())))
        .collect::<Result<_>>()?;
    Ok(errs.iter().sum::<f64>() / errs.len().max(1) as f64)
}

/// Mean of `‖A^[d]ᵀ N(p) A^[d] − N(A^[2d]ᵀ p)‖ / ‖A^[d]ᵀ y A^[d]‖` over records.
pub fn equivariance_error(pred: &dyn Predictor, records: &[Record], g: &GroupElement) -> Result<f64> {
    let errs: Vec<f64> = records.par_iter().map(|r| record_equivariance_error(pred, r, g)).collect::<Result<_>>()?;
    Ok(errs.iter().sum::<f64>() / errs.len().max(1) as f64)
}

fn record_equivariance_error(pred: &dyn Predictor, r: &Record, g: &GroupElement) -> Result<f64> {
    let (ModelInput::Form(p), Label::Gram(y)) = (&r.input, &r.label) else {
        bail!("equivariance error needs gram-task records");
    };
    let half = p.degree() / 2;
    let a = induced_matrix(g, half);
    let Prediction::Gram(here) = pred.predict(&r.input)? else { bail!("predictor has no gram head") };
    let Prediction::Gram(there) = pred.predict(&ModelInput::Form(act_on_form(g, p)))? else {
        bail!("predictor has no gram head")
    };
    let moved = here.congruence(a.matrix());
    Ok(there.sub(&moved).frobenius_norm() / y.congruence(a.matrix()).frobenius_norm())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub level: f64,
    /// Mean `κ(A^[d])` of the transforms applied at this level.
    pub induced_kappa: f64,
    pub model: String,
    pub nmse: f64,
    /// Gram task only.
    pub equivariance_error: Option<f64>,
}

/// Condition-number levels of `A` used by [`ood_sweep`].
pub const SWEEP_LEVELS: [f64; 6] = [1.0, 2.0, 5.0, 10.0, 30.0, 100.0];

/// Induced degree on the sweep axis: the Gram half-degree, or the input degree.
fn axis_degree(r: &Record) -> usize {
    match (&r.input, &r.label) {
        (ModelInput::Form(p), Label::Gram(_)) => p.degree() / 2,
        (x, _) => x.components().last().map(|(k, _)| *k).unwrap_or(0),
    }
}

/// Every test record moved by a fresh element of condition number `level`,
/// then scored by every predictor. Level 1 is the untransformed set.
pub fn ood_sweep(preds: &[&dyn Predictor], test: &[Record], levels: &[f64], bank_seed: u64) -> Result<Vec<SweepRow>> {
    ensure!(!test.is_empty(), "empty test set");
    let d = axis_degree(&test[0]);
    let cells: Vec<(usize, usize)> = (0..levels.len()).flat_map(|l| (0..preds.len()).map(move |m| (l, m))).collect();
    let results: Vec<SweepRow> = cells
        .par_iter()
        .map(|&(l, m)| {
            let level = levels[l];
            let elements: Vec<GroupElement> = if level == 1.0 {
                vec![GroupElement::identity(); test.len()]
            } else {
                AugmentationBank::build(test.len(), level, level, &[], bank_seed.wrapping_add(l as u64))?.elements
            };
            let kappas: Vec<f64> =
                elements.iter().map(|g| condition_number(induced_matrix(g, d).matrix())).collect::<Result<_, _>>()?;
            let moved: Vec<Record> = test.iter().zip(&elements).map(|(r, g)| r.transformed(g)).collect();
            let nmse = mean_nmse(preds[m], &moved)?;
            let eq = if matches!(test[0].label, Label::Gram(_)) {
                let errs: Vec<f64> = test
                    .iter()
                    .zip(&elements)
                    .map(|(r, g)| record_equivariance_error(preds[m], r, g))
                    .collect::<Result<_>>()?;
                Some(errs.iter().sum::<f64>() / errs.len() as f64)
            } else {
                None
            };
            Ok(SweepRow {
                level,
                induced_kappa: kappas.iter().sum::<f64>() / kappas.len() as f64,
                model: preds[m].name(),
                nmse,
                equivariance_error: eq,
            })
        })
        .collect::<Result<_>>()?;
    Ok(results)
}

/// Sweep `nmse` of one model across levels, in level order.
pub fn sweep_column(rows: &[SweepRow], model: &str) -> Vec<f64> {
    rows.iter().filter(|r| r.model == model).map(|r| r.nmse).collect()
}

/// Number of strict decreases in a sequence.
pub fn inversions(values: &[f64]) -> usize {
    values.windows(2).filter(|w| w[1] < w[0]).count()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimingReport {
    pub model_ms: f64,
    pub solver_ms: f64,
    pub speedup: f64,
    pub model_nmse: f64,
    pub instances: usize,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Per-instance wall-clock medians of the model and the solver, both run
/// sequentially on the calling thread.
pub fn timing_comparison(model: &Model, records: &[Record], repeats: usize, solver: &SolverConfig) -> Result<TimingReport> {
    ensure!(!records.is_empty() && repeats > 0, "need records and repeats");
    let n = records.len() as f64;
    let mut model_t = Vec::new();
    let mut solver_t = Vec::new();
    let mut sink = 0.0;
    for _ in 0..repeats {
        let start = Instant::now();
        for r in records {
            sink += model.predict(&r.input)?.flat()[0];
        }
        model_t.push(start.elapsed().as_secs_f64() * 1e3 / n);
        let start = Instant::now();
        for r in records {
            let ModelInput::Form(p) = &r.input else { bail!("timing needs gram-task records") };
            sink += analytic_center(p, solver)?.q.get(0, 0);
        }
        solver_t.push(start.elapsed().as_secs_f64() * 1e3 / n);
    }
    std::hint::black_box(sink);
    let errs: Vec<f64> =
        records.iter().map(|r| Ok(nmse(&model.predict(&r.input)?.flat(), &r.label.flat()))).collect::<Result<_>>()?;
    let (model_ms, solver_ms) = (median(model_t), median(solver_t));
    Ok(TimingReport {
        model_ms,
        solver_ms,
        speedup: solver_ms / model_ms,
        model_nmse: errs.iter().sum::<f64>() / n,
        instances: records.len(),
    })
}

/// Gram entries of `x⁸ + y⁸` allowed to be nonzero for any balanced-mod-8 trunk.
pub const OCTIC_SUPPORT: [(usize, usize); 7] = [(0, 0), (0, 4), (4, 0), (4, 4), (1, 3), (3, 1), (2, 2)];

/// Largest magnitude outside [`OCTIC_SUPPORT`].
pub fn forced_zero_max(q: &SymMatrix) -> f64 {
    let mut m: f64 = 0.0;
    for i in 0..q.dim() {
        for j in 0..q.dim() {
            if !OCTIC_SUPPORT.contains(&(i, j)) {
                m = m.max(q.get(i, j).abs());
            }
        }
    }
    m
}

#[derive(Clone, Debug, PartialEq)]
pub struct HardExampleRow {
    pub step: usize,
    pub model: String,
    pub nmse: f64,
    pub forced_zero_max: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HardExampleReport {
    pub rows: Vec<HardExampleRow>,
    /// `(model, final nmse, largest forced-entry magnitude seen)`.
    pub summary: Vec<(String, f64, f64)>,
}

/// The single record `x⁸ + y⁸` with its analytic center.
pub fn octic_record() -> Result<Record> {
    let mut c = vec![0.0; 9];
    c[0] = 1.0;
    c[8] = 1.0;
    let p = BinaryForm::new(c)?;
    let q = analytic_center(&p, &SolverConfig::default())?.q;
    Ok(Record { input: ModelInput::Form(p), label: Label::Gram(q), meta: serde_json::json!({ "dist": "octic" }) })
}

/// Adam step size for the single-record fits.
pub const HARD_EXAMPLE_LR: f64 = 3e-4;

/// Fits each family to `x⁸ + y⁸` alone, logging NMSE and the forced entries.
pub fn hard_example(steps: usize, seed: u64, lr: f64) -> Result<HardExampleReport> {
    let record = octic_record()?;
    let head = Head::Gram { half_degree: 4 };
    let kinds = [ModelKind::Sl2net, ModelKind::So2net, ModelKind::Mlp];
    let runs: Vec<(Vec<HardExampleRow>, (String, f64, f64))> = kinds
        .par_iter()
        .map(|&kind| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let mut model = Model::new(&default_config(kind, head), &mut rng)?;
            let name = model.config().kind().to_string();
            let mut adam = AdamState::with_lr(model.params(), lr);
            let mut rows = Vec::with_capacity(steps + 1);
            let mut worst: f64 = 0.0;
            let mut last = f64::NAN;
            for step in 0..=steps {
                let Prediction::Gram(q) = model.predict(&record.input)? else { unreachable!() };
                let forced = forced_zero_max(&q);
                worst = worst.max(forced);
                last = nmse(q.matrix().as_slice(), &record.label.flat());
                rows.push(HardExampleRow { step, model: name.clone(), nmse: last, forced_zero_max: forced });
                if step < steps {
                    let (_, grads) = record_gradient(&model, model.params(), &record)?;
                    adam.step(model.params_mut(), &grads);
                }
            }
            Ok((rows, (name, last, worst)))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for (r, s) in runs {
        rows.extend(r);
        summary.push(s);
    }
    Ok(HardExampleReport { rows, summary })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CondStudy {
    /// `(sample id, d, log κ(A^[d]), log κ(A))`; sample 0 is `diag(a, 1/a)`.
    pub rows: Vec<(usize, usize, f64, f64)>,
    /// R² of the least-squares line `log κ(A^[d])` vs `d` per random sample.
    pub r_squared: Vec<f64>,
    /// Largest relative error of `κ(diag(a,1/a)^[d]) = a^{2d}`.
    pub diagonal_rel_err: f64,
}

pub fn r_squared(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if syy == 0.0 {
        return 1.0;
    }
    sxy * sxy / (sxx * syy)
}

/// Growth of `κ(A^[d])` with `d` for `diag(a, 1/a)` and random elements.
pub fn induced_cond_study(samples: usize, max_degree: usize, a: f64, seed: u64) -> Result<CondStudy> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut elements = vec![GroupElement::stretch(a)];
    for _ in 0..samples {
        let kappa: f64 = rng.gen_range(1.5..5.0);
        elements.push(GroupElement::from_svd(rng.gen_range(0.0..std::f64::consts::TAU), kappa.sqrt(), rng.gen_range(0.0..std::f64::consts::TAU)));
    }
    let mut rows = Vec::new();
    let mut r2 = Vec::new();
    let mut diag_err: f64 = 0.0;
    for (id, g) in elements.iter().enumerate() {
        let base = condition_number(&g.to_matrix())?;
        let mut logs = Vec::new();
        for d in 1..=max_degree {
            let k = condition_number(induced_matrix(g, d).matrix())?;
            if id == 0 {
                let expect = a.powi(2 * d as i32);
                diag_err = diag_err.max((k - expect).abs() / expect);
            }
            logs.push(k.ln());
            rows.push((id, d, k.ln(), base.ln()));
        }
        if id > 0 {
            let ds: Vec<f64> = (1..=max_degree).map(|d| d as f64).collect();
            r2.push(r_squared(&ds, &logs));
        }
    }
    Ok(CondStudy { rows, r_squared: r2, diagonal_rel_err: diag_err })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistortionReport {
    pub trials: usize,
    pub violations: usize,
    /// Largest `|ε' − ε|` for elements whose induced matrix is orthogonal.
    pub isometry_gap: f64,
    /// `(ε'/ε) / κ²` in the aligned worst case; 1 means the bound is attained.
    pub tight_ratio: f64,
}

/// Relative error of a Gram prediction before and after `A^[d]ᵀ · A^[d]`.
fn transformed_errors(pred: &Matrix, label: &Matrix, a: &Matrix) -> (f64, f64) {
    let e = pred.sub(label);
    let eps = e.frobenius_norm() / label.frobenius_norm();
    let eps_t = e.congruence(a).frobenius_norm() / label.congruence(a).frobenius_norm();
    (eps, eps_t)
}

/// Checks `ε/κ² ≤ ε' ≤ κ²·ε` with `κ = κ(A^[d])` on random labels,
/// perturbations and elements with `κ(A) ≤ kappa_max`.
pub fn loss_distortion_check(trials: usize, kappa_max: f64, half_degree: usize, seed: u64) -> Result<DistortionReport> {
    let n = half_degree + 1;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut violations = 0;
    for _ in 0..trials {
        let b = Matrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let label = b.transpose().matmul(&b).add(&Matrix::identity(n).scale(0.1));
        let e = Matrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let scale = 10f64.powf(rng.gen_range(-3.0..0.0));
        let pred = label.add(&e.add(&e.transpose()).scale(scale));
        let kappa: f64 = rng.gen_range(1.0..kappa_max);
        let g = GroupElement::from_svd(rng.gen_range(0.0..6.3), kappa.sqrt(), rng.gen_range(0.0..6.3));
        let a = induced_matrix(&g, half_degree).into_matrix();
        let k = condition_number(&a)?;
        let (eps, eps_t) = transformed_errors(&pred, &label, &a);
        let slack = 1e-12 * eps;
        if !(eps / (k * k) - slack <= eps_t && eps_t <= k * k * eps + slack) {
            violations += 1;
        }
    }
    // quarter turns and reflections permute monomials up to sign
    let mut gap: f64 = 0.0;
    for g in [GroupElement::identity(), GroupElement::rotation(std::f64::consts::FRAC_PI_2), GroupElement::rotation(std::f64::consts::PI)] {
        let a = induced_matrix(&g, half_degree).into_matrix();
        let b = Matrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let label = b.transpose().matmul(&b);
        let pred = label.add(&Matrix::from_fn(n, n, |i, j| 0.01 * ((i + 2 * j) as f64).sin()));
        let (eps, eps_t) = transformed_errors(&pred, &label, &a);
        gap = gap.max((eps - eps_t).abs());
    }
    // label on the most shrunk monomial, error on the most stretched one
    let g = GroupElement::stretch(1.7);
    let a = induced_matrix(&g, half_degree).into_matrix();
    let k = condition_number(&a)?;
    let mut label = Matrix::zeros(n, n);
    label[(0, 0)] = 1.0;
    let mut pred = label.clone();
    pred[(n - 1, n - 1)] = 1e-3;
    let (eps, eps_t) = transformed_errors(&pred, &label, &a);
    Ok(DistortionReport { trials, violations, isometry_gap: gap, tight_ratio: eps_t / eps / (k * k) })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PropA2Report {
    /// Min over θ of the distance between the normalised stretched form and the
    /// normalised rotated form.
    pub min_distance: f64,
    /// Same search when the transform is itself a rotation.
    pub rotation_control: f64,
    /// Minimum on a grid twice as coarse.
    pub coarse_min_distance: f64,
}

fn unit(p: &BinaryForm) -> BinaryForm {
    p.scale(1.0 / p.norm())
}

fn min_rotation_distance(target: &BinaryForm, p: &BinaryForm, grid: usize) -> f64 {
    (0..grid)
        .map(|i| {
            let th = std::f64::consts::TAU * i as f64 / grid as f64;
            let r = unit(&act_on_form(&GroupElement::rotation(th), p));
            target.coeffs().iter().zip(r.coeffs()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

/// No rotation reproduces the normalised image of `x⁴ + y⁴` under `diag(2, 1/2)`.
pub fn prop_a2_negative_check(grid: usize) -> Result<PropA2Report> {
    let p = BinaryForm::new(vec![1.0, 0.0, 0.0, 0.0, 1.0])?;
    let stretched = unit(&act_on_form(&GroupElement::stretch(2.0), &p));
    // the control angle lies on the grid
    let control_grid = 7 * grid;
    let on_grid = unit(&act_on_form(&GroupElement::rotation(std::f64::consts::TAU * 3.0 / control_grid as f64), &p));
    Ok(PropA2Report {
        min_distance: min_rotation_distance(&stretched, &p, grid),
        rotation_control: min_rotation_distance(&on_grid, &p, control_grid),
        coarse_min_distance: min_rotation_distance(&stretched, &p, grid / 2),
    })
}

/// Fraction of predictions whose PSD projection (eigenvalue clipping)
/// certifies at `1e-6`, plus the largest raw coefficient residual.
pub fn certificate_yield(pred: &dyn Predictor, records: &[Record]) -> Result<(f64, f64)> {
    let outcomes: Vec<(bool, f64)> = records
        .par_iter()
        .map(|r| {
            let ModelInput::Form(p) = &r.input else { bail!("certificate yield needs gram-task records") };
            let Prediction::Gram(q) = pred.predict(&r.input)? else { bail!("predictor has no gram head") };
            let raw = certify(p, &q, CERTIFY_TOL)?;
            let (vals, vecs) = sym_eigen(q.matrix());
            let n = q.dim();
            let clipped = Matrix::from_fn(n, n, |i, j| (0..n).map(|k| vals[k].max(0.0) * vecs[(i, k)] * vecs[(j, k)]).sum());
            let ok = certify(p, &SymMatrix::symmetrize(&clipped), CERTIFY_TOL)?.is_valid();
            Ok((ok, raw.coeff_residual))
        })
        .collect::<Result<_>>()?;
    let good = outcomes.iter().filter(|o| o.0).count();
    let worst = outcomes.iter().map(|o| o.1).fold(0.0, f64::max);
    Ok((good as f64 / outcomes.len().max(1) as f64, worst))
}

/// Short hex digest identifying a run from its command and parameters.
pub fn run_id(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    h.finalize().iter().take(6).map(|b| format!("{b:02x}")).collect()
}

/// CSV with `run_id` and `seed` prepended to every row.
pub fn write_csv(path: &Path, run: &str, seed: u64, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut head = vec!["run_id", "seed"];
    head.extend_from_slice(header);
    w.write_record(&head)?;
    for r in rows {
        let mut full = vec![run.to_string(), seed.to_string()];
        full.extend(r.iter().cloned());
        w.write_record(&full)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_records, DatasetSpec, Dist};

    fn small_set(n: usize, seed: u64) -> Vec<Record> {
        let spec = DatasetSpec { task: Task::Maxdet, dist: Dist::Wigner, degree: 6, n_train: n, n_val: 0, n_test: 0, seed };
        generate_records(&spec).unwrap().train
    }

    #[test]
    fn solver_oracle_is_equivariant() {
        let recs = small_set(5, 1);
        let g = GroupElement::from_svd(0.4, 1.5, -1.0);
        assert!(equivariance_error(&SolverOracle::default(), &recs, &g).unwrap() <= 1e-6);
        let m = Model::new(&default_config(ModelKind::Mlp, head_for(Task::Maxdet, 6)), &mut ChaCha20Rng::seed_from_u64(0)).unwrap();
        assert_eq!(equivariance_error(&m, &recs, &GroupElement::identity()).unwrap(), 0.0);
    }

    #[test]
    fn training_is_reproducible_and_reduces_loss() {
        let recs = small_set(40, 2);
        let cfg = TrainConfig { epochs: 5, batch_size: 8, lr: 1e-3, seed: 3, augment: None };
        let make = || Model::new(&default_config(ModelKind::Mlp, head_for(Task::Maxdet, 6)), &mut ChaCha20Rng::seed_from_u64(1)).unwrap();
        let a = train(make(), &recs[..32], &recs[32..], &cfg).unwrap();
        let b = train(make(), &recs[..32], &recs[32..], &cfg).unwrap();
        assert_eq!(a.curve, b.curve);
        assert!(a.curve.last().unwrap().train_loss < a.curve[0].train_loss);
    }

    #[test]
    fn sweep_level_one_is_plain_nmse() {
        let recs = small_set(6, 4);
        let m = Model::new(&default_config(ModelKind::Mlp, head_for(Task::Maxdet, 6)), &mut ChaCha20Rng::seed_from_u64(0)).unwrap();
        let solver = SolverOracle::default();
        let rows = ood_sweep(&[&m, &solver], &recs, &[1.0, 2.0, 5.0], 9).unwrap();
        assert_eq!(rows[0].nmse, mean_nmse(&m, &recs).unwrap());
        let kap: Vec<f64> = rows.iter().filter(|r| r.model == "mlp").map(|r| r.induced_kappa).collect();
        assert!(kap.windows(2).all(|w| w[1] > w[0]));
        for r in rows.iter().filter(|r| r.model == "solver") {
            assert!(r.nmse < 1e-10, "{}", r.nmse);
        }
    }

    #[test]
    fn conditioning_study_examples() {
        let s = induced_cond_study(10, 10, 1.5, 0).unwrap();
        assert!(s.diagonal_rel_err < 1e-6);
        assert!(s.r_squared.iter().all(|&r| r >= 0.99), "{:?}", s.r_squared);
        for &(_, d, lk, lbase) in &s.rows {
            if d == 1 {
                assert!((lk - lbase).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn distortion_bound_and_cases() {
        let r = loss_distortion_check(1000, 5.0, 3, 0).unwrap();
        assert_eq!(r.violations, 0);
        assert!(r.isometry_gap <= 1e-9);
        assert!(r.tight_ratio > 0.1 && r.tight_ratio <= 1.0 + 1e-9, "{}", r.tight_ratio);
    }

    #[test]
    fn prop_a2_examples() {
        let r = prop_a2_negative_check(10_000).unwrap();
        assert!(r.min_distance > 0.01, "{}", r.min_distance);
        assert!(r.rotation_control <= 1e-9);
        assert!((r.coarse_min_distance - r.min_distance).abs() < 0.1 * r.min_distance);
    }

    #[test]
    fn run_ids_are_stable() {
        assert_eq!(run_id(&["a", "b"]), run_id(&["a", "b"]));
        assert_ne!(run_id(&["a", "b"]), run_id(&["ab"]));
        assert_eq!(run_id(&["x"]).len(), 12);
    }
}
