//! Acceptance suite: one PASS/FAIL line per criterion.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use anyhow::{ensure, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sosnet::datagen::{generate_records, DatasetSpec, Dist, Label, Record, Task, CERTIFY_TOL};
use sosnet::harness::{
    default_config, equivariance_error, hard_example, head_for, induced_cond_study, inversions,
    loss_distortion_check, mean_nmse, ood_sweep, sweep_column, timing_comparison, train, ModelKind, SolverOracle,
    TrainConfig, HARD_EXAMPLE_LR, SWEEP_LEVELS,
};
use sosnet_core::models::{Head, MlpConfig, Model, ModelConfig, ModelInput, Pairing, Prediction, Sl2NetConfig, So2NetConfig};
use sosnet_core::nn::{grad_check, nmse_loss, Params, Tape, Var};
use sosnet_core::polycore::{act_on_form, gram_to_coeffs, induced_matrix, BinaryForm, GroupElement, InhomogPoly};
use sosnet_core::reptheory::{is_balanced_mod, transvectant, transvectant_tensor, Intertwiner};
use sosnet_core::soscenter::{analytic_center, certify, SolverConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn random_group(rng: &mut ChaCha20Rng, kappa_max: f64) -> GroupElement {
    let kappa: f64 = rng.gen_range(1.0..=kappa_max);
    GroupElement::from_svd(rng.gen_range(-3.2..3.2), kappa.sqrt(), rng.gen_range(-3.2..3.2))
}

fn random_form(rng: &mut ChaCha20Rng, d: usize) -> BinaryForm {
    BinaryForm::new((0..=d).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
    num / b.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300)
}

fn analytic_center_octic() -> Result<Outcome> {
    let mut c = vec![0.0; 9];
    c[0] = 1.0;
    c[8] = 1.0;
    let p = BinaryForm::new(c)?;
    let start = Instant::now();
    let q = analytic_center(&p, &SolverConfig::default())?.q;
    let secs = start.elapsed().as_secs_f64();
    let expected = [
        ((0, 0), 1.0),
        ((1, 1), 3.126),
        ((2, 2), 14.0 / 3.0),
        ((3, 3), 3.126),
        ((4, 4), 1.0),
        ((0, 2), -1.563),
        ((2, 4), -1.563),
        ((0, 4), 1.0 / 3.0),
        ((1, 3), -8.0 / 3.0),
    ];
    let worst = expected.iter().map(|&((i, j), v)| (q.get(i, j) - v).abs().max((q.get(j, i) - v).abs())).fold(0.0, f64::max);
    outcome(worst <= 2e-3 && secs < 1.0, format!("max deviation {worst:.2e}, {:.1} ms", secs * 1e3))
}

/// Golden-section maximum of `log det` over the one free Gram parameter.
fn closed_form_oracle() -> Result<Outcome> {
    // Gram family of x⁴ + 2x²y² + y⁴: [[1,0,t],[0,2-2t,0],[t,0,1]], t ∈ (-1, 1)
    let f = |t: f64| ((1.0 - t * t) * (2.0 - 2.0 * t)).ln();
    let (mut lo, mut hi) = (-1.0 + 1e-12, 1.0 - 1e-12);
    let r = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let (a, b) = (hi - r * (hi - lo), lo + r * (hi - lo));
        if f(a) > f(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    let t = 0.5 * (lo + hi);
    let oracle = [1.0, 0.0, t, 0.0, 2.0 - 2.0 * t, 0.0, t, 0.0, 1.0];
    let hand = [1.0, 0.0, -1.0 / 3.0, 0.0, 8.0 / 3.0, 0.0, -1.0 / 3.0, 0.0, 1.0];
    let p = BinaryForm::new(vec![1.0, 0.0, 2.0, 0.0, 1.0])?;
    let q = analytic_center(&p, &SolverConfig::default())?.q;
    let solved = q.matrix().as_slice();
    let err_hand = solved.iter().zip(&hand).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let err_oracle = solved.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    outcome(
        err_hand <= 1e-6 && err_oracle <= 1e-6,
        format!("vs hand optimum {err_hand:.1e}, vs golden-section oracle {err_oracle:.1e}"),
    )
}

fn solver_equivariance() -> Result<Outcome> {
    let spec = DatasetSpec { task: Task::Maxdet, dist: Dist::Wigner, degree: 6, n_train: 20, n_val: 0, n_test: 0, seed: 31 };
    let recs = generate_records(&spec)?.train;
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for r in &recs {
        let g = random_group(&mut rng, 3.0);
        worst = worst.max(equivariance_error(&SolverOracle::default(), std::slice::from_ref(r), &g)?);
    }
    outcome(worst <= 1e-6, format!("max relative discrepancy {worst:.2e} over {} cases", recs.len()))
}

fn constraint_invariant() -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    for d in [6usize, 8] {
        let forms: Vec<BinaryForm> = (0..20).map(|_| random_form(&mut rng, d)).collect();
        for draw in 0..100u64 {
            let cfg = ModelConfig::Sl2net(Sl2NetConfig {
                layers: 2,
                channels: 3,
                max_degree: d + 2,
                mlp_hidden: vec![8],
                pairing: Pairing::Diagonal,
                head: Head::Gram { half_degree: d / 2 },
            });
            let model = Model::new(&cfg, &mut ChaCha20Rng::seed_from_u64(draw))?;
            for p in &forms {
                let Prediction::Gram(q) = model.predict(&ModelInput::Form(p.clone()))? else { unreachable!() };
                worst = worst.max(gram_to_coeffs(&q).max_abs_diff(p));
            }
        }
    }
    outcome(worst <= 1e-8, format!("max coefficient error {worst:.2e} over 4000 forward passes"))
}

fn hard_example_obstruction() -> Result<Outcome> {
    let r = hard_example(2000, 0, HARD_EXAMPLE_LR)?;
    let get = |m: &str| r.summary.iter().find(|s| s.0 == m).cloned().unwrap();
    let (sl2, so2, mlp) = (get("sl2net"), get("so2net"), get("mlp"));
    let sl2_forced = r.rows.iter().filter(|row| row.model == "sl2net").map(|row| row.forced_zero_max).fold(0.0, f64::max);
    outcome(
        sl2_forced <= 1e-9 && sl2.1 >= 10.0 * mlp.1 && mlp.1 <= 1e-3 && so2.1 <= 1e-3,
        format!(
            "sl2net forced max {sl2_forced:.1e}, final nmse sl2net {:.2e} / mlp {:.2e} / so2net {:.2e}",
            sl2.1, mlp.1, so2.1
        ),
    )
}

fn balanced_closure() -> Result<Outcome> {
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let balanced = |b: usize, rng: &mut ChaCha20Rng| {
        let d = rng.gen_range(0..=8usize);
        let c = (0..=d)
            .map(|k| if (2 * k as i64 - d as i64).rem_euclid(b as i64) == 0 { rng.gen_range(-2.0..2.0) } else { 0.0 })
            .collect();
        BinaryForm::new(c).unwrap()
    };
    let (mut checked, mut violations) = (0, 0);
    for b in [2usize, 4, 8] {
        for _ in 0..200 {
            let p = balanced(b, &mut rng);
            let q = balanced(b, &mut rng);
            for n in 0..=p.degree().min(q.degree()) {
                checked += 1;
                if !is_balanced_mod(&transvectant(&p, &q, n)?, b) {
                    violations += 1;
                }
            }
        }
    }
    outcome(violations == 0, format!("{violations} violations in {checked} transvectants"))
}

fn transvectant_and_intertwiner_equivariance() -> Result<Outcome> {
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let mut worst_t: f64 = 0.0;
    for _ in 0..50 {
        let g = random_group(&mut rng, 2.0);
        let (d1, d2) = (rng.gen_range(0..=8usize), rng.gen_range(0..=8usize));
        let (p, q) = (random_form(&mut rng, d1), random_form(&mut rng, d2));
        let n = rng.gen_range(0..=d1.min(d2));
        let lhs = act_on_form(&g, &transvectant(&p, &q, n)?);
        let rhs = transvectant(&act_on_form(&g, &p), &act_on_form(&g, &q), n)?;
        if rhs.norm() > 1e-8 {
            worst_t = worst_t.max(rel(lhs.coeffs(), rhs.coeffs()));
        }
    }
    let mut worst_i: f64 = 0.0;
    for _ in 0..50 {
        let g = random_group(&mut rng, 3.0);
        let d = rng.gen_range(1..=5usize);
        let iw = Intertwiner::new(d)?;
        let v: Vec<f64> = (0..iw.input_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lhs = iw.forward(&v)?.congruence(induced_matrix(&g, d).matrix());
        let rhs = iw.forward(&iw.act_on_slots(&g, &v))?;
        worst_i = worst_i.max(rel(lhs.matrix().as_slice(), rhs.matrix().as_slice()));
    }
    outcome(worst_t <= 1e-6 && worst_i <= 1e-5, format!("transvectant {worst_t:.1e}, intertwiner {worst_i:.1e}"))
}

fn seeded_params(shapes: &[(usize, usize)], seed: u64) -> (Params, Vec<sosnet_core::nn::ParamId>) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut p = Params::new();
    let ids: Vec<_> = shapes.iter().enumerate().map(|(i, &(r, c))| p.zeros(&format!("t{i}"), r, c)).collect();
    for &id in &ids {
        for v in p.get_mut(id) {
            let mag = rng.gen_range(0.2..1.5);
            *v = if rng.gen_bool(0.5) { mag } else { -mag };
        }
    }
    (p, ids)
}

fn op_check(shapes: &[(usize, usize)], body: impl Fn(&mut Tape, &[Var]) -> sosnet_core::Result<Var>) -> Result<f64> {
    let (params, ids) = seeded_params(shapes, 8);
    Ok(grad_check(&params, 1e-5, |t, p| {
        let vars: Vec<Var> = ids.iter().map(|&id| t.param(p, id)).collect();
        let y = body(t, &vars)?;
        Ok(t.sumsq(y))
    })?)
}

fn gradient_correctness() -> Result<Outcome> {
    let tensor = Arc::new(transvectant_tensor(3, 2, 1)?);
    let ops = [
        op_check(&[(3, 4), (4, 1)], |t, v| t.matvec(v[0], v[1]))?,
        op_check(&[(3, 4), (4, 2)], |t, v| t.matmul(v[0], v[1]))?,
        op_check(&[(3, 2), (3, 2)], |t, v| t.add(v[0], v[1]))?,
        op_check(&[(3, 2), (3, 2)], |t, v| t.sub(v[0], v[1]))?,
        op_check(&[(3, 2)], |t, v| Ok(t.scale(v[0], -1.7)))?,
        op_check(&[(3, 2)], |t, v| Ok(t.relu(v[0])))?,
        op_check(&[(3, 1), (2, 1)], |t, v| Ok(t.concat(v)))?,
        op_check(&[(2, 1), (2, 1)], |t, v| t.stack_rows(v))?,
        op_check(&[(3, 2)], |t, v| t.row(v[0], 1))?,
        op_check(&[(3, 2)], |t, v| t.reshape(v[0], 2, 3))?,
        op_check(&[(3, 2)], |t, v| t.gather(v[0], Arc::new(vec![0, 5, 0])))?,
        op_check(&[(4, 1), (3, 1)], |t, v| t.bilinear(tensor.clone(), v[0], v[1]))?,
        {
            let (params, ids) = seeded_params(&[(2, 3)], 9);
            let label = [0.3, -0.2, 1.0, 0.5, 0.0, -1.1];
            grad_check(&params, 1e-5, |t, p| {
                let x = t.param(p, ids[0]);
                nmse_loss(t, x, &label)
            })?
        },
    ];
    let worst_op = ops.iter().copied().fold(0.0, f64::max);
    let head = Head::Gram { half_degree: 3 };
    let configs = [
        ModelConfig::Sl2net(Sl2NetConfig { layers: 2, channels: 3, max_degree: 8, mlp_hidden: vec![4], pairing: Pairing::Diagonal, head }),
        ModelConfig::So2net(So2NetConfig { layers: 2, channels: 2, max_frequency: 6, mlp_hidden: vec![4], pairing: Pairing::Diagonal, head }),
        ModelConfig::Mlp(MlpConfig { hidden: vec![8, 8], head }),
    ];
    let p = ModelInput::Form(BinaryForm::new(vec![1.0, 0.3, 2.0, -0.5, 1.7, 0.2, 0.9])?);
    let label: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
    let mut worst_model: f64 = 0.0;
    for cfg in &configs {
        let model = Model::new(cfg, &mut ChaCha20Rng::seed_from_u64(10))?;
        let err = grad_check(model.params(), 1e-5, |t, params| {
            let y = model.forward(t, params, &p)?;
            nmse_loss(t, y, &label)
        })?;
        worst_model = worst_model.max(err);
    }
    outcome(worst_op <= 1e-6 && worst_model <= 1e-4, format!("primitive ops {worst_op:.1e}, full models {worst_model:.1e}"))
}

struct Trained {
    mlp: Model,
    test: Vec<Record>,
    nmse: f64,
    seconds: f64,
}

static DESK_MLP: OnceLock<Trained> = OnceLock::new();

fn desk_mlp() -> Result<&'static Trained> {
    if let Some(t) = DESK_MLP.get() {
        return Ok(t);
    }
    let spec = DatasetSpec { task: Task::Maxdet, dist: Dist::Wigner, degree: 6, n_train: 1000, n_val: 100, n_test: 100, seed: 0 };
    let data = generate_records(&spec)?;
    let start = Instant::now();
    let model = Model::new(&default_config(ModelKind::Mlp, head_for(Task::Maxdet, 6)), &mut ChaCha20Rng::seed_from_u64(0))?;
    let cfg = TrainConfig { epochs: 200, batch_size: 32, lr: 1e-3, seed: 0, augment: None };
    let out = train(model, &data.train, &data.val, &cfg)?;
    let seconds = start.elapsed().as_secs_f64();
    let nmse = mean_nmse(&out.model, &data.test)?;
    Ok(DESK_MLP.get_or_init(|| Trained { mlp: out.model, test: data.test, nmse, seconds }))
}

fn desk_training() -> Result<Outcome> {
    let t = desk_mlp()?;
    outcome(t.nmse <= 1e-2 && t.seconds <= 900.0, format!("held-out nmse {:.2e}, training {:.0} s", t.nmse, t.seconds))
}

fn timing() -> Result<Outcome> {
    let spec = DatasetSpec { task: Task::Maxdet, dist: Dist::Wigner, degree: 8, n_train: 500, n_val: 50, n_test: 500, seed: 1 };
    let data = generate_records(&spec)?;
    let model = Model::new(&default_config(ModelKind::Mlp, head_for(Task::Maxdet, 8)), &mut ChaCha20Rng::seed_from_u64(1))?;
    let cfg = TrainConfig { epochs: 20, batch_size: 32, lr: 1e-3, seed: 1, augment: None };
    let trained = train(model, &data.train, &data.val, &cfg)?.model;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build()?;
    let r = pool.install(|| timing_comparison(&trained, &data.test, 5, &SolverConfig::default()))?;
    outcome(
        r.speedup >= 10.0,
        format!("mlp {:.1} us vs solver {:.1} us per instance, speedup {:.1}x", r.model_ms * 1e3, r.solver_ms * 1e3, r.speedup),
    )
}

fn induced_conditioning() -> Result<Outcome> {
    let s = induced_cond_study(10, 10, 1.5, 11)?;
    let min_r2 = s.r_squared.iter().copied().fold(f64::INFINITY, f64::min);
    outcome(
        s.diagonal_rel_err <= 1e-6 && min_r2 >= 0.99,
        format!("diagonal rel. error {:.1e}, min R^2 {min_r2:.4}", s.diagonal_rel_err),
    )
}

fn distortion_bound() -> Result<Outcome> {
    let r = loss_distortion_check(1000, 5.0, 3, 12)?;
    outcome(r.violations == 0, format!("{} violations in {} trials", r.violations, r.trials))
}

fn ood_trend() -> Result<Outcome> {
    let t = desk_mlp()?;
    let spec = DatasetSpec { task: Task::Maxdet, dist: Dist::Wigner, degree: 6, n_train: 1000, n_val: 100, n_test: 0, seed: 0 };
    let data = generate_records(&spec)?;
    let sl2 = Model::new(&default_config(ModelKind::Sl2net, head_for(Task::Maxdet, 6)), &mut ChaCha20Rng::seed_from_u64(0))?;
    let sl2 = train(sl2, &data.train, &data.val, &TrainConfig { epochs: 5, batch_size: 32, lr: 1e-3, seed: 0, augment: None })?.model;
    let rows = ood_sweep(&[&t.mlp, &sl2], &t.test, &SWEEP_LEVELS, 13)?;
    let mlp_curve = sweep_column(&rows, "mlp");
    let inv = inversions(&mlp_curve);
    // the level whose mean κ(A^[d]) is closest to 10³ on a log scale
    let at = |m: &str| {
        rows.iter()
            .filter(|r| r.model == m)
            .min_by(|a, b| (a.induced_kappa.log10() - 3.0).abs().total_cmp(&(b.induced_kappa.log10() - 3.0).abs()))
            .unwrap()
            .clone()
    };
    let (m, s) = (at("mlp"), at("sl2net"));
    let (em, es) = (m.equivariance_error.unwrap(), s.equivariance_error.unwrap());
    outcome(
        inv <= 1 && es * 10.0 <= em,
        format!(
            "mlp nmse inversions {inv}; at induced kappa {:.2e}: sl2net eq. error {es:.2e} vs mlp {em:.2e}",
            m.induced_kappa
        ),
    )
}

fn grid_minimum(q: &InhomogPoly) -> f64 {
    let n = 400;
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..=n {
        for j in 0..=n {
            let (x, y) = (-5.0 + 10.0 * i as f64 / n as f64, -5.0 + 10.0 * j as f64 / n as f64);
            let f = q.evaluate((x, y));
            if f < best.0 {
                best = (f, x, y);
            }
        }
    }
    let (mut f, mut x, mut y) = best;
    let mut h = 10.0 / n as f64;
    while h > 1e-9 {
        let mut moved = false;
        for (dx, dy) in [(h, 0.0), (-h, 0.0), (0.0, h), (0.0, -h)] {
            let g = q.evaluate((x + dx, y + dy));
            if g < f {
                (f, x, y, moved) = (g, x + dx, y + dy, true);
            }
        }
        if !moved {
            h /= 2.0;
        }
    }
    f
}

fn dataset_integrity() -> Result<Outcome> {
    let mut maxdet = Vec::new();
    for (dist, degree, n) in [(Dist::Wigner, 6, 200), (Dist::Wigner, 8, 100), (Dist::Delsarte, 6, 50)] {
        let spec = DatasetSpec { task: Task::Maxdet, dist, degree, n_train: n, n_val: 0, n_test: 0, seed: 14 };
        maxdet.extend(generate_records(&spec)?.train);
    }
    let mut certified = 0;
    for r in &maxdet {
        let (ModelInput::Form(p), Label::Gram(q)) = (&r.input, &r.label) else { unreachable!() };
        if certify(p, q, CERTIFY_TOL)?.is_valid() {
            certified += 1;
        }
    }
    let mut eval_err: f64 = 0.0;
    let mut grid_err: f64 = 0.0;
    let mut n_min = 0;
    for degree in [4, 6] {
        let spec = DatasetSpec { task: Task::Min, dist: Dist::Wigner, degree, n_train: 15, n_val: 0, n_test: 0, seed: 14 };
        for r in generate_records(&spec)?.train {
            let (ModelInput::Inhomog(q), Label::Scalar(m)) = (&r.input, &r.label) else { unreachable!() };
            let at = r.meta["argmin"].as_array().unwrap();
            let v = (at[0].as_f64().unwrap(), at[1].as_f64().unwrap());
            eval_err = eval_err.max((q.evaluate(v) - m).abs() / (1.0 + m.abs()));
            grid_err = grid_err.max((grid_minimum(q) - m).abs());
            n_min += 1;
        }
    }
    ensure!(!maxdet.is_empty());
    outcome(
        certified == maxdet.len() && eval_err <= 1e-12 && grid_err <= 1e-3,
        format!(
            "{certified}/{} max-det labels certify; {n_min} minimization records: evaluate-at-argmin {eval_err:.1e}, grid search {grid_err:.1e}",
            maxdet.len()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Result<Outcome>); 14] = [
        ("analytic center of x^8+y^8", analytic_center_octic),
        ("closed-form quartic optimum", closed_form_oracle),
        ("solver equivariance", solver_equivariance),
        ("gram constraint built into sl2net", constraint_invariant),
        ("hard example obstruction", hard_example_obstruction),
        ("balanced-monomial closure", balanced_closure),
        ("transvectant and intertwiner equivariance", transvectant_and_intertwiner_equivariance),
        ("gradient correctness", gradient_correctness),
        ("desk-scale mlp training", desk_training),
        ("mlp vs solver timing", timing),
        ("induced conditioning", induced_conditioning),
        ("loss distortion bound", distortion_bound),
        ("ood trend and equivariance ordering", ood_trend),
        ("dataset integrity", dataset_integrity),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !filter.is_empty() && !filter.iter().any(|f| f == &id.to_string() || name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check));
        let secs = start.elapsed().as_secs_f64();
        let (pass, detail) = match result {
            Ok(Ok(o)) => (o.pass, o.detail),
            Ok(Err(e)) => (false, format!("error: {e:#}")),
            Err(_) => (false, "panicked".into()),
        };
        if !pass {
            failed += 1;
        }
        println!("{} criterion {id:2} {name}: {detail} [{secs:.1} s]", if pass { "PASS" } else { "FAIL" });
    }
    println!("acceptance: {failed} failed");
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
