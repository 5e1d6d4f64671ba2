use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde_json::json;
use sosnet::datagen::{generate_dataset, load_split, AugmentationBank, DatasetSpec, Dist, Label, Task};
use sosnet::formats::{read_json, write_json, CertificateJson, CheckpointJson, FormJson};
use sosnet::harness::{
    certificate_yield, default_config, equivariance_error, head_for, hard_example, induced_cond_study, inversions,
    loss_distortion_check, mean_nmse, ood_sweep, prop_a2_negative_check, run_id, sweep_column, timing_comparison,
    train, write_csv, ModelKind, Predictor, TrainConfig, HARD_EXAMPLE_LR, SWEEP_LEVELS,
};
use sosnet_core::models::{Model, ModelConfig, ModelInput};
use sosnet_core::polycore::GroupElement;
use sosnet_core::reptheory::Intertwiner;
use sosnet_core::soscenter::{analytic_center, certify, SolverConfig};

#[derive(Parser)]
#[command(name = "sosnet", version, about = "Sum-of-squares certificates for binary forms and neural surrogates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analytic-center Gram matrix of a form.
    Solve {
        /// Form JSON `{"degree", "coeffs"}`.
        input: PathBuf,
        /// Certificate JSON; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a certificate against a form; exit 0 iff valid.
    Certify {
        form: PathBuf,
        certificate: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Generate train/val/test JSONL splits.
    Datagen {
        #[arg(long, value_enum)]
        task: Task,
        #[arg(long, value_enum, default_value = "wigner")]
        dist: Dist,
        #[arg(long, default_value_t = 6)]
        degree: usize,
        #[arg(long, default_value_t = 1000)]
        n_train: usize,
        #[arg(long, default_value_t = 100)]
        n_val: usize,
        #[arg(long, default_value_t = 100)]
        n_test: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a generated dataset directory.
    Train(TrainArgs),
    /// Test-set NMSE, certificate yield and equivariance error of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Out-of-distribution sweep over condition-number levels.
    Sweep {
        /// One or more checkpoints.
        #[arg(long, required = true, num_args = 1..)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = SWEEP_LEVELS.to_vec())]
        levels: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        assert: bool,
    },
    /// Single-thread per-instance time of a model vs the solver.
    Timing {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        assert: bool,
    },
    /// Fit every family to x⁸ + y⁸ alone.
    HardExample {
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value_t = HARD_EXAMPLE_LR)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        assert: bool,
    },
    /// Condition number of induced matrices against degree.
    CondStudy {
        #[arg(long, default_value_t = 10)]
        samples: usize,
        #[arg(long, default_value_t = 10)]
        max_degree: usize,
        #[arg(long, default_value_t = 1.5)]
        a: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        assert: bool,
    },
    /// Loss-distortion bound and the stretched-vs-rotated separation.
    Props {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 5.0)]
        kappa_max: f64,
        #[arg(long, default_value_t = 10_000)]
        grid: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        assert: bool,
    },
    /// Layer shapes and parameter count of a model.
    Describe {
        #[arg(long, value_enum, default_value = "mlp")]
        model: ModelKind,
        #[arg(long, value_enum, default_value = "maxdet")]
        task: Task,
        #[arg(long, default_value_t = 6)]
        degree: usize,
        /// Model config JSON overriding the defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dump the Gram intertwiner of this half-degree as JSON to `--out`.
        #[arg(long)]
        intertwiner: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Directory written by `datagen`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    model: ModelKind,
    #[arg(long, value_enum)]
    task: Task,
    /// Model config JSON overriding the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Augment with elements of condition number in `A:B`.
    #[arg(long)]
    aug_kappa: Option<String>,
    #[arg(long, default_value_t = 1000)]
    bank_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_range(s: &str) -> Result<(f64, f64)> {
    let (a, b) = s.split_once(':').context("expected A:B")?;
    Ok((a.trim().parse()?, b.trim().parse()?))
}

fn load_checkpoint(path: &Path) -> Result<Model> {
    let ck: CheckpointJson = read_json(path)?;
    let mut model = Model::new(&ck.header.config, &mut ChaCha20Rng::seed_from_u64(ck.header.seed))?;
    ck.load_into(model.params_mut())?;
    Ok(model)
}

fn record_degree(input: &ModelInput) -> usize {
    input.components().last().map(|(k, _)| *k).unwrap_or(0)
}

fn task_of(label: &Label) -> Task {
    match label {
        Label::Gram(_) => Task::Maxdet,
        Label::Scalar(_) => Task::Min,
    }
}

fn fmt(v: f64) -> String {
    format!("{v:e}")
}

/// Prints failed checks and turns them into the exit status.
fn verdict(checks: &[(&str, bool)], enforce: bool) -> ExitCode {
    let mut ok = true;
    for (name, pass) in checks {
        println!("{} {name}", if *pass { "PASS" } else { "FAIL" });
        ok &= pass;
    }
    if enforce && !ok {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Solve { input, out } => {
            let p = read_json::<FormJson>(&input)?.to_form()?;
            let start = Instant::now();
            let c = analytic_center(&p, &SolverConfig::default())?;
            let cert = CertificateJson {
                dim: c.q.dim(),
                q: c.q.matrix().as_slice().to_vec(),
                psd_margin: c.psd_margin,
                coeff_residual: c.coeff_residual,
                iterations: c.iterations,
                wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
            };
            match out {
                Some(path) => write_json(&path, &cert)?,
                None => println!("{}", serde_json::to_string_pretty(&cert)?),
            }
        }
        Command::Certify { form, certificate, tol } => {
            let p = read_json::<FormJson>(&form)?.to_form()?;
            let q = read_json::<CertificateJson>(&certificate)?.to_sym()?;
            let r = certify(&p, &q, tol)?;
            println!(
                "{} coeff_residual={:e} min_eigenvalue={:e}",
                if r.is_valid() { "valid" } else { "invalid" },
                r.coeff_residual,
                r.min_eigenvalue
            );
            return Ok(if r.is_valid() { ExitCode::SUCCESS } else { ExitCode::FAILURE });
        }
        Command::Datagen { task, dist, degree, n_train, n_val, n_test, seed, out } => {
            let spec = DatasetSpec { task, dist, degree, n_train, n_val, n_test, seed };
            let d = generate_dataset(&spec, &out)?;
            println!("wrote {} / {} / {} records to {}", d.train.len(), d.val.len(), d.test.len(), out.display());
        }
        Command::Train(args) => train_cmd(args)?,
        Command::Eval { checkpoint, data, seed, out } => {
            let model = load_checkpoint(&checkpoint)?;
            let test = load_split(&data)?;
            let nmse = mean_nmse(&model, &test)?;
            let mut row = vec![model.name(), fmt(nmse)];
            if matches!(test.first().map(|r| &r.label), Some(Label::Gram(_))) {
                let (yield_, residual) = certificate_yield(&model, &test)?;
                let g = GroupElement::from_svd(0.3, 2f64.sqrt(), 1.1);
                row.extend([fmt(yield_), fmt(residual), fmt(equivariance_error(&model, &test, &g)?)]);
            } else {
                row.extend(["".into(), "".into(), "".into()]);
            }
            let id = run_id(&["eval", &checkpoint.display().to_string(), &data.display().to_string(), &seed.to_string()]);
            write_csv(&out, &id, seed, &["model", "nmse", "certificate_yield", "max_coeff_residual", "equivariance_error"], &[row])?;
        }
        Command::Sweep { checkpoint, data, levels, seed, out, assert } => {
            let models: Vec<Model> = checkpoint.iter().map(|p| load_checkpoint(p)).collect::<Result<_>>()?;
            let preds: Vec<&dyn Predictor> = models.iter().map(|m| m as &dyn Predictor).collect();
            let test = load_split(&data)?;
            let rows = ood_sweep(&preds, &test, &levels, seed)?;
            let id = run_id(&["sweep", &format!("{checkpoint:?}"), &data.display().to_string(), &format!("{levels:?}")]);
            let table: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    vec![
                        r.model.clone(),
                        r.level.to_string(),
                        fmt(r.induced_kappa),
                        fmt(r.nmse),
                        r.equivariance_error.map(fmt).unwrap_or_default(),
                    ]
                })
                .collect();
            write_csv(&out, &id, seed, &["model", "kappa", "induced_kappa", "nmse", "equivariance_error"], &table)?;
            let mut checks = Vec::new();
            for m in &models {
                if m.name() == "mlp" {
                    checks.push(("mlp nmse nondecreasing in kappa (at most one inversion)", inversions(&sweep_column(&rows, "mlp")) <= 1));
                }
            }
            return Ok(verdict(&checks, assert));
        }
        Command::Timing { checkpoint, data, repeats, seed, out, assert } => {
            let model = load_checkpoint(&checkpoint)?;
            let records = load_split(&data)?;
            let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build()?;
            let r = pool.install(|| timing_comparison(&model, &records, repeats, &SolverConfig::default()))?;
            let id = run_id(&["timing", &checkpoint.display().to_string(), &data.display().to_string(), &repeats.to_string()]);
            write_csv(
                &out,
                &id,
                seed,
                &["model", "instances", "model_ms", "solver_ms", "speedup", "model_nmse"],
                &[vec![model.name(), r.instances.to_string(), fmt(r.model_ms), fmt(r.solver_ms), fmt(r.speedup), fmt(r.model_nmse)]],
            )?;
            return Ok(verdict(&[("model at least 10x faster than solver", r.speedup >= 10.0)], assert));
        }
        Command::HardExample { steps, lr, seed, out, assert } => {
            let r = hard_example(steps, seed, lr)?;
            let id = run_id(&["hard-example", &steps.to_string(), &lr.to_string()]);
            let table: Vec<Vec<String>> = r
                .rows
                .iter()
                .map(|row| vec![row.model.clone(), row.step.to_string(), fmt(row.nmse), fmt(row.forced_zero_max)])
                .collect();
            write_csv(&out, &id, seed, &["model", "step", "nmse", "forced_zero_max"], &table)?;
            let get = |m: &str| r.summary.iter().find(|s| s.0 == m).cloned().unwrap_or_default();
            let (sl2, so2, mlp) = (get("sl2net"), get("so2net"), get("mlp"));
            for s in &r.summary {
                println!("{} final_nmse={:e} forced_zero_max={:e}", s.0, s.1, s.2);
            }
            return Ok(verdict(
                &[
                    ("sl2net forced entries stay zero", sl2.2 <= 1e-9),
                    ("sl2net final nmse at least 10x mlp", sl2.1 >= 10.0 * mlp.1),
                    ("mlp reaches 1e-3", mlp.1 <= 1e-3),
                    ("so2net reaches 1e-3", so2.1 <= 1e-3),
                ],
                assert,
            ));
        }
        Command::CondStudy { samples, max_degree, a, seed, out, assert } => {
            let s = induced_cond_study(samples, max_degree, a, seed)?;
            let id = run_id(&["cond-study", &samples.to_string(), &max_degree.to_string(), &a.to_string()]);
            let table: Vec<Vec<String>> =
                s.rows.iter().map(|&(i, d, lk, lb)| vec![i.to_string(), d.to_string(), fmt(lk), fmt(lb)]).collect();
            write_csv(&out, &id, seed, &["sample", "d", "log_induced_kappa", "log_kappa"], &table)?;
            return Ok(verdict(
                &[
                    ("diagonal stretch matches a^(2d)", s.diagonal_rel_err <= 1e-6),
                    ("log-linear fit R^2 >= 0.99", s.r_squared.iter().all(|&r| r >= 0.99)),
                ],
                assert,
            ));
        }
        Command::Props { trials, kappa_max, grid, seed, out, assert } => {
            let d = loss_distortion_check(trials, kappa_max, 3, seed)?;
            let a = prop_a2_negative_check(grid)?;
            let report = json!({
                "run_id": run_id(&["props", &trials.to_string(), &kappa_max.to_string(), &grid.to_string()]),
                "seed": seed,
                "distortion": { "trials": d.trials, "violations": d.violations, "isometry_gap": d.isometry_gap, "tight_ratio": d.tight_ratio },
                "stretch_vs_rotation": { "min_distance": a.min_distance, "rotation_control": a.rotation_control, "coarse_min_distance": a.coarse_min_distance },
            });
            write_json(&out, &report)?;
            return Ok(verdict(
                &[
                    ("distortion bound holds", d.violations == 0),
                    ("quarter turns preserve the error", d.isometry_gap <= 1e-9),
                    ("aligned case within 10x of the bound", d.tight_ratio >= 0.1),
                    ("stretched form is not a rotation", a.min_distance > 0.01),
                    ("rotation control is found", a.rotation_control <= 1e-9),
                    (
                        "grid halving changes the minimum by under 10%",
                        (a.coarse_min_distance - a.min_distance).abs() < 0.1 * a.min_distance,
                    ),
                ],
                assert,
            ));
        }
        Command::Describe { model, task, degree, config, intertwiner, out } => {
            if let Some(half) = intertwiner {
                let iw = Intertwiner::new(half)?;
                let m = iw.sym_forward_matrix();
                let dump = json!({
                    "half_degree": half,
                    "degrees": iw.symmetric_degrees(),
                    "input_dim": iw.input_dim(),
                    "matrix": (0..m.rows()).map(|i| m.row(i).to_vec()).collect::<Vec<_>>(),
                });
                match &out {
                    Some(p) => write_json(p, &dump)?,
                    None => println!("{}", serde_json::to_string_pretty(&dump)?),
                }
                return Ok(ExitCode::SUCCESS);
            }
            let cfg = match config {
                Some(p) => read_json::<ModelConfig>(&p)?,
                None => default_config(model, head_for(task, degree)),
            };
            println!("{}", Model::new(&cfg, &mut ChaCha20Rng::seed_from_u64(0))?.describe());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let train_set = load_split(&a.data.join("train.jsonl"))?;
    let val_set = load_split(&a.data.join("val.jsonl")).unwrap_or_default();
    let Some(first) = train_set.first() else { bail!("empty training split") };
    if task_of(&first.label) != a.task {
        bail!("dataset labels do not match --task");
    }
    let cfg = match &a.config {
        Some(p) => read_json::<ModelConfig>(p)?,
        None => default_config(a.model, head_for(a.task, record_degree(&first.input))),
    };
    let augment = match &a.aug_kappa {
        Some(s) => {
            let (lo, hi) = parse_range(s)?;
            Some(AugmentationBank::build(a.bank_size, lo, hi, &[], a.seed.wrapping_add(1))?)
        }
        None => None,
    };
    let model = Model::new(&cfg, &mut ChaCha20Rng::seed_from_u64(a.seed))?;
    let tc = TrainConfig { epochs: a.epochs, batch_size: a.batch_size, lr: a.lr, seed: a.seed, augment };
    let outcome = train(model, &train_set, &val_set, &tc)?;
    fs::create_dir_all(&a.out)?;
    let id = run_id(&[
        "train",
        &a.data.display().to_string(),
        &serde_json::to_string(&cfg)?,
        &format!("{} {} {} {:?}", a.epochs, a.batch_size, a.lr, a.aug_kappa),
        &a.seed.to_string(),
    ]);
    let rows: Vec<Vec<String>> = outcome
        .curve
        .iter()
        .map(|e| vec![e.epoch.to_string(), fmt(e.train_loss), fmt(e.val_nmse)])
        .collect();
    write_csv(&a.out.join("loss_curve.csv"), &id, a.seed, &["epoch", "train_loss", "val_nmse"], &rows)?;
    write_json(
        &a.out.join("checkpoint.json"),
        &CheckpointJson::new(outcome.model.config(), a.seed, outcome.best_epoch, outcome.model.params()),
    )?;
    println!("best epoch {} of {}", outcome.best_epoch, a.epochs);
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
