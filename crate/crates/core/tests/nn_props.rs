use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sosnet_core::nn::{grad_check, nmse_loss, AdamState, ParamId, Params, Tape, Var};
use sosnet_core::reptheory::transvectant_tensor;
use sosnet_core::Result;

/// Parameters filled with values bounded away from zero.
fn bank(shapes: &[(usize, usize)], seed: u64) -> (Params, Vec<ParamId>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Params::new();
    let ids: Vec<ParamId> = shapes.iter().enumerate().map(|(i, &(r, c))| p.zeros(&format!("t{i}"), r, c)).collect();
    for &id in &ids {
        for v in p.get_mut(id) {
            let mag = rng.gen_range(0.2..1.5);
            *v = if rng.gen_bool(0.5) { mag } else { -mag };
        }
    }
    (p, ids)
}

fn check(shapes: &[(usize, usize)], seed: u64, body: impl Fn(&mut Tape, &[Var]) -> Result<Var>) -> f64 {
    let (params, ids) = bank(shapes, seed);
    grad_check(&params, 1e-5, |t, p| {
        let vars: Vec<Var> = ids.iter().map(|&id| t.param(p, id)).collect();
        let y = body(t, &vars)?;
        Ok(t.sumsq(y))
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn primitive_ops_pass_grad_check(seed in 0u64..10_000, r in 1usize..4, c in 1usize..4, k in 1usize..4) {
        let tol = 1e-6;
        prop_assert!(check(&[(r, c), (c, 1)], seed, |t, v| t.matvec(v[0], v[1])) < tol);
        prop_assert!(check(&[(r, c), (c, k)], seed, |t, v| t.matmul(v[0], v[1])) < tol);
        prop_assert!(check(&[(r, c), (r, c)], seed, |t, v| t.add(v[0], v[1])) < tol);
        prop_assert!(check(&[(r, c), (r, c)], seed, |t, v| t.sub(v[0], v[1])) < tol);
        prop_assert!(check(&[(r, c)], seed, |t, v| Ok(t.scale(v[0], -1.7))) < tol);
        prop_assert!(check(&[(r, c)], seed, |t, v| Ok(t.relu(v[0]))) < tol);
        prop_assert!(check(&[(r, 1), (c, 1)], seed, |t, v| Ok(t.concat(v))) < tol);
        prop_assert!(check(&[(c, 1), (c, 1), (c, 1)], seed, |t, v| t.stack_rows(v)) < tol);
        prop_assert!(check(&[(r, c)], seed, |t, v| t.row(v[0], r - 1)) < tol);
        prop_assert!(check(&[(r, c)], seed, |t, v| t.reshape(v[0], c, r)) < tol);
        prop_assert!(check(&[(r, c)], seed, |t, v| t.gather(v[0], Arc::new(vec![0, r * c - 1, 0]))) < tol);
        prop_assert!(check(&[(r, c)], seed, |t, v| Ok(t.sumsq(v[0]))) < tol);
        let tensor = Arc::new(transvectant_tensor(r + 1, c + 1, r.min(c)).unwrap());
        prop_assert!(check(&[(r + 2, 1), (c + 2, 1)], seed, |t, v| t.bilinear(tensor.clone(), v[0], v[1])) < tol);
        let label: Vec<f64> = (0..r * c).map(|i| i as f64 * 0.3 - 0.5).collect();
        let (params, ids) = bank(&[(r, c)], seed);
        let err = grad_check(&params, 1e-5, |t, p| {
            let x = t.param(p, ids[0]);
            nmse_loss(t, x, &label)
        })
        .unwrap();
        prop_assert!(err < tol);
    }

    #[test]
    fn bilinear_directional_derivative(seed in 0u64..10_000, d1 in 1usize..6, d2 in 1usize..6) {
        let n = d1.min(d2);
        let tensor = Arc::new(transvectant_tensor(d1, d2, n).unwrap());
        let (params, ids) = bank(&[(d1 + 1, 1), (d2 + 1, 1), (d1 + d2 - 2 * n + 1, 1)], seed);
        let loss = |p: &Params, t: &mut Tape| -> Var {
            let a = t.param(p, ids[0]);
            let b = t.param(p, ids[1]);
            let w = t.param(p, ids[2]);
            let y = t.bilinear(tensor.clone(), a, b).unwrap();
            let wt = t.reshape(w, 1, d1 + d2 - 2 * n + 1).unwrap();
            t.matvec(wt, y).unwrap()
        };
        let mut tape = Tape::new();
        let out = loss(&params, &mut tape);
        let grads = tape.backward(out, &params);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let dirs: Vec<Vec<f64>> = ids.iter().map(|&id| (0..params.get(id).len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let slope: f64 = ids.iter().zip(&dirs).map(|(&id, d)| grads.get(id).iter().zip(d).map(|(g, u)| g * u).sum::<f64>()).sum();
        let h = 1e-5;
        let at = |s: f64| {
            let mut p = params.clone();
            for (&id, d) in ids.iter().zip(&dirs) {
                for (v, u) in p.get_mut(id).iter_mut().zip(d) {
                    *v += s * u;
                }
            }
            let mut t = Tape::new();
            let o = loss(&p, &mut t);
            t.scalar(o)
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        prop_assert!((fd - slope).abs() <= 1e-6 * (1.0 + slope.abs()), "{} vs {}", fd, slope);
    }
}

#[test]
fn gradients_do_not_leak_between_steps() {
    let (mut params, ids) = bank(&[(3, 4), (4, 1)], 7);
    let loss = |p: &Params| {
        let mut t = Tape::new();
        let w = t.param(p, ids[0]);
        let x = t.param(p, ids[1]);
        let y = t.matvec(w, x).unwrap();
        let out = nmse_loss(&mut t, y, &[1.0, -2.0, 0.5]).unwrap();
        t.backward(out, p)
    };
    let first = loss(&params);
    let again = loss(&params);
    assert_eq!(first.get(ids[0]), again.get(ids[0]));

    let mut adam = AdamState::new(&params);
    adam.step(&mut params, &first);
    let second = loss(&params);
    let fresh = loss(&params.clone());
    assert_eq!(second.get(ids[0]), fresh.get(ids[0]));
    assert_eq!(second.get(ids[1]), fresh.get(ids[1]));

    // two runs of two steps agree bit for bit
    let run = || {
        let (mut p, _) = bank(&[(3, 4), (4, 1)], 7);
        let mut a = AdamState::new(&p);
        for _ in 0..2 {
            let g = loss(&p);
            a.step(&mut p, &g);
        }
        p.flatten()
    };
    assert_eq!(run(), run());
}
