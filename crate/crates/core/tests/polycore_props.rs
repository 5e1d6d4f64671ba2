use proptest::prelude::*;
use sosnet_core::linalg::Matrix;
use sosnet_core::polycore::{
    act_on_form, evaluate, gram_to_coeffs, homogenize, induced_matrix, lift, particular_gram, split_components,
    BinaryForm, GroupElement, Poly2,
};

/// Group elements with condition number at most `kappa`.
fn group(kappa: f64) -> impl Strategy<Value = GroupElement> {
    (-3.2f64..3.2, 0.0f64..1.0, -3.2f64..3.2)
        .prop_map(move |(t1, u, t2)| GroupElement::from_svd(t1, kappa.sqrt().powf(u), t2))
}

fn form(max_deg: usize) -> impl Strategy<Value = BinaryForm> {
    (0..=max_deg).prop_flat_map(|d| prop::collection::vec(-2.0f64..2.0, d + 1))
        .prop_map(|c| BinaryForm::new(c).unwrap())
}

fn even_form(max_half: usize) -> impl Strategy<Value = BinaryForm> {
    (0..=max_half).prop_flat_map(|h| prop::collection::vec(-2.0f64..2.0, 2 * h + 1))
        .prop_map(|c| BinaryForm::new(c).unwrap())
}

fn rel(a: &Matrix, b: &Matrix) -> f64 {
    a.sub(b).frobenius_norm() / b.frobenius_norm().max(1e-300)
}

/// Brute-force expansion of `p(A v)` by multiplying out linear factors.
fn pullback_oracle(g: &GroupElement, p: &BinaryForm) -> Vec<f64> {
    let [[a, b], [c, e]] = g.entries();
    let d = p.degree();
    // (a x + b y) and (c x + e y) in ascending-x coefficients
    let gx = [b, a];
    let gy = [e, c];
    let mul = |u: &[f64], v: &[f64]| {
        let mut w = vec![0.0; u.len() + v.len() - 1];
        for (i, x) in u.iter().enumerate() {
            for (j, y) in v.iter().enumerate() {
                w[i + j] += x * y;
            }
        }
        w
    };
    let mut out = vec![0.0; d + 1];
    for (k, &ck) in p.coeffs().iter().enumerate() {
        let mut t = vec![ck];
        for _ in 0..k {
            t = mul(&t, &gx);
        }
        for _ in 0..d - k {
            t = mul(&t, &gy);
        }
        for (o, v) in out.iter_mut().zip(t) {
            *o += v;
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn induced_matrix_is_a_homomorphism(a in group(5.0), b in group(5.0), d in 0usize..=10) {
        let lhs = induced_matrix(&(a * b), d);
        let rhs = induced_matrix(&a, d).matrix().matmul(induced_matrix(&b, d).matrix());
        prop_assert!(rel(lhs.matrix(), &rhs) < 1e-8);
    }

    #[test]
    fn lift_is_compatible(a in group(5.0), x in -2.0f64..2.0, y in -2.0f64..2.0, d in 0usize..=10) {
        let lhs = lift(a.apply((x, y)), d);
        let rhs = induced_matrix(&a, d).matrix().matvec(&lift((x, y), d));
        let err: f64 = lhs.iter().zip(&rhs).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(err <= 1e-9 * scale.max(1e-12));
    }

    #[test]
    fn action_matches_pullback(a in group(5.0), p in form(10), x in -2.0f64..2.0, y in -2.0f64..2.0) {
        let moved = act_on_form(&a, &p);
        let lhs = evaluate(&moved, (x, y));
        let rhs = evaluate(&p, a.apply((x, y)));
        // scale: the same sum with absolute values
        let abs_p = BinaryForm::new(p.coeffs().iter().map(|c| c.abs()).collect()).unwrap();
        let (u, v) = a.apply((x, y));
        let scale = evaluate(&abs_p, (u.abs(), v.abs())).max(1e-12);
        prop_assert!((lhs - rhs).abs() <= 1e-9 * scale);
        let oracle = pullback_oracle(&a, &p);
        let m = oracle.iter().fold(1.0f64, |m, c| m.max(c.abs()));
        for (c, o) in moved.coeffs().iter().zip(&oracle) {
            prop_assert!((c - o).abs() <= 1e-9 * m);
        }
    }

    #[test]
    fn particular_gram_round_trips(p in even_form(7)) {
        let q = particular_gram(&p).unwrap();
        let back = gram_to_coeffs(&q);
        prop_assert_eq!(back.coeffs(), p.coeffs());
    }

    #[test]
    fn homogenize_agrees_with_dehomogenized_values(c in prop::collection::vec(-2.0f64..2.0, 1..6), extra in 0usize..3, x in -2.0f64..2.0) {
        let d = c.len() - 1 + extra;
        let p = homogenize(&c, d).unwrap();
        let direct: f64 = c.iter().enumerate().map(|(k, a)| a * x.powi(k as i32)).sum();
        prop_assert!((evaluate(&p, (x, 1.0)) - direct).abs() <= 1e-10 * (1.0 + direct.abs()));
    }

    #[test]
    fn split_components_preserves_values(terms in prop::collection::vec((0usize..4, 0usize..4, -2.0f64..2.0), 0..10),
                                         x in -2.0f64..2.0, y in -2.0f64..2.0) {
        let p = Poly2::new(terms);
        let split = split_components(&p);
        for (k, comp) in split.components().iter().enumerate() {
            prop_assert_eq!(comp.degree(), k);
        }
        prop_assert!((split.evaluate((x, y)) - p.evaluate((x, y))).abs() <= 1e-10);
    }
}

#[test]
fn particular_gram_round_trips_fixed_corpus() {
    // 100 deterministic forms of degrees 0..=18
    let mut state = 0x2545_f491_4f6c_dd1du64;
    let mut next = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 2.0
    };
    for i in 0..100 {
        let d = 2 * (i % 10);
        let p = BinaryForm::new((0..=d).map(|_| next()).collect()).unwrap();
        let back = gram_to_coeffs(&particular_gram(&p).unwrap());
        assert_eq!(back.coeffs(), p.coeffs());
    }
}
