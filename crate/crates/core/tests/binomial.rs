use proptest::prelude::*;
use textprop_core::ranking::{binomial_tail, log_binomial_tail};

fn choose(n: u64, k: u64) -> f64 {
    let mut c: u128 = 1;
    for j in 0..k {
        c = c * (n - j) as u128 / (j + 1) as u128;
    }
    c as f64
}

/// Plain summation of the probability mass function.
fn direct_tail(k: u64, n: u64, p: f64) -> f64 {
    (k..=n)
        .map(|i| choose(n, i) * p.powi(i as i32) * (1.0 - p).powi((n - i) as i32))
        .sum()
}

#[test]
fn grid_matches_direct_sum() {
    for n in 0..=30u64 {
        for k in 0..=n {
            for step in 1..=99 {
                let p = step as f64 / 100.0;
                let got = binomial_tail(k, n, p).unwrap();
                let want = direct_tail(k, n, p);
                assert!((got - want).abs() <= 1e-12 * want, "k={k} n={n} p={p}: {got} vs {want}");
            }
        }
    }
}

#[test]
fn deep_tail_stays_finite_in_log_form() {
    let l = log_binomial_tail(900, 1000, 1e-6).unwrap();
    assert!(l.is_finite() && l < -10_000.0);
}

proptest! {
    #[test]
    fn tail_decreases_in_k(n in 1u64..60, p in 0.001f64..0.999) {
        let mut prev = f64::INFINITY;
        for k in 0..=n {
            let l = log_binomial_tail(k, n, p).unwrap();
            prop_assert!(l <= prev + 1e-12);
            prev = l;
        }
    }

    #[test]
    fn tail_increases_in_p(n in 1u64..60, k_frac in 0.0f64..1.0, p in 0.001f64..0.99, dp in 0.0001f64..0.009) {
        let k = ((n as f64) * k_frac).round() as u64;
        let a = log_binomial_tail(k, n, p).unwrap();
        let b = log_binomial_tail(k, n, p + dp).unwrap();
        prop_assert!(b >= a - 1e-12);
    }

    #[test]
    fn tail_is_a_probability(n in 0u64..200, k_frac in 0.0f64..1.0, p in 0.0f64..=1.0) {
        let k = ((n as f64) * k_frac).floor() as u64;
        let v = binomial_tail(k, n, p).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
    }
}
