use std::f64::consts::{PI, TAU};

use beurling_core::counting::{enumerate_integers, DEFAULT_BUDGET};
use beurling_core::discretize::{bucket, probe_x_tilde, DiscreteSystem, BUCKETS};
use beurling_core::measures::{
    exp_star, mellin_convolve, prime_power_measure, prime_to_riemann, riemann_to_prime, ConvolveConfig, Density, HalfLineMeasure, Piece,
};
use beurling_core::saddle::wedge_integral;
use num_complex::Complex64 as C64;
use proptest::prelude::*;

fn brute(gens: &[f64], i: usize, log_prod: f64, limit: f64, out: &mut Vec<f64>) {
    out.push(log_prod);
    for j in i..gens.len() {
        let q = log_prod + gens[j];
        if q <= limit + 1e-12 {
            brute(gens, j, q, limit, out);
        }
    }
}

fn primes_strategy(max_len: usize) -> impl Strategy<Value = Vec<(f64, u32)>> {
    prop::collection::vec((2.0f64..60.0, 1u32..=2), 1..=max_len)
}

fn atoms_strategy() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0.0f64..3.0, 0.1f64..2.0), 1..6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn heap_equals_brute_force(primes in primes_strategy(8), log_x in 1.0f64..(1e4f64).ln()) {
        let ds = DiscreteSystem::from_primes(primes.clone(), log_x);
        let s = enumerate_integers(&ds, log_x, DEFAULT_BUDGET).unwrap();
        let mut gens: Vec<f64> = primes.iter().flat_map(|&(p, m)| std::iter::repeat(p.ln()).take(m as usize)).collect();
        gens.sort_by(|a, b| a.total_cmp(b));
        let mut b = Vec::new();
        brute(&gens, 0, 0.0, log_x, &mut b);
        b.sort_by(|a, c| a.total_cmp(c));
        prop_assert_eq!(s.count(log_x).unwrap(), b.len() as u64);
        // same multiset of values
        let flat: Vec<f64> = s.entries.iter().flat_map(|e| std::iter::repeat(e.log_value).take(e.multiplicity as usize)).collect();
        prop_assert_eq!(flat.len(), b.len());
        for (x, y) in flat.iter().zip(b.iter()) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn stream_is_non_decreasing_from_one(primes in primes_strategy(6), log_x in 0.0f64..8.0) {
        let ds = DiscreteSystem::from_primes(primes, log_x);
        let s = enumerate_integers(&ds, log_x, DEFAULT_BUDGET).unwrap();
        prop_assert_eq!(s.entries[0].log_value, 0.0);
        prop_assert_eq!(s.count(0.0).unwrap(), 1);
        prop_assert!(s.entries.windows(2).all(|w| w[1].log_value > w[0].log_value));
    }

    #[test]
    fn atomic_convolution_is_associative(a in atoms_strategy(), b in atoms_strategy(), c in atoms_strategy()) {
        let cfg = ConvolveConfig::new(1e-12);
        let m = |v: &Vec<(f64, f64)>| HalfLineMeasure::new(v.clone(), vec![]).unwrap();
        let v_max = 7.0;
        let left = mellin_convolve(&mellin_convolve(&m(&a), &m(&b), v_max, &cfg).unwrap(), &m(&c), v_max, &cfg).unwrap();
        let right = mellin_convolve(&m(&a), &mellin_convolve(&m(&b), &m(&c), v_max, &cfg).unwrap(), v_max, &cfg).unwrap();
        for i in 0..=70 {
            let v = 0.1 * i as f64 + 0.0123;
            prop_assert!((left.cumulative(v).unwrap() - right.cumulative(v).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn convolution_with_density_commutes(a in atoms_strategy(), lo in 0.1f64..1.0, len in 0.5f64..2.0, dens in 0.2f64..3.0) {
        let cfg = ConvolveConfig::new(1e-9);
        let atoms = HalfLineMeasure::new(a, vec![]).unwrap();
        let cont = HalfLineMeasure::new(vec![], vec![Piece::new(lo, lo + len, Density::Uniform { c: dens }, false)]).unwrap();
        let v_max = 5.0;
        let ab = mellin_convolve(&atoms, &cont, v_max, &cfg).unwrap();
        let ba = mellin_convolve(&cont, &atoms, v_max, &cfg).unwrap();
        for i in 0..=50 {
            let v = 0.1 * i as f64;
            prop_assert!((ab.cumulative(v).unwrap() - ba.cumulative(v).unwrap()).abs() < 1e-7);
        }
    }

    #[test]
    fn mobius_round_trip(primes in primes_strategy(8), log_x in 0.7f64..9.0) {
        let mut ps: Vec<f64> = primes.iter().map(|p| p.0).collect();
        ps.sort_by(|a, b| a.total_cmp(b));
        let floor = ps[0].ln();
        let pi = |v: f64| ps.iter().filter(|&&p| p.ln() <= v + 1e-12).count() as f64;
        let riemann = |v: f64| prime_to_riemann(pi, v, floor).unwrap();
        let back = riemann_to_prime(riemann, log_x, floor).unwrap();
        prop_assert!((back - pi(log_x)).abs() < 1e-9, "{} {}", back, pi(log_x));
    }

    #[test]
    fn every_phase_has_one_bucket(theta in -50.0f64..50.0) {
        let l = bucket(theta);
        prop_assert!(l < BUCKETS);
        let centre = l as f64 * PI / 80.0;
        let d = (theta - centre).rem_euclid(TAU);
        let d = if d > PI { d - TAU } else { d };
        prop_assert!(d >= -PI / 160.0 - 1e-12 && d < PI / 160.0 + 1e-12);
    }

    #[test]
    fn x_tilde_clearance_survives_re_enumeration(primes in primes_strategy(4), log_x in 2.5f64..6.5) {
        let ds = DiscreteSystem::from_primes(primes, log_x + 1.0);
        let xt = probe_x_tilde(&ds, log_x, DEFAULT_BUDGET).unwrap();
        let x = log_x.exp();
        prop_assert!(xt.x_tilde > x - 1.0 && xt.x_tilde < x);
        let s = enumerate_integers(&ds, (x + 1.0).ln(), DEFAULT_BUDGET).unwrap();
        let nearest = s.entries.iter().map(|e| (e.log_value.exp() - xt.x_tilde).abs()).fold(f64::INFINITY, f64::min);
        prop_assert!(nearest >= 1.0 / (xt.x_tilde * xt.x_tilde));
        prop_assert!(xt.certified);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn exp_star_counts_generalized_integers(primes in primes_strategy(8), log_x in 1.0f64..(1e4f64).ln()) {
        let ds = DiscreteSystem::from_primes(primes.clone(), log_x);
        let s = enumerate_integers(&ds, log_x, DEFAULT_BUDGET).unwrap();
        let n_measure = exp_star(&prime_power_measure(&ds.primes, log_x), log_x, &ConvolveConfig::new(1e-12)).unwrap();
        for i in 1..=40 {
            let v = log_x * (i as f64 - 0.5) / 40.0;
            let c = n_measure.cumulative(v).unwrap();
            prop_assert!((c - s.count(v).unwrap() as f64).abs() < 1e-6);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn wedge_lower_bound(
        omega in 0.0f64..1.5,
        theta0 in -PI..PI,
        raw in prop::collection::vec((0.0f64..1.0, -0.9999f64..0.9999, 0.0f64..2.0), 1..40),
    ) {
        let values: Vec<C64> = raw.iter().map(|&(r, a, _)| C64::from_polar(r, theta0 + a * omega)).collect();
        let weights: Vec<f64> = raw.iter().map(|x| x.2).collect();
        let w = wedge_integral(&values, &weights, theta0, omega).unwrap();
        prop_assert!(w.rho >= w.lower_bound * (1.0 - 1e-12) - 1e-300);
    }
}
