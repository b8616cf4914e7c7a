//! Cross-module invariants at desk scale, complementing the per-module
//! unit tests and the acceptance suite.

use polymerlab::bridge::{bridge_silt_tail, conditional_q_bridge};
use polymerlab::charge::{sample_charges, ChargeLaw, TiltParams};
use polymerlab::ldp::{
    expected_q_table, green_constants, q_histogram, sample_walk_summaries, wsaw_free_energy,
};
use polymerlab::numeric::{chi_square_sf, variance};
use polymerlab::partition::{free_energy_ladder, hamiltonian};
use polymerlab::stream::shard_rng;
use polymerlab::walk::{sample_walk, summarize, WalkPath, DEFAULT_ENUM_BUDGET};

use rand::Rng;

/// Test-local integer oracle: per-step return counts of the d-dim walk
/// by a spatial box DP.
fn return_counts(d: u32, n_max: u32) -> Vec<u128> {
    let side = 2 * n_max as usize + 1;
    let mut strides = vec![0usize; d as usize];
    let mut total = 1usize;
    for s in strides.iter_mut() {
        *s = total;
        total *= side;
    }
    let center = (total - 1) / 2;
    let mut cur = vec![0u128; total];
    cur[center] = 1;
    let mut out = vec![1u128];
    for _ in 1..=n_max {
        let mut next = vec![0u128; total];
        for (idx, &m) in cur.iter().enumerate() {
            if m == 0 {
                continue;
            }
            for &stride in &strides {
                let coord = (idx / stride) % side;
                if coord + 1 < side {
                    next[idx + stride] += m;
                }
                if coord > 0 {
                    next[idx - stride] += m;
                }
            }
        }
        cur = next;
        out.push(cur[center]);
    }
    out
}

#[test]
fn mean_silt_identity_is_integer_exact_up_to_n10() {
    // (2d)^n E[Q_n] = n (2d)^n + 2 Σ_{r<n} (n-r) N_r (2d)^{n-r}, as
    // integers, for d = 1, 2, 3 and n <= 10
    for d in 1..=3u32 {
        let n_max = 10u32;
        let counts = return_counts(d, n_max);
        for n in [4u32, 7, 10] {
            let hist = q_histogram(d, n, DEFAULT_ENUM_BUDGET).unwrap();
            let total_q: u128 = hist
                .counts
                .iter()
                .enumerate()
                .map(|(q, &c)| q as u128 * c as u128)
                .sum();
            let paths = (2 * d as u128).pow(n);
            let mut rhs: u128 = n as u128 * paths;
            for r in 1..n {
                rhs += 2 * (n - r) as u128 * counts[r as usize] * (2 * d as u128).pow(n - r);
            }
            assert_eq!(total_q, rhs, "d={d} n={n}");
            // float production table agrees
            let table = expected_q_table(d, n).unwrap();
            let exact = total_q as f64 / paths as f64;
            assert!((table[n as usize] - exact).abs() <= 1e-11 * exact);
        }
    }
}

#[test]
fn step_frequencies_are_uniform_chi_square() {
    // 10^6 sampled steps per dimension; p-value must clear 1e-6
    for d in [2u32, 3] {
        let mut rng = shard_rng(31_337, d as u64);
        let mut counts = vec![0u64; 2 * d as usize];
        let walks = 1_000_000 / 20;
        for _ in 0..walks {
            let p = sample_walk(d, 20, &mut rng);
            for &c in p.codes() {
                counts[c as usize] += 1;
            }
        }
        let total: u64 = counts.iter().sum();
        let expect = total as f64 / (2 * d) as f64;
        let x2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expect) * (c as f64 - expect) / expect)
            .sum();
        let p_value = chi_square_sf(x2, 2 * d - 1);
        assert!(p_value > 1e-6, "d={d}: chi2 {x2}, p {p_value}");
    }
}

#[test]
fn silt_is_superadditive_under_concatenation() {
    let mut rng = shard_rng(9_000, 1);
    for _ in 0..500 {
        let n = rng.random_range(2..40u32);
        let m = rng.random_range(2..40u32);
        let a = sample_walk(2, n, &mut rng);
        let b = sample_walk(2, m, &mut rng);
        let mut codes = a.codes().to_vec();
        codes.extend_from_slice(b.codes());
        let joined = WalkPath::from_codes(2, codes).unwrap();
        let qa = summarize(&a, 1).unwrap().q;
        let qb = summarize(&b, 1).unwrap().q;
        let qj = summarize(&joined, 1).unwrap().q;
        assert!(qj >= qa + qb, "Q_{{n+m}} = {qj} < {qa} + {qb}");
    }
}

#[test]
fn hamiltonian_identity_ten_thousand_pairs() {
    let mut rng = shard_rng(77, 0);
    let law = ChargeLaw::StandardGaussian;
    for _ in 0..10_000 {
        let n = rng.random_range(2..48u32);
        let path = sample_walk(2, n, &mut rng);
        let charges = sample_charges(&law, 0.4, n as usize, &mut rng);
        let h = hamiltonian(&path, &charges).unwrap();
        let sq: f64 = charges.iter().map(|c| c * c).sum();
        assert!(
            (h.square - (2.0 * h.pair + sq)).abs() <= 1e-9 * (1.0 + h.square.abs()),
            "identity broke at n={n}"
        );
    }
}

#[test]
fn d2_silt_variance_scale_is_stable() {
    // Var(Q_n)/n^2 approximately constant across n = 2^8..2^12
    let mut ratios = Vec::new();
    for k in 8..=12u32 {
        let n = 1u32 << k;
        let s = sample_walk_summaries(2, n, 30_000, 4_242 + k as u64, 2, false, None);
        let qs: Vec<f64> = s.q.iter().map(|&q| q as f64).collect();
        ratios.push(variance(&qs) / (n as f64).powi(2));
    }
    let max = ratios.iter().cloned().fold(f64::MIN, f64::max);
    let min = ratios.iter().cloned().fold(f64::MAX, f64::min);
    assert!(
        max / min < 1.5,
        "Var(Q)/n^2 drifted: {ratios:?} (max/min {:.3})",
        max / min
    );
}

#[test]
fn d3_wsaw_gap_positive_and_increasing_in_u() {
    // λ_3 u - a_n(u) is positive and grows with u on exact rungs
    let lambda3 = green_constants(3, 1e-3).unwrap().lambda_d;
    let us = [1e-3, 3e-3, 1e-2, 3e-2];
    let gaps: Vec<f64> = us
        .iter()
        .map(|&u| {
            let a = wsaw_free_energy(3, u, &[8], 1, 1, 1, DEFAULT_ENUM_BUDGET)
                .unwrap()
                .rungs[0]
                .a_n;
            lambda3 * u - a
        })
        .collect();
    assert!(gaps.iter().all(|&g| g > 0.0), "gaps {gaps:?}");
    assert!(
        gaps.windows(2).all(|w| w[1] > w[0]),
        "gaps not increasing: {gaps:?}"
    );
    // a_n(u)/u sits in [1, λ_3 + tol] and is non-increasing in u
    let ratios: Vec<f64> = us
        .iter()
        .zip(&gaps)
        .map(|(&u, &g)| (lambda3 * u - g) / u)
        .collect();
    assert!(ratios.iter().all(|&r| r >= 1.0 && r <= lambda3 + 0.05));
    assert!(ratios.windows(2).all(|w| w[1] <= w[0] + 1e-12));
}

#[test]
fn ladder_zero_bias_collapsed_and_unit_bias_extended() {
    let law = ChargeLaw::StandardGaussian;
    // δ = 0, β = 1: collapsed; a_n small and shrinking in magnitude
    let res = free_energy_ladder(
        &law,
        TiltParams::new(0.0, 1.0).unwrap(),
        2,
        &[16, 32, 64, 128],
        20_000,
        5,
        2,
    )
    .unwrap();
    // finite-n collapse signature: a_n < 0, shrinking in magnitude as
    // the slow log corrections decay, and the slope indistinguishable
    // from a non-positive F*
    let mags: Vec<f64> = res.rungs.iter().map(|r| r.a_n.abs()).collect();
    assert!(res.rungs.iter().all(|r| r.a_n < 0.0));
    assert!(mags.last().unwrap() < mags.first().unwrap(), "{mags:?}");
    assert!(res.f_star <= 3.0 * res.f_star_err);
    assert!(res.sandwich_ok);

    // δ = 1, β = 0.05 << β_c(1): extended; top rung strictly positive
    let res = free_energy_ladder(
        &law,
        TiltParams::new(1.0, 0.05).unwrap(),
        2,
        &[16, 32, 64, 128],
        20_000,
        6,
        2,
    )
    .unwrap();
    let top = res.rungs.last().unwrap();
    assert!(
        top.a_n > 3.0 * top.std_error,
        "a_n = {} +- {}",
        top.a_n,
        top.std_error
    );
}

#[test]
fn conditional_bridge_silt_trends() {
    // Ê[Q_m | B_m]/m grows toward λ_3 and stays below 1.05 λ_3
    let lambda3 = 2.0327721;
    let series =
        conditional_q_bridge(3, &[64, 128, 256], 400_000, 5, 2, Some(lambda3), 0.05).unwrap();
    let means: Vec<f64> = series.rungs.iter().map(|r| r.mean_q_over_m).collect();
    assert!(means.windows(2).all(|w| w[1] > w[0]), "means {means:?}");
    for r in &series.rungs {
        assert!(r.mean_q_over_m >= 1.0);
        assert!(!r.above_reference, "m={}: {}", r.m, r.mean_q_over_m);
    }
}

#[test]
fn bridge_silt_tail_series_approaches_one() {
    // ε = 10: certain; ε = 0.25: increasing toward 1 within noise
    let wide = bridge_silt_tail(2, &[64], 10.0, 100_000, 7, 2).unwrap();
    assert!((wide.rungs[0].p_hat - 1.0).abs() < 1e-12);

    let tail = bridge_silt_tail(2, &[64, 128, 256], 0.25, 300_000, 7, 2).unwrap();
    let ps: Vec<f64> = tail.rungs.iter().map(|r| r.p_hat).collect();
    let ses: Vec<f64> = tail.rungs.iter().map(|r| r.std_error).collect();
    for i in 1..ps.len() {
        assert!(
            ps[i] >= ps[i - 1] - 3.0 * (ses[i] + ses[i - 1]),
            "series not increasing within noise: {ps:?}"
        );
    }
    assert!(ps[0] > 0.5 && ps.last().unwrap() < &1.0);
}
