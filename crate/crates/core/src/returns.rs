//! Exact return probabilities p_r = P(S_r = 0) of simple random walk.
//!
//! Two exact routes are implemented. The spatial box DP is the direct
//! definition but needs (2r+1)^d cells, which is hopeless for the table
//! sizes the asymptotic checks require (r up to 2^14 in d = 2 and 3).
//! The production route conditions on how many steps each coordinate
//! receives: the step counts are multinomial, and given them the
//! coordinates are independent 1-d walks, so
//!
//!   p_d(r) = sum_k Binom(r, 1/d)(k) * p_1(k) * p_{d-1}(r - k),
//!
//! an exact convolution evaluated with mode-centred binomial weights and
//! compensated summation. Both routes agree to ~1e-12 where the box DP
//! is feasible; the unit tests pin that down.

use crate::error::{Error, Result};
use crate::numeric::Accumulator;

/// p_r for r = 0..=n_max in dimension d.
pub fn return_probabilities(d: u32, n_max: u32) -> Result<Vec<f64>> {
    if d == 0 || d as usize > crate::walk::MAX_DIM {
        return Err(Error::InvalidInput(format!("unsupported dimension {d}")));
    }
    if n_max > 1 << 20 {
        return Err(Error::BudgetExceeded {
            required: (n_max as f64).powi(2),
            budget: 1 << 40,
        });
    }
    let one_dim = one_dimensional(n_max);
    if d == 1 {
        return Ok(one_dim);
    }
    let ln_fact = ln_factorials(n_max as usize);
    let mut cur = one_dim.clone();
    for dim in 2..=d {
        cur = lift_dimension(dim, &one_dim, &cur, &ln_fact);
    }
    Ok(cur)
}

/// 1-d box dynamic program; probability leaves the radius-r box only
/// after step r, so the table is exact.
fn one_dimensional(n_max: u32) -> Vec<f64> {
    let side = 2 * n_max as usize + 1;
    let center = n_max as usize;
    let mut cur = vec![0.0f64; side];
    let mut next = vec![0.0f64; side];
    cur[center] = 1.0;
    let mut out = Vec::with_capacity(n_max as usize + 1);
    out.push(1.0);
    for r in 1..=n_max as usize {
        for x in center.saturating_sub(r)..=(center + r).min(side - 1) {
            let left = if x > 0 { cur[x - 1] } else { 0.0 };
            let right = if x + 1 < side { cur[x + 1] } else { 0.0 };
            next[x] = 0.5 * (left + right);
        }
        core::mem::swap(&mut cur, &mut next);
        out.push(cur[center]);
    }
    out
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut acc = Accumulator::new();
    let mut out = Vec::with_capacity(n + 1);
    out.push(0.0);
    for k in 1..=n {
        acc.add((k as f64).ln());
        out.push(acc.value());
    }
    out
}

/// One convolution level: probabilities for dimension `dim` from the
/// 1-d table and the (dim-1) table.
fn lift_dimension(dim: u32, one_dim: &[f64], prev: &[f64], ln_fact: &[f64]) -> Vec<f64> {
    let n_max = prev.len() - 1;
    let inv_d = 1.0 / dim as f64;
    let ln_p = inv_d.ln();
    let ln_q = (1.0 - inv_d).ln();
    let mut out = vec![0.0f64; n_max + 1];
    out[0] = 1.0;
    for r in 1..=n_max {
        if r % 2 == 1 {
            continue; // odd steps cannot return
        }
        // binomial weights, expanded outward from the mode until the
        // remaining terms are negligible
        let mode = (((r + 1) as f64) * inv_d).floor() as usize;
        let mode = mode.min(r) & !1usize; // even k only
        let ln_w_mode = ln_fact[r] - ln_fact[mode] - ln_fact[r - mode]
            + mode as f64 * ln_p
            + (r - mode) as f64 * ln_q;
        let w_mode = ln_w_mode.exp();
        let cutoff = w_mode * 1e-18;
        let mut acc = Accumulator::new();
        // ratio for a +2 move in k: w(k+2)/w(k)
        let ratio_up = |k: usize| {
            ((r - k) as f64) * ((r - k - 1) as f64) / (((k + 1) as f64) * ((k + 2) as f64))
                * (inv_d / (1.0 - inv_d))
                * (inv_d / (1.0 - inv_d))
        };
        let mut w = w_mode;
        let mut k = mode;
        loop {
            acc.add(w * one_dim[k] * prev[r - k]);
            if k + 2 > r {
                break;
            }
            w *= ratio_up(k);
            k += 2;
            if w < cutoff {
                break;
            }
        }
        let mut w = w_mode;
        let mut k = mode;
        while k >= 2 {
            w /= ratio_up(k - 2);
            k -= 2;
            if w < cutoff {
                break;
            }
            acc.add(w * one_dim[k] * prev[r - k]);
        }
        out[r] = acc.value();
    }
    out
}

/// Spatial box DP, exact but memory-bound; used as the cross-check
/// oracle and for small tables.
pub fn return_probabilities_box(d: u32, n_max: u32) -> Result<Vec<f64>> {
    let side = 2 * n_max as usize + 1;
    let cells = side
        .checked_pow(d)
        .filter(|&c| c <= 1 << 26)
        .ok_or_else(|| {
            Error::InvalidInput(format!(
                "box DP for d={d}, n={n_max} needs more than 2^26 cells; use return_probabilities"
            ))
        })?;
    let mut strides = vec![0usize; d as usize];
    let mut total = 1usize;
    for s in strides.iter_mut() {
        *s = total;
        total *= side;
    }
    debug_assert_eq!(total, cells);
    let center = (total - 1) / 2;
    let mut cur = vec![0.0f64; total];
    let mut next = vec![0.0f64; total];
    cur[center] = 1.0;
    let inv = 1.0 / (2.0 * d as f64);
    let mut out = Vec::with_capacity(n_max as usize + 1);
    out.push(1.0);
    for _ in 1..=n_max {
        for v in next.iter_mut() {
            *v = 0.0;
        }
        for (idx, &mass) in cur.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            // interior moves only: mass cannot reach the boundary before
            // the last recorded step, and boundary loss past n_max is
            // irrelevant to the table
            for (axis, &stride) in strides.iter().enumerate() {
                let coord = (idx / stride) % side;
                if coord + 1 < side {
                    next[idx + stride] += mass * inv;
                }
                if coord > 0 {
                    next[idx - stride] += mass * inv;
                }
                let _ = axis;
            }
        }
        core::mem::swap(&mut cur, &mut next);
        out.push(cur[center]);
    }
    Ok(out)
}

/// Integer path counts returning to the origin, for exact rational
/// cross-checks at small n.
#[cfg(test)]
pub(crate) fn return_counts_box(d: u32, n_max: u32) -> Vec<u128> {
    let side = 2 * n_max as usize + 1;
    let mut strides = vec![0usize; d as usize];
    let mut total = 1usize;
    for s in strides.iter_mut() {
        *s = total;
        total *= side;
    }
    let center = (total - 1) / 2;
    let mut cur = vec![0u128; total];
    let mut next = vec![0u128; total];
    cur[center] = 1;
    let mut out = Vec::with_capacity(n_max as usize + 1);
    out.push(1u128);
    for _ in 1..=n_max {
        for v in next.iter_mut() {
            *v = 0;
        }
        for idx in 0..total {
            let mass = cur[idx];
            if mass == 0 {
                continue;
            }
            for &stride in &strides {
                let coord = (idx / stride) % side;
                if coord + 1 < side {
                    next[idx + stride] += mass;
                }
                if coord > 0 {
                    next[idx - stride] += mass;
                }
            }
        }
        core::mem::swap(&mut cur, &mut next);
        out.push(cur[center]);
    }
    out
}
