//! Large-deviations laboratory for the self-intersection local time Q_n:
//! Green-function constants, exact and sampled distributions of Q_n, the
//! downward rate function I(t), self-avoiding-walk counts, the weakly
//! self-avoiding free energy with two-sided bounds, a Legendre-transform
//! consistency check, and upward range probes.

use rand::Rng;
use serde::Serialize;

use crate::enumerate::fold_walks;
use crate::error::{Error, Result};
use crate::numeric::{linear_fit, log_sum_exp, Accumulator};
use crate::returns::return_probabilities;
use crate::stream::{run_sharded, split_samples, LogMeanBatches};
use crate::walk::{enumeration_count, step_axis, step_delta, MAX_DIM};

/// λ_2 = 2/π exactly; there is no G_2.
pub const LAMBDA_2: f64 = 2.0 / core::f64::consts::PI;

#[derive(Debug, Clone, Serialize)]
pub struct GreenConstants {
    pub d: u32,
    /// Green function at the origin; None in d = 2 where it diverges
    pub g_d: Option<f64>,
    /// mean self-intersection density: 2/π in d = 2, 2 G_d - 1 above
    pub lambda_d: f64,
    /// truncation level of the return-probability sum
    pub truncation: u32,
    /// uncertainty of the tail completion
    pub tail_bound: f64,
}

/// G_d and λ_d with an explicit truncation level. The partial sum is
/// completed with a fitted C r^{-d/2} tail; the fit window carries a
/// doubling check and its spread bounds the completion error.
pub fn green_constants_at(d: u32, eps: f64, truncation: u32) -> Result<GreenConstants> {
    if d == 2 {
        return Ok(GreenConstants {
            d,
            g_d: None,
            lambda_d: LAMBDA_2,
            truncation: 0,
            tail_bound: 0.0,
        });
    }
    if d < 2 {
        return Err(Error::RecurrentDimension(d));
    }
    let r = truncation & !1; // even truncation
    if r < 64 {
        return Err(Error::InvalidInput(
            "green-constant fit needs a truncation level of at least 64".into(),
        ));
    }
    let p = return_probabilities(d, r)?;
    let mut partial = Accumulator::new();
    for &v in &p {
        partial.add(v);
    }
    // fit c_r = p_r r^{d/2} = C + b/r on the top window
    let half = d as f64 / 2.0;
    let window: Vec<(f64, f64)> = (r / 2..=r)
        .filter(|x| x % 2 == 0)
        .map(|x| (1.0 / x as f64, p[x as usize] * (x as f64).powf(half)))
        .collect();
    let xs: Vec<f64> = window.iter().map(|w| w.0).collect();
    let ys: Vec<f64> = window.iter().map(|w| w.1).collect();
    let fit = linear_fit(&xs, &ys);
    let c_est = fit.intercept;
    let spread = ys.iter().map(|&y| (y - c_est).abs()).fold(0.0f64, f64::max);
    // doubling check: the power-law model must be stable across the window
    let c_lo = p[(r / 2) as usize] * ((r / 2) as f64).powf(half);
    let c_hi = p[r as usize] * (r as f64).powf(half);
    let drift = (c_hi - c_lo).abs();
    // Euler-Maclaurin tail of sum over even r' > r of r'^{-d/2}
    let k = r as f64 / 2.0;
    let s = half;
    let tail_sum = (2.0f64).powf(-s)
        * (k.powf(1.0 - s) / (s - 1.0) - 0.5 * k.powf(-s) + s / 12.0 * k.powf(-s - 1.0));
    let tail = c_est * tail_sum;
    let tail_bound = (spread + drift) * tail_sum;
    if tail_bound > eps {
        return Err(Error::QuadratureNoConvergence {
            achieved: tail_bound,
            points: r as u64,
        });
    }
    let g = partial.value() + tail;
    Ok(GreenConstants {
        d,
        g_d: Some(g),
        lambda_d: 2.0 * g - 1.0,
        truncation: r,
        tail_bound,
    })
}

/// Green constants with the truncation level raised until the tail
/// completion error meets `eps`.
pub fn green_constants(d: u32, eps: f64) -> Result<GreenConstants> {
    if d == 2 {
        return green_constants_at(d, eps, 0);
    }
    let mut r = 2048u32;
    loop {
        match green_constants_at(d, eps, r) {
            Ok(g) => return Ok(g),
            Err(Error::QuadratureNoConvergence { .. }) if r < (1 << 15) => r *= 2,
            Err(e) => return Err(e),
        }
    }
}

/// Exact `E[Q_n] = n + 2 Σ_{r=1}^{n-1} (n-r) p_r` for every n <= n_max.
pub fn expected_q_table(d: u32, n_max: u32) -> Result<Vec<f64>> {
    let p = return_probabilities(d, n_max.saturating_sub(1))?;
    let mut a = Accumulator::new(); // Σ p_r, r >= 1
    let mut b = Accumulator::new(); // Σ r p_r
    let mut out = Vec::with_capacity(n_max as usize + 1);
    out.push(0.0);
    for n in 1..=n_max as usize {
        // prefix sums up to n-1
        if n >= 2 {
            let r = n - 1;
            a.add(p[r]);
            b.add(r as f64 * p[r]);
        }
        out.push(n as f64 + 2.0 * (n as f64 * a.value() - b.value()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpectedQ {
    pub d: u32,
    pub n: u32,
    pub value: f64,
    /// value/(n log n) in d = 2, value/n in d >= 3 — the combination the
    /// asymptotics pin down
    pub ratio: f64,
}

pub fn expected_q(d: u32, n: u32) -> Result<ExpectedQ> {
    let table = expected_q_table(d, n)?;
    let value = table[n as usize];
    let nf = n as f64;
    let ratio = if d == 2 {
        value / (nf * nf.ln())
    } else {
        value / nf
    };
    Ok(ExpectedQ { d, n, value, ratio })
}

/// Exact joint histogram of Q_n (and of Q_n restricted to bridges) over
/// all (2d)^n walks.
#[derive(Debug, Clone)]
pub struct ExactQHistogram {
    pub d: u32,
    pub n: u32,
    /// `counts[q]` = #walks with `Q_n = q`, q = 0..=n²
    pub counts: Vec<u64>,
    pub bridge_counts: Vec<u64>,
}

impl ExactQHistogram {
    pub fn total(&self) -> f64 {
        (2.0 * self.d as f64).powi(self.n as i32)
    }

    pub fn mean(&self) -> f64 {
        let mut acc = Accumulator::new();
        for (q, &c) in self.counts.iter().enumerate() {
            acc.add(q as f64 * c as f64);
        }
        acc.value() / self.total()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let mut acc = Accumulator::new();
        for (q, &c) in self.counts.iter().enumerate() {
            acc.add((q as f64 - m) * (q as f64 - m) * c as f64);
        }
        acc.value() / self.total()
    }

    /// P(Q_n <= q).
    pub fn p_le(&self, q: u64) -> f64 {
        let mut acc = Accumulator::new();
        for (v, &c) in self
            .counts
            .iter()
            .enumerate()
            .take((q as usize).saturating_add(1))
        {
            let _ = v;
            acc.add(c as f64);
        }
        acc.value() / self.total()
    }

    /// P(Q_n <= q, bridge).
    pub fn p_le_bridge(&self, q: u64) -> f64 {
        let mut acc = Accumulator::new();
        for &c in self
            .bridge_counts
            .iter()
            .take((q as usize).saturating_add(1))
        {
            acc.add(c as f64);
        }
        acc.value() / self.total()
    }

    /// log E[e^{-u Q_n}].
    pub fn log_wsaw(&self, u: f64) -> f64 {
        let terms: Vec<f64> = self
            .counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(q, &c)| (c as f64).ln() - u * q as f64)
            .collect();
        log_sum_exp(&terms) - self.total().ln()
    }

    /// log E[e^{-u Q_n} 1_bridge].
    pub fn log_wsaw_bridge(&self, u: f64) -> f64 {
        let terms: Vec<f64> = self
            .bridge_counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(q, &c)| (c as f64).ln() - u * q as f64)
            .collect();
        log_sum_exp(&terms) - self.total().ln()
    }

    /// nonzero entries as (q, count) pairs.
    pub fn nonzero(&self) -> Vec<(u64, u64)> {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(q, &c)| (q as u64, c))
            .collect()
    }
}

pub fn q_histogram(d: u32, n: u32, budget: u64) -> Result<ExactQHistogram> {
    let len = (n as usize) * (n as usize) + 1;
    let (counts, bridge_counts) = fold_walks(
        d,
        n,
        budget,
        || (vec![0u64; len], vec![0u64; len]),
        |acc, st| {
            acc.0[st.q as usize] += 1;
            if st.is_bridge() {
                acc.1[st.q as usize] += 1;
            }
        },
        |mut a, b| {
            for (x, y) in a.0.iter_mut().zip(&b.0) {
                *x += y;
            }
            for (x, y) in a.1.iter_mut().zip(&b.1) {
                *x += y;
            }
            a
        },
    )?;
    Ok(ExactQHistogram {
        d,
        n,
        counts,
        bridge_counts,
    })
}

/// Sampled per-walk summaries used by the MC estimators.
#[derive(Debug, Clone)]
pub struct WalkSamples {
    pub d: u32,
    pub n: u32,
    pub q: Vec<u32>,
    pub bridge: Vec<bool>,
    /// distinct sites; filled only when requested
    pub range: Vec<u32>,
    /// per (A, θ) probes: trimmed range and trimmed time, when requested
    pub trimmed: Option<(u32, Vec<u32>, Vec<u32>)>,
}

pub fn sample_walk_summaries(
    d: u32,
    n: u32,
    samples: u64,
    seed: u64,
    shards: u32,
    want_range: bool,
    trim: Option<u32>,
) -> WalkSamples {
    let per_shard = split_samples(samples, shards);
    let parts: Vec<(Vec<u32>, Vec<bool>, Vec<u32>, Vec<u32>, Vec<u32>)> =
        run_sharded(seed, shards, |s, mut rng| {
            let total = per_shard[s as usize] as usize;
            let mut q = Vec::with_capacity(total);
            let mut bridge = Vec::with_capacity(total);
            let mut range = Vec::new();
            let mut trange = Vec::new();
            let mut ttime = Vec::new();
            let mut counts: rustc_hash::FxHashMap<[i32; MAX_DIM], u32> =
                rustc_hash::FxHashMap::default();
            for _ in 0..total {
                counts.clear();
                let mut pos = [0i32; MAX_DIM];
                let mut s1 = 0i32;
                let mut min1 = i32::MAX;
                let mut max1 = i32::MIN;
                for i in 0..n {
                    let code = rng.random_range(0..2 * d as u8);
                    pos[step_axis(code)] += step_delta(code);
                    if step_axis(code) == 0 {
                        s1 = pos[0];
                    }
                    if i + 1 < n {
                        min1 = min1.min(pos[0]);
                        max1 = max1.max(pos[0]);
                    }
                    *counts.entry(pos).or_insert(0) += 1;
                }
                let mut qq: u64 = 0;
                for &c in counts.values() {
                    qq += c as u64 * c as u64;
                }
                q.push(qq as u32);
                bridge.push(s1 >= 1 && (n == 1 || (min1 >= 1 && max1 <= s1 - 1)));
                if want_range {
                    range.push(counts.len() as u32);
                }
                if let Some(a) = trim {
                    let mut tr = 0u32;
                    let mut tt = 0u32;
                    for &c in counts.values() {
                        if c <= a {
                            tr += 1;
                            tt += c;
                        }
                    }
                    trange.push(tr);
                    ttime.push(tt);
                }
            }
            (q, bridge, range, trange, ttime)
        });
    let mut q = Vec::new();
    let mut bridge = Vec::new();
    let mut range = Vec::new();
    let mut trange = Vec::new();
    let mut ttime = Vec::new();
    for (a, b, c, tr, tt) in parts {
        q.extend(a);
        bridge.extend(b);
        range.extend(c);
        trange.extend(tr);
        ttime.extend(tt);
    }
    WalkSamples {
        d,
        n,
        q,
        bridge,
        range,
        trimmed: trim.map(|a| (a, trange, ttime)),
    }
}

#[derive(Debug, Clone, Serialize)]
pub enum QMethod {
    ExactEnum,
    Mc {
        samples: u64,
    },
    /// self-normalized exponential tilt e^{-γQ}; γ defaults to the
    /// mean-matching solution per target point
    TiltedMc {
        gamma: Option<f64>,
        samples: u64,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct TailPoint {
    pub t: f64,
    pub p_hat: f64,
    pub std_error: f64,
    /// -(1/n) log p_hat when p_hat > 0
    pub exponent: Option<f64>,
    /// Chernoff/Legendre exponent bound from the (empirical) log-MGF at
    /// the mean-matched tilt: a lower bound on the finite-n exponent
    pub chernoff_exponent: Option<f64>,
    /// matched tilt and its weight ESS (tilted method)
    pub gamma: Option<f64>,
    pub ess: Option<f64>,
    /// set when p_hat = 0 and only a bound is reported
    pub one_sided: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct QDistribution {
    pub d: u32,
    pub n: u32,
    pub mean: f64,
    pub variance: f64,
    pub tails: Vec<TailPoint>,
    /// exact histogram as (q, count) pairs, exact method only
    pub histogram: Option<Vec<(u64, u64)>>,
}

/// Chernoff exponent sup_γ [-γ t - (1/n) log Z(γ)] with Z the exact or
/// empirical MGF of -Q; concave in γ, solved by ternary search.
fn chernoff_exponent(log_mgf: impl Fn(f64) -> f64, t: f64, n: u32) -> f64 {
    let f = |g: f64| -g * t - log_mgf(g) / n as f64;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    // expand until the maximum is bracketed, then search one doubling
    // past the last growth
    while f(hi * 2.0) > f(hi) && hi < 1e4 {
        hi *= 2.0;
    }
    hi *= 2.0;
    for _ in 0..200 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if f(m1) < f(m2) {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    f(0.5 * (lo + hi)).max(0.0)
}

/// Solve E_γ[Q] = t n for γ by bisection on the decreasing tilted mean.
fn match_tilted_mean(tilted_mean: impl Fn(f64) -> f64, target: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    if tilted_mean(lo) <= target {
        return 0.0;
    }
    while tilted_mean(hi) > target && hi < 1e4 {
        hi *= 2.0;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if tilted_mean(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn q_distribution(
    d: u32,
    n: u32,
    method: &QMethod,
    t_grid: &[f64],
    seed: u64,
    shards: u32,
    budget: u64,
) -> Result<QDistribution> {
    match method {
        QMethod::ExactEnum => {
            let hist = q_histogram(d, n, budget)?;
            let total = hist.total();
            let log_mgf = |g: f64| hist.log_wsaw(g); // log E e^{-gQ}
            let tails = t_grid
                .iter()
                .map(|&t| {
                    let q = (t * n as f64 + 1e-9).floor() as u64;
                    let p = hist.p_le(q);
                    TailPoint {
                        t,
                        p_hat: p,
                        std_error: 0.0,
                        exponent: (p > 0.0).then(|| (-p.ln() / n as f64).max(0.0)),
                        chernoff_exponent: Some(chernoff_exponent(&log_mgf, t, n)),
                        gamma: None,
                        ess: Some(total),
                        one_sided: p == 0.0,
                    }
                })
                .collect();
            Ok(QDistribution {
                d,
                n,
                mean: hist.mean(),
                variance: hist.variance(),
                tails,
                histogram: Some(hist.nonzero()),
            })
        }
        QMethod::Mc { samples } | QMethod::TiltedMc { samples, .. } => {
            let tilted = matches!(method, QMethod::TiltedMc { .. });
            let fixed_gamma = match method {
                QMethod::TiltedMc { gamma, .. } => *gamma,
                _ => None,
            };
            let s = sample_walk_summaries(d, n, *samples, seed, shards, false, None);
            let qs: Vec<f64> = s.q.iter().map(|&q| q as f64).collect();
            let mean = crate::numeric::mean(&qs);
            let variance = crate::numeric::variance(&qs);
            let m = *samples as f64;
            let log_mgf = |g: f64| {
                let terms: Vec<f64> = qs.iter().map(|&q| -g * q).collect();
                log_sum_exp(&terms) - m.ln()
            };
            let tilted_mean = |g: f64| {
                let logs: Vec<f64> = qs.iter().map(|&q| -g * q).collect();
                let norm = log_sum_exp(&logs);
                qs.iter()
                    .zip(&logs)
                    .map(|(&q, &l)| q * (l - norm).exp())
                    .sum::<f64>()
            };
            let tails = t_grid
                .iter()
                .map(|&t| {
                    let cut = t * n as f64 + 1e-9;
                    let hits = s.q.iter().filter(|&&q| (q as f64) <= cut).count() as f64;
                    let p = hits / m;
                    let se = (p * (1.0 - p) / m).sqrt();
                    let (gamma, chernoff, ess) = if tilted {
                        let g = fixed_gamma
                            .unwrap_or_else(|| match_tilted_mean(&tilted_mean, t * n as f64));
                        let logs: Vec<f64> = qs.iter().map(|&q| -g * q).collect();
                        let ess = (2.0 * log_sum_exp(&logs)
                            - log_sum_exp(&logs.iter().map(|&l| 2.0 * l).collect::<Vec<_>>()))
                        .exp();
                        (Some(g), Some(chernoff_exponent(&log_mgf, t, n)), Some(ess))
                    } else {
                        (None, None, None)
                    };
                    TailPoint {
                        t,
                        p_hat: p,
                        std_error: se,
                        exponent: (p > 0.0).then(|| (-p.ln() / n as f64).max(0.0)),
                        chernoff_exponent: chernoff,
                        gamma,
                        ess,
                        one_sided: p == 0.0,
                    }
                })
                .collect();
            Ok(QDistribution {
                d,
                n,
                mean,
                variance,
                tails,
                histogram: None,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RateKind {
    IOfT,
    JOfS,
}

#[derive(Debug, Clone, Serialize)]
pub struct RatePoint {
    pub t: f64,
    pub n: u32,
    /// finite-n estimate -(1/n) log P̂; None when no mass was seen
    pub estimate: Option<f64>,
    pub std_error: f64,
    /// when P̂ = 0: the exponent is at least this (rule-of-three bound)
    pub lower_bound_only: Option<f64>,
    /// bridge-restricted exponent -(1/n) log P̂(Q <= tn, bridge): a
    /// certified upper bound sequence for I(t)
    pub bridge_upper: Option<f64>,
    pub exact: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RateCurve {
    pub kind: RateKind,
    pub d: u32,
    pub points: Vec<RatePoint>,
}

#[derive(Debug, Clone, Serialize)]
pub enum RateMethod {
    Exact,
    Mc { samples: u64 },
}

/// Downward rate curve Î_n(t) = -(1/n) log P̂(Q_n <= tn) on a (t, n)
/// grid, with the bridge-superadditive companion bounds.
pub fn rate_function(
    d: u32,
    t_grid: &[f64],
    ns: &[u32],
    method: &RateMethod,
    seed: u64,
    shards: u32,
    budget: u64,
) -> Result<RateCurve> {
    if t_grid.iter().any(|&t| t < 1.0) {
        return Err(Error::InvalidInput("rate function needs t >= 1".into()));
    }
    let mut points = Vec::new();
    for &n in ns {
        match method {
            RateMethod::Exact => {
                let hist = q_histogram(d, n, budget)?;
                for &t in t_grid {
                    let q = (t * n as f64 + 1e-9).floor() as u64;
                    let p = hist.p_le(q);
                    let pb = hist.p_le_bridge(q);
                    points.push(RatePoint {
                        t,
                        n,
                        estimate: (p > 0.0).then(|| (-p.ln() / n as f64).max(0.0)),
                        std_error: 0.0,
                        lower_bound_only: None,
                        bridge_upper: (pb > 0.0).then(|| -pb.ln() / n as f64),
                        exact: true,
                    });
                }
            }
            RateMethod::Mc { samples } => {
                let s = sample_walk_summaries(d, n, *samples, seed ^ n as u64, shards, false, None);
                let m = *samples as f64;
                for &t in t_grid {
                    let cut = t * n as f64 + 1e-9;
                    let hits = s.q.iter().filter(|&&q| (q as f64) <= cut).count() as f64;
                    let bhits =
                        s.q.iter()
                            .zip(&s.bridge)
                            .filter(|(&q, &b)| b && (q as f64) <= cut)
                            .count() as f64;
                    let p = hits / m;
                    let se_exp = if hits > 0.0 {
                        ((1.0 - p) / hits).sqrt() / n as f64
                    } else {
                        f64::INFINITY
                    };
                    points.push(RatePoint {
                        t,
                        n,
                        estimate: (hits > 0.0).then(|| (-p.ln() / n as f64).max(0.0)),
                        std_error: se_exp,
                        lower_bound_only: (hits == 0.0).then(|| -(3.0 / m).ln() / n as f64),
                        bridge_upper: (bhits > 0.0).then(|| -(bhits / m).ln() / n as f64),
                        exact: false,
                    });
                }
            }
        }
    }
    Ok(RateCurve {
        kind: RateKind::IOfT,
        d,
        points,
    })
}

/// Exact self-avoiding-walk counts c_1..c_n by backtracking with
/// immediate-reversal pruning.
pub fn saw_counts(d: u32, n_max: u32, budget: u64) -> Result<Vec<u64>> {
    // cost is the SAW tree itself; bound it crudely by 2d (2d-1)^{n-1}
    let log_nodes = (2.0 * d as f64).ln() + (n_max as f64 - 1.0) * (2.0 * d as f64 - 1.0).ln();
    if log_nodes > (budget as f64).ln() {
        return Err(Error::BudgetExceeded {
            required: log_nodes.exp(),
            budget,
        });
    }
    use crate::board::CountGrid;
    struct Env {
        grid: CountGrid,
        counts: Vec<u64>,
        n_max: usize,
    }
    fn dfs(env: &mut Env, idx: usize, prev_code: u8, depth: usize, d: u32) {
        for code in 0..2 * d as u8 {
            if depth > 0 && code == prev_code ^ 1 {
                continue; // immediate reversal always self-intersects
            }
            let nxt = env.grid.step(idx, code);
            if env.grid.counts[nxt] != 0 {
                continue;
            }
            env.counts[depth] += 1;
            if depth + 1 < env.n_max {
                env.grid.counts[nxt] = 1;
                dfs(env, nxt, code, depth + 1, d);
                env.grid.counts[nxt] = 0;
            }
        }
    }
    let mut env = Env {
        grid: CountGrid::new(d, n_max),
        counts: vec![0u64; n_max as usize],
        n_max: n_max as usize,
    };
    let center = env.grid.center();
    env.grid.counts[center] = 1;
    dfs(&mut env, center, 0, 0, d);
    Ok(env.counts)
}

#[derive(Debug, Clone, Serialize)]
pub struct WsawRung {
    pub n: u32,
    /// a_n = -(1/n) log Ê[e^{-u Q_n}]; a certified lower bound for
    /// f_wsaw(u) on exact rungs (n a_n is superadditive)
    pub a_n: f64,
    pub std_error: f64,
    pub exact: bool,
    /// b_n = -(1/n) log Ê[e^{-u Q_n} 1_bridge]: certified upper bound
    /// (bridge concatenation makes n b_n subadditive)
    pub bridge_upper: Option<f64>,
    pub bridge_std_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct WsawResult {
    pub d: u32,
    pub u: f64,
    pub rungs: Vec<WsawRung>,
    /// [max exact/low-noise a_n, min bridge upper bound]
    pub interval: (f64, f64),
    pub notes: Vec<String>,
}

pub fn wsaw_free_energy(
    d: u32,
    u: f64,
    ladder: &[u32],
    samples: u64,
    seed: u64,
    shards: u32,
    budget: u64,
) -> Result<WsawResult> {
    if u < 0.0 {
        return Err(Error::InvalidInput("wsaw needs u >= 0".into()));
    }
    let mut rungs = Vec::new();
    let mut notes = Vec::new();
    for (i, &n) in ladder.iter().enumerate() {
        if enumeration_count(d, n, budget).is_ok() {
            let hist = q_histogram(d, n, budget)?;
            let a_n = -hist.log_wsaw(u) / n as f64;
            let lb = hist.log_wsaw_bridge(u);
            rungs.push(WsawRung {
                n,
                a_n,
                std_error: 0.0,
                exact: true,
                bridge_upper: lb.is_finite().then(|| -lb / n as f64),
                bridge_std_error: 0.0,
            });
        } else {
            let s = sample_walk_summaries(
                d,
                n,
                samples,
                seed.wrapping_add(i as u64),
                shards,
                false,
                None,
            );
            // batch the log-weights for an error bar on log E[e^{-uQ}]
            let mut batches = LogMeanBatches::new();
            let mut bridge_batches = LogMeanBatches::new();
            let bs = (s.q.len() / 32).max(1);
            for chunk_idx in 0..s.q.len().div_ceil(bs) {
                let lo = chunk_idx * bs;
                let hi = (lo + bs).min(s.q.len());
                let logs: Vec<f64> = s.q[lo..hi].iter().map(|&q| -u * q as f64).collect();
                batches.push_batch(&logs);
                let blogs: Vec<f64> = s.q[lo..hi]
                    .iter()
                    .zip(&s.bridge[lo..hi])
                    .map(|(&q, &b)| if b { -u * q as f64 } else { f64::NEG_INFINITY })
                    .collect();
                bridge_batches.push_batch(&blogs);
            }
            let a_n = -batches.log_mean() / n as f64;
            let lb = bridge_batches.log_mean();
            let bridges = s.bridge.iter().filter(|&&b| b).count();
            if bridges < 16 {
                notes.push(format!(
                    "rung n={n}: only {bridges} bridge hits; bridge bound is noisy"
                ));
            }
            rungs.push(WsawRung {
                n,
                a_n,
                std_error: batches.log_mean_se() / n as f64,
                exact: false,
                bridge_upper: lb.is_finite().then(|| -lb / n as f64),
                bridge_std_error: if lb.is_finite() {
                    bridge_batches.log_mean_se() / n as f64
                } else {
                    f64::INFINITY
                },
            });
        }
    }
    // interval from the certified sides, widened by 3σ on MC rungs
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for r in &rungs {
        lo = lo.max(r.a_n - 3.0 * r.std_error);
        if let Some(b) = r.bridge_upper {
            hi = hi.min(b + 3.0 * r.bridge_std_error);
        }
    }
    if u == 0.0 {
        // Z = 1 exactly at every rung
        lo = 0.0;
        hi = 0.0;
    }
    Ok(WsawResult {
        d,
        u,
        rungs,
        interval: (lo, hi),
        notes,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct VaradhanPoint {
    pub u: f64,
    /// -f̂(u) = (1/n) log Ê[e^{-uQ}]
    pub lhs: f64,
    /// sup over the t grid of [-t u - Î_n(t)]
    pub rhs: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VaradhanReport {
    pub d: u32,
    pub n: u32,
    pub points: Vec<VaradhanPoint>,
    pub max_abs_residual: f64,
    /// combined statistical error of both sides (0 for exact inputs)
    pub combined_err: f64,
    /// the grid sup is at most the true sup: the discretization bias of
    /// rhs is one-sided
    pub one_sided_bias: bool,
}

/// Legendre-transform consistency between a rate curve and a wsaw curve
/// computed at the same (d, n).
pub fn varadhan_residual(rate: &RateCurve, wsaw: &[WsawResult], n: u32) -> Result<VaradhanReport> {
    let d = rate.d;
    let at_n: Vec<&RatePoint> = rate.points.iter().filter(|p| p.n == n).collect();
    if at_n.is_empty() {
        return Err(Error::InvalidInput(format!(
            "rate curve has no points at n = {n}"
        )));
    }
    let mut points = Vec::new();
    let mut combined_err: f64 = 0.0;
    for w in wsaw {
        if w.d != d {
            return Err(Error::InvalidInput(format!(
                "wsaw curve at d = {} does not match rate curve d = {d}",
                w.d
            )));
        }
        let rung = w
            .rungs
            .iter()
            .find(|r| r.n == n)
            .ok_or_else(|| Error::InvalidInput(format!("wsaw curve has no rung at n = {n}")))?;
        let lhs = -rung.a_n;
        let mut rhs = f64::NEG_INFINITY;
        let mut rhs_err: f64 = 0.0;
        for p in &at_n {
            if let Some(i_hat) = p.estimate {
                let v = -p.t * w.u - i_hat;
                if v > rhs {
                    rhs = v;
                    rhs_err = p.std_error;
                }
            }
        }
        combined_err = combined_err.max(rung.std_error + rhs_err);
        points.push(VaradhanPoint {
            u: w.u,
            lhs,
            rhs,
            residual: lhs - rhs,
        });
    }
    let max_abs_residual = points
        .iter()
        .map(|p| p.residual.abs())
        .fold(0.0f64, f64::max);
    Ok(VaradhanReport {
        d,
        n,
        points,
        max_abs_residual,
        combined_err,
        one_sided_bias: true,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RangeProbePoint {
    pub s: f64,
    pub p_hat: f64,
    pub std_error: f64,
    pub exponent: Option<f64>,
    /// rule-of-three exponent bound when no hits were seen
    pub lower_bound_only: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RangeProbe {
    pub d: u32,
    pub n: u32,
    /// P̂(R_n >= s n) per s
    pub points: Vec<RangeProbePoint>,
    /// P̂(|R_{n,A}^-| >= s θ n, γ_{n,A}^- <= θ n) per s, when (A, θ) given
    pub trimmed: Option<(u32, f64, Vec<RangeProbePoint>)>,
    /// these probes gather evidence about conjectured behaviour
    pub note: String,
}

pub fn range_ld_probe(
    d: u32,
    n: u32,
    s_grid: &[f64],
    trim: Option<(u32, f64)>,
    samples: u64,
    seed: u64,
    shards: u32,
) -> Result<RangeProbe> {
    if s_grid.iter().any(|&s| !(0.0..=1.0).contains(&s)) {
        return Err(Error::InvalidInput("range probe needs s in [0, 1]".into()));
    }
    if let Some((a, theta)) = trim {
        if a == 0 || theta <= 0.0 {
            return Err(Error::InvalidInput(
                "trimmed probe needs A >= 1 and theta > 0".into(),
            ));
        }
    }
    let s_samples = sample_walk_summaries(d, n, samples, seed, shards, true, trim.map(|t| t.0));
    let m = samples as f64;
    let point = |hits: f64| -> RangeProbePoint {
        let p = hits / m;
        RangeProbePoint {
            s: 0.0,
            p_hat: p,
            std_error: (p * (1.0 - p) / m).sqrt(),
            exponent: (hits > 0.0).then(|| (-p.ln() / n as f64).max(0.0)),
            lower_bound_only: (hits == 0.0).then(|| -(3.0 / m).ln() / n as f64),
        }
    };
    let points: Vec<RangeProbePoint> = s_grid
        .iter()
        .map(|&s| {
            let cut = s * n as f64 - 1e-9;
            let hits = s_samples.range.iter().filter(|&&r| r as f64 >= cut).count() as f64;
            RangeProbePoint { s, ..point(hits) }
        })
        .collect();
    let trimmed = trim.map(|(a, theta)| {
        let (_, ref trange, ref ttime) = *s_samples.trimmed.as_ref().unwrap();
        let pts = s_grid
            .iter()
            .map(|&s| {
                let r_cut = s * theta * n as f64 - 1e-9;
                let t_cut = theta * n as f64 + 1e-9;
                let hits = trange
                    .iter()
                    .zip(ttime)
                    .filter(|(&r, &t)| r as f64 >= r_cut && (t as f64) <= t_cut)
                    .count() as f64;
                RangeProbePoint { s, ..point(hits) }
            })
            .collect();
        (a, theta, pts)
    });
    Ok(RangeProbe {
        d,
        n,
        points,
        trimmed,
        note: "conjecture evidence: finite-n probe of upward range deviations".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::walk::DEFAULT_ENUM_BUDGET;

    #[test]
    fn lambda_2_is_two_over_pi() {
        let g = green_constants(2, 1e-6).unwrap();
        assert_eq!(g.lambda_d, LAMBDA_2);
        assert!(g.g_d.is_none());
    }

    #[test]
    fn g2_request_is_rejected_below_d2() {
        assert!(matches!(
            green_constants(1, 1e-4),
            Err(Error::RecurrentDimension(1))
        ));
    }

    #[test]
    fn g3_matches_reference_value() {
        // G_3 = 1.516386059... (Watson's integral)
        let g = green_constants(3, 1e-4).unwrap();
        let g3 = g.g_d.unwrap();
        assert!(
            (g3 - 1.5163860591).abs() < 5e-5,
            "G_3 = {g3}, tail bound {}",
            g.tail_bound
        );
        assert!((g.lambda_d - (2.0 * g3 - 1.0)).abs() < 1e-15);
        assert!(g.lambda_d > 1.0);
    }

    #[test]
    fn green_decreasing_in_dimension() {
        let g3 = green_constants(3, 1e-3).unwrap().g_d.unwrap();
        let g4 = green_constants(4, 1e-3).unwrap().g_d.unwrap();
        let g5 = green_constants(5, 1e-3).unwrap().g_d.unwrap();
        assert!(g3 > g4 && g4 > g5);
        assert!(g5 > 1.0);
    }

    #[test]
    fn expected_q_small_values() {
        // d=2: E[Q_2] = 2 (p_1 = 0), E[Q_4] = 5
        let t = expected_q_table(2, 4).unwrap();
        assert!((t[2] - 2.0).abs() < 1e-12);
        assert!((t[4] - 5.0).abs() < 1e-12);
        let e = expected_q(2, 4).unwrap();
        assert!((e.value - 5.0).abs() < 1e-12);
    }

    #[test]
    fn expected_q_matches_enumeration_exactly() {
        // integer-exact cross-check against brute force and the integer
        // return-count DP, for d in 1..3 and n <= 8
        for d in 1..=3u32 {
            let n_max = if d == 3 { 6 } else { 8 };
            let counts = crate::returns::return_counts_box(d, n_max);
            for n in 1..=n_max {
                let mut total_q: u128 = 0;
                let mut paths: u128 = 0;
                crate::walk::for_each_walk(d, n, DEFAULT_ENUM_BUDGET, |p| {
                    total_q += crate::walk::summarize(p, 1).unwrap().q as u128;
                    paths += 1;
                })
                .unwrap();
                // E[Q_n] (2d)^n = n (2d)^n + 2 Σ (n-r) N_r (2d)^{n-r}
                let mut rhs: u128 = n as u128 * paths;
                for r in 1..n {
                    let pow = (2 * d as u128).pow(n - r);
                    rhs += 2 * (n - r) as u128 * counts[r as usize] * pow;
                }
                assert_eq!(total_q, rhs, "d={d} n={n}");
                // and the float table agrees
                let t = expected_q_table(d, n).unwrap();
                let exact = total_q as f64 / paths as f64;
                assert!((t[n as usize] - exact).abs() < 1e-10 * exact);
            }
        }
    }

    #[test]
    fn q_histogram_d2_n4() {
        let h = q_histogram(2, 4, DEFAULT_ENUM_BUDGET).unwrap();
        assert_eq!(h.counts.iter().sum::<u64>(), 256);
        assert!((h.mean() - 5.0).abs() < 1e-12);
        // n=2: no collision possible
        let h2 = q_histogram(2, 2, DEFAULT_ENUM_BUDGET).unwrap();
        assert_eq!(h2.counts[2], 16);
        assert_eq!(h2.p_le(2), 1.0);
    }

    #[test]
    fn saw_counts_square_lattice() {
        let c = saw_counts(2, 10, DEFAULT_ENUM_BUDGET).unwrap();
        assert_eq!(&c[..6], &[4, 12, 36, 100, 284, 780]);
        assert_eq!(c[9], 44_100);
        // d=1: two monotone walks forever
        let c1 = saw_counts(1, 12, DEFAULT_ENUM_BUDGET).unwrap();
        assert!(c1.iter().all(|&x| x == 2));
        // submultiplicativity
        for n in 1..5usize {
            for m in 1..5usize {
                assert!(c[n + m - 1] <= c[n - 1] * c[m - 1]);
            }
        }
    }

    #[test]
    fn saw_count_equals_q_histogram_floor() {
        // Local times count i = 1..n, so {Q_n = n} = {S_1..S_n distinct}:
        // the path S_1 -> ... -> S_n is an (n-1)-step self-avoiding walk
        // and S_0 is one of the 2d neighbours of S_1, revisited or not.
        // Hence #{Q_n = n} = 2d * c_{n-1}, not c_n: integer-exact here.
        for n in [3u32, 6, 9] {
            let h = q_histogram(2, n, DEFAULT_ENUM_BUDGET).unwrap();
            let c = saw_counts(2, n, DEFAULT_ENUM_BUDGET).unwrap();
            assert_eq!(h.counts[n as usize], 4 * c[n as usize - 2], "n={n}");
        }
    }

    #[test]
    fn rate_function_exact_monotone_and_saw_anchor() {
        let ts = [1.0, 1.5, 2.0, 3.0];
        let curve =
            rate_function(2, &ts, &[8], &RateMethod::Exact, 0, 1, DEFAULT_ENUM_BUDGET).unwrap();
        let est: Vec<f64> = curve.points.iter().map(|p| p.estimate.unwrap()).collect();
        for w in est.windows(2) {
            assert!(w[0] >= w[1] - 1e-12, "I must be non-increasing in t");
        }
        // anchor at t = 1: P(Q_8 <= 8) = 4 c_7 / 4^8 (see the histogram
        // floor test for the S_0 bookkeeping)
        let c = saw_counts(2, 8, DEFAULT_ENUM_BUDGET).unwrap();
        let want = -((4.0 * c[6] as f64 / 4f64.powi(8)).ln()) / 8.0;
        assert!((est[0] - want).abs() < 1e-12);
        // bridge companion dominates: certified upper bound of I(t)
        for p in &curve.points {
            if let (Some(e), Some(b)) = (p.estimate, p.bridge_upper) {
                assert!(b >= e - 1e-12);
            }
        }
    }

    #[test]
    fn q_distribution_exact_and_mc_agree() {
        let ts = [1.0, 1.25, 1.75];
        let exact =
            q_distribution(2, 8, &QMethod::ExactEnum, &ts, 0, 1, DEFAULT_ENUM_BUDGET).unwrap();
        let mc = q_distribution(
            2,
            8,
            &QMethod::Mc { samples: 200_000 },
            &ts,
            77,
            4,
            DEFAULT_ENUM_BUDGET,
        )
        .unwrap();
        assert!((exact.mean - mc.mean).abs() < 0.05);
        for (a, b) in exact.tails.iter().zip(&mc.tails) {
            assert!(
                (a.p_hat - b.p_hat).abs() <= 5.0 * b.std_error.max(1e-4),
                "t={}: exact {} mc {}",
                a.t,
                a.p_hat,
                b.p_hat
            );
        }
        // chernoff exponent bounds the finite-n exponent from below
        for p in &exact.tails {
            if let (Some(e), Some(ch)) = (p.exponent, p.chernoff_exponent) {
                assert!(ch <= e + 1e-9, "t={}: chernoff {ch} vs exponent {e}", p.t);
                assert!(ch >= 0.0);
            }
        }
    }

    #[test]
    fn tilted_mc_matches_mean_and_reports_ess() {
        let qd = q_distribution(
            2,
            16,
            &QMethod::TiltedMc {
                gamma: None,
                samples: 50_000,
            },
            &[1.2],
            5,
            2,
            DEFAULT_ENUM_BUDGET,
        )
        .unwrap();
        let p = &qd.tails[0];
        assert!(p.gamma.unwrap() > 0.0);
        assert!(p.ess.unwrap() > 1.0);
        assert!(p.chernoff_exponent.unwrap() >= 0.0);
    }

    #[test]
    fn wsaw_zero_coupling_is_exactly_zero() {
        let w = wsaw_free_energy(2, 0.0, &[4, 8], 1_000, 3, 2, DEFAULT_ENUM_BUDGET).unwrap();
        for r in &w.rungs {
            assert_eq!(r.a_n, 0.0);
        }
        assert_eq!(w.interval, (0.0, 0.0));
    }

    #[test]
    fn wsaw_exact_rungs_sandwich_and_double() {
        // exact rungs in d = 2: a_n <= f <= b_n with a_{2n} >= a_n
        let u = 0.05;
        let w = wsaw_free_energy(2, u, &[4, 8], 10_000, 3, 2, DEFAULT_ENUM_BUDGET).unwrap();
        assert!(w.rungs.iter().all(|r| r.exact));
        let a4 = w.rungs[0].a_n;
        let a8 = w.rungs[1].a_n;
        assert!(a8 >= a4, "n a_n superadditive: a_8 = {a8} < a_4 = {a4}");
        for r in &w.rungs {
            let b = r.bridge_upper.unwrap();
            assert!(b >= r.a_n);
        }
        assert!(w.interval.0 <= w.interval.1);
    }

    #[test]
    fn wsaw_concave_in_u_on_exact_rung() {
        // -(1/n) log E[e^{-uQ}] is concave in u
        let us = [0.02, 0.04, 0.06, 0.08, 0.10];
        let a: Vec<f64> = us
            .iter()
            .map(|&u| {
                wsaw_free_energy(2, u, &[8], 1, 1, 1, DEFAULT_ENUM_BUDGET)
                    .unwrap()
                    .rungs[0]
                    .a_n
            })
            .collect();
        for w in a.windows(3) {
            assert!(w[2] - 2.0 * w[1] + w[0] <= 1e-12);
        }
    }

    #[test]
    fn varadhan_exact_residual_small() {
        // both sides from the exact Q_12 histogram; the residual is the
        // log-sum vs max gap, one-sided and shrinking in n, and stays
        // below 0.05 on the small-u grid where the transform matters
        let n = 12u32;
        let ts: Vec<f64> = (n..=n * n).map(|q| q as f64 / n as f64).collect();
        let rate =
            rate_function(2, &ts, &[n], &RateMethod::Exact, 0, 1, DEFAULT_ENUM_BUDGET).unwrap();
        let us = [0.001, 0.003, 0.01, 0.03];
        let wsaws: Vec<WsawResult> = us
            .iter()
            .map(|&u| wsaw_free_energy(2, u, &[n], 1, 1, 1, DEFAULT_ENUM_BUDGET).unwrap())
            .collect();
        let rep = varadhan_residual(&rate, &wsaws, n).unwrap();
        assert!(
            rep.max_abs_residual < 0.05,
            "residual {}",
            rep.max_abs_residual
        );
        // grid sup <= true sup: lhs - rhs >= 0 up to rounding
        for p in &rep.points {
            assert!(p.residual >= -1e-9, "u={}: residual {}", p.u, p.residual);
        }
    }

    #[test]
    fn varadhan_rejects_incompatible_inputs() {
        let rate = rate_function(
            2,
            &[1.0],
            &[6],
            &RateMethod::Exact,
            0,
            1,
            DEFAULT_ENUM_BUDGET,
        )
        .unwrap();
        let w = wsaw_free_energy(3, 0.1, &[6], 1, 1, 1, DEFAULT_ENUM_BUDGET).unwrap();
        assert!(varadhan_residual(&rate, &[w], 6).is_err());
    }

    #[test]
    fn range_probe_trivial_and_monotone_points() {
        let probe = range_ld_probe(2, 12, &[0.0, 0.5, 1.0], None, 20_000, 9, 2).unwrap();
        assert_eq!(probe.points[0].p_hat, 1.0);
        assert_eq!(probe.points[0].exponent.unwrap(), 0.0);
        assert!(probe.points[1].p_hat >= probe.points[2].p_hat);
    }

    #[test]
    fn range_probe_d1_full_stretch() {
        // R_n counts distinct sites over times 1..n, so R_n = n happens
        // exactly when S_1..S_n are distinct: 2d c_{n-1} = 4 walks in
        // d = 1 (monotone, or one turn through the origin at step 2).
        let n = 10u32;
        let probe = range_ld_probe(1, n, &[1.0], None, 400_000, 4, 2).unwrap();
        let p = probe.points[0].p_hat;
        let want = 4.0 * 2f64.powi(-(n as i32));
        assert!(
            (p - want).abs() < 5.0 * probe.points[0].std_error.max(1e-5),
            "p = {p}, want {want}"
        );
    }

    #[test]
    fn trimmed_range_probe_runs() {
        let probe = range_ld_probe(2, 16, &[0.2, 0.4], Some((2, 0.8)), 20_000, 13, 2).unwrap();
        let (a, theta, pts) = probe.trimmed.as_ref().unwrap();
        assert_eq!((*a, *theta), (2, 0.8));
        assert_eq!(pts.len(), 2);
        assert!(pts[0].p_hat >= pts[1].p_hat);
    }
}
