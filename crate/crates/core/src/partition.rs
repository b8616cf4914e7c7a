//! Annealed partition functions Z_n (tilted charges) and Z*_n
//! (charge-integrated weights), free-energy ladders for F and F*, phase
//! classification, and the critical-curve scan.
//!
//! Three routes are implemented with increasing reach:
//! * `z_exact` sums exp(Σ_x log g(ℓ_n(x))) over every walk, with g and
//!   g* evaluated through their own single-site tables;
//! * `z_double_enum` brute-forces the double sum over walks and charge
//!   tuples straight from the Hamiltonian, the ground-truth oracle;
//! * `z_mc` averages the per-walk weight over sampled walks, in log
//!   space with batch-means errors and an effective-sample-size flag.

use rand::Rng;
use serde::Serialize;

use crate::charge::{ChargeLaw, TiltParams};
use crate::enumerate::fold_walks;
use crate::error::{Error, Result};
use crate::numeric::Accumulator;
use crate::single_site::{GKind, SingleSiteTable};
use crate::stream::{run_sharded, split_samples, LogMeanBatches};
use crate::walk::{enumeration_count, step_axis, step_delta, WalkPath, MAX_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ExactEnum,
    DoubleEnum,
    Mc,
}

/// One log-scale partition-function estimate.
#[derive(Debug, Clone, Serialize)]
pub struct PartitionEstimate {
    pub n: u32,
    pub d: u32,
    pub log_value: f64,
    pub method: Method,
    /// standard error of `log_value`; exactly 0 for enumeration methods
    pub std_error: f64,
    pub samples: u64,
    pub seed: Option<u64>,
    pub shards: u32,
    /// effective sample size of the weight ensemble (MC only)
    pub ess: Option<f64>,
    /// set when ess < 100: flagged and excluded from extrapolations
    pub low_ess: bool,
}

/// Z and Z* for the same parameters.
#[derive(Debug, Clone, Serialize)]
pub struct ZPair {
    pub z: PartitionEstimate,
    pub z_star: PartitionEstimate,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Hamiltonian {
    /// pair form: Σ_{i<j} ω_i ω_j 1{S_i = S_j}
    pub pair: f64,
    /// square form: Σ_x (Σ_i ω_i 1{S_i = x})²
    pub square: f64,
}

/// Both Hamiltonians of a (path, charge) pair. The pair form is computed
/// by the O(n²) double loop and the square form from per-site sums, so
/// the identity square = 2·pair + Σω² is a genuine cross-check; it is
/// asserted here in debug builds.
pub fn hamiltonian(path: &WalkPath, charges: &[f64]) -> Result<Hamiltonian> {
    if path.len() != charges.len() {
        return Err(Error::LengthMismatch {
            path: path.len(),
            charges: charges.len(),
        });
    }
    let positions = path.positions();
    let mut pair = Accumulator::new();
    for i in 1..=path.len() {
        for j in (i + 1)..=path.len() {
            if positions[i] == positions[j] {
                pair.add(charges[i - 1] * charges[j - 1]);
            }
        }
    }
    let mut site_sums: rustc_hash::FxHashMap<[i32; MAX_DIM], f64> =
        rustc_hash::FxHashMap::default();
    for i in 1..=path.len() {
        *site_sums.entry(positions[i]).or_insert(0.0) += charges[i - 1];
    }
    let mut square = Accumulator::new();
    for s in site_sums.values() {
        square.add(s * s);
    }
    let h = Hamiltonian {
        pair: pair.value(),
        square: square.value(),
    };
    #[cfg(debug_assertions)]
    {
        let sq_charges: f64 = charges.iter().map(|c| c * c).sum();
        let rhs = 2.0 * h.pair + sq_charges;
        debug_assert!(
            (h.square - rhs).abs() <= 1e-9 * (1.0 + h.square.abs()),
            "hamiltonian identity violated: {} vs {}",
            h.square,
            rhs
        );
    }
    Ok(h)
}

/// Exact Z and Z* by enumeration over all (2d)^n walks, each route using
/// its own single-site table.
pub fn z_exact(law: &ChargeLaw, tilt: TiltParams, d: u32, n: u32, budget: u64) -> Result<ZPair> {
    let count = enumeration_count(d, n, budget)?;
    let g_star = SingleSiteTable::build(law, tilt, n, GKind::Star)?;
    let g_tilted = SingleSiteTable::build(law, tilt, n, GKind::Tilted)?;
    let (acc_star, acc_tilted) = fold_walks(
        d,
        n,
        budget,
        || (Accumulator::new(), Accumulator::new()),
        |acc, st| {
            let mut ls = 0.0;
            let mut lt = 0.0;
            for &cell in st.occupied {
                let c = st.grid.counts[cell];
                ls += g_star.log_value(c);
                lt += g_tilted.log_value(c);
            }
            acc.0.add(ls.exp());
            acc.1.add(lt.exp());
        },
        |mut a, b| {
            a.0.merge(&b.0);
            a.1.merge(&b.1);
            a
        },
    )?;
    let log_paths = n as f64 * (2.0 * d as f64).ln();
    let mk = |acc: &Accumulator| PartitionEstimate {
        n,
        d,
        log_value: acc.value().ln() - log_paths,
        method: Method::ExactEnum,
        std_error: 0.0,
        samples: count,
        seed: None,
        shards: 1,
        ess: None,
        low_ess: false,
    };
    Ok(ZPair {
        z: mk(&acc_tilted),
        z_star: mk(&acc_star),
    })
}

/// Brute-force double enumeration over walks and integer-lattice charge
/// tuples, for a whole grid of (δ, β) pairs in one sweep. For each tuple
/// the untilted probability, total charge W and square Hamiltonian H are
/// integers/exact products, and each pair contributes
/// P·e^{δW − βH} to Z* and the δ-tilted product to Z (which factors as
/// the same sum divided by M(δ)^n).
pub fn z_double_enum_grid(
    law: &ChargeLaw,
    tilts: &[TiltParams],
    d: u32,
    n: u32,
    budget: u64,
) -> Result<Vec<ZPair>> {
    let sup = law.lattice_support().ok_or_else(|| {
        Error::InvalidInput(format!(
            "double enumeration needs a finite-support law, got {}",
            law.id()
        ))
    })?;
    let walk_count = enumeration_count(d, n, budget)?;
    let log_tuples = n as f64 * (sup.scaled.len() as f64).ln();
    let log_total = (walk_count as f64).ln() + log_tuples;
    if log_total > (budget as f64).ln() + 1e-9 {
        return Err(Error::BudgetExceeded {
            required: log_total.exp(),
            budget,
        });
    }

    let kmin = *sup.scaled.iter().min().unwrap();
    let kmax = *sup.scaled.iter().max().unwrap();
    let kabs = kmin.abs().max(kmax.abs());
    let w_min = n as i64 * kmin;
    let w_len = (n as i64 * (kmax - kmin) + 1) as usize;
    let h_max = (n as i64 * kabs).pow(2) as usize;
    let denom = sup.denom as f64;
    // per-pair lookup tables over the integer ranges of W and H
    let exp_w: Vec<Vec<f64>> = tilts
        .iter()
        .map(|t| {
            (0..w_len)
                .map(|i| ((w_min + i as i64) as f64 / denom * t.delta).exp())
                .collect()
        })
        .collect();
    let exp_h: Vec<Vec<f64>> = tilts
        .iter()
        .map(|t| {
            (0..=h_max)
                .map(|h| (-(h as f64) / (denom * denom) * t.beta).exp())
                .collect()
        })
        .collect();

    struct Shard {
        sums: Vec<Accumulator>,
        slot_of_cell: Vec<u32>,
        slot_times: Vec<u32>,
    }

    let n_us = n as usize;
    let parts = fold_walks(
        d,
        n,
        budget,
        || Shard {
            sums: vec![Accumulator::new(); tilts.len()],
            slot_of_cell: Vec::new(),
            slot_times: vec![0u32; n_us],
        },
        |shard, st| {
            // slot-compress the visited cells for this walk
            if shard.slot_of_cell.len() != st.grid.counts.len() {
                shard.slot_of_cell = vec![u32::MAX; st.grid.counts.len()];
            }
            for (slot, &cell) in st.occupied.iter().enumerate() {
                shard.slot_of_cell[cell] = slot as u32;
            }
            for (t, &cell) in st.cell_at_time.iter().enumerate() {
                shard.slot_times[t] = shard.slot_of_cell[cell];
            }
            let range = st.occupied.len();

            // DFS over charge tuples with incremental P, W, H
            let mut site_sum = vec![0i64; range];
            let mut prob = vec![0.0f64; n_us + 1];
            prob[0] = 1.0;
            let mut value = vec![0usize; n_us]; // support index per depth
            let mut w: i64 = 0;
            let mut h: i64 = 0;
            let mut depth = 0usize;
            let scaled = &sup.scaled;
            let probs = &sup.probs;
            loop {
                if depth == n_us {
                    let p = prob[n_us];
                    let wi = (w - w_min) as usize;
                    let hi = h as usize;
                    for (k, acc) in shard.sums.iter_mut().enumerate() {
                        acc.add(p * exp_w[k][wi] * exp_h[k][hi]);
                    }
                    // backtrack to the deepest level with moves left
                    loop {
                        if depth == 0 {
                            // restore scratch and finish this walk
                            for &cell in st.occupied {
                                shard.slot_of_cell[cell] = u32::MAX;
                            }
                            return;
                        }
                        depth -= 1;
                        let slot = shard.slot_times[depth] as usize;
                        let v = value[depth];
                        let s = scaled[v];
                        h -= 2 * (site_sum[slot] - s) * s + s * s;
                        site_sum[slot] -= s;
                        w -= s;
                        if v + 1 < scaled.len() {
                            value[depth] = v + 1;
                            break;
                        }
                    }
                } else {
                    value[depth] = 0;
                }
                // descend with the chosen value
                let slot = shard.slot_times[depth] as usize;
                let v = value[depth];
                let s = scaled[v];
                w += s;
                h += 2 * site_sum[slot] * s + s * s;
                site_sum[slot] += s;
                prob[depth + 1] = prob[depth] * probs[v];
                depth += 1;
            }
        },
        |mut a, b| {
            for (x, y) in a.sums.iter_mut().zip(&b.sums) {
                x.merge(y);
            }
            a
        },
    )?;

    let log_paths = n as f64 * (2.0 * d as f64).ln();
    Ok(tilts
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let log_sum = parts.sums[k].value().ln();
            let log_z_star = log_sum - log_paths;
            let log_z = log_z_star - n as f64 * law.log_mgf(t.delta);
            let mk = |log_value: f64| PartitionEstimate {
                n,
                d,
                log_value,
                method: Method::DoubleEnum,
                std_error: 0.0,
                samples: walk_count,
                seed: None,
                shards: 1,
                ess: None,
                low_ess: false,
            };
            ZPair {
                z: mk(log_z),
                z_star: mk(log_z_star),
            }
        })
        .collect())
}

pub fn z_double_enum(
    law: &ChargeLaw,
    tilt: TiltParams,
    d: u32,
    n: u32,
    budget: u64,
) -> Result<ZPair> {
    Ok(z_double_enum_grid(law, &[tilt], d, n, budget)?
        .pop()
        .unwrap())
}

/// Threshold below which an MC estimate is flagged and excluded from
/// ladder extrapolation.
pub const ESS_FLOOR: f64 = 100.0;

fn mc_estimate(
    n: u32,
    d: u32,
    batches: LogMeanBatches,
    samples: u64,
    seed: u64,
    shards: u32,
) -> PartitionEstimate {
    let ess = batches.ess();
    PartitionEstimate {
        n,
        d,
        log_value: batches.log_mean(),
        method: Method::Mc,
        std_error: batches.log_mean_se(),
        samples,
        seed: Some(seed),
        shards,
        ess: Some(ess),
        low_ess: ess < ESS_FLOOR,
    }
}

/// Monte Carlo Z and Z* over `samples` sampled walks: the charge average
/// is analytic through the single-site tables, the walk average is
/// sampled. Deterministic for fixed (seed, shards).
pub fn z_mc(
    law: &ChargeLaw,
    tilt: TiltParams,
    d: u32,
    n: u32,
    samples: u64,
    seed: u64,
    shards: u32,
) -> Result<ZPair> {
    let g_star = SingleSiteTable::build(law, tilt, n, GKind::Star)?;
    let g_tilted = SingleSiteTable::build(law, tilt, n, GKind::Tilted)?;
    let per_shard = split_samples(samples, shards);
    let batches_per_shard = 32usize.div_ceil(shards.max(1) as usize).max(2);
    let parts: Vec<(LogMeanBatches, LogMeanBatches)> = run_sharded(seed, shards, |s, mut rng| {
        let mut star = LogMeanBatches::new();
        let mut tilted = LogMeanBatches::new();
        let total = per_shard[s as usize];
        let mut counts: rustc_hash::FxHashMap<[i32; MAX_DIM], u32> =
            rustc_hash::FxHashMap::default();
        let mut log_star = Vec::new();
        let mut log_tilted = Vec::new();
        let batch_sizes = split_samples(total, batches_per_shard as u32);
        for &b in &batch_sizes {
            log_star.clear();
            log_tilted.clear();
            for _ in 0..b {
                counts.clear();
                let mut pos = [0i32; MAX_DIM];
                for _ in 0..n {
                    let code = rng.random_range(0..2 * d as u8);
                    pos[step_axis(code)] += step_delta(code);
                    *counts.entry(pos).or_insert(0) += 1;
                }
                let mut ls = 0.0;
                let mut lt = 0.0;
                for &c in counts.values() {
                    ls += g_star.log_value(c);
                    lt += g_tilted.log_value(c);
                }
                log_star.push(ls);
                log_tilted.push(lt);
            }
            star.push_batch(&log_star);
            tilted.push_batch(&log_tilted);
        }
        (star, tilted)
    });
    let mut star_all = LogMeanBatches::new();
    let mut tilted_all = LogMeanBatches::new();
    for (s, t) in parts {
        star_all.merge(s);
        tilted_all.merge(t);
    }
    Ok(ZPair {
        z: mc_estimate(n, d, tilted_all, samples, seed, shards),
        z_star: mc_estimate(n, d, star_all, samples, seed, shards),
    })
}

/// Confinement strategy: importance sampling restricted to walks inside
/// the ball of radius (n/log n)^{1/(d+2)}. The proposal picks uniformly
/// among steps that stay inside and carries the exact likelihood ratio,
/// so the estimate is an unbiased Monte Carlo evaluation of a quantity
/// that is itself a lower bound for Z*_n.
pub fn confinement_lower_bound(
    law: &ChargeLaw,
    tilt: TiltParams,
    d: u32,
    n: u32,
    samples: u64,
    seed: u64,
    shards: u32,
) -> Result<PartitionEstimate> {
    let g_star = SingleSiteTable::build(law, tilt, n, GKind::Star)?;
    let alpha = ((n as f64) / (n as f64).ln().max(1.0)).powf(1.0 / (d as f64 + 2.0));
    let radius2 = alpha.max(2.0).powi(2);
    let per_shard = split_samples(samples, shards);
    let batches_per_shard = 32usize.div_ceil(shards.max(1) as usize).max(2);
    let parts: Vec<LogMeanBatches> = run_sharded(seed, shards, |s, mut rng| {
        let mut out = LogMeanBatches::new();
        let mut counts: rustc_hash::FxHashMap<[i32; MAX_DIM], u32> =
            rustc_hash::FxHashMap::default();
        let mut logs = Vec::new();
        let inv_2d = 1.0 / (2.0 * d as f64);
        for &b in &split_samples(per_shard[s as usize], batches_per_shard as u32) {
            logs.clear();
            for _ in 0..b {
                counts.clear();
                let mut pos = [0i32; MAX_DIM];
                let mut log_weight = 0.0f64;
                for _ in 0..n {
                    let mut allowed = [0u8; 2 * MAX_DIM];
                    let mut m = 0usize;
                    for code in 0..2 * d as u8 {
                        let axis = step_axis(code);
                        let nxt = pos[axis] + step_delta(code);
                        let mut r2 = (nxt as f64) * (nxt as f64);
                        for (a, &x) in pos.iter().enumerate() {
                            if a != axis {
                                r2 += (x as f64) * (x as f64);
                            }
                        }
                        if r2 <= radius2 {
                            allowed[m] = code;
                            m += 1;
                        }
                    }
                    debug_assert!(m > 0, "confinement ball too small to move in");
                    let code = allowed[rng.random_range(0..m)];
                    pos[step_axis(code)] += step_delta(code);
                    *counts.entry(pos).or_insert(0) += 1;
                    log_weight += (m as f64 * inv_2d).ln();
                }
                for &c in counts.values() {
                    log_weight += g_star.log_value(c);
                }
                logs.push(log_weight);
            }
            out.push_batch(&logs);
        }
        out
    });
    let mut all = LogMeanBatches::new();
    for p in parts {
        all.merge(p);
    }
    Ok(mc_estimate(n, d, all, samples, seed, shards))
}

#[derive(Debug, Clone, Serialize)]
pub struct LadderRung {
    pub n: u32,
    /// a_n = (1/n) log Z*_n
    pub a_n: f64,
    pub std_error: f64,
    pub ess: f64,
    pub excluded: bool,
    /// confinement-strategy lower bound on a_n, with its own error
    pub confinement: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LadderResult {
    pub law_id: String,
    pub delta: f64,
    pub beta: f64,
    pub d: u32,
    pub rungs: Vec<LadderRung>,
    /// extrapolated F*: slope of log Z*_n across the top two usable rungs
    pub f_star: f64,
    pub f_star_err: f64,
    /// f(δ) = -log M(δ)
    pub f_delta: f64,
    /// extrapolated F = F* + f(δ)
    pub f_free: f64,
    /// margin of the log g* super-additivity certificate up to the top
    /// rung, when non-negative: a_n is then non-decreasing and F* is the
    /// supremum of the rungs
    pub superadditive_margin: Option<f64>,
    /// Free-energy sandwich, in its finite-n testable form. The upper
    /// side F <= 0 is checked on the extrapolation (f_free <= 3σ). The
    /// lower side F >= f(δ) is a limit statement whose finite-n slope
    /// approaches 0 from below in the collapsed phase, so it is checked
    /// rung by rung against the confinement-strategy lower bound.
    pub sandwich_ok: bool,
    pub warnings: Vec<String>,
}

/// Geometric ladder `lo, 2 lo, ..., hi`.
pub fn geometric_ladder(lo: u32, hi: u32) -> Result<Vec<u32>> {
    if lo == 0 || hi < lo {
        return Err(Error::InvalidInput(format!("bad ladder {lo}:{hi}")));
    }
    let mut out = vec![lo];
    let mut n = lo;
    while n < hi {
        n = n.saturating_mul(2).min(hi);
        out.push(n);
    }
    Ok(out)
}

pub fn free_energy_ladder(
    law: &ChargeLaw,
    tilt: TiltParams,
    d: u32,
    ladder: &[u32],
    samples: u64,
    seed: u64,
    shards: u32,
) -> Result<LadderResult> {
    if ladder.windows(2).any(|w| w[0] >= w[1]) || ladder.is_empty() {
        return Err(Error::InvalidInput(
            "ladder must be strictly increasing and non-empty".into(),
        ));
    }
    let mut rungs = Vec::with_capacity(ladder.len());
    let mut log_z = Vec::with_capacity(ladder.len());
    let mut warnings = Vec::new();
    for (i, &n) in ladder.iter().enumerate() {
        let pair = z_mc(
            law,
            tilt,
            d,
            n,
            samples,
            seed.wrapping_add(i as u64),
            shards,
        )?;
        let est = pair.z_star;
        if est.low_ess {
            warnings.push(format!(
                "rung n={n}: ess {:.1} below {ESS_FLOOR}, excluded from extrapolation",
                est.ess.unwrap_or(0.0)
            ));
        }
        let conf = confinement_lower_bound(
            law,
            tilt,
            d,
            n,
            (samples / 4).max(256),
            seed.wrapping_add(0x5eed + i as u64),
            shards,
        )?;
        rungs.push(LadderRung {
            n,
            a_n: est.log_value / n as f64,
            std_error: est.std_error / n as f64,
            ess: est.ess.unwrap_or(f64::NAN),
            excluded: est.low_ess,
            confinement: Some((conf.log_value / n as f64, conf.std_error / n as f64)),
        });
        log_z.push((n, est.log_value, est.std_error, est.low_ess));
    }
    let usable: Vec<&(u32, f64, f64, bool)> = log_z.iter().filter(|r| !r.3).collect();
    let (f_star, f_star_err) = match usable.len() {
        0 => {
            warnings.push("no usable rungs: every estimate had collapsed ess".into());
            (f64::NAN, f64::NAN)
        }
        1 => (
            usable[0].1 / usable[0].0 as f64,
            usable[0].2 / usable[0].0 as f64,
        ),
        _ => {
            let a = usable[usable.len() - 2];
            let b = usable[usable.len() - 1];
            let dn = (b.0 - a.0) as f64;
            ((b.1 - a.1) / dn, (a.2 * a.2 + b.2 * b.2).sqrt() / dn)
        }
    };
    let f_delta = law.annealed_exponent(tilt.delta);
    let f_free = f_star + f_delta;
    let upper_ok = f_free <= 3.0 * f_star_err + 1e-12;
    let lower_ok = rungs.iter().filter(|r| !r.excluded).all(|r| {
        r.confinement
            .map(|(c, c_se)| r.a_n + 3.0 * r.std_error >= c - 3.0 * c_se - 1e-12)
            .unwrap_or(true)
    });
    let sandwich_ok = upper_ok && lower_ok;
    let top = *ladder.last().unwrap();
    let superadditive_margin = if top >= 2 {
        let rep = crate::single_site::check_superadditivity(law, tilt, top)?;
        if rep.passed {
            Some(rep.margin)
        } else {
            None
        }
    } else {
        None
    };
    Ok(LadderResult {
        law_id: law.id(),
        delta: tilt.delta,
        beta: tilt.beta,
        d,
        rungs,
        f_star,
        f_star_err,
        f_delta,
        f_free,
        superadditive_margin,
        sandwich_ok,
        warnings,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanProbe {
    pub beta: f64,
    /// decision statistic: extrapolated F* slope
    pub stat: f64,
    pub sigma: f64,
    pub positive: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanEntry {
    pub delta: f64,
    /// F* statistically positive here
    pub beta_lo: f64,
    /// F* indistinguishable from zero here
    pub beta_hi: f64,
    /// bracket midpoint, reported as such and nothing more
    pub beta_mid: f64,
    pub resolved: bool,
    pub probes: Vec<ScanProbe>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CriticalScan {
    pub law_id: String,
    pub d: u32,
    pub n_top: u32,
    pub entries: Vec<ScanEntry>,
}

/// Bisection on the sign of the extrapolated F*. The lower end of each
/// bracket carries a statistically positive F*, the upper end one
/// indistinguishable from zero at 3σ; unresolvable probes widen the
/// bracket rather than silently midpointing.
pub fn critical_scan(
    law: &ChargeLaw,
    deltas: &[f64],
    d: u32,
    ladder: &[u32],
    samples: u64,
    seed: u64,
    shards: u32,
    beta_tol: f64,
    max_probes: u32,
) -> Result<CriticalScan> {
    let mut entries = Vec::with_capacity(deltas.len());
    let mut probe_counter: u64 = 0;
    for &delta in deltas {
        if delta <= 0.0 {
            return Err(Error::InvalidInput("critical scan needs delta > 0".into()));
        }
        // beta = 0 is analytically extended: F*(δ, 0) = -f(δ) > 0
        let mut lo = 0.0f64;
        // symmetric laws have F* = 0 at β = δ²/2; for general laws the
        // same starting point is probed and widened if still positive
        let mut hi = 0.5 * delta * delta;
        let mut probes = vec![ScanProbe {
            beta: 0.0,
            stat: -law.annealed_exponent(delta),
            sigma: 0.0,
            positive: true,
        }];
        let mut resolved = true;
        let run_probe = |beta: f64, probe_id: u64| -> Result<ScanProbe> {
            let tilt = TiltParams::new(delta, beta)?;
            let mut log_z = Vec::new();
            for (i, &n) in ladder.iter().enumerate() {
                let pair = z_mc(
                    law,
                    tilt,
                    d,
                    n,
                    samples,
                    seed ^ (probe_id.wrapping_mul(0x9e37_79b9).wrapping_add(i as u64)),
                    shards,
                )?;
                if !pair.z_star.low_ess {
                    log_z.push((n, pair.z_star.log_value, pair.z_star.std_error));
                }
            }
            if log_z.len() < 2 {
                return Err(Error::EssCollapse { ess: 0.0, samples });
            }
            let a = log_z[log_z.len() - 2];
            let b = log_z[log_z.len() - 1];
            let dn = (b.0 - a.0) as f64;
            let stat = (b.1 - a.1) / dn;
            let sigma = (a.2 * a.2 + b.2 * b.2).sqrt() / dn;
            Ok(ScanProbe {
                beta,
                stat,
                sigma,
                positive: stat > 3.0 * sigma,
            })
        };
        // make sure the upper end is indistinguishable from zero
        let mut widen = 0;
        loop {
            probe_counter += 1;
            let p = run_probe(hi, probe_counter)?;
            probes.push(p.clone());
            if !p.positive {
                break;
            }
            lo = hi;
            hi *= 2.0;
            widen += 1;
            if widen > 6 {
                resolved = false;
                break;
            }
        }
        if resolved {
            while hi - lo > beta_tol && (probes.len() as u32) < max_probes {
                let mid = 0.5 * (lo + hi);
                probe_counter += 1;
                let p = run_probe(mid, probe_counter)?;
                probes.push(p.clone());
                if p.positive {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        }
        entries.push(ScanEntry {
            delta,
            beta_lo: lo,
            beta_hi: hi,
            beta_mid: 0.5 * (lo + hi),
            resolved,
            probes,
        });
    }
    Ok(CriticalScan {
        law_id: law.id(),
        d,
        n_top: *ladder.last().unwrap(),
        entries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Small,
    Large,
}

/// Asymptotic critical-curve predictions.
#[derive(Debug, Clone, Serialize)]
pub enum BetaCPrediction {
    /// two-sided small-δ band [lo, hi] for β_c(δ)
    SmallBand {
        delta: f64,
        lo: f64,
        hi: f64,
        kappa_lower: f64,
        kappa_upper: f64,
    },
    /// large-δ asymptote with its functional form
    Large {
        delta: f64,
        value: f64,
        form: String,
    },
}

/// κ̲ = m4/12 - m3²/3.
pub fn kappa_lower(law: &ChargeLaw) -> f64 {
    law.moment(4) / 12.0 - law.moment(3) * law.moment(3) / 3.0
}

/// κ_d: λ_2/4 in d = 2, (λ_d - 1)/4 + κ̲ for d >= 3.
pub fn kappa_d(law: &ChargeLaw, d: u32, lambda_d: f64) -> f64 {
    if d == 2 {
        0.25 * lambda_d
    } else {
        0.25 * (lambda_d - 1.0) + kappa_lower(law)
    }
}

/// Small- or large-δ prediction for β_c(δ). `lambda_d` is required for
/// the small-δ band (2/π in d = 2, 2 G_d - 1 above).
pub fn beta_c_asymptote(
    law: &ChargeLaw,
    delta: f64,
    regime: Regime,
    d: u32,
    lambda_d: Option<f64>,
) -> Result<BetaCPrediction> {
    match regime {
        Regime::Small => {
            if !(0.0 < delta && delta < 1.0) {
                return Err(Error::InvalidInput(
                    "small-delta regime needs 0 < delta < 1".into(),
                ));
            }
            let lambda = match (d, lambda_d) {
                (2, v) => v.unwrap_or(2.0 / core::f64::consts::PI),
                (_, Some(v)) => v,
                (_, None) => {
                    return Err(Error::InvalidInput(
                        "lambda_d required for the small-delta band when d >= 3".into(),
                    ))
                }
            };
            let m3 = law.moment(3);
            let head = 0.5 * delta * delta - m3 * delta.powi(3) / 3.0;
            let kl = kappa_lower(law);
            let kd = kappa_d(law, d, lambda);
            let eps_upper = if d == 2 {
                kd * delta.powi(4) * (1.0 / delta).ln()
            } else {
                kd * delta.powi(4)
            };
            let eps_lower = kl * delta.powi(4);
            Ok(BetaCPrediction::SmallBand {
                delta,
                lo: head - eps_upper,
                hi: head - eps_lower,
                kappa_lower: kl,
                kappa_upper: kd,
            })
        }
        Regime::Large => {
            let span = law.lattice_span()?.to_f64();
            if span > 0.0 {
                Ok(BetaCPrediction::Large {
                    delta,
                    value: delta / span,
                    form: "delta/T".into(),
                })
            } else if law.has_density() {
                if delta <= 1.0 {
                    return Err(Error::InvalidInput(
                        "non-lattice large-delta asymptote needs delta > 1".into(),
                    ));
                }
                Ok(BetaCPrediction::Large {
                    delta,
                    value: delta * delta / (4.0 * delta.ln()),
                    form: "delta^2/(4 log delta)".into(),
                })
            } else {
                Err(Error::NoDensity(law.id()))
            }
        }
    }
}
