//! Nearest-neighbour paths on Z^d and their local-time functionals.
//!
//! Conventions used everywhere downstream:
//! * local times count the times i = 1..n, so S_0 is excluded and a
//!   period-2 oscillation of length 2 has Q_2 = 2, not 3;
//! * a path is a bridge when its first coordinate satisfies
//!   0 = S(1)_0 < S(1)_i < S(1)_n for all 0 < i < n (plus S(1)_n > 0,
//!   which is the whole condition when n = 1);
//! * enumeration order is lexicographic over step codes.

use rand::Rng;
use rustc_hash::FxHashMap;
use serde::Serialize;

use crate::error::{Error, Result};

/// Highest supported dimension.
pub const MAX_DIM: usize = 5;

/// Default cap on exhaustive enumeration, in number of paths.
pub const DEFAULT_ENUM_BUDGET: u64 = 1 << 32;

/// Lattice site, zero-padded beyond the active dimension.
pub type Site = [i32; MAX_DIM];

pub const ORIGIN: Site = [0; MAX_DIM];

/// Step-code alphabet: code 2k is +e_{k+1}, code 2k+1 is -e_{k+1}.
/// Characters, axis by axis: E/W, N/S, U/D, F/B, I/O.
pub const STEP_CHARS: [u8; 2 * MAX_DIM] = *b"EWNSUDFBIO";

#[inline]
pub fn step_axis(code: u8) -> usize {
    (code >> 1) as usize
}

#[inline]
pub fn step_delta(code: u8) -> i32 {
    if code & 1 == 0 {
        1
    } else {
        -1
    }
}

fn check_dimension(d: u32) -> Result<()> {
    if d == 0 || d as usize > MAX_DIM {
        return Err(Error::InvalidInput(format!(
            "dimension {d} out of supported range 1..={MAX_DIM}"
        )));
    }
    Ok(())
}

/// A nearest-neighbour path on Z^d starting at the origin, stored as the
/// sequence of its step codes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WalkPath {
    d: u32,
    steps: Vec<u8>,
}

impl WalkPath {
    pub fn from_codes(d: u32, steps: Vec<u8>) -> Result<Self> {
        check_dimension(d)?;
        if let Some(&bad) = steps.iter().find(|&&c| c as u32 >= 2 * d) {
            return Err(Error::InvalidInput(format!(
                "step code {bad} invalid in dimension {d}"
            )));
        }
        Ok(Self { d, steps })
    }

    /// Parse the compact step-code string, e.g. `"ENWS"` in d = 2.
    pub fn from_step_string(d: u32, s: &str) -> Result<Self> {
        check_dimension(d)?;
        let mut steps = Vec::with_capacity(s.len());
        for ch in s.bytes() {
            let code = STEP_CHARS[..2 * d as usize]
                .iter()
                .position(|&c| c == ch)
                .ok_or_else(|| {
                    Error::InvalidInput(format!(
                        "character `{}` is not a step code in dimension {d}",
                        ch as char
                    ))
                })?;
            steps.push(code as u8);
        }
        Ok(Self { d, steps })
    }

    pub fn to_step_string(&self) -> String {
        self.steps
            .iter()
            .map(|&c| STEP_CHARS[c as usize] as char)
            .collect()
    }

    pub fn dimension(&self) -> u32 {
        self.d
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn codes(&self) -> &[u8] {
        &self.steps
    }

    /// Positions S_0..S_n.
    pub fn positions(&self) -> Vec<Site> {
        let mut out = Vec::with_capacity(self.steps.len() + 1);
        let mut pos = ORIGIN;
        out.push(pos);
        for &c in &self.steps {
            pos[step_axis(c)] += step_delta(c);
            out.push(pos);
        }
        out
    }

    pub fn end(&self) -> Site {
        let mut pos = ORIGIN;
        for &c in &self.steps {
            pos[step_axis(c)] += step_delta(c);
        }
        pos
    }
}

/// Site-occupation counts of a path over times 1..n.
#[derive(Debug, Clone)]
pub struct LocalTimeField {
    pub d: u32,
    pub n: u32,
    counts: FxHashMap<Site, u32>,
}

impl LocalTimeField {
    pub fn counts(&self) -> &FxHashMap<Site, u32> {
        &self.counts
    }

    /// Number of distinct sites visited, |R_n|.
    pub fn range(&self) -> usize {
        self.counts.len()
    }

    pub fn count_at(&self, site: &Site) -> u32 {
        self.counts.get(site).copied().unwrap_or(0)
    }

    /// Self-intersection local time Q_n = sum_x l_n(x)^2.
    pub fn self_intersections(&self) -> u64 {
        self.counts.values().map(|&c| c as u64 * c as u64).sum()
    }
}

/// Local times l_n(x) = #\{1 <= i <= n : S_i = x\}.
pub fn local_times(path: &WalkPath) -> Result<LocalTimeField> {
    if path.is_empty() {
        return Err(Error::EmptyPath);
    }
    let mut counts = FxHashMap::default();
    let mut pos = ORIGIN;
    for &c in path.codes() {
        pos[step_axis(c)] += step_delta(c);
        *counts.entry(pos).or_insert(0u32) += 1;
    }
    Ok(LocalTimeField {
        d: path.dimension(),
        n: path.len() as u32,
        counts,
    })
}

/// Scalar functionals of one path.
#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct WalkSummary {
    pub d: u32,
    pub n: u32,
    /// self-intersection local time Q_n
    pub q: u64,
    /// |R_n|, number of distinct visited sites
    pub range: u64,
    /// |R_{n,A}^-|, sites with 1 <= l_n(x) <= A
    pub trimmed_range: u64,
    /// time spent on those sites
    pub trimmed_time: u64,
    pub max_local_time: u32,
    pub is_bridge: bool,
}

pub fn summarize(path: &WalkPath, trim_threshold: u32) -> Result<WalkSummary> {
    if trim_threshold == 0 {
        return Err(Error::InvalidInput(
            "trim threshold A must be a positive integer".into(),
        ));
    }
    let field = local_times(path)?;
    let mut q = 0u64;
    let mut trimmed_range = 0u64;
    let mut trimmed_time = 0u64;
    let mut max_lt = 0u32;
    for &c in field.counts().values() {
        q += c as u64 * c as u64;
        max_lt = max_lt.max(c);
        if c <= trim_threshold {
            trimmed_range += 1;
            trimmed_time += c as u64;
        }
    }
    Ok(WalkSummary {
        d: path.dimension(),
        n: path.len() as u32,
        q,
        range: field.range() as u64,
        trimmed_range,
        trimmed_time,
        max_local_time: max_lt,
        is_bridge: is_bridge(path),
    })
}

/// Bridge predicate on the first coordinate.
pub fn is_bridge(path: &WalkPath) -> bool {
    let n = path.len();
    if n == 0 {
        return false;
    }
    let mut s1 = 0i32;
    let mut min_interior = i32::MAX;
    let mut max_interior = i32::MIN;
    for (i, &c) in path.codes().iter().enumerate() {
        if step_axis(c) == 0 {
            s1 += step_delta(c);
        }
        if i + 1 < n {
            min_interior = min_interior.min(s1);
            max_interior = max_interior.max(s1);
        }
    }
    s1 >= 1 && (n == 1 || (min_interior >= 1 && max_interior <= s1 - 1))
}

/// Exact number of n-step paths, or a budget error. Also guards `u64`
/// overflow of the count itself.
pub fn enumeration_count(d: u32, n: u32, budget: u64) -> Result<u64> {
    check_dimension(d)?;
    let log_count = n as f64 * (2.0 * d as f64).ln();
    if log_count > (budget as f64).ln() * (1.0 + 1e-12) + 1e-9 {
        return Err(Error::BudgetExceeded {
            required: log_count.exp(),
            budget,
        });
    }
    let mut count: u64 = 1;
    for _ in 0..n {
        count = count
            .checked_mul(2 * d as u64)
            .ok_or(Error::BudgetExceeded {
                required: log_count.exp(),
                budget,
            })?;
        if count > budget {
            return Err(Error::BudgetExceeded {
                required: log_count.exp(),
                budget,
            });
        }
    }
    Ok(count)
}

/// Visit every n-step path exactly once, in lexicographic step-code
/// order. The closure sees a reused path buffer.
pub fn for_each_walk<F: FnMut(&WalkPath)>(d: u32, n: u32, budget: u64, mut f: F) -> Result<()> {
    let total = enumeration_count(d, n, budget)?;
    let mut path = WalkPath {
        d,
        steps: vec![0u8; n as usize],
    };
    let base = 2 * d as u8;
    for _ in 0..total {
        f(&path);
        // odometer increment on the rightmost digit
        for i in (0..n as usize).rev() {
            if path.steps[i] + 1 < base {
                path.steps[i] += 1;
                break;
            }
            path.steps[i] = 0;
        }
    }
    Ok(())
}

/// Owned-path iterator over all n-step walks; intended for small n.
pub fn enumerate_walks(d: u32, n: u32, budget: u64) -> Result<impl Iterator<Item = WalkPath>> {
    let total = enumeration_count(d, n, budget)?;
    let base = 2 * d as u8;
    let mut steps = vec![0u8; n as usize];
    let mut emitted = 0u64;
    Ok(core::iter::from_fn(move || {
        if emitted == total {
            return None;
        }
        let out = WalkPath {
            d,
            steps: steps.clone(),
        };
        emitted += 1;
        for i in (0..n as usize).rev() {
            if steps[i] + 1 < base {
                steps[i] += 1;
                break;
            }
            steps[i] = 0;
        }
        Some(out)
    }))
}

/// Uniform n-step walk from an explicit stream.
pub fn sample_walk<R: Rng + ?Sized>(d: u32, n: u32, rng: &mut R) -> WalkPath {
    debug_assert!(d >= 1 && d as usize <= MAX_DIM);
    let base = 2 * d as u8;
    let steps = (0..n).map(|_| rng.random_range(0..base)).collect();
    WalkPath { d, steps }
}

/// One streaming bridge trial: samples the step codes of a uniform walk
/// and reports whether it is a bridge, without materializing the path.
pub fn bridge_trial<R: Rng + ?Sized>(d: u32, n: u32, rng: &mut R) -> bool {
    let base = 2 * d as u8;
    let mut s1 = 0i32;
    let mut min_interior = i32::MAX;
    let mut max_interior = i32::MIN;
    for i in 0..n {
        let c = rng.random_range(0..base);
        if step_axis(c) == 0 {
            s1 += step_delta(c);
        }
        if i + 1 < n {
            min_interior = min_interior.min(s1);
            max_interior = max_interior.max(s1);
        }
    }
    s1 >= 1 && (n == 1 || (min_interior >= 1 && max_interior <= s1 - 1))
}

/// Rejection-sample a bridge. Returns the path and the number of
/// rejected proposals.
pub fn sample_bridge<R: Rng + ?Sized>(
    d: u32,
    n: u32,
    rng: &mut R,
    max_tries: u64,
) -> Result<(WalkPath, u64)> {
    if max_tries == 0 {
        return Err(Error::InvalidInput("max_tries must be at least 1".into()));
    }
    for tries in 0..max_tries {
        let path = sample_walk(d, n, rng);
        if is_bridge(&path) {
            return Ok((path, tries));
        }
    }
    Err(Error::AcceptanceTooLow {
        tries: max_tries,
        accepted: 0,
        rate: 0.0,
    })
}
