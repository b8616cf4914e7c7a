//! Exhaustive-walk fold engine shared by the exact kernels.
//!
//! Walks are visited in lexicographic step-code order, sharded by a step
//! prefix whose length depends only on (d, n), and per-shard results are
//! merged in shard order. Output is therefore identical for any thread
//! count, and exact accumulators agree across shard layouts to float
//! reduction error only.

use rayon::prelude::*;

use crate::board::CountGrid;
use crate::error::Result;
use crate::walk::{enumeration_count, step_axis, step_delta};

/// Per-leaf view of the current walk.
pub(crate) struct WalkState<'a> {
    pub n: u32,
    /// self-intersection local time of the full walk
    pub q: u64,
    pub grid: &'a CountGrid,
    /// cell indices with positive count, in first-visit (stack) order
    pub occupied: &'a [usize],
    /// cell index occupied at time t, entry 0 being time 1
    pub cell_at_time: &'a [usize],
    /// first coordinate at time n
    pub s1_end: i32,
    /// min/max of the first coordinate over times 1..n-1
    pub s1_interior_min: i32,
    pub s1_interior_max: i32,
}

impl WalkState<'_> {
    pub fn is_bridge(&self) -> bool {
        self.s1_end >= 1
            && (self.n == 1
                || (self.s1_interior_min >= 1 && self.s1_interior_max <= self.s1_end - 1))
    }

    #[cfg_attr(not(test), allow(dead_code))]
    pub fn range(&self) -> usize {
        self.occupied.len()
    }
}

struct Env {
    d: u32,
    n: u32,
    grid: CountGrid,
    occupied: Vec<usize>,
    cell_at_time: Vec<usize>,
    idx_stack: Vec<usize>,
    s1_stack: Vec<i32>,
    min_stack: Vec<i32>,
    max_stack: Vec<i32>,
    q: u64,
}

impl Env {
    fn new(d: u32, n: u32) -> Self {
        let grid = CountGrid::new(d, n);
        let center = grid.center();
        Env {
            d,
            n,
            grid,
            occupied: Vec::with_capacity(n as usize),
            cell_at_time: vec![0; n as usize + 1],
            idx_stack: {
                let mut v = vec![0usize; n as usize + 1];
                v[0] = center;
                v
            },
            s1_stack: vec![0i32; n as usize + 1],
            min_stack: vec![i32::MAX; n as usize + 1],
            max_stack: vec![i32::MIN; n as usize + 1],
            q: 0,
        }
    }

    /// Push one step; returns the previous count at the target cell.
    #[inline]
    fn push(&mut self, depth: usize, code: u8) {
        let idx = self.grid.step(self.idx_stack[depth], code);
        let t = depth + 1;
        self.idx_stack[t] = idx;
        self.cell_at_time[t] = idx;
        let s1 = self.s1_stack[depth]
            + if step_axis(code) == 0 {
                step_delta(code)
            } else {
                0
            };
        self.s1_stack[t] = s1;
        if t < self.n as usize {
            self.min_stack[t] = self.min_stack[depth].min(s1);
            self.max_stack[t] = self.max_stack[depth].max(s1);
        } else {
            self.min_stack[t] = self.min_stack[depth];
            self.max_stack[t] = self.max_stack[depth];
        }
        let c = self.grid.counts[idx];
        if c == 0 {
            self.occupied.push(idx);
        }
        self.grid.counts[idx] = c + 1;
        self.q += 2 * c as u64 + 1;
    }

    #[inline]
    fn pop(&mut self, depth: usize) {
        let idx = self.idx_stack[depth + 1];
        let c = self.grid.counts[idx] - 1;
        self.grid.counts[idx] = c;
        self.q -= 2 * c as u64 + 1;
        if c == 0 {
            let popped = self.occupied.pop();
            debug_assert_eq!(popped, Some(idx));
        }
    }

    fn state(&self) -> WalkState<'_> {
        let n = self.n as usize;
        WalkState {
            n: self.n,
            q: self.q,
            grid: &self.grid,
            occupied: &self.occupied,
            cell_at_time: &self.cell_at_time[1..=n],
            s1_end: self.s1_stack[n],
            s1_interior_min: self.min_stack[n],
            s1_interior_max: self.max_stack[n],
        }
    }

    fn dfs<A>(&mut self, depth: usize, acc: &mut A, leaf: &(impl Fn(&mut A, &WalkState) + Sync)) {
        if depth == self.n as usize {
            let st = self.state();
            leaf(acc, &st);
            return;
        }
        for code in 0..2 * self.d as u8 {
            self.push(depth, code);
            self.dfs(depth + 1, acc, leaf);
            self.pop(depth);
        }
    }
}

/// Prefix length used for sharding; a function of (d, n) only.
fn prefix_len(d: u32, n: u32) -> u32 {
    let mut p = 0u32;
    let mut count = 1u64;
    while p < n && count < 256 {
        count *= 2 * d as u64;
        p += 1;
    }
    p
}

/// Fold a leaf visitor over all (2d)^n walks.
pub(crate) fn fold_walks<A, I, L, M>(
    d: u32,
    n: u32,
    budget: u64,
    init: I,
    leaf: L,
    merge: M,
) -> Result<A>
where
    A: Send,
    I: Fn() -> A + Sync,
    L: Fn(&mut A, &WalkState) + Sync,
    M: Fn(A, A) -> A,
{
    enumeration_count(d, n, budget)?;
    let p = prefix_len(d, n);
    let shards = (2 * d as u64).pow(p);
    let parts: Vec<A> = (0..shards)
        .into_par_iter()
        .map(|shard| {
            let mut env = Env::new(d, n);
            // decode the prefix, most-significant digit first, so shard
            // order equals lexicographic order
            let base = 2 * d as u64;
            for t in 0..p as usize {
                let digit = (shard / base.pow(p - 1 - t as u32)) % base;
                env.push(t, digit as u8);
            }
            let mut acc = init();
            env.dfs(p as usize, &mut acc, &leaf);
            acc
        })
        .collect();
    let mut iter = parts.into_iter();
    let first = iter.next().expect("at least one shard");
    Ok(iter.fold(first, merge))
}
