//! Dense occupancy grid for exhaustive-enumeration kernels. A walk of
//! length n stays in the centred box of radius n, so cell indices move by
//! fixed per-axis strides and never go out of bounds.

use crate::walk::{step_axis, step_delta, MAX_DIM};

pub(crate) struct CountGrid {
    pub counts: Vec<u32>,
    strides: [isize; MAX_DIM],
    center: usize,
}

impl CountGrid {
    pub fn new(d: u32, radius: u32) -> Self {
        let side = (2 * radius + 1) as usize;
        let mut strides = [0isize; MAX_DIM];
        let mut total = 1usize;
        for axis in 0..d as usize {
            strides[axis] = total as isize;
            total *= side;
        }
        let center = (total - 1) / 2;
        CountGrid {
            counts: vec![0u32; total],
            strides,
            center,
        }
    }

    #[inline]
    pub fn center(&self) -> usize {
        self.center
    }

    #[inline]
    pub fn step(&self, idx: usize, code: u8) -> usize {
        (idx as isize + self.strides[step_axis(code)] * step_delta(code) as isize) as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_moves_are_invertible() {
        let g = CountGrid::new(3, 4);
        let c = g.center();
        for code in 0..6u8 {
            let back = code ^ 1;
            assert_eq!(g.step(g.step(c, code), back), c);
        }
        // distinct single-step neighbours
        let mut seen: Vec<usize> = (0..6).map(|c| g.step(g.center(), c)).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 6);
    }
}
