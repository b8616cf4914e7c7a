//! Shared numerics: compensated summation, log-space reductions, least
//! squares, incomplete gamma, and adaptive trapezoid quadrature.

use crate::error::{Error, Result};

/// Neumaier-compensated accumulator. Order-dependent like any float sum,
/// but the compensation keeps long reductions near machine precision.
#[derive(Debug, Clone, Copy, Default)]
pub struct Accumulator {
    sum: f64,
    comp: f64,
}

impl Accumulator {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }

    pub fn merge(&mut self, other: &Accumulator) {
        self.add(other.sum);
        self.add(other.comp);
    }
}

/// Compensated sum of a slice.
pub fn sum(xs: &[f64]) -> f64 {
    let mut acc = Accumulator::new();
    for &x in xs {
        acc.add(x);
    }
    acc.value()
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    sum(xs) / xs.len() as f64
}

/// Sample variance (denominator n - 1).
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    let mut acc = Accumulator::new();
    for &x in xs {
        acc.add((x - m) * (x - m));
    }
    acc.value() / (xs.len() - 1) as f64
}

/// log(sum_i exp(x_i)); -inf entries are skipped, empty input gives -inf.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let mut acc = Accumulator::new();
    for &x in xs {
        if x.is_finite() {
            acc.add((x - m).exp());
        }
    }
    m + acc.value().ln()
}

/// log of the arithmetic mean of exp(x_i).
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    log_sum_exp(xs) - (xs.len() as f64).ln()
}

/// Ordinary least squares of y on x. `slope_se` assumes i.i.d. residuals.
#[derive(Debug, Clone, Copy)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = mean(xs);
    let my = mean(ys);
    let (mut sxx, mut sxy) = (Accumulator::new(), Accumulator::new());
    for (&x, &y) in xs.iter().zip(ys) {
        sxx.add((x - mx) * (x - mx));
        sxy.add((x - mx) * (y - my));
    }
    let slope = sxy.value() / sxx.value();
    let intercept = my - slope * mx;
    let mut rss = Accumulator::new();
    for (&x, &y) in xs.iter().zip(ys) {
        let r = y - intercept - slope * x;
        rss.add(r * r);
    }
    let dof = (n - 2.0).max(1.0);
    let slope_se = (rss.value() / dof / sxx.value()).sqrt();
    LinearFit {
        slope,
        intercept,
        slope_se,
    }
}

/// Lanczos approximation of ln Γ(x), x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    const G: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    debug_assert!(x > 0.0);
    let y = x - 1.0;
    let mut a = G[0];
    let t = y + 7.5;
    for (i, &g) in G.iter().enumerate().skip(1) {
        a += g / (y + i as f64);
    }
    0.5 * (2.0 * core::f64::consts::PI).ln() + (y + 0.5) * t.ln() - t + a.ln()
}

/// Regularized upper incomplete gamma Q(a, x) = Γ(a, x)/Γ(a).
pub fn reg_gamma_q(a: f64, x: f64) -> f64 {
    debug_assert!(a > 0.0 && x >= 0.0);
    if x == 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        // series for P, return 1 - P
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut k = a;
        for _ in 0..500 {
            k += 1.0;
            term *= x / k;
            sum += term;
            if term.abs() < sum.abs() * 1e-16 {
                break;
            }
        }
        1.0 - sum * (-x + a * x.ln() - ln_gamma(a)).exp()
    } else {
        // Lentz continued fraction for Q
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        h * (-x + a * x.ln() - ln_gamma(a)).exp()
    }
}

/// Chi-square survival function with `dof` degrees of freedom.
pub fn chi_square_sf(x: f64, dof: u32) -> f64 {
    reg_gamma_q(dof as f64 / 2.0, x / 2.0)
}

#[derive(Debug, Clone, Copy)]
pub struct Quadrature {
    /// log of the integral value
    pub log_value: f64,
    /// relative error estimate from the last grid doubling
    pub rel_error: f64,
    pub points: u64,
}

/// Adaptive trapezoid rule on `[lo, hi]` for an integrand given in log
/// form. The grid doubles until two successive levels agree to `rel_tol`
/// or `max_points` is reached. For the smooth, rapidly decaying
/// integrands used here this converges super-algebraically.
pub fn log_trapezoid<F: Fn(f64) -> f64>(
    log_f: F,
    lo: f64,
    hi: f64,
    rel_tol: f64,
    max_points: u64,
) -> Result<Quadrature> {
    assert!(hi > lo);
    let mut n: u64 = 64;
    let mut prev = f64::NAN;
    loop {
        let h = (hi - lo) / n as f64;
        let mut terms = Vec::with_capacity(n as usize + 1);
        for i in 0..=n {
            let x = lo + h * i as f64;
            let mut t = log_f(x) + h.ln();
            if i == 0 || i == n {
                t -= core::f64::consts::LN_2;
            }
            terms.push(t);
        }
        let cur = log_sum_exp(&terms);
        if prev.is_finite() || (prev == f64::NEG_INFINITY && cur == f64::NEG_INFINITY) {
            let diff = if cur == prev {
                0.0
            } else {
                ((cur - prev).exp() - 1.0).abs()
            };
            if diff <= rel_tol {
                return Ok(Quadrature {
                    log_value: cur,
                    rel_error: diff,
                    points: n + 1,
                });
            }
            if n >= max_points {
                return Err(Error::QuadratureNoConvergence {
                    achieved: diff,
                    points: n + 1,
                });
            }
        }
        prev = cur;
        n *= 2;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_handles_cancellation() {
        let xs = [1e16, 1.0, -1e16];
        assert_eq!(sum(&xs), 1.0);
    }

    #[test]
    fn log_sum_exp_matches_direct() {
        let xs = [0.0, (2.0f64).ln(), (3.0f64).ln()];
        assert!((log_sum_exp(&xs) - (6.0f64).ln()).abs() < 1e-14);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn ln_gamma_reference_points() {
        assert!((ln_gamma(1.0)).abs() < 1e-13);
        assert!((ln_gamma(5.0) - (24.0f64).ln()).abs() < 1e-12);
        assert!((ln_gamma(0.5) - 0.5 * core::f64::consts::PI.ln()).abs() < 1e-12);
    }

    #[test]
    fn gamma_q_reference_points() {
        // Q(1, x) = exp(-x)
        assert!((reg_gamma_q(1.0, 2.5) - (-2.5f64).exp()).abs() < 1e-13);
        // chi-square sf with 2 dof is exp(-x/2)
        assert!((chi_square_sf(3.0, 2) - (-1.5f64).exp()).abs() < 1e-13);
    }

    #[test]
    fn trapezoid_gaussian_integral() {
        // integral of the standard normal density over a wide window is 1
        let q = log_trapezoid(
            |x| -0.5 * x * x - 0.5 * (2.0 * core::f64::consts::PI).ln(),
            -16.0,
            16.0,
            1e-12,
            1 << 20,
        )
        .unwrap();
        assert!(q.log_value.abs() < 1e-11, "log I = {}", q.log_value);
    }

    #[test]
    fn linear_fit_recovers_line() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let fit = linear_fit(&xs, &ys);
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!((fit.intercept - 1.0).abs() < 1e-12);
    }
}
