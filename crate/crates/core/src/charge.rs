//! Charge distributions: moments, moment generating function, tilting,
//! lattice span, sampling, and the exact law of the partial sums Ω_ℓ.
//!
//! Every law is normalized to mean 0 and variance 1; constructors reject
//! anything else. Custom finite-lattice laws are declared with exact
//! rational values and probabilities, and the lattice span is computed by
//! integer gcd on the declared rationals, never guessed from floats.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp, Accumulator};

/// Exact rational with reduced form and positive denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rational {
    num: i64,
    den: i64,
}

fn gcd(mut a: i128, mut b: i128) -> i128 {
    a = a.abs();
    b = b.abs();
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

impl Rational {
    pub fn new(num: i64, den: i64) -> Result<Self> {
        if den == 0 {
            return Err(Error::InvalidInput("rational with zero denominator".into()));
        }
        let sign = if den < 0 { -1 } else { 1 };
        let g = gcd(num as i128, den as i128).max(1) as i64;
        Ok(Rational {
            num: sign * (num / g),
            den: (den / g).abs(),
        })
    }

    pub fn integer(n: i64) -> Self {
        Rational { num: n, den: 1 }
    }

    pub fn num(&self) -> i64 {
        self.num
    }

    pub fn den(&self) -> i64 {
        self.den
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    fn checked_add(self, other: Rational) -> Result<Rational> {
        let num =
            (self.num as i128) * (other.den as i128) + (other.num as i128) * (self.den as i128);
        let den = (self.den as i128) * (other.den as i128);
        let g = gcd(num, den).max(1);
        let (num, den) = (num / g, den / g);
        if num.abs() > i64::MAX as i128 || den > i64::MAX as i128 {
            return Err(Error::InvalidInput("rational overflow".into()));
        }
        Ok(Rational {
            num: num as i64,
            den: den as i64,
        })
    }
}

/// Custom mean-zero, unit-variance law on finitely many rational points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FiniteLattice {
    values: Vec<Rational>,
    probs: Vec<Rational>,
    /// common denominator: value_i = scaled_i / denom
    denom: i64,
    scaled: Vec<i64>,
}

impl FiniteLattice {
    pub fn new(values: Vec<Rational>, probs: Vec<Rational>) -> Result<Self> {
        if values.len() != probs.len() || values.is_empty() {
            return Err(Error::InvalidInput(
                "finite lattice law needs matching, non-empty value/probability arrays".into(),
            ));
        }
        let mut seen = values.clone();
        seen.sort_by(|a, b| (a.num * b.den).cmp(&(b.num * a.den)));
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput(
                "finite lattice support values must be distinct".into(),
            ));
        }
        let mut total = Rational::integer(0);
        for p in &probs {
            if p.num <= 0 {
                return Err(Error::InvalidInput(
                    "finite lattice probabilities must be positive".into(),
                ));
            }
            total = total.checked_add(*p)?;
        }
        if total != Rational::integer(1) {
            return Err(Error::InvalidInput(format!(
                "finite lattice probabilities sum to {}/{}, not 1",
                total.num, total.den
            )));
        }
        // common denominator for the integer-scaled support
        let mut denom: i128 = 1;
        for v in &values {
            denom = denom / gcd(denom, v.den as i128) * v.den as i128;
            if denom > i64::MAX as i128 {
                return Err(Error::InvalidInput("lattice denominator overflow".into()));
            }
        }
        let denom = denom as i64;
        let scaled: Vec<i64> = values.iter().map(|v| v.num * (denom / v.den)).collect();
        let law = FiniteLattice {
            values,
            probs,
            denom,
            scaled,
        };
        let m1 = law.moment_f64(1);
        let m2 = law.moment_f64(2);
        if m1.abs() > 1e-12 || (m2 - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "law must have mean 0 and variance 1, got m1 = {m1:.3e}, m2 = {m2}"
            )));
        }
        Ok(law)
    }

    fn moment_f64(&self, k: u32) -> f64 {
        let mut acc = Accumulator::new();
        for (v, p) in self.values.iter().zip(&self.probs) {
            acc.add(p.to_f64() * v.to_f64().powi(k as i32));
        }
        acc.value()
    }
}

/// The charge marginal. All built-ins satisfy `E[w] = 0`, `E[w^2] = 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ChargeLaw {
    /// +-1 with probability 1/2 each
    Rademacher,
    StandardGaussian,
    /// values -N, 0, 2N with weights 1/(3N^2), 1 - 1/(2N^2), 1/(6N^2)
    ThreePoint(u32),
    FiniteLattice(FiniteLattice),
}

/// Integer-scaled support of a lattice law: values are `scaled/denom`.
#[derive(Debug, Clone)]
pub struct LatticeSupport {
    pub denom: i64,
    pub scaled: Vec<i64>,
    pub probs: Vec<f64>,
}

impl ChargeLaw {
    pub fn three_point(n: u32) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("ThreePoint law requires N >= 1".into()));
        }
        Ok(ChargeLaw::ThreePoint(n))
    }

    pub fn id(&self) -> String {
        match self {
            ChargeLaw::Rademacher => "rademacher".into(),
            ChargeLaw::StandardGaussian => "gaussian".into(),
            ChargeLaw::ThreePoint(n) => format!("three_point({n})"),
            ChargeLaw::FiniteLattice(f) => format!("finite_lattice({} points)", f.values.len()),
        }
    }

    pub fn has_density(&self) -> bool {
        matches!(self, ChargeLaw::StandardGaussian)
    }

    pub fn is_lattice(&self) -> bool {
        !self.has_density()
    }

    /// Raw moment m_k = E[w^k], k <= 6.
    pub fn moment(&self, k: u32) -> f64 {
        assert!(k <= 6, "raw moments cached up to k = 6");
        match self {
            ChargeLaw::Rademacher => {
                if k % 2 == 0 {
                    1.0
                } else {
                    0.0
                }
            }
            ChargeLaw::StandardGaussian => [1.0, 0.0, 1.0, 0.0, 3.0, 0.0, 15.0][k as usize],
            ChargeLaw::ThreePoint(n) => {
                if k == 0 {
                    return 1.0;
                }
                let n = *n as f64;
                // weights 1/(3N^2) at -N and 1/(6N^2) at 2N
                (-n).powi(k as i32) / (3.0 * n * n) + (2.0 * n).powi(k as i32) / (6.0 * n * n)
            }
            ChargeLaw::FiniteLattice(f) => f.moment_f64(k),
        }
    }

    /// Symmetric means the distribution equals its reflection.
    pub fn is_symmetric(&self) -> bool {
        match self {
            ChargeLaw::Rademacher | ChargeLaw::StandardGaussian => true,
            ChargeLaw::ThreePoint(_) => false,
            ChargeLaw::FiniteLattice(f) => {
                let mut pairs: Vec<(i64, Rational)> = f
                    .scaled
                    .iter()
                    .copied()
                    .zip(f.probs.iter().copied())
                    .collect();
                pairs.sort_by_key(|&(v, _)| v);
                pairs.iter().all(|&(v, p)| {
                    pairs
                        .binary_search_by_key(&-v, |&(w, _)| w)
                        .map_or(false, |i| pairs[i].1 == p)
                })
            }
        }
    }

    /// Integer-scaled support for lattice laws.
    pub fn lattice_support(&self) -> Option<LatticeSupport> {
        match self {
            ChargeLaw::Rademacher => Some(LatticeSupport {
                denom: 1,
                scaled: vec![-1, 1],
                probs: vec![0.5, 0.5],
            }),
            ChargeLaw::ThreePoint(n) => {
                let nf = *n as f64;
                Some(LatticeSupport {
                    denom: 1,
                    scaled: vec![-(*n as i64), 0, 2 * *n as i64],
                    probs: vec![
                        1.0 / (3.0 * nf * nf),
                        1.0 - 1.0 / (2.0 * nf * nf),
                        1.0 / (6.0 * nf * nf),
                    ],
                })
            }
            ChargeLaw::FiniteLattice(f) => Some(LatticeSupport {
                denom: f.denom,
                scaled: f.scaled.clone(),
                probs: f.probs.iter().map(|p| p.to_f64()).collect(),
            }),
            ChargeLaw::StandardGaussian => None,
        }
    }

    /// Lattice span T = sup{t > 0 : P(w in tZ) = 1}, 0 for density laws.
    /// Exact gcd over the declared rational support.
    pub fn lattice_span(&self) -> Result<Rational> {
        match self.lattice_support() {
            None => Rational::new(0, 1),
            Some(sup) => {
                let mut g: i128 = 0;
                for &s in &sup.scaled {
                    if s != 0 {
                        g = gcd(g, s as i128);
                    }
                }
                if g == 0 {
                    return Err(Error::InvalidInput(
                        "degenerate law concentrated at zero has no span".into(),
                    ));
                }
                Rational::new(g as i64, sup.denom)
            }
        }
    }

    /// log M(delta) = log E[exp(delta w)].
    pub fn log_mgf(&self, delta: f64) -> f64 {
        match self {
            ChargeLaw::StandardGaussian => 0.5 * delta * delta,
            ChargeLaw::Rademacher => {
                // log cosh with overflow-safe form
                let a = delta.abs();
                a + (-2.0 * a).exp().ln_1p() - core::f64::consts::LN_2
            }
            _ => {
                let sup = self.lattice_support().expect("lattice law");
                let terms: Vec<f64> = sup
                    .scaled
                    .iter()
                    .zip(&sup.probs)
                    .map(|(&s, &p)| p.ln() + delta * s as f64 / sup.denom as f64)
                    .collect();
                log_sum_exp(&terms)
            }
        }
    }

    pub fn mgf(&self, delta: f64) -> f64 {
        self.log_mgf(delta).exp()
    }

    /// Annealed exponent f(delta) = -log M(delta); non-positive for
    /// mean-zero laws.
    pub fn annealed_exponent(&self, delta: f64) -> f64 {
        -self.log_mgf(delta)
    }

    /// Mean and variance of the delta-tilted marginal.
    pub fn tilted_moments(&self, delta: f64) -> TiltedMoments {
        match self {
            ChargeLaw::StandardGaussian => TiltedMoments {
                mean: delta,
                variance: 1.0,
            },
            _ => {
                let sup = self.lattice_support().expect("lattice law");
                let logs: Vec<f64> = sup
                    .scaled
                    .iter()
                    .zip(&sup.probs)
                    .map(|(&s, &p)| p.ln() + delta * s as f64 / sup.denom as f64)
                    .collect();
                let norm = log_sum_exp(&logs);
                let mut mean = Accumulator::new();
                let mut second = Accumulator::new();
                for (i, &s) in sup.scaled.iter().enumerate() {
                    let w = (logs[i] - norm).exp();
                    let v = s as f64 / sup.denom as f64;
                    mean.add(w * v);
                    second.add(w * v * v);
                }
                let m = mean.value();
                TiltedMoments {
                    mean: m,
                    variance: second.value() - m * m,
                }
            }
        }
    }

    /// Draw one charge from the delta-tilted marginal.
    pub fn sample<R: Rng + ?Sized>(&self, delta: f64, rng: &mut R) -> f64 {
        match self {
            ChargeLaw::StandardGaussian => {
                let z: f64 = StandardNormal.sample(rng);
                z + delta
            }
            ChargeLaw::Rademacher => {
                // P(+1) = e^delta / (2 cosh delta) = 1/(1 + e^{-2 delta})
                let p_plus = 1.0 / (1.0 + (-2.0 * delta).exp());
                if rng.random::<f64>() < p_plus {
                    1.0
                } else {
                    -1.0
                }
            }
            _ => {
                let sup = self.lattice_support().expect("lattice law");
                let logs: Vec<f64> = sup
                    .scaled
                    .iter()
                    .zip(&sup.probs)
                    .map(|(&s, &p)| p.ln() + delta * s as f64 / sup.denom as f64)
                    .collect();
                let norm = log_sum_exp(&logs);
                let u: f64 = rng.random();
                let mut cum = 0.0;
                for (i, &l) in logs.iter().enumerate() {
                    cum += (l - norm).exp();
                    if u < cum {
                        return sup.scaled[i] as f64 / sup.denom as f64;
                    }
                }
                *sup.scaled.last().unwrap() as f64 / sup.denom as f64
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TiltedMoments {
    pub mean: f64,
    pub variance: f64,
}

/// Charge-bias / inverse-temperature pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TiltParams {
    pub delta: f64,
    pub beta: f64,
}

impl TiltParams {
    /// beta = 0 is allowed for factorization checks.
    pub fn new(delta: f64, beta: f64) -> Result<Self> {
        if !delta.is_finite() || delta < 0.0 {
            return Err(Error::InvalidInput(format!(
                "charge bias delta must be finite and >= 0, got {delta}"
            )));
        }
        if !beta.is_finite() || beta < 0.0 {
            return Err(Error::InvalidInput(format!(
                "inverse temperature beta must be finite and >= 0, got {beta}"
            )));
        }
        Ok(TiltParams { delta, beta })
    }
}

/// i.i.d. tilted charges.
pub fn sample_charges<R: Rng + ?Sized>(
    law: &ChargeLaw,
    delta: f64,
    n: usize,
    rng: &mut R,
) -> Vec<f64> {
    (0..n).map(|_| law.sample(delta, rng)).collect()
}

/// Law of Ω_ℓ = w_1 + ... + w_ℓ under the untilted marginal.
#[derive(Debug, Clone)]
pub enum OmegaSumLaw {
    /// exact pmf on scaled integers: `P(Ω = (min_scaled + i)/denom) = pmf[i]`
    Exact {
        ell: u32,
        denom: i64,
        min_scaled: i64,
        pmf: Vec<f64>,
    },
    /// exact representation for Gaussian charges
    Gaussian { ell: u32 },
}

impl OmegaSumLaw {
    pub fn total_mass(&self) -> f64 {
        match self {
            OmegaSumLaw::Exact { pmf, .. } => crate::numeric::sum(pmf),
            OmegaSumLaw::Gaussian { .. } => 1.0,
        }
    }

    /// E[Ω_ℓ^k] from the representation itself.
    pub fn moment(&self, k: u32) -> f64 {
        match self {
            OmegaSumLaw::Gaussian { ell } => {
                if *ell == 0 {
                    return if k == 0 { 1.0 } else { 0.0 };
                }
                if k % 2 == 1 {
                    0.0
                } else {
                    // (k-1)!! * ell^{k/2}
                    let mut dfac = 1.0;
                    let mut j = k as i64 - 1;
                    while j > 1 {
                        dfac *= j as f64;
                        j -= 2;
                    }
                    dfac * (*ell as f64).powi(k as i32 / 2)
                }
            }
            OmegaSumLaw::Exact {
                denom,
                min_scaled,
                pmf,
                ..
            } => {
                let mut acc = Accumulator::new();
                for (i, &p) in pmf.iter().enumerate() {
                    let x = (*min_scaled + i as i64) as f64 / *denom as f64;
                    acc.add(p * x.powi(k as i32));
                }
                acc.value()
            }
        }
    }
}

/// Exact convolution (lattice laws) or Gaussian representation of Ω_ℓ.
pub fn omega_sum_law(law: &ChargeLaw, ell: u32) -> OmegaSumLaw {
    if ell == 0 {
        return OmegaSumLaw::Exact {
            ell: 0,
            denom: 1,
            min_scaled: 0,
            pmf: vec![1.0],
        };
    }
    match law.lattice_support() {
        None => OmegaSumLaw::Gaussian { ell },
        Some(sup) => {
            let mut conv = LatticeConvolver::new(&sup);
            for _ in 0..ell {
                conv.extend();
            }
            OmegaSumLaw::Exact {
                ell,
                denom: sup.denom,
                min_scaled: conv.min_scaled,
                pmf: conv.pmf,
            }
        }
    }
}

/// Incremental convolver for Ω_1, Ω_2, ...; used by the single-site
/// table builder to avoid re-convolving from scratch at each ℓ.
pub(crate) struct LatticeConvolver {
    kernel_scaled: Vec<i64>,
    kernel_probs: Vec<f64>,
    pub min_scaled: i64,
    pub pmf: Vec<f64>,
    pub ell: u32,
}

impl LatticeConvolver {
    pub fn new(sup: &LatticeSupport) -> Self {
        LatticeConvolver {
            kernel_scaled: sup.scaled.clone(),
            kernel_probs: sup.probs.clone(),
            min_scaled: 0,
            pmf: vec![1.0],
            ell: 0,
        }
    }

    /// Convolve one more charge into the pmf.
    pub fn extend(&mut self) {
        let kmin = *self.kernel_scaled.iter().min().unwrap();
        let kmax = *self.kernel_scaled.iter().max().unwrap();
        let new_min = self.min_scaled + kmin;
        let new_len = self.pmf.len() + (kmax - kmin) as usize;
        let mut next = vec![0.0f64; new_len];
        for (i, &p) in self.pmf.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for (&s, &kp) in self.kernel_scaled.iter().zip(&self.kernel_probs) {
                let off = (self.min_scaled + i as i64 + s - new_min) as usize;
                next[off] += p * kp;
            }
        }
        self.min_scaled = new_min;
        self.pmf = next;
        self.ell += 1;
    }
}

/// E[Ω_ℓ^k] from the closed moment formulas, k <= 6.
pub fn omega_sum_moments(law: &ChargeLaw, ell: u32, k: u32) -> Result<f64> {
    if k > 6 {
        return Err(Error::InvalidInput(
            "closed Ω_ℓ moment formulas are implemented for k <= 6".into(),
        ));
    }
    let l = ell as f64;
    let (m2, m3, m4, m5, m6) = (
        law.moment(2),
        law.moment(3),
        law.moment(4),
        law.moment(5),
        law.moment(6),
    );
    Ok(match k {
        0 => 1.0,
        1 => 0.0,
        2 => m2 * l,
        3 => m3 * l,
        4 => 3.0 * m2 * m2 * l * (l - 1.0) + m4 * l,
        5 => 10.0 * m2 * m3 * l * (l - 1.0) + m5 * l,
        6 => {
            15.0 * m2 * m2 * m2 * l * (l - 1.0) * (l - 2.0)
                + (15.0 * m2 * m4 + 10.0 * m3 * m3) * l * (l - 1.0)
                + m6 * l
        }
        _ => unreachable!(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::shard_rng;

    fn builtin_laws() -> Vec<ChargeLaw> {
        vec![
            ChargeLaw::Rademacher,
            ChargeLaw::StandardGaussian,
            ChargeLaw::three_point(1).unwrap(),
            ChargeLaw::three_point(4).unwrap(),
            ChargeLaw::FiniteLattice(
                // values -2, 1 with probs 1/3, 2/3: mean 0, variance 2 -> rejected below;
                // use -1, 1 with 1/2 each expressed as rationals
                FiniteLattice::new(
                    vec![Rational::new(-1, 1).unwrap(), Rational::new(1, 1).unwrap()],
                    vec![Rational::new(1, 2).unwrap(), Rational::new(1, 2).unwrap()],
                )
                .unwrap(),
            ),
        ]
    }

    #[test]
    fn normalization_of_all_builtins() {
        for law in builtin_laws() {
            assert!(law.moment(1).abs() <= 1e-12, "{}", law.id());
            assert!((law.moment(2) - 1.0).abs() <= 1e-12, "{}", law.id());
        }
    }

    #[test]
    fn denormalized_custom_law_is_rejected() {
        let bad = FiniteLattice::new(
            vec![Rational::new(-2, 1).unwrap(), Rational::new(2, 1).unwrap()],
            vec![Rational::new(1, 2).unwrap(), Rational::new(1, 2).unwrap()],
        );
        assert!(bad.is_err());
    }

    #[test]
    fn three_point_moments() {
        for n in 1..=10u32 {
            let law = ChargeLaw::three_point(n).unwrap();
            assert!((law.moment(3) - n as f64).abs() < 1e-12);
            assert!((law.moment(4) - 3.0 * (n as f64).powi(2)).abs() < 1e-9);
        }
    }

    #[test]
    fn mgf_examples() {
        let r = ChargeLaw::Rademacher;
        assert!((r.mgf(1.0) - 1.0f64.cosh()).abs() < 1e-14);
        let g = ChargeLaw::StandardGaussian;
        assert!((g.mgf(0.7) - (0.245f64).exp()).abs() < 1e-14);
        for law in builtin_laws() {
            assert!((law.mgf(0.0) - 1.0).abs() < 1e-14);
            // Jensen: M >= 1 for mean-zero laws, so f <= 0
            assert!(law.annealed_exponent(0.8) <= 1e-15);
        }
    }

    #[test]
    fn tilted_moments_examples() {
        let r = ChargeLaw::Rademacher;
        let tm = r.tilted_moments(0.9);
        assert!((tm.mean - 0.9f64.tanh()).abs() < 1e-14);
        assert!((tm.variance - (1.0 - 0.9f64.tanh().powi(2))).abs() < 1e-13);
        let g = ChargeLaw::StandardGaussian.tilted_moments(1.3);
        assert_eq!((g.mean, g.variance), (1.3, 1.0));
        let t = ChargeLaw::three_point(3).unwrap().tilted_moments(0.0);
        assert!(t.mean.abs() < 1e-13 && (t.variance - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tilted_moments_match_numerical_mgf_derivatives() {
        // m(delta) = (log M)'(delta), v(delta) = (log M)''(delta)
        let h = 1e-5;
        for law in builtin_laws() {
            for &delta in &[0.0, 0.4, 1.1] {
                let lm = |x: f64| law.log_mgf(x);
                let m_num = (lm(delta + h) - lm(delta - h)) / (2.0 * h);
                let v_num = (lm(delta + h) - 2.0 * lm(delta) + lm(delta - h)) / (h * h);
                let tm = law.tilted_moments(delta);
                assert!(
                    (tm.mean - m_num).abs() < 1e-6,
                    "{} delta={delta}: {} vs {}",
                    law.id(),
                    tm.mean,
                    m_num
                );
                assert!(
                    (tm.variance - v_num).abs() < 1e-4,
                    "{} delta={delta}: {} vs {}",
                    law.id(),
                    tm.variance,
                    v_num
                );
            }
        }
    }

    #[test]
    fn lattice_spans() {
        assert_eq!(
            ChargeLaw::Rademacher.lattice_span().unwrap(),
            Rational::integer(1)
        );
        assert_eq!(
            ChargeLaw::StandardGaussian.lattice_span().unwrap(),
            Rational::new(0, 1).unwrap()
        );
        for n in 1..=10 {
            assert_eq!(
                ChargeLaw::three_point(n).unwrap().lattice_span().unwrap(),
                Rational::integer(n as i64)
            );
        }
        // half-integer support
        let half = FiniteLattice::new(
            vec![Rational::new(-3, 2).unwrap(), Rational::new(2, 3).unwrap()],
            vec![Rational::new(4, 13).unwrap(), Rational::new(9, 13).unwrap()],
        );
        // mean: -3/2*4/13 + 2/3*9/13 = -6/13 + 6/13 = 0; m2 = 9/4*4/13+4/9*9/13 = 1
        let law = ChargeLaw::FiniteLattice(half.unwrap());
        assert_eq!(law.lattice_span().unwrap(), Rational::new(1, 6).unwrap());
    }

    #[test]
    fn omega_sum_exact_matches_closed_moments() {
        let laws = [ChargeLaw::Rademacher, ChargeLaw::three_point(2).unwrap()];
        for law in laws {
            for ell in [0u32, 1, 2, 5, 12, 30] {
                let sum_law = omega_sum_law(&law, ell);
                assert!((sum_law.total_mass() - 1.0).abs() < 1e-10);
                for k in 0..=6 {
                    let exact = sum_law.moment(k);
                    let formula = omega_sum_moments(&law, ell, k).unwrap();
                    let scale = formula.abs().max(1.0);
                    assert!(
                        (exact - formula).abs() <= 1e-10 * scale,
                        "{} ell={ell} k={k}: {exact} vs {formula}",
                        law.id()
                    );
                }
            }
        }
    }

    #[test]
    fn rademacher_fourth_moment_formula() {
        // E[Omega_l^4] = 3 l(l-1) + l = 3 l^2 - 2 l for m4 = 1
        for ell in [1u32, 3, 10, 20] {
            let l = ell as f64;
            let v = omega_sum_law(&ChargeLaw::Rademacher, ell).moment(4);
            assert!((v - (3.0 * l * l - 2.0 * l)).abs() < 1e-9 * (l * l).max(1.0));
        }
    }

    #[test]
    fn omega_zero_is_point_mass() {
        let law = omega_sum_law(&ChargeLaw::StandardGaussian, 0);
        assert!((law.moment(0) - 1.0).abs() < 1e-15);
        for k in 1..=6 {
            assert_eq!(law.moment(k), 0.0);
        }
    }

    #[test]
    fn sampling_means_converge_to_tilted_mean() {
        let mut rng = shard_rng(11, 0);
        for law in [
            ChargeLaw::Rademacher,
            ChargeLaw::StandardGaussian,
            ChargeLaw::three_point(2).unwrap(),
        ] {
            let delta = 0.6;
            let n = 200_000;
            let xs = sample_charges(&law, delta, n, &mut rng);
            let m = crate::numeric::mean(&xs);
            let tm = law.tilted_moments(delta);
            let se = (tm.variance / n as f64).sqrt();
            assert!(
                (m - tm.mean).abs() < 5.0 * se,
                "{}: {m} vs {} (se {se})",
                law.id(),
                tm.mean
            );
        }
    }

    #[test]
    fn gaussian_tilt_shifts_mean_only() {
        let mut rng = shard_rng(5, 0);
        let xs = sample_charges(&ChargeLaw::StandardGaussian, 2.0, 100_000, &mut rng);
        let m = crate::numeric::mean(&xs);
        let v = crate::numeric::variance(&xs);
        assert!((m - 2.0).abs() < 0.02);
        assert!((v - 1.0).abs() < 0.02);
    }
}
