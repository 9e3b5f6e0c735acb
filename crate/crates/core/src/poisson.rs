//! Poisson log-mass and a reproducible Poisson sampler.

use rand::Rng;
use statrs::function::gamma::ln_gamma as statrs_ln_gamma;

/// Rates below this use inverse-transform sampling, at or above it PTRS.
pub const INVERSION_CUTOFF: f64 = 30.0;

pub fn ln_factorial(y: u64) -> f64 {
    if y <= 20 {
        // exact in u64, so only the final log rounds
        ((1..=y).product::<u64>() as f64).ln()
    } else {
        statrs_ln_gamma(y as f64 + 1.0)
    }
}

/// Log gamma function, exact up to rounding at small positive integers.
pub fn ln_gamma(x: f64) -> f64 {
    if (1.0..=21.0).contains(&x) && x.fract() == 0.0 {
        ln_factorial(x as u64 - 1)
    } else {
        statrs_ln_gamma(x)
    }
}

/// `log Poisson(y; rate)` with `0 * log 0 = 0`. A zero rate with a positive
/// count gives negative infinity.
pub fn ln_pmf(y: u64, rate: f64) -> f64 {
    if rate == 0.0 {
        return if y == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    let yf = y as f64;
    let term = if y == 0 { 0.0 } else { yf * rate.ln() };
    term - rate - ln_factorial(y)
}

pub fn pmf(y: u64, rate: f64) -> f64 {
    ln_pmf(y, rate).exp()
}

/// Draws from Poisson(`rate`).
///
/// The algorithm is a fixed function of the rate: sequential inversion for
/// `rate < 30`, and Hörmann's transformed rejection (PTRS) otherwise. Both
/// only consume uniforms from `rng`, so a portable generator gives the same
/// draws on every platform.
pub fn sample<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> u64 {
    debug_assert!(rate >= 0.0);
    if rate <= 0.0 || !rate.is_finite() {
        return if rate.is_finite() { 0 } else { u64::MAX };
    }
    if rate < INVERSION_CUTOFF {
        sample_inversion(rate, rng)
    } else {
        sample_ptrs(rate, rng)
    }
}

fn sample_inversion<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> u64 {
    let u: f64 = rng.random();
    let mut k = 0u64;
    let mut p = (-rate).exp();
    let mut cdf = p;
    while u > cdf {
        k += 1;
        p *= rate / k as f64;
        if p == 0.0 {
            // u fell into rounding slack past the representable tail
            break;
        }
        cdf += p;
    }
    k
}

fn sample_ptrs<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> u64 {
    let slam = rate.sqrt();
    let loglam = rate.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u: f64 = rng.random::<f64>() - 0.5;
        let v: f64 = rng.random();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + rate + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        let lhs = v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln();
        let rhs = -rate + k * loglam - ln_gamma(k + 1.0);
        if lhs <= rhs {
            return k as u64;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ln_pmf_hand_values() {
        let expected = 3.0 * 2f64.ln() - 2.0 - 6f64.ln();
        assert!((ln_pmf(3, 2.0) - expected).abs() < 1e-14);
        assert_eq!(ln_pmf(0, 0.0), 0.0);
        assert_eq!(ln_pmf(1, 0.0), f64::NEG_INFINITY);
        assert!((pmf(0, 1.0) - (-1f64).exp()).abs() < 1e-16);
    }

    #[test]
    fn pmf_normalizes() {
        for rate in [0.01f64, 0.7, 4.0, 29.9, 150.0] {
            let upper = (rate + 20.0 * rate.sqrt() + 50.0).ceil() as u64;
            let total: f64 = (0..=upper).map(|y| pmf(y, rate)).sum();
            assert!((total - 1.0).abs() < 1e-9, "rate {rate}: {total}");
        }
    }

    #[test]
    fn sampler_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for rate in [0.3, 5.0, 29.0, 30.0, 80.0, 1e4] {
            let n = 100_000;
            let draws: Vec<f64> = (0..n).map(|_| sample(rate, &mut rng) as f64).collect();
            let mean = draws.iter().sum::<f64>() / n as f64;
            let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (rate / n as f64).sqrt();
            assert!((mean - rate).abs() < 4.0 * se, "rate {rate}: mean {mean}");
            assert!((var / rate - 1.0).abs() < 0.03, "rate {rate}: var {var}");
        }
    }

    #[test]
    fn sampler_matches_pmf_across_cutoff() {
        // chi-square style check of bin frequencies on both sides of the switch
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for rate in [25.0, 45.0] {
            let n = 200_000;
            let mut counts = vec![0usize; 200];
            for _ in 0..n {
                let k = sample(rate, &mut rng) as usize;
                counts[k.min(199)] += 1;
            }
            let lo = (rate - 2.0 * f64::sqrt(rate)) as usize;
            let hi = (rate + 2.0 * f64::sqrt(rate)) as usize;
            for k in lo..=hi {
                let p = pmf(k as u64, rate);
                let se = (p * (1.0 - p) / n as f64).sqrt();
                let freq = counts[k] as f64 / n as f64;
                assert!((freq - p).abs() < 5.0 * se, "rate {rate} k {k}");
            }
        }
    }

    #[test]
    fn sampler_is_deterministic() {
        let a: Vec<u64> = {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            (0..50).map(|i| sample(i as f64 * 2.0, &mut rng)).collect()
        };
        let b: Vec<u64> = {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            (0..50).map(|i| sample(i as f64 * 2.0, &mut rng)).collect()
        };
        assert_eq!(a, b);
        assert_eq!(a[0], 0);
    }
}
