//! Small statistical helpers shared across modules.

use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf;

use crate::scalar::Real;

pub fn std_normal_cdf<F: Real>(z: F) -> F {
    F::lit(0.5 * erf::erfc(-z.f64() / std::f64::consts::SQRT_2))
}

/// Inverse standard normal CDF.
pub fn std_normal_quantile<F: Real>(p: F) -> F {
    let n = Normal::standard();
    F::lit(n.inverse_cdf(p.f64()))
}

/// Index drawn with probability proportional to `weights`.
pub fn sample_categorical<F: Real, R: Rng + ?Sized>(weights: &[F], rng: &mut R) -> usize {
    let total: F = weights.iter().copied().sum();
    let u: f64 = rng.random();
    let target = F::lit(u) * total;
    let mut acc = F::zero();
    for (i, &w) in weights.iter().enumerate() {
        acc = acc + w;
        if target < acc {
            return i;
        }
    }
    // rounding can leave target == total; fall back to the last positive weight
    weights.iter().rposition(|&w| w > F::zero()).unwrap_or(0)
}

pub fn mean<F: Real>(xs: &[F]) -> F {
    xs.iter().copied().sum::<F>() / F::from_count(xs.len())
}

/// Sample standard deviation (divisor `n - 1`).
pub fn sample_sd<F: Real>(xs: &[F]) -> F {
    if xs.len() < 2 {
        return F::zero();
    }
    let m = mean(xs);
    let ss: F = xs.iter().map(|&x| (x - m) * (x - m)).sum();
    (ss / F::from_count(xs.len() - 1)).sqrt()
}

/// Empirical quantile with linear interpolation between order statistics
/// (Hyndman-Fan type 7). `sorted` must be ascending and nonempty.
pub fn quantile_sorted<F: Real>(sorted: &[F], p: F) -> F {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p.max(F::zero()).min(F::one()) * F::from_count(n - 1);
    let lo = pos.floor();
    let i = lo.to_usize().unwrap_or(0).min(n - 1);
    if i + 1 >= n {
        return sorted[n - 1];
    }
    let frac = pos - lo;
    sorted[i] + frac * (sorted[i + 1] - sorted[i])
}

pub fn quantile<F: Real>(xs: &[F], p: F) -> F {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    quantile_sorted(&v, p)
}

/// Sample autocorrelation at lags `0..=max_lag` (biased estimator).
pub fn sample_acf<F: Real>(xs: &[F], max_lag: usize) -> Vec<F> {
    let n = xs.len();
    let m = mean(xs);
    let denom: F = xs.iter().map(|&x| (x - m) * (x - m)).sum();
    (0..=max_lag)
        .map(|lag| {
            if lag >= n {
                return F::zero();
            }
            let num: F = (0..n - lag).map(|t| (xs[t] - m) * (xs[t + lag] - m)).sum();
            num / denom
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quantile_type7() {
        let v = [1.0_f64, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 5.0);
        assert!((quantile_sorted(&v, 0.3) - 2.2).abs() < 1e-12);
    }

    #[test]
    fn normal_cdf_and_quantile_agree() {
        for &z in &[-3.0, -0.5, 0.0, 1.2, 4.0] {
            let p: f64 = std_normal_cdf(z);
            assert!((std_normal_quantile(p) - z).abs() < 1e-8);
        }
    }

    #[test]
    fn categorical_never_picks_zero_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = [0.0, 0.5, 0.0, 0.5];
        for _ in 0..1000 {
            let i = sample_categorical(&w, &mut rng);
            assert!(i == 1 || i == 3);
        }
    }

    #[test]
    fn acf_lag_zero_is_one() {
        let xs = [1.0_f64, 3.0, 2.0, 5.0, 4.0];
        let r = sample_acf(&xs, 2);
        assert!((r[0] - 1.0).abs() < 1e-15);
    }
}
