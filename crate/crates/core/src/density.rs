//! State-dependent emission densities.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::basis::SplineBasis;
use crate::error::{invalid, Error, Result};
use crate::scalar::{softmax, Real};
use crate::stats;

/// Number of trapezoid nodes used by [`kld`].
pub const KLD_GRID_POINTS: usize = 4096;
/// Truth density values below this are dropped from [`kld`].
pub const KLD_TRUNCATION: f64 = 1e-12;
/// Truth mass allowed where the estimate vanishes before [`kld`] is infinite.
pub const KLD_UNCOVERED_MASS: f64 = 1e-3;
/// Half-width, in standard deviations, of a normal's effective support.
const NORMAL_SUPPORT_SDS: f64 = 12.0;

/// Mixture `sum_k a_k phi_k` over a shared spline basis, with weights given
/// through the multinomial logit link and the centre logit pinned to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineDensity<F> {
    basis: Arc<SplineBasis<F>>,
    logits: Vec<F>,
    weights: Vec<F>,
}

impl<F: Real> SplineDensity<F> {
    /// `logits` has one entry per basis element; the centre entry must be zero.
    pub fn from_logits(basis: Arc<SplineBasis<F>>, logits: Vec<F>) -> Result<Self> {
        if logits.len() != basis.len() {
            return invalid(format!("expected {} logits, got {}", basis.len(), logits.len()));
        }
        if logits[basis.center_index()] != F::zero() {
            return invalid("centre logit must be zero");
        }
        if logits.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("spline logit".into()));
        }
        let weights = softmax(&logits);
        Ok(Self { basis, logits, weights })
    }

    /// The `2K` free logits, centre omitted.
    pub fn from_free_logits(basis: Arc<SplineBasis<F>>, free: &[F]) -> Result<Self> {
        let c = basis.center_index();
        if free.len() + 1 != basis.len() {
            return invalid(format!("expected {} free logits, got {}", basis.len() - 1, free.len()));
        }
        let mut logits = Vec::with_capacity(basis.len());
        logits.extend_from_slice(&free[..c]);
        logits.push(F::zero());
        logits.extend_from_slice(&free[c..]);
        Self::from_logits(basis, logits)
    }

    /// Equal weights on every element.
    pub fn uniform(basis: Arc<SplineBasis<F>>) -> Self {
        let n = basis.len();
        Self::from_logits(basis, vec![F::zero(); n]).expect("zero logits are valid")
    }

    /// Logits recovered from strictly positive weights, re-centred so the centre logit is zero.
    pub fn from_weights(basis: Arc<SplineBasis<F>>, weights: &[F]) -> Result<Self> {
        if weights.len() != basis.len() {
            return invalid(format!("expected {} weights, got {}", basis.len(), weights.len()));
        }
        if weights.iter().any(|&w| !(w > F::zero())) {
            return invalid("spline weights must be strictly positive");
        }
        let anchor = weights[basis.center_index()].ln();
        let logits = weights.iter().map(|w| w.ln() - anchor).collect();
        Self::from_logits(basis, logits)
    }

    pub fn basis(&self) -> &Arc<SplineBasis<F>> {
        &self.basis
    }

    pub fn logits(&self) -> &[F] {
        &self.logits
    }

    pub fn free_logits(&self) -> Vec<F> {
        let c = self.basis.center_index();
        self.logits.iter().enumerate().filter(|&(k, _)| k != c).map(|(_, &b)| b).collect()
    }

    pub fn weights(&self) -> &[F] {
        &self.weights
    }

    pub fn pdf(&self, x: F) -> F {
        self.basis.eval_row(x).dot(&self.weights)
    }

    pub fn cdf(&self, x: F) -> F {
        self.basis.mixture_cdf(&self.weights, x)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> F {
        let j = stats::sample_categorical(&self.weights, rng);
        self.basis.sample_element(j, rng)
    }

    pub fn moments(&self) -> (F, F) {
        let mut m1 = F::zero();
        let mut m2 = F::zero();
        for (&a, (e1, e2)) in self.weights.iter().zip(self.basis.moments()) {
            m1 = m1 + a * e1;
            m2 = m2 + a * e2;
        }
        (m1, m2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalDensity<F> {
    pub mean: F,
    pub sd: F,
}

impl<F: Real> NormalDensity<F> {
    pub fn new(mean: F, sd: F) -> Result<Self> {
        if !mean.is_finite() || !sd.is_finite() {
            return Err(Error::NonFinite(format!("normal({mean}, {sd})")));
        }
        if sd <= F::zero() {
            return invalid(format!("standard deviation must be positive, got {sd}"));
        }
        Ok(Self { mean, sd })
    }

    pub fn pdf(&self, x: F) -> F {
        let z = (x - self.mean) / self.sd;
        (-(z * z) * F::lit(0.5)).exp() / (self.sd * F::TAU().sqrt())
    }

    pub fn cdf(&self, x: F) -> F {
        stats::std_normal_cdf((x - self.mean) / self.sd)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> F {
        let z: f64 = StandardNormal.sample(rng);
        self.mean + self.sd * F::lit(z)
    }

    pub fn moments(&self) -> (F, F) {
        (self.mean, self.mean * self.mean + self.sd * self.sd)
    }

    fn effective_support(&self) -> (F, F) {
        let w = F::lit(NORMAL_SUPPORT_SDS) * self.sd;
        (self.mean - w, self.mean + w)
    }
}

/// `w * N(mu_1, sd_1) + (1 - w) * N(mu_2, sd_2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalMixtureDensity<F> {
    pub first: NormalDensity<F>,
    pub second: NormalDensity<F>,
    pub weight: F,
}

impl<F: Real> NormalMixtureDensity<F> {
    /// The weight may sit on the closed interval so that degenerate mixtures
    /// can be expressed; fitted mixtures always have it strictly inside.
    pub fn new(first: NormalDensity<F>, second: NormalDensity<F>, weight: F) -> Result<Self> {
        if !(weight >= F::zero() && weight <= F::one()) {
            return invalid(format!("mixing weight must lie in [0, 1], got {weight}"));
        }
        Ok(Self { first, second, weight })
    }

    pub fn pdf(&self, x: F) -> F {
        self.weight * self.first.pdf(x) + (F::one() - self.weight) * self.second.pdf(x)
    }

    pub fn cdf(&self, x: F) -> F {
        self.weight * self.first.cdf(x) + (F::one() - self.weight) * self.second.cdf(x)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> F {
        let u: f64 = rng.random();
        if F::lit(u) < self.weight {
            self.first.sample(rng)
        } else {
            self.second.sample(rng)
        }
    }

    pub fn moments(&self) -> (F, F) {
        let (a1, a2) = self.first.moments();
        let (b1, b2) = self.second.moments();
        let w = self.weight;
        let v = F::one() - w;
        (w * a1 + v * b1, w * a2 + v * b2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StateDensity<F> {
    Spline(SplineDensity<F>),
    Normal(NormalDensity<F>),
    NormalMixture(NormalMixtureDensity<F>),
}

impl<F: Real> StateDensity<F> {
    pub fn pdf(&self, x: F) -> F {
        match self {
            Self::Spline(d) => d.pdf(x),
            Self::Normal(d) => d.pdf(x),
            Self::NormalMixture(d) => d.pdf(x),
        }
    }

    pub fn cdf(&self, x: F) -> F {
        match self {
            Self::Spline(d) => d.cdf(x),
            Self::Normal(d) => d.cdf(x),
            Self::NormalMixture(d) => d.cdf(x),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> F {
        match self {
            Self::Spline(d) => d.sample(rng),
            Self::Normal(d) => d.sample(rng),
            Self::NormalMixture(d) => d.sample(rng),
        }
    }

    /// `(E[X], E[X^2])`.
    pub fn moments(&self) -> (F, F) {
        match self {
            Self::Spline(d) => d.moments(),
            Self::Normal(d) => d.moments(),
            Self::NormalMixture(d) => d.moments(),
        }
    }

    pub fn mean(&self) -> F {
        self.moments().0
    }

    /// Interval carrying all but a negligible fraction of the mass.
    pub fn effective_support(&self) -> (F, F) {
        match self {
            Self::Spline(d) => d.basis().total_support(),
            Self::Normal(d) => d.effective_support(),
            Self::NormalMixture(d) => {
                let (a, b) = d.first.effective_support();
                let (c, e) = d.second.effective_support();
                (a.min(c), b.max(e))
            }
        }
    }

    /// Number of free parameters when estimated.
    pub fn num_params(&self) -> usize {
        match self {
            Self::Spline(d) => d.basis().len() - 1,
            Self::Normal(_) => 2,
            Self::NormalMixture(_) => 5,
        }
    }
}

/// Kullback-Leibler divergence `int truth log(truth / estimate)` by the
/// trapezoid rule on [`KLD_GRID_POINTS`] nodes over the union of supports.
///
/// Points where the estimate vanishes are left out, which matters for spline
/// estimates whose support ends near the data range while the truth has
/// tails. If the truth puts more than [`KLD_UNCOVERED_MASS`] there, the
/// result is `+inf`. NaN from the quadrature is an error.
pub fn kld<F: Real>(truth: &StateDensity<F>, estimate: &StateDensity<F>) -> Result<F> {
    let (a0, b0) = truth.effective_support();
    let (a1, b1) = estimate.effective_support();
    let (lo, hi) = (a0.min(a1), b0.max(b1));
    let n = KLD_GRID_POINTS;
    let step = (hi - lo) / F::from_count(n - 1);
    let cutoff = F::lit(KLD_TRUNCATION);
    let mut total = F::zero();
    let mut uncovered = F::zero();
    for g in 0..n {
        let x = lo + F::from_count(g) * step;
        let p = truth.pdf(x);
        if p < cutoff {
            continue;
        }
        let w = if g == 0 || g == n - 1 { F::lit(0.5) } else { F::one() };
        let q = estimate.pdf(x);
        if !(q > F::zero()) {
            uncovered = uncovered + w * p;
            continue;
        }
        total = total + w * p * (p / q).ln();
    }
    if uncovered * step > F::lit(KLD_UNCOVERED_MASS) {
        return Ok(F::infinity());
    }
    let total = total * step;
    if total.is_nan() {
        return Err(Error::NonFinite("KL divergence".into()));
    }
    Ok(total.max(F::zero()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    type NormalDensity = super::NormalDensity<f64>;
    type NormalMixtureDensity = super::NormalMixtureDensity<f64>;

    fn basis() -> Arc<SplineBasis<f64>> {
        Arc::new(SplineBasis::new(-4.0, 4.0, 6).unwrap())
    }

    #[test]
    fn uniform_spline_is_mean_of_basis() {
        let b = basis();
        let d = SplineDensity::uniform(b.clone());
        for &x in &[-3.3, 0.0, 1.7] {
            let mean = b.eval(x).iter().sum::<f64>() / b.len() as f64;
            assert!((d.pdf(x) - mean).abs() < 1e-15);
        }
        assert!(d.weights().iter().all(|&a| (a - 1.0 / 13.0).abs() < 1e-15));
    }

    #[test]
    fn standard_normal_values() {
        let n = NormalDensity::new(0.0, 1.0).unwrap();
        assert!((n.pdf(0.0) - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert!((n.cdf(0.0) - 0.5).abs() < 1e-15);
        assert!(NormalDensity::new(0.0, 0.0).is_err());
        assert!(NormalDensity::new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn spline_cdf_limits() {
        let b = basis();
        let d = SplineDensity::from_free_logits(b.clone(), &[0.3; 12]).unwrap();
        let (lo, hi) = b.total_support();
        assert_eq!(d.cdf(lo - 1.0), 0.0);
        assert!((d.cdf(hi + 1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn free_logit_round_trip() {
        let b = basis();
        let free: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let d = SplineDensity::from_free_logits(b.clone(), &free).unwrap();
        assert_eq!(d.free_logits(), free);
        let back = SplineDensity::from_weights(b, d.weights()).unwrap();
        for (x, y) in back.logits().iter().zip(d.logits()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_malformed_logits() {
        let b = basis();
        assert!(SplineDensity::from_logits(b.clone(), vec![0.0; 12]).is_err());
        let mut l = vec![0.0; 13];
        l[6] = 1.0;
        assert!(SplineDensity::from_logits(b.clone(), l).is_err());
        assert!(SplineDensity::from_free_logits(b, &[f64::INFINITY; 12]).is_err());
    }

    #[test]
    fn kld_closed_forms() {
        let n01 = StateDensity::Normal(NormalDensity::new(0.0, 1.0).unwrap());
        let n11 = StateDensity::Normal(NormalDensity::new(1.0, 1.0).unwrap());
        let n02 = StateDensity::Normal(NormalDensity::new(0.0, 2.0).unwrap());
        assert!(kld(&n01, &n01).unwrap().abs() < 1e-9);
        assert!((kld(&n01, &n11).unwrap() - 0.5).abs() < 1e-6);
        let closed = 2f64.ln() + 1.0 / 8.0 - 0.5;
        assert!((kld(&n01, &n02).unwrap() - closed).abs() < 1e-6);
    }

    #[test]
    fn kld_infinite_on_support_mismatch() {
        let b = Arc::new(SplineBasis::new(10.0, 12.0, 3).unwrap());
        let far = StateDensity::Spline(SplineDensity::uniform(b));
        let n = StateDensity::Normal(NormalDensity::new(0.0, 1.0).unwrap());
        assert_eq!(kld(&n, &far).unwrap(), f64::INFINITY);
    }

    #[test]
    fn mixture_moments() {
        let m = NormalMixtureDensity::new(
            NormalDensity::new(3.0, 1.0).unwrap(),
            NormalDensity::new(-5.0, 1.0).unwrap(),
            0.85,
        )
        .unwrap();
        let (m1, m2) = m.moments();
        assert!((m1 - 1.8).abs() < 1e-12);
        assert!((m2 - (0.85 * 10.0 + 0.15 * 26.0)).abs() < 1e-12);
        assert!(NormalMixtureDensity::new(m.first, m.second, 1.5).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let d = StateDensity::Spline(SplineDensity::from_free_logits(basis(), &[0.1; 12]).unwrap());
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| d.sample(&mut rng)).collect::<Vec<f64>>()
        };
        assert_eq!(draw(9), draw(9));
        assert_ne!(draw(9), draw(10));
    }
}
