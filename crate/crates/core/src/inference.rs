//! Parametric bootstrap, confidence bands and forecast pseudo-residuals.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimation::{fit_with_starts, FitConfig, ModelSpec};
use crate::hmm::{forecast_state_probs, HmmModel, Observation};
use crate::rng;
use crate::scalar::Real;
use crate::sim::simulate_series;
use crate::stats;

/// Converged replicates required before quantiles are reported.
pub const MIN_REPLICATES: usize = 20;

/// Grid size used for density bands when none is given.
pub const BAND_GRID_POINTS: usize = 512;

/// Bounds applied to forecast CDF values before the normal quantile.
pub const RESIDUAL_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapEnsemble<F> {
    pub generator: HmmModel<F>,
    /// Refitted models, states sorted by mean; `None` where the refit failed.
    pub replicates: Vec<Option<HmmModel<F>>>,
    /// Failure messages of the replicates that did not converge.
    pub failures: Vec<(usize, String)>,
    pub length: usize,
    pub seed: u64,
}

impl<F: Real> BootstrapEnsemble<F> {
    pub fn converged(&self) -> impl Iterator<Item = &HmmModel<F>> {
        self.replicates.iter().flatten()
    }

    pub fn n_converged(&self) -> usize {
        self.replicates.iter().filter(|r| r.is_some()).count()
    }

    pub fn n_failed(&self) -> usize {
        self.replicates.len() - self.n_converged()
    }

    fn require(&self) -> Result<()> {
        let have = self.n_converged();
        if have < MIN_REPLICATES {
            return Err(Error::TooFewReplicates { needed: MIN_REPLICATES, have });
        }
        Ok(())
    }
}

/// Simulates `b` series of length `len` from `model` and refits each.
///
/// The model structure and smoothing parameters are taken from `config`,
/// whose spec must match `model`; the generating parameters are always one
/// of the starting points. Replicate `i` uses its own random stream, so the
/// ensemble does not depend on scheduling.
pub fn bootstrap<F: Real>(
    model: &HmmModel<F>,
    len: usize,
    b: usize,
    config: &FitConfig<F>,
    seed: u64,
) -> Result<BootstrapEnsemble<F>> {
    if b == 0 {
        return invalid("bootstrap needs at least one replicate");
    }
    if len < 2 {
        return invalid("bootstrap series length must be at least 2");
    }
    if config.spec != ModelSpec::of_model(model) {
        return invalid("fit configuration does not match the generating model");
    }
    let warm = vec![config.spec.pack(model)?];
    let outcomes: Vec<Result<HmmModel<F>>> = (0..b)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, i as u64);
            let sim = simulate_series(model, len, &mut r);
            let cfg = config.clone().with_seed(rng::child_seed(seed, i as u64));
            fit_with_starts(&sim.series(), &cfg, &warm).map(|f| f.model)
        })
        .collect();
    let mut replicates = Vec::with_capacity(b);
    let mut failures = Vec::new();
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(m) => replicates.push(Some(m)),
            Err(e) => {
                failures.push((i, e.to_string()));
                replicates.push(None);
            }
        }
    }
    Ok(BootstrapEnsemble { generator: model.clone(), replicates, failures, length: len, seed })
}

/// Entrywise percentile intervals for the transition matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TpmIntervals<F> {
    pub n: usize,
    pub level: F,
    pub estimate: Vec<F>,
    pub lower: Vec<F>,
    pub upper: Vec<F>,
    /// Bootstrap standard deviations.
    pub se: Vec<F>,
    pub replicates: usize,
}

fn check_level<F: Real>(level: F) -> Result<()> {
    if !(level > F::zero() && level < F::one()) {
        return invalid(format!("level {level} outside (0, 1)"));
    }
    Ok(())
}

pub fn tpm_intervals<F: Real>(ens: &BootstrapEnsemble<F>, level: F) -> Result<TpmIntervals<F>> {
    check_level(level)?;
    ens.require()?;
    let n = ens.generator.n_states();
    let alpha = (F::one() - level) / F::lit(2.0);
    let mut lower = Vec::with_capacity(n * n);
    let mut upper = Vec::with_capacity(n * n);
    let mut se = Vec::with_capacity(n * n);
    for k in 0..n * n {
        let mut v: Vec<F> = ens.converged().map(|m| m.gamma().as_slice()[k]).collect();
        v.sort_by(|a, b| a.partial_cmp(b).expect("finite probabilities"));
        lower.push(stats::quantile_sorted(&v, alpha));
        upper.push(stats::quantile_sorted(&v, F::one() - alpha));
        se.push(stats::sample_sd(&v));
    }
    Ok(TpmIntervals {
        n,
        level,
        estimate: ens.generator.gamma().as_slice().to_vec(),
        lower,
        upper,
        se,
        replicates: ens.n_converged(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandKind {
    Pointwise,
    Simultaneous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityBand<F> {
    pub state: usize,
    pub grid: Vec<F>,
    pub lower: Vec<F>,
    pub upper: Vec<F>,
    pub level: F,
    pub kind: BandKind,
    /// Factor applied to the pointwise half-widths (simultaneous bands only).
    pub inflation: Option<F>,
    /// Fraction of replicate curves lying entirely inside the band.
    pub coverage: F,
}

/// Equally spaced points over the support of `state` in `model`.
pub fn default_band_grid<F: Real>(model: &HmmModel<F>, state: usize, points: usize) -> Vec<F> {
    let (lo, hi) = model.emissions()[state].effective_support();
    let m = points.max(2);
    (0..m).map(|g| lo + (hi - lo) * F::from_count(g) / F::from_count(m - 1)).collect()
}

fn inside<F: Real>(curve: &[F], mid: &[F], half: &[F], c: F) -> bool {
    curve.iter().zip(mid).zip(half).all(|((&f, &m), &h)| (f - m).abs() <= c * h)
}

/// Pointwise or simultaneous band for the density of `state`.
///
/// The simultaneous band inflates the pointwise band about its midpoint by
/// the smallest factor `c >= 1` that puts at least a `level` fraction of the
/// replicate curves entirely inside it.
pub fn density_band<F: Real>(
    ens: &BootstrapEnsemble<F>,
    state: usize,
    grid: &[F],
    level: F,
    kind: BandKind,
) -> Result<DensityBand<F>> {
    check_level(level)?;
    ens.require()?;
    if state >= ens.generator.n_states() {
        return invalid(format!("state {state} out of range"));
    }
    if grid.is_empty() {
        return invalid("empty evaluation grid");
    }
    let curves: Vec<Vec<F>> =
        ens.converged().map(|m| grid.iter().map(|&x| m.emissions()[state].pdf(x)).collect()).collect();
    let alpha = (F::one() - level) / F::lit(2.0);
    let mut lower = Vec::with_capacity(grid.len());
    let mut upper = Vec::with_capacity(grid.len());
    let mut col = Vec::with_capacity(curves.len());
    for g in 0..grid.len() {
        col.clear();
        col.extend(curves.iter().map(|c| c[g]));
        col.sort_by(|a, b| a.partial_cmp(b).expect("finite densities"));
        lower.push(stats::quantile_sorted(&col, alpha));
        upper.push(stats::quantile_sorted(&col, F::one() - alpha));
    }
    let two = F::lit(2.0);
    let mid: Vec<F> = lower.iter().zip(&upper).map(|(&l, &u)| (l + u) / two).collect();
    let half: Vec<F> = lower.iter().zip(&upper).map(|(&l, &u)| (u - l) / two).collect();
    let coverage_at = |c: F| {
        F::from_count(curves.iter().filter(|cv| inside(cv, &mid, &half, c)).count()) / F::from_count(curves.len())
    };

    let inflation = match kind {
        BandKind::Pointwise => None,
        BandKind::Simultaneous => {
            // the factor each curve needs; the band is set by an order statistic of these
            let mut need: Vec<F> = curves
                .iter()
                .map(|cv| {
                    cv.iter().zip(&mid).zip(&half).fold(F::zero(), |acc, ((&f, &m), &h)| {
                        let d = (f - m).abs();
                        let r = if d == F::zero() {
                            F::zero()
                        } else if h > F::zero() {
                            d / h
                        } else {
                            F::infinity()
                        };
                        acc.max(r)
                    })
                })
                .collect();
            need.sort_by(|a, b| a.partial_cmp(b).expect("no NaN ratios"));
            let k = (level * F::from_count(need.len())).ceil().to_usize().unwrap_or(need.len()).clamp(1, need.len());
            let mut c = need[k - 1].max(F::one());
            if !c.is_finite() {
                return Err(Error::Degenerate(
                    "replicate curves differ where the pointwise band has zero width".into(),
                ));
            }
            // guard against rounding in c * h
            while coverage_at(c) < F::from_count(k) / F::from_count(need.len()) {
                c = c * (F::one() + F::epsilon() * F::lit(4.0));
            }
            Some(c)
        }
    };
    let c = inflation.unwrap_or(F::one());
    let (lower, upper) = if inflation.is_some() {
        (
            mid.iter().zip(&half).map(|(&m, &h)| m - c * h).collect(),
            mid.iter().zip(&half).map(|(&m, &h)| m + c * h).collect(),
        )
    } else {
        (lower, upper)
    };
    Ok(DensityBand {
        state,
        grid: grid.to_vec(),
        lower,
        upper,
        level,
        kind,
        inflation,
        coverage: coverage_at(c),
    })
}

/// One-step-ahead forecast pseudo-residuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSeries<F> {
    /// Forecast CDF values `F(x_t | x_1..x_{t-1})`; `None` where `x_t` is missing.
    pub uniform: Vec<Option<F>>,
    /// `Phi^{-1}` of the clamped CDF values.
    pub residuals: Vec<Option<F>>,
}

impl<F: Real> ResidualSeries<F> {
    pub fn observed(&self) -> Vec<F> {
        self.residuals.iter().flatten().copied().collect()
    }
}

pub fn pseudo_residuals<F: Real>(model: &HmmModel<F>, series: &[Observation<F>]) -> Result<ResidualSeries<F>> {
    let fw = forecast_state_probs(model, series)?;
    let lo = F::lit(RESIDUAL_CLAMP);
    let hi = F::one() - lo;
    let mut uniform = Vec::with_capacity(series.len());
    let mut residuals = Vec::with_capacity(series.len());
    for (zeta, x) in fw.predicted.iter().zip(series) {
        match x {
            Some(x) => {
                let u: F = zeta.iter().zip(model.emissions()).map(|(&z, d)| z * d.cdf(*x)).sum();
                let u = u.max(lo).min(hi);
                uniform.push(Some(u));
                residuals.push(Some(stats::std_normal_quantile(u)));
            }
            None => {
                uniform.push(None);
                residuals.push(None);
            }
        }
    }
    Ok(ResidualSeries { uniform, residuals })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JarqueBera<F> {
    pub statistic: F,
    pub p_value: F,
    pub skewness: F,
    pub excess_kurtosis: F,
}

/// Jarque-Bera normality test with the chi-square (2 df) tail.
pub fn jarque_bera<F: Real>(values: &[F]) -> Result<JarqueBera<F>> {
    let n = values.len();
    if n < 8 {
        return invalid(format!("Jarque-Bera needs at least 8 values, got {n}"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Jarque-Bera input".into()));
    }
    let nf = F::from_count(n);
    let m = stats::mean(values);
    let (mut m2, mut m3, mut m4) = (F::zero(), F::zero(), F::zero());
    for &v in values {
        let d = v - m;
        let d2 = d * d;
        m2 = m2 + d2;
        m3 = m3 + d2 * d;
        m4 = m4 + d2 * d2;
    }
    m2 = m2 / nf;
    m3 = m3 / nf;
    m4 = m4 / nf;
    if !(m2 > F::epsilon() * m.abs().max(F::one()).powi(2)) {
        return Err(Error::ZeroVariance);
    }
    let skewness = m3 / m2.powf(F::lit(1.5));
    let excess_kurtosis = m4 / (m2 * m2) - F::lit(3.0);
    let statistic = nf / F::lit(6.0) * (skewness * skewness + excess_kurtosis * excess_kurtosis / F::lit(4.0));
    Ok(JarqueBera { statistic, p_value: (-statistic / F::lit(2.0)).exp(), skewness, excess_kurtosis })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{NormalDensity, StateDensity};
    use crate::hmm::TransitionMatrix;

    fn normal_model(mu: f64, sd: f64) -> HmmModel<f64> {
        HmmModel::stationary(
            TransitionMatrix::identity(1),
            vec![StateDensity::Normal(NormalDensity::new(mu, sd).unwrap())],
        )
        .unwrap()
    }

    fn ensemble_of(models: Vec<HmmModel<f64>>) -> BootstrapEnsemble<f64> {
        BootstrapEnsemble {
            generator: models[0].clone(),
            replicates: models.into_iter().map(Some).collect(),
            failures: Vec::new(),
            length: 10,
            seed: 0,
        }
    }

    #[test]
    fn jb_of_normal_quantiles_is_small() {
        let xs: Vec<f64> = (0..1000).map(|i| stats::std_normal_quantile((i as f64 + 0.5) / 1000.0)).collect();
        let jb = jarque_bera(&xs).unwrap();
        assert!(jb.statistic < 0.1 && jb.p_value > 0.95, "{jb:?}");
    }

    #[test]
    fn jb_is_affine_invariant() {
        let xs: Vec<f64> = (0..50).map(|i| ((i * i) as f64 * 0.37).sin() + 0.1 * i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x - 7.0).collect();
        let a = jarque_bera(&xs).unwrap().statistic;
        let b = jarque_bera(&ys).unwrap().statistic;
        assert!((a - b).abs() < 1e-9 * a.max(1.0));
    }

    #[test]
    fn jb_rejects_degenerate_input() {
        assert!(matches!(jarque_bera(&[2.0; 10]), Err(Error::ZeroVariance)));
        assert!(jarque_bera(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn identical_replicates_give_zero_width() {
        let ens = ensemble_of(vec![normal_model(0.0, 1.0); 25]);
        let iv = tpm_intervals(&ens, 0.95).unwrap();
        assert_eq!(iv.lower, iv.upper);
        let grid = default_band_grid(&ens.generator, 0, 16);
        let band = density_band(&ens, 0, &grid, 0.9, BandKind::Simultaneous).unwrap();
        assert_eq!(band.inflation, Some(1.0));
        assert_eq!(band.coverage, 1.0);
    }

    #[test]
    fn too_few_replicates_is_an_error() {
        let ens = ensemble_of(vec![normal_model(0.0, 1.0); 5]);
        assert!(matches!(tpm_intervals(&ens, 0.95), Err(Error::TooFewReplicates { .. })));
    }

    #[test]
    fn simultaneous_contains_pointwise() {
        let models: Vec<_> = (0..40).map(|i| normal_model(0.05 * (i as f64 - 20.0), 1.0 + 0.01 * i as f64)).collect();
        let ens = ensemble_of(models);
        let grid = default_band_grid(&ens.generator, 0, 64);
        let pw = density_band(&ens, 0, &grid, 0.9, BandKind::Pointwise).unwrap();
        let sim = density_band(&ens, 0, &grid, 0.9, BandKind::Simultaneous).unwrap();
        assert!(sim.inflation.unwrap() >= 1.0);
        assert!(sim.coverage >= 0.9);
        for g in 0..grid.len() {
            assert!(sim.lower[g] <= pw.lower[g] + 1e-15 && sim.upper[g] >= pw.upper[g] - 1e-15);
        }
    }

    #[test]
    fn residuals_are_strictly_inside() {
        let m = normal_model(0.0, 1.0);
        let series = vec![Some(0.0), Some(9.5), None, Some(-9.5)];
        let r = pseudo_residuals(&m, &series).unwrap();
        for u in r.uniform.iter().flatten() {
            assert!(*u > 0.0 && *u < 1.0);
        }
        assert!(r.residuals[2].is_none());
        assert!(r.residuals[0].unwrap().abs() < 1e-12);
    }
}
