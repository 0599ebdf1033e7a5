//! Likelihood, decoding and model-implied summaries of an HMM.
//!
//! Forward quantities are normalised at every step and the log of each
//! normaliser is accumulated, so the likelihood of long series never
//! underflows. A missing observation contributes an identity emission matrix.

use crate::density::StateDensity;
use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::scalar::Real;

/// One time step; `None` marks a missing value.
pub type Observation<F> = Option<F>;

fn simplex_tol<F: Real>() -> F {
    F::lit(1e-12).max(F::epsilon() * F::lit(100.0))
}

/// Row-stochastic `n x n` matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix<F> {
    n: usize,
    data: Vec<F>,
}

impl<F: Real> TransitionMatrix<F> {
    pub fn new(n: usize, data: Vec<F>) -> Result<Self> {
        if n == 0 {
            return invalid("transition matrix needs at least one state");
        }
        if data.len() != n * n {
            return invalid(format!("expected {} entries, got {}", n * n, data.len()));
        }
        let tol = simplex_tol::<F>();
        for (i, row) in data.chunks(n).enumerate() {
            if row.iter().any(|&g| !(g >= F::zero() && g <= F::one())) {
                return invalid(format!("row {i} has entries outside [0, 1]"));
            }
            let s: F = row.iter().copied().sum();
            if (s - F::one()).abs() > tol {
                return invalid(format!("row {i} sums to {s}"));
            }
        }
        Ok(Self { n, data })
    }

    pub fn from_rows(rows: &[Vec<F>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return invalid("transition matrix must be square");
        }
        Self::new(n, rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        Self { n, data: linalg::identity(n) }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> F {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[F] {
        &self.data
    }

    pub fn rows(&self) -> Vec<Vec<F>> {
        self.data.chunks(self.n).map(<[F]>::to_vec).collect()
    }

    /// `Gamma^k`.
    pub fn power(&self, k: usize) -> Vec<F> {
        let mut out = linalg::identity(self.n);
        for _ in 0..k {
            out = linalg::mat_mul(self.n, &out, &self.data);
        }
        out
    }

    pub fn permuted(&self, order: &[usize]) -> Self {
        let n = self.n;
        let mut data = vec![F::zero(); n * n];
        for (a, &i) in order.iter().enumerate() {
            for (b, &j) in order.iter().enumerate() {
                data[a * n + b] = self.get(i, j);
            }
        }
        Self { n, data }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialDistribution<F>(Vec<F>);

impl<F: Real> InitialDistribution<F> {
    pub fn new(probs: Vec<F>) -> Result<Self> {
        if probs.is_empty() {
            return invalid("initial distribution is empty");
        }
        if probs.iter().any(|&p| !(p >= F::zero())) {
            return invalid("initial distribution has negative or non-finite entries");
        }
        let s: F = probs.iter().copied().sum();
        if (s - F::one()).abs() > simplex_tol::<F>() {
            return invalid(format!("initial distribution sums to {s}"));
        }
        Ok(Self(probs))
    }

    pub fn as_slice(&self) -> &[F] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<F> {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HmmModel<F> {
    gamma: TransitionMatrix<F>,
    delta: InitialDistribution<F>,
    emissions: Vec<StateDensity<F>>,
    stationary: bool,
}

impl<F: Real> HmmModel<F> {
    pub fn new(
        gamma: TransitionMatrix<F>,
        delta: InitialDistribution<F>,
        emissions: Vec<StateDensity<F>>,
    ) -> Result<Self> {
        let n = gamma.n();
        if delta.as_slice().len() != n || emissions.len() != n {
            return invalid(format!(
                "state count mismatch: gamma {n}, delta {}, emissions {}",
                delta.as_slice().len(),
                emissions.len()
            ));
        }
        Ok(Self { gamma, delta, emissions, stationary: false })
    }

    /// Model whose initial distribution is the stationary distribution of `gamma`.
    pub fn stationary(gamma: TransitionMatrix<F>, emissions: Vec<StateDensity<F>>) -> Result<Self> {
        let delta = stationary_distribution(&gamma)?;
        let mut m = Self::new(gamma, delta, emissions)?;
        m.stationary = true;
        Ok(m)
    }

    pub fn n_states(&self) -> usize {
        self.gamma.n()
    }

    pub fn gamma(&self) -> &TransitionMatrix<F> {
        &self.gamma
    }

    pub fn delta(&self) -> &InitialDistribution<F> {
        &self.delta
    }

    pub fn emissions(&self) -> &[StateDensity<F>] {
        &self.emissions
    }

    pub fn is_stationary(&self) -> bool {
        self.stationary
    }

    /// Emission densities at `x`, or all ones when `x` is missing.
    #[inline]
    pub fn emission_probs(&self, x: Observation<F>, out: &mut [F]) {
        match x {
            Some(x) => {
                for (o, d) in out.iter_mut().zip(&self.emissions) {
                    *o = d.pdf(x);
                }
            }
            None => out.fill(F::one()),
        }
    }

    /// Row-major `T x N` emission matrix.
    pub fn emission_matrix(&self, series: &[Observation<F>]) -> Vec<F> {
        let n = self.n_states();
        let mut q = vec![F::zero(); series.len() * n];
        for (row, &x) in q.chunks_mut(n).zip(series) {
            self.emission_probs(x, row);
        }
        q
    }

    /// Model with states relabelled so that new state `a` is old state `order[a]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let delta = order.iter().map(|&i| self.delta.0[i]).collect();
        Self {
            gamma: self.gamma.permuted(order),
            delta: InitialDistribution(delta),
            emissions: order.iter().map(|&i| self.emissions[i].clone()).collect(),
            stationary: self.stationary,
        }
    }

    /// Ordering of states by ascending emission mean (stable).
    pub fn mean_order(&self) -> Vec<usize> {
        let means: Vec<F> = self.emissions.iter().map(StateDensity::mean).collect();
        let mut order: Vec<usize> = (0..self.n_states()).collect();
        order.sort_by(|&a, &b| means[a].partial_cmp(&means[b]).unwrap_or(std::cmp::Ordering::Equal));
        order
    }

    pub fn sorted_by_mean(&self) -> (Self, Vec<usize>) {
        let order = self.mean_order();
        (self.permuted(&order), order)
    }
}

/// Normalised forward recursion over a precomputed `T x N` emission matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledForward<F> {
    pub log_likelihood: F,
    /// `P(S_t = i | x_1..x_t)`, row-major `T x N`.
    pub filtered: Vec<F>,
    /// `P(S_t = i | x_1..x_{t-1})`, row-major `T x N`; the first row is `delta`.
    pub predicted: Vec<F>,
    /// Per-step normalisers `s_t`; the log-likelihood is `sum log s_t`.
    pub scales: Vec<F>,
}

pub fn forward_scaled<F: Real>(
    delta: &[F],
    gamma: &[F],
    emissions: &[F],
) -> Result<ScaledForward<F>> {
    let n = delta.len();
    let t_len = emissions.len() / n;
    let mut filtered = vec![F::zero(); t_len * n];
    let mut predicted = vec![F::zero(); t_len * n];
    let mut scales = vec![F::zero(); t_len];
    let mut ll = F::zero();
    for t in 0..t_len {
        if t == 0 {
            predicted[..n].copy_from_slice(delta);
        } else {
            linalg::vec_mat(
                n,
                &filtered[(t - 1) * n..t * n],
                gamma,
                &mut predicted[t * n..(t + 1) * n],
            );
        }
        let q = &emissions[t * n..(t + 1) * n];
        let mut s = F::zero();
        for i in 0..n {
            let v = predicted[t * n + i] * q[i];
            filtered[t * n + i] = v;
            s = s + v;
        }
        if !(s > F::zero()) || !s.is_finite() {
            return Err(Error::ZeroLikelihood(t));
        }
        for v in &mut filtered[t * n..(t + 1) * n] {
            *v = *v / s;
        }
        scales[t] = s;
        ll = ll + s.ln();
    }
    Ok(ScaledForward { log_likelihood: ll, filtered, predicted, scales })
}

/// Log of `delta Q(x_1) Gamma Q(x_2) ... Gamma Q(x_T) 1`.
pub fn log_likelihood<F: Real>(model: &HmmModel<F>, series: &[Observation<F>]) -> Result<F> {
    check_series(series)?;
    let q = model.emission_matrix(series);
    Ok(forward_scaled(model.delta.as_slice(), model.gamma.as_slice(), &q)?.log_likelihood)
}

fn check_series<F: Real>(series: &[Observation<F>]) -> Result<()> {
    if series.is_empty() {
        return invalid("series is empty");
    }
    if let Some(t) = series.iter().position(|x| matches!(x, Some(v) if !v.is_finite())) {
        return Err(Error::NonFinite(format!("observation at index {t}")));
    }
    Ok(())
}

/// Forward variables in the form used for forecasting.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass<F> {
    pub log_likelihood: F,
    /// One-step-ahead state probabilities `zeta_t`; `zeta_1 = delta`.
    pub predicted: Vec<Vec<F>>,
    /// Normalised forward variables `alpha_t / (alpha_t 1)`.
    pub filtered: Vec<Vec<F>>,
}

pub fn forecast_state_probs<F: Real>(
    model: &HmmModel<F>,
    series: &[Observation<F>],
) -> Result<ForwardPass<F>> {
    check_series(series)?;
    let n = model.n_states();
    let q = model.emission_matrix(series);
    let fw = forward_scaled(model.delta.as_slice(), model.gamma.as_slice(), &q)?;
    Ok(ForwardPass {
        log_likelihood: fw.log_likelihood,
        predicted: fw.predicted.chunks(n).map(<[F]>::to_vec).collect(),
        filtered: fw.filtered.chunks(n).map(<[F]>::to_vec).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViterbiPath<F> {
    /// Zero-based state indices.
    pub states: Vec<usize>,
    /// Log joint density of the path and the observations.
    pub log_prob: F,
}

/// Most probable state sequence; ties go to the lower state index.
pub fn viterbi<F: Real>(model: &HmmModel<F>, series: &[Observation<F>]) -> Result<ViterbiPath<F>> {
    check_series(series)?;
    let n = model.n_states();
    let t_len = series.len();
    let log_gamma: Vec<F> = model.gamma.as_slice().iter().map(|g| g.ln()).collect();
    let mut q = vec![F::zero(); n];
    let mut score = vec![F::zero(); n];
    let mut next = vec![F::zero(); n];
    let mut back = vec![0usize; t_len * n];

    model.emission_probs(series[0], &mut q);
    for i in 0..n {
        score[i] = model.delta.0[i].ln() + q[i].ln();
    }
    check_alive(&score, 0)?;
    for t in 1..t_len {
        model.emission_probs(series[t], &mut q);
        for j in 0..n {
            let mut best = F::neg_infinity();
            let mut arg = 0;
            for i in 0..n {
                let v = score[i] + log_gamma[i * n + j];
                if v > best {
                    best = v;
                    arg = i;
                }
            }
            next[j] = best + q[j].ln();
            back[t * n + j] = arg;
        }
        std::mem::swap(&mut score, &mut next);
        check_alive(&score, t)?;
    }
    let mut last = 0;
    for i in 1..n {
        if score[i] > score[last] {
            last = i;
        }
    }
    let log_prob = score[last];
    let mut states = vec![0usize; t_len];
    states[t_len - 1] = last;
    for t in (1..t_len).rev() {
        states[t - 1] = back[t * n + states[t]];
    }
    Ok(ViterbiPath { states, log_prob })
}

fn check_alive<F: Real>(score: &[F], t: usize) -> Result<()> {
    if score.iter().all(|&s| s == F::neg_infinity()) {
        return Err(Error::ZeroLikelihood(t));
    }
    Ok(())
}

/// Solves `delta (I - Gamma + U) = 1`, where `U` is the all-ones matrix.
pub fn stationary_distribution<F: Real>(gamma: &TransitionMatrix<F>) -> Result<InitialDistribution<F>> {
    let n = gamma.n();
    if n == 1 {
        return Ok(InitialDistribution(vec![F::one()]));
    }
    let a = stationary_system(gamma);
    let at = linalg::transpose(n, &a);
    let ones = vec![F::one(); n];
    let pivot_tol = F::lit(1e-13).max(F::epsilon() * F::lit(16.0));
    let mut delta = linalg::solve(n, &at, &ones, pivot_tol).ok_or(Error::SingularChain)?;
    // one step of iterative refinement
    let mut resid = vec![F::zero(); n];
    linalg::vec_mat(n, &delta, &a, &mut resid);
    for r in resid.iter_mut() {
        *r = F::one() - *r;
    }
    if let Some(corr) = linalg::solve(n, &at, &resid, pivot_tol) {
        for (d, c) in delta.iter_mut().zip(corr) {
            *d = *d + c;
        }
    }
    if delta.iter().any(|&d| !(d > -simplex_tol::<F>())) {
        return Err(Error::SingularChain);
    }
    for d in delta.iter_mut() {
        *d = d.max(F::zero());
    }
    let s: F = delta.iter().copied().sum();
    for d in delta.iter_mut() {
        *d = *d / s;
    }
    Ok(InitialDistribution(delta))
}

/// `I - Gamma + U`, row-major.
pub(crate) fn stationary_system<F: Real>(gamma: &TransitionMatrix<F>) -> Vec<F> {
    let n = gamma.n();
    let mut a = vec![F::one(); n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = a[i * n + j] - gamma.get(i, j);
        }
        a[i * n + i] = a[i * n + i] + F::one();
    }
    a
}

/// Mixing weights of the stationary marginal.
pub fn marginal_weights<F: Real>(model: &HmmModel<F>) -> Result<Vec<F>> {
    Ok(stationary_distribution(&model.gamma)?.0)
}

/// `sum_i delta_i f_i(x)` with `delta` the stationary distribution.
pub fn marginal_density<F: Real>(model: &HmmModel<F>, x: F) -> Result<F> {
    let w = marginal_weights(model)?;
    Ok(w.iter().zip(&model.emissions).map(|(&d, e)| d * e.pdf(x)).sum())
}

/// Autocorrelation of the stationary observation process at lags `0..=max_lag`.
pub fn model_acf<F: Real>(model: &HmmModel<F>, max_lag: usize) -> Result<Vec<F>> {
    let n = model.n_states();
    let delta = marginal_weights(model)?;
    let (means, seconds): (Vec<F>, Vec<F>) = model.emissions.iter().map(StateDensity::moments).unzip();
    let mu: F = delta.iter().zip(&means).map(|(&d, &m)| d * m).sum();
    let ex2: F = delta.iter().zip(&seconds).map(|(&d, &s)| d * s).sum();
    let var = ex2 - mu * mu;
    if !(var > F::zero()) {
        return Err(Error::ZeroVariance);
    }
    let mut out = Vec::with_capacity(max_lag + 1);
    out.push(F::one());
    // weighted[i] = delta_i m_i, propagated through Gamma one lag at a time
    let mut weighted: Vec<F> = delta.iter().zip(&means).map(|(&d, &m)| d * m).collect();
    let mut tmp = vec![F::zero(); n];
    for _ in 0..max_lag {
        linalg::vec_mat(n, &weighted, model.gamma.as_slice(), &mut tmp);
        std::mem::swap(&mut weighted, &mut tmp);
        let cross: F = weighted.iter().zip(&means).map(|(&w, &m)| w * m).sum();
        out.push((cross - mu * mu) / var);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::NormalDensity;

    fn normal(m: f64, s: f64) -> StateDensity<f64> {
        StateDensity::Normal(NormalDensity::new(m, s).unwrap())
    }

    fn two_state(g11: f64, g22: f64) -> HmmModel<f64> {
        let g = TransitionMatrix::new(2, vec![g11, 1.0 - g11, 1.0 - g22, g22]).unwrap();
        HmmModel::stationary(g, vec![normal(-1.0, 1.0), normal(1.0, 1.0)]).unwrap()
    }

    #[test]
    fn validates_transition_matrix() {
        assert!(TransitionMatrix::new(2, vec![0.5, 0.5, 0.2, 0.7]).is_err());
        assert!(TransitionMatrix::new(2, vec![1.5, -0.5, 0.2, 0.8]).is_err());
        assert!(TransitionMatrix::new(2, vec![0.5, 0.5]).is_err());
        assert!(TransitionMatrix::<f64>::new(0, vec![]).is_err());
    }

    #[test]
    fn one_state_likelihood_is_iid() {
        let g = TransitionMatrix::identity(1);
        let m = HmmModel::stationary(g, vec![normal(0.5, 2.0)]).unwrap();
        let xs = [0.1, -1.0, 3.0, 0.7];
        let direct: f64 = xs.iter().map(|&x| m.emissions()[0].pdf(x).ln()).sum();
        let ll = log_likelihood(&m, &crate::observed(&xs)).unwrap();
        assert!((ll - direct).abs() < 1e-12);
    }

    #[test]
    fn all_missing_gives_zero() {
        let m = two_state(0.8, 0.7);
        assert_eq!(log_likelihood(&m, &[None, None, None]).unwrap(), 0.0);
    }

    #[test]
    fn appending_missing_is_neutral() {
        let m = two_state(0.8, 0.7);
        let mut s = crate::observed(&[0.3, -0.2, 1.5]);
        let a = log_likelihood(&m, &s).unwrap();
        s.push(None);
        let b = log_likelihood(&m, &s).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn zero_density_is_an_error() {
        let g = TransitionMatrix::identity(1);
        let b = std::sync::Arc::new(crate::basis::SplineBasis::new(0.0, 1.0, 2).unwrap());
        let d = StateDensity::Spline(crate::density::SplineDensity::uniform(b));
        let m = HmmModel::stationary(g, vec![d]).unwrap();
        let err = log_likelihood(&m, &crate::observed(&[0.5, 50.0])).unwrap_err();
        assert_eq!(err, Error::ZeroLikelihood(1));
        assert_eq!(viterbi(&m, &crate::observed(&[0.5, 50.0])).unwrap_err(), Error::ZeroLikelihood(1));
    }

    #[test]
    fn rejects_bad_series() {
        let m = two_state(0.8, 0.7);
        assert!(log_likelihood(&m, &[]).is_err());
        assert!(log_likelihood(&m, &[Some(f64::NAN)]).is_err());
    }

    #[test]
    fn stationary_symmetric_and_study_tpm() {
        for g in [0.9, 0.1] {
            let gm = TransitionMatrix::<f64>::new(2, vec![1.0 - g, g, g, 1.0 - g]).unwrap();
            let d = stationary_distribution(&gm).unwrap();
            assert!((d.as_slice()[0] - 0.5).abs() < 1e-14);
        }
    }

    #[test]
    fn reducible_chain_is_rejected() {
        assert_eq!(stationary_distribution(&TransitionMatrix::<f64>::identity(2)), Err(Error::SingularChain));
    }

    #[test]
    fn viterbi_trivial_cases() {
        let g = TransitionMatrix::identity(1);
        let m = HmmModel::stationary(g, vec![normal(0.0, 1.0)]).unwrap();
        let p = viterbi(&m, &crate::observed(&[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(p.states, vec![0, 0, 0]);

        let g = TransitionMatrix::new(2, vec![0.9, 0.1, 0.1, 0.9]).unwrap();
        let m = HmmModel::stationary(g, vec![normal(-100.0, 1.0), normal(100.0, 1.0)]).unwrap();
        let xs = [-100.2, 99.5, 100.1, -99.0, -101.0, 100.0];
        let p = viterbi(&m, &crate::observed(&xs)).unwrap();
        let expect: Vec<usize> = xs.iter().map(|&x| usize::from(x > 0.0)).collect();
        assert_eq!(p.states, expect);
    }

    #[test]
    fn viterbi_ties_go_low() {
        let g = TransitionMatrix::new(2, vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        let m = HmmModel::stationary(g, vec![normal(0.0, 1.0), normal(0.0, 1.0)]).unwrap();
        let p = viterbi(&m, &crate::observed(&[0.3, -0.4, 1.0])).unwrap();
        assert_eq!(p.states, vec![0, 0, 0]);
    }

    #[test]
    fn zeta_memoryless_rows() {
        let r = [0.3, 0.7];
        let g = TransitionMatrix::new(2, vec![r[0], r[1], r[0], r[1]]).unwrap();
        let m = HmmModel::stationary(g, vec![normal(-1.0, 1.0), normal(2.0, 0.5)]).unwrap();
        let fp = forecast_state_probs(&m, &crate::observed(&[0.0, 1.0, 2.0, -1.0])).unwrap();
        assert_eq!(fp.predicted[0], m.delta().as_slice());
        for z in &fp.predicted[1..] {
            assert!((z[0] - r[0]).abs() < 1e-14 && (z[1] - r[1]).abs() < 1e-14);
        }
    }

    #[test]
    fn acf_basic_properties() {
        let m = two_state(0.9, 0.9);
        let acf = model_acf(&m, 5).unwrap();
        assert_eq!(acf[0], 1.0);
        assert!(acf.windows(2).all(|w| w[1] < w[0]));

        let g = TransitionMatrix::new(2, vec![0.3, 0.7, 0.3, 0.7]).unwrap();
        let m = HmmModel::stationary(g, vec![normal(-1.0, 1.0), normal(2.0, 0.5)]).unwrap();
        for r in &model_acf(&m, 4).unwrap()[1..] {
            assert!(r.abs() < 1e-12);
        }
    }

    #[test]
    fn marginal_is_symmetric() {
        let m = two_state(0.8, 0.8);
        for &c in &[0.1, 0.9, 2.5] {
            let a = marginal_density(&m, c).unwrap();
            let b = marginal_density(&m, -c).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_sort_permutes_everything() {
        let g = TransitionMatrix::new(2, vec![0.7, 0.3, 0.2, 0.8]).unwrap();
        let m = HmmModel::stationary(g, vec![normal(5.0, 1.0), normal(-5.0, 1.0)]).unwrap();
        let (s, order) = m.sorted_by_mean();
        assert_eq!(order, vec![1, 0]);
        assert_eq!(s.gamma().get(0, 0), 0.8);
        assert_eq!(s.gamma().get(0, 1), 0.2);
        assert_eq!(s.emissions()[0].mean(), -5.0);
        let xs = crate::observed(&[0.3, 4.0, -2.0]);
        let a = log_likelihood(&m, &xs).unwrap();
        let b = log_likelihood(&s, &xs).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}
