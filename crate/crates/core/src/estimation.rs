//! Maximum penalized likelihood estimation.
//!
//! Parameters live in an unconstrained working vector laid out as
//!
//! 1. `N (N - 1)` transition logits, row by row, the diagonal entry of each
//!    row being the reference category;
//! 2. `N - 1` initial-distribution logits when the initial distribution is
//!    estimated freely (nothing when it is tied to the stationary distribution);
//! 3. per state, the emission parameters: the `2K` free spline logits, or
//!    `(mu, log sd)` for a normal, or `(mu_1, log sd_1, mu_2, log sd_2, logit w)`
//!    for a two-component normal mixture.
//!
//! The objective is the HMM log-likelihood minus the difference penalty on the
//! spline weights. Its gradient is computed exactly from a scaled
//! forward-backward pass, including the dependence of the stationary initial
//! distribution on the transition matrix.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::basis::{BasisRow, SplineBasis};
use crate::density::{NormalDensity, NormalMixtureDensity, SplineDensity, StateDensity};
use crate::error::{invalid, Error, Result};
use crate::hmm::{self, forward_scaled, HmmModel, InitialDistribution, Observation, TransitionMatrix};
use crate::linalg;
use crate::optim::{self, bfgs, Objective, OptimConfig, Termination};
use crate::rng;
use crate::scalar::{softmax, softmax_into, Real};
use crate::stats;

#[derive(Debug, Clone, PartialEq)]
pub enum EmissionFamily<F> {
    Spline(Arc<SplineBasis<F>>),
    Normal,
    NormalMixture,
}

impl<F: Real> EmissionFamily<F> {
    pub fn num_params(&self) -> usize {
        match self {
            Self::Spline(b) => b.len() - 1,
            Self::Normal => 2,
            Self::NormalMixture => 5,
        }
    }

    fn matches(&self, d: &StateDensity<F>) -> bool {
        match (self, d) {
            (Self::Spline(b), StateDensity::Spline(s)) => **b == **s.basis(),
            (Self::Normal, StateDensity::Normal(_)) => true,
            (Self::NormalMixture, StateDensity::NormalMixture(_)) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitialMode {
    /// Initial distribution is the stationary distribution of the chain.
    #[default]
    Stationary,
    /// Initial distribution is estimated separately.
    Free,
}

/// Structure of the model being estimated: one emission family per state.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec<F> {
    families: Vec<EmissionFamily<F>>,
    initial: InitialMode,
}

impl<F: Real> ModelSpec<F> {
    pub fn new(families: Vec<EmissionFamily<F>>, initial: InitialMode) -> Result<Self> {
        if families.is_empty() {
            return invalid("model needs at least one state");
        }
        Ok(Self { families, initial })
    }

    /// `n` stationary states sharing one spline basis.
    pub fn splines(n: usize, basis: Arc<SplineBasis<F>>) -> Result<Self> {
        Self::new(vec![EmissionFamily::Spline(basis); n], InitialMode::Stationary)
    }

    /// `n` stationary states with normal emissions.
    pub fn normals(n: usize) -> Result<Self> {
        Self::new(vec![EmissionFamily::Normal; n], InitialMode::Stationary)
    }

    /// Spec with the structure of an existing model.
    pub fn of_model(model: &HmmModel<F>) -> Self {
        let families = model
            .emissions()
            .iter()
            .map(|d| match d {
                StateDensity::Spline(s) => EmissionFamily::Spline(s.basis().clone()),
                StateDensity::Normal(_) => EmissionFamily::Normal,
                StateDensity::NormalMixture(_) => EmissionFamily::NormalMixture,
            })
            .collect();
        let initial = if model.is_stationary() { InitialMode::Stationary } else { InitialMode::Free };
        Self { families, initial }
    }

    pub fn n_states(&self) -> usize {
        self.families.len()
    }

    pub fn families(&self) -> &[EmissionFamily<F>] {
        &self.families
    }

    pub fn initial_mode(&self) -> InitialMode {
        self.initial
    }

    fn n_transition(&self) -> usize {
        let n = self.n_states();
        n * (n - 1)
    }

    fn n_initial(&self) -> usize {
        match self.initial {
            InitialMode::Stationary => 0,
            InitialMode::Free => self.n_states() - 1,
        }
    }

    /// Length of the working vector.
    pub fn num_params(&self) -> usize {
        self.n_transition() + self.n_initial() + self.families.iter().map(EmissionFamily::num_params).sum::<usize>()
    }

    /// Working vector of `model`, which must have the structure of this spec.
    pub fn pack(&self, model: &HmmModel<F>) -> Result<Vec<F>> {
        let n = self.n_states();
        if model.n_states() != n {
            return invalid(format!("model has {} states, spec has {n}", model.n_states()));
        }
        for (i, (f, d)) in self.families.iter().zip(model.emissions()).enumerate() {
            if !f.matches(d) {
                return invalid(format!("emission family of state {i} does not match the model spec"));
            }
        }
        let tiny = F::min_positive_value();
        let mut theta = Vec::with_capacity(self.num_params());
        let g = model.gamma();
        for i in 0..n {
            let diag = g.get(i, i).max(tiny).ln();
            for j in (0..n).filter(|&j| j != i) {
                theta.push(g.get(i, j).max(tiny).ln() - diag);
            }
        }
        if self.initial == InitialMode::Free {
            let d = model.delta().as_slice();
            let anchor = d[0].max(tiny).ln();
            theta.extend(d[1..].iter().map(|p| p.max(tiny).ln() - anchor));
        }
        for d in model.emissions() {
            match d {
                StateDensity::Spline(s) => theta.extend(s.free_logits()),
                StateDensity::Normal(nd) => theta.extend([nd.mean, nd.sd.ln()]),
                StateDensity::NormalMixture(m) => {
                    let w = m.weight.max(tiny).min(F::one() - F::epsilon());
                    theta.extend([
                        m.first.mean,
                        m.first.sd.ln(),
                        m.second.mean,
                        m.second.sd.ln(),
                        (w / (F::one() - w)).ln(),
                    ])
                }
            }
        }
        Ok(theta)
    }

    fn decode(&self, theta: &[F]) -> Result<Decoded<F>> {
        if theta.len() != self.num_params() {
            return invalid(format!("expected {} parameters, got {}", self.num_params(), theta.len()));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("working parameter".into()));
        }
        let n = self.n_states();
        let mut gamma = vec![F::zero(); n * n];
        let mut logits = vec![F::zero(); n];
        let mut probs = vec![F::zero(); n];
        for i in 0..n {
            let mut c = 0;
            for j in 0..n {
                logits[j] = if j == i {
                    F::zero()
                } else {
                    c += 1;
                    theta[i * (n - 1) + c - 1]
                };
            }
            softmax_into(&logits, &mut probs);
            gamma[i * n..(i + 1) * n].copy_from_slice(&probs);
        }
        let mut pos = self.n_transition();
        let delta = match self.initial {
            InitialMode::Stationary => None,
            InitialMode::Free => {
                logits[0] = F::zero();
                logits[1..].copy_from_slice(&theta[pos..pos + n - 1]);
                pos += n - 1;
                Some(softmax(&logits))
            }
        };
        let mut emissions = Vec::with_capacity(n);
        for f in &self.families {
            let p = &theta[pos..pos + f.num_params()];
            pos += f.num_params();
            emissions.push(match f {
                EmissionFamily::Spline(b) => {
                    let c = b.center_index();
                    let mut l = Vec::with_capacity(b.len());
                    l.extend_from_slice(&p[..c]);
                    l.push(F::zero());
                    l.extend_from_slice(&p[c..]);
                    Emit::Spline(softmax(&l))
                }
                EmissionFamily::Normal => Emit::Normal { mean: p[0], sd: p[1].exp() },
                EmissionFamily::NormalMixture => {
                    let w = F::one() / (F::one() + (-p[4]).exp());
                    Emit::Mixture { m1: p[0], s1: p[1].exp(), m2: p[2], s2: p[3].exp(), w }
                }
            });
        }
        Ok(Decoded { gamma, delta, emissions })
    }

    /// Model encoded by a working vector. Always yields a valid model.
    pub fn unpack(&self, theta: &[F]) -> Result<HmmModel<F>> {
        let dec = self.decode(theta)?;
        self.build(&dec)
    }

    fn build(&self, dec: &Decoded<F>) -> Result<HmmModel<F>> {
        let n = self.n_states();
        let gamma = TransitionMatrix::new(n, dec.gamma.clone())?;
        let emissions = self
            .families
            .iter()
            .zip(&dec.emissions)
            .map(|(f, e)| {
                Ok(match (f, e) {
                    (EmissionFamily::Spline(b), Emit::Spline(w)) => {
                        StateDensity::Spline(SplineDensity::from_weights(b.clone(), w).or_else(|_| {
                            // weights can underflow to zero for extreme logits
                            let floor = F::min_positive_value();
                            let w: Vec<F> = w.iter().map(|&v| v.max(floor)).collect();
                            SplineDensity::from_weights(b.clone(), &w)
                        })?)
                    }
                    (_, Emit::Normal { mean, sd }) => StateDensity::Normal(NormalDensity::new(*mean, *sd)?),
                    (_, Emit::Mixture { m1, s1, m2, s2, w }) => StateDensity::NormalMixture(NormalMixtureDensity::new(
                        NormalDensity::new(*m1, *s1)?,
                        NormalDensity::new(*m2, *s2)?,
                        *w,
                    )?),
                    _ => unreachable!("decode follows the families"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        match &dec.delta {
            None => HmmModel::stationary(gamma, emissions),
            Some(d) => HmmModel::new(gamma, InitialDistribution::new(d.clone())?, emissions),
        }
    }
}

#[derive(Debug, Clone)]
enum Emit<F> {
    Spline(Vec<F>),
    Normal { mean: F, sd: F },
    Mixture { m1: F, s1: F, m2: F, s2: F, w: F },
}

#[derive(Debug, Clone)]
struct Decoded<F> {
    gamma: Vec<F>,
    delta: Option<Vec<F>>,
    emissions: Vec<Emit<F>>,
}

/// Difference penalty of order `m` with one smoothing parameter per state.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltySpec<F> {
    pub order: usize,
    pub lambda: Vec<F>,
}

impl<F: Real> PenaltySpec<F> {
    pub fn new(order: usize, lambda: Vec<F>) -> Result<Self> {
        if order == 0 {
            return invalid("penalty order must be at least 1");
        }
        if lambda.iter().any(|l| !(*l >= F::zero()) || !l.is_finite()) {
            return invalid("smoothing parameters must be finite and non-negative");
        }
        Ok(Self { order, lambda })
    }

    /// Second-order penalty, the default.
    pub fn second_order(lambda: Vec<F>) -> Result<Self> {
        Self::new(2, lambda)
    }

    pub fn unpenalized(n: usize) -> Self {
        Self { order: 2, lambda: vec![F::zero(); n] }
    }
}

/// `m`-fold differences `Delta^m a`, with `Delta a_k = a_k - a_{k-1}`.
pub fn differences<F: Real>(a: &[F], order: usize) -> Vec<F> {
    let mut d = a.to_vec();
    for _ in 0..order {
        d = d.windows(2).map(|w| w[1] - w[0]).collect();
    }
    d
}

/// Adjoint of [`differences`]: maps a length `L - m` vector back to length `L`.
fn differences_adjoint<F: Real>(d: &[F], order: usize) -> Vec<F> {
    let mut v = d.to_vec();
    for _ in 0..order {
        let mut out = vec![F::zero(); v.len() + 1];
        for (j, &x) in v.iter().enumerate() {
            out[j + 1] = out[j + 1] + x;
            out[j] = out[j] - x;
        }
        v = out;
    }
    v
}

/// `sum_i lambda_i / 2 * sum_k (Delta^m a_{i,k})^2` over the given weight vectors.
pub fn penalty<F: Real>(weights: &[Vec<F>], spec: &PenaltySpec<F>) -> Result<F> {
    if weights.len() != spec.lambda.len() {
        return invalid(format!("{} weight vectors for {} smoothing parameters", weights.len(), spec.lambda.len()));
    }
    let mut total = F::zero();
    for (a, &lam) in weights.iter().zip(&spec.lambda) {
        if spec.order >= a.len() {
            return invalid(format!("penalty order {} needs more than {} coefficients", spec.order, a.len()));
        }
        total = total + state_penalty(a, lam, spec.order);
    }
    Ok(total)
}

fn state_penalty<F: Real>(a: &[F], lambda: F, order: usize) -> F {
    if lambda == F::zero() {
        return F::zero();
    }
    let ss: F = differences(a, order).iter().map(|&d| d * d).sum();
    lambda * F::lit(0.5) * ss
}

/// Penalty of a model: spline states contribute, parametric states do not.
pub fn model_penalty<F: Real>(model: &HmmModel<F>, spec: &PenaltySpec<F>) -> Result<F> {
    if spec.lambda.len() != model.n_states() {
        return invalid(format!("{} smoothing parameters for {} states", spec.lambda.len(), model.n_states()));
    }
    let mut total = F::zero();
    for (d, &lam) in model.emissions().iter().zip(&spec.lambda) {
        if let StateDensity::Spline(s) = d {
            if spec.order >= s.weights().len() {
                return invalid("penalty order too large for the basis");
            }
            total = total + state_penalty(s.weights(), lam, spec.order);
        }
    }
    Ok(total)
}

/// Log-likelihood minus the penalty for a working vector.
pub fn penalized_loglik<F: Real>(
    theta: &[F],
    series: &[Observation<F>],
    spec: &ModelSpec<F>,
    pen: &PenaltySpec<F>,
) -> Result<F> {
    let model = spec.unpack(theta)?;
    let ll = hmm::log_likelihood(&model, series)?;
    Ok(ll - model_penalty(&model, pen)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientMode {
    /// Exact gradient from a forward-backward pass.
    #[default]
    Analytic,
    /// Central finite differences of the objective.
    CentralDifference,
}

/// The negative penalized log-likelihood as a minimisation problem.
pub struct PenalizedObjective<'a, F: Real> {
    spec: &'a ModelSpec<F>,
    penalty: &'a PenaltySpec<F>,
    series: &'a [Observation<F>],
    /// Per state, the basis rows at each time point for spline families.
    rows: Vec<Option<Arc<Vec<BasisRow<F>>>>>,
    mode: GradientMode,
}

impl<'a, F: Real> PenalizedObjective<'a, F> {
    pub fn new(
        spec: &'a ModelSpec<F>,
        penalty: &'a PenaltySpec<F>,
        series: &'a [Observation<F>],
        mode: GradientMode,
    ) -> Result<Self> {
        if penalty.lambda.len() != spec.n_states() {
            return invalid(format!(
                "{} smoothing parameters for {} states",
                penalty.lambda.len(),
                spec.n_states()
            ));
        }
        let mut cache: Vec<(Arc<SplineBasis<F>>, Arc<Vec<BasisRow<F>>>)> = Vec::new();
        let mut rows = Vec::with_capacity(spec.n_states());
        for f in &spec.families {
            rows.push(match f {
                EmissionFamily::Spline(b) => {
                    if penalty.order >= b.len() {
                        return invalid(format!("penalty order {} too large for {} basis elements", penalty.order, b.len()));
                    }
                    let hit = cache.iter().find(|(cb, _)| Arc::ptr_eq(cb, b) || **cb == **b).map(|(_, r)| r.clone());
                    Some(hit.unwrap_or_else(|| {
                        let r: Arc<Vec<BasisRow<F>>> = Arc::new(
                            series.iter().map(|x| b.eval_row(x.unwrap_or(F::nan()))).collect(),
                        );
                        cache.push((b.clone(), r.clone()));
                        r
                    }))
                }
                _ => None,
            });
        }
        Ok(Self { spec, penalty, series, rows, mode })
    }

    /// Penalized log-likelihood, and its gradient when `grad` is given.
    pub fn evaluate(&self, theta: &[F], grad: Option<&mut [F]>) -> Result<F> {
        let dec = self.spec.decode(theta)?;
        let n = self.spec.n_states();
        let t_len = self.series.len();

        let stationary;
        let delta: &[F] = match &dec.delta {
            Some(d) => d,
            None => {
                let g = TransitionMatrix::new(n, dec.gamma.clone())?;
                stationary = hmm::stationary_distribution(&g)?.into_vec();
                &stationary
            }
        };

        let mut q = vec![F::zero(); t_len * n];
        for (i, e) in dec.emissions.iter().enumerate() {
            for (t, x) in self.series.iter().enumerate() {
                q[t * n + i] = match (x, e) {
                    (None, _) => F::one(),
                    (Some(_), Emit::Spline(w)) => self.rows[i].as_ref().expect("spline rows")[t].dot(w),
                    (Some(x), Emit::Normal { mean, sd }) => normal_pdf(*x, *mean, *sd),
                    (Some(x), Emit::Mixture { m1, s1, m2, s2, w }) => {
                        *w * normal_pdf(*x, *m1, *s1) + (F::one() - *w) * normal_pdf(*x, *m2, *s2)
                    }
                };
            }
        }
        let fw = forward_scaled(delta, &dec.gamma, &q)?;

        let mut pen = F::zero();
        for (e, &lam) in dec.emissions.iter().zip(&self.penalty.lambda) {
            if let Emit::Spline(w) = e {
                pen = pen + state_penalty(w, lam, self.penalty.order);
            }
        }
        let value = fw.log_likelihood - pen;

        if let Some(grad) = grad {
            self.gradient(&dec, delta, &q, &fw, grad)?;
        }
        Ok(value)
    }

    fn gradient(
        &self,
        dec: &Decoded<F>,
        delta: &[F],
        q: &[F],
        fw: &hmm::ScaledForward<F>,
        grad: &mut [F],
    ) -> Result<()> {
        let n = self.spec.n_states();
        let t_len = self.series.len();
        grad.fill(F::zero());

        // backward pass: b_t = Gamma (q_{t+1} * b_{t+1}) / s_{t+1}
        let mut b = vec![F::one(); t_len * n];
        let mut tmp = vec![F::zero(); n];
        let mut g_gamma = vec![F::zero(); n * n];
        for t in (0..t_len.saturating_sub(1)).rev() {
            let s = fw.scales[t + 1];
            for j in 0..n {
                tmp[j] = q[(t + 1) * n + j] * b[(t + 1) * n + j] / s;
            }
            linalg::mat_vec(n, &dec.gamma, &tmp, &mut b[t * n..(t + 1) * n]);
            let phi = &fw.filtered[t * n..(t + 1) * n];
            for i in 0..n {
                for j in 0..n {
                    g_gamma[i * n + j] = g_gamma[i * n + j] + phi[i] * tmp[j];
                }
            }
        }

        // d logL / d delta_i
        let g_delta: Vec<F> = (0..n).map(|i| q[i] * b[i] / fw.scales[0]).collect();

        let mut pos = self.spec.n_transition();
        match &dec.delta {
            None if n > 1 => {
                // delta (I - Gamma + U) = 1  =>  d delta = delta dGamma A^{-1}
                let g = TransitionMatrix::new(n, dec.gamma.clone())?;
                let a = hmm::stationary_system(&g);
                let x = linalg::solve(n, &a, &g_delta, F::lit(1e-13)).ok_or(Error::SingularChain)?;
                for i in 0..n {
                    for j in 0..n {
                        g_gamma[i * n + j] = g_gamma[i * n + j] + delta[i] * x[j];
                    }
                }
            }
            None => {}
            Some(d) => {
                let mean: F = d.iter().zip(&g_delta).map(|(&p, &g)| p * g).sum();
                for i in 1..n {
                    grad[pos + i - 1] = d[i] * (g_delta[i] - mean);
                }
                pos += n - 1;
            }
        }

        // transition logits, diagonal as reference
        for i in 0..n {
            let row = &dec.gamma[i * n..(i + 1) * n];
            let gr = &g_gamma[i * n..(i + 1) * n];
            let mean: F = row.iter().zip(gr).map(|(&p, &g)| p * g).sum();
            let mut c = 0;
            for j in (0..n).filter(|&j| j != i) {
                grad[i * (n - 1) + c] = row[j] * (gr[j] - mean);
                c += 1;
            }
        }

        // d logL / d q_t(i) = zeta_t(i) b_t(i) / s_t
        let obs_weight = |t: usize, i: usize| fw.predicted[t * n + i] * b[t * n + i] / fw.scales[t];

        for (i, e) in dec.emissions.iter().enumerate() {
            let fam = &self.spec.families[i];
            let block = &mut grad[pos..pos + fam.num_params()];
            pos += fam.num_params();
            match e {
                Emit::Spline(w) => {
                    let rows = self.rows[i].as_ref().expect("spline rows");
                    let mut ga = vec![F::zero(); w.len()];
                    for (t, x) in self.series.iter().enumerate() {
                        if x.is_none() {
                            continue;
                        }
                        let wt = obs_weight(t, i);
                        for (k, v) in rows[t].iter() {
                            ga[k] = ga[k] + wt * v;
                        }
                    }
                    let lam = self.penalty.lambda[i];
                    if lam > F::zero() {
                        let d = differences(w, self.penalty.order);
                        let adj = differences_adjoint(&d, self.penalty.order);
                        for (g, a) in ga.iter_mut().zip(adj) {
                            *g = *g - lam * a;
                        }
                    }
                    let mean: F = w.iter().zip(&ga).map(|(&a, &g)| a * g).sum();
                    let c = w.len() / 2;
                    let mut idx = 0;
                    for k in (0..w.len()).filter(|&k| k != c) {
                        block[idx] = w[k] * (ga[k] - mean);
                        idx += 1;
                    }
                }
                Emit::Normal { mean, sd } => {
                    for (t, x) in self.series.iter().enumerate() {
                        let Some(x) = *x else { continue };
                        let wt = obs_weight(t, i) * q[t * n + i];
                        let z = (x - *mean) / *sd;
                        block[0] = block[0] + wt * z / *sd;
                        block[1] = block[1] + wt * (z * z - F::one());
                    }
                }
                Emit::Mixture { m1, s1, m2, s2, w } => {
                    let v = F::one() - *w;
                    for (t, x) in self.series.iter().enumerate() {
                        let Some(x) = *x else { continue };
                        let wt = obs_weight(t, i);
                        let f1 = normal_pdf(x, *m1, *s1);
                        let f2 = normal_pdf(x, *m2, *s2);
                        let z1 = (x - *m1) / *s1;
                        let z2 = (x - *m2) / *s2;
                        block[0] = block[0] + wt * *w * f1 * z1 / *s1;
                        block[1] = block[1] + wt * *w * f1 * (z1 * z1 - F::one());
                        block[2] = block[2] + wt * v * f2 * z2 / *s2;
                        block[3] = block[3] + wt * v * f2 * (z2 * z2 - F::one());
                        block[4] = block[4] + wt * (f1 - f2) * *w * v;
                    }
                }
            }
        }
        Ok(())
    }
}

#[inline]
fn normal_pdf<F: Real>(x: F, mean: F, sd: F) -> F {
    let z = (x - mean) / sd;
    (-(z * z) * F::lit(0.5)).exp() / (sd * F::TAU().sqrt())
}

impl<F: Real> Objective<F> for PenalizedObjective<'_, F> {
    fn dim(&self) -> usize {
        self.spec.num_params()
    }

    fn value(&self, x: &[F]) -> F {
        match self.evaluate(x, None) {
            Ok(v) if v.is_finite() => -v,
            _ => F::infinity(),
        }
    }

    fn value_grad(&self, x: &[F], grad: &mut [F]) -> F {
        match self.mode {
            GradientMode::CentralDifference => {
                optim::central_difference(|p| self.value(p), x, grad);
                self.value(x)
            }
            GradientMode::Analytic => match self.evaluate(x, Some(grad)) {
                Ok(v) if v.is_finite() => {
                    for g in grad.iter_mut() {
                        *g = -*g;
                    }
                    -v
                }
                _ => F::infinity(),
            },
        }
    }
}

/// Random starting-point settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitSettings<F> {
    /// Range of the implied diagonal transition probability.
    pub persistence: (F, F),
    /// Standard deviation of the i.i.d. noise added to spline logits.
    pub logit_noise_sd: F,
    /// Width of the per-state location tilt, in data standard deviations.
    pub tilt_width: F,
    /// Replace the first random start by one derived from a normal-HMM
    /// segmentation of the data (only for specs with non-normal states).
    pub segmented_start: bool,
}

impl<F: Real> Default for InitSettings<F> {
    fn default() -> Self {
        Self {
            persistence: (F::lit(0.6), F::lit(0.98)),
            logit_noise_sd: F::lit(0.1),
            tilt_width: F::lit(2.0),
            segmented_start: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig<F> {
    pub spec: ModelSpec<F>,
    pub penalty: PenaltySpec<F>,
    pub restarts: usize,
    pub seed: u64,
    pub optim: OptimConfig<F>,
    pub gradient: GradientMode,
    pub init: InitSettings<F>,
}

impl<F: Real> FitConfig<F> {
    pub fn new(spec: ModelSpec<F>, penalty: PenaltySpec<F>) -> Self {
        Self {
            spec,
            penalty,
            restarts: 10,
            seed: 0,
            optim: OptimConfig::default(),
            gradient: GradientMode::default(),
            init: InitSettings::default(),
        }
    }

    pub fn with_restarts(mut self, restarts: usize) -> Self {
        self.restarts = restarts;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_lambda(mut self, lambda: Vec<F>) -> Self {
        self.penalty.lambda = lambda;
        self
    }
}

struct DataSummary<F> {
    sorted: Vec<F>,
    sd: F,
}

fn summarize<F: Real>(series: &[Observation<F>]) -> Result<DataSummary<F>> {
    let mut sorted: Vec<F> = series.iter().flatten().copied().collect();
    if sorted.is_empty() {
        return invalid("series has no observed values");
    }
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite observations"));
    let mut sd = stats::sample_sd(&sorted);
    if !(sd > F::zero()) {
        sd = F::one();
    }
    Ok(DataSummary { sorted, sd })
}

fn normal_draw<F: Real, R: Rng + ?Sized>(rng: &mut R) -> F {
    let z: f64 = StandardNormal.sample(rng);
    F::lit(z)
}

fn uniform_draw<F: Real, R: Rng + ?Sized>(rng: &mut R, lo: F, hi: F) -> F {
    let u: f64 = rng.random();
    lo + (hi - lo) * F::lit(u)
}

/// Starting point read off a Viterbi segmentation under a fitted normal HMM:
/// transition counts give the transition logits, and each state's emission
/// parameters are estimated from the observations assigned to it (for spline
/// states, one EM step for the weights from the uniform mixture).
pub fn segmented_start<F: Real>(spec: &ModelSpec<F>, series: &[Observation<F>], seed: u64) -> Option<Vec<F>> {
    let n = spec.n_states();
    let cfg = FitConfig::new(ModelSpec::normals(n).ok()?, PenaltySpec::unpenalized(n)).with_restarts(4).with_seed(seed);
    let normal = fit(series, &cfg).ok()?;
    let path = hmm::viterbi(&normal.model, series).ok()?;
    let mut counts = vec![F::one(); n * n];
    for w in path.states.windows(2) {
        counts[w[0] * n + w[1]] = counts[w[0] * n + w[1]] + F::one();
    }
    let mut theta = Vec::with_capacity(spec.num_params());
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            theta.push((counts[i * n + j] / counts[i * n + i]).ln());
        }
    }
    if spec.initial == InitialMode::Free {
        theta.extend(std::iter::repeat_n(F::zero(), n - 1));
    }
    for (i, fam) in spec.families.iter().enumerate() {
        let xs: Vec<F> = series.iter().zip(&path.states).filter_map(|(x, &s)| if s == i { *x } else { None }).collect();
        let (m, sd) = match &normal.model.emissions()[i] {
            StateDensity::Normal(d) => (d.mean, d.sd),
            _ => return None,
        };
        match fam {
            EmissionFamily::Spline(b) => {
                let mut a = vec![F::zero(); b.len()];
                for &x in &xs {
                    let row = b.eval_row(x);
                    let total: F = row.iter().map(|(_, v)| v).sum();
                    if total > F::zero() {
                        for (k, v) in row.iter() {
                            a[k] = a[k] + v / total;
                        }
                    }
                }
                let sum: F = a.iter().copied().sum();
                let floor = F::lit(1e-3) / F::from_count(b.len());
                let norm = if sum > F::zero() { sum } else { F::one() };
                let logits: Vec<F> = a.iter().map(|&v| (v / norm + floor).ln()).collect();
                let c = b.center_index();
                theta.extend(logits.iter().enumerate().filter(|&(k, _)| k != c).map(|(_, &v)| v - logits[c]));
            }
            EmissionFamily::Normal => theta.extend([m, sd.ln()]),
            EmissionFamily::NormalMixture => {
                let s = (sd * F::lit(0.7)).ln();
                theta.extend([m + F::lit(0.5) * sd, s, m - F::lit(1.5) * sd, s, F::lit(0.8f64 / 0.2).ln()]);
            }
        }
    }
    theta.iter().all(|v| v.is_finite()).then_some(theta)
}

/// `r` random working vectors.
///
/// States are tilted towards increasing data quantiles so that state `i`
/// starts in the `i`-th region of the data, and the implied persistence of
/// each state is drawn from `init.persistence`. With `init.segmented_start`
/// the first point comes from [`segmented_start`] when the model spec has a
/// non-normal state.
pub fn initial_points<F: Real, R: Rng + ?Sized>(
    spec: &ModelSpec<F>,
    init: &InitSettings<F>,
    series: &[Observation<F>],
    r: usize,
    rng: &mut R,
) -> Result<Vec<Vec<F>>> {
    let data = summarize(series)?;
    let n = spec.n_states();
    let nf = F::from_count(n);
    let mut out = Vec::with_capacity(r);
    let seg_seed: u64 = rng.random();
    if r > 0 && init.segmented_start && spec.families.iter().any(|f| !matches!(f, EmissionFamily::Normal)) {
        if let Some(p) = segmented_start(spec, series, seg_seed) {
            out.push(p);
        }
    }
    while out.len() < r {
        let mut theta = Vec::with_capacity(spec.num_params());
        for _ in 0..n {
            let p = uniform_draw(rng, init.persistence.0, init.persistence.1);
            let off = (F::one() - p) / F::from_count((n - 1).max(1));
            for _ in 1..n {
                let jitter = F::lit(0.2) * normal_draw::<F, _>(rng);
                theta.push((off / p).ln() + jitter);
            }
        }
        if spec.initial == InitialMode::Free {
            theta.extend(std::iter::repeat_n(F::zero(), n - 1));
        }
        let mut centers: Vec<F> = (0..n)
            .map(|i| {
                let prob = (F::from_count(i) + uniform_draw(rng, F::lit(0.2), F::lit(0.8))) / nf;
                stats::quantile_sorted(&data.sorted, prob)
            })
            .collect();
        centers.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        let width = data.sd * init.tilt_width;
        for (fam, &c) in spec.families.iter().zip(&centers) {
            let s = width * uniform_draw(rng, F::lit(0.7), F::lit(1.3));
            match fam {
                EmissionFamily::Spline(b) => {
                    let moments = b.moments();
                    let mut logits: Vec<F> = moments
                        .iter()
                        .map(|&(m, _)| {
                            let z = (m - c) / s;
                            -(z * z) * F::lit(0.5) + init.logit_noise_sd * normal_draw::<F, _>(rng)
                        })
                        .collect();
                    let anchor = logits[b.center_index()];
                    for l in logits.iter_mut() {
                        *l = *l - anchor;
                    }
                    let centre = b.center_index();
                    theta.extend(logits.iter().enumerate().filter(|&(k, _)| k != centre).map(|(_, &v)| v));
                }
                EmissionFamily::Normal => theta.extend([c, s.ln()]),
                EmissionFamily::NormalMixture => {
                    let other = c + data.sd * normal_draw::<F, _>(rng);
                    let w = uniform_draw(rng, F::lit(0.6), F::lit(0.9));
                    theta.extend([c, s.ln(), other, s.ln(), (w / (F::one() - w)).ln()]);
                }
            }
        }
        debug_assert_eq!(theta.len(), spec.num_params());
        out.push(theta);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestartDiagnostics<F> {
    pub index: usize,
    /// Penalized log-likelihood reached (`-inf` if the start was infeasible).
    pub penalized_loglik: F,
    pub iterations: usize,
    pub termination: Termination,
    /// Whether the start came from a caller-supplied warm start.
    pub warm: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult<F> {
    /// Fitted model, states sorted by ascending emission mean.
    pub model: HmmModel<F>,
    /// Smoothing parameters in the sorted state order.
    pub lambda: Vec<F>,
    pub penalized_loglik: F,
    pub loglik: F,
    pub iterations: usize,
    /// Index of the winning start (warm starts come first).
    pub restart: usize,
    pub converged: bool,
    /// Sorted state `a` is state `order[a]` of the optimised parametrisation.
    pub order: Vec<usize>,
    /// Winning working vector, before sorting; usable as a warm start.
    pub params: Vec<F>,
    pub restarts: Vec<RestartDiagnostics<F>>,
    /// Sorted states to which the Viterbi path assigns no observation.
    pub empty_states: Vec<usize>,
}

impl<F: Real> FitResult<F> {
    pub fn has_empty_states(&self) -> bool {
        !self.empty_states.is_empty()
    }
}

/// Fits from `config.restarts` random starting points.
pub fn fit<F: Real>(series: &[Observation<F>], config: &FitConfig<F>) -> Result<FitResult<F>> {
    fit_with_starts(series, config, &[])
}

/// Fits from the given warm starts plus `config.restarts` random ones.
/// The best converged optimum wins; ties go to the earliest start.
pub fn fit_with_starts<F: Real>(
    series: &[Observation<F>],
    config: &FitConfig<F>,
    warm: &[Vec<F>],
) -> Result<FitResult<F>> {
    let spec = &config.spec;
    let n = spec.n_states();
    let observed = series.iter().filter(|x| x.is_some()).count();
    if observed < n {
        return invalid(format!("{observed} observed values cannot support {n} states"));
    }
    if config.restarts == 0 && warm.is_empty() {
        return invalid("at least one restart is required");
    }
    let objective = PenalizedObjective::new(spec, &config.penalty, series, config.gradient)?;

    let mut rng = rng::seeded(config.seed);
    let mut starts: Vec<(Vec<F>, bool)> = warm.iter().map(|w| (w.clone(), true)).collect();
    starts.extend(
        initial_points(spec, &config.init, series, config.restarts, &mut rng)?
            .into_iter()
            .map(|p| (p, false)),
    );
    for (s, _) in &starts {
        if s.len() != spec.num_params() {
            return invalid(format!("starting point has {} entries, expected {}", s.len(), spec.num_params()));
        }
    }

    let outcomes: Vec<_> = starts
        .par_iter()
        .map(|(x0, _)| bfgs(&objective, x0, &config.optim))
        .collect();

    let restarts: Vec<RestartDiagnostics<F>> = outcomes
        .iter()
        .zip(&starts)
        .enumerate()
        .map(|(index, (o, (_, warm)))| RestartDiagnostics {
            index,
            penalized_loglik: if o.value.is_finite() { -o.value } else { F::neg_infinity() },
            iterations: o.iterations,
            termination: o.termination,
            warm: *warm,
        })
        .collect();

    let mut best: Option<usize> = None;
    for (i, o) in outcomes.iter().enumerate() {
        if !o.converged() || !o.value.is_finite() {
            continue;
        }
        if best.is_none_or(|b| o.value < outcomes[b].value) {
            best = Some(i);
        }
    }
    let Some(win) = best else {
        let diagnostics = restarts
            .iter()
            .map(|r| format!("#{}: {:?} after {} iterations", r.index, r.termination, r.iterations))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Error::FitFailed { restarts: restarts.len(), diagnostics });
    };

    let params = outcomes[win].x.clone();
    let raw = spec.unpack(&params)?;
    let loglik = hmm::log_likelihood(&raw, series)?;
    let penalized = loglik - model_penalty(&raw, &config.penalty)?;
    let (model, order) = raw.sorted_by_mean();
    let lambda = order.iter().map(|&i| config.penalty.lambda[i]).collect();
    let path = hmm::viterbi(&model, series)?;
    let mut visits = vec![0usize; n];
    for &s in &path.states {
        visits[s] += 1;
    }
    let empty_states = (0..n).filter(|&i| visits[i] == 0).collect();

    Ok(FitResult {
        model,
        lambda,
        penalized_loglik: penalized,
        loglik,
        iterations: outcomes[win].iterations,
        restart: win,
        converged: true,
        order,
        params,
        restarts,
        empty_states,
    })
}

/// Akaike and Bayesian information criteria of an unpenalized fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InformationCriteria<F> {
    pub num_params: usize,
    pub loglik: F,
    pub aic: F,
    pub bic: F,
}

/// `AIC = -2 log L + 2p`, `BIC = -2 log L + p log T` with `T` the number of
/// observed values.
pub fn information_criteria<F: Real>(loglik: F, num_params: usize, n_obs: usize) -> InformationCriteria<F> {
    let p = F::from_count(num_params);
    let two = F::lit(2.0);
    InformationCriteria {
        num_params,
        loglik,
        aic: -two * loglik + two * p,
        bic: -two * loglik + p * F::from_count(n_obs).ln(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::TransitionMatrix;

    fn basis() -> Arc<SplineBasis<f64>> {
        Arc::new(SplineBasis::new(-3.0, 3.0, 5).unwrap())
    }

    #[test]
    fn penalty_hand_values() {
        let spec = PenaltySpec::new(1, vec![2.0]).unwrap();
        let p: f64 = penalty(&[vec![0.5, 0.3, 0.2]], &spec).unwrap();
        assert!((p - 0.05).abs() < 1e-15);

        let uniform = vec![vec![1.0 / 11.0; 11]];
        assert_eq!(penalty(&uniform, &PenaltySpec::second_order(vec![100.0]).unwrap()).unwrap(), 0.0);

        let linear: Vec<f64> = (0..11).map(|k| 0.01 + 0.003 * k as f64).collect();
        let p = penalty(&[linear], &PenaltySpec::second_order(vec![1e6]).unwrap()).unwrap();
        assert!(p < 1e-20);
    }

    #[test]
    fn penalty_rejects_bad_specs() {
        assert!(PenaltySpec::<f64>::new(0, vec![1.0]).is_err());
        assert!(PenaltySpec::new(2, vec![-1.0]).is_err());
        assert!(PenaltySpec::new(2, vec![f64::NAN]).is_err());
        assert!(penalty(&[vec![0.5, 0.5]], &PenaltySpec::new(2, vec![1.0]).unwrap()).is_err());
    }

    #[test]
    fn difference_adjoint_is_transpose() {
        let a = [0.3, -1.0, 2.0, 0.5, 0.25, 4.0];
        let d = [1.0, -0.5, 2.0, 0.1, -0.7];
        for m in 1..=2 {
            let lhs: f64 = differences(&a, m).iter().zip(&d).map(|(x, y)| x * y).sum();
            let rhs: f64 = differences_adjoint(&d[..a.len() - m], m).iter().zip(&a).map(|(x, y)| x * y).sum();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn pack_unpack_round_trip() {
        let b = basis();
        let spec = ModelSpec::new(
            vec![EmissionFamily::Spline(b), EmissionFamily::Normal, EmissionFamily::NormalMixture],
            InitialMode::Free,
        )
        .unwrap();
        let theta: Vec<f64> = (0..spec.num_params()).map(|i| ((i * 7) as f64).sin()).collect();
        let model = spec.unpack(&theta).unwrap();
        let back = spec.pack(&model).unwrap();
        for (a, b) in theta.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn pack_rejects_mismatched_model() {
        let spec = ModelSpec::<f64>::normals(2).unwrap();
        let other = ModelSpec::splines(2, basis()).unwrap();
        let m = other.unpack(&vec![0.0; other.num_params()]).unwrap();
        assert!(spec.pack(&m).is_err());
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let b = basis();
        for initial in [InitialMode::Stationary, InitialMode::Free] {
            let spec = ModelSpec::new(
                vec![EmissionFamily::Spline(b.clone()), EmissionFamily::Normal, EmissionFamily::NormalMixture],
                initial,
            )
            .unwrap();
            let pen = PenaltySpec::second_order(vec![50.0, 0.0, 0.0]).unwrap();
            let series: Vec<Option<f64>> =
                (0..40).map(|t| if t % 7 == 3 { None } else { Some(((t as f64) * 0.77).sin() * 2.0) }).collect();
            let obj = PenalizedObjective::new(&spec, &pen, &series, GradientMode::Analytic).unwrap();
            let theta: Vec<f64> = (0..spec.num_params()).map(|i| 0.3 * ((i * 3) as f64).cos()).collect();
            let mut ga = vec![0.0; theta.len()];
            obj.value_grad(&theta, &mut ga);
            let mut gn = vec![0.0; theta.len()];
            optim::central_difference(|p| obj.value(p), &theta, &mut gn);
            for (i, (a, n)) in ga.iter().zip(&gn).enumerate() {
                assert!((a - n).abs() < 1e-6 * (1.0 + n.abs()), "{initial:?} param {i}: {a} vs {n}");
            }
        }
    }

    #[test]
    fn one_state_normal_fit_is_closed_form() {
        let xs: Vec<f64> = (0..200).map(|t| ((t as f64) * 1.3).sin() * 2.0 + 0.5 + 0.01 * t as f64).collect();
        let series = crate::observed(&xs);
        let cfg = FitConfig::new(ModelSpec::normals(1).unwrap(), PenaltySpec::unpenalized(1)).with_restarts(2);
        let fit = fit(&series, &cfg).unwrap();
        let mean = stats::mean(&xs);
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64).sqrt();
        let StateDensity::Normal(d) = fit.model.emissions()[0] else { panic!() };
        assert!((d.mean - mean).abs() < 1e-6, "{} vs {mean}", d.mean);
        assert!((d.sd - sd).abs() < 1e-6, "{} vs {sd}", d.sd);
    }

    #[test]
    fn initial_points_are_valid_and_distinct() {
        let spec = ModelSpec::splines(3, basis()).unwrap();
        let series = crate::observed(&(0..50).map(|t| (t as f64 * 0.1).cos()).collect::<Vec<_>>());
        let mut rng = crate::rng::seeded(4);
        let pts = initial_points(&spec, &InitSettings::default(), &series, 20, &mut rng).unwrap();
        for p in &pts {
            let m = spec.unpack(p).unwrap();
            for i in 0..3 {
                let d = m.gamma().get(i, i);
                assert!(d > 0.3 && d < 0.999, "persistence {d}");
            }
        }
        assert_ne!(pts[0], pts[1]);
    }

    #[test]
    fn label_permutation_symmetry() {
        let spec = ModelSpec::normals(3).unwrap();
        let g = TransitionMatrix::new(3, vec![0.8, 0.15, 0.05, 0.1, 0.7, 0.2, 0.3, 0.3, 0.4]).unwrap();
        let em = [(-1.0, 0.5), (0.5, 1.0), (2.0, 0.7)]
            .iter()
            .map(|&(m, s)| StateDensity::Normal(NormalDensity::new(m, s).unwrap()))
            .collect();
        let model = HmmModel::stationary(g, em).unwrap();
        let perm = model.permuted(&[2, 0, 1]);
        let series = crate::observed(&[0.1, 1.9, -0.8, 0.4, 2.2]);
        let pen = PenaltySpec::unpenalized(3);
        let a: f64 = penalized_loglik(&spec.pack(&model).unwrap(), &series, &spec, &pen).unwrap();
        let b = penalized_loglik(&spec.pack(&perm).unwrap(), &series, &spec, &pen).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn information_criteria_identities() {
        let ic = information_criteria(-100.0, 12, 800);
        assert_eq!(ic.aic, 200.0 + 24.0);
        assert_eq!(ic.bic, 200.0 + 12.0 * 800f64.ln());
    }
}
