//! Simulation from HMMs and the replication study of the nonparametric
//! estimator against parametric competitors.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::SplineBasis;
use crate::density::{kld, NormalDensity, NormalMixtureDensity, SplineDensity, StateDensity};
use crate::error::{invalid, Result};
use crate::estimation::{fit, EmissionFamily, FitConfig, InitialMode, ModelSpec, PenaltySpec};
use crate::hmm::{HmmModel, Observation, TransitionMatrix};
use crate::inference::{bootstrap, tpm_intervals, MIN_REPLICATES};
use crate::rng;
use crate::scalar::Real;
use crate::selection::{
    grid_walk, make_partitions, select_num_states, CvSetup, FitScorer, SmoothingGrid, WalkSettings, WalkStart,
};
use crate::stats;

/// A simulated series together with its hidden states.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedSeries<F> {
    pub observations: Vec<F>,
    /// Zero-based state indices.
    pub states: Vec<usize>,
}

impl<F: Real> SimulatedSeries<F> {
    pub fn series(&self) -> Vec<Observation<F>> {
        crate::observed(&self.observations)
    }
}

/// Draws `S_1 ~ delta`, `S_t | S_{t-1} ~ Gamma`, `X_t ~ f_{S_t}`.
pub fn simulate_series<F: Real, R: Rng + ?Sized>(model: &HmmModel<F>, len: usize, rng: &mut R) -> SimulatedSeries<F> {
    let mut states = Vec::with_capacity(len);
    let mut observations = Vec::with_capacity(len);
    let mut s = 0;
    for t in 0..len {
        s = if t == 0 {
            stats::sample_categorical(model.delta().as_slice(), rng)
        } else {
            stats::sample_categorical(model.gamma().row(s), rng)
        };
        states.push(s);
        observations.push(model.emissions()[s].sample(rng));
    }
    SimulatedSeries { observations, states }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Competitor {
    /// Penalized B-spline emissions with cross-validated smoothing.
    Nonparametric,
    /// The parametric families of the truth.
    CorrectParametric,
    /// Normal emissions in every state.
    WrongParametric,
}

impl Competitor {
    pub const ALL: [Competitor; 3] = [Self::Nonparametric, Self::CorrectParametric, Self::WrongParametric];

    pub fn name(self) -> &'static str {
        match self {
            Self::Nonparametric => "nonparametric",
            Self::CorrectParametric => "correct_parametric",
            Self::WrongParametric => "wrong_parametric",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimScenario<F> {
    pub truth: HmmModel<F>,
    pub length: usize,
    pub runs: usize,
    /// Basis size parameter: `2K + 1` B-splines.
    pub k: usize,
    /// Smoothing candidates shared by every state.
    pub lambda_candidates: Vec<F>,
    pub partitions: usize,
    pub calibration_fraction: F,
    pub bootstrap_replicates: usize,
    pub level: F,
    pub competitors: Vec<Competitor>,
    pub state_candidates: Vec<usize>,
    /// Random restarts per fit.
    pub restarts: usize,
    /// Random restarts per cross-validation cell without a warm start.
    pub cv_restarts: usize,
    /// Random restarts per cross-validation cell in addition to a warm start.
    pub cv_warm_restarts: usize,
    /// Random restarts per bootstrap replicate, in addition to the warm start.
    pub bootstrap_restarts: usize,
    pub seed: u64,
}

/// Two-state truth with persistence `persistence`; state 1 is `N(0, 1.5^2)`,
/// state 2 is `0.85 N(shift, 1) + 0.15 N(-5, 1)`.
pub fn truth_model<F: Real>(persistence: F, shift: F) -> Result<HmmModel<F>> {
    let p = persistence;
    let gamma = TransitionMatrix::new(2, vec![p, F::one() - p, F::one() - p, p])?;
    let first = StateDensity::Normal(NormalDensity::new(F::zero(), F::lit(1.5))?);
    let second = StateDensity::NormalMixture(NormalMixtureDensity::new(
        NormalDensity::new(shift, F::one())?,
        NormalDensity::new(F::lit(-5.0), F::one())?,
        F::lit(0.85),
    )?);
    HmmModel::stationary(gamma, vec![first, second])
}

/// Three-state model on a log absolute speed scale, loosely shaped like a
/// diving animal: slow, intermediate and fast movement. Every state is a
/// spline mixture on a `K = 25` basis over `[-7, 2]`, so series drawn from it
/// are within reach of the nonparametric estimator.
pub fn dive_model<F: Real>() -> Result<HmmModel<F>> {
    let basis = Arc::new(SplineBasis::new(F::lit(-7.0), F::lit(2.0), 25)?);
    let shapes: [&[(f64, f64, f64)]; 3] = [
        &[(0.7, -3.6, 0.9), (0.3, -2.2, 0.6)],
        &[(0.55, -1.2, 0.45), (0.45, -0.4, 0.35)],
        &[(0.8, 0.4, 0.3), (0.2, -0.3, 0.5)],
    ];
    let centers: Vec<F> = basis.moments().iter().map(|&(m, _)| m).collect();
    let emissions = shapes
        .iter()
        .map(|parts| {
            let w: Vec<F> = centers
                .iter()
                .map(|&x| {
                    parts.iter().fold(F::lit(1e-6), |acc, &(p, m, s)| {
                        let z = (x - F::lit(m)) / F::lit(s);
                        acc + F::lit(p) * (-(z * z) / F::lit(2.0)).exp() / F::lit(s)
                    })
                })
                .collect();
            Ok(StateDensity::Spline(SplineDensity::from_weights(basis.clone(), &w)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let gamma = TransitionMatrix::new(
        3,
        [0.95, 0.04, 0.01, 0.05, 0.9, 0.05, 0.02, 0.08, 0.9].map(F::lit).to_vec(),
    )?;
    HmmModel::stationary(gamma, emissions)
}

pub fn default_scenario<F: Real>() -> SimScenario<F> {
    SimScenario {
        truth: truth_model(F::lit(0.9), F::lit(3.0)).expect("valid default truth"),
        length: 800,
        runs: 50,
        k: 15,
        lambda_candidates: [256.0, 512.0, 1024.0, 2048.0, 4096.0, 8192.0, 16384.0].map(F::lit).to_vec(),
        partitions: 10,
        calibration_fraction: F::lit(0.9),
        bootstrap_replicates: 100,
        level: F::lit(0.95),
        competitors: Competitor::ALL.to_vec(),
        state_candidates: vec![1, 2, 3],
        restarts: 10,
        cv_restarts: 1,
        cv_warm_restarts: 0,
        bootstrap_restarts: 1,
        seed: 1,
    }
}

impl<F: Real> SimScenario<F> {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return invalid("scenario needs at least one run");
        }
        if self.length < 2 {
            return invalid("series length must be at least 2");
        }
        if self.lambda_candidates.is_empty() {
            return invalid("no smoothing candidates");
        }
        if self.competitors.is_empty() {
            return invalid("no competitors");
        }
        if self.state_candidates.contains(&0) {
            return invalid("state candidates must be positive");
        }
        if !(self.level > F::zero() && self.level < F::one()) {
            return invalid("level must lie in (0, 1)");
        }
        if self.restarts == 0 {
            return invalid("at least one restart is required");
        }
        if self.bootstrap_replicates != 0 && self.bootstrap_replicates < MIN_REPLICATES {
            return invalid(format!("bootstrap needs 0 or at least {MIN_REPLICATES} replicates"));
        }
        Ok(())
    }

    fn truth_spec(&self) -> ModelSpec<F> {
        ModelSpec::of_model(&self.truth)
    }

    fn spline_config(&self, n: usize, basis: &Arc<SplineBasis<F>>, seed: u64) -> Result<FitConfig<F>> {
        let lambda = vec![self.lambda_candidates[0]; n];
        Ok(FitConfig::new(ModelSpec::splines(n, basis.clone())?, PenaltySpec::second_order(lambda)?)
            .with_restarts(self.restarts)
            .with_seed(seed))
    }
}

/// Estimates of one competitor in one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompetitorRun<F> {
    pub competitor: Competitor,
    /// Diagonal of the fitted transition matrix, states sorted by mean.
    pub persistence: Vec<F>,
    /// Bootstrap standard errors of the diagonal entries.
    pub bootstrap_se: Option<Vec<F>>,
    /// Whether each bootstrap interval contains the true diagonal entry.
    pub covered: Option<Vec<bool>>,
    /// Divergence of each fitted state density from the matching true one.
    pub kld: Vec<F>,
    pub lambda: Option<Vec<F>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord<F> {
    pub run: usize,
    pub competitors: Vec<CompetitorRun<F>>,
    /// Number of states chosen by cross-validation, if selection ran.
    pub selected_states: Option<usize>,
    pub selection_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompetitorSummary<F> {
    pub competitor: Competitor,
    pub runs: usize,
    pub failures: usize,
    pub persistence_mean: Vec<F>,
    pub persistence_sd: Vec<F>,
    pub bootstrap_se_mean: Vec<F>,
    pub coverage: Vec<F>,
    pub kld_mean: Vec<F>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionFrequency<F> {
    pub states: usize,
    pub frequency: F,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport<F> {
    pub runs: usize,
    pub length: usize,
    pub seed: u64,
    pub truth_persistence: Vec<F>,
    pub competitors: Vec<CompetitorSummary<F>>,
    pub selection: Vec<SelectionFrequency<F>>,
    pub selection_failures: usize,
    pub records: Vec<RunRecord<F>>,
}

/// Divergences of the mean-sorted states of `fitted` from those of `truth`.
pub fn aligned_kld<F: Real>(truth: &HmmModel<F>, fitted: &HmmModel<F>) -> Result<Vec<F>> {
    if truth.n_states() != fitted.n_states() {
        return invalid("state counts differ");
    }
    let (t, _) = truth.sorted_by_mean();
    let (f, _) = fitted.sorted_by_mean();
    t.emissions().iter().zip(f.emissions()).map(|(a, b)| kld(a, b)).collect()
}

fn run_competitor<F: Real>(
    sc: &SimScenario<F>,
    competitor: Competitor,
    series: &[Observation<F>],
    run_seed: u64,
    np_lambda: Option<&[F]>,
    basis: &Arc<SplineBasis<F>>,
) -> Result<CompetitorRun<F>> {
    let n = sc.truth.n_states();
    let fit_seed = rng::child_seed(run_seed, 10 + competitor as u64);
    let cfg = match competitor {
        Competitor::Nonparametric => {
            let lambda = np_lambda.map(<[F]>::to_vec).unwrap_or_else(|| vec![sc.lambda_candidates[0]; n]);
            sc.spline_config(n, basis, fit_seed)?.with_lambda(lambda)
        }
        Competitor::CorrectParametric => {
            FitConfig::new(sc.truth_spec(), PenaltySpec::unpenalized(n)).with_restarts(sc.restarts).with_seed(fit_seed)
        }
        Competitor::WrongParametric => FitConfig::new(
            ModelSpec::new(vec![EmissionFamily::Normal; n], InitialMode::Stationary)?,
            PenaltySpec::unpenalized(n),
        )
        .with_restarts(sc.restarts)
        .with_seed(fit_seed),
    };
    let fitted = fit(series, &cfg)?;
    let persistence: Vec<F> = (0..n).map(|i| fitted.model.gamma().get(i, i)).collect();
    let kld = aligned_kld(&sc.truth, &fitted.model)?;
    let (mut bootstrap_se, mut covered) = (None, None);
    if sc.bootstrap_replicates > 0 {
        let mut bcfg = cfg.clone().with_restarts(sc.bootstrap_restarts).with_lambda(fitted.lambda.clone());
        bcfg.spec = ModelSpec::of_model(&fitted.model);
        let ens = bootstrap(&fitted.model, sc.length, sc.bootstrap_replicates, &bcfg, rng::child_seed(run_seed, 20 + competitor as u64))?;
        if let Ok(iv) = tpm_intervals(&ens, sc.level) {
            let (truth, _) = sc.truth.sorted_by_mean();
            bootstrap_se = Some((0..n).map(|i| iv.se[i * n + i]).collect());
            covered = Some(
                (0..n)
                    .map(|i| {
                        let g = truth.gamma().get(i, i);
                        iv.lower[i * n + i] <= g && g <= iv.upper[i * n + i]
                    })
                    .collect(),
            );
        }
    }
    Ok(CompetitorRun {
        competitor,
        persistence,
        bootstrap_se,
        covered,
        kld,
        lambda: matches!(competitor, Competitor::Nonparametric).then(|| fitted.lambda.clone()),
        error: None,
    })
}

fn cv_settings<F: Real>(sc: &SimScenario<F>) -> WalkSettings {
    WalkSettings {
        start: WalkStart::Diagonal,
        extend_boundary: false,
        max_extensions: 0,
        warm_restarts: Some(sc.cv_warm_restarts),
    }
}

/// One replication: simulate, select smoothing by cross-validation, fit and
/// bootstrap every competitor, and select the number of states.
pub fn run_once<F: Real>(sc: &SimScenario<F>, run: usize) -> Result<RunRecord<F>> {
    let run_seed = rng::child_seed(sc.seed, run as u64);
    let sim = simulate_series(&sc.truth, sc.length, &mut rng::seeded(run_seed));
    let series = sim.series();
    let basis = Arc::new(SplineBasis::for_data(&series, sc.k)?);
    let n = sc.truth.n_states();
    let partitions = make_partitions(sc.length, sc.partitions, sc.calibration_fraction, &mut rng::stream(run_seed, 1))?;

    let setup = |m: usize| -> Result<CvSetup<F>> {
        let mid = sc.lambda_candidates[sc.lambda_candidates.len() / 2];
        let full = sc.spline_config(m, &basis, rng::child_seed(run_seed, 200 + m as u64))?.with_lambda(vec![mid; m]);
        let anchors = fit(&series, &full).map(|f| vec![f.params]).unwrap_or_default();
        Ok(CvSetup {
            config: sc.spline_config(m, &basis, rng::child_seed(run_seed, 100 + m as u64))?.with_restarts(sc.cv_restarts),
            grid: SmoothingGrid::new(vec![sc.lambda_candidates.clone(); m])?,
            anchors,
        })
    };

    let needs_np = sc.competitors.contains(&Competitor::Nonparametric);
    let mut np_lambda = None;
    let mut selected_states = None;
    let mut selection_error = None;
    if !sc.state_candidates.is_empty() {
        let outcome = select_num_states(&series, &sc.state_candidates, &partitions, &cv_settings(sc), setup);
        match outcome {
            Ok(sel) => {
                selected_states = Some(sel.chosen);
                np_lambda = sel.per_state.iter().find(|s| s.states == n).map(|s| s.report.selected.clone());
            }
            Err(e) => selection_error = Some(e.to_string()),
        }
    }
    if needs_np && np_lambda.is_none() {
        let cv = setup(n)?;
        let mut scorer = FitScorer::new(&series, &partitions, &cv.config)?;
        scorer.warm_restarts = sc.cv_warm_restarts;
        scorer.anchors = cv.anchors;
        let report = grid_walk(&cv.grid, &scorer, &cv_settings(sc))?;
        np_lambda = Some(report.selected);
    }

    let competitors = sc
        .competitors
        .iter()
        .map(|&c| {
            run_competitor(sc, c, &series, run_seed, np_lambda.as_deref(), &basis).unwrap_or_else(|e| CompetitorRun {
                competitor: c,
                persistence: Vec::new(),
                bootstrap_se: None,
                covered: None,
                kld: Vec::new(),
                lambda: None,
                error: Some(e.to_string()),
            })
        })
        .collect();
    Ok(RunRecord { run, competitors, selected_states, selection_error })
}

fn mean_sd<F: Real>(xs: &[F]) -> (F, F) {
    if xs.is_empty() {
        return (F::nan(), F::nan());
    }
    (stats::mean(xs), stats::sample_sd(xs))
}

/// Aggregates run records; the result does not depend on their order.
pub fn summarize<F: Real>(sc: &SimScenario<F>, mut records: Vec<RunRecord<F>>) -> SimReport<F> {
    records.sort_by_key(|r| r.run);
    let n = sc.truth.n_states();
    let (truth, _) = sc.truth.sorted_by_mean();
    let competitors = sc
        .competitors
        .iter()
        .map(|&c| {
            let ok: Vec<&CompetitorRun<F>> = records
                .iter()
                .filter_map(|r| r.competitors.iter().find(|x| x.competitor == c))
                .filter(|x| x.error.is_none())
                .collect();
            let per_state = |f: &dyn Fn(&CompetitorRun<F>) -> Option<F>| -> Vec<F> {
                ok.iter().filter_map(|x| f(x)).collect()
            };
            let mut summary = CompetitorSummary {
                competitor: c,
                runs: ok.len(),
                failures: records.len() - ok.len(),
                persistence_mean: Vec::new(),
                persistence_sd: Vec::new(),
                bootstrap_se_mean: Vec::new(),
                coverage: Vec::new(),
                kld_mean: Vec::new(),
            };
            for i in 0..n {
                let (m, s) = mean_sd(&per_state(&|x| x.persistence.get(i).copied()));
                summary.persistence_mean.push(m);
                summary.persistence_sd.push(s);
                summary.bootstrap_se_mean.push(mean_sd(&per_state(&|x| x.bootstrap_se.as_ref().map(|v| v[i]))).0);
                let cov = per_state(&|x| x.covered.as_ref().map(|v| if v[i] { F::one() } else { F::zero() }));
                summary.coverage.push(mean_sd(&cov).0);
                summary.kld_mean.push(mean_sd(&per_state(&|x| x.kld.get(i).copied())).0);
            }
            summary
        })
        .collect();
    let chosen: Vec<usize> = records.iter().filter_map(|r| r.selected_states).collect();
    let selection = sc
        .state_candidates
        .iter()
        .map(|&m| SelectionFrequency {
            states: m,
            frequency: if chosen.is_empty() {
                F::zero()
            } else {
                F::from_count(chosen.iter().filter(|&&c| c == m).count()) / F::from_count(chosen.len())
            },
        })
        .collect();
    SimReport {
        runs: records.len(),
        length: sc.length,
        seed: sc.seed,
        truth_persistence: (0..n).map(|i| truth.gamma().get(i, i)).collect(),
        competitors,
        selection,
        selection_failures: records.len() - chosen.len(),
        records,
    }
}

/// Runs all replications in parallel and aggregates them.
pub fn run_study<F: Real>(sc: &SimScenario<F>) -> Result<SimReport<F>> {
    sc.validate()?;
    let records = (0..sc.runs).into_par_iter().map(|r| run_once(sc, r)).collect::<Result<Vec<_>>>()?;
    Ok(summarize(sc, records))
}

impl<F: Real> SimReport<F> {
    /// Plain text table of the aggregated statistics.
    pub fn table(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let _ = writeln!(out, "runs: {}  T: {}  seed: {}", self.runs, self.length, self.seed);
        let _ = writeln!(
            out,
            "{:<20} {:>5} {:>9} {:>9} {:>9} {:>9} {:>9}",
            "competitor", "state", "mean", "sd", "boot_se", "coverage", "kld"
        );
        for c in &self.competitors {
            for i in 0..c.persistence_mean.len() {
                let _ = writeln!(
                    out,
                    "{:<20} {:>5} {:>9.4} {:>9.4} {:>9.4} {:>9.3} {:>9.4}",
                    c.competitor.name(),
                    i + 1,
                    c.persistence_mean[i],
                    c.persistence_sd[i],
                    c.bootstrap_se_mean[i],
                    c.coverage[i],
                    c.kld_mean[i]
                );
            }
            if c.failures > 0 {
                let _ = writeln!(out, "{:<20} failed runs: {}", c.competitor.name(), c.failures);
            }
        }
        let _ = writeln!(out, "selected number of states:");
        for s in &self.selection {
            let _ = writeln!(out, "  N = {}: {:.3}", s.states, s.frequency);
        }
        if self.selection_failures > 0 {
            let _ = writeln!(out, "  failed selections: {}", self.selection_failures);
        }
        out
    }
}
