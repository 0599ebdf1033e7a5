use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context as _, Result};
use nphmm::estimation::{fit, information_criteria, EmissionFamily, InitialMode};
use nphmm::hmm::{marginal_weights, model_acf, viterbi};
use nphmm::inference::{bootstrap, density_band, jarque_bera, pseudo_residuals, tpm_intervals, BandKind};
use nphmm::selection::{
    grid_walk, make_partitions, select_num_states, CvSetup, FitScorer, Partition, SmoothingGrid, WalkSettings,
    WalkStart,
};
use nphmm::sim::{self, simulate_series};
use nphmm::{rng, stats, CvReport, FitConfig, FitResult, HmmModel, ModelSpec, PenaltySpec, SplineBasis};
use serde::Serialize;

use crate::config::{Config, CvConfig, DataConfig, Family, InitialConfig, ModelConfig, StartConfig};
use crate::data::{ingest, DataSet};
use crate::model_file::{reported_stationary, CvCandidate, CvInfo, DataSource, FitInfo, ModelFile};
use crate::output::{write_csv, write_json, write_text, Cell};
use crate::DataArgs;

// Sub-streams of the run seed.
const FIT_STREAM: u64 = 0;
const PARTITION_STREAM: u64 = 1;
const CELL_STREAM: u64 = 2;
const ANCHOR_STREAM: u64 = 3;
const BOOTSTRAP_STREAM: u64 = 4;

pub struct Context {
    pub config: Config,
    pub seed: u64,
}

impl Context {
    fn data_config(&self, args: &DataArgs) -> DataConfig {
        let mut d = self.config.data.clone().unwrap_or_default();
        if let Some(p) = &args.data {
            d.path = Some(p.clone());
        }
        if let Some(c) = &args.column {
            d.column = c.clone();
        }
        if let Some(c) = args.delimiter {
            d.delimiter = c;
        }
        if args.header {
            d.header = Some(true);
        }
        if args.no_header {
            d.header = Some(false);
        }
        if let Some(t) = args.transform {
            d.transform = t;
        }
        d
    }

    /// Reads the series named by the flags, the config, or failing both the
    /// source recorded in a model file.
    fn load_data(&self, args: &DataArgs, recorded: Option<&DataSource>) -> Result<DataSet> {
        let mut cfg = self.data_config(args);
        if cfg.path.is_none() {
            if let Some(src) = recorded {
                cfg.path = Some(PathBuf::from(&src.path));
                if args.column.is_none() && self.config.data.is_none() {
                    cfg.column = src.column.parse().expect("infallible");
                    cfg.transform = src.transform;
                }
            }
        }
        let path = cfg.path.clone().context("no data file: pass --data or set data.path")?;
        ingest(&path, &cfg)
    }
}

fn source_of(data: &DataSet) -> DataSource {
    DataSource { path: data.source.clone(), column: data.column.clone(), transform: data.transform }
}

fn spec_for(model: &ModelConfig, n: usize, basis: Option<&Arc<SplineBasis>>) -> Result<ModelSpec<f64>> {
    let family = match model.family {
        Family::Spline => EmissionFamily::Spline(basis.context("spline model without a basis")?.clone()),
        Family::Normal => EmissionFamily::Normal,
        Family::NormalMixture => EmissionFamily::NormalMixture,
    };
    let initial = match model.initial {
        InitialConfig::Stationary => InitialMode::Stationary,
        InitialConfig::Free => InitialMode::Free,
    };
    Ok(ModelSpec::new(vec![family; n], initial)?)
}

fn fit_config(model: &ModelConfig, n: usize, basis: Option<&Arc<SplineBasis>>, lambda: Vec<f64>, seed: u64) -> Result<FitConfig<f64>> {
    let penalty = match model.family {
        Family::Spline => PenaltySpec::new(model.penalty_order, lambda)?,
        _ => PenaltySpec::unpenalized(n),
    };
    Ok(FitConfig::new(spec_for(model, n, basis)?, penalty).with_restarts(model.restarts).with_seed(seed))
}

fn basis_for(model: &ModelConfig, data: &DataSet) -> Result<Option<Arc<SplineBasis>>> {
    Ok(match model.family {
        Family::Spline => Some(Arc::new(SplineBasis::for_data(&data.values, model.k)?)),
        _ => None,
    })
}

fn partitions(cv: &CvConfig, len: usize, seed: u64) -> Result<Vec<Partition>> {
    Ok(make_partitions(len, cv.partitions, cv.calibration_fraction, &mut rng::stream(seed, PARTITION_STREAM))?)
}

fn walk_settings(cv: &CvConfig, start: WalkStart) -> WalkSettings {
    WalkSettings {
        start,
        extend_boundary: cv.extend_boundary,
        max_extensions: cv.max_extensions,
        warm_restarts: Some(cv.warm_restarts),
    }
}

/// Cell configuration and anchor for `n` states. The anchor is the full-data
/// fit at the middle candidate of the first state.
fn cv_setup(
    model: &ModelConfig,
    cv: &CvConfig,
    grid: SmoothingGrid<f64>,
    series: &[Option<f64>],
    basis: Option<&Arc<SplineBasis>>,
    seed: u64,
) -> Result<CvSetup<f64>> {
    let n = grid.dims();
    let mid: Vec<f64> = grid.candidates().iter().map(|c| c[c.len() / 2]).collect();
    let first: Vec<f64> = grid.candidates().iter().map(|c| c[0]).collect();
    let mut anchors = Vec::new();
    if cv.anchor {
        let full = fit_config(model, n, basis, mid, rng::child_seed(seed, ANCHOR_STREAM + 16 * n as u64))?;
        if let Ok(f) = fit(series, &full) {
            anchors.push(f.params);
        }
    }
    let config = fit_config(model, n, basis, first, rng::child_seed(seed, CELL_STREAM + 16 * n as u64))?
        .with_restarts(cv.restarts.max(1));
    Ok(CvSetup { config, grid, anchors })
}

fn cv_info(cv: &CvConfig, report: &CvReport) -> CvInfo {
    CvInfo {
        partitions: cv.partitions,
        calibration_fraction: cv.calibration_fraction,
        selected: report.selected.clone(),
        selected_score: report.selected_score,
        trajectory: report.trajectory.clone(),
        fits: report.fits,
        cache_hits: report.cache_hits,
        extensions: report.extensions.clone(),
        candidates: report
            .candidates
            .iter()
            .map(|c| CvCandidate { lambda: c.lambda.clone(), mean: c.mean, failed_partitions: c.failed_partitions })
            .collect(),
    }
}

fn fmt_row(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join("  ")
}

pub fn fit_report(file: &ModelFile, model: &HmmModel) -> Result<String> {
    let mut s = String::new();
    let info = file.fit.as_ref();
    writeln!(s, "states: {}", file.states)?;
    if let Some(i) = info {
        writeln!(s, "observations: {} ({} missing)", i.n_obs, i.n_missing)?;
    }
    if let Some(l) = &file.lambda {
        writeln!(s, "lambda: {}", l.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", "))?;
    }
    if let Some(i) = info {
        writeln!(s, "log-likelihood: {:.6}", i.loglik)?;
        writeln!(s, "penalized log-likelihood: {:.6}", i.penalized_loglik)?;
        if let (Some(aic), Some(bic)) = (i.aic, i.bic) {
            writeln!(s, "parameters: {}  AIC: {aic:.4}  BIC: {bic:.4}", i.num_params)?;
        }
        writeln!(s, "restarts converged: {}/{}", i.converged_restarts, i.restarts)?;
    }
    writeln!(s, "transition matrix:")?;
    for row in model.gamma().rows() {
        writeln!(s, "  {}", fmt_row(&row))?;
    }
    writeln!(s, "stationary distribution: {}", fmt_row(&reported_stationary(model)?))?;
    let means: Vec<f64> = model.emissions().iter().map(|e| e.mean()).collect();
    writeln!(s, "state means: {}", fmt_row(&means))?;
    Ok(s)
}

pub fn cmd_fit(ctx: &Context, data_args: &DataArgs, out: &Path) -> Result<()> {
    let m = &ctx.config.model;
    m.validate()?;
    let data = ctx.load_data(data_args, None)?;
    let series = &data.values;
    let basis = basis_for(m, &data)?;
    let n = m.states;

    let (lambda, cv) = match m.lambda_values()? {
        Some(l) => (l, None),
        None if m.family != Family::Spline => (vec![0.0; n], None),
        None => {
            let cvc = &ctx.config.cv;
            cvc.validate()?;
            let grid = match &cvc.grid {
                Some(g) if g.len() != n => bail!("cv.grid: expected {n} candidate lists, got {}", g.len()),
                Some(g) => SmoothingGrid::new(g.clone())?,
                None => SmoothingGrid::new(vec![cvc.candidates.clone(); n])?,
            };
            let start = match &cvc.start {
                StartConfig::Keyword(_) => WalkStart::Diagonal,
                StartConfig::Point(p) => {
                    if p.len() != n {
                        bail!("cv.start: expected {n} values, got {}", p.len());
                    }
                    let idx = p
                        .iter()
                        .zip(grid.candidates())
                        .enumerate()
                        .map(|(i, (v, c))| {
                            c.iter().position(|x| x == v).with_context(|| format!("cv.start: {v} is not a candidate for state {}", i + 1))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    WalkStart::Point(idx)
                }
            };
            let parts = partitions(cvc, series.len(), ctx.seed)?;
            let setup = cv_setup(m, cvc, grid, series, basis.as_ref(), ctx.seed)?;
            let mut scorer = FitScorer::new(series, &parts, &setup.config)?;
            scorer.warm_restarts = cvc.warm_restarts;
            scorer.anchors = setup.anchors;
            let report = grid_walk(&setup.grid, &scorer, &walk_settings(cvc, start))?;
            eprintln!(
                "cross-validation: selected {:?} (score {:.4}) after {} steps, {} fits",
                report.selected,
                report.selected_score,
                report.trajectory.len(),
                report.fits
            );
            (report.selected.clone(), Some(cv_info(cvc, &report)))
        }
    };

    let config = fit_config(m, n, basis.as_ref(), lambda.clone(), rng::child_seed(ctx.seed, FIT_STREAM))?;
    let result = fit(series, &config)?;
    if result.has_empty_states() {
        eprintln!("warning: states {:?} are never visited by the decoded path", result.empty_states);
    }
    let file = model_file_for(&result, &config, &data, cv, ctx.seed)?;
    file.save(out)?;
    print!("{}", fit_report(&file, &result.model)?);
    Ok(())
}

fn model_file_for(
    result: &FitResult,
    config: &FitConfig<f64>,
    data: &DataSet,
    cv: Option<CvInfo>,
    seed: u64,
) -> Result<ModelFile> {
    let mut file = ModelFile::from_model(&result.model)?;
    let spline = file.basis.is_some();
    let n_obs = data.n_observed();
    let num_params = config.spec.num_params();
    let ic = (!spline).then(|| information_criteria(result.loglik, num_params, n_obs));
    file.penalty_order = spline.then_some(config.penalty.order);
    file.lambda = spline.then(|| result.lambda.clone());
    file.data = Some(source_of(data));
    file.fit = Some(FitInfo {
        n_obs,
        n_missing: data.len() - n_obs,
        loglik: result.loglik,
        penalized_loglik: result.penalized_loglik,
        num_params,
        aic: ic.map(|c| c.aic),
        bic: ic.map(|c| c.bic),
        iterations: result.iterations,
        restart: result.restart,
        restarts: result.restarts.len(),
        converged_restarts: result.restarts.iter().filter(|r| r.termination.converged()).count(),
        empty_states: result.empty_states.clone(),
        seed,
    });
    file.cv = cv;
    Ok(file)
}

/// Plot grid covering every state's effective support.
fn density_grid(model: &HmmModel, points: usize) -> Vec<f64> {
    let (lo, hi) = model
        .emissions()
        .iter()
        .map(|e| e.effective_support())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (l, h)| (a.min(l), b.max(h)));
    let step = (hi - lo) / (points - 1) as f64;
    (0..points).map(|i| lo + step * i as f64).collect()
}

#[derive(Serialize)]
struct JbReport {
    statistic: f64,
    p_value: f64,
    skewness: f64,
    excess_kurtosis: f64,
}

#[derive(Serialize)]
struct Diagnostics {
    length: usize,
    observed: usize,
    loglik: f64,
    viterbi_log_prob: f64,
    decoded_state_counts: Vec<usize>,
    jarque_bera: JbReport,
    max_lag: usize,
}

pub fn cmd_diagnose(ctx: &Context, model_path: &Path, data_args: &DataArgs, out_dir: &Path) -> Result<()> {
    let file = ModelFile::load(model_path)?;
    let model = file.to_model()?;
    let data = ctx.load_data(data_args, file.data.as_ref())?;
    let series = &data.values;
    let d = &ctx.config.diagnose;
    if d.grid_points < 2 {
        bail!("diagnose.grid_points: must be at least 2");
    }

    let path = viterbi(&model, series)?;
    let res = pseudo_residuals(&model, series)?;
    let jb = jarque_bera(&res.observed())?;
    let loglik = nphmm::hmm::log_likelihood(&model, series)?;

    write_csv(
        &out_dir.join("residuals.csv"),
        &["t", "x", "uniform", "residual"],
        (0..series.len()).map(|t| vec![(t + 1).into(), series[t].into(), res.uniform[t].into(), res.residuals[t].into()]),
    )?;
    write_csv(
        &out_dir.join("viterbi.csv"),
        &["t", "x", "state"],
        (0..series.len()).map(|t| vec![(t + 1).into(), series[t].into(), (path.states[t] + 1).into()]),
    )?;

    let observed: Vec<f64> = series.iter().flatten().copied().collect();
    let max_lag = d.max_lag.min(observed.len().saturating_sub(1));
    let sample = stats::sample_acf(&observed, max_lag);
    let implied = model_acf(&model, max_lag)?;
    write_csv(
        &out_dir.join("acf.csv"),
        &["lag", "sample", "model"],
        (0..=max_lag).map(|l| vec![l.into(), sample[l].into(), implied[l].into()]),
    )?;

    let weights = marginal_weights(&model)?;
    let grid = density_grid(&model, d.grid_points);
    let mut header = vec!["x".to_string(), "marginal".to_string()];
    header.extend((1..=model.n_states()).map(|i| format!("state_{i}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(
        &out_dir.join("density.csv"),
        &header,
        grid.iter().map(|&x| {
            let parts: Vec<f64> = model.emissions().iter().zip(&weights).map(|(e, w)| w * e.pdf(x)).collect();
            let mut row: Vec<Cell> = vec![x.into(), parts.iter().sum::<f64>().into()];
            row.extend(parts.into_iter().map(Cell::from));
            row
        }),
    )?;

    let mut counts = vec![0; model.n_states()];
    for &s in &path.states {
        counts[s] += 1;
    }
    let diag = Diagnostics {
        length: series.len(),
        observed: observed.len(),
        loglik,
        viterbi_log_prob: path.log_prob,
        decoded_state_counts: counts,
        jarque_bera: JbReport {
            statistic: jb.statistic,
            p_value: jb.p_value,
            skewness: jb.skewness,
            excess_kurtosis: jb.excess_kurtosis,
        },
        max_lag,
    };
    write_json(&out_dir.join("diagnostics.json"), &diag)?;
    println!("Jarque-Bera statistic {:.4}, p-value {:.4}", jb.statistic, jb.p_value);
    println!("wrote diagnostics to {}", out_dir.display());
    Ok(())
}

#[derive(Serialize)]
struct BandSummary {
    state: usize,
    kind: BandKind,
    level: f64,
    inflation: Option<f64>,
    coverage: f64,
    file: String,
}

#[derive(Serialize)]
struct BootstrapSummary {
    replicates: usize,
    converged: usize,
    failures: Vec<(usize, String)>,
    length: usize,
    level: f64,
    seed: u64,
    bands: Vec<BandSummary>,
}

pub fn cmd_bootstrap(ctx: &Context, model_path: &Path, data_args: &DataArgs, out_dir: &Path) -> Result<()> {
    let b = &ctx.config.bootstrap;
    b.validate()?;
    let file = ModelFile::load(model_path)?;
    let model = file.to_model()?;
    let len = match b.length {
        Some(l) => l,
        None => ctx.load_data(data_args, file.data.as_ref())?.len(),
    };
    let n = model.n_states();
    let penalty = match (&file.lambda, file.penalty_order) {
        (Some(l), Some(o)) => PenaltySpec::new(o, l.clone())?,
        _ => PenaltySpec::unpenalized(n),
    };
    let seed = rng::child_seed(ctx.seed, BOOTSTRAP_STREAM);
    let config = FitConfig::new(ModelSpec::of_model(&model), penalty).with_restarts(b.restarts).with_seed(seed);
    let ens = bootstrap(&model, len, b.replicates, &config, seed)?;
    if ens.n_failed() > 0 {
        eprintln!("warning: {} of {} replicates failed to fit", ens.n_failed(), b.replicates);
    }

    let tpm = tpm_intervals(&ens, b.level)?;
    write_csv(
        &out_dir.join("tpm_intervals.csv"),
        &["from", "to", "estimate", "lower", "upper", "se"],
        (0..n * n).map(|k| {
            vec![(k / n + 1).into(), (k % n + 1).into(), tpm.estimate[k].into(), tpm.lower[k].into(), tpm.upper[k].into(), tpm.se[k].into()]
        }),
    )?;

    let mut bands = Vec::new();
    for state in 0..n {
        let grid = nphmm::inference::default_band_grid(&model, state, b.grid_points);
        for kind in [BandKind::Pointwise, BandKind::Simultaneous] {
            let band = density_band(&ens, state, &grid, b.level, kind)?;
            let name = format!(
                "band_state{}_{}.csv",
                state + 1,
                if kind == BandKind::Pointwise { "pointwise" } else { "simultaneous" }
            );
            write_csv(
                &out_dir.join(&name),
                &["x", "lower", "upper"],
                (0..band.grid.len()).map(|i| vec![band.grid[i].into(), band.lower[i].into(), band.upper[i].into()]),
            )?;
            bands.push(BandSummary {
                state: state + 1,
                kind,
                level: band.level,
                inflation: band.inflation,
                coverage: band.coverage,
                file: name,
            });
        }
    }
    write_json(
        &out_dir.join("bands.json"),
        &BootstrapSummary {
            replicates: b.replicates,
            converged: ens.n_converged(),
            failures: ens.failures.clone(),
            length: len,
            level: b.level,
            seed,
            bands,
        },
    )?;
    println!("transition probabilities ({}% intervals, {} replicates):", b.level * 100.0, ens.n_converged());
    for k in 0..n * n {
        println!(
            "  gamma[{},{}] = {:.4}  [{:.4}, {:.4}]  se {:.4}",
            k / n + 1,
            k % n + 1,
            tpm.estimate[k],
            tpm.lower[k],
            tpm.upper[k],
            tpm.se[k]
        );
    }
    println!("wrote bootstrap output to {}", out_dir.display());
    Ok(())
}

#[derive(Serialize)]
struct StateRank {
    states: usize,
    score: f64,
    selected_lambda: Vec<f64>,
    fits: usize,
}

#[derive(Serialize)]
struct SelectReport {
    chosen: usize,
    partitions: usize,
    calibration_fraction: f64,
    ranking: Vec<StateRank>,
}

pub fn cmd_select_states(ctx: &Context, data_args: &DataArgs, candidates: Option<Vec<usize>>, out: Option<&Path>) -> Result<()> {
    let m = &ctx.config.model;
    let cvc = &ctx.config.cv;
    cvc.validate()?;
    let candidates = candidates.unwrap_or_else(|| ctx.config.select.candidates.clone());
    if candidates.is_empty() || candidates.contains(&0) {
        bail!("select.candidates: need at least one positive state count");
    }
    if m.family == Family::Spline && m.k < 2 {
        bail!("model.k: must be at least 2");
    }
    if m.restarts == 0 {
        bail!("model.restarts: must be at least 1");
    }
    let data = ctx.load_data(data_args, None)?;
    let series = &data.values;
    let basis = basis_for(m, &data)?;
    let parts = partitions(cvc, series.len(), ctx.seed)?;
    let sel = select_num_states(series, &candidates, &parts, &walk_settings(cvc, WalkStart::Diagonal), |n| {
        let grid = match m.family {
            Family::Spline => SmoothingGrid::new(vec![cvc.candidates.clone(); n])?,
            _ => SmoothingGrid::new(vec![vec![0.0]; n])?,
        };
        let spec = ModelConfig { states: n, ..m.clone() };
        cv_setup(&spec, cvc, grid, series, basis.as_ref(), ctx.seed).map_err(|e| match e.downcast::<nphmm::Error>() {
            Ok(e) => e,
            Err(e) => nphmm::Error::InvalidArgument(e.to_string()),
        })
    })?;
    let ranking: Vec<StateRank> = sel
        .ranking()
        .into_iter()
        .map(|s| StateRank { states: s.states, score: s.score, selected_lambda: s.report.selected.clone(), fits: s.report.fits })
        .collect();
    println!("rank  states  mean validation log-likelihood  lambda");
    for (i, r) in ranking.iter().enumerate() {
        println!("{:>4}  {:>6}  {:>30.6}  {:?}", i + 1, r.states, r.score, r.selected_lambda);
    }
    println!("selected: {} states", sel.chosen);
    if let Some(out) = out {
        write_json(
            out,
            &SelectReport { chosen: sel.chosen, partitions: cvc.partitions, calibration_fraction: cvc.calibration_fraction, ranking },
        )?;
    }
    Ok(())
}

pub fn scenario(ctx: &Context, runs: Option<usize>) -> Result<sim::SimScenario<f64>> {
    let c = &ctx.config.scenario;
    let mut sc = sim::default_scenario::<f64>();
    if c.persistence.is_some() || c.shift.is_some() {
        sc.truth = sim::truth_model(c.persistence.unwrap_or(0.9), c.shift.unwrap_or(3.0))
            .context("scenario.persistence: must lie in (0, 1)")?;
    }
    macro_rules! take {
        ($($f:ident => $g:ident),*) => { $( if let Some(v) = c.$f.clone() { sc.$g = v; } )* };
    }
    take!(length => length, runs => runs, k => k, lambda_candidates => lambda_candidates, partitions => partitions,
        calibration_fraction => calibration_fraction, replicates => bootstrap_replicates, level => level,
        competitors => competitors, state_candidates => state_candidates, restarts => restarts,
        cv_restarts => cv_restarts, cv_warm_restarts => cv_warm_restarts, bootstrap_restarts => bootstrap_restarts);
    if let Some(r) = runs {
        sc.runs = r;
    }
    sc.seed = ctx.seed;
    sc.validate()?;
    if sc.competitors.is_empty() {
        bail!("scenario.competitors: need at least one competitor");
    }
    Ok(sc)
}

pub fn cmd_simstudy(ctx: &Context, runs: Option<usize>, out_dir: &Path) -> Result<()> {
    let sc = scenario(ctx, runs)?;
    let report = sim::run_study(&sc)?;
    let table = report.table();
    write_json(&out_dir.join("report.json"), &report)?;
    write_text(&out_dir.join("report.txt"), &table)?;
    print!("{table}");
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// Three-state spline model on a log absolute speed scale.
    Dive,
    /// The two-state truth of the simulation study.
    Study,
}

pub fn cmd_simulate(ctx: &Context, preset: Option<Preset>, model_path: Option<&Path>, length: usize, out: &Path, model_out: Option<&Path>) -> Result<()> {
    if length < 2 {
        bail!("--length: must be at least 2");
    }
    let model = match (preset, model_path) {
        (Some(_), Some(_)) => bail!("pass either --preset or --model, not both"),
        (_, Some(p)) => ModelFile::load(p)?.to_model()?,
        (Some(Preset::Study), None) => sim::truth_model(0.9, 3.0)?,
        (Some(Preset::Dive) | None, None) => sim::dive_model()?,
    };
    let sim = simulate_series(&model, length, &mut rng::seeded(ctx.seed));
    write_csv(
        out,
        &["t", "value", "state"],
        (0..length).map(|t| vec![(t + 1).into(), sim.observations[t].into(), (sim.states[t] + 1).into()]),
    )?;
    if let Some(p) = model_out {
        ModelFile::from_model(&model)?.save(p)?;
    }
    println!("wrote {length} observations to {}", out.display());
    Ok(())
}
