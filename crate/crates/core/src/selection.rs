//! Cross-validated choice of smoothing parameters and of the number of states.
//!
//! A partition splits the time indices into a calibration and a validation
//! set. The model is fitted with the validation values treated as missing and
//! scored by the log-likelihood of the series with the calibration values
//! treated as missing. Smoothing vectors are searched by a greedy walk over a
//! grid, moving one step in one coordinate at a time.

use std::collections::HashMap;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::estimation::{fit_with_starts, FitConfig};
use crate::hmm::{self, Observation};
use crate::scalar::Real;

/// Calibration/validation split of `0..len`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    len: usize,
    validation: Vec<usize>,
    unmasked: bool,
}

impl Partition {
    /// Partition whose validation set is `validation`; the rest is calibration.
    pub fn new(len: usize, mut validation: Vec<usize>) -> Result<Self> {
        validation.sort_unstable();
        validation.dedup();
        if validation.is_empty() || validation.len() >= len {
            return invalid(format!("validation set of {} out of {len} indices", validation.len()));
        }
        if validation.last().is_some_and(|&v| v >= len) {
            return invalid("validation index out of range");
        }
        Ok(Self { len, validation, unmasked: false })
    }

    /// Degenerate split that masks nothing in either stage, so fitting and
    /// scoring both see the full series.
    pub fn unmasked(len: usize) -> Self {
        Self { len, validation: Vec::new(), unmasked: true }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn validation(&self) -> &[usize] {
        &self.validation
    }

    pub fn calibration(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.len - self.validation.len());
        let mut v = self.validation.iter().peekable();
        for t in 0..self.len {
            if v.peek() == Some(&&t) {
                v.next();
            } else {
                out.push(t);
            }
        }
        out
    }

    /// Series seen when fitting: validation values missing.
    pub fn fit_series<F: Copy>(&self, series: &[Observation<F>]) -> Vec<Observation<F>> {
        let mut out = series.to_vec();
        for &t in &self.validation {
            out[t] = None;
        }
        out
    }

    /// Series seen when scoring: calibration values missing.
    pub fn score_series<F: Copy>(&self, series: &[Observation<F>]) -> Vec<Observation<F>> {
        if self.unmasked {
            return series.to_vec();
        }
        let mut out = vec![None; series.len()];
        for &t in &self.validation {
            out[t] = series[t];
        }
        out
    }
}

/// `c` random partitions of `0..len`, each with `round(len (1 - fraction))`
/// validation indices.
pub fn make_partitions<F: Real, R: Rng + ?Sized>(
    len: usize,
    c: usize,
    calibration_fraction: F,
    rng: &mut R,
) -> Result<Vec<Partition>> {
    if c == 0 {
        return invalid("at least one partition is required");
    }
    if !(calibration_fraction > F::zero() && calibration_fraction < F::one()) {
        return invalid("calibration fraction must lie in (0, 1)");
    }
    let v = (F::from_count(len) * (F::one() - calibration_fraction)).round().to_usize().unwrap_or(0);
    if v == 0 || v >= len {
        return invalid(format!("validation set would have {v} of {len} observations"));
    }
    (0..c).map(|_| Partition::new(len, index::sample(rng, len, v).into_vec())).collect()
}

/// Candidate smoothing parameters per state; the grid is their product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingGrid<F> {
    candidates: Vec<Vec<F>>,
}

impl<F: Real> SmoothingGrid<F> {
    pub fn new(candidates: Vec<Vec<F>>) -> Result<Self> {
        if candidates.is_empty() || candidates.iter().any(Vec::is_empty) {
            return invalid("every state needs at least one candidate");
        }
        for c in &candidates {
            if c.iter().any(|v| !(*v >= F::zero()) || !v.is_finite()) {
                return invalid("candidates must be finite and non-negative");
            }
            if c.windows(2).any(|w| w[0] >= w[1]) {
                return invalid("candidates must be strictly increasing");
            }
        }
        Ok(Self { candidates })
    }

    pub fn dims(&self) -> usize {
        self.candidates.len()
    }

    pub fn candidates(&self) -> &[Vec<F>] {
        &self.candidates
    }

    pub fn point(&self, idx: &[usize]) -> Vec<F> {
        idx.iter().zip(&self.candidates).map(|(&i, c)| c[i]).collect()
    }

    pub fn num_points(&self) -> usize {
        self.candidates.iter().map(Vec::len).product()
    }
}

/// Outcome of fitting and scoring one smoothing vector on one partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell<F> {
    pub score: F,
    /// Fitted working vector, offered as a warm start to neighbouring cells.
    pub params: Option<Vec<F>>,
}

/// Scores a smoothing vector on a partition.
pub trait CellScorer<F: Real>: Sync {
    fn n_partitions(&self) -> usize;
    fn score(&self, lambda: &[F], partition: usize, warm: Option<&[F]>) -> Result<Cell<F>>;
}

/// Scorer that refits the model on each calibration set.
///
/// Every cell starts from the `anchors` (typically the working vector of a
/// full-data fit). Cold cells add `config.restarts` random starts; cells with
/// a warm start add `warm_restarts` random starts to it.
pub struct FitScorer<'a, F: Real> {
    config: &'a FitConfig<F>,
    pub warm_restarts: usize,
    pub anchors: Vec<Vec<F>>,
    fit_series: Vec<Vec<Observation<F>>>,
    score_series: Vec<Vec<Observation<F>>>,
}

impl<'a, F: Real> FitScorer<'a, F> {
    pub fn new(series: &[Observation<F>], partitions: &[Partition], config: &'a FitConfig<F>) -> Result<Self> {
        if partitions.is_empty() {
            return invalid("no partitions");
        }
        if partitions.iter().any(|p| p.len() != series.len()) {
            return invalid("partition length does not match the series");
        }
        Ok(Self {
            config,
            warm_restarts: config.restarts,
            anchors: Vec::new(),
            fit_series: partitions.iter().map(|p| p.fit_series(series)).collect(),
            score_series: partitions.iter().map(|p| p.score_series(series)).collect(),
        })
    }
}

impl<F: Real> CellScorer<F> for FitScorer<'_, F> {
    fn n_partitions(&self) -> usize {
        self.fit_series.len()
    }

    fn score(&self, lambda: &[F], partition: usize, warm: Option<&[F]>) -> Result<Cell<F>> {
        let mut cfg = self.config.clone().with_lambda(lambda.to_vec());
        let mut starts: Vec<Vec<F>> = warm.map(|w| vec![w.to_vec()]).unwrap_or_default();
        if !starts.is_empty() {
            cfg.restarts = self.warm_restarts;
        }
        starts.extend(self.anchors.iter().cloned());
        let fit = fit_with_starts(&self.fit_series[partition], &cfg, &starts)?;
        let score = hmm::log_likelihood(&fit.model, &self.score_series[partition])?;
        Ok(Cell { score, params: Some(fit.params) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvScore<F> {
    /// Mean over the partitions that could be scored.
    pub mean: F,
    /// Per partition score, `None` where fitting or scoring failed.
    pub scores: Vec<Option<F>>,
    pub failures: Vec<(usize, String)>,
}

fn summarize_cells<F: Real>(cells: Vec<(usize, Result<F>)>) -> CvScore<F> {
    let mut scores = Vec::with_capacity(cells.len());
    let mut failures = Vec::new();
    for (p, r) in cells {
        match r {
            Ok(s) => scores.push(Some(s)),
            Err(e) => {
                failures.push((p, e.to_string()));
                scores.push(None);
            }
        }
    }
    let ok: Vec<F> = scores.iter().flatten().copied().collect();
    let mean = if ok.is_empty() { F::neg_infinity() } else { crate::stats::mean(&ok) };
    CvScore { mean, scores, failures }
}

/// Mean validation log-likelihood of `lambda` over `partitions`.
pub fn cv_score<F: Real>(
    series: &[Observation<F>],
    lambda: &[F],
    partitions: &[Partition],
    config: &FitConfig<F>,
) -> Result<CvScore<F>> {
    let scorer = FitScorer::new(series, partitions, config)?;
    let cells = (0..partitions.len())
        .into_par_iter()
        .map(|p| (p, scorer.score(lambda, p, None).map(|c| c.score)))
        .collect();
    Ok(summarize_cells(cells))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WalkStart {
    /// Scan the shared-value diagonal `(c_j, ..., c_j)` and walk from its best point.
    Diagonal,
    /// Start from the given index tuple.
    Point(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkSettings {
    pub start: WalkStart,
    /// Extend a coordinate's candidates by doubling (or halving) when the
    /// walk sits on its boundary.
    pub extend_boundary: bool,
    /// Maximum number of extensions per coordinate and direction.
    pub max_extensions: usize,
    /// Random restarts for warm-started cells when models are refitted;
    /// `None` keeps the configured number.
    pub warm_restarts: Option<usize>,
}

impl Default for WalkSettings {
    fn default() -> Self {
        Self { start: WalkStart::Diagonal, extend_boundary: false, max_extensions: 0, warm_restarts: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord<F> {
    pub lambda: Vec<F>,
    pub partition: usize,
    pub score: Option<F>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore<F> {
    pub lambda: Vec<F>,
    pub mean: F,
    pub failed_partitions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport<F> {
    /// Every fitted cell, in evaluation order.
    pub cells: Vec<CellRecord<F>>,
    /// Every evaluated smoothing vector with its mean score, in evaluation order.
    pub candidates: Vec<CandidateScore<F>>,
    pub selected: Vec<F>,
    pub selected_score: F,
    /// Points the walk moved through, starting point first.
    pub trajectory: Vec<Vec<F>>,
    /// Number of cells fitted.
    pub fits: usize,
    /// Number of cell requests answered from the cache.
    pub cache_hits: usize,
    /// Grid after any boundary extensions.
    pub grid: SmoothingGrid<F>,
    /// Human-readable log of boundary extensions.
    pub extensions: Vec<String>,
}

type Key = (Vec<u64>, usize);

fn key<F: Real>(lambda: &[F], p: usize) -> Key {
    (lambda.iter().map(|v| v.f64().to_bits()).collect(), p)
}

struct Walker<'s, F: Real, S: CellScorer<F> + ?Sized> {
    scorer: &'s S,
    cache: HashMap<Key, std::result::Result<Cell<F>, String>>,
    cells: Vec<CellRecord<F>>,
    candidates: Vec<CandidateScore<F>>,
    means: HashMap<Vec<u64>, F>,
    fits: usize,
    requests: usize,
}

impl<F: Real, S: CellScorer<F> + ?Sized> Walker<'_, F, S> {
    fn warm(&self, incumbent: Option<&[F]>, p: usize) -> Option<Vec<F>> {
        let inc = incumbent?;
        match self.cache.get(&key(inc, p)) {
            Some(Ok(c)) => c.params.clone(),
            _ => None,
        }
    }

    /// Scores `points` on all partitions, fitting only cells not seen before.
    fn evaluate(&mut self, points: &[Vec<F>], incumbent: Option<&[F]>) {
        let np = self.scorer.n_partitions();
        let mut jobs: Vec<(Vec<F>, usize, Option<Vec<F>>)> = Vec::new();
        for pt in points {
            for p in 0..np {
                self.requests += 1;
                let k = key(pt, p);
                if self.cache.contains_key(&k) || jobs.iter().any(|(l, q, _)| *q == p && key(l, p) == k) {
                    continue;
                }
                jobs.push((pt.clone(), p, self.warm(incumbent, p)));
            }
        }
        let scorer = self.scorer;
        let results: Vec<_> =
            jobs.par_iter().map(|(l, p, w)| scorer.score(l, *p, w.as_deref()).map_err(|e| e.to_string())).collect();
        for ((l, p, _), r) in jobs.into_iter().zip(results) {
            self.fits += 1;
            self.cells.push(CellRecord {
                lambda: l.clone(),
                partition: p,
                score: r.as_ref().ok().map(|c| c.score),
                error: r.as_ref().err().cloned(),
            });
            self.cache.insert(key(&l, p), r);
        }
        for pt in points {
            let k = key(pt, 0).0;
            if self.means.contains_key(&k) {
                continue;
            }
            let cells = (0..np)
                .map(|p| (p, self.cache[&key(pt, p)].clone().map(|c| c.score).map_err(crate::Error::Degenerate)))
                .collect();
            let s = summarize_cells(cells);
            self.means.insert(k, s.mean);
            self.candidates.push(CandidateScore { lambda: pt.clone(), mean: s.mean, failed_partitions: s.failures.len() });
        }
    }

    fn mean(&self, pt: &[F]) -> F {
        self.means[&key(pt, 0).0]
    }
}

/// Greedy search of the grid for the smoothing vector with the highest mean
/// validation score.
///
/// From the current point, all points one step away in exactly one coordinate
/// are scored and the walk moves to the best of them if it improves on the
/// current point; otherwise it stops. Each (smoothing vector, partition) cell
/// is fitted at most once, and fits of a new point are warm-started from the
/// fits of the current point on the same partition.
pub fn grid_walk<F: Real, S: CellScorer<F> + ?Sized>(
    grid: &SmoothingGrid<F>,
    scorer: &S,
    settings: &WalkSettings,
) -> Result<CvReport<F>> {
    if scorer.n_partitions() == 0 {
        return invalid("no partitions");
    }
    let mut grid = grid.clone();
    let dims = grid.dims();
    let mut w = Walker {
        scorer,
        cache: HashMap::new(),
        cells: Vec::new(),
        candidates: Vec::new(),
        means: HashMap::new(),
        fits: 0,
        requests: 0,
    };

    let mut current: Vec<usize> = match &settings.start {
        WalkStart::Point(idx) => {
            if idx.len() != dims || idx.iter().zip(grid.candidates()).any(|(&i, c)| i >= c.len()) {
                return invalid("start point is not on the grid");
            }
            let pt = grid.point(idx);
            w.evaluate(&[pt], None);
            idx.clone()
        }
        WalkStart::Diagonal => {
            let len = grid.candidates().iter().map(Vec::len).min().unwrap_or(0);
            let mut best = 0;
            let mut prev: Option<Vec<F>> = None;
            for j in 0..len {
                let pt = grid.point(&vec![j; dims]);
                w.evaluate(std::slice::from_ref(&pt), prev.as_deref());
                if w.mean(&pt) > w.mean(&grid.point(&vec![best; dims])) {
                    best = j;
                }
                prev = Some(pt);
            }
            vec![best; dims]
        }
    };
    let mut trajectory = vec![grid.point(&current)];
    let mut extensions = Vec::new();
    let mut ext_count = vec![[0usize; 2]; dims];

    loop {
        if settings.extend_boundary {
            for i in 0..dims {
                let c = &grid.candidates[i];
                if current[i] + 1 == c.len() && ext_count[i][1] < settings.max_extensions {
                    let v = c[c.len() - 1] * F::lit(2.0);
                    let v = if v > F::zero() { v } else { F::one() };
                    grid.candidates[i].push(v);
                    ext_count[i][1] += 1;
                    extensions.push(format!("state {}: added {v} above", i + 1));
                }
                let c = &grid.candidates[i];
                if current[i] == 0 && c[0] > F::zero() && ext_count[i][0] < settings.max_extensions {
                    let v = c[0] / F::lit(2.0);
                    grid.candidates[i].insert(0, v);
                    current[i] += 1;
                    ext_count[i][0] += 1;
                    extensions.push(format!("state {}: added {v} below", i + 1));
                }
            }
        }
        let here = grid.point(&current);
        let mut neighbours: Vec<Vec<usize>> = Vec::new();
        for i in 0..dims {
            if current[i] > 0 {
                let mut n = current.clone();
                n[i] -= 1;
                neighbours.push(n);
            }
            if current[i] + 1 < grid.candidates[i].len() {
                let mut n = current.clone();
                n[i] += 1;
                neighbours.push(n);
            }
        }
        let points: Vec<Vec<F>> = neighbours.iter().map(|n| grid.point(n)).collect();
        w.evaluate(&points, Some(&here));
        let mut best: Option<usize> = None;
        let mut best_score = w.mean(&here);
        for (k, pt) in points.iter().enumerate() {
            let s = w.mean(pt);
            if s > best_score {
                best = Some(k);
                best_score = s;
            }
        }
        match best {
            Some(k) => {
                current = neighbours[k].clone();
                trajectory.push(points[k].clone());
            }
            None => break,
        }
    }

    let selected = grid.point(&current);
    let selected_score = w.mean(&selected);
    Ok(CvReport {
        cells: w.cells,
        candidates: w.candidates,
        selected,
        selected_score,
        trajectory,
        fits: w.fits,
        cache_hits: w.requests - w.fits,
        grid,
        extensions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateScore<F> {
    pub states: usize,
    pub score: F,
    pub report: CvReport<F>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSelection<F> {
    pub chosen: usize,
    pub per_state: Vec<StateScore<F>>,
}

impl<F: Real> StateSelection<F> {
    /// Candidates ordered from the highest to the lowest score.
    pub fn ranking(&self) -> Vec<&StateScore<F>> {
        let mut r: Vec<&StateScore<F>> = self.per_state.iter().collect();
        r.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(std::cmp::Ordering::Equal));
        r
    }
}

/// Cross-validation setup for one number of states.
#[derive(Debug, Clone, PartialEq)]
pub struct CvSetup<F> {
    pub config: FitConfig<F>,
    pub grid: SmoothingGrid<F>,
    /// Starting points offered to every cell.
    pub anchors: Vec<Vec<F>>,
}

/// Chooses the number of states with the highest cross-validated score.
///
/// `setup(n)` supplies the fit configuration and smoothing grid for `n`
/// states; every candidate is scored on the same partitions. Ties go to the
/// smaller number of states.
pub fn select_num_states<F: Real>(
    series: &[Observation<F>],
    candidates: &[usize],
    partitions: &[Partition],
    settings: &WalkSettings,
    setup: impl Fn(usize) -> Result<CvSetup<F>>,
) -> Result<StateSelection<F>> {
    if candidates.is_empty() {
        return invalid("no candidate state counts");
    }
    let mut per_state = Vec::with_capacity(candidates.len());
    for &n in candidates {
        let CvSetup { config: cfg, grid, anchors } = setup(n)?;
        if cfg.spec.n_states() != n || grid.dims() != n {
            return invalid(format!("setup for {n} states returned a mismatched configuration"));
        }
        let mut scorer = FitScorer::new(series, partitions, &cfg)?;
        scorer.anchors = anchors;
        if let Some(w) = settings.warm_restarts {
            scorer.warm_restarts = w;
        }
        let report = grid_walk(&grid, &scorer, settings)?;
        per_state.push(StateScore { states: n, score: report.selected_score, report });
    }
    let mut chosen = 0;
    for (i, s) in per_state.iter().enumerate() {
        let better = s.score > per_state[chosen].score
            || (s.score == per_state[chosen].score && s.states < per_state[chosen].states);
        if better {
            chosen = i;
        }
    }
    Ok(StateSelection { chosen: per_state[chosen].states, per_state })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    struct Bowl {
        peak: Vec<f64>,
        parts: usize,
    }

    impl CellScorer<f64> for Bowl {
        fn n_partitions(&self) -> usize {
            self.parts
        }
        fn score(&self, lambda: &[f64], p: usize, _: Option<&[f64]>) -> Result<Cell<f64>> {
            let d: f64 = lambda.iter().zip(&self.peak).map(|(l, c)| (l.log2() - c.log2()).powi(2)).sum();
            Ok(Cell { score: -d + 0.01 * p as f64, params: None })
        }
    }

    fn lambdas() -> Vec<f64> {
        (8..=14).map(|e| 2f64.powi(e)).collect()
    }

    #[test]
    fn partitions_have_the_right_sizes() {
        let ps = make_partitions(800, 10, 0.9, &mut rng::seeded(1)).unwrap();
        assert_eq!(ps.len(), 10);
        for p in &ps {
            assert_eq!(p.validation().len(), 80);
            assert_eq!(p.calibration().len(), 720);
        }
        assert_ne!(ps[0], ps[1]);
        assert_eq!(ps, make_partitions(800, 10, 0.9, &mut rng::seeded(1)).unwrap());
        assert!(make_partitions(10, 1, 0.99, &mut rng::seeded(1)).is_err());
    }

    #[test]
    fn grid_rejects_bad_candidates() {
        assert!(SmoothingGrid::new(vec![vec![1.0, 1.0]]).is_err());
        assert!(SmoothingGrid::new(vec![vec![-1.0, 1.0]]).is_err());
        assert!(SmoothingGrid::<f64>::new(vec![vec![]]).is_err());
    }

    #[test]
    fn walk_climbs_a_one_dimensional_bowl() {
        let grid = SmoothingGrid::new(vec![lambdas()]).unwrap();
        let bowl = Bowl { peak: vec![4096.0], parts: 3 };
        let s = WalkSettings { start: WalkStart::Point(vec![0]), ..Default::default() };
        let r = grid_walk(&grid, &bowl, &s).unwrap();
        assert_eq!(r.selected, vec![4096.0]);
        let path: Vec<f64> = r.trajectory.iter().map(|p| p[0]).collect();
        assert_eq!(path, vec![256.0, 512.0, 1024.0, 2048.0, 4096.0]);
        assert_eq!(r.fits, r.candidates.len() * 3);
    }

    #[test]
    fn single_point_grid_stops_at_once() {
        let grid = SmoothingGrid::new(vec![vec![10.0], vec![20.0]]).unwrap();
        let r = grid_walk(&grid, &Bowl { peak: vec![1.0, 1.0], parts: 2 }, &WalkSettings::default()).unwrap();
        assert_eq!(r.selected, vec![10.0, 20.0]);
        assert_eq!(r.fits, 2);
    }

    #[test]
    fn boundary_extension_reaches_outside_values() {
        let grid = SmoothingGrid::new(vec![lambdas(), lambdas()]).unwrap();
        let bowl = Bowl { peak: vec![65536.0, 32.0], parts: 1 };
        let s = WalkSettings { start: WalkStart::Diagonal, extend_boundary: true, max_extensions: 6, warm_restarts: None };
        let r = grid_walk(&grid, &bowl, &s).unwrap();
        assert_eq!(r.selected, vec![65536.0, 32.0]);
        assert!(!r.extensions.is_empty());
    }
}
