//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use std::io::Write;
use std::sync::Arc;

use nphmm::{
    HmmModel, InitialDistribution, NormalDensity, NormalMixtureDensity, SplineBasis, SplineDensity, StateDensity,
    TransitionMatrix,
};
use rand::Rng;

/// Writes straight to stderr so the line shows up even when the test harness
/// captures output.
pub fn verdict(name: &str, pass: bool, detail: &str) -> bool {
    let line = format!("{} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
    pass
}

/// Cox-de Boor recursion for the unstandardized B-spline of degree `p`
/// starting at knot `j`, with half-open intervals.
pub fn cox_de_boor(knots: &[f64], j: usize, p: usize, x: f64) -> f64 {
    if p == 0 {
        return if knots[j] <= x && x < knots[j + 1] { 1.0 } else { 0.0 };
    }
    let mut v = 0.0;
    let l = knots[j + p] - knots[j];
    if l > 0.0 {
        v += (x - knots[j]) / l * cox_de_boor(knots, j, p - 1, x);
    }
    let r = knots[j + p + 1] - knots[j + 1];
    if r > 0.0 {
        v += (knots[j + p + 1] - x) / r * cox_de_boor(knots, j + 1, p - 1, x);
    }
    v
}

/// Standardized cubic element `j`: the B-spline divided by its integral
/// `(t_{j+4} - t_j) / 4`.
pub fn standardized(knots: &[f64], j: usize, x: f64) -> f64 {
    cox_de_boor(knots, j, 3, x) * 4.0 / (knots[j + 4] - knots[j])
}

/// Five-point Gauss-Legendre rule on `[a, b]`, exact for degree 9.
pub fn gauss5(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    const X: [f64; 5] = [0.0, -0.538_469_310_105_683_1, 0.538_469_310_105_683_1, -0.906_179_845_938_664, 0.906_179_845_938_664];
    const W: [f64; 5] = [
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_5,
        0.478_628_670_499_366_5,
        0.236_926_885_056_189_1,
        0.236_926_885_056_189_1,
    ];
    let h = (b - a) / 2.0;
    let m = (a + b) / 2.0;
    X.iter().zip(W).map(|(&x, w)| w * f(m + h * x)).sum::<f64>() * h
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Log joint density of one state path; missing observations contribute 1.
pub fn path_log_prob(model: &HmmModel, series: &[Option<f64>], path: &[usize]) -> f64 {
    let g = model.gamma();
    let d = model.delta().as_slice();
    let em = |t: usize, s: usize| series[t].map_or(0.0, |x| model.emissions()[s].pdf(x).ln());
    let mut lp = d[path[0]].ln() + em(0, path[0]);
    for t in 1..series.len() {
        lp += g.get(path[t - 1], path[t]).ln() + em(t, path[t]);
    }
    lp
}

/// Every state path of length `t` over `n` states.
pub fn all_paths(n: usize, t: usize) -> Vec<Vec<usize>> {
    let total = n.pow(t as u32);
    (0..total)
        .map(|mut code| {
            (0..t)
                .map(|_| {
                    let s = code % n;
                    code /= n;
                    s
                })
                .collect()
        })
        .collect()
}

/// Likelihood by summing over all `N^T` state paths.
pub fn brute_log_likelihood(model: &HmmModel, series: &[Option<f64>]) -> f64 {
    let lps: Vec<f64> = all_paths(model.n_states(), series.len()).iter().map(|p| path_log_prob(model, series, p)).collect();
    log_sum_exp(&lps)
}

/// Largest single-path log joint density.
pub fn brute_viterbi(model: &HmmModel, series: &[Option<f64>]) -> f64 {
    all_paths(model.n_states(), series.len())
        .iter()
        .map(|p| path_log_prob(model, series, p))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn random_simplex<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// Random HMM with a mix of spline, normal and normal-mixture states, plus a
/// series on `[-3, 3]` where roughly a fifth of the values are missing.
pub fn random_instance<R: Rng>(n: usize, t: usize, rng: &mut R) -> (HmmModel, Vec<Option<f64>>) {
    let basis = Arc::new(SplineBasis::new(-4.0, 4.0, rng.random_range(2..6)).unwrap());
    let emissions = (0..n)
        .map(|_| match rng.random_range(0..3) {
            0 => {
                let w: Vec<f64> = (0..basis.len()).map(|_| rng.random_range(0.1..2.0)).collect();
                StateDensity::Spline(SplineDensity::from_weights(basis.clone(), &w).unwrap())
            }
            1 => StateDensity::Normal(NormalDensity::new(rng.random_range(-2.0..2.0), rng.random_range(0.5..2.0)).unwrap()),
            _ => StateDensity::NormalMixture(
                NormalMixtureDensity::new(
                    NormalDensity::new(rng.random_range(-2.0..0.0), rng.random_range(0.5..1.5)).unwrap(),
                    NormalDensity::new(rng.random_range(0.0..2.0), rng.random_range(0.5..1.5)).unwrap(),
                    rng.random_range(0.1..0.9),
                )
                .unwrap(),
            ),
        })
        .collect();
    let rows: Vec<Vec<f64>> = (0..n).map(|_| random_simplex(n, rng)).collect();
    let gamma = TransitionMatrix::from_rows(&rows).unwrap();
    let model = if rng.random_bool(0.5) {
        HmmModel::stationary(gamma, emissions).unwrap()
    } else {
        HmmModel::new(gamma, InitialDistribution::new(random_simplex(n, rng)).unwrap(), emissions).unwrap()
    };
    let mut series: Vec<Option<f64>> =
        (0..t).map(|_| if rng.random_bool(0.2) { None } else { Some(rng.random_range(-3.0..3.0)) }).collect();
    if series.iter().all(Option::is_none) {
        series[0] = Some(0.5);
    }
    (model, series)
}
