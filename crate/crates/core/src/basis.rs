//! Standardized cubic B-spline basis densities on an equally spaced knot grid.
//!
//! The basis has `2K + 1` elements `phi_{-K}, ..., phi_K`, stored at indices
//! `0..2K+1` in ascending order of their support. Every element is a cubic
//! B-spline divided by its integral `h`, so it is itself a probability density.
//! With equally spaced knots all elements are translates of one another, which
//! lets evaluation, antiderivatives and moments use closed forms.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Real;

/// Spline degree. Only cubic splines are supported.
pub const DEGREE: usize = 3;
/// Number of knot intervals spanned by one basis element.
const SPAN: usize = DEGREE + 1;

/// Equally spaced knots `t_j = lower + (j - 3) h`, `j = 0..n+4`.
///
/// `[lower, upper]` is the range on which the basis forms a partition of unity;
/// the three extension knots on each side give the boundary elements full
/// cubic support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnotGrid<F> {
    lower: F,
    upper: F,
    spacing: F,
    n_basis: usize,
}

impl<F: Real> KnotGrid<F> {
    pub fn new(lower: F, upper: F, n_basis: usize) -> Result<Self> {
        if !lower.is_finite() || !upper.is_finite() {
            return Err(Error::NonFinite(format!("knot range [{lower}, {upper}]")));
        }
        if upper <= lower {
            return invalid(format!("upper bound {upper} must exceed lower bound {lower}"));
        }
        if n_basis < SPAN + 1 {
            return invalid(format!("need at least {} basis elements, got {n_basis}", SPAN + 1));
        }
        let spacing = (upper - lower) / F::from_count(n_basis - DEGREE);
        Ok(Self { lower, upper, spacing, n_basis })
    }

    pub fn lower(&self) -> F {
        self.lower
    }

    pub fn upper(&self) -> F {
        self.upper
    }

    pub fn spacing(&self) -> F {
        self.spacing
    }

    pub fn degree(&self) -> usize {
        DEGREE
    }

    pub fn num_knots(&self) -> usize {
        self.n_basis + SPAN
    }

    /// Knot `t_j`.
    #[inline]
    pub fn knot(&self, j: usize) -> F {
        self.lower + (F::from_count(j) - F::from_count(DEGREE)) * self.spacing
    }

    pub fn knots(&self) -> Vec<F> {
        (0..self.num_knots()).map(|j| self.knot(j)).collect()
    }
}

/// Nonzero basis values at one point: elements `start..start + count`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisRow<F> {
    pub start: usize,
    pub count: usize,
    pub values: [F; SPAN],
}

impl<F: Real> BasisRow<F> {
    fn empty() -> Self {
        Self { start: 0, count: 0, values: [F::zero(); SPAN] }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, F)> + '_ {
        (0..self.count).map(move |c| (self.start + c, self.values[c]))
    }

    /// `sum_j weights[j] * phi_j(x)` for the point this row was built at.
    #[inline]
    pub fn dot(&self, weights: &[F]) -> F {
        let mut s = F::zero();
        for c in 0..self.count {
            s = s + weights[self.start + c] * self.values[c];
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis<F> {
    grid: KnotGrid<F>,
    k: usize,
}

impl<F: Real> SplineBasis<F> {
    /// Basis of `2K + 1` densities partitioning unity over `[lower, upper]`.
    pub fn new(lower: F, upper: F, k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::BasisTooSmall(k));
        }
        let grid = KnotGrid::new(lower, upper, 2 * k + 1)?;
        Ok(Self { grid, k })
    }

    /// Basis whose range is the data range widened by half a standard
    /// deviation on both sides. Missing entries are ignored.
    pub fn for_data(series: &[Option<F>], k: usize) -> Result<Self> {
        let xs: Vec<F> = series.iter().flatten().copied().collect();
        if xs.is_empty() {
            return invalid("cannot build a basis from an empty series");
        }
        if let Some(bad) = xs.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("observation {bad}")));
        }
        let n = F::from_count(xs.len());
        let mean = xs.iter().copied().sum::<F>() / n;
        let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<F>() / n;
        let sd = var.sqrt();
        let lo = xs.iter().copied().fold(F::infinity(), F::min);
        let hi = xs.iter().copied().fold(F::neg_infinity(), F::max);
        let margin = F::lit(0.5) * if sd > F::zero() { sd } else { F::one() };
        Self::new(lo - margin, hi + margin, k)
    }

    pub fn grid(&self) -> &KnotGrid<F> {
        &self.grid
    }

    /// The `K` in `phi_{-K}, ..., phi_K`.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        2 * self.k + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Storage index of `phi_0`.
    pub fn center_index(&self) -> usize {
        self.k
    }

    /// Support `[t_j, t_{j+4}]` of element `j`.
    pub fn support(&self, j: usize) -> (F, F) {
        (self.grid.knot(j), self.grid.knot(j + SPAN))
    }

    /// Interval outside of which every element vanishes.
    pub fn total_support(&self) -> (F, F) {
        (self.grid.knot(0), self.grid.knot(self.grid.num_knots() - 1))
    }

    /// Integral of the unstandardized B-spline element, `(t_{j+4} - t_j) / 4`.
    pub fn element_integral(&self, _j: usize) -> F {
        self.grid.spacing
    }

    /// Position of `x` in knot units from `t_0`, split into interval index and
    /// fractional part. `None` outside the total support.
    #[inline]
    fn locate(&self, x: F) -> Option<(usize, F)> {
        let u = (x - self.grid.knot(0)) / self.grid.spacing;
        if !(u >= F::zero()) {
            return None;
        }
        let i = u.floor();
        let last = self.grid.num_knots() - 1;
        let idx = i.to_usize()?;
        if idx >= last {
            return None;
        }
        Some((idx, u - i))
    }

    /// Nonzero standardized values at `x`.
    pub fn eval_row(&self, x: F) -> BasisRow<F> {
        let Some((i, f)) = self.locate(x) else {
            return BasisRow::empty();
        };
        let inv_h = self.grid.spacing.recip();
        // element i - p sits on its local piece p
        let pieces = [piece_pdf(0, f), piece_pdf(1, f), piece_pdf(2, f), piece_pdf(3, f)];
        let n = self.len();
        let lo = i.saturating_sub(DEGREE);
        let hi = i.min(n - 1);
        let mut row = BasisRow::empty();
        row.start = lo;
        for j in lo..=hi {
            row.values[row.count] = pieces[i - j] * inv_h;
            row.count += 1;
        }
        row
    }

    /// `(phi_{-K}(x), ..., phi_K(x))`.
    pub fn eval(&self, x: F) -> Vec<F> {
        let mut out = vec![F::zero(); self.len()];
        for (j, v) in self.eval_row(x).iter() {
            out[j] = v;
        }
        out
    }

    /// `int_{-inf}^x phi_j`.
    pub fn element_cdf(&self, j: usize, x: F) -> F {
        let s = (x - self.grid.knot(j)) / self.grid.spacing;
        local_cdf(s)
    }

    /// `int_{-inf}^x sum_j weights[j] phi_j`, integrating the polynomial pieces exactly.
    pub fn mixture_cdf(&self, weights: &[F], x: F) -> F {
        debug_assert_eq!(weights.len(), self.len());
        let (lo, hi) = self.total_support();
        if x <= lo {
            return F::zero();
        }
        if x >= hi {
            return weights.iter().copied().sum::<F>().min(F::one());
        }
        let u = (x - lo) / self.grid.spacing;
        let i = u.floor().to_usize().unwrap_or(0);
        // elements ending at or before t_i are fully integrated
        let full_end = (i + 1).saturating_sub(SPAN).min(self.len());
        let mut total: F = weights[..full_end].iter().copied().sum();
        let partial_end = (i + 1).min(self.len());
        for (j, &w) in weights.iter().enumerate().take(partial_end).skip(full_end) {
            total = total + w * self.element_cdf(j, x);
        }
        total.max(F::zero()).min(F::one())
    }

    /// Mean and second moment of each element.
    ///
    /// A uniform cubic B-spline density is the law of `t_j + h (U_1 + ... + U_4)`
    /// with independent uniforms, so its mean is the support midpoint and its
    /// variance is `h^2 / 3`.
    pub fn moments(&self) -> Vec<(F, F)> {
        let h = self.grid.spacing;
        let var = h * h / F::lit(3.0);
        (0..self.len())
            .map(|j| {
                let m = self.grid.knot(j) + F::lit(2.0) * h;
                (m, m * m + var)
            })
            .collect()
    }

    /// Draw from element `j` by inverting its piecewise quartic CDF.
    pub fn sample_element<R: Rng + ?Sized>(&self, j: usize, rng: &mut R) -> F {
        let u: f64 = rng.random();
        let s = local_quantile(F::lit(u));
        self.grid.knot(j) + s * self.grid.spacing
    }
}

/// Unstandardized cubic B-spline on local piece `p` at fractional offset `f`.
#[inline]
fn piece_pdf<F: Real>(p: usize, f: F) -> F {
    let sixth = F::lit(1.0 / 6.0);
    let three = F::lit(3.0);
    match p {
        0 => f * f * f * sixth,
        1 => (F::one() + three * f + three * f * f - three * f * f * f) * sixth,
        2 => (F::lit(4.0) - F::lit(6.0) * f * f + three * f * f * f) * sixth,
        3 => {
            let g = F::one() - f;
            g * g * g * sixth
        }
        _ => F::zero(),
    }
}

/// Integral of piece `p` over `[0, f]`.
#[inline]
fn piece_integral<F: Real>(p: usize, f: F) -> F {
    let f2 = f * f;
    let f3 = f2 * f;
    let f4 = f3 * f;
    let sixth = F::lit(1.0 / 6.0);
    match p {
        0 => f4 / F::lit(24.0),
        1 => (f + F::lit(1.5) * f2 + f3 - F::lit(0.75) * f4) * sixth,
        2 => (F::lit(4.0) * f - F::lit(2.0) * f3 + F::lit(0.75) * f4) * sixth,
        3 => {
            let g = F::one() - f;
            (F::one() - g * g * g * g) / F::lit(24.0)
        }
        _ => F::zero(),
    }
}

/// Cumulative mass at the start of each piece.
#[inline]
fn piece_offset<F: Real>(p: usize) -> F {
    F::lit([0.0, 1.0 / 24.0, 0.5, 23.0 / 24.0][p])
}

/// CDF of the standardized element in local knot units `s` (support `[0, 4]`).
#[inline]
fn local_cdf<F: Real>(s: F) -> F {
    if !(s > F::zero()) {
        return F::zero();
    }
    if s >= F::from_count(SPAN) {
        return F::one();
    }
    let p = s.floor().to_usize().unwrap_or(0).min(DEGREE);
    piece_offset::<F>(p) + piece_integral(p, s - F::from_count(p))
}

/// Inverse of [`local_cdf`].
fn local_quantile<F: Real>(u: F) -> F {
    let u = u.max(F::zero()).min(F::one());
    let p = (1..SPAN).rev().find(|&p| u >= piece_offset::<F>(p)).unwrap_or(0);
    let target = u - piece_offset::<F>(p);
    let quarter = F::lit(0.25);
    let f = match p {
        0 => (F::lit(24.0) * target).powf(quarter),
        3 => F::one() - (F::one() - F::lit(24.0) * target).max(F::zero()).powf(quarter),
        _ => {
            // safeguarded Newton on a monotone quartic
            let (mut lo, mut hi) = (F::zero(), F::one());
            let mut f = F::lit(0.5);
            for _ in 0..100 {
                let g = piece_integral(p, f) - target;
                if g > F::zero() {
                    hi = f;
                } else {
                    lo = f;
                }
                let d = piece_pdf(p, f);
                let mut next = f - g / d;
                if !(next > lo && next < hi) {
                    next = (lo + hi) * F::lit(0.5);
                }
                if (next - f).abs() <= F::epsilon() * F::lit(4.0) {
                    f = next;
                    break;
                }
                f = next;
            }
            f
        }
    };
    F::from_count(p) + f.max(F::zero()).min(F::one())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    type SplineBasis = super::SplineBasis<f64>;

    fn gauss_legendre_5<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
        const X: [f64; 5] = [
            0.0,
            -0.538_469_310_105_683_1,
            0.538_469_310_105_683_1,
            -0.906_179_845_938_664,
            0.906_179_845_938_664,
        ];
        const W: [f64; 5] = [
            0.568_888_888_888_888_9,
            0.478_628_670_499_366_5,
            0.478_628_670_499_366_5,
            0.236_926_885_056_189_08,
            0.236_926_885_056_189_08,
        ];
        let (c, r) = ((a + b) / 2.0, (b - a) / 2.0);
        X.iter().zip(W).map(|(&x, w)| w * f(c + r * x)).sum::<f64>() * r
    }

    #[test]
    fn sizes_match_k() {
        assert_eq!(SplineBasis::new(0.0, 1.0, 15).unwrap().len(), 31);
        assert_eq!(SplineBasis::new(0.0, 1.0, 25).unwrap().len(), 51);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(SplineBasis::new(0.0, 1.0, 1).unwrap_err(), Error::BasisTooSmall(1));
        assert!(matches!(SplineBasis::new(f64::NAN, 1.0, 5), Err(Error::NonFinite(_))));
        assert!(SplineBasis::new(1.0, 1.0, 5).is_err());
        assert!(SplineBasis::new(2.0, 1.0, 5).is_err());
    }

    #[test]
    fn knots_equally_spaced() {
        let b = SplineBasis::new(-3.0, 7.0, 15).unwrap();
        let k = b.grid().knots();
        let h = b.grid().spacing();
        assert_eq!(k.len(), 35);
        for w in k.windows(2) {
            assert!(((w[1] - w[0]) - h).abs() <= 1e-12 * h);
        }
        assert!((b.grid().knot(3) + 3.0).abs() < 1e-12);
        assert!((b.grid().knot(31) - 7.0).abs() < 1e-12);
    }

    #[test]
    fn each_element_integrates_to_one() {
        let b = SplineBasis::new(-2.0, 5.0, 6).unwrap();
        for j in 0..b.len() {
            let (a, _) = b.support(j);
            let h = b.grid().spacing();
            let total: f64 = (0..4)
                .map(|p| {
                    let lo = a + p as f64 * h;
                    gauss_legendre_5(|x| b.eval(x)[j], lo, lo + h)
                })
                .sum();
            assert!((total - 1.0).abs() < 1e-12, "element {j}: {total}");
        }
    }

    #[test]
    fn outside_support_is_zero() {
        let b = SplineBasis::new(0.0, 1.0, 4).unwrap();
        let (lo, hi) = b.total_support();
        assert!(b.eval(lo - 1e-9).iter().all(|&v| v == 0.0));
        assert!(b.eval(hi).iter().all(|&v| v == 0.0));
        assert!(b.eval(-1e300).iter().all(|&v| v == 0.0));
        assert!(b.eval(f64::NAN).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn interior_knot_partition_of_unity() {
        let b = SplineBasis::new(0.0, 10.0, 5).unwrap();
        let h = b.grid().spacing();
        let x = b.grid().knot(6);
        let v = b.eval(x);
        let nonzero: Vec<usize> = (0..b.len()).filter(|&j| v[j] > 0.0).collect();
        assert_eq!(nonzero, vec![3, 4, 5]);
        let total: f64 = v.iter().map(|&p| p * h).sum();
        assert!((total - 1.0).abs() < 1e-14);
    }

    #[test]
    fn center_element_peaks_at_its_midpoint() {
        let b = SplineBasis::new(-1.0, 1.0, 15).unwrap();
        let c = b.center_index();
        let (lo, hi) = b.support(c);
        let v = b.eval((lo + hi) / 2.0);
        let max = v.iter().copied().fold(0.0, f64::max);
        assert_eq!(v[c], max);
    }

    #[test]
    fn cdf_pieces_join_continuously() {
        for p in 0..4 {
            let end = piece_offset::<f64>(p) + piece_integral(p, 1.0);
            let next = if p == 3 { 1.0 } else { piece_offset::<f64>(p + 1) };
            assert!((end - next).abs() < 1e-15);
        }
    }

    #[test]
    fn local_quantile_inverts_cdf() {
        for i in 1..400 {
            let s = i as f64 * 0.01;
            let u = local_cdf(s);
            assert!((local_quantile(u) - s).abs() < 1e-9, "s={s}");
        }
    }

    #[test]
    fn moments_shift_with_grid() {
        let a = SplineBasis::new(0.0, 4.0, 3).unwrap().moments();
        let b = SplineBasis::new(2.5, 6.5, 3).unwrap().moments();
        for ((ma, _), (mb, _)) in a.iter().zip(&b) {
            assert!((mb - ma - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn works_in_single_precision() {
        let b = super::SplineBasis::<f32>::new(0.0, 1.0, 4).unwrap();
        let h = b.grid().spacing();
        let total: f32 = b.eval(0.37).iter().map(|&v| v * h).sum();
        assert!((total - 1.0).abs() < 1e-5);
    }

    #[test]
    fn sampling_stays_in_support() {
        let b = SplineBasis::new(0.0, 1.0, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let x = b.sample_element(2, &mut rng);
            let (lo, hi) = b.support(2);
            assert!(x >= lo && x <= hi);
        }
    }
}
