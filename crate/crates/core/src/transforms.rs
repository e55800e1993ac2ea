//! Monotone tone curves over integer pixel values and their action on
//! histograms and pixels.
//!
//! A curve `φ : {0..n} → {0..n}` acts on a histogram through a 0/1
//! column-stochastic matrix with exactly one non-zero per column. That matrix
//! is represented by the curve itself; applying it is a scatter-add and its
//! adjoint is a gather.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::histogram::{cumulative, PixelHistogram};
use crate::noise::NoiseSpec;

/// A monotone non-decreasing map of pixel values `0..=n` into `0..=n`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "CurveRepr", into = "CurveRepr")]
pub struct TransformCurve {
    n: usize,
    phi: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct CurveRepr {
    n: usize,
    phi: Vec<usize>,
}

impl TryFrom<CurveRepr> for TransformCurve {
    type Error = Error;

    fn try_from(r: CurveRepr) -> Result<Self> {
        TransformCurve::new(r.n, r.phi)
    }
}

impl From<TransformCurve> for CurveRepr {
    fn from(c: TransformCurve) -> Self {
        CurveRepr { n: c.n, phi: c.phi }
    }
}

impl TransformCurve {
    pub fn new(n: usize, phi: Vec<usize>) -> Result<Self> {
        if n == 0 {
            return Err(Error::input("curve needs at least two pixel values"));
        }
        if phi.len() != n + 1 {
            return Err(Error::input(format!(
                "curve over 0..={n} needs {} entries, got {}",
                n + 1,
                phi.len()
            )));
        }
        if let Some(&v) = phi.iter().find(|&&v| v > n) {
            return Err(Error::input(format!("curve value {v} exceeds {n}")));
        }
        if let Some(i) = phi.windows(2).position(|w| w[0] > w[1]) {
            return Err(Error::input(format!(
                "curve decreases between {} and {}",
                i,
                i + 1
            )));
        }
        Ok(TransformCurve { n, phi })
    }

    pub fn identity(n: usize) -> Self {
        TransformCurve {
            n,
            phi: (0..=n).collect(),
        }
    }

    /// Maps every value to `k`.
    pub fn constant(n: usize, k: usize) -> Result<Self> {
        Self::new(n, vec![k; n + 1])
    }

    pub fn top(&self) -> usize {
        self.n
    }

    pub fn phi(&self) -> &[usize] {
        &self.phi
    }

    pub fn map(&self, value: usize) -> usize {
        self.phi[value]
    }

    pub fn is_identity(&self) -> bool {
        self.phi.iter().enumerate().all(|(i, &j)| i == j)
    }

    pub fn transfer(&self) -> TransferMatrix<'_> {
        TransferMatrix {
            column_target: &self.phi,
        }
    }

    /// Number of distinct output values.
    pub fn range_size(&self) -> usize {
        1 + self.phi.windows(2).filter(|w| w[0] != w[1]).count()
    }

    /// Curve values as reals, for norm-based comparisons.
    pub fn as_f64(&self) -> Vec<f64> {
        self.phi.iter().map(|&v| v as f64).collect()
    }
}

/// Sparse view of the transfer matrix of a curve: column `i` has its single
/// unit entry at row `column_target[i]`.
#[derive(Clone, Copy, Debug)]
pub struct TransferMatrix<'a> {
    column_target: &'a [usize],
}

impl TransferMatrix<'_> {
    pub fn column_target(&self) -> &[usize] {
        self.column_target
    }

    /// `out = T h` by scatter-add.
    pub fn apply(&self, h: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (&j, &v) in self.column_target.iter().zip(h) {
            out[j] += v;
        }
    }

    /// `out = Tᵀ y` by gather.
    pub fn apply_transpose(&self, y: &[f64], out: &mut [f64]) {
        for (o, &j) in out.iter_mut().zip(self.column_target) {
            *o = y[j];
        }
    }
}

fn round_level(x: f64, n: usize) -> usize {
    // f64::round rounds half away from zero.
    x.round().clamp(0.0, n as f64) as usize
}

/// Gamma correction `φ(i) = [n (i/n)^γ]`.
pub fn gamma_curve(gamma: f64, n: usize) -> Result<TransformCurve> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::input(format!("gamma must be positive, got {gamma}")));
    }
    if n == 0 {
        return Err(Error::input("curve needs at least two pixel values"));
    }
    let nf = n as f64;
    let phi = (0..=n)
        .map(|i| round_level(nf * (i as f64 / nf).powf(gamma), n))
        .collect();
    Ok(TransformCurve { n, phi })
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Sigmoid stretching with slope `alpha` and center `mu`, normalized so that
/// the end points are fixed.
pub fn sigmoid_curve(alpha: f64, mu: f64, n: usize) -> Result<TransformCurve> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::input(format!("alpha must be positive, got {alpha}")));
    }
    if !(0.0..=1.0).contains(&mu) {
        return Err(Error::input(format!("mu must lie in [0, 1], got {mu}")));
    }
    if n == 0 {
        return Err(Error::input("curve needs at least two pixel values"));
    }
    let nf = n as f64;
    let lo = logistic(-mu / alpha);
    let hi = logistic((1.0 - mu) / alpha);
    let span = hi - lo;
    if !(span > 0.0) {
        return Err(Error::input("sigmoid parameters give a degenerate curve"));
    }
    let mut phi: Vec<usize> = (0..=n)
        .map(|i| {
            let s = logistic((i as f64 - nf * mu) / (nf * alpha));
            round_level(nf * (s - lo) / span, n)
        })
        .collect();
    // Guard against floating drift at the ends.
    phi[0] = 0;
    phi[n] = n;
    enforce_monotone(&mut phi);
    Ok(TransformCurve { n, phi })
}

/// Histogram equalization curve `φ(i) = [n C_h(i)]`.
pub fn hist_eq_curve(h: &PixelHistogram) -> TransformCurve {
    let n = h.top();
    let nf = n as f64;
    let mut phi: Vec<usize> = cumulative(h.values())
        .into_iter()
        .map(|c| round_level(nf * c, n))
        .collect();
    enforce_monotone(&mut phi);
    TransformCurve { n, phi }
}

/// Free-form curve through integer control points, interpolated with a
/// shape-preserving monotone cubic Hermite spline. `(0, 0)` and `(n, n)` are
/// added when the controls do not pin the end points.
pub fn spline_curve(control_points: &[(usize, usize)], n: usize) -> Result<TransformCurve> {
    if n == 0 {
        return Err(Error::input("curve needs at least two pixel values"));
    }
    let mut pts: Vec<(f64, f64)> = Vec::with_capacity(control_points.len() + 2);
    if control_points.first().is_none_or(|p| p.0 != 0) {
        pts.push((0.0, 0.0));
    }
    for &(i, j) in control_points {
        if i > n || j > n {
            return Err(Error::input(format!(
                "control point ({i}, {j}) outside 0..={n}"
            )));
        }
        pts.push((i as f64, j as f64));
    }
    if control_points.last().is_none_or(|p| p.0 != n) {
        pts.push((n as f64, n as f64));
    }
    for w in pts.windows(2) {
        if w[1].0 <= w[0].0 {
            return Err(Error::input(
                "control points must be strictly increasing in i",
            ));
        }
        if w[1].1 < w[0].1 {
            return Err(Error::input("control point values must be non-decreasing"));
        }
    }
    let slopes = pchip_slopes(&pts);
    let mut phi = Vec::with_capacity(n + 1);
    let mut seg = 0;
    for i in 0..=n {
        let x = i as f64;
        while seg + 2 < pts.len() && x > pts[seg + 1].0 {
            seg += 1;
        }
        let v = hermite(pts[seg], pts[seg + 1], slopes[seg], slopes[seg + 1], x);
        phi.push(round_level(v, n));
    }
    enforce_monotone(&mut phi);
    Ok(TransformCurve { n, phi })
}

// Fritsch–Carlson derivative estimates (the PCHIP rule).
fn pchip_slopes(pts: &[(f64, f64)]) -> Vec<f64> {
    let m = pts.len();
    let h: Vec<f64> = pts.windows(2).map(|w| w[1].0 - w[0].0).collect();
    let delta: Vec<f64> = pts
        .windows(2)
        .zip(&h)
        .map(|(w, hk)| (w[1].1 - w[0].1) / hk)
        .collect();
    if m == 2 {
        return vec![delta[0], delta[0]];
    }
    let mut d = vec![0.0; m];
    for k in 1..m - 1 {
        let (a, b) = (delta[k - 1], delta[k]);
        if a == 0.0 || b == 0.0 || a.signum() != b.signum() {
            d[k] = 0.0;
        } else {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            d[k] = (w1 + w2) / (w1 / a + w2 / b);
        }
    }
    d[0] = pchip_end_slope(h[0], h[1], delta[0], delta[1]);
    d[m - 1] = pchip_end_slope(h[m - 2], h[m - 3], delta[m - 2], delta[m - 3]);
    d
}

fn pchip_end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if d.signum() != d0.signum() || d0 == 0.0 {
        0.0
    } else if d0.signum() != d1.signum() && d.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        d
    }
}

fn hermite(p0: (f64, f64), p1: (f64, f64), d0: f64, d1: f64, x: f64) -> f64 {
    let h = p1.0 - p0.0;
    let t = (x - p0.0) / h;
    let t2 = t * t;
    let t3 = t2 * t;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + t;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    h00 * p0.1 + h10 * h * d0 + h01 * p1.1 + h11 * h * d1
}

fn enforce_monotone(phi: &mut [usize]) {
    for k in 1..phi.len() {
        if phi[k] < phi[k - 1] {
            phi[k] = phi[k - 1];
        }
    }
}

/// Histogram of `φ(X)` for `X ~ h`.
pub fn apply_to_histogram(t: &TransferMatrix<'_>, h: &PixelHistogram) -> Result<PixelHistogram> {
    if t.column_target.len() != h.len() {
        return Err(Error::input(format!(
            "curve covers {} values but histogram has {} bins",
            t.column_target.len(),
            h.len()
        )));
    }
    let mut out = vec![0.0; h.len()];
    t.apply(h.values(), &mut out);
    Ok(PixelHistogram::from_simplex(h.bits(), out))
}

/// Maps pixels through the curve, optionally adding rounded Gaussian noise
/// clipped to `0..=n`. Deterministic for a given seed.
pub fn apply_to_pixels(
    curve: &TransformCurve,
    pixels: &[u16],
    noise: Option<&NoiseSpec>,
    seed: u64,
) -> Result<Vec<u16>> {
    let n = curve.n;
    if let Some(&p) = pixels.iter().find(|&&p| p as usize > n) {
        return Err(Error::input(format!("pixel value {p} exceeds {n}")));
    }
    let sigma = noise.map_or(0.0, NoiseSpec::sigma);
    if sigma == 0.0 {
        return Ok(pixels
            .iter()
            .map(|&p| curve.phi[p as usize] as u16)
            .collect());
    }
    let dist = Normal::new(0.0, sigma).map_err(|e| Error::input(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let top = n as f64;
    Ok(pixels
        .iter()
        .map(|&p| {
            let v = curve.phi[p as usize] as f64 + dist.sample(&mut rng);
            v.round().clamp(0.0, top) as u16
        })
        .collect())
}

/// A half-open range of gamma values `[lower, upper)` on which the gamma
/// curve over `0..=n` does not change.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaInterval {
    pub lower: f64,
    pub upper: f64,
}

impl GammaInterval {
    pub fn contains(&self, gamma: f64) -> bool {
        self.lower <= gamma && gamma < self.upper
    }

    /// A representative gamma strictly inside the interval.
    pub fn interior(&self) -> f64 {
        if self.upper.is_finite() {
            0.5 * (self.lower + self.upper)
        } else {
            self.lower + 1.0
        }
    }
}

/// Range of gammas sending pixel `i` to level `j`: `[γ_lo, γ_hi)`.
///
/// `i` must lie in `1..n` and `j` in `0..n`. Bounds at or below zero mean
/// the cell is unreachable by positive gammas on that side.
pub fn gamma_cell(i: usize, j: usize, n: usize) -> (f64, f64) {
    let ln_n = (n as f64).ln();
    let denom = ln_n - (i as f64).ln();
    let lower = (ln_n - (j as f64 + 0.5).ln()) / denom;
    let upper = if j == 0 {
        f64::INFINITY
    } else {
        (ln_n - (j as f64 - 0.5).ln()) / denom
    };
    (lower, upper)
}

/// Every gamma at which some pixel value changes level, sorted and deduplicated.
pub fn gamma_breakpoints(n: usize) -> Vec<f64> {
    let mut points = Vec::with_capacity(n * n);
    for i in 1..n {
        for j in 0..n {
            let (lower, _) = gamma_cell(i, j, n);
            if lower > 0.0 {
                points.push(lower);
            }
        }
    }
    points.sort_unstable_by(f64::total_cmp);
    points.dedup();
    points
}

/// Partition of `(0, ∞)` into the intervals of indistinguishable gammas.
pub fn distinguishable_gammas(n: usize) -> Result<Vec<GammaInterval>> {
    if n < 2 {
        return Err(Error::input("need n >= 2"));
    }
    let points = gamma_breakpoints(n);
    let mut out = Vec::with_capacity(points.len() + 1);
    let mut lower = 0.0;
    for &p in &points {
        out.push(GammaInterval { lower, upper: p });
        lower = p;
    }
    out.push(GammaInterval {
        lower,
        upper: f64::INFINITY,
    });
    Ok(out)
}

/// Histogram matching: `φ(i)` is the smallest `j` with
/// `C_target(j) >= C_source(i)`.
pub fn histogram_matching_transform(
    source: &PixelHistogram,
    target: &PixelHistogram,
) -> Result<TransformCurve> {
    if source.len() != target.len() {
        return Err(Error::input(
            "source and target histograms differ in length",
        ));
    }
    Ok(match_cdfs(source.values(), target.values()))
}

pub(crate) fn match_cdfs(source: &[f64], target: &[f64]) -> TransformCurve {
    let n = source.len() - 1;
    let cs = cumulative(source);
    let ct = cumulative(target);
    let mut phi = Vec::with_capacity(n + 1);
    let mut j = 0;
    for &c in &cs {
        let want = c - 1e-12;
        while j < n && ct[j] < want {
            j += 1;
        }
        phi.push(j);
    }
    TransformCurve { n, phi }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::histogram::{empty_bin_count, DEFAULT_EPS_BIN};

    #[test]
    fn gamma_examples() {
        assert!(gamma_curve(1.0, 255).unwrap().is_identity());
        assert_eq!(gamma_curve(2.0, 255).unwrap().map(128), 64);
        assert_eq!(gamma_curve(0.5, 255).unwrap().map(64), 128);
        assert!(gamma_curve(0.0, 255).is_err());
        assert!(gamma_curve(-1.0, 255).is_err());
        let c = gamma_curve(3.3, 4095).unwrap();
        assert_eq!(c.map(0), 0);
        assert_eq!(c.map(4095), 4095);
    }

    #[test]
    fn sigmoid_endpoints_and_midpoint() {
        for &(a, m) in &[(0.25, 0.5), (0.05, 0.1), (0.5, 0.9), (0.1, 0.0), (0.1, 1.0)] {
            let c = sigmoid_curve(a, m, 255).unwrap();
            assert_eq!(c.map(0), 0);
            assert_eq!(c.map(255), 255);
        }
        // 255·(S(0.5/63.75) - S(-2)) / (S(2) - S(-2)) = 128.16
        let c = sigmoid_curve(0.25, 0.5, 255).unwrap();
        assert_eq!(c.map(128), 128);
        assert!(sigmoid_curve(0.0, 0.5, 255).is_err());
        assert!(sigmoid_curve(0.2, 1.5, 255).is_err());
    }

    #[test]
    fn hist_eq_examples() {
        let n = 255;
        let u = PixelHistogram::uniform(8).unwrap();
        let c = hist_eq_curve(&u);
        for i in 0..=n {
            let expect = ((n * (i + 1)) as f64 / (n + 1) as f64).round() as usize;
            assert_eq!(c.map(i), expect);
        }
        let p = PixelHistogram::point_mass(8, 0).unwrap();
        assert!(hist_eq_curve(&p).phi().iter().all(|&v| v == n));
    }

    #[test]
    fn spline_identity_and_gamma_fit() {
        assert!(spline_curve(&[(0, 0), (255, 255)], 255)
            .unwrap()
            .is_identity());
        assert!(spline_curve(&[], 255).unwrap().is_identity());
        let g = gamma_curve(2.0, 255).unwrap();
        let controls: Vec<(usize, usize)> = (0..=8)
            .map(|k| {
                let i = ((k * 255) as f64 / 8.0).round() as usize;
                (i, g.map(i))
            })
            .collect();
        let s = spline_curve(&controls, 255).unwrap();
        let worst = s
            .phi()
            .iter()
            .zip(g.phi())
            .map(|(a, b)| a.abs_diff(*b))
            .max()
            .unwrap();
        assert!(worst <= 2, "max deviation {worst}");
    }

    #[test]
    fn spline_rejects_bad_controls() {
        assert!(spline_curve(&[(10, 50), (20, 40)], 255).is_err());
        assert!(spline_curve(&[(20, 40), (10, 50)], 255).is_err());
        assert!(spline_curve(&[(10, 300)], 255).is_err());
    }

    #[test]
    fn transfer_examples() {
        let h = PixelHistogram::new(2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let id = TransformCurve::identity(3);
        assert_eq!(apply_to_histogram(&id.transfer(), &h).unwrap(), h);
        let k = TransformCurve::constant(3, 2).unwrap();
        let out = apply_to_histogram(&k.transfer(), &h).unwrap();
        assert!((out.values()[2] - 1.0).abs() < 1e-15);
        let c = TransformCurve::new(3, vec![0, 0, 1, 3]).unwrap();
        let out = apply_to_histogram(&c.transfer(), &h).unwrap();
        assert!(
            empty_bin_count(out.values(), DEFAULT_EPS_BIN)
                >= empty_bin_count(h.values(), DEFAULT_EPS_BIN)
        );
        let wrong = PixelHistogram::uniform(3).unwrap();
        assert!(apply_to_histogram(&c.transfer(), &wrong).is_err());
    }

    #[test]
    fn curve_validation() {
        assert!(TransformCurve::new(3, vec![0, 2, 1, 3]).is_err());
        assert!(TransformCurve::new(3, vec![0, 1, 2]).is_err());
        assert!(TransformCurve::new(3, vec![0, 1, 2, 4]).is_err());
        let c: Result<TransformCurve, _> = serde_json::from_str(r#"{"n":2,"phi":[0,2,1]}"#);
        assert!(c.is_err());
        let c: TransformCurve = serde_json::from_str(r#"{"n":2,"phi":[0,0,2]}"#).unwrap();
        assert_eq!(
            serde_json::to_string(&c).unwrap(),
            r#"{"n":2,"phi":[0,0,2]}"#
        );
    }

    #[test]
    fn pixels_identity_and_zero_sigma() {
        let px: Vec<u16> = (0..256).map(|v| v as u16).collect();
        let id = TransformCurve::identity(255);
        assert_eq!(apply_to_pixels(&id, &px, None, 1).unwrap(), px);
        let g = gamma_curve(1.7, 255).unwrap();
        let zero = NoiseSpec::gaussian(0.0).unwrap();
        assert_eq!(
            apply_to_pixels(&g, &px, Some(&zero), 9).unwrap(),
            apply_to_pixels(&g, &px, None, 9).unwrap()
        );
        let noisy = NoiseSpec::gaussian(2.0).unwrap();
        let a = apply_to_pixels(&g, &px, Some(&noisy), 5).unwrap();
        let b = apply_to_pixels(&g, &px, Some(&noisy), 5).unwrap();
        assert_eq!(a, b);
        assert!(apply_to_pixels(&g, &[256], None, 0).is_err());
    }

    #[test]
    fn matching_examples() {
        let s = PixelHistogram::new(2, vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        let t = PixelHistogram::new(2, vec![0.0, 0.0, 0.5, 0.5]).unwrap();
        assert_eq!(
            histogram_matching_transform(&s, &t).unwrap().phi(),
            &[2, 3, 3, 3]
        );
        let h = PixelHistogram::new(2, vec![0.25, 0.0, 0.5, 0.25]).unwrap();
        let c = histogram_matching_transform(&h, &h).unwrap();
        for (i, &v) in h.values().iter().enumerate() {
            if v > 0.0 {
                assert_eq!(c.map(i), i);
            }
        }
    }

    #[test]
    fn gamma_cells_match_curves() {
        let n = 255;
        let (lo, hi) = gamma_cell(128, 64, n);
        assert!(lo < 2.0 && 2.0 < hi);
        let inside = gamma_curve(0.5 * (lo + hi), n).unwrap();
        assert_eq!(inside.map(128), 64);
        assert_eq!(gamma_curve(lo * (1.0 - 1e-9), n).unwrap().map(128), 65);
        assert_eq!(gamma_curve(hi * (1.0 + 1e-9), n).unwrap().map(128), 63);
    }

    #[test]
    fn distinguishable_intervals_tile_the_axis() {
        let iv = distinguishable_gammas(15).unwrap();
        assert_eq!(iv[0].lower, 0.0);
        assert!(iv.last().unwrap().upper.is_infinite());
        for w in iv.windows(2) {
            assert_eq!(w[0].upper, w[1].lower);
            assert!(w[0].lower < w[0].upper);
        }
        assert!(distinguishable_gammas(1).is_err());
    }
}
