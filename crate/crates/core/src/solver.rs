//! Recovery of the pre-enhancement histogram for a known curve and noise
//! level.
//!
//! The objective is `W1(h̃, R T h) + λ Σ exp(−ρ h_i)` over the simplex. The
//! Wasserstein term is an ℓ1 norm of a CDF residual; it is replaced by its
//! variational form `½ Σ (c_i² / u_i + u_i)`, minimized in closed form over
//! `u` (`u = |c|`), while `h` is updated by damped projected gradient steps.
//! All operators are applied as pipelines (scatter, banded convolution,
//! prefix sum and their adjoints); no matrix is stored.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::histogram::{cumulative_in_place, suffix_sum_in_place, w1_distance, PixelHistogram};
use crate::noise::NoiseMatrix;
use crate::transforms::TransformCurve;

/// Tuning of [`recover_histogram`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Weight of the empty-bin surrogate.
    pub lambda: f64,
    /// Sharpness of the surrogate `exp(−ρ h)`.
    pub rho: f64,
    /// Initial projected-gradient step; the step at inner iteration τ is
    /// `eta0 / (τ + 1)` in units of the inverse curvature.
    pub eta0: f64,
    pub outer_max: usize,
    pub inner_max: usize,
    /// Relative objective change that ends the outer loop.
    pub tol: f64,
    /// Lower clamp on the auxiliary weights `u`.
    pub u_floor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            lambda: 0.75,
            rho: 1.0,
            eta0: 1.2,
            outer_max: 50,
            inner_max: 10,
            tol: 1e-6,
            u_floor: 1e-12,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda", self.lambda),
            ("rho", self.rho),
            ("eta0", self.eta0),
            ("tol", self.tol),
            ("u_floor", self.u_floor),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::input(format!("{name} must be positive, got {v}")));
            }
        }
        if self.tol >= 1.0 {
            return Err(Error::input("tol must be below 1"));
        }
        if self.outer_max == 0 || self.inner_max == 0 {
            return Err(Error::input("iteration caps must be positive"));
        }
        Ok(())
    }
}

/// Result of [`recover_histogram`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub h_star: PixelHistogram,
    /// `W1(h̃, R T h*) + λ Σ exp(−ρ h*)`.
    pub objective: f64,
    /// Outer iterations performed.
    pub iterations: usize,
    /// Objective after initialization and after each accepted outer iteration.
    pub trace: Vec<f64>,
}

impl SolverReport {
    /// The Wasserstein part of the objective at the solution.
    pub fn fit_term(&self, cfg: &SolverConfig) -> f64 {
        self.objective - surrogate(self.h_star.values(), cfg.lambda, cfg.rho)
    }
}

/// `λ Σ exp(−ρ h_i)`.
pub fn surrogate(h: &[f64], lambda: f64, rho: f64) -> f64 {
    lambda * h.iter().map(|&v| (-rho * v).exp()).sum::<f64>()
}

/// A sum of weighted ℓ1 norms of affine CDF residuals plus a smooth
/// separable term, the shape shared by every histogram subproblem here.
pub(crate) trait L1Problem {
    fn dim(&self) -> usize;
    fn blocks(&self) -> usize;
    fn weight(&self, block: usize) -> f64;
    /// `out = a_k − A_k h`.
    fn residual(&self, block: usize, h: &[f64], out: &mut [f64], scratch: &mut [f64]);
    /// `out = A_k v` without the offset.
    fn linear(&self, block: usize, v: &[f64], out: &mut [f64], scratch: &mut [f64]);
    /// `out = A_kᵀ v`.
    fn adjoint(&self, block: usize, v: &[f64], out: &mut [f64], scratch: &mut [f64]);
    fn smooth(&self, _h: &[f64]) -> f64 {
        0.0
    }
    fn smooth_gradient(&self, _h: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    /// Diagonal of the smooth term's Hessian.
    fn smooth_curvature_at(&self, _h: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// The histogram-recovery objective for a fixed curve and noise matrix.
pub struct HistogramObjective<'a> {
    h_obs: &'a [f64],
    curve: &'a TransformCurve,
    noise: &'a NoiseMatrix,
    lambda: f64,
    rho: f64,
}

impl<'a> HistogramObjective<'a> {
    pub fn new(
        h_obs: &'a PixelHistogram,
        curve: &'a TransformCurve,
        noise: &'a NoiseMatrix,
        cfg: &SolverConfig,
    ) -> Result<Self> {
        check_sizes(h_obs, curve, noise)?;
        Ok(HistogramObjective {
            h_obs: h_obs.values(),
            curve,
            noise,
            lambda: cfg.lambda,
            rho: cfg.rho,
        })
    }

    /// `R T h`.
    pub fn forward(&self, h: &[f64]) -> Vec<f64> {
        let mut th = vec![0.0; h.len()];
        let mut out = vec![0.0; h.len()];
        self.curve.transfer().apply(h, &mut th);
        self.noise.apply(&th, &mut out);
        out
    }

    /// `F (h̃ − R T h)`.
    pub fn residual_cdf(&self, h: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; h.len()];
        let mut scratch = vec![0.0; h.len()];
        self.residual(0, h, &mut out, &mut scratch);
        out
    }

    /// The objective being minimized, with the exact Wasserstein term.
    pub fn exact(&self, h: &[f64]) -> f64 {
        exact_value(self, h)
    }

    /// Variational form for fixed weights `u`.
    pub fn augmented(&self, h: &[f64], u: &[f64]) -> f64 {
        augmented_value(self, h, &[u])
    }

    /// Gradient in `h` of [`HistogramObjective::augmented`]:
    /// `M h − b − λ ρ exp(−ρ h)`.
    pub fn augmented_gradient(&self, h: &[f64], u: &[f64]) -> Vec<f64> {
        let mut ws = Workspace::new(h.len(), 1);
        let mut g = vec![0.0; h.len()];
        augmented_gradient(self, h, &[u], &mut g, &mut ws);
        g
    }
}

impl L1Problem for HistogramObjective<'_> {
    fn dim(&self) -> usize {
        self.h_obs.len()
    }

    fn blocks(&self) -> usize {
        1
    }

    fn weight(&self, _block: usize) -> f64 {
        1.0
    }

    fn residual(&self, _block: usize, h: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        self.curve.transfer().apply(h, scratch);
        self.noise.apply(scratch, out);
        for (o, &obs) in out.iter_mut().zip(self.h_obs) {
            *o = obs - *o;
        }
        cumulative_in_place(out);
    }

    fn linear(&self, _block: usize, v: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        self.curve.transfer().apply(v, scratch);
        self.noise.apply(scratch, out);
        cumulative_in_place(out);
    }

    fn adjoint(&self, _block: usize, v: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        scratch.copy_from_slice(v);
        suffix_sum_in_place(scratch);
        self.noise.apply_transpose(scratch, out);
        self.curve.transfer().apply_transpose(out, scratch);
        out.copy_from_slice(scratch);
    }

    fn smooth(&self, h: &[f64]) -> f64 {
        surrogate(h, self.lambda, self.rho)
    }

    fn smooth_gradient(&self, h: &[f64], out: &mut [f64]) {
        let scale = -self.lambda * self.rho;
        for (o, &v) in out.iter_mut().zip(h) {
            *o = scale * (-self.rho * v).exp();
        }
    }

    fn smooth_curvature_at(&self, h: &[f64], out: &mut [f64]) {
        let scale = self.lambda * self.rho * self.rho;
        for (o, &v) in out.iter_mut().zip(h) {
            *o = scale * (-self.rho * v).exp();
        }
    }
}

pub(crate) struct Workspace {
    pub residuals: Vec<Vec<f64>>,
    pub scratch: Vec<f64>,
    pub tmp: Vec<f64>,
    pub acc: Vec<f64>,
}

impl Workspace {
    pub fn new(dim: usize, blocks: usize) -> Self {
        Workspace {
            residuals: vec![vec![0.0; dim]; blocks],
            scratch: vec![0.0; dim],
            tmp: vec![0.0; dim],
            acc: vec![0.0; dim],
        }
    }
}

pub(crate) fn exact_value<P: L1Problem>(p: &P, h: &[f64]) -> f64 {
    let mut ws = Workspace::new(p.dim(), p.blocks());
    exact_with(p, h, &mut ws)
}

fn exact_with<P: L1Problem>(p: &P, h: &[f64], ws: &mut Workspace) -> f64 {
    let mut total = p.smooth(h);
    for k in 0..p.blocks() {
        p.residual(k, h, &mut ws.residuals[k], &mut ws.scratch);
        total += p.weight(k) * ws.residuals[k].iter().map(|c| c.abs()).sum::<f64>();
    }
    total
}

pub(crate) fn augmented_value<P: L1Problem>(p: &P, h: &[f64], u: &[&[f64]]) -> f64 {
    let mut ws = Workspace::new(p.dim(), p.blocks());
    augmented_with(p, h, u, &mut ws)
}

fn augmented_with<P: L1Problem>(p: &P, h: &[f64], u: &[&[f64]], ws: &mut Workspace) -> f64 {
    let mut total = p.smooth(h);
    for k in 0..p.blocks() {
        p.residual(k, h, &mut ws.residuals[k], &mut ws.scratch);
        let part: f64 = ws.residuals[k]
            .iter()
            .zip(u[k])
            .map(|(c, w)| c * c / w + w)
            .sum();
        total += 0.5 * p.weight(k) * part;
    }
    total
}

fn augmented_gradient<P: L1Problem>(
    p: &P,
    h: &[f64],
    u: &[&[f64]],
    out: &mut [f64],
    ws: &mut Workspace,
) {
    p.smooth_gradient(h, out);
    for k in 0..p.blocks() {
        p.residual(k, h, &mut ws.residuals[k], &mut ws.scratch);
        for ((t, c), w) in ws.tmp.iter_mut().zip(&ws.residuals[k]).zip(u[k]) {
            *t = c / w;
        }
        p.adjoint(k, &ws.tmp, &mut ws.acc, &mut ws.scratch);
        let wk = p.weight(k);
        for (o, a) in out.iter_mut().zip(&ws.acc) {
            *o -= wk * a;
        }
    }
}

fn update_weights(residual: &[f64], floor: f64, u: &mut [f64]) {
    for (w, c) in u.iter_mut().zip(residual) {
        *w = c.abs().max(floor);
    }
}

/// Weighted least-squares fit of a non-decreasing sequence (pool adjacent
/// violators), in place.
pub(crate) fn isotonic_in_place(x: &mut [f64], w: &[f64]) {
    // (weighted mean, total weight, length) per pooled block
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(x.len());
    for (&v, &wt) in x.iter().zip(w) {
        let mut cur = (v, wt, 1usize);
        while let Some(&(m, tw, len)) = blocks.last() {
            if m <= cur.0 {
                break;
            }
            blocks.pop();
            let total = tw + cur.1;
            cur = ((m * tw + cur.0 * cur.1) / total, total, len + cur.2);
        }
        blocks.push(cur);
    }
    let mut i = 0;
    for (m, _, len) in blocks {
        x[i..i + len].fill(m);
        i += len;
    }
}

/// Outcome of the shared block-coordinate loop.
pub(crate) struct IrlsOutcome {
    pub h: Vec<f64>,
    pub objective: f64,
    pub trace: Vec<f64>,
    pub iterations: usize,
}

/// Alternates updates of `h` (weights fixed) with the closed-form weight
/// update `u_k = max(|c_k(h)|, u_floor)`.
///
/// The `h` update works on the cumulative histogram `H = F h`, where the
/// simplex becomes `0 <= H_0 <= ... <= H_{n-1} <= H_n = 1`. Each inner step
/// is a gradient step scaled by a diagonal majorizer of the Hessian followed
/// by a weighted isotonic projection, so every iterate stays on the simplex.
/// An outer iterate is kept only if the exact objective does not increase.
pub(crate) fn minimize<P: L1Problem>(
    p: &P,
    h0: Vec<f64>,
    eta0: f64,
    outer_max: usize,
    inner_max: usize,
    tol: f64,
    u_floor: f64,
) -> Result<IrlsOutcome> {
    let dim = p.dim();
    let top = dim - 1;
    let blocks = p.blocks();
    let mut ws = Workspace::new(dim, blocks);
    let mut h = h0;
    let mut objective = exact_with(p, &h, &mut ws);
    let mut trace = vec![objective];
    if !objective.is_finite() {
        return Err(Error::numerical(
            "objective is not finite at the start",
            trace,
        ));
    }
    let mut u: Vec<Vec<f64>> = vec![vec![0.0; dim]; blocks];
    for k in 0..blocks {
        update_weights(&ws.residuals[k], u_floor, &mut u[k]);
    }

    // K 1 for K = A_k composed with differencing, on the free coordinates.
    let mut ones = vec![0.0; dim];
    ones[0] += 1.0;
    ones[top] -= 1.0;
    let k_ones: Vec<Vec<f64>> = (0..blocks)
        .map(|k| {
            let mut out = vec![0.0; dim];
            p.linear(k, &ones, &mut out, &mut ws.scratch);
            out
        })
        .collect();

    let mut grad = vec![0.0; dim];
    let mut quad = vec![0.0; dim];
    let mut diag = vec![0.0; dim];
    let mut curv = vec![0.0; dim];
    let mut cum = vec![0.0; dim];
    let mut target = vec![0.0; dim];
    let mut cand = vec![0.0; dim];
    let mut iterations = 0;

    for _ in 0..outer_max {
        iterations += 1;
        let u_refs: Vec<&[f64]> = u.iter().map(Vec::as_slice).collect();

        quad.fill(0.0);
        for k in 0..blocks {
            for ((t, a), w) in ws.tmp.iter_mut().zip(&k_ones[k]).zip(u_refs[k]) {
                *t = a / w;
            }
            let tmp = std::mem::take(&mut ws.tmp);
            p.adjoint(k, &tmp, &mut ws.acc, &mut ws.scratch);
            ws.tmp = tmp;
            let wk = p.weight(k);
            for i in 0..top {
                quad[i] += wk * (ws.acc[i] - ws.acc[i + 1]).abs();
            }
        }

        let mut h_inner = h.clone();
        let mut level = augmented_with(p, &h_inner, &u_refs, &mut ws);
        for tau in 0..inner_max {
            augmented_gradient(p, &h_inner, &u_refs, &mut grad, &mut ws);
            p.smooth_curvature_at(&h_inner, &mut curv);
            cum.copy_from_slice(&h_inner);
            cumulative_in_place(&mut cum);
            for i in 0..top {
                let d = quad[i] + 2.0 * (curv[i] + curv[i + 1]);
                diag[i] = if d > 0.0 { d } else { f64::MIN_POSITIVE };
            }
            let mut step = eta0 / (tau as f64 + 1.0);
            let mut accepted = false;
            for _ in 0..30 {
                for i in 0..top {
                    target[i] = cum[i] - step * (grad[i] - grad[i + 1]) / diag[i];
                }
                isotonic_in_place(&mut target[..top], &diag[..top]);
                let mut prev = 0.0;
                for i in 0..top {
                    let v = target[i].clamp(0.0, 1.0);
                    cand[i] = v - prev;
                    prev = v;
                }
                cand[top] = 1.0 - prev;
                let next = augmented_with(p, &cand, &u_refs, &mut ws);
                if next <= level {
                    accepted = next < level;
                    if accepted {
                        std::mem::swap(&mut h_inner, &mut cand);
                        level = next;
                    }
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        drop(u_refs);

        let next = exact_with(p, &h_inner, &mut ws);
        if !next.is_finite() {
            return Err(Error::numerical("objective became non-finite", trace));
        }
        if next > objective {
            break;
        }
        for k in 0..blocks {
            update_weights(&ws.residuals[k], u_floor, &mut u[k]);
        }
        let change = (objective - next) / objective.abs().max(f64::MIN_POSITIVE);
        h = h_inner;
        objective = next;
        trace.push(objective);
        if change < tol {
            break;
        }
    }
    Ok(IrlsOutcome {
        h,
        objective,
        trace,
        iterations,
    })
}

fn check_sizes(h_obs: &PixelHistogram, curve: &TransformCurve, noise: &NoiseMatrix) -> Result<()> {
    if curve.top() != h_obs.top() || noise.top() != h_obs.top() {
        return Err(Error::input(format!(
            "size mismatch: histogram 0..={}, curve 0..={}, noise 0..={}",
            h_obs.top(),
            curve.top(),
            noise.top()
        )));
    }
    Ok(())
}

/// Pulls an observed histogram back through a curve: the mass of observed
/// bin `j` is split evenly over `{i : φ(i) = j}`. Mass on a level the curve
/// never produces goes to the nearest level it does produce (lower on ties).
pub fn pull_back(h_obs: &[f64], curve: &TransformCurve) -> Vec<f64> {
    let n = curve.top();
    let phi = curve.phi();
    let mut preimage = vec![0usize; n + 1];
    for &j in phi {
        preimage[j] += 1;
    }
    let mut mass = vec![0.0; n + 1];
    // Nearest produced level, scanning from both sides.
    let mut left = vec![usize::MAX; n + 1];
    let mut last = usize::MAX;
    for j in 0..=n {
        if preimage[j] > 0 {
            last = j;
        }
        left[j] = last;
    }
    let mut next = usize::MAX;
    for j in (0..=n).rev() {
        if preimage[j] > 0 {
            next = j;
        }
        let target = match (left[j], next) {
            (usize::MAX, r) => r,
            (l, usize::MAX) => l,
            (l, r) => {
                if j - l <= r - j {
                    l
                } else {
                    r
                }
            }
        };
        mass[target] += h_obs[j];
    }
    phi.iter().map(|&j| mass[j] / preimage[j] as f64).collect()
}

/// Recovers the original histogram from an observed one, for a known curve
/// and noise matrix.
pub fn recover_histogram(
    h_obs: &PixelHistogram,
    curve: &TransformCurve,
    noise: &NoiseMatrix,
    cfg: &SolverConfig,
) -> Result<SolverReport> {
    cfg.validate()?;
    let problem = HistogramObjective::new(h_obs, curve, noise, cfg)?;
    let h0 = pull_back(h_obs.values(), curve);
    let out = minimize(
        &problem,
        h0,
        cfg.eta0,
        cfg.outer_max,
        cfg.inner_max,
        cfg.tol,
        cfg.u_floor,
    )?;
    Ok(SolverReport {
        h_star: PixelHistogram::from_simplex(h_obs.bits(), out.h),
        objective: out.objective,
        iterations: out.iterations,
        trace: out.trace,
    })
}

/// Evaluates `W1(h̃, R T h) + λ Σ exp(−ρ h)` without optimizing.
pub fn solver_objective(
    h: &PixelHistogram,
    h_obs: &PixelHistogram,
    curve: &TransformCurve,
    noise: &NoiseMatrix,
    cfg: &SolverConfig,
) -> Result<f64> {
    if h.len() != h_obs.len() {
        return Err(Error::input("histogram lengths differ"));
    }
    let problem = HistogramObjective::new(h_obs, curve, noise, cfg)?;
    let predicted = problem.forward(h.values());
    Ok(w1_distance(h_obs.values(), &predicted)? + surrogate(h.values(), cfg.lambda, cfg.rho))
}

/// Evaluates the variational ℓ1 identity at its minimizer `z = |x|`:
/// returns `(½ (Σ x_i²/z_i + Σ z_i), z)`, with `0/0` contributing zero.
pub fn l1_variational_check(x: &[f64]) -> (f64, Vec<f64>) {
    let z: Vec<f64> = x.iter().map(|v| v.abs()).collect();
    let quad: f64 = x
        .iter()
        .zip(&z)
        .map(|(v, w)| if *w == 0.0 { 0.0 } else { v * v / w })
        .sum();
    let value = 0.5 * (quad + z.iter().sum::<f64>());
    (value, z)
}
