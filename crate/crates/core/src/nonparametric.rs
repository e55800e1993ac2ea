//! Joint estimation of a free-form monotone curve and the original histogram.
//!
//! The noisy observation is decoupled from the curve through an intermediate
//! histogram `ĥ`: minimize `W1(h̃, R ĥ) + ξ W1(ĥ, T_φ h)` by cycling through
//! `h` (histogram recovery for the current curve), `ĥ`, and `φ` (histogram
//! matching from `h` to `ĥ`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::histogram::{cumulative_in_place, suffix_sum_in_place, w1_distance, PixelHistogram};
use crate::noise::NoiseMatrix;
use crate::solver::{minimize, recover_histogram, L1Problem, SolverConfig};
use crate::transforms::{match_cdfs, TransformCurve};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NonparamConfig {
    /// Weight of the coupling term `W1(ĥ, T_φ h)`.
    pub xi: f64,
    /// Maximum number of full `h → ĥ → φ` rounds.
    pub alt_max: usize,
    #[serde(flatten)]
    pub solver: SolverConfig,
}

impl Default for NonparamConfig {
    fn default() -> Self {
        NonparamConfig {
            xi: 10.0,
            alt_max: 15,
            solver: SolverConfig::default(),
        }
    }
}

impl NonparamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.xi.is_finite() && self.xi > 0.0) {
            return Err(Error::input(format!(
                "xi must be positive, got {}",
                self.xi
            )));
        }
        if self.alt_max == 0 {
            return Err(Error::input("alt_max must be positive"));
        }
        self.solver.validate()
    }
}

/// Result of [`solve_h_hat`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HHatReport {
    pub h_hat: PixelHistogram,
    /// `W1(h̃, R ĥ) + ξ W1(ĥ, T_φ h)` at `h_hat`.
    pub objective: f64,
    pub iterations: usize,
    pub trace: Vec<f64>,
}

/// Result of [`estimate_nonparametric`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonparamEstimate {
    pub curve: TransformCurve,
    pub h_star: PixelHistogram,
    pub h_hat: PixelHistogram,
    /// Coupled objective after initialization and after each kept round.
    pub objective_trace: Vec<f64>,
    pub rounds: usize,
}

struct HHatProblem<'a> {
    h_obs: &'a [f64],
    /// `T_φ h`
    pushed: Vec<f64>,
    noise: &'a NoiseMatrix,
    xi: f64,
}

impl L1Problem for HHatProblem<'_> {
    fn dim(&self) -> usize {
        self.h_obs.len()
    }

    fn blocks(&self) -> usize {
        2
    }

    fn weight(&self, block: usize) -> f64 {
        if block == 0 {
            1.0
        } else {
            self.xi
        }
    }

    fn residual(&self, block: usize, h: &[f64], out: &mut [f64], _scratch: &mut [f64]) {
        if block == 0 {
            self.noise.apply(h, out);
            for (o, &obs) in out.iter_mut().zip(self.h_obs) {
                *o = obs - *o;
            }
        } else {
            for ((o, &t), &v) in out.iter_mut().zip(&self.pushed).zip(h) {
                *o = t - v;
            }
        }
        cumulative_in_place(out);
    }

    fn linear(&self, block: usize, v: &[f64], out: &mut [f64], _scratch: &mut [f64]) {
        if block == 0 {
            self.noise.apply(v, out);
        } else {
            out.copy_from_slice(v);
        }
        cumulative_in_place(out);
    }

    fn adjoint(&self, block: usize, v: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        scratch.copy_from_slice(v);
        suffix_sum_in_place(scratch);
        if block == 0 {
            self.noise.apply_transpose(scratch, out);
        } else {
            out.copy_from_slice(scratch);
        }
    }
}

fn check_sizes(
    h_obs: &PixelHistogram,
    h: &PixelHistogram,
    curve: &TransformCurve,
    noise: &NoiseMatrix,
) -> Result<()> {
    let top = h_obs.top();
    if h.top() != top || curve.top() != top || noise.top() != top {
        return Err(Error::input("histogram, curve and noise sizes differ"));
    }
    Ok(())
}

fn push_forward(curve: &TransformCurve, h: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; h.len()];
    curve.transfer().apply(h, &mut out);
    out
}

/// `W1(h̃, R ĥ) + ξ W1(ĥ, T_φ h)`.
pub fn coupled_objective(
    h_obs: &PixelHistogram,
    h_hat: &PixelHistogram,
    h: &PixelHistogram,
    curve: &TransformCurve,
    noise: &NoiseMatrix,
    xi: f64,
) -> Result<f64> {
    check_sizes(h_obs, h, curve, noise)?;
    if h_hat.top() != h_obs.top() {
        return Err(Error::input("histogram sizes differ"));
    }
    let mut blurred = vec![0.0; h_hat.len()];
    noise.apply(h_hat.values(), &mut blurred);
    let pushed = push_forward(curve, h.values());
    Ok(w1_distance(h_obs.values(), &blurred)? + xi * w1_distance(h_hat.values(), &pushed)?)
}

/// Minimizes `W1(h̃, R ĥ) + ξ W1(ĥ, T_φ h)` over `ĥ`, starting from `T_φ h`.
pub fn solve_h_hat(
    h_obs: &PixelHistogram,
    h: &PixelHistogram,
    curve: &TransformCurve,
    noise: &NoiseMatrix,
    cfg: &NonparamConfig,
) -> Result<HHatReport> {
    cfg.validate()?;
    check_sizes(h_obs, h, curve, noise)?;
    let pushed = push_forward(curve, h.values());
    solve_h_hat_from(h_obs, pushed.clone(), pushed, noise, cfg)
}

fn solve_h_hat_from(
    h_obs: &PixelHistogram,
    pushed: Vec<f64>,
    start: Vec<f64>,
    noise: &NoiseMatrix,
    cfg: &NonparamConfig,
) -> Result<HHatReport> {
    let problem = HHatProblem {
        h_obs: h_obs.values(),
        pushed,
        noise,
        xi: cfg.xi,
    };
    let s = &cfg.solver;
    let out = minimize(
        &problem,
        start,
        s.eta0,
        s.outer_max,
        s.inner_max,
        s.tol,
        s.u_floor,
    )?;
    Ok(HHatReport {
        h_hat: PixelHistogram::from_simplex(h_obs.bits(), out.h),
        objective: out.objective,
        iterations: out.iterations,
        trace: out.trace,
    })
}

/// Estimates a monotone curve and the original histogram from an observed
/// histogram alone.
///
/// Starts from the identity curve with `h = ĥ = h̃`, then repeats: recover
/// `h` for the current curve, re-solve `ĥ`, and set the curve to the
/// histogram-matching map from `h` to `ĥ`. A round is kept only if the coupled
/// objective does not increase; the loop ends on a relative change below the
/// solver tolerance or after `alt_max` rounds.
pub fn estimate_nonparametric(
    h_obs: &PixelHistogram,
    noise: &NoiseMatrix,
    cfg: &NonparamConfig,
) -> Result<NonparamEstimate> {
    cfg.validate()?;
    let top = h_obs.top();
    if noise.top() != top {
        return Err(Error::input("noise matrix and histogram sizes differ"));
    }
    let mut curve = TransformCurve::identity(top);
    let mut h = h_obs.clone();
    let mut h_hat = h_obs.clone();
    let mut objective = coupled_objective(h_obs, &h_hat, &h, &curve, noise, cfg.xi)?;
    let mut trace = vec![objective];
    let mut rounds = 0;

    for _ in 0..cfg.alt_max {
        rounds += 1;
        let h_next = recover_histogram(h_obs, &curve, noise, &cfg.solver)?.h_star;

        let pushed = push_forward(&curve, h_next.values());
        // Warm start from the previous ĥ when it is the better point.
        let from_pushed = coupled_objective(
            h_obs,
            &PixelHistogram::from_simplex(h_obs.bits(), pushed.clone()),
            &h_next,
            &curve,
            noise,
            cfg.xi,
        )?;
        let from_prev = coupled_objective(h_obs, &h_hat, &h_next, &curve, noise, cfg.xi)?;
        let start = if from_prev < from_pushed {
            h_hat.values().to_vec()
        } else {
            pushed.clone()
        };
        let hat_next = solve_h_hat_from(h_obs, pushed, start, noise, cfg)?.h_hat;

        let curve_next = match_cdfs(h_next.values(), hat_next.values());
        let next = coupled_objective(h_obs, &hat_next, &h_next, &curve_next, noise, cfg.xi)?;
        if !next.is_finite() {
            return Err(Error::numerical(
                "coupled objective became non-finite",
                trace,
            ));
        }
        if next > objective + 1e-12 {
            break;
        }
        let unchanged = curve_next == curve;
        let change = (objective - next) / objective.abs().max(f64::MIN_POSITIVE);
        curve = curve_next;
        h = h_next;
        h_hat = hat_next;
        objective = next;
        trace.push(objective);
        if unchanged && change < cfg.solver.tol {
            break;
        }
    }
    Ok(NonparamEstimate {
        curve,
        h_star: h,
        h_hat,
        objective_trace: trace,
        rounds,
    })
}
