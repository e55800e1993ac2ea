//! Batch experiments on synthetic images with known curves.
//!
//! Cases are generated from per-case seeds derived from one run seed, solved
//! as a parallel map and collected in case order, so reports do not depend
//! on scheduling.

use std::time::Instant;

use ceest::histogram::bins_for_bits;
use ceest::localize::{de_fp_best_flip, detect_regions, EnergyParams};
use ceest::metrics::{accuracy_rate, relative_curve_error};
use ceest::noise::gaussian_noise_matrix;
use ceest::nonparametric::{estimate_nonparametric, NonparamConfig};
use ceest::parametric::{estimate_parametric, Family, ParamGrid};
use ceest::solver::SolverConfig;
use ceest::synth::{synth_composite, synth_image, CurveSpec, Region, SynthSpec};
use ceest::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Seed of case `case` within a run seeded with `seed`.
pub fn case_seed(seed: u64, case: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(case as u64);
    rng.random()
}

fn timed<T>(timings: bool, f: impl FnOnce() -> Result<T>) -> Result<(T, Option<f64>)> {
    let start = Instant::now();
    let out = f()?;
    Ok((out, timings.then(|| start.elapsed().as_secs_f64())))
}

fn check_count(n: usize, what: &str) -> Result<()> {
    if n == 0 {
        return Err(Error::Input(format!("{what} must be positive")));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct GammaEvalConfig {
    pub images: usize,
    pub bits: u32,
    pub width: usize,
    pub height: usize,
    pub gammas: Vec<f64>,
    /// Noise levels, one cell each.
    pub sigmas: Vec<f64>,
    /// Probing noise level; `None` uses each cell's own sigma.
    pub probe_sigma: Option<f64>,
    pub grid: ParamGrid,
    pub eps: f64,
    pub solver: SolverConfig,
    pub seed: u64,
    pub timings: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaCase {
    pub image: usize,
    pub seed: u64,
    pub gamma: f64,
    pub estimate: f64,
    pub objective: f64,
    pub hit: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seconds: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaRate {
    pub gamma: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaCell {
    pub sigma: f64,
    pub probe_sigma: f64,
    pub accuracy: f64,
    pub by_gamma: Vec<GammaRate>,
    pub cases: Vec<GammaCase>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaEval {
    pub eps: f64,
    pub cells: Vec<GammaCell>,
}

/// Image `k` uses `gammas[k % len]`; every cell reuses the same images with
/// a different noise level.
pub fn eval_gamma(cfg: &GammaEvalConfig) -> Result<GammaEval> {
    check_count(cfg.images, "image count")?;
    if cfg.gammas.is_empty() || cfg.sigmas.is_empty() {
        return Err(Error::Input("need at least one gamma and one sigma".into()));
    }
    if cfg.grid.family() != Family::Gamma {
        return Err(Error::Input("gamma evaluation needs a gamma grid".into()));
    }
    let n = bins_for_bits(cfg.bits)? - 1;
    let mut cells = Vec::with_capacity(cfg.sigmas.len());
    for &sigma in &cfg.sigmas {
        let probe = cfg.probe_sigma.unwrap_or(sigma);
        let noise = gaussian_noise_matrix(probe, n)?;
        let cases = (0..cfg.images)
            .into_par_iter()
            .map(|k| {
                let gamma = cfg.gammas[k % cfg.gammas.len()];
                let seed = case_seed(cfg.seed, k);
                let ((estimate, objective), seconds) = timed(cfg.timings, || {
                    let mut spec = SynthSpec::new(
                        cfg.bits,
                        cfg.width,
                        cfg.height,
                        CurveSpec::Gamma { gamma },
                        seed,
                    );
                    spec.sigma = sigma;
                    let h_obs = synth_image(&spec)?.transformed.histogram()?;
                    let est = estimate_parametric(&h_obs, &cfg.grid, &noise, &cfg.solver)?;
                    let g = est.best_param.gamma().expect("gamma grid");
                    Ok((g, est.best_objective))
                })?;
                Ok(GammaCase {
                    image: k,
                    seed,
                    gamma,
                    estimate,
                    objective,
                    hit: (estimate - gamma).abs() <= cfg.eps,
                    seconds,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let mut by_gamma = Vec::new();
        for &gamma in &cfg.gammas {
            if by_gamma.iter().any(|r: &GammaRate| r.gamma == gamma) {
                continue;
            }
            let est: Vec<f64> = cases
                .iter()
                .filter(|c| c.gamma == gamma)
                .map(|c| c.estimate)
                .collect();
            if !est.is_empty() {
                by_gamma.push(GammaRate {
                    gamma,
                    accuracy: accuracy_rate(&est, gamma, cfg.eps)?,
                });
            }
        }
        let hits = cases.iter().filter(|c| c.hit).count();
        cells.push(GammaCell {
            sigma,
            probe_sigma: probe,
            accuracy: hits as f64 / cases.len() as f64,
            by_gamma,
            cases,
        });
    }
    Ok(GammaEval {
        eps: cfg.eps,
        cells,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    /// Monotone spline through random control points.
    Spline,
    HistEq,
}

#[derive(Clone, Debug)]
pub struct CurveEvalConfig {
    pub kind: CurveKind,
    pub cases: usize,
    pub bits: u32,
    pub width: usize,
    pub height: usize,
    pub sigma: f64,
    pub eps: f64,
    pub nonparam: NonparamConfig,
    pub seed: u64,
    pub timings: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveCase {
    pub case: usize,
    pub seed: u64,
    pub curve: CurveSpec,
    /// `‖φ̂ − φ*‖₂ / ‖φ*‖₂`
    pub error: f64,
    pub hit: bool,
    pub rounds: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seconds: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveEval {
    pub kind: CurveKind,
    pub eps: f64,
    pub accuracy: f64,
    pub cases: Vec<CurveCase>,
}

/// Control points `(0,0)`, three interior knots with sorted random outputs,
/// `(n,n)`.
pub fn random_spline(n: usize, seed: u64) -> CurveSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ys: Vec<usize> = (0..3).map(|_| rng.random_range(0..=n)).collect();
    ys.sort_unstable();
    let mut points = vec![(0, 0)];
    points.extend((1..=3).map(|q| q * n / 4).zip(ys));
    points.push((n, n));
    CurveSpec::Spline { points }
}

pub fn eval_curve(cfg: &CurveEvalConfig) -> Result<CurveEval> {
    check_count(cfg.cases, "case count")?;
    let n = bins_for_bits(cfg.bits)? - 1;
    let noise = gaussian_noise_matrix(cfg.sigma, n)?;
    let cases = (0..cfg.cases)
        .into_par_iter()
        .map(|k| {
            let seed = case_seed(cfg.seed, k);
            let curve = match cfg.kind {
                CurveKind::Spline => random_spline(n, seed),
                CurveKind::HistEq => CurveSpec::HistEq,
            };
            let ((error, rounds), seconds) = timed(cfg.timings, || {
                let mut spec = SynthSpec::new(cfg.bits, cfg.width, cfg.height, curve.clone(), seed);
                spec.sigma = cfg.sigma;
                let img = synth_image(&spec)?;
                let est =
                    estimate_nonparametric(&img.transformed.histogram()?, &noise, &cfg.nonparam)?;
                Ok((relative_curve_error(&est.curve, &img.curve)?, est.rounds))
            })?;
            Ok(CurveCase {
                case: k,
                seed,
                curve,
                error,
                hit: error <= cfg.eps,
                rounds,
                seconds,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let hits = cases.iter().filter(|c| c.hit).count();
    Ok(CurveEval {
        kind: cfg.kind,
        eps: cfg.eps,
        accuracy: hits as f64 / cases.len() as f64,
        cases,
    })
}

#[derive(Clone, Debug)]
pub struct LocalizeEvalConfig {
    pub cases: usize,
    pub bits: u32,
    pub size: usize,
    /// Curve outside the region.
    pub gamma0: f64,
    /// Curve inside the region.
    pub gamma1: f64,
    pub area_min: f64,
    pub area_max: f64,
    pub params: EnergyParams,
    pub seed: u64,
    pub timings: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizeCase {
    pub case: usize,
    pub seed: u64,
    pub region: Region,
    pub area: f64,
    pub de: f64,
    pub fp: f64,
    pub rounds: usize,
    pub degenerate: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seconds: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizeEval {
    pub mean_de: f64,
    pub mean_fp: f64,
    pub cases: Vec<LocalizeCase>,
}

/// Random rectangle covering a fraction in `[area_min, area_max]` of a
/// `size × size` image, aspect ratio within 3:4 and 4:3.
pub fn random_region(size: usize, area_min: f64, area_max: f64, seed: u64) -> Region {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let area = rng.random_range(area_min..=area_max) * (size * size) as f64;
    let aspect: f64 = rng.random_range(0.75..=4.0 / 3.0);
    let width = ((area * aspect).sqrt().round() as usize).clamp(1, size);
    let height = ((area / width as f64).round() as usize).clamp(1, size);
    let x = rng.random_range(0..=size - width);
    let y = rng.random_range(0..=size - height);
    Region::Rect {
        x,
        y,
        width,
        height,
    }
}

pub fn eval_localize(cfg: &LocalizeEvalConfig) -> Result<LocalizeEval> {
    check_count(cfg.cases, "case count")?;
    if !(0.0 < cfg.area_min && cfg.area_min <= cfg.area_max && cfg.area_max < 1.0) {
        return Err(Error::Input(
            "area range must satisfy 0 < min <= max < 1".into(),
        ));
    }
    let cases = (0..cfg.cases)
        .into_par_iter()
        .map(|k| {
            let seed = case_seed(cfg.seed, k);
            let region = random_region(cfg.size, cfg.area_min, cfg.area_max, seed);
            let ((area, de, fp, rounds, degenerate), seconds) = timed(cfg.timings, || {
                let spec0 = SynthSpec::new(
                    cfg.bits,
                    cfg.size,
                    cfg.size,
                    CurveSpec::Gamma { gamma: cfg.gamma0 },
                    seed,
                );
                let spec1 = SynthSpec {
                    curve: CurveSpec::Gamma { gamma: cfg.gamma1 },
                    ..spec0.clone()
                };
                let c = synth_composite(&spec0, &spec1, &region)?;
                let det = detect_regions(&c.image, &cfg.params)?;
                let pred: Vec<bool> = det.labels.pixel_mask.iter().map(|&m| m == 1).collect();
                let (de, fp) = de_fp_best_flip(&pred, &c.truth_mask)?;
                let area =
                    c.truth_mask.iter().filter(|&&m| m).count() as f64 / c.truth_mask.len() as f64;
                Ok((
                    area,
                    de,
                    fp,
                    det.diagnostics.rounds,
                    det.diagnostics.degenerate,
                ))
            })?;
            Ok(LocalizeCase {
                case: k,
                seed,
                region,
                area,
                de,
                fp,
                rounds,
                degenerate,
                seconds,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let m = cases.len() as f64;
    Ok(LocalizeEval {
        mean_de: cases.iter().map(|c| c.de).sum::<f64>() / m,
        mean_fp: cases.iter().map(|c| c.fp).sum::<f64>() / m,
        cases,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn case_seeds_differ_and_repeat() {
        let a: Vec<u64> = (0..5).map(|k| case_seed(7, k)).collect();
        let b: Vec<u64> = (0..5).map(|k| case_seed(7, k)).collect();
        assert_eq!(a, b);
        let mut d = a.clone();
        d.dedup();
        assert_eq!(d.len(), 5);
        assert_ne!(case_seed(8, 0), a[0]);
    }

    #[test]
    fn random_spline_is_monotone() {
        for seed in 0..20 {
            let CurveSpec::Spline { points } = random_spline(255, seed) else {
                unreachable!()
            };
            assert_eq!(points.first(), Some(&(0, 0)));
            assert_eq!(points.last(), Some(&(255, 255)));
            assert!(points
                .windows(2)
                .all(|w| w[0].0 < w[1].0 && w[0].1 <= w[1].1));
        }
    }

    #[test]
    fn random_region_area_in_range() {
        for seed in 0..50 {
            let region = random_region(512, 0.2, 0.4, seed);
            let mask = region.to_mask(512, 512).unwrap();
            let a = mask.iter().filter(|&&m| m).count() as f64 / mask.len() as f64;
            assert!((0.195..=0.405).contains(&a), "{a}");
        }
    }

    #[test]
    fn small_gamma_eval_runs() {
        let cfg = GammaEvalConfig {
            images: 2,
            bits: 8,
            width: 64,
            height: 64,
            gammas: vec![0.5, 2.0],
            sigmas: vec![0.0],
            probe_sigma: None,
            grid: ParamGrid::gamma([0.5, 1.0, 2.0]).unwrap(),
            eps: 0.05,
            solver: SolverConfig::default(),
            seed: 1,
            timings: false,
        };
        let r = eval_gamma(&cfg).unwrap();
        assert_eq!(r.cells.len(), 1);
        assert_eq!(r.cells[0].cases.len(), 2);
        assert!((0.0..=1.0).contains(&r.cells[0].accuracy));
        assert_eq!(eval_gamma(&cfg).unwrap(), r);
    }
}
