//! Grid search over parametric enhancement families.
//!
//! Each probed parameter is scored by the minimum of the recovery objective
//! for the curve it produces; the estimate is the grid point with the lowest
//! score.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::histogram::PixelHistogram;
use crate::noise::NoiseMatrix;
use crate::solver::{recover_histogram, SolverConfig};
use crate::transforms::{gamma_curve, sigmoid_curve, TransformCurve};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gamma,
    Sigmoid,
}

/// One grid point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Param {
    Gamma(f64),
    Sigmoid { alpha: f64, mu: f64 },
}

impl Param {
    pub fn family(&self) -> Family {
        match self {
            Param::Gamma(_) => Family::Gamma,
            Param::Sigmoid { .. } => Family::Sigmoid,
        }
    }

    pub fn curve(&self, n: usize) -> Result<TransformCurve> {
        match *self {
            Param::Gamma(g) => gamma_curve(g, n),
            Param::Sigmoid { alpha, mu } => sigmoid_curve(alpha, mu, n),
        }
    }

    pub fn gamma(&self) -> Option<f64> {
        match *self {
            Param::Gamma(g) => Some(g),
            Param::Sigmoid { .. } => None,
        }
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Param::Gamma(g) => write!(f, "{g}"),
            Param::Sigmoid { alpha, mu } => write!(f, "{alpha};{mu}"),
        }
    }
}

/// The parameters probed by [`estimate_parametric`], in grid order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamGrid {
    family: Family,
    values: Vec<Param>,
}

impl ParamGrid {
    pub fn new(family: Family, values: Vec<Param>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::input("parameter grid is empty"));
        }
        for p in &values {
            if p.family() != family {
                return Err(Error::input("grid mixes parameter families"));
            }
            match *p {
                Param::Gamma(g) if !(g.is_finite() && g > 0.0) => {
                    return Err(Error::input(format!("gamma must be positive, got {g}")));
                }
                Param::Sigmoid { alpha, mu }
                    if !(alpha.is_finite() && alpha > 0.0 && (0.0..=1.0).contains(&mu)) =>
                {
                    return Err(Error::input(format!(
                        "invalid sigmoid parameters alpha={alpha}, mu={mu}"
                    )));
                }
                _ => {}
            }
        }
        Ok(ParamGrid { family, values })
    }

    pub fn gamma(values: impl IntoIterator<Item = f64>) -> Result<Self> {
        ParamGrid::new(
            Family::Gamma,
            values.into_iter().map(Param::Gamma).collect(),
        )
    }

    /// `{0.1 : 0.01 : 2.5}`.
    pub fn default_gamma() -> Self {
        ParamGrid::gamma(parse_range("0.1:0.01:2.5").expect("static range")).expect("static grid")
    }

    /// Cartesian product `alpha × mu`, alpha varying slowest.
    pub fn sigmoid(alphas: &[f64], mus: &[f64]) -> Result<Self> {
        if alphas.len().saturating_mul(mus.len()) > MAX_GRID_POINTS {
            return Err(Error::input(format!(
                "grid has more than {MAX_GRID_POINTS} points"
            )));
        }
        let values = alphas
            .iter()
            .flat_map(|&alpha| mus.iter().map(move |&mu| Param::Sigmoid { alpha, mu }))
            .collect();
        ParamGrid::new(Family::Sigmoid, values)
    }

    /// `alpha ∈ {0.05 : 0.05 : 0.5}`, `mu ∈ {0.1 : 0.1 : 0.9}`.
    pub fn default_sigmoid() -> Self {
        let alphas = parse_range("0.05:0.05:0.5").expect("static range");
        let mus = parse_range("0.1:0.1:0.9").expect("static range");
        ParamGrid::sigmoid(&alphas, &mus).expect("static grid")
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn values(&self) -> &[Param] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl FromStr for ParamGrid {
    type Err = Error;

    /// Gamma grids: `start:step:stop` or a comma list. Sigmoid grids:
    /// `sigmoid:<alphas>x<mus>` where each side is a range or a list.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(rest) = s.strip_prefix("sigmoid:") {
            let (a, m) = rest
                .split_once('x')
                .ok_or_else(|| Error::input("sigmoid grid needs <alphas>x<mus>"))?;
            return ParamGrid::sigmoid(&parse_values(a)?, &parse_values(m)?);
        }
        let s = s.strip_prefix("gamma:").unwrap_or(s);
        ParamGrid::gamma(parse_values(s)?)
    }
}

const MAX_GRID_POINTS: usize = 1_000_000;

fn parse_number(s: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::input(format!("not a number: {s:?}")))?;
    if !v.is_finite() {
        return Err(Error::input(format!("not a finite number: {s:?}")));
    }
    Ok(v)
}

/// Parses `start:step:stop` (inclusive) or a comma-separated list.
pub fn parse_values(s: &str) -> Result<Vec<f64>> {
    if s.contains(':') {
        parse_range(s)
    } else {
        s.split(',').map(parse_number).collect()
    }
}

/// Expands `start:step:stop` into an inclusive list. Points are computed as
/// `start + k·step` and rounded to 12 decimals so `0.1:0.01:2.5` contains
/// exactly `2.5`.
pub fn parse_range(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let [a, step, b] = parts[..] else {
        return Err(Error::input(format!("expected start:step:stop, got {s:?}")));
    };
    let (a, step, b) = (parse_number(a)?, parse_number(step)?, parse_number(b)?);
    if !(step > 0.0) {
        return Err(Error::input("range step must be positive"));
    }
    if b < a {
        return Err(Error::input("range stop is below its start"));
    }
    let count = ((b - a) / step + 1e-9).floor() + 1.0;
    if !(count <= MAX_GRID_POINTS as f64) {
        return Err(Error::input(format!(
            "range has more than {MAX_GRID_POINTS} points"
        )));
    }
    Ok((0..count as usize)
        .map(|k| {
            let v = a + k as f64 * step;
            (v * 1e12).round() / 1e12
        })
        .collect())
}

/// A grid with duplicate curves removed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DedupedGrid {
    pub grid: ParamGrid,
    /// For each kept entry, the indices into the original grid that produce
    /// the same curve, starting with the entry itself.
    pub groups: Vec<Vec<usize>>,
}

/// Drops grid entries whose curve equals the curve of an earlier entry.
pub fn dedupe_grid_by_curve(grid: &ParamGrid, n: usize) -> Result<DedupedGrid> {
    if grid.family != Family::Gamma {
        return Err(Error::input(
            "curve deduplication is defined for gamma grids",
        ));
    }
    let (keep, groups) = group_by_curve(grid.values(), n)?;
    let values = keep.into_iter().map(|(p, _)| p).collect();
    Ok(DedupedGrid {
        grid: ParamGrid {
            family: grid.family,
            values,
        },
        groups,
    })
}

#[allow(clippy::type_complexity)]
fn group_by_curve(
    params: &[Param],
    n: usize,
) -> Result<(Vec<(Param, TransformCurve)>, Vec<Vec<usize>>)> {
    let mut index: HashMap<TransformCurve, usize> = HashMap::new();
    let mut keep = Vec::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, p) in params.iter().enumerate() {
        let curve = p.curve(n)?;
        match index.get(&curve) {
            Some(&g) => groups[g].push(i),
            None => {
                index.insert(curve.clone(), keep.len());
                keep.push((*p, curve));
                groups.push(vec![i]);
            }
        }
    }
    Ok((keep, groups))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandscapePoint {
    pub param: Param,
    pub objective: f64,
}

/// Result of [`estimate_parametric`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParametricEstimate {
    pub best_param: Param,
    pub best_objective: f64,
    /// Score of every grid point, in grid order.
    pub landscape: Vec<LandscapePoint>,
}

impl ParametricEstimate {
    pub fn best_curve(&self, n: usize) -> Result<TransformCurve> {
        self.best_param.curve(n)
    }
}

/// Scores every grid point and returns the minimizer. Ties go to the earliest
/// grid point. Grid points producing the same curve are solved once.
pub fn estimate_parametric(
    h_obs: &PixelHistogram,
    grid: &ParamGrid,
    noise: &NoiseMatrix,
    cfg: &SolverConfig,
) -> Result<ParametricEstimate> {
    cfg.validate()?;
    if grid.is_empty() {
        return Err(Error::input("parameter grid is empty"));
    }
    if noise.top() != h_obs.top() {
        return Err(Error::input("noise matrix and histogram sizes differ"));
    }
    let (distinct, groups) = group_by_curve(grid.values(), h_obs.top())?;
    let scores: Vec<f64> = distinct
        .par_iter()
        .map(|(_, curve)| recover_histogram(h_obs, curve, noise, cfg).map(|r| r.objective))
        .collect::<Result<_>>()?;

    let mut objective = vec![0.0; grid.len()];
    for (group, score) in groups.iter().zip(&scores) {
        for &i in group {
            objective[i] = *score;
        }
    }
    let landscape: Vec<LandscapePoint> = grid
        .values()
        .iter()
        .zip(&objective)
        .map(|(&param, &objective)| LandscapePoint { param, objective })
        .collect();
    let mut best = 0;
    for (i, p) in landscape.iter().enumerate() {
        if p.objective < landscape[best].objective {
            best = i;
        }
    }
    Ok(ParametricEstimate {
        best_param: landscape[best].param,
        best_objective: landscape[best].objective,
        landscape,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_gamma_grid_hits_endpoints() {
        let g = ParamGrid::default_gamma();
        assert_eq!(g.len(), 241);
        assert_eq!(g.values()[0], Param::Gamma(0.1));
        assert_eq!(g.values()[90], Param::Gamma(1.0));
        assert_eq!(g.values()[240], Param::Gamma(2.5));
    }

    #[test]
    fn default_sigmoid_grid() {
        let g = ParamGrid::default_sigmoid();
        assert_eq!(g.len(), 90);
        assert_eq!(
            g.values()[0],
            Param::Sigmoid {
                alpha: 0.05,
                mu: 0.1
            }
        );
        assert_eq!(
            g.values()[89],
            Param::Sigmoid {
                alpha: 0.5,
                mu: 0.9
            }
        );
    }

    #[test]
    fn grid_strings() {
        let g: ParamGrid = "0.5,1,1.5".parse().unwrap();
        assert_eq!(g.len(), 3);
        let g: ParamGrid = "sigmoid:0.1,0.2x0.5".parse().unwrap();
        assert_eq!(g.family(), Family::Sigmoid);
        assert_eq!(g.len(), 2);
        for bad in [
            "",
            "1:0:2",
            "2:0.1:1",
            "a:b:c",
            "0,1",
            "1:1",
            "sigmoid:0.1",
            "-1",
            "1e400",
            "sigmoid:0:1e-6:1x0:1e-6:1",
        ] {
            assert!(bad.parse::<ParamGrid>().is_err(), "{bad}");
        }
    }

    #[test]
    fn fine_grid_collapses() {
        let grid = ParamGrid::gamma(parse_range("0.9995:0.000001:1.0005").unwrap()).unwrap();
        let d = dedupe_grid_by_curve(&grid, 255).unwrap();
        assert!(d.grid.len() < grid.len() / 50, "{}", d.grid.len());
        let total: usize = d.groups.iter().map(Vec::len).sum();
        assert_eq!(total, grid.len());
    }

    #[test]
    fn distinguishable_grid_is_unchanged() {
        let grid = ParamGrid::gamma([0.5, 1.0, 2.0]).unwrap();
        let d = dedupe_grid_by_curve(&grid, 255).unwrap();
        assert_eq!(d.grid, grid);
    }

    #[test]
    fn single_point_grid() {
        let h = PixelHistogram::uniform(8).unwrap();
        let grid = ParamGrid::gamma([1.3]).unwrap();
        let est = estimate_parametric(
            &h,
            &grid,
            &NoiseMatrix::identity(255),
            &SolverConfig::default(),
        )
        .unwrap();
        assert_eq!(est.best_param, Param::Gamma(1.3));
        assert_eq!(est.landscape.len(), 1);
        assert_eq!(est.landscape[0].objective, est.best_objective);
    }
}
