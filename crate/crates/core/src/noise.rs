//! Additive-noise model on histograms.
//!
//! Rounded white Gaussian noise added to pixels convolves the histogram with
//! a discrete kernel `r[d] = Φ((d+½)/σ) − Φ((d−½)/σ)`. The matrix is banded
//! Toeplitz and is stored as its band. Mass pushed past either end of the
//! value range is folded onto bin 0 or bin n, which is what clipping the
//! noisy pixels does.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::histogram::PixelHistogram;

/// Noise family and strength in pixel-value units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    Gaussian { sigma: f64 },
}

impl NoiseSpec {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::input(format!(
                "noise sigma must be finite and non-negative, got {sigma}"
            )));
        }
        Ok(NoiseSpec::Gaussian { sigma })
    }

    pub fn sigma(&self) -> f64 {
        match *self {
            NoiseSpec::Gaussian { sigma } => sigma,
        }
    }
}

/// How mass leaving `0..=n` is treated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    /// Out-of-range mass accumulates on the nearest end bin.
    #[default]
    Clip,
}

/// Banded convolution matrix over `0..=n`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseMatrix {
    n: usize,
    radius: usize,
    band: Vec<f64>,
    boundary_mode: BoundaryMode,
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Builds the Gaussian noise matrix for standard deviation `sigma`.
///
/// The band is truncated at `|d| <= ceil(6σ) + 1`; the two tails beyond it
/// are added to the outermost offsets so the band is an exact partition of
/// unity.
pub fn gaussian_noise_matrix(sigma: f64, n: usize) -> Result<NoiseMatrix> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::input(format!(
            "noise sigma must be finite and non-negative, got {sigma}"
        )));
    }
    if n == 0 {
        return Err(Error::input("noise matrix needs at least two pixel values"));
    }
    if sigma == 0.0 {
        return Ok(NoiseMatrix::identity(n));
    }
    let radius = (6.0 * sigma).ceil() as usize + 1;
    let mut band = Vec::with_capacity(2 * radius + 1);
    for k in 0..=2 * radius {
        let d = k as f64 - radius as f64;
        let lo = if k == 0 {
            0.0
        } else {
            std_normal_cdf((d - 0.5) / sigma)
        };
        let mass = if k == 2 * radius {
            // Upper tail via erfc keeps precision where Φ is close to 1.
            0.5 * libm::erfc((d - 0.5) / sigma / std::f64::consts::SQRT_2)
        } else {
            std_normal_cdf((d + 0.5) / sigma) - lo
        };
        band.push(mass.max(0.0));
    }
    Ok(NoiseMatrix {
        n,
        radius,
        band,
        boundary_mode: BoundaryMode::Clip,
    })
}

impl NoiseMatrix {
    pub fn identity(n: usize) -> Self {
        NoiseMatrix {
            n,
            radius: 0,
            band: vec![1.0],
            boundary_mode: BoundaryMode::Clip,
        }
    }

    pub fn from_spec(spec: &NoiseSpec, n: usize) -> Result<Self> {
        match *spec {
            NoiseSpec::Gaussian { sigma } => gaussian_noise_matrix(sigma, n),
        }
    }

    pub fn top(&self) -> usize {
        self.n
    }

    /// Band half-width `D`.
    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Mass moved by offset `d`, zero outside the band.
    pub fn offset_mass(&self, d: isize) -> f64 {
        let k = d + self.radius as isize;
        if k < 0 || k as usize >= self.band.len() {
            0.0
        } else {
            self.band[k as usize]
        }
    }

    pub fn band(&self) -> &[f64] {
        &self.band
    }

    pub fn boundary_mode(&self) -> BoundaryMode {
        self.boundary_mode
    }

    pub fn is_identity(&self) -> bool {
        self.radius == 0
    }

    #[inline]
    fn target(&self, j: usize, k: usize) -> usize {
        // j + (k - radius), clipped to 0..=n
        (j + k).saturating_sub(self.radius).min(self.n)
    }

    /// `out = R x`.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        if self.is_identity() {
            out.copy_from_slice(x);
            return;
        }
        out.fill(0.0);
        let (n, r) = (self.n, self.radius);
        for (j, &v) in x.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            if j >= r && j + r <= n {
                let dst = &mut out[j - r..=j + r];
                for (o, &w) in dst.iter_mut().zip(&self.band) {
                    *o += w * v;
                }
            } else {
                for (k, &w) in self.band.iter().enumerate() {
                    out[self.target(j, k)] += w * v;
                }
            }
        }
    }

    /// `out = Rᵀ y`.
    pub fn apply_transpose(&self, y: &[f64], out: &mut [f64]) {
        if self.is_identity() {
            out.copy_from_slice(y);
            return;
        }
        let (n, r) = (self.n, self.radius);
        for (j, o) in out.iter_mut().enumerate() {
            *o = if j >= r && j + r <= n {
                y[j - r..=j + r]
                    .iter()
                    .zip(&self.band)
                    .map(|(a, b)| a * b)
                    .sum()
            } else {
                self.band
                    .iter()
                    .enumerate()
                    .map(|(k, &w)| w * y[self.target(j, k)])
                    .sum()
            };
        }
    }
}

/// Histogram after additive noise: `R h`.
pub fn apply_noise(r: &NoiseMatrix, h: &PixelHistogram) -> Result<PixelHistogram> {
    if r.n != h.top() {
        return Err(Error::input(format!(
            "noise matrix covers 0..={} but histogram covers 0..={}",
            r.n,
            h.top()
        )));
    }
    let mut out = vec![0.0; h.len()];
    r.apply(h.values(), &mut out);
    Ok(PixelHistogram::from_simplex(h.bits(), out))
}
