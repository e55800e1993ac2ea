//! Synthetic test images with known enhancement curves.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::histogram::{bins_for_bits, cumulative, PixelHistogram};
use crate::image_io::{read_image, GrayImage};
use crate::noise::NoiseSpec;
use crate::transforms::{
    apply_to_pixels, gamma_curve, hist_eq_curve, sigmoid_curve, spline_curve, TransformCurve,
};

/// Where the pre-enhancement pixels come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseHistogram {
    /// Exponentiated, smoothed Gaussian random walk over the bins.
    /// `smoothness` is the smoothing kernel width as a fraction of the range.
    SmoothRandom { smoothness: f64 },
    /// Pixels are resampled from the histogram of an existing image.
    FromImage { path: PathBuf },
}

impl Default for BaseHistogram {
    fn default() -> Self {
        BaseHistogram::SmoothRandom { smoothness: 0.02 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CurveSpec {
    Identity,
    Gamma {
        gamma: f64,
    },
    Sigmoid {
        alpha: f64,
        mu: f64,
    },
    /// Monotone spline through `(input, output)` control points.
    Spline {
        points: Vec<(usize, usize)>,
    },
    /// Equalization of the pre-enhancement image's histogram.
    HistEq,
}

impl CurveSpec {
    /// Builds the curve; `pre` is only consulted for equalization.
    pub fn build(&self, n: usize, pre: &PixelHistogram) -> Result<TransformCurve> {
        match self {
            CurveSpec::Identity => Ok(TransformCurve::identity(n)),
            CurveSpec::Gamma { gamma } => gamma_curve(*gamma, n),
            CurveSpec::Sigmoid { alpha, mu } => sigmoid_curve(*alpha, *mu, n),
            CurveSpec::Spline { points } => spline_curve(points, n),
            CurveSpec::HistEq => Ok(hist_eq_curve(pre)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub bits: u32,
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub base: BaseHistogram,
    pub curve: CurveSpec,
    /// Standard deviation of the rounded Gaussian noise added after the curve.
    #[serde(default)]
    pub sigma: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(bits: u32, width: usize, height: usize, curve: CurveSpec, seed: u64) -> Self {
        SynthSpec {
            bits,
            width,
            height,
            base: BaseHistogram::default(),
            curve,
            sigma: 0.0,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        bins_for_bits(self.bits)?;
        if self.width == 0 || self.height == 0 {
            return Err(Error::input("image dimensions must be positive"));
        }
        if self.width.checked_mul(self.height).is_none() {
            return Err(Error::input("image dimensions overflow"));
        }
        NoiseSpec::gaussian(self.sigma)?;
        if let BaseHistogram::SmoothRandom { smoothness } = self.base {
            if !(smoothness.is_finite() && smoothness >= 0.0) {
                return Err(Error::input("smoothness must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

/// Output of [`synth_image`].
#[derive(Clone, Debug, PartialEq)]
pub struct SynthImage {
    pub pre: GrayImage,
    pub transformed: GrayImage,
    pub curve: TransformCurve,
}

// Independent streams derived from the spec seed.
const STREAM_BASE: u64 = 1;
const STREAM_PIXELS: u64 = 2;
const STREAM_NOISE: u64 = 3;
const STREAM_NOISE_REGION: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn sub_seed(seed: u64, id: u64) -> u64 {
    stream(seed, id).random()
}

/// A smooth random histogram over `2^bits` bins.
pub fn smooth_random_histogram(bits: u32, smoothness: f64, seed: u64) -> Result<PixelHistogram> {
    let len = bins_for_bits(bits)?;
    let mut rng = stream(seed, STREAM_BASE);
    let mut walk = Vec::with_capacity(len);
    let mut x = 0.0f64;
    for _ in 0..len {
        x += rng.sample::<f64, _>(StandardNormal);
        walk.push(x);
    }
    let width = smoothness * len as f64;
    let smooth = gaussian_smooth(&walk, width);
    let mean = smooth.iter().sum::<f64>() / len as f64;
    let var = smooth.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / len as f64;
    let sd = var.sqrt().max(1e-12);
    let raw: Vec<f64> = smooth
        .iter()
        .map(|v| ((v - mean) / sd).clamp(-2.5, 2.5).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    PixelHistogram::new(bits, raw.into_iter().map(|v| v / total).collect())
}

fn gaussian_smooth(x: &[f64], width: f64) -> Vec<f64> {
    if width < 0.5 {
        return x.to_vec();
    }
    let radius = (3.0 * width).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-0.5 * (d as f64 / width).powi(2)).exp())
        .collect();
    let last = x.len() as isize - 1;
    (0..x.len() as isize)
        .map(|i| {
            let mut acc = 0.0;
            let mut norm = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let j = i + k as isize - radius;
                if (0..=last).contains(&j) {
                    acc += w * x[j as usize];
                    norm += w;
                }
            }
            acc / norm
        })
        .collect()
}

/// Draws `count` i.i.d. pixels from `h`.
pub fn sample_pixels(h: &PixelHistogram, count: usize, seed: u64) -> Vec<u16> {
    let cdf = cumulative(h.values());
    let top = h.top();
    let mut rng = stream(seed, STREAM_PIXELS);
    (0..count)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * cdf[top];
            cdf.partition_point(|&c| c <= u).min(top) as u16
        })
        .collect()
}

fn base_pixels(spec: &SynthSpec) -> Result<GrayImage> {
    let hist = match &spec.base {
        BaseHistogram::SmoothRandom { smoothness } => {
            smooth_random_histogram(spec.bits, *smoothness, spec.seed)?
        }
        BaseHistogram::FromImage { path } => {
            let img = read_image(path)?;
            if img.bits() != spec.bits {
                return Err(Error::input(format!(
                    "base image is {}-bit, spec asks for {}-bit",
                    img.bits(),
                    spec.bits
                )));
            }
            img.histogram()?
        }
    };
    let pixels = sample_pixels(&hist, spec.width * spec.height, spec.seed);
    GrayImage::new(spec.width, spec.height, spec.bits, pixels)
}

fn noise_of(sigma: f64) -> Option<NoiseSpec> {
    (sigma > 0.0).then_some(NoiseSpec::Gaussian { sigma })
}

/// Generates a pre-enhancement image and its enhanced, optionally noisy,
/// version.
pub fn synth_image(spec: &SynthSpec) -> Result<SynthImage> {
    spec.validate()?;
    let pre = base_pixels(spec)?;
    let curve = spec
        .curve
        .build(pre.max_value() as usize, &pre.histogram()?)?;
    let pixels = apply_to_pixels(
        &curve,
        pre.pixels(),
        noise_of(spec.sigma).as_ref(),
        sub_seed(spec.seed, STREAM_NOISE),
    )?;
    let transformed = GrayImage::new(spec.width, spec.height, spec.bits, pixels)?;
    Ok(SynthImage {
        pre,
        transformed,
        curve,
    })
}

/// The area of a composite that receives the second curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Region {
    Rect {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },
    /// Row-major mask with the image's dimensions.
    Mask { mask: Vec<bool> },
}

impl Region {
    pub fn to_mask(&self, width: usize, height: usize) -> Result<Vec<bool>> {
        match self {
            Region::Rect {
                x,
                y,
                width: w,
                height: h,
            } => {
                if x.saturating_add(*w) > width || y.saturating_add(*h) > height {
                    return Err(Error::input(format!(
                        "region {w}x{h} at ({x}, {y}) exceeds {width}x{height} image"
                    )));
                }
                let mut mask = vec![false; width * height];
                for row in *y..y + h {
                    mask[row * width + x..row * width + x + w].fill(true);
                }
                Ok(mask)
            }
            Region::Mask { mask } => {
                if mask.len() != width * height {
                    return Err(Error::input("region mask does not match image size"));
                }
                Ok(mask.clone())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthComposite {
    pub image: GrayImage,
    pub truth_mask: Vec<bool>,
    pub curve0: TransformCurve,
    pub curve1: TransformCurve,
}

/// Enhances one base image with `spec0`'s curve outside `region` and with
/// `spec1`'s curve inside it. The base image comes from `spec0`.
pub fn synth_composite(
    spec0: &SynthSpec,
    spec1: &SynthSpec,
    region: &Region,
) -> Result<SynthComposite> {
    spec0.validate()?;
    spec1.validate()?;
    if (spec0.bits, spec0.width, spec0.height) != (spec1.bits, spec1.width, spec1.height) {
        return Err(Error::input(
            "composite specs must share bit depth and dimensions",
        ));
    }
    let truth_mask = region.to_mask(spec0.width, spec0.height)?;
    let pre = base_pixels(spec0)?;
    let pre_hist = pre.histogram()?;
    let n = pre.max_value() as usize;
    let curve0 = spec0.curve.build(n, &pre_hist)?;
    let curve1 = spec1.curve.build(n, &pre_hist)?;
    let out0 = apply_to_pixels(
        &curve0,
        pre.pixels(),
        noise_of(spec0.sigma).as_ref(),
        sub_seed(spec0.seed, STREAM_NOISE),
    )?;
    let out1 = apply_to_pixels(
        &curve1,
        pre.pixels(),
        noise_of(spec1.sigma).as_ref(),
        sub_seed(spec0.seed, STREAM_NOISE_REGION),
    )?;
    let pixels = out0
        .iter()
        .zip(&out1)
        .zip(&truth_mask)
        .map(|((&a, &b), &m)| if m { b } else { a })
        .collect();
    Ok(SynthComposite {
        image: GrayImage::new(spec0.width, spec0.height, spec0.bits, pixels)?,
        truth_mask,
        curve0,
        curve1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{apply_noise, gaussian_noise_matrix};
    use crate::transforms::apply_to_histogram;

    #[test]
    fn identity_without_noise_is_unchanged() {
        let s = synth_image(&SynthSpec::new(8, 40, 30, CurveSpec::Identity, 5)).unwrap();
        assert_eq!(s.pre, s.transformed);
    }

    #[test]
    fn seeded_output_is_reproducible() {
        let mut spec = SynthSpec::new(8, 64, 64, CurveSpec::Gamma { gamma: 0.7 }, 11);
        spec.sigma = 1.0;
        let a = synth_image(&spec).unwrap();
        let b = synth_image(&spec).unwrap();
        assert_eq!(a, b);
        spec.seed = 12;
        assert_ne!(synth_image(&spec).unwrap().pre, a.pre);
    }

    #[test]
    fn transformed_histogram_follows_forward_model() {
        let mut spec = SynthSpec::new(8, 1000, 1000, CurveSpec::Gamma { gamma: 1.6 }, 3);
        spec.sigma = 1.0;
        let s = synth_image(&spec).unwrap();
        let pre = s.pre.histogram().unwrap();
        let r = gaussian_noise_matrix(1.0, 255).unwrap();
        let model =
            apply_noise(&r, &apply_to_histogram(&s.curve.transfer(), &pre).unwrap()).unwrap();
        let got = s.transformed.histogram().unwrap();
        // sampling error of a 10^6-pixel empirical CDF, summed over 256 bins
        assert!(got.w1_distance(&model).unwrap() < 0.1);
    }

    #[test]
    fn smooth_histograms_are_mostly_populated() {
        for seed in 0..10 {
            let h = smooth_random_histogram(8, 0.02, seed).unwrap();
            let min = h.values().iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(min > 1e-4, "seed {seed}: {min}");
        }
    }

    #[test]
    fn composite_regions() {
        let s0 = SynthSpec::new(8, 20, 20, CurveSpec::Gamma { gamma: 1.4 }, 9);
        let s1 = SynthSpec::new(8, 20, 20, CurveSpec::Gamma { gamma: 0.6 }, 9);
        let whole = synth_image(&s0).unwrap().transformed;

        let empty = Region::Rect {
            x: 0,
            y: 0,
            width: 0,
            height: 0,
        };
        let c = synth_composite(&s0, &s1, &empty).unwrap();
        assert_eq!(c.image, whole);
        assert!(c.truth_mask.iter().all(|&m| !m));

        let full = Region::Rect {
            x: 0,
            y: 0,
            width: 20,
            height: 20,
        };
        let c = synth_composite(&s0, &s1, &full).unwrap();
        assert!(c.truth_mask.iter().all(|&m| m));
        let pre = synth_image(&s0).unwrap().pre;
        let expect: Vec<u16> = pre
            .pixels()
            .iter()
            .map(|&p| c.curve1.map(p as usize) as u16)
            .collect();
        assert_eq!(c.image.pixels(), &expect[..]);

        let quarter = Region::Rect {
            x: 5,
            y: 10,
            width: 10,
            height: 10,
        };
        let c = synth_composite(&s0, &s1, &quarter).unwrap();
        assert_eq!(c.truth_mask.iter().filter(|&&m| m).count() * 4, 400);

        let outside = Region::Rect {
            x: 15,
            y: 0,
            width: 10,
            height: 5,
        };
        assert!(synth_composite(&s0, &s1, &outside).is_err());
    }
}
