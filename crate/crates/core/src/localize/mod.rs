//! Localization of regions enhanced with a different curve than the rest of
//! the image.
//!
//! The image is cut into overlapping blocks. Each block gets a binary label
//! saying which of two curves produced it; labels and curves are estimated
//! alternately, with the labels found by an exact graph cut.

pub mod graphcut;

pub use graphcut::{graph_cut_labels, labeling_energy, Adjacency};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::histogram::{w1_distance, PixelHistogram, DEFAULT_EPS_BIN};
use crate::image_io::GrayImage;
use crate::noise::{gaussian_noise_matrix, NoiseMatrix};
use crate::nonparametric::{estimate_nonparametric, NonparamConfig};
use crate::solver::{recover_histogram, SolverConfig};
use crate::transforms::TransformCurve;

/// Floor applied inside the log of the unary energy.
pub const UNARY_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub x: usize,
    pub y: usize,
    pub hist: PixelHistogram,
}

/// Overlapping square blocks anchored at multiples of the stride.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockGrid {
    pub width: usize,
    pub height: usize,
    pub block_size: usize,
    pub stride: usize,
    /// Anchors per row and per column.
    pub cols: usize,
    pub rows: usize,
    /// Row-major over the anchor lattice.
    pub blocks: Vec<Block>,
    pub adjacency: Adjacency,
}

impl BlockGrid {
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Pixels covered by at least one block form `[0, covered_width) ×
    /// [0, covered_height)`.
    pub fn covered_width(&self) -> usize {
        (self.cols - 1) * self.stride + self.block_size
    }

    pub fn covered_height(&self) -> usize {
        (self.rows - 1) * self.stride + self.block_size
    }

    /// Per-pixel majority vote over covering blocks; ties go to 0. Pixels
    /// outside every block copy the nearest covered pixel.
    pub fn pixel_mask(&self, labels: &[u8]) -> Vec<u8> {
        let (cw, ch) = (self.covered_width(), self.covered_height());
        // 2-D difference arrays of (votes for 1) and (votes total).
        let stride_w = cw + 1;
        let mut ones = vec![0i64; stride_w * (ch + 1)];
        let mut total = vec![0i64; stride_w * (ch + 1)];
        for (b, &l) in self.blocks.iter().zip(labels) {
            let (x0, y0) = (b.x, b.y);
            let (x1, y1) = (b.x + self.block_size, b.y + self.block_size);
            for (arr, v) in [(&mut total, 1i64), (&mut ones, i64::from(l))] {
                if v == 0 {
                    continue;
                }
                arr[y0 * stride_w + x0] += v;
                arr[y0 * stride_w + x1] -= v;
                arr[y1 * stride_w + x0] -= v;
                arr[y1 * stride_w + x1] += v;
            }
        }
        for arr in [&mut ones, &mut total] {
            for y in 0..=ch {
                for x in 1..=cw {
                    arr[y * stride_w + x] += arr[y * stride_w + x - 1];
                }
            }
            for y in 1..=ch {
                for x in 0..=cw {
                    arr[y * stride_w + x] += arr[(y - 1) * stride_w + x];
                }
            }
        }
        let mut mask = vec![0u8; self.width * self.height];
        for y in 0..self.height {
            let cy = y.min(ch - 1);
            for x in 0..self.width {
                let cx = x.min(cw - 1);
                let i = cy * stride_w + cx;
                mask[y * self.width + x] = u8::from(2 * ones[i] > total[i]);
            }
        }
        mask
    }
}

/// Cuts `image` into `block_size × block_size` blocks at every multiple of
/// `stride` that keeps the block inside the image.
pub fn extract_blocks(image: &GrayImage, block_size: usize, stride: usize) -> Result<BlockGrid> {
    if block_size == 0 || stride == 0 {
        return Err(Error::input("block size and stride must be positive"));
    }
    let (w, h) = (image.width(), image.height());
    if w < block_size || h < block_size {
        return Err(Error::input(format!(
            "{w}x{h} image is smaller than a {block_size}x{block_size} block"
        )));
    }
    let cols = (w - block_size) / stride + 1;
    let rows = (h - block_size) / stride + 1;
    let anchors: Vec<(usize, usize)> = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (c * stride, r * stride)))
        .collect();
    let bins = 1usize << image.bits();
    let pixels = image.pixels();
    let blocks = anchors
        .par_iter()
        .map(|&(x, y)| {
            let mut counts = vec![0u64; bins];
            for row in y..y + block_size {
                for &p in &pixels[row * w + x..row * w + x + block_size] {
                    counts[p as usize] += 1;
                }
            }
            Block {
                x,
                y,
                hist: PixelHistogram::from_counts(image.bits(), &counts),
            }
        })
        .collect();
    Ok(BlockGrid {
        width: w,
        height: h,
        block_size,
        stride,
        cols,
        rows,
        blocks,
        adjacency: Adjacency::lattice(cols, rows),
    })
}

/// `log(max(W1(H, R T h*) + λ Ω(h*), floor))`, with `h*` from the histogram
/// solver and `Ω` the exact count of empty bins.
pub fn unary_energy(
    block_hist: &PixelHistogram,
    curve: &TransformCurve,
    noise: &NoiseMatrix,
    cfg: &SolverConfig,
) -> Result<f64> {
    let report = recover_histogram(block_hist, curve, noise, cfg)?;
    let h = report.h_star.values();
    let mut pushed = vec![0.0; h.len()];
    let mut blurred = vec![0.0; h.len()];
    curve.transfer().apply(h, &mut pushed);
    noise.apply(&pushed, &mut blurred);
    let fit = w1_distance(block_hist.values(), &blurred)?;
    let empty = report.h_star.empty_bin_count(DEFAULT_EPS_BIN) as f64;
    Ok((fit + cfg.lambda * empty).max(UNARY_FLOOR).ln())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyParams {
    /// Pairwise weight.
    pub beta: f64,
    pub lambda: f64,
    /// Noise level used for every solve.
    pub sigma: f64,
    /// Maximum curve/label alternations.
    pub em_max: usize,
    pub block_size: usize,
    pub stride: usize,
    /// Settings for curve re-estimation; its `lambda` is overridden by the
    /// field above.
    pub nonparam: NonparamConfig,
}

impl Default for EnergyParams {
    fn default() -> Self {
        EnergyParams {
            beta: 0.1,
            lambda: 0.75,
            sigma: 0.01,
            em_max: 10,
            block_size: 50,
            stride: 2,
            nonparam: NonparamConfig::default(),
        }
    }
}

impl EnergyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::input("beta must be finite and non-negative"));
        }
        if self.em_max == 0 {
            return Err(Error::input("em_max must be positive"));
        }
        if self.block_size == 0 || self.stride == 0 {
            return Err(Error::input("block size and stride must be positive"));
        }
        self.solver().validate()?;
        self.nonparam.validate()
    }

    fn solver(&self) -> SolverConfig {
        SolverConfig {
            lambda: self.lambda,
            ..self.nonparam.solver.clone()
        }
    }
}

/// Block labels and the per-pixel mask derived from them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelField {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u8>,
    pub pixel_mask: Vec<u8>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Total labeling energy after each kept alternation.
    pub energies: Vec<f64>,
    pub rounds: usize,
    /// All blocks ended with the same label.
    pub degenerate: bool,
    pub blocks: usize,
    pub label_one_blocks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub labels: LabelField,
    pub curve0: TransformCurve,
    pub curve1: TransformCurve,
    pub diagnostics: Diagnostics,
}

fn cdf_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn farthest(cdfs: &[Vec<f64>], from: usize) -> usize {
    let mut best = from;
    let mut best_d = -1.0;
    for (k, c) in cdfs.iter().enumerate() {
        let d = cdf_distance(c, &cdfs[from]);
        if d > best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

const KMEANS_MAX: usize = 100;

/// Two-means clustering of block CDFs. Seeds are the ends of a double sweep
/// for the most W1-distant pair; the first seed's cluster gets label 0.
pub fn initial_labels(grid: &BlockGrid) -> Vec<u8> {
    let cdfs: Vec<Vec<f64>> = grid
        .blocks
        .iter()
        .map(|b| b.hist.cumulative().into_values())
        .collect();
    let a = farthest(&cdfs, 0);
    let b = farthest(&cdfs, a);
    let mut centers = [cdfs[a].clone(), cdfs[b].clone()];
    let mut labels = vec![0u8; cdfs.len()];
    for iter in 0..KMEANS_MAX {
        let next: Vec<u8> = cdfs
            .par_iter()
            .map(|c| u8::from(squared_distance(c, &centers[1]) < squared_distance(c, &centers[0])))
            .collect();
        if iter > 0 && next == labels {
            break;
        }
        labels = next;
        for (l, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = cdfs
                .iter()
                .zip(&labels)
                .filter(|(_, &y)| y as usize == l)
                .map(|(c, _)| c)
                .collect();
            if members.is_empty() {
                continue;
            }
            center.fill(0.0);
            for m in &members {
                for (c, v) in center.iter_mut().zip(m.iter()) {
                    *c += v;
                }
            }
            let k = members.len() as f64;
            center.iter_mut().for_each(|c| *c /= k);
        }
    }
    labels
}

/// Histogram of the union of pixels covered by blocks with label `label`;
/// `None` when no block has it.
fn union_histogram(
    image: &GrayImage,
    grid: &BlockGrid,
    labels: &[u8],
    label: u8,
) -> Result<Option<PixelHistogram>> {
    let w = image.width();
    let mut covered = vec![false; w * image.height()];
    let mut any = false;
    for (b, &l) in grid.blocks.iter().zip(labels) {
        if l != label {
            continue;
        }
        any = true;
        for row in b.y..b.y + grid.block_size {
            covered[row * w + b.x..row * w + b.x + grid.block_size].fill(true);
        }
    }
    if !any {
        return Ok(None);
    }
    let mut counts = vec![0u64; 1usize << image.bits()];
    for (&p, &c) in image.pixels().iter().zip(&covered) {
        if c {
            counts[p as usize] += 1;
        }
    }
    Ok(Some(PixelHistogram::from_counts(image.bits(), &counts)))
}

fn block_unaries(
    grid: &BlockGrid,
    curves: [&TransformCurve; 2],
    noise: &NoiseMatrix,
    cfg: &SolverConfig,
) -> Result<Vec<(f64, f64)>> {
    grid.blocks
        .par_iter()
        .enumerate()
        .map(|(k, b)| {
            let energy = |c: &TransformCurve| {
                unary_energy(&b.hist, c, noise, cfg).map_err(|e| match e {
                    Error::Numerical { message, trace } => Error::Numerical {
                        message: format!("block {k}: {message}"),
                        trace,
                    },
                    other => other,
                })
            };
            let e0 = energy(curves[0])?;
            let e1 = if curves[1] == curves[0] {
                e0
            } else {
                energy(curves[1])?
            };
            Ok((e0, e1))
        })
        .collect()
}

fn estimate_curves(
    image: &GrayImage,
    grid: &BlockGrid,
    labels: &[u8],
    noise: &NoiseMatrix,
    cfg: &NonparamConfig,
) -> Result<[TransformCurve; 2]> {
    let mut out = Vec::with_capacity(2);
    for label in 0..2u8 {
        let curve = match union_histogram(image, grid, labels, label)? {
            Some(h) => estimate_nonparametric(&h, noise, cfg)?.curve,
            None => TransformCurve::identity(noise.top()),
        };
        out.push(curve);
    }
    let c1 = out.pop().expect("two curves");
    let c0 = out.pop().expect("two curves");
    Ok([c0, c1])
}

fn check_image(image: &GrayImage, params: &EnergyParams) -> Result<BlockGrid> {
    params.validate()?;
    let b = params.block_size;
    if image.width() < 2 * b || image.height() < 2 * b {
        return Err(Error::input(format!(
            "{}x{} image is smaller than twice the {b}-pixel block",
            image.width(),
            image.height()
        )));
    }
    extract_blocks(image, b, params.stride)
}

fn finish(
    grid: &BlockGrid,
    labels: Vec<u8>,
    curves: [TransformCurve; 2],
    energies: Vec<f64>,
    rounds: usize,
) -> Detection {
    let ones = labels.iter().filter(|&&l| l == 1).count();
    let pixel_mask = grid.pixel_mask(&labels);
    let [curve0, curve1] = curves;
    Detection {
        labels: LabelField {
            width: grid.width,
            height: grid.height,
            labels,
            pixel_mask,
        },
        curve0,
        curve1,
        diagnostics: Diagnostics {
            energies,
            rounds,
            degenerate: ones == 0 || ones == grid.len(),
            blocks: grid.len(),
            label_one_blocks: ones,
        },
    }
}

/// Labels each block with one of two curves and estimates both curves.
///
/// Labels start from a two-means split of the block CDFs. Each round
/// re-estimates the two curves from the pixels under each label, recomputes
/// all unary energies and relabels by graph cut. A round that would raise
/// the total energy is discarded and ends the loop, as does an unchanged
/// labeling.
pub fn detect_regions(image: &GrayImage, params: &EnergyParams) -> Result<Detection> {
    let grid = check_image(image, params)?;
    let noise = gaussian_noise_matrix(params.sigma, image.max_value() as usize)?;
    let solver = params.solver();
    let nonparam = NonparamConfig {
        solver: solver.clone(),
        ..params.nonparam.clone()
    };

    let mut labels = initial_labels(&grid);
    let mut curves = estimate_curves(image, &grid, &labels, &noise, &nonparam)?;
    let mut energies = Vec::new();
    let mut best = f64::INFINITY;
    let mut rounds = 0;
    for round in 0..params.em_max {
        rounds += 1;
        let next_curves = if round == 0 {
            curves.clone()
        } else {
            estimate_curves(image, &grid, &labels, &noise, &nonparam)?
        };
        let unaries = block_unaries(&grid, [&next_curves[0], &next_curves[1]], &noise, &solver)?;
        let next_labels = graph_cut_labels(&unaries, &grid.adjacency, params.beta);
        let energy = labeling_energy(&unaries, &grid.adjacency, params.beta, &next_labels);
        if !energy.is_finite() {
            return Err(Error::numerical("labeling energy is not finite", energies));
        }
        if energy > best + 1e-9 {
            break;
        }
        let unchanged = next_labels == labels;
        best = energy;
        energies.push(energy);
        labels = next_labels;
        curves = next_curves;
        if unchanged {
            break;
        }
    }
    Ok(finish(&grid, labels, curves, energies, rounds))
}

/// Block labels for two known curves: one graph cut, no curve estimation.
pub fn label_with_curves(
    image: &GrayImage,
    curve0: &TransformCurve,
    curve1: &TransformCurve,
    params: &EnergyParams,
) -> Result<Detection> {
    let grid = check_image(image, params)?;
    let n = image.max_value() as usize;
    if curve0.top() != n || curve1.top() != n {
        return Err(Error::input("curves do not match the image bit depth"));
    }
    let noise = gaussian_noise_matrix(params.sigma, n)?;
    let unaries = block_unaries(&grid, [curve0, curve1], &noise, &params.solver())?;
    let labels = graph_cut_labels(&unaries, &grid.adjacency, params.beta);
    let energy = labeling_energy(&unaries, &grid.adjacency, params.beta, &labels);
    Ok(finish(
        &grid,
        labels,
        [curve0.clone(), curve1.clone()],
        vec![energy],
        1,
    ))
}

/// Detection ratio `|T ∩ D| / |T|` and false-positive ratio
/// `1 − |T ∩ D| / |D|` of a predicted region `D` against the true region `T`.
/// An empty prediction has a false-positive ratio of 0.
pub fn de_fp_metrics(pred: &[bool], truth: &[bool]) -> Result<(f64, f64)> {
    if pred.len() != truth.len() {
        return Err(Error::input("prediction and truth masks differ in size"));
    }
    let truth_area = truth.iter().filter(|&&t| t).count();
    if truth_area == 0 {
        return Err(Error::input("truth region is empty"));
    }
    let mut hit = 0usize;
    let mut area = 0usize;
    for (&p, &t) in pred.iter().zip(truth) {
        if p {
            area += 1;
            hit += usize::from(t);
        }
    }
    let de = hit as f64 / truth_area as f64;
    let fp = if area == 0 {
        0.0
    } else {
        1.0 - hit as f64 / area as f64
    };
    Ok((de, fp))
}

/// [`de_fp_metrics`] for a label field whose polarity is arbitrary: both the
/// mask and its complement are scored and the one with the higher detection
/// ratio is kept (lower false-positive ratio on ties).
pub fn de_fp_best_flip(pred: &[bool], truth: &[bool]) -> Result<(f64, f64)> {
    let a = de_fp_metrics(pred, truth)?;
    let flipped: Vec<bool> = pred.iter().map(|&p| !p).collect();
    let b = de_fp_metrics(&flipped, truth)?;
    Ok(if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
        b
    } else {
        a
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(w: usize, h: usize) -> GrayImage {
        let px = (0..w * h).map(|i| (i % 256) as u16).collect();
        GrayImage::new(w, h, 8, px).unwrap()
    }

    #[test]
    fn block_counts() {
        assert_eq!(extract_blocks(&flat(100, 100), 50, 50).unwrap().len(), 4);
        let g = extract_blocks(&flat(52, 52), 50, 2).unwrap();
        assert_eq!((g.cols, g.rows, g.len()), (2, 2, 4));
        for b in &g.blocks {
            assert!((b.hist.values().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(extract_blocks(&flat(49, 100), 50, 2).is_err());
    }

    #[test]
    fn majority_vote_ties_to_zero() {
        let g = extract_blocks(&flat(4, 2), 2, 2).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g.pixel_mask(&[0, 1]), vec![0, 0, 1, 1, 0, 0, 1, 1]);
        // 3x2 with stride 1: the middle column is covered by both blocks.
        let g = extract_blocks(&flat(3, 2), 2, 1).unwrap();
        assert_eq!(g.pixel_mask(&[0, 1]), vec![0, 0, 1, 0, 0, 1]);
        // uncovered last column copies its neighbor
        let g = extract_blocks(&flat(5, 2), 2, 2).unwrap();
        assert_eq!(g.pixel_mask(&[0, 1]), vec![0, 0, 1, 1, 1, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn metrics_examples() {
        let truth = [true, true, false, false];
        assert_eq!(de_fp_metrics(&truth, &truth).unwrap(), (1.0, 0.0));
        assert_eq!(de_fp_metrics(&[true; 4], &truth).unwrap(), (1.0, 0.5));
        let pred = [false, false, true, true];
        assert_eq!(de_fp_metrics(&pred, &truth).unwrap(), (0.0, 1.0));
        assert_eq!(de_fp_metrics(&[false; 4], &truth).unwrap(), (0.0, 0.0));
        assert!(de_fp_metrics(&[false; 4], &[false; 4]).is_err());
        assert!(de_fp_metrics(&[false; 3], &truth).is_err());
    }

    #[test]
    fn flip_is_scored_both_ways() {
        let truth = [true, true, false, false];
        let pred = [false, false, true, true];
        assert_eq!(de_fp_best_flip(&pred, &truth).unwrap(), (1.0, 0.0));
        let truth = [true, false, false, false];
        let pred = [false, true, false, false];
        let (de, fp) = de_fp_best_flip(&pred, &truth).unwrap();
        assert_eq!(de, 1.0);
        assert!((fp - 2.0 / 3.0).abs() < 1e-15);
        let pred = [true, true, false, true];
        assert_eq!(
            de_fp_best_flip(&pred, &truth).unwrap(),
            de_fp_metrics(&pred, &truth).unwrap()
        );
    }

    #[test]
    fn equal_curves_give_equal_unaries() {
        let img = flat(100, 100);
        let g = extract_blocks(&img, 50, 50).unwrap();
        let c = TransformCurve::identity(255);
        let u = block_unaries(
            &g,
            [&c, &c],
            &NoiseMatrix::identity(255),
            &SolverConfig::default(),
        )
        .unwrap();
        assert!(u.iter().all(|(a, b)| a == b));
    }
}
