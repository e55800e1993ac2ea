//! Normalized pixel histograms and the handful of vector operations the
//! estimators are built from: cumulative sums, the Wasserstein-1 distance on
//! the integer line, empty-bin counting and Euclidean projection onto the
//! probability simplex.
//!
//! The lower-triangular all-ones operator that maps a histogram to its
//! cumulative distribution is never materialized; it is always a prefix sum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `Σ h = 1` accepted by [`PixelHistogram`].
pub const MASS_TOLERANCE: f64 = 1e-9;

/// Default threshold under which a bin of a real-valued histogram is empty.
pub const DEFAULT_EPS_BIN: f64 = 1e-8;

/// Largest supported bit depth.
pub const MAX_BITS: u32 = 16;

/// A normalized histogram over the pixel values `0..=n`, `n = 2^bits - 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HistogramRepr", into = "HistogramRepr")]
pub struct PixelHistogram {
    bits: u32,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct HistogramRepr {
    bits: u32,
    values: Vec<f64>,
}

impl TryFrom<HistogramRepr> for PixelHistogram {
    type Error = Error;

    fn try_from(r: HistogramRepr) -> Result<Self> {
        PixelHistogram::new(r.bits, r.values)
    }
}

impl From<PixelHistogram> for HistogramRepr {
    fn from(h: PixelHistogram) -> Self {
        HistogramRepr {
            bits: h.bits,
            values: h.values,
        }
    }
}

/// Number of bins for a bit depth, validating the depth.
pub fn bins_for_bits(bits: u32) -> Result<usize> {
    if bits == 0 || bits > MAX_BITS {
        return Err(Error::input(format!(
            "bit depth {bits} outside 1..={MAX_BITS}"
        )));
    }
    Ok(1usize << bits)
}

/// Bit depth whose bin count is `len`, if `len` is a supported power of two.
pub fn bits_for_len(len: usize) -> Result<u32> {
    if len < 2 || !len.is_power_of_two() || len > (1 << MAX_BITS) {
        return Err(Error::input(format!(
            "histogram length {len} is not 2^bits for bits in 1..={MAX_BITS}"
        )));
    }
    Ok(len.trailing_zeros())
}

impl PixelHistogram {
    /// Validates and wraps a probability vector.
    pub fn new(bits: u32, values: Vec<f64>) -> Result<Self> {
        let len = bins_for_bits(bits)?;
        if values.len() != len {
            return Err(Error::input(format!(
                "histogram for {bits} bits needs {len} values, got {}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::input(format!("histogram entry {v} is not a mass")));
        }
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::input(format!("histogram sums to {total}, not 1")));
        }
        Ok(PixelHistogram { bits, values })
    }

    /// Wraps a vector already known to lie on the simplex.
    pub(crate) fn from_simplex(bits: u32, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), 1usize << bits);
        debug_assert!(values.iter().all(|v| *v >= 0.0));
        debug_assert!((values.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        PixelHistogram { bits, values }
    }

    /// Builds a histogram from a vector of any length that is a power of two.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        let bits = bits_for_len(values.len())?;
        Self::new(bits, values)
    }

    /// Normalized counts of `pixels`, each of which must lie in `0..2^bits`.
    pub fn from_pixels<P>(pixels: &[P], bits: u32) -> Result<Self>
    where
        P: Copy + Into<u32>,
    {
        let len = bins_for_bits(bits)?;
        if pixels.is_empty() {
            return Err(Error::input("cannot build a histogram from zero pixels"));
        }
        let mut counts = vec![0u64; len];
        for &p in pixels {
            let p: u32 = p.into();
            let slot = counts.get_mut(p as usize).ok_or_else(|| {
                Error::input(format!("pixel value {p} exceeds {}-bit range", bits))
            })?;
            *slot += 1;
        }
        Ok(Self::from_counts(bits, &counts))
    }

    /// Normalizes a count vector with a non-zero total.
    pub fn from_counts(bits: u32, counts: &[u64]) -> Self {
        let total: u64 = counts.iter().sum();
        assert!(total > 0, "empty count vector");
        let total = total as f64;
        let values = counts.iter().map(|&c| c as f64 / total).collect();
        PixelHistogram { bits, values }
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// Top pixel value `n = 2^bits - 1`.
    pub fn top(&self) -> usize {
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn cumulative(&self) -> CumulativeHistogram {
        CumulativeHistogram {
            values: cumulative(&self.values),
        }
    }

    pub fn w1_distance(&self, other: &PixelHistogram) -> Result<f64> {
        w1_distance(&self.values, &other.values)
    }

    pub fn empty_bin_count(&self, eps_bin: f64) -> usize {
        empty_bin_count(&self.values, eps_bin)
    }

    /// Uniform histogram at the given depth.
    pub fn uniform(bits: u32) -> Result<Self> {
        let len = bins_for_bits(bits)?;
        Ok(PixelHistogram {
            bits,
            values: vec![1.0 / len as f64; len],
        })
    }

    /// All mass on a single bin.
    pub fn point_mass(bits: u32, at: usize) -> Result<Self> {
        let len = bins_for_bits(bits)?;
        if at >= len {
            return Err(Error::input(format!("bin {at} out of range")));
        }
        let mut values = vec![0.0; len];
        values[at] = 1.0;
        Ok(PixelHistogram { bits, values })
    }
}

/// Running sums of a histogram; non-decreasing, ends at the total mass.
#[derive(Clone, Debug, PartialEq)]
pub struct CumulativeHistogram {
    values: Vec<f64>,
}

impl CumulativeHistogram {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Prefix sums `out[i] = Σ_{j<=i} h[j]`.
pub fn cumulative(h: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    h.iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect()
}

/// In-place prefix sum.
pub(crate) fn cumulative_in_place(v: &mut [f64]) {
    let mut acc = 0.0;
    for x in v.iter_mut() {
        acc += *x;
        *x = acc;
    }
}

/// In-place suffix sum, the adjoint of [`cumulative_in_place`].
pub(crate) fn suffix_sum_in_place(v: &mut [f64]) {
    let mut acc = 0.0;
    for x in v.iter_mut().rev() {
        acc += *x;
        *x = acc;
    }
}

/// Wasserstein-1 distance between two histograms on the same integer grid,
/// i.e. the ℓ1 distance between their cumulative distributions.
pub fn w1_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::input(format!(
            "histogram lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let mut ca = 0.0;
    let mut cb = 0.0;
    let mut dist = 0.0;
    for (x, y) in a.iter().zip(b) {
        ca += x;
        cb += y;
        dist += (ca - cb).abs();
    }
    Ok(dist)
}

/// Number of bins with mass at most `eps_bin`.
pub fn empty_bin_count(h: &[f64], eps_bin: f64) -> usize {
    h.iter().filter(|&&v| v <= eps_bin).count()
}

/// Euclidean projection onto `{h : h >= 0, Σh = 1}`.
///
/// Solves the KKT system `h = (x + ξ)_+` with `Σ (x_i + ξ)_+ = 1`; the shift
/// is located exactly by scanning the sorted entries.
pub fn project_to_simplex(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::input("cannot project an empty vector"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("projection input contains NaN or infinity"));
    }
    let shift = simplex_shift(x);
    Ok(x.iter().map(|&v| (v + shift).max(0.0)).collect())
}

fn simplex_shift(x: &[f64]) -> f64 {
    let mut sorted = x.to_vec();
    shift_from_sorted(sort_desc(&mut sorted))
}

fn sort_desc(v: &mut [f64]) -> &[f64] {
    v.sort_unstable_by(|a, b| b.total_cmp(a));
    v
}

// `sorted` is descending. The active set is the longest prefix whose entries
// stay positive after the shift.
fn shift_from_sorted(sorted: &[f64]) -> f64 {
    let mut acc = 0.0;
    let mut shift = 1.0 - sorted[0];
    for (k, &v) in sorted.iter().enumerate() {
        acc += v;
        let candidate = (1.0 - acc) / (k + 1) as f64;
        if v + candidate > 0.0 {
            shift = candidate;
        } else {
            break;
        }
    }
    shift
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn from_pixels_counts() {
        let h = PixelHistogram::from_pixels(&[0u16, 0, 1, 1], 1).unwrap();
        assert_eq!(h.values(), &[0.5, 0.5]);
        let h = PixelHistogram::from_pixels(&[3u16, 3, 3, 3], 2).unwrap();
        assert_eq!(h.values(), &[0.0, 0.0, 0.0, 1.0]);
        let h = PixelHistogram::from_pixels(&[0u16, 1, 1, 2], 2).unwrap();
        assert_eq!(h.values(), &[0.25, 0.5, 0.25, 0.0]);
    }

    #[test]
    fn from_pixels_rejects_bad_input() {
        assert!(PixelHistogram::from_pixels::<u16>(&[], 8).is_err());
        assert!(PixelHistogram::from_pixels(&[4u16], 2).is_err());
        assert!(PixelHistogram::from_pixels(&[0u16], 0).is_err());
    }

    #[test]
    fn new_validates() {
        assert!(PixelHistogram::new(1, vec![0.5, 0.6]).is_err());
        assert!(PixelHistogram::new(1, vec![1.5, -0.5]).is_err());
        assert!(PixelHistogram::new(2, vec![0.5, 0.5]).is_err());
        assert!(PixelHistogram::new(1, vec![f64::NAN, 1.0]).is_err());
        assert!(PixelHistogram::new(1, vec![0.25, 0.75]).is_ok());
    }

    #[test]
    fn cumulative_examples() {
        assert_eq!(cumulative(&[0.5, 0.5]), vec![0.5, 1.0]);
        assert_eq!(cumulative(&[1.0, 0.0, 0.0, 0.0]), vec![1.0; 4]);
        assert_eq!(
            cumulative(&[0.25, 0.5, 0.25, 0.0]),
            vec![0.25, 0.75, 1.0, 1.0]
        );
    }

    #[test]
    fn suffix_sum_is_adjoint_of_prefix_sum() {
        let x = [0.3, -1.0, 2.0, 0.5];
        let y = [1.0, 0.25, -0.5, 3.0];
        let mut fx = x.to_vec();
        cumulative_in_place(&mut fx);
        let mut fty = y.to_vec();
        suffix_sum_in_place(&mut fty);
        let lhs: f64 = fx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&fty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn w1_examples() {
        let a = [0.2, 0.3, 0.5];
        assert_eq!(w1_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(w1_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(
            w1_distance(&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0]).unwrap(),
            2.0
        );
        assert!(w1_distance(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn empty_bins() {
        assert_eq!(empty_bin_count(&[0.5, 0.0, 0.5, 0.0], DEFAULT_EPS_BIN), 2);
        assert_eq!(empty_bin_count(&[0.25; 4], DEFAULT_EPS_BIN), 0);
        assert_eq!(empty_bin_count(&[1.0, 0.0, 0.0, 0.0], DEFAULT_EPS_BIN), 3);
    }

    #[test]
    fn projection_examples() {
        assert!(close(
            &project_to_simplex(&[0.5, 0.5]).unwrap(),
            &[0.5, 0.5],
            1e-15
        ));
        assert!(close(
            &project_to_simplex(&[2.0, 0.0]).unwrap(),
            &[1.0, 0.0],
            1e-15
        ));
        assert!(close(
            &project_to_simplex(&[0.6, 0.6]).unwrap(),
            &[0.5, 0.5],
            1e-15
        ));
        assert!(project_to_simplex(&[f64::NAN, 1.0]).is_err());
        assert!(project_to_simplex(&[f64::INFINITY]).is_err());
    }

    #[test]
    fn projection_of_single_entry_is_one() {
        assert_eq!(project_to_simplex(&[-3.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn json_round_trip_and_validation() {
        let h = PixelHistogram::new(1, vec![0.25, 0.75]).unwrap();
        let s = serde_json::to_string(&h).unwrap();
        assert_eq!(s, r#"{"bits":1,"values":[0.25,0.75]}"#);
        let back: PixelHistogram = serde_json::from_str(&s).unwrap();
        assert_eq!(back, h);
        assert!(serde_json::from_str::<PixelHistogram>(r#"{"bits":1,"values":[0.5]}"#).is_err());
    }
}
