//! Image similarity: SSIM, RMSE, Pearson correlation, universal quality
//! index, and max-normalized intensity histograms.
//!
//! SSIM and UQI average a local index over every position where a uniform
//! 7 x 7 x 7 window fits inside the volume. Window statistics use population
//! (1/N) moments. SSIM uses `C1 = (0.01)^2` and `C2 = (0.03)^2` for unit
//! dynamic range; UQI is the same index with both constants zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volgrid::Volume3;

pub const SSIM_WINDOW: usize = 7;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const DEFAULT_HISTOGRAM_BINS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub ssim: f64,
    pub rmse: f64,
    pub cc: f64,
    pub uqi: f64,
}

/// Window statistics over all valid window positions.
struct WindowMoments {
    mean_a: Vec<f64>,
    mean_b: Vec<f64>,
    var_a: Vec<f64>,
    var_b: Vec<f64>,
    cov: Vec<f64>,
}

/// Valid-mode box sums along each axis; output dims are `dims - w + 1`.
fn box_sums_valid(values: &[f64], dims: [usize; 3], w: usize) -> (Vec<f64>, [usize; 3]) {
    let mut cur = values.to_vec();
    let mut d = dims;
    for axis in 0..3 {
        let n = d[axis];
        let m = n - w + 1;
        let mut out_dims = d;
        out_dims[axis] = m;
        let mut next = vec![0.0; out_dims.iter().product()];
        let strides = [1, d[0], d[0] * d[1]];
        let out_strides = [1, out_dims[0], out_dims[0] * out_dims[1]];
        for z in 0..out_dims[2] {
            for y in 0..out_dims[1] {
                for x in 0..out_dims[0] {
                    let p = [x, y, z];
                    let src = p[0] * strides[0] + p[1] * strides[1] + p[2] * strides[2];
                    let dst = p[0] * out_strides[0] + p[1] * out_strides[1] + p[2] * out_strides[2];
                    let mut s = 0.0;
                    for t in 0..w {
                        s += cur[src + t * strides[axis]];
                    }
                    next[dst] = s;
                }
            }
        }
        cur = next;
        d = out_dims;
    }
    (cur, d)
}

/// Moment-based variances of constant patches come out as rounding noise.
fn snap_variance(v: f64, mean: f64) -> f64 {
    if v <= 1e-12 * (1.0 + mean * mean) {
        0.0
    } else {
        v
    }
}

fn window_moments(a: &Volume3, b: &Volume3, w: usize) -> Result<WindowMoments> {
    a.grid().ensure_matches(b.grid(), "similarity metric")?;
    let dims = a.dims();
    if dims.iter().any(|&n| n < w) {
        return Err(Error::InvalidParameter(format!(
            "volume {dims:?} is smaller than the {w}^3 similarity window"
        )));
    }
    let va: Vec<f64> = a.values().iter().map(|&v| v as f64).collect();
    let vb: Vec<f64> = b.values().iter().map(|&v| v as f64).collect();
    let n = (w * w * w) as f64;
    let (sa, _) = box_sums_valid(&va, dims, w);
    let (sb, _) = box_sums_valid(&vb, dims, w);
    let sq = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let (saa, _) = box_sums_valid(&sq(&va, &va), dims, w);
    let (sbb, _) = box_sums_valid(&sq(&vb, &vb), dims, w);
    let (sab, _) = box_sums_valid(&sq(&va, &vb), dims, w);
    let mean_a: Vec<f64> = sa.iter().map(|s| s / n).collect();
    let mean_b: Vec<f64> = sb.iter().map(|s| s / n).collect();
    let var_a = saa
        .iter()
        .zip(&mean_a)
        .map(|(s, m)| snap_variance(s / n - m * m, *m))
        .collect();
    let var_b = sbb
        .iter()
        .zip(&mean_b)
        .map(|(s, m)| snap_variance(s / n - m * m, *m))
        .collect();
    let cov = sab
        .iter()
        .zip(mean_a.iter().zip(&mean_b))
        .map(|(s, (ma, mb))| s / n - ma * mb)
        .collect();
    Ok(WindowMoments {
        mean_a,
        mean_b,
        var_a,
        var_b,
        cov,
    })
}

/// Local similarity index; `None` when the denominator vanishes.
fn local_index(ma: f64, mb: f64, va: f64, vb: f64, cov: f64, c1: f64, c2: f64) -> Option<f64> {
    let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
    let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
    if den == 0.0 {
        None
    } else {
        Some(num / den)
    }
}

/// Mean structural similarity on `[0, 1]` intensities.
pub fn ssim(a: &Volume3, b: &Volume3) -> Result<f64> {
    let m = window_moments(a, b, SSIM_WINDOW)?;
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut acc = 0.0;
    for i in 0..m.mean_a.len() {
        acc += local_index(m.mean_a[i], m.mean_b[i], m.var_a[i], m.var_b[i], m.cov[i], c1, c2)
            .expect("positive constants keep the denominator nonzero");
    }
    Ok(acc / m.mean_a.len() as f64)
}

/// Universal quality index: SSIM with zero constants. Windows whose
/// denominator vanishes count as 1 when the two patches are identical and
/// are skipped otherwise.
pub fn uqi(a: &Volume3, b: &Volume3) -> Result<f64> {
    let m = window_moments(a, b, SSIM_WINDOW)?;
    let dims = a.dims();
    let out_dims: [usize; 3] = std::array::from_fn(|d| dims[d] - SSIM_WINDOW + 1);
    let mut acc = 0.0;
    let mut count = 0usize;
    for i in 0..m.mean_a.len() {
        match local_index(m.mean_a[i], m.mean_b[i], m.var_a[i], m.var_b[i], m.cov[i], 0.0, 0.0) {
            Some(q) => {
                acc += q;
                count += 1;
            }
            None => {
                let x = i % out_dims[0];
                let y = (i / out_dims[0]) % out_dims[1];
                let z = i / (out_dims[0] * out_dims[1]);
                if patches_identical(a, b, [x, y, z], SSIM_WINDOW) {
                    acc += 1.0;
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        return Err(Error::Undefined(
            "UQI has no window with a defined value".into(),
        ));
    }
    Ok(acc / count as f64)
}

fn patches_identical(a: &Volume3, b: &Volume3, lo: [usize; 3], w: usize) -> bool {
    for k in lo[2]..lo[2] + w {
        for j in lo[1]..lo[1] + w {
            for i in lo[0]..lo[0] + w {
                if a.get(i, j, k) != b.get(i, j, k) {
                    return false;
                }
            }
        }
    }
    true
}

/// Root mean square difference.
pub fn rmse(a: &Volume3, b: &Volume3) -> Result<f64> {
    a.grid().ensure_matches(b.grid(), "rmse")?;
    let sum: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    Ok((sum / a.len() as f64).sqrt())
}

/// Pearson correlation of the flattened values.
pub fn cc(a: &Volume3, b: &Volume3) -> Result<f64> {
    a.grid().ensure_matches(b.grid(), "cc")?;
    pearson(
        &a.values().iter().map(|&v| v as f64).collect::<Vec<_>>(),
        &b.values().iter().map(|&v| v as f64).collect::<Vec<_>>(),
    )
}

pub(crate) fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&p, &q) in x.iter().zip(y) {
        sxy += (p - mx) * (q - my);
        sxx += (p - mx) * (p - mx);
        syy += (q - my) * (q - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined(
            "correlation of a constant input".into(),
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// All four metrics at once.
pub fn compare(a: &Volume3, b: &Volume3) -> Result<SimilarityReport> {
    Ok(SimilarityReport {
        ssim: ssim(a, b)?,
        rmse: rmse(a, b)?,
        cc: cc(a, b)?,
        uqi: uqi(a, b)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramCurve {
    /// `n_bins + 1` bin boundaries.
    pub bin_edges: Vec<f64>,
    /// Counts scaled so the fullest bin is 1.
    pub frequencies: Vec<f64>,
}

/// Uniform-bin histogram over `[lo, hi]`; out-of-range values land in the
/// edge bins.
pub fn histogram_curve(vol: &Volume3, n_bins: usize, range: (f64, f64)) -> Result<HistogramCurve> {
    let (lo, hi) = range;
    if n_bins == 0 || !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "histogram needs n_bins >= 1 and lo < hi, got {n_bins} bins over [{lo}, {hi}]"
        )));
    }
    let width = (hi - lo) / n_bins as f64;
    let mut counts = vec![0u64; n_bins];
    for &v in vol.values() {
        let b = ((v as f64 - lo) / width).floor();
        let b = if b < 0.0 { 0 } else { (b as usize).min(n_bins - 1) };
        counts[b] += 1;
    }
    let max = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    Ok(HistogramCurve {
        bin_edges: (0..=n_bins).map(|i| lo + i as f64 * width).collect(),
        frequencies: counts.iter().map(|&c| c as f64 / max).collect(),
    })
}
