//! Segmentation overlap and surface-distance metrics, the training loss, and
//! dosimetric evaluation.

mod distance;
mod dose;
mod loss;

pub use distance::{euclidean_distance_transform, surface_voxels};
pub use dose::{
    bland_altman, d_cc, dvh, mean_dose, write_dvh_csv, BlandAltmanStats, DoseGrid, DvhCurve,
};
pub use loss::{combined_loss, combined_loss_raw, LossOutput, LossWeights};

use crate::error::{Error, Result};
use crate::volgrid::Mask3;

/// Name recorded in reports for the surface-distance percentile variant.
pub const HD95_VARIANT: &str = "pooled-symmetric-surface-distance-p95";

/// Dice overlap `2|A∩B| / (|A| + |B|)`. Two empty masks agree perfectly.
pub fn dice(a: &Mask3, b: &Mask3) -> Result<f64> {
    a.grid().ensure_matches(b.grid(), "dice")?;
    let (mut inter, mut sa, mut sb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.values().iter().zip(b.values()) {
        inter += (x & y) as usize;
        sa += x as usize;
        sb += y as usize;
    }
    if sa + sb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (sa + sb) as f64)
}

/// 95th percentile of the pooled surface distances `{d(p, ∂B) : p ∈ ∂A} ∪
/// {d(q, ∂A) : q ∈ ∂B}` in mm.
pub fn hd95(a: &Mask3, b: &Mask3) -> Result<f64> {
    hausdorff_percentile(a, b, 95.0)
}

/// Pooled surface-distance percentile for any `q` in `[0, 100]`; `q = 100`
/// is the symmetric Hausdorff distance.
pub fn hausdorff_percentile(a: &Mask3, b: &Mask3, q: f64) -> Result<f64> {
    a.grid().ensure_matches(b.grid(), "hausdorff")?;
    if !(0.0..=100.0).contains(&q) {
        return Err(Error::InvalidParameter(format!(
            "percentile must lie in [0, 100], got {q}"
        )));
    }
    if a.count() == 0 {
        return Err(Error::EmptyMask("first mask of surface distance".into()));
    }
    if b.count() == 0 {
        return Err(Error::EmptyMask("second mask of surface distance".into()));
    }
    let mut d = surface_distances(a, b);
    d.extend(surface_distances(b, a));
    d.sort_by(f64::total_cmp);
    Ok(percentile_sorted(&d, q))
}

/// Distances in mm from every surface voxel of `from` to the nearest surface
/// voxel of `to`, in voxel index order.
pub fn surface_distances(from: &Mask3, to: &Mask3) -> Vec<f64> {
    let dt = euclidean_distance_transform(&surface_voxels(to));
    surface_voxels(from)
        .values()
        .iter()
        .zip(&dt)
        .filter(|(&s, _)| s == 1)
        .map(|(_, &d2)| d2.sqrt())
        .collect()
}

/// Linear interpolation between order statistics at rank `(n-1)·q/100`.
pub(crate) fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * q / 100.0;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let t = pos - lo as f64;
    sorted[lo] + t * (sorted[hi] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volgrid::Grid;

    #[test]
    fn dice_cases() {
        let g = Grid::unit([4, 4, 1]).unwrap();
        let a = Mask3::from_fn(g, |i, _, _| i < 1).unwrap();
        let b = Mask3::from_fn(g, |i, _, _| i >= 3).unwrap();
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &b).unwrap(), 0.0);
        let e = Mask3::empty(g);
        assert_eq!(dice(&e, &e).unwrap(), 1.0);
        assert_eq!(dice(&a, &e).unwrap(), 0.0);
        let c = Mask3::from_fn(g, |i, j, _| i == 0 && j < 2 || i == 1 && j < 2).unwrap();
        let d = Mask3::from_fn(g, |i, j, _| i == 0 && j < 2 || i == 2 && j < 2).unwrap();
        assert_eq!(dice(&c, &d).unwrap(), 0.5);
    }

    #[test]
    fn dice_grid_mismatch() {
        let a = Mask3::empty(Grid::unit([2, 2, 2]).unwrap());
        let b = Mask3::empty(Grid::unit([2, 2, 3]).unwrap());
        assert!(matches!(dice(&a, &b), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn hd95_identity_and_plates() {
        let g = Grid::new([6, 6, 12], [1.5, 1.5, 3.0], [0.0; 3]).unwrap();
        let a = Mask3::from_fn(g, |_, _, k| k == 1).unwrap();
        assert_eq!(hd95(&a, &a).unwrap(), 0.0);
        let b = Mask3::from_fn(g, |_, _, k| k == 4).unwrap();
        assert!((hd95(&a, &b).unwrap() - 9.0).abs() < 1e-12);
        assert!((hd95(&b, &a).unwrap() - 9.0).abs() < 1e-12);
    }

    #[test]
    fn hd95_empty_is_an_error() {
        let g = Grid::unit([3, 3, 3]).unwrap();
        let a = Mask3::from_fn(g, |i, _, _| i == 0).unwrap();
        assert!(matches!(hd95(&a, &Mask3::empty(g)), Err(Error::EmptyMask(_))));
        assert!(matches!(hd95(&Mask3::empty(g), &a), Err(Error::EmptyMask(_))));
    }

    #[test]
    fn percentile_interpolates() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile_sorted(&v, 50.0), 2.0);
        assert!((percentile_sorted(&v, 95.0) - 3.8).abs() < 1e-12);
        assert_eq!(percentile_sorted(&[7.0], 95.0), 7.0);
    }
}
