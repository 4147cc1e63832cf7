use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Grid, GridRegion, Mask3, Volume3, GRID_TOLERANCE_MM};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    #[default]
    Trilinear,
    Nearest,
}

/// Slack, in voxels, for points that land on the outermost voxel centers.
const EDGE_SLACK: f64 = 1e-6;

/// Trilinear sample at continuous index `g`. Points outside the span of
/// voxel centers return 0.
pub(crate) fn sample_trilinear(grid: &Grid, values: &[f32], g: [f64; 3]) -> f64 {
    let mut base = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for a in 0..3 {
        let n = grid.dims[a];
        let x = g[a];
        if x < -EDGE_SLACK || x > (n - 1) as f64 + EDGE_SLACK {
            return 0.0;
        }
        let x = x.clamp(0.0, (n - 1) as f64);
        let i0 = (x.floor() as usize).min(n.saturating_sub(2));
        base[a] = i0;
        frac[a] = if n == 1 { 0.0 } else { x - i0 as f64 };
    }
    let mut acc = 0.0;
    for dz in 0..2 {
        let wz = if dz == 0 { 1.0 - frac[2] } else { frac[2] };
        if wz == 0.0 {
            continue;
        }
        for dy in 0..2 {
            let wy = if dy == 0 { 1.0 - frac[1] } else { frac[1] };
            if wy == 0.0 {
                continue;
            }
            for dx in 0..2 {
                let wx = if dx == 0 { 1.0 - frac[0] } else { frac[0] };
                if wx == 0.0 {
                    continue;
                }
                let idx = grid.index(base[0] + dx, base[1] + dy, base[2] + dz);
                acc += wx * wy * wz * values[idx] as f64;
            }
        }
    }
    acc
}

/// Nearest-voxel index for continuous index `g`, `None` outside the cell
/// extent of the grid.
pub(crate) fn nearest_index(grid: &Grid, g: [f64; 3]) -> Option<usize> {
    let mut ijk = [0usize; 3];
    for a in 0..3 {
        let r = (g[a] + 0.5).floor();
        if r < 0.0 || r >= grid.dims[a] as f64 {
            return None;
        }
        ijk[a] = r as usize;
    }
    Some(grid.index(ijk[0], ijk[1], ijk[2]))
}

fn map_grid<T: Send>(target: &Grid, f: impl Fn([f64; 3]) -> T + Sync) -> Vec<T> {
    let [nx, ny, _] = target.dims;
    (0..target.len())
        .into_par_iter()
        .with_min_len(nx * ny)
        .map(|idx| f(target.voxel_center(target.coords(idx))))
        .collect()
}

/// Samples `src` at the physical voxel centers of `target`.
pub fn resample_to_grid(src: &Volume3, target: &Grid, interp: Interpolation) -> Result<Volume3> {
    target.validate()?;
    if src.grid().matches(target) {
        return Ok(src.clone());
    }
    let grid = *src.grid();
    let values = src.values();
    let out = map_grid(target, |p| {
        let g = grid.physical_to_index(p);
        match interp {
            Interpolation::Trilinear => sample_trilinear(&grid, values, g) as f32,
            Interpolation::Nearest => nearest_index(&grid, g).map_or(0.0, |i| values[i]),
        }
    });
    Ok(Volume3::from_parts(*target, out))
}

/// Nearest-neighbour resampling of a mask.
pub fn resample_mask_to_grid(src: &Mask3, target: &Grid) -> Result<Mask3> {
    target.validate()?;
    if src.grid().matches(target) {
        return Ok(src.clone());
    }
    let grid = *src.grid();
    let values = src.values();
    let out = map_grid(target, |p| {
        nearest_index(&grid, grid.physical_to_index(p)).map_or(0, |i| values[i])
    });
    Ok(Mask3::from_parts(*target, out))
}

/// Integer voxel offset of `other` inside `reference` when both share
/// spacing and their lattices coincide.
fn lattice_offset(reference: &Grid, other: &Grid) -> Option<[i64; 3]> {
    let mut off = [0i64; 3];
    for a in 0..3 {
        if (reference.spacing[a] - other.spacing[a]).abs() > GRID_TOLERANCE_MM {
            return None;
        }
        let d = (other.origin[a] - reference.origin[a]) / reference.spacing[a];
        let r = d.round();
        if (d - r).abs() * reference.spacing[a] > GRID_TOLERANCE_MM {
            return None;
        }
        off[a] = r as i64;
    }
    Some(off)
}

/// Restricts `reference` to the physical region also covered by `other`.
///
/// The overlap is the intersection of the two volumes' voxel-center spans.
/// Returns the cropped reference, `other` on exactly the cropped grid
/// (direct copy when the lattices coincide, trilinear resampling otherwise)
/// and the crop region in reference index space.
pub fn crop_overlap_fov(
    reference: &Volume3,
    other: &Volume3,
) -> Result<(Volume3, Volume3, GridRegion)> {
    let rg = reference.grid();
    let og = other.grid();
    let rspan = rg.center_span();
    let ospan = og.center_span();
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    for a in 0..3 {
        let start = rspan[a][0].max(ospan[a][0]);
        let end = rspan[a][1].min(ospan[a][1]);
        if start > end + GRID_TOLERANCE_MM {
            return Err(Error::EmptyIntersection);
        }
        let s = rg.spacing[a];
        let tol = GRID_TOLERANCE_MM / s;
        let first = ((start - rg.origin[a]) / s - tol).ceil().max(0.0) as usize;
        let last = ((end - rg.origin[a]) / s + tol).floor();
        if last < first as f64 {
            return Err(Error::EmptyIntersection);
        }
        lo[a] = first;
        hi[a] = (last as usize + 1).min(rg.dims[a]);
        if lo[a] >= hi[a] {
            return Err(Error::EmptyIntersection);
        }
    }
    let region = GridRegion::new(lo, hi, rg.dims)?;
    let ref_crop = reference.crop(&region)?;
    let target = *ref_crop.grid();
    let other_crop = match lattice_offset(og, &target) {
        Some(off) if (0..3).all(|a| off[a] >= 0 && off[a] as usize + target.dims[a] <= og.dims[a]) => {
            let olo: [usize; 3] = std::array::from_fn(|a| off[a] as usize);
            let ohi: [usize; 3] = std::array::from_fn(|a| olo[a] + target.dims[a]);
            let cropped = other.crop(&GridRegion::new(olo, ohi, og.dims)?)?;
            // identical values, reference's spelling of the grid
            cropped.with_grid(target)?
        }
        _ => resample_to_grid(other, &target, Interpolation::Trilinear)?,
    };
    Ok((ref_crop, other_crop, region))
}
