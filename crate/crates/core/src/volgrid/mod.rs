//! Volumetric data model: scalar volumes and binary masks on a regular grid
//! with physical spacing and origin.
//!
//! Values are stored x-fastest, so voxel `(i, j, k)` lives at
//! `i + nx * (j + ny * k)`. The physical center of that voxel is
//! `origin + (i * sx, j * sy, k * sz)`.

mod metaimage;
mod morphology;
mod noise;
pub(crate) mod resample;

pub use metaimage::{
    read_header, read_mask, read_volume, write_mask, write_volume, ElementType, MetaHeader,
};
pub use morphology::{cleanup_mask, DEFAULT_MIN_ISLAND_VOXELS};
pub use noise::{add_gaussian_noise, SampleBuffer};
pub use resample::{crop_overlap_fov, resample_mask_to_grid, resample_to_grid, Interpolation};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance in millimetres when comparing grid geometry.
pub const GRID_TOLERANCE_MM: f64 = 1e-6;

/// Regular 3D sampling grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dims: [usize; 3],
    /// Millimetres per voxel along x, y, z.
    pub spacing: [f64; 3],
    /// Physical position of the center of voxel (0, 0, 0), in mm.
    pub origin: [f64; 3],
}

impl Grid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        let grid = Grid {
            dims,
            spacing,
            origin,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Grid with unit spacing and zero origin.
    pub fn unit(dims: [usize; 3]) -> Result<Self> {
        Grid::new(dims, [1.0; 3], [0.0; 3])
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::InvalidGrid(format!(
                "dimensions must be positive, got {:?}",
                self.dims
            )));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidGrid(format!(
                "spacing must be positive and finite, got {:?}",
                self.spacing
            )));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "origin must be finite, got {:?}",
                self.origin
            )));
        }
        Ok(())
    }

    /// Number of voxels.
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    /// Physical center of voxel `(i, j, k)`.
    pub fn voxel_center(&self, ijk: [usize; 3]) -> [f64; 3] {
        std::array::from_fn(|a| self.origin[a] + ijk[a] as f64 * self.spacing[a])
    }

    /// Physical position at continuous index coordinates.
    pub fn index_to_physical(&self, g: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|a| self.origin[a] + g[a] * self.spacing[a])
    }

    pub fn physical_to_index(&self, p: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|a| (p[a] - self.origin[a]) / self.spacing[a])
    }

    /// Midpoint of the span of voxel centers.
    pub fn center(&self) -> [f64; 3] {
        std::array::from_fn(|a| {
            self.origin[a] + 0.5 * (self.dims[a] - 1) as f64 * self.spacing[a]
        })
    }

    /// Inclusive physical span `[first center, last center]` along each axis.
    pub fn center_span(&self) -> [[f64; 2]; 3] {
        std::array::from_fn(|a| {
            [
                self.origin[a],
                self.origin[a] + (self.dims[a] - 1) as f64 * self.spacing[a],
            ]
        })
    }

    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// True when dims match exactly and spacing/origin agree within
    /// [`GRID_TOLERANCE_MM`].
    pub fn matches(&self, other: &Grid) -> bool {
        self.dims == other.dims
            && (0..3).all(|a| {
                (self.spacing[a] - other.spacing[a]).abs() <= GRID_TOLERANCE_MM
                    && (self.origin[a] - other.origin[a]).abs() <= GRID_TOLERANCE_MM
            })
    }

    pub fn ensure_matches(&self, other: &Grid, what: &str) -> Result<()> {
        if self.matches(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{what}: {:?}/{:?}/{:?} vs {:?}/{:?}/{:?}",
                self.dims, self.spacing, self.origin, other.dims, other.spacing, other.origin
            )))
        }
    }

    /// Sub-grid covering `region`.
    pub fn crop(&self, region: &GridRegion) -> Grid {
        Grid {
            dims: region.dims(),
            spacing: self.spacing,
            origin: self.voxel_center(region.lo),
        }
    }
}

/// Half-open voxel box `[lo, hi)` in index space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridRegion {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl GridRegion {
    pub fn new(lo: [usize; 3], hi: [usize; 3], dims: [usize; 3]) -> Result<Self> {
        for a in 0..3 {
            if lo[a] >= hi[a] || hi[a] > dims[a] {
                return Err(Error::InvalidGrid(format!(
                    "region {lo:?}..{hi:?} is empty or exceeds dims {dims:?}"
                )));
            }
        }
        Ok(GridRegion { lo, hi })
    }

    pub fn full(grid: &Grid) -> Self {
        GridRegion {
            lo: [0; 3],
            hi: grid.dims,
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        std::array::from_fn(|a| self.hi[a] - self.lo[a])
    }

    pub fn len(&self) -> usize {
        self.dims().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn crop_values<T: Copy>(grid: &Grid, values: &[T], region: &GridRegion) -> Vec<T> {
    let mut out = Vec::with_capacity(region.len());
    for k in region.lo[2]..region.hi[2] {
        for j in region.lo[1]..region.hi[1] {
            let start = grid.index(region.lo[0], j, k);
            let end = grid.index(region.hi[0] - 1, j, k) + 1;
            out.extend_from_slice(&values[start..end]);
        }
    }
    out
}

/// Dense scalar volume (CT, CBCT, artifact field, dose grid, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3 {
    grid: Grid,
    values: Vec<f32>,
}

impl Volume3 {
    pub fn new(grid: Grid, values: Vec<f32>) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.len() {
            return Err(Error::ElementCountMismatch {
                expected: grid.len(),
                found: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::OutOfRange(format!(
                "non-finite value {} at index {i}",
                values[i]
            )));
        }
        Ok(Volume3 { grid, values })
    }

    /// Caller guarantees length and finiteness.
    pub(crate) fn from_parts(grid: Grid, values: Vec<f32>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Volume3 { grid, values }
    }

    pub fn zeros(grid: Grid) -> Self {
        Volume3::filled(grid, 0.0)
    }

    pub fn filled(grid: Grid, value: f32) -> Self {
        assert!(value.is_finite(), "fill value must be finite");
        Volume3 {
            values: vec![value; grid.len()],
            grid,
        }
    }

    /// Builds a volume by evaluating `f(i, j, k)` at every voxel.
    pub fn from_fn(grid: Grid, mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.len());
        for k in 0..grid.dims[2] {
            for j in 0..grid.dims[1] {
                for i in 0..grid.dims[0] {
                    values.push(f(i, j, k));
                }
            }
        }
        Volume3::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.values[self.grid.index(i, j, k)]
    }

    /// Elementwise map; the result must stay finite.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Volume3> {
        Volume3::new(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Same values on a different grid of equal size.
    pub fn with_grid(self, grid: Grid) -> Result<Volume3> {
        Volume3::new(grid, self.values)
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn crop(&self, region: &GridRegion) -> Result<Volume3> {
        GridRegion::new(region.lo, region.hi, self.grid.dims)?;
        Ok(Volume3 {
            grid: self.grid.crop(region),
            values: crop_values(&self.grid, &self.values, region),
        })
    }
}

/// Binary mask (contour) on a regular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask3 {
    grid: Grid,
    values: Vec<u8>,
}

impl Mask3 {
    pub fn new(grid: Grid, values: Vec<u8>) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.len() {
            return Err(Error::ElementCountMismatch {
                expected: grid.len(),
                found: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|&v| v > 1) {
            return Err(Error::NonBinaryMask {
                index: i,
                value: values[i] as f64,
            });
        }
        Ok(Mask3 { grid, values })
    }

    pub(crate) fn from_parts(grid: Grid, values: Vec<u8>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Mask3 { grid, values }
    }

    pub fn empty(grid: Grid) -> Self {
        Mask3 {
            values: vec![0; grid.len()],
            grid,
        }
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut(usize, usize, usize) -> bool) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.len());
        for k in 0..grid.dims[2] {
            for j in 0..grid.dims[1] {
                for i in 0..grid.dims[0] {
                    values.push(f(i, j, k) as u8);
                }
            }
        }
        Mask3::new(grid, values)
    }

    /// Converts a volume whose values are exactly 0 or 1.
    pub fn from_volume(vol: &Volume3) -> Result<Self> {
        let mut values = Vec::with_capacity(vol.len());
        for (i, &v) in vol.values().iter().enumerate() {
            match v {
                0.0 => values.push(0),
                1.0 => values.push(1),
                other => {
                    return Err(Error::NonBinaryMask {
                        index: i,
                        value: other as f64,
                    })
                }
            }
        }
        Ok(Mask3::from_parts(vol.grid, values))
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.values[self.grid.index(i, j, k)] != 0
    }

    /// Number of foreground voxels.
    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0).count()
    }

    pub fn volume_cc(&self) -> f64 {
        self.count() as f64 * self.grid.voxel_volume_mm3() / 1000.0
    }

    pub fn to_volume(&self) -> Volume3 {
        Volume3::from_parts(self.grid, self.values.iter().map(|&v| v as f32).collect())
    }

    pub fn crop(&self, region: &GridRegion) -> Result<Mask3> {
        GridRegion::new(region.lo, region.hi, self.grid.dims)?;
        Ok(Mask3 {
            grid: self.grid.crop(region),
            values: crop_values(&self.grid, &self.values, region),
        })
    }

    pub fn with_grid(self, grid: Grid) -> Result<Mask3> {
        Mask3::new(grid, self.values)
    }
}

/// Elementwise `a + lambda * b` on identical grids.
pub fn add_scaled(a: &Volume3, b: &Volume3, lambda: f64) -> Result<Volume3> {
    a.grid.ensure_matches(&b.grid, "add_scaled")?;
    if !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "lambda must be finite, got {lambda}"
        )));
    }
    let values = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(&x, &y)| (x as f64 + lambda * y as f64) as f32)
        .collect();
    Volume3::new(a.grid, values)
}

/// Affine rescale so the minimum maps to 0 and the maximum to 1.
pub fn rescale_unit(vol: &Volume3) -> Result<Volume3> {
    let (lo, hi) = vol.min_max();
    if lo >= hi {
        return Err(Error::ZeroDynamicRange(lo as f64));
    }
    let lo = lo as f64;
    let range = hi as f64 - lo;
    Ok(Volume3::from_parts(
        vol.grid,
        vol.values
            .iter()
            .map(|&v| ((v as f64 - lo) / range) as f32)
            .collect(),
    ))
}

/// Mean over a `(2r+1)^3` window centered at every voxel, truncated at the
/// volume borders.
pub fn box_mean_truncated(vol: &Volume3, half_width: [usize; 3]) -> Volume3 {
    let grid = vol.grid;
    let [nx, ny, nz] = grid.dims;
    let sums = box_sums_truncated(vol.values(), grid.dims, half_width);
    let mut out = Vec::with_capacity(grid.len());
    for k in 0..nz {
        let kz = window_len(k, nz, half_width[2]);
        for j in 0..ny {
            let jy = window_len(j, ny, half_width[1]);
            for i in 0..nx {
                let ix = window_len(i, nx, half_width[0]);
                let n = (ix * jy * kz) as f64;
                out.push((sums[grid.index(i, j, k)] / n) as f32);
            }
        }
    }
    Volume3::from_parts(grid, out)
}

fn window_len(i: usize, n: usize, r: usize) -> usize {
    let lo = i.saturating_sub(r);
    let hi = (i + r).min(n - 1);
    hi - lo + 1
}

/// Separable truncated box sums in f64.
fn box_sums_truncated(values: &[f32], dims: [usize; 3], half: [usize; 3]) -> Vec<f64> {
    let mut cur: Vec<f64> = values.iter().map(|&v| v as f64).collect();
    let strides = [1, dims[0], dims[0] * dims[1]];
    for axis in 0..3 {
        let n = dims[axis];
        let r = half[axis];
        if r == 0 || n == 1 {
            continue;
        }
        let stride = strides[axis];
        let mut next = vec![0.0; cur.len()];
        let mut line = vec![0.0; n + 1];
        for base in 0..cur.len() {
            // visit each line once, from its first element
            if !(base / stride).is_multiple_of(n) {
                continue;
            }
            line[0] = 0.0;
            for t in 0..n {
                line[t + 1] = line[t] + cur[base + t * stride];
            }
            for t in 0..n {
                let lo = t.saturating_sub(r);
                let hi = (t + r).min(n - 1);
                next[base + t * stride] = line[hi + 1] - line[lo];
            }
        }
        cur = next;
    }
    cur
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(dims: [usize; 3]) -> Grid {
        Grid::unit(dims).unwrap()
    }

    #[test]
    fn grid_rejects_bad_geometry() {
        assert!(Grid::new([0, 1, 1], [1.0; 3], [0.0; 3]).is_err());
        assert!(Grid::new([1, 1, 1], [1.0, 0.0, 1.0], [0.0; 3]).is_err());
        assert!(Grid::new([1, 1, 1], [1.0; 3], [f64::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn index_roundtrip_is_x_fastest() {
        let g = grid([3, 4, 5]);
        assert_eq!(g.index(1, 0, 0), 1);
        assert_eq!(g.index(0, 1, 0), 3);
        assert_eq!(g.index(0, 0, 1), 12);
        for idx in 0..g.len() {
            let [i, j, k] = g.coords(idx);
            assert_eq!(g.index(i, j, k), idx);
        }
    }

    #[test]
    fn voxel_center_follows_origin_and_spacing() {
        let g = Grid::new([4, 4, 4], [1.17, 1.17, 3.0], [-10.0, 5.0, 0.5]).unwrap();
        let c = g.voxel_center([2, 1, 3]);
        assert!((c[0] - (-10.0 + 2.34)).abs() < 1e-12);
        assert!((c[1] - 6.17).abs() < 1e-12);
        assert!((c[2] - 9.5).abs() < 1e-12);
    }

    #[test]
    fn volume_rejects_nonfinite_and_wrong_length() {
        assert!(matches!(
            Volume3::new(grid([2, 2, 2]), vec![0.0; 7]),
            Err(Error::ElementCountMismatch { .. })
        ));
        let mut v = vec![0.0; 8];
        v[3] = f32::NAN;
        assert!(Volume3::new(grid([2, 2, 2]), v).is_err());
    }

    #[test]
    fn mask_rejects_nonbinary() {
        assert!(matches!(
            Mask3::new(grid([2, 1, 1]), vec![0, 2]),
            Err(Error::NonBinaryMask { index: 1, .. })
        ));
    }

    #[test]
    fn add_scaled_cases() {
        let g = grid([3, 2, 2]);
        let a = Volume3::from_fn(g, |i, j, k| (i + 2 * j + 3 * k) as f32).unwrap();
        let b = Volume3::from_fn(g, |i, j, _| (i * j) as f32 - 1.5).unwrap();
        assert_eq!(add_scaled(&a, &b, 0.0).unwrap(), a);
        let zero = Volume3::zeros(g);
        assert_eq!(add_scaled(&zero, &b, 1.0).unwrap(), b);
        let half = add_scaled(&a, &b, 0.5).unwrap();
        for n in 0..g.len() {
            let expect = a.values()[n] as f64 + 0.5 * b.values()[n] as f64;
            assert_eq!(half.values()[n], expect as f32);
        }
        let other = Volume3::zeros(grid([3, 2, 1]));
        assert!(matches!(
            add_scaled(&a, &other, 1.0),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn rescale_unit_affine_map() {
        let g = grid([3, 1, 1]);
        let v = Volume3::new(g, vec![-1000.0, 0.0, 1000.0]).unwrap();
        assert_eq!(rescale_unit(&v).unwrap().values(), &[0.0, 0.5, 1.0]);
        let unit = Volume3::new(g, vec![0.0, 0.25, 1.0]).unwrap();
        assert_eq!(rescale_unit(&unit).unwrap(), unit);
        let flat = Volume3::filled(g, 3.0);
        assert!(matches!(
            rescale_unit(&flat),
            Err(Error::ZeroDynamicRange(_))
        ));
    }

    #[test]
    fn crop_extracts_subbox() {
        let g = Grid::new([4, 3, 2], [2.0, 1.0, 3.0], [10.0, 0.0, 0.0]).unwrap();
        let v = Volume3::from_fn(g, |i, j, k| (100 * k + 10 * j + i) as f32).unwrap();
        let region = GridRegion::new([1, 1, 1], [3, 3, 2], g.dims).unwrap();
        let c = v.crop(&region).unwrap();
        assert_eq!(c.dims(), [2, 2, 1]);
        assert_eq!(c.grid().origin, [12.0, 1.0, 3.0]);
        assert_eq!(c.values(), &[111.0, 112.0, 121.0, 122.0]);
        assert!(GridRegion::new([1, 1, 1], [1, 3, 2], g.dims).is_err());
    }

    #[test]
    fn box_mean_matches_brute_force() {
        let g = grid([5, 4, 3]);
        let v = Volume3::from_fn(g, |i, j, k| ((i * 7 + j * 3 + k * 11) % 5) as f32).unwrap();
        let m = box_mean_truncated(&v, [1, 1, 1]);
        for k in 0..3usize {
            for j in 0..4usize {
                for i in 0..5usize {
                    let mut s = 0.0;
                    let mut n = 0.0;
                    for kk in k.saturating_sub(1)..=(k + 1).min(2) {
                        for jj in j.saturating_sub(1)..=(j + 1).min(3) {
                            for ii in i.saturating_sub(1)..=(i + 1).min(4) {
                                s += v.get(ii, jj, kk) as f64;
                                n += 1.0;
                            }
                        }
                    }
                    assert!((m.get(i, j, k) as f64 - s / n).abs() < 1e-6);
                }
            }
        }
    }
}
