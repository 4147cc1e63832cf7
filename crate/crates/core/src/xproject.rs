//! Circular-trajectory cone-beam projector and its matched backprojector.
//!
//! World coordinates have the isocenter at the origin and the rotation axis
//! along z. For view angle `theta` the source sits at
//! `(dso cos theta, dso sin theta, 0)` and the flat detector is centered
//! `dsd` away on the opposite side, with its column axis `u` along
//! `(-sin theta, cos theta, 0)` and row axis `v` along z. Detector pixel
//! `(r, c)` is centered at
//!
//! ```text
//! u = (c - (cols - 1) / 2) * pu + du
//! v = (r - (rows - 1) / 2) * pv + dv
//! ```
//!
//! The volume is placed with its physical center on the isocenter; its
//! bounding box is the union of its voxel cells. Each ray is clipped to that
//! box and integrated with the midpoint rule on `ceil(L / step)` equal
//! segments, sampling the volume trilinearly with zeros beyond the outermost
//! voxels. The backprojector scatters with exactly the same samples and
//! weights, so the two operators are adjoint up to rounding.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::volgrid::{read_volume, write_volume, Grid, SampleBuffer, Volume3};

/// Upper bound on the number of partial volumes used by the backprojector.
const BACKPROJECT_CHUNKS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConeBeamGeometry {
    /// Source to detector distance, mm.
    pub dsd: f64,
    /// Source to isocenter distance, mm.
    pub dso: f64,
    pub det_rows: usize,
    pub det_cols: usize,
    /// Pixel pitch `(pu, pv)` along columns and rows, mm.
    pub pixel_size: [f64; 2],
    /// Detector shift `(du, dv)` along columns and rows, mm.
    pub center_offset: [f64; 2],
    /// View angles in radians.
    pub angles: Vec<f64>,
}

/// `n` angles evenly covering a full rotation, starting at 0.
pub fn uniform_angles(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| std::f64::consts::TAU * k as f64 / n as f64)
        .collect()
}

impl ConeBeamGeometry {
    /// Clinical offset-detector acquisition: 512 x 512 detector of 1 mm
    /// pixels, DSD 1500 mm, DSO 1000 mm, detector shifted -160 mm along u,
    /// 500 views over 360 degrees.
    pub fn clinical() -> Self {
        ConeBeamGeometry {
            dsd: 1500.0,
            dso: 1000.0,
            det_rows: 512,
            det_cols: 512,
            pixel_size: [1.0, 1.0],
            center_offset: [-160.0, 0.0],
            angles: uniform_angles(500),
        }
    }

    /// Reduced profile for tests and quick runs: same distances and offset,
    /// 128 x 128 detector of 4 mm pixels, 90 views.
    pub fn desk() -> Self {
        ConeBeamGeometry {
            dsd: 1500.0,
            dso: 1000.0,
            det_rows: 128,
            det_cols: 128,
            pixel_size: [4.0, 4.0],
            center_offset: [-160.0, 0.0],
            angles: uniform_angles(90),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.dso > 0.0 && self.dsd > self.dso && self.dsd.is_finite()) {
            return bad(format!(
                "geometry needs dsd > dso > 0, got dsd {} dso {}",
                self.dsd, self.dso
            ));
        }
        if self.det_rows == 0 || self.det_cols == 0 {
            return bad("detector must have at least one row and column".into());
        }
        if self.pixel_size.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return bad(format!("pixel sizes must be positive, got {:?}", self.pixel_size));
        }
        if self.center_offset.iter().any(|o| !o.is_finite()) {
            return bad("center offset must be finite".into());
        }
        if self.angles.is_empty() {
            return bad("at least one view angle is required".into());
        }
        if self.angles.iter().any(|a| !a.is_finite()) {
            return bad("view angles must be finite".into());
        }
        Ok(())
    }

    pub fn n_views(&self) -> usize {
        self.angles.len()
    }

    pub fn pixels_per_view(&self) -> usize {
        self.det_rows * self.det_cols
    }

    /// Source position and detector pixel position for one ray.
    pub fn ray(&self, view: usize, row: usize, col: usize) -> ([f64; 3], [f64; 3]) {
        let frame = ViewFrame::new(self, self.angles[view]);
        (frame.source, frame.pixel(self, row, col))
    }
}

struct ViewFrame {
    source: [f64; 3],
    det_center: [f64; 3],
    u_axis: [f64; 3],
}

impl ViewFrame {
    fn new(geom: &ConeBeamGeometry, theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        let source = [geom.dso * c, geom.dso * s, 0.0];
        let det_center = [source[0] - geom.dsd * c, source[1] - geom.dsd * s, 0.0];
        ViewFrame {
            source,
            det_center,
            u_axis: [-s, c, 0.0],
        }
    }

    fn pixel(&self, geom: &ConeBeamGeometry, row: usize, col: usize) -> [f64; 3] {
        let u = (col as f64 - 0.5 * (geom.det_cols as f64 - 1.0)) * geom.pixel_size[0]
            + geom.center_offset[0];
        let v = (row as f64 - 0.5 * (geom.det_rows as f64 - 1.0)) * geom.pixel_size[1]
            + geom.center_offset[1];
        [
            self.det_center[0] + u * self.u_axis[0],
            self.det_center[1] + u * self.u_axis[1],
            self.det_center[2] + v,
        ]
    }
}

/// Line-integral images, one per view, stored `[view][row][col]` with
/// columns fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSet {
    geometry: ConeBeamGeometry,
    data: Vec<f32>,
}

impl ProjectionSet {
    pub fn new(geometry: ConeBeamGeometry, data: Vec<f32>) -> Result<Self> {
        geometry.validate()?;
        let expected = geometry.n_views() * geometry.pixels_per_view();
        if data.len() != expected {
            return Err(Error::ElementCountMismatch {
                expected,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::OutOfRange("non-finite projection value".into()));
        }
        Ok(ProjectionSet { geometry, data })
    }

    pub fn zeros(geometry: ConeBeamGeometry) -> Result<Self> {
        let n = geometry.n_views() * geometry.pixels_per_view();
        ProjectionSet::new(geometry, vec![0.0; n])
    }

    pub fn geometry(&self) -> &ConeBeamGeometry {
        &self.geometry
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn n_views(&self) -> usize {
        self.geometry.n_views()
    }

    pub fn view(&self, view: usize) -> &[f32] {
        let n = self.geometry.pixels_per_view();
        &self.data[view * n..(view + 1) * n]
    }

    #[inline]
    pub fn get(&self, view: usize, row: usize, col: usize) -> f32 {
        let g = &self.geometry;
        self.data[(view * g.det_rows + row) * g.det_cols + col]
    }

    /// Stack as a volume with `DimSize = cols rows views`.
    pub fn to_volume(&self) -> Volume3 {
        let g = &self.geometry;
        let grid = Grid {
            dims: [g.det_cols, g.det_rows, g.n_views()],
            spacing: [g.pixel_size[0], g.pixel_size[1], 1.0],
            origin: [0.0; 3],
        };
        Volume3::from_parts(grid, self.data.clone())
    }

    pub fn from_volume(vol: &Volume3, geometry: ConeBeamGeometry) -> Result<Self> {
        let dims = vol.dims();
        if dims != [geometry.det_cols, geometry.det_rows, geometry.n_views()] {
            return Err(Error::GridMismatch(format!(
                "projection stack {dims:?} does not match geometry {}x{}x{}",
                geometry.det_cols,
                geometry.det_rows,
                geometry.n_views()
            )));
        }
        ProjectionSet::new(geometry, vol.values().to_vec())
    }
}

impl SampleBuffer for ProjectionSet {
    fn samples_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
}

/// Writes the stack as MetaImage plus a JSON geometry record.
pub fn write_projections(proj: &ProjectionSet, mha: &Path, geometry_json: &Path) -> Result<()> {
    write_volume(&proj.to_volume(), mha)?;
    let text = serde_json::to_string_pretty(proj.geometry())
        .map_err(|e| Error::Serde(e.to_string()))?;
    write_atomic(geometry_json, text.as_bytes())
}

pub fn read_projections(mha: &Path, geometry_json: &Path) -> Result<ProjectionSet> {
    let text = std::fs::read_to_string(geometry_json).map_err(|e| Error::io(geometry_json, e))?;
    let geometry: ConeBeamGeometry =
        serde_json::from_str(&text).map_err(|e| Error::Serde(e.to_string()))?;
    ProjectionSet::from_volume(&read_volume(mha)?, geometry)
}

/// Default integration step: half the smallest voxel spacing.
pub fn default_step(grid: &Grid) -> f64 {
    0.5 * grid.min_spacing()
}

/// Sampling plan for one ray in continuous index coordinates.
#[derive(Clone, Copy)]
struct RaySamples {
    start: [f64; 3],
    delta: [f64; 3],
    count: usize,
    weight: f64,
}

/// Trilinear corner set with zero-border handling.
#[derive(Clone, Copy)]
struct Corners {
    base: [i64; 3],
    frac: [f64; 3],
}

/// A geometry bound to a volume grid and integration step.
#[derive(Debug, Clone)]
pub struct Projector {
    geometry: ConeBeamGeometry,
    grid: Grid,
    step: f64,
    frames: Vec<([f64; 3], [f64; 3], [f64; 3])>,
}

impl Projector {
    pub fn new(geometry: &ConeBeamGeometry, grid: &Grid, step_mm: f64) -> Result<Self> {
        geometry.validate()?;
        grid.validate()?;
        if !(step_mm > 0.0 && step_mm.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "projection step must be positive, got {step_mm}"
            )));
        }
        let frames = geometry
            .angles
            .iter()
            .map(|&t| {
                let f = ViewFrame::new(geometry, t);
                (f.source, f.det_center, f.u_axis)
            })
            .collect();
        Ok(Projector {
            geometry: geometry.clone(),
            grid: *grid,
            step: step_mm,
            frames,
        })
    }

    pub fn geometry(&self) -> &ConeBeamGeometry {
        &self.geometry
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    fn ray_samples(&self, view: usize, row: usize, col: usize) -> Option<RaySamples> {
        let (source, det_center, u_axis) = self.frames[view];
        let frame = ViewFrame {
            source,
            det_center,
            u_axis,
        };
        let target = frame.pixel(&self.geometry, row, col);
        let mut dir = [0.0; 3];
        for a in 0..3 {
            dir[a] = target[a] - source[a];
        }
        let length = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
        for d in &mut dir {
            *d /= length;
        }
        let mut t0 = 0.0f64;
        let mut t1 = length;
        for a in 0..3 {
            let half = 0.5 * self.grid.dims[a] as f64 * self.grid.spacing[a];
            if dir[a].abs() < 1e-15 {
                if source[a] < -half || source[a] > half {
                    return None;
                }
                continue;
            }
            let ta = (-half - source[a]) / dir[a];
            let tb = (half - source[a]) / dir[a];
            t0 = t0.max(ta.min(tb));
            t1 = t1.min(ta.max(tb));
        }
        if t1 <= t0 {
            return None;
        }
        let chord = t1 - t0;
        let count = (chord / self.step).ceil().max(1.0) as usize;
        let h = chord / count as f64;
        let mut start = [0.0; 3];
        let mut delta = [0.0; 3];
        for a in 0..3 {
            let s = self.grid.spacing[a];
            let center = 0.5 * (self.grid.dims[a] as f64 - 1.0);
            start[a] = (source[a] + (t0 + 0.5 * h) * dir[a]) / s + center;
            delta[a] = h * dir[a] / s;
        }
        Some(RaySamples {
            start,
            delta,
            count,
            weight: h,
        })
    }

    #[inline]
    fn corners(g: [f64; 3]) -> Corners {
        let mut base = [0i64; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let f = g[a].floor();
            base[a] = f as i64;
            frac[a] = g[a] - f;
        }
        Corners { base, frac }
    }

    /// Visits the in-grid trilinear neighbours of `g` with their weights.
    #[inline]
    fn for_each_corner(&self, g: [f64; 3], mut f: impl FnMut(usize, f64)) {
        let Corners { base, frac } = Self::corners(g);
        let [nx, ny, nz] = self.grid.dims;
        for dz in 0..2i64 {
            let z = base[2] + dz;
            if z < 0 || z >= nz as i64 {
                continue;
            }
            let wz = if dz == 0 { 1.0 - frac[2] } else { frac[2] };
            for dy in 0..2i64 {
                let y = base[1] + dy;
                if y < 0 || y >= ny as i64 {
                    continue;
                }
                let wy = wz * if dy == 0 { 1.0 - frac[1] } else { frac[1] };
                for dx in 0..2i64 {
                    let x = base[0] + dx;
                    if x < 0 || x >= nx as i64 {
                        continue;
                    }
                    let w = wy * if dx == 0 { 1.0 - frac[0] } else { frac[0] };
                    f(x as usize + nx * (y as usize + ny * z as usize), w);
                }
            }
        }
    }

    /// Flat index and fractions of the lower trilinear corner when all eight
    /// corners lie inside the grid.
    #[inline(always)]
    fn interior(&self, g: [f64; 3]) -> Option<(usize, [f64; 3])> {
        let [nx, ny, nz] = self.grid.dims;
        // samples never fall below -1, so shifted truncation is a floor
        let ix = (g[0] + 2.0) as usize;
        let iy = (g[1] + 2.0) as usize;
        let iz = (g[2] + 2.0) as usize;
        if ix < 2 || iy < 2 || iz < 2 || ix > nx || iy > ny || iz > nz {
            return None;
        }
        let (ix, iy, iz) = (ix - 2, iy - 2, iz - 2);
        let t = [g[0] - ix as f64, g[1] - iy as f64, g[2] - iz as f64];
        Some((ix + nx * (iy + ny * iz), t))
    }

    fn integrate(&self, values: &[f32], ray: &RaySamples) -> f64 {
        let [nx, ny, _] = self.grid.dims;
        let sz = nx * ny;
        let mut acc = 0.0;
        let mut g = ray.start;
        for _ in 0..ray.count {
            if let Some((i, t)) = self.interior(g) {
                let v = |k: usize| values[k] as f64;
                let lerp = |a: f64, b: f64, w: f64| a + w * (b - a);
                let c00 = lerp(v(i), v(i + 1), t[0]);
                let c10 = lerp(v(i + nx), v(i + nx + 1), t[0]);
                let c01 = lerp(v(i + sz), v(i + sz + 1), t[0]);
                let c11 = lerp(v(i + sz + nx), v(i + sz + nx + 1), t[0]);
                let c0 = lerp(c00, c10, t[1]);
                let c1 = lerp(c01, c11, t[1]);
                acc += lerp(c0, c1, t[2]);
            } else {
                self.for_each_corner(g, |idx, w| acc += w * values[idx] as f64);
            }
            for a in 0..3 {
                g[a] += ray.delta[a];
            }
        }
        acc * ray.weight
    }

    fn scatter(&self, out: &mut [f64], value: f64, ray: &RaySamples) {
        let [nx, ny, _] = self.grid.dims;
        let sz = nx * ny;
        let v = value * ray.weight;
        let mut g = ray.start;
        for _ in 0..ray.count {
            if let Some((i, t)) = self.interior(g) {
                let wz1 = v * t[2];
                let wz0 = v - wz1;
                let w01 = wz0 * t[1];
                let w00 = wz0 - w01;
                let w11 = wz1 * t[1];
                let w10 = wz1 - w11;
                for (base, w) in [(i, w00), (i + nx, w01), (i + sz, w10), (i + sz + nx, w11)] {
                    let hi = w * t[0];
                    out[base] += w - hi;
                    out[base + 1] += hi;
                }
            } else {
                self.for_each_corner(g, |idx, w| out[idx] += w * v);
            }
            for a in 0..3 {
                g[a] += ray.delta[a];
            }
        }
    }

    /// Projects `values` (laid out on the bound grid) for the listed views.
    /// Output is `[views.len()][rows][cols]`.
    pub fn forward_views(&self, values: &[f32], views: &[usize]) -> Vec<f32> {
        assert_eq!(values.len(), self.grid.len(), "volume size mismatch");
        let rows = self.geometry.det_rows;
        let cols = self.geometry.det_cols;
        let mut out = vec![0.0f32; views.len() * rows * cols];
        out.par_chunks_mut(cols)
            .enumerate()
            .for_each(|(line, slot)| {
                let view = views[line / rows];
                let row = line % rows;
                for (col, px) in slot.iter_mut().enumerate() {
                    if let Some(ray) = self.ray_samples(view, row, col) {
                        *px = self.integrate(values, &ray) as f32;
                    }
                }
            });
        out
    }

    /// Adjoint of [`forward_views`](Self::forward_views), accumulated in f64.
    pub fn back_views(&self, data: &[f32], views: &[usize]) -> Vec<f64> {
        let rows = self.geometry.det_rows;
        let cols = self.geometry.det_cols;
        let per_view = rows * cols;
        assert_eq!(data.len(), views.len() * per_view, "projection size mismatch");
        let n = self.grid.len();
        if views.is_empty() {
            return vec![0.0; n];
        }
        // fixed partition so the summation order never depends on threads
        let chunk = views.len().div_ceil(BACKPROJECT_CHUNKS);
        let partials: Vec<Vec<f64>> = views
            .par_chunks(chunk)
            .enumerate()
            .map(|(c, group)| {
                let mut acc = vec![0.0f64; n];
                for (offset, &view) in group.iter().enumerate() {
                    let local = c * chunk + offset;
                    let image = &data[local * per_view..(local + 1) * per_view];
                    for row in 0..rows {
                        for col in 0..cols {
                            let value = image[row * cols + col];
                            if value == 0.0 {
                                continue;
                            }
                            if let Some(ray) = self.ray_samples(view, row, col) {
                                self.scatter(&mut acc, value as f64, &ray);
                            }
                        }
                    }
                }
                acc
            })
            .collect();
        let mut iter = partials.into_iter();
        let mut total = iter.next().expect("at least one chunk");
        for part in iter {
            for (t, p) in total.iter_mut().zip(part) {
                *t += p;
            }
        }
        total
    }

    pub fn all_views(&self) -> Vec<usize> {
        (0..self.geometry.n_views()).collect()
    }
}

/// Line integrals of `vol` (value x mm) for every view of `geom`.
pub fn forward_project(vol: &Volume3, geom: &ConeBeamGeometry, step_mm: f64) -> Result<ProjectionSet> {
    let p = Projector::new(geom, vol.grid(), step_mm)?;
    let data = p.forward_views(vol.values(), &p.all_views());
    ProjectionSet::new(geom.clone(), data)
}

/// Matched adjoint of [`forward_project`] onto `grid`.
pub fn back_project(proj: &ProjectionSet, grid: &Grid, step_mm: f64) -> Result<Volume3> {
    let p = Projector::new(proj.geometry(), grid, step_mm)?;
    let acc = p.back_views(proj.data(), &p.all_views());
    Volume3::new(*grid, acc.into_iter().map(|v| v as f32).collect())
}
