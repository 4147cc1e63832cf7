//! Synthetic thorax-like test case: a clean reference volume, an esophagus
//! mask, a dose grid, and a degraded "CBCT" with streaks, cupping and noise
//! over a shorter cranio-caudal field of view.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::segdose::DoseGrid;
use crate::volgrid::{write_mask, write_volume, Grid, Mask3, Volume3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhantomSpec {
    /// Voxels along x and y.
    pub n_xy: usize,
    /// Slices of the reference volume.
    pub n_z: usize,
    /// Slices removed from each end for the degraded volume.
    pub cbct_margin: usize,
    /// Isotropic voxel size, mm.
    pub spacing: f64,
    pub noise_sigma: f64,
    pub streak_amplitude: f64,
    pub cupping: f64,
}

impl PhantomSpec {
    /// 64^3 voxels of 4 mm.
    pub fn desk() -> Self {
        PhantomSpec {
            n_xy: 64,
            n_z: 64,
            cbct_margin: 8,
            spacing: 4.0,
            noise_sigma: 0.04,
            streak_amplitude: 0.06,
            cupping: 0.08,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PhantomCase {
    pub reference: Volume3,
    pub degraded: Volume3,
    pub esophagus: Mask3,
    pub dose: DoseGrid,
}

fn centered_grid(n: [usize; 3], s: f64) -> Result<Grid> {
    Grid::new(
        n,
        [s; 3],
        std::array::from_fn(|a| -0.5 * (n[a] as f64 - 1.0) * s),
    )
}

fn inside_ellipse(x: f64, y: f64, cx: f64, cy: f64, a: f64, b: f64) -> bool {
    ((x - cx) / a).powi(2) + ((y - cy) / b).powi(2) <= 1.0
}

/// Anatomy value at a physical point; positive y is posterior.
fn anatomy(p: [f64; 3], half_z: f64) -> (f32, bool) {
    let [x, y, z] = p;
    if !inside_ellipse(x, y, 0.0, 0.0, 118.0, 88.0) {
        return (0.0, false);
    }
    let esophagus = inside_ellipse(x, y, 4.0, 34.0, 7.0, 6.0);
    if esophagus {
        return (0.46, true);
    }
    if inside_ellipse(x, y, 0.0, 62.0, 15.0, 14.0) {
        return (0.95, false);
    }
    let taper = (1.0 - (z / (1.4 * half_z)).powi(2)).max(0.2);
    for cx in [-58.0, 58.0] {
        if inside_ellipse(x, y, cx, 5.0, 38.0 * taper, 55.0 * taper) {
            return (0.12, false);
        }
    }
    if inside_ellipse(x, y, 12.0, -30.0, 34.0, 28.0) {
        return (0.56, false);
    }
    if inside_ellipse(x, y, 0.0, 0.0, 112.0, 82.0) {
        (0.5, false)
    } else {
        // skin and fat layer
        (0.42, false)
    }
}

pub fn generate(spec: &PhantomSpec, seed: u64) -> Result<PhantomCase> {
    let s = spec.spacing;
    let ref_grid = centered_grid([spec.n_xy, spec.n_xy, spec.n_z], s)?;
    let half_z = 0.5 * spec.n_z as f64 * s;
    let mut mask = Vec::with_capacity(ref_grid.len());
    let reference = Volume3::from_fn(ref_grid, |i, j, k| {
        let (v, m) = anatomy(ref_grid.voxel_center([i, j, k]), half_z);
        mask.push(m as u8);
        v
    })?;
    let esophagus = Mask3::new(ref_grid, mask)?;

    let tumor = [-20.0, 20.0, 10.0];
    let dose = Volume3::from_fn(ref_grid, |i, j, k| {
        let p = ref_grid.voxel_center([i, j, k]);
        if reference.get(i, j, k) == 0.0 {
            return 0.0;
        }
        let r2: f64 = (0..3).map(|a| (p[a] - tumor[a]).powi(2)).sum();
        (2.0 + 58.0 * (-r2 / (2.0 * 30.0f64.powi(2))).exp()) as f32
    })?;

    let nz_cbct = spec.n_z - 2 * spec.cbct_margin;
    let mut cbct_grid = centered_grid([spec.n_xy, spec.n_xy, nz_cbct], s)?;
    cbct_grid.origin[2] = ref_grid.origin[2] + spec.cbct_margin as f64 * s;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.noise_sigma.max(0.0)).expect("finite sigma");
    let bone = [0.0, 62.0];
    let body_radius = 118.0;
    let mut degraded = Vec::with_capacity(cbct_grid.len());
    for k in 0..nz_cbct {
        for j in 0..spec.n_xy {
            for i in 0..spec.n_xy {
                let p = cbct_grid.voxel_center([i, j, k]);
                let clean = reference.get(i, j, k + spec.cbct_margin) as f64;
                let (dx, dy) = (p[0] - bone[0], p[1] - bone[1]);
                let rb = (dx * dx + dy * dy).sqrt();
                let streak = spec.streak_amplitude
                    * (9.0 * dy.atan2(dx)).cos()
                    * (-rb / 70.0).exp()
                    * (rb > 16.0) as u8 as f64;
                let r = (p[0] * p[0] + p[1] * p[1]).sqrt() / body_radius;
                let cup = if clean > 0.0 { -spec.cupping * (1.0 - r * r).max(0.0) } else { 0.0 };
                let n = if spec.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                degraded.push((clean + streak + cup + n) as f32);
            }
        }
    }
    Ok(PhantomCase {
        reference,
        degraded: Volume3::new(cbct_grid, degraded)?,
        esophagus,
        dose: DoseGrid::new(dose)?,
    })
}

/// File names written by [`write_case`].
pub const REFERENCE_FILE: &str = "pct.mha";
pub const DEGRADED_FILE: &str = "cbct.mha";
pub const MASK_FILE: &str = "esophagus.mha";
pub const DOSE_FILE: &str = "dose.mha";
pub const CASE_FILE: &str = "case.toml";

/// Writes the volumes and a `case.toml` describing them with relative
/// paths.
pub fn write_case(case: &PhantomCase, dir: &Path) -> Result<()> {
    crate::fsutil::create_dir_all(dir)?;
    write_volume(&case.reference, &dir.join(REFERENCE_FILE))?;
    write_volume(&case.degraded, &dir.join(DEGRADED_FILE))?;
    write_mask(&case.esophagus, &dir.join(MASK_FILE))?;
    write_volume(case.dose.volume(), &dir.join(DOSE_FILE))?;
    let description = format!(
        "case_id = \"phantom\"\npct_path = \"{REFERENCE_FILE}\"\ncbct_path = \"{DEGRADED_FILE}\"\n\
         dose_path = \"{DOSE_FILE}\"\n\n[mask_paths]\nesophagus = \"{MASK_FILE}\"\n"
    );
    crate::fsutil::write_atomic(&dir.join(CASE_FILE), description.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_phantom_shapes() {
        let case = generate(&PhantomSpec::desk(), 1).unwrap();
        assert_eq!(case.reference.dims(), [64, 64, 64]);
        assert_eq!(case.degraded.dims(), [64, 64, 48]);
        assert!(case.esophagus.count() > 300);
        let c = case.reference.grid().center();
        assert!(c.iter().all(|v| v.abs() < 1e-9));
        let (lo, hi) = case.reference.min_max();
        assert_eq!((lo, hi), (0.0, 0.95));
    }

    #[test]
    fn written_case_loads() {
        let dir = tempfile::tempdir().unwrap();
        let case = generate(&PhantomSpec::desk(), 3).unwrap();
        write_case(&case, dir.path()).unwrap();
        let inputs = crate::pipeline::CaseInputs::from_file(&dir.path().join(CASE_FILE)).unwrap();
        let loaded = inputs.load().unwrap();
        assert_eq!(loaded.pct, case.reference);
        assert_eq!(loaded.masks["esophagus"], case.esophagus);
        assert_eq!(inputs.dose_path.unwrap(), dir.path().join(DOSE_FILE));
    }

    #[test]
    fn same_seed_same_case() {
        let a = generate(&PhantomSpec::desk(), 9).unwrap();
        let b = generate(&PhantomSpec::desk(), 9).unwrap();
        assert_eq!(a.degraded, b.degraded);
        let c = generate(&PhantomSpec::desk(), 10).unwrap();
        assert_ne!(a.degraded, c.degraded);
    }
}
