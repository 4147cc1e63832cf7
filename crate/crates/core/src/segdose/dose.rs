use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::volgrid::{Mask3, Volume3};

/// Absorbed dose in Gy on a volume grid; values are finite and nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct DoseGrid(Volume3);

impl DoseGrid {
    pub fn new(vol: Volume3) -> Result<Self> {
        if let Some((i, &v)) = vol.values().iter().enumerate().find(|(_, &v)| v < 0.0) {
            return Err(Error::OutOfRange(format!(
                "dose {v} Gy at index {i} is negative"
            )));
        }
        Ok(DoseGrid(vol))
    }

    pub fn volume(&self) -> &Volume3 {
        &self.0
    }
}

/// Doses under the mask, in voxel index order.
fn masked(dose: &DoseGrid, mask: &Mask3, what: &str) -> Result<Vec<f64>> {
    dose.0.grid().ensure_matches(mask.grid(), what)?;
    let d: Vec<f64> = dose
        .0
        .values()
        .iter()
        .zip(mask.values())
        .filter(|(_, &m)| m == 1)
        .map(|(&v, _)| v as f64)
        .collect();
    if d.is_empty() {
        return Err(Error::EmptyMask(format!("{what} needs a nonempty structure")));
    }
    Ok(d)
}

/// Mean dose over the structure, Gy.
pub fn mean_dose(dose: &DoseGrid, mask: &Mask3) -> Result<f64> {
    let d = masked(dose, mask, "mean_dose")?;
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

/// Minimum dose received by the hottest `volume_cc` of the structure.
///
/// With the structure's doses sorted in descending order `d[0] >= d[1] >=
/// ...` and `x = volume_cc / voxel_cc`, an integral `x = n` gives `d[n-1]`,
/// the coldest of the `n` hottest voxels. In between, the result is linear
/// across the boundary voxel.
pub fn d_cc(dose: &DoseGrid, mask: &Mask3, volume_cc: f64) -> Result<f64> {
    let mut d = masked(dose, mask, "d_cc")?;
    if !(volume_cc > 0.0 && volume_cc.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "volume must be positive, got {volume_cc} cc"
        )));
    }
    let voxel_cc = mask.grid().voxel_volume_mm3() / 1000.0;
    let total = d.len() as f64 * voxel_cc;
    if volume_cc > total * (1.0 + 1e-12) {
        return Err(Error::OutOfRange(format!(
            "structure volume {total} cc is smaller than the requested {volume_cc} cc"
        )));
    }
    d.sort_by(|a, b| b.total_cmp(a));
    let x = (volume_cc / voxel_cc).min(d.len() as f64);
    let f = x.floor() as usize;
    if f == 0 {
        return Ok(d[0]);
    }
    if f >= d.len() {
        return Ok(d[d.len() - 1]);
    }
    let t = x - f as f64;
    Ok(d[f - 1] + t * (d[f] - d[f - 1]))
}

/// Cumulative dose-volume histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DvhCurve {
    /// `n_bins + 1` uniform dose levels from 0 to the maximum structure dose.
    pub dose_edges: Vec<f64>,
    /// Structure volume in cc receiving at least each dose level.
    pub volume_cc: Vec<f64>,
}

impl DvhCurve {
    pub fn bin_width(&self) -> f64 {
        match self.dose_edges.len() {
            0 | 1 => 0.0,
            n => self.dose_edges[n - 1] / (n - 1) as f64,
        }
    }
}

pub fn dvh(dose: &DoseGrid, mask: &Mask3, n_bins: usize) -> Result<DvhCurve> {
    if n_bins == 0 {
        return Err(Error::InvalidParameter("dvh needs at least one bin".into()));
    }
    let mut d = masked(dose, mask, "dvh")?;
    d.sort_by(f64::total_cmp);
    let voxel_cc = mask.grid().voxel_volume_mm3() / 1000.0;
    let max = d[d.len() - 1];
    let dose_edges: Vec<f64> = (0..=n_bins)
        .map(|i| max * i as f64 / n_bins as f64)
        .collect();
    let volume_cc = dose_edges
        .iter()
        .map(|&e| {
            let below = d.partition_point(|&v| v < e);
            (d.len() - below) as f64 * voxel_cc
        })
        .collect();
    Ok(DvhCurve {
        dose_edges,
        volume_cc,
    })
}

/// Writes a DVH as `dose_Gy,volume_cc` rows.
pub fn write_dvh_csv(curve: &DvhCurve, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let ser = |e: csv::Error| Error::Serde(e.to_string());
    w.write_record(["dose_Gy", "volume_cc"]).map_err(ser)?;
    for (d, v) in curve.dose_edges.iter().zip(&curve.volume_cc) {
        w.write_record([d.to_string(), v.to_string()]).map_err(ser)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
    write_atomic(path, &bytes)
}

/// Agreement between paired measurements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlandAltmanStats {
    /// Mean of `x - y`.
    pub bias: f64,
    /// Sample standard deviation of the differences.
    pub sd: f64,
    pub loa_low: f64,
    pub loa_high: f64,
    pub n: usize,
}

pub fn bland_altman(pairs: &[(f64, f64)]) -> Result<BlandAltmanStats> {
    let n = pairs.len();
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "Bland-Altman analysis needs at least 2 pairs, got {n}"
        )));
    }
    if pairs.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::OutOfRange("paired values must be finite".into()));
    }
    let diffs: Vec<f64> = pairs.iter().map(|(x, y)| x - y).collect();
    let bias = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - bias).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    Ok(BlandAltmanStats {
        bias,
        sd,
        loa_low: bias - 1.96 * sd,
        loa_high: bias + 1.96 * sd,
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volgrid::Grid;

    #[test]
    fn negative_dose_rejected() {
        let g = Grid::unit([2, 1, 1]).unwrap();
        assert!(DoseGrid::new(Volume3::new(g, vec![1.0, -0.5]).unwrap()).is_err());
    }

    #[test]
    fn uniform_dose() {
        let g = Grid::new([5, 5, 4], [2.0, 2.0, 3.0], [0.0; 3]).unwrap();
        let dose = DoseGrid::new(Volume3::filled(g, 2.0)).unwrap();
        let mask = Mask3::from_fn(g, |i, _, _| i > 0).unwrap();
        assert_eq!(mean_dose(&dose, &mask).unwrap(), 2.0);
        for v in [0.001, 0.1, mask.volume_cc()] {
            assert_eq!(d_cc(&dose, &mask, v).unwrap(), 2.0);
        }
        let curve = dvh(&dose, &mask, 10).unwrap();
        assert!(curve.volume_cc.iter().all(|&v| (v - mask.volume_cc()).abs() < 1e-12));
        assert!(mean_dose(&dose, &Mask3::empty(g)).is_err());
    }

    #[test]
    fn d5cc_sorting_example() {
        let g = Grid::unit([100, 100, 1]).unwrap();
        let dose = DoseGrid::new(
            Volume3::new(g, (0..10_000).map(|i| i as f32 / 1000.0).collect()).unwrap(),
        )
        .unwrap();
        let mask = Mask3::from_fn(g, |_, _, _| true).unwrap();
        assert!((d_cc(&dose, &mask, 5.0).unwrap() - 5.0).abs() < 1e-6);
        assert!(d_cc(&dose, &mask, 10.5).is_err());
    }

    #[test]
    fn d_cc_interpolates_and_decreases() {
        let g = Grid::new([4, 1, 1], [10.0, 10.0, 10.0], [0.0; 3]).unwrap();
        let dose = DoseGrid::new(Volume3::new(g, vec![4.0, 1.0, 3.0, 2.0]).unwrap()).unwrap();
        let mask = Mask3::from_fn(g, |_, _, _| true).unwrap();
        assert_eq!(d_cc(&dose, &mask, 1.0).unwrap(), 4.0);
        assert_eq!(d_cc(&dose, &mask, 2.0).unwrap(), 3.0);
        assert_eq!(d_cc(&dose, &mask, 2.5).unwrap(), 2.5);
        assert_eq!(d_cc(&dose, &mask, 4.0).unwrap(), 1.0);
    }

    #[test]
    fn bland_altman_arithmetic() {
        let s = bland_altman(&[(1.0, 2.0), (3.0, 3.0), (5.0, 4.0)]).unwrap();
        assert_eq!(s.bias, 0.0);
        assert_eq!(s.sd, 1.0);
        assert_eq!((s.loa_low, s.loa_high), (-1.96, 1.96));
        let z = bland_altman(&[(2.0, 2.0), (7.0, 7.0)]).unwrap();
        assert_eq!((z.bias, z.sd), (0.0, 0.0));
        assert!(bland_altman(&[(1.0, 1.0)]).is_err());
    }

    #[test]
    fn dvh_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let curve = DvhCurve {
            dose_edges: vec![0.0, 1.5],
            volume_cc: vec![2.0, 0.5],
        };
        let p = dir.path().join("dvh.csv");
        write_dvh_csv(&curve, &p).unwrap();
        assert_eq!(
            std::fs::read_to_string(&p).unwrap(),
            "dose_Gy,volume_cc\n0,2\n1.5,0.5\n"
        );
    }
}
