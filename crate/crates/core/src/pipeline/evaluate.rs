use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segdose::{bland_altman, d_cc, dice, hd95, mean_dose, BlandAltmanStats, DoseGrid, HD95_VARIANT};
use crate::volgrid::{resample_mask_to_grid, Mask3};

/// Hottest volume used for the near-maximum dose metric, cc.
pub const DOSE_HOT_VOLUME_CC: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoseComparison {
    pub mean_pred: f64,
    pub mean_truth: f64,
    /// `mean_pred - mean_truth`, Gy.
    pub mean_diff: f64,
    pub d5cc_pred: f64,
    pub d5cc_truth: f64,
    pub d5cc_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationReport {
    #[serde(default)]
    pub case_id: String,
    pub dice: f64,
    pub hd95_mm: f64,
    pub hd95_variant: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dose: Option<DoseComparison>,
}

/// Geometric and, with a dose grid, dosimetric agreement of a predicted
/// contour with the truth. With `resample` set, a prediction on another
/// grid is first mapped to the truth grid by nearest neighbor.
pub fn evaluate_segmentation(
    pred: &Mask3,
    truth: &Mask3,
    dose: Option<&DoseGrid>,
    resample: bool,
) -> Result<SegmentationReport> {
    let resampled;
    let pred = if pred.grid().matches(truth.grid()) {
        pred
    } else if resample {
        resampled = resample_mask_to_grid(pred, truth.grid())?;
        &resampled
    } else {
        return Err(Error::GridMismatch(
            "prediction and truth grids differ; enable resampling to compare".into(),
        ));
    };
    if truth.count() == 0 {
        return Err(Error::EmptyMask("truth contour".into()));
    }
    if pred.count() == 0 {
        return Err(Error::EmptyMask("predicted contour".into()));
    }
    let dose = match dose {
        None => None,
        Some(d) => {
            let mean_pred = mean_dose(d, pred)?;
            let mean_truth = mean_dose(d, truth)?;
            let d5cc_pred = d_cc(d, pred, DOSE_HOT_VOLUME_CC)?;
            let d5cc_truth = d_cc(d, truth, DOSE_HOT_VOLUME_CC)?;
            Some(DoseComparison {
                mean_pred,
                mean_truth,
                mean_diff: mean_pred - mean_truth,
                d5cc_pred,
                d5cc_truth,
                d5cc_diff: d5cc_pred - d5cc_truth,
            })
        }
    };
    Ok(SegmentationReport {
        case_id: String::new(),
        dice: dice(pred, truth)?,
        hd95_mm: hd95(pred, truth)?,
        hd95_variant: HD95_VARIANT.to_string(),
        dose,
    })
}

/// Bland-Altman agreement of predicted vs true dose metrics over cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub cases: Vec<SegmentationReport>,
    pub mean_dice: f64,
    pub mean_hd95_mm: f64,
    /// Pairs are (predicted, true) mean dose.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_dose_agreement: Option<BlandAltmanStats>,
    /// Pairs are (predicted, true) D5cc.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d5cc_agreement: Option<BlandAltmanStats>,
}

pub fn aggregate(cases: Vec<SegmentationReport>) -> Result<BatchReport> {
    if cases.is_empty() {
        return Err(Error::InvalidParameter("batch report needs at least one case".into()));
    }
    let n = cases.len() as f64;
    let mean_dice = cases.iter().map(|c| c.dice).sum::<f64>() / n;
    let mean_hd95_mm = cases.iter().map(|c| c.hd95_mm).sum::<f64>() / n;
    let doses: Vec<DoseComparison> = cases.iter().filter_map(|c| c.dose).collect();
    let (mean_dose_agreement, d5cc_agreement) = if doses.len() >= 2 {
        let m: Vec<_> = doses.iter().map(|d| (d.mean_pred, d.mean_truth)).collect();
        let h: Vec<_> = doses.iter().map(|d| (d.d5cc_pred, d.d5cc_truth)).collect();
        (Some(bland_altman(&m)?), Some(bland_altman(&h)?))
    } else {
        (None, None)
    };
    Ok(BatchReport {
        cases,
        mean_dice,
        mean_hd95_mm,
        mean_dose_agreement,
        d5cc_agreement,
    })
}

/// One CSV row per case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationRow {
    pub case_id: String,
    pub dice: f64,
    pub hd95_mm: f64,
    pub mean_dose_pred_gy: Option<f64>,
    pub mean_dose_truth_gy: Option<f64>,
    pub mean_dose_diff_gy: Option<f64>,
    pub d5cc_pred_gy: Option<f64>,
    pub d5cc_truth_gy: Option<f64>,
    pub d5cc_diff_gy: Option<f64>,
}

impl From<&SegmentationReport> for SegmentationRow {
    fn from(r: &SegmentationReport) -> Self {
        SegmentationRow {
            case_id: r.case_id.clone(),
            dice: r.dice,
            hd95_mm: r.hd95_mm,
            mean_dose_pred_gy: r.dose.map(|d| d.mean_pred),
            mean_dose_truth_gy: r.dose.map(|d| d.mean_truth),
            mean_dose_diff_gy: r.dose.map(|d| d.mean_diff),
            d5cc_pred_gy: r.dose.map(|d| d.d5cc_pred),
            d5cc_truth_gy: r.dose.map(|d| d.d5cc_truth),
            d5cc_diff_gy: r.dose.map(|d| d.d5cc_diff),
        }
    }
}

pub fn segmentation_csv(reports: &[SegmentationReport]) -> Result<Vec<u8>> {
    let rows: Vec<SegmentationRow> = reports.iter().map(SegmentationRow::from).collect();
    super::synth::csv_bytes(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volgrid::{Grid, Volume3};

    fn setup() -> (Grid, Mask3, DoseGrid) {
        let g = Grid::new([12, 12, 12], [3.0, 3.0, 3.0], [0.0; 3]).unwrap();
        let m = Mask3::from_fn(g, |i, j, k| (3..9).contains(&i) && (3..9).contains(&j) && k > 1).unwrap();
        let d = DoseGrid::new(Volume3::from_fn(g, |i, j, k| (i + j + k) as f32 * 0.5).unwrap()).unwrap();
        (g, m, d)
    }

    #[test]
    fn perfect_prediction() {
        let (_, m, d) = setup();
        let r = evaluate_segmentation(&m, &m, Some(&d), false).unwrap();
        assert_eq!(r.dice, 1.0);
        assert_eq!(r.hd95_mm, 0.0);
        let dose = r.dose.unwrap();
        assert_eq!(dose.mean_diff, 0.0);
        assert_eq!(dose.d5cc_diff, 0.0);
    }

    #[test]
    fn grid_mismatch_needs_resample_flag() {
        let (g, m, _) = setup();
        let other = Grid::new([6, 6, 6], [4.0, 4.0, 4.0], [1.0; 3]).unwrap();
        let pred = Mask3::from_fn(other, |i, j, _| (2..4).contains(&i) && (2..4).contains(&j)).unwrap();
        assert!(matches!(
            evaluate_segmentation(&pred, &m, None, false),
            Err(Error::GridMismatch(_))
        ));
        let r = evaluate_segmentation(&pred, &m, None, true).unwrap();
        assert!(r.dice > 0.0);
        assert_eq!(m.grid(), &g);
    }

    #[test]
    fn empty_masks_are_errors() {
        let (g, m, _) = setup();
        assert!(evaluate_segmentation(&Mask3::empty(g), &m, None, false).is_err());
        assert!(evaluate_segmentation(&m, &Mask3::empty(g), None, false).is_err());
    }
}
