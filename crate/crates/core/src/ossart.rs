//! Ordered-subset simultaneous algebraic reconstruction (OS-SART).
//!
//! Starting from zero, each subset `S` of views applies
//!
//! ```text
//! x <- x + lambda * BP_S((b_S - FP_S x) / (FP_S 1 + eps)) / (BP_S 1 + eps)
//! ```
//!
//! where the two normalizers are the per-ray and per-voxel weights of the
//! subset. Rays and voxels with zero weight receive no update. With
//! nonnegativity enabled the estimate is clamped at zero after every subset.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volgrid::{Grid, Volume3};
use crate::xproject::{ProjectionSet, Projector};

/// How views are grouped into subsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SubsetOrdering {
    /// Subset `k` takes the views whose index is `k` modulo the subset count.
    #[default]
    Interleaved,
    /// Contiguous blocks of views.
    Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OssartParams {
    pub n_subsets: usize,
    /// Full passes over all subsets.
    pub n_epochs: usize,
    /// Relaxation factor in (0, 2).
    pub relaxation: f64,
    pub nonnegativity: bool,
    pub ordering: SubsetOrdering,
    /// Stabilizer added to both normalizers.
    pub epsilon: f64,
    /// Integration step along rays, mm. `None` uses half the smallest
    /// voxel spacing.
    #[serde(default)]
    pub step_mm: Option<f64>,
}

impl Default for OssartParams {
    fn default() -> Self {
        OssartParams {
            n_subsets: 20,
            n_epochs: 20,
            relaxation: 1.0,
            nonnegativity: true,
            ordering: SubsetOrdering::Interleaved,
            epsilon: 1e-6,
            step_mm: None,
        }
    }
}

impl OssartParams {
    pub fn validate(&self, n_views: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n_subsets == 0 || self.n_subsets > n_views {
            return bad(format!(
                "subset count must be in 1..={n_views}, got {}",
                self.n_subsets
            ));
        }
        if self.n_epochs == 0 {
            return bad("at least one epoch is required".into());
        }
        if !(self.relaxation > 0.0 && self.relaxation < 2.0) {
            return bad(format!(
                "relaxation must lie in (0, 2), got {}",
                self.relaxation
            ));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if let Some(step) = self.step_mm {
            if !(step > 0.0 && step.is_finite()) {
                return bad(format!("step must be positive, got {step}"));
            }
        }
        Ok(())
    }
}

/// Partition of `n_views` into `n_subsets` groups.
pub fn subsets(n_views: usize, n_subsets: usize, ordering: SubsetOrdering) -> Vec<Vec<usize>> {
    match ordering {
        SubsetOrdering::Interleaved => (0..n_subsets)
            .map(|k| (k..n_views).step_by(n_subsets).collect())
            .collect(),
        SubsetOrdering::Sequential => (0..n_subsets)
            .map(|k| (k * n_views / n_subsets..(k + 1) * n_views / n_subsets).collect())
            .collect(),
    }
}

struct Subset {
    views: Vec<usize>,
    /// Per-pixel inverse ray weights; zero where the ray misses the volume.
    inv_row: Vec<f64>,
    /// Per-voxel inverse backprojection weights; zero where untouched.
    inv_col: Vec<f64>,
}

/// Reconstruction result with per-epoch diagnostics.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub volume: Volume3,
    /// `||b - A x|| / ||b||` after each epoch.
    pub residuals: Vec<f64>,
}

fn gather_views(proj: &ProjectionSet, views: &[usize]) -> Vec<f32> {
    let mut out = Vec::with_capacity(views.len() * proj.geometry().pixels_per_view());
    for &v in views {
        out.extend_from_slice(proj.view(v));
    }
    out
}

fn relative_residual(b: &[f32], ax: &[f32]) -> f64 {
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for (&x, &y) in b.iter().zip(ax) {
        num += (x as f64 - y as f64).powi(2);
        den += (x as f64).powi(2);
    }
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            num.sqrt()
        }
    } else {
        (num / den).sqrt()
    }
}

fn run(proj: &ProjectionSet, grid: &Grid, params: &OssartParams, track: bool) -> Result<Reconstruction> {
    proj.geometry().validate()?;
    grid.validate()?;
    params.validate(proj.n_views())?;
    let step = params.step_mm.unwrap_or_else(|| crate::xproject::default_step(grid));
    let projector = Projector::new(proj.geometry(), grid, step)?;
    let eps = params.epsilon;
    let ones = vec![1.0f32; grid.len()];

    let plan: Vec<Subset> = subsets(proj.n_views(), params.n_subsets, params.ordering)
        .into_iter()
        .map(|views| {
            let row = projector.forward_views(&ones, &views);
            let col = projector.back_views(&vec![1.0f32; row.len()], &views);
            let inv = |w: f64| if w > 0.0 { 1.0 / (w + eps) } else { 0.0 };
            Subset {
                inv_row: row.iter().map(|&w| inv(w as f64)).collect(),
                inv_col: col.iter().map(|&w| inv(w)).collect(),
                views,
            }
        })
        .collect();
    let measured: Vec<Vec<f32>> = plan.iter().map(|s| gather_views(proj, &s.views)).collect();
    let all_views = projector.all_views();

    let mut x = vec![0.0f32; grid.len()];
    let mut residuals = Vec::new();
    for epoch in 0..params.n_epochs {
        for (index, subset) in plan.iter().enumerate() {
            let fp = projector.forward_views(&x, &subset.views);
            let weighted: Vec<f32> = measured[index]
                .iter()
                .zip(&fp)
                .zip(&subset.inv_row)
                .map(|((&b, &ax), &w)| ((b as f64 - ax as f64) * w) as f32)
                .collect();
            let update = projector.back_views(&weighted, &subset.views);
            let mut finite = true;
            for ((xv, &u), &w) in x.iter_mut().zip(&update).zip(&subset.inv_col) {
                let mut v = *xv as f64 + params.relaxation * u * w;
                if params.nonnegativity && v < 0.0 {
                    v = 0.0;
                }
                *xv = v as f32;
                finite &= xv.is_finite();
            }
            if !finite {
                return Err(Error::NonFinite {
                    epoch,
                    subset: index,
                });
            }
        }
        if track {
            let ax = projector.forward_views(&x, &all_views);
            residuals.push(relative_residual(proj.data(), &ax));
        }
    }
    Ok(Reconstruction {
        volume: Volume3::new(*grid, x)?,
        residuals,
    })
}

/// Reconstructs `proj` onto `grid`.
pub fn reconstruct(proj: &ProjectionSet, grid: &Grid, params: &OssartParams) -> Result<Volume3> {
    run(proj, grid, params, false).map(|r| r.volume)
}

/// Reconstructs and records the relative data residual after every epoch.
pub fn reconstruct_with_history(
    proj: &ProjectionSet,
    grid: &Grid,
    params: &OssartParams,
) -> Result<Reconstruction> {
    run(proj, grid, params, true)
}

/// Per-epoch relative data residuals `||b - A x|| / ||b||`; zero data gives
/// zeros.
pub fn residual_history(proj: &ProjectionSet, grid: &Grid, params: &OssartParams) -> Result<Vec<f64>> {
    run(proj, grid, params, true).map(|r| r.residuals)
}
