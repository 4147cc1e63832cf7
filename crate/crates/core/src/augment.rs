//! The eight training augmentations, applied jointly to an image and its
//! mask.
//!
//! Geometric presets rotate about the z axis and shear in the x-y plane,
//! uniformly for every slice, about the physical center of the volume. The
//! output stays on the input grid; samples that map outside the input are 0.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volgrid::resample::{nearest_index, sample_trilinear};
use crate::volgrid::{box_mean_truncated, Mask3, Volume3};

pub const DEFAULT_SHARPEN_AMOUNT: f64 = 1.0;
pub const DEFAULT_SIGMOID_GAIN: f64 = 10.0;
pub const DEFAULT_SIGMOID_CUTOFF: f64 = 0.5;

/// Number of built-in presets.
pub const N_PRESETS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentKind {
    Sharpen,
    SigmoidContrast,
    Affine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSpec {
    pub kind: AugmentKind,
    /// In-plane scale factor.
    pub scale: f64,
    /// Rotation about z, degrees.
    pub rotate_deg: f64,
    /// Shear angle: `x' = x + tan(shear) * y`.
    pub shear_deg: f64,
    pub amount: f64,
    pub gain: f64,
    pub cutoff: f64,
}

impl AugmentSpec {
    fn base(kind: AugmentKind) -> Self {
        AugmentSpec {
            kind,
            scale: 1.0,
            rotate_deg: 0.0,
            shear_deg: 0.0,
            amount: DEFAULT_SHARPEN_AMOUNT,
            gain: DEFAULT_SIGMOID_GAIN,
            cutoff: DEFAULT_SIGMOID_CUTOFF,
        }
    }

    pub fn sharpen(amount: f64) -> Self {
        AugmentSpec {
            amount,
            ..Self::base(AugmentKind::Sharpen)
        }
    }

    pub fn sigmoid(gain: f64, cutoff: f64) -> Self {
        AugmentSpec {
            gain,
            cutoff,
            ..Self::base(AugmentKind::SigmoidContrast)
        }
    }

    pub fn affine(scale: f64, rotate_deg: f64, shear_deg: f64) -> Self {
        AugmentSpec {
            scale,
            rotate_deg,
            shear_deg,
            ..Self::base(AugmentKind::Affine)
        }
    }

    /// Preset `index` in `1..=8`: sharpen, sigmoid contrast, the four
    /// scale/rotate combinations (1.3, +10), (1.3, -10), (0.8, +10),
    /// (0.8, -10), then shear +20 and -20 degrees.
    pub fn preset(index: usize) -> Result<Self> {
        Ok(match index {
            1 => Self::sharpen(DEFAULT_SHARPEN_AMOUNT),
            2 => Self::sigmoid(DEFAULT_SIGMOID_GAIN, DEFAULT_SIGMOID_CUTOFF),
            3 => Self::affine(1.3, 10.0, 0.0),
            4 => Self::affine(1.3, -10.0, 0.0),
            5 => Self::affine(0.8, 10.0, 0.0),
            6 => Self::affine(0.8, -10.0, 0.0),
            7 => Self::affine(1.0, 0.0, 20.0),
            8 => Self::affine(1.0, 0.0, -20.0),
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "augmentation preset must be 1..={N_PRESETS}, got {index}"
                )))
            }
        })
    }

    /// Short file-name friendly label.
    pub fn label(&self) -> String {
        match self.kind {
            AugmentKind::Sharpen => format!("sharpen{}", self.amount),
            AugmentKind::SigmoidContrast => format!("sigmoid{}c{}", self.gain, self.cutoff),
            AugmentKind::Affine if self.shear_deg != 0.0 && self.scale == 1.0 && self.rotate_deg == 0.0 => {
                format!("shear{:+}", self.shear_deg)
            }
            AugmentKind::Affine => format!(
                "affine_s{}_r{:+}_sh{:+}",
                self.scale, self.rotate_deg, self.shear_deg
            ),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.scale,
            self.rotate_deg,
            self.shear_deg,
            self.amount,
            self.gain,
            self.cutoff,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParameter("augmentation fields must be finite".into()));
        }
        if self.scale <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "scale must be positive, got {}",
                self.scale
            )));
        }
        if self.shear_deg.abs() >= 90.0 {
            return Err(Error::InvalidParameter(format!(
                "shear must lie strictly between -90 and 90 degrees, got {}",
                self.shear_deg
            )));
        }
        if self.amount < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "sharpen amount must be nonnegative, got {}",
                self.amount
            )));
        }
        Ok(())
    }
}

/// Unsharp mask `v + amount * (v - mean_3x3x3(v))`.
pub fn sharpen(vol: &Volume3, amount: f64) -> Result<Volume3> {
    if !(amount >= 0.0 && amount.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "sharpen amount must be nonnegative, got {amount}"
        )));
    }
    let mean = box_mean_truncated(vol, [1, 1, 1]);
    let values = vol
        .values()
        .iter()
        .zip(mean.values())
        .map(|(&v, &m)| (v as f64 + amount * (v as f64 - m as f64)) as f32)
        .collect();
    Volume3::new(*vol.grid(), values)
}

/// Logistic contrast curve `1 / (1 + exp(-gain * (v - cutoff)))` on
/// `[0, 1]` gray levels.
pub fn sigmoid_contrast(vol: &Volume3, gain: f64, cutoff: f64) -> Result<Volume3> {
    if !(gain.is_finite() && cutoff.is_finite()) {
        return Err(Error::InvalidParameter("gain and cutoff must be finite".into()));
    }
    let tol = crate::plahe::RANGE_TOLERANCE;
    if let Some((i, &v)) = vol
        .values()
        .iter()
        .enumerate()
        .find(|(_, &v)| (v as f64) < -tol || v as f64 > 1.0 + tol)
    {
        return Err(Error::OutOfRange(format!(
            "sigmoid contrast expects [0, 1] input, found {v} at index {i}"
        )));
    }
    vol.map(|v| (1.0 / (1.0 + (-gain * (v as f64 - cutoff)).exp())) as f32)
}

/// In-plane forward matrix `R(rotate) * Shear(shear) * scale`.
fn forward_matrix(spec: &AugmentSpec) -> [[f64; 2]; 2] {
    let (s, c) = spec.rotate_deg.to_radians().sin_cos();
    let t = spec.shear_deg.to_radians().tan();
    let k = spec.scale;
    // R * [[1, t], [0, 1]] * k
    [[k * c, k * (c * t - s)], [k * s, k * (s * t + c)]]
}

fn invert(m: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    [
        [m[1][1] / det, -m[0][1] / det],
        [-m[1][0] / det, m[0][0] / det],
    ]
}

/// Removes round-off from coordinates that land on voxel centers.
fn snap(g: f64) -> f64 {
    let r = g.round();
    if (g - r).abs() < 1e-9 {
        r
    } else {
        g
    }
}

/// Applies an affine preset to a volume and, when given, its mask. Volumes
/// are sampled trilinearly, masks by nearest neighbor.
pub fn affine_transform(
    vol: &Volume3,
    mask: Option<&Mask3>,
    spec: &AugmentSpec,
) -> Result<(Volume3, Option<Mask3>)> {
    if spec.kind != AugmentKind::Affine {
        return Err(Error::InvalidParameter(format!(
            "affine_transform needs an affine spec, got {:?}",
            spec.kind
        )));
    }
    spec.validate()?;
    let grid = *vol.grid();
    if let Some(m) = mask {
        grid.ensure_matches(m.grid(), "affine_transform")?;
    }
    let inv = invert(forward_matrix(spec));
    let center = grid.center();
    let source_index = |idx: usize| {
        let p = grid.voxel_center(grid.coords(idx));
        let dx = p[0] - center[0];
        let dy = p[1] - center[1];
        let q = [
            center[0] + inv[0][0] * dx + inv[0][1] * dy,
            center[1] + inv[1][0] * dx + inv[1][1] * dy,
            p[2],
        ];
        grid.physical_to_index(q).map(snap)
    };
    let chunk = grid.dims[0] * grid.dims[1];
    let values: Vec<f32> = (0..grid.len())
        .into_par_iter()
        .with_min_len(chunk)
        .map(|idx| sample_trilinear(&grid, vol.values(), source_index(idx)) as f32)
        .collect();
    let out_mask = match mask {
        None => None,
        Some(m) => {
            let src = m.values();
            let v: Vec<u8> = (0..grid.len())
                .into_par_iter()
                .with_min_len(chunk)
                .map(|idx| nearest_index(&grid, source_index(idx)).map_or(0, |s| src[s]))
                .collect();
            Some(Mask3::new(grid, v)?)
        }
    };
    Ok((Volume3::new(grid, values)?, out_mask))
}

/// Applies any spec. Intensity augmentations return the mask unchanged.
pub fn apply(vol: &Volume3, mask: Option<&Mask3>, spec: &AugmentSpec) -> Result<(Volume3, Option<Mask3>)> {
    spec.validate()?;
    match spec.kind {
        AugmentKind::Sharpen => Ok((sharpen(vol, spec.amount)?, mask.cloned())),
        AugmentKind::SigmoidContrast => Ok((
            sigmoid_contrast(vol, spec.gain, spec.cutoff)?,
            mask.cloned(),
        )),
        AugmentKind::Affine => affine_transform(vol, mask, spec),
    }
}
