use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::{
    AugmentSpec, DEFAULT_SHARPEN_AMOUNT, DEFAULT_SIGMOID_CUTOFF, DEFAULT_SIGMOID_GAIN, N_PRESETS,
};
use crate::error::{Error, Result};
use crate::ossart::OssartParams;
use crate::plahe::{ExtractionMode, PlaheParams, COMBO_PRESETS, DEFAULT_WINDOW};
use crate::xproject::{uniform_angles, ConeBeamGeometry};

/// Built-in parameter sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// The clinical acquisition: 512^2 detector, 500 views.
    Clinical,
    /// 128^2 detector, 90 views, sized for 64^3 volumes.
    Desk,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clinical" => Ok(Profile::Clinical),
            "desk" => Ok(Profile::Desk),
            other => Err(Error::Config(format!(
                "unknown profile {other:?}, expected \"clinical\" or \"desk\""
            ))),
        }
    }
}

/// Mode selection for artifact extraction; `auto` picks per preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeChoice {
    Auto,
    Direct,
    Residual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaheConfig {
    pub window: [usize; 3],
    pub mode: ModeChoice,
}

/// Scanner description. Views are either `n_views` uniform angles over a
/// full rotation or an explicit `angles` list in radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub dsd: f64,
    pub dso: f64,
    pub det_rows: usize,
    pub det_cols: usize,
    pub pixel_size: [f64; 2],
    pub center_offset: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_views: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angles: Option<Vec<f64>>,
}

impl GeometryConfig {
    fn from_geometry(g: &ConeBeamGeometry) -> Self {
        GeometryConfig {
            dsd: g.dsd,
            dso: g.dso,
            det_rows: g.det_rows,
            det_cols: g.det_cols,
            pixel_size: g.pixel_size,
            center_offset: g.center_offset,
            n_views: Some(g.n_views()),
            angles: None,
        }
    }

    pub fn to_geometry(&self) -> Result<ConeBeamGeometry> {
        let angles = match (&self.n_views, &self.angles) {
            (Some(n), None) => uniform_angles(*n),
            (None, Some(a)) => a.clone(),
            _ => {
                return Err(Error::Config(
                    "geometry needs exactly one of n_views or angles".into(),
                ))
            }
        };
        let g = ConeBeamGeometry {
            dsd: self.dsd,
            dso: self.dso,
            det_rows: self.det_rows,
            det_cols: self.det_cols,
            pixel_size: self.pixel_size,
            center_offset: self.center_offset,
            angles,
        };
        g.validate()?;
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    /// Preset indices in `1..=8` applied by the training manifest.
    pub presets: Vec<usize>,
    pub sharpen_amount: f64,
    pub sigmoid_gain: f64,
    pub sigmoid_cutoff: f64,
}

impl AugmentConfig {
    pub fn specs(&self) -> Result<Vec<(usize, AugmentSpec)>> {
        self.presets
            .iter()
            .map(|&i| {
                let mut spec = AugmentSpec::preset(i)?;
                spec.amount = self.sharpen_amount;
                spec.gain = self.sigmoid_gain;
                spec.cutoff = self.sigmoid_cutoff;
                spec.validate()?;
                Ok((i, spec))
            })
            .collect()
    }
}

/// Everything that controls a synthesis run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub profile: Profile,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// PL-AHE presets in `1..=7`.
    pub presets: Vec<usize>,
    pub plahe: PlaheConfig,
    /// Weight of the artifact field when induced into the reference.
    pub induction_lambda: f64,
    pub geometry: GeometryConfig,
    /// Ray integration step, mm; absent means half the smallest spacing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projection_step_mm: Option<f64>,
    /// Standard deviation of the Gaussian noise added to projections,
    /// in line-integral units (value x mm).
    pub noise_sigma: f64,
    pub ossart: OssartParams,
    pub augment: AugmentConfig,
}

impl PipelineConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let (geometry, ossart) = match profile {
            Profile::Clinical => (ConeBeamGeometry::clinical(), OssartParams::default()),
            Profile::Desk => (
                ConeBeamGeometry::desk(),
                OssartParams {
                    n_subsets: 10,
                    n_epochs: 10,
                    ..OssartParams::default()
                },
            ),
        };
        PipelineConfig {
            profile,
            output_dir: PathBuf::from("scbct-out"),
            seed: 0,
            presets: (1..=COMBO_PRESETS.len()).collect(),
            plahe: PlaheConfig {
                window: DEFAULT_WINDOW,
                mode: ModeChoice::Auto,
            },
            induction_lambda: 1.0,
            geometry: GeometryConfig::from_geometry(&geometry),
            projection_step_mm: None,
            noise_sigma: 0.5,
            ossart,
            augment: AugmentConfig {
                presets: (1..=N_PRESETS).collect(),
                sharpen_amount: DEFAULT_SHARPEN_AMOUNT,
                sigmoid_gain: DEFAULT_SIGMOID_GAIN,
                sigmoid_cutoff: DEFAULT_SIGMOID_CUTOFF,
            },
        }
    }

    /// Parses TOML. Keys present in the text override the profile named by
    /// its `profile` key, else `fallback`; unknown keys are errors.
    pub fn from_toml_str(text: &str, fallback: Profile) -> Result<Self> {
        let user: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let profile = match user.get("profile") {
            None => fallback,
            Some(toml::Value::String(s)) => s.parse()?,
            Some(other) => {
                return Err(Error::Config(format!("profile must be a string, got {other}")))
            }
        };
        let base = Self::for_profile(profile);
        let mut merged = toml::Table::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(toml::Value::Table(g)) = user.get("geometry") {
            // an explicit view list replaces the profile's view count
            if g.contains_key("angles") {
                if let Some(toml::Value::Table(mg)) = merged.get_mut("geometry") {
                    mg.remove("n_views");
                }
            }
        }
        merge(&mut merged, user);
        let cfg: PipelineConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, fallback: Profile) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, fallback)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn geometry(&self) -> Result<ConeBeamGeometry> {
        self.geometry.to_geometry()
    }

    /// Extraction parameters of PL-AHE preset `index`.
    pub fn plahe_params(&self, index: usize) -> Result<PlaheParams> {
        let (alpha, beta) = crate::plahe::preset_pair(index)?;
        let mode = match self.plahe.mode {
            ModeChoice::Auto => ExtractionMode::default_for(beta),
            ModeChoice::Direct => ExtractionMode::Direct,
            ModeChoice::Residual => ExtractionMode::Residual,
        };
        PlaheParams::new(alpha, beta, self.plahe.window, mode)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.presets.is_empty() {
            return cfg("at least one PL-AHE preset is required".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for &p in &self.presets {
            self.plahe_params(p)?;
            if !seen.insert(p) {
                return cfg(format!("preset {p} listed twice"));
            }
        }
        if !self.induction_lambda.is_finite() {
            return cfg("induction_lambda must be finite".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return cfg(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        if let Some(step) = self.projection_step_mm {
            if !(step > 0.0 && step.is_finite()) {
                return cfg(format!("projection_step_mm must be positive, got {step}"));
            }
        }
        let geometry = self.geometry()?;
        self.ossart.validate(geometry.n_views())?;
        let mut seen = std::collections::BTreeSet::new();
        for &p in &self.augment.presets {
            if !seen.insert(p) {
                return cfg(format!("augmentation preset {p} listed twice"));
            }
        }
        self.augment.specs()?;
        Ok(())
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses `1..7` style selections: a single index or `all`.
pub fn parse_preset_selection(text: &str, max: usize) -> Result<Vec<usize>> {
    if text == "all" {
        return Ok((1..=max).collect());
    }
    let mut out = Vec::new();
    for part in text.split(',') {
        let i: usize = part
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad preset {part:?}, expected 1..={max} or all")))?;
        if !(1..=max).contains(&i) {
            return Err(Error::Config(format!("preset {i} outside 1..={max}")));
        }
        out.push(i);
    }
    Ok(out)
}
