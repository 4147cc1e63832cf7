use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::stage::{Stage, StageError, Staged};
use crate::error::{Error, Result};
use crate::fsutil::{create_dir_all, sha256_file, write_atomic};
use crate::imqual::{compare, SimilarityReport};
use crate::ossart::{reconstruct, OssartParams};
use crate::plahe::{extract_artifact, ExtractionMode};
use crate::volgrid::{
    add_gaussian_noise, add_scaled, crop_overlap_fov, read_mask, read_volume,
    resample_mask_to_grid, rescale_unit, write_mask, write_volume, GridRegion, Mask3, Volume3,
};
use crate::xproject::{default_step, forward_project};

/// File locations of one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseInputs {
    pub case_id: String,
    pub pct_path: PathBuf,
    pub cbct_path: PathBuf,
    /// Contours by structure name.
    pub mask_paths: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub dose_path: Option<PathBuf>,
}

/// Loaded inputs with masks on the reference grid.
#[derive(Debug, Clone)]
pub struct LoadedCase {
    pub pct: Volume3,
    pub cbct: Volume3,
    pub masks: BTreeMap<String, Mask3>,
}

impl CaseInputs {
    /// Reads a TOML case description; relative paths are taken relative to
    /// the file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut case: CaseInputs =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut case.pct_path);
        fix(&mut case.cbct_path);
        case.mask_paths.values_mut().for_each(fix);
        if let Some(d) = case.dose_path.as_mut() {
            fix(d);
        }
        Ok(case)
    }

    pub fn load(&self) -> Result<LoadedCase> {
        let pct = read_volume(&self.pct_path)?;
        let cbct = read_volume(&self.cbct_path)?;
        let mut masks = BTreeMap::new();
        for (name, path) in &self.mask_paths {
            let m = read_mask(path)?;
            let m = if m.grid().matches(pct.grid()) {
                m.with_grid(*pct.grid())?
            } else {
                resample_mask_to_grid(&m, pct.grid())?
            };
            masks.insert(name.clone(), m);
        }
        Ok(LoadedCase { pct, cbct, masks })
    }
}

/// A written file with its digest; `path` is relative to the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFile {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PresetStatus {
    Ok,
    Failed,
}

/// Effective parameters and results for one synthesized volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetRecord {
    pub preset: usize,
    pub alpha: f64,
    pub beta: f64,
    pub window: [usize; 3],
    pub mode: ExtractionMode,
    pub induction_lambda: f64,
    /// Multiplier that maps the unit-range artifact field to reference
    /// intensities (the reference's dynamic range).
    pub artifact_scale: f64,
    pub projection_step_mm: f64,
    pub noise_sigma: f64,
    pub noise_seed: u64,
    pub ossart: OssartParams,
    pub status: PresetStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<StageError>,
    pub outputs: Vec<OutputFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity: Option<SimilarityReport>,
}

impl PresetRecord {
    pub fn output(&self, role: &str) -> Option<&OutputFile> {
        self.outputs.iter().find(|o| o.role == role)
    }
}

/// Shared outputs written once per case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseManifest {
    pub format_version: u32,
    pub case_id: String,
    /// Effective configuration; `output_dir` is recorded as `.` because
    /// every path in the manifest is relative to the manifest's directory.
    pub config: PipelineConfig,
    pub inputs: Vec<InputDigest>,
    /// Voxel bounds of the overlapping field of view in the reference grid.
    pub crop_region: GridRegion,
    pub references: Vec<OutputFile>,
    pub records: Vec<PresetRecord>,
    /// Similarity tables, written before this manifest.
    pub reports: Vec<OutputFile>,
}

pub const CASE_MANIFEST_FILE: &str = "case_manifest.json";
pub const SIMILARITY_CSV_FILE: &str = "similarity.csv";
pub const SIMILARITY_JSON_FILE: &str = "similarity.json";
pub const SCBCT_FILE: &str = "scbct.mha";

impl CaseManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
    }

    pub fn failed(&self) -> impl Iterator<Item = &PresetRecord> {
        self.records.iter().filter(|r| r.status == PresetStatus::Failed)
    }
}

fn mask_file(name: &str) -> String {
    format!("mask_{name}.mha")
}

fn record_file(dir: &Path, rel: &str, role: &str) -> Result<OutputFile> {
    Ok(OutputFile {
        role: role.to_string(),
        path: rel.to_string(),
        sha256: sha256_file(&dir.join(rel))?,
    })
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Serde(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Shared, preset-independent state.
struct Prepared {
    pct_crop: Volume3,
    cbct_unit: Volume3,
    masks: BTreeMap<String, Mask3>,
    region: GridRegion,
    pct_range: f64,
}

fn prepare(case: &LoadedCase) -> std::result::Result<Prepared, StageError> {
    let (pct_crop, cbct_crop, region) = crop_overlap_fov(&case.pct, &case.cbct).stage(Stage::Crop)?;
    let cbct_unit = rescale_unit(&cbct_crop).stage(Stage::Normalize)?;
    let (lo, hi) = pct_crop.min_max();
    if lo >= hi {
        return Err(StageError::new(
            Stage::Normalize,
            &Error::ZeroDynamicRange(lo as f64),
        ));
    }
    let masks = case
        .masks
        .iter()
        .map(|(n, m)| Ok((n.clone(), m.crop(&region)?)))
        .collect::<Result<BTreeMap<_, _>>>()
        .stage(Stage::Crop)?;
    Ok(Prepared {
        pct_crop,
        cbct_unit,
        masks,
        region,
        pct_range: hi as f64 - lo as f64,
    })
}

/// Artifact-induced, unit-range reference volume for one preset.
fn induce(prep: &Prepared, config: &PipelineConfig, preset: usize) -> std::result::Result<Volume3, StageError> {
    let params = config.plahe_params(preset).stage(Stage::Extract)?;
    let artifact = extract_artifact(&prep.cbct_unit, &params).stage(Stage::Extract)?;
    let scale = prep.pct_range;
    let artifact = artifact
        .map(|v| (v as f64 * scale) as f32)
        .stage(Stage::Denormalize)?;
    let induced =
        add_scaled(&prep.pct_crop, &artifact, config.induction_lambda).stage(Stage::Induce)?;
    rescale_unit(&induced).stage(Stage::Rescale)
}

fn run_preset(
    prep: &Prepared,
    config: &PipelineConfig,
    preset: usize,
    out_dir: &Path,
    written: &mut Vec<PathBuf>,
) -> std::result::Result<(Vec<OutputFile>, SimilarityReport), StageError> {
    let geometry = config.geometry().stage(Stage::Project)?;
    let grid = *prep.pct_crop.grid();
    let step = config.projection_step_mm.unwrap_or_else(|| default_step(&grid));
    let induced = induce(prep, config, preset)?;
    let proj = forward_project(&induced, &geometry, step).stage(Stage::Project)?;
    let noisy = add_gaussian_noise(&proj, config.noise_sigma, noise_seed(config.seed, preset))
        .stage(Stage::Noise)?;
    let ossart = effective_ossart(config, step);
    let recon = reconstruct(&noisy, &grid, &ossart).stage(Stage::Reconstruct)?;
    let scbct = recon.map(|v| v.clamp(0.0, 1.0)).stage(Stage::Reconstruct)?;

    let rel_dir = preset_dir(preset);
    let dir = out_dir.join(&rel_dir);
    create_dir_all(&dir).stage(Stage::Write)?;
    let mut outputs = Vec::new();
    let rel = format!("{rel_dir}/{SCBCT_FILE}");
    written.push(out_dir.join(&rel));
    write_volume(&scbct, &out_dir.join(&rel)).stage(Stage::Write)?;
    outputs.push(record_file(out_dir, &rel, "scbct").stage(Stage::Write)?);
    for (name, mask) in &prep.masks {
        let rel = format!("{rel_dir}/{}", mask_file(name));
        written.push(out_dir.join(&rel));
        write_mask(mask, &out_dir.join(&rel)).stage(Stage::Write)?;
        outputs.push(record_file(out_dir, &rel, &format!("mask:{name}")).stage(Stage::Write)?);
    }
    let similarity = compare(&scbct, &prep.cbct_unit).stage(Stage::Compare)?;
    Ok((outputs, similarity))
}

pub fn preset_dir(preset: usize) -> String {
    format!("preset{preset}")
}

/// Seed of the projection noise for `preset`.
pub fn noise_seed(seed: u64, preset: usize) -> u64 {
    seed.wrapping_add(preset as u64)
}

/// OS-SART parameters with the step resolved to the projection step.
pub fn effective_ossart(config: &PipelineConfig, projection_step: f64) -> OssartParams {
    OssartParams {
        step_mm: Some(config.ossart.step_mm.unwrap_or(projection_step)),
        ..config.ossart
    }
}

/// Runs every configured preset on one case and writes the sCBCTs, their
/// masks, the reference crops, similarity reports and the case manifest
/// into `config.output_dir`.
///
/// Presets run concurrently. A failing preset is recorded with its stage
/// and its partial files are removed; other presets are unaffected.
pub fn synthesize_case(inputs: &CaseInputs, config: &PipelineConfig) -> std::result::Result<CaseManifest, StageError> {
    config.validate().stage(Stage::Config)?;
    let out_dir = config.output_dir.clone();
    let case = inputs.load().stage(Stage::Load)?;
    let prep = prepare(&case)?;
    let step = config
        .projection_step_mm
        .unwrap_or_else(|| default_step(prep.pct_crop.grid()));
    create_dir_all(&out_dir).stage(Stage::Write)?;

    let mut input_digests = vec![
        digest("pct", &inputs.pct_path)?,
        digest("cbct", &inputs.cbct_path)?,
    ];
    for (name, path) in &inputs.mask_paths {
        input_digests.push(digest(&format!("mask:{name}"), path)?);
    }
    if let Some(d) = &inputs.dose_path {
        input_digests.push(digest("dose", d)?);
    }

    let ref_dir = out_dir.join("reference");
    create_dir_all(&ref_dir).stage(Stage::Write)?;
    let mut references = Vec::new();
    let write_ref = |rel: &str, role: &str, vol: Option<&Volume3>, mask: Option<&Mask3>| {
        let path = out_dir.join(rel);
        match (vol, mask) {
            (Some(v), _) => write_volume(v, &path),
            (_, Some(m)) => write_mask(m, &path),
            _ => unreachable!(),
        }
        .and_then(|_| record_file(&out_dir, rel, role))
        .stage(Stage::Write)
    };
    references.push(write_ref("reference/pct_cropped.mha", "pct_cropped", Some(&prep.pct_crop), None)?);
    references.push(write_ref("reference/cbct_unit.mha", "cbct_unit", Some(&prep.cbct_unit), None)?);
    for (name, mask) in &prep.masks {
        references.push(write_ref(
            &format!("reference/{}", mask_file(name)),
            &format!("mask:{name}"),
            None,
            Some(mask),
        )?);
    }

    let records: Vec<PresetRecord> = config
        .presets
        .par_iter()
        .map(|&preset| {
            let params = config.plahe_params(preset).expect("validated");
            let mut written = Vec::new();
            let result = run_preset(&prep, config, preset, &out_dir, &mut written);
            let (status, error, outputs, similarity) = match result {
                Ok((outputs, sim)) => (PresetStatus::Ok, None, outputs, Some(sim)),
                Err(e) => {
                    for p in &written {
                        let _ = std::fs::remove_file(p);
                    }
                    let _ = std::fs::remove_dir(out_dir.join(preset_dir(preset)));
                    (PresetStatus::Failed, Some(e.with_preset(preset)), Vec::new(), None)
                }
            };
            PresetRecord {
                preset,
                alpha: params.alpha,
                beta: params.beta,
                window: params.window,
                mode: params.mode,
                induction_lambda: config.induction_lambda,
                artifact_scale: prep.pct_range,
                projection_step_mm: step,
                noise_sigma: config.noise_sigma,
                noise_seed: noise_seed(config.seed, preset),
                ossart: effective_ossart(config, step),
                status,
                error,
                outputs,
                similarity,
            }
        })
        .collect();

    let mut recorded = config.clone();
    recorded.output_dir = PathBuf::from(".");
    let mut manifest = CaseManifest {
        format_version: 1,
        case_id: inputs.case_id.clone(),
        config: recorded,
        inputs: input_digests,
        crop_region: prep.region,
        references,
        records,
        reports: Vec::new(),
    };
    manifest.reports = write_similarity_reports(&manifest, &out_dir).stage(Stage::Report)?;
    write_atomic(
        &out_dir.join(CASE_MANIFEST_FILE),
        &to_json(&manifest).stage(Stage::Report)?,
    )
    .stage(Stage::Report)?;
    Ok(manifest)
}

fn digest(role: &str, path: &Path) -> std::result::Result<InputDigest, StageError> {
    Ok(InputDigest {
        role: role.to_string(),
        path: path.display().to_string(),
        sha256: sha256_file(path).stage(Stage::Load)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRow {
    pub case_id: String,
    pub preset: usize,
    pub alpha: f64,
    pub beta: f64,
    pub ssim: f64,
    pub rmse: f64,
    pub cc: f64,
    pub uqi: f64,
}

pub fn similarity_rows(manifest: &CaseManifest) -> Vec<SimilarityRow> {
    manifest
        .records
        .iter()
        .filter_map(|r| {
            r.similarity.map(|s| SimilarityRow {
                case_id: manifest.case_id.clone(),
                preset: r.preset,
                alpha: r.alpha,
                beta: r.beta,
                ssim: s.ssim,
                rmse: s.rmse,
                cc: s.cc,
                uqi: s.uqi,
            })
        })
        .collect()
}

pub(crate) fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Serde(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Serde(e.to_string()))
}

fn write_similarity_reports(manifest: &CaseManifest, dir: &Path) -> Result<Vec<OutputFile>> {
    let rows = similarity_rows(manifest);
    write_atomic(&dir.join(SIMILARITY_CSV_FILE), &csv_bytes(&rows)?)?;
    write_atomic(&dir.join(SIMILARITY_JSON_FILE), &to_json(&rows)?)?;
    Ok(vec![
        record_file(dir, SIMILARITY_CSV_FILE, "similarity_csv")?,
        record_file(dir, SIMILARITY_JSON_FILE, "similarity_json")?,
    ])
}

pub(crate) fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    write_atomic(path, &to_json(value)?)
}
