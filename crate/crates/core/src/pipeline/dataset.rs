use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::synth::{write_json, CaseManifest, PresetStatus};
use crate::augment::{apply, AugmentSpec};
use crate::error::{Error, Result};
use crate::fsutil::{create_dir_all, sha256_file};
use crate::volgrid::{read_mask, read_volume, write_mask, write_volume};

pub const TRAINING_MANIFEST_FILE: &str = "training_manifest.json";

/// One image/mask pair for an external trainer. Paths are relative to the
/// training manifest's directory when possible, absolute otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub image: String,
    pub mask: String,
    pub structure: String,
    pub case_id: String,
    pub plahe_preset: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augment_preset: Option<usize>,
    /// Steps from the source case to this image, outermost last.
    pub provenance: Vec<String>,
    pub image_sha256: String,
    pub mask_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingManifest {
    pub format_version: u32,
    pub augmentations: Vec<(usize, AugmentSpec)>,
    pub case_manifests: Vec<String>,
    pub pairs: Vec<TrainingPair>,
}

impl TrainingManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::fs::canonicalize(p).map_err(|e| Error::io(p, e))
}

fn display_path(file: &Path, base: &Path) -> String {
    match file.strip_prefix(base) {
        Ok(rel) => rel.display().to_string(),
        Err(_) => file.display().to_string(),
    }
}

struct Base {
    case_id: String,
    preset: usize,
    alpha: f64,
    beta: f64,
    image: PathBuf,
    masks: Vec<(String, PathBuf)>,
}

/// Lists every successfully synthesized image with its masks, and writes
/// and lists one augmented copy per selected augmentation under
/// `out_dir/augmented`. The manifest goes to `out_dir`.
pub fn build_training_manifest(
    case_manifests: &[PathBuf],
    augmentations: &[(usize, AugmentSpec)],
    out_dir: &Path,
) -> Result<TrainingManifest> {
    create_dir_all(out_dir)?;
    let out_abs = absolute(out_dir)?;
    let mut bases = Vec::new();
    let mut manifest_paths = Vec::new();
    for path in case_manifests {
        let m = CaseManifest::read(path)?;
        let abs = absolute(path)?;
        let dir = abs.parent().map(Path::to_path_buf).unwrap_or_default();
        manifest_paths.push(display_path(&abs, &out_abs));
        for r in m.records.iter().filter(|r| r.status == PresetStatus::Ok) {
            let image = r
                .output("scbct")
                .ok_or_else(|| Error::Serde(format!("preset {} has no scbct output", r.preset)))?;
            let masks = r
                .outputs
                .iter()
                .filter_map(|o| o.role.strip_prefix("mask:").map(|n| (n.to_string(), dir.join(&o.path))))
                .collect();
            bases.push(Base {
                case_id: m.case_id.clone(),
                preset: r.preset,
                alpha: r.alpha,
                beta: r.beta,
                image: dir.join(&image.path),
                masks,
            });
        }
    }

    let jobs: Vec<(usize, Option<usize>)> = (0..bases.len())
        .flat_map(|b| std::iter::once((b, None)).chain((0..augmentations.len()).map(move |a| (b, Some(a)))))
        .collect();
    let results: Vec<Result<Vec<TrainingPair>>> = jobs
        .par_iter()
        .map(|&(b, aug)| {
            let base = &bases[b];
            let origin = vec![
                format!("case:{}", base.case_id),
                format!("plahe:{}(alpha={},beta={})", base.preset, base.alpha, base.beta),
            ];
            let (image, masks, provenance, augment_preset) = match aug {
                None => (base.image.clone(), base.masks.clone(), origin, None),
                Some(a) => {
                    let (index, spec) = &augmentations[a];
                    let dir = out_abs
                        .join("augmented")
                        .join(&base.case_id)
                        .join(format!("preset{}", base.preset))
                        .join(format!("aug{index}_{}", spec.label()));
                    create_dir_all(&dir)?;
                    let vol = read_volume(&base.image)?;
                    let (out, _) = apply(&vol, None, spec)?;
                    let image = dir.join("image.mha");
                    write_volume(&out, &image)?;
                    let mut masks = Vec::new();
                    for (name, path) in &base.masks {
                        let m = read_mask(path)?;
                        let (_, om) = apply(&vol, Some(&m), spec)?;
                        let p = dir.join(format!("mask_{name}.mha"));
                        write_mask(&om.expect("mask requested"), &p)?;
                        masks.push((name.clone(), p));
                    }
                    let mut provenance = origin;
                    provenance.push(format!("augment:{index}({})", spec.label()));
                    (image, masks, provenance, Some(*index))
                }
            };
            let image_sha256 = sha256_file(&image)?;
            masks
                .iter()
                .map(|(name, mask)| {
                    Ok(TrainingPair {
                        image: display_path(&image, &out_abs),
                        mask: display_path(mask, &out_abs),
                        structure: name.clone(),
                        case_id: base.case_id.clone(),
                        plahe_preset: base.preset,
                        augment_preset,
                        provenance: provenance.clone(),
                        image_sha256: image_sha256.clone(),
                        mask_sha256: sha256_file(mask)?,
                    })
                })
                .collect()
        })
        .collect();
    let mut pairs = Vec::new();
    for r in results {
        pairs.extend(r?);
    }
    let manifest = TrainingManifest {
        format_version: 1,
        augmentations: augmentations.to_vec(),
        case_manifests: manifest_paths,
        pairs,
    };
    write_json(&manifest, &out_dir.join(TRAINING_MANIFEST_FILE))?;
    Ok(manifest)
}

/// Resolves a pair path written by [`build_training_manifest`].
pub fn resolve(manifest_dir: &Path, path: &str) -> PathBuf {
    let p = Path::new(path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest_dir.join(p)
    }
}
