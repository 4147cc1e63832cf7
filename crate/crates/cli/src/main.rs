use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use scbct::augment::{apply, N_PRESETS as N_AUGMENTS};
use scbct::fsutil::{create_dir_all, write_atomic};
use scbct::imqual::compare;
use scbct::ossart::reconstruct;
use scbct::phantom::{generate, write_case, PhantomSpec, CASE_FILE};
use scbct::pipeline::{
    aggregate, build_training_manifest, effective_ossart, evaluate_segmentation,
    parse_preset_selection, segmentation_csv, synthesize_case, CaseInputs, PipelineConfig,
    Profile, Stage, StageError, Staged, CASE_MANIFEST_FILE, DOSE_HOT_VOLUME_CC,
};
use scbct::plahe::{extract_artifact, COMBO_PRESETS};
use scbct::segdose::{d_cc, dvh, mean_dose, write_dvh_csv, DoseGrid};
use scbct::volgrid::{
    add_gaussian_noise, add_scaled, crop_overlap_fov, read_mask, read_volume, rescale_unit,
    write_mask, write_volume,
};
use scbct::xproject::{default_step, forward_project, read_projections, write_projections};

#[derive(Parser)]
#[command(name = "scbct", version, about = "Synthetic cone-beam CT generation and evaluation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration; keys override the selected profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the configuration).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Seed for projection noise and phantom generation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// PL-AHE preset: 1..7, a comma list, or "all".
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Base parameter set: clinical or desk.
    #[arg(long, global = true)]
    profile: Option<Profile>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic desk phantom case (reference, degraded volume,
    /// contour, dose, case.toml).
    Phantom,
    /// Extract PL-AHE artifact fields from a degraded volume.
    Extract {
        #[arg(long)]
        cbct: PathBuf,
    },
    /// Add an artifact field to a reference volume and rescale to [0, 1].
    Induce {
        #[arg(long)]
        pct: PathBuf,
        #[arg(long)]
        artifact: PathBuf,
    },
    /// Forward project a volume, adding the configured projection noise.
    Project {
        #[arg(long)]
        input: PathBuf,
    },
    /// OS-SART reconstruction onto the grid of a reference volume.
    Reconstruct {
        #[arg(long)]
        projections: PathBuf,
        #[arg(long)]
        geometry: PathBuf,
        /// Volume whose grid the reconstruction uses.
        #[arg(long)]
        grid_from: PathBuf,
    },
    /// End-to-end sCBCT synthesis for one case.
    Synthesize {
        /// TOML case description.
        #[arg(long, conflicts_with_all = ["pct", "cbct"])]
        case: Option<PathBuf>,
        #[arg(long, requires = "cbct")]
        pct: Option<PathBuf>,
        #[arg(long, requires = "pct")]
        cbct: Option<PathBuf>,
        /// Contour as NAME=PATH; repeatable.
        #[arg(long = "mask")]
        masks: Vec<String>,
        #[arg(long)]
        dose: Option<PathBuf>,
        #[arg(long, default_value = "case")]
        case_id: String,
    },
    /// SSIM, RMSE, CC and UQI between two volumes.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Dice, HD95 and dose agreement of predicted vs true contours.
    /// Repeat --pred/--truth for a batch with Bland-Altman statistics.
    SegEval {
        #[arg(long, required = true)]
        pred: Vec<PathBuf>,
        #[arg(long, required = true)]
        truth: Vec<PathBuf>,
        #[arg(long)]
        dose: Option<PathBuf>,
        /// Map predictions on other grids onto the truth grid.
        #[arg(long)]
        resample: bool,
    },
    /// Mean dose, D_cc and the cumulative DVH of one structure.
    DoseEval {
        #[arg(long)]
        dose: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long, default_value_t = DOSE_HOT_VOLUME_CC)]
        volume_cc: f64,
        #[arg(long, default_value_t = 100)]
        bins: usize,
    },
    /// Apply augmentation presets to an image and optional mask.
    Augment {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Augmentation presets: 1..8, a comma list, or "all"; defaults to
        /// the configuration.
        #[arg(long)]
        augment: Option<String>,
    },
    /// Build the training-pair manifest from case manifests.
    Manifest {
        #[arg(long = "case-manifest", required = true)]
        case_manifests: Vec<PathBuf>,
        #[arg(long)]
        augment: Option<String>,
    },
}

type CliResult<T> = std::result::Result<T, StageError>;

fn config(common: &Common) -> CliResult<PipelineConfig> {
    let fallback = common.profile.unwrap_or(Profile::Desk);
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::load(path, fallback).stage(Stage::Config)?,
        None => PipelineConfig::for_profile(fallback),
    };
    if let Some(p) = common.profile {
        if common.config.is_some() && cfg.profile != p {
            return Err(StageError::new(
                Stage::Config,
                &scbct::Error::Config(format!(
                    "--profile {p:?} disagrees with the configuration's profile {:?}",
                    cfg.profile
                )),
            ));
        }
    }
    if let Some(out) = &common.output {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(sel) = &common.preset {
        cfg.presets = parse_preset_selection(sel, COMBO_PRESETS.len()).stage(Stage::Config)?;
    }
    cfg.validate().stage(Stage::Config)?;
    Ok(cfg)
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    write_atomic(path, &bytes).stage(Stage::Write)
}

fn parse_mask_arg(arg: &str) -> CliResult<(String, PathBuf)> {
    match arg.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => {
            Ok((name.to_string(), PathBuf::from(path)))
        }
        _ => Err(StageError::new(
            Stage::Config,
            &scbct::Error::Config(format!("--mask expects NAME=PATH, got {arg:?}")),
        )),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = config(&cli.common)?;
    let out = cfg.output_dir.clone();
    match cli.command {
        Command::Phantom => {
            let case = generate(&PhantomSpec::desk(), cfg.seed).stage(Stage::Write)?;
            write_case(&case, &out).stage(Stage::Write)?;
            println!("{}", out.join(CASE_FILE).display());
        }
        Command::Extract { cbct } => {
            let vol = read_volume(&cbct).stage(Stage::Load)?;
            let unit = rescale_unit(&vol).stage(Stage::Normalize)?;
            create_dir_all(&out).stage(Stage::Write)?;
            for &p in &cfg.presets {
                let params = cfg.plahe_params(p).stage(Stage::Config)?;
                let artifact = extract_artifact(&unit, &params)
                    .stage(Stage::Extract)
                    .map_err(|e| e.with_preset(p))?;
                let path = out.join(format!("artifact_preset{p}.mha"));
                write_volume(&artifact, &path).stage(Stage::Write)?;
                println!("{}", path.display());
            }
        }
        Command::Induce { pct, artifact } => {
            let pct = read_volume(&pct).stage(Stage::Load)?;
            let artifact = read_volume(&artifact).stage(Stage::Load)?;
            let (pct_crop, artifact, _) = crop_overlap_fov(&pct, &artifact).stage(Stage::Crop)?;
            let (lo, hi) = pct_crop.min_max();
            let scale = hi as f64 - lo as f64;
            let artifact = artifact
                .map(|v| (v as f64 * scale) as f32)
                .stage(Stage::Denormalize)?;
            let induced =
                add_scaled(&pct_crop, &artifact, cfg.induction_lambda).stage(Stage::Induce)?;
            let induced = rescale_unit(&induced).stage(Stage::Rescale)?;
            create_dir_all(&out).stage(Stage::Write)?;
            let path = out.join("induced.mha");
            write_volume(&induced, &path).stage(Stage::Write)?;
            println!("{}", path.display());
        }
        Command::Project { input } => {
            let vol = read_volume(&input).stage(Stage::Load)?;
            let geometry = cfg.geometry().stage(Stage::Config)?;
            let step = cfg
                .projection_step_mm
                .unwrap_or_else(|| default_step(vol.grid()));
            let proj = forward_project(&vol, &geometry, step).stage(Stage::Project)?;
            let proj = add_gaussian_noise(&proj, cfg.noise_sigma, cfg.seed).stage(Stage::Noise)?;
            create_dir_all(&out).stage(Stage::Write)?;
            let (mha, json) = (out.join("projections.mha"), out.join("geometry.json"));
            write_projections(&proj, &mha, &json).stage(Stage::Write)?;
            println!("{}\n{}", mha.display(), json.display());
        }
        Command::Reconstruct {
            projections,
            geometry,
            grid_from,
        } => {
            let proj = read_projections(&projections, &geometry).stage(Stage::Load)?;
            let grid = *read_volume(&grid_from).stage(Stage::Load)?.grid();
            let step = cfg.projection_step_mm.unwrap_or_else(|| default_step(&grid));
            let params = effective_ossart(&cfg, step);
            let vol = reconstruct(&proj, &grid, &params).stage(Stage::Reconstruct)?;
            create_dir_all(&out).stage(Stage::Write)?;
            let path = out.join("reconstruction.mha");
            write_volume(&vol, &path).stage(Stage::Write)?;
            println!("{}", path.display());
        }
        Command::Synthesize {
            case,
            pct,
            cbct,
            masks,
            dose,
            case_id,
        } => {
            let inputs = match (case, pct, cbct) {
                (Some(path), _, _) => CaseInputs::from_file(&path).stage(Stage::Load)?,
                (None, Some(pct), Some(cbct)) => CaseInputs {
                    case_id,
                    pct_path: pct,
                    cbct_path: cbct,
                    mask_paths: masks
                        .iter()
                        .map(|m| parse_mask_arg(m))
                        .collect::<CliResult<_>>()?,
                    dose_path: dose,
                },
                _ => {
                    return Err(StageError::new(
                        Stage::Config,
                        &scbct::Error::Config("synthesize needs --case or --pct and --cbct".into()),
                    ))
                }
            };
            let manifest = synthesize_case(&inputs, &cfg)?;
            for r in &manifest.records {
                match (&r.similarity, &r.error) {
                    (Some(s), _) => eprintln!(
                        "preset {} (alpha={}, beta={}): ssim {:.4} rmse {:.4} cc {:.4} uqi {:.4}",
                        r.preset, r.alpha, r.beta, s.ssim, s.rmse, s.cc, s.uqi
                    ),
                    (None, Some(e)) => eprintln!("error: {e}"),
                    (None, None) => {}
                }
            }
            println!("{}", out.join(CASE_MANIFEST_FILE).display());
            let failure = manifest.failed().next().and_then(|r| r.error.clone());
            if let Some(e) = failure {
                return Err(e);
            }
        }
        Command::Compare { a, b } => {
            let a = read_volume(&a).stage(Stage::Load)?;
            let b = read_volume(&b).stage(Stage::Load)?;
            let report = compare(&a, &b).stage(Stage::Compare)?;
            print_json(&report);
            if cli.common.output.is_some() {
                create_dir_all(&out).stage(Stage::Write)?;
                write_json(&report, &out.join("similarity.json"))?;
            }
        }
        Command::SegEval {
            pred,
            truth,
            dose,
            resample,
        } => {
            if pred.len() != truth.len() {
                return Err(StageError::new(
                    Stage::Evaluate,
                    &scbct::Error::InvalidParameter(format!(
                        "{} predictions but {} truths",
                        pred.len(),
                        truth.len()
                    )),
                ));
            }
            let dose = match dose {
                Some(p) => Some(
                    DoseGrid::new(read_volume(&p).stage(Stage::Load)?).stage(Stage::Load)?,
                ),
                None => None,
            };
            let mut reports = Vec::new();
            for (i, (p, t)) in pred.iter().zip(&truth).enumerate() {
                let pm = read_mask(p).stage(Stage::Load)?;
                let tm = read_mask(t).stage(Stage::Load)?;
                let mut r = evaluate_segmentation(&pm, &tm, dose.as_ref(), resample)
                    .stage(Stage::Evaluate)?;
                r.case_id = format!("case{}", i + 1);
                reports.push(r);
            }
            create_dir_all(&out).stage(Stage::Write)?;
            write_atomic(
                &out.join("segmentation.csv"),
                &segmentation_csv(&reports).stage(Stage::Report)?,
            )
            .stage(Stage::Write)?;
            let batch = aggregate(reports).stage(Stage::Evaluate)?;
            write_json(&batch, &out.join("segmentation.json"))?;
            print_json(&batch);
        }
        Command::DoseEval {
            dose,
            mask,
            volume_cc,
            bins,
        } => {
            let dose = DoseGrid::new(read_volume(&dose).stage(Stage::Load)?).stage(Stage::Load)?;
            let mask = read_mask(&mask).stage(Stage::Load)?;
            #[derive(Serialize)]
            struct DoseReport {
                mean_dose_gy: f64,
                volume_cc: f64,
                d_cc_gy: f64,
                structure_cc: f64,
            }
            let report = DoseReport {
                mean_dose_gy: mean_dose(&dose, &mask).stage(Stage::Evaluate)?,
                volume_cc,
                d_cc_gy: d_cc(&dose, &mask, volume_cc).stage(Stage::Evaluate)?,
                structure_cc: mask.volume_cc(),
            };
            let curve = dvh(&dose, &mask, bins).stage(Stage::Evaluate)?;
            create_dir_all(&out).stage(Stage::Write)?;
            write_dvh_csv(&curve, &out.join("dvh.csv")).stage(Stage::Write)?;
            write_json(&report, &out.join("dose.json"))?;
            print_json(&report);
        }
        Command::Augment {
            image,
            mask,
            augment,
        } => {
            let mut aug_cfg = cfg.augment.clone();
            if let Some(sel) = augment {
                aug_cfg.presets = parse_preset_selection(&sel, N_AUGMENTS).stage(Stage::Config)?;
            }
            let specs = aug_cfg.specs().stage(Stage::Config)?;
            let vol = read_volume(&image).stage(Stage::Load)?;
            let mask = match mask {
                Some(p) => Some(read_mask(&p).stage(Stage::Load)?),
                None => None,
            };
            for (index, spec) in specs {
                let (v, m) = apply(&vol, mask.as_ref(), &spec).stage(Stage::Augment)?;
                let dir = out.join(format!("aug{index}_{}", spec.label()));
                create_dir_all(&dir).stage(Stage::Write)?;
                write_volume(&v, &dir.join("image.mha")).stage(Stage::Write)?;
                if let Some(m) = m {
                    write_mask(&m, &dir.join("mask.mha")).stage(Stage::Write)?;
                }
                println!("{}", dir.display());
            }
        }
        Command::Manifest {
            case_manifests,
            augment,
        } => {
            let mut aug_cfg = cfg.augment.clone();
            if let Some(sel) = augment {
                aug_cfg.presets = if sel == "none" {
                    Vec::new()
                } else {
                    parse_preset_selection(&sel, N_AUGMENTS).stage(Stage::Config)?
                };
            }
            let specs = aug_cfg.specs().stage(Stage::Config)?;
            let manifest =
                build_training_manifest(&case_manifests, &specs, &out).stage(Stage::Manifest)?;
            eprintln!("{} training pairs", manifest.pairs.len());
            println!(
                "{}",
                out.join(scbct::pipeline::TRAINING_MANIFEST_FILE).display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
