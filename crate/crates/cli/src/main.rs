//! `ordet` — train, distill, evaluate, and tile rotated-object
//! detection experiments from JSON configs.

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

use ordet_core::data::{
    crop_scene, generate_scene, merge_detections, plan_tiles, DatasetManifest, Annotation,
};
use ordet_core::eval::{evaluate, pr_report, Detection, GroundTruth};
use ordet_core::orchestrate::{
    distill_student, format_ablation_table, format_run_summary, run_ablation, train_baseline,
    train_teacher, write_dataset, write_json, ExperimentConfig, RunRecord,
};

#[derive(Parser)]
#[command(name = "ordet", version, about = "Rotated-object detection distillation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset: manifests plus optional PGM previews.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write one PGM image per scene.
        #[arg(long)]
        images: bool,
    },
    /// Train the wide teacher with hard losses only.
    TrainTeacher {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the student-width model with hard losses only.
    TrainBaseline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Distill a student from a trained teacher checkpoint.
    Distill {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the distillation-strategy ablation grid.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a detections file against a dataset manifest.
    Evaluate {
        /// JSON list of detections.
        #[arg(long)]
        detections: PathBuf,
        /// Dataset manifest with ground-truth annotations.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the IoU-0.5 precision/recall points per class.
        #[arg(long)]
        pr_csv: bool,
    },
    /// Plan a tile layout, optionally cropping a dataset manifest.
    Tile {
        #[arg(long)]
        width: usize,
        #[arg(long)]
        height: usize,
        #[arg(long, default_value_t = 600)]
        tile: usize,
        #[arg(long, default_value_t = 150)]
        overlap: usize,
        /// Manifest whose scenes should be cropped into tiles.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Output file (tile plan, or tiled manifest when --manifest is set).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge per-tile detections back into the image frame.
    Merge {
        /// JSON list of `{origin: [x, y], detections: [...]}` entries.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0.3)]
        nms_iou: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Serialize, Deserialize)]
struct TileDetections {
    origin: [usize; 2],
    detections: Vec<Detection>,
}

#[derive(Serialize)]
struct TiledSceneRecord {
    image_id: u64,
    tile_index: usize,
    origin: [usize; 2],
    annotations: Vec<Annotation>,
}

fn load_config(path: &PathBuf) -> anyhow::Result<ExperimentConfig> {
    ExperimentConfig::from_json_file(path)
        .with_context(|| format!("loading experiment config {}", path.display()))
}

fn report_run(record: &RunRecord) {
    print!("{}", format_run_summary(record));
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenData { config, out, images } => {
            let cfg = load_config(&config)?;
            write_dataset(&cfg.dataset, &out, images)?;
            println!(
                "wrote {} train / {} test scene records to {}",
                cfg.dataset.num_train,
                cfg.dataset.num_test,
                out.display()
            );
        }
        Command::TrainTeacher { config, out } => {
            let cfg = load_config(&config)?;
            let (record, _) = train_teacher(&cfg, Some(&out))?;
            report_run(&record);
        }
        Command::TrainBaseline { config, out } => {
            let cfg = load_config(&config)?;
            let (record, _) = train_baseline(&cfg, Some(&out))?;
            report_run(&record);
        }
        Command::Distill { config, teacher, out } => {
            let cfg = load_config(&config)?;
            let (record, _) = distill_student(&cfg, &teacher, Some(&out))?;
            report_run(&record);
        }
        Command::Ablate { config, out } => {
            let cfg = load_config(&config)?;
            let table = run_ablation(&cfg, Some(&out))?;
            print!("{}", format_ablation_table(&table));
            if table.rows.iter().any(|r| r.status != "ok") {
                bail!("one or more ablation rows failed");
            }
        }
        Command::Evaluate { detections, manifest, out, pr_csv } => {
            let dets: Vec<Detection> =
                serde_json::from_str(&std::fs::read_to_string(&detections)?)
                    .context("parsing detections JSON")?;
            let manifest: DatasetManifest =
                serde_json::from_str(&std::fs::read_to_string(&manifest)?)
                    .context("parsing dataset manifest")?;
            let mut gts: Vec<GroundTruth> = Vec::new();
            for record in &manifest.scenes {
                for ann in &record.annotations {
                    gts.push(GroundTruth {
                        rect: ann.rect,
                        class: ann.class,
                        difficult: ann.difficult,
                        image_id: record.image_id,
                    });
                }
            }
            let num_classes = manifest.config.num_classes;
            let result = evaluate(&dets, &gts, num_classes);
            std::fs::create_dir_all(&out)?;
            write_json(&out.join("eval_report.json"), &result)?;
            println!(
                "mAP(DOTA) {:.4}  AP75 {:.4}  mAP(COCO) {:.4}",
                result.map_dota, result.ap75, result.map_coco
            );
            for class_eval in &result.per_class {
                println!(
                    "  class {}: AP50 {:.4}  AP75 {:.4}  ({} ground truths)",
                    class_eval.class,
                    class_eval.ap50(),
                    class_eval.ap75(),
                    class_eval.num_gts
                );
            }
            if pr_csv {
                let mut csv = String::from("class,recall,precision,score\n");
                for class in 0..num_classes {
                    let class_dets: Vec<Detection> =
                        dets.iter().filter(|d| d.class == class).cloned().collect();
                    let class_gts: Vec<GroundTruth> =
                        gts.iter().filter(|g| g.class == class).cloned().collect();
                    for p in pr_report(&class_dets, &class_gts, 0.5) {
                        csv.push_str(&format!(
                            "{},{:.6},{:.6},{:.6}\n",
                            class, p.recall, p.precision, p.score
                        ));
                    }
                }
                std::fs::write(out.join("pr_points.csv"), csv)?;
            }
            println!("report written to {}", out.join("eval_report.json").display());
        }
        Command::Tile { width, height, tile, overlap, manifest, out } => {
            let spec = plan_tiles(width, height, tile, overlap)?;
            match manifest {
                None => {
                    let text = serde_json::to_string_pretty(&spec)?;
                    match out {
                        Some(path) => std::fs::write(&path, text + "\n")?,
                        None => println!("{text}"),
                    }
                }
                Some(manifest_path) => {
                    let manifest: DatasetManifest =
                        serde_json::from_str(&std::fs::read_to_string(&manifest_path)?)
                            .context("parsing dataset manifest")?;
                    let mut tiles = Vec::new();
                    for record in &manifest.scenes {
                        let scene = generate_scene(record.seed, &manifest.config);
                        for (tile_index, origin) in spec.origins().into_iter().enumerate() {
                            let cropped = crop_scene(&scene, origin, spec.tile_size);
                            tiles.push(TiledSceneRecord {
                                image_id: record.image_id,
                                tile_index,
                                origin: [origin.0, origin.1],
                                annotations: cropped.annotations,
                            });
                        }
                    }
                    let out = out.context("--out is required with --manifest")?;
                    write_json(&out, &serde_json::json!({ "spec": spec, "tiles": tiles }))?;
                    println!("wrote {} tile records to {}", tiles.len(), out.display());
                }
            }
            println!(
                "{} x {} tiles of {}px (overlap {}px)",
                spec.offsets_x.len(),
                spec.offsets_y.len(),
                tile,
                overlap
            );
        }
        Command::Merge { input, nms_iou, out } => {
            let tiles: Vec<TileDetections> =
                serde_json::from_str(&std::fs::read_to_string(&input)?)
                    .context("parsing per-tile detections")?;
            let per_tile: Vec<Vec<Detection>> =
                tiles.iter().map(|t| t.detections.clone()).collect();
            let origins: Vec<(usize, usize)> =
                tiles.iter().map(|t| (t.origin[0], t.origin[1])).collect();
            let merged = merge_detections(&per_tile, &origins, nms_iou)?;
            write_json(&out, &merged)?;
            println!("merged {} detections into {}", merged.len(), out.display());
        }
    }
    Ok(())
}
