use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use voxelrec::datagen::{factor_batches, make_dataset, DataConfig, Dataset, Factor, Family};
use voxelrec::eval::{self, CodePart, Scoring};
use voxelrec::mesh::marching_cubes;
use voxelrec::model::{Model, NetworkConfig};
use voxelrec::train;
use voxelrec::voxel::{read_volumes, write_volumes};

use crate::config::{RunConfig, METRICS_FILE, NETWORK_FILE, RUN_CONFIG_FILE, WEIGHTS_FILE};
use crate::report::{describe_ttest, write_csv, write_json, write_ppm};
use crate::{EvalArgs, ExportMeshArgs, FactorArg, GenDataArgs, ModeArg, PredictArgs, Suite, TrainArgs};

/// Bad flag combinations found after parsing; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn load_data(path: &Path) -> Result<Dataset> {
    Dataset::load(path).with_context(|| format!("cannot read dataset {}", path.display()))
}

fn load_model(dir: &Path) -> Result<Model> {
    let text = fs::read_to_string(dir.join(NETWORK_FILE))
        .with_context(|| format!("cannot read {}", dir.join(NETWORK_FILE).display()))?;
    let cfg = NetworkConfig::from_kv(&text)?;
    Model::load_weights(&cfg, dir.join(WEIGHTS_FILE))
        .with_context(|| format!("cannot load weights from {}", dir.display()))
}

pub fn gen_data(a: GenDataArgs) -> Result<()> {
    let family: Family = a.family.into();
    let mut cfg = DataConfig::new(family, a.shapes as usize, a.res as usize, a.seed).with_video(a.video);
    if let Some(r) = a.volume_res {
        cfg = cfg.with_volume_res(r as usize);
    }
    let data = make_dataset(&cfg)?;
    data.save(&a.out).with_context(|| format!("cannot write dataset to {}", a.out.display()))?;
    println!(
        "wrote {} {} examples to {}",
        data.len(),
        if a.video { "video" } else { "image" },
        a.out.display()
    );
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let data = load_data(&a.data)?;
    let file = match &a.config {
        Some(p) => Some(fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?),
        None => None,
    };
    let mut flags: Vec<(String, String)> = Vec::new();
    let mut flag = |k: &str, v: String| flags.push((k.to_string(), v));
    if let Some(m) = a.mode {
        flag("mode", match m {
            ModeArg::Volume => "volume",
            ModeArg::Twin => "twin",
        }
        .to_string());
    }
    if let Some(b) = a.batchnorm {
        flag("batchnorm", b.as_str().to_string());
    }
    if let Some(f) = a.fc3000 {
        flag("fc3000", f.as_str().to_string());
    }
    if let Some(e) = a.epochs {
        flag("epochs", e.to_string());
    }
    if let Some(lr) = a.lr {
        flag("lr", lr.to_string());
    }
    if let Some(b) = a.batch_size {
        flag("batch_size", b.to_string());
    }
    if let Some(s) = a.seed {
        flag("seed", s.to_string());
        flag("train_seed", s.to_string());
    }
    let run = RunConfig::resolve(&a.data, &data, file.as_deref(), &flags).map_err(|e| usage(format!("{e:#}")))?;
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join(RUN_CONFIG_FILE), run.to_text())?;
    fs::write(a.out.join(NETWORK_FILE), run.network.to_kv())?;

    let model = Model::build(&run.network)?;
    let mut metrics = BufWriter::new(File::create(a.out.join(METRICS_FILE))?);
    writeln!(metrics, "step,decoder,loss")?;
    let (model, log) = train::train(model, &data, &run.train, |r| {
        writeln!(metrics, "{},{},{}", r.step, r.kind, r.loss)?;
        if r.step % 50 == 0 {
            eprintln!("step {} {} loss {:.6}", r.step, r.kind, r.loss);
        }
        Ok(())
    })?;
    metrics.flush()?;
    model.save_weights(a.out.join(WEIGHTS_FILE))?;
    let last = log.last().map_or(f32::NAN, |r| r.loss);
    println!("trained {} steps, final loss {last:.6}; model in {}", log.len(), a.out.display());
    Ok(())
}

pub fn predict(a: PredictArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let data = load_data(&a.data)?;
    let indices: Vec<usize> = if a.index.is_empty() { (0..data.len()).collect() } else { a.index.clone() };
    if let Some(&bad) = indices.iter().find(|&&i| i >= data.len()) {
        return Err(usage(format!("index {bad} is out of range for {} examples", data.len())));
    }
    let vols = model.predict_volumes(&data.images(&indices)?)?;
    let mut w = BufWriter::new(File::create(&a.out)?);
    write_volumes(&mut w, model.config().family, &vols)?;
    w.flush()?;
    println!("wrote {} volumes to {}", vols.len(), a.out.display());
    Ok(())
}

pub fn export_mesh(a: ExportMeshArgs) -> Result<()> {
    let (family, grids) = read_volumes(&mut BufReader::new(
        File::open(&a.volumes).with_context(|| format!("cannot open {}", a.volumes.display()))?,
    ))?;
    let grid = grids
        .get(a.item)
        .ok_or_else(|| usage(format!("item {} is out of range for {} volumes", a.item, grids.len())))?;
    let threshold = a.threshold.unwrap_or(family.default_threshold());
    let binary = eval::binarize(grid, threshold);
    let mut mesh = marching_cubes(&binary, 0.5);
    if a.smooth > 0 {
        mesh.smooth(a.smooth, 0.5);
    }
    if !a.grid_coords {
        mesh = mesh.to_world(grid.dims());
    }
    if mesh.is_empty() {
        eprintln!("warning: no voxel reaches threshold {threshold}; writing an empty mesh");
    }
    mesh.write_obj(&a.out)?;
    println!(
        "wrote {} vertices and {} triangles to {}",
        mesh.vertices.len(),
        mesh.triangles.len(),
        a.out.display()
    );
    Ok(())
}

fn scoring(s: &str) -> Result<Scoring> {
    if s == "none" {
        return Ok(Scoring::Continuous);
    }
    s.parse::<f32>()
        .ok()
        .filter(|t| t.is_finite())
        .map(Scoring::Binary)
        .ok_or_else(|| usage(format!("--score-threshold expects a number or `none`, got {s:?}")))
}

fn limited(data: Dataset, limit: Option<usize>) -> Dataset {
    match limit {
        Some(n) if n < data.len() => data.subset(&(0..n).collect::<Vec<_>>()),
        _ => data,
    }
}

#[derive(Serialize)]
struct Summary<'a, T: Serialize> {
    suite: &'a str,
    n: usize,
    #[serde(flatten)]
    body: T,
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let score = scoring(&a.score_threshold)?;
    match a.suite {
        Suite::Video if a.image_model.is_none() => return Err(usage("--suite video needs --image-model")),
        Suite::Nn if a.train_data.is_none() => return Err(usage("--suite nn needs --train-data")),
        _ => {}
    }
    let model = load_model(&a.model)?;
    let data = load_data(&a.data)?;
    fs::create_dir_all(&a.out)?;
    match a.suite {
        Suite::Nn => {
            let train_data = load_data(a.train_data.as_deref().expect("checked"))?;
            let test = limited(data, a.limit);
            let r = eval::nn_benchmark(&model, &train_data, &test, score)?;
            write_csv(
                &a.out.join("nn.csv"),
                &["index", "prediction_error", "nn_error", "nn_index"],
                r.rows.iter().map(|r| {
                    vec![
                        r.index.to_string(),
                        r.prediction_error.to_string(),
                        r.nn_error.to_string(),
                        r.nn_index.to_string(),
                    ]
                }),
            )?;
            #[derive(Serialize)]
            struct Body<'a> {
                scoring: Scoring,
                ttest: &'a eval::TTestResult,
            }
            write_json(
                &a.out.join("nn.json"),
                &Summary {
                    suite: "nn",
                    n: r.rows.len(),
                    body: Body {
                        scoring: score,
                        ttest: &r.ttest,
                    },
                },
            )?;
            println!("nn: {}", describe_ttest("prediction", "nearest neighbour", &r.ttest));
        }
        Suite::Video => {
            let image_model = load_model(a.image_model.as_deref().expect("checked"))?;
            let videos = limited(data, a.limit);
            let r = eval::video_benchmark(&model, &image_model, &videos, score)?;
            write_csv(
                &a.out.join("video.csv"),
                &["index", "video_error", "best_frame_error", "best_frame"],
                r.rows.iter().map(|r| {
                    vec![
                        r.index.to_string(),
                        r.video_error.to_string(),
                        r.best_frame_error.to_string(),
                        r.best_frame.to_string(),
                    ]
                }),
            )?;
            #[derive(Serialize)]
            struct Body<'a> {
                scoring: Scoring,
                ttest: &'a eval::TTestResult,
            }
            write_json(
                &a.out.join("video.json"),
                &Summary {
                    suite: "video",
                    n: r.rows.len(),
                    body: Body {
                        scoring: score,
                        ttest: &r.ttest,
                    },
                },
            )?;
            println!("video: {}", describe_ttest("video", "best single frame", &r.ttest));
        }
        Suite::Invariance => {
            let mut sets = Vec::new();
            for (k, f) in Factor::ALL.into_iter().enumerate() {
                sets.push((f, factor_batches(&data, f, a.batches, a.batch_size, a.seed + k as u64)?));
            }
            let p = eval::invariance_profile(&model, &data, &sets, true)?;
            write_csv(
                &a.out.join("invariance.csv"),
                &[
                    "layer",
                    "shape_sd",
                    "pose_sd",
                    "lighting_sd",
                    "shape_share",
                    "pose_share",
                    "lighting_share",
                ],
                p.rows.iter().map(|r| {
                    let mut v = vec![r.layer.clone()];
                    v.extend(r.mean_sd.iter().chain(&r.share).map(|x| x.to_string()));
                    v
                }),
            )?;
            write_json(
                &a.out.join("invariance.json"),
                &Summary {
                    suite: "invariance",
                    n: a.batches,
                    body: &p,
                },
            )?;
            let line: Vec<String> = p
                .rows
                .iter()
                .map(|r| format!("{} {:.2}/{:.2}/{:.2}", r.layer, r.share[0], r.share[1], r.share[2]))
                .collect();
            println!("invariance (shape/pose/lighting shares): {}", line.join(", "));
        }
        Suite::Rank => {
            let varied = match a.factor {
                FactorArg::Pose => Factor::Pose,
                FactorArg::Lighting => Factor::Lighting,
            };
            let trials = eval::make_rank_trials(&data, varied, a.trials, a.gallery, a.seed)?;
            let all: Vec<usize> = (0..data.len()).collect();
            let codes = model.encode(&data.images(&all)?)?;
            let shape = eval::recognition_rank(&codes, &trials, CodePart::Shape)?;
            let full = eval::recognition_rank(&codes, &trials, CodePart::Full)?;
            write_csv(
                &a.out.join("rank.csv"),
                &["trial", "probe", "target", "shape_rank", "full_rank"],
                trials.iter().enumerate().map(|(i, t)| {
                    vec![
                        i.to_string(),
                        t.probe.to_string(),
                        t.gallery[0].to_string(),
                        shape.ranks[i].to_string(),
                        full.ranks[i].to_string(),
                    ]
                }),
            )?;
            #[derive(Serialize)]
            struct Body {
                factor: &'static str,
                gallery: usize,
                shape_mean_rank: f64,
                full_mean_rank: f64,
            }
            write_json(
                &a.out.join("rank.json"),
                &Summary {
                    suite: "rank",
                    n: trials.len(),
                    body: Body {
                        factor: varied.as_str(),
                        gallery: a.gallery,
                        shape_mean_rank: shape.mean_rank,
                        full_mean_rank: full.mean_rank,
                    },
                },
            )?;
            println!(
                "rank ({} change, gallery {}): shape code {:.2}, full code {:.2}",
                varied.as_str(),
                a.gallery,
                shape.mean_rank,
                full.mean_rank
            );
        }
        Suite::Interp => interp(&a, &model, &data)?,
    }
    Ok(())
}

/// Swaps shape and transformation codes between image pairs of different
/// shapes and scores each swap against the rendering it should match.
fn interp(a: &EvalArgs, model: &Model, data: &Dataset) -> Result<()> {
    const SILHOUETTE: f32 = 0.1;
    let cell = |s: usize, az: Option<usize>, l: usize| {
        data.examples
            .iter()
            .position(|e| e.shape_id == s && e.azimuth_index == az && e.lighting_index == l)
    };
    let singles: Vec<usize> = (0..data.len()).filter(|&i| data.examples[i].azimuth_index.is_some()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut rows = Vec::new();
    let mut tries = 0;
    while rows.len() < a.pairs {
        tries += 1;
        if tries > 100 * a.pairs.max(1) {
            anyhow::bail!("dataset has too few shapes for code swapping");
        }
        let (Some(&i), Some(&j)) = (singles.choose(&mut rng), singles.choose(&mut rng)) else {
            anyhow::bail!("dataset has no single images");
        };
        let (ea, eb) = (&data.examples[i], &data.examples[j]);
        if ea.shape_id == eb.shape_id {
            continue;
        }
        // shape of `a` seen under the pose and lighting of `b`
        let Some(target) = cell(ea.shape_id, eb.azimuth_index, eb.lighting_index) else {
            continue;
        };
        let swapped = eval::interpolate_codes(model, &ea.image, &eb.image)?;
        let iou_a = eval::silhouette_iou(&swapped, &data.examples[target].image, SILHOUETTE)?;
        let iou_b = eval::silhouette_iou(&swapped, &eb.image, SILHOUETTE)?;
        let k = rows.len();
        write_ppm(&a.out.join(format!("swap_{k:03}.ppm")), &swapped)?;
        rows.push((k, i, j, target, iou_a, iou_b));
    }
    write_csv(
        &a.out.join("interp.csv"),
        &["pair", "shape_from", "transform_from", "target", "iou_target", "iou_transform_source"],
        rows.iter().map(|r| {
            vec![
                r.0.to_string(),
                r.1.to_string(),
                r.2.to_string(),
                r.3.to_string(),
                r.4.to_string(),
                r.5.to_string(),
            ]
        }),
    )?;
    let n = rows.len().max(1) as f64;
    #[derive(Serialize)]
    struct Body {
        mean_iou_target: f64,
        mean_iou_transform_source: f64,
        target_closer_fraction: f64,
    }
    let body = Body {
        mean_iou_target: rows.iter().map(|r| r.4).sum::<f64>() / n,
        mean_iou_transform_source: rows.iter().map(|r| r.5).sum::<f64>() / n,
        target_closer_fraction: rows.iter().filter(|r| r.4 > r.5).count() as f64 / n,
    };
    println!(
        "interp: silhouette IoU with target {:.3}, with transformation source {:.3}",
        body.mean_iou_target, body.mean_iou_transform_source
    );
    write_json(
        &a.out.join("interp.json"),
        &Summary {
            suite: "interp",
            n: rows.len(),
            body,
        },
    )
}
