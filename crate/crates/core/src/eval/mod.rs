//! Measurement protocols: voxel error, nearest-neighbour and video
//! benchmarks, activation invariance profiles, recognition rank and code
//! swapping.

mod invariance;
mod rank;
mod stats;

use rayon::prelude::*;
use serde::Serialize;

pub use invariance::{invariance_profile, layer_sd, InvarianceProfile, LayerRow};
pub use rank::{make_rank_trials, rank_of_target, recognition_rank, CodePart, RankResult, RankTrial};
pub use stats::{ln_gamma, mean, paired_t_test, reg_inc_beta, sample_sd, student_t_two_sided_p, TTestResult};

use crate::datagen::{Dataset, VIDEO_FRAMES};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Tensor;
use crate::voxel::VoxelGrid;

/// `1` where `v >= threshold`, else `0`.
pub fn binarize(v: &VoxelGrid, threshold: f32) -> VoxelGrid {
    let data = v.data().iter().map(|&x| if x >= threshold { 1.0 } else { 0.0 }).collect();
    VoxelGrid::new(v.dims(), data).expect("same dims")
}

/// Mean absolute per-voxel occupancy difference.
pub fn voxel_error(pred: &VoxelGrid, truth: &VoxelGrid) -> Result<f64> {
    if pred.dims() != truth.dims() {
        return Err(Error::Shape(format!(
            "voxel_error: grids are {:?} and {:?}",
            pred.dims(),
            truth.dims()
        )));
    }
    let sum: f64 = pred
        .data()
        .iter()
        .zip(truth.data())
        .map(|(&p, &t)| (p as f64 - t as f64).abs())
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Index of the candidate at the smallest Euclidean distance from `query`;
/// ties go to the lowest index.
pub fn nearest_neighbour(query: &[f32], candidates: &[&[f32]]) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::Data("nearest_neighbour: empty candidate set".into()));
    }
    let mut best = (f64::INFINITY, 0);
    for (i, c) in candidates.iter().enumerate() {
        if c.len() != query.len() {
            return Err(Error::Shape(format!(
                "nearest_neighbour: candidate {i} has {} values, query has {}",
                c.len(),
                query.len()
            )));
        }
        let d = squared_distance(query, c);
        if d < best.0 {
            best = (d, i);
        }
    }
    Ok(best.1)
}

pub(crate) fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| ((x - y) as f64).powi(2)).sum()
}

/// How a continuous prediction is compared with a binary target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scoring {
    /// Clamp to `[0, 1]` and compare the occupancy values directly.
    Continuous,
    /// Binarize at the threshold first.
    Binary(f32),
}

impl Scoring {
    pub fn error(self, pred: &VoxelGrid, truth: &VoxelGrid) -> Result<f64> {
        let scored = match self {
            Scoring::Continuous => {
                let data = pred.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
                VoxelGrid::new(pred.dims(), data)?
            }
            Scoring::Binary(t) => binarize(pred, t),
        };
        voxel_error(&scored, truth)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NnRow {
    pub index: usize,
    pub prediction_error: f64,
    pub nn_error: f64,
    /// Training example whose image is closest to the test image.
    pub nn_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NnBenchmark {
    pub rows: Vec<NnRow>,
    /// Prediction errors against nearest-neighbour errors.
    pub ttest: TTestResult,
}

/// Predicted volume error against the volume of the training example with
/// the closest image, for every test item.
pub fn nn_benchmark(model: &Model, train: &Dataset, test: &Dataset, scoring: Scoring) -> Result<NnBenchmark> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::Data("nn_benchmark needs nonempty train and test sets".into()));
    }
    let all: Vec<usize> = (0..test.len()).collect();
    let preds = model.predict_volumes(&test.images(&all)?)?;
    let candidates: Vec<&[f32]> = train.examples.iter().map(|e| e.image.data()).collect();
    let rows = test
        .examples
        .par_iter()
        .zip(preds.par_iter())
        .enumerate()
        .map(|(index, (ex, pred))| {
            let nn_index = nearest_neighbour(ex.image.data(), &candidates)?;
            Ok(NnRow {
                index,
                prediction_error: scoring.error(pred, &ex.volume)?,
                nn_error: voxel_error(&train.examples[nn_index].volume, &ex.volume)?,
                nn_index,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let a: Vec<f64> = rows.iter().map(|r| r.prediction_error).collect();
    let b: Vec<f64> = rows.iter().map(|r| r.nn_error).collect();
    Ok(NnBenchmark {
        ttest: paired_t_test(&a, &b)?,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VideoRow {
    pub index: usize,
    pub video_error: f64,
    pub best_frame_error: f64,
    pub best_frame: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VideoBenchmark {
    pub rows: Vec<VideoRow>,
    /// Video errors against best single-frame errors.
    pub ttest: TTestResult,
}

/// Compares a video model with the best of the five single-frame
/// predictions an image model makes for the same clip.
pub fn video_benchmark(
    video_model: &Model,
    image_model: &Model,
    videos: &Dataset,
    scoring: Scoring,
) -> Result<VideoBenchmark> {
    if !videos.is_video() {
        return Err(Error::Data("video_benchmark needs a video dataset".into()));
    }
    let all: Vec<usize> = (0..videos.len()).collect();
    let video_preds = video_model.predict_volumes(&videos.images(&all)?)?;
    let mut frame_errors = vec![[0.0f64; VIDEO_FRAMES]; videos.len()];
    for f in 0..VIDEO_FRAMES {
        let frames = videos.frames(|_| f)?;
        let preds = image_model.predict_volumes(&frames.images(&all)?)?;
        for (i, p) in preds.iter().enumerate() {
            frame_errors[i][f] = scoring.error(p, &videos.examples[i].volume)?;
        }
    }
    let mut rows = Vec::with_capacity(videos.len());
    for (i, errs) in frame_errors.iter().enumerate() {
        let (best_frame, &best) = errs
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("five frames");
        rows.push(VideoRow {
            index: i,
            video_error: scoring.error(&video_preds[i], &videos.examples[i].volume)?,
            best_frame_error: best,
            best_frame,
        });
    }
    let a: Vec<f64> = rows.iter().map(|r| r.video_error).collect();
    let b: Vec<f64> = rows.iter().map(|r| r.best_frame_error).collect();
    Ok(VideoBenchmark {
        ttest: paired_t_test(&a, &b)?,
        rows,
    })
}

/// Decodes the shape code of `a` with the transformation code of `b`.
///
/// Both inputs are single `[C, H, W]` images; the result is `[3, H, W]`.
pub fn interpolate_codes(model: &Model, a: &Tensor<f32>, b: &Tensor<f32>) -> Result<Tensor<f32>> {
    let batch = Tensor::stack(&[single(a)?, single(b)?])?;
    let codes = model.encode(&batch)?;
    let out = model.decode_image(&[codes[0].shape()], &[codes[1].transform()])?;
    let s = out.shape()[1..].to_vec();
    out.reshape(&s)
}

fn single(t: &Tensor<f32>) -> Result<Tensor<f32>> {
    match t.shape().len() {
        3 => {
            let mut s = vec![1];
            s.extend_from_slice(t.shape());
            t.clone().reshape(&s)
        }
        4 if t.shape()[0] == 1 => Ok(t.clone()),
        _ => Err(Error::Shape(format!("expected one [C, H, W] image, got {:?}", t.shape()))),
    }
}

/// Intersection over union of the pixels whose channel mean exceeds
/// `threshold` in two `[C, H, W]` images.
pub fn silhouette_iou(a: &Tensor<f32>, b: &Tensor<f32>, threshold: f32) -> Result<f64> {
    if a.shape() != b.shape() || a.shape().len() != 3 {
        return Err(Error::Shape(format!(
            "silhouette_iou: images are {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mask = |t: &Tensor<f32>| -> Vec<bool> {
        let c = t.shape()[0];
        let plane = t.shape()[1] * t.shape()[2];
        (0..plane)
            .map(|p| (0..c).map(|k| t.data()[k * plane + p]).sum::<f32>() / c as f32 > threshold)
            .collect()
    };
    let (ma, mb) = (mask(a), mask(b));
    let inter = ma.iter().zip(&mb).filter(|(x, y)| **x && **y).count();
    let union = ma.iter().zip(&mb).filter(|(x, y)| **x || **y).count();
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binarize_and_error_basics() {
        let z = VoxelGrid::zeros([2, 3, 4]);
        assert_eq!(binarize(&z, 0.01), z);
        let ones = VoxelGrid::from_fn([2, 3, 4], |_, _, _| 1.0);
        assert_eq!(voxel_error(&ones, &z).unwrap(), 1.0);
        assert_eq!(voxel_error(&ones, &ones).unwrap(), 0.0);
        assert!(voxel_error(&ones, &VoxelGrid::zeros([2, 3, 3])).is_err());
        let v = VoxelGrid::new([1, 1, 3], vec![0.005, 0.01, 0.3]).unwrap();
        assert_eq!(binarize(&v, 0.01).data(), &[0.0, 1.0, 1.0]);
    }

    #[test]
    fn nearest_neighbour_ties_and_self() {
        let a = [0.0f32, 0.0];
        let b = [2.0f32, 0.0];
        let c = [0.0f32, 2.0];
        assert_eq!(nearest_neighbour(&[1.0, 1.0], &[&b, &c, &a]).unwrap(), 0);
        assert_eq!(nearest_neighbour(&c, &[&a, &b, &c]).unwrap(), 2);
        assert!(nearest_neighbour(&a, &[]).is_err());
    }

    #[test]
    fn scoring_clamps_or_thresholds() {
        let truth = VoxelGrid::new([1, 1, 2], vec![1.0, 0.0]).unwrap();
        let pred = VoxelGrid::new([1, 1, 2], vec![1.4, 0.2]).unwrap();
        assert!((Scoring::Continuous.error(&pred, &truth).unwrap() - 0.1).abs() < 1e-7);
        assert_eq!(Scoring::Binary(0.5).error(&pred, &truth).unwrap(), 0.0);
        assert_eq!(Scoring::Binary(0.1).error(&pred, &truth).unwrap(), 0.5);
    }

    #[test]
    fn iou_of_masks() {
        let a = Tensor::new(&[1, 1, 4], vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let b = Tensor::new(&[1, 1, 4], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert!((silhouette_iou(&a, &b, 0.5).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(silhouette_iou(&a, &a, 0.5).unwrap(), 1.0);
    }
}
