//! Procedural image/volume pairs over a shape x pose x lighting grid.

mod io;
mod render;
mod shapes;

pub use io::{DATASET_FILE, DATASET_MAGIC, DATASET_VERSION, METADATA_FILE};
pub use render::{light_direction, render, render_sdf, shade, SceneFactors, AMBIENT, AZIMUTHS_DEG, LIGHTING_LEVELS};
pub use shapes::{cell_center, sample_shape, voxelize, voxelize_fn, Family, ShapeSpec};

use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::voxel::VoxelGrid;

/// Frames per video example.
pub const VIDEO_FRAMES: usize = 5;

/// One image (or stacked video) with its target volume and factor labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    /// `[C, H, W]`; videos stack frames on the channel axis.
    pub image: Tensor<f32>,
    /// Binary target, shared between examples of one shape.
    pub volume: Arc<VoxelGrid>,
    pub shape_id: usize,
    /// `None` for videos, which sweep every azimuth.
    pub azimuth_index: Option<usize>,
    pub lighting_index: usize,
}

/// Generation settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DataConfig {
    pub family: Family,
    pub n_shapes: usize,
    pub image_res: usize,
    pub volume_res: usize,
    pub video: bool,
    pub seed: u64,
}

impl DataConfig {
    pub fn new(family: Family, n_shapes: usize, res: usize, seed: u64) -> Self {
        Self {
            family,
            n_shapes,
            image_res: res,
            volume_res: if family == Family::Chair { 30 } else { res },
            video: false,
            seed,
        }
    }

    pub fn with_video(mut self, video: bool) -> Self {
        self.video = video;
        self
    }

    pub fn with_volume_res(mut self, res: usize) -> Self {
        self.volume_res = res;
        self
    }
}

/// An in-memory dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub family: Family,
    pub channels: usize,
    pub image_res: usize,
    pub volume_res: usize,
    pub examples: Vec<Example>,
}

/// Factor varied inside a factor-isolated batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Factor {
    Shape,
    Pose,
    Lighting,
}

impl Factor {
    pub const ALL: [Factor; 3] = [Factor::Shape, Factor::Pose, Factor::Lighting];

    pub fn as_str(self) -> &'static str {
        match self {
            Factor::Shape => "shape",
            Factor::Pose => "pose",
            Factor::Lighting => "lighting",
        }
    }
}

/// Generates `n_shapes x 15` images, or `n_shapes` videos of five frames
/// sweeping the azimuths under one randomly drawn lighting level.
pub fn make_dataset(cfg: &DataConfig) -> Result<Dataset> {
    if cfg.n_shapes == 0 {
        return Err(Error::Data("dataset needs at least one shape".into()));
    }
    if cfg.image_res == 0 || cfg.volume_res == 0 {
        return Err(Error::Data("resolutions must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let specs: Vec<(ShapeSpec, usize)> = (0..cfg.n_shapes)
        .map(|id| {
            let spec = sample_shape(cfg.family, id, &mut rng);
            let light = rng.gen_range(0..LIGHTING_LEVELS);
            (spec, light)
        })
        .collect();
    let per_shape: Vec<Vec<Example>> = specs
        .par_iter()
        .map(|(spec, video_light)| {
            let volume = Arc::new(voxelize(spec, cfg.volume_res));
            if cfg.video {
                let frames: Vec<Tensor<f32>> = (0..VIDEO_FRAMES)
                    .map(|a| {
                        let f = SceneFactors { azimuth_index: a, lighting_index: *video_light };
                        render(spec, f, cfg.image_res)
                    })
                    .collect();
                let data = frames.iter().flat_map(|f| f.data().iter().copied()).collect();
                let image = Tensor::new(&[3 * VIDEO_FRAMES, cfg.image_res, cfg.image_res], data)
                    .expect("video shape");
                return vec![Example {
                    image,
                    volume,
                    shape_id: spec.shape_id,
                    azimuth_index: None,
                    lighting_index: *video_light,
                }];
            }
            let mut out = Vec::with_capacity(AZIMUTHS_DEG.len() * LIGHTING_LEVELS);
            for a in 0..AZIMUTHS_DEG.len() {
                for l in 0..LIGHTING_LEVELS {
                    let f = SceneFactors { azimuth_index: a, lighting_index: l };
                    out.push(Example {
                        image: render(spec, f, cfg.image_res),
                        volume: volume.clone(),
                        shape_id: spec.shape_id,
                        azimuth_index: Some(a),
                        lighting_index: l,
                    });
                }
            }
            out
        })
        .collect();
    Ok(Dataset {
        family: cfg.family,
        channels: if cfg.video { 3 * VIDEO_FRAMES } else { 3 },
        image_res: cfg.image_res,
        volume_res: cfg.volume_res,
        examples: per_shape.into_iter().flatten().collect(),
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn is_video(&self) -> bool {
        self.channels == 3 * VIDEO_FRAMES
    }

    /// Examples at `indices`, keeping this dataset's header.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            examples: indices.iter().map(|&i| self.examples[i].clone()).collect(),
            ..self.header()
        }
    }

    fn header(&self) -> Dataset {
        Dataset {
            family: self.family,
            channels: self.channels,
            image_res: self.image_res,
            volume_res: self.volume_res,
            examples: Vec::new(),
        }
    }

    /// Images of `indices` stacked to `[B, C, H, W]`.
    pub fn images(&self, indices: &[usize]) -> Result<Tensor<f32>> {
        let mut data = Vec::with_capacity(indices.len() * self.channels * self.image_res * self.image_res);
        for &i in indices {
            data.extend_from_slice(self.examples[i].image.data());
        }
        Tensor::new(&[indices.len(), self.channels, self.image_res, self.image_res], data)
    }

    /// Volumes of `indices` stacked to `[B, 1, D, H, W]`.
    pub fn volumes(&self, indices: &[usize]) -> Result<Tensor<f32>> {
        let r = self.volume_res;
        let mut data = Vec::with_capacity(indices.len() * r * r * r);
        for &i in indices {
            data.extend_from_slice(self.examples[i].volume.data());
        }
        Tensor::new(&[indices.len(), 1, r, r, r], data)
    }

    /// Single frame `frame` of a video example as a `[3, H, W]` image.
    pub fn video_frame(&self, index: usize, frame: usize) -> Result<Tensor<f32>> {
        if !self.is_video() || frame >= VIDEO_FRAMES {
            return Err(Error::Data(format!("no frame {frame} in example {index}")));
        }
        let plane = self.image_res * self.image_res;
        let data = self.examples[index].image.data()[3 * frame * plane..3 * (frame + 1) * plane].to_vec();
        Tensor::new(&[3, self.image_res, self.image_res], data)
    }

    /// Dataset of single frames, frame `pick(i)` of video `i`.
    pub fn frames(&self, pick: impl Fn(usize) -> usize) -> Result<Dataset> {
        let mut out = Dataset {
            channels: 3,
            ..self.header()
        };
        for (i, ex) in self.examples.iter().enumerate() {
            let frame = pick(i);
            out.examples.push(Example {
                image: self.video_frame(i, frame)?,
                volume: ex.volume.clone(),
                shape_id: ex.shape_id,
                azimuth_index: Some(frame),
                lighting_index: ex.lighting_index,
            });
        }
        Ok(out)
    }

    /// `index -> example` lookup keyed by `(shape_id, azimuth, lighting)`.
    fn cells(&self) -> HashMap<(usize, usize, usize), usize> {
        self.examples
            .iter()
            .enumerate()
            .filter_map(|(i, e)| e.azimuth_index.map(|a| ((e.shape_id, a, e.lighting_index), i)))
            .collect()
    }

    pub fn shape_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.examples.iter().map(|e| e.shape_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// Batches of example indices in which only `varied` changes.
///
/// Each batch fixes the two other factors at a randomly drawn cell and holds
/// `batch_size` distinct values of the varied factor.
pub fn factor_batches(
    data: &Dataset,
    varied: Factor,
    batch_count: usize,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Data("batch size must be positive".into()));
    }
    let cells = data.cells();
    let shapes = data.shape_ids();
    let n_az = AZIMUTHS_DEG.len();
    let available = match varied {
        Factor::Shape => shapes.len(),
        Factor::Pose => n_az,
        Factor::Lighting => LIGHTING_LEVELS,
    };
    if batch_size > available {
        return Err(Error::Data(format!(
            "cannot vary {} over {batch_size} values, dataset offers {available}",
            varied.as_str()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lookup = |s: usize, a: usize, l: usize| {
        cells.get(&(s, a, l)).copied().ok_or_else(|| {
            Error::Data(format!("dataset lacks shape {s}, azimuth {a}, lighting {l}"))
        })
    };
    let mut batches = Vec::with_capacity(batch_count);
    for _ in 0..batch_count {
        let s = *shapes.choose(&mut rng).ok_or_else(|| Error::Data("empty dataset".into()))?;
        let a = rng.gen_range(0..n_az);
        let l = rng.gen_range(0..LIGHTING_LEVELS);
        let batch = match varied {
            Factor::Shape => shapes
                .choose_multiple(&mut rng, batch_size)
                .map(|&s| lookup(s, a, l))
                .collect::<Result<Vec<_>>>()?,
            Factor::Pose => rand::seq::index::sample(&mut rng, n_az, batch_size)
                .into_iter()
                .map(|a| lookup(s, a, l))
                .collect::<Result<Vec<_>>>()?,
            Factor::Lighting => rand::seq::index::sample(&mut rng, LIGHTING_LEVELS, batch_size)
                .into_iter()
                .map(|l| lookup(s, a, l))
                .collect::<Result<Vec<_>>>()?,
        };
        batches.push(batch);
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(video: bool) -> Dataset {
        make_dataset(&DataConfig::new(Family::Head, 2, 16, 1).with_video(video)).unwrap()
    }

    #[test]
    fn grid_and_video_counts() {
        let d = small(false);
        assert_eq!(d.len(), 30);
        let mut cells: Vec<_> = d
            .examples
            .iter()
            .map(|e| (e.shape_id, e.azimuth_index.unwrap(), e.lighting_index))
            .collect();
        cells.sort_unstable();
        cells.dedup();
        assert_eq!(cells.len(), 30);
        let v = small(true);
        assert_eq!(v.len(), 2);
        assert_eq!(v.examples[0].image.shape(), &[15, 16, 16]);
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(small(false), small(false));
    }

    #[test]
    fn video_frames_match_still_renders() {
        let v = small(true);
        let d = small(false);
        let light = v.examples[0].lighting_index;
        let still = d
            .examples
            .iter()
            .find(|e| e.shape_id == 0 && e.azimuth_index == Some(3) && e.lighting_index == light)
            .unwrap();
        assert_eq!(v.video_frame(0, 3).unwrap(), still.image);
    }

    #[test]
    fn factor_batches_clamp_the_other_factors() {
        let d = make_dataset(&DataConfig::new(Family::Head, 6, 8, 2)).unwrap();
        for varied in Factor::ALL {
            let size = if varied == Factor::Lighting { 3 } else { 5 };
            let batches = factor_batches(&d, varied, 100, size, 7).unwrap();
            assert_eq!(batches, factor_batches(&d, varied, 100, size, 7).unwrap());
            for b in &batches {
                let ex: Vec<_> = b.iter().map(|&i| &d.examples[i]).collect();
                let key = |e: &Example| match varied {
                    Factor::Shape => e.shape_id,
                    Factor::Pose => e.azimuth_index.unwrap(),
                    Factor::Lighting => e.lighting_index,
                };
                let fixed = |e: &Example| match varied {
                    Factor::Shape => (e.azimuth_index.unwrap(), e.lighting_index),
                    Factor::Pose => (e.shape_id, e.lighting_index),
                    Factor::Lighting => (e.shape_id, e.azimuth_index.unwrap()),
                };
                assert!(ex.iter().all(|e| fixed(e) == fixed(ex[0])));
                let mut k: Vec<_> = ex.iter().map(|e| key(e)).collect();
                k.sort_unstable();
                k.dedup();
                assert_eq!(k.len(), size);
            }
        }
        assert!(factor_batches(&d, Factor::Lighting, 1, 5, 0).is_err());
    }

    #[test]
    fn rendered_silhouette_overlaps_voxel_projection() {
        // ray-cast the voxel grid along the view direction and compare masks
        let res = 32;
        let d = make_dataset(&DataConfig::new(Family::Head, 2, res, 3)).unwrap();
        for ex in &d.examples {
            let a = AZIMUTHS_DEG[ex.azimuth_index.unwrap()].to_radians();
            let (sin, cos) = a.sin_cos();
            let vol = &ex.volume;
            let (mut inter, mut union) = (0usize, 0usize);
            for i in 0..res {
                for j in 0..res {
                    let (u, v) = (cell_center(j, res), -cell_center(i, res));
                    let mut occ = false;
                    for s in 0..4 * res {
                        let w = -1.0 + (s as f64 + 0.5) * 2.0 / (4 * res) as f64;
                        let p = [cos * u + sin * w, v, -sin * u + cos * w];
                        let idx = |c: f64| ((c + 1.0) / 2.0 * res as f64).floor();
                        let (x, y, z) = (idx(p[0]), idx(-p[1]), idx(p[2]));
                        let inb = |c: f64| c >= 0.0 && c < res as f64;
                        if inb(x) && inb(y) && inb(z) && vol.get(z as usize, y as usize, x as usize) > 0.5 {
                            occ = true;
                            break;
                        }
                    }
                    let lit = (0..3).any(|c| ex.image.data()[(c * res + i) * res + j] > 0.0);
                    inter += (occ && lit) as usize;
                    union += (occ || lit) as usize;
                }
            }
            let iou = inter as f64 / union as f64;
            assert!(iou > 0.8, "iou {iou}");
        }
    }
}
