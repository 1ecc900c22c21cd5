use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::squared_distance;
use crate::datagen::{Dataset, Factor};
use crate::error::{Error, Result};
use crate::model::GraphicsCode;

/// Which code slots the distance is measured over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CodePart {
    Shape,
    Full,
}

impl CodePart {
    fn pick(self, c: &GraphicsCode) -> &[f32] {
        match self {
            CodePart::Shape => c.shape(),
            CodePart::Full => c.values(),
        }
    }
}

/// One probe with its gallery; `gallery[0]` is the target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RankTrial {
    pub probe: usize,
    pub gallery: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankResult {
    pub ranks: Vec<usize>,
    pub mean_rank: f64,
}

/// 1-based rank of `gallery[target]` when the gallery is sorted by distance
/// from `probe`; candidates tied with the target do not push it down.
pub fn rank_of_target(probe: &[f32], gallery: &[&[f32]], target: usize) -> Result<usize> {
    let t = gallery
        .get(target)
        .ok_or_else(|| Error::Data(format!("target {target} missing from a gallery of {}", gallery.len())))?;
    let dt = squared_distance(probe, t);
    Ok(1 + gallery.iter().filter(|g| squared_distance(probe, g) < dt).count())
}

/// Draws `trials` probes from `data`. Each gallery holds one target of the
/// probe's shape with a different value of `varied` (other factors kept) and
/// `gallery_size - 1` distractors drawn uniformly from other shapes.
pub fn make_rank_trials(
    data: &Dataset,
    varied: Factor,
    trials: usize,
    gallery_size: usize,
    seed: u64,
) -> Result<Vec<RankTrial>> {
    if varied == Factor::Shape {
        return Err(Error::Data("recognition varies pose or lighting, not shape".into()));
    }
    if gallery_size == 0 {
        return Err(Error::Data("gallery must hold the target".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let singles: Vec<usize> = (0..data.len()).filter(|&i| data.examples[i].azimuth_index.is_some()).collect();
    let mut out = Vec::with_capacity(trials);
    for _ in 0..trials {
        let mut tries = 0;
        let (probe, target) = loop {
            tries += 1;
            if tries > 1000 {
                return Err(Error::Data(format!("no probe has a {} partner", varied.as_str())));
            }
            let &p = singles.choose(&mut rng).ok_or_else(|| Error::Data("no single images".into()))?;
            let e = &data.examples[p];
            let partners: Vec<usize> = singles
                .iter()
                .copied()
                .filter(|&j| {
                    let o = &data.examples[j];
                    o.shape_id == e.shape_id
                        && match varied {
                            Factor::Pose => o.azimuth_index != e.azimuth_index && o.lighting_index == e.lighting_index,
                            _ => o.azimuth_index == e.azimuth_index && o.lighting_index != e.lighting_index,
                        }
                })
                .collect();
            if let Some(&t) = partners.choose(&mut rng) {
                break (p, t);
            }
        };
        let shape = data.examples[probe].shape_id;
        let others: Vec<usize> = singles.iter().copied().filter(|&j| data.examples[j].shape_id != shape).collect();
        if others.len() < gallery_size - 1 {
            return Err(Error::Data(format!(
                "only {} distractors available for a gallery of {gallery_size}",
                others.len()
            )));
        }
        let mut gallery = vec![target];
        gallery.extend(others.choose_multiple(&mut rng, gallery_size - 1).copied());
        out.push(RankTrial { probe, gallery });
    }
    Ok(out)
}

/// Mean rank of each trial's target; `codes` is indexed like the dataset the
/// trials were drawn from.
pub fn recognition_rank(codes: &[GraphicsCode], trials: &[RankTrial], part: CodePart) -> Result<RankResult> {
    if trials.is_empty() {
        return Err(Error::Data("no recognition trials".into()));
    }
    let get = |i: usize| {
        codes
            .get(i)
            .map(|c| part.pick(c))
            .ok_or_else(|| Error::Data(format!("no code for example {i}")))
    };
    let mut ranks = Vec::with_capacity(trials.len());
    for t in trials {
        let gallery = t.gallery.iter().map(|&i| get(i)).collect::<Result<Vec<_>>>()?;
        ranks.push(rank_of_target(get(t.probe)?, &gallery, 0)?);
    }
    let mean_rank = ranks.iter().sum::<usize>() as f64 / ranks.len() as f64;
    Ok(RankResult { ranks, mean_rank })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_target_ranks_first() {
        let p = [0.5f32, 0.5];
        let far = [9.0f32, 9.0];
        assert_eq!(rank_of_target(&p, &[&far, &p, &far], 1).unwrap(), 1);
        let near = [0.6f32, 0.5];
        assert_eq!(rank_of_target(&p, &[&far, &near, &far], 0).unwrap(), 2);
        assert!(rank_of_target(&p, &[&far], 3).is_err());
    }
}
