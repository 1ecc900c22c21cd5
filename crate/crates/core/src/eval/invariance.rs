use serde::Serialize;

use crate::datagen::{Dataset, Factor};
use crate::error::{Error, Result};
use crate::model::{ActivationTrace, Model};
use crate::tensor::Tensor;

/// Mean activation SD of one layer under each factor, in `Factor::ALL` order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerRow {
    pub layer: String,
    /// Mean over batches of the per-batch mean SD.
    pub mean_sd: [f64; 3],
    /// Spread of the per-batch values, for error bars.
    pub sd_of_sd: [f64; 3],
    /// `mean_sd` divided by its sum; all zero when the sum is zero.
    pub share: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvarianceProfile {
    pub factors: [&'static str; 3],
    pub rows: Vec<LayerRow>,
}

impl InvarianceProfile {
    pub fn row(&self, layer: &str) -> Option<&LayerRow> {
        self.rows.iter().find(|r| r.layer == layer)
    }
}

/// SD of every unit across the batch axis, averaged over units.
///
/// Uses the population SD, so a batch of identical inputs gives exactly 0.
pub fn layer_sd(activations: &Tensor<f32>) -> f64 {
    let b = activations.shape()[0];
    let units = activations.len() / b;
    if b < 2 || units == 0 {
        return 0.0;
    }
    let d = activations.data();
    let mut total = 0.0;
    for u in 0..units {
        let m = (0..b).map(|i| d[i * units + u] as f64).sum::<f64>() / b as f64;
        let var = (0..b).map(|i| (d[i * units + u] as f64 - m).powi(2)).sum::<f64>() / b as f64;
        total += var.sqrt();
    }
    total / units as f64
}

/// Splits `Z` into `Z_shape` and `Z_transform` and returns the traced layers
/// in network order.
fn layers(trace: &ActivationTrace, shape_len: usize) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut out = Vec::with_capacity(trace.len() + 1);
    for (name, t) in trace.iter() {
        if name == "Z" {
            let (b, n) = (t.shape()[0], t.shape()[1]);
            let mut s = Vec::with_capacity(b * shape_len);
            let mut r = Vec::with_capacity(b * (n - shape_len));
            for row in t.data().chunks_exact(n) {
                s.extend_from_slice(&row[..shape_len]);
                r.extend_from_slice(&row[shape_len..]);
            }
            out.push(("Z_shape".to_string(), Tensor::new(&[b, shape_len], s)?));
            out.push(("Z_transform".to_string(), Tensor::new(&[b, n - shape_len], r)?));
        } else {
            out.push((name.to_string(), t.clone()));
        }
    }
    Ok(out)
}

/// Per-layer activation SD for batches that vary one factor each.
///
/// `batches` pairs every factor with its index batches into `data`. Layers
/// follow the model trace; with `with_image_decoder` the image decoder layers
/// are appended after `Volume`.
pub fn invariance_profile(
    model: &Model,
    data: &Dataset,
    batches: &[(Factor, Vec<Vec<usize>>)],
    with_image_decoder: bool,
) -> Result<InvarianceProfile> {
    let mut per_factor: [Vec<Vec<f64>>; 3] = Default::default();
    let mut names: Vec<String> = Vec::new();
    for f in Factor::ALL {
        let sets: Vec<&Vec<usize>> = batches.iter().filter(|(g, _)| *g == f).flat_map(|(_, b)| b).collect();
        if sets.is_empty() {
            return Err(Error::Data(format!("no batches vary {}", f.as_str())));
        }
        let slot = Factor::ALL.iter().position(|&g| g == f).expect("factor");
        for batch in sets {
            if batch.is_empty() {
                return Err(Error::Data("empty factor batch".into()));
            }
            let trace = model.trace(&data.images(batch)?, with_image_decoder)?;
            let ls = layers(&trace, model.config().shape_len)?;
            if names.is_empty() {
                names = ls.iter().map(|(n, _)| n.clone()).collect();
            }
            per_factor[slot].push(ls.iter().map(|(_, t)| layer_sd(t)).collect());
        }
    }
    let rows = names
        .iter()
        .enumerate()
        .map(|(li, layer)| {
            let mut mean_sd = [0.0; 3];
            let mut sd_of_sd = [0.0; 3];
            for k in 0..3 {
                let vals: Vec<f64> = per_factor[k].iter().map(|v| v[li]).collect();
                mean_sd[k] = super::mean(&vals);
                sd_of_sd[k] = super::sample_sd(&vals);
            }
            let sum: f64 = mean_sd.iter().sum();
            let share = if sum > 0.0 { mean_sd.map(|v| v / sum) } else { [0.0; 3] };
            LayerRow {
                layer: layer.clone(),
                mean_sd,
                sd_of_sd,
                share,
            }
        })
        .collect();
    Ok(InvarianceProfile {
        factors: Factor::ALL.map(Factor::as_str),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_sd_matches_hand_values() {
        let t = Tensor::new(&[2, 2], vec![0.0, 1.0, 2.0, 1.0]).unwrap();
        // unit 0 has SD 1, unit 1 has SD 0
        assert!((layer_sd(&t) - 0.5).abs() < 1e-12);
        let same = Tensor::new(&[3, 2], vec![0.3, -1.0, 0.3, -1.0, 0.3, -1.0]).unwrap();
        assert_eq!(layer_sd(&same), 0.0);
    }
}
