use std::fs;
use std::path::Path;

use anyhow::Result;
use serde::Serialize;
use voxelrec::eval::TTestResult;

/// Writes `header` and `rows` as comma-separated text.
pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

pub fn describe_ttest(a: &str, b: &str, t: &TTestResult) -> String {
    format!(
        "{a} M={:.5} SD={:.5}, {b} M={:.5} SD={:.5}; t({})={:.4}, p={:.4e}",
        t.mean_a, t.sd_a, t.mean_b, t.sd_b, t.df, t.t, t.p
    )
}

/// Binary PPM of a `[3, H, W]` image with values in `[0, 1]`.
pub fn write_ppm(path: &Path, image: &voxelrec::Tensor<f32>) -> Result<()> {
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let plane = h * w;
    let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
    for p in 0..plane {
        for c in 0..3 {
            bytes.push((image.data()[c * plane + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}
