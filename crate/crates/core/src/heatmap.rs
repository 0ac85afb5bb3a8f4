//! Grayscale heatmaps of per-position feature magnitude, written as binary
//! PGM (`P5`).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::training::FeatureBatch;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn write_pgm<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.pixels)?;
        Ok(())
    }
}

/// `(channels, height, width)` for one sample's feature shape. `[d]` is a
/// single-channel strip, `[H, W]` a single-channel map, `[C, H, W]` a map
/// with `C` channels.
pub fn layout(feature_shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *feature_shape {
        [d] => Ok((1, 1, d)),
        [h, w] => Ok((1, h, w)),
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::Unsupported(format!(
            "cannot render feature shape {feature_shape:?} as a heatmap"
        ))),
    }
}

/// One image per sample: the L2 norm across channels at every position,
/// min-max scaled to `0..=255` within the image. Flat images are black.
pub fn render(batch: &FeatureBatch) -> Result<Vec<GrayImage>> {
    let (c, h, w) = layout(batch.feature_shape())?;
    let positions = h * w;
    let mut images = Vec::with_capacity(batch.samples());
    for s in 0..batch.samples() {
        let sample = batch.sample(s);
        let norms: Vec<f64> = (0..positions)
            .map(|q| (0..c).map(|ch| sample[ch * positions + q].powi(2)).sum::<f64>().sqrt())
            .collect();
        let lo = norms.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = norms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let pixels = if hi > lo {
            norms
                .iter()
                .map(|v| (((v - lo) / (hi - lo)) * 255.0).round() as u8)
                .collect()
        } else {
            vec![0; positions]
        };
        images.push(GrayImage {
            width: w,
            height: h,
            pixels,
        });
    }
    Ok(images)
}

/// Writes `<prefix>_<index>.pgm` for every sample and returns the paths.
pub fn write_all(batch: &FeatureBatch, dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for (i, img) in render(batch)?.iter().enumerate() {
        let path = dir.join(format!("{prefix}_{i:04}.pgm"));
        let mut bytes = Vec::with_capacity(img.pixels.len() + 16);
        img.write_pgm(&mut bytes)?;
        fs::write(&path, bytes)?;
        paths.push(path);
    }
    Ok(paths)
}
