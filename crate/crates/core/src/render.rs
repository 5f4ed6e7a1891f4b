//! Slice figures: grayscale magnitude PNGs and signed difference maps on a
//! blue-white-red ramp.

use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};

use crate::volume::{normalize, ImageVolume};
use crate::{Error, Result};

/// Color range for reconstructions compared against ground truth.
pub const DIFF_RANGE_DEFAULT: f64 = 0.02;
/// Wider range for projection comparisons.
pub const DIFF_RANGE_WIDE: f64 = 0.1;

/// `-range` maps to blue, 0 to white, `+range` to red; values beyond the
/// range saturate.
pub fn diverging(v: f64, range: f64) -> [u8; 3] {
    let t = (v / range).clamp(-1.0, 1.0);
    let fade = |x: f64| (255.0 * (1.0 - x.abs())).round() as u8;
    if t >= 0.0 {
        [255, fade(t), fade(t)]
    } else {
        [fade(t), fade(t), 255]
    }
}

pub fn gray_image(plane: &[f64], rows: usize, cols: usize) -> GrayImage {
    GrayImage::from_fn(cols as u32, rows as u32, |x, y| {
        let v = plane[y as usize * cols + x as usize].clamp(0.0, 1.0);
        Luma([(v * 255.0).round() as u8])
    })
}

pub fn diff_image(diff: &[f64], rows: usize, cols: usize, range: f64) -> RgbImage {
    RgbImage::from_fn(cols as u32, rows as u32, |x, y| {
        Rgb(diverging(diff[y as usize * cols + x as usize], range))
    })
}

/// `|recon| - |gt|` after normalizing each by its maximum, clipped to
/// `[-range, range]`.
pub fn clipped_difference(gt: &ImageVolume, recon: &ImageVolume, range: f64) -> Result<Vec<f64>> {
    gt.check_same_shape(recon)?;
    let g = normalize(gt).modulus();
    let r = normalize(recon).modulus();
    Ok(r.iter().zip(&g).map(|(a, b)| (a - b).clamp(-range, range)).collect())
}

fn save(path: &Path, img: impl FnOnce(&Path) -> image::ImageResult<()>) -> Result<()> {
    img(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e.to_string()),
    })
}

/// Writes `<prefix>_sNNN.png` for every axial slice and, with ground truth,
/// `<prefix>_diff_sNNN.png`. Returns the written paths.
pub fn render_volume(
    recon: &ImageVolume,
    gt: Option<&ImageVolume>,
    out_dir: &Path,
    prefix: &str,
    diff_range: f64,
) -> Result<Vec<PathBuf>> {
    if !(diff_range > 0.0) {
        return Err(Error::Config(format!("diff range must be positive, got {diff_range}")));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let n = recon.n();
    let mag = normalize(recon).modulus();
    let diff = gt.map(|g| clipped_difference(g, recon, diff_range)).transpose()?;
    let mut written = Vec::new();
    for s in 0..recon.slices() {
        let range = s * n * n..(s + 1) * n * n;
        let p = out_dir.join(format!("{prefix}_s{s:03}.png"));
        save(&p, |p| gray_image(&mag[range.clone()], n, n).save(p))?;
        written.push(p);
        if let Some(d) = &diff {
            let p = out_dir.join(format!("{prefix}_diff_s{s:03}.png"));
            save(&p, |p| diff_image(&d[range], n, n, diff_range).save(p))?;
            written.push(p);
        }
    }
    Ok(written)
}
