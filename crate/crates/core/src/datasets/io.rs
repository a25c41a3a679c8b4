//! Conversions between 8-bit images and `[-1, 1]` latent tensors.

use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::{LatentTensor, Shape};

pub fn to_unit(v: u8) -> f32 {
    v as f32 / 127.5 - 1.0
}

pub fn from_unit(v: f32) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// Encodes a 1- or 3-channel tensor with values in `[-1, 1]`.
pub fn tensor_to_image(t: &LatentTensor) -> Result<DynamicImage> {
    let s = t.shape();
    let (w, h) = (s.width as u32, s.height as u32);
    match s.channels {
        1 => Ok(DynamicImage::ImageLuma8(GrayImage::from_fn(w, h, |x, y| {
            image::Luma([from_unit(t.get(0, y as usize, x as usize))])
        }))),
        3 => Ok(DynamicImage::ImageRgb8(RgbImage::from_fn(w, h, |x, y| {
            image::Rgb([0, 1, 2].map(|c| from_unit(t.get(c, y as usize, x as usize))))
        }))),
        c => Err(Error::invalid(format!("cannot encode a {c}-channel tensor as an image"))),
    }
}

/// Decodes an image into `channels` (1 or 3) planes in `[-1, 1]`.
pub fn image_to_tensor(img: &DynamicImage, channels: usize) -> Result<LatentTensor> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    match channels {
        1 => {
            let g = img.to_luma8();
            Ok(LatentTensor::from_fn(Shape::new(1, h, w), |_, y, x| {
                to_unit(g.get_pixel(x as u32, y as u32)[0])
            }))
        }
        3 => {
            let rgb = img.to_rgb8();
            Ok(LatentTensor::from_fn(Shape::new(3, h, w), |c, y, x| {
                to_unit(rgb.get_pixel(x as u32, y as u32)[c])
            }))
        }
        c => Err(Error::invalid(format!("cannot decode into {c} channels"))),
    }
}

pub fn save_tensor_png(t: &LatentTensor, path: &Path) -> Result<()> {
    tensor_to_image(t)?.save(path)?;
    Ok(())
}

pub fn load_tensor_png(path: &Path, channels: usize) -> Result<LatentTensor> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) if io.kind() == std::io::ErrorKind::NotFound => {
            Error::MissingArtifact(path.to_path_buf())
        }
        other => other.into(),
    })?;
    image_to_tensor(&img, channels)
}

/// Tiles equally sized tensors into a grid image, `cols` per row.
pub fn grid(tiles: &[LatentTensor], cols: usize) -> Result<LatentTensor> {
    let first = tiles.first().ok_or(Error::Empty("grid tiles"))?;
    let s = first.shape();
    let cols = cols.clamp(1, tiles.len());
    let rows = tiles.len().div_ceil(cols);
    let mut out = LatentTensor::full(Shape::new(s.channels, rows * s.height, cols * s.width), -1.0);
    for (i, t) in tiles.iter().enumerate() {
        t.ensure_shape(s)?;
        let (oy, ox) = ((i / cols) * s.height, (i % cols) * s.width);
        for c in 0..s.channels {
            for y in 0..s.height {
                for x in 0..s.width {
                    out.set(c, oy + y, ox + x, t.get(c, y, x));
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_is_quantised_to_one_level() {
        let dir = tempfile::tempdir().unwrap();
        let t = LatentTensor::from_fn(Shape::new(3, 4, 5), |c, y, x| ((c + y * 5 + x) as f32 / 30.0) * 2.0 - 1.0);
        let p = dir.path().join("t.png");
        save_tensor_png(&t, &p).unwrap();
        let back = load_tensor_png(&p, 3).unwrap();
        assert!(back.max_abs_diff(&t).unwrap() <= 1.0 / 127.5);
        assert!(matches!(
            load_tensor_png(&dir.path().join("nope.png"), 1),
            Err(Error::MissingArtifact(_))
        ));
    }

    #[test]
    fn grid_layout() {
        let tiles: Vec<_> = (0..3).map(|i| LatentTensor::full(Shape::new(1, 2, 2), i as f32 / 4.0)).collect();
        let g = grid(&tiles, 2).unwrap();
        assert_eq!(g.shape(), Shape::new(1, 4, 4));
        assert_eq!(g.get(0, 0, 2), 0.25);
        assert_eq!(g.get(0, 2, 0), 0.5);
        assert_eq!(g.get(0, 3, 3), -1.0);
    }
}
