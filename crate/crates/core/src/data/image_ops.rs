//! Pixel-level preprocessing on `[channels, height, width]` tensors, plus
//! PNG/PGM reading and writing.

use std::path::Path;

use image::{DynamicImage, GrayImage, Luma};

use crate::error::{Error, Result};
use crate::tensor::{Shape2D, Tensor};

/// BT.601 luma weights for R, G, B.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

fn plane_of(image: &Tensor) -> Result<(usize, Shape2D)> {
    match image.shape() {
        &[c, h, w] => Ok((c, Shape2D::new(h, w))),
        s => Err(Error::InvalidShape {
            shape: s.to_vec(),
            reason: "image must be [channels, height, width]".into(),
        }),
    }
}

/// `Y = 0.299 R + 0.587 G + 0.114 B`, in whatever scale the input uses.
pub fn grayscale(rgb: &Tensor) -> Result<Tensor> {
    let (channels, plane) = plane_of(rgb)?;
    if channels != 3 {
        return Err(Error::InvalidShape {
            shape: rgb.shape().to_vec(),
            reason: format!("grayscale expects 3 channels, got {channels}"),
        });
    }
    let n = plane.area();
    let d = rgb.data();
    let gray = (0..n)
        .map(|i| LUMA_WEIGHTS[0] * d[i] + LUMA_WEIGHTS[1] * d[n + i] + LUMA_WEIGHTS[2] * d[2 * n + i])
        .collect();
    Tensor::new(vec![1, plane.height, plane.width], gray)
}

/// Bilinear sample of one plane at fractional `(y, x)`; coordinates must lie
/// within `[0, h-1] × [0, w-1]`.
fn sample(plane: &[f64], shape: Shape2D, y: f64, x: f64) -> f64 {
    let y0 = (y.floor() as usize).min(shape.height - 1);
    let x0 = (x.floor() as usize).min(shape.width - 1);
    let y1 = (y0 + 1).min(shape.height - 1);
    let x1 = (x0 + 1).min(shape.width - 1);
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let at = |yy: usize, xx: usize| plane[yy * shape.width + xx];
    let top = at(y0, x0) + (at(y0, x1) - at(y0, x0)) * fx;
    let bottom = at(y1, x0) + (at(y1, x1) - at(y1, x0)) * fx;
    top + (bottom - top) * fy
}

/// Bilinear resize with pixel-centre alignment; source coordinates are
/// clamped to the image so outputs stay within the source range.
pub fn resize_bilinear(image: &Tensor, target: Shape2D) -> Result<Tensor> {
    let (channels, src) = plane_of(image)?;
    if target.height == 0 || target.width == 0 {
        return Err(Error::Geometry(format!("degenerate resize target {target}")));
    }
    let sy = src.height as f64 / target.height as f64;
    let sx = src.width as f64 / target.width as f64;
    let max_y = (src.height - 1) as f64;
    let max_x = (src.width - 1) as f64;
    let mut out = Vec::with_capacity(channels * target.area());
    for c in 0..channels {
        let plane = &image.data()[c * src.area()..(c + 1) * src.area()];
        for y in 0..target.height {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, max_y);
            for x in 0..target.width {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, max_x);
                out.push(sample(plane, src, fy, fx));
            }
        }
    }
    Tensor::new(vec![channels, target.height, target.width], out)
}

/// Rotate counter-clockwise (as displayed, rows running downwards) by
/// `degrees` about the image centre. Pixels whose source falls outside the
/// image take the channel's mean intensity.
pub fn rotate(image: &Tensor, degrees: f64) -> Result<Tensor> {
    let (channels, shape) = plane_of(image)?;
    if !degrees.is_finite() {
        return Err(Error::Config(format!("rotation angle must be finite, got {degrees}")));
    }
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cy = (shape.height as f64 - 1.0) / 2.0;
    let cx = (shape.width as f64 - 1.0) / 2.0;
    let max_y = (shape.height - 1) as f64;
    let max_x = (shape.width - 1) as f64;
    let mut out = Vec::with_capacity(image.len());
    for c in 0..channels {
        let plane = &image.data()[c * shape.area()..(c + 1) * shape.area()];
        let mean = plane.iter().sum::<f64>() / plane.len() as f64;
        for y in 0..shape.height {
            let dy = y as f64 - cy;
            for x in 0..shape.width {
                let dx = x as f64 - cx;
                let src_x = cx + cos * dx - sin * dy;
                let src_y = cy + sin * dx + cos * dy;
                let inside = (0.0..=max_x).contains(&src_x) && (0.0..=max_y).contains(&src_y);
                out.push(if inside { sample(plane, shape, src_y, src_x) } else { mean });
            }
        }
    }
    Tensor::new(image.shape().to_vec(), out)
}

/// Read a PNG or PNM file as `[1, h, w]` (grayscale sources) or `[3, h, w]`
/// (colour sources) with values in `[0, 1]`. Alpha is discarded.
pub fn read_image(path: &Path) -> Result<Tensor> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let color = img.color();
    let deep = color.bits_per_pixel() / color.channel_count() as u16 > 8;
    if color.has_color() {
        let mut data = vec![0.0; 3 * w * h];
        let mut fill = |i: usize, px: [f64; 3]| {
            for c in 0..3 {
                data[c * w * h + i] = px[c];
            }
        };
        if deep {
            for (i, p) in img.to_rgb16().pixels().enumerate() {
                fill(i, p.0.map(|v| v as f64 / 65535.0));
            }
        } else {
            for (i, p) in img.to_rgb8().pixels().enumerate() {
                fill(i, p.0.map(|v| v as f64 / 255.0));
            }
        }
        Tensor::new(vec![3, h, w], data)
    } else if deep {
        let data = img.to_luma16().pixels().map(|p| p.0[0] as f64 / 65535.0).collect();
        Tensor::new(vec![1, h, w], data)
    } else {
        let data = img.to_luma8().pixels().map(|p| p.0[0] as f64 / 255.0).collect();
        Tensor::new(vec![1, h, w], data)
    }
}

/// Quantise a `[0, 1]` intensity to the nearest 8-bit level.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Write a `[1, h, w]` tensor in `[0, 1]` as an 8-bit grayscale PNG.
pub fn write_gray_png(image: &Tensor, path: &Path) -> Result<()> {
    let (channels, shape) = plane_of(image)?;
    if channels != 1 {
        return Err(Error::InvalidShape {
            shape: image.shape().to_vec(),
            reason: "only single-channel images can be written".into(),
        });
    }
    let mut buf = GrayImage::new(shape.width as u32, shape.height as u32);
    for (i, &v) in image.data().iter().enumerate() {
        buf.put_pixel((i % shape.width) as u32, (i / shape.width) as u32, Luma([quantize(v)]));
    }
    DynamicImage::ImageLuma8(buf)
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}
