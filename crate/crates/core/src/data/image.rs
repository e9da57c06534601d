//! Pixel normalization, bilinear resizing, and PNG directory ingestion.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Dataset, ImageRecord};

/// Rescale 8-bit pixel values into [0, 1]: x' = (x - 0) / (255 - 0).
///
/// The bounds are the fixed 8-bit range, not the per-image min/max.
pub fn normalize_pixels(raw: &[i64], id: &str) -> Result<Vec<f64>> {
    for (i, &v) in raw.iter().enumerate() {
        if !(0..=255).contains(&v) {
            return Err(Error::Data(format!(
                "sample '{id}': pixel {i} value {v} outside [0, 255]"
            )));
        }
    }
    Ok(raw.iter().map(|&v| v as f64 / 255.0).collect())
}

/// Bilinear resize of a (C, H, W) image to exactly `(target_h, target_w)`,
/// align-corners convention: source position = target position * (src-1)/(dst-1).
pub fn resize_bilinear(pixels: &Tensor, target_h: usize, target_w: usize) -> Result<Tensor> {
    if pixels.rank() != 3 {
        return Err(Error::Dimension(format!(
            "resize expects (C, H, W), got {:?}",
            pixels.shape()
        )));
    }
    if target_h == 0 || target_w == 0 {
        return Err(Error::Config("resize target must be at least 1x1".into()));
    }
    let (c, h, w) = (pixels.shape()[0], pixels.shape()[1], pixels.shape()[2]);
    if h == target_h && w == target_w {
        return Ok(pixels.clone());
    }
    let scale = |src: usize, dst: usize| -> f64 {
        if dst > 1 {
            (src - 1) as f64 / (dst - 1) as f64
        } else {
            0.0
        }
    };
    let sy = scale(h, target_h);
    let sx = scale(w, target_w);
    let xs = pixels.values();
    let mut out = vec![0.0; c * target_h * target_w];
    for ci in 0..c {
        let base = ci * h * w;
        for ty in 0..target_h {
            let fy = ty as f64 * sy;
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let wy = fy - y0 as f64;
            for tx in 0..target_w {
                let fx = tx as f64 * sx;
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let wx = fx - x0 as f64;
                let v00 = xs[base + y0 * w + x0];
                let v01 = xs[base + y0 * w + x1];
                let v10 = xs[base + y1 * w + x0];
                let v11 = xs[base + y1 * w + x1];
                let top = v00 * (1.0 - wx) + v01 * wx;
                let bottom = v10 * (1.0 - wx) + v11 * wx;
                out[(ci * target_h + ty) * target_w + tx] = top * (1.0 - wy) + bottom * wy;
            }
        }
    }
    Tensor::new(vec![c, target_h, target_w], out)
}

pub fn resize_record(
    record: &ImageRecord,
    target_h: usize,
    target_w: usize,
) -> Result<ImageRecord> {
    let pixels = resize_bilinear(record.pixels()?, target_h, target_w)?;
    Ok(ImageRecord {
        pixels: Some(pixels),
        ..record.clone()
    })
}

/// Decode one 8-bit grayscale or RGB PNG into a normalized (C, H, W) tensor.
///
/// `want_channels`, when given, coerces the channel count: RGB collapses to
/// luminance-free channel average for 1, grayscale replicates for 3.
pub fn load_png(path: &Path, want_channels: Option<usize>) -> Result<Tensor> {
    let id = path.display().to_string();
    let file = File::open(path)?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Data(format!("'{id}': {e}")))?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Data(format!("'{id}': {e}")))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Data(format!(
            "'{id}': only 8-bit PNGs are supported, got {:?}",
            info.bit_depth
        )));
    }
    let (h, w) = (info.height as usize, info.width as usize);
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1usize,
        png::ColorType::Rgb => 3,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgba => 4,
        other => {
            return Err(Error::Data(format!(
                "'{id}': unsupported color type {other:?}"
            )))
        }
    };
    let buf = &buf[..h * w * channels];

    // Drop an alpha channel if present.
    let color_channels = match channels {
        2 => 1,
        4 => 3,
        c => c,
    };
    let raw: Vec<i64> = (0..h * w)
        .flat_map(|px| (0..color_channels).map(move |c| buf[px * channels + c] as i64))
        .collect();
    let normalized = normalize_pixels(&raw, &id)?;

    // Interleaved (H, W, C) -> planar (C, H, W).
    let mut planar = vec![0.0; color_channels * h * w];
    for px in 0..h * w {
        for c in 0..color_channels {
            planar[c * h * w + px] = normalized[px * color_channels + c];
        }
    }
    let tensor = Tensor::new(vec![color_channels, h, w], planar)?;

    match want_channels {
        None => Ok(tensor),
        Some(want) if want == color_channels => Ok(tensor),
        Some(1) => {
            let vals = tensor.values();
            let mut gray = vec![0.0; h * w];
            for px in 0..h * w {
                let mut acc = 0.0;
                for c in 0..color_channels {
                    acc += vals[c * h * w + px];
                }
                gray[px] = acc / color_channels as f64;
            }
            Tensor::new(vec![1, h, w], gray)
        }
        Some(want) if color_channels == 1 => {
            let vals = tensor.values();
            let mut out = Vec::with_capacity(want * h * w);
            for _ in 0..want {
                out.extend_from_slice(vals);
            }
            Tensor::new(vec![want, h, w], out)
        }
        Some(want) => Err(Error::Data(format!(
            "'{id}': cannot coerce {color_channels}-channel image to {want} channels"
        ))),
    }
}

/// Ingest a `root/<class_name>/*.png` tree. Class index is the lexicographic
/// rank of the class directory name.
pub fn load_image_tree(root: &Path, want_channels: Option<usize>) -> Result<Dataset> {
    if !root.is_dir() {
        return Err(Error::Data(format!(
            "dataset directory '{}' does not exist",
            root.display()
        )));
    }
    let mut class_names: Vec<String> = Vec::new();
    for entry in std::fs::read_dir(root)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            class_names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    class_names.sort();
    if class_names.is_empty() {
        return Err(Error::Data(format!(
            "dataset directory '{}' contains no class subdirectories",
            root.display()
        )));
    }

    let mut records = Vec::new();
    for (label, class) in class_names.iter().enumerate() {
        let dir = root.join(class);
        let mut files: Vec<_> = std::fs::read_dir(&dir)?
            .collect::<std::io::Result<Vec<_>>>()?
            .into_iter()
            .map(|e| e.path())
            .filter(|p| {
                p.extension()
                    .map(|e| e.eq_ignore_ascii_case("png"))
                    .unwrap_or(false)
            })
            .collect();
        files.sort();
        for path in files {
            let pixels = load_png(&path, want_channels)?;
            let file_name = path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            records.push(ImageRecord {
                id: format!("{class}/{file_name}"),
                label,
                pixels: Some(pixels),
                origin: path.display().to_string(),
            });
        }
    }
    Ok(Dataset::new(records, class_names))
}
