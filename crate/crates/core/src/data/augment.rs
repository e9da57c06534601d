//! Deterministic geometric augmentation: flips and 90-degree rotations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::ImageRecord;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentSpec {
    #[serde(default)]
    pub horizontal_flip: bool,
    #[serde(default)]
    pub vertical_flip: bool,
    /// Subset of {90, 180, 270} degrees (clockwise).
    #[serde(default)]
    pub rotations: Vec<u32>,
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<()> {
        let mut seen = Vec::new();
        for &r in &self.rotations {
            if !matches!(r, 90 | 180 | 270) {
                return Err(Error::Config(format!(
                    "rotation {r} is not one of 90, 180, 270"
                )));
            }
            if seen.contains(&r) {
                return Err(Error::Config(format!("rotation {r} listed twice")));
            }
            seen.push(r);
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        !self.horizontal_flip && !self.vertical_flip && self.rotations.is_empty()
    }

    /// Number of output images per input (original included).
    pub fn expansion_factor(&self) -> usize {
        1 + usize::from(self.horizontal_flip)
            + usize::from(self.vertical_flip)
            + self.rotations.len()
    }
}

/// Flip along the width axis.
pub fn hflip(pixels: &Tensor) -> Tensor {
    let (c, h, w) = dims(pixels);
    let xs = pixels.values();
    let mut out = vec![0.0; xs.len()];
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                out[(ci * h + y) * w + x] = xs[(ci * h + y) * w + (w - 1 - x)];
            }
        }
    }
    Tensor::new(pixels.shape().to_vec(), out).expect("shape")
}

/// Flip along the height axis.
pub fn vflip(pixels: &Tensor) -> Tensor {
    let (c, h, w) = dims(pixels);
    let xs = pixels.values();
    let mut out = vec![0.0; xs.len()];
    for ci in 0..c {
        for y in 0..h {
            let src = (ci * h + (h - 1 - y)) * w;
            let dst = (ci * h + y) * w;
            out[dst..dst + w].copy_from_slice(&xs[src..src + w]);
        }
    }
    Tensor::new(pixels.shape().to_vec(), out).expect("shape")
}

/// Rotate clockwise by a multiple of 90 degrees.
pub fn rotate(pixels: &Tensor, degrees: u32) -> Result<Tensor> {
    let (c, h, w) = dims(pixels);
    let xs = pixels.values();
    match degrees {
        90 => {
            // out (c, w, h): out[y][x] = in[h-1-x][y]
            let mut out = vec![0.0; xs.len()];
            for ci in 0..c {
                for y in 0..w {
                    for x in 0..h {
                        out[(ci * w + y) * h + x] = xs[(ci * h + (h - 1 - x)) * w + y];
                    }
                }
            }
            Tensor::new(vec![c, w, h], out)
        }
        180 => Ok(hflip(&vflip(pixels))),
        270 => {
            // out (c, w, h): out[y][x] = in[x][w-1-y]
            let mut out = vec![0.0; xs.len()];
            for ci in 0..c {
                for y in 0..w {
                    for x in 0..h {
                        out[(ci * w + y) * h + x] = xs[(ci * h + x) * w + (w - 1 - y)];
                    }
                }
            }
            Tensor::new(vec![c, w, h], out)
        }
        other => Err(Error::Config(format!(
            "rotation {other} is not one of 90, 180, 270"
        ))),
    }
}

fn dims(pixels: &Tensor) -> (usize, usize, usize) {
    let s = pixels.shape();
    (s[0], s[1], s[2])
}

/// Expand a batch with every enabled transform of every image. Labels are
/// copied and ids gain a deterministic suffix per transform.
pub fn augment_records(records: &[ImageRecord], spec: &AugmentSpec) -> Result<Vec<ImageRecord>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(records.len() * spec.expansion_factor());
    for record in records {
        out.push(record.clone());
        if spec.is_identity() {
            continue;
        }
        let pixels = record.pixels()?;
        let mut push = |suffix: &str, pixels: Tensor| {
            out.push(ImageRecord {
                id: format!("{}#{}", record.id, suffix),
                label: record.label,
                pixels: Some(pixels),
                origin: record.origin.clone(),
            });
        };
        if spec.horizontal_flip {
            push("hflip", hflip(pixels));
        }
        if spec.vertical_flip {
            push("vflip", vflip(pixels));
        }
        for &deg in &spec.rotations {
            push(&format!("rot{deg}"), rotate(pixels, deg)?);
        }
    }
    Ok(out)
}

/// Id suffixes produced by `augment_records`, in emission order.
pub fn transform_suffixes(spec: &AugmentSpec) -> Vec<String> {
    let mut out = Vec::new();
    if spec.horizontal_flip {
        out.push("hflip".to_string());
    }
    if spec.vertical_flip {
        out.push("vflip".to_string());
    }
    for &deg in &spec.rotations {
        out.push(format!("rot{deg}"));
    }
    out
}

/// Dataset containing every record plus every enabled transform of it.
///
/// Splitting still happens over the base records; training then draws the
/// transformed copies of its train ids from this universe, which keeps
/// augmentation on the train partition only.
pub fn augment_universe(dataset: &super::Dataset, spec: &AugmentSpec) -> Result<super::Dataset> {
    let records = augment_records(&dataset.records, spec)?;
    Ok(super::Dataset::new(records, dataset.class_names.clone()))
}

/// Expand base train ids with their transform ids (same scheme as
/// `augment_records`).
pub fn augmented_train_ids(train_ids: &[String], spec: &AugmentSpec) -> Vec<String> {
    let suffixes = transform_suffixes(spec);
    let mut out = Vec::with_capacity(train_ids.len() * (1 + suffixes.len()));
    for id in train_ids {
        out.push(id.clone());
        for s in &suffixes {
            out.push(format!("{id}#{s}"));
        }
    }
    out
}
