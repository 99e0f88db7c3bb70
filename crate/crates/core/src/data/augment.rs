use rand::Rng;
use serde::{Deserialize, Serialize};

use super::types::{ImageTensor, ModalityInput, PairedSample};
use crate::error::{Error, Result};

/// Stochastic image augmentation family: shifted crop with edge-replicated padding,
/// optional horizontal flip, brightness/contrast jitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Maximum crop shift in pixels along each axis.
    pub pad: usize,
    pub hflip_prob: f64,
    /// Additive brightness offset drawn from `[-brightness, brightness]`.
    pub brightness: f32,
    /// Contrast factor drawn from `[1 - contrast, 1 + contrast]`.
    pub contrast: f32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self::digits()
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        Self {
            pad: 0,
            hflip_prob: 0.0,
            brightness: 0.0,
            contrast: 0.0,
        }
    }

    /// Digit glyphs: no flips, flipping changes the class.
    pub fn digits() -> Self {
        Self {
            pad: 2,
            hflip_prob: 0.0,
            brightness: 0.1,
            contrast: 0.2,
        }
    }

    pub fn lesions() -> Self {
        Self {
            pad: 2,
            hflip_prob: 0.5,
            brightness: 0.1,
            contrast: 0.2,
        }
    }
}

/// Augment one image.
pub fn augment_image<R: Rng + ?Sized>(img: &ImageTensor, cfg: &AugmentConfig, rng: &mut R) -> ImageTensor {
    let pad = cfg.pad as i64;
    let (dy, dx) = if pad > 0 {
        (rng.gen_range(-pad..=pad), rng.gen_range(-pad..=pad))
    } else {
        (0, 0)
    };
    let flip = cfg.hflip_prob > 0.0 && rng.gen_bool(cfg.hflip_prob.min(1.0));
    let brightness = if cfg.brightness > 0.0 {
        rng.gen_range(-cfg.brightness..=cfg.brightness)
    } else {
        0.0
    };
    let contrast = if cfg.contrast > 0.0 {
        rng.gen_range(1.0 - cfg.contrast..=1.0 + cfg.contrast)
    } else {
        1.0
    };

    let (h, w) = (img.height as i64, img.width as i64);
    let mut out = ImageTensor::filled(img.channels, img.height, img.width, 0.0);
    for c in 0..img.channels {
        for y in 0..h {
            let sy = (y + dy).clamp(0, h - 1) as usize;
            for x in 0..w {
                let xx = if flip { w - 1 - x } else { x };
                let sx = (xx + dx).clamp(0, w - 1) as usize;
                *out.at_mut(c, y as usize, x as usize) = img.at(c, sy, sx);
            }
        }
    }
    let mean = out.data.iter().sum::<f32>() / out.data.len().max(1) as f32;
    let shift = mean * (1.0 - contrast) + brightness;
    for v in &mut out.data {
        *v = (*v * contrast + shift).clamp(0.0, 1.0);
    }
    out
}

/// Two independently augmented views of a sample whose modalities are all images.
pub fn stochastic_augment<R: Rng + ?Sized>(
    sample: &PairedSample,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<(PairedSample, PairedSample)> {
    let images: Vec<&ImageTensor> = sample
        .modalities
        .iter()
        .enumerate()
        .map(|(m, input)| match input {
            ModalityInput::Image(img) => Ok(img),
            ModalityInput::Tabular(_) => Err(Error::UnsupportedModality(format!(
                "modality {m} is tabular and cannot be augmented; use phase-2 aggregation fitting instead"
            ))),
        })
        .collect::<Result<_>>()?;
    let mut view = || PairedSample {
        modalities: images
            .iter()
            .map(|img| ModalityInput::Image(augment_image(img, cfg, rng)))
            .collect(),
        label: sample.label,
    };
    let a = view();
    let b = view();
    Ok((a, b))
}
