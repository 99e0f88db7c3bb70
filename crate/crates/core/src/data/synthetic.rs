//! Procedural stand-ins for the benchmark sources.
//!
//! * Two digit-glyph modalities: a grayscale handwriting-like rendering and a
//!   colour house-number-like rendering with clutter. A fraction of items in each
//!   source is degraded (low contrast, heavy noise) so that per-sample modality
//!   informativeness varies.
//! * A binary lesion task pairing a colour lesion image with a three-field metadata
//!   record (sex, anatomic site, age) whose field distributions depend on the class.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tabular::{FieldSpec, FieldValue, MetadataRecord, TabularSchema};
use super::types::{ImageTensor, LabeledSource, ModalityInput};
use crate::error::{Error, Result};
use crate::rng;

// Seven-segment layout: a top, b top-right, c bottom-right, d bottom, e bottom-left,
// f top-left, g middle.
const SEGMENTS: [[u8; 7]; 10] = [
    [1, 1, 1, 1, 1, 1, 0],
    [0, 1, 1, 0, 0, 0, 0],
    [1, 1, 0, 1, 1, 0, 1],
    [1, 1, 1, 1, 0, 0, 1],
    [0, 1, 1, 0, 0, 1, 1],
    [1, 0, 1, 1, 0, 1, 1],
    [1, 0, 1, 1, 1, 1, 1],
    [1, 1, 1, 0, 0, 0, 0],
    [1, 1, 1, 1, 1, 1, 1],
    [1, 1, 1, 1, 0, 1, 1],
];

/// Endpoints of each segment in a unit box (x right, y down).
const SEGMENT_ENDS: [((f32, f32), (f32, f32)); 7] = [
    ((0.0, 0.0), (1.0, 0.0)),
    ((1.0, 0.0), (1.0, 0.5)),
    ((1.0, 0.5), (1.0, 1.0)),
    ((0.0, 1.0), (1.0, 1.0)),
    ((0.0, 0.5), (0.0, 1.0)),
    ((0.0, 0.0), (0.0, 0.5)),
    ((0.0, 0.5), (1.0, 0.5)),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlyphConfig {
    pub num_classes: usize,
    /// Side length of the square images.
    pub size: usize,
    /// Probability that an item is degraded.
    pub corrupt_prob: f64,
    /// Pixel noise standard deviation on clean items.
    pub noise: f32,
}

impl Default for GlyphConfig {
    fn default() -> Self {
        Self {
            num_classes: 10,
            size: 16,
            corrupt_prob: 0.3,
            noise: 0.15,
        }
    }
}

fn segment_distance(px: f32, py: f32, a: (f32, f32), b: (f32, f32)) -> f32 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

/// Stroke coverage map in [0, 1] for one glyph with random geometry.
fn glyph_mask<R: Rng + ?Sized>(digit: usize, size: usize, slant: f32, rng: &mut R) -> Vec<f32> {
    let s = size as f32;
    let w = s * rng.gen_range(0.36..0.5);
    let h = s * rng.gen_range(0.58..0.72);
    let x0 = (s - w) / 2.0 + rng.gen_range(-1.0..1.0);
    let y0 = (s - h) / 2.0 + rng.gen_range(-1.0..1.0);
    let thick = rng.gen_range(0.8..1.5) * s / 16.0;
    let shear = slant + rng.gen_range(-0.1..0.1);
    let jitter = 0.06;
    let mut segs = Vec::new();
    for (seg, &on) in SEGMENTS[digit % 10].iter().enumerate() {
        if on == 0 {
            continue;
        }
        let ((ax, ay), (bx, by)) = SEGMENT_ENDS[seg];
        let mut map = |x: f32, y: f32| {
            let x = x + rng.gen_range(-jitter..jitter);
            let y = y + rng.gen_range(-jitter..jitter);
            (x0 + x * w + shear * (0.5 - y) * h, y0 + y * h)
        };
        segs.push((map(ax, ay), map(bx, by)));
    }
    let mut mask = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
            let d = segs
                .iter()
                .map(|&(a, b)| segment_distance(px, py, a, b))
                .fold(f32::INFINITY, f32::min);
            mask[y * size + x] = (1.0 - (d - thick * 0.5).max(0.0) / 0.8).clamp(0.0, 1.0);
        }
    }
    mask
}

/// Random high-contrast bars that occlude a degraded item.
fn occluders<R: Rng + ?Sized>(size: usize, rng: &mut R) -> Vec<f32> {
    let mut out = vec![0.0; size * size];
    for _ in 0..rng.gen_range(3..6) {
        let long = rng.gen_range(size / 3..=size * 3 / 4);
        let thick = rng.gen_range(1..=3);
        let (w, h) = if rng.gen_bool(0.5) {
            (long, thick)
        } else {
            (thick, long)
        };
        let x0 = rng.gen_range(0..=size - w);
        let y0 = rng.gen_range(0..=size - h);
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                out[y * size + x] = 1.0;
            }
        }
    }
    out
}

/// Grayscale handwriting-like glyph.
pub fn render_gray_digit<R: Rng + ?Sized>(digit: usize, cfg: &GlyphConfig, rng: &mut R) -> ImageTensor {
    let corrupted = rng.gen_bool(cfg.corrupt_prob);
    let mask = glyph_mask(digit, cfg.size, 0.0, rng);
    let (ink, sigma) = if corrupted { (0.12, 0.35) } else { (1.0, cfg.noise) };
    let bars = if corrupted {
        occluders(cfg.size, rng)
    } else {
        vec![0.0; mask.len()]
    };
    let noise = Normal::new(0.0f32, sigma).unwrap();
    let data = mask
        .iter()
        .zip(&bars)
        .map(|(&m, &b)| ((m * ink).max(b) + noise.sample(rng)).clamp(0.0, 1.0))
        .collect();
    ImageTensor::new(1, cfg.size, cfg.size, data).unwrap()
}

/// Colour house-number-like glyph on a random background, with partial neighbour
/// glyphs at the borders.
pub fn render_color_digit<R: Rng + ?Sized>(digit: usize, cfg: &GlyphConfig, rng: &mut R) -> ImageTensor {
    let size = cfg.size;
    let corrupted = rng.gen_bool(cfg.corrupt_prob);
    let mask = glyph_mask(digit, size, 0.25, rng);
    let bg: [f32; 3] = [rng.gen(), rng.gen(), rng.gen()];
    // Foreground contrasted against the background luminance.
    let lum = (bg[0] + bg[1] + bg[2]) / 3.0;
    let base = if lum > 0.5 { 0.0 } else { 1.0 };
    let mut fg = [0.0f32; 3];
    for c in &mut fg {
        *c = (base + rng.gen_range(-0.25f32..0.25)).clamp(0.0, 1.0);
    }
    let neighbour = rng.gen_range(0..10);
    let side_mask = glyph_mask(neighbour, size, 0.25, rng);
    let offset = if rng.gen_bool(0.5) {
        size as isize * 5 / 8
    } else {
        -(size as isize * 5 / 8)
    };
    let (contrast, sigma) = if corrupted { (0.12, 0.3) } else { (1.0, cfg.noise) };
    let bars = if corrupted {
        occluders(size, rng)
    } else {
        vec![0.0; size * size]
    };
    let noise = Normal::new(0.0f32, sigma).unwrap();
    let mut img = ImageTensor::filled(3, size, size, 0.0);
    for y in 0..size {
        for x in 0..size {
            let m = mask[y * size + x];
            let sx = x as isize - offset;
            let side = if sx >= 0 && (sx as usize) < size {
                side_mask[y * size + sx as usize] * 0.8
            } else {
                0.0
            };
            let cover = m.max(side) * contrast;
            let bar = bars[y * size + x];
            for c in 0..3 {
                let v = bg[c] * (1.0 - cover) + fg[c] * cover;
                let v = v * (1.0 - bar) + fg[c] * bar + noise.sample(rng);
                *img.at_mut(c, y, x) = v.clamp(0.0, 1.0);
            }
        }
    }
    img
}

/// Balanced glyph source with `per_class` items per class.
pub fn glyph_source(id: &str, color: bool, per_class: usize, cfg: &GlyphConfig, seed: u64) -> Result<LabeledSource> {
    if cfg.num_classes == 0 || cfg.num_classes > 10 {
        return Err(Error::Config(format!(
            "glyph sources support 1..=10 classes, got {}",
            cfg.num_classes
        )));
    }
    let mut items = Vec::with_capacity(per_class * cfg.num_classes);
    let mut labels = Vec::with_capacity(per_class * cfg.num_classes);
    for class in 0..cfg.num_classes {
        let mut stream = rng::stream(seed, id, class as u64);
        for _ in 0..per_class {
            let img = if color {
                render_color_digit(class, cfg, &mut stream)
            } else {
                render_gray_digit(class, cfg, &mut stream)
            };
            items.push(ModalityInput::Image(img));
            labels.push(class);
        }
    }
    LabeledSource::new(id, cfg.num_classes, items, labels)
}

/// `[gray, color]` sources of one glyph pool.
pub type GlyphPair = Vec<Arc<LabeledSource>>;

/// Train and test source pairs for the glyph task.
pub fn glyph_sources(
    cfg: &GlyphConfig,
    train_per_class: usize,
    test_per_class: usize,
    seed: u64,
) -> Result<(GlyphPair, GlyphPair)> {
    let train = vec![
        Arc::new(glyph_source("glyph-gray-train", false, train_per_class, cfg, seed)?),
        Arc::new(glyph_source("glyph-color-train", true, train_per_class, cfg, seed)?),
    ];
    let test = vec![
        Arc::new(glyph_source("glyph-gray-test", false, test_per_class, cfg, seed)?),
        Arc::new(glyph_source("glyph-color-test", true, test_per_class, cfg, seed)?),
    ];
    Ok((train, test))
}

/// Binary lesion task: class 0 benign, class 1 malignant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LesionConfig {
    pub benign: usize,
    pub malignant: usize,
    pub size: usize,
    pub noise: f32,
    /// Probability that any single metadata field is missing.
    pub missing_prob: f64,
    /// Probability that a lesion looks like the other class (atypical nevi, banal melanomas).
    pub atypical_prob: f64,
}

impl Default for LesionConfig {
    fn default() -> Self {
        Self {
            benign: 1110,
            malignant: 20,
            size: 16,
            noise: 0.08,
            missing_prob: 0.03,
            atypical_prob: 0.05,
        }
    }
}

pub const ANATOMIC_SITES: [&str; 6] = [
    "head/neck",
    "upper extremity",
    "lower extremity",
    "torso",
    "palms/soles",
    "oral/genital",
];

pub fn lesion_schema() -> TabularSchema {
    TabularSchema::new(vec![
        FieldSpec::Categorical {
            name: "sex".into(),
            vocab: vec!["female".into(), "male".into()],
        },
        FieldSpec::Categorical {
            name: "anatom_site".into(),
            vocab: ANATOMIC_SITES.iter().map(|s| s.to_string()).collect(),
        },
        FieldSpec::Numeric {
            name: "age".into(),
            min: 0.0,
            max: 90.0,
        },
    ])
    .expect("static schema is valid")
}

/// Colour lesion on skin. Malignant lesions are larger, more irregular and variegated.
/// With probability `cfg.atypical_prob` the appearance follows the other class.
pub fn render_lesion<R: Rng + ?Sized>(malignant: bool, cfg: &LesionConfig, rng: &mut R) -> ImageTensor {
    let malignant = malignant != rng.gen_bool(cfg.atypical_prob);
    let size = cfg.size;
    let s = size as f32;
    let skin = [
        rng.gen_range(0.75f32..0.95),
        rng.gen_range(0.55f32..0.75),
        rng.gen_range(0.45f32..0.65),
    ];
    let (radius, irregular, variegation) = if malignant {
        (
            s * rng.gen_range(0.22..0.38),
            rng.gen_range(0.1..0.35),
            rng.gen_range(0.2..0.5),
        )
    } else {
        (
            s * rng.gen_range(0.15..0.3),
            rng.gen_range(0.0..0.15),
            rng.gen_range(0.0..0.25),
        )
    };
    let harmonics: Vec<(f32, f32, f32)> = (2..5)
        .map(|k| {
            (
                k as f32,
                rng.gen_range(0.0..std::f32::consts::TAU),
                rng.gen_range(0.0..irregular),
            )
        })
        .collect();
    let cx = s / 2.0 + rng.gen_range(-1.5..1.5);
    let cy = s / 2.0 + rng.gen_range(-1.5..1.5);
    let pigment = [
        rng.gen_range(0.3f32..0.5),
        rng.gen_range(0.18f32..0.3),
        rng.gen_range(0.1f32..0.22),
    ];
    let blotch = (cx + rng.gen_range(-2.0..2.0), cy + rng.gen_range(-2.0..2.0));
    let noise = Normal::new(0.0f32, cfg.noise).unwrap();
    let mut img = ImageTensor::filled(3, size, size, 0.0);
    for y in 0..size {
        for x in 0..size {
            let (dx, dy) = (x as f32 + 0.5 - cx, y as f32 + 0.5 - cy);
            let angle = dy.atan2(dx);
            let mut r = radius;
            for &(k, phase, amp) in &harmonics {
                r *= 1.0 + amp * (k * angle + phase).sin();
            }
            let dist = (dx * dx + dy * dy).sqrt();
            let inside = (1.0 - (dist - r).max(0.0) / 1.2).clamp(0.0, 1.0);
            let bd = ((x as f32 + 0.5 - blotch.0).powi(2) + (y as f32 + 0.5 - blotch.1).powi(2)).sqrt();
            let dark = variegation * (1.0 - bd / (r + 1.0)).max(0.0);
            let lesion = [
                (pigment[0] - dark).max(0.0),
                (pigment[1] - dark).max(0.0),
                (pigment[2] + 0.5 * dark).min(1.0),
            ];
            for c in 0..3 {
                let v = skin[c] * (1.0 - inside) + lesion[c] * inside + noise.sample(rng);
                *img.at_mut(c, y, x) = v.clamp(0.0, 1.0);
            }
        }
    }
    img
}

/// Raw metadata record with class-conditional field distributions.
pub fn lesion_metadata<R: Rng + ?Sized>(malignant: bool, cfg: &LesionConfig, rng: &mut R) -> MetadataRecord {
    let mut rec = MetadataRecord::new();
    let maybe = |rng: &mut R, v: FieldValue| {
        if rng.gen_bool(cfg.missing_prob) {
            FieldValue::Missing
        } else {
            v
        }
    };
    let p_male = if malignant { 0.62 } else { 0.48 };
    let sex = if rng.gen_bool(p_male) { "male" } else { "female" };
    let site_weights: [f64; 6] = if malignant {
        [0.22, 0.14, 0.12, 0.44, 0.02, 0.06]
    } else {
        [0.06, 0.16, 0.26, 0.46, 0.04, 0.02]
    };
    let site = rand::distributions::WeightedIndex::new(site_weights)
        .unwrap()
        .sample(rng);
    let age = if malignant {
        Normal::<f64>::new(62.0, 12.0).unwrap().sample(rng)
    } else {
        Normal::<f64>::new(44.0, 14.0).unwrap().sample(rng)
    };
    let sex_v = maybe(rng, FieldValue::Text(sex.into()));
    let site_v = maybe(rng, FieldValue::Text(ANATOMIC_SITES[site].into()));
    let age_v = maybe(rng, FieldValue::Number(f64::clamp(age.round(), 0.0, 90.0)));
    rec.insert("sex".into(), sex_v);
    rec.insert("anatom_site".into(), site_v);
    rec.insert("age".into(), age_v);
    rec
}

/// `[image, metadata]` sources with `cfg.benign` / `cfg.malignant` items per class.
pub fn lesion_sources(cfg: &LesionConfig, seed: u64) -> Result<Vec<Arc<LabeledSource>>> {
    let schema = lesion_schema();
    let mut images = Vec::new();
    let mut metas = Vec::new();
    let mut labels = Vec::new();
    for (class, count) in [(0usize, cfg.benign), (1, cfg.malignant)] {
        let mut img_rng = rng::stream(seed, "lesion-image", class as u64);
        let mut meta_rng = rng::stream(seed, "lesion-meta", class as u64);
        for _ in 0..count {
            images.push(ModalityInput::Image(render_lesion(class == 1, cfg, &mut img_rng)));
            metas.push(ModalityInput::Tabular(schema.encode(&lesion_metadata(
                class == 1,
                cfg,
                &mut meta_rng,
            ))?));
            labels.push(class);
        }
    }
    Ok(vec![
        Arc::new(LabeledSource::new("lesion-image", 2, images, labels.clone())?),
        Arc::new(LabeledSource::new("lesion-meta", 2, metas, labels)?),
    ])
}
