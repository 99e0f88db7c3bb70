use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Image stored channel-major (C x H x W), intensities in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "image buffer has {} values, expected {}x{}x{}",
                data.len(),
                channels,
                height,
                width
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f32 {
        &mut self.data[(c * self.height + y) * self.width + x]
    }
}

/// Encoded tabular row: vocabulary indices for categorical fields and
/// normalized scalars for numeric fields.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularRecord {
    pub categorical: Vec<usize>,
    pub numeric: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModalityInput {
    Image(ImageTensor),
    Tabular(TabularRecord),
}

impl ModalityInput {
    pub fn kind_name(&self) -> &'static str {
        match self {
            ModalityInput::Image(_) => "image",
            ModalityInput::Tabular(_) => "tabular",
        }
    }

    pub fn is_image(&self) -> bool {
        matches!(self, ModalityInput::Image(_))
    }
}

/// Static shape of one modality; what an encoder is built against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModalityShape {
    Image {
        channels: usize,
        height: usize,
        width: usize,
    },
    Tabular {
        /// Embedding table size per categorical field (vocabulary + reserved missing slot).
        vocab_sizes: Vec<usize>,
        numeric_fields: usize,
    },
}

impl ModalityShape {
    pub fn is_image(&self) -> bool {
        matches!(self, ModalityShape::Image { .. })
    }

    pub fn check(&self, input: &ModalityInput) -> Result<()> {
        match (self, input) {
            (
                ModalityShape::Image {
                    channels,
                    height,
                    width,
                },
                ModalityInput::Image(img),
            ) => {
                if img.channels == *channels && img.height == *height && img.width == *width {
                    Ok(())
                } else {
                    Err(Error::Shape(format!(
                        "image {}x{}x{} does not match encoder {}x{}x{}",
                        img.channels, img.height, img.width, channels, height, width
                    )))
                }
            }
            (
                ModalityShape::Tabular {
                    vocab_sizes,
                    numeric_fields,
                },
                ModalityInput::Tabular(row),
            ) => {
                if row.categorical.len() != vocab_sizes.len() || row.numeric.len() != *numeric_fields {
                    return Err(Error::Shape(format!(
                        "tabular row has {} categorical / {} numeric fields, encoder expects {} / {}",
                        row.categorical.len(),
                        row.numeric.len(),
                        vocab_sizes.len(),
                        numeric_fields
                    )));
                }
                for (i, (&idx, &size)) in row.categorical.iter().zip(vocab_sizes).enumerate() {
                    if idx >= size {
                        return Err(Error::Shape(format!(
                            "categorical field {i} index {idx} outside embedding table of size {size}"
                        )));
                    }
                }
                Ok(())
            }
            (shape, input) => Err(Error::Shape(format!(
                "encoder expects {} input, got {}",
                if shape.is_image() { "image" } else { "tabular" },
                input.kind_name()
            ))),
        }
    }
}

/// One multi-modal instance. Labels are zero-based class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub modalities: Vec<ModalityInput>,
    pub label: usize,
}

impl PairedSample {
    pub fn new(modalities: Vec<ModalityInput>, label: usize, num_classes: usize) -> Result<Self> {
        if modalities.is_empty() {
            return Err(Error::Invalid("a sample needs at least one modality".into()));
        }
        if label >= num_classes {
            return Err(Error::Invalid(format!("label {label} outside 0..{num_classes}")));
        }
        Ok(Self { modalities, label })
    }

    pub fn num_modalities(&self) -> usize {
        self.modalities.len()
    }

    /// Keep only the listed modalities, in the given order.
    pub fn project(&self, keep: &[usize]) -> PairedSample {
        PairedSample {
            modalities: keep.iter().map(|&m| self.modalities[m].clone()).collect(),
            label: self.label,
        }
    }
}

/// A single-modality labeled pool (e.g. the MNIST training images).
#[derive(Debug, Clone)]
pub struct LabeledSource {
    pub id: String,
    pub num_classes: usize,
    pub items: Vec<ModalityInput>,
    pub labels: Vec<usize>,
}

impl LabeledSource {
    pub fn new(
        id: impl Into<String>,
        num_classes: usize,
        items: Vec<ModalityInput>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let id = id.into();
        if items.len() != labels.len() {
            return Err(Error::Shape(format!(
                "source `{id}` has {} items but {} labels",
                items.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Invalid(format!(
                "source `{id}` has label {bad} outside 0..{num_classes}"
            )));
        }
        if id.contains(char::is_whitespace) || id.contains(':') {
            return Err(Error::Config(format!(
                "source id `{id}` may not contain whitespace or ':'"
            )));
        }
        Ok(Self {
            id,
            num_classes,
            items,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

/// One row of a paired dataset: which item of each source forms the sample.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct PairedRecord {
    pub label: usize,
    pub id: u64,
    pub refs: Vec<usize>,
}

/// Index over the modality sources. Records are kept sorted by (label, id).
#[derive(Debug, Clone)]
pub struct PairedDataset {
    pub sources: Vec<Arc<LabeledSource>>,
    pub num_classes: usize,
    pub records: Vec<PairedRecord>,
}

impl PairedDataset {
    pub fn new(sources: Vec<Arc<LabeledSource>>, num_classes: usize, mut records: Vec<PairedRecord>) -> Result<Self> {
        for r in &records {
            if r.refs.len() != sources.len() {
                return Err(Error::Shape(format!(
                    "record {} has {} refs for {} sources",
                    r.id,
                    r.refs.len(),
                    sources.len()
                )));
            }
            for (m, (&idx, src)) in r.refs.iter().zip(&sources).enumerate() {
                if idx >= src.len() {
                    return Err(Error::Invalid(format!(
                        "record {} references item {idx} of modality {m}, source has {}",
                        r.id,
                        src.len()
                    )));
                }
                if src.labels[idx] != r.label {
                    return Err(Error::Invalid(format!(
                        "record {} is labeled {} but source `{}` item {idx} is labeled {}",
                        r.id, r.label, src.id, src.labels[idx]
                    )));
                }
            }
        }
        records.sort();
        Ok(Self {
            sources,
            num_classes,
            records,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_modalities(&self) -> usize {
        self.sources.len()
    }

    pub fn sample(&self, i: usize) -> PairedSample {
        let r = &self.records[i];
        PairedSample {
            modalities: r
                .refs
                .iter()
                .zip(&self.sources)
                .map(|(&idx, src)| src.items[idx].clone())
                .collect(),
            label: r.label,
        }
    }

    pub fn samples(&self) -> Vec<PairedSample> {
        (0..self.len()).map(|i| self.sample(i)).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for r in &self.records {
            counts[r.label] += 1;
        }
        counts
    }

    pub fn with_records(&self, records: Vec<PairedRecord>) -> Result<Self> {
        Self::new(self.sources.clone(), self.num_classes, records)
    }
}

/// Empirical class distribution with the prior vector and its reversal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    pub counts: Vec<usize>,
    pub priors: Vec<f64>,
    pub reversed_priors: Vec<f64>,
}

/// Floor applied to priors before taking logs.
pub const PRIOR_FLOOR: f64 = 1e-8;

impl ClassDistribution {
    pub fn from_counts(counts: Vec<usize>) -> Result<Self> {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::Empty("class distribution of an empty dataset".into()));
        }
        let priors: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
        let reversed_priors = priors.iter().rev().copied().collect();
        Ok(Self {
            counts,
            priors,
            reversed_priors,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Priors floored at [`PRIOR_FLOOR`] and renormalized, with the matching reversal.
    pub fn smoothed(&self) -> (Vec<f64>, Vec<f64>) {
        let floored: Vec<f64> = self.priors.iter().map(|&p| p.max(PRIOR_FLOOR)).collect();
        let z: f64 = floored.iter().sum();
        let priors: Vec<f64> = floored.iter().map(|p| p / z).collect();
        let reversed = priors.iter().rev().copied().collect();
        (priors, reversed)
    }

    /// Largest over smallest nonzero class count.
    pub fn imbalance_ratio(&self) -> f64 {
        let max = self.counts.iter().copied().max().unwrap_or(0);
        let min = self.counts.iter().copied().filter(|&c| c > 0).min().unwrap_or(0);
        if min == 0 {
            f64::INFINITY
        } else {
            max as f64 / min as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Forward,
    Uniform,
    Backward,
}

impl SplitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitKind::Forward => "forward",
            SplitKind::Uniform => "uniform",
            SplitKind::Backward => "backward",
        }
    }
}

impl fmt::Display for SplitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(SplitKind::Forward),
            "uniform" => Ok(SplitKind::Uniform),
            "backward" => Ok(SplitKind::Backward),
            other => Err(Error::Config(format!(
                "unknown distribution kind `{other}` (expected forward, uniform or backward)"
            ))),
        }
    }
}

/// Target class-size profile: forward/backward exponential decay at ratio r, or uniform.
/// Serialized as its short id (`forward_50`, `uniform`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct DistributionSpec {
    pub kind: SplitKind,
    pub ratio: f64,
}

impl DistributionSpec {
    pub fn new(kind: SplitKind, ratio: f64) -> Result<Self> {
        let spec = Self { kind, ratio };
        spec.validate()?;
        Ok(spec)
    }

    pub fn uniform() -> Self {
        Self {
            kind: SplitKind::Uniform,
            ratio: 1.0,
        }
    }

    pub fn forward(ratio: f64) -> Result<Self> {
        Self::new(SplitKind::Forward, ratio)
    }

    pub fn backward(ratio: f64) -> Result<Self> {
        Self::new(SplitKind::Backward, ratio)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.ratio.is_finite() || self.ratio < 1.0 {
            return Err(Error::Config(format!(
                "imbalance ratio must be a finite number >= 1, got {}",
                self.ratio
            )));
        }
        match self.kind {
            SplitKind::Uniform if self.ratio != 1.0 => Err(Error::Config(format!(
                "uniform split must have ratio 1, got {}",
                self.ratio
            ))),
            SplitKind::Forward | SplitKind::Backward if self.ratio == 1.0 => Err(Error::Config(format!(
                "{} split with ratio 1 is the uniform split; use kind = uniform",
                self.kind
            ))),
            _ => Ok(()),
        }
    }

    /// Short identifier used in file names, e.g. `forward_50`.
    pub fn id(&self) -> String {
        match self.kind {
            SplitKind::Uniform => "uniform".to_string(),
            kind => format!("{}_{}", kind, self.ratio),
        }
    }
}

impl TryFrom<String> for DistributionSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<DistributionSpec> for String {
    fn from(spec: DistributionSpec) -> String {
        spec.id()
    }
}

impl fmt::Display for DistributionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            SplitKind::Uniform => f.write_str("uniform"),
            kind => write!(f, "{} {}", kind, self.ratio),
        }
    }
}

impl FromStr for DistributionSpec {
    type Err = Error;

    /// Accepts `uniform`, `forward_50`, `backward 10`, `forward:100`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "uniform" {
            return Ok(Self::uniform());
        }
        let (kind, ratio) = s
            .split_once(['_', ' ', ':'])
            .ok_or_else(|| Error::Config(format!("cannot parse distribution spec `{s}`")))?;
        let ratio: f64 = ratio
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad ratio in distribution spec `{s}`")))?;
        Self::new(kind.trim().parse()?, ratio)
    }
}
