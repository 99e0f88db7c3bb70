//! Declarative experiment configuration (TOML, with a JSON export).

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aggregation::{AdaptConfig, FitConfig, ThetaOptimizer};
use crate::data::synthetic::{GlyphConfig, LesionConfig};
use crate::data::DistributionSpec;
use crate::error::{Error, Result};
use crate::model::{EncoderSharing, ImageEncoderConfig, TabularEncoderConfig, TrainConfig};

/// How the aggregation weights are learned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Case {
    /// Test-time stability maximization on unlabeled test data (image modalities only).
    Case1,
    /// Cross-entropy fitting on the training set after expert training.
    Case2,
}

/// Model variant compared in the result tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Confidence-weighted fusion of all modalities.
    Proposed,
    /// All modalities, plain concatenation (confidence weights fixed at 1).
    TcpAblated,
    /// First modality only.
    SingleModality,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Proposed => "proposed",
            Variant::TcpAblated => "tcp_ablated",
            Variant::SingleModality => "single_modality",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proposed" => Ok(Variant::Proposed),
            "tcp_ablated" => Ok(Variant::TcpAblated),
            "single_modality" => Ok(Variant::SingleModality),
            other => Err(Error::Config(format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    /// Synthetic gray + colour digit glyphs (10 classes).
    Glyph {
        #[serde(default)]
        glyph: GlyphConfig,
        /// Balanced pool size per class for the training sources.
        train_per_class: usize,
        /// Balanced pool size per class for the test sources.
        test_per_class: usize,
        /// Largest class count of the long-tailed training split.
        head_count: usize,
        /// Largest class count of each test split.
        test_head_count: usize,
    },
    /// Synthetic lesion image + metadata task, split per class into train and test.
    Lesion {
        #[serde(default)]
        lesion: LesionConfig,
        train_fraction: f64,
    },
    /// MNIST (IDX files) paired with SVHN (MAT files) by label.
    MnistSvhn {
        mnist_train_images: PathBuf,
        mnist_train_labels: PathBuf,
        mnist_test_images: PathBuf,
        mnist_test_labels: PathBuf,
        svhn_train: PathBuf,
        svhn_test: PathBuf,
        head_count: usize,
        test_head_count: usize,
    },
}

impl DatasetConfig {
    pub fn num_classes(&self) -> usize {
        match self {
            DatasetConfig::Glyph { glyph, .. } => glyph.num_classes,
            DatasetConfig::Lesion { .. } => 2,
            DatasetConfig::MnistSvhn { .. } => 10,
        }
    }

    pub fn all_image(&self) -> bool {
        !matches!(self, DatasetConfig::Lesion { .. })
    }

    /// Whether train/test splits come from a grid of imbalance specs (as opposed to a
    /// single stratified split of a naturally imbalanced pool).
    pub fn uses_grid(&self) -> bool {
        !matches!(self, DatasetConfig::Lesion { .. })
    }
}

/// Experiment grid: every combination is run for every seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    /// Imbalance ratios of the forward long-tailed training splits.
    #[serde(default)]
    pub train_ratios: Vec<f64>,
    #[serde(default)]
    pub test_specs: Vec<DistributionSpec>,
    #[serde(default = "default_variants")]
    pub variants: Vec<Variant>,
}

fn default_variants() -> Vec<Variant> {
    vec![Variant::Proposed]
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            train_ratios: Vec::new(),
            test_specs: Vec::new(),
            variants: default_variants(),
        }
    }
}

/// Architecture settings; class count and modality shapes come from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSettings {
    pub image_encoder: ImageEncoderConfig,
    pub tabular_encoder: TabularEncoderConfig,
    pub expert_hidden: usize,
    pub encoder_sharing: EncoderSharing,
    pub head_init_std: f64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            image_encoder: ImageEncoderConfig::default(),
            tabular_encoder: TabularEncoderConfig::default(),
            expert_hidden: 128,
            encoder_sharing: EncoderSharing::Shared,
            head_init_std: 1e-3,
        }
    }
}

/// A complete experiment. Seeds in `train`, `adapt` and `phase2` are replaced by the
/// repetition seed at run time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub case: Case,
    pub seeds: Vec<u64>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub model: ModelSettings,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub adapt: AdaptConfig,
    #[serde(default = "FitConfig::phase2_default", deserialize_with = "phase2_from_partial")]
    pub phase2: FitConfig,
}

/// Missing phase-2 fields fall back to the phase-2 defaults, not the adaptation ones.
fn phase2_from_partial<'de, D: serde::Deserializer<'de>>(de: D) -> std::result::Result<FitConfig, D::Error> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Partial {
        epochs: Option<usize>,
        batch_size: Option<usize>,
        optimizer: Option<ThetaOptimizer>,
        seed: Option<u64>,
    }
    let p = Partial::deserialize(de)?;
    let d = FitConfig::phase2_default();
    Ok(FitConfig {
        epochs: p.epochs.unwrap_or(d.epochs),
        batch_size: p.batch_size.unwrap_or(d.batch_size),
        optimizer: p.optimizer.unwrap_or(d.optimizer),
        seed: p.seed.unwrap_or(d.seed),
    })
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, msg: String| Err(Error::Config(format!("{name}: {msg}")));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return field(
                "name",
                format!("`{}` must be non-empty and contain no path separators", self.name),
            );
        }
        if self.seeds.is_empty() {
            return field("seeds", "at least one seed is required".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return field("seeds", "seeds must be distinct".into());
        }
        if self.case == Case::Case1 && !self.dataset.all_image() {
            return field(
                "case",
                "case1 (test-time adaptation) requires every modality to be an image; use case2 for tabular data"
                    .into(),
            );
        }
        match &self.dataset {
            DatasetConfig::Glyph {
                glyph,
                train_per_class,
                test_per_class,
                head_count,
                test_head_count,
            } => {
                if !(2..=10).contains(&glyph.num_classes) {
                    return field(
                        "dataset.glyph.num_classes",
                        format!("{} outside 2..=10", glyph.num_classes),
                    );
                }
                if glyph.size < 4 {
                    return field(
                        "dataset.glyph.size",
                        format!("{} is below the minimum of 4", glyph.size),
                    );
                }
                if !(0.0..=1.0).contains(&glyph.corrupt_prob) {
                    return field(
                        "dataset.glyph.corrupt_prob",
                        format!("{} outside [0, 1]", glyph.corrupt_prob),
                    );
                }
                if head_count > train_per_class || *head_count == 0 {
                    return field(
                        "dataset.head_count",
                        format!("{head_count} must be in 1..=train_per_class ({train_per_class})"),
                    );
                }
                if test_head_count > test_per_class || *test_head_count == 0 {
                    return field(
                        "dataset.test_head_count",
                        format!("{test_head_count} must be in 1..=test_per_class ({test_per_class})"),
                    );
                }
            }
            DatasetConfig::Lesion { lesion, train_fraction } => {
                if !(*train_fraction > 0.0 && *train_fraction < 1.0) {
                    return field("dataset.train_fraction", format!("{train_fraction} outside (0, 1)"));
                }
                if lesion.benign == 0 || lesion.malignant == 0 {
                    return field("dataset.lesion", "both classes need at least one item".into());
                }
            }
            DatasetConfig::MnistSvhn {
                head_count,
                test_head_count,
                ..
            } => {
                if *head_count == 0 || *test_head_count == 0 {
                    return field("dataset.head_count", "head counts must be positive".into());
                }
            }
        }
        if self.dataset.uses_grid() {
            if self.grid.train_ratios.is_empty() {
                return field("grid.train_ratios", "at least one training ratio is required".into());
            }
            for &r in &self.grid.train_ratios {
                if !(r >= 1.0) || !r.is_finite() {
                    return field("grid.train_ratios", format!("{r} must be a finite ratio >= 1"));
                }
            }
            if self.grid.test_specs.is_empty() {
                return field("grid.test_specs", "at least one test split is required".into());
            }
        }
        if self.grid.variants.is_empty() {
            return field("grid.variants", "at least one variant is required".into());
        }
        if self.train.epochs == 0 || self.train.batch_size == 0 {
            return field("train", "epochs and batch_size must be positive".into());
        }
        if !(self.train.lambda >= 0.0) {
            return field("train.lambda", format!("{} must be >= 0", self.train.lambda));
        }
        if !(self.train.optimizer.lr > 0.0) {
            return field("train.optimizer.lr", format!("{} must be > 0", self.train.optimizer.lr));
        }
        for (name, fit) in [("adapt.fit", &self.adapt.fit), ("phase2", &self.phase2)] {
            if fit.batch_size == 0 || !(fit.optimizer.lr() > 0.0) {
                return field(name, "batch_size and optimizer.lr must be positive".into());
            }
            if let ThetaOptimizer::Sgd(sgd) = fit.optimizer {
                if !(0.0..1.0).contains(&sgd.momentum) {
                    return field(name, format!("momentum {} outside [0, 1)", sgd.momentum));
                }
            }
        }
        if self.model.expert_hidden == 0 || self.model.image_encoder.channels.contains(&0) {
            return field("model", "layer widths must be positive".into());
        }
        Ok(())
    }

    /// Copy with a single seed (command-line override).
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seeds: vec![seed],
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const GLYPH: &str = r#"
name = "glyph-demo"
case = "case1"
seeds = [1, 2]
out_dir = "runs/demo"

[dataset]
kind = "glyph"
train_per_class = 60
test_per_class = 30
head_count = 50
test_head_count = 20

[grid]
train_ratios = [10.0]
test_specs = ["forward_10", "uniform", "backward_10"]
variants = ["proposed", "tcp_ablated", "single_modality"]

[train]
epochs = 2
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::from_toml(GLYPH).unwrap();
        assert_eq!(cfg.grid.test_specs[2], DistributionSpec::backward(10.0).unwrap());
        assert_eq!(cfg.train.batch_size, 128);
        assert_eq!(cfg.train.optimizer.lr, 1e-4);
        assert_eq!(cfg.adapt.fit.optimizer.lr(), 1e-2);
        assert!(matches!(cfg.phase2.optimizer, ThetaOptimizer::Sgd(_)));
        let again = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(again, cfg);
        let json: ExperimentConfig = serde_json::from_str(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(json, cfg);
    }

    #[test]
    fn case1_rejects_tabular_datasets() {
        let text = r#"
name = "lesion"
case = "case1"
seeds = [1]
[dataset]
kind = "lesion"
train_fraction = 0.8
"#;
        let err = ExperimentConfig::from_toml(text).unwrap_err().to_string();
        assert!(err.contains("case"), "{err}");
        assert!(ExperimentConfig::from_toml(&text.replace("case1", "case2")).is_ok());
    }

    #[test]
    fn field_level_errors() {
        let bad = GLYPH.replace("head_count = 50", "head_count = 500");
        let err = ExperimentConfig::from_toml(&bad).unwrap_err().to_string();
        assert!(err.contains("dataset.head_count"), "{err}");
        let bad = GLYPH.replace("\"uniform\"", "\"sideways_3\"");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
        let bad = GLYPH.replace("seeds = [1, 2]", "seeds = [1, 1]");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
    }
}
