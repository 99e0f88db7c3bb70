//! End-to-end pipeline steps shared by the command-line tool, the examples and the
//! acceptance suite: build sources, draw splits, train, learn weights, evaluate.

use std::sync::Arc;

use crate::aggregation::{adapt_test_time, aggregate_with, phase2_fit, AdaptOutcome, AggregationWeights};
use crate::config::{Case, DatasetConfig, ExperimentConfig, Variant};
use crate::data::synthetic::{glyph_sources, lesion_schema, lesion_sources};
use crate::data::{
    class_priors, pair_sources, sources, stratified_split, subsample_longtailed, DatasetManifest, DistributionSpec,
    LabeledSource, ModalityInput, ModalityShape, PairedDataset, PairedSample,
};
use crate::error::{Error, Result};
use crate::metrics::{EvalReport, ResultRow};
use crate::model::{argmax, train_experts, ExpertBundle, FusionMode, ModelConfig, TrainConfig, TrainOutcome};

/// Split id used for the test part of a naturally imbalanced pool.
pub const MATCHED_SPLIT: &str = "matched";

/// Labeled single-modality pools for one repetition.
#[derive(Debug, Clone)]
pub struct DataSources {
    pub train: Vec<Arc<LabeledSource>>,
    /// Separate test pools; empty when train and test come from one stratified split.
    pub test: Vec<Arc<LabeledSource>>,
    pub shapes: Vec<ModalityShape>,
    pub num_classes: usize,
}

impl DataSources {
    pub fn all(&self) -> Vec<Arc<LabeledSource>> {
        self.train.iter().chain(&self.test).cloned().collect()
    }
}

fn image_shape(src: &LabeledSource) -> Result<ModalityShape> {
    match src.items.first() {
        Some(ModalityInput::Image(img)) => Ok(ModalityShape::Image {
            channels: img.channels,
            height: img.height,
            width: img.width,
        }),
        Some(ModalityInput::Tabular(_)) => Err(Error::Config(format!("source `{}` is not an image source", src.id))),
        None => Err(Error::Empty(format!("source `{}`", src.id))),
    }
}

pub fn build_sources(dataset: &DatasetConfig, seed: u64) -> Result<DataSources> {
    match dataset {
        DatasetConfig::Glyph {
            glyph,
            train_per_class,
            test_per_class,
            ..
        } => {
            let (train, test) = glyph_sources(glyph, *train_per_class, *test_per_class, seed)?;
            let shapes = train.iter().map(|s| image_shape(s)).collect::<Result<_>>()?;
            Ok(DataSources {
                train,
                test,
                shapes,
                num_classes: glyph.num_classes,
            })
        }
        DatasetConfig::Lesion { lesion, .. } => {
            let train = lesion_sources(lesion, seed)?;
            Ok(DataSources {
                shapes: vec![image_shape(&train[0])?, lesion_schema().shape()],
                train,
                test: Vec::new(),
                num_classes: 2,
            })
        }
        DatasetConfig::MnistSvhn {
            mnist_train_images,
            mnist_train_labels,
            mnist_test_images,
            mnist_test_labels,
            svhn_train,
            svhn_test,
            ..
        } => {
            let train = vec![
                Arc::new(sources::load_idx_source(
                    "mnist-train",
                    mnist_train_images,
                    mnist_train_labels,
                    10,
                )?),
                Arc::new(sources::load_svhn_source("svhn-train", svhn_train)?),
            ];
            let test = vec![
                Arc::new(sources::load_idx_source(
                    "mnist-test",
                    mnist_test_images,
                    mnist_test_labels,
                    10,
                )?),
                Arc::new(sources::load_svhn_source("svhn-test", svhn_test)?),
            ];
            let shapes = train.iter().map(|s| image_shape(s)).collect::<Result<_>>()?;
            Ok(DataSources {
                train,
                test,
                shapes,
                num_classes: 10,
            })
        }
    }
}

/// A named train or test split.
#[derive(Debug, Clone)]
pub struct Split {
    pub id: String,
    /// Imbalance ratio of the realized class counts.
    pub ratio: f64,
    pub manifest: DatasetManifest,
}

#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Vec<Split>,
    pub test: Vec<Split>,
}

pub fn train_split_id(ratio: f64) -> String {
    format!("ir{ratio}")
}

fn realized_ratio(ds: &PairedDataset) -> Result<f64> {
    Ok(class_priors(ds)?.imbalance_ratio())
}

fn make_split(id: String, ds: &PairedDataset, spec: DistributionSpec, seed: u64) -> Result<Split> {
    Ok(Split {
        id,
        ratio: realized_ratio(ds)?,
        manifest: DatasetManifest::from_dataset(ds, spec, seed),
    })
}

/// Draw every train and test split of the grid for one seed.
pub fn prepare_splits(cfg: &ExperimentConfig, sources: &DataSources, seed: u64) -> Result<PreparedData> {
    match &cfg.dataset {
        DatasetConfig::Lesion { train_fraction, .. } => {
            let pool = pair_sources(sources.train.clone(), seed)?;
            let (train, test) = stratified_split(&pool, *train_fraction, seed)?;
            let spec_of = |ds: &PairedDataset| -> Result<DistributionSpec> {
                let r = realized_ratio(ds)?;
                if r == 1.0 {
                    Ok(DistributionSpec::uniform())
                } else {
                    DistributionSpec::forward(r)
                }
            };
            let train_spec = spec_of(&train)?;
            let test_spec = spec_of(&test)?;
            Ok(PreparedData {
                train: vec![make_split(train_split_id(train_spec.ratio), &train, train_spec, seed)?],
                test: vec![make_split(MATCHED_SPLIT.into(), &test, test_spec, seed)?],
            })
        }
        DatasetConfig::Glyph {
            head_count,
            test_head_count,
            ..
        }
        | DatasetConfig::MnistSvhn {
            head_count,
            test_head_count,
            ..
        } => {
            let train_pool = pair_sources(sources.train.clone(), seed)?;
            let test_pool = pair_sources(sources.test.clone(), seed)?;
            let mut train = Vec::new();
            for &r in &cfg.grid.train_ratios {
                let spec = if r == 1.0 {
                    DistributionSpec::uniform()
                } else {
                    DistributionSpec::forward(r)?
                };
                let ds = subsample_longtailed(&train_pool, &spec, *head_count, seed)?;
                train.push(make_split(train_split_id(r), &ds, spec, seed)?);
            }
            let mut test = Vec::new();
            for spec in &cfg.grid.test_specs {
                let ds = subsample_longtailed(&test_pool, spec, *test_head_count, seed)?;
                test.push(make_split(spec.id(), &ds, *spec, seed)?);
            }
            Ok(PreparedData { train, test })
        }
    }
}

/// Modalities a variant sees.
pub fn variant_modalities(variant: Variant, num_modalities: usize) -> Vec<usize> {
    match variant {
        Variant::SingleModality => vec![0],
        _ => (0..num_modalities).collect(),
    }
}

pub fn variant_samples(ds: &PairedDataset, variant: Variant) -> Vec<PairedSample> {
    let keep = variant_modalities(variant, ds.num_modalities());
    ds.samples().iter().map(|s| s.project(&keep)).collect()
}

pub fn model_config(cfg: &ExperimentConfig, sources: &DataSources, variant: Variant, seed: u64) -> ModelConfig {
    let keep = variant_modalities(variant, sources.shapes.len());
    let shapes = keep.iter().map(|&m| sources.shapes[m].clone()).collect();
    let mut mc = ModelConfig::new(sources.num_classes, shapes);
    mc.image_encoder = cfg.model.image_encoder.clone();
    mc.tabular_encoder = cfg.model.tabular_encoder.clone();
    mc.expert_hidden = cfg.model.expert_hidden;
    mc.encoder_sharing = cfg.model.encoder_sharing;
    mc.head_init_std = cfg.model.head_init_std;
    mc.fusion = match variant {
        Variant::Proposed => FusionMode::Tcp,
        Variant::TcpAblated | Variant::SingleModality => FusionMode::Plain,
    };
    mc.seed = seed;
    mc
}

pub fn train_config(cfg: &ExperimentConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..cfg.train.clone()
    }
}

/// Train a fresh model of the given variant on a training split.
pub fn train_variant(
    cfg: &ExperimentConfig,
    sources: &DataSources,
    train: &PairedDataset,
    variant: Variant,
    seed: u64,
) -> Result<(ExpertBundle, TrainOutcome)> {
    let mut bundle = ExpertBundle::new(model_config(cfg, sources, variant, seed))?;
    let samples = variant_samples(train, variant);
    let dist = class_priors(train)?;
    let outcome = train_experts(&mut bundle, &samples, &dist, &train_config(cfg, seed), None)?;
    Ok((bundle, outcome))
}

/// Case-1 weights for one test split, or case-2 weights from the training split.
pub fn learn_weights(
    cfg: &ExperimentConfig,
    bundle: &ExpertBundle,
    variant: Variant,
    train: &PairedDataset,
    test: Option<&PairedDataset>,
    seed: u64,
) -> Result<AdaptOutcome> {
    match cfg.case {
        Case::Case1 => {
            let test = test.ok_or_else(|| Error::Config("case1 adaptation needs a test split".into()))?;
            let mut adapt = cfg.adapt.clone();
            adapt.fit.seed = seed;
            adapt_test_time(bundle, &variant_samples(test, variant), &adapt)
        }
        Case::Case2 => {
            let mut fit = cfg.phase2.clone();
            fit.seed = seed;
            phase2_fit(bundle, &variant_samples(train, variant), &fit)
        }
    }
}

/// Predictions of the weighted expert combination.
pub fn predict(bundle: &ExpertBundle, samples: &[PairedSample], weights: &AggregationWeights) -> Result<Vec<usize>> {
    let w = weights.w();
    samples
        .iter()
        .map(|s| Ok(argmax(&aggregate_with(&bundle.expert_logits(s)?, &w)?.combined)))
        .collect()
}

pub fn evaluate_split(
    bundle: &ExpertBundle,
    weights: &AggregationWeights,
    test: &PairedDataset,
    variant: Variant,
    split: &str,
    seed: u64,
) -> Result<EvalReport> {
    let samples = variant_samples(test, variant);
    let preds = predict(bundle, &samples, weights)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    EvalReport::compute(&preds, &labels, bundle.num_classes(), weights.w(), split, seed)
}

/// Everything one training run produced.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub seed: u64,
    pub variant: Variant,
    pub train_split: String,
    pub train_ratio: f64,
    pub trace: Vec<crate::model::EpochLosses>,
    /// Per test split: learned weights and evaluation.
    pub evaluations: Vec<(String, AdaptOutcome, EvalReport)>,
}

impl RunRecord {
    pub fn rows(&self) -> Vec<ResultRow> {
        self.evaluations
            .iter()
            .map(|(split, adapt, report)| {
                let w = adapt.weights().w();
                ResultRow {
                    model_variant: self.variant.to_string(),
                    train_ir: self.train_ratio,
                    test_spec: split.clone(),
                    seed: self.seed,
                    accuracy: report.accuracy,
                    macro_f1: report.macro_f1,
                    w1: w[0],
                    w2: w[1],
                    w3: w[2],
                }
            })
            .collect()
    }
}

/// Run the whole grid for one seed in memory.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<RunRecord>> {
    let sources = build_sources(&cfg.dataset, seed)?;
    let prepared = prepare_splits(cfg, &sources, seed)?;
    let all = sources.all();
    let tests = prepared
        .test
        .iter()
        .map(|s| Ok((s.id.clone(), s.manifest.to_dataset(&all)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut records = Vec::new();
    for split in &prepared.train {
        let train = split.manifest.to_dataset(&all)?;
        for &variant in &cfg.grid.variants {
            let (bundle, outcome) = train_variant(cfg, &sources, &train, variant, seed)?;
            let shared = match cfg.case {
                Case::Case2 => Some(learn_weights(cfg, &bundle, variant, &train, None, seed)?),
                Case::Case1 => None,
            };
            let mut evaluations = Vec::new();
            for (id, test) in &tests {
                let adapt = match &shared {
                    Some(a) => a.clone(),
                    None => learn_weights(cfg, &bundle, variant, &train, Some(test), seed)?,
                };
                let report = evaluate_split(&bundle, &adapt.weights(), test, variant, id, seed)?;
                evaluations.push((id.clone(), adapt, report));
            }
            records.push(RunRecord {
                seed,
                variant,
                train_split: split.id.clone(),
                train_ratio: split.manifest.spec.ratio,
                trace: outcome.trace,
                evaluations,
            });
        }
    }
    Ok(records)
}
