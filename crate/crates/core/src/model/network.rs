//! Modality encoders, the classifier module (per-modality classification and
//! confidence heads), confidence-weighted fusion and the three expert heads.
//!
//! ```text
//!  x^m ──encoder──► h^m ──┬─ cls head ──► p^m = softmax(.)
//!                         ├─ conf head ─► tcp_hat^m = sigmoid(.)
//!                         └─ tcp_hat^m · h^m ─┐
//!                                             ├─ concat ─► h ─► E1, E2, E3 ─► v1, v2, v3
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::encoder::{Encoder, EncoderCache, ImageEncoderConfig, TabularEncoderConfig};
use crate::data::{ModalityShape, PairedSample};
use crate::error::{Error, Result};
use crate::losses::{self, CategoricalProbs, Logits};
use crate::nn::layers::{relu_backward_inplace, relu_inplace, sigmoid, Init};
use crate::nn::{Dense, Grads, ParamStore};
use crate::rng;

pub const NUM_EXPERTS: usize = 3;

/// How per-modality features are weighted before concatenation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Scale each block by the modality's estimated true-class probability.
    Tcp,
    /// Plain concatenation (confidence weights fixed at 1).
    Plain,
}

/// Whether the experts share one encoder stack or each own one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderSharing {
    Shared,
    /// One encoder stack per expert; the classifier module reads the first expert's
    /// stack, and every expert is weighted by the same confidence estimates.
    PerExpert,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub modalities: Vec<ModalityShape>,
    #[serde(default)]
    pub image_encoder: ImageEncoderConfig,
    #[serde(default)]
    pub tabular_encoder: TabularEncoderConfig,
    #[serde(default = "default_expert_hidden")]
    pub expert_hidden: usize,
    #[serde(default = "default_fusion")]
    pub fusion: FusionMode,
    #[serde(default = "default_sharing")]
    pub encoder_sharing: EncoderSharing,
    /// Standard deviation of the normal initialization used for every head.
    #[serde(default = "default_head_std")]
    pub head_init_std: f64,
    /// Initialize the three expert heads from one stream (identical parameters).
    #[serde(default)]
    pub identical_expert_init: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_expert_hidden() -> usize {
    128
}
fn default_fusion() -> FusionMode {
    FusionMode::Tcp
}
fn default_sharing() -> EncoderSharing {
    EncoderSharing::Shared
}
fn default_head_std() -> f64 {
    1e-3
}

impl ModelConfig {
    pub fn new(num_classes: usize, modalities: Vec<ModalityShape>) -> Self {
        Self {
            num_classes,
            modalities,
            image_encoder: ImageEncoderConfig::default(),
            tabular_encoder: TabularEncoderConfig::default(),
            expert_hidden: default_expert_hidden(),
            fusion: default_fusion(),
            encoder_sharing: default_sharing(),
            head_init_std: default_head_std(),
            identical_expert_init: false,
            seed: 0,
        }
    }
}

/// Per-modality classification head and confidence head over the shared encoder output.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModule {
    pub cls_heads: Vec<Dense>,
    pub conf_heads: Vec<Dense>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertHead {
    pub hidden: Dense,
    pub output: Dense,
}

/// Per-modality predictions of the classifier module.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceOutputs {
    pub probs: Vec<CategoricalProbs>,
    pub tcp_hat: Vec<f64>,
}

/// All parameters and structure of the model.
#[derive(Debug, Clone)]
pub struct ExpertBundle {
    pub config: ModelConfig,
    pub params: ParamStore,
    /// `encoders[set][modality]`.
    encoders: Vec<Vec<Encoder>>,
    pub classifier: ClassifierModule,
    experts: Vec<ExpertHead>,
    feature_dims: Vec<usize>,
}

/// Everything a forward pass computes, kept for backward.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub encoder_caches: Vec<Vec<EncoderCache>>,
    pub cls_logits: Vec<Vec<f64>>,
    pub probs: Vec<Vec<f64>>,
    pub tcp_hat: Vec<f64>,
    /// Scale applied to each feature block (tcp_hat, or 1 for plain fusion).
    pub fusion_weights: Vec<f64>,
    pub fused: Vec<Vec<f64>>,
    pub hidden: Vec<Vec<f64>>,
    pub logits: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn features(&self, set: usize, modality: usize) -> &[f64] {
        self.encoder_caches[set][modality].output()
    }

    pub fn confidence_outputs(&self) -> ConfidenceOutputs {
        ConfidenceOutputs {
            probs: self
                .probs
                .iter()
                .map(|p| CategoricalProbs::new(p.clone()).expect("softmax output"))
                .collect(),
            tcp_hat: self.tcp_hat.clone(),
        }
    }

    pub fn expert_logits(&self) -> [Vec<f64>; NUM_EXPERTS] {
        [self.logits[0].clone(), self.logits[1].clone(), self.logits[2].clone()]
    }
}

/// Gradients of the training objective w.r.t. the network outputs of one sample.
#[derive(Debug, Clone)]
pub struct OutputGrads {
    pub expert_logits: Vec<Vec<f64>>,
    pub cls_logits: Vec<Vec<f64>>,
    pub tcp_hat: Vec<f64>,
}

/// Concatenate feature blocks, each scaled by its confidence weight.
pub fn fuse(features: &[&[f64]], weights: &[f64], widths: Option<&[usize]>) -> Result<Vec<f64>> {
    if features.len() != weights.len() {
        return Err(Error::Shape(format!(
            "{} feature blocks but {} confidence weights",
            features.len(),
            weights.len()
        )));
    }
    if let Some(widths) = widths {
        if widths.len() != features.len() {
            return Err(Error::Shape(format!(
                "{} feature blocks but {} configured widths",
                features.len(),
                widths.len()
            )));
        }
        for (m, (f, &w)) in features.iter().zip(widths).enumerate() {
            if f.len() != w {
                return Err(Error::Shape(format!(
                    "feature block {m} has width {}, expected {w}",
                    f.len()
                )));
            }
        }
    }
    Ok(features
        .iter()
        .zip(weights)
        .flat_map(|(f, &w)| f.iter().map(move |&x| w * x))
        .collect())
}

impl ExpertBundle {
    pub fn new(config: ModelConfig) -> Result<Self> {
        if config.modalities.is_empty() {
            return Err(Error::Config("model needs at least one modality".into()));
        }
        if config.num_classes < 2 {
            return Err(Error::Config("model needs at least two classes".into()));
        }
        let mut params = ParamStore::new();
        let sets = match config.encoder_sharing {
            EncoderSharing::Shared => 1,
            EncoderSharing::PerExpert => NUM_EXPERTS,
        };
        let mut encoders = Vec::with_capacity(sets);
        for set in 0..sets {
            let mut r = rng::stream(config.seed, "encoder", set as u64);
            let stack = config
                .modalities
                .iter()
                .enumerate()
                .map(|(m, shape)| {
                    Encoder::build(
                        &mut params,
                        &format!("encoder{set}.m{m}"),
                        shape,
                        &config.image_encoder,
                        &config.tabular_encoder,
                        &mut r,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            encoders.push(stack);
        }
        let feature_dims: Vec<usize> = encoders[0].iter().map(Encoder::out_dim).collect();
        let init = Init::Normal(config.head_init_std);
        let k = config.num_classes;

        let mut r = rng::stream(config.seed, "classifier", 0);
        let cls_heads = feature_dims
            .iter()
            .enumerate()
            .map(|(m, &f)| Dense::new(&mut params, &format!("classifier.m{m}.cls"), f, k, init, &mut r))
            .collect();
        let conf_heads = feature_dims
            .iter()
            .enumerate()
            .map(|(m, &f)| Dense::new(&mut params, &format!("classifier.m{m}.conf"), f, 1, init, &mut r))
            .collect();

        let fused_dim: usize = feature_dims.iter().sum();
        let experts = (0..NUM_EXPERTS)
            .map(|j| {
                let stream_index = if config.identical_expert_init { 0 } else { j as u64 };
                let mut r = rng::stream(config.seed, "expert", stream_index);
                ExpertHead {
                    hidden: Dense::new(
                        &mut params,
                        &format!("expert{j}.hidden"),
                        fused_dim,
                        config.expert_hidden,
                        init,
                        &mut r,
                    ),
                    output: Dense::new(
                        &mut params,
                        &format!("expert{j}.output"),
                        config.expert_hidden,
                        k,
                        init,
                        &mut r,
                    ),
                }
            })
            .collect();
        Ok(Self {
            config,
            params,
            encoders,
            classifier: ClassifierModule { cls_heads, conf_heads },
            experts,
            feature_dims,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn num_modalities(&self) -> usize {
        self.config.modalities.len()
    }

    pub fn feature_dims(&self) -> &[usize] {
        &self.feature_dims
    }

    fn encoder_set(&self, expert: usize) -> usize {
        match self.config.encoder_sharing {
            EncoderSharing::Shared => 0,
            EncoderSharing::PerExpert => expert,
        }
    }

    /// Hash of the expert heads and encoders (everything the aggregation step must not touch).
    pub fn expert_hash(&self) -> String {
        self.params.content_hash()
    }

    fn check_sample(&self, sample: &PairedSample) -> Result<()> {
        if sample.modalities.len() != self.num_modalities() {
            return Err(Error::Shape(format!(
                "sample has {} modalities, model expects {}",
                sample.modalities.len(),
                self.num_modalities()
            )));
        }
        Ok(())
    }

    fn classifier_forward(&self, features: &[f64], m: usize) -> (Vec<f64>, Vec<f64>, f64) {
        let logits = self.classifier.cls_heads[m].forward(&self.params, features);
        let probs = losses::softmax(&logits);
        let conf = sigmoid(self.classifier.conf_heads[m].forward(&self.params, features)[0]);
        (logits, probs, conf)
    }

    /// Run only the encoders and the classifier module.
    pub fn confidence_forward(&self, sample: &PairedSample) -> Result<ConfidenceOutputs> {
        self.check_sample(sample)?;
        let mut probs = Vec::new();
        let mut tcp_hat = Vec::new();
        for (m, (enc, input)) in self.encoders[0].iter().zip(&sample.modalities).enumerate() {
            let cache = enc.forward(&self.params, input)?;
            let (_, p, c) = self.classifier_forward(cache.output(), m);
            probs.push(CategoricalProbs::new(p).expect("softmax output"));
            tcp_hat.push(c);
        }
        Ok(ConfidenceOutputs { probs, tcp_hat })
    }

    /// Full forward pass keeping every activation.
    pub fn forward_trace(&self, sample: &PairedSample) -> Result<ForwardTrace> {
        self.check_sample(sample)?;
        let encoder_caches = self
            .encoders
            .iter()
            .map(|stack| {
                stack
                    .iter()
                    .zip(&sample.modalities)
                    .map(|(enc, input)| enc.forward(&self.params, input))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let m_count = self.num_modalities();
        let mut cls_logits = Vec::with_capacity(m_count);
        let mut probs = Vec::with_capacity(m_count);
        let mut tcp_hat = Vec::with_capacity(m_count);
        for (m, cache) in encoder_caches[0].iter().enumerate() {
            let (l, p, c) = self.classifier_forward(cache.output(), m);
            cls_logits.push(l);
            probs.push(p);
            tcp_hat.push(c);
        }
        let fusion_weights = match self.config.fusion {
            FusionMode::Tcp => tcp_hat.clone(),
            FusionMode::Plain => vec![1.0; m_count],
        };
        let mut fused_sets = Vec::with_capacity(encoder_caches.len());
        for caches in &encoder_caches {
            let feats: Vec<&[f64]> = caches.iter().map(EncoderCache::output).collect();
            fused_sets.push(fuse(&feats, &fusion_weights, Some(&self.feature_dims))?);
        }
        let mut hidden = Vec::with_capacity(NUM_EXPERTS);
        let mut logits = Vec::with_capacity(NUM_EXPERTS);
        for (j, head) in self.experts.iter().enumerate() {
            let fused = &fused_sets[self.encoder_set(j)];
            let mut h = head.hidden.forward(&self.params, fused);
            relu_inplace(&mut h);
            logits.push(head.output.forward(&self.params, &h));
            hidden.push(h);
        }
        Ok(ForwardTrace {
            encoder_caches,
            cls_logits,
            probs,
            tcp_hat,
            fusion_weights,
            fused: fused_sets,
            hidden,
            logits,
        })
    }

    /// Three expert logit vectors plus the classifier-module outputs.
    pub fn expert_forward(&self, sample: &PairedSample) -> Result<(Logits, Logits, Logits, ConfidenceOutputs)> {
        let t = self.forward_trace(sample)?;
        let conf = t.confidence_outputs();
        let mut it = t.logits.into_iter().map(Logits::new);
        Ok((it.next().unwrap()?, it.next().unwrap()?, it.next().unwrap()?, conf))
    }

    /// Expert logits only, for inference.
    pub fn expert_logits(&self, sample: &PairedSample) -> Result<[Vec<f64>; NUM_EXPERTS]> {
        Ok(self.forward_trace(sample)?.expert_logits())
    }

    /// Accumulate parameter gradients for one sample.
    pub fn backward(&self, trace: &ForwardTrace, out: &OutputGrads, grads: &mut Grads) {
        let p = &self.params;
        let m_count = self.num_modalities();
        let sets = trace.encoder_caches.len();
        let mut feat_grads: Vec<Vec<Vec<f64>>> = (0..sets)
            .map(|_| self.feature_dims.iter().map(|&d| vec![0.0; d]).collect())
            .collect();
        let mut weight_grads = vec![0.0; m_count];

        for (j, head) in self.experts.iter().enumerate() {
            let set = self.encoder_set(j);
            let mut gh = head.output.backward(p, &trace.hidden[j], &out.expert_logits[j], grads);
            relu_backward_inplace(&mut gh, &trace.hidden[j]);
            let gfused = head.hidden.backward(p, &trace.fused[set], &gh, grads);
            let mut offset = 0;
            for m in 0..m_count {
                let d = self.feature_dims[m];
                let block = &gfused[offset..offset + d];
                let feats = trace.features(set, m);
                let w = trace.fusion_weights[m];
                for ((g, &b), &f) in feat_grads[set][m].iter_mut().zip(block).zip(feats) {
                    *g += w * b;
                    weight_grads[m] += b * f;
                }
                offset += d;
            }
        }

        for m in 0..m_count {
            let feats = trace.features(0, m);
            let mut d_conf = out.tcp_hat[m];
            if self.config.fusion == FusionMode::Tcp {
                d_conf += weight_grads[m];
            }
            let c = trace.tcp_hat[m];
            let d_pre = d_conf * c * (1.0 - c);
            let g1 = self.classifier.conf_heads[m].backward(p, feats, &[d_pre], grads);
            let g2 = self.classifier.cls_heads[m].backward(p, feats, &out.cls_logits[m], grads);
            for ((g, a), b) in feat_grads[0][m].iter_mut().zip(g1).zip(g2) {
                *g += a + b;
            }
        }

        for (set, stack) in self.encoders.iter().enumerate() {
            for (m, enc) in stack.iter().enumerate() {
                enc.backward(p, &trace.encoder_caches[set][m], &feat_grads[set][m], grads);
            }
        }
    }

    /// Structural rebuild, then parameter values copied from `params`.
    pub fn with_params(config: ModelConfig, params: &ParamStore) -> Result<Self> {
        let mut bundle = Self::new(config)?;
        bundle.params.load_values(params)?;
        Ok(bundle)
    }

    /// Random sample that fits the model's input shapes (used by tests and examples).
    pub fn random_sample<R: Rng + ?Sized>(&self, label: usize, rng: &mut R) -> PairedSample {
        use crate::data::{ImageTensor, ModalityInput, TabularRecord};
        let modalities = self
            .config
            .modalities
            .iter()
            .map(|shape| match shape {
                ModalityShape::Image {
                    channels,
                    height,
                    width,
                } => ModalityInput::Image(ImageTensor {
                    channels: *channels,
                    height: *height,
                    width: *width,
                    data: (0..channels * height * width).map(|_| rng.gen::<f32>()).collect(),
                }),
                ModalityShape::Tabular {
                    vocab_sizes,
                    numeric_fields,
                } => ModalityInput::Tabular(TabularRecord {
                    categorical: vocab_sizes.iter().map(|&v| rng.gen_range(0..v)).collect(),
                    numeric: (0..*numeric_fields).map(|_| rng.gen::<f32>()).collect(),
                }),
            })
            .collect();
        PairedSample { modalities, label }
    }
}
