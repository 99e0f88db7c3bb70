//! Per-modality feature extractors.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ModalityInput, ModalityShape};
use crate::error::{Error, Result};
use crate::nn::layers::{maxpool2, maxpool2_backward, relu_backward_inplace, relu_inplace, Init};
use crate::nn::{Conv2d, Dense, Embedding, Grads, ParamStore};

/// Two conv(3x3)+ReLU+maxpool(2) stages, flatten, then `fc` dense+ReLU layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImageEncoderConfig {
    pub channels: [usize; 2],
    pub fc: Vec<usize>,
}

impl Default for ImageEncoderConfig {
    fn default() -> Self {
        Self {
            channels: [8, 16],
            fc: vec![64, 64],
        }
    }
}

/// Embedding per categorical field, concatenated with numeric fields, then dense+ReLU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TabularEncoderConfig {
    pub embed_dim: usize,
    pub hidden: usize,
}

impl Default for TabularEncoderConfig {
    fn default() -> Self {
        Self {
            embed_dim: 4,
            hidden: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageEncoder {
    channels: usize,
    height: usize,
    width: usize,
    conv1: Conv2d,
    conv2: Conv2d,
    fc: Vec<Dense>,
    out_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularEncoder {
    embeddings: Vec<Embedding>,
    numeric: usize,
    dense: Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Encoder {
    Image(ImageEncoder),
    Tabular(TabularEncoder),
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub enum EncoderCache {
    Image {
        input: Vec<f64>,
        act1: Vec<f64>,
        arg1: Vec<usize>,
        pool1: Vec<f64>,
        act2: Vec<f64>,
        arg2: Vec<usize>,
        /// Inputs to each fc layer followed by the final output.
        fc_io: Vec<Vec<f64>>,
    },
    Tabular {
        indices: Vec<usize>,
        input: Vec<f64>,
        output: Vec<f64>,
    },
}

impl EncoderCache {
    pub fn output(&self) -> &[f64] {
        match self {
            EncoderCache::Image { fc_io, .. } => fc_io.last().expect("fc_io holds at least the flattened map"),
            EncoderCache::Tabular { output, .. } => output,
        }
    }
}

impl Encoder {
    pub fn build<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        shape: &ModalityShape,
        image: &ImageEncoderConfig,
        tabular: &TabularEncoderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        match shape {
            ModalityShape::Image {
                channels,
                height,
                width,
            } => {
                if *height < 4 || *width < 4 {
                    return Err(Error::Config(format!(
                        "image modality {height}x{width} is too small for two pooling stages"
                    )));
                }
                let [c1, c2] = image.channels;
                let conv1 = Conv2d::new(store, &format!("{name}.conv1"), *channels, c1, rng);
                let conv2 = Conv2d::new(store, &format!("{name}.conv2"), c1, c2, rng);
                let mut dim = c2 * (height / 2 / 2) * (width / 2 / 2);
                let mut fc = Vec::new();
                for (i, &width_out) in image.fc.iter().enumerate() {
                    fc.push(Dense::new(
                        store,
                        &format!("{name}.fc{i}"),
                        dim,
                        width_out,
                        Init::FanInUniform,
                        rng,
                    ));
                    dim = width_out;
                }
                Ok(Encoder::Image(ImageEncoder {
                    channels: *channels,
                    height: *height,
                    width: *width,
                    conv1,
                    conv2,
                    fc,
                    out_dim: dim,
                }))
            }
            ModalityShape::Tabular {
                vocab_sizes,
                numeric_fields,
            } => {
                let embeddings: Vec<Embedding> = vocab_sizes
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| Embedding::new(store, &format!("{name}.embed{i}"), v, tabular.embed_dim, rng))
                    .collect();
                let in_dim = embeddings.len() * tabular.embed_dim + numeric_fields;
                let dense = Dense::new(
                    store,
                    &format!("{name}.dense"),
                    in_dim,
                    tabular.hidden,
                    Init::FanInUniform,
                    rng,
                );
                Ok(Encoder::Tabular(TabularEncoder {
                    embeddings,
                    numeric: *numeric_fields,
                    dense,
                }))
            }
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Encoder::Image(e) => e.out_dim,
            Encoder::Tabular(e) => e.dense.out_dim,
        }
    }

    pub fn forward(&self, p: &ParamStore, input: &ModalityInput) -> Result<EncoderCache> {
        match (self, input) {
            (Encoder::Image(e), ModalityInput::Image(img)) => {
                if (img.channels, img.height, img.width) != (e.channels, e.height, e.width) {
                    return Err(Error::Shape(format!(
                        "image {}x{}x{} does not match encoder {}x{}x{}",
                        img.channels, img.height, img.width, e.channels, e.height, e.width
                    )));
                }
                let input: Vec<f64> = img.data.iter().map(|&v| f64::from(v)).collect();
                let (h, w) = (e.height, e.width);
                let mut act1 = e.conv1.forward(p, &input, h, w);
                relu_inplace(&mut act1);
                let (pool1, arg1) = maxpool2(&act1, e.conv1.out_c, h, w);
                let (h2, w2) = (h / 2, w / 2);
                let mut act2 = e.conv2.forward(p, &pool1, h2, w2);
                relu_inplace(&mut act2);
                let (pool2, arg2) = maxpool2(&act2, e.conv2.out_c, h2, w2);
                let mut fc_io = vec![pool2];
                for layer in &e.fc {
                    let mut y = layer.forward(p, fc_io.last().unwrap());
                    relu_inplace(&mut y);
                    fc_io.push(y);
                }
                Ok(EncoderCache::Image {
                    input,
                    act1,
                    arg1,
                    pool1,
                    act2,
                    arg2,
                    fc_io,
                })
            }
            (Encoder::Tabular(e), ModalityInput::Tabular(row)) => {
                if row.categorical.len() != e.embeddings.len() || row.numeric.len() != e.numeric {
                    return Err(Error::Shape(format!(
                        "tabular row has {} categorical / {} numeric fields, encoder expects {} / {}",
                        row.categorical.len(),
                        row.numeric.len(),
                        e.embeddings.len(),
                        e.numeric
                    )));
                }
                let mut input = Vec::with_capacity(e.dense.in_dim);
                for (emb, &idx) in e.embeddings.iter().zip(&row.categorical) {
                    if idx >= emb.vocab {
                        return Err(Error::Shape(format!(
                            "category index {idx} outside embedding table of size {}",
                            emb.vocab
                        )));
                    }
                    input.extend_from_slice(emb.forward(p, idx));
                }
                input.extend(row.numeric.iter().map(|&v| f64::from(v)));
                let mut output = e.dense.forward(p, &input);
                relu_inplace(&mut output);
                Ok(EncoderCache::Tabular {
                    indices: row.categorical.clone(),
                    input,
                    output,
                })
            }
            (_, input) => Err(Error::Shape(format!(
                "{} input given to {} encoder",
                input.kind_name(),
                match self {
                    Encoder::Image(_) => "an image",
                    Encoder::Tabular(_) => "a tabular",
                }
            ))),
        }
    }

    pub fn backward(&self, p: &ParamStore, cache: &EncoderCache, grad_out: &[f64], grads: &mut Grads) {
        match (self, cache) {
            (
                Encoder::Image(e),
                EncoderCache::Image {
                    input,
                    act1,
                    arg1,
                    pool1,
                    act2,
                    arg2,
                    fc_io,
                },
            ) => {
                let mut g = grad_out.to_vec();
                for (i, layer) in e.fc.iter().enumerate().rev() {
                    relu_backward_inplace(&mut g, &fc_io[i + 1]);
                    g = layer.backward(p, &fc_io[i], &g, grads);
                }
                let (h, w) = (e.height, e.width);
                let (h2, w2) = (h / 2, w / 2);
                let mut g2 = maxpool2_backward(&g, arg2, act2.len());
                relu_backward_inplace(&mut g2, act2);
                let gp1 = e
                    .conv2
                    .backward(p, pool1, h2, w2, &g2, grads, true)
                    .expect("input gradient requested");
                let mut g1 = maxpool2_backward(&gp1, arg1, act1.len());
                relu_backward_inplace(&mut g1, act1);
                e.conv1.backward(p, input, h, w, &g1, grads, false);
            }
            (Encoder::Tabular(e), EncoderCache::Tabular { indices, input, output }) => {
                let mut g = grad_out.to_vec();
                relu_backward_inplace(&mut g, output);
                let gin = e.dense.backward(p, input, &g, grads);
                let mut offset = 0;
                for (emb, &idx) in e.embeddings.iter().zip(indices) {
                    emb.backward(idx, &gin[offset..offset + emb.dim], grads);
                    offset += emb.dim;
                }
            }
            _ => unreachable!("cache produced by a different encoder kind"),
        }
    }
}
