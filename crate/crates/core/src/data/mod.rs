//! Paired multi-modal datasets, long-tailed subsampling, augmentation and
//! tabular encoding.

pub mod augment;
pub mod imbalance;
pub mod manifest;
pub mod pairing;
pub mod sources;
pub mod synthetic;
pub mod tabular;
pub mod types;

pub use augment::{stochastic_augment, AugmentConfig};
pub use imbalance::{class_priors, stratified_split, subsample_longtailed, target_counts};
pub use manifest::DatasetManifest;
pub use pairing::{pair_modalities, pair_sources};
pub use tabular::{FieldSpec, FieldValue, MetadataRecord, TabularSchema};
pub use types::{
    ClassDistribution, DistributionSpec, ImageTensor, LabeledSource, ModalityInput, ModalityShape, PairedDataset,
    PairedRecord, PairedSample, SplitKind, TabularRecord,
};
