use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::types::{ModalityShape, TabularRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FieldSpec {
    Categorical { name: String, vocab: Vec<String> },
    Numeric { name: String, min: f64, max: f64 },
}

impl FieldSpec {
    pub fn name(&self) -> &str {
        match self {
            FieldSpec::Categorical { name, .. } | FieldSpec::Numeric { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularSchema {
    pub fields: Vec<FieldSpec>,
}

/// Raw metadata value before encoding.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldValue {
    Text(String),
    Number(f64),
    Missing,
}

pub type MetadataRecord = BTreeMap<String, FieldValue>;

/// Value substituted for a missing numeric field.
pub const MISSING_NUMERIC: f32 = 0.5;

impl TabularSchema {
    pub fn new(fields: Vec<FieldSpec>) -> Result<Self> {
        for f in &fields {
            match f {
                FieldSpec::Categorical { name, vocab } if vocab.is_empty() => {
                    return Err(Error::Config(format!(
                        "categorical field `{name}` has an empty vocabulary"
                    )))
                }
                FieldSpec::Numeric { name, min, max } if !(max > min) => {
                    return Err(Error::Config(format!(
                        "numeric field `{name}` has an empty range [{min}, {max}]"
                    )))
                }
                _ => {}
            }
        }
        Ok(Self { fields })
    }

    /// Embedding table sizes: each vocabulary plus one reserved slot for missing values.
    pub fn vocab_sizes(&self) -> Vec<usize> {
        self.fields
            .iter()
            .filter_map(|f| match f {
                FieldSpec::Categorical { vocab, .. } => Some(vocab.len() + 1),
                FieldSpec::Numeric { .. } => None,
            })
            .collect()
    }

    pub fn numeric_fields(&self) -> usize {
        self.fields
            .iter()
            .filter(|f| matches!(f, FieldSpec::Numeric { .. }))
            .count()
    }

    pub fn shape(&self) -> ModalityShape {
        ModalityShape::Tabular {
            vocab_sizes: self.vocab_sizes(),
            numeric_fields: self.numeric_fields(),
        }
    }

    /// Categorical fields become vocabulary indices (missing -> reserved last index);
    /// numeric fields are min-max scaled into [0, 1] (missing -> 0.5).
    pub fn encode(&self, record: &MetadataRecord) -> Result<TabularRecord> {
        let mut categorical = Vec::new();
        let mut numeric = Vec::new();
        for field in &self.fields {
            let value = record.get(field.name()).unwrap_or(&FieldValue::Missing);
            match (field, value) {
                (FieldSpec::Categorical { vocab, .. }, FieldValue::Missing) => categorical.push(vocab.len()),
                (FieldSpec::Categorical { name, vocab }, FieldValue::Text(v)) => {
                    let idx = vocab
                        .iter()
                        .position(|x| x == v)
                        .ok_or_else(|| Error::OutOfVocabulary {
                            field: name.clone(),
                            value: v.clone(),
                        })?;
                    categorical.push(idx);
                }
                (FieldSpec::Numeric { .. }, FieldValue::Missing) => numeric.push(MISSING_NUMERIC),
                (FieldSpec::Numeric { min, max, .. }, FieldValue::Number(x)) => {
                    numeric.push((((x - min) / (max - min)).clamp(0.0, 1.0)) as f32)
                }
                (FieldSpec::Categorical { name, .. }, FieldValue::Number(x)) => {
                    return Err(Error::OutOfVocabulary {
                        field: name.clone(),
                        value: x.to_string(),
                    })
                }
                (FieldSpec::Numeric { name, .. }, FieldValue::Text(t)) => {
                    return Err(Error::Invalid(format!("numeric field `{name}` got text value `{t}`")))
                }
            }
        }
        Ok(TabularRecord { categorical, numeric })
    }

    /// Inverse of [`encode`](Self::encode) by vocabulary lookup and range rescaling.
    pub fn decode(&self, row: &TabularRecord) -> Result<MetadataRecord> {
        let mut out = MetadataRecord::new();
        let (mut ci, mut ni) = (0, 0);
        for field in &self.fields {
            let value = match field {
                FieldSpec::Categorical { name, vocab } => {
                    let idx = *row
                        .categorical
                        .get(ci)
                        .ok_or_else(|| Error::Shape(format!("row lacks categorical field `{name}`")))?;
                    ci += 1;
                    if idx == vocab.len() {
                        FieldValue::Missing
                    } else {
                        FieldValue::Text(
                            vocab
                                .get(idx)
                                .ok_or_else(|| Error::Invalid(format!("index {idx} outside vocabulary of `{name}`")))?
                                .clone(),
                        )
                    }
                }
                FieldSpec::Numeric { name, min, max } => {
                    let v = *row
                        .numeric
                        .get(ni)
                        .ok_or_else(|| Error::Shape(format!("row lacks numeric field `{name}`")))?;
                    ni += 1;
                    FieldValue::Number(min + f64::from(v) * (max - min))
                }
            };
            out.insert(field.name().to_string(), value);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> TabularSchema {
        TabularSchema::new(vec![
            FieldSpec::Categorical {
                name: "sex".into(),
                vocab: vec!["female".into(), "male".into()],
            },
            FieldSpec::Categorical {
                name: "site".into(),
                vocab: [
                    "head/neck",
                    "upper extremity",
                    "lower extremity",
                    "torso",
                    "palms/soles",
                    "oral/genital",
                ]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            },
            FieldSpec::Numeric {
                name: "age".into(),
                min: 0.0,
                max: 90.0,
            },
        ])
        .unwrap()
    }

    fn record(sex: &str, site: &str, age: f64) -> MetadataRecord {
        let mut r = MetadataRecord::new();
        r.insert("sex".into(), FieldValue::Text(sex.into()));
        r.insert("site".into(), FieldValue::Text(site.into()));
        r.insert("age".into(), FieldValue::Number(age));
        r
    }

    #[test]
    fn encodes_vocab_index_and_midpoint() {
        let row = schema().encode(&record("female", "torso", 45.0)).unwrap();
        assert_eq!(row.categorical, vec![0, 3]);
        assert_eq!(row.numeric, vec![0.5]);
    }

    #[test]
    fn round_trip_by_lookup() {
        let s = schema();
        let original = record("male", "palms/soles", 63.0);
        let decoded = s.decode(&s.encode(&original).unwrap()).unwrap();
        assert_eq!(decoded["sex"], original["sex"]);
        assert_eq!(decoded["site"], original["site"]);
        match decoded["age"] {
            FieldValue::Number(a) => assert!((a - 63.0).abs() < 1e-4),
            ref other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_values_use_reserved_slots() {
        let s = schema();
        let row = s.encode(&MetadataRecord::new()).unwrap();
        assert_eq!(row.categorical, vec![2, 6]);
        assert_eq!(row.numeric, vec![MISSING_NUMERIC]);
        assert_eq!(s.vocab_sizes(), vec![3, 7]);
    }

    #[test]
    fn unknown_category_names_field_and_value() {
        let err = schema().encode(&record("other", "torso", 30.0)).unwrap_err();
        match err {
            Error::OutOfVocabulary { field, value } => {
                assert_eq!(field, "sex");
                assert_eq!(value, "other");
            }
            e => panic!("unexpected {e}"),
        }
    }
}
