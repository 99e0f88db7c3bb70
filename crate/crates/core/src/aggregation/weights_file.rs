//! Text format for learned weights:
//!
//! ```text
//! # checkpoint=<sha256 of checkpoint file>
//! # split=<split id>
//! # seed=<seed>
//! w1=0.59
//! w2=0.35
//! w3=0.06
//! ```

use std::path::Path;

use super::AggregationWeights;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightsProvenance {
    pub checkpoint: String,
    pub split: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightsFile {
    pub provenance: WeightsProvenance,
    pub weights: AggregationWeights,
}

impl WeightsFile {
    pub fn to_text(&self) -> String {
        let p = &self.provenance;
        let w = self.weights.w();
        format!(
            "# checkpoint={}\n# split={}\n# seed={}\nw1={}\nw2={}\nw3={}\n",
            p.checkpoint, p.split, p.seed, w[0], w[1], w[2]
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let ctx = "weights file";
        let mut checkpoint = None;
        let mut split = None;
        let mut seed = None;
        let mut w = [None; 3];
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (key, value) = line
                .trim_start_matches('#')
                .trim()
                .split_once('=')
                .ok_or_else(|| Error::format(ctx, format!("malformed line `{line}`")))?;
            let num = |v: &str| {
                v.parse::<f64>()
                    .map_err(|_| Error::format(ctx, format!("`{v}` is not a number")))
            };
            match key {
                "checkpoint" => checkpoint = Some(value.to_string()),
                "split" => split = Some(value.to_string()),
                "seed" => {
                    seed = Some(
                        value
                            .parse()
                            .map_err(|_| Error::format(ctx, format!("bad seed `{value}`")))?,
                    )
                }
                "w1" => w[0] = Some(num(value)?),
                "w2" => w[1] = Some(num(value)?),
                "w3" => w[2] = Some(num(value)?),
                other => return Err(Error::format(ctx, format!("unknown key `{other}`"))),
            }
        }
        let missing = |k: &str| Error::format(ctx, format!("missing `{k}`"));
        let w = [
            w[0].ok_or_else(|| missing("w1"))?,
            w[1].ok_or_else(|| missing("w2"))?,
            w[2].ok_or_else(|| missing("w3"))?,
        ];
        // Text round-off can leave the sum a few ulps away from 1.
        let total: f64 = w.iter().sum();
        let weights = AggregationWeights::from_simplex(w.map(|x| x / total))?;
        Ok(Self {
            provenance: WeightsProvenance {
                checkpoint: checkpoint.ok_or_else(|| missing("checkpoint"))?,
                split: split.ok_or_else(|| missing("split"))?,
                seed: seed.ok_or_else(|| missing("seed"))?,
            },
            weights,
        })
    }
}

pub fn write_weights(path: &Path, file: &WeightsFile) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, file.to_text())?;
    Ok(())
}

pub fn read_weights(path: &Path) -> Result<WeightsFile> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    WeightsFile::parse(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let f = WeightsFile {
            provenance: WeightsProvenance {
                checkpoint: "ab12".into(),
                split: "backward_50".into(),
                seed: 7,
            },
            weights: AggregationWeights::from_theta([0.2, -1.0, 1.5]),
        };
        let text = f.to_text();
        assert_eq!(text.lines().filter(|l| l.starts_with('w')).count(), 3);
        let back = WeightsFile::parse(&text).unwrap();
        assert_eq!(back.provenance, f.provenance);
        for (a, b) in back.weights.w().iter().zip(f.weights.w()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_incomplete_files() {
        assert!(WeightsFile::parse("w1=0.5\nw2=0.5\n").is_err());
        assert!(WeightsFile::parse("# checkpoint=x\n# split=y\n# seed=1\nw1=a\nw2=0.5\nw3=0.5").is_err());
    }
}
