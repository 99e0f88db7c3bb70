//! Line-oriented dataset manifests.
//!
//! ```text
//! version=1 seed=7 kind=forward ratio=10
//! 0 0 mnist-train:5123 svhn-train:881
//! 0 3 mnist-train:77 svhn-train:40122
//! ```
//!
//! One record per line: class, sample id, then `<source id>:<index>` per modality.
//! Records are sorted by class then sample id.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use super::types::{DistributionSpec, LabeledSource, PairedDataset, PairedRecord, SplitKind};
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub seed: u64,
    pub spec: DistributionSpec,
    pub source_ids: Vec<String>,
    pub records: Vec<PairedRecord>,
}

impl DatasetManifest {
    pub fn from_dataset(dataset: &PairedDataset, spec: DistributionSpec, seed: u64) -> Self {
        let mut records = dataset.records.clone();
        records.sort();
        Self {
            seed,
            spec,
            source_ids: dataset.sources.iter().map(|s| s.id.clone()).collect(),
            records,
        }
    }

    pub fn class_counts(&self, num_classes: usize) -> Vec<usize> {
        let mut counts = vec![0; num_classes];
        for r in &self.records {
            if r.label < num_classes {
                counts[r.label] += 1;
            }
        }
        counts
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "version={} seed={} kind={} ratio={}",
            MANIFEST_VERSION, self.seed, self.spec.kind, self.spec.ratio
        );
        for r in &self.records {
            let _ = write!(out, "{} {}", r.label, r.id);
            for (src, idx) in self.source_ids.iter().zip(&r.refs) {
                let _ = write!(out, " {src}:{idx}");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let ctx = "manifest";
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::format(ctx, "empty file"))?;
        let mut version = None;
        let mut seed = None;
        let mut kind = None;
        let mut ratio = None;
        for tok in header.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::format(ctx, format!("bad header token `{tok}`")))?;
            match k {
                "version" => version = v.parse::<u32>().ok(),
                "seed" => seed = v.parse::<u64>().ok(),
                "kind" => kind = Some(v.parse::<SplitKind>()?),
                "ratio" => ratio = v.parse::<f64>().ok(),
                _ => return Err(Error::format(ctx, format!("unknown header key `{k}`"))),
            }
        }
        match version {
            Some(MANIFEST_VERSION) => {}
            Some(v) => return Err(Error::format(ctx, format!("unsupported version {v}"))),
            None => return Err(Error::format(ctx, "missing version")),
        }
        let seed = seed.ok_or_else(|| Error::format(ctx, "missing or invalid seed"))?;
        let spec = DistributionSpec::new(
            kind.ok_or_else(|| Error::format(ctx, "missing kind"))?,
            ratio.ok_or_else(|| Error::format(ctx, "missing or invalid ratio"))?,
        )?;

        let mut source_ids: Option<Vec<String>> = None;
        let mut records = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::format(ctx, format!("line {}: {msg}", lineno + 2));
            let mut toks = line.split_whitespace();
            let label: usize = toks
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| bad("bad class"))?;
            let id: u64 = toks
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| bad("bad sample id"))?;
            let mut ids = Vec::new();
            let mut refs = Vec::new();
            for tok in toks {
                let (src, idx) = tok.rsplit_once(':').ok_or_else(|| bad("bad source ref"))?;
                ids.push(src.to_string());
                refs.push(idx.parse::<usize>().map_err(|_| bad("bad source index"))?);
            }
            if refs.is_empty() {
                return Err(bad("record has no source refs"));
            }
            match &source_ids {
                None => source_ids = Some(ids),
                Some(prev) if *prev != ids => return Err(bad("source ids differ from earlier records")),
                _ => {}
            }
            records.push(PairedRecord { label, id, refs });
        }
        Ok(Self {
            seed,
            spec,
            source_ids: source_ids.unwrap_or_default(),
            records,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Resolve the manifest against loaded sources, picking them by id from `available`.
    pub fn to_dataset(&self, available: &[Arc<LabeledSource>]) -> Result<PairedDataset> {
        let sources = self
            .source_ids
            .iter()
            .map(|id| {
                available.iter().find(|s| &s.id == id).cloned().ok_or_else(|| {
                    Error::Config(format!(
                        "manifest references source `{id}` but only {:?} are available",
                        available.iter().map(|s| s.id.as_str()).collect::<Vec<_>>()
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let k = sources.first().map(|s| s.num_classes).unwrap_or(0);
        PairedDataset::new(sources, k, self.records.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let m = DatasetManifest {
            seed: 42,
            spec: DistributionSpec::forward(10.0).unwrap(),
            source_ids: vec!["a".into(), "b".into()],
            records: vec![
                PairedRecord {
                    label: 0,
                    id: 0,
                    refs: vec![5, 9],
                },
                PairedRecord {
                    label: 1,
                    id: 4,
                    refs: vec![1, 2],
                },
            ],
        };
        let text = m.to_text();
        assert!(text.starts_with("version=1 seed=42 kind=forward ratio=10\n"));
        assert!(text.contains("\n0 0 a:5 b:9\n"));
        assert_eq!(DatasetManifest::parse(&text).unwrap(), m);
    }

    #[test]
    fn rejects_bad_version() {
        assert!(DatasetManifest::parse("version=2 seed=1 kind=uniform ratio=1\n").is_err());
    }
}
