//! Command-line front end: `prepare-data`, `train`, `adapt`, `evaluate`, `report`.
//!
//! Output layout under the output directory:
//!
//! ```text
//! config.json
//! seed-<s>/manifests/train_<split>.txt, test_<split>.txt
//! seed-<s>/<variant>/<train split>/model.ckpt, trace.csv
//! seed-<s>/<variant>/<train split>/weights_<test split>.txt, adapt_<test split>.csv   (case1)
//! seed-<s>/<variant>/<train split>/weights_train.txt, adapt_train.csv                (case2)
//! results.csv, summary.csv, plots/*.svg
//! ```

mod plots;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::aggregation::{
    ratio_mismatch_warning, read_weights, write_weights, AdaptOutcome, WeightsFile, WeightsProvenance,
};
use crate::config::{Case, ExperimentConfig, Variant};
use crate::data::{class_priors, DatasetManifest, PairedDataset};
use crate::error::{Error, Result};
use crate::experiment::{self, DataSources};
use crate::metrics::{self, run_seeds, ResultRow};
use crate::model::{checkpoint_hash, load_checkpoint, save_checkpoint, train_experts_with, EpochLosses};

pub use plots::{plot_f1_lines, plot_weight_bars};

#[derive(Debug, Parser)]
#[command(
    name = "ltmx",
    version,
    about = "Long-tailed multimodal experts: data, training, aggregation, evaluation"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run only this seed instead of the configured list.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides `out_dir` in the config).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Number of seed repetitions to run concurrently.
    #[arg(long, global = true, default_value_t = 1)]
    pub parallel_reps: usize,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Write train and test manifests for every seed.
    PrepareData,
    /// Train every variant on every training split.
    Train,
    /// Learn aggregation weights (test-time for case1, on the training split for case2).
    Adapt {
        /// Restrict to these test split ids (case1).
        #[arg(long = "split")]
        splits: Vec<String>,
        /// Use this checkpoint instead of the one in the output layout; requires a
        /// grid with a single seed, variant and training split.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate learned weights on the test splits; writes results, summary and plots.
    Evaluate,
    /// Rebuild the summary table and plots from an existing results file.
    Report,
}

/// Resolved configuration and paths for one invocation.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: ExperimentConfig,
    pub out: PathBuf,
    pub parallel_reps: usize,
}

impl Context {
    pub fn new(global: &GlobalArgs) -> Result<Self> {
        let path = global
            .config
            .as_ref()
            .ok_or_else(|| Error::Config("--config <path> is required".into()))?;
        let mut config = ExperimentConfig::load(path)?;
        if let Some(seed) = global.seed {
            config = config.with_seed(seed);
        }
        let out = global.out.clone().unwrap_or_else(|| config.out_dir.clone());
        Ok(Self {
            config,
            out,
            parallel_reps: global.parallel_reps.max(1),
        })
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.out.join(format!("seed-{seed}"))
    }

    pub fn manifest_path(&self, seed: u64, kind: &str, split: &str) -> PathBuf {
        self.seed_dir(seed)
            .join("manifests")
            .join(format!("{kind}_{split}.txt"))
    }

    pub fn run_dir(&self, seed: u64, variant: Variant, train_split: &str) -> PathBuf {
        self.seed_dir(seed).join(variant.as_str()).join(train_split)
    }

    fn for_each_seed<T, F>(&self, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(u64) -> Result<T> + Sync,
    {
        run_seeds(&self.config.seeds, self.parallel_reps, &f)
            .into_iter()
            .collect()
    }

    /// Ids of the splits `prepare-data` writes, in grid order.
    fn split_ids(&self, sources: &DataSources, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
        let p = experiment::prepare_splits(&self.config, sources, seed)?;
        Ok((
            p.train.into_iter().map(|s| s.id).collect(),
            p.test.into_iter().map(|s| s.id).collect(),
        ))
    }

    fn load_split(&self, sources: &DataSources, seed: u64, kind: &str, split: &str) -> Result<PairedDataset> {
        DatasetManifest::read(&self.manifest_path(seed, kind, split))?.to_dataset(&sources.all())
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let ctx = Context::new(&cli.global)?;
    match &cli.command {
        Command::PrepareData => prepare_data(&ctx),
        Command::Train => train(&ctx),
        Command::Adapt { splits, checkpoint } => adapt(&ctx, splits, checkpoint.as_deref()),
        Command::Evaluate => evaluate(&ctx).map(|_| ()),
        Command::Report => report(&ctx),
    }
}

/// Entry point for the binary: parse arguments, run, map errors to exit code 1.
pub fn main_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn prepare_data(ctx: &Context) -> Result<()> {
    std::fs::create_dir_all(&ctx.out)?;
    std::fs::write(ctx.out.join("config.json"), ctx.config.to_json()?)?;
    ctx.for_each_seed(|seed| {
        let sources = experiment::build_sources(&ctx.config.dataset, seed)?;
        let prepared = experiment::prepare_splits(&ctx.config, &sources, seed)?;
        for s in &prepared.train {
            s.manifest.write(&ctx.manifest_path(seed, "train", &s.id))?;
        }
        for s in &prepared.test {
            s.manifest.write(&ctx.manifest_path(seed, "test", &s.id))?;
        }
        Ok(())
    })?;
    Ok(())
}

#[derive(Serialize)]
struct TraceRow {
    epoch: usize,
    l_ce: f64,
    l_bal: f64,
    l_inv: f64,
    sum_cls: f64,
    sum_conf: f64,
    unified: f64,
}

impl From<&EpochLosses> for TraceRow {
    fn from(l: &EpochLosses) -> Self {
        Self {
            epoch: l.epoch,
            l_ce: l.ce,
            l_bal: l.bal,
            l_inv: l.inv,
            sum_cls: l.cls_sum,
            sum_conf: l.conf_sum,
            unified: l.unified,
        }
    }
}

pub fn train(ctx: &Context) -> Result<()> {
    ctx.for_each_seed(|seed| {
        let sources = experiment::build_sources(&ctx.config.dataset, seed)?;
        let (train_ids, _) = ctx.split_ids(&sources, seed)?;
        for split in &train_ids {
            let train = ctx.load_split(&sources, seed, "train", split)?;
            let dist = class_priors(&train)?;
            for &variant in &ctx.config.grid.variants {
                let dir = ctx.run_dir(seed, variant, split);
                std::fs::create_dir_all(&dir)?;
                let mut bundle =
                    crate::model::ExpertBundle::new(experiment::model_config(&ctx.config, &sources, variant, seed))?;
                let samples = experiment::variant_samples(&train, variant);
                let tcfg = experiment::train_config(&ctx.config, seed);
                let mut trace = csv::Writer::from_path(dir.join("trace.csv"))?;
                let outcome = train_experts_with(&mut bundle, &samples, &dist, &tcfg, None, |l| {
                    trace.serialize(TraceRow::from(l))?;
                    trace.flush()?;
                    Ok(())
                })?;
                save_checkpoint(&dir.join("model.ckpt"), &bundle, &tcfg, Some(&outcome.state))?;
            }
        }
        Ok(())
    })?;
    Ok(())
}

#[derive(Serialize)]
struct AdaptRow {
    epoch: usize,
    objective: f64,
}

fn write_adapt(dir: &Path, tag: &str, outcome: &AdaptOutcome, provenance: WeightsProvenance) -> Result<()> {
    if !outcome.experts_unchanged() {
        return Err(Error::Invalid("expert parameters changed during weight fitting".into()));
    }
    write_weights(
        &dir.join(format!("weights_{tag}.txt")),
        &WeightsFile {
            provenance,
            weights: outcome.weights(),
        },
    )?;
    let rows: Vec<AdaptRow> = outcome
        .fit
        .trace
        .iter()
        .enumerate()
        .map(|(epoch, &objective)| AdaptRow { epoch, objective })
        .collect();
    metrics::write_csv(&dir.join(format!("adapt_{tag}.csv")), &rows)
}

pub fn adapt(ctx: &Context, only: &[String], checkpoint: Option<&Path>) -> Result<()> {
    let cfg = &ctx.config;
    if checkpoint.is_some() && (cfg.seeds.len() != 1 || cfg.grid.variants.len() != 1 || cfg.grid.train_ratios.len() > 1)
    {
        return Err(Error::Config(
            "--checkpoint needs a single seed, variant and training split (use --seed and a narrowed config)".into(),
        ));
    }
    ctx.for_each_seed(|seed| {
        let sources = experiment::build_sources(&cfg.dataset, seed)?;
        let (train_ids, test_ids) = ctx.split_ids(&sources, seed)?;
        if let Some(unknown) = only.iter().find(|s| !test_ids.contains(s)) {
            return Err(Error::Config(format!(
                "unknown test split `{unknown}` (known: {test_ids:?})"
            )));
        }
        for split in &train_ids {
            let train = ctx.load_split(&sources, seed, "train", split)?;
            for &variant in &cfg.grid.variants {
                let dir = ctx.run_dir(seed, variant, split);
                let ckpt = checkpoint.map_or_else(|| dir.join("model.ckpt"), Path::to_path_buf);
                let hash = checkpoint_hash(&ckpt)?;
                let bundle = load_checkpoint(&ckpt)?.bundle;
                match cfg.case {
                    Case::Case2 => {
                        let train_ratio = class_priors(&train)?.imbalance_ratio();
                        for id in &test_ids {
                            let test = ctx.load_split(&sources, seed, "test", id)?;
                            if let Some(w) = ratio_mismatch_warning(train_ratio, class_priors(&test)?.imbalance_ratio())
                            {
                                eprintln!("warning: seed {seed}, {split} vs {id}: {w}");
                            }
                        }
                        let outcome = experiment::learn_weights(cfg, &bundle, variant, &train, None, seed)?;
                        let provenance = WeightsProvenance {
                            checkpoint: hash.clone(),
                            split: split.clone(),
                            seed,
                        };
                        write_adapt(&dir, "train", &outcome, provenance)?;
                    }
                    Case::Case1 => {
                        for id in test_ids.iter().filter(|id| only.is_empty() || only.contains(id)) {
                            let test = ctx.load_split(&sources, seed, "test", id)?;
                            let outcome = experiment::learn_weights(cfg, &bundle, variant, &train, Some(&test), seed)?;
                            let provenance = WeightsProvenance {
                                checkpoint: hash.clone(),
                                split: id.clone(),
                                seed,
                            };
                            write_adapt(&dir, id, &outcome, provenance)?;
                        }
                    }
                }
            }
        }
        Ok(())
    })?;
    Ok(())
}

pub fn evaluate(ctx: &Context) -> Result<Vec<ResultRow>> {
    let cfg = &ctx.config;
    let per_seed = ctx.for_each_seed(|seed| {
        let sources = experiment::build_sources(&cfg.dataset, seed)?;
        let (train_ids, test_ids) = ctx.split_ids(&sources, seed)?;
        let tests = test_ids
            .iter()
            .map(|id| Ok((id.clone(), ctx.load_split(&sources, seed, "test", id)?)))
            .collect::<Result<Vec<_>>>()?;
        let mut rows = Vec::new();
        for split in &train_ids {
            let train_manifest = DatasetManifest::read(&ctx.manifest_path(seed, "train", split))?;
            for &variant in &cfg.grid.variants {
                let dir = ctx.run_dir(seed, variant, split);
                let bundle = load_checkpoint(&dir.join("model.ckpt"))?.bundle;
                for (id, test) in &tests {
                    let tag = match cfg.case {
                        Case::Case1 => id.as_str(),
                        Case::Case2 => "train",
                    };
                    let weights = read_weights(&dir.join(format!("weights_{tag}.txt")))?.weights;
                    let report = experiment::evaluate_split(&bundle, &weights, test, variant, id, seed)?;
                    let w = weights.w();
                    rows.push(ResultRow {
                        model_variant: variant.to_string(),
                        train_ir: train_manifest.spec.ratio,
                        test_spec: id.clone(),
                        seed,
                        accuracy: report.accuracy,
                        macro_f1: report.macro_f1,
                        w1: w[0],
                        w2: w[1],
                        w3: w[2],
                    });
                }
            }
        }
        Ok(rows)
    })?;
    let rows: Vec<ResultRow> = per_seed.into_iter().flatten().collect();
    metrics::write_csv(&ctx.out.join("results.csv"), &rows)?;
    write_summary(ctx, &rows)?;
    Ok(rows)
}

fn write_summary(ctx: &Context, rows: &[ResultRow]) -> Result<()> {
    let summary = metrics::summarize_rows(rows);
    metrics::write_csv(&ctx.out.join("summary.csv"), &summary)?;
    let plots = ctx.out.join("plots");
    std::fs::create_dir_all(&plots)?;
    plot_weight_bars(&plots, &summary)?;
    plot_f1_lines(&plots, &summary)?;
    Ok(())
}

pub fn report(ctx: &Context) -> Result<()> {
    let rows: Vec<ResultRow> = metrics::read_csv(&ctx.out.join("results.csv"))?;
    write_summary(ctx, &rows)?;
    println!(
        "{:<16} {:>8} {:<14} {:>3} {:>16} {:>16} {:>20}",
        "variant", "train_ir", "test", "n", "accuracy", "macro_f1", "w1/w2/w3"
    );
    for s in metrics::summarize_rows(&rows) {
        let se = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
        println!(
            "{:<16} {:>8} {:<14} {:>3} {:>8.2} ({:>5}) {:>7.4} ({:>6}) {:>6.3}/{:.3}/{:.3}",
            s.model_variant,
            s.train_ir,
            s.test_spec,
            s.n,
            s.accuracy_mean,
            se(s.accuracy_se),
            s.macro_f1_mean,
            se(s.macro_f1_se),
            s.w1_mean,
            s.w2_mean,
            s.w3_mean
        );
    }
    Ok(())
}
