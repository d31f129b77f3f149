//! The `vnn` command-line tool.
//!
//! Subcommands: `synth`, `train`, `embed`, `evaluate`, `gradcheck`. Logs and
//! the resolved configuration go to standard error; artifacts go to files,
//! and the few printed results (manifest path, report, check summary) to
//! standard output.
//!
//! Exit codes: 0 success, 1 failed check, 2 configuration error, 3 data or
//! file error, 4 numeric error.

use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{
    generate_synthetic, load_samples, read_descriptors, read_manifest, split_dataset, write_descriptors,
    write_manifest, DescriptorFile, Manifest, Split, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_retrieval, DescriptorEntry, DescriptorSet, EvalOptions, Similarity};
use crate::numerics::{AdjointFault, Real};
use crate::trainer::{
    check_model_gradients, gradcheck_fixture, load_checkpoint, save_checkpoint, TrainConfig, Trainer,
    GRADCHECK_SEED,
};
use crate::vnn::{Aggregation, DESCRIPTOR_DIM};

#[derive(Debug, Parser)]
#[command(name = "vnn", version, about = "View n-gram network: synthetic data, training, descriptors and retrieval evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Command {
    /// Generate a synthetic view-order dataset and its manifest.
    Synth(SynthArgs),
    /// Train a model on the train split of a manifest.
    Train(TrainArgs),
    /// Write 512-d descriptors for manifest samples.
    Embed(EmbedArgs),
    /// Rank a gallery for every query and report retrieval metrics.
    Evaluate(EvaluateArgs),
    /// Compare analytic gradients with finite differences on a tiny model.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    /// Pairs of classes sharing view prototypes in different orders
    /// [default: classes/2 when classes is even, else 0]
    #[arg(long)]
    pub confusable_pairs: Option<usize>,
    #[arg(long, default_value_t = 12)]
    pub views: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 150)]
    pub per_class: usize,
    #[arg(long, default_value_t = 0.05)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of each class tagged `test`; the rest is `train`
    #[arg(long, default_value_t = 1.0 / 3.0)]
    pub test_fraction: f64,
    /// Refuse to generate when `views` is smaller than this n-gram size
    #[arg(long)]
    pub ngram_check: Option<usize>,
    /// Output directory for the view files and manifest.json
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationArg {
    Attention,
    Max,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Checkpoint path
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch loss log, one `epoch,loss` line per epoch [default: <out>.loss.csv]
    #[arg(long)]
    pub loss_log: Option<PathBuf>,
    #[arg(long = "lr", default_value_t = 0.001)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 0.0001)]
    pub weight_decay: f64,
    /// Elementwise gradient clip bound
    #[arg(long, default_value_t = 0.01)]
    pub clip: f64,
    #[arg(long, default_value_t = 150)]
    pub epochs: usize,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    /// Comma-separated n-gram sizes, one branch each
    #[arg(long, value_delimiter = ',', default_value = "3,5,7")]
    pub ngram_sizes: Vec<usize>,
    /// Gram feature width per branch
    #[arg(long, default_value_t = 512)]
    pub dprime: usize,
    /// Wrap n-gram windows around the view sequence
    #[arg(long, default_value_t = false, action = ArgAction::Set)]
    pub circular: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = AggregationArg::Attention)]
    pub aggregation: AggregationArg,
    /// Continue from this checkpoint; its configuration replaces the
    /// model and optimizer flags, and training runs until --epochs in total
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitArg {
    Train,
    Test,
    Gallery,
    Query,
    All,
}

#[derive(Debug, Args, Serialize)]
pub struct EmbedArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Comma-separated splits to embed
    #[arg(long, value_enum, value_delimiter = ',', default_value = "all")]
    pub split: Vec<SplitArg>,
    /// Descriptor file to write
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityArg {
    Cosine,
    Euclidean,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    /// Query descriptor file
    #[arg(long)]
    pub query: PathBuf,
    /// Gallery descriptor file [default: the query file]
    #[arg(long)]
    pub gallery: Option<PathBuf>,
    /// Manifest providing class labels for every descriptor id
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = SimilarityArg::Cosine)]
    pub similarity: SimilarityArg,
    #[arg(long, default_value_t = 32)]
    pub f1_cutoff: usize,
    /// NDCG cutoff, 0 for the full ranked list
    #[arg(long, default_value_t = 0)]
    pub ndcg_cutoff: usize,
    /// L2-normalize descriptors before ranking
    #[arg(long, default_value_t = false, action = ArgAction::Set)]
    pub normalize: bool,
    /// Report path [default: standard output]
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Write the mean interpolated PR curve as `recall,precision` CSV
    #[arg(long)]
    pub pr_curve: Option<PathBuf>,
    /// Number of recall intervals in the PR curve
    #[arg(long, default_value_t = 10)]
    pub pr_levels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FaultArg {
    Relu,
    Softmax,
    Layernorm,
}

#[derive(Debug, Args, Serialize)]
pub struct GradcheckArgs {
    /// Central-difference step
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    /// Branch sets to check: comma-separated, `+` joins sizes in one set
    #[arg(long, default_value = "1,2,3,3+5")]
    pub branches: String,
    /// Pass if the max relative error is below this
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Seed for the tiny model and its inputs
    #[arg(long, default_value_t = GRADCHECK_SEED)]
    pub seed: u64,
    /// Test hook: replace one adjoint with a wrong one
    #[arg(long, value_enum)]
    pub break_adjoint: Option<FaultArg>,
}

/// Run one parsed command. Returns the process exit code for outcomes that
/// are not errors (0, or 1 for a failed check).
pub fn run(cli: &Cli) -> Result<u8> {
    log(&format!(
        "config {}",
        serde_json::to_string(&cli.command).expect("arguments serialize")
    ));
    match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Embed(a) => embed(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

/// Parse `args`, run, and map errors to exit codes.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("vnn: error: {e}");
            e.exit_code()
        }
    }
}

fn log(msg: &str) {
    eprintln!("vnn: {msg}");
}

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn synth(a: &SynthArgs) -> Result<u8> {
    if let Some(n) = a.ngram_check {
        if a.views < n {
            return Err(Error::Config(format!(
                "{} views cannot hold an n-gram of size {n}",
                a.views
            )));
        }
    }
    if !(0.0..=1.0).contains(&a.test_fraction) {
        return Err(Error::Config(format!("test fraction must be in [0, 1], got {}", a.test_fraction)));
    }
    let pairs = a
        .confusable_pairs
        .unwrap_or(if a.classes.is_multiple_of(2) { a.classes / 2 } else { 0 });
    log(&format!("resolved confusable pairs: {pairs}"));
    let spec = SyntheticSpec {
        classes: a.classes,
        confusable_pairs: pairs,
        views: a.views,
        dim: a.dim,
        per_class: a.per_class,
        sigma: a.sigma,
        seed: a.seed,
    };
    let dataset = generate_synthetic(&spec)?;
    let fractions = [(Split::Train, 1.0 - a.test_fraction), (Split::Test, a.test_fraction)];
    let (manifest, warnings) = split_dataset(&dataset.manifest(), &fractions, a.seed)?;
    for w in warnings {
        log(&format!("warning: {w}"));
    }
    dataset.write_files(&a.out)?;
    let path = a.out.join("manifest.json");
    write_manifest(&path, &manifest)?;
    log(&format!("wrote {} samples", dataset.samples.len()));
    println!("{}", path.display());
    Ok(0)
}

fn train(a: &TrainArgs) -> Result<u8> {
    let manifest = read_manifest(&a.manifest)?;
    let samples = load_samples(&manifest, &manifest_dir(&a.manifest), &[Split::Train])?;
    let first = samples
        .first()
        .ok_or_else(|| Error::Data("manifest has no train samples".into()))?;
    let input_dim = first.views.dim();

    let mut trainer = match &a.resume {
        Some(path) => {
            let cp = load_checkpoint(path)?;
            if cp.model.config.input_dim != input_dim {
                return Err(Error::Data(format!(
                    "checkpoint expects feature width {}, data has {input_dim}",
                    cp.model.config.input_dim
                )));
            }
            log(&format!(
                "resuming from {} at epoch {}; model and optimizer settings come from the checkpoint",
                path.display(),
                cp.epoch
            ));
            let mut t = Trainer::from_checkpoint(cp)?;
            t.config.epochs = a.epochs;
            t
        }
        None => {
            let config = TrainConfig {
                learning_rate: a.learning_rate,
                momentum: a.momentum,
                weight_decay: a.weight_decay,
                clip_bound: a.clip,
                epochs: a.epochs,
                batch_size: a.batch_size,
                seed: a.seed,
                branch_sizes: a.ngram_sizes.clone(),
                d_prime: a.dprime,
                circular: a.circular,
                aggregation: match a.aggregation {
                    AggregationArg::Attention => Aggregation::Attention,
                    AggregationArg::Max => Aggregation::MaxPool,
                },
            };
            Trainer::new(config, input_dim, manifest.num_classes())?
        }
    };
    let views = samples.iter().map(|s| s.views.views()).min().unwrap_or(0);
    for b in &trainer.model.config.branches {
        b.gram_count(views)?;
    }

    log(&format!(
        "training on {} samples, {} classes, {} parameters",
        samples.len(),
        trainer.model.config.num_classes,
        trainer.model.params.scalar_count()
    ));
    let total = trainer.config.epochs;
    trainer.run(&samples, |epoch, loss| log(&format!("epoch {epoch}/{total} loss {loss:.6}")))?;

    save_checkpoint(&a.out, &trainer.checkpoint())?;
    let loss_path = a.loss_log.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".loss.csv");
        PathBuf::from(p)
    });
    let mut text = String::new();
    for (i, loss) in trainer.loss_history.iter().enumerate() {
        text.push_str(&format!("{},{loss}\n", i + 1));
    }
    std::fs::write(&loss_path, text).map_err(|e| Error::io(&loss_path, e))?;
    log(&format!("wrote {} and {}", a.out.display(), loss_path.display()));
    Ok(0)
}

fn selected_splits(args: &[SplitArg]) -> Vec<Split> {
    if args.contains(&SplitArg::All) {
        return vec![Split::Train, Split::Test, Split::Gallery, Split::Query];
    }
    args.iter()
        .map(|s| match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
            SplitArg::Gallery => Split::Gallery,
            SplitArg::Query | SplitArg::All => Split::Query,
        })
        .collect()
}

fn embed(a: &EmbedArgs) -> Result<u8> {
    let model = load_checkpoint(&a.checkpoint)?.model;
    let manifest = read_manifest(&a.manifest)?;
    let samples = load_samples(&manifest, &manifest_dir(&a.manifest), &selected_splits(&a.split))?;
    if samples.is_empty() {
        return Err(Error::Data(format!("no samples in the selected splits {:?}", a.split)));
    }
    if samples[0].views.dim() != model.config.input_dim {
        return Err(Error::Data(format!(
            "checkpoint expects feature width {}, data has {}",
            model.config.input_dim,
            samples[0].views.dim()
        )));
    }
    let descriptors: Vec<Vec<Real>> = samples
        .par_iter()
        .map(|s| model.descriptor(&s.views).map(|d| d.0))
        .collect::<Result<_>>()?;
    let mut file = DescriptorFile::new(DESCRIPTOR_DIM);
    for (s, d) in samples.iter().zip(&descriptors) {
        file.push(s.id.clone(), d)?;
    }
    write_descriptors(&a.out, &file)?;
    log(&format!("wrote {} descriptors to {}", file.len(), a.out.display()));
    Ok(0)
}

fn labelled_set(file: &DescriptorFile, manifest: &Manifest) -> Result<DescriptorSet> {
    let entries = file
        .ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let record = manifest
                .find(id)
                .ok_or_else(|| Error::Data(format!("descriptor id {id} is not in the manifest")))?;
            let d = file.descriptor(i).iter().map(|&x| x as Real).collect();
            Ok(DescriptorEntry::new(id.clone(), record.class_label.clone(), d))
        })
        .collect::<Result<Vec<_>>>()?;
    DescriptorSet::new(entries)
}

fn evaluate(a: &EvaluateArgs) -> Result<u8> {
    let manifest = read_manifest(&a.manifest)?;
    let queries = labelled_set(&read_descriptors(&a.query)?, &manifest)?;
    let gallery = match &a.gallery {
        Some(path) => labelled_set(&read_descriptors(path)?, &manifest)?,
        None => queries.clone(),
    };
    let options = EvalOptions {
        similarity: match a.similarity {
            SimilarityArg::Cosine => Similarity::Cosine,
            SimilarityArg::Euclidean => Similarity::Euclidean,
        },
        f1_cutoff: a.f1_cutoff,
        ndcg_cutoff: a.ndcg_cutoff,
        normalize: a.normalize,
        ..EvalOptions::default()
    };
    let report = evaluate_retrieval(&queries, &gallery, &options)?;
    let both = report.micro_macro_mean();
    for (name, m) in [("micro", report.micro), ("macro", report.macro_), ("micro+macro mean", both)] {
        log(&format!(
            "{name}: mAP {:.6} AUC {:.6} F1 {:.6} NDCG {:.6}",
            m.map, m.auc, m.f1, m.ndcg
        ));
    }
    if !report.undefined.is_empty() {
        log(&format!("{} queries without relevant gallery items", report.undefined.len()));
    }
    let json = report.to_json();
    match &a.json {
        Some(path) => std::fs::write(path, json).map_err(|e| Error::io(path, e))?,
        None => print!("{json}"),
    }
    if let Some(path) = &a.pr_curve {
        let mut csv = String::from("recall,precision\n");
        for (r, p) in report.mean_pr_curve(a.pr_levels) {
            csv.push_str(&format!("{r:.6},{p:.6}\n"));
        }
        std::fs::write(path, csv).map_err(|e| Error::io(path, e))?;
    }
    Ok(0)
}

fn parse_branch_sets(text: &str) -> Result<Vec<Vec<usize>>> {
    text.split(',')
        .map(|set| {
            set.split('+')
                .map(|n| {
                    n.trim()
                        .parse::<usize>()
                        .ok()
                        .filter(|&n| n > 0)
                        .ok_or_else(|| Error::Config(format!("bad branch set {set:?}")))
                })
                .collect()
        })
        .collect()
}

fn gradcheck(a: &GradcheckArgs) -> Result<u8> {
    let sets = parse_branch_sets(&a.branches)?;
    let fault = a.break_adjoint.map(|f| match f {
        FaultArg::Relu => AdjointFault::Relu,
        FaultArg::Softmax => AdjointFault::Softmax,
        FaultArg::Layernorm => AdjointFault::LayerNorm,
    });
    let mut worst: Option<(Real, String, String)> = None;
    for set in &sets {
        let (model, samples) = gradcheck_fixture(set, a.seed)?;
        let batch: Vec<_> = samples.iter().collect();
        let (report, name) = check_model_gradients(&model, &batch, a.step as Real, fault)?;
        let label = set.iter().map(usize::to_string).collect::<Vec<_>>().join("+");
        println!(
            "branches {label}: max relative error {:.3e} at {name}[{}]",
            report.max_relative_error, report.worst.1
        );
        if worst.as_ref().is_none_or(|w| report.max_relative_error > w.0) {
            worst = Some((report.max_relative_error, name, label));
        }
    }
    let (err, name, label) = worst.expect("at least one branch set");
    println!("max relative error {err:.3e}");
    if err < a.tolerance as Real {
        Ok(0)
    } else {
        eprintln!("vnn: gradient check failed: worst parameter {name} (branches {label}), error {err:.3e}");
        Ok(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_valid() {
        Cli::command().debug_assert();
    }

    #[test]
    fn train_defaults() {
        let cli = Cli::try_parse_from(["vnn", "train", "--manifest", "m.json", "--out", "c.vnc"]).unwrap();
        let Command::Train(t) = cli.command else { panic!() };
        assert_eq!(t.learning_rate, 0.001);
        assert_eq!(t.momentum, 0.9);
        assert_eq!(t.weight_decay, 0.0001);
        assert_eq!(t.clip, 0.01);
        assert_eq!((t.epochs, t.batch_size, t.dprime), (150, 8, 512));
        assert_eq!(t.ngram_sizes, [3, 5, 7]);
        assert!(!t.circular);
    }

    #[test]
    fn branch_set_parsing() {
        assert_eq!(parse_branch_sets("1,2,3,3+5").unwrap(), vec![vec![1], vec![2], vec![3], vec![3, 5]]);
        assert!(parse_branch_sets("1,,2").is_err());
        assert!(parse_branch_sets("0").is_err());
    }

    #[test]
    fn ngram_guard() {
        let cli = Cli::try_parse_from(["vnn", "synth", "--views", "2", "--ngram-check", "3", "--out", "/nonexistent/x"])
            .unwrap();
        assert!(matches!(run(&cli), Err(Error::Config(_))));
    }
}
