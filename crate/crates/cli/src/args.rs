//! Command-line surface. Defaults mirror the training recipe: batches of
//! 32, Adam at 1e-4, early-stopping patience 7, subset capacity 10,
//! 80/10/10 label-stratified splits (seed 42).

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use veracity_core::corpus::{DistortionMode, SubsetPolicy, TimelinePolicy};
use veracity_core::diagnostics::OmegaConvention;
use veracity_core::encoders::{EncoderFamily, HanDocVector};
use veracity_core::trainer::Setup;

#[derive(Debug, Parser)]
#[command(
    name = "veracity",
    version,
    about = "Correlation-constrained veracity classification experiments",
    propagate_version = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus directory (articles/users/subsets JSONL).
    Datagen(DatagenArgs),
    /// Train a classifier; writes checkpoint, history CSVs and manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split; writes JSON + CSV reports.
    Evaluate(EvaluateArgs),
    /// Latent-space diagnostics: projection (MDS or PCA) and class overlap.
    Diagnose(DiagnoseArgs),
    /// Train one model per loss-weight candidate and report the best.
    Gridsearch(GridsearchArgs),
}

#[derive(Debug, Args)]
pub struct DatagenArgs {
    /// JSON file with generator knobs; defaults are used when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Output corpus directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DistortFlag {
    None,
    Subset,
    Composition,
}

impl DistortFlag {
    pub fn mode(self) -> Option<DistortionMode> {
        match self {
            DistortFlag::None => None,
            DistortFlag::Subset => Some(DistortionMode::RandomSubset),
            DistortFlag::Composition => Some(DistortionMode::RandomSubsetComposition),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EncoderFlag {
    Cnn,
    Han,
}

impl EncoderFlag {
    pub fn family(self) -> EncoderFamily {
        match self {
            EncoderFlag::Cnn => EncoderFamily::Cnn,
            EncoderFlag::Han => EncoderFamily::Han,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SetupFlag {
    Base,
    #[value(name = "u_d")]
    UD,
    #[value(name = "u_t")]
    UT,
    #[value(name = "u_dt")]
    UDt,
}

impl SetupFlag {
    pub fn setup(self) -> Setup {
        match self {
            SetupFlag::Base => Setup::Base,
            SetupFlag::UD => Setup::UserDescription,
            SetupFlag::UT => Setup::UserTweets,
            SetupFlag::UDt => Setup::UserDescriptionTweets,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SubsetPolicyFlag {
    Earliest,
    Latest,
}

impl SubsetPolicyFlag {
    pub fn policy(self) -> SubsetPolicy {
        match self {
            SubsetPolicyFlag::Earliest => SubsetPolicy::Earliest,
            SubsetPolicyFlag::Latest => SubsetPolicy::Latest,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TimelinePolicyFlag {
    Newest,
    Oldest,
}

impl TimelinePolicyFlag {
    pub fn policy(self) -> TimelinePolicy {
        match self {
            TimelinePolicyFlag::Newest => TimelinePolicy::Newest,
            TimelinePolicyFlag::Oldest => TimelinePolicy::Oldest,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DocVectorFlag {
    Attention,
    #[value(name = "last-hidden")]
    LastHidden,
}

impl DocVectorFlag {
    pub fn mode(self) -> HanDocVector {
        match self {
            DocVectorFlag::Attention => HanDocVector::Attention,
            DocVectorFlag::LastHidden => HanDocVector::LastHidden,
        }
    }
}

/// Comma-separated loss weights, e.g. `0.8,0.1,0.1`.
pub fn parse_lambda(raw: &str) -> Result<(f64, f64, f64), String> {
    let parts: Vec<&str> = raw.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated weights, got {raw:?}"));
    }
    let mut values = [0.0; 3];
    for (slot, part) in values.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse::<f64>()
            .map_err(|e| format!("bad weight {part:?}: {e}"))?;
    }
    Ok((values[0], values[1], values[2]))
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus directory (articles.jsonl, users.jsonl, subsets.jsonl).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = EncoderFlag::Cnn)]
    pub encoder: EncoderFlag,
    #[arg(long, value_enum, default_value_t = SetupFlag::Base)]
    pub setup: SetupFlag,
    /// Loss weights lambda1,lambda2,lambda3 (must sum to 1).
    #[arg(long, value_parser = parse_lambda)]
    pub lambda: Option<(f64, f64, f64)>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long = "subset-policy", value_enum, default_value_t = SubsetPolicyFlag::Earliest)]
    pub subset_policy: SubsetPolicyFlag,
    #[arg(long = "timeline-policy", value_enum, default_value_t = TimelinePolicyFlag::Newest)]
    pub timeline_policy: TimelinePolicyFlag,
    #[arg(long, value_enum, default_value_t = DistortFlag::None)]
    pub distort: DistortFlag,
    #[arg(long = "batch-size", default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long = "learning-rate", default_value_t = 1e-4)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 7)]
    pub patience: usize,
    #[arg(long = "max-epochs", default_value_t = 100)]
    pub max_epochs: usize,
    /// Per-article user-subset capacity.
    #[arg(long = "subset-capacity", default_value_t = 10)]
    pub subset_capacity: usize,
    #[arg(long = "han-doc-vector", value_enum, default_value_t = DocVectorFlag::Attention)]
    pub han_doc_vector: DocVectorFlag,
    /// Stop distance-loss gradients from updating the article encoder.
    #[arg(long = "freeze-article-for-distance", default_value_t = false)]
    pub freeze_article_for_distance: bool,
    /// JSON training-config file; its keys override the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for checkpoint, history and manifest.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitFlag {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitFlag::Test)]
    pub split: SplitFlag,
    /// Also print the per-domain breakdown.
    #[arg(long = "by-domain", default_value_t = false)]
    pub by_domain: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodFlag {
    Mds,
    Pca,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OmegaFlag {
    Average,
    Sum,
}

impl OmegaFlag {
    pub fn convention(self) -> OmegaConvention {
        match self {
            OmegaFlag::Average => OmegaConvention::Average,
            OmegaFlag::Sum => OmegaConvention::Sum,
        }
    }
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitFlag::Test)]
    pub split: SplitFlag,
    #[arg(long, value_enum, default_value_t = MethodFlag::Mds)]
    pub method: MethodFlag,
    /// Fit the two-class Gaussian overlap on the projected points.
    #[arg(long, default_value_t = false)]
    pub overlap: bool,
    #[arg(long = "omega-convention", value_enum, default_value_t = OmegaFlag::Average)]
    pub omega_convention: OmegaFlag,
    /// Monte Carlo draws for the overlap estimate.
    #[arg(long = "mc-samples", default_value_t = 200_000)]
    pub mc_samples: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Outlier trim fraction for the PCA method.
    #[arg(long, default_value_t = 0.25)]
    pub alpha: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GridsearchArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// JSON file holding an array of [l1, l2, l3] candidates; the built-in
    /// six-candidate grid is used when omitted.
    #[arg(long)]
    pub candidates: Option<PathBuf>,
}
