//! Command implementations and the exit-code policy:
//! 0 success, 2 configuration error, 3 data error, 4 numeric failure.

use std::path::{Path, PathBuf};

use veracity_core::corpus::{self, Corpus, CorpusError, SyntheticSpec};
use veracity_core::diagnostics::{self, DiagError, MdsOptions, OverlapOptions};
use veracity_core::evaluation::{self, EvalReport};
use veracity_core::objectives::LossWeights;
use veracity_core::trainer::{
    self, Checkpoint, CorpusSplits, EncodedItem, Model, TrainError, TrainHistory, TrainingConfig,
};

use crate::args::{
    DatagenArgs, DiagnoseArgs, EvaluateArgs, GridsearchArgs, MethodFlag, SplitFlag, TrainArgs,
};
use crate::manifest::{fingerprint_of, write_manifest};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Numeric(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Config(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Config(e.to_string()),
            TrainError::Diverged { .. } => CliError::Numeric(e.to_string()),
            TrainError::Corpus(inner) => inner.into(),
            TrainError::Loss(_) | TrainError::Encode(_) | TrainError::Tensor(_) => {
                CliError::Numeric(e.to_string())
            }
            TrainError::Io(_) | TrainError::Checkpoint(_) => CliError::Data(e.to_string()),
        }
    }
}

impl From<DiagError> for CliError {
    fn from(e: DiagError) -> Self {
        match e {
            DiagError::Contract(_) => CliError::Config(e.to_string()),
            DiagError::Numeric(_) | DiagError::Rank(_) => CliError::Numeric(e.to_string()),
            DiagError::Io(_) => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    corpus::atomic_write(path, bytes).map_err(CliError::from)
}

// ---------------------------------------------------------------------------
// datagen
// ---------------------------------------------------------------------------

pub fn run_datagen(args: &DatagenArgs) -> Result<(), CliError> {
    let spec: SyntheticSpec = match &args.spec {
        None => SyntheticSpec::default(),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("bad generator spec: {e}")))?
        }
    };
    corpus::generate_synthetic_files(&spec, args.seed, &args.out)?;
    let artifacts: Vec<PathBuf> = ["articles.jsonl", "users.jsonl", "subsets.jsonl"]
        .iter()
        .map(|n| args.out.join(n))
        .collect();
    write_manifest(
        &args.out,
        "datagen",
        fingerprint_of(&(&spec, args.seed)),
        &artifacts,
    )?;
    println!(
        "wrote synthetic corpus ({} articles, seed {}) to {}",
        spec.n_articles,
        args.seed,
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

/// Resolve the training configuration from flags, then overlay the optional
/// JSON config file (file keys win).
pub fn resolve_config(args: &TrainArgs) -> Result<TrainingConfig, CliError> {
    let mut config = TrainingConfig {
        encoder_family: args.encoder.family(),
        setup: args.setup.setup(),
        batch_size: args.batch_size,
        learning_rate: args.learning_rate,
        patience: args.patience,
        max_epochs: args.max_epochs,
        seed: args.seed,
        subset_policy: args.subset_policy.policy(),
        timeline_policy: args.timeline_policy.policy(),
        distortion: args.distort.mode(),
        subset_capacity: args.subset_capacity,
        han_doc_vector: args.han_doc_vector.mode(),
        freeze_article_for_distance: args.freeze_article_for_distance,
        ..TrainingConfig::default()
    };
    if let Some((l1, l2, l3)) = args.lambda {
        config.weights = LossWeights::new(l1, l2, l3)
            .map_err(|e| CliError::Config(format!("--lambda: {e}")))?;
    } else if config.setup != trainer::Setup::Base {
        config.weights = match config.encoder_family {
            veracity_core::encoders::EncoderFamily::Cnn => LossWeights::cnn_preset(),
            veracity_core::encoders::EncoderFamily::Han => LossWeights::han_preset(),
        };
    }
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
        let overrides: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("bad config file: {e}")))?;
        let mut base = serde_json::to_value(&config).expect("config serializes");
        let serde_json::Value::Object(extra) = overrides else {
            return Err(CliError::Config("config file must hold a JSON object".into()));
        };
        let serde_json::Value::Object(ref mut map) = base else {
            unreachable!("config serializes to an object");
        };
        for (k, v) in extra {
            map.insert(k, v);
        }
        config = serde_json::from_value(base)
            .map_err(|e| CliError::Config(format!("bad config file: {e}")))?;
    }
    config.resolved().map_err(CliError::from)
}

fn load_splits(data: &Path, config: &TrainingConfig) -> Result<CorpusSplits, CliError> {
    let corpus = corpus::load_corpus(data)?;
    trainer::prepare_splits(&corpus, config).map_err(CliError::from)
}

fn write_training_outputs(
    out: &Path,
    model: &Model,
    history: &TrainHistory,
) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(out)?;
    let checkpoint_path = out.join("checkpoint.json");
    Checkpoint::from_model(model).save(&checkpoint_path)?;
    let steps_path = out.join("history_steps.csv");
    write_file(&steps_path, history.steps_csv().as_bytes())?;
    let epochs_path = out.join("history_epochs.csv");
    write_file(&epochs_path, history.epochs_csv().as_bytes())?;
    let history_path = out.join("history.json");
    write_file(
        &history_path,
        serde_json::to_string_pretty(history).expect("history serializes").as_bytes(),
    )?;
    Ok(vec![checkpoint_path, steps_path, epochs_path, history_path])
}

pub fn run_train(args: &TrainArgs) -> Result<(), CliError> {
    let config = resolve_config(args)?;
    let splits = load_splits(&args.data, &config)?;
    let outcome = trainer::train(&splits, &config).map_err(CliError::from)?;
    let artifacts = write_training_outputs(&args.out, &outcome.model, &outcome.history)?;
    write_manifest(&args.out, "train", config.fingerprint(), &artifacts)?;
    let best = &outcome.history;
    println!(
        "trained {} {} for {} epochs (best epoch {}, validation loss {:.6})",
        config.encoder_family_name(),
        config.setup.name(),
        best.stopping_epoch,
        best.best_epoch,
        best.best_validation_loss
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

fn pick_split(splits: &CorpusSplits, which: SplitFlag) -> &Corpus {
    match which {
        SplitFlag::Train => &splits.train,
        SplitFlag::Validation => &splits.validation,
        SplitFlag::Test => &splits.test,
    }
}

fn split_name(which: SplitFlag) -> &'static str {
    match which {
        SplitFlag::Train => "train",
        SplitFlag::Validation => "validation",
        SplitFlag::Test => "test",
    }
}

fn load_model_and_items(
    checkpoint: &Path,
    data: &Path,
    which: SplitFlag,
) -> Result<(Model, Vec<EncodedItem>), CliError> {
    let model = Checkpoint::load(checkpoint)
        .map_err(CliError::from)?
        .into_model()
        .map_err(CliError::from)?;
    let splits = load_splits(data, &model.config)?;
    let split = pick_split(&splits, which);
    let items = trainer::encode_split(split, &model.vocab, &model.config);
    Ok((model, items))
}

pub fn run_evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    let (model, items) = load_model_and_items(&args.checkpoint, &args.data, args.split)?;
    let report: EvalReport = evaluation::evaluate(&model, &items).map_err(CliError::from)?;
    std::fs::create_dir_all(&args.out)?;
    let json_path = args.out.join("report.json");
    write_file(
        &json_path,
        serde_json::to_string_pretty(&report).expect("report serializes").as_bytes(),
    )?;
    let csv_path = args.out.join("report.csv");
    write_file(
        &csv_path,
        report
            .table_csv(model.config.encoder_family_name(), model.config.setup.name())
            .as_bytes(),
    )?;
    write_manifest(
        &args.out,
        "evaluate",
        fingerprint_of(&(model.config.fingerprint(), split_name(args.split))),
        &[json_path, csv_path],
    )?;
    println!(
        "{} split: macro-F1 {:.4} over {} articles",
        split_name(args.split),
        report.pooled.macro_f1,
        report.predictions.len()
    );
    if args.by_domain {
        for d in &report.domains {
            println!(
                "  {}: fake P/R/F1 {:.4}/{:.4}/{:.4}  true P/R/F1 {:.4}/{:.4}/{:.4}",
                d.domain.name(),
                d.report.classes[0].precision,
                d.report.classes[0].recall,
                d.report.classes[0].f1,
                d.report.classes[1].precision,
                d.report.classes[1].recall,
                d.report.classes[1].f1,
            );
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// diagnose
// ---------------------------------------------------------------------------

pub fn run_diagnose(args: &DiagnoseArgs) -> Result<(), CliError> {
    let (model, items) = load_model_and_items(&args.checkpoint, &args.data, args.split)?;
    let (latents, labels) = trainer::split_latents(&model, &items).map_err(CliError::from)?;
    let (kept, dropped) = diagnostics::filter_zero_norm(&latents);
    if !dropped.is_empty() {
        eprintln!("dropped {} zero-norm latent rows", dropped.len());
    }
    let labels: Vec<u8> = labels
        .iter()
        .enumerate()
        .filter(|(i, _)| !dropped.contains(i))
        .map(|(_, &l)| l)
        .collect();
    std::fs::create_dir_all(&args.out)?;
    let mut artifacts = Vec::new();

    let coords = match args.method {
        MethodFlag::Mds => {
            let similarities = diagnostics::cosine_similarity_matrix(&kept).map_err(CliError::from)?;
            let options = MdsOptions {
                huber: true,
                seed: args.seed,
                ..Default::default()
            };
            let projection =
                diagnostics::robust_mds_from_similarities(&similarities, &options).map_err(CliError::from)?;
            let meta_path = args.out.join("mds.json");
            write_file(
                &meta_path,
                serde_json::to_string_pretty(&projection).expect("serializes").as_bytes(),
            )?;
            artifacts.push(meta_path);
            println!(
                "mds: stress {:.6} after {} iterations (converged: {})",
                projection.stress, projection.iterations, projection.converged
            );
            projection.coordinates
        }
        MethodFlag::Pca => {
            let result = diagnostics::robust_pca(&kept, 3, args.alpha).map_err(CliError::from)?;
            let meta_path = args.out.join("pca.json");
            write_file(
                &meta_path,
                serde_json::to_string_pretty(&result).expect("serializes").as_bytes(),
            )?;
            artifacts.push(meta_path);
            println!(
                "pca: kept {}/{} points, leading eigenvalues {:?}",
                result.kept.iter().filter(|&&k| k).count(),
                result.kept.len(),
                result
                    .eigenvalues
                    .iter()
                    .map(|v| (v * 1e4).round() / 1e4)
                    .collect::<Vec<_>>()
            );
            result.scores
        }
    };

    let omega = if args.overlap {
        let options = OverlapOptions {
            mc_samples: args.mc_samples,
            seed: args.seed,
            convention: args.omega_convention.convention(),
        };
        let report = diagnostics::overlap(&coords, &labels, &options).map_err(CliError::from)?;
        let overlap_path = args.out.join("overlap.json");
        write_file(
            &overlap_path,
            serde_json::to_string_pretty(&report).expect("serializes").as_bytes(),
        )?;
        artifacts.push(overlap_path);
        println!("overlap: omega_bar {:.4}", report.omega_bar);
        Some(report.omega_bar)
    } else {
        None
    };

    let base = args.out.join("projection");
    diagnostics::export_projection(&coords, &labels, &base, omega).map_err(CliError::from)?;
    artifacts.push(base.with_extension("csv"));
    artifacts.push(base.with_extension("svg"));
    write_manifest(
        &args.out,
        "diagnose",
        fingerprint_of(&(
            model.config.fingerprint(),
            split_name(args.split),
            matches!(args.method, MethodFlag::Pca),
            args.overlap,
            args.seed,
            args.mc_samples,
        )),
        &artifacts,
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// gridsearch
// ---------------------------------------------------------------------------

pub fn run_gridsearch(args: &GridsearchArgs) -> Result<(), CliError> {
    let config = resolve_config(&args.train)?;
    let candidates: Vec<LossWeights> = match &args.candidates {
        None => trainer::default_grid(),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
            let triples: Vec<[f64; 3]> = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("bad candidates file: {e}")))?;
            triples
                .into_iter()
                .map(|[l1, l2, l3]| {
                    LossWeights::new(l1, l2, l3)
                        .map_err(|e| CliError::Config(format!("bad candidate: {e}")))
                })
                .collect::<Result<_, _>>()?
        }
    };
    let splits = load_splits(&args.train.data, &config)?;
    let (report, best) = trainer::grid_search(&splits, &config, &candidates).map_err(CliError::from)?;
    let out = &args.train.out;
    std::fs::create_dir_all(out)?;
    let mut artifacts = write_training_outputs(out, &best.model, &best.history)?;
    let report_path = out.join("grid_report.json");
    write_file(
        &report_path,
        serde_json::to_string_pretty(&report).expect("serializes").as_bytes(),
    )?;
    let mut csv = String::from("l1,l2,l3,val_macro_f1,val_loss,best_epoch,stopping_epoch\n");
    for row in &report.rows {
        csv.push_str(&format!(
            "{},{},{},{:.6},{:.9},{},{}\n",
            row.weights.prediction,
            row.weights.article_user,
            row.weights.user_user,
            row.validation_macro_f1,
            row.validation_loss,
            row.best_epoch,
            row.stopping_epoch
        ));
    }
    let csv_path = out.join("grid_report.csv");
    write_file(&csv_path, csv.as_bytes())?;
    artifacts.push(report_path);
    artifacts.push(csv_path);
    write_manifest(out, "gridsearch", config.fingerprint(), &artifacts)?;
    println!(
        "grid search over {} candidates; best ({}, {}, {}) with validation macro-F1 {:.4}",
        report.rows.len(),
        report.best.prediction,
        report.best.article_user,
        report.best.user_user,
        report.rows[report.best_index].validation_macro_f1
    );
    Ok(())
}
