//! Batching, Adam optimization, early stopping, the four experimental
//! setups and the loss-weight grid search.
//!
//! Training is deterministic for a fixed (corpus, config): initialization,
//! shuffling and every arithmetic step derive from the config seed, and
//! batch items are reduced in a fixed order regardless of worker count.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use veracity_autodiff::{Graph, Tensor, TensorError};

use crate::corpus::{
    distort_subsets, stratified_split, Corpus, CorpusError, DistortionMode, Domain, SplitSpec,
    SubsetPolicy, TimelinePolicy, DEFAULT_SUBSET_CAPACITY,
};
use crate::encoders::{
    encode_subset, ClassifierHead, EncodeError, Encoder, EncoderFamily, HanDocVector,
};
use crate::objectives::{
    article_user_loss_node, combined_loss_node, prediction_loss_node, user_user_loss_node,
    DistanceDiagnostics, LossBreakdown, LossError, LossWeights,
};
use crate::params::{ParamDump, ParamLeaves, ParamStore};
use crate::textpipe::{encode_user, Encoding, EncodingConfig, UserSetup, Vocabulary};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config error: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}, step {step}: non-finite loss")]
    Diverged { epoch: usize, step: u64 },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Checkpoint(String),
}

/// Which user text (if any) joins the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Setup {
    /// Prediction loss only; no user encoder.
    #[serde(rename = "base")]
    Base,
    /// Users represented by their profile description.
    #[serde(rename = "u_d")]
    UserDescription,
    /// Users represented by their timeline tweets.
    #[serde(rename = "u_t")]
    UserTweets,
    /// Description first, then tweets.
    #[serde(rename = "u_dt")]
    UserDescriptionTweets,
}

impl Setup {
    pub fn user_setup(&self) -> Option<UserSetup> {
        match self {
            Setup::Base => None,
            Setup::UserDescription => Some(UserSetup::Description),
            Setup::UserTweets => Some(UserSetup::Tweets),
            Setup::UserDescriptionTweets => Some(UserSetup::DescriptionTweets),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Setup::Base => "base",
            Setup::UserDescription => "u_d",
            Setup::UserTweets => "u_t",
            Setup::UserDescriptionTweets => "u_dt",
        }
    }
}

/// Full training configuration; every field has a reproducible default.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub encoder_family: EncoderFamily,
    pub setup: Setup,
    pub weights: LossWeights,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub subset_policy: SubsetPolicy,
    pub timeline_policy: TimelinePolicy,
    pub distortion: Option<DistortionMode>,
    pub distortion_seed: u64,
    pub subset_capacity: usize,
    pub split: SplitSpec,
    pub encoding: EncodingConfig,
    pub vocab_max_size: usize,
    pub vocab_min_freq: usize,
    pub han_doc_vector: HanDocVector,
    /// Ablation switch: stop distance-loss gradients from reaching the
    /// article encoder.
    pub freeze_article_for_distance: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            encoder_family: EncoderFamily::Cnn,
            setup: Setup::Base,
            weights: LossWeights::prediction_only(),
            batch_size: 32,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            patience: 7,
            max_epochs: 100,
            seed: 42,
            subset_policy: SubsetPolicy::Earliest,
            timeline_policy: TimelinePolicy::Newest,
            distortion: None,
            distortion_seed: 42,
            subset_capacity: DEFAULT_SUBSET_CAPACITY,
            split: SplitSpec::default(),
            encoding: EncodingConfig::default(),
            vocab_max_size: 50_000,
            vocab_min_freq: 1,
            han_doc_vector: HanDocVector::Attention,
            freeze_article_for_distance: false,
        }
    }
}

impl TrainingConfig {
    /// Validate and normalize: the base setup always trains on the
    /// prediction loss alone.
    pub fn resolved(mut self) -> Result<Self, TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(TrainError::Config("patience must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(TrainError::Config("max_epochs must be at least 1".into()));
        }
        if self.setup == Setup::Base {
            self.weights = LossWeights::prediction_only();
        }
        self.weights.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        self.split.validate()?;
        Ok(self)
    }

    pub fn encoder_family_name(&self) -> &'static str {
        match self.encoder_family {
            EncoderFamily::Cnn => "cnn",
            EncoderFamily::Han => "han",
        }
    }

    /// Hash of the resolved configuration; identical iff the resolved
    /// configs serialize identically.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        hex_string(&hasher.finalize())
    }
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// splitmix64; used to derive independent seeds per purpose so components
/// initialize identically whether or not other components exist.
fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_ARTICLE_INIT: u64 = 1;
const STREAM_USER_INIT: u64 = 2;
const STREAM_HEAD_INIT: u64 = 3;
const STREAM_SHUFFLE: u64 = 1000;

// ---------------------------------------------------------------------------
// Data preparation
// ---------------------------------------------------------------------------

/// The three corpora a training run sees.
#[derive(Debug, Clone)]
pub struct CorpusSplits {
    pub train: Corpus,
    pub validation: Corpus,
    pub test: Corpus,
}

/// Rebuild subsets under the configured policy, apply the optional
/// distortion ablation, then split stratified by label.
pub fn prepare_splits(corpus: &Corpus, config: &TrainingConfig) -> Result<CorpusSplits, TrainError> {
    let mut corpus = corpus.clone();
    corpus.rebuild_subsets(config.subset_policy, config.subset_capacity);
    if let Some(mode) = config.distortion {
        corpus = distort_subsets(&corpus, mode, config.distortion_seed);
    }
    let (train, validation, test) = stratified_split(&corpus, &config.split)?;
    Ok(CorpusSplits {
        train,
        validation,
        test,
    })
}

/// One article with everything the loss needs, encoded once.
#[derive(Debug, Clone)]
pub struct EncodedItem {
    pub article_id: String,
    pub label: u8,
    pub domain: Domain,
    pub article: Encoding,
    /// Encoded subset users, in subset order; empty for the base setup or
    /// for articles without a subset.
    pub users: Vec<Encoding>,
}

/// Encode a split for a model's vocabulary and configuration.
pub fn encode_split(corpus: &Corpus, vocab: &Vocabulary, config: &TrainingConfig) -> Vec<EncodedItem> {
    let hierarchical = config.encoder_family.hierarchical();
    corpus
        .articles
        .iter()
        .map(|article| {
            let encoded = if hierarchical {
                Encoding::Hierarchical(crate::textpipe::encode_hierarchical(
                    &article.sentences(),
                    vocab,
                    &config.encoding,
                ))
            } else {
                let tokens: Vec<String> = article.all_tokens().cloned().collect();
                Encoding::Flat(crate::textpipe::encode_flat(&tokens, vocab, &config.encoding))
            };
            let users = match config.setup.user_setup() {
                None => Vec::new(),
                Some(user_setup) => corpus
                    .subset_for(&article.article_id)
                    .map(|subset| {
                        subset
                            .user_ids
                            .iter()
                            .filter_map(|uid| corpus.user(uid))
                            .map(|user| {
                                encode_user(
                                    user,
                                    user_setup,
                                    vocab,
                                    &config.encoding,
                                    config.timeline_policy,
                                    hierarchical,
                                )
                            })
                            .collect()
                    })
                    .unwrap_or_default(),
            };
            EncodedItem {
                article_id: article.article_id.clone(),
                label: article.label,
                domain: article.domain,
                article: encoded,
                users,
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

/// Deterministic index batches; the final partial batch is kept. With
/// shuffling enabled the order derives from (seed, epoch).
pub fn make_batches(
    n_items: usize,
    batch_size: usize,
    seed: u64,
    epoch: usize,
    shuffle: bool,
) -> Vec<Vec<usize>> {
    let mut indices: Vec<usize> = (0..n_items).collect();
    if shuffle {
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_SHUFFLE + epoch as u64));
        indices.shuffle(&mut rng);
    }
    indices.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// Adam optimizer state aligned to the parameter store entries.
#[derive(Debug)]
pub struct Adam {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, config: &TrainingConfig) -> Self {
        Adam {
            learning_rate: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
            step: 0,
            m: store.iter().map(|e| vec![0.0; e.values.len()]).collect(),
            v: store.iter().map(|e| vec![0.0; e.values.len()]).collect(),
        }
    }

    /// One update over all parameters that received a gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Vec<f64>>]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (idx, grad) in grads.iter().enumerate() {
            let Some(grad) = grad else { continue };
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let values = store.entry_values_mut(idx);
            for i in 0..grad.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                values[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

/// A trained (or initializing) model: parameters plus the pieces needed to
/// run them.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: TrainingConfig,
    pub vocab: Vocabulary,
    pub store: ParamStore,
    pub article_encoder: Encoder,
    pub user_encoder: Option<Encoder>,
    pub head: ClassifierHead,
}

impl Model {
    /// Seeded initialization. Each component draws from its own derived
    /// stream, so e.g. the article encoder starts identically with or
    /// without a user encoder.
    pub fn init(config: &TrainingConfig, vocab: Vocabulary) -> Model {
        let mut store = ParamStore::new();
        let mut article_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_ARTICLE_INIT));
        let article_encoder = Encoder::init(
            config.encoder_family,
            "article",
            vocab.len(),
            config.han_doc_vector,
            &mut article_rng,
            None,
            &mut store,
        );
        let user_encoder = config.setup.user_setup().map(|_| {
            let mut user_rng =
                ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_USER_INIT));
            Encoder::init(
                config.encoder_family,
                "user",
                vocab.len(),
                config.han_doc_vector,
                &mut user_rng,
                None,
                &mut store,
            )
        });
        let mut head_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_HEAD_INIT));
        let head = ClassifierHead::init(config.encoder_family.latent_dim(), &mut head_rng, &mut store);
        Model {
            config: config.clone(),
            vocab,
            store,
            article_encoder,
            user_encoder,
            head,
        }
    }

    /// Forward-only pass over one encoded article: probability pair and
    /// latent vector.
    pub fn predict(&self, article: &Encoding) -> Result<([f64; 2], Vec<f64>), TrainError> {
        let mut g = Graph::new();
        let mut leaves = ParamLeaves::new(&self.store, false);
        let latent = self.article_encoder.encode(&mut g, &mut leaves, article)?;
        let probs = self.head.classify(&mut g, &mut leaves, latent)?;
        let p = g.values(probs);
        Ok(([p[0], p[1]], g.values(latent).to_vec()))
    }
}

// ---------------------------------------------------------------------------
// Per-item loss computation
// ---------------------------------------------------------------------------

struct ItemOutcome {
    breakdown: LossBreakdown,
    probs: [f64; 2],
    grads: Option<Vec<Option<Vec<f64>>>>,
    diagnostics: DistanceDiagnostics,
}

fn run_item(model: &Model, item: &EncodedItem, trainable: bool) -> Result<ItemOutcome, TrainError> {
    let config = &model.config;
    let mut g = Graph::new();
    let mut leaves = ParamLeaves::new(&model.store, trainable);
    let mut diagnostics = DistanceDiagnostics::default();

    let latent = model.article_encoder.encode(&mut g, &mut leaves, &item.article)?;
    let probs_node = model.head.classify(&mut g, &mut leaves, latent)?;
    let pred = prediction_loss_node(&mut g, probs_node, item.label)?;

    let (au, uu) = match &model.user_encoder {
        Some(user_encoder) if !item.users.is_empty() => {
            let slots: Vec<Option<&Encoding>> = item.users.iter().map(Some).collect();
            let users = encode_subset(
                &mut g,
                &mut leaves,
                user_encoder,
                &slots,
                config.subset_capacity,
            )?;
            let article_for_distance = if config.freeze_article_for_distance {
                g.constant(&Tensor::vector(g.values(latent).to_vec()))
            } else {
                latent
            };
            let au = article_user_loss_node(&mut g, article_for_distance, &users, &mut diagnostics)?;
            let uu = user_user_loss_node(&mut g, &users, &mut diagnostics)?;
            (au, uu)
        }
        _ => (g.scalar(0.0), g.scalar(0.0)),
    };

    let (combined, breakdown) = combined_loss_node(&mut g, pred, au, uu, &config.weights)?;
    let p = g.values(probs_node);
    let probs = [p[0], p[1]];
    let grads = if trainable {
        g.backward(combined)?;
        Some(leaves.collect_grads(&g))
    } else {
        None
    };
    Ok(ItemOutcome {
        breakdown,
        probs,
        grads,
        diagnostics,
    })
}

/// Mean loss breakdown and macro-F1 over a whole split (forward only).
pub fn evaluate_split(model: &Model, items: &[EncodedItem]) -> Result<(LossBreakdown, f64), TrainError> {
    let outcomes: Vec<ItemOutcome> = items
        .par_iter()
        .map(|item| run_item(model, item, false))
        .collect::<Result<_, _>>()?;
    let mut sum = LossBreakdown::default();
    let mut confusion = [[0usize; 2]; 2];
    for (item, out) in items.iter().zip(&outcomes) {
        sum.prediction += out.breakdown.prediction;
        sum.article_user += out.breakdown.article_user;
        sum.user_user += out.breakdown.user_user;
        sum.combined += out.breakdown.combined;
        let pred = if out.probs[1] >= out.probs[0] { 1 } else { 0 };
        confusion[item.label as usize][pred] += 1;
    }
    let n = items.len().max(1) as f64;
    let mean = LossBreakdown {
        prediction: sum.prediction / n,
        article_user: sum.article_user / n,
        user_user: sum.user_user / n,
        combined: sum.combined / n,
    };
    Ok((mean, macro_f1(&confusion)))
}

/// Macro-averaged F1 over the two classes of a 2x2 confusion matrix
/// (rows: truth, cols: prediction). Zero denominators count as 0.
pub fn macro_f1(confusion: &[[usize; 2]; 2]) -> f64 {
    let mut f1_sum = 0.0;
    for class in 0..2 {
        let tp = confusion[class][class] as f64;
        let fp = confusion[1 - class][class] as f64;
        let fnn = confusion[class][1 - class] as f64;
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fnn > 0.0 { tp / (tp + fnn) } else { 0.0 };
        if precision + recall > 0.0 {
            f1_sum += 2.0 * precision * recall / (precision + recall);
        }
    }
    f1_sum / 2.0
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossBreakdown,
    pub validation: LossBreakdown,
    pub validation_macro_f1: f64,
}

/// Everything recorded across a training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub stopping_epoch: usize,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub zero_norm_events: u64,
}

impl TrainHistory {
    /// Per-step loss log, one row per optimizer step.
    pub fn steps_csv(&self) -> String {
        let mut out = String::from("step,pred,article_user,user_user,combined\n");
        for s in &self.steps {
            out.push_str(&format!(
                "{},{:.12},{:.12},{:.12},{:.12}\n",
                s.step, s.loss.prediction, s.loss.article_user, s.loss.user_user, s.loss.combined
            ));
        }
        out
    }

    /// Per-epoch summary log.
    pub fn epochs_csv(&self) -> String {
        let mut out = String::from(
            "epoch,train_pred,train_article_user,train_user_user,train_combined,val_pred,val_article_user,val_user_user,val_combined,val_macro_f1\n",
        );
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{:.12},{:.12},{:.12},{:.12},{:.12},{:.12},{:.12},{:.12},{:.12}\n",
                e.epoch,
                e.train.prediction,
                e.train.article_user,
                e.train.user_user,
                e.train.combined,
                e.validation.prediction,
                e.validation.article_user,
                e.validation.user_user,
                e.validation.combined,
                e.validation_macro_f1,
            ));
        }
        out
    }
}

/// A finished training run: the best-validation model plus its history.
#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: TrainHistory,
}

/// Train on the prepared splits. The vocabulary is built on the training
/// split only. Returns the checkpoint with the best validation loss.
pub fn train(splits: &CorpusSplits, config: &TrainingConfig) -> Result<TrainOutcome, TrainError> {
    let config = config.clone().resolved()?;
    let vocab = Vocabulary::build(
        &splits.train,
        config.vocab_max_size,
        config.vocab_min_freq,
        crate::encoders::EMBEDDING_DIM,
    );
    let mut model = Model::init(&config, vocab);
    let train_items = encode_split(&splits.train, &model.vocab, &config);
    let val_items = encode_split(&splits.validation, &model.vocab, &config);
    if train_items.is_empty() {
        return Err(TrainError::Config("training split is empty".into()));
    }

    let mut adam = Adam::new(&model.store, &config);
    let mut history = TrainHistory {
        steps: Vec::new(),
        epochs: Vec::new(),
        stopping_epoch: 0,
        best_epoch: 0,
        best_validation_loss: f64::INFINITY,
        zero_norm_events: 0,
    };
    let mut best_store = model.store.clone();
    let mut bad_epochs = 0usize;
    let mut global_step: u64 = 0;

    for epoch in 1..=config.max_epochs {
        let batches = make_batches(train_items.len(), config.batch_size, config.seed, epoch, true);
        let mut train_sum = LossBreakdown::default();
        for batch in &batches {
            global_step += 1;
            let outcomes: Vec<ItemOutcome> = batch
                .par_iter()
                .map(|&i| run_item(&model, &train_items[i], true))
                .collect::<Result<_, _>>()?;
            // fixed-order reduction keeps results independent of worker count
            let mut grads: Vec<Option<Vec<f64>>> = vec![None; model.store.len()];
            let mut batch_sum = LossBreakdown::default();
            for out in &outcomes {
                history.zero_norm_events += out.diagnostics.zero_norm_events;
                batch_sum.prediction += out.breakdown.prediction;
                batch_sum.article_user += out.breakdown.article_user;
                batch_sum.user_user += out.breakdown.user_user;
                batch_sum.combined += out.breakdown.combined;
                for (slot, grad) in grads.iter_mut().zip(out.grads.as_ref().expect("trainable")) {
                    match (slot.as_mut(), grad) {
                        (_, None) => {}
                        (None, Some(gv)) => *slot = Some(gv.clone()),
                        (Some(acc), Some(gv)) => {
                            for (a, b) in acc.iter_mut().zip(gv.iter()) {
                                *a += b;
                            }
                        }
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for grad in grads.iter_mut().flatten() {
                for v in grad.iter_mut() {
                    *v *= scale;
                }
            }
            let mean = LossBreakdown {
                prediction: batch_sum.prediction * scale,
                article_user: batch_sum.article_user * scale,
                user_user: batch_sum.user_user * scale,
                combined: batch_sum.combined * scale,
            };
            if !mean.is_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    step: global_step,
                });
            }
            adam.step(&mut model.store, &grads);
            train_sum.prediction += mean.prediction * batch.len() as f64;
            train_sum.article_user += mean.article_user * batch.len() as f64;
            train_sum.user_user += mean.user_user * batch.len() as f64;
            train_sum.combined += mean.combined * batch.len() as f64;
            history.steps.push(StepRecord {
                step: global_step,
                epoch,
                loss: mean,
            });
        }
        let n = train_items.len() as f64;
        let train_mean = LossBreakdown {
            prediction: train_sum.prediction / n,
            article_user: train_sum.article_user / n,
            user_user: train_sum.user_user / n,
            combined: train_sum.combined / n,
        };
        let (val_mean, val_f1) = evaluate_split(&model, &val_items)?;
        if !val_mean.is_finite() {
            return Err(TrainError::Diverged {
                epoch,
                step: global_step,
            });
        }
        history.epochs.push(EpochRecord {
            epoch,
            train: train_mean,
            validation: val_mean,
            validation_macro_f1: val_f1,
        });
        if val_mean.combined < history.best_validation_loss {
            history.best_validation_loss = val_mean.combined;
            history.best_epoch = epoch;
            best_store = model.store.clone();
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
        }
        history.stopping_epoch = epoch;
        if bad_epochs >= config.patience {
            break;
        }
    }
    model.store = best_store;
    Ok(TrainOutcome { model, history })
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk model format: resolved config (with fingerprint), vocabulary and
/// all parameters.
#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub encoder_family: EncoderFamily,
    pub config_fingerprint: String,
    pub config: TrainingConfig,
    pub vocab: Vocabulary,
    pub params: ParamDump,
}

impl Checkpoint {
    pub fn from_model(model: &Model) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            encoder_family: model.config.encoder_family,
            config_fingerprint: model.config.fingerprint(),
            config: model.config.clone(),
            vocab: model.vocab.clone(),
            params: model.store.dump(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let json = serde_json::to_string(self).expect("checkpoint serializes");
        crate::corpus::atomic_write(path, json.as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, TrainError> {
        let data = std::fs::read_to_string(path)?;
        let ckpt: Checkpoint =
            serde_json::from_str(&data).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(TrainError::Checkpoint(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }

    /// Rebuild a runnable model from the checkpoint.
    pub fn into_model(self) -> Result<Model, TrainError> {
        let store = ParamStore::from_dump(self.params).map_err(TrainError::Checkpoint)?;
        let config = self.config;
        let article_encoder = Encoder {
            family: config.encoder_family,
            prefix: "article".into(),
            doc_vector: config.han_doc_vector,
        };
        let user_encoder = config.setup.user_setup().map(|_| Encoder {
            family: config.encoder_family,
            prefix: "user".into(),
            doc_vector: config.han_doc_vector,
        });
        let head = ClassifierHead {
            latent_dim: config.encoder_family.latent_dim(),
        };
        Ok(Model {
            config,
            vocab: self.vocab,
            store,
            article_encoder,
            user_encoder,
            head,
        })
    }
}

// ---------------------------------------------------------------------------
// Grid search
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridRow {
    pub weights: LossWeights,
    pub validation_macro_f1: f64,
    pub validation_loss: f64,
    pub best_epoch: usize,
    pub stopping_epoch: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GridSearchReport {
    pub rows: Vec<GridRow>,
    pub best_index: usize,
    pub best: LossWeights,
}

/// Train one model per weight candidate under a shared seed and pick the
/// best validation macro-F1; ties break on lower validation loss, then on
/// candidate order. Returns the report and the winning run.
pub fn grid_search(
    splits: &CorpusSplits,
    base_config: &TrainingConfig,
    candidates: &[LossWeights],
) -> Result<(GridSearchReport, TrainOutcome), TrainError> {
    if candidates.is_empty() {
        return Err(TrainError::Config("no loss-weight candidates given".into()));
    }
    for w in candidates {
        w.validate().map_err(|e| TrainError::Config(e.to_string()))?;
    }
    let mut rows = Vec::with_capacity(candidates.len());
    let mut best: Option<(usize, TrainOutcome)> = None;
    for (i, weights) in candidates.iter().enumerate() {
        let mut config = base_config.clone();
        config.weights = *weights;
        let outcome = train(splits, &config)?;
        let record = outcome
            .history
            .epochs
            .iter()
            .find(|e| e.epoch == outcome.history.best_epoch)
            .expect("best epoch recorded");
        rows.push(GridRow {
            weights: *weights,
            validation_macro_f1: record.validation_macro_f1,
            validation_loss: outcome.history.best_validation_loss,
            best_epoch: outcome.history.best_epoch,
            stopping_epoch: outcome.history.stopping_epoch,
        });
        let better = match &best {
            None => true,
            Some((bi, _)) => {
                let b = &rows[*bi];
                let r = &rows[i];
                r.validation_macro_f1 > b.validation_macro_f1
                    || (r.validation_macro_f1 == b.validation_macro_f1
                        && r.validation_loss < b.validation_loss)
            }
        };
        if better {
            best = Some((i, outcome));
        }
    }
    let (best_index, outcome) = best.expect("at least one candidate");
    let report = GridSearchReport {
        best: rows[best_index].weights,
        best_index,
        rows,
    };
    Ok((report, outcome))
}

/// The candidate grid exercised in the tuning experiments.
pub fn default_grid() -> Vec<LossWeights> {
    vec![
        LossWeights::prediction_only(),
        LossWeights::cnn_preset(),
        LossWeights::han_preset(),
        LossWeights::thirds_preset(),
        LossWeights {
            prediction: 0.8,
            article_user: 0.2,
            user_user: 0.0,
        },
        LossWeights {
            prediction: 0.8,
            article_user: 0.0,
            user_user: 0.2,
        },
    ]
}

// ---------------------------------------------------------------------------
// Misc small helpers shared by the CLI and tests
// ---------------------------------------------------------------------------

/// Mean article-user cosine distance over a split, computed from latents
/// (forward only). Articles without valid users are skipped.
pub fn mean_article_user_distance(model: &Model, items: &[EncodedItem]) -> Result<f64, TrainError> {
    let mut diag = DistanceDiagnostics::default();
    let mut sum = 0.0;
    let mut count = 0usize;
    for item in items {
        let Some(user_encoder) = &model.user_encoder else {
            break;
        };
        if item.users.is_empty() {
            continue;
        }
        let mut g = Graph::new();
        let mut leaves = ParamLeaves::new(&model.store, false);
        let article = model.article_encoder.encode(&mut g, &mut leaves, &item.article)?;
        let slots: Vec<Option<&Encoding>> = item.users.iter().map(Some).collect();
        let users = encode_subset(
            &mut g,
            &mut leaves,
            user_encoder,
            &slots,
            model.config.subset_capacity,
        )?;
        if users.valid_count() == 0 {
            continue;
        }
        let article_values = g.values(article).to_vec();
        let rows: Vec<Vec<f64>> = users.rows.iter().map(|&r| g.values(r).to_vec()).collect();
        sum += crate::objectives::article_user_loss(&article_values, &rows, &users.valid, &mut diag)?;
        count += 1;
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Article latents of a split in corpus order, with labels.
pub fn split_latents(model: &Model, items: &[EncodedItem]) -> Result<(Vec<Vec<f64>>, Vec<u8>), TrainError> {
    let results: Vec<([f64; 2], Vec<f64>)> = items
        .par_iter()
        .map(|item| model.predict(&item.article))
        .collect::<Result<_, _>>()?;
    Ok((
        results.into_iter().map(|(_, latent)| latent).collect(),
        items.iter().map(|i| i.label).collect(),
    ))
}

/// Sorted map of per-domain article counts, handy for reports.
pub fn domain_counts(corpus: &Corpus) -> BTreeMap<Domain, usize> {
    let mut out = BTreeMap::new();
    for a in &corpus.articles {
        *out.entry(a.domain).or_insert(0) += 1;
    }
    out
}
