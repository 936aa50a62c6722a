//! Corpus data model, JSONL ingestion, synthetic corpus generation,
//! label-stratified splitting and user-subset construction.
//!
//! A corpus directory holds three files:
//! - `articles.jsonl`: `{"article_id", "title", "body", "label", "domain", "tweet_ids": [u64...]}`
//! - `users.jsonl`: `{"user_id", "description", "tweets": [{"tweet_id": u64, "text": str}...]}` newest first
//! - `subsets.jsonl` (optional): `{"article_id", "tweet_user_map": {"<tweet_id>": user_id}}`
//!
//! Corpora are immutable after construction.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textpipe::{split_sentences, tokenize};

/// Maximum timeline length retained per user.
pub const MAX_TIMELINE: usize = 200;

/// Default user-subset capacity.
pub const DEFAULT_SUBSET_CAPACITY: usize = 10;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("ingest error: {0}")]
    Ingest(String),
    #[error("schema error at {locator}: {msg}")]
    Schema { locator: String, msg: String },
    #[error("split error: {0}")]
    Split(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

fn schema(locator: impl Into<String>, msg: impl Into<String>) -> CorpusError {
    CorpusError::Schema {
        locator: locator.into(),
        msg: msg.into(),
    }
}

/// Source collection the article was verified by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Politifact,
    Gossipcop,
    Recovery,
    Synthetic,
}

impl Domain {
    pub const ALL: [Domain; 4] = [
        Domain::Politifact,
        Domain::Gossipcop,
        Domain::Recovery,
        Domain::Synthetic,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Domain::Politifact => "politifact",
            Domain::Gossipcop => "gossipcop",
            Domain::Recovery => "recovery",
            Domain::Synthetic => "synthetic",
        }
    }
}

/// One news article with its veracity label and the tweets that shared it.
#[derive(Debug, Clone)]
pub struct Article {
    pub article_id: String,
    pub title_tokens: Vec<String>,
    /// Body split into tokenized sentences; flat encoders concatenate them.
    pub body_sentences: Vec<Vec<String>>,
    /// 0 = fake/unreliable, 1 = true/reliable.
    pub label: u8,
    pub domain: Domain,
    /// Order preserved exactly as loaded.
    pub tweet_ids: Vec<u64>,
}

impl Article {
    /// Title tokens followed by all body tokens.
    pub fn all_tokens(&self) -> impl Iterator<Item = &String> {
        self.title_tokens
            .iter()
            .chain(self.body_sentences.iter().flatten())
    }

    /// Title as sentence 0, then the body sentences.
    pub fn sentences(&self) -> Vec<Vec<String>> {
        let mut out = Vec::with_capacity(1 + self.body_sentences.len());
        out.push(self.title_tokens.clone());
        out.extend(self.body_sentences.iter().cloned());
        out
    }
}

/// A Twitter user: profile description plus tweet timeline, newest first.
#[derive(Debug, Clone)]
pub struct UserProfile {
    pub user_id: String,
    pub description_tokens: Vec<String>,
    pub timeline: Vec<Vec<String>>,
    pub timeline_tweet_ids: Vec<u64>,
}

/// The (at most `capacity`) users tied to one article.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserSubset {
    pub article_id: String,
    pub user_ids: Vec<String>,
    pub capacity: usize,
}

/// How users are picked from an article's tweet list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubsetPolicy {
    /// Users of the numerically lowest tweet ids (early dissemination).
    Earliest,
    /// Users of the highest tweet ids (late dissemination).
    Latest,
}

/// Which end of a (newest-first) timeline feeds the user encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimelinePolicy {
    Newest,
    Oldest,
}

/// Subset-distortion ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistortionMode {
    /// Permute whole subsets across articles; composition unchanged.
    RandomSubset,
    /// Additionally reassign every user occurrence to a random subset.
    RandomSubsetComposition,
}

/// Immutable article/user collection with derived subsets.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub articles: Vec<Article>,
    pub users: Vec<UserProfile>,
    pub subsets: BTreeMap<String, UserSubset>,
    /// Resolution map from sharing tweets to their authors.
    pub tweet_user_map: HashMap<u64, String>,
    user_index: HashMap<String, usize>,
}

impl Corpus {
    /// Assemble a corpus from in-memory parts; subsets are built with the
    /// default policy (earliest, capacity 10).
    pub fn from_parts(
        articles: Vec<Article>,
        users: Vec<UserProfile>,
        tweet_user_map: HashMap<u64, String>,
    ) -> Self {
        Corpus::assemble(
            articles,
            users,
            tweet_user_map,
            SubsetPolicy::Earliest,
            DEFAULT_SUBSET_CAPACITY,
        )
    }

    fn assemble(
        articles: Vec<Article>,
        users: Vec<UserProfile>,
        tweet_user_map: HashMap<u64, String>,
        subset_policy: SubsetPolicy,
        capacity: usize,
    ) -> Self {
        let user_index = users
            .iter()
            .enumerate()
            .map(|(i, u)| (u.user_id.clone(), i))
            .collect();
        let mut corpus = Corpus {
            articles,
            users,
            subsets: BTreeMap::new(),
            tweet_user_map,
            user_index,
        };
        corpus.rebuild_subsets(subset_policy, capacity);
        corpus
    }

    pub fn user(&self, user_id: &str) -> Option<&UserProfile> {
        self.user_index.get(user_id).map(|&i| &self.users[i])
    }

    pub fn subset_for(&self, article_id: &str) -> Option<&UserSubset> {
        self.subsets.get(article_id)
    }

    /// Recompute every article's subset under a selection policy. Articles
    /// whose tweets resolve to no users get an empty subset entry removed.
    pub fn rebuild_subsets(&mut self, policy: SubsetPolicy, capacity: usize) {
        let mut subsets = BTreeMap::new();
        for article in &self.articles {
            let subset = build_subset(article, self, policy, capacity);
            if !subset.user_ids.is_empty() {
                subsets.insert(article.article_id.clone(), subset);
            }
        }
        self.subsets = subsets;
    }

    pub fn label_counts(&self) -> (usize, usize) {
        let fake = self.articles.iter().filter(|a| a.label == 0).count();
        (fake, self.articles.len() - fake)
    }
}

// ---------------------------------------------------------------------------
// Raw JSONL records
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawArticle {
    article_id: String,
    title: String,
    body: String,
    label: i64,
    domain: Domain,
    tweet_ids: Vec<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawTweet {
    tweet_id: u64,
    text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawUser {
    user_id: String,
    description: String,
    tweets: Vec<RawTweet>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawSubset {
    article_id: String,
    /// JSON object keys are decimal tweet ids.
    tweet_user_map: BTreeMap<String, String>,
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>, CorpusError> {
    let file = File::open(path)
        .map_err(|e| CorpusError::Ingest(format!("cannot open {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(&line)
            .map_err(|e| schema(format!("{}:{}", path.display(), i + 1), e.to_string()))?;
        out.push((i + 1, record));
    }
    Ok(out)
}

/// Load and validate a corpus directory. Malformed records are rejected
/// with their file and line, never skipped.
pub fn load_corpus(dir: &Path) -> Result<Corpus, CorpusError> {
    let articles_path = dir.join("articles.jsonl");
    let users_path = dir.join("users.jsonl");
    let subsets_path = dir.join("subsets.jsonl");

    let mut users = Vec::new();
    let mut user_ids = HashSet::new();
    for (line, raw) in read_jsonl::<RawUser>(&users_path)? {
        let locator = format!("{}:{line}", users_path.display());
        if !user_ids.insert(raw.user_id.clone()) {
            return Err(schema(locator, format!("duplicate user_id {}", raw.user_id)));
        }
        if raw.tweets.len() > MAX_TIMELINE {
            return Err(schema(
                locator,
                format!("timeline has {} tweets, max {MAX_TIMELINE}", raw.tweets.len()),
            ));
        }
        users.push(UserProfile {
            user_id: raw.user_id,
            description_tokens: tokenize(&raw.description),
            timeline: raw.tweets.iter().map(|t| tokenize(&t.text)).collect(),
            timeline_tweet_ids: raw.tweets.iter().map(|t| t.tweet_id).collect(),
        });
    }

    let mut articles = Vec::new();
    let mut article_ids = HashSet::new();
    for (line, raw) in read_jsonl::<RawArticle>(&articles_path)? {
        let locator = format!("{}:{line}", articles_path.display());
        if raw.label != 0 && raw.label != 1 {
            return Err(schema(locator, format!("label must be 0 or 1, got {}", raw.label)));
        }
        if !article_ids.insert(raw.article_id.clone()) {
            return Err(schema(locator, format!("duplicate article_id {}", raw.article_id)));
        }
        let title_tokens = tokenize(&raw.title);
        if title_tokens.is_empty() {
            return Err(schema(locator, "title tokenizes to nothing"));
        }
        let body_sentences: Vec<Vec<String>> = split_sentences(&raw.body)
            .iter()
            .map(|s| tokenize(s))
            .filter(|t| !t.is_empty())
            .collect();
        articles.push(Article {
            article_id: raw.article_id,
            title_tokens,
            body_sentences,
            label: raw.label as u8,
            domain: raw.domain,
            tweet_ids: raw.tweet_ids,
        });
    }

    let mut tweet_user_map = HashMap::new();
    if subsets_path.exists() {
        for (line, raw) in read_jsonl::<RawSubset>(&subsets_path)? {
            let locator = format!("{}:{line}", subsets_path.display());
            if !article_ids.contains(&raw.article_id) {
                return Err(schema(locator, format!("unknown article_id {}", raw.article_id)));
            }
            for (tweet, user) in raw.tweet_user_map {
                let tweet_id: u64 = tweet
                    .parse()
                    .map_err(|_| schema(&locator, format!("tweet id {tweet} is not a u64")))?;
                if !user_ids.contains(&user) {
                    return Err(schema(locator, format!("unknown user_id {user}")));
                }
                tweet_user_map.insert(tweet_id, user);
            }
        }
    }

    Ok(Corpus::assemble(
        articles,
        users,
        tweet_user_map,
        SubsetPolicy::Earliest,
        DEFAULT_SUBSET_CAPACITY,
    ))
}

/// Pick the subset users for one article: sort its tweet ids (ascending for
/// `Earliest`, descending for `Latest`), resolve to users, deduplicate
/// keeping the first occurrence, and take at most `capacity`.
/// Unresolvable tweets are skipped; the result may be empty.
pub fn build_subset(
    article: &Article,
    corpus: &Corpus,
    policy: SubsetPolicy,
    capacity: usize,
) -> UserSubset {
    let mut ids = article.tweet_ids.clone();
    match policy {
        SubsetPolicy::Earliest => ids.sort_unstable(),
        SubsetPolicy::Latest => ids.sort_unstable_by(|a, b| b.cmp(a)),
    }
    let mut seen = HashSet::new();
    let mut user_ids = Vec::new();
    for id in ids {
        if user_ids.len() >= capacity {
            break;
        }
        if let Some(user) = corpus.tweet_user_map.get(&id) {
            if corpus.user(user).is_some() && seen.insert(user.clone()) {
                user_ids.push(user.clone());
            }
        }
    }
    UserSubset {
        article_id: article.article_id.clone(),
        user_ids,
        capacity,
    }
}

/// Window into a newest-first timeline: `Newest` takes the head, `Oldest`
/// takes the tail reversed into chronological order.
pub fn timeline_window(
    user: &UserProfile,
    policy: TimelinePolicy,
    max_tweets: usize,
) -> Vec<&[String]> {
    let n = user.timeline.len().min(max_tweets);
    match policy {
        TimelinePolicy::Newest => user.timeline[..n].iter().map(|t| t.as_slice()).collect(),
        TimelinePolicy::Oldest => user.timeline[user.timeline.len() - n..]
            .iter()
            .rev()
            .map(|t| t.as_slice())
            .collect(),
    }
}

// ---------------------------------------------------------------------------
// Stratified splitting
// ---------------------------------------------------------------------------

/// Train/validation/test ratios plus the shuffle seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ratios: (f64, f64, f64),
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            ratios: (0.8, 0.1, 0.1),
            seed: 42,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let (a, b, c) = self.ratios;
        if a <= 0.0 || b <= 0.0 || c <= 0.0 {
            return Err(CorpusError::Config("split ratios must be positive".into()));
        }
        if (a + b + c - 1.0).abs() > 1e-9 {
            return Err(CorpusError::Config(format!(
                "split ratios must sum to 1, got {}",
                a + b + c
            )));
        }
        Ok(())
    }
}

/// Largest-remainder apportionment of `n` items to the three ratios; every
/// count is within one item of the exact share. Remainder ties go to the
/// earlier split.
fn apportion(n: usize, ratios: (f64, f64, f64)) -> [usize; 3] {
    let shares = [ratios.0, ratios.1, ratios.2].map(|r| r * n as f64);
    let mut counts = shares.map(|s| s.floor() as usize);
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&i, &j| {
        let fi = shares[i] - shares[i].floor();
        let fj = shares[j] - shares[j].floor();
        fj.partial_cmp(&fi).unwrap().then(i.cmp(&j))
    });
    for k in 0..(n - assigned) {
        counts[order[k % 3]] += 1;
    }
    counts
}

/// Label-stratified split into train/validation/test. Deterministic for a
/// fixed seed; per-class counts deviate from the exact ratio by less than
/// one article.
pub fn stratified_split(
    corpus: &Corpus,
    spec: &SplitSpec,
) -> Result<(Corpus, Corpus, Corpus), CorpusError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut membership: Vec<usize> = vec![usize::MAX; corpus.articles.len()];
    for class in [0u8, 1u8] {
        let mut idx: Vec<usize> = corpus
            .articles
            .iter()
            .enumerate()
            .filter(|(_, a)| a.label == class)
            .map(|(i, _)| i)
            .collect();
        if idx.len() < 3 {
            return Err(CorpusError::Split(format!(
                "class {class} has {} articles, need at least 3",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let counts = apportion(idx.len(), spec.ratios);
        let mut cursor = 0;
        for (split, &count) in counts.iter().enumerate() {
            for &article in &idx[cursor..cursor + count] {
                membership[article] = split;
            }
            cursor += count;
        }
    }
    let take = |split: usize| -> Corpus {
        let articles: Vec<Article> = corpus
            .articles
            .iter()
            .enumerate()
            .filter(|(i, _)| membership[*i] == split)
            .map(|(_, a)| a.clone())
            .collect();
        restrict_to_articles(corpus, articles)
    };
    Ok((take(0), take(1), take(2)))
}

/// Build a self-contained corpus around a subset of articles: subsets,
/// users and tweet resolution entries are restricted to what those
/// articles reference.
fn restrict_to_articles(corpus: &Corpus, articles: Vec<Article>) -> Corpus {
    let article_ids: HashSet<&str> = articles.iter().map(|a| a.article_id.as_str()).collect();
    let subsets: BTreeMap<String, UserSubset> = corpus
        .subsets
        .iter()
        .filter(|(id, _)| article_ids.contains(id.as_str()))
        .map(|(id, s)| (id.clone(), s.clone()))
        .collect();
    let kept_users: HashSet<&str> = subsets
        .values()
        .flat_map(|s| s.user_ids.iter().map(|u| u.as_str()))
        .collect();
    let users: Vec<UserProfile> = corpus
        .users
        .iter()
        .filter(|u| kept_users.contains(u.user_id.as_str()))
        .cloned()
        .collect();
    let kept_tweets: HashSet<u64> = articles.iter().flat_map(|a| a.tweet_ids.iter().copied()).collect();
    let tweet_user_map: HashMap<u64, String> = corpus
        .tweet_user_map
        .iter()
        .filter(|(t, _)| kept_tweets.contains(t))
        .map(|(&t, u)| (t, u.clone()))
        .collect();
    let user_index = users
        .iter()
        .enumerate()
        .map(|(i, u)| (u.user_id.clone(), i))
        .collect();
    Corpus {
        articles,
        users,
        subsets,
        tweet_user_map,
        user_index,
    }
}

// ---------------------------------------------------------------------------
// Subset distortion ablations
// ---------------------------------------------------------------------------

/// Distort article-user pairings. `RandomSubset` permutes whole subsets
/// across the articles that have one; `RandomSubsetComposition` additionally
/// shuffles every user occurrence across subset slots. Both modes conserve
/// the global multiset of user occurrences.
pub fn distort_subsets(corpus: &Corpus, mode: DistortionMode, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // articles that own a subset, in corpus order
    let owners: Vec<String> = corpus
        .articles
        .iter()
        .filter(|a| corpus.subsets.contains_key(&a.article_id))
        .map(|a| a.article_id.clone())
        .collect();
    let mut pools: Vec<Vec<String>> = owners
        .iter()
        .map(|id| corpus.subsets[id].user_ids.clone())
        .collect();
    pools.shuffle(&mut rng);

    if mode == DistortionMode::RandomSubsetComposition {
        let sizes: Vec<usize> = pools.iter().map(|p| p.len()).collect();
        let mut flat: Vec<String> = pools.into_iter().flatten().collect();
        // reshuffle until no subset holds the same user twice (users may
        // legitimately appear in several subsets, so collisions can occur)
        for _attempt in 0..100 {
            flat.shuffle(&mut rng);
            let mut ok = true;
            let mut cursor = 0;
            for &size in &sizes {
                let slice = &flat[cursor..cursor + size];
                let unique: HashSet<&String> = slice.iter().collect();
                if unique.len() != size {
                    ok = false;
                    break;
                }
                cursor += size;
            }
            if ok {
                break;
            }
        }
        let mut rebuilt = Vec::with_capacity(sizes.len());
        let mut cursor = 0;
        for &size in &sizes {
            rebuilt.push(flat[cursor..cursor + size].to_vec());
            cursor += size;
        }
        pools = rebuilt;
    }

    let capacity = corpus
        .subsets
        .values()
        .next()
        .map(|s| s.capacity)
        .unwrap_or(DEFAULT_SUBSET_CAPACITY);
    let mut subsets = BTreeMap::new();
    for (owner, users) in owners.iter().zip(pools) {
        subsets.insert(
            owner.clone(),
            UserSubset {
                article_id: owner.clone(),
                user_ids: users,
                capacity,
            },
        );
    }
    let mut out = corpus.clone();
    out.subsets = subsets;
    out
}

// ---------------------------------------------------------------------------
// Synthetic corpora
// ---------------------------------------------------------------------------

/// Knobs for the synthetic corpus generator. `rho` interpolates each subset
/// user's token source between the article's own topic mixture (1.0) and an
/// independent mixture (0.0).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_articles: usize,
    /// Fraction of true/reliable (label 1) articles.
    pub balance: f64,
    pub vocab_size: usize,
    pub rho: f64,
    /// Lower bound of the per-article class purity: each article draws its
    /// topic tokens from its own class's blocks with a probability sampled
    /// uniformly from [min_class_purity, 1]. At 1.0 the classes never share
    /// topic words; lower values create genuinely ambiguous articles.
    pub min_class_purity: f64,
    /// Upper bound of the per-article class purity.
    pub max_class_purity: f64,
    /// How strongly subset users' topic tokens are pulled back toward their
    /// article's class prototype: 0 leaves users with the article's own
    /// purity, 1 makes user text fully class-pure. Lets user content carry
    /// class signal that an ambiguous article lacks.
    pub user_purity_boost: f64,
    pub users_per_article: usize,
    pub title_tokens: usize,
    pub body_sentences: usize,
    pub tokens_per_sentence: usize,
    pub description_tokens: usize,
    pub timeline_tweets: usize,
    pub tokens_per_tweet: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_articles: 100,
            balance: 0.5,
            vocab_size: 500,
            rho: 1.0,
            min_class_purity: 1.0,
            max_class_purity: 1.0,
            user_purity_boost: 0.0,
            users_per_article: 5,
            title_tokens: 6,
            body_sentences: 5,
            tokens_per_sentence: 8,
            description_tokens: 12,
            timeline_tweets: 4,
            tokens_per_tweet: 8,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(CorpusError::Config(format!(
                "rho must lie in [0, 1], got {}",
                self.rho
            )));
        }
        if !(0.0..=1.0).contains(&self.balance) {
            return Err(CorpusError::Config(format!(
                "balance must lie in [0, 1], got {}",
                self.balance
            )));
        }
        if !(0.0..=1.0).contains(&self.min_class_purity) {
            return Err(CorpusError::Config(format!(
                "min_class_purity must lie in [0, 1], got {}",
                self.min_class_purity
            )));
        }
        if self.max_class_purity < self.min_class_purity || self.max_class_purity > 1.0 {
            return Err(CorpusError::Config(format!(
                "max_class_purity must lie in [min_class_purity, 1], got {}",
                self.max_class_purity
            )));
        }
        if !(0.0..=1.0).contains(&self.user_purity_boost) {
            return Err(CorpusError::Config(format!(
                "user_purity_boost must lie in [0, 1], got {}",
                self.user_purity_boost
            )));
        }
        if self.n_articles == 0 || self.vocab_size < 20 {
            return Err(CorpusError::Config(
                "need at least 1 article and a vocabulary of 20 words".into(),
            ));
        }
        if self.users_per_article > DEFAULT_SUBSET_CAPACITY {
            return Err(CorpusError::Config(format!(
                "users_per_article capped at {DEFAULT_SUBSET_CAPACITY}"
            )));
        }
        Ok(())
    }
}

/// Token sampler over a two-topic class mixture with a shared background
/// vocabulary. Word ids: the first 40% of the vocabulary is background,
/// the rest splits into four equal topic blocks (two per class).
struct TopicModel {
    vocab_size: usize,
    background: usize,
}

#[derive(Clone, Copy)]
struct Mixture {
    class: u8,
    /// Weight of the class's first topic block.
    first_topic: f64,
    /// Probability that a topic token comes from the own-class blocks.
    purity: f64,
}

impl TopicModel {
    fn new(vocab_size: usize) -> Self {
        TopicModel {
            vocab_size,
            background: (vocab_size as f64 * 0.4) as usize,
        }
    }

    fn word(&self, id: usize) -> String {
        format!("w{id:05}")
    }

    fn draw_mixture(&self, class: u8, purity_range: (f64, f64), rng: &mut ChaCha8Rng) -> Mixture {
        let first_topic = rng.random_range(0.0..1.0);
        let (lo, hi) = purity_range;
        let purity = if lo >= hi { lo } else { rng.random_range(lo..hi) };
        Mixture {
            class,
            first_topic,
            purity,
        }
    }

    fn sample_token(&self, mix: &Mixture, rng: &mut ChaCha8Rng) -> String {
        // 30% background noise, 70% class-topic words
        if rng.random_range(0.0..1.0) < 0.3 {
            return self.word(rng.random_range(0..self.background));
        }
        let topic_span = (self.vocab_size - self.background) / 4;
        let topic_in_class = if rng.random_range(0.0..1.0) < mix.first_topic {
            0
        } else {
            1
        };
        let class = if mix.purity >= 1.0 || rng.random_range(0.0..1.0) < mix.purity {
            mix.class as usize
        } else {
            1 - mix.class as usize
        };
        let block = class * 2 + topic_in_class;
        let start = self.background + block * topic_span;
        self.word(start + rng.random_range(0..topic_span))
    }

    fn sample_text(&self, mix: &Mixture, len: usize, rng: &mut ChaCha8Rng) -> String {
        (0..len)
            .map(|_| self.sample_token(mix, rng))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

type RawCorpus = (Vec<RawArticle>, Vec<RawUser>, Vec<RawSubset>);

fn generate_raw(spec: &SyntheticSpec, seed: u64) -> Result<RawCorpus, CorpusError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = TopicModel::new(spec.vocab_size);
    let n_true = (spec.balance * spec.n_articles as f64).round() as usize;
    let mut labels: Vec<u8> = (0..spec.n_articles)
        .map(|i| if i < n_true { 1 } else { 0 })
        .collect();
    labels.shuffle(&mut rng);

    let mut articles = Vec::with_capacity(spec.n_articles);
    let mut users = Vec::new();
    let mut subsets = Vec::with_capacity(spec.n_articles);
    let mut next_tweet_id: u64 = 1_000;
    for (i, &label) in labels.iter().enumerate() {
        let mix = model.draw_mixture(label, (spec.min_class_purity, spec.max_class_purity), &mut rng);
        let title = model.sample_text(&mix, spec.title_tokens, &mut rng);
        let body = (0..spec.body_sentences)
            .map(|_| model.sample_text(&mix, spec.tokens_per_sentence, &mut rng) + ".")
            .collect::<Vec<_>>()
            .join(" ");

        let mut tweet_ids = Vec::with_capacity(spec.users_per_article);
        let mut tweet_user_map = BTreeMap::new();
        for j in 0..spec.users_per_article {
            let user_id = format!("u{i:05}_{j}");
            // independent identity used for the (1 - rho) share of tokens
            let own_class = if rng.random_range(0.0..1.0) < 0.5 { 0 } else { 1 };
            let own_mix = model.draw_mixture(own_class, (spec.min_class_purity, spec.max_class_purity), &mut rng);
            let shared_mix = Mixture {
                purity: mix.purity + spec.user_purity_boost * (1.0 - mix.purity),
                ..mix
            };
            let user_text = |len: usize, rng: &mut ChaCha8Rng| {
                (0..len)
                    .map(|_| {
                        if rng.random_range(0.0..1.0) < spec.rho {
                            model.sample_token(&shared_mix, rng)
                        } else {
                            model.sample_token(&own_mix, rng)
                        }
                    })
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            let description = user_text(spec.description_tokens, &mut rng);
            let mut tweets = Vec::with_capacity(spec.timeline_tweets);
            for k in 0..spec.timeline_tweets {
                tweets.push(RawTweet {
                    // newest first: descending ids within the timeline
                    tweet_id: 9_000_000_000 + (users.len() as u64) * 1_000 + (spec.timeline_tweets - k) as u64,
                    text: user_text(spec.tokens_per_tweet, &mut rng),
                });
            }
            users.push(RawUser {
                user_id: user_id.clone(),
                description,
                tweets,
            });
            let share_tweet = next_tweet_id + rng.random_range(0..50) * 7 + 1;
            next_tweet_id = share_tweet;
            tweet_ids.push(share_tweet);
            tweet_user_map.insert(share_tweet.to_string(), user_id);
        }
        tweet_ids.shuffle(&mut rng);

        let article_id = format!("a{i:05}");
        articles.push(RawArticle {
            article_id: article_id.clone(),
            title,
            body,
            label: label as i64,
            domain: Domain::Synthetic,
            tweet_ids,
        });
        subsets.push(RawSubset {
            article_id,
            tweet_user_map,
        });
    }
    Ok((articles, users, subsets))
}

fn corpus_from_raw(
    articles: Vec<RawArticle>,
    users: Vec<RawUser>,
    subsets: Vec<RawSubset>,
) -> Corpus {
    let users: Vec<UserProfile> = users
        .into_iter()
        .map(|raw| UserProfile {
            user_id: raw.user_id,
            description_tokens: tokenize(&raw.description),
            timeline: raw.tweets.iter().map(|t| tokenize(&t.text)).collect(),
            timeline_tweet_ids: raw.tweets.iter().map(|t| t.tweet_id).collect(),
        })
        .collect();
    let articles: Vec<Article> = articles
        .into_iter()
        .map(|raw| Article {
            title_tokens: tokenize(&raw.title),
            body_sentences: split_sentences(&raw.body)
                .iter()
                .map(|s| tokenize(s))
                .filter(|t| !t.is_empty())
                .collect(),
            article_id: raw.article_id,
            label: raw.label as u8,
            domain: raw.domain,
            tweet_ids: raw.tweet_ids,
        })
        .collect();
    let mut tweet_user_map = HashMap::new();
    for raw in subsets {
        for (tweet, user) in raw.tweet_user_map {
            tweet_user_map.insert(tweet.parse::<u64>().expect("generated ids"), user);
        }
    }
    Corpus::assemble(
        articles,
        users,
        tweet_user_map,
        SubsetPolicy::Earliest,
        DEFAULT_SUBSET_CAPACITY,
    )
}

/// Generate a synthetic corpus; deterministic for a fixed (spec, seed).
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Corpus, CorpusError> {
    let (articles, users, subsets) = generate_raw(spec, seed)?;
    Ok(corpus_from_raw(articles, users, subsets))
}

/// Generate a synthetic corpus and write the three JSONL files into `dir`.
/// Byte-identical output for identical inputs.
pub fn generate_synthetic_files(
    spec: &SyntheticSpec,
    seed: u64,
    dir: &Path,
) -> Result<(), CorpusError> {
    let (articles, users, subsets) = generate_raw(spec, seed)?;
    std::fs::create_dir_all(dir)?;
    write_jsonl(&dir.join("articles.jsonl"), &articles)?;
    write_jsonl(&dir.join("users.jsonl"), &users)?;
    write_jsonl(&dir.join("subsets.jsonl"), &subsets)?;
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), CorpusError> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("serializable record"));
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())?;
    Ok(())
}

/// Write-then-rename so partially written outputs never appear.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_corpus_dir(
        dir: &Path,
        articles: &[&str],
        users: &[&str],
        subsets: Option<&[&str]>,
    ) {
        std::fs::create_dir_all(dir).unwrap();
        std::fs::write(dir.join("articles.jsonl"), articles.join("\n") + "\n").unwrap();
        std::fs::write(dir.join("users.jsonl"), users.join("\n") + "\n").unwrap();
        if let Some(s) = subsets {
            std::fs::write(dir.join("subsets.jsonl"), s.join("\n") + "\n").unwrap();
        }
    }

    const A1: &str = r#"{"article_id":"a1","title":"Big news","body":"Something happened. More text!","label":0,"domain":"politifact","tweet_ids":[5,9,2]}"#;
    const A2: &str = r#"{"article_id":"a2","title":"Calm day","body":"Nothing new.","label":1,"domain":"gossipcop","tweet_ids":[7]}"#;
    const A3: &str = r#"{"article_id":"a3","title":"Third","body":"Text.","label":1,"domain":"recovery","tweet_ids":[]}"#;

    fn user_line(id: &str) -> String {
        format!(
            r#"{{"user_id":"{id}","description":"I am {id}","tweets":[{{"tweet_id":11,"text":"newest tweet"}},{{"tweet_id":10,"text":"older tweet"}}]}}"#
        )
    }

    #[test]
    fn load_counts_articles_users_subsets() {
        let dir = tempfile::tempdir().unwrap();
        let users: Vec<String> = (1..=5).map(|i| user_line(&format!("u{i}"))).collect();
        let user_refs: Vec<&str> = users.iter().map(|s| s.as_str()).collect();
        let subsets = [
            r#"{"article_id":"a1","tweet_user_map":{"5":"u1","9":"u2","2":"u3"}}"#,
            r#"{"article_id":"a2","tweet_user_map":{"7":"u4"}}"#,
            r#"{"article_id":"a3","tweet_user_map":{}}"#,
        ];
        write_corpus_dir(dir.path(), &[A1, A2, A3], &user_refs, Some(&subsets));
        let corpus = load_corpus(dir.path()).unwrap();
        assert_eq!(corpus.articles.len(), 3);
        assert_eq!(corpus.users.len(), 5);
        assert_eq!(corpus.subsets.len(), 2); // a3 resolves to no users
        assert_eq!(
            corpus.subset_for("a1").unwrap().user_ids,
            vec!["u3", "u1", "u2"] // earliest policy: tweets 2, 5, 9
        );
    }

    #[test]
    fn unknown_user_in_subset_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let users = [user_line("u1")];
        let user_refs: Vec<&str> = users.iter().map(|s| s.as_str()).collect();
        let subsets = [r#"{"article_id":"a1","tweet_user_map":{"5":"ghost"}}"#];
        write_corpus_dir(dir.path(), &[A1, A2, A3], &user_refs, Some(&subsets));
        let err = load_corpus(dir.path()).unwrap_err();
        match err {
            CorpusError::Schema { locator, msg } => {
                assert!(locator.contains("subsets.jsonl:1"));
                assert!(msg.contains("ghost"));
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn bad_label_is_schema_error_with_locator() {
        let dir = tempfile::tempdir().unwrap();
        let bad = r#"{"article_id":"a9","title":"t","body":"b","label":2,"domain":"synthetic","tweet_ids":[]}"#;
        write_corpus_dir(dir.path(), &[A1, bad], &[&user_line("u1")], None);
        let err = load_corpus(dir.path()).unwrap_err();
        match err {
            CorpusError::Schema { locator, .. } => assert!(locator.ends_with("articles.jsonl:2")),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn missing_articles_file_is_ingest_error() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("users.jsonl"), "").unwrap();
        assert!(matches!(load_corpus(dir.path()), Err(CorpusError::Ingest(_))));
    }

    #[test]
    fn oversized_timeline_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let tweets: Vec<String> = (0..201)
            .map(|i| format!(r#"{{"tweet_id":{i},"text":"t"}}"#))
            .collect();
        let user = format!(
            r#"{{"user_id":"u1","description":"d","tweets":[{}]}}"#,
            tweets.join(",")
        );
        write_corpus_dir(dir.path(), &[A1, A2, A3], &[&user], None);
        assert!(matches!(load_corpus(dir.path()), Err(CorpusError::Schema { .. })));
    }

    #[test]
    fn subset_policies_follow_sorted_tweet_ids() {
        let dir = tempfile::tempdir().unwrap();
        let users: Vec<String> = (1..=4).map(|i| user_line(&format!("u{i}"))).collect();
        let user_refs: Vec<&str> = users.iter().map(|s| s.as_str()).collect();
        let article = r#"{"article_id":"a1","title":"t","body":"b","label":0,"domain":"synthetic","tweet_ids":[5,9,2,7]}"#;
        let subsets = [r#"{"article_id":"a1","tweet_user_map":{"5":"u1","9":"u2","2":"u3","7":"u4"}}"#];
        write_corpus_dir(dir.path(), &[article], &user_refs, Some(&subsets));
        let corpus = load_corpus(dir.path()).unwrap();
        let article = &corpus.articles[0];
        let earliest = build_subset(article, &corpus, SubsetPolicy::Earliest, 2);
        assert_eq!(earliest.user_ids, vec!["u3", "u1"]); // tweets 2, 5
        let latest = build_subset(article, &corpus, SubsetPolicy::Latest, 2);
        assert_eq!(latest.user_ids, vec!["u2", "u4"]); // tweets 9, 7
    }

    #[test]
    fn subset_selection_ignores_tweet_list_order() {
        let dir = tempfile::tempdir().unwrap();
        let users: Vec<String> = (1..=4).map(|i| user_line(&format!("u{i}"))).collect();
        let user_refs: Vec<&str> = users.iter().map(|s| s.as_str()).collect();
        let a = r#"{"article_id":"a1","title":"t","body":"b","label":0,"domain":"synthetic","tweet_ids":[5,9,2,7]}"#;
        let b = r#"{"article_id":"a2","title":"t","body":"b","label":1,"domain":"synthetic","tweet_ids":[7,2,9,5]}"#;
        let subsets = [
            r#"{"article_id":"a1","tweet_user_map":{"5":"u1","9":"u2","2":"u3","7":"u4"}}"#,
        ];
        write_corpus_dir(dir.path(), &[a, b], &user_refs, Some(&subsets));
        let corpus = load_corpus(dir.path()).unwrap();
        for policy in [SubsetPolicy::Earliest, SubsetPolicy::Latest] {
            let s1 = build_subset(&corpus.articles[0], &corpus, policy, 3);
            let s2 = build_subset(&corpus.articles[1], &corpus, policy, 3);
            assert_eq!(s1.user_ids, s2.user_ids);
        }
    }

    #[test]
    fn duplicate_users_deduplicate_keeping_first_then_fill() {
        let dir = tempfile::tempdir().unwrap();
        let users: Vec<String> = (1..=3).map(|i| user_line(&format!("u{i}"))).collect();
        let user_refs: Vec<&str> = users.iter().map(|s| s.as_str()).collect();
        let article = r#"{"article_id":"a1","title":"t","body":"b","label":0,"domain":"synthetic","tweet_ids":[1,2,3,4]}"#;
        // u1 tweeted twice (tweets 1 and 2)
        let subsets = [r#"{"article_id":"a1","tweet_user_map":{"1":"u1","2":"u1","3":"u2","4":"u3"}}"#];
        write_corpus_dir(dir.path(), &[article], &user_refs, Some(&subsets));
        let corpus = load_corpus(dir.path()).unwrap();
        let subset = build_subset(&corpus.articles[0], &corpus, SubsetPolicy::Earliest, 2);
        assert_eq!(subset.user_ids, vec!["u1", "u2"]);
    }

    #[test]
    fn empty_tweet_list_gives_empty_subset() {
        let dir = tempfile::tempdir().unwrap();
        write_corpus_dir(dir.path(), &[A3], &[&user_line("u1")], None);
        let corpus = load_corpus(dir.path()).unwrap();
        let subset = build_subset(&corpus.articles[0], &corpus, SubsetPolicy::Earliest, 10);
        assert!(subset.user_ids.is_empty());
    }

    #[test]
    fn timeline_windows() {
        let user = UserProfile {
            user_id: "u".into(),
            description_tokens: vec![],
            timeline: (1..=5).map(|i| vec![format!("t{i}")]).collect(),
            timeline_tweet_ids: (1..=5).rev().collect(),
        };
        let newest = timeline_window(&user, TimelinePolicy::Newest, 2);
        assert_eq!(newest, vec![&["t1".to_string()][..], &["t2".to_string()][..]]);
        let oldest = timeline_window(&user, TimelinePolicy::Oldest, 2);
        assert_eq!(oldest, vec![&["t5".to_string()][..], &["t4".to_string()][..]]);
        let empty = UserProfile {
            user_id: "e".into(),
            description_tokens: vec![],
            timeline: vec![],
            timeline_tweet_ids: vec![],
        };
        assert!(timeline_window(&empty, TimelinePolicy::Newest, 3).is_empty());
    }

    // ----- synthetic generation -----

    #[test]
    fn synthetic_is_deterministic_and_balanced() {
        let spec = SyntheticSpec {
            n_articles: 100,
            ..Default::default()
        };
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        generate_synthetic_files(&spec, 7, dir1.path()).unwrap();
        generate_synthetic_files(&spec, 7, dir2.path()).unwrap();
        for name in ["articles.jsonl", "users.jsonl", "subsets.jsonl"] {
            let a = std::fs::read(dir1.path().join(name)).unwrap();
            let b = std::fs::read(dir2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
        }
        let corpus = load_corpus(dir1.path()).unwrap();
        let (fake, true_) = corpus.label_counts();
        assert_eq!((fake, true_), (50, 50));
    }

    #[test]
    fn synthetic_rho_controls_article_user_similarity() {
        let base = SyntheticSpec {
            n_articles: 100,
            ..Default::default()
        };
        let correlated = generate_synthetic(&base, 7).unwrap();
        let independent = generate_synthetic(
            &SyntheticSpec {
                rho: 0.0,
                ..base.clone()
            },
            7,
        )
        .unwrap();
        let mean_cos = |corpus: &Corpus| -> f64 {
            let mut total = 0.0;
            let mut count = 0;
            for article in &corpus.articles {
                let Some(subset) = corpus.subset_for(&article.article_id) else {
                    continue;
                };
                let mut hist_a: HashMap<&str, f64> = HashMap::new();
                for t in article.all_tokens() {
                    *hist_a.entry(t.as_str()).or_insert(0.0) += 1.0;
                }
                let mut hist_u: HashMap<&str, f64> = HashMap::new();
                for uid in &subset.user_ids {
                    let user = corpus.user(uid).unwrap();
                    for t in &user.description_tokens {
                        *hist_u.entry(t.as_str()).or_insert(0.0) += 1.0;
                    }
                    for tweet in &user.timeline {
                        for t in tweet {
                            *hist_u.entry(t.as_str()).or_insert(0.0) += 1.0;
                        }
                    }
                }
                let dot: f64 = hist_a
                    .iter()
                    .filter_map(|(k, v)| hist_u.get(k).map(|u| u * v))
                    .sum();
                let na: f64 = hist_a.values().map(|v| v * v).sum::<f64>().sqrt();
                let nu: f64 = hist_u.values().map(|v| v * v).sum::<f64>().sqrt();
                total += dot / (na * nu);
                count += 1;
            }
            total / count as f64
        };
        let rho1 = mean_cos(&correlated);
        let rho0 = mean_cos(&independent);
        assert!(
            rho1 > rho0 + 0.05,
            "expected rho=1 similarity ({rho1:.3}) well above rho=0 ({rho0:.3})"
        );
    }

    #[test]
    fn synthetic_rejects_bad_rho() {
        let spec = SyntheticSpec {
            rho: 1.5,
            ..Default::default()
        };
        assert!(matches!(generate_synthetic(&spec, 1), Err(CorpusError::Config(_))));
    }

    // ----- stratified split -----

    fn corpus_with_labels(n_true: usize, n_fake: usize) -> Corpus {
        let articles: Vec<Article> = (0..n_true + n_fake)
            .map(|i| Article {
                article_id: format!("a{i}"),
                title_tokens: vec!["x".into()],
                body_sentences: vec![],
                label: if i < n_true { 1 } else { 0 },
                domain: Domain::Synthetic,
                tweet_ids: vec![],
            })
            .collect();
        Corpus::assemble(articles, vec![], HashMap::new(), SubsetPolicy::Earliest, 10)
    }

    #[test]
    fn split_on_published_counts_stays_within_one_article_per_class() {
        // totals from the three source collections: 14,516 true / 5,044 fake
        let corpus = corpus_with_labels(14_516, 5_044);
        let spec = SplitSpec::default();
        let (train, val, test) = stratified_split(&corpus, &spec).unwrap();
        assert_eq!(train.articles.len() + val.articles.len() + test.articles.len(), 19_560);
        let (test_fake, test_true) = test.label_counts();
        assert!(test_true == 1451 || test_true == 1452, "test true = {test_true}");
        assert!(test_fake == 504 || test_fake == 505, "test fake = {test_fake}");
        for (split, name) in [(&train, "train"), (&val, "validation"), (&test, "test")] {
            let (fake, true_) = split.label_counts();
            let ratio = match name {
                "train" => 0.8,
                _ => 0.1,
            };
            assert!((true_ as f64 - 14_516.0 * ratio).abs() < 1.0, "{name} true off");
            assert!((fake as f64 - 5_044.0 * ratio).abs() < 1.0, "{name} fake off");
        }
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let corpus = corpus_with_labels(30, 20);
        let spec = SplitSpec {
            ratios: (0.6, 0.2, 0.2),
            seed: 9,
        };
        let (t1, v1, s1) = stratified_split(&corpus, &spec).unwrap();
        let (t2, v2, s2) = stratified_split(&corpus, &spec).unwrap();
        let ids = |c: &Corpus| c.articles.iter().map(|a| a.article_id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&t1), ids(&t2));
        assert_eq!(ids(&v1), ids(&v2));
        assert_eq!(ids(&s1), ids(&s2));
        let mut all: Vec<String> = ids(&t1);
        all.extend(ids(&v1));
        all.extend(ids(&s1));
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 50);
    }

    #[test]
    fn split_requires_three_per_class() {
        let corpus = corpus_with_labels(10, 0);
        assert!(matches!(
            stratified_split(&corpus, &SplitSpec::default()),
            Err(CorpusError::Split(_))
        ));
    }

    #[test]
    fn split_rejects_bad_ratios() {
        let corpus = corpus_with_labels(10, 10);
        let spec = SplitSpec {
            ratios: (0.5, 0.2, 0.2),
            seed: 1,
        };
        assert!(matches!(stratified_split(&corpus, &spec), Err(CorpusError::Config(_))));
    }

    // ----- distortion -----

    fn occurrences(corpus: &Corpus) -> Vec<String> {
        let mut all: Vec<String> = corpus
            .subsets
            .values()
            .flat_map(|s| s.user_ids.iter().cloned())
            .collect();
        all.sort();
        all
    }

    #[test]
    fn random_subset_permutes_but_preserves_composition() {
        let spec = SyntheticSpec {
            n_articles: 12,
            ..Default::default()
        };
        let corpus = generate_synthetic(&spec, 3).unwrap();
        let distorted = distort_subsets(&corpus, DistortionMode::RandomSubset, 42);
        assert_eq!(occurrences(&corpus), occurrences(&distorted));
        // whole subsets moved intact
        let original: std::collections::HashSet<Vec<String>> = corpus
            .subsets
            .values()
            .map(|s| {
                let mut ids = s.user_ids.clone();
                ids.sort();
                ids
            })
            .collect();
        let after: std::collections::HashSet<Vec<String>> = distorted
            .subsets
            .values()
            .map(|s| {
                let mut ids = s.user_ids.clone();
                ids.sort();
                ids
            })
            .collect();
        assert_eq!(original, after);
        // and at least one article owns a different subset
        assert!(corpus
            .subsets
            .iter()
            .any(|(id, s)| distorted.subsets[id].user_ids != s.user_ids));
    }

    #[test]
    fn random_subset_composition_preserves_occurrence_multiset() {
        let spec = SyntheticSpec {
            n_articles: 12,
            ..Default::default()
        };
        let corpus = generate_synthetic(&spec, 3).unwrap();
        let distorted = distort_subsets(&corpus, DistortionMode::RandomSubsetComposition, 42);
        assert_eq!(occurrences(&corpus), occurrences(&distorted));
        // cardinalities preserved slot-wise, and no subset holds duplicates
        for subset in distorted.subsets.values() {
            let unique: std::collections::HashSet<&String> = subset.user_ids.iter().collect();
            assert_eq!(unique.len(), subset.user_ids.len());
        }
        // composition actually changed somewhere
        assert!(corpus.subsets.iter().any(|(id, s)| {
            let mut a = s.user_ids.clone();
            let mut b = distorted.subsets[id].user_ids.clone();
            a.sort();
            b.sort();
            a != b
        }));
    }

    #[test]
    fn single_article_distortion_is_identity() {
        let spec = SyntheticSpec {
            n_articles: 1,
            ..Default::default()
        };
        let corpus = generate_synthetic(&spec, 3).unwrap();
        let distorted = distort_subsets(&corpus, DistortionMode::RandomSubset, 42);
        assert_eq!(occurrences(&corpus), occurrences(&distorted));
        assert_eq!(
            corpus.subsets.values().next().unwrap().user_ids,
            distorted.subsets.values().next().unwrap().user_ids
        );
    }

    #[test]
    fn distortion_is_deterministic() {
        let spec = SyntheticSpec {
            n_articles: 10,
            ..Default::default()
        };
        let corpus = generate_synthetic(&spec, 3).unwrap();
        let a = distort_subsets(&corpus, DistortionMode::RandomSubsetComposition, 42);
        let b = distort_subsets(&corpus, DistortionMode::RandomSubsetComposition, 42);
        for (id, s) in &a.subsets {
            assert_eq!(s.user_ids, b.subsets[id].user_ids);
        }
    }
}
