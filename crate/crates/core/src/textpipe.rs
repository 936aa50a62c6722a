//! Text preprocessing: tokenization, sentence splitting, vocabulary
//! construction, index encoding for flat and hierarchical encoders, and
//! pretrained-embedding loading.
//!
//! The tokenizer rules are frozen here so corpora reproduce byte-for-byte:
//! lowercase, split on whitespace, split punctuation into separate tokens,
//! collapse URLs to `<url>` and @-mentions to `<user>`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use veracity_autodiff::Tensor;

use crate::corpus::{Corpus, TimelinePolicy, UserProfile};

pub const PAD_INDEX: usize = 0;
pub const UNK_INDEX: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, Error)]
pub enum TextError {
    #[error("format error in {path} line {line}: {msg}")]
    Format {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Which user text feeds the user encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserSetup {
    /// Profile description only.
    Description,
    /// Timeline tweets only.
    Tweets,
    /// Description first, then tweets.
    DescriptionTweets,
}

/// Lowercase, split on whitespace, split punctuation into separate tokens,
/// collapse URLs to `<url>` and @-mentions to `<user>`.
pub fn tokenize(text: &str) -> Vec<String> {
    let lowered = text.to_lowercase();
    let mut tokens = Vec::new();
    for chunk in lowered.split_whitespace() {
        if chunk.starts_with("http://") || chunk.starts_with("https://") || chunk.starts_with("www.") {
            tokens.push("<url>".to_string());
            continue;
        }
        if chunk.len() > 1
            && chunk.starts_with('@')
            && chunk[1..].chars().all(|c| c.is_alphanumeric() || c == '_')
        {
            tokens.push("<user>".to_string());
            continue;
        }
        let mut word = String::new();
        for c in chunk.chars() {
            if c.is_alphanumeric() {
                word.push(c);
            } else {
                if !word.is_empty() {
                    tokens.push(std::mem::take(&mut word));
                }
                tokens.push(c.to_string());
            }
        }
        if !word.is_empty() {
            tokens.push(word);
        }
    }
    tokens
}

/// Split on `.`, `!` or `?` followed by whitespace or end of input.
/// Abbreviations are not treated specially.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut sentences = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '.' || c == '!' || c == '?' {
            let at_end = i + 1 == chars.len();
            let before_space = !at_end && chars[i + 1].is_whitespace();
            if at_end || before_space {
                let sentence: String = chars[start..=i].iter().collect();
                let trimmed = sentence.trim();
                if !trimmed.is_empty() {
                    sentences.push(trimmed.to_string());
                }
                i += 1;
                while i < chars.len() && chars[i].is_whitespace() {
                    i += 1;
                }
                start = i;
                continue;
            }
        }
        i += 1;
    }
    if start < chars.len() {
        let rest: String = chars[start..].iter().collect();
        let trimmed = rest.trim();
        if !trimmed.is_empty() {
            sentences.push(trimmed.to_string());
        }
    }
    sentences
}

/// Token index map with fixed `<pad>`/`<unk>` entries.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "VocabDump", into = "VocabDump")]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    pub embedding_dim: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VocabDump {
    tokens: Vec<String>,
    dim: usize,
}

impl From<Vocabulary> for VocabDump {
    fn from(v: Vocabulary) -> Self {
        VocabDump {
            tokens: v.tokens,
            dim: v.embedding_dim,
        }
    }
}

impl TryFrom<VocabDump> for Vocabulary {
    type Error = String;

    fn try_from(d: VocabDump) -> Result<Self, String> {
        if d.tokens.len() < 2 || d.tokens[0] != PAD_TOKEN || d.tokens[1] != UNK_TOKEN {
            return Err("vocabulary dump must start with <pad>, <unk>".to_string());
        }
        Ok(Vocabulary::from_tokens(d.tokens, d.dim))
    }
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>, embedding_dim: usize) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            tokens,
            index,
            embedding_dim,
        }
    }

    /// Rank corpus tokens by frequency (ties broken lexicographically) and
    /// keep those with at least `min_freq` occurrences, up to `max_size`
    /// entries including the two specials.
    pub fn build(corpus: &Corpus, max_size: usize, min_freq: usize, embedding_dim: usize) -> Self {
        assert!(max_size >= 2, "vocabulary needs room for <pad> and <unk>");
        let mut counts: HashMap<String, usize> = HashMap::new();
        for article in &corpus.articles {
            for t in article.all_tokens() {
                *counts.entry(t.clone()).or_insert(0) += 1;
            }
        }
        for user in &corpus.users {
            for t in &user.description_tokens {
                *counts.entry(t.clone()).or_insert(0) += 1;
            }
            for tweet in &user.timeline {
                for t in tweet {
                    *counts.entry(t.clone()).or_insert(0) += 1;
                }
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        for (tok, freq) in ranked {
            if tokens.len() >= max_size || freq < min_freq {
                break;
            }
            tokens.push(tok);
        }
        Vocabulary::from_tokens(tokens, embedding_dim)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_INDEX)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(|s| s.as_str())
    }
}

/// Input-shape configuration shared by the encoders.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncodingConfig {
    /// Token cap for flat encodings.
    pub max_flat_len: usize,
    /// Maximum sentences for hierarchical encodings.
    pub max_sentences: usize,
    /// Maximum tokens per sentence.
    pub max_tokens_per_sentence: usize,
    /// Timeline tweets fed to the user encoder.
    pub max_timeline_tweets: usize,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        EncodingConfig {
            max_flat_len: 500,
            max_sentences: 50,
            max_tokens_per_sentence: 50,
            max_timeline_tweets: 50,
        }
    }
}

impl EncodingConfig {
    /// Flattened user-vector width for the given encoder family input.
    pub fn user_vector_width(&self, hierarchical: bool) -> usize {
        if hierarchical {
            self.max_sentences * self.max_tokens_per_sentence
        } else {
            self.max_flat_len
        }
    }
}

/// Fixed-length index sequence with a validity mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlatEncoding {
    pub indices: Vec<usize>,
    pub mask: Vec<bool>,
}

impl FlatEncoding {
    pub fn valid_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_all_pad(&self) -> bool {
        self.mask.iter().all(|&m| !m)
    }
}

/// Z x W index matrix with a same-shape validity mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HierEncoding {
    pub rows: Vec<Vec<usize>>,
    pub mask: Vec<Vec<bool>>,
}

impl HierEncoding {
    pub fn row_valid_len(&self, row: usize) -> usize {
        self.mask[row].iter().filter(|&&m| m).count()
    }

    pub fn is_all_pad(&self) -> bool {
        self.mask.iter().all(|row| row.iter().all(|&m| !m))
    }
}

/// Either encoder-family input for one article or user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Encoding {
    Flat(FlatEncoding),
    Hierarchical(HierEncoding),
}

impl Encoding {
    pub fn is_all_pad(&self) -> bool {
        match self {
            Encoding::Flat(f) => f.is_all_pad(),
            Encoding::Hierarchical(h) => h.is_all_pad(),
        }
    }
}

/// Truncate to `max_flat_len` and right-pad with `<pad>`.
pub fn encode_flat(tokens: &[String], vocab: &Vocabulary, config: &EncodingConfig) -> FlatEncoding {
    let keep = tokens.len().min(config.max_flat_len);
    let mut indices = Vec::with_capacity(config.max_flat_len);
    let mut mask = Vec::with_capacity(config.max_flat_len);
    for t in &tokens[..keep] {
        indices.push(vocab.index_of(t));
        mask.push(true);
    }
    indices.resize(config.max_flat_len, PAD_INDEX);
    mask.resize(config.max_flat_len, false);
    FlatEncoding { indices, mask }
}

/// First `max_sentences` sentences, each truncated/padded to
/// `max_tokens_per_sentence`; missing sentences become all-pad rows.
pub fn encode_hierarchical(
    sentences: &[Vec<String>],
    vocab: &Vocabulary,
    config: &EncodingConfig,
) -> HierEncoding {
    let (z, w) = (config.max_sentences, config.max_tokens_per_sentence);
    let mut rows = Vec::with_capacity(z);
    let mut mask = Vec::with_capacity(z);
    for s in 0..z {
        let mut row = Vec::with_capacity(w);
        let mut row_mask = Vec::with_capacity(w);
        if let Some(tokens) = sentences.get(s) {
            let keep = tokens.len().min(w);
            for t in &tokens[..keep] {
                row.push(vocab.index_of(t));
                row_mask.push(true);
            }
        }
        row.resize(w, PAD_INDEX);
        row_mask.resize(w, false);
        rows.push(row);
        mask.push(row_mask);
    }
    HierEncoding { rows, mask }
}

/// Encode a user according to the experimental setup. Flat setups
/// concatenate the selected texts; hierarchical setups give the description
/// and each tweet one sentence row, description first.
pub fn encode_user(
    user: &UserProfile,
    setup: UserSetup,
    vocab: &Vocabulary,
    config: &EncodingConfig,
    timeline_policy: TimelinePolicy,
    hierarchical: bool,
) -> Encoding {
    let tweets = crate::corpus::timeline_window(user, timeline_policy, config.max_timeline_tweets);
    if hierarchical {
        let mut sentences: Vec<Vec<String>> = Vec::new();
        if matches!(setup, UserSetup::Description | UserSetup::DescriptionTweets) {
            sentences.push(user.description_tokens.clone());
        }
        if matches!(setup, UserSetup::Tweets | UserSetup::DescriptionTweets) {
            sentences.extend(tweets.iter().map(|t| t.to_vec()));
        }
        Encoding::Hierarchical(encode_hierarchical(&sentences, vocab, config))
    } else {
        let mut tokens: Vec<String> = Vec::new();
        if matches!(setup, UserSetup::Description | UserSetup::DescriptionTweets) {
            tokens.extend(user.description_tokens.iter().cloned());
        }
        if matches!(setup, UserSetup::Tweets | UserSetup::DescriptionTweets) {
            for t in &tweets {
                tokens.extend(t.iter().cloned());
            }
        }
        Encoding::Flat(encode_flat(&tokens, vocab, config))
    }
}

/// Load a text embedding file (`token v1 v2 ...` per line) into a
/// `|vocab| x embedding_dim` matrix. Rows for tokens missing from the file
/// are drawn uniformly from [-0.05, 0.05] with the given seed; the pad row
/// is all zeros.
pub fn load_embeddings(path: &Path, vocab: &Vocabulary, seed: u64) -> Result<Tensor, TextError> {
    let dim = vocab.embedding_dim;
    let file = File::open(path)?;
    let mut from_file: HashMap<usize, Vec<f64>> = HashMap::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let token = parts.next().unwrap_or_default();
        let values: Result<Vec<f64>, _> = parts.map(|p| p.parse::<f64>()).collect();
        let values = values.map_err(|e| TextError::Format {
            path: path.display().to_string(),
            line: lineno + 1,
            msg: format!("bad float: {e}"),
        })?;
        if values.len() != dim {
            return Err(TextError::Format {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: format!("expected {dim} values, found {}", values.len()),
            });
        }
        let idx = vocab.index_of(token);
        if idx != UNK_INDEX || token == UNK_TOKEN {
            from_file.entry(idx).or_insert(values);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(vocab.len() * dim);
    for i in 0..vocab.len() {
        if i == PAD_INDEX {
            values.extend(std::iter::repeat_n(0.0, dim));
        } else if let Some(row) = from_file.get(&i) {
            values.extend_from_slice(row);
        } else {
            values.extend((0..dim).map(|_| rng.random_range(-0.05..0.05)));
        }
    }
    Ok(Tensor::matrix(vocab.len(), dim, values).expect("consistent dims"))
}
