//! Article/user encoders and the linear-softmax classification head.
//!
//! Two encoder families are provided. The CNN runs three convolutional
//! filter banks (widths 3/4/5, 100 channels each) with ReLU and masked
//! max-pooling over time, concatenated into a 300-dimensional latent. The
//! HAN runs word-level and sentence-level bidirectional GRUs (hidden 50 per
//! direction) with additive attention at each level, yielding a
//! 100-dimensional latent. Article and user encoders always share a family,
//! never parameters.
//!
//! Encoders read validity masks strictly: positions outside the mask can
//! never influence a latent, so edits in the pad region leave outputs
//! bitwise unchanged.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use veracity_autodiff::{Graph, NodeId, Tensor, TensorError};

use crate::params::{ParamLeaves, ParamStore};
use crate::textpipe::{Encoding, FlatEncoding, HierEncoding};

pub const EMBEDDING_DIM: usize = 300;
pub const CNN_CHANNELS: usize = 100;
pub const CNN_WIDTHS: [usize; 3] = [3, 4, 5];
pub const CNN_LATENT: usize = 300;
pub const GRU_HIDDEN: usize = 50;
pub const HAN_LATENT: usize = 2 * GRU_HIDDEN;
pub const ATTENTION_DIM: usize = 100;

#[derive(Debug, Error)]
pub enum EncodeError {
    /// Input has no valid token; the caller substitutes an invalid-flagged
    /// zero latent.
    #[error("input is entirely padding")]
    AllPad,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Which architecture encodes articles and users.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderFamily {
    Cnn,
    Han,
}

impl EncoderFamily {
    pub fn latent_dim(&self) -> usize {
        match self {
            EncoderFamily::Cnn => CNN_LATENT,
            EncoderFamily::Han => HAN_LATENT,
        }
    }

    pub fn hierarchical(&self) -> bool {
        matches!(self, EncoderFamily::Han)
    }
}

/// How the HAN aggregates GRU annotations into a single vector at each
/// level: attention-weighted sum, or the concatenated last hidden states.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HanDocVector {
    #[default]
    Attention,
    LastHidden,
}

fn uniform_fan_in(rng: &mut ChaCha8Rng, fan_in: usize, n: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

fn embedding_init(rng: &mut ChaCha8Rng, vocab: usize, dim: usize) -> Vec<f64> {
    let mut values: Vec<f64> = (0..vocab * dim).map(|_| rng.random_range(-0.05..0.05)).collect();
    for v in values.iter_mut().take(dim) {
        *v = 0.0; // pad row stays zero
    }
    values
}

/// One encoder instance: an architecture plus the parameter-name prefix
/// ("article" or "user") it owns inside a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Encoder {
    pub family: EncoderFamily,
    pub prefix: String,
    pub doc_vector: HanDocVector,
}

impl Encoder {
    /// Register this encoder's parameters. `pretrained` overrides the
    /// seeded embedding initialization when given.
    pub fn init(
        family: EncoderFamily,
        prefix: &str,
        vocab_size: usize,
        doc_vector: HanDocVector,
        rng: &mut ChaCha8Rng,
        pretrained: Option<&Tensor>,
        store: &mut ParamStore,
    ) -> Encoder {
        let emb = match pretrained {
            Some(t) => {
                assert_eq!(t.shape(), [vocab_size, EMBEDDING_DIM], "pretrained embedding shape");
                t.values().to_vec()
            }
            None => embedding_init(rng, vocab_size, EMBEDDING_DIM),
        };
        store.add(&format!("{prefix}.emb"), vec![vocab_size, EMBEDDING_DIM], emb);
        match family {
            EncoderFamily::Cnn => {
                for w in CNN_WIDTHS {
                    let span = w * EMBEDDING_DIM;
                    store.add(
                        &format!("{prefix}.conv{w}.w"),
                        vec![CNN_CHANNELS, span],
                        uniform_fan_in(rng, span, CNN_CHANNELS * span),
                    );
                    store.add(
                        &format!("{prefix}.conv{w}.b"),
                        vec![CNN_CHANNELS],
                        uniform_fan_in(rng, span, CNN_CHANNELS),
                    );
                }
            }
            EncoderFamily::Han => {
                for level in ["word", "sent"] {
                    let input = if level == "word" { EMBEDDING_DIM } else { HAN_LATENT };
                    for dir in ["fwd", "bwd"] {
                        let p = format!("{prefix}.{level}_{dir}");
                        for gate in ["r", "z", "h"] {
                            store.add(
                                &format!("{p}.w{gate}"),
                                vec![input, GRU_HIDDEN],
                                uniform_fan_in(rng, input, input * GRU_HIDDEN),
                            );
                            store.add(
                                &format!("{p}.u{gate}"),
                                vec![GRU_HIDDEN, GRU_HIDDEN],
                                uniform_fan_in(rng, GRU_HIDDEN, GRU_HIDDEN * GRU_HIDDEN),
                            );
                            store.add(
                                &format!("{p}.b{gate}"),
                                vec![GRU_HIDDEN],
                                uniform_fan_in(rng, input, GRU_HIDDEN),
                            );
                        }
                    }
                    let p = format!("{prefix}.{level}_attn");
                    store.add(
                        &format!("{p}.w"),
                        vec![HAN_LATENT, ATTENTION_DIM],
                        uniform_fan_in(rng, HAN_LATENT, HAN_LATENT * ATTENTION_DIM),
                    );
                    store.add(
                        &format!("{p}.b"),
                        vec![ATTENTION_DIM],
                        uniform_fan_in(rng, HAN_LATENT, ATTENTION_DIM),
                    );
                    store.add(
                        &format!("{p}.ctx"),
                        vec![ATTENTION_DIM],
                        uniform_fan_in(rng, ATTENTION_DIM, ATTENTION_DIM),
                    );
                }
            }
        }
        Encoder {
            family,
            prefix: prefix.to_string(),
            doc_vector,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.family.latent_dim()
    }

    /// Encode one input into its latent vector node.
    pub fn encode(
        &self,
        g: &mut Graph,
        params: &mut ParamLeaves,
        input: &Encoding,
    ) -> Result<NodeId, EncodeError> {
        match (self.family, input) {
            (EncoderFamily::Cnn, Encoding::Flat(flat)) => self.encode_cnn(g, params, flat),
            (EncoderFamily::Han, Encoding::Hierarchical(hier)) => {
                Ok(self.encode_han(g, params, hier)?.0)
            }
            _ => Err(TensorError::Contract {
                op: "encode",
                msg: "encoding kind does not match encoder family".into(),
            }
            .into()),
        }
    }

    /// Encode and also report the attention weights per level (HAN only):
    /// word weights per sentence row and sentence weights, both padded with
    /// exact zeros at masked positions.
    pub fn encode_han_attention(
        &self,
        g: &mut Graph,
        params: &mut ParamLeaves,
        hier: &HierEncoding,
    ) -> Result<(NodeId, HanAttention), EncodeError> {
        self.encode_han(g, params, hier)
    }

    fn encode_cnn(
        &self,
        g: &mut Graph,
        params: &mut ParamLeaves,
        flat: &FlatEncoding,
    ) -> Result<NodeId, EncodeError> {
        let indices: Vec<usize> = flat
            .indices
            .iter()
            .zip(flat.mask.iter())
            .filter(|(_, &m)| m)
            .map(|(&i, _)| i)
            .collect();
        let n = indices.len();
        if n == 0 {
            return Err(EncodeError::AllPad);
        }
        let emb = params.leaf(g, &format!("{}.emb", self.prefix));
        let looked = g.embedding_lookup(emb, &indices)?;
        // zero rows let the widest filter slide over short inputs while the
        // pool mask keeps any window that overlaps a real token
        let widest = *CNN_WIDTHS.iter().max().expect("non-empty");
        let padded_rows = n.max(widest) + widest - 1;
        let x = g.pad_rows(looked, padded_rows - n)?;
        let mut pooled = Vec::with_capacity(CNN_WIDTHS.len());
        for w in CNN_WIDTHS {
            let weight = params.leaf(g, &format!("{}.conv{w}.w", self.prefix));
            let bias = params.leaf(g, &format!("{}.conv{w}.b", self.prefix));
            let conv = g.conv1d(x, weight, bias, w)?;
            let act = g.relu(conv);
            let out_len = padded_rows - w + 1;
            let mut valid = vec![false; out_len];
            for slot in valid.iter_mut().take(n) {
                *slot = true;
            }
            pooled.push(g.max_pool_rows(act, Some(&valid))?);
        }
        Ok(g.concat(&pooled)?)
    }

    fn encode_han(
        &self,
        g: &mut Graph,
        params: &mut ParamLeaves,
        hier: &HierEncoding,
    ) -> Result<(NodeId, HanAttention), EncodeError> {
        // valid rows with their in-matrix position and unmasked indices
        let sentences: Vec<(usize, Vec<usize>)> = hier
            .rows
            .iter()
            .zip(hier.mask.iter())
            .enumerate()
            .filter_map(|(r, (row, mask))| {
                let idx: Vec<usize> = row
                    .iter()
                    .zip(mask.iter())
                    .filter(|(_, &m)| m)
                    .map(|(&i, _)| i)
                    .collect();
                if idx.is_empty() {
                    None
                } else {
                    Some((r, idx))
                }
            })
            .collect();
        if sentences.is_empty() {
            return Err(EncodeError::AllPad);
        }
        let emb = params.leaf(g, &format!("{}.emb", self.prefix));
        let z = hier.rows.len();
        let w_cap = hier.rows.first().map(|r| r.len()).unwrap_or(0);
        let mut word_weights = vec![vec![0.0; w_cap]; z];
        let mut sentence_vectors = Vec::with_capacity(sentences.len());
        for (row, indices) in &sentences {
            let looked = g.embedding_lookup(emb, indices)?;
            let inputs: Vec<NodeId> = (0..indices.len())
                .map(|t| g.row(looked, t))
                .collect::<Result<_, _>>()?;
            let (vector, weights) = self.level_encode(g, params, "word", &inputs)?;
            if let Some(ws) = weights {
                for (t, value) in ws.into_iter().enumerate() {
                    word_weights[*row][t] = value;
                }
            }
            sentence_vectors.push(vector);
        }
        let (doc, sent_weights) = self.level_encode(g, params, "sent", &sentence_vectors)?;
        let mut sentence_weights = vec![0.0; z];
        if let Some(ws) = sent_weights {
            for ((row, _), value) in sentences.iter().zip(ws) {
                sentence_weights[*row] = value;
            }
        }
        Ok((
            doc,
            HanAttention {
                word: word_weights,
                sentence: sentence_weights,
            },
        ))
    }

    /// Bidirectional GRU plus additive attention over a sequence of input
    /// vectors; returns the level vector and (in attention mode) the
    /// attention weights over the sequence.
    fn level_encode(
        &self,
        g: &mut Graph,
        params: &mut ParamLeaves,
        level: &str,
        inputs: &[NodeId],
    ) -> Result<(NodeId, Option<Vec<f64>>), EncodeError> {
        let fwd = self.gru_pass(g, params, &format!("{}.{level}_fwd", self.prefix), inputs, false)?;
        let bwd = self.gru_pass(g, params, &format!("{}.{level}_bwd", self.prefix), inputs, true)?;
        let annotations: Vec<NodeId> = fwd
            .iter()
            .zip(bwd.iter())
            .map(|(&f, &b)| g.concat(&[f, b]))
            .collect::<Result<_, _>>()?;
        match self.doc_vector {
            HanDocVector::LastHidden => {
                let last = g.concat(&[fwd[fwd.len() - 1], bwd[0]])?;
                Ok((last, None))
            }
            HanDocVector::Attention => {
                let stacked = g.stack_rows(&annotations)?;
                let attn_w = params.leaf(g, &format!("{}.{level}_attn.w", self.prefix));
                let attn_b = params.leaf(g, &format!("{}.{level}_attn.b", self.prefix));
                let ctx = params.leaf(g, &format!("{}.{level}_attn.ctx", self.prefix));
                let proj = g.matmul(stacked, attn_w)?;
                let proj = g.add_row_vec(proj, attn_b)?;
                let keys = g.tanh(proj);
                let scores = g.matmul(keys, ctx)?;
                let weights = g.softmax(scores, None)?;
                let pooled = g.matmul(weights, stacked)?;
                Ok((pooled, Some(g.values(weights).to_vec())))
            }
        }
    }

    /// Single-direction GRU; returned states align with input positions.
    fn gru_pass(
        &self,
        g: &mut Graph,
        params: &mut ParamLeaves,
        prefix: &str,
        inputs: &[NodeId],
        reverse: bool,
    ) -> Result<Vec<NodeId>, EncodeError> {
        let wr = params.leaf(g, &format!("{prefix}.wr"));
        let ur = params.leaf(g, &format!("{prefix}.ur"));
        let br = params.leaf(g, &format!("{prefix}.br"));
        let wz = params.leaf(g, &format!("{prefix}.wz"));
        let uz = params.leaf(g, &format!("{prefix}.uz"));
        let bz = params.leaf(g, &format!("{prefix}.bz"));
        let wh = params.leaf(g, &format!("{prefix}.wh"));
        let uh = params.leaf(g, &format!("{prefix}.uh"));
        let bh = params.leaf(g, &format!("{prefix}.bh"));
        let mut h = g.constant(&Tensor::zeros(vec![GRU_HIDDEN]));
        let order: Vec<usize> = if reverse {
            (0..inputs.len()).rev().collect()
        } else {
            (0..inputs.len()).collect()
        };
        let mut states = vec![h; inputs.len()];
        for t in order {
            let x = inputs[t];
            let r = self.gate(g, x, h, wr, ur, br)?;
            let r = g.sigmoid(r);
            let z = self.gate(g, x, h, wz, uz, bz)?;
            let z = g.sigmoid(z);
            let rh = g.mul(r, h)?;
            let cand = {
                let xa = g.matmul(x, wh)?;
                let ha = g.matmul(rh, uh)?;
                let s = g.add(xa, ha)?;
                let s = g.add(s, bh)?;
                g.tanh(s)
            };
            // h' = (1 - z) * h + z * cand
            let neg_z = g.scale(z, -1.0);
            let one_minus_z = g.add_const(neg_z, 1.0);
            let keep = g.mul(one_minus_z, h)?;
            let update = g.mul(z, cand)?;
            h = g.add(keep, update)?;
            states[t] = h;
        }
        Ok(states)
    }

    fn gate(
        &self,
        g: &mut Graph,
        x: NodeId,
        h: NodeId,
        w: NodeId,
        u: NodeId,
        b: NodeId,
    ) -> Result<NodeId, EncodeError> {
        let xa = g.matmul(x, w)?;
        let ha = g.matmul(h, u)?;
        let s = g.add(xa, ha)?;
        Ok(g.add(s, b)?)
    }
}

/// Attention weights read off a HAN forward pass; masked positions are
/// exactly zero.
#[derive(Debug, Clone)]
pub struct HanAttention {
    /// Per sentence row, one weight per token column.
    pub word: Vec<Vec<f64>>,
    /// One weight per sentence row.
    pub sentence: Vec<f64>,
}

/// Linear layer with softmax over the two veracity classes.
#[derive(Debug, Clone)]
pub struct ClassifierHead {
    pub latent_dim: usize,
}

impl ClassifierHead {
    pub fn init(latent_dim: usize, rng: &mut ChaCha8Rng, store: &mut ParamStore) -> Self {
        store.add(
            "head.w",
            vec![latent_dim, 2],
            uniform_fan_in(rng, latent_dim, latent_dim * 2),
        );
        store.add("head.b", vec![2], uniform_fan_in(rng, latent_dim, 2));
        ClassifierHead { latent_dim }
    }

    /// Probability pair node for a latent vector.
    pub fn classify(
        &self,
        g: &mut Graph,
        params: &mut ParamLeaves,
        latent: NodeId,
    ) -> Result<NodeId, EncodeError> {
        if g.shape(latent) != [self.latent_dim] {
            return Err(TensorError::Shape {
                op: "classify",
                lhs: g.shape(latent).to_vec(),
                rhs: vec![self.latent_dim],
            }
            .into());
        }
        let w = params.leaf(g, "head.w");
        let b = params.leaf(g, "head.b");
        let logits = g.matmul(latent, w)?;
        let logits = g.add(logits, b)?;
        Ok(g.softmax(logits, None)?)
    }
}

/// Per-subset user latents: always `capacity` rows, with invalid (empty or
/// missing) users flagged rather than dropped.
#[derive(Debug, Clone)]
pub struct LatentMatrix {
    pub rows: Vec<NodeId>,
    pub valid: Vec<bool>,
}

impl LatentMatrix {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Encode the users of one subset into a fixed-capacity latent matrix.
/// Slots without a user, and users whose text is entirely padding, become
/// invalid zero rows.
pub fn encode_subset(
    g: &mut Graph,
    params: &mut ParamLeaves,
    encoder: &Encoder,
    users: &[Option<&Encoding>],
    capacity: usize,
) -> Result<LatentMatrix, EncodeError> {
    let dim = encoder.latent_dim();
    let mut rows = Vec::with_capacity(capacity);
    let mut valid = Vec::with_capacity(capacity);
    for slot in 0..capacity {
        match users.get(slot).copied().flatten() {
            Some(enc) if !enc.is_all_pad() => {
                rows.push(encoder.encode(g, params, enc)?);
                valid.push(true);
            }
            _ => {
                rows.push(g.constant(&Tensor::zeros(vec![dim])));
                valid.push(false);
            }
        }
    }
    Ok(LatentMatrix { rows, valid })
}
