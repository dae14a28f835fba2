//! Sequence models: the dual-head multi-task network and six
//! single-task baselines, plus parameter initialization, greedy
//! decoding, and checkpointing.
//!
//! Parameter names carry their group as a prefix (`shared.`, `path.`,
//! `dkt.`), which is how checkpoints recover group membership.

pub mod cells;
pub mod checkpoint;
pub mod forward;

pub use cells::{lstm_step, rnn_step, CellState, LstmVars, RnnVars};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use forward::{baseline_forward, encode_shared, forward, multitask_forward, PredictionBatch};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamGroup, ParameterStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchTag {
    MultitaskLstm,
    Rnn,
    Lstm,
    Seq2seqRnn,
    Seq2seqLstm,
    Seq2seqRnnAttn,
    Seq2seqLstmAttn,
}

impl ArchTag {
    pub const ALL: [ArchTag; 7] = [
        ArchTag::Rnn,
        ArchTag::Lstm,
        ArchTag::Seq2seqRnn,
        ArchTag::Seq2seqLstm,
        ArchTag::Seq2seqRnnAttn,
        ArchTag::Seq2seqLstmAttn,
        ArchTag::MultitaskLstm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ArchTag::MultitaskLstm => "multitask_lstm",
            ArchTag::Rnn => "rnn",
            ArchTag::Lstm => "lstm",
            ArchTag::Seq2seqRnn => "seq2seq_rnn",
            ArchTag::Seq2seqLstm => "seq2seq_lstm",
            ArchTag::Seq2seqRnnAttn => "seq2seq_rnn_attn",
            ArchTag::Seq2seqLstmAttn => "seq2seq_lstm_attn",
        }
    }

    pub fn is_lstm(self) -> bool {
        matches!(
            self,
            ArchTag::MultitaskLstm | ArchTag::Lstm | ArchTag::Seq2seqLstm | ArchTag::Seq2seqLstmAttn
        )
    }

    pub fn is_seq2seq(self) -> bool {
        matches!(
            self,
            ArchTag::Seq2seqRnn | ArchTag::Seq2seqLstm | ArchTag::Seq2seqRnnAttn | ArchTag::Seq2seqLstmAttn
        )
    }

    pub fn has_attention(self) -> bool {
        matches!(self, ArchTag::Seq2seqRnnAttn | ArchTag::Seq2seqLstmAttn)
    }
}

impl fmt::Display for ArchTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArchTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<ArchTag> {
        ArchTag::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown architecture {s:?}; expected one of {}",
                    ArchTag::ALL.map(|a| a.name()).join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_units: usize,
    /// History length fed to the encoder.
    pub n: usize,
    /// Recommended-path length.
    pub m: usize,
    pub architecture: ArchTag,
    pub no_repeat_decoding: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (what, v) in [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("hidden_units", self.hidden_units),
            ("n", self.n),
            ("m", self.m),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{what} must be positive")));
            }
        }
        if self.no_repeat_decoding && self.m > self.vocab_size {
            return Err(Error::config(format!(
                "cannot decode {} distinct concepts from a vocabulary of {}",
                self.m, self.vocab_size
            )));
        }
        Ok(())
    }
}

fn uniform_matrix(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f32).sqrt();
    let n: usize = shape.iter().product();
    let values: Vec<f32> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape, values)
}

pub(crate) fn group_of(name: &str) -> Result<ParamGroup> {
    if name.starts_with("shared.") {
        Ok(ParamGroup::Shared)
    } else if name.starts_with("path.") {
        Ok(ParamGroup::Path)
    } else if name.starts_with("dkt.") {
        Ok(ParamGroup::Dkt)
    } else {
        Err(Error::Format(format!(
            "parameter name {name:?} has no group prefix (shared./path./dkt.)"
        )))
    }
}

fn insert_lstm(store: &mut ParameterStore, rng: &mut ChaCha8Rng, prefix: &str, input: usize, hidden: usize) {
    let group = group_of(&format!("{prefix}.wx")).expect("internal prefix");
    store.insert(&format!("{prefix}.wx"), group, uniform_matrix(rng, vec![input, 4 * hidden], input));
    store.insert(&format!("{prefix}.wh"), group, uniform_matrix(rng, vec![hidden, 4 * hidden], hidden));
    // Forget-gate bias starts at 1 so early training retains memory.
    let mut b = vec![0.0f32; 4 * hidden];
    b[hidden..2 * hidden].fill(1.0);
    store.insert(&format!("{prefix}.b"), group, Tensor::new(vec![4 * hidden], b));
}

fn insert_rnn(store: &mut ParameterStore, rng: &mut ChaCha8Rng, prefix: &str, input: usize, hidden: usize) {
    let group = group_of(&format!("{prefix}.wx")).expect("internal prefix");
    store.insert(&format!("{prefix}.wx"), group, uniform_matrix(rng, vec![input, hidden], input));
    store.insert(&format!("{prefix}.wh"), group, uniform_matrix(rng, vec![hidden, hidden], hidden));
    store.insert(&format!("{prefix}.b"), group, Tensor::new(vec![hidden], vec![0.0; hidden]));
}

fn insert_proj(store: &mut ParameterStore, rng: &mut ChaCha8Rng, prefix: &str, input: usize, out: usize) {
    let group = group_of(&format!("{prefix}.w")).expect("internal prefix");
    store.insert(&format!("{prefix}.w"), group, uniform_matrix(rng, vec![input, out], input));
    store.insert(&format!("{prefix}.b"), group, Tensor::new(vec![out], vec![0.0; out]));
}

/// Build a freshly initialized parameter store for the architecture.
/// Matrices draw uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)), biases are
/// zero except the LSTM forget gate (+1); creation order is fixed so a
/// given seed always produces the same store.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ParameterStore> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParameterStore::new();
    let (t, e, h) = (config.vocab_size, config.embed_dim, config.hidden_units);

    // The embedding's fan-in is its output width: each lookup emits one
    // row of e values.
    store.insert("shared.embed", ParamGroup::Shared, uniform_matrix(&mut rng, vec![t, e], e));

    let enc_lstm = config.architecture.is_lstm();
    if enc_lstm {
        insert_lstm(&mut store, &mut rng, "shared.lstm", e, h);
    } else {
        insert_rnn(&mut store, &mut rng, "shared.rnn", e, h);
    }

    match config.architecture {
        ArchTag::MultitaskLstm => {
            insert_lstm(&mut store, &mut rng, "path.lstm", e, h);
            insert_proj(&mut store, &mut rng, "path.proj", h, t);
            insert_lstm(&mut store, &mut rng, "dkt.lstm", e, h);
            insert_proj(&mut store, &mut rng, "dkt.proj", h, 1);
        }
        ArchTag::Rnn | ArchTag::Lstm => {
            insert_proj(&mut store, &mut rng, "path.proj", h, t);
        }
        ArchTag::Seq2seqRnn | ArchTag::Seq2seqLstm | ArchTag::Seq2seqRnnAttn | ArchTag::Seq2seqLstmAttn => {
            // Attention decoders consume [embedding, context] at each step.
            let dec_in = if config.architecture.has_attention() { e + h } else { e };
            if enc_lstm {
                insert_lstm(&mut store, &mut rng, "path.lstm", dec_in, h);
            } else {
                insert_rnn(&mut store, &mut rng, "path.rnn", dec_in, h);
            }
            insert_proj(&mut store, &mut rng, "path.proj", h, t);
        }
    }
    Ok(store)
}

/// Per-step argmax over each row of `path_probs` (`[batch * m, vocab]`),
/// ties to the lowest index. With `no_repeat`, concepts already chosen
/// in the same sample are skipped.
pub fn greedy_decode(path_probs: &[f32], vocab: usize, m: usize, no_repeat: bool) -> Result<Vec<usize>> {
    assert!(vocab > 0 && m > 0, "greedy_decode needs positive dimensions");
    assert_eq!(
        path_probs.len() % (vocab * m),
        0,
        "greedy_decode: {} values do not tile rows of {vocab} over {m} steps",
        path_probs.len()
    );
    if no_repeat && m > vocab {
        return Err(Error::contract(format!(
            "cannot decode {m} distinct concepts from a vocabulary of {vocab}"
        )));
    }
    let batch = path_probs.len() / (vocab * m);
    let mut out = Vec::with_capacity(batch * m);
    for b in 0..batch {
        let mut taken = Vec::new();
        for i in 0..m {
            let row = &path_probs[(b * m + i) * vocab..(b * m + i + 1) * vocab];
            let mut best: Option<(usize, f32)> = None;
            for (c, &p) in row.iter().enumerate() {
                if no_repeat && taken.contains(&c) {
                    continue;
                }
                if best.map_or(true, |(_, bp)| p > bp) {
                    best = Some((c, p));
                }
            }
            let (c, _) = best.expect("row has at least one admissible class");
            taken.push(c);
            out.push(c);
        }
    }
    Ok(out)
}

pub(crate) use group_of as param_group_of;
