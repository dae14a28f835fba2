//! Forward passes: shared encoder, the dual-head multi-task network,
//! and the six single-task baselines.
//!
//! Flat index layout throughout: `input_ids[b * n + i]` is step `i` of
//! sample `b`, and prediction row `b * m + i` is path step `i` of sample
//! `b`. With a teacher sequence the decoders are teacher-forced; without
//! one they free-run on their own greedy choices.

use crate::error::{Error, Result};
use crate::model::cells::{lstm_step, rnn_step, LstmVars, RnnVars};
use crate::model::{ArchTag, ModelConfig};
use crate::numerics::{Graph, ParameterStore, Var};

/// One forward pass over a batch. `path_probs` is `[batch * m, vocab]`
/// (rows softmax-normalized), `dkt_probs` is `[batch * m, 1]` and only
/// present for the multi-task model, `decoded` is the greedy per-step
/// choice, and `attention` (attention baselines only) holds the
/// `[batch * m, n]` weights over encoder steps.
#[derive(Debug)]
pub struct PredictionBatch {
    pub path_probs: Var,
    pub dkt_probs: Option<Var>,
    pub decoded: Vec<usize>,
    pub attention: Option<Var>,
}

pub struct EncoderOutput {
    /// Hidden state after each of the n input steps, each `[batch, hidden]`.
    pub states: Vec<Var>,
    pub final_h: Var,
    pub final_c: Option<Var>,
}

fn check_ids(what: &str, ids: &[usize], vocab: usize) -> Result<()> {
    for (i, &id) in ids.iter().enumerate() {
        if id >= vocab {
            return Err(Error::contract(format!(
                "{what} id {id} at position {i} out of range for vocabulary of {vocab}"
            )));
        }
    }
    Ok(())
}

fn lstm_vars(g: &mut Graph, store: &ParameterStore, prefix: &str) -> LstmVars {
    LstmVars {
        wx: g.param(store, &format!("{prefix}.wx")),
        wh: g.param(store, &format!("{prefix}.wh")),
        b: g.param(store, &format!("{prefix}.b")),
    }
}

fn rnn_vars(g: &mut Graph, store: &ParameterStore, prefix: &str) -> RnnVars {
    RnnVars {
        wx: g.param(store, &format!("{prefix}.wx")),
        wh: g.param(store, &format!("{prefix}.wh")),
        b: g.param(store, &format!("{prefix}.b")),
    }
}

enum Cell {
    Lstm(LstmVars),
    Rnn(RnnVars),
}

impl Cell {
    fn load(g: &mut Graph, store: &ParameterStore, prefix_base: &str, lstm: bool) -> Cell {
        if lstm {
            Cell::Lstm(lstm_vars(g, store, &format!("{prefix_base}.lstm")))
        } else {
            Cell::Rnn(rnn_vars(g, store, &format!("{prefix_base}.rnn")))
        }
    }

    fn step(&self, g: &mut Graph, x: Var, h: Var, c: Option<Var>, hidden: usize) -> (Var, Option<Var>) {
        match self {
            Cell::Lstm(p) => {
                let (h2, c2) = lstm_step(g, p, x, h, c.expect("LSTM state carries c"), hidden);
                (h2, Some(c2))
            }
            Cell::Rnn(p) => (rnn_step(g, p, x, h), None),
        }
    }
}

/// Embed the id sequence and run the shared recurrent encoder over all
/// n steps from a zero initial state.
pub fn encode_shared(
    g: &mut Graph,
    store: &ParameterStore,
    config: &ModelConfig,
    input_ids: &[usize],
) -> Result<EncoderOutput> {
    config.validate()?;
    let n = config.n;
    if input_ids.is_empty() || input_ids.len() % n != 0 {
        return Err(Error::contract(format!(
            "encoder expects a multiple of n={n} input ids, got {}",
            input_ids.len()
        )));
    }
    check_ids("input", input_ids, config.vocab_size)?;
    let batch = input_ids.len() / n;
    let hidden = config.hidden_units;

    let embed = g.param(store, "shared.embed");
    let cell = Cell::load(g, store, "shared", config.architecture.is_lstm());

    let mut h = g.zeros(&[batch, hidden]);
    let mut c = config.architecture.is_lstm().then(|| g.zeros(&[batch, hidden]));
    let mut states = Vec::with_capacity(n);
    for i in 0..n {
        let step_ids: Vec<usize> = (0..batch).map(|b| input_ids[b * n + i]).collect();
        let x = g.gather_rows(embed, &step_ids);
        let (h2, c2) = cell.step(g, x, h, c, hidden);
        h = h2;
        c = c2;
        states.push(h);
    }
    Ok(EncoderOutput { states, final_h: h, final_c: c })
}

/// Greedy argmax over one step's probability rows, honoring the
/// per-sample no-repeat mask.
fn pick_step(
    g: &Graph,
    probs: Var,
    taken: &mut [Vec<usize>],
    no_repeat: bool,
) -> Vec<usize> {
    let vocab = g.shape(probs)[1];
    let values = g.value(probs);
    let mut choices = Vec::with_capacity(taken.len());
    for (b, taken_b) in taken.iter_mut().enumerate() {
        let row = &values[b * vocab..(b + 1) * vocab];
        let mut best: Option<(usize, f32)> = None;
        for (cls, &p) in row.iter().enumerate() {
            if no_repeat && taken_b.contains(&cls) {
                continue;
            }
            if best.map_or(true, |(_, bp)| p > bp) {
                best = Some((cls, p));
            }
        }
        let (cls, _) = best.expect("vocabulary larger than path length");
        taken_b.push(cls);
        choices.push(cls);
    }
    choices
}

struct StepPlan<'a> {
    teacher: Option<&'a [usize]>,
    batch: usize,
    m: usize,
    no_repeat: bool,
}

impl StepPlan<'_> {
    /// Ids feeding step `i`: step 0 gets the last history item, later
    /// steps get the previous teacher target (training) or the model's
    /// own previous choice (free-running).
    fn inputs(&self, i: usize, last_history: &[usize], prev_choice: &[usize]) -> Vec<usize> {
        if i == 0 {
            return last_history.to_vec();
        }
        match self.teacher {
            Some(t) => (0..self.batch).map(|b| t[b * self.m + (i - 1)]).collect(),
            None => prev_choice.to_vec(),
        }
    }
}

/// Shared-encoder, dual-head forward pass. The encoder's final state
/// seeds both task heads; each head unrolls m steps over the same input
/// sequence (teacher-forced or free-running), producing per-step
/// concept distributions and correctness probabilities.
pub fn multitask_forward(
    g: &mut Graph,
    store: &ParameterStore,
    config: &ModelConfig,
    input_ids: &[usize],
    teacher_targets: Option<&[usize]>,
    training: bool,
) -> Result<PredictionBatch> {
    if config.architecture != ArchTag::MultitaskLstm {
        return Err(Error::contract(format!(
            "multitask_forward called with architecture {}",
            config.architecture
        )));
    }
    let teacher = validate_teacher(config, input_ids, teacher_targets, training)?;
    let enc = encode_shared(g, store, config, input_ids)?;
    let (batch, n, m, hidden) = (input_ids.len() / config.n, config.n, config.m, config.hidden_units);

    let embed = g.param(store, "shared.embed");
    let path_cell = Cell::load(g, store, "path", true);
    let dkt_cell = Cell::load(g, store, "dkt", true);
    let path_w = g.param(store, "path.proj.w");
    let path_b = g.param(store, "path.proj.b");
    let dkt_w = g.param(store, "dkt.proj.w");
    let dkt_b = g.param(store, "dkt.proj.b");

    let mut path_h = enc.final_h;
    let mut path_c = enc.final_c;
    let mut dkt_h = enc.final_h;
    let mut dkt_c = enc.final_c;

    let last_history: Vec<usize> = (0..batch).map(|b| input_ids[b * n + n - 1]).collect();
    let plan = StepPlan { teacher, batch, m, no_repeat: config.no_repeat_decoding };
    let mut taken: Vec<Vec<usize>> = vec![Vec::new(); batch];
    let mut prev_choice: Vec<usize> = Vec::new();
    let mut prob_steps = Vec::with_capacity(m);
    let mut dkt_steps = Vec::with_capacity(m);
    let mut decoded_steps = Vec::with_capacity(m);

    for i in 0..m {
        let ids = plan.inputs(i, &last_history, &prev_choice);
        let x = g.gather_rows(embed, &ids);

        let (h2, c2) = path_cell.step(g, x, path_h, path_c, hidden);
        path_h = h2;
        path_c = c2;
        let logits = g.matmul(path_h, path_w);
        let logits = g.add_row(logits, path_b);
        let probs = g.softmax_rows(logits);
        prob_steps.push(probs);

        let (h2, c2) = dkt_cell.step(g, x, dkt_h, dkt_c, hidden);
        dkt_h = h2;
        dkt_c = c2;
        let dlogit = g.matmul(dkt_h, dkt_w);
        let dlogit = g.add_row(dlogit, dkt_b);
        dkt_steps.push(g.sigmoid(dlogit));

        let choice = pick_step(g, probs, &mut taken, plan.no_repeat);
        decoded_steps.push(choice.clone());
        prev_choice = choice;
    }

    Ok(PredictionBatch {
        path_probs: g.interleave_rows(&prob_steps),
        dkt_probs: Some(g.interleave_rows(&dkt_steps)),
        decoded: interleave_choices(&decoded_steps, batch),
        attention: None,
    })
}

/// Single-task baselines. `rnn`/`lstm` continue one recurrent network
/// past the history; the seq2seq variants decode with a separate
/// network seeded by the encoder's final state; the attention variants
/// additionally mix encoder states into each decoder input.
pub fn baseline_forward(
    g: &mut Graph,
    store: &ParameterStore,
    config: &ModelConfig,
    input_ids: &[usize],
    teacher_targets: Option<&[usize]>,
    training: bool,
) -> Result<PredictionBatch> {
    if config.architecture == ArchTag::MultitaskLstm {
        return Err(Error::config(format!(
            "baseline_forward called with architecture {}",
            config.architecture
        )));
    }
    let teacher = validate_teacher(config, input_ids, teacher_targets, training)?;
    let enc = encode_shared(g, store, config, input_ids)?;
    let (batch, n, m, hidden) = (input_ids.len() / config.n, config.n, config.m, config.hidden_units);
    let arch = config.architecture;

    let embed = g.param(store, "shared.embed");
    let path_w = g.param(store, "path.proj.w");
    let path_b = g.param(store, "path.proj.b");

    let last_history: Vec<usize> = (0..batch).map(|b| input_ids[b * n + n - 1]).collect();
    let plan = StepPlan { teacher, batch, m, no_repeat: config.no_repeat_decoding };
    let mut taken: Vec<Vec<usize>> = vec![Vec::new(); batch];
    let mut prev_choice: Vec<usize> = Vec::new();
    let mut prob_steps = Vec::with_capacity(m);
    let mut decoded_steps = Vec::with_capacity(m);
    let mut attn_steps = Vec::new();

    if arch.is_seq2seq() {
        let dec_cell = Cell::load(g, store, "path", arch.is_lstm());
        let mut h = enc.final_h;
        let mut c = enc.final_c;
        for i in 0..m {
            let ids = plan.inputs(i, &last_history, &prev_choice);
            let x = g.gather_rows(embed, &ids);
            let x = if arch.has_attention() {
                // Dot-product attention: the previous decoder state
                // scores every encoder state.
                let scores: Vec<Var> = enc.states.iter().map(|&s| g.row_dot(h, s)).collect();
                let scores = g.concat_cols(&scores);
                let alpha = g.softmax_rows(scores);
                attn_steps.push(alpha);
                let mut context: Option<Var> = None;
                for (j, &s) in enc.states.iter().enumerate() {
                    let a_j = g.slice_cols(alpha, j, j + 1);
                    let weighted = g.scale_rows(s, a_j);
                    context = Some(match context {
                        Some(acc) => g.add(acc, weighted),
                        None => weighted,
                    });
                }
                let context = context.expect("encoder has at least one state");
                g.concat_cols(&[x, context])
            } else {
                x
            };
            let (h2, c2) = dec_cell.step(g, x, h, c, hidden);
            h = h2;
            c = c2;
            let logits = g.matmul(h, path_w);
            let logits = g.add_row(logits, path_b);
            let probs = g.softmax_rows(logits);
            prob_steps.push(probs);
            let choice = pick_step(g, probs, &mut taken, plan.no_repeat);
            decoded_steps.push(choice.clone());
            prev_choice = choice;
        }
    } else {
        // Single network: the first prediction reads directly off the
        // final history state; later steps consume the previous target
        // or choice with the same cell.
        let cell = Cell::load(g, store, "shared", arch.is_lstm());
        let mut h = enc.final_h;
        let mut c = enc.final_c;
        for i in 0..m {
            if i > 0 {
                let ids = plan.inputs(i, &last_history, &prev_choice);
                let x = g.gather_rows(embed, &ids);
                let (h2, c2) = cell.step(g, x, h, c, hidden);
                h = h2;
                c = c2;
            }
            let logits = g.matmul(h, path_w);
            let logits = g.add_row(logits, path_b);
            let probs = g.softmax_rows(logits);
            prob_steps.push(probs);
            let choice = pick_step(g, probs, &mut taken, plan.no_repeat);
            decoded_steps.push(choice.clone());
            prev_choice = choice;
        }
    }

    Ok(PredictionBatch {
        path_probs: g.interleave_rows(&prob_steps),
        dkt_probs: None,
        decoded: interleave_choices(&decoded_steps, batch),
        attention: if attn_steps.is_empty() { None } else { Some(g.interleave_rows(&attn_steps)) },
    })
}

/// Dispatch on the configured architecture.
pub fn forward(
    g: &mut Graph,
    store: &ParameterStore,
    config: &ModelConfig,
    input_ids: &[usize],
    teacher_targets: Option<&[usize]>,
    training: bool,
) -> Result<PredictionBatch> {
    if config.architecture == ArchTag::MultitaskLstm {
        multitask_forward(g, store, config, input_ids, teacher_targets, training)
    } else {
        baseline_forward(g, store, config, input_ids, teacher_targets, training)
    }
}

fn validate_teacher<'a>(
    config: &ModelConfig,
    input_ids: &[usize],
    teacher_targets: Option<&'a [usize]>,
    training: bool,
) -> Result<Option<&'a [usize]>> {
    if training && teacher_targets.is_none() {
        return Err(Error::contract(
            "training mode requires teacher targets; pass the target sequence or switch to inference",
        ));
    }
    let teacher = if training { teacher_targets } else { None };
    if let Some(t) = teacher {
        let batch = input_ids.len() / config.n.max(1);
        if t.len() != batch * config.m {
            return Err(Error::contract(format!(
                "teacher targets have {} entries, expected batch {batch} times m {}",
                t.len(),
                config.m
            )));
        }
        check_ids("teacher", t, config.vocab_size)?;
    }
    Ok(teacher)
}

fn interleave_choices(steps: &[Vec<usize>], batch: usize) -> Vec<usize> {
    let m = steps.len();
    let mut out = Vec::with_capacity(batch * m);
    for b in 0..batch {
        for step in steps {
            out.push(step[b]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    fn config(arch: ArchTag) -> ModelConfig {
        ModelConfig {
            vocab_size: 5,
            embed_dim: 4,
            hidden_units: 3,
            n: 3,
            m: 2,
            architecture: arch,
            no_repeat_decoding: false,
        }
    }

    fn zeroed_store(config: &ModelConfig) -> ParameterStore {
        let mut store = init_params(config, 0).unwrap();
        for i in 0..store.len() {
            store.tensor_at_mut(i).values_mut().fill(0.0);
        }
        store
    }

    #[test]
    fn zero_weights_give_uniform_paths_and_half_dkt() {
        let cfg = config(ArchTag::MultitaskLstm);
        let store = zeroed_store(&cfg);
        let mut g = Graph::new();
        let out =
            multitask_forward(&mut g, &store, &cfg, &[0, 1, 2, 3, 4, 0], Some(&[1, 2, 3, 4]), true)
                .unwrap();
        for &p in g.value(out.path_probs) {
            assert!((p - 0.2).abs() < 1e-6, "expected uniform, got {p}");
        }
        for &p in g.value(out.dkt_probs.unwrap()) {
            assert_eq!(p, 0.5);
        }
        assert_eq!(out.decoded.len(), 4);
        assert!(out.decoded.iter().all(|&d| d == 0), "uniform rows tie-break to class 0");
    }

    #[test]
    fn zero_weights_uniform_for_every_baseline() {
        for arch in ArchTag::ALL.into_iter().filter(|a| *a != ArchTag::MultitaskLstm) {
            let cfg = config(arch);
            let store = zeroed_store(&cfg);
            let mut g = Graph::new();
            let out = baseline_forward(&mut g, &store, &cfg, &[0, 1, 2], None, false).unwrap();
            for &p in g.value(out.path_probs) {
                assert!((p - 0.2).abs() < 1e-6, "{arch}: expected uniform, got {p}");
            }
            assert!(out.dkt_probs.is_none(), "{arch} has no knowledge head");
        }
    }

    #[test]
    fn path_prob_rows_sum_to_one() {
        let cfg = config(ArchTag::MultitaskLstm);
        let store = init_params(&cfg, 3).unwrap();
        let mut g = Graph::new();
        let out = multitask_forward(&mut g, &store, &cfg, &[0, 1, 2, 3, 4, 0], None, false).unwrap();
        let vocab = cfg.vocab_size;
        for row in g.value(out.path_probs).chunks(vocab) {
            let s: f32 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-5, "row sums to {s}");
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        for arch in [ArchTag::Seq2seqRnnAttn, ArchTag::Seq2seqLstmAttn] {
            let cfg = config(arch);
            let store = init_params(&cfg, 5).unwrap();
            let mut g = Graph::new();
            let out = baseline_forward(&mut g, &store, &cfg, &[2, 1, 4, 0, 3, 2], None, false).unwrap();
            let attn = out.attention.expect("attention variants expose weights");
            assert_eq!(g.shape(attn), &[4, cfg.n]);
            for row in g.value(attn).chunks(cfg.n) {
                let s: f32 = row.iter().sum();
                assert!((s - 1.0).abs() < 1e-5, "{arch}: attention row sums to {s}");
            }
        }
    }

    #[test]
    fn training_without_teacher_is_contract_error() {
        let cfg = config(ArchTag::MultitaskLstm);
        let store = init_params(&cfg, 1).unwrap();
        let mut g = Graph::new();
        let err = multitask_forward(&mut g, &store, &cfg, &[0, 1, 2], None, true).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn out_of_range_ids_are_contract_errors() {
        let cfg = config(ArchTag::Lstm);
        let store = init_params(&cfg, 1).unwrap();
        let mut g = Graph::new();
        let err = baseline_forward(&mut g, &store, &cfg, &[0, 9, 2], None, false).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
        let mut g = Graph::new();
        let err = baseline_forward(&mut g, &store, &cfg, &[0, 1, 2], Some(&[9, 0]), true).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn wrong_architecture_routing_is_rejected() {
        let cfg = config(ArchTag::MultitaskLstm);
        let store = init_params(&cfg, 1).unwrap();
        let mut g = Graph::new();
        assert!(matches!(
            baseline_forward(&mut g, &store, &cfg, &[0, 1, 2], None, false),
            Err(Error::Config(_))
        ));
        let cfg = config(ArchTag::Rnn);
        let store = init_params(&cfg, 1).unwrap();
        let mut g = Graph::new();
        assert!(matches!(
            multitask_forward(&mut g, &store, &cfg, &[0, 1, 2], None, false),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn identical_input_rows_produce_identical_outputs() {
        let cfg = config(ArchTag::MultitaskLstm);
        let store = init_params(&cfg, 11).unwrap();
        let mut g = Graph::new();
        let out =
            multitask_forward(&mut g, &store, &cfg, &[3, 1, 4, 3, 1, 4], None, false).unwrap();
        let vocab = cfg.vocab_size;
        let vals = g.value(out.path_probs);
        // Sample rows: b*m + i; both samples identical.
        for i in 0..cfg.m {
            let a = &vals[i * vocab..(i + 1) * vocab];
            let b = &vals[(cfg.m + i) * vocab..(cfg.m + i + 1) * vocab];
            assert_eq!(a, b);
        }
        assert_eq!(&out.decoded[..cfg.m], &out.decoded[cfg.m..]);
    }

    #[test]
    fn teacher_forcing_changes_later_steps_only() {
        let cfg = config(ArchTag::Seq2seqLstm);
        let store = init_params(&cfg, 13).unwrap();
        let input = [0, 1, 2];
        let mut g1 = Graph::new();
        let forced =
            baseline_forward(&mut g1, &store, &cfg, &input, Some(&[4, 4]), true).unwrap();
        let mut g2 = Graph::new();
        let free = baseline_forward(&mut g2, &store, &cfg, &input, None, false).unwrap();
        let vocab = cfg.vocab_size;
        let a = &g1.value(forced.path_probs)[..vocab];
        let b = &g2.value(free.path_probs)[..vocab];
        assert_eq!(a, b, "step 0 sees only the history either way");
    }
}
