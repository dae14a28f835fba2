//! Training orchestration: epoch loop, batching, seeded shuffling,
//! loss logging, periodic evaluation, best-checkpoint retention, and
//! the multi-architecture comparison harness.

pub mod synthetic;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{DatasetSplit, SequenceSample};
use crate::error::{Error, Result};
use crate::losses::{dkt_bce, path_ce, rep_penalty_hard, rep_penalty_soft, total_loss, LossBreakdown};
use crate::metrics::{path_metrics, roc_auc, MetricReport};
use crate::model::{forward, init_params, save_checkpoint, ArchTag, ModelConfig};
use crate::numerics::{adam_step, AdamConfig, AdamState, Graph, ParameterStore};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    /// Weight of the answer-correctness loss. Ignored (treated as 0)
    /// by single-task architectures, which have no correctness head.
    pub lambda1: f32,
    /// Weight of the soft repetition penalty.
    pub lambda2: f32,
    pub seed: u64,
    /// Evaluate on the test set every this many epochs; the final
    /// epoch is always evaluated when a test set exists. 0 disables
    /// periodic evaluation (the final one still runs).
    pub eval_every: usize,
    /// Where the best-accuracy checkpoint goes; None skips writing.
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            lr: 1e-3,
            lambda1: 0.5,
            lambda2: 0.1,
            seed: 0,
            eval_every: 10,
            checkpoint: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(Error::config("loss weights must be non-negative"));
        }
        Ok(())
    }
}

/// Evaluation result: classification metrics over the decoded paths
/// (with answer-correctness AUC when the model has that head) plus the
/// mean count of repeated concepts per decoded path.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub report: MetricReport,
    pub repetition: f32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch index.
    pub epoch: usize,
    /// Mean loss components over the epoch's batches.
    pub loss: LossBreakdown,
    pub eval: Option<EvalOutcome>,
    pub seconds: f64,
}

/// Render the human-readable epoch log line.
pub fn format_epoch_line(r: &EpochRecord) -> String {
    let acc = match &r.eval {
        Some(e) => format!("{:.4}", e.report.accuracy),
        None => "-".to_string(),
    };
    format!(
        "epoch={} ce={:.6} bce={:.6} rep={:.6} total={:.6} acc={} secs={:.2}",
        r.epoch, r.loss.ce, r.loss.bce, r.loss.rep, r.loss.total, acc, r.seconds
    )
}

/// Flatten a batch of samples into the id layouts the forward passes
/// expect. Targets and correctness bits mined for a longer path are
/// truncated to the first m steps, so one mining pass at the largest m
/// serves every smaller one.
fn flatten_batch(
    samples: &[&SequenceSample],
    config: &ModelConfig,
) -> Result<(Vec<usize>, Vec<usize>, Vec<u8>)> {
    let (n, m) = (config.n, config.m);
    let mut input = Vec::with_capacity(samples.len() * n);
    let mut teacher = Vec::with_capacity(samples.len() * m);
    let mut labels = Vec::with_capacity(samples.len() * m);
    for s in samples {
        if s.input.len() != n {
            return Err(Error::contract(format!(
                "sample for user {} has history length {}, model expects n={n}",
                s.user,
                s.input.len()
            )));
        }
        if s.target.len() < m || s.correct.len() < m {
            return Err(Error::contract(format!(
                "sample for user {} has a {}-step path, model expects at least m={m}",
                s.user,
                s.target.len()
            )));
        }
        input.extend_from_slice(&s.input);
        teacher.extend_from_slice(&s.target[..m]);
        labels.extend_from_slice(&s.correct[..m]);
    }
    Ok((input, teacher, labels))
}

/// Train an architecture on the split's training set. Returns the
/// final parameter store and one record per epoch. See
/// [`train_with_progress`] for streaming logs.
pub fn train(
    split: &DatasetSplit,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<(ParameterStore, Vec<EpochRecord>)> {
    train_with_progress(split, model_config, train_config, &mut |_| {})
}

/// [`train`], invoking `progress` with each epoch record as it lands.
pub fn train_with_progress(
    split: &DatasetSplit,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<(ParameterStore, Vec<EpochRecord>)> {
    model_config.validate()?;
    train_config.validate()?;
    if split.train.is_empty() {
        return Err(Error::contract("training set is empty"));
    }

    // Single-task architectures have no correctness head, so the BCE
    // term cannot exist; its weight is forced to zero.
    let lambda1 = if model_config.architecture == ArchTag::MultitaskLstm {
        train_config.lambda1
    } else {
        0.0
    };
    let lambda2 = train_config.lambda2;

    let mut store = init_params(model_config, train_config.seed)?;
    let mut adam = AdamState::new(&store);
    let adam_cfg = AdamConfig { lr: train_config.lr, ..AdamConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(train_config.seed);

    let mut records = Vec::with_capacity(train_config.epochs);
    let mut best_acc = f64::NEG_INFINITY;
    let mut wrote_checkpoint = false;

    for epoch in 1..=train_config.epochs {
        let t0 = Instant::now();
        let mut order: Vec<usize> = (0..split.train.len()).collect();
        order.shuffle(&mut rng);

        let mut sums = [0f64; 4];
        let mut batches = 0usize;
        for (batch_i, chunk) in order.chunks(train_config.batch_size).enumerate() {
            let batch: Vec<&SequenceSample> = chunk.iter().map(|&i| &split.train[i]).collect();
            let (input, teacher, labels) = flatten_batch(&batch, model_config)?;

            store.zero_grads();
            let mut g = Graph::new();
            let out = forward(&mut g, &store, model_config, &input, Some(&teacher), true)?;
            let ce = path_ce(&mut g, out.path_probs, &teacher)?;
            let bce = out.dkt_probs.map(|p| dkt_bce(&mut g, p, &labels));
            let rep = rep_penalty_soft(&mut g, out.path_probs, model_config.m);
            let (tot, parts) = total_loss(&mut g, ce, bce, rep, lambda1, lambda2)?;
            if !parts.total.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss became non-finite at epoch {epoch}, batch {batch_i} \
                     (ce={} bce={} rep={})",
                    parts.ce, parts.bce, parts.rep
                )));
            }
            g.backward(tot, &mut store)?;
            adam_step(&mut store, &mut adam, &adam_cfg)?;

            sums[0] += parts.ce as f64;
            sums[1] += parts.bce as f64;
            sums[2] += parts.rep as f64;
            sums[3] += parts.total as f64;
            batches += 1;
        }

        let inv = 1.0 / batches as f64;
        let loss = LossBreakdown {
            ce: (sums[0] * inv) as f32,
            bce: (sums[1] * inv) as f32,
            rep: (sums[2] * inv) as f32,
            total: (sums[3] * inv) as f32,
            lambda1,
            lambda2,
        };

        let due = train_config.eval_every > 0 && epoch % train_config.eval_every == 0;
        let last = epoch == train_config.epochs;
        let eval = if (due || last) && !split.test.is_empty() {
            let outcome = evaluate(&store, model_config, &split.test)?;
            if outcome.report.accuracy > best_acc {
                best_acc = outcome.report.accuracy;
                if let Some(path) = &train_config.checkpoint {
                    save_checkpoint(path, model_config, &store)?;
                    wrote_checkpoint = true;
                }
            }
            Some(outcome)
        } else {
            None
        };

        let record = EpochRecord { epoch, loss, eval, seconds: t0.elapsed().as_secs_f64() };
        progress(&record);
        records.push(record);
    }

    // No evaluation ever ran (no test set): keep the final parameters.
    if let Some(path) = &train_config.checkpoint {
        if !wrote_checkpoint && train_config.epochs > 0 {
            save_checkpoint(path, model_config, &store)?;
        }
    }
    Ok((store, records))
}

const EVAL_CHUNK: usize = 256;

/// Free-running evaluation: decode without teacher forcing, score the
/// decoded paths against the mined targets, and (for the multi-task
/// model) compute AUC of the correctness probabilities against the
/// recorded correctness bits. AUC is omitted when the test labels are
/// single-class, which leaves it undefined.
pub fn evaluate(
    store: &ParameterStore,
    model_config: &ModelConfig,
    samples: &[SequenceSample],
) -> Result<EvalOutcome> {
    model_config.validate()?;
    if samples.is_empty() {
        return Err(Error::contract("evaluation needs at least one sample"));
    }

    let mut decoded = Vec::with_capacity(samples.len() * model_config.m);
    let mut targets = Vec::with_capacity(samples.len() * model_config.m);
    let mut labels: Vec<u8> = Vec::new();
    let mut scores: Vec<f64> = Vec::new();

    // Rows of a batch do not interact, so the chunk size only bounds
    // graph memory; it cannot change any value.
    for chunk in samples.chunks(EVAL_CHUNK) {
        let batch: Vec<&SequenceSample> = chunk.iter().collect();
        let (input, chunk_targets, chunk_labels) = flatten_batch(&batch, model_config)?;
        let mut g = Graph::new();
        let out = forward(&mut g, store, model_config, &input, None, false)?;
        decoded.extend(out.decoded);
        targets.extend(chunk_targets);
        if let Some(p) = out.dkt_probs {
            scores.extend(g.value(p).iter().map(|&v| v as f64));
            labels.extend(chunk_labels);
        }
    }

    let mut report = path_metrics(&decoded, &targets, model_config.vocab_size)?;
    if !scores.is_empty() {
        report.auc = match roc_auc(&scores, &labels) {
            Ok(a) => Some(a),
            Err(Error::Numeric(_)) => None,
            Err(e) => return Err(e),
        };
    }
    let repetition = rep_penalty_hard(&decoded, model_config.m);
    Ok(EvalOutcome { report, repetition })
}

/// Results of [`run_comparison`]: path length, then architecture name.
pub type ComparisonGrid = BTreeMap<usize, BTreeMap<String, MetricReport>>;

/// Train every architecture at every requested path length under the
/// same budget, each cell with its own seed stream derived from the
/// base seed. Reported metrics come from each run's best evaluation.
pub fn run_comparison(
    split: &DatasetSplit,
    base_model: &ModelConfig,
    base_train: &TrainConfig,
    lengths: &[usize],
) -> Result<ComparisonGrid> {
    if lengths.is_empty() {
        return Err(Error::config("comparison needs at least one path length"));
    }
    let m_max = *lengths.iter().max().unwrap();
    for s in split.train.iter().chain(split.test.iter()) {
        if s.target.len() < m_max {
            return Err(Error::contract(format!(
                "dataset was mined with {}-step paths, comparison needs {m_max}",
                s.target.len()
            )));
        }
    }

    let mut grid = ComparisonGrid::new();
    for &m in lengths {
        let mut row = BTreeMap::new();
        for (arch_i, &arch) in ArchTag::ALL.iter().enumerate() {
            let mut mc = base_model.clone();
            mc.architecture = arch;
            mc.m = m;
            mc.validate()?;
            let mut tc = base_train.clone();
            tc.seed = cell_seed(base_train.seed, arch_i, m);
            tc.checkpoint = None;

            let (store, records) = train(split, &mc, &tc)?;
            let mut best: Option<&EvalOutcome> = None;
            for r in &records {
                if let Some(e) = &r.eval {
                    if best.map_or(true, |b| e.report.accuracy > b.report.accuracy) {
                        best = Some(e);
                    }
                }
            }
            let report = match best {
                Some(e) => e.report.clone(),
                None => evaluate(&store, &mc, &split.test)?.report,
            };
            row.insert(arch.name().to_string(), report);
        }
        grid.insert(m, row);
    }
    Ok(grid)
}

/// Flatten the grid to CSV rows keyed by architecture and path length.
pub fn grid_csv(grid: &ComparisonGrid) -> String {
    let mut out = String::from("architecture,m,accuracy,precision,recall,f1\n");
    for (&m, row) in grid {
        for arch in ArchTag::ALL {
            if let Some(r) = row.get(arch.name()) {
                out.push_str(&format!(
                    "{},{m},{:.4},{:.4},{:.4},{:.4}\n",
                    arch.name(),
                    r.accuracy,
                    r.precision,
                    r.recall,
                    r.f1
                ));
            }
        }
    }
    out
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-cell seed: independent stream per (base seed, architecture,
/// path length) so grid cells never share randomness.
fn cell_seed(seed: u64, arch_index: usize, m: usize) -> u64 {
    splitmix64(seed ^ splitmix64(((arch_index as u64) << 32) | m as u64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::split_by_user;
    use crate::train::synthetic::{generate_rows, SyntheticConfig};
    use crate::dataio::{mine_windows, Vocabulary};

    fn tiny_split(seed: u64) -> DatasetSplit {
        let rows = generate_rows(&SyntheticConfig {
            users: 8,
            logs_per_user: 12,
            num_concepts: 6,
            follow_prob: 0.9,
            seed,
        });
        let vocab = Vocabulary::build(&rows).unwrap();
        let mined = mine_windows(&rows, &vocab, 4, 2, 2).unwrap();
        split_by_user(&mined.samples, 0.75, seed).unwrap()
    }

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            vocab_size: 6,
            embed_dim: 4,
            hidden_units: 4,
            n: 4,
            m: 2,
            architecture: ArchTag::MultitaskLstm,
            no_repeat_decoding: false,
        }
    }

    fn tiny_train(epochs: usize) -> TrainConfig {
        TrainConfig { epochs, batch_size: 4, eval_every: 0, ..TrainConfig::default() }
    }

    #[test]
    fn zero_epochs_returns_initialized_store_and_no_records() {
        let split = tiny_split(1);
        let cfg = tiny_model();
        let (store, records) = train(&split, &cfg, &tiny_train(0)).unwrap();
        assert!(records.is_empty());
        let fresh = init_params(&cfg, 0).unwrap();
        assert_eq!(store.len(), fresh.len());
        for i in 0..store.len() {
            assert_eq!(store.tensor_at(i).values(), fresh.tensor_at(i).values());
        }
    }

    #[test]
    fn same_seed_trains_to_bitwise_identical_parameters() {
        let split = tiny_split(2);
        let cfg = tiny_model();
        let tc = tiny_train(3);
        let (a, ra) = train(&split, &cfg, &tc).unwrap();
        let (b, rb) = train(&split, &cfg, &tc).unwrap();
        for i in 0..a.len() {
            let bits = |s: &ParameterStore| -> Vec<u32> {
                s.tensor_at(i).values().iter().map(|v| v.to_bits()).collect()
            };
            assert_eq!(bits(&a), bits(&b), "{}", a.name_at(i));
        }
        assert_eq!(ra.len(), rb.len());
        for (x, y) in ra.iter().zip(&rb) {
            assert_eq!(x.loss.total.to_bits(), y.loss.total.to_bits());
        }
    }

    #[test]
    fn different_seeds_diverge() {
        let split = tiny_split(3);
        let cfg = tiny_model();
        let (a, _) = train(&split, &cfg, &TrainConfig { seed: 1, ..tiny_train(2) }).unwrap();
        let (b, _) = train(&split, &cfg, &TrainConfig { seed: 2, ..tiny_train(2) }).unwrap();
        assert_ne!(a.tensor_at(0).values(), b.tensor_at(0).values());
    }

    #[test]
    fn training_loss_decreases_on_average() {
        let split = tiny_split(4);
        let cfg = tiny_model();
        let (_, records) = train(&split, &cfg, &tiny_train(15)).unwrap();
        let first = records[0].loss.total;
        let last = records.last().unwrap().loss.total;
        assert!(last < first, "loss went {first} -> {last}");
    }

    #[test]
    fn baseline_records_show_zero_bce_weight() {
        let split = tiny_split(5);
        let mut cfg = tiny_model();
        cfg.architecture = ArchTag::Lstm;
        let tc = TrainConfig { lambda1: 0.7, ..tiny_train(2) };
        let (_, records) = train(&split, &cfg, &tc).unwrap();
        for r in &records {
            assert_eq!(r.loss.lambda1, 0.0);
            assert_eq!(r.loss.bce, 0.0);
        }
    }

    #[test]
    fn empty_training_set_is_contract_error() {
        let mut split = tiny_split(6);
        split.train.clear();
        let err = train(&split, &tiny_model(), &tiny_train(1)).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn invalid_train_config_is_config_error() {
        let split = tiny_split(7);
        for tc in [
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { lr: 0.0, ..TrainConfig::default() },
            TrainConfig { lr: f32::NAN, ..TrainConfig::default() },
            TrainConfig { lambda2: -0.1, ..TrainConfig::default() },
        ] {
            assert!(matches!(train(&split, &tiny_model(), &tc), Err(Error::Config(_))));
        }
    }

    #[test]
    fn evaluate_is_deterministic_and_chunk_invariant() {
        let split = tiny_split(8);
        let cfg = tiny_model();
        let store = init_params(&cfg, 9).unwrap();
        let a = evaluate(&store, &cfg, &split.test).unwrap();
        let b = evaluate(&store, &cfg, &split.test).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn evaluate_rejects_empty_samples() {
        let cfg = tiny_model();
        let store = init_params(&cfg, 0).unwrap();
        assert!(matches!(evaluate(&store, &cfg, &[]), Err(Error::Contract(_))));
    }

    #[test]
    fn multitask_eval_reports_auc_baseline_does_not() {
        let split = tiny_split(9);
        let cfg = tiny_model();
        let store = init_params(&cfg, 1).unwrap();
        let multi = evaluate(&store, &cfg, &split.test).unwrap();
        assert!(multi.report.auc.is_some(), "correctness head should yield an AUC");

        let mut cfg2 = cfg.clone();
        cfg2.architecture = ArchTag::Seq2seqLstm;
        let store2 = init_params(&cfg2, 1).unwrap();
        let single = evaluate(&store2, &cfg2, &split.test).unwrap();
        assert!(single.report.auc.is_none());
    }

    #[test]
    fn eval_every_schedules_and_final_epoch_always_evaluates() {
        let split = tiny_split(10);
        let cfg = tiny_model();
        let tc = TrainConfig { eval_every: 2, ..tiny_train(5) };
        let (_, records) = train(&split, &cfg, &tc).unwrap();
        let evaluated: Vec<usize> =
            records.iter().filter(|r| r.eval.is_some()).map(|r| r.epoch).collect();
        assert_eq!(evaluated, vec![2, 4, 5]);
    }

    #[test]
    fn best_checkpoint_is_loadable_and_matches_an_evaluated_epoch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("best.ckpt");
        let split = tiny_split(11);
        let cfg = tiny_model();
        let tc = TrainConfig {
            eval_every: 1,
            checkpoint: Some(path.clone()),
            ..tiny_train(4)
        };
        let (_, records) = train(&split, &cfg, &tc).unwrap();
        let (cfg2, store) = crate::model::load_checkpoint(&path).unwrap();
        assert_eq!(cfg, cfg2);
        let best_acc = records
            .iter()
            .filter_map(|r| r.eval.as_ref())
            .map(|e| e.report.accuracy)
            .fold(f64::NEG_INFINITY, f64::max);
        let replay = evaluate(&store, &cfg2, &split.test).unwrap();
        assert_eq!(replay.report.accuracy, best_acc);
    }

    #[test]
    fn comparison_grid_covers_every_cell() {
        let split = tiny_split(12);
        let base = tiny_model();
        let tc = TrainConfig { eval_every: 1, ..tiny_train(1) };
        let grid = run_comparison(&split, &base, &tc, &[2]).unwrap();
        assert_eq!(grid.len(), 1);
        assert_eq!(grid[&2].len(), 7);
        let csv = grid_csv(&grid);
        assert_eq!(csv.lines().count(), 8, "header plus one row per architecture");
        assert!(csv.lines().nth(1).unwrap().starts_with("rnn,2,"));
    }

    #[test]
    fn comparison_rejects_lengths_beyond_mined_paths() {
        let split = tiny_split(13);
        let err = run_comparison(&split, &tiny_model(), &tiny_train(1), &[3]).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn epoch_line_format_is_stable() {
        let r = EpochRecord {
            epoch: 3,
            loss: LossBreakdown {
                ce: 1.25,
                bce: 0.5,
                rep: 0.0,
                total: 1.5,
                lambda1: 0.5,
                lambda2: 0.1,
            },
            eval: None,
            seconds: 0.125,
        };
        assert_eq!(
            format_epoch_line(&r),
            "epoch=3 ce=1.250000 bce=0.500000 rep=0.000000 total=1.500000 acc=- secs=0.12"
        );
    }
}
