//! Command-line entry points: dataset preparation, training,
//! evaluation, the multi-architecture comparison harness, and a
//! gradient self-test.
//!
//! Flag resolution order is flags, then the optional `--config`
//! key=value file, then built-in defaults. Exit codes: 0 success,
//! 1 failed check, 2 usage or config problems, 3 I/O problems.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataio::{
    load_samples, mine_windows, parse_csv, save_samples, split_by_user, DatasetSplit, Granularity,
    SchemaConfig, SequenceSample, Vocabulary,
};
use crate::error::{Error, Result};
use crate::losses::{dkt_bce, path_ce, rep_penalty_soft, total_loss};
use crate::metrics::compare_table;
use crate::model::{forward, init_params, load_checkpoint, ArchTag, ModelConfig};
use crate::numerics::{collect_grads, gradient_check, GradCheckConfig, Graph, ParameterStore, Var};
use crate::train::{evaluate, format_epoch_line, run_comparison, train_with_progress, TrainConfig};

#[derive(Parser)]
#[command(name = "pathrec", version, about = "Learning path recommendation toolkit")]
struct Cli {
    /// Optional key=value file supplying defaults for any long flag.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse an interaction CSV and mine train/test windows.
    Prepare(PrepareArgs),
    /// Train one architecture on a prepared dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a prepared dataset's test split.
    Evaluate(EvaluateArgs),
    /// Train and evaluate every architecture across path lengths.
    Compare(CompareArgs),
    /// Verify analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct PrepareArgs {
    /// Raw interaction log CSV.
    #[arg(long)]
    input: PathBuf,
    /// Output directory for the prepared dataset.
    #[arg(long)]
    out: PathBuf,
    /// History length per window.
    #[arg(long)]
    n: Option<usize>,
    /// Path (target) length per window.
    #[arg(long)]
    m: Option<usize>,
    /// Window step between consecutive windows of one user.
    #[arg(long)]
    stride: Option<usize>,
    /// Vocabulary granularity: problem or skill.
    #[arg(long)]
    granularity: Option<String>,
    /// Fraction of users assigned to the training split.
    #[arg(long)]
    split: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Prepared dataset directory (from `prepare`).
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Architecture tag.
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f32>,
    /// Weight of the answer-correctness loss term.
    #[arg(long)]
    lambda1: Option<f32>,
    /// Weight of the repetition penalty term.
    #[arg(long)]
    lambda2: Option<f32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Epochs between test-set evaluations (0: final epoch only).
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    embed: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    /// Path length; defaults to the mined length, may be shorter.
    #[arg(long)]
    m: Option<usize>,
    /// Mask already-chosen concepts during decoding.
    #[arg(long)]
    no_repeat: bool,
    /// Mirror epoch records to this JSON-lines file.
    #[arg(long)]
    log_json: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Checkpoint to evaluate.
    #[arg(long)]
    ckpt: PathBuf,
    /// Prepared dataset directory; evaluation uses its test split.
    #[arg(long)]
    data: PathBuf,
    /// Mask already-chosen concepts during decoding.
    #[arg(long)]
    no_repeat: bool,
    /// Also write the report as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Prepared dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated path lengths, each at most the mined length.
    #[arg(long)]
    lengths: Option<String>,
    /// Comma-separated base seeds; the full grid runs once per seed.
    #[arg(long)]
    seeds: Option<String>,
    /// Grid CSV output path.
    #[arg(long)]
    out_csv: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long)]
    lambda1: Option<f32>,
    #[arg(long)]
    lambda2: Option<f32>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    embed: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Architecture tag, or "all" for every tag.
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Central-difference step size.
    #[arg(long)]
    h: Option<f32>,
    /// Deliberately corrupt one backward rule (negative control).
    #[arg(long, hide = true)]
    corrupt_backward: bool,
}

/// Run the CLI and return the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let file = match FileConfig::load(cli.config.as_deref()) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let outcome = match cli.command {
        Command::Prepare(a) => cmd_prepare(a, &file),
        Command::Train(a) => cmd_train(a, &file),
        Command::Evaluate(a) => cmd_evaluate(a, &file),
        Command::Compare(a) => cmd_compare(a, &file),
        Command::Gradcheck(a) => cmd_gradcheck(a, &file),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// key=value defaults file; '#' starts a comment line.
struct FileConfig(HashMap<String, String>);

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<FileConfig> {
        let mut map = HashMap::new();
        if let Some(p) = path {
            let text = fs::read_to_string(p)?;
            for (i, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let Some((k, v)) = line.split_once('=') else {
                    return Err(Error::config(format!(
                        "{}:{}: expected key=value, got {line:?}",
                        p.display(),
                        i + 1
                    )));
                };
                map.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        Ok(FileConfig(map))
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.0.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|e| Error::config(format!("config key {key}={raw:?}: {e}"))),
        }
    }
}

/// Flag beats file beats default.
fn pick<T: FromStr>(flag: Option<T>, file: &FileConfig, key: &str, default: T) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    match flag {
        Some(v) => Ok(v),
        None => Ok(file.get(key)?.unwrap_or(default)),
    }
}

fn pick_flag(flag: bool, file: &FileConfig, key: &str) -> Result<bool> {
    if flag {
        return Ok(true);
    }
    Ok(file.get::<bool>(key)?.unwrap_or(false))
}

fn parse_granularity(s: &str) -> Result<Granularity> {
    match s {
        "problem" => Ok(Granularity::Problem),
        "skill" => Ok(Granularity::Skill),
        _ => Err(Error::config(format!(
            "unknown granularity {s:?}; expected problem or skill"
        ))),
    }
}

fn parse_list<T: FromStr>(s: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let mut out = Vec::new();
    for part in s.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        out.push(
            part.parse::<T>()
                .map_err(|e| Error::config(format!("bad {what} entry {part:?}: {e}")))?,
        );
    }
    if out.is_empty() {
        return Err(Error::config(format!("{what} list is empty")));
    }
    Ok(out)
}

fn sha256_hex(path: &Path) -> Result<String> {
    let mut file = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let read = file.read(&mut buf)?;
        if read == 0 {
            break;
        }
        hasher.update(&buf[..read]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| Error::Format(format!("could not encode {}: {e}", path.display())))?;
    fs::write(path, bytes)?;
    Ok(())
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Dataset summary written by `prepare` and verified by `train`.
#[derive(Debug, Serialize, Deserialize)]
struct DatasetStats {
    users: usize,
    rows: usize,
    dropped: usize,
    deduplicated: usize,
    skipped_users: usize,
    windows_train: usize,
    windows_test: usize,
    vocab_size: usize,
    n: usize,
    m: usize,
    stride: usize,
    granularity: String,
    split: f64,
    seed: u64,
    input_digest: String,
    /// Dataset file name to content digest.
    files: BTreeMap<String, String>,
}

#[derive(Debug, Serialize)]
struct RunManifest {
    tool_version: String,
    seed: u64,
    model: ModelConfig,
    train: TrainConfig,
    data_dir: String,
    input_digest: String,
    dataset_digests: BTreeMap<String, String>,
    started_unix: u64,
    finished_unix: Option<u64>,
}

fn load_stats(dir: &Path) -> Result<DatasetStats> {
    let path = dir.join("stats.json");
    let bytes = fs::read(&path)?;
    serde_json::from_slice(&bytes)
        .map_err(|e| Error::Format(format!("{} is not a stats file: {e}", path.display())))
}

/// Refuse to train on dataset files that changed after `prepare`.
fn verify_digests(dir: &Path, stats: &DatasetStats) -> Result<()> {
    for (name, recorded) in &stats.files {
        let actual = sha256_hex(&dir.join(name))?;
        if &actual != recorded {
            return Err(Error::Format(format!(
                "{name} changed since prepare (digest {actual} != recorded {recorded}); \
                 re-run prepare"
            )));
        }
    }
    Ok(())
}

fn cmd_prepare(a: PrepareArgs, file: &FileConfig) -> Result<i32> {
    let n = pick(a.n, file, "n", 10)?;
    let m = pick(a.m, file, "m", 3)?;
    let stride = pick(a.stride, file, "stride", 1)?;
    let granularity =
        parse_granularity(&pick(a.granularity, file, "granularity", "problem".into())?)?;
    let split = pick(a.split, file, "split", 0.8)?;
    let seed = pick(a.seed, file, "seed", 0)?;

    let schema = SchemaConfig { granularity, ..SchemaConfig::default() };
    let parsed = parse_csv(&a.input, &schema)?;
    let users: BTreeSet<i64> = parsed.rows.iter().map(|r| r.user_id).collect();
    let vocab = Vocabulary::build(&parsed.rows)?;
    let mined = mine_windows(&parsed.rows, &vocab, n, m, stride)?;

    let (train, test) = if mined.samples.is_empty() {
        eprintln!(
            "warning: 0 windows mined; every user has fewer than n+m={} interactions",
            n + m
        );
        (Vec::new(), Vec::new())
    } else {
        let s = split_by_user(&mined.samples, split, seed)?;
        (s.train, s.test)
    };

    fs::create_dir_all(&a.out)?;
    save_samples(&train, &a.out.join("train.jsonl"))?;
    save_samples(&test, &a.out.join("test.jsonl"))?;
    vocab.save(&a.out.join("vocab.csv"))?;

    let mut files = BTreeMap::new();
    for name in ["train.jsonl", "test.jsonl", "vocab.csv"] {
        files.insert(name.to_string(), sha256_hex(&a.out.join(name))?);
    }
    let stats = DatasetStats {
        users: users.len(),
        rows: parsed.rows.len(),
        dropped: parsed.dropped,
        deduplicated: parsed.deduplicated,
        skipped_users: mined.skipped_users,
        windows_train: train.len(),
        windows_test: test.len(),
        vocab_size: vocab.len(),
        n,
        m,
        stride,
        granularity: granularity.to_string(),
        split,
        seed,
        input_digest: sha256_hex(&a.input)?,
        files,
    };
    write_json(&a.out.join("stats.json"), &stats)?;
    println!(
        "prepared {}: users={} train={} test={} vocab={} dropped={} deduplicated={} skipped_users={}",
        a.out.display(),
        stats.users,
        stats.windows_train,
        stats.windows_test,
        stats.vocab_size,
        stats.dropped,
        stats.deduplicated,
        stats.skipped_users
    );
    Ok(0)
}

struct LoadedData {
    stats: DatasetStats,
    train: Vec<SequenceSample>,
    test: Vec<SequenceSample>,
}

fn load_dataset(dir: &Path) -> Result<LoadedData> {
    let stats = load_stats(dir)?;
    verify_digests(dir, &stats)?;
    let train = load_samples(&dir.join("train.jsonl"))?;
    let test = load_samples(&dir.join("test.jsonl"))?;
    Ok(LoadedData { stats, train, test })
}

fn cmd_train(a: TrainArgs, file: &FileConfig) -> Result<i32> {
    let data = load_dataset(&a.data)?;
    let arch: ArchTag = pick(a.arch, file, "arch", "multitask_lstm".into())?.parse()?;
    let m = pick(a.m, file, "m", data.stats.m)?;
    if m > data.stats.m {
        return Err(Error::config(format!(
            "dataset was mined with m={} step paths; --m {m} exceeds that",
            data.stats.m
        )));
    }
    let model = ModelConfig {
        vocab_size: data.stats.vocab_size,
        embed_dim: pick(a.embed, file, "embed", 128)?,
        hidden_units: pick(a.hidden, file, "hidden", 64)?,
        n: data.stats.n,
        m,
        architecture: arch,
        no_repeat_decoding: pick_flag(a.no_repeat, file, "no_repeat")?,
    };
    let train_config = TrainConfig {
        epochs: pick(a.epochs, file, "epochs", 100)?,
        batch_size: pick(a.batch, file, "batch", 32)?,
        lr: pick(a.lr, file, "lr", 1e-3)?,
        lambda1: pick(a.lambda1, file, "lambda1", 0.5)?,
        lambda2: pick(a.lambda2, file, "lambda2", 0.1)?,
        seed: pick(a.seed, file, "seed", 0)?,
        eval_every: pick(a.eval_every, file, "eval_every", 10)?,
        checkpoint: Some(a.out.clone()),
    };
    model.validate()?;
    train_config.validate()?;

    let split = DatasetSplit {
        train: data.train,
        test: data.test,
        seed: train_config.seed,
        split_fraction: data.stats.split,
    };

    let manifest_path = a.out.with_extension("manifest.json");
    let mut manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: train_config.seed,
        model: model.clone(),
        train: train_config.clone(),
        data_dir: a.data.display().to_string(),
        input_digest: data.stats.input_digest.clone(),
        dataset_digests: data.stats.files.clone(),
        started_unix: unix_now(),
        finished_unix: None,
    };
    write_json(&manifest_path, &manifest)?;

    let log_json = match a.log_json {
        Some(p) => Some(p),
        None => file.get::<PathBuf>("log_json")?,
    };
    let mut log_file = match &log_json {
        Some(p) => Some(BufWriter::new(File::create(p)?)),
        None => None,
    };
    let mut log_err: Option<std::io::Error> = None;

    let (_store, records) = train_with_progress(&split, &model, &train_config, &mut |r| {
        println!("{}", format_epoch_line(r));
        if let Some(f) = &mut log_file {
            if log_err.is_none() {
                let line = serde_json::to_string(r).expect("epoch record serializes");
                if let Err(e) = writeln!(f, "{line}") {
                    log_err = Some(e);
                }
            }
        }
    })?;
    if let Some(f) = &mut log_file {
        f.flush()?;
    }
    if let Some(e) = log_err {
        return Err(e.into());
    }

    manifest.finished_unix = Some(unix_now());
    write_json(&manifest_path, &manifest)?;
    if records.is_empty() {
        eprintln!("warning: 0 epochs requested; no checkpoint written");
    } else {
        println!("checkpoint written to {}", a.out.display());
    }
    Ok(0)
}

fn cmd_evaluate(a: EvaluateArgs, file: &FileConfig) -> Result<i32> {
    let (mut model, store) = load_checkpoint(&a.ckpt)?;
    if pick_flag(a.no_repeat, file, "no_repeat")? {
        model.no_repeat_decoding = true;
    }
    model.validate()?;
    let samples = load_samples(&a.data.join("test.jsonl"))?;
    let outcome = evaluate(&store, &model, &samples)?;
    let r = &outcome.report;
    println!("architecture={} m={} samples={}", model.architecture, model.m, samples.len());
    println!(
        "accuracy={:.4} precision={:.4} recall={:.4} f1={:.4} auc={} repetition={:.4} support={}",
        r.accuracy,
        r.precision,
        r.recall,
        r.f1,
        r.auc.map_or_else(|| "-".to_string(), |a| format!("{a:.4}")),
        outcome.repetition,
        r.support
    );
    if let Some(csv_path) = a.csv {
        let mut table = BTreeMap::new();
        table.insert(model.architecture.name().to_string(), outcome.report.clone());
        fs::write(&csv_path, crate::metrics::compare_csv(&table))?;
        println!("report written to {}", csv_path.display());
    }
    Ok(0)
}

fn cmd_compare(a: CompareArgs, file: &FileConfig) -> Result<i32> {
    let data = load_dataset(&a.data)?;
    let lengths: Vec<usize> =
        parse_list(&pick(a.lengths, file, "lengths", "3,5,7,9".into())?, "lengths")?;
    let seeds: Vec<u64> = parse_list(&pick(a.seeds, file, "seeds", "0".into())?, "seeds")?;
    for &m in &lengths {
        if m > data.stats.m {
            return Err(Error::config(format!(
                "dataset was mined with m={} step paths; length {m} exceeds that",
                data.stats.m
            )));
        }
    }

    let base_model = ModelConfig {
        vocab_size: data.stats.vocab_size,
        embed_dim: pick(a.embed, file, "embed", 128)?,
        hidden_units: pick(a.hidden, file, "hidden", 64)?,
        n: data.stats.n,
        m: lengths[0],
        architecture: ArchTag::MultitaskLstm,
        no_repeat_decoding: false,
    };
    let base_train = TrainConfig {
        epochs: pick(a.epochs, file, "epochs", 100)?,
        batch_size: pick(a.batch, file, "batch", 32)?,
        lr: pick(a.lr, file, "lr", 1e-3)?,
        lambda1: pick(a.lambda1, file, "lambda1", 0.5)?,
        lambda2: pick(a.lambda2, file, "lambda2", 0.1)?,
        seed: 0,
        eval_every: pick(a.eval_every, file, "eval_every", 0)?,
        checkpoint: None,
    };
    base_train.validate()?;

    let mut csv = String::from("seed,architecture,m,accuracy,precision,recall,f1\n");
    for &seed in &seeds {
        let split = DatasetSplit {
            train: data.train.clone(),
            test: data.test.clone(),
            seed,
            split_fraction: data.stats.split,
        };
        let tc = TrainConfig { seed, ..base_train.clone() };
        let grid = run_comparison(&split, &base_model, &tc, &lengths)?;
        for (&m, row) in &grid {
            println!("== seed={seed} m={m}");
            println!("{}", compare_table(row));
            for arch in ArchTag::ALL {
                if let Some(r) = row.get(arch.name()) {
                    csv.push_str(&format!(
                        "{seed},{},{m},{:.4},{:.4},{:.4},{:.4}\n",
                        arch.name(),
                        r.accuracy,
                        r.precision,
                        r.recall,
                        r.f1
                    ));
                }
            }
        }
    }
    let out_csv = match a.out_csv {
        Some(p) => p,
        None => a.data.join("comparison.csv"),
    };
    fs::write(&out_csv, csv)?;
    println!("grid written to {}", out_csv.display());
    Ok(0)
}

/// The full training loss on a fixed toy batch, for gradient checking.
fn toy_total(
    g: &mut Graph,
    store: &ParameterStore,
    config: &ModelConfig,
    input: &[usize],
    teacher: &[usize],
    labels: &[u8],
) -> Result<Var> {
    let out = forward(g, store, config, input, Some(teacher), true)?;
    let ce = path_ce(g, out.path_probs, teacher)?;
    let bce = out.dkt_probs.map(|p| dkt_bce(g, p, labels));
    let rep = rep_penalty_soft(g, out.path_probs, config.m);
    let (tot, _) = total_loss(g, ce, bce, rep, 0.5, 0.1)?;
    Ok(tot)
}

fn cmd_gradcheck(a: GradcheckArgs, file: &FileConfig) -> Result<i32> {
    let seed = pick(a.seed, file, "seed", 0)?;
    let arch_s: String = pick(a.arch, file, "arch", "all".into())?;
    let archs: Vec<ArchTag> = if arch_s == "all" {
        ArchTag::ALL.to_vec()
    } else {
        vec![arch_s.parse()?]
    };
    let mut check_cfg = GradCheckConfig {
        max_coords_per_param: usize::MAX,
        seed,
        ..GradCheckConfig::default()
    };
    check_cfg.h = pick(a.h, file, "h", check_cfg.h)?;

    // Two samples, three-step histories, two-step paths over four
    // concepts; small enough to check every coordinate.
    let input = [0usize, 1, 2, 3, 2, 1];
    let teacher = [2usize, 3, 0, 1];
    let labels = [1u8, 0, 1, 1];

    let mut all_pass = true;
    for arch in archs {
        let config = ModelConfig {
            vocab_size: 4,
            embed_dim: 6,
            hidden_units: 5,
            n: 3,
            m: 2,
            architecture: arch,
            no_repeat_decoding: false,
        };
        let mut store = init_params(&config, seed)?;
        let mut g = Graph::new();
        if a.corrupt_backward {
            g.corrupt_backward_for_tests();
        }
        let tot = toy_total(&mut g, &store, &config, &input, &teacher, &labels)?;
        g.backward(tot, &mut store)?;
        let analytic = collect_grads(&store);
        let report = gradient_check(
            &mut store,
            &analytic,
            |s| {
                let mut g = Graph::new();
                let tot = toy_total(&mut g, s, &config, &input, &teacher, &labels)
                    .expect("toy forward is well-formed");
                g.value(tot)[0]
            },
            &check_cfg,
        )?;
        let verdict = if report.passed() { "PASS" } else { "FAIL" };
        println!(
            "{arch}: checked {} coordinates, max relative error {:.3e} -> {verdict}",
            report.checked, report.max_rel_error
        );
        all_pass &= report.passed();
    }
    Ok(if all_pass { 0 } else { 1 })
}
