use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cgcqg_core::beam::best;
use cgcqg_core::corpus::{load_corpus, load_passages, write_corpus, Vocabulary};
use cgcqg_core::labeling::label_corpus;
use cgcqg_core::metrics::{EvalReport, Pair};
use cgcqg_core::stats::{dep_path_stats, rank_distributions, Summary};
use cgcqg_core::toy;
use cgcqg_core::trainer::{self, TrainOptions, BEST_CHECKPOINT, EMA_CHECKPOINT, RAW_CHECKPOINT};
use cgcqg_core::{Model, ModelConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::ConfigArgs;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Weights {
    Ema,
    Raw,
    Best,
}

impl Weights {
    fn file(self) -> &'static str {
        match self {
            Weights::Ema => EMA_CHECKPOINT,
            Weights::Raw => RAW_CHECKPOINT,
            Weights::Best => BEST_CHECKPOINT,
        }
    }
}

/// Reads the config file (if any) and applies flag overrides on top.
pub fn resolve_config(args: &ConfigArgs) -> Result<ModelConfig> {
    let mut map = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            match serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))? {
                Value::Object(m) => m,
                _ => bail!("{}: config must be a JSON object", path.display()),
            }
        }
        None => serde_json::Map::new(),
    };
    for item in &args.overrides {
        let Some((key, raw)) = item.split_once('=') else {
            bail!("override `{item}` is not KEY=VALUE");
        };
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        map.insert(key.trim().to_string(), value);
    }
    if let Some(seed) = args.seed {
        map.insert("seed".into(), seed.into());
    }
    if let Some(epochs) = args.epochs {
        map.insert("epochs".into(), epochs.into());
    }
    Ok(ModelConfig::from_json(&Value::Object(map).to_string())?)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_lines<'a>(path: &Path, lines: impl IntoIterator<Item = &'a String>) -> Result<()> {
    let mut w = create(path)?;
    for l in lines {
        writeln!(w, "{l}")?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn ingest(data: &Path, out: &Path, args: &ConfigArgs) -> Result<()> {
    let config = resolve_config(args)?;
    let corpus = load_corpus(data)?;
    let vocab = Vocabulary::build(&corpus, config.vocab_max)?;
    let (labeled, reduced) = label_corpus(&corpus, &vocab, config.r_h, config.n_target);
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_lines(&out.join("vocab.txt"), vocab.words())?;
    write_lines(&out.join("target_vocab.txt"), reduced.words())?;
    let mut w = create(&out.join("labeled.jsonl"))?;
    for l in &labeled {
        serde_json::to_writer(&mut w, l)?;
        writeln!(w)?;
    }
    w.flush()?;
    let copied: usize = labeled.iter().map(|l| l.question_copy_label.iter().filter(|&&c| c).count()).sum();
    let clues: usize = labeled.iter().map(|l| l.passage_clue_label.iter().filter(|&&c| c).count()).sum();
    let questions: usize = labeled.iter().map(|l| l.question_copy_label.len()).sum();
    log::info!(
        "{} examples, vocabulary {}, target vocabulary {}, {copied}/{questions} question tokens copied, {clues} clue tokens",
        corpus.len(),
        vocab.len(),
        reduced.len(),
    );
    Ok(())
}

fn summary_csv(path: &Path, bucket_label: &str, columns: &[(&str, &Summary)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec![bucket_label.to_string()];
    header.extend(columns.iter().map(|(n, _)| n.to_string()));
    w.write_record(&header)?;
    let mut buckets: Vec<usize> = columns.iter().flat_map(|(_, s)| s.histogram.keys().copied()).collect();
    buckets.sort_unstable();
    buckets.dedup();
    for b in buckets {
        let mut row = vec![b.to_string()];
        row.extend(columns.iter().map(|(_, s)| s.histogram.get(&b).copied().unwrap_or(0).to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct StatsSummary<'a> {
    examples: usize,
    rank_bucket_width: usize,
    oov_rank: usize,
    rank_all: &'a Summary,
    rank_generated: &'a Summary,
    rank_copied: &'a Summary,
    tree_distance: &'a Summary,
    word_distance: &'a Summary,
    top_labels: Vec<(String, usize)>,
}

pub fn stats(data: &Path, out: &Path, top: usize, args: &ConfigArgs) -> Result<()> {
    let config = resolve_config(args)?;
    let corpus = load_corpus(data)?;
    let vocab = Vocabulary::build(&corpus, config.vocab_max)?;
    let (labeled, _) = label_corpus(&corpus, &vocab, config.r_h, config.n_target);
    let ranks = rank_distributions(&labeled, &vocab);
    let deps = dep_path_stats(&labeled);
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    summary_csv(
        &out.join("rank_histogram.csv"),
        "bucket",
        &[("all", &ranks.all), ("generated", &ranks.generated), ("copied", &ranks.copied)],
    )?;
    summary_csv(
        &out.join("distance_histogram.csv"),
        "distance",
        &[("tree", &deps.tree), ("word", &deps.sequence)],
    )?;
    let mut w = csv::Writer::from_writer(create(&out.join("clue_paths.csv"))?);
    w.write_record(["example", "token", "tree_distance", "word_distance", "labels"])?;
    for r in &deps.records {
        w.write_record([
            r.example.clone(),
            r.token.to_string(),
            r.tree.to_string(),
            r.sequence.to_string(),
            r.labels.join(" "),
        ])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_writer(create(&out.join("path_labels.csv"))?);
    w.write_record(["label", "count"])?;
    for (label, count) in deps.top_labels(usize::MAX) {
        w.write_record([label, count.to_string()])?;
    }
    w.flush()?;
    let summary = StatsSummary {
        examples: corpus.len(),
        rank_bucket_width: ranks.bucket_width,
        oov_rank: ranks.oov_rank,
        rank_all: &ranks.all,
        rank_generated: &ranks.generated,
        rank_copied: &ranks.copied,
        tree_distance: &deps.tree,
        word_distance: &deps.sequence,
        top_labels: deps.top_labels(top),
    };
    write_json(&out.join("summary.json"), &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

pub fn train(
    data: &Path,
    dev: Option<&Path>,
    out: &Path,
    vectors: Option<&Path>,
    stop_below: Option<f64>,
    args: &ConfigArgs,
) -> Result<()> {
    let config = resolve_config(args)?;
    let corpus = load_corpus(data)?;
    let (model, labeled) = Model::from_corpus(config, &corpus, vectors)?;
    let train_set: Vec<_> = labeled.iter().map(|l| model.prepare(l)).collect();
    let dev_set = match dev {
        Some(path) => {
            let dev_corpus = load_corpus(path)?;
            cgcqg_core::labeling::label_with(&dev_corpus, &model.vocab, &model.reduced, model.config.r_h)
                .iter()
                .map(|l| model.prepare(l))
                .collect()
        }
        None => Vec::new(),
    };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.json"), model.config.to_json() + "\n")?;
    log::info!(
        "training on {} examples ({} dev), {} parameters",
        train_set.len(),
        dev_set.len(),
        model.params.iter().map(|(_, t)| t.numel()).sum::<usize>()
    );
    let opts = TrainOptions {
        out_dir: Some(out.to_path_buf()),
        stop_below,
        max_epochs: None,
    };
    let outcome = trainer::train(model, &train_set, &dev_set, &opts)?;
    if let Some(last) = outcome.log.last() {
        log::info!("finished after {} epochs, loss {:.4}", last.epoch, last.total);
    }
    if let Some(e) = outcome.best_epoch {
        log::info!("lowest dev loss at epoch {e}");
    }
    Ok(())
}

fn checkpoint_path(model: &Path, weights: Weights) -> PathBuf {
    if model.is_dir() {
        model.join(weights.file())
    } else {
        model.to_path_buf()
    }
}

#[derive(Serialize, Deserialize)]
struct Prediction {
    id: String,
    prediction: String,
    score: f64,
}

pub fn generate(
    model: &Path,
    weights: Weights,
    data: &Path,
    out: Option<&Path>,
    beam_width: Option<usize>,
    max_len: Option<usize>,
) -> Result<()> {
    let path = checkpoint_path(model, weights);
    let model = Model::load(&path).with_context(|| format!("loading {}", path.display()))?;
    let width = beam_width.unwrap_or(model.config.beam_width);
    let max_len = max_len.unwrap_or(model.config.max_len);
    if width == 0 || max_len == 0 {
        bail!("beam width and max length must be positive");
    }
    let passages = load_passages(data)?;
    let mut w = output(out)?;
    for ex in &passages {
        let hyp = best(&model, &model.prepare_passage(ex), width, max_len)
            .with_context(|| format!("decoding {}", ex.id))?;
        let line = Prediction {
            id: ex.id.clone(),
            prediction: hyp.text(),
            score: hyp.score(),
        };
        serde_json::to_writer(&mut w, &line)?;
        writeln!(w)?;
    }
    w.flush()?;
    log::info!("generated {} questions", passages.len());
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Text {
    Joined(String),
    Tokens(Vec<String>),
}

impl Text {
    fn joined(&self) -> String {
        match self {
            Text::Joined(s) => s.clone(),
            Text::Tokens(t) => t.join(" "),
        }
    }
}

#[derive(Deserialize)]
struct PredLine {
    id: String,
    prediction: Text,
}

#[derive(Deserialize)]
struct RefLine {
    id: String,
    /// Annotated corpus files can serve as references directly.
    #[serde(alias = "question_tokens")]
    question: Text,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), n + 1))?);
    }
    Ok(out)
}

pub fn evaluate(pred: &Path, reference: &Path) -> Result<()> {
    let preds: Vec<PredLine> = read_jsonl(pred)?;
    let refs: Vec<RefLine> = read_jsonl(reference)?;
    let by_id: HashMap<&str, &RefLine> = refs.iter().map(|r| (r.id.as_str(), r)).collect();
    if by_id.len() != refs.len() {
        bail!("{}: duplicate ids", reference.display());
    }
    let mut pairs = Vec::with_capacity(preds.len());
    for p in &preds {
        let Some(r) = by_id.get(p.id.as_str()) else {
            bail!("prediction `{}` has no reference", p.id);
        };
        pairs.push(Pair::from_text(&p.prediction.joined(), &r.question.joined()));
    }
    if preds.len() != refs.len() {
        log::warn!("{} predictions for {} references", preds.len(), refs.len());
    }
    let report = EvalReport::compute(&pairs)?;
    eprint!("{}", report.table());
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

pub fn make_toy_data(n: usize, seed: u64, out: Option<&Path>) -> Result<()> {
    if n == 0 {
        bail!("--n must be at least 1");
    }
    let mut w = output(out)?;
    write_corpus(&mut w, &toy::make_toy_data(n, seed))?;
    w.flush()?;
    Ok(())
}
