//! Training and inference commands over prepared data and checkpoints.

use std::fmt::Write as _;
use std::fs::File;
use std::io::Write as _;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use deepshare::dataprep::{join_units, tokenize, Vocabulary};
use deepshare::evaluation::{corpus_bleu, corpus_perplexity, gains_csv, is_noun_tag, ngram_gain, BleuReport, TagFilter};
use deepshare::mtl::{adapt, Checkpoint, EpochRecord, Provenance, TrainOutcome, Trainer};
use deepshare::seq2seq::{ModelDims, Seq2SeqModel};

use crate::config::{RunConfig, TaskKind};
use crate::failure::{read_text, write_text, CliError, CliResult};
use crate::prepared::{PreparedDir, Side};

pub const CONFIG_FILE: &str = "config.toml";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))
}

/// Appends one line per epoch to a log file and echoes it to stderr.
struct EpochLog {
    file: File,
    path: PathBuf,
    task_names: Vec<String>,
}

impl EpochLog {
    fn create(path: PathBuf, task_names: Vec<String>) -> CliResult<Self> {
        let file = File::create(&path).map_err(|e| CliError::Data(format!("cannot create {}: {e}", path.display())))?;
        Ok(Self { file, path, task_names })
    }

    fn record(&mut self, r: &EpochRecord) -> CliResult<()> {
        let mut line = format!("epoch {} steps {} objective {:.6}", r.epoch, r.steps, r.mean_objective);
        for ((name, ppl), lr) in self.task_names.iter().zip(&r.dev_perplexity).zip(&r.learning_rates) {
            match ppl {
                Some(p) => write!(line, " | {name} dev_ppl {p:.4} lr {lr}"),
                None => write!(line, " | {name} dev_ppl - lr {lr}"),
            }
            .expect("writing to a string");
        }
        if r.improved {
            line.push_str(" | best");
        }
        eprintln!("{line}");
        writeln!(self.file, "{line}")
            .and_then(|_| self.file.flush())
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", self.path.display())))
    }
}

fn save(checkpoint: &Checkpoint, path: &Path) -> CliResult<()> {
    checkpoint.save(path).map_err(|e| CliError::from(e).context(path.display()))
}

pub fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    Checkpoint::load(path).map_err(|e| CliError::from(e).context(path.display()))
}

/// The configuration a checkpoint was trained with, with `overrides`
/// applied, or the one at `explicit` when given.
pub fn checkpoint_config(checkpoint: &Checkpoint, explicit: Option<&Path>, overrides: &[String]) -> CliResult<RunConfig> {
    match explicit {
        Some(path) => RunConfig::load(path, overrides),
        None => {
            let text = checkpoint
                .meta
                .config_text
                .as_deref()
                .ok_or_else(|| CliError::Usage("checkpoint carries no configuration; pass --config".into()))?;
            RunConfig::parse(text, overrides)
        }
    }
}

fn vocab_sizes(dir: &PreparedDir) -> CliResult<(usize, usize)> {
    Ok((dir.vocab(Side::Source)?.len(), dir.vocab(Side::Target)?.len()))
}

pub struct TrainSummary {
    pub run_dir: PathBuf,
    pub outcome: TrainOutcome,
}

/// Trains every configured task into `config.output`.
pub fn train(config: &RunConfig) -> CliResult<TrainSummary> {
    let prepared = PreparedDir::new(&config.prepared);
    let (src_vocab, tgt_vocab) = vocab_sizes(&prepared)?;
    let tasks = prepared.tasks(config)?;
    let dims: Vec<ModelDims> = vec![config.dims(src_vocab, tgt_vocab); tasks.len()];
    let run_dir = config.output.clone();
    create_dir(&run_dir)?;
    let text = config.to_toml();
    write_text(&run_dir.join(CONFIG_FILE), &text)?;
    let provenance = Provenance {
        config_hash: Some(config.hash()),
        config_text: Some(text),
    };
    let trainer = Trainer::new(&tasks, &dims, &config.plan(), config.train_config())?.with_provenance(provenance);
    let mut log = EpochLog::create(run_dir.join("train.log"), tasks.iter().map(|t| t.name.clone()).collect())?;
    let mut log_error = None;
    let outcome = trainer.run(|record, _| match log.record(record) {
        Ok(()) => ControlFlow::Continue(()),
        Err(e) => {
            log_error = Some(e);
            ControlFlow::Break(())
        }
    })?;
    if let Some(e) = log_error {
        return Err(e);
    }
    save(&outcome.best, &run_dir.join(BEST_CHECKPOINT))?;
    save(&outcome.last, &run_dir.join(LAST_CHECKPOINT))?;
    Ok(TrainSummary { run_dir, outcome })
}

/// Continues a trained checkpoint on the main task alone.
pub fn adapt_checkpoint(checkpoint: &Checkpoint, config: &RunConfig, epochs: usize, run_dir: &Path) -> CliResult<TrainOutcome> {
    let prepared = PreparedDir::new(&config.prepared);
    let tasks = prepared.tasks(config)?;
    create_dir(run_dir)?;
    let mut log = EpochLog::create(run_dir.join("adapt.log"), tasks.iter().map(|t| t.name.clone()).collect())?;
    let outcome = adapt(checkpoint, &tasks, epochs, &config.train_config())?;
    for record in &outcome.history {
        log.record(record)?;
    }
    save(&outcome.best, &run_dir.join(BEST_CHECKPOINT))?;
    save(&outcome.last, &run_dir.join(LAST_CHECKPOINT))?;
    Ok(outcome)
}

/// Index of the task called `name`, the main task when `None`.
pub fn task_index(checkpoint: &Checkpoint, name: Option<&str>) -> CliResult<usize> {
    match name {
        None => Ok(0),
        Some(n) => checkpoint
            .meta
            .task_names
            .iter()
            .position(|t| t == n)
            .ok_or_else(|| CliError::Usage(format!("checkpoint has no task {n:?} (tasks: {})", checkpoint.meta.task_names.join(", ")))),
    }
}

/// A task model with its vocabularies, ready to decode.
pub struct Translator {
    model: Seq2SeqModel,
    store: deepshare::autodiff::ParameterStore,
    source_bpe: deepshare::dataprep::BpeModel,
    source_vocab: Vocabulary,
    target_vocab: Vocabulary,
    join_subwords: bool,
    max_len: usize,
}

impl Translator {
    pub fn new(checkpoint: &Checkpoint, config: &RunConfig, task: usize) -> CliResult<Self> {
        let prepared = PreparedDir::new(&config.prepared);
        let (model, store) = checkpoint.task_model(task)?;
        let source_vocab = prepared.vocab(Side::Source)?;
        let target_vocab = prepared.vocab(Side::Target)?;
        let dims = model.dims();
        if dims.src_vocab != source_vocab.len() || dims.tgt_vocab != target_vocab.len() {
            return Err(CliError::Data(format!(
                "checkpoint vocabularies ({} / {}) do not match {} ({} / {})",
                dims.src_vocab,
                dims.tgt_vocab,
                prepared.root().display(),
                source_vocab.len(),
                target_vocab.len()
            )));
        }
        let kind = config.tasks.get(task).map(|t| t.kind).unwrap_or_default();
        Ok(Self {
            model,
            store,
            source_bpe: prepared.bpe(Side::Source)?,
            source_vocab,
            target_vocab,
            join_subwords: kind == TaskKind::Text,
            max_len: config.training.max_output_length,
        })
    }

    /// Greedy output tokens for source ids.
    pub fn decode_ids(&self, source: &[usize], join: bool) -> CliResult<Vec<String>> {
        let ids = self.model.greedy_decode(&self.store, source, self.max_len)?;
        let units = self.target_vocab.decode(&ids);
        Ok(if join && self.join_subwords { join_units(&units) } else { units })
    }

    /// Greedy translation of one whitespace-tokenized line.
    pub fn translate_line(&self, line: &str) -> CliResult<String> {
        let units = self.source_bpe.segment(&tokenize(line));
        if units.is_empty() {
            return Ok(String::new());
        }
        Ok(self.decode_ids(&self.source_vocab.encode(&units), true)?.join(" "))
    }
}

pub fn translate_text(translator: &Translator, input: &str) -> CliResult<String> {
    let mut out = String::new();
    for line in input.lines() {
        out.push_str(&translator.translate_line(line)?);
        out.push('\n');
    }
    Ok(out)
}

pub struct Evaluation {
    pub bleu: BleuReport,
    pub perplexity: f64,
    pub sentences: usize,
}

impl Evaluation {
    pub fn report(&self, task: &str, split: &str) -> String {
        let mut s = format!("task {task} split {split} sentences {}\n{}\n", self.sentences, self.bleu);
        let _ = writeln!(s, "perplexity {:.4}", self.perplexity);
        s.push_str(&self.bleu.key_values());
        let _ = writeln!(s, "perplexity={}", self.perplexity);
        s
    }
}

/// BLEU of greedy outputs, or of `candidates` when given, against the
/// prepared references, and perplexity of the references, on one split of
/// one task.
pub fn evaluate(
    checkpoint: &Checkpoint,
    config: &RunConfig,
    task: usize,
    split: &str,
    subword: bool,
    candidates: Option<&Path>,
) -> CliResult<Evaluation> {
    let name = &checkpoint.meta.task_names[task];
    let prepared = PreparedDir::new(&config.prepared);
    if !prepared.has_split(name, split) {
        return Err(CliError::Data(format!("no prepared {split} split for task {name} in {}", prepared.root().display())));
    }
    let pairs = prepared.pairs(name, split)?;
    let translator = Translator::new(checkpoint, config, task)?;
    let references: Vec<Vec<String>> = if subword {
        pairs.iter().map(|p| translator.target_vocab.decode(&p.target)).collect()
    } else {
        prepared.references(name, split)?
    };
    if references.len() != pairs.len() {
        return Err(CliError::Data(format!("{name}.{split}: {} references for {} pairs", references.len(), pairs.len())));
    }
    let candidates = match candidates {
        Some(path) => token_lines(path)?,
        None => pairs
            .iter()
            .map(|p| translator.decode_ids(&p.source, !subword))
            .collect::<CliResult<Vec<_>>>()?,
    };
    let bleu = corpus_bleu(&candidates, &references)?;
    let perplexity = corpus_perplexity(&translator.model, &translator.store, &pairs)?;
    Ok(Evaluation {
        bleu,
        perplexity,
        sentences: pairs.len(),
    })
}

fn token_lines(path: &Path) -> CliResult<Vec<Vec<String>>> {
    Ok(read_text(path)?.lines().map(tokenize).collect())
}

/// Per-order gains of system A over system B in gold n-grams, as CSV.
pub fn analyze(system_a: &Path, system_b: &Path, gold: &Path, tags: Option<&Path>, max_n: usize) -> CliResult<String> {
    if max_n == 0 {
        return Err(CliError::Usage("--max-n must be positive".into()));
    }
    let (a, b, g) = (token_lines(system_a)?, token_lines(system_b)?, token_lines(gold)?);
    let tag_lines = tags.map(token_lines).transpose()?;
    let keep = |t: &str| is_noun_tag(t);
    let filter = tag_lines.as_ref().map(|tags| TagFilter { tags, keep: &keep });
    Ok(gains_csv(&ngram_gain(&a, &b, &g, max_n, filter.as_ref())?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepAxis {
    Encoder,
    Decoder,
}

impl SweepAxis {
    fn name(self) -> &'static str {
        match self {
            SweepAxis::Encoder => "encoder",
            SweepAxis::Decoder => "decoder",
        }
    }
}

fn unix_seconds() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

pub const SWEEP_HEADER: &str = "axis,shared_layers,bleu,dev_ppl,split,started_unix,finished_unix";

/// One full train and evaluate per value of the axis, all with the same
/// seed. Rows are appended to `dir/sweep.csv` as they finish.
pub fn sweep(config: &RunConfig, axis: SweepAxis, values: &[usize], dir: &Path) -> CliResult<String> {
    let depth = match axis {
        SweepAxis::Encoder => config.model.encoder_layers,
        SweepAxis::Decoder => config.model.decoder_layers,
    };
    if values.is_empty() {
        return Err(CliError::Usage("sweep needs at least one value".into()));
    }
    if let Some(v) = values.iter().find(|&&v| v > depth) {
        return Err(CliError::Usage(format!("cannot share {v} {} layers of {depth}", axis.name())));
    }
    create_dir(dir)?;
    let csv_path = dir.join("sweep.csv");
    let mut csv = format!("{SWEEP_HEADER}\n");
    write_text(&csv_path, &csv)?;
    for &v in values {
        let mut run = config.clone();
        for t in &mut run.tasks {
            match axis {
                SweepAxis::Encoder => t.shared_encoder_layers = None,
                SweepAxis::Decoder => t.shared_decoder_layers = None,
            }
        }
        match axis {
            SweepAxis::Encoder => run.sharing.encoder_layers = v,
            SweepAxis::Decoder => run.sharing.decoder_layers = v,
        }
        run.output = dir.join(format!("{}-{v}", axis.name()));
        run.plan().validate(run.model.encoder_layers, run.model.decoder_layers)?;
        let started = unix_seconds();
        let summary = train(&run).map_err(|e| e.context(format!("sweep {}={v}", axis.name())))?;
        let best = &summary.outcome.best;
        let main = &run.tasks[0].name;
        let split = if PreparedDir::new(&run.prepared).has_split(main, "test") { "test" } else { "dev" };
        let eval = evaluate(best, &run, 0, split, false, None)?;
        let dev_ppl = best.meta.best_dev[0].map_or_else(String::new, |p| p.to_string());
        let finished = unix_seconds();
        let _ = writeln!(
            csv,
            "{},{v},{:.4},{dev_ppl},{split},{started:.3},{finished:.3}",
            axis.name(),
            eval.bleu.bleu
        );
        write_text(&csv_path, &csv)?;
    }
    Ok(csv)
}
