//! Run configuration: TOML on disk, dotted-key overrides on the command line.

use std::path::{Path, PathBuf};

use deepshare::dataprep::LengthLimits;
use deepshare::mtl::{Adam, AdversarialConfig, SharingPlan, TaskSharing, TrainConfig};
use deepshare::recurrent::CellKind;
use deepshare::seq2seq::ModelDims;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::failure::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Run directory for train/adapt/sweep artifacts.
    pub output: PathBuf,
    /// Directory written by `prepare` and read by the other commands.
    pub prepared: PathBuf,
    #[serde(default)]
    pub data: DataConfig,
    /// Task 0 is the main task.
    pub tasks: Vec<TaskConfig>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub sharing: SharingConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub adversarial: AdversarialSettings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Total subword inventory per BPE model.
    pub bpe_vocab_size: usize,
    /// One BPE model over source and translation-target text; otherwise one
    /// per side.
    pub joint_bpe: bool,
    /// Cap on non-reserved entries per vocabulary.
    pub max_vocab: Option<usize>,
    /// Words per side before segmentation; 0 disables.
    pub max_words: usize,
    /// Units per side after segmentation; 0 disables.
    pub max_units: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            bpe_vocab_size: 30_000,
            joint_bpe: true,
            max_vocab: None,
            max_words: 80,
            max_units: 300,
        }
    }
}

impl DataConfig {
    pub fn limits(&self) -> LengthLimits {
        let on = |n: usize| (n > 0).then_some(n);
        LengthLimits {
            max_words: on(self.max_words),
            max_units: on(self.max_units),
        }
    }
}

/// How the target side of a task is read.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    /// Plain text, segmented with BPE.
    #[default]
    Text,
    /// One bracketed constituency tree per line.
    Tree,
    /// PENMAN graphs separated by blank lines.
    Amr,
    /// CoNLL columns in the source file; no target file.
    Tagging,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFiles {
    pub source: PathBuf,
    #[serde(default)]
    pub target: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub name: String,
    #[serde(default)]
    pub kind: TaskKind,
    #[serde(default = "one")]
    pub weight: f64,
    pub train: SplitFiles,
    pub dev: SplitFiles,
    #[serde(default)]
    pub test: Option<SplitFiles>,
    /// Per-task length limits; the `data` limits apply when absent.
    #[serde(default)]
    pub max_words: Option<usize>,
    #[serde(default)]
    pub max_units: Option<usize>,
    /// Shared layers for this auxiliary task; `sharing` applies when absent.
    #[serde(default)]
    pub shared_encoder_layers: Option<usize>,
    #[serde(default)]
    pub shared_decoder_layers: Option<usize>,
}

fn one() -> f64 {
    1.0
}

impl TaskConfig {
    pub fn limits(&self, data: &DataConfig) -> LengthLimits {
        let base = data.limits();
        let on = |n: usize| (n > 0).then_some(n);
        LengthLimits {
            max_words: self.max_words.map_or(base.max_words, on),
            max_units: self.max_units.map_or(base.max_units, on),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub cell: CellKind,
    pub embedding: usize,
    pub hidden: usize,
    pub attention: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            cell: CellKind::Gru,
            embedding: 400,
            hidden: 400,
            attention: 200,
            encoder_layers: 3,
            decoder_layers: 3,
            dropout: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SharingConfig {
    /// Top encoder layers every auxiliary task shares with the main task.
    pub encoder_layers: usize,
    /// Top decoder layers every auxiliary task shares with the main task.
    pub decoder_layers: usize,
    pub source_embedding: bool,
    pub target_embedding: bool,
    pub attention: bool,
    /// Follows `target_embedding` when absent.
    pub output: Option<bool>,
}

impl Default for SharingConfig {
    fn default() -> Self {
        Self {
            encoder_layers: 2,
            decoder_layers: 1,
            source_embedding: true,
            target_embedding: true,
            attention: false,
            output: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub adapt_epochs: usize,
    /// Output length cap for greedy decoding.
    pub max_output_length: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.003,
            batch_size: 32,
            epochs: 50,
            adapt_epochs: 20,
            max_output_length: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdversarialSettings {
    pub enabled: bool,
    pub lambda: f64,
    /// Discriminator updates per model update.
    pub ratio: usize,
    pub hidden: usize,
    pub learning_rate: f64,
}

impl Default for AdversarialSettings {
    fn default() -> Self {
        let d = AdversarialConfig::default();
        Self {
            enabled: false,
            lambda: d.lambda,
            ratio: d.discriminator_steps,
            hidden: d.hidden_dim,
            learning_rate: d.learning_rate,
        }
    }
}

/// Parses `key=value` and writes `value` at the dotted `key` of `doc`;
/// `tasks.1.weight` addresses the second task. Values are read as TOML when
/// possible (`3`, `true`, `[1, 2]`), as plain strings otherwise.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> CliResult<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override {assignment:?} is not of the form key=value")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|s| s.is_empty()) {
        return Err(CliError::Usage(format!("override key {key:?} has an empty segment")));
    }
    set_path(doc, &path, value, key)
}

fn set_path(table: &mut toml::Table, path: &[&str], value: toml::Value, key: &str) -> CliResult<()> {
    let bad = |m: &str| CliError::Usage(format!("override key {key:?}: {m}"));
    let (head, rest) = path.split_first().expect("paths are non-empty");
    if rest.is_empty() {
        table.insert(head.to_string(), value);
        return Ok(());
    }
    let entry = table
        .entry(head.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    match entry {
        toml::Value::Table(t) => set_path(t, rest, value, key),
        toml::Value::Array(items) => {
            let (idx, rest) = rest.split_first().expect("checked above");
            let idx: usize = idx.parse().map_err(|_| bad(&format!("{head} needs an index")))?;
            if rest.is_empty() {
                return Err(bad("cannot replace a whole list entry"));
            }
            let item = items
                .get_mut(idx)
                .and_then(|v| v.as_table_mut())
                .ok_or_else(|| bad(&format!("no entry {idx} in {head}")))?;
            set_path(item, rest, value, key)
        }
        _ => Err(bad(&format!("{head} is not a table"))),
    }
}

impl RunConfig {
    /// Reads `path` and applies `overrides` in order.
    pub fn load(path: &Path, overrides: &[String]) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, overrides)
    }

    pub fn parse(text: &str, overrides: &[String]) -> CliResult<Self> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let config: RunConfig = toml::Value::Table(doc)
            .try_into()
            .map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
        config.validate_shape()?;
        Ok(config)
    }

    /// Canonical TOML text; the config hash is taken over this.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configs always serialize")
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Checks that need no files.
    fn validate_shape(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Usage(m));
        if self.tasks.is_empty() {
            return bad("at least one task is required".into());
        }
        let mut names = std::collections::BTreeSet::new();
        for t in &self.tasks {
            if t.name.is_empty() || !t.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                return bad(format!("task name {:?} must be non-empty ASCII letters, digits, '-' or '_'", t.name));
            }
            if !names.insert(&t.name) {
                return bad(format!("task name {:?} appears twice", t.name));
            }
            if !(t.weight >= 0.0 && t.weight.is_finite()) {
                return bad(format!("task {}: weight must be a non-negative number", t.name));
            }
            let needs_target = t.kind != TaskKind::Tagging;
            for split in [Some(&t.train), Some(&t.dev), t.test.as_ref()].into_iter().flatten() {
                if needs_target != split.target.is_some() {
                    return bad(format!(
                        "task {}: {} tasks {} a target file",
                        t.name,
                        format!("{:?}", t.kind).to_lowercase(),
                        if needs_target { "need" } else { "take no" }
                    ));
                }
            }
        }
        if self.tasks[0].kind != TaskKind::Text {
            return bad("the main task must be a text task".into());
        }
        if self.tasks[0].weight == 0.0 {
            return bad("the main task weight must be positive".into());
        }
        let (enc, dec) = (self.model.encoder_layers, self.model.decoder_layers);
        let shared = std::iter::once((None, self.sharing.encoder_layers, self.sharing.decoder_layers)).chain(
            self.tasks[1..]
                .iter()
                .map(|t| (Some(&t.name), t.shared_encoder_layers.unwrap_or(0), t.shared_decoder_layers.unwrap_or(0))),
        );
        for (task, e, d) in shared {
            if e > enc || d > dec {
                let scope = task.map_or_else(|| "sharing".to_string(), |n| format!("task {n}"));
                return bad(format!("{scope}: cannot share {e} of {enc} encoder and {d} of {dec} decoder layers"));
            }
        }
        self.plan().validate(enc, dec)?;
        self.dims(4, 4).validate()?;
        self.train_config().validate()?;
        Ok(())
    }

    /// Checks that every referenced input file exists.
    pub fn check_inputs(&self) -> CliResult<()> {
        for t in &self.tasks {
            for split in [Some(&t.train), Some(&t.dev), t.test.as_ref()].into_iter().flatten() {
                for p in std::iter::once(&split.source).chain(split.target.as_ref()) {
                    if !p.is_file() {
                        return Err(CliError::Data(format!("task {}: input file {} not found", t.name, p.display())));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn dims(&self, src_vocab: usize, tgt_vocab: usize) -> ModelDims {
        ModelDims {
            src_vocab,
            tgt_vocab,
            embed_dim: self.model.embedding,
            hidden_dim: self.model.hidden,
            attention_dim: self.model.attention,
            encoder_layers: self.model.encoder_layers,
            decoder_layers: self.model.decoder_layers,
            cell: self.model.cell,
            dropout: self.model.dropout,
        }
    }

    pub fn plan(&self) -> SharingPlan {
        let (enc, dec) = (self.model.encoder_layers, self.model.decoder_layers);
        let s = &self.sharing;
        SharingPlan {
            aux: self.tasks[1..]
                .iter()
                .map(|t| {
                    TaskSharing::top(
                        t.shared_encoder_layers.unwrap_or(s.encoder_layers),
                        enc,
                        t.shared_decoder_layers.unwrap_or(s.decoder_layers),
                        dec,
                    )
                })
                .collect(),
            share_source_embedding: s.source_embedding,
            share_target_embedding: s.target_embedding,
            share_attention: s.attention,
            share_output: s.output,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let a = &self.adversarial;
        TrainConfig {
            learning_rate: self.training.learning_rate,
            batch_size: self.training.batch_size,
            epochs: self.training.epochs,
            seed: self.seed,
            adam: Adam::default(),
            adversarial: a.enabled.then(|| AdversarialConfig {
                lambda: a.lambda,
                discriminator_steps: a.ratio,
                hidden_dim: a.hidden,
                learning_rate: a.learning_rate,
            }),
        }
    }
}
