//! Layout of a prepared-corpus directory and readers for it.
//!
//! ```text
//! bpe.src  bpe.tgt       merge lists (identical when learned jointly)
//! vocab.src vocab.tgt    one token per line, id = line index + 3
//! {task}.{split}.ids     "source ids<TAB>target ids" per pair, `</s>` included
//! {task}.{split}.ref     target tokens per pair, subword units joined
//! stats.txt              pair counts per task and split
//! ```

use std::fmt::Write as _;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use deepshare::dataprep::{BpeModel, Vocabulary};
use deepshare::mtl::{SentencePair, TaskData};

use crate::config::RunConfig;
use crate::failure::{read_text, CliError, CliResult};

pub const SPLITS: [&str; 3] = ["train", "dev", "test"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Source,
    Target,
}

impl Side {
    fn suffix(self) -> &'static str {
        match self {
            Side::Source => "src",
            Side::Target => "tgt",
        }
    }
}

pub struct PreparedDir {
    root: PathBuf,
}

impl PreparedDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn bpe_path(&self, side: Side) -> PathBuf {
        self.root.join(format!("bpe.{}", side.suffix()))
    }

    pub fn vocab_path(&self, side: Side) -> PathBuf {
        self.root.join(format!("vocab.{}", side.suffix()))
    }

    pub fn ids_path(&self, task: &str, split: &str) -> PathBuf {
        self.root.join(format!("{task}.{split}.ids"))
    }

    pub fn ref_path(&self, task: &str, split: &str) -> PathBuf {
        self.root.join(format!("{task}.{split}.ref"))
    }

    pub fn stats_path(&self) -> PathBuf {
        self.root.join("stats.txt")
    }

    pub fn bpe(&self, side: Side) -> CliResult<BpeModel> {
        let path = self.bpe_path(side);
        let text = read_text(&path)?;
        BpeModel::read_from(BufReader::new(text.as_bytes())).map_err(|e| CliError::from(e).context(path.display()))
    }

    pub fn vocab(&self, side: Side) -> CliResult<Vocabulary> {
        let path = self.vocab_path(side);
        let text = read_text(&path)?;
        Vocabulary::read_from(BufReader::new(text.as_bytes())).map_err(|e| CliError::from(e).context(path.display()))
    }

    pub fn has_split(&self, task: &str, split: &str) -> bool {
        self.ids_path(task, split).is_file()
    }

    pub fn pairs(&self, task: &str, split: &str) -> CliResult<Vec<SentencePair>> {
        let path = self.ids_path(task, split);
        parse_ids(&read_text(&path)?).map_err(|e| e.context(path.display()))
    }

    pub fn references(&self, task: &str, split: &str) -> CliResult<Vec<Vec<String>>> {
        let path = self.ref_path(task, split);
        Ok(read_text(&path)?
            .lines()
            .map(|l| l.split_whitespace().map(str::to_string).collect())
            .collect())
    }

    /// Train and dev data of every configured task, weights from `config`.
    pub fn tasks(&self, config: &RunConfig) -> CliResult<Vec<TaskData>> {
        config
            .tasks
            .iter()
            .map(|t| {
                let mut data = TaskData::new(t.name.clone(), self.pairs(&t.name, "train")?, self.pairs(&t.name, "dev")?);
                data.weight = t.weight;
                Ok(data)
            })
            .collect()
    }
}

pub fn format_ids(pairs: &[SentencePair]) -> String {
    let mut out = String::new();
    let join = |ids: &[usize]| ids.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
    for p in pairs {
        let _ = writeln!(out, "{}\t{}", join(&p.source), join(&p.target));
    }
    out
}

pub fn parse_ids(text: &str) -> CliResult<Vec<SentencePair>> {
    text.lines()
        .enumerate()
        .map(|(n, line)| {
            let bad = |m: &str| CliError::Data(format!("line {}: {m}", n + 1));
            let (src, tgt) = line.split_once('\t').ok_or_else(|| bad("expected source and target ids separated by a tab"))?;
            let ids = |s: &str| -> CliResult<Vec<usize>> {
                s.split_whitespace()
                    .map(|t| t.parse().map_err(|_| bad(&format!("{t:?} is not a token id"))))
                    .collect()
            };
            Ok(SentencePair::new(ids(src)?, ids(tgt)?))
        })
        .collect()
}
