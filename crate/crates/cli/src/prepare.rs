//! `prepare`: raw task files to BPE models, vocabularies and id corpora.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use deepshare::dataprep::{
    encode_corpus, filter_corpus, join_units, learn_bpe_for_vocab_size, parse_conll, parse_penman_file, read_parallel,
    tokenize, word_counts, BpeModel, TextPair, Tree, Vocabulary,
};

use crate::config::{RunConfig, SplitFiles, TaskConfig, TaskKind};
use crate::failure::{read_text, write_text, CliError, CliResult};
use crate::prepared::{format_ids, PreparedDir, Side, SPLITS};

/// Pair counts per split of one task, `None` for an absent split.
pub struct TaskStats {
    pub name: String,
    pub read: [Option<usize>; 3],
    pub kept: [Option<usize>; 3],
}

pub struct Summary {
    pub tasks: Vec<TaskStats>,
    pub source_vocab: usize,
    pub target_vocab: usize,
    pub source_merges: usize,
    pub target_merges: usize,
}

fn lines(path: &Path) -> CliResult<Vec<String>> {
    Ok(read_text(path)?.lines().map(str::to_string).collect())
}

/// Reads one split as token pairs; structured targets come out linearized.
pub fn read_split(task: &TaskConfig, files: &SplitFiles) -> CliResult<Vec<TextPair>> {
    let target_path = files.target.as_deref();
    let pairs = match task.kind {
        TaskKind::Text => {
            let tgt = target_path.expect("validated");
            read_parallel(&read_text(&files.source)?, &read_text(tgt)?).map_err(|e| CliError::from(e).context(tgt.display()))?
        }
        TaskKind::Tree => {
            let tgt = target_path.expect("validated");
            let targets: Vec<Vec<String>> = lines(tgt)?
                .iter()
                .filter(|l| !l.trim().is_empty())
                .enumerate()
                .map(|(i, l)| {
                    Tree::parse(l)
                        .map(|t| t.linearize())
                        .map_err(|e| CliError::from(e).context(format!("{} tree {}", tgt.display(), i + 1)))
                })
                .collect::<CliResult<_>>()?;
            zip_sources(&files.source, targets, tgt)?
        }
        TaskKind::Amr => {
            let tgt = target_path.expect("validated");
            let targets = parse_penman_file(&read_text(tgt)?)
                .and_then(|graphs| graphs.iter().map(|g| g.linearize()).collect::<Result<Vec<_>, _>>())
                .map_err(|e| CliError::from(e).context(tgt.display()))?;
            zip_sources(&files.source, targets, tgt)?
        }
        TaskKind::Tagging => parse_conll(&read_text(&files.source)?)
            .map_err(|e| CliError::from(e).context(files.source.display()))?
            .into_iter()
            .map(|s| TextPair::new(s.words, s.tags))
            .collect(),
    };
    Ok(pairs)
}

fn zip_sources(source: &Path, targets: Vec<Vec<String>>, target: &Path) -> CliResult<Vec<TextPair>> {
    let sources: Vec<String> = lines(source)?;
    if sources.len() != targets.len() {
        return Err(CliError::Data(format!(
            "{} has {} sentences but {} has {} targets",
            source.display(),
            sources.len(),
            target.display(),
            targets.len()
        )));
    }
    Ok(sources.iter().zip(targets).map(|(s, t)| TextPair::new(tokenize(s), t)).collect())
}

fn learn(counts: &BTreeMap<String, u64>, vocab_size: usize, what: &str) -> CliResult<BpeModel> {
    learn_bpe_for_vocab_size(counts, vocab_size).map_err(|e| CliError::from(e).context(format!("learning {what} BPE")))
}

fn add_counts(into: &mut BTreeMap<String, u64>, from: BTreeMap<String, u64>) {
    for (w, c) in from {
        *into.entry(w).or_insert(0) += c;
    }
}

/// Runs the whole pipeline and writes every artifact under `out`.
pub fn prepare(config: &RunConfig, out: &Path) -> CliResult<Summary> {
    config.check_inputs()?;
    // raw[task][split]
    let mut raw: Vec<[Option<Vec<TextPair>>; 3]> = Vec::new();
    for task in &config.tasks {
        let splits = [Some(&task.train), Some(&task.dev), task.test.as_ref()];
        let mut read = [None, None, None];
        for (slot, files) in read.iter_mut().zip(splits) {
            if let Some(f) = files {
                *slot = Some(read_split(task, f)?);
            }
        }
        raw.push(read);
    }

    let mut source_counts = BTreeMap::new();
    let mut text_target_counts = BTreeMap::new();
    for (task, splits) in config.tasks.iter().zip(&raw) {
        let train = splits[0].as_ref().expect("train is required");
        let sources: Vec<Vec<String>> = train.iter().map(|p| p.source.clone()).collect();
        add_counts(&mut source_counts, word_counts(&sources));
        if task.kind == TaskKind::Text {
            let targets: Vec<Vec<String>> = train.iter().map(|p| p.target.clone()).collect();
            add_counts(&mut text_target_counts, word_counts(&targets));
        }
    }
    let size = config.data.bpe_vocab_size;
    let (source_bpe, target_bpe) = if config.data.joint_bpe {
        let mut joint = source_counts.clone();
        add_counts(&mut joint, text_target_counts);
        let model = learn(&joint, size, "joint")?;
        (model.clone(), model)
    } else {
        (learn(&source_counts, size, "source")?, learn(&text_target_counts, size, "target")?)
    };

    // kept[task][split], segmented and length-filtered.
    let mut kept: Vec<[Option<Vec<TextPair>>; 3]> = Vec::new();
    for (task, splits) in config.tasks.iter().zip(&raw) {
        let limits = task.limits(&config.data);
        let segment_target = |t: &[String]| match task.kind {
            TaskKind::Text => target_bpe.segment(t),
            _ => t.to_vec(),
        };
        kept.push(splits.clone().map(|s| s.map(|pairs| filter_corpus(&pairs, limits, |s| source_bpe.segment(s), segment_target))));
    }
    for (task, splits) in config.tasks.iter().zip(&kept) {
        for (split, pairs) in SPLITS.iter().zip(splits).take(2) {
            if pairs.as_ref().is_some_and(|p| p.is_empty()) {
                return Err(CliError::Data(format!("task {}: no {split} pairs survive length filtering", task.name)));
            }
        }
    }

    let train_side = |side: Side| -> Vec<Vec<String>> {
        kept.iter()
            .flat_map(|splits| splits[0].as_ref().expect("train is required"))
            .map(|p| match side {
                Side::Source => p.source.clone(),
                Side::Target => p.target.clone(),
            })
            .collect()
    };
    let source_vocab = Vocabulary::from_corpus(&train_side(Side::Source), config.data.max_vocab)?;
    let target_vocab = Vocabulary::from_corpus(&train_side(Side::Target), config.data.max_vocab)?;

    let dir = PreparedDir::new(out);
    write_bpe(&dir, Side::Source, &source_bpe)?;
    write_bpe(&dir, Side::Target, &target_bpe)?;
    write_vocab(&dir, Side::Source, &source_vocab)?;
    write_vocab(&dir, Side::Target, &target_vocab)?;

    let mut stats = Vec::new();
    for ((task, raw_splits), kept_splits) in config.tasks.iter().zip(&raw).zip(&kept) {
        for (split, pairs) in SPLITS.iter().zip(kept_splits) {
            let Some(pairs) = pairs else { continue };
            let encoded = encode_corpus(pairs, &source_vocab, &target_vocab);
            write_text(&dir.ids_path(&task.name, split), &format_ids(&encoded))?;
            let mut refs = String::new();
            for p in pairs {
                let tokens = match task.kind {
                    TaskKind::Text => join_units(&p.target),
                    _ => p.target.clone(),
                };
                let _ = writeln!(refs, "{}", tokens.join(" "));
            }
            write_text(&dir.ref_path(&task.name, split), &refs)?;
        }
        stats.push(TaskStats {
            name: task.name.clone(),
            read: std::array::from_fn(|i| raw_splits[i].as_ref().map(Vec::len)),
            kept: std::array::from_fn(|i| kept_splits[i].as_ref().map(Vec::len)),
        });
    }
    let summary = Summary {
        tasks: stats,
        source_vocab: source_vocab.len(),
        target_vocab: target_vocab.len(),
        source_merges: source_bpe.len(),
        target_merges: target_bpe.len(),
    };
    write_text(&dir.stats_path(), &format_stats(&summary))?;
    Ok(summary)
}

fn write_bpe(dir: &PreparedDir, side: Side, model: &BpeModel) -> CliResult<()> {
    let mut bytes = Vec::new();
    model.write_to(&mut bytes)?;
    write_text(&dir.bpe_path(side), &String::from_utf8(bytes).expect("merges are UTF-8"))
}

fn write_vocab(dir: &PreparedDir, side: Side, vocab: &Vocabulary) -> CliResult<()> {
    let mut bytes = Vec::new();
    vocab.write_to(&mut bytes)?;
    write_text(&dir.vocab_path(side), &String::from_utf8(bytes).expect("tokens are UTF-8"))
}

/// `98846` as `98,846`.
pub fn thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

pub fn format_stats(s: &Summary) -> String {
    let cell = |v: Option<usize>| v.map_or_else(|| "-".to_string(), thousands);
    let width = s.tasks.iter().map(|t| t.name.len()).max().unwrap_or(0).max(4);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$} | {:>10} | {:>10} | {:>10}", "task", "Train", "Dev", "Test");
    let _ = writeln!(out, "{}", "-".repeat(width + 39));
    for t in &s.tasks {
        let _ = writeln!(out, "{:<width$} | {:>10} | {:>10} | {:>10}", t.name, cell(t.kept[0]), cell(t.kept[1]), cell(t.kept[2]));
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "pairs read before length filtering:");
    for t in &s.tasks {
        let _ = writeln!(out, "{:<width$} | {:>10} | {:>10} | {:>10}", t.name, cell(t.read[0]), cell(t.read[1]), cell(t.read[2]));
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "source vocabulary {} ({} merges)", s.source_vocab, s.source_merges);
    let _ = writeln!(out, "target vocabulary {} ({} merges)", s.target_vocab, s.target_merges);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thousands_separators() {
        assert_eq!(thousands(0), "0");
        assert_eq!(thousands(999), "999");
        assert_eq!(thousands(5357), "5,357");
        assert_eq!(thousands(133290), "133,290");
        assert_eq!(thousands(1000000), "1,000,000");
    }
}
