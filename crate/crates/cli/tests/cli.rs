use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const WORDS: [&str; 12] = ["the", "cat", "dog", "sat", "ran", "on", "mat", "big", "small", "red", "house", "tree"];

/// Deterministic sentences from a tiny LCG so the corpus needs no rng crate.
fn sentences(n: usize, mut state: u64) -> Vec<Vec<&'static str>> {
    let mut next = move |m: usize| {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 33) as usize) % m
    };
    (0..n).map(|_| (0..2 + next(5)).map(|_| WORDS[next(WORDS.len())]).collect()).collect()
}

fn write_lines(path: &Path, lines: impl IntoIterator<Item = String>) {
    let mut text: String = lines.into_iter().map(|l| l + "\n").collect();
    if text.is_empty() {
        text.push('\n');
    }
    fs::write(path, text).unwrap();
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    /// Reversal as the main task, bracketed trees as an auxiliary one.
    fn new(with_aux: bool) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        for (split, n, seed) in [("train", 60, 1), ("dev", 10, 2), ("test", 10, 3)] {
            let src = sentences(n, seed);
            write_lines(&root.join(format!("mt.{split}.src")), src.iter().map(|s| s.join(" ")));
            write_lines(
                &root.join(format!("mt.{split}.tgt")),
                src.iter().map(|s| s.iter().rev().copied().collect::<Vec<_>>().join(" ")),
            );
            let src = sentences(n, seed + 10);
            write_lines(&root.join(format!("p.{split}.src")), src.iter().map(|s| s.join(" ")));
            write_lines(
                &root.join(format!("p.{split}.tree")),
                src.iter().map(|s| format!("(S {})", s.iter().map(|w| format!("(NN {w})")).collect::<Vec<_>>().join(" "))),
            );
        }
        let r = root.display();
        let mut config = format!(
            r#"seed = 3
output = "{r}/run"
prepared = "{r}/prep"

[data]
bpe_vocab_size = 40

[model]
embedding = 8
hidden = 8
attention = 8
dropout = 0.1

[training]
epochs = 2
batch_size = 8
max_output_length = 12

[[tasks]]
name = "mt"
train = {{ source = "{r}/mt.train.src", target = "{r}/mt.train.tgt" }}
dev = {{ source = "{r}/mt.dev.src", target = "{r}/mt.dev.tgt" }}
test = {{ source = "{r}/mt.test.src", target = "{r}/mt.test.tgt" }}
"#
        );
        if with_aux {
            config.push_str(&format!(
                r#"
[[tasks]]
name = "parse"
kind = "tree"
weight = 0.5
train = {{ source = "{r}/p.train.src", target = "{r}/p.train.tree" }}
dev = {{ source = "{r}/p.dev.src", target = "{r}/p.dev.tree" }}
"#
            ));
        }
        fs::write(root.join("run.toml"), config).unwrap();
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn config(&self) -> String {
        self.path("run.toml").display().to_string()
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_deepshare")).args(args).current_dir(self.dir.path()).output().unwrap()
    }

    fn ok(&self, args: &[&str]) -> Output {
        let out = self.run(args);
        assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
        out
    }

    fn prepared_and_trained(with_aux: bool) -> Self {
        let f = Self::new(with_aux);
        f.ok(&["prepare", "--config", &f.config()]);
        f.ok(&["train", "--config", &f.config()]);
        f
    }
}

fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn prepare_is_byte_identical_across_runs() {
    let f = Fixture::new(true);
    let first = f.ok(&["prepare", "--config", &f.config(), "--output", "a"]);
    f.ok(&["prepare", "--config", &f.config(), "--output", "b"]);
    let (a, b) = (dir_contents(&f.path("a")), dir_contents(&f.path("b")));
    assert_eq!(a, b);
    let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    for expected in ["bpe.src", "vocab.tgt", "mt.train.ids", "mt.test.ref", "parse.dev.ids", "stats.txt"] {
        assert!(names.contains(&expected), "{expected} missing from {names:?}");
    }
    assert!(!names.contains(&"parse.test.ids"));
    let stats = String::from_utf8(first.stdout).unwrap();
    assert!(stats.contains("Train") && stats.contains("parse"), "{stats}");
}

#[test]
fn prepare_handles_a_single_task() {
    let f = Fixture::new(false);
    f.ok(&["prepare", "--config", &f.config()]);
    let ids = fs::read_to_string(f.path("prep/mt.train.ids")).unwrap();
    assert_eq!(ids.lines().count(), 60);
    for line in ids.lines() {
        let (_, tgt) = line.split_once('\t').unwrap();
        assert_eq!(tgt.split(' ').last(), Some("1"), "targets end in </s>: {line}");
    }
    assert!(!f.path("prep/parse.train.ids").exists());
}

#[test]
fn exit_codes_separate_failure_classes() {
    let f = Fixture::new(true);
    let missing = fs::read_to_string(f.path("run.toml")).unwrap().replace("p.train.tree", "absent.tree");
    fs::write(f.path("missing.toml"), missing).unwrap();
    assert_eq!(f.run(&["prepare", "--config", "missing.toml"]).status.code(), Some(2));
    assert_eq!(f.run(&["prepare", "--config", &f.config(), "--set", "model.hiden=3"]).status.code(), Some(1));
    assert_eq!(f.run(&["prepare", "--config", &f.config(), "--set", "sharing.encoder_layers=9"]).status.code(), Some(1));
    assert_eq!(f.run(&["prepare", "--bogus"]).status.code(), Some(1));
    assert_eq!(f.run(&["--help"]).status.code(), Some(0));
    assert_eq!(f.run(&["train", "--config", &f.config()]).status.code(), Some(2), "training before prepare");
    f.ok(&["prepare", "--config", &f.config()]);
    let diverged = f.run(&["train", "--config", &f.config(), "--set", "training.learning_rate=1e9"]);
    assert_eq!(diverged.status.code(), Some(3), "{}", String::from_utf8_lossy(&diverged.stderr));
}

#[test]
fn training_translation_and_evaluation_are_reproducible() {
    let f = Fixture::prepared_and_trained(true);
    let run = f.path("run");
    for file in ["config.toml", "train.log", "best.ckpt", "last.ckpt"] {
        assert!(run.join(file).is_file(), "{file}");
    }
    // The run directory's own config copy reproduces it bit for bit.
    let first = dir_contents(&run);
    f.ok(&["train", "--config", "run/config.toml"]);
    assert!(first == dir_contents(&run), "retraining from the saved config changed the run directory");

    let ckpt = run.join("best.ckpt").display().to_string();
    let a = f.ok(&["translate", "--checkpoint", &ckpt, "--input", "mt.test.src"]).stdout;
    f.ok(&["translate", "--checkpoint", &ckpt, "--input", "mt.test.src", "--output", "out.txt"]);
    assert_eq!(a, fs::read(f.path("out.txt")).unwrap());
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 10);

    // Dev perplexity from the report agrees with the one logged for the best epoch.
    let report = String::from_utf8(f.ok(&["evaluate", "--checkpoint", &ckpt, "--split", "dev"]).stdout).unwrap();
    let ppl: f64 = report.lines().find_map(|l| l.strip_prefix("perplexity=")).unwrap().parse().unwrap();
    let log = fs::read_to_string(run.join("train.log")).unwrap();
    let best_line = log.lines().filter(|l| l.ends_with("| best")).last().unwrap();
    let logged = best_line.split(" mt dev_ppl ").nth(1).unwrap().split(' ').next().unwrap();
    assert_eq!(format!("{ppl:.4}"), logged);
    assert!(report.contains("bleu="));

    let gold = f.path("prep/mt.test.ref").display().to_string();
    let report = String::from_utf8(f.ok(&["evaluate", "--checkpoint", &ckpt, "--candidates", &gold, "--output", "eval.txt"]).stdout).unwrap();
    assert!(report.lines().any(|l| l == "bleu=100.0000"), "{report}");
    assert_eq!(fs::read_to_string(f.path("eval.txt")).unwrap(), report);

    assert_eq!(f.run(&["evaluate", "--checkpoint", &ckpt, "--task", "nope"]).status.code(), Some(1));
}

#[test]
fn adapt_continues_the_main_task() {
    let f = Fixture::prepared_and_trained(true);
    f.ok(&["adapt", "--checkpoint", "run/best.ckpt", "--epochs", "1"]);
    let log = fs::read_to_string(f.path("run/adapt/adapt.log")).unwrap();
    assert_eq!(log.lines().count(), 1);
    assert!(log.contains("parse dev_ppl -"), "{log}");
    assert!(f.path("run/adapt/last.ckpt").is_file());
}

#[test]
fn analyze_reports_gains_per_order() {
    let f = Fixture::new(false);
    fs::write(f.path("gold"), "a b c d\n").unwrap();
    fs::write(f.path("sys_a"), "a b c d\n").unwrap();
    fs::write(f.path("sys_b"), "a b x y\n").unwrap();
    fs::write(f.path("tags"), "NN NN VB NN\n").unwrap();
    let csv = String::from_utf8(
        f.ok(&["analyze", "--system-a", "sys_a", "--system-b", "sys_b", "--gold", "gold", "--max-n", "2"]).stdout,
    )
    .unwrap();
    // Unigrams 4 vs 2 matched, bigrams 3 vs 1.
    assert_eq!(csv, "order,gain_percent\n1,100.0000\n2,200.0000\n");
    f.ok(&["analyze", "--system-a", "sys_a", "--system-b", "sys_b", "--gold", "gold", "--tags", "tags", "--output", "g.csv"]);
    assert!(fs::read_to_string(f.path("g.csv")).unwrap().starts_with("order,gain_percent\n1,"));
}

#[test]
fn sweep_writes_one_row_per_value() {
    let f = Fixture::new(true);
    f.ok(&["prepare", "--config", &f.config()]);
    let out = f.ok(&["sweep", "--config", &f.config(), "--axis", "encoder", "--values", "1", "--output", "sw", "--set", "training.epochs=1"]);
    let csv = fs::read_to_string(f.path("sw/sweep.csv")).unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap(), csv);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("axis,shared_layers,bleu,dev_ppl"));
    assert!(lines[1].starts_with("encoder,1,"));
    assert!(f.path("sw/encoder-1/best.ckpt").is_file());
    assert_eq!(f.run(&["sweep", "--config", &f.config(), "--axis", "encoder", "--values", "7"]).status.code(), Some(1));
}

#[test]
fn sweep_rows_are_stamped_in_order() {
    let f = Fixture::new(true);
    f.ok(&["prepare", "--config", &f.config()]);
    f.ok(&["sweep", "--config", &f.config(), "--axis", "decoder", "--values", "0,1,2,3", "--output", "sw", "--set", "training.epochs=1"]);
    let csv = fs::read_to_string(f.path("sw/sweep.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.iter().map(|r| r[1]).collect::<Vec<_>>(), ["0", "1", "2", "3"]);
    let stamps: Vec<f64> = rows.iter().flat_map(|r| [r[5].parse::<f64>().unwrap(), r[6].parse().unwrap()]).collect();
    assert!(stamps.windows(2).all(|w| w[0] <= w[1]), "{stamps:?}");
}
