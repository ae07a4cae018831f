use std::collections::{BTreeMap, HashMap};

use proptest::prelude::*;
use rand::Rng as _;

use super::*;
use crate::error::Error;
use crate::rng;
use crate::seq2seq::{EOS, UNK};

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

#[test]
fn vocabulary_reserves_the_first_three_ids() {
    let v = Vocabulary::new();
    assert_eq!(v.get(BOS_TOKEN), Some(0));
    assert_eq!(v.get(EOS_TOKEN), Some(EOS));
    assert_eq!(v.get(UNK_TOKEN), Some(UNK));
    assert_eq!(v.id("never-seen"), 2);
}

#[test]
fn vocabulary_ranks_by_frequency_then_text() {
    let v = Vocabulary::from_corpus(&[words("b a c b"), words("c d b")], None).unwrap();
    assert_eq!(&v.tokens()[3..], &["b", "c", "a", "d"]);
    let capped = Vocabulary::from_corpus(&[words("b a c b"), words("c d b")], Some(2)).unwrap();
    assert_eq!(capped.len(), 5);
    assert_eq!(capped.id("a"), UNK);
}

#[test]
fn vocabulary_file_round_trip() {
    let v = Vocabulary::from_corpus(&[words("the cat sat on the mat")], None).unwrap();
    let mut bytes = Vec::new();
    v.write_to(&mut bytes).unwrap();
    assert_eq!(String::from_utf8(bytes.clone()).unwrap(), "the\ncat\nmat\non\nsat\n");
    let back = Vocabulary::read_from(&bytes[..]).unwrap();
    assert_eq!(back, v);
    for t in v.tokens() {
        assert_eq!(back.token(back.id(t)), Some(t.as_str()));
    }
}

#[test]
fn vocabulary_file_rejects_duplicates_and_reserved_entries() {
    assert!(matches!(Vocabulary::read_from(&b"a\nb\na\n"[..]), Err(Error::Data(_))));
    assert!(matches!(Vocabulary::read_from(&b"a\n<unk>\n"[..]), Err(Error::Data(_))));
    assert!(matches!(Vocabulary::read_from(&b"a b\n"[..]), Err(Error::Data(_))));
}

fn counts(pairs: &[(&str, u64)]) -> BTreeMap<String, u64> {
    pairs.iter().map(|(w, c)| (w.to_string(), *c)).collect()
}

#[test]
fn zero_merges_split_into_characters() {
    let model = learn_bpe(&counts(&[("low", 5), ("lower", 2)]), 0).unwrap();
    assert!(model.is_empty());
    assert_eq!(model.symbols("low"), ["l", "o", "w", END_OF_WORD]);
    assert_eq!(model.segment_word("low"), ["l@@", "o@@", "w"]);
}

#[test]
fn most_frequent_pair_merges_first() {
    let model = learn_bpe(&counts(&[("aaab", 1)]), 1).unwrap();
    assert_eq!(model.merges(), &[("a".to_string(), "a".to_string())]);
    assert_eq!(model.segment_word("aaab"), ["aa@@", "a@@", "b"]);
}

#[test]
fn ties_break_lexicographically() {
    // ("a","b") and ("c","d") both occur once; the smaller pair wins.
    let model = learn_bpe(&counts(&[("cd", 1), ("ab", 1)]), 1).unwrap();
    assert_eq!(model.merges(), &[("a".to_string(), "b".to_string())]);
}

#[test]
fn empty_corpus_is_an_error() {
    assert!(matches!(learn_bpe(&BTreeMap::new(), 5), Err(Error::Data(_))));
}

/// Recounts every pair from scratch before each merge.
fn naive_bpe(counts: &BTreeMap<String, u64>, num_merges: usize) -> Vec<(String, String)> {
    let mut words: Vec<(Vec<String>, u64)> = counts
        .iter()
        .map(|(w, &c)| {
            let mut s: Vec<String> = w.chars().map(String::from).collect();
            s.push(END_OF_WORD.into());
            (s, c)
        })
        .collect();
    let mut merges = Vec::new();
    while merges.len() < num_merges {
        let mut pairs: BTreeMap<(String, String), u64> = BTreeMap::new();
        for (s, c) in &words {
            for w in s.windows(2) {
                *pairs.entry((w[0].clone(), w[1].clone())).or_insert(0) += c;
            }
        }
        let Some(max) = pairs.values().max().copied() else { break };
        let best = pairs.into_iter().find(|(_, c)| *c == max).unwrap().0;
        for (s, _) in &mut words {
            let mut out = Vec::new();
            let mut i = 0;
            while i < s.len() {
                if i + 1 < s.len() && s[i] == best.0 && s[i + 1] == best.1 {
                    out.push(format!("{}{}", best.0, best.1));
                    i += 2;
                } else {
                    out.push(s[i].clone());
                    i += 1;
                }
            }
            *s = out;
        }
        merges.push(best);
    }
    merges
}

fn word_strategy() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(vec!['a', 'b', 'c', 'd']), 1..7).prop_map(|c| c.into_iter().collect())
}

proptest! {
    #[test]
    fn incremental_learner_matches_naive_greedy(
        corpus in prop::collection::btree_map(word_strategy(), 1u64..6, 1..12),
        merges in 0usize..25,
    ) {
        let model = learn_bpe(&corpus, merges).unwrap();
        let expected = naive_bpe(&corpus, merges);
        prop_assert_eq!(model.merges(), expected.as_slice());
    }

    #[test]
    fn segmentation_is_invertible_and_idempotent(
        corpus in prop::collection::btree_map(word_strategy(), 1u64..6, 1..12),
        sentence in prop::collection::vec(word_strategy(), 0..8),
        merges in 0usize..20,
    ) {
        let model = learn_bpe(&corpus, merges).unwrap();
        let units = model.segment(&sentence);
        prop_assert_eq!(join_units(&units), sentence.clone());
        prop_assert_eq!(model.segment(&units), units.clone());
        prop_assert_eq!(model.segment_all(&[sentence]), vec![units]);
    }
}

#[test]
fn learned_merges_rebuild_frequent_words() {
    let corpus = word_counts(&[words("low low low lower lowest newer newer wider")]);
    let model = learn_bpe(&corpus, 50).unwrap();
    for w in ["low", "lower", "newer", "wider"] {
        assert_eq!(model.segment_word(w), [w]);
    }
    assert!(model.segment_word("slow").len() > 1);
}

#[test]
fn vocabulary_size_sets_the_merge_count() {
    let corpus = counts(&[("abcabc", 3), ("cab", 2)]);
    assert_eq!(alphabet_size(&corpus), 4);
    assert_eq!(learn_bpe_for_vocab_size(&corpus, 6).unwrap().len(), 2);
    assert_eq!(learn_bpe_for_vocab_size(&corpus, 3).unwrap().len(), 0);
}

#[test]
fn bpe_model_file_round_trip() {
    let model = learn_bpe(&counts(&[("hello", 4), ("yellow", 2), ("hell", 1)]), 6).unwrap();
    let mut bytes = Vec::new();
    model.write_to(&mut bytes).unwrap();
    let text = String::from_utf8(bytes.clone()).unwrap();
    assert_eq!(text.lines().count(), 6);
    assert!(text.starts_with("e l\n"), "{text}");
    assert_eq!(BpeModel::read_from(&bytes[..]).unwrap(), model);
    assert!(matches!(BpeModel::read_from(&b"a b c\n"[..]), Err(Error::Data(_))));
}

fn pair(s: &str, t: &str) -> TextPair {
    TextPair::new(words(s), words(t))
}

#[test]
fn disabled_filter_keeps_everything() {
    let pairs = vec![pair("a b", "c"), pair("d", "e f g")];
    let kept = filter_corpus(&pairs, LengthLimits::NONE, |s| s.to_vec(), |t| t.to_vec());
    assert_eq!(kept, pairs);
}

#[test]
fn word_limit_is_inclusive() {
    let long = vec!["w".to_string(); 81];
    let ok = vec!["w".to_string(); 80];
    let pairs = vec![
        TextPair::new(long.clone(), words("x")),
        TextPair::new(ok.clone(), words("x")),
        TextPair::new(words("x"), long),
    ];
    let limits = LengthLimits {
        max_words: Some(80),
        max_units: None,
    };
    let kept = filter_corpus(&pairs, limits, |s| s.to_vec(), |t| t.to_vec());
    assert_eq!(kept, vec![TextPair::new(ok, words("x"))]);
    assert_eq!(LengthLimits::default().max_words, Some(80));
    assert_eq!(LengthLimits::default().max_units, Some(300));
}

#[test]
fn unit_limit_applies_after_segmentation() {
    let model = learn_bpe(&counts(&[("ab", 1)]), 0).unwrap();
    let pairs = vec![pair("ab", "x"), pair("abc", "x")];
    let limits = LengthLimits {
        max_words: None,
        max_units: Some(2),
    };
    let kept = filter_corpus(&pairs, limits, |s| model.segment(s), |t| t.to_vec());
    assert_eq!(kept, vec![pair("a@@ b", "x")]);
}

proptest! {
    #[test]
    fn filtering_preserves_order(lens in prop::collection::vec((1usize..8, 1usize..8), 0..30), max in 1usize..8) {
        let pairs: Vec<TextPair> = lens
            .iter()
            .enumerate()
            .map(|(i, &(s, t))| TextPair::new(vec![i.to_string(); s], vec!["t".to_string(); t]))
            .collect();
        let limits = LengthLimits { max_words: Some(max), max_units: None };
        let kept = filter_corpus(&pairs, limits, |s| s.to_vec(), |t| t.to_vec());
        let expected: Vec<TextPair> = pairs.iter().filter(|p| p.source.len() <= max && p.target.len() <= max).cloned().collect();
        prop_assert_eq!(kept, expected);
    }
}

#[test]
fn encoding_maps_unknowns_and_appends_end() {
    let src = Vocabulary::from_corpus(&[words("a b")], None).unwrap();
    let tgt = Vocabulary::from_corpus(&[words("x y")], None).unwrap();
    let encoded = encode_corpus(&[pair("a q b", "y x z")], &src, &tgt);
    assert_eq!(encoded[0].source, vec![3, UNK, 4]);
    assert_eq!(encoded[0].target, vec![4, 3, UNK, EOS]);
    assert_eq!(tgt.decode(&encoded[0].target), words("y x <unk>"));
    let known = encode_corpus(&[pair("b a", "x y")], &src, &tgt);
    assert_eq!(src.decode(&known[0].source), words("b a"));
    assert_eq!(tgt.decode(&known[0].target), words("x y"));
}

#[test]
fn parallel_files_must_align() {
    assert_eq!(read_parallel("a b\nc\n", "x\ny z\n").unwrap()[1], pair("c", "y z"));
    assert!(matches!(read_parallel("a\nb\n", "x\n"), Err(Error::Data(_))));
}

#[test]
fn single_node_tree_linearizes_with_typed_closer() {
    let t = Tree::node("X", vec![Tree::word("word")]);
    assert_eq!(t.linearize(), ["(X", "word", ")X"]);
}

#[test]
fn bracket_count_is_twice_the_nonterminals() {
    let t = Tree::node("S", vec![Tree::node("A", vec![Tree::word("a")]), Tree::node("B", vec![Tree::word("b")])]);
    let lin = t.linearize();
    let brackets = lin.iter().filter(|t| t.starts_with(['(', ')'])).count();
    assert_eq!(brackets, 2 * t.nonterminals());
    assert_eq!(brackets, 6);
}

#[test]
fn treebank_text_parses() {
    let text = "( (S (NP (DT the) (NN dog)) (VP (VBZ barks)) (. .)))";
    let t = Tree::parse(text).unwrap();
    assert_eq!(t.words(), ["the", "dog", "barks", "."]);
    assert_eq!(t.tags(), ["DT", "NN", "VBZ", "."]);
    assert_eq!(Tree::parse(&t.to_string()).unwrap(), t);
    assert_eq!(delinearize_tree(&t.linearize()).unwrap(), t);
    assert!(matches!(Tree::parse("(S (NP a)"), Err(Error::Parse { .. })));
    assert!(matches!(Tree::parse("(S a))"), Err(Error::Parse { .. })));
}

fn random_tree(r: &mut rng::Rng, depth: usize) -> Tree {
    const LABELS: [&str; 5] = ["S", "NP", "VP", "PP", "ADJP"];
    const WORDS: [&str; 6] = ["the", "dog", "runs", "fast", "in", "parks"];
    let label = LABELS[r.gen_range(0..LABELS.len())];
    let n = r.gen_range(1..4);
    let children = (0..n)
        .map(|_| {
            if depth <= 1 || r.gen_bool(0.35) {
                Tree::word(WORDS[r.gen_range(0..WORDS.len())])
            } else {
                random_tree(r, depth - 1)
            }
        })
        .collect();
    Tree::node(label, children)
}

#[test]
fn random_trees_round_trip() {
    let mut r = rng::stream(17, "trees");
    for _ in 0..100 {
        let depth = r.gen_range(1..=6);
        let t = random_tree(&mut r, depth);
        let lin = t.linearize();
        assert_eq!(delinearize_tree(&lin).unwrap(), t);
        let opens = lin.iter().filter(|x| x.starts_with('(')).count();
        let closes = lin.iter().filter(|x| x.starts_with(')')).count();
        assert_eq!(opens, closes);
    }
}

#[test]
fn malformed_linearizations_report_positions() {
    let cases: [(&[&str], usize); 5] = [
        (&["(S", "a", ")NP"], 2),
        (&["(S", "a"], 2),
        (&[")S"], 0),
        (&["(S", "a", ")S", "b"], 3),
        (&["a"], 0),
    ];
    for (tokens, at) in cases {
        match delinearize_tree(tokens) {
            Err(Error::Parse { position, .. }) => assert_eq!(position, at, "{tokens:?}"),
            other => panic!("{tokens:?}: {other:?}"),
        }
    }
}

const WANT: &str = "(w / want-01
    :ARG0 (b / boy)
    :ARG1 (g / go-01
        :ARG0 b
        :polarity -))";

#[test]
fn penman_graph_parses_with_reentrancy() {
    let g = AmrGraph::parse_penman(WANT).unwrap();
    assert_eq!(g.concepts, ["want-01", "boy", "go-01"]);
    assert_eq!(g.edges.len(), 4);
    assert!(g.edges.contains(&AmrEdge {
        source: 2,
        role: ":ARG0".into(),
        target: AmrValue::Node(1)
    }));
    assert!(g.edges.contains(&AmrEdge {
        source: 2,
        role: ":polarity".into(),
        target: AmrValue::Constant("-".into())
    }));
    let lin = g.linearize().unwrap();
    assert_eq!(lin.join(" "), "( want-01 :ARG0 boy :ARG1 ( go-01 :ARG0 *2 :polarity '- ) )");
    assert_eq!(lin.iter().filter(|t| t.starts_with(BACKREF_PREFIX)).count(), 1);
    assert!(isomorphic(&delinearize_amr(&lin).unwrap(), &g));
    let again = AmrGraph::parse_penman(&g.to_penman().unwrap()).unwrap();
    assert!(isomorphic(&again, &g));
}

#[test]
fn forward_variable_references_resolve() {
    let g = AmrGraph::parse_penman("(a / and :op1 (s / sing-01 :ARG0 c) :op2 (c / cat) :op3 \"Tom\")").unwrap();
    assert!(g.edges.iter().any(|e| e.source == 1 && e.target == AmrValue::Node(2)));
    assert!(g.edges.iter().any(|e| e.target == AmrValue::Constant("\"Tom\"".into())));
}

#[test]
fn penman_files_split_on_blank_lines() {
    let text = format!("# ::id 1\n{WANT}\n\n# ::id 2\n(c / cat)\n");
    let graphs = parse_penman_file(&text).unwrap();
    assert_eq!(graphs.len(), 2);
    assert_eq!(graphs[1].linearize().unwrap(), ["cat"]);
}

#[test]
fn single_concept_is_one_token() {
    let mut g = AmrGraph::default();
    g.add_node("dog");
    assert_eq!(g.linearize().unwrap(), ["dog"]);
}

#[test]
fn disconnected_graph_is_rejected() {
    let mut g = AmrGraph::default();
    let a = g.add_node("a");
    let b = g.add_node("b");
    g.add_node("c");
    g.add_edge(a, ":mod", AmrValue::Node(b));
    assert!(matches!(g.linearize(), Err(Error::Data(_))));
}

#[test]
fn bad_back_references_are_parse_errors() {
    for tokens in [&["(", "a", ":x", "*3", ")"][..], &["(", "a", ":x", "*0", ")"], &["(", "a", ")"], &["'1"]] {
        assert!(matches!(delinearize_amr(tokens), Err(Error::Parse { .. })), "{tokens:?}");
    }
}

/// Whether a root-preserving bijection maps nodes, concepts, edges and
/// constants of `a` onto `b`, found by backtracking.
fn isomorphic(a: &AmrGraph, b: &AmrGraph) -> bool {
    if a.len() != b.len() || a.edges.len() != b.edges.len() {
        return false;
    }
    fn edge_count(g: &AmrGraph) -> HashMap<(usize, String, AmrValue), usize> {
        let mut m = HashMap::new();
        for e in &g.edges {
            *m.entry((e.source, e.role.clone(), e.target.clone())).or_insert(0) += 1;
        }
        m
    }
    let ea = edge_count(a);
    let eb = edge_count(b);
    let mapped = |map: &[Option<usize>], v: &AmrValue| -> Option<AmrValue> {
        match v {
            AmrValue::Node(n) => map[*n].map(AmrValue::Node),
            c => Some(c.clone()),
        }
    };
    // Every edge of `a` whose endpoints are mapped must occur as often in `b`.
    let consistent = |map: &[Option<usize>]| {
        let mut seen: HashMap<(usize, String, AmrValue), usize> = HashMap::new();
        for ((s, role, t), &c) in &ea {
            if let (Some(ms), Some(mt)) = (map[*s], mapped(map, t)) {
                *seen.entry((ms, role.clone(), mt)).or_insert(0) += c;
            }
        }
        seen.iter().all(|(k, c)| eb.get(k) == Some(c))
    };
    fn search(
        n: usize,
        a: &AmrGraph,
        b: &AmrGraph,
        map: &mut Vec<Option<usize>>,
        used: &mut Vec<bool>,
        consistent: &dyn Fn(&[Option<usize>]) -> bool,
    ) -> bool {
        if n == a.len() {
            return true;
        }
        let candidates: Vec<usize> = if n == 0 { vec![0] } else { (1..b.len()).collect() };
        for m in candidates {
            if used[m] || a.concepts[n] != b.concepts[m] {
                continue;
            }
            map[n] = Some(m);
            used[m] = true;
            if consistent(map) && search(n + 1, a, b, map, used, consistent) {
                return true;
            }
            map[n] = None;
            used[m] = false;
        }
        false
    }
    let mut map = vec![None; a.len()];
    let mut used = vec![false; b.len()];
    search(0, a, b, &mut map, &mut used, &consistent)
}

fn random_amr(r: &mut rng::Rng) -> AmrGraph {
    const CONCEPTS: [&str; 5] = ["want-01", "boy", "girl", "go-01", "city"];
    const ROLES: [&str; 4] = [":ARG0", ":ARG1", ":mod", ":location"];
    let n = r.gen_range(1..=12);
    let mut g = AmrGraph::default();
    for _ in 0..n {
        g.add_node(CONCEPTS[r.gen_range(0..CONCEPTS.len())]);
    }
    for child in 1..n {
        let parent = r.gen_range(0..child);
        g.add_edge(parent, ROLES[r.gen_range(0..ROLES.len())], AmrValue::Node(child));
    }
    // Re-entrancies, kept acyclic by pointing to later nodes.
    for _ in 0..r.gen_range(0..4) {
        if n < 3 {
            break;
        }
        let s = r.gen_range(0..n - 1);
        let t = r.gen_range(s + 1..n);
        g.add_edge(s, ROLES[r.gen_range(0..ROLES.len())], AmrValue::Node(t));
    }
    for _ in 0..r.gen_range(0..3) {
        let s = r.gen_range(0..n);
        g.add_edge(s, ":polarity", AmrValue::Constant("-".into()));
    }
    // Shuffle edge order so traversal order differs from node numbering.
    for i in (1..g.edges.len()).rev() {
        let j = r.gen_range(0..=i);
        g.edges.swap(i, j);
    }
    g
}

#[test]
fn random_graphs_round_trip_up_to_isomorphism() {
    let mut r = rng::stream(23, "amr");
    let mut reentrant = 0;
    for _ in 0..100 {
        let g = random_amr(&mut r);
        let lin = g.linearize().unwrap();
        let back = delinearize_amr(&lin).unwrap();
        assert!(isomorphic(&back, &g), "{g:?}\n{lin:?}\n{back:?}");
        assert_eq!(back.linearize().unwrap(), lin);
        let extra_parents = g.edges.iter().filter(|e| matches!(e.target, AmrValue::Node(_))).count() + 1 - g.len();
        assert_eq!(lin.iter().filter(|t| t.starts_with(BACKREF_PREFIX)).count(), extra_parents);
        reentrant += (extra_parents > 0) as usize;
    }
    assert!(reentrant > 20);
}

#[test]
fn isomorphism_oracle_tells_graphs_apart() {
    let g = AmrGraph::parse_penman(WANT).unwrap();
    let mut h = g.clone();
    h.edges[0].role = ":ARG2".into();
    assert!(!isomorphic(&g, &h));
    let mut h = g.clone();
    h.concepts.swap(1, 2);
    assert!(!isomorphic(&g, &h));
}

#[test]
fn conll_sentences_become_tag_sequences() {
    let text = "-DOCSTART- -X- -X- O\n\nEU NNP B-NP B-ORG\nrejects VBZ B-VP O\n\nPeter NNP B-NP B-PER\n";
    let s = parse_conll(text).unwrap();
    assert_eq!(s.len(), 2);
    assert_eq!(s[0].words, words("EU rejects"));
    assert_eq!(s[0].tags, words("B-ORG O"));
    assert_eq!(s[1].tags, words("B-PER"));
    assert!(matches!(parse_conll("lonely\n"), Err(Error::Data(_))));
}
