//! SNLI-format corpus ingestion: parse leaves, label filtering, length
//! bucketing and padded batches.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embeddings::{Vocab, NULL_ID};
use crate::numerics::Mask;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: invalid JSON: {message}")]
    Json { line: usize, message: String },
    #[error("line {line}: missing field {field:?}")]
    MissingField { line: usize, field: &'static str },
    #[error("line {line}: unknown gold label {label:?}")]
    UnknownLabel { line: usize, label: String },
    #[error("line {line}: {field} has no tokens")]
    EmptySentence { line: usize, field: &'static str },
    #[error("parse tree has no leaf tokens")]
    NoTokens,
    #[error("{0}: no labeled examples")]
    EmptyDataset(String),
}

/// The three inference classes, with their fixed ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Entailment = 0,
    Contradiction = 1,
    Neutral = 2,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Entailment, Label::Contradiction, Label::Neutral];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Entailment => "entailment",
            Label::Contradiction => "contradiction",
            Label::Neutral => "neutral",
        }
    }

    /// One-letter code: E, C or N.
    pub fn code(self) -> char {
        match self {
            Label::Entailment => 'E',
            Label::Contradiction => 'C',
            Label::Neutral => 'N',
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.name() == s)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Leaf tokens of a bracketed parse: whitespace fields that do not open a
/// constituent, with their closing brackets stripped.
pub fn tokenize_from_parse(parse: &str) -> Result<Vec<String>, DataError> {
    let tokens: Vec<String> = parse
        .split_whitespace()
        .filter(|f| !f.starts_with('('))
        .map(|f| f.trim_end_matches(')'))
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect();
    if tokens.is_empty() {
        return Err(DataError::NoTokens);
    }
    Ok(tokens)
}

/// Tokenizer for ad-hoc text: split on whitespace, then split off each
/// punctuation character as its own token. Apostrophes and hyphens inside
/// a word stay attached.
pub fn tokenize_raw(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let chars: Vec<char> = word.chars().collect();
        let mut current = String::new();
        for (i, &c) in chars.iter().enumerate() {
            let inner = i > 0
                && i + 1 < chars.len()
                && (c == '\'' || c == '-')
                && chars[i - 1].is_alphanumeric()
                && chars[i + 1].is_alphanumeric();
            if c.is_ascii_punctuation() && !inner {
                if !current.is_empty() {
                    out.push(std::mem::take(&mut current));
                }
                out.push(c.to_string());
            } else {
                current.push(c);
            }
        }
        if !current.is_empty() {
            out.push(current);
        }
    }
    out
}

/// A labeled pair before vocabulary lookup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawPair {
    pub premise: Vec<String>,
    pub hypothesis: Vec<String>,
    pub label: Label,
}

/// NULL followed by the vocabulary id of every token.
pub fn encode_tokens(tokens: &[String], vocab: &Vocab) -> Vec<u32> {
    std::iter::once(NULL_ID)
        .chain(tokens.iter().map(|t| vocab.lookup(t)))
        .collect()
}

impl RawPair {
    /// Maps tokens to ids and prepends NULL to both sides.
    pub fn encode(&self, vocab: &Vocab) -> Example {
        Example {
            premise: encode_tokens(&self.premise, vocab),
            hypothesis: encode_tokens(&self.hypothesis, vocab),
            label: self.label,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParsedLine {
    /// No gold label.
    Skip,
    Pair(RawPair),
}

#[derive(Deserialize)]
struct SnliRecord {
    gold_label: Option<String>,
    sentence1_parse: Option<String>,
    sentence2_parse: Option<String>,
}

/// Parses one JSONL record. Extra fields are ignored.
pub fn parse_snli_line(line: &str, line_no: usize) -> Result<ParsedLine, DataError> {
    let rec: SnliRecord = serde_json::from_str(line).map_err(|e| DataError::Json {
        line: line_no,
        message: e.to_string(),
    })?;
    let gold = rec.gold_label.ok_or(DataError::MissingField {
        line: line_no,
        field: "gold_label",
    })?;
    // SNLI writes the missing gold label as "-"; "--" is accepted as well
    if gold == "-" || gold == "--" {
        return Ok(ParsedLine::Skip);
    }
    let label = Label::parse(&gold).ok_or_else(|| DataError::UnknownLabel {
        line: line_no,
        label: gold.clone(),
    })?;
    let side = |parse: Option<String>, field: &'static str| {
        let parse = parse.ok_or(DataError::MissingField {
            line: line_no,
            field,
        })?;
        tokenize_from_parse(&parse).map_err(|_| DataError::EmptySentence {
            line: line_no,
            field,
        })
    };
    Ok(ParsedLine::Pair(RawPair {
        premise: side(rec.sentence1_parse, "sentence1_parse")?,
        hypothesis: side(rec.sentence2_parse, "sentence2_parse")?,
        label,
    }))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    /// Non-blank input lines.
    pub lines: usize,
    pub kept: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub pairs: Vec<RawPair>,
    pub stats: CorpusStats,
}

impl Corpus {
    /// Every distinct token on either side.
    pub fn token_set(&self) -> HashSet<String> {
        self.pairs
            .iter()
            .flat_map(|p| p.premise.iter().chain(&p.hypothesis))
            .cloned()
            .collect()
    }

    pub fn encode(&self, vocab: &Vocab) -> Vec<Example> {
        self.pairs.iter().map(|p| p.encode(vocab)).collect()
    }
}

/// Parses SNLI-format lines. Blank lines are ignored; output order
/// follows input order.
pub fn parse_corpus(lines: &[String]) -> Result<Corpus, DataError> {
    let parsed: Vec<(usize, ParsedLine)> = lines
        .par_iter()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_snli_line(l, i + 1).map(|p| (i, p)))
        .collect::<Result<_, _>>()?;
    let mut stats = CorpusStats {
        lines: parsed.len(),
        ..Default::default()
    };
    let mut pairs = Vec::with_capacity(parsed.len());
    for (_, p) in parsed {
        match p {
            ParsedLine::Skip => stats.skipped += 1,
            ParsedLine::Pair(pair) => {
                stats.kept += 1;
                pairs.push(pair);
            }
        }
    }
    Ok(Corpus { pairs, stats })
}

pub fn load_corpus(path: &Path) -> Result<Corpus, DataError> {
    let io_err = |source| DataError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let lines = BufReader::new(file)
        .lines()
        .collect::<Result<Vec<_>, _>>()
        .map_err(io_err)?;
    parse_corpus(&lines)
}

/// One labeled pair as token ids, NULL first on both sides.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Example {
    pub premise: Vec<u32>,
    pub hypothesis: Vec<u32>,
    pub label: Label,
}

impl Example {
    /// Sentence lengths without the NULL token.
    pub fn raw_lengths(&self) -> (usize, usize) {
        (self.premise.len() - 1, self.hypothesis.len() - 1)
    }

    pub fn input(&self) -> PairInput<'_> {
        PairInput {
            premise: &self.premise,
            premise_mask: Mask::full(self.premise.len()).expect("NULL keeps sentences non-empty"),
            hypothesis: &self.hypothesis,
            hypothesis_mask: Mask::full(self.hypothesis.len())
                .expect("NULL keeps sentences non-empty"),
        }
    }
}

/// The model's view of one (possibly padded) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairInput<'a> {
    pub premise: &'a [u32],
    pub premise_mask: Mask,
    pub hypothesis: &'a [u32],
    pub hypothesis_mask: Mask,
}

/// Length band used by [`semi_sort`]: 0 when both raw lengths are < 20,
/// 1 when both are < 50, otherwise 2.
pub fn length_group(ex: &Example) -> usize {
    let (a, b) = ex.raw_lengths();
    match a.max(b) {
        0..20 => 0,
        20..50 => 1,
        _ => 2,
    }
}

/// Orders examples by length band (short, medium, long) with a seeded
/// shuffle inside each band.
pub fn semi_sort(examples: &[Example], seed: u64) -> Vec<Example> {
    let mut groups: [Vec<Example>; 3] = Default::default();
    for ex in examples {
        groups[length_group(ex)].push(ex.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    groups
        .into_iter()
        .flat_map(|mut g| {
            g.shuffle(&mut rng);
            g
        })
        .collect()
}

/// Padded id grids and masks for a run of examples.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub premise_ids: Vec<u32>,
    pub premise_width: usize,
    pub premise_masks: Vec<Mask>,
    pub hypothesis_ids: Vec<u32>,
    pub hypothesis_width: usize,
    pub hypothesis_masks: Vec<Mask>,
    pub labels: Vec<Label>,
}

impl Batch {
    pub fn from_examples(examples: &[Example]) -> Self {
        fn pad(seqs: Vec<&[u32]>) -> (Vec<u32>, usize, Vec<Mask>) {
            let width = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
            let mut grid = vec![NULL_ID; seqs.len() * width];
            let mut masks = Vec::with_capacity(seqs.len());
            for (r, s) in seqs.iter().enumerate() {
                grid[r * width..r * width + s.len()].copy_from_slice(s);
                masks.push(Mask::prefix(s.len(), width).expect("sentences hold NULL"));
            }
            (grid, width, masks)
        }
        let (premise_ids, premise_width, premise_masks) =
            pad(examples.iter().map(|e| e.premise.as_slice()).collect());
        let (hypothesis_ids, hypothesis_width, hypothesis_masks) =
            pad(examples.iter().map(|e| e.hypothesis.as_slice()).collect());
        Self {
            premise_ids,
            premise_width,
            premise_masks,
            hypothesis_ids,
            hypothesis_width,
            hypothesis_masks,
            labels: examples.iter().map(|e| e.label).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pair(&self, i: usize) -> PairInput<'_> {
        let pw = self.premise_width;
        let hw = self.hypothesis_width;
        PairInput {
            premise: &self.premise_ids[i * pw..(i + 1) * pw],
            premise_mask: self.premise_masks[i],
            hypothesis: &self.hypothesis_ids[i * hw..(i + 1) * hw],
            hypothesis_mask: self.hypothesis_masks[i],
        }
    }

    /// Recovers the unpadded examples.
    pub fn unpad(&self) -> Vec<Example> {
        (0..self.len())
            .map(|i| {
                let p = self.pair(i);
                Example {
                    premise: p.premise[..p.premise_mask.valid()].to_vec(),
                    hypothesis: p.hypothesis[..p.hypothesis_mask.valid()].to_vec(),
                    label: self.labels[i],
                }
            })
            .collect()
    }
}

/// Consecutive chunks of `batch_size` (the last may be shorter), each
/// padded to its own longest sentence per side.
pub fn make_batches(examples: &[Example], batch_size: usize) -> Vec<Batch> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    examples
        .chunks(batch_size)
        .map(Batch::from_examples)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ex(p: usize, h: usize, label: Label) -> Example {
        Example {
            premise: (0..=p as u32).collect(),
            hypothesis: (0..=h as u32).map(|i| i * 2).collect(),
            label,
        }
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(
            tokenize_from_parse("(ROOT (NP (DT A) (NN dog)))").unwrap(),
            vec!["A", "dog"]
        );
        assert_eq!(tokenize_from_parse("(ROOT (NN hi))").unwrap(), vec!["hi"]);
        assert_eq!(tokenize_from_parse("(NN -RRB-)").unwrap(), vec!["-RRB-"]);
        assert!(matches!(
            tokenize_from_parse("(ROOT )"),
            Err(DataError::NoTokens)
        ));
    }

    #[test]
    fn raw_tokenizer_splits_punctuation() {
        assert_eq!(
            tokenize_raw("A dog's toy, well-worn."),
            vec!["A", "dog's", "toy", ",", "well-worn", "."]
        );
        assert_eq!(tokenize_raw("  \"Hi!\" "), vec!["\"", "Hi", "!", "\""]);
        assert!(tokenize_raw("   ").is_empty());
    }

    fn line(label: &str) -> String {
        format!(
            r#"{{"gold_label": "{label}", "sentence1_parse": "(ROOT (S (NP (DT A) (NN man)) (VP (VBZ sleeps))))", "sentence2_parse": "(ROOT (NP (DT A) (NN person)))", "pairID": "x"}}"#
        )
    }

    #[test]
    fn unlabeled_lines_are_skipped() {
        assert_eq!(parse_snli_line(&line("-"), 1).unwrap(), ParsedLine::Skip);
        assert_eq!(parse_snli_line(&line("--"), 1).unwrap(), ParsedLine::Skip);
    }

    #[test]
    fn labels_map_to_fixed_ids() {
        for (name, id) in [("entailment", 0), ("contradiction", 1), ("neutral", 2)] {
            match parse_snli_line(&line(name), 1).unwrap() {
                ParsedLine::Pair(p) => {
                    assert_eq!(p.label.index(), id);
                    assert_eq!(p.premise, vec!["A", "man", "sleeps"]);
                    assert_eq!(p.hypothesis, vec!["A", "person"]);
                }
                ParsedLine::Skip => panic!("skipped"),
            }
        }
    }

    #[test]
    fn bad_lines_carry_line_numbers() {
        assert!(matches!(
            parse_snli_line(&line("maybe"), 7),
            Err(DataError::UnknownLabel { line: 7, .. })
        ));
        assert!(matches!(
            parse_snli_line(
                r#"{"gold_label": "neutral", "sentence1_parse": "(A b)"}"#,
                3
            ),
            Err(DataError::MissingField {
                line: 3,
                field: "sentence2_parse"
            })
        ));
        assert!(matches!(
            parse_snli_line("{not json", 9),
            Err(DataError::Json { line: 9, .. })
        ));
    }

    #[test]
    fn corpus_counts_and_order() {
        let lines = vec![
            line("neutral"),
            line("-"),
            String::new(),
            line("entailment"),
        ];
        let c = parse_corpus(&lines).unwrap();
        assert_eq!(
            c.stats,
            CorpusStats {
                lines: 3,
                kept: 2,
                skipped: 1
            }
        );
        assert_eq!(c.pairs[0].label, Label::Neutral);
        assert_eq!(c.pairs[1].label, Label::Entailment);
    }

    #[test]
    fn encode_prepends_null() {
        let mut vocab = Vocab::new(false);
        vocab.insert("man");
        let pair = RawPair {
            premise: vec!["man".into(), "zzz".into()],
            hypothesis: vec!["man".into()],
            label: Label::Neutral,
        };
        let e = pair.encode(&vocab);
        assert_eq!(e.premise[0], NULL_ID);
        assert_eq!(e.premise[1], 101);
        assert!((1..=100).contains(&e.premise[2]));
        assert_eq!(e.hypothesis, vec![0, 101]);
    }

    #[test]
    fn length_groups() {
        assert_eq!(length_group(&ex(5, 8, Label::Neutral)), 0);
        assert_eq!(length_group(&ex(5, 30, Label::Neutral)), 1);
        assert_eq!(length_group(&ex(60, 10, Label::Neutral)), 2);
        assert_eq!(length_group(&ex(19, 19, Label::Neutral)), 0);
        assert_eq!(length_group(&ex(20, 1, Label::Neutral)), 1);
        assert_eq!(length_group(&ex(49, 3, Label::Neutral)), 1);
        assert_eq!(length_group(&ex(3, 50, Label::Neutral)), 2);
    }

    #[test]
    fn batch_padding_and_masks() {
        let b = Batch::from_examples(&[ex(2, 1, Label::Neutral), ex(4, 1, Label::Entailment)]);
        assert_eq!(b.premise_width, 5);
        assert_eq!(
            b.premise_masks[0].flags(),
            vec![true, true, true, false, false]
        );
        assert_eq!(b.premise_masks[1].flags(), vec![true; 5]);
        assert_eq!(&b.premise_ids[3..5], &[NULL_ID, NULL_ID]);
    }

    #[test]
    fn batch_sizes() {
        let exs: Vec<Example> = (0..10).map(|i| ex(i % 3 + 1, 2, Label::Neutral)).collect();
        let sizes: Vec<usize> = make_batches(&exs, 4).iter().map(Batch::len).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }

    fn arb_example() -> impl Strategy<Value = Example> {
        (
            prop::collection::vec(1u32..500, 0..60),
            prop::collection::vec(1u32..500, 0..60),
            0usize..3,
        )
            .prop_map(|(p, h, l)| Example {
                premise: std::iter::once(0).chain(p).collect(),
                hypothesis: std::iter::once(0).chain(h).collect(),
                label: Label::from_index(l).unwrap(),
            })
    }

    proptest! {
        #[test]
        fn unpad_recovers_examples(exs in prop::collection::vec(arb_example(), 1..12), bs in 1usize..5) {
            let batches = make_batches(&exs, bs);
            let back: Vec<Example> = batches.iter().flat_map(Batch::unpad).collect();
            prop_assert_eq!(back, exs);
        }

        #[test]
        fn semi_sort_is_a_deterministic_permutation(exs in prop::collection::vec(arb_example(), 0..40), seed: u64) {
            let a = semi_sort(&exs, seed);
            prop_assert_eq!(&a, &semi_sort(&exs, seed));
            let groups: Vec<usize> = a.iter().map(length_group).collect();
            prop_assert!(groups.windows(2).all(|w| w[0] <= w[1]));
            let mut x = a.clone();
            let mut y = exs.clone();
            let key = |e: &Example| (e.premise.clone(), e.hypothesis.clone(), e.label);
            x.sort_by_key(key);
            y.sort_by_key(key);
            prop_assert_eq!(x, y);
        }
    }
}
