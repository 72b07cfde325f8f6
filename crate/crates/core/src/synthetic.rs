//! A generated corpus in the SNLI file format, with matching embeddings,
//! whose labels follow simple lexical rules:
//!
//! * entailment: the hypothesis is a subset of the premise words;
//! * contradiction: the same, with one word replaced by its antonym;
//! * neutral: the same, plus one word absent from the premise.
//!
//! Every base word `wNNN` has an antonym `not_wNNN` whose vector is the
//! negated vector of the word.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::data::Label;
use crate::numerics::{mix_seed, Matrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub pairs: usize,
    /// Base words; the vocabulary holds twice as many with antonyms.
    pub words: usize,
    pub dim: usize,
    /// Inclusive bounds on premise length.
    pub premise_len: (usize, usize),
    /// Inclusive bounds on the number of premise words the hypothesis keeps.
    pub kept_len: (usize, usize),
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            pairs: 1000,
            words: 60,
            dim: 300,
            premise_len: (3, 5),
            kept_len: (1, 2),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPair {
    pub premise: Vec<String>,
    pub hypothesis: Vec<String>,
    pub label: Label,
}

impl SyntheticPair {
    /// The pair as one SNLI-style JSON line.
    pub fn to_json_line(&self, id: usize) -> String {
        let parse = |ws: &[String]| {
            let leaves: Vec<String> = ws.iter().map(|w| format!("(NN {w})")).collect();
            format!("(ROOT (NP {}))", leaves.join(" "))
        };
        json!({
            "gold_label": self.label.name(),
            "sentence1": self.premise.join(" "),
            "sentence2": self.hypothesis.join(" "),
            "sentence1_parse": parse(&self.premise),
            "sentence2_parse": parse(&self.hypothesis),
            "pairID": format!("synthetic-{id}"),
        })
        .to_string()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub pairs: Vec<SyntheticPair>,
    /// Token and vector for every base word and antonym.
    pub vectors: Vec<(String, Vec<f64>)>,
}

pub fn word(i: usize) -> String {
    format!("w{i:03}")
}

pub fn antonym(i: usize) -> String {
    format!("not_w{i:03}")
}

pub fn generate(spec: &SyntheticSpec) -> SyntheticCorpus {
    assert!(
        spec.words > spec.premise_len.1,
        "need more words than premise slots"
    );
    assert!(spec.premise_len.0 >= spec.kept_len.1 && spec.kept_len.0 >= 1);

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, 1));
    let base = Matrix::gaussian(spec.words, spec.dim, 1.0, &mut rng);
    let mut vectors = Vec::with_capacity(2 * spec.words);
    for i in 0..spec.words {
        vectors.push((word(i), base.row(i).to_vec()));
    }
    for i in 0..spec.words {
        vectors.push((antonym(i), base.row(i).iter().map(|v| -v).collect()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, 2));
    let all: Vec<usize> = (0..spec.words).collect();
    let pairs = (0..spec.pairs)
        .map(|_| {
            let n = rng.random_range(spec.premise_len.0..=spec.premise_len.1);
            let premise: Vec<usize> = all.choose_multiple(&mut rng, n).copied().collect();
            let k = rng.random_range(spec.kept_len.0..=spec.kept_len.1);
            let mut kept: Vec<usize> = premise.choose_multiple(&mut rng, k).copied().collect();
            let label = *Label::ALL.choose(&mut rng).expect("three labels");
            let mut hypothesis: Vec<String> = kept.iter().map(|&i| word(i)).collect();
            match label {
                Label::Entailment => {}
                Label::Contradiction => {
                    let slot = rng.random_range(0..kept.len());
                    hypothesis[slot] = antonym(kept[slot]);
                }
                Label::Neutral => {
                    let fresh = loop {
                        let w = rng.random_range(0..spec.words);
                        if !premise.contains(&w) {
                            break w;
                        }
                    };
                    kept.push(fresh);
                    hypothesis.push(word(fresh));
                }
            }
            hypothesis.shuffle(&mut rng);
            SyntheticPair {
                premise: premise.iter().map(|&i| word(i)).collect(),
                hypothesis,
                label,
            }
        })
        .collect();
    SyntheticCorpus { pairs, vectors }
}

impl SyntheticCorpus {
    pub fn jsonl_lines(&self) -> Vec<String> {
        self.pairs
            .iter()
            .enumerate()
            .map(|(i, p)| p.to_json_line(i))
            .collect()
    }

    /// `token v1 ... vdim` lines.
    pub fn embedding_lines(&self) -> Vec<String> {
        self.vectors
            .iter()
            .map(|(t, v)| {
                let mut line = t.clone();
                for x in v {
                    line.push(' ');
                    line.push_str(&x.to_string());
                }
                line
            })
            .collect()
    }

    pub fn write_corpus(&self, path: &Path) -> std::io::Result<()> {
        write_lines(path, &self.jsonl_lines())
    }

    pub fn write_embeddings(&self, path: &Path) -> std::io::Result<()> {
        write_lines(path, &self.embedding_lines())
    }
}

fn write_lines(path: &Path, lines: &[String]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for l in lines {
        writeln!(f, "{l}")?;
    }
    f.flush()
}
