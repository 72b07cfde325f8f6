//! Fixed pretrained word vectors, the vocabulary, and OOV hashing.
//!
//! Id layout: 0 is the NULL token, 1..=100 are the OOV buckets, and every
//! id after that is a corpus token that was found in the pretrained file.
//! All rows are unit length and never change after construction.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{mix_seed, Matrix};

pub const NULL_TOKEN: &str = "NULL";
pub const NULL_ID: u32 = 0;
pub const OOV_BUCKETS: u32 = 100;
/// Width of the pretrained vectors.
pub const DEFAULT_DIM: usize = 300;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected a token and {expected} numbers, found {found} fields")]
    FieldCount {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: cannot parse {value:?} as a number")]
    BadNumber { line: usize, value: String },
    #[error("embedding id {id} out of range for a table of {rows} rows")]
    IdOutOfRange { id: u32, rows: usize },
    #[error("embedding row {row} has zero norm")]
    ZeroRow { row: usize },
    #[error("vocabulary of {vocab} tokens does not match a table of {rows} rows")]
    SizeMismatch { vocab: usize, rows: usize },
}

/// 64-bit FNV-1a over the UTF-8 bytes of `token`.
pub fn fnv1a64(token: &str) -> u64 {
    fnv1a64_bytes(token.as_bytes())
}

pub fn fnv1a64_bytes(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

/// OOV bucket id in `1..=100` for a token missing from the vocabulary.
pub fn oov_bucket(token: &str) -> u32 {
    1 + (fnv1a64(token) % u64::from(OOV_BUCKETS)) as u32
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    lowercase: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabRepr {
    lowercase: bool,
    /// Corpus tokens only, in id order starting at 101.
    tokens: Vec<String>,
}

impl TryFrom<VocabRepr> for Vocab {
    type Error = String;

    fn try_from(repr: VocabRepr) -> Result<Self, Self::Error> {
        let mut vocab = Vocab::new(repr.lowercase);
        for t in repr.tokens {
            if vocab.insert(&t).is_none() {
                return Err(format!("duplicate or reserved token {t:?} in vocabulary"));
            }
        }
        Ok(vocab)
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        let first = (1 + OOV_BUCKETS) as usize;
        VocabRepr {
            lowercase: v.lowercase,
            tokens: v.tokens[first..].to_vec(),
        }
    }
}

impl Vocab {
    /// A vocabulary holding only the reserved ids.
    pub fn new(lowercase: bool) -> Self {
        let mut tokens = Vec::with_capacity(1 + OOV_BUCKETS as usize);
        tokens.push(NULL_TOKEN.to_string());
        tokens.extend((1..=OOV_BUCKETS).map(|b| format!("<oov:{b}>")));
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self {
            tokens,
            index,
            lowercase,
        }
    }

    fn normalize<'a>(&self, token: &'a str) -> std::borrow::Cow<'a, str> {
        if self.lowercase {
            std::borrow::Cow::Owned(token.to_lowercase())
        } else {
            std::borrow::Cow::Borrowed(token)
        }
    }

    /// Adds a corpus token, returning its new id, or `None` if it is
    /// already present or collides with a reserved name.
    pub fn insert(&mut self, token: &str) -> Option<u32> {
        let token = self.normalize(token).into_owned();
        if self.index.contains_key(&token) {
            return None;
        }
        let id = self.tokens.len() as u32;
        self.index.insert(token.clone(), id);
        self.tokens.push(token);
        Some(id)
    }

    /// Known token → its id; anything else → its OOV bucket.
    pub fn lookup(&self, token: &str) -> u32 {
        let token = self.normalize(token);
        match self.index.get(token.as_ref()) {
            Some(&id) => id,
            None => oov_bucket(&token),
        }
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(self.normalize(token).as_ref())
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }
}

/// Unit-length embedding rows, one per vocabulary id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    vectors: Matrix,
}

impl EmbeddingTable {
    /// Wraps `vectors`, normalizing every row to unit length.
    pub fn from_vectors(mut vectors: Matrix) -> Result<Self, EmbeddingError> {
        for r in 0..vectors.rows() {
            if !normalize(vectors.row_mut(r)) {
                return Err(EmbeddingError::ZeroRow { row: r });
            }
        }
        Ok(Self { vectors })
    }

    /// Adopts rows that are already normalized, e.g. read from a checkpoint.
    pub(crate) fn from_normalized(vectors: Matrix) -> Self {
        Self { vectors }
    }

    /// `rows` seeded Gaussian rows, normalized.
    pub fn random(rows: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vectors = Matrix::gaussian(rows, dim, 1.0, &mut rng);
        for r in 0..rows {
            // a Gaussian draw of exactly zero in every coordinate does not happen
            normalize(vectors.row_mut(r));
        }
        Self { vectors }
    }

    pub fn rows(&self) -> usize {
        self.vectors.rows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    pub fn row(&self, id: u32) -> Option<&[f64]> {
        ((id as usize) < self.rows()).then(|| self.vectors.row(id as usize))
    }

    /// Stacks the rows for `ids`; row `i` of the result is the vector of
    /// `ids[i]`.
    pub fn embed_sentence(&self, ids: &[u32]) -> Result<Matrix, EmbeddingError> {
        let mut data = Vec::with_capacity(ids.len() * self.dim());
        for &id in ids {
            let row = self.row(id).ok_or(EmbeddingError::IdOutOfRange {
                id,
                rows: self.rows(),
            })?;
            data.extend_from_slice(row);
        }
        Ok(Matrix::from_vec(ids.len(), self.dim(), data).expect("row widths agree"))
    }
}

/// Scales `v` to unit ℓ2 norm; false when `v` is zero.
fn normalize(v: &mut [f64]) -> bool {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    true
}

fn seeded_unit_row(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut row = Matrix::gaussian(1, dim, 1.0, &mut rng).into_vec();
    normalize(&mut row);
    row
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingOptions {
    pub dim: usize,
    pub lowercase: bool,
    /// Seed for the NULL row, the OOV rows and replacements of zero rows.
    pub seed: u64,
}

impl Default for EmbeddingOptions {
    fn default() -> Self {
        Self {
            dim: DEFAULT_DIM,
            lowercase: false,
            seed: 0x5eed,
        }
    }
}

/// Reads whitespace-separated `token v1 ... vdim` lines (optionally
/// gzipped) and keeps the rows for tokens in `corpus_tokens`.
///
/// The result holds the NULL row, the 100 OOV rows (all seeded Gaussian),
/// then one row per corpus token in the order the file lists them. Every
/// line is checked for the right field count, but numbers are parsed only
/// for tokens that are kept.
pub fn load_pretrained(
    path: &Path,
    corpus_tokens: &HashSet<String>,
    opts: &EmbeddingOptions,
) -> Result<(EmbeddingTable, Vocab), EmbeddingError> {
    let io_err = |source| EmbeddingError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = File::open(path).map_err(io_err)?;
    let mut magic = [0u8; 2];
    let gz = file.read(&mut magic).map_err(io_err)? == 2 && magic == [0x1f, 0x8b];
    drop(file);
    let file = File::open(path).map_err(io_err)?;
    let reader: Box<dyn BufRead> = if gz {
        Box::new(BufReader::new(MultiGzDecoder::new(file)))
    } else {
        Box::new(BufReader::new(file))
    };
    read_pretrained(reader, corpus_tokens, opts).map_err(|e| match e {
        EmbeddingError::Io { source, .. } => io_err(source),
        other => other,
    })
}

/// [`load_pretrained`] over any reader.
pub fn read_pretrained<R: BufRead>(
    reader: R,
    corpus_tokens: &HashSet<String>,
    opts: &EmbeddingOptions,
) -> Result<(EmbeddingTable, Vocab), EmbeddingError> {
    let wanted: HashSet<String> = if opts.lowercase {
        corpus_tokens.iter().map(|t| t.to_lowercase()).collect()
    } else {
        corpus_tokens.clone()
    };

    let mut vocab = Vocab::new(opts.lowercase);
    let mut data = Vec::new();
    data.extend(seeded_unit_row(opts.dim, mix_seed(opts.seed, 0)));
    for b in 1..=OOV_BUCKETS {
        data.extend(seeded_unit_row(opts.dim, mix_seed(opts.seed, u64::from(b))));
    }

    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|source| EmbeddingError::Io {
            path: String::new(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != opts.dim + 1 {
            return Err(EmbeddingError::FieldCount {
                line: line_no,
                expected: opts.dim,
                found: fields.len(),
            });
        }
        let token = if opts.lowercase {
            fields[0].to_lowercase()
        } else {
            fields[0].to_string()
        };
        if !wanted.contains(&token) {
            continue;
        }
        let mut row = fields[1..]
            .iter()
            .map(|v| {
                v.parse::<f64>().map_err(|_| EmbeddingError::BadNumber {
                    line: line_no,
                    value: (*v).to_string(),
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        if vocab.contains(&token) {
            log::warn!("line {line_no}: duplicate token {token:?}; keeping the first vector");
            continue;
        }
        if !normalize(&mut row) {
            log::warn!("line {line_no}: zero vector for {token:?}; using a seeded random row");
            row = seeded_unit_row(opts.dim, mix_seed(opts.seed, fnv1a64(&token)));
        }
        if vocab.insert(&token).is_none() {
            // reserved names such as "NULL" keep their reserved row
            log::warn!("line {line_no}: {token:?} is reserved; ignoring its vector");
            continue;
        }
        data.extend(row);
    }
    let rows = vocab.len();
    let vectors = Matrix::from_vec(rows, opts.dim, data).expect("one row per vocab entry");
    Ok((EmbeddingTable { vectors }, vocab))
}
