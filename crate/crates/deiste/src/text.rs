//! Tokenization, vocabulary, and the trainable word-embedding store.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, NodeId};
use crate::numerics::tensor::Tensor;

/// Reserved index for padding; its embedding row is pinned to zero.
pub const PAD: usize = 0;
/// Reserved index for tokens unseen at training time.
pub const UNK: usize = 1;

const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";

/// Lowercase, split on whitespace, and peel leading/trailing ASCII
/// punctuation off each word as separate tokens. Interior punctuation is
/// kept, so hyphenated terms and units survive intact. Non-empty input
/// always yields at least one token.
pub fn tokenize(text: &str) -> Vec<String> {
    let lowered = text.to_lowercase();
    let mut tokens = Vec::new();
    for word in lowered.split_whitespace() {
        let chars: Vec<char> = word.chars().collect();
        let mut start = 0;
        let mut end = chars.len();
        let mut leading = Vec::new();
        while start < end && chars[start].is_ascii_punctuation() {
            leading.push(chars[start].to_string());
            start += 1;
        }
        let mut trailing = Vec::new();
        while end > start && chars[end - 1].is_ascii_punctuation() {
            trailing.push(chars[end - 1].to_string());
            end -= 1;
        }
        tokens.extend(leading);
        if start < end {
            tokens.push(chars[start..end].iter().collect());
        }
        tokens.extend(trailing.into_iter().rev());
    }
    if tokens.is_empty() && !text.is_empty() {
        tokens.push(lowered);
    }
    tokens
}

/// Token/index bijection with reserved PAD and UNK slots.
///
/// Immutable after construction. Corpus tokens can never collide with the
/// sentinels because `tokenize` splits `<` and `>` off any word.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    index: HashMap<String, usize>,
    tokens: Vec<String>,
}

impl Vocabulary {
    /// Build from corpus sentences: tokens are indexed in first-seen order
    /// starting at 2.
    pub fn build<'a, I>(sentences: I) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut vocab = Vocabulary {
            index: HashMap::new(),
            tokens: vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()],
        };
        vocab.index.insert(PAD_TOKEN.to_string(), PAD);
        vocab.index.insert(UNK_TOKEN.to_string(), UNK);
        for sentence in sentences {
            for token in sentence {
                if !vocab.index.contains_key(token) {
                    vocab.index.insert(token.clone(), vocab.tokens.len());
                    vocab.tokens.push(token.clone());
                }
            }
        }
        vocab
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // PAD and UNK are always present
    }

    /// Index of a known token.
    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Index of a token, falling back to UNK for unseen ones.
    pub fn index_or_unk(&self, token: &str) -> usize {
        self.index_of(token).unwrap_or(UNK)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(|s| s.as_str())
    }

    /// Indices of every non-reserved corpus token.
    pub fn corpus_indices(&self) -> impl Iterator<Item = usize> + '_ {
        2..self.len()
    }

    /// Write as UTF-8 `token<TAB>index` lines, one per entry.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        for (i, token) in self.tokens.iter().enumerate() {
            writeln!(out, "{token}\t{i}")?;
        }
        Ok(())
    }

    /// Read back a file produced by [`Vocabulary::save`].
    pub fn load(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut tokens = Vec::new();
        let mut index = HashMap::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let (token, idx) = line
                .rsplit_once('\t')
                .ok_or_else(|| Error::format(path, lineno + 1, "expected token<TAB>index"))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| Error::format(path, lineno + 1, format!("bad index {idx:?}")))?;
            if idx != tokens.len() {
                return Err(Error::format(
                    path,
                    lineno + 1,
                    format!("index {idx} out of order, expected {}", tokens.len()),
                ));
            }
            index.insert(token.to_string(), idx);
            tokens.push(token.to_string());
        }
        if tokens.len() < 2 || tokens[PAD] != PAD_TOKEN || tokens[UNK] != UNK_TOKEN {
            return Err(Error::format(path, 0, "missing PAD/UNK sentinels"));
        }
        if index.len() != tokens.len() {
            return Err(Error::format(path, 0, "duplicate tokens"));
        }
        Ok(Vocabulary { index, tokens })
    }
}

/// Coverage of a pretrained-embedding file over the corpus vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Coverage {
    pub found: usize,
    pub total: usize,
}

/// The trainable embedding matrix: one row per vocabulary entry.
///
/// Row `PAD` is all-zero and stays that way: the optimizer skips it.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    /// `[vocab, dim]`.
    pub matrix: Tensor,
    pub trainable: bool,
}

impl EmbeddingStore {
    /// Random initialization in `[-0.05, 0.05)` with a zero PAD row.
    pub fn random<R: Rng>(vocab: &Vocabulary, dim: usize, rng: &mut R) -> Self {
        let mut matrix = Tensor::rand_uniform(vec![vocab.len(), dim], -0.05, 0.05, rng);
        matrix.data_mut()[..dim].fill(0.0);
        EmbeddingStore {
            matrix,
            trainable: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn vocab_size(&self) -> usize {
        self.matrix.rows()
    }
}

/// Load embeddings in the word2vec text format: an optional `count dim`
/// header, then one `token v1 v2 ... v_dim` line per word.
///
/// Rows for vocabulary tokens found in the file are copied; tokens missing
/// from the file keep a random row in `[-0.05, 0.05)` drawn from `rng`. The
/// PAD row is zeroed. Returns the store and found/total coverage over the
/// corpus tokens.
pub fn load_word2vec_text<R: Rng>(
    path: &Path,
    vocab: &Vocabulary,
    dim: usize,
    rng: &mut R,
) -> Result<(EmbeddingStore, Coverage)> {
    let mut store = EmbeddingStore::random(vocab, dim, rng);
    let reader = BufReader::new(File::open(path)?);
    let mut found = vec![false; vocab.len()];

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let first = fields.next().expect("non-empty line has a field");
        let rest: Vec<&str> = fields.collect();

        if lineno == 0 && rest.len() == 1 {
            // Header line: "<count> <dim>".
            if first.parse::<usize>().is_ok() {
                let file_dim: usize = rest[0].parse().map_err(|_| {
                    Error::format(path, 1, format!("bad header dimension {:?}", rest[0]))
                })?;
                if file_dim != dim {
                    return Err(Error::format(
                        path,
                        1,
                        format!("embedding dimension {file_dim} does not match configured {dim}"),
                    ));
                }
                continue;
            }
        }

        if rest.len() != dim {
            return Err(Error::format(
                path,
                lineno + 1,
                format!("expected {dim} values for {first:?}, got {}", rest.len()),
            ));
        }
        let Some(row) = vocab.index_of(first) else {
            continue;
        };
        if row == PAD || row == UNK {
            continue;
        }
        let dst = &mut store.matrix.data_mut()[row * dim..(row + 1) * dim];
        for (k, value) in rest.iter().enumerate() {
            let parsed: f64 = value.parse().map_err(|_| {
                Error::format(path, lineno + 1, format!("bad float {value:?}"))
            })?;
            if !parsed.is_finite() {
                return Err(Error::format(
                    path,
                    lineno + 1,
                    format!("non-finite value {value:?}"),
                ));
            }
            dst[k] = parsed;
        }
        found[row] = true;
    }

    let coverage = Coverage {
        found: vocab.corpus_indices().filter(|&i| found[i]).count(),
        total: vocab.len() - 2,
    };
    Ok((store, coverage))
}

/// Look up embedding columns for a token-index sequence: output is
/// `[dim, len]` with column `i` holding the embedding of `indices[i]`.
/// Participates in the graph, so gradients flow back into the matrix
/// (accumulating across repeated tokens).
pub fn embed(g: &mut Graph, matrix: NodeId, indices: &[usize]) -> Result<NodeId> {
    let rows = g.value(matrix).rows();
    if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
        return Err(Error::contract(format!(
            "embed: index {bad} out of range for vocabulary of {rows}"
        )));
    }
    let opts: Vec<Option<usize>> = indices.iter().map(|&i| Some(i)).collect();
    g.gather_cols(matrix, &opts)
}
