//! Tokenization, vocabulary with special tokens, and the frozen embedding table.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numcore::Matrix;

pub const PAD: usize = 0;
pub const SOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

pub const SPECIAL_TOKENS: [&str; 4] = ["<pad>", "<sos>", "<eos>", "<unk>"];

/// Lowercases, splits on whitespace and strips punctuation from both ends of
/// each token. Internal punctuation (`rock-n-roll`) is kept.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|w| {
            let lower = w.to_lowercase();
            // Literal special tokens (e.g. "<unk>" in reference captions) survive intact.
            if SPECIAL_TOKENS.contains(&lower.as_str()) {
                return Some(lower);
            }
            let t = lower.trim_matches(|c: char| c.is_ascii_punctuation());
            (!t.is_empty()).then(|| t.to_string())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Specials first, then corpus tokens with frequency ≥ `min_freq`, ordered
    /// by descending frequency with ties broken alphabetically.
    pub fn build<S: AsRef<str>>(corpus: &[Vec<S>], min_freq: usize) -> Result<Self> {
        if min_freq == 0 {
            return Err(Error::Argument("min_freq must be at least 1".into()));
        }
        if corpus.iter().all(|c| c.is_empty()) {
            return Err(Error::Argument("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for tok in corpus.iter().flatten() {
            let tok = tok.as_ref();
            if SPECIAL_TOKENS.contains(&tok) {
                continue;
            }
            *counts.entry(tok).or_default() += 1;
        }
        let mut kept: Vec<(&str, usize)> =
            counts.into_iter().filter(|&(_, n)| n >= min_freq).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        Self::from_tokens(
            SPECIAL_TOKENS
                .iter()
                .copied()
                .chain(kept.into_iter().map(|(t, _)| t))
                .map(String::from)
                .collect(),
        )
    }

    /// Rebuilds a vocabulary from its id-ordered token list (specials included).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIAL_TOKENS.len()
            || tokens[..SPECIAL_TOKENS.len()] != SPECIAL_TOKENS.map(String::from)
        {
            return Err(Error::Data("vocabulary must start with the four special tokens".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// `<sos>` + ids + `<eos>`, keeping at most `max_len` content tokens.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S], max_len: usize) -> TokenSequence {
        let mut ids = Vec::with_capacity(tokens.len().min(max_len) + 2);
        ids.push(SOS);
        ids.extend(tokens.iter().take(max_len).map(|t| self.id(t.as_ref())));
        ids.push(EOS);
        TokenSequence { ids }
    }

    /// Content tokens of an id sequence; framing and padding ids are dropped.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&id| !matches!(id, PAD | SOS | EOS))
            .map(|&id| self.token(id).unwrap_or(SPECIAL_TOKENS[UNK]).to_string())
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(text.lines().map(String::from).collect())
    }
}

/// A framed caption: `<sos> w_1 … w_T <eos>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
}

impl TokenSequence {
    pub fn new(ids: Vec<usize>) -> Self {
        Self { ids }
    }

    /// Content length, excluding framing tokens.
    pub fn content_len(&self) -> usize {
        self.ids
            .iter()
            .filter(|&&id| !matches!(id, PAD | SOS | EOS))
            .count()
    }
}

/// Pads framed sequences to a common width. Returns the padded ids and a mask
/// that is `true` for real (non-pad) positions.
pub fn pad_batch(seqs: &[&TokenSequence]) -> (Vec<Vec<usize>>, Vec<Vec<bool>>) {
    let width = seqs.iter().map(|s| s.ids.len()).max().unwrap_or(0);
    seqs.iter()
        .map(|s| {
            let mut ids = s.ids.clone();
            let mut mask = vec![true; ids.len()];
            ids.resize(width, PAD);
            mask.resize(width, false);
            (ids, mask)
        })
        .unzip()
}

/// Word embeddings, `V × d`. Frozen tables are never updated by training.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub table: Matrix,
    pub frozen: bool,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    pub fn row(&self, id: usize) -> &[f64] {
        self.table.row(id)
    }

    /// Seeded random table, uniform in `[-0.1, 0.1]`.
    pub fn random(vocab_size: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            table: Matrix::uniform(vocab_size, dim, 0.1, &mut rng),
            frozen: true,
        }
    }

    /// FNV-1a over the raw bits, for cheap before/after comparisons.
    pub fn checksum(&self) -> u64 {
        self.table.as_slice().iter().fold(0xcbf2_9ce4_8422_2325u64, |h, v| {
            v.to_bits()
                .to_le_bytes()
                .iter()
                .fold(h, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
        })
    }
}

/// Loads `token v_1 … v_d` lines. Rows for vocabulary tokens present in the
/// file are copied; the rest (specials included) are seeded uniform `±0.1`.
pub fn load_embeddings(path: &Path, vocab: &Vocabulary, dim: usize, seed: u64) -> Result<EmbeddingTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut emb = EmbeddingTable::random(vocab.len(), dim, seed);
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message,
        };
        if fields.len() != dim + 1 {
            return Err(parse_err(format!(
                "expected token plus {dim} values, found {} fields",
                fields.len()
            )));
        }
        let Some(&id) = vocab.index.get(fields[0]) else {
            continue;
        };
        let row = fields[1..]
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(format!("bad number `{f}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        emb.table.row_mut(id).copy_from_slice(&row);
    }
    Ok(emb)
}

/// Writes a table in the same text format `load_embeddings` reads.
pub fn write_embeddings<'a>(
    path: &Path,
    rows: impl IntoIterator<Item = (&'a str, &'a [f64])>,
) -> Result<()> {
    let mut out = String::new();
    for (tok, v) in rows {
        out.push_str(tok);
        for x in v {
            out.push(' ');
            out.push_str(&format!("{x:.6}"));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Samples a random vector per token, for stand-in "pretrained" embeddings.
pub fn random_vectors(n: usize, dim: usize, scale: f64, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-scale..=scale)).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split(' ').map(String::from).collect()
    }

    #[test]
    fn tokenize_rules() {
        assert_eq!(tokenize("Dark, brooding Strings."), toks("dark brooding strings"));
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("rock-n-roll  riff"), toks("rock-n-roll riff"));
        assert_eq!(tokenize("\"Epic\" ... theme!"), toks("epic theme"));
        assert_eq!(tokenize("relaxed <unk> guitars"), toks("relaxed <unk> guitars"));
    }

    #[test]
    fn vocab_threshold() {
        let corpus = vec![toks("a a b"), toks("a")];
        let v = Vocabulary::build(&corpus, 2).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("b"), UNK);
        let all = Vocabulary::build(&corpus, 1).unwrap();
        assert_eq!(all.len(), 6);
    }

    #[test]
    fn vocab_ties_are_alphabetical() {
        let corpus = vec![toks("zeta alpha mid"), toks("mid")];
        let v = Vocabulary::build(&corpus, 1).unwrap();
        assert_eq!(&v.tokens()[4..], &toks("mid alpha zeta")[..]);
        assert_eq!(v, Vocabulary::build(&corpus, 1).unwrap());
    }

    #[test]
    fn vocab_errors() {
        assert!(Vocabulary::build::<String>(&[], 1).is_err());
        assert!(Vocabulary::build(&[toks("a")], 0).is_err());
    }

    #[test]
    fn specials_never_reassigned() {
        let v = Vocabulary::build(&[toks("<unk> <eos> x")], 1).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.id("<eos>"), EOS);
    }

    #[test]
    fn encode_frames_and_truncates() {
        let v = Vocabulary::build(&[toks("dark strings")], 1).unwrap();
        let s = v.encode(&toks("dark strings"), 22);
        assert_eq!(s.ids, vec![SOS, v.id("dark"), v.id("strings"), EOS]);
        assert_eq!(v.encode(&toks("dark violin"), 22).ids[2], UNK);

        let long: Vec<String> = (0..25).map(|_| "dark".to_string()).collect();
        let s = v.encode(&long, 22);
        assert_eq!(s.content_len(), 22);
        assert_eq!(s.ids.len(), 24);
    }

    #[test]
    fn padding_masks_tail() {
        let a = TokenSequence::new(vec![1, 5, 2]);
        let b = TokenSequence::new(vec![1, 5, 6, 7, 2]);
        let (ids, mask) = pad_batch(&[&a, &b]);
        assert_eq!(ids[0], vec![1, 5, 2, PAD, PAD]);
        assert_eq!(mask[0], vec![true, true, true, false, false]);
        assert_eq!(mask[1], vec![true; 5]);
    }

    #[test]
    fn embeddings_copy_and_validate() {
        let dir = tempfile::tempdir().unwrap();
        let v = Vocabulary::build(&[toks("dark strings")], 1).unwrap();
        let path = dir.path().join("emb.txt");
        fs::write(&path, "dark 0.5 -1 2\nstrings 1 2 3\nother 9 9 9\n").unwrap();
        let e = load_embeddings(&path, &v, 3, 1).unwrap();
        assert!(e.frozen);
        assert_eq!(e.row(v.id("dark")), &[0.5, -1.0, 2.0]);
        assert_eq!(e.row(v.id("strings")), &[1.0, 2.0, 3.0]);
        assert!(e.row(SOS).iter().all(|x| x.abs() <= 0.1));

        fs::write(&path, "").unwrap();
        let a = load_embeddings(&path, &v, 3, 4).unwrap();
        let b = load_embeddings(&path, &v, 3, 4).unwrap();
        assert_eq!(a, b);

        fs::write(&path, "dark 1 2 3\nstrings 1 2\n").unwrap();
        match load_embeddings(&path, &v, 3, 1) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(words in prop::collection::vec("[a-z]{1,6}", 0..22)) {
            let v = Vocabulary::build(&[words.clone(), vec!["x".to_string()]], 1).unwrap();
            let seq = v.encode(&words, 22);
            prop_assert_eq!(v.decode(&seq.ids), words);
        }
    }
}
