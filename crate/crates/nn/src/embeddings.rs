//! Vocabulary, NER-segment ids and the summed word/positional/segment
//! embeddings, plus the pretrained-vector text format.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::EncoderKind;
use crate::graph::{Graph, NodeId};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const NER: usize = 4;
pub const NER1: usize = 5;
pub const NER2: usize = 6;
pub const SEP: usize = 7;
pub const SEP_END: usize = 8;

pub const RESERVED: [&str; 9] = ["<pad>", "<unk>", "<bos>", "<eos>", "NER", "NER1", "NER2", "[sep]", "[sep_end]"];

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("{count} entity slots exceed the segment limit {max}")]
    TooManySegments { count: usize, max: usize },
    #[error("sequence of {len} tokens exceeds the positional limit {max}")]
    TooLong { len: usize, max: usize },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected {expected} components, found {found}")]
    Dimension { line: usize, expected: usize, found: usize },
    #[error("line {line}: duplicate token `{token}`")]
    Duplicate { line: usize, token: String },
    #[error("line {line}: bad number `{text}`")]
    Number { line: usize, text: String },
    #[error("no vectors in embedding file")]
    Empty,
    #[error("vocabulary must start with the reserved tokens")]
    Reserved,
}

/// Token ↔ id map with the reserved tokens at ids 0..9.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        Vocab::new()
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = EmbedError;

    fn try_from(tokens: Vec<String>) -> Result<Self, EmbedError> {
        if tokens.len() < RESERVED.len() || tokens.iter().zip(RESERVED).any(|(a, b)| a != b) {
            return Err(EmbedError::Reserved);
        }
        let mut v = Vocab::new();
        for t in &tokens[RESERVED.len()..] {
            v.add(t);
        }
        if v.len() != tokens.len() {
            return Err(EmbedError::Reserved);
        }
        Ok(v)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    pub fn new() -> Self {
        let tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, index }
    }

    /// Reserved tokens followed by every corpus token in first-seen order.
    pub fn from_corpus<'a, I, S>(sequences: I) -> Self
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        let mut v = Vocab::new();
        for seq in sequences {
            for t in seq {
                v.add(t.as_ref());
            }
        }
        v
    }

    pub fn add(&mut self, token: &str) -> usize {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), self.tokens.len() - 1);
        self.tokens.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or("<unk>", String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }
}

/// Segment id per token: the i-th literal `NER` gets i (from 1), every
/// other token 0.
pub fn ner_segment_ids<S: AsRef<str>>(tokens: &[S], max_segments: usize) -> Result<Vec<usize>, EmbedError> {
    let mut count = 0;
    let ids = tokens
        .iter()
        .map(|t| {
            if t.as_ref() == "NER" {
                count += 1;
                count
            } else {
                0
            }
        })
        .collect();
    if count > max_segments {
        return Err(EmbedError::TooManySegments {
            count,
            max: max_segments,
        });
    }
    Ok(ids)
}

#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    pub word: ParamId,
    pub positional: Option<ParamId>,
    pub segment: ParamId,
    pub max_segments: usize,
    pub max_len: usize,
}

impl EmbeddingSet {
    /// Word table `[|V| × d]`, segment table `[(S_max + 1) × d]` and, when
    /// the encoder uses positions, a learned positional table `[L_max × d]`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        vocab_len: usize,
        d: usize,
        kind: EncoderKind,
        max_len: usize,
        max_segments: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let table = |store: &mut ParamStore, n: &str, rows: usize, rng: &mut dyn rand::RngCore| {
            let data = (0..rows * d).map(|_| rng.gen_range(-0.1..0.1)).collect();
            store.add(format!("{name}.{n}"), Tensor::matrix(rows, d, data))
        };
        let word = table(store, "word", vocab_len, rng);
        let positional = kind.uses_positions().then(|| table(store, "position", max_len, rng));
        let segment = table(store, "segment", max_segments + 1, rng);
        EmbeddingSet {
            word,
            positional,
            segment,
            max_segments,
            max_len,
        }
    }

    /// `word + segment (+ position)` for each token.
    pub fn embed<S: AsRef<str>>(&self, g: &mut Graph<'_>, vocab: &Vocab, tokens: &[S]) -> Result<NodeId, EmbedError> {
        let ids = vocab.encode(tokens);
        let segments = ner_segment_ids(tokens, self.max_segments)?;
        self.embed_ids(g, &ids, &segments)
    }

    pub fn embed_ids(&self, g: &mut Graph<'_>, ids: &[usize], segments: &[usize]) -> Result<NodeId, EmbedError> {
        let word = g.param(self.word);
        let words = g.gather(word, ids).expect("token ids inside the vocabulary");
        let seg = g.param(self.segment);
        let segs = g.gather(seg, segments).map_err(|_| EmbedError::TooManySegments {
            count: segments.iter().copied().max().unwrap_or(0),
            max: self.max_segments,
        })?;
        let mut x = g.add(words, segs);
        if let Some(p) = self.positional {
            if ids.len() > self.max_len {
                return Err(EmbedError::TooLong {
                    len: ids.len(),
                    max: self.max_len,
                });
            }
            let positions: Vec<usize> = (0..ids.len()).collect();
            let table = g.param(p);
            let pos = g.gather(table, &positions).expect("positions checked");
            x = g.add(x, pos);
        }
        Ok(x)
    }
}

/// Vocabulary and word matrix read from a pretrained-vector file.
#[derive(Debug, Clone, PartialEq)]
pub struct Pretrained {
    pub vocab: Vocab,
    pub vectors: Tensor,
}

/// Parses `token v_1 … v_d` lines. Reserved tokens missing from the file
/// get small random rows from `seed`.
pub fn parse_pretrained(text: &str, seed: u64) -> Result<Pretrained, EmbedError> {
    let mut rows: Vec<(String, Vec<f64>)> = Vec::new();
    let mut seen = HashSet::new();
    let mut dim = None;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values = parts
            .map(|p| {
                p.parse::<f64>().map_err(|_| EmbedError::Number {
                    line: line_no,
                    text: p.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let expected = *dim.get_or_insert(values.len());
        if values.len() != expected || expected == 0 {
            return Err(EmbedError::Dimension {
                line: line_no,
                expected,
                found: values.len(),
            });
        }
        if !seen.insert(token.to_string()) {
            return Err(EmbedError::Duplicate {
                line: line_no,
                token: token.to_string(),
            });
        }
        rows.push((token.to_string(), values));
    }
    let d = dim.ok_or(EmbedError::Empty)?;
    let mut vocab = Vocab::new();
    for (t, _) in &rows {
        vocab.add(t);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0.0; vocab.len() * d];
    for (i, reserved) in RESERVED.iter().enumerate() {
        if !seen.contains(*reserved) {
            for x in &mut data[i * d..(i + 1) * d] {
                *x = rng.gen_range(-0.01..0.01);
            }
        }
    }
    for (t, values) in rows {
        let i = vocab.id(&t);
        data[i * d..(i + 1) * d].copy_from_slice(&values);
    }
    Ok(Pretrained {
        vectors: Tensor::matrix(vocab.len(), d, data),
        vocab,
    })
}

pub fn load_pretrained(path: impl AsRef<Path>, seed: u64) -> Result<Pretrained, EmbedError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| EmbedError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_pretrained(&text, seed)
}

/// Text form of every row, reserved tokens included; values use the
/// shortest representation that parses back to the same bits.
pub fn format_pretrained(p: &Pretrained) -> String {
    let mut out = String::new();
    for (i, t) in p.vocab.tokens().iter().enumerate() {
        out.push_str(t);
        for x in p.vectors.row(i) {
            let _ = write!(out, " {x:?}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn segment_ids() {
        assert_eq!(
            ner_segment_ids(&toks("How many movies did NER direct"), 8).unwrap(),
            vec![0, 0, 0, 0, 1, 0]
        );
        assert_eq!(ner_segment_ids(&toks("a b c"), 8).unwrap(), vec![0, 0, 0]);
        assert_eq!(ner_segment_ids(&toks("is NER the spouse of NER"), 8).unwrap(), vec![0, 1, 0, 0, 0, 2]);
        assert!(matches!(
            ner_segment_ids(&toks("NER NER NER"), 2),
            Err(EmbedError::TooManySegments { count: 3, max: 2 })
        ));
    }

    #[test]
    fn vocab_reserved_and_serde() {
        let v = Vocab::from_corpus([toks("who is NER").as_slice(), toks("x [sep] who").as_slice()]);
        assert_eq!(v.id("NER"), NER);
        assert_eq!(v.id("[sep_end]"), SEP_END);
        assert_eq!(v.id("never-seen"), UNK);
        assert_eq!(v.len(), RESERVED.len() + 3);
        let json = serde_json_like(&v);
        assert_eq!(Vocab::try_from(json).unwrap(), v);
        assert!(Vocab::try_from(vec!["a".to_string()]).is_err());
    }

    fn serde_json_like(v: &Vocab) -> Vec<String> {
        v.clone().into()
    }

    #[test]
    fn embed_combines_tables() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vocab = Vocab::from_corpus([toks("who directed NER").as_slice()]);
        let mut store = ParamStore::new();
        let lstm = EmbeddingSet::new(&mut store, "b", vocab.len(), 4, EncoderKind::BiLstm, 64, 8, &mut rng);
        let tr = EmbeddingSet::new(&mut store, "t", vocab.len(), 4, EncoderKind::Transformer, 64, 8, &mut rng);
        let mhc = EmbeddingSet::new(&mut store, "m", vocab.len(), 4, EncoderKind::Mhc, 64, 8, &mut rng);
        assert!(lstm.positional.is_none() && mhc.positional.is_none() && tr.positional.is_some());

        let mut g = Graph::new(&store);
        let tokens = toks("who directed NER who");
        let x = lstm.embed(&mut g, &vocab, &tokens).unwrap();
        assert_eq!(g.value(x).shape(), &[4, 4]);
        let word = store.value(lstm.word);
        let seg = store.value(lstm.segment);
        let ner_row: Vec<f64> = word.row(NER).iter().zip(seg.row(1)).map(|(a, b)| a + b).collect();
        assert_eq!(g.value(x).row(2), ner_row.as_slice());
        let who: Vec<f64> = word.row(vocab.id("who")).iter().zip(seg.row(0)).map(|(a, b)| a + b).collect();
        assert_eq!(g.value(x).row(0), who.as_slice());

        // Same token at two positions differs exactly by the positional rows.
        let y = tr.embed(&mut g, &vocab, &tokens).unwrap();
        let pos = store.value(tr.positional.unwrap());
        for c in 0..4 {
            let diff = g.value(y).get(3, c) - g.value(y).get(0, c);
            assert!((diff - (pos.get(3, c) - pos.get(0, c))).abs() < 1e-15);
        }
        let long = vec!["who".to_string(); 65];
        assert!(matches!(tr.embed(&mut g, &vocab, &long), Err(EmbedError::TooLong { .. })));
        assert!(lstm.embed(&mut g, &vocab, &long).is_ok());
    }

    #[test]
    fn pretrained_format() {
        let p = parse_pretrained("film 0.1 0.2\nspouse -1 3.5\nNER 9 9\n", 3).unwrap();
        assert_eq!(p.vocab.len(), RESERVED.len() + 2);
        assert_eq!(p.vectors.row(NER), &[9.0, 9.0]);
        assert_eq!(p.vectors.row(p.vocab.id("spouse")), &[-1.0, 3.5]);
        assert!(p.vectors.row(PAD).iter().all(|x| x.abs() < 0.01 && *x != 0.0));

        let back = parse_pretrained(&format_pretrained(&p), 99).unwrap();
        assert_eq!(back.vocab, p.vocab);
        let bits = |t: &Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.vectors), bits(&p.vectors));

        assert!(matches!(parse_pretrained("a 1\na 2\n", 0), Err(EmbedError::Duplicate { line: 2, .. })));
        assert!(matches!(
            parse_pretrained("a 1 2\nb 3\n", 0),
            Err(EmbedError::Dimension {
                line: 2,
                expected: 2,
                found: 1
            })
        ));
        assert!(matches!(parse_pretrained("a x\n", 0), Err(EmbedError::Number { .. })));
        assert!(matches!(parse_pretrained("\n", 0), Err(EmbedError::Empty)));
    }
}
