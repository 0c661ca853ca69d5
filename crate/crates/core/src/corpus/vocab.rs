use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::AnnotatedSentence;
use crate::error::{PasteError, Result};

pub const UNK_ID: usize = 0;
pub const PAD_ID: usize = 1;
const UNK: &str = "<unk>";
const PAD: &str = "<pad>";

#[derive(Debug, Clone, Default)]
struct Index {
    items: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Index {
    fn with_reserved() -> Self {
        let mut index = Index::default();
        index.insert(UNK);
        index.insert(PAD);
        index
    }

    fn from_items(items: Vec<String>) -> Self {
        let ids = items.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Index { items, ids }
    }

    fn insert(&mut self, item: &str) {
        if !self.ids.contains_key(item) {
            self.ids.insert(item.to_string(), self.items.len());
            self.items.push(item.to_string());
        }
    }

    fn get(&self, item: &str) -> usize {
        self.ids.get(item).copied().unwrap_or(UNK_ID)
    }
}

/// Word, POS and DEP id maps built from the training split.
///
/// Each map reserves id 0 for unknown entries and id 1 for padding.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "VocabularyRecord", into = "VocabularyRecord")]
pub struct Vocabulary {
    words: Index,
    pos: Index,
    dep: Index,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRecord {
    words: Vec<String>,
    pos: Vec<String>,
    dep: Vec<String>,
}

impl From<VocabularyRecord> for Vocabulary {
    fn from(r: VocabularyRecord) -> Self {
        Vocabulary {
            words: Index::from_items(r.words),
            pos: Index::from_items(r.pos),
            dep: Index::from_items(r.dep),
        }
    }
}

impl From<Vocabulary> for VocabularyRecord {
    fn from(v: Vocabulary) -> Self {
        VocabularyRecord {
            words: v.words.items,
            pos: v.pos.items,
            dep: v.dep.items,
        }
    }
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.words.items == other.words.items && self.pos.items == other.pos.items && self.dep.items == other.dep.items
    }
}

/// Sentence mapped to embedding ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSentence {
    pub words: Vec<usize>,
    pub pos: Vec<usize>,
    pub dep: Vec<usize>,
}

impl EncodedSentence {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

pub fn build_vocab(train: &[AnnotatedSentence]) -> Result<Vocabulary> {
    if train.is_empty() {
        return Err(PasteError::Empty("training set is empty".into()));
    }
    let mut vocab = Vocabulary {
        words: Index::with_reserved(),
        pos: Index::with_reserved(),
        dep: Index::with_reserved(),
    };
    for s in train {
        for w in &s.tokens {
            vocab.words.insert(w);
        }
        for p in s.pos_tags.iter().flatten() {
            vocab.pos.insert(p);
        }
        for d in s.dep_labels.iter().flatten() {
            vocab.dep.insert(d);
        }
    }
    Ok(vocab)
}

impl Vocabulary {
    pub fn word_count(&self) -> usize {
        self.words.items.len()
    }

    pub fn pos_count(&self) -> usize {
        self.pos.items.len()
    }

    pub fn dep_count(&self) -> usize {
        self.dep.items.len()
    }

    pub fn word_id(&self, word: &str) -> usize {
        self.words.get(word)
    }

    pub fn pos_id(&self, tag: &str) -> usize {
        self.pos.get(tag)
    }

    pub fn dep_id(&self, label: &str) -> usize {
        self.dep.get(label)
    }

    pub fn words(&self) -> &[String] {
        &self.words.items
    }

    pub fn encode(&self, sentence: &AnnotatedSentence) -> Result<EncodedSentence> {
        let (pos, dep) = match (&sentence.pos_tags, &sentence.dep_labels) {
            (Some(p), Some(d)) => (p, d),
            _ => return Err(PasteError::Unannotated),
        };
        Ok(EncodedSentence {
            words: sentence.tokens.iter().map(|w| self.word_id(w)).collect(),
            pos: pos.iter().map(|t| self.pos_id(t)).collect(),
            dep: dep.iter().map(|t| self.dep_id(t)).collect(),
        })
    }

    /// Initial word embedding matrix: pre-trained vectors where available,
    /// uniform noise in [-0.1, 0.1] elsewhere, zeros for padding.
    pub fn word_embedding_init<R: Rng>(
        &self,
        table: Option<&EmbeddingTable>,
        d_w: usize,
        rng: &mut R,
    ) -> Result<Array2<f32>> {
        if let Some(table) = table {
            if table.dim != d_w {
                return Err(PasteError::Shape(format!(
                    "embedding table has dimension {}, configured d_w is {d_w}",
                    table.dim
                )));
            }
        }
        let mut out = Array2::zeros((self.word_count(), d_w));
        for (id, word) in self.words.items.iter().enumerate() {
            let mut row = out.row_mut(id);
            if id == PAD_ID {
                continue;
            }
            match table.and_then(|t| t.lookup(word)) {
                Some(v) => row.iter_mut().zip(v).for_each(|(r, &x)| *r = x),
                None => row.iter_mut().for_each(|r| *r = rng.gen_range(-0.1..=0.1)),
            }
        }
        Ok(out)
    }
}

/// Pre-trained word vectors in the whitespace-separated GloVe text layout.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub dim: usize,
    vectors: HashMap<String, Vec<f32>>,
    lowercase_keyed: bool,
}

impl EmbeddingTable {
    pub fn from_vectors(dim: usize, vectors: HashMap<String, Vec<f32>>) -> Result<Self> {
        if let Some((w, v)) = vectors.iter().find(|(_, v)| v.len() != dim) {
            return Err(PasteError::Shape(format!("vector for '{w}' has {} values, expected {dim}", v.len())));
        }
        let lowercase_keyed = vectors.keys().all(|k| !k.chars().any(char::is_uppercase));
        Ok(EmbeddingTable {
            dim,
            vectors,
            lowercase_keyed,
        })
    }

    /// Loads vectors, keeping only the words in `keep` when given.
    pub fn load(path: &Path, keep: Option<&HashSet<String>>) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut dim = None;
        let mut vectors = HashMap::new();
        let keep_lower: Option<HashSet<String>> = keep.map(|k| k.iter().map(|w| w.to_lowercase()).collect());
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let mut parts = line.split(' ');
            let Some(word) = parts.next() else { continue };
            if word.is_empty() {
                continue;
            }
            if let (Some(k), Some(kl)) = (keep, &keep_lower) {
                if !k.contains(word) && !kl.contains(word) {
                    continue;
                }
            }
            let values: Vec<f32> = parts
                .filter(|p| !p.is_empty())
                .map(|p| p.parse::<f32>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| PasteError::Parse {
                    line: i + 1,
                    message: format!("bad embedding value: {e}"),
                })?;
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(PasteError::Parse {
                        line: i + 1,
                        message: format!("expected {d} values, found {}", values.len()),
                    })
                }
                _ => {}
            }
            vectors.insert(word.to_string(), values);
        }
        Self::from_vectors(dim.unwrap_or(0), vectors)
    }

    pub fn lookup(&self, word: &str) -> Option<&[f32]> {
        let hit = if self.lowercase_keyed {
            self.vectors.get(&word.to_lowercase())
        } else {
            self.vectors.get(word)
        };
        hit.map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}
