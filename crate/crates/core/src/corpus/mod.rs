//! Dataset ingestion: the published `sentence####[triplets]` text format and
//! a canonical JSONL format carrying POS/DEP annotations.

mod annotate;
mod stats;
mod vocab;

pub use annotate::{annotate, annotate_all, Annotator, CommandAnnotator, FixtureAnnotator, TokenAnnotations};
pub use stats::{compute_statistics, SplitStatistics, StatisticsReport};
pub use vocab::{build_vocab, EmbeddingTable, EncodedSentence, Vocabulary, PAD_ID, UNK_ID};

use std::fmt;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{PasteError, Result};
use crate::triplet::{classify_sentence, validate_triplet, OpinionTriplet, SentenceFlags, SentimentLabel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedSentence {
    pub tokens: Vec<String>,
    pub pos_tags: Option<Vec<String>>,
    pub dep_labels: Option<Vec<String>>,
    pub gold: Vec<OpinionTriplet>,
    pub flags: SentenceFlags,
}

impl AnnotatedSentence {
    /// Validates every gold triplet and derives the sentence flags.
    pub fn new(
        tokens: Vec<String>,
        pos_tags: Option<Vec<String>>,
        dep_labels: Option<Vec<String>>,
        gold: Vec<OpinionTriplet>,
    ) -> Result<Self> {
        if tokens.is_empty() {
            return Err(PasteError::Empty("sentence has no tokens".into()));
        }
        let n = tokens.len();
        for (name, tags) in [("pos", &pos_tags), ("dep", &dep_labels)] {
            if let Some(tags) = tags {
                if tags.len() != n {
                    return Err(PasteError::Shape(format!(
                        "{name} has {} tags for {n} tokens",
                        tags.len()
                    )));
                }
            }
        }
        for t in &gold {
            validate_triplet(t, n)?;
        }
        let flags = classify_sentence(&gold)?;
        Ok(AnnotatedSentence {
            tokens,
            pos_tags,
            dep_labels,
            gold,
            flags,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn is_annotated(&self) -> bool {
        self.pos_tags.is_some() && self.dep_labels.is_some()
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    /// `tokenized sentence####[([a..], [o..], 'POS'), ...]`
    Published,
    /// One JSON object per line, see [`CanonicalRecord`].
    Canonical,
}

pub type TripletTuple = (usize, usize, usize, usize, SentimentLabel);

/// One line of the canonical JSONL format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalRecord {
    pub tokens: Vec<String>,
    #[serde(default)]
    pub pos: Option<Vec<String>>,
    #[serde(default)]
    pub dep: Option<Vec<String>>,
    pub triplets: Vec<TripletTuple>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<Vec<TripletTuple>>,
}

impl CanonicalRecord {
    pub fn from_sentence(s: &AnnotatedSentence) -> Self {
        CanonicalRecord {
            tokens: s.tokens.clone(),
            pos: s.pos_tags.clone(),
            dep: s.dep_labels.clone(),
            triplets: s.gold.iter().map(OpinionTriplet::as_tuple).collect(),
            predicted: None,
        }
    }
}

fn tuple_to_triplet(t: &TripletTuple) -> OpinionTriplet {
    OpinionTriplet::new(t.0, t.1, t.2, t.3, t.4)
}

pub fn import_dataset<R: BufRead>(source: R, format: DataFormat) -> Result<Vec<AnnotatedSentence>> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = match format {
            DataFormat::Published => parse_published_line(&line),
            DataFormat::Canonical => parse_canonical_line(&line),
        };
        let sentence = parsed.map_err(|e| match e {
            PasteError::Parse { message, .. } => PasteError::Parse {
                line: line_no,
                message,
            },
            other => PasteError::Parse {
                line: line_no,
                message: other.to_string(),
            },
        })?;
        out.push(sentence);
    }
    Ok(out)
}

pub fn import_file(path: &Path, format: DataFormat) -> Result<Vec<AnnotatedSentence>> {
    let file = fs::File::open(path).map_err(|e| {
        PasteError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?;
    import_dataset(std::io::BufReader::new(file), format)
}

fn parse_canonical_line(line: &str) -> Result<AnnotatedSentence> {
    let record: CanonicalRecord = serde_json::from_str(line)?;
    AnnotatedSentence::new(
        record.tokens,
        record.pos,
        record.dep,
        record.triplets.iter().map(tuple_to_triplet).collect(),
    )
}

fn parse_error(message: impl Into<String>) -> PasteError {
    PasteError::Parse {
        line: 0,
        message: message.into(),
    }
}

fn parse_published_line(line: &str) -> Result<AnnotatedSentence> {
    let (text, triplets) = line
        .split_once("####")
        .ok_or_else(|| parse_error("missing '####' separator"))?;
    let tokens: Vec<String> = text.split_whitespace().map(str::to_string).collect();
    let raw = PyLiteralParser::new(triplets).parse_triplet_list()?;
    let mut gold = Vec::with_capacity(raw.len());
    for (aspect, opinion, label) in raw {
        let aspect = contiguous_span(&aspect, "aspect")?;
        let opinion = contiguous_span(&opinion, "opinion")?;
        let sentiment = SentimentLabel::from_str(&label)?;
        gold.push(OpinionTriplet::new(aspect.0, aspect.1, opinion.0, opinion.1, sentiment));
    }
    AnnotatedSentence::new(tokens, None, None, gold)
}

fn contiguous_span(indices: &[usize], what: &str) -> Result<(usize, usize)> {
    let (&first, &last) = indices
        .first()
        .zip(indices.last())
        .ok_or_else(|| parse_error(format!("empty {what} index list")))?;
    if indices.windows(2).any(|w| w[1] != w[0] + 1) {
        return Err(parse_error(format!("{what} indices {indices:?} are not contiguous")));
    }
    Ok((first, last))
}

/// Parser for the Python-literal triplet list of the published format.
struct PyLiteralParser<'a> {
    chars: std::iter::Peekable<std::str::CharIndices<'a>>,
}

type RawTriplet = (Vec<usize>, Vec<usize>, String);

impl<'a> PyLiteralParser<'a> {
    fn new(src: &'a str) -> Self {
        PyLiteralParser {
            chars: src.char_indices().peekable(),
        }
    }

    fn skip_ws(&mut self) {
        while matches!(self.chars.peek(), Some((_, c)) if c.is_whitespace()) {
            self.chars.next();
        }
    }

    fn expect(&mut self, want: char) -> Result<()> {
        self.skip_ws();
        match self.chars.next() {
            Some((_, c)) if c == want => Ok(()),
            Some((pos, c)) => Err(parse_error(format!("expected '{want}' at offset {pos}, found '{c}'"))),
            None => Err(parse_error(format!("expected '{want}', found end of line"))),
        }
    }

    fn peek_is(&mut self, want: char) -> bool {
        self.skip_ws();
        matches!(self.chars.peek(), Some((_, c)) if *c == want)
    }

    fn parse_triplet_list(mut self) -> Result<Vec<RawTriplet>> {
        let mut out = Vec::new();
        self.expect('[')?;
        if self.peek_is(']') {
            self.chars.next();
        } else {
            loop {
                out.push(self.parse_triplet()?);
                if self.peek_is(',') {
                    self.chars.next();
                    if self.peek_is(']') {
                        self.chars.next();
                        break;
                    }
                    continue;
                }
                self.expect(']')?;
                break;
            }
        }
        self.skip_ws();
        if let Some((pos, c)) = self.chars.next() {
            return Err(parse_error(format!("trailing input '{c}' at offset {pos}")));
        }
        Ok(out)
    }

    fn parse_triplet(&mut self) -> Result<RawTriplet> {
        self.expect('(')?;
        let aspect = self.parse_index_list()?;
        self.expect(',')?;
        let opinion = self.parse_index_list()?;
        self.expect(',')?;
        let label = self.parse_string()?;
        if self.peek_is(',') {
            self.chars.next();
        }
        self.expect(')')?;
        Ok((aspect, opinion, label))
    }

    fn parse_index_list(&mut self) -> Result<Vec<usize>> {
        self.expect('[')?;
        let mut out = Vec::new();
        loop {
            self.skip_ws();
            let mut digits = String::new();
            while let Some((_, c)) = self.chars.peek() {
                if c.is_ascii_digit() {
                    digits.push(*c);
                    self.chars.next();
                } else {
                    break;
                }
            }
            if !digits.is_empty() {
                out.push(digits.parse().map_err(|_| parse_error("bad index"))?);
            }
            self.skip_ws();
            match self.chars.next() {
                Some((_, ',')) => continue,
                Some((_, ']')) => break,
                Some((pos, c)) => return Err(parse_error(format!("unexpected '{c}' at offset {pos}"))),
                None => return Err(parse_error("unterminated index list")),
            }
        }
        Ok(out)
    }

    fn parse_string(&mut self) -> Result<String> {
        self.skip_ws();
        let quote = match self.chars.next() {
            Some((_, q @ ('\'' | '"'))) => q,
            _ => return Err(parse_error("expected quoted sentiment label")),
        };
        let mut s = String::new();
        for (_, c) in self.chars.by_ref() {
            if c == quote {
                return Ok(s);
            }
            s.push(c);
        }
        Err(parse_error("unterminated string"))
    }
}

pub fn export_canonical<W: Write>(sentences: &[AnnotatedSentence], mut out: W) -> Result<()> {
    for s in sentences {
        serde_json::to_writer(&mut out, &CanonicalRecord::from_sentence(s))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split '{other}'")),
        }
    }
}

/// The benchmark datasets; `RestAll` is the union of the three restaurant sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DatasetName {
    #[serde(rename = "14lap")]
    Lap14,
    #[serde(rename = "14rest")]
    Rest14,
    #[serde(rename = "15rest")]
    Rest15,
    #[serde(rename = "16rest")]
    Rest16,
    #[serde(rename = "rest-all")]
    RestAll,
}

impl DatasetName {
    pub const ALL: [DatasetName; 5] = [
        DatasetName::Lap14,
        DatasetName::Rest14,
        DatasetName::Rest15,
        DatasetName::Rest16,
        DatasetName::RestAll,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DatasetName::Lap14 => "14lap",
            DatasetName::Rest14 => "14rest",
            DatasetName::Rest15 => "15rest",
            DatasetName::Rest16 => "16rest",
            DatasetName::RestAll => "rest-all",
        }
    }

    /// Directories whose files make up this dataset.
    pub fn components(self) -> &'static [&'static str] {
        match self {
            DatasetName::Lap14 => &["14lap"],
            DatasetName::Rest14 => &["14rest"],
            DatasetName::Rest15 => &["15rest"],
            DatasetName::Rest16 => &["16rest"],
            DatasetName::RestAll => &["14rest", "15rest", "16rest"],
        }
    }
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetName {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        DatasetName::ALL
            .into_iter()
            .find(|d| d.name() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown dataset '{s}' (expected 14lap, 14rest, 15rest, 16rest or rest-all)"))
    }
}

/// Path of one split's file inside a component directory.
///
/// An annotated `<split>.jsonl` takes precedence over the published
/// `<split>_triplets.txt`.
/// The restaurant directories are also accepted under their published
/// spelling (`14res`, ...).
pub fn split_file(data_dir: &Path, component: &str, split: Split) -> Option<(PathBuf, DataFormat)> {
    let alias = component.strip_suffix("rest").map(|p| format!("{p}res"));
    for name in std::iter::once(component.to_string()).chain(alias) {
        let dir = data_dir.join(name);
        let canonical = dir.join(format!("{}.jsonl", split.name()));
        if canonical.is_file() {
            return Some((canonical, DataFormat::Canonical));
        }
        let published = dir.join(format!("{}_triplets.txt", split.name()));
        if published.is_file() {
            return Some((published, DataFormat::Published));
        }
    }
    None
}

pub fn load_split(data_dir: &Path, dataset: DatasetName, split: Split) -> Result<Vec<AnnotatedSentence>> {
    let mut out = Vec::new();
    for component in dataset.components() {
        let (path, format) = split_file(data_dir, component, split).ok_or_else(|| {
            PasteError::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!(
                    "no {split} file for {component} under {} (expected {split}.jsonl or {split}_triplets.txt)",
                    data_dir.join(component).display()
                ),
            ))
        })?;
        out.extend(import_file(&path, format)?);
    }
    Ok(out)
}
