//! Position-based opinion triplets.
//!
//! A triplet is the 5-tuple `(aspect_start, aspect_end, opinion_start,
//! opinion_end, sentiment)` over 0-based, inclusive token indices.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SentimentLabel {
    #[serde(rename = "POS")]
    Pos,
    #[serde(rename = "NEG")]
    Neg,
    #[serde(rename = "NEU")]
    Neu,
    /// Decoder stop sentinel. Never valid in gold data.
    #[serde(rename = "NONE")]
    None,
}

impl SentimentLabel {
    /// Output order of the sentiment classifier.
    pub const ALL: [SentimentLabel; 4] = [
        SentimentLabel::Pos,
        SentimentLabel::Neg,
        SentimentLabel::Neu,
        SentimentLabel::None,
    ];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        match self {
            SentimentLabel::Pos => 0,
            SentimentLabel::Neg => 1,
            SentimentLabel::Neu => 2,
            SentimentLabel::None => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SentimentLabel::Pos => "POS",
            SentimentLabel::Neg => "NEG",
            SentimentLabel::Neu => "NEU",
            SentimentLabel::None => "NONE",
        }
    }

    pub fn is_polar(self) -> bool {
        self != SentimentLabel::None
    }
}

impl fmt::Display for SentimentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SentimentLabel {
    type Err = TripletError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "POS" => Ok(SentimentLabel::Pos),
            "NEG" => Ok(SentimentLabel::Neg),
            "NEU" => Ok(SentimentLabel::Neu),
            "NONE" => Ok(SentimentLabel::None),
            other => Err(TripletError::UnknownSentiment(other.to_string())),
        }
    }
}

/// Inclusive token range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    pub fn contains(&self, i: usize) -> bool {
        self.start <= i && i <= self.end
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..={}", self.start, self.end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OpinionTriplet {
    pub aspect: Span,
    pub opinion: Span,
    pub sentiment: SentimentLabel,
}

impl OpinionTriplet {
    pub fn new(
        aspect_start: usize,
        aspect_end: usize,
        opinion_start: usize,
        opinion_end: usize,
        sentiment: SentimentLabel,
    ) -> Self {
        OpinionTriplet {
            aspect: Span::new(aspect_start, aspect_end),
            opinion: Span::new(opinion_start, opinion_end),
            sentiment,
        }
    }

    pub fn as_tuple(&self) -> (usize, usize, usize, usize, SentimentLabel) {
        (
            self.aspect.start,
            self.aspect.end,
            self.opinion.start,
            self.opinion.end,
            self.sentiment,
        )
    }
}

impl fmt::Display for OpinionTriplet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({} {} {} {} {})",
            self.aspect.start, self.aspect.end, self.opinion.start, self.opinion.end, self.sentiment
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GenerationDirection {
    AspectFirst,
    OpinionFirst,
}

impl GenerationDirection {
    pub fn short_name(self) -> &'static str {
        match self {
            GenerationDirection::AspectFirst => "af",
            GenerationDirection::OpinionFirst => "of",
        }
    }
}

impl FromStr for GenerationDirection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "af" | "aspect-first" | "aspectfirst" => Ok(GenerationDirection::AspectFirst),
            "of" | "opinion-first" | "opinionfirst" => Ok(GenerationDirection::OpinionFirst),
            other => Err(format!("unknown generation direction '{other}' (expected af or of)")),
        }
    }
}

impl fmt::Display for GenerationDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SentenceFlags {
    pub is_single: bool,
    pub is_multi: bool,
    pub is_multipol: bool,
    pub is_overlap: bool,
}

impl SentenceFlags {
    pub fn is_consistent(&self) -> bool {
        (self.is_single != self.is_multi)
            && (!self.is_multipol || self.is_multi)
            && (!self.is_overlap || self.is_multi)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TripletError {
    #[error("sentence length {0} is too short for two disjoint spans")]
    SentenceTooShort(usize),
    #[error("{span} span index {index} out of range for sentence length {len}")]
    IndexOutOfRange {
        span: &'static str,
        index: usize,
        len: usize,
    },
    #[error("{span} span is inverted (start {start} > end {end})")]
    InvertedSpan {
        span: &'static str,
        start: usize,
        end: usize,
    },
    #[error("aspect span {aspect} and opinion span {opinion} overlap")]
    Overlap { aspect: Span, opinion: Span },
    #[error("NONE is a decoder sentinel and cannot label a gold triplet")]
    NoneSentiment,
    #[error("unknown sentiment label '{0}'")]
    UnknownSentiment(String),
    #[error("cannot classify a sentence without triplets")]
    NoTriplets,
}

/// Checks a gold triplet against a sentence of `n` tokens.
pub fn validate_triplet(t: &OpinionTriplet, n: usize) -> Result<(), TripletError> {
    if n < 2 {
        return Err(TripletError::SentenceTooShort(n));
    }
    for (name, span) in [("aspect", t.aspect), ("opinion", t.opinion)] {
        if span.start > span.end {
            return Err(TripletError::InvertedSpan {
                span: name,
                start: span.start,
                end: span.end,
            });
        }
        if span.end >= n {
            return Err(TripletError::IndexOutOfRange {
                span: name,
                index: span.end,
                len: n,
            });
        }
    }
    if t.aspect.overlaps(&t.opinion) {
        return Err(TripletError::Overlap {
            aspect: t.aspect,
            opinion: t.opinion,
        });
    }
    if t.sentiment == SentimentLabel::None {
        return Err(TripletError::NoneSentiment);
    }
    Ok(())
}

fn sort_key(t: &OpinionTriplet, dir: GenerationDirection) -> (usize, usize, usize, usize, SentimentLabel) {
    let (first, second) = match dir {
        GenerationDirection::AspectFirst => (t.aspect, t.opinion),
        GenerationDirection::OpinionFirst => (t.opinion, t.aspect),
    };
    (first.start, second.start, first.end, second.end, t.sentiment)
}

/// Orders decoding targets by the start of the entity generated first.
///
/// Ties fall back to the other entity's start, then the two end positions.
pub fn sort_targets(triplets: &[OpinionTriplet], dir: GenerationDirection) -> Vec<OpinionTriplet> {
    let mut sorted = triplets.to_vec();
    sorted.sort_by_key(|t| sort_key(t, dir));
    sorted
}

pub fn classify_sentence(triplets: &[OpinionTriplet]) -> Result<SentenceFlags, TripletError> {
    if triplets.is_empty() {
        return Err(TripletError::NoTriplets);
    }
    let is_multi = triplets.len() >= 2;
    let first = triplets[0].sentiment;
    let is_multipol = triplets.iter().any(|t| t.sentiment != first);
    let mut is_overlap = false;
    for (i, a) in triplets.iter().enumerate() {
        for b in &triplets[i + 1..] {
            if a.aspect == b.aspect || a.opinion == b.opinion {
                is_overlap = true;
            }
        }
    }
    Ok(SentenceFlags {
        is_single: !is_multi,
        is_multi,
        is_multipol,
        is_overlap,
    })
}
