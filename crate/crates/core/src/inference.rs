//! Span selection, triplet decoding and evaluation metrics.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedSentence, EncodedSentence, Vocabulary};
use crate::error::{PasteError, Result};
use crate::model::PasteModel;
use crate::tape::{Graph, Real};
use crate::triplet::{OpinionTriplet, SentenceFlags, SentimentLabel, Span, TripletError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanSelection {
    pub aspect: Span,
    pub opinion: Span,
    /// Product of the four chosen boundary probabilities.
    pub score: f64,
}

/// Highest `start[j] * end[k]` over `j <= k`, skipping spans rejected by
/// `allowed`. Ties keep the smallest `(j, k)`.
#[allow(clippy::needless_range_loop)]
fn best_span(start: &[f64], end: &[f64], allowed: impl Fn(Span) -> bool) -> Option<(Span, f64)> {
    let n = start.len();
    let mut best: Option<(Span, f64)> = None;
    for j in 0..n {
        for k in j..n {
            let span = Span::new(j, k);
            if !allowed(span) {
                continue;
            }
            let p = start[j] * end[k];
            if best.is_none_or(|(_, b)| p > b) {
                best = Some((span, p));
            }
        }
    }
    best
}

/// Picks the first entity, then the best span disjoint from it for the other.
///
/// The first entity may not cover the whole sentence, since the second would
/// then have nowhere to go.
fn phase(first: (&[f64], &[f64]), second: (&[f64], &[f64])) -> (Span, Span, f64) {
    let n = first.0.len();
    let (a, pa) = best_span(first.0, first.1, |s| s.len() < n).expect("n >= 2 leaves a proper span");
    let (b, pb) = best_span(second.0, second.1, |s| !s.overlaps(&a)).expect("a proper span leaves a free token");
    (a, b, pa * pb)
}

/// Two-phase constrained argmax over aspect and opinion spans.
pub fn select_spans(s_ap: &[f64], e_ap: &[f64], s_op: &[f64], e_op: &[f64]) -> Result<SpanSelection> {
    let n = s_ap.len();
    if [e_ap.len(), s_op.len(), e_op.len()].iter().any(|&m| m != n) {
        return Err(PasteError::Shape("pointer distributions differ in length".into()));
    }
    if n < 2 {
        return Err(TripletError::SentenceTooShort(n).into());
    }
    let (a_asp, a_op, a_score) = phase((s_ap, e_ap), (s_op, e_op));
    let (b_op, b_asp, b_score) = phase((s_op, e_op), (s_ap, e_ap));
    Ok(if b_score > a_score {
        SpanSelection {
            aspect: b_asp,
            opinion: b_op,
            score: b_score,
        }
    } else {
        SpanSelection {
            aspect: a_asp,
            opinion: a_op,
            score: a_score,
        }
    })
}

fn widen<F: Real>(v: &[F]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect()
}

/// Greedy triplet decoding until the first NONE or `max_steps`.
pub fn decode_triplets<F: Real>(
    model: &PasteModel<F>,
    sentence: &EncodedSentence,
    max_steps: usize,
) -> Result<Vec<OpinionTriplet>> {
    let net = model.network();
    let mut g = Graph::new(&model.params);
    let encoded = net.encode_sentence(&mut g, sentence, None::<&mut rand_chacha::ChaCha8Rng>)?;
    let mut state = net.initial_state(&mut g, encoded);
    let mut out: Vec<OpinionTriplet> = Vec::new();
    for _ in 0..max_steps {
        let step = net.step(&mut g, &mut state)?.values(&g);
        let sentiment = step.predicted_sentiment();
        if sentiment == SentimentLabel::None {
            break;
        }
        let sel = select_spans(
            &widen(&step.aspect_start),
            &widen(&step.aspect_end),
            &widen(&step.opinion_start),
            &widen(&step.opinion_end),
        )?;
        let t = OpinionTriplet {
            aspect: sel.aspect,
            opinion: sel.opinion,
            sentiment,
        };
        if !out.contains(&t) {
            out.push(t);
        }
    }
    Ok(out)
}

/// Precision, recall and F1 with the counts behind them.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl Prf {
    pub fn from_counts(tp: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let (p, r) = (ratio(tp, predicted), ratio(tp, gold));
        let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        Prf {
            precision: p,
            recall: r,
            f1,
            true_positives: tp,
            predicted,
            gold,
        }
    }
}

fn check_aligned<A, B>(pred: &[A], gold: &[B]) -> Result<()> {
    if pred.len() != gold.len() {
        return Err(PasteError::Shape(format!(
            "{} prediction lists for {} gold sentences",
            pred.len(),
            gold.len()
        )));
    }
    Ok(())
}

fn micro<T: Ord + Copy>(pairs: impl Iterator<Item = (BTreeSet<T>, BTreeSet<T>)>) -> Prf {
    let (mut tp, mut np, mut ng) = (0, 0, 0);
    for (p, g) in pairs {
        tp += p.intersection(&g).count();
        np += p.len();
        ng += g.len();
    }
    Prf::from_counts(tp, np, ng)
}

/// Micro-averaged exact match over full (aspect, opinion, sentiment) tuples.
pub fn score_exact_match(pred: &[Vec<OpinionTriplet>], gold: &[Vec<OpinionTriplet>]) -> Result<Prf> {
    check_aligned(pred, gold)?;
    let set = |v: &Vec<OpinionTriplet>| v.iter().copied().collect::<BTreeSet<_>>();
    Ok(micro(pred.iter().zip(gold).map(|(p, g)| (set(p), set(g)))))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ElementScores {
    pub aspect: Prf,
    pub opinion: Prf,
    /// Share of span-pair-correct predictions whose sentiment is also right.
    pub sentiment_accuracy: f64,
    pub sentiment_correct: usize,
    pub span_pair_matches: usize,
}

pub fn score_elements(pred: &[Vec<OpinionTriplet>], gold: &[Vec<OpinionTriplet>]) -> Result<ElementScores> {
    check_aligned(pred, gold)?;
    let spans = |v: &Vec<OpinionTriplet>, f: fn(&OpinionTriplet) -> Span| v.iter().map(f).collect::<BTreeSet<_>>();
    let aspect = micro(pred.iter().zip(gold).map(|(p, g)| (spans(p, |t| t.aspect), spans(g, |t| t.aspect))));
    let opinion = micro(pred.iter().zip(gold).map(|(p, g)| (spans(p, |t| t.opinion), spans(g, |t| t.opinion))));
    let (mut matched, mut correct) = (0, 0);
    for (p, g) in pred.iter().zip(gold) {
        let unique: BTreeSet<_> = p.iter().copied().collect();
        for t in unique {
            let pair: Vec<_> = g.iter().filter(|x| x.aspect == t.aspect && x.opinion == t.opinion).collect();
            if !pair.is_empty() {
                matched += 1;
                correct += pair.iter().any(|x| x.sentiment == t.sentiment) as usize;
            }
        }
    }
    Ok(ElementScores {
        aspect,
        opinion,
        sentiment_accuracy: if matched == 0 { 0.0 } else { correct as f64 / matched as f64 },
        sentiment_correct: correct,
        span_pair_matches: matched,
    })
}

/// Exact-match scores restricted to each sentence category; `None` when the
/// category has no sentences.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SplitScores {
    pub single: Option<Prf>,
    pub multi: Option<Prf>,
    pub multipol: Option<Prf>,
    pub overlap: Option<Prf>,
}

impl SplitScores {
    pub fn rows(&self) -> [(&'static str, Option<Prf>); 4] {
        [
            ("Single", self.single),
            ("Multi", self.multi),
            ("MultiPol", self.multipol),
            ("Overlap", self.overlap),
        ]
    }
}

pub fn split_scores(
    pred: &[Vec<OpinionTriplet>],
    gold: &[Vec<OpinionTriplet>],
    flags: &[SentenceFlags],
) -> Result<SplitScores> {
    check_aligned(pred, gold)?;
    check_aligned(flags, gold)?;
    let restricted = |keep: fn(&SentenceFlags) -> bool| -> Result<Option<Prf>> {
        let idx: Vec<usize> = (0..flags.len()).filter(|&i| keep(&flags[i])).collect();
        if idx.is_empty() {
            return Ok(None);
        }
        let p: Vec<_> = idx.iter().map(|&i| pred[i].clone()).collect();
        let g: Vec<_> = idx.iter().map(|&i| gold[i].clone()).collect();
        score_exact_match(&p, &g).map(Some)
    };
    Ok(SplitScores {
        single: restricted(|f| f.is_single)?,
        multi: restricted(|f| f.is_multi)?,
        multipol: restricted(|f| f.is_multipol)?,
        overlap: restricted(|f| f.is_overlap)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sentences: usize,
    pub overall: Prf,
    pub splits: SplitScores,
    pub elements: ElementScores,
}

impl EvalReport {
    pub fn compute(pred: &[Vec<OpinionTriplet>], sentences: &[AnnotatedSentence]) -> Result<Self> {
        let gold: Vec<_> = sentences.iter().map(|s| s.gold.clone()).collect();
        let flags: Vec<_> = sentences.iter().map(|s| s.flags).collect();
        Ok(EvalReport {
            sentences: sentences.len(),
            overall: score_exact_match(pred, &gold)?,
            splits: split_scores(pred, &gold, &flags)?,
            elements: score_elements(pred, &gold)?,
        })
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Sentences: {}", self.sentences);
        let _ = writeln!(out, "{:<10} | {:>7} {:>7} {:>7}", "", "P", "R", "F1");
        let _ = writeln!(out, "{}", "-".repeat(36));
        let row = |out: &mut String, name: &str, m: &Prf| {
            let _ = writeln!(out, "{:<10} | {:>7.4} {:>7.4} {:>7.4}", name, m.precision, m.recall, m.f1);
        };
        row(&mut out, "Triplet", &self.overall);
        row(&mut out, "Aspect", &self.elements.aspect);
        row(&mut out, "Opinion", &self.elements.opinion);
        let _ = writeln!(
            out,
            "Sentiment accuracy: {:.4} ({}/{})",
            self.elements.sentiment_accuracy, self.elements.sentiment_correct, self.elements.span_pair_matches
        );
        let _ = writeln!(out, "{:<10} | {:>7}", "Split", "F1");
        for (name, m) in self.splits.rows() {
            match m {
                Some(m) => {
                    let _ = writeln!(out, "{:<10} | {:>7.4}", name, m.f1);
                }
                None => {
                    let _ = writeln!(out, "{:<10} | {:>7}", name, "-");
                }
            }
        }
        out
    }
}

/// Decodes every sentence in parallel; output order follows input order.
pub fn predict_all<F: Real>(
    model: &PasteModel<F>,
    vocab: &Vocabulary,
    sentences: &[AnnotatedSentence],
    max_steps: usize,
) -> Result<Vec<Vec<OpinionTriplet>>> {
    sentences
        .par_iter()
        .map(|s| decode_triplets(model, &vocab.encode(s)?, max_steps))
        .collect()
}

pub fn evaluate<F: Real>(
    model: &PasteModel<F>,
    vocab: &Vocabulary,
    sentences: &[AnnotatedSentence],
    max_steps: usize,
) -> Result<(EvalReport, Vec<Vec<OpinionTriplet>>)> {
    let pred = predict_all(model, vocab, sentences, max_steps)?;
    Ok((EvalReport::compute(&pred, sentences)?, pred))
}
