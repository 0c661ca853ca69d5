use std::fmt::Write as _;
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use super::{AnnotatedSentence, Split};
use crate::triplet::SentimentLabel;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitStatistics {
    pub pos: usize,
    pub neg: usize,
    pub neu: usize,
    pub single: usize,
    pub multi: usize,
    pub multipol: usize,
    pub overlap: usize,
    pub sentences: usize,
}

impl SplitStatistics {
    pub fn of(sentences: &[AnnotatedSentence]) -> Self {
        let mut st = SplitStatistics::default();
        for s in sentences {
            for t in &s.gold {
                match t.sentiment {
                    SentimentLabel::Pos => st.pos += 1,
                    SentimentLabel::Neg => st.neg += 1,
                    SentimentLabel::Neu => st.neu += 1,
                    SentimentLabel::None => {}
                }
            }
            st.single += s.flags.is_single as usize;
            st.multi += s.flags.is_multi as usize;
            st.multipol += s.flags.is_multipol as usize;
            st.overlap += s.flags.is_overlap as usize;
            st.sentences += 1;
        }
        st
    }

    pub fn triplets(&self) -> usize {
        self.pos + self.neg + self.neu
    }
}

impl AddAssign for SplitStatistics {
    fn add_assign(&mut self, o: Self) {
        self.pos += o.pos;
        self.neg += o.neg;
        self.neu += o.neu;
        self.single += o.single;
        self.multi += o.multi;
        self.multipol += o.multipol;
        self.overlap += o.overlap;
        self.sentences += o.sentences;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRow {
    pub split: Split,
    #[serde(flatten)]
    pub stats: SplitStatistics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatisticsReport {
    pub dataset: String,
    pub splits: Vec<SplitRow>,
    pub total: SplitStatistics,
}

pub fn compute_statistics(dataset: &str, parts: &[(Split, &[AnnotatedSentence])]) -> StatisticsReport {
    let mut total = SplitStatistics::default();
    let splits = parts
        .iter()
        .map(|&(split, sentences)| {
            let stats = SplitStatistics::of(sentences);
            total += stats;
            SplitRow { split, stats }
        })
        .collect();
    StatisticsReport {
        dataset: dataset.to_string(),
        splits,
        total,
    }
}

impl StatisticsReport {
    pub fn split(&self, split: Split) -> Option<&SplitStatistics> {
        self.splits.iter().find(|r| r.split == split).map(|r| &r.stats)
    }

    /// Fraction of sentences containing overlapping triplets.
    pub fn overlap_fraction(&self) -> f64 {
        if self.total.sentences == 0 {
            0.0
        } else {
            self.total.overlap as f64 / self.total.sentences as f64
        }
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Dataset: {}", self.dataset);
        let _ = writeln!(
            out,
            "{:<6} | {:>6} {:>6} {:>6} | {:>6} {:>6} {:>8} {:>7} {:>7}",
            "Split", "# Pos.", "# Neg.", "# Neu.", "Single", "Multi", "MultiPol", "Overlap", "# Sent."
        );
        let _ = writeln!(out, "{}", "-".repeat(77));
        let rows = self
            .splits
            .iter()
            .map(|r| (r.split.name().to_string(), r.stats))
            .chain(std::iter::once(("total".to_string(), self.total)));
        for (name, s) in rows {
            let _ = writeln!(
                out,
                "{:<6} | {:>6} {:>6} {:>6} | {:>6} {:>6} {:>8} {:>7} {:>7}",
                name, s.pos, s.neg, s.neu, s.single, s.multi, s.multipol, s.overlap, s.sentences
            );
        }
        let _ = writeln!(out, "Overlap fraction: {:.2}%", 100.0 * self.overlap_fraction());
        out
    }
}
