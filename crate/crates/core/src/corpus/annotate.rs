//! POS/DEP annotation behind an injectable tagger interface.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};

use super::{import_file, AnnotatedSentence, DataFormat};
use crate::error::{PasteError, Result};

/// One POS tag and one incoming dependency-relation label per token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenAnnotations {
    pub pos: Vec<String>,
    pub dep: Vec<String>,
}

/// A tagger over pre-tokenized input. Implementations must not re-tokenize.
pub trait Annotator {
    fn annotate_tokens(&self, tokens: &[String]) -> Result<TokenAnnotations>;

    fn annotate_batch(&self, batch: &[Vec<String>]) -> Result<Vec<TokenAnnotations>> {
        batch.iter().map(|t| self.annotate_tokens(t)).collect()
    }
}

fn check_lengths(n: usize, ann: &TokenAnnotations) -> Result<()> {
    if ann.pos.len() != n || ann.dep.len() != n {
        return Err(PasteError::Annotation(format!(
            "annotator returned {} POS tags and {} DEP labels for {n} tokens",
            ann.pos.len(),
            ann.dep.len()
        )));
    }
    Ok(())
}

pub fn annotate<A: Annotator + ?Sized>(sentence: &AnnotatedSentence, annotator: &A) -> Result<AnnotatedSentence> {
    let ann = annotator.annotate_tokens(&sentence.tokens)?;
    check_lengths(sentence.len(), &ann)?;
    Ok(AnnotatedSentence {
        pos_tags: Some(ann.pos),
        dep_labels: Some(ann.dep),
        ..sentence.clone()
    })
}

/// Annotates the sentences that still lack tags; tagged ones pass through.
pub fn annotate_all<A: Annotator + ?Sized>(
    sentences: Vec<AnnotatedSentence>,
    annotator: &A,
) -> Result<Vec<AnnotatedSentence>> {
    let pending: Vec<Vec<String>> = sentences
        .iter()
        .filter(|s| !s.is_annotated())
        .map(|s| s.tokens.clone())
        .collect();
    if pending.is_empty() {
        return Ok(sentences);
    }
    let mut results = annotator.annotate_batch(&pending)?.into_iter();
    let mut out = Vec::with_capacity(sentences.len());
    for s in sentences {
        if s.is_annotated() {
            out.push(s);
            continue;
        }
        let ann = results
            .next()
            .ok_or_else(|| PasteError::Annotation("annotator returned too few results".into()))?;
        check_lengths(s.len(), &ann)?;
        out.push(AnnotatedSentence {
            pos_tags: Some(ann.pos),
            dep_labels: Some(ann.dep),
            ..s
        });
    }
    Ok(out)
}

/// Replays frozen annotations keyed by the exact token sequence.
#[derive(Debug, Clone, Default)]
pub struct FixtureAnnotator {
    table: HashMap<Vec<String>, TokenAnnotations>,
}

impl FixtureAnnotator {
    pub fn from_sentences(sentences: &[AnnotatedSentence]) -> Self {
        let table = sentences
            .iter()
            .filter_map(|s| {
                Some((
                    s.tokens.clone(),
                    TokenAnnotations {
                        pos: s.pos_tags.clone()?,
                        dep: s.dep_labels.clone()?,
                    },
                ))
            })
            .collect();
        FixtureAnnotator { table }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Ok(Self::from_sentences(&import_file(path, DataFormat::Canonical)?))
    }

    pub fn insert(&mut self, tokens: Vec<String>, ann: TokenAnnotations) {
        self.table.insert(tokens, ann);
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl Annotator for FixtureAnnotator {
    fn annotate_tokens(&self, tokens: &[String]) -> Result<TokenAnnotations> {
        self.table
            .get(tokens)
            .cloned()
            .ok_or_else(|| PasteError::Annotation(format!("no frozen annotation for '{}'", tokens.join(" "))))
    }
}

/// Runs an external tagger process.
///
/// The process reads `{"tokens": [...]}` lines on stdin and answers each with
/// one `{"pos": [...], "dep": [...]}` line on stdout.
#[derive(Debug, Clone)]
pub struct CommandAnnotator {
    program: String,
    args: Vec<String>,
}

#[derive(Serialize)]
struct TaggerRequest<'a> {
    tokens: &'a [String],
}

impl CommandAnnotator {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        CommandAnnotator {
            program: program.into(),
            args,
        }
    }

    /// Splits a shell-style command line on whitespace.
    pub fn from_command_line(cmd: &str) -> Result<Self> {
        let mut parts = cmd.split_whitespace().map(str::to_string);
        let program = parts
            .next()
            .ok_or_else(|| PasteError::Config("empty annotator command".into()))?;
        Ok(Self::new(program, parts.collect()))
    }
}

impl Annotator for CommandAnnotator {
    fn annotate_tokens(&self, tokens: &[String]) -> Result<TokenAnnotations> {
        let mut out = self.annotate_batch(&[tokens.to_vec()])?;
        out.pop()
            .ok_or_else(|| PasteError::Annotation("tagger produced no output".into()))
    }

    fn annotate_batch(&self, batch: &[Vec<String>]) -> Result<Vec<TokenAnnotations>> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| PasteError::Annotation(format!("cannot start '{}': {e}", self.program)))?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let mut payload = Vec::new();
        for tokens in batch {
            serde_json::to_writer(&mut payload, &TaggerRequest { tokens })?;
            payload.push(b'\n');
        }
        let writer = std::thread::spawn(move || -> std::io::Result<()> {
            stdin.write_all(&payload)?;
            stdin.flush()
        });
        let stdout = child.stdout.take().expect("piped stdout");
        let mut results = Vec::with_capacity(batch.len());
        for line in BufReader::new(stdout).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            results.push(serde_json::from_str::<TokenAnnotations>(&line)?);
        }
        writer
            .join()
            .map_err(|_| PasteError::Annotation("writer thread panicked".into()))??;
        let status = child.wait()?;
        if !status.success() {
            return Err(PasteError::Annotation(format!("tagger exited with {status}")));
        }
        if results.len() != batch.len() {
            return Err(PasteError::Annotation(format!(
                "tagger answered {} of {} sentences",
                results.len(),
                batch.len()
            )));
        }
        for (tokens, ann) in batch.iter().zip(&results) {
            check_lengths(tokens.len(), ann)?;
        }
        Ok(results)
    }
}
