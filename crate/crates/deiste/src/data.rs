//! Sentence-pair examples and TSV ingestion.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};
use crate::text::tokenize;

/// A tokenized premise/hypothesis pair with a binary label:
/// 1 = entails, 0 = neutral. Raw texts are kept for reporting.
#[derive(Debug, Clone)]
pub struct PairExample {
    pub premise: Vec<String>,
    pub hypothesis: Vec<String>,
    pub label: u8,
    pub premise_text: String,
    pub hypothesis_text: String,
}

impl PairExample {
    pub fn new(premise_text: &str, hypothesis_text: &str, label: u8) -> Result<Self> {
        let premise = tokenize(premise_text);
        let hypothesis = tokenize(hypothesis_text);
        if premise.is_empty() || hypothesis.is_empty() {
            return Err(Error::degenerate("empty premise or hypothesis"));
        }
        if label > 1 {
            return Err(Error::contract(format!("label must be 0 or 1, got {label}")));
        }
        Ok(PairExample {
            premise,
            hypothesis,
            label,
            premise_text: premise_text.to_string(),
            hypothesis_text: hypothesis_text.to_string(),
        })
    }
}

/// A line that lenient loading skipped, with its 1-based number and reason.
#[derive(Debug, Clone)]
pub struct SkippedLine {
    pub line: usize,
    pub reason: String,
}

/// Result of loading a labelled TSV.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub examples: Vec<PairExample>,
    pub skipped: Vec<SkippedLine>,
}

fn parse_label(token: &str) -> Option<u8> {
    match token.trim() {
        "entails" | "1" => Some(1),
        "neutral" | "0" => Some(0),
        _ => None,
    }
}

/// Load `premise<TAB>hypothesis<TAB>label` lines. Labels may be spelled
/// `entails`/`neutral` or `1`/`0`. In strict mode the first malformed line
/// aborts with its line number; otherwise malformed lines are skipped and
/// reported in the result.
pub fn load_tsv(path: &Path, strict: bool) -> Result<LoadedData> {
    let reader = BufReader::new(File::open(path)?);
    let mut examples = Vec::new();
    let mut skipped = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_labelled_line(&line) {
            Ok(example) => examples.push(example),
            Err(reason) => {
                if strict {
                    return Err(Error::format(path, lineno, reason));
                }
                skipped.push(SkippedLine {
                    line: lineno,
                    reason,
                });
            }
        }
    }
    Ok(LoadedData { examples, skipped })
}

fn parse_labelled_line(line: &str) -> std::result::Result<PairExample, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 3 {
        return Err(format!("expected 3 tab-separated fields, got {}", fields.len()));
    }
    let label =
        parse_label(fields[2]).ok_or_else(|| format!("unknown label {:?}", fields[2]))?;
    PairExample::new(fields[0], fields[1], label).map_err(|e| e.to_string())
}

/// Load `premise<TAB>hypothesis` lines for prediction. Every line must be
/// well-formed; there is no lenient mode because output lines must stay
/// aligned with input lines.
pub fn load_tsv_unlabelled(path: &Path) -> Result<Vec<(String, String)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut pairs = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::format(
                path,
                idx + 1,
                format!("expected 2 tab-separated fields, got {}", fields.len()),
            ));
        }
        pairs.push((fields[0].to_string(), fields[1].to_string()));
    }
    Ok(pairs)
}
