use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{CorpusError, Result};

/// Default subword continuation marker: `un@@ believ@@ able`.
pub const DEFAULT_MARKER: &str = "@@";

/// One aligned sentence pair, tokenized on whitespace. Tokens may carry a
/// subword continuation marker; the pre-segmentation words are recovered
/// from it by [`words`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SentencePair {
    pub src: Vec<String>,
    pub tgt: Vec<String>,
}

/// Collapses runs of blanks and tabs into single blanks and trims the ends.
pub fn normalize_whitespace(line: &str) -> String {
    line.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_owned).collect()
}

/// Groups subword tokens into the words they were split from. A token ending
/// in `marker` continues into the next one.
pub fn words<'a>(tokens: &'a [String], marker: &str) -> Vec<&'a [String]> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, t) in tokens.iter().enumerate() {
        if !t.ends_with(marker) || marker.is_empty() {
            out.push(&tokens[start..=i]);
            start = i + 1;
        }
    }
    if start < tokens.len() {
        // dangling continuation at sentence end still forms a word
        out.push(&tokens[start..]);
    }
    out
}

impl SentencePair {
    pub fn new(src: Vec<String>, tgt: Vec<String>) -> Self {
        Self { src, tgt }
    }

    pub fn from_lines(src: &str, tgt: &str) -> Self {
        Self {
            src: tokenize(src),
            tgt: tokenize(tgt),
        }
    }

    pub fn src_line(&self) -> String {
        self.src.join(" ")
    }

    pub fn tgt_line(&self) -> String {
        self.tgt.join(" ")
    }

    pub fn is_complete(&self) -> bool {
        !self.src.is_empty() && !self.tgt.is_empty()
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    BufReader::new(File::open(path)?)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(Into::into)
}

/// Reads two line-aligned UTF-8 files.
pub fn read_parallel(src: &Path, tgt: &Path) -> Result<Vec<SentencePair>> {
    let s = read_lines(src)?;
    let t = read_lines(tgt)?;
    if s.len() != t.len() {
        return Err(CorpusError::Format(format!(
            "{} has {} lines but {} has {}",
            src.display(),
            s.len(),
            tgt.display(),
            t.len()
        )));
    }
    Ok(s.iter().zip(&t).map(|(a, b)| SentencePair::from_lines(a, b)).collect())
}

pub fn write_parallel(pairs: &[SentencePair], src: &Path, tgt: &Path) -> Result<()> {
    let mut s = BufWriter::new(File::create(src)?);
    let mut t = BufWriter::new(File::create(tgt)?);
    for p in pairs {
        writeln!(s, "{}", p.src_line())?;
        writeln!(t, "{}", p.tgt_line())?;
    }
    s.flush()?;
    t.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn whitespace_normalization() {
        assert_eq!(normalize_whitespace("the\t\tcat"), "the cat");
        assert_eq!(normalize_whitespace("  a  \t b "), "a b");
        assert_eq!(SentencePair::from_lines("the\t\tcat", "x").src_line(), "the cat");
    }

    #[test]
    fn word_grouping() {
        let t = tokenize("the un@@ believ@@ able cat");
        let w = words(&t, "@@");
        assert_eq!(w.len(), 3);
        assert_eq!(w[1].len(), 3);
        let dangling = tokenize("a b@@");
        assert_eq!(words(&dangling, "@@").len(), 2);
    }
}
