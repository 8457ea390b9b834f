//! Intermediary publication mode: carriers' digests as a plain sorted list.
//!
//! Anyone holding the file can hash every cell of a region and test it for
//! membership, see [`crate::sim::flatfile_attack_demo`].

use std::collections::BTreeSet;

use thiserror::Error;

use crate::crypto::HashedInterval;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("flat file line {line}: {message}")]
pub struct FlatfileError {
    pub line: usize,
    pub message: String,
}

/// One lowercase hex digest per line, sorted, each line newline-terminated.
pub fn export<'a, I>(digests: I) -> String
where
    I: IntoIterator<Item = &'a HashedInterval>,
{
    let sorted: BTreeSet<String> = digests.into_iter().map(|d| d.to_hex()).collect();
    let mut out = String::with_capacity(sorted.len() * 65);
    for line in sorted {
        out.push_str(&line);
        out.push('\n');
    }
    out
}

pub fn parse(text: &str) -> Result<BTreeSet<HashedInterval>, FlatfileError> {
    let mut out = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let d = HashedInterval::from_hex(line).map_err(|e| FlatfileError {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.insert(d);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::sha256;

    #[test]
    fn empty_export() {
        assert_eq!(export(&[]), "");
        assert!(parse("").unwrap().is_empty());
    }

    #[test]
    fn sorted_lines_and_round_trip() {
        let ds: Vec<HashedInterval> = (0u32..50)
            .map(|i| HashedInterval::from_bytes(sha256(&i.to_le_bytes())))
            .collect();
        let text = export(&ds);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 50);
        assert!(lines.windows(2).all(|w| w[0] < w[1]));
        assert!(lines
            .iter()
            .all(|l| l.len() == 64 && l.chars().all(|c| !c.is_ascii_uppercase())));
        let back = parse(&text).unwrap();
        assert_eq!(back, ds.into_iter().collect());
    }

    #[test]
    fn bad_line_reports_position() {
        let err = parse(&format!("{}\nzz\n", "a".repeat(64))).unwrap_err();
        assert_eq!(err.line, 2);
    }
}
