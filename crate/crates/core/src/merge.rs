//! Merging edits made on reduced code back into the full file.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::diff_lines;
use crate::source::SourceText;
use crate::syntax::LineMapping;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MergeError {
    #[error("line mapping does not match the reduced code: {0}")]
    MappingMismatch(String),
}

/// For every reduced line, the prediction lines that replace it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplacementMapping {
    /// `entries[r - 1]` holds the 1-based prediction lines for reduced line `r`.
    entries: Vec<Vec<u32>>,
}

impl ReplacementMapping {
    pub fn entries(&self) -> &[Vec<u32>] {
        &self.entries
    }

    pub fn get(&self, reduced_line: u32) -> Option<&[u32]> {
        let idx = (reduced_line as usize).checked_sub(1)?;
        self.entries.get(idx).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `(reduced, [prediction lines])` pairs.
    pub fn iter(&self) -> impl Iterator<Item = (u32, &[u32])> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, v)| (i as u32 + 1, v.as_slice()))
    }
}

/// Build the one-to-many replacement mapping from the line diff of `c` → `p`.
///
/// Unchanged lines map to themselves. Inside a hunk, prediction lines go to
/// the hunk's reduced lines in order; surplus prediction lines are absorbed
/// by the hunk's first reduced line, a shortfall leaves the trailing
/// reduced lines empty. A pure insertion attaches to the reduced line just
/// before it, or is prepended to line 1 at the very top.
pub fn compute_replacement_mapping(c: &SourceText, p: &SourceText) -> ReplacementMapping {
    let diff = diff_lines(c.lines(), p.lines());
    let mut entries: Vec<Vec<u32>> = vec![Vec::new(); c.len()];
    for (i, m) in diff.old_to_new.iter().enumerate() {
        if let Some(j) = m {
            entries[i].push(*j);
        }
    }
    if entries.is_empty() {
        return ReplacementMapping { entries };
    }
    for h in &diff.hunks {
        let new_lines: Vec<u32> = h.new.clone().collect();
        let old_lines: Vec<u32> = h.old.clone().collect();
        if old_lines.is_empty() {
            if h.old.start > 1 {
                entries[h.old.start as usize - 2].extend(new_lines);
            } else {
                let first = &mut entries[0];
                let mut merged = new_lines;
                merged.append(first);
                *first = merged;
            }
            continue;
        }
        let surplus = new_lines.len().saturating_sub(old_lines.len());
        let mut it = new_lines.into_iter();
        for (k, &r) in old_lines.iter().enumerate() {
            let take = if k == 0 { surplus + 1 } else { 1 };
            entries[r as usize - 1].extend(it.by_ref().take(take));
        }
    }
    // keep each list ascending (top-of-file insertions may precede line 1's own)
    for e in &mut entries {
        e.sort_unstable();
    }
    ReplacementMapping { entries }
}

/// Rebuild the full file: lines of `original` kept in the reduction are
/// replaced by their prediction lines, all others are copied.
pub fn merge_back(
    original: &SourceText,
    reduced: &SourceText,
    prediction: &SourceText,
    mapping: &LineMapping,
) -> Result<SourceText, MergeError> {
    if mapping.len() != reduced.len() {
        return Err(MergeError::MappingMismatch(format!(
            "mapping has {} lines, reduced code has {}",
            mapping.len(),
            reduced.len()
        )));
    }
    for &(r, o) in mapping.pairs() {
        if reduced.line(r) != original.line(o) {
            return Err(MergeError::MappingMismatch(format!(
                "reduced line {r} differs from original line {o}"
            )));
        }
    }
    let replacement = compute_replacement_mapping(reduced, prediction);
    let mut out: Vec<String> = Vec::with_capacity(original.len());
    for (idx, line) in original.lines().iter().enumerate() {
        match mapping.reduced_of(idx as u32 + 1) {
            Some(r) => {
                for &pl in replacement.get(r).unwrap_or(&[]) {
                    out.push(prediction.lines()[pl as usize - 1].clone());
                }
            }
            None => out.push(line.clone()),
        }
    }
    Ok(SourceText::from_lines_like(out, original))
}
