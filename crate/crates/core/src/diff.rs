//! Exact-line LCS diff.
//!
//! Common prefix and suffix are trimmed, then a quadratic LCS table decides
//! the middle. Ties prefer deleting old lines before inserting new ones, so
//! a replaced block comes out as one hunk with its deletions first.

use std::collections::HashMap;
use std::ops::Range;

/// A maximal run of changed lines. Ranges are 1-based and half-open; an
/// empty `old` range at `p` means the new lines are inserted before old
/// line `p`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hunk {
    pub old: Range<u32>,
    pub new: Range<u32>,
}

impl Hunk {
    pub fn is_pure_insertion(&self) -> bool {
        self.old.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineDiff {
    pub hunks: Vec<Hunk>,
    /// For old line `i` (index `i - 1`), the new line it is kept as.
    pub old_to_new: Vec<Option<u32>>,
    /// For new line `j` (index `j - 1`), the old line it came from.
    pub new_to_old: Vec<Option<u32>>,
}

impl LineDiff {
    pub fn is_unchanged(&self) -> bool {
        self.hunks.is_empty()
    }

    /// Where old line `line` ended up, if it survived unchanged.
    pub fn track(&self, line: u32) -> Option<u32> {
        let idx = (line as usize).checked_sub(1)?;
        self.old_to_new.get(idx).copied().flatten()
    }

    /// The hunk that deleted or replaced old line `line`.
    pub fn hunk_of(&self, line: u32) -> Option<&Hunk> {
        self.hunks.iter().find(|h| h.old.contains(&line))
    }

    /// Number of matched lines.
    pub fn lcs_len(&self) -> usize {
        self.old_to_new.iter().filter(|m| m.is_some()).count()
    }
}

pub fn diff_lines<S: AsRef<str>>(old: &[S], new: &[S]) -> LineDiff {
    // intern lines so the table compares integers
    let mut ids: HashMap<&str, u32> = HashMap::new();
    let mut a = Vec::with_capacity(old.len());
    for s in old {
        let next = ids.len() as u32;
        a.push(*ids.entry(s.as_ref()).or_insert(next));
    }
    let mut b = Vec::with_capacity(new.len());
    for s in new {
        let next = ids.len() as u32;
        b.push(*ids.entry(s.as_ref()).or_insert(next));
    }

    let prefix = a.iter().zip(&b).take_while(|(x, y)| x == y).count();
    let suffix = a[prefix..]
        .iter()
        .rev()
        .zip(b[prefix..].iter().rev())
        .take_while(|(x, y)| x == y)
        .count();
    let am = &a[prefix..a.len() - suffix];
    let bm = &b[prefix..b.len() - suffix];

    let mut old_to_new = vec![None; a.len()];
    let mut new_to_old = vec![None; b.len()];
    for i in 0..prefix {
        old_to_new[i] = Some(i as u32 + 1);
        new_to_old[i] = Some(i as u32 + 1);
    }
    for k in 0..suffix {
        let (i, j) = (a.len() - 1 - k, b.len() - 1 - k);
        old_to_new[i] = Some(j as u32 + 1);
        new_to_old[j] = Some(i as u32 + 1);
    }

    // suffix LCS lengths over the middle
    let (n, m) = (am.len(), bm.len());
    let width = m + 1;
    let mut table = vec![0u32; (n + 1) * width];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            table[i * width + j] = if am[i] == bm[j] {
                table[(i + 1) * width + j + 1] + 1
            } else {
                table[(i + 1) * width + j].max(table[i * width + j + 1])
            };
        }
    }
    let (mut i, mut j) = (0, 0);
    while i < n && j < m {
        if am[i] == bm[j] {
            old_to_new[prefix + i] = Some((prefix + j) as u32 + 1);
            new_to_old[prefix + j] = Some((prefix + i) as u32 + 1);
            i += 1;
            j += 1;
        } else if table[(i + 1) * width + j] >= table[i * width + j + 1] {
            i += 1;
        } else {
            j += 1;
        }
    }

    let hunks = hunks_from(&old_to_new, &new_to_old);
    LineDiff {
        hunks,
        old_to_new,
        new_to_old,
    }
}

fn hunks_from(old_to_new: &[Option<u32>], new_to_old: &[Option<u32>]) -> Vec<Hunk> {
    let mut hunks = Vec::new();
    let (mut i, mut j) = (0usize, 0usize);
    let (n, m) = (old_to_new.len(), new_to_old.len());
    while i < n || j < m {
        if i < n && j < m && old_to_new[i] == Some(j as u32 + 1) {
            i += 1;
            j += 1;
            continue;
        }
        let (oi, nj) = (i, j);
        while i < n && old_to_new[i].is_none() {
            i += 1;
        }
        while j < m && new_to_old[j].is_none() {
            j += 1;
        }
        hunks.push(Hunk {
            old: oi as u32 + 1..i as u32 + 1,
            new: nj as u32 + 1..j as u32 + 1,
        });
    }
    hunks
}

/// Apply a subset of the hunks of `diff` (by index) to `old`.
pub fn apply_hunks<S: AsRef<str>>(old: &[S], new: &[S], diff: &LineDiff, keep: &[usize]) -> Vec<String> {
    let mut out = Vec::with_capacity(old.len());
    let mut cursor = 1u32;
    for (idx, h) in diff.hunks.iter().enumerate() {
        while cursor < h.old.start {
            out.push(old[cursor as usize - 1].as_ref().to_owned());
            cursor += 1;
        }
        if keep.contains(&idx) {
            out.extend(h.new.clone().map(|l| new[l as usize - 1].as_ref().to_owned()));
        } else {
            out.extend(h.old.clone().map(|l| old[l as usize - 1].as_ref().to_owned()));
        }
        cursor = h.old.end;
    }
    while (cursor as usize) <= old.len() {
        out.push(old[cursor as usize - 1].as_ref().to_owned());
        cursor += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_owned).collect()
    }

    /// Plain quadratic LCS length.
    fn lcs_oracle(a: &[String], b: &[String]) -> usize {
        let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                t[i][j] = if a[i - 1] == b[j - 1] {
                    t[i - 1][j - 1] + 1
                } else {
                    t[i - 1][j].max(t[i][j - 1])
                };
            }
        }
        t[a.len()][b.len()]
    }

    #[test]
    fn replacement_and_insertion_hunks() {
        let d = diff_lines(&v("e bp app dis use"), &v("e h bp app u1 u2 use"));
        assert_eq!(
            d.hunks,
            vec![
                Hunk { old: 2..2, new: 2..3 },
                Hunk { old: 4..5, new: 5..7 }
            ]
        );
        assert_eq!(d.track(5), Some(7));
        assert_eq!(d.track(4), None);
    }

    #[test]
    fn identical_inputs_have_no_hunks() {
        let d = diff_lines(&v("a b c"), &v("a b c"));
        assert!(d.is_unchanged());
        assert_eq!(d.track(2), Some(2));
    }

    #[test]
    fn empty_sides() {
        let d = diff_lines(&v(""), &v("a b"));
        assert_eq!(d.hunks, vec![Hunk { old: 1..1, new: 1..3 }]);
        let d = diff_lines(&v("a b"), &v(""));
        assert_eq!(d.hunks, vec![Hunk { old: 1..3, new: 1..1 }]);
    }

    proptest! {
        #[test]
        fn lcs_is_optimal_and_apply_all_reconstructs(
            a in prop::collection::vec("[a-d]", 0..25),
            b in prop::collection::vec("[a-d]", 0..25),
        ) {
            let d = diff_lines(&a, &b);
            prop_assert_eq!(d.lcs_len(), lcs_oracle(&a, &b));
            let all: Vec<usize> = (0..d.hunks.len()).collect();
            prop_assert_eq!(apply_hunks(&a, &b, &d, &all), b.clone());
            prop_assert_eq!(apply_hunks(&a, &b, &d, &[]), a.clone());
            // matches are strictly increasing on both sides
            let pairs: Vec<(usize, u32)> = d.old_to_new.iter().enumerate()
                .filter_map(|(i, m)| m.map(|j| (i, j))).collect();
            prop_assert!(pairs.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1));
        }

        #[test]
        fn distinct_lines_match_oracle_hunks(perm in Just((0..12).collect::<Vec<u32>>()).prop_shuffle(), drop in 0usize..12) {
            // distinct lines make the LCS unique
            let a: Vec<String> = (0..12).map(|i| format!("l{i}")).collect();
            let mut b: Vec<String> = perm.iter().take(12 - drop).map(|i| format!("l{i}")).collect();
            b.sort_by_key(|s| s[1..].parse::<u32>().unwrap());
            let d = diff_lines(&a, &b);
            for (i, line) in a.iter().enumerate() {
                let expect = b.iter().position(|x| x == line).map(|j| j as u32 + 1);
                prop_assert_eq!(d.track(i as u32 + 1), expect);
            }
        }
    }
}
