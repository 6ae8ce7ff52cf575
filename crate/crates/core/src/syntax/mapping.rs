use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::source::SourceText;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MappingError {
    #[error("mapping is not strictly increasing at pair {index} ({reduced}, {original})")]
    NotIncreasing {
        index: usize,
        reduced: u32,
        original: u32,
    },
    #[error("mapping must number reduced lines 1..n, pair {index} has reduced line {reduced}")]
    Gap { index: usize, reduced: u32 },
}

/// Map from reduced-code lines to original-file lines, both 1-based.
///
/// Reduced lines are dense (`1..=len`) and both coordinates are strictly
/// increasing.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct LineMapping {
    pairs: Vec<(u32, u32)>,
}

impl LineMapping {
    pub fn identity(lines: usize) -> Self {
        Self {
            pairs: (1..=lines as u32).map(|l| (l, l)).collect(),
        }
    }

    /// Map reduced line `i` to `originals[i - 1]`.
    pub fn from_originals(originals: Vec<u32>) -> Result<Self, MappingError> {
        Self::from_pairs(
            originals
                .into_iter()
                .enumerate()
                .map(|(i, o)| (i as u32 + 1, o))
                .collect(),
        )
    }

    pub fn from_pairs(pairs: Vec<(u32, u32)>) -> Result<Self, MappingError> {
        for (index, &(reduced, original)) in pairs.iter().enumerate() {
            if reduced != index as u32 + 1 {
                return Err(MappingError::Gap { index, reduced });
            }
            if original == 0 || (index > 0 && original <= pairs[index - 1].1) {
                return Err(MappingError::NotIncreasing {
                    index,
                    reduced,
                    original,
                });
            }
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[(u32, u32)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn original_of(&self, reduced: u32) -> Option<u32> {
        let idx = (reduced as usize).checked_sub(1)?;
        self.pairs.get(idx).map(|p| p.1)
    }

    pub fn reduced_of(&self, original: u32) -> Option<u32> {
        self.pairs
            .binary_search_by_key(&original, |p| p.1)
            .ok()
            .map(|i| self.pairs[i].0)
    }

    /// Original lines in reduced order.
    pub fn originals(&self) -> impl Iterator<Item = u32> + '_ {
        self.pairs.iter().map(|p| p.1)
    }

    /// Keep only the given reduced lines (ascending) and renumber them.
    pub fn restrict(&self, kept: &[u32]) -> Self {
        let originals = kept
            .iter()
            .filter_map(|&r| self.original_of(r))
            .collect::<Vec<_>>();
        Self::from_originals(originals).expect("restriction of a valid mapping is valid")
    }

    /// `self` maps c→b and `inner` maps b→a; the result maps c→a.
    pub fn compose(&self, inner: &LineMapping) -> Option<Self> {
        let originals = self
            .pairs
            .iter()
            .map(|&(_, mid)| inner.original_of(mid))
            .collect::<Option<Vec<_>>>()?;
        Self::from_originals(originals).ok()
    }

    /// Does every reduced line equal the original line it maps to?
    pub fn is_sound(&self, reduced: &SourceText, original: &SourceText) -> bool {
        self.pairs.len() == reduced.len()
            && self
                .pairs
                .iter()
                .all(|&(r, o)| reduced.line(r).is_some() && reduced.line(r) == original.line(o))
    }
}

impl Serialize for LineMapping {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.pairs.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for LineMapping {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let pairs = Vec::<(u32, u32)>::deserialize(deserializer)?;
        LineMapping::from_pairs(pairs).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_monotone() {
        assert!(LineMapping::from_pairs(vec![(1, 3), (2, 3)]).is_err());
        assert!(LineMapping::from_pairs(vec![(1, 3), (3, 4)]).is_err());
        assert!(LineMapping::from_pairs(vec![(1, 0)]).is_err());
    }

    #[test]
    fn restrict_and_compose() {
        let m = LineMapping::from_originals(vec![1, 3, 7, 8]).unwrap();
        assert_eq!(m.reduced_of(7), Some(3));
        assert_eq!(m.reduced_of(2), None);
        let r = m.restrict(&[1, 3]);
        assert_eq!(r.pairs(), &[(1, 1), (2, 7)]);
        let outer = LineMapping::from_originals(vec![2, 4]).unwrap();
        assert_eq!(outer.compose(&m).unwrap().pairs(), &[(1, 3), (2, 8)]);
    }

    #[test]
    fn json_shape() {
        let m = LineMapping::from_originals(vec![2, 5]).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, "[[1,2],[2,5]]");
        assert_eq!(serde_json::from_str::<LineMapping>(&s).unwrap(), m);
        assert!(serde_json::from_str::<LineMapping>("[[1,5],[2,5]]").is_err());
    }
}
