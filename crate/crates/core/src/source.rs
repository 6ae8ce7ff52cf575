//! Line-indexed source text.
//!
//! All text is held with LF line endings. The original convention (CRLF and
//! whether the file ended with a newline) is remembered so that merged output
//! can be re-emitted byte-for-byte.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Immutable, cheaply clonable source text split into 1-based lines.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct SourceText {
    lines: Arc<[String]>,
    trailing_newline: bool,
    crlf: bool,
}

impl SourceText {
    /// Ingest raw text, normalizing CRLF to LF.
    pub fn new(raw: &str) -> Self {
        let crlf = raw.contains("\r\n");
        let normalized = if crlf {
            raw.replace("\r\n", "\n")
        } else {
            raw.to_owned()
        };
        let trailing_newline = normalized.ends_with('\n');
        let body = normalized.strip_suffix('\n').unwrap_or(&normalized);
        let lines: Vec<String> = if normalized.is_empty() {
            Vec::new()
        } else {
            body.split('\n').map(str::to_owned).collect()
        };
        Self {
            lines: lines.into(),
            trailing_newline,
            crlf,
        }
    }

    /// Build from already split lines, inheriting the newline convention of `like`.
    pub fn from_lines_like<I, S>(lines: I, like: &SourceText) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let lines: Vec<String> = lines.into_iter().map(Into::into).collect();
        let trailing_newline = like.trailing_newline && !lines.is_empty();
        Self {
            lines: lines.into(),
            trailing_newline,
            crlf: like.crlf,
        }
    }

    /// Build from lines with LF endings and a trailing newline.
    pub fn from_lines<I, S>(lines: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let lines: Vec<String> = lines.into_iter().map(Into::into).collect();
        let trailing_newline = !lines.is_empty();
        Self {
            lines: lines.into(),
            trailing_newline,
            crlf: false,
        }
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    /// 1-based line accessor.
    pub fn line(&self, number: u32) -> Option<&str> {
        let idx = (number as usize).checked_sub(1)?;
        self.lines.get(idx).map(String::as_str)
    }

    pub fn has_trailing_newline(&self) -> bool {
        self.trailing_newline
    }

    pub fn is_crlf(&self) -> bool {
        self.crlf
    }

    /// LF-normalized text.
    pub fn text(&self) -> String {
        let mut out = self.lines.join("\n");
        if self.trailing_newline {
            out.push('\n');
        }
        out
    }

    /// Text in the original newline convention.
    pub fn to_original_bytes(&self) -> String {
        let text = self.text();
        if self.crlf {
            text.replace('\n', "\r\n")
        } else {
            text
        }
    }
}

impl fmt::Debug for SourceText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SourceText")
            .field("lines", &self.lines.len())
            .field("trailing_newline", &self.trailing_newline)
            .field("crlf", &self.crlf)
            .finish()
    }
}

impl fmt::Display for SourceText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text())
    }
}

impl From<&str> for SourceText {
    fn from(raw: &str) -> Self {
        SourceText::new(raw)
    }
}

impl From<String> for SourceText {
    fn from(raw: String) -> Self {
        SourceText::new(&raw)
    }
}

impl Serialize for SourceText {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_original_bytes())
    }
}

impl<'de> Deserialize<'de> for SourceText {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        Ok(SourceText::new(&raw))
    }
}
