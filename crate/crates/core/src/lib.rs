pub mod dataset;
pub mod diff;
pub mod eval;
pub mod merge;
pub mod oracle;
pub mod promptkit;
pub mod reduce;
pub mod source;
pub mod syntax;

pub use source::SourceText;
