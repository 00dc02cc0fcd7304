//! Analytics for threaded discussion corpora: reply-tree structure,
//! challenge and repair episodes, public correction loops and author-level
//! behavioural shifts, with seeded resampling inference and a synthetic
//! forum generator that doubles as a test oracle.

pub mod authorshift;
pub mod corpus;
pub mod correction;
pub mod episodes;
pub mod error;
pub mod lexicon;
pub mod report;
pub mod seed;
pub mod stats;
pub mod structure;
pub mod synth;

pub use corpus::{Comment, Corpus, Platform, Post};
pub use error::{Error, ErrorKind, Result};
pub use lexicon::{CueCategory, CueDetector, CueLexicon, CueMask, LexiconSet, LexiconVariant};
