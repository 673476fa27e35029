//! Test support for memloop: the synthetic planted-facts corpus, a
//! scripted oracle backend, a recording wrapper, and the fixture-authoring
//! flow that produces the shipped offline corpus. The `gen-fixtures`
//! binary regenerates `fixtures/corpus/` from these pieces.

pub mod author;
pub mod corpus;
pub mod oracle;
pub mod recorder;

pub use author::{author, authoring_config, find_compression_seed, Authored};
pub use corpus::{build_corpus, manifest, verify_geometry, Corpus, CorpusManifest};
pub use oracle::OracleBackend;
pub use recorder::RecordingBackend;
