//! Role prompts, shipped as versioned resource files and compiled in.
//! Chat fixtures are keyed by a digest over these texts, so editing a
//! prompt invalidates its recorded fixtures loudly.

/// Initial whole-session fact extraction.
pub const EXTRACT: &str = include_str!("../prompts/extract.txt");

/// Targeted re-extraction over uncovered turns.
pub const SUPPLEMENT: &str = include_str!("../prompts/supplement.txt");

/// Probing-question generation for one memory entry.
pub const QUESTION: &str = include_str!("../prompts/question.txt");

/// Evidence judge: does the dialogue answer the probing question?
pub const JUDGE: &str = include_str!("../prompts/judge.txt");

/// Memory-grounded question answering.
pub const ANSWER: &str = include_str!("../prompts/answer.txt");

/// Gold-fact vs extracted-entry matcher (LLM matcher mode).
pub const ENTAILMENT: &str = include_str!("../prompts/entailment.txt");

/// Answer correctness judge (LLM QA-judge mode).
pub const QA_JUDGE: &str = include_str!("../prompts/qa_judge.txt");
