//! Engine for real-time, keyword-driven note-taking over a live transcript.
//!
//! A transcript stream is segmented into sentences; an LLM extracts context
//! keywords from each sentence, derives related keywords on request, and
//! organizes the user's selected keywords into short candidate sentences.
//! The user records a candidate, or the keywords themselves, as a note.

pub mod driver;
pub mod eventlog;
pub mod llm;
pub mod metrics;
pub mod prompt;
pub mod replay;
pub mod runtime;
pub mod session;
pub mod stemmer;
pub mod store;
pub mod text;
pub mod transcript;
