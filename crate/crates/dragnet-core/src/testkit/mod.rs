//! Deterministic fixtures for tests and benches.

pub mod corpus_fixtures;
pub mod question_fixtures;
