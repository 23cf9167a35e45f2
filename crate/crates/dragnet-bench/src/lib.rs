//! Placeholder library target; the benches carry the real content.
