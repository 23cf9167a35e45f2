//! Replays a hand-checked corpus of assistant replies through the message
//! parser. Every case was verified by eye against the tool-call grammar, so
//! a diff here means the grammar moved, not the fixture.

use serde::Deserialize;
use serde_json::Value;

use dragnet_core::parse_assistant_message;

#[derive(Deserialize)]
struct Case {
    name: String,
    input: String,
    think_text: String,
    tool_calls: Vec<Value>,
    /// Substrings; each must appear in the matching parser error.
    errors: Vec<String>,
    final_answer: Option<String>,
}

const CORPUS: &str = include_str!("fixtures/parser_corpus.jsonl");

#[test]
fn the_hand_checked_reply_corpus_parses_exactly() {
    let mut seen = 0;
    for line in CORPUS.lines().filter(|l| !l.trim().is_empty()) {
        let case: Case = serde_json::from_str(line)
            .unwrap_or_else(|e| panic!("bad fixture line: {e}\n{line}"));
        let p = parse_assistant_message(&case.input);
        assert_eq!(p.think_text, case.think_text, "{}: think_text", case.name);
        let calls: Vec<Value> =
            p.tool_calls.iter().map(|c| serde_json::to_value(c).unwrap()).collect();
        assert_eq!(calls, case.tool_calls, "{}: tool_calls", case.name);
        assert_eq!(
            p.errors.len(),
            case.errors.len(),
            "{}: error count, got {:?}",
            case.name,
            p.errors
        );
        for (got, want) in p.errors.iter().zip(&case.errors) {
            assert!(
                got.contains(want.as_str()),
                "{}: error {got:?} should mention {want:?}",
                case.name
            );
        }
        assert_eq!(p.final_answer, case.final_answer, "{}: final_answer", case.name);
        assert_eq!(
            p.is_action(),
            case.final_answer.is_none(),
            "{}: a reply is an action exactly when it has no final answer",
            case.name
        );
        seen += 1;
    }
    assert_eq!(seen, 30, "the corpus holds thirty cases");
}
