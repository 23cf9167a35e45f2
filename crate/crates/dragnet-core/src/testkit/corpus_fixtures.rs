//! Synthetic corpora with fully controlled vocabulary.
//!
//! Every topic speaks its own token family (`t07core`, `t07meta`, ...), so
//! lexical overlap between a query and a chunk is a design decision, never an
//! accident. Chunks are padded to an exact token count, which makes
//! token-budget arithmetic in the tests exact.

use std::ops::RangeInclusive;

use crate::corpus::{
    count_unicode_words, BoundaryMode, ChunkingConfig, CorpusStore, Document, Gazetteer,
    TokenizerConfig,
};

/// Every chunk in the benchmark corpus holds exactly this many tokens.
pub const CHUNK_TOKENS: usize = 80;
pub const TOPIC_COUNT: usize = 20;
pub const PARAS_PER_TOPIC: usize = 10;

/// Topics that carry extra keyword-stuffed review paragraphs, used to study
/// metadata filtering under lexical interference. Four of them leaves the
/// fifth retrieval slot to a year-matching paragraph, which the filter's add
/// stage then grows into full recall.
pub const REVIEW_TOPICS: [usize; 3] = [16, 17, 18];
pub const REVIEW_PARAS: usize = 4;
pub const REVIEW_YEAR: i32 = 2024;
pub const REVIEW_CITY: &str = "reykjavik";

/// Topics whose questions require following one referral into the archive
/// document.
pub const HOP_ONE_TOPICS: RangeInclusive<usize> = 8..=11;
/// Topics whose questions require following two referrals.
pub const HOP_TWO_TOPICS: RangeInclusive<usize> = 12..=15;

pub const ARCHIVE_DOC_ID: &str = "zzarchive";

pub const CITIES: [&str; 20] = [
    "kunming", "beijing", "shanghai", "paris", "london", "tokyo", "berlin", "madrid",
    "rome", "vienna", "oslo", "helsinki", "stockholm", "dublin", "prague", "warsaw",
    "budapest", "athens", "seoul", "osaka",
];

pub fn city_for(topic: usize, para: usize) -> &'static str {
    CITIES[(topic * PARAS_PER_TOPIC + para) % CITIES.len()]
}

pub fn year_for(para: usize) -> i32 {
    2015 + para as i32
}

pub fn topic_doc_id(topic: usize) -> String {
    format!("topic{topic:02}")
}

pub fn topic_chunk_id(topic: usize, para: usize) -> String {
    format!("topic{topic:02}#{para:04}")
}

/// The unique code planted in paragraph `para` of `topic`.
pub fn fact_token(topic: usize, para: usize) -> String {
    format!("zq{topic:02}p{para:02}x")
}

/// First-hop referral token: appears in paragraph 0 of a hop topic and in its
/// archive paragraph, nowhere else.
pub fn referral_token(topic: usize) -> String {
    format!("lnk{topic:02}x")
}

/// Second-hop referral token for two-hop topics.
pub fn handoff_token(topic: usize) -> String {
    format!("lnk{topic:02}y")
}

/// The code held by the archive paragraph of a one-hop topic.
pub fn archive_fact_token(topic: usize) -> String {
    format!("zr{topic:02}x")
}

/// The code held by the deep archive paragraph of a two-hop topic.
pub fn deep_fact_token(topic: usize) -> String {
    format!("zs{topic:02}x")
}

/// Ordinal of the archive paragraph(s). One-hop topics own one paragraph
/// each, then two-hop topics own two each, in topic order.
pub fn archive_chunk_id(topic: usize) -> String {
    assert!(HOP_ONE_TOPICS.contains(&topic));
    let ordinal = topic - HOP_ONE_TOPICS.start();
    format!("{ARCHIVE_DOC_ID}#{ordinal:04}")
}

pub fn deep_archive_chunk_ids(topic: usize) -> (String, String) {
    assert!(HOP_TWO_TOPICS.contains(&topic));
    let base = HOP_ONE_TOPICS.count() + 2 * (topic - HOP_TWO_TOPICS.start());
    (
        format!("{ARCHIVE_DOC_ID}#{base:04}"),
        format!("{}#{:04}", ARCHIVE_DOC_ID, base + 1),
    )
}

/// Appends numbered padding words until the text holds exactly `target`
/// tokens.
fn pad_to(mut text: String, target: usize, prefix: &str) -> String {
    let mut have = count_unicode_words(&text);
    assert!(
        have <= target,
        "fixture paragraph already has {have} tokens, target {target}: {text:?}"
    );
    let mut i = 0;
    while have < target {
        text.push_str(&format!(" {prefix}{i:03}"));
        have += 1;
        i += 1;
    }
    assert_eq!(count_unicode_words(&text), target);
    text
}

fn topic_paragraph(topic: usize, para: usize) -> String {
    let city = city_for(topic, para);
    let year = year_for(para);
    let fact = fact_token(topic, para);
    let mut text = format!(
        "the t{topic:02}core program in {city} started its cycle in {year}. \
         survey code {fact} was filed by the t{topic:02}meta office for the \
         t{topic:02}field ledger."
    );
    if (HOP_ONE_TOPICS.contains(&topic) || HOP_TWO_TOPICS.contains(&topic)) && para == 0 {
        text.push_str(&format!(
            " records continue under referral file {} in the partner archive.",
            referral_token(topic)
        ));
    }
    pad_to(text, CHUNK_TOKENS, &format!("t{topic:02}p{para:02}f"))
}

fn review_paragraph(topic: usize, idx: usize) -> String {
    let stuffing = vec![format!("t{topic:02}meta"); 8].join(" ");
    let text = format!(
        "{stuffing} review compiled in {REVIEW_CITY} during {REVIEW_YEAR}."
    );
    pad_to(text, CHUNK_TOKENS, &format!("t{topic:02}s{idx:02}f"))
}

fn archive_paragraphs() -> Vec<String> {
    let mut paras = Vec::new();
    for topic in HOP_ONE_TOPICS {
        let text = format!(
            "referral file {} holds survey code {} inside the partner ledger arc{topic:02}w.",
            referral_token(topic),
            archive_fact_token(topic)
        );
        paras.push(pad_to(text, CHUNK_TOKENS, &format!("arc{topic:02}a")));
    }
    for topic in HOP_TWO_TOPICS {
        let first = format!(
            "referral file {} continues under handoff file {} in the deep archive arc{topic:02}w.",
            referral_token(topic),
            handoff_token(topic)
        );
        paras.push(pad_to(first, CHUNK_TOKENS, &format!("arc{topic:02}a")));
        let second = format!(
            "handoff file {} holds survey code {} inside the deep ledger arc{topic:02}v.",
            handoff_token(topic),
            deep_fact_token(topic)
        );
        paras.push(pad_to(second, CHUNK_TOKENS, &format!("arc{topic:02}b")));
    }
    paras
}

/// A query about one review topic whose top-5 is crowded by the stuffed
/// review paragraphs, plus the paragraph ids (years 2016 through 2019) that
/// count as golden for it. Only the range endpoints appear as query tokens,
/// so the interior paragraphs are reachable through metadata alone.
pub fn filter_probe(topic: usize) -> (String, Vec<String>) {
    assert!(REVIEW_TOPICS.contains(&topic));
    let query = format!(
        "t{topic:02}meta survey code office cycle filings spanning 2016-2019"
    );
    let golden = (1..=4).map(|p| topic_chunk_id(topic, p)).collect();
    (query, golden)
}

pub fn benchmark_documents() -> Vec<Document> {
    let mut docs = Vec::new();
    for topic in 0..TOPIC_COUNT {
        let mut paras: Vec<String> =
            (0..PARAS_PER_TOPIC).map(|p| topic_paragraph(topic, p)).collect();
        if REVIEW_TOPICS.contains(&topic) {
            paras.extend((0..REVIEW_PARAS).map(|i| review_paragraph(topic, i)));
        }
        docs.push(Document {
            doc_id: topic_doc_id(topic),
            title: format!("program records t{topic:02}"),
            body: paras.join("\n\n"),
            source: None,
        });
    }
    docs.push(Document {
        doc_id: ARCHIVE_DOC_ID.into(),
        title: "partner archive".into(),
        body: archive_paragraphs().join("\n\n"),
        source: None,
    });
    docs
}

pub fn benchmark_chunking() -> ChunkingConfig {
    ChunkingConfig {
        boundary: BoundaryMode::Paragraph,
        target_tokens: 100,
        overlap_tokens: 0,
        expand_year_ranges: true,
    }
}

/// The main fixture corpus: one chunk per paragraph, every chunk exactly
/// `CHUNK_TOKENS` tokens.
pub fn benchmark_corpus() -> CorpusStore {
    CorpusStore::ingest_documents(
        benchmark_documents(),
        &benchmark_chunking(),
        &TokenizerConfig::unicode_words(),
        &Gazetteer::builtin(),
    )
    .expect("fixture corpus ingests")
}

pub const EXHIBIT_DOCS: usize = 10;
pub const EXHIBIT_DOC_TOKENS: usize = 1450;
pub const EXHIBIT_GOLDEN_DOC: usize = 3;
pub const EXHIBIT_FACT: &str = "vtx2023k";
/// Docs 0..4 carry this catalog token, docs 5..9 the other one, so two
/// searches pull the whole corpus into the working set.
pub const EXHIBIT_GROUP_A: &str = "groupalpha";
pub const EXHIBIT_GROUP_B: &str = "groupbeta";

pub fn exhibit_doc_id(n: usize) -> String {
    format!("expo{n:02}")
}

pub fn exhibit_chunk_id(n: usize) -> String {
    format!("expo{n:02}#0000")
}

pub fn exhibit_documents() -> Vec<Document> {
    (0..EXHIBIT_DOCS)
        .map(|n| {
            let group = if n < EXHIBIT_DOCS / 2 { EXHIBIT_GROUP_A } else { EXHIBIT_GROUP_B };
            let mut text = format!(
                "the kunming flower exhibition of 2023 drew record crowds to hall {n}. \
                 catalog section {group} lists the displays."
            );
            if n == EXHIBIT_GOLDEN_DOC {
                text.push_str(&format!(
                    " the organizers filed visitor code {EXHIBIT_FACT} for the closing audit."
                ));
            }
            Document {
                doc_id: exhibit_doc_id(n),
                title: format!("exhibition hall {n}"),
                body: pad_to(text, EXHIBIT_DOC_TOKENS, &format!("e{n:02}f")),
                source: None,
            }
        })
        .collect()
}

/// Ten single-chunk documents totalling 14,500 tokens.
pub fn exhibit_corpus() -> CorpusStore {
    CorpusStore::ingest_documents(
        exhibit_documents(),
        &ChunkingConfig {
            boundary: BoundaryMode::Paragraph,
            target_tokens: 1500,
            overlap_tokens: 0,
            expand_year_ranges: true,
        },
        &TokenizerConfig::unicode_words(),
        &Gazetteer::builtin(),
    )
    .expect("exhibit corpus ingests")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn benchmark_corpus_shape() {
        let corpus = benchmark_corpus();
        let expected = TOPIC_COUNT * PARAS_PER_TOPIC
            + REVIEW_TOPICS.len() * REVIEW_PARAS
            + HOP_ONE_TOPICS.count()
            + 2 * HOP_TWO_TOPICS.count();
        assert_eq!(corpus.chunk_count(), expected);
        assert!(corpus.chunk_count() >= 200);
        for chunk in corpus.chunks() {
            assert_eq!(
                chunk.token_count, CHUNK_TOKENS,
                "chunk {} is not {CHUNK_TOKENS} tokens",
                chunk.chunk_id
            );
        }
    }

    #[test]
    fn fact_tokens_are_unique_to_their_chunk() {
        let corpus = benchmark_corpus();
        for (topic, para) in [(0, 0), (5, 9), (16, 3)] {
            let fact = fact_token(topic, para);
            let holders: Vec<&str> = corpus
                .chunks()
                .iter()
                .filter(|c| c.text.contains(&fact))
                .map(|c| c.chunk_id.as_str())
                .collect();
            assert_eq!(holders, vec![topic_chunk_id(topic, para).as_str()]);
        }
    }

    #[test]
    fn referral_tokens_bridge_exactly_two_chunks() {
        let corpus = benchmark_corpus();
        for topic in HOP_ONE_TOPICS {
            let token = referral_token(topic);
            let holders: BTreeSet<String> = corpus
                .chunks()
                .iter()
                .filter(|c| c.text.contains(&token))
                .map(|c| c.chunk_id.clone())
                .collect();
            assert_eq!(
                holders,
                BTreeSet::from([topic_chunk_id(topic, 0), archive_chunk_id(topic)])
            );
            let archive = corpus.chunk(&archive_chunk_id(topic)).unwrap();
            assert!(archive.text.contains(&archive_fact_token(topic)));
        }
    }

    #[test]
    fn two_hop_chain_is_wired() {
        let corpus = benchmark_corpus();
        for topic in HOP_TWO_TOPICS {
            let (first_id, second_id) = deep_archive_chunk_ids(topic);
            let first = corpus.chunk(&first_id).unwrap();
            let second = corpus.chunk(&second_id).unwrap();
            assert!(first.text.contains(&referral_token(topic)));
            assert!(first.text.contains(&handoff_token(topic)));
            assert!(!first.text.contains(&deep_fact_token(topic)));
            assert!(second.text.contains(&handoff_token(topic)));
            assert!(second.text.contains(&deep_fact_token(topic)));
        }
    }

    #[test]
    fn review_paragraphs_have_disjoint_meta_years() {
        let corpus = benchmark_corpus();
        let review_id = format!("topic16#{:04}", PARAS_PER_TOPIC);
        let review = corpus.chunk(&review_id).unwrap();
        assert_eq!(review.meta.years, BTreeSet::from([REVIEW_YEAR]));
        assert!(review.meta.locations.contains(REVIEW_CITY));
        let regular = corpus.chunk(&topic_chunk_id(16, 2)).unwrap();
        assert_eq!(regular.meta.years, BTreeSet::from([2017]));
    }

    #[test]
    fn exhibit_corpus_shape() {
        let corpus = exhibit_corpus();
        assert_eq!(corpus.chunk_count(), EXHIBIT_DOCS);
        let total: usize = corpus.chunks().iter().map(|c| c.token_count).sum();
        assert_eq!(total, EXHIBIT_DOCS * EXHIBIT_DOC_TOKENS);
        let golden = corpus.chunk(&exhibit_chunk_id(EXHIBIT_GOLDEN_DOC)).unwrap();
        assert!(golden.text.contains(EXHIBIT_FACT));
        let a_count = corpus
            .chunks()
            .iter()
            .filter(|c| c.text.contains(EXHIBIT_GROUP_A))
            .count();
        assert_eq!(a_count, EXHIBIT_DOCS / 2);
    }
}
