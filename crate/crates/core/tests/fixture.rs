//! The bundled 30-page fixture under `fixtures/`.

use std::path::PathBuf;

use cagen_core::corpus::{
    build_examples, build_structured_target, corpus_stats, extract_plan, filter_pages, load_pages, load_paragraphs,
    parse_plan,
};
use cagen_core::text::WhitespaceTokenizer;
use cagen_core::Setting;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

// Counted by hand from the fixture files: 24 pages carry headings, 6 are
// lead-only; 52 headings in total; 592 structured and 547 plain tokens.
const PLANLESS: [&str; 6] = [
    "enwiki:Pebble",
    "enwiki:Candle",
    "enwiki:Compass",
    "enwiki:Umbrella",
    "enwiki:Bicycle",
    "enwiki:Snowflake",
];

#[test]
fn structured_targets_round_trip_to_plans() {
    let store = load_paragraphs(&fixture("paragraphs.jsonl")).unwrap();
    let pages = load_pages(&fixture("pages.jsonl")).unwrap();
    assert_eq!(pages.len(), 30);
    assert_eq!(store.len(), 69);
    for page in &pages {
        let target = build_structured_target(page, &store).unwrap();
        assert_eq!(parse_plan(&target), extract_plan(page), "{}", page.query_id);
    }
}

#[test]
fn structured_setting_drops_exactly_the_planless_pages() {
    let pages = load_pages(&fixture("pages.jsonl")).unwrap();
    let kept = filter_pages(&pages, Setting::Structured);
    let dropped: Vec<&str> = pages
        .iter()
        .filter(|p| !kept.iter().any(|k| k.query_id == p.query_id))
        .map(|p| p.query_id.as_str())
        .collect();
    assert_eq!(dropped, PLANLESS);
    assert_eq!(filter_pages(&pages, Setting::Plain).len(), 30);
}

#[test]
fn stats_match_hand_counts() {
    let store = load_paragraphs(&fixture("paragraphs.jsonl")).unwrap();
    let pages = load_pages(&fixture("pages.jsonl")).unwrap();
    let structured = build_examples(&filter_pages(&pages, Setting::Structured), &store).unwrap();
    let s = corpus_stats(&structured, Setting::Structured, &WhitespaceTokenizer);
    assert_eq!(s.answers, 24);
    assert_eq!(s.tokens_per_answer, 592.0 / 24.0);
    assert_eq!(s.headings_per_plan, Some(52.0 / 24.0));

    let plain = build_examples(&filter_pages(&pages, Setting::Plain), &store).unwrap();
    let p = corpus_stats(&plain, Setting::Plain, &WhitespaceTokenizer);
    assert_eq!(p.answers, 30);
    assert_eq!(p.tokens_per_answer, 547.0 / 30.0);
    assert_eq!(p.headings_per_plan, None);
}

#[test]
fn heading_like_paragraph_is_escaped() {
    let store = load_paragraphs(&fixture("paragraphs.jsonl")).unwrap();
    let pages = load_pages(&fixture("pages.jsonl")).unwrap();
    let tea = pages.iter().find(|p| p.query_id == "enwiki:Tea").unwrap();
    let target = build_structured_target(tea, &store).unwrap();
    assert!(target.contains("\n\\## tags are sometimes typed before tea names in notes."));
    assert_eq!(parse_plan(&target).len(), 3);
}
