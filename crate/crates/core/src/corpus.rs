//! Corpus ingestion and answer-target construction.
//!
//! Input is two JSONL files:
//!
//! * `paragraphs.jsonl`: `{"para_id": str, "text": str}` per line.
//! * `pages.jsonl`: `{"query_id": str, "query_text": str, "sections":
//!   [{"level": int, "heading": str | null, "para_ids": [str]}]}` per line.
//!   A section whose `heading` is `null` (or absent) holds lead paragraphs
//!   that sit above the first heading; it contributes no plan line.
//!
//! Output is `examples.jsonl`, one [`AnswerExample`] per line, whose `plan`
//! field carries the serialized plan.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::text::{self, Tokenize};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate para_id {para_id:?}")]
    DuplicateParagraph { para_id: String, line: usize },
    #[error("query {query_id:?}: unresolvable para_id {para_id:?}")]
    UnresolvedParagraph { para_id: String, query_id: String },
    #[error("invalid heading: {0}")]
    InvalidHeading(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Paragraph {
    pub para_id: String,
    pub text: String,
}

/// All paragraphs of the collection, in file order, addressable by id.
#[derive(Debug, Clone, Default)]
pub struct ParagraphStore {
    paragraphs: Vec<Paragraph>,
    by_id: HashMap<String, usize>,
}

impl ParagraphStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a paragraph, normalizing its whitespace. Fails on a repeated
    /// id or on text without any token.
    pub fn insert(&mut self, para_id: impl Into<String>, text: &str) -> Result<(), String> {
        let para_id = para_id.into();
        if self.by_id.contains_key(&para_id) {
            return Err(format!("duplicate para_id {para_id:?}"));
        }
        let text = text::normalize_whitespace(text);
        if text.is_empty() {
            return Err(format!("paragraph {para_id:?} has empty text"));
        }
        self.by_id.insert(para_id.clone(), self.paragraphs.len());
        self.paragraphs.push(Paragraph { para_id, text });
        Ok(())
    }

    pub fn get(&self, para_id: &str) -> Option<&Paragraph> {
        self.by_id.get(para_id).map(|&i| &self.paragraphs[i])
    }

    pub fn len(&self) -> usize {
        self.paragraphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paragraphs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Paragraph> {
        self.paragraphs.iter()
    }
}

fn open_lines(path: &Path) -> Result<impl Iterator<Item = (usize, std::io::Result<String>)>, CorpusError> {
    let file = fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(BufReader::new(file).lines().enumerate().map(|(i, l)| (i + 1, l)))
}

/// Reads `paragraphs.jsonl`. Blank lines are skipped.
pub fn load_paragraphs(path: &Path) -> Result<ParagraphStore, CorpusError> {
    let mut store = ParagraphStore::new();
    for (line_no, line) in open_lines(path)? {
        let line = line.map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let para: Paragraph = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        if store.get(&para.para_id).is_some() {
            return Err(CorpusError::DuplicateParagraph {
                para_id: para.para_id,
                line: line_no,
            });
        }
        store
            .insert(para.para_id, &para.text)
            .map_err(|message| CorpusError::Malformed { line: line_no, message })?;
    }
    Ok(store)
}

/// One line of a plan: a heading at some depth (1 = top level).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Heading {
    level: u32,
    text: String,
}

impl Heading {
    /// Whitespace in `text` is collapsed; the result must be non-empty.
    pub fn new(level: u32, text: &str) -> Result<Self, CorpusError> {
        if level < 1 {
            return Err(CorpusError::InvalidHeading(format!("level {level} < 1 for {text:?}")));
        }
        let text = text::normalize_whitespace(text);
        if text.is_empty() {
            return Err(CorpusError::InvalidHeading("empty heading text".into()));
        }
        Ok(Self { level, text })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn to_line(&self) -> String {
        text::heading_line(self.level, &self.text)
    }
}

/// Ordered heading list describing the structure of an answer.
#[derive(Debug, Clone, PartialEq, Eq, Default, Hash)]
pub struct Plan {
    pub headings: Vec<Heading>,
}

impl Plan {
    pub fn new(headings: Vec<Heading>) -> Self {
        Self { headings }
    }

    pub fn len(&self) -> usize {
        self.headings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.headings.is_empty()
    }
}

/// One heading line per heading, `#`×level + space + text, newline joined.
pub fn serialize_plan(plan: &Plan) -> String {
    plan.headings.iter().map(Heading::to_line).collect::<Vec<_>>().join("\n")
}

/// Extracts every heading line from `text`, in order, skipping all other
/// lines. Total: arbitrary input yields a (possibly empty) plan.
pub fn parse_plan(text: &str) -> Plan {
    let headings = text
        .lines()
        .filter_map(text::parse_heading_line)
        .filter_map(|(level, t)| Heading::new(level, t).ok())
        .collect();
    Plan { headings }
}

impl Serialize for Plan {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&serialize_plan(self))
    }
}

impl<'de> Deserialize<'de> for Plan {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Ok(parse_plan(&s))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Section {
    /// `None` for lead content above the first heading.
    pub heading: Option<Heading>,
    pub para_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnswerPage {
    pub query_id: String,
    pub query_text: String,
    pub sections: Vec<Section>,
}

impl AnswerPage {
    pub fn paragraph_count(&self) -> usize {
        self.sections.iter().map(|s| s.para_ids.len()).sum()
    }
}

#[derive(Deserialize)]
struct RawSection {
    #[serde(default)]
    level: u32,
    #[serde(default)]
    heading: Option<String>,
    #[serde(default)]
    para_ids: Vec<String>,
}

#[derive(Deserialize)]
struct RawPage {
    query_id: String,
    query_text: String,
    #[serde(default)]
    sections: Vec<RawSection>,
}

fn page_from_raw(raw: RawPage) -> Result<AnswerPage, CorpusError> {
    let sections = raw
        .sections
        .into_iter()
        .map(|s| {
            let heading = s.heading.map(|h| Heading::new(s.level, &h)).transpose()?;
            Ok(Section {
                heading,
                para_ids: s.para_ids,
            })
        })
        .collect::<Result<_, CorpusError>>()?;
    Ok(AnswerPage {
        query_id: raw.query_id,
        query_text: text::normalize_whitespace(&raw.query_text),
        sections,
    })
}

/// Reads `pages.jsonl`. Blank lines are skipped.
pub fn load_pages(path: &Path) -> Result<Vec<AnswerPage>, CorpusError> {
    let mut pages = Vec::new();
    for (line_no, line) in open_lines(path)? {
        let line = line.map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawPage = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        let page = page_from_raw(raw).map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        pages.push(page);
    }
    Ok(pages)
}

pub fn extract_plan(page: &AnswerPage) -> Plan {
    Plan {
        headings: page.sections.iter().filter_map(|s| s.heading.clone()).collect(),
    }
}

/// Paragraph line for a target. A line that would itself parse as a
/// heading is escaped with a leading backslash.
fn paragraph_line(text: &str) -> String {
    let sentence = text::first_sentence(text);
    if text::parse_heading_line(sentence).is_some() {
        format!("\\{sentence}")
    } else {
        sentence.to_owned()
    }
}

fn build_target(page: &AnswerPage, store: &ParagraphStore, with_headings: bool) -> Result<String, CorpusError> {
    let mut lines = Vec::new();
    for section in &page.sections {
        if with_headings {
            if let Some(h) = &section.heading {
                lines.push(h.to_line());
            }
        }
        for pid in &section.para_ids {
            let para = store.get(pid).ok_or_else(|| CorpusError::UnresolvedParagraph {
                para_id: pid.clone(),
                query_id: page.query_id.clone(),
            })?;
            lines.push(paragraph_line(&para.text));
        }
    }
    Ok(lines.join("\n"))
}

/// Heading lines interleaved with the first sentence of each paragraph.
pub fn build_structured_target(page: &AnswerPage, store: &ParagraphStore) -> Result<String, CorpusError> {
    build_target(page, store, true)
}

/// Paragraph first-sentences only.
pub fn build_plain_target(page: &AnswerPage, store: &ParagraphStore) -> Result<String, CorpusError> {
    build_target(page, store, false)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    #[default]
    Structured,
    Plain,
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setting::Structured => "structured",
            Setting::Plain => "plain",
        })
    }
}

impl FromStr for Setting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "structured" => Ok(Setting::Structured),
            "plain" => Ok(Setting::Plain),
            other => Err(format!("unknown setting {other:?} (expected structured|plain)")),
        }
    }
}

/// Structured: drop pages without any plan heading. Plain: drop pages
/// without any paragraph.
pub fn filter_pages(pages: &[AnswerPage], setting: Setting) -> Vec<AnswerPage> {
    pages
        .iter()
        .filter(|p| match setting {
            Setting::Structured => !extract_plan(p).is_empty(),
            Setting::Plain => p.paragraph_count() > 0,
        })
        .cloned()
        .collect()
}

/// Sorts by `query_id` and keeps the first ⌈N/2⌉ pages.
pub fn half_fold(pages: &[AnswerPage]) -> Vec<AnswerPage> {
    let mut sorted = pages.to_vec();
    sorted.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    sorted.truncate(pages.len().div_ceil(2));
    sorted
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerExample {
    pub query_id: String,
    pub query_text: String,
    pub plan: Plan,
    pub structured_target: String,
    pub plain_target: String,
}

impl AnswerExample {
    pub fn target(&self, setting: Setting) -> &str {
        match setting {
            Setting::Structured => &self.structured_target,
            Setting::Plain => &self.plain_target,
        }
    }
}

pub fn build_example(page: &AnswerPage, store: &ParagraphStore) -> Result<AnswerExample, CorpusError> {
    Ok(AnswerExample {
        query_id: page.query_id.clone(),
        query_text: page.query_text.clone(),
        plan: extract_plan(page),
        structured_target: build_structured_target(page, store)?,
        plain_target: build_plain_target(page, store)?,
    })
}

pub fn build_examples(pages: &[AnswerPage], store: &ParagraphStore) -> Result<Vec<AnswerExample>, CorpusError> {
    pages.iter().map(|p| build_example(p, store)).collect()
}

pub fn write_examples(path: &Path, examples: &[AnswerExample]) -> std::io::Result<()> {
    let mut out = String::new();
    for ex in examples {
        out.push_str(&serde_json::to_string(ex).map_err(std::io::Error::other)?);
        out.push('\n');
    }
    fs::write(path, out)
}

pub fn load_examples(path: &Path) -> Result<Vec<AnswerExample>, CorpusError> {
    let mut out = Vec::new();
    for (line_no, line) in open_lines(path)? {
        let line = line.map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Dataset statistics in the shape of a corpus-description table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRecord {
    pub setting: Setting,
    pub answers: usize,
    pub tokens_per_answer: f64,
    /// Only reported for the structured setting.
    pub headings_per_plan: Option<f64>,
}

/// Token counts are taken over the setting's target text; in the structured
/// setting heading lines (markers included) are counted.
pub fn corpus_stats(examples: &[AnswerExample], setting: Setting, tokenizer: &dyn Tokenize) -> StatsRecord {
    let n = examples.len();
    let mean = |total: usize| if n == 0 { 0.0 } else { total as f64 / n as f64 };
    let tokens: usize = examples.iter().map(|e| tokenizer.count(e.target(setting))).sum();
    let headings = match setting {
        Setting::Structured => Some(mean(examples.iter().map(|e| e.plan.len()).sum())),
        Setting::Plain => None,
    };
    StatsRecord {
        setting,
        answers: n,
        tokens_per_answer: mean(tokens),
        headings_per_plan: headings,
    }
}
