//! Run-level evaluation: per-query answer and plan scores, corpus means,
//! plan statistics, and table rendering.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{parse_plan, serialize_plan, AnswerExample, Plan, Setting};
use crate::metrics::embed::{embed_f1, Embedder};
use crate::metrics::lexical::{meteor, rouge_l};
use crate::text::Tokenize;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("prediction for query {0:?} has no gold answer")]
    MissingGold(String),
    #[error("duplicate prediction for query {0:?}")]
    DuplicatePrediction(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// Mean heading length, plan size and heading depth.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlanStats {
    pub tokens_per_heading: f64,
    pub headings_per_plan: f64,
    pub mean_depth: f64,
}

/// Heading-level means pool every heading of every plan; empty plans add
/// nothing to them but still count in `headings_per_plan`.
pub fn plan_stats(plans: &[Plan], tokenizer: &dyn Tokenize) -> PlanStats {
    let headings: Vec<_> = plans.iter().flat_map(|p| p.headings.iter()).collect();
    if headings.is_empty() {
        return PlanStats::default();
    }
    let n = headings.len() as f64;
    PlanStats {
        tokens_per_heading: headings.iter().map(|h| tokenizer.count(h.text()) as f64).sum::<f64>() / n,
        headings_per_plan: n / plans.len() as f64,
        mean_depth: headings.iter().map(|h| h.level() as f64).sum::<f64>() / n,
    }
}

/// One line of an inference-output JSONL file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Prediction {
    pub query_id: String,
    #[serde(default)]
    pub intermediate_plan: String,
    pub answer: String,
    #[serde(default)]
    pub final_plan: String,
}

pub fn write_predictions(path: &Path, preds: &[Prediction]) -> std::io::Result<()> {
    let mut out = String::new();
    for p in preds {
        out.push_str(&serde_json::to_string(p).map_err(std::io::Error::other)?);
        out.push('\n');
    }
    std::fs::write(path, out)
}

pub fn load_predictions(path: &Path) -> Result<Vec<Prediction>, MetricsError> {
    let io = |message: String| MetricsError::Io {
        path: path.display().to_string(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| io(format!("line {}: {e}", i + 1))))
        .collect()
}

/// Scores of one text against its reference.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TextScores {
    pub tokens: f64,
    pub rouge_p: f64,
    pub rouge_r: f64,
    pub rouge_f: f64,
    pub embed_f1: f64,
    pub meteor: f64,
}

impl TextScores {
    fn mean(items: &[TextScores]) -> Self {
        if items.is_empty() {
            return Self::default();
        }
        let n = items.len() as f64;
        let avg = |f: fn(&TextScores) -> f64| items.iter().map(f).sum::<f64>() / n;
        Self {
            tokens: avg(|s| s.tokens),
            rouge_p: avg(|s| s.rouge_p),
            rouge_r: avg(|s| s.rouge_r),
            rouge_f: avg(|s| s.rouge_f),
            embed_f1: avg(|s| s.embed_f1),
            meteor: avg(|s| s.meteor),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query_id: String,
    pub answer: TextScores,
    pub intermediate_plan: TextScores,
    pub final_plan: TextScores,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PlanBlock {
    pub stats: PlanStats,
    pub scores: TextScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub setting: Setting,
    pub queries: usize,
    pub answer: TextScores,
    /// Bootstrap midpoint of the ROUGE-L F mean, when requested.
    pub rouge_f_bootstrap_mid: Option<f64>,
    /// Always `None`: QA-based evaluation is not computed.
    pub questeval: Option<f64>,
    pub has_intermediate_plans: bool,
    pub intermediate_plan: PlanBlock,
    pub final_plan: PlanBlock,
    pub per_query: Vec<QueryMetrics>,
}

pub struct Evaluator<'a> {
    /// Overlap tokenizer for ROUGE, METEOR and embedding F1.
    pub overlap: &'a dyn Tokenize,
    /// Counting tokenizer for `#tokens` and plan statistics.
    pub counter: &'a dyn Tokenize,
    pub embedder: &'a dyn Embedder,
    /// `(resamples, seed)` for the bootstrap midpoint.
    pub bootstrap: Option<(usize, u64)>,
}

impl Evaluator<'_> {
    pub fn score(&self, candidate: &str, reference: &str) -> TextScores {
        let rouge = rouge_l(candidate, reference, self.overlap);
        TextScores {
            tokens: self.counter.count(candidate) as f64,
            rouge_p: rouge.p,
            rouge_r: rouge.r,
            rouge_f: rouge.f,
            embed_f1: embed_f1(candidate, reference, self.overlap, self.embedder).f,
            meteor: meteor(candidate, reference, self.overlap),
        }
    }

    /// Every gold query is scored; a query without prediction is scored as
    /// an empty answer with empty plans.
    pub fn evaluate_run(
        &self,
        label: &str,
        predictions: &[Prediction],
        golds: &[AnswerExample],
        setting: Setting,
    ) -> Result<MetricsReport, MetricsError> {
        let gold_ids: HashSet<&str> = golds.iter().map(|g| g.query_id.as_str()).collect();
        let mut by_id: HashMap<&str, &Prediction> = HashMap::new();
        for p in predictions {
            if !gold_ids.contains(p.query_id.as_str()) {
                return Err(MetricsError::MissingGold(p.query_id.clone()));
            }
            if by_id.insert(p.query_id.as_str(), p).is_some() {
                return Err(MetricsError::DuplicatePrediction(p.query_id.clone()));
            }
        }
        let empty = Prediction::default();
        let rows: Vec<(QueryMetrics, Plan, Plan)> = golds
            .par_iter()
            .map(|g| {
                let pred = by_id.get(g.query_id.as_str()).copied().unwrap_or(&empty);
                let gold_plan = serialize_plan(&g.plan);
                let ip = parse_plan(&pred.intermediate_plan);
                let fp = parse_plan(&pred.final_plan);
                let metrics = QueryMetrics {
                    query_id: g.query_id.clone(),
                    answer: self.score(&pred.answer, g.target(setting)),
                    intermediate_plan: self.score(&serialize_plan(&ip), &gold_plan),
                    final_plan: self.score(&serialize_plan(&fp), &gold_plan),
                };
                (metrics, ip, fp)
            })
            .collect();

        let per_query: Vec<QueryMetrics> = rows.iter().map(|r| r.0.clone()).collect();
        let ips: Vec<Plan> = rows.iter().map(|r| r.1.clone()).collect();
        let fps: Vec<Plan> = rows.iter().map(|r| r.2.clone()).collect();
        let collect = |f: fn(&QueryMetrics) -> TextScores| per_query.iter().map(f).collect::<Vec<_>>();

        let rouge_f: Vec<f64> = per_query.iter().map(|q| q.answer.rouge_f).collect();
        Ok(MetricsReport {
            label: label.to_owned(),
            setting,
            queries: per_query.len(),
            answer: TextScores::mean(&collect(|q| q.answer)),
            rouge_f_bootstrap_mid: self.bootstrap.map(|(n, seed)| bootstrap_mid(&rouge_f, n, seed)),
            questeval: None,
            has_intermediate_plans: ips.iter().any(|p| !p.is_empty()),
            intermediate_plan: PlanBlock {
                stats: plan_stats(&ips, self.counter),
                scores: TextScores::mean(&collect(|q| q.intermediate_plan)),
            },
            final_plan: PlanBlock {
                stats: plan_stats(&fps, self.counter),
                scores: TextScores::mean(&collect(|q| q.final_plan)),
            },
            per_query,
        })
    }
}

/// Median of `resamples` bootstrap means of `values`.
pub fn bootstrap_mid(values: &[f64], resamples: usize, seed: u64) -> f64 {
    if values.is_empty() || resamples == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = values.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    if resamples % 2 == 1 {
        means[resamples / 2]
    } else {
        (means[resamples / 2 - 1] + means[resamples / 2]) / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Markdown,
    Tsv,
}

impl std::str::FromStr for TableFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "markdown" | "md" => Ok(Self::Markdown),
            "tsv" => Ok(Self::Tsv),
            other => Err(format!("unknown format {other:?} (expected markdown|tsv)")),
        }
    }
}

fn render(format: TableFormat, header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    match format {
        TableFormat::Markdown => {
            let _ = writeln!(out, "| {} |", header.join(" | "));
            let _ = writeln!(out, "|{}|", header.iter().map(|_| "---").collect::<Vec<_>>().join("|"));
            for r in rows {
                let _ = writeln!(out, "| {} |", r.join(" | "));
            }
        }
        TableFormat::Tsv => {
            let _ = writeln!(out, "{}", header.join("\t"));
            for r in rows {
                let _ = writeln!(out, "{}", r.join("\t"));
            }
        }
    }
    out
}

fn num(x: f64) -> String {
    format!("{x:.2}")
}

/// Answer-effectiveness table: one row per report.
pub fn answer_table(reports: &[MetricsReport], format: TableFormat) -> String {
    let header = [
        "Model", "Setting", "# tokens", "Rouge-P", "Rouge-R", "Rouge-F", "BERTScore", "QuestEval",
    ];
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                r.label.clone(),
                r.setting.to_string(),
                num(r.answer.tokens),
                num(r.answer.rouge_p),
                num(r.answer.rouge_r),
                num(r.answer.rouge_f),
                num(r.answer.embed_f1),
                r.questeval.map(num).unwrap_or_else(|| "-".into()),
            ]
        })
        .collect();
    render(format, &header, &rows)
}

/// Plan-analysis table: intermediate (IP) and final (FP) plan rows.
pub fn plan_table(reports: &[MetricsReport], format: TableFormat) -> String {
    let header = [
        "Model", "Plan", "#tokens", "#heading", "depth", "Rouge-P", "Rouge-R", "Rouge-F", "BERTScore", "Meteor",
    ];
    let row = |label: &str, kind: &str, b: &PlanBlock| {
        vec![
            label.to_owned(),
            kind.to_owned(),
            num(b.stats.tokens_per_heading),
            num(b.stats.headings_per_plan),
            num(b.stats.mean_depth),
            num(b.scores.rouge_p),
            num(b.scores.rouge_r),
            num(b.scores.rouge_f),
            num(b.scores.embed_f1),
            num(b.scores.meteor),
        ]
    };
    let mut rows = Vec::new();
    for r in reports {
        if r.has_intermediate_plans {
            rows.push(row(&r.label, "IP", &r.intermediate_plan));
        }
        rows.push(row(&r.label, "FP", &r.final_plan));
    }
    render(format, &header, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Heading;
    use crate::metrics::embed::HashEmbedder;
    use crate::text::{WhitespaceTokenizer, WordTokenizer};

    fn h(level: u32, t: &str) -> Heading {
        Heading::new(level, t).unwrap()
    }

    #[test]
    fn plan_stats_hand_count() {
        let s = plan_stats(&[Plan::new(vec![h(1, "A"), h(2, "B C")])], &WhitespaceTokenizer);
        assert_eq!(s.tokens_per_heading, 1.5);
        assert_eq!(s.headings_per_plan, 2.0);
        assert_eq!(s.mean_depth, 1.5);
        let empty = plan_stats(&[Plan::default(), Plan::default()], &WhitespaceTokenizer);
        assert_eq!(empty.headings_per_plan, 0.0);
        // empty plans dilute headings_per_plan only
        let mixed = plan_stats(&[Plan::new(vec![h(1, "A B")]), Plan::default()], &WhitespaceTokenizer);
        assert_eq!(mixed.headings_per_plan, 0.5);
        assert_eq!(mixed.tokens_per_heading, 2.0);
    }

    fn gold(id: &str, structured: &str) -> AnswerExample {
        AnswerExample {
            query_id: id.into(),
            query_text: id.into(),
            plan: parse_plan(structured),
            structured_target: structured.into(),
            plain_target: structured.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n"),
        }
    }

    fn evaluator(embedder: &HashEmbedder) -> Evaluator<'_> {
        Evaluator {
            overlap: &WordTokenizer,
            counter: &WhitespaceTokenizer,
            embedder,
            bootstrap: None,
        }
    }

    #[test]
    fn identity_run_scores_full() {
        let golds = vec![gold("q1", "# A\nx y z."), gold("q2", "# B\n## C\nu v.")];
        let preds: Vec<Prediction> = golds
            .iter()
            .map(|g| Prediction {
                query_id: g.query_id.clone(),
                intermediate_plan: serialize_plan(&g.plan),
                answer: g.structured_target.clone(),
                final_plan: serialize_plan(&g.plan),
            })
            .collect();
        let e = HashEmbedder::default();
        let r = evaluator(&e).evaluate_run("gold", &preds, &golds, Setting::Structured).unwrap();
        for s in [r.answer, r.intermediate_plan.scores, r.final_plan.scores] {
            assert_eq!((s.rouge_p, s.rouge_r, s.rouge_f), (100.0, 100.0, 100.0));
            assert!((s.embed_f1 - 100.0).abs() < 1e-9);
        }
        assert_eq!(r.questeval, None);
    }

    #[test]
    fn unknown_prediction_is_an_error() {
        let golds = vec![gold("q1", "# A\nx.")];
        let preds = vec![Prediction {
            query_id: "zz".into(),
            ..Default::default()
        }];
        let e = HashEmbedder::default();
        assert!(matches!(
            evaluator(&e).evaluate_run("m", &preds, &golds, Setting::Plain),
            Err(MetricsError::MissingGold(id)) if id == "zz"
        ));
    }

    #[test]
    fn missing_prediction_scores_empty() {
        let golds = vec![gold("q1", "# A\nx.")];
        let e = HashEmbedder::default();
        let r = evaluator(&e).evaluate_run("m", &[], &golds, Setting::Plain).unwrap();
        assert_eq!(r.answer, TextScores::default());
    }

    #[test]
    fn bootstrap_mid_of_constant() {
        assert_eq!(bootstrap_mid(&[3.0, 3.0, 3.0], 1000, 7), 3.0);
        let v = [1.0, 2.0, 3.0, 4.0];
        let mid = bootstrap_mid(&v, 1000, 7);
        assert!((mid - 2.5).abs() < 0.3, "{mid}");
        assert_eq!(mid, bootstrap_mid(&v, 1000, 7));
    }

    #[test]
    fn table_shape() {
        let golds = vec![gold("q1", "# A\nx.")];
        let e = HashEmbedder::default();
        let r = evaluator(&e).evaluate_run("T5", &[], &golds, Setting::Structured).unwrap();
        let md = answer_table(std::slice::from_ref(&r), TableFormat::Markdown);
        assert!(md.starts_with("| Model | Setting | # tokens | Rouge-P | Rouge-R | Rouge-F | BERTScore | QuestEval |"));
        assert!(md.contains("| T5 | structured | 0.00 |"));
        let tsv = plan_table(&[r], TableFormat::Tsv);
        assert_eq!(tsv.lines().count(), 2);
    }
}
