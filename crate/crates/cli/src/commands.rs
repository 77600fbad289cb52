use std::fmt::Display;
use std::path::{Path, PathBuf};

use cagen_core::baselines::{ext_answer, EmbedScorer};
use cagen_core::corpus::{
    build_examples, corpus_stats, filter_pages, half_fold, load_examples, load_pages, load_paragraphs, parse_plan,
    serialize_plan, write_examples,
};
use cagen_core::metrics::{
    answer_table, load_predictions, plan_table, write_predictions, Evaluator, HashEmbedder, MetricsReport, Prediction,
};
use cagen_core::text::{WhitespaceTokenizer, WordTokenizer};
use cagen_core::{AnswerExample, Bm25Params, InvertedIndex, ParagraphStore, Setting};
use cagen_pipeline::triplet::retrieve_docs;
use cagen_pipeline::{make_triplets, train, Pipeline, PipelineError, Regime, RunConfig};
use serde::Serialize;
use serde_json::json;

use crate::manifest::{manifest_path, ManifestWriter};
use crate::{Command, TableKind};

pub const EXAMPLES_FILE: &str = "examples.jsonl";
pub const STATS_FILE: &str = "stats.json";
pub const INDEX_FILE: &str = "index.json";
pub const PARAGRAPHS_FILE: &str = "paragraphs.jsonl";
pub const HISTORY_FILE: &str = "history.json";
pub const RUN_TAG: &str = "bm25";

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or unreadable, malformed inputs. Exit code 2.
    Validation(String),
    /// Failure after inputs were accepted. Exit code 3.
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    /// Single line, whatever the underlying error looked like.
    pub fn message(&self) -> String {
        let (CliError::Validation(m) | CliError::Runtime(m)) = self;
        m.split_whitespace().collect::<Vec<_>>().join(" ")
    }
}

fn invalid(e: impl Display) -> CliError {
    CliError::Validation(e.to_string())
}

fn runtime(e: impl Display) -> CliError {
    CliError::Runtime(format!("{e:#}"))
}

fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(invalid(format!("{}: no such file", path.display())))
    }
}

fn require_dir(path: &Path) -> Result<(), CliError> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(invalid(format!("{}: no such directory", path.display())))
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(value).map_err(runtime)?;
    std::fs::write(path, json + "\n").map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

/// Runs `body` between a `running` manifest and its finalized form.
fn with_manifest(
    path: PathBuf,
    command: &str,
    config: serde_json::Value,
    inputs: &[&Path],
    seed: Option<serde_json::Value>,
    body: impl FnOnce() -> Result<Vec<PathBuf>, CliError>,
) -> Result<(), CliError> {
    let writer = ManifestWriter::start(path, command, config, inputs, seed).map_err(runtime)?;
    match body() {
        Ok(outputs) => writer.finish(outputs, None).map_err(runtime),
        Err(e) => {
            writer.finish(Vec::new(), Some(e.message())).map_err(runtime)?;
            Err(e)
        }
    }
}

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Ingest {
            paragraphs,
            pages,
            setting,
            half_fold0,
            require_plan,
            out,
        } => ingest(&paragraphs, &pages, setting, half_fold0, require_plan, &out),
        Command::Index { paragraphs, out } => index(&paragraphs, &out),
        Command::Retrieve {
            index,
            examples,
            k,
            out,
        } => retrieve(&index, &examples, k, &out),
        Command::Train { config, regime, out } => train_cmd(&config, regime, &out),
        Command::Generate {
            model,
            regime,
            examples,
            index,
            out,
        } => generate(&model, regime, &examples, &index, &out),
        Command::Ext {
            examples,
            index,
            k,
            setting,
            out,
        } => ext(&examples, &index, k, setting, &out),
        Command::Evaluate {
            pred,
            gold,
            setting,
            label,
            bootstrap,
            out,
        } => evaluate(&pred, &gold, setting, label, bootstrap, &out),
        Command::Report {
            metrics,
            format,
            table,
            out,
        } => report(&metrics, format, table, out.as_deref()),
    }
}

#[derive(Serialize)]
struct IngestSummary {
    pages_total: usize,
    pages_kept: usize,
    half_fold0: bool,
    require_plan: bool,
    stats: cagen_core::StatsRecord,
}

fn ingest(
    paragraphs: &Path,
    pages: &Path,
    setting: Setting,
    half: bool,
    require_plan: bool,
    out: &Path,
) -> Result<(), CliError> {
    require_file(paragraphs)?;
    require_file(pages)?;
    let config = json!({"paragraphs": paragraphs, "pages": pages, "setting": setting, "half_fold0": half,
        "require_plan": require_plan, "out": out});
    create_dir(out)?;
    with_manifest(manifest_path(out, true), "ingest", config, &[paragraphs, pages], None, || {
        let store = load_paragraphs(paragraphs).map_err(invalid)?;
        let all = load_pages(pages).map_err(invalid)?;
        let mut kept = filter_pages(&all, setting);
        if require_plan {
            kept = filter_pages(&kept, Setting::Structured);
        }
        if half {
            kept = half_fold(&kept);
        }
        let examples = build_examples(&kept, &store).map_err(invalid)?;
        let stats = corpus_stats(&examples, setting, &WhitespaceTokenizer);
        log::info!("ingest: kept {} of {} pages ({setting})", kept.len(), all.len());
        let ex_path = out.join(EXAMPLES_FILE);
        write_examples(&ex_path, &examples).map_err(|e| runtime(format!("{}: {e}", ex_path.display())))?;
        let stats_path = out.join(STATS_FILE);
        let summary = IngestSummary {
            pages_total: all.len(),
            pages_kept: kept.len(),
            half_fold0: half,
            require_plan,
            stats,
        };
        write_json(&stats_path, &summary)?;
        Ok(vec![ex_path, stats_path])
    })
}

fn index(paragraphs: &Path, out: &Path) -> Result<(), CliError> {
    require_file(paragraphs)?;
    create_dir(out)?;
    let config = json!({"paragraphs": paragraphs, "out": out, "bm25": Bm25Params::default()});
    with_manifest(manifest_path(out, true), "index", config, &[paragraphs], None, || {
        let store = load_paragraphs(paragraphs).map_err(invalid)?;
        let idx = InvertedIndex::build(&store, Bm25Params::default()).map_err(invalid)?;
        log::info!("index: {} paragraphs, avgdl {:.2}", idx.doc_count(), idx.avgdl());
        let idx_path = out.join(INDEX_FILE);
        let json = serde_json::to_string(&idx).map_err(runtime)?;
        std::fs::write(&idx_path, json).map_err(|e| runtime(format!("{}: {e}", idx_path.display())))?;
        let para_path = out.join(PARAGRAPHS_FILE);
        let mut lines = String::new();
        for p in store.iter() {
            lines.push_str(&serde_json::to_string(p).map_err(runtime)?);
            lines.push('\n');
        }
        std::fs::write(&para_path, lines).map_err(|e| runtime(format!("{}: {e}", para_path.display())))?;
        Ok(vec![idx_path, para_path])
    })
}

/// Index and paragraph store written by `index`.
pub fn load_index(dir: &Path) -> Result<(InvertedIndex, ParagraphStore), CliError> {
    let idx_path = dir.join(INDEX_FILE);
    let text = std::fs::read_to_string(&idx_path).map_err(|e| invalid(format!("{}: {e}", idx_path.display())))?;
    let idx: InvertedIndex = serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", idx_path.display())))?;
    let store = load_paragraphs(&dir.join(PARAGRAPHS_FILE)).map_err(invalid)?;
    Ok((idx, store))
}

fn examples_from(path: &Path) -> Result<Vec<AnswerExample>, CliError> {
    load_examples(path).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn retrieve(index_dir: &Path, examples: &Path, k: usize, out: &Path) -> Result<(), CliError> {
    require_dir(index_dir)?;
    require_file(examples)?;
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    let config = json!({"index": index_dir, "examples": examples, "k": k, "out": out});
    with_manifest(manifest_path(out, false), "retrieve", config, &[index_dir, examples], None, || {
        let (idx, _) = load_index(index_dir)?;
        let examples = examples_from(examples)?;
        let run: String = examples
            .iter()
            .map(|ex| idx.retrieve(&ex.query_id, &ex.query_text, k).to_trec(RUN_TAG))
            .collect();
        std::fs::write(out, run).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
        Ok(vec![out.to_path_buf()])
    })
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

/// Reads a run config; relative data paths resolve against its directory.
pub fn read_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let mut config: RunConfig =
        serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    config.paths.examples = config.paths.examples.map(|p| resolve(base, &p));
    config.paths.index = config.paths.index.map(|p| resolve(base, &p));
    config.validate().map_err(invalid)?;
    Ok(config)
}

fn pipeline_error(e: PipelineError) -> CliError {
    match e {
        PipelineError::Config(_) | PipelineError::Corpus(_) | PipelineError::EmptyPlan(_) | PipelineError::NoTriplets => {
            invalid(e)
        }
        other => runtime(other),
    }
}

fn train_cmd(config_path: &Path, regime: Regime, out: &Path) -> Result<(), CliError> {
    require_file(config_path)?;
    let mut config = read_config(config_path)?;
    if let Some(r) = config.regime {
        if r != regime {
            return Err(invalid(format!("config regime {r} conflicts with --regime {regime}")));
        }
    }
    config.regime = Some(regime);
    let examples = config.paths.examples.clone().ok_or_else(|| invalid("config has no paths.examples"))?;
    let index_dir = config.paths.index.clone().ok_or_else(|| invalid("config has no paths.index"))?;
    require_file(&examples)?;
    require_dir(&index_dir)?;
    create_dir(out)?;
    let snapshot = serde_json::to_value(&config).map_err(runtime)?;
    let seed = serde_json::to_value(config.seeds).ok();
    with_manifest(
        manifest_path(out, true),
        "train",
        snapshot,
        &[config_path, &examples, &index_dir],
        seed,
        || {
            let (idx, store) = load_index(&index_dir)?;
            let examples = examples_from(&examples)?;
            let (triplets, dropped) = make_triplets(&examples, &idx, &store, config.k, config.setting);
            log::info!("train: {} triplets, {dropped} without retrieved documents", triplets.len());
            let trained = train(regime, &triplets, &config).map_err(pipeline_error)?;
            let history_path = out.join(HISTORY_FILE);
            write_json(&history_path, &trained.history)?;
            let pipeline = Pipeline::from_trained(trained, &config);
            cagen_pipeline::store::save(out, &pipeline).map_err(runtime)?;
            Ok(vec![out.join(cagen_pipeline::store::META_FILE), history_path])
        },
    )
}

fn generate(model: &Path, regime: Regime, examples: &Path, index_dir: &Path, out: &Path) -> Result<(), CliError> {
    require_dir(model)?;
    require_file(examples)?;
    require_dir(index_dir)?;
    let config = json!({"model": model, "regime": regime, "examples": examples, "index": index_dir, "out": out});
    with_manifest(manifest_path(out, false), "generate", config, &[model, examples, index_dir], None, || {
        let (pipeline, meta) = cagen_pipeline::store::load(model).map_err(invalid)?;
        if meta.regime != regime {
            return Err(invalid(format!("model was trained as {}, not {regime}", meta.regime)));
        }
        let (idx, store) = load_index(index_dir)?;
        let queries: Vec<(String, String)> = examples_from(examples)?
            .into_iter()
            .map(|e| (e.query_id, e.query_text))
            .collect();
        let preds = pipeline.predict(&queries, &idx, &store);
        write_predictions(out, &preds).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
        Ok(vec![out.to_path_buf()])
    })
}

fn ext(examples: &Path, index_dir: &Path, k: usize, setting: Setting, out: &Path) -> Result<(), CliError> {
    require_file(examples)?;
    require_dir(index_dir)?;
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    let config = json!({"examples": examples, "index": index_dir, "k": k, "setting": setting, "out": out});
    with_manifest(manifest_path(out, false), "ext", config, &[examples, index_dir], None, || {
        let (idx, store) = load_index(index_dir)?;
        let scorer = EmbedScorer::default();
        let preds: Vec<Prediction> = examples_from(examples)?
            .iter()
            .map(|ex| {
                let docs = retrieve_docs(&idx, &store, &ex.query_id, &ex.query_text, k);
                let answer = ext_answer(ex.target(setting), &docs, &scorer);
                Prediction {
                    query_id: ex.query_id.clone(),
                    intermediate_plan: String::new(),
                    final_plan: serialize_plan(&parse_plan(&answer)),
                    answer,
                }
            })
            .collect();
        write_predictions(out, &preds).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
        Ok(vec![out.to_path_buf()])
    })
}

fn evaluate(
    pred: &Path,
    gold: &Path,
    setting: Setting,
    label: Option<String>,
    bootstrap: Option<usize>,
    out: &Path,
) -> Result<(), CliError> {
    require_file(pred)?;
    require_file(gold)?;
    let label = label.unwrap_or_else(|| pred.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
    let config = json!({"pred": pred, "gold": gold, "setting": setting, "label": label, "bootstrap": bootstrap, "out": out});
    let seed = bootstrap.map(|_| json!(0));
    with_manifest(manifest_path(out, false), "evaluate", config, &[pred, gold], seed, || {
        let preds = load_predictions(pred).map_err(invalid)?;
        let golds = examples_from(gold)?;
        let embedder = HashEmbedder::default();
        let evaluator = Evaluator {
            overlap: &WordTokenizer,
            counter: &WhitespaceTokenizer,
            embedder: &embedder,
            bootstrap: bootstrap.map(|n| (n, 0)),
        };
        let report = evaluator.evaluate_run(&label, &preds, &golds, setting).map_err(invalid)?;
        write_json(out, &report)?;
        Ok(vec![out.to_path_buf()])
    })
}

fn report(
    metrics: &[PathBuf],
    format: cagen_core::metrics::TableFormat,
    table: TableKind,
    out: Option<&Path>,
) -> Result<(), CliError> {
    for m in metrics {
        require_file(m)?;
    }
    let manifest = match out {
        Some(o) => manifest_path(o, false),
        None => metrics[0].with_extension("report.manifest.json"),
    };
    let config = json!({"metrics": metrics, "format": format!("{format:?}").to_lowercase(), "out": out});
    let inputs: Vec<&Path> = metrics.iter().map(PathBuf::as_path).collect();
    with_manifest(manifest, "report", config, &inputs, None, || {
        let mut reports = Vec::new();
        for m in metrics {
            let text = std::fs::read_to_string(m).map_err(|e| invalid(format!("{}: {e}", m.display())))?;
            let r: MetricsReport = serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", m.display())))?;
            reports.push(r);
        }
        let mut rendered = String::new();
        if matches!(table, TableKind::Answer | TableKind::Both) {
            rendered.push_str(&answer_table(&reports, format));
        }
        if matches!(table, TableKind::Both) {
            rendered.push('\n');
        }
        if matches!(table, TableKind::Plan | TableKind::Both) {
            rendered.push_str(&plan_table(&reports, format));
        }
        match out {
            Some(o) => {
                std::fs::write(o, &rendered).map_err(|e| runtime(format!("{}: {e}", o.display())))?;
                Ok(vec![o.to_path_buf()])
            }
            None => {
                print!("{rendered}");
                Ok(Vec::new())
            }
        }
    })
}
