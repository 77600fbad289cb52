//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Run with `cargo test -p cagen-cli --test acceptance`.

#[path = "../../core/tests/oracles/mod.rs"]
mod oracles;
#[path = "../../pipeline/tests/common/mod.rs"]
mod pipeline_common;
#[path = "../../seqmodel/tests/common/mod.rs"]
mod seq_common;

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use cagen_core::baselines::{ext_answer, split_sentences, EmbedScorer};
use cagen_core::corpus::{
    build_examples, build_structured_target, corpus_stats, extract_plan, filter_pages, load_pages, load_paragraphs,
    parse_plan,
};
use cagen_core::metrics::{align, embed_f1, meteor, meteor_tokens, rouge_l, HashEmbedder};
use cagen_core::text::{analyze, WhitespaceTokenizer, WordTokenizer};
use cagen_core::{Bm25Params, InvertedIndex, Setting};
use cagen_pipeline::train::{model_config, GENERATOR_SLOT, PLANNER_SLOT};
use cagen_pipeline::triplet::{build_tokenizer, encode_triplets};
use cagen_pipeline::{loss_answer, loss_planning, train, Objective, Pipeline, PlanSource, Regime, Trainer};
use cagen_seqmodel::{Graph, ModelConfig, Seq2Seq};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

const WORDS: [&str; 8] = ["the", "cat", "sat", "on", "mat", "a", "dog", "ran"];

fn random_tokens(rng: &mut ChaCha8Rng, max: usize, vocab: usize) -> Vec<String> {
    let n = rng.gen_range(0..=max);
    (0..n).map(|_| WORDS[rng.gen_range(0..vocab)].to_owned()).collect()
}

fn metric_oracles() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..1000 {
        let a = random_tokens(&mut rng, 12, 5);
        let b = random_tokens(&mut rng, 12, 5);
        let got = rouge_l(&a.join(" "), &b.join(" "), &WordTokenizer);
        let (p, r, f) = oracles::rouge_from_lcs(oracles::brute_lcs(&a, &b), a.len(), b.len());
        check(
            (got.p - p).abs() < 1e-12 && (got.r - r).abs() < 1e-12 && (got.f - f).abs() < 1e-12,
            || format!("rouge pair {i}: {a:?} / {b:?} gave {got:?}, oracle ({p}, {r}, {f})"),
        )?;
    }
    for i in 0..500 {
        let a = random_tokens(&mut rng, 6, 4);
        let b = random_tokens(&mut rng, 6, 4);
        let (m, chunks) = oracles::brute_alignment(&a, &b);
        let got = align(&a, &b);
        let expect = oracles::meteor_from_alignment(m, chunks, a.len(), b.len());
        check((got.matches, got.chunks) == (m, chunks), || {
            format!("meteor pair {i}: alignment {:?} vs oracle ({m}, {chunks})", (got.matches, got.chunks))
        })?;
        check((meteor_tokens(&a, &b) - expect).abs() < 1e-9, || format!("meteor pair {i}: score mismatch"))?;
    }
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("1000 rouge + 500 meteor pairs in {elapsed:.2?}"))
}

fn worked_values() -> Outcome {
    let r = rouge_l("the cat sat", "the cat sat on the mat", &WordTokenizer);
    check(r.p == 100.0 && r.r == 50.0 && (r.f - 66.67).abs() <= 0.01, || format!("{r:?}"))?;
    let s = "plans guide long answers";
    let same = rouge_l(s, s, &WordTokenizer);
    check(same.p == 100.0 && same.r == 100.0 && same.f == 100.0, || format!("identical rouge {same:?}"))?;
    let e = embed_f1(s, s, &WordTokenizer, &HashEmbedder::default());
    check((e.f - 100.0).abs() < 1e-9, || format!("identical embed {e:?}"))?;
    let m = meteor("a b c", "a b c", &WordTokenizer);
    check((m - 98.15).abs() <= 0.01, || format!("meteor {m}"))?;
    Ok(format!("F {:.4}, meteor {m:.4}", r.f))
}

fn retrieval_oracle() -> Outcome {
    let vocab: Vec<String> = (0..40).map(|i| format!("w{i}")).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut compared = 0;
    for corpus in 0..100 {
        let n = rng.gen_range(1..=200);
        let docs: Vec<(String, String)> = (0..n)
            .map(|i| {
                let len = rng.gen_range(1..=15);
                let text: Vec<&str> = (0..len).map(|_| vocab[rng.gen_range(0..vocab.len())].as_str()).collect();
                (format!("p{i:04}"), text.join(" "))
            })
            .collect();
        let q_len = rng.gen_range(1..=5);
        let query: Vec<String> = (0..q_len).map(|_| vocab[rng.gen_range(0..vocab.len())].clone()).collect();
        let idx = InvertedIndex::from_documents(docs.iter().map(|(a, b)| (a.as_str(), b.as_str())), Bm25Params::default())
            .map_err(|e| e.to_string())?;
        let toks: Vec<(String, Vec<String>)> = docs.iter().map(|(a, b)| (a.clone(), analyze(b))).collect();
        let oracle = oracles::brute_bm25(&toks, &query, 1.2, 0.75);
        let got = idx.retrieve("q", &query.join(" "), n);
        let got_ids: Vec<&str> = got.entries.iter().map(|e| e.para_id.as_str()).collect();
        let want_ids: Vec<&str> = oracle.iter().map(|(id, _)| id.as_str()).collect();
        check(got_ids == want_ids, || format!("corpus {corpus}: ordering differs"))?;
        for (e, (_, s)) in got.entries.iter().zip(&oracle) {
            check((e.score - s).abs() <= 1e-9, || format!("corpus {corpus}: {} scored {} vs {s}", e.para_id, e.score))?;
        }
        compared += oracle.len();
    }
    Ok(format!("100 corpora, {compared} ranked documents"))
}

fn additivity() -> Outcome {
    let triplets = pipeline_common::synthetic_triplets();
    let config = pipeline_common::tiny_config();
    let tok = build_tokenizer(&triplets, 1);
    let encoded = encode_triplets(&tok, &triplets);
    let planner = Seq2Seq::new(model_config(&config, &tok, 1), PLANNER_SLOT).map_err(|e| e.to_string())?;
    let generator = Seq2Seq::new(model_config(&config, &tok, 2), GENERATOR_SLOT).map_err(|e| e.to_string())?;
    let mut trainer = Trainer::new(
        Objective::Joint,
        config.setting,
        Some(planner),
        Some(generator),
        &encoded,
        config.optimizer,
        encoded.len(),
        3,
    )
    .map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for step in 0..200 {
        let (planner, generator) = (trainer.planner().unwrap(), trainer.generator().unwrap());
        let mut parts = Vec::new();
        for t in &encoded {
            let mut g1 = Graph::new();
            let lp = loss_planning(&mut g1, planner, t, config.setting).map_err(|e| e.to_string())?;
            let mut g2 = Graph::new();
            let la = loss_answer(&mut g2, generator, Some(planner), t, PlanSource::PlannerEmbeddings)
                .map_err(|e| e.to_string())?;
            parts.push(g1.scalar(lp.loss) + g2.scalar(la.loss));
        }
        let report = trainer.step().map_err(|e| e.to_string())?;
        check(report.batch.len() == encoded.len(), || "batch is not the full set".into())?;
        for (&i, loss) in report.batch.iter().zip(&report.losses) {
            let rel = (loss.total - parts[i]).abs() / loss.total;
            worst = worst.max(rel);
            check(rel < 1e-6, || format!("step {step}, triplet {i}: relative error {rel:e}"))?;
        }
    }
    Ok(format!("200 steps x 8 triplets, worst relative error {worst:e}"))
}

fn gradient_separation() -> Outcome {
    let triplets = pipeline_common::synthetic_triplets();
    let config = pipeline_common::tiny_config();
    let tok = build_tokenizer(&triplets, 1);
    let encoded = encode_triplets(&tok, &triplets);
    let planner = Seq2Seq::new(model_config(&config, &tok, 1), PLANNER_SLOT).map_err(|e| e.to_string())?;
    let generator = Seq2Seq::new(model_config(&config, &tok, 2), GENERATOR_SLOT).map_err(|e| e.to_string())?;
    let mut min_e2e = f64::INFINITY;
    for t in &encoded {
        let mut g = Graph::new();
        let e2e = loss_answer(&mut g, &generator, Some(&planner), t, PlanSource::PlannerEmbeddings)
            .map_err(|e| e.to_string())?;
        let norm = g.backward(e2e.loss).slot_norm(PLANNER_SLOT);
        min_e2e = min_e2e.min(norm);
        let mut g = Graph::new();
        let seq = loss_answer(&mut g, &generator, Some(&planner), t, PlanSource::Gold).map_err(|e| e.to_string())?;
        let seq_norm = g.backward(seq.loss).slot_norm(PLANNER_SLOT);
        check(seq_norm == 0.0, || format!("{}: seq planner gradient {seq_norm}", t.query_id))?;
    }
    check(min_e2e > 0.0, || "e2e planner gradient vanished".into())?;
    Ok(format!("e2e planner norm >= {min_e2e:.3e}, seq planner norm exactly 0"))
}

fn gradient_check() -> Outcome {
    let vocab = 24;
    let mut config = ModelConfig::tiny(vocab);
    config.seed = 11;
    let model = Seq2Seq::new(config, 0).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let probe = seq_common::random_probe(&mut rng, vocab, 2);
    let results = seq_common::finite_difference(&model, &probe, 10, 7, 1e-6);
    let worst = results
        .iter()
        .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
        .ok_or("no coordinates checked")?;
    check(worst.rel_err <= 1e-3, || {
        format!("{}[{}]: analytic {} numeric {}", worst.name, worst.coord, worst.analytic, worst.numeric)
    })?;
    Ok(format!(
        "{} matrices, {} coordinates, worst relative error {:.2e}",
        model.params().len(),
        results.len(),
        worst.rel_err
    ))
}

fn overfit() -> Outcome {
    let start = Instant::now();
    let triplets = pipeline_common::synthetic_triplets();
    let mut config = pipeline_common::tiny_config();
    config.training.max_steps = 2000;
    config.training.target_token_loss = Some(0.05);
    let mut summary = Vec::new();
    for regime in Regime::ALL {
        let trained = train(regime, &triplets, &config).map_err(|e| e.to_string())?;
        for h in &trained.history {
            let step = h.accuracy_step.ok_or_else(|| format!("{regime} {}: never reached 95%", h.label))?;
            check(step <= 2000 && h.final_eval.min_rate() >= 0.95, || {
                format!("{regime} {}: accuracy {:.3}", h.label, h.final_eval.min_rate())
            })?;
            summary.push(format!("{regime}/{} {step}", h.label));
        }
        let pipeline = Pipeline::from_trained(trained, &config);
        let gold = &triplets[0];
        let out = pipeline.infer_triplet(gold);
        check(out.answer_text == gold.answer, || {
            format!("{regime}: generated {:?}, gold {:?}", out.answer_text, gold.answer)
        })?;
        check(parse_plan(&out.answer_text) == gold.plan, || format!("{regime}: plan differs"))?;
    }
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(600), || format!("took {elapsed:?}"))?;
    Ok(format!("95% at step [{}], {elapsed:.1?}", summary.join(", ")))
}

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn fixture_pipeline() -> Outcome {
    let dir = fixture_dir();
    let store = load_paragraphs(&dir.join("paragraphs.jsonl")).map_err(|e| e.to_string())?;
    let pages = load_pages(&dir.join("pages.jsonl")).map_err(|e| e.to_string())?;
    check(pages.len() == 30, || format!("{} pages", pages.len()))?;
    for page in &pages {
        let target = build_structured_target(page, &store).map_err(|e| e.to_string())?;
        check(parse_plan(&target) == extract_plan(page), || format!("{} does not round-trip", page.query_id))?;
    }
    let kept = filter_pages(&pages, Setting::Structured);
    let dropped: Vec<&str> = pages
        .iter()
        .filter(|p| !kept.iter().any(|k| k.query_id == p.query_id))
        .map(|p| p.query_id.as_str())
        .collect();
    let planless = [
        "enwiki:Pebble",
        "enwiki:Candle",
        "enwiki:Compass",
        "enwiki:Umbrella",
        "enwiki:Bicycle",
        "enwiki:Snowflake",
    ];
    check(dropped == planless, || format!("dropped {dropped:?}"))?;
    let structured = build_examples(&kept, &store).map_err(|e| e.to_string())?;
    let s = corpus_stats(&structured, Setting::Structured, &WhitespaceTokenizer);
    check(
        s.answers == 24 && s.tokens_per_answer == 592.0 / 24.0 && s.headings_per_plan == Some(52.0 / 24.0),
        || format!("structured stats {s:?}"),
    )?;
    let plain = build_examples(&filter_pages(&pages, Setting::Plain), &store).map_err(|e| e.to_string())?;
    let p = corpus_stats(&plain, Setting::Plain, &WhitespaceTokenizer);
    check(p.answers == 30 && p.tokens_per_answer == 547.0 / 30.0 && p.headings_per_plan.is_none(), || {
        format!("plain stats {p:?}")
    })?;
    Ok("30 pages round-trip, 6 plan-less dropped, stats 24/592/52 and 30/547".into())
}

fn random_sentence(rng: &mut ChaCha8Rng) -> String {
    const POOL: [&str; 12] = [
        "river", "delta", "plan", "answer", "heading", "stone", "glacier", "forest", "query", "paragraph", "lava",
        "coast",
    ];
    let n = rng.gen_range(2..=6);
    let words: Vec<&str> = (0..n).map(|_| POOL[rng.gen_range(0..POOL.len())]).collect();
    let mut s = words.join(" ");
    s.push('.');
    let mut chars = s.chars();
    chars.next().map(|c| c.to_uppercase().collect::<String>() + chars.as_str()).unwrap_or_default()
}

fn ext_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let scorer = EmbedScorer::default();
    let mut verbatim = 0;
    for case in 0..200 {
        let docs: Vec<String> = (0..rng.gen_range(1..=4))
            .map(|_| (0..rng.gen_range(1..=3)).map(|_| random_sentence(&mut rng)).collect::<Vec<_>>().join(" "))
            .collect();
        let pool: Vec<String> = docs.iter().flat_map(|d| split_sentences(d)).collect();
        let mut gold: Vec<String> = (0..rng.gen_range(0..=4)).map(|_| random_sentence(&mut rng)).collect();
        let copied = pool.choose(&mut rng).cloned().unwrap();
        let at = rng.gen_range(0..=gold.len());
        gold.insert(at, copied.clone());
        let gold_text = gold.join(" ");

        let out = ext_answer(&gold_text, &docs, &scorer);
        check(out == ext_answer(&gold_text, &docs, &scorer), || format!("case {case}: not deterministic"))?;
        let picks = split_sentences(&out);
        check(picks.len() == gold.len(), || format!("case {case}: {} picks for {} sentences", picks.len(), gold.len()))?;
        for p in &picks {
            check(pool.contains(p), || format!("case {case}: {p:?} is not a document sentence"))?;
        }
        for (g, p) in gold.iter().zip(&picks) {
            check(&ext_answer(g, &docs, &scorer) == p, || format!("case {case}: pick order differs from gold order"))?;
        }
        check(picks[at] == copied, || format!("case {case}: verbatim {copied:?} not picked, got {:?}", picks[at]))?;
        verbatim += 1;
    }
    Ok(format!("200 fixtures, {verbatim} verbatim picks"))
}

fn cagen(args: &[&str], cwd: &Path) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_cagen"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "cagen {} exited {:?}: {}",
            args[0],
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn end_to_end_cli() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let work = tmp.path();
    let fixtures = fixture_dir();
    let paragraphs = fixtures.join("paragraphs.jsonl");
    let pages = fixtures.join("pages.jsonl");
    let s = |p: &Path| p.to_string_lossy().into_owned();

    cagen(&["ingest", "--paragraphs", &s(&paragraphs), "--pages", &s(&pages), "--setting", "structured", "--out", "ingest"], work)?;
    cagen(&["index", "--paragraphs", &s(&paragraphs), "--out", "index"], work)?;
    cagen(&["retrieve", "--index", "index", "--examples", "ingest/examples.jsonl", "--k", "10", "--out", "run.trec"], work)?;
    let run = std::fs::read_to_string(work.join("run.trec")).map_err(|e| e.to_string())?;
    for line in run.lines() {
        let f: Vec<&str> = line.split(' ').collect();
        let score_ok = f.get(4).is_some_and(|x| x.split('.').nth(1).is_some_and(|d| d.len() == 4));
        check(f.len() == 6 && f[1] == "Q0" && f[3].parse::<usize>().is_ok() && score_ok && f[5] == "bm25", || {
            format!("bad run line {line:?}")
        })?;
    }

    let mut config: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fixtures.join("tiny.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    config["paths"] = serde_json::json!({"examples": "ingest/examples.jsonl", "index": "index"});
    std::fs::write(work.join("tiny.json"), config.to_string()).map_err(|e| e.to_string())?;
    cagen(&["train", "--config", "tiny.json", "--regime", "seq", "--out", "seq"], work)?;
    cagen(
        &["generate", "--model", "seq", "--regime", "seq", "--examples", "ingest/examples.jsonl", "--index", "index", "--out", "seq.jsonl"],
        work,
    )?;
    cagen(&["evaluate", "--pred", "seq.jsonl", "--gold", "ingest/examples.jsonl", "--out", "seq.report.json"], work)?;
    let table = cagen(&["report", "--metrics", "seq.report.json", "--format", "markdown", "--table", "answer"], work)?;

    let rows: Vec<Vec<String>> = table
        .lines()
        .filter(|l| l.starts_with('|') && !l.starts_with("|---"))
        .map(|l| l.trim_matches('|').split('|').map(|c| c.trim().to_owned()).collect())
        .collect();
    let header = ["Model", "Setting", "# tokens", "Rouge-P", "Rouge-R", "Rouge-F", "BERTScore", "QuestEval"];
    check(rows.len() == 2 && rows[0] == header, || format!("unexpected table:\n{table}"))?;
    let values: Vec<f64> = rows[1][2..7].iter().map(|c| c.parse().unwrap_or(f64::NAN)).collect();
    check(values.iter().all(|v| v.is_finite() && *v > 0.0), || format!("degenerate row {:?}", rows[1]))?;
    check(values[1..].iter().all(|v| *v <= 100.0), || format!("out of range {:?}", rows[1]))?;
    for m in ["ingest/manifest.json", "index/manifest.json", "run.trec.manifest.json", "seq/manifest.json", "seq.jsonl.manifest.json", "seq.report.json.manifest.json"] {
        let text = std::fs::read_to_string(work.join(m)).map_err(|e| format!("{m}: {e}"))?;
        check(text.contains("\"status\": \"ok\""), || format!("{m} not finalized"))?;
    }
    Ok(format!("Rouge-F {}, BERTScore {}", rows[1][5], rows[1][6]))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("metric oracle equivalence", metric_oracles),
        ("worked metric values", worked_values),
        ("retrieval oracle", retrieval_oracle),
        ("joint loss additivity", additivity),
        ("gradient-flow separation", gradient_separation),
        ("finite-difference gradient check", gradient_check),
        ("overfit reproduction", overfit),
        ("fixture corpus pipeline", fixture_pipeline),
        ("EXT properties", ext_properties),
        ("end-to-end CLI", end_to_end_cli),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        match f() {
            Ok(detail) => println!("PASS [{}] {name}: {detail} ({:.1?})", i + 1, start.elapsed()),
            Err(reason) => {
                failed += 1;
                println!("FAIL [{}] {name}: {reason} ({:.1?})", i + 1, start.elapsed());
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
