//! Acceptance suite. Each criterion prints one PASS/FAIL line; any failure
//! makes the binary exit nonzero.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::Parser;
use ehrqa_cli::{execute, Cli};
use ehrqa_core::corpus::{
    load_corpus, read_submission, AlignmentLink, CaseRecord, GoldAnnotation, Stage, Submission, Tier,
    MAX_ANSWER_WORDS, MAX_QUERY_WORDS,
};
use ehrqa_core::llm::{ChatOutcome, Fault, MockBackend, OverlapScorer, RecordingBackend};
use ehrqa_core::metrics::{
    alignment_prf, bleu, evidence_prf, overall_score, rouge_lsum, rouge_lsum_pair, sari, sari_sentence,
    EvalLevel, EvalMode, EvidenceEvalConfig, INTERPRET_CONSTITUENTS,
};
use ehrqa_core::pipeline::{filter_evidence, run_pipeline, PipelineConfig, ScoreFailure, SentenceScore, StageSet};
use ehrqa_core::textproc::{
    count_words, ends_with_terminal, enforce_answer_limit, soft_cut, soft_cut_detailed, SoftCut, TruncationPolicy,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use serde::Deserialize;
use serde_json::Value;

type Outcome = Result<(), String>;
type Criterion = (&'static str, fn() -> Outcome, Option<Duration>);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Outcome {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config { cases, failure_persistence: None, ..Config::default() },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn core_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core")
}

fn corpus_path() -> PathBuf {
    core_dir().join("fixtures/corpus.json")
}

fn corpus() -> Vec<CaseRecord> {
    load_corpus(corpus_path()).unwrap()
}

fn read_fixture(name: &str) -> String {
    std::fs::read_to_string(core_dir().join("tests/fixtures").join(name)).unwrap()
}

/// Runs a CLI command line in-process, returning exit code and stdout.
fn cli(args: &[String]) -> Result<(i32, String), String> {
    let argv = std::iter::once("ehrqa".to_string()).chain(args.iter().cloned());
    let parsed = Cli::try_parse_from(argv).map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    let code = execute(&parsed, &mut out).map_err(|e| format!("{e:#}"))?;
    Ok((code, String::from_utf8(out).unwrap()))
}

fn args(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

// Filter tiers

fn brute_force_tier(scores: &[u8]) -> (Vec<usize>, Tier) {
    let top = scores.iter().copied().max().unwrap_or(0);
    let pick = |keep: &dyn Fn(u8) -> bool| -> Vec<usize> {
        scores.iter().enumerate().filter(|(_, &s)| keep(s)).map(|(i, _)| i + 1).collect()
    };
    if top >= 4 {
        (pick(&|s| s >= 4), Tier::Strict)
    } else if top == 3 {
        (pick(&|s| s == 3), Tier::Lenient)
    } else {
        ((1..=scores.len().min(3)).collect(), Tier::Fallback)
    }
}

fn filter_tiers() -> Outcome {
    let mut checked = 0usize;
    for n in 1..=6u32 {
        for code in 0..5usize.pow(n) {
            let mut rest = code;
            let raw: Vec<u8> = (0..n)
                .map(|_| {
                    let s = (rest % 5) as u8 + 1;
                    rest /= 5;
                    s
                })
                .collect();
            let scores: Vec<SentenceScore> =
                raw.iter().enumerate().map(|(i, &score)| SentenceScore { index: i + 1, score }).collect();
            let sel = filter_evidence("c", Ok(&scores), n as usize);
            let want = brute_force_tier(&raw);
            ensure((sel.indices.clone(), sel.tier) == want, || {
                format!("scores {raw:?}: got {:?}/{:?}, want {:?}/{:?}", sel.indices, sel.tier, want.0, want.1)
            })?;
            ensure(sel.fallback.is_some() == (want.1 == Tier::Fallback), || format!("scores {raw:?}: fallback flag"))?;
            checked += 1;
        }
    }
    ensure(checked == (1..=6).map(|n| 5usize.pow(n)).sum::<usize>(), || format!("enumerated {checked}"))?;
    let failures = [
        ScoreFailure::Parse("bad".into()),
        ScoreFailure::Blocked("SAFETY".into()),
        ScoreFailure::Transport("timeout".into()),
    ];
    for n in 0..=6 {
        for f in &failures {
            let sel = filter_evidence("c", Err(f), n);
            let want: Vec<usize> = (1..=n.min(3)).collect();
            ensure(sel.indices == want && sel.tier == Tier::Fallback, || format!("failure {f} with {n} sentences"))?;
        }
    }
    Ok(())
}

// Truncation

#[derive(Deserialize)]
struct CutCase {
    id: String,
    text: String,
    branch: String,
    expected: String,
}

fn random_text() -> impl Strategy<Value = String> {
    let word = prop::sample::select(vec!["pain", "stent", "Dr", "fluid", "the", "was", "given", "INR", "3", "mg"]);
    let mark = prop::sample::select(vec!["", "", "", "", "", ".", ".", "!", "?", ",", ";", ":"]);
    prop::collection::vec((word, mark), 0..220)
        .prop_map(|ws| ws.into_iter().map(|(w, m)| format!("{w}{m}")).collect::<Vec<_>>().join(" "))
}

fn truncation() -> Outcome {
    let policy = TruncationPolicy::answer();
    let mut run = runner(10_000);
    run.run(&random_text(), |text| {
        let cut = soft_cut(&text, &policy);
        prop_assert!(count_words(&cut) <= 75, "over cap: {cut}");
        if count_words(&text) > 75 {
            prop_assert!(ends_with_terminal(&cut), "no terminal punctuation: {cut}");
        }
        prop_assert_eq!(soft_cut(&cut, &policy), cut.clone());
        let (limited, _) = enforce_answer_limit(&text, &policy);
        prop_assert!(count_words(&limited) <= 75);
        if count_words(&text) > 0 {
            prop_assert!(ends_with_terminal(&limited), "answer not terminal: {limited}");
        }
        prop_assert_eq!(enforce_answer_limit(&limited, &policy).0, limited.clone());
        Ok(())
    })
    .map_err(|e| e.to_string())?;

    let cases: Vec<CutCase> = serde_json::from_str(&read_fixture("soft_cut_cases.json")).unwrap();
    ensure(cases.len() >= 50, || format!("only {} curated cases", cases.len()))?;
    for c in &cases {
        let (got, branch) = soft_cut_detailed(&c.text, &policy);
        let branch = match branch {
            SoftCut::Unchanged => "unchanged",
            SoftCut::SentenceBoundary(_) => "boundary",
            SoftCut::Hard => "hard",
        };
        ensure(branch == c.branch && got == c.expected, || {
            format!("{}: got {branch} {got:?}, want {} {:?}", c.id, c.branch, c.expected)
        })?;
    }
    Ok(())
}

// Text metrics

#[derive(Deserialize)]
struct Triple {
    id: String,
    source: String,
    candidate: String,
    reference: String,
}

#[derive(Deserialize)]
struct Expected {
    id: String,
    bleu: f64,
    rouge_lsum: f64,
    sari: f64,
}

#[derive(Deserialize)]
struct CorpusExpected {
    bleu: f64,
    rouge_lsum: f64,
    sari: f64,
}

#[derive(Deserialize)]
struct Oracle {
    items: Vec<Expected>,
    corpus_all: CorpusExpected,
}

fn metric_oracle() -> Outcome {
    const TOL: f64 = 1e-4;
    let triples: Vec<Triple> = serde_json::from_str(&read_fixture("metric_triples.json")).unwrap();
    let oracle: Oracle = serde_json::from_str(&read_fixture("metric_oracle.json")).unwrap();
    ensure(triples.len() >= 20, || format!("only {} triples", triples.len()))?;
    let close = |label: String, got: f64, want: f64| ensure((got - want).abs() <= TOL, || format!("{label}: {got} vs {want}"));
    for (t, e) in triples.iter().zip(&oracle.items) {
        ensure(t.id == e.id, || format!("fixture order {} vs {}", t.id, e.id))?;
        let b = bleu(std::slice::from_ref(&t.candidate), std::slice::from_ref(&t.reference)).map_err(|e| e.to_string())?;
        close(format!("{} BLEU", t.id), b, e.bleu)?;
        close(format!("{} ROUGE-Lsum", t.id), rouge_lsum_pair(&t.candidate, &t.reference), e.rouge_lsum)?;
        close(
            format!("{} SARI", t.id),
            100.0 * sari_sentence(&t.source, &t.candidate, std::slice::from_ref(&t.reference)),
            e.sari,
        )?;
    }
    let col = |f: fn(&Triple) -> &String| triples.iter().map(|t| f(t).clone()).collect::<Vec<_>>();
    let (src, cand, refs) = (col(|t| &t.source), col(|t| &t.candidate), col(|t| &t.reference));
    let multi: Vec<Vec<String>> = refs.iter().map(|r| vec![r.clone()]).collect();
    close("corpus BLEU".into(), bleu(&cand, &refs).unwrap(), oracle.corpus_all.bleu)?;
    close("corpus ROUGE-Lsum".into(), rouge_lsum(&cand, &refs).unwrap(), oracle.corpus_all.rouge_lsum)?;
    close("corpus SARI".into(), sari(&src, &cand, &multi).unwrap(), oracle.corpus_all.sari)?;

    let find = |id: &str| triples.iter().find(|t| t.id == id).unwrap();
    for id in ["identity-1", "identity-2"] {
        let t = find(id);
        close(format!("{id} BLEU=100"), bleu(std::slice::from_ref(&t.candidate), std::slice::from_ref(&t.reference)).unwrap(), 100.0)?;
        close(format!("{id} ROUGE-Lsum=1"), rouge_lsum_pair(&t.candidate, &t.reference), 1.0)?;
    }
    for id in ["disjoint-1", "disjoint-2"] {
        let t = find(id);
        close(format!("{id} ROUGE-Lsum=0"), rouge_lsum_pair(&t.candidate, &t.reference), 0.0)?;
    }
    let t = find("disjoint-2");
    close("disjoint-2 BLEU=0".into(), bleu(std::slice::from_ref(&t.candidate), std::slice::from_ref(&t.reference)).unwrap(), 0.0)
}

// P/R/F1

fn set(v: &[usize]) -> BTreeSet<usize> {
    v.iter().copied().collect()
}

fn gold(ess: &[usize], sup: &[usize]) -> GoldAnnotation {
    GoldAnnotation { essential: set(ess), supplementary: set(sup), ..Default::default() }
}

fn cfg(mode: EvalMode, level: EvalLevel) -> EvidenceEvalConfig {
    EvidenceEvalConfig { mode, level }
}

fn prf() -> Outcome {
    const EPS: f64 = 1e-12;
    let same = |label: &str, got: f64, want: f64| ensure((got - want).abs() < EPS, || format!("{label}: {got} vs {want}"));

    let preds = BTreeMap::from([("a".to_string(), set(&[1, 2]))]);
    let golds = BTreeMap::from([("a".to_string(), gold(&[1], &[2]))]);
    let strict = evidence_prf(&preds, &golds, cfg(EvalMode::Strict, EvalLevel::Micro)).unwrap();
    same("strict P", strict.precision, 0.5)?;
    same("strict R", strict.recall, 1.0)?;
    same("strict F1", strict.f1, 2.0 / 3.0)?;
    let lenient = evidence_prf(&preds, &golds, cfg(EvalMode::Lenient, EvalLevel::Micro)).unwrap();
    same("lenient P", lenient.precision, 1.0)?;
    same("lenient R", lenient.recall, 1.0)?;
    same("lenient F1", lenient.f1, 1.0)?;

    // A: pred {1,2}, gold {1}. B: pred {3}, gold {3,4}.
    let preds = BTreeMap::from([("A".to_string(), set(&[1, 2])), ("B".to_string(), set(&[3]))]);
    let golds = BTreeMap::from([("A".to_string(), gold(&[1], &[])), ("B".to_string(), gold(&[3, 4], &[]))]);
    let micro = evidence_prf(&preds, &golds, cfg(EvalMode::Strict, EvalLevel::Micro)).unwrap();
    same("micro P", micro.precision, 2.0 / 3.0)?;
    same("micro R", micro.recall, 2.0 / 3.0)?;
    same("micro F1", micro.f1, 2.0 / 3.0)?;
    let macro_ = evidence_prf(&preds, &golds, cfg(EvalMode::Strict, EvalLevel::Macro)).unwrap();
    same("macro P", macro_.precision, 0.75)?;
    same("macro R", macro_.recall, 0.75)?;
    same("macro F1", macro_.f1, 2.0 / 3.0)?;

    let link = |k: usize, ev: &[usize]| AlignmentLink { answer_sentence: k, evidence: set(ev) };
    let pa = BTreeMap::from([("x".to_string(), vec![link(1, &[2, 3]), link(2, &[5])])]);
    let ga = BTreeMap::from([("x".to_string(), vec![link(1, &[2]), link(2, &[5, 6])])]);
    let al = alignment_prf(&pa, &ga).unwrap();
    same("alignment P", al.precision, 2.0 / 3.0)?;
    same("alignment R", al.recall, 2.0 / 3.0)?;
    same("alignment F1", al.f1, 2.0 / 3.0)?;

    let empty = BTreeMap::from([("a".to_string(), BTreeSet::new())]);
    let golds = BTreeMap::from([("a".to_string(), gold(&[1], &[2]))]);
    let e = evidence_prf(&empty, &golds, cfg(EvalMode::Strict, EvalLevel::Micro)).unwrap();
    same("empty prediction F1", e.f1, 0.0)?;
    let e = evidence_prf(&empty, &BTreeMap::from([("a".to_string(), gold(&[], &[2]))]), cfg(EvalMode::Strict, EvalLevel::Micro))
        .unwrap();
    same("empty against empty P", e.precision, 1.0)?;

    let ids = || prop::collection::btree_set(1usize..=12, 0..8);
    runner(1000)
        .run(&(ids(), ids()), |(pred, ess)| {
            let preds = BTreeMap::from([("c".to_string(), pred)]);
            let golds = BTreeMap::from([("c".to_string(), gold(&ess.iter().copied().collect::<Vec<_>>(), &[]))]);
            for mode in [EvalMode::Strict, EvalMode::Lenient] {
                let mi = evidence_prf(&preds, &golds, cfg(mode, EvalLevel::Micro)).unwrap();
                let ma = evidence_prf(&preds, &golds, cfg(mode, EvalLevel::Macro)).unwrap();
                prop_assert_eq!(mi, ma);
            }
            Ok(())
        })
        .map_err(|e| format!("micro/macro: {e}"))?;
    // Precision is a ratio over predicted ids, so the draws predict at least one.
    let predicted = prop::collection::btree_set(1usize..=12, 1..8);
    runner(1000)
        .run(&(predicted, ids(), ids()), |(pred, ess, sup)| {
            let sup: Vec<usize> = sup.difference(&ess).copied().collect();
            let preds = BTreeMap::from([("c".to_string(), pred)]);
            let golds = BTreeMap::from([("c".to_string(), gold(&ess.iter().copied().collect::<Vec<_>>(), &sup))]);
            let s = evidence_prf(&preds, &golds, cfg(EvalMode::Strict, EvalLevel::Micro)).unwrap();
            let l = evidence_prf(&preds, &golds, cfg(EvalMode::Lenient, EvalLevel::Micro)).unwrap();
            prop_assert!(l.precision >= s.precision);
            Ok(())
        })
        .map_err(|e| format!("lenient precision: {e}"))
}

// End to end

fn record_transcript(path: &Path, backend: MockBackend) -> Outcome {
    let recorder = RecordingBackend::new(Arc::new(backend), path).map_err(|e| e.to_string())?;
    let report = run_pipeline(&corpus(), &StageSet::all(), &PipelineConfig::builtin("mock"), &recorder, None)
        .map_err(|e| e.to_string())?;
    ensure(report.failed_cases.is_empty() && recorder.unrecorded() == 0, || "recording run incomplete".into())
}

fn replay_run(transcript: &Path, out: &Path) -> Result<(i32, Value), String> {
    let (code, stdout) = cli(&args(&[
        "run", "--backend", "replay", "--strict", "--stages", "all", "--corpus", p(&corpus_path()),
        "--transcript", p(transcript), "--out", p(out),
    ]))?;
    Ok((code, serde_json::from_str(&stdout).map_err(|e| e.to_string())?))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let transcript = dir.path().join("t.jsonl");
    record_transcript(&transcript, MockBackend::new(Box::new(OverlapScorer)))?;
    let cases = corpus();
    ensure(cases.len() >= 5, || format!("{} cases", cases.len()))?;
    let mut first: Option<Vec<Vec<u8>>> = None;
    for run in 0..3 {
        let out = dir.path().join(format!("run{run}"));
        let (code, report) = replay_run(&transcript, &out)?;
        ensure(code == 0, || format!("run {run} exited {code}"))?;
        ensure(report["missing_transcript_keys"].as_array().is_some_and(|k| k.is_empty()), || {
            format!("run {run} missed transcript keys")
        })?;
        let mut files = Vec::new();
        for stage in Stage::ALL {
            let path = out.join(stage.file_name());
            files.push(std::fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?);
            let sub = read_submission(stage, &path).map_err(|e| e.to_string())?;
            sub.validate_against(&cases).map_err(|e| e.to_string())?;
            ensure(sub.len() == cases.len(), || format!("{stage}: {} entries", sub.len()))?;
            match &sub {
                Submission::Queries(v) => {
                    ensure(v.iter().all(|e| count_words(&e.query) <= MAX_QUERY_WORDS), || "long query".into())?
                }
                Submission::Answers(v) => {
                    ensure(v.iter().all(|e| count_words(&e.answer) <= MAX_ANSWER_WORDS), || "long answer".into())?
                }
                _ => {}
            }
        }
        match &first {
            None => first = Some(files),
            Some(f) => ensure(*f == files, || format!("run {run} differs from run 0"))?,
        }
    }
    Ok(())
}

fn perfect_scorer() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (code, _) = cli(&args(&[
        "run", "--backend", "mock", "--mock-scorer", "gold", "--stages", "2", "--corpus", p(&corpus_path()),
        "--out", p(dir.path()),
    ]))?;
    ensure(code == 0, || format!("run exited {code}"))?;
    let pred = dir.path().join(Stage::Evidence.file_name());
    let (code, stdout) =
        cli(&args(&["eval", "--pred", p(&pred), "--gold", p(&corpus_path()), "--format", "json"]))?;
    ensure(code == 0, || format!("eval exited {code}"))?;
    let report: Value = serde_json::from_str(&stdout).map_err(|e| e.to_string())?;
    let f1 = report["aggregate"]["Strict Micro F1"].as_f64().ok_or("no Strict Micro F1")?;
    ensure(f1 == 100.0, || format!("Strict Micro F1 = {f1}"))
}

fn fallback_coverage() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let transcript = dir.path().join("faults.jsonl");
    let fault = |stage, needle: &str, outcome| Fault { stage, needle: Some(needle.into()), outcome };
    let backend = MockBackend::new(Box::new(OverlapScorer))
        .with_fault(fault(Stage::Evidence, "drug-eluting stent", ChatOutcome::Blocked("SAFETY".into())))
        .with_fault(fault(Stage::Interpret, "very confused", ChatOutcome::Text("\"\"".into())))
        .with_fault(fault(Stage::Generate, "cholecystectomy", ChatOutcome::Text("   ".into())))
        .with_fault(fault(Stage::Align, "warfarin", ChatOutcome::Text("not json".into())));
    record_transcript(&transcript, backend)?;

    let out = dir.path().join("out");
    let (code, report) = replay_run(&transcript, &out)?;
    ensure(code == 0, || format!("run exited {code}"))?;
    let events = report["events"].as_array().ok_or("no events")?;
    for (case, stage) in [("1", 2), ("2", 1), ("3", 3), ("4", 4)] {
        ensure(
            events.iter().any(|e| e["event"] == "fallback" && e["case_id"] == case && e["stage"] == stage),
            || format!("no stage {stage} fallback event for case {case}"),
        )?;
    }
    let Submission::Evidence(entries) = read_submission(Stage::Evidence, out.join(Stage::Evidence.file_name()))
        .map_err(|e| e.to_string())?
    else {
        return Err("wrong submission kind".into());
    };
    let case1 = entries.iter().find(|e| e.case_id == "1").ok_or("case 1 missing")?;
    ensure(case1.evidence == vec![1, 2, 3] && case1.tier == Tier::Fallback, || {
        format!("case 1 evidence {:?} {:?}", case1.evidence, case1.tier)
    })
}

fn aggregation() -> Outcome {
    let internal = BTreeMap::from([("ROUGELsum".to_string(), 35.3)]);
    let sidecar = BTreeMap::from([
        ("BERTScore".to_string(), 46.8),
        ("AlignScore".to_string(), 23.1),
        ("MEDCON".to_string(), 17.2),
    ]);
    let overall = overall_score(&internal, &sidecar, INTERPRET_CONSTITUENTS).map_err(|e| e.to_string())?;
    ensure((overall - 30.6).abs() < 1e-9, || format!("overall = {overall}"))?;
    ensure(format!("{overall:.1}") == "30.6", || format!("overall rounds to {overall:.1}"))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("filter-tier oracle", filter_tiers, Some(Duration::from_secs(10))),
        ("truncation properties", truncation, Some(Duration::from_secs(5))),
        ("metric oracle equivalence", metric_oracle, Some(Duration::from_secs(5))),
        ("P/R/F1 correctness", prf, None),
        ("end-to-end determinism", determinism, Some(Duration::from_secs(10))),
        ("perfect-scorer closure", perfect_scorer, None),
        ("fallback coverage", fallback_coverage, None),
        ("aggregation check", aggregation, None),
    ];
    let mut failed = 0;
    for (name, check, limit) in criteria {
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let result = match (result, limit) {
            (Ok(()), Some(limit)) if elapsed > limit => Err(format!("took {elapsed:?}, limit {limit:?}")),
            (r, _) => r,
        };
        match result {
            Ok(()) => println!("PASS {name} ({:.2}s)", elapsed.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({:.2}s): {why}", elapsed.as_secs_f64());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
