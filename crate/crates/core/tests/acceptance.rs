//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; exits non-zero on any FAIL.

mod support;

use std::collections::{BTreeMap, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicU32, Ordering};
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config as ProptestConfig, RngAlgorithm, TestRng, TestRunner};
use rand::{Rng, SeedableRng};

use rdproc::chunker::{plan_chunks, Boundary, Budget, ChunkError, TokenEstimatorConfig};
use rdproc::eval::{character_error_rate, consistency, EvalError};
use rdproc::extraction::extract_json_value;
use rdproc::ingest::{parse_ground_truth, GroundTruthKind, SourceDocument};
use rdproc::pipeline::{load_corpus, run_repeated, task_from_config, AdapterMode};
use rdproc::provider::{
    complete_with_retry, CassetteStore, Clock, CompletionAdapter, ManualClock, ModelRequest, ModelResponse, ProviderError,
    RateBudget, RateLimiter, ReplayAdapter, RetryPolicy, StopReason, WINDOW,
};
use rdproc::report::{accuracy_report, consistency_across_runs};
use rdproc::tasks::hta::{compare_runs, hta_schema, FieldStatus, HtaRecord, HTA_FIELDS};
use rdproc::tasks::kickstarter::{assign_raters, pairwise_agreement, parse_ratings_csv, NaicsTable};
use rdproc::tasks::seedlist::{
    classify_name_diff, format_species_name, parse_species_name, DiffCategory, ErrorKind, SpeciesName,
};
use support::{fixture, hta_runs, pages_config, read_fixture};

const SEED: [u8; 32] = *b"acceptance-suite-fixed-seed-0001";
const PROPTEST_CASES: u32 = 1000;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    check(elapsed < limit, || format!("took {elapsed:?}, limit {limit:?}"))
}

// ---------------------------------------------------------------------------
// 1. Divergence classes across three runs

#[derive(Debug, Clone, PartialEq)]
struct Expected {
    category: DiffCategory,
    sub: Option<ErrorKind>,
}

fn expected_cells() -> BTreeMap<(usize, usize), Expected> {
    let text = read_fixture("seedlist/three_runs_highlights.csv");
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let rank = |c: &str| match c {
        "red" => 3,
        "yellow" => 2,
        "green" => 1,
        other => panic!("unknown colour {other}"),
    };
    let mut by_cell: BTreeMap<(usize, usize), (u8, Option<ErrorKind>)> = BTreeMap::new();
    for row in rdr.records() {
        let row = row.unwrap();
        let key = (row[0].parse().unwrap(), row[1].parse().unwrap());
        let sub = match &row[3] {
            "substitution" => Some(ErrorKind::Substitution),
            "inclusion" => Some(ErrorKind::Inclusion),
            "exclusion" => Some(ErrorKind::Exclusion),
            _ => None,
        };
        let candidate = (rank(&row[2]), sub);
        let slot = by_cell.entry(key).or_insert(candidate);
        if candidate.0 > slot.0 {
            *slot = candidate;
        }
    }
    by_cell
        .into_iter()
        .map(|(k, (rank, sub))| {
            let category = match rank {
                3 => DiffCategory::Erroneous,
                2 => DiffCategory::OcrResidual,
                _ => DiffCategory::HarmlessAuthorVariant,
            };
            (k, Expected { category, sub })
        })
        .collect()
}

fn csv_rows(rel: &str) -> Vec<Vec<String>> {
    let text = read_fixture(rel);
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    rdr.records().map(|r| r.unwrap().iter().map(String::from).collect()).collect()
}

fn three_run_divergence() -> Outcome {
    let start = Instant::now();
    let runs = csv_rows("seedlist/three_runs.csv");
    let refs = csv_rows("seedlist/three_runs_reference.csv");
    check(runs.len() == 32 && refs.len() == 32, || "fixture must have 32 rows".into())?;
    let highlighted = expected_cells();

    let mut cells = 0;
    let mut tally: BTreeMap<String, usize> = BTreeMap::new();
    for (i, (row, reference)) in runs.iter().zip(&refs).enumerate() {
        let r = parse_species_name(&reference[0]).map_err(|e| format!("reference row {}: {e}", i + 1))?;
        let source = Some(reference[1].as_str()).filter(|s| !s.is_empty());
        for (j, cell) in row.iter().enumerate() {
            let c = parse_species_name(cell).map_err(|e| format!("row {} run {}: {e}", i + 1, j + 1))?;
            cells += 1;
            let got = classify_name_diff(&c, &r, source);
            let want = highlighted.get(&(i + 1, j + 1)).cloned().unwrap_or(Expected {
                category: DiffCategory::Consistent,
                sub: None,
            });
            check(got.category == want.category && got.sub == want.sub, || {
                format!("row {} run {} {cell:?}: got {:?}/{:?}, want {:?}/{:?} ({})", i + 1, j + 1, got.category, got.sub, want.category, want.sub, got.detail)
            })?;
            if want.category == DiffCategory::OcrResidual {
                let bare = classify_name_diff(&c, &r, None);
                check(bare.category == DiffCategory::Erroneous, || {
                    format!("row {} run {}: without a source snippet the OCR variant must be erroneous", i + 1, j + 1)
                })?;
            }
            let label = match got.sub {
                Some(s) => format!("{}/{s}", got.category),
                None => got.category.to_string(),
            };
            *tally.entry(label).or_default() += 1;
        }
    }
    check(cells == 96, || format!("parsed {cells} cells"))?;
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!("96 cells classified exactly {tally:?}"))
}

// ---------------------------------------------------------------------------
// 2. Perfect pages

fn perfect_pages() -> Outcome {
    let config = pages_config(AdapterMode::Replay);
    let corpus = load_corpus(fixture("seedlist/pages")).map_err(|e| e.to_string())?;
    let task = task_from_config("seedlist", &config).map_err(|e| e.to_string())?;
    let adapter = ReplayAdapter::new(CassetteStore::new(config.cassette_path()));
    let (result, _) = rdproc::pipeline::run_task(&corpus, task.as_ref(), &adapter, &config).map_err(|e| e.to_string())?;
    let truth = parse_ground_truth(&read_fixture("seedlist/pages_truth.json"), GroundTruthKind::SpeciesSet)
        .map_err(|e| e.to_string())?;
    let report = accuracy_report(&result, &truth).map_err(|e| e.to_string())?;
    let sizes: Vec<usize> = report.per_key.iter().map(|k| k.metrics.truth).collect();
    check(sizes == vec![42, 28, 23, 32], || format!("page sizes {sizes:?}"))?;
    for k in &report.per_key {
        let m = &k.metrics;
        check(m.precision == 1.0 && m.recall == 1.0 && m.accuracy == 1.0, || {
            format!("{}: P={} R={} A={}", k.key, m.precision, m.recall, m.accuracy)
        })?;
    }
    let o = &report.overall;
    check(o.precision == 1.0 && o.recall == 1.0 && o.accuracy == 1.0, || "pooled scores below 1".into())?;
    Ok("pages of 42, 28, 23, 32 names score P = R = A = 1.0".into())
}

// ---------------------------------------------------------------------------
// 3. Replay determinism

fn replay_determinism() -> Outcome {
    let start = Instant::now();
    let config = pages_config(AdapterMode::Replay);
    let corpus = load_corpus(fixture("seedlist/pages")).map_err(|e| e.to_string())?;
    let task = task_from_config("seedlist", &config).map_err(|e| e.to_string())?;
    let adapter = ReplayAdapter::new(CassetteStore::new(config.cassette_path()));
    let runs = run_repeated(&corpus, task.as_ref(), &adapter, &config, 3).map_err(|e| e.to_string())?;
    let chunks = runs[0].1.entries.len();
    check(chunks == 10, || format!("{chunks} chunks, expected 10"))?;
    let merged: Vec<String> = runs.iter().map(|(r, _)| r.canonical_json()).collect();
    check(merged.windows(2).all(|w| w[0].as_bytes() == w[1].as_bytes()), || "merged outputs differ".into())?;
    let results: Vec<_> = runs.into_iter().map(|(r, _)| r).collect();
    let summary = consistency_across_runs(&results).map_err(|e| e.to_string())?;
    check(summary.reports.iter().all(|r| r.agreement == 1.0), || "some record disagrees".into())?;
    check(summary.full_agreement == 1.0, || format!("full agreement {}", summary.full_agreement))?;
    within(start.elapsed(), Duration::from_secs(5))?;
    Ok(format!("3 replays of 10 chunks byte-identical, agreement 1.0 on {} records", summary.reports.len()))
}

// ---------------------------------------------------------------------------
// 4. HTA schema and consistency

fn hta_consistency() -> Outcome {
    let schema = hta_schema();
    check(schema.field_names() == HTA_FIELDS.to_vec(), || format!("schema fields {:?}", schema.field_names()))?;
    check(HTA_FIELDS.len() == 14, || "field count".into())?;
    let runs = hta_runs();
    let records: Vec<HtaRecord> = runs
        .iter()
        .map(|r| {
            check(!r.has_failures() && r.records.len() == 1, || format!("run {} failed: {:?}", r.run_id, r.failures))?;
            HtaRecord::from_record(&r.records[0].fields)
        })
        .collect::<Result<_, _>>()?;
    check(records.len() == 3, || "three runs".into())?;
    let reports = compare_runs(&records).map_err(|e| e.to_string())?;
    let divergent: Vec<&str> = reports
        .iter()
        .filter(|r| r.status == FieldStatus::Divergent)
        .map(|r| r.field.as_str())
        .collect();
    check(divergent == ["final_recommendation", "budget_impact_outcome"], || format!("divergent {divergent:?}"))?;
    let consistent = reports.iter().filter(|r| r.status == FieldStatus::Consistent).count();
    check(consistent == 12, || format!("{consistent} consistent fields"))?;
    Ok("14 fields; divergent exactly final_recommendation, budget_impact_outcome; 12 consistent".into())
}

// ---------------------------------------------------------------------------
// 5. NAICS machinery

fn naics() -> Outcome {
    let table = NaicsTable::shipped();
    check(table.len() == 311, || format!("table has {} codes", table.len()))?;
    let projects: Vec<String> = (1..=540).map(|i| format!("ks{i:04}")).collect();
    let raters: Vec<String> = (1..=6).map(|i| format!("rater{i}")).collect();
    let a = assign_raters(&projects, &raters).map_err(|e| e.to_string())?;
    check(a.by_project.len() == 540 && a.by_project.values().all(|[x, y]| x != y), || "two distinct raters per project".into())?;
    check(a.by_rater.values().all(|v| v.len() == 180), || "180 per rater".into())?;
    check(a.total_ratings() == 1080, || format!("{} ratings", a.total_ratings()))?;

    let ratings = parse_ratings_csv(&read_fixture("kickstarter/ratings.csv"), &table).map_err(|e| e.to_string())?;
    let report = pairwise_agreement(&ratings);
    let pair = |a: &str, b: &str| report.get(&(a.to_string(), b.to_string())).cloned();
    let ga = pair("genai", "raterA").ok_or("no genai/raterA pair")?;
    let bc = pair("raterB", "raterC").ok_or("no raterB/raterC pair")?;
    check((ga.shared, ga.matched) == (145, 77), || format!("genai/raterA {}/{}", ga.matched, ga.shared))?;
    check((bc.shared, bc.matched) == (63, 38), || format!("raterB/raterC {}/{}", bc.matched, bc.shared))?;
    check((ga.fraction - 0.53).abs() <= 0.005, || format!("genai/raterA fraction {}", ga.fraction))?;
    check((bc.fraction - 0.60).abs() <= 0.005, || format!("raterB/raterC fraction {}", bc.fraction))?;
    let best = |human_pair: bool| {
        report
            .iter()
            .filter(|((x, y), _)| (x == "genai" || y == "genai") != human_pair)
            .map(|(_, p)| p.fraction)
            .fold(0.0, f64::max)
    };
    check(best(false) == ga.fraction && best(true) == bc.fraction, || "fixture pairs are not the best pairs".into())?;
    Ok(format!(
        "311 codes; 540x6 -> 180 each, 1080 total; {}/{} = {:.3}, {}/{} = {:.3}",
        ga.matched, ga.shared, ga.fraction, bc.matched, bc.shared, bc.fraction
    ))
}

// ---------------------------------------------------------------------------
// 6. Property suites

fn runner() -> TestRunner {
    let config = ProptestConfig {
        cases: PROPTEST_CASES,
        failure_persistence: None,
        ..ProptestConfig::default()
    };
    TestRunner::new_with_rng(config, TestRng::from_seed(RngAlgorithm::ChaCha, &SEED))
}

fn prop<S: Strategy>(name: &str, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String>
where
    S::Value: std::fmt::Debug,
{
    runner().run(&strategy, test).map_err(|e| format!("{name}: {e}"))
}

fn chunker_property() -> Result<(), String> {
    let line = prop_oneof![Just(String::new()), "[a-z ]{1,40}", "[a-zé,\"]{1,12}"];
    let strategy = (
        prop::collection::vec(line, 0..60),
        any::<bool>(),
        prop_oneof![Just(Boundary::Line), Just(Boundary::BlankLine), Just(Boundary::CsvRow)],
        20u64..400,
        1u64..20,
        1.0f64..6.0,
        0.0f64..0.5,
    );
    prop("chunker", strategy, |(lines, trailing, boundary, max_input, max_records, cpt, margin)| {
        let mut text = lines.join("\n");
        if trailing {
            text.push('\n');
        }
        let doc = SourceDocument::new("d", text.clone());
        let budget = Budget {
            max_input_tokens: max_input,
            max_output_tokens: max_records * 10,
            instruction_tokens: 10,
            per_record_output_tokens: 10,
        };
        let est = TokenEstimatorConfig { chars_per_token: cpt, safety_margin: margin };
        let limit = budget.effective_input_budget(&est);
        match plan_chunks(&doc, &budget, &est, boundary) {
            Ok(plan) => {
                prop_assert_eq!(plan.reassemble(), text.clone());
                let mut pos = 0;
                for (i, c) in plan.chunks.iter().enumerate() {
                    prop_assert_eq!(c.index, i);
                    prop_assert_eq!(c.char_start, pos);
                    pos = c.char_end;
                    prop_assert!(c.estimated_tokens <= limit);
                    prop_assert!(!c.text.is_empty());
                    // only an indivisible unit may exceed the output budget
                    if c.record_count_estimate > budget.max_records() {
                        let split = plan_chunks(&SourceDocument::new("u", c.text.clone()), &budget, &est, boundary).unwrap();
                        prop_assert_eq!(split.len(), 1);
                    }
                }
                prop_assert_eq!(pos, text.chars().count());
            }
            Err(ChunkError::OversizedUnit { tokens, budget: b, .. }) => prop_assert!(tokens > b),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        }
        Ok(())
    })
}

fn json_leaf() -> impl Strategy<Value = serde_json::Value> {
    prop_oneof![
        Just(serde_json::Value::Null),
        any::<bool>().prop_map(serde_json::Value::Bool),
        any::<i64>().prop_map(|n| serde_json::json!(n)),
        "[ -~é]{0,16}".prop_map(serde_json::Value::String),
    ]
}

fn json_container() -> impl Strategy<Value = serde_json::Value> {
    json_leaf()
        .prop_recursive(3, 32, 5, |inner| {
            prop_oneof![
                prop::collection::vec(inner.clone(), 0..5).prop_map(serde_json::Value::Array),
                prop::collection::btree_map("[a-z_{}\\[\\]\" ]{0,8}", inner, 0..5)
                    .prop_map(|m| serde_json::Value::Object(m.into_iter().collect())),
            ]
        })
        .prop_filter("containers only", |v| v.is_array() || v.is_object())
}

fn json_property() -> Result<(), String> {
    let strategy = (
        json_container(),
        "[a-zA-Z0-9 .,:;!?'\n]{0,40}",
        "[a-zA-Z0-9 .,:;!?'\n]{0,40}",
        0u8..3,
    );
    prop("json embed", strategy, |(v, prefix, suffix, style)| {
        let body = match style {
            0 => serde_json::to_string(&v).unwrap(),
            1 => serde_json::to_string_pretty(&v).unwrap(),
            _ => format!("```json\n{}\n```", serde_json::to_string_pretty(&v).unwrap()),
        };
        let raw = format!("{prefix}{body}{suffix}");
        prop_assert_eq!(extract_json_value(&raw).map_err(|e| TestCaseError::fail(e.to_string()))?, v);
        Ok(())
    })
}

fn author() -> impl Strategy<Value = String> {
    let single = prop_oneof![
        Just("L.".to_string()),
        Just("DC.".to_string()),
        "[A-Z][a-z]{1,8}\\.",
        "[A-Z][a-z]{2,10}",
        "[A-Z]\\.[A-Z][a-z]{1,6}\\.",
    ];
    prop_oneof![
        single.clone(),
        (single.clone(), single.clone()).prop_map(|(a, b)| format!("{a} & {b}")),
        (single.clone(), single).prop_map(|(a, b)| format!("{a} ex {b}")),
    ]
}

fn species_name() -> impl Strategy<Value = SpeciesName> {
    let word = "[a-z]{3,12}";
    (
        "[A-Z][a-z]{2,11}",
        prop::option::weighted(0.95, prop_oneof![word.prop_map(String::from), "[a-z]{3,8}-[a-z]{3,8}"]),
        prop::option::weighted(0.2, word),
        prop::option::weighted(0.2, word),
        prop::option::weighted(0.1, word),
        prop::option::weighted(0.15, "[A-Z][a-z]{2,8}( [A-Z][a-z]{2,8})?"),
        prop::option::weighted(0.3, author().prop_map(|a| format!("({a})"))),
        prop::option::weighted(0.8, author()),
        prop::option::weighted(0.1, ("[A-Z][a-z]{2,11}", word, author()).prop_map(|(g, e, a)| format!("{g} {e} {a}"))),
    )
        .prop_map(|(genus, epithet, subspecies, variety, form, cultivar, basionym_authors, authors, synonym)| SpeciesName {
            genus,
            epithet,
            subspecies,
            variety,
            form,
            cultivar,
            basionym_authors,
            authors,
            synonym,
        })
}

fn name_property() -> Result<(), String> {
    prop("species name round trip", species_name(), |name| {
        let text = format_species_name(&name);
        let back = parse_species_name(&text).map_err(|e| TestCaseError::fail(format!("{text:?}: {e}")))?;
        prop_assert_eq!(&back, &name, "text {:?}", text);
        prop_assert_eq!(format_species_name(&back), text);
        Ok(())
    })
}

/// Fails with the given errors in turn, then succeeds.
struct Flaky {
    failures: Vec<ProviderError>,
    calls: AtomicU32,
}

impl CompletionAdapter for Flaky {
    fn complete(&self, _request: &ModelRequest) -> Result<ModelResponse, ProviderError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst) as usize;
        match self.failures.get(n) {
            Some(e) => Err(e.clone()),
            None => Ok(ModelResponse {
                text: "[]".into(),
                input_tokens: 1,
                output_tokens: 1,
                stop_reason: StopReason::Complete,
            }),
        }
    }
}

fn retry_property() -> Result<(), String> {
    let error = prop_oneof![
        Just(ProviderError::Timeout),
        Just(ProviderError::RateLimited),
        Just(ProviderError::ServerError("503".into())),
        Just(ProviderError::AuthError("bad key".into())),
        Just(ProviderError::InvalidResponse("garbage".into())),
    ];
    let strategy = (prop::collection::vec(error, 0..12), 1u32..8, 0u64..2000, 1.0f64..3.0);
    prop("retry bound", strategy, |(failures, max_attempts, initial_ms, mult)| {
        let policy = RetryPolicy {
            max_attempts,
            initial_backoff: Duration::from_millis(initial_ms),
            backoff_multiplier: mult,
            ..RetryPolicy::default()
        };
        let adapter = Flaky { failures: failures.clone(), calls: AtomicU32::new(0) };
        let clock = ManualClock::new();
        let request = ModelRequest::new("m", 10, "p");
        let outcome = complete_with_retry(&adapter, &request, &policy, &clock);
        let calls = adapter.calls.load(Ordering::SeqCst);
        prop_assert!(calls >= 1 && calls <= max_attempts);
        prop_assert_eq!(clock.sleeps().len() as u32, calls - 1);
        let first_fatal = failures.iter().position(|e| e.class().is_none());
        let retryable_prefix = first_fatal.unwrap_or(failures.len());
        match outcome {
            Ok(o) => {
                prop_assert_eq!(o.attempts, calls);
                prop_assert_eq!(calls as usize, failures.len() + 1);
                prop_assert!(first_fatal.is_none());
            }
            Err(ProviderError::RetriesExhausted { attempts, last }) => {
                prop_assert_eq!(attempts, max_attempts);
                prop_assert!(last.class().is_some());
                prop_assert!(retryable_prefix >= max_attempts as usize);
            }
            Err(e) => {
                prop_assert!(e.class().is_none());
                prop_assert_eq!(Some(calls as usize - 1), first_fatal);
            }
        }
        Ok(())
    })
}

fn rate_property() -> Result<(), String> {
    let strategy = (
        prop::collection::vec((0u64..400, 0u64..30_000), 1..60),
        100u64..1000,
        1u64..12,
    );
    prop("rate window", strategy, |(requests, tpm, rpm)| {
        let limiter = RateLimiter::new(RateBudget { tokens_per_minute: tpm, requests_per_minute: rpm });
        let clock = ManualClock::new();
        let mut admitted: Vec<(Duration, u64)> = Vec::new();
        for (tokens, gap_ms) in requests {
            clock.advance(Duration::from_millis(gap_ms));
            match limiter.acquire(tokens, &clock) {
                Ok(()) => admitted.push((clock.now(), tokens)),
                Err(ProviderError::Unadmittable { .. }) => prop_assert!(tokens > tpm),
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            }
        }
        for (i, &(t, _)) in admitted.iter().enumerate() {
            let window: Vec<u64> = admitted[..=i].iter().filter(|(s, _)| *s + WINDOW > t).map(|a| a.1).collect();
            prop_assert!(window.iter().sum::<u64>() <= tpm);
            prop_assert!(window.len() as u64 <= rpm);
        }
        Ok(())
    })
}

fn permutation_property() -> Result<(), String> {
    let strategy = prop::collection::vec(0u8..4, 2..9).prop_flat_map(|v| {
        let n = v.len();
        (Just(v), Just((0..n).collect::<Vec<_>>()).prop_shuffle())
    });
    prop("consistency permutation", strategy, |(values, order)| {
        let permuted: Vec<u8> = order.iter().map(|&i| values[i]).collect();
        let a = consistency("k", &values).unwrap();
        let b = consistency("k", &permuted).unwrap();
        prop_assert_eq!(a.agreement, b.agreement);
        prop_assert_eq!(a.majority, b.majority);
        prop_assert_eq!(a.tie, b.tie);
        Ok(())
    })
}

fn property_suites() -> Outcome {
    let start = Instant::now();
    let suites: [(&str, fn() -> Result<(), String>); 6] = [
        ("chunker", chunker_property),
        ("json", json_property),
        ("names", name_property),
        ("retry", retry_property),
        ("rate", rate_property),
        ("permutation", permutation_property),
    ];
    for (_, suite) in suites {
        suite()?;
    }
    within(start.elapsed(), Duration::from_secs(60))?;
    let names: Vec<&str> = suites.iter().map(|s| s.0).collect();
    Ok(format!("{} suites x {PROPTEST_CASES} cases, 0 failures ({names:?})", suites.len()))
}

// ---------------------------------------------------------------------------
// 7. CER oracle

/// Edit distance by plain recursion over (i, j), memoised.
fn brute_distance(a: &[char], b: &[char], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
    if i == a.len() {
        return b.len() - j;
    }
    if j == b.len() {
        return a.len() - i;
    }
    if let Some(&d) = memo.get(&(i, j)) {
        return d;
    }
    let d = if a[i] == b[j] {
        brute_distance(a, b, i + 1, j + 1, memo)
    } else {
        1 + brute_distance(a, b, i + 1, j, memo)
            .min(brute_distance(a, b, i, j + 1, memo))
            .min(brute_distance(a, b, i + 1, j + 1, memo))
    };
    memo.insert((i, j), d);
    d
}

fn cer_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = rand::rngs::StdRng::from_seed(SEED);
    let alphabet: Vec<char> = "abcde .éß".chars().collect();
    let string = |rng: &mut rand::rngs::StdRng| -> String {
        let n = rng.gen_range(0..=40);
        (0..n).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect()
    };
    for k in 0..500 {
        let cand = string(&mut rng);
        let reference = string(&mut rng);
        let (a, b): (Vec<char>, Vec<char>) = (cand.chars().collect(), reference.chars().collect());
        let got = character_error_rate(&cand, &reference);
        if b.is_empty() {
            check(got == Err(EvalError::EmptyReference), || format!("pair {k}: empty reference accepted"))?;
            continue;
        }
        let want = brute_distance(&a, &b, 0, 0, &mut HashMap::new()) as f64 / b.len() as f64;
        check(got == Ok(want), || format!("pair {k} {cand:?} vs {reference:?}: {got:?} != {want}"))?;
    }
    within(start.elapsed(), Duration::from_secs(10))?;
    Ok("500 pairs agree with the recursive edit distance".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("1 three-run-divergence", three_run_divergence),
        ("2 perfect-page-scoring", perfect_pages),
        ("3 replay-determinism", replay_determinism),
        ("4 hta-schema-consistency", hta_consistency),
        ("5 naics-machinery", naics),
        ("6 property-suites", property_suites),
        ("7 cer-oracle", cer_oracle),
    ];
    let mut failed = 0;
    for (name, criterion) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(criterion)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(msg) => println!("PASS criterion {name}: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {name}: {msg}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
