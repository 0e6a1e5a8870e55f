//! Release gate. One PASS/FAIL line per criterion goes straight to stdout so
//! it shows up even when the harness captures output.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Write;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use proptest::collection::{btree_map, vec};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ragent_core::agent::{Outcome, TaskRun};
use ragent_core::device_sim::{ActionKind, ActionStep, ActionTrace, Effect};
use ragent_core::embedding::{cosine_similarity, embed};
use ragent_core::harness::{
    compute_metrics, load_benchmark, run_benchmark, BenchOptions, BenchRun, BenchStats, BenchmarkPack,
    BenchmarkTask, MetricOptions, ScriptedComponents,
};
use ragent_core::inter_rag::{search, FixtureSearchBackend, RawHit, SearchQuery};
use ragent_core::local_rag::{AppMatch, AppSeed, RetrievalOutcome};
use ragent_core::mem_rag::MemoryHit;
use ragent_core::{Action, AppIndex, Embedding, HashedTokenEmbedder, MemoryStore};
use serde_json::json;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn desk() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../packs/desk")
}

fn load_desk() -> Result<BenchmarkPack, String> {
    load_benchmark(&desk()).map_err(|e| e.to_string())
}

fn bench(pack: &BenchmarkPack, suite: &str, memory: bool, parallelism: usize) -> Result<BenchRun, String> {
    let mut opts = BenchOptions::new(pack.manifest.agent.clone());
    opts.suite = suite.into();
    opts.memory = memory;
    opts.parallelism = parallelism;
    run_benchmark::<f32>(pack, &HashedTokenEmbedder::default(), &ScriptedComponents, &opts).map_err(|e| e.to_string())
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// 1. retrieval equals an exhaustive-sort oracle

const WORDS: &[&str] = &[
    "music", "play", "video", "stream", "alarm", "clock", "timer", "note", "write", "photo", "camera", "map",
    "route", "bus", "train", "weather", "rain", "news", "read", "chat", "message", "call", "mail", "shop",
    "buy", "pay", "bank", "game", "puzzle", "fit", "run", "sleep", "recipe", "cook", "book", "learn", "draw",
    "scan", "file", "cloud",
];

fn phrase(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> String {
    // Signed hashing can cancel a pair of colliding words to a zero vector;
    // those phrases have no embedding, so draw again.
    let e = HashedTokenEmbedder::default();
    loop {
        let n = rng.random_range(lo..=hi);
        let p = (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ");
        if embed::<f32>(&e, &p).is_ok() {
            return p;
        }
    }
}

fn random_catalog(rng: &mut ChaCha8Rng) -> Vec<AppSeed> {
    let n = rng.random_range(1..=500);
    let mut ids: Vec<usize> = (0..n).collect();
    // ids out of insertion order so tie-breaking by id is actually exercised
    ids.shuffle(rng);
    let mut descs: Vec<String> = Vec::with_capacity(n);
    for _ in 0..n {
        let d = if !descs.is_empty() && rng.random_bool(0.25) {
            descs.choose(rng).unwrap().clone()
        } else {
            phrase(rng, 1, 6)
        };
        descs.push(d);
    }
    ids.iter()
        .zip(descs)
        .map(|(id, d)| AppSeed::new(format!("App {id}"), format!("com.rand.a{id:03}"), d))
        .collect()
}

fn oracle_top(index: &AppIndex, q: &Embedding, k: usize) -> (Vec<(String, f64)>, f64) {
    let mut all: Vec<(String, f64)> = index
        .records()
        .iter()
        .map(|r| {
            let mut s = 0.0f64;
            for (a, b) in q.as_slice().iter().zip(r.embedding.as_slice()) {
                s += f64::from(*a) * f64::from(*b);
            }
            (r.package_id.clone(), s.clamp(-1.0, 1.0))
        })
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(&b.0)));
    let best = all[0].1;
    all.truncate(k);
    (all, best)
}

fn retrieval_oracle() -> Check {
    let e = HashedTokenEmbedder::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let start = Instant::now();
    let (mut compared, mut rejections, mut ties) = (0, 0, 0);
    for catalog_no in 0..50 {
        let catalog = random_catalog(&mut rng);
        let threshold = rng.random_range(0.01..0.6);
        let index = AppIndex::build(&catalog, &e, threshold).map_err(|e| e.to_string())?;
        for _ in 0..10 {
            let query = if rng.random_bool(0.3) {
                catalog.choose(&mut rng).unwrap().description.clone()
            } else {
                phrase(&mut rng, 1, 4)
            };
            let q: Embedding = embed(&e, &query).map_err(|e| e.to_string())?;
            let (expected, best) = oracle_top(&index, &q, 3);
            let got = index.retrieve_apps(&e, &query, 3).map_err(|e| e.to_string())?;
            if expected.windows(2).any(|w| w[0].1 == w[1].1) {
                ties += 1;
            }
            match got {
                RetrievalOutcome::NoLocalApp { best_score } => {
                    ensure(best < threshold && best_score == Some(best), || {
                        format!("catalog {catalog_no} {query:?}: rejected, oracle best {best} vs threshold {threshold}")
                    })?;
                    rejections += 1;
                }
                RetrievalOutcome::Matches { matches } => {
                    let got: Vec<(String, f64)> =
                        matches.iter().map(|m: &AppMatch| (m.package_id.clone(), m.score)).collect();
                    ensure(best >= threshold && got == expected, || {
                        format!("catalog {catalog_no} {query:?}: got {got:?}, oracle {expected:?}")
                    })?;
                }
            }
            compared += 1;
        }
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(30), || format!("took {took:?}"))?;
    Ok(format!(
        "{compared} queries agree ({ties} with tied scores, {rejections} rejections) in {:.2}s",
        took.as_secs_f64()
    ))
}

// ---------------------------------------------------------------------------
// 2. app selection on the desk pack

fn app_selection() -> Check {
    let start = Instant::now();
    let pack = load_desk()?;
    let run = bench(&pack, "main", false, 1)?;
    let m = &run.report.overall;
    let took = start.elapsed();
    ensure(m.as_pct == 100.0, || format!("AS = {}", m.as_pct))?;
    ensure(took < Duration::from_secs(60), || format!("took {took:?}"))?;
    let picks: usize = m.rows.iter().map(|r| r.selections).sum();
    Ok(format!("AS 100.0 over {picks} selections in {} tasks", m.tasks))
}

// ---------------------------------------------------------------------------
// 3. one step per app opened

fn app_open_cost() -> Check {
    let pack = load_desk()?;
    let run = bench(&pack, "main", false, 1)?;
    let install_cost = pack.manifest.agent.install_step_cost;
    let mut launches_total = 0;
    for (run, task) in run.runs.iter().zip(&pack.tasks) {
        let launches = run.trace.actions().filter(|a| a.kind() == ActionKind::LaunchApp).count();
        ensure(launches == task.ground_truth.expected_apps.len(), || {
            format!("{}: {launches} launches for {} apps", task.task_id, task.ground_truth.expected_apps.len())
        })?;
        ensure(run.counters.mobile_steps == run.trace.len(), || {
            format!("{}: {} steps for {} actions", task.task_id, run.counters.mobile_steps, run.trace.len())
        })?;
        for sel in &run.app_selections {
            let launch = sel.steps - if sel.installed_from_store { install_cost } else { 0 };
            ensure(launch == 1, || format!("{}: opening {} cost {launch} steps", task.task_id, sel.package_id))?;
        }
        launches_total += launches;
    }
    Ok(format!("{launches_total} launches, each exactly 1 step, matching expected apps"))
}

// ---------------------------------------------------------------------------
// 4. retrieval latency

fn latency() -> Check {
    let e = HashedTokenEmbedder::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let catalog: Vec<AppSeed> = (0..1000)
        .map(|i| AppSeed::new(format!("App {i}"), format!("com.synth.a{i:04}"), phrase(&mut rng, 5, 12)))
        .collect();
    let index = AppIndex::build(&catalog, &e, 0.01).map_err(|e| e.to_string())?;
    let queries: Vec<String> = (0..1000).map(|_| phrase(&mut rng, 2, 6)).collect();
    let mut times: Vec<Duration> = queries
        .iter()
        .map(|q| {
            let t = Instant::now();
            let r = index.retrieve_apps(&e, q, 3);
            let d = t.elapsed();
            assert!(r.is_ok());
            d
        })
        .collect();
    times.sort();
    let median = times[times.len() / 2];
    let p99 = times[times.len() * 99 / 100];
    let ms = |d: Duration| d.as_secs_f64() * 1e3;
    ensure(median <= Duration::from_millis(5) && p99 <= Duration::from_millis(25), || {
        format!("median {:.3} ms, p99 {:.3} ms", ms(median), ms(p99))
    })?;
    Ok(format!("median {:.3} ms, p99 {:.3} ms over 1000 queries", ms(median), ms(p99)))
}

// ---------------------------------------------------------------------------
// 5. second pass replays from memory

fn memory_replay() -> Check {
    let pack = load_desk()?;
    let run = bench(&pack, "repeat", true, 1)?;
    let suite = pack.suite("repeat").map_err(|e| e.to_string())?;
    let tasks = pack.suite_tasks(&suite).map_err(|e| e.to_string())?;
    ensure(suite.passes == 2 && run.runs.len() == 2 * tasks.len(), || "repeat suite is not two passes".into())?;
    let (first, second) = run.runs.split_at(tasks.len());
    for (a, b) in first.iter().zip(second) {
        ensure(a.outcome == Outcome::Success, || format!("{}: first pass failed", a.task_id))?;
        ensure(b.counters.memory_hit == MemoryHit::Exact, || format!("{}: no exact hit", b.task_id))?;
        ensure(b.counters.planner_calls == 0, || {
            format!("{}: {} planner calls on replay", b.task_id, b.counters.planner_calls)
        })?;
        ensure(b.counters.mobile_steps == a.trace.len(), || {
            format!("{}: {} steps vs committed {}", b.task_id, b.counters.mobile_steps, a.trace.len())
        })?;
    }
    let p = &run.report.passes;
    ensure(p[1].avg_mobile_steps <= p[0].avg_mobile_steps, || {
        format!("avg steps {} -> {}", p[0].avg_mobile_steps, p[1].avg_mobile_steps)
    })?;
    Ok(format!(
        "{} replays with 0 planner calls; avg steps {:.2} -> {:.2}, avg calls {:.2} -> {:.2}",
        second.len(),
        p[0].avg_mobile_steps,
        p[1].avg_mobile_steps,
        p[0].avg_planner_calls,
        p[1].avg_planner_calls
    ))
}

// ---------------------------------------------------------------------------
// 6. memory routing at 0.8

fn routing() -> Check {
    let e = HashedTokenEmbedder::default();
    let stop = || {
        let mut t = ActionTrace::default();
        t.steps.push(ActionStep {
            action: Action::Stop { success: true },
            pre_screen: "home".into(),
            post_screen: "home".into(),
            effect: Effect::NoOp,
        });
        t
    };
    // (stored, query, expected similarity band, expected route)
    let cases = [
        (
            "open the weather app for paris",
            "  Open the WEATHER app for Paris!",
            None,
            MemoryHit::Exact,
        ),
        (
            "alpha bravo charlie delta echo foxtrot golf",
            "alpha bravo charlie delta echo foxtrot hotel",
            Some(0.85),
            MemoryHit::Similar,
        ),
        (
            "alpha bravo charlie delta echo foxtrot golf hotel",
            "alpha bravo charlie delta echo",
            Some(0.79),
            MemoryHit::None,
        ),
    ];
    let mut seen = Vec::new();
    for (stored, query, band, want) in cases {
        let mut store: MemoryStore = MemoryStore::new(&e, 0.8).map_err(|e| e.to_string())?;
        store.commit(&e, stored, stop()).map_err(|e| e.to_string())?;
        let sim = cosine_similarity::<f32>(
            &embed(&e, stored).map_err(|e| e.to_string())?,
            &embed(&e, query).map_err(|e| e.to_string())?,
        )
        .map_err(|e| e.to_string())?;
        if let Some(target) = band {
            ensure((sim - target).abs() <= 0.02, || format!("{query:?}: similarity {sim:.4} outside {target}±0.02"))?;
        }
        let got = store.lookup(&e, query).map_err(|e| e.to_string())?.kind();
        ensure(got == want, || format!("{query:?} (sim {sim:.4}) routed {got:?}, want {want:?}"))?;
        seen.push(format!("{sim:.3}->{got:?}"));
    }
    Ok(seen.join(", "))
}

// ---------------------------------------------------------------------------
// 7. metric formulas against a hand tally

fn screen() -> serde_json::Value {
    json!({"foreground_package": null, "screen_id": "home", "elements": [], "state_flags": {}})
}

fn step(action: serde_json::Value, effect: &str) -> serde_json::Value {
    json!({"action": action, "pre_screen": "x", "post_screen": "y", "effect": effect})
}

fn metric_fixture() -> Result<(Vec<TaskRun>, Vec<BenchmarkTask>), serde_json::Error> {
    let launch = |p: &str| json!({"kind": "launch_app", "package": p});
    let tap = |t: &str| json!({"kind": "tap", "target": t});
    let stop = |s: bool| json!({"kind": "stop", "success": s});
    let flag = |f: &str, v: &str| json!({"name": f, "predicate": {"kind": "flag_equals", "flag": f, "value": v}});
    let seen = |p: &str, s: &str| json!({"name": s, "predicate": {"kind": "screen_visited", "package": p, "screen": s}});
    let sel = |p: &str, ok: bool| json!({"query": "q", "package_id": p, "installed_from_store": ok, "steps": 1});
    let refl = |step: usize, ok: bool| json!({"step": step, "verdict": {"ok": ok}});
    let counters = |n: usize| {
        json!({"planner_calls": n, "mobile_steps": n, "searches": 0, "installs": 0, "memory_hit": "none"})
    };

    let tasks = json!([
        {
            "task_id": "t1", "instruction": "one", "tier": "atomic", "scenario": "s",
            "ground_truth": {
                "expected_apps": ["a"],
                "expected_actions": [launch("a"), tap("x"), {"kind": "type", "target": "y", "text": "hi"}, stop(true)],
                "sub_goals": [flag("f", "1"), seen("a", "s2")]
            }
        },
        {
            "task_id": "t2", "instruction": "two", "tier": "multi_app", "scenario": "s",
            "ground_truth": {
                "expected_apps": ["a", "b"],
                "expected_actions": [launch("a"), tap("p"), launch("b"), tap("q"), stop(true)],
                "sub_goals": [flag("g", "1"), flag("h", "1"), seen("b", "done")]
            }
        },
        {
            "task_id": "t3", "instruction": "three", "tier": "open_scenario", "scenario": "s",
            "ground_truth": {
                "expected_apps": ["d"],
                "expected_actions": [{"kind": "install", "package": "d"}, launch("d"), tap("r"), stop(true)],
                "sub_goals": [flag("k", "1")]
            }
        }
    ]);
    let runs = json!([
        {
            "task_id": "t1", "instruction": "one", "outcome": "success",
            "trace": [
                step(launch("a"), "transitioned"),
                step(tap("x"), "transitioned"),
                step(tap("z"), "no_op"),
                step(json!({"kind": "type", "target": "y", "text": "hi"}), "flag_update"),
                step(stop(true), "no_op")
            ],
            "app_selections": [sel("a", false)],
            "reflections": [refl(1, true), refl(2, true), refl(3, true)],
            "counters": counters(5),
            "observed": {"visited": ["a/s2"], "flag_history": {"f": ["0", "1"]}},
            "final_screen": screen()
        },
        {
            "task_id": "t2", "instruction": "two", "outcome": "failure",
            "trace": [
                step(launch("a"), "transitioned"),
                step(tap("p"), "transitioned"),
                step(launch("c"), "transitioned"),
                step(tap("q"), "no_op"),
                step(stop(false), "no_op")
            ],
            "app_selections": [sel("a", false), sel("c", false)],
            "reflections": [refl(1, true), refl(3, false)],
            "counters": counters(5),
            "observed": {"visited": ["a/main"], "flag_history": {"g": ["1"], "h": ["0"]}},
            "final_screen": screen()
        },
        {
            "task_id": "t3", "instruction": "three", "outcome": "budget_exhausted",
            "trace": [
                step(json!({"kind": "install", "package": "d"}), "transitioned"),
                step(launch("d"), "transitioned")
            ],
            "app_selections": [sel("d", true)],
            "reflections": [],
            "counters": counters(2),
            "observed": {"visited": [], "flag_history": {}},
            "final_screen": screen()
        }
    ]);
    Ok((serde_json::from_value(runs)?, serde_json::from_value(tasks)?))
}

fn metric_oracle() -> Check {
    let (runs, tasks) = metric_fixture().map_err(|e| e.to_string())?;
    let refs: Vec<&BenchmarkTask> = tasks.iter().collect();
    let m = compute_metrics(&runs, &refs, &MetricOptions::default()).map_err(|e| e.to_string())?;
    // Tallied by hand:
    //   AS  selections correct 1 + 1 + 1 of 1 + 2 + 1     = 3/4
    //   AF  LCS matches       4 + 3 + 2 of 4 + 5 + 4      = 9/13
    //   RP  verdicts agreeing 2 + 2 + 0 of 3 + 2 + 0      = 4/5
    //   TCR sub-goals met     2 + 1 + 0 of 2 + 3 + 1      = 3/6
    //   TSR successes         1 of 3
    let want = [("AS", 75.0), ("AF", 69.23), ("RP", 80.0), ("TCR", 50.0), ("TSR", 33.33)];
    let got = [m.as_pct, m.af_pct, m.rp_pct, m.tcr_pct, m.tsr_pct];
    for ((name, w), g) in want.iter().zip(got) {
        ensure((w - g).abs() <= 0.1, || format!("{name}: {g:.3} vs hand tally {w}"))?;
    }
    Ok(want
        .iter()
        .zip(got)
        .map(|((n, _), g)| format!("{n} {g:.2}"))
        .collect::<Vec<_>>()
        .join(", "))
}

// ---------------------------------------------------------------------------
// 8. byte-identical reports

fn determinism() -> Check {
    let pack = load_desk()?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut sizes = Vec::new();
    for (suite, memory) in [("main", false), ("repeat", true)] {
        let mut reports = Vec::new();
        for (i, threads) in [1usize, 4].into_iter().enumerate() {
            let out = dir.path().join(format!("{suite}-{i}"));
            bench(&pack, suite, memory, threads)?.write_outputs(&out).map_err(|e| e.to_string())?;
            reports.push(std::fs::read(out.join("report.json")).map_err(|e| e.to_string())?);
        }
        ensure(reports[0] == reports[1], || format!("{suite}: report.json differs between runs"))?;
        sizes.push(format!("{suite} {} bytes", reports[0].len()));
    }
    Ok(format!("identical report.json ({})", sizes.join(", ")))
}

// ---------------------------------------------------------------------------
// 9. frozen pack statistics

fn pack_stats() -> Check {
    let pack = load_desk()?;
    let frozen = &pack.manifest.stats;
    ensure(pack.stats == *frozen, || format!("loader computed {:?}, manifest says {frozen:?}", pack.stats))?;

    // independent recount straight from the task and scenario files
    let mut tiers = BTreeMap::<String, usize>::new();
    let mut total = 0;
    for id in &pack.manifest.tasks {
        let raw: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(desk().join("tasks").join(format!("{id}.json"))).map_err(|e| e.to_string())?,
        )
        .map_err(|e| e.to_string())?;
        *tiers.entry(raw["tier"].as_str().unwrap_or_default().to_string()).or_default() += 1;
        total += raw["ground_truth"]["expected_actions"].as_array().map_or(0, Vec::len);
    }
    let mut apps = BTreeSet::new();
    for s in pack.scenarios.values() {
        for a in s.installed_apps.iter().chain(&s.store_catalog) {
            apps.insert(a.package_id.clone());
        }
    }
    let n = pack.manifest.tasks.len();
    let recount = BenchStats {
        tasks: n,
        multi_app_tasks: tiers.get("multi_app").copied().unwrap_or(0),
        no_app_tasks: tiers.get("open_scenario").copied().unwrap_or(0),
        apps: apps.len(),
        avg_ops: total as f64 / n as f64,
        total_ops: total,
    };
    ensure(recount == *frozen, || format!("recount {recount:?} vs frozen {frozen:?}"))?;
    let drift = (frozen.avg_ops * frozen.tasks as f64 - frozen.total_ops as f64).abs();
    ensure(drift <= 1e-9, || format!("avg_ops x tasks off by {drift}"))?;
    Ok(format!(
        "{} tasks, {} multi-app, {} open, {} apps, {:.2} avg ops, {} total",
        frozen.tasks, frozen.multi_app_tasks, frozen.no_app_tasks, frozen.apps, frozen.avg_ops, frozen.total_ops
    ))
}

// ---------------------------------------------------------------------------
// 10. web search contract

fn hit_strategy() -> impl Strategy<Value = RawHit> {
    ("[a-z ]{0,12}", "[a-z ]{0,40}", 0..15u8).prop_map(|(title, summary, u)| RawHit {
        title,
        summary,
        url: format!("https://example.org/{u}"),
    })
}

fn search_contract() -> Check {
    let keys = prop::sample::select(vec!["paris weather", "squid game", "olympics", "bitcoin price", "piano"]);
    let strategy = (
        btree_map(keys.clone(), vec(hit_strategy(), 0..30), 0..5),
        keys,
        0..25usize,
        1..80usize,
    );
    let mut runner = TestRunner::new(Config {
        cases: 200,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&strategy, |(entries, query, k, limit)| {
            let entries = entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
            let backend = FixtureSearchBackend::new(entries);
            let q = SearchQuery {
                text: query.to_string(),
                origin_instruction: query.to_string(),
                unknown_entities: vec![],
            };
            let a = search(&backend, &q, k, limit).unwrap();
            prop_assert!(a.results.len() <= 10 && a.results.len() <= k);
            let urls: HashSet<&str> = a.results.iter().map(|r| r.url.as_str()).collect();
            prop_assert_eq!(urls.len(), a.results.len());
            let b = search(&backend, &q, k, limit).unwrap();
            prop_assert_eq!(a, b);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("200 random fixture configurations: <= 10 results, unique urls, idempotent".into())
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 10] = [
        ("retrieval matches exhaustive oracle", retrieval_oracle),
        ("app selection 100 on desk pack", app_selection),
        ("one step per app launch", app_open_cost),
        ("retrieval latency", latency),
        ("memory replay on repeat suite", memory_replay),
        ("memory threshold routing", routing),
        ("metric formulas vs hand tally", metric_oracle),
        ("deterministic report.json", determinism),
        ("pack statistics", pack_stats),
        ("web search contract", search_contract),
    ];
    let mut out = std::io::stdout().lock();
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let line = match check() {
            Ok(detail) => format!("PASS  {:>2}. {name}: {detail}", i + 1),
            Err(why) => {
                failed.push(i + 1);
                format!("FAIL  {:>2}. {name}: {why}", i + 1)
            }
        };
        writeln!(out, "{line}").unwrap();
    }
    writeln!(out, "acceptance: {}/{} criteria pass", criteria.len() - failed.len(), criteria.len()).unwrap();
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
