//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Tolerances and case counts are pinned below.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::{brute_cycles, brute_longest, brute_mst_weight, brute_shortest, random_edges, random_trace, Shape};
use latprof::export::{
    event_records, events_per_second, parse_bulk_ndjson, parse_csv, render_perf_script, render_text_report,
    to_bulk_ndjson, to_csv, utilization_pie, DEFAULT_INDEX,
};
use latprof::locks::{build_lock_order_graph, detect_deadlock_risk, DEFAULT_MAX_CYCLE_LEN};
use latprof::num::parse_decimal;
use latprof::parse::{parse_gprof_flat, parse_mutrace, parse_oprofile_flat, parse_perf_script};
use latprof::profile::{build_call_graph, flat_profile, ProfileKey};
use latprof::sched::build_timelines;
use latprof::sim::{replay_check, simulate, SimConfig};
use latprof::{FlatProfile, FlatProfileRow, Graph, GraphError, GroupBy, ParseMode, PieKeyMode, Rational, SampleFilter};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SIM_DRAWS: usize = 120;
const SIM_BUDGET: Duration = Duration::from_secs(10);
const CONSERVATION_SETS: usize = 1000;
const PERCENT_TOLERANCE: f64 = 0.01;
const PIE_TOLERANCE: f64 = 1e-9;
const GRAPH_DRAWS: usize = 250;
const GRAPH_BUDGET: Duration = Duration::from_secs(5);
const DEADLOCK_SEEDS: u64 = 100;

const MUTRACE_LISTING: &str = "Mutex #   Locked  Changed    Cont. tot.Time[ms] avg.Time[ms] max.Time[ms]  Flags
       0        8        4        4    45381.448     5672.681     6303.132 M-.?-.
";

const GPROF_LISTING: &str = "
 time   seconds   seconds    calls  ms/call  ms/call  name
 41.64      0.12     0.12                             main
 31.23      0.21     0.09        1    90.56    90.56  foo()
 26.02      0.29     0.08        1    75.47   166.02  bar()
  0.00      0.29     0.00        3     0.00     0.00  std::operator|(std::_Ios_Openmode, std::_Ios_Openmode)
  0.00      0.29     0.00        1     0.00     0.00  _GLOBAL__sub_I__Z3foov
  0.00      0.29     0.00        1     0.00     0.00  __static_initialization_and_destruction_0(int, int)
";

const OPROFILE_LISTING: &str =
    "Function\t\ne1000_intr\t13 .32\te1000 \ntcp_v4_rcv\t8 .23\tvmlinux \nmain\t5 .47\trcv22\n";

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn d(s: &str) -> Rational {
    parse_decimal(s).expect("decimal literal")
}

fn check(cond: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what())
    }
}

fn reference_listings() -> Outcome {
    let m = parse_mutrace(MUTRACE_LISTING, ParseMode::Strict).map_err(|e| e.to_string())?.items;
    check(m.len() == 1, || format!("mutrace rows: {}", m.len()))?;
    let m = &m[0];
    let got = (m.locked, m.changed, m.contended, m.total_ms, m.avg_ms, m.max_ms);
    let want = (8, 4, 4, d("45381.448"), d("5672.681"), d("6303.132"));
    check(got == want, || format!("mutrace row {got:?}"))?;
    check(m.avg_ms == m.total_ms / Rational::from_integer(8), || "avg != total / locked".into())?;

    let g = parse_gprof_flat(GPROF_LISTING, ParseMode::Strict).map_err(|e| e.to_string())?.items;
    check(g.len() == 6, || format!("gprof rows: {}", g.len()))?;
    let main = &g[0];
    check(
        (main.percent_time, main.cumulative_s, main.self_s, main.calls, main.name.as_str())
            == (d("41.64"), d("0.12"), d("0.12"), None, "main"),
        || format!("gprof main row {main:?}"),
    )?;
    let bar = &g[2];
    check(
        (bar.percent_time, bar.cumulative_s, bar.self_s, bar.calls, bar.self_ms_per_call, bar.total_ms_per_call)
            == (d("26.02"), d("0.29"), d("0.08"), Some(1), Some(d("75.47")), Some(d("166.02")))
            && bar.name == "bar()",
        || format!("gprof bar row {bar:?}"),
    )?;

    let o = parse_oprofile_flat(OPROFILE_LISTING, ParseMode::Strict).map_err(|e| e.to_string())?.items;
    let o: Vec<(&str, Rational, &str)> = o.iter().map(|r| (r.symbol.as_str(), r.percent, r.image.as_str())).collect();
    let want =
        vec![("e1000_intr", d("13.32"), "e1000"), ("tcp_v4_rcv", d("8.23"), "vmlinux"), ("main", d("5.47"), "rcv22")];
    check(o == want, || format!("oprofile rows {o:?}"))?;

    // Prebuilt profile rows keep their descending order in the report.
    let rows = ["10.09", "29.88", "17.53"]
        .iter()
        .enumerate()
        .map(|(i, p)| FlatProfileRow {
            key: ProfileKey { comm: Some(format!("cmd{i}")), dso: None, symbol: None },
            samples: 0,
            weight: 0,
            percent: d(p),
        })
        .collect();
    let report = render_text_report(Some(&FlatProfile::prebuilt(GroupBy::COMM, rows)), None, &[], 10);
    let order: Vec<usize> =
        ["29.88%", "17.53%", "10.09%"].iter().map(|p| report.find(p).unwrap_or(usize::MAX)).collect();
    check(order[0] < order[1] && order[1] < order[2] && order[2] != usize::MAX, || format!("report order:\n{report}"))?;
    let report = render_text_report(None, None, &parse_mutrace(MUTRACE_LISTING, ParseMode::Strict).unwrap().items, 10);
    check(report.contains("Locked  Changed    Cont."), || "lock table header".into())?;

    Ok("mutrace row, 6 gprof rows, 3 oprofile rows, report ordering".into())
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0002);
    let mut compared = 0;
    for draw in 0..SIM_DRAWS {
        let cfg = SimConfig {
            producers: rng.gen_range(1..=4),
            consumers: rng.gen_range(1..=4),
            capacity: rng.gen_range(1..=8),
            items_per_producer: rng.gen_range(1..=50),
            jitter: if rng.gen_bool(0.5) { 0.0 } else { 0.2 },
            seed: rng.gen(),
            ..SimConfig::default()
        };
        let out = simulate(&cfg).map_err(|e| format!("draw {draw}: {e}"))?;
        // Through the text format, as a user of the trace file would see it.
        let text = render_perf_script(&out.events);
        let events = parse_perf_script(&text, ParseMode::Strict).map_err(|e| format!("draw {draw}: {e}"))?.items;
        let report = replay_check(&events, &out.truth);
        check(report.is_clean(), || format!("draw {draw} {cfg:?}:\n{}", report.render()))?;
        compared += report.compared;
    }
    let took = start.elapsed();
    check(took < SIM_BUDGET, || format!("took {took:?}"))?;
    Ok(format!("{SIM_DRAWS} configs, {compared} (tid, semaphore) totals exact, {took:.2?}"))
}

fn conservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0003);
    let mut profiled = 0;
    for set in 0..CONSERVATION_SETS {
        let events = random_trace(&mut rng, 80);

        let tl = build_timelines(&events);
        let span = tl.end.as_nanos() - tl.origin.as_nanos();
        for t in tl.threads.values() {
            let sum: u64 = t.intervals.iter().map(|i| i.duration_ns()).sum();
            check(sum == span, || format!("set {set}: tid {} covers {sum} of {span} ns", t.tid))?;
        }

        if let Ok(p) = flat_profile(&events, GroupBy::ALL, &SampleFilter::CpuClock) {
            let total: f64 = p.rows.iter().map(|r| latprof::num::to_f64(&r.percent)).sum();
            check((total - 100.0).abs() <= PERCENT_TOLERANCE, || format!("set {set}: percent sum {total}"))?;
            profiled += 1;
        }

        let h = events_per_second(&events, 1_000_000_000).map_err(|e| e.to_string())?;
        check(h.total() == events.len() as u64, || format!("set {set}: histogram {} of {}", h.total(), events.len()))?;

        for mode in [PieKeyMode::Comm, PieKeyMode::CommDso] {
            match utilization_pie(&events, mode) {
                Ok(pie) => {
                    let sum: f64 = pie.slices.iter().map(|s| s.fraction).sum();
                    check((sum - 1.0).abs() <= PIE_TOLERANCE, || format!("set {set}: pie sum {sum}"))?;
                }
                Err(_) => check(events.is_empty(), || format!("set {set}: pie failed on non-empty input"))?,
            }
        }

        let cg = build_call_graph(&events, &SampleFilter::All);
        let exclusive: u64 = cg.nodes.values().map(|w| w.exclusive).sum();
        let direct: u64 = events.iter().filter(|e| !e.stack.is_empty()).map(|e| e.period.max(1)).sum();
        check(exclusive == cg.total_weight && direct == cg.total_weight, || {
            format!("set {set}: exclusive {exclusive}, total {}, direct {direct}", cg.total_weight)
        })?;
    }
    Ok(format!("{CONSERVATION_SETS} sets x 5 suites ({profiled} with samples)"))
}

fn graph_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0004);
    let mut checks = 0;
    for draw in 0..GRAPH_DRAWS {
        let n = rng.gen_range(1..=7);
        let density = rng.gen_range(0.15..0.6);
        let to_graph = |directed: bool, edges: &[(String, String, Rational)]| {
            Graph::from_edges(directed, edges.iter().map(|(a, b, w)| (a.as_str(), b.as_str(), *w))).unwrap()
        };

        // Shortest path, both orientations.
        for directed in [true, false] {
            let shape = if directed { Shape::Directed } else { Shape::Undirected };
            let edges = random_edges(&mut rng, n, density, shape);
            let g = to_graph(directed, &edges);
            let nodes: Vec<String> = g.nodes().iter().cloned().collect();
            for s in &nodes {
                for t in &nodes {
                    let got = g.shortest_path(s, t);
                    match (brute_shortest(&edges, directed, s, t), got) {
                        (Some(want), Ok(got)) => {
                            check(want == got, || format!("draw {draw} {s}->{t}: {want:?} vs {got:?}"))?
                        }
                        (None, Err(GraphError::Unreachable { .. })) => {}
                        (want, got) => return Err(format!("draw {draw} {s}->{t}: {want:?} vs {got:?}")),
                    }
                    checks += 1;
                }
            }
        }

        // Minimum spanning tree.
        let edges = random_edges(&mut rng, n, density, Shape::Undirected);
        let g = to_graph(false, &edges);
        match (brute_mst_weight(g.nodes(), &edges), g.minimum_spanning_tree()) {
            (Some(w), Ok((tree, got))) => {
                check(w == got && tree.len() + 1 == g.nodes().len().max(1), || format!("draw {draw} mst {w} vs {got}"))?
            }
            (None, Err(GraphError::Disconnected)) => {}
            (want, got) => return Err(format!("draw {draw} mst: {want:?} vs {got:?}")),
        }
        checks += 1;

        // Critical path on a DAG from every node.
        let edges = random_edges(&mut rng, n, density, Shape::Dag);
        let g = to_graph(true, &edges);
        for s in g.nodes().clone() {
            let want = brute_longest(&edges, &s);
            let got = g.critical_path(&s).map_err(|e| format!("draw {draw}: {e}"))?;
            check(want == got, || format!("draw {draw} from {s}: {want:?} vs {got:?}"))?;
            checks += 1;
        }

        // Cycles, self-loops included, bounded length.
        let edges = random_edges(&mut rng, n, density, Shape::Directed);
        let g = to_graph(true, &edges);
        for max_len in [2, 3, DEFAULT_MAX_CYCLE_LEN] {
            let want = brute_cycles(g.nodes(), &edges, max_len);
            let got = g.detect_cycles(max_len).map_err(|e| e.to_string())?;
            check(want == got, || format!("draw {draw} max {max_len}: {want:?} vs {got:?}"))?;
            checks += 1;
        }
    }
    let took = start.elapsed();
    check(took < GRAPH_BUDGET, || format!("took {took:?}"))?;
    Ok(format!("{GRAPH_DRAWS} draws, {checks} comparisons, {took:.2?}"))
}

fn deadlock_demo() -> Outcome {
    let base = SimConfig { producers: 2, consumers: 2, capacity: 1, jitter: 0.2, ..SimConfig::default() };
    let mut deadlocked = Vec::new();
    for seed in 0..DEADLOCK_SEEDS {
        let cfg = SimConfig { seed, inverted_wait_order: true, ..base.clone() };
        let out = simulate(&cfg).map_err(|e| e.to_string())?;
        if out.truth.deadlocked {
            let cycles = detect_deadlock_risk(&build_lock_order_graph(&out.acquisitions), DEFAULT_MAX_CYCLE_LEN);
            check(!cycles.is_empty(), || format!("seed {seed} deadlocked without a lock-order cycle"))?;
            deadlocked.push(seed);
        }
    }
    check(!deadlocked.is_empty(), || "no inverted-order run deadlocked".into())?;
    for seed in 0..DEADLOCK_SEEDS {
        let out = simulate(&SimConfig { seed, ..base.clone() }).map_err(|e| e.to_string())?;
        let t = &out.truth;
        check(t.completion_ns.is_some() && !t.deadlocked && !t.timed_out, || {
            format!("documented order, seed {seed} did not complete")
        })?;
        let expected = u64::from(base.producers * base.items_per_producer);
        check(t.consumed == expected, || format!("seed {seed}: consumed {} of {expected}", t.consumed))?;
    }
    Ok(format!(
        "inverted order deadlocked for {} of {DEADLOCK_SEEDS} seeds (first {}), all cycles found; documented order completed {DEADLOCK_SEEDS}/{DEADLOCK_SEEDS}",
        deadlocked.len(),
        deadlocked[0]
    ))
}

fn run_cli(args: &[&str]) -> Result<(i32, Vec<u8>), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_latprof")).args(args).output().map_err(|e| e.to_string())?;
    Ok((out.status.code().unwrap_or(-1), out.stdout))
}

fn round_trips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0006);
    for set in 0..200 {
        let events = random_trace(&mut rng, 60);
        let records = event_records(&events);

        let bulk = to_bulk_ndjson(&events, DEFAULT_INDEX).map_err(|e| e.to_string())?;
        let docs = parse_bulk_ndjson(&bulk).map_err(|e| format!("set {set}: {e}"))?;
        check(docs.len() == events.len(), || format!("set {set}: {} docs", docs.len()))?;
        for ((doc, rec), ev) in docs.iter().zip(&records).zip(&events) {
            check(doc.record == *rec && doc.ts_ns == ev.ts.as_nanos(), || format!("set {set}: {doc:?} vs {rec:?}"))?;
        }

        let csv = to_csv(&events);
        let back = parse_csv(&csv).map_err(|e| format!("set {set}: {e}"))?;
        check(back == records, || format!("set {set}: csv parse-back differs"))?;
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let trace = dir.path().join("trace.txt");
    let trace2 = dir.path().join("trace2.txt");
    let events = simulate(&SimConfig {
        producers: 3,
        consumers: 2,
        items_per_producer: 20,
        jitter: 0.2,
        seed: 11,
        ..SimConfig::default()
    })
    .map_err(|e| e.to_string())?
    .events;
    std::fs::write(&trace, render_perf_script(&events)).map_err(|e| e.to_string())?;
    std::fs::write(&trace2, render_perf_script(&random_trace(&mut rng, 200))).map_err(|e| e.to_string())?;
    let t = path_str(&trace);
    let t2 = path_str(&trace2);
    let argvs: Vec<Vec<&str>> = vec![
        vec![
            "simulate",
            "--producers",
            "2",
            "--consumers",
            "2",
            "--capacity",
            "4",
            "--items",
            "100",
            "--seed",
            "7",
            "--check",
        ],
        vec!["simulate", "--inverted-wait-order", "--capacity", "1", "--jitter", "0.2", "--seed", "3"],
        vec!["parse", "--input", t],
        vec!["report", "--input", t, "--input", t2, "--top", "10"],
        vec!["offcpu", "--input", t],
        vec!["locks", "--input", t2],
        vec!["export", "--input", t, "--format", "csv"],
        vec!["export", "--input", t, "--input", t2, "--format", "bulk"],
        vec!["export", "--input", t, "--format", "json", "--pie-mode", "comm-dso"],
    ];
    for argv in &argvs {
        let first = run_cli(argv)?;
        let second = run_cli(argv)?;
        check(first.0 == 0, || format!("{argv:?} exited {}", first.0))?;
        check(first == second, || format!("{argv:?} output differs between runs"))?;
        check(!first.1.is_empty(), || format!("{argv:?} printed nothing"))?;
    }
    Ok(format!("200 bulk and csv round-trips; {} CLI invocations byte-identical", argvs.len()))
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn main() {
    let criteria: [Criterion; 6] = [
        ("reference listings", reference_listings),
        ("simulator oracle equivalence", oracle_equivalence),
        ("conservation suites", conservation),
        ("graph brute-force equivalence", graph_equivalence),
        ("deadlock demonstration", deadlock_demo),
        ("format round-trips and determinism", round_trips),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("criterion {}: PASS {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
