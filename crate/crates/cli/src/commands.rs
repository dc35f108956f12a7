use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};

use anyhow::{bail, Context, Result};
use latprof::export::{
    events_per_second, render_json_report, render_perf_script, render_syscall_summary, render_text_report,
    render_wait_details, render_wait_reasons, to_ascii_json, to_bulk_ndjson, to_csv, to_event_ndjson, utilization_pie,
    ExportError, JsonReport,
};
use latprof::graph::Edge;
use latprof::locks::{acquisitions_to_csv, build_lock_order_graph, contention_stats, detect_deadlock_risk, TimeBasis};
use latprof::num::format_fixed;
use latprof::parse::{parse_perf_script, MUTRACE_HEADER};
use latprof::profile::{flat_profile, ProfileError};
use latprof::sched::{attribute_offcpu, build_timelines, futex_acquisitions, summarize_waits, SchedConfig};
use latprof::sim::{replay_check, simulate, SimConfig};
use latprof::{
    FlatProfile, Graph, GroupBy, InputFormat, MutexStats, ParseMode, PieKeyMode, Rational, SampleFilter, TraceEvent,
    WaitKind, WaitSummary,
};
use serde_json::{json, Value};

use crate::input::{load, read_text, InputSpec, Inputs};
use crate::{Command, ExportFormat, Outcome, PieModeArg, SimulateArgs, TimeBasisArg};

pub fn execute(cmd: &Command, stdin: &mut dyn Read, stderr: &mut dyn Write) -> Result<Outcome> {
    match cmd {
        Command::Parse { input } => {
            let inputs = load(&input.spec(), stdin, stderr)?;
            Ok(Outcome::ok(parse_dump(&inputs)))
        }
        Command::Report { input, top, group_by, event } => {
            let inputs = load(&input.spec(), stdin, stderr)?;
            report(&inputs, *top, *group_by, &sample_filter(event), stderr).map(Outcome::ok)
        }
        Command::Offcpu { input, lock_symbols, lookback_us, blocked_only, top_stacks, collapsed } => {
            let inputs = load(&input.spec(), stdin, stderr)?;
            require_perf(&inputs, "offcpu")?;
            let mut cfg = SchedConfig { lookback_ns: lookback_us.saturating_mul(1000), ..SchedConfig::default() };
            if let Some(symbols) = lock_symbols {
                cfg.lock_symbols = symbols.iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
            }
            let summary = wait_summary(&inputs.events, &cfg, *blocked_only, stderr)?;
            let mut out = String::new();
            if *collapsed {
                for (sig, t) in &summary.by_stack {
                    writeln!(out, "{sig} {}", t.total_ns)?;
                }
            } else {
                out.push_str(&render_wait_reasons(Some(&summary)));
                out.push('\n');
                out.push_str(&render_wait_details(&summary, *top_stacks));
            }
            Ok(Outcome::ok(out))
        }
        Command::Locks { input, max_cycle_len, time_basis } => {
            let inputs = load(&input.spec(), stdin, stderr)?;
            let basis = match time_basis {
                TimeBasisArg::Wait => TimeBasis::Wait,
                TimeBasisArg::Hold => TimeBasis::Hold,
            };
            Ok(Outcome::ok(locks(&inputs, *max_cycle_len, basis)))
        }
        Command::Graph { input, undirected, topo, critical_path, shortest, mst, cycles, max_cycle_len } => {
            let text = read_text(input.as_deref(), stdin)?;
            let graph = Graph::parse_edge_list(&text, !undirected)?;
            let mut out = String::new();
            if *topo {
                writeln!(out, "topological order: {}", graph.topo_sort()?.join(" "))?;
            }
            if let Some(source) = critical_path {
                let (path, length) = graph.critical_path(source)?;
                writeln!(out, "critical path: {} (length {})", path.join(" -> "), decimal(&length))?;
            }
            if let Some(ends) = shortest {
                let (path, dist) = graph.shortest_path(&ends[0], &ends[1])?;
                writeln!(out, "shortest path: {} (distance {})", path.join(" -> "), decimal(&dist))?;
            }
            if *mst {
                let (edges, total) = graph.minimum_spanning_tree()?;
                writeln!(out, "minimum spanning tree: {} edge(s), weight {}", edges.len(), decimal(&total))?;
                for Edge { from, to, weight } in &edges {
                    writeln!(out, "  {from} - {to} {}", decimal(weight))?;
                }
            }
            if *cycles {
                let found = graph.detect_cycles(*max_cycle_len)?;
                writeln!(out, "cycles: {}", found.len())?;
                for c in &found {
                    writeln!(out, "  {} -> {}", c.join(" -> "), c[0])?;
                }
            }
            Ok(Outcome::ok(out))
        }
        Command::Simulate(args) => simulate_cmd(args, stderr),
        Command::Export {
            inputs: paths,
            input_format,
            strict,
            format,
            index,
            bin_width,
            pie_mode,
            group_by,
            event,
        } => {
            let spec = InputSpec { paths: paths.clone(), format: input_format.map(Into::into), strict: *strict };
            let inputs = load(&spec, stdin, stderr)?;
            require_perf(&inputs, "export")?;
            let events = &inputs.events;
            let data = match format {
                ExportFormat::Csv => to_csv(events),
                ExportFormat::Bulk => to_bulk_ndjson(events, index)?,
                ExportFormat::Json => {
                    let profile = optional_profile(flat_profile(events, *group_by, &sample_filter(event)))?;
                    let waits = wait_summary(events, &SchedConfig::default(), false, stderr)?;
                    let mutexes = contention_stats(&futex_acquisitions(events), TimeBasis::Wait);
                    let histogram = (!events.is_empty()).then(|| events_per_second(events, *bin_width)).transpose()?;
                    let mode = match pie_mode {
                        PieModeArg::Comm => PieKeyMode::Comm,
                        PieModeArg::CommDso => PieKeyMode::CommDso,
                    };
                    let pie = match utilization_pie(events, mode) {
                        Ok(p) => Some(p),
                        Err(ExportError::EmptyInput) => None,
                        Err(e) => return Err(e.into()),
                    };
                    render_json_report(&JsonReport {
                        profile: profile.as_ref(),
                        waits: (!waits.is_empty()).then_some(&waits),
                        mutexes: &mutexes,
                        histogram: histogram.as_ref(),
                        pie: pie.as_ref(),
                    })
                }
            };
            Ok(Outcome::ok(data))
        }
    }
}

fn require_perf(inputs: &Inputs, verb: &str) -> Result<()> {
    if let Some(other) = inputs.formats.iter().find(|f| **f != InputFormat::Perf) {
        bail!("{verb} needs perf-script input, got {}", other.as_str());
    }
    Ok(())
}

fn sample_filter(event: &str) -> SampleFilter {
    match event {
        "cpu-clock" => SampleFilter::CpuClock,
        "all" => SampleFilter::All,
        other => SampleFilter::Event(other.to_string()),
    }
}

fn optional_profile(result: Result<FlatProfile, ProfileError>) -> Result<Option<FlatProfile>> {
    match result {
        Ok(p) => Ok(Some(p)),
        Err(ProfileError::NoSamples) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn wait_summary(
    events: &[TraceEvent],
    cfg: &SchedConfig,
    blocked_only: bool,
    stderr: &mut dyn Write,
) -> Result<WaitSummary> {
    let timelines = build_timelines(events);
    let n = timelines.anomalies.total();
    if n > 0 {
        writeln!(stderr, "warning: {n} scheduler event(s) did not fit the thread state machine")?;
    }
    let mut intervals = attribute_offcpu(&timelines, events, cfg);
    if blocked_only {
        intervals.retain(|w| w.kind == WaitKind::Blocked);
    }
    Ok(summarize_waits(&intervals))
}

fn report(
    inputs: &Inputs,
    top: usize,
    group_by: GroupBy,
    filter: &SampleFilter,
    stderr: &mut dyn Write,
) -> Result<String> {
    let mut profiles = Vec::new();
    if inputs.has(InputFormat::Perf) {
        profiles.extend(optional_profile(flat_profile(&inputs.events, group_by, filter))?);
    }
    profiles.extend(inputs.gprof.iter().map(|rows| FlatProfile::from_gprof(rows)));
    profiles.extend(inputs.oprofile.iter().map(|rows| FlatProfile::from_image_rows(rows)));
    let mut profile: Option<FlatProfile> = None;
    for p in profiles {
        profile = Some(match profile {
            None => p,
            Some(acc) => acc.merge(&p).context("profiles of different shapes cannot be combined")?,
        });
    }

    let waits = if inputs.has(InputFormat::Perf) {
        Some(wait_summary(&inputs.events, &SchedConfig::default(), false, stderr)?)
    } else {
        None
    };

    let mut mutexes: Vec<MutexStats> = inputs.mutexes.clone();
    let mut acquisitions = inputs.acquisitions.clone();
    acquisitions.extend(futex_acquisitions(&inputs.events));
    mutexes.extend(contention_stats(&acquisitions, TimeBasis::Wait));

    let mut out = render_text_report(profile.as_ref(), waits.as_ref(), &mutexes, top);
    if inputs.has(InputFormat::Strace) {
        out.push('\n');
        out.push_str(&render_syscall_summary(&inputs.syscalls));
    }
    Ok(out)
}

fn locks(inputs: &Inputs, max_cycle_len: usize, basis: TimeBasis) -> String {
    let mut acquisitions = inputs.acquisitions.clone();
    acquisitions.extend(futex_acquisitions(&inputs.events));
    let mut mutexes = inputs.mutexes.clone();
    mutexes.extend(contention_stats(&acquisitions, basis));

    let mut out = String::from("# Lock contention\n");
    if mutexes.is_empty() {
        out.push_str("(no data)\n");
    } else {
        out.push_str(MUTRACE_HEADER);
        out.push('\n');
        for m in &mutexes {
            out.push_str(&latprof::export::format_mutex_row(m));
            out.push('\n');
        }
    }

    out.push_str("\n# Lock order\n");
    let graph = build_lock_order_graph(&acquisitions);
    if graph.edges.is_empty() {
        out.push_str("(no data)\n");
    } else {
        out.push_str(&format!("{:>8} {:>8} {:>8}\n", "Held", "Taken", "Count"));
        for (&(a, b), &n) in &graph.edges {
            out.push_str(&format!("{a:>8} {b:>8} {n:>8}\n"));
        }
    }

    out.push_str("\n# Deadlock risk\n");
    let cycles = detect_deadlock_risk(&graph, max_cycle_len);
    if cycles.is_empty() {
        out.push_str("(none)\n");
    } else {
        for c in &cycles {
            let ids: Vec<String> = c.iter().map(u64::to_string).collect();
            out.push_str(&format!("cycle: {} -> {}\n", ids.join(" -> "), c[0]));
        }
    }
    out
}

fn simulate_cmd(args: &SimulateArgs, stderr: &mut dyn Write) -> Result<Outcome> {
    let cfg = SimConfig {
        producers: args.producers,
        consumers: args.consumers,
        queues: args.queues,
        capacity: args.capacity,
        items_per_producer: args.items,
        produce_time_ns: args.produce_time,
        consume_time_ns: args.consume_time,
        critical_section_ns: args.critical_section,
        seed: args.seed,
        jitter: args.jitter,
        inverted_wait_order: args.inverted_wait_order,
        time_limit_ns: args.time_limit,
    };
    let output = simulate(&cfg)?;
    let truth = &output.truth;
    if truth.deadlocked {
        writeln!(stderr, "note: simulation deadlocked with {} thread(s) blocked", truth.open_blocks.len())?;
    } else if truth.timed_out {
        writeln!(stderr, "note: simulation stopped at the time limit")?;
    }
    if let Some(path) = &args.truth_out {
        fs::write(path, truth.to_json()).with_context(|| format!("cannot write {}", path.display()))?;
    }
    if let Some(path) = &args.acquisitions_out {
        fs::write(path, acquisitions_to_csv(&output.acquisitions))
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    let trace = render_perf_script(&output.events);
    let mut status = 0;
    if args.check {
        // Check what a reader of the file would see, not the in-memory events.
        let parsed = parse_perf_script(&trace, ParseMode::Strict).context("simulated trace does not parse")?;
        let report = replay_check(&parsed.items, truth);
        stderr.write_all(report.render().as_bytes())?;
        if !report.is_clean() {
            status = 1;
        }
    }
    Ok(Outcome { data: trace, status })
}

/// NDJSON, one record per line, in input order.
fn parse_dump(inputs: &Inputs) -> String {
    let mut out = to_event_ndjson(&inputs.events);
    let mut push = |v: Value| {
        out.push_str(&to_ascii_json(&v));
        out.push('\n');
    };
    for rows in &inputs.gprof {
        for r in rows {
            push(json!({
                "percent_time": decimal(&r.percent_time),
                "cumulative_s": decimal(&r.cumulative_s),
                "self_s": decimal(&r.self_s),
                "calls": r.calls,
                "self_ms_per_call": r.self_ms_per_call.as_ref().map(decimal),
                "total_ms_per_call": r.total_ms_per_call.as_ref().map(decimal),
                "name": r.name,
            }));
        }
    }
    for rows in &inputs.oprofile {
        for r in rows {
            push(json!({"symbol": r.symbol, "percent": decimal(&r.percent), "image": r.image}));
        }
    }
    for m in &inputs.mutexes {
        push(json!({
            "mutex_id": m.mutex_id,
            "locked": m.locked,
            "changed": m.changed,
            "contended": m.contended,
            "total_ms": decimal(&m.total_ms),
            "avg_ms": decimal(&m.avg_ms),
            "max_ms": decimal(&m.max_ms),
            "flags": m.flags,
        }));
    }
    for s in &inputs.syscalls {
        push(json!({
            "pid": s.pid,
            "rel_ts": decimal(&s.rel_ts),
            "name": s.name,
            "args": s.args_text,
            "retval": s.retval,
            "wall_duration_s": s.wall_duration_s.as_ref().map(decimal),
        }));
    }
    for a in &inputs.acquisitions {
        push(serde_json::to_value(a).unwrap_or(Value::Null));
    }
    out
}

/// Shortest exact decimal for terminating values, nine places otherwise.
pub fn decimal(value: &Rational) -> String {
    let denom = *value.denom();
    (0..=18u32)
        .find(|&k| 10i128.pow(k) % denom == 0)
        .map(|k| format_fixed(value, k))
        .unwrap_or_else(|| format_fixed(value, 9))
}
