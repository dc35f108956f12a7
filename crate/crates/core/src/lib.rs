//! Offline latency profiling toolkit.
//!
//! The crate turns textual profiler output (perf script, gprof flat profiles,
//! oprofile/xenoprof listings, mutrace summaries and `strace -rT` logs) into
//! domain values, attributes off-CPU time to call stacks and wait reasons,
//! aggregates flat profiles and call graphs, analyzes lock contention and
//! lock-order cycles, and renders dashboard-ready files. A deterministic
//! bounded-buffer simulator produces traces with a known blocked-time ledger
//! so the analyzers can be checked end to end.

pub mod export;
pub mod graph;
pub mod locks;
pub mod model;
pub mod num;
pub mod parse;
pub mod profile;
pub mod sched;
pub mod sim;

pub use export::{EventRecord, HistogramView, PieKeyMode, PieView};
pub use graph::{Graph, GraphError};
pub use locks::{LockAcquisition, LockOrderGraph};
pub use model::{classify_event, EventClass, Frame, Timestamp, TraceEvent, WaitInterval, WaitKind, WaitReason};
pub use num::Rational;
pub use parse::{GprofRow, ImageProfileRow, InputFormat, MutexStats, ParseError, ParseMode, Parsed, SyscallRecord};
pub use profile::{CallGraph, DynamicCallTree, FlatProfile, FlatProfileRow, GroupBy, SampleFilter};
pub use sched::{SchedConfig, ThreadState, ThreadTimeline, Timelines, WaitSummary};
pub use sim::{GroundTruth, ReplayReport, SimConfig, SimOutput};
