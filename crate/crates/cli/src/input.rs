//! Reading and parsing `--input` files.
//!
//! Files are read and parsed on scoped threads; results are merged in the
//! order the files were given, so output never depends on scheduling.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::thread;

use anyhow::{anyhow, bail, Context, Result};
use latprof::locks::parse_acquisitions;
use latprof::parse::{parse_gprof_flat, parse_mutrace, parse_oprofile_flat, parse_perf_script, parse_strace};
use latprof::{
    GprofRow, ImageProfileRow, InputFormat, LockAcquisition, MutexStats, ParseError, ParseMode, SyscallRecord,
    TraceEvent,
};

#[derive(Debug, Clone, Default)]
pub struct InputSpec {
    pub paths: Vec<PathBuf>,
    pub format: Option<InputFormat>,
    pub strict: bool,
}

/// Everything read, concatenated per grammar in input order.
#[derive(Debug, Default)]
pub struct Inputs {
    pub events: Vec<TraceEvent>,
    pub gprof: Vec<Vec<GprofRow>>,
    pub oprofile: Vec<Vec<ImageProfileRow>>,
    pub mutexes: Vec<MutexStats>,
    pub syscalls: Vec<SyscallRecord>,
    pub acquisitions: Vec<LockAcquisition>,
    pub formats: Vec<InputFormat>,
}

impl Inputs {
    pub fn has(&self, format: InputFormat) -> bool {
        self.formats.contains(&format)
    }
}

enum Loaded {
    Perf(Vec<TraceEvent>),
    Gprof(Vec<GprofRow>),
    Oprofile(Vec<ImageProfileRow>),
    Mutrace(Vec<MutexStats>),
    Strace(Vec<SyscallRecord>),
    Acquisitions(Vec<LockAcquisition>),
}

struct Source {
    name: String,
    text: Option<String>,
    path: Option<PathBuf>,
}

pub fn read_text(path: Option<&Path>, stdin: &mut dyn Read) -> Result<String> {
    match path {
        Some(p) if p != Path::new("-") => fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display())),
        _ => {
            let mut text = String::new();
            stdin.read_to_string(&mut text).context("cannot read standard input")?;
            Ok(text)
        }
    }
}

pub fn load(spec: &InputSpec, stdin: &mut dyn Read, stderr: &mut dyn Write) -> Result<Inputs> {
    let mode = if spec.strict { ParseMode::Strict } else { ParseMode::Lenient };
    let mut sources = Vec::new();
    let mut stdin_used = false;
    let paths: Vec<Option<&Path>> =
        if spec.paths.is_empty() { vec![None] } else { spec.paths.iter().map(|p| Some(p.as_path())).collect() };
    for path in paths {
        match path.filter(|p| *p != Path::new("-")) {
            Some(p) => sources.push(Source { name: p.display().to_string(), text: None, path: Some(p.to_path_buf()) }),
            None => {
                if stdin_used {
                    bail!("standard input can only be read once");
                }
                let text = read_text(None, stdin)?;
                stdin_used = true;
                sources.push(Source { name: "<stdin>".into(), text: Some(text), path: None });
            }
        }
    }

    let results: Vec<Result<(Loaded, Vec<ParseError>)>> = thread::scope(|scope| {
        let handles: Vec<_> = sources.iter().map(|src| scope.spawn(move || load_one(src, spec.format, mode))).collect();
        handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err(anyhow!("input worker panicked")))).collect()
    });

    let mut inputs = Inputs::default();
    for (src, result) in sources.iter().zip(results) {
        let (loaded, errors) = result?;
        if let Some(first) = errors.first() {
            writeln!(stderr, "warning: {}: skipped {} malformed line(s); first: {first}", src.name, errors.len())?;
        }
        match loaded {
            Loaded::Perf(v) => {
                inputs.events.extend(v);
                inputs.formats.push(InputFormat::Perf);
            }
            Loaded::Gprof(v) => {
                inputs.gprof.push(v);
                inputs.formats.push(InputFormat::Gprof);
            }
            Loaded::Oprofile(v) => {
                inputs.oprofile.push(v);
                inputs.formats.push(InputFormat::Oprofile);
            }
            Loaded::Mutrace(v) => {
                inputs.mutexes.extend(v);
                inputs.formats.push(InputFormat::Mutrace);
            }
            Loaded::Strace(v) => {
                inputs.syscalls.extend(v);
                inputs.formats.push(InputFormat::Strace);
            }
            Loaded::Acquisitions(v) => {
                inputs.acquisitions.extend(v);
                inputs.formats.push(InputFormat::Acquisitions);
            }
        }
    }
    Ok(inputs)
}

fn load_one(src: &Source, format: Option<InputFormat>, mode: ParseMode) -> Result<(Loaded, Vec<ParseError>)> {
    let owned;
    let text = match (&src.text, &src.path) {
        (Some(t), _) => t.as_str(),
        (None, Some(p)) => {
            owned = fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            owned.as_str()
        }
        (None, None) => "",
    };
    let format = match format {
        Some(f) => f,
        // An empty trace is a perf trace with no events.
        None if text.trim().is_empty() => InputFormat::Perf,
        None => InputFormat::sniff(text)
            .ok_or_else(|| anyhow!("{}: cannot detect the input format; pass --format", src.name))?,
    };
    let ctx = || format!("{}: {} input", src.name, format.as_str());
    let out = match format {
        InputFormat::Perf => {
            let p = parse_perf_script(text, mode).with_context(ctx)?;
            (Loaded::Perf(p.items), p.errors)
        }
        InputFormat::Gprof => {
            let p = parse_gprof_flat(text, mode).with_context(ctx)?;
            (Loaded::Gprof(p.items), p.errors)
        }
        InputFormat::Oprofile => {
            let p = parse_oprofile_flat(text, mode).with_context(ctx)?;
            (Loaded::Oprofile(p.items), p.errors)
        }
        InputFormat::Mutrace => {
            let p = parse_mutrace(text, mode).with_context(ctx)?;
            (Loaded::Mutrace(p.items), p.errors)
        }
        InputFormat::Strace => {
            let p = parse_strace(text, mode).with_context(ctx)?;
            (Loaded::Strace(p.items), p.errors)
        }
        InputFormat::Acquisitions => {
            let p = parse_acquisitions(text, mode).with_context(ctx)?;
            (Loaded::Acquisitions(p.items), p.errors)
        }
    };
    Ok(out)
}
