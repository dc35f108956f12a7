//! gprof flat profile.

use super::{Errors, ParseError, ParseMode, Parsed};
use crate::num::{parse_decimal, Rational};

/// One flat-profile line. Values are kept exactly as printed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GprofRow {
    pub percent_time: Rational,
    pub cumulative_s: Rational,
    pub self_s: Rational,
    pub calls: Option<u64>,
    pub self_ms_per_call: Option<Rational>,
    pub total_ms_per_call: Option<Rational>,
    pub name: String,
}

pub(super) fn is_header(line: &str) -> bool {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    tokens.starts_with(&["time", "seconds", "seconds", "calls"])
}

/// Parses the flat-profile table that follows the
/// `time   seconds   seconds    calls ...` header. The table ends at the
/// first blank line; anything before the header is ignored.
pub fn parse_gprof_flat(text: &str, mode: ParseMode) -> Result<Parsed<GprofRow>, ParseError> {
    let mut lines = text.lines().enumerate();
    if !lines.by_ref().any(|(_, line)| is_header(line)) {
        return Err(ParseError::MissingHeader);
    }
    let mut errors = Errors::new(mode);
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            break;
        }
        match parse_row(line) {
            Ok(row) => rows.push(row),
            Err(reason) => errors.push(ParseError::MalformedRow { line: idx + 1, reason })?,
        }
    }
    Ok(errors.finish(rows))
}

/// Splits off leading whitespace-delimited tokens, returning each token and
/// the remainder of the line after it.
fn next_token(rest: &str) -> Option<(&str, &str)> {
    let rest = rest.trim_start();
    if rest.is_empty() {
        return None;
    }
    let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
    Some((&rest[..end], &rest[end..]))
}

fn parse_row(line: &str) -> Result<GprofRow, String> {
    let mut rest = line;
    let mut numbers = Vec::with_capacity(6);
    // Up to six numeric columns; the name is whatever follows and may
    // contain spaces (C++ signatures).
    while numbers.len() < 6 {
        let Some((token, after)) = next_token(rest) else { break };
        let value = parse_decimal(token).or_else(|| {
            // `calls/total` for recursive functions
            let (head, tail) = token.split_once('/')?;
            let digits = |t: &str| !t.is_empty() && t.bytes().all(|b| b.is_ascii_digit());
            (numbers.len() == 3 && digits(head) && digits(tail)).then(|| parse_decimal(head)).flatten()
        });
        match value {
            Some(value) => {
                numbers.push((token, value));
                rest = after;
            }
            None => break,
        }
    }
    let name = rest.trim();
    if name.is_empty() {
        return Err("missing function name".into());
    }
    let (percent_time, cumulative_s, self_s) = match numbers.as_slice() {
        [p, c, s, ..] => (p.1, c.1, s.1),
        _ => return Err(format!("expected at least 3 numeric columns, found {}", numbers.len())),
    };
    let (calls, self_ms_per_call, total_ms_per_call) = match &numbers[3..] {
        [] => (None, None, None),
        [calls] => (Some(parse_calls(calls.0)?), None, None),
        [calls, self_ms, total_ms] => (Some(parse_calls(calls.0)?), Some(self_ms.1), Some(total_ms.1)),
        other => return Err(format!("unexpected {} call columns", other.len())),
    };
    let hundred = Rational::from_integer(100);
    if percent_time < Rational::from_integer(0) || percent_time > hundred {
        return Err("percent time outside [0, 100]".into());
    }
    if cumulative_s < Rational::from_integer(0) || self_s < Rational::from_integer(0) {
        return Err("negative seconds".into());
    }
    Ok(GprofRow {
        percent_time,
        cumulative_s,
        self_s,
        calls,
        self_ms_per_call,
        total_ms_per_call,
        name: name.to_string(),
    })
}

fn parse_calls(token: &str) -> Result<u64, String> {
    // Recursive functions print `calls/total`; keep the first figure.
    let head = token.split('/').next().unwrap_or(token);
    head.parse().map_err(|_| format!("bad call count `{token}`"))
}

#[cfg(test)]
mod tests {
    use super::*;

    const REFERENCE_LISTING: &str = "
 time   seconds   seconds    calls  ms/call  ms/call  name
 41.64      0.12     0.12                             main
 31.23      0.21     0.09        1    90.56    90.56  foo()
 26.02      0.29     0.08        1    75.47   166.02  bar()
  0.00      0.29     0.00        3     0.00     0.00  std::operator|(std::_Ios_Openmode, std::_Ios_Openmode)
  0.00      0.29     0.00        1     0.00     0.00  _GLOBAL__sub_I__Z3foov
  0.00      0.29     0.00        1     0.00     0.00  __static_initialization_and_destruction_0(int, int)
";

    fn d(s: &str) -> Rational {
        parse_decimal(s).unwrap()
    }

    #[test]
    fn reference_listing_rows() {
        let rows = parse_gprof_flat(REFERENCE_LISTING, ParseMode::Strict).unwrap().items;
        assert_eq!(rows.len(), 6);
        assert_eq!(
            rows[0],
            GprofRow {
                percent_time: d("41.64"),
                cumulative_s: d("0.12"),
                self_s: d("0.12"),
                calls: None,
                self_ms_per_call: None,
                total_ms_per_call: None,
                name: "main".into(),
            }
        );
        assert_eq!(
            rows[2],
            GprofRow {
                percent_time: d("26.02"),
                cumulative_s: d("0.29"),
                self_s: d("0.08"),
                calls: Some(1),
                self_ms_per_call: Some(d("75.47")),
                total_ms_per_call: Some(d("166.02")),
                name: "bar()".into(),
            }
        );
        assert_eq!(rows[3].name, "std::operator|(std::_Ios_Openmode, std::_Ios_Openmode)");
        assert_eq!(rows[3].calls, Some(3));
    }

    #[test]
    fn header_only_is_empty() {
        let text = " time   seconds   seconds    calls  ms/call  ms/call  name\n";
        assert!(parse_gprof_flat(text, ParseMode::Strict).unwrap().items.is_empty());
    }

    #[test]
    fn missing_header() {
        assert_eq!(parse_gprof_flat("41.64 0.12 0.12 main\n", ParseMode::Lenient), Err(ParseError::MissingHeader));
    }

    #[test]
    fn table_ends_at_blank_line_and_bad_rows_are_reported() {
        let text = "Flat profile:\n\n time   seconds   seconds    calls  name\n 10.0 0.1 0.1 f\n oops 1 2 g\n 101.0 0.1 0.1 h\n\n % the percentage of the total running time\n";
        let parsed = parse_gprof_flat(text, ParseMode::Lenient).unwrap();
        assert_eq!(parsed.items.len(), 1);
        assert_eq!(parsed.errors.len(), 2);
        assert!(parse_gprof_flat(text, ParseMode::Strict).is_err());
    }

    #[test]
    fn recursive_call_counts() {
        let text = " time   seconds   seconds    calls  name\n 50.0 0.5 0.5 10/12 0.1 0.2 fib\n";
        let rows = parse_gprof_flat(text, ParseMode::Strict).unwrap().items;
        assert_eq!(rows[0].calls, Some(10));
        assert_eq!(rows[0].name, "fib");
    }
}
