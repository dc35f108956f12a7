//! oprofile / xenoprof flat image listing: `symbol <percent> image`.
//!
//! Some renderings split the percent around the decimal point (`13 .32`);
//! both spellings are accepted.

use super::{Errors, ParseError, ParseMode, Parsed};
use crate::num::{parse_decimal, Rational};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageProfileRow {
    pub symbol: String,
    pub percent: Rational,
    pub image: String,
}

pub fn parse_oprofile_flat(text: &str, mode: ParseMode) -> Result<Parsed<ImageProfileRow>, ParseError> {
    let mut errors = Errors::new(mode);
    let mut rows = Vec::new();
    let mut seen_content = false;
    for (idx, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let first_content = !seen_content;
        seen_content = true;
        if first_content && trimmed.split_whitespace().next() == Some("Function") {
            continue;
        }
        match parse_row(trimmed) {
            Ok(row) => rows.push(row),
            Err(reason) => errors.push(ParseError::MalformedRow { line: idx + 1, reason })?,
        }
    }
    Ok(errors.finish(rows))
}

pub(super) fn parse_row(line: &str) -> Result<ImageProfileRow, String> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    let (symbol, percent_tokens, image) = match tokens.as_slice() {
        [symbol, middle @ .., image] if (1..=2).contains(&middle.len()) => (*symbol, middle, *image),
        _ => return Err(format!("expected `symbol percent image`, found {} fields", tokens.len())),
    };
    let joined = percent_tokens.concat();
    // "13 .32" is accepted, "13 32" is not.
    if percent_tokens.len() == 2 && !percent_tokens[1].starts_with('.') {
        return Err(format!("bad percent `{}`", percent_tokens.join(" ")));
    }
    let percent = parse_decimal(&joined).ok_or_else(|| format!("bad percent `{joined}`"))?;
    if percent < Rational::from_integer(0) || percent > Rational::from_integer(100) {
        return Err(format!("percent {joined} outside [0, 100]"));
    }
    Ok(ImageProfileRow { symbol: symbol.to_string(), percent, image: image.to_string() })
}
