//! Parsers for structured agent output: boxed answers, consensus tokens,
//! evaluator verdicts, CEO directives, recruiter rosters, and the format
//! checks used by trace filtering.
//!
//! Two cross-cutting rules apply everywhere:
//!
//! - Closed `<think>...</think>` blocks are stripped before scanning, so an
//!   agent deliberating about "\boxed{23}" inside its reasoning cannot leak
//!   into the extracted answer. If any think block is left unterminated the
//!   whole text is scanned instead (nothing reliable separates reasoning
//!   from output in that case).
//! - Headers are matched tolerantly: `### Correctness:`, `**Correctness:**`,
//!   and bare `Correctness:` are all accepted, case-insensitively. Real model
//!   output mixes these freely.

use std::borrow::Cow;
use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

use crate::domain::{
    CeoDecision, CeoDirective, ConsensusMark, EvaluatorVerdict, DEFAULT_RECRUIT_BOUNDS,
    DEFAULT_TOKEN_BUDGET_MENU,
};

const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("no \\boxed{{...}} answer found")]
    NoBoxedAnswer,
    #[error("unbalanced braces after the last \\boxed{{")]
    UnbalancedBraces,
    #[error("malformed evaluator verdict: {0}")]
    MalformedVerdict(String),
    #[error("malformed CEO directive: {0}")]
    MalformedDirective(String),
    #[error("roster has {found} expert description(s), expected {expected}")]
    RosterTooShort { found: usize, expected: usize },
}

/// Removes every closed `<think>...</think>` span. If any opening tag lacks
/// a closing tag the original text is returned unchanged (the whole text
/// stays in scope for downstream scans).
pub fn visible_text(text: &str) -> Cow<'_, str> {
    if !text.contains(THINK_OPEN) {
        return Cow::Borrowed(text);
    }
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    loop {
        match rest.find(THINK_OPEN) {
            None => {
                out.push_str(rest);
                return Cow::Owned(out);
            }
            Some(open) => match rest[open..].find(THINK_CLOSE) {
                None => return Cow::Borrowed(text),
                Some(close) => {
                    out.push_str(&rest[..open]);
                    rest = &rest[open + close + THINK_CLOSE.len()..];
                }
            },
        }
    }
}

/// Reports whether the text contains a think block and whether every opened
/// block is closed.
fn think_status(text: &str) -> (bool, bool) {
    if !text.contains(THINK_OPEN) {
        return (false, false);
    }
    let mut rest = text;
    while let Some(open) = rest.find(THINK_OPEN) {
        match rest[open..].find(THINK_CLOSE) {
            None => return (true, false),
            Some(close) => rest = &rest[open + close + THINK_CLOSE.len()..],
        }
    }
    (true, true)
}

/// Extracts the content of the last `\boxed{...}` in the visible text, with
/// balanced-brace matching so nested arguments like `\boxed{\frac{m}{n}}`
/// survive verbatim. The final stated answer wins: models often box
/// intermediate values earlier in a derivation.
pub fn extract_boxed(text: &str) -> Result<String, ParseError> {
    let vis = visible_text(text);
    let s = vis.as_ref();
    const MARKER: &str = "\\boxed{";
    let start = s.rfind(MARKER).ok_or(ParseError::NoBoxedAnswer)?;
    let inner = &s[start + MARKER.len()..];
    let mut depth = 1usize;
    for (pos, ch) in inner.char_indices() {
        match ch {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Ok(inner[..pos].trim().to_string());
                }
            }
            _ => {}
        }
    }
    Err(ParseError::UnbalancedBraces)
}

/// Scans a critic response for its trailing consensus token. Trailing
/// whitespace and markdown emphasis are ignored (`**[Agree]**` counts), but
/// a token anywhere else in the text does not: the protocol demands the
/// token at the end, and `Missing` flags the violation rather than guessing.
pub fn detect_consensus(text: &str) -> ConsensusMark {
    let vis = visible_text(text);
    let trimmed = vis
        .trim_end_matches(|c: char| c.is_whitespace() || c == '*' || c == '_' || c == '`');
    if trimmed.ends_with("[Agree]") {
        ConsensusMark::Agree
    } else if trimmed.ends_with("[Disagree]") {
        ConsensusMark::Disagree
    } else {
        ConsensusMark::Missing
    }
}

/// A line that opens a tolerant header: captures leading decoration, the
/// header name, and the rest of the line after the colon.
static HEADER_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?m)^[ \t>#*_-]*([A-Za-z][A-Za-z ]*?)[ \t*_]*:[ \t*_]*(.*)$").expect("header regex")
});

static FIRST_INT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"-?\d+").expect("int regex"));
static FIRST_FLOAT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"-?\d+(?:\.\d+)?").expect("float regex"));

/// One recognized header occurrence in a response.
struct Header<'a> {
    name: String,
    /// Text after the colon on the header line itself.
    inline: &'a str,
    /// Byte offset just past the end of the header line.
    after_line: usize,
}

/// Finds every line that looks like `name: value` (with optional `###` or
/// bold decoration) whose name is one of `names` (case-insensitive).
fn find_headers<'a>(text: &'a str, names: &[&str]) -> Vec<Header<'a>> {
    let mut found = Vec::new();
    for cap in HEADER_LINE.captures_iter(text) {
        let raw_name = cap.get(1).expect("name").as_str().trim();
        let lowered = raw_name.to_ascii_lowercase();
        if names.iter().any(|n| *n == lowered) {
            let whole = cap.get(0).expect("line");
            found.push(Header {
                name: lowered,
                inline: cap.get(2).expect("value").as_str(),
                after_line: whole.end(),
            });
        }
    }
    found
}

/// Returns the block of text belonging to the first header named `name`:
/// the inline remainder plus any following lines up to the next recognized
/// header (or end of text).
fn header_block(text: &str, headers: &[Header<'_>], name: &str) -> Option<String> {
    let idx = headers.iter().position(|h| h.name == name)?;
    let start = &headers[idx];
    let end = headers
        .get(idx + 1..)
        .and_then(|rest| rest.first())
        .map_or(text.len(), |next| next.after_line - next_line_start_len(text, next));
    let mut block = start.inline.to_string();
    if start.after_line < end {
        block.push('\n');
        block.push_str(&text[start.after_line..end]);
    }
    Some(block.trim().to_string())
}

/// Byte length from the start of a header's line to `after_line`, used to
/// back up to the line boundary before the next header.
fn next_line_start_len(text: &str, header: &Header<'_>) -> usize {
    let upto = &text[..header.after_line];
    match upto.rfind('\n') {
        Some(nl) => header.after_line - nl,
        None => header.after_line,
    }
}

const EVALUATOR_HEADERS: &[&str] = &["correctness", "confidence", "advice", "response"];

/// Parses an evaluator response into a verdict. `Correctness` is required
/// and must read 0 or 1; `Advice` (or the `Response` variant some evaluators
/// emit) and `Confidence` are optional. When correctness is 0 but no advice
/// header exists, the visible response text stands in as the advice so the
/// next round still receives direction.
pub fn parse_evaluator(text: &str) -> Result<EvaluatorVerdict, ParseError> {
    let vis = visible_text(text);
    let vis = vis.as_ref();
    let headers = find_headers(vis, EVALUATOR_HEADERS);

    let correctness_block = header_block(vis, &headers, "correctness")
        .ok_or_else(|| ParseError::MalformedVerdict("missing Correctness header".into()))?;
    let correctness = FIRST_INT
        .find(&correctness_block)
        .and_then(|m| m.as_str().parse::<i64>().ok())
        .ok_or_else(|| ParseError::MalformedVerdict("Correctness value is not an integer".into()))?;
    if correctness != 0 && correctness != 1 {
        return Err(ParseError::MalformedVerdict(format!(
            "Correctness must be 0 or 1, got {correctness}"
        )));
    }

    let confidence = header_block(vis, &headers, "confidence")
        .and_then(|block| FIRST_FLOAT.find(&block).map(|m| m.as_str().to_string()))
        .and_then(|s| s.parse::<f64>().ok());

    let mut advice = header_block(vis, &headers, "advice")
        .or_else(|| header_block(vis, &headers, "response"))
        .unwrap_or_default();
    if advice.trim().is_empty() && correctness == 0 {
        advice = vis.trim().to_string();
    }

    Ok(EvaluatorVerdict { correctness: correctness as u8, confidence, advice })
}

/// A parsed CEO directive together with any notes about repairs the parser
/// made (clamped recruit numbers, budgets snapped onto the menu).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectiveParse {
    pub directive: CeoDirective,
    pub notes: Vec<String>,
}

const CEO_HEADERS: &[&str] = &["decision", "recruit number", "direction", "maximum tokens"];

/// Parses a CEO response with the default budget menu and recruit bounds.
pub fn parse_ceo(text: &str) -> Result<DirectiveParse, ParseError> {
    parse_ceo_with(text, &DEFAULT_TOKEN_BUDGET_MENU, DEFAULT_RECRUIT_BOUNDS)
}

/// Parses a CEO response. `Decision` and `Maximum Tokens` are required;
/// a missing recruit number defaults to the lower bound and a missing
/// direction to the empty string. Out-of-bounds recruit numbers are clamped
/// and off-menu budgets are snapped to the nearest nonzero menu entry
/// (ties snap down); every repair is recorded as a note.
pub fn parse_ceo_with(
    text: &str,
    menu: &[u32],
    bounds: (u32, u32),
) -> Result<DirectiveParse, ParseError> {
    let vis = visible_text(text);
    let vis = vis.as_ref();
    let headers = find_headers(vis, CEO_HEADERS);
    let mut notes = Vec::new();

    let decision_block = header_block(vis, &headers, "decision")
        .ok_or_else(|| ParseError::MalformedDirective("missing Decision header".into()))?;
    let lowered = decision_block.to_ascii_lowercase();
    let decision = match (lowered.find("continue"), lowered.find("stop")) {
        (Some(_), None) => CeoDecision::Continue,
        (None, Some(_)) => CeoDecision::Stop,
        (Some(c), Some(s)) => {
            if c < s {
                CeoDecision::Continue
            } else {
                CeoDecision::Stop
            }
        }
        (None, None) => {
            return Err(ParseError::MalformedDirective(format!(
                "Decision {decision_block:?} is neither Continue nor Stop"
            )))
        }
    };

    let (lo, hi) = bounds;
    let recruit_number = match header_block(vis, &headers, "recruit number") {
        Some(block) => match FIRST_INT.find(&block).and_then(|m| m.as_str().parse::<i64>().ok()) {
            Some(n) if n < lo as i64 => {
                notes.push(format!("recruit number {n} clamped up to {lo}"));
                lo
            }
            Some(n) if n > hi as i64 => {
                notes.push(format!("recruit number {n} clamped down to {hi}"));
                hi
            }
            Some(n) => n as u32,
            None => {
                notes.push(format!("unreadable recruit number; defaulting to {lo}"));
                lo
            }
        },
        None => {
            notes.push(format!("missing recruit number; defaulting to {lo}"));
            lo
        }
    };

    let direction = header_block(vis, &headers, "direction").unwrap_or_default();

    let tokens_block = header_block(vis, &headers, "maximum tokens")
        .ok_or_else(|| ParseError::MalformedDirective("missing Maximum Tokens header".into()))?;
    let requested = FIRST_INT
        .find(&tokens_block)
        .and_then(|m| m.as_str().parse::<i64>().ok())
        .ok_or_else(|| ParseError::MalformedDirective("Maximum Tokens value is not an integer".into()))?;
    let max_tokens = snap_to_menu(requested, menu, &mut notes);

    let directive = CeoDirective { decision, recruit_number, direction, max_tokens };
    debug_assert!(directive.validate(menu, bounds).is_ok());
    Ok(DirectiveParse { directive, notes })
}

/// Snaps a requested budget onto the nearest nonzero menu entry. Zero and
/// negative requests land on the smallest nonzero entry; ties between two
/// entries snap to the lower one so repairs never inflate spend.
fn snap_to_menu(requested: i64, menu: &[u32], notes: &mut Vec<String>) -> u32 {
    let mut nonzero: Vec<u32> = menu.iter().copied().filter(|&v| v > 0).collect();
    nonzero.sort_unstable();
    debug_assert!(!nonzero.is_empty(), "budget menu must contain a nonzero entry");
    if requested > 0 && nonzero.contains(&(requested.min(u32::MAX as i64) as u32)) {
        return requested as u32;
    }
    let mut best = nonzero[0];
    let mut best_gap = i64::MAX;
    for &candidate in &nonzero {
        // Saturating: an extreme request (e.g. i64::MIN) must snap, not
        // overflow the distance computation.
        let gap = requested.saturating_sub(candidate as i64).saturating_abs();
        if gap < best_gap {
            best = candidate;
            best_gap = gap;
        }
    }
    notes.push(format!("maximum tokens {requested} snapped to menu value {best}"));
    best
}

static ROSTER_ITEM: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^[ \t]*\d+[.)][ \t]+(.*\S)[ \t]*$").expect("roster regex"));

/// Extracts the numbered expert descriptions from a recruiter response.
/// Extra items beyond `expected` are dropped (recruiters sometimes pad the
/// list); fewer is an error because every solver needs a persona.
pub fn parse_roster(text: &str, expected: usize) -> Result<Vec<String>, ParseError> {
    let vis = visible_text(text);
    let mut items: Vec<String> = ROSTER_ITEM
        .captures_iter(vis.as_ref())
        .map(|cap| cap.get(1).expect("item").as_str().trim().to_string())
        .collect();
    if items.len() < expected {
        return Err(ParseError::RosterTooShort { found: items.len(), expected });
    }
    items.truncate(expected);
    Ok(items)
}

/// Per-turn format report used by trace filtering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormatReport {
    pub has_think_block: bool,
    pub think_closed: bool,
    pub has_boxed: bool,
    pub violations: Vec<String>,
}

impl FormatReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the reasoning-format contract for one turn: the response must
/// carry a closed think block, and answer-bearing turns (the drafting
/// solver's) must additionally state a boxed final answer.
pub fn validate_format(text: &str, answer_bearing: bool) -> FormatReport {
    let (has_think_block, think_closed) = think_status(text);
    let has_boxed = extract_boxed(text).is_ok();
    let mut violations = Vec::new();
    if !has_think_block {
        violations.push("missing think block".to_string());
    } else if !think_closed {
        violations.push("unterminated think block".to_string());
    }
    if answer_bearing && !has_boxed {
        violations.push("missing boxed answer".to_string());
    }
    FormatReport { has_think_block, think_closed, has_boxed, violations }
}
