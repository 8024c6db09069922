//! Parsing of the five-step chain-of-thought answer format and grounding
//! checks against the scene.
//!
//! ```text
//! STEP1 - inferred_query: ...
//! STEP2 - relevant_objects: [0, 5]
//! STEP3 - reason for relevance: ...
//! STEP4 - Final Answer: ... {"object_tag": "vase", "object_id": 0}
//! STEP-5 - Explanation: ...
//! ```

use std::ops::Range;

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::scene::{NodeId, SceneGraph};

/// Most ids a response may list as relevant.
pub const MAX_RELEVANT_OBJECTS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GroundingIssueKind {
    UnknownId,
    TooManyRelevant,
    TagMismatch,
    MissingStep,
    MalformedJson,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundingIssue {
    pub kind: GroundingIssueKind,
    /// Step the issue belongs to, 1 to 5.
    pub step: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub id: Option<NodeId>,
    pub detail: String,
}

impl GroundingIssue {
    fn new(kind: GroundingIssueKind, step: u8, detail: impl Into<String>) -> Self {
        Self {
            kind,
            step,
            id: None,
            detail: detail.into(),
        }
    }
}

impl std::fmt::Display for GroundingIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "STEP{} {:?}: {}", self.step, self.kind, self.detail)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParsedResponse {
    pub inferred_query: String,
    pub relevant_object_ids: Vec<NodeId>,
    pub relevance_reason: String,
    pub final_text: String,
    pub final_object_tag: Option<String>,
    pub final_object_id: Option<NodeId>,
    /// Optional `"answer"` value of the final JSON (yes/no, relation names).
    pub final_answer: Option<String>,
    pub explanation: String,
    /// Soft problems found while parsing, e.g. a step without content.
    pub notes: Vec<GroundingIssue>,
    pub raw: String,
}

impl ParsedResponse {
    /// The structured fields only, for comparisons that ignore `raw` and notes.
    pub fn fields(&self) -> ParsedFields<'_> {
        ParsedFields {
            inferred_query: &self.inferred_query,
            relevant_object_ids: &self.relevant_object_ids,
            relevance_reason: &self.relevance_reason,
            final_text: &self.final_text,
            final_object_tag: self.final_object_tag.as_deref(),
            final_object_id: self.final_object_id,
            final_answer: self.final_answer.as_deref(),
            explanation: &self.explanation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParsedFields<'a> {
    pub inferred_query: &'a str,
    pub relevant_object_ids: &'a [NodeId],
    pub relevance_reason: &'a str,
    pub final_text: &'a str,
    pub final_object_tag: Option<&'a str>,
    pub final_object_id: Option<NodeId>,
    pub final_answer: Option<&'a str>,
    pub explanation: &'a str,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no step headers found in response")]
    Unparseable { raw: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no balanced JSON object found")]
pub struct JsonNotFound;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParseOptions {
    /// Require canonical `STEPn - ` headers at line start and all five steps.
    pub strict: bool,
}

static LENIENT_HEADER: Lazy<Regex> = Lazy::new(|| {
    Regex::new(r"(?im)^[ \t>#*_]*step[ \t]*-?[ \t]*([1-5])(?:[ \t]*[-–—:.)][ \t]*|[ \t]+|$)").unwrap()
});
static STRICT_HEADER: Lazy<Regex> = Lazy::new(|| Regex::new(r"(?m)^STEP-?([1-5]) - ").unwrap());
static BRACKET_LIST: Lazy<Regex> = Lazy::new(|| Regex::new(r"\[([^\[\]]*)\]").unwrap());
static INTEGER: Lazy<Regex> = Lazy::new(|| Regex::new(r"\d+").unwrap());
static CODE_FENCE: Lazy<Regex> = Lazy::new(|| Regex::new(r"```[A-Za-z]*").unwrap());

const STEP_LABELS: [&[&str]; 5] = [
    &["inferred_query", "inferred query"],
    &["relevant_objects", "relevant objects"],
    &["reason for relevance", "reason_for_relevance", "reason"],
    &["final answer", "final_answer"],
    &["explanation"],
];

/// Drops a leading step label such as `inferred_query:` or `**Final Answer**:`.
fn strip_label(step: usize, content: &str) -> &str {
    let trimmed = content.trim_start_matches(['*', '_', ' ', '\t']);
    for label in STEP_LABELS[step - 1] {
        let Some(head) = trimmed.get(..label.len()) else {
            continue;
        };
        if head.eq_ignore_ascii_case(label) {
            let rest = trimmed[label.len()..].trim_start_matches(['*', '_', ' ', '\t']);
            if let Some(rest) = rest.strip_prefix(':') {
                return rest;
            }
        }
    }
    trimmed
}

/// Finds the first syntactically valid JSON object by balanced-brace
/// scanning. Code fences and surrounding prose are skipped.
pub fn extract_json_block(text: &str) -> Result<Map<String, Value>, JsonNotFound> {
    find_json_object(text).map(|(obj, _)| obj).ok_or(JsonNotFound)
}

fn find_json_object(text: &str) -> Option<(Map<String, Value>, Range<usize>)> {
    let bytes = text.as_bytes();
    let mut start = 0;
    while let Some(off) = text[start..].find('{') {
        let open = start + off;
        if let Some(close) = matching_brace(bytes, open) {
            if let Ok(Value::Object(obj)) = serde_json::from_str::<Value>(&text[open..=close]) {
                return Some((obj, open..close + 1));
            }
        }
        start = open + 1;
    }
    None
}

fn matching_brace(bytes: &[u8], open: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(open) {
        if in_string {
            match (escaped, b) {
                (true, _) => escaped = false,
                (false, b'\\') => escaped = true,
                (false, b'"') => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

pub fn parse_response(text: &str) -> Result<ParsedResponse, ParseError> {
    parse_response_with(text, ParseOptions::default())
}

pub fn parse_response_with(text: &str, opts: ParseOptions) -> Result<ParsedResponse, ParseError> {
    let header = if opts.strict { &*STRICT_HEADER } else { &*LENIENT_HEADER };
    let unparseable = || ParseError::Unparseable { raw: text.to_string() };

    // (step, header start, content start), in text order.
    let headers: Vec<(usize, usize, usize)> = header
        .captures_iter(text)
        .map(|c| {
            let m = c.get(0).unwrap();
            (c[1].parse::<usize>().unwrap(), m.start(), m.end())
        })
        .collect();
    if headers.is_empty() {
        return Err(unparseable());
    }

    let mut sections: [Option<&str>; 5] = [None; 5];
    for (i, &(step, _, content_start)) in headers.iter().enumerate() {
        let end = headers.get(i + 1).map_or(text.len(), |h| h.1);
        let slot = &mut sections[step - 1];
        if slot.is_none() {
            *slot = Some(strip_label(step, &text[content_start..end]).trim());
        }
    }
    if opts.strict && sections.iter().any(Option::is_none) {
        return Err(unparseable());
    }

    let mut resp = ParsedResponse {
        raw: text.to_string(),
        ..ParsedResponse::default()
    };
    for (i, s) in sections.iter().enumerate() {
        if s.is_none() {
            resp.notes.push(GroundingIssue::new(
                GroundingIssueKind::MissingStep,
                i as u8 + 1,
                format!("STEP{} not found", i + 1),
            ));
        }
    }

    resp.inferred_query = sections[0].unwrap_or_default().to_string();
    resp.relevance_reason = sections[2].unwrap_or_default().to_string();
    resp.explanation = sections[4].unwrap_or_default().to_string();

    if let Some(s) = sections[1] {
        match BRACKET_LIST.captures(s) {
            Some(c) => {
                resp.relevant_object_ids = INTEGER
                    .find_iter(&c[1])
                    .filter_map(|m| m.as_str().parse().ok())
                    .map(NodeId)
                    .collect();
            }
            None => resp.notes.push(GroundingIssue::new(
                GroundingIssueKind::MissingStep,
                2,
                "STEP2 has no bracketed list of object ids",
            )),
        }
    }

    if let Some(s) = sections[3] {
        parse_final_answer(s, &mut resp);
    }
    Ok(resp)
}

fn parse_final_answer(section: &str, resp: &mut ParsedResponse) {
    let Some((obj, span)) = find_json_object(section) else {
        resp.final_text = clean_final_text(section);
        let (kind, detail) = if section.contains('{') {
            (GroundingIssueKind::MalformedJson, "STEP4 JSON answer is not valid JSON")
        } else {
            (GroundingIssueKind::MissingStep, "STEP4 has no JSON answer")
        };
        resp.notes.push(GroundingIssue::new(kind, 4, detail));
        return;
    };
    let remainder = format!("{}{}", &section[..span.start], &section[span.end..]);
    resp.final_text = clean_final_text(&remainder);

    resp.final_object_tag = obj.get("object_tag").and_then(Value::as_str).map(str::to_string);
    resp.final_object_id = match obj.get("object_id") {
        Some(Value::Number(n)) => n.as_u64().map(NodeId),
        Some(Value::String(s)) => s.trim().parse().ok().map(NodeId),
        _ => None,
    };
    resp.final_answer = match obj.get("answer") {
        Some(Value::String(s)) => Some(s.clone()),
        Some(Value::Bool(b)) => Some(if *b { "yes" } else { "no" }.to_string()),
        Some(Value::Null) | None => None,
        Some(other) => Some(other.to_string()),
    };
    if resp.final_object_id.is_none() && obj.contains_key("object_id") {
        resp.notes.push(GroundingIssue::new(
            GroundingIssueKind::MalformedJson,
            4,
            "\"object_id\" is not a non-negative integer",
        ));
    }
    if resp.final_object_id.is_some() && resp.final_object_tag.is_none() {
        resp.notes.push(GroundingIssue::new(
            GroundingIssueKind::MalformedJson,
            4,
            "final JSON has \"object_id\" but no \"object_tag\"",
        ));
    }
}

fn clean_final_text(text: &str) -> String {
    CODE_FENCE.replace_all(text, "").trim().to_string()
}

/// Checks that a response cites only scene objects, lists at most two
/// relevant ids and names the final object by its own tag. Parse notes are
/// included. Issues are ordered by step.
pub fn validate_grounding<T: Scalar>(resp: &ParsedResponse, scene: &SceneGraph<T>) -> Vec<GroundingIssue> {
    let mut issues = resp.notes.clone();
    for &id in &resp.relevant_object_ids {
        if scene.node(id).is_none() {
            issues.push(GroundingIssue {
                id: Some(id),
                ..GroundingIssue::new(GroundingIssueKind::UnknownId, 2, format!("object id {id} is not in the scene"))
            });
        }
    }
    if resp.relevant_object_ids.len() > MAX_RELEVANT_OBJECTS {
        issues.push(GroundingIssue::new(
            GroundingIssueKind::TooManyRelevant,
            2,
            format!(
                "{} relevant objects listed, at most {MAX_RELEVANT_OBJECTS} allowed",
                resp.relevant_object_ids.len()
            ),
        ));
    }
    if let Some(id) = resp.final_object_id {
        match scene.node(id) {
            None => issues.push(GroundingIssue {
                id: Some(id),
                ..GroundingIssue::new(GroundingIssueKind::UnknownId, 4, format!("final object id {id} is not in the scene"))
            }),
            Some(node) => {
                if let Some(tag) = &resp.final_object_tag {
                    if !tag.trim().eq_ignore_ascii_case(node.object_tag.trim()) {
                        issues.push(GroundingIssue {
                            id: Some(id),
                            ..GroundingIssue::new(
                                GroundingIssueKind::TagMismatch,
                                4,
                                format!("object {id} is tagged {:?}, response says {tag:?}", node.object_tag),
                            )
                        });
                    }
                }
            }
        }
    }
    issues.sort_by_key(|i| i.step);
    issues
}

/// Writes a response in the canonical five-step layout.
pub fn render_response(resp: &ParsedResponse) -> String {
    let ids: Vec<String> = resp.relevant_object_ids.iter().map(|i| i.to_string()).collect();
    let mut final_line = resp.final_text.clone();
    if let Some(id) = resp.final_object_id {
        let mut obj = Map::new();
        obj.insert(
            "object_tag".into(),
            Value::String(resp.final_object_tag.clone().unwrap_or_default()),
        );
        obj.insert("object_id".into(), Value::from(id.0));
        if let Some(a) = &resp.final_answer {
            obj.insert("answer".into(), Value::String(a.clone()));
        }
        if !final_line.is_empty() {
            final_line.push(' ');
        }
        final_line.push_str(&Value::Object(obj).to_string());
    }
    format!(
        "STEP1 - inferred_query: {}\nSTEP2 - relevant_objects: [{}]\nSTEP3 - reason for relevance: {}\nSTEP4 - Final Answer: {}\nSTEP-5 - Explanation: {}\n",
        resp.inferred_query,
        ids.join(", "),
        resp.relevance_reason,
        final_line,
        resp.explanation
    )
}
