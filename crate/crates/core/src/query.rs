//! Query categories and a keyword interpreter that maps natural-language
//! questions onto structured oracle queries.

use std::fmt;
use std::str::FromStr;

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::scene::{NodeId, SceneGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum QueryCategory {
    Affordance,
    Negation,
    SizeCompare,
    Containment,
    OnTopOf,
    RelativePosition,
    Freeform,
}

impl QueryCategory {
    pub const ALL: [QueryCategory; 7] = [
        Self::Affordance,
        Self::Negation,
        Self::SizeCompare,
        Self::Containment,
        Self::OnTopOf,
        Self::RelativePosition,
        Self::Freeform,
    ];

    /// Categories the geometry oracle can decide on its own.
    pub const DECIDABLE: [QueryCategory; 4] = [
        Self::SizeCompare,
        Self::Containment,
        Self::OnTopOf,
        Self::RelativePosition,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Affordance => "Affordance",
            Self::Negation => "Negation",
            Self::SizeCompare => "SizeCompare",
            Self::Containment => "Containment",
            Self::OnTopOf => "OnTopOf",
            Self::RelativePosition => "RelativePosition",
            Self::Freeform => "Freeform",
        }
    }

    pub fn is_decidable(self) -> bool {
        Self::DECIDABLE.contains(&self)
    }
}

impl fmt::Display for QueryCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for QueryCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown query category {s:?}"))
    }
}

/// Which side of a size comparison the question asks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SizeQuestion {
    Bigger,
    Smaller,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum StructuredQuery {
    OnTopOf { subject: NodeId, object: NodeId },
    SizeCompare { a: NodeId, b: NodeId, question: SizeQuestion },
    Containment { outer: NodeId, inner: NodeId },
    RelativePosition { a: NodeId, b: NodeId },
    Affordance { text: String },
    Negation { text: String },
    Freeform { text: String },
}

impl StructuredQuery {
    pub fn category(&self) -> QueryCategory {
        match self {
            Self::OnTopOf { .. } => QueryCategory::OnTopOf,
            Self::SizeCompare { .. } => QueryCategory::SizeCompare,
            Self::Containment { .. } => QueryCategory::Containment,
            Self::RelativePosition { .. } => QueryCategory::RelativePosition,
            Self::Affordance { .. } => QueryCategory::Affordance,
            Self::Negation { .. } => QueryCategory::Negation,
            Self::Freeform { .. } => QueryCategory::Freeform,
        }
    }

    /// Node ids the query names, in argument order.
    pub fn node_ids(&self) -> Vec<NodeId> {
        match self {
            Self::OnTopOf { subject, object } => vec![*subject, *object],
            Self::SizeCompare { a, b, .. } | Self::RelativePosition { a, b } => vec![*a, *b],
            Self::Containment { outer, inner } => vec![*outer, *inner],
            _ => Vec::new(),
        }
    }
}

static ID_MENTION: Lazy<Regex> = Lazy::new(|| Regex::new(r"(?i)\bid\s*:\s*(\d+)").unwrap());
static ID_AFTER_TAG: Lazy<Regex> = Lazy::new(|| Regex::new(r"^\s*\(\s*id\s*:").unwrap());
static NOT_WORD: Lazy<Regex> = Lazy::new(|| Regex::new(r"\bnot\b|n't\b").unwrap());

/// Objects named by a query, ordered by where they first appear.
///
/// Explicit `(id: N)` references win; otherwise a tag mention resolves to
/// the first node carrying that tag. Ids that are not in the scene are kept,
/// so the caller can report them.
pub fn mentioned_nodes<T: Scalar>(scene: &SceneGraph<T>, query: &str) -> Vec<NodeId> {
    let lower = query.to_lowercase();
    let mut mentions: Vec<(usize, NodeId)> = Vec::new();
    let mut taken: Vec<(usize, usize)> = Vec::new();

    for cap in ID_MENTION.captures_iter(&lower) {
        let m = cap.get(0).unwrap();
        if let Ok(id) = cap[1].parse::<u64>() {
            mentions.push((m.start(), NodeId(id)));
            taken.push((m.start(), m.end()));
        }
    }

    let mut tags: Vec<(String, NodeId)> = Vec::new();
    for n in scene.nodes() {
        let t = n.object_tag.to_lowercase();
        if !tags.iter().any(|(s, _)| *s == t) {
            tags.push((t, n.id));
        }
    }
    tags.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));

    for (tag, id) in &tags {
        for (start, _) in lower.match_indices(tag.as_str()) {
            let end = start + tag.len();
            if !is_word_boundary(&lower, start, end) {
                continue;
            }
            if taken.iter().any(|&(s, e)| start < e && s < end) {
                continue;
            }
            taken.push((start, end));
            // "couch (id: 28)" names one object, already counted by its id.
            if ID_AFTER_TAG.is_match(&lower[end..]) {
                continue;
            }
            mentions.push((start, *id));
        }
    }

    mentions.sort_by_key(|(pos, _)| *pos);
    let mut out: Vec<NodeId> = Vec::new();
    for (_, id) in mentions {
        if !out.contains(&id) {
            out.push(id);
        }
    }
    out
}

fn is_word_boundary(text: &str, start: usize, end: usize) -> bool {
    let before = text[..start].chars().next_back();
    let after = text[end..].chars().next();
    let is_word = |c: Option<char>| c.is_some_and(|c| c.is_alphanumeric() || c == '_');
    // A trailing plural "s" still names the tag.
    let after_ok = !is_word(after) || (after == Some('s') && !is_word(text[end + 1..].chars().next()));
    !is_word(before) && after_ok
}

/// Maps a natural-language question onto a structured query by keyword.
pub fn interpret_query<T: Scalar>(scene: &SceneGraph<T>, query: &str) -> StructuredQuery {
    let lower = query.to_lowercase();
    let ids = mentioned_nodes(scene, query);
    let pair = (ids.len() >= 2).then(|| (ids[0], ids[1]));
    let has = |k: &str| lower.contains(k);

    if let Some((a, b)) = pair {
        if has("on top of") || has("on the top of") {
            return StructuredQuery::OnTopOf { subject: a, object: b };
        }
        if has("fit inside") || has("fit in ") || has("fit into") {
            return StructuredQuery::Containment { outer: b, inner: a };
        }
        if has("contain") || has("accommodate") || has("accomodate") || has("hold ") {
            return StructuredQuery::Containment { outer: a, inner: b };
        }
        if has("bigger") || has("larger") {
            return StructuredQuery::SizeCompare {
                a,
                b,
                question: SizeQuestion::Bigger,
            };
        }
        if has("smaller") {
            return StructuredQuery::SizeCompare {
                a,
                b,
                question: SizeQuestion::Smaller,
            };
        }
        if has("relative position")
            || has("with respect to")
            || has("w.r.t")
            || has("relative to")
            || has("where is")
            || has("spatial relationship")
        {
            return StructuredQuery::RelativePosition { a, b };
        }
    }

    let text = query.trim().to_string();
    if has("used to") || has("used for") || has("use to") {
        return StructuredQuery::Affordance { text };
    }
    if NOT_WORD.is_match(&lower) {
        return StructuredQuery::Negation { text };
    }
    StructuredQuery::Freeform { text }
}
