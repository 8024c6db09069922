//! Synthetic benchmark: scenes with planted relations, templated questions
//! with known answers, and scoring of any chat backend against them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{ChatBackend, OracleBackend};
use crate::oracle::{answer_query_deterministic, OracleConfig, SpatialRelation};
use crate::prompt::{ExampleLibrary, PromptBuilder, DEFAULT_TOKEN_BUDGET};
use crate::query::{QueryCategory, SizeQuestion, StructuredQuery};
use crate::response::{parse_response_with, validate_grounding, GroundingIssue, GroundingIssueKind, ParseOptions, ParsedResponse};
use crate::scene::{NodeId, ObjectNode, SceneGraph};

const BUILTIN_LEXICON: &str = include_str!("../assets/lexicon.json");

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid lexicon: {0}")]
    Lexicon(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub tag: String,
    #[serde(default)]
    pub affordances: Vec<String>,
    #[serde(default)]
    pub properties: Vec<String>,
}

impl LexiconEntry {
    pub fn has(&self, property: &str) -> bool {
        self.properties.iter().any(|p| p == property)
    }
}

/// Tag vocabulary with affordance and property annotations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    entries: Vec<LexiconEntry>,
}

impl Default for Lexicon {
    fn default() -> Self {
        Self::from_json(BUILTIN_LEXICON).expect("bundled lexicon is valid")
    }
}

impl Lexicon {
    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        let entries: Vec<LexiconEntry> =
            serde_json::from_str(text).map_err(|e| EvalError::Lexicon(e.to_string()))?;
        let mut seen = BTreeSet::new();
        for e in &entries {
            if e.tag.trim().is_empty() {
                return Err(EvalError::Lexicon("empty tag".into()));
            }
            if !seen.insert(e.tag.to_lowercase()) {
                return Err(EvalError::Lexicon(format!("duplicate tag {:?}", e.tag)));
            }
        }
        let lex = Self { entries };
        for role in ["surface", "container", "small"] {
            if lex.with_property(role).is_empty() {
                return Err(EvalError::Lexicon(format!("no tag has property {role:?}")));
            }
        }
        Ok(lex)
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    pub fn get(&self, tag: &str) -> Option<&LexiconEntry> {
        self.entries.iter().find(|e| e.tag.eq_ignore_ascii_case(tag))
    }

    fn with_property(&self, property: &str) -> Vec<&LexiconEntry> {
        self.entries.iter().filter(|e| e.has(property)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layout {
    Stacks,
    Clusters,
    Containers,
    Mixed,
}

impl std::str::FromStr for Layout {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "stacks" => Ok(Self::Stacks),
            "clusters" => Ok(Self::Clusters),
            "containers" => Ok(Self::Containers),
            "mixed" => Ok(Self::Mixed),
            _ => Err(format!("unknown layout {s:?}")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SceneRecipe {
    pub seed: u64,
    pub node_count: usize,
    pub layout: Layout,
    pub lexicon: Lexicon,
}

/// A relation true by construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum PlantedFact {
    OnTopOf { upper: NodeId, lower: NodeId },
    Contains { outer: NodeId, inner: NodeId },
}

#[derive(Debug, Clone)]
pub struct GeneratedScene {
    pub scene: SceneGraph<f64>,
    pub facts: Vec<PlantedFact>,
}

const COLORS: [&str; 8] = ["white", "black", "brown", "gray", "red", "blue", "green", "silver"];
const MATERIALS: [&str; 6] = ["wood", "metal", "fabric", "plastic", "ceramic", "leather"];
const CELL: f64 = 6.0;

fn r2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

struct Builder<'a> {
    rng: ChaCha8Rng,
    lexicon: &'a Lexicon,
    nodes: Vec<ObjectNode<f64>>,
    facts: Vec<PlantedFact>,
    group: usize,
}

impl Builder<'_> {
    fn pick(&mut self, property: &str) -> LexiconEntry {
        let pool = self.lexicon.with_property(property);
        (*pool.choose(&mut self.rng).expect("lexicon validated")).clone()
    }

    fn pick_any(&mut self) -> LexiconEntry {
        self.lexicon.entries.choose(&mut self.rng).expect("non-empty").clone()
    }

    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.gen_range(lo..hi)
    }

    fn extent_for(&mut self, entry: &LexiconEntry) -> [f64; 3] {
        let e = if entry.has("surface") || entry.has("large") {
            [self.uniform(0.8, 2.0), self.uniform(0.8, 2.0), self.uniform(0.4, 1.0)]
        } else if entry.has("container") {
            [self.uniform(0.5, 1.2), self.uniform(0.5, 1.2), self.uniform(0.5, 1.2)]
        } else if entry.has("flat") {
            [self.uniform(0.6, 1.5), self.uniform(0.02, 0.08), self.uniform(0.6, 1.5)]
        } else {
            [self.uniform(0.1, 0.5), self.uniform(0.1, 0.5), self.uniform(0.1, 0.5)]
        };
        e.map(r2)
    }

    /// Group anchor on a coarse grid so groups never touch.
    fn anchor(&mut self) -> (f64, f64) {
        let g = self.group;
        self.group += 1;
        let jx = self.uniform(-1.0, 1.0);
        let jy = self.uniform(-1.0, 1.0);
        (r2((g % 4) as f64 * CELL + jx), r2((g / 4) as f64 * CELL + jy))
    }

    fn push(&mut self, entry: &LexiconEntry, extent: [f64; 3], center: [f64; 3]) -> NodeId {
        let id = self.nodes.len() as u64;
        let color = if entry.has("transparent") {
            "clear"
        } else {
            COLORS[self.rng.gen_range(0..COLORS.len())]
        };
        let material = if entry.has("transparent") {
            "glass"
        } else {
            MATERIALS[self.rng.gen_range(0..MATERIALS.len())]
        };
        let node = ObjectNode::new(id, entry.tag.clone(), extent, center.map(r2))
            .with_caption(format!("The central object in this image is a {color} {}.", entry.tag))
            .with_color(color)
            .with_material(material);
        self.nodes.push(node);
        NodeId(id)
    }

    fn single(&mut self) {
        let entry = self.pick_any();
        let (x, y) = self.anchor();
        let e = self.extent_for(&entry);
        self.push(&entry, e, [x, y, e[2] / 2.0]);
    }

    /// A surface with `height - 1` small objects stacked on it.
    fn stack(&mut self, height: usize) {
        let base = self.pick("surface");
        let (x, y) = self.anchor();
        let mut lower_extent = self.extent_for(&base);
        let mut lower_center = [x, y, r2(lower_extent[2] / 2.0)];
        let mut lower_id = self.push(&base, lower_extent, lower_center);
        for _ in 1..height {
            let entry = self.pick("small");
            let mut e = self.extent_for(&entry);
            e[0] = r2(e[0].min(lower_extent[0] * 0.8));
            e[1] = r2(e[1].min(lower_extent[1] * 0.8));
            let sx = (lower_extent[0] - e[0]) / 2.0 * 0.9;
            let sy = (lower_extent[1] - e[1]) / 2.0 * 0.9;
            let cx = lower_center[0] + self.uniform(-1.0, 1.0) * sx;
            let cy = lower_center[1] + self.uniform(-1.0, 1.0) * sy;
            // Bottom face rests on the top face of the box below.
            let cz = lower_center[2] + lower_extent[2] / 2.0 + e[2] / 2.0;
            let center = [r2(cx), r2(cy), r2(cz)];
            let id = self.push(&entry, e, center);
            self.facts.push(PlantedFact::OnTopOf {
                upper: id,
                lower: lower_id,
            });
            lower_extent = e;
            lower_center = center;
            lower_id = id;
        }
    }

    /// A container with a strictly smaller object inside it.
    fn container(&mut self) {
        let outer = self.pick("container");
        let (x, y) = self.anchor();
        let oe = {
            let e = self.extent_for(&outer);
            e.map(|v| v.max(0.5))
        };
        let oc = [x, y, r2(oe[2] / 2.0)];
        let outer_id = self.push(&outer, oe, oc);
        let inner = self.pick("small");
        let mut ie = oe.map(|v| r2(v * self.rng.gen_range(0.3..0.7)));
        ie.shuffle(&mut self.rng);
        let inner_id = self.push(&inner, ie, oc);
        self.facts.push(PlantedFact::Contains {
            outer: outer_id,
            inner: inner_id,
        });
    }
}

/// Builds a scene from a recipe. Same recipe, same scene.
pub fn generate_scene(recipe: &SceneRecipe) -> GeneratedScene {
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(recipe.seed),
        lexicon: &recipe.lexicon,
        nodes: Vec::new(),
        facts: Vec::new(),
        group: 0,
    };
    let target = recipe.node_count.max(1);
    while b.nodes.len() < target {
        let left = target - b.nodes.len();
        if left == 1 {
            b.single();
            continue;
        }
        match recipe.layout {
            Layout::Stacks => {
                let h = b.rng.gen_range(2..=3).min(left);
                b.stack(h);
            }
            Layout::Containers => b.container(),
            Layout::Clusters => {
                let n = b.rng.gen_range(2..=4).min(left);
                let (x, y) = b.anchor();
                for _ in 0..n {
                    let entry = b.pick_any();
                    let e = b.extent_for(&entry);
                    let cx = x + b.uniform(-1.5, 1.5);
                    let cy = y + b.uniform(-1.5, 1.5);
                    b.push(&entry, e, [cx, cy, e[2] / 2.0]);
                }
            }
            Layout::Mixed => match b.group {
                0 => b.stack(2),
                1 => b.container(),
                _ => match b.rng.gen_range(0..3) {
                    0 => {
                        let h = b.rng.gen_range(2..=3).min(left);
                        b.stack(h);
                    }
                    1 => b.container(),
                    _ => b.single(),
                },
            },
        }
    }
    let scene = SceneGraph::new(b.nodes).expect("generated nodes are valid");
    GeneratedScene { scene, facts: b.facts }
}

/// What counts as a correct answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value")]
pub enum Expected {
    /// Any of these ids.
    Objects(Vec<NodeId>),
    /// Yes/no.
    Verdict(bool),
    /// The answer must list this relation.
    Relation(SpatialRelation),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthQuery {
    pub query_text: String,
    pub category: QueryCategory,
    pub expected: Expected,
    /// Structured form the text was generated from.
    pub structured: StructuredQuery,
}

fn name(scene: &SceneGraph<f64>, id: NodeId) -> String {
    let tag = scene.node(id).map_or("object", |n| n.object_tag.as_str());
    format!("the {tag} (id: {id})")
}

/// Templated questions for every planted fact, plus one affordance and one
/// negation question when the lexicon allows.
pub fn generate_queries(
    scene: &SceneGraph<f64>,
    facts: &[PlantedFact],
    lexicon: &Lexicon,
) -> Vec<GroundTruthQuery> {
    let mut out = Vec::new();
    for (i, fact) in facts.iter().enumerate() {
        match *fact {
            PlantedFact::OnTopOf { upper, lower } => {
                let (u, l) = (name(scene, upper), name(scene, lower));
                out.push(GroundTruthQuery {
                    query_text: format!("Is {u} located on top of {l}?"),
                    category: QueryCategory::OnTopOf,
                    expected: Expected::Verdict(true),
                    structured: StructuredQuery::OnTopOf {
                        subject: upper,
                        object: lower,
                    },
                });
                out.push(GroundTruthQuery {
                    query_text: format!("Is {l} located on top of {u}?"),
                    category: QueryCategory::OnTopOf,
                    expected: Expected::Verdict(false),
                    structured: StructuredQuery::OnTopOf {
                        subject: lower,
                        object: upper,
                    },
                });
                out.push(GroundTruthQuery {
                    query_text: format!("What is the relative position of {u} with respect to {l}?"),
                    category: QueryCategory::RelativePosition,
                    expected: Expected::Relation(SpatialRelation::Above),
                    structured: StructuredQuery::RelativePosition { a: upper, b: lower },
                });
            }
            PlantedFact::Contains { outer, inner } => {
                let (o, n) = (name(scene, outer), name(scene, inner));
                out.push(GroundTruthQuery {
                    query_text: format!("Can {o} contain {n}?"),
                    category: QueryCategory::Containment,
                    expected: Expected::Verdict(true),
                    structured: StructuredQuery::Containment { outer, inner },
                });
                out.push(GroundTruthQuery {
                    query_text: format!("Can {n} contain {o}?"),
                    category: QueryCategory::Containment,
                    expected: Expected::Verdict(false),
                    structured: StructuredQuery::Containment {
                        outer: inner,
                        inner: outer,
                    },
                });
                let (question, word, answer) = if i % 2 == 0 {
                    (SizeQuestion::Bigger, "bigger", outer)
                } else {
                    (SizeQuestion::Smaller, "smaller", inner)
                };
                out.push(GroundTruthQuery {
                    query_text: format!("Which is {word}, {n} or {o}?"),
                    category: QueryCategory::SizeCompare,
                    expected: Expected::Objects(vec![answer]),
                    structured: StructuredQuery::SizeCompare {
                        a: inner,
                        b: outer,
                        question,
                    },
                });
            }
        }
    }

    let entry_of = |n: &ObjectNode<f64>| lexicon.get(&n.object_tag);
    let affordance = scene
        .nodes()
        .iter()
        .filter_map(entry_of)
        .find_map(|e| e.affordances.first().cloned());
    if let Some(aff) = affordance {
        let ids: Vec<NodeId> = scene
            .nodes()
            .iter()
            .filter(|n| entry_of(n).is_some_and(|e| e.affordances.contains(&aff)))
            .map(|n| n.id)
            .collect();
        let text = format!("Something that can be used to {aff}");
        out.push(GroundTruthQuery {
            structured: StructuredQuery::Affordance { text: text.clone() },
            query_text: text,
            category: QueryCategory::Affordance,
            expected: Expected::Objects(ids),
        });
    }

    let not_opaque: Vec<NodeId> = scene
        .nodes()
        .iter()
        .filter(|n| entry_of(n).is_some_and(|e| !e.has("opaque")))
        .map(|n| n.id)
        .collect();
    if !not_opaque.is_empty() && not_opaque.len() < scene.len() {
        let text = "Something that is not opaque".to_string();
        out.push(GroundTruthQuery {
            structured: StructuredQuery::Negation { text: text.clone() },
            query_text: text,
            category: QueryCategory::Negation,
            expected: Expected::Objects(not_opaque),
        });
    }
    out
}

/// One scene with its questions.
#[derive(Debug, Clone)]
pub struct EvalCase {
    pub scene_index: usize,
    pub seed: u64,
    pub scene: SceneGraph<f64>,
    pub queries: Vec<GroundTruthQuery>,
}

/// `count` scenes with seeds `seed, seed + 1, ...`.
pub fn build_benchmark(seed: u64, count: usize, node_count: usize, layout: Layout, lexicon: &Lexicon) -> Vec<EvalCase> {
    (0..count)
        .map(|i| {
            let s = seed.wrapping_add(i as u64);
            let g = generate_scene(&SceneRecipe {
                seed: s,
                node_count,
                layout,
                lexicon: lexicon.clone(),
            });
            EvalCase {
                scene_index: i,
                seed: s,
                queries: generate_queries(&g.scene, &g.facts, lexicon),
                scene: g.scene,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Verdict {
    Correct,
    Incorrect,
    Ungrounded,
    Unparseable,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRecord {
    pub scene_index: usize,
    pub query_index: usize,
    pub query_text: String,
    pub category: QueryCategory,
    pub expected: Expected,
    pub oracle_answer: String,
    pub prompt_tokens: Option<usize>,
    pub compaction_steps: usize,
    pub raw_response: Option<String>,
    pub answer_object_id: Option<NodeId>,
    pub answer_text: Option<String>,
    pub issues: Vec<GroundingIssue>,
    pub verdict: Verdict,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Counts {
    pub total: usize,
    pub correct: usize,
    pub incorrect: usize,
    pub ungrounded: usize,
    pub unparseable: usize,
}

impl Counts {
    fn add(&mut self, v: Verdict) {
        self.total += 1;
        match v {
            Verdict::Correct => self.correct += 1,
            Verdict::Incorrect => self.incorrect += 1,
            Verdict::Ungrounded => self.ungrounded += 1,
            Verdict::Unparseable => self.unparseable += 1,
        }
    }

    /// Fraction correct; 0 for an empty bucket.
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub overall: Counts,
    pub accuracy: f64,
    pub per_category: BTreeMap<QueryCategory, Counts>,
    pub records: Vec<EvalRecord>,
}

impl EvalReport {
    fn from_records(records: Vec<EvalRecord>) -> Self {
        let mut overall = Counts::default();
        let mut per_category: BTreeMap<QueryCategory, Counts> = BTreeMap::new();
        for r in &records {
            overall.add(r.verdict);
            per_category.entry(r.category).or_default().add(r.verdict);
        }
        Self {
            accuracy: overall.accuracy(),
            overall,
            per_category,
            records,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One audit line per record.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<18} {:>6} {:>8} {:>10} {:>11} {:>12} {:>9}",
            "category", "total", "correct", "incorrect", "ungrounded", "unparseable", "accuracy"
        );
        let row = |out: &mut String, label: &str, c: &Counts| {
            let _ = writeln!(
                out,
                "{:<18} {:>6} {:>8} {:>10} {:>11} {:>12} {:>8.1}%",
                label,
                c.total,
                c.correct,
                c.incorrect,
                c.ungrounded,
                c.unparseable,
                c.accuracy() * 100.0
            );
        };
        for (cat, c) in &self.per_category {
            row(&mut out, cat.name(), c);
        }
        row(&mut out, "overall", &self.overall);
        out
    }

    pub fn category(&self, c: QueryCategory) -> Counts {
        self.per_category.get(&c).copied().unwrap_or_default()
    }
}

/// Where answers come from.
pub enum EvalBackend<'a> {
    /// Geometry oracle behind the chat interface, one per scene.
    Oracle,
    Chat(&'a dyn ChatBackend),
    /// A backend whose answers depend on call order; run sequentially.
    Sequential(&'a dyn ChatBackend),
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub oracle: OracleConfig<f64>,
    pub budget: usize,
    pub parse: ParseOptions,
    pub concurrency: usize,
    pub examples: ExampleLibrary,
    pub prompts: PromptBuilder,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            oracle: OracleConfig::default(),
            budget: DEFAULT_TOKEN_BUDGET,
            parse: ParseOptions::default(),
            concurrency: 4,
            examples: ExampleLibrary::default(),
            prompts: PromptBuilder::default(),
        }
    }
}

fn yes_no(text: &str) -> Option<bool> {
    let t = text.trim().trim_start_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
    if t.starts_with("yes") || t.starts_with("true") {
        Some(true)
    } else if t.starts_with("no") || t.starts_with("false") {
        Some(false)
    } else {
        None
    }
}

fn is_correct(expected: &Expected, resp: &ParsedResponse) -> bool {
    match expected {
        Expected::Objects(ids) => resp.final_object_id.is_some_and(|id| ids.contains(&id)),
        Expected::Verdict(v) => {
            let got = resp
                .final_answer
                .as_deref()
                .and_then(yes_no)
                .or_else(|| yes_no(&resp.final_text));
            got == Some(*v)
        }
        Expected::Relation(r) => match &resp.final_answer {
            Some(a) => a
                .split([',', ';'])
                .any(|part| SpatialRelation::from_name(part) == Some(*r)),
            None => resp.final_text.to_lowercase().contains(&r.name().to_lowercase()),
        },
    }
}

const GROUNDING_FAILURES: [GroundingIssueKind; 4] = [
    GroundingIssueKind::UnknownId,
    GroundingIssueKind::TooManyRelevant,
    GroundingIssueKind::TagMismatch,
    GroundingIssueKind::MalformedJson,
];

fn evaluate_one(
    case: &EvalCase,
    query_index: usize,
    backend: &dyn ChatBackend,
    cfg: &EvalConfig,
) -> EvalRecord {
    let q = &case.queries[query_index];
    let oracle_answer = match answer_query_deterministic(&case.scene, &q.structured, &cfg.oracle) {
        Ok(a) => a.summary(),
        Err(e) => format!("error: {e}"),
    };
    let mut record = EvalRecord {
        scene_index: case.scene_index,
        query_index,
        query_text: q.query_text.clone(),
        category: q.category,
        expected: q.expected.clone(),
        oracle_answer,
        prompt_tokens: None,
        compaction_steps: 0,
        raw_response: None,
        answer_object_id: None,
        answer_text: None,
        issues: Vec::new(),
        verdict: Verdict::Incorrect,
        error: None,
    };
    let examples = cfg.examples.select_examples(q.category);
    let prompt = match cfg.prompts.build(&case.scene, &q.query_text, &examples, cfg.budget) {
        Ok(p) => p,
        Err(e) => {
            record.error = Some(e.to_string());
            return record;
        }
    };
    record.prompt_tokens = Some(prompt.token_estimate);
    record.compaction_steps = prompt.compaction_report.len();
    let raw = match backend.complete(&prompt) {
        Ok(raw) => raw,
        Err(e) => {
            record.error = Some(e.to_string());
            return record;
        }
    };
    record.raw_response = Some(raw.clone());
    let parsed = match parse_response_with(&raw, cfg.parse) {
        Ok(p) => p,
        Err(e) => {
            record.verdict = Verdict::Unparseable;
            record.error = Some(e.to_string());
            return record;
        }
    };
    record.answer_object_id = parsed.final_object_id;
    record.answer_text = parsed.final_answer.clone();
    record.issues = validate_grounding(&parsed, &case.scene);
    record.verdict = if record.issues.iter().any(|i| GROUNDING_FAILURES.contains(&i.kind)) {
        Verdict::Ungrounded
    } else if is_correct(&q.expected, &parsed) {
        Verdict::Correct
    } else {
        Verdict::Incorrect
    };
    record
}

/// Runs every question through prompt, backend, parser and grounding check.
/// Per-question failures are recorded, not raised; the only error is a bad
/// configuration. Records come back in (scene, question) order whatever the
/// concurrency.
pub fn run_eval(cases: &[EvalCase], backend: EvalBackend<'_>, cfg: &EvalConfig) -> Result<EvalReport, EvalError> {
    cfg.oracle
        .validate()
        .map_err(|e| EvalError::Config(e.to_string()))?;
    if cfg.concurrency == 0 {
        return Err(EvalError::Config("concurrency must be >= 1".into()));
    }
    let jobs: Vec<(usize, usize)> = cases
        .iter()
        .enumerate()
        .flat_map(|(ci, c)| (0..c.queries.len()).map(move |qi| (ci, qi)))
        .collect();

    let oracles: Vec<OracleBackend<f64>> = match backend {
        EvalBackend::Oracle => cases
            .iter()
            .map(|c| OracleBackend::new(c.scene.clone(), cfg.oracle))
            .collect(),
        _ => Vec::new(),
    };
    let backend_for = |ci: usize| -> &dyn ChatBackend {
        match backend {
            EvalBackend::Oracle => &oracles[ci],
            EvalBackend::Chat(b) | EvalBackend::Sequential(b) => b,
        }
    };
    let workers = match backend {
        EvalBackend::Sequential(_) => 1,
        _ => cfg.concurrency.min(jobs.len()).max(1),
    };

    let slots: Mutex<Vec<Option<EvalRecord>>> = Mutex::new(vec![None; jobs.len()]);
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(ci, qi)) = jobs.get(j) else { break };
                let rec = evaluate_one(&cases[ci], qi, backend_for(ci), cfg);
                slots.lock().unwrap()[j] = Some(rec);
            });
        }
    });
    let records = slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect();
    Ok(EvalReport::from_records(records))
}
