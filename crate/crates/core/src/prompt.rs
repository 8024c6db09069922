//! System prompt assembly under a token budget.
//!
//! The template carries three placeholders: `{scenegraph}`, `{examples}` and
//! `{input}`. When the serialized scene does not fit, the scene is compacted
//! in a fixed order: captions, then color/material, then numeric precision,
//! then whole nodes by ascending lexical relevance to the query.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::query::QueryCategory;
use crate::scalar::Scalar;
use crate::scene::{serialize_scene, NodeId, ObjectNode, SceneGraph, SerializeOptions};

/// Template shipped with the crate.
pub const DEFAULT_TEMPLATE: &str = include_str!("../assets/system_prompt.txt");
const BUILTIN_EXAMPLES: &str = include_str!("../assets/examples.json");

/// Context size of the default model.
pub const DEFAULT_TOKEN_BUDGET: usize = 16_000;

pub const PLACEHOLDER_SCENE: &str = "{scenegraph}";
pub const PLACEHOLDER_EXAMPLES: &str = "{examples}";
pub const PLACEHOLDER_INPUT: &str = "{input}";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("budget of {budget} tokens is infeasible: needs at least {required} ({} over)", required - budget)]
    BudgetInfeasible { budget: usize, required: usize },
    #[error("template must contain {placeholder} exactly once, found {count}")]
    Placeholder { placeholder: &'static str, count: usize },
    #[error("invalid example library: {0}")]
    Examples(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Character-count heuristic: ceil(chars / 4).
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            text: DEFAULT_TEMPLATE.to_string(),
        }
    }
}

impl PromptTemplate {
    pub fn new(text: impl Into<String>) -> Result<Self, PromptError> {
        let text = text.into();
        for placeholder in [PLACEHOLDER_SCENE, PLACEHOLDER_EXAMPLES, PLACEHOLDER_INPUT] {
            let count = text.matches(placeholder).count();
            if count != 1 {
                return Err(PromptError::Placeholder { placeholder, count });
            }
        }
        Ok(Self { text })
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path).map_err(|source| PromptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::new(text)
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Substitutes all placeholders in one pass, so substituted text is never
    /// rescanned.
    pub fn render(&self, scenegraph: &str, examples: &str, input: &str) -> String {
        let mut out = String::with_capacity(self.text.len() + scenegraph.len() + examples.len() + input.len());
        let mut rest = self.text.as_str();
        while let Some(pos) = rest.find('{') {
            out.push_str(&rest[..pos]);
            let tail = &rest[pos..];
            let hit = [
                (PLACEHOLDER_SCENE, scenegraph),
                (PLACEHOLDER_EXAMPLES, examples),
                (PLACEHOLDER_INPUT, input),
            ]
            .into_iter()
            .find(|(p, _)| tail.starts_with(p));
            match hit {
                Some((p, value)) => {
                    out.push_str(value);
                    rest = &tail[p.len()..];
                }
                None => {
                    out.push('{');
                    rest = &tail[1..];
                }
            }
        }
        out.push_str(rest);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InContextExample {
    pub question: String,
    pub answer: String,
    pub category: QueryCategory,
}

/// Parses an example file: a JSON array of `{question, answer, category}`.
pub fn parse_examples(json_text: &str) -> Result<Vec<InContextExample>, PromptError> {
    let examples: Vec<InContextExample> =
        serde_json::from_str(json_text).map_err(|e| PromptError::Examples(e.to_string()))?;
    for (i, ex) in examples.iter().enumerate() {
        if ex.question.trim().is_empty() || ex.answer.trim().is_empty() {
            return Err(PromptError::Examples(format!(
                "example {i} has an empty question or answer"
            )));
        }
    }
    Ok(examples)
}

/// Built-in demonstrations plus user-registered ones.
#[derive(Debug, Clone)]
pub struct ExampleLibrary {
    builtins: Vec<InContextExample>,
    custom: Vec<InContextExample>,
}

impl Default for ExampleLibrary {
    fn default() -> Self {
        Self {
            builtins: builtin_examples(),
            custom: Vec::new(),
        }
    }
}

pub fn builtin_examples() -> Vec<InContextExample> {
    parse_examples(BUILTIN_EXAMPLES).expect("bundled examples are valid")
}

impl ExampleLibrary {
    pub fn register(&mut self, example: InContextExample) {
        self.custom.push(example);
    }

    pub fn load_custom(&mut self, path: &Path) -> Result<(), PromptError> {
        let text = std::fs::read_to_string(path).map_err(|source| PromptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.custom.extend(parse_examples(&text)?);
        Ok(())
    }

    /// Both built-ins always, then custom examples registered for `category`
    /// in registration order.
    pub fn select_examples(&self, category: QueryCategory) -> Vec<InContextExample> {
        self.builtins
            .iter()
            .chain(self.custom.iter().filter(|e| e.category == category))
            .cloned()
            .collect()
    }
}

/// Renders demonstrations in the QUESTION/ANSWER layout.
pub fn format_examples(examples: &[InContextExample]) -> String {
    let blocks: Vec<String> = examples
        .iter()
        .map(|e| format!("QUESTION = \"{}\"\n\nANSWER = [\n    \"{}\"]", e.question, e.answer))
        .collect();
    if blocks.is_empty() {
        String::new()
    } else {
        format!("\n\n{}\n", blocks.join("\n\n"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CompactionStep {
    DropCaptions,
    DropColorMaterial,
    RoundNumerics,
    PruneNodes,
}

/// One reduction applied to the scene, with its effect on the estimate of
/// the serialized scene text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompactionAction {
    pub step: CompactionStep,
    pub tokens_before: usize,
    pub tokens_after: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub removed_ids: Vec<NodeId>,
}

/// A scene reduced to fit, plus how to write it.
#[derive(Debug, Clone, PartialEq)]
pub struct Compaction<T> {
    pub scene: SceneGraph<T>,
    pub options: SerializeOptions,
    pub actions: Vec<CompactionAction>,
}

impl<T: Scalar> Compaction<T> {
    pub fn serialized(&self) -> String {
        serialize_scene(&self.scene, &self.options)
    }
}

fn words(text: &str) -> HashSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Whether the node's tag occurs in the query as whole words.
pub fn tag_mentioned<T: Scalar>(node: &ObjectNode<T>, query: &str) -> bool {
    let tag = node.object_tag.to_lowercase();
    let q = query.to_lowercase();
    q.match_indices(tag.as_str()).any(|(start, _)| {
        let end = start + tag.len();
        let before = q[..start].chars().next_back();
        let after = q[end..].chars().next();
        !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
    })
}

/// Number of query words shared with the node's tag and caption.
pub fn lexical_relevance<T: Scalar>(node: &ObjectNode<T>, query_words: &HashSet<String>) -> usize {
    let mut node_words = words(&node.object_tag);
    node_words.extend(words(&node.caption));
    node_words.intersection(query_words).count()
}

/// Reduces `scene` until its serialization fits in `budget - template_overhead`
/// tokens. A fitting scene comes back unchanged with no actions. Pruning never
/// removes a node whose tag the query mentions and never empties the scene.
pub fn compact_scene<T: Scalar>(
    scene: &SceneGraph<T>,
    query: &str,
    budget: usize,
    template_overhead: usize,
) -> Result<Compaction<T>, PromptError> {
    if budget <= template_overhead {
        return Err(PromptError::BudgetInfeasible {
            budget,
            required: template_overhead + 1,
        });
    }
    let available = budget - template_overhead;
    let measure = |s: &SceneGraph<T>, o: &SerializeOptions| estimate_tokens(&serialize_scene(s, o));

    let mut current = scene.clone();
    let mut options = SerializeOptions::exact();
    let mut tokens = measure(&current, &options);
    let mut actions = Vec::new();
    let done = |current, options, actions| Ok(Compaction { scene: current, options, actions });
    if tokens <= available {
        return done(current, options, actions);
    }

    type FieldStep = (CompactionStep, fn(&mut SerializeOptions));
    let field_steps: [FieldStep; 2] = [
        (CompactionStep::DropCaptions, |o| o.include_caption = false),
        (CompactionStep::DropColorMaterial, |o| {
            o.include_color = false;
            o.include_material = false;
            o.include_extra = false;
        }),
    ];
    for (step, apply) in field_steps {
        let mut next = options;
        apply(&mut next);
        let after = measure(&current, &next);
        if after < tokens {
            actions.push(CompactionAction {
                step,
                tokens_before: tokens,
                tokens_after: after,
                removed_ids: Vec::new(),
            });
            options = next;
            tokens = after;
        }
        if tokens <= available {
            return done(current, options, actions);
        }
    }

    let rounded = current.map_nodes(|n| {
        n.bbox_extent = n.bbox_extent.map(|v| v.round_to(1));
        n.bbox_center = n.bbox_center.map(|v| v.round_to(1));
    });
    let rounded_options = SerializeOptions {
        precision: Some(1),
        ..options
    };
    let after = measure(&rounded, &rounded_options);
    if after < tokens {
        actions.push(CompactionAction {
            step: CompactionStep::RoundNumerics,
            tokens_before: tokens,
            tokens_after: after,
            removed_ids: Vec::new(),
        });
        current = rounded;
        options = rounded_options;
        tokens = after;
    }
    if tokens <= available {
        return done(current, options, actions);
    }

    // Prune order: least relevant first, later nodes first among ties.
    let query_words = words(query);
    let mut candidates: Vec<(usize, usize, NodeId)> = current
        .nodes()
        .iter()
        .enumerate()
        .filter(|(_, n)| !tag_mentioned(n, query))
        .map(|(i, n)| (lexical_relevance(n, &query_words), i, n.id))
        .collect();
    candidates.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
    let protected = current.len() - candidates.len();
    let max_prune = if protected == 0 {
        candidates.len().saturating_sub(1)
    } else {
        candidates.len()
    };

    let pruned = |k: usize| {
        let drop: HashSet<NodeId> = candidates[..k].iter().map(|c| c.2).collect();
        current.retain(|n| !drop.contains(&n.id))
    };
    let skeleton_tokens = measure(&pruned(max_prune), &options);
    if skeleton_tokens > available {
        return Err(PromptError::BudgetInfeasible {
            budget,
            required: template_overhead + skeleton_tokens,
        });
    }
    // Smallest k that fits; the estimate is non-increasing in k.
    let (mut lo, mut hi) = (1, max_prune);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if measure(&pruned(mid), &options) <= available {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let reduced = pruned(lo);
    let after = measure(&reduced, &options);
    actions.push(CompactionAction {
        step: CompactionStep::PruneNodes,
        tokens_before: tokens,
        tokens_after: after,
        removed_ids: candidates[..lo].iter().map(|c| c.2).collect(),
    });
    done(reduced, options, actions)
}

/// Fully assembled system prompt.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptBundle {
    pub system_text: String,
    /// The bare user question, sent as the user message.
    pub user_query: String,
    pub token_estimate: usize,
    pub included_node_ids: Vec<NodeId>,
    pub compaction_report: Vec<CompactionAction>,
}

#[derive(Debug, Clone, Default)]
pub struct PromptBuilder {
    template: PromptTemplate,
}

impl PromptBuilder {
    pub fn new(template: PromptTemplate) -> Self {
        Self { template }
    }

    pub fn template(&self) -> &PromptTemplate {
        &self.template
    }

    /// Tokens used by everything except the scene text.
    pub fn overhead(&self, query: &str, examples: &[InContextExample]) -> usize {
        estimate_tokens(&self.template.render("", &format_examples(examples), query))
    }

    pub fn build<T: Scalar>(
        &self,
        scene: &SceneGraph<T>,
        query: &str,
        examples: &[InContextExample],
        budget: usize,
    ) -> Result<PromptBundle, PromptError> {
        let examples_text = format_examples(examples);
        let overhead = estimate_tokens(&self.template.render("", &examples_text, query));
        let compaction = compact_scene(scene, query, budget, overhead)?;
        let system_text = self
            .template
            .render(&compaction.serialized(), &examples_text, query);
        let token_estimate = estimate_tokens(&system_text);
        // ceil(a/4) + ceil(b/4) >= ceil((a+b)/4), so this cannot trip.
        debug_assert!(token_estimate <= budget);
        Ok(PromptBundle {
            system_text,
            user_query: query.to_string(),
            token_estimate,
            included_node_ids: compaction.scene.ids().collect(),
            compaction_report: compaction.actions,
        })
    }
}

/// Builds a prompt with the default template.
pub fn build_prompt<T: Scalar>(
    scene: &SceneGraph<T>,
    query: &str,
    examples: &[InContextExample],
    budget: usize,
) -> Result<PromptBundle, PromptError> {
    PromptBuilder::default().build(scene, query, examples, budget)
}
