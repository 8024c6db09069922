//! Grounding engine for LLM-readable 3D scene graphs.
//!
//! Scenes are arrays of axis-aligned object boxes. The crate answers spatial
//! and geometric questions two ways: directly through a deterministic
//! geometry oracle, and through a language model fed an assembled prompt
//! whose five-step answer is parsed and checked against the scene. The
//! [`eval`] module scores one against the other on synthetic scenes.
//!
//! Geometry is generic over [`Scalar`] (`f32` or `f64`); the aliases below fix
//! the common `f64` case.

pub mod eval;
pub mod llm;
pub mod oracle;
pub mod prompt;
pub mod query;
pub mod response;
pub mod scalar;
pub mod scene;

pub use oracle::{
    answer_query_deterministic, can_contain, derive_edges, near, on_top_of, relative_position,
    size_compare, OracleError, SizeRelation, SpatialRelation,
};
pub use prompt::{build_prompt, compact_scene, estimate_tokens, PromptBundle, PromptError};
pub use query::{interpret_query, QueryCategory, SizeQuestion, StructuredQuery};
pub use response::{
    extract_json_block, parse_response, validate_grounding, GroundingIssue, GroundingIssueKind,
    ParseError, ParsedResponse,
};
pub use scalar::Scalar;
pub use scene::{aabb_of, parse_scene, serialize_scene, Edge, NodeId, SceneError, SerializeOptions};

pub type Vec3 = scene::Vec3<f64>;
pub type Aabb = scene::Aabb<f64>;
pub type ObjectNode = scene::ObjectNode<f64>;
pub type SceneGraph = scene::SceneGraph<f64>;
pub type OracleConfig = oracle::OracleConfig<f64>;
pub type OracleAnswer = oracle::OracleAnswer<f64>;
pub type SizeOrdering = oracle::SizeOrdering<f64>;
pub type RelativePosition = oracle::RelativePosition<f64>;
pub type Compaction = prompt::Compaction<f64>;

pub type Vec3f = scene::Vec3<f32>;
pub type ObjectNodef = scene::ObjectNode<f32>;
pub type SceneGraphf = scene::SceneGraph<f32>;
pub type OracleConfigf = oracle::OracleConfig<f32>;
