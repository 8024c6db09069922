//! Scene-graph data model and the object-array JSON format.
//!
//! A scene file is a top-level JSON array; each element describes one object
//! with the keys `id`, `bbox_extent`, `bbox_center`, `object_tag`, `caption`,
//! `color` and `material`. Lengths are meters, boxes are axis aligned in the
//! world frame and `z` is height. Unknown keys survive a parse/serialize
//! round trip and are written after the known ones.

use std::collections::HashSet;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::oracle::SpatialRelation;
use crate::scalar::Scalar;

pub const KEY_ID: &str = "id";
pub const KEY_EXTENT: &str = "bbox_extent";
pub const KEY_CENTER: &str = "bbox_center";
pub const KEY_TAG: &str = "object_tag";
pub const KEY_CAPTION: &str = "caption";
pub const KEY_COLOR: &str = "color";
pub const KEY_MATERIAL: &str = "material";

const KNOWN_KEYS: [&str; 7] = [
    KEY_ID,
    KEY_EXTENT,
    KEY_CENTER,
    KEY_TAG,
    KEY_CAPTION,
    KEY_COLOR,
    KEY_MATERIAL,
];

/// Object identifier, unique within one scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Scalar> Vec3<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn from_array(a: [T; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn map(self, f: impl Fn(T) -> T) -> Self {
        Self::new(f(self.x), f(self.y), f(self.z))
    }

    pub fn minus(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }

    pub fn plus(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }

    pub fn norm_squared(self) -> T {
        self.x * self.x + self.y * self.y + self.z * self.z
    }

    pub fn product(self) -> T {
        self.x * self.y * self.z
    }

    /// Components in ascending order.
    pub fn sorted(self) -> [T; 3] {
        let mut a = self.to_array();
        a.sort_by(|p, q| p.partial_cmp(q).expect("finite components"));
        a
    }
}

/// Axis-aligned box as min/max corners.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb<T> {
    pub min: Vec3<T>,
    pub max: Vec3<T>,
}

impl<T: Scalar> Aabb<T> {
    pub fn size(&self) -> Vec3<T> {
        self.max.minus(self.min)
    }

    pub fn volume(&self) -> T {
        self.size().product()
    }

    /// Closed-interval overlap of the xy projections.
    pub fn footprint_intersects(&self, other: &Self) -> bool {
        self.min.x <= other.max.x
            && other.min.x <= self.max.x
            && self.min.y <= other.max.y
            && other.min.y <= self.max.y
    }

    pub fn intersects(&self, other: &Self) -> bool {
        self.footprint_intersects(other) && self.min.z <= other.max.z && other.min.z <= self.max.z
    }
}

/// One object in the scene.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectNode<T> {
    pub id: NodeId,
    /// Side lengths of the box along x, y, z.
    pub bbox_extent: Vec3<T>,
    pub bbox_center: Vec3<T>,
    pub object_tag: String,
    pub caption: String,
    pub color: String,
    pub material: String,
    /// Keys outside the known seven, in input order.
    pub extra: Map<String, Value>,
}

impl<T: Scalar> ObjectNode<T> {
    pub fn new(id: u64, tag: impl Into<String>, extent: [T; 3], center: [T; 3]) -> Self {
        Self {
            id: NodeId(id),
            bbox_extent: Vec3::from_array(extent),
            bbox_center: Vec3::from_array(center),
            object_tag: tag.into(),
            caption: String::new(),
            color: String::new(),
            material: String::new(),
            extra: Map::new(),
        }
    }

    pub fn with_caption(mut self, caption: impl Into<String>) -> Self {
        self.caption = caption.into();
        self
    }

    pub fn with_color(mut self, color: impl Into<String>) -> Self {
        self.color = color.into();
        self
    }

    pub fn with_material(mut self, material: impl Into<String>) -> Self {
        self.material = material.into();
        self
    }

    pub fn aabb(&self) -> Aabb<T> {
        aabb_of(self)
    }
}

/// Derives the min/max corners from a node's center and extent.
pub fn aabb_of<T: Scalar>(node: &ObjectNode<T>) -> Aabb<T> {
    let half = node.bbox_extent.map(|e| e * T::half());
    Aabb {
        min: node.bbox_center.minus(half),
        max: node.bbox_center.plus(half),
    }
}

/// Directed spatial relation between two nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub subject: NodeId,
    pub relation: SpatialRelation,
    pub object: NodeId,
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.subject, self.relation, self.object)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SceneError {
    #[error("malformed JSON: {0}")]
    Json(String),
    #[error("scene must be a JSON array of objects")]
    NotAnArray,
    #[error("node {index}: expected a JSON object")]
    NotAnObject { index: usize },
    #[error("node {index}: missing required field \"{field}\"")]
    MissingField { index: usize, field: &'static str },
    #[error("node {index}: field \"{field}\" must be {expected}")]
    WrongType {
        index: usize,
        field: &'static str,
        expected: &'static str,
    },
    #[error("node {index}: field \"{field}\" must have 3 elements, found {len}")]
    WrongLength {
        index: usize,
        field: &'static str,
        len: usize,
    },
    #[error("node {index}: field \"{field}\" contains a non-finite number")]
    NonFinite { index: usize, field: &'static str },
    #[error("node {index}: field \"bbox_extent\" has negative component on axis {axis}")]
    NegativeExtent { index: usize, axis: char },
    #[error("node {index}: field \"object_tag\" is empty")]
    EmptyTag { index: usize },
    #[error("node {index}: duplicate id {id}")]
    DuplicateId { index: usize, id: NodeId },
    #[error("edge refers to unknown node id {id}")]
    DanglingEdge { id: NodeId },
}

impl SceneError {
    /// Index of the offending node, when the error is tied to one.
    pub fn node_index(&self) -> Option<usize> {
        match self {
            Self::NotAnObject { index }
            | Self::MissingField { index, .. }
            | Self::WrongType { index, .. }
            | Self::WrongLength { index, .. }
            | Self::NonFinite { index, .. }
            | Self::NegativeExtent { index, .. }
            | Self::EmptyTag { index }
            | Self::DuplicateId { index, .. } => Some(*index),
            _ => None,
        }
    }
}

/// Ordered node collection plus derived relations. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGraph<T> {
    nodes: Vec<ObjectNode<T>>,
    edges: Vec<Edge>,
}

impl<T: Scalar> Default for SceneGraph<T> {
    fn default() -> Self {
        Self {
            nodes: Vec::new(),
            edges: Vec::new(),
        }
    }
}

impl<T: Scalar> SceneGraph<T> {
    /// Builds a scene, enforcing the node invariants.
    pub fn new(nodes: Vec<ObjectNode<T>>) -> Result<Self, SceneError> {
        let mut seen = HashSet::with_capacity(nodes.len());
        for (index, node) in nodes.iter().enumerate() {
            check_node(index, node)?;
            if !seen.insert(node.id) {
                return Err(SceneError::DuplicateId { index, id: node.id });
            }
        }
        Ok(Self {
            nodes,
            edges: Vec::new(),
        })
    }

    /// Attaches a relation list; every endpoint must name a node.
    pub fn with_edges(mut self, edges: Vec<Edge>) -> Result<Self, SceneError> {
        for e in &edges {
            for id in [e.subject, e.object] {
                if self.node(id).is_none() {
                    return Err(SceneError::DanglingEdge { id });
                }
            }
        }
        self.edges = edges;
        Ok(self)
    }

    pub fn nodes(&self) -> &[ObjectNode<T>] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> Option<&ObjectNode<T>> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().map(|n| n.id)
    }

    /// Keeps nodes matching `keep`, preserving order. Edges touching removed
    /// nodes are dropped.
    pub fn retain(&self, keep: impl Fn(&ObjectNode<T>) -> bool) -> Self {
        let nodes: Vec<_> = self.nodes.iter().filter(|n| keep(n)).cloned().collect();
        let ids: HashSet<_> = nodes.iter().map(|n| n.id).collect();
        let edges = self
            .edges
            .iter()
            .filter(|e| ids.contains(&e.subject) && ids.contains(&e.object))
            .copied()
            .collect();
        Self { nodes, edges }
    }

    /// Applies `f` to every node. The caller must keep ids, tags and extents
    /// valid; this is checked in debug builds.
    pub fn map_nodes(&self, f: impl Fn(&mut ObjectNode<T>)) -> Self {
        let mut nodes = self.nodes.clone();
        nodes.iter_mut().for_each(f);
        debug_assert!(nodes.iter().enumerate().all(|(i, n)| check_node(i, n).is_ok()));
        Self {
            nodes,
            edges: self.edges.clone(),
        }
    }
}

fn check_node<T: Scalar>(index: usize, node: &ObjectNode<T>) -> Result<(), SceneError> {
    if !node.bbox_extent.is_finite() {
        return Err(SceneError::NonFinite {
            index,
            field: KEY_EXTENT,
        });
    }
    if !node.bbox_center.is_finite() {
        return Err(SceneError::NonFinite {
            index,
            field: KEY_CENTER,
        });
    }
    for (axis, v) in ['x', 'y', 'z'].into_iter().zip(node.bbox_extent.to_array()) {
        if v < T::zero() {
            return Err(SceneError::NegativeExtent { index, axis });
        }
    }
    if node.object_tag.is_empty() {
        return Err(SceneError::EmptyTag { index });
    }
    Ok(())
}

/// Result of checking a scene document without stopping at the first problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    /// Number of array elements, valid or not.
    pub node_count: usize,
    pub issues: Vec<SceneError>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Checks every node of a scene document and collects all issues.
pub fn validate_scene_json<T: Scalar>(json_text: &str) -> ValidationReport {
    match collect_nodes::<T>(json_text) {
        Ok((node_count, results)) => ValidationReport {
            node_count,
            issues: results.into_iter().filter_map(Result::err).collect(),
        },
        Err(e) => ValidationReport {
            node_count: 0,
            issues: vec![e],
        },
    }
}

/// Parses a scene document. Edges are left empty.
pub fn parse_scene<T: Scalar>(json_text: &str) -> Result<SceneGraph<T>, SceneError> {
    let (_, results) = collect_nodes::<T>(json_text)?;
    let nodes = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(SceneGraph {
        nodes,
        edges: Vec::new(),
    })
}

type NodeResults<T> = Vec<Result<ObjectNode<T>, SceneError>>;

fn collect_nodes<T: Scalar>(json_text: &str) -> Result<(usize, NodeResults<T>), SceneError> {
    let value: Value = serde_json::from_str(json_text).map_err(|e| SceneError::Json(e.to_string()))?;
    let Value::Array(items) = value else {
        return Err(SceneError::NotAnArray);
    };
    let mut seen = HashSet::with_capacity(items.len());
    let results = items
        .into_iter()
        .enumerate()
        .map(|(index, item)| {
            let node = node_from_value::<T>(index, item)?;
            if !seen.insert(node.id) {
                return Err(SceneError::DuplicateId { index, id: node.id });
            }
            Ok(node)
        })
        .collect::<Vec<_>>();
    Ok((results.len(), results))
}

fn node_from_value<T: Scalar>(index: usize, item: Value) -> Result<ObjectNode<T>, SceneError> {
    let Value::Object(mut obj) = item else {
        return Err(SceneError::NotAnObject { index });
    };
    let id = match obj.get(KEY_ID) {
        None => {
            return Err(SceneError::MissingField {
                index,
                field: KEY_ID,
            })
        }
        Some(v) => v.as_u64().ok_or(SceneError::WrongType {
            index,
            field: KEY_ID,
            expected: "a non-negative integer",
        })?,
    };
    let bbox_extent = read_vec3::<T>(index, KEY_EXTENT, obj.get(KEY_EXTENT))?;
    let bbox_center = read_vec3::<T>(index, KEY_CENTER, obj.get(KEY_CENTER))?;
    let object_tag = read_string(index, KEY_TAG, obj.get(KEY_TAG))?.ok_or(SceneError::MissingField {
        index,
        field: KEY_TAG,
    })?;
    let caption = read_string(index, KEY_CAPTION, obj.get(KEY_CAPTION))?.unwrap_or_default();
    let color = read_string(index, KEY_COLOR, obj.get(KEY_COLOR))?.unwrap_or_default();
    let material = read_string(index, KEY_MATERIAL, obj.get(KEY_MATERIAL))?.unwrap_or_default();
    for k in KNOWN_KEYS {
        obj.shift_remove(k);
    }
    let node = ObjectNode {
        id: NodeId(id),
        bbox_extent,
        bbox_center,
        object_tag,
        caption,
        color,
        material,
        extra: obj,
    };
    check_node(index, &node)?;
    Ok(node)
}

fn read_vec3<T: Scalar>(
    index: usize,
    field: &'static str,
    v: Option<&Value>,
) -> Result<Vec3<T>, SceneError> {
    let v = v.ok_or(SceneError::MissingField { index, field })?;
    let arr = v.as_array().ok_or(SceneError::WrongType {
        index,
        field,
        expected: "an array of 3 numbers",
    })?;
    if arr.len() != 3 {
        return Err(SceneError::WrongLength {
            index,
            field,
            len: arr.len(),
        });
    }
    let mut out = [T::zero(); 3];
    for (slot, item) in out.iter_mut().zip(arr) {
        let f = item.as_f64().ok_or(SceneError::WrongType {
            index,
            field,
            expected: "an array of 3 numbers",
        })?;
        let t = T::from_f64(f).filter(|t| t.is_finite());
        *slot = t.ok_or(SceneError::NonFinite { index, field })?;
    }
    Ok(Vec3::from_array(out))
}

fn read_string(
    index: usize,
    field: &'static str,
    v: Option<&Value>,
) -> Result<Option<String>, SceneError> {
    match v {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(SceneError::WrongType {
            index,
            field,
            expected: "a string",
        }),
    }
}

/// Controls how a scene is written out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SerializeOptions {
    /// Digits after the decimal point; `None` writes the shortest exact form.
    pub precision: Option<u32>,
    pub include_caption: bool,
    pub include_color: bool,
    pub include_material: bool,
    pub include_extra: bool,
}

impl Default for SerializeOptions {
    fn default() -> Self {
        Self {
            precision: Some(1),
            include_caption: true,
            include_color: true,
            include_material: true,
            include_extra: true,
        }
    }
}

impl SerializeOptions {
    /// Every field, numbers at full precision.
    pub fn exact() -> Self {
        Self {
            precision: None,
            ..Self::default()
        }
    }
}

/// Writes the scene as a JSON array in the canonical key order. Edges are
/// never written.
pub fn serialize_scene<T: Scalar>(scene: &SceneGraph<T>, opts: &SerializeOptions) -> String {
    if scene.nodes.is_empty() {
        return "[]".to_string();
    }
    let mut out = String::from("[\n");
    for (i, node) in scene.nodes.iter().enumerate() {
        write_node(&mut out, node, opts);
        out.push_str(if i + 1 == scene.nodes.len() { "\n" } else { ",\n" });
    }
    out.push(']');
    out
}

fn write_node<T: Scalar>(out: &mut String, node: &ObjectNode<T>, opts: &SerializeOptions) {
    let mut fields: Vec<(String, String)> = vec![
        (KEY_ID.into(), node.id.to_string()),
        (KEY_EXTENT.into(), format_vec3(node.bbox_extent, opts.precision)),
        (KEY_CENTER.into(), format_vec3(node.bbox_center, opts.precision)),
        (KEY_TAG.into(), json_string(&node.object_tag)),
    ];
    if opts.include_caption {
        fields.push((KEY_CAPTION.into(), json_string(&node.caption)));
    }
    if opts.include_color {
        fields.push((KEY_COLOR.into(), json_string(&node.color)));
    }
    if opts.include_material {
        fields.push((KEY_MATERIAL.into(), json_string(&node.material)));
    }
    if opts.include_extra {
        for (k, v) in &node.extra {
            fields.push((k.clone(), serde_json::to_string(v).expect("JSON value")));
        }
    }
    out.push_str("    {\n");
    for (i, (k, v)) in fields.iter().enumerate() {
        let sep = if i + 1 == fields.len() { "" } else { "," };
        let _ = writeln!(out, "        {}: {}{}", json_string(k), v, sep);
    }
    out.push_str("    }");
}

fn json_string(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

fn format_vec3<T: Scalar>(v: Vec3<T>, precision: Option<u32>) -> String {
    let parts: Vec<String> = v.to_array().iter().map(|c| format_number(*c, precision)).collect();
    format!("[{}]", parts.join(","))
}

/// Formats a finite number as a JSON literal.
pub fn format_number<T: Scalar>(v: T, precision: Option<u32>) -> String {
    match precision {
        Some(p) => {
            let s = format!("{:.*}", p as usize, v);
            // "-0.0" reads oddly in prompts; zero has no sign in the format.
            if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
                s[1..].to_string()
            } else {
                s
            }
        }
        None => {
            let s = format!("{:?}", v);
            if s == "-0.0" {
                "0.0".to_string()
            } else {
                s
            }
        }
    }
}
