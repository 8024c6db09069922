//! Deterministic geometric reasoning over bounding boxes.
//!
//! Predicates are written in terms of center offsets and half extents, so a
//! common translation of the scene only ever touches the offset computation.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::query::{QueryCategory, SizeQuestion, StructuredQuery};
use crate::scalar::Scalar;
use crate::scene::{Edge, NodeId, ObjectNode, SceneGraph, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SpatialRelation {
    OnTopOf,
    Above,
    Below,
    Near,
    Overlapping,
    PositiveX,
    NegativeX,
    PositiveY,
    NegativeY,
}

impl SpatialRelation {
    pub const ALL: [SpatialRelation; 9] = [
        Self::OnTopOf,
        Self::Above,
        Self::Below,
        Self::Near,
        Self::Overlapping,
        Self::PositiveX,
        Self::NegativeX,
        Self::PositiveY,
        Self::NegativeY,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::OnTopOf => "OnTopOf",
            Self::Above => "Above",
            Self::Below => "Below",
            Self::Near => "Near",
            Self::Overlapping => "Overlapping",
            Self::PositiveX => "PositiveX",
            Self::NegativeX => "NegativeX",
            Self::PositiveY => "PositiveY",
            Self::NegativeY => "NegativeY",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.name().eq_ignore_ascii_case(s.trim()))
    }
}

impl fmt::Display for SpatialRelation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Thresholds for the qualitative predicates, in scene length units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig<T> {
    /// Maximum center distance for `Near`.
    pub near_threshold: T,
    /// Allowed |bottom(a) - top(b)| for `OnTopOf`.
    pub vertical_gap_tolerance: T,
    /// Volume ratios at or below this count as similar size.
    pub similar_volume_ratio: T,
}

impl<T: Scalar> Default for OracleConfig<T> {
    fn default() -> Self {
        Self {
            near_threshold: T::lit(1.0),
            vertical_gap_tolerance: T::lit(0.15),
            similar_volume_ratio: T::lit(1.1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("oracle threshold {name} must be finite and > 0")]
    NonPositive { name: &'static str },
    #[error("similar_volume_ratio must be >= 1")]
    RatioBelowOne,
}

impl<T: Scalar> OracleConfig<T> {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [
            ("near_threshold", self.near_threshold),
            ("vertical_gap_tolerance", self.vertical_gap_tolerance),
            ("similar_volume_ratio", self.similar_volume_ratio),
        ] {
            if !(v.is_finite() && v > T::zero()) {
                return Err(ConfigError::NonPositive { name });
            }
        }
        if self.similar_volume_ratio < T::one() {
            return Err(ConfigError::RatioBelowOne);
        }
        Ok(())
    }

    /// Scales every length threshold by `k`; the ratio is unitless.
    pub fn scaled(&self, k: T) -> Self {
        Self {
            near_threshold: self.near_threshold * k,
            vertical_gap_tolerance: self.vertical_gap_tolerance * k,
            similar_volume_ratio: self.similar_volume_ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("cannot relate node {0} to itself")]
    SameNode(NodeId),
    #[error("unknown node id {0}")]
    UnknownId(NodeId),
}

/// Per-axis offset of `a` from `b` plus the qualitative reading of it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelativePosition<T> {
    /// center(a) - center(b)
    pub delta: Vec3<T>,
    pub distance: T,
    pub relations: Vec<SpatialRelation>,
    pub near: bool,
}

pub fn relative_position<T: Scalar>(
    a: &ObjectNode<T>,
    b: &ObjectNode<T>,
    cfg: &OracleConfig<T>,
) -> RelativePosition<T> {
    let delta = a.bbox_center.minus(b.bbox_center);
    let mut relations = Vec::new();
    let zero = T::zero();
    if delta.z > zero {
        relations.push(SpatialRelation::Above);
    } else if delta.z < zero {
        relations.push(SpatialRelation::Below);
    }
    if delta.x > zero {
        relations.push(SpatialRelation::PositiveX);
    } else if delta.x < zero {
        relations.push(SpatialRelation::NegativeX);
    }
    if delta.y > zero {
        relations.push(SpatialRelation::PositiveY);
    } else if delta.y < zero {
        relations.push(SpatialRelation::NegativeY);
    }
    let distance_sq = delta.norm_squared();
    let near = within_near(a, b, distance_sq, cfg);
    if a.id != b.id {
        if boxes_overlap(a, b, delta) {
            relations.push(SpatialRelation::Overlapping);
        }
        if near {
            relations.push(SpatialRelation::Near);
        }
    }
    relations.sort();
    RelativePosition {
        delta,
        distance: distance_sq.sqrt(),
        relations,
        near,
    }
}

/// `x <= limit`, allowing for rounding in quantities whose inputs have
/// magnitude up to `scale`. Scene values are short decimals, so a gap of
/// exactly the tolerance or boxes exactly touching are common; they must land
/// inside the closed bound whichever way the float arithmetic rounds.
fn at_most<T: Scalar>(x: T, limit: T, scale: T) -> bool {
    x <= limit + scale * T::epsilon() * T::lit(8.0)
}

/// Sum of the magnitudes that feed a center difference on one axis.
fn axis_scale<T: Scalar>(a: &ObjectNode<T>, b: &ObjectNode<T>, axis: usize) -> T {
    let (ca, cb) = (a.bbox_center.to_array(), b.bbox_center.to_array());
    let (ea, eb) = (a.bbox_extent.to_array(), b.bbox_extent.to_array());
    ca[axis].abs() + cb[axis].abs() + ea[axis] + eb[axis]
}

fn within_near<T: Scalar>(a: &ObjectNode<T>, b: &ObjectNode<T>, distance_sq: T, cfg: &OracleConfig<T>) -> bool {
    let m = (0..3).map(|k| axis_scale(a, b, k)).fold(T::zero(), |acc, v| acc + v);
    let t2 = cfg.near_threshold * cfg.near_threshold;
    at_most(distance_sq, t2, m * m + t2)
}

fn half_sum<T: Scalar>(a: T, b: T) -> T {
    (a + b) * T::half()
}

fn axis_overlap<T: Scalar>(a: &ObjectNode<T>, b: &ObjectNode<T>, d: T, axis: usize) -> bool {
    let (ea, eb) = (a.bbox_extent.to_array(), b.bbox_extent.to_array());
    at_most(d.abs(), half_sum(ea[axis], eb[axis]), axis_scale(a, b, axis))
}

fn footprints_overlap<T: Scalar>(a: &ObjectNode<T>, b: &ObjectNode<T>, delta: Vec3<T>) -> bool {
    axis_overlap(a, b, delta.x, 0) && axis_overlap(a, b, delta.y, 1)
}

fn boxes_overlap<T: Scalar>(a: &ObjectNode<T>, b: &ObjectNode<T>, delta: Vec3<T>) -> bool {
    footprints_overlap(a, b, delta) && axis_overlap(a, b, delta.z, 2)
}

/// Signed distance from the bottom face of `a` to the top face of `b`.
pub fn vertical_gap<T: Scalar>(a: &ObjectNode<T>, b: &ObjectNode<T>) -> T {
    let dz = a.bbox_center.z - b.bbox_center.z;
    dz - half_sum(a.bbox_extent.z, b.bbox_extent.z)
}

/// `a` rests on `b`: overlapping footprints, `a` higher, and the bottom of
/// `a` within the gap tolerance of the top of `b`.
pub fn on_top_of<T: Scalar>(
    a: &ObjectNode<T>,
    b: &ObjectNode<T>,
    cfg: &OracleConfig<T>,
) -> Result<bool, OracleError> {
    if a.id == b.id {
        return Err(OracleError::SameNode(a.id));
    }
    Ok(on_top_of_unchecked(a, b, cfg))
}

fn on_top_of_unchecked<T: Scalar>(a: &ObjectNode<T>, b: &ObjectNode<T>, cfg: &OracleConfig<T>) -> bool {
    let delta = a.bbox_center.minus(b.bbox_center);
    footprints_overlap(a, b, delta)
        && delta.z > T::zero()
        && at_most(
            vertical_gap(a, b).abs(),
            cfg.vertical_gap_tolerance,
            axis_scale(a, b, 2) + cfg.vertical_gap_tolerance,
        )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SizeRelation {
    Bigger,
    Smaller,
    Similar,
}

impl fmt::Display for SizeRelation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Bigger => "Bigger",
            Self::Smaller => "Smaller",
            Self::Similar => "Similar",
        })
    }
}

/// Outcome of a size comparison. `ratio` is larger over smaller, so ≥ 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SizeOrdering<T> {
    pub relation: SizeRelation,
    pub ratio: T,
    /// Set when both volumes were zero and extents decided instead.
    pub by_extent_rank: bool,
}

/// Compares box volumes. Two flat boxes are compared by their extents
/// sorted largest first; the first pair outside the similarity band decides.
pub fn size_compare<T: Scalar>(
    a: &ObjectNode<T>,
    b: &ObjectNode<T>,
    cfg: &OracleConfig<T>,
) -> SizeOrdering<T> {
    let va = a.bbox_extent.product();
    let vb = b.bbox_extent.product();
    let zero = T::zero();
    if va == zero && vb == zero {
        let ra = a.bbox_extent.sorted();
        let rb = b.bbox_extent.sorted();
        for i in (0..3).rev() {
            let ordering = classify(ra[i], rb[i], cfg);
            if ordering.relation != SizeRelation::Similar {
                return SizeOrdering {
                    by_extent_rank: true,
                    ..ordering
                };
            }
        }
        return SizeOrdering {
            relation: SizeRelation::Similar,
            ratio: T::one(),
            by_extent_rank: true,
        };
    }
    classify(va, vb, cfg)
}

fn classify<T: Scalar>(va: T, vb: T, cfg: &OracleConfig<T>) -> SizeOrdering<T> {
    let (hi, lo) = if va >= vb { (va, vb) } else { (vb, va) };
    let ratio = if hi == lo {
        T::one()
    } else if lo == T::zero() {
        T::infinity()
    } else {
        hi / lo
    };
    let relation = if at_most(ratio, cfg.similar_volume_ratio, T::lit(2.0) * cfg.similar_volume_ratio) {
        SizeRelation::Similar
    } else if va > vb {
        SizeRelation::Bigger
    } else {
        SizeRelation::Smaller
    };
    SizeOrdering {
        relation,
        ratio,
        by_extent_rank: false,
    }
}

/// Whether `inner` fits strictly inside `outer` after some axis permutation.
pub fn can_contain<T: Scalar>(outer: &ObjectNode<T>, inner: &ObjectNode<T>) -> bool {
    let o = outer.bbox_extent.sorted();
    let i = inner.bbox_extent.sorted();
    i.iter().zip(o.iter()).all(|(a, b)| a < b)
}

pub fn near<T: Scalar>(a: &ObjectNode<T>, b: &ObjectNode<T>, cfg: &OracleConfig<T>) -> bool {
    within_near(a, b, a.bbox_center.minus(b.bbox_center).norm_squared(), cfg)
}

/// All `OnTopOf` and `Near` edges between distinct nodes, sorted by
/// (subject, relation, object).
pub fn derive_edges<T: Scalar>(scene: &SceneGraph<T>, cfg: &OracleConfig<T>) -> Vec<Edge> {
    let nodes = scene.nodes();
    let mut edges = Vec::new();
    for a in nodes {
        for b in nodes {
            if a.id == b.id {
                continue;
            }
            if on_top_of_unchecked(a, b, cfg) {
                edges.push(Edge {
                    subject: a.id,
                    relation: SpatialRelation::OnTopOf,
                    object: b.id,
                });
            }
            if near(a, b, cfg) {
                edges.push(Edge {
                    subject: a.id,
                    relation: SpatialRelation::Near,
                    object: b.id,
                });
            }
        }
    }
    edges.sort();
    edges
}

/// Snapshot of the box fields an answer relied on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evidence<T> {
    pub id: NodeId,
    pub object_tag: String,
    pub bbox_center: Vec3<T>,
    pub bbox_extent: Vec3<T>,
}

impl<T: Scalar> From<&ObjectNode<T>> for Evidence<T> {
    fn from(n: &ObjectNode<T>) -> Self {
        Self {
            id: n.id,
            object_tag: n.object_tag.clone(),
            bbox_center: n.bbox_center,
            bbox_extent: n.bbox_extent,
        }
    }
}

/// Typed answer with the evidence used to reach it.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind")]
pub enum OracleAnswer<T> {
    OnTopOf {
        subject: Evidence<T>,
        object: Evidence<T>,
        holds: bool,
        /// bottom(subject) - top(object)
        gap: T,
        footprints_overlap: bool,
    },
    SizeCompare {
        a: Evidence<T>,
        b: Evidence<T>,
        /// Size of `a` relative to `b`.
        ordering: SizeOrdering<T>,
        question: SizeQuestion,
        /// The node that answers the question, `None` when sizes are similar.
        answer: Option<NodeId>,
    },
    Containment {
        outer: Evidence<T>,
        inner: Evidence<T>,
        holds: bool,
    },
    RelativePosition {
        a: Evidence<T>,
        b: Evidence<T>,
        position: RelativePosition<T>,
    },
    /// Affordance, negation and free-form questions need world knowledge.
    RequiresWorldKnowledge { category: QueryCategory },
}

impl<T: Scalar> OracleAnswer<T> {
    pub fn category(&self) -> QueryCategory {
        match self {
            Self::OnTopOf { .. } => QueryCategory::OnTopOf,
            Self::SizeCompare { .. } => QueryCategory::SizeCompare,
            Self::Containment { .. } => QueryCategory::Containment,
            Self::RelativePosition { .. } => QueryCategory::RelativePosition,
            Self::RequiresWorldKnowledge { category } => *category,
        }
    }

    /// One-line summary for logs and reports.
    pub fn summary(&self) -> String {
        match self {
            Self::OnTopOf { subject, object, holds, .. } => format!(
                "{} {} on top of {}",
                subject.id,
                if *holds { "is" } else { "is not" },
                object.id
            ),
            Self::SizeCompare { a, b, ordering, .. } => {
                format!("{} {} than {} (ratio {:.3})", a.id, ordering.relation, b.id, ordering.ratio)
            }
            Self::Containment { outer, inner, holds } => format!(
                "{} {} contain {}",
                outer.id,
                if *holds { "can" } else { "cannot" },
                inner.id
            ),
            Self::RelativePosition { a, b, position } => {
                let names: Vec<_> = position.relations.iter().map(|r| r.name()).collect();
                format!("{} relative to {}: {}", a.id, b.id, names.join(", "))
            }
            Self::RequiresWorldKnowledge { category } => {
                format!("{category} requires world knowledge")
            }
        }
    }
}

/// Routes a structured query to the matching predicate.
pub fn answer_query_deterministic<T: Scalar>(
    scene: &SceneGraph<T>,
    q: &StructuredQuery,
    cfg: &OracleConfig<T>,
) -> Result<OracleAnswer<T>, OracleError> {
    let lookup = |id: NodeId| scene.node(id).ok_or(OracleError::UnknownId(id));
    match q {
        StructuredQuery::OnTopOf { subject, object } => {
            let (a, b) = (lookup(*subject)?, lookup(*object)?);
            let holds = on_top_of(a, b, cfg)?;
            Ok(OracleAnswer::OnTopOf {
                subject: a.into(),
                object: b.into(),
                holds,
                gap: vertical_gap(a, b),
                footprints_overlap: footprints_overlap(a, b, a.bbox_center.minus(b.bbox_center)),
            })
        }
        StructuredQuery::SizeCompare { a, b, question } => {
            let (na, nb) = (lookup(*a)?, lookup(*b)?);
            if na.id == nb.id {
                return Err(OracleError::SameNode(na.id));
            }
            let ordering = size_compare(na, nb, cfg);
            let answer = match (ordering.relation, question) {
                (SizeRelation::Similar, _) => None,
                (SizeRelation::Bigger, SizeQuestion::Bigger)
                | (SizeRelation::Smaller, SizeQuestion::Smaller) => Some(na.id),
                _ => Some(nb.id),
            };
            Ok(OracleAnswer::SizeCompare {
                a: na.into(),
                b: nb.into(),
                ordering,
                question: *question,
                answer,
            })
        }
        StructuredQuery::Containment { outer, inner } => {
            let (o, i) = (lookup(*outer)?, lookup(*inner)?);
            if o.id == i.id {
                return Err(OracleError::SameNode(o.id));
            }
            Ok(OracleAnswer::Containment {
                outer: o.into(),
                inner: i.into(),
                holds: can_contain(o, i),
            })
        }
        StructuredQuery::RelativePosition { a, b } => {
            let (na, nb) = (lookup(*a)?, lookup(*b)?);
            if na.id == nb.id {
                return Err(OracleError::SameNode(na.id));
            }
            Ok(OracleAnswer::RelativePosition {
                a: na.into(),
                b: nb.into(),
                position: relative_position(na, nb, cfg),
            })
        }
        other => Ok(OracleAnswer::RequiresWorldKnowledge {
            category: other.category(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn couch() -> ObjectNode<f64> {
        ObjectNode::new(28, "white couch", [1.0, 0.9, 0.6], [2.8, 2.3, -1.2])
    }

    fn pillow() -> ObjectNode<f64> {
        ObjectNode::new(27, "pillow", [0.7, 0.6, 0.3], [2.9, 2.5, -0.8])
    }

    fn unit(id: u64, center: [f64; 3]) -> ObjectNode<f64> {
        ObjectNode::new(id, "box", [1.0; 3], center)
    }

    #[test]
    fn pillow_relative_to_couch() {
        let cfg = OracleConfig::default();
        let rp = relative_position(&pillow(), &couch(), &cfg);
        let d = rp.delta.to_array();
        for (got, want) in d.iter().zip([0.1, 0.2, 0.4]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(rp.relations.contains(&SpatialRelation::Above));
        assert!(rp.relations.contains(&SpatialRelation::Near));
        assert!(rp.near);
    }

    #[test]
    fn self_relative_position_has_no_direction() {
        let cfg = OracleConfig::default();
        let rp = relative_position(&couch(), &couch(), &cfg);
        assert_eq!(rp.delta.to_array(), [0.0; 3]);
        assert!(rp.relations.is_empty());
    }

    #[test]
    fn vertically_separated_is_above_not_near() {
        let cfg = OracleConfig::default();
        let rp = relative_position(&unit(1, [0.0, 0.0, 5.0]), &unit(2, [0.0; 3]), &cfg);
        assert_eq!(rp.relations, vec![SpatialRelation::Above]);
        assert!(!rp.near);
        assert_eq!(rp.distance, 5.0);
    }

    #[test]
    fn on_top_of_examples() {
        let cfg = OracleConfig::default();
        assert!(on_top_of(&pillow(), &couch(), &cfg).unwrap());
        assert!(!on_top_of(&couch(), &pillow(), &cfg).unwrap());
        assert!((vertical_gap(&pillow(), &couch()) - (-0.05)).abs() < 1e-12);
        assert!(!on_top_of(&unit(1, [0.0; 3]), &unit(2, [10.0, 0.0, 0.0]), &cfg).unwrap());
        assert_eq!(
            on_top_of(&couch(), &couch(), &cfg),
            Err(OracleError::SameNode(NodeId(28)))
        );
    }

    #[test]
    fn size_compare_examples() {
        let cfg = OracleConfig::default();
        let s = size_compare(&couch(), &pillow(), &cfg);
        assert_eq!(s.relation, SizeRelation::Bigger);
        // 0.54 / 0.126
        assert!((s.ratio - 4.285714285714286).abs() < 1e-9);
        assert_eq!(size_compare(&pillow(), &couch(), &cfg).relation, SizeRelation::Smaller);

        let same = size_compare(&couch(), &couch(), &cfg);
        assert_eq!((same.relation, same.ratio), (SizeRelation::Similar, 1.0));

        let flat_big = ObjectNode::new(1, "a", [2.0, 1.0, 0.0], [0.0; 3]);
        let flat_small = ObjectNode::new(2, "b", [1.0, 1.0, 0.0], [0.0; 3]);
        let s = size_compare(&flat_big, &flat_small, &cfg);
        assert_eq!(s.relation, SizeRelation::Bigger);
        assert!(s.by_extent_rank);
        assert_eq!(s.ratio, 2.0);
    }

    #[test]
    fn zero_volume_against_solid() {
        let cfg = OracleConfig::default();
        let flat = ObjectNode::new(1, "a", [2.0, 1.0, 0.0], [0.0; 3]);
        let s = size_compare(&unit(2, [0.0; 3]), &flat, &cfg);
        assert_eq!(s.relation, SizeRelation::Bigger);
        assert!(s.ratio.is_infinite());
    }

    #[test]
    fn containment_examples() {
        assert!(can_contain(&couch(), &pillow()));
        assert!(!can_contain(&couch(), &couch()));
        let outer = ObjectNode::new(1, "a", [1.0, 1.0, 1.0], [0.0; 3]);
        let inner = ObjectNode::new(2, "b", [2.0, 0.1, 0.1], [0.0; 3]);
        assert!(!can_contain(&outer, &inner));
        let rotated = ObjectNode::new(3, "c", [0.1, 0.9, 0.2], [0.0; 3]);
        assert!(can_contain(&outer, &rotated));
    }

    #[test]
    fn near_examples() {
        let cfg = OracleConfig::default();
        assert!(near(&pillow(), &couch(), &cfg));
        assert!(near(&unit(1, [0.0; 3]), &unit(2, [0.0; 3]), &cfg));
        assert!(!near(&unit(1, [0.0; 3]), &unit(2, [10.0, 0.0, 0.0]), &cfg));
        let d = relative_position(&pillow(), &couch(), &cfg).distance;
        assert!((d - 0.21f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn derive_edges_examples() {
        let cfg = OracleConfig::default();
        let scene = SceneGraph::new(vec![couch(), pillow()]).unwrap();
        let edges = derive_edges(&scene, &cfg);
        let e = |s, r, o| Edge {
            subject: NodeId(s),
            relation: r,
            object: NodeId(o),
        };
        assert_eq!(
            edges,
            vec![
                e(27, SpatialRelation::OnTopOf, 28),
                e(27, SpatialRelation::Near, 28),
                e(28, SpatialRelation::Near, 27),
            ]
        );
        let single = SceneGraph::new(vec![couch()]).unwrap();
        assert!(derive_edges(&single, &cfg).is_empty());
    }

    #[test]
    fn deterministic_answers() {
        let cfg = OracleConfig::default();
        let scene = SceneGraph::new(vec![couch(), pillow()]).unwrap();
        let ans = answer_query_deterministic(
            &scene,
            &StructuredQuery::OnTopOf {
                subject: NodeId(27),
                object: NodeId(28),
            },
            &cfg,
        )
        .unwrap();
        match ans {
            OracleAnswer::OnTopOf { holds, gap, subject, object, .. } => {
                assert!(holds);
                assert!((gap + 0.05).abs() < 1e-12);
                assert_eq!(subject.bbox_center.to_array(), [2.9, 2.5, -0.8]);
                assert_eq!(object.bbox_center.to_array(), [2.8, 2.3, -1.2]);
            }
            other => panic!("unexpected {other:?}"),
        }

        let ans = answer_query_deterministic(
            &scene,
            &StructuredQuery::SizeCompare {
                a: NodeId(28),
                b: NodeId(27),
                question: SizeQuestion::Bigger,
            },
            &cfg,
        )
        .unwrap();
        match ans {
            OracleAnswer::SizeCompare { ordering, answer, .. } => {
                assert_eq!(ordering.relation, SizeRelation::Bigger);
                assert_eq!(answer, Some(NodeId(28)));
            }
            other => panic!("unexpected {other:?}"),
        }

        let ans = answer_query_deterministic(
            &scene,
            &StructuredQuery::Affordance {
                text: "hold flowers".into(),
            },
            &cfg,
        )
        .unwrap();
        assert_eq!(
            ans,
            OracleAnswer::RequiresWorldKnowledge {
                category: QueryCategory::Affordance
            }
        );

        let err = answer_query_deterministic(
            &scene,
            &StructuredQuery::Containment {
                outer: NodeId(28),
                inner: NodeId(99),
            },
            &cfg,
        )
        .unwrap_err();
        assert_eq!(err, OracleError::UnknownId(NodeId(99)));
    }

    #[test]
    fn config_validation() {
        assert!(OracleConfig::<f64>::default().validate().is_ok());
        let bad = OracleConfig {
            near_threshold: 0.0,
            ..OracleConfig::<f64>::default()
        };
        assert_eq!(bad.validate(), Err(ConfigError::NonPositive { name: "near_threshold" }));
    }

    #[test]
    fn works_in_single_precision() {
        let cfg = OracleConfig::<f32>::default();
        let couch = ObjectNode::new(28, "white couch", [1.0f32, 0.9, 0.6], [2.8, 2.3, -1.2]);
        let pillow = ObjectNode::new(27, "pillow", [0.7f32, 0.6, 0.3], [2.9, 2.5, -0.8]);
        assert!(on_top_of(&pillow, &couch, &cfg).unwrap());
        assert!(can_contain(&couch, &pillow));
        assert_eq!(size_compare(&couch, &pillow, &cfg).relation, SizeRelation::Bigger);
    }

    #[test]
    fn decimal_ties_fall_inside_closed_bounds() {
        let cfg = OracleConfig::default();
        // Bottom of the cup is exactly 0.15 above the top of the shelf.
        let cup = ObjectNode::new(8, "cup", [0.19, 0.22, 0.43], [13.16, -0.39, 0.98]);
        let shelf = ObjectNode::new(6, "shelf", [0.96, 1.3, 0.61], [12.95, -0.63, 0.31]);
        assert!(on_top_of(&cup, &shelf, &cfg).unwrap());
        let cup = ObjectNode::new(8, "cup", [0.19, 0.22, 0.43], [13.16, -0.39, 0.99]);
        assert!(!on_top_of(&cup, &shelf, &cfg).unwrap());

        // Footprints touching along x at 19.375 and 19.2.
        let a = ObjectNode::new(1, "a", [0.3, 0.3, 0.3], [19.31, 0.0, 0.45]);
        let b = ObjectNode::new(2, "b", [0.3, 0.3, 0.3], [19.01, 0.0, 0.15]);
        assert!(on_top_of(&a, &b, &cfg).unwrap());

        // Centers exactly 1.0 apart.
        let a = ObjectNode::new(1, "a", [0.1, 0.1, 0.1], [0.3, 0.0, 0.0]);
        let b = ObjectNode::new(2, "b", [0.1, 0.1, 0.1], [-0.7, 0.0, 0.0]);
        assert!(near(&a, &b, &cfg));

        // Volumes 1.1 and 1.0.
        let a = ObjectNode::new(1, "a", [1.1, 1.0, 1.0], [0.0, 0.0, 0.0]);
        let b = ObjectNode::new(2, "b", [1.0, 1.0, 1.0], [5.0, 0.0, 0.0]);
        assert_eq!(size_compare(&a, &b, &cfg).relation, SizeRelation::Similar);
    }
}
