#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scene_ground::{Edge, ObjectNode, OracleConfig, SceneGraph, SpatialRelation};

/// Random scene with every coordinate on a 1/8 grid, so sums, differences
/// and power-of-two scalings are exact and boxes often touch exactly.
pub fn dyadic_scene(seed: u64, max_nodes: usize) -> SceneGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=max_nodes);
    let tags = ["chair", "table", "lamp", "vase", "book", "sofa", "pillow", "cup"];
    let nodes = (0..n)
        .map(|i| {
            let e = [0; 3].map(|_| rng.gen_range(1..=16) as f64 / 8.0);
            let c = [0; 3].map(|_| rng.gen_range(-24..=24) as f64 / 8.0);
            ObjectNode::new(i as u64, tags[rng.gen_range(0..tags.len())], e, c)
        })
        .collect();
    SceneGraph::new(nodes).unwrap()
}

pub fn translated(scene: &SceneGraph, offset: [f64; 3]) -> SceneGraph {
    scene.map_nodes(|n| {
        n.bbox_center.x += offset[0];
        n.bbox_center.y += offset[1];
        n.bbox_center.z += offset[2];
    })
}

/// Stacking check written against box faces rather than center deltas.
pub fn on_top_of_reference(a: &ObjectNode, b: &ObjectNode, cfg: &OracleConfig) -> bool {
    let (pa, pb) = (a.aabb(), b.aabb());
    let overlap_x = pa.min.x <= pb.max.x && pb.min.x <= pa.max.x;
    let overlap_y = pa.min.y <= pb.max.y && pb.min.y <= pa.max.y;
    overlap_x
        && overlap_y
        && a.bbox_center.z > b.bbox_center.z
        && (pa.min.z - pb.max.z).abs() <= cfg.vertical_gap_tolerance
}

pub fn near_reference(a: &ObjectNode, b: &ObjectNode, cfg: &OracleConfig) -> bool {
    let d = ((a.bbox_center.x - b.bbox_center.x).powi(2)
        + (a.bbox_center.y - b.bbox_center.y).powi(2)
        + (a.bbox_center.z - b.bbox_center.z).powi(2))
    .sqrt();
    d <= cfg.near_threshold
}

/// Every ordered pair checked one by one.
pub fn edges_reference(scene: &SceneGraph, cfg: &OracleConfig) -> Vec<Edge> {
    let mut out = Vec::new();
    for a in scene.nodes() {
        for b in scene.nodes() {
            if a.id == b.id {
                continue;
            }
            if on_top_of_reference(a, b, cfg) {
                out.push(Edge {
                    subject: a.id,
                    relation: SpatialRelation::OnTopOf,
                    object: b.id,
                });
            }
            if near_reference(a, b, cfg) {
                out.push(Edge {
                    subject: a.id,
                    relation: SpatialRelation::Near,
                    object: b.id,
                });
            }
        }
    }
    out.sort();
    out
}

/// Value in integer hundredths; panics if it has more than two decimals.
fn centi(v: f64) -> i64 {
    let c = (v * 100.0).round();
    assert!((v * 100.0 - c).abs() < 1e-6, "{v} is not a two-decimal value");
    c as i64
}

/// Brute-force edges in exact integer arithmetic, for scenes whose values
/// all have at most two decimals. Lengths are doubled so half-extents stay
/// integral.
pub fn edges_reference_exact(scene: &SceneGraph, cfg: &OracleConfig) -> Vec<Edge> {
    let tol2 = 2 * centi(cfg.vertical_gap_tolerance);
    let near = centi(cfg.near_threshold);
    let mut out = Vec::new();
    for a in scene.nodes() {
        for b in scene.nodes() {
            if a.id == b.id {
                continue;
            }
            let ca = a.bbox_center.to_array().map(centi);
            let cb = b.bbox_center.to_array().map(centi);
            let ea = a.bbox_extent.to_array().map(centi);
            let eb = b.bbox_extent.to_array().map(centi);
            let footprint = (0..2).all(|k| (2 * (ca[k] - cb[k])).abs() <= ea[k] + eb[k]);
            let gap2 = (2 * ca[2] - ea[2]) - (2 * cb[2] + eb[2]);
            if footprint && ca[2] > cb[2] && gap2.abs() <= tol2 {
                out.push(Edge {
                    subject: a.id,
                    relation: SpatialRelation::OnTopOf,
                    object: b.id,
                });
            }
            let d2: i64 = (0..3).map(|k| (ca[k] - cb[k]).pow(2)).sum();
            if d2 <= near * near {
                out.push(Edge {
                    subject: a.id,
                    relation: SpatialRelation::Near,
                    object: b.id,
                });
            }
        }
    }
    out.sort();
    out
}
