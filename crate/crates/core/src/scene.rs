//! Cluttered 2D landscapes and their surface features.
//!
//! A [`Landscape`] is a ground line with boxes resting on it (or on each
//! other). [`extract_features`] walks every object boundary at the scene
//! resolution and attaches an outward normal frame and a curvature
//! descriptor to each exposed point.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::format::Versioned;
use crate::se2::{norm2, sub2, wrap_angle, Pose2};

/// Two surfaces closer than this are considered resting on each other.
const REST_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("invalid scene parameters: {0}")]
    InvalidParams(String),
    #[error("could not place object {object} after {attempts} attempts")]
    Generation { object: usize, attempts: usize },
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("object {object_id} has {points} boundary points, need at least {needed}")]
    FeatureExtraction { object_id: u32, points: usize, needed: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Rect {
        half_extents: [f64; 2],
    },
    /// Only used for curvature checks; generated scenes never contain circles.
    Circle {
        radius: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub id: u32,
    pub center: [f64; 2],
    pub shape: Shape,
    #[serde(default)]
    pub rotation: f64,
}

impl Obstacle {
    /// An axis-aligned box of the given size standing on `ground_y`.
    pub fn rect_on_ground(id: u32, center_x: f64, ground_y: f64, width: f64, height: f64) -> Self {
        Self {
            id,
            center: [center_x, ground_y + height / 2.0],
            shape: Shape::Rect { half_extents: [width / 2.0, height / 2.0] },
            rotation: 0.0,
        }
    }

    pub fn circle(id: u32, center: [f64; 2], radius: f64) -> Self {
        Self { id, center, shape: Shape::Circle { radius }, rotation: 0.0 }
    }

    fn frame(&self) -> Pose2 {
        Pose2::new(self.center[0], self.center[1], self.rotation)
    }

    /// Signed distance from `p` to the boundary (negative inside) and the
    /// unit gradient of that distance.
    pub fn distance_and_gradient(&self, p: [f64; 2]) -> (f64, [f64; 2]) {
        match self.shape {
            Shape::Circle { radius } => {
                let d = sub2(p, self.center);
                let n = norm2(d);
                let g = if n > 0.0 { [d[0] / n, d[1] / n] } else { [0.0, 1.0] };
                (n - radius, g)
            }
            Shape::Rect { half_extents: h } => {
                let frame = self.frame();
                let q = if self.rotation == 0.0 {
                    sub2(p, self.center)
                } else {
                    let local = frame.inverse().transform_point(p);
                    [local[0], local[1]]
                };
                let dx = q[0].abs() - h[0];
                let dy = q[1].abs() - h[1];
                let (d, g_local) = if dx > 0.0 || dy > 0.0 {
                    let ox = dx.max(0.0);
                    let oy = dy.max(0.0);
                    let n = ox.hypot(oy);
                    (n, [ox / n * q[0].signum(), oy / n * q[1].signum()])
                } else if dx > dy {
                    (dx, [q[0].signum(), 0.0])
                } else {
                    (dy, [0.0, if q[1] == 0.0 { 1.0 } else { q[1].signum() }])
                };
                let g = if self.rotation == 0.0 { g_local } else { frame.rotate(g_local) };
                (d, g)
            }
        }
    }

    pub fn signed_distance(&self, p: [f64; 2]) -> f64 {
        self.distance_and_gradient(p).0
    }

    /// Axis-aligned bounds `[min_x, min_y, max_x, max_y]`.
    pub fn aabb(&self) -> [f64; 4] {
        match self.shape {
            Shape::Circle { radius } => {
                [self.center[0] - radius, self.center[1] - radius, self.center[0] + radius, self.center[1] + radius]
            }
            Shape::Rect { half_extents: h } => {
                let (s, c) = self.rotation.sin_cos();
                let ex = (c * h[0]).abs() + (s * h[1]).abs();
                let ey = (s * h[0]).abs() + (c * h[1]).abs();
                [self.center[0] - ex, self.center[1] - ey, self.center[0] + ex, self.center[1] + ey]
            }
        }
    }

    pub fn perimeter(&self) -> f64 {
        match self.shape {
            Shape::Circle { radius } => TAU * radius,
            Shape::Rect { half_extents: h } => 4.0 * (h[0] + h[1]),
        }
    }

    /// Boundary samples in counter-clockwise order. Rectangles are sampled
    /// edge by edge so that every corner is a sample.
    pub fn boundary_points(&self, resolution: f64) -> Vec<[f64; 2]> {
        match self.shape {
            Shape::Circle { radius } => {
                let n = ((TAU * radius / resolution).round() as usize).max(3);
                (0..n)
                    .map(|i| {
                        let a = TAU * i as f64 / n as f64;
                        [self.center[0] + radius * a.cos(), self.center[1] + radius * a.sin()]
                    })
                    .collect()
            }
            Shape::Rect { half_extents: h } => {
                let corners = [[-h[0], -h[1]], [h[0], -h[1]], [h[0], h[1]], [-h[0], h[1]]];
                let frame = self.frame();
                let mut out = Vec::new();
                for i in 0..4 {
                    let a = corners[i];
                    let b = corners[(i + 1) % 4];
                    let len = norm2(sub2(b, a));
                    let n = ((len / resolution).round() as usize).max(1);
                    for j in 0..n {
                        let t = j as f64 / n as f64;
                        let local = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
                        out.push(if self.rotation == 0.0 {
                            [self.center[0] + local[0], self.center[1] + local[1]]
                        } else {
                            frame.transform_point(local)
                        });
                    }
                }
                out
            }
        }
    }
}

/// A cluttered scene: a ground line plus objects resting on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landscape {
    #[serde(default)]
    pub id: u64,
    pub width: f64,
    pub ground_y: f64,
    pub resolution: f64,
    pub objects: Vec<Obstacle>,
}

impl Versioned for Landscape {
    const SCHEMA: &'static str = "gripassist.scene/1";
}

/// Nearest solid surface to a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceQuery {
    pub distance: f64,
    pub gradient: [f64; 2],
    /// `None` when the nearest surface is the ground.
    pub object_id: Option<u32>,
}

impl Landscape {
    pub fn object(&self, id: u32) -> Option<&Obstacle> {
        self.objects.iter().find(|o| o.id == id)
    }

    /// Signed distance to the nearest solid (objects and the half-plane below ground).
    pub fn nearest_surface(&self, p: [f64; 2]) -> SurfaceQuery {
        let mut best = SurfaceQuery { distance: p[1] - self.ground_y, gradient: [0.0, 1.0], object_id: None };
        for o in &self.objects {
            let (d, g) = o.distance_and_gradient(p);
            if d < best.distance {
                best = SurfaceQuery { distance: d, gradient: g, object_id: Some(o.id) };
            }
        }
        best
    }

    /// Signed distance from `p` to one particular object.
    pub fn distance_to_object(&self, p: [f64; 2], id: u32) -> Option<f64> {
        self.object(id).map(|o| o.signed_distance(p))
    }

    pub fn is_solid(&self, p: [f64; 2]) -> bool {
        p[1] < self.ground_y || self.objects.iter().any(|o| o.signed_distance(p) < 0.0)
    }

    /// Highest point of the skyline.
    pub fn skyline_top(&self) -> f64 {
        self.objects.iter().map(|o| o.aabb()[3]).fold(self.ground_y, f64::max)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.resolution > 0.0) {
            return Err(SceneError::InvalidScene("resolution must be positive".into()));
        }
        if self.objects.is_empty() {
            return Err(SceneError::InvalidScene("scene has no objects".into()));
        }
        for o in &self.objects {
            let ok_shape = match o.shape {
                Shape::Rect { half_extents: h } => h[0] > 0.0 && h[1] > 0.0,
                Shape::Circle { radius } => radius > 0.0,
            };
            if !ok_shape {
                return Err(SceneError::InvalidScene(format!("object {} has a degenerate shape", o.id)));
            }
            let b = o.aabb();
            let on_ground = (b[1] - self.ground_y).abs() < REST_TOL;
            let on_other = self.objects.iter().any(|other| {
                let ob = other.aabb();
                other.id != o.id && (b[1] - ob[3]).abs() < REST_TOL && b[0] < ob[2] && ob[0] < b[2]
            });
            if !on_ground && !on_other {
                return Err(SceneError::InvalidScene(format!("object {} is floating", o.id)));
            }
        }
        Ok(())
    }
}

/// Knobs for [`generate_scene`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneParams {
    pub width: f64,
    pub ground_y: f64,
    pub resolution: f64,
    pub object_count: [usize; 2],
    pub object_width: [f64; 2],
    pub object_height: [f64; 2],
    /// Minimum free gap between neighbouring ground objects.
    pub min_gap: f64,
    /// Keep-out margin at the scene borders.
    pub edge_margin: f64,
    pub stack_probability: f64,
    pub max_attempts: usize,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            width: 360.0,
            ground_y: 0.0,
            resolution: 2.0,
            object_count: [3, 5],
            object_width: [20.0, 40.0],
            object_height: [30.0, 60.0],
            min_gap: 24.0,
            edge_margin: 10.0,
            stack_probability: 0.0,
            max_attempts: 200,
        }
    }
}

impl SceneParams {
    fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: &str| Err(SceneError::InvalidParams(m.to_string()));
        if !(self.resolution > 0.0) {
            return bad("resolution must be positive");
        }
        if self.object_count[0] == 0 || self.object_count[0] > self.object_count[1] {
            return bad("object_count must be a non-empty range starting at 1 or more");
        }
        if !(self.object_width[0] > 0.0 && self.object_width[0] <= self.object_width[1]) {
            return bad("object_width range is invalid");
        }
        if !(self.object_height[0] > 0.0 && self.object_height[0] <= self.object_height[1]) {
            return bad("object_height range is invalid");
        }
        if self.object_width[0] + 2.0 * self.edge_margin > self.width {
            return bad("objects are wider than the scene");
        }
        if !(0.0..=1.0).contains(&self.stack_probability) {
            return bad("stack_probability must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Generates a random skyline of boxes. Deterministic in `seed`.
///
/// Ground boxes are laid out left to right with the leftover width split
/// randomly between the gaps, so any draw of widths that fits is placed.
/// Stacked boxes are then dropped onto random supports.
pub fn generate_scene(seed: u64, params: &SceneParams) -> Result<Landscape, SceneError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.random_range(params.object_count[0]..=params.object_count[1]);
    let stacked = (1..count).filter(|_| rng.random::<f64>() < params.stack_probability).count();
    let on_ground = count - stacked;
    let max_w = params.object_width[1].min(params.width - 2.0 * params.edge_margin);
    let usable = params.width - 2.0 * params.edge_margin;

    let mut boxes: Vec<Obstacle> = Vec::with_capacity(count);
    for _ in 0..params.max_attempts {
        let sizes: Vec<(f64, f64)> = (0..on_ground)
            .map(|_| {
                (
                    rng.random_range(params.object_width[0]..=max_w),
                    rng.random_range(params.object_height[0]..=params.object_height[1]),
                )
            })
            .collect();
        let need = sizes.iter().map(|s| s.0).sum::<f64>() + (on_ground - 1) as f64 * params.min_gap;
        if need > usable {
            continue;
        }
        let shares: Vec<f64> = (0..=on_ground).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
        let total: f64 = shares.iter().sum();
        let slack = usable - need;
        let mut x = params.edge_margin + slack * shares[0] / total;
        for (i, (w, h)) in sizes.iter().enumerate() {
            boxes.push(Obstacle::rect_on_ground(0, x + w / 2.0, params.ground_y, *w, *h));
            x += w + params.min_gap + slack * shares[i + 1] / total;
        }
        break;
    }
    if boxes.is_empty() {
        return Err(SceneError::Generation { object: on_ground - 1, attempts: params.max_attempts });
    }

    for object in on_ground..count {
        let mut placed = None;
        for _ in 0..params.max_attempts {
            let w = rng.random_range(params.object_width[0]..=max_w);
            let h = rng.random_range(params.object_height[0]..=params.object_height[1]);
            let b = boxes[rng.random_range(0..boxes.len())].aabb();
            if b[2] - b[0] < w {
                continue;
            }
            let cx = rng.random_range(b[0] + w / 2.0..=b[2] - w / 2.0);
            let candidate = Obstacle {
                id: 0,
                center: [cx, b[3] + h / 2.0],
                shape: Shape::Rect { half_extents: [w / 2.0, h / 2.0] },
                rotation: 0.0,
            };
            let cb = candidate.aabb();
            let clear = boxes.iter().all(|o| {
                let ob = o.aabb();
                let x_sep = cb[0] >= ob[2] || ob[0] >= cb[2];
                let y_sep = cb[1] >= ob[3] - REST_TOL || ob[1] >= cb[3] - REST_TOL;
                x_sep || y_sep
            });
            if clear {
                placed = Some(candidate);
                break;
            }
        }
        match placed {
            Some(o) => boxes.push(o),
            None => return Err(SceneError::Generation { object, attempts: params.max_attempts }),
        }
    }

    boxes.sort_by(|a, b| a.center[0].total_cmp(&b.center[0]).then(a.center[1].total_cmp(&b.center[1])));
    for (i, o) in boxes.iter_mut().enumerate() {
        o.id = i as u32;
    }
    let scene = Landscape {
        id: seed,
        width: params.width,
        ground_y: params.ground_y,
        resolution: params.resolution,
        objects: boxes,
    };
    scene.validate()?;
    Ok(scene)
}

/// A surface point with an outward normal frame and curvature descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceFeature {
    /// Position on the boundary; heading is the outward normal direction.
    pub v: Pose2,
    /// Curvature descriptor in 1/mm, zero on straight segments.
    pub r: f64,
    pub object_id: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCloud {
    pub scene_id: u64,
    pub features: Vec<SurfaceFeature>,
}

impl FeatureCloud {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Applies a rigid transform to every feature frame.
    pub fn transformed(&self, t: &Pose2) -> FeatureCloud {
        FeatureCloud {
            scene_id: self.scene_id,
            features: self.features.iter().map(|f| SurfaceFeature { v: t.compose(&f.v), ..*f }).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureParams {
    /// Neighbourhood size for the PCA normal and the curvature window.
    pub neighbours: usize,
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self { neighbours: 7 }
    }
}

/// Outward normal angle from PCA over a neighbourhood (sign not yet fixed).
fn pca_normal(points: &[[f64; 2]]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let dx = p[0] - mx;
        let dy = p[1] - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    // major axis of the 2x2 covariance; the normal is perpendicular to it
    let major = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    wrap_angle(major + PI / 2.0)
}

/// Samples every object boundary and computes normals and curvature.
///
/// Points whose both normal directions lead into solid material (bottom
/// faces on the ground, faces pressed against a neighbour) are dropped.
pub fn extract_features(scene: &Landscape, params: &FeatureParams) -> Result<FeatureCloud, SceneError> {
    scene.validate()?;
    let k = params.neighbours.max(3);
    let half = k / 2;
    let probe = scene.resolution * 0.05;
    let mut features = Vec::new();

    for obj in &scene.objects {
        let pts = obj.boundary_points(scene.resolution);
        let n = pts.len();
        if n < k {
            return Err(SceneError::FeatureExtraction { object_id: obj.id, points: n, needed: k });
        }
        let mut order: Vec<usize> = (0..n).collect();
        for (i, &p) in pts.iter().enumerate() {
            order.sort_by(|&a, &b| {
                let da = norm2(sub2(pts[a], p));
                let db = norm2(sub2(pts[b], p));
                da.total_cmp(&db).then(a.cmp(&b))
            });
            let hood: Vec<[f64; 2]> = order[..k].iter().map(|&j| pts[j]).collect();
            let mut normal = pca_normal(&hood);
            let dir = [normal.cos(), normal.sin()];
            let out = [p[0] + probe * dir[0], p[1] + probe * dir[1]];
            let back = [p[0] - probe * dir[0], p[1] - probe * dir[1]];
            let out_solid = scene.is_solid(out);
            if out_solid {
                if scene.is_solid(back) {
                    continue;
                }
                normal = wrap_angle(normal + PI);
            }

            let prev = pts[(i + n - half) % n];
            let next = pts[(i + half) % n];
            let a = sub2(p, prev);
            let b = sub2(next, p);
            let turn = wrap_angle(b[1].atan2(b[0]) - a[1].atan2(a[0])).abs();
            let arc = 0.5 * (norm2(a) + norm2(b));
            let r = (turn / arc).min(1.0 / scene.resolution);
            // numerical dust on straight edges
            let r = if r < 1e-9 { 0.0 } else { r };

            features.push(SurfaceFeature { v: Pose2::from_position(p, normal), r, object_id: obj.id });
        }
    }
    Ok(FeatureCloud { scene_id: scene.id, features })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_box() -> Landscape {
        Landscape {
            id: 0,
            width: 200.0,
            ground_y: 0.0,
            resolution: 2.0,
            objects: vec![Obstacle::rect_on_ground(0, 100.0, 0.0, 40.0, 30.0)],
        }
    }

    #[test]
    fn same_seed_same_scene() {
        let p = SceneParams::default();
        assert_eq!(generate_scene(7, &p).unwrap(), generate_scene(7, &p).unwrap());
        assert_ne!(generate_scene(7, &p).unwrap(), generate_scene(8, &p).unwrap());
    }

    #[test]
    fn three_boxes_do_not_overlap() {
        let p = SceneParams { object_count: [3, 3], ..Default::default() };
        let s = generate_scene(1, &p).unwrap();
        assert_eq!(s.objects.len(), 3);
        for (i, a) in s.objects.iter().enumerate() {
            let ab = a.aabb();
            assert!((ab[1] - s.ground_y).abs() < 1e-9);
            for b in &s.objects[i + 1..] {
                let bb = b.aabb();
                let overlap = ab[0] < bb[2] && bb[0] < ab[2] && ab[1] < bb[3] && bb[1] < ab[3];
                assert!(!overlap, "{a:?} overlaps {b:?}");
            }
        }
    }

    #[test]
    fn object_wider_than_scene_is_rejected() {
        let p = SceneParams { object_width: [400.0, 500.0], ..Default::default() };
        assert!(matches!(generate_scene(1, &p), Err(SceneError::InvalidParams(_))));
    }

    #[test]
    fn crowded_scene_fails_generation() {
        let p = SceneParams { object_count: [40, 40], ..Default::default() };
        assert!(matches!(generate_scene(1, &p), Err(SceneError::Generation { .. })));
    }

    #[test]
    fn stacked_scenes_rest_on_something() {
        let p = SceneParams { stack_probability: 0.5, object_count: [5, 6], ..Default::default() };
        for seed in 0..20 {
            let s = generate_scene(seed, &p).unwrap();
            s.validate().unwrap();
        }
    }

    #[test]
    fn floating_object_is_invalid() {
        let mut s = single_box();
        s.objects[0].center[1] += 5.0;
        assert!(matches!(s.validate(), Err(SceneError::InvalidScene(_))));
    }

    #[test]
    fn top_edge_midpoint_faces_up_and_is_flat() {
        let s = single_box();
        let cloud = extract_features(&s, &FeatureParams::default()).unwrap();
        let f = cloud
            .features
            .iter()
            .find(|f| (f.v.x - 100.0).abs() < 1e-9 && (f.v.y - 30.0).abs() < 1e-9)
            .expect("top midpoint sampled");
        assert!((f.v.theta - PI / 2.0).abs() < 1e-9);
        assert_eq!(f.r, 0.0);
    }

    #[test]
    fn corner_has_positive_curvature() {
        let s = single_box();
        let cloud = extract_features(&s, &FeatureParams::default()).unwrap();
        let corner =
            cloud.features.iter().find(|f| (f.v.x - 120.0).abs() < 1e-9 && (f.v.y - 30.0).abs() < 1e-9).unwrap();
        assert!(corner.r > 0.0);
        assert!((corner.v.theta - PI / 4.0).abs() < 0.2);
    }

    #[test]
    fn circle_curvature_is_inverse_radius() {
        let radius = 25.0;
        let s = Landscape {
            id: 0,
            width: 200.0,
            ground_y: 0.0,
            resolution: 1.0,
            objects: vec![Obstacle::circle(0, [100.0, radius], radius)],
        };
        let cloud = extract_features(&s, &FeatureParams::default()).unwrap();
        assert!(cloud.len() > 100);
        for f in &cloud.features {
            assert!((f.r * radius - 1.0).abs() < 0.1, "r = {}", f.r);
            // outward: normal points away from the centre
            let d = [f.v.x - 100.0, f.v.y - radius];
            assert!(d[0] * f.v.theta.cos() + d[1] * f.v.theta.sin() > 0.0);
        }
    }

    #[test]
    fn straight_edge_normals_are_exact() {
        let s = single_box();
        let cloud = extract_features(&s, &FeatureParams::default()).unwrap();
        // interior of the right face, away from the corner windows
        for f in cloud.features.iter().filter(|f| (f.v.x - 120.0).abs() < 1e-9 && f.v.y > 8.0 && f.v.y < 22.0) {
            assert!(f.v.theta.abs() < 1e-6, "{:?}", f);
            assert_eq!(f.r, 0.0);
        }
    }

    #[test]
    fn normals_point_away_from_centroid_and_feature_count_tracks_perimeter() {
        let s = Landscape {
            id: 0,
            width: 300.0,
            ground_y: 0.0,
            resolution: 2.0,
            objects: vec![Obstacle::circle(0, [60.0, 20.0], 20.0), Obstacle::circle(1, [200.0, 13.0], 13.0)],
        };
        let cloud = extract_features(&s, &FeatureParams::default()).unwrap();
        for o in &s.objects {
            let own: Vec<_> = cloud.features.iter().filter(|f| f.object_id == o.id).collect();
            let expected = o.perimeter() / s.resolution;
            // the single ground contact point is occluded
            assert!((own.len() as f64 - expected).abs() <= 2.0, "{} vs {}", own.len(), expected);
            for f in own {
                let d = [f.v.x - o.center[0], f.v.y - o.center[1]];
                assert!(d[0] * f.v.theta.cos() + d[1] * f.v.theta.sin() > 0.0);
            }
        }
    }

    #[test]
    fn exposed_rect_features_exclude_ground_contact() {
        let s = single_box();
        let cloud = extract_features(&s, &FeatureParams::default()).unwrap();
        assert!(cloud.features.iter().all(|f| f.v.y > 0.0));
        // perimeter minus the bottom edge
        let expected = (40.0 + 30.0 + 30.0) / 2.0;
        assert!((cloud.len() as f64 - expected).abs() <= 2.0, "{}", cloud.len());
        for f in &cloud.features {
            let d = [f.v.x - 100.0, f.v.y - 15.0];
            assert!(d[0] * f.v.theta.cos() + d[1] * f.v.theta.sin() > 0.0);
            assert!(f.r >= 0.0);
        }
    }

    #[test]
    fn too_few_points_is_an_error() {
        let s = Landscape {
            id: 0,
            width: 100.0,
            ground_y: 0.0,
            resolution: 10.0,
            objects: vec![Obstacle::circle(0, [50.0, 5.0], 5.0)],
        };
        assert!(matches!(
            extract_features(&s, &FeatureParams::default()),
            Err(SceneError::FeatureExtraction { object_id: 0, .. })
        ));
    }

    #[test]
    fn rect_distance_cases() {
        let o = Obstacle::rect_on_ground(0, 0.0, 0.0, 20.0, 10.0);
        assert_eq!(o.signed_distance([0.0, 15.0]), 5.0);
        assert_eq!(o.signed_distance([0.0, 5.0]), -5.0);
        assert!((o.signed_distance([13.0, 14.0]) - 5.0).abs() < 1e-12);
        let rotated = Obstacle { rotation: PI / 2.0, ..o };
        assert!((rotated.signed_distance([0.0, 5.0 + 10.0 + 1.0]) - 1.0).abs() < 1e-9);
    }
}
