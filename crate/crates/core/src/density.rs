//! Kernel densities over link poses and one-shot contact learning.
//!
//! A [`ContactModel`] stores, per gripper link, a weighted kernel mixture
//! over the link pose relative to nearby surface feature frames (plus the
//! feature curvature). Transplanting those relative poses onto the features
//! of a new scene gives a [`QueryDensity`] over absolute link poses, which
//! [`sample_grasps`] turns into scored candidate grasps.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::format::Versioned;
use crate::scene::{FeatureCloud, Landscape};
use crate::se2::{angle_diff, norm2, sub2, wrap_angle, Pose2};

/// Below this a link counts as penetrating.
pub const PENETRATION_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DensityError {
    #[error("mixture has no kernels")]
    EmptyMixture,
    #[error("bandwidth components must be positive")]
    InvalidBandwidth,
    #[error("no surface feature within the contact cutoff of link L{}", .link + 1)]
    NoContactFeatures { link: usize },
    #[error("query density for link L{} is empty: no scene surface resembles the demonstration", .link + 1)]
    EmptyDensity { link: usize },
    #[error("no collision-free grasp survived sampling")]
    NoGrasp,
    #[error("invalid gripper: {0}")]
    InvalidGripper(String),
}

/// Kernel bandwidth: standard deviations per dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bandwidth {
    pub position: [f64; 2],
    pub theta: f64,
    pub curvature: f64,
}

impl Default for Bandwidth {
    fn default() -> Self {
        Self { position: [3.0, 3.0], theta: 0.15, curvature: 0.02 }
    }
}

impl Bandwidth {
    pub fn validate(&self) -> Result<(), DensityError> {
        let ok =
            [self.position[0], self.position[1], self.theta, self.curvature].iter().all(|s| s.is_finite() && *s > 0.0);
        if ok {
            Ok(())
        } else {
            Err(DensityError::InvalidBandwidth)
        }
    }
}

#[inline]
pub fn normal_pdf(x: f64, sigma: f64) -> f64 {
    (-0.5 * (x / sigma).powi(2)).exp() / (sigma * (TAU).sqrt())
}

/// One kernel of a mixture. `curvature` is ignored for link-pose densities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub mean: Pose2,
    pub curvature: f64,
    pub weight: f64,
}

/// A point at which a density is evaluated. Without a curvature the
/// curvature factor is marginalised out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub pose: Pose2,
    pub curvature: Option<f64>,
}

impl Sample {
    pub fn pose(pose: Pose2) -> Self {
        Self { pose, curvature: None }
    }

    pub fn feature(pose: Pose2, curvature: f64) -> Self {
        Self { pose, curvature: Some(curvature) }
    }
}

/// Product kernel: bivariate position Gaussian, wrapped-angle Gaussian and
/// (optionally) a curvature Gaussian. The kernel weight is not applied.
pub fn eval_kernel(s: &Sample, k: &Kernel, bw: &Bandwidth) -> f64 {
    let dx = s.pose.x - k.mean.x;
    let dy = s.pose.y - k.mean.y;
    let dt = angle_diff(s.pose.theta, k.mean.theta);
    let mut v = normal_pdf(dx, bw.position[0]) * normal_pdf(dy, bw.position[1]) * normal_pdf(dt, bw.theta);
    if let Some(r) = s.curvature {
        v *= normal_pdf(r - k.curvature, bw.curvature);
    }
    v
}

/// A normalised weighted kernel mixture with a shared bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mixture {
    pub bandwidth: Bandwidth,
    pub kernels: Vec<Kernel>,
}

impl Mixture {
    /// Builds a mixture, normalising the given non-negative weights.
    pub fn normalized(bandwidth: Bandwidth, mut kernels: Vec<Kernel>) -> Result<Self, DensityError> {
        bandwidth.validate()?;
        let total: f64 = kernels.iter().map(|k| k.weight).sum();
        if kernels.is_empty() || !(total > 0.0) {
            return Err(DensityError::EmptyMixture);
        }
        for k in &mut kernels {
            k.weight /= total;
        }
        Ok(Self { bandwidth, kernels })
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    /// Weighted sum of kernels. Kernels more than 10σ away in position are skipped.
    pub fn eval(&self, s: &Sample) -> f64 {
        let bw = &self.bandwidth;
        self.kernels
            .iter()
            .filter(|k| {
                let ux = (s.pose.x - k.mean.x) / bw.position[0];
                let uy = (s.pose.y - k.mean.y) / bw.position[1];
                ux * ux + uy * uy <= 100.0
            })
            .map(|k| k.weight * eval_kernel(s, k, bw))
            .sum()
    }
}

/// Mixture density at `s`; errors on an empty mixture.
pub fn eval_density(s: &Sample, mixture: &Mixture) -> Result<f64, DensityError> {
    if mixture.kernels.is_empty() {
        return Err(DensityError::EmptyMixture);
    }
    Ok(mixture.eval(s))
}

/// Two spherical fingers on a parallel jaw.
///
/// In the gripper frame the fingers sit on the local x axis, L1 on the
/// negative side and L2 on the positive side, with `aperture` the free gap
/// between the finger surfaces. Heading 0 is a top-down approach.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GripperModel {
    pub link_radius: [f64; 2],
    pub aperture_range: [f64; 2],
    /// Largest allowed |heading| of a grasp.
    pub max_tilt: f64,
}

impl Default for GripperModel {
    fn default() -> Self {
        Self { link_radius: [5.0, 5.0], aperture_range: [0.0, 80.0], max_tilt: PI / 3.0 }
    }
}

/// Gripper pose and finger opening.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GripperConfig {
    pub pose: Pose2,
    pub aperture: f64,
}

/// Per-link contact state against the scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum LinkContact {
    Free { distance: f64 },
    Touching { distance: f64, object_id: Option<u32> },
    Penetrating { distance: f64, object_id: Option<u32> },
}

impl LinkContact {
    pub fn is_penetrating(&self) -> bool {
        matches!(self, LinkContact::Penetrating { .. })
    }

    pub fn touching_object(&self) -> Option<u32> {
        match self {
            LinkContact::Touching { object_id, .. } => *object_id,
            _ => None,
        }
    }
}

impl GripperModel {
    pub fn validate(&self) -> Result<(), DensityError> {
        if !(self.link_radius[0] > 0.0 && self.link_radius[1] > 0.0) {
            return Err(DensityError::InvalidGripper("link radii must be positive".into()));
        }
        if !(self.aperture_range[0] >= 0.0 && self.aperture_range[0] <= self.aperture_range[1]) {
            return Err(DensityError::InvalidGripper("aperture range is invalid".into()));
        }
        Ok(())
    }

    /// Offset of link `i` along the gripper x axis.
    pub fn link_offset(&self, link: usize, aperture: f64) -> f64 {
        match link {
            0 => -(aperture / 2.0 + self.link_radius[0]),
            _ => aperture / 2.0 + self.link_radius[1],
        }
    }

    pub fn link_poses(&self, cfg: &GripperConfig) -> [Pose2; 2] {
        [0, 1].map(|i| cfg.pose.compose(&Pose2::new(self.link_offset(i, cfg.aperture), 0.0, 0.0)))
    }

    /// The gripper frame that puts link L1 at `l1` with the given opening.
    pub fn frame_from_l1(&self, l1: &Pose2, aperture: f64) -> Pose2 {
        l1.compose(&Pose2::new(-self.link_offset(0, aperture), 0.0, 0.0))
    }

    pub fn clamp_aperture(&self, a: f64) -> f64 {
        a.clamp(self.aperture_range[0], self.aperture_range[1])
    }

    /// Circle-versus-scene contact report for both links.
    pub fn contacts(&self, cfg: &GripperConfig, scene: &Landscape, touch_tol: f64) -> [LinkContact; 2] {
        let links = self.link_poses(cfg);
        [0, 1].map(|i| {
            let q = scene.nearest_surface(links[i].position());
            let d = q.distance - self.link_radius[i];
            if d < -PENETRATION_TOL {
                LinkContact::Penetrating { distance: d, object_id: q.object_id }
            } else if d <= touch_tol {
                LinkContact::Touching { distance: d, object_id: q.object_id }
            } else {
                LinkContact::Free { distance: d }
            }
        })
    }

    pub fn penetrates(&self, cfg: &GripperConfig, scene: &Landscape) -> bool {
        let links = self.link_poses(cfg);
        (0..2).any(|i| scene.nearest_surface(links[i].position()).distance - self.link_radius[i] < -PENETRATION_TOL)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContactParams {
    pub bandwidth: Bandwidth,
    /// Neighbourhood cutoff as a multiple of the link radius, measured from the link surface.
    pub cutoff_factor: f64,
    /// Pre-normalisation weight of a feature lying exactly at the cutoff.
    pub weight_at_cutoff: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        Self { bandwidth: Bandwidth::default(), cutoff_factor: 3.0, weight_at_cutoff: 0.01 }
    }
}

/// Contact mixture for a single link, over (link pose in feature frame, curvature).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkContactModel {
    pub link: usize,
    /// Sum of the raw exponential weights before normalisation.
    pub normalizer: f64,
    pub cutoff: f64,
    pub decay: f64,
    pub mixture: Mixture,
    /// Object each kernel's source feature belonged to.
    pub source_objects: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactModel {
    pub gripper: GripperModel,
    pub params: ContactParams,
    pub links: [LinkContactModel; 2],
}

impl Versioned for ContactModel {
    const SCHEMA: &'static str = "gripassist.contact_model/1";
}

impl ContactModel {
    /// Contact density of a link pose relative to one feature, `C^L(z, r)`.
    pub fn eval(&self, link: usize, z: &Pose2, r: f64) -> f64 {
        self.links[link].mixture.eval(&Sample::feature(*z, r))
    }
}

/// Learns a contact model from a single demonstrated grasp.
pub fn learn_contact_model(
    demo_scene: &FeatureCloud,
    demo_grasp: &GripperConfig,
    gripper: &GripperModel,
    params: &ContactParams,
) -> Result<ContactModel, DensityError> {
    gripper.validate()?;
    params.bandwidth.validate()?;
    let links = gripper.link_poses(demo_grasp);
    let mut out = Vec::with_capacity(2);
    for (i, l) in links.iter().enumerate() {
        let radius = gripper.link_radius[i];
        let cutoff = params.cutoff_factor * radius;
        let decay = -params.weight_at_cutoff.ln() / (cutoff * cutoff);
        let mut kernels = Vec::new();
        let mut sources = Vec::new();
        for f in &demo_scene.features {
            let d = (norm2(sub2(f.v.position(), l.position())) - radius).max(0.0);
            if d > cutoff {
                continue;
            }
            let z = f.v.inverse().compose(l);
            kernels.push(Kernel { mean: z, curvature: f.r, weight: (-decay * d * d).exp() });
            sources.push(f.object_id);
        }
        if kernels.is_empty() {
            return Err(DensityError::NoContactFeatures { link: i });
        }
        let normalizer = kernels.iter().map(|k| k.weight).sum();
        let mixture = Mixture::normalized(params.bandwidth, kernels)?;
        out.push(LinkContactModel { link: i, normalizer, cutoff, decay, mixture, source_objects: sources });
    }
    let l2 = out.pop().unwrap();
    let l1 = out.pop().unwrap();
    Ok(ContactModel { gripper: *gripper, params: *params, links: [l1, l2] })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QueryParams {
    /// Kernels kept per link.
    pub max_kernels: usize,
    /// Minimum total transplanted weight before the density counts as empty.
    pub weight_floor: f64,
}

impl Default for QueryParams {
    fn default() -> Self {
        Self { max_kernels: 8192, weight_floor: 1e-12 }
    }
}

/// Density over absolute poses of one link on a particular scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryDensity {
    pub link: usize,
    pub mixture: Mixture,
}

impl QueryDensity {
    pub fn eval(&self, l: &Pose2) -> f64 {
        self.mixture.eval(&Sample::pose(*l))
    }

    pub fn len(&self) -> usize {
        self.mixture.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mixture.is_empty()
    }

    /// Draws a link pose: pick a kernel by weight, then perturb by the bandwidth.
    pub fn sample(&self, cumulative: &[f64], rng: &mut impl Rng) -> Pose2 {
        let u: f64 = rng.random::<f64>() * cumulative[cumulative.len() - 1];
        let idx = cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1);
        let k = &self.mixture.kernels[idx];
        let bw = &self.mixture.bandwidth;
        let nx: f64 = StandardNormal.sample(rng);
        let ny: f64 = StandardNormal.sample(rng);
        let nt: f64 = StandardNormal.sample(rng);
        Pose2::new(k.mean.x + bw.position[0] * nx, k.mean.y + bw.position[1] * ny, k.mean.theta + bw.theta * nt)
    }

    fn cumulative(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.mixture
            .kernels
            .iter()
            .map(|k| {
                acc += k.weight;
                acc
            })
            .collect()
    }
}

fn lexicographic(a: &Pose2, b: &Pose2) -> std::cmp::Ordering {
    a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)).then(a.theta.total_cmp(&b.theta))
}

/// Transplants each link's contact kernels onto every feature of a new scene.
pub fn build_query_density(
    model: &ContactModel,
    scene: &FeatureCloud,
    params: &QueryParams,
) -> Result<[QueryDensity; 2], DensityError> {
    if scene.is_empty() {
        return Err(DensityError::EmptyDensity { link: 0 });
    }
    let build = |link: usize| -> Result<QueryDensity, DensityError> {
        let contact = &model.links[link].mixture;
        let sigma_r = contact.bandwidth.curvature;
        let mut kernels: Vec<Kernel> = Vec::with_capacity(scene.len() * contact.len());
        for f in &scene.features {
            for k in &contact.kernels {
                let w = k.weight * normal_pdf(f.r - k.curvature, sigma_r);
                if w > 0.0 {
                    kernels.push(Kernel { mean: f.v.compose(&k.mean), curvature: 0.0, weight: w });
                }
            }
        }
        let total: f64 = kernels.iter().map(|k| k.weight).sum();
        if !(total >= params.weight_floor) {
            return Err(DensityError::EmptyDensity { link });
        }
        kernels.sort_by(|a, b| b.weight.total_cmp(&a.weight).then_with(|| lexicographic(&a.mean, &b.mean)));
        kernels.truncate(params.max_kernels.max(1));
        Ok(QueryDensity { link, mixture: Mixture::normalized(contact.bandwidth, kernels)? })
    };
    Ok([build(0)?, build(1)?])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateGrasp {
    pub id: u32,
    pub pose: Pose2,
    pub aperture: f64,
    /// Product of the two link query densities.
    pub score: f64,
    pub object_id: u32,
}

impl CandidateGrasp {
    pub fn config(&self) -> GripperConfig {
        GripperConfig { pose: self.pose, aperture: self.aperture }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleParams {
    pub n_samples: usize,
    pub top_k: usize,
    pub aperture_step: f64,
    /// Sampled L1 poses farther than this from a surface are discarded.
    pub snap_distance: f64,
    /// Cluster radius: position (mm), heading (rad), aperture (mm).
    pub cluster: [f64; 3],
    /// Local coordinate ascent on the score after clustering.
    pub refine: bool,
}

impl Default for SampleParams {
    fn default() -> Self {
        Self {
            n_samples: 600,
            top_k: 12,
            aperture_step: 1.0,
            snap_distance: 8.0,
            cluster: [2.0, 5f64.to_radians(), 1.0],
            refine: true,
        }
    }
}

/// Closes the gripper around a sampled L1 pose: snaps L1 onto the nearest
/// object surface, scans the aperture grid for the first opening at which
/// L2 clears that object, then refines the opening so L2 touches it.
fn complete_grasp(
    l1_sample: &Pose2,
    qd: &[QueryDensity; 2],
    gripper: &GripperModel,
    scene: &Landscape,
    params: &SampleParams,
) -> Option<CandidateGrasp> {
    if l1_sample.theta.abs() > gripper.max_tilt {
        return None;
    }
    let q = scene.nearest_surface(l1_sample.position());
    let object_id = q.object_id?;
    let gap = q.distance - gripper.link_radius[0];
    if gap.abs() > params.snap_distance {
        return None;
    }
    let l1 = Pose2::new(l1_sample.x - gap * q.gradient[0], l1_sample.y - gap * q.gradient[1], l1_sample.theta);
    let obj = scene.object(object_id)?;
    let r2 = gripper.link_radius[1];
    let l2_dist = |a: f64| -> (f64, [f64; 2]) {
        let frame = gripper.frame_from_l1(&l1, a);
        let l2 = frame.compose(&Pose2::new(gripper.link_offset(1, a), 0.0, 0.0));
        let (d, g) = obj.distance_and_gradient(l2.position());
        (d - r2, g)
    };

    let [a_min, a_max] = gripper.aperture_range;
    let steps = ((a_max - a_min) / params.aperture_step).floor() as usize;
    let mut seen_inside = false;
    let mut exit = None;
    for i in 0..=steps {
        let a = a_min + i as f64 * params.aperture_step;
        let (d, _) = l2_dist(a);
        if d < 0.0 {
            seen_inside = true;
        } else if seen_inside {
            exit = Some(a);
            break;
        }
    }
    let mut a = exit?;
    let axis = [l1.theta.cos(), l1.theta.sin()];
    for _ in 0..6 {
        let (d, g) = l2_dist(a);
        let slope = g[0] * axis[0] + g[1] * axis[1];
        if d.abs() < 1e-10 || slope.abs() < 1e-6 {
            break;
        }
        a -= d / slope;
    }
    if !(a_min..=a_max).contains(&a) || l2_dist(a).0.abs() > 1e-6 {
        return None;
    }
    let cfg = GripperConfig { pose: gripper.frame_from_l1(&l1, a), aperture: a };
    if gripper.penetrates(&cfg, scene) {
        return None;
    }
    let links = gripper.link_poses(&cfg);
    let score = qd[0].eval(&links[0]) * qd[1].eval(&links[1]);
    if !(score > 0.0) {
        return None;
    }
    Some(CandidateGrasp { id: 0, pose: cfg.pose, aperture: a, score, object_id })
}

fn refine_grasp(
    start: &Pose2,
    best: CandidateGrasp,
    qd: &[QueryDensity; 2],
    gripper: &GripperModel,
    scene: &Landscape,
    params: &SampleParams,
) -> CandidateGrasp {
    let mut seed = *start;
    let mut best = best;
    let mut step = [1.0, 0.02];
    while step[0] > 0.02 {
        let mut improved = false;
        let moves = [
            (step[0], 0.0, 0.0),
            (-step[0], 0.0, 0.0),
            (0.0, step[0], 0.0),
            (0.0, -step[0], 0.0),
            (0.0, 0.0, step[1]),
            (0.0, 0.0, -step[1]),
        ];
        for (dx, dy, dt) in moves {
            let trial = Pose2::new(seed.x + dx, seed.y + dy, seed.theta + dt);
            if let Some(c) = complete_grasp(&trial, qd, gripper, scene, params) {
                if c.object_id == best.object_id && c.score > best.score {
                    best = c;
                    seed = trial;
                    improved = true;
                }
            }
        }
        if !improved {
            step = [step[0] * 0.5, step[1] * 0.5];
        }
    }
    best
}

fn score_order(a: &CandidateGrasp, b: &CandidateGrasp) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score).then_with(|| lexicographic(&a.pose, &b.pose)).then(a.aperture.total_cmp(&b.aperture))
}

fn same_cluster(a: &CandidateGrasp, b: &CandidateGrasp, tol: &[f64; 3]) -> bool {
    a.pose.distance(&b.pose) <= tol[0]
        && angle_diff(a.pose.theta, b.pose.theta).abs() <= tol[1]
        && (a.aperture - b.aperture).abs() <= tol[2]
}

fn cluster(sorted: Vec<(Pose2, CandidateGrasp)>, tol: &[f64; 3]) -> Vec<(Pose2, CandidateGrasp)> {
    let mut kept: Vec<(Pose2, CandidateGrasp)> = Vec::new();
    for item in sorted {
        if !kept.iter().any(|(_, k)| same_cluster(k, &item.1, tol)) {
            kept.push(item);
        }
    }
    kept
}

/// Samples candidate grasps from the per-link query densities.
///
/// Returned candidates are sorted by non-increasing score, ids are their
/// rank. Deterministic for a given seed.
pub fn sample_grasps(
    qd: &[QueryDensity; 2],
    gripper: &GripperModel,
    scene: &Landscape,
    params: &SampleParams,
    seed: u64,
) -> Result<Vec<CandidateGrasp>, DensityError> {
    if qd[0].is_empty() || qd[1].is_empty() {
        return Err(DensityError::EmptyMixture);
    }
    gripper.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cumulative = qd[0].cumulative();
    let samples: Vec<Pose2> = (0..params.n_samples).map(|_| qd[0].sample(&cumulative, &mut rng)).collect();

    let mut found: Vec<(Pose2, CandidateGrasp)> =
        samples.par_iter().filter_map(|s| complete_grasp(s, qd, gripper, scene, params).map(|c| (*s, c))).collect();
    if found.is_empty() {
        return Err(DensityError::NoGrasp);
    }
    found.sort_by(|a, b| score_order(&a.1, &b.1));
    let mut kept = cluster(found, &params.cluster);

    if params.refine {
        // refining every cluster head is cheap relative to sampling
        let limit = (params.top_k * 4).max(params.top_k);
        kept.truncate(limit);
        let mut refined: Vec<(Pose2, CandidateGrasp)> =
            kept.par_iter().map(|(s, c)| (*s, refine_grasp(s, *c, qd, gripper, scene, params))).collect();
        refined.sort_by(|a, b| score_order(&a.1, &b.1));
        kept = cluster(refined, &params.cluster);
    }

    kept.truncate(params.top_k);
    Ok(kept.into_iter().enumerate().map(|(i, (_, c))| CandidateGrasp { id: i as u32, ..c }).collect())
}

/// The demonstration used throughout the workbench: a pinch grasp near the
/// top of a 30 × 50 mm box, fingers touching both side faces.
pub fn pinch_demo() -> (Landscape, GripperConfig) {
    let scene = Landscape {
        id: 0,
        width: 200.0,
        ground_y: 0.0,
        resolution: 2.0,
        objects: vec![crate::scene::Obstacle::rect_on_ground(0, 100.0, 0.0, 30.0, 50.0)],
    };
    let grasp = GripperConfig { pose: Pose2::new(100.0, 44.0, 0.0), aperture: 30.0 };
    (scene, grasp)
}

/// Wraps an angle difference and returns it in degrees (for reports).
pub fn heading_error_deg(a: &Pose2, b: &Pose2) -> f64 {
    wrap_angle(a.theta - b.theta).abs().to_degrees()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{extract_features, FeatureParams, Obstacle, SurfaceFeature};

    fn demo_model() -> (Landscape, FeatureCloud, GripperConfig, ContactModel) {
        let (scene, grasp) = pinch_demo();
        let cloud = extract_features(&scene, &FeatureParams::default()).unwrap();
        let model = learn_contact_model(&cloud, &grasp, &GripperModel::default(), &ContactParams::default()).unwrap();
        (scene, cloud, grasp, model)
    }

    #[test]
    fn kernel_peak_is_product_of_normalisers() {
        let bw = Bandwidth { position: [3.0, 5.0], theta: 0.2, curvature: 0.05 };
        let k = Kernel { mean: Pose2::new(1.0, 2.0, 0.3), curvature: 0.1, weight: 1.0 };
        let s = Sample::feature(k.mean, k.curvature);
        let oracle = 1.0 / ((2.0 * PI).powi(2) * 3.0 * 5.0 * 0.2 * 0.05);
        assert!((eval_kernel(&s, &k, &bw) - oracle).abs() < 1e-12 * oracle);
    }

    #[test]
    fn kernel_is_periodic_in_heading_and_vanishes_far_away() {
        let bw = Bandwidth::default();
        let k = Kernel { mean: Pose2::new(0.0, 0.0, 1.0), curvature: 0.0, weight: 1.0 };
        let at = eval_kernel(&Sample::feature(k.mean, 0.0), &k, &bw);
        let shifted = Sample { pose: Pose2 { theta: 1.0 + TAU, ..k.mean }, curvature: Some(0.0) };
        assert!((eval_kernel(&shifted, &k, &bw) - at).abs() < 1e-9 * at);
        let far = Sample::feature(Pose2::new(1e6, 0.0, 1.0), 0.0);
        assert_eq!(eval_kernel(&far, &k, &bw), 0.0);
    }

    #[test]
    fn mixture_degeneracies() {
        let bw = Bandwidth::default();
        let k = Kernel { mean: Pose2::new(1.0, 1.0, 0.0), curvature: 0.0, weight: 1.0 };
        let s = Sample::feature(Pose2::new(2.0, 0.5, 0.1), 0.01);
        let single = Mixture::normalized(bw, vec![k]).unwrap();
        assert_eq!(eval_density(&s, &single).unwrap(), eval_kernel(&s, &k, &bw));
        let double = Mixture::normalized(bw, vec![k, k]).unwrap();
        assert!((eval_density(&s, &double).unwrap() - eval_kernel(&s, &k, &bw)).abs() < 1e-15);
        let empty = Mixture { bandwidth: bw, kernels: vec![] };
        assert_eq!(eval_density(&s, &empty), Err(DensityError::EmptyMixture));
        assert!(Mixture::normalized(bw, vec![]).is_err());
    }

    #[test]
    fn contact_model_uses_only_the_contacted_side() {
        let (scene, _, grasp, model) = demo_model();
        let cx = scene.objects[0].center[0];
        assert_eq!(grasp.aperture, 30.0);
        let l1 = &model.links[0];
        let l2 = &model.links[1];
        assert!(l1.mixture.len() > 5 && l2.mixture.len() > 5);
        let cloud = extract_features(&scene, &FeatureParams::default()).unwrap();
        let links = GripperModel::default().link_poses(&pinch_demo().1);
        let near = |l: &Pose2| -> Vec<SurfaceFeature> {
            cloud.features.iter().filter(|f| norm2(sub2(f.v.position(), l.position())) - 5.0 <= 15.0).copied().collect()
        };
        assert!(near(&links[0]).iter().all(|f| f.v.x < cx));
        assert!(near(&links[1]).iter().all(|f| f.v.x > cx));
        assert_eq!(near(&links[0]).len(), l1.mixture.len());
        assert!((l1.mixture.kernels.iter().map(|k| k.weight).sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn decay_law_weights() {
        let gripper = GripperModel::default();
        let grasp = GripperConfig { pose: Pose2::new(0.0, 0.0, 0.0), aperture: 10.0 };
        let links = gripper.link_poses(&grasp);
        let c = links[0].position();
        let d = 3.0;
        // two features left of L1 at surface distances d and 2d, one touching
        let feats = [0.0, d, 2.0 * d].map(|dd| SurfaceFeature {
            v: Pose2::new(c[0] - 5.0 - dd, c[1], PI),
            r: 0.0,
            object_id: 0,
        });
        let mut all = feats.to_vec();
        let c2 = links[1].position();
        all.push(SurfaceFeature { v: Pose2::new(c2[0] + 5.0, c2[1], 0.0), r: 0.0, object_id: 0 });
        let cloud = FeatureCloud { scene_id: 0, features: all };
        let model = learn_contact_model(&cloud, &grasp, &gripper, &ContactParams::default()).unwrap();
        let l1 = &model.links[0];
        let w: Vec<f64> = l1.mixture.kernels.iter().map(|k| k.weight * l1.normalizer).collect();
        assert!((w[0] - 1.0).abs() < 1e-12);
        let ratio = w[1] / w[2];
        assert!((ratio - (3.0 * l1.decay * d * d).exp()).abs() < 1e-9 * ratio);
        // weight at the cutoff is 1 %
        assert!(((-l1.decay * l1.cutoff * l1.cutoff).exp() - 0.01).abs() < 1e-12);
    }

    #[test]
    fn learning_fails_without_nearby_features() {
        let (_, cloud, grasp, _) = demo_model();
        let far = GripperConfig { pose: Pose2::new(grasp.pose.x, grasp.pose.y + 200.0, 0.0), ..grasp };
        let err = learn_contact_model(&cloud, &far, &GripperModel::default(), &ContactParams::default());
        assert_eq!(err, Err(DensityError::NoContactFeatures { link: 0 }));
    }

    #[test]
    fn learning_is_rigid_motion_equivariant() {
        let (_, cloud, grasp, model) = demo_model();
        let t = Pose2::new(-37.0, 12.5, 1.1);
        let moved_grasp = GripperConfig { pose: t.compose(&grasp.pose), ..grasp };
        let moved = learn_contact_model(
            &cloud.transformed(&t),
            &moved_grasp,
            &GripperModel::default(),
            &ContactParams::default(),
        )
        .unwrap();
        for (a, b) in model.links.iter().zip(moved.links.iter()) {
            assert_eq!(a.mixture.len(), b.mixture.len());
            for (ka, kb) in a.mixture.kernels.iter().zip(&b.mixture.kernels) {
                assert!((ka.mean.x - kb.mean.x).abs() < 1e-9);
                assert!((ka.mean.y - kb.mean.y).abs() < 1e-9);
                assert!(angle_diff(ka.mean.theta, kb.mean.theta).abs() < 1e-9);
                assert!((ka.weight - kb.weight).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn query_density_is_weight_scale_invariant() {
        let (_, cloud, _, model) = demo_model();
        let qd = build_query_density(&model, &cloud, &QueryParams::default()).unwrap();
        let mut doubled = model.clone();
        for l in &mut doubled.links {
            for k in &mut l.mixture.kernels {
                k.weight *= 2.0;
            }
        }
        let qd2 = build_query_density(&doubled, &cloud, &QueryParams::default()).unwrap();
        assert_eq!(qd, qd2);
    }

    #[test]
    fn dissimilar_curvature_gives_empty_density() {
        let (_, _, _, model) = demo_model();
        let cloud = FeatureCloud {
            scene_id: 9,
            features: (0..50)
                .map(|i| SurfaceFeature { v: Pose2::new(i as f64, 0.0, 0.0), r: 1.0, object_id: 0 })
                .collect(),
        };
        assert!(matches!(
            build_query_density(&model, &cloud, &QueryParams::default()),
            Err(DensityError::EmptyDensity { .. })
        ));
    }

    #[test]
    fn demo_scene_recovers_demo_grasp_and_is_deterministic() {
        let (scene, cloud, grasp, model) = demo_model();
        let qd = build_query_density(&model, &cloud, &QueryParams::default()).unwrap();
        let gripper = GripperModel::default();
        let params = SampleParams::default();
        let a = sample_grasps(&qd, &gripper, &scene, &params, 5).unwrap();
        let b = sample_grasps(&qd, &gripper, &scene, &params, 5).unwrap();
        assert_eq!(a, b);
        let top = &a[0];
        assert!(top.pose.distance(&grasp.pose) <= 2.0, "{} vs {}", top.pose, grasp.pose);
        assert!(heading_error_deg(&top.pose, &grasp.pose) <= 5.0);
        assert!(a.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn contact_report_cases() {
        let scene = Landscape {
            id: 0,
            width: 200.0,
            ground_y: 0.0,
            resolution: 2.0,
            objects: vec![Obstacle::rect_on_ground(0, 100.0, 0.0, 30.0, 50.0)],
        };
        let g = GripperModel::default();
        let far = GripperConfig { pose: Pose2::new(100.0, 150.0, 0.0), aperture: 30.0 };
        assert!(g.contacts(&far, &scene, 0.5).iter().all(|c| matches!(c, LinkContact::Free { .. })));
        let tangent = GripperConfig { pose: Pose2::new(100.0, 44.0, 0.0), aperture: 30.0 };
        assert!(g.contacts(&tangent, &scene, 0.5).iter().all(|c| c.touching_object() == Some(0)));
        let inside = GripperConfig { pose: Pose2::new(100.0, 25.0, 0.0), aperture: 0.0 };
        assert!(g.contacts(&inside, &scene, 0.5).iter().all(|c| c.is_penetrating()));
    }
}
