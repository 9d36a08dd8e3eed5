//! Straight-line reach-to-grasp plans with a collision-free orientation and
//! aperture schedule.
//!
//! Waypoints are stored by time-to-go: index 0 is the grasp, index `N` the
//! start. The nominal control at τ moves the gripper from waypoint τ to
//! waypoint τ−1 in one step of `dt`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::density::{CandidateGrasp, GripperConfig, GripperModel};
use crate::format::Versioned;
use crate::scene::Landscape;
use crate::se2::{angle_diff, Pose2};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("no collision-free orientation/aperture at waypoint τ={waypoint}")]
    NoCollisionFreeSchedule { waypoint: usize },
    #[error("start configuration is in collision")]
    StartInCollision,
    #[error("invalid plan parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanParams {
    /// Maximum distance between consecutive waypoints (mm).
    pub step_length: f64,
    /// Seconds per step.
    pub dt: f64,
    /// Extra opening on each side of the grasp aperture while in transit (mm).
    pub clearance: f64,
    /// Length of the final segment over which the fingers close (mm).
    pub approach_distance: f64,
    /// Largest sideways waypoint shift tried when nothing else clears (mm).
    pub max_offset: f64,
}

impl Default for PlanParams {
    fn default() -> Self {
        Self { step_length: 2.5, dt: 0.05, clearance: 8.0, approach_distance: 10.0, max_offset: 20.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub pose: Pose2,
    pub aperture: f64,
}

impl Waypoint {
    pub fn config(&self) -> GripperConfig {
        GripperConfig { pose: self.pose, aperture: self.aperture }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPlan {
    pub grasp: CandidateGrasp,
    /// `waypoints[τ]`, τ = 0 at the grasp.
    pub waypoints: Vec<Waypoint>,
    /// `controls[τ]` in mm/s; `controls[0]` is zero.
    pub controls: Vec<[f64; 2]>,
    pub dt: f64,
    /// Waypoints moved off the straight line to clear the skyline.
    #[serde(default)]
    pub offset_waypoints: Vec<usize>,
}

impl Versioned for TrajectoryPlan {
    const SCHEMA: &'static str = "gripassist.plan/1";
}

impl TrajectoryPlan {
    /// Number of control steps `N`.
    pub fn horizon(&self) -> usize {
        self.waypoints.len() - 1
    }

    pub fn waypoint(&self, tau: usize) -> &Waypoint {
        &self.waypoints[tau.min(self.horizon())]
    }

    pub fn control(&self, tau: usize) -> [f64; 2] {
        self.controls[tau.min(self.horizon())]
    }

    /// Nearest waypoint by position among τ ≤ `max_tau`.
    pub fn nearest_waypoint(&self, p: [f64; 2], max_tau: usize) -> usize {
        let mut best = (f64::INFINITY, 0);
        for tau in (0..=max_tau.min(self.horizon())).rev() {
            let w = &self.waypoints[tau].pose;
            let d = (w.x - p[0]).powi(2) + (w.y - p[1]).powi(2);
            if d < best.0 {
                best = (d, tau);
            }
        }
        best.1
    }
}

/// Anything that turns a grasp into a feasible reference trajectory.
pub trait Planner {
    fn plan(
        &self,
        start: &GripperConfig,
        grasp: &CandidateGrasp,
        scene: &Landscape,
        gripper: &GripperModel,
    ) -> Result<TrajectoryPlan, PlanError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StraightLinePlanner {
    pub params: PlanParams,
}

impl Planner for StraightLinePlanner {
    fn plan(
        &self,
        start: &GripperConfig,
        grasp: &CandidateGrasp,
        scene: &Landscape,
        gripper: &GripperModel,
    ) -> Result<TrajectoryPlan, PlanError> {
        plan_trajectory(start, grasp, scene, gripper, &self.params)
    }
}

const SEGMENT_CHECKS: usize = 4;

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Finds a collision-free variant of a waypoint: heading toward vertical
/// first, then a different opening (wider first), then a sideways shift.
fn resolve(
    cfg: GripperConfig,
    min_aperture: f64,
    line_dir: [f64; 2],
    scene: &Landscape,
    gripper: &GripperModel,
    params: &PlanParams,
) -> Option<(GripperConfig, bool)> {
    if !gripper.penetrates(&cfg, scene) {
        return Some((cfg, false));
    }
    let theta = cfg.pose.theta;
    for f in [0.5, 1.0] {
        let c = GripperConfig { pose: Pose2 { theta: theta * (1.0 - f), ..cfg.pose }, ..cfg };
        if !gripper.penetrates(&c, scene) {
            return Some((c, false));
        }
    }
    let upright = Pose2 { theta: 0.0, ..cfg.pose };
    let [_, a_max] = gripper.aperture_range;
    let lo = min_aperture.max(gripper.aperture_range[0]);
    let mut delta = 1.0;
    while cfg.aperture + delta <= a_max || cfg.aperture - delta >= lo {
        for a in [cfg.aperture + delta, cfg.aperture - delta] {
            if a < lo || a > a_max {
                continue;
            }
            let c = GripperConfig { pose: upright, aperture: a };
            if !gripper.penetrates(&c, scene) {
                return Some((c, false));
            }
        }
        delta += 1.0;
    }
    let normal = [-line_dir[1], line_dir[0]];
    let mut d = 1.0;
    while d <= params.max_offset {
        for s in [1.0, -1.0] {
            let pose = Pose2::new(upright.x + s * d * normal[0], upright.y + s * d * normal[1], 0.0);
            let c = GripperConfig { pose, aperture: cfg.aperture };
            if !gripper.penetrates(&c, scene) {
                return Some((c, true));
            }
        }
        d += 1.0;
    }
    None
}

fn segment_clear(a: &Waypoint, b: &Waypoint, scene: &Landscape, gripper: &GripperModel) -> bool {
    (1..SEGMENT_CHECKS).all(|k| {
        let f = k as f64 / SEGMENT_CHECKS as f64;
        let c = GripperConfig {
            pose: Pose2::new(
                lerp(a.pose.x, b.pose.x, f),
                lerp(a.pose.y, b.pose.y, f),
                a.pose.theta + angle_diff(b.pose.theta, a.pose.theta) * f,
            ),
            aperture: lerp(a.aperture, b.aperture, f),
        };
        !gripper.penetrates(&c, scene)
    })
}

/// Plans a straight approach from `start` to `grasp`.
pub fn plan_trajectory(
    start: &GripperConfig,
    grasp: &CandidateGrasp,
    scene: &Landscape,
    gripper: &GripperModel,
    params: &PlanParams,
) -> Result<TrajectoryPlan, PlanError> {
    if !(params.step_length > 0.0 && params.dt > 0.0) {
        return Err(PlanError::InvalidParams("step_length and dt must be positive".into()));
    }
    if gripper.penetrates(start, scene) {
        return Err(PlanError::StartInCollision);
    }
    let goal = grasp.config();
    if gripper.penetrates(&goal, scene) {
        return Err(PlanError::NoCollisionFreeSchedule { waypoint: 0 });
    }
    let dx = goal.pose.x - start.pose.x;
    let dy = goal.pose.y - start.pose.y;
    let dist = dx.hypot(dy);
    let n = (dist / params.step_length - 1e-9).ceil().max(0.0) as usize;
    let line_dir = if dist > 0.0 { [dx / dist, dy / dist] } else { [0.0, -1.0] };
    let dtheta = angle_diff(goal.pose.theta, start.pose.theta);
    let a_open = gripper.clamp_aperture((goal.aperture + 2.0 * params.clearance).max(goal.aperture));
    // first forward index inside the closing segment
    let approach_start =
        (0..=n).find(|&i| dist * (1.0 - i as f64 / n.max(1) as f64) <= params.approach_distance).unwrap_or(n);

    let mut forward = Vec::with_capacity(n + 1);
    let mut offsets = Vec::new();
    for i in 0..=n {
        if i == n {
            forward.push(Waypoint { pose: goal.pose, aperture: goal.aperture });
            break;
        }
        let t = i as f64 / n as f64;
        let pose = Pose2::new(
            lerp(start.pose.x, goal.pose.x, t),
            lerp(start.pose.y, goal.pose.y, t),
            start.pose.theta + dtheta * t,
        );
        let aperture = if i < approach_start {
            lerp(start.aperture, a_open, i as f64 / approach_start.max(1) as f64)
        } else {
            let remaining = dist * (1.0 - t);
            lerp(goal.aperture, a_open, (remaining / params.approach_distance).min(1.0))
        };
        let cfg = GripperConfig { pose, aperture: gripper.clamp_aperture(aperture) };
        let (cfg, shifted) = if i == 0 {
            (*start, false)
        } else {
            resolve(cfg, goal.aperture, line_dir, scene, gripper, params)
                .ok_or(PlanError::NoCollisionFreeSchedule { waypoint: n - i })?
        };
        if shifted {
            offsets.push(n - i);
        }
        forward.push(Waypoint { pose: cfg.pose, aperture: cfg.aperture });
    }

    forward.reverse();
    let mut waypoints = forward;
    // the plant moves in straight segments, so check between waypoints too;
    // a narrowing needed lower down is pulled up one waypoint at a time
    for tau in 1..waypoints.len() {
        let (a, b) = (waypoints[tau], waypoints[tau - 1]);
        if a.pose.distance(&b.pose) > 2.0 * params.step_length + 1e-9 {
            return Err(PlanError::NoCollisionFreeSchedule { waypoint: tau - 1 });
        }
        if segment_clear(&a, &b, scene, gripper) {
            continue;
        }
        let narrowed = Waypoint { aperture: a.aperture.min(b.aperture), ..a };
        if tau + 1 < waypoints.len()
            && !gripper.penetrates(&narrowed.config(), scene)
            && segment_clear(&narrowed, &b, scene, gripper)
        {
            waypoints[tau] = narrowed;
        } else {
            return Err(PlanError::NoCollisionFreeSchedule { waypoint: tau - 1 });
        }
    }
    let mut controls = vec![[0.0, 0.0]; waypoints.len()];
    for tau in 1..waypoints.len() {
        let a = &waypoints[tau].pose;
        let b = &waypoints[tau - 1].pose;
        controls[tau] = [(b.x - a.x) / params.dt, (b.y - a.y) / params.dt];
    }
    offsets.sort_unstable();
    Ok(TrajectoryPlan { grasp: *grasp, waypoints, controls, dt: params.dt, offset_waypoints: offsets })
}
