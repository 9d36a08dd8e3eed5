//! Kinematic gripper plant, grasp completion and interactive sessions.
//!
//! A [`Session`] owns one trial: it takes operator input once per tick,
//! applies assistance when enabled, steps the plant and logs a
//! [`TickRecord`]. Records written with [`write_trial`] replay bit-exactly
//! through [`replay`].

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{Arbiter, ControllerError, ControllerParams, PlanController};
use crate::density::{CandidateGrasp, GripperConfig, GripperModel, LinkContact};
use crate::format::FormatError;
use crate::planner::{plan_trajectory, PlanParams};
use crate::scene::Landscape;
use crate::se2::{angle_diff, Pose2};

pub const TRIAL_SCHEMA: &str = "gripassist.trial/1";

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("no candidate grasp could be planned")]
    NoFeasiblePlan,
    #[error("start configuration is in collision")]
    StartInCollision,
    #[error("session already finished")]
    Finished,
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("malformed trial record: {0}")]
    Record(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    pub dt: f64,
    /// Opening and closing speed for the aperture keys (mm/s).
    pub aperture_rate: f64,
    /// A link closer than this to a surface counts as touching (mm).
    pub touch_tolerance: f64,
    /// Largest gripper-frame position error accepted as a grasp (mm).
    pub completion_tolerance: f64,
    pub max_ticks: u64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self { dt: 0.05, aperture_rate: 40.0, touch_tolerance: 1.0, completion_tolerance: 5.0, max_ticks: 2400 }
    }
}

fn lerp_config(a: &GripperConfig, b: &GripperConfig, f: f64) -> GripperConfig {
    GripperConfig {
        pose: Pose2::new(
            a.pose.x + (b.pose.x - a.pose.x) * f,
            a.pose.y + (b.pose.y - a.pose.y) * f,
            a.pose.theta + angle_diff(b.pose.theta, a.pose.theta) * f,
        ),
        aperture: a.aperture + (b.aperture - a.aperture) * f,
    }
}

/// Largest free fraction of the move `from → to`, assuming `from` is free.
fn bisect(from: &GripperConfig, to: &GripperConfig, gripper: &GripperModel, scene: &Landscape) -> GripperConfig {
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..48 {
        let mid = 0.5 * (lo + hi);
        if gripper.penetrates(&lerp_config(from, to, mid), scene) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lerp_config(from, to, lo)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub config: GripperConfig,
    /// The requested motion was cut short by contact.
    pub clamped: bool,
}

/// Moves the gripper toward `target`, stopping at first contact and then
/// sliding along each coordinate separately so that tangential motion
/// survives a blocked normal one.
pub fn step_toward(
    current: &GripperConfig,
    target: &GripperConfig,
    gripper: &GripperModel,
    scene: &Landscape,
) -> StepOutcome {
    let target = GripperConfig { aperture: gripper.clamp_aperture(target.aperture), ..*target };
    if !gripper.penetrates(&target, scene) {
        return StepOutcome { config: target, clamped: false };
    }
    if gripper.penetrates(current, scene) {
        return StepOutcome { config: *current, clamped: true };
    }
    let mut c = bisect(current, &target, gripper, scene);
    for _ in 0..2 {
        for k in 0..4 {
            let mut t = c;
            match k {
                0 => t.pose.x = target.pose.x,
                1 => t.pose.y = target.pose.y,
                2 => t.pose.theta = target.pose.theta,
                _ => t.aperture = target.aperture,
            }
            if t == c {
                continue;
            }
            c = if gripper.penetrates(&t, scene) { bisect(&c, &t, gripper, scene) } else { t };
        }
    }
    StepOutcome { config: c, clamped: true }
}

/// One plant step with a velocity command and absolute heading/aperture.
pub fn step(
    current: &GripperConfig,
    velocity: [f64; 2],
    theta: f64,
    aperture: f64,
    dt: f64,
    gripper: &GripperModel,
    scene: &Landscape,
) -> StepOutcome {
    let target = GripperConfig {
        pose: Pose2::new(current.pose.x + velocity[0] * dt, current.pose.y + velocity[1] * dt, theta),
        aperture,
    };
    step_toward(current, &target, gripper, scene)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompletionReport {
    pub complete: bool,
    pub position_error: f64,
    pub contacts: [LinkContact; 2],
}

/// Both links touch the target object and the gripper sits within tolerance
/// of the target grasp.
pub fn check_grasp_complete(
    config: &GripperConfig,
    target: &CandidateGrasp,
    gripper: &GripperModel,
    scene: &Landscape,
    params: &SimParams,
) -> CompletionReport {
    let contacts = gripper.contacts(config, scene, params.touch_tolerance);
    let position_error = config.pose.distance(&target.pose);
    let touching = contacts
        .iter()
        .all(|c| matches!(c, LinkContact::Touching { object_id: Some(id), .. } if *id == target.object_id));
    CompletionReport { complete: touching && position_error <= params.completion_tolerance, position_error, contacts }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Manual,
    Assisted,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Manual => "manual",
            Mode::Assisted => "assisted",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApertureKey {
    #[default]
    Hold,
    Open,
    Close,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OperatorInput {
    /// Desired planar velocity (mm/s).
    pub velocity: [f64; 2],
    #[serde(default)]
    pub aperture: ApertureKey,
}

impl OperatorInput {
    pub fn is_idle(&self) -> bool {
        self.velocity == [0.0, 0.0] && self.aperture == ApertureKey::Hold
    }
}

/// Everything needed to reconstruct a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSetup {
    pub scene: Landscape,
    pub gripper: GripperModel,
    pub candidates: Vec<CandidateGrasp>,
    pub target: CandidateGrasp,
    pub start: GripperConfig,
    pub mode: Mode,
    pub plan: PlanParams,
    pub controller: ControllerParams,
    pub sim: SimParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssistTrace {
    pub grasp_id: u32,
    pub tau: usize,
    pub alpha: f64,
    pub u_star: [f64; 2],
    /// Intent costs in candidate order.
    pub costs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u64,
    pub input: OperatorInput,
    /// Velocity sent to the plant.
    pub command: [f64; 2],
    /// Configuration after the step.
    pub config: GripperConfig,
    pub clamped: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assist: Option<AssistTrace>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub success: bool,
    pub ticks: u64,
    /// Seconds from the first non-idle input to completion (or the last tick).
    pub execution_time: f64,
    pub position_error: f64,
    pub final_config: GripperConfig,
    pub penetration_events: u32,
}

pub struct Session {
    setup: SessionSetup,
    controllers: Vec<PlanController>,
    arbiter: Arbiter,
    config: GripperConfig,
    tick: u64,
    first_input: Option<u64>,
    completed_at: Option<u64>,
    penetration_events: u32,
    last_error: f64,
}

impl Session {
    pub fn new(setup: SessionSetup) -> Result<Self, SessionError> {
        if setup.gripper.penetrates(&setup.start, &setup.scene) {
            return Err(SessionError::StartInCollision);
        }
        let mut controllers = Vec::new();
        if setup.mode == Mode::Assisted {
            let plan_params = PlanParams { dt: setup.sim.dt, ..setup.plan };
            for g in &setup.candidates {
                match plan_trajectory(&setup.start, g, &setup.scene, &setup.gripper, &plan_params) {
                    Ok(plan) => controllers.push(PlanController::new(plan, &setup.controller)?),
                    Err(e) => log::debug!("grasp {} dropped: {e}", g.id),
                }
            }
            if controllers.is_empty() {
                return Err(SessionError::NoFeasiblePlan);
            }
        }
        let arbiter = Arbiter::new(&controllers);
        let config = setup.start;
        let last_error = config.pose.distance(&setup.target.pose);
        Ok(Self {
            setup,
            controllers,
            arbiter,
            config,
            tick: 0,
            first_input: None,
            completed_at: None,
            penetration_events: 0,
            last_error,
        })
    }

    pub fn setup(&self) -> &SessionSetup {
        &self.setup
    }

    pub fn controllers(&self) -> &[PlanController] {
        &self.controllers
    }

    pub fn config(&self) -> &GripperConfig {
        &self.config
    }

    pub fn tick_count(&self) -> u64 {
        self.tick
    }

    pub fn is_complete(&self) -> bool {
        self.completed_at.is_some()
    }

    /// Finished by completion or by the tick cap.
    pub fn is_finished(&self) -> bool {
        self.is_complete() || self.tick >= self.setup.sim.max_ticks
    }

    pub fn tick(&mut self, input: OperatorInput) -> Result<TickRecord, SessionError> {
        if self.is_finished() {
            return Err(SessionError::Finished);
        }
        let s = &self.setup;
        let dt = s.sim.dt;
        let limit = s.controller.velocity_limit;
        let mut velocity = crate::controller::saturate(input.velocity, limit);
        if !velocity.iter().all(|v| v.is_finite()) {
            velocity = [0.0, 0.0];
        }
        let (command, theta, aperture, assist) = match s.mode {
            Mode::Manual => {
                let delta = match input.aperture {
                    ApertureKey::Hold => 0.0,
                    ApertureKey::Open => s.sim.aperture_rate * dt,
                    ApertureKey::Close => -s.sim.aperture_rate * dt,
                };
                (velocity, self.config.pose.theta, self.config.aperture + delta, None)
            }
            Mode::Assisted => {
                let out = self.arbiter.step(&self.config.pose, velocity, &self.controllers, &s.controller)?;
                let trace = AssistTrace {
                    grasp_id: out.grasp_id,
                    tau: out.tau,
                    alpha: out.alpha,
                    u_star: out.u_star,
                    costs: out.costs.iter().map(|c| c.cost).collect(),
                };
                (out.command, out.theta, out.aperture, Some(trace))
            }
        };
        let outcome = step(&self.config, command, theta, aperture, dt, &s.gripper, &s.scene);
        self.config = outcome.config;
        self.tick += 1;
        if self.first_input.is_none() && !input.is_idle() {
            self.first_input = Some(self.tick - 1);
        }
        let report = check_grasp_complete(&self.config, &s.target, &s.gripper, &s.scene, &s.sim);
        if report.contacts.iter().any(|c| c.is_penetrating()) {
            self.penetration_events += 1;
        }
        self.last_error = report.position_error;
        if report.complete {
            self.completed_at = Some(self.tick);
        }
        Ok(TickRecord { tick: self.tick, input, command, config: self.config, clamped: outcome.clamped, assist })
    }

    pub fn outcome(&self) -> TrialOutcome {
        let end = self.completed_at.unwrap_or(self.tick);
        let start = self.first_input.unwrap_or(end);
        TrialOutcome {
            success: self.completed_at.is_some(),
            ticks: self.tick,
            execution_time: (end - start) as f64 * self.setup.sim.dt,
            position_error: self.last_error,
            final_config: self.config,
            penetration_events: self.penetration_events,
        }
    }
}

/// Labels attached to a trial record.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrialMeta {
    pub trial: u64,
    pub operator: String,
    pub config_hash: String,
    pub scene_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub meta: TrialMeta,
    pub setup: SessionSetup,
    pub ticks: Vec<TickRecord>,
    pub outcome: TrialOutcome,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Line {
    Header { schema: String, meta: TrialMeta, setup: Box<SessionSetup> },
    Tick(TickRecord),
    Outcome(TrialOutcome),
}

/// Line-delimited JSON: a header, one line per tick, then the outcome.
pub fn write_trial<W: Write>(record: &TrialRecord, mut out: W) -> Result<(), SessionError> {
    let header =
        Line::Header { schema: TRIAL_SCHEMA.into(), meta: record.meta.clone(), setup: Box::new(record.setup.clone()) };
    let io = |e: std::io::Error| SessionError::Format(e.into());
    let json = |e: serde_json::Error| SessionError::Format(e.into());
    writeln!(out, "{}", serde_json::to_string(&header).map_err(json)?).map_err(io)?;
    for t in &record.ticks {
        writeln!(out, "{}", serde_json::to_string(&Line::Tick(t.clone())).map_err(json)?).map_err(io)?;
    }
    writeln!(out, "{}", serde_json::to_string(&Line::Outcome(record.outcome)).map_err(json)?).map_err(io)?;
    Ok(())
}

pub fn read_trial<R: BufRead>(input: R) -> Result<TrialRecord, SessionError> {
    let mut header = None;
    let mut ticks = Vec::new();
    let mut outcome = None;
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|e| SessionError::Format(e.into()))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line =
            serde_json::from_str(&line).map_err(|e| SessionError::Record(format!("line {}: {e}", n + 1)))?;
        match parsed {
            Line::Header { schema, meta, setup } => {
                if schema != TRIAL_SCHEMA {
                    return Err(FormatError::Schema { expected: TRIAL_SCHEMA, found: schema }.into());
                }
                header = Some((meta, *setup));
            }
            Line::Tick(t) => ticks.push(t),
            Line::Outcome(o) => outcome = Some(o),
        }
    }
    let (meta, setup) = header.ok_or_else(|| SessionError::Record("missing header".into()))?;
    let outcome = outcome.ok_or_else(|| SessionError::Record("missing outcome".into()))?;
    Ok(TrialRecord { meta, setup, ticks, outcome })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspCost {
    pub grasp_id: u32,
    pub cost: f64,
}

/// One line of the per-tick debug dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebugLine {
    pub tick: u64,
    pub mode: Mode,
    /// Operator velocity `u`.
    pub input: [f64; 2],
    pub command: [f64; 2],
    pub config: GripperConfig,
    pub grasp_id: Option<u32>,
    pub tau: Option<usize>,
    pub alpha: Option<f64>,
    pub u_star: Option<[f64; 2]>,
    pub costs: Vec<GraspCost>,
}

/// Expands a record into debug lines. Rebuilds the session to recover which
/// grasps were planned, so the costs can be labelled.
pub fn debug_lines(record: &TrialRecord) -> Result<Vec<DebugLine>, SessionError> {
    let session = Session::new(record.setup.clone())?;
    let ids: Vec<u32> = session.controllers().iter().map(|c| c.grasp_id()).collect();
    Ok(record
        .ticks
        .iter()
        .map(|t| {
            let a = t.assist.as_ref();
            DebugLine {
                tick: t.tick,
                mode: record.setup.mode,
                input: t.input.velocity,
                command: t.command,
                config: t.config,
                grasp_id: a.map(|a| a.grasp_id),
                tau: a.map(|a| a.tau),
                alpha: a.map(|a| a.alpha),
                u_star: a.map(|a| a.u_star),
                costs: a
                    .map(|a| ids.iter().zip(&a.costs).map(|(&grasp_id, &cost)| GraspCost { grasp_id, cost }).collect())
                    .unwrap_or_default(),
            }
        })
        .collect())
}

pub fn write_debug_dump<W: Write>(record: &TrialRecord, mut out: W) -> Result<(), SessionError> {
    for line in debug_lines(record)? {
        let text = serde_json::to_string(&line).map_err(|e| SessionError::Format(e.into()))?;
        writeln!(out, "{text}").map_err(|e| SessionError::Format(e.into()))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    /// First tick whose configuration or command differs from the record.
    pub divergence: Option<u64>,
    pub outcome: TrialOutcome,
}

impl ReplayReport {
    pub fn is_exact(&self, record: &TrialRecord) -> bool {
        self.divergence.is_none() && self.outcome == record.outcome
    }
}

/// Re-runs the logged inputs and compares every tick bit for bit.
pub fn replay(record: &TrialRecord) -> Result<ReplayReport, SessionError> {
    let mut session = Session::new(record.setup.clone())?;
    let mut divergence = None;
    for t in &record.ticks {
        let got = session.tick(t.input)?;
        if divergence.is_none() && (got.config != t.config || got.command != t.command) {
            divergence = Some(t.tick);
        }
    }
    Ok(ReplayReport { divergence, outcome: session.outcome() })
}
