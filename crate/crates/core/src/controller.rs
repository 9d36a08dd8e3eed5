//! Time-varying LQR gains along a plan, intent arbitration and blending.
//!
//! The plant is the kinematic gripper with state `(x, y, θ)` and planar
//! velocity input. Schedules are indexed by time-to-go τ like the plan they
//! belong to. The gain at τ drives the state from waypoint τ toward τ−1.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Matrix3x2, SMatrix, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::format::Versioned;
use crate::planner::TrajectoryPlan;
use crate::se2::{angle_diff, Pose2};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("schedules have mismatched lengths ({0})")]
    Shape(String),
    #[error("singular control Hessian at τ={tau}")]
    Singular { tau: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("no candidate trajectories")]
    NoCandidates,
    #[error("invalid controller parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerParams {
    /// Inverse of the assistance time scale (1/s).
    pub kappa: f64,
    /// Scale of the control cost relative to the state cost. `None` uses `dt²`,
    /// which makes one tick of velocity error cost the same as the
    /// displacement it produces.
    pub control_weight: Option<f64>,
    /// How far ahead the held operator input is extrapolated when scoring
    /// candidates (s).
    pub prediction_horizon: f64,
    /// Relative cost margin a challenger must beat the incumbent by.
    pub hysteresis_margin: f64,
    /// Consecutive ticks the margin must hold before switching.
    pub hysteresis_ticks: u32,
    /// Commanded speed limit (mm/s).
    pub velocity_limit: f64,
}

impl Default for ControllerParams {
    fn default() -> Self {
        Self {
            kappa: 1.0,
            control_weight: None,
            prediction_horizon: 0.5,
            hysteresis_margin: 0.05,
            hysteresis_ticks: 3,
            velocity_limit: 50.0,
        }
    }
}

impl ControllerParams {
    pub fn validate(&self) -> Result<(), ControllerError> {
        let ok = self.kappa > 0.0
            && self.prediction_horizon >= 0.0
            && self.hysteresis_margin >= 0.0
            && self.velocity_limit > 0.0
            && self.control_weight.is_none_or(|w| w > 0.0);
        if ok {
            Ok(())
        } else {
            Err(ControllerError::InvalidParams(format!("{self:?}")))
        }
    }
}

/// Input map: velocity drives position, heading is not actuated.
pub fn input_matrix() -> Matrix3x2<f64> {
    Matrix3x2::new(1.0, 0.0, 0.0, 1.0, 0.0, 0.0)
}

/// One step of the kinematic model.
pub fn plant_step(x: &Vector3<f64>, u: &Vector2<f64>, dt: f64) -> Vector3<f64> {
    x + input_matrix() * u * dt
}

/// State error `x - x_ref` with the heading difference wrapped.
pub fn state_error(x: &Pose2, reference: &Pose2) -> Vector3<f64> {
    Vector3::new(x.x - reference.x, x.y - reference.y, angle_diff(x.theta, reference.theta))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearizedDynamics {
    pub a: Matrix3<f64>,
    pub b: Matrix3x2<f64>,
}

/// Jacobians of [`plant_step`] at every waypoint of a plan. The model is
/// affine, so all entries coincide.
pub fn linearize(plan: &TrajectoryPlan) -> Vec<LinearizedDynamics> {
    let d = LinearizedDynamics { a: Matrix3::identity(), b: input_matrix() * plan.dt };
    vec![d; plan.waypoints.len()]
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostSchedule {
    pub q: Vec<Matrix3<f64>>,
    pub r: Vec<Matrix2<f64>>,
}

impl CostSchedule {
    /// Position and control weights decay as `exp(-τ·dt·κ)` with time-to-go;
    /// heading is weighted uniformly.
    pub fn exponential(len: usize, dt: f64, params: &ControllerParams) -> Self {
        let rho = params.control_weight.unwrap_or(dt * dt);
        let mut q = Vec::with_capacity(len);
        let mut r = Vec::with_capacity(len);
        for tau in 0..len {
            let e = (-(tau as f64) * dt * params.kappa).exp();
            q.push(Matrix3::from_diagonal(&Vector3::new(e, e, 1.0)));
            r.push(Matrix2::from_diagonal(&Vector2::new(rho * e, rho * e)));
        }
        Self { q, r }
    }
}

/// Backward Riccati recursion over time-to-go.
///
/// `a[τ]`, `b[τ]` map the state at τ to τ−1. `P(0) = Q(0)` and for τ ≥ 1
/// `K(τ) = (R(τ) + BᵀP(τ−1)B)⁻¹ BᵀP(τ−1)A`. The gain at τ = 0 reuses `P(0)`
/// so that a controller sitting on the goal still regulates.
#[allow(clippy::type_complexity)]
pub fn solve_riccati<const N: usize, const M: usize>(
    a: &[SMatrix<f64, N, N>],
    b: &[SMatrix<f64, N, M>],
    q: &[SMatrix<f64, N, N>],
    r: &[SMatrix<f64, M, M>],
) -> Result<(Vec<SMatrix<f64, N, N>>, Vec<SMatrix<f64, M, N>>), ControllerError> {
    let len = q.len();
    if len == 0 || a.len() != len || b.len() != len || r.len() != len {
        return Err(ControllerError::Shape(format!("a={} b={} q={} r={}", a.len(), b.len(), len, r.len())));
    }
    let gain = |p: &SMatrix<f64, N, N>, tau: usize| -> Result<SMatrix<f64, M, N>, ControllerError> {
        let h = r[tau] + b[tau].transpose() * p * b[tau];
        let hinv = h.try_inverse().ok_or(ControllerError::Singular { tau })?;
        Ok(hinv * b[tau].transpose() * p * a[tau])
    };
    let mut ps = Vec::with_capacity(len);
    let mut ks = Vec::with_capacity(len);
    ps.push(q[0]);
    ks.push(gain(&q[0], 0)?);
    for tau in 1..len {
        let prev = ps[tau - 1];
        let k = gain(&prev, tau)?;
        let acl = a[tau] - b[tau] * k;
        let p = q[tau] + acl.transpose() * prev * acl + k.transpose() * r[tau] * k;
        let p = (p + p.transpose()) * 0.5;
        if !p.iter().all(|v| v.is_finite()) {
            return Err(ControllerError::NonFinite("cost-to-go"));
        }
        ps.push(p);
        ks.push(k);
    }
    Ok((ps, ks))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSchedule {
    pub grasp_id: u32,
    pub dt: f64,
    /// Row-major `K(τ)`, 2×3.
    pub k: Vec<[[f64; 3]; 2]>,
    /// Row-major `P(τ)`, 3×3.
    pub p: Vec<[[f64; 3]; 3]>,
}

impl Versioned for GainSchedule {
    const SCHEMA: &'static str = "gripassist.gains/1";
}

fn rows<const R: usize, const C: usize>(m: &SMatrix<f64, R, C>) -> [[f64; C]; R] {
    let mut out = [[0.0; C]; R];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = m[(i, j)];
        }
    }
    out
}

fn from_rows<const R: usize, const C: usize>(a: &[[f64; C]; R]) -> SMatrix<f64, R, C> {
    SMatrix::from_fn(|i, j| a[i][j])
}

impl GainSchedule {
    pub fn gain(&self, tau: usize) -> Matrix2x3<f64> {
        from_rows(&self.k[tau.min(self.k.len() - 1)])
    }

    pub fn cost_to_go(&self, tau: usize) -> Matrix3<f64> {
        from_rows(&self.p[tau.min(self.p.len() - 1)])
    }
}

pub fn solve_gains(plan: &TrajectoryPlan, cost: &CostSchedule) -> Result<GainSchedule, ControllerError> {
    let dynamics = linearize(plan);
    let a: Vec<_> = dynamics.iter().map(|d| d.a).collect();
    let b: Vec<_> = dynamics.iter().map(|d| d.b).collect();
    let (p, k) = solve_riccati(&a, &b, &cost.q, &cost.r)?;
    Ok(GainSchedule {
        grasp_id: plan.grasp.id,
        dt: plan.dt,
        k: k.iter().map(rows).collect(),
        p: p.iter().map(rows).collect(),
    })
}

/// A plan with its cost and gain schedules.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanController {
    pub plan: TrajectoryPlan,
    pub cost: CostSchedule,
    pub gains: GainSchedule,
}

impl PlanController {
    pub fn new(plan: TrajectoryPlan, params: &ControllerParams) -> Result<Self, ControllerError> {
        params.validate()?;
        let cost = CostSchedule::exponential(plan.waypoints.len(), plan.dt, params);
        let gains = solve_gains(&plan, &cost)?;
        Ok(Self { plan, cost, gains })
    }

    pub fn grasp_id(&self) -> u32 {
        self.plan.grasp.id
    }

    /// Predicted-deviation cost of the operator input `u` at state `x`
    /// against this plan at time-to-go `tau`.
    pub fn intent_cost(&self, x: &Pose2, u: [f64; 2], tau: usize, horizon: f64) -> f64 {
        let w = self.plan.waypoint(tau).pose;
        let ug = self.plan.control(tau);
        let du = Vector2::new(u[0] - ug[0], u[1] - ug[1]);
        let xhat = state_error(x, &w) + input_matrix() * du * horizon;
        let tau = tau.min(self.plan.horizon());
        (xhat.transpose() * self.cost.q[tau] * xhat)[0] + (du.transpose() * self.cost.r[tau] * du)[0]
    }

    /// Tracking command `u_g(τ) − K(τ)(x − x_g(τ))`.
    pub fn tracking_command(&self, x: &Pose2, tau: usize) -> [f64; 2] {
        let e = state_error(x, &self.plan.waypoint(tau).pose);
        let ug = self.plan.control(tau);
        let fb = self.gains.gain(tau) * e;
        [ug[0] - fb[0], ug[1] - fb[1]]
    }
}

/// Blend weight toward the assistance command at time-to-go `tau`.
pub fn blend_weight(tau: usize, dt: f64, kappa: f64) -> f64 {
    (-(tau as f64) * dt * kappa).exp()
}

/// Scales `u` down to the speed limit, keeping its direction.
pub fn saturate(u: [f64; 2], limit: f64) -> [f64; 2] {
    let n = u[0].hypot(u[1]);
    if n > limit && n > 0.0 {
        [u[0] * limit / n, u[1] * limit / n]
    } else {
        u
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateCost {
    pub grasp_id: u32,
    pub tau: usize,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssistOutput {
    /// Index of the selected controller.
    pub selected: usize,
    pub grasp_id: u32,
    pub tau: usize,
    pub alpha: f64,
    pub u_star: [f64; 2],
    pub command: [f64; 2],
    /// Heading and aperture of the selected plan at τ.
    pub theta: f64,
    pub aperture: f64,
    pub costs: Vec<CandidateCost>,
}

/// Index of the lowest cost, ties to the lowest grasp id.
pub fn argmin_cost(costs: &[CandidateCost]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, c) in costs.iter().enumerate() {
        best = match best {
            None => Some(i),
            Some(j) => {
                let b = &costs[j];
                if c.cost < b.cost || (c.cost == b.cost && c.grasp_id < b.grasp_id) {
                    Some(i)
                } else {
                    Some(j)
                }
            }
        };
    }
    best
}

/// Greedy intent arbitration with hysteresis, plus the per-plan τ memory.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Arbiter {
    taus: Vec<usize>,
    incumbent: Option<usize>,
    challenger: Option<(usize, u32)>,
}

impl Arbiter {
    pub fn new(controllers: &[PlanController]) -> Self {
        Self { taus: controllers.iter().map(|c| c.plan.horizon()).collect(), incumbent: None, challenger: None }
    }

    pub fn incumbent(&self) -> Option<usize> {
        self.incumbent
    }

    /// Scores every candidate, updates the selection and returns the blended
    /// and saturated command.
    pub fn step(
        &mut self,
        x: &Pose2,
        u: [f64; 2],
        controllers: &[PlanController],
        params: &ControllerParams,
    ) -> Result<AssistOutput, ControllerError> {
        if controllers.is_empty() {
            return Err(ControllerError::NoCandidates);
        }
        if self.taus.len() != controllers.len() {
            *self = Self::new(controllers);
        }
        let mut costs = Vec::with_capacity(controllers.len());
        for (i, c) in controllers.iter().enumerate() {
            let tau = c.plan.nearest_waypoint(x.position(), self.taus[i]);
            self.taus[i] = tau;
            costs.push(CandidateCost {
                grasp_id: c.grasp_id(),
                tau,
                cost: c.intent_cost(x, u, tau, params.prediction_horizon),
            });
        }
        let best = argmin_cost(&costs).expect("non-empty");
        let selected = match self.incumbent {
            None => best,
            Some(inc) if inc == best => {
                self.challenger = None;
                inc
            }
            Some(inc) => {
                let beats = costs[best].cost < (1.0 - params.hysteresis_margin) * costs[inc].cost;
                if !beats {
                    self.challenger = None;
                    inc
                } else {
                    let count = match self.challenger {
                        Some((c, n)) if c == best => n + 1,
                        _ => 1,
                    };
                    if count >= params.hysteresis_ticks.max(1) {
                        self.challenger = None;
                        best
                    } else {
                        self.challenger = Some((best, count));
                        inc
                    }
                }
            }
        };
        self.incumbent = Some(selected);
        let c = &controllers[selected];
        let tau = costs[selected].tau;
        let u_star = c.tracking_command(x, tau);
        let alpha = blend_weight(tau, c.plan.dt, params.kappa);
        let blended = [alpha * u_star[0] + (1.0 - alpha) * u[0], alpha * u_star[1] + (1.0 - alpha) * u[1]];
        let w = c.plan.waypoint(tau);
        Ok(AssistOutput {
            selected,
            grasp_id: c.grasp_id(),
            tau,
            alpha,
            u_star,
            command: saturate(blended, params.velocity_limit),
            theta: w.pose.theta,
            aperture: w.aperture,
            costs,
        })
    }
}
