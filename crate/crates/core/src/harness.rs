//! Batch experiments: synthetic operators, paired manual/assisted trials,
//! summary statistics and plot data.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::controller::{saturate, ControllerParams};
use crate::density::{
    build_query_density, learn_contact_model, pinch_demo, sample_grasps, CandidateGrasp, ContactModel, ContactParams,
    DensityError, GripperConfig, GripperModel, QueryParams, SampleParams,
};
use crate::format::{FormatError, Versioned};
use crate::planner::{plan_trajectory, PlanParams, TrajectoryPlan};
use crate::scene::{extract_features, generate_scene, FeatureParams, SceneError, SceneParams};
use crate::se2::Pose2;
use crate::sim::{
    ApertureKey, Mode, OperatorInput, Session, SessionError, SessionSetup, SimParams, TrialMeta, TrialRecord,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("no trials to summarize")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OperatorKind {
    /// Emits the target plan's nominal control.
    Oracle,
    /// Proportional pursuit of the target with Gaussian velocity noise.
    NoisyProportional,
    /// Pursues the decoy for `distract_ticks`, then the target.
    DistractedThenCorrects { distract_ticks: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OperatorSpec {
    #[serde(flatten)]
    pub kind: OperatorKind,
    /// Proportional gain (1/s).
    pub gain: f64,
    /// Per-axis velocity noise (mm/s).
    pub noise_std: f64,
    pub reaction_delay: u64,
    /// Distance below which the operator starts closing the fingers (mm).
    pub close_radius: f64,
    /// Extra opening on each side kept while approaching (mm).
    pub preshape_margin: f64,
}

impl Default for OperatorSpec {
    fn default() -> Self {
        Self {
            kind: OperatorKind::NoisyProportional,
            gain: 2.0,
            noise_std: 15.0,
            reaction_delay: 0,
            close_radius: 3.0,
            preshape_margin: 8.0,
        }
    }
}

impl OperatorSpec {
    pub fn name(&self) -> &'static str {
        match self.kind {
            OperatorKind::Oracle => "oracle",
            OperatorKind::NoisyProportional => "noisy-proportional",
            OperatorKind::DistractedThenCorrects { .. } => "distracted-then-corrects",
        }
    }
}

/// What an operator sees each tick.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub tick: u64,
    pub config: &'a GripperConfig,
    pub target: &'a CandidateGrasp,
    pub decoy: Option<&'a CandidateGrasp>,
    pub velocity_limit: f64,
}

pub struct SyntheticOperator {
    spec: OperatorSpec,
    rng: ChaCha8Rng,
    noise: Normal<f64>,
    plan: Option<TrajectoryPlan>,
    tau: usize,
    pending: VecDeque<OperatorInput>,
}

impl SyntheticOperator {
    /// `plan` is required by the oracle and ignored by the other kinds.
    pub fn new(spec: OperatorSpec, seed: u64, plan: Option<TrajectoryPlan>) -> Self {
        let tau = plan.as_ref().map_or(0, |p| p.horizon());
        Self {
            spec,
            rng: ChaCha8Rng::seed_from_u64(seed),
            noise: Normal::new(0.0, spec.noise_std.max(0.0)).expect("finite std"),
            plan,
            tau,
            pending: VecDeque::new(),
        }
    }

    pub fn spec(&self) -> &OperatorSpec {
        &self.spec
    }

    /// The grasp the operator currently steers toward.
    pub fn aim<'a>(&self, obs: &Observation<'a>) -> &'a CandidateGrasp {
        match self.spec.kind {
            OperatorKind::DistractedThenCorrects { distract_ticks } if obs.tick < distract_ticks => {
                obs.decoy.unwrap_or(obs.target)
            }
            _ => obs.target,
        }
    }

    fn aperture_key(&self, cfg: &GripperConfig, goal: &CandidateGrasp) -> ApertureKey {
        let dist = cfg.pose.distance(&goal.pose);
        if dist <= self.spec.close_radius {
            return ApertureKey::Close;
        }
        let pre = goal.aperture + 2.0 * self.spec.preshape_margin;
        if cfg.aperture < pre - 1.0 {
            ApertureKey::Open
        } else if cfg.aperture > pre + 1.0 {
            ApertureKey::Close
        } else {
            ApertureKey::Hold
        }
    }

    fn fresh(&mut self, obs: &Observation) -> OperatorInput {
        let goal = self.aim(obs);
        let aperture = self.aperture_key(obs.config, goal);
        let velocity = match (self.spec.kind, &self.plan) {
            (OperatorKind::Oracle, Some(plan)) => {
                self.tau = plan.nearest_waypoint(obs.config.pose.position(), self.tau);
                plan.control(self.tau)
            }
            _ => {
                let e = [goal.pose.x - obs.config.pose.x, goal.pose.y - obs.config.pose.y];
                let u = saturate([self.spec.gain * e[0], self.spec.gain * e[1]], obs.velocity_limit);
                let n = [self.noise.sample(&mut self.rng), self.noise.sample(&mut self.rng)];
                [u[0] + n[0], u[1] + n[1]]
            }
        };
        OperatorInput { velocity, aperture }
    }

    pub fn command(&mut self, obs: &Observation) -> OperatorInput {
        let input = self.fresh(obs);
        if self.spec.reaction_delay == 0 {
            return input;
        }
        self.pending.push_back(input);
        if self.pending.len() as u64 > self.spec.reaction_delay {
            self.pending.pop_front().unwrap_or_default()
        } else {
            OperatorInput::default()
        }
    }
}

/// Runs one session to completion or the tick cap.
pub fn run_session(
    setup: SessionSetup,
    operator: &mut SyntheticOperator,
    decoy: Option<CandidateGrasp>,
    meta: TrialMeta,
) -> Result<TrialRecord, SessionError> {
    let mut session = Session::new(setup)?;
    let target = session.setup().target;
    let limit = session.setup().controller.velocity_limit;
    let mut ticks = Vec::new();
    while !session.is_finished() {
        let cfg = *session.config();
        let obs = Observation {
            tick: session.tick_count(),
            config: &cfg,
            target: &target,
            decoy: decoy.as_ref(),
            velocity_limit: limit,
        };
        let input = operator.command(&obs);
        ticks.push(session.tick(input)?);
    }
    Ok(TrialRecord { meta, setup: session.setup().clone(), ticks, outcome: session.outcome() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub n_trials: u64,
    pub seed: u64,
    pub modes: Vec<Mode>,
    pub operator: OperatorSpec,
    pub scene: SceneParams,
    pub features: FeatureParams,
    pub gripper: GripperModel,
    pub contact: ContactParams,
    pub query: QueryParams,
    pub sampling: SampleParams,
    pub plan: PlanParams,
    pub controller: ControllerParams,
    pub sim: SimParams,
    /// Start height above the tallest object (mm).
    pub start_clearance: f64,
    /// Largest horizontal offset of the start from the target grasp (mm).
    pub start_spread: f64,
    pub start_aperture: f64,
    /// The CLI fails when more trials than this fraction are infeasible.
    pub max_infeasible_rate: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_trials: 20,
            seed: 1,
            modes: vec![Mode::Manual, Mode::Assisted],
            operator: OperatorSpec::default(),
            scene: SceneParams::default(),
            features: FeatureParams::default(),
            gripper: GripperModel::default(),
            contact: ContactParams::default(),
            query: QueryParams::default(),
            sampling: SampleParams::default(),
            plan: PlanParams::default(),
            controller: ControllerParams::default(),
            sim: SimParams::default(),
            start_clearance: 60.0,
            start_spread: 30.0,
            start_aperture: 40.0,
            max_infeasible_rate: 0.25,
        }
    }
}

impl Versioned for ExperimentConfig {
    const SCHEMA: &'static str = "gripassist.experiment/1";
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::InvalidConfig(m.into()));
        if self.modes.is_empty() {
            return bad("modes must not be empty");
        }
        if !(self.start_clearance > 0.0) {
            return bad("start_clearance must be positive");
        }
        if !(0.0..=1.0).contains(&self.max_infeasible_rate) {
            return bad("max_infeasible_rate must lie in [0, 1]");
        }
        if !(self.sim.dt > 0.0) || self.sim.max_ticks == 0 {
            return bad("sim.dt and sim.max_ticks must be positive");
        }
        if !(self.operator.noise_std >= 0.0 && self.operator.gain > 0.0) {
            return bad("operator gain must be positive and noise_std non-negative");
        }
        self.controller.validate().map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
        self.gripper.validate()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding, hex.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Independent stream per trial and purpose.
pub fn derive_seed(seed: u64, trial: u64, purpose: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial.wrapping_mul(16).wrapping_add(purpose));
    rng.random()
}

/// Contact model learned from the built-in pinch demonstration.
pub fn demo_contact_model(cfg: &ExperimentConfig) -> Result<ContactModel, HarnessError> {
    let (scene, grasp) = pinch_demo();
    let cloud = extract_features(&scene, &cfg.features)?;
    Ok(learn_contact_model(&cloud, &grasp, &cfg.gripper, &cfg.contact)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum TrialResult {
    Feasible { trial: u64, scene_seed: u64, target_object: u32, records: Vec<TrialRecord> },
    Infeasible { trial: u64, scene_seed: u64, reason: String },
}

/// Everything a trial needs apart from the mode.
pub struct TrialPlan {
    pub setup: SessionSetup,
    pub decoy: Option<CandidateGrasp>,
    pub target_plan: TrajectoryPlan,
}

/// Builds the scene, candidates and target for one trial. `Ok(Err(reason))`
/// marks an infeasible trial.
pub fn prepare_trial(
    cfg: &ExperimentConfig,
    model: &ContactModel,
    trial: u64,
) -> Result<Result<TrialPlan, String>, HarnessError> {
    let scene_seed = derive_seed(cfg.seed, trial, 0);
    let scene = match generate_scene(scene_seed, &cfg.scene) {
        Ok(s) => s,
        Err(e @ SceneError::Generation { .. }) => return Ok(Err(e.to_string())),
        Err(e) => return Err(e.into()),
    };
    let cloud = extract_features(&scene, &cfg.features)?;
    let mut pick = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, trial, 1));
    let target_object = scene.objects[pick.random_range(0..scene.objects.len())].id;
    let candidates = match build_query_density(model, &cloud, &cfg.query)
        .and_then(|qd| sample_grasps(&qd, &cfg.gripper, &scene, &cfg.sampling, derive_seed(cfg.seed, trial, 2)))
    {
        Ok(c) => c,
        Err(e) => return Ok(Err(format!("grasp sampling failed: {e}"))),
    };
    let plan_params = PlanParams { dt: cfg.sim.dt, ..cfg.plan };
    let shift = pick.random_range(-1.0..=1.0) * cfg.start_spread;
    let mut target = None;
    for g in candidates.iter().filter(|g| g.object_id == target_object) {
        let x = (g.pose.x + shift).clamp(0.0, scene.width);
        let start = GripperConfig {
            pose: Pose2::new(x, scene.skyline_top() + cfg.start_clearance, 0.0),
            aperture: cfg.gripper.clamp_aperture(cfg.start_aperture),
        };
        if let Ok(plan) = plan_trajectory(&start, g, &scene, &cfg.gripper, &plan_params) {
            target = Some((*g, plan, start));
            break;
        }
    }
    let Some((target, target_plan, start)) = target else {
        return Ok(Err(format!("no plannable candidate on object {target_object}")));
    };
    let decoy = candidates
        .iter()
        .find(|g| g.object_id != target_object)
        .or_else(|| candidates.iter().find(|g| g.id != target.id))
        .copied();
    let setup = SessionSetup {
        scene,
        gripper: cfg.gripper,
        candidates,
        target,
        start,
        mode: Mode::Manual,
        plan: plan_params,
        controller: cfg.controller,
        sim: cfg.sim,
    };
    Ok(Ok(TrialPlan { setup, decoy, target_plan }))
}

pub fn run_trial(cfg: &ExperimentConfig, model: &ContactModel, trial: u64) -> Result<TrialResult, HarnessError> {
    let scene_seed = derive_seed(cfg.seed, trial, 0);
    let tp = match prepare_trial(cfg, model, trial)? {
        Ok(tp) => tp,
        Err(reason) => return Ok(TrialResult::Infeasible { trial, scene_seed, reason }),
    };
    let hash = cfg.hash();
    let mut records = Vec::with_capacity(cfg.modes.len());
    for &mode in &cfg.modes {
        let setup = SessionSetup { mode, ..tp.setup.clone() };
        // same operator seed in every mode keeps the comparison paired
        let mut op =
            SyntheticOperator::new(cfg.operator, derive_seed(cfg.seed, trial, 3), Some(tp.target_plan.clone()));
        let meta = TrialMeta { trial, operator: cfg.operator.name().into(), config_hash: hash.clone(), scene_seed };
        match run_session(setup, &mut op, tp.decoy, meta) {
            Ok(r) => records.push(r),
            Err(SessionError::NoFeasiblePlan) => {
                return Ok(TrialResult::Infeasible { trial, scene_seed, reason: "no plannable candidate".into() })
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(TrialResult::Feasible { trial, scene_seed, target_object: tp.setup.target.object_id, records })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Stats {
        let n = values.len() as f64;
        if values.is_empty() {
            return Stats { mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Stats { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: Mode,
    pub trials: usize,
    pub successes: usize,
    pub penetration_events: u64,
    pub position_error: Stats,
    pub execution_time: Stats,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedSummary {
    pub pairs: usize,
    /// Fraction of pairs where assisted had the smaller position error.
    pub error_assisted_better: f64,
    /// Fraction of pairs where assisted finished sooner.
    pub time_assisted_better: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub config_hash: String,
    pub n_trials: u64,
    pub infeasible: u64,
    pub infeasible_rate: f64,
    pub modes: Vec<ModeSummary>,
    pub paired: Option<PairedSummary>,
}

impl Versioned for ExperimentSummary {
    const SCHEMA: &'static str = "gripassist.summary/1";
}

impl ExperimentSummary {
    pub fn mode(&self, mode: Mode) -> Option<&ModeSummary> {
        self.modes.iter().find(|m| m.mode == mode)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub summary: ExperimentSummary,
    pub trials: Vec<TrialResult>,
}

impl ExperimentResult {
    pub fn records(&self) -> impl Iterator<Item = &TrialRecord> {
        self.trials.iter().flat_map(|t| match t {
            TrialResult::Feasible { records, .. } => records.as_slice(),
            TrialResult::Infeasible { .. } => &[],
        })
    }

    /// Per-mode metric values in trial order.
    pub fn values(&self, mode: Mode, metric: Metric) -> Vec<f64> {
        self.records().filter(|r| r.setup.mode == mode).map(|r| metric.of(r)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    PositionError,
    ExecutionTime,
}

impl Metric {
    pub fn of(&self, r: &TrialRecord) -> f64 {
        match self {
            Metric::PositionError => r.outcome.position_error,
            Metric::ExecutionTime => r.outcome.execution_time,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Metric::PositionError => "position-error",
            Metric::ExecutionTime => "execution-time",
        }
    }

    pub fn unit(&self) -> &'static str {
        match self {
            Metric::PositionError => "mm",
            Metric::ExecutionTime => "s",
        }
    }
}

pub fn summarize(cfg: &ExperimentConfig, trials: &[TrialResult]) -> ExperimentSummary {
    let infeasible = trials.iter().filter(|t| matches!(t, TrialResult::Infeasible { .. })).count() as u64;
    let records: Vec<&TrialRecord> = trials
        .iter()
        .flat_map(|t| match t {
            TrialResult::Feasible { records, .. } => records.iter().collect::<Vec<_>>(),
            TrialResult::Infeasible { .. } => vec![],
        })
        .collect();
    let modes = cfg
        .modes
        .iter()
        .map(|&mode| {
            let rs: Vec<_> = records.iter().filter(|r| r.setup.mode == mode).collect();
            let err: Vec<f64> = rs.iter().map(|r| r.outcome.position_error).collect();
            let time: Vec<f64> = rs.iter().map(|r| r.outcome.execution_time).collect();
            ModeSummary {
                mode,
                trials: rs.len(),
                successes: rs.iter().filter(|r| r.outcome.success).count(),
                penetration_events: rs.iter().map(|r| r.outcome.penetration_events as u64).sum(),
                position_error: Stats::of(&err),
                execution_time: Stats::of(&time),
            }
        })
        .collect();
    let mut pairs = 0usize;
    let (mut err_better, mut time_better) = (0usize, 0usize);
    for t in trials {
        if let TrialResult::Feasible { records, .. } = t {
            let m = records.iter().find(|r| r.setup.mode == Mode::Manual);
            let a = records.iter().find(|r| r.setup.mode == Mode::Assisted);
            if let (Some(m), Some(a)) = (m, a) {
                pairs += 1;
                err_better += (a.outcome.position_error < m.outcome.position_error) as usize;
                time_better += (a.outcome.execution_time < m.outcome.execution_time) as usize;
            }
        }
    }
    let paired = (pairs > 0).then(|| PairedSummary {
        pairs,
        error_assisted_better: err_better as f64 / pairs as f64,
        time_assisted_better: time_better as f64 / pairs as f64,
    });
    ExperimentSummary {
        config_hash: cfg.hash(),
        n_trials: cfg.n_trials,
        infeasible,
        infeasible_rate: if cfg.n_trials == 0 { 0.0 } else { infeasible as f64 / cfg.n_trials as f64 },
        modes,
        paired,
    }
}

/// Runs every trial in parallel; results are keyed by trial index so the
/// summary does not depend on scheduling.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    cfg.validate()?;
    let model = demo_contact_model(cfg)?;
    let trials = (0..cfg.n_trials).into_par_iter().map(|i| run_trial(cfg, &model, i)).collect::<Result<Vec<_>, _>>()?;
    let summary = summarize(cfg, &trials);
    Ok(ExperimentResult { summary, trials })
}

/// Box-plot data for one metric and mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDistribution {
    pub mode: Mode,
    pub metric: Metric,
    pub unit: String,
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub lower_fence: f64,
    pub upper_fence: f64,
    pub outliers: Vec<f64>,
}

impl Versioned for MetricDistribution {
    const SCHEMA: &'static str = "gripassist.plot/1";
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (h - lo as f64)
}

pub fn distribution(mode: Mode, metric: Metric, values: &[f64]) -> Result<MetricDistribution, HarnessError> {
    if values.is_empty() {
        return Err(HarnessError::Empty);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let stats = Stats::of(values);
    let q1 = quantile(&sorted, 0.25);
    let q3 = quantile(&sorted, 0.75);
    let iqr = q3 - q1;
    let (lower_fence, upper_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    Ok(MetricDistribution {
        mode,
        metric,
        unit: metric.unit().into(),
        values: values.to_vec(),
        mean: stats.mean,
        std: stats.std,
        q1,
        median: quantile(&sorted, 0.5),
        q3,
        lower_fence,
        upper_fence,
        outliers: values.iter().copied().filter(|v| *v < lower_fence || *v > upper_fence).collect(),
    })
}

/// Writes one `plot-<metric>-<mode>.json` per metric and mode.
pub fn emit_plot_data(result: &ExperimentResult, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut written = Vec::new();
    for m in &result.summary.modes {
        for metric in [Metric::PositionError, Metric::ExecutionTime] {
            let values = result.values(m.mode, metric);
            if values.is_empty() {
                continue;
            }
            let d = distribution(m.mode, metric, &values)?;
            let path = dir.join(format!("plot-{}-{}.json", metric.name(), m.mode));
            crate::format::save(&d, &path)?;
            written.push(path);
        }
    }
    if written.is_empty() {
        return Err(HarnessError::Empty);
    }
    Ok(written)
}
