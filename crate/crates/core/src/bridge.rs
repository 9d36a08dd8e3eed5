//! Live session service for the operator console.
//!
//! [`BridgeSession`] is the whole protocol state machine and is driven
//! synchronously, which is what the golden transcript test exercises.
//! [`Server`] wraps it in a WebSocket accept loop with one thread per
//! connection. The wire format is described in `docs/protocol.md`.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, ErrorKind};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tungstenite::{Message, WebSocket};

use crate::density::{CandidateGrasp, ContactModel, GripperConfig, GripperModel};
use crate::harness::{demo_contact_model, derive_seed, prepare_trial, ExperimentConfig, HarnessError};
use crate::planner::Waypoint;
use crate::scene::Landscape;
use crate::se2::Pose2;
use crate::sim::{
    write_trial, ApertureKey, GraspCost, Mode, OperatorInput, Session, SessionError, TickRecord, TrialMeta, TrialRecord,
};

pub const PROTOCOL: &str = "gripassist.bridge/1";
/// Environment variable that overrides the bind address of `serve`.
pub const BIND_ENV: &str = "GRIPASSIST_BIND";
/// Scene indices tried before a new-scene request gives up.
const SCENE_ATTEMPTS: u64 = 32;

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("no feasible scene in {attempts} attempts from index {from}")]
    NoScene { from: u64, attempts: u64 },
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    WebSocket(#[from] tungstenite::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientMessage {
    pub protocol: String,
    pub seq: u64,
    #[serde(flatten)]
    pub body: ClientBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientBody {
    /// A key went down or up. Keys are the numpad digits and `+`/`-` for the fingers.
    Key {
        key: String,
        down: bool,
    },
    ToggleMode,
    /// Start over on a fresh scene; `trial` picks a specific scene index.
    NewScene {
        #[serde(default)]
        trial: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Frame(Box<Frame>),
    Error(ErrorFrame),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorFrame {
    pub protocol: String,
    pub tick: u64,
    pub seq: Option<u64>,
    pub message: String,
}

/// Complete view of the session at one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub protocol: String,
    pub tick: u64,
    /// Sequence numbers of client messages handled since the previous frame.
    pub acks: Vec<u64>,
    pub trial: TrialStatus,
    pub scene: Landscape,
    pub gripper: GripperView,
    pub target: CandidateGrasp,
    pub candidates: Vec<CandidateGrasp>,
    pub input: InputView,
    /// Velocity sent to the plant on this tick.
    pub command: [f64; 2],
    pub assist: Option<AssistView>,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialStatus {
    pub index: u64,
    pub scene_seed: u64,
    pub mode: Mode,
    /// Ticks simulated in this trial.
    pub tick: u64,
    pub finished: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GripperView {
    pub model: GripperModel,
    pub config: GripperConfig,
    pub links: [Pose2; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputView {
    pub keys: Vec<String>,
    pub velocity: [f64; 2],
    pub aperture: ApertureKey,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssistView {
    pub grasp_id: u32,
    pub tau: usize,
    pub alpha: f64,
    /// Remaining waypoints of the selected plan, from the current one down to the grasp.
    pub ghost: Vec<Waypoint>,
    pub costs: Vec<GraspCost>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Seconds since the trial started.
    pub elapsed: f64,
    pub execution_time: f64,
    pub position_error: f64,
    pub penetration_events: u32,
    pub success: bool,
}

/// Unit direction for a set of held numpad keys, or zero.
///
/// Each digit contributes its cardinal components; opposite keys cancel.
pub fn compose_direction<'a>(keys: impl IntoIterator<Item = &'a str>) -> [f64; 2] {
    let (mut sx, mut sy) = (0i32, 0i32);
    for k in keys {
        let (dx, dy) = match k {
            "1" => (-1, -1),
            "2" => (0, -1),
            "3" => (1, -1),
            "4" => (-1, 0),
            "6" => (1, 0),
            "7" => (-1, 1),
            "8" => (0, 1),
            "9" => (1, 1),
            _ => (0, 0),
        };
        sx += dx;
        sy += dy;
    }
    let d = [sx.signum() as f64, sy.signum() as f64];
    let n = d[0].hypot(d[1]);
    if n == 0.0 {
        [0.0, 0.0]
    } else {
        [d[0] / n, d[1] / n]
    }
}

fn is_known_key(k: &str) -> bool {
    matches!(k, "1" | "2" | "3" | "4" | "6" | "7" | "8" | "9" | "+" | "-")
}

/// Where finished and aborted trials are written.
#[derive(Debug, Clone, Default)]
pub struct BridgeConfig {
    pub experiment: ExperimentConfig,
    pub out_dir: Option<PathBuf>,
    /// Scene index of the first trial.
    pub first_trial: u64,
}

struct Trial {
    index: u64,
    scene_seed: u64,
    session: Session,
    ticks: Vec<TickRecord>,
    archived: bool,
}

pub struct BridgeSession {
    cfg: Arc<BridgeConfig>,
    model: Arc<ContactModel>,
    tick: u64,
    mode: Mode,
    trial: Trial,
    held: BTreeSet<String>,
    acks: Vec<u64>,
    outbox: Vec<ServerMessage>,
    last: Option<TickRecord>,
    config_hash: String,
}

impl BridgeSession {
    pub fn new(cfg: Arc<BridgeConfig>, model: Arc<ContactModel>) -> Result<Self, BridgeError> {
        let mode = cfg.experiment.modes.first().copied().unwrap_or(Mode::Manual);
        let trial = find_trial(&cfg.experiment, &model, cfg.first_trial, mode, SCENE_ATTEMPTS)?;
        let config_hash = cfg.experiment.hash();
        Ok(Self {
            cfg,
            model,
            tick: 0,
            mode,
            trial,
            held: BTreeSet::new(),
            acks: Vec::new(),
            outbox: Vec::new(),
            last: None,
            config_hash,
        })
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Queues one client text message. Problems become error frames.
    pub fn receive(&mut self, text: &str) {
        let value: serde_json::Value = match serde_json::from_str(text) {
            Ok(v) => v,
            Err(e) => return self.reject(None, format!("malformed message: {e}")),
        };
        let seq = value.get("seq").and_then(|s| s.as_u64());
        let msg: ClientMessage = match serde_json::from_value(value) {
            Ok(m) => m,
            Err(e) => return self.reject(seq, format!("malformed message: {e}")),
        };
        if msg.protocol != PROTOCOL {
            return self.reject(seq, format!("unsupported protocol `{}`", msg.protocol));
        }
        let seq = Some(msg.seq);
        self.acks.push(msg.seq);
        match msg.body {
            ClientBody::Key { key, down } => {
                if !is_known_key(&key) {
                    return self.reject(seq, format!("unknown key `{key}`"));
                }
                if down {
                    self.held.insert(key);
                } else {
                    self.held.remove(&key);
                }
            }
            ClientBody::ToggleMode => {
                let mode = match self.mode {
                    Mode::Manual => Mode::Assisted,
                    Mode::Assisted => Mode::Manual,
                };
                if let Err(e) = self.restart(self.trial.index, mode, false) {
                    self.reject(seq, format!("mode change failed: {e}"));
                }
            }
            ClientBody::NewScene { trial } => {
                let index = trial.unwrap_or(self.trial.index + 1);
                if let Err(e) = self.restart(index, self.mode, true) {
                    self.reject(seq, format!("new scene failed: {e}"));
                }
            }
        }
    }

    fn reject(&mut self, seq: Option<u64>, message: String) {
        if let Some(s) = seq {
            if !self.acks.contains(&s) {
                self.acks.push(s);
            }
        }
        self.outbox.push(ServerMessage::Error(ErrorFrame { protocol: PROTOCOL.into(), tick: self.tick, seq, message }));
    }

    fn restart(&mut self, index: u64, mode: Mode, search: bool) -> Result<(), BridgeError> {
        let attempts = if search { SCENE_ATTEMPTS } else { 1 };
        let trial = find_trial(&self.cfg.experiment, &self.model, index, mode, attempts)?;
        self.archive(false);
        self.trial = trial;
        self.mode = mode;
        self.last = None;
        Ok(())
    }

    /// Current operator input from the held keys.
    pub fn input(&self) -> OperatorInput {
        let dir = compose_direction(self.held.iter().map(String::as_str));
        let v = self.cfg.experiment.controller.velocity_limit;
        let aperture = match (self.held.contains("+"), self.held.contains("-")) {
            (true, false) => ApertureKey::Open,
            (false, true) => ApertureKey::Close,
            _ => ApertureKey::Hold,
        };
        OperatorInput { velocity: [dir[0] * v, dir[1] * v], aperture }
    }

    /// Runs one tick and returns the queued error frames followed by the new frame.
    pub fn advance(&mut self) -> Vec<ServerMessage> {
        self.tick += 1;
        let input = self.input();
        if !self.trial.session.is_finished() {
            match self.trial.session.tick(input) {
                Ok(rec) => {
                    self.trial.ticks.push(rec.clone());
                    self.last = Some(rec);
                }
                Err(e) => self.reject(None, format!("simulation error: {e}")),
            }
            if self.trial.session.is_finished() {
                self.archive(false);
            }
        } else {
            self.last = None;
        }
        let frame = self.frame(input);
        let mut out = std::mem::take(&mut self.outbox);
        out.push(ServerMessage::Frame(Box::new(frame)));
        out
    }

    fn frame(&mut self, input: OperatorInput) -> Frame {
        let session = &self.trial.session;
        let setup = session.setup();
        let config = *session.config();
        let outcome = session.outcome();
        let assist = self.last.as_ref().and_then(|r| r.assist.as_ref()).map(|a| {
            let controllers = session.controllers();
            let ghost = controllers
                .iter()
                .find(|c| c.grasp_id() == a.grasp_id)
                .map(|c| c.plan.waypoints[..=a.tau].iter().rev().copied().collect())
                .unwrap_or_default();
            let costs =
                controllers.iter().zip(&a.costs).map(|(c, &cost)| GraspCost { grasp_id: c.grasp_id(), cost }).collect();
            AssistView { grasp_id: a.grasp_id, tau: a.tau, alpha: a.alpha, ghost, costs }
        });
        Frame {
            protocol: PROTOCOL.into(),
            tick: self.tick,
            acks: std::mem::take(&mut self.acks),
            trial: TrialStatus {
                index: self.trial.index,
                scene_seed: self.trial.scene_seed,
                mode: self.mode,
                tick: session.tick_count(),
                finished: session.is_finished(),
            },
            scene: setup.scene.clone(),
            gripper: GripperView { model: setup.gripper, config, links: setup.gripper.link_poses(&config) },
            target: setup.target,
            candidates: setup.candidates.clone(),
            input: InputView {
                keys: self.held.iter().cloned().collect(),
                velocity: input.velocity,
                aperture: input.aperture,
            },
            command: self.last.as_ref().map_or([0.0, 0.0], |r| r.command),
            assist,
            metrics: Metrics {
                elapsed: session.tick_count() as f64 * setup.sim.dt,
                execution_time: outcome.execution_time,
                position_error: outcome.position_error,
                penetration_events: outcome.penetration_events,
                success: outcome.success,
            },
        }
    }

    /// Ends the current trial early, e.g. on disconnect.
    pub fn abort(&mut self) {
        log::info!(
            "trial {} ({}) aborted after {} ticks",
            self.trial.index,
            self.mode,
            self.trial.session.tick_count()
        );
        self.archive(true);
    }

    fn archive(&mut self, aborted: bool) {
        if self.trial.archived || self.trial.ticks.is_empty() {
            return;
        }
        self.trial.archived = true;
        let Some(dir) = &self.cfg.out_dir else { return };
        let record = TrialRecord {
            meta: TrialMeta {
                trial: self.trial.index,
                operator: if aborted { "console-aborted".into() } else { "console".into() },
                config_hash: self.config_hash.clone(),
                scene_seed: self.trial.scene_seed,
            },
            setup: self.trial.session.setup().clone(),
            ticks: std::mem::take(&mut self.trial.ticks),
            outcome: self.trial.session.outcome(),
        };
        let path = dir.join(format!("console-{:06}-{}-t{}.jsonl", self.trial.index, self.mode, self.tick));
        let res = File::create(&path)
            .map_err(|e| SessionError::Format(e.into()))
            .and_then(|f| write_trial(&record, BufWriter::new(f)));
        match res {
            Ok(()) => log::info!("wrote {}", path.display()),
            Err(e) => log::error!("could not write {}: {e}", path.display()),
        }
    }
}

fn find_trial(
    cfg: &ExperimentConfig,
    model: &ContactModel,
    from: u64,
    mode: Mode,
    attempts: u64,
) -> Result<Trial, BridgeError> {
    for i in from..from + attempts {
        match open_trial(cfg, model, i, mode) {
            Err(BridgeError::NoScene { .. }) => continue,
            res => return res,
        }
    }
    Err(BridgeError::NoScene { from, attempts })
}

fn open_trial(cfg: &ExperimentConfig, model: &ContactModel, index: u64, mode: Mode) -> Result<Trial, BridgeError> {
    let tp = prepare_trial(cfg, model, index)?.map_err(|reason| {
        log::debug!("scene {index} skipped: {reason}");
        BridgeError::NoScene { from: index, attempts: 1 }
    })?;
    let session = Session::new(crate::sim::SessionSetup { mode, ..tp.setup })?;
    Ok(Trial { index, scene_seed: derive_seed(cfg.seed, index, 0), session, ticks: Vec::new(), archived: false })
}

pub struct Server {
    listener: TcpListener,
    cfg: Arc<BridgeConfig>,
    model: Arc<ContactModel>,
}

impl Server {
    pub fn bind(addr: &str, cfg: BridgeConfig) -> Result<Self, BridgeError> {
        cfg.experiment.validate()?;
        let model = Arc::new(demo_contact_model(&cfg.experiment)?);
        let listener = TcpListener::bind(addr)?;
        Ok(Self { listener, cfg: Arc::new(cfg), model })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, BridgeError> {
        Ok(self.listener.local_addr()?)
    }

    /// Accepts connections forever, one session thread each.
    pub fn run(self) -> Result<(), BridgeError> {
        for stream in self.listener.incoming() {
            let stream = match stream {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    continue;
                }
            };
            let cfg = Arc::clone(&self.cfg);
            let model = Arc::clone(&self.model);
            std::thread::spawn(move || {
                let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
                log::info!("{peer} connected");
                match serve_connection(stream, cfg, model) {
                    Ok(()) => log::info!("{peer} disconnected"),
                    Err(e) => log::warn!("{peer} session ended: {e}"),
                }
            });
        }
        Ok(())
    }
}

/// Bind address for `serve`: the environment override, else all interfaces on `port`.
pub fn bind_address(port: u16) -> String {
    std::env::var(BIND_ENV).ok().filter(|s| !s.is_empty()).unwrap_or_else(|| format!("0.0.0.0:{port}"))
}

pub fn serve_session(port: u16, cfg: BridgeConfig) -> Result<(), BridgeError> {
    let server = Server::bind(&bind_address(port), cfg)?;
    log::info!("listening on ws://{}", server.local_addr()?);
    server.run()
}

fn serve_connection(stream: TcpStream, cfg: Arc<BridgeConfig>, model: Arc<ContactModel>) -> Result<(), BridgeError> {
    stream.set_nodelay(true)?;
    let mut ws = tungstenite::accept(stream).map_err(|e| match e {
        tungstenite::HandshakeError::Failure(e) => BridgeError::WebSocket(e),
        tungstenite::HandshakeError::Interrupted(_) => BridgeError::Io(ErrorKind::WouldBlock.into()),
    })?;
    let mut session = match BridgeSession::new(cfg, model) {
        Ok(s) => s,
        Err(e) => {
            let msg = ServerMessage::Error(ErrorFrame {
                protocol: PROTOCOL.into(),
                tick: 0,
                seq: None,
                message: e.to_string(),
            });
            ws.send(Message::text(serde_json::to_string(&msg)?))?;
            ws.close(None)?;
            return Err(e);
        }
    };
    let period = Duration::from_secs_f64(session.cfg.experiment.sim.dt);
    let mut next = Instant::now() + period;
    loop {
        if let Err(e) = read_until(&mut ws, &mut session, next) {
            session.abort();
            return match e {
                BridgeError::WebSocket(tungstenite::Error::ConnectionClosed) => Ok(()),
                e => Err(e),
            };
        }
        for msg in session.advance() {
            if let Err(e) = ws.send(Message::text(serde_json::to_string(&msg)?)) {
                session.abort();
                return Err(e.into());
            }
        }
        next += period;
        let now = Instant::now();
        if next < now {
            // fell behind; keep the rate instead of bursting
            next = now;
        }
    }
}

fn read_until(
    ws: &mut WebSocket<TcpStream>,
    session: &mut BridgeSession,
    deadline: Instant,
) -> Result<(), BridgeError> {
    loop {
        let now = Instant::now();
        if now >= deadline {
            return Ok(());
        }
        ws.get_ref().set_read_timeout(Some(deadline - now))?;
        match ws.read() {
            Ok(Message::Text(t)) => session.receive(t.as_str()),
            Ok(Message::Binary(_)) => session.reject(None, "binary messages are not supported".into()),
            Ok(Message::Close(_)) => return Err(tungstenite::Error::ConnectionClosed.into()),
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                return Ok(())
            }
            Err(e) => return Err(e.into()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn close(a: [f64; 2], b: [f64; 2]) -> bool {
        (a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12
    }

    #[test]
    fn numpad_cardinals_and_diagonals() {
        let r = FRAC_1_SQRT_2;
        let cases: [(&[&str], [f64; 2]); 12] = [
            (&["8"], [0.0, 1.0]),
            (&["2"], [0.0, -1.0]),
            (&["4"], [-1.0, 0.0]),
            (&["6"], [1.0, 0.0]),
            (&["9"], [r, r]),
            (&["7"], [-r, r]),
            (&["1"], [-r, -r]),
            (&["3"], [r, -r]),
            (&["8", "6"], [r, r]),
            (&["8", "2"], [0.0, 0.0]),
            (&["8", "9"], [r, r]),
            (&[], [0.0, 0.0]),
        ];
        for (keys, want) in cases {
            let got = compose_direction(keys.iter().copied());
            assert!(close(got, want), "{keys:?}: {got:?}");
        }
    }

    #[test]
    fn diagonal_speed_matches_cardinal() {
        for k in ["1", "3", "7", "9"] {
            let d = compose_direction([k]);
            assert!((d[0].hypot(d[1]) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn client_message_shape() {
        let m: ClientMessage =
            serde_json::from_str(r#"{"protocol":"gripassist.bridge/1","seq":4,"type":"key","key":"8","down":true}"#)
                .unwrap();
        assert_eq!(m.seq, 4);
        assert_eq!(m.body, ClientBody::Key { key: "8".into(), down: true });
        let m: ClientMessage =
            serde_json::from_str(r#"{"protocol":"gripassist.bridge/1","seq":5,"type":"new_scene"}"#).unwrap();
        assert_eq!(m.body, ClientBody::NewScene { trial: None });
    }
}
