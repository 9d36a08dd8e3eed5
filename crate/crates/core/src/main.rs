use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gripassist::bridge::{serve_session, BridgeConfig};
use gripassist::controller::PlanController;
use gripassist::density::{build_query_density, learn_contact_model, pinch_demo, sample_grasps, ContactModel};
use gripassist::format::{self, Versioned};
use gripassist::harness::{
    demo_contact_model, derive_seed, emit_plot_data, prepare_trial, run_experiment, ExperimentConfig, TrialResult,
};
use gripassist::planner::{plan_trajectory, PlanParams};
use gripassist::scene::{extract_features, generate_scene, Landscape};
use gripassist::sim::{read_trial, replay, write_debug_dump, write_trial, TrialRecord};

#[derive(Parser)]
#[command(name = "gripassist", version, about = "Shared-control grasping in the plane")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON); defaults apply when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(short, long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(short, long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Learn the contact model from the built-in pinch demonstration.
    DemoLearn {
        #[command(flatten)]
        common: Common,
    },
    /// Sample candidate grasps on a scene and dump their plans and gains.
    SampleGrasps {
        #[command(flatten)]
        common: Common,
        /// Scene file; otherwise the scene of trial `--trial` is generated.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        trial: u64,
        /// Contact model from `demo-learn`; learned on the fly when omitted.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run a batch experiment with synthetic operators.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trials: Option<u64>,
        /// Also write per-tick debug dumps.
        #[arg(long)]
        debug: bool,
    },
    /// Re-run a logged trial and check it reproduces bit for bit.
    Replay {
        record: PathBuf,
        /// Write the per-tick debug dump here.
        #[arg(long)]
        debug: Option<PathBuf>,
    },
    /// Serve live sessions to the console over WebSocket.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(short, long, default_value_t = 8765)]
        port: u16,
        /// Scene index of each connection's first trial.
        #[arg(long, default_value_t = 0)]
        trial: u64,
    },
}

type Result<T> = std::result::Result<T, Box<dyn std::error::Error>>;

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => format::load::<ExperimentConfig>(p).map_err(|e| format!("{}: {e}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn save<T: Versioned>(value: &T, path: &Path) -> Result<()> {
    format::save(value, path)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn save_record(rec: &TrialRecord, dir: &Path, debug: Option<&Path>) -> Result<()> {
    let name = format!("trial-{:06}-{}", rec.meta.trial, rec.setup.mode);
    write_trial(rec, BufWriter::new(File::create(dir.join(format!("{name}.jsonl")))?))?;
    if let Some(d) = debug {
        write_debug_dump(rec, BufWriter::new(File::create(d.join(format!("{name}.debug.jsonl")))?))?;
    }
    Ok(())
}

fn demo_learn(common: &Common) -> Result<ExitCode> {
    let cfg = load_config(common)?;
    fs::create_dir_all(&common.out)?;
    let (scene, grasp) = pinch_demo();
    let cloud = extract_features(&scene, &cfg.features)?;
    let model = learn_contact_model(&cloud, &grasp, &cfg.gripper, &cfg.contact)?;
    save(&scene, &common.out.join("demo-scene.json"))?;
    save(&model, &common.out.join("contact-model.json"))?;
    for l in &model.links {
        println!("link {}: {} kernels, cutoff {:.2} mm", l.link, l.mixture.len(), l.cutoff);
    }
    Ok(ExitCode::SUCCESS)
}

fn sample(common: &Common, scene: Option<&Path>, trial: u64, model: Option<&Path>) -> Result<ExitCode> {
    let cfg = load_config(common)?;
    fs::create_dir_all(&common.out)?;
    let model: ContactModel = match model {
        Some(p) => format::load(p)?,
        None => demo_contact_model(&cfg)?,
    };
    let plan_params = PlanParams { dt: cfg.sim.dt, ..cfg.plan };
    let (scene, start) = match scene {
        Some(p) => {
            let scene: Landscape = format::load(p)?;
            let start = gripassist::density::GripperConfig {
                pose: gripassist::Pose2::new(scene.width / 2.0, scene.skyline_top() + cfg.start_clearance, 0.0),
                aperture: cfg.gripper.clamp_aperture(cfg.start_aperture),
            };
            (scene, start)
        }
        None => match prepare_trial(&cfg, &model, trial)? {
            Ok(tp) => (tp.setup.scene, tp.setup.start),
            Err(reason) => {
                let scene = generate_scene(derive_seed(cfg.seed, trial, 0), &cfg.scene)
                    .map_err(|e| format!("trial {trial}: {reason} ({e})"))?;
                log::warn!("trial {trial}: {reason}; planning from above the scene centre");
                let start = gripassist::density::GripperConfig {
                    pose: gripassist::Pose2::new(scene.width / 2.0, scene.skyline_top() + cfg.start_clearance, 0.0),
                    aperture: cfg.gripper.clamp_aperture(cfg.start_aperture),
                };
                (scene, start)
            }
        },
    };
    let cloud = extract_features(&scene, &cfg.features)?;
    let qd = build_query_density(&model, &cloud, &cfg.query)?;
    let grasps = sample_grasps(&qd, &cfg.gripper, &scene, &cfg.sampling, derive_seed(cfg.seed, trial, 2))?;
    save(&scene, &common.out.join("scene.json"))?;
    fs::write(common.out.join("grasps.json"), serde_json::to_string_pretty(&grasps)?)?;
    println!("{:>4} {:>9} {:>9} {:>8} {:>8} {:>6} {:>11}", "id", "x", "y", "theta", "a", "object", "score");
    for g in &grasps {
        println!(
            "{:>4} {:>9.3} {:>9.3} {:>8.4} {:>8.3} {:>6} {:>11.4e}",
            g.id, g.pose.x, g.pose.y, g.pose.theta, g.aperture, g.object_id, g.score
        );
        match plan_trajectory(&start, g, &scene, &cfg.gripper, &plan_params) {
            Ok(plan) => {
                let ctl = PlanController::new(plan, &cfg.controller)?;
                save(&ctl.plan, &common.out.join(format!("plan-{}.json", g.id)))?;
                save(&ctl.gains, &common.out.join(format!("gains-{}.json", g.id)))?;
            }
            Err(e) => log::warn!("grasp {}: {e}", g.id),
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn run(common: &Common, trials: Option<u64>, debug: bool) -> Result<ExitCode> {
    let mut cfg = load_config(common)?;
    if let Some(n) = trials {
        cfg.n_trials = n;
    }
    let trial_dir = common.out.join("trials");
    let plot_dir = common.out.join("plots");
    let debug_dir = common.out.join("debug");
    fs::create_dir_all(&trial_dir)?;
    fs::create_dir_all(&plot_dir)?;
    if debug {
        fs::create_dir_all(&debug_dir)?;
    }
    save(&cfg, &common.out.join("config.json"))?;
    let result = run_experiment(&cfg)?;
    for t in &result.trials {
        match t {
            TrialResult::Feasible { records, .. } => {
                for r in records {
                    save_record(r, &trial_dir, debug.then_some(debug_dir.as_path()))?;
                }
            }
            TrialResult::Infeasible { trial, reason, .. } => log::warn!("trial {trial} infeasible: {reason}"),
        }
    }
    fs::write(
        common.out.join("trials.json"),
        serde_json::to_string_pretty(
            &result
                .trials
                .iter()
                .map(|t| match t {
                    TrialResult::Feasible { trial, scene_seed, target_object, .. } => serde_json::json!({
                        "trial": trial, "status": "feasible", "scene_seed": scene_seed, "target_object": target_object
                    }),
                    TrialResult::Infeasible { trial, scene_seed, reason } => serde_json::json!({
                        "trial": trial, "status": "infeasible", "scene_seed": scene_seed, "reason": reason
                    }),
                })
                .collect::<Vec<_>>(),
        )?,
    )?;
    save(&result.summary, &common.out.join("summary.json"))?;
    if result.summary.modes.iter().all(|m| m.trials > 0) {
        emit_plot_data(&result, &plot_dir)?;
    }

    let s = &result.summary;
    println!("config {}", &s.config_hash[..16]);
    println!("trials {} ({} infeasible, {:.1}%)", s.n_trials, s.infeasible, 100.0 * s.infeasible_rate);
    for m in s.modes.iter().filter(|m| m.trials > 0) {
        println!(
            "{:<9} n={:<4} success={:<4} error {:.3} ± {:.3} mm  time {:.3} ± {:.3} s  penetrations {}",
            m.mode.to_string(),
            m.trials,
            m.successes,
            m.position_error.mean,
            m.position_error.std,
            m.execution_time.mean,
            m.execution_time.std,
            m.penetration_events
        );
    }
    if let Some(p) = &s.paired {
        println!(
            "paired: {} pairs, assisted better in error {:.0}%, in time {:.0}%",
            p.pairs,
            100.0 * p.error_assisted_better,
            100.0 * p.time_assisted_better
        );
    }
    if s.infeasible_rate > cfg.max_infeasible_rate {
        eprintln!(
            "infeasible rate {:.3} exceeds max_infeasible_rate {:.3}",
            s.infeasible_rate, cfg.max_infeasible_rate
        );
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn replay_cmd(path: &Path, debug: Option<&Path>) -> Result<ExitCode> {
    let record = read_trial(BufReader::new(File::open(path)?))?;
    let report = replay(&record)?;
    if let Some(d) = debug {
        write_debug_dump(&record, BufWriter::new(File::create(d)?))?;
    }
    let o = &report.outcome;
    println!(
        "trial {} ({}): {} after {} ticks, error {:.3} mm, time {:.3} s",
        record.meta.trial,
        record.setup.mode,
        if o.success { "success" } else { "failure" },
        o.ticks,
        o.position_error,
        o.execution_time
    );
    if report.is_exact(&record) {
        println!("replay matches the record exactly");
        Ok(ExitCode::SUCCESS)
    } else {
        match report.divergence {
            Some(t) => eprintln!("replay diverges at tick {t}"),
            None => eprintln!("replay outcome differs from the record"),
        }
        Ok(ExitCode::FAILURE)
    }
}

fn serve(common: &Common, port: u16, trial: u64) -> Result<ExitCode> {
    let experiment = load_config(common)?;
    fs::create_dir_all(&common.out)?;
    serve_session(port, BridgeConfig { experiment, out_dir: Some(common.out.clone()), first_trial: trial })?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::DemoLearn { common } => demo_learn(common),
        Command::SampleGrasps { common, scene, trial, model } => {
            sample(common, scene.as_deref(), *trial, model.as_deref())
        }
        Command::Run { common, trials, debug } => run(common, *trials, *debug),
        Command::Replay { record, debug } => replay_cmd(record, debug.as_deref()),
        Command::Serve { common, port, trial } => serve(common, *port, *trial),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
