//! `pushgrasp` command line: train, eval, render, inspect, replay.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use pushgrasp::agent::log::{read_log, write_record, LogRecord};
use pushgrasp::agent::{masked_qmaps, Mode};
use pushgrasp::bench::{self, Arrangement, EpisodeRecord, CHALLENGE_IDS};
use pushgrasp::curriculum::{self, execute, CheckpointError, CurriculumError, Profile, TrainState};
use pushgrasp::percept::pgm::{self, GrayScale};
use pushgrasp::percept::{self, Grid, NUM_ROTATIONS};
use pushgrasp::qfunc::{encode_input, forward_all_rotations, Heads};
use pushgrasp::world::{Primitive, Scene};

// glibc fragments badly under the replay/tensor allocation mix
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "pushgrasp", version, about = "Push-grasp Q-learning on a 2D tabletop")]
struct Cli {
    /// Built-in profile name (desk, paper) or a TOML file.
    #[arg(long, global = true, default_value = "desk")]
    profile: String,
    /// Every file is written below this directory.
    #[arg(long, global = true, env = "PUSHGRASP_OUT", default_value = "runs")]
    out: PathBuf,
    /// Print the resolved profile as TOML and exit.
    #[arg(long)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    Train(TrainArgs),
    Eval(EvalArgs),
    Render(RenderArgs),
    Inspect(InspectArgs),
    Replay(ReplayArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    stage: u8,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Total steps for the stage; defaults to the profile's stage length.
    #[arg(long)]
    steps: Option<u64>,
    /// Stage-1 checkpoint whose weights start stage 2.
    #[arg(long)]
    from_stage1: Option<PathBuf>,
    /// Start stage 2 from fresh weights.
    #[arg(long)]
    no_pretrain: bool,
    /// Continue from a checkpoint of the same stage.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Also rewrite the checkpoint every N steps.
    #[arg(long)]
    checkpoint_every: Option<u64>,
    /// Stop early once the trailing-100 grasp success reaches this value.
    #[arg(long)]
    stop_at: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Oriented,
    Agnostic,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Oriented => Mode::Oriented,
            ModeArg::Agnostic => Mode::Agnostic,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Challenge case id, or `all`.
    #[arg(long, conflicts_with = "random")]
    challenge: Option<String>,
    /// Random arrangements with this many objects.
    #[arg(long)]
    random: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long, value_enum, default_value = "oriented")]
    mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Never evaluate the push head.
    #[arg(long)]
    grasp_only: bool,
    /// Results file name inside the output directory.
    #[arg(long, default_value = "eval.jsonl")]
    results: String,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long, conflicts_with = "challenge")]
    scene: Option<PathBuf>,
    #[arg(long)]
    challenge: Option<u32>,
    /// Goal object; defaults to the first goal candidate.
    #[arg(long)]
    goal: Option<u32>,
    /// Adds per-rotation Q maps.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Subdirectory of the output directory.
    #[arg(long, default_value = "render")]
    name: String,
}

#[derive(Args)]
struct InspectArgs {
    checkpoint: PathBuf,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    log: PathBuf,
    /// Initial scene of the log.
    #[arg(long)]
    scene: PathBuf,
}

enum Failure {
    Config(String),
    Io(String),
    Divergence(String),
    Other(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Other(_) => 1,
            Failure::Config(_) => 2,
            Failure::Io(_) => 3,
            Failure::Divergence(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Io(m) | Failure::Divergence(m) | Failure::Other(m) => m,
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<CheckpointError> for Failure {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io(m) => Failure::Io(m),
            e => Failure::Config(e.to_string()),
        }
    }
}

impl From<CurriculumError> for Failure {
    fn from(e: CurriculumError) -> Self {
        match e {
            CurriculumError::Config(m) => Failure::Config(m),
            CurriculumError::Checkpoint(c) => c.into(),
            CurriculumError::Diverged(_) => Failure::Divergence(e.to_string()),
            e => Failure::Other(e.to_string()),
        }
    }
}

impl From<bench::BenchError> for Failure {
    fn from(e: bench::BenchError) -> Self {
        match e {
            bench::BenchError::UnknownId(_) => Failure::Config(e.to_string()),
            e => Failure::Other(e.to_string()),
        }
    }
}

type Res<T> = Result<T, Failure>;

fn load_profile(spec: &str) -> Res<Profile> {
    if let Some(p) = Profile::named(spec) {
        return Ok(p);
    }
    let text = fs::read_to_string(spec).map_err(|e| Failure::Config(format!("profile {spec}: {e}")))?;
    Profile::from_toml(&text).map_err(|e| Failure::Config(format!("profile {spec}: {e}")))
}

fn read_scene(path: &Path) -> Res<Scene> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    Scene::from_text(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

/// A plain file name inside the output directory.
fn out_file(out: &Path, name: &str) -> Res<PathBuf> {
    if name.is_empty() || name.contains(['/', '\\']) || name == ".." || name == "." {
        return Err(Failure::Config(format!("'{name}' must be a plain file name")));
    }
    Ok(out.join(name))
}

fn train(profile: &Profile, out: &Path, a: &TrainArgs) -> Res<()> {
    let mut state = match &a.resume {
        Some(path) => {
            let s = curriculum::load_checkpoint(path)?;
            if s.stage != a.stage {
                return Err(Failure::Config(format!("checkpoint is stage {}, not {}", s.stage, a.stage)));
            }
            if s.learner.online.arch != profile.net.arch {
                return Err(Failure::Config("checkpoint architecture differs from the profile".into()));
            }
            s
        }
        None => {
            let params = match (a.stage, &a.from_stage1, a.no_pretrain) {
                (2, Some(path), false) => {
                    let s1 = curriculum::load_checkpoint(path)?;
                    if s1.stage != 1 {
                        return Err(Failure::Config(format!("{} is not a stage-1 checkpoint", path.display())));
                    }
                    Some(s1.learner.online)
                }
                (2, None, false) => {
                    return Err(Failure::Config("stage 2 needs --from-stage1 <checkpoint> or --no-pretrain".into()))
                }
                (2, Some(_), true) => return Err(Failure::Config("--from-stage1 and --no-pretrain exclude each other".into())),
                (1, Some(_), _) => return Err(Failure::Config("--from-stage1 only applies to stage 2".into())),
                _ => None,
            };
            TrainState::new(profile, a.stage, a.seed, params)?
        }
    };
    let steps = a.steps.unwrap_or(curriculum::stage_config(profile, a.stage)?.steps);
    fs::create_dir_all(out)?;
    let stem = format!("stage{}", a.stage);
    let ckpt = out.join(format!("{stem}.ckpt"));
    let append = a.resume.is_some();
    let open = |name: String| -> std::io::Result<BufWriter<File>> {
        let f = fs::OpenOptions::new().create(true).write(true).append(append).truncate(!append).open(out.join(name))?;
        Ok(BufWriter::new(f))
    };
    let mut log = open(format!("{stem}.log.jsonl"))?;
    let mut summary = open(format!("{stem}.summary.tsv"))?;
    if !append {
        writeln!(summary, "step\tgrasp_attempts\ttrailing100_grasp_success")?;
    }

    let every = a.checkpoint_every.unwrap_or(0);
    let stop_at = a.stop_at;
    let mut last_attempts = state.grasp_history.len();
    let mut sink = |r: &LogRecord| -> std::io::Result<()> {
        write_record(&mut log, r)?;
        if let LogRecord::Action(rec) = r {
            if rec.step % 100 == 99 {
                eprintln!("step {} loss {:?}", rec.step + 1, rec.loss);
            }
        }
        Ok(())
    };
    let mut io_err: Option<Failure> = None;
    let mut stop = |s: &TrainState| {
        if s.grasp_history.len() != last_attempts {
            last_attempts = s.grasp_history.len();
            let t = s.trailing_grasp_success(100).unwrap_or(0.0);
            if let Err(e) = writeln!(summary, "{}\t{}\t{t:.4}", s.step, last_attempts) {
                io_err = Some(e.into());
                return true;
            }
        }
        if every > 0 && s.step % every == 0 {
            if let Err(e) = curriculum::save_checkpoint(s, &ckpt, true) {
                io_err = Some(e.into());
                return true;
            }
        }
        match stop_at {
            Some(x) => s.grasp_history.len() >= 100 && s.trailing_grasp_success(100).is_some_and(|t| t >= x),
            None => false,
        }
    };
    let result = curriculum::run_stage(profile, &mut state, steps, &mut sink, &mut stop);
    drop(stop);
    drop(sink);
    log.flush()?;
    summary.flush()?;
    if let Some(e) = io_err {
        return Err(e);
    }
    result?;
    curriculum::save_checkpoint(&state, &ckpt, true)?;
    let t = state.trailing_grasp_success(100);
    println!(
        "{}",
        json!({ "stage": state.stage, "steps": state.step, "grasp_attempts": state.grasp_history.len(),
                "trailing100_grasp_success": t, "checkpoint": ckpt.display().to_string() })
    );
    Ok(())
}

fn eval(profile: &Profile, out: &Path, a: &EvalArgs) -> Res<()> {
    let results = out_file(out, &a.results)?;
    let state = curriculum::load_checkpoint(&a.checkpoint)?;
    let mode: Mode = a.mode.into();
    let runs = a.runs.unwrap_or(profile.eval.runs);
    let arrangements: Vec<Arrangement> = match (&a.challenge, a.random) {
        (Some(c), _) if c == "all" => CHALLENGE_IDS.map(|id| Arrangement::Challenge { id }).collect(),
        (Some(c), _) => {
            let id = c.parse().map_err(|_| Failure::Config(format!("bad challenge id '{c}'")))?;
            bench::challenge_kind(id)?;
            vec![Arrangement::Challenge { id }]
        }
        (None, n) => vec![Arrangement::Random { n_objects: n.unwrap_or(profile.eval.random_objects), seed: a.seed }],
    };
    let mut all: Vec<EpisodeRecord> = Vec::new();
    let mut per: Vec<serde_json::Value> = Vec::new();
    for arr in arrangements {
        let recs = bench::evaluate(&state.learner.online, profile, arr, mode, runs, a.seed, a.grasp_only)?;
        let m = bench::compute_metrics(&recs)?;
        eprintln!("{arr:?}: completion {:.3} motion_number {:?}", m.completion, m.motion_number);
        per.push(json!({ "arrangement": arr, "metrics": m }));
        all.extend(recs);
    }
    let total = bench::compute_metrics(&all)?;
    fs::create_dir_all(out)?;
    let tmp = results.with_extension("partial");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        for r in &all {
            serde_json::to_writer(&mut w, &json!({ "episode": r })).map_err(|e| Failure::Io(e.to_string()))?;
            w.write_all(b"\n")?;
        }
        for p in &per {
            serde_json::to_writer(&mut w, p).map_err(|e| Failure::Io(e.to_string()))?;
            w.write_all(b"\n")?;
        }
        serde_json::to_writer(&mut w, &json!({ "aggregate": total })).map_err(|e| Failure::Io(e.to_string()))?;
        w.write_all(b"\n")?;
        w.flush()?;
    }
    fs::rename(&tmp, &results)?;
    println!("{}", json!({ "results": results.display().to_string(), "aggregate": total }));
    Ok(())
}

fn mask_grid(m: &percept::Mask) -> Grid<f32> {
    m.0.map(|b| if b { 1.0 } else { 0.0 })
}

fn render(profile: &Profile, out: &Path, a: &RenderArgs) -> Res<()> {
    let scene = match (&a.scene, a.challenge) {
        (Some(p), _) => read_scene(p)?,
        (None, Some(id)) => bench::challenge_case(id)?.0,
        (None, None) => return Err(Failure::Config("render needs --scene or --challenge".into())),
    };
    let dir = out_file(out, &a.name)?;
    let params = a.checkpoint.as_ref().map(|p| curriculum::load_checkpoint(p)).transpose()?.map(|s| s.learner.online);
    let goal = a.goal.or_else(|| scene.goal_candidates().first().copied());
    if let Some(g) = goal {
        if scene.get(g).is_none() {
            return Err(Failure::Config(format!("object {g} is not in the scene")));
        }
    }
    fs::create_dir_all(&dir)?;
    let (hm, seg) = percept::render_config(&scene, &profile.percept);
    let mut legend = String::from("# image lo hi (gray = 255 * (value - lo) / (hi - lo))\n");
    let mut put = |name: &str, grid: &Grid<f32>, scale: GrayScale| -> Res<()> {
        pgm::write(&dir.join(format!("{name}.pgm")), grid, scale)?;
        legend.push_str(&format!("{name}.pgm {} {}\n", scale.lo, scale.hi));
        Ok(())
    };
    let unit = GrayScale { lo: 0.0, hi: 1.0 };
    put("heightmap", &hm.height, GrayScale { lo: 0.0, hi: profile.world.object_height })?;
    let max_id = seg.ids().into_iter().max().unwrap_or(0).max(1);
    put("seg", &seg.0.map(|id| id as f32), GrayScale { lo: 0.0, hi: f64::from(max_id) })?;
    let objects = percept::object_mask(&seg);
    put("object_mask", &mask_grid(&objects), unit)?;
    let masks = curriculum::action_masks(&seg, goal, profile.percept.push_dilate_radius)?;
    put("grasp_mask", &mask_grid(&masks.grasp), unit)?;
    put("push_mask", &mask_grid(&masks.push), unit)?;
    if let Some(g) = goal {
        let gm = percept::goal_mask(&seg, g).map_err(|e| Failure::Other(e.to_string()))?;
        put("goal_mask", &mask_grid(&gm), unit)?;
        let border = percept::border_mask(&gm, profile.percept.border_radius).map_err(|e| Failure::Other(e.to_string()))?;
        put("border_mask", &mask_grid(&border), unit)?;
    }
    if let Some(params) = params {
        if params.arch != profile.net.arch {
            return Err(Failure::Config("checkpoint architecture differs from the profile".into()));
        }
        let q = forward_all_rotations(&params, &encode_input(&hm, &profile.net.norm), Heads::Both, profile.net.parallel)
            .map_err(|e| Failure::Other(e.to_string()))?;
        let masked = masked_qmaps(&q, &masks).map_err(|e| Failure::Other(e.to_string()))?;
        // one scale across all maps so the brightest pixel is the global argmax
        let (lo, hi) = masked
            .maps
            .iter()
            .flatten()
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(f64::from(v)), hi.max(f64::from(v))));
        let scale = if lo.is_finite() { GrayScale { lo, hi } } else { unit };
        for p in [Primitive::Grasp, Primitive::Push] {
            if !masked.has(p) {
                continue;
            }
            let tag = if p == Primitive::Grasp { "grasp" } else { "push" };
            for k in 0..NUM_ROTATIONS {
                put(&format!("q_{tag}_k{k:02}"), &masked.grid(p, k), scale)?;
            }
        }
    }
    fs::write(dir.join("scale.txt"), legend)?;
    println!("{}", json!({ "dir": dir.display().to_string(), "goal": goal, "rows": hm.rows(), "cols": hm.cols() }));
    Ok(())
}

fn inspect(a: &InspectArgs) -> Res<()> {
    let s = curriculum::load_checkpoint(&a.checkpoint)?;
    let arch = &s.learner.online.arch;
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "format_version": curriculum::checkpoint::VERSION,
            "stage": s.stage,
            "step": s.step,
            "parameters": s.learner.online.len(),
            "arch": arch,
            "optimizer_updates": s.learner.updates,
            "replay_len": s.replay.len(),
            "replay_capacity": s.replay.capacity(),
            "grasp_attempts": s.grasp_history.len(),
            "trailing100_grasp_success": s.trailing_grasp_success(100),
            "goal_id": s.goal_id,
            "scene_objects": s.scene.len(),
            "scene_hash": s.scene.hash_hex(),
        }))
        .expect("json")
    );
    Ok(())
}

fn replay(profile: &Profile, a: &ReplayArgs) -> Res<()> {
    let f = File::open(&a.log).map_err(|e| Failure::Io(format!("{}: {e}", a.log.display())))?;
    let records = read_log(BufReader::new(f)).map_err(|e| Failure::Config(e.to_string()))?;
    let mut scene = read_scene(&a.scene)?;
    match records.first() {
        Some(LogRecord::Reset { hash, .. }) if *hash == scene.hash_hex() => {}
        Some(LogRecord::Reset { .. }) => return Err(Failure::Config("initial scene does not match the log".into())),
        _ => return Err(Failure::Config("log does not start with a scene record".into())),
    }
    let mut actions = 0usize;
    for r in &records[1..] {
        match r {
            LogRecord::Reset { scene: text, hash, step } => {
                let s = Scene::from_text(text).map_err(|e| Failure::Config(e.to_string()))?;
                if s.hash_hex() != *hash {
                    return Err(Failure::Divergence(format!("reset record at step {step} does not match its hash")));
                }
                scene = s;
            }
            LogRecord::Action(rec) => {
                let outcome = execute(&scene, &rec.action, profile);
                let got = outcome.scene_after.hash_hex();
                if got != rec.outcome_hash {
                    println!("{}", json!({ "divergence_step": rec.step, "expected": rec.outcome_hash, "got": got }));
                    return Err(Failure::Divergence(format!("first divergence at step {}", rec.step)));
                }
                scene = outcome.scene_after;
                actions += 1;
            }
        }
    }
    println!("{}", json!({ "actions": actions, "divergences": 0 }));
    Ok(())
}

fn run(cli: Cli) -> Res<()> {
    let profile = load_profile(&cli.profile)?;
    if cli.print_config {
        print!("{}", profile.to_toml());
        return Ok(());
    }
    match &cli.command {
        Some(Command::Train(a)) => train(&profile, &cli.out, a),
        Some(Command::Eval(a)) => eval(&profile, &cli.out, a),
        Some(Command::Render(a)) => render(&profile, &cli.out, a),
        Some(Command::Inspect(a)) => inspect(a),
        Some(Command::Replay(a)) => replay(&profile, a),
        None => Err(Failure::Config("no command given (try --help)".into())),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
