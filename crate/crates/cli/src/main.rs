use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use kinsolve::harness::{run_bench, ScenarioConfig};
use kinsolve::io::{
    parse_p25, parse_rotations, parse_skeleton, parse_target, parse_twists, parse_wholebody_target,
    points_to_json, report_to_json, twists_to_json,
};
use kinsolve::{
    extract_twist, fk, ice_with, solve_adaptive, solve_naive, solve_wholebody, BuiltinTree, Error,
    IceUpdate, KinematicTree, MarkerPair, PoseSolver, RestPose, SolveMode, TwistAngle, TwistAngles,
};

#[derive(Parser)]
#[command(
    name = "kinsolve",
    version,
    about = "Analytical inverse kinematics over JSON poses"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Forward kinematics: relative rotations to joint positions.
    Fk {
        #[arg(long)]
        tree: String,
        #[arg(long)]
        rotations: PathBuf,
    },
    /// Naive or adaptive IK on a full-tree target.
    Ik {
        #[arg(long)]
        tree: String,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        twists: PathBuf,
        #[arg(long, value_enum, default_value_t = TreeMode::Adaptive)]
        mode: TreeMode,
        #[arg(long, value_enum)]
        emit: Option<Emit>,
    },
    /// Whole-body IK with hand and face sub-trees.
    Wholebody {
        #[arg(long)]
        tree: String,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        twists: PathBuf,
        /// Mouth markers, when not embedded in the target file.
        #[arg(long)]
        markers: Option<PathBuf>,
        #[arg(long, value_enum)]
        emit: Option<Emit>,
    },
    /// Iterative camera-scale estimation from a 2.5D pose; prints a CSV trace.
    Camera {
        #[arg(long)]
        tree: String,
        #[arg(long)]
        p25: PathBuf,
        /// Twist angles for the inner IK; zeros when omitted.
        #[arg(long)]
        twists: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        steps: usize,
        #[arg(long, value_enum, default_value_t = CameraMode::Naive)]
        mode: CameraMode,
        #[arg(long, value_enum, default_value_t = Update::Secant)]
        update: Update,
    },
    /// Splits relative rotations into swing and twist; prints the twist file.
    Decompose {
        #[arg(long)]
        tree: String,
        #[arg(long)]
        rotations: PathBuf,
    },
    /// Runs the synthetic benchmarks and writes three CSV tables.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        jitter_mm: Option<Vec<f64>>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TreeMode {
    Naive,
    Adaptive,
}

#[derive(Clone, Copy, ValueEnum)]
enum CameraMode {
    Naive,
    Adaptive,
    Wholebody,
}

#[derive(Clone, Copy, ValueEnum)]
enum Update {
    Secant,
    FixedPoint,
}

#[derive(Clone, Copy, ValueEnum)]
enum Emit {
    Residuals,
}

enum Failure {
    Input(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Input(e.to_string())
        }
    }
}

type Out = Result<String, Failure>;

fn read(flag: &str, path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path)
        .map_err(|e| Failure::Input(format!("--{flag}: cannot read {}: {e}", path.display())))
}

fn with_flag<T>(flag: &str, r: kinsolve::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| match Failure::from(e) {
        Failure::Input(m) => Failure::Input(format!("--{flag}: {m}")),
        n => n,
    })
}

fn load_tree(arg: &str) -> Result<(KinematicTree, RestPose), Failure> {
    match BuiltinTree::from_id(arg) {
        Some(b) => Ok(b.load()),
        None => with_flag("tree", parse_skeleton(&read("tree", Path::new(arg))?)),
    }
}

fn pretty(v: &serde_json::Value) -> String {
    serde_json::to_string_pretty(v).expect("JSON values always serialize")
}

fn run(cmd: Command) -> Out {
    match cmd {
        Command::Fk { tree, rotations } => {
            let (tree, rest) = load_tree(&tree)?;
            let rots = with_flag(
                "rotations",
                parse_rotations(&read("rotations", &rotations)?, &tree),
            )?;
            let (pose, _) = fk(&tree, &rest, &rots)?;
            Ok(points_to_json(&pose.q))
        }
        Command::Ik {
            tree,
            target,
            twists,
            mode,
            emit,
        } => {
            let (tree, rest) = load_tree(&tree)?;
            let target = with_flag("target", parse_target(&read("target", &target)?, &tree))?;
            let twists = with_flag("twists", parse_twists(&read("twists", &twists)?, &tree))?;
            let report = match mode {
                TreeMode::Naive => solve_naive(&tree, &rest, &target, &twists)?,
                TreeMode::Adaptive => solve_adaptive(&tree, &rest, &target, &twists)?,
            };
            Ok(pretty(&report_to_json(&report, &tree, emit.is_some())))
        }
        Command::Wholebody {
            tree,
            target,
            twists,
            markers,
            emit,
        } => {
            let (tree, rest) = load_tree(&tree)?;
            let markers_src = markers.as_deref().map(|m| read("markers", m)).transpose()?;
            let target = with_flag(
                "target",
                parse_wholebody_target(&read("target", &target)?, &tree, markers_src.as_deref()),
            )?;
            let twists = with_flag("twists", parse_twists(&read("twists", &twists)?, &tree))?;
            let pair = MarkerPair::from_target(&tree, &rest, &target)?;
            let report = solve_wholebody(&tree, &rest, &target, &twists, &pair)?;
            Ok(pretty(&report_to_json(&report, &tree, emit.is_some())))
        }
        Command::Camera {
            tree,
            p25,
            twists,
            steps,
            mode,
            update,
        } => {
            let (tree, rest) = load_tree(&tree)?;
            let (p25, s0) = with_flag("p25", parse_p25(&read("p25", &p25)?))?;
            let twists = match twists {
                Some(path) => with_flag("twists", parse_twists(&read("twists", &path)?, &tree))?,
                None => TwistAngles::zeros(tree.len()),
            };
            let solver = PoseSolver {
                tree: &tree,
                rest: &rest,
                twists: &twists,
                mode: match mode {
                    CameraMode::Naive => SolveMode::Naive,
                    CameraMode::Adaptive => SolveMode::Adaptive,
                    CameraMode::Wholebody => SolveMode::Wholebody,
                },
            };
            let update = match update {
                Update::Secant => IceUpdate::Secant,
                Update::FixedPoint => IceUpdate::FixedPoint,
            };
            let res = ice_with(&p25, s0, &solver, steps, update)?;
            let mut csv = String::from("step,s,root_depth_m,reprojection\n");
            for t in &res.trace {
                let _ = writeln!(
                    csv,
                    "{},{:.9},{:.9},{:.9}",
                    t.step,
                    t.s,
                    1.0 / t.s,
                    t.reprojection
                );
            }
            Ok(csv)
        }
        Command::Decompose { tree, rotations } => {
            let (tree, rest) = load_tree(&tree)?;
            let rots = with_flag(
                "rotations",
                parse_rotations(&read("rotations", &rotations)?, &tree),
            )?;
            let mut phi = vec![TwistAngle::ZERO; tree.len()];
            for (k, slot) in phi.iter_mut().enumerate().skip(1) {
                *slot = extract_twist(&rots.rel[k], &rest.bone(&tree, k)?)?.1;
            }
            Ok(twists_to_json(&TwistAngles::new(phi)))
        }
        Command::Bench {
            config,
            out,
            seed,
            trials,
            jitter_mm,
        } => {
            let mut cfg = match config {
                Some(path) => {
                    with_flag("config", ScenarioConfig::from_json(&read("config", &path)?))?
                }
                None => ScenarioConfig::shipped_default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(t) = trials {
                cfg.trials = t;
            }
            if let Some(j) = jitter_mm {
                cfg.jitter_mm = j;
            }
            with_flag("config", cfg.validate())?;
            let tables = run_bench(&cfg)?;
            let io = |e: std::io::Error| {
                Failure::Input(format!("--out: cannot write {}: {e}", out.display()))
            };
            std::fs::create_dir_all(&out).map_err(io)?;
            let mut listing = String::new();
            for (name, csv) in tables {
                let path = out.join(name);
                std::fs::write(&path, csv).map_err(io)?;
                let _ = writeln!(listing, "{}", path.display());
            }
            Ok(listing)
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("KINSOLVE_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Failure::Input(format!(
            "KINSOLVE_THREADS must be a positive integer, got {v:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Input(format!("KINSOLVE_THREADS: {e}")))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match configure_threads().and_then(|_| run(cli.command)) {
        Ok(out) => {
            print!("{out}");
            if !out.ends_with('\n') {
                println!();
            }
            ExitCode::SUCCESS
        }
        Err(Failure::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(2)
        }
    }
}
