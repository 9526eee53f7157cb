use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mmdp_detect_core::analysis::{bc_matrix_at, pair_curve, write_bc_csv, write_bounds_csv};
use mmdp_detect_core::graph::Mec;
use mmdp_detect_core::policy::mec_to_document;
use mmdp_detect_core::{
    error_bounds_binary, error_bounds_multi, gen_grid, gen_recsys, general_apd, induced_transition_system,
    informative_mecs, informative_structure, mec_decompose, pairwise_bc_curve, parse_mmdp, preprocess, run_batch,
    serialize_mmdp, simulate, write_batch_csv, DetectionPolicy, GridSpec, Mmdp, PairClass, RecSysSpec, SimConfig,
    StateClass, TransitionSystem,
};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "mmdp-detect",
    version,
    about = "Detect the true model among MDPs sharing one structure"
)]
struct Cli {
    /// Write the main artifact here instead of stdout.
    #[arg(short, long, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a model file.
    Validate { model: PathBuf },
    /// Informative and revealing pairs for every pair of models.
    Classify { model: PathBuf },
    /// Maximal end components.
    Mec(MecArgs),
    /// Synthesize a detection policy; exit 3 when none exists.
    Synthesize {
        model: PathBuf,
        /// Initial state name; defaults to the model's initial state.
        #[arg(long)]
        initial: Option<String>,
        /// Write synthesis diagnostics (JSON) to this file.
        #[arg(long)]
        diagnostics: Option<PathBuf>,
    },
    /// Run a policy on one model and write the trace, or a batch of runs.
    Simulate(SimulateArgs),
    /// Bhattacharyya-coefficient curve or error bounds of a policy.
    Bc(BcArgs),
    /// Generate a scenario model from a spec.
    Gen { kind: GenKind, spec: PathBuf },
}

#[derive(Args)]
struct MecArgs {
    model: PathBuf,
    /// MECs of model `i` (1-based) alone.
    #[arg(long = "model", id = "model_index", value_name = "I", conflicts_with = "informative")]
    model_index: Option<usize>,
    /// Informative MECs of the preprocessed pair (two-model files only).
    #[arg(long)]
    informative: bool,
}

#[derive(Args)]
struct SimulateArgs {
    model: PathBuf,
    policy: PathBuf,
    /// True model, 1-based.
    #[arg(long)]
    truth: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = mmdp_detect_core::sim::DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = mmdp_detect_core::sim::DEFAULT_MAX_STEPS)]
    max_steps: usize,
    /// Run this many seeded runs and write one CSV row per run.
    #[arg(long)]
    trials: Option<usize>,
    /// Batch summary JSON (with --trials).
    #[arg(long, requires = "trials")]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct BcArgs {
    model: PathBuf,
    policy: PathBuf,
    #[arg(long)]
    horizon: usize,
    /// Model pair `i,j` (1-based); defaults to `1,2`.
    #[arg(long, conflicts_with = "bounds")]
    pair: Option<String>,
    /// Priors `q1,..,qN:θ1,..,θN`; writes MAP error bounds instead of the curve.
    #[arg(long)]
    bounds: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Grid,
    Recsys,
}

enum Failure {
    Usage(String),
    Invalid(String),
    NoPolicy(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Invalid(_) => 2,
            Failure::NoPolicy(_) => 3,
            Failure::Runtime(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Invalid(m) | Failure::NoPolicy(m) | Failure::Runtime(m) => m,
        }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Outcome {
    let out = Output(cli.output);
    match cli.command {
        Command::Validate { model } => validate(&model, &out),
        Command::Classify { model } => classify(&model, &out),
        Command::Mec(args) => mec(&args, &out),
        Command::Synthesize {
            model,
            initial,
            diagnostics,
        } => synthesize(&model, initial.as_deref(), diagnostics.as_deref(), &out),
        Command::Simulate(args) => simulate_cmd(&args, &out),
        Command::Bc(args) => bc(&args, &out),
        Command::Gen { kind, spec } => generate(kind, &spec, &out),
    }
}

struct Output(Option<PathBuf>);

impl Output {
    fn bytes(&self, data: &[u8]) -> Outcome {
        match &self.0 {
            Some(p) => write_file(p, data),
            None => io::stdout()
                .write_all(data)
                .map_err(|e| Failure::Runtime(format!("stdout: {e}"))),
        }
    }

    fn text(&self, s: &str) -> Outcome {
        let mut s = s.to_string();
        if !s.ends_with('\n') {
            s.push('\n');
        }
        self.bytes(s.as_bytes())
    }

    fn json<T: Serialize>(&self, value: &T) -> Outcome {
        self.text(&to_json(value))
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("documents always serialize")
}

fn write_file(path: &Path, data: &[u8]) -> Outcome {
    fs::write(path, data).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<Mmdp, Failure> {
    parse_mmdp(&read(path)?).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))
}

fn load_policy(path: &Path, m: &Mmdp) -> Result<DetectionPolicy, Failure> {
    DetectionPolicy::from_json(&read(path)?, m).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))
}

fn model_index(i: usize, m: &Mmdp, flag: &str) -> Result<usize, Failure> {
    if i == 0 || i > m.n_models() {
        return Err(Failure::Usage(format!(
            "{flag} {i} is not a model index in 1..={}",
            m.n_models()
        )));
    }
    Ok(i - 1)
}

fn validate(path: &Path, out: &Output) -> Outcome {
    let m = load_model(path)?;
    out.text(&format!(
        "valid: {} models, {} states, {} state-action pairs",
        m.n_models(),
        m.n_states(),
        (0..m.n_states()).map(|s| m.actions(s).len()).sum::<usize>()
    ))
}

#[derive(Serialize)]
struct PairRef {
    state: String,
    action: String,
}

#[derive(Serialize)]
struct PairReport {
    models: [usize; 2],
    /// Informative pairs after preprocessing, on original states.
    isa: Vec<PairRef>,
    informative_pairs: Vec<PairRef>,
    revealing_pairs: Vec<PairRef>,
    revealing_states: Vec<String>,
}

fn classify(path: &Path, out: &Output) -> Outcome {
    let m = load_model(path)?;
    let name = |(s, a): (usize, usize)| PairRef {
        state: m.states()[s].clone(),
        action: m.actions(s)[a].clone(),
    };
    let mut reports = Vec::new();
    for i in 0..m.n_models() {
        for j in i + 1..m.n_models() {
            let p = preprocess(m.model(i), m.model(j));
            let cls = &p.classification;
            reports.push(PairReport {
                models: [i + 1, j + 1],
                isa: p.reported_isa().into_iter().map(name).collect(),
                informative_pairs: cls.pairs_of(PairClass::Informative).into_iter().map(name).collect(),
                revealing_pairs: cls.pairs_of(PairClass::Revealing).into_iter().map(name).collect(),
                revealing_states: cls
                    .states
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| **c == StateClass::Revealing)
                    .map(|(s, _)| m.states()[s].clone())
                    .collect(),
            });
        }
    }
    out.json(&reports)
}

/// Transitions possible in at least one model.
fn union_structure(m: &Mmdp) -> TransitionSystem {
    let mut ts = induced_transition_system(m.model(0));
    for md in &m.models()[1..] {
        let other = induced_transition_system(md);
        for (row, orow) in ts.successors.iter_mut().zip(&other.successors) {
            for (succ, osucc) in row.iter_mut().zip(orow) {
                succ.extend(osucc);
                succ.sort_unstable();
                succ.dedup();
            }
        }
    }
    ts
}

fn mec(args: &MecArgs, out: &Output) -> Outcome {
    let m = load_model(&args.model)?;
    let (ts, mecs): (TransitionSystem, Vec<Mec>) = if args.informative {
        if m.n_models() != 2 {
            return Err(Failure::Usage(format!(
                "--informative needs a two-model file, got {} models",
                m.n_models()
            )));
        }
        let p = preprocess(m.model(0), m.model(1));
        let ts = informative_structure(&p);
        let mecs = informative_mecs(&ts, &p.isa);
        (ts, mecs)
    } else {
        let ts = match args.model_index {
            Some(i) => induced_transition_system(m.model(model_index(i, &m, "--model")?)),
            None => union_structure(&m),
        };
        let mecs = mec_decompose(&ts);
        (ts, mecs)
    };
    let docs: Vec<_> = mecs
        .iter()
        .map(|c| mec_to_document(c, &ts.states, &ts.actions).states)
        .collect();
    out.json(&docs)
}

fn synthesize(path: &Path, initial: Option<&str>, diagnostics: Option<&Path>, out: &Output) -> Outcome {
    let m = load_model(path)?;
    let s0 = match initial {
        Some(name) => m
            .state_index(name)
            .ok_or_else(|| Failure::Usage(format!("--initial: unknown state {name}")))?,
        None => m.initial(),
    };
    let result = general_apd(&m, s0).map_err(|e| Failure::Invalid(e.to_string()))?;
    if let Some(p) = diagnostics {
        write_file(p, (to_json(&result.diagnostics_document(&m)) + "\n").as_bytes())?;
    }
    match &result.policy {
        Some(policy) if result.exists => out.text(&policy.to_json(&m)),
        _ => {
            let witness = result
                .diagnostics
                .witness
                .as_ref()
                .map(|w| {
                    let ts = &result.diagnostics.structure;
                    let states: Vec<&str> = w.states().map(|s| ts.states[s].as_str()).collect();
                    format!("; trapping component {{{}}}", states.join(", "))
                })
                .unwrap_or_default();
            Err(Failure::NoPolicy(format!(
                "no detection policy exists from state {}{witness}",
                m.states()[s0]
            )))
        }
    }
}

fn simulate_cmd(args: &SimulateArgs, out: &Output) -> Outcome {
    let m = load_model(&args.model)?;
    let policy = load_policy(&args.policy, &m)?;
    let truth = model_index(args.truth, &m, "--truth")?;
    if !(args.threshold > 0.5 && args.threshold < 1.0) {
        return Err(Failure::Usage(format!(
            "--threshold {} must lie in (0.5, 1)",
            args.threshold
        )));
    }
    let cfg = SimConfig {
        max_steps: args.max_steps,
        threshold: args.threshold,
        ..SimConfig::default()
    };
    let runtime = |e: mmdp_detect_core::SimError| Failure::Runtime(e.to_string());
    let mut buf = Vec::new();
    match args.trials {
        None => {
            let trace = simulate(&m, truth, &policy, args.seed, &cfg).map_err(runtime)?;
            trace.write_csv(&mut buf, &m).map_err(runtime)?;
        }
        Some(0) => return Err(Failure::Usage("--trials must be positive".into())),
        Some(k) => {
            let (traces, summary) = run_batch(&m, &policy, &[truth], k, args.seed, &cfg).map_err(runtime)?;
            write_batch_csv(&mut buf, &traces).map_err(runtime)?;
            if let Some(p) = &args.summary {
                write_file(p, (to_json(&summary) + "\n").as_bytes())?;
            }
        }
    }
    out.bytes(&buf)
}

fn parse_list(s: &str, what: &str) -> Result<Vec<f64>, Failure> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| Failure::Usage(format!("--bounds: `{x}` in {what} is not a number")))
        })
        .collect()
}

fn bc(args: &BcArgs, out: &Output) -> Outcome {
    let m = load_model(&args.model)?;
    let policy = load_policy(&args.policy, &m)?;
    let runtime = |e: mmdp_detect_core::AnalysisError| Failure::Runtime(e.to_string());
    let mut buf = Vec::new();
    if let Some(spec) = &args.bounds {
        let (q, theta) = spec
            .split_once(':')
            .ok_or_else(|| Failure::Usage("--bounds expects `q1,..,qN:θ1,..,θN`".into()))?;
        let (q, theta) = (parse_list(q, "q")?, parse_list(theta, "θ")?);
        let n = m.n_models();
        if q.len() != n || theta.len() != n {
            return Err(Failure::Usage(format!("--bounds needs {n} priors on each side")));
        }
        let curves = pairwise_bc_curve(&m, &policy, args.horizon).map_err(runtime)?;
        let bounds = (0..=args.horizon)
            .map(|t| {
                let b = bc_matrix_at(&curves, n, t);
                if n == 2 {
                    error_bounds_binary(b[0][1].min(1.0), q[0], theta[0])
                } else {
                    error_bounds_multi(&b, &q, &theta)
                }
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Failure::Usage(format!("--bounds: {e}")))?;
        write_bounds_csv(&mut buf, &bounds).map_err(runtime)?;
    } else {
        let (i, j) = match &args.pair {
            None => (0, 1),
            Some(p) => {
                let (a, b) = p
                    .split_once(',')
                    .ok_or_else(|| Failure::Usage("--pair expects `i,j`".into()))?;
                let parse = |x: &str| {
                    x.trim()
                        .parse::<usize>()
                        .map_err(|_| Failure::Usage(format!("--pair: `{x}` is not an index")))
                };
                let (a, b) = (
                    model_index(parse(a)?, &m, "--pair")?,
                    model_index(parse(b)?, &m, "--pair")?,
                );
                if a == b {
                    return Err(Failure::Usage("--pair needs two different models".into()));
                }
                (a, b)
            }
        };
        let values = pair_curve(&m, i, j, &policy, args.horizon).map_err(runtime)?;
        write_bc_csv(&mut buf, &values).map_err(runtime)?;
    }
    out.bytes(&buf)
}

fn generate(kind: GenKind, path: &Path, out: &Output) -> Outcome {
    let text = read(path)?;
    let invalid = |e: String| Failure::Invalid(format!("{}: {e}", path.display()));
    let m = match kind {
        GenKind::Grid => {
            let spec: GridSpec = serde_json::from_str(&text).map_err(|e| invalid(e.to_string()))?;
            gen_grid(&spec).map_err(|e| invalid(e.to_string()))?
        }
        GenKind::Recsys => {
            let spec: RecSysSpec = serde_json::from_str(&text).map_err(|e| invalid(e.to_string()))?;
            gen_recsys(&spec).map_err(|e| invalid(e.to_string()))?
        }
    };
    out.text(&serialize_mmdp(&m))
}
