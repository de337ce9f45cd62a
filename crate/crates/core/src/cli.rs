//! The `tir` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 backend failure, 3 evaluation
//! failure. Every command echoes a `replay:` line to stderr carrying its
//! full flag set, defaults included.

use std::fmt;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{ArgMatches, Args, Command, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{BackendRegistry, BackendsFile, RetryPolicy};
use crate::benchgen::{generate_llm_grounded_suite, load_suite, PromptCase, Suite, SuiteFormat, Task};
use crate::eval::{
    aggregate, aggregate_external_scores, check_scene, cohens_kappa, emit_report, load_annotation_csv, CaseResult,
    ReportFormat,
};
use crate::refine::{select_final, ConstraintScorer, FinalSelection, Prompt, RefineError, Refiner, SessionConfig, Trajectory};
use crate::service::{self, AppState};
use crate::sim::{scene_from_svg, ErrorModel};
use crate::store::{BatchLayout, Store};

#[derive(Debug, Parser)]
#[command(name = "tir", version, about = "Closed-loop prompt refinement for text-to-image generators")]
pub struct Cli {
    /// Backends file declaring HTTP generators and critics.
    #[arg(long, global = true, env = "TIR_CONFIG")]
    pub config: Option<PathBuf>,
    /// Store directory for blobs, session logs and annotations.
    #[arg(long, global = true, env = "TIR_STORE", default_value = "tir-data")]
    pub store: PathBuf,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Run one refinement session.
    Run(RunArgs),
    /// Generate or run a benchmark suite.
    #[command(subcommand)]
    Bench(BenchCmd),
    /// Score bench results into a report.
    Eval(EvalArgs),
    /// Cohen's kappa between two annotators.
    Kappa(KappaArgs),
    /// Serve the session API over HTTP.
    Serve(ServeArgs),
    /// Mean and std of externally computed per-run scores.
    Scores(ScoresArgs),
    /// Export annotation batches or recorded annotations.
    #[command(subcommand)]
    Export(ExportCmd),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Select {
    Last,
    Best,
}

impl From<Select> for FinalSelection {
    fn from(s: Select) -> Self {
        match s {
            Select::Last => FinalSelection::Last,
            Select::Best => FinalSelection::BestScored,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimArgs {
    /// Violation probability for every constraint class in the sim world.
    #[arg(long, default_value_t = 0.6)]
    pub sim_p: f64,
    /// Multiplier on that probability once a prompt states the constraint.
    #[arg(long, default_value_t = 0.2)]
    pub sim_discount: f64,
}

impl SimArgs {
    fn model(&self) -> Result<ErrorModel, CliError> {
        let m = ErrorModel::uniform(self.sim_p, self.sim_discount);
        m.validate().map_err(|e| CliError::usage(e.to_string()))?;
        Ok(m)
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub prompt: String,
    #[arg(long, default_value = "sim")]
    pub generator: String,
    #[arg(long, default_value = "sim")]
    pub critic: String,
    /// Refinement iterations after the initial render.
    #[arg(long, default_value_t = 3)]
    pub k: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Select::Last)]
    pub select: Select,
    /// Stop once the critic reports alignment without changing the prompt.
    #[arg(long)]
    pub early_stop: bool,
    #[command(flatten)]
    pub sim: SimArgs,
}

#[derive(Debug, Subcommand)]
pub enum BenchCmd {
    /// Write the 320-case compositional suite.
    Gen(BenchGenArgs),
    /// Run every case of a suite as a session.
    Run(BenchRunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct BenchGenArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SuiteFileFormat {
    NativeJson,
    PromptLines,
}

#[derive(Debug, Clone, Args)]
pub struct BenchRunArgs {
    #[arg(long)]
    pub suite: PathBuf,
    #[arg(long, value_enum, default_value_t = SuiteFileFormat::NativeJson)]
    pub suite_format: SuiteFileFormat,
    #[arg(long, default_value = "sim")]
    pub generator: String,
    #[arg(long, default_value = "sim")]
    pub critic: String,
    #[arg(long, default_value_t = 3)]
    pub k: u32,
    /// Base seed; each case derives its own from this and its id.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Select::Last)]
    pub select: Select,
    /// Directory receiving one `<case_id>.json` per case.
    #[arg(long)]
    pub out: PathBuf,
    /// Sessions run concurrently.
    #[arg(long, default_value_t = 4)]
    pub parallel: usize,
    #[command(flatten)]
    pub sim: SimArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long)]
    pub suite: PathBuf,
    #[arg(long, value_enum, default_value_t = SuiteFileFormat::NativeJson)]
    pub suite_format: SuiteFileFormat,
    /// json, csv or markdown_table.
    #[arg(long, default_value = "markdown_table")]
    pub format: ReportFormat,
    /// Score this round instead of the selected final round.
    #[arg(long)]
    pub round: Option<usize>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct KappaArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Bearer token required on API routes.
    #[arg(long, env = "TIR_SERVICE_TOKEN", hide_env_values = true)]
    pub token: Option<String>,
    #[command(flatten)]
    pub sim: SimArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ScoresArgs {
    #[arg(long)]
    pub file: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Layout {
    FinalOnly,
    BaseVsFinal,
}

#[derive(Debug, Subcommand)]
pub enum ExportCmd {
    /// Blinded annotation batch over finished sessions.
    Batch(ExportBatchArgs),
    /// Recorded annotations of one annotator as `annotator_id,case_id,score`.
    Annotations(ExportAnnotationsArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ExportBatchArgs {
    /// Session ids; all finished sessions when omitted.
    #[arg(long = "session", num_args = 1..)]
    pub sessions: Vec<String>,
    #[arg(long, value_enum, default_value_t = Layout::FinalOnly)]
    pub layout: Layout,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ExportAnnotationsArgs {
    #[arg(long)]
    pub annotator: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Success = 0,
    Usage = 1,
    Backend = 2,
    Eval = 3,
}

#[derive(Debug)]
pub struct CliError {
    pub code: ExitCode,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: ExitCode::Usage,
            message: message.into(),
        }
    }

    fn backend(message: impl Into<String>) -> Self {
        Self {
            code: ExitCode::Backend,
            message: message.into(),
        }
    }

    fn eval(message: impl Into<String>) -> Self {
        Self {
            code: ExitCode::Eval,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<RefineError> for CliError {
    fn from(e: RefineError) -> Self {
        match e {
            RefineError::Store(_) => CliError::usage(e.to_string()),
            _ => CliError::backend(e.to_string()),
        }
    }
}

/// Per-case output of `bench run`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCaseResult {
    pub case_id: String,
    pub task: Task,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_round: Option<usize>,
    /// Check of each round, when the images can be scored.
    #[serde(default)]
    pub rounds: Vec<CaseResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl BenchCaseResult {
    /// The scored result for `round`, or for the selected final round.
    pub fn result(&self, round: Option<usize>) -> Option<&CaseResult> {
        let i = match round {
            Some(r) => r.min(self.rounds.len().checked_sub(1)?),
            None => self.final_round?,
        };
        self.rounds.get(i)
    }
}

/// Seed for a bench case: the first eight bytes of a hash of the base seed
/// and the case id.
pub fn case_seed(base: u64, case_id: &str) -> u64 {
    let digest = Sha256::new()
        .chain_update(base.to_le_bytes())
        .chain_update(case_id.as_bytes())
        .finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let matches = match Cli::command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::Usage as i32 } else { 0 };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::Usage as i32;
        }
    };
    eprintln!("replay: {}", replay_line(&Cli::command(), &matches));
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code as i32
        }
    }
}

pub fn main() {
    let _ = tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .try_init();
    std::process::exit(run_from(std::env::args_os()));
}

/// Rebuilds the command line from parsed matches, defaults included.
pub fn replay_line(cmd: &Command, matches: &ArgMatches) -> String {
    let mut parts = vec![cmd.get_name().to_string()];
    push_args(cmd, matches, &mut parts);
    parts.join(" ")
}

fn push_args(cmd: &Command, matches: &ArgMatches, parts: &mut Vec<String>) {
    for arg in cmd.get_arguments() {
        let id = arg.get_id().as_str();
        if matches!(id, "help" | "version") {
            continue;
        }
        let Some(long) = arg.get_long() else { continue };
        let Ok(Some(values)) = matches.try_get_raw(id) else { continue };
        let values: Vec<String> = values.map(|v| v.to_string_lossy().into_owned()).collect();
        if arg.get_action().takes_values() {
            if arg.is_hide_env_values_set() {
                continue;
            }
            parts.push(format!("--{long}"));
            parts.extend(values.iter().map(|v| shell_quote(v)));
        } else if values.iter().any(|v| v == "true") {
            parts.push(format!("--{long}"));
        }
    }
    if let Some((name, sub_matches)) = matches.subcommand() {
        if let Some(sub) = cmd.find_subcommand(name) {
            parts.push(name.to_string());
            push_args(sub, sub_matches, parts);
        }
    }
}

fn shell_quote(v: &str) -> String {
    if !v.is_empty() && v.chars().all(|c| c.is_ascii_alphanumeric() || "-_./:=,+@".contains(c)) {
        v.to_string()
    } else {
        format!("'{}'", v.replace('\'', r"'\''"))
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Cmd::Run(args) => cmd_run(&cli.config, &cli.store, args),
        Cmd::Bench(BenchCmd::Gen(args)) => cmd_bench_gen(args),
        Cmd::Bench(BenchCmd::Run(args)) => cmd_bench_run(&cli.config, &cli.store, args),
        Cmd::Eval(args) => cmd_eval(args),
        Cmd::Kappa(args) => cmd_kappa(args),
        Cmd::Serve(args) => cmd_serve(&cli.config, &cli.store, args),
        Cmd::Scores(args) => cmd_scores(args),
        Cmd::Export(ExportCmd::Batch(args)) => cmd_export_batch(&cli.store, args),
        Cmd::Export(ExportCmd::Annotations(args)) => cmd_export_annotations(&cli.store, args),
    }
}

fn registry(config: &Option<PathBuf>, sim: &SimArgs) -> Result<BackendRegistry, CliError> {
    let mut reg = BackendRegistry::with_sim(sim.model()?);
    if let Some(path) = config {
        let file = BackendsFile::load(path).map_err(|e| CliError::usage(e.to_string()))?;
        reg.add_file(&file, |var| std::env::var(var).ok())
            .map_err(|e| CliError::usage(e.to_string()))?;
    }
    Ok(reg)
}

fn open_store(path: &Path) -> Result<Store, CliError> {
    Store::open(path).map_err(|e| CliError::usage(e.to_string()))
}

fn check_ids(reg: &BackendRegistry, generator: &str, critic: &str) -> Result<(), CliError> {
    if reg.generator(generator).is_none() {
        return Err(CliError::usage(format!(
            "unknown generator `{generator}` (known: {})",
            reg.generator_ids().join(", ")
        )));
    }
    if reg.critic(critic).is_none() {
        return Err(CliError::usage(format!(
            "unknown critic `{critic}` (known: {})",
            reg.critic_ids().join(", ")
        )));
    }
    Ok(())
}

/// Shows what a refinement changed: the appended tail when the new prompt
/// extends the old one, both prompts otherwise.
pub fn prompt_diff(old: &str, new: &str) -> String {
    if old == new {
        "  (unchanged)".into()
    } else if let Some(tail) = new.strip_prefix(old) {
        format!("  + {}", tail.trim_start_matches([';', ' ']))
    } else {
        format!("  - {old}\n  + {new}")
    }
}

fn cmd_run(config: &Option<PathBuf>, store_dir: &Path, args: RunArgs) -> Result<(), CliError> {
    let reg = registry(config, &args.sim)?;
    check_ids(&reg, &args.generator, &args.critic)?;
    let prompt = Prompt::new(args.prompt).map_err(|e| CliError::usage(e.to_string()))?;
    let store = open_store(store_dir)?;
    let generator = reg.generator(&args.generator).expect("checked");
    let critic = reg.critic(&args.critic).expect("checked");
    let session = SessionConfig {
        max_iterations: args.k,
        seed: args.seed,
        final_selection: args.select.into(),
        generator_id: args.generator.clone(),
        critic_id: args.critic.clone(),
        early_stop: args.early_stop,
        ..SessionConfig::default()
    };
    let scorer = ConstraintScorer;
    let mut refiner = Refiner::new(generator.as_ref(), critic.as_ref(), &store);
    if matches!(args.select, Select::Best) {
        refiner = refiner.with_scorer(&scorer);
    }
    let traj = refiner.run(prompt, session)?;
    print_summary(&store, &traj)
}

fn print_summary(store: &Store, traj: &Trajectory) -> Result<(), CliError> {
    println!("session {}", traj.session_id);
    let mut previous: Option<&str> = None;
    for round in &traj.rounds {
        let score = round.score.map(|s| format!(" score={s:.3}")).unwrap_or_default();
        println!("round {} blob={}{score}", round.index, round.image.blob_id);
        match previous {
            None => println!("  {}", round.prompt),
            Some(old) => println!("{}", prompt_diff(old, round.prompt.as_str())),
        }
        if let Some(f) = &round.feedback {
            for line in f.as_str().lines() {
                println!("  > {line}");
            }
        }
        previous = Some(round.prompt.as_str());
    }
    let chosen = select_final(traj, traj.config.final_selection).map_err(|e| CliError::eval(e.to_string()))?;
    let blob = &traj.rounds[chosen].image.blob_id;
    let path = store.blob_file(blob).map_err(|e| CliError::usage(e.to_string()))?;
    println!("final round {chosen} blob {blob}");
    println!("final image {}", path.display());
    Ok(())
}

fn cmd_bench_gen(args: BenchGenArgs) -> Result<(), CliError> {
    let suite = generate_llm_grounded_suite(args.seed);
    suite
        .write(&args.out)
        .map_err(|e| CliError::usage(format!("{}: {e}", args.out.display())))?;
    println!("wrote {} cases to {}", suite.cases.len(), args.out.display());
    Ok(())
}

fn read_suite(path: &Path, format: SuiteFileFormat) -> Result<Suite, CliError> {
    let format = match format {
        SuiteFileFormat::NativeJson => SuiteFormat::NativeJson,
        SuiteFileFormat::PromptLines => SuiteFormat::PromptLines,
    };
    load_suite(path, format).map_err(|e| CliError::usage(e.to_string()))
}

/// Runs one suite case to completion and checks every round it produced.
pub fn run_bench_case(
    reg: &BackendRegistry,
    store: &Store,
    case: &PromptCase,
    template: &SessionConfig,
    retry: RetryPolicy,
) -> BenchCaseResult {
    let seed = case_seed(template.seed, &case.id);
    let mut out = BenchCaseResult {
        case_id: case.id.clone(),
        task: case.task,
        seed,
        session_id: None,
        final_round: None,
        rounds: Vec::new(),
        error: None,
    };
    let (Some(generator), Some(critic)) = (reg.generator(&template.generator_id), reg.critic(&template.critic_id)) else {
        out.error = Some("unknown backend".into());
        return out;
    };
    let config = SessionConfig {
        seed,
        ..template.clone()
    };
    let scorer = ConstraintScorer;
    let mut refiner = Refiner::new(generator.as_ref(), critic.as_ref(), store).with_retry(retry);
    if template.final_selection == FinalSelection::BestScored {
        refiner = refiner.with_scorer(&scorer);
    }
    let traj = match refiner.run(case.prompt.clone(), config) {
        Ok(t) => t,
        Err(e) => {
            out.error = Some(e.to_string());
            return out;
        }
    };
    out.session_id = Some(traj.session_id.clone());
    out.final_round = select_final(&traj, template.final_selection).ok();
    for round in &traj.rounds {
        let scene = store
            .get_blob(&round.image.blob_id)
            .ok()
            .and_then(|(_, bytes)| scene_from_svg(&bytes));
        match scene {
            Some(scene) => out.rounds.push(check_scene(&case.id, &scene, &case.ground_truth)),
            None => {
                out.rounds.clear();
                out.error = Some(format!("round {} image carries no scene; score it externally", round.index));
                break;
            }
        }
    }
    out
}

fn cmd_bench_run(config: &Option<PathBuf>, store_dir: &Path, args: BenchRunArgs) -> Result<(), CliError> {
    let reg = registry(config, &args.sim)?;
    check_ids(&reg, &args.generator, &args.critic)?;
    let suite = read_suite(&args.suite, args.suite_format)?;
    let store = open_store(store_dir)?;
    std::fs::create_dir_all(&args.out).map_err(|e| CliError::usage(format!("{}: {e}", args.out.display())))?;
    let template = SessionConfig {
        max_iterations: args.k,
        seed: args.seed,
        final_selection: args.select.into(),
        generator_id: args.generator.clone(),
        critic_id: args.critic.clone(),
        ..SessionConfig::default()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.parallel.max(1))
        .build()
        .map_err(|e| CliError::usage(e.to_string()))?;
    let mut results: Vec<BenchCaseResult> = pool.install(|| {
        suite
            .cases
            .par_iter()
            .map(|case| run_bench_case(&reg, &store, case, &template, RetryPolicy::default()))
            .collect()
    });
    results.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    let mut failed = 0;
    for r in &results {
        let path = args.out.join(format!("{}.json", r.case_id));
        let mut text = serde_json::to_string_pretty(r).expect("serializable");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        if let Some(e) = &r.error {
            failed += 1;
            eprintln!("{}: {e}", r.case_id);
        }
    }
    let passed = results.iter().filter(|r| r.result(None).is_some_and(|c| c.case_pass)).count();
    println!(
        "{} cases, {passed} pass, {failed} failed; results in {}",
        results.len(),
        args.out.display()
    );
    if failed > 0 {
        return Err(CliError::backend(format!("{failed} case(s) failed")));
    }
    Ok(())
}

/// Reads every `*.json` in `dir`, sorted by file name.
pub fn read_results(dir: &Path) -> Result<Vec<BenchCaseResult>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::eval(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read(p).map_err(|e| CliError::eval(format!("{}: {e}", p.display())))?;
            serde_json::from_slice(&text).map_err(|e| CliError::eval(format!("{}: {e}", p.display())))
        })
        .collect()
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let suite = read_suite(&args.suite, args.suite_format)?;
    let results = read_results(&args.results)?;
    let mut scored = Vec::with_capacity(results.len());
    for r in &results {
        match r.result(args.round) {
            Some(c) => scored.push(c.clone()),
            None => {
                return Err(CliError::eval(format!(
                    "{}: no scored result{}",
                    r.case_id,
                    r.error.as_ref().map(|e| format!(" ({e})")).unwrap_or_default()
                )))
            }
        }
    }
    let report = aggregate(&scored, &suite).map_err(|e| CliError::eval(e.to_string()))?;
    let bytes = emit_report(&report, args.format).map_err(|e| CliError::eval(e.to_string()))?;
    match &args.out {
        Some(path) => std::fs::write(path, &bytes).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?,
        None => print!("{}", String::from_utf8_lossy(&bytes)),
    }
    Ok(())
}

fn cmd_kappa(args: KappaArgs) -> Result<(), CliError> {
    let one = |path: &Path| {
        let mut sets = load_annotation_csv(path).map_err(|e| CliError::eval(e.to_string()))?;
        match sets.len() {
            1 => Ok(sets.remove(0)),
            n => Err(CliError::eval(format!("{}: expected one annotator, found {n}", path.display()))),
        }
    };
    let (a, b) = (one(&args.a)?, one(&args.b)?);
    let kappa = cohens_kappa(&a, &b).map_err(|e| CliError::eval(e.to_string()))?;
    println!("kappa {kappa:.4} ({} vs {})", a.annotator_id, b.annotator_id);
    Ok(())
}

fn cmd_serve(config: &Option<PathBuf>, store_dir: &Path, args: ServeArgs) -> Result<(), CliError> {
    let reg = registry(config, &args.sim)?;
    let store = Arc::new(open_store(store_dir)?);
    let mut state = AppState::new(reg, store);
    if let Some(token) = args.token {
        state = state.with_token(token);
    }
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::usage(e.to_string()))?;
    eprintln!("listening on http://{}", args.addr);
    runtime
        .block_on(service::serve(args.addr, Arc::new(state)))
        .map_err(|e| CliError::usage(format!("{}: {e}", args.addr)))
}

fn cmd_scores(args: ScoresArgs) -> Result<(), CliError> {
    let scores = aggregate_external_scores(&args.file).map_err(|e| CliError::eval(e.to_string()))?;
    for w in &scores.warnings {
        eprintln!("warning: {w}");
    }
    println!("prompt_id,runs,mean,std");
    for p in &scores.per_prompt {
        println!("{},{},{:.4},{:.4}", p.prompt_id, p.runs, p.mean, p.std);
    }
    println!("overall mean {:.4} ({} std)", scores.overall_mean, scores.std_kind);
    Ok(())
}

fn cmd_export_batch(store_dir: &Path, args: ExportBatchArgs) -> Result<(), CliError> {
    let store = open_store(store_dir)?;
    let sessions = if args.sessions.is_empty() {
        let mut ids = Vec::new();
        for id in store.session_ids().map_err(|e| CliError::usage(e.to_string()))? {
            if store.load_trajectory(&id).is_ok_and(|t| t.is_complete()) {
                ids.push(id);
            }
        }
        ids
    } else {
        args.sessions
    };
    let layout = match args.layout {
        Layout::FinalOnly => BatchLayout::FinalOnly,
        Layout::BaseVsFinal => BatchLayout::BaseVsFinal,
    };
    let batch = store
        .export_annotation_batch(&sessions, layout, args.seed, &args.out)
        .map_err(|e| CliError::usage(e.to_string()))?;
    println!("exported {} items to {}", batch.items.len(), args.out.display());
    Ok(())
}

fn cmd_export_annotations(store_dir: &Path, args: ExportAnnotationsArgs) -> Result<(), CliError> {
    let store = open_store(store_dir)?;
    let annotations = store.annotations().map_err(|e| CliError::usage(e.to_string()))?;
    let mut w = csv::Writer::from_path(&args.out).map_err(|e| CliError::usage(e.to_string()))?;
    let mut n = 0;
    let io = |e: csv::Error| CliError::usage(e.to_string());
    w.write_record(["annotator_id", "case_id", "score"]).map_err(io)?;
    for a in annotations.iter().filter(|a| a.annotator_id == args.annotator) {
        w.write_record([a.annotator_id.as_str(), a.case_id.as_str(), &a.score.to_string()])
            .map_err(io)?;
        n += 1;
    }
    w.flush().map_err(|e| CliError::usage(e.to_string()))?;
    println!("wrote {n} annotations to {}", args.out.display());
    Ok(())
}
