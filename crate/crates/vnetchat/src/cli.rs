//! `vnetchat` command line.

use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use vnetchat_core::allocator::{solve, SolveStatus};
use vnetchat_core::eval::{rows_to_json, rows_to_tsv, run_sweep, EvalError};
use vnetchat_core::fixtures;
use vnetchat_core::intent::{load_dataset, Endpoints, ExtractorKind, IntentExtractor, LabeledSample};
use vnetchat_core::model::{load_topology, load_users, Placement, UserId, Weights};
use vnetchat_core::session::{
    create_session, load_scenario, InfeasibilityMode, Session, SessionConfig, SessionError, StepResult,
};

use crate::gateway::{self, ServeConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_UPSTREAM: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "vnetchat", version, about = "Chat-driven virtual network allocation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Solve one placement and routing instance.
    Solve {
        #[arg(long)]
        topology: String,
        #[arg(long)]
        users: String,
        /// w1,w2,w3
        #[arg(long, default_value = "1,0.01,0.05")]
        weights: String,
        /// Previous placement, a JSON map of user id to datacenter id.
        #[arg(long)]
        prev: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extract the update marker from one prompt.
    Interpret {
        #[arg(long)]
        text: String,
        #[arg(long, default_value = "keyword")]
        extractor: Kind,
        /// Labeled dataset used for training (svm) or few-shot examples (llm).
        #[arg(long, default_value = "appendix_a")]
        train: String,
        #[arg(long)]
        shots: Option<usize>,
    },
    /// Evaluate an extractor across training-set sizes.
    Eval {
        #[arg(long, default_value = "appendix_a")]
        dataset: String,
        #[arg(long, default_value = "keyword")]
        extractor: Kind,
        #[arg(long, value_delimiter = ',', default_value = "30,20,10,5,3")]
        train_sizes: Vec<usize>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = "tsv")]
        format: Format,
        /// Include wall-clock columns.
        #[arg(long)]
        timing: bool,
    },
    /// Replay a scripted prompt sequence.
    Replay {
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value = "internet2-like")]
        topology: String,
        #[arg(long)]
        users: String,
        #[arg(long, default_value = "arbitrated")]
        mode: Mode,
        #[arg(long, default_value = "keyword")]
        extractor: Kind,
        /// Print step results as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Interactive loop: each line is a prompt, each prompt is one chat step.
    Repl {
        #[arg(long, default_value = "internet2-like")]
        topology: String,
        #[arg(long, default_value = "single-user")]
        users: String,
        #[arg(long, default_value = "arbitrated")]
        mode: Mode,
        #[arg(long, default_value = "keyword")]
        extractor: Kind,
    },
    /// Run the HTTP gateway.
    Serve {
        #[arg(long, env = "VNET_LISTEN_ADDR", default_value = "127.0.0.1:8080")]
        addr: String,
        /// Built console assets.
        #[arg(long = "static", env = "VNET_CONSOLE_DIR")]
        static_dir: Option<PathBuf>,
        #[arg(long)]
        auto_step_ms: Option<u64>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Kind {
    Keyword,
    Svm,
    Llm,
}

impl From<Kind> for ExtractorKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Keyword => ExtractorKind::Keyword,
            Kind::Svm => ExtractorKind::Svm,
            Kind::Llm => ExtractorKind::Llm,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Mode {
    Arbitrated,
    PaperReplay,
}

impl From<Mode> for InfeasibilityMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Arbitrated => InfeasibilityMode::Arbitrated,
            Mode::PaperReplay => InfeasibilityMode::PaperReplay,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Format {
    Tsv,
    Json,
}

/// Error carrying its exit code; printed as one `error: <code>: <message>` line.
#[derive(Debug)]
pub struct Failure {
    pub exit: i32,
    pub code: &'static str,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            exit: EXIT_USAGE,
            code: "usage",
            message: message.into(),
        }
    }

    fn upstream(message: impl Into<String>) -> Self {
        Failure {
            exit: EXIT_UPSTREAM,
            code: "upstream-unavailable",
            message: message.into(),
        }
    }

    fn infeasible(message: impl Into<String>) -> Self {
        Failure {
            exit: EXIT_INFEASIBLE,
            code: "infeasible",
            message: message.into(),
        }
    }
}

impl From<SessionError> for Failure {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::InitialInfeasible => Failure::infeasible(e.to_string()),
            other => Failure::usage(other.to_string()),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Unavailable(_) => Failure::upstream(e.to_string()),
            other => Failure::usage(other.to_string()),
        }
    }
}

type CliResult = Result<i32, Failure>;

/// Reads a file, or a bundled fixture when no such file exists.
fn read_input(arg: &str) -> Result<Vec<u8>, Failure> {
    let path = Path::new(arg);
    if path.exists() {
        return std::fs::read(path).map_err(|e| Failure::usage(format!("{arg}: {e}")));
    }
    fixtures::by_name(arg)
        .map(|s| s.as_bytes().to_vec())
        .ok_or_else(|| Failure::usage(format!("{arg}: no such file or bundled fixture")))
}

fn parse_weights(s: &str) -> Result<Weights, Failure> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::usage(format!("weights: {e}")))?;
    let [w1, w2, w3] = parts[..] else {
        return Err(Failure::usage("weights: expected w1,w2,w3"));
    };
    Weights::new(w1, w2, w3).map_err(|e| Failure::usage(e.to_string()))
}

fn load_samples(arg: &str) -> Result<Vec<LabeledSample>, Failure> {
    load_dataset(&read_input(arg)?).map_err(|e| Failure::usage(e.to_string()))
}

fn build(kind: ExtractorKind, training: &[LabeledSample], endpoints: &Endpoints) -> Result<Arc<dyn IntentExtractor>, Failure> {
    if kind == ExtractorKind::Llm && endpoints.llm_endpoint.is_none() {
        return Err(Failure::upstream("VNET_LLM_ENDPOINT is not set"));
    }
    vnetchat_core::intent::build_extractor(kind, training, endpoints).map_err(|e| Failure::usage(e.to_string()))
}

fn new_session(topology: &str, users: &str, config: SessionConfig) -> Result<Session, Failure> {
    let t = load_topology(&read_input(topology)?).map_err(|e| Failure::usage(e.to_string()))?;
    let (users, params) = load_users(&read_input(users)?).map_err(|e| Failure::usage(e.to_string()))?;
    Ok(create_session(t, users, params, config)?)
}

fn cmd_solve(topology: &str, users: &str, weights: &str, prev: Option<&Path>, out: Option<&Path>) -> CliResult {
    let t = load_topology(&read_input(topology)?).map_err(|e| Failure::usage(e.to_string()))?;
    let (users, params) = load_users(&read_input(users)?).map_err(|e| Failure::usage(e.to_string()))?;
    let w = parse_weights(weights)?;
    let prev: Placement = match prev {
        Some(p) => serde_json::from_slice(&read_input(&p.to_string_lossy())?)
            .map_err(|e| Failure::usage(format!("prev: {e}")))?,
        None => Placement::new(),
    };
    let outcome = solve(&t, &users, &params, &prev, &w).map_err(|e| Failure::usage(e.to_string()))?;
    let doc = serde_json::to_string_pretty(&outcome).expect("outcome serializes");
    match out {
        Some(p) => std::fs::write(p, format!("{doc}\n")).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?,
        None => println!("{doc}"),
    }
    if outcome.status == SolveStatus::Infeasible {
        return Err(Failure::infeasible("no allocation satisfies the constraints"));
    }
    Ok(EXIT_OK)
}

fn cmd_interpret(text: &str, kind: ExtractorKind, train: &str, shots: Option<usize>) -> CliResult {
    let mut training = load_samples(train)?;
    if let Some(n) = shots {
        training.truncate(n);
    }
    let extractor = build(kind, &training, &Endpoints::from_env())?;
    let ex = extractor.extract(text).map_err(|e| Failure::usage(e.to_string()))?;
    if let Some(reason) = ex.diagnostics.unavailable {
        return Err(Failure::upstream(reason));
    }
    println!("{}", serde_json::to_string(&ex.marker).expect("marker serializes"));
    if ex.diagnostics.syntax_error {
        eprintln!("warning: syntax-error: no legal marker object in the response; using no change");
    }
    Ok(EXIT_OK)
}

fn fmt1(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.1}"))
}

/// One table row per user and step, columns mirroring the single-user results table.
fn print_table(out: &mut impl Write, s: &Session, steps: &[StepResult]) -> std::io::Result<()> {
    writeln!(
        out,
        "k\tuser\tprompt\tmarker\taccepted\tcpu_param\tlatency_bound\tactual_cpu\tactual_latency\tstatus"
    )?;
    let rows = std::iter::once((0, &s.initial)).chain(steps.iter().map(|r| (r.step + 1, r)));
    for (k, r) in rows {
        for u in &s.users {
            write_row(out, k, u.id, r)?;
        }
    }
    Ok(())
}

fn write_row(out: &mut impl Write, k: usize, u: UserId, r: &StepResult) -> std::io::Result<()> {
    let mine: Vec<_> = r.prompts.iter().filter(|p| p.user == u).collect();
    let join = |f: &dyn Fn(&vnetchat_core::session::PromptRecord) -> String| {
        if mine.is_empty() {
            "-".to_string()
        } else {
            mine.iter().map(|p| f(p)).collect::<Vec<_>>().join("; ")
        }
    };
    let p = r.params_after.get(&u);
    let status = match r.status {
        SolveStatus::Optimal => "optimal",
        SolveStatus::Infeasible => "(Infeasible)",
    };
    writeln!(
        out,
        "{k}\t{u}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{status}",
        join(&|p| p.text.clone()),
        join(&|p| p.marker.to_string()),
        join(&|p| if p.accepted { "accepted" } else { "rejected" }.to_string()),
        fmt1(p.map(|p| p.cpu_param)),
        fmt1(p.map(|p| p.latency_bound)),
        fmt1(r.measurement.as_ref().and_then(|m| m.actual_cpu.get(&u).copied())),
        fmt1(r.measurement.as_ref().and_then(|m| m.actual_latency.get(&u).copied())),
    )
}

fn step_degraded(r: &StepResult) -> Option<String> {
    r.prompts.iter().find_map(|p| p.diagnostics.unavailable.clone())
}

fn cmd_replay(scenario: &str, topology: &str, users: &str, mode: InfeasibilityMode, kind: ExtractorKind, json: bool) -> CliResult {
    let script = load_scenario(&read_input(scenario)?)?;
    let config = SessionConfig {
        mode,
        extractor: kind,
        ..Default::default()
    };
    let mut s = new_session(topology, users, config)?;
    let extractor = build(kind, &fixtures::appendix_a(), &Endpoints::from_env())?;
    let steps = vnetchat_core::session::replay(&mut s, &script, extractor.as_ref())?;
    let mut out = std::io::stdout().lock();
    if json {
        let doc = serde_json::json!({ "initial": s.initial, "steps": steps });
        writeln!(out, "{}", serde_json::to_string_pretty(&doc).expect("steps serialize"))
    } else {
        print_table(&mut out, &s, &steps)
    }
    .map_err(|e| Failure::usage(e.to_string()))?;
    if let Some(reason) = steps.iter().find_map(step_degraded) {
        eprintln!("warning: upstream-unavailable: {reason}");
    }
    Ok(EXIT_OK)
}

fn cmd_repl(topology: &str, users: &str, mode: InfeasibilityMode, kind: ExtractorKind) -> CliResult {
    let config = SessionConfig {
        mode,
        extractor: kind,
        ..Default::default()
    };
    let mut s = new_session(topology, users, config)?;
    let extractor = build(kind, &fixtures::appendix_a(), &Endpoints::from_env())?;
    let mut user = s.users.first().map(|u| u.id);
    let mut out = std::io::stdout().lock();
    let io = |e: std::io::Error| Failure::usage(e.to_string());
    print_table(&mut out, &s, &[]).map_err(io)?;
    writeln!(out, "# type a prompt, ':user N' to switch user, ':quit' to exit").map_err(io)?;
    for line in std::io::stdin().lock().lines() {
        let line = line.map_err(io)?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line == ":quit" || line == ":q" {
            break;
        }
        if let Some(id) = line.strip_prefix(":user") {
            match id.trim().parse::<u32>().map(UserId) {
                Ok(id) if s.users.iter().any(|u| u.id == id) => user = Some(id),
                _ => eprintln!("error: usage: unknown user '{}'", id.trim()),
            }
            continue;
        }
        let Some(u) = user else {
            eprintln!("error: usage: session has no users");
            continue;
        };
        s.submit_prompt(u, line)?;
        let r = s.run_step_with(extractor.as_ref())?;
        for u in &s.users {
            write_row(&mut out, r.step + 1, u.id, &r).map_err(io)?;
        }
        out.flush().map_err(io)?;
    }
    Ok(EXIT_OK)
}

fn cmd_serve(addr: &str, static_dir: Option<PathBuf>, auto_step_ms: Option<u64>) -> CliResult {
    let addr: SocketAddr = addr.parse().map_err(|e| Failure::usage(format!("addr '{addr}': {e}")))?;
    let config = ServeConfig {
        static_dir,
        auto_step_ms,
        ..ServeConfig::from_env()
    };
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::usage(e.to_string()))?;
    rt.block_on(gateway::serve(addr, config))
        .map_err(|e| Failure::usage(format!("serve {addr}: {e}")))?;
    Ok(EXIT_OK)
}

pub fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Solve {
            topology,
            users,
            weights,
            prev,
            out,
        } => cmd_solve(&topology, &users, &weights, prev.as_deref(), out.as_deref()),
        Command::Interpret {
            text,
            extractor,
            train,
            shots,
        } => cmd_interpret(&text, extractor.into(), &train, shots),
        Command::Eval {
            dataset,
            extractor,
            train_sizes,
            seed,
            format,
            timing,
        } => {
            let data = load_samples(&dataset)?;
            let rows = run_sweep(&data, extractor.into(), &train_sizes, seed, &Endpoints::from_env())?;
            match format {
                Format::Tsv => print!("{}", rows_to_tsv(&rows, timing)),
                Format::Json => println!("{}", rows_to_json(&rows, timing)),
            }
            Ok(EXIT_OK)
        }
        Command::Replay {
            scenario,
            topology,
            users,
            mode,
            extractor,
            json,
        } => cmd_replay(&scenario, &topology, &users, mode.into(), extractor.into(), json),
        Command::Repl {
            topology,
            users,
            mode,
            extractor,
        } => cmd_repl(&topology, &users, mode.into(), extractor.into()),
        Command::Serve {
            addr,
            static_dir,
            auto_step_ms,
        } => cmd_serve(&addr, static_dir, auto_step_ms),
    }
}

/// Parses `args`, runs the command, and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return EXIT_OK;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: usage: {first}");
            return EXIT_USAGE;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}: {}", f.code, f.message.replace('\n', " "));
            f.exit
        }
    }
}
