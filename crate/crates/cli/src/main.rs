mod inject;

use std::fs;
use std::io::{self, Read, Write};
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mvx::coordinator::{Server, ServerConfig, SessionConfig};
use mvx::eventlog::EventLog;
use mvx::pages;
use mvx::protocol::{self, Message};
use mvx::scenario::{simulate, Scenario, SimulateConfig, SimulateError};
use mvx::workload::{generate, GeneratorConfig, Workload};
use signal_hook::consts::{SIGINT, SIGTERM};
use thiserror::Error;

const EXIT_DIVERGENCE: u8 = 2;
const EXIT_PROTOCOL: u8 = 3;
const EXIT_USAGE: u8 = 4;

#[derive(Parser)]
#[command(name = "mvx", version, about = "Run two versions of an event-loop program side by side")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the coordinator (TCP lines and WebSocket at /mvx on one port).
    Serve(ServeArgs),
    /// Run a workload end to end against an in-process coordinator.
    Simulate(SimulateArgs),
    /// Print a seeded random workload for the demo page.
    Generate(GenerateArgs),
    /// Add the shim's loader tags to a static HTML page.
    Inject {
        input: PathBuf,
        /// Defaults to standard output.
        output: Option<PathBuf>,
    },
    /// Inspect a persisted event log.
    #[command(subcommand)]
    Log(LogCommand),
}

#[derive(Args)]
struct ServeArgs {
    /// Overridden by MVX_PORT when that is set.
    #[arg(long, default_value_t = 7070)]
    port: u16,
    #[arg(long, default_value_t = Ipv4Addr::LOCALHOST)]
    host: Ipv4Addr,
    /// Persist each session's log here when it ends and on shutdown.
    #[arg(long)]
    log_dir: Option<PathBuf>,
    /// Relay follower acknowledgements to the leader.
    #[arg(long)]
    ack: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    RecordOnly,
    Update,
    MvxRtt,
}

impl From<ScenarioArg> for Scenario {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::RecordOnly => Scenario::RecordOnly,
            ScenarioArg::Update => Scenario::Update,
            ScenarioArg::MvxRtt => Scenario::MvxRtt,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Workload script, or `-` for standard input.
    workload: PathBuf,
    #[arg(long, value_enum, default_value = "update")]
    scenario: ScenarioArg,
    /// Seeds the leader's random values.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    ack: bool,
    /// Loopback port for the in-process coordinator; 0 picks a free one.
    /// Overridden by MVX_PORT when that is set.
    #[arg(long, default_value_t = 0)]
    port: u16,
    #[arg(long)]
    log_dir: Option<PathBuf>,
    /// Page the workload runs against.
    #[arg(long, default_value = "demo", value_parser = clap::builder::PossibleValuesParser::new(pages::NAMES))]
    page: String,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = GeneratorConfig::default().steps)]
    steps: usize,
    /// Put a `promote` step halfway through.
    #[arg(long)]
    promote_midway: bool,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum LogCommand {
    /// Print every record as one line.
    Dump { file: PathBuf },
    /// Count, size and bandwidth over the log's recorded time span.
    Stats {
        file: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Simulate(#[from] SimulateError),
    #[error("{0}")]
    Protocol(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Simulate(SimulateError::Divergence { .. }) => EXIT_DIVERGENCE,
            CliError::Simulate(_) | CliError::Protocol(_) => EXIT_PROTOCOL,
        }
    }
}

fn usage(context: &str, path: &Path) -> impl FnOnce(io::Error) -> CliError {
    let what = format!("{context} {}", path.display());
    move |e| CliError::Usage(format!("{what}: {e}"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Serve(args) => serve(args),
        Command::Simulate(args) => run_simulate(args),
        Command::Generate(args) => run_generate(args),
        Command::Inject { input, output } => run_inject(&input, output.as_deref()),
        Command::Log(cmd) => run_log(cmd),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mvx: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// MVX_PORT, when set, wins over `--port`.
fn port_override(flag: u16) -> Result<u16, CliError> {
    match std::env::var("MVX_PORT") {
        Ok(v) => v.trim().parse().map_err(|_| CliError::Usage(format!("MVX_PORT is not a port number: {v:?}"))),
        Err(std::env::VarError::NotPresent) => Ok(flag),
        Err(e) => Err(CliError::Usage(format!("MVX_PORT: {e}"))),
    }
}

fn serve(args: ServeArgs) -> Result<(), CliError> {
    let port = port_override(args.port)?;
    if let Some(dir) = &args.log_dir {
        fs::create_dir_all(dir).map_err(usage("cannot create", dir))?;
    }
    let config = ServerConfig {
        session: SessionConfig { ack_mode: args.ack, ..Default::default() },
        log_dir: args.log_dir,
    };
    let server = Server::bind((args.host, port), config).map_err(|e| CliError::Protocol(e.to_string()))?;
    let handle = server.spawn();
    for sig in [SIGTERM, SIGINT] {
        signal_hook::flag::register(sig, handle.stop_flag()).map_err(|e| CliError::Protocol(e.to_string()))?;
    }
    eprintln!("mvx: coordinator listening on {} (WebSocket path {})", handle.addr(), mvx::coordinator::WS_PATH);
    let summary = handle.wait();
    for path in &summary.persisted {
        eprintln!("mvx: wrote {}", path.display());
    }
    eprintln!("mvx: stopped after {} session(s)", summary.sessions.len());
    Ok(())
}

fn read_input(path: &Path) -> Result<String, CliError> {
    if path == Path::new("-") {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s).map_err(usage("cannot read", path))?;
        return Ok(s);
    }
    fs::read_to_string(path).map_err(usage("cannot read", path))
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, text).map_err(usage("cannot write", p)),
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Usage(format!("cannot write output: {e}"))),
    }
}

fn run_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let text = read_input(&args.workload)?;
    let workload = Workload::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", args.workload.display())))?;
    let page = pages::by_name(&args.page).ok_or_else(|| CliError::Usage(format!("unknown page {}", args.page)))?;
    let config = SimulateConfig {
        scenario: args.scenario.into(),
        page,
        seed: args.seed,
        ack: args.ack,
        port: port_override(args.port)?,
        log_dir: args.log_dir,
    };
    let out = simulate(&workload, &config).inspect_err(|_| eprintln!("mvx: failed with --seed {}", args.seed))?;
    if args.json {
        println!("{}", out.report.to_json());
    } else {
        println!("scenario        {}", out.scenario);
        println!("{}", out.report);
        println!("{:<16}{}", "leader hash", out.leader_hash);
        if let Some(h) = &out.follower_hash {
            println!("{:<16}{}", "follower hash", h);
        }
    }
    Ok(())
}

fn run_generate(args: GenerateArgs) -> Result<(), CliError> {
    let config = GeneratorConfig { steps: args.steps, promote_midway: args.promote_midway, ..Default::default() };
    let text = format!("# mvx generate --seed {} --steps {}\n{}", args.seed, args.steps, generate(args.seed, config));
    write_output(args.output.as_deref(), &text)
}

fn run_inject(input: &Path, output: Option<&Path>) -> Result<(), CliError> {
    let html = read_input(input)?;
    let result = inject::inject(&html).map_err(|e| CliError::Usage(format!("{}: {e}", input.display())))?;
    if let inject::Injected::AlreadyInjected(_) = result {
        eprintln!("mvx: {} is already injected; leaving it unchanged", input.display());
    }
    write_output(output, result.html())
}

fn run_log(cmd: LogCommand) -> Result<(), CliError> {
    let load = |file: &Path| EventLog::load(file).map_err(|e| CliError::Protocol(format!("{}: {e}", file.display())));
    match cmd {
        LogCommand::Dump { file } => {
            let log = load(&file)?;
            let mut out = String::new();
            for record in log.records() {
                let line = protocol::encode(&Message::Event { record: record.clone() })
                    .map_err(|e| CliError::Protocol(e.to_string()))?;
                out.push_str(&String::from_utf8_lossy(&line));
            }
            write_output(None, &out)
        }
        LogCommand::Stats { file, json } => {
            let log = load(&file)?;
            let span = match (log.records().first(), log.records().last()) {
                (Some(a), Some(b)) => b.wall_clock_ms - a.wall_clock_ms,
                _ => 0,
            };
            let stats = log.stats(log.started_at_ms() + span);
            if json {
                println!("{}", serde_json::to_string_pretty(&stats).expect("stats serialize"));
            } else {
                println!("{:<16}{}", "events", stats.event_count);
                println!("{:<16}{}", "bytes", stats.bytes);
                println!("{:<16}{:.3} s", "duration", stats.duration_sec);
                println!("{:<16}{:.3} KB/s", "bandwidth", stats.bandwidth_kbps);
            }
            Ok(())
        }
    }
}
