//! Command-line entry points: `simulate`, `server`, `site`, `analyze`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use privfusion::aggregator::{RecommenderConfig, SingletonPolicy};
use privfusion::agents::AgentBundle;
use privfusion::analyzer::build_metadata;
use privfusion::gate::{check_outbound, redact_and_report, GateConfig, GateError};
use privfusion::llm::{LlmClient, LlmConfig};
use privfusion::metrics::canonical_json;
use privfusion::ontology::Ontology;
use privfusion::protocol::server::{run_server, ServerAgents, ServerConfig};
use privfusion::protocol::simulate::{run_simulation, site_seed, SimulationOptions};
use privfusion::protocol::site::{run_site, SiteConfig};
use privfusion::protocol::transport::{TcpConnection, TcpListenerTransport};
use privfusion::protocol::{ConvergedReason, ProtocolError};
use privfusion::table::{load_csv, write_csv};

const EXIT_OK: u8 = 0;
const EXIT_USAGE: u8 = 1;
const EXIT_MAX_ITERATIONS: u8 = 2;
const EXIT_TIMEOUT: u8 = 3;
const EXIT_GATE_ABORT: u8 = 4;

#[derive(Parser)]
#[command(name = "privfusion", about = "Privacy-preserving federated schema harmonization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default, Clone)]
struct CommonOpts {
    /// RNG seed for synthetic sampling (default 42).
    #[arg(long)]
    seed: Option<u64>,
    /// Iteration cap T (default 20).
    #[arg(long)]
    max_iters: Option<u32>,
    /// Clustering name-similarity threshold (default 0.5).
    #[arg(long)]
    theta: Option<f64>,
    /// What to do with features unique to one dataset (default keep).
    #[arg(long, value_parser = parse_singleton)]
    singleton_policy: Option<SingletonPolicy>,
    /// Synthetic sample rows per submission (default 5, minimum 1).
    #[arg(long)]
    n_samples: Option<usize>,
    /// Round timeout in seconds (default 60).
    #[arg(long)]
    timeout_secs: Option<u64>,
    /// Use LLM agents via PRIVFUSION_LLM_URL / PRIVFUSION_LLM_KEY.
    #[arg(long)]
    llm: bool,
    /// JSON config file with the same keys as the flags; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn parse_singleton(s: &str) -> Result<SingletonPolicy, String> {
    match s {
        "keep" => Ok(SingletonPolicy::Keep),
        "drop" => Ok(SingletonPolicy::Drop),
        other => Err(format!("expected 'keep' or 'drop', got '{other}'")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the whole protocol in one process over the in-memory transport.
    Simulate {
        /// At least two CSV dataset paths.
        datasets: Vec<PathBuf>,
        /// Output directory for harmonized CSVs and reports.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Run the aggregation server over TCP.
    Server {
        #[arg(long, default_value = "127.0.0.1:7700")]
        listen: String,
        /// Number of sites to wait for.
        #[arg(long)]
        sites: usize,
        /// Where to write the report files.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Run one site over TCP; writes `<csv>.harmonized.csv` next to the input.
    Site {
        #[arg(long)]
        server: String,
        #[arg(long)]
        csv: PathBuf,
        /// Defaults to the CSV file stem.
        #[arg(long)]
        site_id: Option<String>,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Extract, gate-check and print one dataset's metadata as JSON.
    Analyze {
        csv: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
}

/// Config-file form of the common options; same keys as the flags.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    max_iters: Option<u32>,
    theta: Option<f64>,
    singleton_policy: Option<SingletonPolicy>,
    canonical_date_format: Option<String>,
    n_samples: Option<usize>,
    timeout_secs: Option<u64>,
    llm: Option<bool>,
}

/// Flags merged over the optional config file, with defaults filled in.
struct Settings {
    seed: u64,
    n_samples: usize,
    timeout: Duration,
    llm: bool,
    recommender: RecommenderConfig,
}

fn load_settings(common: &CommonOpts) -> Result<Settings, String> {
    let file: FileConfig = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
            serde_json::from_str(&text)
                .map_err(|e| format!("invalid config {}: {e}", path.display()))?
        }
        None => FileConfig::default(),
    };

    let defaults = RecommenderConfig::default();
    let n_samples = common.n_samples.or(file.n_samples).unwrap_or(5);
    if n_samples < 1 {
        return Err("--n-samples must be at least 1".into());
    }
    let max_iterations = common.max_iters.or(file.max_iters).unwrap_or(defaults.max_iterations);
    if max_iterations < 1 {
        return Err("--max-iters must be at least 1".into());
    }
    let theta = common.theta.or(file.theta).unwrap_or(defaults.theta);
    if !(0.0..=1.0).contains(&theta) {
        return Err("--theta must be within [0, 1]".into());
    }
    Ok(Settings {
        seed: common.seed.or(file.seed).unwrap_or(42),
        n_samples,
        timeout: Duration::from_secs(common.timeout_secs.or(file.timeout_secs).unwrap_or(60)),
        llm: common.llm || file.llm.unwrap_or(false),
        recommender: RecommenderConfig {
            theta,
            singleton_policy: common
                .singleton_policy
                .or(file.singleton_policy)
                .unwrap_or(defaults.singleton_policy),
            canonical_date_format: file
                .canonical_date_format
                .unwrap_or(defaults.canonical_date_format),
            max_iterations,
        },
    })
}

fn llm_client(settings: &Settings) -> Result<Option<Arc<LlmClient>>, String> {
    if !settings.llm {
        return Ok(None);
    }
    let config = LlmConfig::from_env()
        .ok_or_else(|| format!("--llm requires {}", privfusion::llm::ENV_URL))?;
    LlmClient::new(config)
        .map(|c| Some(Arc::new(c)))
        .map_err(|e| e.to_string())
}

fn site_agents(client: &Option<Arc<LlmClient>>) -> AgentBundle {
    match client {
        Some(c) => AgentBundle::llm(c.clone()),
        None => AgentBundle::baseline(),
    }
}

fn server_agents(client: &Option<Arc<LlmClient>>) -> ServerAgents {
    match client {
        Some(c) => ServerAgents::llm(c.clone()),
        None => ServerAgents::baseline(),
    }
}

fn dataset_id_for(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string())
}

fn protocol_exit(e: &ProtocolError) -> u8 {
    match e {
        ProtocolError::Timeout(_) => EXIT_TIMEOUT,
        ProtocolError::GateAbort(_) => EXIT_GATE_ABORT,
        _ => EXIT_USAGE,
    }
}

fn fail(message: impl std::fmt::Display, code: u8) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(code)
}

fn write_reports(
    out: &Path,
    report: &privfusion::metrics::HarmonizationReport,
) -> Result<(), String> {
    std::fs::create_dir_all(out).map_err(|e| format!("cannot create {}: {e}", out.display()))?;
    let write = |name: &str, content: String| {
        std::fs::write(out.join(name), content)
            .map_err(|e| format!("cannot write {name}: {e}"))
    };
    write("report.json", report.to_json())?;
    write("report.csv", report.to_csv())?;
    write("report.md", report.to_markdown())?;
    Ok(())
}

fn cmd_simulate(datasets: &[PathBuf], out: &Path, common: &CommonOpts) -> ExitCode {
    if datasets.len() < 2 {
        return fail("simulate needs at least two dataset paths", EXIT_USAGE);
    }
    let settings = match load_settings(common) {
        Ok(s) => s,
        Err(e) => return fail(e, EXIT_USAGE),
    };
    let client = match llm_client(&settings) {
        Ok(c) => c,
        Err(e) => return fail(e, EXIT_USAGE),
    };

    let mut tables = Vec::new();
    for path in datasets {
        match load_csv(path, &dataset_id_for(path)) {
            Ok(t) => tables.push(t),
            Err(e) => return fail(format!("{}: {e}", path.display()), EXIT_USAGE),
        }
    }
    let ids: std::collections::BTreeSet<&str> =
        tables.iter().map(|t| t.dataset_id.as_str()).collect();
    if ids.len() != tables.len() {
        return fail("dataset file stems must be unique", EXIT_USAGE);
    }

    let options = SimulationOptions {
        recommender: settings.recommender.clone(),
        seed: settings.seed,
        n_samples: settings.n_samples,
        round_timeout: settings.timeout,
        gate: GateConfig::default(),
    };
    let ontology = Ontology::bundled();
    let agents = server_agents(&client);
    let result = run_simulation(tables, &options, &ontology, &agents, &|| {
        site_agents(&client)
    });
    let (report, harmonized) = match result {
        Ok(r) => r,
        Err(e) => {
            let code = protocol_exit(&e);
            return fail(e, code);
        }
    };

    if let Err(e) = write_reports(out, &report) {
        return fail(e, EXIT_USAGE);
    }
    for table in &harmonized {
        let path = out.join(format!("{}.harmonized.csv", table.dataset_id));
        if let Err(e) = write_csv(table, &path) {
            return fail(format!("{}: {e}", path.display()), EXIT_USAGE);
        }
    }
    println!(
        "{} after {} iterations, {} transformations, {} common features",
        if report.converged { "converged" } else { "stopped at the iteration cap" },
        report.total_iterations,
        report.total_transformations,
        report.common_features_final.len()
    );
    if report.converged {
        ExitCode::from(EXIT_OK)
    } else {
        ExitCode::from(EXIT_MAX_ITERATIONS)
    }
}

fn cmd_server(listen: &str, sites: usize, out: &Path, common: &CommonOpts) -> ExitCode {
    let settings = match load_settings(common) {
        Ok(s) => s,
        Err(e) => return fail(e, EXIT_USAGE),
    };
    let client = match llm_client(&settings) {
        Ok(c) => c,
        Err(e) => return fail(e, EXIT_USAGE),
    };
    if sites < 1 {
        return fail("--sites must be at least 1", EXIT_USAGE);
    }
    let addr = match listen.parse() {
        Ok(a) => a,
        Err(e) => return fail(format!("invalid listen address '{listen}': {e}"), EXIT_USAGE),
    };
    let listener = match TcpListenerTransport::bind(addr) {
        Ok(l) => l,
        Err(e) => return fail(e, EXIT_USAGE),
    };
    match listener.local_addr() {
        Ok(a) => eprintln!("listening on {a}, waiting for {sites} site(s)"),
        Err(_) => {}
    }
    let server_config = ServerConfig {
        site_count: sites,
        recommender: settings.recommender.clone(),
        round_timeout: settings.timeout,
        seed: settings.seed,
    };
    let agents = server_agents(&client);
    let report = match run_server(Box::new(listener), &agents, &server_config, &Ontology::bundled())
    {
        Ok(r) => r,
        Err(e) => {
            let code = protocol_exit(&e);
            return fail(e, code);
        }
    };
    if let Err(e) = write_reports(out, &report) {
        return fail(e, EXIT_USAGE);
    }
    println!("{}", report.to_markdown());
    if report.converged {
        ExitCode::from(EXIT_OK)
    } else {
        ExitCode::from(EXIT_MAX_ITERATIONS)
    }
}

fn cmd_site(server: &str, csv: &Path, site_id: Option<&str>, common: &CommonOpts) -> ExitCode {
    let settings = match load_settings(common) {
        Ok(s) => s,
        Err(e) => return fail(e, EXIT_USAGE),
    };
    let client = match llm_client(&settings) {
        Ok(c) => c,
        Err(e) => return fail(e, EXIT_USAGE),
    };
    let id = site_id
        .map(|s| s.to_string())
        .unwrap_or_else(|| dataset_id_for(csv));
    let table = match load_csv(csv, &id) {
        Ok(t) => t,
        Err(e) => return fail(format!("{}: {e}", csv.display()), EXIT_USAGE),
    };
    let addr = match server.parse() {
        Ok(a) => a,
        Err(e) => return fail(format!("invalid server address '{server}': {e}"), EXIT_USAGE),
    };
    let mut conn = match TcpConnection::connect(addr) {
        Ok(c) => c,
        Err(e) => return fail(e, EXIT_USAGE),
    };
    let site_config = SiteConfig {
        n_samples: settings.n_samples,
        seed: site_seed(settings.seed, &id),
        gate: GateConfig::default(),
        round_timeout: settings.timeout,
    };
    let agents = site_agents(&client);
    let outcome = match run_site(&mut conn, table, &Ontology::bundled(), &agents, &site_config) {
        Ok(o) => o,
        Err(e) => {
            let code = protocol_exit(&e);
            return fail(e, code);
        }
    };

    // "<input>.harmonized.csv" next to the input file.
    let mut name = csv
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.push_str(".harmonized.csv");
    let out_path = csv.parent().unwrap_or_else(|| Path::new(".")).join(name);
    if let Err(e) = write_csv(&outcome.table, &out_path) {
        return fail(format!("{}: {e}", out_path.display()), EXIT_USAGE);
    }
    println!(
        "site '{id}': {} iterations, {} actions applied, wrote {}",
        outcome.iterations,
        outcome.actions_applied,
        out_path.display()
    );
    match outcome.reason {
        ConvergedReason::Converged => ExitCode::from(EXIT_OK),
        ConvergedReason::MaxIterations => ExitCode::from(EXIT_MAX_ITERATIONS),
    }
}

fn cmd_analyze(csv: &Path, common: &CommonOpts) -> ExitCode {
    let settings = match load_settings(common) {
        Ok(s) => s,
        Err(e) => return fail(e, EXIT_USAGE),
    };
    let client = match llm_client(&settings) {
        Ok(c) => c,
        Err(e) => return fail(e, EXIT_USAGE),
    };
    let table = match load_csv(csv, &dataset_id_for(csv)) {
        Ok(t) => t,
        Err(e) => return fail(format!("{}: {e}", csv.display()), EXIT_USAGE),
    };
    let ontology = Ontology::bundled();
    let agents = site_agents(&client);
    let metadata = match build_metadata(
        &table,
        &ontology,
        &agents,
        settings.n_samples,
        1,
        site_seed(settings.seed, &table.dataset_id),
    ) {
        Ok(m) => m,
        Err(e) => return fail(e, EXIT_USAGE),
    };
    let gate = GateConfig::default();
    let verdict = check_outbound(&metadata, &table, &gate);
    let metadata = match redact_and_report(&verdict, &metadata, &table, &gate) {
        Ok(m) => m,
        Err(e @ GateError::Unredactable(_)) => return fail(e, EXIT_GATE_ABORT),
    };
    print!("{}", canonical_json(&metadata));
    ExitCode::from(EXIT_OK)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap exits 2 on usage errors by default; the exit-code contract wants 1.
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match &cli.command {
        Command::Simulate { datasets, out, common } => cmd_simulate(datasets, out, common),
        Command::Server { listen, sites, out, common } => cmd_server(listen, *sites, out, common),
        Command::Site { server, csv, site_id, common } => {
            cmd_site(server, csv, site_id.as_deref(), common)
        }
        Command::Analyze { csv, common } => cmd_analyze(csv, common),
    }
}
