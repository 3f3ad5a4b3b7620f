//! In-process simulation: the server and every site run on their own thread,
//! wired together with the in-memory transport. The exact same code paths
//! and frame bytes are exercised as over TCP.

use std::time::Duration;

use super::server::{run_server, ServerAgents, ServerConfig};
use super::site::{run_site, SiteConfig, SiteOutcome};
use super::transport::{memory_listener, Listener};
use super::ProtocolError;
use crate::aggregator::RecommenderConfig;
use crate::agents::AgentBundle;
use crate::analyzer::fnv1a;
use crate::gate::GateConfig;
use crate::metrics::HarmonizationReport;
use crate::ontology::Ontology;
use crate::table::DatasetTable;

pub struct SimulationOptions {
    pub recommender: RecommenderConfig,
    pub seed: u64,
    pub n_samples: usize,
    pub round_timeout: Duration,
    pub gate: GateConfig,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        SimulationOptions {
            recommender: RecommenderConfig::default(),
            seed: 42,
            n_samples: 5,
            round_timeout: Duration::from_secs(60),
            gate: GateConfig::default(),
        }
    }
}

/// Each site derives its own sampling seed from the shared base seed, so
/// per-site randomness is stable regardless of scheduling.
pub fn site_seed(base: u64, dataset_id: &str) -> u64 {
    base.wrapping_add(fnv1a(dataset_id.as_bytes()))
}

/// Run a full session in-process. Returns the server report and the
/// harmonized tables, sorted by dataset id.
pub fn run_simulation(
    tables: Vec<DatasetTable>,
    options: &SimulationOptions,
    ontology: &Ontology,
    server_agents: &ServerAgents,
    site_agents: &(dyn Fn() -> AgentBundle + Sync),
) -> Result<(HarmonizationReport, Vec<DatasetTable>), ProtocolError> {
    let (listener, connector) = memory_listener();
    run_session(Box::new(listener), move || {
        connector
            .connect()
            .map(|c| Box::new(c) as Box<dyn super::transport::Connection>)
    }, tables, options, ontology, server_agents, site_agents)
}

/// Transport-generic session driver; the acceptance suite also runs it over
/// TCP loopback to check report equivalence.
pub fn run_session(
    listener: Box<dyn Listener>,
    dial: impl Fn() -> Result<Box<dyn super::transport::Connection>, ProtocolError> + Sync,
    tables: Vec<DatasetTable>,
    options: &SimulationOptions,
    ontology: &Ontology,
    server_agents: &ServerAgents,
    site_agents: &(dyn Fn() -> AgentBundle + Sync),
) -> Result<(HarmonizationReport, Vec<DatasetTable>), ProtocolError> {
    let server_config = ServerConfig {
        site_count: tables.len(),
        recommender: options.recommender.clone(),
        round_timeout: options.round_timeout,
        seed: options.seed,
    };

    std::thread::scope(|scope| {
        let server = scope.spawn(|| run_server(listener, server_agents, &server_config, ontology));

        let mut site_handles = Vec::new();
        for table in tables {
            let dial = &dial;
            let site_agents = &site_agents;
            let site_config = SiteConfig {
                n_samples: options.n_samples,
                seed: site_seed(options.seed, &table.dataset_id),
                gate: options.gate.clone(),
                round_timeout: options.round_timeout,
            };
            site_handles.push(scope.spawn(move || -> Result<SiteOutcome, ProtocolError> {
                let mut conn = dial()?;
                run_site(conn.as_mut(), table, ontology, &site_agents(), &site_config)
            }));
        }

        let mut harmonized: Vec<DatasetTable> = Vec::new();
        let mut site_error: Option<ProtocolError> = None;
        for handle in site_handles {
            match handle.join().expect("site thread panicked") {
                Ok(outcome) => harmonized.push(outcome.table),
                Err(e) => site_error = Some(site_error.take().unwrap_or(e)),
            }
        }
        let report = match server.join().expect("server thread panicked") {
            Ok(r) => r,
            Err(e) => return Err(site_error.unwrap_or(e)),
        };
        if let Some(e) = site_error {
            return Err(e);
        }
        harmonized.sort_by(|a, b| a.dataset_id.cmp(&b.dataset_id));
        Ok((report, harmonized))
    })
}
