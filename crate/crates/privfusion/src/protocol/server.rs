//! The aggregation server: accepts a fixed roster of sites, then runs
//! lockstep rounds of metadata collection, clustering and plan delivery
//! until the schemas converge or the iteration cap is hit.

use std::collections::BTreeMap;
use std::time::Duration;

use super::transport::{Connection, Listener};
use super::{
    ConvergedReason, FinalStats, MessageBody, ProtocolError, ProtocolMessage, PROTOCOL_VERSION,
};
use crate::aggregator::{
    check_partition, cluster_features, is_converged, recommend_transformations,
    validate_plan_shape, RecommenderConfig, TransformationPlan,
};
use crate::agents::{ClusterAgent, RecommendAgent};
use crate::analyzer::DatasetMetadata;
use crate::metrics::{common_features, HarmonizationReport, IterationRecord};
use crate::ontology::Ontology;

pub struct ServerAgents {
    pub cluster: Box<dyn ClusterAgent>,
    pub recommend: Box<dyn RecommendAgent>,
}

impl ServerAgents {
    pub fn baseline() -> Self {
        ServerAgents {
            cluster: Box::new(crate::aggregator::BaselineCluster),
            recommend: Box::new(crate::aggregator::BaselineRecommend),
        }
    }
}

pub struct ServerConfig {
    pub site_count: usize,
    pub recommender: RecommenderConfig,
    pub round_timeout: Duration,
    /// Recorded in the report for reproducibility; sites own the actual RNG.
    pub seed: u64,
}

struct SiteLink {
    site_id: String,
    conn: Box<dyn Connection>,
    next_message_id: u64,
}

impl SiteLink {
    fn send(&mut self, body: MessageBody) -> Result<(), ProtocolError> {
        let msg = ProtocolMessage {
            body,
            message_id: self.next_message_id,
        };
        self.next_message_id += 1;
        self.conn.send(&msg)
    }
}

fn accept_roster(
    listener: &mut dyn Listener,
    site_count: usize,
    timeout: Duration,
) -> Result<Vec<SiteLink>, ProtocolError> {
    let mut links: Vec<SiteLink> = Vec::with_capacity(site_count);
    while links.len() < site_count {
        let mut conn = listener.accept(timeout)?;
        let msg = conn.recv(timeout)?;
        match msg.body {
            MessageBody::Hello {
                site_id,
                protocol_version,
            } => {
                if protocol_version != PROTOCOL_VERSION {
                    let _ = conn.send(&ProtocolMessage {
                        body: MessageBody::ErrorMsg {
                            code: "version_mismatch".into(),
                            detail: format!("server speaks version {PROTOCOL_VERSION}"),
                        },
                        message_id: 0,
                    });
                    return Err(ProtocolError::Protocol(format!(
                        "site '{site_id}' speaks protocol version {protocol_version}"
                    )));
                }
                if links.iter().any(|l| l.site_id == site_id) {
                    let _ = conn.send(&ProtocolMessage {
                        body: MessageBody::ErrorMsg {
                            code: "duplicate_site".into(),
                            detail: format!("site '{site_id}' already connected"),
                        },
                        message_id: 0,
                    });
                    return Err(ProtocolError::Protocol(format!(
                        "duplicate site id '{site_id}'"
                    )));
                }
                let mut link = SiteLink {
                    site_id,
                    conn,
                    next_message_id: 0,
                };
                link.send(MessageBody::HelloAck {
                    site_count: site_count as u32,
                })?;
                links.push(link);
            }
            other => {
                return Err(ProtocolError::Protocol(format!(
                    "expected Hello, got {other:?}"
                )))
            }
        }
    }
    links.sort_by(|a, b| a.site_id.cmp(&b.site_id));
    Ok(links)
}

/// Reject any connection arriving after the session roster is full.
fn spawn_late_join_rejector(mut listener: Box<dyn Listener>) {
    std::thread::spawn(move || loop {
        match listener.accept(Duration::from_secs(3600)) {
            Ok(mut conn) => {
                let _ = conn.send(&ProtocolMessage {
                    body: MessageBody::ErrorMsg {
                        code: "late_join".into(),
                        detail: "session already started".into(),
                    },
                    message_id: 0,
                });
            }
            Err(ProtocolError::Timeout(_)) => continue,
            Err(_) => break,
        }
    });
}

fn collect_metadata(
    links: &mut [SiteLink],
    iteration: u32,
    timeout: Duration,
) -> Result<Vec<DatasetMetadata>, ProtocolError> {
    let mut all = Vec::with_capacity(links.len());
    for link in links.iter_mut() {
        let msg = link.conn.recv(timeout)?;
        match msg.body {
            MessageBody::MetadataSubmission { metadata } => {
                if metadata.dataset_id != link.site_id {
                    return Err(ProtocolError::Protocol(format!(
                        "site '{}' submitted metadata for '{}'",
                        link.site_id, metadata.dataset_id
                    )));
                }
                if metadata.iteration != iteration {
                    return Err(ProtocolError::Protocol(format!(
                        "site '{}' submitted iteration {} during round {iteration}",
                        link.site_id, metadata.iteration
                    )));
                }
                all.push(metadata);
            }
            MessageBody::ErrorMsg { code, detail } => {
                return Err(ProtocolError::Protocol(format!(
                    "site '{}' reported {code}: {detail}",
                    link.site_id
                )))
            }
            other => {
                return Err(ProtocolError::Protocol(format!(
                    "expected MetadataSubmission, got {other:?}"
                )))
            }
        }
    }
    all.sort_by(|a, b| a.dataset_id.cmp(&b.dataset_id));
    Ok(all)
}

/// One clustering + recommendation pass with fallback to the baseline when a
/// pluggable agent fails or emits structurally invalid output.
pub fn plan_round(
    agents: &ServerAgents,
    all_metadata: &[DatasetMetadata],
    config: &RecommenderConfig,
    ontology: &Ontology,
) -> Vec<TransformationPlan> {
    let clusters = match agents.cluster.cluster(all_metadata, config, ontology) {
        Ok(c) => match check_partition(&c, all_metadata) {
            Ok(()) => c,
            Err(e) => {
                log::warn!("cluster agent output rejected ({e}), using baseline");
                cluster_features(all_metadata, config.theta)
            }
        },
        Err(e) => {
            log::warn!("cluster agent failed ({e}), using baseline");
            cluster_features(all_metadata, config.theta)
        }
    };

    let baseline = |clusters: &[_]| {
        let rec = recommend_transformations(clusters, all_metadata, config, ontology);
        for w in &rec.warnings {
            log::warn!("recommender: {w}");
        }
        rec.plans
    };
    match agents
        .recommend
        .recommend(&clusters, all_metadata, config, ontology)
    {
        Ok(plans) => {
            if let Some(err) = plans.iter().find_map(|p| validate_plan_shape(p).err()) {
                log::warn!("recommend agent output rejected ({err}), using baseline");
                baseline(&clusters)
            } else {
                plans
            }
        }
        Err(e) => {
            log::warn!("recommend agent failed ({e}), using baseline");
            baseline(&clusters)
        }
    }
}

/// Run a complete session over any listener. Consumes the listener so
/// late-joining connections keep being rejected while rounds run.
pub fn run_server(
    mut listener: Box<dyn Listener>,
    agents: &ServerAgents,
    server_config: &ServerConfig,
    ontology: &Ontology,
) -> Result<HarmonizationReport, ProtocolError> {
    let timeout = server_config.round_timeout;
    let mut links = accept_roster(listener.as_mut(), server_config.site_count, timeout)?;
    spawn_late_join_rejector(listener);

    let mut records: Vec<IterationRecord> = Vec::new();
    let mut total_transformations = 0usize;
    let final_metadata: Vec<DatasetMetadata>;
    let converged: bool;
    let max_iterations = server_config.recommender.max_iterations.max(1);

    let mut iteration = 1u32;
    loop {
        let all_metadata = collect_metadata(&mut links, iteration, timeout)?;
        let mut record = IterationRecord::from_metadata(iteration, &all_metadata);

        let plans = plan_round(agents, &all_metadata, &server_config.recommender, ontology);
        let by_site: BTreeMap<&str, &TransformationPlan> = plans
            .iter()
            .map(|p| (p.dataset_id.as_str(), p))
            .collect();
        record.transformations_issued = plans.iter().map(|p| p.actions.len()).sum();
        record.per_site_action_counts = links
            .iter()
            .map(|l| {
                (
                    l.site_id.clone(),
                    by_site.get(l.site_id.as_str()).map_or(0, |p| p.actions.len()),
                )
            })
            .collect();
        total_transformations += record.transformations_issued;
        records.push(record);

        let round_converged = is_converged(&plans);
        if round_converged || iteration >= max_iterations {
            converged = round_converged;
            final_metadata = all_metadata;
            let reason = if converged {
                ConvergedReason::Converged
            } else {
                ConvergedReason::MaxIterations
            };
            let stats = FinalStats {
                total_iterations: iteration,
                total_transformations,
                common_feature_count: common_features(&final_metadata).len(),
            };
            for link in links.iter_mut() {
                link.send(MessageBody::ConvergedNotice {
                    reason,
                    stats: stats.clone(),
                })?;
            }
            break;
        }

        for link in links.iter_mut() {
            let plan = by_site
                .get(link.site_id.as_str())
                .map(|p| (*p).clone())
                .unwrap_or(TransformationPlan {
                    dataset_id: link.site_id.clone(),
                    iteration,
                    actions: vec![],
                });
            link.send(MessageBody::PlanDelivery { plan })?;
        }
        iteration += 1;
    }

    Ok(HarmonizationReport {
        config: server_config.recommender.clone(),
        seed: server_config.seed,
        dataset_ids: links.iter().map(|l| l.site_id.clone()).collect(),
        records,
        total_iterations: iteration,
        total_transformations,
        common_features_final: common_features(&final_metadata),
        converged,
    })
}
