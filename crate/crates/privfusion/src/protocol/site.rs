//! The site-side protocol loop: extract metadata, pass the privacy gate,
//! submit, apply whatever plan comes back, repeat until the server says stop.

use std::time::Duration;

use super::transport::Connection;
use super::{ConvergedReason, FinalStats, MessageBody, ProtocolError, ProtocolMessage, PROTOCOL_VERSION};
use crate::agents::AgentBundle;
use crate::analyzer::build_metadata;
use crate::engine::apply_plan;
use crate::gate::{check_outbound, redact_and_report, GateConfig};
use crate::ontology::Ontology;
use crate::table::DatasetTable;

pub struct SiteConfig {
    pub n_samples: usize,
    pub seed: u64,
    pub gate: GateConfig,
    pub round_timeout: Duration,
}

pub struct SiteOutcome {
    pub table: DatasetTable,
    pub iterations: u32,
    pub actions_applied: usize,
    pub reason: ConvergedReason,
    pub stats: FinalStats,
}

/// Run one site to completion over an established connection.
pub fn run_site(
    conn: &mut dyn Connection,
    mut table: DatasetTable,
    ontology: &Ontology,
    agents: &AgentBundle,
    config: &SiteConfig,
) -> Result<SiteOutcome, ProtocolError> {
    let timeout = config.round_timeout;
    let mut next_message_id = 0u64;
    let mut send = |conn: &mut dyn Connection, body: MessageBody| {
        let msg = ProtocolMessage {
            body,
            message_id: next_message_id,
        };
        next_message_id += 1;
        conn.send(&msg)
    };

    send(
        conn,
        MessageBody::Hello {
            site_id: table.dataset_id.clone(),
            protocol_version: PROTOCOL_VERSION,
        },
    )?;
    match conn.recv(timeout)?.body {
        MessageBody::HelloAck { .. } => {}
        MessageBody::ErrorMsg { code, detail } => {
            return Err(ProtocolError::Protocol(format!(
                "server rejected handshake ({code}): {detail}"
            )))
        }
        other => {
            return Err(ProtocolError::Protocol(format!(
                "expected HelloAck, got {other:?}"
            )))
        }
    }

    let mut actions_applied = 0usize;
    let mut iteration = 1u32;
    loop {
        // Mix the iteration into the sampling seed so regenerated samples
        // differ between rounds but stay reproducible.
        let seed = config.seed.wrapping_add(iteration as u64);
        let metadata = build_metadata(&table, ontology, agents, config.n_samples, iteration, seed)
            .map_err(|e| ProtocolError::Protocol(format!("metadata extraction failed: {e}")))?;

        let verdict = check_outbound(&metadata, &table, &config.gate);
        let metadata = match redact_and_report(&verdict, &metadata, &table, &config.gate) {
            Ok(m) => m,
            Err(e) => {
                let _ = send(
                    conn,
                    MessageBody::ErrorMsg {
                        code: "gate_abort".into(),
                        detail: e.to_string(),
                    },
                );
                return Err(ProtocolError::GateAbort(e.to_string()));
            }
        };

        send(conn, MessageBody::MetadataSubmission { metadata })?;

        match conn.recv(timeout)?.body {
            MessageBody::PlanDelivery { plan } => {
                let outcome = apply_plan(&table, &plan)
                    .map_err(|e| ProtocolError::Protocol(e.to_string()))?;
                for w in &outcome.cell_warnings {
                    log::warn!(
                        "{}: {} row {}: {}",
                        table.dataset_id,
                        w.feature,
                        w.row,
                        w.detail
                    );
                }
                for s in &outcome.skipped {
                    log::warn!(
                        "{}: skipped action {}: {}",
                        table.dataset_id,
                        s.index,
                        s.reason
                    );
                }
                actions_applied += outcome.applied;
                table = outcome.table;
                iteration += 1;
            }
            MessageBody::ConvergedNotice { reason, stats } => {
                return Ok(SiteOutcome {
                    table,
                    iterations: iteration,
                    actions_applied,
                    reason,
                    stats,
                });
            }
            MessageBody::ErrorMsg { code, detail } => {
                return Err(ProtocolError::Protocol(format!(
                    "server error ({code}): {detail}"
                )))
            }
            other => {
                return Err(ProtocolError::Protocol(format!(
                    "expected PlanDelivery or ConvergedNotice, got {other:?}"
                )))
            }
        }
    }
}
