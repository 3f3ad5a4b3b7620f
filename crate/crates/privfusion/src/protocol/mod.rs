//! The wire protocol between sites and the aggregation server.
//!
//! Messages are single-line JSON objects (NDJSON) with a `variant` tag; see
//! `docs/protocol.md` for the exact schemas.

pub mod framing;
pub mod server;
pub mod simulate;
pub mod site;
pub mod transport;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregator::TransformationPlan;
use crate::analyzer::DatasetMetadata;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("round timed out: {0}")]
    Timeout(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("message exceeds the 16 MiB frame limit ({0} bytes)")]
    Oversize(usize),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("privacy gate abort: {0}")]
    GateAbort(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergedReason {
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalStats {
    pub total_iterations: u32,
    pub total_transformations: usize,
    pub common_feature_count: usize,
}

/// Message bodies; the `variant` tag names the message kind on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant")]
pub enum MessageBody {
    Hello {
        site_id: String,
        protocol_version: u32,
    },
    /// Server acknowledgement of a Hello.
    HelloAck {
        site_count: u32,
    },
    MetadataSubmission {
        metadata: DatasetMetadata,
    },
    PlanDelivery {
        plan: TransformationPlan,
    },
    ConvergedNotice {
        reason: ConvergedReason,
        stats: FinalStats,
    },
    ErrorMsg {
        code: String,
        detail: String,
    },
}

/// The envelope every line on the wire carries. The flattened body comes
/// first so serialized objects lead with the `variant` tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolMessage {
    #[serde(flatten)]
    pub body: MessageBody,
    pub message_id: u64,
}

pub const PROTOCOL_VERSION: u32 = 1;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_leads_with_variant_tag() {
        let msg = ProtocolMessage {
            body: MessageBody::Hello {
                site_id: "afg".into(),
                protocol_version: PROTOCOL_VERSION,
            },
            message_id: 1,
        };
        let line = serde_json::to_string(&msg).unwrap();
        assert!(
            line.starts_with(r#"{"variant":"Hello""#),
            "unexpected wire form: {line}"
        );
        let back: ProtocolMessage = serde_json::from_str(&line).unwrap();
        assert_eq!(back, msg);
    }

    #[test]
    fn all_variants_round_trip() {
        let bodies = vec![
            MessageBody::Hello {
                site_id: "x".into(),
                protocol_version: 1,
            },
            MessageBody::HelloAck { site_count: 2 },
            MessageBody::PlanDelivery {
                plan: TransformationPlan {
                    dataset_id: "x".into(),
                    iteration: 3,
                    actions: vec![],
                },
            },
            MessageBody::ConvergedNotice {
                reason: ConvergedReason::MaxIterations,
                stats: FinalStats {
                    total_iterations: 20,
                    total_transformations: 9,
                    common_feature_count: 2,
                },
            },
            MessageBody::ErrorMsg {
                code: "late_join".into(),
                detail: "session already started".into(),
            },
        ];
        for (i, body) in bodies.into_iter().enumerate() {
            let msg = ProtocolMessage {
                body,
                message_id: i as u64,
            };
            let line = serde_json::to_string(&msg).unwrap();
            let back: ProtocolMessage = serde_json::from_str(&line).unwrap();
            assert_eq!(back, msg);
        }
    }
}
