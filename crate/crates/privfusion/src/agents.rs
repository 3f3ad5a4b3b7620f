//! Agent interfaces for the pluggable analysis and harmonization steps.
//!
//! Every role has a deterministic baseline implementation; LLM-backed
//! implementations are drop-in replacements behind the same traits, and
//! callers fall back to the baseline when an agent fails.

use thiserror::Error;

use crate::aggregator::{FeatureCluster, RecommenderConfig, TransformationPlan};
use crate::analyzer::{DatasetMetadata, FeatureDescriptor, FeatureRelationship};
use crate::ontology::Ontology;
use crate::table::DatasetTable;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("network error: {0}")]
    Network(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("agent timed out: {0}")]
    Timeout(String),
    #[error("schema violation: {0}")]
    Schema(String),
}

/// Produces the free-text dataset description.
pub trait DescribeAgent: Send + Sync {
    fn describe(&self, table: &DatasetTable) -> Result<String, AgentError>;
}

/// Produces the semantic description text for one feature.
pub trait FeatureTextAgent: Send + Sync {
    fn feature_description(
        &self,
        table: &DatasetTable,
        descriptor: &FeatureDescriptor,
        ontology: &Ontology,
    ) -> Result<String, AgentError>;
}

/// Extracts the dataset topic list.
pub trait TopicsAgent: Send + Sync {
    fn topics(
        &self,
        table: &DatasetTable,
        descriptors: &[FeatureDescriptor],
        ontology: &Ontology,
    ) -> Result<Vec<String>, AgentError>;
}

/// Infers relationships between features.
pub trait RelationshipsAgent: Send + Sync {
    fn relationships(
        &self,
        table: &DatasetTable,
        descriptors: &[FeatureDescriptor],
        ontology: &Ontology,
    ) -> Result<Vec<FeatureRelationship>, AgentError>;
}

/// Server-side: groups features across datasets into clusters.
pub trait ClusterAgent: Send + Sync {
    fn cluster(
        &self,
        all_metadata: &[DatasetMetadata],
        config: &RecommenderConfig,
        ontology: &Ontology,
    ) -> Result<Vec<FeatureCluster>, AgentError>;
}

/// Server-side: turns clusters into per-site transformation plans.
pub trait RecommendAgent: Send + Sync {
    fn recommend(
        &self,
        clusters: &[FeatureCluster],
        all_metadata: &[DatasetMetadata],
        config: &RecommenderConfig,
        ontology: &Ontology,
    ) -> Result<Vec<TransformationPlan>, AgentError>;
}

/// The site-side agent set used by metadata assembly.
pub struct AgentBundle {
    pub describe: Box<dyn DescribeAgent>,
    pub feature_text: Box<dyn FeatureTextAgent>,
    pub topics: Box<dyn TopicsAgent>,
    pub relationships: Box<dyn RelationshipsAgent>,
}

impl AgentBundle {
    pub fn baseline() -> Self {
        AgentBundle {
            describe: Box::new(crate::analyzer::BaselineDescribe),
            feature_text: Box::new(crate::analyzer::BaselineFeatureText),
            topics: Box::new(crate::analyzer::BaselineTopics),
            relationships: Box::new(crate::analyzer::BaselineRelationships),
        }
    }
}
