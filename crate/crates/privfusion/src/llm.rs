//! LLM-backed agent implementations speaking the OpenAI-compatible
//! chat-completions API. Every role validates the model output against the
//! same structural rules as the baseline; invalid output triggers a repair
//! prompt, and persistent failure surfaces as an `AgentError` so callers
//! fall back to the deterministic baseline.

use std::sync::Arc;
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use crate::agents::{
    AgentBundle, AgentError, ClusterAgent, DescribeAgent, FeatureTextAgent, RecommendAgent,
    RelationshipsAgent, TopicsAgent,
};
use crate::aggregator::{
    check_partition, validate_plan_shape, FeatureCluster, RecommenderConfig, TransformationPlan,
};
use crate::analyzer::{DatasetMetadata, FeatureDescriptor, FeatureRelationship};
use crate::ontology::Ontology;
use crate::protocol::server::ServerAgents;
use crate::table::DatasetTable;

pub const ENV_URL: &str = "PRIVFUSION_LLM_URL";
pub const ENV_KEY: &str = "PRIVFUSION_LLM_KEY";

#[derive(Debug, Clone)]
pub struct LlmConfig {
    /// Base URL; "/v1/chat/completions" is appended.
    pub endpoint_url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub temperature: f32,
    pub max_retries: u32,
    pub timeout: Duration,
}

impl LlmConfig {
    pub fn new(endpoint_url: impl Into<String>) -> Self {
        LlmConfig {
            endpoint_url: endpoint_url.into(),
            api_key: None,
            model: "default".to_string(),
            temperature: 0.0,
            max_retries: 3,
            timeout: Duration::from_secs(60),
        }
    }

    /// Read the endpoint from `PRIVFUSION_LLM_URL` / `PRIVFUSION_LLM_KEY`.
    pub fn from_env() -> Option<Self> {
        let url = std::env::var(ENV_URL).ok()?;
        let mut config = LlmConfig::new(url);
        config.api_key = std::env::var(ENV_KEY).ok();
        Some(config)
    }
}

// Role prompts; docs/prompts.md carries the narrative versions.
pub const PROMPT_DESCRIBE: &str = "You summarize tabular datasets. Given the schema and \
column types below, write one plain-text paragraph (max 120 words) describing what the \
dataset contains. Mention row count, the subject domain, and notable columns. Never quote \
cell values. Reply with the paragraph only.";

pub const PROMPT_FEATURE_TEXT: &str = "You describe one column of a tabular dataset. Given \
the column name, primitive type, format and candidate concept, reply with a single \
sentence describing the column's meaning. Never quote cell values. Reply with the \
sentence only.";

pub const PROMPT_TOPICS: &str = "You tag datasets with topics. Given the schema summary \
below, reply with a JSON array of at most 10 lowercase topic strings, most salient first. \
Reply with JSON only.";

pub const PROMPT_RELATIONSHIPS: &str = "You detect relationships between columns of one \
dataset. Given the column descriptors below, reply with a JSON array of objects \
{\"kind\": \"derives_from\"|\"aggregates\"|\"identifies\"|\"correlates\", \"source\": \
<column>, \"target\": <column>}. Use only listed column names. Reply with JSON only.";

pub const PROMPT_CLUSTER: &str = "You align features across datasets. Given per-dataset \
feature lists with semantic concept URIs, group features that denote the same real-world \
attribute. Every (dataset_id, feature_name) pair must appear in exactly one cluster. \
Reply with a JSON array of objects {\"cluster_id\": <int>, \"members\": [{\"dataset_id\": \
<id>, \"feature_name\": <name>}]}. Reply with JSON only.";

pub const PROMPT_RECOMMEND: &str = "You harmonize schemas. Given feature clusters and the \
configuration below, emit per-dataset transformation plans as a JSON array of objects \
{\"dataset_id\": <id>, \"iteration\": <int>, \"actions\": [<action>]}. Actions must use \
only the documented kinds (Rename, ReformatDate, CastType, MapValues, MergeFeatures, \
DropFeature, ScaleNumeric, AddConstantFeature) with their exact JSON fields. Never emit \
code, SQL, or any other vocabulary. Reply with JSON only.";

const REPAIR_PROMPT: &str = "Your previous reply was rejected. Reason: ";

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

pub struct LlmClient {
    config: LlmConfig,
    http: reqwest::blocking::Client,
}

impl LlmClient {
    pub fn new(config: LlmConfig) -> Result<Self, AgentError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| AgentError::Network(e.to_string()))?;
        Ok(LlmClient { config, http })
    }

    fn chat(&self, system: &str, user: &str) -> Result<String, AgentError> {
        let url = format!(
            "{}/v1/chat/completions",
            self.config.endpoint_url.trim_end_matches('/')
        );
        let body = json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        });
        let mut request = self.http.post(&url).json(&body);
        if let Some(key) = &self.config.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| {
            if e.is_timeout() {
                AgentError::Timeout(e.to_string())
            } else {
                AgentError::Network(e.to_string())
            }
        })?;
        let status = response.status();
        if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN
        {
            return Err(AgentError::Auth(format!("endpoint returned {status}")));
        }
        if !status.is_success() {
            return Err(AgentError::Network(format!("endpoint returned {status}")));
        }
        let parsed: ChatResponse = response
            .json()
            .map_err(|e| AgentError::Schema(format!("bad completion envelope: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| AgentError::Schema("completion has no choices".into()))
    }

    /// Ask, validate, and on rejection re-ask with the rejection reason
    /// appended, up to `max_retries` total attempts.
    fn chat_validated<T>(
        &self,
        system: &str,
        user: &str,
        validate: impl Fn(&str) -> Result<T, String>,
    ) -> Result<T, AgentError> {
        let attempts = self.config.max_retries.max(1);
        let mut prompt = user.to_string();
        let mut last_reason = String::new();
        for _ in 0..attempts {
            let reply = self.chat(system, &prompt)?;
            match validate(&reply) {
                Ok(value) => return Ok(value),
                Err(reason) => {
                    log::warn!("llm output rejected: {reason}");
                    prompt = format!("{user}\n\n{REPAIR_PROMPT}{reason}");
                    last_reason = reason;
                }
            }
        }
        Err(AgentError::Schema(format!(
            "output still invalid after {attempts} attempts: {last_reason}"
        )))
    }
}

/// Models often wrap JSON in markdown fences; strip them before parsing.
fn strip_fences(text: &str) -> &str {
    let trimmed = text.trim();
    let Some(rest) = trimmed.strip_prefix("```") else {
        return trimmed;
    };
    let rest = rest.strip_prefix("json").unwrap_or(rest);
    rest.trim_end_matches('`').trim()
}

fn schema_summary(table: &DatasetTable) -> String {
    let cols: Vec<String> = table
        .columns
        .iter()
        .map(|c| match &c.format_pattern {
            Some(f) => format!("{} ({}, format {})", c.name, c.primitive_type, f),
            None => format!("{} ({})", c.name, c.primitive_type),
        })
        .collect();
    format!(
        "dataset '{}', {} rows, columns: {}",
        table.dataset_id,
        table.row_count,
        cols.join("; ")
    )
}

pub struct LlmDescribe(pub Arc<LlmClient>);

impl DescribeAgent for LlmDescribe {
    fn describe(&self, table: &DatasetTable) -> Result<String, AgentError> {
        self.0
            .chat_validated(PROMPT_DESCRIBE, &schema_summary(table), |reply| {
                let text = reply.trim();
                if text.is_empty() {
                    Err("empty description".into())
                } else {
                    Ok(text.to_string())
                }
            })
    }
}

pub struct LlmFeatureText(pub Arc<LlmClient>);

impl FeatureTextAgent for LlmFeatureText {
    fn feature_description(
        &self,
        _table: &DatasetTable,
        descriptor: &FeatureDescriptor,
        ontology: &Ontology,
    ) -> Result<String, AgentError> {
        let concept = ontology
            .get(&descriptor.semantic_uri)
            .map(|c| c.label.as_str())
            .unwrap_or("none");
        let user = format!(
            "column '{}', type {}, format {:?}, candidate concept: {}",
            descriptor.name, descriptor.primitive_type, descriptor.format_pattern, concept
        );
        self.0.chat_validated(PROMPT_FEATURE_TEXT, &user, |reply| {
            let text = reply.trim();
            if text.is_empty() {
                Err("empty feature description".into())
            } else {
                Ok(text.to_string())
            }
        })
    }
}

pub struct LlmTopics(pub Arc<LlmClient>);

impl TopicsAgent for LlmTopics {
    fn topics(
        &self,
        table: &DatasetTable,
        _descriptors: &[FeatureDescriptor],
        _ontology: &Ontology,
    ) -> Result<Vec<String>, AgentError> {
        self.0
            .chat_validated(PROMPT_TOPICS, &schema_summary(table), |reply| {
                let topics: Vec<String> = serde_json::from_str(strip_fences(reply))
                    .map_err(|e| format!("not a JSON string array: {e}"))?;
                if topics.len() > 10 {
                    return Err(format!("{} topics exceeds the limit of 10", topics.len()));
                }
                if topics.iter().any(|t| t.trim().is_empty()) {
                    return Err("empty topic string".into());
                }
                Ok(topics)
            })
    }
}

pub struct LlmRelationships(pub Arc<LlmClient>);

impl RelationshipsAgent for LlmRelationships {
    fn relationships(
        &self,
        table: &DatasetTable,
        descriptors: &[FeatureDescriptor],
        _ontology: &Ontology,
    ) -> Result<Vec<FeatureRelationship>, AgentError> {
        let names: Vec<&str> = descriptors.iter().map(|d| d.name.as_str()).collect();
        let user = schema_summary(table);
        self.0
            .chat_validated(PROMPT_RELATIONSHIPS, &user, move |reply| {
                let rels: Vec<FeatureRelationship> = serde_json::from_str(strip_fences(reply))
                    .map_err(|e| format!("not a JSON relationship array: {e}"))?;
                for r in &rels {
                    if !names.contains(&r.source.as_str()) || !names.contains(&r.target.as_str())
                    {
                        return Err(format!(
                            "relationship references unknown feature '{}' or '{}'",
                            r.source, r.target
                        ));
                    }
                }
                Ok(rels)
            })
    }
}

impl AgentBundle {
    /// All four site roles backed by one LLM endpoint.
    pub fn llm(client: Arc<LlmClient>) -> Self {
        AgentBundle {
            describe: Box::new(LlmDescribe(client.clone())),
            feature_text: Box::new(LlmFeatureText(client.clone())),
            topics: Box::new(LlmTopics(client.clone())),
            relationships: Box::new(LlmRelationships(client)),
        }
    }
}

/// Wire form the cluster role replies with; members are resolved back
/// against the submitted metadata.
#[derive(Deserialize)]
struct WireCluster {
    cluster_id: u32,
    members: Vec<WireMember>,
}

#[derive(Deserialize)]
struct WireMember {
    dataset_id: String,
    feature_name: String,
}

pub struct LlmCluster(pub Arc<LlmClient>);

impl ClusterAgent for LlmCluster {
    fn cluster(
        &self,
        all_metadata: &[DatasetMetadata],
        _config: &RecommenderConfig,
        _ontology: &Ontology,
    ) -> Result<Vec<FeatureCluster>, AgentError> {
        let user = serde_json::to_string(
            &all_metadata
                .iter()
                .map(|m| {
                    json!({
                        "dataset_id": m.dataset_id,
                        "features": m.features.iter().map(|f| json!({
                            "name": f.name,
                            "type": f.primitive_type,
                            "semantic_uri": f.semantic_uri,
                        })).collect::<Vec<_>>(),
                    })
                })
                .collect::<Vec<_>>(),
        )
        .expect("metadata serializes");

        self.0.chat_validated(PROMPT_CLUSTER, &user, |reply| {
            let wire: Vec<WireCluster> = serde_json::from_str(strip_fences(reply))
                .map_err(|e| format!("not a JSON cluster array: {e}"))?;
            let mut clusters = Vec::with_capacity(wire.len());
            for w in wire {
                let mut members = Vec::with_capacity(w.members.len());
                for m in &w.members {
                    let descriptor = all_metadata
                        .iter()
                        .find(|meta| meta.dataset_id == m.dataset_id)
                        .and_then(|meta| meta.features.iter().find(|f| f.name == m.feature_name))
                        .ok_or_else(|| {
                            format!(
                                "unknown member ({}, {})",
                                m.dataset_id, m.feature_name
                            )
                        })?;
                    members.push(crate::aggregator::ClusterMember {
                        dataset_id: m.dataset_id.clone(),
                        feature_name: m.feature_name.clone(),
                        semantic_uri: descriptor.semantic_uri.clone(),
                        primitive_type: descriptor.primitive_type,
                        format_pattern: descriptor.format_pattern.clone(),
                    });
                }
                members.sort_by(|a, b| {
                    (&a.dataset_id, &a.feature_name).cmp(&(&b.dataset_id, &b.feature_name))
                });
                clusters.push(FeatureCluster {
                    cluster_id: w.cluster_id,
                    members,
                    representative_uri: None,
                    canonical_name: None,
                    canonical_format: None,
                });
            }
            check_partition(&clusters, all_metadata)?;
            Ok(clusters)
        })
    }
}

pub struct LlmRecommend(pub Arc<LlmClient>);

impl RecommendAgent for LlmRecommend {
    fn recommend(
        &self,
        clusters: &[FeatureCluster],
        all_metadata: &[DatasetMetadata],
        config: &RecommenderConfig,
        _ontology: &Ontology,
    ) -> Result<Vec<TransformationPlan>, AgentError> {
        let iteration = all_metadata.first().map(|m| m.iteration).unwrap_or(0);
        let known: Vec<&str> = all_metadata.iter().map(|m| m.dataset_id.as_str()).collect();
        let user = format!(
            "iteration: {iteration}\nconfig: {}\nclusters: {}",
            serde_json::to_string(config).expect("config serializes"),
            serde_json::to_string(clusters).expect("clusters serialize"),
        );
        self.0.chat_validated(PROMPT_RECOMMEND, &user, move |reply| {
            // The plan DSL is the only accepted vocabulary: anything that is
            // not pure JSON matching TransformationPlan is rejected here.
            let plans: Vec<TransformationPlan> = serde_json::from_str(strip_fences(reply))
                .map_err(|e| format!("not a JSON plan array: {e}"))?;
            for p in &plans {
                if !known.contains(&p.dataset_id.as_str()) {
                    return Err(format!("plan for unknown dataset '{}'", p.dataset_id));
                }
                validate_plan_shape(p)?;
            }
            Ok(plans)
        })
    }
}

impl ServerAgents {
    /// Both server roles backed by one LLM endpoint.
    pub fn llm(client: Arc<LlmClient>) -> Self {
        ServerAgents {
            cluster: Box::new(LlmCluster(client.clone())),
            recommend: Box::new(LlmRecommend(client)),
        }
    }
}
