//! Convergence metrics and the final harmonization report.
//!
//! Reports are emitted in a canonical form (sorted keys, floats rounded to
//! six decimals) so two runs with the same seed produce byte-identical files.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::aggregator::RecommenderConfig;
use crate::analyzer::DatasetMetadata;
use crate::ontology::UNMAPPED;

/// Jaccard similarity of two feature-name sets; two empty schemas are
/// trivially identical.
pub fn jaccard_similarity(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    let union = a.union(b).count();
    inter as f64 / union as f64
}

/// (name, concept URI) pairs present in every dataset; unmapped features
/// never count as common.
pub fn common_features(all_metadata: &[DatasetMetadata]) -> Vec<(String, String)> {
    let mut iter = all_metadata.iter();
    let Some(first) = iter.next() else {
        return Vec::new();
    };
    let pair_set = |m: &DatasetMetadata| -> BTreeSet<(String, String)> {
        m.features
            .iter()
            .filter(|f| f.semantic_uri != UNMAPPED)
            .map(|f| (f.name.clone(), f.semantic_uri.clone()))
            .collect()
    };
    let mut common = pair_set(first);
    for m in iter {
        let s = pair_set(m);
        common.retain(|p| s.contains(p));
    }
    common.into_iter().collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u32,
    /// Pairwise feature-name Jaccard, keyed "id_a|id_b" with id_a < id_b.
    pub jaccard_pairwise: BTreeMap<String, f64>,
    /// Mean of the pairwise values (1.0 for a single dataset).
    pub jaccard_overall: f64,
    pub transformations_issued: usize,
    pub per_site_action_counts: BTreeMap<String, usize>,
}

impl IterationRecord {
    /// Snapshot schema similarity for this round from the submitted metadata.
    pub fn from_metadata(iteration: u32, all_metadata: &[DatasetMetadata]) -> Self {
        let names: Vec<(String, BTreeSet<String>)> = {
            let mut v: Vec<(String, BTreeSet<String>)> = all_metadata
                .iter()
                .map(|m| {
                    (
                        m.dataset_id.clone(),
                        m.features.iter().map(|f| f.name.clone()).collect(),
                    )
                })
                .collect();
            v.sort_by(|a, b| a.0.cmp(&b.0));
            v
        };
        let mut pairwise = BTreeMap::new();
        for i in 0..names.len() {
            for j in (i + 1)..names.len() {
                pairwise.insert(
                    format!("{}|{}", names[i].0, names[j].0),
                    jaccard_similarity(&names[i].1, &names[j].1),
                );
            }
        }
        let overall = if pairwise.is_empty() {
            1.0
        } else {
            pairwise.values().sum::<f64>() / pairwise.len() as f64
        };
        IterationRecord {
            iteration,
            jaccard_pairwise: pairwise,
            jaccard_overall: overall,
            transformations_issued: 0,
            per_site_action_counts: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HarmonizationReport {
    pub config: RecommenderConfig,
    pub seed: u64,
    pub dataset_ids: Vec<String>,
    pub records: Vec<IterationRecord>,
    pub total_iterations: u32,
    pub total_transformations: usize,
    pub common_features_final: Vec<(String, String)>,
    pub converged: bool,
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

fn canonicalize(value: serde_json::Value) -> serde_json::Value {
    match value {
        serde_json::Value::Number(n) => {
            if let Some(f) = n.as_f64() {
                if n.as_i64().is_none() && n.as_u64().is_none() {
                    return serde_json::json!(round6(f));
                }
            }
            serde_json::Value::Number(n)
        }
        serde_json::Value::Array(items) => {
            serde_json::Value::Array(items.into_iter().map(canonicalize).collect())
        }
        serde_json::Value::Object(map) => {
            // serde_json's default map preserves insertion order; rebuild via
            // BTreeMap for sorted keys.
            let sorted: BTreeMap<String, serde_json::Value> = map
                .into_iter()
                .map(|(k, v)| (k, canonicalize(v)))
                .collect();
            serde_json::to_value(sorted).expect("map serializes")
        }
        other => other,
    }
}

/// Canonical JSON for any serializable value: sorted keys, floats rounded to
/// six decimals, trailing newline.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    let value = serde_json::to_value(value).expect("value serializes");
    let mut text = serde_json::to_string_pretty(&canonicalize(value)).expect("canonical json");
    text.push('\n');
    text
}

impl HarmonizationReport {
    /// Canonical JSON: sorted keys, floats to six decimals, trailing newline.
    pub fn to_json(&self) -> String {
        canonical_json(self)
    }

    /// One CSV row per iteration, then a summary row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,jaccard_overall,transformations_issued\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{}\n",
                r.iteration,
                round6(r.jaccard_overall),
                r.transformations_issued
            ));
        }
        out.push_str(&format!(
            "total,{},{}\n",
            self.total_iterations, self.total_transformations
        ));
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        out.push_str("# Harmonization report\n\n");
        out.push_str(&format!(
            "- datasets: {}\n- seed: {}\n- converged: {}\n- iterations: {}\n- transformations: {}\n\n",
            self.dataset_ids.join(", "),
            self.seed,
            self.converged,
            self.total_iterations,
            self.total_transformations
        ));
        out.push_str("| iteration | jaccard | transformations |\n|---|---|---|\n");
        for r in &self.records {
            out.push_str(&format!(
                "| {} | {} | {} |\n",
                r.iteration,
                round6(r.jaccard_overall),
                r.transformations_issued
            ));
        }
        out.push_str("\n## Common features\n\n");
        if self.common_features_final.is_empty() {
            out.push_str("(none)\n");
        } else {
            for (name, uri) in &self.common_features_final {
                out.push_str(&format!("- `{name}` ({uri})\n"));
            }
        }
        out
    }
}
