//! Site-side outbound gate: every metadata payload is checked against a
//! structural whitelist and scanned for raw-row leakage before it leaves the
//! site. The server is honest-but-curious, so sites protect themselves.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::analyzer::DatasetMetadata;
use crate::table::DatasetTable;

/// Top-level fields a metadata payload is allowed to carry on the wire.
pub const ALLOWED_FIELDS: [&str; 8] = [
    "dataset_id",
    "iteration",
    "description",
    "features",
    "topics",
    "relationships",
    "synthetic_samples",
    "schema_hash",
];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GateConfig {
    /// Maximum number of synthetic sample rows allowed outbound (R2).
    pub max_samples: usize,
    /// Cell values longer than this participate in the substring scan (R3).
    /// Shorter values are low-entropy domain text that legitimately shows up
    /// in format descriptions.
    pub min_leak_len: usize,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            max_samples: 20,
            min_leak_len: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule_id: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateVerdict {
    pub allowed: bool,
    pub violations: Vec<Violation>,
}

impl GateVerdict {
    fn from_violations(violations: Vec<Violation>) -> Self {
        GateVerdict {
            allowed: violations.is_empty(),
            violations,
        }
    }
}

#[derive(Debug, Error)]
pub enum GateError {
    #[error("payload cannot be redacted: {0}")]
    Unredactable(String),
}

fn sample_matches_real_row(
    sample: &std::collections::BTreeMap<String, String>,
    table: &DatasetTable,
) -> Option<usize> {
    'rows: for i in 0..table.row_count {
        for col in &table.columns {
            let real = col.cells[i].as_deref().unwrap_or("");
            let synth = sample.get(&col.name).map(|s| s.as_str()).unwrap_or("");
            if real != synth {
                continue 'rows;
            }
        }
        return Some(i);
    }
    None
}

fn leaky_cell_values<'a>(
    table: &'a DatasetTable,
    config: &GateConfig,
) -> BTreeSet<&'a str> {
    let names: BTreeSet<&str> = table.columns.iter().map(|c| c.name.as_str()).collect();
    let mut out = BTreeSet::new();
    for col in &table.columns {
        for cell in col.non_missing() {
            if cell.chars().count() > config.min_leak_len && !names.contains(cell) {
                out.insert(cell);
            }
        }
    }
    out
}

fn text_fields(metadata: &DatasetMetadata) -> Vec<&str> {
    let mut fields = vec![metadata.description.as_str()];
    fields.extend(metadata.topics.iter().map(|t| t.as_str()));
    fields.extend(
        metadata
            .features
            .iter()
            .map(|f| f.semantic_description.as_str()),
    );
    fields
}

/// Validate one outbound payload against the structural rules:
/// R1 no synthetic row equals a real row; R2 sample count bound;
/// R3 no long verbatim cell value inside free-text fields; R4 only
/// whitelisted top-level fields on the wire.
pub fn check_outbound(
    metadata: &DatasetMetadata,
    table: &DatasetTable,
    config: &GateConfig,
) -> GateVerdict {
    let payload = serde_json::to_value(metadata).expect("metadata serializes");
    check_payload(&payload, metadata, table, config)
}

/// Same checks, applied to the serialized payload (R4 can only trigger on
/// the wire form, where unexpected fields may have been injected).
pub fn check_payload(
    payload: &Value,
    metadata: &DatasetMetadata,
    table: &DatasetTable,
    config: &GateConfig,
) -> GateVerdict {
    let mut violations = Vec::new();

    for (i, sample) in metadata.synthetic_samples.iter().enumerate() {
        if let Some(row) = sample_matches_real_row(sample, table) {
            violations.push(Violation {
                rule_id: "R1".into(),
                detail: format!("synthetic sample {i} equals real row {row}"),
            });
        }
    }

    if metadata.synthetic_samples.len() > config.max_samples {
        violations.push(Violation {
            rule_id: "R2".into(),
            detail: format!(
                "{} samples exceeds limit {}",
                metadata.synthetic_samples.len(),
                config.max_samples
            ),
        });
    }

    let leaky = leaky_cell_values(table, config);
    for field in text_fields(metadata) {
        for value in &leaky {
            if field.contains(value) {
                violations.push(Violation {
                    rule_id: "R3".into(),
                    detail: (*value).to_string(),
                });
            }
        }
    }

    if let Value::Object(map) = payload {
        for key in map.keys() {
            if !ALLOWED_FIELDS.contains(&key.as_str()) {
                violations.push(Violation {
                    rule_id: "R4".into(),
                    detail: format!("unexpected top-level field '{key}'"),
                });
            }
        }
    } else {
        violations.push(Violation {
            rule_id: "R4".into(),
            detail: "payload is not a JSON object".into(),
        });
    }

    GateVerdict::from_violations(violations)
}

/// Repair a payload that tripped R1/R3: leaked sample rows are dropped and
/// leaked substrings replaced with "[REDACTED]". R4 aborts transmission.
/// The result is re-checked; a payload that still fails is unredactable.
pub fn redact_and_report(
    verdict: &GateVerdict,
    metadata: &DatasetMetadata,
    table: &DatasetTable,
    config: &GateConfig,
) -> Result<DatasetMetadata, GateError> {
    if verdict.allowed {
        return Ok(metadata.clone());
    }
    if let Some(v) = verdict.violations.iter().find(|v| v.rule_id == "R4") {
        return Err(GateError::Unredactable(v.detail.clone()));
    }

    let mut redacted = metadata.clone();

    if verdict.violations.iter().any(|v| v.rule_id == "R1") {
        redacted
            .synthetic_samples
            .retain(|s| sample_matches_real_row(s, table).is_none());
    }
    if verdict.violations.iter().any(|v| v.rule_id == "R2") {
        redacted.synthetic_samples.truncate(config.max_samples);
    }

    let leaks: Vec<&str> = verdict
        .violations
        .iter()
        .filter(|v| v.rule_id == "R3")
        .map(|v| v.detail.as_str())
        .collect();
    if !leaks.is_empty() {
        let scrub = |s: &mut String| {
            for leak in &leaks {
                if s.contains(leak) {
                    *s = s.replace(leak, "[REDACTED]");
                }
            }
        };
        scrub(&mut redacted.description);
        for t in &mut redacted.topics {
            scrub(t);
        }
        for f in &mut redacted.features {
            scrub(&mut f.semantic_description);
        }
    }

    let recheck = check_outbound(&redacted, table, config);
    if !recheck.allowed {
        return Err(GateError::Unredactable(format!(
            "still failing after redaction: {:?}",
            recheck.violations
        )));
    }
    Ok(redacted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::AgentBundle;
    use crate::analyzer::build_metadata;
    use crate::ontology::Ontology;
    use crate::table::{ColumnData, DatasetTable};

    fn table() -> DatasetTable {
        let dates: Vec<Option<String>> = (1..=20)
            .map(|d| Some(format!("2020-03-{d:02}")))
            .collect();
        let cases: Vec<Option<String>> = (1..=20).map(|v| Some(format!("{}", v * 13))).collect();
        let notes: Vec<Option<String>> = (1..=20)
            .map(|v| Some(format!("patient cohort entry number {v}")))
            .collect();
        DatasetTable::new(
            "gt",
            vec![
                ColumnData::new("date", dates),
                ColumnData::new("total_cases", cases),
                ColumnData::new("notes", notes),
            ],
        )
        .unwrap()
    }

    fn metadata(t: &DatasetTable) -> DatasetMetadata {
        build_metadata(t, &Ontology::bundled(), &AgentBundle::baseline(), 5, 0, 9).unwrap()
    }

    #[test]
    fn clean_metadata_passes_and_is_unchanged() {
        let t = table();
        let m = metadata(&t);
        let verdict = check_outbound(&m, &t, &GateConfig::default());
        assert!(verdict.allowed, "{:?}", verdict.violations);
        assert!(verdict.violations.is_empty());
        let out = redact_and_report(&verdict, &m, &t, &GateConfig::default()).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn planted_row_copy_trips_r1_and_is_dropped() {
        let t = table();
        let mut m = metadata(&t);
        let copied: std::collections::BTreeMap<String, String> = t
            .columns
            .iter()
            .map(|c| (c.name.clone(), c.cells[3].clone().unwrap_or_default()))
            .collect();
        m.synthetic_samples.push(copied);
        let verdict = check_outbound(&m, &t, &GateConfig::default());
        assert!(!verdict.allowed);
        assert!(verdict.violations.iter().any(|v| v.rule_id == "R1"));

        let before = m.synthetic_samples.len();
        let redacted = redact_and_report(&verdict, &m, &t, &GateConfig::default()).unwrap();
        assert_eq!(redacted.synthetic_samples.len(), before - 1);
    }

    #[test]
    fn planted_cell_value_in_description_trips_r3() {
        let t = table();
        let mut m = metadata(&t);
        // 31-char real cell value, planted verbatim.
        let leak = "patient cohort entry number 17".to_string();
        assert!(t.columns[2].non_missing().any(|c| c == leak));
        m.description.push_str(&leak);
        let verdict = check_outbound(&m, &t, &GateConfig::default());
        assert!(verdict
            .violations
            .iter()
            .any(|v| v.rule_id == "R3" && v.detail == leak));

        let redacted = redact_and_report(&verdict, &m, &t, &GateConfig::default()).unwrap();
        assert!(redacted.description.contains("[REDACTED]"));
        assert!(!redacted.description.contains(&leak));
    }

    #[test]
    fn unknown_field_trips_r4_and_aborts() {
        let t = table();
        let m = metadata(&t);
        let mut payload = serde_json::to_value(&m).unwrap();
        payload
            .as_object_mut()
            .unwrap()
            .insert("raw_rows".into(), serde_json::json!([["a", "b"]]));
        let verdict = check_payload(&payload, &m, &t, &GateConfig::default());
        assert!(verdict.violations.iter().any(|v| v.rule_id == "R4"));
        assert!(matches!(
            redact_and_report(&verdict, &m, &t, &GateConfig::default()),
            Err(GateError::Unredactable(_))
        ));
    }

    #[test]
    fn sample_budget_r2() {
        let t = table();
        let m = metadata(&t);
        let config = GateConfig {
            max_samples: 3,
            min_leak_len: 12,
        };
        let verdict = check_outbound(&m, &t, &config);
        assert!(verdict.violations.iter().any(|v| v.rule_id == "R2"));
        let redacted = redact_and_report(&verdict, &m, &t, &config).unwrap();
        assert!(redacted.synthetic_samples.len() <= 3);
    }

    #[test]
    fn redaction_is_idempotent() {
        let t = table();
        let mut m = metadata(&t);
        m.description
            .push_str("patient cohort entry number 17");
        let verdict = check_outbound(&m, &t, &GateConfig::default());
        let once = redact_and_report(&verdict, &m, &t, &GateConfig::default()).unwrap();
        let verdict2 = check_outbound(&once, &t, &GateConfig::default());
        let twice = redact_and_report(&verdict2, &once, &t, &GateConfig::default()).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn verdict_is_deterministic() {
        let t = table();
        let m = metadata(&t);
        assert_eq!(
            check_outbound(&m, &t, &GateConfig::default()),
            check_outbound(&m, &t, &GateConfig::default())
        );
    }
}
