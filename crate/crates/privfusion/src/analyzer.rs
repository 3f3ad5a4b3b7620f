//! Site-side dataset analysis: semantic typing of features, dataset
//! description, topics, feature relationships and synthetic samples, all
//! assembled into the metadata payload shared with the server.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    AgentBundle, AgentError, DescribeAgent, FeatureTextAgent, RelationshipsAgent, TopicsAgent,
};
use crate::ontology::{Ontology, UNMAPPED};
use crate::table::{self, ColumnData, DatasetTable, PrimitiveType};

/// Cells sampled per column when scoring concept value patterns.
const PATTERN_SAMPLE: usize = 100;
/// Minimum winning score; below it a feature stays unmapped.
const ACCEPT_THRESHOLD: f64 = 0.3;
/// Name-token weight vs value-pattern weight in concept scoring.
const TOKEN_WEIGHT: f64 = 0.6;
const PATTERN_WEIGHT: f64 = 0.4;
/// Distinct-value bound under which synthetic sampling draws from the
/// observed set instead of generating shape-preserving strings.
const DISTINCT_DRAW_LIMIT: usize = 50;
/// |Pearson r| at or above which two numeric features are reported as
/// correlated.
const CORRELATION_THRESHOLD: f64 = 0.95;

#[derive(Debug, Error)]
pub enum AnalyzerError {
    #[error("cannot avoid exact row collision: {0}")]
    Collision(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDescriptor {
    pub name: String,
    pub primitive_type: PrimitiveType,
    pub format_pattern: Option<String>,
    /// Concept URI, or the sentinel "unmapped".
    pub semantic_uri: String,
    pub semantic_description: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationshipKind {
    DerivesFrom,
    Aggregates,
    Identifies,
    Correlates,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureRelationship {
    pub source: String,
    pub target: String,
    pub kind: RelationshipKind,
}

/// The payload a site shares with the server: five metadata parts plus
/// synthetic samples. By construction it has no field capable of carrying
/// raw dataset rows; the privacy gate checks this structurally on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub dataset_id: String,
    pub iteration: u32,
    pub description: String,
    pub features: Vec<FeatureDescriptor>,
    pub topics: Vec<String>,
    pub relationships: Vec<FeatureRelationship>,
    pub synthetic_samples: Vec<BTreeMap<String, String>>,
    pub schema_hash: u64,
}

/// Lowercase a feature name and split it on non-alphanumeric and camelCase
/// boundaries, preserving order: "TotalPositiveCases" and "Location ISO Code"
/// both tokenize.
pub fn tokenize(name: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let chars: Vec<char> = name.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        if !c.is_alphanumeric() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            continue;
        }
        // camelCase boundary: lower/digit followed by upper, or the last
        // upper of an acronym run ("ISOCode" -> iso, code).
        if c.is_uppercase() && !current.is_empty() {
            let prev = chars[i - 1];
            let next_lower = chars.get(i + 1).map(|n| n.is_lowercase()).unwrap_or(false);
            if prev.is_lowercase() || prev.is_numeric() || (prev.is_uppercase() && next_lower) {
                tokens.push(std::mem::take(&mut current));
            }
        }
        current.extend(c.to_lowercase());
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// The token set used for name similarity.
pub fn normalize_tokens(name: &str) -> BTreeSet<String> {
    tokenize(name).into_iter().collect()
}

fn jaccard_tokens(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let inter = a.intersection(b).count();
    let union = a.union(b).count();
    inter as f64 / union as f64
}

/// Map a feature onto the best-scoring ontology concept.
///
/// Score = 0.6 * token overlap + 0.4 * fraction of sampled cells matching the
/// concept's value pattern; when a concept has no pattern the token component
/// is renormalized to full weight. Ties break toward greater depth, then
/// lexicographically smaller URI. A winner below 0.3 leaves the feature
/// unmapped with confidence 0.
pub fn classify_feature(name: &str, column: &ColumnData, ontology: &Ontology) -> FeatureDescriptor {
    let tokens = normalize_tokens(name);
    let sample: Vec<&str> = column.non_missing().take(PATTERN_SAMPLE).collect();

    let mut best: Option<(f64, u32, &str)> = None;
    for concept in ontology.concepts() {
        let aliases: BTreeSet<String> = concept.aliases.iter().cloned().collect();
        let overlap = jaccard_tokens(&tokens, &aliases);
        let score = match ontology.pattern(&concept.uri) {
            Some(re) if !sample.is_empty() => {
                let hits = sample.iter().filter(|c| re.is_match(c)).count();
                TOKEN_WEIGHT * overlap + PATTERN_WEIGHT * (hits as f64 / sample.len() as f64)
            }
            _ => overlap,
        };
        let candidate = (score, concept.depth, concept.uri.as_str());
        best = Some(match best {
            None => candidate,
            Some(cur) => {
                // Higher score wins; then deeper (more specific); then
                // lexicographically smaller uri.
                if score > cur.0
                    || (score == cur.0 && concept.depth > cur.1)
                    || (score == cur.0 && concept.depth == cur.1 && candidate.2 < cur.2)
                {
                    candidate
                } else {
                    cur
                }
            }
        });
    }

    let (uri, confidence) = match best {
        Some((score, _, uri)) if score >= ACCEPT_THRESHOLD => {
            (uri.to_string(), score.min(1.0))
        }
        _ => (UNMAPPED.to_string(), 0.0),
    };

    let mut descriptor = FeatureDescriptor {
        name: name.to_string(),
        primitive_type: column.primitive_type,
        format_pattern: column.format_pattern.clone(),
        semantic_uri: uri,
        semantic_description: String::new(),
        confidence,
    };
    descriptor.semantic_description = baseline_feature_text(&descriptor, ontology);
    descriptor
}

/// The deterministic feature-description template.
pub fn baseline_feature_text(descriptor: &FeatureDescriptor, ontology: &Ontology) -> String {
    let label = ontology
        .get(&descriptor.semantic_uri)
        .map(|c| c.label.as_str())
        .unwrap_or(descriptor.name.as_str());
    match &descriptor.format_pattern {
        Some(p) => format!("{label} ({}) in format {p}", descriptor.primitive_type),
        None => format!("{label} ({})", descriptor.primitive_type),
    }
}

/// The deterministic dataset-description template.
pub fn baseline_describe(table: &DatasetTable) -> String {
    let parts: Vec<String> = table
        .columns
        .iter()
        .map(|c| format!("{} ({})", c.name, c.primitive_type))
        .collect();
    format!(
        "{}: {} rows, {} features: {}",
        table.dataset_id,
        table.row_count,
        table.columns.len(),
        parts.join(", ")
    )
}

/// Deduplicated, sorted top-level ancestor labels of all mapped features.
pub fn baseline_topics(descriptors: &[FeatureDescriptor], ontology: &Ontology) -> Vec<String> {
    let mut topics = BTreeSet::new();
    for d in descriptors {
        if d.semantic_uri != UNMAPPED {
            if let Some(root) = ontology.root_of(&d.semantic_uri) {
                topics.insert(root.label.clone());
            }
        }
    }
    topics.into_iter().collect()
}

fn parse_numeric(cell: &str) -> Option<f64> {
    if table::is_integer_text(cell) || table::is_float_text(cell) {
        cell.parse::<f64>().ok()
    } else {
        None
    }
}

/// Pearson correlation over aligned rows where both cells parse as numbers.
pub fn pearson(a: &ColumnData, b: &ColumnData) -> Option<f64> {
    let pairs: Vec<(f64, f64)> = a
        .cells
        .iter()
        .zip(&b.cells)
        .filter_map(|(x, y)| {
            Some((
                parse_numeric(x.as_deref()?)?,
                parse_numeric(y.as_deref()?)?,
            ))
        })
        .collect();
    if pairs.len() < 2 {
        return None;
    }
    let n = pairs.len() as f64;
    let mean_x = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (x, y) in &pairs {
        cov += (x - mean_x) * (y - mean_y);
        var_x += (x - mean_x).powi(2);
        var_y += (y - mean_y).powi(2);
    }
    if var_x == 0.0 || var_y == 0.0 {
        return None;
    }
    Some(cov / (var_x.sqrt() * var_y.sqrt()))
}

/// Rule-based relationship inference over the classified features.
pub fn baseline_relationships(
    table: &DatasetTable,
    descriptors: &[FeatureDescriptor],
    ontology: &Ontology,
) -> Vec<FeatureRelationship> {
    let mut out = Vec::new();

    // (a) pairs of features inside the location subtree at different
    // depths: the coarser one identifies the finer one.
    for i in 0..descriptors.len() {
        for j in 0..descriptors.len() {
            if i == j {
                continue;
            }
            let (a, b) = (&descriptors[i], &descriptors[j]);
            if a.semantic_uri == UNMAPPED || b.semantic_uri == UNMAPPED {
                continue;
            }
            let in_location = |uri: &str| {
                ontology
                    .root_of(uri)
                    .map(|r| r.uri == "dbo:place")
                    .unwrap_or(false)
            };
            if in_location(&a.semantic_uri)
                && in_location(&b.semantic_uri)
                && ontology.depth(&a.semantic_uri) < ontology.depth(&b.semantic_uri)
            {
                out.push(FeatureRelationship {
                    source: a.name.clone(),
                    target: b.name.clone(),
                    kind: RelationshipKind::Identifies,
                });
            }
        }
    }

    // (b) an integer "new_*"/"daily*" feature aggregates into the matching
    // "total_*" feature.
    for a in descriptors {
        if !matches!(a.primitive_type, PrimitiveType::Integer) {
            continue;
        }
        let mut tokens = normalize_tokens(&a.name);
        let had_prefix = tokens.remove("new") || tokens.remove("daily");
        if !had_prefix {
            continue;
        }
        let mut wanted = tokens.clone();
        wanted.insert("total".to_string());
        for b in descriptors {
            if b.name != a.name && normalize_tokens(&b.name) == wanted {
                out.push(FeatureRelationship {
                    source: a.name.clone(),
                    target: b.name.clone(),
                    kind: RelationshipKind::Aggregates,
                });
            }
        }
    }

    // (c) strongly correlated numeric column pairs.
    for i in 0..table.columns.len() {
        for j in (i + 1)..table.columns.len() {
            let (a, b) = (&table.columns[i], &table.columns[j]);
            let numeric = |c: &ColumnData| {
                matches!(
                    c.primitive_type,
                    PrimitiveType::Integer | PrimitiveType::Float
                )
            };
            if !numeric(a) || !numeric(b) {
                continue;
            }
            if let Some(r) = pearson(a, b) {
                if r.abs() >= CORRELATION_THRESHOLD {
                    let (s, t) = if a.name <= b.name {
                        (a.name.clone(), b.name.clone())
                    } else {
                        (b.name.clone(), a.name.clone())
                    };
                    out.push(FeatureRelationship {
                        source: s,
                        target: t,
                        kind: RelationshipKind::Correlates,
                    });
                }
            }
        }
    }

    out.sort_by(|a, b| {
        (a.kind, &a.source, &a.target).cmp(&(b.kind, &b.source, &b.target))
    });
    out.dedup();
    out
}

pub struct BaselineDescribe;
impl DescribeAgent for BaselineDescribe {
    fn describe(&self, table: &DatasetTable) -> Result<String, AgentError> {
        Ok(baseline_describe(table))
    }
}

pub struct BaselineFeatureText;
impl FeatureTextAgent for BaselineFeatureText {
    fn feature_description(
        &self,
        _table: &DatasetTable,
        descriptor: &FeatureDescriptor,
        ontology: &Ontology,
    ) -> Result<String, AgentError> {
        Ok(baseline_feature_text(descriptor, ontology))
    }
}

pub struct BaselineTopics;
impl TopicsAgent for BaselineTopics {
    fn topics(
        &self,
        _table: &DatasetTable,
        descriptors: &[FeatureDescriptor],
        ontology: &Ontology,
    ) -> Result<Vec<String>, AgentError> {
        Ok(baseline_topics(descriptors, ontology))
    }
}

pub struct BaselineRelationships;
impl RelationshipsAgent for BaselineRelationships {
    fn relationships(
        &self,
        table: &DatasetTable,
        descriptors: &[FeatureDescriptor],
        ontology: &Ontology,
    ) -> Result<Vec<FeatureRelationship>, AgentError> {
        Ok(baseline_relationships(table, descriptors, ontology))
    }
}

enum Sampler {
    Instant {
        pattern: String,
        min: i64,
        max: i64,
    },
    Integer {
        min: i64,
        max: i64,
    },
    Float {
        min: f64,
        max: f64,
    },
    Draw(Vec<String>),
    Shape(Vec<String>),
    Missing,
}

fn build_sampler(column: &ColumnData) -> Sampler {
    let present: Vec<&str> = column.non_missing().collect();
    if present.is_empty() {
        return Sampler::Missing;
    }
    match column.primitive_type {
        PrimitiveType::Date | PrimitiveType::DateTime => {
            if let Some(pattern) = &column.format_pattern {
                let instants: Vec<i64> = present
                    .iter()
                    .filter_map(|c| table::parse_instant(pattern, c))
                    .map(|dt| dt.and_utc().timestamp())
                    .collect();
                if !instants.is_empty() {
                    return Sampler::Instant {
                        pattern: pattern.clone(),
                        min: *instants.iter().min().unwrap(),
                        max: *instants.iter().max().unwrap(),
                    };
                }
            }
            Sampler::Draw(distinct_sorted(&present))
        }
        PrimitiveType::Integer => {
            let vals: Vec<i64> = present.iter().filter_map(|c| c.parse().ok()).collect();
            Sampler::Integer {
                min: *vals.iter().min().unwrap(),
                max: *vals.iter().max().unwrap(),
            }
        }
        PrimitiveType::Float => {
            let vals: Vec<f64> = present.iter().filter_map(|c| c.parse().ok()).collect();
            Sampler::Float {
                min: vals.iter().cloned().fold(f64::INFINITY, f64::min),
                max: vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            }
        }
        _ => {
            let distinct = distinct_sorted(&present);
            if distinct.len() <= DISTINCT_DRAW_LIMIT {
                Sampler::Draw(distinct)
            } else {
                Sampler::Shape(present.iter().map(|s| s.to_string()).collect())
            }
        }
    }
}

fn distinct_sorted(present: &[&str]) -> Vec<String> {
    let set: BTreeSet<&str> = present.iter().copied().collect();
    set.into_iter().map(String::from).collect()
}

fn sample_cell(sampler: &Sampler, rng: &mut ChaCha8Rng) -> String {
    match sampler {
        Sampler::Instant { pattern, min, max } => {
            let ts = if min == max {
                *min
            } else {
                rng.gen_range(*min..=*max)
            };
            let dt = chrono::DateTime::from_timestamp(ts, 0)
                .map(|d| d.naive_utc())
                .unwrap_or_default();
            table::render_instant(pattern, dt).unwrap_or_default()
        }
        Sampler::Integer { min, max } => {
            let v = if min == max {
                *min
            } else {
                rng.gen_range(*min..=*max)
            };
            v.to_string()
        }
        Sampler::Float { min, max } => {
            let v = if min == max {
                *min
            } else {
                rng.gen_range(*min..=*max)
            };
            format!("{v}")
        }
        Sampler::Draw(values) => values[rng.gen_range(0..values.len())].clone(),
        Sampler::Shape(cells) => {
            let template = &cells[rng.gen_range(0..cells.len())];
            template
                .chars()
                .map(|c| {
                    if c.is_ascii_lowercase() {
                        (b'a' + rng.gen_range(0..26u8)) as char
                    } else if c.is_ascii_uppercase() {
                        (b'A' + rng.gen_range(0..26u8)) as char
                    } else if c.is_ascii_digit() {
                        (b'0' + rng.gen_range(0..10u8)) as char
                    } else {
                        c
                    }
                })
                .collect()
        }
        Sampler::Missing => String::new(),
    }
}

/// Generate `n` format-preserving synthetic rows, deterministically for a
/// given seed. Values stay within each column's observed domain; any row
/// that exactly matches a real row is regenerated, then perturbed, then
/// reported as a collision.
pub fn generate_synthetic_samples(
    table: &DatasetTable,
    n: usize,
    seed: u64,
) -> Result<Vec<BTreeMap<String, String>>, AnalyzerError> {
    assert!(n >= 1, "n must be at least 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samplers: Vec<Sampler> = table.columns.iter().map(build_sampler).collect();

    let real_rows: HashSet<Vec<&str>> = (0..table.row_count)
        .map(|i| {
            table
                .columns
                .iter()
                .map(|c| c.cells[i].as_deref().unwrap_or(""))
                .collect()
        })
        .collect();
    let collides = |row: &[String]| {
        let view: Vec<&str> = row.iter().map(|s| s.as_str()).collect();
        real_rows.contains(&view)
    };

    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row: Vec<String> = Vec::new();
        let mut ok = false;
        for _ in 0..10 {
            row = samplers.iter().map(|s| sample_cell(s, &mut rng)).collect();
            if !collides(&row) {
                ok = true;
                break;
            }
        }
        if !ok {
            // Last resort: bump one numeric field by a unit.
            let numeric_idx = table.columns.iter().position(|c| {
                matches!(
                    c.primitive_type,
                    PrimitiveType::Integer | PrimitiveType::Float
                )
            });
            if let Some(idx) = numeric_idx {
                if let Ok(v) = row[idx].parse::<f64>() {
                    row[idx] = if table.columns[idx].primitive_type == PrimitiveType::Integer {
                        format!("{}", v as i64 + 1)
                    } else {
                        format!("{}", v + 1.0)
                    };
                }
            }
            if collides(&row) {
                return Err(AnalyzerError::Collision(format!(
                    "dataset '{}' leaves no room for non-matching samples",
                    table.dataset_id
                )));
            }
        }
        rows.push(
            table
                .columns
                .iter()
                .map(|c| c.name.clone())
                .zip(row)
                .collect::<BTreeMap<_, _>>(),
        );
    }
    Ok(rows)
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Content hash over the sorted (name, type, format, uri) descriptor tuples.
/// Equal hashes signal an unchanged schema between protocol rounds.
pub fn schema_hash(features: &[FeatureDescriptor]) -> u64 {
    let mut tuples: Vec<String> = features
        .iter()
        .map(|f| {
            format!(
                "{}\u{1f}{}\u{1f}{}\u{1f}{}",
                f.name,
                f.primitive_type,
                f.format_pattern.as_deref().unwrap_or(""),
                f.semantic_uri
            )
        })
        .collect();
    tuples.sort();
    fnv1a(tuples.join("\n").as_bytes())
}

/// Assemble the full metadata payload for one protocol round. Agent failures
/// fall back to the baseline with a logged warning.
pub fn build_metadata(
    table: &DatasetTable,
    ontology: &Ontology,
    agents: &AgentBundle,
    n_samples: usize,
    iteration: u32,
    seed: u64,
) -> Result<DatasetMetadata, AnalyzerError> {
    let mut features: Vec<FeatureDescriptor> = table
        .columns
        .iter()
        .map(|c| classify_feature(&c.name, c, ontology))
        .collect();
    for (descriptor, column) in features.iter_mut().zip(&table.columns) {
        let _ = column;
        match agents.feature_text.feature_description(table, descriptor, ontology) {
            Ok(text) => {
                descriptor.semantic_description = truncate(text, 2000);
            }
            Err(e) => {
                log::warn!("feature-description agent failed, using baseline: {e}");
            }
        }
    }

    let description = match agents.describe.describe(table) {
        Ok(text) => truncate(text, 2000),
        Err(e) => {
            log::warn!("describe agent failed, using baseline: {e}");
            baseline_describe(table)
        }
    };
    let topics = match agents.topics.topics(table, &features, ontology) {
        Ok(mut t) => {
            t.truncate(10);
            t
        }
        Err(e) => {
            log::warn!("topics agent failed, using baseline: {e}");
            baseline_topics(&features, ontology)
        }
    };
    let relationships = match agents.relationships.relationships(table, &features, ontology) {
        Ok(r) => r,
        Err(e) => {
            log::warn!("relationships agent failed, using baseline: {e}");
            baseline_relationships(table, &features, ontology)
        }
    };
    let synthetic_samples = generate_synthetic_samples(table, n_samples, seed)?;
    let hash = schema_hash(&features);

    Ok(DatasetMetadata {
        dataset_id: table.dataset_id.clone(),
        iteration,
        description,
        features,
        topics,
        relationships,
        synthetic_samples,
        schema_hash: hash,
    })
}

fn truncate(mut s: String, max: usize) -> String {
    if s.chars().count() > max {
        s = s.chars().take(max).collect();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(name: &str, vals: &[&str]) -> ColumnData {
        ColumnData::new(
            name,
            vals.iter()
                .map(|v| {
                    if v.is_empty() {
                        None
                    } else {
                        Some(v.to_string())
                    }
                })
                .collect(),
        )
    }

    fn afg_like() -> DatasetTable {
        DatasetTable::new(
            "fixture_afg",
            vec![
                col(
                    "date",
                    &[
                        "2020-02-24",
                        "2020-02-25",
                        "2020-02-26",
                        "2020-02-27",
                        "2020-02-28",
                        "2020-02-29",
                        "2020-03-01",
                        "2020-03-02",
                        "2020-03-03",
                        "2020-03-04",
                    ],
                ),
                col(
                    "total_cases",
                    &["5", "7", "7", "11", "16", "21", "22", "22", "22", "24"],
                ),
            ],
        )
        .unwrap()
    }

    #[test]
    fn classify_total_cases() {
        // Hand-scored against the bundled alias list {total, cases,
        // positive}: jaccard({total,cases}, aliases) = 2/3, no pattern, so
        // the renormalized score is 2/3 >= 0.6.
        let ont = Ontology::bundled();
        let d = classify_feature("total_cases", &col("total_cases", &["5", "7"]), &ont);
        assert_eq!(d.semantic_uri, "dbo:totalCases");
        assert!(d.confidence >= 0.6, "confidence {}", d.confidence);
    }

    #[test]
    fn classify_opaque_is_unmapped() {
        let ont = Ontology::bundled();
        let d = classify_feature(
            "zzz_opaque",
            &col("zzz_opaque", &["deadbeef", "c0ffee11", "0badf00d"]),
            &ont,
        );
        assert_eq!(d.semantic_uri, UNMAPPED);
        assert_eq!(d.confidence, 0.0);
    }

    #[test]
    fn classify_iso_code_uses_value_pattern() {
        let ont = Ontology::bundled();
        let d = classify_feature("iso_code", &col("iso_code", &["AFG", "IDN"]), &ont);
        assert_eq!(d.semantic_uri, "dbo:isoCode");
        assert!(d.confidence > 0.9);
    }

    #[test]
    fn classify_is_pure() {
        let ont = Ontology::bundled();
        let c = col("Location ISO Code", &["IDN", "IDN"]);
        assert_eq!(
            classify_feature(&c.name, &c, &ont),
            classify_feature(&c.name, &c, &ont)
        );
    }

    #[test]
    fn mapped_uris_exist_in_ontology() {
        let ont = Ontology::bundled();
        for name in ["date", "Total Cases", "state", "Lattitude", "county"] {
            let d = classify_feature(name, &col(name, &["x"]), &ont);
            if d.semantic_uri != UNMAPPED {
                assert!(ont.get(&d.semantic_uri).is_some());
                assert!(d.confidence > 0.0);
            }
        }
    }

    #[test]
    fn tokens_split_camel_and_spaces() {
        let t = normalize_tokens("TotalPositiveCases");
        assert_eq!(
            t.iter().cloned().collect::<Vec<_>>(),
            vec!["cases", "positive", "total"]
        );
        let t = normalize_tokens("Location ISO Code");
        assert_eq!(
            t.iter().cloned().collect::<Vec<_>>(),
            vec!["code", "iso", "location"]
        );
    }

    #[test]
    fn describe_template() {
        assert_eq!(
            baseline_describe(&afg_like()),
            "fixture_afg: 10 rows, 2 features: date (date), total_cases (integer)"
        );
    }

    #[test]
    fn describe_empty_table() {
        let t = DatasetTable::new("empty", vec![ColumnData::new("a", vec![])]).unwrap();
        assert_eq!(baseline_describe(&t), "empty: 0 rows, 1 features: a (string)");
    }

    #[test]
    fn topics_walk_roots() {
        // Hand-derived: dbo:date -> dbo:time ("time"); dbo:totalCases ->
        // dbo:epidemiology ("epidemiology"); sorted output.
        let ont = Ontology::bundled();
        let table = afg_like();
        let descriptors: Vec<_> = table
            .columns
            .iter()
            .map(|c| classify_feature(&c.name, c, &ont))
            .collect();
        assert_eq!(
            baseline_topics(&descriptors, &ont),
            vec!["epidemiology", "time"]
        );
    }

    #[test]
    fn topics_empty_when_all_unmapped() {
        let ont = Ontology::bundled();
        let d = classify_feature("zzz", &col("zzz", &["qq"]), &ont);
        assert!(baseline_topics(&[d], &ont).is_empty());
    }

    #[test]
    fn aggregates_rule() {
        let ont = Ontology::bundled();
        let table = DatasetTable::new(
            "t",
            vec![
                col("new_cases", &["1", "2"]),
                col("total_cases", &["10", "12"]),
            ],
        )
        .unwrap();
        let descriptors: Vec<_> = table
            .columns
            .iter()
            .map(|c| classify_feature(&c.name, c, &ont))
            .collect();
        let rels = baseline_relationships(&table, &descriptors, &ont);
        assert!(rels.iter().any(|r| r.kind == RelationshipKind::Aggregates
            && r.source == "new_cases"
            && r.target == "total_cases"));
    }

    #[test]
    fn single_feature_has_no_relationships() {
        let ont = Ontology::bundled();
        let table = DatasetTable::new("t", vec![col("date", &["2020-01-01"])]).unwrap();
        let d = classify_feature("date", &table.columns[0], &ont);
        assert!(baseline_relationships(&table, &[d], &ont).is_empty());
    }

    #[test]
    fn exact_double_is_perfectly_correlated() {
        // Brute-force Pearson on x and 2x must be exactly 1.
        let ont = Ontology::bundled();
        let table = DatasetTable::new(
            "t",
            vec![col("a", &["1", "2", "3", "4"]), col("b", &["2", "4", "6", "8"])],
        )
        .unwrap();
        let r = pearson(&table.columns[0], &table.columns[1]).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        let descriptors: Vec<_> = table
            .columns
            .iter()
            .map(|c| classify_feature(&c.name, c, &ont))
            .collect();
        let rels = baseline_relationships(&table, &descriptors, &ont);
        assert!(rels
            .iter()
            .any(|r| r.kind == RelationshipKind::Correlates && r.source == "a" && r.target == "b"));
    }

    #[test]
    fn synthetic_samples_preserve_format_and_domain() {
        let table = DatasetTable::new(
            "afg",
            vec![
                col("date", &["2020-02-24", "2020-06-30", "2021-01-15"]),
                col("iso_code", &["AFG", "AFG", "AFG"]),
                col("total_cases", &["5", "900", "4000"]),
            ],
        )
        .unwrap();
        let rows = generate_synthetic_samples(&table, 2, 7).unwrap();
        assert_eq!(rows.len(), 2);
        let date_re = regex::Regex::new(r"^\d{4}-\d{2}-\d{2}$").unwrap();
        for row in &rows {
            assert!(date_re.is_match(&row["date"]));
            assert_eq!(row["iso_code"], "AFG");
            let v: i64 = row["total_cases"].parse().unwrap();
            assert!((5..=4000).contains(&v));
        }
    }

    #[test]
    fn synthetic_samples_deterministic() {
        let table = afg_like();
        assert_eq!(
            generate_synthetic_samples(&table, 5, 42).unwrap(),
            generate_synthetic_samples(&table, 5, 42).unwrap()
        );
    }

    #[test]
    fn unavoidable_collision_errors() {
        let table =
            DatasetTable::new("tiny", vec![col("only", &["constant"])]).unwrap();
        assert!(matches!(
            generate_synthetic_samples(&table, 1, 1),
            Err(AnalyzerError::Collision(_))
        ));
    }

    #[test]
    fn metadata_hash_deterministic_and_name_sensitive() {
        let ont = Ontology::bundled();
        let agents = AgentBundle::baseline();
        let table = afg_like();
        let a = build_metadata(&table, &ont, &agents, 2, 0, 42).unwrap();
        let b = build_metadata(&table, &ont, &agents, 2, 0, 42).unwrap();
        assert_eq!(a.schema_hash, b.schema_hash);
        assert_eq!(a.features.len(), table.columns.len());

        let mut renamed = table.clone();
        renamed.columns[1].name = "cases_total".into();
        let c = build_metadata(&renamed, &ont, &agents, 2, 0, 42).unwrap();
        assert_ne!(a.schema_hash, c.schema_hash);
    }

    #[test]
    fn sample_rows_have_exact_feature_keys() {
        let ont = Ontology::bundled();
        let agents = AgentBundle::baseline();
        let m = build_metadata(&afg_like(), &ont, &agents, 3, 0, 1).unwrap();
        let names: BTreeSet<_> = m.features.iter().map(|f| f.name.clone()).collect();
        for row in &m.synthetic_samples {
            assert_eq!(row.keys().cloned().collect::<BTreeSet<_>>(), names);
        }
    }
}
