//! Server-side harmonization brain: clusters features across datasets and
//! turns multi-dataset clusters into per-site transformation plans.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::analyzer::{normalize_tokens, tokenize, DatasetMetadata};
use crate::ontology::{Ontology, UNMAPPED};
use crate::table::PrimitiveType;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingletonPolicy {
    /// Preserve features unique to one dataset (default).
    Keep,
    /// Remove features that cannot be aligned across datasets.
    Drop,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecommenderConfig {
    /// Name-token Jaccard threshold for clustering edges.
    pub theta: f64,
    pub singleton_policy: SingletonPolicy,
    pub canonical_date_format: String,
    /// Protocol round cap T.
    pub max_iterations: u32,
}

impl Default for RecommenderConfig {
    fn default() -> Self {
        RecommenderConfig {
            theta: 0.5,
            singleton_policy: SingletonPolicy::Keep,
            canonical_date_format: "YYYY-MM-DD".to_string(),
            max_iterations: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterMember {
    pub dataset_id: String,
    pub feature_name: String,
    pub semantic_uri: String,
    pub primitive_type: PrimitiveType,
    pub format_pattern: Option<String>,
}

/// A cross-dataset group of features judged to denote the same concept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCluster {
    pub cluster_id: u32,
    pub members: Vec<ClusterMember>,
    pub representative_uri: Option<String>,
    pub canonical_name: Option<String>,
    pub canonical_format: Option<String>,
}

impl FeatureCluster {
    pub fn dataset_count(&self) -> usize {
        self.members
            .iter()
            .map(|m| m.dataset_id.as_str())
            .collect::<BTreeSet<_>>()
            .len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnmatchedPolicy {
    Keep,
    DropRow,
    ToMissing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeStrategy {
    CoalesceFirst,
    Concat { separator: String },
}

/// The closed transformation vocabulary sites are willing to execute.
/// Recommenders (baseline or LLM) may only emit these actions, never code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum TransformAction {
    Rename {
        from: String,
        to: String,
    },
    ReformatDate {
        feature: String,
        source_pattern: String,
        target_pattern: String,
    },
    CastType {
        feature: String,
        target_type: PrimitiveType,
    },
    MapValues {
        feature: String,
        mapping: BTreeMap<String, String>,
        unmatched_policy: UnmatchedPolicy,
    },
    MergeFeatures {
        sources: Vec<String>,
        target: String,
        strategy: MergeStrategy,
    },
    DropFeature {
        feature: String,
    },
    ScaleNumeric {
        feature: String,
        factor: f64,
        offset: f64,
    },
    AddConstantFeature {
        name: String,
        value: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformationPlan {
    pub dataset_id: String,
    pub iteration: u32,
    pub actions: Vec<TransformAction>,
}

/// Structural validation shared by baseline and LLM recommenders.
pub fn validate_plan_shape(plan: &TransformationPlan) -> Result<(), String> {
    let mut introduced = BTreeSet::new();
    for action in &plan.actions {
        match action {
            TransformAction::Rename { from, to } => {
                if from.is_empty() || to.is_empty() {
                    return Err("rename with empty feature name".into());
                }
                if from == to {
                    return Err(format!("rename '{from}' onto itself"));
                }
                if !introduced.insert(to.clone()) {
                    return Err(format!("two actions introduce feature '{to}'"));
                }
            }
            TransformAction::MergeFeatures {
                sources, target, ..
            } => {
                if sources.len() < 2 {
                    return Err("merge needs at least two sources".into());
                }
                if sources.iter().any(|s| s.is_empty()) || target.is_empty() {
                    return Err("merge with empty feature name".into());
                }
                if !introduced.insert(target.clone()) {
                    return Err(format!("two actions introduce feature '{target}'"));
                }
            }
            TransformAction::AddConstantFeature { name, .. } => {
                if name.is_empty() {
                    return Err("add-constant with empty name".into());
                }
                if !introduced.insert(name.clone()) {
                    return Err(format!("two actions introduce feature '{name}'"));
                }
            }
            TransformAction::ReformatDate { feature, .. }
            | TransformAction::CastType { feature, .. }
            | TransformAction::MapValues { feature, .. }
            | TransformAction::DropFeature { feature }
            | TransformAction::ScaleNumeric { feature, .. } => {
                if feature.is_empty() {
                    return Err("action with empty feature name".into());
                }
            }
        }
    }
    Ok(())
}

/// Canonical snake_case form of a concept label or feature name.
pub fn snake_case(text: &str) -> String {
    tokenize(text).join("_")
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u32>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, x: usize) -> usize {
        if self.parent[x] != x {
            self.parent[x] = self.find(self.parent[x]);
        }
        self.parent[x]
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// True when two features should share a cluster: same mapped concept URI,
/// or normalized-name token-set Jaccard at or above theta.
pub fn features_linked(a: &ClusterMember, b: &ClusterMember, theta: f64) -> bool {
    if a.semantic_uri != UNMAPPED && a.semantic_uri == b.semantic_uri {
        return true;
    }
    let ta = normalize_tokens(&a.feature_name);
    let tb = normalize_tokens(&b.feature_name);
    if ta.is_empty() || tb.is_empty() {
        return false;
    }
    let inter = ta.intersection(&tb).count() as f64;
    let union = ta.union(&tb).count() as f64;
    inter / union >= theta
}

fn collect_members(all_metadata: &[DatasetMetadata]) -> Vec<ClusterMember> {
    // Sort by dataset_id so clustering is independent of submission order.
    let mut sorted: Vec<&DatasetMetadata> = all_metadata.iter().collect();
    sorted.sort_by(|a, b| a.dataset_id.cmp(&b.dataset_id));
    let mut members = Vec::new();
    for m in sorted {
        for f in &m.features {
            members.push(ClusterMember {
                dataset_id: m.dataset_id.clone(),
                feature_name: f.name.clone(),
                semantic_uri: f.semantic_uri.clone(),
                primitive_type: f.primitive_type,
                format_pattern: f.format_pattern.clone(),
            });
        }
    }
    members
}

/// Partition all submitted features into clusters via union-find over the
/// similarity edges. Cluster IDs follow the order of each cluster's
/// lexicographically smallest (dataset, feature) member.
pub fn cluster_features(all_metadata: &[DatasetMetadata], theta: f64) -> Vec<FeatureCluster> {
    let members = collect_members(all_metadata);
    let mut uf = UnionFind::new(members.len());
    for i in 0..members.len() {
        for j in (i + 1)..members.len() {
            if features_linked(&members[i], &members[j], theta) {
                uf.union(i, j);
            }
        }
    }

    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..members.len() {
        let root = uf.find(i);
        groups.entry(root).or_default().push(i);
    }

    let mut clusters: Vec<Vec<ClusterMember>> = groups
        .into_values()
        .map(|idxs| {
            let mut ms: Vec<ClusterMember> = idxs.into_iter().map(|i| members[i].clone()).collect();
            ms.sort_by(|a, b| {
                (&a.dataset_id, &a.feature_name).cmp(&(&b.dataset_id, &b.feature_name))
            });
            ms
        })
        .collect();
    clusters.sort_by(|a, b| {
        (&a[0].dataset_id, &a[0].feature_name).cmp(&(&b[0].dataset_id, &b[0].feature_name))
    });

    clusters
        .into_iter()
        .enumerate()
        .map(|(i, members)| FeatureCluster {
            cluster_id: i as u32,
            members,
            representative_uri: None,
            canonical_name: None,
            canonical_format: None,
        })
        .collect()
}

/// Majority concept URI among mapped members; ties break toward greater
/// ontology depth, then lexicographically smaller URI.
fn representative_uri(members: &[ClusterMember], ontology: &Ontology) -> Option<String> {
    let mut votes: BTreeMap<&str, usize> = BTreeMap::new();
    for m in members {
        if m.semantic_uri != UNMAPPED {
            *votes.entry(m.semantic_uri.as_str()).or_default() += 1;
        }
    }
    votes
        .into_iter()
        .max_by(|(ua, ca), (ub, cb)| {
            ca.cmp(cb)
                .then(ontology.depth(ua).cmp(&ontology.depth(ub)))
                .then(ub.cmp(ua))
        })
        .map(|(uri, _)| uri.to_string())
}

fn is_date_cluster(members: &[ClusterMember]) -> bool {
    members.iter().any(|m| {
        matches!(
            m.primitive_type,
            PrimitiveType::Date | PrimitiveType::DateTime
        )
    })
}

/// Canonical primitive type for numeric members: majority, ties widen to
/// float. None when the members are not uniformly numeric.
fn canonical_numeric(members: &[&ClusterMember]) -> Option<PrimitiveType> {
    let numeric = |t: PrimitiveType| matches!(t, PrimitiveType::Integer | PrimitiveType::Float);
    if members.is_empty() || !members.iter().all(|m| numeric(m.primitive_type)) {
        return None;
    }
    let floats = members
        .iter()
        .filter(|m| m.primitive_type == PrimitiveType::Float)
        .count();
    let ints = members.len() - floats;
    Some(if floats >= ints {
        PrimitiveType::Float
    } else {
        PrimitiveType::Integer
    })
}

pub struct Recommendation {
    pub plans: Vec<TransformationPlan>,
    /// GranularityError and similar per-cluster diagnostics.
    pub warnings: Vec<String>,
}

/// Decide, per multi-dataset cluster: the representative concept, the
/// canonical snake_case name and format, which duplicate members each
/// dataset keeps (finest granularity level available everywhere), and the
/// per-member actions needed to reach the canon. Singleton clusters follow
/// the configured keep/drop policy.
pub fn recommend_transformations(
    clusters: &[FeatureCluster],
    all_metadata: &[DatasetMetadata],
    config: &RecommenderConfig,
    ontology: &Ontology,
) -> Recommendation {
    let iteration = all_metadata.first().map(|m| m.iteration).unwrap_or(0);
    let mut actions: BTreeMap<String, Vec<TransformAction>> = BTreeMap::new();
    let mut warnings = Vec::new();

    for cluster in clusters {
        if cluster.dataset_count() < 2 {
            if config.singleton_policy == SingletonPolicy::Drop {
                for m in &cluster.members {
                    actions
                        .entry(m.dataset_id.clone())
                        .or_default()
                        .push(TransformAction::DropFeature {
                            feature: m.feature_name.clone(),
                        });
                }
            }
            continue;
        }

        let rep = representative_uri(&cluster.members, ontology);
        let canonical_name = match &rep {
            Some(uri) => snake_case(&ontology.get(uri).map(|c| c.label.clone()).unwrap_or_default()),
            None => snake_case(&cluster.members[0].feature_name),
        };

        // Duplicate resolution: when a dataset contributes several members,
        // keep the one at the finest concept depth available in every
        // dataset; drop the rest.
        let mut by_dataset: BTreeMap<&str, Vec<&ClusterMember>> = BTreeMap::new();
        for m in &cluster.members {
            by_dataset.entry(m.dataset_id.as_str()).or_default().push(m);
        }
        let has_duplicates = by_dataset.values().any(|v| v.len() > 1);
        let mut kept: Vec<&ClusterMember> = Vec::new();
        let mut dropped: Vec<&ClusterMember> = Vec::new();
        if has_duplicates {
            let target_depth = by_dataset
                .values()
                .map(|ms| {
                    ms.iter()
                        .map(|m| ontology.depth(&m.semantic_uri))
                        .max()
                        .unwrap_or(0)
                })
                .min()
                .unwrap_or(0);
            let mut failed = false;
            for ms in by_dataset.values() {
                if ms.len() == 1 {
                    kept.push(ms[0]);
                    continue;
                }
                let candidates: Vec<&&ClusterMember> = ms
                    .iter()
                    .filter(|m| ontology.depth(&m.semantic_uri) == target_depth)
                    .collect();
                if candidates.is_empty() {
                    failed = true;
                    break;
                }
                let keep = candidates
                    .iter()
                    .min_by_key(|m| {
                        let rep_match = Some(&m.semantic_uri) != rep.as_ref();
                        (rep_match, m.feature_name.clone())
                    })
                    .copied();
                for m in ms {
                    if std::ptr::eq(*m, *keep.unwrap()) {
                        kept.push(m);
                    } else {
                        dropped.push(m);
                    }
                }
            }
            if failed {
                warnings.push(format!(
                    "cluster {}: no member at common granularity depth, skipped",
                    cluster.cluster_id
                ));
                continue;
            }
        } else {
            kept.extend(cluster.members.iter());
        }

        let date_cluster = is_date_cluster(&cluster.members);
        let numeric_target = canonical_numeric(&kept);

        for m in &dropped {
            actions
                .entry(m.dataset_id.clone())
                .or_default()
                .push(TransformAction::DropFeature {
                    feature: m.feature_name.clone(),
                });
        }
        for m in &kept {
            let plan = actions.entry(m.dataset_id.clone()).or_default();
            let mut effective = m.feature_name.clone();
            if m.feature_name != canonical_name {
                plan.push(TransformAction::Rename {
                    from: m.feature_name.clone(),
                    to: canonical_name.clone(),
                });
                effective = canonical_name.clone();
            }
            if date_cluster
                && matches!(
                    m.primitive_type,
                    PrimitiveType::Date | PrimitiveType::DateTime
                )
            {
                if let Some(pattern) = &m.format_pattern {
                    if pattern != &config.canonical_date_format {
                        plan.push(TransformAction::ReformatDate {
                            feature: effective.clone(),
                            source_pattern: pattern.clone(),
                            target_pattern: config.canonical_date_format.clone(),
                        });
                    }
                }
            } else if numeric_target == Some(PrimitiveType::Float)
                && m.primitive_type == PrimitiveType::Integer
            {
                // The only cast the baseline emits: widening stays stable
                // under re-inference once cells are rewritten as floats.
                plan.push(TransformAction::CastType {
                    feature: effective.clone(),
                    target_type: PrimitiveType::Float,
                });
            }
        }
    }

    let plans = actions
        .into_iter()
        .filter(|(_, acts)| !acts.is_empty())
        .map(|(dataset_id, actions)| TransformationPlan {
            dataset_id,
            iteration,
            actions,
        })
        .collect();
    Recommendation { plans, warnings }
}

/// Convergence: no plan carries any action.
pub fn is_converged(plans: &[TransformationPlan]) -> bool {
    plans.iter().all(|p| p.actions.is_empty())
}

pub struct BaselineCluster;
impl crate::agents::ClusterAgent for BaselineCluster {
    fn cluster(
        &self,
        all_metadata: &[DatasetMetadata],
        config: &RecommenderConfig,
        _ontology: &Ontology,
    ) -> Result<Vec<FeatureCluster>, crate::agents::AgentError> {
        Ok(cluster_features(all_metadata, config.theta))
    }
}

pub struct BaselineRecommend;
impl crate::agents::RecommendAgent for BaselineRecommend {
    fn recommend(
        &self,
        clusters: &[FeatureCluster],
        all_metadata: &[DatasetMetadata],
        config: &RecommenderConfig,
        ontology: &Ontology,
    ) -> Result<Vec<TransformationPlan>, crate::agents::AgentError> {
        let rec = recommend_transformations(clusters, all_metadata, config, ontology);
        for w in &rec.warnings {
            log::warn!("recommender: {w}");
        }
        Ok(rec.plans)
    }
}

/// Assert the cluster output is a partition of the submitted features;
/// applied to every cluster agent's output, baseline or LLM.
pub fn check_partition(
    clusters: &[FeatureCluster],
    all_metadata: &[DatasetMetadata],
) -> Result<(), String> {
    let mut expected: BTreeSet<(String, String)> = BTreeSet::new();
    for m in all_metadata {
        for f in &m.features {
            expected.insert((m.dataset_id.clone(), f.name.clone()));
        }
    }
    let mut seen: BTreeSet<(String, String)> = BTreeSet::new();
    for c in clusters {
        if c.members.is_empty() {
            return Err(format!("cluster {} is empty", c.cluster_id));
        }
        for m in &c.members {
            let key = (m.dataset_id.clone(), m.feature_name.clone());
            if !seen.insert(key.clone()) {
                return Err(format!("feature {key:?} assigned to two clusters"));
            }
        }
    }
    if seen != expected {
        return Err("clusters are not a partition of the submitted features".into());
    }
    let ids: BTreeSet<u32> = clusters.iter().map(|c| c.cluster_id).collect();
    if ids.len() != clusters.len() {
        return Err("duplicate cluster ids".into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analyzer::{classify_feature, FeatureDescriptor};
    use crate::table::ColumnData;

    fn metadata_from(id: &str, cols: &[(&str, &[&str])]) -> DatasetMetadata {
        let ont = Ontology::bundled();
        let features: Vec<FeatureDescriptor> = cols
            .iter()
            .map(|(name, vals)| {
                let col = ColumnData::new(
                    *name,
                    vals.iter().map(|v| Some(v.to_string())).collect(),
                );
                classify_feature(name, &col, &ont)
            })
            .collect();
        DatasetMetadata {
            dataset_id: id.to_string(),
            iteration: 1,
            description: String::new(),
            features,
            topics: vec![],
            relationships: vec![],
            synthetic_samples: vec![],
            schema_hash: 0,
        }
    }

    #[test]
    fn case_count_variants_form_one_cluster() {
        let all = vec![
            metadata_from("it", &[("TotalPositiveCases", &["150000", "160000"])]),
            metadata_from("us", &[("cases", &["100000", "200000"])]),
            metadata_from("afg", &[("total_cases", &["120000", "130000"])]),
            metadata_from("idn", &[("Total Cases", &["110000", "140000"])]),
        ];
        let clusters = cluster_features(&all, 0.5);
        assert_eq!(clusters.len(), 1);
        assert_eq!(clusters[0].members.len(), 4);
        check_partition(&clusters, &all).unwrap();
    }

    #[test]
    fn single_dataset_yields_singletons() {
        let all = vec![metadata_from(
            "solo",
            &[("alpha_metric", &["x"]), ("beta_metric", &["y"])],
        )];
        let clusters = cluster_features(&all, 0.5);
        assert_eq!(clusters.len(), 2);
        assert!(clusters.iter().all(|c| c.members.len() == 1));
    }

    #[test]
    fn iso_code_names_cluster_by_token_jaccard() {
        // {location, iso, code} vs {iso, code}: 2/3 >= 0.5.
        let a = ClusterMember {
            dataset_id: "idn".into(),
            feature_name: "Location ISO Code".into(),
            semantic_uri: UNMAPPED.into(),
            primitive_type: PrimitiveType::Categorical,
            format_pattern: None,
        };
        let b = ClusterMember {
            dataset_id: "afg".into(),
            feature_name: "iso_code".into(),
            semantic_uri: UNMAPPED.into(),
            primitive_type: PrimitiveType::Categorical,
            format_pattern: None,
        };
        assert!(features_linked(&a, &b, 0.5));
        assert!(!features_linked(&a, &b, 0.7));
    }

    #[test]
    fn date_cluster_plan_matches_convention() {
        let ont = Ontology::bundled();
        let all = vec![
            metadata_from("afg", &[("date", &["2020-03-28", "2020-04-01"])]),
            metadata_from("idn", &[("Date", &["3/28/2020", "4/01/2020"])]),
        ];
        let clusters = cluster_features(&all, 0.5);
        let rec = recommend_transformations(&clusters, &all, &RecommenderConfig::default(), &ont);
        assert!(rec.warnings.is_empty());
        assert_eq!(rec.plans.len(), 1);
        let plan = &rec.plans[0];
        assert_eq!(plan.dataset_id, "idn");
        assert_eq!(
            plan.actions,
            vec![
                TransformAction::Rename {
                    from: "Date".into(),
                    to: "date".into()
                },
                TransformAction::ReformatDate {
                    feature: "date".into(),
                    source_pattern: "M/D/YYYY".into(),
                    target_pattern: "YYYY-MM-DD".into()
                },
            ]
        );
    }

    #[test]
    fn snake_case_rename_for_count_features() {
        let ont = Ontology::bundled();
        let all = vec![
            metadata_from("afg", &[("total_cases", &["120000", "130000"])]),
            metadata_from("idn", &[("Total Cases", &["110000", "140000"])]),
        ];
        let clusters = cluster_features(&all, 0.5);
        let rec = recommend_transformations(&clusters, &all, &RecommenderConfig::default(), &ont);
        assert_eq!(rec.plans.len(), 1);
        assert_eq!(rec.plans[0].dataset_id, "idn");
        assert_eq!(
            rec.plans[0].actions,
            vec![TransformAction::Rename {
                from: "Total Cases".into(),
                to: "total_cases".into()
            }]
        );
    }

    #[test]
    fn canonical_members_yield_no_plans() {
        let ont = Ontology::bundled();
        let all = vec![
            metadata_from("a", &[("date", &["2020-03-28"]), ("total_cases", &["120000"])]),
            metadata_from("b", &[("date", &["2020-04-01"]), ("total_cases", &["130000"])]),
        ];
        let clusters = cluster_features(&all, 0.5);
        let rec = recommend_transformations(&clusters, &all, &RecommenderConfig::default(), &ont);
        assert!(rec.plans.is_empty());
        assert!(is_converged(&rec.plans));
    }

    #[test]
    fn singleton_policy_drop_removes_unique_features() {
        let ont = Ontology::bundled();
        let all = vec![
            metadata_from(
                "afg",
                &[("date", &["2020-03-28"]), ("population_density", &["54.42"])],
            ),
            metadata_from("idn", &[("date", &["2020-03-28"])]),
        ];
        let clusters = cluster_features(&all, 0.5);
        let config = RecommenderConfig {
            singleton_policy: SingletonPolicy::Drop,
            ..Default::default()
        };
        let rec = recommend_transformations(&clusters, &all, &config, &ont);
        let afg = rec.plans.iter().find(|p| p.dataset_id == "afg").unwrap();
        assert!(afg.actions.contains(&TransformAction::DropFeature {
            feature: "population_density".into()
        }));
    }

    #[test]
    fn duplicate_members_resolved_to_common_depth() {
        // IT contributes two region-level features; one survives, renamed.
        let ont = Ontology::bundled();
        let all = vec![
            metadata_from(
                "it",
                &[("RegionCode", &["12", "7"]), ("RegionName", &["Lombardia", "Lazio"])],
            ),
            metadata_from("us", &[("state", &["California", "Texas"])]),
        ];
        let clusters = cluster_features(&all, 0.5);
        assert_eq!(clusters.len(), 1);
        let rec = recommend_transformations(&clusters, &all, &RecommenderConfig::default(), &ont);
        let it = rec.plans.iter().find(|p| p.dataset_id == "it").unwrap();
        assert!(it.actions.contains(&TransformAction::DropFeature {
            feature: "RegionName".into()
        }));
        assert!(it.actions.contains(&TransformAction::Rename {
            from: "RegionCode".into(),
            to: "region".into()
        }));
        let us = rec.plans.iter().find(|p| p.dataset_id == "us").unwrap();
        assert_eq!(
            us.actions,
            vec![TransformAction::Rename {
                from: "state".into(),
                to: "region".into()
            }]
        );
    }

    #[test]
    fn integer_members_widen_to_float_majority() {
        let ont = Ontology::bundled();
        let all = vec![
            metadata_from("a", &[("total_cases", &["100000"])]),
            metadata_from("b", &[("total_cases", &["100000.5"])]),
        ];
        let clusters = cluster_features(&all, 0.5);
        let rec = recommend_transformations(&clusters, &all, &RecommenderConfig::default(), &ont);
        assert_eq!(rec.plans.len(), 1);
        assert_eq!(rec.plans[0].dataset_id, "a");
        assert_eq!(
            rec.plans[0].actions,
            vec![TransformAction::CastType {
                feature: "total_cases".into(),
                target_type: PrimitiveType::Float
            }]
        );
    }

    #[test]
    fn snake_case_is_idempotent() {
        for s in ["Total Cases", "ISO code", "TotalPositiveCases", "already_snake"] {
            let once = snake_case(s);
            assert_eq!(snake_case(&once), once);
        }
        assert_eq!(snake_case("ISO code"), "iso_code");
    }

    #[test]
    fn clustering_is_input_order_independent() {
        let a = metadata_from("afg", &[("date", &["2020-03-28"]), ("iso_code", &["AFG"])]);
        let b = metadata_from("idn", &[("Date", &["3/28/2020"]), ("Location ISO Code", &["IDN"])]);
        let fwd = cluster_features(&[a.clone(), b.clone()], 0.5);
        let rev = cluster_features(&[b, a], 0.5);
        assert_eq!(fwd, rev);
    }

    #[test]
    fn is_converged_cases() {
        assert!(is_converged(&[]));
        assert!(is_converged(&[TransformationPlan {
            dataset_id: "a".into(),
            iteration: 1,
            actions: vec![]
        }]));
        assert!(!is_converged(&[TransformationPlan {
            dataset_id: "a".into(),
            iteration: 1,
            actions: vec![TransformAction::Rename {
                from: "x".into(),
                to: "y".into()
            }]
        }]));
    }

    #[test]
    fn union_find_matches_brute_force_closure() {
        // Oracle: repeated edge relaxation over the same linkage predicate.
        let all = vec![
            metadata_from(
                "a",
                &[("date", &["2020-01-01"]), ("cases", &["120000"]), ("x_only", &["q"])],
            ),
            metadata_from(
                "b",
                &[("Date", &["1/1/2020"]), ("total_cases", &["130000"]), ("state", &["NY"])],
            ),
        ];
        let clusters = cluster_features(&all, 0.5);

        let members = {
            let mut v = Vec::new();
            let mut sorted: Vec<&DatasetMetadata> = all.iter().collect();
            sorted.sort_by(|x, y| x.dataset_id.cmp(&y.dataset_id));
            for m in sorted {
                for f in &m.features {
                    v.push(ClusterMember {
                        dataset_id: m.dataset_id.clone(),
                        feature_name: f.name.clone(),
                        semantic_uri: f.semantic_uri.clone(),
                        primitive_type: f.primitive_type,
                        format_pattern: f.format_pattern.clone(),
                    });
                }
            }
            v
        };
        let n = members.len();
        let mut comp: Vec<usize> = (0..n).collect();
        loop {
            let mut changed = false;
            for i in 0..n {
                for j in 0..n {
                    if i != j
                        && features_linked(&members[i], &members[j], 0.5)
                        && comp[j] != comp[i]
                    {
                        let target = comp[i].min(comp[j]);
                        let (a, b) = (comp[i], comp[j]);
                        for c in comp.iter_mut() {
                            if *c == a || *c == b {
                                *c = target;
                            }
                        }
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let brute: BTreeSet<BTreeSet<(String, String)>> = {
            let mut map: BTreeMap<usize, BTreeSet<(String, String)>> = BTreeMap::new();
            for (i, m) in members.iter().enumerate() {
                map.entry(comp[i])
                    .or_default()
                    .insert((m.dataset_id.clone(), m.feature_name.clone()));
            }
            map.into_values().collect()
        };
        let ours: BTreeSet<BTreeSet<(String, String)>> = clusters
            .iter()
            .map(|c| {
                c.members
                    .iter()
                    .map(|m| (m.dataset_id.clone(), m.feature_name.clone()))
                    .collect()
            })
            .collect();
        assert_eq!(ours, brute);
    }
}
