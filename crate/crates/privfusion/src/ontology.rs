//! The bundled concept catalog used for semantic typing of features.
//!
//! Ships as one JSON object per line so deployments can extend it; the
//! default catalog covers temporal, geographic, identifier, epidemiological
//! and demographic concepts.

use std::collections::HashMap;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sentinel URI for features that match no concept.
pub const UNMAPPED: &str = "unmapped";

const BUNDLED: &str = include_str!("data/ontology.jsonl");

#[derive(Debug, Error)]
pub enum OntologyError {
    #[error("line {0}: {1}")]
    Parse(usize, String),
    #[error("duplicate uri '{0}'")]
    DuplicateUri(String),
    #[error("unknown parent '{parent}' for '{uri}'")]
    UnknownParent { uri: String, parent: String },
    #[error("cycle in parent chain at '{0}'")]
    Cycle(String),
    #[error("invalid value pattern for '{uri}': {detail}")]
    BadPattern { uri: String, detail: String },
}

#[derive(Debug, Deserialize)]
struct RawConcept {
    uri: String,
    label: String,
    aliases: Vec<String>,
    parent: Option<String>,
    pattern: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OntologyConcept {
    pub uri: String,
    pub label: String,
    /// Lowercase token strings matched against normalized feature-name tokens.
    pub aliases: Vec<String>,
    pub parent_uri: Option<String>,
    pub value_pattern: Option<String>,
    /// Root concepts have depth 0.
    pub depth: u32,
}

pub struct Ontology {
    concepts: Vec<OntologyConcept>,
    by_uri: HashMap<String, usize>,
    patterns: HashMap<String, Regex>,
}

impl Ontology {
    /// Load the catalog shipped with the binary.
    pub fn bundled() -> Self {
        Self::from_jsonl(BUNDLED).expect("bundled ontology is valid")
    }

    /// Parse a JSONL catalog; fails fast on cycles, bad parents or patterns.
    pub fn from_jsonl(text: &str) -> Result<Self, OntologyError> {
        let mut raw = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let concept: RawConcept = serde_json::from_str(line)
                .map_err(|e| OntologyError::Parse(i + 1, e.to_string()))?;
            raw.push(concept);
        }

        let mut by_uri = HashMap::new();
        for (i, c) in raw.iter().enumerate() {
            if by_uri.insert(c.uri.clone(), i).is_some() {
                return Err(OntologyError::DuplicateUri(c.uri.clone()));
            }
        }
        for c in &raw {
            if let Some(p) = &c.parent {
                if !by_uri.contains_key(p) {
                    return Err(OntologyError::UnknownParent {
                        uri: c.uri.clone(),
                        parent: p.clone(),
                    });
                }
            }
        }

        // Depth = parent.depth + 1; a walk longer than the concept count
        // means the parent chain loops.
        let mut depths: HashMap<&str, u32> = HashMap::new();
        for c in &raw {
            let mut chain = 0u32;
            let mut cursor = c;
            while let Some(p) = &cursor.parent {
                chain += 1;
                if chain as usize > raw.len() {
                    return Err(OntologyError::Cycle(c.uri.clone()));
                }
                cursor = &raw[by_uri[p.as_str()]];
            }
            depths.insert(c.uri.as_str(), chain);
        }

        let mut patterns = HashMap::new();
        for c in &raw {
            if let Some(p) = &c.pattern {
                let re = Regex::new(p).map_err(|e| OntologyError::BadPattern {
                    uri: c.uri.clone(),
                    detail: e.to_string(),
                })?;
                patterns.insert(c.uri.clone(), re);
            }
        }

        let concepts = raw
            .iter()
            .map(|c| OntologyConcept {
                uri: c.uri.clone(),
                label: c.label.clone(),
                aliases: c.aliases.iter().map(|a| a.to_lowercase()).collect(),
                parent_uri: c.parent.clone(),
                value_pattern: c.pattern.clone(),
                depth: depths[c.uri.as_str()],
            })
            .collect();
        Ok(Ontology {
            concepts,
            by_uri: by_uri
                .into_iter()
                .map(|(k, v)| (k, v))
                .collect(),
            patterns,
        })
    }

    pub fn concepts(&self) -> &[OntologyConcept] {
        &self.concepts
    }

    pub fn get(&self, uri: &str) -> Option<&OntologyConcept> {
        self.by_uri.get(uri).map(|&i| &self.concepts[i])
    }

    pub fn pattern(&self, uri: &str) -> Option<&Regex> {
        self.patterns.get(uri)
    }

    /// Depth of a concept; unmapped or unknown URIs count as depth 0.
    pub fn depth(&self, uri: &str) -> u32 {
        self.get(uri).map(|c| c.depth).unwrap_or(0)
    }

    /// The top-level ancestor of a concept.
    pub fn root_of(&self, uri: &str) -> Option<&OntologyConcept> {
        let mut cursor = self.get(uri)?;
        while let Some(p) = &cursor.parent_uri {
            cursor = self.get(p)?;
        }
        Some(cursor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_loads_and_depths_hold() {
        let ont = Ontology::bundled();
        assert!(ont.concepts().len() >= 25);
        for c in ont.concepts() {
            match &c.parent_uri {
                None => assert_eq!(c.depth, 0),
                Some(p) => assert_eq!(c.depth, ont.get(p).unwrap().depth + 1),
            }
        }
        assert_eq!(ont.root_of("dbo:province").unwrap().uri, "dbo:place");
        assert_eq!(ont.root_of("dbo:date").unwrap().label, "time");
    }

    #[test]
    fn cycle_is_rejected() {
        let text = r#"{"uri":"a","label":"a","aliases":[],"parent":"b","pattern":null}
{"uri":"b","label":"b","aliases":[],"parent":"a","pattern":null}"#;
        assert!(matches!(
            Ontology::from_jsonl(text),
            Err(OntologyError::Cycle(_))
        ));
    }

    #[test]
    fn unknown_parent_is_rejected() {
        let text = r#"{"uri":"a","label":"a","aliases":[],"parent":"nope","pattern":null}"#;
        assert!(matches!(
            Ontology::from_jsonl(text),
            Err(OntologyError::UnknownParent { .. })
        ));
    }

    #[test]
    fn iso_pattern_matches_codes() {
        let ont = Ontology::bundled();
        let re = ont.pattern("dbo:isoCode").unwrap();
        assert!(re.is_match("AFG"));
        assert!(re.is_match("US"));
        assert!(!re.is_match("afg"));
        assert!(!re.is_match("ABCD"));
    }
}
