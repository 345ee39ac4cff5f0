//! Domain ontologies: subject phrases and slots with their value pools.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotKind {
    Categorical,
    Open,
    Time,
    Number,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlotSpec {
    pub name: String,
    pub kind: SlotKind,
    pub values: Vec<String>,
    #[serde(default)]
    pub bookable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub subjects: Vec<String>,
    pub slots: Vec<SlotSpec>,
}

impl DomainSpec {
    pub fn slot(&self, name: &str) -> Option<&SlotSpec> {
        self.slots.iter().find(|s| s.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ontology {
    pub domains: BTreeMap<String, DomainSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OntologyError {
    #[error("malformed ontology document: {0}")]
    Syntax(String),
    #[error("unknown domain `{0}`")]
    UnknownDomain(String),
    #[error("domain `{0}` has no subject phrases")]
    NoSubjects(String),
    #[error("domain `{domain}`: invalid slot name `{slot}` (must be non-empty and contain no `-`)")]
    BadSlotName { domain: String, slot: String },
    #[error("domain `{domain}`: duplicate slot `{slot}`")]
    DuplicateSlot { domain: String, slot: String },
    #[error("domain `{domain}`: slot `{slot}` has no values")]
    EmptyValues { domain: String, slot: String },
    #[error("domain `{domain}`: slot `{slot}` lists `{value}` twice")]
    DuplicateValue {
        domain: String,
        slot: String,
        value: String,
    },
    #[error("domain `{domain}`: time slot `{slot}` has malformed value `{value}` (expected HH:MM)")]
    BadTime {
        domain: String,
        slot: String,
        value: String,
    },
    #[error("domain `{domain}`: number slot `{slot}` has non-numeric value `{value}`")]
    BadNumber {
        domain: String,
        slot: String,
        value: String,
    },
    #[error("domain `{domain}`: slot `{slot}` has an empty or reserved value")]
    BadValue { domain: String, slot: String },
}

fn is_time(v: &str) -> bool {
    let b = v.as_bytes();
    b.len() == 5
        && b[2] == b':'
        && b[..2].iter().chain(&b[3..]).all(u8::is_ascii_digit)
        && v[..2].parse::<u32>().is_ok_and(|h| h < 24)
        && v[3..].parse::<u32>().is_ok_and(|m| m < 60)
}

pub fn load_ontology(source: &str) -> Result<Ontology, OntologyError> {
    let ont: Ontology =
        serde_json::from_str(source).map_err(|e| OntologyError::Syntax(e.to_string()))?;
    ont.validate()?;
    Ok(ont)
}

impl Ontology {
    pub fn validate(&self) -> Result<(), OntologyError> {
        for (d, spec) in &self.domains {
            if spec.subjects.iter().all(|s| s.trim().is_empty()) {
                return Err(OntologyError::NoSubjects(d.clone()));
            }
            if spec.slots.is_empty() {
                log::warn!("domain `{d}` declares no slots");
            }
            let mut names = BTreeSet::new();
            for s in &spec.slots {
                let err_slot = || (d.clone(), s.name.clone());
                if s.name.is_empty() || s.name.contains('-') {
                    let (domain, slot) = err_slot();
                    return Err(OntologyError::BadSlotName { domain, slot });
                }
                if !names.insert(&s.name) {
                    let (domain, slot) = err_slot();
                    return Err(OntologyError::DuplicateSlot { domain, slot });
                }
                if s.values.is_empty() {
                    let (domain, slot) = err_slot();
                    return Err(OntologyError::EmptyValues { domain, slot });
                }
                let mut seen = BTreeSet::new();
                for v in &s.values {
                    let (domain, slot) = err_slot();
                    if v.trim().is_empty() || v.contains(crate::SEP) {
                        return Err(OntologyError::BadValue { domain, slot });
                    }
                    if !seen.insert(v) {
                        return Err(OntologyError::DuplicateValue {
                            domain,
                            slot,
                            value: v.clone(),
                        });
                    }
                    match s.kind {
                        SlotKind::Time if !is_time(v) => {
                            return Err(OntologyError::BadTime {
                                domain,
                                slot,
                                value: v.clone(),
                            })
                        }
                        SlotKind::Number if v.parse::<f64>().is_err() => {
                            return Err(OntologyError::BadNumber {
                                domain,
                                slot,
                                value: v.clone(),
                            })
                        }
                        _ => {}
                    }
                }
            }
        }
        Ok(())
    }

    pub fn domain(&self, name: &str) -> Result<&DomainSpec, OntologyError> {
        self.domains
            .get(name)
            .ok_or_else(|| OntologyError::UnknownDomain(name.to_string()))
    }

    /// Slot names declared by both domains, sorted.
    pub fn shared_slots(&self, a: &str, b: &str) -> Result<Vec<String>, OntologyError> {
        let a: BTreeSet<&String> = self.domain(a)?.slots.iter().map(|s| &s.name).collect();
        let b: BTreeSet<&String> = self.domain(b)?.slots.iter().map(|s| &s.name).collect();
        Ok(a.intersection(&b).map(|s| s.to_string()).collect())
    }

    /// Values a slot contributes to templates: every categorical value, and
    /// at most `pool_size` values for open, time and number slots.
    pub fn value_pool<'a>(&self, spec: &'a SlotSpec, pool_size: usize) -> &'a [String] {
        match spec.kind {
            SlotKind::Categorical => &spec.values,
            _ => &spec.values[..spec.values.len().min(pool_size)],
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }
}
