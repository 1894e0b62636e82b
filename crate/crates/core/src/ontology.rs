//! The closed ontology that constrains every MR slot.
//!
//! A taxonomy is loaded from a JSON document with the keys `road_types`,
//! `manipulations`, `behaviors` and `region`. Every entry is canonicalized on
//! load (see [`crate::canon::canonicalize`]) and duplicates are rejected.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::canon::canonicalize;

/// Road type that matches any road. Always a member of the road-type slot.
pub const ANY_ROADS: &str = "any roads";

/// The four expected behaviors every shipped taxonomy uses.
pub const DEFAULT_BEHAVIORS: [&str; 4] = ["slow down", "turn left", "turn right", "keep current"];

/// Built-in German taxonomy document.
pub const TAXONOMY_DE: &str = include_str!("../data/taxonomy_de.json");
/// Built-in Californian taxonomy document.
pub const TAXONOMY_CA: &str = include_str!("../data/taxonomy_ca.json");

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OntologyError {
    #[error("malformed taxonomy document: {0}")]
    Parse(String),
    #[error("duplicate entry {value:?} in {section}")]
    DuplicateEntry { section: &'static str, value: String },
    #[error("taxonomy section {0} is empty")]
    EmptyCategory(&'static str),
    #[error("{category} target {name:?} cannot have {presence} presence")]
    PresenceConflict {
        category: Category,
        name: String,
        presence: Presence,
    },
    #[error("unknown built-in region {0:?}")]
    UnknownRegion(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    #[serde(alias = "traffic infrastructure", alias = "traffic_infrastructure", alias = "Traffic infrastructure")]
    TrafficInfrastructure,
    #[serde(alias = "object")]
    Object,
    #[serde(alias = "environment")]
    Environment,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::TrafficInfrastructure => "TrafficInfrastructure",
            Category::Object => "Object",
            Category::Environment => "Environment",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Presence {
    #[serde(alias = "optional")]
    Optional,
    #[serde(alias = "mandatory")]
    Mandatory,
}

impl fmt::Display for Presence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Presence::Optional => "Optional",
            Presence::Mandatory => "Mandatory",
        })
    }
}

/// The manipulation verb of the When line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verb {
    Adds,
    Replaces,
}

impl Verb {
    pub fn as_str(self) -> &'static str {
        match self {
            Verb::Adds => "adds",
            Verb::Replaces => "replaces",
        }
    }

    pub fn parse(s: &str) -> Option<Verb> {
        match canonicalize(s).as_str() {
            "adds" | "add" => Some(Verb::Adds),
            "replaces" | "replace" => Some(Verb::Replaces),
            _ => None,
        }
    }
}

impl fmt::Display for Verb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which MR slot a value is checked against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Slot {
    RoadType,
    Manipulation,
    Behavior,
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Slot::RoadType => "RoadType",
            Slot::Manipulation => "Manipulation",
            Slot::Behavior => "Behavior",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ManipulationTarget {
    pub category: Category,
    pub subcategory: String,
    pub name: String,
    pub presence: Presence,
}

impl ManipulationTarget {
    /// `Adds` for optional-presence targets, `Replaces` for mandatory ones.
    pub fn verb(&self) -> Verb {
        verb_for(self)
    }
}

pub fn verb_for(target: &ManipulationTarget) -> Verb {
    match target.presence {
        Presence::Optional => Verb::Adds,
        Presence::Mandatory => Verb::Replaces,
    }
}

/// Raw document shape, before canonicalization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaxonomyDocument {
    pub road_types: Vec<String>,
    pub manipulations: Vec<ManipulationEntry>,
    pub behaviors: Vec<String>,
    pub region: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManipulationEntry {
    pub category: Category,
    #[serde(default)]
    pub subcategory: String,
    pub name: String,
    #[serde(default)]
    pub presence: Option<Presence>,
    /// `"table"` for entries from the summarized ontology, `"added"` otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<String>,
}

/// An immutable, canonicalized ontology.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    road_types: BTreeSet<String>,
    targets: Vec<ManipulationTarget>,
    behaviors: BTreeSet<String>,
    region: String,
}

impl Taxonomy {
    pub fn from_json(source: &str) -> Result<Self, OntologyError> {
        let doc: TaxonomyDocument =
            serde_json::from_str(source).map_err(|e| OntologyError::Parse(e.to_string()))?;
        Self::from_document(doc)
    }

    pub fn from_document(doc: TaxonomyDocument) -> Result<Self, OntologyError> {
        let road_types = canonical_set("road_types", &doc.road_types)?;
        let behaviors = canonical_set("behaviors", &doc.behaviors)?;
        if doc.manipulations.is_empty() {
            return Err(OntologyError::EmptyCategory("manipulations"));
        }

        let mut names = BTreeSet::new();
        let mut targets = Vec::with_capacity(doc.manipulations.len());
        for entry in doc.manipulations {
            let name = canonicalize(&entry.name);
            if name.is_empty() {
                return Err(OntologyError::Parse("manipulation with empty name".into()));
            }
            let presence = match (entry.category, entry.presence) {
                (Category::Environment, None | Some(Presence::Mandatory)) => Presence::Mandatory,
                (Category::Object, None | Some(Presence::Optional)) => Presence::Optional,
                (Category::TrafficInfrastructure, p) => p.unwrap_or(Presence::Optional),
                (category, Some(presence)) => {
                    return Err(OntologyError::PresenceConflict { category, name, presence })
                }
            };
            let subcategory = match entry.category {
                Category::TrafficInfrastructure => canonicalize(&entry.subcategory),
                _ => String::new(),
            };
            // Names are the lookup key for manipulation phrases, so they must
            // be unique across categories too.
            if !names.insert(name.clone()) {
                return Err(OntologyError::DuplicateEntry { section: "manipulations", value: name });
            }
            targets.push(ManipulationTarget { category: entry.category, subcategory, name, presence });
        }

        let region = doc.region.trim().to_string();
        if region.is_empty() {
            return Err(OntologyError::Parse("region is empty".into()));
        }
        Ok(Taxonomy { road_types, targets, behaviors, region })
    }

    /// Loads one of the shipped region taxonomies (`DE` or `CA`).
    pub fn builtin(region: &str) -> Result<Self, OntologyError> {
        match region.trim().to_ascii_uppercase().as_str() {
            "DE" => Self::from_json(TAXONOMY_DE),
            "CA" => Self::from_json(TAXONOMY_CA),
            _ => Err(OntologyError::UnknownRegion(region.into())),
        }
    }

    pub fn region(&self) -> &str {
        &self.region
    }

    pub fn road_types(&self) -> impl Iterator<Item = &str> {
        self.road_types.iter().map(String::as_str)
    }

    pub fn behaviors(&self) -> impl Iterator<Item = &str> {
        self.behaviors.iter().map(String::as_str)
    }

    pub fn targets(&self) -> &[ManipulationTarget] {
        &self.targets
    }

    pub fn is_member(&self, slot: Slot, value: &str) -> bool {
        let value = canonicalize(value);
        match slot {
            Slot::RoadType => value == ANY_ROADS || self.road_types.contains(&value),
            Slot::Manipulation => self.target(&value).is_some(),
            Slot::Behavior => self.behaviors.contains(&value),
        }
    }

    /// Looks a target up by (canonicalized) name.
    pub fn target(&self, name: &str) -> Option<&ManipulationTarget> {
        let name = canonicalize(name);
        self.targets.iter().find(|t| t.name == name)
    }

    /// The longest target name that `phrase` starts with, on a word boundary.
    pub fn longest_target_prefix(&self, phrase: &str) -> Option<&ManipulationTarget> {
        self.targets
            .iter()
            .filter(|t| {
                phrase.starts_with(t.name.as_str())
                    && matches!(phrase.as_bytes().get(t.name.len()), None | Some(b' '))
            })
            .max_by_key(|t| t.name.len())
    }

    pub fn to_document(&self) -> TaxonomyDocument {
        TaxonomyDocument {
            road_types: self.road_types.iter().cloned().collect(),
            manipulations: self
                .targets
                .iter()
                .map(|t| ManipulationEntry {
                    category: t.category,
                    subcategory: t.subcategory.clone(),
                    name: t.name.clone(),
                    presence: Some(t.presence),
                    origin: None,
                })
                .collect(),
            behaviors: self.behaviors.iter().cloned().collect(),
            region: self.region.clone(),
        }
    }
}

fn canonical_set(section: &'static str, values: &[String]) -> Result<BTreeSet<String>, OntologyError> {
    if values.is_empty() {
        return Err(OntologyError::EmptyCategory(section));
    }
    let mut set = BTreeSet::new();
    for v in values {
        let c = canonicalize(v);
        if c.is_empty() {
            return Err(OntologyError::Parse(alloc::format!("empty string in {section}")));
        }
        if !set.insert(c.clone()) {
            return Err(OntologyError::DuplicateEntry { section, value: c });
        }
    }
    Ok(set)
}
