//! Domain types shared by every other module: venues, respondents,
//! pairwise comparisons and the immutable [`Dataset`] that ties them together.

mod io;
mod validate;

pub use io::{dataset_hash, hash_files, load_dataset, write_dataset, DatasetPaths, LoadError};
pub use validate::Violation;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

/// Opaque venue identifier. Never synthesized; always supplied by the data.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VenueId(String);

impl VenueId {
    /// Returns `None` for empty or whitespace-only tokens.
    pub fn new(id: impl Into<String>) -> Option<Self> {
        let id = id.into();
        if id.trim().is_empty() {
            None
        } else {
            Some(VenueId(id))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for VenueId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for VenueId {
    /// Panics on blank input; meant for literals and tests.
    fn from(s: &str) -> Self {
        VenueId::new(s).expect("venue id must not be blank")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Venue {
    pub id: VenueId,
    pub name: String,
    pub works_count: u64,
    /// Journal Impact Factor, when one exists.
    pub external_score: Option<f64>,
    pub field_tags: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComparisonOutcome {
    First,
    Second,
    #[serde(alias = "tie")]
    Indifferent,
}

impl ComparisonOutcome {
    pub fn is_strict(self) -> bool {
        !matches!(self, ComparisonOutcome::Indifferent)
    }

    /// Token used in the comparisons file.
    pub fn as_token(self) -> &'static str {
        match self {
            ComparisonOutcome::First => "first",
            ComparisonOutcome::Second => "second",
            ComparisonOutcome::Indifferent => "tie",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "first" => Some(ComparisonOutcome::First),
            "second" => Some(ComparisonOutcome::Second),
            "tie" | "indifferent" => Some(ComparisonOutcome::Indifferent),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub respondent_id: String,
    pub first: VenueId,
    pub second: VenueId,
    pub outcome: ComparisonOutcome,
    pub order_index: u64,
}

impl Comparison {
    /// Winner and loser of a strict comparison.
    pub fn winner_loser(&self) -> Option<(&VenueId, &VenueId)> {
        match self.outcome {
            ComparisonOutcome::First => Some((&self.first, &self.second)),
            ComparisonOutcome::Second => Some((&self.second, &self.first)),
            ComparisonOutcome::Indifferent => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CareerStage {
    Assistant,
    Associate,
    Full,
    Other,
}

impl CareerStage {
    pub fn as_token(self) -> &'static str {
        match self {
            CareerStage::Assistant => "assistant",
            CareerStage::Associate => "associate",
            CareerStage::Full => "full",
            CareerStage::Other => "other",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "assistant" => Some(CareerStage::Assistant),
            "associate" => Some(CareerStage::Associate),
            "full" => Some(CareerStage::Full),
            "other" => Some(CareerStage::Other),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Man,
    Woman,
    Other,
}

impl Gender {
    pub fn as_token(self) -> &'static str {
        match self {
            Gender::Man => "man",
            Gender::Woman => "woman",
            Gender::Other => "other",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "man" => Some(Gender::Man),
            "woman" => Some(Gender::Woman),
            "other" => Some(Gender::Other),
            _ => None,
        }
    }
}

/// Three-tier "where would you like to publish" answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Aspirations {
    pub top: VenueId,
    pub mid: VenueId,
    pub low: VenueId,
}

impl Aspirations {
    pub fn iter(&self) -> impl Iterator<Item = &VenueId> {
        [&self.top, &self.mid, &self.low].into_iter()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RespondentRecord {
    pub id: String,
    pub field: String,
    pub career_stage: CareerStage,
    /// 1 = highest prestige, 10 = lowest.
    pub prestige_decile: Option<u8>,
    pub gender: Option<Gender>,
    /// Order as given; set semantics everywhere else.
    pub consideration_set: Vec<VenueId>,
    pub aspirations: Option<Aspirations>,
    pub publications: BTreeSet<VenueId>,
}

impl RespondentRecord {
    pub fn consideration(&self) -> BTreeSet<&VenueId> {
        self.consideration_set.iter().collect()
    }
}

/// Immutable after load. Everything downstream borrows it read-only.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub venues: BTreeMap<VenueId, Venue>,
    pub respondents: BTreeMap<String, RespondentRecord>,
    pub comparisons: Vec<Comparison>,
    pub citations: BTreeMap<(VenueId, VenueId), f64>,
}

impl Dataset {
    pub fn validate(&self) -> Vec<Violation> {
        validate::validate(self)
    }

    /// Comparisons of one respondent in response order.
    pub fn comparisons_of<'a>(&'a self, respondent: &'a str) -> impl Iterator<Item = &'a Comparison> + 'a {
        self.comparisons.iter().filter(move |c| c.respondent_id == respondent)
    }

    /// Respondents of a field, ordered by id.
    pub fn respondents_in<'a>(&'a self, field: &'a str) -> impl Iterator<Item = &'a RespondentRecord> + 'a {
        self.respondents.values().filter(move |r| r.field == field)
    }

    pub fn fields(&self) -> BTreeSet<&str> {
        self.respondents.values().map(|r| r.field.as_str()).collect()
    }

    /// Comparisons grouped by respondent id, each group sorted by order index.
    pub fn comparisons_by_respondent(&self) -> BTreeMap<&str, Vec<&Comparison>> {
        let mut out: BTreeMap<&str, Vec<&Comparison>> = BTreeMap::new();
        for c in &self.comparisons {
            out.entry(c.respondent_id.as_str()).or_default().push(c);
        }
        for group in out.values_mut() {
            group.sort_by_key(|c| c.order_index);
        }
        out
    }

    pub fn venue_by_name(&self, name: &str) -> Option<&Venue> {
        self.venues.values().find(|v| v.name.eq_ignore_ascii_case(name))
    }
}
