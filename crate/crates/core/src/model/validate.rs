use std::collections::HashSet;
use std::fmt;

use serde::Serialize;

use super::Dataset;

/// One broken invariant: which entity, which field, which rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub entity: String,
    pub field: String,
    pub rule: String,
}

impl Violation {
    fn new(entity: impl Into<String>, field: &str, rule: &str) -> Self {
        Violation {
            entity: entity.into(),
            field: field.to_string(),
            rule: rule.to_string(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}: {}", self.entity, self.field, self.rule)
    }
}

pub(super) fn validate(ds: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();

    for (key, venue) in &ds.venues {
        let entity = format!("venue {key}");
        if key != &venue.id {
            out.push(Violation::new(&entity, "id", "map key equals venue id"));
        }
        if let Some(score) = venue.external_score {
            if !(score.is_finite() && score >= 0.0) {
                out.push(Violation::new(&entity, "external_score", "external_score absent or >= 0"));
            }
        }
    }

    for (key, r) in &ds.respondents {
        let entity = format!("respondent {key}");
        if key != &r.id {
            out.push(Violation::new(&entity, "id", "map key equals respondent id"));
        }
        if let Some(d) = r.prestige_decile {
            if !(1..=10).contains(&d) {
                out.push(Violation::new(&entity, "prestige_decile", "prestige_decile in [1,10]"));
            }
        }
        if let Some(a) = &r.aspirations {
            if a.iter().any(|v| !ds.venues.contains_key(v)) {
                out.push(Violation::new(&entity, "aspirations", "aspirations reference known venues"));
            }
        }
        if r.consideration_set.iter().any(|v| !ds.venues.contains_key(v)) {
            out.push(Violation::new(&entity, "consideration_set", "consideration set references known venues"));
        }
        let distinct: HashSet<_> = r.consideration_set.iter().collect();
        if distinct.len() != r.consideration_set.len() {
            out.push(Violation::new(&entity, "consideration_set", "consideration set has no repeats"));
        }
        if r.publications.iter().any(|v| !ds.venues.contains_key(v)) {
            out.push(Violation::new(&entity, "publications", "publications reference known venues"));
        }
    }

    let mut seen_order = HashSet::new();
    for (i, c) in ds.comparisons.iter().enumerate() {
        let entity = format!("comparison #{i} ({}, {})", c.respondent_id, c.order_index);
        if c.first == c.second {
            out.push(Violation::new(&entity, "first", "first ≠ second"));
        }
        if !seen_order.insert((c.respondent_id.as_str(), c.order_index)) {
            out.push(Violation::new(&entity, "order_index", "order_index unique per respondent"));
        }
        if !ds.venues.contains_key(&c.first) || !ds.venues.contains_key(&c.second) {
            out.push(Violation::new(&entity, "venue", "comparison references known venues"));
        }
        match ds.respondents.get(&c.respondent_id) {
            None => out.push(Violation::new(&entity, "respondent_id", "comparison references a known respondent")),
            Some(r) => {
                if !r.consideration_set.contains(&c.first) || !r.consideration_set.contains(&c.second) {
                    out.push(Violation::new(
                        &entity,
                        "venue",
                        "compared venues belong to the respondent's consideration set",
                    ));
                }
            }
        }
    }

    for ((citing, cited), count) in &ds.citations {
        let entity = format!("citation {citing}->{cited}");
        if !ds.venues.contains_key(citing) || !ds.venues.contains_key(cited) {
            out.push(Violation::new(&entity, "venue", "citation references known venues"));
        }
        if !(count.is_finite() && *count >= 0.0) {
            out.push(Violation::new(&entity, "count", "count >= 0"));
        }
    }

    out
}
