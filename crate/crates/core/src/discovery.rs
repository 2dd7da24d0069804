//! Consideration-set building: which venue to ask about next.
//!
//! Questions come from two sources: venues the respondent has published in
//! (largest first) and a recommender that sums normalized citation rows of the
//! venues already liked. After five history venues and five recommendations,
//! the two sources compete on works count. Three rejected history venues
//! retire the history source for good.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Dataset, VenueId};

pub const HISTORY_LEAD: usize = 5;
pub const RECOMMENDER_LEAD: usize = 5;
pub const HISTORY_REJECTION_LIMIT: u32 = 3;
pub const DEFAULT_QUESTIONS_TARGET: u32 = 20;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DiscoveryError {
    #[error("no recommendable venue remains")]
    NoCandidate,
    #[error("venue {0} is not the pending question")]
    UnexpectedVenue(VenueId),
    #[error("venue {0} is already in the consideration set")]
    AlreadyPresent(VenueId),
}

/// Row-normalized citation weights plus the works counts used for ties.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CitationIndex {
    rows: BTreeMap<VenueId, BTreeMap<VenueId, f64>>,
    works: BTreeMap<VenueId, u64>,
}

impl CitationIndex {
    /// Each citing venue's counts are divided by their row sum; empty rows are dropped.
    pub fn from_counts(
        counts: impl IntoIterator<Item = ((VenueId, VenueId), f64)>,
        works: BTreeMap<VenueId, u64>,
    ) -> Self {
        let mut rows: BTreeMap<VenueId, BTreeMap<VenueId, f64>> = BTreeMap::new();
        for ((citing, cited), n) in counts {
            if n > 0.0 {
                *rows.entry(citing).or_default().entry(cited).or_insert(0.0) += n;
            }
        }
        for row in rows.values_mut() {
            let total: f64 = row.values().sum();
            for w in row.values_mut() {
                *w /= total;
            }
        }
        CitationIndex { rows, works }
    }

    pub fn from_dataset(ds: &Dataset) -> Self {
        let works = ds.venues.iter().map(|(id, v)| (id.clone(), v.works_count)).collect();
        Self::from_counts(ds.citations.iter().map(|(k, &n)| (k.clone(), n)), works)
    }

    pub fn row(&self, citing: &VenueId) -> Option<&BTreeMap<VenueId, f64>> {
        self.rows.get(citing)
    }

    pub fn works(&self, v: &VenueId) -> u64 {
        self.works.get(v).copied().unwrap_or(0)
    }

    /// Summed weight from `liked` to every venue they cite.
    pub fn scores<'a>(&self, liked: impl IntoIterator<Item = &'a VenueId>) -> BTreeMap<VenueId, f64> {
        let mut sums: BTreeMap<VenueId, f64> = BTreeMap::new();
        for l in liked {
            if let Some(row) = self.rows.get(l) {
                for (v, w) in row {
                    *sums.entry(v.clone()).or_insert(0.0) += w;
                }
            }
        }
        sums
    }

    /// Highest summed weight outside `excluded`; ties go to the larger venue,
    /// then the smaller id.
    pub fn recommend<'a>(
        &self,
        liked: impl IntoIterator<Item = &'a VenueId>,
        excluded: &BTreeSet<VenueId>,
    ) -> Result<VenueId, DiscoveryError> {
        self.scores(liked)
            .into_iter()
            .filter(|(v, s)| *s > 0.0 && !excluded.contains(v))
            .max_by(|(a, sa), (b, sb)| {
                sa.total_cmp(sb)
                    .then(self.works(a).cmp(&self.works(b)))
                    .then(b.cmp(a))
            })
            .map(|(v, _)| v)
            .ok_or(DiscoveryError::NoCandidate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    History,
    Recommender,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiscoveryQuestion {
    Ask { venue: VenueId, source: Source },
    StageDone,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscoveryState {
    /// Insertion order is kept.
    pub liked: Vec<VenueId>,
    pub rejected: BTreeSet<VenueId>,
    pub asked: BTreeSet<VenueId>,
    /// Sorted by works count, largest first.
    pub history_pool: Vec<(VenueId, u64)>,
    pub history_served: u32,
    pub recommender_served: u32,
    pub history_rejections: u32,
    pub history_abandoned: bool,
    pub questions_asked: u32,
    pub questions_target: u32,
    pending: Option<(VenueId, Source)>,
}

impl DiscoveryState {
    pub fn new(history: impl IntoIterator<Item = (VenueId, u64)>, questions_target: u32) -> Self {
        let mut history_pool: Vec<(VenueId, u64)> = history.into_iter().collect();
        history_pool.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        history_pool.dedup_by(|a, b| a.0 == b.0);
        DiscoveryState {
            liked: Vec::new(),
            rejected: BTreeSet::new(),
            asked: BTreeSet::new(),
            history_pool,
            history_served: 0,
            recommender_served: 0,
            history_rejections: 0,
            history_abandoned: false,
            questions_asked: 0,
            questions_target,
            pending: None,
        }
    }

    /// History pool built from a respondent's publication venues.
    pub fn for_respondent(ds: &Dataset, respondent: &str, questions_target: u32) -> Self {
        let history = ds
            .respondents
            .get(respondent)
            .map(|r| {
                r.publications
                    .iter()
                    .map(|v| (v.clone(), ds.venues.get(v).map_or(0, |x| x.works_count)))
                    .collect::<Vec<_>>()
            })
            .unwrap_or_default();
        Self::new(history, questions_target)
    }

    pub fn pending(&self) -> Option<&VenueId> {
        self.pending.as_ref().map(|(v, _)| v)
    }

    pub fn is_liked(&self, v: &VenueId) -> bool {
        self.liked.contains(v)
    }

    pub fn is_done(&self) -> bool {
        self.pending.is_none() && self.questions_asked >= self.questions_target
    }

    fn top_history(&self) -> Option<&(VenueId, u64)> {
        if self.history_abandoned {
            return None;
        }
        self.history_pool.iter().find(|(v, _)| !self.asked.contains(v))
    }

    fn recommendation(&self, index: &CitationIndex, skip_history: bool) -> Option<VenueId> {
        let mut excluded = self.asked.clone();
        excluded.extend(self.rejected.iter().cloned());
        excluded.extend(self.liked.iter().cloned());
        if skip_history {
            excluded.extend(self.history_pool.iter().map(|(v, _)| v.clone()));
        }
        index.recommend(&self.liked, &excluded).ok()
    }

    fn choose(&self, index: &CitationIndex) -> Option<(VenueId, Source)> {
        let history = self.top_history().map(|(v, _)| (v.clone(), Source::History));
        if self.history_abandoned {
            return self.recommendation(index, false).map(|v| (v, Source::Recommender));
        }
        if (self.history_served as usize) < HISTORY_LEAD {
            if let Some(h) = history {
                return Some(h);
            }
        }
        if (self.recommender_served as usize) < RECOMMENDER_LEAD {
            return match self.recommendation(index, true) {
                Some(v) => Some((v, Source::Recommender)),
                None => history,
            };
        }
        match (self.recommendation(index, false), self.top_history()) {
            (Some(r), Some((h, h_works))) => {
                if index.works(&r) > *h_works {
                    Some((r, Source::Recommender))
                } else {
                    Some((h.clone(), Source::History))
                }
            }
            (Some(r), None) => Some((r, Source::Recommender)),
            (None, _) => history,
        }
    }

    /// The pending question, or a new one. Repeated calls return the same venue.
    pub fn next_question(&mut self, index: &CitationIndex) -> DiscoveryQuestion {
        if let Some((venue, source)) = &self.pending {
            return DiscoveryQuestion::Ask { venue: venue.clone(), source: *source };
        }
        if self.questions_asked >= self.questions_target {
            return DiscoveryQuestion::StageDone;
        }
        match self.choose(index) {
            Some((venue, source)) => {
                self.asked.insert(venue.clone());
                self.questions_asked += 1;
                match source {
                    Source::History => self.history_served += 1,
                    Source::Recommender => self.recommender_served += 1,
                }
                self.pending = Some((venue.clone(), source));
                DiscoveryQuestion::Ask { venue, source }
            }
            None => {
                // out of candidates: nothing further will be asked
                self.questions_target = self.questions_asked;
                DiscoveryQuestion::StageDone
            }
        }
    }

    pub fn record(&mut self, venue: &VenueId, liked: bool) -> Result<(), DiscoveryError> {
        let source = match &self.pending {
            Some((v, source)) if v == venue => *source,
            _ => return Err(DiscoveryError::UnexpectedVenue(venue.clone())),
        };
        self.pending = None;
        if liked {
            self.liked.push(venue.clone());
        } else {
            self.rejected.insert(venue.clone());
            if source == Source::History {
                self.history_rejections += 1;
                if self.history_rejections >= HISTORY_REJECTION_LIMIT {
                    self.history_abandoned = true;
                }
            }
        }
        Ok(())
    }

    /// Adds a venue the respondent searched for. Does not count as a question.
    pub fn direct_add(&mut self, venue: VenueId) -> Result<(), DiscoveryError> {
        if self.liked.contains(&venue) {
            return Err(DiscoveryError::AlreadyPresent(venue));
        }
        self.rejected.remove(&venue);
        self.asked.insert(venue.clone());
        self.liked.push(venue);
        Ok(())
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        if self.liked.iter().any(|v| self.rejected.contains(v)) {
            return Err("a venue is both liked and rejected".into());
        }
        if !self.liked.iter().chain(&self.rejected).all(|v| self.asked.contains(v)) {
            return Err("liked or rejected venue was never asked".into());
        }
        if self.history_rejections > HISTORY_REJECTION_LIMIT {
            return Err("too many history rejections".into());
        }
        let distinct: BTreeSet<&VenueId> = self.liked.iter().collect();
        if distinct.len() != self.liked.len() {
            return Err("liked venue repeated".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(s: &str) -> VenueId {
        VenueId::from(s)
    }

    fn index(rows: &[(&str, &[(&str, f64)])], works: &[(&str, u64)]) -> CitationIndex {
        let counts = rows
            .iter()
            .flat_map(|(c, row)| row.iter().map(move |(d, n)| ((v(c), v(d)), *n)));
        CitationIndex::from_counts(counts, works.iter().map(|(k, w)| (v(k), *w)).collect())
    }

    #[test]
    fn single_row_argmax() {
        let idx = index(&[("L", &[("X", 7.0), ("Y", 3.0)])], &[]);
        assert_eq!(idx.row(&v("L")).unwrap()[&v("X")], 0.7);
        assert_eq!(idx.recommend([&v("L")], &BTreeSet::new()), Ok(v("X")));
    }

    #[test]
    fn identical_rows_keep_argmax() {
        let idx = index(&[("L", &[("X", 2.0), ("Y", 3.0)]), ("M", &[("X", 2.0), ("Y", 3.0)])], &[]);
        let one = idx.recommend([&v("L")], &BTreeSet::new()).unwrap();
        let two = idx.recommend([&v("L"), &v("M")], &BTreeSet::new()).unwrap();
        assert_eq!(one, two);
    }

    #[test]
    fn ties_prefer_works_then_id() {
        let idx = index(&[("L", &[("B", 1.0), ("A", 1.0), ("C", 1.0)])], &[("C", 9), ("B", 9)]);
        assert_eq!(idx.recommend([&v("L")], &BTreeSet::new()), Ok(v("B")));
    }

    #[test]
    fn everything_excluded_is_no_candidate() {
        let idx = index(&[("L", &[("X", 1.0)])], &[]);
        let ex = BTreeSet::from([v("X")]);
        assert_eq!(idx.recommend([&v("L")], &ex), Err(DiscoveryError::NoCandidate));
    }

    #[test]
    fn history_in_descending_works() {
        let idx = CitationIndex::default();
        let mut s = DiscoveryState::new([(v("H2"), 100), (v("H1"), 500)], 20);
        assert_eq!(s.next_question(&idx), DiscoveryQuestion::Ask { venue: v("H1"), source: Source::History });
        s.record(&v("H1"), true).unwrap();
        assert_eq!(s.next_question(&idx), DiscoveryQuestion::Ask { venue: v("H2"), source: Source::History });
    }

    #[test]
    fn three_history_rejections_abandon_history() {
        let idx = index(&[("S", &[("R", 1.0)])], &[]);
        let mut s = DiscoveryState::new((1..=6).map(|i| (v(&format!("H{i}")), 100 - i)), 20);
        s.direct_add(v("S")).unwrap();
        for _ in 0..3 {
            let DiscoveryQuestion::Ask { venue, .. } = s.next_question(&idx) else { panic!() };
            s.record(&venue, false).unwrap();
        }
        assert!(s.history_abandoned);
        assert_eq!(s.next_question(&idx), DiscoveryQuestion::Ask { venue: v("R"), source: Source::Recommender });
    }

    #[test]
    fn record_requires_pending_venue() {
        let mut s = DiscoveryState::new([(v("H"), 1)], 20);
        assert_eq!(s.record(&v("H"), true), Err(DiscoveryError::UnexpectedVenue(v("H"))));
    }

    #[test]
    fn direct_add_twice_is_rejected_and_allowed_after_done() {
        let mut s = DiscoveryState::new([], 0);
        assert_eq!(s.next_question(&CitationIndex::default()), DiscoveryQuestion::StageDone);
        s.direct_add(v("V")).unwrap();
        assert_eq!(s.liked, vec![v("V")]);
        assert_eq!(s.direct_add(v("V")), Err(DiscoveryError::AlreadyPresent(v("V"))));
        assert_eq!(s.questions_asked, 0);
    }

    #[test]
    fn stops_at_target() {
        let idx = index(&[("S", &[("A", 1.0), ("B", 2.0), ("C", 3.0)])], &[]);
        let mut s = DiscoveryState::new([], 2);
        s.direct_add(v("S")).unwrap();
        for _ in 0..2 {
            let DiscoveryQuestion::Ask { venue, .. } = s.next_question(&idx) else { panic!() };
            s.record(&venue, true).unwrap();
        }
        assert_eq!(s.next_question(&idx), DiscoveryQuestion::StageDone);
        assert!(s.is_done());
    }
}
