use std::collections::{BTreeMap, HashMap};

use crate::model::{Comparison, ComparisonOutcome, VenueId};

use super::RankError;

/// Directed win matrix: entry `(i, j)` holds the accumulated wins of item `i`
/// over item `j`. Stored sparsely; absent entries are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonMatrix {
    items: Vec<VenueId>,
    index: HashMap<VenueId, usize>,
    weights: BTreeMap<(usize, usize), f64>,
}

impl ComparisonMatrix {
    pub fn empty(items: Vec<VenueId>) -> Self {
        let index = items.iter().enumerate().map(|(i, v)| (v.clone(), i)).collect();
        ComparisonMatrix { items, index, weights: BTreeMap::new() }
    }

    /// A strict outcome adds 1 to (winner, loser); indifference adds 0.5 both ways.
    pub fn build<'a>(
        comparisons: impl IntoIterator<Item = &'a Comparison>,
        items: Vec<VenueId>,
    ) -> Result<Self, RankError> {
        let mut m = Self::empty(items);
        for c in comparisons {
            let i = m.position(&c.first).ok_or_else(|| RankError::UnknownItem(c.first.clone()))?;
            let j = m.position(&c.second).ok_or_else(|| RankError::UnknownItem(c.second.clone()))?;
            m.record(i, j, c.outcome);
        }
        Ok(m)
    }

    /// Adds one comparison between items `first` and `second` by index.
    pub fn record(&mut self, first: usize, second: usize, outcome: ComparisonOutcome) {
        match outcome {
            ComparisonOutcome::First => self.add(first, second, 1.0),
            ComparisonOutcome::Second => self.add(second, first, 1.0),
            ComparisonOutcome::Indifferent => {
                self.add(first, second, 0.5);
                self.add(second, first, 0.5);
            }
        }
    }

    pub fn add(&mut self, winner: usize, loser: usize, weight: f64) {
        assert!(winner != loser, "self-comparison");
        assert!(winner < self.len() && loser < self.len(), "index out of range");
        assert!(weight >= 0.0, "negative weight");
        *self.weights.entry((winner, loser)).or_insert(0.0) += weight;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[VenueId] {
        &self.items
    }

    pub fn position(&self, id: &VenueId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights.get(&(i, j)).copied().unwrap_or(0.0)
    }

    /// Nonzero entries `(i, j, A_ij)` in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.weights.iter().filter(|(_, &w)| w > 0.0).map(|(&(i, j), &w)| (i, j, w))
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.values().sum()
    }

    pub fn out_degrees(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.len()];
        for (i, _, w) in self.entries() {
            d[i] += w;
        }
        d
    }

    pub fn in_degrees(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.len()];
        for (_, j, w) in self.entries() {
            d[j] += w;
        }
        d
    }

    /// Dense row-major copy, mostly for tests and small fits.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        let mut out = vec![vec![0.0; n]; n];
        for (i, j, w) in self.entries() {
            out[i][j] = w;
        }
        out
    }
}
