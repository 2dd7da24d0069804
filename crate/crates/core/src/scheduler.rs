//! Adaptive pair scheduling for one respondent's comparison stage.
//!
//! Rounds:
//! 1. `Random`: one seeded random perfect matching of the items. With an odd
//!    count the leftover item waits for the next round, where it is the least
//!    compared venue and so goes first.
//! 2. `Brackets`: undefeated venues are paired with each other until one
//!    remains, then likewise the winless ones. Within a bracket the venue with
//!    the fewest comparisons goes first; remaining ties are broken by the
//!    seeded generator.
//! 3. `Targeted`: every venue still short of the per-venue target is paired
//!    with its nearest unasked neighbour under a quick interim fit.
//!
//! The stage is complete once every venue reached the target or every pair
//! has been asked. `Free` serves the remaining pairs, nearest first, to
//! respondents who keep going.
//!
//! All randomness comes from a ChaCha stream addressed by `(seed, word
//! position)`, so the state is plain data: it serializes, replays, and undo
//! restores the exact stream position.

use std::collections::BTreeSet;
use std::io::{self, BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ComparisonOutcome, VenueId};
use crate::rank::{fit_springrank, ComparisonMatrix, RankConfig, RankScores};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScheduleError {
    #[error("every pair has already been asked")]
    Exhausted,
    #[error("pair ({0}, {1}) is not the outstanding question")]
    UnexpectedPair(VenueId, VenueId),
    #[error("nothing to undo")]
    NothingToUndo,
    #[error("no outstanding question")]
    NoOutstanding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Round {
    Random,
    Brackets,
    Targeted,
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    /// Comparisons each venue needs before the stage completes.
    pub min_comparisons: u32,
    pub interim: RankConfig,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig { min_comparisons: 3, interim: RankConfig::quick() }
    }
}

/// What to ask next. `pair == None` is the completion marker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDecision {
    pub pair: Option<(VenueId, VenueId)>,
    pub stage_complete: bool,
}

/// Everything that an answer can change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Progress {
    rng_word_pos: u128,
    round: Round,
    /// Answered pairs as `(lo, hi)` item indices.
    asked: BTreeSet<(usize, usize)>,
    counts: Vec<u32>,
    undefeated: BTreeSet<usize>,
    winless: BTreeSet<usize>,
    /// Remaining first-round pairs; `None` until the matching is drawn.
    matching: Option<Vec<(usize, usize)>>,
    outstanding: Option<(usize, usize)>,
    history: Vec<(usize, usize, ComparisonOutcome)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct UndoEntry {
    pair: (usize, usize),
    outcome: ComparisonOutcome,
    prior: Progress,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerState {
    items: Vec<VenueId>,
    config: SchedulerConfig,
    seed: u64,
    progress: Progress,
    undo_stack: Vec<UndoEntry>,
}

fn key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

impl SchedulerState {
    pub fn new(items: Vec<VenueId>, seed: u64, config: SchedulerConfig) -> Self {
        let n = items.len();
        let everyone: BTreeSet<usize> = (0..n).collect();
        SchedulerState {
            items,
            config,
            seed,
            progress: Progress {
                rng_word_pos: 0,
                round: Round::Random,
                asked: BTreeSet::new(),
                counts: vec![0; n],
                // an uncompared venue is both undefeated and winless
                undefeated: everyone.clone(),
                winless: everyone,
                matching: None,
                outstanding: None,
                history: Vec::new(),
            },
            undo_stack: Vec::new(),
        }
    }

    pub fn items(&self) -> &[VenueId] {
        &self.items
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.config
    }

    pub fn round(&self) -> Round {
        self.progress.round
    }

    pub fn comparison_count(&self, v: &VenueId) -> Option<u32> {
        self.index_of(v).map(|i| self.progress.counts[i])
    }

    pub fn counts(&self) -> impl Iterator<Item = (&VenueId, u32)> {
        self.items.iter().zip(self.progress.counts.iter().copied())
    }

    pub fn asked_pairs(&self) -> impl Iterator<Item = (&VenueId, &VenueId)> {
        self.progress.asked.iter().map(|&(a, b)| (&self.items[a], &self.items[b]))
    }

    pub fn asked_len(&self) -> usize {
        self.progress.asked.len()
    }

    pub fn undefeated(&self) -> BTreeSet<&VenueId> {
        self.progress.undefeated.iter().map(|&i| &self.items[i]).collect()
    }

    pub fn winless(&self) -> BTreeSet<&VenueId> {
        self.progress.winless.iter().map(|&i| &self.items[i]).collect()
    }

    pub fn can_undo(&self) -> bool {
        !self.undo_stack.is_empty()
    }

    /// Answered comparisons in order, as `(first, second, outcome)`.
    pub fn history(&self) -> Vec<(VenueId, VenueId, ComparisonOutcome)> {
        self.progress
            .history
            .iter()
            .map(|&(a, b, o)| (self.items[a].clone(), self.items[b].clone(), o))
            .collect()
    }

    pub fn outstanding(&self) -> Option<(&VenueId, &VenueId)> {
        self.progress.outstanding.map(|(a, b)| (&self.items[a], &self.items[b]))
    }

    pub fn total_pairs(&self) -> usize {
        let n = self.items.len();
        n * n.saturating_sub(1) / 2
    }

    pub fn is_exhausted(&self) -> bool {
        self.progress.asked.len() >= self.total_pairs()
    }

    pub fn is_stage_complete(&self) -> bool {
        self.is_exhausted() || self.progress.counts.iter().all(|&c| c >= self.config.min_comparisons)
    }

    /// Fraction of the per-venue target reached, averaged over venues.
    pub fn progress_fraction(&self) -> f64 {
        if self.is_stage_complete() {
            return 1.0;
        }
        let target = self.config.min_comparisons.max(1) as f64;
        let n = self.items.len().max(1) as f64;
        self.progress.counts.iter().map(|&c| (c as f64).min(target) / target).sum::<f64>() / n
    }

    fn index_of(&self, v: &VenueId) -> Option<usize> {
        self.items.iter().position(|x| x == v)
    }

    fn decision(&self, pair: (usize, usize), stage_complete: bool) -> PairDecision {
        PairDecision {
            pair: Some((self.items[pair.0].clone(), self.items[pair.1].clone())),
            stage_complete,
        }
    }

    /// Next question of the comparison stage, or the completion marker once
    /// the stage is complete. Repeated calls return the same outstanding pair.
    pub fn next_pair(&mut self, interim: Option<&RankScores>) -> Result<PairDecision, ScheduleError> {
        if let Some(p) = self.progress.outstanding {
            return Ok(self.decision(p, self.is_stage_complete()));
        }
        if self.is_stage_complete() {
            return Ok(PairDecision { pair: None, stage_complete: true });
        }
        let p = self.issue(interim)?;
        Ok(self.decision(p, false))
    }

    /// Like [`next_pair`](Self::next_pair), but keeps serving pairs after the
    /// stage is complete until every pair has been asked.
    pub fn continue_pair(&mut self, interim: Option<&RankScores>) -> Result<PairDecision, ScheduleError> {
        if let Some(p) = self.progress.outstanding {
            return Ok(self.decision(p, self.is_stage_complete()));
        }
        if self.is_exhausted() {
            return Err(ScheduleError::Exhausted);
        }
        let complete = self.is_stage_complete();
        let p = self.issue(interim)?;
        Ok(self.decision(p, complete))
    }

    pub fn record_outcome(
        &mut self,
        first: &VenueId,
        second: &VenueId,
        outcome: ComparisonOutcome,
    ) -> Result<(), ScheduleError> {
        let unexpected = || ScheduleError::UnexpectedPair(first.clone(), second.clone());
        let (a, b) = self.progress.outstanding.ok_or_else(unexpected)?;
        if &self.items[a] != first || &self.items[b] != second {
            return Err(unexpected());
        }
        self.undo_stack.push(UndoEntry { pair: (a, b), outcome, prior: self.progress.clone() });

        let p = &mut self.progress;
        p.outstanding = None;
        p.asked.insert(key(a, b));
        p.counts[a] += 1;
        p.counts[b] += 1;
        p.history.push((a, b, outcome));
        match outcome {
            ComparisonOutcome::First | ComparisonOutcome::Second => {
                let (winner, loser) = if outcome == ComparisonOutcome::First { (a, b) } else { (b, a) };
                p.undefeated.remove(&loser);
                p.winless.remove(&winner);
            }
            ComparisonOutcome::Indifferent => {
                for v in [a, b] {
                    p.undefeated.remove(&v);
                    p.winless.remove(&v);
                }
            }
        }
        Ok(())
    }

    /// Reverts the most recent answer; the same pair is outstanding again.
    pub fn undo(&mut self) -> Result<(), ScheduleError> {
        let entry = self.undo_stack.pop().ok_or(ScheduleError::NothingToUndo)?;
        self.progress = entry.prior;
        Ok(())
    }

    /// Checks the structural invariants; returns a description of the first
    /// broken one.
    pub fn check_invariants(&self) -> Result<(), String> {
        let n = self.items.len();
        let p = &self.progress;
        let mut counts = vec![0u32; n];
        for &(a, b) in &p.asked {
            if a >= b || b >= n {
                return Err(format!("malformed asked pair ({a}, {b})"));
            }
            counts[a] += 1;
            counts[b] += 1;
        }
        if counts != p.counts {
            return Err("comparison counts disagree with asked pairs".into());
        }
        if p.history.len() != p.asked.len() {
            return Err("asked pairs repeat".into());
        }
        if p.undefeated.iter().chain(&p.winless).any(|&i| i >= n) {
            return Err("pool member outside items".into());
        }
        if let Some((a, b)) = p.outstanding {
            if a == b || p.asked.contains(&key(a, b)) {
                return Err("outstanding pair already asked".into());
            }
        }
        Ok(())
    }

    fn with_rng<T>(&mut self, f: impl FnOnce(&mut ChaCha8Rng) -> T) -> T {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_word_pos(self.progress.rng_word_pos);
        let out = f(&mut rng);
        self.progress.rng_word_pos = rng.get_word_pos();
        out
    }

    /// Uniform choice among `tied`, which must be non-empty and sorted.
    fn pick(&mut self, tied: &[usize]) -> usize {
        if tied.len() == 1 {
            tied[0]
        } else {
            let k = self.with_rng(|rng| rng.random_range(0..tied.len()));
            tied[k]
        }
    }

    fn unasked(&self, a: usize, b: usize) -> bool {
        a != b && !self.progress.asked.contains(&key(a, b))
    }

    fn issue(&mut self, interim: Option<&RankScores>) -> Result<(usize, usize), ScheduleError> {
        let pair = loop {
            match self.progress.round {
                Round::Random => {
                    if self.progress.matching.is_none() {
                        let n = self.items.len();
                        let mut order: Vec<usize> = (0..n).collect();
                        self.with_rng(|rng| {
                            // Fisher-Yates
                            for i in (1..n).rev() {
                                let j = rng.random_range(0..=i);
                                order.swap(i, j);
                            }
                        });
                        let pairs: Vec<(usize, usize)> = order.chunks_exact(2).rev().map(|c| (c[0], c[1])).collect();
                        self.progress.matching = Some(pairs);
                    }
                    let queue = self.progress.matching.as_mut().expect("drawn above");
                    match queue.pop() {
                        Some(p) => break p,
                        None => self.progress.round = Round::Brackets,
                    }
                }
                Round::Brackets => {
                    let undefeated = self.progress.undefeated.clone();
                    if let Some(p) = self.bracket_pair(&undefeated) {
                        break p;
                    }
                    let winless = self.progress.winless.clone();
                    if let Some(p) = self.bracket_pair(&winless) {
                        break p;
                    }
                    self.progress.round = Round::Targeted;
                }
                Round::Targeted => {
                    if let Some(p) = self.targeted_pair(interim) {
                        break p;
                    }
                    self.progress.round = Round::Free;
                }
                Round::Free => match self.free_pair(interim) {
                    Some(p) => break p,
                    None => return Err(ScheduleError::Exhausted),
                },
            }
        };
        debug_assert!(self.unasked(pair.0, pair.1));
        self.progress.outstanding = Some(pair);
        Ok(pair)
    }

    fn fewest_compared(&self, candidates: impl Iterator<Item = usize>) -> Vec<usize> {
        let candidates: Vec<usize> = candidates.collect();
        let Some(min) = candidates.iter().map(|&i| self.progress.counts[i]).min() else {
            return Vec::new();
        };
        candidates.into_iter().filter(|&i| self.progress.counts[i] == min).collect()
    }

    fn bracket_pair(&mut self, pool: &BTreeSet<usize>) -> Option<(usize, usize)> {
        if pool.len() < 2 {
            return None;
        }
        let openers = self.fewest_compared(pool.iter().copied().filter(|&a| pool.iter().any(|&b| self.unasked(a, b))));
        if openers.is_empty() {
            return None;
        }
        let a = self.pick(&openers);
        let partners = self.fewest_compared(pool.iter().copied().filter(|&b| self.unasked(a, b)));
        let b = self.pick(&partners);
        Some((a, b))
    }

    fn interim_scores(&self, interim: Option<&RankScores>) -> Vec<f64> {
        if let Some(s) = interim {
            return self.items.iter().map(|v| s.raw(v).unwrap_or(0.0)).collect();
        }
        let mut m = ComparisonMatrix::empty(self.items.clone());
        for &(a, b, o) in &self.progress.history {
            m.record(a, b, o);
        }
        match fit_springrank(&m, &self.config.interim) {
            Ok(s) => s.raw_scores,
            Err(_) => vec![0.0; self.items.len()],
        }
    }

    fn targeted_pair(&mut self, interim: Option<&RankScores>) -> Option<(usize, usize)> {
        let n = self.items.len();
        let target = self.config.min_comparisons;
        let short: Vec<usize> = (0..n)
            .filter(|&a| self.progress.counts[a] < target && (0..n).any(|b| self.unasked(a, b)))
            .collect();
        if short.is_empty() {
            return None;
        }
        let scores = self.interim_scores(interim);
        let tied = self.fewest_compared(short.into_iter());
        let a = self.pick(&tied);
        (0..n)
            .filter(|&b| self.unasked(a, b))
            .min_by(|&x, &y| {
                let dx = (scores[a] - scores[x]).abs();
                let dy = (scores[a] - scores[y]).abs();
                dx.total_cmp(&dy)
                    .then(self.progress.counts[x].cmp(&self.progress.counts[y]))
                    .then(x.cmp(&y))
            })
            .map(|b| (a, b))
    }

    fn free_pair(&mut self, interim: Option<&RankScores>) -> Option<(usize, usize)> {
        let n = self.items.len();
        if self.is_exhausted() {
            return None;
        }
        let scores = self.interim_scores(interim);
        let c = &self.progress.counts;
        (0..n)
            .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
            .filter(|&(a, b)| self.unasked(a, b))
            .min_by(|&(a1, b1), &(a2, b2)| {
                let d1 = (scores[a1] - scores[b1]).abs();
                let d2 = (scores[a2] - scores[b2]).abs();
                d1.total_cmp(&d2)
                    .then((c[a1] + c[b1]).cmp(&(c[a2] + c[b2])))
                    .then((a1, b1).cmp(&(a2, b2)))
            })
    }

    /// Rebuilds a session from its transcript, checking that every recorded
    /// pair is the one the scheduler would have issued.
    pub fn replay(
        items: Vec<VenueId>,
        seed: u64,
        config: SchedulerConfig,
        transcript: &[TranscriptEntry],
    ) -> Result<Self, ScheduleError> {
        let mut state = SchedulerState::new(items, seed, config);
        for e in transcript {
            let d = state.continue_pair(None)?;
            if d.pair.as_ref() != Some(&(e.first.clone(), e.second.clone())) {
                return Err(ScheduleError::UnexpectedPair(e.first.clone(), e.second.clone()));
            }
            state.record_outcome(&e.first, &e.second, e.outcome)?;
        }
        Ok(state)
    }
}

/// One line of a session transcript: `order_index,first,second,outcome`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub order_index: u64,
    pub first: VenueId,
    pub second: VenueId,
    pub outcome: ComparisonOutcome,
}

pub fn transcript_of(state: &SchedulerState) -> Vec<TranscriptEntry> {
    state
        .history()
        .into_iter()
        .enumerate()
        .map(|(i, (first, second, outcome))| TranscriptEntry { order_index: i as u64, first, second, outcome })
        .collect()
}

pub fn write_transcript(out: &mut impl Write, entries: &[TranscriptEntry]) -> io::Result<()> {
    for e in entries {
        writeln!(out, "{},{},{},{}", e.order_index, e.first, e.second, e.outcome.as_token())?;
    }
    Ok(())
}

pub fn read_transcript(input: impl BufRead) -> io::Result<Vec<TranscriptEntry>> {
    let bad = |line: &str| io::Error::new(io::ErrorKind::InvalidData, format!("malformed transcript line {line:?}"));
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let [idx, first, second, outcome] = f.as_slice() else {
            return Err(bad(&line));
        };
        out.push(TranscriptEntry {
            order_index: idx.parse().map_err(|_| bad(&line))?,
            first: VenueId::new(*first).ok_or_else(|| bad(&line))?,
            second: VenueId::new(*second).ok_or_else(|| bad(&line))?,
            outcome: ComparisonOutcome::from_token(outcome).ok_or_else(|| bad(&line))?,
        });
    }
    Ok(out)
}
