//! Field-level consensus and alignment measures.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Comparison, ComparisonOutcome, Dataset, RespondentRecord, VenueId};
use crate::rank::{
    field_scores, global_scores, individual_scores, leave_one_out_field_scores, normalize_min_max, ordinal_ranks,
    RankConfig, RankError, RankScores,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticsError {
    #[error("no eligible comparisons")]
    NoEligibleComparisons,
    #[error("field {0:?} has no respondents")]
    EmptyField(String),
    #[error("field {field:?} needs at least {needed} respondents")]
    TooFewRespondents { field: String, needed: usize },
    #[error("unknown respondent {0}")]
    UnknownRespondent(String),
    #[error("venue {0} is not in the field ranking")]
    VenueNotRanked(VenueId),
    #[error("no aspiration data for field {0:?}")]
    NoAspirations(String),
    #[error(transparent)]
    Rank(#[from] RankError),
}

/// Regularization used for personal and consensus fits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticsConfig {
    pub individual: RankConfig,
    pub consensus: RankConfig,
}

impl Default for AnalyticsConfig {
    fn default() -> Self {
        AnalyticsConfig { individual: RankConfig::individual(), consensus: RankConfig::consensus() }
    }
}

/// Venues excluded when picking a field's flagship.
pub const GENERAL_INTEREST: &[&str] = &["Nature", "Science", "PNAS", "Proceedings of the National Academy of Sciences"];

fn field_respondents<'a>(ds: &'a Dataset, field: &'a str) -> Vec<&'a RespondentRecord> {
    ds.respondents_in(field).collect()
}

fn nonempty_field<'a>(ds: &'a Dataset, field: &'a str) -> Result<Vec<&'a RespondentRecord>, AnalyticsError> {
    let rs = field_respondents(ds, field);
    if rs.is_empty() {
        return Err(AnalyticsError::EmptyField(field.to_string()));
    }
    Ok(rs)
}

fn pct(num: f64, den: f64) -> f64 {
    100.0 * num / den
}

// ---------------------------------------------------------------------------
// Accumulation

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccumulationCurve {
    pub field: String,
    pub k_values: Vec<usize>,
    pub mean_unique: Vec<f64>,
    /// Standard deviation across realizations, per k.
    pub sd_unique: Vec<f64>,
    pub realizations: usize,
    pub seed: u64,
}

/// Mean size of the union of `k` consideration sets drawn without replacement,
/// for every `k`, estimated over random orderings of the field's respondents.
pub fn accumulation_curve(
    ds: &Dataset,
    field: &str,
    realizations: usize,
    seed: u64,
) -> Result<AccumulationCurve, AnalyticsError> {
    let sets: Vec<BTreeSet<&VenueId>> = nonempty_field(ds, field)?.iter().map(|r| r.consideration()).collect();
    let n = sets.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = vec![0.0; n];
    let mut sum_sq = vec![0.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..realizations {
        order.shuffle(&mut rng);
        let mut union: BTreeSet<&VenueId> = BTreeSet::new();
        for (k, &i) in order.iter().enumerate() {
            union.extend(sets[i].iter().copied());
            let u = union.len() as f64;
            sum[k] += u;
            sum_sq[k] += u * u;
        }
    }
    let r = realizations.max(1) as f64;
    let mean_unique: Vec<f64> = sum.iter().map(|s| s / r).collect();
    let sd_unique = sum_sq
        .iter()
        .zip(&mean_unique)
        .map(|(sq, m)| {
            if realizations < 2 {
                0.0
            } else {
                ((sq - r * m * m) / (r - 1.0)).max(0.0).sqrt()
            }
        })
        .collect();
    Ok(AccumulationCurve {
        field: field.to_string(),
        k_values: (1..=n).collect(),
        mean_unique,
        sd_unique,
        realizations,
        seed,
    })
}

/// Exact expected union size: sum over venues of `1 - C(n-m, k) / C(n, k)`,
/// where `m` counts the sets containing the venue.
pub fn accumulation_expected<T: Ord>(sets: &[BTreeSet<T>]) -> Vec<f64> {
    let n = sets.len();
    let mut m: BTreeMap<&T, usize> = BTreeMap::new();
    for s in sets {
        for v in s {
            *m.entry(v).or_insert(0) += 1;
        }
    }
    (1..=n)
        .map(|k| {
            m.values()
                .map(|&mv| {
                    // C(n-m, k) / C(n, k) as a running product
                    let miss = if k > n - mv {
                        0.0
                    } else {
                        (0..k).map(|i| (n - mv - i) as f64 / (n - i) as f64).product()
                    };
                    1.0 - miss
                })
                .sum()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Overlap and popularity

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OverlapMode {
    /// Mean over others of the share of my set they also chose.
    #[default]
    SetShare,
    /// Share of my set chosen by at least one other respondent.
    AnyOther,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Overlap {
    pub per_respondent: BTreeMap<String, f64>,
    pub mean: f64,
}

/// Percentage overlap of each respondent's consideration set with the rest of
/// the field. Respondents with empty sets are skipped.
pub fn within_field_overlap(ds: &Dataset, field: &str, mode: OverlapMode) -> Result<Overlap, AnalyticsError> {
    let rs = field_respondents(ds, field);
    if rs.len() < 2 {
        return Err(AnalyticsError::TooFewRespondents { field: field.to_string(), needed: 2 });
    }
    let sets: Vec<BTreeSet<&VenueId>> = rs.iter().map(|r| r.consideration()).collect();
    let mut per_respondent = BTreeMap::new();
    for (i, r) in rs.iter().enumerate() {
        let mine = &sets[i];
        if mine.is_empty() {
            continue;
        }
        let size = mine.len() as f64;
        let others = sets.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, s)| s);
        let value = match mode {
            OverlapMode::SetShare => {
                let shares: Vec<f64> = others.map(|s| mine.intersection(s).count() as f64 / size).collect();
                pct(shares.iter().sum(), shares.len() as f64)
            }
            OverlapMode::AnyOther => {
                let union: BTreeSet<&VenueId> = others.flat_map(|s| s.iter().copied()).collect();
                pct(mine.intersection(&union).count() as f64, size)
            }
        };
        per_respondent.insert(r.id.clone(), value);
    }
    if per_respondent.is_empty() {
        return Err(AnalyticsError::EmptyField(field.to_string()));
    }
    let mean = per_respondent.values().sum::<f64>() / per_respondent.len() as f64;
    Ok(Overlap { per_respondent, mean })
}

/// Percentage of the field's respondents selecting each venue.
pub fn selection_shares(ds: &Dataset, field: &str) -> BTreeMap<VenueId, f64> {
    let rs = field_respondents(ds, field);
    let mut counts: BTreeMap<VenueId, usize> = BTreeMap::new();
    for r in &rs {
        for v in r.consideration() {
            *counts.entry(v.clone()).or_insert(0) += 1;
        }
    }
    counts.into_iter().map(|(v, c)| (v, pct(c as f64, rs.len() as f64))).collect()
}

/// The `k` most selected venues with their selection percentages.
pub fn top_k_popularity(ds: &Dataset, field: &str, k: usize) -> Vec<(VenueId, f64)> {
    let mut shares: Vec<(VenueId, f64)> = selection_shares(ds, field).into_iter().collect();
    shares.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    shares.truncate(k);
    shares
}

// ---------------------------------------------------------------------------
// Prediction accuracy

/// Credit for predicting a comparison from two scores: 1 if the chosen venue
/// scores higher, 0.5 on equal scores, 0 otherwise. Indifference is not scored.
pub fn credit(first_score: f64, second_score: f64, outcome: ComparisonOutcome) -> Option<f64> {
    let (chosen, other) = match outcome {
        ComparisonOutcome::First => (first_score, second_score),
        ComparisonOutcome::Second => (second_score, first_score),
        ComparisonOutcome::Indifferent => return None,
    };
    Some(if chosen > other {
        1.0
    } else if chosen == other {
        0.5
    } else {
        0.0
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreSource {
    /// Field consensus without the respondent.
    LooField,
    /// All-field consensus without the respondent.
    Global,
    /// External venue score.
    Jif,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Accuracy {
    pub credit: f64,
    pub eligible: usize,
    pub percent: f64,
}

impl Accuracy {
    fn from_credits(credits: impl IntoIterator<Item = f64>) -> Result<Self, AnalyticsError> {
        let (mut total, mut n) = (0.0, 0usize);
        for c in credits {
            total += c;
            n += 1;
        }
        if n == 0 {
            return Err(AnalyticsError::NoEligibleComparisons);
        }
        Ok(Accuracy { credit: total, eligible: n, percent: pct(total, n as f64) })
    }
}

fn has_jif(ds: &Dataset, c: &Comparison) -> bool {
    let jif = |v: &VenueId| ds.venues.get(v).and_then(|x| x.external_score).is_some();
    jif(&c.first) && jif(&c.second)
}

/// Consensus scores for predicting one respondent, or `None` if nothing is
/// left once they are held out.
fn held_out_scores(
    ds: &Dataset,
    r: &RespondentRecord,
    source: ScoreSource,
    config: &AnalyticsConfig,
) -> Result<Option<BTreeMap<VenueId, f64>>, AnalyticsError> {
    let fit = match source {
        ScoreSource::LooField => leave_one_out_field_scores(ds, &r.field, &r.id, &config.consensus),
        ScoreSource::Global => global_scores(ds, Some(&r.id), &config.consensus),
        ScoreSource::Jif => {
            return Ok(Some(
                ds.venues.iter().filter_map(|(id, v)| v.external_score.map(|s| (id.clone(), s))).collect(),
            ))
        }
    };
    match fit {
        Ok(s) => Ok(Some(s.raw_map())),
        Err(RankError::EmptyField(_)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Share of strict comparisons in which the respondent chose the venue the
/// held-out consensus scores higher. Comparisons with an unscored venue are
/// skipped. `field = None` pools all fields; `jif_subset` keeps only
/// comparisons where both venues carry an external score.
pub fn prediction_accuracy(
    ds: &Dataset,
    field: Option<&str>,
    source: ScoreSource,
    jif_subset: bool,
    config: &AnalyticsConfig,
) -> Result<Accuracy, AnalyticsError> {
    let by_respondent = ds.comparisons_by_respondent();
    let respondents: Vec<&RespondentRecord> = ds
        .respondents
        .values()
        .filter(|r| field.is_none_or(|f| r.field == f))
        .filter(|r| by_respondent.contains_key(r.id.as_str()))
        .collect();
    let jif_subset = jif_subset || source == ScoreSource::Jif;
    let per: Vec<Vec<f64>> = respondents
        .par_iter()
        .map(|r| -> Result<Vec<f64>, AnalyticsError> {
            let Some(scores) = held_out_scores(ds, r, source, config)? else {
                return Ok(Vec::new());
            };
            Ok(by_respondent[r.id.as_str()]
                .iter()
                .filter(|c| !jif_subset || has_jif(ds, c))
                .filter_map(|c| {
                    let a = scores.get(&c.first)?;
                    let b = scores.get(&c.second)?;
                    credit(*a, *b, c.outcome)
                })
                .collect())
        })
        .collect::<Result<_, _>>()?;
    Accuracy::from_credits(per.into_iter().flatten())
}

/// Percentage of all comparisons answered with indifference.
pub fn indifference_share(ds: &Dataset) -> Option<f64> {
    if ds.comparisons.is_empty() {
        return None;
    }
    let ties = ds.comparisons.iter().filter(|c| c.outcome == ComparisonOutcome::Indifferent).count();
    Some(pct(ties as f64, ds.comparisons.len() as f64))
}

// ---------------------------------------------------------------------------
// Top-5 agreement

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Agreement {
    pub per_respondent: BTreeMap<String, f64>,
    pub mean: f64,
}

pub const TOP_K: usize = 5;

/// Overlap between a respondent's personal top five and the held-out field
/// consensus top five over the venues that respondent compared. Respondents
/// with fewer than five ranked venues are scored out of their set size.
pub fn top5_agreement(ds: &Dataset, field: &str, config: &AnalyticsConfig) -> Result<Agreement, AnalyticsError> {
    let rs: Vec<&RespondentRecord> = nonempty_field(ds, field)?
        .into_iter()
        .filter(|r| ds.comparisons_of(&r.id).next().is_some())
        .collect();
    let per: Vec<Option<(String, f64)>> = rs
        .par_iter()
        .map(|r| -> Result<Option<(String, f64)>, AnalyticsError> {
            let personal = individual_scores(ds, &r.id, &config.individual)?;
            let Some(consensus) = held_out_scores(ds, r, ScoreSource::LooField, config)? else {
                return Ok(None);
            };
            let mine: BTreeSet<VenueId> = personal.top(TOP_K).into_iter().collect();
            let mut theirs: Vec<(&VenueId, f64)> =
                personal.items.iter().filter_map(|v| consensus.get(v).map(|&s| (v, s))).collect();
            theirs.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
            let theirs: BTreeSet<VenueId> = theirs.into_iter().take(TOP_K).map(|(v, _)| v.clone()).collect();
            let den = TOP_K.min(personal.len()) as f64;
            Ok(Some((r.id.clone(), pct(mine.intersection(&theirs).count() as f64, den))))
        })
        .collect::<Result<_, _>>()?;
    let per_respondent: BTreeMap<String, f64> = per.into_iter().flatten().collect();
    if per_respondent.is_empty() {
        return Err(AnalyticsError::NoEligibleComparisons);
    }
    let mean = per_respondent.values().sum::<f64>() / per_respondent.len() as f64;
    Ok(Agreement { per_respondent, mean })
}

// ---------------------------------------------------------------------------
// Self-consistency

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelfConsistency {
    pub strict: usize,
    pub violations: usize,
    pub violation_pct: f64,
    /// Normalized personal score of the higher-scored venue in each violation.
    pub violation_ranks: Vec<f64>,
}

impl SelfConsistency {
    pub fn rank_statistic(&self) -> Option<f64> {
        if self.violation_ranks.is_empty() {
            None
        } else {
            Some(self.violation_ranks.iter().sum::<f64>() / self.violation_ranks.len() as f64)
        }
    }
}

/// Strict choices of a set of comparisons that contradict the scores fitted
/// to those same comparisons.
pub fn self_consistency_of(comparisons: &[&Comparison], scores: &RankScores) -> SelfConsistency {
    let raw = scores.raw_map();
    let normalized: BTreeMap<&VenueId, f64> =
        scores.items.iter().zip(normalize_min_max(&scores.raw_scores)).collect();
    let mut strict = 0;
    let mut violation_ranks = Vec::new();
    for c in comparisons {
        let Some((winner, loser)) = c.winner_loser() else { continue };
        let (Some(w), Some(l)) = (raw.get(winner), raw.get(loser)) else { continue };
        strict += 1;
        if w < l {
            violation_ranks.push(normalized[loser]);
        }
    }
    let violations = violation_ranks.len();
    let violation_pct = if strict == 0 { 0.0 } else { pct(violations as f64, strict as f64) };
    SelfConsistency { strict, violations, violation_pct, violation_ranks }
}

pub fn self_consistency(ds: &Dataset, respondent: &str, config: &AnalyticsConfig) -> Result<SelfConsistency, AnalyticsError> {
    if !ds.respondents.contains_key(respondent) {
        return Err(AnalyticsError::UnknownRespondent(respondent.to_string()));
    }
    let own: Vec<&Comparison> = ds.comparisons_of(respondent).collect();
    let scores = individual_scores(ds, respondent, &config.individual)?;
    Ok(self_consistency_of(&own, &scores))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencySummary {
    pub respondents: usize,
    pub strict: usize,
    pub violations: usize,
    pub violation_pct: f64,
    pub fully_consistent_pct: f64,
    /// Mean over all violations pooled.
    pub rank_statistic: Option<f64>,
    pub per_respondent: BTreeMap<String, SelfConsistency>,
}

/// Pools self-consistency over respondents, optionally within one field.
pub fn consistency_summary(
    ds: &Dataset,
    field: Option<&str>,
    config: &AnalyticsConfig,
) -> Result<ConsistencySummary, AnalyticsError> {
    let ids: Vec<&str> = ds
        .respondents
        .values()
        .filter(|r| field.is_none_or(|f| r.field == f))
        .filter(|r| ds.comparisons_of(&r.id).next().is_some())
        .map(|r| r.id.as_str())
        .collect();
    let per: Vec<(String, SelfConsistency)> = ids
        .par_iter()
        .map(|id| self_consistency(ds, id, config).map(|s| (id.to_string(), s)))
        .collect::<Result<_, _>>()?;
    let strict: usize = per.iter().map(|(_, s)| s.strict).sum();
    if strict == 0 {
        return Err(AnalyticsError::NoEligibleComparisons);
    }
    let violations: usize = per.iter().map(|(_, s)| s.violations).sum();
    let consistent = per.iter().filter(|(_, s)| s.violations == 0).count();
    let ranks: Vec<f64> = per.iter().flat_map(|(_, s)| s.violation_ranks.iter().copied()).collect();
    Ok(ConsistencySummary {
        respondents: per.len(),
        strict,
        violations,
        violation_pct: pct(violations as f64, strict as f64),
        fully_consistent_pct: pct(consistent as f64, per.len() as f64),
        rank_statistic: if ranks.is_empty() { None } else { Some(ranks.iter().sum::<f64>() / ranks.len() as f64) },
        per_respondent: per.into_iter().collect(),
    })
}

// ---------------------------------------------------------------------------
// Preference vs external score

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankDelta {
    pub venue: VenueId,
    pub rank_pref: usize,
    pub rank_jif: usize,
    /// `rank_jif - rank_pref`.
    pub diff: i64,
}

/// Ordinal ranks by field consensus and by external score over the venues
/// selected by at least `min_pct` percent of the field that carry both.
pub fn ordinal_rank_delta(
    ds: &Dataset,
    field: &str,
    min_pct: f64,
    config: &AnalyticsConfig,
) -> Result<Vec<RankDelta>, AnalyticsError> {
    nonempty_field(ds, field)?;
    let pref = field_scores(ds, field, &config.consensus)?.raw_map();
    let jif: BTreeMap<VenueId, f64> =
        ds.venues.iter().filter_map(|(id, v)| v.external_score.map(|s| (id.clone(), s))).collect();
    let eligible: BTreeSet<VenueId> = selection_shares(ds, field)
        .into_iter()
        .filter(|(v, share)| *share >= min_pct && pref.contains_key(v) && jif.contains_key(v))
        .map(|(v, _)| v)
        .collect();
    let rp = ordinal_ranks(&pref, &eligible);
    let rj = ordinal_ranks(&jif, &eligible);
    let mut out: Vec<RankDelta> = eligible
        .into_iter()
        .map(|v| {
            let (a, b) = (rp[&v], rj[&v]);
            RankDelta { venue: v, rank_pref: a, rank_jif: b, diff: b as i64 - a as i64 }
        })
        .collect();
    out.sort_by(|a, b| a.rank_pref.cmp(&b.rank_pref).then_with(|| a.venue.cmp(&b.venue)));
    Ok(out)
}

// ---------------------------------------------------------------------------
// Top choices

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChoiceType {
    TopPreference,
    TopAspiration,
}

/// `(N - r) / (N - 1)` for the 1-based position `r` of `venue` in a ranking of
/// `N` venues; a single-venue ranking gives 1.
pub fn position_score(ranking: &[(VenueId, f64)], venue: &VenueId) -> Option<f64> {
    let n = ranking.len();
    let r = ranking.iter().position(|(v, _)| v == venue)? + 1;
    Some(if n == 1 { 1.0 } else { (n - r) as f64 / (n - 1) as f64 })
}

/// Where the respondent's top choice sits in the held-out field ranking.
pub fn top_choice_normalized_rank(
    ds: &Dataset,
    respondent: &str,
    choice: ChoiceType,
    config: &AnalyticsConfig,
) -> Result<f64, AnalyticsError> {
    let r = ds
        .respondents
        .get(respondent)
        .ok_or_else(|| AnalyticsError::UnknownRespondent(respondent.to_string()))?;
    let venue = match choice {
        ChoiceType::TopPreference => individual_scores(ds, respondent, &config.individual)?
            .top(1)
            .pop()
            .ok_or(AnalyticsError::NoEligibleComparisons)?,
        ChoiceType::TopAspiration => {
            r.aspirations.as_ref().ok_or_else(|| AnalyticsError::NoAspirations(r.field.clone()))?.top.clone()
        }
    };
    let field = leave_one_out_field_scores(ds, &r.field, respondent, &config.consensus)?;
    position_score(&field.ranked(), &venue).ok_or(AnalyticsError::VenueNotRanked(venue))
}

fn is_general_interest(ds: &Dataset, v: &VenueId, exclusions: &[&str]) -> bool {
    let name = ds.venues.get(v).map(|x| x.name.as_str()).unwrap_or("");
    exclusions.iter().any(|e| e.eq_ignore_ascii_case(v.as_str()) || e.eq_ignore_ascii_case(name))
}

/// Most common top aspiration outside `exclusions` (matched on id or name),
/// with its share of the field's respondents that gave aspirations.
pub fn flagship(ds: &Dataset, field: &str, exclusions: &[&str]) -> Result<(VenueId, f64), AnalyticsError> {
    let tops: Vec<&VenueId> = field_respondents(ds, field)
        .into_iter()
        .filter_map(|r| r.aspirations.as_ref().map(|a| &a.top))
        .collect();
    if tops.is_empty() {
        return Err(AnalyticsError::NoAspirations(field.to_string()));
    }
    let mut counts: BTreeMap<&VenueId, usize> = BTreeMap::new();
    for v in &tops {
        if !is_general_interest(ds, v, exclusions) {
            *counts.entry(v).or_insert(0) += 1;
        }
    }
    // BTreeMap order makes max_by_key keep the last maximum; reverse for smallest id
    let (v, c) = counts
        .into_iter()
        .rev()
        .max_by_key(|&(_, c)| c)
        .ok_or_else(|| AnalyticsError::NoAspirations(field.to_string()))?;
    Ok((v.clone(), pct(c as f64, tops.len() as f64)))
}
