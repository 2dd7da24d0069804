//! Synthetic respondents, randomized-response null datasets and the
//! adaptive-vs-shuffled convergence experiment.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::credit;
use crate::model::{
    Aspirations, CareerStage, Comparison, ComparisonOutcome, Dataset, Gender, RespondentRecord, Venue, VenueId,
};
use crate::rank::{fit_springrank, logistic, ComparisonMatrix, RankConfig, RankError};
use crate::scheduler::{SchedulerConfig, SchedulerState, TranscriptEntry};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("session {0} does not contain every pair exactly once")]
    IncompleteTranscript(usize),
    #[error("need at least two items")]
    TooFewItems,
    #[error(transparent)]
    Rank(#[from] RankError),
}

/// Derives an independent stream seed from a base seed and two indices.
pub fn derive_seed(seed: u64, index: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over a combined word
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentKind {
    /// Always picks the higher utility; equal utilities are answered as indifferent.
    Transitive,
    /// Picks `i` over `j` with probability `1 / (1 + exp(-2 beta (u_i - u_j)))`.
    Logistic { beta: f64 },
    /// Fair coin.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub kind: AgentKind,
    /// Latent utility per item; unused by `Random`.
    pub utilities: BTreeMap<VenueId, f64>,
    pub indifference: f64,
    pub seed: u64,
}

/// A responding agent with its own random stream.
pub struct Agent {
    spec: AgentSpec,
    rng: ChaCha8Rng,
}

impl Agent {
    pub fn new(spec: AgentSpec) -> Self {
        assert!((0.0..=1.0).contains(&spec.indifference), "indifference proclivity outside [0, 1]");
        let rng = ChaCha8Rng::seed_from_u64(spec.seed);
        Agent { spec, rng }
    }

    fn utility(&self, v: &VenueId) -> f64 {
        self.spec.utilities.get(v).copied().unwrap_or(0.0)
    }

    pub fn answer(&mut self, first: &VenueId, second: &VenueId) -> ComparisonOutcome {
        let gap = self.utility(first) - self.utility(second);
        let p_first = match self.spec.kind {
            AgentKind::Transitive => {
                return if gap > 0.0 {
                    ComparisonOutcome::First
                } else if gap < 0.0 {
                    ComparisonOutcome::Second
                } else {
                    ComparisonOutcome::Indifferent
                };
            }
            AgentKind::Logistic { beta } => logistic(2.0 * beta * gap),
            AgentKind::Random => 0.5,
        };
        if self.rng.random::<f64>() < self.spec.indifference {
            return ComparisonOutcome::Indifferent;
        }
        if self.rng.random::<f64>() < p_first {
            ComparisonOutcome::First
        } else {
            ComparisonOutcome::Second
        }
    }
}

/// How far an agent session runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionLength {
    /// Until the scheduler reports the stage complete.
    StageComplete,
    /// Exactly this many comparisons, continuing past completion if needed.
    Count(usize),
    /// Every pair.
    Exhaustive,
}

/// Drives a scheduler session with an agent.
pub fn run_agent_session(
    items: Vec<VenueId>,
    agent: AgentSpec,
    config: SchedulerConfig,
    scheduler_seed: u64,
    length: SessionLength,
) -> Vec<TranscriptEntry> {
    let mut agent = Agent::new(agent);
    let mut s = SchedulerState::new(items, scheduler_seed, config);
    let limit = match length {
        SessionLength::StageComplete | SessionLength::Exhaustive => s.total_pairs(),
        SessionLength::Count(n) => n.min(s.total_pairs()),
    };
    let mut out = Vec::new();
    while out.len() < limit {
        let d = match length {
            SessionLength::StageComplete => s.next_pair(None),
            _ => s.continue_pair(None),
        };
        let Ok(d) = d else { break };
        let Some((a, b)) = d.pair else { break };
        let outcome = agent.answer(&a, &b);
        s.record_outcome(&a, &b, outcome).expect("answering the issued pair");
        out.push(TranscriptEntry { order_index: out.len() as u64, first: a, second: b, outcome });
    }
    out
}

// ---------------------------------------------------------------------------
// Null datasets

/// A copy of `template` whose comparisons are replaced, respondent by
/// respondent, by a fresh scheduler session over the venues that respondent
/// compared, answered at random with their empirical indifference rate and
/// the same number of comparisons.
pub fn generate_null_dataset(template: &Dataset, config: SchedulerConfig, seed: u64) -> Dataset {
    let by_respondent = template.comparisons_by_respondent();
    let sessions: Vec<(usize, &str, &Vec<&Comparison>)> =
        by_respondent.iter().enumerate().map(|(i, (r, cs))| (i, *r, cs)).collect();
    let comparisons: Vec<Vec<Comparison>> = sessions
        .par_iter()
        .map(|&(i, r, cs)| {
            let items: BTreeSet<&VenueId> = cs.iter().flat_map(|c| [&c.first, &c.second]).collect();
            let ties = cs.iter().filter(|c| c.outcome == ComparisonOutcome::Indifferent).count();
            let agent = AgentSpec {
                kind: AgentKind::Random,
                utilities: BTreeMap::new(),
                indifference: ties as f64 / cs.len() as f64,
                seed: derive_seed(seed, i as u64, 1),
            };
            let items: Vec<VenueId> = items.into_iter().cloned().collect();
            if cs.len() > items.len() * (items.len() - 1) / 2 {
                log::warn!("respondent {r} repeats pairs; the null session stops at every pair once");
            }
            run_agent_session(items, agent, config, derive_seed(seed, i as u64, 0), SessionLength::Count(cs.len()))
                .into_iter()
                .map(|e| Comparison {
                    respondent_id: r.to_string(),
                    first: e.first,
                    second: e.second,
                    outcome: e.outcome,
                    order_index: e.order_index,
                })
                .collect()
        })
        .collect();
    Dataset { comparisons: comparisons.into_iter().flatten().collect(), ..template.clone() }
}

/// Checks that a null dataset mirrors its template's per-respondent
/// comparison counts and venue sets.
pub fn null_matches_template(template: &Dataset, null: &Dataset) -> bool {
    let shape = |ds: &Dataset| -> BTreeMap<String, (usize, BTreeSet<VenueId>)> {
        ds.comparisons_by_respondent()
            .into_iter()
            .map(|(r, cs)| {
                let venues = cs.iter().flat_map(|c| [c.first.clone(), c.second.clone()]).collect();
                (r.to_string(), (cs.len(), venues))
            })
            .collect()
    };
    shape(template) == shape(null)
}

// ---------------------------------------------------------------------------
// Convergence

/// Spearman correlation with average ranks for ties. Identical vectors give
/// exactly 1; a constant vector gives 0.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    if a == b {
        return 1.0;
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && x[idx[end]] == x[idx[start]] {
            end += 1;
        }
        let avg = (start + end - 1) as f64 / 2.0 + 1.0;
        for &i in &idx[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Adaptive,
    Shuffled,
}

impl Arm {
    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Adaptive => "adaptive",
            Arm::Shuffled => "shuffled",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub fraction: f64,
    pub arm: Arm,
    pub mean_rho: f64,
    pub p20: f64,
    pub p80: f64,
    /// Mean over sessions with held-out comparisons left.
    pub mean_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceResult {
    pub points: Vec<CurvePoint>,
    /// Per fraction: per-session rho of the adaptive order minus the mean over shuffles.
    pub paired_differences: Vec<(f64, Vec<f64>)>,
}

impl ConvergenceResult {
    pub fn point(&self, fraction: f64, arm: Arm) -> Option<&CurvePoint> {
        self.points.iter().find(|p| p.arm == arm && p.fraction == fraction)
    }

    pub fn write_csv(&self, out: &mut impl std::io::Write) -> std::io::Result<()> {
        writeln!(out, "fraction,arm,mean_rho,p20,p80,mean_accuracy")?;
        for p in &self.points {
            let acc = p.mean_accuracy.map_or_else(|| "NA".to_string(), |a| a.to_string());
            writeln!(out, "{},{},{},{},{},{}", p.fraction, p.arm.as_str(), p.mean_rho, p.p20, p.p80, acc)?;
        }
        Ok(())
    }
}

fn session_items(t: &[TranscriptEntry]) -> Vec<VenueId> {
    let set: BTreeSet<&VenueId> = t.iter().flat_map(|e| [&e.first, &e.second]).collect();
    set.into_iter().cloned().collect()
}

fn fit_prefix(items: &[VenueId], order: &[&TranscriptEntry], config: &RankConfig) -> Result<Vec<f64>, SimError> {
    let mut m = ComparisonMatrix::empty(items.to_vec());
    for e in order {
        let i = m.position(&e.first).expect("item from transcript");
        let j = m.position(&e.second).expect("item from transcript");
        m.record(i, j, e.outcome);
    }
    Ok(fit_springrank(&m, config)?.raw_scores)
}

/// Share of held-out comparisons predicted by `scores`, or `None` if none are eligible.
fn held_out_accuracy(items: &[VenueId], scores: &[f64], rest: &[&TranscriptEntry]) -> Option<f64> {
    let pos: BTreeMap<&VenueId, usize> = items.iter().enumerate().map(|(i, v)| (v, i)).collect();
    let credits: Vec<f64> =
        rest.iter().filter_map(|e| credit(scores[pos[&e.first]], scores[pos[&e.second]], e.outcome)).collect();
    if credits.is_empty() {
        None
    } else {
        Some(credits.iter().sum::<f64>() / credits.len() as f64)
    }
}

struct SessionCurve {
    /// Per fraction: (rho, accuracy).
    adaptive: Vec<(f64, Option<f64>)>,
    shuffled: Vec<(f64, Option<f64>)>,
}

fn session_curve(
    index: usize,
    t: &[TranscriptEntry],
    fractions: &[f64],
    shuffles: usize,
    seed: u64,
    config: &RankConfig,
) -> Result<SessionCurve, SimError> {
    let items = session_items(t);
    let n = items.len();
    let pairs: BTreeSet<(&VenueId, &VenueId)> =
        t.iter().map(|e| if e.first < e.second { (&e.first, &e.second) } else { (&e.second, &e.first) }).collect();
    if n < 2 || pairs.len() != t.len() || t.len() != n * (n - 1) / 2 {
        return Err(SimError::IncompleteTranscript(index));
    }
    let m = t.len();
    let actual: Vec<&TranscriptEntry> = t.iter().collect();
    let full = fit_prefix(&items, &actual, config)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(index as u64));
    let orders: Vec<Vec<&TranscriptEntry>> = (0..shuffles)
        .map(|_| {
            let mut o = actual.clone();
            o.shuffle(&mut rng);
            o
        })
        .collect();

    let evaluate = |order: &[&TranscriptEntry], f: f64| -> Result<(f64, Option<f64>), SimError> {
        let cut = ((f * m as f64).ceil() as usize).clamp(1, m);
        let scores = if cut == m { full.clone() } else { fit_prefix(&items, &order[..cut], config)? };
        Ok((spearman(&scores, &full), held_out_accuracy(&items, &scores, &order[cut..])))
    };

    let mut adaptive = Vec::new();
    let mut shuffled = Vec::new();
    for &f in fractions {
        adaptive.push(evaluate(&actual, f)?);
        let runs: Vec<(f64, Option<f64>)> = orders.iter().map(|o| evaluate(o, f)).collect::<Result<_, _>>()?;
        let rho = runs.iter().map(|r| r.0).sum::<f64>() / runs.len().max(1) as f64;
        let accs: Vec<f64> = runs.iter().filter_map(|r| r.1).collect();
        let acc = if accs.is_empty() { None } else { Some(accs.iter().sum::<f64>() / accs.len() as f64) };
        shuffled.push((rho, acc));
    }
    Ok(SessionCurve { adaptive, shuffled })
}

fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    crate::stats::quantile(&v, q)
}

/// For each fraction `f`, refits every session on its first `ceil(f * M)`
/// comparisons in the order they were asked and in `shuffles` random orders,
/// and compares each partial fit with the fit on all `M` comparisons.
pub fn convergence_experiment(
    transcripts: &[Vec<TranscriptEntry>],
    fractions: &[f64],
    shuffles: usize,
    seed: u64,
    config: &RankConfig,
) -> Result<ConvergenceResult, SimError> {
    let curves: Vec<SessionCurve> = transcripts
        .par_iter()
        .enumerate()
        .map(|(i, t)| session_curve(i, t, fractions, shuffles, seed, config))
        .collect::<Result<_, _>>()?;
    let mut points = Vec::new();
    let mut paired_differences = Vec::new();
    for (k, &f) in fractions.iter().enumerate() {
        for arm in [Arm::Adaptive, Arm::Shuffled] {
            let vals: Vec<(f64, Option<f64>)> = curves
                .iter()
                .map(|c| if arm == Arm::Adaptive { c.adaptive[k] } else { c.shuffled[k] })
                .collect();
            let rhos: Vec<f64> = vals.iter().map(|v| v.0).collect();
            let accs: Vec<f64> = vals.iter().filter_map(|v| v.1).collect();
            if rhos.is_empty() {
                continue;
            }
            points.push(CurvePoint {
                fraction: f,
                arm,
                mean_rho: rhos.iter().sum::<f64>() / rhos.len() as f64,
                p20: percentile(&rhos, 0.2),
                p80: percentile(&rhos, 0.8),
                mean_accuracy: if accs.is_empty() { None } else { Some(accs.iter().sum::<f64>() / accs.len() as f64) },
            });
        }
        paired_differences.push((f, curves.iter().map(|c| c.adaptive[k].0 - c.shuffled[k].0).collect()));
    }
    Ok(ConvergenceResult { points, paired_differences })
}

/// Exhaustive sessions of logistic agents with standard normal utilities.
pub fn logistic_sessions(
    n_items: usize,
    sessions: usize,
    beta: f64,
    indifference: f64,
    config: SchedulerConfig,
    seed: u64,
) -> Vec<Vec<TranscriptEntry>> {
    let items: Vec<VenueId> = (0..n_items).map(|i| VenueId::new(format!("v{i:03}")).expect("non-blank")).collect();
    (0..sessions)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, s as u64, 2));
            let utilities = items.iter().map(|v| (v.clone(), rng.sample(StandardNormal))).collect();
            let agent = AgentSpec {
                kind: AgentKind::Logistic { beta },
                utilities,
                indifference,
                seed: derive_seed(seed, s as u64, 1),
            };
            run_agent_session(items.clone(), agent, config, derive_seed(seed, s as u64, 0), SessionLength::Exhaustive)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Synthetic datasets

/// Shape of a synthetic survey: several fields, each with its own venues and
/// a shared latent quality, answered by logistic agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub fields: Vec<String>,
    pub venues_per_field: usize,
    pub respondents_per_field: usize,
    pub set_size: usize,
    /// Spread of personal taste around the field's latent quality.
    pub taste_noise: f64,
    pub beta: f64,
    pub indifference: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            fields: vec!["Biology".into(), "Economics".into(), "Physics".into()],
            venues_per_field: 25,
            respondents_per_field: 12,
            set_size: 10,
            taste_noise: 0.5,
            beta: 1.0,
            indifference: 0.08,
            seed: 1,
        }
    }
}

/// A complete, valid dataset drawn from `spec`, including aspirations,
/// publications, external scores and citations.
pub fn synthetic_dataset(spec: &SyntheticSpec, config: SchedulerConfig) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut ds = Dataset::default();
    let mut quality: BTreeMap<VenueId, f64> = BTreeMap::new();
    let mut by_field: BTreeMap<&str, Vec<VenueId>> = BTreeMap::new();

    for field in &spec.fields {
        let prefix: String = field.chars().filter(|c| c.is_ascii_alphanumeric()).take(4).collect::<String>().to_lowercase();
        for k in 0..spec.venues_per_field {
            let id = VenueId::new(format!("{prefix}{k:03}")).expect("non-blank");
            let q: f64 = rng.sample(StandardNormal);
            let noise: f64 = rng.sample(StandardNormal);
            quality.insert(id.clone(), q);
            ds.venues.insert(
                id.clone(),
                Venue {
                    id: id.clone(),
                    name: format!("{field} Journal {k}"),
                    works_count: (200.0 * (q + 3.0)).round().max(1.0) as u64 + rng.random_range(0..100),
                    external_score: if rng.random::<f64>() < 0.85 { Some((0.8 * q + 0.6 * noise).exp()) } else { None },
                    field_tags: BTreeSet::from([field.clone()]),
                },
            );
            by_field.entry(field.as_str()).or_default().push(id);
        }
    }

    // citations concentrate on high-quality venues within a field
    for venues in by_field.values() {
        for citing in venues {
            for cited in venues {
                if citing != cited && rng.random::<f64>() < 0.3 {
                    let w = (quality[cited] + rng.sample::<f64, _>(StandardNormal) * 0.3).exp() * 10.0;
                    ds.citations.insert((citing.clone(), cited.clone()), w.round().max(1.0));
                }
            }
        }
    }

    let stages = [CareerStage::Assistant, CareerStage::Associate, CareerStage::Full];
    let genders = [Gender::Man, Gender::Woman];
    let mut sessions = Vec::new();
    for (fi, field) in spec.fields.iter().enumerate() {
        let venues = &by_field[field.as_str()];
        for k in 0..spec.respondents_per_field {
            let id = format!("r{fi:02}{k:03}");
            let taste: BTreeMap<VenueId, f64> = venues
                .iter()
                .map(|v| (v.clone(), quality[v] + spec.taste_noise * rng.sample::<f64, _>(StandardNormal)))
                .collect();
            // the set favours venues the respondent rates highly
            let mut ranked: Vec<(&VenueId, f64)> =
                taste.iter().map(|(v, t)| (v, t + rng.sample::<f64, _>(StandardNormal))).collect();
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
            let set: Vec<VenueId> =
                ranked.iter().take(spec.set_size.min(venues.len())).map(|(v, _)| (*v).clone()).collect();
            let mut by_taste = set.clone();
            by_taste.sort_by(|a, b| taste[b].total_cmp(&taste[a]).then_with(|| a.cmp(b)));
            let aspirations = (by_taste.len() >= 3).then(|| Aspirations {
                top: by_taste[0].clone(),
                mid: by_taste[by_taste.len() / 2].clone(),
                low: by_taste[by_taste.len() - 1].clone(),
            });
            let decile = rng.random_range(1..=10u8);
            // more prestigious respondents publish in more of their top venues
            let reach = 0.15 + 0.06 * (11 - decile) as f64;
            let publications: BTreeSet<VenueId> =
                by_taste.iter().filter(|_| rng.random::<f64>() < reach).cloned().collect();
            ds.respondents.insert(
                id.clone(),
                RespondentRecord {
                    id: id.clone(),
                    field: field.clone(),
                    career_stage: *stages.choose(&mut rng).expect("non-empty"),
                    prestige_decile: Some(decile),
                    gender: Some(*genders.choose(&mut rng).expect("non-empty")),
                    consideration_set: set.clone(),
                    aspirations,
                    publications,
                },
            );
            let agent = AgentSpec {
                kind: AgentKind::Logistic { beta: spec.beta },
                utilities: taste,
                indifference: spec.indifference,
                seed: rng.random(),
            };
            sessions.push((id, set, agent, rng.random::<u64>()));
        }
    }

    let comparisons: Vec<Vec<Comparison>> = sessions
        .into_par_iter()
        .map(|(id, set, agent, sched_seed)| {
            run_agent_session(set, agent, config, sched_seed, SessionLength::StageComplete)
                .into_iter()
                .map(|e| Comparison {
                    respondent_id: id.clone(),
                    first: e.first,
                    second: e.second,
                    outcome: e.outcome,
                    order_index: e.order_index,
                })
                .collect()
        })
        .collect();
    ds.comparisons = comparisons.into_iter().flatten().collect();
    ds
}
