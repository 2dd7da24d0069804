//! The survey service: sessions driven by discovery and comparison stages,
//! persisted as an append-only event log and rebuilt from it on start.

pub mod events;
pub mod http;
mod session;

pub use session::{Phase, Progress, Question, Session, SessionState};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Config;
use crate::discovery::CitationIndex;
use crate::model::{Aspirations, Comparison, ComparisonOutcome, Dataset, VenueId};
use crate::rank::{fit_springrank, normalize_min_max, ordinal_ranks, ComparisonMatrix, RankConfig, RankError, RankScores};

use events::{EventKind, EventLog, LogError, RespondentMeta, SessionEvent, GENESIS_HASH};
use session::Context;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("session {0} not found")]
    SessionNotFound(String),
    #[error("unknown venue {0:?}")]
    UnknownVenue(String),
    #[error("unknown field {0:?}")]
    UnknownField(String),
    #[error("the answer does not match the outstanding question")]
    StaleAnswer,
    #[error("nothing to undo")]
    NothingToUndo,
    #[error("venue {0} is already in the consideration set")]
    AlreadyPresent(VenueId),
    #[error("venues can only be added before the first comparison")]
    ComparisonsStarted,
    #[error("the comparison stage is not complete")]
    StageIncomplete,
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Rank(#[from] RankError),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::SessionNotFound(_) => "SESSION_NOT_FOUND",
            ServiceError::UnknownVenue(_) => "UNKNOWN_VENUE",
            ServiceError::UnknownField(_) => "UNKNOWN_FIELD",
            ServiceError::StaleAnswer => "STALE_ANSWER",
            ServiceError::NothingToUndo => "NOTHING_TO_UNDO",
            ServiceError::AlreadyPresent(_) => "ALREADY_PRESENT",
            ServiceError::ComparisonsStarted => "COMPARISONS_STARTED",
            ServiceError::StageIncomplete => "STAGE_INCOMPLETE",
            ServiceError::BadRequest(_) => "BAD_REQUEST",
            ServiceError::Log(_) => "LOG_FAILURE",
            ServiceError::Rank(_) => "RANK_FAILURE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub respondent: RespondentMeta,
    /// Top, middle and lower tier venues, by id or exact name.
    #[serde(default)]
    pub aspirations: Option<[String; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Answer {
    Discovery { venue: VenueId, liked: bool },
    Comparison { first: VenueId, second: VenueId, outcome: ComparisonOutcome },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ack {
    pub ok: bool,
    pub progress: Progress,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedVenue {
    pub venue: VenueId,
    pub name: String,
    pub raw: f64,
    pub normalized: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub progress: Progress,
    pub personal: Vec<RankedVenue>,
    pub consensus: Vec<RankedVenue>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldRanking {
    pub field: String,
    pub alpha: f64,
    pub respondents: usize,
    pub scores: Vec<RankedVenue>,
}

type CacheKey = (String, Option<String>, u64);

pub struct SurveyService {
    config: Config,
    dataset: Arc<Dataset>,
    index: CitationIndex,
    sessions: RwLock<BTreeMap<String, Arc<Mutex<Session>>>>,
    log: Mutex<EventLog>,
    cache: Mutex<HashMap<CacheKey, Arc<Option<RankScores>>>>,
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl SurveyService {
    /// Opens the event log at `config.log_path` and replays every session in it.
    pub fn open(config: Config, dataset: Dataset) -> Result<Self, ServiceError> {
        let (log, events) = EventLog::open(&config.log_path)?;
        let service = SurveyService {
            index: CitationIndex::from_dataset(&dataset),
            dataset: Arc::new(dataset),
            config,
            sessions: RwLock::new(BTreeMap::new()),
            log: Mutex::new(log),
            cache: Mutex::new(HashMap::new()),
        };
        let mut rebuilt: BTreeMap<String, Session> = BTreeMap::new();
        for (line, e) in events.into_iter().enumerate() {
            let corrupt = |message: String| ServiceError::Log(LogError::Corrupt { line: line + 1, message });
            match (&e.kind, rebuilt.get_mut(&e.session_id)) {
                (EventKind::SessionCreated { respondent, ordinal, scheduler_seed }, None) => {
                    let history = service.history_pool(&respondent.publications);
                    let mut s = Session::created(&e.session_id, respondent.clone(), *ordinal, *scheduler_seed, history, &service.context());
                    s.last_hash = e.hash.clone();
                    rebuilt.insert(e.session_id.clone(), s);
                }
                (_, Some(s)) => {
                    s.apply(&e.kind, &service.context()).map_err(|err| corrupt(format!("replay of {}: {err}", e.session_id)))?;
                    s.seq = e.seq + 1;
                    s.last_hash = e.hash.clone();
                }
                (_, None) => return Err(corrupt(format!("event before creation of session {}", e.session_id))),
            }
        }
        log::info!("replayed {} sessions", rebuilt.len());
        *service.sessions.write().unwrap_or_else(|e| e.into_inner()) =
            rebuilt.into_iter().map(|(k, v)| (k, Arc::new(Mutex::new(v)))).collect();
        Ok(service)
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    fn context(&self) -> Context<'_> {
        Context {
            index: &self.index,
            scheduler: self.config.scheduler(),
            questions_target: self.config.questions_target,
        }
    }

    fn history_pool(&self, publications: &[VenueId]) -> Vec<(VenueId, u64)> {
        publications
            .iter()
            .map(|v| (v.clone(), self.dataset.venues.get(v).map_or(0, |x| x.works_count)))
            .collect()
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ServiceError> {
        self.sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::SessionNotFound(id.to_string()))
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.sessions.read().unwrap_or_else(|e| e.into_inner()).keys().cloned().collect()
    }

    /// A copy of a session's current state.
    pub fn snapshot(&self, id: &str) -> Result<Session, ServiceError> {
        let handle = self.session(id)?;
        let s = lock(&handle).clone();
        Ok(s)
    }

    pub fn log_len(&self) -> u64 {
        lock(&self.log).len()
    }

    fn resolve_venue(&self, key: &str) -> Result<VenueId, ServiceError> {
        let key = key.trim();
        if let Some(v) = VenueId::new(key).filter(|v| self.dataset.venues.contains_key(v)) {
            return Ok(v);
        }
        self.dataset.venue_by_name(key).map(|v| v.id.clone()).ok_or_else(|| ServiceError::UnknownVenue(key.to_string()))
    }

    fn known_fields(&self) -> BTreeSet<String> {
        let mut f: BTreeSet<String> = self.dataset.fields().into_iter().map(String::from).collect();
        f.extend(self.config.fields.iter().cloned());
        f
    }

    /// Writes `kind` to the log, then applies it. Nothing changes if either fails.
    fn commit(&self, s: &mut Session, kind: EventKind) -> Result<(), ServiceError> {
        let mut next = s.clone();
        next.apply(&kind, &self.context())?;
        let event = SessionEvent::new(&s.id, s.seq, kind, &s.last_hash);
        lock(&self.log).append(&event)?;
        next.seq = s.seq + 1;
        next.last_hash = event.hash;
        *s = next;
        Ok(())
    }

    fn advance(&self, s: &mut Session) -> Result<(), ServiceError> {
        while let Some(kind) = s.due_transition(&self.context()) {
            self.commit(s, kind)?;
        }
        Ok(())
    }

    pub fn create_session(&self, req: CreateSession) -> Result<String, ServiceError> {
        let field = req.respondent.field.trim().to_string();
        let fields = self.known_fields();
        if field.is_empty() || (!fields.is_empty() && !fields.contains(&field)) {
            return Err(ServiceError::UnknownField(field));
        }
        if let Some(d) = req.respondent.prestige_decile {
            if !(1..=10).contains(&d) {
                return Err(ServiceError::BadRequest("prestige_decile must be in [1, 10]".into()));
            }
        }
        let aspirations = match &req.aspirations {
            Some([a, b, c]) => {
                let (a, b, c) = (self.resolve_venue(a)?, self.resolve_venue(b)?, self.resolve_venue(c)?);
                if a == b || b == c || a == c {
                    return Err(ServiceError::BadRequest("aspiration venues must be distinct".into()));
                }
                Some(Aspirations { top: a, mid: b, low: c })
            }
            None => None,
        };
        let mut publications = Vec::new();
        for p in &req.respondent.publications {
            publications.push(self.resolve_venue(p.as_str())?);
        }
        let respondent = RespondentMeta { field, publications, ..req.respondent };

        let mut sessions = self.sessions.write().unwrap_or_else(|e| e.into_inner());
        let ordinal = sessions.len() as u64;
        let scheduler_seed = self.config.seed.wrapping_add(ordinal);
        let id = uuid::Uuid::new_v4().to_string();
        let created = EventKind::SessionCreated { respondent: respondent.clone(), ordinal, scheduler_seed };
        let event = SessionEvent::new(&id, 0, created, GENESIS_HASH);
        lock(&self.log).append(&event)?;
        let mut s = Session::created(&id, respondent, ordinal, scheduler_seed, self.history_pool(&publications_of(&event)), &self.context());
        s.last_hash = event.hash;
        if let Some(a) = aspirations {
            self.commit(&mut s, EventKind::AspirationsSet { aspirations: a })?;
        }
        sessions.insert(id.clone(), Arc::new(Mutex::new(s)));
        Ok(id)
    }

    pub fn next_question(&self, id: &str, continue_past_completion: bool) -> Result<(Question, Progress), ServiceError> {
        let handle = self.session(id)?;
        let mut s = lock(&handle);
        self.advance(&mut s)?;
        let q = s.question(&self.context(), continue_past_completion);
        Ok((q, s.progress()))
    }

    pub fn answer(&self, id: &str, answer: Answer) -> Result<Ack, ServiceError> {
        let handle = self.session(id)?;
        let mut s = lock(&handle);
        self.advance(&mut s)?;
        let kind = match answer {
            Answer::Discovery { venue, liked } => EventKind::DiscoveryAnswer { venue, liked },
            Answer::Comparison { first, second, outcome } => EventKind::ComparisonAnswer { first, second, outcome },
        };
        self.commit(&mut s, kind)?;
        self.advance(&mut s)?;
        Ok(Ack { ok: true, progress: s.progress() })
    }

    pub fn undo(&self, id: &str) -> Result<Ack, ServiceError> {
        let handle = self.session(id)?;
        let mut s = lock(&handle);
        if !s.can_undo() {
            return Err(ServiceError::NothingToUndo);
        }
        self.commit(&mut s, EventKind::Undo {})?;
        Ok(Ack { ok: true, progress: s.progress() })
    }

    pub fn direct_add(&self, id: &str, venue: &str) -> Result<Ack, ServiceError> {
        let venue = self.resolve_venue(venue)?;
        let handle = self.session(id)?;
        let mut s = lock(&handle);
        self.commit(&mut s, EventKind::DirectAdd { venue })?;
        Ok(Ack { ok: true, progress: s.progress() })
    }

    /// Venues whose id or name starts with `prefix`, case-insensitively.
    pub fn search_venues(&self, prefix: &str, limit: usize) -> Vec<RankedVenue> {
        let p = prefix.trim().to_lowercase();
        self.dataset
            .venues
            .values()
            .filter(|v| v.id.as_str().to_lowercase().starts_with(&p) || v.name.to_lowercase().starts_with(&p))
            .take(limit)
            .map(|v| RankedVenue { venue: v.id.clone(), name: v.name.clone(), raw: 0.0, normalized: 0.0, rank: 0 })
            .collect()
    }

    /// Comparisons of `field` from the dataset and from live sessions, without `excluded`.
    fn field_pool(&self, field: &str, excluded: Option<&str>) -> (Vec<Comparison>, usize) {
        let mut pool: Vec<Comparison> = crate::rank::field_comparisons(&self.dataset, field, excluded)
            .into_iter()
            .cloned()
            .collect();
        let mut respondents: BTreeSet<String> = pool.iter().map(|c| c.respondent_id.clone()).collect();
        let handles: Vec<(String, Arc<Mutex<Session>>)> = self
            .sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .iter()
            .filter(|(k, _)| Some(k.as_str()) != excluded)
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        for (_, h) in handles {
            let s = lock(&h);
            if s.respondent.field == field {
                let cs = s.comparisons();
                if !cs.is_empty() {
                    respondents.insert(s.id.clone());
                }
                pool.extend(cs);
            }
        }
        (pool, respondents.len())
    }

    fn consensus(&self, field: &str, excluded: Option<&str>) -> Result<(Arc<Option<RankScores>>, usize), ServiceError> {
        let key = (field.to_string(), excluded.map(String::from), self.log_len());
        let (pool, respondents) = self.field_pool(field, excluded);
        if let Some(hit) = lock(&self.cache).get(&key) {
            return Ok((hit.clone(), respondents));
        }
        let fit = if pool.is_empty() {
            None
        } else {
            Some(fit_pool(&pool, &RankConfig::with_alpha(self.config.alpha_consensus))?)
        };
        let fit = Arc::new(fit);
        let mut cache = lock(&self.cache);
        if cache.len() > 256 {
            cache.clear();
        }
        cache.insert(key, fit.clone());
        Ok((fit, respondents))
    }

    fn rows(&self, scores: &BTreeMap<VenueId, f64>) -> Vec<RankedVenue> {
        let ids: BTreeSet<VenueId> = scores.keys().cloned().collect();
        let ranks = ordinal_ranks(scores, &ids);
        let raw: Vec<f64> = scores.values().copied().collect();
        let normalized: BTreeMap<&VenueId, f64> = scores.keys().zip(normalize_min_max(&raw)).collect();
        let mut rows: Vec<RankedVenue> = scores
            .iter()
            .map(|(v, &r)| RankedVenue {
                venue: v.clone(),
                name: self.dataset.venues.get(v).map_or_else(|| v.to_string(), |x| x.name.clone()),
                raw: r,
                normalized: normalized[v],
                rank: ranks[v],
            })
            .collect();
        rows.sort_by(|a, b| a.rank.cmp(&b.rank).then_with(|| a.venue.cmp(&b.venue)));
        rows
    }

    /// Personal ranking next to the consensus of everyone else in the field,
    /// both over the respondent's own venues.
    pub fn summary(&self, id: &str) -> Result<Summary, ServiceError> {
        let handle = self.session(id)?;
        let (own, venues, field, progress) = {
            let mut s = lock(&handle);
            self.advance(&mut s)?;
            if s.state.phase != Phase::Done {
                return Err(ServiceError::StageIncomplete);
            }
            let venues: Vec<VenueId> = s.state.scheduler.as_ref().map(|x| x.items().to_vec()).unwrap_or_default();
            (s.comparisons(), venues, s.respondent.field.clone(), s.progress())
        };
        let mut warnings = Vec::new();
        let personal = if own.is_empty() {
            warnings.push("no comparisons were made".to_string());
            Vec::new()
        } else {
            let m = ComparisonMatrix::build(own.iter(), venues.clone())?;
            let fit = fit_springrank(&m, &RankConfig::with_alpha(self.config.alpha_individual))?;
            self.rows(&fit.raw_map())
        };
        let (fit, others) = self.consensus(&field, Some(id))?;
        let consensus = match fit.as_ref() {
            Some(f) => {
                let scores: BTreeMap<VenueId, f64> =
                    venues.iter().filter_map(|v| f.raw(v).map(|s| (v.clone(), s))).collect();
                if scores.is_empty() {
                    warnings.push("no other respondent in this field compared these venues".to_string());
                }
                self.rows(&scores)
            }
            None => {
                warnings.push(format!("no other respondents in {field} yet"));
                Vec::new()
            }
        };
        log::debug!("summary for {id}: consensus from {others} other respondents");
        Ok(Summary { progress, personal, consensus, warnings })
    }

    /// Consensus over every comparison made in `field`.
    pub fn field_ranking(&self, field: &str) -> Result<FieldRanking, ServiceError> {
        let (fit, respondents) = self.consensus(field, None)?;
        let Some(fit) = fit.as_ref() else {
            return Err(ServiceError::UnknownField(field.to_string()));
        };
        Ok(FieldRanking {
            field: field.to_string(),
            alpha: self.config.alpha_consensus,
            respondents,
            scores: self.rows(&fit.raw_map()),
        })
    }
}

fn publications_of(event: &SessionEvent) -> Vec<VenueId> {
    match &event.kind {
        EventKind::SessionCreated { respondent, .. } => respondent.publications.clone(),
        _ => Vec::new(),
    }
}

fn fit_pool(pool: &[Comparison], config: &RankConfig) -> Result<RankScores, RankError> {
    let items: BTreeSet<&VenueId> = pool.iter().flat_map(|c| [&c.first, &c.second]).collect();
    let m = ComparisonMatrix::build(pool.iter(), items.into_iter().cloned().collect())?;
    fit_springrank(&m, config)
}
