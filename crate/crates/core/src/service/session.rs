//! One respondent's survey session as a fold over its events.

use serde::Serialize;

use crate::discovery::{CitationIndex, DiscoveryError, DiscoveryQuestion, DiscoveryState, Source};
use crate::model::{Comparison, VenueId};
use crate::scheduler::{ScheduleError, SchedulerConfig, SchedulerState};

use super::events::{EventKind, RespondentMeta, Stage, GENESIS_HASH};
use super::ServiceError;

/// Read-only inputs every transition needs.
pub struct Context<'a> {
    pub index: &'a CitationIndex,
    pub scheduler: SchedulerConfig,
    pub questions_target: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Discovery,
    Comparison,
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionState {
    pub phase: Phase,
    pub discovery: DiscoveryState,
    pub scheduler: Option<SchedulerState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub id: String,
    pub ordinal: u64,
    pub scheduler_seed: u64,
    pub respondent: RespondentMeta,
    pub state: SessionState,
    undo: Vec<SessionState>,
    /// Sequence number of the next event.
    pub seq: u64,
    pub last_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Question {
    Discovery { venue: VenueId, source: Source },
    Comparison { first: VenueId, second: VenueId, stage_complete: bool },
    Done { can_continue: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Progress {
    pub discovery: f64,
    pub comparison: f64,
    pub overall: f64,
}

impl Session {
    /// A session as of its creation event.
    pub fn created(id: &str, respondent: RespondentMeta, ordinal: u64, scheduler_seed: u64, history: Vec<(VenueId, u64)>, ctx: &Context) -> Self {
        Session {
            id: id.to_string(),
            ordinal,
            scheduler_seed,
            respondent,
            state: SessionState {
                phase: Phase::Discovery,
                discovery: DiscoveryState::new(history, ctx.questions_target),
                scheduler: None,
            },
            undo: Vec::new(),
            seq: 1,
            last_hash: GENESIS_HASH.to_string(),
        }
    }

    pub fn can_undo(&self) -> bool {
        !self.undo.is_empty()
    }

    fn comparisons_started(&self) -> bool {
        self.state.scheduler.as_ref().is_some_and(|s| s.asked_len() > 0)
    }

    fn new_scheduler(&self, ctx: &Context) -> SchedulerState {
        let mut items = self.state.discovery.liked.clone();
        items.sort();
        SchedulerState::new(items, self.scheduler_seed, ctx.scheduler)
    }

    /// Applies one event. Used both for live requests (on a copy, before the
    /// event is written) and for replay.
    pub fn apply(&mut self, kind: &EventKind, ctx: &Context) -> Result<(), ServiceError> {
        match kind {
            EventKind::SessionCreated { .. } => return Err(ServiceError::BadRequest("session already created".into())),
            EventKind::AspirationsSet { aspirations } => {
                for v in aspirations.iter() {
                    self.state.discovery.direct_add(v.clone()).map_err(discovery_error)?;
                }
            }
            EventKind::DiscoveryAnswer { venue, liked } => {
                if self.state.phase != Phase::Discovery {
                    return Err(ServiceError::StaleAnswer);
                }
                match self.state.discovery.next_question(ctx.index) {
                    DiscoveryQuestion::Ask { venue: asked, .. } if &asked == venue => {}
                    _ => return Err(ServiceError::StaleAnswer),
                }
                self.undo.push(self.state.clone());
                self.state.discovery.record(venue, *liked).map_err(discovery_error)?;
            }
            EventKind::DirectAdd { venue } => {
                if self.comparisons_started() {
                    return Err(ServiceError::ComparisonsStarted);
                }
                let before = self.state.clone();
                self.state.discovery.direct_add(venue.clone()).map_err(discovery_error)?;
                if self.state.scheduler.is_some() {
                    self.state.scheduler = Some(self.new_scheduler(ctx));
                    self.state.phase = Phase::Comparison;
                }
                self.undo.push(before);
            }
            EventKind::ComparisonAnswer { first, second, outcome } => {
                let phase = self.state.phase;
                let sched = match (phase, self.state.scheduler.as_mut()) {
                    (Phase::Comparison | Phase::Done, Some(s)) => s,
                    _ => return Err(ServiceError::StaleAnswer),
                };
                let issued = if phase == Phase::Done { sched.continue_pair(None) } else { sched.next_pair(None) };
                match issued {
                    Ok(d) if d.pair.as_ref() == Some(&(first.clone(), second.clone())) => {}
                    _ => return Err(ServiceError::StaleAnswer),
                }
                let before = self.state.clone();
                self.state
                    .scheduler
                    .as_mut()
                    .expect("checked above")
                    .record_outcome(first, second, *outcome)
                    .map_err(|_| ServiceError::StaleAnswer)?;
                self.undo.push(before);
            }
            EventKind::Undo {} => {
                self.state = self.undo.pop().ok_or(ServiceError::NothingToUndo)?;
            }
            EventKind::StageCompleted { stage: Stage::Discovery } => {
                if self.state.phase != Phase::Discovery
                    || self.state.discovery.next_question(ctx.index) != DiscoveryQuestion::StageDone
                {
                    return Err(ServiceError::BadRequest("discovery is not finished".into()));
                }
                self.state.scheduler = Some(self.new_scheduler(ctx));
                self.state.phase = Phase::Comparison;
            }
            EventKind::StageCompleted { stage: Stage::Comparison } => {
                let done = self.state.scheduler.as_ref().is_some_and(|s| s.is_stage_complete());
                if self.state.phase != Phase::Comparison || !done {
                    return Err(ServiceError::BadRequest("comparisons are not finished".into()));
                }
                self.state.phase = Phase::Done;
            }
        }
        Ok(())
    }

    /// Stage transitions that are due. Issuing the next discovery question to
    /// find out is deterministic, so it needs no event of its own.
    pub fn due_transition(&mut self, ctx: &Context) -> Option<EventKind> {
        match self.state.phase {
            Phase::Discovery => (self.state.discovery.next_question(ctx.index) == DiscoveryQuestion::StageDone)
                .then_some(EventKind::StageCompleted { stage: Stage::Discovery }),
            Phase::Comparison => self
                .state
                .scheduler
                .as_ref()
                .is_some_and(|s| s.is_stage_complete() && s.outstanding().is_none())
                .then_some(EventKind::StageCompleted { stage: Stage::Comparison }),
            Phase::Done => None,
        }
    }

    /// The outstanding question; callers apply due transitions first.
    pub fn question(&mut self, ctx: &Context, continue_past_completion: bool) -> Question {
        match self.state.phase {
            Phase::Discovery => match self.state.discovery.next_question(ctx.index) {
                DiscoveryQuestion::Ask { venue, source } => Question::Discovery { venue, source },
                DiscoveryQuestion::StageDone => Question::Done { can_continue: false },
            },
            Phase::Comparison | Phase::Done => {
                let sched = self.state.scheduler.as_mut().expect("scheduler exists past discovery");
                let issued = if self.state.phase == Phase::Done {
                    if continue_past_completion {
                        sched.continue_pair(None)
                    } else {
                        return Question::Done { can_continue: !sched.is_exhausted() };
                    }
                } else {
                    sched.next_pair(None)
                };
                match issued {
                    Ok(d) => match d.pair {
                        Some((first, second)) => Question::Comparison { first, second, stage_complete: d.stage_complete },
                        None => Question::Done { can_continue: !sched.is_exhausted() },
                    },
                    Err(ScheduleError::Exhausted) | Err(_) => Question::Done { can_continue: false },
                }
            }
        }
    }

    pub fn progress(&self) -> Progress {
        let d = &self.state.discovery;
        let answered = d.questions_asked - u32::from(d.pending().is_some());
        let discovery = if self.state.phase == Phase::Discovery {
            (answered as f64 / d.questions_target.max(1) as f64).min(1.0)
        } else {
            1.0
        };
        let comparison = match (&self.state.scheduler, self.state.phase) {
            (_, Phase::Done) => 1.0,
            (Some(s), _) => s.progress_fraction(),
            (None, _) => 0.0,
        };
        Progress { discovery, comparison, overall: (discovery + comparison) / 2.0 }
    }

    /// Answered comparisons as dataset records attributed to this session.
    pub fn comparisons(&self) -> Vec<Comparison> {
        self.state
            .scheduler
            .as_ref()
            .map(|s| {
                s.history()
                    .into_iter()
                    .enumerate()
                    .map(|(i, (first, second, outcome))| Comparison {
                        respondent_id: self.id.clone(),
                        first,
                        second,
                        outcome,
                        order_index: i as u64,
                    })
                    .collect()
            })
            .unwrap_or_default()
    }
}

fn discovery_error(e: DiscoveryError) -> ServiceError {
    match e {
        DiscoveryError::AlreadyPresent(v) => ServiceError::AlreadyPresent(v),
        DiscoveryError::UnexpectedVenue(_) => ServiceError::StaleAnswer,
        DiscoveryError::NoCandidate => ServiceError::StaleAnswer,
    }
}
