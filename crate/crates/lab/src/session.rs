//! One experimental session as a synchronous state machine.
//!
//! Every state change goes through a method taking the current time in
//! milliseconds, and every accepted change is appended to the log. Replaying
//! the log through the same methods rebuilds the session exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use bubblescope_core::bubble::{decoup_trigger, predict_two_ahead, BubbleDirection, Onset, Prediction};
use bubblescope_core::{Action, EnsembleTracker, Move};

use crate::config::{AbsentPolicy, FieldError, SessionConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Lobby,
    Running,
    Finished,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LabError {
    #[error("invalid session configuration")]
    InvalidConfig(Vec<FieldError>),
    #[error("no session {0}")]
    SessionNotFound(String),
    #[error("unknown subject {0}")]
    UnknownSubject(usize),
    #[error("missing or wrong token")]
    Unauthorized,
    #[error("round {round} is closed")]
    Late { round: usize },
    #[error("subject {subject} already bet in round {round}")]
    Duplicate { subject: usize, round: usize },
    #[error("round {round} is not open; the open round is {open}")]
    NotOpen { round: usize, open: usize },
    #[error("session is {actual:?}, this needs {expected:?}")]
    WrongPhase { expected: Phase, actual: Phase },
    #[error("all {0} seats are taken")]
    Full(usize),
    #[error("{joined} of {needed} subjects have joined")]
    NotEnoughSubjects { joined: usize, needed: usize },
    #[error("round {round} is still open for bets")]
    DeadlineNotReached { round: usize },
    #[error("action must be +1 or -1, got {0}")]
    BadAction(i64),
    #[error("bit must be 0 or 1, got {0}")]
    BadBit(u8),
    #[error("log replay diverged: {0}")]
    ReplayMismatch(String),
}

impl LabError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            LabError::InvalidConfig(_) => "invalid_config",
            LabError::SessionNotFound(_) => "session_not_found",
            LabError::UnknownSubject(_) => "unknown_subject",
            LabError::Unauthorized => "unauthorized",
            LabError::Late { .. } => "late",
            LabError::Duplicate { .. } => "duplicate",
            LabError::NotOpen { .. } => "round_not_open",
            LabError::WrongPhase { .. } => "wrong_phase",
            LabError::Full(_) => "session_full",
            LabError::NotEnoughSubjects { .. } => "not_enough_subjects",
            LabError::DeadlineNotReached { .. } => "deadline_not_reached",
            LabError::BadAction(_) => "bad_action",
            LabError::BadBit(_) => "bad_bit",
            LabError::ReplayMismatch(_) => "replay_mismatch",
        }
    }
}

pub type LabResult<T> = Result<T, LabError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundAction {
    pub subject: usize,
    /// +1 buy, -1 sell.
    pub action: i8,
    pub imputed: bool,
    pub at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundResult {
    pub round: usize,
    pub actions: Vec<RoundAction>,
    pub attendance: i64,
    /// `attendance / n_subjects`.
    pub return_value: f64,
    /// Score changes in units of `1 / n_subjects`.
    pub score_deltas: Vec<i64>,
    pub true_bit: u8,
    pub shown_bit: u8,
    /// The true bit came from a coin because the attendance was zero.
    pub coin_flip: bool,
    pub settled_at_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrameStatus {
    WarmingUp,
    Live,
}

/// Ensemble state after the true move at `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticsFrame {
    pub v: u32,
    pub t: usize,
    pub status: FrameStatus,
    pub pct_pos: Option<f64>,
    pub pct_neg: Option<f64>,
    /// Set on the frame where an alarm fires (once per direction).
    pub alarm: Option<Onset>,
    /// First alarm of the session so far.
    pub t_b_decoup: Option<usize>,
    pub prediction: Option<Prediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Created { id: String, config: SessionConfig },
    SeedMoves { bits: String },
    Joined { subject: usize, name: String },
    Started,
    RoundOpened { round: usize, deadline_ms: u64 },
    Submitted { round: usize, subject: usize, action: i8 },
    FeedbackSet { override_bit: Option<u8> },
    Settled { result: RoundResult },
    Finished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub at_ms: u64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Clone)]
struct Subject {
    name: String,
    token: String,
}

#[derive(Debug, Clone)]
struct OpenRound {
    round: usize,
    deadline_ms: u64,
    bets: Vec<Option<(Action, u64)>>,
}

/// Participant-safe view: only the shown stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublicState {
    pub v: u32,
    pub id: String,
    pub phase: Phase,
    pub n_subjects: usize,
    pub joined: usize,
    pub m: u8,
    pub total_rounds: usize,
    pub rounds_settled: usize,
    pub round: Option<usize>,
    pub deadline_ms: Option<u64>,
    /// Last `m` shown moves, oldest first.
    pub shown_history: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdminState {
    #[serde(flatten)]
    pub public: PublicState,
    pub true_stream: String,
    pub shown_stream: String,
    pub false_feedback: Option<u8>,
    pub submitted: Vec<bool>,
    pub scores: Vec<f64>,
}

/// Push message for participants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RoundFrame {
    RoundOpened {
        v: u32,
        round: usize,
        deadline_ms: u64,
        shown_history: String,
    },
    RoundSettled {
        v: u32,
        round: usize,
        shown_bit: u8,
        shown_history: String,
    },
    Finished {
        v: u32,
    },
}

#[derive(Debug, Clone)]
pub struct Session {
    id: String,
    cfg: SessionConfig,
    rng: ChaCha8Rng,
    phase: Phase,
    subjects: Vec<Subject>,
    open: Option<OpenRound>,
    true_moves: Vec<Move>,
    shown_moves: Vec<Move>,
    scores: Vec<i64>,
    last_actions: Vec<Option<Action>>,
    feedback: Option<Move>,
    results: Vec<RoundResult>,
    log: Vec<LogEntry>,
    tracker: EnsembleTracker,
    frames: Vec<AnalyticsFrame>,
    round_frames: Vec<RoundFrame>,
    fired_up: bool,
    fired_down: bool,
    first_alarm: Option<usize>,
}

/// Losses are not charged and gains are capped.
pub fn clamp_payout(score: f64, cap: f64) -> f64 {
    score.clamp(0.0, cap)
}

fn bits_string(moves: &[Move]) -> String {
    moves.iter().map(|m| if *m == Move::Up { '1' } else { '0' }).collect()
}

fn coin(rng: &mut ChaCha8Rng) -> bool {
    rng.random::<bool>()
}

impl Session {
    /// `cfg.seed` and `cfg.admin_token` must already be resolved.
    pub fn create(id: String, cfg: SessionConfig, now_ms: u64) -> LabResult<Self> {
        cfg.validate().map_err(LabError::InvalidConfig)?;
        let seed = cfg
            .seed
            .ok_or_else(|| LabError::InvalidConfig(vec![FieldError {
                field: "seed".into(),
                message: "must be resolved before creation".into(),
            }]))?;
        let tracker = EnsembleTracker::new(cfg.analytics_config()).map_err(|e| {
            LabError::InvalidConfig(vec![FieldError {
                field: "analytics".into(),
                message: e.to_string(),
            }])
        })?;
        let n = cfg.n_subjects;
        let mut s = Self {
            id: id.clone(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            phase: Phase::Lobby,
            subjects: Vec::with_capacity(n),
            open: None,
            true_moves: Vec::new(),
            shown_moves: Vec::new(),
            scores: vec![0; n],
            last_actions: vec![None; n],
            feedback: None,
            results: Vec::new(),
            log: Vec::new(),
            tracker,
            frames: Vec::new(),
            round_frames: Vec::new(),
            fired_up: false,
            fired_down: false,
            first_alarm: None,
            cfg,
        };
        let mut logged = s.cfg.clone();
        logged.admin_token = None;
        s.record(now_ms, Event::Created { id, config: logged });
        for _ in 0..s.cfg.m {
            let mv = if coin(&mut s.rng) { Move::Up } else { Move::Down };
            s.true_moves.push(mv);
            s.shown_moves.push(mv);
            s.advance_analytics(mv);
        }
        let bits = bits_string(&s.true_moves);
        s.record(now_ms, Event::SeedMoves { bits });
        Ok(s)
    }

    fn record(&mut self, at_ms: u64, event: Event) {
        let seq = self.log.len() as u64;
        self.log.push(LogEntry { seq, at_ms, event });
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn frames(&self) -> &[AnalyticsFrame] {
        &self.frames
    }

    pub fn round_frames(&self) -> &[RoundFrame] {
        &self.round_frames
    }

    pub fn results(&self) -> &[RoundResult] {
        &self.results
    }

    pub fn true_moves(&self) -> &[Move] {
        &self.true_moves
    }

    pub fn shown_moves(&self) -> &[Move] {
        &self.shown_moves
    }

    pub fn tracker(&self) -> &EnsembleTracker {
        &self.tracker
    }

    pub fn open_round(&self) -> Option<(usize, u64)> {
        self.open.as_ref().map(|o| (o.round, o.deadline_ms))
    }

    /// Raw scores in units of `1 / n_subjects`.
    pub fn score_units(&self) -> &[i64] {
        &self.scores
    }

    pub fn score(&self, subject: usize) -> LabResult<f64> {
        let units = *self.scores.get(subject).ok_or(LabError::UnknownSubject(subject))?;
        Ok(units as f64 / self.cfg.n_subjects as f64)
    }

    pub fn check_admin(&self, token: Option<&str>) -> LabResult<()> {
        match (self.cfg.admin_token.as_deref(), token) {
            (Some(want), Some(got)) if want == got => Ok(()),
            _ => Err(LabError::Unauthorized),
        }
    }

    pub fn check_subject(&self, subject: usize, token: &str) -> LabResult<()> {
        let s = self.subjects.get(subject).ok_or(LabError::UnknownSubject(subject))?;
        if s.token == token {
            Ok(())
        } else {
            Err(LabError::Unauthorized)
        }
    }

    fn require(&self, expected: Phase) -> LabResult<()> {
        if self.phase == expected {
            Ok(())
        } else {
            Err(LabError::WrongPhase {
                expected,
                actual: self.phase,
            })
        }
    }

    pub fn join(&mut self, name: String, token: String, now_ms: u64) -> LabResult<usize> {
        self.require(Phase::Lobby)?;
        if self.subjects.len() >= self.cfg.n_subjects {
            return Err(LabError::Full(self.cfg.n_subjects));
        }
        let subject = self.subjects.len();
        self.subjects.push(Subject {
            name: name.clone(),
            token,
        });
        self.record(now_ms, Event::Joined { subject, name });
        Ok(subject)
    }

    pub fn subject_names(&self) -> Vec<&str> {
        self.subjects.iter().map(|s| s.name.as_str()).collect()
    }

    pub fn start(&mut self, now_ms: u64) -> LabResult<()> {
        self.require(Phase::Lobby)?;
        if self.subjects.len() < self.cfg.n_subjects {
            return Err(LabError::NotEnoughSubjects {
                joined: self.subjects.len(),
                needed: self.cfg.n_subjects,
            });
        }
        self.phase = Phase::Running;
        self.record(now_ms, Event::Started);
        self.open_next(now_ms);
        Ok(())
    }

    fn open_next(&mut self, now_ms: u64) {
        let round = self.true_moves.len();
        let deadline_ms = now_ms + self.cfg.round_deadline_secs * 1000;
        self.open = Some(OpenRound {
            round,
            deadline_ms,
            bets: vec![None; self.cfg.n_subjects],
        });
        self.record(now_ms, Event::RoundOpened { round, deadline_ms });
        self.round_frames.push(RoundFrame::RoundOpened {
            v: SCHEMA_VERSION,
            round,
            deadline_ms,
            shown_history: self.shown_history(),
        });
    }

    fn shown_history(&self) -> String {
        let m = usize::from(self.cfg.m);
        bits_string(&self.shown_moves[self.shown_moves.len().saturating_sub(m)..])
    }

    /// Records a bet. Returns whether every subject has now bet.
    pub fn submit(&mut self, subject: usize, round: usize, action: i64, now_ms: u64) -> LabResult<bool> {
        let act = Action::from_sign(action).map_err(|_| LabError::BadAction(action))?;
        if subject >= self.subjects.len() {
            return Err(LabError::UnknownSubject(subject));
        }
        match self.phase {
            Phase::Lobby => {
                return Err(LabError::WrongPhase {
                    expected: Phase::Running,
                    actual: Phase::Lobby,
                })
            }
            Phase::Finished => return Err(LabError::Late { round }),
            Phase::Running => {}
        }
        let open = self.open.as_mut().expect("running session has an open round");
        if round < open.round {
            return Err(LabError::Late { round });
        }
        if round > open.round {
            return Err(LabError::NotOpen {
                round,
                open: open.round,
            });
        }
        if open.bets[subject].is_some() {
            return Err(LabError::Duplicate { subject, round });
        }
        open.bets[subject] = Some((act, now_ms));
        let all_in = open.bets.iter().all(Option::is_some);
        self.record(
            now_ms,
            Event::Submitted {
                round,
                subject,
                action: act.sign() as i8,
            },
        );
        Ok(all_in)
    }

    /// Override for the shown bit of subsequent rounds; `None` shows the truth.
    pub fn set_false_feedback(&mut self, override_bit: Option<u8>, now_ms: u64) -> LabResult<()> {
        let mv = override_bit
            .map(|b| Move::from_bit(b).map_err(|_| LabError::BadBit(b)))
            .transpose()?;
        if self.phase == Phase::Finished {
            return Err(LabError::WrongPhase {
                expected: Phase::Running,
                actual: Phase::Finished,
            });
        }
        self.feedback = mv;
        self.record(now_ms, Event::FeedbackSet { override_bit });
        Ok(())
    }

    pub fn false_feedback(&self) -> Option<u8> {
        self.feedback.map(Move::bit)
    }

    pub fn result(&self, round: usize) -> Option<&RoundResult> {
        let first = usize::from(self.cfg.m);
        round.checked_sub(first).and_then(|i| self.results.get(i))
    }

    /// Closes `round`. Without `force` the deadline must have passed or every
    /// subject must have bet. Settling an already settled round returns the
    /// stored result.
    pub fn settle(&mut self, round: usize, now_ms: u64, force: bool) -> LabResult<RoundResult> {
        if let Some(r) = self.result(round) {
            return Ok(r.clone());
        }
        self.require(Phase::Running)?;
        let open = self.open.take().expect("running session has an open round");
        if round != open.round {
            let err = LabError::NotOpen {
                round,
                open: open.round,
            };
            self.open = Some(open);
            return Err(err);
        }
        if !force && now_ms < open.deadline_ms && open.bets.iter().any(Option::is_none) {
            self.open = Some(open);
            return Err(LabError::DeadlineNotReached { round });
        }

        let n = self.cfg.n_subjects;
        let mut actions = Vec::with_capacity(n);
        for (subject, bet) in open.bets.iter().enumerate() {
            let (act, imputed, at_ms) = match *bet {
                Some((a, at)) => (a, false, at),
                None => {
                    let a = match (self.cfg.absent_policy, self.last_actions[subject]) {
                        (AbsentPolicy::RepeatLast, Some(prev)) => prev,
                        _ => {
                            if coin(&mut self.rng) {
                                Action::Buy
                            } else {
                                Action::Sell
                            }
                        }
                    };
                    (a, true, now_ms)
                }
            };
            self.last_actions[subject] = Some(act);
            actions.push(RoundAction {
                subject,
                action: act.sign() as i8,
                imputed,
                at_ms,
            });
        }
        let attendance: i64 = actions.iter().map(|a| i64::from(a.action)).sum();
        let score_deltas: Vec<i64> = actions.iter().map(|a| i64::from(a.action) * attendance).collect();
        for (s, d) in self.scores.iter_mut().zip(&score_deltas) {
            *s += d;
        }
        let (true_move, coin_flip) = match attendance.signum() {
            1 => (Move::Up, false),
            -1 => (Move::Down, false),
            _ => (if coin(&mut self.rng) { Move::Up } else { Move::Down }, true),
        };
        let shown_move = self.feedback.unwrap_or(true_move);
        self.true_moves.push(true_move);
        self.shown_moves.push(shown_move);
        self.advance_analytics(true_move);

        let result = RoundResult {
            round,
            actions,
            attendance,
            return_value: attendance as f64 / n as f64,
            score_deltas,
            true_bit: true_move.bit(),
            shown_bit: shown_move.bit(),
            coin_flip,
            settled_at_ms: now_ms,
        };
        self.results.push(result.clone());
        self.record(now_ms, Event::Settled { result: result.clone() });
        self.round_frames.push(RoundFrame::RoundSettled {
            v: SCHEMA_VERSION,
            round,
            shown_bit: shown_move.bit(),
            shown_history: self.shown_history(),
        });
        if self.results.len() == self.cfg.total_rounds {
            self.phase = Phase::Finished;
            self.record(now_ms, Event::Finished);
            self.round_frames.push(RoundFrame::Finished { v: SCHEMA_VERSION });
        } else {
            self.open_next(now_ms);
        }
        Ok(result)
    }

    fn advance_analytics(&mut self, mv: Move) {
        let t = self.true_moves.len() - 1;
        let point = self.tracker.push(mv);
        let frame = match point {
            Some(p) if t >= usize::from(self.cfg.m) => {
                let curves = self.tracker.curves();
                let alarm = decoup_trigger(curves, t, self.tracker.config().m).filter(|o| match o.direction {
                    BubbleDirection::Up => !self.fired_up,
                    BubbleDirection::Down => !self.fired_down,
                });
                if let Some(o) = alarm {
                    match o.direction {
                        BubbleDirection::Up => self.fired_up = true,
                        BubbleDirection::Down => self.fired_down = true,
                    }
                    self.first_alarm.get_or_insert(o.t);
                }
                AnalyticsFrame {
                    v: SCHEMA_VERSION,
                    t,
                    status: FrameStatus::Live,
                    pct_pos: Some(p.pct_pos),
                    pct_neg: Some(p.pct_neg),
                    alarm,
                    t_b_decoup: self.first_alarm,
                    prediction: predict_two_ahead(curves, t, self.cfg.threshold),
                }
            }
            _ => AnalyticsFrame {
                v: SCHEMA_VERSION,
                t,
                status: FrameStatus::WarmingUp,
                pct_pos: None,
                pct_neg: None,
                alarm: None,
                t_b_decoup: None,
                prediction: None,
            },
        };
        self.frames.push(frame);
    }

    pub fn final_payout(&self, subject: usize) -> LabResult<f64> {
        self.require(Phase::Finished)?;
        Ok(clamp_payout(self.score(subject)?, self.cfg.payout_cap))
    }

    pub fn public_state(&self) -> PublicState {
        PublicState {
            v: SCHEMA_VERSION,
            id: self.id.clone(),
            phase: self.phase,
            n_subjects: self.cfg.n_subjects,
            joined: self.subjects.len(),
            m: self.cfg.m,
            total_rounds: self.cfg.total_rounds,
            rounds_settled: self.results.len(),
            round: self.open.as_ref().map(|o| o.round),
            deadline_ms: self.open.as_ref().map(|o| o.deadline_ms),
            shown_history: self.shown_history(),
        }
    }

    pub fn admin_state(&self) -> AdminState {
        AdminState {
            public: self.public_state(),
            true_stream: bits_string(&self.true_moves),
            shown_stream: bits_string(&self.shown_moves),
            false_feedback: self.false_feedback(),
            submitted: self
                .open
                .as_ref()
                .map_or_else(Vec::new, |o| o.bets.iter().map(Option::is_some).collect()),
            scores: (0..self.cfg.n_subjects).map(|i| self.score(i).unwrap_or(0.0)).collect(),
        }
    }

    /// Rebuilds a session from its log. Subject tokens are not logged, so the
    /// rebuilt session accepts none; `admin_token` is restored from the
    /// argument.
    pub fn replay(log: &[LogEntry], admin_token: Option<String>) -> LabResult<Self> {
        let mismatch = |what: String| LabError::ReplayMismatch(what);
        let (first, rest) = log.split_first().ok_or_else(|| mismatch("empty log".into()))?;
        let Event::Created { id, config } = &first.event else {
            return Err(mismatch("log does not start with creation".into()));
        };
        let mut cfg = config.clone();
        cfg.admin_token = admin_token;
        let mut s = Session::create(id.clone(), cfg, first.at_ms)?;
        let mut expected = s.log.len();
        for entry in rest {
            let t = entry.at_ms;
            if (entry.seq as usize) < expected {
                if s.log.get(entry.seq as usize).map(|e| &e.event) != Some(&entry.event) {
                    return Err(mismatch(format!("entry {} differs from the rebuilt log", entry.seq)));
                }
                continue;
            }
            match &entry.event {
                Event::Created { .. } | Event::SeedMoves { .. } => {
                    return Err(mismatch(format!("unexpected {:?} at {}", entry.event, entry.seq)))
                }
                Event::Joined { name, .. } => {
                    s.join(name.clone(), String::new(), t)?;
                }
                Event::Started => s.start(t)?,
                Event::RoundOpened { .. } | Event::Finished => {}
                Event::Submitted { round, subject, action } => {
                    s.submit(*subject, *round, i64::from(*action), t)?;
                }
                Event::FeedbackSet { override_bit } => s.set_false_feedback(*override_bit, t)?,
                Event::Settled { result } => {
                    let got = s.settle(result.round, t, true)?;
                    if &got != result {
                        return Err(mismatch(format!("round {} settles differently", result.round)));
                    }
                }
            }
            if s.log.get(entry.seq as usize).map(|e| &e.event) != Some(&entry.event) {
                return Err(mismatch(format!("entry {} is not reproduced", entry.seq)));
            }
            expected = s.log.len();
        }
        if s.log.len() != log.len() {
            return Err(mismatch(format!("rebuilt {} entries from {}", s.log.len(), log.len())));
        }
        Ok(s)
    }
}
