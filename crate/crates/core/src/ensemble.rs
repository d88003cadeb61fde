//! Monte Carlo ensembles of games driven by an external move stream.
//!
//! Every game sees the same stream: decisions read its last `m` moves and
//! strategies are scored against its realized moves. The games differ only in
//! how strategies were dealt (game `g` is seeded with `base_seed + g`). At each
//! time `t` the ensemble reports which fraction of games has the sign of the
//! move at `t + 2` fixed by its decoupled agents.
//!
//! Times are 0-based stream indices. The first analyzable time is `m - 1`
//! (first full history) and the last is `T - 3`, so that the predicted move is
//! still inside the stream.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoupling::{game_decoupling_with, Direction, GameDecoupling, IncrementSource, Lookahead};
use crate::error::{Error, Result};
use crate::game::{Game, GameConfig, GameKind, StrategyChoice};
use crate::history::{History, Move};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StreamSource {
    HumanSession,
    Selfplay,
    ReturnToMean,
    Iid,
    Unknown,
}

impl StreamSource {
    pub fn name(self) -> &'static str {
        match self {
            StreamSource::HumanSession => "human-session",
            StreamSource::Selfplay => "selfplay",
            StreamSource::ReturnToMean => "return-to-mean",
            StreamSource::Iid => "iid",
            StreamSource::Unknown => "unknown",
        }
    }

    pub fn parse(s: &str) -> Self {
        match s {
            "human-session" => StreamSource::HumanSession,
            "selfplay" => StreamSource::Selfplay,
            "return-to-mean" => StreamSource::ReturnToMean,
            "iid" => StreamSource::Iid,
            _ => StreamSource::Unknown,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalStream {
    pub moves: Vec<Move>,
    pub source: StreamSource,
    /// Free-form `key: value` metadata carried in file headers.
    pub meta: BTreeMap<String, String>,
}

impl ExternalStream {
    pub fn new(moves: Vec<Move>, source: StreamSource) -> Self {
        Self {
            moves,
            source,
            meta: BTreeMap::new(),
        }
    }

    pub fn from_bits(bits: &[u8], source: StreamSource) -> Result<Self> {
        let moves = bits.iter().map(|&b| Move::from_bit(b)).collect::<Result<Vec<_>>>()?;
        Ok(Self::new(moves, source))
    }

    pub fn len(&self) -> usize {
        self.moves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.moves.is_empty()
    }

    pub fn bits(&self) -> Vec<u8> {
        self.moves.iter().map(|m| m.bit()).collect()
    }

    /// History ending with the move at index `t`.
    pub fn history_at(&self, m: u8, t: usize) -> Result<History> {
        history_at(&self.moves, m, t)
    }
}

pub(crate) fn history_at(moves: &[Move], m: u8, t: usize) -> Result<History> {
    let m_us = usize::from(m);
    if t + 1 < m_us || t >= moves.len() {
        return Err(Error::invalid(format!("no full history of length {m} ends at t={t}")));
    }
    History::encode(m, &moves[t + 1 - m_us..=t])
}

/// How ensemble games score strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scoring {
    /// The stream's unit move `2b - 1`.
    #[default]
    ExternalMove,
    /// The game's own attendance, ignoring the stream's moves except through
    /// the histories.
    OwnAttendance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n_mc: usize,
    pub n_agents: usize,
    pub m: u8,
    pub s: usize,
    pub kind: GameKind,
    pub base_seed: u64,
    #[serde(default)]
    pub choice: StrategyChoice,
    #[serde(default)]
    pub scoring: Scoring,
    #[serde(default)]
    pub lookahead: Lookahead,
}

impl EnsembleConfig {
    pub const DEFAULT_N_MC: usize = 1000;
    pub const DEFAULT_S: usize = 20;

    pub fn new(n_agents: usize, m: u8) -> Self {
        Self {
            n_mc: Self::DEFAULT_N_MC,
            n_agents,
            m,
            s: Self::DEFAULT_S,
            kind: GameKind::Dollar,
            base_seed: 0,
            choice: StrategyChoice::Best,
            scoring: Scoring::ExternalMove,
            lookahead: Lookahead::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_mc == 0 {
            return Err(Error::invalid("n_mc must be at least 1"));
        }
        self.game_config(0).validate()
    }

    pub fn game_config(&self, g: usize) -> GameConfig {
        GameConfig {
            kind: self.kind,
            n_agents: self.n_agents,
            m: self.m,
            s: self.s,
            seed: self.base_seed.wrapping_add(g as u64),
            choice: self.choice,
        }
    }
}

/// Counts of positively/negatively decoupled games at consecutive times.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecouplingCurves {
    /// Time of the first entry.
    pub start: usize,
    pub n_mc: usize,
    pub pos: Vec<u32>,
    pub neg: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub t: usize,
    pub pct_pos: f64,
    pub pct_neg: f64,
}

impl DecouplingCurves {
    pub fn empty(start: usize, n_mc: usize) -> Self {
        Self {
            start,
            n_mc,
            pos: Vec::new(),
            neg: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pos.is_empty()
    }

    pub fn times(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len()
    }

    pub fn end(&self) -> usize {
        self.start + self.len()
    }

    fn frac(&self, count: u32) -> f64 {
        f64::from(count) / self.n_mc as f64
    }

    pub fn pct_pos(&self, t: usize) -> Option<f64> {
        self.index(t).map(|i| self.frac(self.pos[i]))
    }

    pub fn pct_neg(&self, t: usize) -> Option<f64> {
        self.index(t).map(|i| self.frac(self.neg[i]))
    }

    pub fn counts(&self, t: usize) -> Option<(u32, u32)> {
        self.index(t).map(|i| (self.pos[i], self.neg[i]))
    }

    pub fn point(&self, t: usize) -> Option<CurvePoint> {
        self.index(t).map(|i| CurvePoint {
            t,
            pct_pos: self.frac(self.pos[i]),
            pct_neg: self.frac(self.neg[i]),
        })
    }

    pub fn points(&self) -> impl Iterator<Item = CurvePoint> + '_ {
        self.times().map(|t| self.point(t).expect("in range"))
    }

    pub fn pos_fractions(&self) -> Vec<f64> {
        self.pos.iter().map(|&c| self.frac(c)).collect()
    }

    pub fn neg_fractions(&self) -> Vec<f64> {
        self.neg.iter().map(|&c| self.frac(c)).collect()
    }

    fn index(&self, t: usize) -> Option<usize> {
        (t >= self.start && t < self.end()).then(|| t - self.start)
    }

    pub(crate) fn push(&mut self, pos: u32, neg: u32) {
        self.pos.push(pos);
        self.neg.push(neg);
    }

    /// Keeps entries with `t < end`.
    pub fn truncate_to(&mut self, end: usize) {
        let keep = end.saturating_sub(self.start).min(self.len());
        self.pos.truncate(keep);
        self.neg.truncate(keep);
    }
}

/// A single ensemble game following a stream move by move.
#[derive(Debug, Clone)]
pub struct StreamFollower {
    game: Game,
    scoring: Scoring,
    lookahead: Lookahead,
    moves: Vec<Move>,
}

impl StreamFollower {
    pub fn new(game: Game, scoring: Scoring, lookahead: Lookahead) -> Self {
        Self {
            game,
            scoring,
            lookahead,
            moves: Vec::new(),
        }
    }

    pub fn game(&self) -> &Game {
        &self.game
    }

    /// Consumes the move at index `t = moves.len()`: scores the previous
    /// decision, decides on the new history and analyzes it. Returns the
    /// analysis once a full history exists.
    pub fn push(&mut self, mv: Move) -> Option<GameDecoupling> {
        self.moves.push(mv);
        let t = self.moves.len() - 1;
        let m = usize::from(self.game.memory());
        if t >= m {
            let inc = match self.scoring {
                Scoring::ExternalMove => mv.unit(),
                Scoring::OwnAttendance => self.game.last_attendance().map_or(0, |a| a.value()),
            };
            self.game.settle(inc);
        }
        if t + 1 < m {
            return None;
        }
        let h = history_at(&self.moves, self.game.memory(), t).expect("full history");
        let att = self.game.decide(h);
        let source = match self.scoring {
            Scoring::ExternalMove => IncrementSource::UnitMove,
            Scoring::OwnAttendance => IncrementSource::Attendance(att.value()),
        };
        Some(game_decoupling_with(&self.game, h, source, self.lookahead))
    }
}

/// Per-game analyses alongside the merged curves.
#[derive(Debug, Clone)]
pub struct EnsembleTrace {
    pub curves: DecouplingCurves,
    /// `per_game[g][i]` is game `g` at time `curves.start + i`.
    pub per_game: Vec<Vec<GameDecoupling>>,
}

fn check_stream(stream: &ExternalStream, cfg: &EnsembleConfig) -> Result<()> {
    cfg.validate()?;
    let need = usize::from(cfg.m) + 2;
    if stream.len() < need {
        return Err(Error::invalid(format!(
            "stream has {} moves, analysis with m={} needs at least {need}",
            stream.len(),
            cfg.m
        )));
    }
    Ok(())
}

fn follow(stream: &ExternalStream, cfg: &EnsembleConfig, g: usize) -> Vec<GameDecoupling> {
    let game = Game::new(cfg.game_config(g)).expect("validated config");
    let mut follower = StreamFollower::new(game, cfg.scoring, cfg.lookahead);
    let last = stream.len() - 3;
    let mut out = Vec::with_capacity(stream.len());
    for (t, &mv) in stream.moves.iter().enumerate().take(last + 1) {
        if let Some(d) = follower.push(mv) {
            debug_assert!(t + 1 >= usize::from(cfg.m));
            out.push(d);
        }
    }
    out
}

fn merge(start: usize, n_mc: usize, per_game: &[Vec<GameDecoupling>]) -> DecouplingCurves {
    let len = per_game.first().map_or(0, Vec::len);
    let mut curves = DecouplingCurves::empty(start, n_mc);
    for i in 0..len {
        let (mut pos, mut neg) = (0u32, 0u32);
        for game in per_game {
            match game[i].direction {
                Direction::Positive => pos += 1,
                Direction::Negative => neg += 1,
                Direction::None => {}
            }
        }
        curves.push(pos, neg);
    }
    curves
}

/// Runs the ensemble over the whole stream, evaluating games in parallel on
/// the current rayon pool.
pub fn run_ensemble_traced(stream: &ExternalStream, cfg: &EnsembleConfig) -> Result<EnsembleTrace> {
    check_stream(stream, cfg)?;
    let per_game: Vec<Vec<GameDecoupling>> = (0..cfg.n_mc).into_par_iter().map(|g| follow(stream, cfg, g)).collect();
    let curves = merge(usize::from(cfg.m) - 1, cfg.n_mc, &per_game);
    Ok(EnsembleTrace { curves, per_game })
}

pub fn run_ensemble(stream: &ExternalStream, cfg: &EnsembleConfig) -> Result<DecouplingCurves> {
    check_stream(stream, cfg)?;
    let per_game: Vec<Vec<GameDecoupling>> = (0..cfg.n_mc).into_par_iter().map(|g| follow(stream, cfg, g)).collect();
    Ok(merge(usize::from(cfg.m) - 1, cfg.n_mc, &per_game))
}

/// Same as [`run_ensemble`] on a dedicated pool of `threads` workers.
pub fn run_ensemble_threads(stream: &ExternalStream, cfg: &EnsembleConfig, threads: usize) -> Result<DecouplingCurves> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("cannot build thread pool: {e}")))?;
    pool.install(|| run_ensemble(stream, cfg))
}

/// Incremental ensemble for live streams: one curve point per pushed move.
///
/// Points for times up to `T - 3` are identical to [`run_ensemble`] on the
/// same `T` moves.
#[derive(Debug, Clone)]
pub struct EnsembleTracker {
    cfg: EnsembleConfig,
    followers: Vec<StreamFollower>,
    moves: Vec<Move>,
    curves: DecouplingCurves,
}

impl EnsembleTracker {
    pub fn new(cfg: EnsembleConfig) -> Result<Self> {
        cfg.validate()?;
        let followers = (0..cfg.n_mc)
            .map(|g| Game::new(cfg.game_config(g)).map(|game| StreamFollower::new(game, cfg.scoring, cfg.lookahead)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg,
            followers,
            moves: Vec::new(),
            curves: DecouplingCurves::empty(usize::from(cfg.m) - 1, cfg.n_mc),
        })
    }

    pub fn config(&self) -> &EnsembleConfig {
        &self.cfg
    }

    pub fn moves(&self) -> &[Move] {
        &self.moves
    }

    pub fn curves(&self) -> &DecouplingCurves {
        &self.curves
    }

    pub fn push(&mut self, mv: Move) -> Option<CurvePoint> {
        self.moves.push(mv);
        let results: Vec<Option<GameDecoupling>> = self.followers.par_iter_mut().map(|f| f.push(mv)).collect();
        if results.iter().any(Option::is_none) {
            return None;
        }
        let (mut pos, mut neg) = (0u32, 0u32);
        for d in results.into_iter().flatten() {
            match d.direction {
                Direction::Positive => pos += 1,
                Direction::Negative => neg += 1,
                Direction::None => {}
            }
        }
        self.curves.push(pos, neg);
        self.curves.point(self.moves.len() - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strategy::{Action, Strategy};

    fn bits(s: &str) -> ExternalStream {
        ExternalStream::new(
            s.chars().map(|c| if c == '1' { Move::Up } else { Move::Down }).collect(),
            StreamSource::Unknown,
        )
    }

    #[test]
    fn rejects_short_streams() {
        let cfg = EnsembleConfig { n_mc: 4, ..EnsembleConfig::new(5, 3) };
        assert!(run_ensemble(&bits("0101"), &cfg).is_err());
        assert!(run_ensemble(&bits("01010"), &cfg).is_ok());
    }

    #[test]
    fn curve_length_and_start() {
        let cfg = EnsembleConfig { n_mc: 8, ..EnsembleConfig::new(5, 3) };
        let stream = bits("0110100110101101");
        let c = run_ensemble(&stream, &cfg).unwrap();
        assert_eq!(c.start, 2);
        assert_eq!(c.end(), stream.len() - 2);
        for p in c.points() {
            assert!(p.pct_pos + p.pct_neg <= 1.0);
        }
    }

    #[test]
    fn constant_buyers_always_positive() {
        let stream = bits("0110100110101101");
        let mut f = StreamFollower::new(
            Game::with_population(
                GameKind::Dollar,
                3,
                (0..11).map(|_| vec![Strategy::constant(3, Action::Buy).unwrap(); 2]).collect(),
                1,
            )
            .unwrap(),
            Scoring::ExternalMove,
            Lookahead::default(),
        );
        for (t, &mv) in stream.moves.iter().enumerate() {
            let d = f.push(mv);
            assert_eq!(d.is_some(), t >= 2);
            if let Some(d) = d {
                assert_eq!(d.direction, Direction::Positive);
            }
        }
    }

    #[test]
    fn tracker_matches_batch() {
        let cfg = EnsembleConfig { n_mc: 16, s: 4, ..EnsembleConfig::new(7, 3) };
        let stream = bits("011010011111111111010111000");
        let batch = run_ensemble(&stream, &cfg).unwrap();
        let mut tracker = EnsembleTracker::new(cfg).unwrap();
        for &mv in &stream.moves {
            tracker.push(mv);
        }
        let mut live = tracker.curves().clone();
        live.truncate_to(batch.end());
        assert_eq!(live, batch);
    }

    #[test]
    fn thread_count_does_not_change_curves() {
        let cfg = EnsembleConfig { n_mc: 40, s: 5, ..EnsembleConfig::new(7, 3) };
        let stream = bits("0110100111111111110101110001111111");
        let one = run_ensemble_threads(&stream, &cfg, 1).unwrap();
        let four = run_ensemble_threads(&stream, &cfg, 4).unwrap();
        assert_eq!(one, four);
    }

    #[test]
    fn single_game_curves_are_binary() {
        let cfg = EnsembleConfig { n_mc: 1, ..EnsembleConfig::new(11, 3) };
        let stream = bits("01101001111111111101011100011111111111111");
        let c = run_ensemble(&stream, &cfg).unwrap();
        assert!(c.points().all(|p| [0.0, 1.0].contains(&p.pct_pos) && [0.0, 1.0].contains(&p.pct_neg)));
    }
}
