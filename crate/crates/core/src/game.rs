//! Minority Game and $-Game dynamics.
//!
//! A [`Game`] holds `N` agents with `s` lookup-table strategies each. At every
//! step each agent plays its highest-scoring strategy, the attendance `A` is the
//! sum of those actions and the next move is the sign of `A`. All strategies are
//! scored virtually after every settled move:
//!
//! * Minority Game: a strategy that acted on `mu(t)` gains `-S(mu(t)) * A(t)`.
//! * $-Game: a strategy that acted on `mu(t-1)` gains `S(mu(t-1)) * A(t)`,
//!   i.e. it is paid by the move after the one its order fed into.
//!
//! The increment is the game's own attendance in self-play, or the unit move of
//! an external stream when agents are driven by someone else's prices.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::history::{check_memory, History, Move};
use crate::strategy::{Action, Strategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GameKind {
    #[serde(rename = "mg")]
    Minority,
    Dollar,
}

impl GameKind {
    /// Sign applied to `S(scored) * increment`.
    fn payoff_sign(self) -> i64 {
        match self {
            GameKind::Minority => -1,
            GameKind::Dollar => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GameKind::Minority => "mg",
            GameKind::Dollar => "dollar",
        }
    }
}

impl std::str::FromStr for GameKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mg" | "minority" => Ok(GameKind::Minority),
            "dollar" | "dg" | "$g" => Ok(GameKind::Dollar),
            other => Err(Error::invalid(format!("unknown game kind {other:?}"))),
        }
    }
}

/// How an agent picks the strategy it plays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyChoice {
    /// Highest cumulative score, ties broken uniformly at random.
    #[default]
    Best,
    /// Uniformly random strategy, ignoring scores. The pick for the next
    /// decision is drawn right after the current one, so it is already fixed
    /// (and visible to the decoupling analysis) before the next move.
    UniformRandom,
}

/// Signed sum of all agents' actions at one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Attendance(pub i64);

impl Attendance {
    pub fn value(self) -> i64 {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Agent {
    strategies: Vec<Strategy>,
    scores: Vec<i64>,
    rng: ChaCha8Rng,
    random_pick: usize,
}

impl Agent {
    fn new(strategies: Vec<Strategy>, mut rng: ChaCha8Rng) -> Self {
        let random_pick = rng.random_range(0..strategies.len());
        let scores = vec![0; strategies.len()];
        Self {
            strategies,
            scores,
            rng,
            random_pick,
        }
    }

    pub fn strategies(&self) -> &[Strategy] {
        &self.strategies
    }

    pub fn scores(&self) -> &[i64] {
        &self.scores
    }

    pub fn set_scores(&mut self, scores: &[i64]) -> Result<()> {
        if scores.len() != self.scores.len() {
            return Err(Error::invalid(format!(
                "expected {} scores, got {}",
                self.scores.len(),
                scores.len()
            )));
        }
        self.scores.copy_from_slice(scores);
        Ok(())
    }

    /// `q = G(S^2) - G(S^1)`; only defined for two strategies.
    pub fn relative_payoff(&self) -> Option<i64> {
        (self.scores.len() == 2).then(|| self.scores[1] - self.scores[0])
    }

    /// Index the agent will play next under [`StrategyChoice::UniformRandom`].
    pub fn random_pick(&self) -> usize {
        self.random_pick
    }

    /// Indices of every maximal score.
    pub fn argmax(&self) -> Vec<usize> {
        argmax(&self.scores)
    }

    /// Highest-scoring strategy; ties are broken uniformly from the agent's own
    /// RNG stream (which is only advanced when a tie exists).
    pub fn best_strategy(&mut self) -> usize {
        let best = self.argmax();
        if best.len() == 1 {
            best[0]
        } else {
            best[self.rng.random_range(0..best.len())]
        }
    }

    /// The index [`Agent::best_strategy`] would return if the scores were
    /// `scores`, without advancing the RNG.
    pub fn peek_best(&self, scores: &[i64]) -> usize {
        let best = argmax(scores);
        if best.len() == 1 {
            best[0]
        } else {
            best[self.rng.clone().random_range(0..best.len())]
        }
    }

    fn choose(&mut self, choice: StrategyChoice) -> usize {
        match choice {
            StrategyChoice::Best => self.best_strategy(),
            StrategyChoice::UniformRandom => {
                let pick = self.random_pick;
                self.random_pick = self.rng.random_range(0..self.strategies.len());
                pick
            }
        }
    }
}

pub(crate) fn argmax(scores: &[i64]) -> Vec<usize> {
    let top = scores.iter().copied().max().expect("agent has at least one strategy");
    scores
        .iter()
        .enumerate()
        .filter_map(|(i, &g)| (g == top).then_some(i))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameConfig {
    pub kind: GameKind,
    pub n_agents: usize,
    pub m: u8,
    pub s: usize,
    pub seed: u64,
    #[serde(default)]
    pub choice: StrategyChoice,
}

impl GameConfig {
    pub fn validate(&self) -> Result<()> {
        check_memory(self.m)?;
        if self.n_agents == 0 {
            return Err(Error::invalid("n_agents must be at least 1"));
        }
        if self.s == 0 {
            return Err(Error::invalid("s must be at least 1"));
        }
        Ok(())
    }
}

const STREAM_STRATEGIES: u64 = 0;
const STREAM_GAME: u64 = 1;
const STREAM_AGENT_BASE: u64 = 2;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone)]
pub struct Game {
    kind: GameKind,
    m: u8,
    choice: StrategyChoice,
    agents: Vec<Agent>,
    rng: ChaCha8Rng,
    /// Histories of the last two decisions, most recent first.
    decided: [Option<History>; 2],
    last_attendance: Option<Attendance>,
}

impl Game {
    /// Creates a game whose strategies are drawn independently and uniformly
    /// (with replacement) from all `2^(2^m)` tables.
    pub fn new(cfg: GameConfig) -> Result<Self> {
        cfg.validate()?;
        let mut draw = stream_rng(cfg.seed, STREAM_STRATEGIES);
        let population = (0..cfg.n_agents)
            .map(|_| (0..cfg.s).map(|_| Strategy::random(cfg.m, &mut draw)).collect())
            .collect();
        let mut game = Self::with_population(cfg.kind, cfg.m, population, cfg.seed)?;
        game.choice = cfg.choice;
        Ok(game)
    }

    /// Creates a game from explicit strategy sets, one list per agent.
    pub fn with_population(
        kind: GameKind,
        m: u8,
        population: Vec<Vec<Strategy>>,
        seed: u64,
    ) -> Result<Self> {
        check_memory(m)?;
        if population.is_empty() {
            return Err(Error::invalid("a game needs at least one agent"));
        }
        let agents = population
            .into_iter()
            .enumerate()
            .map(|(i, strategies)| {
                if strategies.is_empty() {
                    return Err(Error::invalid(format!("agent {i} has no strategies")));
                }
                if let Some(bad) = strategies.iter().find(|s| s.memory() != m) {
                    return Err(Error::invalid(format!(
                        "agent {i} holds an m={} strategy in an m={m} game",
                        bad.memory()
                    )));
                }
                Ok(Agent::new(strategies, stream_rng(seed, STREAM_AGENT_BASE + i as u64)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            kind,
            m,
            choice: StrategyChoice::Best,
            agents,
            rng: stream_rng(seed, STREAM_GAME),
            decided: [None, None],
            last_attendance: None,
        })
    }

    pub fn with_choice(mut self, choice: StrategyChoice) -> Self {
        self.choice = choice;
        self
    }

    pub fn kind(&self) -> GameKind {
        self.kind
    }

    pub fn memory(&self) -> u8 {
        self.m
    }

    pub fn choice(&self) -> StrategyChoice {
        self.choice
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn agent_mut(&mut self, i: usize) -> &mut Agent {
        &mut self.agents[i]
    }

    pub fn last_attendance(&self) -> Option<Attendance> {
        self.last_attendance
    }

    /// Uniformly random starting history from the game's RNG.
    pub fn random_history(&mut self) -> History {
        let mu = self.rng.random_range(0..History::count(self.m) as u32);
        History::new(self.m, mu).expect("in range")
    }

    /// Sum of every agent's chosen action at `h`. Advances tie-break RNGs but
    /// records nothing.
    pub fn attendance(&mut self, h: History) -> Attendance {
        let choice = self.choice;
        Attendance(
            self.agents
                .iter_mut()
                .map(|a| {
                    let j = a.choose(choice);
                    a.strategies[j].sign(h)
                })
                .sum(),
        )
    }

    /// Makes the decision at `h` and remembers it for the payoff lag.
    pub fn decide(&mut self, h: History) -> Attendance {
        let att = self.attendance(h);
        self.decided = [Some(h), self.decided[0]];
        self.last_attendance = Some(att);
        att
    }

    /// History whose recommendations the next settlement scores: the latest
    /// decision for the MG, the one before it for the $G.
    pub fn scored_history(&self) -> Option<History> {
        match self.kind {
            GameKind::Minority => self.decided[0],
            GameKind::Dollar => self.decided[1],
        }
    }

    /// Scores all strategies once the move that followed the latest decision is
    /// known. `increment` is the attendance (self-play) or the unit move.
    pub fn settle(&mut self, increment: i64) {
        match (self.kind, self.scored_history()) {
            (GameKind::Minority, Some(h)) => self.update_payoffs_mg(h, increment),
            (GameKind::Dollar, Some(h)) => self.update_payoffs_dollar(h, increment),
            (_, None) => {}
        }
    }

    /// Every strategy gains `-S(h_prev) * increment`.
    pub fn update_payoffs_mg(&mut self, h_prev: History, increment: i64) {
        self.apply(GameKind::Minority.payoff_sign(), h_prev, increment);
    }

    /// Every strategy gains `S(h_two_back) * increment`.
    pub fn update_payoffs_dollar(&mut self, h_two_back: History, increment: i64) {
        self.apply(GameKind::Dollar.payoff_sign(), h_two_back, increment);
    }

    fn apply(&mut self, sign: i64, h: History, increment: i64) {
        if increment == 0 {
            return;
        }
        for agent in &mut self.agents {
            for (g, s) in agent.scores.iter_mut().zip(&agent.strategies) {
                *g += sign * s.sign(h) * increment;
            }
        }
    }

    /// Score increment a strategy would receive at settlement.
    pub(crate) fn strategy_increment(&self, s: &Strategy, increment: i64) -> i64 {
        match self.scored_history() {
            Some(h) => self.kind.payoff_sign() * s.sign(h) * increment,
            None => 0,
        }
    }

    /// One self-play step: decide at `h`, move with the sign of `A` (fair coin
    /// when `A = 0`), then score with `A`.
    pub fn step_selfplay(&mut self, h: History) -> (Move, Attendance) {
        let att = self.decide(h);
        let mv = match att.0.signum() {
            1 => Move::Up,
            -1 => Move::Down,
            _ => {
                if self.rng.random::<bool>() {
                    Move::Up
                } else {
                    Move::Down
                }
            }
        };
        self.settle(att.0);
        (mv, att)
    }

    /// Attendance built from the relative payoff `q_i = G(S^2) - G(S^1)`:
    /// `A = sum_i [Theta(q_i) S^2_i + (1 - Theta(q_i)) S^1_i]`, with
    /// `Theta(0) = 0`. Agrees with [`Game::attendance`] whenever no agent
    /// has `q_i = 0`.
    pub fn attendance_via_q(&self, h: History) -> Result<Attendance> {
        let mut total = 0;
        for (i, a) in self.agents.iter().enumerate() {
            let q = a
                .relative_payoff()
                .ok_or_else(|| Error::invalid(format!("agent {i} does not hold exactly 2 strategies")))?;
            let theta = i64::from(q > 0);
            total += theta * a.strategies[1].sign(h) + (1 - theta) * a.strategies[0].sign(h);
        }
        Ok(Attendance(total))
    }

    /// True when some agent's maximal score is shared by several strategies.
    pub fn has_score_tie(&self) -> bool {
        self.agents.iter().any(|a| a.argmax().len() > 1)
    }

    /// Runs self-play from a random initial history and returns the full move
    /// sequence, the `m` seed moves included, `length` moves in total.
    pub fn run_selfplay(&mut self, length: usize) -> Vec<Move> {
        let mut h = self.random_history();
        let mut moves = h.moves();
        moves.truncate(length);
        while moves.len() < length {
            let (mv, _) = self.step_selfplay(h);
            moves.push(mv);
            h = h.successor(mv);
        }
        moves
    }
}

/// Convenience alias for the free-standing form of strategy selection.
pub fn best_strategy(agent: &mut Agent) -> usize {
    agent.best_strategy()
}

/// Action the agent takes at `h` with strategy `j`.
pub fn action_of(agent: &Agent, j: usize, h: History) -> Action {
    agent.strategies[j].action(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_population(n: usize, m: u8, action: Action) -> Vec<Vec<Strategy>> {
        (0..n).map(|_| vec![Strategy::constant(m, action).unwrap()]).collect()
    }

    fn single_agent(scores: &[i64], seed: u64) -> Agent {
        let strategies = scores.iter().map(|_| Strategy::constant(2, Action::Buy).unwrap()).collect();
        let mut a = Agent::new(strategies, stream_rng(seed, 9));
        a.set_scores(scores).unwrap();
        a
    }

    #[test]
    fn best_strategy_strict_and_single() {
        assert_eq!(single_agent(&[0], 1).best_strategy(), 0);
        assert_eq!(single_agent(&[-1, 5], 1).best_strategy(), 1);
    }

    #[test]
    fn best_strategy_ties_are_fair() {
        // scores [3, 1, 3]: index 0 or 2 with probability 1/2 each.
        let mut a = single_agent(&[3, 1, 3], 42);
        let draws = 10_000;
        let mut zeros = 0usize;
        for _ in 0..draws {
            match a.best_strategy() {
                0 => zeros += 1,
                2 => {}
                other => panic!("picked non-maximal index {other}"),
            }
        }
        let sigma = (draws as f64 * 0.25).sqrt();
        assert!((zeros as f64 - draws as f64 / 2.0).abs() < 3.0 * sigma, "zeros={zeros}");
    }

    #[test]
    fn attendance_examples() {
        let h = History::parse("101").unwrap();
        let mut g = Game::with_population(GameKind::Dollar, 3, constant_population(11, 3, Action::Buy), 1).unwrap();
        assert_eq!(g.attendance(h), Attendance(11));

        let mut pop = constant_population(7, 3, Action::Buy);
        pop.extend(constant_population(4, 3, Action::Sell));
        let mut g = Game::with_population(GameKind::Dollar, 3, pop, 1).unwrap();
        assert_eq!(g.attendance(h), Attendance(3));

        let mut pop = constant_population(1, 3, Action::Buy);
        pop.extend(constant_population(1, 3, Action::Sell));
        let mut g = Game::with_population(GameKind::Minority, 3, pop, 1).unwrap();
        assert_eq!(g.attendance(h), Attendance(0));
    }

    #[test]
    fn mg_update_examples() {
        let pop = vec![vec![
            Strategy::constant(2, Action::Buy).unwrap(),
            Strategy::constant(2, Action::Sell).unwrap(),
        ]];
        let mut g = Game::with_population(GameKind::Minority, 2, pop, 0).unwrap();
        let h = History::parse("10").unwrap();
        g.update_payoffs_mg(h, 3);
        assert_eq!(g.agents()[0].scores(), &[-3, 3]);
        g.update_payoffs_mg(h, 0);
        assert_eq!(g.agents()[0].scores(), &[-3, 3]);
    }

    #[test]
    fn dollar_update_examples() {
        let pop = vec![vec![
            Strategy::constant(2, Action::Sell).unwrap(),
            Strategy::constant(2, Action::Buy).unwrap(),
        ]];
        let mut g = Game::with_population(GameKind::Dollar, 2, pop, 0).unwrap();
        let h = History::parse("01").unwrap();
        g.update_payoffs_dollar(h, 3);
        assert_eq!(g.agents()[0].relative_payoff(), Some(6));
        g.update_payoffs_dollar(h, -5);
        assert_eq!(g.agents()[0].scores(), &[-3 + 5, 3 - 5]);
    }

    #[test]
    fn dollar_first_step_leaves_scores() {
        let mut g = Game::new(GameConfig {
            kind: GameKind::Dollar,
            n_agents: 5,
            m: 3,
            s: 4,
            seed: 9,
            choice: StrategyChoice::Best,
        })
        .unwrap();
        let h = g.random_history();
        g.step_selfplay(h);
        assert!(g.agents().iter().all(|a| a.scores().iter().all(|&x| x == 0)));
        // The second step pays the first decision.
        g.step_selfplay(h.successor(Move::Up));
        assert!(g.agents().iter().any(|a| a.scores().iter().any(|&x| x != 0)));
    }

    #[test]
    fn mg_first_step_scores_immediately() {
        let mut g = Game::new(GameConfig {
            kind: GameKind::Minority,
            n_agents: 5,
            m: 3,
            s: 4,
            seed: 9,
            choice: StrategyChoice::Best,
        })
        .unwrap();
        let h = g.random_history();
        g.step_selfplay(h);
        assert!(g.agents().iter().any(|a| a.scores().iter().any(|&x| x != 0)));
    }

    #[test]
    fn constant_populations_are_absorbing() {
        for (action, mv) in [(Action::Buy, Move::Up), (Action::Sell, Move::Down)] {
            let mut g = Game::with_population(GameKind::Dollar, 3, constant_population(11, 3, action), 5).unwrap();
            let mut h = g.random_history();
            for _ in 0..200 {
                let (b, a) = g.step_selfplay(h);
                assert_eq!(b, mv);
                assert_eq!(a.value().abs(), 11);
                h = h.successor(b);
            }
        }
    }

    #[test]
    fn zero_attendance_flips_fair_coin() {
        let mut pop = constant_population(1, 2, Action::Buy);
        pop.extend(constant_population(1, 2, Action::Sell));
        let mut g = Game::with_population(GameKind::Dollar, 2, pop, 77).unwrap();
        let mut h = g.random_history();
        let steps = 10_000;
        let mut ups = 0;
        for _ in 0..steps {
            let (b, a) = g.step_selfplay(h);
            assert_eq!(a.value(), 0);
            ups += usize::from(b == Move::Up);
            h = h.successor(b);
        }
        let sigma = (steps as f64 * 0.25).sqrt();
        assert!((ups as f64 - steps as f64 / 2.0).abs() < 3.0 * sigma, "ups={ups}");
    }

    #[test]
    fn attendance_via_q_examples() {
        let h = History::parse("11").unwrap();
        let pop: Vec<_> = (0..3)
            .map(|_| vec![Strategy::constant(2, Action::Sell).unwrap(), Strategy::constant(2, Action::Buy).unwrap()])
            .collect();
        let mut g = Game::with_population(GameKind::Dollar, 2, pop, 0).unwrap();
        for i in 0..3 {
            g.agent_mut(i).set_scores(&[0, 2]).unwrap();
        }
        assert_eq!(g.attendance_via_q(h).unwrap(), Attendance(3));
        for i in 0..3 {
            g.agent_mut(i).set_scores(&[2, 0]).unwrap();
        }
        assert_eq!(g.attendance_via_q(h).unwrap(), Attendance(-3));

        let odd = Game::with_population(GameKind::Dollar, 2, constant_population(2, 2, Action::Buy), 0).unwrap();
        assert!(odd.attendance_via_q(h).is_err());
    }

    #[test]
    fn attendance_via_q_matches_random_games() {
        for seed in 0..1000 {
            let mut g = Game::new(GameConfig {
                kind: if seed % 2 == 0 { GameKind::Dollar } else { GameKind::Minority },
                n_agents: 5,
                m: 2,
                s: 2,
                seed,
                choice: StrategyChoice::Best,
            })
            .unwrap();
            let mut h = g.random_history();
            for _ in 0..20 {
                if !g.has_score_tie() {
                    let oracle = g.attendance_via_q(h).unwrap();
                    assert_eq!(g.clone().attendance(h), oracle, "seed {seed}");
                }
                let (b, _) = g.step_selfplay(h);
                h = h.successor(b);
            }
        }
    }

    #[test]
    fn minority_step_is_nonpositive_for_played_strategies() {
        // Sum over agents of the played strategy's gain is -A^2.
        for seed in 0..200 {
            let mut g = Game::new(GameConfig {
                kind: GameKind::Minority,
                n_agents: 7,
                m: 3,
                s: 3,
                seed,
                choice: StrategyChoice::Best,
            })
            .unwrap();
            let mut h = g.random_history();
            for _ in 0..30 {
                let mut probe = g.clone();
                let before: Vec<Vec<i64>> = probe.agents.iter().map(|a| a.scores.clone()).collect();
                let picks: Vec<usize> = probe.agents.iter_mut().map(|a| a.best_strategy()).collect();
                let att: i64 = picks.iter().zip(g.agents()).map(|(&j, a)| a.strategies()[j].sign(h)).sum();
                probe.update_payoffs_mg(h, att);
                let gain: i64 = picks
                    .iter()
                    .enumerate()
                    .map(|(i, &j)| probe.agents[i].scores[j] - before[i][j])
                    .sum();
                assert_eq!(gain, -att * att);
                let (b, _) = g.step_selfplay(h);
                h = h.successor(b);
            }
        }
    }

    #[test]
    fn deterministic_replay() {
        let cfg = GameConfig {
            kind: GameKind::Dollar,
            n_agents: 11,
            m: 3,
            s: 20,
            seed: 1234,
            choice: StrategyChoice::Best,
        };
        let a = Game::new(cfg).unwrap().run_selfplay(300);
        let b = Game::new(cfg).unwrap().run_selfplay(300);
        assert_eq!(a, b);
    }

    #[test]
    fn parity_holds_every_step() {
        for n in [4usize, 7, 11] {
            let mut g = Game::new(GameConfig {
                kind: GameKind::Minority,
                n_agents: n,
                m: 3,
                s: 3,
                seed: n as u64,
                choice: StrategyChoice::Best,
            })
            .unwrap();
            let mut h = g.random_history();
            for _ in 0..100 {
                let (b, a) = g.step_selfplay(h);
                assert!(a.value().unsigned_abs() as usize <= n);
                assert_eq!((a.value() - n as i64).rem_euclid(2), 0);
                h = h.successor(b);
            }
        }
    }
}
