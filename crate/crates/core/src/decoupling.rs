//! Coupled/decoupled classification two moves ahead.
//!
//! Given the history `h_t`, an agent is decoupled when the action it will take
//! on `h_{t+1}` is the same whichever move arrives at `t+1`. The lookahead
//! applies the payoff update each hypothetical move would trigger, so an agent
//! whose best strategy would switch between the two branches can be coupled
//! even though every one of its tables is individually decoupled.
//!
//! When the decoupled agents' forced actions sum past `N/2` the sign of the
//! attendance at `t+1`, hence the move at `t+2`, is fixed in advance.

use serde::{Deserialize, Serialize};

use crate::game::{argmax, Game, StrategyChoice};
use crate::history::{History, Move};
use crate::strategy::{Action, Strategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoupledVerdict {
    forced: Option<Action>,
}

impl DecoupledVerdict {
    pub const COUPLED: Self = Self { forced: None };

    pub fn forced(action: Action) -> Self {
        Self { forced: Some(action) }
    }

    pub fn is_decoupled(self) -> bool {
        self.forced.is_some()
    }

    pub fn forced_action(self) -> Option<Action> {
        self.forced
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Positive,
    Negative,
    None,
}

impl Direction {
    pub fn sign(self) -> i64 {
        match self {
            Direction::Positive => 1,
            Direction::Negative => -1,
            Direction::None => 0,
        }
    }
}

/// Threshold applied to the decoupled attendance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecouplingRule {
    /// `|A_decoupled| > N/2`.
    #[default]
    HalfN,
    /// `|A_decoupled| > N - n_decoupled`: the coupled agents cannot outvote it.
    Sharp,
}

/// How the lookahead treats a branch in which several strategies share the
/// top score. Under uniform-random play every strategy counts as tied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    /// The branch action is known only if every tied strategy agrees.
    #[default]
    Conservative,
    /// The branch action is the one the agent's own tie-break RNG would pick.
    Realized,
}

/// Options of the two-branch lookahead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Lookahead {
    #[serde(default)]
    pub rule: DecouplingRule,
    #[serde(default)]
    pub ties: TieRule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameDecoupling {
    pub a_decoupled: i64,
    pub n_decoupled: usize,
    pub direction: Direction,
}

/// Where the increment for the next settlement comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IncrementSource {
    /// The external unit move `2b - 1` of each hypothetical branch.
    UnitMove,
    /// A fixed attendance, the same on both branches.
    Attendance(i64),
}

impl IncrementSource {
    pub fn for_move(self, mv: Move) -> i64 {
        match self {
            IncrementSource::UnitMove => mv.unit(),
            IncrementSource::Attendance(a) => a,
        }
    }
}

/// Action of `s` two moves ahead, common to every `k`-move continuation of `h`.
///
/// For `k = 1` this compares `S(successor(h, 0))` with `S(successor(h, 1))`.
pub fn strategy_decoupled(s: &Strategy, h: History, k: u32) -> DecoupledVerdict {
    assert!(k >= 1, "lookahead depth must be at least 1");
    let mut frontier = vec![h];
    for _ in 0..k {
        frontier = frontier
            .iter()
            .flat_map(|x| Move::BOTH.map(|mv| x.successor(mv)))
            .collect();
        frontier.sort_by_key(|x| x.index());
        frontier.dedup();
    }
    let first = s.action(frontier[0]);
    if frontier.iter().all(|&x| s.action(x) == first) {
        DecoupledVerdict::forced(first)
    } else {
        DecoupledVerdict::COUPLED
    }
}

/// Action agent `i` is certain to take at `successor(h_t, mv)`, if any.
fn branch_action(game: &Game, i: usize, h_t: History, mv: Move, source: IncrementSource, ties: TieRule) -> Option<Action> {
    let agent = &game.agents()[i];
    let next = h_t.successor(mv);
    if game.choice() == StrategyChoice::UniformRandom {
        // The pick is a coin the analyst cannot see unless ties are realized.
        if ties == TieRule::Realized {
            return Some(agent.strategies()[agent.random_pick()].action(next));
        }
        let first = agent.strategies()[0].action(next);
        return agent
            .strategies()
            .iter()
            .all(|s| s.action(next) == first)
            .then_some(first);
    }
    let inc = source.for_move(mv);
    let scores: Vec<i64> = agent
        .strategies()
        .iter()
        .zip(agent.scores())
        .map(|(s, &g)| g + game.strategy_increment(s, inc))
        .collect();
    if ties == TieRule::Realized {
        return Some(agent.strategies()[agent.peek_best(&scores)].action(next));
    }
    let best = argmax(&scores);
    let first = agent.strategies()[best[0]].action(next);
    best.iter()
        .all(|&j| agent.strategies()[j].action(next) == first)
        .then_some(first)
}

/// Two-branch lookahead for one agent. A branch whose score tie could flip the
/// action makes the agent coupled. Does not touch the game.
pub fn agent_decoupled(game: &Game, i: usize, h_t: History, source: IncrementSource) -> DecoupledVerdict {
    agent_decoupled_with(game, i, h_t, source, TieRule::Conservative)
}

pub fn agent_decoupled_with(
    game: &Game,
    i: usize,
    h_t: History,
    source: IncrementSource,
    ties: TieRule,
) -> DecoupledVerdict {
    let down = branch_action(game, i, h_t, Move::Down, source, ties);
    let up = branch_action(game, i, h_t, Move::Up, source, ties);
    match (down, up) {
        (Some(a), Some(b)) if a == b => DecoupledVerdict::forced(a),
        _ => DecoupledVerdict::COUPLED,
    }
}

pub fn game_decoupling(game: &Game, h_t: History, source: IncrementSource) -> GameDecoupling {
    game_decoupling_with(game, h_t, source, Lookahead::default())
}

pub fn game_decoupling_with(game: &Game, h_t: History, source: IncrementSource, opts: Lookahead) -> GameDecoupling {
    let (a_decoupled, n_decoupled) = (0..game.n_agents())
        .filter_map(|i| agent_decoupled_with(game, i, h_t, source, opts.ties).forced_action())
        .fold((0i64, 0usize), |(a, n), act| (a + act.sign(), n + 1));
    let n = game.n_agents() as i64;
    let bar = match opts.rule {
        // 2|a| > N  <=>  |a| > N/2
        DecouplingRule::HalfN => |a: i64, n: i64, _nd: i64| 2 * a.abs() > n,
        DecouplingRule::Sharp => |a: i64, n: i64, nd: i64| a.abs() > n - nd,
    };
    let direction = if bar(a_decoupled, n, n_decoupled as i64) {
        if a_decoupled > 0 {
            Direction::Positive
        } else {
            Direction::Negative
        }
    } else {
        Direction::None
    };
    GameDecoupling {
        a_decoupled,
        n_decoupled,
        direction,
    }
}

/// Exhaustive check of whether the attendance at `t+1` has a fixed sign.
///
/// Each branch is simulated on a clone of the game with the real settlement
/// code; every tie resolution of every agent is then enumerated and the full
/// attendance summed. Exponential in the number of tied agents, so meant for
/// small games.
pub fn brute_force_sign_determined(game: &Game, h_t: History, source: IncrementSource) -> Direction {
    brute_force_sign_determined_with(game, h_t, source, TieRule::Conservative)
}

/// Under [`TieRule::Realized`] each branch clone simply makes its next
/// decision, so the attendance is exactly what the game would produce.
pub fn brute_force_sign_determined_with(game: &Game, h_t: History, source: IncrementSource, ties: TieRule) -> Direction {
    let mut signs = Vec::new();
    for mv in Move::BOTH {
        let mut branch = game.clone();
        branch.settle(source.for_move(mv));
        let next = h_t.successor(mv);
        if ties == TieRule::Realized {
            signs.push(branch.attendance(next).value().signum());
            continue;
        }
        let options: Vec<Vec<i64>> = branch
            .agents()
            .iter()
            .map(|a| {
                let picks = match branch.choice() {
                    StrategyChoice::UniformRandom => (0..a.strategies().len()).collect(),
                    StrategyChoice::Best => a.argmax(),
                };
                let mut acts: Vec<i64> = picks.iter().map(|&j| a.strategies()[j].sign(next)).collect();
                acts.sort_unstable();
                acts.dedup();
                acts
            })
            .collect();
        let mut totals = vec![0i64];
        for opts in &options {
            totals = totals
                .iter()
                .flat_map(|t| opts.iter().map(move |o| t + o))
                .collect();
        }
        signs.extend(totals.into_iter().map(i64::signum));
    }
    match (signs.iter().all(|&s| s == 1), signs.iter().all(|&s| s == -1)) {
        (true, _) => Direction::Positive,
        (_, true) => Direction::Negative,
        _ => Direction::None,
    }
}
