//! Bubble onset detection and two-step-ahead prediction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::DecouplingCurves;
use crate::error::{Error, Result};
use crate::game::{Game, GameConfig, GameKind, StrategyChoice};
use crate::history::Move;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BubbleDirection {
    Up,
    Down,
}

impl From<Move> for BubbleDirection {
    fn from(mv: Move) -> Self {
        match mv {
            Move::Up => BubbleDirection::Up,
            Move::Down => BubbleDirection::Down,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Onset {
    pub t: usize,
    pub direction: BubbleDirection,
}

/// Start of the terminal run of identical moves, provided the run has at
/// least two moves.
pub fn detect_t_b(moves: &[Move]) -> Option<Onset> {
    let last = *moves.last()?;
    let run = moves.iter().rev().take_while(|&&m| m == last).count();
    (run >= 2).then(|| Onset {
        t: moves.len() - run,
        direction: last.into(),
    })
}

/// Length of the run of strictly positive first differences ending at `i`.
fn rising_run(curve: &[u32], i: usize) -> usize {
    (1..=i).rev().take_while(|&j| curve[j] > curve[j - 1]).count()
}

/// Whether the alarm condition holds at time `t`: one of the curves has risen
/// strictly over each of its last `m` differences. When both hold the curve
/// whose rise began earlier wins, and the positive curve on a further tie.
pub fn decoup_trigger(curves: &DecouplingCurves, t: usize, m: u8) -> Option<Onset> {
    let m = usize::from(m);
    let i = t.checked_sub(curves.start)?;
    if m == 0 || i < m || i >= curves.len() {
        return None;
    }
    let up = rising_run(&curves.pos, i);
    let down = rising_run(&curves.neg, i);
    let direction = match (up >= m, down >= m) {
        (false, false) => return None,
        (true, false) => BubbleDirection::Up,
        (false, true) => BubbleDirection::Down,
        (true, true) if down > up => BubbleDirection::Down,
        (true, true) => BubbleDirection::Up,
    };
    Some(Onset { t, direction })
}

/// Earliest time at which [`decoup_trigger`] fires.
pub fn detect_t_b_decoup(curves: &DecouplingCurves, m: u8) -> Option<Onset> {
    curves.times().find_map(|t| decoup_trigger(curves, t, m))
}

/// Times before `t_b` at which `m` identical moves end and the next move
/// breaks the run: the alarms a "m in a row" rule would raise in vain. Without
/// a terminal run the whole stream is searched.
pub fn naive_false_alarms(moves: &[Move], m: u8) -> Vec<usize> {
    let m = usize::from(m);
    if m == 0 || moves.len() < m + 1 {
        return Vec::new();
    }
    let horizon = detect_t_b(moves).map_or(moves.len(), |o| o.t);
    (m - 1..moves.len() - 1)
        .filter(|&t| t < horizon)
        .filter(|&t| {
            let window = &moves[t + 1 - m..=t];
            window.iter().all(|&x| x == moves[t]) && moves[t + 1] != moves[t]
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub t: usize,
    pub horizon: usize,
    pub predicted: Move,
    pub confidence: f64,
}

pub const DEFAULT_THRESHOLD: f64 = 0.98;

/// `count / n_mc >= threshold`, evaluated on integers at parts-per-million.
fn meets(count: u32, n_mc: usize, threshold: f64) -> bool {
    let ppm = (threshold * 1e6).round() as u128;
    u128::from(count) * 1_000_000 >= ppm * n_mc as u128
}

/// Predicts the move at `t + 2` when at least `threshold` of the ensemble is
/// decoupled in one direction at `t`.
pub fn predict_two_ahead(curves: &DecouplingCurves, t: usize, threshold: f64) -> Option<Prediction> {
    let (pos, neg) = curves.counts(t)?;
    let n = curves.n_mc;
    let (predicted, count) = if meets(pos, n, threshold) {
        (Move::Up, pos)
    } else if meets(neg, n, threshold) {
        (Move::Down, neg)
    } else {
        return None;
    };
    Some(Prediction {
        t,
        horizon: t + 2,
        predicted,
        confidence: f64::from(count) / n as f64,
    })
}

pub fn predictions(curves: &DecouplingCurves, threshold: f64) -> Vec<Prediction> {
    curves.times().filter_map(|t| predict_two_ahead(curves, t, threshold)).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HitReport {
    pub total: usize,
    pub hits: usize,
    pub hit_rate: Option<f64>,
    pub up_total: usize,
    pub up_hits: usize,
    pub down_total: usize,
    pub down_hits: usize,
    /// Decision times of the missed predictions.
    pub misses: Vec<usize>,
}

pub fn score_predictions(predictions: &[Prediction], moves: &[Move]) -> Result<HitReport> {
    let mut r = HitReport::default();
    for p in predictions {
        let actual = *moves
            .get(p.horizon)
            .ok_or_else(|| Error::invalid(format!("prediction horizon {} is past the stream end", p.horizon)))?;
        let hit = actual == p.predicted;
        r.total += 1;
        r.hits += usize::from(hit);
        match p.predicted {
            Move::Up => {
                r.up_total += 1;
                r.up_hits += usize::from(hit);
            }
            Move::Down => {
                r.down_total += 1;
                r.down_hits += usize::from(hit);
            }
        }
        if !hit {
            r.misses.push(p.t);
        }
    }
    r.hit_rate = (r.total > 0).then(|| r.hits as f64 / r.total as f64);
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    pub kind: GameKind,
    pub ms: Vec<u8>,
    pub runs: usize,
    pub n_agents: usize,
    pub s: usize,
    /// Generated moves per self-play run.
    pub steps: usize,
    pub base_seed: u64,
}

impl ScalingConfig {
    pub fn new(ms: Vec<u8>, runs: usize) -> Self {
        Self {
            kind: GameKind::Dollar,
            ms,
            runs,
            n_agents: 11,
            s: 20,
            steps: 2000,
            base_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub m: u8,
    pub runs: usize,
    pub defined: usize,
    pub mean_t_b: Option<f64>,
    pub median_t_b: Option<f64>,
    pub undefined_fraction: f64,
}

/// Mean and median bubble onset of self-play games for each memory length.
/// Run `r` at memory `m` uses seed `base_seed + r`.
pub fn tb_scaling_experiment(cfg: &ScalingConfig) -> Result<Vec<ScalingRow>> {
    if cfg.runs == 0 {
        return Err(Error::invalid("runs must be at least 1"));
    }
    cfg.ms
        .iter()
        .map(|&m| {
            let onsets = (0..cfg.runs)
                .into_par_iter()
                .map(|r| {
                    let game = Game::new(GameConfig {
                        kind: cfg.kind,
                        n_agents: cfg.n_agents,
                        m,
                        s: cfg.s,
                        seed: cfg.base_seed.wrapping_add(r as u64),
                        choice: StrategyChoice::Best,
                    })?;
                    Ok(onset_of(game, cfg.steps))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(summarize(m, cfg.runs, onsets.into_iter().flatten().collect()))
        })
        .collect()
}

/// `t_b` of one self-play run, counted over the `steps` generated moves (the
/// random seed history is excluded).
pub fn onset_of(mut game: Game, steps: usize) -> Option<usize> {
    let m = usize::from(game.memory());
    let moves = game.run_selfplay(steps + m);
    detect_t_b(&moves[m..]).map(|o| o.t)
}

fn summarize(m: u8, runs: usize, mut onsets: Vec<usize>) -> ScalingRow {
    onsets.sort_unstable();
    let defined = onsets.len();
    let mean_t_b = (defined > 0).then(|| onsets.iter().sum::<usize>() as f64 / defined as f64);
    let median_t_b = (defined > 0).then(|| {
        if defined % 2 == 1 {
            onsets[defined / 2] as f64
        } else {
            (onsets[defined / 2 - 1] + onsets[defined / 2]) as f64 / 2.0
        }
    });
    ScalingRow {
        m,
        runs,
        defined,
        mean_t_b,
        median_t_b,
        undefined_fraction: (runs - defined) as f64 / runs as f64,
    }
}
