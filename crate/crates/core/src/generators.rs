//! Synthetic move streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ensemble::{ExternalStream, StreamSource};
use crate::error::{Error, Result};
use crate::game::{Game, GameConfig};
use crate::history::Move;

/// Records one self-play game: the `m` random seed moves followed by the
/// moves the game generates, `length` in total.
pub fn gen_selfplay_stream(cfg: GameConfig, length: usize) -> Result<ExternalStream> {
    if length < usize::from(cfg.m) {
        return Err(Error::invalid(format!("length {length} is shorter than m={}", cfg.m)));
    }
    let mut game = Game::new(cfg)?;
    let moves = game.run_selfplay(length);
    let mut stream = ExternalStream::new(moves, StreamSource::Selfplay);
    stream.meta.insert("kind".into(), cfg.kind.name().into());
    stream.meta.insert("n".into(), cfg.n_agents.to_string());
    stream.meta.insert("m".into(), cfg.m.to_string());
    stream.meta.insert("s".into(), cfg.s.to_string());
    stream.meta.insert("seed".into(), cfg.seed.to_string());
    Ok(stream)
}

/// Same, but from a game built by the caller (e.g. a hand-picked population).
pub fn selfplay_stream_from(mut game: Game, length: usize) -> ExternalStream {
    ExternalStream::new(game.run_selfplay(length), StreamSource::Selfplay)
}

pub fn gen_iid_stream(length: usize, seed: u64) -> ExternalStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let moves = (0..length)
        .map(|_| if rng.random::<bool>() { Move::Up } else { Move::Down })
        .collect();
    let mut stream = ExternalStream::new(moves, StreamSource::Iid);
    stream.meta.insert("seed".into(), seed.to_string());
    stream
}

/// Population of "return to the mean" traders.
///
/// Each trader draws a personal up-run threshold from `up_run` and a down-run
/// threshold from `down_run` (inclusive ranges). After at least that many
/// consecutive rises it sells; after that many consecutive falls it buys.
/// Otherwise it follows the last move, except that with probability `noise`
/// it bets at random. The move is the majority bet (fair coin on a tie).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnToMean {
    pub up_run: (usize, usize),
    pub down_run: (usize, usize),
    pub n_agents: usize,
    pub length: usize,
    pub seed: u64,
    pub noise: f64,
}

impl ReturnToMean {
    pub fn new(n_agents: usize, length: usize, seed: u64) -> Self {
        Self {
            up_run: (5, 6),
            down_run: (3, 4),
            n_agents,
            length,
            seed,
            noise: 0.2,
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("up_run", self.up_run), ("down_run", self.down_run)] {
            if lo == 0 || lo > hi {
                return Err(Error::invalid(format!("{name} range must satisfy 1 <= lo <= hi, got {lo}..={hi}")));
            }
        }
        if self.n_agents == 0 {
            return Err(Error::invalid("n_agents must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::invalid("noise must be a probability"));
        }
        Ok(())
    }
}

/// One trader's bet given the trailing run of identical moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeanReverter {
    pub up_threshold: usize,
    pub down_threshold: usize,
}

impl MeanReverter {
    /// `Some` when a threshold forces a reversal, `None` when the trader is
    /// free to follow the trend.
    pub fn forced_bet(&self, run: Option<(Move, usize)>) -> Option<Move> {
        match run {
            Some((Move::Up, len)) if len >= self.up_threshold => Some(Move::Down),
            Some((Move::Down, len)) if len >= self.down_threshold => Some(Move::Up),
            _ => None,
        }
    }
}

/// Direction and length of the run of identical moves at the end of `moves`.
pub fn trailing_run(moves: &[Move]) -> Option<(Move, usize)> {
    let last = *moves.last()?;
    Some((last, moves.iter().rev().take_while(|&&m| m == last).count()))
}

pub fn gen_return_to_mean_stream(p: ReturnToMean) -> Result<ExternalStream> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let traders: Vec<MeanReverter> = (0..p.n_agents)
        .map(|_| MeanReverter {
            up_threshold: rng.random_range(p.up_run.0..=p.up_run.1),
            down_threshold: rng.random_range(p.down_run.0..=p.down_run.1),
        })
        .collect();
    let coin = |rng: &mut ChaCha8Rng| if rng.random::<bool>() { Move::Up } else { Move::Down };
    let mut moves = Vec::with_capacity(p.length);
    while moves.len() < p.length {
        let run = trailing_run(&moves);
        let votes: i64 = traders
            .iter()
            .map(|tr| {
                let bet = match (tr.forced_bet(run), run) {
                    (Some(bet), _) => bet,
                    (None, _) if rng.random::<f64>() < p.noise => coin(&mut rng),
                    (None, Some((last, _))) => last,
                    (None, None) => coin(&mut rng),
                };
                bet.unit()
            })
            .sum();
        let mv = match votes.signum() {
            1 => Move::Up,
            -1 => Move::Down,
            _ => coin(&mut rng),
        };
        moves.push(mv);
    }
    let mut stream = ExternalStream::new(moves, StreamSource::ReturnToMean);
    stream.meta.insert("n".into(), p.n_agents.to_string());
    stream.meta.insert("up_run".into(), format!("{}-{}", p.up_run.0, p.up_run.1));
    stream.meta.insert("down_run".into(), format!("{}-{}", p.down_run.0, p.down_run.1));
    stream.meta.insert("seed".into(), p.seed.to_string());
    Ok(stream)
}
