//! Market moves and the m-move history window.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported history length.
pub const MAX_MEMORY: u8 = 16;

/// One market move: the sign of the collective action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Move {
    Down,
    Up,
}

impl Move {
    pub fn from_bit(bit: u8) -> Result<Self> {
        match bit {
            0 => Ok(Move::Down),
            1 => Ok(Move::Up),
            other => Err(Error::invalid(format!("move must be 0 or 1, got {other}"))),
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            Move::Down => 0,
            Move::Up => 1,
        }
    }

    /// Unit increment: +1 for up, -1 for down.
    pub fn unit(self) -> i64 {
        match self {
            Move::Down => -1,
            Move::Up => 1,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Move::Down => Move::Up,
            Move::Up => Move::Down,
        }
    }

    pub const BOTH: [Move; 2] = [Move::Down, Move::Up];
}

/// The last `m` moves packed into an integer; the newest move is the least
/// significant bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct History {
    m: u8,
    mu: u32,
}

impl History {
    pub fn new(m: u8, mu: u32) -> Result<Self> {
        check_memory(m)?;
        if u64::from(mu) >= 1u64 << m {
            return Err(Error::invalid(format!("history {mu} does not fit in {m} bits")));
        }
        Ok(Self { m, mu })
    }

    /// Encodes moves given oldest first.
    pub fn encode(m: u8, moves: &[Move]) -> Result<Self> {
        check_memory(m)?;
        if moves.len() != usize::from(m) {
            return Err(Error::invalid(format!(
                "history needs exactly {m} moves, got {}",
                moves.len()
            )));
        }
        let mu = moves.iter().fold(0u32, |acc, mv| (acc << 1) | u32::from(mv.bit()));
        Ok(Self { m, mu })
    }

    /// Parses a '0'/'1' string, oldest move leftmost.
    pub fn parse(bits: &str) -> Result<Self> {
        let moves = bits
            .chars()
            .map(|c| match c {
                '0' => Ok(Move::Down),
                '1' => Ok(Move::Up),
                other => Err(Error::invalid(format!("unexpected character {other:?} in history"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let m = u8::try_from(moves.len()).map_err(|_| Error::invalid("history too long"))?;
        Self::encode(m, &moves)
    }

    pub fn memory(self) -> u8 {
        self.m
    }

    pub fn index(self) -> usize {
        self.mu as usize
    }

    /// Number of distinct histories of this length, `2^m`.
    pub fn count(m: u8) -> usize {
        1usize << m
    }

    /// Drops the oldest move and appends `mv` as the newest.
    pub fn successor(self, mv: Move) -> Self {
        let mask = (1u32 << self.m) - 1;
        Self {
            m: self.m,
            mu: ((self.mu << 1) & mask) | u32::from(mv.bit()),
        }
    }

    pub fn newest(self) -> Move {
        if self.mu & 1 == 1 {
            Move::Up
        } else {
            Move::Down
        }
    }

    /// Moves oldest first.
    pub fn moves(self) -> Vec<Move> {
        (0..self.m)
            .rev()
            .map(|j| if (self.mu >> j) & 1 == 1 { Move::Up } else { Move::Down })
            .collect()
    }

    pub fn all(m: u8) -> impl Iterator<Item = History> {
        (0..1u32 << m).map(move |mu| History { m, mu })
    }
}

impl fmt::Display for History {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for mv in self.moves() {
            write!(f, "{}", mv.bit())?;
        }
        Ok(())
    }
}

pub(crate) fn check_memory(m: u8) -> Result<()> {
    if m == 0 || m > MAX_MEMORY {
        return Err(Error::invalid(format!("memory m must be in 1..={MAX_MEMORY}, got {m}")));
    }
    Ok(())
}
