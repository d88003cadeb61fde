//! Lookup-table strategies: one buy/sell recommendation per history.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::history::{check_memory, History};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Sell,
    Buy,
}

impl Action {
    pub fn from_sign(sign: i64) -> Result<Self> {
        match sign {
            1 => Ok(Action::Buy),
            -1 => Ok(Action::Sell),
            other => Err(Error::invalid(format!("action must be +1 or -1, got {other}"))),
        }
    }

    pub fn sign(self) -> i64 {
        match self {
            Action::Buy => 1,
            Action::Sell => -1,
        }
    }
}

/// A table of `2^m` actions indexed by history, packed one bit per entry
/// (set = buy).
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Strategy {
    m: u8,
    words: Vec<u64>,
}

fn word_count(m: u8) -> usize {
    History::count(m).div_ceil(64)
}

impl Strategy {
    /// Builds a table from actions listed in history order (index 0 = all down).
    pub fn from_actions(m: u8, actions: &[Action]) -> Result<Self> {
        check_memory(m)?;
        if actions.len() != History::count(m) {
            return Err(Error::invalid(format!(
                "a strategy with m={m} needs {} actions, got {}",
                History::count(m),
                actions.len()
            )));
        }
        let mut words = vec![0u64; word_count(m)];
        for (i, a) in actions.iter().enumerate() {
            if *a == Action::Buy {
                words[i / 64] |= 1 << (i % 64);
            }
        }
        Ok(Self { m, words })
    }

    pub fn from_signs(m: u8, signs: &[i64]) -> Result<Self> {
        let actions = signs.iter().map(|&s| Action::from_sign(s)).collect::<Result<Vec<_>>>()?;
        Self::from_actions(m, &actions)
    }

    pub fn constant(m: u8, action: Action) -> Result<Self> {
        Self::from_actions(m, &vec![action; History::count(m)])
    }

    /// Table number `code` in the enumeration of all `2^(2^m)` tables
    /// (bit `mu` of `code` is the action at history `mu`). Only for `m <= 6`.
    pub fn from_code(m: u8, code: u64) -> Result<Self> {
        check_memory(m)?;
        if m > 6 {
            return Err(Error::invalid("table codes only cover m <= 6"));
        }
        let n = History::count(m);
        if n < 64 && code >> n != 0 {
            return Err(Error::invalid(format!("code {code} out of range for m={m}")));
        }
        Ok(Self { m, words: vec![code] })
    }

    /// Draws every entry as an independent fair coin, i.e. a uniform draw
    /// from all `2^(2^m)` tables.
    pub fn random<R: Rng + ?Sized>(m: u8, rng: &mut R) -> Self {
        let n = History::count(m);
        let mut words: Vec<u64> = (0..word_count(m)).map(|_| rng.random()).collect();
        if n < 64 {
            words[0] &= (1u64 << n) - 1;
        }
        Self { m, words }
    }

    pub fn memory(&self) -> u8 {
        self.m
    }

    pub fn action(&self, h: History) -> Action {
        debug_assert_eq!(h.memory(), self.m);
        let i = h.index();
        if (self.words[i / 64] >> (i % 64)) & 1 == 1 {
            Action::Buy
        } else {
            Action::Sell
        }
    }

    pub fn sign(&self, h: History) -> i64 {
        self.action(h).sign()
    }

    pub fn is_constant(&self) -> Option<Action> {
        let first = self.action(History::new(self.m, 0).unwrap());
        History::all(self.m).all(|h| self.action(h) == first).then_some(first)
    }

    pub fn actions(&self) -> Vec<Action> {
        History::all(self.m).map(|h| self.action(h)).collect()
    }
}

impl fmt::Debug for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Strategy(m={}, ", self.m)?;
        for a in self.actions() {
            f.write_str(if a == Action::Buy { "+" } else { "-" })?;
        }
        f.write_str(")")
    }
}

/// Iterates every table for a given `m` (`m <= 5`, so at most 2^32 tables).
pub fn all_strategies(m: u8) -> impl Iterator<Item = Strategy> {
    assert!((1..=5).contains(&m), "enumeration limited to m <= 5");
    let total = 1u64 << History::count(m);
    (0..total).map(move |code| Strategy::from_code(m, code).unwrap())
}
