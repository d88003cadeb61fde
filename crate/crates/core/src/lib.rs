//! Minority Game / $-Game agent populations, decoupling analysis on external
//! price streams, and bubble-onset detection.

pub mod bubble;
pub mod decoupling;
pub mod ensemble;
pub mod error;
pub mod format;
pub mod game;
pub mod generators;
pub mod history;
pub mod strategy;

pub use bubble::{BubbleDirection, HitReport, Onset, Prediction};
pub use decoupling::{DecoupledVerdict, DecouplingRule, Direction, GameDecoupling, IncrementSource, Lookahead, TieRule};
pub use ensemble::{DecouplingCurves, EnsembleConfig, EnsembleTracker, ExternalStream, Scoring, StreamSource};
pub use error::{Error, Result};
pub use game::{Agent, Attendance, Game, GameConfig, GameKind, StrategyChoice};
pub use history::{History, Move};
pub use strategy::{Action, Strategy};
