//! Live $-Game sessions for human participants with real-time decoupling
//! analytics. See [`session::Session`] for the protocol and [`server`] for
//! the HTTP interface.

pub mod config;
pub mod export;
pub mod server;
pub mod session;

pub use config::{AbsentPolicy, FieldError, SessionConfig};
pub use session::{AnalyticsFrame, LabError, Phase, RoundResult, Session};
