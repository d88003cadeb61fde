use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use bubblescope_core::format::{curves_csv, render_stream};
use bubblescope_core::{ExternalStream, StreamSource};

use crate::session::{Session, SCHEMA_VERSION};

/// Everything needed to audit or re-analyze a session offline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportBundle {
    pub v: u32,
    pub session_id: String,
    /// Stream file of the realized moves, seed moves included.
    pub true_stream: String,
    /// Stream file of the moves displayed to subjects.
    pub shown_stream: String,
    /// `round,subject,action,imputed,timestamp`.
    pub actions_csv: String,
    /// Live analytics curves in the offline CSV layout.
    pub analytics_csv: String,
    /// The session log, one JSON object per line.
    pub log_jsonl: String,
}

fn stream_file(session: &Session, moves: &[bubblescope_core::Move], which: &str) -> String {
    let mut s = ExternalStream::new(moves.to_vec(), StreamSource::HumanSession);
    s.meta.insert("session".into(), session.id().to_string());
    s.meta.insert("stream".into(), which.into());
    s.meta.insert("n".into(), session.config().n_subjects.to_string());
    s.meta.insert("m".into(), session.config().m.to_string());
    render_stream(&s)
}

pub fn actions_csv(session: &Session) -> String {
    let mut out = String::from("round,subject,action,imputed,timestamp\n");
    for r in session.results() {
        for a in &r.actions {
            let _ = writeln!(out, "{},{},{},{},{}", r.round, a.subject, a.action, a.imputed, a.at_ms);
        }
    }
    out
}

pub fn log_jsonl(session: &Session) -> String {
    let mut out = String::new();
    for e in session.log() {
        out.push_str(&serde_json::to_string(e).expect("log entries serialize"));
        out.push('\n');
    }
    out
}

pub fn parse_log_jsonl(text: &str) -> serde_json::Result<Vec<crate::session::LogEntry>> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}

pub fn export(session: &Session) -> ExportBundle {
    ExportBundle {
        v: SCHEMA_VERSION,
        session_id: session.id().to_string(),
        true_stream: stream_file(session, session.true_moves(), "true"),
        shown_stream: stream_file(session, session.shown_moves(), "shown"),
        actions_csv: actions_csv(session),
        analytics_csv: curves_csv(session.tracker().curves()),
        log_jsonl: log_jsonl(session),
    }
}
