//! On-disk formats: stream files, curve and scaling CSVs, the analysis report
//! and the run manifest.
//!
//! A stream file is UTF-8 text. Lines starting with `#` are headers; a header
//! of the form `# key: value` becomes stream metadata. Every other character
//! must be `0`, `1` or whitespace.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bubble::{BubbleDirection, HitReport, Onset, Prediction, ScalingRow};
use crate::ensemble::{DecouplingCurves, ExternalStream, StreamSource};
use crate::error::{Error, Result};
use crate::history::Move;

pub const TOOL_NAME: &str = "bubblescope";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const REPORT_SCHEMA: &str = "bubblescope.report/1";
pub const MANIFEST_SCHEMA: &str = "bubblescope.manifest/1";

pub fn parse_stream(text: &str) -> Result<ExternalStream> {
    let mut moves = Vec::new();
    let mut meta = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let trimmed = line.trim_start();
        if let Some(header) = trimmed.strip_prefix('#') {
            if let Some((k, v)) = header.split_once(':') {
                let k = k.trim();
                if !k.is_empty() {
                    meta.insert(k.to_string(), v.trim().to_string());
                }
            }
            continue;
        }
        for (col, c) in line.chars().enumerate() {
            match c {
                '0' => moves.push(Move::Down),
                '1' => moves.push(Move::Up),
                c if c.is_whitespace() => {}
                c => {
                    return Err(Error::Format {
                        what: "stream",
                        detail: format!("line {}, column {}: unexpected character {c:?}", lineno + 1, col + 1),
                    })
                }
            }
        }
    }
    let source = meta.get("source").map_or(StreamSource::Unknown, |s| StreamSource::parse(s));
    meta.remove("source");
    Ok(ExternalStream { moves, source, meta })
}

/// Header lines (`source` first, then metadata in key order) followed by the
/// moves, 64 per line.
pub fn render_stream(stream: &ExternalStream) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# source: {}", stream.source.name());
    for (k, v) in &stream.meta {
        let _ = writeln!(out, "# {k}: {v}");
    }
    for chunk in stream.moves.chunks(64) {
        out.extend(chunk.iter().map(|m| if m.bit() == 1 { '1' } else { '0' }));
        out.push('\n');
    }
    out
}

pub fn read_stream(path: &Path) -> Result<ExternalStream> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_stream(&text)
}

pub fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of the move sequence alone, so that header edits do not change it.
pub fn stream_digest(stream: &ExternalStream) -> String {
    let bits: Vec<u8> = stream.moves.iter().map(|m| b'0' + m.bit()).collect();
    sha256_hex(&bits)
}

pub fn curves_csv(curves: &DecouplingCurves) -> String {
    let mut out = String::from("t,pct_pos,pct_neg\n");
    for p in curves.points() {
        let _ = writeln!(out, "{},{:.6},{:.6}", p.t, p.pct_pos, p.pct_neg);
    }
    out
}

pub fn scaling_csv(rows: &[ScalingRow]) -> String {
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
    let mut out = String::from("m,runs,defined,mean_t_b,median_t_b,undefined_fraction\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{:.6}",
            r.m,
            r.runs,
            r.defined,
            opt(r.mean_t_b),
            opt(r.median_t_b),
            r.undefined_fraction
        );
    }
    out
}

/// Provenance of one output: the parameters, the input digest and the tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, config: &impl Serialize) -> Result<Self> {
        let config = serde_json::to_value(config).map_err(|e| Error::Format {
            what: "manifest",
            detail: e.to_string(),
        })?;
        Ok(Self {
            schema: MANIFEST_SCHEMA.into(),
            tool: TOOL_NAME.into(),
            version: TOOL_VERSION.into(),
            command: command.into(),
            config,
            input_sha256: None,
            outputs: BTreeMap::new(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub t_b: Option<usize>,
    pub t_b_decoup: Option<usize>,
    /// Direction of the terminal run, if any.
    pub direction: Option<BubbleDirection>,
    pub decoup_direction: Option<BubbleDirection>,
    pub false_alarms: Vec<usize>,
    pub predictions: Vec<Prediction>,
    pub hit_rate: HitReport,
    pub manifest: RunManifest,
}

impl Report {
    pub fn new(
        onset: Option<Onset>,
        decoup: Option<Onset>,
        false_alarms: Vec<usize>,
        predictions: Vec<Prediction>,
        hit_rate: HitReport,
        manifest: RunManifest,
    ) -> Self {
        Self {
            schema: REPORT_SCHEMA.into(),
            t_b: onset.map(|o| o.t),
            t_b_decoup: decoup.map(|o| o.t),
            direction: onset.map(|o| o.direction),
            decoup_direction: decoup.map(|o| o.direction),
            false_alarms,
            predictions,
            hit_rate,
            manifest,
        }
    }
}

pub fn to_json_pretty(value: &impl Serialize) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| Error::Format {
            what: "json",
            detail: e.to_string(),
        })
}
