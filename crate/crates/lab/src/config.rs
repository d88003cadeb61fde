use serde::{Deserialize, Serialize};

use bubblescope_core::bubble::DEFAULT_THRESHOLD;
use bubblescope_core::EnsembleConfig;

/// What to do for a subject who has not bet when a round settles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AbsentPolicy {
    /// Uniform random action.
    #[default]
    Random,
    /// The subject's previous action, or a random one in the first round.
    RepeatLast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub n_subjects: usize,
    pub m: u8,
    pub total_rounds: usize,
    pub round_deadline_secs: u64,
    /// Highest payout a subject can receive.
    pub payout_cap: f64,
    #[serde(default)]
    pub absent_policy: AbsentPolicy,
    /// Ensemble driving the live analytics; defaults to one sized like the
    /// session.
    #[serde(default)]
    pub analytics: Option<EnsembleConfig>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Session RNG seed. Drawn at creation when absent.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Token for admin commands. Generated at creation when absent.
    #[serde(default)]
    pub admin_token: Option<String>,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl SessionConfig {
    pub fn new(n_subjects: usize, m: u8, total_rounds: usize) -> Self {
        Self {
            n_subjects,
            m,
            total_rounds,
            round_deadline_secs: 30,
            payout_cap: 10.0,
            absent_policy: AbsentPolicy::Random,
            analytics: None,
            threshold: DEFAULT_THRESHOLD,
            seed: None,
            admin_token: None,
        }
    }

    pub fn analytics_config(&self) -> EnsembleConfig {
        self.analytics.unwrap_or_else(|| EnsembleConfig::new(self.n_subjects, self.m))
    }

    pub fn validate(&self) -> Result<(), Vec<FieldError>> {
        let mut errs = Vec::new();
        let mut bad = |field: &str, message: String| {
            errs.push(FieldError {
                field: field.into(),
                message,
            })
        };
        if self.n_subjects < 2 {
            bad("n_subjects", format!("must be at least 2, got {}", self.n_subjects));
        }
        if !(1..=16).contains(&self.m) {
            bad("m", format!("must lie in 1..=16, got {}", self.m));
        }
        if self.total_rounds == 0 {
            bad("total_rounds", "must be at least 1".into());
        }
        if self.round_deadline_secs == 0 {
            bad("round_deadline_secs", "must be at least 1".into());
        }
        if !self.payout_cap.is_finite() || self.payout_cap < 0.0 {
            bad("payout_cap", format!("must be a finite non-negative number, got {}", self.payout_cap));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            bad("threshold", format!("must lie in [0, 1], got {}", self.threshold));
        }
        if self.admin_token.as_deref().is_some_and(str::is_empty) {
            bad("admin_token", "must not be empty".into());
        }
        if let Err(e) = self.analytics_config().validate() {
            bad("analytics", e.to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_sized_session_is_valid() {
        assert!(SessionConfig::new(11, 3, 50).validate().is_ok());
        assert!(SessionConfig::new(11, 5, 50).validate().is_ok());
    }

    #[test]
    fn errors_name_fields() {
        let mut cfg = SessionConfig::new(1, 0, 0);
        cfg.payout_cap = -1.0;
        let fields: Vec<String> = cfg.validate().unwrap_err().into_iter().map(|e| e.field).collect();
        for f in ["n_subjects", "m", "total_rounds", "payout_cap"] {
            assert!(fields.iter().any(|x| x == f), "{f} missing from {fields:?}");
        }
    }

    #[test]
    fn analytics_defaults_follow_session() {
        let a = SessionConfig::new(7, 3, 5).analytics_config();
        assert_eq!((a.n_agents, a.m, a.n_mc), (7, 3, EnsembleConfig::DEFAULT_N_MC));
    }

    #[test]
    fn json_defaults() {
        let cfg: SessionConfig = serde_json::from_str(
            r#"{"n_subjects":11,"m":3,"total_rounds":40,"round_deadline_secs":20,"payout_cap":5.0}"#,
        )
        .unwrap();
        assert_eq!(cfg.absent_policy, AbsentPolicy::Random);
        assert_eq!(cfg.threshold, DEFAULT_THRESHOLD);
        assert!(cfg.seed.is_none());
    }
}
