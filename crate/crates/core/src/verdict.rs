use serde::Serialize;

/// Machine-readable outcome of one check.
///
/// `worst_margin` is the smallest signed slack seen; the check passes iff
/// `worst_margin ≥ −tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub check: String,
    pub pass: bool,
    pub worst_margin: f64,
    pub tolerance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Verdict {
    pub fn from_margins(check: impl Into<String>, margins: impl IntoIterator<Item = f64>, tolerance: f64) -> Self {
        let worst = margins.into_iter().fold(f64::INFINITY, |m, v| if v.is_nan() { f64::NAN } else { m.min(v) });
        let worst = if worst.is_infinite() { 0.0 } else { worst };
        Self { check: check.into(), pass: worst >= -tolerance, worst_margin: worst, tolerance, note: None }
    }

    /// Passes iff `value ≤ limit`; the margin is `limit − value`.
    pub fn at_most(check: impl Into<String>, value: f64, limit: f64) -> Self {
        Self::from_margins(check, [limit - value], 0.0)
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}
