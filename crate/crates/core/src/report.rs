//! Pass/fail reports for numerical bound checks.

use serde::Serialize;

/// Outcome of one bound check over a parameter grid. `margin` is the
/// minimum slack observed; a negative margin means the bound failed at
/// `offending`, which is then always present.
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub check: String,
    pub grid: String,
    pub margin: f64,
    pub passed: bool,
    /// named coordinates of the worst grid point
    pub offending: Option<Vec<(String, f64)>>,
    /// named constants produced by the check (fitted c0, k1, ...)
    pub fitted: Vec<(String, f64)>,
    pub notes: Vec<String>,
}

impl BoundReport {
    pub fn new(check: &str, grid: String, margin: f64, worst: Vec<(String, f64)>) -> Self {
        assert!(margin.is_finite(), "bound margin must be finite");
        let passed = margin >= 0.0;
        BoundReport {
            check: check.to_string(),
            grid,
            margin,
            passed,
            offending: if passed { None } else { Some(worst) },
            fitted: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn with_fit(mut self, name: &str, value: f64) -> Self {
        self.fitted.push((name.to_string(), value));
        self
    }

    pub fn with_note(mut self, note: String) -> Self {
        self.notes.push(note);
        self
    }
}
