//! Shared confidence-interval result type for the bootstrap and
//! profile-likelihood constructions.

use serde::Serialize;

/// Outcome of one accept/reject evaluation on the candidate grid.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GridOutcome {
    pub m: f64,
    pub accepted: bool,
}

/// Diagnostics accumulated while inverting a family of tests.
#[derive(Debug, Clone, Default, Serialize)]
pub struct CiDiagnostics {
    /// Every point evaluated, in evaluation order.
    pub evaluated: Vec<GridOutcome>,
    /// Bootstrap replicates redrawn for degenerate variance.
    pub degenerate_redraws: usize,
    /// Audit points that contradicted the reported hull.
    pub audit_anomalies: usize,
    /// A rejected point was found strictly inside the reported hull.
    pub non_interval: bool,
    /// Largest relative Monte Carlo standard error of moment coefficients,
    /// when the moment engine fell back to simulation.
    pub mc_moment_rel_se: Option<f64>,
}

/// A confidence set for the population size: the accepted candidate points,
/// their hull, and bookkeeping flags.
#[derive(Debug, Clone, Serialize)]
pub struct CiResult {
    /// Accepted candidate values (capped; see diagnostics for full scan).
    pub accepted_points: Vec<f64>,
    /// Lower hull endpoint; `None` when the set is empty.
    pub interval_lo: Option<f64>,
    /// Upper hull endpoint; `None` when empty or infinite.
    pub interval_hi: Option<f64>,
    /// The largest candidate at the compactness cap was accepted.
    pub infinite_upper: bool,
    /// No candidate was accepted.
    pub empty: bool,
    /// The reported lower endpoint sits at the observed-count floor.
    pub truncated_at_observed: bool,
    pub diagnostics: CiDiagnostics,
}

impl CiResult {
    pub fn empty_set(diagnostics: CiDiagnostics) -> Self {
        CiResult {
            accepted_points: Vec::new(),
            interval_lo: None,
            interval_hi: None,
            infinite_upper: false,
            empty: true,
            truncated_at_observed: false,
            diagnostics,
        }
    }

    /// Membership test against the reported hull.
    pub fn contains(&self, m: f64) -> bool {
        if self.empty {
            return false;
        }
        let lo_ok = self.interval_lo.map_or(false, |lo| m >= lo);
        let hi_ok = self.infinite_upper || self.interval_hi.map_or(false, |hi| m <= hi);
        lo_ok && hi_ok
    }

    /// Hull width; infinite when the upper end is open.
    pub fn length(&self) -> f64 {
        if self.empty {
            return 0.0;
        }
        if self.infinite_upper {
            return f64::INFINITY;
        }
        match (self.interval_lo, self.interval_hi) {
            (Some(lo), Some(hi)) => (hi - lo).max(0.0),
            _ => 0.0,
        }
    }
}
