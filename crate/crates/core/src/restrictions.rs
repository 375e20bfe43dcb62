//! Dependence restrictions and the identification intervals they induce.
//!
//! Two restriction families are supported: a symmetric bound `[-gamma, gamma]`
//! on the highest-order interaction coefficient of the log-linear model, and
//! box bounds `[eta, xi]` on pairwise capture odds ratios. Either one maps a
//! vector of cell means to an interval of population sizes consistent with it.

use crate::error::{Error, Result};
use crate::table::{pair_cells, parity_sets, ContingencyTable};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// Default compactness cap on the population size.
pub const DEFAULT_DELTA: f64 = 1e8;

/// Expected counts of the observed cells. Entries are nonnegative and finite;
/// operations that require strict positivity check it themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanVector {
    values: Vec<f64>,
}

impl MeanVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("mean vector cannot be empty".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput(
                "mean vector entries must be finite and nonnegative".into(),
            ));
        }
        Ok(MeanVector { values })
    }

    pub fn from_table(table: &ContingencyTable) -> Self {
        MeanVector {
            values: table.counts().iter().map(|&c| c as f64).collect(),
        }
    }

    /// Mean of observed subset `i` in `1..=c`.
    pub fn get(&self, i: usize) -> f64 {
        self.values[i - 1]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Sample count `k` implied by the length `2^k - 1`.
    pub fn infer_k(&self) -> Result<usize> {
        let c = self.values.len();
        let k = (c + 1).trailing_zeros() as usize;
        if (1usize << k) - 1 != c || k < 2 {
            return Err(Error::InvalidInput(format!(
                "mean vector length {c} is not 2^k - 1 for any k >= 2"
            )));
        }
        Ok(k)
    }

    /// True when all entries are strictly positive.
    pub fn strictly_positive(&self) -> bool {
        self.values.iter().all(|&v| v > 0.0)
    }
}

/// One odds-ratio constraint `eta <= OR_rt <= xi` for samples `r < t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairwiseConstraint {
    pub r: usize,
    pub t: usize,
    pub eta: f64,
    pub xi: f64,
}

/// A dependence restriction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Restriction {
    /// `lambda_c` in `[-gamma, gamma]` for the all-samples interaction.
    HighestOrder { gamma: f64 },
    /// Odds-ratio bounds on selected sample pairs.
    Pairwise { constraints: Vec<PairwiseConstraint> },
}

/// A restriction plus the compactness cap `delta` on the population size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestrictionSpec {
    #[serde(flatten)]
    pub restriction: Restriction,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

impl RestrictionSpec {
    pub fn new(restriction: Restriction, delta: f64) -> Result<Self> {
        let spec = RestrictionSpec { restriction, delta };
        spec.validate()?;
        Ok(spec)
    }

    pub fn highest_order(gamma: f64) -> Result<Self> {
        Self::new(Restriction::HighestOrder { gamma }, DEFAULT_DELTA)
    }

    pub fn pairwise(constraints: Vec<PairwiseConstraint>) -> Result<Self> {
        Self::new(Restriction::Pairwise { constraints }, DEFAULT_DELTA)
    }

    /// Same odds-ratio bound on every pair of `k` samples; `agnostic` uses
    /// `[1/xi, xi]`, otherwise the positive-dependence form `[1, xi]`.
    pub fn all_pairs(k: usize, eta: f64, xi: f64) -> Result<Self> {
        let mut constraints = Vec::new();
        for r in 1..=k {
            for t in (r + 1)..=k {
                constraints.push(PairwiseConstraint { r, t, eta, xi });
            }
        }
        Self::pairwise(constraints)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(Error::InvalidInput(format!(
                "delta must be finite and positive, got {}",
                self.delta
            )));
        }
        match &self.restriction {
            Restriction::HighestOrder { gamma } => {
                if !(gamma.is_finite() && *gamma >= 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "gamma must be finite and nonnegative, got {gamma}"
                    )));
                }
            }
            Restriction::Pairwise { constraints } => {
                if constraints.is_empty() {
                    return Err(Error::InvalidInput(
                        "pairwise restriction needs at least one constraint".into(),
                    ));
                }
                let mut seen = BTreeSet::new();
                for c in constraints {
                    if c.r >= c.t || c.r < 1 {
                        return Err(Error::InvalidInput(format!(
                            "constraint pair ({}, {}) must satisfy 1 <= r < t",
                            c.r, c.t
                        )));
                    }
                    if !(c.eta >= 0.0 && c.eta < c.xi && c.xi.is_finite()) {
                        return Err(Error::InvalidInput(format!(
                            "constraint bounds need 0 <= eta < xi, got [{}, {}]",
                            c.eta, c.xi
                        )));
                    }
                    if !seen.insert((c.r, c.t)) {
                        return Err(Error::InvalidInput(format!(
                            "duplicate constraint for pair ({}, {})",
                            c.r, c.t
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Check sample indices against a concrete `k`.
    pub fn validate_for(&self, k: usize) -> Result<()> {
        self.validate()?;
        if let Restriction::Pairwise { constraints } = &self.restriction {
            for c in constraints {
                if c.t > k {
                    return Err(Error::InvalidInput(format!(
                        "constraint pair ({}, {}) out of range for k={k}",
                        c.r, c.t
                    )));
                }
            }
            if constraints.len() > k * (k - 1) / 2 {
                return Err(Error::InvalidInput("more constraints than sample pairs".into()));
            }
        }
        Ok(())
    }

    /// Parse `{"type": "highest_order", "gamma": 0.1}` or
    /// `{"type": "pairwise", "constraints": [...]}` (optional `"delta"`).
    pub fn from_json(source: &str) -> Result<Self> {
        let spec: RestrictionSpec = serde_json::from_str(source)
            .map_err(|e| Error::Parse(format!("restriction JSON: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Identification interval at `means`, clipped to `[0, delta]`.
    pub fn ident_interval(&self, means: &MeanVector, k: usize) -> Result<IdentInterval> {
        let raw = match &self.restriction {
            Restriction::HighestOrder { gamma } => ident_interval_highest(means, *gamma, k)?,
            Restriction::Pairwise { constraints } => {
                ident_interval_pairwise(means, constraints, k)?
            }
        };
        Ok(IdentInterval {
            lo: raw.lo.min(self.delta),
            hi: raw.hi.min(self.delta),
        })
    }
}

/// Interval of population sizes. `lo > hi` signals an empty (infeasible) set,
/// which is a reportable outcome for pairwise restrictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentInterval {
    pub lo: f64,
    pub hi: f64,
}

impl IdentInterval {
    pub fn is_empty(&self) -> bool {
        self.lo > self.hi
    }

    pub fn contains(&self, m: f64) -> bool {
        !self.is_empty() && self.lo <= m && m <= self.hi
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo).max(0.0)
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Product ratio of odd-parity cell means over even-parity cell means.
pub fn parity_product_ratio(means: &MeanVector, k: usize) -> Result<f64> {
    let parity = parity_sets(k)?;
    if means.len() != (1 << k) - 1 {
        return Err(Error::InvalidInput(format!(
            "mean vector length {} does not match k={k}",
            means.len()
        )));
    }
    let denom: f64 = parity.even.iter().map(|&j| means.get(j)).product();
    if denom <= 0.0 {
        return Err(Error::Infeasible(
            "even-parity cell mean of zero makes the interaction ratio undefined".into(),
        ));
    }
    let numer: f64 = parity.odd.iter().map(|&i| means.get(i)).product();
    Ok(numer / denom)
}

/// Identification interval under `lambda_c` in `[-gamma, gamma]`:
/// `sum(m) + R(m) e^{-gamma} <= M <= sum(m) + R(m) e^{gamma}` with `R` the
/// parity product ratio.
pub fn ident_interval_highest(means: &MeanVector, gamma: f64, k: usize) -> Result<IdentInterval> {
    if gamma < 0.0 {
        return Err(Error::InvalidInput("gamma must be nonnegative".into()));
    }
    let ratio = parity_product_ratio(means, k)?;
    let total = means.total();
    Ok(IdentInterval {
        lo: total + ratio * (-gamma).exp(),
        hi: total + ratio * gamma.exp(),
    })
}

/// Mean-level pairwise aggregates `(m11, m10, m01)` for a sample pair.
pub fn pair_means(means: &MeanVector, k: usize, r: usize, t: usize) -> Result<(f64, f64, f64)> {
    let cells = pair_cells(k, r, t)?;
    let sum = |ids: &[usize]| ids.iter().map(|&i| means.get(i)).sum::<f64>();
    Ok((sum(&cells.both), sum(&cells.first_only), sum(&cells.second_only)))
}

/// Identification interval under pairwise odds-ratio bounds:
/// intersection over constraints of
/// `[eta_j m10 m01 / m11 + m10 + m01 + m11, xi_j m10 m01 / m11 + ...]`.
/// Returns an empty interval (`lo > hi`) when the constraints conflict.
pub fn ident_interval_pairwise(
    means: &MeanVector,
    constraints: &[PairwiseConstraint],
    k: usize,
) -> Result<IdentInterval> {
    if constraints.is_empty() {
        return Err(Error::InvalidInput("no pairwise constraints".into()));
    }
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for c in constraints {
        let (m11, m10, m01) = pair_means(means, k, c.r, c.t)?;
        if m11 <= 0.0 {
            return Err(Error::Infeasible(format!(
                "pair ({}, {}) has zero overlap mean; odds-ratio bound undefined",
                c.r, c.t
            )));
        }
        let lp = m10 * m01 / m11;
        let base = m11 + m10 + m01;
        lo = lo.max(c.eta * lp + base);
        hi = hi.min(c.xi * lp + base);
    }
    Ok(IdentInterval { lo, hi })
}

/// Feasibility verdict with per-constraint diagnostics.
#[derive(Debug, Clone)]
pub struct Feasibility {
    pub feasible: bool,
    pub violations: Vec<String>,
}

/// Does `(M, m)` lie in the parameter set of `spec` (including `M <= delta`
/// and the nonnegative unobserved cell `M >= sum(m)`)?
pub fn check_feasibility(
    means: &MeanVector,
    m: f64,
    spec: &RestrictionSpec,
    k: usize,
) -> Result<Feasibility> {
    let mut violations = Vec::new();
    if m > spec.delta {
        violations.push(format!("M={m} exceeds delta={}", spec.delta));
    }
    if m < means.total() {
        violations.push(format!(
            "M={m} is below the sum of observed-cell means {}",
            means.total()
        ));
    } else {
        match &spec.restriction {
            Restriction::HighestOrder { gamma } => {
                let iv = ident_interval_highest(means, *gamma, k)?;
                if m < iv.lo {
                    violations.push(format!("M={m} below highest-order bound {}", iv.lo));
                }
                if m > iv.hi {
                    violations.push(format!("M={m} above highest-order bound {}", iv.hi));
                }
            }
            Restriction::Pairwise { constraints } => {
                for c in constraints {
                    let (m11, m10, m01) = pair_means(means, k, c.r, c.t)?;
                    if m11 <= 0.0 {
                        violations.push(format!(
                            "pair ({}, {}) has zero overlap mean",
                            c.r, c.t
                        ));
                        continue;
                    }
                    let or = m11 * (m - m11 - m10 - m01) / (m10 * m01);
                    if or < c.eta || or > c.xi {
                        violations.push(format!(
                            "pair ({}, {}): implied odds ratio {or:.6} outside [{}, {}]",
                            c.r, c.t, c.eta, c.xi
                        ));
                    }
                }
            }
        }
    }
    Ok(Feasibility {
        feasible: violations.is_empty(),
        violations,
    })
}

/// Observed lower bound for one pair's odds ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrLowerBound {
    pub r: usize,
    pub t: usize,
    /// `n11 n00 / (n10 n01)` over observed cells; `None` when a denominator
    /// count is zero.
    pub bound: Option<f64>,
}

/// Data-driven lower bounds on every pairwise odds ratio: the unobserved cell
/// can only increase the ratio, so `n11 n00 / (n10 n01)` bounds it from below.
pub fn or_lower_bounds(table: &ContingencyTable) -> Result<Vec<OrLowerBound>> {
    let k = table.k();
    let mut out = Vec::new();
    for r in 1..=k {
        for t in (r + 1)..=k {
            let m = table.pairwise_marginal(r, t)?;
            let bound = if m.n10 == 0 || m.n01 == 0 {
                None
            } else {
                Some((m.n11 as f64 * m.n00 as f64) / (m.n10 as f64 * m.n01 as f64))
            };
            out.push(OrLowerBound { r, t, bound });
        }
    }
    Ok(out)
}
