//! Test-inversion bootstrap confidence intervals.
//!
//! For each candidate population size `M`, a two-step parametric bootstrap
//! tests the moment inequalities `E[g(N, M)] <= 0`. Step 1 builds a
//! simultaneous upper confidence band for the moment means and accepts
//! outright when the whole band is nonpositive; otherwise the band's
//! truncated upper limits recenter the bootstrap law whose quantile is the
//! critical value for the studentized max statistic. Inverting the test over
//! a grid of candidate sizes yields the confidence set.
//!
//! The same bootstrap tables are reused across all grid points: the draws do
//! not depend on `M`, and per-replicate moment coefficients make every grid
//! evaluation a constant-time polynomial in `M`.

use crate::ci::{CiDiagnostics, CiResult, GridOutcome};
use crate::error::{Error, Result};
use crate::moments::{MomentCoeffs, MomentSpec};
use crate::restrictions::{MeanVector, RestrictionSpec};
use crate::rng::{poisson_cells, substream, TAG_AUDIT, TAG_BOOT, TAG_MC};
use crate::table::ContingencyTable;
use rand::Rng;
use rayon::prelude::*;
use std::collections::BTreeSet;

/// Sample counts above which exact product-Poisson moments give way to
/// Monte Carlo coefficient estimation.
pub const EXACT_MOMENT_MAX_K: usize = 5;

/// Grid search strategy for inverting the per-`M` tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridStrategy {
    /// Every integer from the floor to the cap. Only sensible for small caps.
    Exhaustive,
    /// Geometric coarse scan, boundary bisection to unit resolution, and
    /// randomized audit points inside and outside the hull.
    Adaptive,
}

/// Configuration of the bootstrap test and its inversion.
#[derive(Debug, Clone)]
pub struct TestConfig {
    /// Test level; the confidence set has nominal coverage `1 - alpha`.
    pub alpha: f64,
    /// First-step band level; defaults to `alpha / 10`.
    pub beta: Option<f64>,
    /// Bootstrap resamples.
    pub bootstrap: usize,
    /// Number of iid tables the averaged counts came from.
    pub n_tables: usize,
    pub seed: u64,
    pub grid: GridStrategy,
    pub truncate_at_observed: bool,
    /// Monte Carlo draws per coefficient set when `k` exceeds
    /// [`EXACT_MOMENT_MAX_K`].
    pub mc_draws: usize,
    /// Cap on the fraction of bootstrap replicates that may be redrawn for
    /// degenerate variance.
    pub max_redraw_fraction: f64,
}

impl Default for TestConfig {
    fn default() -> Self {
        TestConfig {
            alpha: 0.05,
            beta: None,
            bootstrap: 1000,
            n_tables: 1,
            seed: 0,
            grid: GridStrategy::Adaptive,
            truncate_at_observed: false,
            mc_draws: 100_000,
            max_redraw_fraction: 0.1,
        }
    }
}

impl TestConfig {
    pub fn beta(&self) -> f64 {
        self.beta.unwrap_or(self.alpha / 10.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.alpha && self.alpha <= 1.0) {
            return Err(Error::InvalidInput(format!("alpha must be in (0,1], got {}", self.alpha)));
        }
        let beta = self.beta();
        if !(0.0 < beta && beta < self.alpha) {
            return Err(Error::InvalidInput(format!(
                "beta must satisfy 0 < beta < alpha, got beta={beta} alpha={}",
                self.alpha
            )));
        }
        if self.bootstrap < 100 {
            return Err(Error::InvalidInput(format!(
                "need at least 100 bootstrap resamples, got {}",
                self.bootstrap
            )));
        }
        if self.n_tables < 1 {
            return Err(Error::InvalidInput("n_tables must be at least 1".into()));
        }
        Ok(())
    }
}

/// One accept/reject decision with its ingredients.
#[derive(Debug, Clone)]
pub struct TestOutcome {
    pub m: f64,
    pub t_n: f64,
    pub tau_hat: f64,
    /// The first-step confidence band was entirely nonpositive.
    pub step1_all_negative: bool,
    pub rejected: bool,
    pub zeta_star: Vec<f64>,
}

/// Componentwise average of the observed tables: the parameters of the
/// plug-in product-Poisson law the bootstrap resamples from.
pub fn plugin_distribution(tables: &[ContingencyTable]) -> Result<MeanVector> {
    let first = tables
        .first()
        .ok_or_else(|| Error::InvalidInput("plugin distribution needs at least one table".into()))?;
    let k = first.k();
    if tables.iter().any(|t| t.k() != k) {
        return Err(Error::InvalidInput("all tables must share the same k".into()));
    }
    let c = first.cell_count();
    let mut sums = vec![0.0f64; c];
    for t in tables {
        for (s, &v) in sums.iter_mut().zip(t.counts()) {
            *s += v as f64;
        }
    }
    let n = tables.len() as f64;
    MeanVector::new(sums.into_iter().map(|s| s / n).collect())
}

/// Right-continuous empirical quantile: index `ceil(q B)` of the sorted
/// sample (1-based), clamped into range.
fn quantile_ceil(sorted: &[f64], q: f64) -> f64 {
    let b = sorted.len();
    let idx = ((q * b as f64).ceil() as usize).clamp(1, b);
    sorted[idx - 1]
}

const SIGMA_FLOOR: f64 = 1e-12;

/// The bootstrap engine: plug-in coefficients plus per-replicate coefficient
/// tables, reusable across every candidate `M`.
pub struct TibEngine {
    means: MeanVector,
    spec: RestrictionSpec,
    cfg: TestConfig,
    original: MomentCoeffs,
    replicates: Vec<MomentCoeffs>,
    rho: usize,
    degenerate_redraws: usize,
    mc_moment_rel_se: Option<f64>,
    n_obs: f64,
}

impl TibEngine {
    /// Build from observed tables (averaged into the plug-in law).
    pub fn new(tables: &[ContingencyTable], spec: &RestrictionSpec, cfg: &TestConfig) -> Result<Self> {
        cfg.validate()?;
        if tables.len() != cfg.n_tables {
            return Err(Error::InvalidInput(format!(
                "config declares n_tables={} but {} tables were given",
                cfg.n_tables,
                tables.len()
            )));
        }
        let means = plugin_distribution(tables)?;
        Self::from_means(means, spec, cfg)
    }

    /// Build directly from plug-in means.
    pub fn from_means(means: MeanVector, spec: &RestrictionSpec, cfg: &TestConfig) -> Result<Self> {
        cfg.validate()?;
        let k = means.infer_k()?;
        spec.validate_for(k)?;
        let moment_spec = MomentSpec::from_spec(spec, k)?;
        let prepared = moment_spec.prepared();
        let rho = prepared.rho();
        let exact = k <= EXACT_MOMENT_MAX_K;

        let mut mc_rel_se: Option<f64> = None;
        let original = if exact {
            prepared.coeffs(&means)
        } else {
            let mut rng = substream(cfg.seed, TAG_MC, u64::MAX);
            let (coeffs, rel) = prepared.coeffs_mc(&means, cfg.mc_draws, &mut rng);
            mc_rel_se = Some(rel.into_iter().fold(0.0, f64::max));
            coeffs
        };

        let b = cfg.bootstrap;
        let max_redraws = ((cfg.max_redraw_fraction * b as f64).floor() as usize).max(1);
        let draw_one = |replicate: u64, attempt: u64| -> (MomentCoeffs, Option<f64>) {
            let mut rng = substream(cfg.seed, TAG_BOOT, replicate * 1024 + attempt);
            let mut avg = vec![0.0f64; means.len()];
            for _ in 0..cfg.n_tables {
                let draw = poisson_cells(&mut rng, means.values());
                for (a, &d) in avg.iter_mut().zip(draw.iter()) {
                    *a += d as f64;
                }
            }
            let n = cfg.n_tables as f64;
            let bmeans = MeanVector::new(avg.into_iter().map(|v| v / n).collect())
                .expect("averaged Poisson draws are finite and nonnegative");
            if exact {
                (prepared.coeffs(&bmeans), None)
            } else {
                let (coeffs, rel) = prepared.coeffs_mc(&bmeans, cfg.mc_draws, &mut rng);
                (coeffs, Some(rel.into_iter().fold(0.0, f64::max)))
            }
        };

        let drawn: Vec<(MomentCoeffs, usize, Option<f64>)> = (0..b as u64)
            .into_par_iter()
            .map(|replicate| {
                let mut attempt = 0u64;
                loop {
                    let (coeffs, rel) = draw_one(replicate, attempt);
                    if !coeffs.iter().any(|c| c.degenerate()) || attempt >= 16 {
                        return (coeffs, attempt as usize, rel);
                    }
                    attempt += 1;
                }
            })
            .collect();

        let degenerate_redraws: usize = drawn.iter().map(|(_, a, _)| a).sum();
        if degenerate_redraws > max_redraws {
            return Err(Error::DegenerateVariance(format!(
                "{degenerate_redraws} bootstrap redraws exceeded the cap of {max_redraws}; \
                 the plug-in means are too small to studentize"
            )));
        }
        if let Some(rel) = drawn.iter().filter_map(|(_, _, r)| *r).fold(None, |acc: Option<f64>, r| {
            Some(acc.map_or(r, |a| a.max(r)))
        }) {
            mc_rel_se = Some(mc_rel_se.map_or(rel, |a| a.max(rel)));
        }
        let replicates = drawn.into_iter().map(|(c, _, _)| c).collect();

        let n_obs = means.total() * cfg.n_tables as f64 / cfg.n_tables as f64;
        Ok(TibEngine {
            means,
            spec: spec.clone(),
            cfg: cfg.clone(),
            original,
            replicates,
            rho,
            degenerate_redraws,
            mc_moment_rel_se: mc_rel_se,
            n_obs,
        })
    }

    pub fn means(&self) -> &MeanVector {
        &self.means
    }

    pub fn degenerate_redraws(&self) -> usize {
        self.degenerate_redraws
    }

    /// Two-step bootstrap test of the moment inequalities at `m`.
    pub fn test_at(&self, m: f64) -> Result<TestOutcome> {
        let sqrt_n = (self.cfg.n_tables as f64).sqrt();
        let beta = self.cfg.beta();
        let alpha = self.cfg.alpha;

        let mut w = Vec::with_capacity(self.rho);
        let mut s = Vec::with_capacity(self.rho);
        for (j, c) in self.original.iter().enumerate() {
            let sd = c.var_at(m).max(0.0).sqrt();
            if sd < SIGMA_FLOOR {
                return Err(Error::DegenerateVariance(format!(
                    "moment component {j} has zero variance at M={m}"
                )));
            }
            w.push(c.mean_at(m));
            s.push(sd);
        }
        let t_n = (0..self.rho)
            .map(|j| sqrt_n * w[j] / s[j])
            .fold(f64::NEG_INFINITY, f64::max);

        // step 1: simultaneous (1 - beta) upper band for the moment means
        let mut step1: Vec<f64> = self
            .replicates
            .iter()
            .map(|rep| {
                (0..self.rho)
                    .map(|j| {
                        let sb = rep[j].var_at(m).max(0.0).sqrt().max(SIGMA_FLOOR);
                        sqrt_n * (w[j] - rep[j].mean_at(m)) / sb
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        step1.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let k_quant = quantile_ceil(&step1, 1.0 - beta);

        let upper: Vec<f64> = (0..self.rho)
            .map(|j| w[j] + s[j] * k_quant / sqrt_n)
            .collect();
        let step1_all_negative = upper.iter().all(|&u| u <= 0.0);
        let zeta_star: Vec<f64> = upper.iter().map(|&u| u.min(0.0)).collect();

        if step1_all_negative {
            return Ok(TestOutcome {
                m,
                t_n,
                tau_hat: f64::INFINITY,
                step1_all_negative,
                rejected: false,
                zeta_star,
            });
        }

        // step 2: recentered bootstrap quantile at 1 - alpha + beta
        let mut step2: Vec<f64> = self
            .replicates
            .iter()
            .map(|rep| {
                (0..self.rho)
                    .map(|j| {
                        let sb = rep[j].var_at(m).max(0.0).sqrt().max(SIGMA_FLOOR);
                        sqrt_n * (rep[j].mean_at(m) - w[j] + zeta_star[j]) / sb
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        step2.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let tau_hat = quantile_ceil(&step2, 1.0 - alpha + beta);

        Ok(TestOutcome {
            m,
            t_n,
            tau_hat,
            step1_all_negative,
            rejected: t_n > tau_hat,
            zeta_star,
        })
    }

    fn accepts(&self, m: f64) -> Result<bool> {
        Ok(!self.test_at(m)?.rejected)
    }

    /// Invert the family of tests over the candidate grid.
    pub fn invert(&self) -> Result<CiResult> {
        let cap = self.spec.delta.floor().max(1.0);
        let floor = if self.cfg.truncate_at_observed {
            self.n_obs.round().max(1.0)
        } else {
            1.0
        };
        if floor > cap {
            return Err(Error::InvalidInput("truncation floor exceeds the size cap".into()));
        }
        match self.cfg.grid {
            GridStrategy::Exhaustive => self.invert_exhaustive(floor as u64, cap as u64),
            GridStrategy::Adaptive => self.invert_adaptive(floor as u64, cap as u64),
        }
    }

    fn diagnostics(&self, evaluated: Vec<GridOutcome>) -> CiDiagnostics {
        CiDiagnostics {
            evaluated,
            degenerate_redraws: self.degenerate_redraws,
            audit_anomalies: 0,
            non_interval: false,
            mc_moment_rel_se: self.mc_moment_rel_se,
        }
    }

    fn invert_exhaustive(&self, floor: u64, cap: u64) -> Result<CiResult> {
        const MAX_EXHAUSTIVE: u64 = 2_000_000;
        if cap - floor + 1 > MAX_EXHAUSTIVE {
            return Err(Error::InvalidInput(format!(
                "exhaustive grid of {} points exceeds {MAX_EXHAUSTIVE}; lower delta or use the adaptive grid",
                cap - floor + 1
            )));
        }
        let decisions: Vec<(f64, bool)> = (floor..=cap)
            .into_par_iter()
            .map(|m| {
                let m = m as f64;
                self.accepts(m).map(|a| (m, a))
            })
            .collect::<Result<_>>()?;
        let evaluated: Vec<GridOutcome> = decisions
            .iter()
            .map(|&(m, accepted)| GridOutcome { m, accepted })
            .collect();
        let accepted: Vec<f64> = decisions.iter().filter(|(_, a)| *a).map(|&(m, _)| m).collect();
        self.assemble(accepted, evaluated, floor, cap)
    }

    fn invert_adaptive(&self, floor: u64, cap: u64) -> Result<CiResult> {
        let mut evaluated: Vec<GridOutcome> = Vec::new();
        let mut decided: std::collections::BTreeMap<u64, bool> = std::collections::BTreeMap::new();

        // phase 1: geometric coarse scan plus hint points near the plug-in
        // identification interval
        let mut scan: BTreeSet<u64> = BTreeSet::new();
        scan.insert(floor);
        scan.insert(cap);
        let mut g = floor as f64;
        while g < cap as f64 {
            g *= 1.12;
            scan.insert((g.round() as u64).clamp(floor, cap));
        }
        if let Ok(k) = self.means.infer_k() {
            if let Ok(iv) = self.spec.ident_interval(&self.means, k) {
                let (lo, hi) = if iv.is_empty() { (iv.hi, iv.lo) } else { (iv.lo, iv.hi) };
                let span = (hi - lo).abs().max(0.2 * hi.abs()).max(20.0);
                let steps = 16;
                for i in 0..=steps {
                    let m = lo - 0.75 * span + (2.5 * span) * i as f64 / steps as f64;
                    if m.is_finite() && m >= 1.0 {
                        scan.insert((m.round() as u64).clamp(floor, cap));
                    }
                }
            }
        }
        let scan: Vec<u64> = scan.into_iter().collect();
        let outcomes: Vec<(u64, bool)> = scan
            .par_iter()
            .map(|&m| self.accepts(m as f64).map(|a| (m, a)))
            .collect::<Result<_>>()?;
        for &(m, a) in &outcomes {
            decided.insert(m, a);
            evaluated.push(GridOutcome { m: m as f64, accepted: a });
        }

        // phase 2: bisect every accept/reject boundary to unit resolution
        let mut frontier: Vec<(u64, u64)> = decided
            .iter()
            .zip(decided.iter().skip(1))
            .filter(|((_, a), (_, b))| a != b)
            .map(|((&m1, _), (&m2, _))| (m1, m2))
            .collect();
        while let Some((lo, hi)) = frontier.pop() {
            if hi - lo <= 1 {
                continue;
            }
            let mid = lo + (hi - lo) / 2;
            let a = self.accepts(mid as f64)?;
            decided.insert(mid, a);
            evaluated.push(GridOutcome { m: mid as f64, accepted: a });
            let lo_a = decided[&lo];
            let hi_a = decided[&hi];
            if a != lo_a {
                frontier.push((lo, mid));
            }
            if a != hi_a {
                frontier.push((mid, hi));
            }
        }

        // phase 3: randomized audit inside and outside the hull
        let mut audit_anomalies = 0usize;
        let accepted_now: Vec<u64> = decided.iter().filter(|(_, &a)| a).map(|(&m, _)| m).collect();
        if let (Some(&h_lo), Some(&h_hi)) = (accepted_now.first(), accepted_now.last()) {
            let mut rng = substream(self.cfg.seed, TAG_AUDIT, 0);
            let mut audits: BTreeSet<u64> = BTreeSet::new();
            for _ in 0..24 {
                if h_hi > h_lo {
                    audits.insert(rng.gen_range(h_lo..=h_hi));
                }
                // outside draws are log-uniform over each flank
                if h_lo > floor + 1 {
                    let lf = (floor as f64).ln();
                    let lh = ((h_lo - 1) as f64).ln();
                    let m = (lf + (lh - lf) * rng.gen::<f64>()).exp().round() as u64;
                    audits.insert(m.clamp(floor, h_lo.saturating_sub(1).max(floor)));
                }
                if h_hi + 1 < cap {
                    let lf = ((h_hi + 1) as f64).ln();
                    let lh = (cap as f64).ln();
                    let m = (lf + (lh - lf) * rng.gen::<f64>()).exp().round() as u64;
                    audits.insert(m.clamp(h_hi + 1, cap));
                }
            }
            let audit_results: Vec<(u64, bool)> = audits
                .iter()
                .filter(|m| !decided.contains_key(m))
                .map(|&m| self.accepts(m as f64).map(|a| (m, a)))
                .collect::<Result<_>>()?;
            for (m, a) in audit_results {
                let inside = m >= h_lo && m <= h_hi;
                if a != inside {
                    audit_anomalies += 1;
                }
                decided.insert(m, a);
                evaluated.push(GridOutcome { m: m as f64, accepted: a });
            }
            // an accepted point beyond the hull extends it; re-bisect that edge
            let accepted_after: Vec<u64> =
                decided.iter().filter(|(_, &a)| a).map(|(&m, _)| m).collect();
            let (n_lo, n_hi) = (accepted_after[0], *accepted_after.last().unwrap());
            // re-bisect each hull edge against the nearest decided rejection
            let lower_bracket = decided
                .range(..n_lo)
                .rev()
                .find(|(_, &a)| !a)
                .map(|(&m, _)| (m, n_lo));
            let upper_bracket = decided
                .range(n_hi + 1..)
                .find(|(_, &a)| !a)
                .map(|(&m, _)| (n_hi, m));
            for (mut lo, mut hi) in [lower_bracket, upper_bracket].into_iter().flatten() {
                while hi - lo > 1 {
                    let mid = lo + (hi - lo) / 2;
                    let a = self.accepts(mid as f64)?;
                    decided.insert(mid, a);
                    evaluated.push(GridOutcome { m: mid as f64, accepted: a });
                    let low_is_acc = decided[&lo];
                    if a == low_is_acc {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
            }
        }

        let accepted: Vec<f64> = decided
            .iter()
            .filter(|(_, &a)| a)
            .map(|(&m, _)| m as f64)
            .collect();
        let mut result = self.assemble(accepted, evaluated, floor, cap)?;
        result.diagnostics.audit_anomalies = audit_anomalies;
        // holes: any rejected decided point strictly inside the hull
        if let (Some(lo), Some(hi)) = (result.interval_lo, result.interval_hi.or(Some(cap as f64))) {
            result.diagnostics.non_interval = decided
                .iter()
                .any(|(&m, &a)| !a && (m as f64) > lo && (m as f64) < hi);
        }
        Ok(result)
    }

    fn assemble(
        &self,
        accepted: Vec<f64>,
        evaluated: Vec<GridOutcome>,
        floor: u64,
        cap: u64,
    ) -> Result<CiResult> {
        let diagnostics = self.diagnostics(evaluated);
        if accepted.is_empty() {
            return Ok(CiResult::empty_set(diagnostics));
        }
        let lo = accepted.first().copied().unwrap();
        let hi = accepted.last().copied().unwrap();
        let infinite_upper = hi >= cap as f64;
        let truncated = self.cfg.truncate_at_observed && lo <= floor as f64;
        const MAX_STORED: usize = 100_000;
        let mut points = accepted;
        if points.len() > MAX_STORED {
            points.truncate(MAX_STORED);
        }
        Ok(CiResult {
            accepted_points: points,
            interval_lo: Some(lo),
            interval_hi: if infinite_upper { None } else { Some(hi) },
            infinite_upper,
            empty: false,
            truncated_at_observed: truncated,
            diagnostics,
        })
    }
}

/// Test the moment inequalities at one candidate size, bootstrapping from the
/// given plug-in means.
pub fn test_moment_inequalities(
    spec: &RestrictionSpec,
    means: &MeanVector,
    m: f64,
    cfg: &TestConfig,
) -> Result<TestOutcome> {
    TibEngine::from_means(means.clone(), spec, cfg)?.test_at(m)
}

/// Invert the bootstrap tests over the candidate grid for the observed
/// tables.
pub fn invert_ci(
    spec: &RestrictionSpec,
    tables: &[ContingencyTable],
    cfg: &TestConfig,
) -> Result<CiResult> {
    TibEngine::new(tables, spec, cfg)?.invert()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::restrictions::Restriction;
    use crate::table::pwid_example;

    fn quick_cfg(seed: u64) -> TestConfig {
        TestConfig { bootstrap: 400, seed, ..Default::default() }
    }

    #[test]
    fn plugin_distribution_averages() {
        let t = pwid_example();
        let m = plugin_distribution(&[t.clone()]).unwrap();
        assert_eq!(m.values(), &[21.0, 103.0, 13.0, 89.0, 29.0, 24.0, 27.0]);
        let m2 = plugin_distribution(&[t.clone(), t]).unwrap();
        assert_eq!(m2.values(), &[21.0, 103.0, 13.0, 89.0, 29.0, 24.0, 27.0]);
        let z = ContingencyTable::new(2, vec![0, 0, 0]).unwrap();
        let w = ContingencyTable::new(2, vec![2, 2, 2]).unwrap();
        let avg = plugin_distribution(&[z, w]).unwrap();
        assert_eq!(avg.values(), &[1.0, 1.0, 1.0]);
        assert!(plugin_distribution(&[]).is_err());
    }

    #[test]
    fn quantile_convention_is_right_continuous() {
        let v = vec![1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_ceil(&v, 0.5), 2.0);
        assert_eq!(quantile_ceil(&v, 0.51), 3.0);
        assert_eq!(quantile_ceil(&v, 1.0), 4.0);
        assert_eq!(quantile_ceil(&v, 0.0), 1.0);
    }

    #[test]
    fn pairwise_test_accepts_inside_and_rejects_far_outside() {
        let spec = RestrictionSpec::all_pairs(3, 1.0 / 3.0, 3.0).unwrap();
        let t = pwid_example();
        let mut cfg = quick_cfg(7);
        cfg.bootstrap = 800;
        let engine = TibEngine::new(&[t], &spec, &cfg).unwrap();
        assert!(!engine.test_at(400.0).unwrap().rejected);
        assert!(engine.test_at(10_000.0).unwrap().rejected);
        assert!(engine.test_at(150.0).unwrap().rejected);
    }

    #[test]
    fn step1_shortcut_fires_deep_inside_a_wide_set() {
        // wide relaxed bounds make every moment clearly negative at the
        // saturated point, so the first step accepts outright
        let spec = RestrictionSpec::all_pairs(3, 0.01, 100.0).unwrap();
        let t = pwid_example();
        let engine = TibEngine::new(&[t], &spec, &quick_cfg(3)).unwrap();
        let out = engine.test_at(900.0).unwrap();
        assert!(out.step1_all_negative);
        assert!(!out.rejected);
        assert!(out.zeta_star.iter().all(|&z| z <= 0.0));
    }

    #[test]
    fn identical_seeds_reproduce_identical_intervals() {
        let spec = RestrictionSpec::all_pairs(3, 1.0 / 3.0, 3.0).unwrap();
        let t = pwid_example();
        let cfg = quick_cfg(42);
        let a = invert_ci(&spec, &[t.clone()], &cfg).unwrap();
        let b = invert_ci(&spec, &[t], &cfg).unwrap();
        assert_eq!(a.interval_lo, b.interval_lo);
        assert_eq!(a.interval_hi, b.interval_hi);
        assert_eq!(a.accepted_points, b.accepted_points);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let spec = RestrictionSpec::highest_order(0.3).unwrap();
        let t = pwid_example();
        let cfg = TestConfig { bootstrap: 300, seed: 5, truncate_at_observed: true, ..Default::default() };
        let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let pool4 = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let r1 = pool1.install(|| invert_ci(&spec, &[t.clone()], &cfg)).unwrap();
        let r4 = pool4.install(|| invert_ci(&spec, &[t], &cfg)).unwrap();
        assert_eq!(r1.interval_lo, r4.interval_lo);
        assert_eq!(r1.interval_hi, r4.interval_hi);
        assert_eq!(r1.infinite_upper, r4.infinite_upper);
    }

    #[test]
    fn widening_bounds_never_shrinks_acceptance() {
        let t = pwid_example();
        let cfg = quick_cfg(11);
        let narrow = RestrictionSpec::all_pairs(3, 1.0 / 2.0, 2.0).unwrap();
        let wide = RestrictionSpec::all_pairs(3, 1.0 / 4.0, 4.0).unwrap();
        let e_narrow = TibEngine::new(&[t.clone()], &narrow, &cfg).unwrap();
        let e_wide = TibEngine::new(&[t], &wide, &cfg).unwrap();
        for m in (250..900).step_by(25) {
            let m = m as f64;
            if !e_narrow.test_at(m).unwrap().rejected {
                assert!(
                    !e_wide.test_at(m).unwrap().rejected,
                    "wide bounds rejected M={m} that narrow bounds accepted"
                );
            }
        }
    }

    #[test]
    fn widening_gamma_never_shrinks_acceptance() {
        let t = pwid_example();
        let cfg = quick_cfg(13);
        let tight = RestrictionSpec::highest_order(0.1).unwrap();
        let loose = RestrictionSpec::highest_order(0.6).unwrap();
        let e_tight = TibEngine::new(&[t.clone()], &tight, &cfg).unwrap();
        let e_loose = TibEngine::new(&[t], &loose, &cfg).unwrap();
        for m in (320..1400).step_by(60) {
            let m = m as f64;
            if !e_tight.test_at(m).unwrap().rejected {
                assert!(!e_loose.test_at(m).unwrap().rejected, "M={m}");
            }
        }
    }

    #[test]
    fn conflicting_restrictions_can_empty_the_interval() {
        // incompatible one-pair bounds force rejection everywhere
        let spec = RestrictionSpec::pairwise(vec![
            crate::restrictions::PairwiseConstraint { r: 1, t: 2, eta: 20.0, xi: 30.0 },
            crate::restrictions::PairwiseConstraint { r: 1, t: 3, eta: 0.001, xi: 0.01 },
        ])
        .unwrap();
        let t = pwid_example();
        let mut cfg = quick_cfg(17);
        cfg.truncate_at_observed = true;
        let ci = invert_ci(&spec, &[t], &cfg).unwrap();
        assert!(ci.empty);
        assert!(ci.interval_lo.is_none());
    }

    #[test]
    fn exhaustive_grid_matches_adaptive_hull() {
        let spec = RestrictionSpec::new(
            Restriction::Pairwise {
                constraints: vec![crate::restrictions::PairwiseConstraint {
                    r: 1,
                    t: 2,
                    eta: 0.5,
                    xi: 2.0,
                }],
            },
            1200.0,
        )
        .unwrap();
        let t = pwid_example();
        let mut cfg = quick_cfg(23);
        cfg.truncate_at_observed = true;
        let adaptive = invert_ci(&spec, &[t.clone()], &cfg).unwrap();
        cfg.grid = GridStrategy::Exhaustive;
        let exhaustive = invert_ci(&spec, &[t], &cfg).unwrap();
        assert_eq!(adaptive.interval_lo, exhaustive.interval_lo);
        assert_eq!(adaptive.interval_hi, exhaustive.interval_hi);
        assert!(!exhaustive.diagnostics.non_interval);
    }

    #[test]
    fn degenerate_redraw_cap_errors_on_tiny_means() {
        let means = MeanVector::new(vec![0.01, 0.01, 0.01]).unwrap();
        let spec = RestrictionSpec::highest_order(0.1).unwrap();
        let err = TibEngine::from_means(means, &spec, &quick_cfg(1));
        assert!(matches!(err, Err(Error::DegenerateVariance(_))));
    }
}
