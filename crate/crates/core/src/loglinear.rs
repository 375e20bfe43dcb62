//! Point-identified Poisson log-linear models: the hierarchy of independence
//! assumptions, maximum-likelihood fitting, and information criteria.
//!
//! A model formula is a hierarchically closed set of interaction terms over a
//! subset of the samples. Fitting maximizes the Poisson likelihood over the
//! observed cells of the (possibly collapsed) table by Newton iteration; the
//! population size estimate adds the implied unobserved-cell mean to the
//! observed total.

use crate::error::{Error, Result};
use crate::profile;
use crate::table::{index_to_history, ContingencyTable};
use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;
use std::collections::BTreeSet;

/// A hierarchical log-linear model formula.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelFormula {
    /// Hierarchically closed interaction terms (graded lexicographic order),
    /// excluding the intercept.
    terms: Vec<Vec<usize>>,
    /// Sorted samples the model uses; the table is collapsed onto these.
    samples: Vec<usize>,
    label: String,
}

fn hierarchical_closure(generators: &[Vec<usize>]) -> BTreeSet<Vec<usize>> {
    let mut closed = BTreeSet::new();
    for g in generators {
        let n = g.len();
        for mask in 1usize..1 << n {
            let mut sub: Vec<usize> =
                (0..n).filter(|&b| mask >> b & 1 == 1).map(|b| g[b]).collect();
            sub.sort_unstable();
            closed.insert(sub);
        }
    }
    closed
}

fn canonical_label(closed: &BTreeSet<Vec<usize>>, samples: &[usize]) -> String {
    // maximal terms plus any samples not covered by an interaction
    let maximal: Vec<&Vec<usize>> = closed
        .iter()
        .filter(|t| {
            !closed
                .iter()
                .any(|u| u.len() > t.len() && t.iter().all(|s| u.contains(s)))
        })
        .collect();
    let mut parts: Vec<String> = maximal
        .iter()
        .map(|t| t.iter().map(|s| s.to_string()).collect::<String>())
        .collect();
    let covered: BTreeSet<usize> = maximal.iter().flat_map(|t| t.iter().copied()).collect();
    for &s in samples {
        if !covered.contains(&s) {
            parts.push(s.to_string());
        }
    }
    parts.sort_by(|a, b| (b.len(), a).cmp(&(a.len(), b)));
    format!("[{}]", parts.join(","))
}

impl ModelFormula {
    /// Build from generator terms; nested subsets are added automatically.
    /// Singleton main effects for every sample in `samples` are always
    /// included, and the model is collapsed onto `samples`.
    pub fn from_generators(generators: &[Vec<usize>], samples: &[usize], k: usize) -> Result<Self> {
        let sample_set: BTreeSet<usize> = samples.iter().copied().collect();
        if sample_set.len() < 2 {
            return Err(Error::InvalidInput("a model needs at least two samples".into()));
        }
        if sample_set.iter().any(|&s| s < 1 || s > k) {
            return Err(Error::InvalidInput(format!(
                "model samples {samples:?} out of range for k={k}"
            )));
        }
        for g in generators {
            let gset: BTreeSet<usize> = g.iter().copied().collect();
            if gset.is_empty() || gset.len() != g.len() {
                return Err(Error::InvalidInput(format!("malformed term {g:?}")));
            }
            if !gset.is_subset(&sample_set) {
                return Err(Error::InvalidInput(format!(
                    "term {g:?} uses samples outside {samples:?}"
                )));
            }
        }
        let mut closed = hierarchical_closure(generators);
        for &s in &sample_set {
            closed.insert(vec![s]);
        }
        if closed.contains(&sample_set.iter().copied().collect::<Vec<_>>()) {
            return Err(Error::InvalidInput(format!(
                "the all-samples interaction over {samples:?} is unidentifiable",
            )));
        }
        let samples: Vec<usize> = sample_set.into_iter().collect();
        let label = canonical_label(&closed, &samples);
        let mut terms: Vec<Vec<usize>> = closed.into_iter().collect();
        terms.sort_by(|a, b| (a.len(), a.clone()).cmp(&(b.len(), b.clone())));
        Ok(ModelFormula { terms, samples, label })
    }

    /// Build from an explicit term set, which must already be hierarchically
    /// closed (every nonempty subset of every term present).
    pub fn from_terms(terms: &[Vec<usize>], samples: &[usize], k: usize) -> Result<Self> {
        let closed = hierarchical_closure(terms);
        let given: BTreeSet<Vec<usize>> = terms
            .iter()
            .map(|t| {
                let mut t = t.clone();
                t.sort_unstable();
                t
            })
            .collect();
        for needed in &closed {
            if needed.len() >= 2 && !given.contains(needed) {
                return Err(Error::InvalidInput(format!(
                    "term set is not hierarchical: missing {needed:?}"
                )));
            }
        }
        Self::from_generators(terms, samples, k)
    }

    /// Parse labels like `[12,13,23]`, `[12,3]`, or `[1,2]`. Samples are
    /// single digits, so labels cover `k <= 9`.
    pub fn parse(label: &str, k: usize) -> Result<Self> {
        let inner = label.trim().trim_start_matches('[').trim_end_matches(']');
        if inner.is_empty() {
            return Err(Error::Parse(format!("empty model label {label:?}")));
        }
        let mut generators = Vec::new();
        let mut samples = BTreeSet::new();
        for part in inner.split(',') {
            let term: Vec<usize> = part
                .trim()
                .chars()
                .map(|ch| {
                    ch.to_digit(10)
                        .map(|d| d as usize)
                        .ok_or_else(|| Error::Parse(format!("bad sample digit {ch:?} in {label:?}")))
                })
                .collect::<Result<_>>()?;
            if term.is_empty() {
                return Err(Error::Parse(format!("empty term in model label {label:?}")));
            }
            samples.extend(term.iter().copied());
            generators.push(term);
        }
        let samples: Vec<usize> = samples.into_iter().collect();
        Self::from_generators(&generators, &samples, k)
    }

    pub fn terms(&self) -> &[Vec<usize>] {
        &self.terms
    }

    pub fn samples(&self) -> &[usize] {
        &self.samples
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Parameter count including the intercept.
    pub fn param_count(&self) -> usize {
        self.terms.len() + 1
    }

    /// True when the model uses every sample of a `k`-sample table.
    pub fn uses_all_samples(&self, k: usize) -> bool {
        self.samples.len() == k
    }
}

/// Design matrix over the observed cells of the collapsed table, plus the
/// design row of the unobserved (never-captured) cell.
#[derive(Debug, Clone)]
pub struct DesignInfo {
    pub matrix: DMatrix<f64>,
    pub unobserved_row: DVector<f64>,
    pub formula: ModelFormula,
}

/// Build the 0/1 design for a formula: one row per observed cell of the
/// table collapsed onto the formula's samples, one column per term plus the
/// intercept.
pub fn build_design(formula: &ModelFormula, k: usize) -> Result<DesignInfo> {
    if formula.samples.iter().any(|&s| s > k) {
        return Err(Error::InvalidInput(format!(
            "formula {} out of range for k={k}",
            formula.label
        )));
    }
    let kk = formula.samples.len();
    let c = (1usize << kk) - 1;
    let p = formula.param_count();
    // positions of the formula's samples within the collapsed table
    let local: Vec<Vec<usize>> = formula
        .terms
        .iter()
        .map(|t| {
            t.iter()
                .map(|s| formula.samples.iter().position(|x| x == s).unwrap() + 1)
                .collect()
        })
        .collect();
    let mut matrix = DMatrix::zeros(c, p);
    for i in 1..=c {
        let h = index_to_history(i, kk)?;
        matrix[(i - 1, 0)] = 1.0;
        for (j, term) in local.iter().enumerate() {
            matrix[(i - 1, j + 1)] = term.iter().all(|&s| h.captured_in(s) == 1) as u8 as f64;
        }
    }
    let mut unobserved_row = DVector::zeros(p);
    unobserved_row[0] = 1.0;
    Ok(DesignInfo {
        matrix,
        unobserved_row,
        formula: formula.clone(),
    })
}

/// Maximum-likelihood fit of one log-linear model.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub lambda_hat: Vec<f64>,
    /// Implied mean of the unobserved cell.
    pub m0_hat: f64,
    /// Population size estimate: observed total plus `m0_hat`.
    pub m_hat: f64,
    /// Delta-method standard error of `m_hat`.
    pub se: f64,
    /// Log-likelihood including the factorial normalization.
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub converged: bool,
    pub iterations: usize,
    pub fitted_means: Vec<f64>,
    /// Observed total of the (collapsed) table the model was fit to.
    pub n_obs_used: u64,
}

const GRAD_TOL: f64 = 1e-8;
const MAX_NEWTON_ITERS: usize = 200;

fn weighted_gram(x: &DMatrix<f64>, weights: &DVector<f64>) -> DMatrix<f64> {
    let (c, p) = (x.nrows(), x.ncols());
    let mut out = DMatrix::zeros(p, p);
    for i in 0..c {
        let row = x.row(i);
        let w = weights[i];
        for a in 0..p {
            for b in a..p {
                out[(a, b)] += w * row[a] * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            out[(a, b)] = out[(b, a)];
        }
    }
    out
}

/// Fit a Poisson log-linear model to the observed cell counts by Newton
/// iteration with step halving.
pub fn fit_poisson(design: &DesignInfo, counts: &[u64]) -> Result<FitResult> {
    let x = &design.matrix;
    let (c, p) = (x.nrows(), x.ncols());
    if counts.len() != c {
        return Err(Error::InvalidInput(format!(
            "design has {c} cells but {} counts were given",
            counts.len()
        )));
    }
    let n_obs: u64 = counts.iter().sum();
    if n_obs == 0 {
        return Err(Error::InvalidInput("cannot fit a model to an all-zero table".into()));
    }
    let y = DVector::from_iterator(c, counts.iter().map(|&v| v as f64));
    let kk = design.formula.samples.len();

    let loglik_kernel = |lambda: &DVector<f64>| -> (f64, DVector<f64>) {
        let eta = x * lambda;
        let mu = eta.map(f64::exp);
        (y.dot(&eta) - mu.sum(), mu)
    };

    let mut lambda = DVector::zeros(p);
    lambda[0] = (n_obs as f64 / (1u64 << kk) as f64).ln();
    let (mut ll, mut mu) = loglik_kernel(&lambda);
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..MAX_NEWTON_ITERS {
        iterations += 1;
        let grad = x.transpose() * (&y - &mu);
        if grad.amax() <= GRAD_TOL {
            converged = true;
            break;
        }
        let chol = weighted_gram(x, &mu).cholesky().ok_or_else(|| {
            Error::RankDeficient(format!("model {} has a singular design", design.formula.label))
        })?;
        let step = chol.solve(&grad);
        let mut accepted = false;
        let mut t = 1.0;
        for _ in 0..40 {
            let cand = &lambda + &step * t;
            let (ll_new, mu_new) = loglik_kernel(&cand);
            if ll_new.is_finite() && ll_new >= ll - 1e-12 {
                lambda = cand;
                ll = ll_new;
                mu = mu_new;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if !converged {
        let grad = x.transpose() * (&y - &mu);
        converged = grad.amax() <= GRAD_TOL;
    }
    if !converged {
        return Err(Error::NonConvergence(format!(
            "model {} did not reach gradient tolerance in {MAX_NEWTON_ITERS} iterations",
            design.formula.label
        )));
    }
    if mu.iter().any(|&m| m <= 0.0 || !m.is_finite()) {
        return Err(Error::NonConvergence(format!(
            "model {} produced a fitted cell mean of zero",
            design.formula.label
        )));
    }

    let m0_hat = design.unobserved_row.dot(&lambda).exp();
    let m_hat = n_obs as f64 + m0_hat;

    // delta method: Var(m_hat) = m0^2 x0' (X'WX)^{-1} x0 at the optimum
    let chol = weighted_gram(x, &mu)
        .cholesky()
        .ok_or_else(|| Error::RankDeficient(format!("model {}", design.formula.label)))?;
    let solved = chol.solve(&design.unobserved_row);
    let se = m0_hat * design.unobserved_row.dot(&solved).max(0.0).sqrt();

    let loglik = ll - y.iter().map(|&n| ln_gamma(n + 1.0)).sum::<f64>();
    let pf = p as f64;
    let aic = -2.0 * loglik + 2.0 * pf;
    let bic = -2.0 * loglik + pf * (n_obs as f64).ln();

    Ok(FitResult {
        lambda_hat: lambda.iter().copied().collect(),
        m0_hat,
        m_hat,
        se,
        loglik,
        aic,
        bic,
        converged,
        iterations,
        fitted_means: mu.iter().copied().collect(),
        n_obs_used: n_obs,
    })
}

/// One row of a hierarchy fit: the model, its fit or failure, and its
/// profile-likelihood interval when requested.
#[derive(Debug, Clone)]
pub struct HierarchyFit {
    pub formula: ModelFormula,
    pub outcome: std::result::Result<FitResult, String>,
    /// Profile-likelihood confidence interval for the population size.
    pub ci: Option<(f64, f64)>,
    /// Lowest-BIC model among those using all samples.
    pub best_bic: bool,
}

/// The model hierarchy for a `k`-sample table: every subset of the pairwise
/// interaction terms on the full sample set (main effects always included),
/// plus the two-sample collapses.
pub fn hierarchy_models(k: usize) -> Result<Vec<ModelFormula>> {
    let all: Vec<usize> = (1..=k).collect();
    let pairs: Vec<Vec<usize>> = (1..=k)
        .flat_map(|r| ((r + 1)..=k).map(move |t| vec![r, t]))
        .collect();
    let mut models = Vec::new();
    for mask in 0..1usize << pairs.len() {
        let gens: Vec<Vec<usize>> = pairs
            .iter()
            .enumerate()
            .filter(|(i, _)| mask >> i & 1 == 1)
            .map(|(_, p)| p.clone())
            .collect();
        // for k = 2 the single pair is the full interaction and is skipped
        if let Ok(f) = ModelFormula::from_generators(&gens, &all, k) {
            models.push(f);
        }
    }
    if k > 2 {
        for p in &pairs {
            models.push(ModelFormula::from_generators(&[], p, k)?);
        }
    }
    Ok(models)
}

/// Fit every model of the hierarchy, sorted by BIC (failures last), flagging
/// the lowest-BIC full-sample model. `ci_alpha`, when given, adds the
/// profile-likelihood interval for each fitted model.
pub fn fit_hierarchy(table: &ContingencyTable, ci_alpha: Option<f64>) -> Result<Vec<HierarchyFit>> {
    let k = table.k();
    let mut rows = Vec::new();
    for formula in hierarchy_models(k)? {
        let fitted = build_design(&formula, k).and_then(|design| {
            let collapsed = table.collapse(formula.samples())?;
            let fit = fit_poisson(&design, collapsed.counts())?;
            let ci = match ci_alpha {
                Some(alpha) => {
                    Some(profile::loglinear_profile_ci(&design, collapsed.counts(), alpha)?)
                }
                None => None,
            };
            Ok((fit, ci))
        });
        let row = match fitted {
            Ok((fit, ci)) => HierarchyFit { formula, outcome: Ok(fit), ci, best_bic: false },
            Err(e) => HierarchyFit { formula, outcome: Err(e.to_string()), ci: None, best_bic: false },
        };
        rows.push(row);
    }
    rows.sort_by(|a, b| {
        let key = |r: &HierarchyFit| match &r.outcome {
            Ok(f) => (0, f.bic),
            Err(_) => (1, f64::INFINITY),
        };
        key(a).partial_cmp(&key(b)).unwrap()
    });
    let best = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.formula.uses_all_samples(k))
        .filter_map(|(i, r)| r.outcome.as_ref().ok().map(|f| (i, f.bic)))
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    if let Some((i, _)) = best {
        rows[i].best_bic = true;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::pwid_example;
    use approx::assert_relative_eq;

    fn fit_label(label: &str) -> FitResult {
        let table = pwid_example();
        let formula = ModelFormula::parse(label, 3).unwrap();
        let design = build_design(&formula, 3).unwrap();
        let collapsed = table.collapse(formula.samples()).unwrap();
        fit_poisson(&design, collapsed.counts()).unwrap()
    }

    #[test]
    fn formula_parsing_and_labels() {
        let f = ModelFormula::parse("[12,13]", 3).unwrap();
        assert_eq!(f.label(), "[12,13]");
        assert_eq!(f.samples(), &[1, 2, 3]);
        assert_eq!(f.terms(), &[vec![1], vec![2], vec![3], vec![1, 2], vec![1, 3]]);
        let f = ModelFormula::parse("[23,1]", 3).unwrap();
        assert_eq!(f.label(), "[23,1]");
        let f = ModelFormula::parse("[1,2]", 3).unwrap();
        assert_eq!(f.samples(), &[1, 2]);
        assert!(ModelFormula::parse("[123]", 3).is_err());
        assert!(ModelFormula::parse("[12]", 2).is_err());
        assert!(ModelFormula::parse("[14]", 3).is_err());
    }

    #[test]
    fn from_terms_requires_hierarchy() {
        assert!(ModelFormula::from_terms(&[vec![1, 2, 3]], &[1, 2, 3, 4], 4).is_err());
        let ok =
            ModelFormula::from_terms(&[vec![1], vec![2], vec![3], vec![1, 2]], &[1, 2, 3], 3)
                .unwrap();
        assert_eq!(ok.label(), "[12,3]");
    }

    #[test]
    fn design_shapes_match_hierarchy() {
        let d = build_design(&ModelFormula::parse("[1,2]", 2).unwrap(), 2).unwrap();
        assert_eq!((d.matrix.nrows(), d.matrix.ncols()), (3, 3));
        let d = build_design(&ModelFormula::parse("[12,13]", 3).unwrap(), 3).unwrap();
        assert_eq!((d.matrix.nrows(), d.matrix.ncols()), (7, 6));
        let d = build_design(&ModelFormula::parse("[12,13,23]", 3).unwrap(), 3).unwrap();
        assert_eq!((d.matrix.nrows(), d.matrix.ncols()), (7, 7));
        // saturated design is full rank
        let xtx = d.matrix.transpose() * &d.matrix;
        assert!(xtx.cholesky().is_some());
    }

    #[test]
    fn two_sample_fit_is_lincoln_petersen() {
        let fit = fit_label("[1,2]");
        let expected = 285.0 + 118.0 * 116.0 / 51.0;
        assert_relative_eq!(fit.m_hat, expected, max_relative = 1e-6);
        assert_eq!(fit.n_obs_used, 285);
    }

    #[test]
    fn saturated_fit_reproduces_parity_ratio() {
        let fit = fit_label("[12,13,23]");
        assert_relative_eq!(fit.m0_hat, 5_197_689.0 / 9_048.0, max_relative = 1e-8);
        assert_relative_eq!(fit.m_hat, 306.0 + 5_197_689.0 / 9_048.0, max_relative = 1e-8);
    }

    #[test]
    fn score_equations_hold_at_optimum() {
        let table = pwid_example();
        for label in ["[12,13]", "[1,2,3]", "[13,2]"] {
            let formula = ModelFormula::parse(label, 3).unwrap();
            let design = build_design(&formula, 3).unwrap();
            let collapsed = table.collapse(formula.samples()).unwrap();
            let fit = fit_poisson(&design, collapsed.counts()).unwrap();
            for j in 0..design.matrix.ncols() {
                let r: f64 = (0..design.matrix.nrows())
                    .map(|i| {
                        design.matrix[(i, j)]
                            * (collapsed.counts()[i] as f64 - fit.fitted_means[i])
                    })
                    .sum();
                assert!(r.abs() < 1e-6, "{label} column {j}: residual {r}");
            }
        }
    }

    #[test]
    fn reported_point_estimates_match_reference_table() {
        let expected = [
            ("[12,13,23]", 880.0),
            ("[12,13]", 472.0),
            ("[12,23]", 370.0),
            ("[13,23]", 688.0),
            ("[12,3]", 372.0),
            ("[13,2]", 530.0),
            ("[23,1]", 458.0),
            ("[1,2,3]", 439.0),
            ("[1,2]", 553.0),
            ("[1,3]", 272.0),
            ("[2,3]", 376.0),
        ];
        for (label, m) in expected {
            let fit = fit_label(label);
            assert!(
                (fit.m_hat.round() - m).abs() <= 1.0,
                "{label}: {} vs {m}",
                fit.m_hat
            );
        }
    }

    #[test]
    fn information_criteria_match_reference_table() {
        let expected = [
            ("[12,13,23]", 51.5, 77.5),
            ("[12,13]", 62.0, 84.4),
            ("[12,23]", 81.4, 103.8),
            ("[13,23]", 50.3, 72.7),
            ("[12,3]", 79.5, 98.1),
            ("[13,2]", 60.9, 79.5),
            ("[23,1]", 91.6, 110.2),
            ("[1,2,3]", 92.0, 106.9),
            ("[1,2]", 25.0, 35.9),
            ("[1,3]", 23.8, 33.7),
            ("[2,3]", 24.0, 34.1),
        ];
        for (label, aic, bic) in expected {
            let fit = fit_label(label);
            assert!((fit.aic - aic).abs() < 0.15, "{label} aic {} vs {aic}", fit.aic);
            assert!((fit.bic - bic).abs() < 0.15, "{label} bic {} vs {bic}", fit.bic);
        }
    }

    #[test]
    fn hierarchy_sorted_by_bic_and_flags_best() {
        let rows = fit_hierarchy(&pwid_example(), None).unwrap();
        assert_eq!(rows.len(), 11);
        let bics: Vec<f64> = rows
            .iter()
            .filter_map(|r| r.outcome.as_ref().ok().map(|f| f.bic))
            .collect();
        assert!(bics.windows(2).all(|w| w[0] <= w[1]));
        let best: Vec<&HierarchyFit> = rows.iter().filter(|r| r.best_bic).collect();
        assert_eq!(best.len(), 1);
        // lowest full-sample BIC on this data is the [13,23] model
        assert_eq!(best[0].formula.label(), "[13,23]");
    }

    #[test]
    fn aic_ordering_of_full_sample_models_matches_reference() {
        let rows = fit_hierarchy(&pwid_example(), None).unwrap();
        let mut full: Vec<(&str, f64)> = rows
            .iter()
            .filter(|r| r.formula.uses_all_samples(3))
            .map(|r| (r.formula.label(), r.outcome.as_ref().unwrap().aic))
            .collect();
        full.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let order: Vec<&str> = full.iter().map(|(l, _)| *l).collect();
        assert_eq!(
            order,
            vec!["[13,23]", "[12,13,23]", "[13,2]", "[12,13]", "[12,3]", "[12,23]", "[23,1]", "[1,2,3]"]
        );
    }

    #[test]
    fn symmetric_independent_table_matches_lincoln_petersen_on_any_pair() {
        let table = ContingencyTable::new(3, vec![40, 40, 40, 40, 40, 40, 40]).unwrap();
        let formula = ModelFormula::parse("[1,2]", 3).unwrap();
        let design = build_design(&formula, 3).unwrap();
        let collapsed = table.collapse(formula.samples()).unwrap();
        let fit = fit_poisson(&design, collapsed.counts()).unwrap();
        let m = collapsed.pairwise_marginal(1, 2).unwrap();
        let lp = collapsed.n_obs() as f64 + (m.n10 as f64 * m.n01 as f64) / m.n11 as f64;
        assert_relative_eq!(fit.m_hat, lp, max_relative = 1e-6);
    }

    #[test]
    fn all_zero_table_is_rejected() {
        let table = ContingencyTable::new(2, vec![0, 0, 0]).unwrap();
        let formula = ModelFormula::parse("[1,2]", 2).unwrap();
        let design = build_design(&formula, 2).unwrap();
        assert!(fit_poisson(&design, table.counts()).is_err());
    }
}
