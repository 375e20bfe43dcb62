//! Profile-likelihood confidence intervals for the population size.
//!
//! For a candidate size `M`, the nuisance cell means are profiled out by
//! maximizing the Poisson criterion over the restriction's constraint set
//! `C_M`; the likelihood-ratio statistic is compared to the chi-squared(1)
//! quantile. Optimization runs in log-mean coordinates: the positivity
//! constraint disappears and the highest-order boundary becomes a smooth
//! equality.

use crate::ci::{CiDiagnostics, CiResult, GridOutcome};
use crate::error::{Error, Result};
use crate::loglinear::DesignInfo;
use crate::optim::{maximize_auglag, maximize_single_equality, AugLagOptions, Eval, Smooth};
use crate::restrictions::{MeanVector, Restriction, RestrictionSpec};
use crate::rng::substream;
use crate::table::{pair_cells, parity_sets};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

/// Configuration for profile-likelihood interval inversion.
#[derive(Debug, Clone)]
pub struct PlConfig {
    pub alpha: f64,
    /// Endpoint bisection resolution in individuals.
    pub resolution: f64,
    pub truncate_at_observed: bool,
    /// Extra optimizer starts perturbed around the plug-in means.
    pub multistarts: usize,
    /// Number of iid tables behind the averaged counts.
    pub n_tables: usize,
}

impl Default for PlConfig {
    fn default() -> Self {
        PlConfig {
            alpha: 0.05,
            resolution: 0.5,
            truncate_at_observed: false,
            multistarts: 5,
            n_tables: 1,
        }
    }
}

/// One profiled point: the candidate size and its likelihood-ratio value.
#[derive(Debug, Clone)]
pub struct ProfilePoint {
    pub m: f64,
    pub lr: f64,
    pub minimizer: Option<MeanVector>,
    pub feasible: bool,
    pub converged: bool,
}

/// Poisson criterion `sum_i (-m_i + nbar_i log m_i)`; maximized over
/// unconstrained positive means at `m = nbar`.
pub fn criterion(m: &MeanVector, nbar: &MeanVector) -> Result<f64> {
    if m.len() != nbar.len() {
        return Err(Error::InvalidInput("criterion length mismatch".into()));
    }
    let mut total = 0.0;
    for (mi, ni) in m.values().iter().zip(nbar.values().iter()) {
        if *mi <= 0.0 {
            return Err(Error::InvalidInput(format!("criterion needs positive means, got {mi}")));
        }
        total += -mi + ni * mi.ln();
    }
    Ok(total)
}

fn criterion_best(nbar: &MeanVector) -> f64 {
    // unconstrained supremum; cells with a zero average contribute 0
    nbar.values()
        .iter()
        .map(|&n| if n > 0.0 { -n + n * n.ln() } else { 0.0 })
        .sum()
}

/// `1 - alpha` quantile of the chi-squared(1) distribution, computed as the
/// squared normal quantile (more accurate than the generic gamma inversion).
pub fn chi2_threshold(alpha: f64) -> Result<f64> {
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha must be in (0,1), got {alpha}")));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let z = normal.inverse_cdf(1.0 - alpha / 2.0);
    Ok(z * z)
}

struct CriterionObjective {
    weights: DVector<f64>,
}

impl Smooth for CriterionObjective {
    fn eval(&self, u: &DVector<f64>) -> Eval {
        let expu = u.map(f64::exp);
        let value = (0..u.len())
            .map(|i| -expu[i] + self.weights[i] * u[i])
            .sum();
        let grad = &self.weights - &expu;
        let hess = DMatrix::from_diagonal(&(-&expu));
        (value, grad, hess)
    }
}

/// Equality `((sum_i e^{u_i} + exp(s'u + shift)) - M) / M = 0` for the active
/// highest-order boundary.
struct HighestBoundary {
    signs: DVector<f64>,
    shift: f64,
    m: f64,
}

impl Smooth for HighestBoundary {
    fn eval(&self, u: &DVector<f64>) -> Eval {
        let expu = u.map(f64::exp);
        let ratio = (self.signs.dot(u) + self.shift).exp();
        let value = (expu.sum() + ratio - self.m) / self.m;
        let grad = (&expu + &self.signs * ratio) / self.m;
        let mut hess = DMatrix::from_diagonal(&expu);
        hess += &self.signs * self.signs.transpose() * ratio;
        hess /= self.m;
        (value, grad, hess)
    }
}

/// `(sum_i e^{u_i} - M) / M <= 0`: nonnegative unobserved cell.
struct TotalCap {
    m: f64,
}

impl Smooth for TotalCap {
    fn eval(&self, u: &DVector<f64>) -> Eval {
        let expu = u.map(f64::exp);
        let value = (expu.sum() - self.m) / self.m;
        let grad = &expu / self.m;
        let hess = DMatrix::from_diagonal(&expu) / self.m;
        (value, grad, hess)
    }
}

/// Sum of `e^{u_i}` over a cell group, with derivatives.
#[derive(Clone)]
struct ExpGroup {
    idx: Vec<usize>,
}

impl ExpGroup {
    fn eval(&self, u: &DVector<f64>) -> (f64, DVector<f64>, DVector<f64>) {
        let mut value = 0.0;
        let mut grad = DVector::zeros(u.len());
        for &i in &self.idx {
            let e = u[i].exp();
            value += e;
            grad[i] = e;
        }
        // Hessian of a sum of exponentials is diagonal and equals the gradient
        (value, grad.clone(), grad)
    }
}

/// One side of a pairwise odds-ratio constraint at fixed `M`, scaled to O(1):
/// `sign * (a^2 + ab + ac - M a + bound * b c) / scale <= 0`
/// where `a, b, c` are the pair aggregates and `sign` selects the side.
struct PairBoundary {
    a: ExpGroup,
    b: ExpGroup,
    c: ExpGroup,
    bound: f64,
    sign: f64,
    m: f64,
    scale: f64,
}

fn add_sym(hess: &mut DMatrix<f64>, ga: &DVector<f64>, gb: &DVector<f64>, w: f64) {
    if w == 0.0 {
        return;
    }
    for i in 0..ga.len() {
        if ga[i] == 0.0 {
            continue;
        }
        for j in 0..gb.len() {
            let v = w * ga[i] * gb[j];
            hess[(i, j)] += v;
            hess[(j, i)] += v;
        }
    }
}

fn add_diag(hess: &mut DMatrix<f64>, diag: &DVector<f64>, w: f64) {
    for i in 0..diag.len() {
        hess[(i, i)] += w * diag[i];
    }
}

impl Smooth for PairBoundary {
    fn eval(&self, u: &DVector<f64>) -> Eval {
        let (a, ga, da) = self.a.eval(u);
        let (b, gb, db) = self.b.eval(u);
        let (c, gc, dc) = self.c.eval(u);
        let raw = a * a + a * b + a * c - self.m * a + self.bound * b * c;
        let value = self.sign * raw / self.scale;

        let mut grad = &ga * (2.0 * a + b + c - self.m);
        grad += &gb * (a + self.bound * c);
        grad += &gc * (a + self.bound * b);
        grad *= self.sign / self.scale;

        let mut hess = DMatrix::zeros(u.len(), u.len());
        // product-rule Hessian: a^2 gives 2 grad_a grad_a', ab gives the
        // symmetric cross term, and each factor contributes its own diagonal
        add_sym(&mut hess, &ga, &ga, 1.0);
        add_diag(&mut hess, &da, 2.0 * a + b + c - self.m);
        add_sym(&mut hess, &ga, &gb, 1.0);
        add_sym(&mut hess, &ga, &gc, 1.0);
        add_diag(&mut hess, &db, a + self.bound * c);
        add_diag(&mut hess, &dc, a + self.bound * b);
        add_sym(&mut hess, &gb, &gc, self.bound);
        hess *= self.sign / self.scale;
        (value, grad, hess)
    }
}

fn perturbed_start(base: &DVector<f64>, rng: &mut impl Rng) -> DVector<f64> {
    // +-20% multiplicative jitter per coordinate
    base.map(|v| v + if rng.gen_bool(0.5) { 1.2f64.ln() } else { 0.8f64.ln() })
}

fn log_start(nbar: &MeanVector) -> DVector<f64> {
    DVector::from_iterator(nbar.len(), nbar.values().iter().map(|&v| v.max(1e-3).ln()))
}

/// Profiling engine for one data vector and restriction.
pub struct ProfileContext {
    nbar: MeanVector,
    spec: RestrictionSpec,
    k: usize,
    cfg: PlConfig,
    anchor_value: f64,
    /// A candidate size with zero likelihood ratio.
    anchor_m: f64,
    /// Plug-in identification interval at the averaged counts, when defined
    /// and nonempty after intersecting the unobserved-cell constraint.
    plateau: Option<(f64, f64)>,
}

impl ProfileContext {
    pub fn new(nbar: MeanVector, spec: RestrictionSpec, cfg: PlConfig) -> Result<Self> {
        let k = nbar.infer_k()?;
        spec.validate_for(k)?;
        let best = criterion_best(&nbar);
        let total = nbar.total();
        if total <= 0.0 {
            return Err(Error::InvalidInput("cannot profile an all-zero table".into()));
        }

        let plug = spec.ident_interval(&nbar, k).ok();
        let plateau = plug.and_then(|iv| {
            let lo = iv.lo.max(total);
            let hi = iv.hi.min(spec.delta);
            (lo <= hi && nbar.strictly_positive()).then_some((lo, hi))
        });

        let mut ctx = ProfileContext {
            nbar,
            spec,
            k,
            cfg,
            anchor_value: best,
            anchor_m: 0.0,
            plateau,
        };
        match ctx.plateau {
            Some((lo, hi)) => {
                ctx.anchor_m = 0.5 * (lo + hi);
            }
            None => {
                let (value, at) = ctx.constrained_supremum()?;
                ctx.anchor_value = value;
                ctx.anchor_m = at;
            }
        }
        Ok(ctx)
    }

    pub fn anchor_m(&self) -> f64 {
        self.anchor_m
    }

    pub fn plateau(&self) -> Option<(f64, f64)> {
        self.plateau
    }

    /// Supremum of the criterion over the whole constrained parameter set,
    /// found by scanning the profile value over `M` and refining the best
    /// region by golden section.
    fn constrained_supremum(&self) -> Result<(f64, f64)> {
        let total = self.nbar.total();
        let lo = (total * 1.0005).max(1.0);
        let hi = self.spec.delta;
        let mut candidates: Vec<f64> = Vec::new();
        let steps = 48;
        let (llo, lhi) = (lo.ln(), hi.ln());
        for i in 0..=steps {
            candidates.push((llo + (lhi - llo) * i as f64 / steps as f64).exp());
        }
        // per-pair interval endpoints are natural candidates too
        if let Restriction::Pairwise { constraints } = &self.spec.restriction {
            for c in constraints {
                if let Ok((m11, m10, m01)) =
                    crate::restrictions::pair_means(&self.nbar, self.k, c.r, c.t)
                {
                    if m11 > 0.0 {
                        let lp = m10 * m01 / m11;
                        let base = m11 + m10 + m01;
                        candidates.push((c.eta * lp + base).clamp(lo, hi));
                        candidates.push((c.xi * lp + base).clamp(lo, hi));
                        candidates
                            .push((0.5 * (c.eta + c.xi) * lp + base).clamp(lo, hi));
                    }
                }
            }
        }
        candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
        candidates.dedup();
        let mut best = f64::NEG_INFINITY;
        let mut best_m = lo;
        let value_at = |m: f64| self.profile_value(m).map(|(v, _, _)| v);
        for &m in &candidates {
            if let Some(v) = value_at(m) {
                if v > best {
                    best = v;
                    best_m = m;
                }
            }
        }
        if !best.is_finite() {
            return Err(Error::Infeasible(
                "no feasible means found for any candidate population size".into(),
            ));
        }
        // golden-section refinement around the best scan point
        let idx = candidates.iter().position(|&m| m == best_m).unwrap();
        let mut a = if idx == 0 { best_m * 0.8 } else { candidates[idx - 1] };
        let mut b = if idx + 1 == candidates.len() { best_m * 1.25 } else { candidates[idx + 1] };
        a = a.max(lo);
        b = b.min(hi);
        let phi = 0.5 * (3.0 - 5.0f64.sqrt());
        let mut x1 = a + phi * (b - a);
        let mut x2 = b - phi * (b - a);
        let mut f1 = value_at(x1).unwrap_or(f64::NEG_INFINITY);
        let mut f2 = value_at(x2).unwrap_or(f64::NEG_INFINITY);
        for _ in 0..40 {
            if b - a < 0.25 {
                break;
            }
            if f1 < f2 {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = b - phi * (b - a);
                f2 = value_at(x2).unwrap_or(f64::NEG_INFINITY);
            } else {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = a + phi * (b - a);
                f1 = value_at(x1).unwrap_or(f64::NEG_INFINITY);
            }
        }
        let mid = 0.5 * (a + b);
        if let Some(v) = value_at(mid) {
            if v > best {
                best = v;
                best_m = mid;
            }
        }
        if f1 > best {
            best = f1;
            best_m = x1;
        }
        if f2 > best {
            best = f2;
            best_m = x2;
        }
        Ok((best, best_m))
    }

    /// Constrained maximum of the criterion at fixed `M`. Returns the value,
    /// the maximizer, and whether the optimizer converged; `None` when no
    /// feasible means were found.
    fn profile_value(&self, m: f64) -> Option<(f64, MeanVector, bool)> {
        match self.spec.restriction.clone() {
            Restriction::HighestOrder { gamma } => self.profile_highest(m, gamma),
            Restriction::Pairwise { constraints } => self.profile_pairwise(m, &constraints),
        }
    }

    fn starts(&self, m: f64) -> Vec<DVector<f64>> {
        let base = log_start(&self.nbar);
        let mut starts = vec![base.clone()];
        let mut rng = substream(m.to_bits(), 0x70726f66, 1);
        for _ in 1..self.cfg.multistarts.max(1) {
            starts.push(perturbed_start(&base, &mut rng));
        }
        starts
    }

    fn profile_highest(&self, m: f64, gamma: f64) -> Option<(f64, MeanVector, bool)> {
        let parity = parity_sets(self.k).ok()?;
        let mut signs = DVector::zeros(self.nbar.len());
        for &i in &parity.odd {
            signs[i - 1] = 1.0;
        }
        for &j in &parity.even {
            signs[j - 1] = -1.0;
        }
        let objective = CriterionObjective { weights: DVector::from_column_slice(self.nbar.values()) };

        // the interval at the optimizer's own means decides which boundary is
        // active; try both shifted boundaries and keep the best feasible one
        let shifts: Vec<f64> = if gamma == 0.0 { vec![0.0] } else { vec![gamma, -gamma] };
        let mut best: Option<(f64, MeanVector, bool)> = None;
        for shift in shifts {
            let boundary = HighestBoundary { signs: signs.clone(), shift, m };
            for start in self.starts(m) {
                let out = maximize_single_equality(&objective, &boundary, &start, 1e-10, 120);
                let ok = out.converged
                    || (out.violation <= 1e-7 && out.kkt_residual.is_finite() && out.kkt_residual <= 1e-5);
                if !ok {
                    continue;
                }
                let Ok(means) = MeanVector::new(out.x.iter().map(|v| v.exp()).collect()) else {
                    continue;
                };
                let cand = (out.value, means, out.converged);
                if best.as_ref().map_or(true, |b| cand.0 > b.0) {
                    best = Some(cand);
                }
            }
        }
        best
    }

    fn profile_pairwise(
        &self,
        m: f64,
        constraints: &[crate::restrictions::PairwiseConstraint],
    ) -> Option<(f64, MeanVector, bool)> {
        let objective = CriterionObjective { weights: DVector::from_column_slice(self.nbar.values()) };
        let scale = m * (1.0 + self.nbar.total());
        let mut cons: Vec<Box<dyn Smooth>> = Vec::new();
        cons.push(Box::new(TotalCap { m }));
        for c in constraints {
            let cells = pair_cells(self.k, c.r, c.t).ok()?;
            let to_idx = |v: &Vec<usize>| v.iter().map(|&i| i - 1).collect::<Vec<_>>();
            let (a, b, cc) = (
                ExpGroup { idx: to_idx(&cells.both) },
                ExpGroup { idx: to_idx(&cells.first_only) },
                ExpGroup { idx: to_idx(&cells.second_only) },
            );
            // lower side: eta b c - a (M - a - b - c) <= 0  ->  sign +1, bound eta
            cons.push(Box::new(PairBoundary {
                a: a.clone(),
                b: b.clone(),
                c: cc.clone(),
                bound: c.eta,
                sign: 1.0,
                m,
                scale,
            }));
            // upper side: a (M - a - b - c) - xi b c <= 0  ->  sign -1, bound xi
            cons.push(Box::new(PairBoundary {
                a,
                b,
                c: cc,
                bound: c.xi,
                sign: -1.0,
                m,
                scale,
            }));
        }
        let cons_refs: Vec<&dyn Smooth> = cons.iter().map(|b| b.as_ref()).collect();
        let opts = AugLagOptions::default();
        let mut best: Option<(f64, MeanVector, bool)> = None;
        for start in self.starts(m) {
            let out = maximize_auglag(&objective, &[], &cons_refs, &start, &opts);
            if out.violation > 1e-7 {
                continue;
            }
            let Ok(means) = MeanVector::new(out.x.iter().map(|v| v.exp()).collect()) else {
                continue;
            };
            let cand = (out.value, means, out.converged);
            if best.as_ref().map_or(true, |b| cand.0 > b.0) {
                best = Some(cand);
            }
        }
        best
    }

    /// Likelihood-ratio statistic at candidate size `m`.
    pub fn profile_lr(&self, m: f64) -> ProfilePoint {
        if m <= 0.0 {
            return ProfilePoint { m, lr: f64::INFINITY, minimizer: None, feasible: false, converged: true };
        }
        if let Some((lo, hi)) = self.plateau {
            if m >= lo && m <= hi {
                return ProfilePoint {
                    m,
                    lr: 0.0,
                    minimizer: Some(self.nbar.clone()),
                    feasible: true,
                    converged: true,
                };
            }
        }
        match self.profile_value(m) {
            Some((value, minimizer, converged)) => {
                let lr = (2.0 * self.cfg.n_tables as f64 * (self.anchor_value - value)).max(0.0);
                ProfilePoint { m, lr, minimizer: Some(minimizer), feasible: true, converged }
            }
            None => ProfilePoint { m, lr: f64::INFINITY, minimizer: None, feasible: false, converged: false },
        }
    }
}

/// Invert the profile-likelihood test into a confidence interval.
pub fn invert_pl_ci(
    nbar: &MeanVector,
    spec: &RestrictionSpec,
    cfg: &PlConfig,
) -> Result<CiResult> {
    let threshold = chi2_threshold(cfg.alpha)?;
    let n_obs = nbar.total();
    let floor = if cfg.truncate_at_observed { n_obs.max(1.0) } else { 1.0 };
    let cap = spec.delta;
    let mut evaluated: Vec<GridOutcome> = Vec::new();

    let ctx = match ProfileContext::new(nbar.clone(), spec.clone(), cfg.clone()) {
        Ok(ctx) => ctx,
        Err(Error::Infeasible(_)) => return Ok(CiResult::empty_set(CiDiagnostics::default())),
        Err(e) => return Err(e),
    };

    let lr_at = |m: f64, evaluated: &mut Vec<GridOutcome>| -> f64 {
        let p = ctx.profile_lr(m);
        evaluated.push(GridOutcome { m, accepted: p.lr <= threshold });
        p.lr
    };
    let diag = |evaluated: Vec<GridOutcome>| CiDiagnostics {
        evaluated,
        ..CiDiagnostics::default()
    };

    let anchor = ctx.anchor_m().clamp(floor.min(cap), cap);
    if lr_at(anchor, &mut evaluated) > threshold {
        // the whole profile exceeds the threshold: empty set
        return Ok(CiResult::empty_set(diag(evaluated)));
    }

    // known-accepted bracket endpoints, preferring the zero-statistic plateau
    let (mut acc_lo, mut acc_hi) = ctx.plateau().unwrap_or((anchor, anchor));
    acc_lo = acc_lo.clamp(floor, cap);
    acc_hi = acc_hi.clamp(floor, cap);
    if acc_lo < anchor && lr_at(acc_lo, &mut evaluated) > threshold {
        acc_lo = anchor;
    }
    if acc_hi > anchor && lr_at(acc_hi, &mut evaluated) > threshold {
        acc_hi = anchor;
    }

    // lower endpoint
    let mut truncated = false;
    let raw_lo = if lr_at(floor, &mut evaluated) <= threshold {
        truncated = cfg.truncate_at_observed;
        floor
    } else {
        let (mut rej, mut acc) = (floor, acc_lo);
        while acc - rej > cfg.resolution {
            let mid = 0.5 * (rej + acc);
            if lr_at(mid, &mut evaluated) <= threshold {
                acc = mid;
            } else {
                rej = mid;
            }
        }
        acc
    };

    // upper endpoint: expand geometrically from the plateau, then bisect
    let mut infinite_upper = false;
    let raw_hi = if lr_at(cap, &mut evaluated) <= threshold {
        infinite_upper = true;
        cap
    } else {
        let mut acc = acc_hi;
        let mut rej = cap;
        let mut probe = (acc_hi * 1.5).min(cap);
        loop {
            if lr_at(probe, &mut evaluated) <= threshold {
                acc = probe;
                if probe >= cap {
                    break;
                }
                probe = (probe * 2.0).min(cap);
            } else {
                rej = probe;
                break;
            }
        }
        while rej - acc > cfg.resolution {
            let mid = 0.5 * (acc + rej);
            if lr_at(mid, &mut evaluated) <= threshold {
                acc = mid;
            } else {
                rej = mid;
            }
        }
        acc
    };

    // report integer endpoints, rounded outward
    let lo = if raw_lo <= floor + 1e-9 { raw_lo } else { raw_lo.floor().max(floor) };
    let hi = if infinite_upper { cap } else { raw_hi.ceil().min(cap) };
    Ok(CiResult {
        accepted_points: Vec::new(),
        interval_lo: Some(lo),
        interval_hi: if infinite_upper { None } else { Some(hi) },
        infinite_upper,
        empty: false,
        truncated_at_observed: truncated,
        diagnostics: diag(evaluated),
    })
}

/// Profile-likelihood interval for a point-identified log-linear model: the
/// likelihood is profiled over the coefficients under the constraint that the
/// implied total (including the unobserved cell) equals `M`.
pub fn loglinear_profile_ci(
    design: &DesignInfo,
    counts: &[u64],
    alpha: f64,
) -> Result<(f64, f64)> {
    let threshold = chi2_threshold(alpha)?;
    let fit = crate::loglinear::fit_poisson(design, counts)?;
    let x = design.matrix.clone();
    let p = x.ncols();
    let y = DVector::from_iterator(counts.len(), counts.iter().map(|&v| v as f64));
    // kernel log-likelihood (factorials cancel in the ratio)
    let ll_hat: f64 = {
        let lambda = DVector::from_column_slice(&fit.lambda_hat);
        let eta = &x * &lambda;
        y.dot(&eta) - eta.map(f64::exp).sum()
    };

    struct LogLinObjective {
        x: DMatrix<f64>,
        y: DVector<f64>,
    }
    impl Smooth for LogLinObjective {
        fn eval(&self, lambda: &DVector<f64>) -> Eval {
            let eta = &self.x * lambda;
            let mu = eta.map(f64::exp);
            let value = self.y.dot(&eta) - mu.sum();
            let grad = self.x.transpose() * (&self.y - &mu);
            let mut hess = DMatrix::zeros(lambda.len(), lambda.len());
            for i in 0..self.x.nrows() {
                let row = self.x.row(i);
                for a in 0..lambda.len() {
                    for b in 0..lambda.len() {
                        hess[(a, b)] -= mu[i] * row[a] * row[b];
                    }
                }
            }
            (value, grad, hess)
        }
    }

    struct TotalEquals {
        rows: DMatrix<f64>, // all cells including the unobserved row
        m: f64,
    }
    impl Smooth for TotalEquals {
        fn eval(&self, lambda: &DVector<f64>) -> Eval {
            let eta = &self.rows * lambda;
            let mu = eta.map(f64::exp);
            let value = (mu.sum() - self.m) / self.m;
            let grad = self.rows.transpose() * &mu / self.m;
            let n = lambda.len();
            let mut hess = DMatrix::zeros(n, n);
            for i in 0..self.rows.nrows() {
                let row = self.rows.row(i);
                for a in 0..n {
                    for b in 0..n {
                        hess[(a, b)] += mu[i] * row[a] * row[b] / self.m;
                    }
                }
            }
            (value, grad, hess)
        }
    }

    let mut rows = DMatrix::zeros(x.nrows() + 1, p);
    rows.view_mut((0, 0), (x.nrows(), p)).copy_from(&x);
    rows.row_mut(x.nrows())
        .copy_from(&design.unobserved_row.transpose());

    let objective = LogLinObjective { x: x.clone(), y: y.clone() };
    let lambda_hat = DVector::from_column_slice(&fit.lambda_hat);

    let lr_at = |m: f64| -> f64 {
        let constraint = TotalEquals { rows: rows.clone(), m };
        let mut best = f64::NEG_INFINITY;
        let mut rng = substream(m.to_bits(), 0x6c6c7072, 0);
        for s in 0..4 {
            let start = if s == 0 {
                lambda_hat.clone()
            } else {
                lambda_hat.map(|v| v + 0.05 * (rng.gen::<f64>() - 0.5))
            };
            let out = maximize_single_equality(&objective, &constraint, &start, 1e-10, 120);
            if (out.converged || out.violation < 1e-7) && out.value > best {
                best = out.value;
            }
        }
        2.0 * (ll_hat - best)
    };

    let m_hat = fit.m_hat;
    // bracket and bisect each side
    let lower = {
        let mut acc = m_hat;
        let mut rej = None;
        let mut probe = m_hat / 1.3;
        while probe > 1.0 {
            if lr_at(probe) > threshold {
                rej = Some(probe);
                break;
            }
            acc = probe;
            probe /= 1.3;
        }
        match rej {
            None => probe.max(1.0),
            Some(mut rej) => {
                while acc - rej > 0.5 {
                    let mid = 0.5 * (acc + rej);
                    if lr_at(mid) <= threshold {
                        acc = mid;
                    } else {
                        rej = mid;
                    }
                }
                acc
            }
        }
    };
    let upper = {
        let mut acc = m_hat;
        let mut rej = None;
        let mut probe = m_hat * 1.3;
        while probe < 1e12 {
            if lr_at(probe) > threshold {
                rej = Some(probe);
                break;
            }
            acc = probe;
            probe *= 1.3;
        }
        match rej {
            None => probe,
            Some(mut rej) => {
                while rej - acc > 0.5 {
                    let mid = 0.5 * (acc + rej);
                    if lr_at(mid) <= threshold {
                        acc = mid;
                    } else {
                        rej = mid;
                    }
                }
                acc
            }
        }
    };
    Ok((lower, upper))
}
