//! Polynomials in independent Poisson cell counts, with exact expectations.
//!
//! A [`CellPolynomial`] is a sum of monomials `coeff * prod_i N_i^{p_i}` over
//! cell indices. Because the cells are independent, the expectation of a
//! monomial factorizes into per-cell raw Poisson moments, which are Touchard
//! polynomials in the cell mean.

use crate::error::{Error, Result};
use crate::restrictions::MeanVector;
use std::collections::BTreeMap;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::OnceLock;

/// Exponent map of one monomial: sorted `(cell index, power)` pairs.
pub type Exponents = Vec<(usize, u32)>;

/// Polynomial in the observed cell counts `N_1..N_c`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CellPolynomial {
    terms: BTreeMap<Exponents, f64>,
}

impl CellPolynomial {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(value: f64) -> Self {
        let mut terms = BTreeMap::new();
        if value != 0.0 {
            terms.insert(Vec::new(), value);
        }
        CellPolynomial { terms }
    }

    /// The single variable `N_i` (cell index `i >= 1`).
    pub fn cell(i: usize) -> Self {
        assert!(i >= 1, "cell indices are 1-based");
        let mut terms = BTreeMap::new();
        terms.insert(vec![(i, 1)], 1.0);
        CellPolynomial { terms }
    }

    /// Sum of the given cells, e.g. a pairwise aggregate or the observed total.
    pub fn sum_of_cells<I: IntoIterator<Item = usize>>(cells: I) -> Self {
        let mut out = Self::zero();
        for i in cells {
            out = out + Self::cell(i);
        }
        out
    }

    /// Product of the given cells as a single monomial.
    pub fn product_of_cells<I: IntoIterator<Item = usize>>(cells: I) -> Self {
        let mut exps: BTreeMap<usize, u32> = BTreeMap::new();
        for i in cells {
            assert!(i >= 1, "cell indices are 1-based");
            *exps.entry(i).or_insert(0) += 1;
        }
        let mut terms = BTreeMap::new();
        terms.insert(exps.into_iter().collect::<Exponents>(), 1.0);
        CellPolynomial { terms }
    }

    fn insert(&mut self, exps: Exponents, coeff: f64) {
        if coeff == 0.0 {
            return;
        }
        use std::collections::btree_map::Entry;
        match self.terms.entry(exps) {
            Entry::Vacant(slot) => {
                slot.insert(coeff);
            }
            Entry::Occupied(mut slot) => {
                let updated = slot.get() + coeff;
                if updated == 0.0 {
                    slot.remove();
                } else {
                    *slot.get_mut() = updated;
                }
            }
        }
    }

    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Exponents, f64)> {
        self.terms.iter().map(|(e, &c)| (e, c))
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Total degree of the polynomial.
    pub fn degree(&self) -> u32 {
        self.terms
            .keys()
            .map(|e| e.iter().map(|&(_, p)| p).sum())
            .max()
            .unwrap_or(0)
    }

    /// Largest power of any single cell.
    pub fn max_cell_power(&self) -> u32 {
        self.terms
            .keys()
            .flat_map(|e| e.iter().map(|&(_, p)| p))
            .max()
            .unwrap_or(0)
    }

    /// Largest cell index referenced.
    pub fn max_cell_index(&self) -> usize {
        self.terms
            .keys()
            .flat_map(|e| e.iter().map(|&(i, _)| i))
            .max()
            .unwrap_or(0)
    }

    /// Evaluate at realized counts (`values[i-1]` is cell `i`).
    pub fn eval(&self, values: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(exps, &coeff)| {
                exps.iter()
                    .fold(coeff, |acc, &(i, p)| acc * values[i - 1].powi(p as i32))
            })
            .sum()
    }

    /// Exact expectation under independent Poisson cells with the given means.
    pub fn poisson_mean(&self, means: &MeanVector) -> f64 {
        self.terms
            .iter()
            .map(|(exps, &coeff)| {
                exps.iter()
                    .fold(coeff, |acc, &(i, p)| acc * touchard(p, means.get(i)))
            })
            .sum()
    }

    fn validate_cells(&self, means: &MeanVector) -> Result<()> {
        if self.max_cell_index() > means.len() {
            return Err(Error::InvalidInput(format!(
                "polynomial references cell {} but only {} means were given",
                self.max_cell_index(),
                means.len()
            )));
        }
        Ok(())
    }
}

impl Add for CellPolynomial {
    type Output = CellPolynomial;
    fn add(self, rhs: CellPolynomial) -> CellPolynomial {
        let mut out = self;
        for (exps, coeff) in rhs.terms {
            out.insert(exps, coeff);
        }
        out
    }
}

impl Sub for CellPolynomial {
    type Output = CellPolynomial;
    fn sub(self, rhs: CellPolynomial) -> CellPolynomial {
        self + (-rhs)
    }
}

impl Neg for CellPolynomial {
    type Output = CellPolynomial;
    fn neg(self) -> CellPolynomial {
        CellPolynomial {
            terms: self.terms.into_iter().map(|(e, c)| (e, -c)).collect(),
        }
    }
}

impl Mul<f64> for CellPolynomial {
    type Output = CellPolynomial;
    fn mul(self, rhs: f64) -> CellPolynomial {
        if rhs == 0.0 {
            return CellPolynomial::zero();
        }
        CellPolynomial {
            terms: self.terms.into_iter().map(|(e, c)| (e, c * rhs)).collect(),
        }
    }
}

impl Mul for &CellPolynomial {
    type Output = CellPolynomial;
    fn mul(self, rhs: &CellPolynomial) -> CellPolynomial {
        let mut out = CellPolynomial::zero();
        for (ea, &ca) in &self.terms {
            for (eb, &cb) in &rhs.terms {
                let mut merged: BTreeMap<usize, u32> = ea.iter().copied().collect();
                for &(i, p) in eb {
                    *merged.entry(i).or_insert(0) += p;
                }
                out.insert(merged.into_iter().collect(), ca * cb);
            }
        }
        out
    }
}

/// Exact expectation of `poly` under independent Poisson cells.
pub fn poisson_mean(poly: &CellPolynomial, means: &MeanVector) -> Result<f64> {
    poly.validate_cells(means)?;
    Ok(poly.poisson_mean(means))
}

/// Exact variance of `poly` under independent Poisson cells, via symbolic
/// squaring: `Var = E[p^2] - (E p)^2`.
pub fn poisson_variance(poly: &CellPolynomial, means: &MeanVector) -> Result<f64> {
    poly.validate_cells(means)?;
    let mean = poly.poisson_mean(means);
    let square = poly * poly;
    Ok(square.poisson_mean(means) - mean * mean)
}

const STIRLING_CACHE_ROWS: usize = 65;

fn stirling_table() -> &'static Vec<Vec<f64>> {
    static TABLE: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(STIRLING_CACHE_ROWS);
        rows.push(vec![1.0]);
        for r in 1..STIRLING_CACHE_ROWS {
            let prev = &rows[r - 1];
            let mut row = vec![0.0; r + 1];
            for j in 1..=r {
                let carry = if j < prev.len() { prev[j] } else { 0.0 };
                row[j] = j as f64 * carry + prev[j - 1];
            }
            rows.push(row);
        }
        rows
    })
}

/// Raw Poisson moment `E[N^r]` for `N ~ Poisson(m)`: the Touchard polynomial
/// `sum_j S(r, j) m^j` with Stirling numbers of the second kind.
pub fn touchard(r: u32, m: f64) -> f64 {
    let r = r as usize;
    if r == 0 {
        return 1.0;
    }
    if r < STIRLING_CACHE_ROWS {
        let row = &stirling_table()[r];
        let mut acc = 0.0;
        for j in (1..=r).rev() {
            acc = acc * m + row[j];
        }
        return acc * m;
    }
    // powers beyond the cache are computed on the fly
    let mut prev = vec![0.0; r + 1];
    prev[0] = 1.0;
    for rr in 1..=r {
        let mut row = vec![0.0; r + 1];
        for j in 1..=rr {
            row[j] = j as f64 * prev[j] + prev[j - 1];
        }
        prev = row;
    }
    let mut acc = 0.0;
    for j in (1..=r).rev() {
        acc = acc * m + prev[j];
    }
    acc * m
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn means(vals: &[f64]) -> MeanVector {
        MeanVector::new(vals.to_vec()).unwrap()
    }

    #[test]
    fn touchard_small_orders() {
        let m = 4.0;
        assert_relative_eq!(touchard(0, m), 1.0);
        assert_relative_eq!(touchard(1, m), m);
        assert_relative_eq!(touchard(2, m), m + m * m);
        assert_relative_eq!(touchard(3, m), m + 3.0 * m * m + m.powi(3));
        assert_relative_eq!(touchard(4, m), m + 7.0 * m * m + 6.0 * m.powi(3) + m.powi(4));
    }

    #[test]
    fn mean_of_independent_product() {
        let p = &CellPolynomial::cell(1) * &CellPolynomial::cell(2);
        assert_relative_eq!(poisson_mean(&p, &means(&[2.0, 3.0, 1.0])).unwrap(), 6.0);
    }

    #[test]
    fn mean_of_square_includes_poisson_excess() {
        let p = &CellPolynomial::cell(1) * &CellPolynomial::cell(1);
        assert_relative_eq!(poisson_mean(&p, &means(&[4.0, 1.0, 1.0])).unwrap(), 20.0);
    }

    #[test]
    fn variance_basics() {
        let m = means(&[5.0, 2.0, 3.0]);
        let n1 = CellPolynomial::cell(1);
        assert_relative_eq!(poisson_variance(&n1, &m).unwrap(), 5.0);
        let m2 = means(&[2.0, 3.0, 1.0]);
        let s = CellPolynomial::cell(1) + CellPolynomial::cell(2);
        assert_relative_eq!(poisson_variance(&s, &m2).unwrap(), 5.0);
    }

    #[test]
    fn mean_matches_truncated_exact_summation() {
        // independent oracle: per-cell truncated sums of n^p e^{-m} m^n / n!
        fn raw_moment_truncated(p: u32, m: f64) -> f64 {
            let mut total = 0.0;
            let mut pmf = (-m).exp();
            let mut n = 0u64;
            let mut tail = 1.0 - pmf;
            loop {
                total += (n as f64).powi(p as i32) * pmf;
                if tail < 1e-14 && n as f64 > m {
                    break;
                }
                n += 1;
                pmf *= m / n as f64;
                tail -= pmf;
                if n > 500 {
                    break;
                }
            }
            total
        }
        let m = means(&[7.0, 2.5, 10.0, 0.8]);
        let poly = (&CellPolynomial::cell(1) * &CellPolynomial::cell(3))
            + CellPolynomial::product_of_cells([2, 2, 4]) * 1.75
            - CellPolynomial::cell(4) * 3.0
            + CellPolynomial::constant(2.0);
        let expect: f64 = poly
            .terms()
            .map(|(exps, coeff)| {
                exps.iter()
                    .fold(coeff, |acc, &(i, p)| acc * raw_moment_truncated(p, m.get(i)))
            })
            .sum();
        assert_relative_eq!(poly.poisson_mean(&m), expect, max_relative = 1e-9);
    }

    #[test]
    fn eval_substitutes_counts() {
        let poly = (&CellPolynomial::cell(1) * &CellPolynomial::cell(1))
            + CellPolynomial::cell(2) * -2.0;
        assert_relative_eq!(poly.eval(&[3.0, 5.0]), 9.0 - 10.0);
    }

    proptest! {
        #[test]
        fn mean_is_linear(a in -5.0f64..5.0, b in -5.0f64..5.0,
                          m1 in 0.1f64..8.0, m2 in 0.1f64..8.0) {
            let m = means(&[m1, m2]);
            let p = CellPolynomial::product_of_cells([1, 1]);
            let q = &CellPolynomial::cell(1) * &CellPolynomial::cell(2);
            let combo = p.clone() * a + q.clone() * b;
            let lhs = combo.poisson_mean(&m);
            let rhs = a * p.poisson_mean(&m) + b * q.poisson_mean(&m);
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs().max(rhs.abs())));
        }

        #[test]
        fn disjoint_products_factorize(m1 in 0.1f64..8.0, m2 in 0.1f64..8.0,
                                        p1 in 1u32..4, p2 in 1u32..4) {
            let m = means(&[m1, m2]);
            let a = CellPolynomial::product_of_cells(std::iter::repeat(1).take(p1 as usize));
            let b = CellPolynomial::product_of_cells(std::iter::repeat(2).take(p2 as usize));
            let prod = &a * &b;
            let lhs = prod.poisson_mean(&m);
            let rhs = a.poisson_mean(&m) * b.poisson_mean(&m);
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
        }

        #[test]
        fn variance_nonnegative(m1 in 0.1f64..9.0, m2 in 0.1f64..9.0, c in -3.0f64..3.0) {
            let m = means(&[m1, m2]);
            let poly = CellPolynomial::cell(1) * c + (&CellPolynomial::cell(2) * &CellPolynomial::cell(1));
            let v = poisson_variance(&poly, &m).unwrap();
            prop_assert!(v >= -1e-7);
        }
    }
}
