//! k-sample capture-recapture tables: capture histories, subset indexing,
//! design vectors, parity sets, and pairwise marginal aggregation.
//!
//! Subset `i` of `0..2^k` encodes a capture history through the binary
//! representation of `i` with sample 1 as the most significant bit, so for
//! `k = 3`, `i = 4` is the history `(1,0,0)` (captured in sample 1 only).
//! Subset 0 (never captured) is unobserved; a table stores counts for the
//! `c = 2^k - 1` observed subsets.

use crate::error::{Error, Result};
use serde::Deserialize;
use std::collections::BTreeSet;
use std::fmt;

/// Upper bound on the sample count; keeps `2^k` table sizes within memory.
pub const MAX_SAMPLES: usize = 20;

fn check_k(k: usize) -> Result<()> {
    if !(2..=MAX_SAMPLES).contains(&k) {
        return Err(Error::InvalidInput(format!(
            "sample count k must be in 2..={MAX_SAMPLES}, got {k}"
        )));
    }
    Ok(())
}

/// Binary capture indicators `(s_1, ..., s_k)` for one subset.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CaptureHistory {
    bits: Vec<u8>,
}

impl CaptureHistory {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        check_k(bits.len())?;
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::InvalidInput("capture history entries must be 0 or 1".into()));
        }
        Ok(CaptureHistory { bits })
    }

    /// History for subset index `i` (sample 1 = most significant bit).
    pub fn from_index(i: usize, k: usize) -> Result<Self> {
        check_k(k)?;
        if i >= 1 << k {
            return Err(Error::InvalidInput(format!(
                "subset index {i} out of range for k={k}"
            )));
        }
        let bits = (0..k).map(|t| ((i >> (k - 1 - t)) & 1) as u8).collect();
        Ok(CaptureHistory { bits })
    }

    /// Parse a bit-string such as `"011"`.
    pub fn from_bit_string(s: &str) -> Result<Self> {
        let bits: Vec<u8> = s
            .chars()
            .map(|ch| match ch {
                '0' => Ok(0),
                '1' => Ok(1),
                other => Err(Error::Parse(format!(
                    "malformed history bit-string {s:?}: unexpected {other:?}"
                ))),
            })
            .collect::<Result<_>>()?;
        check_k(bits.len()).map_err(|_| {
            Error::Parse(format!(
                "history bit-string {s:?} has length {}, need 2..={MAX_SAMPLES}",
                s.len()
            ))
        })?;
        Ok(CaptureHistory { bits })
    }

    /// Subset index of this history.
    pub fn index(&self) -> usize {
        self.bits.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize)
    }

    pub fn k(&self) -> usize {
        self.bits.len()
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    /// Number of samples in which the unit was captured.
    pub fn capture_count(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    /// 1 if the unit was captured in `sample` (1-based), else 0.
    pub fn captured_in(&self, sample: usize) -> u8 {
        self.bits[sample - 1]
    }
}

impl fmt::Display for CaptureHistory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.bits {
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

/// History for subset index `i`.
pub fn index_to_history(i: usize, k: usize) -> Result<CaptureHistory> {
    CaptureHistory::from_index(i, k)
}

/// Subset index of a history.
pub fn history_to_index(h: &CaptureHistory) -> usize {
    h.index()
}

/// All nonempty subsets of `{1..k}` in graded lexicographic order: singletons
/// first, then pairs, up to the full set. Positions here define the design
/// vector layout after the intercept.
pub fn term_order(k: usize) -> Vec<Vec<usize>> {
    let mut terms: Vec<Vec<usize>> = (1usize..1 << k)
        .map(|mask| (1..=k).filter(|s| mask >> (s - 1) & 1 == 1).collect())
        .collect();
    terms.sort_by(|a, b| (a.len(), a).cmp(&(b.len(), b)));
    terms
}

/// Indicator row of length `2^k`: intercept, then one entry per interaction
/// term in [`term_order`]. The entry for term `T` is 1 iff the unit was
/// captured in every sample of `T`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DesignVector {
    entries: Vec<u8>,
}

impl DesignVector {
    pub fn entries(&self) -> &[u8] {
        &self.entries
    }
}

/// Design vector for one capture history.
pub fn design_vector(h: &CaptureHistory) -> DesignVector {
    let mut entries = Vec::with_capacity(1 << h.k());
    entries.push(1u8);
    for term in term_order(h.k()) {
        entries.push(term.iter().all(|&s| h.captured_in(s) == 1) as u8);
    }
    DesignVector { entries }
}

/// Observed subset indices split by the parity of the capture count:
/// `odd` has the subsets captured an odd number of times, `even` the
/// remaining observed subsets (index 0 excluded).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParitySets {
    pub odd: Vec<usize>,
    pub even: Vec<usize>,
}

/// Parity partition of the observed subsets for `k` samples.
pub fn parity_sets(k: usize) -> Result<ParitySets> {
    check_k(k)?;
    let mut odd = Vec::new();
    let mut even = Vec::new();
    for i in 1usize..1 << k {
        if i.count_ones() % 2 == 1 {
            odd.push(i);
        } else {
            even.push(i);
        }
    }
    Ok(ParitySets { odd, even })
}

/// Aggregated counts for a sample pair `(r, t)`. `n00` counts only observed
/// units (those captured in at least one of the other samples).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairwiseMarginal {
    pub n11: u64,
    pub n10: u64,
    pub n01: u64,
    pub n00: u64,
}

/// Observed subset indices grouped by their `(s_r, s_t)` pattern.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairCells {
    pub both: Vec<usize>,
    pub first_only: Vec<usize>,
    pub second_only: Vec<usize>,
    pub neither: Vec<usize>,
}

/// Group the observed subsets of a `k`-sample table by the capture pattern
/// in samples `r` and `t` (1-based, `r < t`).
pub fn pair_cells(k: usize, r: usize, t: usize) -> Result<PairCells> {
    check_k(k)?;
    if r == t || r < 1 || t < 1 || r > k || t > k {
        return Err(Error::InvalidInput(format!(
            "sample pair ({r}, {t}) invalid for k={k}"
        )));
    }
    let mut cells = PairCells {
        both: Vec::new(),
        first_only: Vec::new(),
        second_only: Vec::new(),
        neither: Vec::new(),
    };
    for i in 1usize..1 << k {
        let h = CaptureHistory::from_index(i, k)?;
        match (h.captured_in(r), h.captured_in(t)) {
            (1, 1) => cells.both.push(i),
            (1, 0) => cells.first_only.push(i),
            (0, 1) => cells.second_only.push(i),
            _ => cells.neither.push(i),
        }
    }
    Ok(cells)
}

/// Observed counts of a k-sample capture-recapture study. Index `i` runs over
/// subsets `1..=c` with `c = 2^k - 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    k: usize,
    counts: Vec<u64>,
}

impl ContingencyTable {
    pub fn new(k: usize, counts: Vec<u64>) -> Result<Self> {
        check_k(k)?;
        let c = (1usize << k) - 1;
        if counts.len() != c {
            return Err(Error::InvalidInput(format!(
                "expected {c} observed cells for k={k}, got {}",
                counts.len()
            )));
        }
        Ok(ContingencyTable { k, counts })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of observed cells, `2^k - 1`.
    pub fn cell_count(&self) -> usize {
        self.counts.len()
    }

    /// Count for observed subset `i` in `1..=c`.
    pub fn count(&self, i: usize) -> u64 {
        self.counts[i - 1]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Total observed units.
    pub fn n_obs(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Marginal counts for samples `r < t`.
    pub fn pairwise_marginal(&self, r: usize, t: usize) -> Result<PairwiseMarginal> {
        let cells = pair_cells(self.k, r, t)?;
        let sum = |ids: &[usize]| ids.iter().map(|&i| self.count(i)).sum();
        Ok(PairwiseMarginal {
            n11: sum(&cells.both),
            n10: sum(&cells.first_only),
            n01: sum(&cells.second_only),
            n00: sum(&cells.neither),
        })
    }

    /// Collapse onto a subset of samples, summing counts over the dropped
    /// ones. Units observed only in dropped samples leave the table.
    pub fn collapse(&self, samples: &[usize]) -> Result<ContingencyTable> {
        let wanted: BTreeSet<usize> = samples.iter().copied().collect();
        if wanted.len() != samples.len() || wanted.iter().any(|&s| s < 1 || s > self.k) {
            return Err(Error::InvalidInput(format!(
                "collapse samples {samples:?} invalid for k={}",
                self.k
            )));
        }
        let kk = wanted.len();
        check_k(kk)?;
        let ordered: Vec<usize> = wanted.into_iter().collect();
        let mut counts = vec![0u64; (1 << kk) - 1];
        for i in 1..1usize << self.k {
            let h = CaptureHistory::from_index(i, self.k)?;
            let mut j = 0usize;
            for (pos, &s) in ordered.iter().enumerate() {
                j |= (h.captured_in(s) as usize) << (kk - 1 - pos);
            }
            if j >= 1 {
                counts[j - 1] += self.count(i);
            }
        }
        ContingencyTable::new(kk, counts)
    }
}

#[derive(Deserialize)]
struct JsonCell {
    history: String,
    count: i64,
}

#[derive(Deserialize)]
struct JsonTable {
    k: usize,
    cells: Vec<JsonCell>,
    #[serde(default)]
    #[allow(dead_code)]
    description: Option<String>,
}

/// A parsed table plus the observed subsets that were absent from the input
/// and defaulted to zero.
#[derive(Debug, Clone)]
pub struct ParsedTable {
    pub table: ContingencyTable,
    pub defaulted_cells: Vec<usize>,
}

fn assemble(k: usize, entries: Vec<(CaptureHistory, i64)>) -> Result<ParsedTable> {
    check_k(k)?;
    let c = (1usize << k) - 1;
    let mut counts: Vec<Option<u64>> = vec![None; c];
    for (h, count) in entries {
        if h.k() != k {
            return Err(Error::Parse(format!(
                "history {h} has {} samples, table declares k={k}",
                h.k()
            )));
        }
        if count < 0 {
            return Err(Error::Parse(format!("negative count {count} for history {h}")));
        }
        let i = h.index();
        if i == 0 {
            return Err(Error::Parse(
                "history of all zeros is the unobserved subset and cannot carry a count".into(),
            ));
        }
        if counts[i - 1].is_some() {
            return Err(Error::Parse(format!("duplicate history {h}")));
        }
        counts[i - 1] = Some(count as u64);
    }
    let mut defaulted = Vec::new();
    let counts = counts
        .into_iter()
        .enumerate()
        .map(|(idx, c)| {
            c.unwrap_or_else(|| {
                defaulted.push(idx + 1);
                0
            })
        })
        .collect();
    if !defaulted.is_empty() {
        log::warn!("input table missing {} observed cell(s); defaulted to 0", defaulted.len());
    }
    Ok(ParsedTable {
        table: ContingencyTable::new(k, counts)?,
        defaulted_cells: defaulted,
    })
}

/// Parse the JSON table format `{"k": 3, "cells": [{"history": "001", "count": 21}, ...]}`.
pub fn parse_table_json(source: &str) -> Result<ParsedTable> {
    let raw: JsonTable =
        serde_json::from_str(source).map_err(|e| Error::Parse(format!("table JSON: {e}")))?;
    let entries = raw
        .cells
        .into_iter()
        .map(|cell| Ok((CaptureHistory::from_bit_string(&cell.history)?, cell.count)))
        .collect::<Result<Vec<_>>>()?;
    assemble(raw.k, entries)
}

/// Parse the CSV table format with header `history,count`; `k` is inferred
/// from the bit-string length.
pub fn parse_table_csv(source: &str) -> Result<ParsedTable> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source.as_bytes());
    let headers = reader.headers()?.clone();
    let h_idx = headers.iter().position(|h| h == "history");
    let c_idx = headers.iter().position(|h| h == "count");
    let (h_idx, c_idx) = match (h_idx, c_idx) {
        (Some(h), Some(c)) => (h, c),
        _ => {
            return Err(Error::Parse(
                "CSV table needs a header with `history` and `count` columns".into(),
            ))
        }
    };
    let mut entries = Vec::new();
    for record in reader.records() {
        let record = record?;
        let history = CaptureHistory::from_bit_string(&record[h_idx])?;
        let count: i64 = record[c_idx]
            .parse()
            .map_err(|_| Error::Parse(format!("malformed count {:?}", &record[c_idx])))?;
        entries.push((history, count));
    }
    let k = match entries.first() {
        Some((h, _)) => h.k(),
        None => return Err(Error::Parse("CSV table has no rows".into())),
    };
    assemble(k, entries)
}

/// Table input format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Json,
    Csv,
}

/// Parse a table from structured text in the given format.
pub fn parse_table(source: &str, format: TableFormat) -> Result<ParsedTable> {
    match format {
        TableFormat::Json => parse_table_json(source),
        TableFormat::Csv => parse_table_csv(source),
    }
}

/// The bundled example data: three overlapping samples of people who inject
/// drugs, Brussels 2019 (fieldwork study; low-threshold treatment centers;
/// crisis intervention center and shelter). 306 unique individuals observed.
pub fn pwid_example() -> ContingencyTable {
    ContingencyTable::new(3, vec![21, 103, 13, 89, 29, 24, 27]).expect("static fixture")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn history_round_trips_with_index() {
        let h = CaptureHistory::from_index(3, 3).unwrap();
        assert_eq!(h.bits(), &[0, 1, 1]);
        assert_eq!(h.index(), 3);
        let h0 = CaptureHistory::from_index(0, 3).unwrap();
        assert_eq!(h0.bits(), &[0, 0, 0]);
        let h7 = CaptureHistory::from_index(7, 3).unwrap();
        assert_eq!(h7.bits(), &[1, 1, 1]);
        // sample 1 is the most significant bit
        assert_eq!(CaptureHistory::from_index(4, 3).unwrap().bits(), &[1, 0, 0]);
    }

    #[test]
    fn index_out_of_range_errors() {
        assert!(CaptureHistory::from_index(8, 3).is_err());
        assert!(CaptureHistory::from_index(0, 1).is_err());
        assert!(CaptureHistory::from_index(0, 21).is_err());
    }

    #[test]
    fn design_vectors_match_interaction_coding() {
        let dv = |bits: Vec<u8>| {
            design_vector(&CaptureHistory::new(bits).unwrap())
                .entries()
                .to_vec()
        };
        assert_eq!(dv(vec![0, 1, 1]), vec![1, 0, 1, 1, 0, 0, 1, 0]);
        assert_eq!(dv(vec![0, 0, 0]), vec![1, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(dv(vec![1, 1, 1]), vec![1, 1, 1, 1, 1, 1, 1, 1]);
        assert_eq!(dv(vec![1, 0, 1]), vec![1, 1, 0, 1, 0, 1, 0, 0]);
    }

    #[test]
    fn design_entry_is_product_of_singleton_entries() {
        for k in 2..=5usize {
            let terms = term_order(k);
            for i in 0..1usize << k {
                let h = CaptureHistory::from_index(i, k).unwrap();
                let d = design_vector(&h);
                for (pos, term) in terms.iter().enumerate() {
                    let prod: u8 = term.iter().map(|&s| h.captured_in(s)).product();
                    assert_eq!(d.entries()[pos + 1], prod);
                }
            }
        }
    }

    #[test]
    fn parity_sets_for_small_k() {
        let p = parity_sets(3).unwrap();
        assert_eq!(p.odd, vec![1, 2, 4, 7]);
        assert_eq!(p.even, vec![3, 5, 6]);
        let p2 = parity_sets(2).unwrap();
        assert_eq!(p2.odd, vec![1, 2]);
        assert_eq!(p2.even, vec![3]);
    }

    #[test]
    fn parity_partition_properties() {
        for k in 2..=10usize {
            let p = parity_sets(k).unwrap();
            assert_eq!(p.odd.len(), 1 << (k - 1));
            assert_eq!(p.odd.len(), p.even.len() + 1);
            assert!(!p.even.contains(&0));
            let mut all: Vec<usize> = p.odd.iter().chain(p.even.iter()).copied().collect();
            all.push(0);
            all.sort_unstable();
            assert_eq!(all, (0..1 << k).collect::<Vec<_>>());
        }
    }

    #[test]
    fn pwid_pairwise_marginals() {
        let t = pwid_example();
        let m12 = t.pairwise_marginal(1, 2).unwrap();
        assert_eq!((m12.n11, m12.n10, m12.n01, m12.n00), (51, 118, 116, 21));
        let m13 = t.pairwise_marginal(1, 3).unwrap();
        assert_eq!((m13.n11, m13.n10, m13.n01, m13.n00), (56, 113, 34, 103));
        let m23 = t.pairwise_marginal(2, 3).unwrap();
        assert_eq!((m23.n11, m23.n10, m23.n01, m23.n00), (40, 127, 50, 89));
    }

    #[test]
    fn all_zero_table_has_zero_marginals() {
        let t = ContingencyTable::new(3, vec![0; 7]).unwrap();
        let m = t.pairwise_marginal(1, 2).unwrap();
        assert_eq!((m.n11, m.n10, m.n01, m.n00), (0, 0, 0, 0));
    }

    #[test]
    fn marginals_conserve_total() {
        let t = pwid_example();
        for (r, s) in [(1, 2), (1, 3), (2, 3)] {
            let m = t.pairwise_marginal(r, s).unwrap();
            assert_eq!(m.n11 + m.n10 + m.n01 + m.n00, t.n_obs());
        }
    }

    #[test]
    fn bad_pair_errors() {
        let t = pwid_example();
        assert!(t.pairwise_marginal(2, 2).is_err());
        assert!(t.pairwise_marginal(1, 4).is_err());
    }

    #[test]
    fn collapse_to_pair_matches_marginals() {
        let t = pwid_example();
        let c12 = t.collapse(&[1, 2]).unwrap();
        // collapsed cells: i=1 -> (0,1), i=2 -> (1,0), i=3 -> (1,1)
        assert_eq!(c12.counts(), &[116, 118, 51]);
        assert_eq!(c12.n_obs(), 285);
    }

    #[test]
    fn parse_json_table() {
        let src = r#"{"k": 3, "cells": [
            {"history": "001", "count": 21}, {"history": "010", "count": 103},
            {"history": "011", "count": 13}, {"history": "100", "count": 89},
            {"history": "101", "count": 29}, {"history": "110", "count": 24},
            {"history": "111", "count": 27}]}"#;
        let parsed = parse_table_json(src).unwrap();
        assert_eq!(parsed.table, pwid_example());
        assert!(parsed.defaulted_cells.is_empty());
    }

    #[test]
    fn parse_json_orders_histories_canonically() {
        let src = r#"{"k": 2, "cells": [
            {"history": "11", "count": 3}, {"history": "01", "count": 1},
            {"history": "10", "count": 2}]}"#;
        let parsed = parse_table_json(src).unwrap();
        assert_eq!(parsed.table.counts(), &[1, 2, 3]);
    }

    #[test]
    fn parse_defaults_missing_cells_with_warning_list() {
        let src = r#"{"k": 2, "cells": [{"history": "11", "count": 3}]}"#;
        let parsed = parse_table_json(src).unwrap();
        assert_eq!(parsed.table.counts(), &[0, 0, 3]);
        assert_eq!(parsed.defaulted_cells, vec![1, 2]);
    }

    #[test]
    fn parse_rejects_bad_input() {
        // duplicate history
        let dup = r#"{"k": 2, "cells": [{"history": "11", "count": 3}, {"history": "11", "count": 1}]}"#;
        assert!(parse_table_json(dup).is_err());
        // negative count
        let neg = r#"{"k": 2, "cells": [{"history": "11", "count": -3}]}"#;
        assert!(parse_table_json(neg).is_err());
        // malformed bit-string
        let bad = r#"{"k": 2, "cells": [{"history": "1x", "count": 3}]}"#;
        assert!(parse_table_json(bad).is_err());
        // unobserved subset
        let zero = r#"{"k": 2, "cells": [{"history": "00", "count": 3}]}"#;
        assert!(parse_table_json(zero).is_err());
        // wrong history length
        let len = r#"{"k": 3, "cells": [{"history": "11", "count": 3}]}"#;
        assert!(parse_table_json(len).is_err());
    }

    #[test]
    fn parse_csv_table() {
        let src = "history,count\n001,21\n010,103\n011,13\n100,89\n101,29\n110,24\n111,27\n";
        let parsed = parse_table_csv(src).unwrap();
        assert_eq!(parsed.table, pwid_example());
    }
}
