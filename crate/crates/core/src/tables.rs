//! Contingency tables of list-membership patterns.
//!
//! A table for `J` lists has `2^J` cells, one per [`CapturePattern`]. Cells are
//! stored densely in lexicographic pattern order, so the all-zero pattern is
//! index 0 and `"1...1"` is the last index. Tables built from observed data
//! never carry a count for the all-zero pattern.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported number of lists.
pub const MAX_LISTS: usize = 20;

/// One cell of the `2^J` table: membership flags for lists `1..=J`.
///
/// Ordering is lexicographic on the flag string, so `"011" < "100"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CapturePattern {
    lists: u8,
    mask: u32,
}

impl CapturePattern {
    pub fn new(bits: &[u8]) -> Result<Self> {
        if bits.is_empty() || bits.len() > MAX_LISTS {
            return Err(Error::Invalid(format!(
                "pattern length must be between 1 and {MAX_LISTS}, got {}",
                bits.len()
            )));
        }
        let mut mask = 0u32;
        for &b in bits {
            if b > 1 {
                return Err(Error::Invalid(format!("pattern flag {b} is not 0 or 1")));
            }
            mask = (mask << 1) | u32::from(b);
        }
        Ok(Self {
            lists: bits.len() as u8,
            mask,
        })
    }

    /// Pattern whose dense cell index is `index` in a table with `lists` lists.
    pub fn from_index(index: usize, lists: usize) -> Self {
        debug_assert!(lists >= 1 && lists <= MAX_LISTS && index < (1 << lists));
        Self {
            lists: lists as u8,
            mask: index as u32,
        }
    }

    pub fn all_zero(lists: usize) -> Self {
        Self::from_index(0, lists)
    }

    pub fn n_lists(&self) -> usize {
        self.lists as usize
    }

    pub fn index(&self) -> usize {
        self.mask as usize
    }

    /// Whether list `k` (0-based) captured this pattern.
    pub fn captured(&self, k: usize) -> bool {
        debug_assert!(k < self.n_lists());
        (self.mask >> (self.n_lists() - 1 - k)) & 1 == 1
    }

    pub fn bits(&self) -> Vec<u8> {
        (0..self.n_lists()).map(|k| u8::from(self.captured(k))).collect()
    }

    pub fn is_all_zero(&self) -> bool {
        self.mask == 0
    }

    /// Number of lists that captured this pattern.
    pub fn weight(&self) -> u32 {
        self.mask.count_ones()
    }

    pub fn all(lists: usize) -> impl Iterator<Item = CapturePattern> {
        (0..1usize << lists).map(move |i| CapturePattern::from_index(i, lists))
    }
}

impl fmt::Display for CapturePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for k in 0..self.n_lists() {
            f.write_str(if self.captured(k) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for CapturePattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                other => Err(Error::Invalid(format!(
                    "invalid pattern {s:?}: character {other:?} is not 0 or 1"
                ))),
            })
            .collect::<Result<Vec<u8>>>()?;
        CapturePattern::new(&bits)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Completeness {
    Complete,
    MissingAllZero,
}

/// Counts per capture pattern for one exposure group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    label: String,
    n_lists: usize,
    completeness: Completeness,
    counts: Vec<u64>,
}

impl ContingencyTable {
    /// Builds a table from `(pattern, count)` pairs. Patterns not listed are zero.
    /// Repeated patterns are summed.
    pub fn from_counts<I>(
        label: impl Into<String>,
        n_lists: usize,
        completeness: Completeness,
        cells: I,
    ) -> Result<Self>
    where
        I: IntoIterator<Item = (CapturePattern, u64)>,
    {
        if n_lists == 0 || n_lists > MAX_LISTS {
            return Err(Error::Invalid(format!(
                "number of lists must be between 1 and {MAX_LISTS}, got {n_lists}"
            )));
        }
        let mut counts = vec![0u64; 1 << n_lists];
        for (pattern, count) in cells {
            if pattern.n_lists() != n_lists {
                return Err(Error::Invalid(format!(
                    "pattern {pattern} has {} lists, table has {n_lists}",
                    pattern.n_lists()
                )));
            }
            if pattern.is_all_zero() && completeness == Completeness::MissingAllZero {
                return Err(Error::Invalid(
                    "the all-zero pattern cannot carry a count in an observed table".into(),
                ));
            }
            counts[pattern.index()] += count;
        }
        Ok(Self {
            label: label.into(),
            n_lists,
            completeness,
            counts,
        })
    }

    /// Builds a table from dense counts in pattern-index order. For observed
    /// tables `counts[0]` must be zero.
    pub fn from_dense(
        label: impl Into<String>,
        n_lists: usize,
        completeness: Completeness,
        counts: Vec<u64>,
    ) -> Result<Self> {
        if n_lists == 0 || n_lists > MAX_LISTS || counts.len() != 1 << n_lists {
            return Err(Error::Invalid(format!(
                "expected {} dense counts for {n_lists} lists, got {}",
                1usize.checked_shl(n_lists as u32).unwrap_or(0),
                counts.len()
            )));
        }
        if completeness == Completeness::MissingAllZero && counts[0] != 0 {
            return Err(Error::Invalid(
                "the all-zero pattern cannot carry a count in an observed table".into(),
            ));
        }
        Ok(Self {
            label: label.into(),
            n_lists,
            completeness,
            counts,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn n_lists(&self) -> usize {
        self.n_lists
    }

    pub fn n_cells(&self) -> usize {
        self.counts.len()
    }

    pub fn completeness(&self) -> Completeness {
        self.completeness
    }

    pub fn is_complete(&self) -> bool {
        self.completeness == Completeness::Complete
    }

    /// Count for `pattern`, or `None` for the unobserved all-zero cell.
    pub fn get(&self, pattern: CapturePattern) -> Option<u64> {
        if pattern.n_lists() != self.n_lists {
            return None;
        }
        if pattern.is_all_zero() && !self.is_complete() {
            return None;
        }
        Some(self.counts[pattern.index()])
    }

    /// Dense counts in pattern-index order; index 0 is zero for observed tables.
    pub fn dense(&self) -> &[u64] {
        &self.counts
    }

    pub fn dense_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }

    /// Stored `(pattern, count)` pairs in pattern order.
    pub fn iter(&self) -> impl Iterator<Item = (CapturePattern, u64)> + '_ {
        let start = if self.is_complete() { 0 } else { 1 };
        (start..self.counts.len())
            .map(move |i| (CapturePattern::from_index(i, self.n_lists), self.counts[i]))
    }

    /// Sum of stored counts.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Sum over all patterns other than the all-zero one.
    pub fn observed_total(&self) -> u64 {
        self.counts[1..].iter().sum()
    }

    /// Copy of this table with the all-zero cell filled in.
    pub fn with_missing_cell(&self, count: u64) -> ContingencyTable {
        let mut counts = self.counts.clone();
        counts[0] = count;
        ContingencyTable {
            label: self.label.clone(),
            n_lists: self.n_lists,
            completeness: Completeness::Complete,
            counts,
        }
    }

    /// Copy of this table with the all-zero cell removed.
    pub fn without_missing_cell(&self) -> ContingencyTable {
        let mut counts = self.counts.clone();
        counts[0] = 0;
        ContingencyTable {
            label: self.label.clone(),
            n_lists: self.n_lists,
            completeness: Completeness::MissingAllZero,
            counts,
        }
    }

    /// Number of individuals captured by each list.
    pub fn list_margins(&self) -> Vec<u64> {
        let mut margins = vec![0u64; self.n_lists];
        for (pattern, count) in self.iter() {
            for (k, m) in margins.iter_mut().enumerate() {
                if pattern.captured(k) {
                    *m += count;
                }
            }
        }
        margins
    }
}

/// Total of stored counts.
pub fn totals(table: &ContingencyTable) -> u64 {
    table.total()
}

/// Exposed and unexposed tables over the same lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TablePair {
    pub exposed: ContingencyTable,
    pub unexposed: ContingencyTable,
    pub list_names: Vec<String>,
}

impl TablePair {
    pub fn new(exposed: ContingencyTable, unexposed: ContingencyTable) -> Result<Self> {
        let n = exposed.n_lists();
        Self::with_list_names(
            exposed,
            unexposed,
            (1..=n).map(|k| format!("list{k}")).collect(),
        )
    }

    pub fn with_list_names(
        exposed: ContingencyTable,
        unexposed: ContingencyTable,
        list_names: Vec<String>,
    ) -> Result<Self> {
        if exposed.n_lists() != unexposed.n_lists() {
            return Err(Error::Invalid(format!(
                "exposed table has {} lists, unexposed has {}",
                exposed.n_lists(),
                unexposed.n_lists()
            )));
        }
        if exposed.completeness() != unexposed.completeness() {
            return Err(Error::Invalid(
                "exposed and unexposed tables must both be complete or both observed".into(),
            ));
        }
        if list_names.len() != exposed.n_lists() {
            return Err(Error::Invalid(format!(
                "{} list names for {} lists",
                list_names.len(),
                exposed.n_lists()
            )));
        }
        Ok(Self {
            exposed,
            unexposed,
            list_names,
        })
    }

    /// Picks the two groups out of a label-keyed map.
    pub fn from_groups(
        groups: &BTreeMap<String, ContingencyTable>,
        exposed_label: &str,
        unexposed_label: &str,
        list_names: Option<Vec<String>>,
    ) -> Result<Self> {
        let get = |label: &str| {
            groups.get(label).cloned().ok_or_else(|| {
                let found: Vec<&str> = groups.keys().map(String::as_str).collect();
                Error::Invalid(format!(
                    "exposure group {label:?} not found in input (groups: {found:?})"
                ))
            })
        };
        let exposed = get(exposed_label)?;
        let unexposed = get(unexposed_label)?;
        match list_names {
            Some(names) => Self::with_list_names(exposed, unexposed, names),
            None => Self::new(exposed, unexposed),
        }
    }

    pub fn n_lists(&self) -> usize {
        self.exposed.n_lists()
    }

    pub fn is_complete(&self) -> bool {
        self.exposed.is_complete()
    }
}

/// One individual: exposure label plus membership flags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordRow {
    pub exposure: String,
    pub memberships: Vec<u8>,
}

/// Counts observed patterns per exposure group.
pub fn aggregate(records: &[RecordRow], n_lists: usize) -> Result<BTreeMap<String, ContingencyTable>> {
    let mut counts: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    for (index, row) in records.iter().enumerate() {
        if row.memberships.len() != n_lists {
            return Err(Error::FlagCount {
                index,
                expected: n_lists,
                found: row.memberships.len(),
            });
        }
        let pattern = CapturePattern::new(&row.memberships)?;
        if pattern.is_all_zero() {
            return Err(Error::AllZeroRecord { index });
        }
        counts
            .entry(row.exposure.clone())
            .or_insert_with(|| vec![0; 1 << n_lists])[pattern.index()] += 1;
    }
    counts
        .into_iter()
        .map(|(label, dense)| {
            let table =
                ContingencyTable::from_dense(label.clone(), n_lists, Completeness::MissingAllZero, dense)?;
            Ok((label, table))
        })
        .collect()
}

/// Parsed input: tables per exposure label, plus list names when the input named them.
#[derive(Debug, Clone)]
pub struct ParsedInput {
    pub groups: BTreeMap<String, ContingencyTable>,
    pub list_names: Option<Vec<String>>,
}

fn line_of(record: &csv::StringRecord) -> usize {
    record.position().map(|p| p.line() as usize).unwrap_or(0)
}

/// Reads a record CSV (`exposure,list1,...,listJ`).
pub fn read_records<R: Read>(reader: R) -> Result<(Vec<RecordRow>, Vec<String>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() < 2 || &headers[0] != "exposure" {
        return Err(Error::Parse {
            line: 1,
            message: "record CSV header must be `exposure,list1,...,listJ`".into(),
        });
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut rows = Vec::new();
    for result in rdr.records() {
        let record = result?;
        let line = line_of(&record);
        if record.len() != headers.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let memberships = record
            .iter()
            .skip(1)
            .map(|field| match field {
                "0" => Ok(0u8),
                "1" => Ok(1u8),
                other => Err(Error::Parse {
                    line,
                    message: format!("membership flag {other:?} is not 0 or 1"),
                }),
            })
            .collect::<Result<Vec<u8>>>()?;
        rows.push(RecordRow {
            exposure: record[0].to_string(),
            memberships,
        });
    }
    Ok((rows, names))
}

/// Reads an aggregated CSV (`exposure,pattern,count`). A group whose rows
/// include the all-zero pattern is read as a complete table.
pub fn read_aggregated<R: Read>(reader: R) -> Result<BTreeMap<String, ContingencyTable>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["exposure", "pattern", "count"] {
        return Err(Error::Parse {
            line: 1,
            message: "aggregated CSV header must be `exposure,pattern,count`".into(),
        });
    }
    let mut cells: BTreeMap<String, Vec<(CapturePattern, u64)>> = BTreeMap::new();
    let mut n_lists: Option<usize> = None;
    for result in rdr.records() {
        let record = result?;
        let line = line_of(&record);
        if record.len() != 3 {
            return Err(Error::Parse {
                line,
                message: format!("expected 3 fields, found {}", record.len()),
            });
        }
        let pattern: CapturePattern = record[1].parse().map_err(|e: Error| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        match n_lists {
            None => n_lists = Some(pattern.n_lists()),
            Some(j) if j != pattern.n_lists() => {
                return Err(Error::Parse {
                    line,
                    message: format!("pattern {pattern} has {} lists, earlier rows have {j}", pattern.n_lists()),
                })
            }
            _ => {}
        }
        let count: u64 = record[2].parse().map_err(|_| Error::Parse {
            line,
            message: format!("count {:?} is not a non-negative integer", &record[2]),
        })?;
        cells.entry(record[0].to_string()).or_default().push((pattern, count));
    }
    let Some(n_lists) = n_lists else {
        return Ok(BTreeMap::new());
    };
    cells
        .into_iter()
        .map(|(label, cells)| {
            let complete = cells.iter().any(|(p, _)| p.is_all_zero());
            let completeness = if complete {
                Completeness::Complete
            } else {
                Completeness::MissingAllZero
            };
            let table = ContingencyTable::from_counts(label.clone(), n_lists, completeness, cells)?;
            Ok((label, table))
        })
        .collect()
}

/// Reads either CSV schema, choosing by header.
pub fn read_input(bytes: &[u8]) -> Result<ParsedInput> {
    let first_line = bytes
        .split(|&b| b == b'\n')
        .next()
        .map(|l| String::from_utf8_lossy(l).trim().to_string())
        .unwrap_or_default();
    if first_line.replace(' ', "") == "exposure,pattern,count" {
        Ok(ParsedInput {
            groups: read_aggregated(bytes)?,
            list_names: None,
        })
    } else {
        let (rows, names) = read_records(bytes)?;
        let groups = aggregate(&rows, names.len())?;
        Ok(ParsedInput {
            groups,
            list_names: Some(names),
        })
    }
}

/// Writes tables in the aggregated schema, one row per stored pattern.
pub fn write_aggregated<'a, W, I>(writer: W, tables: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a ContingencyTable>,
{
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["exposure", "pattern", "count"])?;
    for table in tables {
        for (pattern, count) in table.iter() {
            wtr.write_record([table.label(), &pattern.to_string(), &count.to_string()])?;
        }
    }
    wtr.flush()?;
    Ok(())
}
