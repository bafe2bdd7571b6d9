//! The canonical multi-view dataset and its validation.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::{Error, Matrix, Result};

/// Dense region ids `0..n` with optional names.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSet {
    names: Vec<Option<String>>,
}

impl RegionSet {
    pub fn new(names: Vec<Option<String>>) -> Result<Self> {
        if names.len() < 2 {
            return Err(Error::InvalidDataset(format!(
                "need at least 2 regions, got {}",
                names.len()
            )));
        }
        Ok(Self { names })
    }

    pub fn unnamed(n: usize) -> Result<Self> {
        Self::new(alloc::vec![None; n])
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).and_then(|n| n.as_deref())
    }
}

/// Per-region raw views plus downstream labels, all indexed by `regions`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub regions: RegionSet,
    /// Unordered pairs stored as `(min, max)`.
    pub adjacency: BTreeSet<(usize, usize)>,
    /// Column names of `poi_counts`, sorted.
    pub poi_categories: Vec<String>,
    /// n × C category counts.
    pub poi_counts: Matrix,
    /// n × n origin-destination trip totals.
    pub trips: Matrix,
    /// attribute → n × B population per bin.
    pub demographics: BTreeMap<String, Matrix>,
    /// task → per-region value, `None` where missing.
    pub labels: BTreeMap<String, Vec<Option<f64>>>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.regions.len()
    }

    /// Inserts an adjacency pair in canonical order.
    pub fn add_adjacency(&mut self, a: usize, b: usize) {
        self.adjacency.insert((a.min(b), a.max(b)));
    }

    pub fn are_adjacent(&self, a: usize, b: usize) -> bool {
        self.adjacency.contains(&(a.min(b), a.max(b)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Finding {
    pub code: &'static str,
    pub message: String,
    pub location: String,
}

/// Validation output. The dataset is accepted iff `errors` is empty.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub errors: Vec<Finding>,
    pub warnings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_accepted(&self) -> bool {
        self.errors.is_empty()
    }

    fn error(&mut self, code: &'static str, message: String, location: String) {
        self.errors.push(Finding {
            code,
            message,
            location,
        });
    }

    fn warn(&mut self, code: &'static str, message: String, location: String) {
        self.warnings.push(Finding {
            code,
            message,
            location,
        });
    }

    /// Converts a rejected report into an error summarizing the first finding.
    pub fn into_result(self) -> Result<()> {
        match self.errors.first() {
            None => Ok(()),
            Some(f) => Err(Error::InvalidDataset(format!(
                "{} ({} at {}), {} error(s) total",
                f.message,
                f.code,
                f.location,
                self.errors.len()
            ))),
        }
    }
}

fn check_matrix(
    report: &mut ValidationReport,
    name: &str,
    m: &Matrix,
    rows: usize,
    cols: Option<usize>,
) -> bool {
    if m.rows() != rows || cols.is_some_and(|c| c != m.cols()) {
        report.error(
            "shape",
            format!("{name} has shape {:?}, expected {rows} rows", m.shape()),
            name.to_string(),
        );
        return false;
    }
    for i in 0..m.rows() {
        for (j, &v) in m.row(i).iter().enumerate() {
            if !v.is_finite() {
                report.error(
                    "non-finite",
                    format!("{name} has a non-finite entry"),
                    format!("{name}[{i}][{j}]"),
                );
            } else if v < 0.0 {
                report.error(
                    "negative-value",
                    format!("{name} has negative entry {v}"),
                    format!("{name}[{i}][{j}]"),
                );
            }
        }
    }
    true
}

/// Checks every dataset invariant. Findings are data, never failures.
pub fn validate(d: &Dataset) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n = d.n();
    if n < 2 {
        report.error(
            "too-few-regions",
            format!("{n} regions, need at least 2"),
            "regions".into(),
        );
    }

    for &(a, b) in &d.adjacency {
        if a == b {
            report.error(
                "self-adjacency",
                format!("region {a} is adjacent to itself"),
                format!("adjacency ({a},{b})"),
            );
        }
        if a >= n || b >= n {
            report.error(
                "unknown-region",
                format!("adjacency pair ({a},{b}) references an unknown region"),
                format!("adjacency ({a},{b})"),
            );
        }
    }

    if check_matrix(
        &mut report,
        "poi",
        &d.poi_counts,
        n,
        Some(d.poi_categories.len()),
    ) && d.poi_counts.as_slice().iter().any(|&x| libm::trunc(x) != x)
    {
        report.error(
            "non-integer-count",
            "poi counts must be integers".into(),
            "poi".into(),
        );
    }

    if check_matrix(&mut report, "trips", &d.trips, n, Some(n)) {
        for i in 0..n {
            if d.trips.row(i).iter().all(|&x| x <= 0.0) {
                report.warn(
                    "zero-outflow",
                    format!("region {i} has no outgoing trips"),
                    format!("trips row {i}"),
                );
            }
        }
    }

    for (attr, m) in &d.demographics {
        let name = format!("demographics.{attr}");
        if !check_matrix(&mut report, &name, m, n, None) {
            continue;
        }
        if m.cols() < 2 {
            report.error(
                "too-few-bins",
                format!("{attr} has {} bins, need at least 2", m.cols()),
                name.clone(),
            );
        }
        for i in 0..n {
            if m.row(i).iter().sum::<f64>() <= 0.0 {
                report.error(
                    "empty-distribution-row",
                    format!("empty distribution row for {attr} in region {i}"),
                    format!("{name} row {i}"),
                );
            }
        }
    }

    for (task, values) in &d.labels {
        if values.len() != n {
            report.error(
                "shape",
                format!(
                    "labels for {task} have length {}, expected {n}",
                    values.len()
                ),
                format!("labels.{task}"),
            );
        } else if values.iter().flatten().any(|v| !v.is_finite()) {
            report.error(
                "non-finite",
                format!("labels for {task} contain a non-finite value"),
                format!("labels.{task}"),
            );
        } else if values.iter().all(Option::is_none) {
            report.warn(
                "empty-task",
                format!("task {task} has no labelled region"),
                format!("labels.{task}"),
            );
        }
    }
    report
}
