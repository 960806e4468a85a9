//! Columnar cohort tables: CSV loading, missingness tests, chained
//! regression imputation, complete-case filtering and baseline summaries.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cate::rank::mann_whitney_u;
use crate::regress::dist::{tail_probability, Distribution};
use crate::regress::{logistic_fit, ols_fit, predict_proba, Intercept, LogisticOptions, RegressError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    Binary,
}

/// One schema entry. `source` names the CSV header when it differs from
/// the column name used in the analysis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl FieldSpec {
    pub fn new(name: impl Into<String>, kind: ColumnKind) -> Self {
        FieldSpec {
            name: name.into(),
            kind,
            source: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("column `{0}` not found")]
    MissingColumn(String),
    #[error("column `{0}` appears twice")]
    DuplicateColumn(String),
    #[error("row {row}, column `{column}`: `{value}` is not numeric")]
    NonNumeric { column: String, row: usize, value: String },
    #[error("row {row}, binary column `{column}` holds {value}")]
    NonBinary { column: String, row: usize, value: f64 },
    #[error("column `{column}` has {found} rows, expected {expected}")]
    LengthMismatch { column: String, expected: usize, found: usize },
    #[error("column `{0}` has no missing values")]
    NoMissing(String),
    #[error("column `{0}` has missing values")]
    HasMissing(String),
    #[error("column `{0}` is entirely missing")]
    AllMissing(String),
    #[error("no fully observed column to anchor imputation")]
    NoCompleteColumn,
    #[error("column `{0}` must be binary")]
    NotBinary(String),
    #[error("degenerate test: {0}")]
    Degenerate(String),
    #[error("iterations must be at least 1")]
    NoIterations,
    #[error("imputing `{column}`: {source}")]
    Imputation { column: String, source: RegressError },
    #[error(transparent)]
    Regress(#[from] RegressError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    /// Missing cells hold NaN.
    pub values: Vec<f64>,
    pub missing: Vec<bool>,
}

impl Column {
    /// Builds a column from optional cells.
    pub fn from_options(name: impl Into<String>, kind: ColumnKind, cells: &[Option<f64>]) -> Self {
        Column {
            name: name.into(),
            kind,
            values: cells.iter().map(|c| c.unwrap_or(f64::NAN)).collect(),
            missing: cells.iter().map(Option::is_none).collect(),
        }
    }

    pub fn complete(name: impl Into<String>, kind: ColumnKind, values: Vec<f64>) -> Self {
        let missing = vec![false; values.len()];
        Column {
            name: name.into(),
            kind,
            values,
            missing,
        }
    }

    pub fn n_missing(&self) -> usize {
        self.missing.iter().filter(|m| **m).count()
    }

    pub fn observed(&self) -> impl Iterator<Item = f64> + '_ {
        self.values
            .iter()
            .zip(&self.missing)
            .filter(|(_, m)| !**m)
            .map(|(v, _)| *v)
    }
}

/// Columnar numeric table with a per-cell missingness mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    columns: Vec<Column>,
    index: HashMap<String, usize>,
    n_rows: usize,
}

impl Table {
    pub fn new(columns: Vec<Column>) -> Result<Self, DataError> {
        let n_rows = columns.first().map_or(0, |c| c.values.len());
        let mut index = HashMap::new();
        for (j, col) in columns.iter().enumerate() {
            if index.insert(col.name.clone(), j).is_some() {
                return Err(DataError::DuplicateColumn(col.name.clone()));
            }
            for len in [col.values.len(), col.missing.len()] {
                if len != n_rows {
                    return Err(DataError::LengthMismatch {
                        column: col.name.clone(),
                        expected: n_rows,
                        found: len,
                    });
                }
            }
            for (row, (v, m)) in col.values.iter().zip(&col.missing).enumerate() {
                if *m {
                    continue;
                }
                if col.kind == ColumnKind::Binary && *v != 0.0 && *v != 1.0 {
                    return Err(DataError::NonBinary {
                        column: col.name.clone(),
                        row,
                        value: *v,
                    });
                }
            }
        }
        let mut columns = columns;
        for col in &mut columns {
            for (v, m) in col.values.iter_mut().zip(&col.missing) {
                if *m {
                    *v = f64::NAN;
                }
            }
        }
        Ok(Table {
            columns,
            index,
            n_rows,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }

    pub fn column(&self, name: &str) -> Result<&Column, DataError> {
        self.index
            .get(name)
            .map(|&j| &self.columns[j])
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    }

    /// Values of a fully observed column.
    pub fn values(&self, name: &str) -> Result<&[f64], DataError> {
        let col = self.column(name)?;
        if col.missing.iter().any(|m| *m) {
            return Err(DataError::HasMissing(name.to_string()));
        }
        Ok(&col.values)
    }

    pub fn binary_values(&self, name: &str) -> Result<&[f64], DataError> {
        if self.column(name)?.kind != ColumnKind::Binary {
            return Err(DataError::NotBinary(name.to_string()));
        }
        self.values(name)
    }

    pub fn is_complete(&self) -> bool {
        self.columns.iter().all(|c| c.missing.iter().all(|m| !*m))
    }

    /// Design matrix (no intercept) from fully observed columns.
    pub fn matrix<S: AsRef<str>>(&self, names: &[S]) -> Result<DMatrix<f64>, DataError> {
        let cols = names
            .iter()
            .map(|n| self.values(n.as_ref()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(DMatrix::from_fn(self.n_rows, cols.len(), |i, j| cols[j][i]))
    }

    /// New table holding the given rows (repeats allowed) in order.
    pub fn select_rows(&self, rows: &[usize]) -> Table {
        let columns = self
            .columns
            .iter()
            .map(|c| Column {
                name: c.name.clone(),
                kind: c.kind,
                values: rows.iter().map(|&i| c.values[i]).collect(),
                missing: rows.iter().map(|&i| c.missing[i]).collect(),
            })
            .collect();
        Table {
            columns,
            index: self.index.clone(),
            n_rows: rows.len(),
        }
    }

    /// Copy with one column's values replaced (all observed).
    pub fn with_values(&self, name: &str, values: Vec<f64>) -> Result<Table, DataError> {
        let j = *self
            .index
            .get(name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))?;
        if values.len() != self.n_rows {
            return Err(DataError::LengthMismatch {
                column: name.to_string(),
                expected: self.n_rows,
                found: values.len(),
            });
        }
        let mut columns = self.columns.clone();
        columns[j].missing = vec![false; values.len()];
        columns[j].values = values;
        Table::new(columns)
    }

    /// Copy with an extra column appended.
    pub fn with_column(&self, column: Column) -> Result<Table, DataError> {
        let mut columns = self.columns.clone();
        columns.push(column);
        Table::new(columns)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.names())?;
        for i in 0..self.n_rows {
            w.write_record(self.columns.iter().map(|c| {
                if c.missing[i] {
                    String::new()
                } else {
                    format!("{}", c.values[i])
                }
            }))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn schema(&self) -> Vec<FieldSpec> {
        self.columns
            .iter()
            .map(|c| FieldSpec::new(c.name.clone(), c.kind))
            .collect()
    }
}

fn is_missing_token(cell: &str) -> bool {
    matches!(cell, "" | "NA" | "NaN" | "nan")
}

/// Reads a CSV with a header row. Schema columns are matched by header
/// name in any order; other columns are ignored. Empty cells (and the
/// tokens `NA`, `NaN`) are missing.
pub fn load_table(path: impl AsRef<Path>, schema: &[FieldSpec]) -> Result<Table, DataError> {
    let file = std::fs::File::open(path)?;
    read_table(file, schema)
}

pub fn read_table<R: std::io::Read>(reader: R, schema: &[FieldSpec]) -> Result<Table, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut positions = Vec::with_capacity(schema.len());
    for field in schema {
        let header = field.source.as_deref().unwrap_or(&field.name);
        let pos = headers
            .iter()
            .position(|h| h == header)
            .ok_or_else(|| DataError::MissingColumn(header.to_string()))?;
        positions.push(pos);
    }
    let mut cells: Vec<Vec<Option<f64>>> = vec![Vec::new(); schema.len()];
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        for (j, &pos) in positions.iter().enumerate() {
            let raw = record.get(pos).unwrap_or("");
            let value = if is_missing_token(raw) {
                None
            } else {
                let v: f64 = raw.parse().map_err(|_| DataError::NonNumeric {
                    column: schema[j].name.clone(),
                    row,
                    value: raw.to_string(),
                })?;
                if !v.is_finite() {
                    return Err(DataError::NonNumeric {
                        column: schema[j].name.clone(),
                        row,
                        value: raw.to_string(),
                    });
                }
                Some(v)
            };
            cells[j].push(value);
        }
    }
    let columns = schema
        .iter()
        .zip(&cells)
        .map(|(f, c)| Column::from_options(f.name.clone(), f.kind, c))
        .collect();
    Table::new(columns)
}

/// Pearson chi-square for a 2×2 table `[[a, b], [c, d]]`, no continuity
/// correction. `None` when a margin is empty.
pub fn chi_square_2x2(a: f64, b: f64, c: f64, d: f64) -> Option<(f64, f64)> {
    let n = a + b + c + d;
    let denom = (a + b) * (c + d) * (a + c) * (b + d);
    if denom <= 0.0 {
        return None;
    }
    let diff = a * d - b * c;
    let chi = n * diff * diff / denom;
    let p = tail_probability(Distribution::ChiSquare { df: 1.0 }, chi).ok()?;
    Some((chi, p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McarResult {
    pub variable: String,
    pub chi_square: f64,
    pub df: u32,
    pub p_value: f64,
    pub missing_fraction: f64,
}

/// Chi-square test of independence between the missingness indicator of
/// `variable` and a fully observed binary `outcome`.
pub fn mcar_test(table: &Table, variable: &str, outcome: &str) -> Result<McarResult, DataError> {
    let col = table.column(variable)?;
    let y = table.binary_values(outcome)?;
    let n_missing = col.n_missing();
    if n_missing == 0 {
        return Err(DataError::NoMissing(variable.to_string()));
    }
    if n_missing == col.values.len() {
        return Err(DataError::AllMissing(variable.to_string()));
    }
    let (mut a, mut b, mut c, mut d) = (0.0, 0.0, 0.0, 0.0);
    for (m, y) in col.missing.iter().zip(y) {
        match (*m, *y == 1.0) {
            (true, true) => a += 1.0,
            (true, false) => b += 1.0,
            (false, true) => c += 1.0,
            (false, false) => d += 1.0,
        }
    }
    let (chi_square, p_value) = chi_square_2x2(a, b, c, d)
        .ok_or_else(|| DataError::Degenerate(format!("outcome `{outcome}` is constant")))?;
    Ok(McarResult {
        variable: variable.to_string(),
        chi_square,
        df: 1,
        p_value,
        missing_fraction: n_missing as f64 / col.values.len() as f64,
    })
}

/// Single chained-regression imputation.
///
/// Missing cells start at the observed column mean (the observed
/// proportion for binary columns). Each sweep then visits the incomplete
/// columns in schema order, regresses the column on every other column
/// over its observed rows (OLS, or logistic for binary columns) and
/// overwrites its missing cells with the predictions; binary predictions
/// are rounded at 0.5. Observed cells are never modified.
pub fn impute_iterative(table: &Table, iterations: usize) -> Result<Table, DataError> {
    if iterations == 0 {
        return Err(DataError::NoIterations);
    }
    for col in table.columns() {
        if !col.values.is_empty() && col.n_missing() == col.values.len() {
            return Err(DataError::AllMissing(col.name.clone()));
        }
    }
    let incomplete: Vec<usize> = (0..table.columns.len())
        .filter(|&j| table.columns[j].n_missing() > 0)
        .collect();
    if incomplete.is_empty() {
        return Ok(table.clone());
    }
    if incomplete.len() == table.columns.len() {
        return Err(DataError::NoCompleteColumn);
    }

    let n = table.n_rows();
    let mut filled: Vec<Vec<f64>> = table
        .columns
        .iter()
        .map(|c| {
            let obs: Vec<f64> = c.observed().collect();
            let mean = obs.iter().sum::<f64>() / obs.len() as f64;
            c.values
                .iter()
                .zip(&c.missing)
                .map(|(v, m)| if *m { mean } else { *v })
                .collect()
        })
        .collect();

    for _ in 0..iterations {
        for &j in &incomplete {
            let col = &table.columns[j];
            let others: Vec<usize> = (0..filled.len()).filter(|&k| k != j).collect();
            let obs_rows: Vec<usize> = (0..n).filter(|&i| !col.missing[i]).collect();
            let miss_rows: Vec<usize> = (0..n).filter(|&i| col.missing[i]).collect();
            let design = |rows: &[usize]| {
                DMatrix::from_fn(rows.len(), others.len(), |r, c| filled[others[c]][rows[r]])
            };
            let x_obs = design(&obs_rows);
            let y_obs: Vec<f64> = obs_rows.iter().map(|&i| col.values[i]).collect();
            let x_miss = design(&miss_rows);
            let wrap = |source| DataError::Imputation {
                column: col.name.clone(),
                source,
            };
            let predictions = match col.kind {
                ColumnKind::Continuous => {
                    let fit = ols_fit(&x_obs, &y_obs, Intercept::Include).map_err(wrap)?;
                    fit.linear_predictor(&x_miss).map_err(wrap)?
                }
                ColumnKind::Binary => {
                    let fit = logistic_fit(&x_obs, &y_obs, &LogisticOptions::default()).map_err(wrap)?;
                    predict_proba(&fit, &x_miss)
                        .map_err(wrap)?
                        .into_iter()
                        .map(|p| if p >= 0.5 { 1.0 } else { 0.0 })
                        .collect()
                }
            };
            for (&i, v) in miss_rows.iter().zip(predictions) {
                filled[j][i] = v;
            }
        }
    }

    let columns = table
        .columns
        .iter()
        .zip(filled)
        .map(|(c, values)| Column::complete(c.name.clone(), c.kind, values))
        .collect();
    Table::new(columns)
}

/// Rows without any missing cell, in original order.
pub fn complete_cases(table: &Table) -> Table {
    let rows: Vec<usize> = (0..table.n_rows())
        .filter(|&i| table.columns.iter().all(|c| !c.missing[i]))
        .collect();
    table.select_rows(&rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroupSummary {
    MeanSd { n: usize, mean: f64, sd: f64 },
    Count { n: usize, count: usize, percent: f64 },
}

impl GroupSummary {
    pub fn n(&self) -> usize {
        match self {
            GroupSummary::MeanSd { n, .. } | GroupSummary::Count { n, .. } => *n,
        }
    }

    fn of(kind: ColumnKind, values: &[f64]) -> Self {
        let n = values.len();
        match kind {
            ColumnKind::Continuous => {
                let mean = values.iter().sum::<f64>() / n.max(1) as f64;
                let sd = if n > 1 {
                    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
                } else {
                    0.0
                };
                GroupSummary::MeanSd { n, mean, sd }
            }
            ColumnKind::Binary => {
                let count = values.iter().filter(|v| **v == 1.0).count();
                GroupSummary::Count {
                    n,
                    count,
                    percent: if n == 0 { 0.0 } else { 100.0 * count as f64 / n as f64 },
                }
            }
        }
    }
}

impl std::fmt::Display for GroupSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GroupSummary::MeanSd { mean, sd, .. } => write!(f, "{mean:.1} ± {sd:.1}"),
            GroupSummary::Count { count, percent, .. } => write!(f, "{count} ({percent:.1}%)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineTest {
    MannWhitney,
    ChiSquare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub variable: String,
    pub overall: GroupSummary,
    pub group0: GroupSummary,
    pub group1: GroupSummary,
    pub test: BaselineTest,
    /// Absent when the test is undefined (e.g. a constant variable).
    pub p_value: Option<f64>,
}

/// Descriptive statistics by a binary grouping column: mean ± SD with a
/// Mann–Whitney test for continuous variables, n (%) with a chi-square
/// test for binary ones. Rows missing the variable are skipped.
pub fn summarize_baseline<S: AsRef<str>>(
    table: &Table,
    group: &str,
    variables: &[S],
) -> Result<Vec<BaselineRow>, DataError> {
    let g = table.binary_values(group)?;
    let mut rows = Vec::with_capacity(variables.len());
    for var in variables {
        let col = table.column(var.as_ref())?;
        let (mut v0, mut v1) = (Vec::new(), Vec::new());
        for i in 0..table.n_rows() {
            if col.missing[i] {
                continue;
            }
            if g[i] == 1.0 {
                v1.push(col.values[i]);
            } else {
                v0.push(col.values[i]);
            }
        }
        let all: Vec<f64> = v0.iter().chain(&v1).copied().collect();
        let (test, p_value) = match col.kind {
            ColumnKind::Continuous => (
                BaselineTest::MannWhitney,
                mann_whitney_u(&v1, &v0).ok().map(|r| r.p_value),
            ),
            ColumnKind::Binary => {
                let ones = |v: &[f64]| v.iter().filter(|x| **x == 1.0).count() as f64;
                let (a, c) = (ones(&v1), ones(&v0));
                let p = chi_square_2x2(a, v1.len() as f64 - a, c, v0.len() as f64 - c).map(|r| r.1);
                (BaselineTest::ChiSquare, p)
            }
        };
        rows.push(BaselineRow {
            variable: col.name.clone(),
            overall: GroupSummary::of(col.kind, &all),
            group0: GroupSummary::of(col.kind, &v0),
            group1: GroupSummary::of(col.kind, &v1),
            test,
            p_value,
        });
    }
    Ok(rows)
}

/// Mean of a fully observed column.
pub fn column_mean(table: &Table, name: &str) -> Result<f64, DataError> {
    let v = table.values(name)?;
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}
