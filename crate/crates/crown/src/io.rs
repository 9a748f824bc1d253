//! CSV panels: a `date` column followed by one column per asset or factor.

use std::path::Path;

use chrono::NaiveDate;
use crown_core::{FactorPanel, ReturnPanel};
use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PanelKind {
    Returns,
    Factors,
    Benchmark,
}

/// A parsed CSV table, stored series-by-date.
#[derive(Debug, Clone, PartialEq)]
pub struct DatedTable {
    pub dates: Vec<String>,
    pub columns: Vec<String>,
    /// `columns x dates`.
    pub values: DMatrix<f64>,
}

pub fn read_table(path: &Path) -> Result<DatedTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_table(file, &path.display().to_string())
}

/// Parses CSV text; `source` names the input in error messages.
pub fn parse_table<R: std::io::Read>(reader: R, source: &str) -> Result<DatedTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let parse_err = |line: usize, column: &str, message: String| Error::Parse {
        path: source.to_string(),
        line,
        column: column.to_string(),
        message,
    };
    if headers.get(0).map(|h| h.eq_ignore_ascii_case("date")) != Some(true) {
        return Err(parse_err(
            1,
            headers.get(0).unwrap_or(""),
            "first column must be 'date'".into(),
        ));
    }
    let columns: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    if columns.is_empty() {
        return Err(parse_err(1, "", "no data columns".into()));
    }
    let mut dates = Vec::new();
    let mut cells = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let line = i + 2;
        if record.len() != columns.len() + 1 {
            return Err(parse_err(
                line,
                "",
                format!("expected {} fields, found {}", columns.len() + 1, record.len()),
            ));
        }
        let date = &record[0];
        NaiveDate::parse_from_str(date, "%Y-%m-%d")
            .map_err(|e| parse_err(line, "date", format!("'{date}' is not an ISO-8601 date: {e}")))?;
        if dates.last().is_some_and(|prev: &String| prev.as_str() >= date) {
            return Err(parse_err(
                line,
                "date",
                format!("'{date}' is not after the previous date"),
            ));
        }
        dates.push(date.to_string());
        for (name, raw) in columns.iter().zip(record.iter().skip(1)) {
            let value: f64 = raw
                .parse()
                .map_err(|_| parse_err(line, name, format!("'{raw}' is not a number")))?;
            if !value.is_finite() {
                return Err(parse_err(line, name, format!("'{raw}' is not finite")));
            }
            cells.push(value);
        }
    }
    if dates.is_empty() {
        return Err(parse_err(2, "", "no data rows".into()));
    }
    // cells are date-major; transpose into series-by-date
    let values = DMatrix::from_row_slice(dates.len(), columns.len(), &cells).transpose();
    Ok(DatedTable { dates, columns, values })
}

/// Fails with the first differing date, if any.
pub fn check_dates(a: &DatedTable, b: &DatedTable, what: &str) -> Result<()> {
    if a.dates == b.dates {
        return Ok(());
    }
    let detail = match a.dates.iter().zip(&b.dates).position(|(x, y)| x != y) {
        Some(i) => format!("{what}: row {} has date {} vs {}", i + 1, b.dates[i], a.dates[i]),
        None => format!("{what}: {} dates vs {}", b.dates.len(), a.dates.len()),
    };
    Err(Error::DateMisalignment(detail))
}

/// Returns, factors and per-period benchmark weights on a common date index.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelSet {
    pub returns: ReturnPanel,
    pub factors: FactorPanel,
    /// `p x T` benchmark weights, columns aligned with the return dates.
    pub benchmark: DMatrix<f64>,
}

/// Reorders benchmark columns to the asset order of the returns.
fn align_benchmark(returns: &DatedTable, bench: &DatedTable) -> Result<DMatrix<f64>> {
    check_dates(returns, bench, "benchmark")?;
    let mut out = DMatrix::zeros(returns.columns.len(), returns.dates.len());
    for (i, asset) in returns.columns.iter().enumerate() {
        let k = bench
            .columns
            .iter()
            .position(|c| c == asset)
            .ok_or_else(|| Error::Config(format!("benchmark has no column for asset '{asset}'")))?;
        out.row_mut(i).copy_from(&bench.values.row(k));
    }
    for (t, col) in out.column_iter().enumerate() {
        let sum: f64 = col.sum();
        if (sum - 1.0).abs() > 1e-8 {
            return Err(Error::Config(format!(
                "benchmark weights on {} sum to {sum}, expected 1",
                returns.dates[t]
            )));
        }
    }
    Ok(out)
}

/// Builds aligned panels; without a benchmark table the benchmark is equal-weight.
pub fn assemble_panels(returns: DatedTable, factors: DatedTable, benchmark: Option<DatedTable>) -> Result<PanelSet> {
    check_dates(&returns, &factors, "factors")?;
    let p = returns.columns.len();
    let t = returns.dates.len();
    let bench = match benchmark {
        Some(b) => align_benchmark(&returns, &b)?,
        None => DMatrix::from_element(p, t, 1.0 / p as f64),
    };
    Ok(PanelSet {
        returns: ReturnPanel::new(returns.columns, returns.dates, returns.values)?,
        factors: FactorPanel::new(factors.columns, factors.values)?,
        benchmark: bench,
    })
}

/// Reads one panel file of the given kind.
pub fn load_panel(path: &Path, kind: PanelKind) -> Result<DatedTable> {
    let table = read_table(path)?;
    if kind == PanelKind::Returns && table.columns.len() < 2 {
        return Err(Error::Config(format!("{}: need at least two assets", path.display())));
    }
    Ok(table)
}

/// Loads and aligns the three input files.
pub fn load_panels(returns: &Path, factors: &Path, benchmark: Option<&Path>) -> Result<PanelSet> {
    let r = load_panel(returns, PanelKind::Returns)?;
    let f = load_panel(factors, PanelKind::Factors)?;
    let b = benchmark.map(|p| load_panel(p, PanelKind::Benchmark)).transpose()?;
    assemble_panels(r, f, b)
}

/// Writes a `date,<columns...>` CSV for a `columns x dates` matrix.
pub fn write_table(path: &Path, dates: &[String], columns: &[String], values: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["date".to_string()];
    header.extend(columns.iter().cloned());
    w.write_record(&header)?;
    for (t, date) in dates.iter().enumerate() {
        let mut row = vec![date.clone()];
        row.extend(values.column(t).iter().map(|v| format!("{v:e}")));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
