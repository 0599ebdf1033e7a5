//! CSV ingestion.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use crate::config::{ColumnSpec, DataConfig, Transform};

/// An observed series with missing entries as `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataSet {
    pub values: Vec<Option<f64>>,
    pub source: String,
    pub column: String,
    pub transform: Transform,
}

impl DataSet {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn n_observed(&self) -> usize {
        self.values.iter().flatten().count()
    }
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("na")
}

pub fn ingest(path: &Path, cfg: &DataConfig) -> Result<DataSet> {
    let text = std::fs::read(path).with_context(|| format!("cannot read data file {}", path.display()))?;
    parse(&text, cfg, &path.display().to_string())
}

/// Parses CSV bytes. Row numbers in errors are 1-based file lines.
pub fn parse(bytes: &[u8], cfg: &DataConfig, source: &str) -> Result<DataSet> {
    if !cfg.delimiter.is_ascii() {
        bail!("data.delimiter: must be a single ASCII character");
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .delimiter(cfg.delimiter as u8)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let rows: Vec<csv::StringRecord> = reader
        .records()
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("malformed CSV in {source}"))?;
    if rows.is_empty() {
        bail!("{source}: no rows");
    }

    let header = match cfg.header {
        Some(h) => h,
        None => match &cfg.column {
            ColumnSpec::Name(_) => true,
            ColumnSpec::Index(i) => {
                let first = rows[0].get(i.saturating_sub(1)).unwrap_or("");
                !is_missing(first) && first.parse::<f64>().is_err()
            }
        },
    };
    let col = match &cfg.column {
        ColumnSpec::Index(0) => bail!("data.column: indices start at 1"),
        ColumnSpec::Index(i) => i - 1,
        ColumnSpec::Name(name) => {
            if !header {
                bail!("data.column: selecting `{name}` by name needs a header row");
            }
            rows[0].iter().position(|h| h == name).with_context(|| format!("{source}: no column named `{name}`"))?
        }
    };
    let column = match (&cfg.column, header) {
        (ColumnSpec::Name(n), _) => n.clone(),
        (_, true) => rows[0].get(col).unwrap_or("").to_string(),
        (ColumnSpec::Index(i), false) => format!("column {i}"),
    };

    let skip = usize::from(header);
    let mut values = Vec::with_capacity(rows.len() - skip);
    for (r, row) in rows.iter().enumerate().skip(skip) {
        let line = row.position().map_or(r as u64 + 1, |p| p.line());
        let cell = row.get(col).with_context(|| format!("{source}: row {line} has no column {}", col + 1))?;
        if is_missing(cell) {
            values.push(None);
            continue;
        }
        let x: f64 = cell.parse().map_err(|_| anyhow::anyhow!("{source}: row {line}: `{cell}` is not a number"))?;
        if !x.is_finite() {
            bail!("{source}: row {line}: `{cell}` is not finite");
        }
        values.push(match cfg.transform {
            Transform::None => Some(x),
            Transform::LogAbsolute if x == 0.0 => None,
            Transform::LogAbsolute => Some(x.abs().ln()),
        });
    }
    if values.len() < 2 {
        bail!("{source}: need at least 2 rows, found {}", values.len());
    }
    if values.iter().all(Option::is_none) {
        bail!("{source}: every value is missing");
    }
    Ok(DataSet { values, source: source.to_string(), column, transform: cfg.transform })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(column: ColumnSpec) -> DataConfig {
        DataConfig { column, ..Default::default() }
    }

    #[test]
    fn second_column_with_header() {
        let d = parse(b"t,x\n1,0.5\n2,-1.25\n", &cfg(ColumnSpec::Index(2)), "mem").unwrap();
        assert_eq!(d.values, vec![Some(0.5), Some(-1.25)]);
        assert_eq!(d.column, "x");
        let d = parse(b"t,x\n1,0.5\n2,-1.25\n", &cfg(ColumnSpec::Name("x".into())), "mem").unwrap();
        assert_eq!(d.values, vec![Some(0.5), Some(-1.25)]);
    }

    #[test]
    fn headerless_and_missing_markers() {
        let d = parse(b"1.5\n\nNA\n2\nna\n", &cfg(ColumnSpec::Index(1)), "mem");
        // blank lines are skipped by the CSV reader, so use an explicit empty cell
        assert_eq!(d.unwrap().values, vec![Some(1.5), None, Some(2.0), None]);
        let d = parse(b"1;1.5\n2;\n3;NA\n", &DataConfig { delimiter: ';', ..cfg(ColumnSpec::Index(2)) }, "m").unwrap();
        assert_eq!(d.values, vec![Some(1.5), None, None]);
    }

    #[test]
    fn log_absolute_flags_zero() {
        let c = DataConfig { transform: Transform::LogAbsolute, ..cfg(ColumnSpec::Index(1)) };
        let d = parse(b"-2\n0\n1\n", &c, "mem").unwrap();
        assert_eq!(d.values, vec![Some(2f64.ln()), None, Some(0.0)]);
    }

    #[test]
    fn errors_name_the_row() {
        let err = parse(b"x\n1\n2\nabc\n", &cfg(ColumnSpec::Index(1)), "mem").unwrap_err();
        assert!(err.to_string().contains("row 4"), "{err}");
        assert!(parse(b"NA\nNA\n", &cfg(ColumnSpec::Index(1)), "mem").is_err());
        assert!(parse(b"1\n2\n", &cfg(ColumnSpec::Index(3)), "mem").is_err());
    }
}
