//! CSV datasets.
//!
//! A dataset file has a header row. The response and fixed-effect columns
//! are numeric; grouping columns hold arbitrary labels and expand to
//! indicator blocks, with levels ordered by first appearance. Rows are
//! numbered from 1, not counting the header.

use std::io::{Read, Write};
use std::path::Path;

use infosplit_core::model::{CovarianceModel, Dataset, Family};
use nalgebra::{DMatrix, DVector};

use crate::config::ModelSpec;
use crate::error::{CliError, Result};

/// One grouping column, as level labels and per-row level codes.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupFactor {
    pub name: String,
    pub levels: Vec<String>,
    pub codes: Vec<usize>,
}

impl GroupFactor {
    pub fn from_labels(name: &str, labels: &[String]) -> Self {
        let mut levels: Vec<String> = Vec::new();
        let codes = labels
            .iter()
            .map(|label| match levels.iter().position(|l| l == label) {
                Some(i) => i,
                None => {
                    levels.push(label.clone());
                    levels.len() - 1
                }
            })
            .collect();
        Self {
            name: name.into(),
            levels,
            codes,
        }
    }

    pub fn indicator(&self) -> DMatrix<f64> {
        let mut z = DMatrix::zeros(self.codes.len(), self.levels.len());
        for (row, &code) in self.codes.iter().enumerate() {
            z[(row, code)] = 1.0;
        }
        z
    }
}

/// A dataset together with the column layout it was read with.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub spec: ModelSpec,
    pub dataset: Dataset,
    pub groups: Vec<GroupFactor>,
}

impl Table {
    /// Builds `X` (intercept first when enabled) and `Z` from raw columns.
    pub fn assemble(
        spec: &ModelSpec,
        y: Vec<f64>,
        fixed: Vec<Vec<f64>>,
        groups: Vec<GroupFactor>,
    ) -> Result<Self> {
        let n = y.len();
        let offset = usize::from(spec.intercept);
        let p = offset + fixed.len();
        let mut x = DMatrix::zeros(n, p);
        if spec.intercept {
            x.column_mut(0).fill(1.0);
        }
        for (j, col) in fixed.iter().enumerate() {
            x.column_mut(offset + j).copy_from_slice(col);
        }
        let blocks: Vec<DMatrix<f64>> = groups.iter().map(GroupFactor::indicator).collect();
        let b = blocks.iter().map(|z| z.ncols()).sum();
        let mut z = DMatrix::zeros(n, b);
        let mut col = 0;
        for blk in &blocks {
            z.columns_mut(col, blk.ncols()).copy_from(blk);
            col += blk.ncols();
        }
        let dataset = Dataset::new(DVector::from_vec(y), x, z)?;
        Ok(Self {
            spec: spec.clone(),
            dataset,
            groups,
        })
    }

    pub fn model(&self) -> Result<CovarianceModel> {
        let n = self.dataset.n();
        let blocks = self.groups.iter().map(GroupFactor::indicator).collect();
        Ok(match self.spec.family {
            Family::ScaleOnly => CovarianceModel::scale_only(n)?,
            Family::VarianceComponents => CovarianceModel::variance_components(n, blocks)?,
            Family::Ar1Residual => CovarianceModel::ar1(n)?,
            Family::Composite => CovarianceModel::composite(n, blocks)?,
        })
    }

    pub fn with_response(&self, y: DVector<f64>) -> Result<Self> {
        Ok(Self {
            spec: self.spec.clone(),
            dataset: self.dataset.with_response(y)?,
            groups: self.groups.clone(),
        })
    }
}

fn parse_number(raw: &str, row: usize, column: &str) -> Result<f64> {
    let text = raw.trim();
    match text.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(CliError::NonNumericValue {
            row,
            column: column.into(),
            value: raw.into(),
        }),
    }
}

fn csv_error(origin: &Path, e: csv::Error) -> CliError {
    if e.is_io_error() {
        CliError::io(origin, e.into())
    } else {
        CliError::Data(format!("{}: {e}", origin.display()))
    }
}

/// Reads a dataset from CSV text laid out as described by `spec`.
pub fn read_dataset<R: Read>(reader: R, spec: &ModelSpec, origin: &Path) -> Result<Table> {
    spec.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| csv_error(origin, e))?.clone();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::MissingColumn(name.into()))
    };
    let response_at = find(&spec.response)?;
    let fixed_at = spec
        .fixed
        .iter()
        .map(|c| find(c))
        .collect::<Result<Vec<_>>>()?;
    let group_at = spec
        .groups
        .iter()
        .map(|c| find(c))
        .collect::<Result<Vec<_>>>()?;

    let mut y = Vec::new();
    let mut fixed = vec![Vec::new(); fixed_at.len()];
    let mut labels = vec![Vec::new(); group_at.len()];
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| csv_error(origin, e))?;
        let row = i + 1;
        y.push(parse_number(&record[response_at], row, &spec.response)?);
        for (j, &at) in fixed_at.iter().enumerate() {
            fixed[j].push(parse_number(&record[at], row, &spec.fixed[j])?);
        }
        for (j, &at) in group_at.iter().enumerate() {
            let label = &record[at];
            if label.is_empty() {
                return Err(CliError::Data(format!(
                    "empty level in column `{}` at row {row}",
                    spec.groups[j]
                )));
            }
            labels[j].push(label.to_string());
        }
    }
    let groups = spec
        .groups
        .iter()
        .zip(&labels)
        .map(|(name, l)| GroupFactor::from_labels(name, l))
        .collect();
    Table::assemble(spec, y, fixed, groups)
}

pub fn parse_dataset(path: &Path, spec: &ModelSpec) -> Result<Table> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    read_dataset(std::io::BufReader::new(file), spec, path)
}

/// Writes `table` in the layout [`read_dataset`] reads back exactly.
/// Numbers use the shortest representation that round-trips.
pub fn write_dataset_to<W: Write>(writer: W, table: &Table) -> std::result::Result<(), csv::Error> {
    let spec = &table.spec;
    let data = &table.dataset;
    let offset = usize::from(spec.intercept);
    let mut w = csv::Writer::from_writer(writer);
    let header: Vec<&str> = std::iter::once(spec.response.as_str())
        .chain(spec.fixed.iter().map(String::as_str))
        .chain(spec.groups.iter().map(String::as_str))
        .collect();
    w.write_record(&header)?;
    for row in 0..data.n() {
        let mut record = vec![data.y()[row].to_string()];
        for j in 0..spec.fixed.len() {
            record.push(data.x()[(row, offset + j)].to_string());
        }
        for g in &table.groups {
            record.push(g.levels[g.codes[row]].clone());
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset(path: &Path, table: &Table) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    write_dataset_to(std::io::BufWriter::new(file), table).map_err(|e| csv_error(path, e))
}
