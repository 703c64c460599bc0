//! Microdata rows, per-(t, z) cell summaries, and their CSV formats.
//!
//! Microdata CSV: header row with at least `t`, `z`, `d`, `y`; any other
//! selected columns are covariates. Summary CSV: header `t,z,mean,se,n`
//! with one record per (t, z) cell.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::compensated_sum;

/// One observed unit: time, instrument, exposure, outcome and covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub t: u8,
    pub z: u8,
    pub d: u8,
    pub y: f64,
    pub x: Vec<f64>,
    pub unit_id: Option<String>,
}

impl Observation {
    pub fn new(t: u8, z: u8, d: u8, y: f64, x: Vec<f64>) -> Self {
        Observation { t, z, d, y, x, unit_id: None }
    }

    pub fn with_unit_id(mut self, id: impl Into<String>) -> Self {
        self.unit_id = Some(id.into());
        self
    }

    fn validate(&self, row: usize, names: &[String]) -> Result<()> {
        for (v, col) in [(self.t, "t"), (self.z, "z"), (self.d, "d")] {
            if v > 1 {
                return Err(Error::NonBinaryValue { row, column: col.into() });
            }
        }
        if !self.y.is_finite() {
            return Err(Error::NonFiniteValue { row, column: "y".into() });
        }
        for (j, v) in self.x.iter().enumerate() {
            if !v.is_finite() {
                let column = names.get(j).cloned().unwrap_or_else(|| format!("x{j}"));
                return Err(Error::NonFiniteValue { row, column });
            }
        }
        Ok(())
    }
}

/// An i.i.d. sample of observations sharing one covariate layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    rows: Vec<Observation>,
    covariate_names: Vec<String>,
}

impl Dataset {
    pub fn new(rows: Vec<Observation>, covariate_names: Vec<String>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidConfig("dataset has no rows".into()));
        }
        let p = covariate_names.len();
        for (i, r) in rows.iter().enumerate() {
            if r.x.len() != p {
                return Err(Error::DimensionMismatch(format!(
                    "row {} has {} covariates, expected {p}",
                    i + 1,
                    r.x.len()
                )));
            }
            r.validate(i + 1, &covariate_names)?;
        }
        Ok(Dataset { rows, covariate_names })
    }

    /// Builds a dataset from trusted generated rows without per-row validation.
    pub(crate) fn from_trusted(rows: Vec<Observation>, covariate_names: Vec<String>) -> Self {
        Dataset { rows, covariate_names }
    }

    pub fn rows(&self) -> &[Observation] {
        &self.rows
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn p(&self) -> usize {
        self.covariate_names.len()
    }

    /// Same layout, different rows (used by resampling).
    pub fn with_rows(&self, rows: Vec<Observation>) -> Dataset {
        Dataset { rows, covariate_names: self.covariate_names.clone() }
    }

    /// Drops covariates, keeping only (t, z, d, y).
    pub fn without_covariates(&self) -> Dataset {
        let rows = self
            .rows
            .iter()
            .map(|r| Observation { x: Vec::new(), ..r.clone() })
            .collect();
        Dataset { rows, covariate_names: Vec::new() }
    }
}

/// Column mapping for microdata ingestion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub t: String,
    pub z: String,
    pub d: String,
    pub y: String,
    /// `None` maps every column not otherwise claimed as a covariate.
    pub covariates: Option<Vec<String>>,
    pub unit_id: Option<String>,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            t: "t".into(),
            z: "z".into(),
            d: "d".into(),
            y: "y".into(),
            covariates: None,
            unit_id: None,
        }
    }
}

pub fn load_dataset(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())
        .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
    read_dataset(file, schema)
}

pub fn read_dataset<R: Read>(reader: R, schema: &Schema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_owned()))
    };
    let it = find(&schema.t)?;
    let iz = find(&schema.z)?;
    let id = find(&schema.d)?;
    let iy = find(&schema.y)?;
    let iu = schema.unit_id.as_deref().map(find).transpose()?;
    let covariate_names: Vec<String> = match &schema.covariates {
        Some(names) => names.clone(),
        None => {
            let claimed = [&schema.t, &schema.z, &schema.d, &schema.y];
            headers
                .iter()
                .filter(|h| !claimed.contains(h) && Some(*h) != schema.unit_id.as_ref())
                .cloned()
                .collect()
        }
    };
    let ix = covariate_names.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = k + 1;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let binary = |i: usize, col: &str| -> Result<u8> {
            match field(i) {
                "0" => Ok(0),
                "1" => Ok(1),
                _ => Err(Error::NonBinaryValue { row, column: col.to_owned() }),
            }
        };
        let real = |i: usize, col: &str| -> Result<f64> {
            field(i)
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::NonFiniteValue { row, column: col.to_owned() })
        };
        let t = binary(it, &schema.t)?;
        let z = binary(iz, &schema.z)?;
        let d = binary(id, &schema.d)?;
        let y = real(iy, &schema.y)?;
        let x = ix
            .iter()
            .zip(&covariate_names)
            .map(|(&i, name)| real(i, name))
            .collect::<Result<Vec<_>>>()?;
        let unit_id = iu.map(|i| field(i).to_owned());
        rows.push(Observation { t, z, d, y, x, unit_id });
    }
    Dataset::new(rows, covariate_names)
}

/// Sufficient statistics of (y, d) within one (t, z) cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub t: u8,
    pub z: u8,
    pub mean_y: f64,
    pub mean_d: f64,
    pub var_y: f64,
    pub var_d: f64,
    pub cov_yd: f64,
    pub n_cell: usize,
    pub se_mean_y: f64,
    pub se_mean_d: f64,
    /// False for tables loaded from summary files, where the within-cell
    /// covariance of y and d is unknown.
    pub cov_available: bool,
}

/// The four (t, z) cells, indexed as `2 * t + z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTable {
    cells: [CellSummary; 4],
    n_total: usize,
}

pub const CELLS: [(u8, u8); 4] = [(0, 0), (0, 1), (1, 0), (1, 1)];

/// Sign of a cell in the double difference: +1 for (0,0) and (1,1), -1 otherwise.
pub fn cell_sign(t: u8, z: u8) -> f64 {
    if t == z {
        1.0
    } else {
        -1.0
    }
}

impl CellTable {
    pub fn from_cells(cells: [CellSummary; 4]) -> Result<Self> {
        for (k, &(t, z)) in CELLS.iter().enumerate() {
            if cells[k].t != t || cells[k].z != z {
                return Err(Error::InvalidConfig("cells must be ordered (0,0),(0,1),(1,0),(1,1)".into()));
            }
        }
        let n_total = cells.iter().map(|c| c.n_cell).sum();
        Ok(CellTable { cells, n_total })
    }

    pub fn cell(&self, t: u8, z: u8) -> &CellSummary {
        &self.cells[(2 * t + z) as usize]
    }

    pub fn cells(&self) -> &[CellSummary; 4] {
        &self.cells
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }

    pub fn cov_available(&self) -> bool {
        self.cells.iter().all(|c| c.cov_available)
    }

    fn double_difference(&self, f: impl Fn(&CellSummary) -> f64) -> f64 {
        // (1,1) - (0,1) - (1,0) + (0,0)
        f(self.cell(1, 1)) - f(self.cell(0, 1)) - f(self.cell(1, 0)) + f(self.cell(0, 0))
    }

    /// Outcome double difference.
    pub fn delta_y(&self) -> f64 {
        self.double_difference(|c| c.mean_y)
    }

    /// Exposure double difference.
    pub fn delta_d(&self) -> f64 {
        self.double_difference(|c| c.mean_d)
    }
}

/// Per-cell means, (n-1)-denominator variances and covariance of (y, d).
pub fn cell_table(data: &Dataset) -> Result<CellTable> {
    let mut groups: [Vec<(f64, f64)>; 4] = Default::default();
    for r in data.rows() {
        groups[(2 * r.t + r.z) as usize].push((r.y, r.d as f64));
    }
    let mut cells = Vec::with_capacity(4);
    for (k, &(t, z)) in CELLS.iter().enumerate() {
        let g = &groups[k];
        if g.is_empty() {
            return Err(Error::EmptyCell { t, z });
        }
        let n = g.len() as f64;
        let mean_y = compensated_sum(g.iter().map(|p| p.0)) / n;
        let mean_d = compensated_sum(g.iter().map(|p| p.1)) / n;
        let (var_y, var_d, cov_yd) = if g.len() > 1 {
            let denom = n - 1.0;
            (
                compensated_sum(g.iter().map(|p| (p.0 - mean_y).powi(2))) / denom,
                compensated_sum(g.iter().map(|p| (p.1 - mean_d).powi(2))) / denom,
                compensated_sum(g.iter().map(|p| (p.0 - mean_y) * (p.1 - mean_d))) / denom,
            )
        } else {
            (0.0, 0.0, 0.0)
        };
        cells.push(CellSummary {
            t,
            z,
            mean_y,
            mean_d,
            var_y,
            var_d,
            cov_yd,
            n_cell: g.len(),
            se_mean_y: (var_y / n).sqrt(),
            se_mean_d: (var_d / n).sqrt(),
            cov_available: true,
        });
    }
    CellTable::from_cells(cells.try_into().expect("four cells"))
}

/// Which variable a summary file describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SummaryRole {
    Outcome,
    Exposure,
}

#[derive(Debug, Deserialize, Serialize)]
struct SummaryRecord {
    t: u8,
    z: u8,
    mean: f64,
    se: f64,
    n: usize,
}

pub fn load_summary(path: impl AsRef<Path>, role: SummaryRole) -> Result<CellTable> {
    let file = std::fs::File::open(path.as_ref())
        .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
    read_summary(file, role)
}

pub fn read_summary<R: Read>(reader: R, role: SummaryRole) -> Result<CellTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut found: HashMap<(u8, u8), SummaryRecord> = HashMap::new();
    for rec in rdr.deserialize::<SummaryRecord>() {
        let rec = rec?;
        if rec.t > 1 || rec.z > 1 {
            return Err(Error::Parse(format!("cell (t={}, z={}) out of range", rec.t, rec.z)));
        }
        if rec.se < 0.0 {
            return Err(Error::NegativeSe);
        }
        if !rec.mean.is_finite() || !rec.se.is_finite() {
            return Err(Error::Parse("non-finite mean or se".into()));
        }
        if rec.n == 0 {
            return Err(Error::Parse(format!("cell (t={}, z={}) has n = 0", rec.t, rec.z)));
        }
        if found.insert((rec.t, rec.z), rec).is_some() {
            return Err(Error::Parse("duplicate cell record".into()));
        }
    }
    let mut cells = Vec::with_capacity(4);
    for &(t, z) in &CELLS {
        let rec = found.get(&(t, z)).ok_or(Error::MissingCell { t, z })?;
        let var = rec.se * rec.se * rec.n as f64;
        let mut c = CellSummary {
            t,
            z,
            mean_y: 0.0,
            mean_d: 0.0,
            var_y: 0.0,
            var_d: 0.0,
            cov_yd: 0.0,
            n_cell: rec.n,
            se_mean_y: 0.0,
            se_mean_d: 0.0,
            cov_available: false,
        };
        match role {
            SummaryRole::Outcome => {
                c.mean_y = rec.mean;
                c.se_mean_y = rec.se;
                c.var_y = var;
            }
            SummaryRole::Exposure => {
                c.mean_d = rec.mean;
                c.se_mean_d = rec.se;
                c.var_d = var;
            }
        }
        cells.push(c);
    }
    CellTable::from_cells(cells.try_into().expect("four cells"))
}

/// Writes the `role` column of a table in the summary format.
pub fn write_summary<W: Write>(table: &CellTable, role: SummaryRole, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for c in table.cells() {
        let (mean, se) = match role {
            SummaryRole::Outcome => (c.mean_y, c.se_mean_y),
            SummaryRole::Exposure => (c.mean_d, c.se_mean_d),
        };
        w.serialize(SummaryRecord { t: c.t, z: c.z, mean, se, n: c.n_cell })?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const D8: &str = "t,z,d,y\n0,0,0,2\n0,0,1,2\n0,1,0,1\n0,1,1,3\n1,0,0,3\n1,0,1,3\n1,1,1,4\n1,1,1,6\n";

    fn d8() -> Dataset {
        read_dataset(D8.as_bytes(), &Schema::default()).unwrap()
    }

    #[test]
    fn loads_plain_microdata() {
        let d = d8();
        assert_eq!(d.n(), 8);
        assert_eq!(d.p(), 0);
        assert_eq!(d.rows()[3].y, 3.0);
    }

    #[test]
    fn rejects_non_binary_exposure() {
        let csv = "t,z,d,y\n0,0,0,1\n0,1,1,1\n1,0,2,1\n";
        let err = read_dataset(csv.as_bytes(), &Schema::default()).unwrap_err();
        assert_eq!(err, Error::NonBinaryValue { row: 3, column: "d".into() });
    }

    #[test]
    fn maps_extra_column_as_covariate() {
        let csv = "t,z,d,y,x1\n0,0,0,1,0.5\n1,1,1,2,-0.5\n";
        let d = read_dataset(csv.as_bytes(), &Schema::default()).unwrap();
        assert_eq!(d.p(), 1);
        assert_eq!(d.covariate_names(), ["x1".to_string()]);
        let named = Schema { covariates: Some(vec![]), ..Schema::default() };
        assert_eq!(read_dataset(csv.as_bytes(), &named).unwrap().p(), 0);
    }

    #[test]
    fn missing_and_non_finite_columns() {
        let err = read_dataset("t,z,y\n0,0,1\n".as_bytes(), &Schema::default()).unwrap_err();
        assert_eq!(err, Error::MissingColumn("d".into()));
        let err = read_dataset("t,z,d,y\n0,0,0,NaN\n".as_bytes(), &Schema::default()).unwrap_err();
        assert_eq!(err, Error::NonFiniteValue { row: 1, column: "y".into() });
        let err = read_dataset("t,z,d,y\n0,0,0,\n".as_bytes(), &Schema::default()).unwrap_err();
        assert_eq!(err, Error::NonFiniteValue { row: 1, column: "y".into() });
    }

    #[test]
    fn d8_cell_means() {
        let ct = cell_table(&d8()).unwrap();
        let mu_y = [2.0, 2.0, 3.0, 5.0];
        let mu_d = [0.5, 0.5, 0.5, 1.0];
        for (k, c) in ct.cells().iter().enumerate() {
            assert_eq!(c.mean_y, mu_y[k]);
            assert_eq!(c.mean_d, mu_d[k]);
            assert_eq!(c.n_cell, 2);
        }
        assert_eq!(ct.n_total(), 8);
        assert_eq!(ct.delta_y(), 2.0);
        assert_eq!(ct.delta_d(), 0.5);
    }

    #[test]
    fn empty_cell_is_reported() {
        let csv = "t,z,d,y\n0,0,0,2\n0,1,1,2\n1,0,0,3\n";
        let d = read_dataset(csv.as_bytes(), &Schema::default()).unwrap();
        assert_eq!(cell_table(&d).unwrap_err(), Error::EmptyCell { t: 1, z: 1 });
    }

    #[test]
    fn constant_outcome_has_zero_variance() {
        let rows = CELLS
            .iter()
            .flat_map(|&(t, z)| [0u8, 1].map(|d| Observation::new(t, z, d, 7.25, vec![])))
            .collect();
        let ct = cell_table(&Dataset::new(rows, vec![]).unwrap()).unwrap();
        for c in ct.cells() {
            assert_eq!(c.mean_y, 7.25);
            assert_eq!(c.var_y, 0.0);
        }
    }

    #[test]
    fn summary_round_trip_is_exact() {
        let ct = cell_table(&d8()).unwrap();
        for role in [SummaryRole::Outcome, SummaryRole::Exposure] {
            let mut buf = Vec::new();
            write_summary(&ct, role, &mut buf).unwrap();
            let back = read_summary(buf.as_slice(), role).unwrap();
            for (a, b) in ct.cells().iter().zip(back.cells()) {
                assert_eq!(a.n_cell, b.n_cell);
                match role {
                    SummaryRole::Outcome => {
                        assert_eq!(a.mean_y, b.mean_y);
                        assert_eq!(a.se_mean_y, b.se_mean_y);
                    }
                    SummaryRole::Exposure => {
                        assert_eq!(a.mean_d, b.mean_d);
                        assert_eq!(a.se_mean_d, b.se_mean_d);
                    }
                }
            }
        }
    }

    #[test]
    fn summary_validation() {
        let ok = "t,z,mean,se,n\n0,0,1.5,0.1,100\n0,1,1.7,0.1,90\n1,0,2.0,0.2,80\n1,1,2.5,0.2,70\n";
        let ct = read_summary(ok.as_bytes(), SummaryRole::Exposure).unwrap();
        assert_eq!(ct.cell(1, 1).mean_d, 2.5);
        assert_eq!(ct.cell(0, 1).n_cell, 90);
        assert!((ct.cell(1, 0).var_d - 0.04 * 80.0).abs() < 1e-12);
        assert!(!ct.cov_available());

        let three = "t,z,mean,se,n\n0,0,1.5,0.1,100\n0,1,1.7,0.1,90\n1,0,2.0,0.2,80\n";
        assert_eq!(
            read_summary(three.as_bytes(), SummaryRole::Outcome).unwrap_err(),
            Error::MissingCell { t: 1, z: 1 }
        );
        let neg = "t,z,mean,se,n\n0,0,1.5,-0.1,100\n0,1,1.7,0.1,90\n1,0,2.0,0.2,80\n1,1,2.5,0.2,70\n";
        assert_eq!(read_summary(neg.as_bytes(), SummaryRole::Outcome).unwrap_err(), Error::NegativeSe);
    }
}
