//! Dataset containers, CSV ingestion and estimator configuration.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{DiffNetError, Result};
use crate::exec::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Group {
    I,
    II,
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Group::I => write!(f, "I"),
            Group::II => write!(f, "II"),
        }
    }
}

/// Node and covariate measurements for one group.
///
/// Immutable after construction; `x` is n × p, `w` is n × q.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    group: Group,
    x: DMatrix<f64>,
    w: DMatrix<f64>,
    node_names: Vec<String>,
    covariate_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        group: Group,
        x: DMatrix<f64>,
        w: DMatrix<f64>,
        node_names: Vec<String>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let n = x.nrows();
        if w.nrows() != n {
            return Err(DiffNetError::DimensionMismatch {
                expected: n,
                got: w.nrows(),
            });
        }
        if n < 2 {
            return Err(DiffNetError::EmptyData(format!("{n} rows; at least 2 required")));
        }
        if x.ncols() < 2 {
            return Err(DiffNetError::EmptyData(format!(
                "{} node columns; at least 2 required",
                x.ncols()
            )));
        }
        if node_names.len() != x.ncols() {
            return Err(DiffNetError::DimensionMismatch {
                expected: x.ncols(),
                got: node_names.len(),
            });
        }
        if covariate_names.len() != w.ncols() {
            return Err(DiffNetError::DimensionMismatch {
                expected: w.ncols(),
                got: covariate_names.len(),
            });
        }
        for (mat, names) in [(&x, &node_names), (&w, &covariate_names)] {
            for c in 0..mat.ncols() {
                for r in 0..n {
                    if !mat[(r, c)].is_finite() {
                        return Err(DiffNetError::NonFinite {
                            row: r,
                            column: names[c].clone(),
                        });
                    }
                }
            }
        }
        Ok(Self {
            group,
            x,
            w,
            node_names,
            covariate_names,
        })
    }

    /// Convenience constructor with generated column names (`X1..`, `W1..`).
    pub fn from_matrices(group: Group, x: DMatrix<f64>, w: DMatrix<f64>) -> Result<Self> {
        let nodes = (1..=x.ncols()).map(|i| format!("X{i}")).collect();
        let covs = (1..=w.ncols()).map(|i| format!("W{i}")).collect();
        Self::new(group, x, w, nodes, covs)
    }

    pub fn group(&self) -> Group {
        self.group
    }
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }
    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }
    pub fn n(&self) -> usize {
        self.x.nrows()
    }
    pub fn p(&self) -> usize {
        self.x.ncols()
    }
    pub fn q(&self) -> usize {
        self.w.ncols()
    }
    pub fn node_names(&self) -> &[String] {
        &self.node_names
    }
    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    /// Write as CSV with node columns first, then covariates.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(out);
        let header: Vec<&str> = self
            .node_names
            .iter()
            .chain(self.covariate_names.iter())
            .map(String::as_str)
            .collect();
        wr.write_record(&header)?;
        for i in 0..self.n() {
            let row: Vec<String> = (0..self.p())
                .map(|j| self.x[(i, j)])
                .chain((0..self.q()).map(|r| self.w[(i, r)]))
                .map(|v| format!("{v:?}"))
                .collect();
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Column mapping for CSV ingestion.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Schema {
    /// Covariate column names, in order.
    pub covariates: Vec<String>,
    /// Explicit node columns; `None` means every column that is neither a
    /// covariate nor the group column.
    pub nodes: Option<Vec<String>>,
    /// Optional column holding the group label; rows whose value differs from
    /// `group_value` are skipped.
    pub group_column: Option<String>,
    pub group_value: Option<String>,
}

impl Schema {
    pub fn with_covariates<S: Into<String>>(covs: impl IntoIterator<Item = S>) -> Self {
        Self {
            covariates: covs.into_iter().map(Into::into).collect(),
            ..Self::default()
        }
    }
}

pub fn load_dataset(path: impl AsRef<Path>, group: Group, schema: &Schema) -> Result<Dataset> {
    let f = std::fs::File::open(path.as_ref())?;
    read_dataset(f, group, schema)
}

pub fn read_dataset<R: Read>(input: R, group: Group, schema: &Schema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| DiffNetError::MalformedFile(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DiffNetError::MalformedFile(format!("missing column '{name}'")))
    };
    let cov_idx: Vec<usize> = schema
        .covariates
        .iter()
        .map(|c| find(c))
        .collect::<Result<_>>()?;
    let group_idx = match &schema.group_column {
        Some(c) => Some(find(c)?),
        None => None,
    };
    let node_idx: Vec<usize> = match &schema.nodes {
        Some(nodes) => nodes.iter().map(|c| find(c)).collect::<Result<_>>()?,
        None => (0..headers.len())
            .filter(|i| !cov_idx.contains(i) && Some(*i) != group_idx)
            .collect(),
    };

    let mut xs: Vec<f64> = Vec::new();
    let mut ws: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| DiffNetError::MalformedFile(e.to_string()))?;
        if rec.len() != headers.len() {
            return Err(DiffNetError::MalformedFile(format!(
                "row {line} has {} fields, header has {}",
                rec.len(),
                headers.len()
            )));
        }
        if let (Some(gi), Some(gv)) = (group_idx, &schema.group_value) {
            if &rec[gi] != gv {
                continue;
            }
        }
        let parse = |ci: usize| -> Result<f64> {
            let v: f64 = rec[ci].parse().map_err(|_| {
                DiffNetError::MalformedFile(format!(
                    "row {line}, column '{}': non-numeric value '{}'",
                    headers[ci], &rec[ci]
                ))
            })?;
            if !v.is_finite() {
                return Err(DiffNetError::NonFinite {
                    row: n,
                    column: headers[ci].clone(),
                });
            }
            Ok(v)
        };
        for &ci in &node_idx {
            xs.push(parse(ci)?);
        }
        for &ci in &cov_idx {
            ws.push(parse(ci)?);
        }
        n += 1;
    }
    if n < 2 {
        return Err(DiffNetError::EmptyData(format!("{n} data rows")));
    }
    let x = DMatrix::from_row_slice(n, node_idx.len(), &xs);
    let w = DMatrix::from_row_slice(n, cov_idx.len(), &ws);
    Dataset::new(
        group,
        x,
        w,
        node_idx.iter().map(|&i| headers[i].clone()).collect(),
        cov_idx.iter().map(|&i| headers[i].clone()).collect(),
    )
}

/// Tuning and solver settings shared by the estimators.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Explicit descending λ grid; `None` builds `n_lambda` log-spaced points
    /// from λ_max down to `lambda_min_ratio · λ_max`.
    pub lambda_grid: Option<Vec<f64>>,
    pub n_lambda: usize,
    pub lambda_min_ratio: f64,
    pub cv_folds: usize,
    pub bcd_tol: f64,
    pub bcd_max_iter: usize,
    pub kkt_tol: f64,
    /// Nodewise tuning parameter; `None` uses `omega_scale · sqrt(log(m)/n)`.
    pub omega: Option<f64>,
    pub omega_scale: f64,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            lambda_grid: None,
            n_lambda: 50,
            lambda_min_ratio: 1e-3,
            cv_folds: 10,
            bcd_tol: 1e-7,
            bcd_max_iter: 10_000,
            kkt_tol: 1e-6,
            omega: None,
            omega_scale: 0.5,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if let Some(grid) = &self.lambda_grid {
            if grid.is_empty() {
                return Err(DiffNetError::InvalidConfig("empty lambda grid".into()));
            }
            if grid.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
                return Err(DiffNetError::InvalidConfig(
                    "lambda grid must be strictly positive".into(),
                ));
            }
            if grid.windows(2).any(|w| w[1] >= w[0]) {
                return Err(DiffNetError::InvalidConfig(
                    "lambda grid must be strictly descending".into(),
                ));
            }
        }
        if self.cv_folds < 2 || self.cv_folds > n {
            return Err(DiffNetError::InvalidConfig(format!(
                "cv_folds = {} outside [2, {n}]",
                self.cv_folds
            )));
        }
        if !(self.bcd_tol > 0.0) || !(self.kkt_tol > 0.0) {
            return Err(DiffNetError::InvalidConfig("tolerances must be positive".into()));
        }
        if let Some(o) = self.omega {
            if !(o > 0.0) {
                return Err(DiffNetError::InvalidConfig("omega must be positive".into()));
            }
        }
        Ok(())
    }

    /// ω actually used for a problem with `m` candidate coefficients on `n` rows.
    pub fn omega_for(&self, m: usize, n: usize) -> f64 {
        self.omega
            .unwrap_or_else(|| self.omega_scale * ((m.max(2) as f64).ln() / n as f64).sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str, schema: &Schema) -> Result<Dataset> {
        read_dataset(s.as_bytes(), Group::I, schema)
    }

    #[test]
    fn parses_stated_shape() {
        let csv = "a,b,age\n1,2,30\n3,4,40\n5,6,50\n";
        let d = parse(csv, &Schema::with_covariates(["age"])).unwrap();
        assert_eq!((d.n(), d.p(), d.q()), (3, 2, 1));
        assert_eq!(d.x()[(2, 1)], 6.0);
        assert_eq!(d.w()[(1, 0)], 40.0);
        assert_eq!(d.node_names(), &["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn nan_cell_is_rejected() {
        let csv = "a,b\n1,NaN\n3,4\n";
        assert!(matches!(
            parse(csv, &Schema::default()),
            Err(DiffNetError::NonFinite { .. })
        ));
    }

    #[test]
    fn ragged_and_non_numeric_rows_are_malformed() {
        assert!(matches!(
            parse("a,b\n1,2\n3\n", &Schema::default()),
            Err(DiffNetError::MalformedFile(_))
        ));
        assert!(matches!(
            parse("a,b\n1,2\n3,x\n", &Schema::default()),
            Err(DiffNetError::MalformedFile(_))
        ));
    }

    #[test]
    fn single_row_is_empty_data() {
        assert!(matches!(
            parse("a,b\n1,2\n", &Schema::default()),
            Err(DiffNetError::EmptyData(_))
        ));
    }

    #[test]
    fn group_column_filters_rows() {
        let csv = "a,b,er,age\n1,2,pos,30\n3,4,neg,40\n5,6,pos,50\n";
        let schema = Schema {
            covariates: vec!["age".into()],
            nodes: None,
            group_column: Some("er".into()),
            group_value: Some("pos".into()),
        };
        let d = parse(csv, &schema).unwrap();
        assert_eq!(d.n(), 2);
        assert_eq!(d.p(), 2);
        assert_eq!(d.x()[(1, 0)], 5.0);
    }

    #[test]
    fn q_zero_is_legal() {
        let d = parse("a,b\n1,2\n3,4\n", &Schema::default()).unwrap();
        assert_eq!(d.q(), 0);
    }

    #[test]
    fn config_validation() {
        let mut c = EstimatorConfig::default();
        assert!(c.validate(80).is_ok());
        c.lambda_grid = Some(vec![1.0, 2.0]);
        assert!(c.validate(80).is_err());
        c.lambda_grid = Some(vec![2.0, 1.0, 0.0]);
        assert!(c.validate(80).is_err());
        c.lambda_grid = Some(vec![2.0, 1.0]);
        c.cv_folds = 100;
        assert!(c.validate(80).is_err());
    }
}
