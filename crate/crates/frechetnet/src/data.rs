//! In-memory datasets and the on-disk dataset container.
//!
//! The container is a plain-text CSV with a one-line self-describing header:
//!
//! ```text
//! frechetnet-dataset,v=1,space=wasserstein,dim=100,p=10
//! ```
//!
//! followed by one record per row: `p` predictor values, then the response
//! in its natural coordinates (quantile values, row-major Laplacian entries,
//! shares, or Euclidean coordinates). Floats are written in Rust's shortest
//! round-trip decimal form, so files are diffable and re-readable without
//! loss.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};

use crate::spaces::{MetricSpace, Point};
use crate::{Error, Result};

const DATASET_MAGIC: &str = "frechetnet-dataset";
const DATASET_VERSION: u32 = 1;

/// One predictor/response pair.
#[derive(Debug, Clone)]
pub struct SimPair {
    pub predictors: Array1<f64>,
    pub response: Point,
}

/// A predictor matrix with one response point per row.
#[derive(Debug, Clone)]
pub struct Dataset {
    space: MetricSpace,
    x: Array2<f64>,
    responses: Vec<Point>,
}

impl Dataset {
    pub fn new(space: MetricSpace, x: Array2<f64>, responses: Vec<Point>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::Parameter("dataset must not be empty".into()));
        }
        if x.nrows() != responses.len() {
            return Err(Error::Contract(format!(
                "{} predictor rows against {} responses",
                x.nrows(),
                responses.len()
            )));
        }
        for point in &responses {
            space.check_point(point)?;
        }
        Ok(Self { space, x, responses })
    }

    pub fn from_pairs(space: MetricSpace, pairs: Vec<SimPair>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Parameter("dataset must not be empty".into()));
        }
        let p = pairs[0].predictors.len();
        let mut x = Array2::<f64>::zeros((pairs.len(), p));
        let mut responses = Vec::with_capacity(pairs.len());
        for (i, pair) in pairs.into_iter().enumerate() {
            if pair.predictors.len() != p {
                return Err(Error::Dimension(format!(
                    "record {i} has {} predictors, expected {p}",
                    pair.predictors.len()
                )));
            }
            x.row_mut(i).assign(&pair.predictors);
            responses.push(pair.response);
        }
        Self::new(space, x, responses)
    }

    pub fn space(&self) -> MetricSpace {
        self.space
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn predictor_dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn predictors(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn responses(&self) -> &[Point] {
        &self.responses
    }

    /// Rows of this dataset at the given indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Parameter("empty subset".into()));
        }
        let mut x = Array2::<f64>::zeros((indices.len(), self.predictor_dim()));
        let mut responses = Vec::with_capacity(indices.len());
        for (row, &i) in indices.iter().enumerate() {
            if i >= self.len() {
                return Err(Error::Parameter(format!(
                    "index {i} out of range for {} records",
                    self.len()
                )));
            }
            x.row_mut(row).assign(&self.x.row(i));
            responses.push(self.responses[i].clone());
        }
        Ok(Self {
            space: self.space,
            x,
            responses,
        })
    }

    /// Serializes to the dataset container format.
    pub fn to_container_string(&self) -> Result<String> {
        let mut out = String::new();
        writeln!(
            out,
            "{DATASET_MAGIC},v={DATASET_VERSION},space={},dim={},p={}",
            self.space.kind(),
            self.space.header_dim(),
            self.predictor_dim()
        )
        .expect("string write");
        for (row, point) in self.x.axis_iter(Axis(0)).zip(&self.responses) {
            let natural = self.space.to_natural(point)?;
            let fields: Vec<String> = row
                .iter()
                .chain(natural.iter())
                .map(|v| format!("{v}"))
                .collect();
            writeln!(out, "{}", fields.join(",")).expect("string write");
        }
        Ok(out)
    }

    pub fn write_container(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_container_string()?)?;
        Ok(())
    }

    pub fn from_container_string(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty dataset file".into()))?;
        let fields: Vec<&str> = header.split(',').collect();
        if fields.len() != 5 || fields[0] != DATASET_MAGIC {
            return Err(Error::Format(format!("unrecognized header: {header}")));
        }
        let version: u32 = parse_keyed(fields[1], "v")?;
        if version != DATASET_VERSION {
            return Err(Error::Version {
                expected: DATASET_VERSION,
                found: version,
            });
        }
        let kind = fields[2]
            .strip_prefix("space=")
            .ok_or_else(|| Error::Format(format!("bad space field: {}", fields[2])))?;
        let dim: usize = parse_keyed(fields[3], "dim")?;
        let p: usize = parse_keyed(fields[4], "p")?;
        let space = MetricSpace::from_kind_dim(kind, dim)?;
        let response_len = space.embed_dim();
        let mut pairs = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let values: Vec<f64> = line
                .split(',')
                .map(|f| {
                    f.parse::<f64>().map_err(|_| {
                        Error::Format(format!("record {}: bad number {f:?}", lineno + 1))
                    })
                })
                .collect::<Result<_>>()?;
            if values.len() != p + response_len {
                return Err(Error::Format(format!(
                    "record {}: {} fields, expected {}",
                    lineno + 1,
                    values.len(),
                    p + response_len
                )));
            }
            let predictors = Array1::from_vec(values[..p].to_vec());
            let response = space.from_natural(Array1::from_vec(values[p..].to_vec()))?;
            pairs.push(SimPair {
                predictors,
                response,
            });
        }
        Dataset::from_pairs(space, pairs)
    }

    pub fn read_container(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_container_string(&text)
    }
}

fn parse_keyed<T: std::str::FromStr>(field: &str, key: &str) -> Result<T> {
    field
        .strip_prefix(key)
        .and_then(|rest| rest.strip_prefix('='))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Format(format!("expected {key}=<value>, got {field:?}")))
}
