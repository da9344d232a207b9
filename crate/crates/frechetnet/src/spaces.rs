//! Response geometries: typed points, distances, linear embeddings,
//! projections back onto each space, and weighted Fréchet means.
//!
//! Every space comes with an embedding into a Euclidean coordinate vector
//! that is isometric up to a fixed scale, so weighted means with signed,
//! mean-one weights reduce to a weighted average of embeddings followed by a
//! projection back onto the space:
//!
//! * quantile functions embed as their value grid (scale `1/m`), projection
//!   is the isotonic projection;
//! * graph Laplacians embed as flattened entries, projection symmetrizes,
//!   clips positive off-diagonals, and rebuilds the diagonal;
//! * compositions embed as centered log-ratios, projection re-centers;
//! * Euclidean points embed as themselves.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::numerics::pava_isotonic;
use crate::{Error, Result};

/// Shares below this floor are replaced before taking log-ratios.
pub const ZERO_SHARE_FLOOR: f64 = 1e-8;

const MONOTONE_TOL: f64 = 1e-10;
const LAPLACIAN_TOL: f64 = 1e-8;
const SHARE_SUM_TOL: f64 = 1e-10;
const WEIGHT_MEAN_TOL: f64 = 1e-6;

/// A univariate distribution represented by its quantile values on the fixed
/// probability grid `p_j = (j - 0.5) / m`, `j = 1..m`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileFunction {
    values: Array1<f64>,
}

impl QuantileFunction {
    pub fn new(values: Array1<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Parameter("quantile function needs a nonempty grid".into()));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("quantile values must be finite".into()));
        }
        for w in values.windows(2) {
            if w[1] < w[0] - MONOTONE_TOL {
                return Err(Error::Parameter(format!(
                    "quantile values decrease: {} then {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(Self { values })
    }

    /// Empirical quantile function of a sample: the sorted draws, evaluated
    /// at the grid `p_j = (j - 0.5) / n`.
    pub fn from_samples(mut draws: Vec<f64>) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::Parameter("empty sample".into()));
        }
        draws.sort_by(|a, b| a.partial_cmp(b).expect("finite draws"));
        Self::new(Array1::from_vec(draws))
    }

    pub fn grid_size(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.values
    }

    /// The probability grid `(j - 0.5) / m` for `j = 1..m`.
    pub fn probability_grid(m: usize) -> Array1<f64> {
        Array1::from_shape_fn(m, |j| (j as f64 + 0.5) / m as f64)
    }
}

/// A symmetric matrix with zero row sums and nonpositive off-diagonals.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphLaplacian {
    entries: Array2<f64>,
}

impl GraphLaplacian {
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        let q = entries.nrows();
        if q == 0 || entries.ncols() != q {
            return Err(Error::Dimension(format!(
                "Laplacian must be square and nonempty, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if !entries.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("Laplacian entries must be finite".into()));
        }
        for i in 0..q {
            for j in 0..i {
                if (entries[[i, j]] - entries[[j, i]]).abs() > LAPLACIAN_TOL {
                    return Err(Error::Parameter(format!(
                        "Laplacian not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        for (i, row) in entries.axis_iter(Axis(0)).enumerate() {
            let sum: f64 = row.sum();
            if sum.abs() > LAPLACIAN_TOL {
                return Err(Error::Parameter(format!("row {i} sums to {sum}, not 0")));
            }
        }
        for i in 0..q {
            for j in 0..q {
                if i != j && entries[[i, j]] > LAPLACIAN_TOL {
                    return Err(Error::Parameter(format!(
                        "positive off-diagonal {} at ({i},{j})",
                        entries[[i, j]]
                    )));
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn node_count(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }
}

/// A strictly positive vector on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct Composition {
    shares: Array1<f64>,
}

impl Composition {
    pub fn new(shares: Array1<f64>) -> Result<Self> {
        if shares.is_empty() {
            return Err(Error::Parameter("composition needs at least one share".into()));
        }
        if !shares.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::Parameter(
                "composition shares must be finite and strictly positive".into(),
            ));
        }
        let sum: f64 = shares.sum();
        if (sum - 1.0).abs() > SHARE_SUM_TOL {
            return Err(Error::Parameter(format!(
                "composition shares sum to {sum}, not 1"
            )));
        }
        Ok(Self { shares })
    }

    pub fn dim(&self) -> usize {
        self.shares.len()
    }

    pub fn shares(&self) -> &Array1<f64> {
        &self.shares
    }

    /// Centered log-ratio transform: log shares minus their mean.
    pub fn clr(&self) -> Array1<f64> {
        let logs = self.shares.mapv(f64::ln);
        let mean = logs.sum() / logs.len() as f64;
        logs - mean
    }
}

/// Floors raw shares below [`ZERO_SHARE_FLOOR`] and renormalizes to sum 1.
pub fn zero_replace(raw: &ArrayView1<f64>) -> Result<Composition> {
    if raw.is_empty() {
        return Err(Error::Parameter("empty share vector".into()));
    }
    if !raw.iter().all(|v| v.is_finite() && *v >= 0.0) {
        return Err(Error::Parameter(
            "shares must be finite and nonnegative".into(),
        ));
    }
    if raw.sum() <= 0.0 {
        return Err(Error::Parameter("degenerate composition: all shares zero".into()));
    }
    let floored = raw.mapv(|v| v.max(ZERO_SHARE_FLOOR));
    let sum = floored.sum();
    Composition::new(floored / sum)
}

/// A plain Euclidean vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EuclideanPoint {
    coords: Array1<f64>,
}

impl EuclideanPoint {
    pub fn new(coords: Array1<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Parameter("empty coordinate vector".into()));
        }
        if !coords.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("coordinates must be finite".into()));
        }
        Ok(Self { coords })
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &Array1<f64> {
        &self.coords
    }
}

/// A point of whichever space is active.
#[derive(Debug, Clone, PartialEq)]
pub enum Point {
    Quantile(QuantileFunction),
    Laplacian(GraphLaplacian),
    Composition(Composition),
    Euclidean(EuclideanPoint),
}

impl Point {
    fn kind(&self) -> &'static str {
        match self {
            Point::Quantile(_) => "wasserstein",
            Point::Laplacian(_) => "laplacian",
            Point::Composition(_) => "aitchison",
            Point::Euclidean(_) => "euclidean",
        }
    }
}

/// A response space together with its dimension metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricSpace {
    /// Quantile functions on `grid_size` probabilities, 2-Wasserstein metric.
    Wasserstein { grid_size: usize },
    /// Graph Laplacians on `nodes` nodes, Frobenius metric.
    Laplacian { nodes: usize },
    /// Compositions with `dim` parts, Aitchison metric.
    Aitchison { dim: usize },
    /// `R^dim` with the Euclidean metric.
    Euclidean { dim: usize },
}

impl MetricSpace {
    pub fn kind(&self) -> &'static str {
        match self {
            MetricSpace::Wasserstein { .. } => "wasserstein",
            MetricSpace::Laplacian { .. } => "laplacian",
            MetricSpace::Aitchison { .. } => "aitchison",
            MetricSpace::Euclidean { .. } => "euclidean",
        }
    }

    /// The human-facing dimension: grid size, node count, or part count.
    pub fn header_dim(&self) -> usize {
        match *self {
            MetricSpace::Wasserstein { grid_size } => grid_size,
            MetricSpace::Laplacian { nodes } => nodes,
            MetricSpace::Aitchison { dim } => dim,
            MetricSpace::Euclidean { dim } => dim,
        }
    }

    /// Length of the embedding coordinate vector.
    pub fn embed_dim(&self) -> usize {
        match *self {
            MetricSpace::Wasserstein { grid_size } => grid_size,
            MetricSpace::Laplacian { nodes } => nodes * nodes,
            MetricSpace::Aitchison { dim } => dim,
            MetricSpace::Euclidean { dim } => dim,
        }
    }

    /// `d^2(a, b) = metric_scale * ||embed(a) - embed(b)||^2`.
    pub fn metric_scale(&self) -> f64 {
        match *self {
            MetricSpace::Wasserstein { grid_size } => 1.0 / grid_size as f64,
            _ => 1.0,
        }
    }

    pub fn from_kind_dim(kind: &str, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Parameter("space dimension must be positive".into()));
        }
        match kind {
            "wasserstein" => Ok(MetricSpace::Wasserstein { grid_size: dim }),
            "laplacian" => Ok(MetricSpace::Laplacian { nodes: dim }),
            "aitchison" => Ok(MetricSpace::Aitchison { dim }),
            "euclidean" => Ok(MetricSpace::Euclidean { dim }),
            other => Err(Error::Parameter(format!("unknown space kind: {other}"))),
        }
    }

    /// Checks that `p` belongs to this space (kind and dimensions).
    pub fn check_point(&self, p: &Point) -> Result<()> {
        let ok = match (self, p) {
            (MetricSpace::Wasserstein { grid_size }, Point::Quantile(q)) => {
                q.grid_size() == *grid_size
            }
            (MetricSpace::Laplacian { nodes }, Point::Laplacian(l)) => l.node_count() == *nodes,
            (MetricSpace::Aitchison { dim }, Point::Composition(c)) => c.dim() == *dim,
            (MetricSpace::Euclidean { dim }, Point::Euclidean(e)) => e.dim() == *dim,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "point of kind {} does not belong to {} space of dimension {}",
                p.kind(),
                self.kind(),
                self.header_dim()
            )))
        }
    }

    /// Embedding coordinates of a point.
    pub fn embed(&self, p: &Point) -> Result<Array1<f64>> {
        self.check_point(p)?;
        Ok(match p {
            Point::Quantile(q) => q.values().clone(),
            Point::Laplacian(l) => Array1::from_iter(l.entries().iter().copied()),
            Point::Composition(c) => c.clr(),
            Point::Euclidean(e) => e.coords().clone(),
        })
    }

    /// Squared distance between two embedding vectors.
    pub fn dist2_embedded(&self, a: &ArrayView1<f64>, b: &ArrayView1<f64>) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        let ss = a
            .iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>();
        self.metric_scale() * ss
    }

    /// Metric distance between two points of this space.
    pub fn distance(&self, a: &Point, b: &Point) -> Result<f64> {
        let ea = self.embed(a)?;
        let eb = self.embed(b)?;
        Ok(self.dist2_embedded(&ea.view(), &eb.view()).sqrt())
    }

    /// Projects a raw embedding vector onto the embedded image of the space.
    pub fn project_embedding(&self, raw: &ArrayView1<f64>) -> Result<Array1<f64>> {
        if raw.len() != self.embed_dim() {
            return Err(Error::Dimension(format!(
                "raw vector has length {}, embedding dimension is {}",
                raw.len(),
                self.embed_dim()
            )));
        }
        if !raw.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("raw embedding has non-finite entries".into()));
        }
        match *self {
            MetricSpace::Euclidean { .. } => Ok(raw.to_owned()),
            MetricSpace::Wasserstein { .. } => pava_isotonic(raw),
            MetricSpace::Aitchison { dim } => {
                let mean = raw.sum() / dim as f64;
                Ok(raw.mapv(|v| v - mean))
            }
            MetricSpace::Laplacian { nodes } => {
                let m = raw
                    .to_owned()
                    .into_shape_with_order((nodes, nodes))
                    .expect("length checked");
                let mut out = Array2::<f64>::zeros((nodes, nodes));
                for i in 0..nodes {
                    for j in 0..nodes {
                        if i != j {
                            let sym = 0.5 * (m[[i, j]] + m[[j, i]]);
                            out[[i, j]] = sym.min(0.0);
                        }
                    }
                }
                for i in 0..nodes {
                    let mut degree = 0.0;
                    for j in 0..nodes {
                        if i != j {
                            degree += out[[i, j]];
                        }
                    }
                    out[[i, i]] = -degree;
                }
                Ok(Array1::from_iter(out.iter().copied()))
            }
        }
    }

    /// Wraps an already projected embedding vector into a typed point.
    pub fn point_from_embedding(&self, emb: Array1<f64>) -> Result<Point> {
        match *self {
            MetricSpace::Euclidean { .. } => Ok(Point::Euclidean(EuclideanPoint::new(emb)?)),
            MetricSpace::Wasserstein { .. } => Ok(Point::Quantile(QuantileFunction::new(emb)?)),
            MetricSpace::Laplacian { nodes } => {
                let m = emb
                    .into_shape_with_order((nodes, nodes))
                    .map_err(|e| Error::Dimension(e.to_string()))?;
                Ok(Point::Laplacian(GraphLaplacian::new(m)?))
            }
            MetricSpace::Aitchison { .. } => {
                // Stable softmax; underflow is handled by the share floor.
                let max = emb.fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
                let exp = emb.mapv(|v| (v - max).exp());
                Ok(Point::Composition(zero_replace(&exp.view())?))
            }
        }
    }

    /// Projection onto the space: `project_embedding` then typed wrapping.
    pub fn project(&self, raw: &ArrayView1<f64>) -> Result<Point> {
        self.point_from_embedding(self.project_embedding(raw)?)
    }

    /// Weighted Fréchet mean under signed, mean-one weights: the weighted
    /// average `(1/n) sum_i w_i embed(y_i)` projected back onto the space.
    pub fn weighted_frechet_mean(
        &self,
        points: &[Point],
        weights: &ArrayView1<f64>,
    ) -> Result<Point> {
        let n = points.len();
        if n == 0 || weights.len() != n {
            return Err(Error::Contract(format!(
                "need matching nonempty points and weights, got {} points and {} weights",
                n,
                weights.len()
            )));
        }
        let weight_mean = weights.sum() / n as f64;
        if (weight_mean - 1.0).abs() > WEIGHT_MEAN_TOL {
            return Err(Error::Contract(format!(
                "weights must average to 1, got {weight_mean}"
            )));
        }
        let mut raw = Array1::<f64>::zeros(self.embed_dim());
        for (point, &w) in points.iter().zip(weights.iter()) {
            let e = self.embed(point)?;
            raw.scaled_add(w / n as f64, &e);
        }
        self.project(&raw.view())
    }

    /// Natural on-disk coordinates of a point (quantile values, Laplacian
    /// entries, shares, coordinates).
    pub fn to_natural(&self, p: &Point) -> Result<Array1<f64>> {
        self.check_point(p)?;
        Ok(match p {
            Point::Quantile(q) => q.values().clone(),
            Point::Laplacian(l) => Array1::from_iter(l.entries().iter().copied()),
            Point::Composition(c) => c.shares().clone(),
            Point::Euclidean(e) => e.coords().clone(),
        })
    }

    /// Rebuilds a typed point from natural coordinates, validating the space
    /// invariants.
    pub fn from_natural(&self, values: Array1<f64>) -> Result<Point> {
        if values.len() != self.embed_dim() {
            return Err(Error::Dimension(format!(
                "natural coordinates have length {}, expected {}",
                values.len(),
                self.embed_dim()
            )));
        }
        match *self {
            MetricSpace::Wasserstein { .. } => Ok(Point::Quantile(QuantileFunction::new(values)?)),
            MetricSpace::Euclidean { .. } => Ok(Point::Euclidean(EuclideanPoint::new(values)?)),
            MetricSpace::Laplacian { nodes } => {
                let m = values
                    .into_shape_with_order((nodes, nodes))
                    .map_err(|e| Error::Dimension(e.to_string()))?;
                Ok(Point::Laplacian(GraphLaplacian::new(m)?))
            }
            MetricSpace::Aitchison { .. } => Ok(Point::Composition(Composition::new(values)?)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn quantile(values: Vec<f64>) -> Point {
        Point::Quantile(QuantileFunction::new(Array1::from_vec(values)).unwrap())
    }

    #[test]
    fn wasserstein_distance_constant_shift() {
        let space = MetricSpace::Wasserstein { grid_size: 4 };
        let a = quantile(vec![0.0; 4]);
        let b = quantile(vec![1.0; 4]);
        assert!((space.distance(&a, &b).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn laplacian_distance_two_node_graphs() {
        let space = MetricSpace::Laplacian { nodes: 2 };
        let with_edge =
            Point::Laplacian(GraphLaplacian::new(array![[1.0, -1.0], [-1.0, 1.0]]).unwrap());
        let empty = Point::Laplacian(GraphLaplacian::new(array![[0.0, 0.0], [0.0, 0.0]]).unwrap());
        assert!((space.distance(&with_edge, &empty).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn aitchison_distance_hand_value() {
        let space = MetricSpace::Aitchison { dim: 2 };
        let e = std::f64::consts::E;
        let a = Point::Composition(
            Composition::new(array![e / (1.0 + e), 1.0 / (1.0 + e)]).unwrap(),
        );
        let b = Point::Composition(Composition::new(array![0.5, 0.5]).unwrap());
        assert!((space.distance(&a, &b).unwrap() - 0.5_f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn embeddings_match_hand_values() {
        let aitchison = MetricSpace::Aitchison { dim: 3 };
        let uniform = Point::Composition(
            Composition::new(array![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]).unwrap(),
        );
        assert!(aitchison
            .embed(&uniform)
            .unwrap()
            .iter()
            .all(|v| v.abs() < 1e-14));

        let euclid = MetricSpace::Euclidean { dim: 2 };
        let p = Point::Euclidean(EuclideanPoint::new(array![3.0, -1.0]).unwrap());
        assert_eq!(euclid.embed(&p).unwrap(), array![3.0, -1.0]);

        let wasserstein = MetricSpace::Wasserstein { grid_size: 3 };
        let q = quantile(vec![0.0, 1.0, 2.0]);
        assert_eq!(wasserstein.embed(&q).unwrap(), array![0.0, 1.0, 2.0]);
    }

    #[test]
    fn wasserstein_projection_pools() {
        let space = MetricSpace::Wasserstein { grid_size: 2 };
        let p = space.project(&array![2.0, 1.0].view()).unwrap();
        match p {
            Point::Quantile(q) => assert_eq!(q.values(), &array![1.5, 1.5]),
            other => panic!("unexpected point {other:?}"),
        }
    }

    #[test]
    fn laplacian_projection_fixes_valid_input() {
        let space = MetricSpace::Laplacian { nodes: 3 };
        let valid = array![
            [1.5, -0.5, -1.0],
            [-0.5, 0.5, 0.0],
            [-1.0, 0.0, 1.0]
        ];
        let raw = Array1::from_iter(valid.iter().copied());
        let projected = space.project_embedding(&raw.view()).unwrap();
        for (a, b) in projected.iter().zip(raw.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn aitchison_projection_inverse_clr() {
        let space = MetricSpace::Aitchison { dim: 2 };
        let p = space.project(&array![0.5, -0.5].view()).unwrap();
        let e = std::f64::consts::E;
        match p {
            Point::Composition(c) => {
                assert!((c.shares()[0] - e / (1.0 + e)).abs() < 1e-12);
                assert!((c.shares()[1] - 1.0 / (1.0 + e)).abs() < 1e-12);
            }
            other => panic!("unexpected point {other:?}"),
        }
    }

    #[test]
    fn weighted_mean_singleton_and_constant() {
        let space = MetricSpace::Wasserstein { grid_size: 3 };
        let y = quantile(vec![0.0, 0.5, 2.0]);
        let got = space
            .weighted_frechet_mean(std::slice::from_ref(&y), &array![1.0].view())
            .unwrap();
        assert_eq!(got, y);

        let ys = vec![y.clone(), y.clone(), y.clone()];
        let got = space
            .weighted_frechet_mean(&ys, &array![1.0, 1.0, 1.0].view())
            .unwrap();
        assert_eq!(got, y);
    }

    #[test]
    fn weighted_mean_signed_weights_hand_example() {
        let space = MetricSpace::Wasserstein { grid_size: 2 };
        let ys = vec![quantile(vec![0.0, 3.0]), quantile(vec![1.0, 2.0])];
        let got = space
            .weighted_frechet_mean(&ys, &array![-1.0, 3.0].view())
            .unwrap();
        match got {
            Point::Quantile(q) => assert_eq!(q.values(), &array![1.5, 1.5]),
            other => panic!("unexpected point {other:?}"),
        }
    }

    #[test]
    fn weighted_mean_rejects_bad_weight_mean() {
        let space = MetricSpace::Euclidean { dim: 1 };
        let ys = vec![Point::Euclidean(EuclideanPoint::new(array![1.0]).unwrap())];
        let err = space.weighted_frechet_mean(&ys, &array![0.5].view());
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn zero_replace_examples() {
        let c = zero_replace(&array![0.0, 1.0].view()).unwrap();
        let denom = 1.0 + 1e-8;
        assert!((c.shares()[0] - 1e-8 / denom).abs() < 1e-20);
        assert!((c.shares()[1] - 1.0 / denom).abs() < 1e-16);

        let unchanged = zero_replace(&array![0.3, 0.7].view()).unwrap();
        assert_eq!(unchanged.shares(), &array![0.3, 0.7]);

        assert!(zero_replace(&array![0.0, 0.0].view()).is_err());
    }

    #[test]
    fn round_trip_embed_project() {
        let space = MetricSpace::Laplacian { nodes: 2 };
        let y = Point::Laplacian(GraphLaplacian::new(array![[2.0, -2.0], [-2.0, 2.0]]).unwrap());
        let emb = space.embed(&y).unwrap();
        let back = space.project(&emb.view()).unwrap();
        assert_eq!(back, y);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let space = MetricSpace::Wasserstein { grid_size: 3 };
        let wrong = quantile(vec![0.0, 1.0]);
        assert!(matches!(
            space.embed(&wrong),
            Err(Error::Dimension(_))
        ));
    }
}
