//! The Fréchet output layer.
//!
//! Given reference representations `F` (one row per training example) with
//! empirical mean `m` and covariance `C` (both `1/n`-normalized), the weight
//! of training example `i` at a query representation `f` is
//!
//! ```text
//! s_i(f) = 1 + (f - m)^T (C + ridge I)^{-1} (F_i - m)
//! ```
//!
//! The prediction is the weighted Fréchet mean of the training responses
//! under these signed weights, which average to exactly 1 because the
//! centered representations sum to zero. The same construction applied to
//! raw predictors (identity representation) is the global Fréchet
//! regression baseline.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::network::{forward_eval, Architecture, NetworkParams};
use crate::numerics::{auto_ridge, mean_and_cov, Cholesky};
use crate::spaces::{MetricSpace, Point};
use crate::{Error, Result};

/// How the covariance ridge is chosen when fitting representation stats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RidgePolicy {
    /// Ridge 0 when the covariance factorizes; otherwise a scale-aware
    /// default, escalated until the factorization succeeds.
    Auto,
    /// Always exactly this ridge.
    Fixed(f64),
}

/// Empirical mean and covariance of representations, with the ridge that was
/// actually applied and the resulting factorization.
#[derive(Debug, Clone)]
pub struct RepresentationStats {
    pub mean: Array1<f64>,
    pub cov: Array2<f64>,
    /// Ridge actually added to the covariance diagonal (0 on well-conditioned
    /// problems under [`RidgePolicy::Auto`]).
    pub ridge: f64,
    chol: Cholesky,
}

impl RepresentationStats {
    /// Solves `(cov + ridge I) x = rhs`.
    pub fn solve(&self, rhs: &ArrayView1<f64>) -> Array1<f64> {
        self.chol.solve_vec(rhs)
    }

    /// Matrix right-hand-side variant of [`RepresentationStats::solve`].
    pub fn solve_mat(&self, rhs: &ArrayView2<f64>) -> Array2<f64> {
        self.chol.solve_mat(rhs)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn factor_with(cov: &Array2<f64>, ridge: f64) -> Option<Cholesky> {
    if ridge == 0.0 {
        return Cholesky::factor(&cov.view());
    }
    let mut m = cov.clone();
    for i in 0..m.nrows() {
        m[[i, i]] += ridge;
    }
    Cholesky::factor(&m.view())
}

/// Fits mean, covariance, and ridge for a representation matrix (rows are
/// examples).
pub fn fit_stats(reps: &ArrayView2<f64>, policy: RidgePolicy) -> Result<RepresentationStats> {
    let (mean, cov) = mean_and_cov(reps)?;
    let (ridge, chol) = match policy {
        RidgePolicy::Fixed(r) => {
            if !(r >= 0.0) || !r.is_finite() {
                return Err(Error::Parameter(format!("ridge must be nonnegative: {r}")));
            }
            let chol = factor_with(&cov, r).ok_or(Error::Singular { ridge: r })?;
            (r, chol)
        }
        RidgePolicy::Auto => {
            if let Some(chol) = factor_with(&cov, 0.0) {
                (0.0, chol)
            } else {
                let mut r = auto_ridge(&cov.view());
                let mut found = None;
                for _ in 0..5 {
                    if let Some(chol) = factor_with(&cov, r) {
                        found = Some((r, chol));
                        break;
                    }
                    r *= 100.0;
                }
                found.ok_or(Error::Singular { ridge: r })?
            }
        }
    };
    Ok(RepresentationStats {
        mean,
        cov,
        ridge,
        chol,
    })
}

/// Signed weights over a reference sample; they average to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightProfile {
    pub weights: Array1<f64>,
}

impl WeightProfile {
    pub fn sample_size(&self) -> usize {
        self.weights.len()
    }

    pub fn mean(&self) -> f64 {
        self.weights.sum() / self.weights.len() as f64
    }
}

/// Weights of every reference representation (rows of `reps`) at the query
/// representation `f_x`.
pub fn weights(
    f_x: &ArrayView1<f64>,
    reps: &ArrayView2<f64>,
    stats: &RepresentationStats,
) -> Result<WeightProfile> {
    let p = stats.dim();
    if f_x.len() != p || reps.ncols() != p {
        return Err(Error::Dimension(format!(
            "representations of width {} / {} against stats of width {p}",
            f_x.len(),
            reps.ncols()
        )));
    }
    let deviation = f_x - &stats.mean;
    let direction = stats.solve(&deviation.view());
    let centered = reps - &stats.mean;
    let weights = centered.dot(&direction) + 1.0;
    Ok(WeightProfile { weights })
}

/// A trained output layer: reference representations, their responses, and
/// the fitted statistics.
#[derive(Debug, Clone)]
pub struct FittedHead {
    space: MetricSpace,
    reps: Array2<f64>,
    responses: Vec<Point>,
    stats: RepresentationStats,
}

impl FittedHead {
    pub fn fit(
        space: MetricSpace,
        reps: Array2<f64>,
        responses: Vec<Point>,
        policy: RidgePolicy,
    ) -> Result<Self> {
        if reps.nrows() != responses.len() {
            return Err(Error::Contract(format!(
                "{} representation rows against {} responses",
                reps.nrows(),
                responses.len()
            )));
        }
        for point in &responses {
            space.check_point(point)?;
        }
        let stats = fit_stats(&reps.view(), policy)?;
        Ok(Self {
            space,
            reps,
            responses,
            stats,
        })
    }

    pub fn space(&self) -> MetricSpace {
        self.space
    }

    pub fn sample_size(&self) -> usize {
        self.responses.len()
    }

    pub fn representations(&self) -> &Array2<f64> {
        &self.reps
    }

    pub fn responses(&self) -> &[Point] {
        &self.responses
    }

    pub fn stats(&self) -> &RepresentationStats {
        &self.stats
    }

    /// Weight profile at a query representation.
    pub fn weights_at(&self, f_x: &ArrayView1<f64>) -> Result<WeightProfile> {
        weights(f_x, &self.reps.view(), &self.stats)
    }

    /// Prediction at a query representation: the weighted Fréchet mean of the
    /// reference responses.
    pub fn predict_from_rep(&self, f_x: &ArrayView1<f64>) -> Result<Point> {
        let profile = self.weights_at(f_x)?;
        self.space
            .weighted_frechet_mean(&self.responses, &profile.weights.view())
    }
}

/// DFNN prediction: run the network in eval mode, then apply the head.
pub fn predict(
    x: &ArrayView1<f64>,
    params: &NetworkParams,
    arch: &Architecture,
    head: &FittedHead,
) -> Result<Point> {
    let row = x.insert_axis(Axis(0));
    let rep = forward_eval(params, arch, &row)?;
    head.predict_from_rep(&rep.row(0))
}

/// Global Fréchet regression: the same head fitted on raw predictors.
#[derive(Debug, Clone)]
pub struct GfrModel {
    head: FittedHead,
}

impl GfrModel {
    pub fn fit(
        x_train: &ArrayView2<f64>,
        responses: &[Point],
        space: MetricSpace,
        policy: RidgePolicy,
    ) -> Result<Self> {
        let head = FittedHead::fit(space, x_train.to_owned(), responses.to_vec(), policy)?;
        Ok(Self { head })
    }

    pub fn predict(&self, x: &ArrayView1<f64>) -> Result<Point> {
        self.head.predict_from_rep(x)
    }

    pub fn head(&self) -> &FittedHead {
        &self.head
    }
}

/// One-shot global Fréchet regression prediction with the default ridge
/// policy.
pub fn gfr_predict(
    x: &ArrayView1<f64>,
    x_train: &ArrayView2<f64>,
    responses: &[Point],
    space: MetricSpace,
) -> Result<Point> {
    GfrModel::fit(x_train, responses, space, RidgePolicy::Auto)?.predict(x)
}

/// The weighted objective `(1/n) sum_i s_i d^2(y_i, omega)`, for diagnostics
/// and brute-force oracle tests.
pub fn frechet_objective(
    omega: &Point,
    profile: &WeightProfile,
    responses: &[Point],
    space: MetricSpace,
) -> Result<f64> {
    let n = responses.len();
    if n == 0 || profile.sample_size() != n {
        return Err(Error::Contract(format!(
            "{} weights against {n} responses",
            profile.sample_size()
        )));
    }
    let e_omega = space.embed(omega)?;
    let mut total = 0.0;
    for (point, &w) in responses.iter().zip(profile.weights.iter()) {
        let e = space.embed(point)?;
        total += w * space.dist2_embedded(&e.view(), &e_omega.view());
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngState;
    use crate::spaces::EuclideanPoint;
    use ndarray::array;

    fn euclidean_points(values: &[f64]) -> Vec<Point> {
        values
            .iter()
            .map(|&v| Point::Euclidean(EuclideanPoint::new(array![v]).unwrap()))
            .collect()
    }

    #[test]
    fn rank_deficient_covariance_forces_ridge() {
        let reps = array![[1.0, 0.0], [-1.0, 0.0]];
        let stats = fit_stats(&reps.view(), RidgePolicy::Auto).unwrap();
        assert_eq!(stats.mean, array![0.0, 0.0]);
        assert_eq!(stats.cov, array![[1.0, 0.0], [0.0, 0.0]]);
        assert!(stats.ridge > 0.0);
    }

    #[test]
    fn iid_normal_covariance_is_near_identity() {
        let mut rng = RngState::from_seed(2);
        let reps = Array2::from_shape_fn((10_000, 3), |_| rng.standard_normal());
        let stats = fit_stats(&reps.view(), RidgePolicy::Auto).unwrap();
        assert_eq!(stats.ridge, 0.0);
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((stats.cov[[i, j]] - expected).abs() < 0.1);
            }
        }
    }

    #[test]
    fn repeated_row_gives_zero_covariance_with_ridge() {
        let reps = Array2::from_shape_fn((5, 2), |(_, j)| if j == 0 { 1.5 } else { -0.5 });
        let stats = fit_stats(&reps.view(), RidgePolicy::Auto).unwrap();
        assert!(stats.cov.iter().all(|&v| v == 0.0));
        assert!(stats.ridge > 0.0);
    }

    #[test]
    fn weights_at_the_mean_are_all_one() {
        let mut rng = RngState::from_seed(5);
        let reps = Array2::from_shape_fn((20, 3), |_| rng.standard_normal());
        let stats = fit_stats(&reps.view(), RidgePolicy::Auto).unwrap();
        let profile = weights(&stats.mean.clone().view(), &reps.view(), &stats).unwrap();
        for &w in profile.weights.iter() {
            assert!((w - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_hand_computed_one_dimensional_case() {
        let reps = array![[0.0], [2.0]];
        let stats = fit_stats(&reps.view(), RidgePolicy::Auto).unwrap();
        assert_eq!(stats.ridge, 0.0);
        let profile = weights(&array![2.0].view(), &reps.view(), &stats).unwrap();
        assert!((profile.weights[0] - 0.0).abs() < 1e-12);
        assert!((profile.weights[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn weight_mean_is_one_for_random_queries() {
        let mut rng = RngState::from_seed(8);
        let reps = Array2::from_shape_fn((17, 4), |_| rng.standard_normal());
        let stats = fit_stats(&reps.view(), RidgePolicy::Auto).unwrap();
        for _ in 0..100 {
            let f_x = Array1::from_shape_fn(4, |_| 3.0 * rng.standard_normal());
            let profile = weights(&f_x.view(), &reps.view(), &stats).unwrap();
            assert!((profile.mean() - 1.0).abs() < 1e-10);
        }
    }

    use ndarray::Array1;

    #[test]
    fn constant_responses_predict_themselves() {
        let mut rng = RngState::from_seed(3);
        let reps = Array2::from_shape_fn((12, 3), |_| rng.standard_normal());
        let responses = euclidean_points(&[7.5; 12]);
        let head = FittedHead::fit(
            MetricSpace::Euclidean { dim: 1 },
            reps,
            responses,
            RidgePolicy::Auto,
        )
        .unwrap();
        for _ in 0..5 {
            let f_x = Array1::from_shape_fn(3, |_| rng.standard_normal());
            match head.predict_from_rep(&f_x.view()).unwrap() {
                Point::Euclidean(e) => assert!((e.coords()[0] - 7.5).abs() < 1e-9),
                other => panic!("unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn single_observation_is_rejected() {
        let reps = array![[1.0, 2.0]];
        let responses = euclidean_points(&[1.0]);
        assert!(FittedHead::fit(
            MetricSpace::Euclidean { dim: 1 },
            reps,
            responses,
            RidgePolicy::Auto
        )
        .is_err());
    }

    #[test]
    fn euclidean_prediction_matches_least_squares() {
        // With Euclidean responses and ridge 0, the head reproduces the
        // fitted value of regressing y on (1, f) by least squares.
        let mut rng = RngState::from_seed(21);
        let n = 30;
        let reps = Array2::from_shape_fn((n, 2), |_| rng.standard_normal());
        let y: Vec<f64> = (0..n)
            .map(|i| 1.0 + 2.0 * reps[[i, 0]] - 0.5 * reps[[i, 1]] + 0.1 * rng.standard_normal())
            .collect();
        let head = FittedHead::fit(
            MetricSpace::Euclidean { dim: 1 },
            reps.clone(),
            euclidean_points(&y),
            RidgePolicy::Auto,
        )
        .unwrap();
        assert_eq!(head.stats().ridge, 0.0);

        // Normal equations on the augmented design, solved by elimination.
        let mut ztz = [[0.0_f64; 3]; 3];
        let mut zty = [0.0_f64; 3];
        for i in 0..n {
            let z = [1.0, reps[[i, 0]], reps[[i, 1]]];
            for a in 0..3 {
                for b in 0..3 {
                    ztz[a][b] += z[a] * z[b];
                }
                zty[a] += z[a] * y[i];
            }
        }
        let beta = solve3(ztz, zty);

        let mut r = RngState::from_seed(22);
        for _ in 0..20 {
            let f_x = Array1::from_shape_fn(2, |_| r.standard_normal());
            let expected = beta[0] + beta[1] * f_x[0] + beta[2] * f_x[1];
            match head.predict_from_rep(&f_x.view()).unwrap() {
                Point::Euclidean(e) => {
                    assert!((e.coords()[0] - expected).abs() < 1e-8);
                }
                other => panic!("unexpected {other:?}"),
            }
        }
    }

    fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> [f64; 3] {
        for col in 0..3 {
            let pivot = (col..3)
                .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
                .unwrap();
            a.swap(col, pivot);
            b.swap(col, pivot);
            for row in (col + 1)..3 {
                let factor = a[row][col] / a[col][col];
                for k in col..3 {
                    a[row][k] -= factor * a[col][k];
                }
                b[row] -= factor * b[col];
            }
        }
        let mut x = [0.0; 3];
        for row in (0..3).rev() {
            let mut s = b[row];
            for k in (row + 1)..3 {
                s -= a[row][k] * x[k];
            }
            x[row] = s / a[row][row];
        }
        x
    }

    #[test]
    fn weight_profile_is_affine_invariant() {
        let mut rng = RngState::from_seed(31);
        let reps = Array2::from_shape_fn((25, 3), |_| rng.standard_normal());
        let f_x = Array1::from_shape_fn(3, |_| rng.standard_normal());
        let stats = fit_stats(&reps.view(), RidgePolicy::Fixed(0.0)).unwrap();
        let base = weights(&f_x.view(), &reps.view(), &stats).unwrap();

        // Invertible affine map A v + b applied to every representation.
        let a = array![[2.0, 0.3, -0.1], [0.0, 1.5, 0.4], [0.2, -0.2, 0.9]];
        let b = array![1.0, -2.0, 0.5];
        let mapped = reps.dot(&a.t()) + &b;
        let f_mapped = f_x.dot(&a.t()) + &b;
        let mapped_stats = fit_stats(&mapped.view(), RidgePolicy::Fixed(0.0)).unwrap();
        let mapped_profile = weights(&f_mapped.view(), &mapped.view(), &mapped_stats).unwrap();
        for (u, v) in base.weights.iter().zip(mapped_profile.weights.iter()) {
            assert!((u - v).abs() < 1e-8);
        }
    }

    #[test]
    fn gfr_at_column_mean_is_unweighted_mean() {
        let mut rng = RngState::from_seed(41);
        let x = Array2::from_shape_fn((15, 3), |_| rng.standard_normal());
        let y: Vec<f64> = (0..15).map(|_| rng.standard_normal()).collect();
        let responses = euclidean_points(&y);
        let space = MetricSpace::Euclidean { dim: 1 };
        let center = x.mean_axis(ndarray::Axis(0)).unwrap();
        let pred = gfr_predict(&center.view(), &x.view(), &responses, space).unwrap();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        match pred {
            Point::Euclidean(e) => assert!((e.coords()[0] - mean).abs() < 1e-10),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gfr_with_constant_column_engages_ridge_and_stays_finite() {
        let mut rng = RngState::from_seed(43);
        let mut x = Array2::from_shape_fn((12, 3), |_| rng.standard_normal());
        x.column_mut(1).fill(4.0);
        let y: Vec<f64> = (0..12).map(|_| rng.standard_normal()).collect();
        let responses = euclidean_points(&y);
        let space = MetricSpace::Euclidean { dim: 1 };
        let model = GfrModel::fit(&x.view(), &responses, space, RidgePolicy::Auto).unwrap();
        assert!(model.head().stats().ridge > 0.0);
        let query = Array1::from_shape_fn(3, |_| rng.standard_normal());
        match model.predict(&query.view()).unwrap() {
            Point::Euclidean(e) => assert!(e.coords()[0].is_finite()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn objective_evaluates_weighted_average_of_squared_distances() {
        let responses = euclidean_points(&[1.0, 3.0, 5.0]);
        let space = MetricSpace::Euclidean { dim: 1 };
        let profile = WeightProfile {
            weights: array![1.0, 1.0, 1.0],
        };
        let omega = Point::Euclidean(EuclideanPoint::new(array![3.0]).unwrap());
        let value = frechet_objective(&omega, &profile, &responses, space).unwrap();
        // Direct summation oracle: (4 + 0 + 4) / 3.
        assert!((value - 8.0 / 3.0).abs() < 1e-14);

        let single = frechet_objective(
            &omega,
            &WeightProfile {
                weights: array![1.0],
            },
            &euclidean_points(&[1.0]),
            space,
        )
        .unwrap();
        assert!((single - 4.0).abs() < 1e-14);
    }

    #[test]
    fn prediction_minimizes_the_objective_among_responses() {
        let mut rng = RngState::from_seed(51);
        let reps = Array2::from_shape_fn((10, 2), |_| rng.standard_normal());
        let y: Vec<f64> = (0..10).map(|_| rng.standard_normal()).collect();
        let responses = euclidean_points(&y);
        let space = MetricSpace::Euclidean { dim: 1 };
        let head =
            FittedHead::fit(space, reps, responses.clone(), RidgePolicy::Auto).unwrap();
        let f_x = Array1::from_shape_fn(2, |_| rng.standard_normal());
        let profile = head.weights_at(&f_x.view()).unwrap();
        let prediction = head.predict_from_rep(&f_x.view()).unwrap();
        let at_prediction =
            frechet_objective(&prediction, &profile, &responses, space).unwrap();
        for candidate in &responses {
            let value = frechet_objective(candidate, &profile, &responses, space).unwrap();
            assert!(at_prediction <= value + 1e-12);
        }
    }
}
