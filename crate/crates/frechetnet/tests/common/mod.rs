#![allow(dead_code)]

//! Shared independent oracles and random-instance helpers for the
//! integration and acceptance suites. Everything here recomputes results
//! from first principles (exhaustive enumeration, elimination on normal
//! equations) without touching the library's solver or projection paths.

use frechetnet::numerics::RngState;
use frechetnet::spaces::{MetricSpace, Point};
use ndarray::{Array1, Array2};

/// Minimizer of `sum_i w_i ||e_i - v||^2` over nondecreasing `v`, by
/// exhaustive enumeration of consecutive-block partitions. Requires
/// `sum_i w_i > 0` (the objective is then strictly convex) and grid length
/// at most 16. The unconstrained minimizer is the weighted average
/// `v_bar = sum_i w_i e_i / sum_i w_i`; for a fixed partition the optimal
/// blockwise-constant vector takes each block's mean of `v_bar`, so the best
/// feasible candidate over all partitions is the exact projection.
pub fn brute_force_monotone_mean(embeddings: &Array2<f64>, weights: &[f64]) -> Vec<f64> {
    let n = embeddings.nrows();
    let m = embeddings.ncols();
    assert!(m >= 1 && m <= 16);
    assert_eq!(weights.len(), n);
    let total: f64 = weights.iter().sum();
    assert!(total > 0.0, "objective must be bounded below");
    let mut v_bar = vec![0.0_f64; m];
    for i in 0..n {
        for j in 0..m {
            v_bar[j] += weights[i] * embeddings[[i, j]];
        }
    }
    for value in v_bar.iter_mut() {
        *value /= total;
    }

    let objective = |candidate: &[f64]| -> f64 {
        let mut obj = 0.0;
        for i in 0..n {
            let mut ss = 0.0;
            for j in 0..m {
                let d = embeddings[[i, j]] - candidate[j];
                ss += d * d;
            }
            obj += weights[i] * ss;
        }
        obj
    };

    let mut best: Option<(f64, Vec<f64>)> = None;
    for cuts in 0..(1_u32 << (m - 1)) {
        let mut candidate = Vec::with_capacity(m);
        let mut start = 0;
        let mut feasible = true;
        let mut prev = f64::NEG_INFINITY;
        for end in 0..m {
            let boundary = end == m - 1 || (cuts >> end) & 1 == 1;
            if boundary {
                let block = &v_bar[start..=end];
                let mean = block.iter().sum::<f64>() / block.len() as f64;
                if mean < prev {
                    feasible = false;
                    break;
                }
                prev = mean;
                candidate.extend(std::iter::repeat(mean).take(block.len()));
                start = end + 1;
            }
        }
        if !feasible {
            continue;
        }
        let obj = objective(&candidate);
        if best.as_ref().map_or(true, |(b, _)| obj < *b) {
            best = Some((obj, candidate));
        }
    }
    best.expect("the all-singleton partition is always generated").1
}

/// Solves a dense linear system by Gaussian elimination with partial
/// pivoting (test-only oracle path).
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        assert!(a[col][col].abs() > 1e-12, "singular oracle system");
        for row in (col + 1)..n {
            let factor = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for k in (row + 1)..n {
            s -= a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    x
}

/// Least-squares fitted value at `f_x` of regressing `y` on `(1, features)`,
/// via the normal equations and [`solve_dense`].
pub fn ols_fitted_value(features: &Array2<f64>, y: &[f64], f_x: &[f64]) -> f64 {
    let n = features.nrows();
    let p = features.ncols();
    assert_eq!(y.len(), n);
    assert_eq!(f_x.len(), p);
    let d = p + 1;
    let mut ztz = vec![vec![0.0; d]; d];
    let mut zty = vec![0.0; d];
    for i in 0..n {
        let mut z = Vec::with_capacity(d);
        z.push(1.0);
        z.extend(features.row(i).iter().copied());
        for a in 0..d {
            for b in 0..d {
                ztz[a][b] += z[a] * z[b];
            }
            zty[a] += z[a] * y[i];
        }
    }
    let beta = solve_dense(ztz, zty);
    beta[0]
        + beta[1..]
            .iter()
            .zip(f_x.iter())
            .map(|(c, v)| c * v)
            .sum::<f64>()
}

/// A random valid point of any space, for invariant sweeps.
pub fn random_point(space: MetricSpace, rng: &mut RngState) -> Point {
    match space {
        MetricSpace::Euclidean { dim } => space
            .from_natural(Array1::from_shape_fn(dim, |_| 2.0 * rng.standard_normal()))
            .unwrap(),
        MetricSpace::Wasserstein { grid_size } => {
            let mut draws: Vec<f64> = (0..grid_size)
                .map(|_| 3.0 * rng.standard_normal())
                .collect();
            draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
            space.from_natural(Array1::from_vec(draws)).unwrap()
        }
        MetricSpace::Laplacian { nodes } => {
            let mut weights = Array2::<f64>::zeros((nodes, nodes));
            for i in 0..nodes {
                for j in (i + 1)..nodes {
                    // Random graph with some absent edges.
                    let w = if rng.standard_uniform() < 0.4 {
                        0.0
                    } else {
                        rng.uniform(0.1, 2.0).unwrap()
                    };
                    weights[[i, j]] = w;
                    weights[[j, i]] = w;
                }
            }
            let mut lap = -weights.clone();
            for i in 0..nodes {
                lap[[i, i]] = weights.row(i).sum();
            }
            space
                .from_natural(Array1::from_iter(lap.iter().copied()))
                .unwrap()
        }
        MetricSpace::Aitchison { dim } => {
            let raw = Array1::from_shape_fn(dim, |_| rng.gamma(1.5, 1.0).unwrap().max(1e-6));
            let sum = raw.sum();
            space.from_natural(raw / sum).unwrap()
        }
    }
}

/// Signed weights with mean exactly shifted to 1.
pub fn signed_mean_one_weights(n: usize, spread: f64, rng: &mut RngState) -> Array1<f64> {
    let raw = Array1::from_shape_fn(n, |_| spread * rng.standard_normal());
    let mean = raw.sum() / n as f64;
    raw.mapv(|v| v - mean + 1.0)
}
