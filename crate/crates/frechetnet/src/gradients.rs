//! Reverse-mode differentiation of the batch empirical Fréchet risk.
//!
//! For a batch `(X_i, Y_i)` the risk is the mean squared metric distance
//! between responses and the head's predictions, where the representation
//! mean, covariance, weights, and weighted means are all computed from the
//! batch itself. The gradient with respect to every layer's weights and
//! shifts is assembled from hand-derived adjoints:
//!
//! * affine layers, ReLU (subgradient 0 at 0), and dropout masks replayed
//!   from the forward pass;
//! * batch mean/covariance adjoints from their closed forms;
//! * the ridge-stabilized solve, differentiated via a second solve against
//!   the same (symmetric) factorization;
//! * the projection onto the space, treated as identity (straight-through)
//!   by default, which is exact whenever no constraint is active; an exact
//!   pool-averaging adjoint for the isotonic projection is available as an
//!   opt-in.
//!
//! The ridge value chosen for a batch is treated as a constant of the step.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::head::{fit_stats, RepresentationStats, RidgePolicy};
use crate::network::{
    forward, Architecture, ForwardCache, ForwardMode, LayerParams, NetworkParams,
};
use crate::numerics::{finite_diff_gradient, RngState};
use crate::spaces::{MetricSpace, Point};
use crate::{Error, Result};

/// Per-layer risk gradients, shaped exactly like [`NetworkParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub layers: Vec<LayerParams>,
}

impl GradientBundle {
    pub fn flatten(&self) -> Array1<f64> {
        let mut flat = Vec::new();
        for layer in &self.layers {
            flat.extend(layer.weight.iter().copied());
            flat.extend(layer.bias.iter().copied());
        }
        Array1::from_vec(flat)
    }
}

/// Batch risk value with its per-example squared distances.
#[derive(Debug, Clone)]
pub struct LossReport {
    /// Mean of `per_example`.
    pub risk: f64,
    /// Squared metric distance of each example's response to its prediction.
    pub per_example: Vec<f64>,
}

/// Adjoint used for the projection step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionAdjoint {
    /// Identity adjoint; exact when no projection constraint is active.
    StraightThrough,
    /// Exact pool-averaging Jacobian of the isotonic projection (quantile
    /// responses only; other spaces fall back to straight-through).
    ExactIsotonic,
}

/// Switches for a gradient evaluation.
#[derive(Debug, Clone, Copy)]
pub struct GradOptions {
    /// Sample dropout masks (train mode) when the architecture has a
    /// positive dropout rate.
    pub dropout: bool,
    /// Treat the batch mean and covariance as constants instead of
    /// differentiating through them.
    pub detached_stats: bool,
    pub projection_adjoint: ProjectionAdjoint,
    pub ridge_policy: RidgePolicy,
}

impl Default for GradOptions {
    fn default() -> Self {
        Self {
            dropout: true,
            detached_stats: false,
            projection_adjoint: ProjectionAdjoint::StraightThrough,
            ridge_policy: RidgePolicy::Auto,
        }
    }
}

/// Head intermediates shared by the loss, the gradient, and the gradient
/// checker.
struct HeadForward {
    stats: RepresentationStats,
    /// Centered representations, `n x p_L`.
    centered: Array2<f64>,
    /// `(cov + ridge I)^{-1} centered^T`, `p_L x n`.
    solved: Array2<f64>,
    /// Centered response embeddings, `n x m_e`.
    emb_centered: Array2<f64>,
    /// Raw (unprojected) embedded means, one row per example.
    raw_means: Array2<f64>,
    /// Projected embedded predictions.
    projected: Array2<f64>,
}

/// Embeds all responses into an `n x m_e` matrix.
fn embed_responses(space: MetricSpace, responses: &[Point]) -> Result<Array2<f64>> {
    let n = responses.len();
    let mut emb = Array2::<f64>::zeros((n, space.embed_dim()));
    for (i, point) in responses.iter().enumerate() {
        let e = space.embed(point)?;
        emb.row_mut(i).assign(&e);
    }
    Ok(emb)
}

fn head_forward(
    reps: &Array2<f64>,
    embeddings: &Array2<f64>,
    space: MetricSpace,
    policy: RidgePolicy,
) -> Result<HeadForward> {
    for (i, row) in reps.axis_iter(Axis(0)).enumerate() {
        if !row.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite representation at batch index {i}"
            )));
        }
    }
    let n = reps.nrows();
    let stats = fit_stats(&reps.view(), policy)?;
    let centered = reps - &stats.mean;
    let solved = stats.solve_mat(&centered.t());
    let kernel = centered.dot(&solved);
    let emb_mean = embeddings.mean_axis(Axis(0)).expect("nonempty batch");
    let emb_centered = embeddings - &emb_mean;
    // Weighted means in centered form: the constant weight component
    // contributes the embedding mean exactly, so a constant-response batch
    // reproduces its response bit for bit.
    let raw_means = kernel.dot(&emb_centered) / n as f64 + &emb_mean;
    let mut projected = Array2::<f64>::zeros(raw_means.raw_dim());
    for (i, row) in raw_means.axis_iter(Axis(0)).enumerate() {
        let p = space.project_embedding(&row)?;
        projected.row_mut(i).assign(&p);
    }
    Ok(HeadForward {
        stats,
        centered,
        solved,
        emb_centered,
        raw_means,
        projected,
    })
}

fn loss_report(
    space: MetricSpace,
    projected: &Array2<f64>,
    embeddings: &Array2<f64>,
) -> Result<LossReport> {
    let mut per_example = Vec::with_capacity(projected.nrows());
    for (i, (p, e)) in projected
        .axis_iter(Axis(0))
        .zip(embeddings.axis_iter(Axis(0)))
        .enumerate()
    {
        let d2 = space.dist2_embedded(&p, &e);
        if !d2.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite squared distance at batch index {i}"
            )));
        }
        per_example.push(d2);
    }
    let risk = per_example.iter().sum::<f64>() / per_example.len() as f64;
    Ok(LossReport { risk, per_example })
}

/// Adjoint of the isotonic projection: upstream gradients are averaged
/// within each pool (run of equal projected values).
fn isotonic_pool_adjoint(projected: &ArrayView1<f64>, upstream: &ArrayView1<f64>) -> Array1<f64> {
    let n = projected.len();
    let mut out = Array1::<f64>::zeros(n);
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && projected[end] == projected[start] {
            end += 1;
        }
        let sum: f64 = (start..end).map(|j| upstream[j]).sum();
        let avg = sum / (end - start) as f64;
        for j in start..end {
            out[j] = avg;
        }
        start = end;
    }
    out
}

/// Evaluates the batch empirical Fréchet risk and its exact reverse-mode
/// gradient with respect to every weight matrix and shift vector.
///
/// The batch must have at least 2 rows (batch statistics need it); batches
/// of at least `p_L + 1` rows keep the covariance well conditioned.
pub fn loss_and_grad(
    x: &ArrayView2<f64>,
    responses: &[Point],
    params: &NetworkParams,
    arch: &Architecture,
    space: MetricSpace,
    opts: &GradOptions,
    rng: Option<&mut RngState>,
) -> Result<(LossReport, GradientBundle)> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::SampleSize { need: 2, got: n });
    }
    if responses.len() != n {
        return Err(Error::Contract(format!(
            "{} predictor rows against {} responses",
            n,
            responses.len()
        )));
    }
    let embeddings = embed_responses(space, responses)?;
    let mode = if opts.dropout {
        ForwardMode::Train
    } else {
        ForwardMode::Eval
    };
    let cache = forward(params, arch, x, mode, rng)?;
    let head = head_forward(&cache.output, &embeddings, space, opts.ridge_policy)?;
    let report = loss_report(space, &head.projected, &embeddings)?;

    // d(risk)/d(projected) = (2 c / n) (projected - embeddings).
    let scale = 2.0 * space.metric_scale() / n as f64;
    let d_projected = (&head.projected - &embeddings) * scale;
    let d_raw = match (opts.projection_adjoint, space) {
        (ProjectionAdjoint::ExactIsotonic, MetricSpace::Wasserstein { .. }) => {
            let mut d = Array2::<f64>::zeros(d_projected.raw_dim());
            for (i, up) in d_projected.axis_iter(Axis(0)).enumerate() {
                let adj = isotonic_pool_adjoint(&head.projected.row(i), &up);
                d.row_mut(i).assign(&adj);
            }
            d
        }
        _ => d_projected,
    };

    // raw_means = kernel emb_centered / n + const.
    let d_kernel = d_raw.dot(&head.emb_centered.t()) / n as f64;
    // kernel = centered solved, solved = (cov + ridge I)^{-1} centered^T.
    let mut d_centered = d_kernel.dot(&head.solved.t());
    let d_solved = head.centered.t().dot(&d_kernel);
    let u = head.stats.solve_mat(&d_solved.view());
    d_centered += &u.t();
    let d_reps = if opts.detached_stats {
        d_centered
    } else {
        // cov = centered^T centered / n: push -u solved^T (symmetrized)
        // through the quadratic form.
        let s = u.dot(&head.solved.t());
        let sym = &s + &s.t();
        d_centered.scaled_add(-1.0 / n as f64, &head.centered.dot(&sym));
        // centered = (I - 11^T/n) reps.
        let col_mean = d_centered.mean_axis(Axis(0)).expect("nonempty");
        d_centered - &col_mean
    };

    let bundle = network_backward(params, arch, &cache, d_reps);
    Ok((report, bundle))
}

/// Loss-only evaluation along the identical code path (used by the
/// finite-difference harness and by training-time diagnostics).
pub fn loss_only(
    x: &ArrayView2<f64>,
    responses: &[Point],
    params: &NetworkParams,
    arch: &Architecture,
    space: MetricSpace,
    opts: &GradOptions,
    rng: Option<&mut RngState>,
) -> Result<LossReport> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::SampleSize { need: 2, got: n });
    }
    if responses.len() != n {
        return Err(Error::Contract(format!(
            "{} predictor rows against {} responses",
            n,
            responses.len()
        )));
    }
    let embeddings = embed_responses(space, responses)?;
    let mode = if opts.dropout {
        ForwardMode::Train
    } else {
        ForwardMode::Eval
    };
    let cache = forward(params, arch, x, mode, rng)?;
    let head = head_forward(&cache.output, &embeddings, space, opts.ridge_policy)?;
    loss_report(space, &head.projected, &embeddings)
}

/// Standard MLP backward pass from the representation gradient.
fn network_backward(
    params: &NetworkParams,
    arch: &Architecture,
    cache: &ForwardCache,
    d_output: Array2<f64>,
) -> GradientBundle {
    let depth = arch.depth();
    let mut layers: Vec<Option<LayerParams>> = (0..depth).map(|_| None).collect();
    let mut d_hidden = d_output;
    for l in (0..depth).rev() {
        // Gradient w.r.t. the layer's post-dropout output; replay the mask.
        if let Some(mask) = &cache.masks[l] {
            d_hidden *= mask;
        }
        let activation = if l + 1 == depth {
            &cache.output
        } else {
            &cache.inputs[l + 1]
        };
        let mut d_z = d_hidden;
        d_z.zip_mut_with(activation, |g, &a| {
            if a <= 0.0 {
                *g = 0.0;
            }
        });
        let d_weight = d_z.t().dot(&cache.inputs[l]);
        let d_bias = d_z.sum_axis(Axis(0));
        d_hidden = if l > 0 {
            d_z.dot(&params.layers[l].weight)
        } else {
            Array2::zeros((0, 0))
        };
        layers[l] = Some(LayerParams {
            weight: d_weight,
            bias: d_bias,
        });
    }
    GradientBundle {
        layers: layers.into_iter().map(|l| l.expect("filled")).collect(),
    }
}

/// Result of a randomized gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Instances actually compared.
    pub trials: usize,
    /// Instances discarded for sitting within the margin of a ReLU kink or
    /// an active projection boundary.
    pub skipped: usize,
    /// Maximum `||analytic - central difference|| / max(||fd||, 1e-10)`.
    pub max_rel_error: f64,
}

const KINK_MARGIN: f64 = 1e-3;
const FD_STEP: f64 = 1e-5;

/// Compares [`loss_and_grad`] against central differences on random small
/// instances of the given space, resampling any instance that sits too close
/// to a ReLU kink or an active projection boundary.
pub fn check_gradients(
    space: MetricSpace,
    trials: usize,
    rng: &mut RngState,
) -> Result<GradCheckReport> {
    if trials == 0 {
        return Err(Error::Parameter("need at least one trial".into()));
    }
    let opts = GradOptions {
        dropout: false,
        detached_stats: false,
        projection_adjoint: ProjectionAdjoint::StraightThrough,
        ridge_policy: RidgePolicy::Fixed(1e-3),
    };
    let mut completed = 0;
    let mut skipped = 0;
    let mut max_rel_error: f64 = 0.0;
    let attempt_cap = trials * 200;
    let mut attempts = 0;
    while completed < trials {
        attempts += 1;
        if attempts > attempt_cap {
            return Err(Error::Numeric(format!(
                "gradient check could not find {trials} margin-safe instances \
                 (got {completed} after {attempts} attempts)"
            )));
        }
        let (arch, params, x, responses) = random_instance(space, rng)?;
        if !instance_has_margin(&params, &arch, &x, &responses, space, &opts)? {
            skipped += 1;
            continue;
        }
        let (_, bundle) = loss_and_grad(
            &x.view(),
            &responses,
            &params,
            &arch,
            space,
            &opts,
            None,
        )?;
        let analytic = bundle.flatten();
        let flat = params.flatten();
        let fd = finite_diff_gradient(
            |theta| {
                let mut probe = params.clone();
                probe.assign_from_flat(theta.as_slice().expect("contiguous"));
                loss_only(&x.view(), &responses, &probe, &arch, space, &opts, None)
                    .map(|r| r.risk)
                    .expect("loss evaluates on perturbed params")
            },
            &flat.view(),
            FD_STEP,
        );
        let diff = (&analytic - &fd).mapv(|v| v * v).sum().sqrt();
        let denom = fd.mapv(|v| v * v).sum().sqrt().max(1e-10);
        max_rel_error = max_rel_error.max(diff / denom);
        completed += 1;
    }
    Ok(GradCheckReport {
        trials: completed,
        skipped,
        max_rel_error,
    })
}

/// Margin test: every preactivation is at least `KINK_MARGIN` away from the
/// ReLU kink, and no projection constraint is active or nearly active.
fn instance_has_margin(
    params: &NetworkParams,
    arch: &Architecture,
    x: &Array2<f64>,
    responses: &[Point],
    space: MetricSpace,
    opts: &GradOptions,
) -> Result<bool> {
    let cache = forward(params, arch, &x.view(), ForwardMode::Eval, None)?;
    for (l, layer) in params.layers.iter().enumerate() {
        let z = cache.inputs[l].dot(&layer.weight.t()) + &layer.bias;
        if z.iter().any(|v| v.abs() < KINK_MARGIN) {
            return Ok(false);
        }
    }
    let embeddings = embed_responses(space, responses)?;
    let head = head_forward(&cache.output, &embeddings, space, opts.ridge_policy)?;
    match space {
        MetricSpace::Wasserstein { .. } => {
            for row in head.raw_means.axis_iter(Axis(0)) {
                for w in row.windows(2) {
                    if w[1] - w[0] < KINK_MARGIN {
                        return Ok(false);
                    }
                }
            }
        }
        MetricSpace::Laplacian { nodes } => {
            for row in head.raw_means.axis_iter(Axis(0)) {
                for i in 0..nodes {
                    for j in 0..nodes {
                        if i != j {
                            let sym = 0.5 * (row[i * nodes + j] + row[j * nodes + i]);
                            if sym > -KINK_MARGIN {
                                return Ok(false);
                            }
                        }
                    }
                }
            }
        }
        _ => {}
    }
    Ok(true)
}

/// Small random instance with responses bounded away from projection
/// boundaries.
fn random_instance(
    space: MetricSpace,
    rng: &mut RngState,
) -> Result<(Architecture, NetworkParams, Array2<f64>, Vec<Point>)> {
    let n = 8 + (rng.standard_uniform() * 9.0) as usize;
    let input_dim = 3;
    let first = 4 + (rng.standard_uniform() * 5.0) as usize;
    let last = 2 + (rng.standard_uniform() * 3.0) as usize;
    let arch = Architecture::new(input_dim, vec![first, last], 0.0)?;
    let params = NetworkParams::init(&arch, rng);
    let x = Array2::from_shape_fn((n, input_dim), |_| rng.standard_normal());
    let mut responses = Vec::with_capacity(n);
    for _ in 0..n {
        responses.push(random_point(space, rng)?);
    }
    Ok((arch, params, x, responses))
}

fn random_point(space: MetricSpace, rng: &mut RngState) -> Result<Point> {
    match space {
        MetricSpace::Euclidean { dim } => {
            let coords = Array1::from_shape_fn(dim, |_| 1.5 * rng.standard_normal());
            space.from_natural(coords)
        }
        MetricSpace::Wasserstein { grid_size } => {
            // Ramps with well-separated increments keep weighted averages
            // strictly increasing, so the isotonic projection stays inactive.
            let mut v = Vec::with_capacity(grid_size);
            let mut level = 2.0 * rng.standard_normal();
            for _ in 0..grid_size {
                v.push(level);
                level += 0.5 + rng.standard_uniform();
            }
            space.from_natural(Array1::from_vec(v))
        }
        MetricSpace::Laplacian { nodes } => {
            // Complete graph with weights bounded away from zero keeps the
            // clipping step inactive for mildly signed weights.
            let mut w = Array2::<f64>::zeros((nodes, nodes));
            for i in 0..nodes {
                for j in (i + 1)..nodes {
                    let weight = rng.uniform(0.5, 2.0)?;
                    w[[i, j]] = weight;
                    w[[j, i]] = weight;
                }
            }
            let mut lap = -w.clone();
            for i in 0..nodes {
                lap[[i, i]] = w.row(i).sum();
            }
            space.from_natural(Array1::from_iter(lap.iter().copied()))
        }
        MetricSpace::Aitchison { dim } => {
            let raw = Array1::from_shape_fn(dim, |_| rng.gamma(2.0, 1.0).expect("valid"));
            let sum = raw.sum();
            space.from_natural(raw / sum)
        }
    }
}
