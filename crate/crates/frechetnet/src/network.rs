//! Feed-forward ReLU network producing the hidden-layer representations fed
//! to the Fréchet output layer.
//!
//! Dropout (inverted, scale `1/(1-r)`) is applied to the outputs of hidden
//! layers `1..L-1` in train mode but never to the final representation
//! layer, whose batch statistics drive the output-layer weights.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::numerics::RngState;
use crate::{Error, Result};

/// Network shape: input width, one entry per hidden layer, dropout rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub dropout_rate: f64,
}

impl Architecture {
    pub fn new(input_dim: usize, hidden_widths: Vec<usize>, dropout_rate: f64) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Parameter("input dimension must be positive".into()));
        }
        if hidden_widths.is_empty() || hidden_widths.iter().any(|&w| w == 0) {
            return Err(Error::Parameter(
                "need at least one hidden layer, all widths positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::Parameter(format!(
                "dropout rate must lie in [0, 1), got {dropout_rate}"
            )));
        }
        Ok(Self {
            input_dim,
            hidden_widths,
            dropout_rate,
        })
    }

    /// The usual shape: `depth - 1` hidden layers of `width` nodes followed
    /// by one representation layer of `last_width` nodes.
    pub fn with_uniform_widths(
        input_dim: usize,
        depth: usize,
        width: usize,
        last_width: usize,
        dropout_rate: f64,
    ) -> Result<Self> {
        if depth == 0 {
            return Err(Error::Parameter("depth must be at least 1".into()));
        }
        let mut widths = vec![width; depth - 1];
        widths.push(last_width);
        Self::new(input_dim, widths, dropout_rate)
    }

    pub fn depth(&self) -> usize {
        self.hidden_widths.len()
    }

    /// Width of the final hidden layer (the representation dimension).
    pub fn representation_dim(&self) -> usize {
        *self.hidden_widths.last().expect("at least one layer")
    }
}

/// Weight matrix and shift vector of one affine layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// Shape `(out, in)`.
    pub weight: Array2<f64>,
    /// Shape `(out,)`.
    pub bias: Array1<f64>,
}

/// All layer parameters of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub layers: Vec<LayerParams>,
}

impl NetworkParams {
    /// Fan-in-scaled uniform initialization: every weight and shift of layer
    /// `l` is drawn from `U[-1/sqrt(fan_in), 1/sqrt(fan_in)]`. Entries are
    /// drawn weight-matrix first (row-major), then the shift vector, layer by
    /// layer, so initialization is reproducible from the generator state.
    pub fn init(arch: &Architecture, rng: &mut RngState) -> Self {
        let mut layers = Vec::with_capacity(arch.depth());
        let mut fan_in = arch.input_dim;
        for &width in &arch.hidden_widths {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let weight = Array2::from_shape_fn((width, fan_in), |_| {
                rng.uniform(-bound, bound).expect("positive bound")
            });
            let bias = Array1::from_shape_fn(width, |_| {
                rng.uniform(-bound, bound).expect("positive bound")
            });
            layers.push(LayerParams { weight, bias });
            fan_in = width;
        }
        Self { layers }
    }

    /// Zero-filled parameters with the shapes of `arch`.
    pub fn zeros(arch: &Architecture) -> Self {
        let mut layers = Vec::with_capacity(arch.depth());
        let mut fan_in = arch.input_dim;
        for &width in &arch.hidden_widths {
            layers.push(LayerParams {
                weight: Array2::zeros((width, fan_in)),
                bias: Array1::zeros(width),
            });
            fan_in = width;
        }
        Self { layers }
    }

    /// Checks layer count and shapes against `arch`.
    pub fn validate(&self, arch: &Architecture) -> Result<()> {
        if self.layers.len() != arch.depth() {
            return Err(Error::Dimension(format!(
                "params have {} layers, architecture has {}",
                self.layers.len(),
                arch.depth()
            )));
        }
        let mut fan_in = arch.input_dim;
        for (l, (layer, &width)) in self.layers.iter().zip(&arch.hidden_widths).enumerate() {
            if layer.weight.nrows() != width
                || layer.weight.ncols() != fan_in
                || layer.bias.len() != width
            {
                return Err(Error::Dimension(format!(
                    "layer {l} has shape {}x{} / {}, expected {width}x{fan_in} / {width}",
                    layer.weight.nrows(),
                    layer.weight.ncols(),
                    layer.bias.len()
                )));
            }
            fan_in = width;
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Flattens all parameters (layer by layer, weights row-major then
    /// shift). Used by the finite-difference harness.
    pub fn flatten(&self) -> Array1<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            flat.extend(layer.weight.iter().copied());
            flat.extend(layer.bias.iter().copied());
        }
        Array1::from_vec(flat)
    }

    /// Inverse of [`NetworkParams::flatten`]; shapes must already match.
    pub fn assign_from_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "flat length mismatch");
        let mut pos = 0;
        for layer in &mut self.layers {
            for w in layer.weight.iter_mut() {
                *w = flat[pos];
                pos += 1;
            }
            for b in layer.bias.iter_mut() {
                *b = flat[pos];
                pos += 1;
            }
        }
    }
}

/// Whether dropout masks are sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    Train,
    Eval,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each affine layer; `inputs[0]` is the batch, `inputs[l]` the
    /// (post-dropout) activations feeding layer `l`.
    pub inputs: Vec<Array2<f64>>,
    /// Scaled dropout masks (entries `0` or `1/(1-r)`) for each layer's
    /// output; `None` when dropout was inactive for that layer.
    pub masks: Vec<Option<Array2<f64>>>,
    /// Final representations `g_L` (no dropout applied).
    pub output: Array2<f64>,
}

/// Runs the network on a batch (rows are examples). In train mode with a
/// positive dropout rate an rng must be supplied for the masks; eval mode
/// never touches the rng.
pub fn forward(
    params: &NetworkParams,
    arch: &Architecture,
    x: &ArrayView2<f64>,
    mode: ForwardMode,
    mut rng: Option<&mut RngState>,
) -> Result<ForwardCache> {
    params.validate(arch)?;
    if x.ncols() != arch.input_dim {
        return Err(Error::Dimension(format!(
            "batch has {} columns, input dimension is {}",
            x.ncols(),
            arch.input_dim
        )));
    }
    let depth = arch.depth();
    let dropout_active = mode == ForwardMode::Train && arch.dropout_rate > 0.0;
    let mut inputs = Vec::with_capacity(depth);
    let mut masks = Vec::with_capacity(depth);
    let mut current = x.to_owned();
    for (l, layer) in params.layers.iter().enumerate() {
        let z = current.dot(&layer.weight.t()) + &layer.bias;
        let mut activation = z.mapv(|v| v.max(0.0));
        let mask = if dropout_active && l + 1 < depth {
            let rng = rng
                .as_deref_mut()
                .ok_or_else(|| Error::Parameter("train-mode dropout requires an rng".into()))?;
            let keep = 1.0 - arch.dropout_rate;
            let m = Array2::from_shape_fn(activation.raw_dim(), |_| {
                if rng.standard_uniform() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            });
            activation *= &m;
            Some(m)
        } else {
            None
        };
        masks.push(mask);
        inputs.push(std::mem::replace(&mut current, activation));
    }
    Ok(ForwardCache {
        inputs,
        masks,
        output: current,
    })
}

/// Eval-mode representations without cache bookkeeping.
pub fn forward_eval(
    params: &NetworkParams,
    arch: &Architecture,
    x: &ArrayView2<f64>,
) -> Result<Array2<f64>> {
    Ok(forward(params, arch, x, ForwardMode::Eval, None)?.output)
}
