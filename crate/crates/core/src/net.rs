//! The pulse network.
//!
//! A fully connected tanh network takes `(t̃, σ)` and emits two raw heads
//! `z = (z12, z23)`. Each head becomes a coupling through
//!
//! ```text
//! J = J_max · tanh(4 · softplus(z) · t̃(1 − t̃))
//! ```
//!
//! which is zero at both ends of the pulse and stays inside `[0, J_max)`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ExchangePair;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub hidden_layers: usize,
    pub width: usize,
    pub activation: Activation,
    pub inputs: usize,
    pub outputs: usize,
    /// Coupling ceiling in MHz.
    pub j_max: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { hidden_layers: 4, width: 256, activation: Activation::Tanh, inputs: 2, outputs: 2, j_max: 100.0 }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers == 0 || self.width == 0 {
            return Err(Error::Config("network needs at least one hidden layer of nonzero width".into()));
        }
        if self.inputs != 2 || self.outputs != 2 {
            return Err(Error::Config("network maps (t, sigma) to (J12, J23)".into()));
        }
        if !(self.j_max > 0.0) || !self.j_max.is_finite() {
            return Err(Error::Config(format!("j_max must be positive, got {}", self.j_max)));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every affine layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = vec![(self.inputs, self.width)];
        shapes.extend(std::iter::repeat_n((self.width, self.width), self.hidden_layers - 1));
        shapes.push((self.width, self.outputs));
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmStart {
    None,
    EchoSymmetric,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    weights: usize,
    bias: usize,
}

/// Flattened weights and biases. Layer `l` stores a `fan_in × fan_out`
/// row-major weight block followed by its bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub config: NetConfig,
    pub values: Vec<f64>,
}

impl MlpParams {
    pub fn zeros(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let n = config.param_count();
        Ok(Self { config, values: vec![0.0; n] })
    }

    pub fn from_values(config: NetConfig, values: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if values.len() != config.param_count() {
            return Err(Error::Dimension(format!("expected {} parameters, got {}", config.param_count(), values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite network parameter".into()));
        }
        Ok(Self { config, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn layers(&self) -> Vec<Layer> {
        let mut off = 0;
        self.config
            .layer_shapes()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let l = Layer { fan_in, fan_out, weights: off, bias: off + fan_in * fan_out };
                off += fan_in * fan_out + fan_out;
                l
            })
            .collect()
    }

    fn weights(&self, l: &Layer) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((l.fan_in, l.fan_out), &self.values[l.weights..l.bias]).expect("layer layout")
    }

    fn bias(&self, l: &Layer) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.values[l.bias..l.bias + l.fan_out])
    }
}

/// Glorot-uniform weights and zero biases, optionally pre-fitted to a symmetric pulse.
pub fn init_params(config: &NetConfig, seed: u64, warm_start: WarmStart) -> Result<MlpParams> {
    let mut params = MlpParams::zeros(config.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for l in params.layers() {
        let a = (6.0 / (l.fan_in + l.fan_out) as f64).sqrt();
        let dist = Uniform::new(-a, a).map_err(|e| Error::Config(e.to_string()))?;
        for w in &mut params.values[l.weights..l.bias] {
            *w = dist.sample(&mut rng);
        }
    }
    if warm_start == WarmStart::EchoSymmetric {
        fit_echo_profile(&mut params);
    }
    Ok(params)
}

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn softplus_inverse(s: f64) -> f64 {
    s.exp_m1().ln()
}

/// Mid-pulse couplings, as fractions of `J_max`, of the warm-start profile.
/// J23 = 2·J12 keeps the effective z field off during the plateau.
const ECHO_PEAK: [f64; 2] = [0.25, 0.5];

/// Refits the output layer so both heads are the constant that puts the
/// peak at [`ECHO_PEAK`]. Constant heads make the pulse mirror-symmetric in t̃.
fn fit_echo_profile(params: &mut MlpParams) {
    let target: Vec<f64> = ECHO_PEAK.iter().map(|f: &f64| softplus_inverse(f.atanh())).collect();
    let n_t = 64;
    let sigmas = [0.0, 0.01, 0.05, 0.1];
    let mut inputs = Array2::zeros((n_t * sigmas.len(), 2));
    for (r, mut row) in inputs.rows_mut().into_iter().enumerate() {
        row[0] = (r % n_t) as f64 / (n_t - 1) as f64;
        row[1] = sigmas[r / n_t];
    }
    let layers = params.layers();
    let (hidden, out) = layers.split_at(layers.len() - 1);
    let mut a = inputs;
    for l in hidden {
        a = (a.dot(&params.weights(l)) + params.bias(l)).mapv(f64::tanh);
    }
    let out = out[0];
    let rows = a.nrows() as f64;
    let mut w = params.weights(&out).to_owned();
    let mut b = params.bias(&out).to_owned();
    // plain least-squares gradient descent; the step is bounded by the feature trace
    let step = rows / (a.iter().map(|x| x * x).sum::<f64>() + rows);
    let target = Array1::from(target);
    for _ in 0..400 {
        let resid = a.dot(&w) + &b - &target;
        w = w - a.t().dot(&resid) * (step / rows);
        b = b - resid.sum_axis(Axis(0)) * (step / rows);
    }
    params.values[out.weights..out.bias].copy_from_slice(w.as_slice().expect("standard layout"));
    params.values[out.bias..out.bias + out.fan_out].copy_from_slice(b.as_slice().expect("standard layout"));
}

/// Cached activations from a forward pass over a time grid at fixed σ.
#[derive(Clone, Debug)]
pub struct GridForward {
    t: Vec<f64>,
    activations: Vec<Array2<f64>>,
    heads: Array2<f64>,
    outputs: Vec<ExchangePair>,
}

impl GridForward {
    pub fn outputs(&self) -> &[ExchangePair] {
        &self.outputs
    }

    pub fn times(&self) -> &[f64] {
        &self.t
    }
}

fn check_time(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::Domain(format!("normalised time must lie in [0, 1], got {t}")))
    }
}

fn head_to_coupling(z: f64, t: f64, j_max: f64) -> f64 {
    j_max * (4.0 * softplus(z) * t * (1.0 - t)).tanh()
}

fn coupling_slope(z: f64, t: f64, j_max: f64) -> f64 {
    let m = t * (1.0 - t);
    let th = (4.0 * softplus(z) * m).tanh();
    j_max * (1.0 - th * th) * 4.0 * m * sigmoid(z)
}

/// Forward pass at arbitrary normalised times.
pub fn forward_at(params: &MlpParams, times: &[f64], sigma: f64) -> Result<GridForward> {
    for &t in times {
        check_time(t)?;
    }
    let mut x = Array2::zeros((times.len(), 2));
    for (k, &t) in times.iter().enumerate() {
        x[[k, 0]] = t;
        x[[k, 1]] = sigma;
    }
    let layers = params.layers();
    let mut activations = Vec::with_capacity(layers.len());
    activations.push(x);
    for l in &layers[..layers.len() - 1] {
        let prev = activations.last().expect("input row");
        let next = (prev.dot(&params.weights(l)) + params.bias(l)).mapv(f64::tanh);
        activations.push(next);
    }
    let out = layers.last().expect("output layer");
    let heads = activations.last().expect("hidden").dot(&params.weights(out)) + params.bias(out);
    let j_max = params.config.j_max;
    let outputs = times
        .iter()
        .enumerate()
        .map(|(k, &t)| ExchangePair::new(head_to_coupling(heads[[k, 0]], t, j_max), head_to_coupling(heads[[k, 1]], t, j_max)))
        .collect();
    Ok(GridForward { t: times.to_vec(), activations, heads, outputs })
}

/// Uniform grid `t̃_k = k/(n−1)`.
pub fn time_grid(n_t: usize) -> Vec<f64> {
    (0..n_t).map(|k| k as f64 / (n_t - 1) as f64).collect()
}

pub fn forward_grid(params: &MlpParams, n_t: usize, sigma: f64) -> Result<GridForward> {
    if n_t < 2 {
        return Err(Error::Domain(format!("grid needs at least 2 points, got {n_t}")));
    }
    forward_at(params, &time_grid(n_t), sigma)
}

/// Couplings at one normalised time.
pub fn forward(params: &MlpParams, t_norm: f64, sigma: f64) -> Result<ExchangePair> {
    Ok(forward_at(params, &[t_norm], sigma)?.outputs[0])
}

/// Gradient of a scalar with respect to every parameter, given its gradient
/// with respect to each grid output.
pub fn backward(params: &MlpParams, cache: &GridForward, grad_outputs: &[ExchangePair]) -> Result<Vec<f64>> {
    let n = cache.t.len();
    if grad_outputs.len() != n {
        return Err(Error::Dimension(format!("gradient has {} rows, forward pass had {n}", grad_outputs.len())));
    }
    let j_max = params.config.j_max;
    let mut delta = Array2::zeros((n, 2));
    for (k, g) in grad_outputs.iter().enumerate() {
        let t = cache.t[k];
        delta[[k, 0]] = g.j12 * coupling_slope(cache.heads[[k, 0]], t, j_max);
        delta[[k, 1]] = g.j23 * coupling_slope(cache.heads[[k, 1]], t, j_max);
    }
    let mut grad = vec![0.0; params.len()];
    let layers = params.layers();
    for (i, l) in layers.iter().enumerate().rev() {
        let input = &cache.activations[i];
        let gw = input.t().dot(&delta);
        grad[l.weights..l.bias].copy_from_slice(gw.as_standard_layout().as_slice().expect("contiguous"));
        let gb = delta.sum_axis(Axis(0));
        grad[l.bias..l.bias + l.fan_out].copy_from_slice(gb.as_slice().expect("contiguous"));
        if i > 0 {
            let back = delta.dot(&params.weights(l).t());
            delta = back * &input.mapv(|a| 1.0 - a * a);
        }
    }
    Ok(grad)
}
