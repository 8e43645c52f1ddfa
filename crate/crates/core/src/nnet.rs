//! Dense feed-forward networks with reverse-mode gradients and an Adam
//! optimiser.
//!
//! Hidden layers use a leaky rectifier; the output layer is either the
//! identity or a logistic squashed into `[LOG_FLOOR, 1 - LOG_FLOOR]`.
//! Batches are row-major: one sample per row.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{config, parse, Error, Result};
use crate::textfmt::{join, read_f64s, split_header};

pub const LEAKY_SLOPE: f64 = 0.2;
/// Logistic outputs stay at least this far from 0 and 1.
pub const LOG_FLOOR: f64 = 1e-7;

const CHECKPOINT_MAGIC: &str = "uavchan-net v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Identity,
    Logistic,
}

impl OutputActivation {
    fn tag(self) -> &'static str {
        match self {
            OutputActivation::Identity => "identity",
            OutputActivation::Logistic => "logistic",
        }
    }

    fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "identity" => Ok(OutputActivation::Identity),
            "logistic" => Ok(OutputActivation::Logistic),
            other => Err(parse(format!("unknown output activation `{other}`"))),
        }
    }
}

/// Numerically stable `1 / (1 + e^-z)`.
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn leaky(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        LEAKY_SLOPE * z
    }
}

fn leaky_slope(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

fn shape_err(msg: String) -> Error {
    Error::Shape(msg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    sizes: Vec<usize>,
    output: OutputActivation,
    /// `weights[k]` is `sizes[k] x sizes[k + 1]`.
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

/// Intermediate values of one forward pass, kept for [`DenseNet::backward`].
#[derive(Debug, Clone)]
pub struct Trace {
    /// Input to each layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each layer; the last one holds the output logits.
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl Trace {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn logits(&self) -> &Array2<f64> {
        self.pre.last().expect("at least one layer")
    }
}

/// Where a backward pass is seeded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdjointAt {
    /// Loss derivative with respect to the network output.
    Output,
    /// Loss derivative with respect to the output layer's pre-activation.
    Logit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    /// Derivative with respect to the input batch.
    pub input: Array2<f64>,
}

impl Gradients {
    /// Parameter gradients in [`DenseNet::params`] order.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

impl DenseNet {
    /// Network with every parameter zero.
    pub fn zeros(sizes: &[usize], output: OutputActivation) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(config("a network needs at least an input and an output size"));
        }
        if sizes.contains(&0) {
            return Err(config("layer sizes must be positive"));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            output,
            weights: sizes.windows(2).map(|w| Array2::zeros((w[0], w[1]))).collect(),
            biases: sizes[1..].iter().map(|&n| Array1::zeros(n)).collect(),
        })
    }

    /// Glorot-uniform weights with bound `sqrt(6 / (fan_in + fan_out))` and
    /// zero biases.
    pub fn init(sizes: &[usize], output: OutputActivation, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(sizes, output)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for w in &mut net.weights {
            let (fan_in, fan_out) = w.dim();
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            w.mapv_inplace(|_| rng.random_range(-bound..=bound));
        }
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn input_width(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.sizes.last().expect("validated sizes")
    }

    pub fn layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self, layer: usize) -> &Array2<f64> {
        &self.weights[layer]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut Array2<f64> {
        &mut self.weights[layer]
    }

    pub fn biases(&self, layer: usize) -> &Array1<f64> {
        &self.biases[layer]
    }

    pub fn biases_mut(&mut self, layer: usize) -> &mut Array1<f64> {
        &mut self.biases[layer]
    }

    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Flat parameters: per layer, weights row-major then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(shape_err(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut it = flat.iter().copied();
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            w.iter_mut().chain(b.iter_mut()).for_each(|p| *p = it.next().expect("length checked"));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn forward(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.trace(input)?.output)
    }

    pub fn trace(&self, input: ArrayView2<f64>) -> Result<Trace> {
        if input.ncols() != self.input_width() {
            return Err(shape_err(format!(
                "input width {} does not match network input {}",
                input.ncols(),
                self.input_width()
            )));
        }
        let last = self.layers() - 1;
        let mut inputs = Vec::with_capacity(self.layers());
        let mut pre = Vec::with_capacity(self.layers());
        let mut x = input.to_owned();
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = x.dot(w) + b;
            inputs.push(x);
            x = if k == last {
                match self.output {
                    OutputActivation::Identity => z.clone(),
                    OutputActivation::Logistic => z.mapv(|v| logistic(v).clamp(LOG_FLOOR, 1.0 - LOG_FLOOR)),
                }
            } else {
                z.mapv(leaky)
            };
            pre.push(z);
        }
        Ok(Trace { inputs, pre, output: x })
    }

    /// Reverse pass summing each row's contribution. Row `n` of `adjoint` is
    /// the derivative of the loss with respect to sample `n`'s output (or
    /// logit). The logistic derivative ignores the output floor.
    pub fn backward(&self, trace: &Trace, adjoint: ArrayView2<f64>, at: AdjointAt) -> Result<Gradients> {
        let out = trace.logits();
        if adjoint.dim() != out.dim() {
            return Err(shape_err(format!(
                "adjoint shape {:?} does not match output {:?}",
                adjoint.dim(),
                out.dim()
            )));
        }
        let mut delta = adjoint.to_owned();
        if at == AdjointAt::Output && self.output == OutputActivation::Logistic {
            delta.zip_mut_with(out, |d, &z| {
                let s = logistic(z);
                *d *= s * (1.0 - s);
            });
        }
        let layers = self.layers();
        let mut weights = vec![Array2::zeros((0, 0)); layers];
        let mut biases = vec![Array1::zeros(0); layers];
        for k in (0..layers).rev() {
            weights[k] = trace.inputs[k].t().dot(&delta);
            biases[k] = delta.sum_axis(Axis(0));
            let mut back = delta.dot(&self.weights[k].t());
            if k > 0 {
                back.zip_mut_with(&trace.pre[k - 1], |d, &z| *d *= leaky_slope(z));
            }
            delta = back;
        }
        Ok(Gradients {
            weights,
            biases,
            input: delta,
        })
    }

    /// Gradients of the batch-mean loss, given per-sample output adjoints.
    pub fn gradients(&self, input: ArrayView2<f64>, adjoint: ArrayView2<f64>) -> Result<Gradients> {
        let trace = self.trace(input)?;
        let scale = 1.0 / input.nrows().max(1) as f64;
        self.backward(&trace, (&adjoint * scale).view(), AdjointAt::Output)
    }

    /// One optimiser step on this network's parameters.
    pub fn apply(&mut self, grads: &Gradients, state: &mut OptimizerState, direction: Direction) -> Result<()> {
        let mut params = self.params();
        opt_step(&mut params, &grads.flat(), state, direction)?;
        self.set_params(&params)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Ascend,
    Descend,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl OptimizerState {
    pub fn new(params: usize, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: vec![0.0; params],
            v: vec![0.0; params],
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// Adam update. `Ascend` climbs the gradient, `Descend` follows its negative.
pub fn opt_step(params: &mut [f64], grads: &[f64], state: &mut OptimizerState, direction: Direction) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(shape_err(format!(
            "params {}, grads {}, optimiser {} differ in length",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let sign = match direction {
        Direction::Ascend => -1.0,
        Direction::Descend => 1.0,
    };
    for ((p, &g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let g = sign * g;
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        *p -= learning_rate * (*m / c1) / ((*v / c2).sqrt() + epsilon);
    }
    Ok(())
}

/// Text header plus little-endian `f64` parameters; with an optimiser the
/// first and second moments follow.
pub fn write_checkpoint(net: &DenseNet, optimizer: Option<&OptimizerState>) -> Vec<u8> {
    let opt_line = match optimizer {
        Some(o) => format!(
            "adam {} {} {} {}",
            o.config.learning_rate, o.config.beta1, o.config.beta2, o.config.epsilon
        ),
        None => "none".to_string(),
    };
    let mut out = format!(
        "{CHECKPOINT_MAGIC}\nsizes = {}\nhidden = leaky_relu {LEAKY_SLOPE}\noutput = {}\nstep = {}\noptimizer = {opt_line}\nparams = {}\nend_header\n",
        join(&net.sizes),
        net.output.tag(),
        optimizer.map_or(0, |o| o.step),
        net.param_count(),
    )
    .into_bytes();
    let mut push = |vals: &[f64]| vals.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    push(&net.params());
    if let Some(o) = optimizer {
        push(&o.m);
        push(&o.v);
    }
    out
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<(DenseNet, Option<OptimizerState>)> {
    let (h, body) = split_header(bytes, CHECKPOINT_MAGIC)?;
    let sizes: Vec<usize> = h.get_list("sizes")?;
    let hidden: Vec<String> = h.get_list("hidden")?;
    if hidden.len() != 2 || hidden[0] != "leaky_relu" || hidden[1].parse::<f64>().ok() != Some(LEAKY_SLOPE) {
        return Err(parse(format!("unsupported hidden activation `{}`", hidden.join(" "))));
    }
    let mut net = DenseNet::zeros(&sizes, OutputActivation::from_tag(h.raw("output")?)?)?;
    let count: usize = h.get("params")?;
    if count != net.param_count() {
        return Err(parse("parameter count does not match layer sizes"));
    }
    let opt: Vec<String> = h.get_list("optimizer")?;
    let with_opt = opt.first().map(String::as_str) == Some("adam");
    let blocks = if with_opt { 3 } else { 1 };
    let values = read_f64s(body, blocks * count)?;
    net.set_params(&values[..count])?;
    let optimizer = if with_opt {
        let nums = opt[1..]
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| parse("bad optimiser setting")))
            .collect::<Result<Vec<_>>>()?;
        if nums.len() != 4 {
            return Err(parse("optimiser line needs four settings"));
        }
        Some(OptimizerState {
            config: AdamConfig {
                learning_rate: nums[0],
                beta1: nums[1],
                beta2: nums[2],
                epsilon: nums[3],
            },
            step: h.get("step")?,
            m: values[count..2 * count].to_vec(),
            v: values[2 * count..].to_vec(),
        })
    } else {
        None
    };
    Ok((net, optimizer))
}
