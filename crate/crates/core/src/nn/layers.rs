use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::graph::{Graph, ParamId, ParamSet, Var};
use super::tensor::{ConvGeometry, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

fn uniform_tensor(rng: &mut Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::from_parts(shape.to_vec(), data)
}

/// Fully connected layer `y = x W + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Dense {
    /// Glorot-uniform weights scaled by `gain`, zero bias.
    pub fn new(params: &mut ParamSet, name: &str, input: usize, output: usize, gain: f64, rng: &mut Rng) -> Self {
        let bound = gain * (6.0 / (input + output) as f64).sqrt();
        let weight = params.add(format!("{name}.weight"), uniform_tensor(rng, &[input, output], bound));
        let bias = params.add(format!("{name}.bias"), Tensor::zeros(&[1, output]));
        Dense {
            weight,
            bias,
            input,
            output,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let xw = g.matmul(x, w)?;
        g.add_row(xw, b)
    }
}

/// One LSTM layer with gates ordered input, forget, cell, output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LstmLayer {
    pub input_weight: ParamId,
    pub recurrent_weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmLayer {
    pub fn new(params: &mut ParamSet, name: &str, input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let input_weight = params.add(
            format!("{name}.input_weight"),
            uniform_tensor(rng, &[input, 4 * hidden], bound),
        );
        let recurrent_weight = params.add(
            format!("{name}.recurrent_weight"),
            uniform_tensor(rng, &[hidden, 4 * hidden], bound),
        );
        let mut b = Tensor::zeros(&[1, 4 * hidden]);
        b.data_mut()[hidden..2 * hidden].fill(1.0);
        let bias = params.add(format!("{name}.bias"), b);
        LstmLayer {
            input_weight,
            recurrent_weight,
            bias,
            input,
            hidden,
        }
    }

    /// One step; returns the new `(h, c)`.
    pub fn step(&self, g: &mut Graph, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let wx = g.param(self.input_weight);
        let wh = g.param(self.recurrent_weight);
        let b = g.param(self.bias);
        let zx = g.matmul(x, wx)?;
        let zh = g.matmul(h, wh)?;
        let z = g.add(zx, zh)?;
        let z = g.add_row(z, b)?;
        let hc = g.lstm_cell(z, c)?;
        let h = g.slice_cols(hc, 0, self.hidden)?;
        let c = g.slice_cols(hc, self.hidden, 2 * self.hidden)?;
        Ok((h, c))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetRole {
    /// Outputs an action mean and owns a state-independent log-std.
    Actor,
    /// Outputs a scalar value estimate.
    Critic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrentSpec {
    pub role: NetRole,
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub init_std: f64,
}

/// Per-layer `(h, c)` rows for a batch of sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState {
    pub layers: Vec<(Tensor, Tensor)>,
}

impl RecurrentState {
    pub fn zeros(spec: &RecurrentSpec, batch: usize) -> Self {
        RecurrentState {
            layers: (0..spec.layers)
                .map(|_| {
                    (
                        Tensor::zeros(&[batch, spec.hidden]),
                        Tensor::zeros(&[batch, spec.hidden]),
                    )
                })
                .collect(),
        }
    }
}

/// Stacked LSTM followed by a linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentNet {
    spec: RecurrentSpec,
    params: ParamSet,
    cells: Vec<LstmLayer>,
    head: Dense,
    log_std: Option<ParamId>,
}

impl RecurrentNet {
    pub fn new(spec: RecurrentSpec, seed: u64) -> Result<Self> {
        if spec.input_dim == 0 || spec.output_dim == 0 || spec.hidden == 0 || spec.layers == 0 {
            return Err(Error::config(format!("degenerate network spec {spec:?}")));
        }
        if spec.role == NetRole::Actor && !(spec.init_std > 0.0) {
            return Err(Error::config("actor init_std must be positive"));
        }
        let mut rng = crate::rng::rng_from(seed, &[spec.role as u64, 0x4E4E]);
        let mut params = ParamSet::new();
        let mut cells = Vec::with_capacity(spec.layers);
        let mut width = spec.input_dim;
        for l in 0..spec.layers {
            cells.push(LstmLayer::new(&mut params, &format!("lstm{l}"), width, spec.hidden, &mut rng));
            width = spec.hidden;
        }
        // small head so the initial action mean sits near zero
        let gain = match spec.role {
            NetRole::Actor => 0.01,
            NetRole::Critic => 1.0,
        };
        let head = Dense::new(&mut params, "head", width, spec.output_dim, gain, &mut rng);
        let log_std = (spec.role == NetRole::Actor).then(|| {
            params.add(
                "log_std",
                Tensor::filled(&[1, spec.output_dim], spec.init_std.ln()),
            )
        });
        Ok(RecurrentNet {
            spec,
            params,
            cells,
            head,
            log_std,
        })
    }

    pub fn spec(&self) -> &RecurrentSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn log_std_param(&self) -> Option<ParamId> {
        self.log_std
    }

    /// Current per-dimension standard deviation (actors only).
    pub fn std(&self) -> Option<Vec<f64>> {
        self.log_std
            .map(|id| self.params.get(id).data().iter().map(|v| v.exp()).collect())
    }

    pub fn zero_state(&self, batch: usize) -> RecurrentState {
        RecurrentState::zeros(&self.spec, batch)
    }

    /// One recurrent step on graph variables. `state` holds `(h, c)` per
    /// layer and is replaced by the new state.
    pub fn step(&self, g: &mut Graph, x: Var, state: &mut [(Var, Var)]) -> Result<Var> {
        let mut inp = x;
        for (cell, hc) in self.cells.iter().zip(state.iter_mut()) {
            let (h, c) = cell.step(g, inp, hc.0, hc.1)?;
            *hc = (h, c);
            inp = h;
        }
        self.head.forward(g, inp)
    }

    pub fn state_vars(&self, g: &mut Graph, state: &RecurrentState) -> Vec<(Var, Var)> {
        state
            .layers
            .iter()
            .map(|(h, c)| (g.input(h.clone()), g.input(c.clone())))
            .collect()
    }

    /// Runs a batch of equal-length sequences from `state`; `inputs[t]` is
    /// `[B, input_dim]`. Returns the head output per step.
    pub fn unroll(&self, g: &mut Graph, inputs: &[Var], state: &RecurrentState) -> Result<Vec<Var>> {
        let mut vars = self.state_vars(g, state);
        inputs.iter().map(|&x| self.step(g, x, &mut vars)).collect()
    }

    /// Inference for a batch of rows; advances `state` in place.
    pub fn forward(&self, input: &Tensor, state: &mut RecurrentState) -> Result<Tensor> {
        let (_, d) = input.dims2();
        if d != self.spec.input_dim {
            return Err(Error::shape(format!(
                "network expects {} inputs, got {d}",
                self.spec.input_dim
            )));
        }
        let mut g = Graph::new(&self.params);
        let x = g.input(input.clone());
        let mut vars = self.state_vars(&mut g, state);
        let y = self.step(&mut g, x, &mut vars)?;
        for ((h, c), (hv, cv)) in state.layers.iter_mut().zip(vars) {
            *h = g.value(hv).clone();
            *c = g.value(cv).clone();
        }
        Ok(g.value(y).clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderSpec {
    pub input_dim: usize,
    pub stem_hidden: usize,
    /// Channels of the seed feature map, then after each transposed conv.
    pub channels: Vec<usize>,
    pub seed_size: usize,
    pub geometry: ConvGeometry,
    pub output_size: usize,
}

impl DecoderSpec {
    pub fn for_grid(input_dim: usize, output_size: usize) -> Self {
        DecoderSpec {
            input_dim,
            stem_hidden: 64,
            channels: vec![16, 16, 8, 1],
            seed_size: 4,
            geometry: ConvGeometry {
                kernel: 4,
                stride: 2,
                padding: 1,
            },
            output_size,
        }
    }

    /// Spatial size before the centre crop.
    pub fn raw_size(&self) -> usize {
        (1..self.channels.len()).fold(self.seed_size, |s, _| self.geometry.output_size(s))
    }
}

/// Dense stem reshaped to a small feature map, upsampled by stride-2
/// transposed convolutions, centre-cropped to the output grid and passed
/// through a softplus so predictions are non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDecoder {
    spec: DecoderSpec,
    params: ParamSet,
    stem: [Dense; 2],
    convs: Vec<(ParamId, ParamId)>,
}

impl GridDecoder {
    pub fn new(spec: DecoderSpec, seed: u64) -> Result<Self> {
        if spec.channels.len() < 2 || *spec.channels.last().unwrap() != 1 {
            return Err(Error::config("decoder needs at least one conv and one output channel"));
        }
        if spec.raw_size() < spec.output_size {
            return Err(Error::config(format!(
                "decoder produces {} cells per side, need {}",
                spec.raw_size(),
                spec.output_size
            )));
        }
        let mut rng = crate::rng::rng_from(seed, &[0xDEC0]);
        let mut params = ParamSet::new();
        let seed_len = spec.channels[0] * spec.seed_size * spec.seed_size;
        let stem = [
            Dense::new(&mut params, "stem0", spec.input_dim, spec.stem_hidden, 1.0, &mut rng),
            Dense::new(&mut params, "stem1", spec.stem_hidden, seed_len, 1.0, &mut rng),
        ];
        let k = spec.geometry.kernel;
        let mut convs = Vec::new();
        for (i, pair) in spec.channels.windows(2).enumerate() {
            let (ci, co) = (pair[0], pair[1]);
            let bound = (6.0 / ((ci + co) * k * k / 4) as f64).sqrt();
            let w = params.add(format!("deconv{i}.weight"), uniform_tensor(&mut rng, &[ci, co, k, k], bound));
            let b = params.add(format!("deconv{i}.bias"), Tensor::zeros(&[co]));
            convs.push((w, b));
        }
        Ok(GridDecoder {
            spec,
            params,
            stem,
            convs,
        })
    }

    pub fn spec(&self) -> &DecoderSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// `x: [N, input_dim]` to `[N, output_size²]`.
    pub fn forward_graph(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let n = g.value(x).dims2().0;
        let s = self.spec.seed_size;
        let h = self.stem[0].forward(g, x)?;
        let h = g.tanh(h);
        let h = self.stem[1].forward(g, h)?;
        let h = g.relu(h);
        let mut fm = g.reshape(h, &[n, self.spec.channels[0], s, s])?;
        let last = self.convs.len() - 1;
        for (i, &(w, b)) in self.convs.iter().enumerate() {
            let wv = g.param(w);
            let bv = g.param(b);
            fm = g.conv_transpose2d(fm, wv, self.spec.geometry)?;
            fm = g.add_channel_bias(fm, bv)?;
            if i < last {
                fm = g.relu(fm);
            }
        }
        let o = self.spec.output_size;
        let cropped = g.center_crop(fm, o, o)?;
        let out = g.softplus(cropped);
        g.reshape(out, &[n, o * o])
    }

    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        if input.dims2().1 != self.spec.input_dim {
            return Err(Error::shape(format!(
                "decoder expects {} features, got {:?}",
                self.spec.input_dim,
                input.shape()
            )));
        }
        let mut g = Graph::new(&self.params);
        let x = g.input(input.clone());
        let y = self.forward_graph(&mut g, x)?;
        Ok(g.value(y).clone())
    }
}

/// Mean of `(pred - target)²` over entries where `mask` is non-zero.
pub fn masked_mse(g: &mut Graph, pred: Var, target: &Tensor, mask: &Tensor) -> Result<Var> {
    if g.shape(pred) != target.shape() || target.shape() != mask.shape() {
        return Err(Error::shape("masked_mse: shapes differ"));
    }
    let count = mask.data().iter().filter(|&&m| m != 0.0).count().max(1);
    let t = g.input(target.clone());
    let m = g.input(mask.clone());
    let d = g.sub(pred, t)?;
    let d = g.mul(d, m)?;
    let sq = g.square(d);
    let s = g.sum(sq);
    Ok(g.scale(s, 1.0 / count as f64))
}

/// Gaussian noise helper used by samplers.
pub fn standard_normal(rng: &mut Rng) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").sample(rng)
}
