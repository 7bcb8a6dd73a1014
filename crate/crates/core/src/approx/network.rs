//! Policy and Q networks: a sequential information layer (CNN or LSTM)
//! followed by a linear decision layer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::init::{kaiming_normal, kaiming_uniform, leaky_relu_gain, DECISION_LAYER_GAIN};
use super::layers::{Batch, BatchNorm1d, Conv1d, Dropout, LeakyRelu, Linear, Lstm, LstmState, MaxPool1d, Tanh};
use super::params::ParameterSet;
use super::Mode;
use crate::env::AgentState;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SilKind {
    Cnn,
    Lstm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    /// `tanh(w · [g, a_prev])`
    PolicyTanh,
    /// `w · [g, a_prev, action]`
    QLinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnSpec {
    pub layers: usize,
    pub kernel: usize,
    pub stride: usize,
    pub feature_maps: usize,
    pub leaky_slope: f64,
    pub pool_kernel: usize,
    pub pool_stride: usize,
}

impl Default for CnnSpec {
    fn default() -> Self {
        Self {
            layers: 2,
            kernel: 3,
            stride: 1,
            feature_maps: 32,
            leaky_slope: 0.01,
            pool_kernel: 2,
            pool_stride: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LstmSpec {
    pub layers: usize,
    pub hidden: usize,
}

impl Default for LstmSpec {
    fn default() -> Self {
        Self { layers: 2, hidden: 128 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub sil_kind: SilKind,
    pub n: usize,
    pub input_channels: usize,
    pub cnn: CnnSpec,
    pub lstm: LstmSpec,
    pub dropout_rate: f64,
    pub head: HeadKind,
    /// Q head only: also feed the action to the SIL as a constant input channel.
    pub action_channel: bool,
}

impl NetworkSpec {
    pub fn policy(sil_kind: SilKind, n: usize) -> Self {
        Self {
            sil_kind,
            n,
            input_channels: 3,
            cnn: CnnSpec::default(),
            lstm: LstmSpec::default(),
            dropout_rate: 0.2,
            head: HeadKind::PolicyTanh,
            action_channel: false,
        }
    }

    pub fn q(sil_kind: SilKind, n: usize) -> Self {
        Self {
            head: HeadKind::QLinear,
            action_channel: true,
            ..Self::policy(sil_kind, n)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Spec(m));
        if self.n == 0 || self.input_channels == 0 {
            return fail("window length and input channels must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout rate must lie in [0, 1), got {}", self.dropout_rate));
        }
        if self.action_channel && self.head != HeadKind::QLinear {
            return fail("the action channel only exists on a Q network".into());
        }
        match self.sil_kind {
            SilKind::Cnn => {
                let c = &self.cnn;
                if c.layers == 0 || c.feature_maps == 0 || c.kernel == 0 || c.kernel.is_multiple_of(2) {
                    return fail("CNN needs at least one layer, feature maps and an odd kernel".into());
                }
                if c.stride != 1 {
                    return fail(format!("only stride-1 convolutions are supported, got {}", c.stride));
                }
                if c.pool_kernel == 0 || c.pool_stride == 0 || self.n < c.pool_kernel {
                    return fail(format!("pooling {}x{} does not fit window {}", c.pool_kernel, c.pool_stride, self.n));
                }
            }
            SilKind::Lstm => {
                if self.lstm.layers == 0 || self.lstm.hidden == 0 {
                    return fail("LSTM needs at least one layer and one hidden unit".into());
                }
            }
        }
        Ok(())
    }

    /// Channels entering the SIL.
    pub fn sil_channels(&self) -> usize {
        self.input_channels + usize::from(self.action_channel)
    }

    pub fn has_action(&self) -> bool {
        self.head == HeadKind::QLinear
    }

    /// Length of the SIL feature vector g.
    pub fn feature_len(&self) -> usize {
        match self.sil_kind {
            SilKind::Cnn => self.cnn.feature_maps * MaxPool1d::new(self.cnn.pool_kernel, self.cnn.pool_stride).output_len(self.n),
            SilKind::Lstm => self.lstm.hidden,
        }
    }

    pub fn head_inputs(&self) -> usize {
        self.feature_len() + 1 + usize::from(self.has_action())
    }
}

/// Recurrent state for every LSTM layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmCarry {
    pub h: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
}

impl LstmCarry {
    pub fn zeros(spec: &LstmSpec) -> Self {
        Self {
            h: vec![vec![0.0; spec.hidden]; spec.layers],
            c: vec![vec![0.0; spec.hidden]; spec.layers],
        }
    }

    fn layer(&self, i: usize) -> LstmState {
        LstmState {
            h: self.h[i].clone(),
            c: self.c[i].clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// One network output per sample.
    pub values: Vec<f64>,
    /// LSTM only: state after the last sample's window.
    pub carry: Option<LstmCarry>,
}

/// Gradients of the recorded loss with respect to the non-feature inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct InputGrads {
    pub prev_action: Vec<f64>,
    /// Empty for policy networks.
    pub action: Vec<f64>,
}

#[derive(Debug, Clone)]
struct CnnBlock {
    conv: Conv1d,
    bn: BatchNorm1d,
    act: LeakyRelu,
    dropout: Option<Dropout>,
}

#[derive(Debug, Clone)]
struct CnnSil {
    blocks: Vec<CnnBlock>,
    pool: MaxPool1d,
}

#[derive(Debug, Clone)]
struct LstmSil {
    layers: Vec<Lstm>,
    dropouts: Vec<Dropout>,
}

#[derive(Debug, Clone)]
enum Sil {
    Cnn(CnnSil),
    Lstm(LstmSil),
}

#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    params: ParameterSet,
    sil: Sil,
    head_dropout: Dropout,
    head: Linear,
    tanh: Tanh,
    dropout_rng: ChaCha8Rng,
    pending: Option<usize>,
}

impl Network {
    /// Build a network with Kaiming-initialized weights.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterSet::new();
        let sil = match spec.sil_kind {
            SilKind::Cnn => {
                let c = &spec.cnn;
                let gain = leaky_relu_gain(c.leaky_slope);
                let mut in_ch = spec.sil_channels();
                let mut blocks = Vec::with_capacity(c.layers);
                for i in 0..c.layers {
                    let fan_in = in_ch * c.kernel;
                    let w = kaiming_normal(&mut rng, c.feature_maps * fan_in, fan_in, gain);
                    blocks.push(CnnBlock {
                        conv: Conv1d::new(&mut params, &format!("sil.conv{i}"), in_ch, c.feature_maps, c.kernel, w),
                        bn: BatchNorm1d::new(&mut params, &format!("sil.bn{i}"), c.feature_maps),
                        act: LeakyRelu::new(c.leaky_slope),
                        dropout: (i + 1 < c.layers).then(|| Dropout::new(spec.dropout_rate)),
                    });
                    in_ch = c.feature_maps;
                }
                Sil::Cnn(CnnSil {
                    blocks,
                    pool: MaxPool1d::new(c.pool_kernel, c.pool_stride),
                })
            }
            SilKind::Lstm => {
                let h = spec.lstm.hidden;
                let mut inputs = spec.sil_channels();
                let mut layers = Vec::with_capacity(spec.lstm.layers);
                for i in 0..spec.lstm.layers {
                    let w_ih = kaiming_normal(&mut rng, 4 * h * inputs, inputs, 1.0);
                    let w_hh = kaiming_normal(&mut rng, 4 * h * h, h, 1.0);
                    layers.push(Lstm::new(&mut params, &format!("sil.lstm{i}"), inputs, h, w_ih, w_hh));
                    inputs = h;
                }
                let dropouts = (1..spec.lstm.layers).map(|_| Dropout::new(spec.dropout_rate)).collect();
                Sil::Lstm(LstmSil { layers, dropouts })
            }
        };
        let fan_in = spec.head_inputs();
        let w = kaiming_uniform(&mut rng, fan_in, fan_in, DECISION_LAYER_GAIN);
        let head = Linear::new(&mut params, "head", fan_in, 1, false, w);
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(seed);
        dropout_rng.set_stream(1);
        Ok(Self {
            head_dropout: Dropout::new(spec.dropout_rate),
            spec,
            params,
            sil,
            head,
            tanh: Tanh::new(),
            dropout_rng,
            pending: None,
        })
    }

    /// Build a network for `spec` and load `params` into it.
    pub fn from_params(spec: NetworkSpec, params: ParameterSet, seed: u64) -> Result<Self> {
        let mut net = Self::new(spec, seed)?;
        net.set_params(params)?;
        Ok(net)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    /// Replace all tensors (values and optimizer buffers) with `params`.
    pub fn set_params(&mut self, params: ParameterSet) -> Result<()> {
        self.params.check_layout(&params)?;
        params.validate()?;
        self.params = params;
        Ok(())
    }

    /// Restart the dropout mask stream.
    pub fn reseed_dropout(&mut self, seed: u64) {
        self.dropout_rng = ChaCha8Rng::seed_from_u64(seed);
        self.dropout_rng.set_stream(1);
    }

    pub fn initial_carry(&self) -> Option<LstmCarry> {
        (self.spec.sil_kind == SilKind::Lstm).then(|| LstmCarry::zeros(&self.spec.lstm))
    }

    fn check_inputs(&self, states: &[AgentState], actions: Option<&[f64]>) -> Result<()> {
        if states.is_empty() {
            return Err(Error::Spec("forward needs at least one state".into()));
        }
        for s in states {
            if s.n != self.spec.n || s.features.len() != self.spec.input_channels * s.n {
                return Err(Error::Spec(format!(
                    "state has window {} and {} features, network expects window {}",
                    s.n,
                    s.features.len(),
                    self.spec.n
                )));
            }
            if !s.prev_action.is_finite() || s.features.iter().any(|x| !x.is_finite()) {
                return Err(Error::Spec("state contains non-finite values".into()));
            }
        }
        match (self.spec.has_action(), actions) {
            (true, Some(a)) if a.len() == states.len() && a.iter().all(|x| x.is_finite()) => Ok(()),
            (true, _) => Err(Error::Spec("Q network needs one finite action per state".into())),
            (false, None) => Ok(()),
            (false, Some(_)) => Err(Error::Spec("policy network takes no action input".into())),
        }
    }

    /// Run the SIL on a batch and return g as `[batch, feature_len, 1]`.
    pub fn forward_sil(&mut self, states: &[AgentState], actions: Option<&[f64]>, mode: Mode, carry: Option<&LstmCarry>) -> Result<(Batch, Option<LstmCarry>)> {
        self.check_inputs(states, actions)?;
        let (b_n, n, c_in) = (states.len(), self.spec.n, self.spec.input_channels);
        let channels = self.spec.sil_channels();
        let params = &mut self.params;
        let rng = &mut self.dropout_rng;
        match &mut self.sil {
            Sil::Cnn(sil) => {
                let mut data = Vec::with_capacity(b_n * channels * n);
                for (b, s) in states.iter().enumerate() {
                    data.extend_from_slice(&s.features);
                    if let Some(a) = actions.filter(|_| self.spec.action_channel) {
                        data.extend(std::iter::repeat_n(a[b], n));
                    }
                }
                let mut x = Batch::new([b_n, channels, n], data);
                for block in &mut sil.blocks {
                    x = block.conv.forward(params, x)?;
                    x = block.bn.forward(params, x, mode)?;
                    x = block.act.forward(x);
                    if let Some(d) = &mut block.dropout {
                        x = d.forward(x, mode, rng);
                    }
                }
                let x = sil.pool.forward(x);
                let f = x.sample_len();
                Ok((Batch::dense(b_n, f, x.data), None))
            }
            Sil::Lstm(sil) => {
                let carry = match carry {
                    Some(c) => c.clone(),
                    None => LstmCarry::zeros(&self.spec.lstm),
                };
                if carry.h.len() != sil.layers.len() || carry.h.iter().chain(&carry.c).any(|v| v.len() != self.spec.lstm.hidden) {
                    return Err(Error::Spec(format!("LSTM carry must be {} x {}", sil.layers.len(), self.spec.lstm.hidden)));
                }
                let mut data = Vec::with_capacity(b_n * n * channels);
                for (b, s) in states.iter().enumerate() {
                    for t in 0..n {
                        for c in 0..c_in {
                            data.push(s.features[c * n + t]);
                        }
                        if let Some(a) = actions.filter(|_| self.spec.action_channel) {
                            data.push(a[b]);
                        }
                    }
                }
                let mut x = Batch::new([b_n, n, channels], data);
                let mut next = LstmCarry {
                    h: Vec::new(),
                    c: Vec::new(),
                };
                let depth = sil.layers.len();
                for i in 0..depth {
                    let (out, finals) = sil.layers[i].forward(params, x, Some(&carry.layer(i)))?;
                    let last = finals.into_iter().next_back().expect("non-empty batch");
                    next.h.push(last.h);
                    next.c.push(last.c);
                    x = if i + 1 < depth { sil.dropouts[i].forward(out, mode, rng) } else { out };
                }
                let h = self.spec.lstm.hidden;
                let mut g = Vec::with_capacity(b_n * h);
                for b in 0..b_n {
                    g.extend_from_slice(&x.data[(b * n + n - 1) * h..][..h]);
                }
                Ok((Batch::dense(b_n, h, g), Some(next)))
            }
        }
    }

    /// Forward a batch and record activations for [`Network::backward`].
    pub fn forward(&mut self, states: &[AgentState], actions: Option<&[f64]>, mode: Mode, carry: Option<&LstmCarry>) -> Result<ForwardOutput> {
        let (g, carry) = self.forward_sil(states, actions, mode, carry)?;
        let b_n = states.len();
        let g = self.head_dropout.forward(g, mode, &mut self.dropout_rng);
        let width = self.spec.head_inputs();
        let mut z = Vec::with_capacity(b_n * width);
        for (b, s) in states.iter().enumerate() {
            z.extend_from_slice(g.sample(b));
            z.push(s.prev_action);
            if let Some(a) = actions {
                z.push(a[b]);
            }
        }
        debug_assert_eq!(z.len(), b_n * width);
        let out = self.head.forward(&self.params, Batch::dense(b_n, width, z))?;
        let out = match self.spec.head {
            HeadKind::PolicyTanh => self.tanh.forward(out),
            HeadKind::QLinear => out,
        };
        self.pending = Some(b_n);
        Ok(ForwardOutput { values: out.data, carry })
    }

    /// Accumulate parameter gradients for upstream gradients `d_values`
    /// (one per sample of the last forward) and return input gradients.
    pub fn backward(&mut self, d_values: &[f64]) -> Result<InputGrads> {
        let b_n = self.pending.take().ok_or_else(|| Error::State("network backward called before forward".into()))?;
        if d_values.len() != b_n {
            return Err(Error::Spec(format!("expected {b_n} upstream gradients, got {}", d_values.len())));
        }
        let mut g = Batch::dense(b_n, 1, d_values.to_vec());
        if self.spec.head == HeadKind::PolicyTanh {
            g = self.tanh.backward(&g)?;
        }
        let dz = self.head.backward(&mut self.params, &g)?;
        let width = self.spec.head_inputs();
        let f = self.spec.feature_len();
        let has_action = self.spec.has_action();
        let mut dg = Vec::with_capacity(b_n * f);
        let mut grads = InputGrads {
            prev_action: Vec::with_capacity(b_n),
            action: Vec::new(),
        };
        for b in 0..b_n {
            let row = &dz.data[b * width..][..width];
            dg.extend_from_slice(&row[..f]);
            grads.prev_action.push(row[f]);
            if has_action {
                grads.action.push(row[f + 1]);
            }
        }
        let dg = self.head_dropout.backward(&Batch::dense(b_n, f, dg))?;
        let n = self.spec.n;
        let channels = self.spec.sil_channels();
        let params = &mut self.params;
        let dx = match &mut self.sil {
            Sil::Cnn(sil) => {
                let c_out = self.spec.cnn.feature_maps;
                let pooled = Batch::new([b_n, c_out, f / c_out], dg.data);
                let mut d = sil.pool.backward(&pooled)?;
                for block in sil.blocks.iter_mut().rev() {
                    if let Some(dr) = &mut block.dropout {
                        d = dr.backward(&d)?;
                    }
                    d = block.act.backward(&d)?;
                    d = block.bn.backward(params, &d)?;
                    d = block.conv.backward(params, &d)?;
                }
                d
            }
            Sil::Lstm(sil) => {
                let h = self.spec.lstm.hidden;
                let mut d = Batch::zeros([b_n, n, h]);
                for b in 0..b_n {
                    d.data[(b * n + n - 1) * h..][..h].copy_from_slice(&dg.data[b * h..][..h]);
                }
                for i in (0..sil.layers.len()).rev() {
                    if i + 1 < sil.layers.len() {
                        d = sil.dropouts[i].backward(&d)?;
                    }
                    d = sil.layers[i].backward(params, &d)?;
                }
                d
            }
        };
        if self.spec.action_channel {
            let c = self.spec.input_channels;
            for (b, total) in grads.action.iter_mut().enumerate() {
                *total += match self.spec.sil_kind {
                    SilKind::Cnn => dx.data[(b * channels + c) * n..][..n].iter().sum::<f64>(),
                    SilKind::Lstm => (0..n).map(|t| dx.data[(b * n + t) * channels + c]).sum::<f64>(),
                };
            }
        }
        Ok(grads)
    }

    /// Eval-mode outputs without recording anything for backward.
    pub fn predict(&mut self, states: &[AgentState], actions: Option<&[f64]>, carry: Option<&LstmCarry>) -> Result<ForwardOutput> {
        let out = self.forward(states, actions, Mode::Eval, carry)?;
        self.pending = None;
        Ok(out)
    }
}
