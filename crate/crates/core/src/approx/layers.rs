//! Layers with explicit forward caches and backward passes.
//!
//! Activations are dense row-major batches. Convolutional tensors are
//! `[batch, channels, time]`; recurrent tensors are `[batch, time, features]`;
//! dense tensors are `[batch, features, 1]`.

use rand::Rng;

use super::params::{ParamId, ParameterSet};
use super::Mode;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub dims: [usize; 3],
    pub data: Vec<f64>,
}

impl Batch {
    pub fn new(dims: [usize; 3], data: Vec<f64>) -> Self {
        assert_eq!(dims.iter().product::<usize>(), data.len(), "batch data does not match dims");
        Self { dims, data }
    }

    pub fn zeros(dims: [usize; 3]) -> Self {
        Self::new(dims, vec![0.0; dims.iter().product()])
    }

    pub fn dense(batch: usize, features: usize, data: Vec<f64>) -> Self {
        Self::new([batch, features, 1], data)
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    /// Number of entries per sample.
    pub fn sample_len(&self) -> usize {
        self.dims[1] * self.dims[2]
    }

    pub fn sample(&self, b: usize) -> &[f64] {
        let n = self.sample_len();
        &self.data[b * n..(b + 1) * n]
    }

    fn check_dims(&self, expected: [usize; 3], what: &str) -> Result<()> {
        if self.dims != expected {
            return Err(Error::Spec(format!("{what}: got dims {:?}, expected {:?}", self.dims, expected)));
        }
        Ok(())
    }
}

fn missing_forward(layer: &str) -> Error {
    Error::State(format!("{layer}: backward called before forward"))
}

/// 1D convolution, stride 1, zero padding that preserves the length.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub weight: ParamId,
    pub bias: ParamId,
    input: Option<Batch>,
}

impl Conv1d {
    pub fn new(params: &mut ParameterSet, name: &str, in_channels: usize, out_channels: usize, kernel: usize, weight: Vec<f64>) -> Self {
        let weight = params.add(format!("{name}.weight"), &[out_channels, in_channels, kernel], true, weight);
        let bias = params.add(format!("{name}.bias"), &[out_channels], true, vec![0.0; out_channels]);
        Self {
            in_channels,
            out_channels,
            kernel,
            weight,
            bias,
            input: None,
        }
    }

    fn pad(&self) -> usize {
        self.kernel / 2
    }

    pub fn forward(&mut self, params: &ParameterSet, x: Batch) -> Result<Batch> {
        let [b_n, c_in, t_n] = x.dims;
        x.check_dims([b_n, self.in_channels, t_n], "conv1d input")?;
        let w = params.value(self.weight);
        let bias = params.value(self.bias);
        let (k_n, pad) = (self.kernel, self.pad() as isize);
        let mut out = Batch::zeros([b_n, self.out_channels, t_n]);
        for b in 0..b_n {
            for o in 0..self.out_channels {
                let row = &mut out.data[(b * self.out_channels + o) * t_n..][..t_n];
                row.iter_mut().for_each(|v| *v = bias[o]);
                for i in 0..c_in {
                    let xi = &x.data[(b * c_in + i) * t_n..][..t_n];
                    for k in 0..k_n {
                        let wk = w[(o * c_in + i) * k_n + k];
                        let shift = k as isize - pad;
                        let (lo, hi) = valid_range(t_n, shift);
                        for t in lo..hi {
                            row[t] += wk * xi[(t as isize + shift) as usize];
                        }
                    }
                }
            }
        }
        self.input = Some(x);
        Ok(out)
    }

    pub fn backward(&mut self, params: &mut ParameterSet, g: &Batch) -> Result<Batch> {
        let x = self.input.take().ok_or_else(|| missing_forward("conv1d"))?;
        let [b_n, c_in, t_n] = x.dims;
        g.check_dims([b_n, self.out_channels, t_n], "conv1d grad")?;
        let (k_n, pad) = (self.kernel, self.pad() as isize);
        let mut dx = Batch::zeros(x.dims);
        let w = params.value(self.weight).to_vec();
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; self.out_channels];
        for b in 0..b_n {
            for o in 0..self.out_channels {
                let go = &g.data[(b * self.out_channels + o) * t_n..][..t_n];
                db[o] += go.iter().sum::<f64>();
                for i in 0..c_in {
                    let xi = &x.data[(b * c_in + i) * t_n..][..t_n];
                    let dxi = &mut dx.data[(b * c_in + i) * t_n..][..t_n];
                    for k in 0..k_n {
                        let idx = (o * c_in + i) * k_n + k;
                        let shift = k as isize - pad;
                        let (lo, hi) = valid_range(t_n, shift);
                        let mut acc = 0.0;
                        for t in lo..hi {
                            let s = (t as isize + shift) as usize;
                            acc += go[t] * xi[s];
                            dxi[s] += go[t] * w[idx];
                        }
                        dw[idx] += acc;
                    }
                }
            }
        }
        add_into(&mut params.get_mut(self.weight).grad, &dw);
        add_into(&mut params.get_mut(self.bias).grad, &db);
        Ok(dx)
    }
}

/// Output positions `t` for which `t + shift` lies inside `0..len`.
fn valid_range(len: usize, shift: isize) -> (usize, usize) {
    let lo = (-shift).max(0) as usize;
    let hi = (len as isize - shift).clamp(0, len as isize) as usize;
    (lo.min(hi), hi)
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Batch normalization over `[batch, time]` per channel.
///
/// Train mode with more than one sample normalizes with batch statistics
/// and updates the running estimates; eval mode and single-sample train
/// steps use the running estimates.
#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    pub channels: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    dims: [usize; 3],
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    batch_stats: bool,
}

impl BatchNorm1d {
    pub const DEFAULT_EPS: f64 = 1e-8;
    pub const DEFAULT_MOMENTUM: f64 = 0.1;

    pub fn new(params: &mut ParameterSet, name: &str, channels: usize) -> Self {
        Self {
            channels,
            gamma: params.add(format!("{name}.gamma"), &[channels], true, vec![1.0; channels]),
            beta: params.add(format!("{name}.beta"), &[channels], true, vec![0.0; channels]),
            running_mean: params.add(format!("{name}.running_mean"), &[channels], false, vec![0.0; channels]),
            running_var: params.add(format!("{name}.running_var"), &[channels], false, vec![1.0; channels]),
            momentum: Self::DEFAULT_MOMENTUM,
            eps: Self::DEFAULT_EPS,
            cache: None,
        }
    }

    pub fn forward(&mut self, params: &mut ParameterSet, x: Batch, mode: Mode) -> Result<Batch> {
        let [b_n, c_n, t_n] = x.dims;
        x.check_dims([b_n, self.channels, t_n], "batchnorm input")?;
        let count = b_n * t_n;
        let batch_stats = mode == Mode::Train && b_n > 1;
        let mut mean = params.value(self.running_mean).to_vec();
        let mut var = params.value(self.running_var).to_vec();
        if batch_stats {
            for c in 0..c_n {
                let data = &x.data;
                let values = || (0..b_n).flat_map(move |b| data[(b * c_n + c) * t_n..][..t_n].iter());
                let m = values().sum::<f64>() / count as f64;
                let v = values().map(|v| (v - m) * (v - m)).sum::<f64>() / count as f64;
                mean[c] = m;
                var[c] = v;
            }
            let unbiased = count as f64 / (count as f64 - 1.0);
            let mom = self.momentum;
            let rm = &mut params.get_mut(self.running_mean).value;
            for c in 0..c_n {
                rm[c] = (1.0 - mom) * rm[c] + mom * mean[c];
            }
            let rv = &mut params.get_mut(self.running_var).value;
            for c in 0..c_n {
                rv[c] = (1.0 - mom) * rv[c] + mom * var[c] * unbiased;
            }
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let gamma = params.value(self.gamma);
        let beta = params.value(self.beta);
        let mut xhat = x.data;
        let mut out = vec![0.0; xhat.len()];
        for b in 0..b_n {
            for c in 0..c_n {
                let off = (b * c_n + c) * t_n;
                for t in off..off + t_n {
                    xhat[t] = (xhat[t] - mean[c]) * inv_std[c];
                    out[t] = gamma[c] * xhat[t] + beta[c];
                }
            }
        }
        self.cache = Some(BnCache {
            dims: x.dims,
            xhat,
            inv_std,
            batch_stats,
        });
        Ok(Batch::new(x.dims, out))
    }

    pub fn backward(&mut self, params: &mut ParameterSet, g: &Batch) -> Result<Batch> {
        let cache = self.cache.take().ok_or_else(|| missing_forward("batchnorm"))?;
        let [b_n, c_n, t_n] = cache.dims;
        g.check_dims(cache.dims, "batchnorm grad")?;
        let count = (b_n * t_n) as f64;
        let gamma = params.value(self.gamma).to_vec();
        let mut dgamma = vec![0.0; c_n];
        let mut dbeta = vec![0.0; c_n];
        for b in 0..b_n {
            for c in 0..c_n {
                let off = (b * c_n + c) * t_n;
                for t in off..off + t_n {
                    dgamma[c] += g.data[t] * cache.xhat[t];
                    dbeta[c] += g.data[t];
                }
            }
        }
        let mut dx = vec![0.0; g.data.len()];
        for c in 0..c_n {
            let scale = gamma[c] * cache.inv_std[c];
            for b in 0..b_n {
                let off = (b * c_n + c) * t_n;
                for t in off..off + t_n {
                    dx[t] = if cache.batch_stats {
                        // dxhat = g * gamma; sum(dxhat) = gamma * dbeta; sum(dxhat * xhat) = gamma * dgamma
                        scale * (g.data[t] - dbeta[c] / count - cache.xhat[t] * dgamma[c] / count)
                    } else {
                        scale * g.data[t]
                    };
                }
            }
        }
        add_into(&mut params.get_mut(self.gamma).grad, &dgamma);
        add_into(&mut params.get_mut(self.beta).grad, &dbeta);
        Ok(Batch::new(cache.dims, dx))
    }
}

#[derive(Debug, Clone)]
pub struct LeakyRelu {
    pub slope: f64,
    input: Option<Vec<f64>>,
}

impl LeakyRelu {
    pub fn new(slope: f64) -> Self {
        Self { slope, input: None }
    }

    pub fn forward(&mut self, x: Batch) -> Batch {
        let out = x.data.iter().map(|&v| if v > 0.0 { v } else { self.slope * v }).collect();
        let dims = x.dims;
        self.input = Some(x.data);
        Batch::new(dims, out)
    }

    pub fn backward(&mut self, g: &Batch) -> Result<Batch> {
        let x = self.input.take().ok_or_else(|| missing_forward("leaky relu"))?;
        let dx = x
            .iter()
            .zip(&g.data)
            .map(|(&v, &gv)| if v > 0.0 { gv } else { self.slope * gv })
            .collect();
        Ok(Batch::new(g.dims, dx))
    }
}

/// Max pooling along time; trailing positions that do not fill a window are dropped.
#[derive(Debug, Clone)]
pub struct MaxPool1d {
    pub kernel: usize,
    pub stride: usize,
    cache: Option<([usize; 3], Vec<usize>)>,
}

impl MaxPool1d {
    pub fn new(kernel: usize, stride: usize) -> Self {
        Self { kernel, stride, cache: None }
    }

    pub fn output_len(&self, len: usize) -> usize {
        if len < self.kernel {
            0
        } else {
            (len - self.kernel) / self.stride + 1
        }
    }

    pub fn forward(&mut self, x: Batch) -> Batch {
        let [b_n, c_n, t_n] = x.dims;
        let t_out = self.output_len(t_n);
        let mut out = Vec::with_capacity(b_n * c_n * t_out);
        let mut argmax = Vec::with_capacity(b_n * c_n * t_out);
        for row in 0..b_n * c_n {
            let xr = &x.data[row * t_n..][..t_n];
            for j in 0..t_out {
                let start = j * self.stride;
                let mut best = start;
                for t in start + 1..start + self.kernel {
                    if xr[t] > xr[best] {
                        best = t;
                    }
                }
                out.push(xr[best]);
                argmax.push(row * t_n + best);
            }
        }
        self.cache = Some((x.dims, argmax));
        Batch::new([b_n, c_n, t_out], out)
    }

    pub fn backward(&mut self, g: &Batch) -> Result<Batch> {
        let (dims, argmax) = self.cache.take().ok_or_else(|| missing_forward("max pool"))?;
        let mut dx = Batch::zeros(dims);
        for (&idx, &gv) in argmax.iter().zip(&g.data) {
            dx.data[idx] += gv;
        }
        Ok(dx)
    }
}

/// Inverted dropout: kept units are scaled by `1 / (1 - rate)` in train mode.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub rate: f64,
    mask: Option<Vec<f64>>,
}

impl Dropout {
    pub fn new(rate: f64) -> Self {
        Self { rate, mask: None }
    }

    pub fn forward<R: Rng + ?Sized>(&mut self, x: Batch, mode: Mode, rng: &mut R) -> Batch {
        if mode == Mode::Eval || self.rate <= 0.0 {
            self.mask = Some(Vec::new());
            return x;
        }
        let keep = 1.0 - self.rate;
        let mask: Vec<f64> = (0..x.data.len())
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let out = x.data.iter().zip(&mask).map(|(v, m)| v * m).collect();
        self.mask = Some(mask);
        Batch::new(x.dims, out)
    }

    /// Forward with a caller-supplied mask (entries 0 or `1 / (1 - rate)`).
    pub fn forward_with_mask(&mut self, x: Batch, mask: Vec<f64>) -> Batch {
        assert_eq!(mask.len(), x.data.len());
        let out = x.data.iter().zip(&mask).map(|(v, m)| v * m).collect();
        self.mask = Some(mask);
        Batch::new(x.dims, out)
    }

    pub fn backward(&mut self, g: &Batch) -> Result<Batch> {
        let mask = self.mask.take().ok_or_else(|| missing_forward("dropout"))?;
        if mask.is_empty() {
            return Ok(g.clone());
        }
        Ok(Batch::new(g.dims, g.data.iter().zip(&mask).map(|(v, m)| v * m).collect()))
    }
}

/// Dense layer `[batch, in] -> [batch, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    input: Option<Batch>,
}

impl Linear {
    pub fn new(params: &mut ParameterSet, name: &str, inputs: usize, outputs: usize, with_bias: bool, weight: Vec<f64>) -> Self {
        let weight = params.add(format!("{name}.weight"), &[outputs, inputs], true, weight);
        let bias = with_bias.then(|| params.add(format!("{name}.bias"), &[outputs], true, vec![0.0; outputs]));
        Self {
            inputs,
            outputs,
            weight,
            bias,
            input: None,
        }
    }

    pub fn forward(&mut self, params: &ParameterSet, x: Batch) -> Result<Batch> {
        let b_n = x.batch();
        if x.sample_len() != self.inputs {
            return Err(Error::Spec(format!("linear input has {} features, expected {}", x.sample_len(), self.inputs)));
        }
        let w = params.value(self.weight);
        let mut out = vec![0.0; b_n * self.outputs];
        for b in 0..b_n {
            let xb = x.sample(b);
            for o in 0..self.outputs {
                let wo = &w[o * self.inputs..][..self.inputs];
                let mut acc = self.bias.map_or(0.0, |id| params.value(id)[o]);
                for (wv, xv) in wo.iter().zip(xb) {
                    acc += wv * xv;
                }
                out[b * self.outputs + o] = acc;
            }
        }
        self.input = Some(Batch::dense(b_n, self.inputs, x.data));
        Ok(Batch::dense(b_n, self.outputs, out))
    }

    pub fn backward(&mut self, params: &mut ParameterSet, g: &Batch) -> Result<Batch> {
        let x = self.input.take().ok_or_else(|| missing_forward("linear"))?;
        let b_n = x.batch();
        g.check_dims([b_n, self.outputs, 1], "linear grad")?;
        let w = params.value(self.weight).to_vec();
        let mut dw = vec![0.0; w.len()];
        let mut dx = vec![0.0; b_n * self.inputs];
        let mut db = vec![0.0; self.outputs];
        for b in 0..b_n {
            let xb = x.sample(b);
            let dxb = &mut dx[b * self.inputs..][..self.inputs];
            for o in 0..self.outputs {
                let go = g.data[b * self.outputs + o];
                db[o] += go;
                let wo = &w[o * self.inputs..][..self.inputs];
                let dwo = &mut dw[o * self.inputs..][..self.inputs];
                for i in 0..self.inputs {
                    dwo[i] += go * xb[i];
                    dxb[i] += go * wo[i];
                }
            }
        }
        add_into(&mut params.get_mut(self.weight).grad, &dw);
        if let Some(id) = self.bias {
            add_into(&mut params.get_mut(id).grad, &db);
        }
        Ok(Batch::dense(b_n, self.inputs, dx))
    }
}

#[derive(Debug, Clone, Default)]
pub struct Tanh {
    output: Option<Vec<f64>>,
}

impl Tanh {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, x: Batch) -> Batch {
        let out: Vec<f64> = x.data.iter().map(|v| v.tanh()).collect();
        self.output = Some(out.clone());
        Batch::new(x.dims, out)
    }

    pub fn backward(&mut self, g: &Batch) -> Result<Batch> {
        let y = self.output.take().ok_or_else(|| missing_forward("tanh"))?;
        Ok(Batch::new(g.dims, y.iter().zip(&g.data).map(|(y, g)| g * (1.0 - y * y)).collect()))
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Hidden and cell state of one LSTM layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// Single LSTM layer over `[batch, time, inputs]`, gate order (i, f, g, o).
///
/// All samples of a batch start from the same initial state, which is
/// treated as a constant (no gradient flows into it).
#[derive(Debug, Clone)]
pub struct Lstm {
    pub inputs: usize,
    pub hidden: usize,
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    cache: Option<LstmCache>,
}

#[derive(Debug, Clone)]
struct LstmCache {
    dims: [usize; 3],
    x: Vec<f64>,
    /// Post-activation gates per (b, t): 4H.
    gates: Vec<f64>,
    /// Cell state per (b, t), plus the initial state.
    c: Vec<f64>,
    h_prev: Vec<f64>,
    c_init: Vec<f64>,
}

impl Lstm {
    pub fn new(params: &mut ParameterSet, name: &str, inputs: usize, hidden: usize, w_ih: Vec<f64>, w_hh: Vec<f64>) -> Self {
        Self {
            inputs,
            hidden,
            w_ih: params.add(format!("{name}.w_ih"), &[4 * hidden, inputs], true, w_ih),
            w_hh: params.add(format!("{name}.w_hh"), &[4 * hidden, hidden], true, w_hh),
            bias: params.add(format!("{name}.bias"), &[4 * hidden], true, vec![0.0; 4 * hidden]),
            cache: None,
        }
    }

    /// Returns the hidden sequence `[batch, time, hidden]` and the final
    /// state of each sample.
    pub fn forward(&mut self, params: &ParameterSet, x: Batch, init: Option<&LstmState>) -> Result<(Batch, Vec<LstmState>)> {
        let [b_n, t_n, f_n] = x.dims;
        x.check_dims([b_n, t_n, self.inputs], "lstm input")?;
        let h_n = self.hidden;
        let init = init.cloned().unwrap_or_else(|| LstmState::zeros(h_n));
        if init.h.len() != h_n || init.c.len() != h_n {
            return Err(Error::Spec(format!("lstm carry has {} units, expected {h_n}", init.h.len())));
        }
        let w_ih = params.value(self.w_ih);
        let w_hh = params.value(self.w_hh);
        let bias = params.value(self.bias);
        let mut out = vec![0.0; b_n * t_n * h_n];
        let mut gates = vec![0.0; b_n * t_n * 4 * h_n];
        let mut cells = vec![0.0; b_n * t_n * h_n];
        let mut h_prev_all = vec![0.0; b_n * t_n * h_n];
        let mut finals = Vec::with_capacity(b_n);
        let mut z = vec![0.0; 4 * h_n];
        for b in 0..b_n {
            let mut h = init.h.clone();
            let mut c = init.c.clone();
            for t in 0..t_n {
                let xt = &x.data[(b * t_n + t) * f_n..][..f_n];
                for (r, zr) in z.iter_mut().enumerate() {
                    let mut acc = bias[r];
                    for (w, v) in w_ih[r * f_n..][..f_n].iter().zip(xt) {
                        acc += w * v;
                    }
                    for (w, v) in w_hh[r * h_n..][..h_n].iter().zip(&h) {
                        acc += w * v;
                    }
                    *zr = acc;
                }
                let bt = b * t_n + t;
                h_prev_all[bt * h_n..][..h_n].copy_from_slice(&h);
                let gt = &mut gates[bt * 4 * h_n..][..4 * h_n];
                for j in 0..h_n {
                    let i_g = sigmoid(z[j]);
                    let f_g = sigmoid(z[h_n + j]);
                    let g_g = z[2 * h_n + j].tanh();
                    let o_g = sigmoid(z[3 * h_n + j]);
                    gt[j] = i_g;
                    gt[h_n + j] = f_g;
                    gt[2 * h_n + j] = g_g;
                    gt[3 * h_n + j] = o_g;
                    c[j] = f_g * c[j] + i_g * g_g;
                    h[j] = o_g * c[j].tanh();
                }
                cells[bt * h_n..][..h_n].copy_from_slice(&c);
                out[bt * h_n..][..h_n].copy_from_slice(&h);
            }
            finals.push(LstmState { h, c });
        }
        self.cache = Some(LstmCache {
            dims: x.dims,
            x: x.data,
            gates,
            c: cells,
            h_prev: h_prev_all,
            c_init: init.c,
        });
        Ok((Batch::new([b_n, t_n, h_n], out), finals))
    }

    /// Backpropagation through time; `g` is the gradient for every output step.
    pub fn backward(&mut self, params: &mut ParameterSet, g: &Batch) -> Result<Batch> {
        let cache = self.cache.take().ok_or_else(|| missing_forward("lstm"))?;
        let [b_n, t_n, f_n] = cache.dims;
        let h_n = self.hidden;
        g.check_dims([b_n, t_n, h_n], "lstm grad")?;
        let w_ih = params.value(self.w_ih).to_vec();
        let w_hh = params.value(self.w_hh).to_vec();
        let mut dw_ih = vec![0.0; w_ih.len()];
        let mut dw_hh = vec![0.0; w_hh.len()];
        let mut db = vec![0.0; 4 * h_n];
        let mut dx = vec![0.0; cache.x.len()];
        let mut dz = vec![0.0; 4 * h_n];
        for b in 0..b_n {
            let mut dh_next = vec![0.0; h_n];
            let mut dc_next = vec![0.0; h_n];
            for t in (0..t_n).rev() {
                let bt = b * t_n + t;
                let gt = &cache.gates[bt * 4 * h_n..][..4 * h_n];
                let c_t = &cache.c[bt * h_n..][..h_n];
                let c_prev = if t == 0 { &cache.c_init[..] } else { &cache.c[(bt - 1) * h_n..][..h_n] };
                for j in 0..h_n {
                    let (i_g, f_g, g_g, o_g) = (gt[j], gt[h_n + j], gt[2 * h_n + j], gt[3 * h_n + j]);
                    let tc = c_t[j].tanh();
                    let dh = g.data[bt * h_n + j] + dh_next[j];
                    let dc = dh * o_g * (1.0 - tc * tc) + dc_next[j];
                    dz[j] = dc * g_g * i_g * (1.0 - i_g);
                    dz[h_n + j] = dc * c_prev[j] * f_g * (1.0 - f_g);
                    dz[2 * h_n + j] = dc * i_g * (1.0 - g_g * g_g);
                    dz[3 * h_n + j] = dh * tc * o_g * (1.0 - o_g);
                    dc_next[j] = dc * f_g;
                }
                let xt = &cache.x[bt * f_n..][..f_n];
                let h_prev = &cache.h_prev[bt * h_n..][..h_n];
                let dxt = &mut dx[bt * f_n..][..f_n];
                dh_next.iter_mut().for_each(|v| *v = 0.0);
                for (r, &dzr) in dz.iter().enumerate() {
                    if dzr == 0.0 {
                        continue;
                    }
                    db[r] += dzr;
                    let wi = &w_ih[r * f_n..][..f_n];
                    let dwi = &mut dw_ih[r * f_n..][..f_n];
                    for k in 0..f_n {
                        dwi[k] += dzr * xt[k];
                        dxt[k] += dzr * wi[k];
                    }
                    let wh = &w_hh[r * h_n..][..h_n];
                    let dwh = &mut dw_hh[r * h_n..][..h_n];
                    for k in 0..h_n {
                        dwh[k] += dzr * h_prev[k];
                        dh_next[k] += dzr * wh[k];
                    }
                }
            }
        }
        add_into(&mut params.get_mut(self.w_ih).grad, &dw_ih);
        add_into(&mut params.get_mut(self.w_hh).grad, &dw_hh);
        add_into(&mut params.get_mut(self.bias).grad, &db);
        Ok(Batch::new(cache.dims, dx))
    }
}
