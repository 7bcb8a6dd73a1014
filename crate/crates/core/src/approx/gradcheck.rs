//! Central-difference gradient checks used by the test suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{Batch, BatchNorm1d, Conv1d, Dropout, LeakyRelu, Linear, Lstm, LstmState, MaxPool1d, Tanh};
use super::network::Network;
use super::params::{ParamId, ParameterSet};
use super::Mode;
use crate::env::AgentState;
use crate::Result;

/// Denominator floor for the relative error, well above central-difference
/// roundoff (about machine epsilon times the loss over h).
pub const GRAD_CHECK_FLOOR: f64 = 1e-4;

/// Relative error `|a - n| / max(|a| + |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(floor)
}

/// Worst relative error between analytic and central-difference gradients
/// of `sum(weights · network outputs)` over up to `probes` random
/// coordinates of the trainable parameters, plus every action input.
///
/// Dropout masks are replayed from `dropout_seed` on every evaluation so the
/// loss is a deterministic function of the parameters.
pub struct NetworkCheck<'a> {
    pub states: &'a [AgentState],
    pub actions: Option<&'a [f64]>,
    pub weights: &'a [f64],
    pub mode: Mode,
    pub dropout_seed: u64,
    pub h: f64,
}

impl NetworkCheck<'_> {
    fn loss(&self, net: &mut Network, actions: Option<&[f64]>) -> Result<f64> {
        net.reseed_dropout(self.dropout_seed);
        let before = net.params().clone();
        let out = net.forward(self.states, actions, self.mode, net.initial_carry().as_ref())?;
        // Discard running-statistic updates so repeated evaluations agree.
        *net.params_mut() = before;
        let _ = net.backward(&vec![0.0; out.values.len()]);
        Ok(out.values.iter().zip(self.weights).map(|(v, w)| v * w).sum())
    }

    pub fn run(&self, net: &mut Network, probes: usize, seed: u64) -> Result<f64> {
        net.params_mut().zero_grad();
        net.reseed_dropout(self.dropout_seed);
        let before = net.params().clone();
        net.forward(self.states, self.actions, self.mode, net.initial_carry().as_ref())?;
        let input_grads = net.backward(self.weights)?;
        let analytic = net.params().clone();
        *net.params_mut() = before;
        net.params_mut().zero_grad();

        let mut coords = Vec::new();
        for (pi, p) in analytic.iter().enumerate() {
            if p.trainable {
                coords.extend((0..p.len()).map(|i| (pi, i)));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let picks: Vec<(usize, usize)> = if coords.len() <= probes {
            coords
        } else {
            (0..probes).map(|_| coords[rng.random_range(0..coords.len())]).collect()
        };
        let mut worst = 0.0f64;
        for (pi, i) in picks {
            let orig = net.params().iter().nth(pi).expect("index").value[i];
            let set = |net: &mut Network, v: f64| net.params_mut().iter_mut().nth(pi).expect("index").value[i] = v;
            set(net, orig + self.h);
            let up = self.loss(net, self.actions)?;
            set(net, orig - self.h);
            let down = self.loss(net, self.actions)?;
            set(net, orig);
            let numeric = (up - down) / (2.0 * self.h);
            let a = analytic.iter().nth(pi).expect("index").grad[i];
            worst = worst.max(relative_error(a, numeric, GRAD_CHECK_FLOOR));
        }
        if let Some(actions) = self.actions {
            for b in 0..actions.len() {
                let mut moved = actions.to_vec();
                moved[b] = actions[b] + self.h;
                let up = self.loss(net, Some(&moved))?;
                moved[b] = actions[b] - self.h;
                let down = self.loss(net, Some(&moved))?;
                let numeric = (up - down) / (2.0 * self.h);
                worst = worst.max(relative_error(input_grads.action[b], numeric, GRAD_CHECK_FLOOR));
            }
        }
        Ok(worst)
    }
}

/// A layer under test with parameters living in a [`ParameterSet`].
pub trait CheckedLayer {
    fn forward(&mut self, params: &mut ParameterSet, x: Batch) -> Result<Batch>;
    fn backward(&mut self, params: &mut ParameterSet, g: &Batch) -> Result<Batch>;
}

/// Worst relative error over every input and trainable parameter coordinate
/// of `sum(weights · layer(x))`.
pub fn check_layer<L: CheckedLayer>(layer: &mut L, params: &mut ParameterSet, x: &Batch, weights: &[f64], h: f64) -> Result<f64> {
    let loss = |layer: &mut L, params: &mut ParameterSet, x: &Batch| -> Result<f64> {
        let saved = params.clone();
        let out = layer.forward(params, x.clone())?;
        layer.backward(params, &Batch::new(out.dims, vec![0.0; out.data.len()]))?;
        *params = saved;
        Ok(out.data.iter().zip(weights).map(|(v, w)| v * w).sum())
    };
    params.zero_grad();
    let saved = params.clone();
    let out = layer.forward(params, x.clone())?;
    assert_eq!(out.data.len(), weights.len(), "one weight per output");
    let dx = layer.backward(params, &Batch::new(out.dims, weights.to_vec()))?;
    let analytic = params.clone();
    *params = saved;

    let mut worst = 0.0f64;
    let mut xp = x.clone();
    for i in 0..x.data.len() {
        xp.data[i] = x.data[i] + h;
        let up = loss(layer, params, &xp)?;
        xp.data[i] = x.data[i] - h;
        let down = loss(layer, params, &xp)?;
        xp.data[i] = x.data[i];
        worst = worst.max(relative_error(dx.data[i], (up - down) / (2.0 * h), GRAD_CHECK_FLOOR));
    }
    for pi in 0..params.len() {
        let id = ParamId(pi);
        if !params.get(id).trainable {
            continue;
        }
        for i in 0..params.get(id).len() {
            let orig = params.get(id).value[i];
            params.get_mut(id).value[i] = orig + h;
            let up = loss(layer, params, x)?;
            params.get_mut(id).value[i] = orig - h;
            let down = loss(layer, params, x)?;
            params.get_mut(id).value[i] = orig;
            worst = worst.max(relative_error(analytic.get(id).grad[i], (up - down) / (2.0 * h), GRAD_CHECK_FLOOR));
        }
    }
    Ok(worst)
}

impl CheckedLayer for Conv1d {
    fn forward(&mut self, params: &mut ParameterSet, x: Batch) -> Result<Batch> {
        Conv1d::forward(self, params, x)
    }
    fn backward(&mut self, params: &mut ParameterSet, g: &Batch) -> Result<Batch> {
        Conv1d::backward(self, params, g)
    }
}

impl CheckedLayer for Linear {
    fn forward(&mut self, params: &mut ParameterSet, x: Batch) -> Result<Batch> {
        Linear::forward(self, params, x)
    }
    fn backward(&mut self, params: &mut ParameterSet, g: &Batch) -> Result<Batch> {
        Linear::backward(self, params, g)
    }
}

impl CheckedLayer for LeakyRelu {
    fn forward(&mut self, _: &mut ParameterSet, x: Batch) -> Result<Batch> {
        Ok(LeakyRelu::forward(self, x))
    }
    fn backward(&mut self, _: &mut ParameterSet, g: &Batch) -> Result<Batch> {
        LeakyRelu::backward(self, g)
    }
}

impl CheckedLayer for MaxPool1d {
    fn forward(&mut self, _: &mut ParameterSet, x: Batch) -> Result<Batch> {
        Ok(MaxPool1d::forward(self, x))
    }
    fn backward(&mut self, _: &mut ParameterSet, g: &Batch) -> Result<Batch> {
        MaxPool1d::backward(self, g)
    }
}

impl CheckedLayer for Tanh {
    fn forward(&mut self, _: &mut ParameterSet, x: Batch) -> Result<Batch> {
        Ok(Tanh::forward(self, x))
    }
    fn backward(&mut self, _: &mut ParameterSet, g: &Batch) -> Result<Batch> {
        Tanh::backward(self, g)
    }
}

/// Batch norm in a fixed mode.
pub struct BatchNormAt(pub BatchNorm1d, pub Mode);

impl CheckedLayer for BatchNormAt {
    fn forward(&mut self, params: &mut ParameterSet, x: Batch) -> Result<Batch> {
        self.0.forward(params, x, self.1)
    }
    fn backward(&mut self, params: &mut ParameterSet, g: &Batch) -> Result<Batch> {
        self.0.backward(params, g)
    }
}

/// Dropout with a fixed mask; an empty mask means eval mode.
pub struct DropoutWithMask(pub Dropout, pub Vec<f64>);

impl CheckedLayer for DropoutWithMask {
    fn forward(&mut self, _: &mut ParameterSet, x: Batch) -> Result<Batch> {
        if self.1.is_empty() {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            Ok(self.0.forward(x, Mode::Eval, &mut rng))
        } else {
            Ok(self.0.forward_with_mask(x, self.1.clone()))
        }
    }
    fn backward(&mut self, _: &mut ParameterSet, g: &Batch) -> Result<Batch> {
        self.0.backward(g)
    }
}

/// LSTM from a fixed initial state.
pub struct LstmFrom(pub Lstm, pub Option<LstmState>);

impl CheckedLayer for LstmFrom {
    fn forward(&mut self, params: &mut ParameterSet, x: Batch) -> Result<Batch> {
        Ok(self.0.forward(params, x, self.1.as_ref())?.0)
    }
    fn backward(&mut self, params: &mut ParameterSet, g: &Batch) -> Result<Batch> {
        self.0.backward(params, g)
    }
}
