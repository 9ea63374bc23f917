use super::forward::{qnet_backward, qnet_forward};
use super::params::QNetParams;
use super::Mode;
use crate::env::StateSeq;
use crate::error::Result;

/// A scalar loss over a flat parameter vector with an analytic gradient.
pub trait Differentiable {
    fn parameters(&self) -> Vec<f64>;
    fn set_parameters(&mut self, p: &[f64]);
    fn loss(&self) -> f64;
    fn gradient(&self) -> Vec<f64>;
}

/// Largest `|a - n| / max(|a|, |n|, 1e-8)` over all parameters, where `n` is
/// the central difference `(L(p + h) - L(p - h)) / 2h`. The model's
/// parameters are restored on return.
pub fn gradient_check_model<M: Differentiable + ?Sized>(model: &mut M, h: f64) -> f64 {
    let base = model.parameters();
    let analytic = model.gradient();
    let mut probe = base.clone();
    let mut worst = 0.0f64;
    for i in 0..base.len() {
        probe[i] = base[i] + h;
        model.set_parameters(&probe);
        let up = model.loss();
        probe[i] = base[i] - h;
        model.set_parameters(&probe);
        let down = model.loss();
        probe[i] = base[i];
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    model.set_parameters(&base);
    worst
}

/// The Q-network under `L = 0.5 * |q|^2` on a fixed Train-mode batch.
pub struct QNetProbe {
    pub params: QNetParams<f64>,
    pub states: Vec<StateSeq>,
}

impl QNetProbe {
    fn refs(&self) -> Vec<&StateSeq> {
        self.states.iter().collect()
    }
}

impl Differentiable for QNetProbe {
    fn parameters(&self) -> Vec<f64> {
        self.params.weights().flatten()
    }

    fn set_parameters(&mut self, p: &[f64]) {
        self.params
            .weights_mut()
            .unflatten_from(p)
            .expect("parameter vector from this model");
    }

    fn loss(&self) -> f64 {
        let out =
            qnet_forward(&self.params, &self.refs(), Mode::Train).expect("probe batch is valid");
        0.5 * out.q.iter().map(|q| q * q).sum::<f64>()
    }

    fn gradient(&self) -> Vec<f64> {
        let out =
            qnet_forward(&self.params, &self.refs(), Mode::Train).expect("probe batch is valid");
        let cache = out.cache.expect("train mode caches");
        qnet_backward(&self.params, &cache, &out.q)
            .expect("fresh cache")
            .flatten()
    }
}

/// Finite-difference check of [`qnet_backward`] on `states` (64-bit).
pub fn gradient_check(params: &QNetParams<f64>, states: &[StateSeq], epsilon: f64) -> Result<f64> {
    let refs: Vec<&StateSeq> = states.iter().collect();
    qnet_forward(params, &refs, Mode::Train)?;
    let mut probe = QNetProbe {
        params: params.clone(),
        states: states.to_vec(),
    };
    Ok(gradient_check_model(&mut probe, epsilon))
}

/// `y = W x + b` with `L = 0.5 * |y - t|^2`, summed over a few fixed inputs.
#[derive(Debug, Clone)]
pub struct LinearProbe {
    pub n_in: usize,
    pub n_out: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl LinearProbe {
    fn outputs(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_out)
            .map(|o| {
                self.bias[o]
                    + (0..self.n_in)
                        .map(|i| self.weight[o * self.n_in + i] * x[i])
                        .sum::<f64>()
            })
            .collect()
    }
}

impl Differentiable for LinearProbe {
    fn parameters(&self) -> Vec<f64> {
        [&self.weight[..], &self.bias[..]].concat()
    }

    fn set_parameters(&mut self, p: &[f64]) {
        let (w, b) = p.split_at(self.weight.len());
        self.weight.copy_from_slice(w);
        self.bias.copy_from_slice(b);
    }

    fn loss(&self) -> f64 {
        self.inputs
            .iter()
            .zip(&self.targets)
            .map(|(x, t)| {
                let y = self.outputs(x);
                0.5 * y.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            })
            .sum()
    }

    fn gradient(&self) -> Vec<f64> {
        let mut gw = vec![0.0; self.weight.len()];
        let mut gb = vec![0.0; self.bias.len()];
        for (x, t) in self.inputs.iter().zip(&self.targets) {
            let y = self.outputs(x);
            for o in 0..self.n_out {
                let d = y[o] - t[o];
                gb[o] += d;
                for i in 0..self.n_in {
                    gw[o * self.n_in + i] += d * x[i];
                }
            }
        }
        [gw, gb].concat()
    }
}
