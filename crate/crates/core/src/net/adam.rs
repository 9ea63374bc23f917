use super::params::{Gradients, QNetParams, Weights};
use super::{NetArch, Scalar};

/// Adam with bias correction. Moment buffers mirror the weight tree.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Weights<T>,
    v: Weights<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(arch: &NetArch, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Weights::zeros(arch),
            v: Weights::zeros(arch),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut QNetParams<T>, grads: &Gradients<T>) {
        self.t += 1;
        let t = self.t as i32;
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let one = T::ONE;
        let c1 = T::from_f64(1.0 - self.beta1.powi(t));
        let c2 = T::from_f64(1.0 - self.beta2.powi(t));
        let lr = T::from_f64(self.lr);
        let eps = T::from_f64(self.eps);
        let ws = params.weights_mut().tensors_mut();
        let gs = grads.tensors();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((w, g), m), v) in ws.into_iter().zip(gs).zip(ms).zip(vs) {
            for i in 0..w.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                w[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::NetArch;

    #[test]
    fn first_step_moves_each_weight_by_lr_against_the_gradient_sign() {
        let arch = NetArch {
            input_size: 16,
            conv_channels: [2, 2, 2, 2],
            proj_channels: 0,
            fc_width: 4,
            ..NetArch::default()
        };
        let mut p = QNetParams::<f64>::zeros(&arch).unwrap();
        let mut g = Weights::<f64>::zeros(&arch);
        g.out.bias = vec![2.0, -0.5, 0.0, 1e-3, -7.0];
        let mut opt = Adam::new(&arch, 0.01);
        opt.step(&mut p, &g);
        let b = &p.weights().out.bias;
        assert!((b[0] + 0.01).abs() < 1e-8);
        assert!((b[1] - 0.01).abs() < 1e-8);
        assert_eq!(b[2], 0.0);
        assert!((b[3] + 0.01).abs() < 1e-7);
        assert!((b[4] - 0.01).abs() < 1e-8);
        assert_eq!(opt.steps_taken(), 1);
    }
}
