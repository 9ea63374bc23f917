use rand::{Rng, RngCore};

use super::{NetArch, Scalar};
use crate::error::{Error, Result};

/// One conv -> batch-norm stage. The convolution has no bias: the following
/// batch-norm subtracts the per-channel mean, so a bias would be inert.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvStage<T> {
    /// `out x in x k x k`.
    pub weight: Vec<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

/// Fully connected layer; `weight` is `n_out x n_in` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub n_in: usize,
    pub n_out: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            weight: vec![T::ZERO; n_in * n_out],
            bias: vec![T::ZERO; n_out],
        }
    }
}

/// Every learnable tensor of the Q-network. Also used as the gradient tree.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights<T> {
    pub stages: Vec<ConvStage<T>>,
    /// 1x1 projection, stored as a dense `proj x c4` map applied per pixel.
    pub proj: Option<Dense<T>>,
    /// `(history * (vocab - 1)) x feature_len`; row `slot * 5 + code`. The
    /// null code has no row and contributes zero.
    pub embed: Vec<T>,
    pub fc1: Dense<T>,
    pub fc2: Dense<T>,
    pub out: Dense<T>,
}

pub type Gradients<T> = Weights<T>;

impl<T: Scalar> Weights<T> {
    pub fn zeros(arch: &NetArch) -> Self {
        let k2 = arch.kernel_size * arch.kernel_size;
        let stages = (0..4)
            .map(|s| {
                let c = arch.conv_channels[s];
                ConvStage {
                    weight: vec![T::ZERO; c * arch.stage_in_channels(s) * k2],
                    gamma: vec![T::ZERO; c],
                    beta: vec![T::ZERO; c],
                }
            })
            .collect();
        let proj = (arch.proj_channels > 0)
            .then(|| Dense::zeros(arch.conv_channels[3], arch.proj_channels));
        let v = arch.feature_len();
        Self {
            stages,
            proj,
            embed: vec![T::ZERO; arch.embed_rows() * v],
            fc1: Dense::zeros(2 * v, arch.fc_width),
            fc2: Dense::zeros(arch.fc_width, arch.fc_width),
            out: Dense::zeros(arch.fc_width, arch.num_outputs),
        }
    }

    /// Tensor names in a fixed order shared by checkpoints and optimizers.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for s in 0..self.stages.len() {
            for part in ["weight", "gamma", "beta"] {
                names.push(format!("conv{}.{part}", s + 1));
            }
        }
        if self.proj.is_some() {
            names.push("proj.weight".into());
            names.push("proj.bias".into());
        }
        names.push("embed".into());
        for layer in ["fc1", "fc2", "out"] {
            names.push(format!("{layer}.weight"));
            names.push(format!("{layer}.bias"));
        }
        names
    }

    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for st in &self.stages {
            out.extend([&st.weight[..], &st.gamma[..], &st.beta[..]]);
        }
        if let Some(p) = &self.proj {
            out.extend([&p.weight[..], &p.bias[..]]);
        }
        out.push(&self.embed);
        for d in [&self.fc1, &self.fc2, &self.out] {
            out.extend([&d.weight[..], &d.bias[..]]);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for st in &mut self.stages {
            out.push(&mut st.weight);
            out.push(&mut st.gamma);
            out.push(&mut st.beta);
        }
        if let Some(p) = &mut self.proj {
            out.push(&mut p.weight);
            out.push(&mut p.bias);
        }
        out.push(&mut self.embed);
        for d in [&mut self.fc1, &mut self.fc2, &mut self.out] {
            out.push(&mut d.weight);
            out.push(&mut d.bias);
        }
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// All scalars concatenated in [`tensor_names`](Self::tensor_names) order.
    pub fn flatten(&self) -> Vec<T> {
        self.tensors().concat()
    }

    pub fn unflatten_from(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::Shape {
                layer: "weights".into(),
                detail: format!(
                    "expected {} scalars, got {}",
                    self.num_scalars(),
                    flat.len()
                ),
            });
        }
        let mut at = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[at..at + t.len()]);
            at += t.len();
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn cast<U: Scalar>(&self) -> Weights<U> {
        let conv = |v: &Vec<T>| {
            v.iter()
                .map(|x| U::from_f64(x.to_f64()))
                .collect::<Vec<U>>()
        };
        let dense = |d: &Dense<T>| Dense {
            n_in: d.n_in,
            n_out: d.n_out,
            weight: conv(&d.weight),
            bias: conv(&d.bias),
        };
        Weights {
            stages: self
                .stages
                .iter()
                .map(|s| ConvStage {
                    weight: conv(&s.weight),
                    gamma: conv(&s.gamma),
                    beta: conv(&s.beta),
                })
                .collect(),
            proj: self.proj.as_ref().map(dense),
            embed: conv(&self.embed),
            fc1: dense(&self.fc1),
            fc2: dense(&self.fc2),
            out: dense(&self.out),
        }
    }
}

/// Batch-norm running statistics, one pair of vectors per conv stage.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats<T> {
    pub mean: Vec<Vec<T>>,
    pub var: Vec<Vec<T>>,
}

impl<T: Scalar> BnStats<T> {
    pub fn fresh(arch: &NetArch) -> Self {
        Self {
            mean: arch
                .conv_channels
                .iter()
                .map(|&c| vec![T::ZERO; c])
                .collect(),
            var: arch
                .conv_channels
                .iter()
                .map(|&c| vec![T::ONE; c])
                .collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> BnStats<U> {
        let conv = |vs: &Vec<Vec<T>>| {
            vs.iter()
                .map(|v| v.iter().map(|x| U::from_f64(x.to_f64())).collect())
                .collect()
        };
        BnStats {
            mean: conv(&self.mean),
            var: conv(&self.var),
        }
    }
}

/// Network parameters plus batch-norm running statistics.
///
/// `version` changes whenever the learnable weights are handed out mutably,
/// so activations cached by an earlier forward can be recognised as stale.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetParams<T> {
    arch: NetArch,
    weights: Weights<T>,
    pub bn: BnStats<T>,
    version: u64,
}

impl<T: Scalar> QNetParams<T> {
    pub fn from_parts(arch: NetArch, weights: Weights<T>, bn: BnStats<T>) -> Result<Self> {
        arch.validate()?;
        let expect = Weights::<T>::zeros(&arch);
        for ((name, a), b) in expect
            .tensor_names()
            .iter()
            .zip(expect.tensors())
            .zip(weights.tensors())
        {
            if a.len() != b.len() {
                return Err(Error::Shape {
                    layer: name.clone(),
                    detail: format!("expected {} scalars, got {}", a.len(), b.len()),
                });
            }
        }
        if expect.tensors().len() != weights.tensors().len() {
            return Err(Error::Shape {
                layer: "weights".into(),
                detail: "tensor list does not match the architecture".into(),
            });
        }
        let fresh = BnStats::<T>::fresh(&arch);
        let bn_ok = bn.mean.len() == 4
            && bn.var.len() == 4
            && (0..4).all(|s| {
                bn.mean[s].len() == fresh.mean[s].len() && bn.var[s].len() == fresh.var[s].len()
            });
        if !bn_ok {
            return Err(Error::Shape {
                layer: "bn".into(),
                detail: "running statistics do not match conv_channels".into(),
            });
        }
        Ok(Self {
            arch,
            weights,
            bn,
            version: 0,
        })
    }

    pub fn zeros(arch: &NetArch) -> Result<Self> {
        Self::from_parts(arch.clone(), Weights::zeros(arch), BnStats::fresh(arch))
    }

    pub fn arch(&self) -> &NetArch {
        &self.arch
    }

    pub fn weights(&self) -> &Weights<T> {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Weights<T> {
        self.version = self.version.wrapping_add(1);
        &mut self.weights
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Learnable scalars; equals `count_params(arch)`.
    pub fn num_params(&self) -> usize {
        self.weights.num_scalars()
    }

    pub fn cast<U: Scalar>(&self) -> QNetParams<U> {
        QNetParams {
            arch: self.arch.clone(),
            weights: self.weights.cast(),
            bn: self.bn.cast(),
            version: 0,
        }
    }
}

fn he_uniform<T: Scalar>(dst: &mut [T], fan_in: usize, rng: &mut dyn RngCore) {
    let bound = (6.0 / fan_in as f64).sqrt();
    for x in dst {
        *x = T::from_f64(rng.random_range(-bound..bound));
    }
}

/// He-uniform (fan-in) weights, zero biases, `gamma = 1`, `beta = 0`,
/// running mean 0 and running variance 1.
pub fn init_params<T: Scalar>(arch: &NetArch, rng: &mut dyn RngCore) -> Result<QNetParams<T>> {
    let mut p = QNetParams::<T>::zeros(arch)?;
    let k2 = arch.kernel_size * arch.kernel_size;
    let w = p.weights_mut();
    for (s, st) in w.stages.iter_mut().enumerate() {
        he_uniform(&mut st.weight, arch.stage_in_channels(s) * k2, rng);
        st.gamma.fill(T::ONE);
    }
    if let Some(proj) = &mut w.proj {
        he_uniform(&mut proj.weight, proj.n_in, rng);
    }
    he_uniform(&mut w.embed, arch.action_history * arch.action_vocab, rng);
    for d in [&mut w.fc1, &mut w.fc2, &mut w.out] {
        he_uniform(&mut d.weight, d.n_in, rng);
    }
    p.version = 0;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scalar_count_matches_counter() {
        let arch = NetArch::default();
        let p = init_params::<f32>(&arch, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(p.num_params() as u64, arch.count_params());
        let names = p.weights().tensor_names();
        assert_eq!(names.len(), p.weights().tensors().len());
        assert_eq!(names[0], "conv1.weight");
    }

    #[test]
    fn init_is_seeded_and_bn_is_neutral() {
        let arch = NetArch::default();
        let a = init_params::<f32>(&arch, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = init_params::<f32>(&arch, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let c = init_params::<f32>(&arch, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.weights(), c.weights());
        assert!(a.bn.var.iter().flatten().all(|&v| v == 1.0));
        assert!(a.bn.mean.iter().flatten().all(|&v| v == 0.0));
        assert!(a
            .weights()
            .stages
            .iter()
            .all(|s| s.gamma.iter().all(|&g| g == 1.0)));
        assert!(a.weights().fc1.bias.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn flatten_round_trip_and_version_bump() {
        let arch = NetArch::default();
        let mut p = init_params::<f64>(&arch, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let flat = p.weights().flatten();
        let v0 = p.version();
        let mut w = Weights::<f64>::zeros(&arch);
        w.unflatten_from(&flat).unwrap();
        assert_eq!(&w, p.weights());
        p.weights_mut().scale(2.0);
        assert_ne!(p.version(), v0);
        assert!(w.unflatten_from(&flat[1..]).is_err());
    }

    #[test]
    fn from_parts_rejects_mismatched_shapes() {
        let arch = NetArch::default();
        let mut small = arch.clone();
        small.fc_width = 8;
        let w = Weights::<f32>::zeros(&small);
        let err = QNetParams::from_parts(arch.clone(), w, BnStats::fresh(&arch)).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }
}
