use super::params::{Dense, Gradients, QNetParams, Weights};
use super::scalar::matmul;
use super::{Mode, Scalar, BN_EPS, BN_MOMENTUM};
use crate::env::{StateSeq, NULL_ACTION};
use crate::error::{Error, Result};

/// Per-channel batch statistics observed by a Train-mode forward. `var` is
/// the unbiased estimate, ready for the running-average update.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<Vec<T>>,
    pub var: Vec<Vec<T>>,
}

#[derive(Debug, Clone)]
struct StageCache<T> {
    side: usize,
    /// im2col of the stage input, `(in * k * k) x (n * side * side)`.
    col: Vec<T>,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    /// Post-ReLU activations, `out x (n * side * side)`.
    act: Vec<T>,
    /// For each pooled output, the flat index into `act` of its maximum.
    argmax: Vec<u32>,
}

/// Activations saved by a Train-mode forward for [`qnet_backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    version: u64,
    batch: usize,
    stages: Vec<StageCache<T>>,
    proj_in: Vec<T>,
    proj_out: Vec<T>,
    codes: Vec<[u8; 3]>,
    h0: Vec<T>,
    h1: Vec<T>,
    h2: Vec<T>,
}

impl<T> ForwardCache<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    /// `batch x num_outputs`, row-major.
    pub q: Vec<T>,
    /// Present in Train mode.
    pub cache: Option<ForwardCache<T>>,
    /// Present in Train mode.
    pub stats: Option<BatchStats<T>>,
}

fn shape_err(layer: &str, detail: String) -> Error {
    Error::Shape {
        layer: layer.into(),
        detail,
    }
}

fn im2col<T: Scalar>(x: &[T], c_in: usize, n: usize, side: usize, k: usize, col: &mut [T]) {
    let r = (k / 2) as isize;
    let plane = side * side;
    let p = n * plane;
    for ci in 0..c_in {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * p..(row + 1) * p];
                let dy = ky as isize - r;
                let dx = kx as isize - r;
                for b in 0..n {
                    let src = &x[(ci * n + b) * plane..(ci * n + b + 1) * plane];
                    let out = &mut dst[b * plane..(b + 1) * plane];
                    for y in 0..side {
                        let sy = y as isize + dy;
                        let orow = &mut out[y * side..(y + 1) * side];
                        if sy < 0 || sy >= side as isize {
                            orow.fill(T::ZERO);
                            continue;
                        }
                        let srow = &src[sy as usize * side..(sy as usize + 1) * side];
                        for (xo, o) in orow.iter_mut().enumerate() {
                            let sx = xo as isize + dx;
                            *o = if sx < 0 || sx >= side as isize {
                                T::ZERO
                            } else {
                                srow[sx as usize]
                            };
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(col: &[T], c_in: usize, n: usize, side: usize, k: usize, x: &mut [T]) {
    let r = (k / 2) as isize;
    let plane = side * side;
    let p = n * plane;
    x.fill(T::ZERO);
    for ci in 0..c_in {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * p..(row + 1) * p];
                let dy = ky as isize - r;
                let dx = kx as isize - r;
                for b in 0..n {
                    let dst = &mut x[(ci * n + b) * plane..(ci * n + b + 1) * plane];
                    let grad = &src[b * plane..(b + 1) * plane];
                    for y in 0..side {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= side as isize {
                            continue;
                        }
                        for xo in 0..side {
                            let sx = xo as isize + dx;
                            if sx >= 0 && sx < side as isize {
                                dst[sy as usize * side + sx as usize] += grad[y * side + xo];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2x2 stride-2 max-pool over `c x n x side x side`; ties go to the first
/// element in row-major window order.
fn max_pool<T: Scalar>(x: &[T], c: usize, n: usize, side: usize) -> (Vec<T>, Vec<u32>) {
    let half = side / 2;
    let mut out = Vec::with_capacity(c * n * half * half);
    let mut arg = Vec::with_capacity(out.capacity());
    for img in 0..c * n {
        let base = img * side * side;
        for y in 0..half {
            for xo in 0..half {
                let mut best = base + 2 * y * side + 2 * xo;
                for (oy, ox) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * y + oy) * side + 2 * xo + ox;
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

fn dense_forward<T: Scalar>(d: &Dense<T>, x: &[T], n: usize, relu: bool) -> Vec<T> {
    let mut y = vec![T::ZERO; n * d.n_out];
    matmul(n, d.n_in, d.n_out, x, false, &d.weight, true, &mut y, false);
    for row in y.chunks_exact_mut(d.n_out) {
        for (v, b) in row.iter_mut().zip(&d.bias) {
            *v += *b;
            if relu && !(*v > T::ZERO) {
                *v = T::ZERO;
            }
        }
    }
    y
}

/// Accumulates weight/bias gradients of `d` and returns the input gradient.
fn dense_backward<T: Scalar>(
    d: &Dense<T>,
    x: &[T],
    dy: &[T],
    n: usize,
    g: &mut Dense<T>,
) -> Vec<T> {
    matmul(d.n_out, n, d.n_in, dy, true, x, false, &mut g.weight, true);
    for row in dy.chunks_exact(d.n_out) {
        for (gb, v) in g.bias.iter_mut().zip(row) {
            *gb += *v;
        }
    }
    let mut dx = vec![T::ZERO; n * d.n_in];
    matmul(
        n, d.n_out, d.n_in, dy, false, &d.weight, false, &mut dx, false,
    );
    dx
}

fn relu_mask<T: Scalar>(grad: &mut [T], act: &[T]) {
    for (g, a) in grad.iter_mut().zip(act) {
        if !(*a > T::ZERO) {
            *g = T::ZERO;
        }
    }
}

fn check_inputs<T: Scalar>(params: &QNetParams<T>, states: &[&StateSeq]) -> Result<()> {
    let arch = params.arch();
    if states.is_empty() {
        return Err(shape_err("input", "empty batch".into()));
    }
    for (i, s) in states.iter().enumerate() {
        for f in &s.frames {
            if f.width() != arch.input_size || f.height() != arch.input_size {
                return Err(shape_err(
                    "input",
                    format!(
                        "sample {i}: frame {}x{} but the net expects {}x{}",
                        f.width(),
                        f.height(),
                        arch.input_size,
                        arch.input_size
                    ),
                ));
            }
        }
        if let Some(&c) = s
            .action_codes
            .iter()
            .find(|&&c| c as usize >= arch.action_vocab)
        {
            return Err(shape_err(
                "embed",
                format!(
                    "sample {i}: action code {c} outside vocabulary {}",
                    arch.action_vocab
                ),
            ));
        }
    }
    Ok(())
}

/// Runs the Q-network on a batch of states. Returns `batch x 5` Q-values;
/// in Train mode also the activation cache and the batch statistics (the
/// caller folds those into the running averages with
/// [`apply_running_update`]).
pub fn qnet_forward<T: Scalar>(
    params: &QNetParams<T>,
    states: &[&StateSeq],
    mode: Mode,
) -> Result<ForwardOutput<T>> {
    check_inputs(params, states)?;
    let arch = params.arch();
    let w = params.weights();
    let n = states.len();
    let k = arch.kernel_size;
    let train = mode == Mode::Train;

    let s0 = arch.input_size;
    let mut x: Vec<T> = Vec::with_capacity(3 * n * s0 * s0);
    for slot in 0..3 {
        for st in states {
            x.extend(st.frames[slot].data().iter().map(|&v| T::from_f64(v)));
        }
    }

    let mut stages = Vec::new();
    let mut stats = BatchStats {
        mean: Vec::new(),
        var: Vec::new(),
    };
    for s in 0..4 {
        let side = arch.stage_side(s);
        let c_in = arch.stage_in_channels(s);
        let c_out = arch.conv_channels[s];
        let p = n * side * side;
        let kk = c_in * k * k;
        let mut col = vec![T::ZERO; kk * p];
        im2col(&x, c_in, n, side, k, &mut col);
        let mut y = vec![T::ZERO; c_out * p];
        matmul(
            c_out,
            kk,
            p,
            &w.stages[s].weight,
            false,
            &col,
            false,
            &mut y,
            false,
        );

        let mut inv_std = vec![T::ZERO; c_out];
        let mut bmean = vec![T::ZERO; c_out];
        let mut bvar = vec![T::ZERO; c_out];
        let pf = T::from_f64(p as f64);
        for c in 0..c_out {
            let ch = &y[c * p..(c + 1) * p];
            let var = if train {
                let mean = ch.iter().copied().sum::<T>() / pf;
                let var = ch.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / pf;
                bmean[c] = mean;
                bvar[c] = if p > 1 {
                    var * pf / T::from_f64((p - 1) as f64)
                } else {
                    var
                };
                var
            } else {
                params.bn.var[s][c]
            };
            inv_std[c] = T::ONE / (var + T::from_f64(BN_EPS)).sqrt();
        }
        // y becomes xhat in place; act = relu(gamma * xhat + beta).
        let mut act = vec![T::ZERO; c_out * p];
        let st = &w.stages[s];
        for c in 0..c_out {
            let mean = if train {
                bmean[c]
            } else {
                params.bn.mean[s][c]
            };
            let (is, g, b) = (inv_std[c], st.gamma[c], st.beta[c]);
            for (yv, av) in y[c * p..(c + 1) * p]
                .iter_mut()
                .zip(&mut act[c * p..(c + 1) * p])
            {
                *yv = (*yv - mean) * is;
                let z = g * *yv + b;
                *av = if z > T::ZERO { z } else { T::ZERO };
            }
        }
        let (pooled, argmax) = max_pool(&act, c_out, n, side);
        if train {
            stats.mean.push(bmean);
            stats.var.push(bvar);
            stages.push(StageCache {
                side,
                col,
                xhat: y,
                inv_std,
                act,
                argmax,
            });
        }
        x = pooled;
    }

    let f2 = arch.final_side() * arch.final_side();
    let m = n * f2;
    let proj_in = x;
    let feat = match &w.proj {
        Some(pj) => {
            let mut out = vec![T::ZERO; pj.n_out * m];
            matmul(
                pj.n_out, pj.n_in, m, &pj.weight, false, &proj_in, false, &mut out, false,
            );
            for (c, row) in out.chunks_exact_mut(m).enumerate() {
                for v in row {
                    *v += pj.bias[c];
                    if !(*v > T::ZERO) {
                        *v = T::ZERO;
                    }
                }
            }
            out
        }
        None => proj_in.clone(),
    };

    let v = arch.feature_len();
    let channels = arch.final_channels();
    let mut h0 = vec![T::ZERO; n * 2 * v];
    let codes: Vec<[u8; 3]> = states.iter().map(|s| s.action_codes).collect();
    for b in 0..n {
        let row = &mut h0[b * 2 * v..(b + 1) * 2 * v];
        for c in 0..channels {
            row[c * f2..(c + 1) * f2]
                .copy_from_slice(&feat[(c * n + b) * f2..(c * n + b + 1) * f2]);
        }
        let act_part = &mut row[v..];
        for (slot, &code) in codes[b].iter().enumerate() {
            if code == NULL_ACTION {
                continue;
            }
            let r = slot * (arch.action_vocab - 1) + code as usize;
            for (o, e) in act_part.iter_mut().zip(&w.embed[r * v..(r + 1) * v]) {
                *o += *e;
            }
        }
    }

    let h1 = dense_forward(&w.fc1, &h0, n, true);
    let h2 = dense_forward(&w.fc2, &h1, n, true);
    let q = dense_forward(&w.out, &h2, n, false);

    if !train {
        return Ok(ForwardOutput {
            q,
            cache: None,
            stats: None,
        });
    }
    Ok(ForwardOutput {
        q,
        cache: Some(ForwardCache {
            version: params.version(),
            batch: n,
            stages,
            proj_in,
            proj_out: if w.proj.is_some() { feat } else { Vec::new() },
            codes,
            h0,
            h1,
            h2,
        }),
        stats: Some(stats),
    })
}

/// Exact gradients of `sum(q * dq)` with respect to every learnable tensor.
pub fn qnet_backward<T: Scalar>(
    params: &QNetParams<T>,
    cache: &ForwardCache<T>,
    dq: &[T],
) -> Result<Gradients<T>> {
    if cache.version != params.version() {
        return Err(Error::StaleCache);
    }
    let arch = params.arch();
    let w = params.weights();
    let n = cache.batch;
    if dq.len() != n * arch.num_outputs {
        return Err(shape_err(
            "out",
            format!(
                "dq has {} entries, expected {}",
                dq.len(),
                n * arch.num_outputs
            ),
        ));
    }
    let k = arch.kernel_size;
    let mut g = Weights::<T>::zeros(arch);

    let mut dh2 = dense_backward(&w.out, &cache.h2, dq, n, &mut g.out);
    relu_mask(&mut dh2, &cache.h2);
    let mut dh1 = dense_backward(&w.fc2, &cache.h1, &dh2, n, &mut g.fc2);
    relu_mask(&mut dh1, &cache.h1);
    let dh0 = dense_backward(&w.fc1, &cache.h0, &dh1, n, &mut g.fc1);

    let v = arch.feature_len();
    let f2 = arch.final_side() * arch.final_side();
    let channels = arch.final_channels();
    let mut dfeat = vec![T::ZERO; channels * n * f2];
    for b in 0..n {
        let row = &dh0[b * 2 * v..(b + 1) * 2 * v];
        for c in 0..channels {
            dfeat[(c * n + b) * f2..(c * n + b + 1) * f2]
                .copy_from_slice(&row[c * f2..(c + 1) * f2]);
        }
        for (slot, &code) in cache.codes[b].iter().enumerate() {
            if code == NULL_ACTION {
                continue;
            }
            let r = slot * (arch.action_vocab - 1) + code as usize;
            for (ge, d) in g.embed[r * v..(r + 1) * v].iter_mut().zip(&row[v..]) {
                *ge += *d;
            }
        }
    }

    let m = n * f2;
    let mut dx = match (&w.proj, &mut g.proj) {
        (Some(pj), Some(gp)) => {
            relu_mask(&mut dfeat, &cache.proj_out);
            matmul(
                pj.n_out,
                m,
                pj.n_in,
                &dfeat,
                false,
                &cache.proj_in,
                true,
                &mut gp.weight,
                true,
            );
            for (c, row) in dfeat.chunks_exact(m).enumerate() {
                gp.bias[c] += row.iter().copied().sum::<T>();
            }
            let mut dx = vec![T::ZERO; pj.n_in * m];
            matmul(
                pj.n_in, pj.n_out, m, &pj.weight, true, &dfeat, false, &mut dx, false,
            );
            dx
        }
        _ => dfeat,
    };

    for s in (0..4).rev() {
        let sc = &cache.stages[s];
        let side = sc.side;
        let c_in = arch.stage_in_channels(s);
        let c_out = arch.conv_channels[s];
        let p = n * side * side;
        let kk = c_in * k * k;

        let mut dz = vec![T::ZERO; c_out * p];
        for (d, &i) in dx.iter().zip(&sc.argmax) {
            dz[i as usize] += *d;
        }
        relu_mask(&mut dz, &sc.act);

        let st = &w.stages[s];
        let gs = &mut g.stages[s];
        let pf = T::from_f64(p as f64);
        for c in 0..c_out {
            let dzc = &mut dz[c * p..(c + 1) * p];
            let xh = &sc.xhat[c * p..(c + 1) * p];
            let mut sum_d = T::ZERO;
            let mut sum_dx = T::ZERO;
            for (d, x) in dzc.iter().zip(xh) {
                sum_d += *d;
                sum_dx += *d * *x;
            }
            gs.beta[c] += sum_d;
            gs.gamma[c] += sum_dx;
            // dxhat = gamma * dz; dy = inv_std / p * (p * dxhat - sum(dxhat) - xhat * sum(dxhat * xhat))
            let scale = st.gamma[c] * sc.inv_std[c] / pf;
            for (d, x) in dzc.iter_mut().zip(xh) {
                *d = scale * (pf * *d - sum_d - *x * sum_dx);
            }
        }
        matmul(
            c_out,
            p,
            kk,
            &dz,
            false,
            &sc.col,
            true,
            &mut gs.weight,
            true,
        );
        if s > 0 {
            let mut dcol = vec![T::ZERO; kk * p];
            matmul(kk, c_out, p, &st.weight, true, &dz, false, &mut dcol, false);
            let mut dprev = vec![T::ZERO; c_in * p];
            col2im(&dcol, c_in, n, side, k, &mut dprev);
            dx = dprev;
        }
    }
    Ok(g)
}

/// Folds Train-mode batch statistics into the running averages:
/// `running = 0.99 * running + 0.01 * batch`.
pub fn apply_running_update<T: Scalar>(params: &mut QNetParams<T>, stats: &BatchStats<T>) {
    let mom = T::from_f64(BN_MOMENTUM);
    let rest = T::ONE - mom;
    for s in 0..stats.mean.len() {
        for (r, b) in params.bn.mean[s].iter_mut().zip(&stats.mean[s]) {
            *r = mom * *r + rest * *b;
        }
        for (r, b) in params.bn.var[s].iter_mut().zip(&stats.var[s]) {
            *r = mom * *r + rest * *b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Image;
    use crate::net::{init_params, NetArch};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn reduced_arch() -> NetArch {
        NetArch {
            input_size: 16,
            conv_channels: [2, 2, 2, 2],
            proj_channels: 0,
            fc_width: 32,
            ..NetArch::default()
        }
    }

    fn random_state(rng: &mut ChaCha8Rng, side: usize) -> StateSeq {
        let mut frame = || {
            let data = (0..side * side).map(|_| rng.random::<f64>()).collect();
            Arc::new(Image::new(side, side, data).unwrap())
        };
        let frames = [frame(), frame(), frame()];
        StateSeq {
            frames,
            action_codes: [NULL_ACTION, 1, 4],
        }
    }

    #[test]
    fn zero_params_output_the_output_bias() {
        let arch = NetArch::default();
        let mut p = QNetParams::<f64>::zeros(&arch).unwrap();
        let bias = [0.5, -1.0, 2.0, 3.5, -0.25];
        p.weights_mut().out.bias.copy_from_slice(&bias);
        let zero = Arc::new(Image::filled(64, 64, 0.0).unwrap());
        let s = StateSeq::fresh(zero);
        for mode in [Mode::Infer, Mode::Train] {
            let out = qnet_forward(&p, &[&s], mode).unwrap();
            assert_eq!(out.q, bias);
        }
    }

    #[test]
    fn output_has_five_values_per_sample_and_is_finite_after_init() {
        let arch = NetArch::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = init_params::<f32>(&arch, &mut rng).unwrap();
        let states: Vec<StateSeq> = (0..3).map(|_| random_state(&mut rng, 64)).collect();
        let refs: Vec<&StateSeq> = states.iter().collect();
        let out = qnet_forward(&p, &refs, Mode::Infer).unwrap();
        assert_eq!(out.q.len(), 15);
        assert!(
            out.q.iter().all(|q| q.is_finite() && q.abs() < 100.0),
            "{:?}",
            out.q
        );
    }

    #[test]
    fn infer_is_batch_independent_and_pure() {
        let arch = reduced_arch();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = init_params::<f64>(&arch, &mut rng).unwrap();
        let states: Vec<StateSeq> = (0..4).map(|_| random_state(&mut rng, 16)).collect();
        let refs: Vec<&StateSeq> = states.iter().collect();
        let batched = qnet_forward(&p, &refs, Mode::Infer).unwrap().q;
        for (i, s) in states.iter().enumerate() {
            let alone = qnet_forward(&p, &[s], Mode::Infer).unwrap().q;
            for a in 0..5 {
                assert!((alone[a] - batched[i * 5 + a]).abs() < 1e-12);
            }
        }
        assert_eq!(batched, qnet_forward(&p, &refs, Mode::Infer).unwrap().q);
    }

    #[test]
    fn train_mode_normalizes_each_channel() {
        let arch = NetArch {
            input_size: 16,
            conv_channels: [4, 4, 4, 4],
            proj_channels: 0,
            fc_width: 16,
            ..NetArch::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = init_params::<f64>(&arch, &mut rng).unwrap();
        let states: Vec<StateSeq> = (0..8).map(|_| random_state(&mut rng, 16)).collect();
        let refs: Vec<&StateSeq> = states.iter().collect();
        let out = qnet_forward(&p, &refs, Mode::Train).unwrap();
        let cache = out.cache.unwrap();
        for sc in &cache.stages {
            let p = sc.act.len() / 4;
            for c in 0..4 {
                let xh = &sc.xhat[c * p..(c + 1) * p];
                let mean = xh.iter().sum::<f64>() / p as f64;
                let var = xh.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / p as f64;
                assert!(mean.abs() < 1e-6, "mean {mean}");
                assert!((var - 1.0).abs() < 1e-4, "var {var}");
            }
        }
    }

    #[test]
    fn backward_is_linear_in_dq() {
        let arch = reduced_arch();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = init_params::<f64>(&arch, &mut rng).unwrap();
        let states: Vec<StateSeq> = (0..2).map(|_| random_state(&mut rng, 16)).collect();
        let refs: Vec<&StateSeq> = states.iter().collect();
        let out = qnet_forward(&p, &refs, Mode::Train).unwrap();
        let cache = out.cache.unwrap();

        let zero = qnet_backward(&p, &cache, &[0.0; 10]).unwrap();
        assert!(zero.flatten().iter().all(|&g| g == 0.0));

        let dq: Vec<f64> = (0..10).map(|i| (i as f64 * 0.7).sin()).collect();
        let dq2: Vec<f64> = dq.iter().map(|v| 2.0 * v).collect();
        let g1 = qnet_backward(&p, &cache, &dq).unwrap().flatten();
        let g2 = qnet_backward(&p, &cache, &dq2).unwrap().flatten();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((2.0 * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn stale_cache_and_bad_shapes_are_rejected() {
        let arch = reduced_arch();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = init_params::<f64>(&arch, &mut rng).unwrap();
        let s = random_state(&mut rng, 16);
        let cache = qnet_forward(&p, &[&s], Mode::Train).unwrap().cache.unwrap();
        assert!(qnet_backward(&p, &cache, &[0.0; 4]).is_err());
        p.weights_mut().out.bias[0] = 1.0;
        assert!(matches!(
            qnet_backward(&p, &cache, &[0.0; 5]),
            Err(Error::StaleCache)
        ));

        let big = random_state(&mut rng, 32);
        match qnet_forward(&p, &[&big], Mode::Infer) {
            Err(Error::Shape { layer, .. }) => assert_eq!(layer, "input"),
            other => panic!("unexpected {other:?}"),
        }
        let mut bad = s.clone();
        bad.action_codes[0] = 9;
        match qnet_forward(&p, &[&bad], Mode::Infer) {
            Err(Error::Shape { layer, .. }) => assert_eq!(layer, "embed"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn running_update_uses_momentum() {
        let arch = reduced_arch();
        let mut p = QNetParams::<f64>::zeros(&arch).unwrap();
        let stats = BatchStats {
            mean: vec![vec![1.0; 2]; 4],
            var: vec![vec![3.0; 2]; 4],
        };
        apply_running_update(&mut p, &stats);
        assert!((p.bn.mean[0][0] - 0.01).abs() < 1e-15);
        assert!((p.bn.var[3][1] - (0.99 + 0.03)).abs() < 1e-15);
    }
}
