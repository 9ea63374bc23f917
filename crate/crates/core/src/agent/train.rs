use std::fs;
use std::path::Path;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{evaluate, select_action, EvalReport, Hyperparams, ReplayBuffer};
use crate::env::{Environment, StateSeq, Transition, VirtualMicroscope};
use crate::error::{Error, Result};
use crate::net::{
    apply_running_update, qnet_backward, qnet_forward, save_checkpoint, Adam, BatchStats,
    Gradients, Mode, QNetParams, Scalar,
};

pub const TRAIN_LOG_NAME: &str = "train_log.csv";

/// `r` at a terminal transition, otherwise `r + gamma * max(next_q)`.
pub fn bellman_value(reward: f64, done: bool, gamma: f64, next_q: &[f64]) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * next_q.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Bellman target of one transition under the lagged parameters (Infer mode).
pub fn bellman_target<T: Scalar>(
    t: &Transition,
    target: &QNetParams<T>,
    gamma: f64,
) -> Result<f64> {
    if t.done {
        return Ok(t.reward);
    }
    let q = qnet_forward(target, &[&t.next_state], Mode::Infer)?.q;
    let q: Vec<f64> = q.iter().map(|v| v.to_f64()).collect();
    Ok(bellman_value(t.reward, false, gamma, &q))
}

/// Online network, its lagged copy, and the optimizer.
#[derive(Debug, Clone)]
pub struct Learner<T> {
    pub online: QNetParams<T>,
    pub target: QNetParams<T>,
    pub gamma: f64,
    opt: Adam<T>,
}

impl<T: Scalar> Learner<T> {
    pub fn new(params: QNetParams<T>, learning_rate: f64, gamma: f64) -> Self {
        let opt = Adam::new(params.arch(), learning_rate);
        Self {
            target: params.clone(),
            online: params,
            gamma,
            opt,
        }
    }

    /// Hard copy of the online weights and statistics into the target.
    pub fn sync_target(&mut self) {
        self.target = self.online.clone();
    }

    fn targets(&self, batch: &[&Transition]) -> Result<Vec<f64>> {
        let live: Vec<usize> = (0..batch.len()).filter(|&i| !batch[i].done).collect();
        let mut y: Vec<f64> = batch.iter().map(|t| t.reward).collect();
        if !live.is_empty() {
            let next: Vec<&StateSeq> = live.iter().map(|&i| &batch[i].next_state).collect();
            let q = qnet_forward(&self.target, &next, Mode::Infer)?.q;
            for (k, &i) in live.iter().enumerate() {
                let row: Vec<f64> = q[k * 5..k * 5 + 5].iter().map(|v| v.to_f64()).collect();
                y[i] = bellman_value(batch[i].reward, false, self.gamma, &row);
            }
        }
        Ok(y)
    }

    /// Mean squared Bellman error on `batch` and its gradient; targets are
    /// treated as constants.
    pub fn loss_and_gradients(
        &self,
        batch: &[&Transition],
    ) -> Result<(f64, Gradients<T>, BatchStats<T>)> {
        if batch.is_empty() {
            return Err(Error::invalid("empty training batch"));
        }
        let y = self.targets(batch)?;
        let states: Vec<&StateSeq> = batch.iter().map(|t| &t.state).collect();
        let out = qnet_forward(&self.online, &states, Mode::Train)?;
        let n = batch.len() as f64;
        let mut loss = 0.0;
        let mut dq = vec![T::ZERO; batch.len() * 5];
        for (i, t) in batch.iter().enumerate() {
            let a = t.action.code() as usize;
            let err = out.q[i * 5 + a].to_f64() - y[i];
            loss += err * err / n;
            dq[i * 5 + a] = T::from_f64(2.0 * err / n);
        }
        let cache = out.cache.expect("train mode caches");
        let grads = qnet_backward(&self.online, &cache, &dq)?;
        Ok((
            loss,
            grads,
            out.stats.expect("train mode reports statistics"),
        ))
    }

    /// One optimizer step; returns the pre-update loss.
    pub fn train_step(&mut self, batch: &[&Transition], timestep: u64) -> Result<f64> {
        let (loss, grads, stats) = self.loss_and_gradients(batch)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { loss, timestep });
        }
        self.opt.step(&mut self.online, &grads);
        apply_running_update(&mut self.online, &stats);
        Ok(loss)
    }
}

/// One CSV row, written at every evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub timestep: u64,
    /// Mean training loss since the previous row; empty before learning starts.
    pub loss: Option<f64>,
    pub epsilon: f64,
    pub eval_accuracy: f64,
    pub eval_avg_steps: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: QNetParams<f32>,
    pub log: Vec<LogRow>,
    pub reports: Vec<(u64, EvalReport)>,
    pub train_steps: u64,
    pub buffer_len: usize,
}

/// The DQN interaction loop. Starts from `init` (fresh or resumed weights)
/// with a fresh optimizer, replay memory and epsilon schedule. With a
/// `checkpoint_dir`, writes `train_log.csv` and `ckpt_<timestep>` files.
pub fn train(
    env: &mut VirtualMicroscope,
    hyper: &Hyperparams,
    init: QNetParams<f32>,
    rng: &mut dyn RngCore,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutput> {
    hyper.validate()?;
    let mut csv = match checkpoint_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(TRAIN_LOG_NAME);
            let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            Some(csv::Writer::from_writer(file))
        }
        None => None,
    };
    let eval_env = env.clone();
    let mut learner = Learner::new(init, hyper.learning_rate, hyper.gamma);
    let mut memory = ReplayBuffer::new(hyper.replay_capacity);
    let mut log = Vec::new();
    let mut reports = Vec::new();
    let mut train_steps = 0u64;
    let mut loss_sum = 0.0;
    let mut loss_count = 0u64;
    let mut needs_reset = true;

    for t in 1..=hyper.total_timesteps {
        if needs_reset {
            env.reset(rng);
        }
        let eps = hyper.epsilon(t - 1);
        let action = select_action(&learner.online, env.state(), eps, rng)?;
        let tr = env.step(action)?;
        needs_reset = tr.done;
        memory.push(tr);

        if memory.len() >= hyper.learn_start.max(hyper.batch_size) {
            let batch = memory.sample(hyper.batch_size, rng);
            loss_sum += learner.train_step(&batch, t)?;
            loss_count += 1;
            train_steps += 1;
        }
        if t % hyper.target_sync_interval == 0 {
            learner.sync_target();
        }
        if t % hyper.eval_interval == 0 {
            let report = evaluate(
                &learner.online,
                &eval_env,
                hyper.eval_start,
                hyper.eval_episodes,
                rng,
            )?;
            let row = LogRow {
                timestep: t,
                loss: (loss_count > 0).then(|| loss_sum / loss_count as f64),
                epsilon: eps,
                eval_accuracy: report.accuracy,
                eval_avg_steps: report.avg_steps,
            };
            loss_sum = 0.0;
            loss_count = 0;
            if let (Some(w), Some(dir)) = (csv.as_mut(), checkpoint_dir) {
                w.serialize(&row)?;
                w.flush()
                    .map_err(|e| Error::io(dir.join(TRAIN_LOG_NAME), e))?;
                save_checkpoint(dir.join(format!("ckpt_{t}")), &learner.online, t)?;
            }
            log.push(row);
            reports.push((t, report));
        }
    }
    Ok(TrainOutput {
        params: learner.online,
        log,
        reports,
        train_steps,
        buffer_len: memory.len(),
    })
}
