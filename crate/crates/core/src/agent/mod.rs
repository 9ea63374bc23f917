//! DQN: replay memory, epsilon-greedy behaviour, a lagged target network,
//! squared Bellman-error minimisation, and greedy evaluation.

mod eval;
mod replay;
mod train;

pub use eval::{
    eval_threads, evaluate, evaluate_policy, run_policy_episode, summarize, EpisodeSummary,
    EvalReport, OutcomeCounts, Policy, StartMode,
};
pub use replay::ReplayBuffer;
pub use train::{
    bellman_target, bellman_value, train, Learner, LogRow, TrainOutput, TRAIN_LOG_NAME,
};

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::env::{Action, StateSeq, NUM_ACTIONS};
use crate::error::{Error, Result};
use crate::net::{qnet_forward, Mode, QNetParams, Scalar};

fn default_gamma() -> f64 {
    0.99
}
fn default_total() -> u64 {
    100_000
}
fn default_eps_start() -> f64 {
    1.0
}
fn default_eps_end() -> f64 {
    0.1
}
fn default_eps_fraction() -> f64 {
    0.5
}
fn default_capacity() -> usize {
    10_000
}
fn default_batch() -> usize {
    32
}
fn default_lr() -> f64 {
    1e-4
}
fn default_sync() -> u64 {
    1_000
}
fn default_learn_start() -> usize {
    1_000
}
fn default_eval_interval() -> u64 {
    1_000
}
fn default_eval_episodes() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparams {
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_total")]
    pub total_timesteps: u64,
    #[serde(default = "default_eps_start")]
    pub epsilon_start: f64,
    #[serde(default = "default_eps_end")]
    pub epsilon_end: f64,
    /// Share of `total_timesteps` over which epsilon decays linearly.
    #[serde(default = "default_eps_fraction")]
    pub epsilon_fraction: f64,
    #[serde(default = "default_capacity")]
    pub replay_capacity: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_sync")]
    pub target_sync_interval: u64,
    /// Transitions in memory before gradient steps begin.
    #[serde(default = "default_learn_start")]
    pub learn_start: usize,
    #[serde(default = "default_eval_interval")]
    pub eval_interval: u64,
    #[serde(default)]
    pub eval_start: StartMode,
    /// Episodes per evaluation when `eval_start` is `random_uniform`.
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            gamma: default_gamma(),
            total_timesteps: default_total(),
            epsilon_start: default_eps_start(),
            epsilon_end: default_eps_end(),
            epsilon_fraction: default_eps_fraction(),
            replay_capacity: default_capacity(),
            batch_size: default_batch(),
            learning_rate: default_lr(),
            target_sync_interval: default_sync(),
            learn_start: default_learn_start(),
            eval_interval: default_eval_interval(),
            eval_start: StartMode::default(),
            eval_episodes: default_eval_episodes(),
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(format!("train: {m}")));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return fail(format!("gamma must be in (0, 1), got {}", self.gamma));
        }
        for (name, v) in [
            ("epsilon_start", self.epsilon_start),
            ("epsilon_end", self.epsilon_end),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        if self.epsilon_end > self.epsilon_start {
            return fail("epsilon_end must not exceed epsilon_start".into());
        }
        if !(0.0..=1.0).contains(&self.epsilon_fraction) {
            return fail("epsilon_fraction must be in [0, 1]".into());
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return fail(format!(
                "need 1 <= batch_size ({}) <= replay_capacity ({})",
                self.batch_size, self.replay_capacity
            ));
        }
        if !(self.learning_rate > 0.0) {
            return fail("learning_rate must be > 0".into());
        }
        if self.target_sync_interval == 0 || self.eval_interval == 0 {
            return fail("target_sync_interval and eval_interval must be >= 1".into());
        }
        if self.eval_start == StartMode::RandomUniform && self.eval_episodes == 0 {
            return fail("eval_episodes must be >= 1".into());
        }
        Ok(())
    }

    /// Exploration rate for the action taken at 0-based step `t`.
    pub fn epsilon(&self, t: u64) -> f64 {
        let horizon = self.epsilon_fraction * self.total_timesteps as f64;
        if horizon <= 0.0 || t as f64 >= horizon {
            return self.epsilon_end;
        }
        let frac = t as f64 / horizon;
        self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)
    }
}

/// Highest-valued action; ties go to the lowest action code.
pub fn greedy_action<T: PartialOrd + Copy>(q: &[T]) -> Action {
    let mut best = 0;
    for i in 1..NUM_ACTIONS.min(q.len()) {
        if q[i] > q[best] {
            best = i;
        }
    }
    Action::ALL[best]
}

/// Epsilon-greedy choice. One uniform draw decides between exploring (a
/// second draw picks the action) and the greedy Infer-mode action.
pub fn select_action<T: Scalar>(
    params: &QNetParams<T>,
    state: &StateSeq,
    epsilon: f64,
    rng: &mut dyn RngCore,
) -> Result<Action> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::invalid(format!("epsilon {epsilon} outside [0, 1]")));
    }
    if rng.random::<f64>() < epsilon {
        return Ok(Action::ALL[rng.random_range(0..NUM_ACTIONS)]);
    }
    let out = qnet_forward(params, &[state], Mode::Infer)?;
    Ok(greedy_action(&out.q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Image;
    use crate::net::NetArch;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    #[test]
    fn greedy_picks_max_and_breaks_ties_low() {
        assert_eq!(
            greedy_action(&[1.0, 5.0, 2.0, 0.0, 0.0]),
            Action::FinePositive
        );
        assert_eq!(
            greedy_action(&[3.0, 3.0, 0.0, 0.0, 0.0]),
            Action::CoarsePositive
        );
        assert_eq!(
            greedy_action(&[0.0, 0.0, 0.0, 0.0, 0.1]),
            Action::CoarseNegative
        );
    }

    #[test]
    fn full_exploration_is_uniform() {
        let arch = NetArch {
            input_size: 16,
            conv_channels: [2, 2, 2, 2],
            proj_channels: 0,
            fc_width: 4,
            ..NetArch::default()
        };
        let p = QNetParams::<f32>::zeros(&arch).unwrap();
        let s = StateSeq::fresh(Arc::new(Image::filled(16, 16, 0.5).unwrap()));
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut counts = [0usize; 5];
        for _ in 0..10_000 {
            counts[select_action(&p, &s, 1.0, &mut rng).unwrap().code() as usize] += 1;
        }
        for c in counts {
            assert!((1800..=2200).contains(&c), "{counts:?}");
        }
        assert!(select_action(&p, &s, 1.5, &mut rng).is_err());
    }

    #[test]
    fn epsilon_schedule_is_linear_then_flat() {
        let h = Hyperparams {
            total_timesteps: 1000,
            ..Hyperparams::default()
        };
        assert_eq!(h.epsilon(0), 1.0);
        assert!((h.epsilon(250) - 0.55).abs() < 1e-12);
        assert_eq!(h.epsilon(500), 0.1);
        assert_eq!(h.epsilon(999), 0.1);
        let mut prev = f64::INFINITY;
        for t in 0..1000 {
            let e = h.epsilon(t);
            assert!(e <= prev && (0.1..=1.0).contains(&e));
            prev = e;
        }
    }

    #[test]
    fn hyperparam_validation() {
        assert!(Hyperparams::default().validate().is_ok());
        let bad = Hyperparams {
            gamma: 1.0,
            ..Hyperparams::default()
        };
        assert!(bad.validate().is_err());
        let bad = Hyperparams {
            replay_capacity: 8,
            ..Hyperparams::default()
        };
        assert!(bad.validate().is_err());
        assert!(serde_json::from_str::<Hyperparams>(r#"{"gama": 0.9}"#).is_err());
    }
}
