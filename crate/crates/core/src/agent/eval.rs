use std::sync::OnceLock;

use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::greedy_action;
use crate::env::{Action, Environment, EpisodeOutcome, StateSeq, VirtualMicroscope};
use crate::error::Result;
use crate::net::{qnet_forward, Mode, QNetParams, Scalar};

/// How evaluation episodes choose their start positions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartMode {
    /// One episode from every stack index, in index order.
    #[default]
    AllIndices,
    /// Independent uniform draws.
    RandomUniform,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeSummary {
    pub start: usize,
    pub outcome: EpisodeOutcome,
    /// Actions taken, the final one included.
    pub steps: usize,
    pub final_index: usize,
    pub final_focus_norm: f64,
    /// Undiscounted sum of rewards.
    pub total_return: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub success_terminate: usize,
    pub fail_terminate_blur: usize,
    pub fail_out_of_range: usize,
    pub fail_max_steps: usize,
}

/// Aggregate of a batch of greedy episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub accuracy: f64,
    pub avg_steps: f64,
    pub avg_return: f64,
    pub outcomes: OutcomeCounts,
    /// End-of-episode normalized focus in ten equal buckets over [0, 1];
    /// a value of exactly 1 lands in the last bucket.
    pub histogram: [usize; 10],
}

pub fn summarize(episodes: &[EpisodeSummary]) -> EvalReport {
    let mut outcomes = OutcomeCounts::default();
    let mut histogram = [0usize; 10];
    let mut steps = 0usize;
    let mut ret = 0.0;
    for e in episodes {
        match e.outcome {
            EpisodeOutcome::SuccessTerminate => outcomes.success_terminate += 1,
            EpisodeOutcome::FailTerminateBlur => outcomes.fail_terminate_blur += 1,
            EpisodeOutcome::FailOutOfRange => outcomes.fail_out_of_range += 1,
            EpisodeOutcome::FailMaxSteps => outcomes.fail_max_steps += 1,
            EpisodeOutcome::Running => {}
        }
        histogram[((e.final_focus_norm * 10.0).floor() as usize).min(9)] += 1;
        steps += e.steps;
        ret += e.total_return;
    }
    let n = episodes.len().max(1) as f64;
    EvalReport {
        episodes: episodes.len(),
        accuracy: outcomes.success_terminate as f64 / n,
        avg_steps: steps as f64 / n,
        avg_return: ret / n,
        outcomes,
        histogram,
    }
}

/// Stateless decision rule over the live environment.
pub trait Policy: Sync {
    fn act(&self, env: &VirtualMicroscope) -> Result<Action>;
}

impl<F> Policy for F
where
    F: Fn(&VirtualMicroscope) -> Result<Action> + Sync,
{
    fn act(&self, env: &VirtualMicroscope) -> Result<Action> {
        self(env)
    }
}

/// Worker count for evaluation: `FOCUSRL_THREADS` if set to a positive
/// integer, otherwise rayon's default.
pub fn eval_threads() -> usize {
    std::env::var("FOCUSRL_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(rayon::current_num_threads)
}

fn pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(eval_threads())
            .build()
            .expect("evaluation thread pool")
    })
}

fn start_indices(n: usize, mode: StartMode, episodes: usize, rng: &mut dyn RngCore) -> Vec<usize> {
    match mode {
        StartMode::AllIndices => (0..n).collect(),
        StartMode::RandomUniform => (0..episodes).map(|_| rng.random_range(0..n)).collect(),
    }
}

struct Running {
    env: VirtualMicroscope,
    start: usize,
    ret: f64,
}

impl Running {
    fn new(base: &VirtualMicroscope, start: usize) -> Result<Self> {
        let mut env = base.clone();
        env.reset_at(start)?;
        Ok(Self {
            env,
            start,
            ret: 0.0,
        })
    }

    /// Applies `a`; returns the summary once the episode ends.
    fn advance(&mut self, a: Action) -> Result<Option<EpisodeSummary>> {
        let t = self.env.step(a)?;
        self.ret += t.reward;
        if !t.done {
            return Ok(None);
        }
        let obs = self.env.observation();
        Ok(Some(EpisodeSummary {
            start: self.start,
            outcome: t.outcome,
            steps: obs.steps,
            final_index: obs.index,
            final_focus_norm: obs.focus_norm,
            total_return: self.ret,
        }))
    }
}

/// Runs one episode of `policy` from `start`.
pub fn run_policy_episode(
    base: &VirtualMicroscope,
    start: usize,
    policy: &dyn Policy,
) -> Result<EpisodeSummary> {
    let mut ep = Running::new(base, start)?;
    loop {
        let a = policy.act(&ep.env)?;
        if let Some(s) = ep.advance(a)? {
            return Ok(s);
        }
    }
}

/// Evaluates an arbitrary policy; episodes run in parallel on the
/// evaluation pool and are reported in start order.
pub fn evaluate_policy(
    policy: &dyn Policy,
    env: &VirtualMicroscope,
    mode: StartMode,
    episodes: usize,
    rng: &mut dyn RngCore,
) -> Result<EvalReport> {
    let starts = start_indices(env.num_positions(), mode, episodes, rng);
    let runs = pool().install(|| {
        starts
            .par_iter()
            .map(|&s| run_policy_episode(env, s, policy))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(summarize(&runs))
}

/// Episodes advanced together per batched forward pass. Fixed so results do
/// not depend on the thread count.
const LOCKSTEP_CHUNK: usize = 64;

fn lockstep<T: Scalar>(
    params: &QNetParams<T>,
    base: &VirtualMicroscope,
    starts: &[usize],
) -> Result<Vec<EpisodeSummary>> {
    let mut live: Vec<Running> = starts
        .iter()
        .map(|&s| Running::new(base, s))
        .collect::<Result<_>>()?;
    let mut done: Vec<Option<EpisodeSummary>> = vec![None; starts.len()];
    let mut active: Vec<usize> = (0..starts.len()).collect();
    while !active.is_empty() {
        let states: Vec<&StateSeq> = active.iter().map(|&i| live[i].env.state()).collect();
        let q = qnet_forward(params, &states, Mode::Infer)?.q;
        let mut still = Vec::with_capacity(active.len());
        for (k, &i) in active.iter().enumerate() {
            let a = greedy_action(&q[k * 5..k * 5 + 5]);
            match live[i].advance(a)? {
                Some(s) => done[i] = Some(s),
                None => still.push(i),
            }
        }
        active = still;
    }
    Ok(done
        .into_iter()
        .map(|s| s.expect("every episode terminates"))
        .collect())
}

/// Greedy (epsilon = 0) evaluation of the Q-network. Never mutates the
/// parameters or their batch-norm statistics.
pub fn evaluate<T: Scalar>(
    params: &QNetParams<T>,
    env: &VirtualMicroscope,
    mode: StartMode,
    episodes: usize,
    rng: &mut dyn RngCore,
) -> Result<EvalReport> {
    let starts = start_indices(env.num_positions(), mode, episodes, rng);
    let chunks: Vec<&[usize]> = starts.chunks(LOCKSTEP_CHUNK).collect();
    let runs = pool().install(|| {
        chunks
            .par_iter()
            .map(|c| lockstep(params, env, c))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(summarize(&runs.concat()))
}
