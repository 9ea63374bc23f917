//! The virtual microscope: action semantics, episode state machine, reward,
//! and the three-frame state sequence fed to the Q-network.

use std::io::Write;
use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::focus::normalize;
use crate::imaging::{resize_bilinear, FocalStack, Image};

pub const COARSE_STEP_RAD: f64 = 2.7;
pub const FINE_STEP_RAD: f64 = 0.3;

/// Padding code for the action slots of a fresh episode. Not executable.
pub const NULL_ACTION: u8 = 5;

/// Number of executable actions.
pub const NUM_ACTIONS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Action {
    CoarsePositive = 0,
    FinePositive = 1,
    Terminate = 2,
    FineNegative = 3,
    CoarseNegative = 4,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [
        Action::CoarsePositive,
        Action::FinePositive,
        Action::Terminate,
        Action::FineNegative,
        Action::CoarseNegative,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Action> {
        Action::ALL
            .get(code as usize)
            .copied()
            .ok_or(Error::NotExecutable(code))
    }

    /// Signed knob rotation in radians.
    pub fn delta_rad(self) -> f64 {
        match self {
            Action::CoarsePositive => COARSE_STEP_RAD,
            Action::FinePositive => FINE_STEP_RAD,
            Action::Terminate => 0.0,
            Action::FineNegative => -FINE_STEP_RAD,
            Action::CoarseNegative => -COARSE_STEP_RAD,
        }
    }
}

/// Angular change for an action code; the null padding code is rejected.
pub fn action_delta(code: u8) -> Result<f64> {
    Action::from_code(code).map(Action::delta_rad)
}

/// The RL state: three most recent network-size frames (newest last) and the
/// action codes that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSeq {
    pub frames: [Arc<Image>; 3],
    pub action_codes: [u8; 3],
}

impl StateSeq {
    /// State of a fresh episode: the current frame three times, no actions.
    pub fn fresh(frame: Arc<Image>) -> Self {
        Self {
            frames: [frame.clone(), frame.clone(), frame],
            action_codes: [NULL_ACTION; 3],
        }
    }

    /// Shifts in a new frame and the action that produced it.
    pub fn push(&self, frame: Arc<Image>, code: u8) -> Self {
        let [_, b, c] = &self.frames;
        let [_, y, z] = self.action_codes;
        Self {
            frames: [b.clone(), c.clone(), frame],
            action_codes: [y, z, code],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EpisodeOutcome {
    Running,
    SuccessTerminate,
    FailTerminateBlur,
    FailOutOfRange,
    FailMaxSteps,
}

impl EpisodeOutcome {
    pub fn is_terminal(self) -> bool {
        self != EpisodeOutcome::Running
    }

    pub fn is_success(self) -> bool {
        self == EpisodeOutcome::SuccessTerminate
    }
}

fn default_max_steps() -> usize {
    20
}
fn default_success_ratio() -> f64 {
    0.9
}
fn default_reward_coeff() -> f64 {
    10.0
}
fn default_bonus() -> f64 {
    100.0
}
fn default_net_input() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default = "default_success_ratio")]
    pub success_ratio: f64,
    /// Coefficient `c` on the focus-difference term of the reward.
    #[serde(default = "default_reward_coeff")]
    pub reward_coeff: f64,
    /// Magnitude of the terminal bonus `t`.
    #[serde(default = "default_bonus")]
    pub bonus_magnitude: f64,
    #[serde(default = "default_net_input")]
    pub net_input_size: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            max_steps: default_max_steps(),
            success_ratio: default_success_ratio(),
            reward_coeff: default_reward_coeff(),
            bonus_magnitude: default_bonus(),
            net_input_size: default_net_input(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.success_ratio > 0.0 && self.success_ratio < 1.0) {
            return Err(Error::Config(format!(
                "success_ratio must be in (0, 1), got {}",
                self.success_ratio
            )));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be >= 1".into()));
        }
        if !(self.bonus_magnitude > 0.0) {
            return Err(Error::Config("bonus_magnitude must be > 0".into()));
        }
        if self.net_input_size == 0 {
            return Err(Error::Config("net_input_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// `c * (cur - 1) + t` on normalized focus, with `t = +bonus` on success,
/// `-bonus` on any failure, and `0` while the episode runs.
pub fn reward(cur_focus_norm: f64, outcome: EpisodeOutcome, cfg: &EnvConfig) -> Result<f64> {
    if !(0.0..=1.0).contains(&cur_focus_norm) {
        return Err(Error::invalid(format!(
            "normalized focus {cur_focus_norm} outside [0, 1]"
        )));
    }
    let bonus = match outcome {
        EpisodeOutcome::Running => 0.0,
        EpisodeOutcome::SuccessTerminate => cfg.bonus_magnitude,
        _ => -cfg.bonus_magnitude,
    };
    Ok(cfg.reward_coeff * (cur_focus_norm - 1.0) + bonus)
}

pub fn is_success(cur_focus_norm: f64, cfg: &EnvConfig) -> bool {
    cur_focus_norm >= cfg.success_ratio
}

#[derive(Debug, Clone)]
pub struct Transition {
    pub state: StateSeq,
    pub action: Action,
    pub reward: f64,
    pub next_state: StateSeq,
    pub done: bool,
    pub outcome: EpisodeOutcome,
}

/// What a policy may look at besides the frames. `index` and `focus_norm`
/// are simulator ground truth and only used by the oracle baselines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub index: usize,
    pub steps: usize,
    pub num_positions: usize,
    /// Tenengrad of the full-resolution current frame.
    pub focus_raw: f64,
    pub focus_norm: f64,
}

/// Contract shared by the simulator and any future hardware backend.
pub trait Environment {
    fn reset(&mut self, rng: &mut dyn RngCore) -> StateSeq;
    fn step(&mut self, action: Action) -> Result<Transition>;
    fn state(&self) -> &StateSeq;
    fn observation(&self) -> Observation;
    fn outcome(&self) -> EpisodeOutcome;
}

#[derive(Debug)]
struct Shared {
    stack: Arc<FocalStack>,
    cfg: EnvConfig,
    net_frames: Vec<Arc<Image>>,
    focus_norm: Vec<f64>,
    coarse_indices: isize,
    fine_indices: isize,
}

/// Stack-backed environment. Cloning is cheap and yields an independent
/// episode over the same immutable data.
#[derive(Debug, Clone)]
pub struct VirtualMicroscope {
    shared: Arc<Shared>,
    index: usize,
    steps: usize,
    outcome: EpisodeOutcome,
    state: StateSeq,
}

fn steps_per_action(delta: f64, spacing: f64) -> Result<isize> {
    let q = delta / spacing;
    let n = q.round();
    if (q - n).abs() > 1e-9 * n.abs().max(1.0) {
        return Err(Error::Config(format!(
            "action step {delta} rad is not a multiple of the stack spacing {spacing} rad"
        )));
    }
    Ok(n as isize)
}

impl VirtualMicroscope {
    pub fn new(stack: Arc<FocalStack>, cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        let coarse_indices = steps_per_action(COARSE_STEP_RAD, stack.spacing)?;
        let fine_indices = steps_per_action(FINE_STEP_RAD, stack.spacing)?;
        let size = cfg.net_input_size;
        let net_frames = stack
            .frames()
            .iter()
            .map(|f| resize_bilinear(f, size, size).map(Arc::new))
            .collect::<Result<Vec<_>>>()?;
        let focus_norm = normalize(stack.curve())?.values;
        let first = net_frames[0].clone();
        Ok(Self {
            shared: Arc::new(Shared {
                stack,
                cfg,
                net_frames,
                focus_norm,
                coarse_indices,
                fine_indices,
            }),
            index: 0,
            steps: 0,
            outcome: EpisodeOutcome::Running,
            state: StateSeq::fresh(first),
        })
    }

    pub fn stack(&self) -> &Arc<FocalStack> {
        &self.shared.stack
    }

    pub fn config(&self) -> &EnvConfig {
        &self.shared.cfg
    }

    pub fn num_positions(&self) -> usize {
        self.shared.net_frames.len()
    }

    pub fn normalized_focus(&self) -> &[f64] {
        &self.shared.focus_norm
    }

    pub fn net_frame(&self, index: usize) -> &Arc<Image> {
        &self.shared.net_frames[index]
    }

    /// Index offset of an action on this stack.
    pub fn index_delta(&self, action: Action) -> isize {
        match action {
            Action::CoarsePositive => self.shared.coarse_indices,
            Action::FinePositive => self.shared.fine_indices,
            Action::Terminate => 0,
            Action::FineNegative => -self.shared.fine_indices,
            Action::CoarseNegative => -self.shared.coarse_indices,
        }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Starts a fresh episode at a chosen position.
    pub fn reset_at(&mut self, index: usize) -> Result<StateSeq> {
        self.place(index, 0)
    }

    /// Puts the episode at `(index, steps)` with a fresh frame history; used
    /// to enumerate states when cross-checking against the tabular model.
    pub fn place(&mut self, index: usize, steps: usize) -> Result<StateSeq> {
        if index >= self.num_positions() {
            return Err(Error::invalid(format!(
                "start index {index} outside 0..{}",
                self.num_positions()
            )));
        }
        if steps >= self.shared.cfg.max_steps {
            return Err(Error::invalid(format!(
                "step count {steps} leaves no actions (max_steps {})",
                self.shared.cfg.max_steps
            )));
        }
        self.index = index;
        self.steps = steps;
        self.outcome = EpisodeOutcome::Running;
        self.state = StateSeq::fresh(self.net_frame(index).clone());
        Ok(self.state.clone())
    }
}

impl Environment for VirtualMicroscope {
    fn reset(&mut self, rng: &mut dyn RngCore) -> StateSeq {
        let index = rng.random_range(0..self.num_positions());
        self.place(index, 0).expect("index drawn in range")
    }

    fn step(&mut self, action: Action) -> Result<Transition> {
        if self.outcome.is_terminal() {
            return Err(Error::EpisodeFinished);
        }
        let cfg = &self.shared.cfg;
        self.steps += 1;
        let outcome = match action {
            Action::Terminate => {
                if is_success(self.shared.focus_norm[self.index], cfg) {
                    EpisodeOutcome::SuccessTerminate
                } else {
                    EpisodeOutcome::FailTerminateBlur
                }
            }
            _ => {
                let target = self.index as isize + self.index_delta(action);
                if target < 0 || target >= self.num_positions() as isize {
                    EpisodeOutcome::FailOutOfRange
                } else {
                    self.index = target as usize;
                    if self.steps >= cfg.max_steps {
                        EpisodeOutcome::FailMaxSteps
                    } else {
                        EpisodeOutcome::Running
                    }
                }
            }
        };
        let r = reward(self.shared.focus_norm[self.index], outcome, cfg)?;
        let next_state = self
            .state
            .push(self.shared.net_frames[self.index].clone(), action.code());
        let state = std::mem::replace(&mut self.state, next_state.clone());
        self.outcome = outcome;
        Ok(Transition {
            state,
            action,
            reward: r,
            next_state,
            done: outcome.is_terminal(),
            outcome,
        })
    }

    fn state(&self) -> &StateSeq {
        &self.state
    }

    fn observation(&self) -> Observation {
        Observation {
            index: self.index,
            steps: self.steps,
            num_positions: self.num_positions(),
            focus_raw: self.shared.stack.curve().values[self.index],
            focus_norm: self.shared.focus_norm[self.index],
        }
    }

    fn outcome(&self) -> EpisodeOutcome {
        self.outcome
    }
}

/// One line of a JSON-lines episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub step: usize,
    pub index: usize,
    pub action: u8,
    pub reward: f64,
    pub outcome: EpisodeOutcome,
}

pub fn write_episode_log<W: Write>(mut out: W, records: &[EpisodeRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        writeln!(out).map_err(|e| Error::io("<episode log>", e))?;
    }
    Ok(())
}

/// Runs `actions` from `start`, stopping at the first terminal transition.
pub fn replay_episode(
    env: &mut VirtualMicroscope,
    start: usize,
    actions: &[Action],
) -> Result<Vec<EpisodeRecord>> {
    env.reset_at(start)?;
    let mut records = Vec::new();
    for &a in actions {
        let t = env.step(a)?;
        records.push(EpisodeRecord {
            step: env.steps(),
            index: env.index(),
            action: a.code(),
            reward: t.reward,
            outcome: t.outcome,
        });
        if t.done {
            break;
        }
    }
    Ok(records)
}
