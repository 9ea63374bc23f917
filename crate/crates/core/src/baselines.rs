//! Non-learning references: the exact tabular model of the simulator with
//! value iteration, a classical coarse-to-fine hill climb, and an exhaustive
//! scan.

use serde::Serialize;

use crate::agent::{greedy_action, summarize, EpisodeSummary, EvalReport, Policy};
use crate::env::{
    Action, EnvConfig, Environment, EpisodeOutcome, VirtualMicroscope, COARSE_STEP_RAD,
    FINE_STEP_RAD,
};
use crate::error::{Error, Result};
use crate::focus::tenengrad;
use crate::imaging::FocalStack;

/// Finite MDP over `(index, steps)` pairs plus one absorbing terminal state.
/// State id is `steps * num_positions + index`; the terminal id is last.
#[derive(Debug, Clone)]
pub struct DiscreteMdp {
    pub num_positions: usize,
    pub max_steps: usize,
    pub focus_norm: Vec<f64>,
    pub next: Vec<[usize; 5]>,
    pub reward: Vec<[f64; 5]>,
    pub outcome: Vec<[EpisodeOutcome; 5]>,
}

impl DiscreteMdp {
    pub fn num_states(&self) -> usize {
        self.next.len()
    }

    pub fn terminal(&self) -> usize {
        self.num_states() - 1
    }

    pub fn state_id(&self, index: usize, steps: usize) -> usize {
        steps * self.num_positions + index
    }
}

fn index_step(rad: f64, spacing: f64) -> Result<isize> {
    let k = (rad / spacing).round();
    if (rad / spacing - k).abs() > 1e-9 * k.abs().max(1.0) {
        return Err(Error::Config(format!(
            "step {rad} rad is not a multiple of the spacing {spacing} rad"
        )));
    }
    Ok(k as isize)
}

/// Builds the tabular model straight from the stack's focus curve.
pub fn mdp_from_stack(stack: &FocalStack, cfg: &EnvConfig) -> Result<DiscreteMdp> {
    cfg.validate()?;
    let raw = &stack.curve().values;
    let peak = raw.iter().copied().fold(0.0f64, f64::max);
    if !(peak > 0.0) {
        return Err(Error::invalid("focus curve is identically zero"));
    }
    let f: Vec<f64> = raw.iter().map(|v| v / peak).collect();
    let n = f.len();
    let coarse = index_step(COARSE_STEP_RAD, stack.spacing)?;
    let fine = index_step(FINE_STEP_RAD, stack.spacing)?;
    let deltas = [coarse, fine, 0, -fine, -coarse];
    let terminal = n * cfg.max_steps;
    let score = |i: usize, bonus: f64| cfg.reward_coeff * (f[i] - 1.0) + bonus;
    let good = cfg.bonus_magnitude;
    let bad = -cfg.bonus_magnitude;

    let mut next = Vec::with_capacity(terminal + 1);
    let mut reward = Vec::with_capacity(terminal + 1);
    let mut outcome = Vec::with_capacity(terminal + 1);
    for steps in 0..cfg.max_steps {
        for i in 0..n {
            let mut nx = [terminal; 5];
            let mut rw = [0.0; 5];
            let mut oc = [EpisodeOutcome::Running; 5];
            for a in 0..5 {
                if a == 2 {
                    let ok = f[i] >= cfg.success_ratio;
                    rw[a] = score(i, if ok { good } else { bad });
                    oc[a] = if ok {
                        EpisodeOutcome::SuccessTerminate
                    } else {
                        EpisodeOutcome::FailTerminateBlur
                    };
                    continue;
                }
                let j = i as isize + deltas[a];
                if j < 0 || j >= n as isize {
                    rw[a] = score(i, bad);
                    oc[a] = EpisodeOutcome::FailOutOfRange;
                } else if steps + 1 == cfg.max_steps {
                    rw[a] = score(j as usize, bad);
                    oc[a] = EpisodeOutcome::FailMaxSteps;
                } else {
                    nx[a] = (steps + 1) * n + j as usize;
                    rw[a] = score(j as usize, 0.0);
                }
            }
            next.push(nx);
            reward.push(rw);
            outcome.push(oc);
        }
    }
    next.push([terminal; 5]);
    reward.push([0.0; 5]);
    outcome.push([EpisodeOutcome::Running; 5]);
    Ok(DiscreteMdp {
        num_positions: n,
        max_steps: cfg.max_steps,
        focus_norm: f,
        next,
        reward,
        outcome,
    })
}

/// Replays every `(index, steps, action)` through `env` and counts
/// disagreements with the tabular model.
pub fn cross_check(mdp: &DiscreteMdp, env: &VirtualMicroscope) -> Result<usize> {
    let mut env = env.clone();
    let mut mismatches = 0;
    for steps in 0..mdp.max_steps {
        for i in 0..mdp.num_positions {
            let s = mdp.state_id(i, steps);
            for a in Action::ALL {
                env.place(i, steps)?;
                let t = env.step(a)?;
                let k = a.code() as usize;
                let next = if t.done {
                    mdp.terminal()
                } else {
                    mdp.state_id(env.index(), env.steps())
                };
                let expected_outcome = if t.done {
                    t.outcome
                } else {
                    EpisodeOutcome::Running
                };
                if next != mdp.next[s][k]
                    || t.reward != mdp.reward[s][k]
                    || expected_outcome != mdp.outcome[s][k]
                {
                    mismatches += 1;
                }
            }
        }
    }
    Ok(mismatches)
}

/// Optimal action values of a [`DiscreteMdp`].
#[derive(Debug, Clone)]
pub struct QTable {
    pub q: Vec<[f64; 5]>,
    pub iterations: usize,
    pub gamma: f64,
}

impl QTable {
    pub fn greedy(&self, state: usize) -> Action {
        greedy_action(&self.q[state])
    }

    pub fn value(&self, state: usize) -> f64 {
        self.q[state]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Synchronous value iteration until the sup-norm change drops below `tol`.
/// The terminal state keeps `Q = 0`.
pub fn value_iteration(mdp: &DiscreteMdp, gamma: f64, tol: f64) -> Result<QTable> {
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tolerance must be > 0, got {tol}")));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::invalid(format!(
            "gamma must be in [0, 1), got {gamma}"
        )));
    }
    let terminal = mdp.terminal();
    let mut q = vec![[0.0f64; 5]; mdp.num_states()];
    let mut iterations = 0;
    loop {
        iterations += 1;
        let v: Vec<f64> = q
            .iter()
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let mut delta = 0.0f64;
        for s in 0..terminal {
            for a in 0..5 {
                let nx = mdp.next[s][a];
                let boot = if nx == terminal { 0.0 } else { gamma * v[nx] };
                let new = mdp.reward[s][a] + boot;
                delta = delta.max((new - q[s][a]).abs());
                q[s][a] = new;
            }
        }
        if delta < tol {
            break;
        }
    }
    Ok(QTable {
        q,
        iterations,
        gamma,
    })
}

/// Greedy policy of a solved table, read through the simulator's ground
/// truth `(index, steps)`.
pub struct TablePolicy<'a> {
    pub mdp: &'a DiscreteMdp,
    pub table: &'a QTable,
}

impl Policy for TablePolicy<'_> {
    fn act(&self, env: &VirtualMicroscope) -> Result<Action> {
        Ok(self
            .table
            .greedy(self.mdp.state_id(env.index(), env.steps())))
    }
}

struct Walker {
    env: VirtualMicroscope,
    start: usize,
    ret: f64,
    end: Option<EpisodeSummary>,
}

impl Walker {
    fn focus(&self) -> f64 {
        self.env.observation().focus_raw
    }

    fn can(&self, a: Action) -> bool {
        let j = self.env.index() as isize + self.env.index_delta(a);
        self.end.is_none() && j >= 0 && j < self.env.num_positions() as isize
    }

    /// Room for a probe, a step back, and the final Terminate.
    fn budget(&self) -> bool {
        self.env.steps() + 3 <= self.env.config().max_steps
    }

    fn mv(&mut self, a: Action) -> Result<()> {
        if self.end.is_some() {
            return Ok(());
        }
        let t = self.env.step(a)?;
        self.ret += t.reward;
        if t.done {
            let obs = self.env.observation();
            self.end = Some(EpisodeSummary {
                start: self.start,
                outcome: t.outcome,
                steps: obs.steps,
                final_index: obs.index,
                final_focus_norm: obs.focus_norm,
                total_return: self.ret,
            });
        }
        Ok(())
    }

    /// Probes `up` once, reverses on a drop, then climbs until the measure
    /// drops and backs up one step. Returns the measure where it stops.
    fn climb(&mut self, up: Action, down: Action, mut cur: f64) -> Result<f64> {
        let (mut fwd, mut back) = (up, down);
        if self.can(up) && self.budget() {
            self.mv(up)?;
            let v = self.focus();
            if v < cur {
                self.mv(down)?;
                (fwd, back) = (down, up);
            } else {
                cur = v;
            }
        } else {
            (fwd, back) = (down, up);
        }
        while self.can(fwd) && self.budget() {
            self.mv(fwd)?;
            let v = self.focus();
            if v < cur {
                self.mv(back)?;
                break;
            }
            cur = v;
        }
        Ok(cur)
    }
}

/// One classical coarse-to-fine episode: coarse climb (probing positive
/// first), back up one coarse step past the drop, fine climb the same way,
/// terminate. Never leaves the range and always keeps a step for Terminate.
pub fn hill_climb_episode(base: &VirtualMicroscope, start: usize) -> Result<EpisodeSummary> {
    let mut w = Walker {
        env: base.clone(),
        start,
        ret: 0.0,
        end: None,
    };
    w.env.reset_at(start)?;
    let cur = w.focus();
    let cur = w.climb(Action::CoarsePositive, Action::CoarseNegative, cur)?;
    w.climb(Action::FinePositive, Action::FineNegative, cur)?;
    w.mv(Action::Terminate)?;
    Ok(w.end.expect("terminate ends the episode"))
}

/// Hill climb from every index.
pub fn hill_climb(env: &VirtualMicroscope) -> Result<EvalReport> {
    let runs = (0..env.num_positions())
        .map(|s| hill_climb_episode(env, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(&runs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ScanResult {
    pub argmax_index: usize,
    /// Focus-measure evaluations spent.
    pub evaluations: usize,
}

/// Evaluates Tenengrad on every frame; returns the first maximum.
pub fn exhaustive_scan(stack: &FocalStack) -> Result<ScanResult> {
    if stack.is_empty() {
        return Err(Error::invalid("empty stack"));
    }
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, frame) in stack.frames().iter().enumerate() {
        let v = tenengrad(frame, 0.0)?;
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    Ok(ScanResult {
        argmax_index: best,
        evaluations: stack.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{evaluate_policy, StartMode};
    use crate::imaging::StackSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::VecDeque;
    use std::sync::Arc;

    fn stack(z_min: f64, z_max: f64, z_star: f64, gain: f64) -> Arc<FocalStack> {
        let spec = StackSpec {
            view_id: "t".into(),
            seed: 5,
            width: 64,
            height: 64,
            offset_x: 0,
            offset_y: 0,
            z_min,
            z_max,
            spacing: 0.3,
            z_star,
            blur_gain: gain,
            softness: None,
        };
        Arc::new(spec.generate().unwrap())
    }

    fn env_for(s: Arc<FocalStack>) -> VirtualMicroscope {
        let cfg = EnvConfig {
            net_input_size: 16,
            ..EnvConfig::default()
        };
        VirtualMicroscope::new(s, cfg).unwrap()
    }

    /// Fewest actions (Terminate included) that end in success from `start`.
    fn bfs_min_actions(f: &[f64], start: usize, max_steps: usize) -> Option<usize> {
        let n = f.len() as isize;
        let mut dist = vec![usize::MAX; f.len()];
        dist[start] = 0;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            if f[i] >= 0.9 {
                return (dist[i] < max_steps).then_some(dist[i] + 1);
            }
            for d in [9, 1, -1, -9] {
                let j = i as isize + d;
                if j >= 0 && j < n && dist[j as usize] == usize::MAX {
                    dist[j as usize] = dist[i] + 1;
                    queue.push_back(j as usize);
                }
            }
        }
        None
    }

    #[test]
    fn mdp_shape_and_env_equivalence() {
        let env = env_for(stack(0.0, 6.0, 3.0, 2.0));
        let mdp = mdp_from_stack(env.stack(), env.config()).unwrap();
        assert_eq!(mdp.num_states(), 21 * 20 + 1);
        assert_eq!(cross_check(&mdp, &env).unwrap(), 0);
        let peak = env.stack().curve().argmax_index;
        let s = mdp.state_id(peak, 3);
        assert_eq!(mdp.next[s][2], mdp.terminal());
        assert_eq!(mdp.reward[s][2], 100.0);
        assert_eq!(mdp.outcome[s][2], EpisodeOutcome::SuccessTerminate);
    }

    #[test]
    fn value_iteration_terminal_and_last_step() {
        let env = env_for(stack(0.0, 6.0, 3.0, 2.0));
        let mdp = mdp_from_stack(env.stack(), env.config()).unwrap();
        let table = value_iteration(&mdp, 0.99, 1e-9).unwrap();
        assert_eq!(table.q[mdp.terminal()], [0.0; 5]);
        for i in 0..21 {
            if mdp.focus_norm[i] >= 0.9 {
                assert_eq!(table.greedy(mdp.state_id(i, 19)), Action::Terminate);
            }
        }
        assert!(value_iteration(&mdp, 0.99, 0.0).is_err());
    }

    #[test]
    fn value_iteration_fixed_point_satisfies_bellman() {
        let env = env_for(stack(0.0, 6.0, 3.0, 2.0));
        let mdp = mdp_from_stack(env.stack(), env.config()).unwrap();
        let table = value_iteration(&mdp, 0.99, 1e-9).unwrap();
        for s in 0..mdp.terminal() {
            for a in 0..5 {
                let nx = mdp.next[s][a];
                let done = nx == mdp.terminal();
                let y = crate::agent::bellman_value(mdp.reward[s][a], done, 0.99, &table.q[nx]);
                assert!((y - table.q[s][a]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn value_iteration_policy_is_perfect_and_minimal_on_tiny() {
        let env = env_for(stack(0.0, 6.0, 3.0, 2.0));
        let mdp = mdp_from_stack(env.stack(), env.config()).unwrap();
        let table = value_iteration(&mdp, 0.99, 1e-9).unwrap();
        let policy = TablePolicy {
            mdp: &mdp,
            table: &table,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = evaluate_policy(&policy, &env, StartMode::AllIndices, 0, &mut rng).unwrap();
        assert_eq!(r.accuracy, 1.0);
        for start in 0..21 {
            let ep = crate::agent::run_policy_episode(&env, start, &policy).unwrap();
            let best = bfs_min_actions(&mdp.focus_norm, start, 20).unwrap();
            assert_eq!(ep.steps, best, "start {start}");
        }
    }

    #[test]
    fn hill_climb_on_generated_stacks() {
        let env = env_for(stack(30.0, 69.0, 47.1, 1.0));
        let r = hill_climb(&env).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.outcomes.fail_out_of_range + r.outcomes.fail_max_steps, 0);

        // From the peak: coarse probe and back both ways, fine probe and back
        // both ways, terminate.
        let peak = env.stack().curve().argmax_index;
        let ep = hill_climb_episode(&env, peak).unwrap();
        assert_eq!(ep.steps, 9);
        assert_eq!(ep.final_index, peak);

        // Farthest start: ceil(range / coarse) coarse moves, at most two
        // fine sweeps of one coarse width, plus probes and the terminate.
        let n = env.num_positions();
        let far = if peak < n / 2 { n - 1 } else { 0 };
        let bound = n.div_ceil(9) + 2 * 9 + 4;
        let ep = hill_climb_episode(&env, far).unwrap();
        assert!(ep.steps <= bound.min(20), "{} steps", ep.steps);
        assert!(ep.outcome.is_success());
    }

    #[test]
    fn exhaustive_scan_matches_curve_and_geometry() {
        let s = stack(30.0, 69.0, 47.1, 1.0);
        let r = exhaustive_scan(&s).unwrap();
        assert_eq!(r.argmax_index, s.curve().argmax_index);
        assert_eq!(r.argmax_index, s.nearest_index(47.1));
        assert_eq!(r.evaluations, 131);
    }
}
