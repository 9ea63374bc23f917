//! Command-line front end. Every subcommand reads a [`RunConfig`] and
//! writes files (or JSON/CSV on stdout when `--out` is omitted).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{evaluate, evaluate_policy, train, StartMode};
use crate::baselines::{exhaustive_scan, hill_climb, mdp_from_stack, value_iteration, TablePolicy};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::imaging::ensure_empty_dir;
use crate::net::{
    count_layer_macs, count_layer_params, init_params, save_checkpoint, Checkpoint, LayerShape,
    NetArch,
};

/// Parameter budget of the original network.
pub const PARAMS_TARGET: u64 = 381_000;
/// Multiply-accumulate budget of the original network.
pub const MACS_TARGET: u64 = 13_800_000;

#[derive(Debug, Parser)]
#[command(
    name = "focusrl",
    version,
    about = "Deep Q-learning auto-focus on synthetic focal stacks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the configuration's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Test stack name from `test_stacks`; the training stack by default.
    #[arg(long)]
    pub stack: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineMethod {
    HillClimb,
    ValueIteration,
    Scan,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a focal stack to a directory of PGM frames plus manifest.json.
    GenStack {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export the Tenengrad focus curve as CSV.
    Curve {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a Q-network; writes the log, checkpoints and final evaluations.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Start from this checkpoint's weights instead of a fresh init.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Greedy evaluation of a checkpoint from every stack index.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Non-learning reference on a stack.
    Baseline {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum, default_value = "hill-climb")]
        method: BaselineMethod,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parameter and multiply-accumulate counts.
    Count {
        /// Run configuration, or a JSON object `{"layers": [...]}`; the
        /// reference architecture when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountReport {
    pub params: u64,
    pub macs: u64,
    pub params_target: u64,
    pub macs_target: u64,
    /// Within 10% of the parameter budget.
    pub params_ok: bool,
    /// Within 25% of the MAC budget.
    pub macs_ok: bool,
}

impl CountReport {
    pub fn from_layers(layers: &[LayerShape]) -> Self {
        let params = count_layer_params(layers);
        let macs = count_layer_macs(layers);
        let within = |v: u64, t: u64, frac: f64| (v as f64 - t as f64).abs() <= frac * t as f64;
        Self {
            params,
            macs,
            params_target: PARAMS_TARGET,
            macs_target: MACS_TARGET,
            params_ok: within(params, PARAMS_TARGET, 0.10),
            macs_ok: within(macs, MACS_TARGET, 0.25),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerList {
    layers: Vec<LayerShape>,
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => fs::write(p, bytes).map_err(|e| Error::io(p, e)),
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut b = serde_json::to_vec_pretty(v)?;
    b.push(b'\n');
    Ok(b)
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    fs::write(path, json_bytes(v)?).map_err(|e| Error::io(path, e))
}

pub fn count(config: Option<&Path>) -> Result<CountReport> {
    let layers = match config {
        None => NetArch::default().layers(),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let value: serde_json::Value = serde_json::from_str(&text)?;
            if value.get("layers").is_some() {
                let list: LayerList = serde_json::from_value(value)?;
                list.layers
            } else {
                RunConfig::from_json(&text, p.parent().unwrap_or(Path::new(".")))?
                    .net
                    .layers()
            }
        }
    };
    Ok(CountReport::from_layers(&layers))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenStack { cfg, out } => {
            let rc = load_config(&cfg)?;
            let stack = rc.build_stack(rc.source(cfg.stack.as_deref())?)?;
            stack.save(&out)
        }
        Command::Curve { cfg, out } => {
            let rc = load_config(&cfg)?;
            let stack = rc.build_stack(rc.source(cfg.stack.as_deref())?)?;
            let curve = stack.curve();
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["index", "position", "tenengrad", "normalized"])?;
            for (i, (z, v)) in stack.positions().iter().zip(&curve.values).enumerate() {
                w.write_record([
                    i.to_string(),
                    format!("{z:.4}"),
                    v.to_string(),
                    (v / curve.max_value).to_string(),
                ])?;
            }
            let bytes = w
                .into_inner()
                .map_err(|e| Error::io("<csv>", e.into_error()))?;
            emit(out.as_deref(), &bytes)
        }
        Command::Train { cfg, out, resume } => {
            let rc = load_config(&cfg)?;
            let mut env = rc.build_env(rc.source(cfg.stack.as_deref())?)?;
            let mut rng = ChaCha8Rng::seed_from_u64(rc.seed);
            let init = match &resume {
                Some(p) => Checkpoint::load_expecting(p, &rc.net)?.params,
                None => init_params::<f32>(&rc.net, &mut rng)?,
            };
            ensure_empty_dir(&out)?;
            write_json(&out.join("config.json"), &rc)?;
            let result = train(&mut env, &rc.train, init, &mut rng, Some(&out))?;
            save_checkpoint(
                out.join("ckpt_final"),
                &result.params,
                rc.train.total_timesteps,
            )?;
            let report = evaluate(&result.params, &env, StartMode::AllIndices, 0, &mut rng)?;
            write_json(&out.join("eval_train.json"), &report)?;
            for t in &rc.test_stacks {
                let test_env = rc.build_env(&t.source)?;
                let r = evaluate(
                    &result.params,
                    &test_env,
                    StartMode::AllIndices,
                    0,
                    &mut rng,
                )?;
                write_json(&out.join(format!("eval_{}.json", t.name)), &r)?;
            }
            Ok(())
        }
        Command::Eval { cfg, ckpt, out } => {
            let rc = load_config(&cfg)?;
            let params = Checkpoint::load_expecting(&ckpt, &rc.net)?.params;
            let env = rc.build_env(rc.source(cfg.stack.as_deref())?)?;
            let mut rng = ChaCha8Rng::seed_from_u64(rc.seed);
            let report = evaluate(&params, &env, StartMode::AllIndices, 0, &mut rng)?;
            emit(out.as_deref(), &json_bytes(&report)?)
        }
        Command::Baseline { cfg, method, out } => {
            let rc = load_config(&cfg)?;
            let env = rc.build_env(rc.source(cfg.stack.as_deref())?)?;
            let bytes = match method {
                BaselineMethod::HillClimb => json_bytes(&hill_climb(&env)?)?,
                BaselineMethod::ValueIteration => {
                    let mdp = mdp_from_stack(env.stack(), env.config())?;
                    let table = value_iteration(&mdp, rc.train.gamma, 1e-9)?;
                    let policy = TablePolicy {
                        mdp: &mdp,
                        table: &table,
                    };
                    let mut rng = ChaCha8Rng::seed_from_u64(rc.seed);
                    json_bytes(&evaluate_policy(
                        &policy,
                        &env,
                        StartMode::AllIndices,
                        0,
                        &mut rng,
                    )?)?
                }
                BaselineMethod::Scan => json_bytes(&exhaustive_scan(env.stack())?)?,
            };
            emit(out.as_deref(), &bytes)
        }
        Command::Count { config, out } => {
            emit(out.as_deref(), &json_bytes(&count(config.as_deref())?)?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn reference_count_is_inside_the_budget() {
        let r = count(None).unwrap();
        assert_eq!((r.params, r.macs), (399_925, 13_936_896));
        assert!(r.params_ok && r.macs_ok);
        assert_eq!(count(None).unwrap(), r);
    }

    #[test]
    fn toy_layer_list() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("toy.json");
        fs::write(&p, r#"{"layers": [{"dense": {"n_in": 10, "n_out": 5}}]}"#).unwrap();
        let r = count(Some(&p)).unwrap();
        assert_eq!((r.params, r.macs), (55, 50));
    }
}
