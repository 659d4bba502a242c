//! Experiment runner: wires a topology to an environment, runs the tick
//! loop, logs metrics and writes dumps and snapshots.

pub mod dumps;
pub mod snapshot;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::environments::{EnvStep, Environment, EnvironmentSpec};
use crate::error::{Error, Result};
use crate::expert::Metrics;
use crate::topology::{EventTrace, Network, TopologyConfig};

pub use dumps::{inspect, replay, ReplayOutput};

/// Metric rows are flushed to disk at least this often.
pub const FLUSH_EVERY: u64 = 1000;
pub const SNAPSHOT_FILE: &str = "snapshot.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub topology: TopologyConfig,
    pub environment: EnvironmentSpec,
    pub steps: u64,
    /// Tick at which all learning and exploration stop. Defaults to
    /// `steps / 2`.
    #[serde(default)]
    pub learning_cutoff: Option<u64>,
    /// Directory for metrics, dumps and the final snapshot.
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| Error::config(path.display().to_string(), e.to_string()))
    }

    pub fn cutoff(&self) -> u64 {
        self.learning_cutoff.unwrap_or(self.steps / 2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("steps", "must be > 0"));
        }
        self.topology.validate()
    }
}

fn env_seed(master: u64) -> u64 {
    let mut z = master.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Network, environment and loop state; everything needed to resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub network: Network,
    pub env: Environment,
    action: Option<Vec<f64>>,
    step: u64,
    cutoff: Option<u64>,
}

/// One tick of a session.
#[derive(Debug, Clone, PartialEq)]
pub struct Tick {
    pub step: u64,
    pub env: EnvStep,
    pub trace: EventTrace,
}

impl Session {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let env = Environment::new(&config.environment, env_seed(config.seed))
            .map_err(|e| Error::config("environment", e.to_string()))?;
        let network = Network::build(config.topology.clone(), config.seed)?;
        Self::from_parts(network, env, Some(config.cutoff()))
    }

    pub fn from_parts(network: Network, env: Environment, cutoff: Option<u64>) -> Result<Self> {
        let input = network.config().input_dim;
        if env.obs_dim() != input {
            return Err(Error::config(
                "topology.input_dim",
                format!("is {input} but the environment emits {} values", env.obs_dim()),
            ));
        }
        if let (Some(a), Some(want)) = (network.acting_expert(), env.action_dim()) {
            let got = network.expert(a).action_slice().map_or(0, |r| r.len());
            if got != want {
                return Err(Error::config(
                    "topology.action_slice",
                    format!("has width {got} but the environment takes {want} actions"),
                ));
            }
        }
        Ok(Session {
            network,
            env,
            action: None,
            step: 0,
            cutoff,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Freezes learning now and cancels any scheduled cutoff.
    pub fn freeze(&mut self) {
        self.network.freeze();
        self.cutoff = None;
    }

    /// Steps the environment with the last action and ticks the network.
    /// Returns `None` when a finite stream is exhausted.
    pub fn step(&mut self) -> Result<Option<Tick>> {
        if self.cutoff == Some(self.step) {
            self.freeze();
        }
        let Some(env) = self.env.step(self.action.as_deref())? else {
            return Ok(None);
        };
        let (action, trace) = self.network.tick(&env.observation, env.reward)?;
        self.action = action;
        for a in self.network.addresses() {
            if let Some(metric) = self.network.expert(a).metrics().non_finite() {
                return Err(Error::NonFinite {
                    metric: format!("{metric} (expert {}_{})", a[0], a[1]),
                    step: self.step,
                });
            }
        }
        let tick = Tick { step: self.step, env, trace };
        self.step += 1;
        Ok(Some(tick))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub steps: u64,
    pub total_reward: f64,
    /// Fired events per Expert, in address order.
    pub events: Vec<u64>,
}

type MetricsWriter = csv::Writer<BufWriter<File>>;

fn metrics_writers(session: &Session, dir: &Path) -> Result<Vec<MetricsWriter>> {
    session
        .network
        .addresses()
        .into_iter()
        .map(|[l, i]| {
            let file = File::create(dir.join(format!("metrics_{l}_{i}.csv")))?;
            let mut w = csv::Writer::from_writer(BufWriter::new(file));
            w.write_record(Metrics::HEADER)?;
            Ok(w)
        })
        .collect()
}

/// Runs a configured experiment to completion and writes its artifacts.
pub fn run(config: &ExperimentConfig) -> Result<RunSummary> {
    let mut session = Session::new(config)?;
    std::fs::create_dir_all(&config.out_dir)
        .map_err(|e| Error::config("out_dir", format!("{}: {e}", config.out_dir.display())))?;
    let mut writers = metrics_writers(&session, &config.out_dir)
        .map_err(|e| Error::config("out_dir", format!("{}: {e}", config.out_dir.display())))?;
    let addresses = session.network.addresses();
    let mut summary = RunSummary {
        steps: 0,
        total_reward: 0.0,
        events: vec![0; addresses.len()],
    };
    while summary.steps < config.steps {
        let Some(tick) = session.step()? else { break };
        summary.total_reward += tick.env.reward;
        for (j, a) in addresses.iter().enumerate() {
            let m = session.network.expert(*a).metrics();
            summary.events[j] += u64::from(m.fired);
            writers[j].write_record(m.record())?;
        }
        summary.steps += 1;
        if summary.steps % FLUSH_EVERY == 0 {
            for w in &mut writers {
                w.flush()?;
            }
        }
    }
    for w in &mut writers {
        w.flush()?;
    }
    dumps::write_dumps(&session.network, &config.out_dir)?;
    snapshot::save(&session, &config.out_dir.join(SNAPSHOT_FILE))?;
    Ok(summary)
}
