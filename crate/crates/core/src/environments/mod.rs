//! Seedable worlds and stream sources. Every environment is a pure
//! function of its seed and the actions it receives.

pub mod gridworld;
pub mod hhmm;
pub mod stream;
pub mod synthetic;
pub mod two_object;

use serde::{Deserialize, Serialize};

use crate::error::Result;
pub use gridworld::{Gridworld, GridworldSpec};
pub use hhmm::{Hhmm, HhmmSpec};
pub use stream::{StreamSource, StreamSpec};
pub use synthetic::{AdditiveSources, AdditiveSourcesSpec, CyclicRaster, CyclicRasterSpec, WordStream, WordStreamSpec};
pub use two_object::{TwoObjectSpec, TwoObjectWorld};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvStep {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub reset: bool,
    /// Generator state for evaluation; never shown to the agent.
    pub ground_truth: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvironmentSpec {
    Hhmm(HhmmSpec),
    Gridworld(GridworldSpec),
    TwoObject(TwoObjectSpec),
    Stream(StreamSpec),
    CyclicRaster(CyclicRasterSpec),
    WordStream(WordStreamSpec),
    AdditiveSources(AdditiveSourcesSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Environment {
    Hhmm(Hhmm),
    Gridworld(Gridworld),
    TwoObject(TwoObjectWorld),
    Stream(StreamSource),
    CyclicRaster(CyclicRaster),
    WordStream(WordStream),
    AdditiveSources(AdditiveSources),
}

impl Environment {
    pub fn new(spec: &EnvironmentSpec, seed: u64) -> Result<Self> {
        Ok(match spec {
            EnvironmentSpec::Hhmm(s) => Environment::Hhmm(Hhmm::new(s.clone(), seed)?),
            EnvironmentSpec::Gridworld(s) => Environment::Gridworld(Gridworld::new(s.clone(), seed)?),
            EnvironmentSpec::TwoObject(s) => Environment::TwoObject(TwoObjectWorld::new(s.clone(), seed)?),
            EnvironmentSpec::Stream(s) => Environment::Stream(StreamSource::load(s)?),
            EnvironmentSpec::CyclicRaster(s) => Environment::CyclicRaster(CyclicRaster::new(s, seed)?),
            EnvironmentSpec::WordStream(s) => Environment::WordStream(WordStream::new(s.clone(), seed)?),
            EnvironmentSpec::AdditiveSources(s) => Environment::AdditiveSources(AdditiveSources::new(s.clone(), seed)?),
        })
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            Environment::Hhmm(e) => e.obs_dim(),
            Environment::Gridworld(e) => e.obs_dim(),
            Environment::TwoObject(e) => e.obs_dim(),
            Environment::Stream(e) => e.obs_dim(),
            Environment::CyclicRaster(e) => e.obs_dim(),
            Environment::WordStream(e) => e.obs_dim(),
            Environment::AdditiveSources(e) => e.obs_dim(),
        }
    }

    /// Width of the action vector the environment consumes, if any.
    pub fn action_dim(&self) -> Option<usize> {
        match self {
            Environment::Gridworld(_) => Some(gridworld::ACTIONS),
            _ => None,
        }
    }

    /// Next step, or `None` at the end of a finite stream. Passive
    /// environments ignore `action`.
    pub fn step(&mut self, action: Option<&[f64]>) -> Result<Option<EnvStep>> {
        Ok(Some(match self {
            Environment::Hhmm(e) => e.step(),
            Environment::Gridworld(e) => e.step(action)?,
            Environment::TwoObject(e) => e.step(),
            Environment::Stream(e) => return Ok(e.step()),
            Environment::CyclicRaster(e) => e.step(),
            Environment::WordStream(e) => e.step(),
            Environment::AdditiveSources(e) => e.step(),
        }))
    }
}
