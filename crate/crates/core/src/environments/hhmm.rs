//! Two-level hidden Markov generator: a top chain picks which bottom chain
//! advances; every bottom state emits a fixed vector.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::EnvStep;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    /// Row-stochastic transition matrix.
    pub transitions: Vec<Vec<f64>>,
    /// One emission vector per state.
    pub emissions: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HhmmSpec {
    /// Transition matrix of the top chain; its states index `chains`.
    /// Defaults to a single state that always selects chain 0.
    #[serde(default)]
    pub top: Option<Vec<Vec<f64>>>,
    pub chains: Vec<ChainSpec>,
    /// Standard deviation of additive Gaussian noise.
    #[serde(default)]
    pub noise: f64,
}

fn check_stochastic(m: &[Vec<f64>], cols: usize, what: &str) -> Result<()> {
    if m.is_empty() {
        return Err(Error::InvalidParameter(format!("{what}: empty transition matrix")));
    }
    for (i, row) in m.iter().enumerate() {
        if row.len() != cols {
            return Err(Error::InvalidParameter(format!(
                "{what}: row {i} has {} entries, expected {cols}",
                row.len()
            )));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-9 || row.iter().any(|&p| p < 0.0) {
            return Err(Error::InvalidParameter(format!("{what}: row {i} sums to {s}, expected 1")));
        }
    }
    Ok(())
}

impl HhmmSpec {
    pub fn validate(&self) -> Result<()> {
        if self.chains.is_empty() {
            return Err(Error::InvalidParameter("hhmm: at least one chain".into()));
        }
        if let Some(top) = &self.top {
            if top.len() != self.chains.len() {
                return Err(Error::InvalidParameter("hhmm: top chain needs one state per chain".into()));
            }
            check_stochastic(top, top.len(), "hhmm top")?;
        }
        let dim = self.chains[0].emissions.first().map_or(0, Vec::len);
        if dim == 0 {
            return Err(Error::InvalidParameter("hhmm: emissions must be non-empty".into()));
        }
        for (c, chain) in self.chains.iter().enumerate() {
            let n = chain.transitions.len();
            check_stochastic(&chain.transitions, n, &format!("hhmm chain {c}"))?;
            if chain.emissions.len() != n || chain.emissions.iter().any(|e| e.len() != dim) {
                return Err(Error::InvalidParameter(format!(
                    "hhmm chain {c}: need {n} emissions of width {dim}"
                )));
            }
        }
        if !(self.noise >= 0.0) {
            return Err(Error::InvalidParameter("hhmm: noise must be >= 0".into()));
        }
        Ok(())
    }

    /// One chain whose emission is one-hot per state.
    pub fn single_chain(transitions: Vec<Vec<f64>>) -> Self {
        let n = transitions.len();
        let emissions = (0..n).map(|i| crate::math::OneHot::new(i, n).to_dense()).collect();
        HhmmSpec {
            top: None,
            chains: vec![ChainSpec { transitions, emissions }],
            noise: 0.0,
        }
    }

    /// Deterministic cycle of `2 * half` states where states `1` and
    /// `half + 1` share an emission: after that emission the successor is
    /// fixed by the state before it but not by the emission alone.
    pub fn shared_emission_cycle(half: usize) -> Self {
        let n = 2 * half;
        let transitions = (0..n)
            .map(|i| {
                let mut row = vec![0.0; n];
                row[(i + 1) % n] = 1.0;
                row
            })
            .collect();
        let width = n - 1;
        let emissions = (0..n)
            .map(|i| {
                let slot = if i == half + 1 { 1 } else if i > half + 1 { i - 1 } else { i };
                crate::math::OneHot::new(slot, width).to_dense()
            })
            .collect();
        HhmmSpec {
            top: None,
            chains: vec![ChainSpec { transitions, emissions }],
            noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hhmm {
    spec: HhmmSpec,
    rng: ChaCha8Rng,
    top_state: usize,
    states: Vec<usize>,
    started: bool,
}

fn draw(row: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let mut u: f64 = rng.random();
    for (i, p) in row.iter().enumerate() {
        if u < *p {
            return i;
        }
        u -= p;
    }
    row.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

impl Hhmm {
    pub fn new(spec: HhmmSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let states = vec![0; spec.chains.len()];
        Ok(Hhmm {
            spec,
            rng: ChaCha8Rng::seed_from_u64(seed),
            top_state: 0,
            states,
            started: false,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.spec.chains[0].emissions[0].len()
    }

    /// Active chain and its state.
    pub fn state(&self) -> (usize, usize) {
        (self.top_state, self.states[self.top_state])
    }

    pub fn step(&mut self) -> EnvStep {
        if self.started {
            if let Some(top) = &self.spec.top {
                self.top_state = draw(&top[self.top_state], &mut self.rng);
            }
            let c = self.top_state;
            self.states[c] = draw(&self.spec.chains[c].transitions[self.states[c]], &mut self.rng);
        }
        self.started = true;
        let (c, s) = self.state();
        let mut observation = self.spec.chains[c].emissions[s].clone();
        if self.spec.noise > 0.0 {
            let n = Normal::new(0.0, self.spec.noise).expect("validated noise");
            observation.iter_mut().for_each(|v| *v += n.sample(&mut self.rng));
        }
        EnvStep {
            observation,
            reward: 0.0,
            reset: false,
            ground_truth: Some(vec![c, s]),
        }
    }
}
