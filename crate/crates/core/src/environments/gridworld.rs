//! Grid world with one rewarded tile. Entering the tile pays the reward and
//! teleports the agent to a random other cell. The observation is the
//! rendered grid followed by a one-hot of the previous action.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EnvStep;
use crate::error::{Error, Result};
use crate::math::argmax;

pub const ACTIONS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridworldSpec {
    pub width: usize,
    pub height: usize,
    /// Pixels per cell edge.
    pub cell_px: usize,
    /// `[x, y]` of the rewarded tile.
    pub reward_cell: [usize; 2],
    pub reward: f64,
    pub agent_value: f64,
    pub tile_value: f64,
}

impl Default for GridworldSpec {
    fn default() -> Self {
        GridworldSpec {
            width: 5,
            height: 5,
            cell_px: 3,
            reward_cell: [2, 2],
            reward: 100.0,
            agent_value: 1.0,
            tile_value: 0.5,
        }
    }
}

impl GridworldSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width * self.height < 2 || self.cell_px == 0 {
            return Err(Error::InvalidParameter("gridworld: need >= 2 cells and cell_px >= 1".into()));
        }
        if self.reward_cell[0] >= self.width || self.reward_cell[1] >= self.height {
            return Err(Error::InvalidParameter("gridworld: reward cell outside the grid".into()));
        }
        if !(self.reward >= 0.0) {
            return Err(Error::InvalidParameter("gridworld: rewards must be non-negative".into()));
        }
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        self.width * self.height * self.cell_px * self.cell_px + ACTIONS
    }
}

/// Up, down, left, right.
const MOVES: [(i64, i64); ACTIONS] = [(0, -1), (0, 1), (-1, 0), (1, 0)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gridworld {
    spec: GridworldSpec,
    rng: ChaCha8Rng,
    pos: [usize; 2],
    last_action: Option<usize>,
    started: bool,
}

impl Gridworld {
    pub fn new(spec: GridworldSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut g = Gridworld {
            spec,
            rng: ChaCha8Rng::seed_from_u64(seed),
            pos: [0, 0],
            last_action: None,
            started: false,
        };
        g.pos = g.random_free_cell();
        Ok(g)
    }

    pub fn spec(&self) -> &GridworldSpec {
        &self.spec
    }

    pub fn position(&self) -> [usize; 2] {
        self.pos
    }

    pub fn obs_dim(&self) -> usize {
        self.spec.obs_dim()
    }

    fn random_free_cell(&mut self) -> [usize; 2] {
        let cells = self.spec.width * self.spec.height - 1;
        let mut i = self.rng.random_range(0..cells);
        let r = self.spec.reward_cell[1] * self.spec.width + self.spec.reward_cell[0];
        if i >= r {
            i += 1;
        }
        [i % self.spec.width, i / self.spec.width]
    }

    pub fn render(&self) -> Vec<f64> {
        let s = &self.spec;
        let row = s.width * s.cell_px;
        let mut obs = vec![0.0; s.obs_dim()];
        let mut paint = |cell: [usize; 2], v: f64| {
            for dy in 0..s.cell_px {
                for dx in 0..s.cell_px {
                    obs[(cell[1] * s.cell_px + dy) * row + cell[0] * s.cell_px + dx] = v;
                }
            }
        };
        paint(s.reward_cell, s.tile_value);
        paint(self.pos, s.agent_value);
        if let Some(a) = self.last_action {
            obs[s.obs_dim() - ACTIONS + a] = 1.0;
        }
        obs
    }

    /// Applies the strongest action channel (lowest index on ties). The
    /// first call only reports the initial observation.
    pub fn step(&mut self, action: Option<&[f64]>) -> Result<EnvStep> {
        let mut reward = 0.0;
        let mut reset = false;
        if self.started {
            let a = match action {
                Some(v) if v.len() == ACTIONS => argmax(v).unwrap_or(0),
                Some(v) => {
                    return Err(Error::DimensionMismatch {
                        what: "gridworld action",
                        expected: ACTIONS,
                        actual: v.len(),
                    })
                }
                None => self.rng.random_range(0..ACTIONS),
            };
            self.last_action = Some(a);
            let (dx, dy) = MOVES[a];
            let x = self.pos[0] as i64 + dx;
            let y = self.pos[1] as i64 + dy;
            if x >= 0 && y >= 0 && (x as usize) < self.spec.width && (y as usize) < self.spec.height {
                self.pos = [x as usize, y as usize];
            }
            if self.pos == self.spec.reward_cell {
                reward = self.spec.reward;
                reset = true;
                self.pos = self.random_free_cell();
            }
        }
        self.started = true;
        Ok(EnvStep {
            observation: self.render(),
            reward,
            reset,
            ground_truth: Some(vec![self.pos[0], self.pos[1], self.last_action.unwrap_or(ACTIONS)]),
        })
    }
}

/// Mean reward per step of the uniformly random policy.
pub fn random_policy_reward(spec: &GridworldSpec, steps: usize, seed: u64) -> Result<f64> {
    let mut g = Gridworld::new(spec.clone(), seed)?;
    g.step(None)?;
    let mut total = 0.0;
    for _ in 0..steps {
        total += g.step(None)?.reward;
    }
    Ok(total / steps as f64)
}
