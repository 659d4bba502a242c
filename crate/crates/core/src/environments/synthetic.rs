//! Generated streams: a cyclic raster, a word stream whose words are
//! separated by shared silence states, and independent additive sources.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::EnvStep;
use crate::error::{Error, Result};

fn add_noise(obs: &mut [f64], sigma: f64, rng: &mut ChaCha8Rng) {
    if sigma > 0.0 {
        let n = Normal::new(0.0, sigma).expect("sigma checked");
        obs.iter_mut().for_each(|v| *v += n.sample(rng));
    }
}

fn check_noise(noise: f64, what: &str) -> Result<()> {
    if noise >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{what}: noise must be >= 0")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CyclicRasterSpec {
    pub states: usize,
    pub width: usize,
    pub height: usize,
    /// Lit pixels per frame.
    pub lit: usize,
    /// Seed of the frame patterns, independent of the run seed.
    pub pattern_seed: u64,
    pub noise: f64,
}

impl Default for CyclicRasterSpec {
    fn default() -> Self {
        CyclicRasterSpec {
            states: 20,
            width: 16,
            height: 16,
            lit: 24,
            pattern_seed: 0,
            noise: 0.0,
        }
    }
}

/// Frames visited in a fixed cycle; each frame lights a random pixel subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CyclicRaster {
    frames: Vec<Vec<f64>>,
    noise: f64,
    rng: ChaCha8Rng,
    t: usize,
}

impl CyclicRaster {
    pub fn new(spec: &CyclicRasterSpec, seed: u64) -> Result<Self> {
        let dim = spec.width * spec.height;
        if spec.states < 2 || spec.lit == 0 || spec.lit > dim {
            return Err(Error::InvalidParameter("cyclic_raster: need >= 2 states and 1..=dim lit pixels".into()));
        }
        check_noise(spec.noise, "cyclic_raster")?;
        let mut prng = ChaCha8Rng::seed_from_u64(spec.pattern_seed);
        let mut frames: Vec<Vec<f64>> = Vec::with_capacity(spec.states);
        while frames.len() < spec.states {
            let mut f = vec![0.0; dim];
            for i in rand::seq::index::sample(&mut prng, dim, spec.lit) {
                f[i] = 1.0;
            }
            if !frames.contains(&f) {
                frames.push(f);
            }
        }
        Ok(CyclicRaster {
            frames,
            noise: spec.noise,
            rng: ChaCha8Rng::seed_from_u64(seed),
            t: 0,
        })
    }

    pub fn frames(&self) -> &[Vec<f64>] {
        &self.frames
    }

    pub fn obs_dim(&self) -> usize {
        self.frames[0].len()
    }

    pub fn step(&mut self) -> EnvStep {
        let s = self.t % self.frames.len();
        self.t += 1;
        let mut observation = self.frames[s].clone();
        add_noise(&mut observation, self.noise, &mut self.rng);
        EnvStep {
            observation,
            reward: 0.0,
            reset: false,
            ground_truth: Some(vec![s]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WordStreamSpec {
    pub words: usize,
    pub word_len: usize,
    /// Silence states inserted after every word; shared by all words.
    pub silence_len: usize,
    pub dim: usize,
    /// Word-to-word transition matrix; defaults to the cycle 0, 1, ...
    pub word_transitions: Option<Vec<Vec<f64>>>,
    pub pattern_seed: u64,
    pub noise: f64,
}

impl Default for WordStreamSpec {
    fn default() -> Self {
        WordStreamSpec {
            words: 4,
            word_len: 3,
            silence_len: 2,
            dim: 16,
            word_transitions: None,
            pattern_seed: 0,
            noise: 0.0,
        }
    }
}

/// Feature frames of `words` words, each followed by the same silences.
/// Ground truth is `[word, position]` where positions past `word_len`
/// are silences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordStream {
    spec: WordStreamSpec,
    phonemes: Vec<Vec<Vec<f64>>>,
    silences: Vec<Vec<f64>>,
    rng: ChaCha8Rng,
    word: usize,
    pos: usize,
    started: bool,
}

impl WordStream {
    pub fn new(spec: WordStreamSpec, seed: u64) -> Result<Self> {
        if spec.words < 2 || spec.word_len == 0 || spec.silence_len == 0 || spec.dim == 0 {
            return Err(Error::InvalidParameter(
                "word_stream: need >= 2 words and non-empty words, silences and features".into(),
            ));
        }
        check_noise(spec.noise, "word_stream")?;
        if let Some(t) = &spec.word_transitions {
            if t.len() != spec.words {
                return Err(Error::InvalidParameter("word_stream: one transition row per word".into()));
            }
            super::hhmm::HhmmSpec::single_chain(t.clone()).validate()?;
        }
        let mut prng = ChaCha8Rng::seed_from_u64(spec.pattern_seed);
        let mut frame = |scale: f64| -> Vec<f64> { (0..spec.dim).map(|_| scale * prng.random::<f64>()).collect() };
        let phonemes = (0..spec.words)
            .map(|_| (0..spec.word_len).map(|_| frame(1.0)).collect())
            .collect();
        let silences = (0..spec.silence_len).map(|_| frame(0.2)).collect();
        Ok(WordStream {
            phonemes,
            silences,
            rng: ChaCha8Rng::seed_from_u64(seed),
            word: 0,
            pos: 0,
            started: false,
            spec,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.spec.dim
    }

    /// Distinct frames: every phoneme plus the silences.
    pub fn symbols(&self) -> usize {
        self.spec.words * self.spec.word_len + self.spec.silence_len
    }

    pub fn step(&mut self) -> EnvStep {
        if self.started {
            self.pos += 1;
            if self.pos == self.spec.word_len + self.spec.silence_len {
                self.pos = 0;
                self.word = match &self.spec.word_transitions {
                    None => (self.word + 1) % self.spec.words,
                    Some(t) => {
                        let mut u: f64 = self.rng.random();
                        let row = &t[self.word];
                        let mut next = row.len() - 1;
                        for (i, p) in row.iter().enumerate() {
                            if u < *p {
                                next = i;
                                break;
                            }
                            u -= p;
                        }
                        next
                    }
                };
            }
        }
        self.started = true;
        let mut observation = if self.pos < self.spec.word_len {
            self.phonemes[self.word][self.pos].clone()
        } else {
            self.silences[self.pos - self.spec.word_len].clone()
        };
        add_noise(&mut observation, self.spec.noise, &mut self.rng);
        EnvStep {
            observation,
            reward: 0.0,
            reset: false,
            ground_truth: Some(vec![self.word, self.pos]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdditiveSourcesSpec {
    pub sources: usize,
    /// Pixels owned by each source.
    pub block: usize,
    /// Non-blank patterns per source; pattern 0 is always blank.
    pub patterns: usize,
    /// Per-step probability that a source redraws its pattern.
    pub switch_prob: f64,
    pub pattern_seed: u64,
}

impl Default for AdditiveSourcesSpec {
    fn default() -> Self {
        AdditiveSourcesSpec {
            sources: 6,
            block: 4,
            patterns: 2,
            switch_prob: 0.3,
            pattern_seed: 0,
        }
    }
}

impl AdditiveSourcesSpec {
    /// Pixel range owned by source `i`.
    pub fn support(&self, i: usize) -> std::ops::Range<usize> {
        i * self.block..(i + 1) * self.block
    }
}

/// Independent sources on disjoint pixel blocks; the observation is their sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditiveSources {
    spec: AdditiveSourcesSpec,
    patterns: Vec<Vec<Vec<f64>>>,
    state: Vec<usize>,
    rng: ChaCha8Rng,
    started: bool,
}

impl AdditiveSources {
    pub fn new(spec: AdditiveSourcesSpec, seed: u64) -> Result<Self> {
        if spec.sources == 0 || spec.block == 0 || spec.patterns == 0 || !(0.0..=1.0).contains(&spec.switch_prob) {
            return Err(Error::InvalidParameter("additive_sources: invalid spec".into()));
        }
        let mut prng = ChaCha8Rng::seed_from_u64(spec.pattern_seed);
        let patterns = (0..spec.sources)
            .map(|_| {
                let mut p = vec![vec![0.0; spec.block]];
                for _ in 0..spec.patterns {
                    p.push((0..spec.block).map(|_| 0.5 + 0.5 * prng.random::<f64>()).collect());
                }
                p
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = (0..spec.sources).map(|_| rng.random_range(0..=spec.patterns)).collect();
        Ok(AdditiveSources {
            spec,
            patterns,
            state,
            rng,
            started: false,
        })
    }

    pub fn spec(&self) -> &AdditiveSourcesSpec {
        &self.spec
    }

    pub fn obs_dim(&self) -> usize {
        self.spec.sources * self.spec.block
    }

    pub fn step(&mut self) -> EnvStep {
        if self.started {
            for s in self.state.iter_mut() {
                if self.rng.random_bool(self.spec.switch_prob) {
                    *s = self.rng.random_range(0..=self.spec.patterns);
                }
            }
        }
        self.started = true;
        let mut observation = vec![0.0; self.obs_dim()];
        for (i, &s) in self.state.iter().enumerate() {
            observation[self.spec.support(i)].copy_from_slice(&self.patterns[i][s]);
        }
        EnvStep {
            observation,
            reward: 0.0,
            reset: false,
            ground_truth: Some(self.state.clone()),
        }
    }
}
