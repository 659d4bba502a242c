//! Temporal pooler: an event-driven library of fixed-length sequences of
//! cluster indices with decaying prior counts and a per-position context
//! likelihood table.
//!
//! A sequence has `m = lookbehind + 1 + lookahead` positions. Positions
//! `0..=lookbehind` are matched against the recent history of winners; the
//! current winner sits at position `lookbehind` and the next predicted
//! cluster at `lookbehind + 1`.

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::math::{kl_divergence, normalize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemporalPoolerParams {
    /// T_h: past positions matched besides the current one.
    pub lookbehind: usize,
    /// T_f: future positions per sequence.
    pub lookahead: usize,
    /// M: library capacity.
    pub max_sequences: usize,
    /// Indicator softness for sequence matching.
    pub epsilon: f64,
    /// Floor for context likelihoods.
    pub context_floor: f64,
    /// Per-event multiplicative decay of prior counts.
    pub prior_decay: f64,
}

impl Default for TemporalPoolerParams {
    fn default() -> Self {
        TemporalPoolerParams {
            lookbehind: 1,
            lookahead: 1,
            max_sequences: 1000,
            epsilon: 0.01,
            context_floor: 0.01,
            prior_decay: 0.999,
        }
    }
}

impl TemporalPoolerParams {
    pub fn seq_len(&self) -> usize {
        self.lookbehind + 1 + self.lookahead
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.lookahead == 0 {
            return bad("lookahead must be >= 1");
        }
        if self.max_sequences < 2 {
            return bad("max_sequences must be >= 2");
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return bad("epsilon must be in (0, 0.5)");
        }
        if !(self.context_floor > 0.0 && self.context_floor < 0.5) {
            return bad("context_floor must be in (0, 0.5)");
        }
        if !(self.prior_decay > 0.0 && self.prior_decay <= 1.0) {
            return bad("prior_decay must be in (0, 1]");
        }
        Ok(())
    }
}

/// One stored sequence together with everything keyed by it, so that
/// eviction drops the associated statistics in one place.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequence {
    pub clusters: Vec<usize>,
    pub prior: f64,
    /// Event count at insertion; used to evict the oldest among ties.
    pub stamp: u64,
    /// Per position, per context element: accumulated context mass.
    pub ctx_success: Vec<f64>,
    /// Per position: number of context observations.
    pub ctx_total: Vec<f64>,
    /// Reward estimate per future step.
    pub reward: Vec<f64>,
    pub reward_updates: Vec<u64>,
    /// Influence counts per future step.
    pub influence_success: Vec<f64>,
    pub influence_attempts: Vec<f64>,
}

impl Sequence {
    fn new(clusters: Vec<usize>, stamp: u64, ctx_dim: usize, lookahead: usize) -> Self {
        let m = clusters.len();
        Sequence {
            clusters,
            prior: 0.0,
            stamp,
            ctx_success: vec![0.0; m * ctx_dim],
            ctx_total: vec![0.0; m],
            reward: vec![0.0; lookahead],
            reward_updates: vec![0; lookahead],
            influence_success: vec![0.0; lookahead],
            influence_attempts: vec![0.0; lookahead],
        }
    }

    /// Laplace-smoothed influence probability for future step `f` (1-based).
    pub fn influence(&self, f: usize) -> f64 {
        (self.influence_success[f - 1] + 1.0) / (self.influence_attempts[f - 1] + 2.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceLibrary {
    params: TemporalPoolerParams,
    clusters: usize,
    /// Context width per provider.
    providers: Vec<usize>,
    offsets: Vec<usize>,
    ctx_dim: usize,
    sequences: Vec<Sequence>,
    events: u64,
}

impl SequenceLibrary {
    pub fn new(clusters: usize, providers: Vec<usize>, params: TemporalPoolerParams) -> Result<Self> {
        params.validate()?;
        if clusters == 0 {
            return Err(Error::InvalidParameter("clusters must be > 0".into()));
        }
        let mut offsets = Vec::with_capacity(providers.len());
        let mut ctx_dim = 0;
        for &w in &providers {
            offsets.push(ctx_dim);
            ctx_dim += w;
        }
        Ok(SequenceLibrary {
            params,
            clusters,
            providers,
            offsets,
            ctx_dim,
            sequences: Vec::new(),
            events: 0,
        })
    }

    pub fn params(&self) -> &TemporalPoolerParams {
        &self.params
    }

    pub fn clusters(&self) -> usize {
        self.clusters
    }

    pub fn providers(&self) -> &[usize] {
        &self.providers
    }

    pub fn provider_range(&self, p: usize) -> std::ops::Range<usize> {
        self.offsets[p]..self.offsets[p] + self.providers[p]
    }

    pub fn context_dim(&self) -> usize {
        self.ctx_dim
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn sequences(&self) -> &[Sequence] {
        &self.sequences
    }

    pub(crate) fn sequences_mut(&mut self) -> &mut [Sequence] {
        &mut self.sequences
    }

    pub fn find(&self, clusters: &[usize]) -> Option<usize> {
        self.sequences.iter().position(|s| s.clusters == clusters)
    }

    /// Priors normalized to sum to one.
    pub fn normalized_priors(&self) -> Vec<f64> {
        normalize(&self.sequences.iter().map(|s| s.prior).collect::<Vec<_>>())
    }

    /// Smoothed, clamped likelihood of context element `e` at `pos` in `s`.
    pub fn context_likelihood_at(&self, s: usize, pos: usize, e: usize) -> f64 {
        let seq = &self.sequences[s];
        let l = (seq.ctx_success[pos * self.ctx_dim + e] + 1.0) / (seq.ctx_total[pos] + 2.0);
        let floor = self.params.context_floor;
        l.clamp(floor, 1.0 - floor)
    }

    /// Inserts or reinforces a window of `m` clusters and accumulates its
    /// aligned contexts. Returns the sequence's index after any eviction.
    pub fn record(&mut self, window: &[usize], contexts: &[&[f64]]) -> Result<usize> {
        let m = self.params.seq_len();
        check_dim("sequence window", m, window.len())?;
        check_dim("context window", m, contexts.len())?;
        for c in contexts {
            check_dim("context", self.ctx_dim, c.len())?;
        }
        self.events += 1;
        let decay = self.params.prior_decay;
        if decay < 1.0 {
            self.sequences.iter_mut().for_each(|s| s.prior *= decay);
        }
        let mut idx = match self.find(window) {
            Some(i) => i,
            None => {
                self.sequences.push(Sequence::new(
                    window.to_vec(),
                    self.events,
                    self.ctx_dim,
                    self.params.lookahead,
                ));
                self.sequences.len() - 1
            }
        };
        let d = self.ctx_dim;
        let seq = &mut self.sequences[idx];
        seq.prior += 1.0;
        for (pos, c) in contexts.iter().enumerate() {
            seq.ctx_total[pos] += 1.0;
            for (acc, v) in seq.ctx_success[pos * d..(pos + 1) * d].iter_mut().zip(c.iter()) {
                *acc += v;
            }
        }
        if self.sequences.len() > self.params.max_sequences {
            let victim = self.eviction_candidate(idx);
            self.sequences.remove(victim);
            if victim < idx {
                idx -= 1;
            }
        }
        Ok(idx)
    }

    /// Lowest prior (oldest on ties), never the sequence just recorded.
    fn eviction_candidate(&self, keep: usize) -> usize {
        let mut best: Option<usize> = None;
        for (i, s) in self.sequences.iter().enumerate() {
            if i == keep {
                continue;
            }
            best = match best {
                Some(b) => {
                    let o = &self.sequences[b];
                    if s.prior < o.prior || (s.prior == o.prior && s.stamp < o.stamp) {
                        Some(i)
                    } else {
                        Some(b)
                    }
                }
                None => Some(i),
            };
        }
        best.expect("library holds at least two sequences when evicting")
    }

    /// Unnormalized match probabilities. `history` holds the most recent
    /// winners, oldest first; missing early positions are neutral.
    pub fn match_probs(&self, history: &[usize]) -> Vec<f64> {
        let th = self.params.lookbehind;
        let eps = self.params.epsilon;
        let take = history.len().min(th + 1);
        let recent = &history[history.len() - take..];
        let first = th + 1 - take;
        let priors = self.normalized_priors();
        self.sequences
            .iter()
            .zip(priors)
            .map(|(s, p)| {
                recent.iter().enumerate().fold(p, |acc, (j, &x)| {
                    acc * if s.clusters[first + j] == x { 1.0 - eps } else { eps }
                })
            })
            .collect()
    }

    /// Context likelihood of each sequence under provider `p`. Each
    /// lookbehind position contributes the observed-mass-weighted average of
    /// the stored likelihoods; positions without history are neutral.
    pub fn context_likelihood(&self, p: usize, ctx_history: &[&[f64]]) -> Result<Vec<f64>> {
        if p >= self.providers.len() {
            return Err(Error::UnknownProvider {
                provider: p,
                count: self.providers.len(),
            });
        }
        let th = self.params.lookbehind;
        let floor = self.params.context_floor;
        let range = self.provider_range(p);
        let take = ctx_history.len().min(th + 1);
        let recent = &ctx_history[ctx_history.len() - take..];
        let first = th + 1 - take;
        for c in recent {
            check_dim("context", self.ctx_dim, c.len())?;
        }
        let mut out = vec![1.0; self.sequences.len()];
        for (j, c) in recent.iter().enumerate() {
            let pos = first + j;
            let obs = &c[range.clone()];
            let mass: f64 = obs.iter().sum();
            let active: Vec<(usize, f64)> =
                obs.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(k, v)| (range.start + k, *v)).collect();
            for (s, o) in out.iter_mut().enumerate() {
                let factor = if mass > 0.0 {
                    let dot: f64 = active.iter().map(|&(e, v)| v * self.context_likelihood_at(s, pos, e)).sum();
                    (dot / mass).max(floor)
                } else {
                    floor
                };
                *o *= factor;
            }
        }
        Ok(out)
    }

    /// Goal satisfaction `P(c(t+f) = g | s)` for provider `p` at future step
    /// `f`: goal-weighted average of the current-cluster half of the stored
    /// likelihoods. Returns `None` when the goal carries no mass.
    pub fn goal_likelihood(&self, s: usize, p: usize, f: usize, goal: &[f64]) -> Option<f64> {
        let mass: f64 = goal.iter().map(|g| g.max(0.0)).sum();
        if mass <= 0.0 {
            return None;
        }
        let pos = self.params.lookbehind + f;
        let start = self.offsets[p];
        let dot: f64 = goal
            .iter()
            .enumerate()
            .filter(|(_, g)| **g > 0.0)
            .map(|(k, g)| g * self.context_likelihood_at(s, pos, start + k))
            .sum();
        Some(dot / mass)
    }

    /// Next-cluster distribution from sequence probabilities; uniform if
    /// the library is empty or carries no mass.
    pub fn predict_next(&self, probs: &[f64]) -> Vec<f64> {
        let k = self.clusters;
        let mut out = vec![0.0; k];
        let next = self.params.lookbehind + 1;
        for (s, p) in self.sequences.iter().zip(probs) {
            out[s.clusters[next]] += p;
        }
        let total: f64 = out.iter().sum();
        if total > 0.0 {
            out.iter_mut().for_each(|v| *v /= total);
            out
        } else {
            vec![1.0 / k as f64; k]
        }
    }

    /// DOT graph: one node per cluster, one edge per adjacent pair with the
    /// summed normalized prior of the sequences containing it.
    pub fn to_dot(&self, name: &str) -> String {
        let priors = self.normalized_priors();
        let mut edges: std::collections::BTreeMap<(usize, usize), f64> = Default::default();
        for (s, p) in self.sequences.iter().zip(&priors) {
            for w in s.clusters.windows(2) {
                *edges.entry((w[0], w[1])).or_default() += p;
            }
        }
        let mut out = String::new();
        let _ = writeln!(out, "digraph \"{name}\" {{");
        for k in 0..self.clusters {
            let _ = writeln!(out, "  {k};");
        }
        for ((a, b), w) in edges {
            let _ = writeln!(out, "  {a} -> {b} [weight={w:.6}, label=\"{w:.3}\"];");
        }
        out.push_str("}\n");
        out
    }
}

/// Posterior over sequences: `normalize(match · context)`.
pub fn posterior_probs(matched: &[f64], context: Option<&[f64]>) -> Vec<f64> {
    match context {
        Some(c) => normalize(&matched.iter().zip(c).map(|(a, b)| a * b).collect::<Vec<_>>()),
        None => normalize(matched),
    }
}

/// Provider whose context most changes the match distribution, measured
/// as `KL(normalize(P̄) || normalize(P̄ · P_c))`. Ties go to the lowest index.
pub fn select_context(matched: &[f64], per_provider: &[Vec<f64>]) -> Option<usize> {
    const TIE: f64 = 1e-12;
    let base = normalize(matched);
    let mut best: Option<(usize, f64)> = None;
    for (p, pc) in per_provider.iter().enumerate() {
        let cond = posterior_probs(matched, Some(pc));
        let kl = kl_divergence(&base, &cond);
        if best.is_none_or(|(_, b)| kl > b + TIE) {
            best = Some((p, kl));
        }
    }
    best.map(|(p, _)| p)
}

/// Library plus the rolling histories of winners and contexts it learns from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalPooler {
    library: SequenceLibrary,
    x_history: VecDeque<usize>,
    c_history: VecDeque<Vec<f64>>,
}

impl TemporalPooler {
    pub fn new(clusters: usize, providers: Vec<usize>, params: TemporalPoolerParams) -> Result<Self> {
        let m = params.seq_len();
        Ok(TemporalPooler {
            library: SequenceLibrary::new(clusters, providers, params)?,
            x_history: VecDeque::with_capacity(m),
            c_history: VecDeque::with_capacity(m),
        })
    }

    pub fn library(&self) -> &SequenceLibrary {
        &self.library
    }

    pub fn library_mut(&mut self) -> &mut SequenceLibrary {
        &mut self.library
    }

    pub fn history(&self) -> Vec<usize> {
        self.x_history.iter().copied().collect()
    }

    pub fn last_winner(&self) -> Option<usize> {
        self.x_history.back().copied()
    }

    pub fn context_history(&self) -> Vec<&[f64]> {
        self.c_history.iter().map(Vec::as_slice).collect()
    }

    /// Appends a new winner and its context. When `learn` is set and a full
    /// window is available it is recorded; the recorded index is returned.
    pub fn observe_event(&mut self, x: usize, ctx: &[f64], learn: bool) -> Result<Option<usize>> {
        if x >= self.library.clusters() {
            return Err(Error::DimensionMismatch {
                what: "cluster index",
                expected: self.library.clusters(),
                actual: x,
            });
        }
        check_dim("context", self.library.context_dim(), ctx.len())?;
        if self.last_winner() == Some(x) {
            return Err(Error::GateViolation { winner: x });
        }
        let m = self.library.params().seq_len();
        if self.x_history.len() == m {
            self.x_history.pop_front();
            self.c_history.pop_front();
        }
        self.x_history.push_back(x);
        self.c_history.push_back(ctx.to_vec());
        if !learn || self.x_history.len() < m {
            return Ok(None);
        }
        let window: Vec<usize> = self.x_history.iter().copied().collect();
        let contexts: Vec<&[f64]> = self.c_history.iter().map(Vec::as_slice).collect();
        self.library.record(&window, &contexts).map(Some)
    }

    /// Sequence probabilities for the current history: match, per-provider
    /// context likelihood, selected provider and posterior.
    pub fn infer(&self) -> Result<Inference> {
        let history = self.history();
        let matched = self.library.match_probs(&history);
        let ctx = self.context_history();
        let per_provider = (0..self.library.providers().len())
            .map(|p| self.library.context_likelihood(p, &ctx))
            .collect::<Result<Vec<_>>>()?;
        let provider = select_context(&matched, &per_provider);
        let posterior = posterior_probs(&matched, provider.map(|p| per_provider[p].as_slice()));
        Ok(Inference {
            matched,
            provider,
            posterior,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub matched: Vec<f64>,
    pub provider: Option<usize>,
    pub posterior: Vec<f64>,
}
