//! One Expert: a spatial pooler feeding a temporal pooler, with context
//! and goal outputs, a reward model and an influence model.

use std::collections::VecDeque;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::math::{argmax, entropy_bits, normalize, sq_dist, OneHot};
use crate::spatial_pooler::{ClusterModel, SpatialPoolerParams};
use crate::temporal_pooler::{SequenceLibrary, TemporalPooler, TemporalPoolerParams};

/// Action/goal selection function applied to a score vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    Identity,
    Greedy,
    EpsilonGreedy,
    Sample,
    EpsilonSample,
}

impl Selection {
    fn stochastic(self) -> Self {
        match self {
            Selection::Greedy => Selection::Sample,
            Selection::EpsilonGreedy => Selection::EpsilonSample,
            other => other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertParams {
    pub spatial: SpatialPoolerParams,
    pub temporal: TemporalPoolerParams,
    /// Defaults to `epsilon_greedy` for the acting Expert, `identity` otherwise.
    pub selection: Option<Selection>,
    pub exploration: f64,
    pub discount: f64,
    /// Lower bound of the reward moving-average rate.
    pub reward_rate: f64,
    /// Spatial pooler trains every this many ticks.
    pub learn_period: u64,
    pub usage_window: usize,
}

impl Default for ExpertParams {
    fn default() -> Self {
        ExpertParams {
            spatial: SpatialPoolerParams::default(),
            temporal: TemporalPoolerParams::default(),
            selection: None,
            exploration: 0.05,
            discount: 0.9,
            reward_rate: 0.1,
            learn_period: 1,
            usage_window: 200,
        }
    }
}

impl ExpertParams {
    pub fn validate(&self) -> Result<()> {
        self.spatial.validate()?;
        self.temporal.validate()?;
        if !(0.0..=1.0).contains(&self.exploration) {
            return Err(Error::InvalidParameter("exploration must be in [0, 1]".into()));
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(Error::InvalidParameter("discount must be in (0, 1]".into()));
        }
        if !(self.reward_rate > 0.0 && self.reward_rate <= 1.0) {
            return Err(Error::InvalidParameter("reward_rate must be in (0, 1]".into()));
        }
        if self.learn_period == 0 || self.usage_window == 0 {
            return Err(Error::InvalidParameter("learn_period and usage_window must be > 0".into()));
        }
        Ok(())
    }
}

/// One row of the per-Expert metrics log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub step: u64,
    pub fired: bool,
    pub reco_error: f64,
    pub pred_error_hidden: f64,
    pub pred_error_obs: f64,
    pub reward_accum: f64,
    pub selected_provider: Option<usize>,
    pub entropy: f64,
}

impl Metrics {
    pub const HEADER: [&'static str; 8] = [
        "step",
        "fired",
        "recoError",
        "predErrorHidden",
        "predErrorObs",
        "rewardAccum",
        "selectedProvider",
        "entropy",
    ];

    pub fn record(&self) -> [String; 8] {
        [
            self.step.to_string(),
            u8::from(self.fired).to_string(),
            self.reco_error.to_string(),
            self.pred_error_hidden.to_string(),
            self.pred_error_obs.to_string(),
            self.reward_accum.to_string(),
            self.selected_provider.map_or(-1, |p| p as i64).to_string(),
            self.entropy.to_string(),
        ]
    }

    /// Name of the first non-finite metric, if any.
    pub fn non_finite(&self) -> Option<&'static str> {
        [
            ("recoError", self.reco_error),
            ("predErrorHidden", self.pred_error_hidden),
            ("predErrorObs", self.pred_error_obs),
            ("rewardAccum", self.reward_accum),
            ("entropy", self.entropy),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

/// Output projection: current winner plus, per cluster, the soft-indicator
/// evidence of every position of every sequence weighted by its
/// probability; normalized.
pub fn output_projection(lib: &SequenceLibrary, probs: &[f64], winner: usize) -> Vec<f64> {
    let k = lib.clusters();
    let eps = lib.params().epsilon;
    let m = lib.params().seq_len() as f64;
    let mut y = vec![0.0; k];
    y[winner] = 1.0;
    let mut background = 0.0;
    for (s, &p) in lib.sequences().iter().zip(probs) {
        if p == 0.0 {
            continue;
        }
        // every cluster collects eps per position; matches add 1 - 2 eps
        background += p * m * eps;
        for &c in &s.clusters {
            y[c] += p * (1.0 - 2.0 * eps);
        }
    }
    if background > 0.0 {
        y.iter_mut().for_each(|v| *v += background);
    }
    normalize(&y)
}

/// Goal-weighted sum of the row-normalized probabilities that each
/// provider's current cluster is each of its clusters at position `pos` of
/// sequence `s`.
fn goal_value(lib: &SequenceLibrary, goals: &[(usize, &[f64])], s: usize, pos: usize) -> f64 {
    goals
        .iter()
        .map(|(p, g)| {
            let start = lib.provider_range(*p).start;
            let mut total = 0.0;
            let mut dot = 0.0;
            for (k, &gk) in g.iter().enumerate() {
                let l = lib.context_likelihood_at(s, pos, start + k);
                total += l;
                if gk != 0.0 {
                    dot += gk * l;
                }
            }
            if total > 0.0 { dot / total } else { 0.0 }
        })
        .sum()
}

fn goal_mass(goal_in: &[Vec<f64>]) -> bool {
    goal_in.iter().any(|g| g.iter().any(|&v| v > 0.0))
}

/// Goal satisfaction per sequence: the best future step and its value,
/// summed over providers. `None` when no provider sends a goal.
pub fn goal_terms(lib: &SequenceLibrary, goal_in: &[Vec<f64>]) -> Option<Vec<(f64, usize)>> {
    if !goal_mass(goal_in) {
        return None;
    }
    let th = lib.params().lookbehind;
    let tf = lib.params().lookahead;
    let goals: Vec<(usize, Vec<f64>)> = goal_in
        .iter()
        .enumerate()
        .filter(|(_, g)| g.iter().any(|&v| v > 0.0))
        .map(|(p, g)| (p, normalize(&g.iter().map(|v| v.max(0.0)).collect::<Vec<_>>())))
        .collect();
    let goals: Vec<(usize, &[f64])> = goals.iter().map(|(p, g)| (*p, g.as_slice())).collect();
    let terms = (0..lib.len())
        .map(|s| {
            let mut best = (f64::NEG_INFINITY, 1);
            for f in 1..=tf {
                let v = goal_value(lib, &goals, s, th + f);
                if v > best.0 {
                    best = (v, f);
                }
            }
            best
        })
        .collect();
    Some(terms)
}

/// `P^G(s) = P(s) · Π_{f ≤ h_s} I(s, f)`.
pub fn influence_adjusted_probs(lib: &SequenceLibrary, probs: &[f64], horizons: &[usize]) -> Vec<f64> {
    lib.sequences()
        .iter()
        .zip(probs)
        .zip(horizons)
        .map(|((s, &p), &h)| (1..=h).fold(p, |acc, f| acc * s.influence(f)))
        .collect()
}

/// `P_A(s) = normalize(P^G(s) · max(floor, goal term))`; a missing goal
/// leaves the distribution unchanged apart from normalization.
pub fn goal_weighted_probs(lib: &SequenceLibrary, p_g: &[f64], terms: Option<&[(f64, usize)]>) -> Vec<f64> {
    let floor = lib.params().context_floor;
    match terms {
        Some(t) => normalize(&p_g.iter().zip(t).map(|(p, (v, _))| p * v.max(floor)).collect::<Vec<_>>()),
        None => normalize(p_g),
    }
}

/// Expected reward per next cluster. For each sequence the promised
/// reward at future step `f` is the goal-weighted provider cluster
/// probability plus the own reward estimate; the best step, discounted and
/// scaled by the chained influence and the sequence probability, is added
/// to the sequence's successor cluster.
pub fn expected_rewards(lib: &SequenceLibrary, goal_in: &[Vec<f64>], probs: &[f64], discount: f64) -> Vec<f64> {
    let th = lib.params().lookbehind;
    let tf = lib.params().lookahead;
    let mut out = vec![0.0; lib.clusters()];
    let goals: Vec<(usize, &[f64])> = goal_in
        .iter()
        .enumerate()
        .filter(|(_, g)| g.iter().any(|&v| v != 0.0))
        .map(|(p, g)| (p, g.as_slice()))
        .collect();
    for (i, (s, &p)) in lib.sequences().iter().zip(probs).enumerate() {
        if p <= 0.0 {
            continue;
        }
        let mut best = 0.0f64;
        let mut chain = 1.0;
        let mut disc = 1.0;
        for f in 1..=tf {
            chain *= s.influence(f);
            disc *= discount;
            let promised = goal_value(lib, &goals, i, th + f) + s.reward[f - 1];
            best = best.max(promised * chain * disc);
        }
        out[s.clusters[th + 1]] += best * p;
    }
    out
}

/// Applies a selection function. Greedy picks the lowest index among ties;
/// sampling draws proportionally to the positive part, or uniformly when
/// there is none.
pub fn select_goal<R: Rng>(scores: &[f64], theta: Selection, epsilon: f64, rng: &mut R) -> Vec<f64> {
    let k = scores.len();
    let one_hot = |i: usize| OneHot::new(i, k).to_dense();
    let explore = |rng: &mut R| epsilon > 0.0 && rng.random::<f64>() < epsilon;
    match theta {
        Selection::Identity => scores.to_vec(),
        Selection::Greedy => one_hot(argmax(scores).unwrap_or(0)),
        Selection::EpsilonGreedy => {
            if explore(rng) {
                one_hot(rng.random_range(0..k))
            } else {
                one_hot(argmax(scores).unwrap_or(0))
            }
        }
        Selection::Sample => one_hot(sample_index(scores, rng)),
        Selection::EpsilonSample => {
            if explore(rng) {
                one_hot(rng.random_range(0..k))
            } else {
                one_hot(sample_index(scores, rng))
            }
        }
    }
}

fn sample_index<R: Rng>(scores: &[f64], rng: &mut R) -> usize {
    let total: f64 = scores.iter().map(|v| v.max(0.0)).sum();
    if total <= 0.0 {
        return rng.random_range(0..scores.len());
    }
    let mut u = rng.random::<f64>() * total;
    for (i, v) in scores.iter().enumerate() {
        let w = v.max(0.0);
        if u < w {
            return i;
        }
        u -= w;
    }
    scores.iter().rposition(|&v| v > 0.0).unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expert {
    params: ExpertParams,
    selection: Selection,
    sp: ClusterModel,
    tp: TemporalPooler,
    action_slice: Option<Range<usize>>,
    rng: ChaCha8Rng,
    learning: bool,
    exploration: f64,
    tick: u64,
    winner: Option<usize>,
    y: Vec<f64>,
    co: Vec<f64>,
    go: Vec<f64>,
    prediction: Vec<f64>,
    posterior: Vec<f64>,
    /// Scores an acting Expert reselects from on every tick.
    scores: Vec<f64>,
    score_selection: Selection,
    /// Uniformly drawn action overriding the goal on exploring ticks.
    random_action: Option<usize>,
    /// Goals that failed to fire an event since the last one.
    tried: Vec<usize>,
    reward_acc: f64,
    reward_history: VecDeque<f64>,
    metrics: Metrics,
    usage_recent: VecDeque<usize>,
    usage_counts: Vec<usize>,
}

impl Expert {
    /// `providers` lists the context width (2K) of each context provider.
    pub fn new(
        input_dim: usize,
        providers: Vec<usize>,
        params: ExpertParams,
        action_slice: Option<Range<usize>>,
        seed: u64,
    ) -> Result<Self> {
        params.validate()?;
        let acting = action_slice.is_some();
        let selection = params.selection.unwrap_or(if acting {
            Selection::EpsilonGreedy
        } else {
            Selection::Identity
        });
        if acting && selection == Selection::Identity {
            return Err(Error::InvalidParameter("the acting Expert cannot use identity selection".into()));
        }
        if let Some(r) = &action_slice {
            if r.start >= r.end || r.end > input_dim {
                return Err(Error::InvalidParameter(format!(
                    "action slice {}..{} outside input of width {input_dim}",
                    r.start, r.end
                )));
            }
        }
        let k = params.spatial.clusters;
        let sp = ClusterModel::new(input_dim, params.spatial.clone(), seed)?;
        let tp = TemporalPooler::new(k, providers, params.temporal.clone())?;
        let uniform = vec![1.0 / k as f64; k];
        Ok(Expert {
            selection,
            sp,
            tp,
            action_slice,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15),
            learning: true,
            exploration: params.exploration,
            tick: 0,
            winner: None,
            y: vec![0.0; k],
            co: vec![0.0; 2 * k],
            go: vec![0.0; k],
            prediction: uniform.clone(),
            posterior: Vec::new(),
            scores: uniform,
            score_selection: selection.stochastic(),
            random_action: None,
            tried: Vec::new(),
            reward_acc: 0.0,
            reward_history: VecDeque::new(),
            metrics: Metrics {
                step: 0,
                fired: false,
                reco_error: 0.0,
                pred_error_hidden: 0.0,
                pred_error_obs: 0.0,
                reward_accum: 0.0,
                selected_provider: None,
                entropy: 0.0,
            },
            usage_recent: VecDeque::new(),
            usage_counts: vec![0; k],
            params,
        })
    }

    pub fn params(&self) -> &ExpertParams {
        &self.params
    }

    pub fn clusters(&self) -> usize {
        self.sp.clusters()
    }

    pub fn input_dim(&self) -> usize {
        self.sp.dim()
    }

    pub fn selection(&self) -> Selection {
        self.selection
    }

    pub fn is_acting(&self) -> bool {
        self.action_slice.is_some()
    }

    pub fn action_slice(&self) -> Option<Range<usize>> {
        self.action_slice.clone()
    }

    pub fn spatial(&self) -> &ClusterModel {
        &self.sp
    }

    pub fn spatial_mut(&mut self) -> &mut ClusterModel {
        &mut self.sp
    }

    pub fn temporal(&self) -> &TemporalPooler {
        &self.tp
    }

    pub fn library(&self) -> &SequenceLibrary {
        self.tp.library()
    }

    pub fn winner(&self) -> Option<usize> {
        self.winner
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn co(&self) -> &[f64] {
        &self.co
    }

    pub fn go(&self) -> &[f64] {
        &self.go
    }

    /// Values the last goal was selected from.
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn prediction(&self) -> &[f64] {
        &self.prediction
    }

    pub fn posterior(&self) -> &[f64] {
        &self.posterior
    }

    pub fn reward_accumulator(&self) -> f64 {
        self.reward_acc
    }

    pub fn metrics(&self) -> &Metrics {
        &self.metrics
    }

    pub fn is_learning(&self) -> bool {
        self.learning
    }

    /// Stops all learning and exploration.
    pub fn freeze(&mut self) {
        self.learning = false;
        self.exploration = 0.0;
    }

    /// Cluster usage over the recent window, as fractions of the window.
    pub fn usage(&self) -> Vec<f64> {
        let n = self.usage_recent.len().max(1) as f64;
        self.usage_counts.iter().map(|&c| c as f64 / n).collect()
    }

    /// Action embedded in the center of the currently preferred cluster, or
    /// the random action drawn on an exploring tick.
    pub fn emit_action(&self) -> Option<Vec<f64>> {
        let slice = self.action_slice.clone()?;
        if let Some(a) = self.random_action {
            return Some(OneHot::new(a, slice.len()).to_dense());
        }
        let k = argmax(&self.go).unwrap_or(0);
        Some(self.sp.center(k)[slice].to_vec())
    }

    /// Classifies a group-iteration candidate without side effects.
    pub fn nearest(&self, obs: &[f64]) -> Result<usize> {
        self.sp.nearest(obs)
    }

    /// One scheduler step. `ctx_in` is the concatenated context of all
    /// providers; `goal_in` holds one goal vector per provider (empty or
    /// zero when absent). Returns whether the Expert fired.
    pub fn step(&mut self, obs: &[f64], ctx_in: &[f64], goal_in: &[Vec<f64>], reward: f64) -> Result<bool> {
        check_dim("observation", self.sp.dim(), obs.len())?;
        check_dim("context input", self.library().context_dim(), ctx_in.len())?;
        let providers = self.library().providers().len();
        if goal_in.len() > providers {
            return Err(Error::UnknownProvider {
                provider: goal_in.len() - 1,
                count: providers,
            });
        }
        for (p, g) in goal_in.iter().enumerate() {
            if !g.is_empty() {
                check_dim("goal input", self.library().providers()[p] / 2, g.len())?;
            }
        }
        let k = self.sp.classify(obs)?.index();
        let reco = sq_dist(obs, self.sp.center(k));
        if self.learning {
            self.sp.remember(obs)?;
            if self.tick % self.params.learn_period == 0 {
                self.sp.train();
            }
        }
        self.sp.advance();
        self.reward_acc += reward;
        self.track_usage(k);

        let fired = self.winner != Some(k);
        self.metrics.step = self.tick;
        self.metrics.fired = fired;
        self.metrics.reco_error = reco;
        self.metrics.reward_accum = self.reward_acc;
        if fired {
            self.on_event(k, obs, ctx_in, goal_in)?;
        } else if self.is_acting() {
            self.choose_action(false);
        }
        self.tick += 1;
        Ok(fired)
    }

    /// With probability `exploration` the acting Expert emits a uniformly
    /// random action and sets no goal. Otherwise it selects a goal cluster
    /// other than the current one, skipping goals already tried since the
    /// last event: a goal still in force on a tick without an event failed.
    fn choose_action(&mut self, fresh: bool) {
        if fresh {
            self.tried.clear();
        } else if let Some(g) = argmax(&self.go).filter(|&g| self.go[g] > 0.0) {
            self.tried.push(g);
        }
        let width = self.action_slice.as_ref().map_or(0, |r| r.len());
        if width > 0 && self.exploration > 0.0 && self.rng.random::<f64>() < self.exploration {
            self.random_action = Some(self.rng.random_range(0..width));
            self.go = vec![0.0; self.clusters()];
            return;
        }
        self.random_action = None;
        let mut scores = self.scores.clone();
        let current = self.winner.into_iter();
        if self.tried.len() + 1 >= scores.len() {
            self.tried.clear();
        }
        for k in current.chain(self.tried.iter().copied()) {
            scores[k] = f64::NEG_INFINITY;
        }
        self.go = select_goal(&scores, self.score_selection, 0.0, &mut self.rng);
    }

    fn track_usage(&mut self, k: usize) {
        if self.usage_recent.len() == self.params.usage_window {
            if let Some(old) = self.usage_recent.pop_front() {
                self.usage_counts[old] -= 1;
            }
        }
        self.usage_recent.push_back(k);
        self.usage_counts[k] += 1;
    }

    fn on_event(&mut self, k: usize, obs: &[f64], ctx_in: &[f64], goal_in: &[Vec<f64>]) -> Result<()> {
        let clusters = self.clusters();
        let hot = OneHot::new(k, clusters).to_dense();
        self.metrics.pred_error_hidden = sq_dist(&hot, &self.prediction);
        let guess = argmax(&self.prediction).unwrap_or(0);
        self.metrics.pred_error_obs = sq_dist(obs, self.sp.center(guess));

        if self.learning {
            self.update_influence(k);
        }
        let m = self.params.temporal.seq_len();
        if self.reward_history.len() == m {
            self.reward_history.pop_front();
        }
        self.reward_history.push_back(self.reward_acc);
        self.reward_acc = 0.0;

        let recorded = self.tp.observe_event(k, ctx_in, self.learning)?;
        if let Some(idx) = recorded {
            self.update_reward(idx);
        }
        self.winner = Some(k);

        let inf = self.tp.infer()?;
        let lib = self.tp.library();
        self.prediction = lib.predict_next(&inf.posterior);
        self.y = output_projection(lib, &inf.posterior, k);
        self.co.clear();
        self.co.extend_from_slice(&hot);
        self.co.extend_from_slice(&self.prediction);

        let terms = goal_terms(lib, goal_in);
        let active = self.is_acting() || terms.is_some();
        let p_a = if active {
            let horizons: Vec<usize> = match &terms {
                Some(t) => t.iter().map(|(_, f)| *f).collect(),
                None => vec![1; lib.len()],
            };
            let p_g = influence_adjusted_probs(lib, &inf.posterior, &horizons);
            goal_weighted_probs(lib, &p_g, terms.as_deref())
        } else {
            inf.posterior.clone()
        };
        let expected = expected_rewards(lib, goal_in, &inf.posterior, self.params.discount);

        if self.is_acting() {
            if expected.iter().any(|&v| v > 0.0) {
                self.scores = expected;
                self.score_selection = self.selection;
            } else {
                self.scores = lib.predict_next(&p_a);
                self.score_selection = self.selection.stochastic();
            }
            self.choose_action(true);
        } else {
            let explore = self.exploration > 0.0 && self.rng.random::<f64>() < self.exploration;
            self.go = if explore {
                let scale = expected.iter().copied().fold(1.0, f64::max);
                let mut g = vec![0.0; clusters];
                g[self.rng.random_range(0..clusters)] = scale;
                g
            } else {
                select_goal(&expected, self.selection, 0.0, &mut self.rng)
            };
        }

        self.metrics.selected_provider = inf.provider;
        self.metrics.entropy = entropy_bits(&inf.posterior);
        self.posterior = inf.posterior;
        Ok(())
    }

    /// Credits the previous goal: every sequence that, aligned with the
    /// history, had the attempted cluster as its next step gains an
    /// attempt, and a success if the new winner is that cluster.
    fn update_influence(&mut self, k: usize) {
        let Some(target) = argmax(&self.go).filter(|&t| self.go[t] > 0.0) else {
            return;
        };
        let th = self.params.temporal.lookbehind;
        let tf = self.params.temporal.lookahead;
        let history = self.tp.history();
        let lib = self.tp.library_mut();
        for f in 1..=tf {
            let n = th + f;
            if history.len() < n {
                break;
            }
            let tail = &history[history.len() - n..];
            for s in lib.sequences_mut() {
                if s.clusters[n] == target && s.clusters[..n] == *tail {
                    s.influence_attempts[f - 1] += 1.0;
                    if k == target {
                        s.influence_success[f - 1] += 1.0;
                    }
                }
            }
        }
    }

    /// Moving-average reward estimate for each future step of the window
    /// just recorded.
    fn update_reward(&mut self, idx: usize) {
        let th = self.params.temporal.lookbehind;
        let tf = self.params.temporal.lookahead;
        let rate = self.params.reward_rate;
        let rewards: Vec<f64> = self.reward_history.iter().copied().collect();
        if rewards.len() < th + 1 + tf {
            return;
        }
        let s = &mut self.tp.library_mut().sequences_mut()[idx];
        for f in 1..=tf {
            s.reward_updates[f - 1] += 1;
            let alpha = rate.max(1.0 / s.reward_updates[f - 1] as f64);
            s.reward[f - 1] += alpha * (rewards[th + f] - s.reward[f - 1]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::temporal_pooler::posterior_probs;
    use proptest::prelude::*;

    fn tparams(th: usize, tf: usize) -> TemporalPoolerParams {
        TemporalPoolerParams {
            lookbehind: th,
            lookahead: tf,
            prior_decay: 1.0,
            ..Default::default()
        }
    }

    fn lib_with(k: usize, th: usize, tf: usize, windows: &[&[usize]]) -> SequenceLibrary {
        let mut lib = SequenceLibrary::new(k, vec![], tparams(th, tf)).unwrap();
        for w in windows {
            let ctx: Vec<&[f64]> = vec![&[]; w.len()];
            lib.record(w, &ctx).unwrap();
        }
        lib
    }

    #[test]
    fn projection_empty_library() {
        let lib = lib_with(4, 1, 1, &[]);
        assert_eq!(output_projection(&lib, &[], 2), vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn projection_single_sequence() {
        let lib = lib_with(5, 1, 1, &[&[1, 2, 3]]);
        let y = output_projection(&lib, &[1.0], 2);
        // oracle: hand evaluation of the soft-indicator sum
        let eps = 0.01;
        let hit = (1.0 - eps) + 2.0 * eps;
        let miss = 3.0 * eps;
        let raw = [miss, hit, 1.0 + hit, hit, miss];
        let total: f64 = raw.iter().sum();
        for (a, b) in y.iter().zip(raw) {
            assert!((a - b / total).abs() < 1e-12);
        }
        assert!(y[2] > y[1] && y[1] == y[3] && y[1] > y[0]);
    }

    #[test]
    fn projection_order_invariant() {
        let a = lib_with(4, 1, 1, &[&[0, 1, 2], &[1, 2, 3]]);
        let b = lib_with(4, 1, 1, &[&[1, 2, 3], &[0, 1, 2]]);
        let ya = output_projection(&a, &[0.3, 0.7], 1);
        let yb = output_projection(&b, &[0.7, 0.3], 1);
        for (x, y) in ya.iter().zip(&yb) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn fresh_influence_halves() {
        let lib = lib_with(4, 1, 2, &[&[0, 1, 2, 3]]);
        assert_eq!(influence_adjusted_probs(&lib, &[0.8], &[2]), vec![0.8 * 0.25]);
    }

    #[test]
    fn full_influence_is_passive() {
        let mut lib = lib_with(4, 1, 2, &[&[0, 1, 2, 3]]);
        for s in lib.sequences_mut() {
            s.influence_attempts = vec![1e12; 2];
            s.influence_success = vec![1e12; 2];
        }
        let v = influence_adjusted_probs(&lib, &[0.8], &[2])[0];
        assert!((v - 0.8).abs() < 1e-9);
    }

    #[test]
    fn zero_goal_keeps_distribution() {
        let lib = lib_with(4, 1, 1, &[&[0, 1, 2], &[0, 1, 3]]);
        assert!(goal_terms(&lib, &[]).is_none());
        assert_eq!(goal_weighted_probs(&lib, &[0.2, 0.6], None), normalize(&[0.2, 0.6]));
    }

    /// Three equally matched sequences; the provider's future context
    /// reaches the goal cluster never, sometimes, or always.
    fn goal_scenario() -> SequenceLibrary {
        let mut lib = SequenceLibrary::new(8, vec![6], tparams(1, 2)).unwrap();
        let here = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let delta = [0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let gamma = [0.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        for i in 0..40 {
            lib.record(&[0, 1, 2, 3], &[&here, &here, &delta, &delta]).unwrap();
            let mixed: &[f64] = if i % 2 == 0 { &gamma } else { &here };
            lib.record(&[0, 1, 4, 5], &[&here, &here, mixed, mixed]).unwrap();
            lib.record(&[0, 1, 6, 7], &[&here, &here, &gamma, &gamma]).unwrap();
        }
        lib
    }

    #[test]
    fn goal_selects_sequence_reaching_goal() {
        let lib = goal_scenario();
        let p = posterior_probs(&lib.match_probs(&[0, 1]), None);
        assert!((p[0] - p[1]).abs() < 1e-12 && (p[1] - p[2]).abs() < 1e-12);
        let goal = vec![vec![0.0, 1.0, 0.0]];
        let terms = goal_terms(&lib, &goal).unwrap();
        let p_g = influence_adjusted_probs(&lib, &p, &terms.iter().map(|t| t.1).collect::<Vec<_>>());
        let p_a = goal_weighted_probs(&lib, &p_g, Some(&terms));
        assert!(p_a[2] > p_a[1] && p_a[1] > p_a[0], "{p_a:?}");
    }

    #[test]
    fn unmatched_goal_sequence_stays_small() {
        let lib = goal_scenario();
        // history matches none of the three; sequence 2 is the only goal reacher
        let mut p = posterior_probs(&lib.match_probs(&[0, 1]), None);
        p[2] = 1e-6;
        let p = normalize(&p);
        let terms = goal_terms(&lib, &[vec![0.0, 1.0, 0.0]]).unwrap();
        let p_a = goal_weighted_probs(&lib, &p, Some(&terms));
        assert!(p_a[0] + p_a[1] > 0.99, "{p_a:?}");
    }

    #[test]
    fn expected_reward_single_term() {
        let mut lib = lib_with(4, 1, 1, &[&[0, 1, 2]]);
        let s = &mut lib.sequences_mut()[0];
        s.reward = vec![100.0];
        s.influence_attempts = vec![1e12];
        s.influence_success = vec![1e12];
        let er = expected_rewards(&lib, &[], &[1.0], 0.9);
        assert!((er[2] - 90.0).abs() < 1e-6);
        assert_eq!(er.iter().filter(|&&v| v != 0.0).count(), 1);
        let blank = lib_with(4, 1, 1, &[&[0, 1, 2]]);
        assert_eq!(expected_rewards(&blank, &[], &[1.0], 0.9), vec![0.0; 4]);
    }

    #[test]
    fn expected_reward_adds_providers() {
        let mut lib = SequenceLibrary::new(4, vec![4, 4], tparams(0, 1)).unwrap();
        let a = [1.0, 0.0, 0.0, 0.0];
        let b = [0.0, 1.0, 0.0, 0.0];
        let z = [0.0; 8];
        let ctx_a: Vec<f64> = a.iter().chain(&[0.0; 4]).copied().collect();
        let ctx_b: Vec<f64> = [0.0; 4].iter().chain(&b).copied().collect();
        for _ in 0..50 {
            lib.record(&[0, 1], &[&z, &ctx_a]).unwrap();
            lib.record(&[0, 2], &[&z, &ctx_b]).unwrap();
        }
        let goals = vec![vec![10.0, 0.0], vec![0.0, 10.0]];
        let er = expected_rewards(&lib, &goals, &[0.5, 0.5], 1.0);
        assert!(er[1] > 0.0 && er[2] > 0.0);
        let only_a = expected_rewards(&lib, &goals[..1], &[0.5, 0.5], 1.0);
        assert!(er[1] >= only_a[1]);
    }

    #[test]
    fn selection_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = vec![0.0, 0.0, 0.6, 0.4];
        assert_eq!(select_goal(&v, Selection::Identity, 0.0, &mut rng), v);
        assert_eq!(select_goal(&v, Selection::Greedy, 0.0, &mut rng), vec![0.0, 0.0, 1.0, 0.0]);
        for _ in 0..100 {
            let s = select_goal(&v, Selection::Sample, 0.0, &mut rng);
            assert!(s[2] == 1.0 || s[3] == 1.0);
        }
    }

    #[test]
    fn epsilon_one_is_uniform() {
        // chi-square goodness of fit, 9 degrees of freedom, p = 0.01 critical value
        const CRITICAL: f64 = 21.666;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let k = 10;
        let n = 10_000;
        let scores: Vec<f64> = (0..k).map(|i| i as f64).collect();
        for theta in [Selection::EpsilonGreedy, Selection::EpsilonSample] {
            let mut counts = vec![0usize; k];
            for _ in 0..n {
                let g = select_goal(&scores, theta, 1.0, &mut rng);
                counts[OneHot::from_dense(&g).unwrap().index()] += 1;
            }
            let e = n as f64 / k as f64;
            let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
            assert!(chi2 < CRITICAL, "{theta:?} chi2 {chi2}");
        }
    }

    fn centers_expert(k: usize, th: usize, acting: bool) -> Expert {
        let mut p = ExpertParams::default();
        p.spatial.clusters = k;
        p.spatial.init_std = 0.0;
        p.temporal = tparams(th, 1);
        let slice = acting.then_some(0..k);
        let mut e = Expert::new(k, vec![], p, slice, 5).unwrap();
        for i in 0..k {
            e.spatial_mut().set_center(i, &OneHot::new(i, k).to_dense()).unwrap();
        }
        e
    }

    #[test]
    fn first_step_outputs() {
        let mut e = centers_expert(4, 1, false);
        e.freeze();
        let obs = OneHot::new(2, 4).to_dense();
        assert!(e.step(&obs, &[], &[], 0.0).unwrap());
        assert_eq!(e.y(), obs.as_slice());
        assert_eq!(&e.co()[..4], obs.as_slice());
        assert_eq!(&e.co()[4..], &[0.25; 4]);
        assert_eq!(e.go(), &[0.0; 4]);
    }

    #[test]
    fn repeated_obs_is_idempotent() {
        let mut e = centers_expert(4, 1, false);
        for i in [0, 1, 2, 3, 0, 1] {
            e.step(&OneHot::new(i, 4).to_dense(), &[], &[], 0.0).unwrap();
        }
        let snapshot = e.clone();
        let obs = OneHot::new(1, 4).to_dense();
        assert!(!e.step(&obs, &[], &[], 0.0).unwrap());
        assert_eq!(e.y(), snapshot.y());
        assert_eq!(e.co(), snapshot.co());
        assert_eq!(e.go(), snapshot.go());
        assert_eq!(e.library(), snapshot.library());
    }

    #[test]
    fn reward_accumulates_between_events() {
        let mut e = centers_expert(3, 0, false);
        let a = OneHot::new(0, 3).to_dense();
        let b = OneHot::new(1, 3).to_dense();
        e.step(&a, &[], &[], 0.0).unwrap();
        e.step(&a, &[], &[], 1.0).unwrap();
        e.step(&a, &[], &[], 2.0).unwrap();
        assert_eq!(e.reward_accumulator(), 3.0);
        e.step(&b, &[], &[], 3.0).unwrap();
        assert_eq!(e.metrics().reward_accum, 6.0);
        assert_eq!(e.reward_accumulator(), 0.0);
    }

    #[test]
    fn influence_counts_follow_goal() {
        let mut e = centers_expert(3, 0, true);
        let obs = |i| OneHot::new(i, 3).to_dense();
        for i in [0, 1, 0, 1, 0] {
            e.step(&obs(i), &[], &[], 0.0).unwrap();
        }
        let idx = e.library().find(&[0, 1]).unwrap();
        let before = e.library().sequences()[idx].clone();
        e.go = obs(1);
        e.step(&obs(1), &[], &[], 0.0).unwrap();
        let idx = e.library().find(&[0, 1]).unwrap();
        let after = &e.library().sequences()[idx];
        assert_eq!(after.influence_attempts[0], before.influence_attempts[0] + 1.0);
        assert_eq!(after.influence_success[0], before.influence_success[0] + 1.0);

        e.go = obs(2);
        e.step(&obs(0), &[], &[], 0.0).unwrap();
        let idx = e.library().find(&[1, 2]);
        assert!(idx.is_none());
        let i10 = e.library().find(&[1, 0]).unwrap();
        let s = &e.library().sequences()[i10];
        assert!(s.influence_success[0] <= s.influence_attempts[0]);
    }

    #[test]
    fn influence_mismatch_counts_attempt_only() {
        let mut e = centers_expert(3, 0, true);
        let obs = |i| OneHot::new(i, 3).to_dense();
        for i in [0, 1, 0, 2, 0] {
            e.step(&obs(i), &[], &[], 0.0).unwrap();
        }
        let idx = e.library().find(&[0, 2]).unwrap();
        let before = e.library().sequences()[idx].clone();
        e.go = obs(2);
        e.step(&obs(1), &[], &[], 0.0).unwrap();
        let after = &e.library().sequences()[e.library().find(&[0, 2]).unwrap()];
        assert_eq!(after.influence_attempts[0], before.influence_attempts[0] + 1.0);
        assert_eq!(after.influence_success[0], before.influence_success[0]);
    }

    #[test]
    fn influence_matches_controllability_frequency() {
        // three states; the goal is reached with probability 0.7, otherwise
        // the remaining state is entered. Oracle: direct counting.
        let mut e = centers_expert(3, 0, true);
        e.params.exploration = 1.0;
        e.exploration = 1.0;
        let mut env_rng = ChaCha8Rng::seed_from_u64(3);
        let mut state = 0usize;
        let (mut tried, mut hit) = (0.0, 0.0);
        for _ in 0..20_000 {
            e.step(&OneHot::new(state, 3).to_dense(), &[], &[], 0.0).unwrap();
            let target = argmax(e.go()).unwrap();
            if target == state {
                continue;
            }
            let other = 3 - state - target;
            let next = if rand::Rng::random::<f64>(&mut env_rng) < 0.7 { target } else { other };
            tried += 1.0;
            if next == target {
                hit += 1.0;
            }
            state = next;
        }
        let empirical = hit / tried;
        for s in e.library().sequences() {
            let p = s.influence(1);
            assert!(p > 0.0 && p < 1.0);
            assert!((p - empirical).abs() < 0.05, "{p} vs {empirical}");
        }
    }

    #[test]
    fn emit_action_reads_center_slice() {
        let mut e = centers_expert(4, 1, true);
        e.go = OneHot::new(3, 4).to_dense();
        assert_eq!(e.emit_action().unwrap(), vec![0.0, 0.0, 0.0, 1.0]);
        let mut p = ExpertParams::default();
        p.spatial.clusters = 4;
        let fresh = Expert::new(6, vec![], p, Some(4..6), 1).unwrap();
        assert!(fresh.emit_action().unwrap().iter().all(|v| v.abs() < 0.1));
    }

    #[test]
    fn identity_rejected_for_acting() {
        let mut p = ExpertParams::default();
        p.selection = Some(Selection::Identity);
        assert!(Expert::new(4, vec![], p, Some(0..2), 1).is_err());
    }

    /// Independent passive pipeline: clustering, sequence counting and the
    /// output projection coded directly from the pooler primitives.
    struct Passive {
        sp: ClusterModel,
        tp: TemporalPooler,
        last: Option<usize>,
        y: Vec<f64>,
        co: Vec<f64>,
    }

    impl Passive {
        fn step(&mut self, obs: &[f64], ctx: &[f64], tick: u64, period: u64) {
            let k = self.sp.classify(obs).unwrap().index();
            self.sp.remember(obs).unwrap();
            if tick % period == 0 {
                self.sp.train();
            }
            self.sp.advance();
            if self.last == Some(k) {
                return;
            }
            self.last = Some(k);
            self.tp.observe_event(k, ctx, true).unwrap();
            let lib = self.tp.library();
            let matched = lib.match_probs(&self.tp.history());
            let ctx_hist = self.tp.context_history();
            let pcs: Vec<Vec<f64>> =
                (0..lib.providers().len()).map(|p| lib.context_likelihood(p, &ctx_hist).unwrap()).collect();
            let sel = crate::temporal_pooler::select_context(&matched, &pcs);
            let post = posterior_probs(&matched, sel.map(|p| pcs[p].as_slice()));
            let pred = lib.predict_next(&post);
            self.y = output_projection(lib, &post, k);
            self.co = OneHot::new(k, lib.clusters()).to_dense();
            self.co.extend(pred);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn passive_configuration_matches_passive_model(
            stream in proptest::collection::vec(0usize..6, 20..120),
            seed in 0u64..1000,
        ) {
            let mut p = ExpertParams::default();
            p.spatial.clusters = 4;
            p.spatial.init_std = 0.5;
            p.temporal = tparams(1, 1);
            p.selection = Some(Selection::Identity);
            p.exploration = 0.0;
            let mut e = Expert::new(3, vec![4], p.clone(), None, seed).unwrap();
            let mut passive = Passive {
                sp: ClusterModel::new(3, p.spatial.clone(), seed).unwrap(),
                tp: TemporalPooler::new(4, vec![4], p.temporal.clone()).unwrap(),
                last: None,
                y: vec![],
                co: vec![],
            };
            for (t, &s) in stream.iter().enumerate() {
                let obs = [(s % 3) as f64, (s / 3) as f64, 0.5];
                let ctx = [((t / 3) % 2) as f64, 0.0, 0.3, 0.7];
                e.step(&obs, &ctx, &[], 0.0).unwrap();
                passive.step(&obs, &ctx, t as u64, p.learn_period);
                if passive.last.is_some() {
                    prop_assert_eq!(e.y(), passive.y.as_slice());
                    prop_assert_eq!(e.co(), passive.co.as_slice());
                }
            }
        }

        #[test]
        fn influence_probabilities_bounded(
            stream in proptest::collection::vec(0usize..3, 2..200),
            seed in 0u64..100,
        ) {
            let mut e = centers_expert(3, 0, true);
            e.rng = ChaCha8Rng::seed_from_u64(seed);
            for &s in &stream {
                e.step(&OneHot::new(s, 3).to_dense(), &[], &[], 1.0).unwrap();
                for seq in e.library().sequences() {
                    let p = seq.influence(1);
                    prop_assert!(p > 0.0 && p < 1.0);
                    prop_assert!(seq.influence_success[0] <= seq.influence_attempts[0]);
                    prop_assert!(seq.reward.iter().all(|r| r.is_finite()));
                }
                let g = e.go();
                match e.random_action {
                    Some(a) => {
                        prop_assert!(g.iter().all(|&v| v == 0.0));
                        prop_assert_eq!(e.emit_action().unwrap(), OneHot::new(a, 3).to_dense());
                    }
                    None => prop_assert!(OneHot::from_dense(g).is_ok()),
                }
            }
        }

        #[test]
        fn expected_reward_monotone(r in 0.0f64..100.0, bump in 0.0f64..50.0, p in 0.01f64..1.0) {
            let mut lib = lib_with(4, 1, 2, &[&[0, 1, 2, 3], &[0, 1, 3, 2]]);
            lib.sequences_mut()[0].reward = vec![r, r / 2.0];
            lib.sequences_mut()[1].reward = vec![r / 3.0, r];
            let base = expected_rewards(&lib, &[], &[p, 1.0 - p], 0.9);
            lib.sequences_mut()[0].reward[1] += bump;
            let more = expected_rewards(&lib, &[], &[p, 1.0 - p], 0.9);
            for (a, b) in base.iter().zip(&more) {
                prop_assert!(b + 1e-12 >= *a);
            }
        }

        #[test]
        fn goal_relabeling_equivariance(perm_seed in 0u64..50, r in 1.0f64..100.0) {
            use rand::seq::SliceRandom;
            let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
            let mut perm: Vec<usize> = (0..5).collect();
            perm.shuffle(&mut rng);
            let windows: [&[usize]; 3] = [&[0, 1, 2], &[0, 1, 3], &[4, 1, 4]];
            let rewards = [r, r * 0.5, r * 0.25];
            let build = |map: &dyn Fn(usize) -> usize| {
                let mut lib = SequenceLibrary::new(5, vec![], tparams(1, 1)).unwrap();
                for (w, rw) in windows.iter().zip(rewards) {
                    let mapped: Vec<usize> = w.iter().map(|&c| map(c)).collect();
                    let i = lib.record(&mapped, &[&[], &[], &[]]).unwrap();
                    lib.sequences_mut()[i].reward = vec![rw];
                }
                lib
            };
            let a = build(&|c| c);
            let b = build(&|c| perm[c]);
            let ea = expected_rewards(&a, &[], &posterior_probs(&a.match_probs(&[0, 1]), None), 0.9);
            let eb = expected_rewards(&b, &[], &posterior_probs(&b.match_probs(&[perm[0], perm[1]]), None), 0.9);
            let ga = argmax(&ea).unwrap();
            let gb = argmax(&eb).unwrap();
            prop_assert_eq!(perm[ga], gb);
        }
    }
}
