//! Spatial pooler: online winner-takes-all k-means with boosting of idle
//! cluster centers.
//!
//! The forward direction maps an observation to the one-hot index of its
//! nearest center; the generative direction maps a one-hot back to the
//! center it selects. Learning is a minibatch k-means step over a ring
//! buffer of recent observations.

use std::collections::VecDeque;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::math::{sq_dist, OneHot};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpatialPoolerParams {
    /// Number of cluster centers (K).
    pub clusters: usize,
    /// Fraction of the way each center moves toward its minibatch mean.
    pub learning_rate: f64,
    /// Number of recent observations kept for learning.
    pub buffer_size: usize,
    /// A center idle for more than this many steps is boosted.
    pub boost_threshold: u64,
    /// Fraction of the way a boosted center moves per call.
    pub boost_rate: f64,
    /// Standard deviation of the zero-mean initial centers.
    pub init_std: f64,
}

impl Default for SpatialPoolerParams {
    fn default() -> Self {
        SpatialPoolerParams {
            clusters: 16,
            learning_rate: 0.1,
            buffer_size: 256,
            boost_threshold: 100,
            boost_rate: 0.1,
            init_std: 0.01,
        }
    }
}

impl SpatialPoolerParams {
    pub fn validate(&self) -> Result<()> {
        if self.clusters == 0 {
            return Err(Error::InvalidParameter("clusters must be > 0".into()));
        }
        if self.buffer_size == 0 {
            return Err(Error::InvalidParameter("buffer_size must be > 0".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::InvalidParameter("learning_rate must be in (0, 1]".into()));
        }
        if !(self.boost_rate >= 0.0 && self.boost_rate <= 1.0) {
            return Err(Error::InvalidParameter("boost_rate must be in [0, 1]".into()));
        }
        if !(self.init_std >= 0.0) {
            return Err(Error::InvalidParameter("init_std must be >= 0".into()));
        }
        Ok(())
    }
}

/// Cluster centers plus usage and buffer bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    params: SpatialPoolerParams,
    dim: usize,
    /// Row-major K x D.
    centers: Vec<f64>,
    last_win_step: Vec<u64>,
    step: u64,
    buffer: VecDeque<Vec<f64>>,
    rng_seed: u64,
    /// Cluster the idle centers are moved toward and the step it was chosen.
    boost_target: Option<(usize, u64)>,
}

impl ClusterModel {
    /// Centers are drawn i.i.d. from N(0, init_std^2).
    pub fn new(dim: usize, params: SpatialPoolerParams, seed: u64) -> Result<Self> {
        params.validate()?;
        if dim == 0 {
            return Err(Error::InvalidParameter("observation dimension must be > 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = if params.init_std > 0.0 {
            let normal = Normal::new(0.0, params.init_std)
                .map_err(|e| Error::InvalidParameter(e.to_string()))?;
            (0..params.clusters * dim).map(|_| normal.sample(&mut rng)).collect()
        } else {
            vec![0.0; params.clusters * dim]
        };
        Ok(ClusterModel {
            dim,
            last_win_step: vec![0; params.clusters],
            centers,
            step: 0,
            buffer: VecDeque::with_capacity(params.buffer_size),
            rng_seed: seed,
            boost_target: None,
            params,
        })
    }

    /// Builds a model with explicit centers (one row per cluster).
    pub fn from_centers(centers: Vec<Vec<f64>>, mut params: SpatialPoolerParams) -> Result<Self> {
        let dim = centers.first().map(Vec::len).unwrap_or(0);
        params.clusters = centers.len();
        params.validate()?;
        if dim == 0 {
            return Err(Error::InvalidParameter("centers must be non-empty".into()));
        }
        for row in &centers {
            check_dim("cluster center", dim, row.len())?;
        }
        Ok(ClusterModel {
            dim,
            last_win_step: vec![0; params.clusters],
            centers: centers.into_iter().flatten().collect(),
            step: 0,
            buffer: VecDeque::with_capacity(params.buffer_size),
            rng_seed: 0,
            boost_target: None,
            params,
        })
    }

    pub fn params(&self) -> &SpatialPoolerParams {
        &self.params
    }

    pub fn clusters(&self) -> usize {
        self.params.clusters
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn last_win_step(&self) -> &[u64] {
        &self.last_win_step
    }

    pub fn buffer_len(&self) -> usize {
        self.buffer.len()
    }

    pub fn center(&self, k: usize) -> &[f64] {
        &self.centers[k * self.dim..(k + 1) * self.dim]
    }

    pub fn centers(&self) -> impl Iterator<Item = &[f64]> {
        self.centers.chunks_exact(self.dim)
    }

    pub fn set_center(&mut self, k: usize, value: &[f64]) -> Result<()> {
        check_dim("cluster center", self.dim, value.len())?;
        self.centers[k * self.dim..(k + 1) * self.dim].copy_from_slice(value);
        Ok(())
    }

    /// Advances the pooler's step counter by one.
    pub fn advance(&mut self) {
        self.step += 1;
    }

    /// Nearest center without touching usage bookkeeping.
    pub fn nearest(&self, obs: &[f64]) -> Result<usize> {
        check_dim("observation", self.dim, obs.len())?;
        Ok(self.nearest_unchecked(obs))
    }

    fn nearest_unchecked(&self, obs: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, c) in self.centers.chunks_exact(self.dim).enumerate() {
            let d = bounded_sq_dist(c, obs, best_d);
            // strict: ties keep the lowest index
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }

    /// Winner-takes-all classification; records the win at the current step.
    pub fn classify(&mut self, obs: &[f64]) -> Result<OneHot> {
        let k = self.nearest(obs)?;
        self.last_win_step[k] = self.step;
        Ok(OneHot::new(k, self.clusters()))
    }

    /// Generative direction: `x · V` for a one-hot `x`.
    pub fn reconstruct(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("one-hot", self.clusters(), x.len())?;
        let hot = OneHot::from_dense(x)?;
        Ok(self.center(hot.index()).to_vec())
    }

    pub fn reconstruct_one_hot(&self, x: OneHot) -> Vec<f64> {
        self.center(x.index()).to_vec()
    }

    /// Appends an observation to the learning buffer, dropping the oldest.
    pub fn remember(&mut self, obs: &[f64]) -> Result<()> {
        check_dim("observation", self.dim, obs.len())?;
        if self.buffer.len() == self.params.buffer_size {
            self.buffer.pop_front();
        }
        self.buffer.push_back(obs.to_vec());
        Ok(())
    }

    pub fn clear_buffer(&mut self) {
        self.buffer.clear();
    }

    /// Nearest-center assignment of every buffered observation.
    pub fn assignments(&self) -> Vec<usize> {
        self.buffer.iter().map(|o| self.nearest_unchecked(o)).collect()
    }

    /// Total within-cluster squared distance of the buffer.
    pub fn total_cost(&self) -> f64 {
        self.buffer
            .iter()
            .map(|o| sq_dist(o, self.center(self.nearest_unchecked(o))))
            .sum()
    }

    /// One minibatch k-means step over the buffer.
    pub fn learn(&mut self) -> Result<()> {
        if self.buffer.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let assign = self.assignments();
        self.learn_with(&assign);
        Ok(())
    }

    fn learn_with(&mut self, assign: &[usize]) {
        let (sums, counts) = self.cluster_sums(assign);
        let eta = self.params.learning_rate;
        for k in 0..self.clusters() {
            if counts[k] == 0 {
                continue;
            }
            let n = counts[k] as f64;
            let row = &mut self.centers[k * self.dim..(k + 1) * self.dim];
            for (c, s) in row.iter_mut().zip(&sums[k * self.dim..(k + 1) * self.dim]) {
                *c += eta * (s / n - *c);
            }
        }
    }

    fn cluster_sums(&self, assign: &[usize]) -> (Vec<f64>, Vec<usize>) {
        let mut sums = vec![0.0; self.centers.len()];
        let mut counts = vec![0usize; self.clusters()];
        for (o, &k) in self.buffer.iter().zip(assign) {
            counts[k] += 1;
            for (s, v) in sums[k * self.dim..(k + 1) * self.dim].iter_mut().zip(o) {
                *s += v;
            }
        }
        (sums, counts)
    }

    /// Index of the populated cluster with the largest total variance
    /// (sum of squared deviations of its buffered points from their mean).
    /// A chosen target is held for `boost_threshold` steps while it stays
    /// eligible; otherwise idle centers chasing near-equal targets settle
    /// between them and never win.
    fn boost_target(&self, assign: &[usize]) -> Option<(usize, u64)> {
        let (sums, counts) = self.cluster_sums(assign);
        let mut sse = vec![0.0; self.clusters()];
        for (o, &k) in self.buffer.iter().zip(assign) {
            let n = counts[k] as f64;
            let mean = &sums[k * self.dim..(k + 1) * self.dim];
            sse[k] += o.iter().zip(mean).map(|(v, s)| (v - s / n).powi(2)).sum::<f64>();
        }
        let eligible = |k: usize| counts[k] >= 2 && sse[k] > 0.0;
        let mut best: Option<usize> = None;
        for k in (0..self.clusters()).filter(|&k| eligible(k)) {
            if best.is_none_or(|b| sse[k] > sse[b]) {
                best = Some(k);
            }
        }
        match self.boost_target {
            Some((cur, since)) if eligible(cur) && self.step - since <= self.params.boost_threshold => {
                Some((cur, since))
            }
            _ => best.map(|b| (b, self.step)),
        }
    }

    /// Moves every center idle for more than `boost_threshold` steps that
    /// owns no buffered point a fraction `boost_rate` toward the
    /// highest-variance populated center.
    pub fn boost_idle(&mut self, step: u64) {
        let assign = self.assignments();
        self.boost_with(&assign, step);
    }

    fn boost_with(&mut self, assign: &[usize], step: u64) {
        let Some((target, since)) = self.boost_target(assign) else {
            return;
        };
        self.boost_target = Some((target, since));
        let beta = self.params.boost_rate;
        let goal = self.center(target).to_vec();
        let mut owns_data = vec![false; self.clusters()];
        assign.iter().for_each(|&k| owns_data[k] = true);
        for k in 0..self.clusters() {
            let idle = step.saturating_sub(self.last_win_step[k]) > self.params.boost_threshold;
            if k == target || !idle || owns_data[k] {
                continue;
            }
            let row = &mut self.centers[k * self.dim..(k + 1) * self.dim];
            for (c, g) in row.iter_mut().zip(&goal) {
                *c += beta * (g - *c);
            }
        }
    }

    /// `learn` followed by `boost_idle`, sharing one assignment pass.
    pub fn train(&mut self) {
        if self.buffer.is_empty() {
            return;
        }
        let assign = self.assignments();
        self.learn_with(&assign);
        let assign = self.assignments();
        self.boost_with(&assign, self.step);
    }

    /// Writes centers as CSV with header `cluster_id,c0..c{D-1}`.
    pub fn write_centers_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["cluster_id".to_string()];
        header.extend((0..self.dim).map(|d| format!("c{d}")));
        w.write_record(&header)?;
        for (k, c) in self.centers().enumerate() {
            let mut row = vec![k.to_string()];
            row.extend(c.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Squared distance, abandoned once the running sum reaches `bound`. The
/// result is exact whenever it is below `bound`.
fn bounded_sq_dist(a: &[f64], b: &[f64], bound: f64) -> f64 {
    let mut acc = 0.0;
    for (ca, cb) in a.chunks(16).zip(b.chunks(16)) {
        acc += ca.iter().zip(cb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        if acc >= bound {
            return acc;
        }
    }
    acc
}

/// Sum of squared differences between an observation and its reconstruction.
pub fn reconstruction_error(obs: &[f64], obs_hat: &[f64]) -> Result<f64> {
    check_dim("reconstruction", obs.len(), obs_hat.len())?;
    Ok(sq_dist(obs, obs_hat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn model(centers: Vec<Vec<f64>>) -> ClusterModel {
        ClusterModel::from_centers(centers, SpatialPoolerParams::default()).unwrap()
    }

    #[test]
    fn classify_nearest() {
        let mut m = model(vec![vec![0.0, 0.0], vec![1.0, 1.0]]);
        assert_eq!(m.classify(&[0.9, 0.8]).unwrap().index(), 1);
    }

    #[test]
    fn classify_exact_center() {
        let mut m = model((0..5).map(|k| vec![k as f64, -(k as f64)]).collect());
        assert_eq!(m.classify(&[3.0, -3.0]).unwrap().index(), 3);
    }

    #[test]
    fn classify_tie_lowest_index() {
        let mut m = model(vec![vec![0.0, 0.0], vec![2.0, 0.0]]);
        assert_eq!(m.classify(&[1.0, 0.0]).unwrap().index(), 0);
    }

    #[test]
    fn classify_records_win_step() {
        let mut m = model(vec![vec![0.0], vec![1.0]]);
        for _ in 0..7 {
            m.advance();
        }
        m.classify(&[0.9]).unwrap();
        assert_eq!(m.last_win_step(), &[0, 7]);
    }

    #[test]
    fn classify_dimension_mismatch() {
        let mut m = model(vec![vec![0.0, 0.0]]);
        let err = m.classify(&[1.0]).unwrap_err();
        assert!(err.to_string().contains("expected 2, got 1"), "{err}");
    }

    #[test]
    fn reconstruct_selects_row() {
        let m = model(vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, 5.0]]);
        assert_eq!(m.reconstruct(&[0.0, 0.0, 1.0]).unwrap(), vec![4.0, 5.0]);
        assert!(matches!(m.reconstruct(&[0.0, 0.5, 0.5]), Err(Error::NotOneHot { .. })));
    }

    #[test]
    fn round_trip_on_center() {
        let mut m = model(vec![vec![0.3, 0.1], vec![-1.0, 2.0]]);
        let x = m.classify(&[-1.0, 2.0]).unwrap();
        assert_eq!(m.reconstruct(&x.to_dense()).unwrap(), vec![-1.0, 2.0]);
    }

    #[test]
    fn learn_singleton_full_step() {
        let mut p = SpatialPoolerParams::default();
        p.learning_rate = 1.0;
        let mut m = ClusterModel::from_centers(vec![vec![0.0, 0.0], vec![5.0, 5.0]], p).unwrap();
        m.remember(&[4.0, 6.0]).unwrap();
        m.learn().unwrap();
        assert_eq!(m.center(1), &[4.0, 6.0]);
        assert_eq!(m.center(0), &[0.0, 0.0]);
    }

    #[test]
    fn learn_symmetric_buffer_keeps_center() {
        let mut m = model(vec![vec![1.0, 1.0], vec![10.0, 10.0]]);
        for p in [[0.5, 1.0], [1.5, 1.0], [1.0, 0.5], [1.0, 1.5]] {
            m.remember(&p).unwrap();
        }
        m.learn().unwrap();
        assert_eq!(m.center(0), &[1.0, 1.0]);
    }

    #[test]
    fn learn_on_empty_buffer_is_error() {
        let mut m = model(vec![vec![0.0]]);
        assert!(matches!(m.learn(), Err(Error::EmptyBuffer)));
    }

    fn boost_model(beta: f64) -> ClusterModel {
        let mut p = SpatialPoolerParams::default();
        p.boost_threshold = 10;
        p.boost_rate = beta;
        // cluster 0 owns a spread pair, cluster 1 owns a tight pair, cluster 2 is idle
        let mut m = ClusterModel::from_centers(
            vec![vec![0.0, 0.0], vec![10.0, 10.0], vec![-50.0, -50.0]],
            p,
        )
        .unwrap();
        for o in [[-1.0, 0.0], [1.0, 0.0], [10.0, 10.1], [10.0, 9.9]] {
            m.remember(&o).unwrap();
        }
        m.last_win_step = vec![11, 11, 0];
        m
    }

    #[test]
    fn boost_threshold_is_strict() {
        let mut m = boost_model(1.0);
        m.boost_idle(10);
        assert_eq!(m.center(2), &[-50.0, -50.0]);
    }

    #[test]
    fn boost_full_step_reaches_target() {
        let mut m = boost_model(1.0);
        m.boost_idle(11);
        assert_eq!(m.center(2), &[0.0, 0.0]);
        assert_eq!(m.clusters(), 3);
    }

    #[test]
    fn idle_center_owning_data_is_not_boosted() {
        let mut m = boost_model(1.0);
        m.remember(&[-49.0, -50.0]).unwrap();
        m.boost_idle(11);
        assert_eq!(m.center(2), &[-50.0, -50.0]);
    }

    #[test]
    fn boost_target_is_held() {
        let mut m = boost_model(0.5);
        m.boost_idle(11);
        assert_eq!(m.boost_target.map(|t| t.0), Some(0));
        // cluster 1 becomes the most spread, but the target stays for b steps
        for o in [[6.0, 6.0], [14.0, 14.0]] {
            m.remember(&o).unwrap();
        }
        m.step = 5;
        m.boost_idle(16);
        assert_eq!(m.boost_target.map(|t| t.0), Some(0));
        m.step = 11;
        m.boost_idle(22);
        assert_eq!(m.boost_target.map(|t| t.0), Some(1));
    }

    #[test]
    fn boost_noop_without_spread() {
        let mut p = SpatialPoolerParams::default();
        p.boost_threshold = 0;
        p.boost_rate = 1.0;
        let mut m = ClusterModel::from_centers(vec![vec![0.0], vec![9.0]], p).unwrap();
        m.remember(&[0.0]).unwrap();
        m.boost_idle(100);
        assert_eq!(m.center(1), &[9.0]);
    }

    #[test]
    fn reconstruction_error_basics() {
        assert_eq!(reconstruction_error(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(reconstruction_error(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 2.0);
        assert!(reconstruction_error(&[0.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn centers_csv_header() {
        let m = model(vec![vec![0.5, 1.0]]);
        let mut out = Vec::new();
        m.write_centers_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "cluster_id,c0,c1\n0,0.5,1\n");
    }

    fn centers_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (1usize..6, 1usize..4).prop_flat_map(|(k, d)| {
            proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, d), k)
        })
    }

    proptest! {
        #[test]
        fn best_reconstruction_is_nearest(centers in centers_strategy(), seed in 0u64..1000) {
            let d = centers[0].len();
            let mut m = model(centers.clone());
            let obs: Vec<f64> = (0..d).map(|i| ((seed as f64 + 1.0) * (i as f64 + 0.7)).sin() * 4.0).collect();
            let x = m.classify(&obs).unwrap();
            let best = reconstruction_error(&obs, &m.reconstruct_one_hot(x)).unwrap();
            for c in &centers {
                prop_assert!(best <= reconstruction_error(&obs, c).unwrap());
            }
        }

        #[test]
        fn round_trip_distinct_centers(centers in centers_strategy()) {
            let mut m = model(centers.clone());
            for k in 0..centers.len() {
                let duplicate = centers.iter().enumerate().any(|(j, c)| j != k && *c == centers[k]);
                if duplicate { continue; }
                let x = OneHot::new(k, centers.len());
                let back = m.classify(&m.reconstruct(&x.to_dense()).unwrap()).unwrap();
                prop_assert_eq!(back, x);
            }
        }

        #[test]
        fn classify_is_deterministic(centers in centers_strategy(), v in -5.0f64..5.0) {
            let d = centers[0].len();
            let m = model(centers);
            let obs = vec![v; d];
            prop_assert_eq!(m.nearest(&obs).unwrap(), m.nearest(&obs).unwrap());
        }

        #[test]
        fn learning_cost_non_increasing(
            points in proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 2), 1..40),
            seed in 0u64..50,
        ) {
            let mut p = SpatialPoolerParams::default();
            p.clusters = 4;
            p.init_std = 1.0;
            let mut m = ClusterModel::new(2, p, seed).unwrap();
            for o in &points { m.remember(o).unwrap(); }
            let mut cost = m.total_cost();
            for _ in 0..20 {
                m.learn().unwrap();
                let next = m.total_cost();
                prop_assert!(next <= cost + 1e-9, "cost rose from {} to {}", cost, next);
                cost = next;
            }
        }

        #[test]
        fn boosting_keeps_cluster_count(seed in 0u64..100, steps in 1u64..300) {
            let mut p = SpatialPoolerParams::default();
            p.clusters = 5;
            p.boost_threshold = 3;
            let mut m = ClusterModel::new(3, p, seed).unwrap();
            for t in 0..steps {
                let o = [(t % 7) as f64, (t % 3) as f64, 1.0];
                m.remember(&o).unwrap();
                m.classify(&o).unwrap();
                m.train();
                m.advance();
            }
            prop_assert_eq!(m.centers().count(), 5);
            prop_assert!(m.last_win_step().iter().all(|&s| s <= m.step()));
        }
    }

    #[test]
    fn boosting_liveness_on_separated_regions() {
        // K well-separated regions; after sustained training every cluster wins
        let k = 6;
        let mut p = SpatialPoolerParams::default();
        p.clusters = k;
        p.boost_threshold = 20;
        p.buffer_size = 64;
        let mut m = ClusterModel::new(2, p, 3).unwrap();
        let mut wins = vec![0usize; k];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for t in 0..4000u64 {
            let r = rand::Rng::random_range(&mut rng, 0..k);
            let angle = r as f64 * std::f64::consts::TAU / k as f64;
            let jitter = rand::Rng::random_range(&mut rng, -0.05..0.05);
            let o = [5.0 * angle.cos() + jitter, 5.0 * angle.sin() - jitter];
            m.remember(&o).unwrap();
            let x = m.classify(&o).unwrap();
            if t >= 3000 {
                wins[x.index()] += 1;
            }
            m.train();
            m.advance();
        }
        assert!(wins.iter().all(|&w| w > 0), "usage {wins:?}");
    }
}
