//! Predictive group: several Experts iteratively compete for one
//! observation so that each ends up explaining an additive part of it.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::spatial_pooler::ClusterModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupRule {
    /// Subtractive residual: `x_i = classify(ô_i + μ e)`, `e = o − Σ ô`.
    Rao,
    /// Divisive residual: `x_i = classify((ε1 + ô_i) ⊙ e)`, `e = o ⊘ (ε2 + Σ ô)`.
    Pcbc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupConfig {
    pub rule: GroupRule,
    pub iterations: usize,
    pub mu: f64,
    pub eps1: f64,
    pub eps2: f64,
}

impl Default for GroupConfig {
    fn default() -> Self {
        GroupConfig {
            rule: GroupRule::Rao,
            iterations: 5,
            mu: 0.5,
            eps1: 1e-3,
            eps2: 1e-3,
        }
    }
}

impl GroupConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidParameter("group iterations must be >= 1".into()));
        }
        if !(self.mu > 0.0) || !(self.eps1 > 0.0) || !(self.eps2 > 0.0) {
            return Err(Error::InvalidParameter("group mu, eps1 and eps2 must be > 0".into()));
        }
        Ok(())
    }
}

/// State of the group after one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupState {
    /// The vector each Expert classified.
    pub inputs: Vec<Vec<f64>>,
    pub winners: Vec<usize>,
    /// Reconstruction of each winner.
    pub recon: Vec<Vec<f64>>,
}

fn check(obs: &[f64], models: &[&ClusterModel], recon: &[Vec<f64>]) -> Result<()> {
    check_dim("group reconstructions", models.len(), recon.len())?;
    for (m, r) in models.iter().zip(recon) {
        check_dim("observation", m.dim(), obs.len())?;
        check_dim("reconstruction", m.dim(), r.len())?;
    }
    Ok(())
}

fn finish(models: &[&ClusterModel], inputs: Vec<Vec<f64>>) -> Result<GroupState> {
    let winners = models
        .iter()
        .zip(&inputs)
        .map(|(m, x)| m.nearest(x))
        .collect::<Result<Vec<_>>>()?;
    let recon = models.iter().zip(&winners).map(|(m, &k)| m.center(k).to_vec()).collect();
    Ok(GroupState { inputs, winners, recon })
}

fn total(recon: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut sum = vec![0.0; dim];
    for r in recon {
        sum.iter_mut().zip(r).for_each(|(s, v)| *s += v);
    }
    sum
}

pub fn iterate_rao(obs: &[f64], models: &[&ClusterModel], recon: &[Vec<f64>], mu: f64) -> Result<GroupState> {
    check(obs, models, recon)?;
    let sum = total(recon, obs.len());
    let err: Vec<f64> = obs.iter().zip(&sum).map(|(o, s)| o - s).collect();
    let inputs = recon
        .iter()
        .map(|r| r.iter().zip(&err).map(|(a, e)| a + mu * e).collect())
        .collect();
    finish(models, inputs)
}

pub fn iterate_pcbc(
    obs: &[f64],
    models: &[&ClusterModel],
    recon: &[Vec<f64>],
    eps1: f64,
    eps2: f64,
) -> Result<GroupState> {
    check(obs, models, recon)?;
    let sum = total(recon, obs.len());
    let err: Vec<f64> = obs.iter().zip(&sum).map(|(o, s)| o / (eps2 + s)).collect();
    let inputs = recon
        .iter()
        .map(|r| r.iter().zip(&err).map(|(a, e)| (eps1 + a) * e).collect())
        .collect();
    finish(models, inputs)
}

/// Runs the configured rule from the warm-start reconstructions `recon`.
pub fn run_group(obs: &[f64], config: &GroupConfig, models: &[&ClusterModel], recon: Vec<Vec<f64>>) -> Result<GroupState> {
    config.validate()?;
    if models.is_empty() {
        return Err(Error::InvalidParameter("a group needs at least one Expert".into()));
    }
    let mut recon = recon;
    let mut state = None;
    for _ in 0..config.iterations {
        let next = match config.rule {
            GroupRule::Rao => iterate_rao(obs, models, &recon, config.mu)?,
            GroupRule::Pcbc => iterate_pcbc(obs, models, &recon, config.eps1, config.eps2)?,
        };
        recon = next.recon.clone();
        state = Some(next);
    }
    Ok(state.expect("at least one iteration"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial_pooler::SpatialPoolerParams;
    use proptest::prelude::*;

    fn model(centers: Vec<Vec<f64>>) -> ClusterModel {
        ClusterModel::from_centers(centers, SpatialPoolerParams::default()).unwrap()
    }

    fn two_parts() -> (ClusterModel, ClusterModel) {
        let a = model(vec![vec![0.0; 4], vec![1.0, 1.0, 0.0, 0.0]]);
        let b = model(vec![vec![0.0; 4], vec![0.0, 0.0, 1.0, 1.0]]);
        (a, b)
    }

    #[test]
    fn rao_fixed_point() {
        let (a, b) = two_parts();
        let obs = [1.0, 1.0, 1.0, 1.0];
        let recon = vec![a.center(1).to_vec(), b.center(1).to_vec()];
        let s = iterate_rao(&obs, &[&a, &b], &recon, 0.5).unwrap();
        assert_eq!(s.winners, vec![1, 1]);
        assert_eq!(s.recon, recon);
    }

    #[test]
    fn rao_single_perfect_center() {
        let m = model(vec![vec![0.0, 0.0], vec![2.0, 3.0]]);
        let s = run_group(
            &[2.0, 3.0],
            &GroupConfig { iterations: 1, mu: 1.0, ..Default::default() },
            &[&m],
            vec![vec![0.0, 0.0]],
        )
        .unwrap();
        assert_eq!(s.winners, vec![1]);
    }

    #[test]
    fn pcbc_stable_when_explained() {
        let (a, b) = two_parts();
        let obs = [1.0, 1.0, 1.0, 1.0];
        let recon = vec![a.center(1).to_vec(), b.center(1).to_vec()];
        let s = iterate_pcbc(&obs, &[&a, &b], &recon, 1e-3, 1e-3).unwrap();
        assert_eq!(s.winners, vec![1, 1]);
    }

    #[test]
    fn pcbc_zero_observation_defined() {
        let (a, b) = two_parts();
        let recon = vec![vec![0.0; 4], vec![0.0; 4]];
        let s = iterate_pcbc(&[0.0; 4], &[&a, &b], &recon, 1e-3, 1e-3).unwrap();
        assert!(s.inputs.iter().flatten().all(|v| *v == 0.0));
        assert_eq!(s.winners, vec![0, 0]);
    }

    #[test]
    fn both_rules_separate_known_parts() {
        let (a, b) = two_parts();
        for rule in [GroupRule::Rao, GroupRule::Pcbc] {
            let cfg = GroupConfig { rule, mu: 1.0, ..Default::default() };
            let s = run_group(&[1.0, 1.0, 1.0, 1.0], &cfg, &[&a, &b], vec![vec![0.0; 4]; 2]).unwrap();
            assert_eq!(s.winners, vec![1, 1], "{rule:?}");
        }
    }

    #[test]
    fn invalid_config() {
        assert!(GroupConfig { iterations: 0, ..Default::default() }.validate().is_err());
        assert!(GroupConfig { mu: 0.0, ..Default::default() }.validate().is_err());
    }

    proptest! {
        #[test]
        fn single_expert_unit_step_is_classify(
            centers in proptest::collection::vec(proptest::collection::vec(-2.0f64..2.0, 3), 1..6),
            obs in proptest::collection::vec(-2.0f64..2.0, 3),
            warm in proptest::collection::vec(-2.0f64..2.0, 3),
        ) {
            let m = model(centers);
            let cfg = GroupConfig { iterations: 1, mu: 1.0, ..Default::default() };
            let s = run_group(&obs, &cfg, &[&m], vec![vec![0.0; 3]]).unwrap();
            prop_assert_eq!(s.winners[0], m.nearest(&obs).unwrap());
            let s = run_group(&obs, &cfg, &[&m], vec![warm]).unwrap();
            prop_assert_eq!(s.winners[0], m.nearest(&obs).unwrap());
        }

        #[test]
        fn rao_fixed_point_no_worse_than_each_part(
            ca in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 4), 1..5),
            cb in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 4), 1..5),
            obs in proptest::collection::vec(0.0f64..2.0, 4),
        ) {
            // each Expert owns a blank center, so a fixed point of the unit-step
            // rule is a pair of best responses
            let with_blank = |mut c: Vec<Vec<f64>>| { c.insert(0, vec![0.0; 4]); model(c) };
            let a = with_blank(ca);
            let b = with_blank(cb);
            let cfg = GroupConfig { iterations: 30, mu: 1.0, ..Default::default() };
            let s = run_group(&obs, &cfg, &[&a, &b], vec![vec![0.0; 4]; 2]).unwrap();
            let again = iterate_rao(&obs, &[&a, &b], &s.recon, cfg.mu).unwrap();
            if again.winners == s.winners {
                let group_err = crate::math::sq_dist(&obs, &total(&s.recon, 4));
                for r in &s.recon {
                    prop_assert!(group_err <= crate::math::sq_dist(&obs, r) + 1e-9);
                }
            }
            prop_assert_eq!(a.centers().count(), a.clusters());
            prop_assert_eq!(b.centers().count(), b.clusters());
        }
    }
}
