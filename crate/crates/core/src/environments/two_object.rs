//! Ball and paddle rendered additively on one raster. The paddle lives in
//! column 0 and is driven by a scripted controller that intercepts the
//! ball with a configurable success rate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EnvStep;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoObjectSpec {
    pub width: usize,
    pub height: usize,
    /// Edge length of the square ball sprite.
    pub ball_size: usize,
    pub paddle_len: usize,
    /// Probability that the controller intercepts an approaching ball.
    pub success: f64,
    pub ball_value: f64,
    pub paddle_value: f64,
}

impl Default for TwoObjectSpec {
    fn default() -> Self {
        TwoObjectSpec {
            width: 16,
            height: 16,
            ball_size: 2,
            paddle_len: 4,
            success: 0.9,
            ball_value: 1.0,
            paddle_value: 1.0,
        }
    }
}

impl TwoObjectSpec {
    pub fn validate(&self) -> Result<()> {
        let b = self.ball_size;
        if b == 0 || self.paddle_len == 0 {
            return Err(Error::InvalidParameter("two_object: sprite sizes must be >= 1".into()));
        }
        if self.width < b + 3 {
            return Err(Error::InvalidParameter("two_object: width too small for the ball".into()));
        }
        // both paddle end positions must be able to dodge the ball
        if self.height < 2 * self.paddle_len + b {
            return Err(Error::InvalidParameter(
                "two_object: height must be >= 2 * paddle_len + ball_size".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.success) {
            return Err(Error::InvalidParameter("two_object: success must be in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        self.width * self.height
    }

    /// Pixel masks of the ball and the paddle for a ground-truth triple
    /// `[ball_x, ball_y, paddle_y]`.
    pub fn masks(&self, gt: &[usize]) -> (Vec<bool>, Vec<bool>) {
        let mut ball = vec![false; self.obs_dim()];
        let mut paddle = vec![false; self.obs_dim()];
        for dy in 0..self.ball_size {
            for dx in 0..self.ball_size {
                ball[(gt[1] + dy) * self.width + gt[0] + dx] = true;
            }
        }
        for dy in 0..self.paddle_len {
            paddle[(gt[2] + dy) * self.width] = true;
        }
        (ball, paddle)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Ball {
    x: i64,
    y: i64,
    vx: i64,
    vy: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoObjectWorld {
    spec: TwoObjectSpec,
    rng: ChaCha8Rng,
    ball: Ball,
    paddle: usize,
    /// Paddle row the controller is heading to for the current approach.
    target: usize,
    hits: u64,
    misses: u64,
    started: bool,
}

impl TwoObjectWorld {
    pub fn new(spec: TwoObjectSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut w = TwoObjectWorld {
            paddle: (spec.height - spec.paddle_len) / 2,
            rng: ChaCha8Rng::seed_from_u64(seed),
            ball: Ball { x: 0, y: 0, vx: 1, vy: 1 },
            target: 0,
            hits: 0,
            misses: 0,
            started: false,
            spec,
        };
        w.respawn();
        Ok(w)
    }

    pub fn obs_dim(&self) -> usize {
        self.spec.obs_dim()
    }

    pub fn spec(&self) -> &TwoObjectSpec {
        &self.spec
    }

    /// Intercepted and missed approaches so far.
    pub fn bounces(&self) -> (u64, u64) {
        (self.hits, self.misses)
    }

    fn max_x(&self) -> i64 {
        (self.spec.width - self.spec.ball_size) as i64
    }

    fn max_y(&self) -> i64 {
        (self.spec.height - self.spec.ball_size) as i64
    }

    fn respawn(&mut self) {
        let mx = self.max_x();
        let my = self.max_y();
        self.ball = Ball {
            x: self.rng.random_range(mx / 2..=mx),
            y: self.rng.random_range(0..=my),
            vx: 1,
            vy: if self.rng.random::<bool>() { 1 } else { -1 },
        };
        self.plan();
    }

    fn advance(&self, mut b: Ball) -> Ball {
        if b.x + b.vx > self.max_x() {
            b.vx = -1;
        }
        if b.y + b.vy < 0 || b.y + b.vy > self.max_y() {
            b.vy = -b.vy;
        }
        b.x += b.vx;
        b.y += b.vy;
        b
    }

    /// Ball row when it next reaches column 1 moving left.
    fn impact_row(&self) -> i64 {
        let mut b = self.ball;
        loop {
            b = self.advance(b);
            if b.x == 1 && b.vx < 0 {
                return b.y;
            }
        }
    }

    /// Draws whether the next approach is intercepted and sets the target.
    fn plan(&mut self) {
        let s = &self.spec;
        let row = self.impact_row();
        let max_p = (s.height - s.paddle_len) as i64;
        let intercept: bool = self.rng.random_bool(s.success);
        self.target = if intercept {
            let centre = row + s.ball_size as i64 / 2 - s.paddle_len as i64 / 2;
            centre.clamp(0, max_p) as usize
        } else if row >= s.paddle_len as i64 {
            0
        } else {
            max_p as usize
        };
    }

    fn covers(&self, row: i64) -> bool {
        let p = self.paddle as i64;
        row < p + self.spec.paddle_len as i64 && p < row + self.spec.ball_size as i64
    }

    pub fn render(&self) -> Vec<f64> {
        let s = &self.spec;
        let mut obs = vec![0.0; s.obs_dim()];
        let (ball, paddle) = s.masks(&self.ground_truth());
        for i in 0..obs.len() {
            let v = f64::from(u8::from(ball[i])) * s.ball_value + f64::from(u8::from(paddle[i])) * s.paddle_value;
            obs[i] = v.clamp(0.0, 1.0);
        }
        obs
    }

    fn ground_truth(&self) -> Vec<usize> {
        vec![self.ball.x as usize, self.ball.y as usize, self.paddle]
    }

    pub fn step(&mut self) -> EnvStep {
        if self.started {
            if self.paddle < self.target {
                self.paddle += 1;
            } else if self.paddle > self.target {
                self.paddle -= 1;
            }
            self.ball = self.advance(self.ball);
            if self.ball.x == 1 && self.ball.vx < 0 {
                if self.covers(self.ball.y) {
                    self.hits += 1;
                    self.ball.vx = 1;
                    self.plan();
                } else {
                    self.misses += 1;
                    self.respawn();
                }
            }
        }
        self.started = true;
        EnvStep {
            observation: self.render(),
            reward: 0.0,
            reset: false,
            ground_truth: Some(self.ground_truth()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn observation_is_sum_of_sprites() {
        let mut w = TwoObjectWorld::new(TwoObjectSpec::default(), 4).unwrap();
        for _ in 0..500 {
            let s = w.step();
            let (ball, paddle) = w.spec().masks(s.ground_truth.as_ref().unwrap());
            for i in 0..s.observation.len() {
                let expect = f64::from(u8::from(ball[i] || paddle[i]));
                assert_eq!(s.observation[i], expect);
                assert!(!(ball[i] && paddle[i]));
            }
        }
    }

    #[test]
    fn paddle_stays_in_column_zero() {
        let spec = TwoObjectSpec::default();
        let mut w = TwoObjectWorld::new(spec.clone(), 5).unwrap();
        for _ in 0..500 {
            let s = w.step();
            let (_, paddle) = spec.masks(s.ground_truth.as_ref().unwrap());
            assert!(paddle.iter().enumerate().all(|(i, &p)| !p || i % spec.width == 0));
            assert_eq!(paddle.iter().filter(|&&p| p).count(), spec.paddle_len);
        }
    }

    #[test]
    fn collision_rate_near_success_parameter() {
        let mut w = TwoObjectWorld::new(TwoObjectSpec::default(), 6).unwrap();
        while w.bounces().0 + w.bounces().1 < 10_000 {
            w.step();
        }
        let (h, m) = w.bounces();
        let rate = h as f64 / (h + m) as f64;
        assert!((rate - 0.9).abs() <= 0.03, "collision rate {rate}");
    }

    #[test]
    fn small_world_is_valid() {
        let spec = TwoObjectSpec { width: 8, height: 8, ball_size: 1, paddle_len: 3, ..Default::default() };
        let mut w = TwoObjectWorld::new(spec, 1).unwrap();
        for _ in 0..2000 {
            assert_eq!(w.step().observation.len(), 64);
        }
        assert!(w.bounces().0 > 0);
    }

    #[test]
    fn rejects_cramped_world() {
        let spec = TwoObjectSpec { height: 9, ..Default::default() };
        assert!(TwoObjectWorld::new(spec, 0).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let mut a = TwoObjectWorld::new(TwoObjectSpec::default(), 11).unwrap();
        let mut b = TwoObjectWorld::new(TwoObjectSpec::default(), 11).unwrap();
        for _ in 0..1000 {
            assert_eq!(a.step(), b.step());
        }
    }
}
