use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{Environment, Transition};
use crate::error::{Error, Result};
use crate::policy::{ConvLayer, AttentionSpec, NetworkSpec};
use crate::tensor::Tensor;

/// One-step contextual bandit: the image is solid red or solid blue and
/// only the action matching the colour (0 for red, 1 for blue) pays 1.
pub struct ColorBandit {
    rng: ChaCha8Rng,
    size: usize,
    color: usize,
    obs: Tensor,
}

impl ColorBandit {
    pub const ACTIONS: usize = 2;

    pub fn new(size: usize, seed: u64) -> Self {
        let mut env = Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            size,
            color: 0,
            obs: Tensor::zeros(&[3, size, size]),
        };
        env.reset();
        env
    }

    pub fn color(&self) -> usize {
        self.color
    }

    /// Solid image of `color` at `size × size`.
    pub fn image(color: usize, size: usize) -> Tensor {
        let plane = size * size;
        let mut data = vec![0.0; 3 * plane];
        let channel = if color == 0 { 0 } else { 2 };
        data[channel * plane..(channel + 1) * plane].fill(1.0);
        Tensor::new(vec![3, size, size], data).expect("shape matches data")
    }

    /// A small conv net sized for this task.
    pub fn network(size: usize) -> NetworkSpec {
        NetworkSpec {
            name: "bandit".into(),
            input: (3, size, size),
            conv: vec![ConvLayer::new(4, 3, 2, 0)],
            attention: AttentionSpec::None,
            attention_depth: 1,
            head_hidden: 16,
            steering_bins: Self::ACTIONS,
            throttle_bins: 1,
        }
    }
}

impl Environment for ColorBandit {
    fn num_actions(&self) -> usize {
        Self::ACTIONS
    }

    fn observation(&self) -> &Tensor {
        &self.obs
    }

    fn step(&mut self, action: usize) -> Result<Transition> {
        if action >= Self::ACTIONS {
            return Err(Error::Index {
                op: "bandit action",
                index: action,
                len: Self::ACTIONS,
            });
        }
        let reward = if action == self.color { 1.0 } else { 0.0 };
        self.reset();
        Ok(Transition {
            reward,
            done: true,
            outcome: None,
        })
    }

    fn reset(&mut self) {
        self.color = self.rng.random_range(0..2);
        self.obs = Self::image(self.color, self.size);
    }
}
