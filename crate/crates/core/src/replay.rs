//! Episode replay with whole-episode FIFO eviction and window sampling.

use std::collections::VecDeque;

use hipdream_autodiff::Tensor;
use rand::Rng;

use crate::error::{CoreError, Result};
use crate::world_model::EpisodeBatch;

/// One stored episode. Entry `i` holds observation `x_i`, the action that led
/// to it (zeros at `i = 0`) and the reward received on arrival (zero at
/// `i = 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub obs: Vec<Vec<f64>>,
    pub prev_action: Vec<Vec<f64>>,
    pub reward: Vec<f64>,
    /// True hidden parameter, constant over the episode.
    pub omega: Vec<f64>,
}

impl Episode {
    pub fn new(omega: Vec<f64>) -> Self {
        Self {
            obs: Vec::new(),
            prev_action: Vec::new(),
            reward: Vec::new(),
            omega,
        }
    }

    pub fn push(&mut self, obs: Vec<f64>, prev_action: Vec<f64>, reward: f64) {
        self.obs.push(obs);
        self.prev_action.push(prev_action);
        self.reward.push(reward);
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }
}

/// Complete episodes, capacity counted in steps.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    episodes: VecDeque<Episode>,
    capacity: usize,
    steps: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            episodes: VecDeque::new(),
            capacity,
            steps: 0,
        }
    }

    /// Stored steps.
    pub fn len(&self) -> usize {
        self.steps
    }

    pub fn is_empty(&self) -> bool {
        self.steps == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn num_episodes(&self) -> usize {
        self.episodes.len()
    }

    pub fn episodes(&self) -> impl Iterator<Item = &Episode> {
        self.episodes.iter()
    }

    pub fn episodes_mut(&mut self) -> impl Iterator<Item = &mut Episode> {
        self.episodes.iter_mut()
    }

    /// Append an episode, evicting the oldest ones until it fits. Returns the
    /// number of evicted episodes.
    pub fn push(&mut self, episode: Episode) -> Result<usize> {
        if episode.len() > self.capacity {
            return Err(CoreError::Config(format!(
                "episode of {} steps exceeds buffer capacity {}",
                episode.len(),
                self.capacity
            )));
        }
        let mut evicted = 0;
        while self.steps + episode.len() > self.capacity {
            let old = self.episodes.pop_front().expect("steps > 0 implies an episode");
            self.steps -= old.len();
            evicted += 1;
        }
        self.steps += episode.len();
        self.episodes.push_back(episode);
        Ok(evicted)
    }

    /// `batch` windows of `len` steps, uniform over all windows that fit
    /// inside a single episode.
    pub fn sample<R: Rng>(&self, batch: usize, len: usize, rng: &mut R) -> Result<EpisodeBatch> {
        let windows: Vec<(usize, usize)> = self
            .episodes
            .iter()
            .enumerate()
            .filter(|(_, e)| e.len() >= len)
            .map(|(i, e)| (i, e.len() - len + 1))
            .collect();
        let total: usize = windows.iter().map(|(_, n)| n).sum();
        if total == 0 || len == 0 {
            return Err(CoreError::InsufficientData { needed: len });
        }
        let picks: Vec<(usize, usize)> = (0..batch)
            .map(|_| {
                let mut u = rng.random_range(0..total);
                for &(ep, n) in &windows {
                    if u < n {
                        return (ep, u);
                    }
                    u -= n;
                }
                unreachable!("u < total")
            })
            .collect();
        Ok(self.gather(&picks, len))
    }

    /// Build a batch from explicit `(episode index, start)` windows.
    pub fn gather(&self, picks: &[(usize, usize)], len: usize) -> EpisodeBatch {
        let b = picks.len();
        let first = &self.episodes[picks[0].0];
        let (od, ad, wd) = (first.obs[0].len(), first.prev_action[0].len(), first.omega.len());
        let rows = b * len;
        let mut obs = Vec::with_capacity(rows * od);
        let mut act = Vec::with_capacity(rows * ad);
        let mut rew = Vec::with_capacity(rows);
        let mut omega = Vec::with_capacity(rows * wd);
        let mut is_first = Vec::with_capacity(rows);
        for t in 0..len {
            for &(ep, start) in picks {
                let e = &self.episodes[ep];
                let i = start + t;
                obs.extend_from_slice(&e.obs[i]);
                act.extend_from_slice(&e.prev_action[i]);
                rew.push(e.reward[i]);
                omega.extend_from_slice(&e.omega);
                is_first.push(i == 0);
            }
        }
        EpisodeBatch {
            batch: b,
            len,
            obs: Tensor::new(&[rows, od], obs).expect("rows * obs"),
            prev_action: Tensor::new(&[rows, ad], act).expect("rows * action"),
            reward: Tensor::new(&[rows, 1], rew).expect("rows"),
            omega: Tensor::new(&[rows, wd], omega).expect("rows * omega"),
            is_first,
        }
    }
}
