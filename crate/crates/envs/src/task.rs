use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::EnvError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Pendulum,
    Throwing,
    Sorting,
    Pointmass,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Pendulum, Task::Throwing, Task::Sorting, Task::Pointmass];

    pub fn obs_dim(self) -> usize {
        match self {
            Task::Pendulum | Task::Sorting => 2,
            Task::Throwing | Task::Pointmass => 4,
        }
    }

    pub fn action_dim(self) -> usize {
        match self {
            Task::Pointmass => 2,
            _ => 1,
        }
    }

    pub fn omega_dim(self) -> usize {
        self.omega_range().dim()
    }

    /// Sampling range of the hidden parameter.
    pub fn omega_range(self) -> ParamRange {
        match self {
            // pendulum mass scale
            Task::Pendulum => ParamRange::new(vec![0.1], vec![2.0]),
            // ball / object mass scale
            Task::Throwing | Task::Sorting => ParamRange::new(vec![0.2], vec![1.0]),
            // per-axis motor scale
            Task::Pointmass => ParamRange::new(vec![1.0, 1.0], vec![2.0, 2.0]),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Pendulum => "pendulum",
            Task::Throwing => "throwing",
            Task::Sorting => "sorting",
            Task::Pointmass => "pointmass",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| EnvError::UnknownTask(s.to_string()))
    }
}

/// Per-dimension closed interval `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRange {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ParamRange {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), hi.len());
        assert!(lo.iter().zip(&hi).all(|(l, h)| l <= h), "empty range");
        Self { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, omega: &[f64]) -> bool {
        omega.len() == self.dim()
            && omega
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(w, (l, h))| (*l..=*h).contains(w))
    }
}

/// Hidden parameter vector together with the range it was drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenParams {
    pub omega: Vec<f64>,
    pub range: ParamRange,
}

/// Uniform draw over `range`, clamped against rounding at the upper edge.
pub fn sample_omega<R: Rng + ?Sized>(range: &ParamRange, rng: &mut R) -> HiddenParams {
    let omega = range
        .lo
        .iter()
        .zip(&range.hi)
        .map(|(&lo, &hi)| {
            let u: f64 = rng.random();
            (lo + u * (hi - lo)).clamp(lo, hi)
        })
        .collect();
    HiddenParams {
        omega,
        range: range.clone(),
    }
}
