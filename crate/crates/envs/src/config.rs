use serde::{Deserialize, Serialize};

use crate::task::Task;
use crate::EnvError;

/// Pendulum swing-up. Angle is zero upright, `m = omega * mass`.
///
/// `θ̈ = (g / l) sin θ + max_torque · a / (m l²) - damping · θ̇`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendulumParams {
    pub mass: f64,
    pub length: f64,
    pub max_torque: f64,
    pub damping: f64,
    pub max_speed: f64,
}

/// Overhead arm throwing a ball. The arm pivots at `(0, pivot_height)`, the
/// angle is zero pointing backward and `π` pointing forward. A PD servo
/// tracks the commanded angle `(a + 1) / 2 · π` with a torque limit that does
/// not depend on the ball, so the release speed does. The ball leaves the
/// hand when the arm first reaches `release_angle` and then flies
/// ballistically until it lands and stops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThrowingParams {
    pub pivot_height: f64,
    pub arm_length: f64,
    pub arm_inertia: f64,
    pub ball_mass: f64,
    pub kp: f64,
    pub kd: f64,
    pub max_torque: f64,
    pub release_angle: f64,
    pub goal_x: f64,
}

/// One-dimensional object pushed along a rail toward one of two bins.
///
/// `ẍ = (force · a - friction · ẋ) / (omega · mass)`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SortingParams {
    pub mass: f64,
    pub force: f64,
    pub friction: f64,
    pub start_x: f64,
    pub start_noise: f64,
    pub rail_limit: f64,
    pub goal_offset: f64,
    pub goal_threshold: f64,
}

/// Planar double integrator with per-axis motor scales.
///
/// `ẍ_i = omega_i · gain · a_i - damping · ẋ_i`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointmassParams {
    pub gain: f64,
    pub damping: f64,
    pub arena: f64,
    pub start_spread: f64,
    pub goal: [f64; 2],
    pub omega_sum_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub task: Task,
    /// Control steps per episode.
    pub episode_length: usize,
    /// Integrator step in seconds.
    pub dt: f64,
    /// Integrator steps per control step.
    pub action_repeat: usize,
    pub gravity: f64,
    pub pendulum: PendulumParams,
    pub throwing: ThrowingParams,
    pub sorting: SortingParams,
    pub pointmass: PointmassParams,
}

impl EnvConfig {
    pub fn new(task: Task) -> Self {
        Self {
            task,
            episode_length: 200,
            dt: 0.02,
            action_repeat: 2,
            gravity: 9.81,
            pendulum: PendulumParams {
                mass: 1.0,
                length: 1.0,
                max_torque: 2.0,
                damping: 0.0,
                max_speed: 12.0,
            },
            throwing: ThrowingParams {
                pivot_height: 1.0,
                arm_length: 0.6,
                arm_inertia: 0.05,
                ball_mass: 0.5,
                kp: 20.0,
                kd: 1.0,
                max_torque: 6.0,
                release_angle: std::f64::consts::FRAC_PI_4,
                goal_x: 2.0,
            },
            sorting: SortingParams {
                mass: 1.0,
                force: 1.5,
                friction: 1.0,
                start_x: 1.2,
                start_noise: 0.05,
                rail_limit: 2.0,
                goal_offset: 0.2,
                goal_threshold: 0.6,
            },
            pointmass: PointmassParams {
                gain: 1.0,
                damping: 1.0,
                arena: 1.0,
                start_spread: 0.8,
                goal: [0.0, 0.0],
                omega_sum_threshold: 3.0,
            },
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(EnvError::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if self.episode_length == 0 {
            return Err(EnvError::InvalidConfig("episode_length must be at least 1".into()));
        }
        if self.action_repeat == 0 {
            return Err(EnvError::InvalidConfig("action_repeat must be at least 1".into()));
        }
        Ok(())
    }
}
