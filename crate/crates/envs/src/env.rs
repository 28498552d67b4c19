use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::EnvConfig;
use crate::task::{sample_omega, HiddenParams, Task};
use crate::EnvError;

/// Task-specific generalized coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Body {
    Pendulum {
        theta: f64,
        theta_dot: f64,
    },
    Throwing {
        arm: f64,
        arm_dot: f64,
        /// Ball position `(x, z)` and velocity `(ẋ, ż)`.
        ball: [f64; 4],
        released: bool,
        landed: bool,
    },
    Sorting {
        x: f64,
        x_dot: f64,
    },
    Pointmass {
        pos: [f64; 2],
        vel: [f64; 2],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub body: Body,
    pub step: usize,
    pub omega: HiddenParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    /// Set only when the fixed episode length is reached.
    pub done: bool,
}

/// A single environment instance; owns its state between `reset` and the
/// last `step` of an episode.
#[derive(Debug, Clone)]
pub struct Env {
    config: EnvConfig,
    state: Option<EnvState>,
}

fn wrap_angle(theta: f64) -> f64 {
    let t = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if t == -PI {
        PI
    } else {
        t
    }
}

/// Goal position on the sorting rail for a given object mass scale.
pub fn sorting_goal(config: &EnvConfig, omega: f64) -> f64 {
    let p = &config.sorting;
    if omega < p.goal_threshold {
        p.goal_offset
    } else {
        -p.goal_offset
    }
}

/// Reward of being in `body` under hidden parameter `omega`; always in `[0, 1]`.
pub fn reward(config: &EnvConfig, body: &Body, omega: &[f64]) -> f64 {
    match body {
        Body::Pendulum { theta, .. } => 0.5 * (1.0 + theta.cos()),
        Body::Throwing { ball, .. } => (-(ball[0] - config.throwing.goal_x).abs()).exp(),
        Body::Sorting { x, .. } => {
            let goal = sorting_goal(config, omega[0]);
            (-(x - goal).abs()).exp()
        }
        Body::Pointmass { pos, .. } => {
            let g = config.pointmass.goal;
            let d = (pos[0] - g[0]).hypot(pos[1] - g[1]);
            if omega.iter().sum::<f64>() < config.pointmass.omega_sum_threshold {
                (-d).exp()
            } else {
                1.0 - (-d).exp()
            }
        }
    }
}

/// Observation vector for `body`.
pub fn observe(body: &Body) -> Vec<f64> {
    match body {
        Body::Pendulum { theta, theta_dot } => vec![wrap_angle(*theta), *theta_dot],
        Body::Throwing { ball, .. } => ball.to_vec(),
        Body::Sorting { x, x_dot } => vec![*x, *x_dot],
        Body::Pointmass { pos, vel } => vec![pos[0], pos[1], vel[0], vel[1]],
    }
}

/// Kick-drift-kick step of `q̈ = accel(q, q̇)` (Störmer–Verlet).
fn leapfrog(q: &mut f64, v: &mut f64, dt: f64, accel: impl Fn(f64, f64) -> f64) {
    *v += 0.5 * dt * accel(*q, *v);
    *q += dt * *v;
    *v += 0.5 * dt * accel(*q, *v);
}

impl Env {
    pub fn new(config: EnvConfig) -> Result<Self, EnvError> {
        config.validate()?;
        Ok(Self {
            config,
            state: None,
        })
    }

    pub fn task(&self) -> Task {
        self.config.task
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> Option<&EnvState> {
        self.state.as_ref()
    }

    /// Start a new episode. The hidden parameter is always drawn so the
    /// initial state does not depend on whether `omega_override` is given.
    pub fn reset<R: Rng + ?Sized>(
        &mut self,
        rng: &mut R,
        omega_override: Option<&[f64]>,
    ) -> Result<(Vec<f64>, HiddenParams), EnvError> {
        let task = self.config.task;
        let range = task.omega_range();
        let mut omega = sample_omega(&range, rng);
        if let Some(w) = omega_override {
            if !range.contains(w) {
                return Err(EnvError::OmegaOutOfRange {
                    omega: w.to_vec(),
                    lo: range.lo.clone(),
                    hi: range.hi.clone(),
                });
            }
            omega.omega = w.to_vec();
        }
        let body = match task {
            Task::Pendulum => Body::Pendulum {
                theta: rng.random_range(-PI..PI),
                theta_dot: 0.0,
            },
            Task::Throwing => {
                let arm = rng.random_range(0.0..0.1);
                let mut body = Body::Throwing {
                    arm,
                    arm_dot: 0.0,
                    ball: [0.0; 4],
                    released: false,
                    landed: false,
                };
                self.sync_ball(&mut body);
                body
            }
            Task::Sorting => {
                let p = &self.config.sorting;
                Body::Sorting {
                    x: p.start_x + rng.random_range(-p.start_noise..=p.start_noise),
                    x_dot: 0.0,
                }
            }
            Task::Pointmass => {
                let s = self.config.pointmass.start_spread;
                Body::Pointmass {
                    pos: [rng.random_range(-s..=s), rng.random_range(-s..=s)],
                    vel: [0.0, 0.0],
                }
            }
        };
        let obs = observe(&body);
        self.state = Some(EnvState {
            body,
            step: 0,
            omega: omega.clone(),
        });
        Ok((obs, omega))
    }

    /// Advance one control step. Actions are clipped to `[-1, 1]`.
    pub fn step(&mut self, action: &[f64]) -> Result<StepResult, EnvError> {
        let task = self.config.task;
        if action.len() != task.action_dim() {
            return Err(EnvError::ActionDim {
                expected: task.action_dim(),
                got: action.len(),
            });
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(EnvError::NonFiniteAction(action.to_vec()));
        }
        let config = self.config.clone();
        let state = self.state.as_mut().ok_or(EnvError::NotReset)?;
        if state.step >= config.episode_length {
            return Err(EnvError::EpisodeOver);
        }
        let a: Vec<f64> = action.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        let omega = state.omega.omega.clone();
        for _ in 0..config.action_repeat {
            integrate(&config, &mut state.body, &a, &omega);
        }
        state.step += 1;
        let body = &state.body;
        Ok(StepResult {
            observation: observe(body),
            reward: reward(&config, body, &omega),
            done: state.step >= config.episode_length,
        })
    }

    fn sync_ball(&self, body: &mut Body) {
        Self::sync_ball_with(&self.config, body);
    }

    /// While held, the ball sits at the arm tip.
    fn sync_ball_with(config: &EnvConfig, body: &mut Body) {
        if let Body::Throwing {
            arm,
            arm_dot,
            ball,
            released: false,
            ..
        } = body
        {
            *ball = arm_tip(config, *arm, *arm_dot);
        }
    }
}

fn arm_tip(config: &EnvConfig, arm: f64, arm_dot: f64) -> [f64; 4] {
    let p = &config.throwing;
    let l = p.arm_length;
    [
        -l * arm.cos(),
        p.pivot_height + l * arm.sin(),
        l * arm.sin() * arm_dot,
        l * arm.cos() * arm_dot,
    ]
}

fn integrate(config: &EnvConfig, body: &mut Body, a: &[f64], omega: &[f64]) {
    let dt = config.dt;
    let g = config.gravity;
    match body {
        Body::Pendulum { theta, theta_dot } => {
            let p = &config.pendulum;
            let inertia = omega[0] * p.mass * p.length * p.length;
            let drive = p.max_torque * a[0] / inertia;
            leapfrog(theta, theta_dot, dt, |q, v| {
                g / p.length * q.sin() + drive - p.damping * v
            });
            *theta_dot = theta_dot.clamp(-p.max_speed, p.max_speed);
            *theta = wrap_angle(*theta);
        }
        Body::Throwing {
            arm,
            arm_dot,
            ball,
            released,
            landed,
        } => {
            let p = &config.throwing;
            let target = 0.5 * (a[0] + 1.0) * PI;
            let ball_mass = omega[0] * p.ball_mass;
            let held = !*released;
            let inertia = p.arm_inertia
                + if held {
                    ball_mass * p.arm_length * p.arm_length
                } else {
                    0.0
                };
            leapfrog(arm, arm_dot, dt, |q, v| {
                let servo = (p.kp * (target - q) - p.kd * v).clamp(-p.max_torque, p.max_torque);
                let load = if held {
                    ball_mass * g * p.arm_length * q.cos()
                } else {
                    0.0
                };
                (servo - load) / inertia
            });
            if *arm < 0.0 {
                *arm = 0.0;
                *arm_dot = arm_dot.max(0.0);
            } else if *arm > PI {
                *arm = PI;
                *arm_dot = arm_dot.min(0.0);
            }
            if held {
                *ball = arm_tip(config, *arm, *arm_dot);
                if *arm >= p.release_angle {
                    *released = true;
                }
            } else if !*landed {
                let [x, z, vx, vz] = ball;
                *vz -= 0.5 * dt * g;
                *x += dt * *vx;
                *z += dt * *vz;
                *vz -= 0.5 * dt * g;
                if *z <= 0.0 {
                    *z = 0.0;
                    *vx = 0.0;
                    *vz = 0.0;
                    *landed = true;
                }
            }
        }
        Body::Sorting { x, x_dot } => {
            let p = &config.sorting;
            let m = omega[0] * p.mass;
            leapfrog(x, x_dot, dt, |_, v| (p.force * a[0] - p.friction * v) / m);
            if x.abs() > p.rail_limit {
                *x = x.clamp(-p.rail_limit, p.rail_limit);
                *x_dot = 0.0;
            }
        }
        Body::Pointmass { pos, vel } => {
            let p = &config.pointmass;
            for i in 0..2 {
                let drive = omega[i] * p.gain * a[i];
                leapfrog(&mut pos[i], &mut vel[i], dt, |_, v| drive - p.damping * v);
                if pos[i].abs() > p.arena {
                    pos[i] = pos[i].clamp(-p.arena, p.arena);
                    vel[i] = 0.0;
                }
            }
        }
    }
}
