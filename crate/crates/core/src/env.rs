//! Ground-truth planar world: a 4-DoF arm anchored at the arena center, a
//! tool (origin plus extremity) and a ball moving at constant velocity with
//! reflective walls. Coordinates are pixels with the arm base at the origin.

use std::f64::consts::PI;

use nalgebra::Vector2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{forward_chain, Joint, Pose};

pub const N_JOINTS: usize = 4;
pub const MAX_SPEED: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Side of the square arena.
    pub arena: f64,
    pub limb_lengths: [f64; N_JOINTS],
    pub tool_length: f64,
    pub grasp_threshold: f64,
    /// Symmetric joint limit, radians; joints turn freely when unset.
    pub joint_limit: Option<f64>,
    /// Minimum distance of spawned objects from the arm base.
    pub spawn_clearance: f64,
    /// Fraction of the maximum reach within which objects spawn.
    pub reach_fraction: f64,
    /// Lets moving objects spawn anywhere in the arena.
    pub moving_spawn_anywhere: bool,
    pub initial_joints: [f64; N_JOINTS],
    /// Standard deviation of additive visual noise, pixels.
    pub visual_noise: f64,
    pub max_steps: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            arena: 1300.0,
            limb_lengths: [150.0, 130.0, 120.0, 100.0],
            tool_length: 150.0,
            grasp_threshold: 15.0,
            joint_limit: None,
            spawn_clearance: 100.0,
            reach_fraction: 0.9,
            moving_spawn_anywhere: false,
            initial_joints: [0.5, 0.4, 0.3, 0.2],
            visual_noise: 0.0,
            max_steps: 3000,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("env: {m}")));
        if !(self.arena > 0.0) {
            return bad("arena must be positive");
        }
        if self.limb_lengths.iter().any(|l| !(*l > 0.0)) || !(self.tool_length > 0.0) {
            return bad("lengths must be positive");
        }
        if !(self.grasp_threshold > 0.0) || self.joint_limit.is_some_and(|l| !(l > 0.0)) {
            return bad("grasp threshold and joint limit must be positive");
        }
        if !(self.spawn_clearance >= 0.0) || !(self.visual_noise >= 0.0) {
            return bad("clearance and noise must be nonnegative");
        }
        if !(self.reach_fraction > 0.0 && self.reach_fraction <= 1.0) {
            return bad("reach_fraction must lie in (0, 1]");
        }
        if self.spawn_clearance >= self.reach_fraction * self.arm_reach().min(self.tool_reach()) {
            return bad("spawn clearance leaves no reachable region");
        }
        let limit = self.joint_limit.unwrap_or(f64::INFINITY);
        if self.initial_joints.iter().any(|j| j.abs() > limit) {
            return bad("initial joints exceed the joint limit");
        }
        Ok(())
    }

    pub fn arm_reach(&self) -> f64 {
        self.limb_lengths.iter().sum()
    }

    /// Farthest distance the tool tip can reach whatever the grip: the tool
    /// may end up pointing back along the last limb.
    pub fn tool_reach(&self) -> f64 {
        let last = self.limb_lengths[N_JOINTS - 1];
        self.arm_reach() - last + (last - self.tool_length).abs()
    }

    pub fn half(&self) -> f64 {
        self.arena / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Static,
    MovingTool,
    MovingBall,
    Both,
}

impl Condition {
    pub fn label(self) -> &'static str {
        match self {
            Condition::Static => "static",
            Condition::MovingTool => "tool",
            Condition::MovingBall => "ball",
            Condition::Both => "both",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(Condition::Static),
            "tool" | "moving_tool" => Ok(Condition::MovingTool),
            "ball" | "moving_ball" => Ok(Condition::MovingBall),
            "both" => Ok(Condition::Both),
            other => Err(Error::InvalidConfig(format!("unknown condition {other}"))),
        }
    }

    fn moves_tool(self) -> bool {
        matches!(self, Condition::MovingTool | Condition::Both)
    }

    fn moves_ball(self) -> bool {
        matches!(self, Condition::MovingBall | Condition::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialSpec {
    pub condition: Condition,
    /// Pixels per step.
    pub speed: f64,
    pub seed: u64,
}

impl TrialSpec {
    pub fn new(condition: Condition, speed: f64, seed: u64) -> Result<Self> {
        if !(0.0..=MAX_SPEED).contains(&speed) {
            return Err(Error::InvalidConfig(format!(
                "speed {speed} outside [0, {MAX_SPEED}]"
            )));
        }
        Ok(Self {
            condition,
            speed,
            seed,
        })
    }

    fn tool_speed(&self) -> f64 {
        if self.condition.moves_tool() {
            self.speed
        } else {
            0.0
        }
    }

    fn ball_speed(&self) -> f64 {
        if self.condition.moves_ball() {
            self.speed
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub joint_angles: [f64; N_JOINTS],
    pub tool_origin: Vector2<f64>,
    pub tool_velocity: Vector2<f64>,
    pub tool_angle: f64,
    pub ball_pos: Vector2<f64>,
    pub ball_velocity: Vector2<f64>,
    pub grasped: bool,
    /// Tool angle relative to the end-effector orientation, fixed at grasp.
    pub grip_angle: f64,
    pub step_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub proprio: [f64; N_JOINTS],
    /// Extremity of every limb, base outward.
    pub limbs: [Vector2<f64>; N_JOINTS],
    pub tool_origin: Vector2<f64>,
    pub tool_tip: Vector2<f64>,
    pub ball: Vector2<f64>,
    pub grasped: bool,
}

impl Observation {
    /// One-hot tactile outcome `[not touching, grasped]`.
    pub fn tactile(&self) -> [f64; 2] {
        if self.grasped {
            [0.0, 1.0]
        } else {
            [1.0, 0.0]
        }
    }
}

fn heading(angle: f64) -> Vector2<f64> {
    Vector2::new(angle.cos(), angle.sin())
}

/// Reflects a coordinate and its velocity off `[-half, half]`.
fn bounce(x: &mut f64, v: &mut f64, half: f64) {
    if *x > half {
        *x = 2.0 * half - *x;
        *v = -*v;
    } else if *x < -half {
        *x = -2.0 * half - *x;
        *v = -*v;
    }
}

impl WorldState {
    pub fn joints(&self, cfg: &EnvConfig) -> Vec<Joint> {
        self.joint_angles
            .iter()
            .zip(cfg.limb_lengths)
            .map(|(a, l)| Joint::new(*a, l))
            .collect()
    }

    pub fn limb_poses(&self, cfg: &EnvConfig) -> Vec<Pose> {
        forward_chain(&Pose::zeros(), &self.joints(cfg))
    }

    pub fn end_effector(&self, cfg: &EnvConfig) -> Pose {
        *self.limb_poses(cfg).last().expect("arm has joints")
    }

    pub fn tool_tip(&self, cfg: &EnvConfig) -> Vector2<f64> {
        self.tool_origin + heading(self.tool_angle) * cfg.tool_length
    }

    /// Distance between the ball and the tool's extremity.
    pub fn ball_tool_distance(&self, cfg: &EnvConfig) -> f64 {
        (self.ball_pos - self.tool_tip(cfg)).norm()
    }

    fn attach_tool(&mut self, cfg: &EnvConfig) {
        let ee = self.end_effector(cfg);
        self.tool_origin = Vector2::new(ee[0], ee[1]);
        self.tool_angle = ee[2] + self.grip_angle;
        self.tool_velocity = Vector2::zeros();
    }

    /// Advances the world by one step under joint velocities `action`.
    pub fn step(&mut self, cfg: &EnvConfig, action: &[f64; N_JOINTS]) -> Result<()> {
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite {
                context: "environment action".into(),
            });
        }
        for (q, a) in self.joint_angles.iter_mut().zip(action) {
            *q += a;
            if let Some(limit) = cfg.joint_limit {
                *q = q.clamp(-limit, limit);
            }
        }
        let half = cfg.half();
        if self.grasped {
            self.attach_tool(cfg);
        } else {
            self.tool_origin += self.tool_velocity;
            bounce(&mut self.tool_origin.x, &mut self.tool_velocity.x, half);
            bounce(&mut self.tool_origin.y, &mut self.tool_velocity.y, half);
        }
        self.ball_pos += self.ball_velocity;
        bounce(&mut self.ball_pos.x, &mut self.ball_velocity.x, half);
        bounce(&mut self.ball_pos.y, &mut self.ball_velocity.y, half);

        if !self.grasped {
            let ee = self.end_effector(cfg);
            let d = (Vector2::new(ee[0], ee[1]) - self.tool_origin).norm();
            if d < cfg.grasp_threshold {
                self.grasped = true;
                self.grip_angle = self.tool_angle - ee[2];
                self.attach_tool(cfg);
            }
        }
        self.step_count += 1;
        Ok(())
    }

    /// Observations from ground truth, plus optional Gaussian visual noise.
    pub fn observe<R: Rng + ?Sized>(&self, cfg: &EnvConfig, rng: &mut R) -> Observation {
        let poses = self.limb_poses(cfg);
        let mut limbs = [Vector2::zeros(); N_JOINTS];
        for (l, p) in limbs.iter_mut().zip(&poses) {
            *l = Vector2::new(p[0], p[1]);
        }
        let mut obs = Observation {
            proprio: self.joint_angles,
            limbs,
            tool_origin: self.tool_origin,
            tool_tip: self.tool_tip(cfg),
            ball: self.ball_pos,
            grasped: self.grasped,
        };
        if cfg.visual_noise > 0.0 {
            let normal = Normal::new(0.0, cfg.visual_noise).expect("validated noise");
            let mut jitter = |v: &mut Vector2<f64>| {
                v.x += normal.sample(rng);
                v.y += normal.sample(rng);
            };
            for l in obs.limbs.iter_mut() {
                jitter(l);
            }
            jitter(&mut obs.tool_origin);
            jitter(&mut obs.tool_tip);
            jitter(&mut obs.ball);
        }
        obs
    }
}

/// Uniform position in the arena at least `clearance` from the base.
fn arena_position<R: Rng + ?Sized>(cfg: &EnvConfig, rng: &mut R) -> Vector2<f64> {
    let half = cfg.half();
    loop {
        let p = Vector2::new(rng.random_range(-half..half), rng.random_range(-half..half));
        if p.norm() >= cfg.spawn_clearance {
            return p;
        }
    }
}

/// Uniform position in the annulus `[clearance, radius]` around the base.
fn reachable_position<R: Rng + ?Sized>(cfg: &EnvConfig, radius: f64, rng: &mut R) -> Vector2<f64> {
    let r0 = cfg.spawn_clearance;
    let r = (rng.random_range(r0 * r0..radius * radius)).sqrt();
    heading(rng.random_range(-PI..PI)) * r
}

fn direction<R: Rng + ?Sized>(rng: &mut R) -> Vector2<f64> {
    heading(rng.random_range(-PI..PI))
}

/// Initial world of a trial. Objects spawn where they can be reached, unless
/// `moving_spawn_anywhere` sends the moving ones anywhere in the arena.
pub fn sample_trial<R: Rng + ?Sized>(cfg: &EnvConfig, spec: &TrialSpec, rng: &mut R) -> WorldState {
    let (ts, bs) = (spec.tool_speed(), spec.ball_speed());
    let anywhere = |speed: f64| cfg.moving_spawn_anywhere && speed > 0.0;
    let tool_origin = if anywhere(ts) {
        arena_position(cfg, rng)
    } else {
        reachable_position(cfg, cfg.reach_fraction * cfg.arm_reach(), rng)
    };
    let tool_angle = rng.random_range(-PI..PI);
    let tool_velocity = direction(rng) * ts;
    let ball_pos = if anywhere(bs) {
        arena_position(cfg, rng)
    } else {
        reachable_position(cfg, cfg.reach_fraction * cfg.tool_reach(), rng)
    };
    let ball_velocity = direction(rng) * bs;
    WorldState {
        joint_angles: cfg.initial_joints,
        tool_origin,
        tool_velocity,
        tool_angle,
        ball_pos,
        ball_velocity,
        grasped: false,
        grip_angle: 0.0,
        step_count: 0,
    }
}
