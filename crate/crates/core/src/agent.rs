//! The tool-use agent: four arm levels plus a virtual tool level, each carrying
//! the actual, tool and ball pathways, under a discrete planner.
//!
//! Internally every length is divided by `length_scale`, so precisions act on
//! errors of order one regardless of the pixel size of the scene.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::belief::{GeneralizedBelief, Precision};
use crate::discrete::{tactile_obs, DiscreteModel, TaskParams};
use crate::env::{EnvConfig, Observation, N_JOINTS};
use crate::error::{Error, Result};
use crate::hybrid::{HiddenCauses, HybridUnit, LinearDynamics, PotentialTrajectory};
use crate::ie::{Entity, IeLevel, KinematicHierarchy, LevelObservation, LevelReport, LevelSpec};
use crate::kinematics::{Joint, Pose};

/// Index of the end effector's level.
pub const EE_LEVEL: usize = N_JOINTS - 1;
/// Index of the virtual (tool) level.
pub const VIRTUAL_LEVEL: usize = N_JOINTS;
pub const N_LEVELS: usize = N_JOINTS + 1;

const ARM_ENTITIES: [Entity; 3] = [Entity::Actual, Entity::Tool, Entity::Ball];
const VIRTUAL_ENTITIES: [Entity; 2] = [Entity::Tool, Entity::Ball];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub dt: f64,
    /// Pixels per internal length unit.
    pub length_scale: f64,
    pub replan_period: usize,
    pub proprio_precision: f64,
    pub visual_precision_arm: f64,
    pub visual_precision_tool: f64,
    pub visual_precision_ball: f64,
    pub extrinsic_precision: f64,
    /// `Π_x` of every first-order prior.
    pub dynamics_precision: f64,
    /// `Π_{x,m}` of every potential trajectory.
    pub trajectory_precision: f64,
    /// Precision pinning arm lengths to their nominal values.
    pub length_precision: f64,
    /// Treat arm lengths as known rather than inferred.
    pub pin_arm_lengths: bool,
    /// Prior holding the virtual link near the last limb's length, off at zero.
    pub virtual_length_precision: f64,
    /// Pull of the ball pathway's tool link toward the tool pathway's.
    pub tool_tie_precision: f64,
    /// Replace the pull with an exact copy of the tool link.
    pub rigid_tool_tie: bool,
    /// Gain `k` of the attractors `f = k (i(x) − x)`.
    pub attractor_gain: f64,
    /// Maximum joint velocity command, rad/step.
    pub action_clamp: f64,
    /// Joint-space attractors at every arm level.
    pub intrinsic_intentions: bool,
    /// Cartesian attractors at every arm level, not only the end effector.
    pub extrinsic_intentions: bool,
    /// When false the cause priors stay wherever they were last set.
    pub planning: bool,
    /// Smallest admissible inferred length, pixels.
    pub min_length: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            dt: 0.3,
            length_scale: 200.0,
            replan_period: 10,
            proprio_precision: 1.0,
            visual_precision_arm: 0.2,
            visual_precision_tool: 2.0,
            visual_precision_ball: 2.0,
            extrinsic_precision: 1.0,
            dynamics_precision: 0.2,
            trajectory_precision: 0.2,
            length_precision: 2.0,
            pin_arm_lengths: true,
            virtual_length_precision: 0.0,
            tool_tie_precision: 0.5,
            rigid_tool_tie: true,
            attractor_gain: 0.6,
            action_clamp: 0.05,
            intrinsic_intentions: true,
            extrinsic_intentions: true,
            planning: true,
            min_length: 20.0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("agent: {m}")));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !(self.length_scale > 0.0) {
            return bad("length_scale must be positive");
        }
        if self.replan_period < 1 {
            return bad("replan_period must be at least 1");
        }
        for (name, p) in [
            ("proprio_precision", self.proprio_precision),
            ("visual_precision_arm", self.visual_precision_arm),
            ("visual_precision_tool", self.visual_precision_tool),
            ("visual_precision_ball", self.visual_precision_ball),
            ("extrinsic_precision", self.extrinsic_precision),
            ("dynamics_precision", self.dynamics_precision),
            ("trajectory_precision", self.trajectory_precision),
            ("length_precision", self.length_precision),
            ("virtual_length_precision", self.virtual_length_precision),
            ("tool_tie_precision", self.tool_tie_precision),
            ("attractor_gain", self.attractor_gain),
        ] {
            if !(p >= 0.0 && p.is_finite()) {
                return bad(&format!("{name} must be finite and nonnegative"));
            }
        }
        if self.trajectory_precision == 0.0 && self.dynamics_precision > 0.0 {
            return bad("trajectory_precision must be positive when dynamics are precise");
        }
        if !(self.action_clamp > 0.0) {
            return bad("action_clamp must be positive");
        }
        if !(self.min_length > 0.0) {
            return bad("min_length must be positive");
        }
        Ok(())
    }
}

/// Intentions available to the task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Intention {
    Stay,
    ReachTool,
    ReachBall,
}

/// `(mover, target)` slot pairs of an intention: every listed mover is
/// attracted toward its target, every other slot stays put.
fn attractor_pairs(intention: Intention, level: usize) -> &'static [(usize, usize)] {
    const A: usize = 0;
    const T: usize = 1;
    const B: usize = 2;
    match (intention, level == VIRTUAL_LEVEL) {
        (Intention::Stay, _) => &[],
        (Intention::ReachTool, false) => &[(A, T)],
        (Intention::ReachTool, true) => &[],
        (Intention::ReachBall, false) => &[(A, B), (T, B)],
        // virtual slots are [tool, ball]
        (Intention::ReachBall, true) => &[(0, 1)],
    }
}

/// `f(x) = k (i(x) − x)` as a linear map over `n_slots` blocks of `width`.
pub fn attractor_matrix(
    n_slots: usize,
    width: usize,
    pairs: &[(usize, usize)],
    gain: f64,
) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n_slots * width, n_slots * width);
    for (mover, target) in pairs {
        for c in 0..width {
            m[(mover * width + c, mover * width + c)] -= gain;
            m[(mover * width + c, target * width + c)] += gain;
        }
    }
    m
}

fn level_intentions(level: usize) -> &'static [Intention] {
    if level == VIRTUAL_LEVEL {
        &[Intention::Stay, Intention::ReachBall]
    } else {
        &[Intention::Stay, Intention::ReachTool, Intention::ReachBall]
    }
}

fn trajectory_set(
    cfg: &AgentConfig,
    level: usize,
    n_slots: usize,
    width: usize,
    active: bool,
) -> Result<Vec<PotentialTrajectory>> {
    let precision = Precision::uniform(n_slots * width, cfg.trajectory_precision)?;
    level_intentions(level)
        .iter()
        .map(|i| {
            let pairs = if active { attractor_pairs(*i, level) } else { &[] };
            let m = attractor_matrix(n_slots, width, pairs, cfg.attractor_gain);
            PotentialTrajectory::new(
                format!("{i:?}").to_lowercase(),
                Arc::new(LinearDynamics::new(m)?),
                precision.clone(),
            )
        })
        .collect()
}

/// Snapshot of the agent's discrete side, for tracing.
#[derive(Debug, Clone)]
pub struct PlanRecord {
    pub step: usize,
    pub v4: DVector<f64>,
    pub v5: DVector<f64>,
    pub states: DVector<f64>,
    pub prior4: DVector<f64>,
    pub prior5: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub config: AgentConfig,
    pub hierarchy: KinematicHierarchy,
    pub planner: DiscreteModel,
    /// Joint velocity commands.
    pub action: [f64; N_JOINTS],
    pub step_count: usize,
    pub last_plan: Option<PlanRecord>,
    pub last_reports: Vec<LevelReport>,
}

impl Agent {
    /// Builds the five-level model with beliefs at the nominal arm lengths and
    /// zero angles; call [`Agent::initialize_beliefs`] before stepping.
    pub fn build(config: AgentConfig, env: &EnvConfig, planner: TaskParams) -> Result<Self> {
        config.validate()?;
        env.validate()?;
        let planner = DiscreteModel::task(&planner)?;
        Self::with_planner(config, env, planner)
    }

    pub fn with_planner(config: AgentConfig, env: &EnvConfig, planner: DiscreteModel) -> Result<Self> {
        config.validate()?;
        env.validate()?;
        if planner.a_e4.nrows() != 3 || planner.a_e5.nrows() != 2 {
            return Err(Error::InvalidConfig(
                "planner must map to 3 level-4 and 2 level-5 causes".into(),
            ));
        }
        let scale = config.length_scale;
        let h4 = &planner.a_e4 * &planner.d;
        let h5 = &planner.a_e5 * &planner.d;
        let mut levels = Vec::with_capacity(N_LEVELS);
        for level in 0..N_LEVELS {
            let virtual_level = level == VIRTUAL_LEVEL;
            let entities: Vec<Entity> = if virtual_level {
                VIRTUAL_ENTITIES.to_vec()
            } else {
                ARM_ENTITIES.to_vec()
            };
            let n = entities.len();
            let visual_precision = if virtual_level {
                vec![config.visual_precision_tool, config.visual_precision_ball]
            } else if level == EE_LEVEL {
                vec![config.visual_precision_arm, config.visual_precision_tool, 0.0]
            } else {
                vec![config.visual_precision_arm, 0.0, 0.0]
            };
            let nominal = if virtual_level {
                env.limb_lengths[N_JOINTS - 1]
            } else {
                env.limb_lengths[level]
            } / scale;
            let spec = LevelSpec {
                name: if virtual_level {
                    "virtual".into()
                } else {
                    format!("arm{}", level + 1)
                },
                parent: level.checked_sub(1),
                entities,
                proprio: !virtual_level,
                nominal_length: Some(nominal),
                proprio_precision: config.proprio_precision,
                extrinsic_precision: config.extrinsic_precision,
                visual_precision,
                length_precision: if virtual_level {
                    config.virtual_length_precision
                } else {
                    config.length_precision
                },
                pin_length: !virtual_level && config.pin_arm_lengths,
                // virtual slots are [tool, ball]
                intrinsic_ties: if virtual_level { vec![(1, 0)] } else { Vec::new() },
                tie_precision: config.tool_tie_precision,
                rigid_ties: config.rigid_tool_tie,
            };
            let causes = if virtual_level { h5.clone() } else { h4.clone() };
            let mut joint_mu = DVector::zeros(2 * n);
            for s in 0..n {
                joint_mu[2 * s + 1] = nominal;
            }
            let intrinsic = HybridUnit::new(
                format!("{}/intrinsic", spec.name),
                GeneralizedBelief::at_rest(joint_mu),
                trajectory_set(&config, level, n, 2, config.intrinsic_intentions && !virtual_level)?,
                HiddenCauses::new(causes.clone()),
                Precision::uniform(2 * n, config.dynamics_precision)?,
            )?;
            let extrinsic = HybridUnit::new(
                format!("{}/extrinsic", spec.name),
                GeneralizedBelief::zeros(3 * n),
                trajectory_set(&config, level, n, 3, level >= EE_LEVEL || config.extrinsic_intentions)?,
                HiddenCauses::new(causes),
                Precision::uniform(3 * n, config.dynamics_precision)?,
            )?;
            levels.push(IeLevel::new(spec, intrinsic, extrinsic)?);
        }
        let mut hierarchy = KinematicHierarchy::new(Pose::zeros(), levels, config.min_length / scale)?;
        hierarchy.align_extrinsic_to_intrinsic();
        Ok(Self {
            config,
            hierarchy,
            planner,
            action: [0.0; N_JOINTS],
            step_count: 0,
            last_plan: None,
            last_reports: Vec::new(),
        })
    }

    /// Actual pathway at the observed joint angles; the object pathways start
    /// as copies of it and the virtual link extends the last limb.
    pub fn initialize_beliefs(&mut self, obs: &Observation) {
        for level in 0..N_JOINTS {
            let l = &mut self.hierarchy.levels[level];
            let len = l.spec.nominal_length.expect("arm levels have a nominal length");
            for s in 0..l.n_entities() {
                l.set_joint(s, Joint::new(obs.proprio[level], len));
            }
        }
        let len = self.hierarchy.levels[EE_LEVEL]
            .spec
            .nominal_length
            .expect("arm levels have a nominal length");
        for level in self.hierarchy.levels.iter_mut() {
            level.intrinsic.belief.mu_prime.fill(0.0);
            level.extrinsic.belief.mu_prime.fill(0.0);
        }
        self.hierarchy.align_extrinsic_to_intrinsic();
        // the tool link starts parallel to the seen tool, the ball link
        // pointing at the ball
        let ee = self.hierarchy.levels[EE_LEVEL].pose(0);
        let scale = self.config.length_scale;
        let v = &mut self.hierarchy.levels[VIRTUAL_LEVEL];
        let tool = obs.tool_tip - obs.tool_origin;
        let ball = obs.ball / scale - ee.xy();
        v.set_joint(0, Joint::new(tool.y.atan2(tool.x) - ee[2], len));
        v.set_joint(1, Joint::new(ball.y.atan2(ball.x) - ee[2], len));
        self.hierarchy.align_extrinsic_to_intrinsic();
        self.action = [0.0; N_JOINTS];
    }

    /// `∂y_p/∂a`: actions are joint velocities.
    pub fn inverse_proprio_map(&self) -> DMatrix<f64> {
        DMatrix::identity(N_JOINTS, N_JOINTS)
    }

    /// Installs cause priors on every unit: arm levels get `h4`, the virtual
    /// level `h5`.
    pub fn set_causes(&mut self, h4: &DVector<f64>, h5: &DVector<f64>) -> Result<()> {
        for (i, level) in self.hierarchy.levels.iter_mut().enumerate() {
            let h = if i == VIRTUAL_LEVEL { h5 } else { h4 };
            level.intrinsic.set_prior(h.clone())?;
            level.extrinsic.set_prior(h.clone())?;
        }
        Ok(())
    }

    pub fn causes4(&self) -> &DVector<f64> {
        &self.hierarchy.levels[EE_LEVEL].extrinsic.causes.posterior
    }

    pub fn causes5(&self) -> &DVector<f64> {
        &self.hierarchy.levels[VIRTUAL_LEVEL].extrinsic.causes.posterior
    }

    /// Cause posteriors `σ(ln H + l)` implied by the evidence so far.
    pub fn evidence_posteriors(&self) -> Result<(DVector<f64>, DVector<f64>)> {
        Ok((
            self.hierarchy.levels[EE_LEVEL].extrinsic.evidence_posterior()?,
            self.hierarchy.levels[VIRTUAL_LEVEL].extrinsic.evidence_posterior()?,
        ))
    }

    /// Routes an environment observation to the levels, in internal units.
    pub fn level_observations(&self, obs: &Observation) -> Vec<LevelObservation> {
        let scale = self.config.length_scale;
        let p = |v: &Vector2<f64>| Some(v / scale);
        (0..N_LEVELS)
            .map(|level| {
                if level == VIRTUAL_LEVEL {
                    LevelObservation {
                        proprio: None,
                        visual: vec![p(&obs.tool_tip), p(&obs.ball)],
                    }
                } else {
                    let tool = if level == EE_LEVEL { p(&obs.tool_origin) } else { None };
                    LevelObservation {
                        proprio: Some(obs.proprio[level]),
                        visual: vec![p(&obs.limbs[level]), tool, None],
                    }
                }
            })
            .collect()
    }

    /// Discrete update: fuse the accumulated evidence and the tactile signal,
    /// plan, and install the new cause priors.
    pub fn replan(&mut self, obs: &Observation) -> Result<()> {
        let (v4, v5) = self.evidence_posteriors()?;
        let states = self.planner.infer_states(&v4, &v5, &tactile_obs(obs.grasped))?;
        let (h4, h5) = self.planner.plan_and_predict()?;
        self.set_causes(&h4, &h5)?;
        self.last_plan = Some(PlanRecord {
            step: self.step_count,
            v4,
            v5,
            states,
            prior4: h4,
            prior5: h5,
        });
        Ok(())
    }

    /// Joint displacement over one integration step, `dt · a`.
    pub fn joint_displacement(&self) -> [f64; N_JOINTS] {
        self.action.map(|a| a * self.config.dt)
    }

    /// One perception-action cycle; updates the joint velocity command `a`
    /// and returns the displacement `dt · a` to apply this step.
    pub fn step(&mut self, obs: &Observation) -> Result<[f64; N_JOINTS]> {
        if self.config.planning
            && self.step_count > 0
            && self.step_count % self.config.replan_period == 0
        {
            self.replan(obs)?;
        }
        let level_obs = self.level_observations(obs);
        self.last_reports = self.hierarchy.step(&level_obs, self.config.dt)?;
        // ȧ = −∂_a y_pᵀ Π_p ε_p with ε_p = y_p − μ_θ taken before the sweep
        let clamp = self.config.action_clamp;
        for (j, a) in self.action.iter_mut().enumerate() {
            let e = self.last_reports[j].proprio_error.unwrap_or(0.0);
            *a = (*a - self.config.dt * self.config.proprio_precision * e).clamp(-clamp, clamp);
        }
        self.step_count += 1;
        Ok(self.joint_displacement())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discrete::state_index;
    use crate::env::{sample_trial, Condition, TrialSpec};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn agent() -> Agent {
        Agent::build(AgentConfig::default(), &EnvConfig::default(), TaskParams::default()).unwrap()
    }

    #[test]
    fn structure() {
        let a = agent();
        let counts: Vec<usize> = a.hierarchy.levels.iter().map(|l| l.n_entities()).collect();
        assert_eq!(counts, vec![3, 3, 3, 3, 2]);
        assert_eq!(a.hierarchy.levels[EE_LEVEL].extrinsic.trajectories.len(), 3);
        assert_eq!(a.hierarchy.levels[VIRTUAL_LEVEL].extrinsic.trajectories.len(), 2);
        assert_eq!(a.inverse_proprio_map(), DMatrix::identity(4, 4));
        // start state is (start, ungrasped) so stay dominates the first window
        assert!(a.causes4()[0] > 0.9);
        assert_eq!(a.planner.d[state_index(crate::discrete::Position::Start, false)], 1.0);
    }

    #[test]
    fn intentions_match_their_component_form() {
        let a = agent();
        let k = a.config.attractor_gain;
        let u = &a.hierarchy.levels[EE_LEVEL].extrinsic;
        let x = DVector::from_fn(9, |i, _| (i as f64 * 0.37).sin() * 3.0);
        let slot = |v: &DVector<f64>, s: usize| v.rows(3 * s, 3).into_owned();
        let stay = u.trajectories[0].dynamics.eval(&x);
        assert_eq!(stay, DVector::zeros(9));
        let rt = u.trajectories[1].dynamics.eval(&x);
        assert_abs_diff_eq!(slot(&rt, 0), (slot(&x, 1) - slot(&x, 0)) * k, epsilon = 1e-12);
        assert_eq!(slot(&rt, 1), DVector::zeros(3));
        assert_eq!(slot(&rt, 2), DVector::zeros(3));
        let rb = u.trajectories[2].dynamics.eval(&x);
        assert_abs_diff_eq!(slot(&rb, 0), (slot(&x, 2) - slot(&x, 0)) * k, epsilon = 1e-12);
        assert_abs_diff_eq!(slot(&rb, 1), (slot(&x, 2) - slot(&x, 1)) * k, epsilon = 1e-12);
        assert_eq!(slot(&rb, 2), DVector::zeros(3));

        // reach_tool vanishes when the actual and tool pathways coincide
        let mut y = x.clone();
        for c in 0..3 {
            y[3 + c] = y[c];
        }
        assert_eq!(u.trajectories[1].dynamics.eval(&y), DVector::zeros(9));

        let v = &a.hierarchy.levels[VIRTUAL_LEVEL].extrinsic;
        let x = DVector::from_fn(6, |i, _| i as f64 - 2.5);
        let rb = v.trajectories[1].dynamics.eval(&x);
        assert_abs_diff_eq!(slot(&rb, 0), (slot(&x, 1) - slot(&x, 0)) * k, epsilon = 1e-12);
        assert_eq!(slot(&rb, 1), DVector::zeros(3));
    }

    #[test]
    fn initialization_copies_the_actual_configuration() {
        let env = EnvConfig::default();
        let mut a = agent();
        let spec = TrialSpec::new(Condition::Static, 0.0, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let world = sample_trial(&env, &spec, &mut rng);
        let obs = world.observe(&env, &mut rng);
        a.initialize_beliefs(&obs);
        for level in 0..N_JOINTS {
            let l = &a.hierarchy.levels[level];
            assert_eq!(l.proprio_likelihood(), Some(obs.proprio[level]));
        }
        let ee = &a.hierarchy.levels[EE_LEVEL];
        assert_eq!(ee.pose(2), ee.pose(0));
        let scaled = ee.pose(0).xy() * a.config.length_scale;
        assert_abs_diff_eq!(scaled, obs.limbs[3], epsilon = 1e-9);
    }

    #[test]
    fn proprio_error_on_one_joint_moves_only_that_action() {
        let env = EnvConfig::default();
        let mut a = agent();
        let world = sample_trial(&env, &TrialSpec::new(Condition::Static, 0.0, 1).unwrap(), &mut ChaCha8Rng::seed_from_u64(1));
        let mut obs = world.observe(&env, &mut ChaCha8Rng::seed_from_u64(1));
        a.initialize_beliefs(&obs);
        a.config.planning = false;
        obs.proprio[1] += 0.01;
        // isolate the reflex arc from the pathways' visual pulls
        for l in a.hierarchy.levels.iter_mut() {
            l.spec.visual_precision.fill(0.0);
        }
        let act = a.step(&obs).unwrap();
        assert_eq!(act[0], 0.0);
        assert!(act[1] < 0.0);
        assert_eq!(act[2], 0.0);
        assert_eq!(act[3], 0.0);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let env = EnvConfig::default();
        for cfg in [
            AgentConfig { replan_period: 0, ..Default::default() },
            AgentConfig { dt: 0.0, ..Default::default() },
            AgentConfig { proprio_precision: -1.0, ..Default::default() },
        ] {
            assert!(Agent::build(cfg, &env, TaskParams::default()).is_err());
        }
    }
}
