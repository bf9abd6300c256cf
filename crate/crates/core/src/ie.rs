//! Intrinsic-extrinsic (IE) levels chained into a kinematic hierarchy.
//!
//! Every level holds two hybrid units: an intrinsic one over `[θ, l]` and an
//! extrinsic one over `[p_x, p_y, φ]`, each factorized into one slot per
//! entity (the actual arm plus the potential configurations related to the
//! objects). Levels are linked by the roto-translation likelihood
//! `x_e = T(x_i, x_e_parent)`, evaluated independently per entity.
//!
//! A call to [`KinematicHierarchy::step`] is one synchronous sweep: all
//! predictions and errors are computed from the current beliefs, then every
//! unit is integrated once.

use nalgebra::{DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::hybrid::{DynamicsTerms, HybridUnit};
use crate::kinematics::{jacobian_joint, jacobian_parent, roto_translate, Joint, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Entity {
    Actual,
    Tool,
    Ball,
}

impl Entity {
    pub fn label(self) -> &'static str {
        match self {
            Entity::Actual => "actual",
            Entity::Tool => "tool",
            Entity::Ball => "ball",
        }
    }
}

/// Static description of one level.
#[derive(Debug, Clone)]
pub struct LevelSpec {
    pub name: String,
    /// `None` attaches the level to the fixed base pose.
    pub parent: Option<usize>,
    pub entities: Vec<Entity>,
    /// Whether the actual entity's joint angle is observed proprioceptively.
    pub proprio: bool,
    /// Nominal limb length pinned by the length prior, if any.
    pub nominal_length: Option<f64>,
    pub proprio_precision: f64,
    /// `Π_e` of this level's extrinsic prediction error.
    pub extrinsic_precision: f64,
    /// Visual precision per entity slot.
    pub visual_precision: Vec<f64>,
    pub length_precision: f64,
    /// Holds every length exactly at `nominal_length` instead.
    pub pin_length: bool,
    /// `(slot, anchor)`: the intrinsic belief of `slot` is pulled toward that
    /// of `anchor` with `tie_precision`; the anchor is not affected.
    pub intrinsic_ties: Vec<(usize, usize)>,
    pub tie_precision: f64,
    /// Tied slots copy their anchor's intrinsic belief after every step
    /// instead of being pulled toward it.
    pub rigid_ties: bool,
}

impl LevelSpec {
    pub fn slot(&self, entity: Entity) -> Option<usize> {
        self.entities.iter().position(|e| *e == entity)
    }
}

#[derive(Debug, Clone)]
pub struct IeLevel {
    pub spec: LevelSpec,
    pub intrinsic: HybridUnit,
    pub extrinsic: HybridUnit,
}

impl IeLevel {
    pub fn new(spec: LevelSpec, intrinsic: HybridUnit, extrinsic: HybridUnit) -> Result<Self> {
        let n = spec.entities.len();
        check_dim("intrinsic unit", 2 * n, intrinsic.dim())?;
        check_dim("extrinsic unit", 3 * n, extrinsic.dim())?;
        check_dim("visual precision", n, spec.visual_precision.len())?;
        if spec.intrinsic_ties.iter().any(|(a, b)| *a >= n || *b >= n || a == b) {
            return Err(Error::InvalidConfig(format!(
                "level {} has an invalid intrinsic tie",
                spec.name
            )));
        }
        if spec.proprio && spec.slot(Entity::Actual).is_none() {
            return Err(Error::InvalidConfig(format!(
                "level {} has proprioception but no actual entity",
                spec.name
            )));
        }
        Ok(Self {
            spec,
            intrinsic,
            extrinsic,
        })
    }

    pub fn n_entities(&self) -> usize {
        self.spec.entities.len()
    }

    pub fn joint(&self, slot: usize) -> Joint {
        let mu = &self.intrinsic.belief.mu;
        Joint::new(mu[2 * slot], mu[2 * slot + 1])
    }

    pub fn pose(&self, slot: usize) -> Pose {
        let mu = &self.extrinsic.belief.mu;
        Pose::new(mu[3 * slot], mu[3 * slot + 1], mu[3 * slot + 2])
    }

    pub fn pose_velocity(&self, slot: usize) -> Pose {
        let mu = &self.extrinsic.belief.mu_prime;
        Pose::new(mu[3 * slot], mu[3 * slot + 1], mu[3 * slot + 2])
    }

    pub fn set_joint(&mut self, slot: usize, joint: Joint) {
        self.intrinsic.belief.mu[2 * slot] = joint[0];
        self.intrinsic.belief.mu[2 * slot + 1] = joint[1];
    }

    pub fn set_pose(&mut self, slot: usize, pose: Pose) {
        for k in 0..3 {
            self.extrinsic.belief.mu[3 * slot + k] = pose[k];
        }
    }

    /// `g_e`: one roto-translation per entity against the matching parent
    /// pose.
    pub fn extrinsic_likelihood(&self, parent_poses: &[Pose]) -> Vec<Pose> {
        (0..self.n_entities())
            .map(|s| roto_translate(&self.joint(s), &parent_poses[s]))
            .collect()
    }

    /// `g_p`: the actual entity's joint angle.
    pub fn proprio_likelihood(&self) -> Option<f64> {
        if !self.spec.proprio {
            return None;
        }
        self.spec.slot(Entity::Actual).map(|s| self.joint(s)[0])
    }

    /// `g_v`: 2×N matrix of entity positions (orientation excluded).
    pub fn visual_likelihood(&self) -> nalgebra::DMatrix<f64> {
        let n = self.n_entities();
        nalgebra::DMatrix::from_fn(2, n, |r, c| self.pose(c)[r])
    }
}

/// Observations routed to one level.
#[derive(Debug, Clone, Default)]
pub struct LevelObservation {
    pub proprio: Option<f64>,
    /// Observed position per entity slot; `None` means unobserved.
    pub visual: Vec<Option<Vector2<f64>>>,
}

/// The five forces on one entity's extrinsic 0th order.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ExtrinsicForces {
    /// `μ′`
    pub first_order: Pose,
    /// `−Π_e ε_e` from this level's own prediction.
    pub own_error: Pose,
    /// `Σ ∂g_eᵀ Π_e ε_e` from child levels.
    pub child_errors: Pose,
    /// `∂g_vᵀ Π_v ε_v`
    pub visual: Pose,
    /// `∂η′ᵀ Π_x ε_x`
    pub dynamics: Pose,
}

impl ExtrinsicForces {
    pub fn total(&self) -> Pose {
        self.first_order + self.own_error + self.child_errors + self.visual + self.dynamics
    }
}

/// Everything computed for one level during a sweep.
#[derive(Debug, Clone)]
pub struct LevelReport {
    pub proprio_error: Option<f64>,
    /// `ε_e = μ_e − g_e(μ_i, μ_e_parent)` per entity.
    pub extrinsic_error: Vec<Pose>,
    pub visual_error: Vec<Option<Vector2<f64>>>,
    pub forces: Vec<ExtrinsicForces>,
    /// Total 0th-order updates actually integrated.
    pub intrinsic_dot: DVector<f64>,
    pub extrinsic_dot: DVector<f64>,
    pub intrinsic_dynamics: DynamicsTerms,
    pub extrinsic_dynamics: DynamicsTerms,
}

#[derive(Debug, Clone)]
pub struct KinematicHierarchy {
    pub base: Pose,
    pub levels: Vec<IeLevel>,
    /// Lower bound on every inferred length.
    pub min_length: f64,
    children: Vec<Vec<usize>>,
    /// `parent_slot[i][s]`: slot of entity `s` of level `i` in its parent.
    parent_slot: Vec<Vec<usize>>,
}

impl KinematicHierarchy {
    pub fn new(base: Pose, levels: Vec<IeLevel>, min_length: f64) -> Result<Self> {
        let mut children = vec![Vec::new(); levels.len()];
        let mut parent_slot = Vec::with_capacity(levels.len());
        for (i, level) in levels.iter().enumerate() {
            let slots = match level.spec.parent {
                None => vec![usize::MAX; level.n_entities()],
                Some(p) => {
                    if p >= i {
                        return Err(Error::InvalidConfig(format!(
                            "level {} must come after its parent {p}",
                            level.spec.name
                        )));
                    }
                    children[p].push(i);
                    level
                        .spec
                        .entities
                        .iter()
                        .map(|e| {
                            levels[p].spec.slot(*e).ok_or_else(|| {
                                Error::InvalidConfig(format!(
                                    "entity {} of level {} missing from its parent",
                                    e.label(),
                                    level.spec.name
                                ))
                            })
                        })
                        .collect::<Result<Vec<_>>>()?
                }
            };
            parent_slot.push(slots);
        }
        Ok(Self {
            base,
            levels,
            min_length,
            children,
            parent_slot,
        })
    }

    pub fn children(&self, level: usize) -> &[usize] {
        &self.children[level]
    }

    /// Parent pose of every entity slot of `level`, read from current beliefs.
    pub fn parent_poses(&self, level: usize) -> Vec<Pose> {
        let l = &self.levels[level];
        match l.spec.parent {
            None => vec![self.base; l.n_entities()],
            Some(p) => self.parent_slot[level]
                .iter()
                .map(|s| self.levels[p].pose(*s))
                .collect(),
        }
    }

    /// Extrinsic predictions of every level from the current beliefs.
    pub fn predictions(&self) -> Vec<Vec<Pose>> {
        (0..self.levels.len())
            .map(|i| self.levels[i].extrinsic_likelihood(&self.parent_poses(i)))
            .collect()
    }

    /// Sets every extrinsic belief to the prediction of its intrinsic chain,
    /// top-down.
    pub fn align_extrinsic_to_intrinsic(&mut self) {
        for i in 0..self.levels.len() {
            let pred = self.levels[i].extrinsic_likelihood(&self.parent_poses(i));
            for (s, p) in pred.into_iter().enumerate() {
                self.levels[i].set_pose(s, p);
            }
        }
    }

    /// One synchronous sweep. `obs` has one entry per level.
    pub fn step(&mut self, obs: &[LevelObservation], dt: f64) -> Result<Vec<LevelReport>> {
        check_dim("hierarchy observations", self.levels.len(), obs.len())?;
        let n_levels = self.levels.len();

        // Predictions and errors, all from the current beliefs.
        let mut ext_err = Vec::with_capacity(n_levels);
        for i in 0..n_levels {
            let parents = self.parent_poses(i);
            let level = &self.levels[i];
            let pred = level.extrinsic_likelihood(&parents);
            ext_err.push(
                (0..level.n_entities())
                    .map(|s| level.pose(s) - pred[s])
                    .collect::<Vec<Pose>>(),
            );
        }

        // Backward extrinsic errors, mapped through ∂T/∂parent.
        let mut child_force: Vec<Vec<Pose>> = self
            .levels
            .iter()
            .map(|l| vec![Pose::zeros(); l.n_entities()])
            .collect();
        for i in 0..n_levels {
            let Some(p) = self.levels[i].spec.parent else {
                continue;
            };
            let parents = self.parent_poses(i);
            let level = &self.levels[i];
            for s in 0..level.n_entities() {
                let jp = jacobian_parent(&level.joint(s), &parents[s]);
                child_force[p][self.parent_slot[i][s]] +=
                    jp.transpose() * (ext_err[i][s] * level.spec.extrinsic_precision);
            }
        }

        let mut reports = Vec::with_capacity(n_levels);
        let mut updates = Vec::with_capacity(n_levels);
        for i in 0..n_levels {
            let parents = self.parent_poses(i);
            let level = &self.levels[i];
            let spec = &level.spec;
            let n = level.n_entities();
            let o = &obs[i];

            let mut int_force = DVector::zeros(2 * n);
            let mut proprio_error = None;
            for s in 0..n {
                let joint = level.joint(s);
                let jj = jacobian_joint(&joint, &parents[s]);
                let f = jj.transpose() * (ext_err[i][s] * spec.extrinsic_precision);
                int_force[2 * s] += f[0];
                int_force[2 * s + 1] += f[1];
                if let Some(l0) = spec.nominal_length {
                    int_force[2 * s + 1] -= spec.length_precision * (joint[1] - l0);
                }
            }
            for (s, anchor) in spec.intrinsic_ties.iter().filter(|_| !spec.rigid_ties) {
                let d = level.joint(*s) - level.joint(*anchor);
                int_force[2 * s] -= spec.tie_precision * d[0];
                int_force[2 * s + 1] -= spec.tie_precision * d[1];
            }
            if let (Some(y), Some(pred)) = (o.proprio, level.proprio_likelihood()) {
                let e = y - pred;
                let s = spec.slot(Entity::Actual).expect("checked at construction");
                int_force[2 * s] += spec.proprio_precision * e;
                proprio_error = Some(e);
            }

            let int_terms = level.intrinsic.dynamics_terms()?;
            let ext_terms = level.extrinsic.dynamics_terms()?;
            let mut forces = Vec::with_capacity(n);
            let mut visual_error = Vec::with_capacity(n);
            let mut ext_force = DVector::zeros(3 * n);
            for s in 0..n {
                let mut visual = Pose::zeros();
                let ve = o.visual.get(s).copied().flatten().map(|y| {
                    let pose = level.pose(s);
                    y - Vector2::new(pose[0], pose[1])
                });
                if let Some(e) = ve {
                    visual[0] = spec.visual_precision[s] * e[0];
                    visual[1] = spec.visual_precision[s] * e[1];
                }
                visual_error.push(ve);
                let own = -ext_err[i][s] * spec.extrinsic_precision;
                for k in 0..3 {
                    ext_force[3 * s + k] = own[k] + child_force[i][s][k] + visual[k];
                }
                forces.push(ExtrinsicForces {
                    first_order: level.pose_velocity(s),
                    own_error: own,
                    child_errors: child_force[i][s],
                    visual,
                    dynamics: Pose::new(
                        ext_terms.backward[3 * s],
                        ext_terms.backward[3 * s + 1],
                        ext_terms.backward[3 * s + 2],
                    ),
                });
            }
            let intrinsic_dot = &level.intrinsic.belief.mu_prime + &int_force + &int_terms.backward;
            let extrinsic_dot = &level.extrinsic.belief.mu_prime + &ext_force + &ext_terms.backward;
            updates.push((int_force, ext_force));
            reports.push(LevelReport {
                proprio_error,
                extrinsic_error: ext_err[i].clone(),
                visual_error,
                forces,
                intrinsic_dot,
                extrinsic_dot,
                intrinsic_dynamics: int_terms,
                extrinsic_dynamics: ext_terms,
            });
        }

        // Integration: each unit only reads its own belief from here on.
        for (level, (int_force, ext_force)) in self.levels.iter_mut().zip(updates) {
            level.intrinsic.step(&int_force, None, dt)?;
            level.extrinsic.step(&ext_force, None, dt)?;
            let pinned = level.spec.nominal_length.filter(|_| level.spec.pin_length);
            for s in 0..level.n_entities() {
                let b = &mut level.intrinsic.belief;
                if let Some(l0) = pinned {
                    b.mu[2 * s + 1] = l0;
                    b.mu_prime[2 * s + 1] = 0.0;
                } else if b.mu[2 * s + 1] < self.min_length {
                    b.mu[2 * s + 1] = self.min_length;
                }
            }
            if level.spec.rigid_ties {
                for &(s, anchor) in &level.spec.intrinsic_ties {
                    let b = &mut level.intrinsic.belief;
                    for k in 0..2 {
                        b.mu[2 * s + k] = b.mu[2 * anchor + k];
                        b.mu_prime[2 * s + k] = b.mu_prime[2 * anchor + k];
                    }
                }
            }
        }
        Ok(reports)
    }
}
