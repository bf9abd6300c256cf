//! Single-unit dynamic inference: which of two moving objects is a hand
//! following? Both candidate reaching movements are potential trajectories of
//! one hybrid unit, and the accumulated evidence decides between them.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector2};

use crate::belief::{GeneralizedBelief, Precision};
use crate::error::Result;
use crate::hybrid::{HiddenCauses, HybridUnit, LinearDynamics, PotentialTrajectory};

#[derive(Debug, Clone)]
pub struct TwoObjectScenario {
    pub steps: usize,
    pub dt: f64,
    /// Per-step gain of the hand toward the tracked object.
    pub gain: f64,
    pub hand: Vector2<f64>,
    pub tracked: Vector2<f64>,
    pub tracked_velocity: Vector2<f64>,
    pub distractor_center: Vector2<f64>,
    pub distractor_radius: f64,
    /// Angular speed of the distractor, rad/step.
    pub distractor_rate: f64,
    pub obs_precision: f64,
    pub velocity_obs_precision: f64,
    pub dynamics_precision: f64,
}

impl Default for TwoObjectScenario {
    fn default() -> Self {
        Self {
            steps: 100,
            dt: 0.3,
            gain: 0.03,
            hand: Vector2::new(0.0, 0.0),
            tracked: Vector2::new(15.0, 6.0),
            tracked_velocity: Vector2::new(-0.02, 0.04),
            distractor_center: Vector2::new(0.0, 0.0),
            distractor_radius: 12.0,
            distractor_rate: 0.02,
            obs_precision: 1.0,
            velocity_obs_precision: 1.0,
            dynamics_precision: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrackingOutcome {
    /// Cause posterior `[tracked, distractor]` under a uniform prior.
    pub posterior: DVector<f64>,
    pub log_evidence: DVector<f64>,
}

/// `f(x) = k (o_target − hand)` on state `[hand, o_1, o_2]`.
fn reach(target: usize, k: f64) -> Result<LinearDynamics> {
    let mut m = DMatrix::zeros(6, 6);
    for c in 0..2 {
        m[(c, c)] = -k;
        m[(c, 2 * (target + 1) + c)] = k;
    }
    LinearDynamics::new(m)
}

impl TwoObjectScenario {
    fn distractor_at(&self, step: usize) -> Vector2<f64> {
        let a = self.distractor_rate * step as f64;
        self.distractor_center + Vector2::new(a.cos(), a.sin()) * self.distractor_radius
    }

    pub fn run(&self) -> Result<TrackingOutcome> {
        let k = self.gain / self.dt;
        let pi_x = Precision::uniform(6, self.dynamics_precision)?;
        let trajectories = vec![
            PotentialTrajectory::new("tracked", Arc::new(reach(0, k)?), pi_x.clone())?,
            PotentialTrajectory::new("distractor", Arc::new(reach(1, k)?), pi_x.clone())?,
        ];
        let mut hand = self.hand;
        let mut tracked = self.tracked;
        let state = |h: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>| {
            DVector::from_column_slice(&[h.x, h.y, a.x, a.y, b.x, b.y])
        };
        let mut unit = HybridUnit::new(
            "tracker",
            GeneralizedBelief::at_rest(state(&hand, &tracked, &self.distractor_at(0))),
            trajectories,
            HiddenCauses::uniform(2),
            pi_x,
        )?
        .with_first_order_obs(Precision::uniform(6, self.velocity_obs_precision)?)?;
        let obs_prec = Precision::uniform(6, self.obs_precision)?;

        for step in 0..self.steps {
            let hand_vel = (tracked - hand) * self.gain;
            let distractor = self.distractor_at(step);
            let distractor_vel = self.distractor_at(step + 1) - distractor;
            let y = state(&hand, &tracked, &distractor);
            let y_prime = state(&hand_vel, &self.tracked_velocity, &distractor_vel) / self.dt;

            let force = obs_prec.weigh(&(y - &unit.belief.mu));
            unit.step(&force, Some(&y_prime), self.dt)?;

            hand += hand_vel;
            tracked += self.tracked_velocity;
        }
        Ok(TrackingOutcome {
            posterior: unit.evidence_posterior()?,
            log_evidence: unit.causes.log_evidence.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tracked_object_wins() {
        let out = TwoObjectScenario::default().run().unwrap();
        assert!(out.posterior[0] > 0.9, "{:?}", out.posterior);
    }

    #[test]
    fn coincident_objects_are_indistinguishable() {
        let s = TwoObjectScenario {
            tracked: Vector2::new(12.0, 0.0),
            tracked_velocity: Vector2::zeros(),
            distractor_center: Vector2::new(12.0, 0.0),
            distractor_radius: 0.0,
            distractor_rate: 0.0,
            ..Default::default()
        };
        let out = s.run().unwrap();
        assert!((out.posterior[0] - 0.5).abs() < 1e-9);
    }
}
