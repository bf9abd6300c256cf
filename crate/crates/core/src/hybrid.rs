//! The hybrid unit: a continuous generalized belief whose first-order prior is
//! a mixture of potential trajectories, weighted by discrete hidden causes.
//!
//! Top-down, the causes are turned into a trajectory prior by Bayesian model
//! averaging. Bottom-up, each trajectory is scored as a reduced model of the
//! full first-order prior (Bayesian model reduction under the Laplace
//! assumption) and the resulting log evidence is accumulated until the next
//! discrete update.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::belief::{integrate_belief, ln_floor_vec, softmax, GeneralizedBelief, Precision};
use crate::error::{check_dim, Error, Result};

/// A reduced dynamics model `f_m`, mapping the 0th-order belief to a predicted
/// first-order belief.
pub trait Dynamics: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn eval(&self, x: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

/// `f(x) = M x`. Every attractor used by the tool-use model is of this form.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDynamics {
    matrix: DMatrix<f64>,
}

impl LinearDynamics {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        check_dim("linear dynamics (square)", matrix.nrows(), matrix.ncols())?;
        Ok(Self { matrix })
    }

    /// The "stay" trajectory, `f ≡ 0`.
    pub fn zero(dim: usize) -> Self {
        Self {
            matrix: DMatrix::zeros(dim, dim),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

impl Dynamics for LinearDynamics {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x
    }

    fn jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.matrix.clone()
    }
}

#[derive(Debug, Clone)]
pub struct PotentialTrajectory {
    pub name: String,
    pub dynamics: Arc<dyn Dynamics>,
    /// Precision of the reduced first-order prior, `Π_{x,m}`.
    pub reduced_prior_precision: Precision,
}

impl PotentialTrajectory {
    pub fn new(
        name: impl Into<String>,
        dynamics: Arc<dyn Dynamics>,
        reduced_prior_precision: Precision,
    ) -> Result<Self> {
        check_dim(
            "trajectory precision",
            dynamics.dim(),
            reduced_prior_precision.len(),
        )?;
        Ok(Self {
            name: name.into(),
            dynamics,
            reduced_prior_precision,
        })
    }
}

/// Categorical hidden causes of a unit.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenCauses {
    /// `H_v`, supplied top-down by the discrete model.
    pub prior: DVector<f64>,
    /// `v`, the weights used for model averaging.
    pub posterior: DVector<f64>,
    /// `l`, accumulated since the last discrete update.
    pub log_evidence: DVector<f64>,
}

impl HiddenCauses {
    pub fn new(prior: DVector<f64>) -> Self {
        let n = prior.len();
        Self {
            posterior: prior.clone(),
            prior,
            log_evidence: DVector::zeros(n),
        }
    }

    pub fn uniform(n: usize) -> Self {
        Self::new(DVector::from_element(n, 1.0 / n as f64))
    }

    pub fn len(&self) -> usize {
        self.prior.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prior.is_empty()
    }
}

/// `η′ = Σ_m v_m f_m(μ)`.
pub fn bma_trajectory(
    causes: &DVector<f64>,
    trajectories: &[PotentialTrajectory],
    mu: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_dim("bma causes", trajectories.len(), causes.len())?;
    let mut out = DVector::zeros(mu.len());
    for (v, traj) in causes.iter().zip(trajectories) {
        check_dim("bma trajectory", mu.len(), traj.dynamics.dim())?;
        if *v != 0.0 {
            out += traj.dynamics.eval(mu) * *v;
        }
    }
    Ok(out)
}

/// `∂η′/∂μ = Σ_m v_m ∂f_m/∂μ`.
pub fn bma_jacobian(
    causes: &DVector<f64>,
    trajectories: &[PotentialTrajectory],
    mu: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    check_dim("bma causes", trajectories.len(), causes.len())?;
    let n = mu.len();
    let mut out = DMatrix::zeros(n, n);
    for (v, traj) in causes.iter().zip(trajectories) {
        if *v != 0.0 {
            out += traj.dynamics.jacobian(mu) * *v;
        }
    }
    Ok(out)
}

/// Laplace-form reduced posterior for diagonal Gaussians:
/// `P_m = P − Π + Π_m`, `μ_m = P_m⁻¹ (P μ − Π η + Π_m η_m)`.
pub fn reduced_posterior(
    full_post_mean: &DVector<f64>,
    full_post_prec: &Precision,
    full_prior_mean: &DVector<f64>,
    full_prior_prec: &Precision,
    reduced_prior_mean: &DVector<f64>,
    reduced_prior_prec: &Precision,
) -> Result<(DVector<f64>, Precision)> {
    let n = full_post_mean.len();
    for (ctx, len) in [
        ("reduced_posterior P", full_post_prec.len()),
        ("reduced_posterior eta", full_prior_mean.len()),
        ("reduced_posterior Pi", full_prior_prec.len()),
        ("reduced_posterior eta_m", reduced_prior_mean.len()),
        ("reduced_posterior Pi_m", reduced_prior_prec.len()),
    ] {
        check_dim(ctx, n, len)?;
    }
    let p = full_post_prec.values();
    let pi = full_prior_prec.values();
    let pi_m = reduced_prior_prec.values();
    let mut mean = DVector::zeros(n);
    let mut prec = DVector::zeros(n);
    for k in 0..n {
        let p_m = p[k] - pi[k] + pi_m[k];
        if !(p_m > 0.0) {
            return Err(Error::DegenerateReducedPrecision {
                index: k,
                value: p_m,
            });
        }
        prec[k] = p_m;
        mean[k] = (p[k] * full_post_mean[k] - pi[k] * full_prior_mean[k]
            + pi_m[k] * reduced_prior_mean[k])
            / p_m;
    }
    Ok((mean, Precision::new(prec)?))
}

fn quad(x: &DVector<f64>, prec: &Precision) -> f64 {
    x.dot(&prec.weigh(x))
}

/// Per-step log-evidence increment of each reduced model:
/// `½ (μ_mᵀ P_m μ_m − η_mᵀ Π_m η_m − μᵀ P μ + ηᵀ Π η)`.
pub fn log_evidence_increments(
    full_post_mean: &DVector<f64>,
    full_post_prec: &Precision,
    full_prior_mean: &DVector<f64>,
    full_prior_prec: &Precision,
    reduced: &[(DVector<f64>, Precision)],
) -> Result<DVector<f64>> {
    let full_terms =
        quad(full_prior_mean, full_prior_prec) - quad(full_post_mean, full_post_prec);
    let mut out = DVector::zeros(reduced.len());
    for (m, (eta_m, pi_m)) in reduced.iter().enumerate() {
        let (mu_m, p_m) = reduced_posterior(
            full_post_mean,
            full_post_prec,
            full_prior_mean,
            full_prior_prec,
            eta_m,
            pi_m,
        )?;
        out[m] = 0.5 * (quad(&mu_m, &p_m) - quad(eta_m, pi_m) + full_terms);
    }
    Ok(out)
}

/// Dynamics-related quantities of one unit at the current belief.
#[derive(Debug, Clone)]
pub struct DynamicsTerms {
    /// `η′`, the model-averaged first-order prior.
    pub eta_prime: DVector<f64>,
    /// `ε_x = μ′ − η′`.
    pub error: DVector<f64>,
    /// `∂η′ᵀ Π_x ε_x`, the backward dynamics force on the 0th order.
    pub backward: DVector<f64>,
    /// `−Π_x ε_x`, the update of the first order.
    pub forward: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct HybridUnit {
    pub name: String,
    pub belief: GeneralizedBelief,
    pub trajectories: Vec<PotentialTrajectory>,
    pub causes: HiddenCauses,
    /// `Π_x`, precision of the full first-order prior.
    pub prior_precision: Precision,
    /// Precision of direct first-order observations; zero when none are
    /// wired to this unit.
    pub first_order_obs_precision: Precision,
}

impl HybridUnit {
    pub fn new(
        name: impl Into<String>,
        belief: GeneralizedBelief,
        trajectories: Vec<PotentialTrajectory>,
        causes: HiddenCauses,
        prior_precision: Precision,
    ) -> Result<Self> {
        let dim = belief.dim();
        check_dim("unit causes", trajectories.len(), causes.len())?;
        check_dim("unit prior precision", dim, prior_precision.len())?;
        for t in &trajectories {
            check_dim("unit trajectory", dim, t.dynamics.dim())?;
        }
        Ok(Self {
            name: name.into(),
            belief,
            trajectories,
            causes,
            prior_precision,
            first_order_obs_precision: Precision::uniform(dim, 0.0)?,
        })
    }

    pub fn with_first_order_obs(mut self, precision: Precision) -> Result<Self> {
        check_dim("first-order obs precision", self.dim(), precision.len())?;
        self.first_order_obs_precision = precision;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.belief.dim()
    }

    pub fn eta_prime(&self) -> Result<DVector<f64>> {
        bma_trajectory(&self.causes.posterior, &self.trajectories, &self.belief.mu)
    }

    /// `f_m(μ)` for every trajectory.
    pub fn trajectory_predictions(&self) -> Vec<DVector<f64>> {
        self.trajectories
            .iter()
            .map(|t| t.dynamics.eval(&self.belief.mu))
            .collect()
    }

    /// Posterior precision of the first order: the dynamics prior plus any
    /// first-order observation terms.
    pub fn first_order_posterior_precision(&self) -> Result<Precision> {
        Precision::new(self.prior_precision.values() + self.first_order_obs_precision.values())
    }

    pub fn dynamics_terms(&self) -> Result<DynamicsTerms> {
        let eta_prime = self.eta_prime()?;
        let error = &self.belief.mu_prime - &eta_prime;
        let weighted = self.prior_precision.weigh(&error);
        let jac = bma_jacobian(&self.causes.posterior, &self.trajectories, &self.belief.mu)?;
        Ok(DynamicsTerms {
            backward: jac.transpose() * &weighted,
            forward: -weighted,
            eta_prime,
            error,
        })
    }

    /// Scores every trajectory against the current first-order belief and adds
    /// `dt` times the increment to the accumulated log evidence.
    pub fn accumulate_log_evidence(&mut self, dt: f64) -> Result<DVector<f64>> {
        let eta = self.eta_prime()?;
        let post_prec = self.first_order_posterior_precision()?;
        let reduced: Vec<_> = self
            .trajectories
            .iter()
            .map(|t| {
                (
                    t.dynamics.eval(&self.belief.mu),
                    t.reduced_prior_precision.clone(),
                )
            })
            .collect();
        let inc = log_evidence_increments(
            &self.belief.mu_prime,
            &post_prec,
            &eta,
            &self.prior_precision,
            &reduced,
        )? * dt;
        if inc.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("log evidence of unit {}", self.name),
            });
        }
        self.causes.log_evidence += &inc;
        Ok(inc)
    }

    /// `v = σ(ln H_v + l)`; stored as the unit's cause posterior.
    pub fn posterior_causes(&mut self) -> Result<DVector<f64>> {
        let post = self.evidence_posterior()?;
        self.causes.posterior = post.clone();
        Ok(post)
    }

    /// `σ(ln H_v + l)` without storing it.
    pub fn evidence_posterior(&self) -> Result<DVector<f64>> {
        softmax(&(ln_floor_vec(&self.causes.prior) + &self.causes.log_evidence))
    }

    /// Installs a new top-down prior, uses it as the averaging weights for the
    /// coming window and clears the accumulated evidence.
    pub fn set_prior(&mut self, prior: DVector<f64>) -> Result<()> {
        check_dim("unit prior", self.causes.len(), prior.len())?;
        self.causes.posterior = prior.clone();
        self.causes.prior = prior;
        self.reset_evidence();
        Ok(())
    }

    pub fn reset_evidence(&mut self) {
        self.causes.log_evidence.fill(0.0);
    }

    /// Euler step of the belief; the error names the unit.
    pub fn integrate(&mut self, dmu: &DVector<f64>, dmu_prime: &DVector<f64>, dt: f64) -> Result<()> {
        self.belief = integrate_belief(&self.belief, dmu, dmu_prime, dt).map_err(|e| match e {
            Error::NonFinite { .. } => Error::NonFinite {
                context: format!("belief of unit {}", self.name),
            },
            other => other,
        })?;
        Ok(())
    }

    /// Full update given the likelihood force on the 0th order and an optional
    /// first-order observation. Returns the dynamics terms used.
    pub fn step(
        &mut self,
        likelihood_force: &DVector<f64>,
        first_order_obs: Option<&DVector<f64>>,
        dt: f64,
    ) -> Result<DynamicsTerms> {
        let terms = self.dynamics_terms()?;
        self.accumulate_log_evidence(dt)?;
        let dmu = &self.belief.mu_prime + likelihood_force + &terms.backward;
        let mut dmu_prime = terms.forward.clone();
        if let Some(obs) = first_order_obs {
            check_dim("first-order observation", self.dim(), obs.len())?;
            dmu_prime += self
                .first_order_obs_precision
                .weigh(&(obs - &self.belief.mu_prime));
        }
        self.integrate(&dmu, &dmu_prime, dt)?;
        Ok(terms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn lin(rows: usize, data: &[f64]) -> Arc<dyn Dynamics> {
        Arc::new(LinearDynamics::new(DMatrix::from_row_slice(rows, rows, data)).unwrap())
    }

    /// Constant dynamics `f(x) = c`, only for tests.
    #[derive(Debug)]
    struct Constant(DVector<f64>);
    impl Dynamics for Constant {
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn eval(&self, _x: &DVector<f64>) -> DVector<f64> {
            self.0.clone()
        }
        fn jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::zeros(self.0.len(), self.0.len())
        }
    }

    fn traj(d: Arc<dyn Dynamics>, prec: f64) -> PotentialTrajectory {
        let n = d.dim();
        PotentialTrajectory::new("t", d, Precision::uniform(n, prec).unwrap()).unwrap()
    }

    #[test]
    fn bma_examples() {
        let ts = vec![traj(lin(1, &[1.0]), 1.0), traj(lin(1, &[-1.0]), 1.0)];
        assert_eq!(bma_trajectory(&v(&[1.0, 0.0]), &ts, &v(&[2.0])).unwrap(), v(&[2.0]));

        let ts = vec![
            traj(Arc::new(Constant(v(&[1.0]))), 1.0),
            traj(Arc::new(Constant(v(&[3.0]))), 1.0),
        ];
        assert_eq!(bma_trajectory(&v(&[0.5, 0.5]), &ts, &v(&[7.0])).unwrap(), v(&[2.0]));

        // three linear maps evaluated by hand: [0, 1.2]
        let ts = vec![
            traj(lin(2, &[1.0, 0.0, 0.0, 2.0]), 1.0),
            traj(lin(2, &[0.0, 1.0, 1.0, 0.0]), 1.0),
            traj(lin(2, &[-1.0, 0.0, 0.5, 0.5]), 1.0),
        ];
        let out = bma_trajectory(&v(&[0.2, 0.3, 0.5]), &ts, &v(&[1.0, 1.0])).unwrap();
        assert_abs_diff_eq!(out[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(out[1], 1.2, epsilon = 1e-15);

        assert!(bma_trajectory(&v(&[1.0]), &ts, &v(&[1.0, 1.0])).is_err());
    }

    #[test]
    fn reduced_posterior_examples() {
        let p = Precision::from_slice(&[2.0]).unwrap();
        let pi = Precision::from_slice(&[1.0]).unwrap();
        // identity reduction
        let (m, pm) = reduced_posterior(&v(&[1.3]), &p, &v(&[0.4]), &pi, &v(&[0.4]), &pi).unwrap();
        assert_abs_diff_eq!(m[0], 1.3, epsilon = 1e-12);
        assert_eq!(pm, p);
        // P=2, μ=1, Π=1, η=0, Π_m=1, η_m=3 → P_m=2, μ_m=2.5
        let (m, pm) = reduced_posterior(&v(&[1.0]), &p, &v(&[0.0]), &pi, &v(&[3.0]), &pi).unwrap();
        assert_abs_diff_eq!(m[0], 2.5, epsilon = 1e-15);
        assert_abs_diff_eq!(pm.values()[0], 2.0);
    }

    #[test]
    fn reduced_posterior_vector_is_componentwise() {
        let mu = v(&[1.0, -2.0, 0.5]);
        let p = Precision::from_slice(&[2.0, 3.0, 1.5]).unwrap();
        let eta = v(&[0.0, 1.0, -1.0]);
        let pi = Precision::from_slice(&[1.0, 0.5, 1.0]).unwrap();
        let eta_m = v(&[3.0, 0.0, 2.0]);
        let pi_m = Precision::from_slice(&[0.5, 2.0, 1.0]).unwrap();
        let (m, pm) = reduced_posterior(&mu, &p, &eta, &pi, &eta_m, &pi_m).unwrap();
        for k in 0..3 {
            let s = Precision::from_slice(&[p.values()[k]]).unwrap();
            let a = Precision::from_slice(&[pi.values()[k]]).unwrap();
            let b = Precision::from_slice(&[pi_m.values()[k]]).unwrap();
            let (mk, pk) =
                reduced_posterior(&v(&[mu[k]]), &s, &v(&[eta[k]]), &a, &v(&[eta_m[k]]), &b)
                    .unwrap();
            assert_eq!(m[k], mk[0]);
            assert_eq!(pm.values()[k], pk.values()[0]);
        }
    }

    #[test]
    fn reduced_posterior_rejects_degenerate_precision() {
        let p = Precision::from_slice(&[1.0]).unwrap();
        let pi = Precision::from_slice(&[2.0]).unwrap();
        let pi_m = Precision::from_slice(&[1.0]).unwrap();
        let r = reduced_posterior(&v(&[0.0]), &p, &v(&[0.0]), &pi, &v(&[0.0]), &pi_m);
        assert!(matches!(r, Err(Error::DegenerateReducedPrecision { index: 0, .. })));
    }

    fn scalar_unit(fs: &[f64], causes: &[f64], mu_prime: f64) -> HybridUnit {
        let ts = fs
            .iter()
            .map(|c| traj(Arc::new(Constant(v(&[*c]))), 1.0))
            .collect();
        HybridUnit::new(
            "u",
            GeneralizedBelief::new(v(&[0.0]), v(&[mu_prime])).unwrap(),
            ts,
            HiddenCauses::new(v(causes)),
            Precision::uniform(1, 1.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn evidence_identity_reduction_is_zero() {
        let mut u = scalar_unit(&[0.7, 0.7, 0.7], &[0.2, 0.3, 0.5], 1.9);
        let inc = u.accumulate_log_evidence(0.3).unwrap();
        for x in inc.iter() {
            assert_abs_diff_eq!(*x, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn evidence_favours_matching_trajectory() {
        // v=[½,½], f1=+1 matches μ′=1, f2=−1 points away; P=Π=1 so η=0.
        // μ_1 = 1 − 0 + 1 = 2 → ½(4 − 1 − 1 + 0) = 1;  μ_2 = 0 → ½(0 − 1 − 1) = −1.
        let mut u = scalar_unit(&[1.0, -1.0], &[0.5, 0.5], 1.0);
        let inc = u.accumulate_log_evidence(0.5).unwrap();
        assert_abs_diff_eq!(inc[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(inc[1], -0.5, epsilon = 1e-15);
        assert!(inc[0] > inc[1]);

        let before = u.causes.log_evidence.clone();
        u.accumulate_log_evidence(0.0).unwrap();
        assert_eq!(u.causes.log_evidence, before);
    }

    #[test]
    fn posterior_causes_examples() {
        let mut u = scalar_unit(&[0.0, 0.0, 0.0], &[1.0 / 3.0; 3], 0.0);
        let p = u.posterior_causes().unwrap();
        for x in p.iter() {
            assert_abs_diff_eq!(*x, 1.0 / 3.0, epsilon = 1e-15);
        }

        let mut u = scalar_unit(&[0.0, 0.0], &[0.5, 0.5], 0.0);
        u.causes.log_evidence = v(&[3f64.ln(), 0.0]);
        let p = u.posterior_causes().unwrap();
        assert_abs_diff_eq!(p[0], 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.25, epsilon = 1e-15);

        let mut u = scalar_unit(&[0.0, 0.0], &[0.9, 0.1], 0.0);
        u.causes.log_evidence = v(&[0.0, 9f64.ln()]);
        let p = u.posterior_causes().unwrap();
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-14);
        assert_eq!(u.causes.posterior, p);

        // zero prior entries are floored, not -inf
        let mut u = scalar_unit(&[0.0, 0.0], &[1.0, 0.0], 0.0);
        let p = u.posterior_causes().unwrap();
        assert!(p[1] > 0.0 && p[1] < 1e-15);
    }

    #[test]
    fn set_prior_resets_evidence() {
        let mut u = scalar_unit(&[1.0, -1.0], &[0.5, 0.5], 1.0);
        u.accumulate_log_evidence(1.0).unwrap();
        u.set_prior(v(&[0.9, 0.1])).unwrap();
        assert_eq!(u.causes.log_evidence, v(&[0.0, 0.0]));
        assert_eq!(u.causes.posterior, v(&[0.9, 0.1]));
        assert!(u.set_prior(v(&[1.0])).is_err());
    }

    #[test]
    fn step_fixed_point() {
        // stay-only unit at rest with no force does not move
        let mut u = HybridUnit::new(
            "u",
            GeneralizedBelief::at_rest(v(&[1.0, 2.0])),
            vec![traj(Arc::new(LinearDynamics::zero(2)), 1.0)],
            HiddenCauses::new(v(&[1.0])),
            Precision::uniform(2, 1.0).unwrap(),
        )
        .unwrap();
        let before = u.belief.clone();
        u.step(&DVector::zeros(2), None, 0.3).unwrap();
        assert_eq!(u.belief, before);
    }

    #[test]
    fn backward_force_matches_finite_differences() {
        // F(μ) = ½ (μ′ − η′(μ))ᵀ Π (μ′ − η′(μ));  −∂F/∂μ = ∂η′ᵀ Π ε_x
        let ts = vec![
            traj(lin(2, &[-1.0, 1.0, 0.0, 0.0]), 1.0),
            traj(lin(2, &[0.5, 0.0, 0.2, -0.3]), 1.0),
        ];
        let mut u = HybridUnit::new(
            "u",
            GeneralizedBelief::new(v(&[0.4, -1.1]), v(&[0.2, 0.9])).unwrap(),
            ts,
            HiddenCauses::new(v(&[0.3, 0.7])),
            Precision::from_slice(&[0.8, 1.7]).unwrap(),
        )
        .unwrap();
        let terms = u.dynamics_terms().unwrap();
        let h = 1e-6;
        for i in 0..2 {
            let f = |unit: &HybridUnit| {
                let d = unit.dynamics_terms().unwrap();
                0.5 * d.error.dot(&unit.prior_precision.weigh(&d.error))
            };
            let base = u.belief.mu[i];
            u.belief.mu[i] = base + h;
            let fp = f(&u);
            u.belief.mu[i] = base - h;
            let fm = f(&u);
            u.belief.mu[i] = base;
            let fd = -(fp - fm) / (2.0 * h);
            assert!((fd - terms.backward[i]).abs() <= 1e-5 * terms.backward[i].abs().max(1e-8));
        }
    }

    proptest! {
        #[test]
        fn bma_is_linear_in_causes(
            a in 0f64..1.0,
            w1 in prop::collection::vec(0.01f64..1.0, 3),
            w2 in prop::collection::vec(0.01f64..1.0, 3),
            mu in prop::collection::vec(-5f64..5.0, 2),
        ) {
            let ts = vec![
                traj(lin(2, &[1.0, 0.0, 0.0, 2.0]), 1.0),
                traj(lin(2, &[0.0, 1.0, 1.0, 0.0]), 1.0),
                traj(lin(2, &[-1.0, 0.0, 0.5, 0.5]), 1.0),
            ];
            let n1: f64 = w1.iter().sum();
            let n2: f64 = w2.iter().sum();
            let v1 = DVector::from_vec(w1).map(|x| x / n1);
            let v2 = DVector::from_vec(w2).map(|x| x / n2);
            let mu = DVector::from_vec(mu);
            let mix = &v1 * a + &v2 * (1.0 - a);
            let lhs = bma_trajectory(&mix, &ts, &mu).unwrap();
            let rhs = bma_trajectory(&v1, &ts, &mu).unwrap() * a
                + bma_trajectory(&v2, &ts, &mu).unwrap() * (1.0 - a);
            prop_assert!((lhs - rhs).amax() < 1e-12);
        }

        #[test]
        fn identity_reduction_returns_full_posterior(
            mu in prop::collection::vec(-10f64..10.0, 1..5),
            extra in 0f64..3.0,
            pi in 0.01f64..5.0,
            eta in -10f64..10.0,
        ) {
            let n = mu.len();
            let mu = DVector::from_vec(mu);
            let p = Precision::uniform(n, pi + extra).unwrap();
            let pi = Precision::uniform(n, pi).unwrap();
            let eta = DVector::from_element(n, eta);
            let (m, pm) = reduced_posterior(&mu, &p, &eta, &pi, &eta, &pi).unwrap();
            prop_assert!((m - &mu).amax() < 1e-12);
            prop_assert_eq!(pm, p);
        }

        #[test]
        fn evidence_is_order_invariant(
            fs in prop::collection::vec(-3f64..3.0, 2..5),
            mu_prime in -3f64..3.0,
        ) {
            let n = fs.len();
            let causes = vec![1.0 / n as f64; n];
            let mut a = scalar_unit(&fs, &causes, mu_prime);
            let rev: Vec<f64> = fs.iter().rev().copied().collect();
            let mut b = scalar_unit(&rev, &causes, mu_prime);
            let ia = a.accumulate_log_evidence(0.3).unwrap();
            let ib = b.accumulate_log_evidence(0.3).unwrap();
            for k in 0..n {
                prop_assert!((ia[k] - ib[n - 1 - k]).abs() < 1e-12);
            }
        }

        #[test]
        fn posterior_normalizes_and_is_shift_invariant(
            l in prop::collection::vec(-20f64..20.0, 3),
            c in -50f64..50.0,
        ) {
            let mut u = scalar_unit(&[0.0, 0.0, 0.0], &[0.2, 0.3, 0.5], 0.0);
            u.causes.log_evidence = DVector::from_vec(l.clone());
            let p = u.posterior_causes().unwrap();
            prop_assert!((p.sum() - 1.0).abs() < 1e-10);
            u.causes.log_evidence = DVector::from_vec(l.iter().map(|x| x + c).collect());
            let q = u.posterior_causes().unwrap();
            prop_assert!((p - q).amax() < 1e-12);
        }
    }
}
