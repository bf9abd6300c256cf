//! Numerical substrate shared by every unit: generalized beliefs (value and
//! first temporal derivative), diagonal precisions, prediction errors and the
//! Euler belief integrator.

use nalgebra::DVector;

use crate::error::{check_dim, Error, Result};

/// Floor applied to categorical probabilities before taking a logarithm.
pub const PROB_FLOOR: f64 = 1e-16;

/// `ln(max(p, PROB_FLOOR))`.
#[inline]
pub fn ln_floor(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

pub fn ln_floor_vec(p: &DVector<f64>) -> DVector<f64> {
    p.map(ln_floor)
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(logits: &DVector<f64>) -> Result<DVector<f64>> {
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("softmax input {:?}", logits.as_slice()),
        });
    }
    if logits.is_empty() {
        return Ok(DVector::zeros(0));
    }
    let max = logits.max();
    let exp = logits.map(|x| (x - max).exp());
    let sum = exp.sum();
    Ok(exp / sum)
}

/// Belief over a continuous hidden state in generalized coordinates, truncated
/// to two temporal orders.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedBelief {
    pub mu: DVector<f64>,
    pub mu_prime: DVector<f64>,
}

impl GeneralizedBelief {
    pub fn new(mu: DVector<f64>, mu_prime: DVector<f64>) -> Result<Self> {
        check_dim("generalized belief orders", mu.len(), mu_prime.len())?;
        Ok(Self { mu, mu_prime })
    }

    /// Belief at `mu` with zero velocity.
    pub fn at_rest(mu: DVector<f64>) -> Self {
        let n = mu.len();
        Self {
            mu,
            mu_prime: DVector::zeros(n),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self::at_rest(DVector::zeros(dim))
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn is_finite(&self) -> bool {
        self.mu.iter().chain(self.mu_prime.iter()).all(|x| x.is_finite())
    }
}

/// One explicit Euler step: `mu += dt * dmu`, `mu' += dt * dmu'`.
pub fn integrate_belief(
    belief: &GeneralizedBelief,
    dmu: &DVector<f64>,
    dmu_prime: &DVector<f64>,
    dt: f64,
) -> Result<GeneralizedBelief> {
    check_dim("integrate_belief dmu", belief.dim(), dmu.len())?;
    check_dim("integrate_belief dmu'", belief.dim(), dmu_prime.len())?;
    let next = GeneralizedBelief {
        mu: &belief.mu + dmu * dt,
        mu_prime: &belief.mu_prime + dmu_prime * dt,
    };
    if !next.is_finite() {
        return Err(Error::NonFinite {
            context: "belief integration".into(),
        });
    }
    Ok(next)
}

/// Diagonal precision (inverse variance), one entry per component.
#[derive(Debug, Clone, PartialEq)]
pub struct Precision(DVector<f64>);

impl Precision {
    pub fn new(values: DVector<f64>) -> Result<Self> {
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "precision entries must be finite and nonnegative: {:?}",
                values.as_slice()
            )));
        }
        Ok(Self(values))
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(values))
    }

    /// Scalar precision broadcast to `dim` components.
    pub fn uniform(dim: usize, value: f64) -> Result<Self> {
        Self::new(DVector::from_element(dim, value))
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `Π ε` (elementwise, diagonal precision).
    pub fn weigh(&self, error: &DVector<f64>) -> DVector<f64> {
        self.0.component_mul(error)
    }
}

/// A prediction error together with the precision that weighs it.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionError {
    pub value: DVector<f64>,
    pub precision: Precision,
}

impl PredictionError {
    /// `Π ε`.
    pub fn weighted(&self) -> DVector<f64> {
        self.precision.weigh(&self.value)
    }

    /// Quadratic free-energy contribution `½ εᵀ Π ε`.
    pub fn free_energy(&self) -> f64 {
        0.5 * self.value.dot(&self.weighted())
    }
}

/// `ε = observed − predicted`, carrying `precision` unchanged.
pub fn weighted_error(
    observed: &DVector<f64>,
    predicted: &DVector<f64>,
    precision: &Precision,
) -> Result<PredictionError> {
    check_dim("weighted_error", observed.len(), predicted.len())?;
    check_dim("weighted_error precision", observed.len(), precision.len())?;
    Ok(PredictionError {
        value: observed - predicted,
        precision: precision.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&v(&[0.0, 0.0, 0.0])).unwrap();
        for x in p.iter() {
            assert_abs_diff_eq!(*x, 1.0 / 3.0, epsilon = 1e-15);
        }
        let p = softmax(&v(&[2f64.ln(), 0.0])).unwrap();
        assert_abs_diff_eq!(p[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 1.0 / 3.0, epsilon = 1e-15);
        // 50-digit evaluation of exp(x_i) / sum exp(x_j)
        let p = softmax(&v(&[100.0, 100.5, 99.0])).unwrap();
        let oracle = [
            0.331_498_960_424_091_505_09,
            0.546_549_387_266_179_637_71,
            0.121_951_652_309_728_857_21,
        ];
        for (a, b) in p.iter().zip(oracle) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert!(softmax(&v(&[0.0, f64::NAN])).is_err());
        assert!(softmax(&v(&[f64::INFINITY, 0.0])).is_err());
    }

    #[test]
    fn integrate_examples() {
        let b = GeneralizedBelief::at_rest(v(&[0.0]));
        let n = integrate_belief(&b, &v(&[1.0]), &v(&[0.0]), 0.1).unwrap();
        assert_abs_diff_eq!(n.mu[0], 0.1);

        let b = GeneralizedBelief::new(v(&[1.0, 2.0]), v(&[0.3, -0.2])).unwrap();
        let n = integrate_belief(&b, &v(&[-1.0, 1.0]), &v(&[0.0, 0.0]), 0.5).unwrap();
        assert_eq!(n.mu, v(&[0.5, 2.5]));
        assert_eq!(n.mu_prime, b.mu_prime);

        let n = integrate_belief(&b, &v(&[0.0, 0.0]), &v(&[0.0, 0.0]), 0.5).unwrap();
        assert_eq!(n, b);
    }

    #[test]
    fn integrate_rejects_bad_input() {
        let b = GeneralizedBelief::zeros(2);
        assert!(integrate_belief(&b, &v(&[1.0]), &v(&[0.0, 0.0]), 0.1).is_err());
        assert!(matches!(
            integrate_belief(&b, &v(&[f64::MAX, 0.0]), &v(&[0.0, 0.0]), 1e10),
            Err(Error::NonFinite { .. })
        ));
        assert!(GeneralizedBelief::new(v(&[1.0]), v(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn weighted_error_examples() {
        let p4 = Precision::uniform(1, 4.0).unwrap();
        let e = weighted_error(&v(&[1.0]), &v(&[1.0]), &p4).unwrap();
        assert_eq!(e.value, v(&[0.0]));

        let p2 = Precision::uniform(1, 2.0).unwrap();
        let e = weighted_error(&v(&[3.0]), &v(&[1.0]), &p2).unwrap();
        assert_eq!(e.value, v(&[2.0]));
        assert_eq!(e.precision, p2);
        assert_abs_diff_eq!(e.free_energy(), 4.0);

        let p = Precision::from_slice(&[1.0, 0.5, 2.0]).unwrap();
        let e = weighted_error(&v(&[1.0, 2.0, 3.0]), &v(&[0.5, 2.5, 0.0]), &p).unwrap();
        assert_eq!(e.value, v(&[0.5, -0.5, 3.0]));

        assert!(weighted_error(&v(&[1.0]), &v(&[1.0, 2.0]), &p4).is_err());
    }

    #[test]
    fn precision_rejects_negative() {
        assert!(Precision::from_slice(&[1.0, -0.1]).is_err());
        assert!(Precision::from_slice(&[f64::NAN]).is_err());
    }

    #[test]
    fn ln_floor_handles_zero() {
        assert_abs_diff_eq!(ln_floor(0.0), PROB_FLOOR.ln());
        assert_abs_diff_eq!(ln_floor(0.5), 0.5f64.ln());
    }

    // Gradient of F(mu) = ½ Σ Π (y − g(mu))² with a nonlinear g, checked
    // against central differences.
    #[test]
    fn quadratic_free_energy_gradient_matches_finite_differences() {
        let y = v(&[0.3, -1.2]);
        let prec = Precision::from_slice(&[2.0, 0.7]).unwrap();
        let g = |m: &DVector<f64>| v(&[m[0].sin() * m[1], m[0] + m[1] * m[1]]);
        let f = |m: &DVector<f64>| weighted_error(&y, &g(m), &prec).unwrap().free_energy();
        let mu = v(&[0.4, 0.9]);
        let eps = weighted_error(&y, &g(&mu), &prec).unwrap().weighted();
        // dF/dmu = -J^T Π ε
        let jac = nalgebra::DMatrix::from_row_slice(
            2,
            2,
            &[mu[0].cos() * mu[1], mu[0].sin(), 1.0, 2.0 * mu[1]],
        );
        let grad = -(jac.transpose() * eps);
        let h = 1e-6;
        for i in 0..2 {
            let mut p = mu.clone();
            let mut m = mu.clone();
            p[i] += h;
            m[i] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            assert!((fd - grad[i]).abs() <= 1e-5 * grad[i].abs().max(1e-8));
        }
    }

    proptest! {
        #[test]
        fn softmax_normalizes(x in prop::collection::vec(-1e3f64..1e3, 1..12)) {
            let p = softmax(&DVector::from_vec(x)).unwrap();
            prop_assert!((p.sum() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&q| q >= 0.0 && q <= 1.0));
        }

        #[test]
        fn softmax_shift_invariant(
            x in prop::collection::vec(-50f64..50.0, 1..8),
            c in -100f64..100.0,
        ) {
            let a = softmax(&DVector::from_vec(x.clone())).unwrap();
            let b = softmax(&DVector::from_vec(x.iter().map(|v| v + c).collect())).unwrap();
            for (p, q) in a.iter().zip(b.iter()) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }

        #[test]
        fn zero_derivatives_are_identity(
            mu in prop::collection::vec(-1e3f64..1e3, 1..6),
            dt in 0.001f64..2.0,
        ) {
            let n = mu.len();
            let b = GeneralizedBelief::at_rest(DVector::from_vec(mu));
            let next = integrate_belief(&b, &DVector::zeros(n), &DVector::zeros(n), dt).unwrap();
            prop_assert_eq!(next, b);
        }
    }
}
