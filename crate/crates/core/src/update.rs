//! DEKI update steps and the stochastic-gradient baseline.
//!
//! The preconditioned drift `C (S^T (S z_j - u) + alpha z_j)` is evaluated
//! through the cross covariance of members with their predictions,
//! `C S^T r = (1/J) E (S E)^T r`, so neither `C` nor `S^T` is materialized
//! and all inner products are `J x J`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ensemble::Ensemble;
use crate::error::{ensure_finite, DekiError, Result};

/// Which DEKI iteration to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Unperturbed,
    /// Each member sees its own draw `u_j ~ N(u, eta^{-1} Gamma)`.
    Perturbed,
}

fn check_inputs(
    ens: &Ensemble,
    operator: &DMatrix<f64>,
    data: &DVector<f64>,
    alpha: f64,
    eta: f64,
) -> Result<()> {
    if operator.ncols() != ens.dim() {
        return Err(DekiError::Dimension(format!(
            "operator has {} columns but ensemble dimension is {}",
            operator.ncols(),
            ens.dim()
        )));
    }
    if operator.nrows() != data.len() {
        return Err(DekiError::Dimension(format!(
            "operator has {} rows but data has length {}",
            operator.nrows(),
            data.len()
        )));
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(DekiError::InvalidArgument(format!(
            "step size must be positive, got {eta}"
        )));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(DekiError::InvalidArgument(format!(
            "alpha must be nonnegative, got {alpha}"
        )));
    }
    ensure_finite(operator.iter(), "forward operator")?;
    ensure_finite(data.iter(), "observation")
}

/// `z_j <- z_j - eta C (S^T (S z_j - t_j) + alpha z_j)` with per-member
/// targets `t_j` in the columns of `targets`.
fn apply_update(
    ens: &Ensemble,
    operator: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    alpha: f64,
    eta: f64,
) -> Result<Ensemble> {
    let z = ens.members();
    let j = ens.size() as f64;
    let mean = z.column_mean();
    let mut dev = z.clone();
    for mut col in dev.column_iter_mut() {
        col -= &mean;
    }
    let predictions = operator * z;
    let residuals = &predictions - targets;
    let pred_dev = operator * &dev;
    // W = (S E)^T R + alpha E^T Z
    let mut weights = pred_dev.transpose() * residuals;
    weights.gemm_tr(alpha, &dev, z, 1.0);
    let drift = dev * weights;
    let next = z - drift * (eta / j);
    ensure_finite(next.iter(), "updated ensemble")?;
    Ensemble::from_columns(next)
}

/// One unperturbed DEKI step with observation `(S, u)`.
pub fn deki_step_unperturbed(
    ens: &Ensemble,
    operator: &DMatrix<f64>,
    data: &DVector<f64>,
    alpha: f64,
    eta: f64,
) -> Result<Ensemble> {
    check_inputs(ens, operator, data, alpha, eta)?;
    let targets = DMatrix::from_fn(data.len(), ens.size(), |i, _| data[i]);
    apply_update(ens, operator, &targets, alpha, eta)
}

/// One perturbed DEKI step. `gamma` must be symmetric positive definite.
pub fn deki_step_perturbed<R: Rng + ?Sized>(
    ens: &Ensemble,
    operator: &DMatrix<f64>,
    data: &DVector<f64>,
    gamma: &DMatrix<f64>,
    alpha: f64,
    eta: f64,
    rng: &mut R,
) -> Result<Ensemble> {
    check_inputs(ens, operator, data, alpha, eta)?;
    let targets = perturbed_observations(data, gamma, eta, ens.size(), rng)?;
    apply_update(ens, operator, &targets, alpha, eta)
}

/// `count` draws from `N(data, eta^{-1} gamma)`, one per column.
pub fn perturbed_observations<R: Rng + ?Sized>(
    data: &DVector<f64>,
    gamma: &DMatrix<f64>,
    eta: f64,
    count: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let p = data.len();
    if gamma.nrows() != p || gamma.ncols() != p {
        return Err(DekiError::Dimension(format!(
            "Gamma is {}x{} but observations have length {p}",
            gamma.nrows(),
            gamma.ncols()
        )));
    }
    let chol = gamma
        .clone()
        .cholesky()
        .ok_or_else(|| DekiError::NotPositiveDefinite("noise covariance Gamma".into()))?;
    let xi = DMatrix::from_fn(p, count, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut out = chol.l() * xi * eta.recip().sqrt();
    for mut col in out.column_iter_mut() {
        col += data;
    }
    Ok(out)
}

/// Dynamic stochastic gradient descent on the instantaneous loss:
/// `z - eta (S^T (S z - u) + alpha z)`.
pub fn sgd_step(
    z: &DVector<f64>,
    operator: &DMatrix<f64>,
    data: &DVector<f64>,
    alpha: f64,
    eta: f64,
) -> Result<DVector<f64>> {
    if operator.ncols() != z.len() || operator.nrows() != data.len() {
        return Err(DekiError::Dimension(
            "operator does not match iterate or data".into(),
        ));
    }
    let residual = operator * z - data;
    Ok(z - (operator.tr_mul(&residual) + z * alpha) * eta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::compute_stats;
    use crate::rng::seeded;

    fn hand_ensemble() -> Ensemble {
        Ensemble::from_members(&[
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![0.0, 2.0]),
            DVector::from_vec(vec![-1.0, 1.0]),
        ])
        .unwrap()
    }

    /// Direct evaluation: build C explicitly, apply S^T, loop over members.
    fn oracle_step(
        members: &[DVector<f64>],
        s: &DMatrix<f64>,
        targets: &[DVector<f64>],
        alpha: f64,
        eta: f64,
    ) -> Vec<DVector<f64>> {
        let j = members.len() as f64;
        let d = members[0].len();
        let mut mean = DVector::zeros(d);
        for m in members {
            mean += m;
        }
        mean /= j;
        let mut c = DMatrix::zeros(d, d);
        for m in members {
            let e = m - &mean;
            c += &e * e.transpose();
        }
        c /= j;
        let st = s.transpose();
        members
            .iter()
            .zip(targets)
            .map(|(z, u)| z - &c * (&st * (s * z - u) + z * alpha) * eta)
            .collect()
    }

    #[test]
    fn zero_spread_is_a_fixed_point() {
        let z = DVector::from_vec(vec![0.5, -0.25]);
        let ens = Ensemble::from_members(&[z.clone(), z.clone(), z.clone()]).unwrap();
        let s = DMatrix::from_row_slice(1, 2, &[1.0, 3.0]);
        let out =
            deki_step_unperturbed(&ens, &s, &DVector::from_element(1, 4.0), 1.0, 0.5).unwrap();
        assert_eq!(out, ens);
    }

    #[test]
    fn zero_drift_leaves_ensemble_unchanged() {
        let ens = hand_ensemble();
        let out = deki_step_unperturbed(&ens, &DMatrix::zeros(2, 2), &DVector::zeros(2), 0.0, 0.3)
            .unwrap();
        assert_eq!(out, ens);
    }

    #[test]
    fn matches_dense_oracle_on_hand_example() {
        let ens = hand_ensemble();
        let s = DMatrix::identity(2, 2);
        let u = DVector::from_vec(vec![0.5, -1.0]);
        let out = deki_step_unperturbed(&ens, &s, &u, 1.0, 0.1).unwrap();
        let members: Vec<_> = (0..3).map(|j| ens.member(j)).collect();
        let expected = oracle_step(&members, &s, &vec![u; 3], 1.0, 0.1);
        for (j, e) in expected.iter().enumerate() {
            assert!((out.member(j) - e).norm() < 1e-12);
        }
    }

    #[test]
    fn matches_dense_oracle_on_random_rectangular_operator() {
        let mut rng = seeded(21);
        let ens = Ensemble::gaussian(5, 4, 1.0, &mut rng).unwrap();
        let s = DMatrix::from_fn(3, 5, |_, _| rng.sample::<f64, _>(StandardNormal));
        let u = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let out = deki_step_unperturbed(&ens, &s, &u, 0.4, 0.05).unwrap();
        let members: Vec<_> = (0..4).map(|j| ens.member(j)).collect();
        let expected = oracle_step(&members, &s, &vec![u; 4], 0.4, 0.05);
        for (j, e) in expected.iter().enumerate() {
            assert!((out.member(j) - e).norm() < 1e-12);
        }
    }

    #[test]
    fn vanishing_noise_perturbed_step_matches_unperturbed() {
        let mut rng = seeded(3);
        let ens = Ensemble::gaussian(4, 6, 1.0, &mut rng).unwrap();
        let s = DMatrix::from_fn(2, 4, |_, _| rng.sample::<f64, _>(StandardNormal));
        let u = DVector::from_vec(vec![0.3, -0.7]);
        let gamma = DMatrix::identity(2, 2) * 1e-30;
        let a = deki_step_unperturbed(&ens, &s, &u, 1.0, 0.1).unwrap();
        let b = deki_step_perturbed(&ens, &s, &u, &gamma, 1.0, 0.1, &mut rng).unwrap();
        assert!((a.members() - b.members()).amax() < 1e-10);
    }

    #[test]
    fn perturbed_step_is_deterministic_under_seed() {
        let ens = hand_ensemble();
        let s = DMatrix::identity(2, 2);
        let u = DVector::from_vec(vec![1.0, 1.0]);
        let gamma = DMatrix::identity(2, 2) * 0.01;
        let a = deki_step_perturbed(&ens, &s, &u, &gamma, 1.0, 0.2, &mut seeded(4)).unwrap();
        let b = deki_step_perturbed(&ens, &s, &u, &gamma, 1.0, 0.2, &mut seeded(4)).unwrap();
        assert_eq!(a.members().as_slice(), b.members().as_slice());
    }

    #[test]
    fn perturbed_step_uses_per_member_targets() {
        let mut rng = seeded(8);
        let ens = Ensemble::gaussian(3, 5, 1.0, &mut rng).unwrap();
        let s = DMatrix::from_fn(2, 3, |i, k| (i + 2 * k) as f64 * 0.1);
        let u = DVector::from_vec(vec![0.2, 0.1]);
        let gamma = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.3]);
        let eta = 0.25;
        let out = deki_step_perturbed(&ens, &s, &u, &gamma, 0.5, eta, &mut seeded(99)).unwrap();
        // replay the same draws, then apply the oracle with those targets
        let targets = perturbed_observations(&u, &gamma, eta, 5, &mut seeded(99)).unwrap();
        let members: Vec<_> = (0..5).map(|j| ens.member(j)).collect();
        let cols: Vec<_> = targets.column_iter().map(|c| c.into_owned()).collect();
        let expected = oracle_step(&members, &s, &cols, 0.5, eta);
        for (j, e) in expected.iter().enumerate() {
            assert!((out.member(j) - e).norm() < 1e-12);
        }
    }

    #[test]
    fn perturbation_mean_matches_observation() {
        // mean of 1e5 draws from N(u, eta^-1 Gamma) within 4 standard errors
        let u = DVector::from_vec(vec![1.5, -0.5, 0.0]);
        let gamma = DMatrix::from_row_slice(3, 3, &[0.4, 0.1, 0.0, 0.1, 0.3, 0.05, 0.0, 0.05, 0.2]);
        let eta = 0.5;
        let n = 100_000;
        let draws = perturbed_observations(&u, &gamma, eta, n, &mut seeded(17)).unwrap();
        let mean = draws.column_mean();
        for i in 0..3 {
            let se = (gamma[(i, i)] / eta / n as f64).sqrt();
            assert!((mean[i] - u[i]).abs() < 4.0 * se, "component {i}");
        }
    }

    #[test]
    fn non_spd_gamma_is_rejected() {
        let ens = hand_ensemble();
        let gamma = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let r = deki_step_perturbed(
            &ens,
            &DMatrix::identity(2, 2),
            &DVector::zeros(2),
            &gamma,
            1.0,
            0.1,
            &mut seeded(0),
        );
        assert!(matches!(r, Err(DekiError::NotPositiveDefinite(_))));
    }

    #[test]
    fn rejects_mismatched_and_non_finite_inputs() {
        let ens = hand_ensemble();
        assert!(
            deki_step_unperturbed(&ens, &DMatrix::zeros(2, 3), &DVector::zeros(2), 1.0, 0.1)
                .is_err()
        );
        assert!(
            deki_step_unperturbed(&ens, &DMatrix::zeros(2, 2), &DVector::zeros(3), 1.0, 0.1)
                .is_err()
        );
        let mut s = DMatrix::identity(2, 2);
        s[(0, 1)] = f64::NAN;
        assert!(matches!(
            deki_step_unperturbed(&ens, &s, &DVector::zeros(2), 1.0, 0.1),
            Err(DekiError::NonFinite(_))
        ));
        assert!(deki_step_unperturbed(
            &ens,
            &DMatrix::identity(2, 2),
            &DVector::zeros(2),
            1.0,
            0.0
        )
        .is_err());
    }

    #[test]
    fn mean_follows_preconditioned_gradient_of_mean() {
        let mut rng = seeded(30);
        let ens = Ensemble::gaussian(4, 7, 1.0, &mut rng).unwrap();
        let s = DMatrix::from_fn(3, 4, |_, _| rng.sample::<f64, _>(StandardNormal));
        let u = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let (alpha, eta) = (0.8, 0.07);
        let st = compute_stats(&ens);
        let expected = &st.mean
            - &st.covariance * (s.transpose() * (&s * &st.mean - &u) + &st.mean * alpha) * eta;
        let out = deki_step_unperturbed(&ens, &s, &u, alpha, eta).unwrap();
        assert!((out.mean() - expected).norm() < 1e-12);
    }

    #[test]
    fn sgd_step_on_identity() {
        let z = DVector::from_vec(vec![2.0, -4.0]);
        let out = sgd_step(&z, &DMatrix::identity(2, 2), &DVector::zeros(2), 1.0, 0.25).unwrap();
        assert!((out - z * 0.5).norm() < 1e-15);
    }
}
