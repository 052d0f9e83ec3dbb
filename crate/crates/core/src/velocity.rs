//! The heat-flow velocity `V(t,x) = (1/t) ∇ log Q_t r(x)`, its Jacobian and the
//! diffusion score.
//!
//! `V` is evaluated through one of two equivalent expectations under `p^{t,x}`:
//! the moment form `(mean - t x)/(1 - t²)`, which is regular at `t = 0`, or the
//! integrated-by-parts form `∫ ∇ log r dp^{t,x}`, which stays bounded as
//! `t → 1` for smooth perturbations. The Jacobian always comes from the
//! covariance identity `∇V = t/(1-t²)² Cov - t/(1-t²) I`.

use nalgebra::{DMatrix, DVector};

use crate::density::TargetDensity;
use crate::error::{Error, Result};
use crate::moments::TiltedMeasure;
use crate::quadrature::Quadrature;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VelocityMode {
    MomentForm,
    IbpForm,
}

/// Integration by parts when the density exposes a gradient, moments otherwise.
pub fn default_mode(density: &TargetDensity) -> VelocityMode {
    if density.smoothness_order() >= 1 {
        VelocityMode::IbpForm
    } else {
        VelocityMode::MomentForm
    }
}

#[derive(Debug, Clone)]
pub struct VelocityEval {
    pub v: DVector<f64>,
    pub jac: Option<DMatrix<f64>>,
    pub mode: VelocityMode,
    pub t: f64,
    pub x: DVector<f64>,
}

/// Velocity from an already built tilted measure.
pub(crate) fn velocity_from_measure(
    density: &TargetDensity,
    m: &TiltedMeasure,
    mode: VelocityMode,
) -> Result<DVector<f64>> {
    match mode {
        VelocityMode::MomentForm => {
            // (mean - t x)/σ² = σ z̄ / σ² = z̄/σ
            Ok(m.whitened_mean() / m.sigma())
        }
        VelocityMode::IbpForm => {
            if density.smoothness_order() == 0 {
                return Err(Error::Capability(
                    "integration-by-parts velocity needs the gradient of log r".into(),
                ));
            }
            m.mean_score(density)
                .ok_or_else(|| Error::OutsideSupport(m.anchor().to_vec()))
        }
    }
}

/// Raw covariance Jacobian before symmetrization, in whitened form:
/// `t/σ² (Cov_z - I)`.
pub(crate) fn raw_jacobian(m: &TiltedMeasure) -> DMatrix<f64> {
    let t = m.t();
    let d = m.anchor().len();
    if t == 0.0 {
        return DMatrix::zeros(d, d);
    }
    let zbar = m.whitened_mean();
    let mut c = m.whitened_cov(&zbar);
    for i in 0..d {
        c[(i, i)] -= 1.0;
    }
    let s2 = m.sigma() * m.sigma();
    c * (t / s2)
}

pub(crate) fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

pub fn velocity(
    density: &TargetDensity,
    t: f64,
    x: &[f64],
    quad: &Quadrature,
    mode: VelocityMode,
) -> Result<VelocityEval> {
    let m = TiltedMeasure::new(density, t, x, quad)?;
    Ok(VelocityEval {
        v: velocity_from_measure(density, &m, mode)?,
        jac: None,
        mode,
        t,
        x: DVector::from_column_slice(x),
    })
}

/// Velocity and its Jacobian from a single quadrature pass.
pub fn velocity_with_jacobian(
    density: &TargetDensity,
    t: f64,
    x: &[f64],
    quad: &Quadrature,
    mode: VelocityMode,
) -> Result<VelocityEval> {
    let m = TiltedMeasure::new(density, t, x, quad)?;
    Ok(VelocityEval {
        v: velocity_from_measure(density, &m, mode)?,
        jac: Some(symmetrize(&raw_jacobian(&m))),
        mode,
        t,
        x: DVector::from_column_slice(x),
    })
}

/// `∇V(t,x)` from the covariance identity, symmetrized. Zero at `t = 0`.
pub fn velocity_jacobian(density: &TargetDensity, t: f64, x: &[f64], quad: &Quadrature) -> Result<DMatrix<f64>> {
    let m = TiltedMeasure::new(density, t, x, quad)?;
    Ok(symmetrize(&raw_jacobian(&m)))
}

/// Unsymmetrized Jacobian together with `‖A - Aᵀ‖_max`.
pub fn velocity_jacobian_with_asymmetry(
    density: &TargetDensity,
    t: f64,
    x: &[f64],
    quad: &Quadrature,
) -> Result<(DMatrix<f64>, f64)> {
    let m = TiltedMeasure::new(density, t, x, quad)?;
    let a = raw_jacobian(&m);
    let asym = (&a - a.transpose()).abs().max();
    Ok((symmetrize(&a), asym))
}

/// `∇ log Q_s r(x) = s V(s, x)`; at `s = 1` this is `∇ log r(x)` itself.
fn grad_log_smoothed(density: &TargetDensity, s: f64, x: &[f64], quad: &Quadrature) -> Result<DVector<f64>> {
    if s >= 1.0 {
        return density.eval_grad_log_r(x);
    }
    let v = velocity(density, s, x, quad, crate::velocity::default_mode(density))?;
    Ok(v.v * s)
}

/// Score of the Ornstein–Uhlenbeck marginal started at `p`:
/// `s(τ, x) = -x + ∇ log Q_{e^{-τ}} r(x)`.
pub fn score(density: &TargetDensity, tau: f64, x: &[f64], quad: &Quadrature) -> Result<DVector<f64>> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::Domain(format!("tau must be >= 0, got {tau}")));
    }
    let g = grad_log_smoothed(density, (-tau).exp(), x, quad)?;
    Ok(g - DVector::from_column_slice(x))
}

/// `∇s(τ,x) + I = ∇² log Q_s r(x) = s ∇V(s,x)` with `s = e^{-τ}`.
pub fn score_jacobian_plus_identity(
    density: &TargetDensity,
    tau: f64,
    x: &[f64],
    quad: &Quadrature,
) -> Result<DMatrix<f64>> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Domain(format!("tau must be > 0, got {tau}")));
    }
    let s = (-tau).exp();
    Ok(velocity_jacobian(density, s, x, quad)? * s)
}

/// `λ_max(∇s(τ,x) + I)`.
pub fn score_jacobian_eigmax(density: &TargetDensity, tau: f64, x: &[f64], quad: &Quadrature) -> Result<f64> {
    let a = score_jacobian_plus_identity(density, tau, x, quad)?;
    Ok(max_eigenvalue(&a))
}

pub fn max_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 1 {
        return a[(0, 0)];
    }
    a.clone().symmetric_eigenvalues().max()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{symmetric_bimodal, MixtureComponent, PerturbationFamily, WeierstrassSpec};
    use crate::moments::tilted_moments;
    use proptest::prelude::*;

    fn zero(dim: usize) -> TargetDensity {
        TargetDensity::gaussian_perturbation(PerturbationFamily::zero(), 1.0, 1.0, dim).unwrap()
    }

    fn conj(m: f64, v: f64) -> TargetDensity {
        TargetDensity::gaussian_perturbation(PerturbationFamily::conjugate_gaussian(vec![m], v), 1.0, 2.0, 1)
            .unwrap()
    }

    fn gh(dim: usize, order: usize) -> Quadrature {
        Quadrature::gauss_hermite(dim, order).unwrap()
    }

    /// Affine closed form of the conjugate velocity: slope and intercept in x.
    fn conjugate_velocity(m: f64, v: f64, t: f64, x: f64) -> (f64, f64) {
        let s2 = 1.0 - t * t;
        let p = 1.0 / s2 + 1.0 / v - 1.0;
        let mean = (t * x / s2 + m / v) / p;
        let slope = (t / (s2 * p) - t) / s2;
        ((mean - t * x) / s2, slope)
    }

    #[test]
    fn zero_velocity_and_score() {
        let d = zero(2);
        let q = gh(2, 16);
        for &t in &[0.0, 0.3, 0.99] {
            for mode in [VelocityMode::MomentForm, VelocityMode::IbpForm] {
                let e = velocity_with_jacobian(&d, t, &[0.4, -2.0], &q, mode).unwrap();
                assert!(e.v.abs().max() < 1e-12);
                assert!(e.jac.unwrap().abs().max() < 1e-10);
            }
        }
        let s = score(&d, 0.7, &[0.4, -2.0], &q).unwrap();
        assert!((s[0] + 0.4).abs() < 1e-12 && (s[1] - 2.0).abs() < 1e-12);
        assert!(score_jacobian_eigmax(&d, 0.7, &[0.4, -2.0], &q).unwrap().abs() < 1e-10);
    }

    #[test]
    fn conjugate_velocity_value() {
        let d = conj(0.0, 4.0);
        let q = gh(1, 64);
        let e = velocity_with_jacobian(&d, 0.5, &[1.0], &q, VelocityMode::MomentForm).unwrap();
        assert!((e.v[0] - 0.857_142_857_142_857).abs() < 1e-9, "{}", e.v[0]);
        let (v, slope) = conjugate_velocity(0.0, 4.0, 0.5, 1.0);
        assert!((v - 0.375 / 0.4375).abs() < 1e-14);
        assert!((slope - 0.857_142_857_142_857).abs() < 1e-12);
        for x in [-2.0, 0.0, 3.0] {
            let j = velocity_jacobian(&d, 0.5, &[x], &q).unwrap();
            assert!((j[(0, 0)] - 0.857_142_857_142_857).abs() < 1e-9);
        }
        let e = velocity(&d, 0.5, &[1.0], &q, VelocityMode::IbpForm).unwrap();
        assert!((e.v[0] - 0.857_142_857_142_857).abs() < 1e-9);
    }

    #[test]
    fn t_zero_gives_target_mean() {
        let d = conj(1.3, 0.7);
        let q = gh(1, 48);
        for mode in [VelocityMode::MomentForm, VelocityMode::IbpForm] {
            let e = velocity(&d, 0.0, &[-0.8], &q, mode).unwrap();
            assert!((e.v[0] - 1.3).abs() < 1e-10);
        }
        let mix = TargetDensity::gaussian_perturbation(
            PerturbationFamily::log_mixture_ratio(vec![
                MixtureComponent { weight: 0.3, mean: vec![-1.0], variance: 0.5 },
                MixtureComponent { weight: 0.7, mean: vec![2.0], variance: 0.5 },
            ]),
            3.0,
            2.0,
            1,
        )
        .unwrap();
        let e = velocity(&mix, 0.0, &[0.0], &gh(1, 96), VelocityMode::MomentForm).unwrap();
        assert!((e.v[0] - 1.1).abs() < 1e-8, "{}", e.v[0]);
    }

    #[test]
    fn domain_and_capability_errors() {
        let q = gh(1, 16);
        assert!(matches!(velocity(&zero(1), 1.0, &[0.0], &q, VelocityMode::MomentForm), Err(Error::Domain(_))));
        let rough = TargetDensity::gaussian_perturbation(
            PerturbationFamily::zero().with_smoothness_order(0),
            1.0,
            1.0,
            1,
        )
        .unwrap();
        assert_eq!(default_mode(&rough), VelocityMode::MomentForm);
        assert!(matches!(velocity(&rough, 0.5, &[0.0], &q, VelocityMode::IbpForm), Err(Error::Capability(_))));
        assert!(matches!(score_jacobian_eigmax(&zero(1), 0.0, &[0.0], &q), Err(Error::Domain(_))));
    }

    #[test]
    fn weierstrass_jacobian_matches_finite_differences() {
        // Few terms keep the integrand resolvable by the 128-point rule on the
        // sampled range of t; unresolved frequencies would make the covariance
        // and the differentiated mean disagree at quadrature level.
        let spec = WeierstrassSpec { amplitude: 0.5, base: 2.0, beta: 0.5, terms: 4, seed: 8 };
        let d = TargetDensity::gaussian_perturbation(PerturbationFamily::weierstrass(spec), 2.0, 0.5, 1).unwrap();
        let q = gh(1, 128);
        let mut r = crate::rng::stream(3, 0, 0);
        use rand::Rng;
        for _ in 0..20 {
            let t: f64 = r.gen_range(0.9..0.999);
            let x: f64 = r.gen_range(-2.0..2.0);
            let h = 1e-4;
            let vp = velocity(&d, t, &[x + h], &q, VelocityMode::MomentForm).unwrap().v[0];
            let vm = velocity(&d, t, &[x - h], &q, VelocityMode::MomentForm).unwrap().v[0];
            let fd = (vp - vm) / (2.0 * h);
            let j = velocity_jacobian(&d, t, &[x], &q).unwrap()[(0, 0)];
            assert!((j - fd).abs() <= 1e-3 * j.abs().max(1.0), "t={t} x={x}: {j} vs {fd}");
        }
    }

    #[test]
    fn conjugate_score_is_ou_marginal_score() {
        let (m, v) = (1.0, 2.5);
        let d = conj(m, v);
        let q = gh(1, 96);
        for &tau in &[0.05, 0.5, 2.0] {
            let e = (-tau as f64).exp();
            let var = e * e * v + 1.0 - e * e;
            for &x in &[-1.5, 0.2, 2.0] {
                let s = score(&d, tau, &[x], &q).unwrap()[0];
                assert!((s + (x - e * m) / var).abs() < 1e-8, "tau={tau} x={x}");
            }
            let eig = score_jacobian_eigmax(&d, tau, &[0.3], &q).unwrap();
            let expect = (v - 1.0) * e * e / var;
            assert!((eig - expect).abs() < 1e-8, "{eig} vs {expect}");
        }
        // τ = 0 is the score of p itself
        let s0 = score(&d, 0.0, &[0.4], &q).unwrap()[0];
        assert!((s0 + (0.4 - m) / v).abs() < 1e-12);
    }

    #[test]
    fn weierstrass_score_matches_log_marginal_derivative() {
        // log f(z) = -z²/2 + log Q_s r(z); its derivative is the score.
        let d = TargetDensity::gaussian_perturbation(
            PerturbationFamily::weierstrass(WeierstrassSpec { terms: 6, ..WeierstrassSpec::new(0.5, 0.5, 2) }),
            2.0,
            0.5,
            1,
        )
        .unwrap();
        let q = gh(1, 48);
        let s = (-0.5f64).exp();
        let log_f = |z: f64| -0.5 * z * z + tilted_moments(&d, s, &[z], &q).unwrap().log_z;
        for i in 0..13 {
            let x = -3.0 + 0.5 * i as f64;
            let h = 1e-5;
            let fd = (log_f(x + h) - log_f(x - h)) / (2.0 * h);
            let sc = score(&d, 0.5, &[x], &q).unwrap()[0];
            assert!((sc - fd).abs() <= 1e-4 * sc.abs().max(1.0), "x={x}: {sc} vs {fd}");
        }
    }

    #[test]
    fn constant_shift_leaves_velocity_unchanged() {
        let base = TargetDensity::gaussian_perturbation(symmetric_bimodal(1.2, 0.5), 3.0, 2.0, 1).unwrap();
        let shifted = base.clone().with_shift(3.7);
        let q = gh(1, 48);
        for mode in [VelocityMode::MomentForm, VelocityMode::IbpForm] {
            let a = velocity(&base, 0.6, &[0.3], &q, mode).unwrap().v[0];
            let b = velocity(&shifted, 0.6, &[0.3], &q, mode).unwrap().v[0];
            assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0));
        }
    }

    #[test]
    fn ibp_velocity_bounded_by_gradient_sup() {
        let d = TargetDensity::gaussian_perturbation(
            PerturbationFamily::weierstrass(WeierstrassSpec::new(0.3, 0.8, 5)),
            2.0,
            0.8,
            1,
        )
        .unwrap();
        let q = gh(1, 48);
        let sup_grad = (0..20001)
            .map(|i| d.eval_grad_log_r(&[-10.0 + i as f64 * 1e-3]).unwrap()[0].abs())
            .fold(0.0, f64::max);
        for &t in &[0.1, 0.9, 1.0 - 1e-6] {
            for &x in &[-2.0, 0.0, 1.7] {
                let v = velocity(&d, t, &[x], &q, VelocityMode::IbpForm).unwrap().v[0];
                assert!(v.abs() <= sup_grad * 1.001);
            }
        }
    }

    fn smooth_targets() -> Vec<TargetDensity> {
        vec![
            TargetDensity::gaussian_perturbation(
                PerturbationFamily::conjugate_gaussian(vec![0.5, -0.3], 0.6),
                1.0,
                2.0,
                2,
            )
            .unwrap(),
            TargetDensity::gaussian_perturbation(
                PerturbationFamily::log_mixture_ratio(vec![
                    MixtureComponent { weight: 0.4, mean: vec![-1.0, 0.3], variance: 0.6 },
                    MixtureComponent { weight: 0.6, mean: vec![1.0, -0.5], variance: 0.6 },
                ]),
                3.0,
                2.0,
                2,
            )
            .unwrap(),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn moment_and_ibp_forms_agree(t in 0.0f64..(1.0 - 1e-6), x in -3.0f64..3.0, y in -3.0f64..3.0, which in 0usize..2) {
            let d = &smooth_targets()[which];
            let q = gh(2, 48);
            let a = velocity(d, t, &[x, y], &q, VelocityMode::MomentForm).unwrap().v;
            let b = velocity(d, t, &[x, y], &q, VelocityMode::IbpForm).unwrap().v;
            prop_assert!((&a - &b).norm() <= 1e-6 * a.norm().max(1.0), "{} vs {}", a, b);
        }

        #[test]
        fn jacobian_symmetric_and_shifted_psd(t in 0.01f64..(1.0 - 1e-6), x in -3.0f64..3.0, y in -3.0f64..3.0, beta in 0.3f64..1.5) {
            let d = TargetDensity::gaussian_perturbation(
                PerturbationFamily::weierstrass(WeierstrassSpec::new(0.4, beta, 13)), 2.0, beta, 2).unwrap();
            let q = gh(2, 24);
            let (j, asym) = velocity_jacobian_with_asymmetry(&d, t, &[x, y], &q).unwrap();
            prop_assert!(asym <= 1e-8);
            let shift = t / (1.0 - t * t);
            let shifted = &j + DMatrix::identity(2, 2) * shift;
            let min = shifted.symmetric_eigenvalues().min();
            prop_assert!(min >= -1e-10, "min eig {}", min);
        }
    }
}
