//! Anisotropic surface energy densities and derived quantities.
//!
//! A model evaluates the density `γ(n)` on unit vectors, its one-homogeneous
//! extension `γ(p) = |p| γ(p/|p|)`, the Cahn-Hoffman vector `ξ(n) = ∇γ(p)|n`
//! (so `γ(n) = ξ·n`), the stability margin `(5−d)γ(n) − γ(−n)`, and the
//! surface energy matrix `G_k(n) = γ I − n ξᵀ + ξ nᵀ + k n nᵀ`.

use nalgebra::{SMatrix, SVector};
use std::sync::Arc;

#[derive(Debug, thiserror::Error)]
pub enum AnisotropyError {
    #[error("xi requires a unit vector: |n| = {norm} differs from 1 by more than 1e-12")]
    NonUnitInput { norm: f64 },
    #[error("energy density is not differentiable at this direction (kink at n_1 = 0)")]
    NonSmoothPoint,
    #[error("Euler identity violated for custom model: gamma = {gamma}, xi·n = {xi_dot_n}")]
    EulerIdentityViolation { gamma: f64, xi_dot_n: f64 },
    #[error("gamma must be positive on the unit sphere: gamma({at:?}) = {value}")]
    NonPositiveGamma { at: Vec<f64>, value: f64 },
}

/// User-supplied density on the unit sphere; the one-homogeneous extension
/// and (when `xi` is absent) finite-difference differentiation are supplied
/// by this module.
pub struct CustomModel<const D: usize> {
    pub name: String,
    pub gamma: Box<dyn Fn(SVector<f64, D>) -> f64 + Send + Sync>,
    pub xi: Option<Box<dyn Fn(SVector<f64, D>) -> SVector<f64, D> + Send + Sync>>,
}

/// Surface energy density family; `D` is the ambient dimension (2 or 3).
#[derive(Clone)]
pub enum AnisotropyModel<const D: usize> {
    /// `γ ≡ 1`.
    Isotropic,
    /// `γ(n) = 1 + β Σ_k n_k³`.
    CubicPolynomial { beta: f64 },
    /// `γ(n) = sqrt((a + b·sign(n_1)) n_1² + n_2² + ...)`, with `sign(0) := +1`.
    SignRiemannian { a: f64, b: f64 },
    Custom(Arc<CustomModel<D>>),
}

impl<const D: usize> std::fmt::Debug for AnisotropyModel<D> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.name())
    }
}

const FD_STEP: f64 = 1e-6;

#[inline]
fn sign_pos(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

impl<const D: usize> AnisotropyModel<D> {
    pub fn name(&self) -> String {
        match self {
            Self::Isotropic => "isotropic".into(),
            Self::CubicPolynomial { beta } => format!("cubic(beta={beta})"),
            Self::SignRiemannian { a, b } => format!("signriemannian(a={a},b={b})"),
            Self::Custom(c) => format!("custom({})", c.name),
        }
    }

    /// Density evaluated on a unit vector.
    pub fn gamma_unit(&self, n: &SVector<f64, D>) -> f64 {
        match self {
            Self::Isotropic => 1.0,
            Self::CubicPolynomial { beta } => {
                1.0 + beta * n.iter().map(|&c| c * c * c).sum::<f64>()
            }
            Self::SignRiemannian { a, b } => {
                let head = (a + b * sign_pos(n[0])) * n[0] * n[0];
                let tail: f64 = (1..D).map(|k| n[k] * n[k]).sum();
                (head + tail).sqrt()
            }
            Self::Custom(c) => (c.gamma)(*n),
        }
    }

    /// One-homogeneous extension: `0` at the origin, else `|p| γ(p/|p|)`.
    pub fn gamma_hom(&self, p: &SVector<f64, D>) -> f64 {
        let r = p.norm();
        if r == 0.0 {
            0.0
        } else {
            r * self.gamma_unit(&(p / r))
        }
    }

    /// Cahn-Hoffman vector `∇γ(p)` at `p = n`, `|n| = 1`.
    ///
    /// Closed form per family; custom models without a supplied gradient use
    /// central differences of the extension (step 1e-6) with the Euler
    /// identity enforced afterwards. The sign-Riemannian kink at `n_1 = 0`
    /// resolves to the one-sided value with `sign(0) := +1`, which is also
    /// the two-sided limit since the kink term is quadratic.
    pub fn xi(&self, n: &SVector<f64, D>) -> Result<SVector<f64, D>, AnisotropyError> {
        let norm = n.norm();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(AnisotropyError::NonUnitInput { norm });
        }
        match self {
            Self::Isotropic => Ok(*n),
            Self::CubicPolynomial { beta } => {
                let s: f64 = n.iter().map(|&c| c * c * c).sum();
                Ok(SVector::from_fn(|i, _| {
                    n[i] + beta * (3.0 * n[i] * n[i] - 2.0 * n[i] * s)
                }))
            }
            Self::SignRiemannian { a, b } => {
                let g = self.gamma_unit(n);
                let mut xi = *n / g;
                xi[0] = (a + b * sign_pos(n[0])) * n[0] / g;
                Ok(xi)
            }
            Self::Custom(c) => {
                if let Some(xi) = &c.xi {
                    return Ok(xi(*n));
                }
                let mut out: SVector<f64, D> = SVector::zeros();
                for i in 0..D {
                    let mut hi = *n;
                    let mut lo = *n;
                    hi[i] += FD_STEP;
                    lo[i] -= FD_STEP;
                    out[i] = (self.gamma_hom(&hi) - self.gamma_hom(&lo)) / (2.0 * FD_STEP);
                }
                let gamma = self.gamma_unit(n);
                let xi_dot_n = out.dot(n);
                // central differences leave O(h^2) truncation plus O(eps/h) rounding
                if (gamma - xi_dot_n).abs() > 1e-8 * (1.0 + gamma.abs()) {
                    return Err(AnisotropyError::EulerIdentityViolation { gamma, xi_dot_n });
                }
                Ok(out)
            }
        }
    }

    /// `(5 − d) γ(n) − γ(−n)`; positive iff the energy-stable condition
    /// holds at `n`.
    pub fn stability_margin(&self, n: &SVector<f64, D>) -> f64 {
        (5 - D) as f64 * self.gamma_unit(n) - self.gamma_unit(&-n)
    }

    /// Surface energy matrix `G_k(n) = γ(n) I − n ξᵀ + ξ nᵀ + k n nᵀ`.
    pub fn build_g(
        &self,
        n: &SVector<f64, D>,
        k: f64,
    ) -> Result<SurfaceEnergyMatrix<D>, AnisotropyError> {
        let xi = self.xi(n)?;
        let gamma = self.gamma_unit(n);
        let mut m = SMatrix::<f64, D, D>::identity() * gamma;
        m -= n * xi.transpose();
        m += xi * n.transpose();
        m += n * n.transpose() * k;
        Ok(m)
    }

    /// Sampled positivity and Euler-identity validation over a deterministic
    /// set of unit directions.
    pub fn validate(&self, samples: usize) -> Result<(), AnisotropyError> {
        for n in unit_sphere_samples::<D>(samples) {
            let g = self.gamma_unit(&n);
            if !(g > 0.0) {
                return Err(AnisotropyError::NonPositiveGamma {
                    at: n.iter().copied().collect(),
                    value: g,
                });
            }
            let xi = self.xi(&n)?;
            let dot = xi.dot(&n);
            if (dot - g).abs() > 1e-8 * (1.0 + g.abs()) {
                return Err(AnisotropyError::EulerIdentityViolation {
                    gamma: g,
                    xi_dot_n: dot,
                });
            }
        }
        Ok(())
    }

    /// Smallest sampled stability margin over `min(n, -n)` directions.
    pub fn min_stability_margin(&self, samples: usize) -> f64 {
        unit_sphere_samples::<D>(samples)
            .into_iter()
            .map(|n| self.stability_margin(&n))
            .fold(f64::INFINITY, f64::min)
    }
}

pub type SurfaceEnergyMatrix<const D: usize> = SMatrix<f64, D, D>;

/// Deterministic quasi-uniform unit directions: equal angles on the circle,
/// a Fibonacci lattice on the sphere.
pub fn unit_sphere_samples<const D: usize>(count: usize) -> Vec<SVector<f64, D>> {
    let mut out = Vec::with_capacity(count);
    match D {
        2 => {
            for i in 0..count {
                let t = 2.0 * std::f64::consts::PI * (i as f64 + 0.5) / count as f64;
                out.push(SVector::from_fn(|k, _| if k == 0 { t.cos() } else { t.sin() }));
            }
        }
        3 => {
            let phi = (1.0 + 5.0_f64.sqrt()) / 2.0;
            for i in 0..count {
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
                let r = (1.0 - z * z).sqrt();
                let t = 2.0 * std::f64::consts::PI * (i as f64) / phi;
                let c = [r * t.cos(), r * t.sin(), z];
                out.push(SVector::from_fn(|k, _| c[k]));
            }
        }
        _ => unreachable!("only d = 2, 3 are supported"),
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use nalgebra::Vector3;

    fn case1() -> AnisotropyModel<3> {
        AnisotropyModel::CubicPolynomial { beta: 0.125 }
    }

    fn case3() -> AnisotropyModel<3> {
        AnisotropyModel::SignRiemannian { a: 2.5, b: 1.5 }
    }

    fn random_unit<const D: usize>(r: &mut SplitMix64) -> SVector<f64, D> {
        loop {
            let v = SVector::<f64, D>::from_fn(|_, _| r.next_normal());
            let n = v.norm();
            if n > 1e-3 {
                return v / n;
            }
        }
    }

    #[test]
    fn gamma_hom_at_zero_and_homogeneity() {
        let m = case1();
        assert_eq!(m.gamma_hom(&Vector3::zeros()), 0.0);
        assert!((m.gamma_hom(&Vector3::new(1.0, 0.0, 0.0)) - 9.0 / 8.0).abs() < 1e-15);
        assert!((m.gamma_hom(&Vector3::new(2.0, 0.0, 0.0)) - 9.0 / 4.0).abs() < 1e-15);
        let mut r = SplitMix64::new(11);
        for _ in 0..200 {
            let p: Vector3<f64> = SVector::from_fn(|_, _| r.uniform(-2.0, 2.0));
            let s = r.uniform(0.01, 10.0);
            let lhs = m.gamma_hom(&(p * s));
            let rhs = s * m.gamma_hom(&p);
            assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1e-12), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn xi_closed_forms() {
        let m = case1();
        let xi = m.xi(&Vector3::new(1.0, 0.0, 0.0)).unwrap();
        assert!((xi - Vector3::new(9.0 / 8.0, 0.0, 0.0)).norm() < 1e-14);
        // beta = 0 reduces to isotropic
        let m0 = AnisotropyModel::<3>::CubicPolynomial { beta: 0.0 };
        let mut r = SplitMix64::new(3);
        for _ in 0..50 {
            let n = random_unit::<3>(&mut r);
            assert!((m0.xi(&n).unwrap() - n).norm() < 1e-13);
            let iso = AnisotropyModel::<3>::Isotropic;
            assert!((iso.xi(&n).unwrap() - n).norm() < 1e-15);
        }
    }

    #[test]
    fn xi_rejects_non_unit_input() {
        let m = case1();
        let err = m.xi(&Vector3::new(1.0, 1.0, 0.0)).unwrap_err();
        assert!(matches!(err, AnisotropyError::NonUnitInput { .. }));
    }

    #[test]
    fn euler_identity_sampled() {
        let mut r = SplitMix64::new(21);
        let models: Vec<AnisotropyModel<3>> = vec![
            AnisotropyModel::Isotropic,
            case1(),
            AnisotropyModel::CubicPolynomial { beta: 0.25 },
        ];
        for m in &models {
            for _ in 0..1000 {
                let n = random_unit::<3>(&mut r);
                let g = m.gamma_unit(&n);
                let xi = m.xi(&n).unwrap();
                assert!((xi.dot(&n) - g).abs() < 1e-10, "{:?} at {n:?}", m.name());
            }
        }
        // sign-Riemannian away from the kink
        let m = case3();
        let mut checked = 0;
        while checked < 1000 {
            let n = random_unit::<3>(&mut r);
            if n[0].abs() <= 0.01 {
                continue;
            }
            let g = m.gamma_unit(&n);
            assert!((m.xi(&n).unwrap().dot(&n) - g).abs() < 1e-10);
            checked += 1;
        }
    }

    #[test]
    fn finite_difference_consistency() {
        let mut r = SplitMix64::new(5);
        let models: Vec<AnisotropyModel<3>> =
            vec![case1(), AnisotropyModel::CubicPolynomial { beta: 0.25 }];
        for m in &models {
            for _ in 0..200 {
                let n = random_unit::<3>(&mut r);
                let xi = m.xi(&n).unwrap();
                for i in 0..3 {
                    let mut hi = n;
                    let mut lo = n;
                    hi[i] += FD_STEP;
                    lo[i] -= FD_STEP;
                    let fd = (m.gamma_hom(&hi) - m.gamma_hom(&lo)) / (2.0 * FD_STEP);
                    assert!((xi[i] - fd).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn custom_model_fd_fallback() {
        let m: AnisotropyModel<3> = AnisotropyModel::Custom(Arc::new(CustomModel {
            name: "cubic-mirror".into(),
            gamma: Box::new(|n: Vector3<f64>| {
                1.0 + 0.125 * (n[0].powi(3) + n[1].powi(3) + n[2].powi(3))
            }),
            xi: None,
        }));
        let reference = case1();
        let mut r = SplitMix64::new(9);
        for _ in 0..100 {
            let n = random_unit::<3>(&mut r);
            let xi = m.xi(&n).unwrap();
            let xe = reference.xi(&n).unwrap();
            assert!((xi - xe).norm() < 1e-6);
        }
    }

    #[test]
    fn stability_margins() {
        let iso = AnisotropyModel::<3>::Isotropic;
        assert!((iso.stability_margin(&Vector3::new(0.0, 0.0, 1.0)) - 1.0).abs() < 1e-15);
        let case2 = AnisotropyModel::<3>::CubicPolynomial { beta: 0.25 };
        let m = case2.stability_margin(&Vector3::new(1.0, 0.0, 0.0));
        assert!((m - 7.0 / 4.0).abs() < 1e-15, "{m}");
        // margin = 1 + 3*beta*s with s = sum n_k^3 minimized at -1
        let global = case2.min_stability_margin(20_000);
        assert!(global >= 0.25 - 1e-6, "{global}");
        assert!(global <= 0.25 + 2e-3, "{global}");
    }

    #[test]
    fn case3_margin_vanishes_at_minus_e1_only() {
        let m = case3();
        let margin = m.stability_margin(&Vector3::new(-1.0, 0.0, 0.0));
        assert_eq!(margin, 0.0);
        let mut r = SplitMix64::new(13);
        for _ in 0..2000 {
            let n = random_unit::<3>(&mut r);
            if (n - Vector3::new(-1.0, 0.0, 0.0)).norm() > 1e-2 {
                assert!(m.stability_margin(&n) > 0.0);
            }
        }
    }

    #[test]
    fn g_matrix_examples_and_reconstruction() {
        let iso = AnisotropyModel::<3>::Isotropic;
        let n = Vector3::new(0.0, 0.0, 1.0);
        let g0 = iso.build_g(&n, 0.0).unwrap();
        assert!((g0 - SMatrix::<f64, 3, 3>::identity()).norm() < 1e-15);
        let g2 = iso.build_g(&n, 2.0).unwrap();
        assert!((g2 - SMatrix::<f64, 3, 3>::from_diagonal(&Vector3::new(1.0, 1.0, 3.0))).norm() < 1e-15);
        // Case I along e1 has xi parallel to n, so G = (9/8) I exactly
        let m = case1();
        let e1 = Vector3::new(1.0, 0.0, 0.0);
        let g = m.build_g(&e1, 0.0).unwrap();
        assert!((g - SMatrix::<f64, 3, 3>::identity() * (9.0 / 8.0)).norm() < 1e-14);
        // reconstruction: sym part = gamma I + k n n^T, antisym = xi n^T - n xi^T
        let mut r = SplitMix64::new(17);
        for model in [m, case3()] {
            for _ in 0..200 {
                let n = random_unit::<3>(&mut r);
                let k = r.uniform(0.0, 5.0);
                let g = model.build_g(&n, k).unwrap();
                let gamma = model.gamma_unit(&n);
                let xi = model.xi(&n).unwrap();
                let sym = (g + g.transpose()) * 0.5;
                let asym = (g - g.transpose()) * 0.5;
                let sym_ref = SMatrix::<f64, 3, 3>::identity() * gamma + n * n.transpose() * k;
                let asym_ref = xi * n.transpose() - n * xi.transpose();
                assert!((sym - sym_ref).amax() < 1e-13);
                assert!((asym - asym_ref).amax() < 1e-13);
            }
        }
    }

    #[test]
    fn validate_flags_nonpositive_gamma() {
        let bad: AnisotropyModel<2> = AnisotropyModel::CubicPolynomial { beta: 2.0 };
        assert!(bad.validate(512).is_err());
        assert!(case1().validate(512).is_ok());
        assert!(case3().validate(512).is_ok());
    }
}
