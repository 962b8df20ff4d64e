//! Minimal stabilizing function `k0(n)`.
//!
//! Feasibility of a stabilizer value `α` at a direction `n` is the positive
//! semi-definiteness of an auxiliary symmetric matrix over the whole
//! rotation group: 2x2 `M̃(U, α)` over SO(2), 4x4 `M(U, α)` over SO(3). The
//! estimator samples the group through its angle representation acting on an
//! orthonormal frame at `n`, with one local refinement level around
//! near-singular samples, and bisects on `α` (feasibility is monotone in `α`
//! because the α-coefficient matrix is PSD). A brute-force trace inequality
//! over random lower-triangular factors provides an independent oracle for
//! the same definition.

use crate::anisotropy::{AnisotropyError, AnisotropyModel};
use crate::linalg::{cholesky_pd, min_eigenvalue_sym};
use nalgebra::{SMatrix, SVector};
use rayon::prelude::*;
use std::io::Write;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum StabilizerError {
    #[error("energy-stable condition fails at direction {at:?}: margin {margin:e} is negative")]
    UnstableAnisotropy { at: Vec<f64>, margin: f64 },
    #[error("no feasible stabilizer below cap {cap}: anisotropy unstable or sampling insufficient")]
    NoFeasibleAlpha { cap: f64 },
    #[error(transparent)]
    Anisotropy(#[from] AnisotropyError),
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// frames and rotation representations

/// Orthonormal basis `[τ_1, ..., τ_{d-1}, n]` with determinant +1, stored
/// column-wise.
#[derive(Clone, Debug)]
pub struct Frame<const D: usize>(pub SMatrix<f64, D, D>);

impl<const D: usize> Frame<D> {
    pub fn tangent(&self, i: usize) -> SVector<f64, D> {
        debug_assert!(i < D - 1);
        self.0.column(i).into_owned()
    }

    pub fn normal(&self) -> SVector<f64, D> {
        self.0.column(D - 1).into_owned()
    }

    /// Rotates the tangent pair by an in-plane angle (3D only); the result
    /// is another valid frame for the same normal.
    pub fn rotate_in_plane(&self, angle: f64) -> Self {
        assert_eq!(D, 3, "in-plane gauge rotation applies to 3D frames");
        let (s, c) = angle.sin_cos();
        let t1 = self.tangent(0);
        let t2 = self.tangent(1);
        let mut m = self.0;
        m.set_column(0, &(t1 * c + t2 * s));
        m.set_column(1, &(t2 * c - t1 * s));
        Frame(m)
    }
}

/// Deterministic orthonormal frame at `n`: in 2D `τ = (n_2, -n_1)`; in 3D
/// `τ_1 ∝ e_a × n` with `e_a` the coordinate axis least aligned with `n`
/// (lowest index on ties) and `τ_2 = n × τ_1`. Both satisfy
/// `det[τ.., n] = +1`.
pub fn orthonormal_frame<const D: usize>(n: &SVector<f64, D>) -> Frame<D> {
    let mut m = SMatrix::<f64, D, D>::zeros();
    match D {
        2 => {
            m[(0, 0)] = n[1];
            m[(1, 0)] = -n[0];
        }
        3 => {
            let axis = (0..3)
                .min_by(|&a, &b| n[a].abs().partial_cmp(&n[b].abs()).unwrap())
                .unwrap();
            let mut e = [0.0; 3];
            e[axis] = 1.0;
            let t1 = [
                e[1] * n[2] - e[2] * n[1],
                e[2] * n[0] - e[0] * n[2],
                e[0] * n[1] - e[1] * n[0],
            ];
            let len = (t1[0] * t1[0] + t1[1] * t1[1] + t1[2] * t1[2]).sqrt();
            let t1 = [t1[0] / len, t1[1] / len, t1[2] / len];
            let t2 = [
                n[1] * t1[2] - n[2] * t1[1],
                n[2] * t1[0] - n[0] * t1[2],
                n[0] * t1[1] - n[1] * t1[0],
            ];
            for i in 0..3 {
                m[(i, 0)] = t1[i];
                m[(i, 1)] = t2[i];
            }
        }
        _ => unreachable!(),
    }
    for i in 0..D {
        m[(i, D - 1)] = n[i];
    }
    Frame(m)
}

/// The SO(2) angle representation acting in frame coordinates.
pub fn euler_matrix_2d(theta: f64) -> SMatrix<f64, 2, 2> {
    let (s, c) = theta.sin_cos();
    SMatrix::<f64, 2, 2>::new(c, s, -s, c)
}

/// The SO(3) angle representation `U(Φ)`, `Φ = (φ, θ, ψ)`, acting in frame
/// coordinates.
pub fn euler_matrix_3d(phi: f64, theta: f64, psi: f64) -> SMatrix<f64, 3, 3> {
    let (sf, cf) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = psi.sin_cos();
    SMatrix::<f64, 3, 3>::new(
        ct * cp,
        -cf * sp + sf * st * cp,
        sf * sp + cf * st * cp,
        ct * sp,
        cf * cp + sf * st * sp,
        -sf * cp + cf * st * sp,
        -st,
        sf * ct,
        cf * ct,
    )
}

/// World-coordinates rotation with `U [τ, n] = [τ, n] U(θ)`.
pub fn rotation_2d(frame: &Frame<2>, theta: f64) -> SMatrix<f64, 2, 2> {
    frame.0 * euler_matrix_2d(theta) * frame.0.transpose()
}

/// World-coordinates rotation with `U [τ_1, τ_2, n] = [τ_1, τ_2, n] U(Φ)`.
pub fn rotation_3d(frame: &Frame<3>, phi: f64, theta: f64, psi: f64) -> SMatrix<f64, 3, 3> {
    frame.0 * euler_matrix_3d(phi, theta, psi) * frame.0.transpose()
}

// ---------------------------------------------------------------------------
// auxiliary matrices

/// 2x2 auxiliary matrix `M̃(U(θ), α)` at direction `n`, row-major.
pub fn assemble_mtilde(
    model: &AnisotropyModel<2>,
    n: &SVector<f64, 2>,
    theta: f64,
    alpha: f64,
) -> Result<[f64; 4], AnisotropyError> {
    let frame = orthonormal_frame(n);
    let xi = model.xi(n)?;
    let gamma = model.gamma_unit(n);
    let xi_t = xi.dot(&frame.tangent(0));
    let u = euler_matrix_2d(theta);
    let ut_t = u[(0, 0)];
    let ut_n = u[(1, 0)];
    let un_world = frame.0 * u.column(1).into_owned();
    let gamma_un = model.gamma_unit(&un_world);
    let m11 = gamma + alpha * ut_n * ut_n;
    let m21 = -0.5 * (gamma * ut_t + ut_n * xi_t + gamma_un);
    Ok([m11, m21, m21, gamma])
}

/// 4x4 auxiliary matrix `M(U(Φ), α)` at direction `n`, row-major.
pub fn assemble_m3(
    model: &AnisotropyModel<3>,
    n: &SVector<f64, 3>,
    angles: [f64; 3],
    alpha: f64,
) -> Result<[f64; 16], AnisotropyError> {
    let frame = orthonormal_frame(n);
    let xi = model.xi(n)?;
    let gamma = model.gamma_unit(n);
    let xi_t1 = xi.dot(&frame.tangent(0));
    let xi_t2 = xi.dot(&frame.tangent(1));
    let u = euler_matrix_3d(angles[0], angles[1], angles[2]);
    let un_world = frame.0 * u.column(2).into_owned();
    let gamma_un = model.gamma_unit(&un_world);
    Ok(assemble_m3_from_parts(
        gamma,
        gamma_un,
        xi_t1,
        xi_t2,
        [u[(0, 0)], u[(0, 1)], u[(1, 1)], u[(2, 0)], u[(2, 1)]],
        alpha,
    ))
}

/// Entries of `M(U, α)` from frame-coordinate components of `U`:
/// `uc = [Uτ_1·τ_1, Uτ_2·τ_1, Uτ_2·τ_2, Uτ_1·n, Uτ_2·n]`.
#[inline]
fn assemble_m3_from_parts(
    gamma: f64,
    gamma_un: f64,
    xi_t1: f64,
    xi_t2: f64,
    uc: [f64; 5],
    alpha: f64,
) -> [f64; 16] {
    let [u11, u12, u22, u31, u32] = uc;
    let m21 = -0.5 * gamma_un;
    let m31 = alpha * u31 * u32;
    let m41 = -0.5 * (gamma * u11 + u31 * xi_t1);
    let m42 = -0.5 * (gamma * u22 + u32 * xi_t2);
    let m43 = -0.5 * (gamma * u12 + u32 * xi_t1);
    let d11 = gamma + alpha * u31 * u31;
    let d22 = gamma + alpha * u32 * u32;
    [
        d11, m21, m31, m41, //
        m21, d22, 0.0, m42, //
        m31, 0.0, d22, m43, //
        m41, m42, m43, gamma,
    ]
}

/// PSD test: true iff the smallest eigenvalue is at least
/// `-tol · (1 + ‖A‖_∞)`.
pub fn psd_check(a: &[f64], n: usize, tol: f64) -> bool {
    debug_assert!({
        let scale = a.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        (0..n).all(|i| (0..n).all(|j| (a[i * n + j] - a[j * n + i]).abs() <= 1e-12 * (1.0 + scale)))
    });
    min_eigenvalue_sym(a, n) >= -tol * (1.0 + norm_inf(a, n))
}

#[inline]
fn norm_inf(a: &[f64], n: usize) -> f64 {
    (0..n)
        .map(|i| (0..n).map(|j| a[i * n + j].abs()).sum::<f64>())
        .fold(0.0f64, f64::max)
}

/// Brute-force oracle for the stabilizer definition: evaluates
/// `Tr(Lᵀ(P_α(U, n) L − Q(U, n))) ≥ γ(Un) Π l_ii − γ(n)` for a world
/// rotation `U` and a lower-triangular `L` given in row-major lower order
/// (`[l11]` in 2D, `[l11, l21, l22]` in 3D).
pub fn trace_inequality_check<const D: usize>(
    model: &AnisotropyModel<D>,
    n: &SVector<f64, D>,
    u_world: &SMatrix<f64, D, D>,
    l: &[f64],
    alpha: f64,
) -> Result<bool, AnisotropyError> {
    let frame = orthonormal_frame(n);
    let xi = model.xi(n)?;
    let gamma = model.gamma_unit(n);
    let k = D - 1;
    let mut ut_n = [0.0f64; 2];
    let mut ut_t = [[0.0f64; 2]; 2]; // [i][j] = Uτ_i · τ_j
    let mut xi_t = [0.0f64; 2];
    for i in 0..k {
        let uti = u_world * frame.tangent(i);
        ut_n[i] = uti.dot(n);
        for j in 0..k {
            ut_t[i][j] = uti.dot(&frame.tangent(j));
        }
        xi_t[i] = xi.dot(&frame.tangent(i));
    }
    let lmat = |i: usize, j: usize| -> f64 {
        match (i, j) {
            (0, 0) => l[0],
            (1, 0) => l[1],
            (1, 1) => l[2],
            _ => 0.0,
        }
    };
    // Tr(L^T P L) - Tr(L^T Q) accumulated over the lower triangle
    let mut lhs = 0.0;
    for i in 0..k {
        for j in 0..=i {
            let mut pl = 0.0;
            for m in j..k {
                let p_im = gamma * ((i == m) as i32 as f64) + alpha * ut_n[i] * ut_n[m];
                pl += p_im * lmat(m, j);
            }
            let q_ij = gamma * ut_t[i][j] + ut_n[i] * xi_t[j];
            lhs += lmat(i, j) * (pl - q_ij);
        }
    }
    let un = u_world * n;
    let mut prod = 1.0;
    for i in 0..k {
        prod *= lmat(i, i);
    }
    let rhs = model.gamma_hom(&un) * prod - gamma;
    let scale = 1.0 + lhs.abs() + rhs.abs();
    Ok(lhs >= rhs - 1e-12 * scale)
}

// ---------------------------------------------------------------------------
// k0 estimation

/// Knobs of the k0 estimator. Sampling densities and tolerances are
/// engineering choices exposed here; defaults match the experiment setup.
#[derive(Clone, Debug, PartialEq)]
pub struct K0Opts {
    /// Bisection resolution on α.
    pub alpha_tol: f64,
    /// Cap for the doubling phase; exceeding it raises `NoFeasibleAlpha`.
    pub alpha_max: f64,
    /// SO(2) sample count (uniform in θ).
    pub n_theta: usize,
    /// SO(3) samples per Euler axis (total `n_euler³`).
    pub n_euler: usize,
    /// Relative PSD tolerance; the feasibility boundary carries exact zero
    /// eigenvalues, so a strict test would reject the analytic optimum.
    pub psd_tol: f64,
    /// One level of 5³ sub-sampling around near-singular grid cells.
    pub refine: bool,
    /// Node count of the 2D interpolation table built by `build_table`.
    pub table_n_2d: usize,
}

impl Default for K0Opts {
    fn default() -> Self {
        Self {
            alpha_tol: 1e-4,
            alpha_max: 1e4,
            n_theta: 720,
            n_euler: 48,
            psd_tol: 1e-10,
            refine: true,
            table_n_2d: 72,
        }
    }
}

fn check_stability<const D: usize>(
    model: &AnisotropyModel<D>,
    n: &SVector<f64, D>,
) -> Result<(), StabilizerError> {
    for dir in [*n, -*n] {
        let margin = model.stability_margin(&dir);
        // The boundary margin = 0 occurs at isolated directions of otherwise
        // stable densities; only strictly negative margins are rejected here.
        // An infeasible boundary surfaces as NoFeasibleAlpha instead.
        if margin < -1e-12 * (1.0 + model.gamma_unit(&dir).abs()) {
            return Err(StabilizerError::UnstableAnisotropy {
                at: dir.iter().copied().collect(),
                margin,
            });
        }
    }
    Ok(())
}

/// Shared SO(3) sample set: angle triples with the frame-coordinate
/// components of `U(Φ)` needed by the matrix assembly.
pub struct EulerGrid {
    step: f64,
    pts: Vec<GridPoint>,
}

struct GridPoint {
    angles: [f64; 3],
    uc: [f64; 5],
    col3: [f64; 3],
}

impl GridPoint {
    fn new(angles: [f64; 3]) -> Self {
        let u = euler_matrix_3d(angles[0], angles[1], angles[2]);
        Self {
            angles,
            uc: [u[(0, 0)], u[(0, 1)], u[(1, 1)], u[(2, 0)], u[(2, 1)]],
            col3: [u[(0, 2)], u[(1, 2)], u[(2, 2)]],
        }
    }
}

impl EulerGrid {
    pub fn new(n_per_axis: usize) -> Self {
        let step = 2.0 * std::f64::consts::PI / n_per_axis as f64;
        let mut pts = Vec::with_capacity(n_per_axis.pow(3) + 2);
        for i in 0..n_per_axis {
            for j in 0..n_per_axis {
                for k in 0..n_per_axis {
                    pts.push(GridPoint::new([
                        i as f64 * step,
                        j as f64 * step,
                        k as f64 * step,
                    ]));
                }
            }
        }
        // known zero-determinant loci, sampled explicitly
        pts.push(GridPoint::new([0.0, 0.0, 0.0]));
        pts.push(GridPoint::new([0.0, 0.0, std::f64::consts::PI]));
        Self { step, pts }
    }
}

enum PointStatus {
    Pass,
    NearBoundary,
    Fail,
}

fn classify(a: &[f64; 16], psd_tol: f64) -> PointStatus {
    let tol_abs = psd_tol * (1.0 + norm_inf(a, 4));
    // quick certificate: strictly PD even after shifting down by 10 tol
    let mut shifted = *a;
    for i in 0..4 {
        shifted[i * 4 + i] -= 10.0 * tol_abs;
    }
    if cholesky_pd(&shifted, 4) {
        return PointStatus::Pass;
    }
    let lam = min_eigenvalue_sym(a, 4);
    if lam < -tol_abs {
        PointStatus::Fail
    } else if lam < 10.0 * tol_abs {
        PointStatus::NearBoundary
    } else {
        PointStatus::Pass
    }
}

/// Per-direction SO(3) feasibility sweep over a shared grid, generic in `D`
/// but only constructed for `D = 3`.
struct Sweep3<'a, const D: usize> {
    model: &'a AnisotropyModel<D>,
    frame: &'a Frame<D>,
    gamma_n: f64,
    xi_t1: f64,
    xi_t2: f64,
    grid: &'a EulerGrid,
    gamma_un: Vec<f64>,
    psd_tol: f64,
    refine: bool,
}

impl<'a, const D: usize> Sweep3<'a, D> {
    fn new(
        model: &'a AnisotropyModel<D>,
        frame: &'a Frame<D>,
        grid: &'a EulerGrid,
        psd_tol: f64,
        refine: bool,
    ) -> Result<Self, AnisotropyError> {
        debug_assert_eq!(D, 3);
        let n = frame.normal();
        let xi = model.xi(&n)?;
        let gamma_n = model.gamma_unit(&n);
        let xi_t1 = xi.dot(&frame.tangent(0));
        let xi_t2 = xi.dot(&frame.tangent(1));
        let gamma_un = grid
            .pts
            .iter()
            .map(|p| {
                let un = frame.0 * SVector::<f64, D>::from_fn(|i, _| p.col3[i]);
                model.gamma_unit(&un)
            })
            .collect();
        Ok(Self {
            model,
            frame,
            gamma_n,
            xi_t1,
            xi_t2,
            grid,
            gamma_un,
            psd_tol,
            refine,
        })
    }

    fn assemble_at_angles(&self, angles: [f64; 3], alpha: f64) -> [f64; 16] {
        let u = euler_matrix_3d(angles[0], angles[1], angles[2]);
        let col3 = [u[(0, 2)], u[(1, 2)], u[(2, 2)]];
        let un = self.frame.0 * SVector::<f64, D>::from_fn(|i, _| col3[i]);
        let gamma_un = self.model.gamma_unit(&un);
        assemble_m3_from_parts(
            self.gamma_n,
            gamma_un,
            self.xi_t1,
            self.xi_t2,
            [u[(0, 0)], u[(0, 1)], u[(1, 1)], u[(2, 0)], u[(2, 1)]],
            alpha,
        )
    }

    fn feasible(&self, alpha: f64) -> bool {
        let offsets: [f64; 5] = std::array::from_fn(|k| (k as f64 - 2.0) * self.grid.step / 5.0);
        for (idx, p) in self.grid.pts.iter().enumerate() {
            let a = assemble_m3_from_parts(
                self.gamma_n,
                self.gamma_un[idx],
                self.xi_t1,
                self.xi_t2,
                p.uc,
                alpha,
            );
            match classify(&a, self.psd_tol) {
                PointStatus::Pass => {}
                PointStatus::Fail => return false,
                PointStatus::NearBoundary => {
                    if !self.refine {
                        continue;
                    }
                    for &da in &offsets {
                        for &db in &offsets {
                            for &dc in &offsets {
                                if da == 0.0 && db == 0.0 && dc == 0.0 {
                                    continue;
                                }
                                let sub = self.assemble_at_angles(
                                    [p.angles[0] + da, p.angles[1] + db, p.angles[2] + dc],
                                    alpha,
                                );
                                let tol_abs = self.psd_tol * (1.0 + norm_inf(&sub, 4));
                                let mut shifted = sub;
                                for i in 0..4 {
                                    shifted[i * 4 + i] += tol_abs;
                                }
                                if cholesky_pd(&shifted, 4) {
                                    continue;
                                }
                                if min_eigenvalue_sym(&sub, 4) < -tol_abs {
                                    return false;
                                }
                            }
                        }
                    }
                }
            }
        }
        true
    }
}

/// SO(2) feasibility: closed-form smallest eigenvalue of the 2x2 matrix per
/// sampled θ.
fn feasible_2d(gammas_un: &[f64], gamma_n: f64, xi_t: f64, alpha: f64, psd_tol: f64) -> bool {
    let n_theta = gammas_un.len();
    for (i, &gamma_un) in gammas_un.iter().enumerate() {
        let theta = 2.0 * std::f64::consts::PI * i as f64 / n_theta as f64;
        let (s, c) = theta.sin_cos();
        let m11 = gamma_n + alpha * s * s;
        let m21 = -0.5 * (gamma_n * c + (-s) * xi_t + gamma_un);
        let m22 = gamma_n;
        let tr_half = 0.5 * (m11 + m22);
        let gap = (0.25 * (m11 - m22) * (m11 - m22) + m21 * m21).sqrt();
        let lam = tr_half - gap;
        let tol_abs = psd_tol * (1.0 + (m11.abs() + m21.abs()).max(m21.abs() + m22.abs()));
        if lam < -tol_abs {
            return false;
        }
    }
    true
}

fn bisect_alpha<F: FnMut(f64) -> bool>(
    mut feasible: F,
    opts: &K0Opts,
) -> Result<f64, StabilizerError> {
    if feasible(0.0) {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while !feasible(hi) {
        lo = hi;
        hi *= 2.0;
        if hi > opts.alpha_max {
            return Err(StabilizerError::NoFeasibleAlpha { cap: opts.alpha_max });
        }
    }
    while hi - lo > opts.alpha_tol {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Smallest sampled-feasible `α ≥ 0` at direction `n`, within
/// `opts.alpha_tol`, using the deterministic frame of `n`.
pub fn k0_estimate<const D: usize>(
    model: &AnisotropyModel<D>,
    n: &SVector<f64, D>,
    opts: &K0Opts,
) -> Result<f64, StabilizerError> {
    let frame = orthonormal_frame(n);
    k0_estimate_with_frame(model, &frame, opts)
}

/// As [`k0_estimate`] but with a caller-supplied frame; the estimate is
/// gauge independent up to sampling resolution.
pub fn k0_estimate_with_frame<const D: usize>(
    model: &AnisotropyModel<D>,
    frame: &Frame<D>,
    opts: &K0Opts,
) -> Result<f64, StabilizerError> {
    let n = frame.normal();
    check_stability(model, &n)?;
    match D {
        2 => {
            let gamma_n = model.gamma_unit(&n);
            let xi_t = model.xi(&n)?.dot(&frame.tangent(0));
            let gammas_un: Vec<f64> = (0..opts.n_theta)
                .map(|i| {
                    let theta = 2.0 * std::f64::consts::PI * i as f64 / opts.n_theta as f64;
                    let (s, c) = theta.sin_cos();
                    // second column of U(θ) in frame coordinates is (sin, cos)
                    let un = frame.tangent(0) * s + n * c;
                    model.gamma_unit(&un)
                })
                .collect();
            bisect_alpha(
                |alpha| feasible_2d(&gammas_un, gamma_n, xi_t, alpha, opts.psd_tol),
                opts,
            )
        }
        3 => {
            let grid = EulerGrid::new(opts.n_euler);
            let sweep = Sweep3::new(model, frame, &grid, opts.psd_tol, opts.refine)?;
            bisect_alpha(|alpha| sweep.feasible(alpha), opts)
        }
        _ => unreachable!(),
    }
}

/// As [`k0_estimate`] for `d = 3` with a shared precomputed grid.
fn k0_estimate_on_grid<const D: usize>(
    model: &AnisotropyModel<D>,
    n: &SVector<f64, D>,
    grid: &EulerGrid,
    opts: &K0Opts,
) -> Result<f64, StabilizerError> {
    let frame = orthonormal_frame(n);
    check_stability(model, n)?;
    let sweep = Sweep3::new(model, &frame, grid, opts.psd_tol, opts.refine)?;
    bisect_alpha(|alpha| sweep.feasible(alpha), opts)
}

// ---------------------------------------------------------------------------
// stabilizer fields (tables)

const TABLE_THETA_COUNT: usize = 20;
const TABLE_PHI_COUNT: usize = 21;

/// Sphere-grid node of the 3D table: `θ_i = (i+1)π/10` (i = 0..19),
/// `φ_j = -π/2 + jπ/10` (j = 0..20).
pub fn table_node_3d(i: usize, j: usize) -> SVector<f64, 3> {
    let theta = (i + 1) as f64 * std::f64::consts::PI / 10.0;
    let phi = -std::f64::consts::FRAC_PI_2 + j as f64 * std::f64::consts::PI / 10.0;
    SVector::<f64, 3>::new(
        theta.cos() * phi.cos(),
        theta.cos() * phi.sin(),
        theta.sin(),
    )
}

/// Stabilizing function `k(n)`: a constant, or an interpolation table of k0
/// estimates over the circle/sphere. Table lookups add the one-sided safety
/// margin stored at build time (k only needs to dominate k0).
#[derive(Clone, Debug)]
pub enum StabilizerField<const D: usize> {
    Constant(f64),
    Table {
        model_name: String,
        /// θ-major values: 2D `n_theta` entries; 3D 20x21 entries.
        values: Vec<f64>,
        n_theta: usize,
        n_phi: usize,
        safety: f64,
    },
}

impl<const D: usize> StabilizerField<D> {
    pub fn constant(k: f64) -> Self {
        StabilizerField::Constant(k)
    }

    /// Largest stored value plus safety, the `k(n) = sup k0` variant.
    pub fn sup_constant(&self) -> f64 {
        match self {
            StabilizerField::Constant(k) => *k,
            StabilizerField::Table { values, safety, .. } => {
                values.iter().copied().fold(0.0f64, f64::max) + safety
            }
        }
    }

    pub fn eval(&self, n: &SVector<f64, D>) -> f64 {
        match self {
            StabilizerField::Constant(k) => *k,
            StabilizerField::Table {
                values,
                n_theta,
                n_phi,
                safety,
                ..
            } => match D {
                2 => {
                    let theta = n[1].atan2(n[0]).rem_euclid(2.0 * std::f64::consts::PI);
                    let step = 2.0 * std::f64::consts::PI / *n_theta as f64;
                    let t = theta / step;
                    let i0 = (t.floor() as usize) % n_theta;
                    let i1 = (i0 + 1) % n_theta;
                    let frac = t - t.floor();
                    (1.0 - frac) * values[i0] + frac * values[i1] + safety
                }
                3 => {
                    let r = (n[0] * n[0] + n[1] * n[1]).sqrt();
                    let mut theta = n[2].atan2(r);
                    let mut phi = n[1].atan2(n[0]);
                    let step = std::f64::consts::PI / 10.0;
                    // the grid covers θ in [π/10, 2π]; atan2 gives [-π/2, π/2],
                    // so small-θ queries use the antipodal representation
                    // (θ, φ) ~ (π - θ, φ + π) of the same direction
                    if theta < step {
                        theta = std::f64::consts::PI - theta;
                        phi += std::f64::consts::PI;
                    }
                    while phi < -std::f64::consts::FRAC_PI_2 {
                        phi += 2.0 * std::f64::consts::PI;
                    }
                    while phi >= 1.5 * std::f64::consts::PI {
                        phi -= 2.0 * std::f64::consts::PI;
                    }
                    let t = (theta / step - 1.0).clamp(0.0, (*n_theta - 1) as f64);
                    let s = ((phi + std::f64::consts::FRAC_PI_2) / step)
                        .clamp(0.0, (*n_phi - 1) as f64);
                    let i0 = (t.floor() as usize).min(n_theta - 2);
                    let j0 = (s.floor() as usize).min(n_phi - 2);
                    let ft = t - i0 as f64;
                    let fs = s - j0 as f64;
                    let v00 = values[i0 * n_phi + j0];
                    let v01 = values[i0 * n_phi + j0 + 1];
                    let v10 = values[(i0 + 1) * n_phi + j0];
                    let v11 = values[(i0 + 1) * n_phi + j0 + 1];
                    (1.0 - ft) * ((1.0 - fs) * v00 + fs * v01)
                        + ft * ((1.0 - fs) * v10 + fs * v11)
                        + safety
                }
                _ => unreachable!(),
            },
        }
    }

    /// Serializes as `K0TABLE d=<d> model=<name>`, grid parameters, then
    /// θ-major value rows with 17 significant digits.
    pub fn write_table<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        match self {
            StabilizerField::Constant(k) => {
                writeln!(w, "K0TABLE d={D} model=constant")?;
                writeln!(w, "constant {k:.16e}")
            }
            StabilizerField::Table {
                model_name,
                values,
                n_theta,
                n_phi,
                safety,
            } => {
                writeln!(w, "K0TABLE d={D} model={model_name}")?;
                writeln!(w, "ntheta {n_theta}")?;
                if D == 3 {
                    writeln!(w, "nphi {n_phi}")?;
                }
                writeln!(w, "safety {safety:.16e}")?;
                if D == 3 {
                    for i in 0..*n_theta {
                        let row: Vec<String> = (0..*n_phi)
                            .map(|j| format!("{:.16e}", values[i * n_phi + j]))
                            .collect();
                        writeln!(w, "{}", row.join(" "))?;
                    }
                } else {
                    for v in values {
                        writeln!(w, "{v:.16e}")?;
                    }
                }
                Ok(())
            }
        }
    }

    pub fn save_table<P: AsRef<Path>>(&self, path: P) -> std::io::Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_table(std::io::BufWriter::new(f))
    }

    pub fn load_table<P: AsRef<Path>>(path: P) -> Result<Self, StabilizerError> {
        let name = path.as_ref().display().to_string();
        let text = std::fs::read_to_string(path.as_ref())?;
        let perr = |line: usize, msg: String| StabilizerError::Parse {
            path: name.clone(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let (l0, header) = lines.next().ok_or_else(|| perr(0, "empty file".into()))?;
        let mut it = header.split_whitespace();
        if it.next() != Some("K0TABLE") {
            return Err(perr(l0, "expected K0TABLE header".into()));
        }
        let d: usize = it
            .next()
            .and_then(|t| t.strip_prefix("d="))
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| perr(l0, "missing d=<dim>".into()))?;
        if d != D {
            return Err(perr(l0, format!("table dimension {d} does not match {D}")));
        }
        let model_name = it
            .next()
            .and_then(|t| t.strip_prefix("model="))
            .ok_or_else(|| perr(l0, "missing model=<name>".into()))?
            .to_string();
        let mut n_theta = 0usize;
        let mut n_phi = if D == 3 { 0usize } else { 1 };
        let mut safety = 0.0f64;
        let mut values = Vec::new();
        for (ln, line) in lines {
            if line.is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            match toks[0] {
                "constant" => {
                    let k = toks
                        .get(1)
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| perr(ln, "bad constant value".into()))?;
                    return Ok(StabilizerField::Constant(k));
                }
                "ntheta" => {
                    n_theta = toks
                        .get(1)
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| perr(ln, "bad ntheta".into()))?
                }
                "nphi" => {
                    n_phi = toks
                        .get(1)
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| perr(ln, "bad nphi".into()))?
                }
                "safety" => {
                    safety = toks
                        .get(1)
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| perr(ln, "bad safety".into()))?
                }
                _ => {
                    for t in toks {
                        values.push(
                            t.parse::<f64>()
                                .map_err(|e| perr(ln, format!("bad value: {e}")))?,
                        );
                    }
                }
            }
        }
        if n_theta == 0 || n_phi == 0 || values.len() != n_theta * n_phi {
            return Err(perr(
                0,
                format!(
                    "value count {} does not match grid {n_theta} x {n_phi}",
                    values.len()
                ),
            ));
        }
        if values.iter().any(|v| *v < 0.0) {
            return Err(perr(0, "negative stabilizer value".into()));
        }
        Ok(StabilizerField::Table {
            model_name,
            values,
            n_theta,
            n_phi,
            safety,
        })
    }
}

/// Builds the k0 interpolation table: a 20 x 21 (θ, φ) sphere grid in 3D,
/// a uniform angle grid in 2D. Node estimates run in
/// parallel and gather in index order; any node failure aborts the build.
pub fn build_table<const D: usize>(
    model: &AnisotropyModel<D>,
    opts: &K0Opts,
) -> Result<StabilizerField<D>, StabilizerError> {
    match D {
        2 => {
            let nt = opts.table_n_2d;
            let values: Vec<f64> = (0..nt)
                .into_par_iter()
                .map(|i| {
                    let theta = 2.0 * std::f64::consts::PI * i as f64 / nt as f64;
                    let c = [theta.cos(), theta.sin()];
                    let n = SVector::<f64, D>::from_fn(|k, _| c[k]);
                    k0_estimate(model, &n, opts)
                })
                .collect::<Result<_, _>>()?;
            Ok(StabilizerField::Table {
                model_name: model.name(),
                values,
                n_theta: nt,
                n_phi: 1,
                safety: opts.alpha_tol,
            })
        }
        3 => {
            let grid = EulerGrid::new(opts.n_euler);
            let values: Vec<f64> = (0..TABLE_THETA_COUNT * TABLE_PHI_COUNT)
                .into_par_iter()
                .map(|idx| {
                    let node = table_node_3d(idx / TABLE_PHI_COUNT, idx % TABLE_PHI_COUNT);
                    let n = SVector::<f64, D>::from_fn(|k, _| node[k]);
                    k0_estimate_on_grid(model, &n, &grid, opts)
                })
                .collect::<Result<_, _>>()?;
            Ok(StabilizerField::Table {
                model_name: model.name(),
                values,
                n_theta: TABLE_THETA_COUNT,
                n_phi: TABLE_PHI_COUNT,
                safety: opts.alpha_tol,
            })
        }
        _ => unreachable!(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use nalgebra::{Matrix4, Vector2, Vector3};
    use std::f64::consts::{FRAC_PI_2, PI};

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

    fn det4(a: &[f64; 16]) -> f64 {
        Matrix4::from_row_slice(a).determinant()
    }

    #[test]
    fn frames_are_orthonormal_and_right_handed() {
        assert_eq!(orthonormal_frame(&Vector2::new(0.0, 1.0)).tangent(0), Vector2::new(1.0, 0.0));
        let mut r = SplitMix64::new(1);
        for _ in 0..500 {
            let n = random_unit::<2>(&mut r);
            let f = orthonormal_frame(&n);
            assert!((f.0 * f.0.transpose() - SMatrix::<f64, 2, 2>::identity()).amax() < 1e-14);
            assert!((f.0.determinant() - 1.0).abs() < 1e-12);
        }
        for _ in 0..500 {
            let n = random_unit::<3>(&mut r);
            let f = orthonormal_frame(&n);
            assert!((f.0 * f.0.transpose() - SMatrix::<f64, 3, 3>::identity()).amax() < 1e-14);
            assert!((f.0.determinant() - 1.0).abs() < 1e-12);
            let g = f.rotate_in_plane(r.uniform(0.0, 2.0 * PI));
            assert!((g.0.determinant() - 1.0).abs() < 1e-12);
            assert!((g.normal() - n).norm() < 1e-15);
        }
        let f = orthonormal_frame(&Vector3::new(0.0, 0.0, 1.0));
        assert!((f.0.determinant() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rotation_representations() {
        let mut r = SplitMix64::new(2);
        let n = random_unit::<2>(&mut r);
        let f = orthonormal_frame(&n);
        assert!((rotation_2d(&f, 0.0) - SMatrix::<f64, 2, 2>::identity()).amax() < 1e-15);
        let u = rotation_2d(&f, FRAC_PI_2);
        assert!((u * f.tangent(0) + n).norm() < 1e-14, "U tau = -n");
        assert!((u * n - f.tangent(0)).norm() < 1e-14, "U n = tau");
        let n3 = random_unit::<3>(&mut r);
        let f3 = orthonormal_frame(&n3);
        assert!((rotation_3d(&f3, 0.0, 0.0, 0.0) - SMatrix::<f64, 3, 3>::identity()).amax() < 1e-15);
        let diag = euler_matrix_3d(0.0, 0.0, PI);
        let expect = SMatrix::<f64, 3, 3>::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0));
        assert!((diag - expect).amax() < 1e-15);
    }

    #[test]
    fn mtilde_anchors() {
        let mut r = SplitMix64::new(3);
        for model in [
            AnisotropyModel::<2>::Isotropic,
            AnisotropyModel::<2>::CubicPolynomial { beta: 0.125 },
        ] {
            for _ in 0..20 {
                let n = random_unit::<2>(&mut r);
                let g = model.gamma_unit(&n);
                let alpha = r.uniform(0.0, 3.0);
                let m = assemble_mtilde(&model, &n, 0.0, alpha).unwrap();
                assert!((m[0] - g).abs() < 1e-14);
                assert!((m[1] + g).abs() < 1e-14);
                assert!((m[3] - g).abs() < 1e-14);
            }
        }
        // isotropic at theta = pi reduces to the identity
        let iso = AnisotropyModel::<2>::Isotropic;
        let n = random_unit::<2>(&mut r);
        let m = assemble_mtilde(&iso, &n, PI, 1.7).unwrap();
        assert!((m[0] - (1.0 + 1.7 * (PI.sin()).powi(2))).abs() < 1e-12);
        assert!(m[1].abs() < 1e-14);
        // isotropic determinant factorization across theta
        for _ in 0..200 {
            let theta = r.uniform(0.0, 2.0 * PI);
            let alpha = r.uniform(0.0, 5.0);
            let m = assemble_mtilde(&iso, &n, theta, alpha).unwrap();
            let det = m[0] * m[3] - m[1] * m[2];
            let c = theta.cos();
            let expect = (1.0 - c) * (alpha * (1.0 + c) + (3.0 + c) / 4.0);
            assert!((det - expect).abs() < 1e-12, "theta={theta}");
        }
    }

    #[test]
    fn m3_anchor_at_zero_angles() {
        let mut r = SplitMix64::new(4);
        for model in [AnisotropyModel::<3>::Isotropic, case1(), case3()] {
            let n = random_unit::<3>(&mut r);
            let g = model.gamma_unit(&n);
            let alpha = r.uniform(0.0, 4.0);
            let m = assemble_m3(&model, &n, [0.0, 0.0, 0.0], alpha).unwrap();
            let pattern = [
                1.0, -0.5, 0.0, -0.5, //
                -0.5, 1.0, 0.0, -0.5, //
                0.0, 0.0, 1.0, 0.0, //
                -0.5, -0.5, 0.0, 1.0,
            ];
            for (i, &p) in pattern.iter().enumerate() {
                assert!((m[i] - g * p).abs() < 1e-13, "entry {i}");
            }
            // (1, 1, 0, 1) is an exact kernel vector at the identity
            let v = [1.0, 1.0, 0.0, 1.0];
            for row in 0..4 {
                let s: f64 = (0..4).map(|c| m[row * 4 + c] * v[c]).sum();
                assert!(s.abs() < 1e-13);
            }
        }
    }

    #[test]
    fn m3_determinant_formulas() {
        let mut r = SplitMix64::new(5);
        for model in [AnisotropyModel::<3>::Isotropic, case1(), case3()] {
            for _ in 0..60 {
                let n = random_unit::<3>(&mut r);
                let g = model.gamma_unit(&n);
                let gm = model.gamma_unit(&-n);
                let psi = r.uniform(0.0, 2.0 * PI);
                let alpha = r.uniform(0.0, 6.0);
                let m = assemble_m3(&model, &n, [0.0, 0.0, psi], alpha).unwrap();
                let expect = 9.0 * psi.sin().powi(2) / 16.0 * g.powi(4);
                assert!(
                    (det4(&m) - expect).abs() <= 1e-10 * (1.0 + expect.abs()),
                    "psi-det {} vs {expect}",
                    det4(&m)
                );
                let m = assemble_m3(&model, &n, [PI, 0.0, psi], alpha).unwrap();
                // factorized determinant implied by the matrix entries; it
                // vanishes exactly at the stability boundary 2γ(n) = γ(-n)
                let expect = g * g * (2.0 * g - gm) / 32.0
                    * (g * (10.0 - 2.0 * (2.0 * psi).cos()) + gm * (7.0 + (2.0 * psi).cos()));
                assert!(
                    (det4(&m) - expect).abs() <= 1e-10 * (1.0 + expect.abs()),
                    "pi-det {} vs {expect}",
                    det4(&m)
                );
            }
        }
    }

    #[test]
    fn psd_check_examples() {
        assert!(psd_check(&[1.0, 0.0, 0.0, 1.0], 2, 1e-10));
        assert!(!psd_check(&[1.0, 0.0, 0.0, -1.0], 2, 1e-10));
        let g = 1.3;
        assert!(psd_check(&[g, -g, -g, g], 2, 1e-10));
    }

    #[test]
    fn trace_oracle_identity_and_violation() {
        let mut r = SplitMix64::new(6);
        // U = I, L = I gives exact equality for any model and alpha
        for model in [AnisotropyModel::<3>::Isotropic, case1(), case3()] {
            let n = random_unit::<3>(&mut r);
            let u = SMatrix::<f64, 3, 3>::identity();
            assert!(trace_inequality_check(&model, &n, &u, &[1.0, 0.0, 1.0], r.uniform(0.0, 5.0))
                .unwrap());
        }
        // 2D isotropic at alpha = 0 is feasible for all (theta, l11 > 0)
        let iso = AnisotropyModel::<2>::Isotropic;
        for _ in 0..100_000 {
            let n = random_unit::<2>(&mut r);
            let f = orthonormal_frame(&n);
            let u = rotation_2d(&f, r.uniform(0.0, 2.0 * PI));
            let l = [r.uniform(1e-3, 10.0)];
            assert!(trace_inequality_check(&iso, &n, &u, &l, 0.0).unwrap());
        }
        // strongly negative alpha at theta = pi/2 with large l11 violates
        let n = random_unit::<2>(&mut r);
        let f = orthonormal_frame(&n);
        let u = rotation_2d(&f, FRAC_PI_2);
        assert!(!trace_inequality_check(&iso, &n, &u, &[100.0], -2.0).unwrap());
    }

    #[test]
    fn k0_isotropic_2d_is_zero() {
        let iso = AnisotropyModel::<2>::Isotropic;
        let opts = K0Opts::default();
        let mut r = SplitMix64::new(7);
        for _ in 0..5 {
            let n = random_unit::<2>(&mut r);
            assert_eq!(k0_estimate(&iso, &n, &opts).unwrap(), 0.0);
        }
    }

    #[test]
    fn k0_rejects_unstable_model() {
        // beta = 0.5 gives margin 1 - 1.5 < 0 at n = -e_i
        let bad = AnisotropyModel::<3>::CubicPolynomial { beta: 0.5 };
        let opts = K0Opts {
            n_euler: 8,
            ..K0Opts::default()
        };
        let err = k0_estimate(&bad, &Vector3::new(1.0, 0.0, 0.0), &opts).unwrap_err();
        assert!(matches!(err, StabilizerError::UnstableAnisotropy { .. }));
    }

    #[test]
    fn k0_monotone_feasibility_and_dual_oracle_2d() {
        let model = AnisotropyModel::<2>::CubicPolynomial { beta: 0.125 };
        let opts = K0Opts::default();
        let mut r = SplitMix64::new(8);
        for _ in 0..3 {
            let n = random_unit::<2>(&mut r);
            let k0 = k0_estimate(&model, &n, &opts).unwrap();
            let f = orthonormal_frame(&n);
            // all grid matrices PSD at k0 and at larger alpha
            for bump in [0.0, 0.5, 2.0] {
                for i in 0..opts.n_theta {
                    let theta = 2.0 * PI * i as f64 / opts.n_theta as f64;
                    let m = assemble_mtilde(&model, &n, theta, k0 + bump).unwrap();
                    assert!(psd_check(&m, 2, opts.psd_tol));
                }
            }
            // dual oracle: random (U, L) draws at k0 + 0.01 all pass
            for _ in 0..10_000 {
                let u = rotation_2d(&f, r.uniform(0.0, 2.0 * PI));
                let l = [r.uniform(1e-6, 10.0)];
                assert!(trace_inequality_check(&model, &n, &u, &l, k0 + 0.01).unwrap());
            }
        }
    }

    #[test]
    fn k0_gauge_independence_3d() {
        // at the default sampling density two valid frames agree to within
        // a couple of bisection widths
        let model = AnisotropyModel::<3>::CubicPolynomial { beta: 0.25 };
        let opts = K0Opts::default();
        let mut r = SplitMix64::new(9);
        for _ in 0..3 {
            let n = random_unit::<3>(&mut r);
            let f0 = orthonormal_frame(&n);
            let k_a = k0_estimate_with_frame(&model, &f0, &opts).unwrap();
            let f1 = f0.rotate_in_plane(r.uniform(0.3, 5.0));
            let k_b = k0_estimate_with_frame(&model, &f1, &opts).unwrap();
            assert!((k_a - k_b).abs() <= 2.0 * opts.alpha_tol, "{k_a} vs {k_b}");
        }
    }

    #[test]
    fn k0_estimate_is_deterministic() {
        let model = case1();
        let opts = K0Opts {
            n_euler: 16,
            ..K0Opts::default()
        };
        let n = Vector3::new(-0.48, 0.6, 0.64).normalize();
        let a = k0_estimate(&model, &n, &opts).unwrap();
        let b = k0_estimate(&model, &n, &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn table_2d_isotropic_interpolation() {
        let iso = AnisotropyModel::<2>::Isotropic;
        let opts = K0Opts {
            table_n_2d: 16,
            ..K0Opts::default()
        };
        let table = build_table(&iso, &opts).unwrap();
        let StabilizerField::Table { ref values, .. } = table else {
            panic!("expected table")
        };
        assert!(values.iter().all(|&v| v == 0.0));
        let n = Vector2::new(1.0, 0.0);
        assert_eq!(table.eval(&n), opts.alpha_tol);
        assert!(table.sup_constant() == opts.alpha_tol);
    }

    #[test]
    fn table_interpolation_identities_2d() {
        // hand-built table: check node exactness and midpoint averaging
        let table = StabilizerField::<2>::Table {
            model_name: "test".into(),
            values: (0..8).map(|i| i as f64).collect(),
            n_theta: 8,
            n_phi: 1,
            safety: 0.0,
        };
        for i in 0..8 {
            let theta = 2.0 * PI * i as f64 / 8.0;
            let n = Vector2::new(theta.cos(), theta.sin());
            assert!((table.eval(&n) - i as f64).abs() < 1e-9);
        }
        let theta = 2.0 * PI * 2.5 / 8.0;
        let n = Vector2::new(theta.cos(), theta.sin());
        assert!((table.eval(&n) - 2.5).abs() < 1e-9);
    }

    #[test]
    fn table_3d_small_grid_roundtrip_and_eval() {
        let model = case1();
        let opts = K0Opts {
            n_euler: 10,
            ..K0Opts::default()
        };
        let table = build_table(&model, &opts).unwrap();
        let StabilizerField::Table { ref values, .. } = table else {
            panic!("expected table")
        };
        assert!(values.iter().all(|&v| v >= 0.0));
        // canonical-range nodes reproduce their value (+ safety margin)
        for i in [0usize, 4, 9, 13] {
            for j in [0usize, 5, 20] {
                let n = table_node_3d(i, j);
                let direct = values[i * TABLE_PHI_COUNT + j] + opts.alpha_tol;
                assert!(
                    (table.eval(&n) - direct).abs() < 1e-12,
                    "node ({i}, {j}): {} vs {direct}",
                    table.eval(&n)
                );
            }
        }
        // antipodal-range nodes agree with the identified estimate up to
        // sampling noise
        let n = table_node_3d(17, 3);
        let v = table.eval(&n);
        assert!(v >= 0.0 && v < 10.0);
        let dir = std::env::temp_dir().join("surfdiff_k0_table_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("k0.table");
        table.save_table(&path).unwrap();
        let back = StabilizerField::<3>::load_table(&path).unwrap();
        let StabilizerField::Table { values: v2, .. } = back else {
            panic!()
        };
        assert_eq!(values, &v2);
    }

    #[test]
    fn sweep_matches_reference_assembly() {
        // the precomputed-grid fast path must agree with assemble_m3
        let model = case3();
        let mut r = SplitMix64::new(10);
        let n = random_unit::<3>(&mut r);
        let frame = orthonormal_frame(&n);
        let grid = EulerGrid::new(6);
        let sweep = Sweep3::new(&model, &frame, &grid, 1e-10, true).unwrap();
        for (idx, p) in grid.pts.iter().enumerate() {
            let alpha = r.uniform(0.0, 3.0);
            let fast = assemble_m3_from_parts(
                sweep.gamma_n,
                sweep.gamma_un[idx],
                sweep.xi_t1,
                sweep.xi_t2,
                p.uc,
                alpha,
            );
            let reference = assemble_m3(&model, &n, p.angles, alpha).unwrap();
            for i in 0..16 {
                assert!((fast[i] - reference[i]).abs() < 1e-13);
            }
        }
    }
}
