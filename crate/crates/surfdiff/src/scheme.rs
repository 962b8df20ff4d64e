//! Semi-implicit structure-preserving time step.
//!
//! One step advances the vertex positions `X` and the chemical potential `μ`
//! through the mass-lumped saddle system
//!
//! ```text
//! ( (X^{m+1} - X^m)/τ · n^{m+1/2}, φ )  +  ( ∇μ^{m+1}, ∇φ )          = 0
//! ( μ^{m+1} n^{m+1/2}, ω )             -  < G_k(n^m) ∇X^{m+1}, ∇ω >  = 0
//! ```
//!
//! with every inner product lumped on the current mesh. The only
//! nonlinearity is the averaged normal `n^{m+1/2}`, which couples old and
//! new direction vectors and is what makes the enclosed volume exact; it is
//! resolved by Newton iteration with its analytic derivative. The sparse
//! saddle system is solved by banded LU with partial pivoting after an RCM
//! vertex reordering, with diagonal row/column scaling.

use crate::anisotropy::{AnisotropyError, AnisotropyModel};
use crate::linalg::{reverse_cuthill_mckee, BandedMatrix};
use crate::mesh::{
    area_and_normal, degeneracy_threshold, direction_vector, grad_pwl, MeshError, Simplex,
    SimplexSurface,
};
use crate::stabilizer::StabilizerField;
use nalgebra::{DMatrix, DVector, SMatrix, SVector};

#[derive(Debug, thiserror::Error)]
pub enum SchemeError {
    #[error("linear solve failed at step {step} (t = {time}): singular matrix")]
    SingularMatrix { step: usize, time: f64 },
    #[error("Newton did not reach tolerance at step {step} (t = {time}): residual {residual:e} after {iters} iterations")]
    NoConvergence {
        step: usize,
        time: f64,
        residual: f64,
        iters: usize,
    },
    #[error("mesh collapse at step {step} (t = {time}): simplex {simplex} measure {measure:e}")]
    MeshCollapse {
        step: usize,
        time: f64,
        simplex: usize,
        measure: f64,
    },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Anisotropy(#[from] AnisotropyError),
}

/// Per-step diagnostic record.
#[derive(Clone, Copy, Debug)]
pub struct StepRecord {
    pub time: f64,
    pub volume: f64,
    pub energy: f64,
    pub newton_iters: usize,
}

/// Evolving flow: current mesh, step counter and diagnostic history.
#[derive(Clone, Debug)]
pub struct FlowState<const D: usize> {
    pub surface: SimplexSurface<D>,
    pub step_index: usize,
    pub tau: f64,
    pub diagnostics: Vec<StepRecord>,
}

impl<const D: usize> FlowState<D> {
    pub fn new(
        surface: SimplexSurface<D>,
        tau: f64,
        model: &AnisotropyModel<D>,
    ) -> Result<Self, SchemeError> {
        assert!(tau > 0.0, "time step must be positive");
        let volume = surface.enclosed_volume()?;
        let energy = surface.total_energy(model)?;
        Ok(Self {
            surface,
            step_index: 0,
            tau,
            diagnostics: vec![StepRecord {
                time: 0.0,
                volume,
                energy,
                newton_iters: 0,
            }],
        })
    }

    pub fn time(&self) -> f64 {
        self.step_index as f64 * self.tau
    }
}

/// Averaged normal `n^{m+1/2}` of one simplex: the trapezoid combination of
/// old and new direction vectors in 2D, the Simpson combination (with the
/// vertexwise midpoint simplex) in 3D, scaled by the old measure. Not
/// generally of unit length.
pub fn semi_implicit_normal<const D: usize>(
    old: &Simplex<D>,
    new: &Simplex<D>,
) -> Result<SVector<f64, D>, MeshError> {
    let j_old = direction_vector(old);
    let m = j_old.norm();
    if m <= degeneracy_threshold(old) {
        return Err(MeshError::DegenerateSimplex { measure: m });
    }
    let area_old = m / (D - 1) as f64;
    let j_new = direction_vector(new);
    match D {
        2 => Ok((j_old + j_new) / (2.0 * area_old)),
        3 => {
            let mid: Simplex<D> = std::array::from_fn(|i| (old[i] + new[i]) * 0.5);
            let j_mid = direction_vector(&mid);
            Ok((j_old + j_mid * 4.0 + j_new) / (12.0 * area_old))
        }
        _ => unreachable!(),
    }
}

/// Sparse saddle system for one Newton iteration. Unknown ordering: the `μ`
/// block (N entries) followed by the `X` block (d·N, component-major). The
/// right-hand side is the negated residual, so the solution is the Newton
/// update `(δμ, δX)`.
pub struct LinearSystem {
    pub dim: usize,
    pub n_vertices: usize,
    pub triplets: Vec<(u32, u32, f64)>,
    pub rhs: Vec<f64>,
}

impl LinearSystem {
    pub fn residual_norm(&self) -> f64 {
        self.rhs.iter().fold(0.0f64, |m, r| m.max(r.abs()))
    }

    /// Every unknown must appear in at least one matrix entry.
    pub fn rows_nonempty(&self) -> bool {
        let mut seen = vec![false; self.dim];
        for &(r, _, v) in &self.triplets {
            if v != 0.0 {
                seen[r as usize] = true;
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Quantities frozen on `Γ^m` for the whole step: measures, normals,
/// stabilized energy matrices and the P1 stiffness couplings.
pub struct AssemblyCache<const D: usize> {
    areas: Vec<f64>,
    g_mats: Vec<SMatrix<f64, D, D>>,
    /// per simplex: s_ab = |σ| (∇φ_a · ∇φ_b)
    stiff: Vec<SMatrix<f64, D, D>>,
    old_pts: Vec<Simplex<D>>,
}

impl<const D: usize> AssemblyCache<D> {
    pub fn new(
        surface: &SimplexSurface<D>,
        model: &AnisotropyModel<D>,
        kfield: &StabilizerField<D>,
    ) -> Result<Self, SchemeError> {
        let nj = surface.num_simplices();
        let mut areas = Vec::with_capacity(nj);
        let mut g_mats = Vec::with_capacity(nj);
        let mut stiff = Vec::with_capacity(nj);
        let mut old_pts = Vec::with_capacity(nj);
        for j in 0..nj {
            let pts = surface.simplex(j);
            let (area, normal) = area_and_normal(&pts)?;
            let k = kfield.eval(&normal);
            let g = model.build_g(&normal, k)?;
            // hat-function gradients: basis value 1 at corner a, 0 elsewhere
            let mut grads = [SVector::<f64, D>::zeros(); 3];
            for a in 0..D {
                let mut f = [0.0; D];
                f[a] = 1.0;
                grads[a] = grad_pwl(&pts, &f);
            }
            let mut s = SMatrix::<f64, D, D>::zeros();
            for a in 0..D {
                for b in 0..D {
                    s[(a, b)] = area * grads[a].dot(&grads[b]);
                }
            }
            areas.push(area);
            g_mats.push(g);
            stiff.push(s);
            old_pts.push(pts);
        }
        Ok(Self {
            areas,
            g_mats,
            stiff,
            old_pts,
        })
    }
}

#[inline]
fn mu_idx(a: usize) -> usize {
    a
}

#[inline]
fn x_idx(n: usize, a: usize, comp: usize) -> usize {
    n + comp * n + a
}

/// Derivative of the averaged normal with respect to one new corner
/// position, as a d x d matrix (row k = component of n_half, column c =
/// coordinate of the corner).
fn normal_derivative<const D: usize>(
    old: &Simplex<D>,
    new: &Simplex<D>,
    corner: usize,
    area_old: f64,
) -> SMatrix<f64, D, D> {
    match D {
        2 => {
            // J = -(q2 - q1)^perp is linear: dJ/dq2 = [[0,-1],[1,0]], dJ/dq1 the negative
            let sign = if corner == 1 { 1.0 } else { -1.0 };
            let mut m = SMatrix::<f64, D, D>::zeros();
            m[(0, 1)] = -sign;
            m[(1, 0)] = sign;
            m / (2.0 * area_old)
        }
        3 => {
            // dJ/dq_i δ = δ x w_i = -[w_i]_x δ with w_i the opposite edge
            let w_new = new[(corner + 1) % 3] - new[(corner + 2) % 3];
            let mid: Simplex<D> = std::array::from_fn(|i| (old[i] + new[i]) * 0.5);
            let w_mid = mid[(corner + 1) % 3] - mid[(corner + 2) % 3];
            // -[w_new]_x - 2 [w_mid]_x, then / (12 |σ^m|)
            let w = w_new + w_mid * 2.0;
            let mut m = SMatrix::<f64, D, D>::zeros();
            m[(0, 1)] = w[2];
            m[(0, 2)] = -w[1];
            m[(1, 0)] = -w[2];
            m[(1, 2)] = w[0];
            m[(2, 0)] = w[1];
            m[(2, 1)] = -w[0];
            m / (12.0 * area_old)
        }
        _ => unreachable!(),
    }
}

/// Assembles the Newton system at the current iterate `(mu, x_new)`.
/// The matrix is the analytic Jacobian of the residual; `rhs = -R`.
pub fn assemble_system<const D: usize>(
    surface: &SimplexSurface<D>,
    cache: &AssemblyCache<D>,
    tau: f64,
    mu: &[f64],
    x_new: &[SVector<f64, D>],
) -> LinearSystem {
    let n = surface.num_vertices();
    let dim = (D + 1) * n;
    let mut rhs = vec![0.0f64; dim];
    let mut triplets: Vec<(u32, u32, f64)> = Vec::with_capacity(surface.num_simplices() * 24 * D);
    let dt_inv = 1.0 / tau;
    let dinv = 1.0 / D as f64;
    let mut push = |r: usize, c: usize, v: f64| {
        if v != 0.0 {
            triplets.push((r as u32, c as u32, v));
        }
    };
    for j in 0..surface.num_simplices() {
        let verts = &surface.simplices[j];
        let old = &cache.old_pts[j];
        let new: Simplex<D> = std::array::from_fn(|i| x_new[verts[i]]);
        let area = cache.areas[j];
        let g = &cache.g_mats[j];
        let s = &cache.stiff[j];
        let j_old = direction_vector(old);
        let n_half: SVector<f64, D> = match D {
            2 => (j_old + direction_vector(&new)) / (2.0 * area),
            3 => {
                let mid: Simplex<D> = std::array::from_fn(|i| (old[i] + new[i]) * 0.5);
                (j_old + direction_vector(&mid) * 4.0 + direction_vector(&new)) / (12.0 * area)
            }
            _ => unreachable!(),
        };
        let dn: [SMatrix<f64, D, D>; 3] = std::array::from_fn(|i| {
            if i < D {
                normal_derivative(old, &new, i, area)
            } else {
                SMatrix::zeros()
            }
        });
        let w_vel = area * dinv * dt_inv;
        let w_mass = area * dinv;
        for i in 0..D {
            let vi = verts[i];
            let delta = x_new[vi] - old[i];
            // block 1 residual: velocity + stiffness on mu
            let mut r1 = w_vel * delta.dot(&n_half);
            for b in 0..D {
                r1 += s[(i, b)] * mu[verts[b]];
            }
            rhs[mu_idx(vi)] -= r1;
            // block 1 Jacobian
            for b in 0..D {
                push(mu_idx(vi), mu_idx(verts[b]), s[(i, b)]);
            }
            for c in 0..D {
                push(mu_idx(vi), x_idx(n, vi, c), w_vel * n_half[c]);
            }
            for b in 0..D {
                let dnb = &dn[b];
                for c in 0..D {
                    let mut v = 0.0;
                    for k in 0..D {
                        v += delta[k] * dnb[(k, c)];
                    }
                    push(mu_idx(vi), x_idx(n, verts[b], c), w_vel * v);
                }
            }
            // block 2 residual: mu n_half - G-stiffness
            for k in 0..D {
                let mut r2 = w_mass * mu[vi] * n_half[k];
                for b in 0..D {
                    let mut gx = 0.0;
                    for c in 0..D {
                        gx += g[(k, c)] * x_new[verts[b]][c];
                    }
                    r2 -= s[(i, b)] * gx;
                }
                rhs[x_idx(n, vi, k)] -= r2;
                // block 2 Jacobian
                push(x_idx(n, vi, k), mu_idx(vi), w_mass * n_half[k]);
                for b in 0..D {
                    let dnb = &dn[b];
                    for c in 0..D {
                        push(x_idx(n, vi, k), x_idx(n, verts[b], c), w_mass * mu[vi] * dnb[(k, c)]);
                        push(x_idx(n, vi, k), x_idx(n, verts[b], c), -s[(i, b)] * g[(k, c)]);
                    }
                }
            }
        }
    }
    LinearSystem {
        dim,
        n_vertices: n,
        triplets,
        rhs,
    }
}

/// Reusable sparse solver: RCM vertex ordering with per-vertex interleaving
/// of the `(μ, X)` unknowns, banded LU with partial pivoting, and symmetric
/// diagonal scaling. Falls back to dense LU when the band covers most of
/// the matrix.
pub struct SaddleSolver {
    n_vertices: usize,
    fields: usize,
    /// vertex -> position in the RCM order
    vertex_pos: Vec<usize>,
    kl: usize,
    dense: bool,
}

impl SaddleSolver {
    pub fn new<const D: usize>(surface: &SimplexSurface<D>) -> Self {
        let n = surface.num_vertices();
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for s in &surface.simplices {
            for a in 0..D {
                for b in 0..D {
                    if a != b && !adj[s[a]].contains(&s[b]) {
                        adj[s[a]].push(s[b]);
                    }
                }
            }
        }
        let order = reverse_cuthill_mckee(&adj);
        let mut vertex_pos = vec![0usize; n];
        for (p, &v) in order.iter().enumerate() {
            vertex_pos[v] = p;
        }
        let mut vbw = 0usize;
        for (v, nb) in adj.iter().enumerate() {
            for &u in nb {
                vbw = vbw.max(vertex_pos[v].abs_diff(vertex_pos[u]));
            }
        }
        let fields = D + 1;
        // scalar band: adjacent vertices interleave all their fields
        let kl = fields * (vbw + 1) - 1;
        let dim = fields * n;
        let dense = 3 * kl + 1 >= dim;
        Self {
            n_vertices: n,
            fields,
            vertex_pos,
            kl,
            dense,
        }
    }

    /// Scalar unknown index (spec ordering) -> banded row/column.
    #[inline]
    fn permute(&self, scalar: usize) -> usize {
        let n = self.n_vertices;
        let (vertex, field) = if scalar < n {
            (scalar, 0)
        } else {
            ((scalar - n) % n, (scalar - n) / n + 1)
        };
        self.vertex_pos[vertex] * self.fields + field
    }

    pub fn solve(&self, sys: &LinearSystem) -> Result<Vec<f64>, ()> {
        let dim = sys.dim;
        // diagonal magnitudes for symmetric scaling
        let mut diag = vec![0.0f64; dim];
        for &(r, c, v) in &sys.triplets {
            if r == c {
                diag[r as usize] += v;
            }
        }
        let scale: Vec<f64> = diag
            .iter()
            .map(|&d| if d.abs() > 1e-300 { 1.0 / d.abs().sqrt() } else { 1.0 })
            .collect();
        let mut b: Vec<f64> = vec![0.0; dim];
        for i in 0..dim {
            b[self.permute(i)] = sys.rhs[i] * scale[i];
        }
        if self.dense {
            let mut m = DMatrix::<f64>::zeros(dim, dim);
            for &(r, c, v) in &sys.triplets {
                let (r, c) = (r as usize, c as usize);
                m[(self.permute(r), self.permute(c))] += v * scale[r] * scale[c];
            }
            let lu = m.lu();
            let x = lu.solve(&DVector::from_column_slice(&b)).ok_or(())?;
            let mut out = vec![0.0; dim];
            for i in 0..dim {
                out[i] = x[self.permute(i)] * scale[i];
            }
            return Ok(out);
        }
        let mut band = BandedMatrix::zeros(dim, self.kl, self.kl);
        for &(r, c, v) in &sys.triplets {
            let (r, c) = (r as usize, c as usize);
            band.add(self.permute(r), self.permute(c), v * scale[r] * scale[c]);
        }
        let ipiv = band.factor().map_err(|_| ())?;
        band.solve(&ipiv, &mut b);
        let mut out = vec![0.0; dim];
        for i in 0..dim {
            out[i] = b[self.permute(i)] * scale[i];
        }
        Ok(out)
    }
}

/// Newton options; the tolerance is the max-norm of the combined nodal
/// residual of both equation blocks, unscaled.
#[derive(Clone, Copy, Debug)]
pub struct NewtonOpts {
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Default for NewtonOpts {
    fn default() -> Self {
        Self {
            tolerance: 1e-12,
            max_iters: 50,
        }
    }
}

/// Full Newton resolution of one time step. Returns the new positions, the
/// chemical potential and the number of linear solves performed.
#[allow(clippy::type_complexity)]
pub fn newton_solve<const D: usize>(
    state: &FlowState<D>,
    cache: &AssemblyCache<D>,
    solver: &SaddleSolver,
    opts: &NewtonOpts,
) -> Result<(Vec<SVector<f64, D>>, Vec<f64>, usize), SchemeError> {
    let surface = &state.surface;
    let n = surface.num_vertices();
    let mut x: Vec<SVector<f64, D>> = surface.vertices.clone();
    let mut mu = vec![0.0f64; n];
    let mut last_residual = f64::INFINITY;
    for iter in 0..=opts.max_iters {
        let sys = assemble_system(surface, cache, state.tau, &mu, &x);
        last_residual = sys.residual_norm();
        if last_residual <= opts.tolerance {
            return Ok((x, mu, iter));
        }
        if iter == opts.max_iters {
            break;
        }
        let delta = solver.solve(&sys).map_err(|_| SchemeError::SingularMatrix {
            step: state.step_index,
            time: state.time(),
        })?;
        for a in 0..n {
            mu[a] += delta[mu_idx(a)];
            for c in 0..D {
                x[a][c] += delta[x_idx(n, a, c)];
            }
        }
    }
    Err(SchemeError::NoConvergence {
        step: state.step_index,
        time: state.time(),
        residual: last_residual,
        iters: opts.max_iters,
    })
}

/// Advances the state by one step; on failure the state is left unchanged.
pub fn step<const D: usize>(
    state: &mut FlowState<D>,
    model: &AnisotropyModel<D>,
    kfield: &StabilizerField<D>,
    solver: &SaddleSolver,
    opts: &NewtonOpts,
) -> Result<(), SchemeError> {
    let cache = AssemblyCache::new(&state.surface, model, kfield)?;
    let (x, _mu, iters) = newton_solve(state, &cache, solver, opts)?;
    // degenerate-step policy: abort before accepting, no remeshing
    for (j, verts) in state.surface.simplices.iter().enumerate() {
        let pts: Simplex<D> = std::array::from_fn(|i| x[verts[i]]);
        let m = direction_vector(&pts).norm();
        if m <= degeneracy_threshold(&pts) {
            return Err(SchemeError::MeshCollapse {
                step: state.step_index,
                time: state.time(),
                simplex: j,
                measure: m,
            });
        }
    }
    state.surface.vertices = x;
    state.step_index += 1;
    let volume = state.surface.enclosed_volume()?;
    let energy = state.surface.total_energy(model)?;
    state.diagnostics.push(StepRecord {
        time: state.time(),
        volume,
        energy,
        newton_iters: iters,
    });
    Ok(())
}

/// Runs until `t_final = M τ` with `M = round(t_final / τ)`.
pub fn run<const D: usize>(
    mut state: FlowState<D>,
    model: &AnisotropyModel<D>,
    kfield: &StabilizerField<D>,
    t_final: f64,
    opts: &NewtonOpts,
) -> Result<FlowState<D>, SchemeError> {
    let steps = (t_final / state.tau).round() as usize;
    let solver = SaddleSolver::new(&state.surface);
    for _ in 0..steps {
        step(&mut state, model, kfield, &solver, opts)?;
    }
    Ok(state)
}

/// Both sides of the per-step dissipation identity at the converged
/// solution: `<G ∇X^{m+1}, ∇(X^{m+1} - X^m)> = -τ (∇μ, ∇μ)`.
pub fn dissipation_identity<const D: usize>(
    surface: &SimplexSurface<D>,
    cache: &AssemblyCache<D>,
    tau: f64,
    mu: &[f64],
    x_new: &[SVector<f64, D>],
) -> (f64, f64) {
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for j in 0..surface.num_simplices() {
        let verts = &surface.simplices[j];
        let old = &cache.old_pts[j];
        let new: Simplex<D> = std::array::from_fn(|i| x_new[verts[i]]);
        let jac_new = crate::mesh::surface_jacobian(old, &new);
        let jac_old = crate::mesh::surface_jacobian(old, old);
        let diff = jac_new - jac_old;
        let gjac = cache.g_mats[j] * jac_new;
        lhs += cache.areas[j] * gjac.dot(&diff);
        let mu_vals: [f64; D] = std::array::from_fn(|i| mu[verts[i]]);
        let gmu = grad_pwl(old, &mu_vals);
        rhs += cache.areas[j] * gmu.norm_squared();
    }
    (lhs, -tau * rhs)
}
