//! Experiment harness: initial-shape generators, time-interpolated meshes,
//! the manifold-distance error metric, and the convergence / conservation
//! protocols built on the flow driver.

use crate::anisotropy::AnisotropyModel;
use crate::mesh::{MeshError, SimplexSurface};
use crate::scheme::{self, FlowState, NewtonOpts, SchemeError, StepRecord};
use crate::stabilizer::{StabilizerError, StabilizerField};
use nalgebra::SVector;
use rayon::prelude::*;
use std::collections::HashMap;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("time {t} outside the recorded interval [{lo}, {hi}]")]
    OutOfRange { t: f64, lo: f64, hi: f64 },
    #[error("{failed} invariant check(s) failed")]
    CheckFailed { failed: usize },
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Stabilizer(#[from] StabilizerError),
}

/// Initial shapes. The cuboid lives in 3D, the rest are planar curves.
#[derive(Clone, Debug, PartialEq)]
pub enum ShapeSpec {
    Cuboid { a: f64, b: f64, c: f64 },
    Box2d { a: f64, b: f64 },
    Circle { r: f64 },
    Ellipse { rx: f64, ry: f64 },
}

impl ShapeSpec {
    pub fn dim(&self) -> usize {
        match self {
            ShapeSpec::Cuboid { .. } => 3,
            _ => 2,
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match *self {
            ShapeSpec::Cuboid { a, b, c } => vec![a, b, c],
            ShapeSpec::Box2d { a, b } => vec![a, b],
            ShapeSpec::Circle { r } => vec![r],
            ShapeSpec::Ellipse { rx, ry } => vec![rx, ry],
        }
    }
}

/// Paper time-step rule `τ = (2/25) h²`.
pub fn tau_for(h: f64) -> f64 {
    2.0 / 25.0 * h * h
}

fn positive(value: f64, what: &str) -> Result<f64, HarnessError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(HarnessError::InvalidShape(format!(
            "{what} must be positive, got {value}"
        )))
    }
}

/// Axis-aligned `a x b x c` cuboid triangulated face by face on uniform
/// grids; every edge (diagonals included) is at most `h` long. Outward
/// orientation, shared vertices deduplicated.
pub fn make_cuboid(a: f64, b: f64, c: f64, h: f64) -> Result<SimplexSurface<3>, HarnessError> {
    positive(a, "a")?;
    positive(b, "b")?;
    positive(c, "c")?;
    positive(h, "h")?;
    let dims = [a, b, c];
    let divs: [usize; 3] =
        std::array::from_fn(|ax| (dims[ax] * std::f64::consts::SQRT_2 / h).ceil().max(1.0) as usize);
    let mut vertices: Vec<SVector<f64, 3>> = Vec::new();
    let mut index: HashMap<(i64, i64, i64), usize> = HashMap::new();
    let mut simplices: Vec<[usize; 3]> = Vec::new();
    let mut vertex_at = |key: (i64, i64, i64)| -> usize {
        *index.entry(key).or_insert_with(|| {
            let p = SVector::<f64, 3>::new(
                key.0 as f64 * a / divs[0] as f64,
                key.1 as f64 * b / divs[1] as f64,
                key.2 as f64 * c / divs[2] as f64,
            );
            vertices.push(p);
            vertices.len() - 1
        })
    };
    // cyclic (u, v) axes per face axis keep e_u x e_v = +e_axis
    for axis in 0..3usize {
        let u_axis = (axis + 1) % 3;
        let v_axis = (axis + 2) % 3;
        for side in [0usize, 1] {
            let w_idx = if side == 1 { divs[axis] as i64 } else { 0 };
            for iu in 0..divs[u_axis] as i64 {
                for iv in 0..divs[v_axis] as i64 {
                    let key = |du: i64, dv: i64| {
                        let mut k = [0i64; 3];
                        k[axis] = w_idx;
                        k[u_axis] = iu + du;
                        k[v_axis] = iv + dv;
                        (k[0], k[1], k[2])
                    };
                    let p00 = vertex_at(key(0, 0));
                    let p10 = vertex_at(key(1, 0));
                    let p01 = vertex_at(key(0, 1));
                    let p11 = vertex_at(key(1, 1));
                    if side == 1 {
                        simplices.push([p00, p10, p11]);
                        simplices.push([p00, p11, p01]);
                    } else {
                        simplices.push([p00, p01, p11]);
                        simplices.push([p00, p11, p10]);
                    }
                }
            }
        }
    }
    let surface = SimplexSurface::new(vertices, simplices);
    surface.validate()?;
    Ok(surface)
}

fn close_polygon(vertices: Vec<SVector<f64, 2>>) -> Result<SimplexSurface<2>, HarnessError> {
    let n = vertices.len();
    let simplices = (0..n).map(|i| [i, (i + 1) % n]).collect();
    let surface = SimplexSurface::new(vertices, simplices);
    surface.validate()?;
    Ok(surface)
}

/// Axis-aligned `a x b` rectangle with per-side uniform subdivision of
/// segment length at most `h`, oriented for outward normals.
pub fn make_box2d(a: f64, b: f64, h: f64) -> Result<SimplexSurface<2>, HarnessError> {
    positive(a, "a")?;
    positive(b, "b")?;
    positive(h, "h")?;
    let nx = (a / h).ceil().max(1.0) as usize;
    let ny = (b / h).ceil().max(1.0) as usize;
    let mut v = Vec::with_capacity(2 * (nx + ny));
    for i in 0..ny {
        v.push(SVector::<f64, 2>::new(0.0, b * i as f64 / ny as f64));
    }
    for i in 0..nx {
        v.push(SVector::<f64, 2>::new(a * i as f64 / nx as f64, b));
    }
    for i in 0..ny {
        v.push(SVector::<f64, 2>::new(a, b - b * i as f64 / ny as f64));
    }
    for i in 0..nx {
        v.push(SVector::<f64, 2>::new(a - a * i as f64 / nx as f64, 0.0));
    }
    close_polygon(v)
}

/// Regular inscribed polygon of segment length at most `h`, oriented for
/// outward normals.
pub fn make_circle(r: f64, h: f64) -> Result<SimplexSurface<2>, HarnessError> {
    make_ellipse(r, r, h)
}

/// Inscribed polygon of an axis-aligned ellipse, uniform in parameter angle.
pub fn make_ellipse(rx: f64, ry: f64, h: f64) -> Result<SimplexSurface<2>, HarnessError> {
    positive(rx, "rx")?;
    positive(ry, "ry")?;
    positive(h, "h")?;
    let n = ((2.0 * std::f64::consts::PI * rx.max(ry)) / h).ceil().max(3.0) as usize;
    let v = (0..n)
        .map(|i| {
            let t = -2.0 * std::f64::consts::PI * i as f64 / n as f64;
            SVector::<f64, 2>::new(rx * t.cos(), ry * t.sin())
        })
        .collect();
    close_polygon(v)
}

/// Builds the surface for a shape spec; the const dimension must agree with
/// `shape.dim()`.
pub fn make_surface<const D: usize>(
    shape: &ShapeSpec,
    h: f64,
) -> Result<SimplexSurface<D>, HarnessError> {
    assert_eq!(D, shape.dim(), "shape dimension mismatch");
    // the per-shape constructors are dimension-concrete; transfer through
    // raw coordinate lists to stay generic here
    match shape {
        ShapeSpec::Cuboid { a, b, c } => {
            let s = make_cuboid(*a, *b, *c, h)?;
            Ok(SimplexSurface::new(
                s.vertices
                    .iter()
                    .map(|v| SVector::<f64, D>::from_fn(|i, _| v[i]))
                    .collect(),
                s.simplices.iter().map(|t| std::array::from_fn(|i| t[i])).collect(),
            ))
        }
        other => {
            let s = match other {
                ShapeSpec::Box2d { a, b } => make_box2d(*a, *b, h)?,
                ShapeSpec::Circle { r } => make_circle(*r, h)?,
                ShapeSpec::Ellipse { rx, ry } => make_ellipse(*rx, *ry, h)?,
                ShapeSpec::Cuboid { .. } => unreachable!(),
            };
            Ok(SimplexSurface::new(
                s.vertices
                    .iter()
                    .map(|v| SVector::<f64, D>::from_fn(|i, _| v[i]))
                    .collect(),
                s.simplices.iter().map(|t| std::array::from_fn(|i| t[i])).collect(),
            ))
        }
    }
}

/// Mesh snapshots of a run, for time interpolation.
pub struct MeshHistory<const D: usize> {
    pub times: Vec<f64>,
    pub meshes: Vec<SimplexSurface<D>>,
}

/// Runs the flow to `t_final = round(t_final/τ)·τ`, recording every
/// `keep_every`-th mesh (plus first and last).
pub fn run_recorded<const D: usize>(
    mut state: FlowState<D>,
    model: &AnisotropyModel<D>,
    kfield: &StabilizerField<D>,
    t_final: f64,
    newton: &NewtonOpts,
    keep_every: usize,
) -> Result<(FlowState<D>, MeshHistory<D>), HarnessError> {
    let keep = keep_every.max(1);
    let steps = (t_final / state.tau).round() as usize;
    let solver = scheme::SaddleSolver::new(&state.surface);
    let mut history = MeshHistory {
        times: vec![state.time()],
        meshes: vec![state.surface.clone()],
    };
    for s in 1..=steps {
        scheme::step(&mut state, model, kfield, &solver, newton)?;
        if s % keep == 0 || s == steps {
            history.times.push(state.time());
            history.meshes.push(state.surface.clone());
        }
    }
    Ok((state, history))
}

/// Vertexwise linear interpolation between the recorded meshes bracketing
/// `t`: weight `(t - t_m)/(t_{m+1} - t_m)` on the later mesh.
pub fn time_interpolated_surface<const D: usize>(
    history: &MeshHistory<D>,
    t: f64,
) -> Result<SimplexSurface<D>, HarnessError> {
    let times = &history.times;
    let (lo, hi) = (times[0], *times.last().unwrap());
    let slack = 1e-12 * (1.0 + hi.abs());
    if t < lo - slack || t > hi + slack {
        return Err(HarnessError::OutOfRange { t, lo, hi });
    }
    let t = t.clamp(lo, hi);
    let k = match times.binary_search_by(|probe| probe.partial_cmp(&t).unwrap()) {
        Ok(i) => return Ok(history.meshes[i].clone()),
        Err(i) => i - 1,
    };
    let lambda = (t - times[k]) / (times[k + 1] - times[k]);
    let a = &history.meshes[k];
    let b = &history.meshes[k + 1];
    Ok(SimplexSurface::new(
        a.vertices
            .iter()
            .zip(&b.vertices)
            .map(|(p, q)| p * (1.0 - lambda) + q * lambda)
            .collect(),
        a.simplices.clone(),
    ))
}

// ---------------------------------------------------------------------------
// manifold distance

/// Crossing parity intervals of one column through a closed polygon
/// (d = 2, ray along y) or surface (d = 3, ray along z).
fn column_intervals_2d<const D: usize>(
    surface: &SimplexSurface<D>,
    segs: &[usize],
    x: f64,
) -> Vec<(f64, f64)> {
    let mut crossings: Vec<(f64, i32)> = Vec::new();
    for &j in segs {
        let s = surface.simplex(j);
        let (xa, xb) = (s[0][0], s[1][0]);
        // half-open straddle test keeps shared vertices single-counted
        if (xa <= x) == (xb <= x) {
            continue;
        }
        let t = (x - xa) / (xb - xa);
        let y = s[0][1] + t * (s[1][1] - s[0][1]);
        crossings.push((y, if xb > xa { 1 } else { -1 }));
    }
    crossings.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut intervals = Vec::new();
    let mut winding = 0;
    let mut start = 0.0;
    for (y, w) in crossings {
        if winding == 0 {
            start = y;
        }
        winding += w;
        if winding == 0 {
            intervals.push((start, y));
        }
    }
    intervals
}

fn column_intervals_3d<const D: usize>(
    surface: &SimplexSurface<D>,
    tris: &[usize],
    x: f64,
    y: f64,
) -> Vec<(f64, f64)> {
    let mut zs: Vec<f64> = Vec::new();
    for &j in tris {
        let s = surface.simplex(j);
        let (ax, ay) = (s[0][0], s[0][1]);
        let (bx, by) = (s[1][0], s[1][1]);
        let (cx, cy) = (s[2][0], s[2][1]);
        let det = (bx - ax) * (cy - ay) - (cx - ax) * (by - ay);
        if det == 0.0 {
            continue; // vertical triangle: measure-zero projection
        }
        let w1 = ((x - ax) * (cy - ay) - (cx - ax) * (y - ay)) / det;
        let w2 = ((bx - ax) * (y - ay) - (x - ax) * (by - ay)) / det;
        let w0 = 1.0 - w1 - w2;
        // strict interior test; the jittered grid avoids edges
        if w0 <= 0.0 || w1 <= 0.0 || w2 <= 0.0 {
            continue;
        }
        zs.push(w0 * s[0][2] + w1 * s[1][2] + w2 * s[2][2]);
    }
    zs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut intervals = Vec::with_capacity(zs.len() / 2);
    let mut i = 0;
    while i + 1 < zs.len() {
        intervals.push((zs[i], zs[i + 1]));
        i += 2;
    }
    intervals
}

fn union_length(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let mut events: Vec<(f64, i32)> = Vec::with_capacity(2 * (a.len() + b.len()));
    for &(s, e) in a.iter().chain(b.iter()) {
        events.push((s, 1));
        events.push((e, -1));
    }
    // opens sort before closes at equal coordinates, so the merge (and its
    // rounding) is identical regardless of argument order
    events.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap().then(q.1.cmp(&p.1)));
    let mut depth = 0;
    let mut total = 0.0;
    let mut start = 0.0;
    for (t, d) in events {
        if depth == 0 && d > 0 {
            start = t;
        }
        depth += d;
        if depth == 0 {
            total += t - start;
        }
    }
    total
}

/// Offset fraction applied to the sampling lattice so columns avoid the
/// rational vertex coordinates of generated meshes.
const GRID_JITTER: f64 = 4.142135623730951e-4;

/// Manifold distance `2|Ω1 ∪ Ω2| - |Ω1| - |Ω2|`: the enclosed volumes are
/// exact; the union volume is sampled on a uniform grid of `resolution`
/// cells per transverse axis of the joint bounding box, with ray-casting
/// parity (winding number in 2D) resolved exactly along the cast axis.
pub fn manifold_distance<const D: usize>(
    s1: &SimplexSurface<D>,
    s2: &SimplexSurface<D>,
    resolution: usize,
) -> Result<f64, HarnessError> {
    let v1 = s1.enclosed_volume()?;
    let v2 = s2.enclosed_volume()?;
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for s in [s1, s2] {
        for v in &s.vertices {
            for c in 0..D {
                lo[c] = lo[c].min(v[c]);
                hi[c] = hi[c].max(v[c]);
            }
        }
    }
    let union = match D {
        2 => {
            let dx = (hi[0] - lo[0]) / resolution as f64;
            let buckets = |s: &SimplexSurface<D>| -> Vec<Vec<usize>> {
                let mut b = vec![Vec::new(); resolution];
                for j in 0..s.num_simplices() {
                    let seg = s.simplex(j);
                    let (x0, x1) = (seg[0][0].min(seg[1][0]), seg[0][0].max(seg[1][0]));
                    let i0 = (((x0 - lo[0]) / dx - 1.0).floor().max(0.0)) as usize;
                    let i1 = (((x1 - lo[0]) / dx + 1.0).ceil() as usize).min(resolution);
                    for cell in i0..i1 {
                        b[cell].push(j);
                    }
                }
                b
            };
            let (b1, b2) = (buckets(s1), buckets(s2));
            let lengths: Vec<f64> = (0..resolution)
                .into_par_iter()
                .map(|i| {
                    let x = lo[0] + (i as f64 + 0.5 + GRID_JITTER) * dx;
                    let i1 = column_intervals_2d(s1, &b1[i], x);
                    let i2 = column_intervals_2d(s2, &b2[i], x);
                    union_length(&i1, &i2)
                })
                .collect();
            lengths.iter().sum::<f64>() * dx
        }
        3 => {
            let dx = (hi[0] - lo[0]) / resolution as f64;
            let dy = (hi[1] - lo[1]) / resolution as f64;
            let buckets = |s: &SimplexSurface<D>| -> Vec<Vec<u32>> {
                let mut b = vec![Vec::new(); resolution * resolution];
                for j in 0..s.num_simplices() {
                    let t = s.simplex(j);
                    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
                    for p in &t {
                        x0 = x0.min(p[0]);
                        x1 = x1.max(p[0]);
                        y0 = y0.min(p[1]);
                        y1 = y1.max(p[1]);
                    }
                    let ix0 = (((x0 - lo[0]) / dx - 1.0).floor().max(0.0)) as usize;
                    let ix1 = ((((x1 - lo[0]) / dx) + 1.0).ceil() as usize).min(resolution);
                    let iy0 = (((y0 - lo[1]) / dy - 1.0).floor().max(0.0)) as usize;
                    let iy1 = ((((y1 - lo[1]) / dy) + 1.0).ceil() as usize).min(resolution);
                    for cx in ix0..ix1 {
                        for cy in iy0..iy1 {
                            b[cx * resolution + cy].push(j as u32);
                        }
                    }
                }
                b
            };
            let (b1, b2) = (buckets(s1), buckets(s2));
            let areas: Vec<f64> = (0..resolution * resolution)
                .into_par_iter()
                .map(|cell| {
                    let (cx, cy) = (cell / resolution, cell % resolution);
                    let x = lo[0] + (cx as f64 + 0.5 + GRID_JITTER) * dx;
                    let y = lo[1] + (cy as f64 + 0.5 + GRID_JITTER) * dy;
                    let t1: Vec<usize> = b1[cell].iter().map(|&v| v as usize).collect();
                    let t2: Vec<usize> = b2[cell].iter().map(|&v| v as usize).collect();
                    let i1 = column_intervals_3d(s1, &t1, x, y);
                    let i2 = column_intervals_3d(s2, &t2, x, y);
                    union_length(&i1, &i2)
                })
                .collect();
            areas.iter().sum::<f64>() * dx * dy
        }
        _ => unreachable!(),
    };
    Ok(2.0 * union - (v1 + v2))
}

/// Default union-sampling resolutions per dimension.
pub fn default_resolution(dim: usize) -> usize {
    if dim == 2 {
        512
    } else {
        192
    }
}

// ---------------------------------------------------------------------------
// experiment protocols

#[derive(Clone, Copy, Debug)]
pub struct ConvergenceRow {
    pub h: f64,
    pub tau: f64,
    pub error: f64,
    /// `log2(e_prev/e_this) / log2(h_prev/h_this)`; `None` on the first row.
    pub order: Option<f64>,
}

/// Refinement study: runs each level to `t_final`, measures the manifold
/// distance against the finest ("reference") run at matching time, and
/// reports observed orders between successive levels.
#[allow(clippy::too_many_arguments)]
pub fn convergence_study<const D: usize>(
    shape: &ShapeSpec,
    model: &AnisotropyModel<D>,
    kfield: &StabilizerField<D>,
    levels: &[f64],
    h_ref: f64,
    t_final: f64,
    resolution: usize,
    keep_every: usize,
    newton: &NewtonOpts,
) -> Result<Vec<ConvergenceRow>, HarnessError> {
    let run_level = |h: f64| -> Result<SimplexSurface<D>, HarnessError> {
        let surface = make_surface::<D>(shape, h)?;
        let state = FlowState::new(surface, tau_for(h), model).map_err(HarnessError::from)?;
        let (state, history) = run_recorded(state, model, kfield, t_final, newton, keep_every)?;
        let _ = state;
        time_interpolated_surface(&history, t_final.min(*history.times.last().unwrap()))
    };
    let reference = run_level(h_ref)?;
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(levels.len());
    for &h in levels {
        let final_mesh = run_level(h)?;
        let error = manifold_distance(&final_mesh, &reference, resolution)?;
        let order = rows.last().map(|prev: &ConvergenceRow| {
            (prev.error / error).log2() / (prev.h / h).log2()
        });
        rows.push(ConvergenceRow {
            h,
            tau: tau_for(h),
            error,
            order,
        });
    }
    Ok(rows)
}

/// Per-step normalized diagnostics `(t, V, W, ΔV/V0, W/W0, iters)`.
pub fn conservation_series(diagnostics: &[StepRecord]) -> Vec<(f64, f64, f64, f64, f64, usize)> {
    let v0 = diagnostics[0].volume;
    let w0 = diagnostics[0].energy;
    diagnostics
        .iter()
        .map(|r| {
            (
                r.time,
                r.volume,
                r.energy,
                (r.volume - v0) / v0,
                r.energy / w0,
                r.newton_iters,
            )
        })
        .collect()
}
