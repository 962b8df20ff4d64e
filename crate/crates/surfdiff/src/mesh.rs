//! Oriented simplicial curves and surfaces.
//!
//! A closed curve (d = 2) is a set of oriented segments, a closed surface
//! (d = 3) a set of oriented triangles. Each simplex `σ = [q_1, ..., q_d]`
//! carries a direction vector `J{σ}` (the 90°-rotated edge in 2D, the cross
//! product of the edge vectors in 3D) from which area, outward normal,
//! enclosed volume and total energy follow. All reductions run in a fixed
//! simplex-then-corner order so single-threaded runs are bitwise stable.

use crate::anisotropy::AnisotropyModel;
use nalgebra::{SMatrix, SVector};
use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum MeshError {
    #[error("degenerate simplex: direction vector measure {measure:e} below threshold")]
    DegenerateSimplex { measure: f64 },
    #[error("surface is not closed: {0}")]
    NotClosed(String),
    #[error("non-positive enclosed volume {0}; orientation must be outward")]
    NonPositiveVolume(f64),
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// One oriented (d-1)-simplex given by its d corner positions.
pub type Simplex<const D: usize> = [SVector<f64, D>; D];

/// Direction vector `J{σ}`: for d = 2, `-(q_2 - q_1)^⊥` with
/// `(u_1, u_2)^⊥ = (u_2, -u_1)`; for d = 3 the cross product of the two
/// edge vectors. A zero vector is a valid output; degeneracy is the
/// caller's check.
pub fn direction_vector<const D: usize>(points: &Simplex<D>) -> SVector<f64, D> {
    match D {
        2 => {
            let u = points[1] - points[0];
            let c = [-u[1], u[0]];
            SVector::from_fn(|i, _| c[i])
        }
        3 => {
            let u = points[1] - points[0];
            let v = points[2] - points[0];
            let c = [
                u[1] * v[2] - u[2] * v[1],
                u[2] * v[0] - u[0] * v[2],
                u[0] * v[1] - u[1] * v[0],
            ];
            SVector::from_fn(|i, _| c[i])
        }
        _ => unreachable!("only d = 2, 3 are supported"),
    }
}

/// Degeneracy threshold `1e-14 · (max edge length)^{d-1}` for one simplex.
pub fn degeneracy_threshold<const D: usize>(points: &Simplex<D>) -> f64 {
    let mut max_edge: f64 = 0.0;
    for a in 0..D {
        for b in (a + 1)..D {
            max_edge = max_edge.max((points[a] - points[b]).norm());
        }
    }
    1e-14 * max_edge.powi(D as i32 - 1)
}

/// Area `|σ| = |J|/(d-1)` and unit outward normal `J/|J|`.
pub fn area_and_normal<const D: usize>(
    points: &Simplex<D>,
) -> Result<(f64, SVector<f64, D>), MeshError> {
    let j = direction_vector(points);
    let m = j.norm();
    if m <= degeneracy_threshold(points) {
        return Err(MeshError::DegenerateSimplex { measure: m });
    }
    Ok((m / (D - 1) as f64, j / m))
}

/// Gradient of the linear interpolant of corner values `f` on `σ`,
/// tangent to the simplex.
pub fn grad_pwl<const D: usize>(points: &Simplex<D>, f: &[f64; D]) -> SVector<f64, D> {
    match D {
        2 => {
            let u = points[1] - points[0];
            let len2 = u.norm_squared();
            u * ((f[1] - f[0]) / len2)
        }
        3 => {
            // w = f_1 (q_2 - q_3) + f_2 (q_3 - q_1) + f_3 (q_1 - q_2), then
            // w x n / (2|σ|) with n = J/|J| and 2|σ| = |J|
            let w = points[0] * (f[2] - f[1]) + points[1] * (f[0] - f[2]) + points[2] * (f[1] - f[0]);
            let j = direction_vector(points);
            let s = [
                w[1] * j[2] - w[2] * j[1],
                w[2] * j[0] - w[0] * j[2],
                w[0] * j[1] - w[1] * j[0],
            ];
            SVector::from_fn(|i, _| s[i] / j.norm_squared())
        }
        _ => unreachable!(),
    }
}

/// Rows are the `grad_pwl` of each component of the corner vectors `f`.
/// For the identity map it equals `I - n nᵀ`.
pub fn surface_jacobian<const D: usize>(
    points: &Simplex<D>,
    f: &[SVector<f64, D>; D],
) -> SMatrix<f64, D, D> {
    let mut m = SMatrix::<f64, D, D>::zeros();
    for comp in 0..D {
        let vals = std::array::from_fn(|i| f[i][comp]);
        let g = grad_pwl(points, &vals);
        for c in 0..D {
            m[(comp, c)] = g[c];
        }
    }
    m
}

/// Oriented simplicial representation of a closed curve/surface.
#[derive(Clone, Debug)]
pub struct SimplexSurface<const D: usize> {
    pub vertices: Vec<SVector<f64, D>>,
    pub simplices: Vec<[usize; D]>,
}

impl<const D: usize> SimplexSurface<D> {
    pub fn new(vertices: Vec<SVector<f64, D>>, simplices: Vec<[usize; D]>) -> Self {
        Self { vertices, simplices }
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_simplices(&self) -> usize {
        self.simplices.len()
    }

    /// Corner positions of simplex `j`.
    #[inline]
    pub fn simplex(&self, j: usize) -> Simplex<D> {
        std::array::from_fn(|i| self.vertices[self.simplices[j][i]])
    }

    pub fn max_edge_length(&self) -> f64 {
        let mut h: f64 = 0.0;
        for j in 0..self.simplices.len() {
            let pts = self.simplex(j);
            for a in 0..D {
                for b in (a + 1)..D {
                    h = h.max((pts[a] - pts[b]).norm());
                }
            }
        }
        h
    }

    /// Enclosed volume `(1/d²) Σ_j Σ_i |σ_j| q_{j_i} · n_j`.
    pub fn enclosed_volume(&self) -> Result<f64, MeshError> {
        let mut v = 0.0;
        for j in 0..self.simplices.len() {
            let pts = self.simplex(j);
            let (area, n) = area_and_normal(&pts)?;
            let mut corner_sum = 0.0;
            for p in &pts {
                corner_sum += p.dot(&n);
            }
            v += area * corner_sum;
        }
        Ok(v / (D * D) as f64)
    }

    /// Total surface energy `Σ_j |σ_j| γ(n_j)`.
    pub fn total_energy(&self, model: &AnisotropyModel<D>) -> Result<f64, MeshError> {
        let mut w = 0.0;
        for j in 0..self.simplices.len() {
            let (area, n) = area_and_normal(&self.simplex(j))?;
            w += area * model.gamma_unit(&n);
        }
        Ok(w)
    }

    /// Mass-lumped inner product of two per-corner fields:
    /// `(1/d) Σ_j Σ_i |σ_j| u(j, i) v(j, i)`. Nodal piecewise-linear fields
    /// pass `|_, i| nodal[self.simplices[j][i]]`-style closures.
    pub fn mass_lumped_inner<U, V>(&self, u: U, v: V) -> f64
    where
        U: Fn(usize, usize) -> f64,
        V: Fn(usize, usize) -> f64,
    {
        let mut acc = 0.0;
        for j in 0..self.simplices.len() {
            let area = direction_vector(&self.simplex(j)).norm() / (D - 1) as f64;
            for i in 0..D {
                acc += area * u(j, i) * v(j, i);
            }
        }
        acc / D as f64
    }

    /// Closedness, nondegeneracy and outward-orientation checks.
    pub fn validate(&self) -> Result<(), MeshError> {
        let n = self.vertices.len();
        for (j, s) in self.simplices.iter().enumerate() {
            for &v in s {
                if v >= n {
                    return Err(MeshError::NotClosed(format!(
                        "simplex {j} references vertex {v} out of range {n}"
                    )));
                }
            }
        }
        match D {
            2 => {
                let mut outdeg = vec![0usize; n];
                let mut indeg = vec![0usize; n];
                for s in &self.simplices {
                    outdeg[s[0]] += 1;
                    indeg[s[1]] += 1;
                }
                for v in 0..n {
                    if outdeg[v] != 1 || indeg[v] != 1 {
                        return Err(MeshError::NotClosed(format!(
                            "vertex {v} has {} outgoing / {} incoming segments, expected 1/1",
                            outdeg[v], indeg[v]
                        )));
                    }
                }
            }
            3 => {
                let mut edges: HashMap<(usize, usize), i32> = HashMap::new();
                for s in &self.simplices {
                    for e in 0..3 {
                        let a = s[e];
                        let b = s[(e + 1) % 3];
                        *edges.entry((a, b)).or_insert(0) += 1;
                    }
                }
                for (&(a, b), &cnt) in &edges {
                    let rev = edges.get(&(b, a)).copied().unwrap_or(0);
                    if cnt != 1 || rev != 1 {
                        return Err(MeshError::NotClosed(format!(
                            "edge ({a}, {b}) traversed {cnt} times, reverse {rev}; expected 1/1"
                        )));
                    }
                }
            }
            _ => unreachable!(),
        }
        for (j, _) in self.simplices.iter().enumerate() {
            let pts = self.simplex(j);
            area_and_normal(&pts).map_err(|_| MeshError::DegenerateSimplex {
                measure: direction_vector(&pts).norm(),
            })?;
        }
        let vol = self.enclosed_volume()?;
        if vol <= 0.0 {
            return Err(MeshError::NonPositiveVolume(vol));
        }
        Ok(())
    }
}

impl SimplexSurface<3> {
    /// Writes the OFF text format: `OFF`, counts, vertex lines, `3 i j k`
    /// face lines. Floats carry 17 significant digits.
    pub fn write_off<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "OFF")?;
        writeln!(w, "{} {} 0", self.vertices.len(), self.simplices.len())?;
        for v in &self.vertices {
            writeln!(w, "{:.16e} {:.16e} {:.16e}", v[0], v[1], v[2])?;
        }
        for s in &self.simplices {
            writeln!(w, "3 {} {} {}", s[0], s[1], s[2])?;
        }
        Ok(())
    }

    pub fn save_off<P: AsRef<Path>>(&self, path: P) -> std::io::Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_off(std::io::BufWriter::new(f))
    }

    /// Loads and validates an OFF file.
    pub fn load_off<P: AsRef<Path>>(path: P) -> Result<Self, MeshError> {
        let name = path.as_ref().display().to_string();
        let file = std::fs::File::open(path.as_ref())?;
        let mut lines = std::io::BufReader::new(file)
            .lines()
            .enumerate()
            .filter_map(|(i, l)| match l {
                Ok(s) => {
                    let t = s.trim().to_string();
                    if t.is_empty() || t.starts_with('#') {
                        None
                    } else {
                        Some(Ok((i + 1, t)))
                    }
                }
                Err(e) => Some(Err(e)),
            });
        let perr = |line: usize, msg: String| MeshError::Parse {
            path: name.clone(),
            line,
            msg,
        };
        let (l0, header) = lines
            .next()
            .transpose()?
            .ok_or_else(|| perr(0, "empty file".into()))?;
        if header != "OFF" {
            return Err(perr(l0, format!("expected OFF header, found {header:?}")));
        }
        let (l1, counts) = lines
            .next()
            .transpose()?
            .ok_or_else(|| perr(l0, "missing counts line".into()))?;
        let mut it = counts.split_whitespace();
        let nv: usize = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| perr(l1, "bad vertex count".into()))?;
        let nf: usize = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| perr(l1, "bad face count".into()))?;
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let (ln, s) = lines
                .next()
                .transpose()?
                .ok_or_else(|| perr(l1, "unexpected end of file in vertex block".into()))?;
            let nums: Vec<f64> = s
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| perr(ln, format!("bad vertex line: {e}")))?;
            if nums.len() != 3 {
                return Err(perr(ln, format!("expected 3 coordinates, got {}", nums.len())));
            }
            vertices.push(SVector::from_fn(|i, _| nums[i]));
        }
        let mut simplices = Vec::with_capacity(nf);
        for _ in 0..nf {
            let (ln, s) = lines
                .next()
                .transpose()?
                .ok_or_else(|| perr(l1, "unexpected end of file in face block".into()))?;
            let toks: Vec<&str> = s.split_whitespace().collect();
            if toks.len() != 4 || toks[0] != "3" {
                return Err(perr(ln, "expected face line \"3 i j k\"".into()));
            }
            let mut idx = [0usize; 3];
            for (k, t) in toks[1..].iter().enumerate() {
                idx[k] = t
                    .parse()
                    .map_err(|e| perr(ln, format!("bad face index: {e}")))?;
            }
            simplices.push(idx);
        }
        let surf = Self::new(vertices, simplices);
        surf.validate()?;
        Ok(surf)
    }
}

impl SimplexSurface<2> {
    /// Writes the polyline text format: `POLYLINE2D N` then `x y` lines;
    /// segments are implied cyclically `i -> i+1 mod N`.
    pub fn write_poly2d<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        // emit vertices in cyclic order regardless of internal numbering
        let order = self.cyclic_order();
        writeln!(w, "POLYLINE2D {}", self.vertices.len())?;
        for &v in &order {
            writeln!(w, "{:.16e} {:.16e}", self.vertices[v][0], self.vertices[v][1])?;
        }
        Ok(())
    }

    pub fn save_poly2d<P: AsRef<Path>>(&self, path: P) -> std::io::Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_poly2d(std::io::BufWriter::new(f))
    }

    fn cyclic_order(&self) -> Vec<usize> {
        let mut next = vec![usize::MAX; self.vertices.len()];
        for s in &self.simplices {
            next[s[0]] = s[1];
        }
        let mut order = Vec::with_capacity(self.vertices.len());
        let mut v = self.simplices[0][0];
        for _ in 0..self.vertices.len() {
            order.push(v);
            v = next[v];
        }
        order
    }

    /// Loads and validates a POLYLINE2D file.
    pub fn load_poly2d<P: AsRef<Path>>(path: P) -> Result<Self, MeshError> {
        let name = path.as_ref().display().to_string();
        let text = std::fs::read_to_string(path.as_ref())?;
        let perr = |line: usize, msg: String| MeshError::Parse {
            path: name.clone(),
            line,
            msg,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (l0, header) = lines.next().ok_or_else(|| perr(0, "empty file".into()))?;
        let mut it = header.split_whitespace();
        if it.next() != Some("POLYLINE2D") {
            return Err(perr(l0, "expected POLYLINE2D header".into()));
        }
        let n: usize = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| perr(l0, "bad vertex count".into()))?;
        if n < 3 {
            return Err(perr(l0, format!("need at least 3 vertices, got {n}")));
        }
        let mut vertices = Vec::with_capacity(n);
        for _ in 0..n {
            let (ln, s) = lines
                .next()
                .ok_or_else(|| perr(l0, "unexpected end of file".into()))?;
            let nums: Vec<f64> = s
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| perr(ln, format!("bad vertex line: {e}")))?;
            if nums.len() != 2 {
                return Err(perr(ln, format!("expected 2 coordinates, got {}", nums.len())));
            }
            vertices.push(SVector::from_fn(|i, _| nums[i]));
        }
        let simplices = (0..n).map(|i| [i, (i + 1) % n]).collect();
        let surf = Self::new(vertices, simplices);
        surf.validate()?;
        Ok(surf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use nalgebra::{Vector2, Vector3};

    fn v2(x: f64, y: f64) -> Vector2<f64> {
        Vector2::new(x, y)
    }
    fn v3(x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new(x, y, z)
    }

    /// Unit square with positive enclosed volume under the J = -(u)^perp
    /// convention (interior on the right of the traversal).
    pub(crate) fn unit_square() -> SimplexSurface<2> {
        SimplexSurface::new(
            vec![v2(0.0, 0.0), v2(0.0, 1.0), v2(1.0, 1.0), v2(1.0, 0.0)],
            vec![[0, 1], [1, 2], [2, 3], [3, 0]],
        )
    }

    /// Axis-aligned cuboid [0,a]x[0,b]x[0,c] as 12 outward triangles.
    pub(crate) fn cuboid_12(a: f64, b: f64, c: f64) -> SimplexSurface<3> {
        let verts = vec![
            v3(0.0, 0.0, 0.0),
            v3(a, 0.0, 0.0),
            v3(a, b, 0.0),
            v3(0.0, b, 0.0),
            v3(0.0, 0.0, c),
            v3(a, 0.0, c),
            v3(a, b, c),
            v3(0.0, b, c),
        ];
        let quads: [[usize; 4]; 6] = [
            [0, 3, 2, 1], // bottom, outward -z
            [4, 5, 6, 7], // top, outward +z
            [0, 1, 5, 4], // front y=0, outward -y
            [2, 3, 7, 6], // back y=b, outward +y
            [1, 2, 6, 5], // right x=a, outward +x
            [3, 0, 4, 7], // left x=0, outward -x
        ];
        let mut tris = Vec::new();
        for q in quads {
            tris.push([q[0], q[1], q[2]]);
            tris.push([q[0], q[2], q[3]]);
        }
        SimplexSurface::new(verts, tris)
    }

    #[test]
    fn direction_vector_formulas() {
        let seg = [v2(0.0, 0.0), v2(1.0, 0.0)];
        assert_eq!(direction_vector(&seg), v2(0.0, 1.0));
        let tri = [v3(0.0, 0.0, 0.0), v3(1.0, 0.0, 0.0), v3(0.0, 1.0, 0.0)];
        assert_eq!(direction_vector(&tri), v3(0.0, 0.0, 1.0));
        let tri2 = [v3(0.0, 0.0, 0.0), v3(2.0, 0.0, 0.0), v3(0.0, 2.0, 0.0)];
        assert_eq!(direction_vector(&tri2), v3(0.0, 0.0, 4.0));
    }

    #[test]
    fn area_and_normal_values() {
        let tri = [v3(0.0, 0.0, 0.0), v3(1.0, 0.0, 0.0), v3(0.0, 1.0, 0.0)];
        let (area, n) = area_and_normal(&tri).unwrap();
        assert_eq!(area, 0.5);
        assert_eq!(n, v3(0.0, 0.0, 1.0));
        let seg = [v2(0.0, 0.0), v2(3.0, 0.0)];
        let (len, n) = area_and_normal(&seg).unwrap();
        assert_eq!(len, 3.0);
        assert_eq!(n, v2(0.0, 1.0));
        let collinear = [v3(0.0, 0.0, 0.0), v3(1.0, 0.0, 0.0), v3(2.0, 0.0, 0.0)];
        assert!(matches!(
            area_and_normal(&collinear),
            Err(MeshError::DegenerateSimplex { .. })
        ));
        // consistency: area equals |J|/(d-1) to rounding
        let mut r = SplitMix64::new(2);
        for _ in 0..100 {
            let pts: Simplex<3> = std::array::from_fn(|_| {
                v3(r.uniform(-1.0, 1.0), r.uniform(-1.0, 1.0), r.uniform(-1.0, 1.0))
            });
            if let Ok((area, _)) = area_and_normal(&pts) {
                assert_eq!(area, direction_vector(&pts).norm() / 2.0);
            }
        }
    }

    #[test]
    fn enclosed_volume_square_sign_and_cube() {
        let sq = unit_square();
        assert_eq!(sq.enclosed_volume().unwrap(), 1.0);
        // reversing every segment flips the sign
        let rev = SimplexSurface::new(
            sq.vertices.clone(),
            sq.simplices.iter().map(|s| [s[1], s[0]]).collect(),
        );
        assert_eq!(rev.enclosed_volume().unwrap(), -1.0);
        let cube = cuboid_12(1.0, 1.0, 1.0);
        cube.validate().unwrap();
        assert!((cube.enclosed_volume().unwrap() - 1.0).abs() < 1e-15);
        let box213 = cuboid_12(2.0, 1.0, 3.0);
        assert!((box213.enclosed_volume().unwrap() - 6.0).abs() < 1e-13);
    }

    #[test]
    fn total_energy_values() {
        let sq = unit_square();
        let iso2 = AnisotropyModel::<2>::Isotropic;
        assert_eq!(sq.total_energy(&iso2).unwrap(), 4.0);
        let cube = cuboid_12(1.0, 1.0, 1.0);
        let iso3 = AnisotropyModel::<3>::Isotropic;
        assert!((cube.total_energy(&iso3).unwrap() - 6.0).abs() < 1e-14);
        // cubic case: opposite faces pair to gamma = 9/8 and 7/8
        let case1 = AnisotropyModel::<3>::CubicPolynomial { beta: 0.125 };
        assert!((cube.total_energy(&case1).unwrap() - 6.0).abs() < 1e-14);
    }

    #[test]
    fn volume_translation_and_scaling() {
        let mut r = SplitMix64::new(4);
        let cube = cuboid_12(2.0, 1.0, 1.0);
        let v0 = cube.enclosed_volume().unwrap();
        for _ in 0..20 {
            let t = v3(r.uniform(-5.0, 5.0), r.uniform(-5.0, 5.0), r.uniform(-5.0, 5.0));
            let s = r.uniform(0.1, 3.0);
            let translated = SimplexSurface::new(
                cube.vertices.iter().map(|v| v + t).collect(),
                cube.simplices.clone(),
            );
            assert!((translated.enclosed_volume().unwrap() - v0).abs() < 1e-12 * 10.0);
            let scaled = SimplexSurface::new(
                cube.vertices.iter().map(|v| v * s).collect(),
                cube.simplices.clone(),
            );
            let ratio = scaled.enclosed_volume().unwrap() / v0;
            assert!((ratio - s.powi(3)).abs() < 1e-12 * s.powi(3));
        }
    }

    #[test]
    fn mass_lumped_values_and_bilinearity() {
        let sq = unit_square();
        assert_eq!(sq.mass_lumped_inner(|_, _| 1.0, |_, _| 1.0), 4.0);
        let cube = cuboid_12(1.0, 1.0, 1.0);
        assert!((cube.mass_lumped_inner(|_, _| 1.0, |_, _| 1.0) - 6.0).abs() < 1e-14);
        // u = x-coordinate on the unit square: lumped rule is the trapezoid
        // rule per edge, exact for a linear integrand
        let xval = |j: usize, i: usize| sq.vertices[sq.simplices[j][i]][0];
        assert_eq!(sq.mass_lumped_inner(xval, |_, _| 1.0), 2.0);
        // symmetry and bilinearity on random per-corner data
        let mut r = SplitMix64::new(8);
        let j = sq.num_simplices();
        let a: Vec<[f64; 2]> = (0..j).map(|_| [r.uniform(-1.0, 1.0), r.uniform(-1.0, 1.0)]).collect();
        let b: Vec<[f64; 2]> = (0..j).map(|_| [r.uniform(-1.0, 1.0), r.uniform(-1.0, 1.0)]).collect();
        let c: Vec<[f64; 2]> = (0..j).map(|_| [r.uniform(-1.0, 1.0), r.uniform(-1.0, 1.0)]).collect();
        let (al, be) = (r.uniform(-2.0, 2.0), r.uniform(-2.0, 2.0));
        let fa = |j: usize, i: usize| a[j][i];
        let fb = |j: usize, i: usize| b[j][i];
        let fc = |j: usize, i: usize| c[j][i];
        let sym = sq.mass_lumped_inner(fa, fb) - sq.mass_lumped_inner(fb, fa);
        assert!(sym.abs() < 1e-15);
        let lin = sq.mass_lumped_inner(|j, i| al * fa(j, i) + be * fb(j, i), fc)
            - (al * sq.mass_lumped_inner(fa, fc) + be * sq.mass_lumped_inner(fb, fc));
        assert!(lin.abs() < 1e-14);
    }

    #[test]
    fn grad_pwl_examples_and_tangency() {
        let seg = [v2(0.0, 0.0), v2(2.0, 0.0)];
        assert_eq!(grad_pwl(&seg, &[0.0, 2.0]), v2(1.0, 0.0));
        let tri = [v3(0.0, 0.0, 0.0), v3(1.0, 0.0, 0.0), v3(0.0, 1.0, 0.0)];
        assert!((grad_pwl(&tri, &[0.0, 1.0, 0.0]) - v3(1.0, 0.0, 0.0)).norm() < 1e-15);
        assert_eq!(grad_pwl(&tri, &[3.5, 3.5, 3.5]), v3(0.0, 0.0, 0.0));
        let mut r = SplitMix64::new(6);
        for _ in 0..500 {
            let pts: Simplex<3> = std::array::from_fn(|_| {
                v3(r.uniform(-1.0, 1.0), r.uniform(-1.0, 1.0), r.uniform(-1.0, 1.0))
            });
            if let Ok((_, n)) = area_and_normal(&pts) {
                let f = [r.uniform(-1.0, 1.0), r.uniform(-1.0, 1.0), r.uniform(-1.0, 1.0)];
                assert!(grad_pwl(&pts, &f).dot(&n).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn surface_jacobian_identity_map() {
        let tri = [v3(0.0, 0.0, 0.0), v3(1.0, 0.0, 0.0), v3(0.0, 1.0, 0.0)];
        let jac = surface_jacobian(&tri, &tri.clone());
        let expect = SMatrix::<f64, 3, 3>::from_diagonal(&v3(1.0, 1.0, 0.0));
        assert!((jac - expect).amax() < 1e-15);
        let seg = [v2(0.0, 0.0), v2(1.0, 0.0)];
        let jac2 = surface_jacobian(&seg, &seg.clone());
        assert!((jac2 - SMatrix::<f64, 2, 2>::from_diagonal(&v2(1.0, 0.0))).amax() < 1e-15);
        // constant map has zero Jacobian
        let cst = [v3(0.3, 0.4, 0.5); 3];
        assert!(surface_jacobian(&tri, &cst).amax() < 1e-15);
        // random simplices: jacobian of id equals I - n n^T
        let mut r = SplitMix64::new(10);
        for _ in 0..500 {
            let pts: Simplex<3> = std::array::from_fn(|_| {
                v3(r.uniform(-1.0, 1.0), r.uniform(-1.0, 1.0), r.uniform(-1.0, 1.0))
            });
            if let Ok((_, n)) = area_and_normal(&pts) {
                let jac = surface_jacobian(&pts, &pts.clone());
                let expect = SMatrix::<f64, 3, 3>::identity() - n * n.transpose();
                assert!((jac - expect).amax() < 1e-13);
            }
        }
    }

    #[test]
    fn validation_rejects_open_and_inverted_meshes() {
        let mut open = cuboid_12(1.0, 1.0, 1.0);
        open.simplices.pop();
        assert!(matches!(open.validate(), Err(MeshError::NotClosed(_))));
        let sq = unit_square();
        let rev = SimplexSurface::new(
            sq.vertices.clone(),
            sq.simplices.iter().map(|s| [s[1], s[0]]).collect(),
        );
        assert!(matches!(rev.validate(), Err(MeshError::NonPositiveVolume(_))));
        assert!(sq.validate().is_ok());
    }

    #[test]
    fn off_and_poly2d_roundtrip() {
        let dir = std::env::temp_dir().join("surfdiff_mesh_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let cube = cuboid_12(2.0, 1.0, 1.0);
        let p3 = dir.join("cube.off");
        cube.save_off(&p3).unwrap();
        let back = SimplexSurface::<3>::load_off(&p3).unwrap();
        assert_eq!(back.num_vertices(), cube.num_vertices());
        assert_eq!(back.simplices, cube.simplices);
        assert!((back.enclosed_volume().unwrap() - 2.0).abs() < 1e-14);
        let sq = unit_square();
        let p2 = dir.join("square.poly2d");
        sq.save_poly2d(&p2).unwrap();
        let back = SimplexSurface::<2>::load_poly2d(&p2).unwrap();
        assert_eq!(back.num_vertices(), 4);
        assert!((back.enclosed_volume().unwrap() - 1.0).abs() < 1e-15);
        // a reversed polygon must be rejected at load
        let mut rev_file = String::from("POLYLINE2D 4\n");
        for v in [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]] {
            rev_file.push_str(&format!("{} {}\n", v[0], v[1]));
        }
        let pbad = dir.join("reversed.poly2d");
        std::fs::write(&pbad, rev_file).unwrap();
        assert!(matches!(
            SimplexSurface::<2>::load_poly2d(&pbad),
            Err(MeshError::NonPositiveVolume(_))
        ));
    }
}
