//! Dense-free linear algebra kernels: banded LU with partial pivoting,
//! reverse Cuthill-McKee ordering, and a small-matrix symmetric eigensolver.
//!
//! The saddle systems assembled by the scheme are sparse with mesh-graph
//! structure; after RCM reordering and per-vertex interleaving they are
//! narrow-banded, so a band factorization in the style of LAPACK `dgbtrf`
//! is the whole solver. Partial pivoting keeps at most `kl` extra
//! superdiagonals of fill, which the storage accounts for up front.

/// Banded matrix in LAPACK band storage with room for pivoting fill.
///
/// Entry (i, j) with |i - j| within the band lives at
/// `ab[j * ldab + (kl + ku + i - j)]`; the top `kl` rows of each column are
/// fill space for row interchanges.
pub struct BandedMatrix {
    pub n: usize,
    pub kl: usize,
    pub ku: usize,
    ldab: usize,
    ab: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
#[error("singular matrix: zero pivot at column {col}")]
pub struct SingularBand {
    pub col: usize,
}

impl BandedMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let ldab = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            ldab,
            ab: vec![0.0; ldab * n],
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i + self.ku >= j && j + self.kl >= i, "entry outside band");
        j * self.ldab + (self.kl + self.ku + i - j)
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.ab[k] += v;
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i + self.ku < j || j + self.kl < i {
            return 0.0;
        }
        self.ab[self.idx(i, j)]
    }

    pub fn reset(&mut self) {
        self.ab.fill(0.0);
    }

    /// In-place LU factorization with partial pivoting (`dgbtf2` layout).
    /// Returns the pivot row for each column.
    pub fn factor(&mut self) -> Result<Vec<usize>, SingularBand> {
        let (n, kl, ku, ldab) = (self.n, self.kl, self.ku, self.ldab);
        let kv = kl + ku;
        let ab = &mut self.ab;
        let mut ipiv = vec![0usize; n];
        let mut scratch = vec![0.0f64; kl.max(1)];
        // ju tracks the last column touched by interchanges so far
        let mut ju = 0usize;
        for j in 0..n {
            let km = kl.min(n - 1 - j); // subdiagonal entries in column j
            // pivot search on |entries| at rows j..j+km
            let col = j * ldab;
            let mut jp = 0usize;
            let mut mx = ab[col + kv].abs();
            for p in 1..=km {
                let v = ab[col + kv + p].abs();
                if v > mx {
                    mx = v;
                    jp = p;
                }
            }
            ipiv[j] = j + jp;
            if mx == 0.0 {
                return Err(SingularBand { col: j });
            }
            ju = ju.max((j + ku + jp).min(n - 1));
            if jp != 0 {
                // swap rows j and j+jp across columns j..=ju
                for jj in j..=ju {
                    let a = jj * ldab + (kv + j + jp - jj);
                    let b = jj * ldab + (kv + j - jj);
                    ab.swap(a, b);
                }
            }
            if km > 0 {
                let piv = ab[col + kv];
                for p in 0..km {
                    ab[col + kv + 1 + p] /= piv;
                }
                scratch[..km].copy_from_slice(&ab[col + kv + 1..col + kv + 1 + km]);
                let mults = &scratch[..km];
                // rank-1 update of the trailing band, column by column
                for jj in (j + 1)..=ju {
                    let ujj = ab[jj * ldab + (kv + j - jj)];
                    if ujj != 0.0 {
                        let start = jj * ldab + (kv + j + 1 - jj);
                        for (d, &m) in ab[start..start + km].iter_mut().zip(mults) {
                            *d -= m * ujj;
                        }
                    }
                }
            }
        }
        Ok(ipiv)
    }

    /// Solves `A x = b` in place using a factorization from [`factor`].
    pub fn solve(&self, ipiv: &[usize], b: &mut [f64]) {
        let (n, kl, ku, ldab) = (self.n, self.kl, self.ku, self.ldab);
        let kv = kl + ku;
        let ab = &self.ab;
        // L y = P b
        for j in 0..n {
            let jp = ipiv[j];
            if jp != j {
                b.swap(jp, j);
            }
            let lm = kl.min(n - 1 - j);
            let bj = b[j];
            if bj != 0.0 {
                for p in 1..=lm {
                    b[j + p] -= ab[j * ldab + kv + p] * bj;
                }
            }
        }
        // U x = y
        for j in (0..n).rev() {
            let mut s = b[j];
            let lm = kv.min(n - 1 - j);
            for p in 1..=lm {
                s -= ab[(j + p) * ldab + (kv - p)] * b[j + p];
            }
            b[j] = s / ab[j * ldab + kv];
        }
    }
}

/// Reverse Cuthill-McKee ordering of an undirected graph given as adjacency
/// lists. Returns `order` with `order[k]` = vertex visited k-th.
pub fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let deg: Vec<usize> = adj.iter().map(|a| a.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = std::collections::VecDeque::new();
    loop {
        // lowest-degree unvisited vertex seeds the next component
        let start = match (0..n).filter(|&v| !visited[v]).min_by_key(|&v| deg[v]) {
            Some(v) => v,
            None => break,
        };
        visited[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = adj[v].iter().copied().filter(|&u| !visited[u]).collect();
            nbrs.sort_by_key(|&u| (deg[u], u));
            for u in nbrs {
                visited[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order
}

/// Eigenvalues of a small (n <= 8) symmetric matrix via cyclic Jacobi.
/// `a` is row-major n x n and is left unmodified.
pub fn sym_eigenvalues(a: &[f64], n: usize, out: &mut [f64]) {
    debug_assert!(n <= 8 && a.len() >= n * n && out.len() >= n);
    let mut m = [0.0f64; 64];
    m[..n * n].copy_from_slice(&a[..n * n]);
    let scale: f64 = m[..n * n].iter().fold(0.0f64, |s, &v| s.max(v.abs()));
    if scale == 0.0 {
        out[..n].fill(0.0);
        return;
    }
    for _sweep in 0..30 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[p * n + q].abs();
            }
        }
        if off <= 1e-15 * scale * (n * n) as f64 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // rotate rows/cols p and q
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    for i in 0..n {
        out[i] = m[i * n + i];
    }
}

/// Smallest eigenvalue of a small symmetric matrix (row-major n x n).
pub fn min_eigenvalue_sym(a: &[f64], n: usize) -> f64 {
    let mut ev = [0.0f64; 8];
    sym_eigenvalues(a, n, &mut ev);
    ev[..n].iter().copied().fold(f64::INFINITY, f64::min)
}

/// Attempts an unpivoted Cholesky factorization; `true` certifies the matrix
/// is strictly positive definite. `false` is inconclusive (may still be PSD
/// within tolerance) and callers should fall back to an eigenvalue check.
pub fn cholesky_pd(a: &[f64], n: usize) -> bool {
    debug_assert!(n <= 8);
    let mut l = [0.0f64; 64];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return false;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    true
}
