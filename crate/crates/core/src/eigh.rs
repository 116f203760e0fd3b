//! Dense Hermitian eigensolver: Householder reduction to a real symmetric
//! tridiagonal matrix followed by implicit QL with Wilkinson-style shifts.
//!
//! The reduction never touches row/column 0 with a reflector, so `Q e_0 = e_0`.
//! Two consequences are used throughout the crate:
//!
//! * the first eigenvector components of the input equal those of the
//!   tridiagonal matrix, so they can be tracked in `O(N^2)` without forming
//!   the full eigenvector matrix;
//! * adding `Z e_0 e_0^T` to the input only changes `diag[0]`, so one
//!   reduction of `G` serves every coupling `Z` applied to it.

use crate::error::{Error, Result};
use crate::linalg::{Scalar, SquareMatrix};

const MAX_QL_ITERATIONS: usize = 60;

/// Real symmetric tridiagonal matrix: `diag[i]` on the diagonal and `off[i]`
/// coupling `i` and `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl Tridiagonal {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// Copy with `shift` added to the `(0, 0)` entry.
    pub fn with_corner_shift(&self, shift: f64) -> Self {
        let mut t = self.clone();
        if let Some(d0) = t.diag.first_mut() {
            *d0 += shift;
        }
        t
    }
}

/// Output of [`tridiagonalize`]: `A = (Q D) T (Q D)^H` with `T` real, plus the
/// requested rows of the unitary `Q D`.
#[derive(Debug, Clone)]
pub struct Reduction<T> {
    pub tridiagonal: Tridiagonal,
    pub row_ids: Vec<usize>,
    /// `rows[k]` is row `row_ids[k]` of `Q D`.
    pub rows: Vec<Vec<T>>,
}

/// Eigenvalues (ascending) together with selected rows of the eigenvector
/// matrix: `rows[k][alpha]` is component `row_ids[k]` of eigenvector `alpha`.
#[derive(Debug, Clone)]
pub struct PartialEigen<T> {
    pub values: Vec<f64>,
    pub row_ids: Vec<usize>,
    pub rows: Vec<Vec<T>>,
}

/// Full eigendecomposition; column `alpha` of `vectors` belongs to `values[alpha]`.
#[derive(Debug, Clone)]
pub struct Eigensystem<T> {
    pub values: Vec<f64>,
    pub vectors: SquareMatrix<T>,
}

/// `sum a_j b_j` with four independent partial sums.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::ZERO; 4];
    let (ca, ra) = (a.chunks_exact(4), a.len() % 4);
    for (x, y) in ca.zip(b.chunks_exact(4)) {
        for q in 0..4 {
            acc[q] += x[q] * y[q];
        }
    }
    let start = a.len() - ra;
    let mut tail = T::ZERO;
    for j in start..a.len() {
        tail += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Householder reduction of a Hermitian matrix, tracking `rows` of the
/// accumulated transformation. Only the lower triangle of `a` is read.
pub fn tridiagonalize<T: Scalar>(a: &SquareMatrix<T>, rows: &[usize]) -> Reduction<T> {
    let n = a.dim();
    // Packed lower triangle: row i holds columns 0..=i.
    let mut low: Vec<Vec<T>> = (0..n).map(|i| a.row(i)[..=i].to_vec()).collect();
    let mut tracked: Vec<Vec<T>> = rows
        .iter()
        .map(|&r| {
            let mut v = vec![T::ZERO; n];
            v[r] = T::ONE;
            v
        })
        .collect();

    let mut v = vec![T::ZERO; n];
    let mut p = vec![T::ZERO; n];
    let mut w = vec![T::ZERO; n];
    let mut vc = vec![T::ZERO; n];
    let mut wc = vec![T::ZERO; n];

    for k in 0..n.saturating_sub(2) {
        let m = n - k - 1;
        // x = A[k+1.., k]
        let x0 = low[k + 1][k];
        let tail_sq: f64 = (k + 2..n).map(|i| low[i][k].norm_sqr()).sum();
        if tail_sq == 0.0 {
            continue;
        }
        let alpha = (x0.norm_sqr() + tail_sq).sqrt();
        let beta = -x0.phase().scale(alpha);
        v[0] = x0 - beta;
        for i in 1..m {
            v[i] = low[k + 1 + i][k];
        }
        let v_norm_sq = v[..m].iter().map(|x| x.norm_sqr()).sum::<f64>();
        let tau = 2.0 / v_norm_sq;

        low[k + 1][k] = beta;
        for row in &mut low[k + 2..n] {
            row[k] = T::ZERO;
        }

        // p = tau * S v with S the trailing Hermitian block (lower storage).
        p[..m].fill(T::ZERO);
        for i in 0..m {
            let row = &low[k + 1 + i][k + 1..];
            let vi = v[i];
            let acc = dot(&row[..i], &v[..i]) + row[i] * vi;
            for (pj, &s) in p[..i].iter_mut().zip(&row[..i]) {
                *pj += s.conj() * vi;
            }
            p[i] += acc;
        }
        let mut vhp = T::ZERO;
        for i in 0..m {
            p[i] = p[i].scale(tau);
            vhp += v[i].conj() * p[i];
        }
        let half_k = 0.5 * tau * vhp.re();
        for i in 0..m {
            w[i] = p[i] - v[i].scale(half_k);
        }
        // S -= v w^H + w v^H  (lower triangle only)
        for (j, x) in v[..m].iter().enumerate() {
            vc[j] = x.conj();
            wc[j] = w[j].conj();
        }
        for i in 0..m {
            let vi = v[i];
            let wi = w[i];
            let row = &mut low[k + 1 + i][k + 1..k + 2 + i];
            for ((x, &a), &b) in row.iter_mut().zip(&wc[..=i]).zip(&vc[..=i]) {
                *x -= vi * a + wi * b;
            }
        }
        // Tracked rows: r <- r H.
        for r in tracked.iter_mut() {
            let seg = &mut r[k + 1..];
            let mut dot = T::ZERO;
            for i in 0..m {
                dot += seg[i] * v[i];
            }
            if dot == T::ZERO {
                continue;
            }
            let dot = dot.scale(tau);
            for i in 0..m {
                seg[i] -= dot * v[i].conj();
            }
        }
    }

    // Diagonal phase transform making the off-diagonal real and nonnegative.
    let diag: Vec<f64> = (0..n).map(|i| low[i][i].re()).collect();
    let mut off = Vec::with_capacity(n.saturating_sub(1));
    let mut phases = vec![T::ONE; n];
    for k in 0..n.saturating_sub(1) {
        let t = low[k + 1][k];
        off.push(t.abs());
        phases[k + 1] = phases[k] * t.phase();
    }
    for r in tracked.iter_mut() {
        for (x, &d) in r.iter_mut().zip(&phases) {
            *x = *x * d;
        }
    }

    Reduction {
        tridiagonal: Tridiagonal { diag, off },
        row_ids: rows.to_vec(),
        rows: tracked,
    }
}

/// Implicit QL on a real symmetric tridiagonal matrix. `rows` are the rows of
/// the basis in which the tridiagonal matrix is expressed; on return they hold
/// the corresponding eigenvector components. Eigenvalues come back ascending.
pub fn tridiagonal_eigen<T: Scalar>(
    t: &Tridiagonal,
    rows: &[Vec<T>],
) -> std::result::Result<(Vec<f64>, Vec<Vec<T>>), usize> {
    let n = t.dim();
    let k = rows.len();
    let mut d = t.diag.clone();
    let mut e = t.off.clone();
    e.push(0.0);
    // Column-major copy: col[i*k + r] = rows[r][i], so each rotation touches
    // two contiguous slices.
    let mut col = vec![T::ZERO; n * k];
    for (r, row) in rows.iter().enumerate() {
        for (i, &x) in row.iter().enumerate() {
            col[i * k + r] = x;
        }
    }

    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > MAX_QL_ITERATIONS {
                return Err(l);
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut underflow = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                if k > 0 {
                    let (lo, hi) = col.split_at_mut((i + 1) * k);
                    let ci = &mut lo[i * k..];
                    let cj = &mut hi[..k];
                    for q in 0..k {
                        let fz = cj[q];
                        cj[q] = ci[q].scale(s) + fz.scale(c);
                        ci[q] = ci[q].scale(c) - fz.scale(s);
                    }
                }
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    let values = order.iter().map(|&i| d[i]).collect();
    let out = (0..k)
        .map(|r| order.iter().map(|&i| col[i * k + r]).collect())
        .collect();
    Ok((values, out))
}

impl<T: Scalar> Reduction<T> {
    /// Eigen-solve the reduced matrix after adding `shift` to the `(0,0)`
    /// entry of the original matrix.
    pub fn solve_shifted(&self, shift: f64) -> Result<PartialEigen<T>> {
        let t = if shift == 0.0 {
            self.tridiagonal.clone()
        } else {
            self.tridiagonal.with_corner_shift(shift)
        };
        let (values, rows) =
            tridiagonal_eigen(&t, &self.rows).map_err(|index| Error::NoConvergence { index, seed: None })?;
        Ok(PartialEigen {
            values,
            row_ids: self.row_ids.clone(),
            rows,
        })
    }
}

/// Eigenvalues of a real symmetric tridiagonal matrix, ascending.
pub fn tridiagonal_eigenvalues(t: &Tridiagonal) -> Result<Vec<f64>> {
    tridiagonal_eigen::<f64>(t, &[])
        .map(|(v, _)| v)
        .map_err(|index| Error::NoConvergence { index, seed: None })
}

/// Full eigendecomposition of a Hermitian matrix. Each eigenvector is scaled
/// so that its largest-magnitude component is real and positive.
pub fn eigh<T: Scalar>(a: &SquareMatrix<T>) -> Result<Eigensystem<T>> {
    let n = a.dim();
    let all: Vec<usize> = (0..n).collect();
    let red = tridiagonalize(a, &all);
    let part = red.solve_shifted(0.0)?;
    let mut vectors = SquareMatrix::from_fn(n, |i, j| part.rows[i][j]);
    for j in 0..n {
        let mut best = 0;
        let mut best_abs = -1.0;
        for i in 0..n {
            let a = vectors[(i, j)].abs();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        let fix = vectors[(best, j)].phase().conj();
        for i in 0..n {
            vectors[(i, j)] = vectors[(i, j)] * fix;
        }
    }
    Ok(Eigensystem {
        values: part.values,
        vectors,
    })
}
