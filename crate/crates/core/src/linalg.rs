//! Dense linear-algebra kernels used by the decomposition engine.
//!
//! The truncated SVD goes through the Gram matrix of the smaller side: an
//! `N x C` pixel matrix with `N >> C` only ever needs a `C x C` symmetric
//! eigendecomposition, which a cyclic Jacobi sweep solves to machine
//! precision with fully deterministic arithmetic (no threaded BLAS, no
//! platform-dependent reduction orders).

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Top-`r` singular triplet of a matrix: `U` (`rows x r`, orthonormal
/// columns), the non-increasing singular values, and `V` (`cols x r`,
/// orthonormal columns). `U * diag(S) * V^T` is the best rank-`r`
/// Frobenius approximation of the input.
#[derive(Debug, Clone)]
pub struct SvdTriple {
    pub u: Array2<f64>,
    pub singular_values: Array1<f64>,
    pub v: Array2<f64>,
}

impl SvdTriple {
    /// `U * diag(S) * V^T`.
    pub fn reconstruct(&self) -> Array2<f64> {
        let scaled = &self.u * &self.singular_values; // broadcast over columns
        scaled.dot(&self.v.t())
    }
}

/// Frobenius norm.
pub fn frob(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in non-increasing order with matching eigenvector
/// columns. Ties keep the lower original column index first.
///
/// Works row-wise on flat buffers: a rotation touches two full rows of the
/// (symmetric) working matrix and two rows of the transposed eigenvector
/// accumulator, which keeps the inner loops contiguous.
pub fn sym_eigen(g: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = g.nrows();
    assert_eq!(n, g.ncols(), "sym_eigen needs a square matrix");

    // Row-major working copy, kept symmetric after every rotation.
    let mut a: Vec<f64> = g.iter().copied().collect();
    // Eigenvectors as rows (transposed accumulator).
    let mut vt = vec![0.0; n * n];
    for i in 0..n {
        vt[i * n + i] = 1.0;
    }

    let scale = g.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let tol = 1e-15 * scale;
    const MAX_SWEEPS: usize = 60;

    let rotate_rows = |buf: &mut [f64], p: usize, q: usize, c: f64, s: f64| {
        let (lo, hi) = if p < q { (p, q) } else { (q, p) };
        let (head, tail) = buf.split_at_mut(hi * n);
        let row_lo = &mut head[lo * n..lo * n + n];
        let row_hi = &mut tail[..n];
        let (rp, rq) = if p < q { (row_lo, row_hi) } else { (row_hi, row_lo) };
        for (xp, xq) in rp.iter_mut().zip(rq.iter_mut()) {
            let vp = *xp;
            let vq = *xq;
            *xp = c * vp - s * vq;
            *xq = s * vp + c * vq;
        }
    };

    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                off += apq * apq;
            }
        }
        if off.sqrt() * std::f64::consts::SQRT_2 <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() <= tol * 1e-2 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                // One-sided row rotation, mirrored onto the columns through
                // symmetry; the 2x2 pivot block needs the exact closed
                // forms (the mirrored values there miss the second
                // rotation, so they are overwritten below).
                rotate_rows(&mut a, p, q, c, s);
                for k in 0..n {
                    a[k * n + p] = a[p * n + k];
                    a[k * n + q] = a[q * n + k];
                }
                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;

                rotate_rows(&mut vt, p, q, c, s);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]).then(i.cmp(&j)));

    let eigvals = Array1::from_iter(order.iter().map(|&i| a[i * n + i]));
    let mut eigvecs = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            eigvecs[(k, dst)] = vt[src * n + k];
        }
    }
    (eigvals, eigvecs)
}

/// Modified Gram-Schmidt over the columns of `w`. Columns that vanish after
/// projection (rank deficiency) are replaced by canonical basis vectors
/// orthogonalized against the ones already kept, so the result always has
/// orthonormal columns.
pub(crate) fn orthonormalize_columns(w: &Array2<f64>) -> Array2<f64> {
    let (rows, cols) = (w.nrows(), w.ncols());
    assert!(cols <= rows, "cannot orthonormalize more columns than rows");
    let mut q = w.clone();
    let max_norm = (0..cols)
        .map(|j| q.column(j).iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0f64, f64::max);
    let floor = 1e-12 * max_norm.max(f64::MIN_POSITIVE);

    for j in 0..cols {
        for i in 0..j {
            let dot: f64 = (0..rows).map(|k| q[(k, i)] * q[(k, j)]).sum();
            for k in 0..rows {
                q[(k, j)] -= dot * q[(k, i)];
            }
        }
        let norm: f64 = (0..rows).map(|k| q[(k, j)] * q[(k, j)]).sum::<f64>().sqrt();
        if norm > floor {
            for k in 0..rows {
                q[(k, j)] /= norm;
            }
        } else {
            // Deterministic completion: first canonical vector with a
            // substantial component outside the current span.
            let mut done = false;
            for basis in 0..rows {
                let mut cand = vec![0.0; rows];
                cand[basis] = 1.0;
                for i in 0..j {
                    let dot: f64 = (0..rows).map(|k| q[(k, i)] * cand[k]).sum();
                    for (k, c) in cand.iter_mut().enumerate() {
                        *c -= dot * q[(k, i)];
                    }
                }
                let n: f64 = cand.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n > 0.5 {
                    for k in 0..rows {
                        q[(k, j)] = cand[k] / n;
                    }
                    done = true;
                    break;
                }
            }
            assert!(done, "failed to complete orthonormal basis");
        }
    }
    q
}

/// Top-`r` singular value decomposition through the Gram matrix of the
/// smaller side.
pub fn truncated_svd(m: &Array2<f64>, r: usize) -> Result<SvdTriple> {
    let (rows, cols) = (m.nrows(), m.ncols());
    let max_rank = rows.min(cols);
    if r == 0 || r > max_rank {
        return Err(Error::InvalidParameter(format!(
            "rank {r} out of range for a {rows}x{cols} matrix"
        )));
    }

    if cols <= rows {
        let gram = m.t().dot(m);
        let (evals, evecs) = sym_eigen(&gram);
        let singular_values =
            Array1::from_iter(evals.iter().take(r).map(|&l| l.max(0.0).sqrt()));
        let v_r = evecs.slice(ndarray::s![.., ..r]).to_owned();
        let u = orthonormalize_columns(&m.dot(&v_r));
        Ok(SvdTriple { u, singular_values, v: v_r })
    } else {
        let gram = m.dot(&m.t());
        let (evals, evecs) = sym_eigen(&gram);
        let singular_values =
            Array1::from_iter(evals.iter().take(r).map(|&l| l.max(0.0).sqrt()));
        let u_r = evecs.slice(ndarray::s![.., ..r]).to_owned();
        let v = orthonormalize_columns(&m.t().dot(&u_r));
        Ok(SvdTriple { u: u_r, singular_values, v })
    }
}

/// Full singular spectrum (non-increasing), from the eigenvalues of the
/// smaller Gram matrix.
pub fn singular_spectrum(m: &Array2<f64>) -> Array1<f64> {
    let gram = if m.ncols() <= m.nrows() { m.t().dot(m) } else { m.dot(&m.t()) };
    let (evals, _) = sym_eigen(&gram);
    evals.mapv(|l| l.max(0.0).sqrt())
}
