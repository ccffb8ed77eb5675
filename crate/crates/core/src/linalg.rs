//! Dense linear-algebra helpers: a cyclic Jacobi eigen-solver for symmetric
//! matrices and Kronecker-structured products on stacked agent vectors.

use nalgebra::linalg::Schur;
use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

/// Off-diagonal Frobenius norm (relative to the full Frobenius norm) at which
/// the Jacobi sweeps stop.
pub const JACOBI_TOLERANCE: f64 = 1e-12;

/// Symmetry tolerance accepted by [`eigen_symmetric`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// Eigen-decomposition of a real symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    /// Eigenvalues sorted ascending.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors stored column-wise in the order of `values`.
    pub vectors: Option<DMatrix<f64>>,
    /// Number of full sweeps performed.
    pub sweeps: usize,
}

fn off_diagonal_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += a[(i, j)] * a[(i, j)];
            }
        }
    }
    acc.sqrt()
}

/// Largest absolute difference between `m` and its transpose.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Cyclic Jacobi eigen-decomposition.
///
/// Sweeps over every `(p, q)` pair in row order, annihilating each
/// off-diagonal entry with a plane rotation, until the off-diagonal Frobenius
/// norm falls below [`JACOBI_TOLERANCE`] times the matrix norm. At most
/// `100 * n` sweeps are attempted.
pub fn eigen_symmetric(m: &DMatrix<f64>, want_vectors: bool) -> Result<SymmetricEigen> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: m.ncols(),
        });
    }
    let scale = m.iter().fold(0.0f64, |acc, x| acc.max(x.abs())).max(1.0);
    let skew = asymmetry(m);
    if skew > SYMMETRY_TOLERANCE * scale {
        return Err(Error::NotSymmetric(skew));
    }

    let mut a = m.clone();
    // Symmetrize exactly so the rotations keep a symmetric iterate.
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = avg;
            a[(j, i)] = avg;
        }
    }
    let mut v = if want_vectors {
        Some(DMatrix::<f64>::identity(n, n))
    } else {
        None
    };

    let norm = a.norm();
    let max_sweeps = 100 * n.max(1);
    let mut sweeps = 0;
    if norm > 0.0 {
        let target = JACOBI_TOLERANCE * norm;
        loop {
            let off = off_diagonal_norm(&a);
            if off <= target {
                break;
            }
            if sweeps >= max_sweeps {
                return Err(Error::NoConvergence {
                    sweeps,
                    off_norm: off,
                });
            }
            sweeps += 1;
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[(p, q)];
                    if apq == 0.0 {
                        continue;
                    }
                    let app = a[(p, p)];
                    let aqq = a[(q, q)];
                    let tau = (aqq - app) / (2.0 * apq);
                    let t = if tau >= 0.0 {
                        1.0 / (tau + (1.0 + tau * tau).sqrt())
                    } else {
                        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                    };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;
                    rotate(&mut a, p, q, c, s);
                    if let Some(v) = v.as_mut() {
                        for k in 0..n {
                            let vkp = v[(k, p)];
                            let vkq = v[(k, q)];
                            v[(k, p)] = c * vkp - s * vkq;
                            v[(k, q)] = s * vkp + c * vkq;
                        }
                    }
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = v.map(|v| {
        let mut sorted = DMatrix::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            sorted.set_column(dst, &v.column(src));
        }
        sorted
    });
    Ok(SymmetricEigen {
        values,
        vectors,
        sweeps,
    })
}

// A <- J^T A J for the rotation acting on coordinates p and q.
fn rotate(a: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    let n = a.nrows();
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = c * akp - s * akq;
        a[(k, q)] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = c * apk - s * aqk;
        a[(q, k)] = s * apk + c * aqk;
    }
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
}

/// Sorted eigenvalues of a symmetric matrix.
pub fn eigenvalues_symmetric(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    Ok(eigen_symmetric(m, false)?.values)
}

/// Compares two multisets of reals by sorting both and pairing in order.
/// Returns the largest pairwise gap, or `None` when the sizes differ.
pub fn multiset_gap(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() {
        return None;
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    Some(
        a.iter()
            .zip(&b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max),
    )
}

/// `(m ⊗ I_d) x` for a stacked vector of `m.ncols()` blocks of size `d`.
pub fn kron_apply(m: &DMatrix<f64>, x: &DVector<f64>, d: usize) -> DVector<f64> {
    let rows = m.nrows();
    let cols = m.ncols();
    debug_assert_eq!(x.len(), cols * d);
    let mut y = DVector::zeros(rows * d);
    for i in 0..rows {
        for j in 0..cols {
            let w = m[(i, j)];
            if w == 0.0 {
                continue;
            }
            for k in 0..d {
                y[i * d + k] += w * x[j * d + k];
            }
        }
    }
    y
}

/// Dense `m ⊗ I_d`.
pub fn kron_identity(m: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows() * d, m.ncols() * d);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            for k in 0..d {
                out[(i * d + k, j * d + k)] = m[(i, j)];
            }
        }
    }
    out
}

/// Symmetric part `(a + aᵀ) / 2`.
pub fn sym(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Assembles a square block matrix from a row-major grid of equally sized blocks.
pub fn block_matrix(blocks: &[Vec<DMatrix<f64>>]) -> DMatrix<f64> {
    let br = blocks[0][0].nrows();
    let bc = blocks[0][0].ncols();
    let mut out = DMatrix::zeros(br * blocks.len(), bc * blocks[0].len());
    for (bi, row) in blocks.iter().enumerate() {
        for (bj, blk) in row.iter().enumerate() {
            out.view_mut((bi * br, bj * bc), (br, bc)).copy_from(blk);
        }
    }
    out
}

/// Removes block `agent` (of size `d`) from a stacked vector.
pub fn drop_block(x: &DVector<f64>, agent: usize, d: usize) -> DVector<f64> {
    let n = x.len() / d;
    DVector::from_iterator(
        (n - 1) * d,
        (0..n)
            .filter(|&i| i != agent)
            .flat_map(|i| (0..d).map(move |k| x[i * d + k])),
    )
}

/// Block `agent` of a stacked vector as a slice.
pub fn block(x: &DVector<f64>, agent: usize, d: usize) -> &[f64] {
    &x.as_slice()[agent * d..(agent + 1) * d]
}

/// Sets block `agent` of a stacked vector to zero (the `S_l` mask).
pub fn zero_block(x: &mut DVector<f64>, agent: usize, d: usize) {
    x.rows_mut(agent * d, d).fill(0.0);
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

const SCHUR_EPSILON: f64 = 1e-14;
const SCHUR_MAX_ITERATIONS: usize = 100_000;

/// Eigenvalues of a general square matrix via the real Schur form, with a
/// bounded iteration count.
pub fn eigenvalues_general(m: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    let schur = Schur::try_new(m.clone(), SCHUR_EPSILON, SCHUR_MAX_ITERATIONS).ok_or(Error::NoConvergence {
        sweeps: SCHUR_MAX_ITERATIONS,
        off_norm: f64::NAN,
    })?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}
