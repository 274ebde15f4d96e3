//! Small dense helpers shared by the solvers.

use nalgebra::{DMatrix, DVector};

/// Orthonormal basis of the (numerical) null space of `m`: right singular
/// vectors whose singular value is at most `rel_tol * sigma_max`.
///
/// Each basis vector is sign-normalized so its largest-magnitude entry is
/// positive.
pub fn nullspace(m: &DMatrix<f64>, rel_tol: f64) -> Vec<DVector<f64>> {
    let cols = m.ncols();
    if cols == 0 {
        return Vec::new();
    }
    // Pad to at least square so the SVD returns a full set of right vectors.
    let padded = if m.nrows() < cols {
        let mut p = DMatrix::zeros(cols, cols);
        p.view_mut((0, 0), (m.nrows(), cols)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let sigma = &svd.singular_values;
    let smax = sigma.amax();
    let mut basis = Vec::new();
    for (k, &s) in sigma.iter().enumerate() {
        if smax == 0.0 || s <= rel_tol * smax {
            let mut v = v_t.row(k).transpose();
            let pivot = v.iamax();
            if v[pivot] < 0.0 {
                v = -v;
            }
            basis.push(v);
        }
    }
    basis
}

/// Row-major `n x n` matrix from a length `n^2` vector.
pub fn unvec(v: &DVector<f64>, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| v[i * n + j])
}

/// Max-norm of `m - m^T`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for r in 0..n {
        for c in (r + 1)..n {
            worst = worst.max((m[(r, c)] - m[(c, r)]).abs());
        }
    }
    worst
}

/// `max|m - m^T| / (1 + max|m|)`, the closedness measure.
pub fn relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    asymmetry(m) / (1.0 + m.amax())
}

/// `|det m|` relative to `(||m||_F / sqrt(n))^n`; scale-free invertibility
/// measure (1 for orthogonal matrices).
pub fn det_ratio(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows() as f64;
    let scale = (m.norm() / n.sqrt()).powf(n);
    if scale == 0.0 {
        0.0
    } else {
        m.determinant().abs() / scale
    }
}
