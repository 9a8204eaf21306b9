//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Solution of a symmetric positive semi-definite system.
#[derive(Debug, Clone)]
pub struct SymSolve {
    pub x: DVector<f64>,
    /// Numerical rank of the system matrix at the requested tolerance.
    pub rank: usize,
    /// True when at least one eigen-direction was dropped.
    pub pseudo_inverse: bool,
    pub max_eigenvalue: f64,
}

/// Solves `a x = b` for symmetric PSD `a` through its eigendecomposition.
///
/// Eigenvalues at or below `rank_tol * max_eigenvalue` are treated as zero, which yields the
/// minimum-norm least-squares solution when `a` is singular.
pub fn solve_symmetric(a: &DMatrix<f64>, b: &DVector<f64>, rank_tol: f64) -> SymSolve {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    debug_assert_eq!(n, b.len());
    // Symmetrize to absorb round-off from accumulated outer products.
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let max_ev = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let cutoff = rank_tol * max_ev;
    let proj = eig.eigenvectors.transpose() * b;
    let mut scaled = DVector::zeros(n);
    let mut rank = 0;
    for j in 0..n {
        let ev = eig.eigenvalues[j];
        if max_ev > 0.0 && ev > cutoff {
            scaled[j] = proj[j] / ev;
            rank += 1;
        }
    }
    SymSolve { x: &eig.eigenvectors * scaled, rank, pseudo_inverse: rank < n, max_eigenvalue: max_ev }
}

/// Flips the sign of each column so that its largest-magnitude entry is positive.
///
/// Returns the sign applied to every column.
pub fn fix_column_signs(m: &mut DMatrix<f64>) -> alloc::vec::Vec<f64> {
    let mut signs = alloc::vec::Vec::with_capacity(m.ncols());
    for mut col in m.column_iter_mut() {
        let mut best = 0.0_f64;
        for v in col.iter() {
            if v.abs() > best.abs() {
                best = *v;
            }
        }
        let s = if best < 0.0 { -1.0 } else { 1.0 };
        if s < 0.0 {
            col.neg_mut();
        }
        signs.push(s);
    }
    signs
}

/// Frobenius norm.
pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    libm::sqrt(m.iter().map(|v| v * v).sum::<f64>())
}

/// Relative Frobenius change `||new - old|| / (||old|| + 1e-12)`.
pub fn relative_change(old: &DMatrix<f64>, new: &DMatrix<f64>) -> f64 {
    frobenius(&(new - old)) / (frobenius(old) + 1e-12)
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Mean of a slice; NaN for an empty slice.
pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population standard deviation.
pub fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    libm::sqrt(v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64)
}
