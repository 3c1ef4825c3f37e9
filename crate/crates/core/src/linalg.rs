use nalgebra::{DMatrix, SymmetricEigen};

/// Symmetrise and raise every eigenvalue to at least `floor`.
/// Returns the projected matrix and whether any eigenvalue was raised.
pub fn floor_eigenvalues(m: &DMatrix<f64>, floor: f64) -> (DMatrix<f64>, bool) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    if eig.eigenvalues.iter().all(|&v| v >= floor) {
        return (sym, false);
    }
    let clipped = eig.eigenvalues.map(|v| if v < floor { floor } else { v });
    let q = &eig.eigenvectors;
    let out = q * DMatrix::from_diagonal(&clipped) * q.transpose();
    ((&out + out.transpose()) * 0.5, true)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}
