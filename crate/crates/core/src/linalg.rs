use nalgebra::DMatrix;

use crate::DMat;

/// Symmetrize then clamp eigenvalues below `floor`, returning the nearest
/// (in Frobenius sense) matrix with spectrum >= floor.
pub fn psd_clamp(m: &DMat, floor: f64) -> DMat {
    let sym = 0.5 * (m + m.transpose());
    let eig = sym.symmetric_eigen();
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < floor {
            *v = floor;
        }
    }
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Smallest eigenvalue of the symmetrized matrix.
pub fn min_eigenvalue(m: &DMat) -> f64 {
    let sym = 0.5 * (m + m.transpose());
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, b| a.min(*b))
}
