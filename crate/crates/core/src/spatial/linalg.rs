use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;

use crate::error::{Error, Result};

fn to_na(m: &Array2<f64>) -> DMatrix<f64> {
    let (r, c) = m.dim();
    DMatrix::from_fn(r, c, |i, j| m[[i, j]])
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues ascending.
/// Columns of the returned matrix are the matching unit eigenvectors.
pub fn sym_eigen(m: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    let (r, c) = m.dim();
    if r != c {
        return Err(Error::ShapeMismatch(format!("{r}x{c} matrix is not square")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite entry in symmetric matrix".into()));
    }
    // symmetrize to absorb round-off before the solver sees it
    let sym = (m + &m.t()) * 0.5;
    let eig = SymmetricEigen::new(to_na(&sym));
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = Array2::from_shape_fn((r, r), |(i, j)| eig.eigenvectors[(i, order[j])]);
    Ok((values, vectors))
}

/// `m^{-1/2}` for symmetric positive semi-definite `m`; eigenvalues below
/// `floor_rel * lambda_max` are raised to that floor.
pub fn sym_inv_sqrt(m: &Array2<f64>, floor_rel: f64) -> Result<Array2<f64>> {
    let (values, vectors) = sym_eigen(m)?;
    let lambda_max = values.last().copied().unwrap_or(0.0);
    if !(lambda_max > 0.0) {
        return Err(Error::Numerical("matrix has no positive eigenvalue".into()));
    }
    let floor = floor_rel * lambda_max;
    let n = values.len();
    let scales: Vec<f64> = values.iter().map(|&l| 1.0 / l.max(floor).sqrt()).collect();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += vectors[[i, k]] * scales[k] * vectors[[j, k]];
            }
            out[[i, j]] = acc;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn diagonal_inverse_root() {
        let m = array![[4.0, 0.0], [0.0, 9.0]];
        let r = sym_inv_sqrt(&m, 1e-12).unwrap();
        assert!((r[[0, 0]] - 0.5).abs() < 1e-12);
        assert!((r[[1, 1]] - 1.0 / 3.0).abs() < 1e-12);
        assert!(r[[0, 1]].abs() < 1e-12);
    }

    #[test]
    fn eigen_sorted_ascending() {
        let (v, _) = sym_eigen(&array![[2.0, 1.0], [1.0, 2.0]]).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-12 && (v[1] - 3.0).abs() < 1e-12);
    }
}
