//! Full multivariate correlation coefficient: the normalized trace of the
//! whitened cross-covariance. Quadratic in the channel count, so it serves as
//! a reference for the diagonal (per-channel) estimator rather than a scorer
//! for large feature maps.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{FeatureMap, SupportRegion};

const EIGEN_TOLERANCE: f64 = 1e-14;
const EIGEN_MAX_ITER: usize = 10_000;
/// Eigenvalue spread beyond which a covariance is treated as singular.
const SINGULAR_RATIO: f64 = 1e-12;

/// Relative ridge used when the caller does not supply one: `1e-6 * Tr(Σ) / C`.
pub const DEFAULT_TRACE_RIDGE: f64 = 1e-6;

fn centered_samples<T: Scalar>(map: &FeatureMap<T>, region: &SupportRegion) -> DMatrix<f64> {
    let n = region.size();
    let c = map.channels();
    let mut m = DMatrix::<f64>::zeros(c, n);
    for ch in 0..c {
        let plane = map.channel(ch);
        for (k, i) in region.indices(map.width()).enumerate() {
            m[(ch, k)] = plane[i].as_f64();
        }
        let mean = m.row(ch).sum() / n as f64;
        m.row_mut(ch).add_scalar_mut(-mean);
    }
    m
}

/// `Σ^{-1/2}` of a symmetric positive definite matrix.
pub(crate) fn inverse_sqrt(sigma: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::try_new(sigma.clone(), EIGEN_TOLERANCE, EIGEN_MAX_ITER)
        .ok_or_else(|| {
            Error::Numerical(format!(
                "eigendecomposition of {what} ({}x{}, trace {:.3e}) did not converge",
                sigma.nrows(),
                sigma.ncols(),
                sigma.trace()
            ))
        })?;
    let min = eig.eigenvalues.min();
    let max = eig.eigenvalues.max();
    if !(min > SINGULAR_RATIO * max) {
        return Err(Error::Numerical(format!(
            "{what} is not positive definite (smallest eigenvalue {min:.3e}, trace {:.3e}); \
             increase the ridge",
            sigma.trace()
        )));
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

fn add_ridge(sigma: &mut DMatrix<f64>, ridge: Option<f64>) {
    let c = sigma.nrows() as f64;
    let r = ridge.unwrap_or_else(|| DEFAULT_TRACE_RIDGE * sigma.trace() / c);
    for i in 0..sigma.nrows() {
        sigma[(i, i)] += r;
    }
}

/// `(1/C) * Tr(Σxx^{-1/2} Σxy Σyy^{-1/2})` over `region`, with `ridge * I`
/// added to both auto-covariances (default `1e-6 * Tr(Σ)/C` when `None`).
pub fn multivariate_trace<T: Scalar>(
    x: &FeatureMap<T>,
    y: &FeatureMap<T>,
    region: &SupportRegion,
    ridge: Option<f64>,
) -> Result<T> {
    if x.channels() != y.channels() || x.height() != y.height() || x.width() != y.width() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            x.channels(),
            x.height(),
            x.width(),
            y.channels(),
            y.height(),
            y.width()
        )));
    }
    region.validate(x.height(), x.width())?;
    let n = region.size() as f64;
    let xs = centered_samples(x, region);
    let ys = centered_samples(y, region);
    let mut sxx = &xs * xs.transpose() / n;
    let mut syy = &ys * ys.transpose() / n;
    let sxy = &xs * ys.transpose() / n;
    add_ridge(&mut sxx, ridge);
    add_ridge(&mut syy, ridge);
    let wx = inverse_sqrt(&sxx, "Σxx")?;
    let wy = inverse_sqrt(&syy, "Σyy")?;
    let t = (wx * sxy * wy).trace() / x.channels() as f64;
    Ok(T::cast_f64(t))
}
