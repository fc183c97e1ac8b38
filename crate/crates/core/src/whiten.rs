//! Global decorrelation: per-domain PCA whitening and paired-domain CCA.
//!
//! The sampling unit is a pixel: each valid spatial location of a feature map
//! contributes one `N`-dimensional sample.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};

use crate::correlate::inverse_sqrt;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::FeatureMap;

const EIGEN_TOLERANCE: f64 = 1e-14;
const EIGEN_MAX_ITER: usize = 10_000;
/// Eigenvalues below this fraction of the largest are treated as zero.
const RANK_TOLERANCE: f64 = 1e-12;

/// Diagonal loading added to sample covariances before whitening.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ridge {
    Absolute(f64),
    /// Multiple of the covariance's mean diagonal entry.
    Relative(f64),
}

impl Default for Ridge {
    fn default() -> Self {
        Ridge::Relative(1e-4)
    }
}

impl Ridge {
    pub const NONE: Ridge = Ridge::Absolute(0.0);

    fn value(self, cov: &DMatrix<f64>) -> f64 {
        match self {
            Ridge::Absolute(r) => r,
            Ridge::Relative(f) => f * cov.trace() / cov.nrows() as f64,
        }
    }
}

/// A row-per-sample data matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    data: DMatrix<f64>,
}

impl Samples {
    /// `rows` is one sample per entry; all rows must share a length.
    pub fn from_rows<T: Scalar>(rows: &[Vec<T>]) -> Result<Self> {
        let n = rows.len();
        let dim = rows.first().map_or(0, Vec::len);
        if n == 0 || dim == 0 {
            return Err(Error::Empty("sample matrix".into()));
        }
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch("ragged sample rows".into()));
        }
        Ok(Self {
            data: DMatrix::from_fn(n, dim, |i, j| rows[i][j].as_f64()),
        })
    }

    /// Every valid pixel of every map, as `C`-dimensional samples.
    pub fn from_pixels<'a, T: Scalar + 'a>(
        maps: impl IntoIterator<Item = &'a FeatureMap<T>>,
    ) -> Result<Self> {
        let mut rows: Vec<Vec<f64>> = vec![];
        let mut dim = None;
        for m in maps {
            let c = *dim.get_or_insert(m.channels());
            if c != m.channels() {
                return Err(Error::DimensionMismatch(format!(
                    "{} vs {c} channels",
                    m.channels()
                )));
            }
            for i in 0..m.pixels() {
                if m.validity().is_some_and(|v| !v[i]) {
                    continue;
                }
                rows.push((0..c).map(|ch| m.channel(ch)[i].as_f64()).collect());
            }
        }
        Self::from_rows(&rows)
    }

    /// Pixel samples from aligned map pairs: row `i` of each output comes from
    /// the same location, kept only where both maps are valid.
    pub fn paired_pixels<'a, T: Scalar + 'a>(
        pairs: impl IntoIterator<Item = (&'a FeatureMap<T>, &'a FeatureMap<T>)>,
    ) -> Result<(Self, Self)> {
        let mut xs: Vec<Vec<f64>> = vec![];
        let mut ys: Vec<Vec<f64>> = vec![];
        for (k, (x, y)) in pairs.into_iter().enumerate() {
            if x.height() != y.height() || x.width() != y.width() {
                return Err(Error::DimensionMismatch(format!(
                    "pair {k}: {}x{} vs {}x{}",
                    x.height(),
                    x.width(),
                    y.height(),
                    y.width()
                )));
            }
            for i in 0..x.pixels() {
                if x.validity().is_some_and(|v| !v[i]) || y.validity().is_some_and(|v| !v[i]) {
                    continue;
                }
                xs.push((0..x.channels()).map(|c| x.channel(c)[i].as_f64()).collect());
                ys.push((0..y.channels()).map(|c| y.channel(c)[i].as_f64()).collect());
            }
        }
        Ok((Self::from_rows(&xs)?, Self::from_rows(&ys)?))
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.data.row(i).iter().copied().collect()
    }

    /// Applies `x -> A x` to every sample (for re-parameterization tests and tools).
    pub fn transform(&self, a: &DMatrix<f64>) -> Result<Self> {
        if a.ncols() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} transform on {}-dim samples",
                a.nrows(),
                a.ncols(),
                self.dim()
            )));
        }
        Ok(Self {
            data: &self.data * a.transpose(),
        })
    }

    fn mean(&self) -> DVector<f64> {
        self.data.row_mean().transpose()
    }

    fn centered(&self, mean: &DVector<f64>) -> DMatrix<f64> {
        let mut c = self.data.clone();
        for mut row in c.row_iter_mut() {
            row -= mean.transpose();
        }
        c
    }
}

/// Population covariance of centered rows.
fn covariance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.transpose() * b / a.nrows() as f64
}

/// Per-domain linear map `x -> M (x - mean)`, `M` of shape `K x N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection<T> {
    rows: usize,
    cols: usize,
    matrix: Vec<T>,
    mean: Vec<T>,
    domain: String,
}

impl<T: Scalar> Projection<T> {
    /// `matrix` is row-major `rows x cols`; `mean` has `cols` entries.
    pub fn new(
        rows: usize,
        cols: usize,
        matrix: Vec<T>,
        mean: Vec<T>,
        domain: impl Into<String>,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 || rows > cols {
            return Err(Error::Shape(format!(
                "projection must satisfy 1 <= K <= N, got {rows}x{cols}"
            )));
        }
        if matrix.len() != rows * cols || mean.len() != cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} projection needs {} matrix and {cols} mean entries, got {} and {}",
                rows * cols,
                matrix.len(),
                mean.len()
            )));
        }
        if let Some(index) = matrix.iter().chain(&mean).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            rows,
            cols,
            matrix,
            mean,
            domain: domain.into(),
        })
    }

    pub fn identity(n: usize, domain: impl Into<String>) -> Self {
        let matrix = (0..n * n)
            .map(|i| if i / n == i % n { T::one() } else { T::zero() })
            .collect();
        Self::new(n, n, matrix, vec![T::zero(); n], domain).expect("valid identity")
    }

    fn from_f64(m: &DMatrix<f64>, mean: &DVector<f64>, domain: &str) -> Result<Self> {
        let matrix = (0..m.nrows())
            .flat_map(|r| (0..m.ncols()).map(move |c| (r, c)))
            .map(|(r, c)| T::cast_f64(m[(r, c)]))
            .collect();
        Self::new(
            m.nrows(),
            m.ncols(),
            matrix,
            mean.iter().map(|&v| T::cast_f64(v)).collect(),
            domain,
        )
    }

    /// Output dimension `K`.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Input dimension `N`.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn matrix(&self) -> &[T] {
        &self.matrix
    }

    pub fn matrix_mut(&mut self) -> &mut [T] {
        &mut self.matrix
    }

    pub fn mean(&self) -> &[T] {
        &self.mean
    }

    pub fn domain(&self) -> &str {
        &self.domain
    }

    pub fn with_domain(mut self, domain: impl Into<String>) -> Self {
        self.domain = domain.into();
        self
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.matrix[row * self.cols + col]
    }

    /// Squared Frobenius norm of the matrix.
    pub fn frobenius_sq(&self) -> T {
        self.matrix.iter().map(|&v| v * v).sum()
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |r, c| self.get(r, c).as_f64())
    }

    /// Projects one sample.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| {
                (0..self.cols)
                    .map(|c| self.get(r, c).as_f64() * (x[c] - self.mean[c].as_f64()))
                    .sum()
            })
            .collect()
    }
}

/// Result of a CCA fit: both projections and the canonical correlations,
/// in non-increasing order.
#[derive(Debug, Clone, PartialEq)]
pub struct CcaFit<T> {
    pub proj_x: Projection<T>,
    pub proj_y: Projection<T>,
    pub correlations: Vec<f64>,
}

fn sorted_eigen(cov: DMatrix<f64>, what: &str) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = cov.nrows();
    let eig = SymmetricEigen::try_new(cov, EIGEN_TOLERANCE, EIGEN_MAX_ITER).ok_or_else(|| {
        Error::Numerical(format!("eigendecomposition of the {n}x{n} {what} did not converge"))
    })?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((values, vectors))
}

/// Flips a row so that its largest-magnitude entry (first on ties) is positive.
/// Returns the sign applied.
fn fix_sign(row: &mut [f64]) -> f64 {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if v.abs() > row[best].abs() * (1.0 + 1e-12) {
            best = i;
        }
    }
    if row[best] < 0.0 {
        row.iter_mut().for_each(|v| *v = -*v);
        -1.0
    } else {
        1.0
    }
}

/// PCA whitening: the top-`k` principal directions of the (ridge-loaded)
/// covariance, each scaled to unit variance.
pub fn fit_pca<T: Scalar>(samples: &Samples, k: usize, ridge: Ridge) -> Result<Projection<T>> {
    let n = samples.dim();
    if k == 0 || k > n {
        return Err(Error::Config(format!("PCA needs 1 <= K <= N, got K={k}, N={n}")));
    }
    if samples.len() <= k {
        return Err(Error::Config(format!(
            "PCA with K={k} needs more than {k} samples, got {}",
            samples.len()
        )));
    }
    let mean = samples.mean();
    let centered = samples.centered(&mean);
    let mut cov = covariance(&centered, &centered);
    let r = ridge.value(&cov);
    for i in 0..n {
        cov[(i, i)] += r;
    }
    let (values, vectors) = sorted_eigen(cov, "covariance")?;
    if !(values[k - 1] > RANK_TOLERANCE * values[0].max(f64::MIN_POSITIVE)) {
        return Err(Error::Numerical(format!(
            "covariance has fewer than {k} positive eigenvalues (λ_{k} = {:.3e}); use a ridge",
            values[k - 1]
        )));
    }
    let mut m = DMatrix::<f64>::zeros(k, n);
    for i in 0..k {
        let mut row: Vec<f64> = vectors.column(i).iter().map(|v| v / values[i].sqrt()).collect();
        fix_sign(&mut row);
        for (j, v) in row.into_iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    Projection::from_f64(&m, &mean, "")
}

/// Canonical correlation analysis on paired samples: whitens each domain with
/// its ridge-loaded covariance and takes the SVD of the whitened cross-covariance.
pub fn fit_cca<T: Scalar>(
    samples_x: &Samples,
    samples_y: &Samples,
    k: usize,
    ridge: Ridge,
) -> Result<CcaFit<T>> {
    let (nx, ny) = (samples_x.dim(), samples_y.dim());
    if samples_x.len() != samples_y.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} x samples vs {} y samples",
            samples_x.len(),
            samples_y.len()
        )));
    }
    if k == 0 || k > nx || k > ny {
        return Err(Error::Config(format!(
            "CCA needs 1 <= K <= min(Nx, Ny), got K={k}, Nx={nx}, Ny={ny}"
        )));
    }
    if samples_x.len() < k + 2 {
        return Err(Error::Config(format!(
            "CCA with K={k} needs at least {} pairs, got {}",
            k + 2,
            samples_x.len()
        )));
    }
    let mx = samples_x.mean();
    let my = samples_y.mean();
    let cx = samples_x.centered(&mx);
    let cy = samples_y.centered(&my);
    let mut sxx = covariance(&cx, &cx);
    let mut syy = covariance(&cy, &cy);
    let sxy = covariance(&cx, &cy);
    let (rx, ry) = (ridge.value(&sxx), ridge.value(&syy));
    for i in 0..nx {
        sxx[(i, i)] += rx;
    }
    for i in 0..ny {
        syy[(i, i)] += ry;
    }
    let wx = inverse_sqrt(&sxx, "Σxx")?;
    let wy = inverse_sqrt(&syy, "Σyy")?;
    let m = &wx * sxy * &wy;
    let svd = SVD::try_new(m, true, true, EIGEN_TOLERANCE, EIGEN_MAX_ITER)
        .ok_or_else(|| Error::Numerical("SVD of whitened cross-covariance did not converge".into()))?;
    let u = svd.u.as_ref().expect("requested");
    let v_t = svd.v_t.as_ref().expect("requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .total_cmp(&svd.singular_values[a])
            .then(a.cmp(&b))
    });

    let mut px = DMatrix::<f64>::zeros(k, nx);
    let mut py = DMatrix::<f64>::zeros(k, ny);
    let mut correlations = Vec::with_capacity(k);
    for (row, &idx) in order.iter().take(k).enumerate() {
        let a = u.column(idx).transpose() * &wx;
        let b = v_t.row(idx) * &wy;
        let mut ra: Vec<f64> = a.iter().copied().collect();
        let mut rb: Vec<f64> = b.iter().copied().collect();
        let sign = fix_sign(&mut ra);
        rb.iter_mut().for_each(|v| *v *= sign);
        for (j, v) in ra.into_iter().enumerate() {
            px[(row, j)] = v;
        }
        for (j, v) in rb.into_iter().enumerate() {
            py[(row, j)] = v;
        }
        correlations.push(svd.singular_values[idx]);
    }
    Ok(CcaFit {
        proj_x: Projection::from_f64(&px, &mx, "")?,
        proj_y: Projection::from_f64(&py, &my, "")?,
        correlations,
    })
}

/// Per-pixel affine map from `N` to `K` channels; spatial extent and validity
/// are kept and the domain tag is taken from the projection.
pub fn apply_projection<T: Scalar>(map: &FeatureMap<T>, proj: &Projection<T>) -> Result<FeatureMap<T>> {
    if map.channels() != proj.cols() {
        return Err(Error::DimensionMismatch(format!(
            "map has {} channels, projection expects {}",
            map.channels(),
            proj.cols()
        )));
    }
    let n = map.pixels();
    let mut centered = Vec::with_capacity(map.channels() * n);
    for c in 0..map.channels() {
        let mu = proj.mean()[c];
        centered.extend(map.channel(c).iter().map(|&v| v - mu));
    }
    let mut data = vec![T::zero(); proj.rows() * n];
    for k in 0..proj.rows() {
        let out = &mut data[k * n..(k + 1) * n];
        for c in 0..proj.cols() {
            let w = proj.get(k, c);
            if w == T::zero() {
                continue;
            }
            let src = &centered[c * n..(c + 1) * n];
            for (o, &s) in out.iter_mut().zip(src) {
                *o = *o + w * s;
            }
        }
    }
    let out = FeatureMap::new(proj.rows(), map.height(), map.width(), data, proj.domain())?;
    match map.validity() {
        Some(v) => out.with_validity(v.to_vec()),
        None => Ok(out),
    }
}

/// Empirical covariance of projected samples (for whitening checks).
pub fn projected_covariance<T: Scalar>(samples: &Samples, proj: &Projection<T>) -> DMatrix<f64> {
    let rows: Vec<Vec<f64>> = (0..samples.len()).map(|i| proj.project(&samples.row(i))).collect();
    let data = DMatrix::from_fn(rows.len(), proj.rows(), |i, j| rows[i][j]);
    let s = Samples { data };
    let c = s.centered(&s.mean());
    covariance(&c, &c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn diag_4_1() -> Samples {
        let a = 2.0 * 2f64.sqrt();
        let b = 2f64.sqrt();
        Samples::from_rows(&[vec![a, 0.0], vec![-a, 0.0], vec![0.0, b], vec![0.0, -b]]).unwrap()
    }

    #[test]
    fn pca_on_known_covariance() {
        let p: Projection<f64> = fit_pca(&diag_4_1(), 2, Ridge::NONE).unwrap();
        assert_abs_diff_eq!(p.get(0, 0), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(p.get(0, 1), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.get(1, 1), 1.0, epsilon = 1e-12);
        let cov = projected_covariance(&diag_4_1(), &p);
        assert!((cov - DMatrix::identity(2, 2)).abs().max() < 1e-6);
    }

    #[test]
    fn pca_of_white_data_is_signed_permutation() {
        let s = Samples::from_rows(&[
            vec![1.0, 1.0],
            vec![1.0, -1.0],
            vec![-1.0, 1.0],
            vec![-1.0, -1.0],
        ])
        .unwrap();
        let p: Projection<f64> = fit_pca(&s, 2, Ridge::NONE).unwrap();
        for r in 0..2 {
            let nonzero: Vec<f64> = (0..2).map(|c| p.get(r, c)).filter(|v| v.abs() > 1e-9).collect();
            assert_eq!(nonzero.len(), 1);
            assert_abs_diff_eq!(nonzero[0].abs(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn pca_errors() {
        assert!(fit_pca::<f64>(&diag_4_1(), 3, Ridge::NONE).is_err());
        assert!(fit_pca::<f64>(&diag_4_1(), 0, Ridge::NONE).is_err());
        let collinear =
            Samples::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0], vec![0.0, 0.0]])
                .unwrap();
        assert!(matches!(
            fit_pca::<f64>(&collinear, 2, Ridge::NONE),
            Err(Error::Numerical(_))
        ));
        assert!(fit_pca::<f64>(&collinear, 2, Ridge::Absolute(1e-3)).is_ok());
        assert!(fit_pca::<f64>(&collinear, 1, Ridge::NONE).is_ok());
    }

    #[test]
    fn identity_and_mean_only_projections() {
        let m = FeatureMap::from_fn(3, 2, 4, |c, r, col| (c * 8 + r * 4 + col) as f64).unwrap();
        let id = Projection::<f64>::identity(3, "");
        assert_eq!(apply_projection(&m, &id).unwrap().as_slice(), m.as_slice());
        let shifted = Projection::new(
            3,
            3,
            id.matrix().to_vec(),
            vec![1.0, -2.0, 0.5],
            "impression",
        )
        .unwrap();
        let out = apply_projection(&m, &shifted).unwrap();
        assert_eq!(out.domain(), "impression");
        for c in 0..3 {
            for (a, b) in out.channel(c).iter().zip(m.channel(c)) {
                assert_eq!(*a, b - shifted.mean()[c]);
            }
        }
        let bad = Projection::<f64>::identity(2, "");
        assert!(apply_projection(&m, &bad).is_err());
    }

    #[test]
    fn projection_shape_checks() {
        assert!(Projection::<f64>::new(3, 2, vec![0.0; 6], vec![0.0; 2], "").is_err());
        assert!(Projection::<f64>::new(1, 2, vec![0.0; 3], vec![0.0; 2], "").is_err());
        assert!(Projection::<f64>::new(1, 2, vec![f64::NAN, 0.0], vec![0.0; 2], "").is_err());
    }

    #[test]
    fn cca_requires_enough_pairs() {
        let s = Samples::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0], vec![-1.0, 1.0]]).unwrap();
        assert!(fit_cca::<f64>(&s, &s, 2, Ridge::NONE).is_err());
        assert!(fit_cca::<f64>(&s, &s, 1, Ridge::Absolute(1e-6)).is_ok());
        let y = Samples::from_rows(&[vec![1.0], vec![0.0]]).unwrap();
        assert!(fit_cca::<f64>(&s, &y, 1, Ridge::NONE).is_err());
    }
}
