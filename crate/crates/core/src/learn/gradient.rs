use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{region_moments, ChannelView, SupportRegion};

/// `dNCC(x, y) / dx[j]` for every pixel of the map (zero outside `region`).
///
/// With `s_x`, `s_y` the population standard deviations over `P` and
/// `x~ = x - mu_x`:
///
/// ```text
/// dNCC/dx[j] = 1/(|P| (s_x+eps)) * ( y~[j]/(s_y+eps) - NCC * x~[j]/s_x )
/// ```
///
/// which for `eps = 0` is `(y^[j] - NCC * x^[j]) / (|P| s_x)` on standardized
/// inputs. The gradient with respect to `y` follows by swapping the arguments.
/// A constant `x` has no well-defined gradient; zeros are returned.
pub fn ncc_gradient<T: Scalar>(
    x: ChannelView<'_, T>,
    y: ChannelView<'_, T>,
    region: &SupportRegion,
    epsilon: T,
) -> Result<Vec<T>> {
    if x.height != y.height || x.width != y.width {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            x.height, x.width, y.height, y.width
        )));
    }
    region.validate(x.height, x.width)?;
    Ok(ncc_gradient_unchecked(x.data, y.data, x.width, region, epsilon).0)
}

/// Gradient plus the forward NCC value it was computed from.
pub(crate) fn ncc_gradient_unchecked<T: Scalar>(
    x: &[T],
    y: &[T],
    width: usize,
    region: &SupportRegion,
    epsilon: T,
) -> (Vec<T>, T) {
    let mut grad = vec![T::zero(); x.len()];
    let (mx, sx) = region_moments(x, width, region);
    let (my, sy) = region_moments(y, width, region);
    let n = T::count(region.size());
    let denom = (sx + epsilon) * (sy + epsilon);
    if denom == T::zero() {
        return (grad, T::zero());
    }
    let cross: T = region
        .indices(width)
        .map(|i| (x[i] - mx) * (y[i] - my))
        .sum();
    let ncc = cross / (n * denom);
    if sx == T::zero() {
        return (grad, ncc);
    }
    let a = T::one() / (n * (sx + epsilon) * (sy + epsilon));
    let b = ncc / (n * (sx + epsilon) * sx);
    for i in region.indices(width) {
        grad[i] = a * (y[i] - my) - b * (x[i] - mx);
    }
    (grad, ncc)
}
