//! Feature-map container, support regions and per-region channel statistics.
//!
//! Values are stored channel-major, then row-major within a channel: the value
//! of channel `c` at pixel `(r, col)` lives at `c * H * W + r * W + col`. The
//! tensor file format relies on this layout.

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

/// Default stabilizer added to every standard deviation before dividing.
pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Sample coordinates within this distance of the map border are snapped onto it
/// during rotation so that exact symmetries (90°, 180°) keep their border pixels.
const BORDER_SNAP: f64 = 1e-9;

/// A `C x H x W` feature tensor tagged with the domain it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
    valid: Option<Vec<bool>>,
    domain: String,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<T>,
        domain: impl Into<String>,
    ) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "every dimension must be at least 1, got {channels}x{height}x{width}"
            )));
        }
        let expected = channels
            .checked_mul(height)
            .and_then(|n| n.checked_mul(width))
            .ok_or_else(|| Error::Shape("dimension product overflows".into()))?;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "{channels}x{height}x{width} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
            valid: None,
            domain: domain.into(),
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(
            channels,
            height,
            width,
            vec![T::zero(); channels * height * width],
            "",
        )
    }

    /// Builds a map from `f(channel, row, col)`.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for r in 0..height {
                for col in 0..width {
                    data.push(f(c, r, col));
                }
            }
        }
        Self::new(channels, height, width, data, "")
    }

    /// Attaches a pixel validity mask (`H * W`, row-major).
    pub fn with_validity(mut self, valid: Vec<bool>) -> Result<Self> {
        if valid.len() != self.pixels() {
            return Err(Error::Shape(format!(
                "validity mask has {} entries for {} pixels",
                valid.len(),
                self.pixels()
            )));
        }
        self.valid = if valid.iter().all(|&v| v) {
            None
        } else {
            Some(valid)
        };
        Ok(self)
    }

    pub fn with_domain(mut self, domain: impl Into<String>) -> Self {
        self.domain = domain.into();
        self
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn domain(&self) -> &str {
        &self.domain
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_view(&self, c: usize) -> ChannelView<'_, T> {
        ChannelView {
            data: self.channel(c),
            height: self.height,
            width: self.width,
        }
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> T {
        self.data[(c * self.height + row) * self.width + col]
    }

    /// Validity mask, `None` when every pixel is valid.
    pub fn validity(&self) -> Option<&[bool]> {
        self.valid.as_deref()
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.valid
            .as_ref()
            .map_or(true, |m| m[row * self.width + col])
    }

    /// Applies `f(channel, value)` elementwise, keeping shape, mask and tag.
    pub fn map_values(&self, mut f: impl FnMut(usize, T) -> T) -> Result<Self> {
        let n = self.pixels();
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| f(i / n, v))
            .collect();
        let mut out = Self::new(self.channels, self.height, self.width, data, self.domain.clone())?;
        out.valid = self.valid.clone();
        Ok(out)
    }

    pub(crate) fn from_parts_unchecked(
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<T>,
        valid: Option<Vec<bool>>,
        domain: String,
    ) -> Self {
        debug_assert_eq!(data.len(), channels * height * width);
        Self {
            channels,
            height,
            width,
            data,
            valid,
            domain,
        }
    }

    /// Converts every element to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Result<FeatureMap<U>> {
        let data = self
            .data
            .iter()
            .map(|v| U::cast_f64(v.as_f64()))
            .collect();
        let mut out = FeatureMap::new(
            self.channels,
            self.height,
            self.width,
            data,
            self.domain.clone(),
        )?;
        out.valid = self.valid.clone();
        Ok(out)
    }
}

/// Borrowed single channel of a feature map.
#[derive(Debug, Clone, Copy)]
pub struct ChannelView<'a, T> {
    pub data: &'a [T],
    pub height: usize,
    pub width: usize,
}

impl<'a, T: Scalar> ChannelView<'a, T> {
    pub fn new(data: &'a [T], height: usize, width: usize) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "channel view of {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            data,
            height,
            width,
        })
    }
}

/// The pixel set `P` over which statistics and correlations are computed:
/// a rectangle, optionally restricted by a mask of the same extent.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportRegion {
    top: usize,
    left: usize,
    height: usize,
    width: usize,
    mask: Option<Vec<bool>>,
    size: usize,
}

impl SupportRegion {
    pub fn rect(top: usize, left: usize, height: usize, width: usize) -> Self {
        Self {
            top,
            left,
            height,
            width,
            mask: None,
            size: height * width,
        }
    }

    /// Rectangle restricted to the pixels where `mask` (rectangle-sized, row-major) is true.
    pub fn masked(
        top: usize,
        left: usize,
        height: usize,
        width: usize,
        mask: Vec<bool>,
    ) -> Result<Self> {
        if mask.len() != height * width {
            return Err(Error::Shape(format!(
                "region mask has {} entries for a {height}x{width} rectangle",
                mask.len()
            )));
        }
        let size = mask.iter().filter(|&&m| m).count();
        let mask = if size == mask.len() { None } else { Some(mask) };
        Ok(Self {
            top,
            left,
            height,
            width,
            mask,
            size,
        })
    }

    /// Every valid pixel of `map`.
    pub fn full<T: Scalar>(map: &FeatureMap<T>) -> Self {
        match map.validity() {
            None => Self::rect(0, 0, map.height(), map.width()),
            Some(v) => Self::masked(0, 0, map.height(), map.width(), v.to_vec())
                .expect("validity mask has map extent"),
        }
    }

    pub fn top(&self) -> usize {
        self.top
    }

    pub fn left(&self) -> usize {
        self.left
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    /// `|P|`.
    pub fn size(&self) -> usize {
        self.size
    }

    /// Checks the region fits a `height x width` grid and holds at least two pixels.
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.top + self.height > height || self.left + self.width > width {
            return Err(Error::OutOfBounds {
                region: format!(
                    "[{}..{}, {}..{}]",
                    self.top,
                    self.top + self.height,
                    self.left,
                    self.left + self.width
                ),
                height,
                width,
            });
        }
        if self.size < 2 {
            return Err(Error::DegenerateRegion { size: self.size });
        }
        Ok(())
    }

    /// Flat pixel indices (`row * map_width + col`) of the region, in row-major order.
    pub fn indices(&self, map_width: usize) -> impl Iterator<Item = usize> + '_ {
        let (top, left, w) = (self.top, self.left, self.width);
        (0..self.height * self.width)
            .filter(move |&k| self.mask.as_ref().map_or(true, |m| m[k]))
            .map(move |k| (top + k / w) * map_width + left + k % w)
    }

    /// Intersects the region with a map validity mask.
    pub fn restrict_to(&self, valid: Option<&[bool]>, map_width: usize) -> Self {
        let Some(valid) = valid else {
            return self.clone();
        };
        let mask: Vec<bool> = (0..self.height * self.width)
            .map(|k| {
                let inside = self.mask.as_ref().map_or(true, |m| m[k]);
                let idx = (self.top + k / self.width) * map_width + self.left + k % self.width;
                inside && valid[idx]
            })
            .collect();
        Self::masked(self.top, self.left, self.height, self.width, mask)
            .expect("mask has rectangle extent")
    }
}

/// Per-channel mean and population standard deviation over a support region.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats<T> {
    pub means: Vec<T>,
    pub stddevs: Vec<T>,
    pub support_size: usize,
}

/// Mean and population standard deviation (divisor `|P|`) of one channel over `region`.
pub(crate) fn region_moments<T: Scalar>(
    channel: &[T],
    map_width: usize,
    region: &SupportRegion,
) -> (T, T) {
    let n = T::count(region.size());
    let mean = region.indices(map_width).map(|i| channel[i]).sum::<T>() / n;
    let var = region
        .indices(map_width)
        .map(|i| {
            let d = channel[i] - mean;
            d * d
        })
        .sum::<T>()
        / n;
    (mean, var.sqrt())
}

pub fn channel_stats<T: Scalar>(
    map: &FeatureMap<T>,
    region: &SupportRegion,
) -> Result<ChannelStats<T>> {
    region.validate(map.height(), map.width())?;
    let (means, stddevs) = (0..map.channels())
        .map(|c| region_moments(map.channel(c), map.width(), region))
        .unzip();
    Ok(ChannelStats {
        means,
        stddevs,
        support_size: region.size(),
    })
}

/// `(x_c - mean_c) / (std_c + epsilon)`, applied to every pixel of the map.
pub fn standardize<T: Scalar>(
    map: &FeatureMap<T>,
    region: &SupportRegion,
    stats: &ChannelStats<T>,
    epsilon: T,
) -> Result<FeatureMap<T>> {
    if stats.means.len() != map.channels() || stats.stddevs.len() != map.channels() {
        return Err(Error::DimensionMismatch(format!(
            "stats for {} channels, map has {}",
            stats.means.len(),
            map.channels()
        )));
    }
    region.validate(map.height(), map.width())?;
    map.map_values(|c, v| (v - stats.means[c]) / (stats.stddevs[c] + epsilon))
}

/// Copies the `h x w` window whose top-left corner is `(top, left)`.
pub fn extract_patch<T: Scalar>(
    map: &FeatureMap<T>,
    top: usize,
    left: usize,
    h: usize,
    w: usize,
) -> Result<FeatureMap<T>> {
    if h == 0 || w == 0 || top + h > map.height() || left + w > map.width() {
        return Err(Error::OutOfBounds {
            region: format!("[{}..{}, {}..{}]", top, top + h, left, left + w),
            height: map.height(),
            width: map.width(),
        });
    }
    let mut data = Vec::with_capacity(map.channels() * h * w);
    for c in 0..map.channels() {
        let ch = map.channel(c);
        for r in top..top + h {
            data.extend_from_slice(&ch[r * map.width() + left..r * map.width() + left + w]);
        }
    }
    let valid = map.validity().map(|v| {
        (top..top + h)
            .flat_map(|r| v[r * map.width() + left..r * map.width() + left + w].iter().copied())
            .collect::<Vec<_>>()
    });
    let out = FeatureMap::from_parts_unchecked(
        map.channels(),
        h,
        w,
        data,
        None,
        map.domain().to_string(),
    );
    match valid {
        Some(v) => out.with_validity(v),
        None => Ok(out),
    }
}

/// Rotates the map counter-clockwise (in image coordinates, rows pointing down)
/// by `angle_degrees` about its center using bilinear interpolation.
///
/// The output keeps the input extent. Pixels whose source falls outside the
/// input, or whose interpolation touches an invalid input pixel, are marked invalid.
pub fn rotate<T: Scalar>(map: &FeatureMap<T>, angle_degrees: f64) -> Result<FeatureMap<T>> {
    if !angle_degrees.is_finite() {
        return Err(Error::Config(format!("rotation angle {angle_degrees} is not finite")));
    }
    if angle_degrees == 0.0 {
        return Ok(map.clone());
    }
    let (h, w) = (map.height(), map.width());
    let (sin, cos) = angle_degrees.to_radians().sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let max_r = h as f64 - 1.0;
    let max_c = w as f64 - 1.0;

    // Per output pixel: four source indices and weights, or None when invalid.
    let mut taps: Vec<Option<[(usize, f64); 4]>> = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let dy = r as f64 - cy;
            let dx = c as f64 - cx;
            // inverse mapping: rotate the output offset by -angle
            let mut sr = cy + cos * dy + sin * dx;
            let mut sc = cx - sin * dy + cos * dx;
            if sr < 0.0 && sr > -BORDER_SNAP {
                sr = 0.0;
            }
            if sc < 0.0 && sc > -BORDER_SNAP {
                sc = 0.0;
            }
            if sr > max_r && sr < max_r + BORDER_SNAP {
                sr = max_r;
            }
            if sc > max_c && sc < max_c + BORDER_SNAP {
                sc = max_c;
            }
            if !(0.0..=max_r).contains(&sr) || !(0.0..=max_c).contains(&sc) {
                taps.push(None);
                continue;
            }
            let r0 = (sr.floor() as usize).min(h - 1);
            let c0 = (sc.floor() as usize).min(w - 1);
            let r1 = (r0 + 1).min(h - 1);
            let c1 = (c0 + 1).min(w - 1);
            let fr = sr - r0 as f64;
            let fc = sc - c0 as f64;
            let t = [
                (r0 * w + c0, (1.0 - fr) * (1.0 - fc)),
                (r0 * w + c1, (1.0 - fr) * fc),
                (r1 * w + c0, fr * (1.0 - fc)),
                (r1 * w + c1, fr * fc),
            ];
            let touches_invalid = map
                .validity()
                .is_some_and(|v| t.iter().any(|&(i, wt)| wt > 0.0 && !v[i]));
            taps.push(if touches_invalid { None } else { Some(t) });
        }
    }

    let mut data = Vec::with_capacity(map.channels() * h * w);
    for ch in 0..map.channels() {
        let src = map.channel(ch);
        data.extend(taps.iter().map(|tap| match tap {
            None => T::zero(),
            Some(t) => t
                .iter()
                .filter(|&&(_, wt)| wt > 0.0)
                .fold(T::zero(), |acc, &(i, wt)| acc + src[i] * lit::<T>(wt)),
        }));
    }
    let valid: Vec<bool> = taps.iter().map(Option::is_some).collect();
    FeatureMap::from_parts_unchecked(map.channels(), h, w, data, None, map.domain().to_string())
        .with_validity(valid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn single(values: &[f64], h: usize, w: usize) -> FeatureMap<f64> {
        FeatureMap::new(1, h, w, values.to_vec(), "t").unwrap()
    }

    #[test]
    fn rejects_bad_shapes_and_non_finite_values() {
        assert!(FeatureMap::<f64>::new(0, 2, 2, vec![], "").is_err());
        assert!(FeatureMap::<f64>::new(1, 2, 2, vec![1.0; 3], "").is_err());
        assert!(matches!(
            FeatureMap::<f64>::new(1, 1, 2, vec![1.0, f64::NAN], ""),
            Err(Error::NonFinite { index: 1 })
        ));
        assert!(FeatureMap::<f32>::new(1, 1, 2, vec![f32::INFINITY, 0.0], "").is_err());
    }

    #[test]
    fn constant_channel_has_zero_std() {
        let m = single(&[7.0; 6], 2, 3);
        let s = channel_stats(&m, &SupportRegion::full(&m)).unwrap();
        assert_eq!(s.means, vec![7.0]);
        assert_eq!(s.stddevs, vec![0.0]);
        assert_eq!(s.support_size, 6);
    }

    #[test]
    fn hand_evaluated_stats() {
        let m = single(&[1.0, 2.0, 3.0, 4.0], 2, 2);
        let s = channel_stats(&m, &SupportRegion::full(&m)).unwrap();
        assert_abs_diff_eq!(s.means[0], 2.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s.stddevs[0], 1.25f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn stacked_identical_channels_share_stats() {
        let v = [0.5, -1.0, 3.0, 2.0, 0.0, 9.0];
        let data: Vec<f64> = v.iter().chain(v.iter()).copied().collect();
        let m = FeatureMap::new(2, 2, 3, data, "").unwrap();
        let s = channel_stats(&m, &SupportRegion::full(&m)).unwrap();
        assert_eq!(s.means[0], s.means[1]);
        assert_eq!(s.stddevs[0], s.stddevs[1]);
    }

    #[test]
    fn region_errors() {
        let m = single(&[1.0, 2.0, 3.0, 4.0], 2, 2);
        assert!(matches!(
            channel_stats(&m, &SupportRegion::rect(1, 1, 2, 1)),
            Err(Error::OutOfBounds { .. })
        ));
        assert!(matches!(
            channel_stats(&m, &SupportRegion::rect(0, 0, 1, 1)),
            Err(Error::DegenerateRegion { size: 1 })
        ));
        let masked = SupportRegion::masked(0, 0, 2, 2, vec![true, false, false, false]).unwrap();
        assert!(matches!(
            channel_stats(&m, &masked),
            Err(Error::DegenerateRegion { size: 1 })
        ));
    }

    #[test]
    fn standardize_constant_channel_gives_zeros() {
        let m = single(&[3.0; 4], 2, 2);
        let region = SupportRegion::full(&m);
        let s = channel_stats(&m, &region).unwrap();
        let z = standardize(&m, &region, &s, 1e-5).unwrap();
        assert!(z.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn standardize_is_idempotent() {
        let m = FeatureMap::from_fn(2, 4, 5, |c, r, col| {
            ((c * 31 + r * 7 + col * 13) % 11) as f64 * (c as f64 + 0.5)
        })
        .unwrap();
        let region = SupportRegion::full(&m);
        let once = standardize(&m, &region, &channel_stats(&m, &region).unwrap(), 1e-5).unwrap();
        let twice =
            standardize(&once, &region, &channel_stats(&once, &region).unwrap(), 1e-5).unwrap();
        // second pass divides by (1 + eps) - eps-level scale drift only
        for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-4);
        }
        let once0 = standardize(&m, &region, &channel_stats(&m, &region).unwrap(), 0.0).unwrap();
        let twice0 =
            standardize(&once0, &region, &channel_stats(&once0, &region).unwrap(), 0.0).unwrap();
        for (a, b) in once0.as_slice().iter().zip(twice0.as_slice()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn standardize_rejects_mismatched_stats() {
        let m = single(&[1.0, 2.0, 3.0, 4.0], 2, 2);
        let stats = ChannelStats {
            means: vec![0.0, 0.0],
            stddevs: vec![1.0, 1.0],
            support_size: 4,
        };
        assert!(standardize(&m, &SupportRegion::full(&m), &stats, 1e-5).is_err());
    }

    #[test]
    fn patch_extraction() {
        let m = FeatureMap::from_fn(3, 200, 200, |c, r, col| (c * 100_000 + r * 1000 + col) as f64)
            .unwrap();
        let full = extract_patch(&m, 0, 0, 200, 200).unwrap();
        assert_eq!(full, m);

        let px = extract_patch(&m, 17, 42, 1, 1).unwrap();
        assert_eq!(px.as_slice(), &[m.get(0, 17, 42), m.get(1, 17, 42), m.get(2, 17, 42)]);

        let p = extract_patch(&m.clone().with_domain("print"), 0, 0, 97, 97).unwrap();
        assert_eq!(p.domain(), "print");
        for c in 0..3 {
            for r in 0..97 {
                for col in 0..97 {
                    assert_eq!(p.get(c, r, col), (c * 100_000 + r * 1000 + col) as f64);
                }
            }
        }
        assert!(extract_patch(&m, 150, 0, 97, 97).is_err());
        assert!(extract_patch(&m, 0, 104, 97, 97).is_err());
    }

    #[test]
    fn patch_stats_match_parent_region() {
        let m = FeatureMap::from_fn(2, 9, 11, |c, r, col| ((c + 1) * (r * r + 3 * col)) as f64 % 17.0)
            .unwrap();
        let p = extract_patch(&m, 2, 3, 5, 6).unwrap();
        let a = channel_stats(&p, &SupportRegion::full(&p)).unwrap();
        let b = channel_stats(&m, &SupportRegion::rect(2, 3, 5, 6)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_rotation_is_identity() {
        let m = FeatureMap::from_fn(2, 5, 7, |c, r, col| (c + r * col) as f64).unwrap();
        assert_eq!(rotate(&m, 0.0).unwrap(), m);
        assert!(rotate(&m, f64::NAN).is_err());
    }

    #[test]
    fn half_turn_of_point_symmetric_map() {
        let (h, w) = (6, 9);
        let m = FeatureMap::from_fn(1, h, w, |_, r, c| {
            let a = (r as f64 - 2.5).powi(2) + 0.3 * (c as f64 - 4.0).powi(2);
            let b = (r as f64 - 2.5) * (c as f64 - 4.0);
            a + b
        })
        .unwrap();
        let rot = rotate(&m, 180.0).unwrap();
        assert!(rot.validity().is_none());
        for (a, b) in rot.as_slice().iter().zip(m.as_slice()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-6);
        }
    }

    #[test]
    fn quarter_turn_marks_corners_invalid_on_non_square_maps() {
        let m = FeatureMap::from_fn(1, 4, 8, |_, r, c| (r + c) as f64).unwrap();
        let rot = rotate(&m, 90.0).unwrap();
        assert!(!rot.is_valid(0, 0));
        assert!(rot.is_valid(2, 4));
        let region = SupportRegion::full(&rot);
        assert!(region.size() < 32);
    }
}
