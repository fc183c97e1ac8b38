//! Built-in pixel featurizer and 8-bit grayscale image loading.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use image::DynamicImage;

use crate::error::{Error, Result};
use crate::filter::{gaussian_blur, gradients};
use crate::scalar::Scalar;
use crate::tensor::{rotate, FeatureMap};

/// A grayscale image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
    /// Pixels that carry image content (all, unless the image was rotated).
    pub valid: Option<Vec<bool>>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} image with {} pixels",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
            valid: None,
        })
    }

    /// Rotation about the image centre, bilinear; uncovered pixels become invalid.
    pub fn rotate(&self, degrees: f64) -> Result<Self> {
        let m = FeatureMap::new(1, self.height, self.width, self.data.clone(), "")?;
        let m = match &self.valid {
            Some(v) => m.with_validity(v.clone())?,
            None => m,
        };
        let r = rotate(&m, degrees)?;
        Ok(Self {
            height: self.height,
            width: self.width,
            valid: r.validity().map(<[bool]>::to_vec),
            data: r.into_vec(),
        })
    }
}

/// Loads an 8-bit grayscale PNG or PGM.
pub fn load_gray_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let img = image::open(path)?;
    let DynamicImage::ImageLuma8(buf) = img else {
        return Err(Error::Config(format!(
            "{}: expected an 8-bit grayscale image, found {:?}",
            path.display(),
            img.color()
        )));
    };
    let (w, h) = buf.dimensions();
    GrayImage::new(
        h as usize,
        w as usize,
        buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeaturizerMode {
    /// The image itself as one channel.
    Gray,
    /// Directional derivatives at evenly spaced orientations.
    GradientBank,
}

impl fmt::Display for FeaturizerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeaturizerMode::Gray => "gray",
            FeaturizerMode::GradientBank => "gradient-bank",
        })
    }
}

impl FromStr for FeaturizerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gray" => Ok(FeaturizerMode::Gray),
            "gradient-bank" | "gradients" => Ok(FeaturizerMode::GradientBank),
            _ => Err(Error::Config(format!(
                "unknown featurizer mode '{s}' (expected gray or gradient-bank)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelFeaturizerConfig {
    pub mode: FeaturizerMode,
    pub orientations: usize,
    pub blur_sigma: f64,
}

impl Default for PixelFeaturizerConfig {
    fn default() -> Self {
        Self {
            mode: FeaturizerMode::GradientBank,
            orientations: 8,
            blur_sigma: 1.0,
        }
    }
}

impl PixelFeaturizerConfig {
    pub fn channels(&self) -> usize {
        match self.mode {
            FeaturizerMode::Gray => 1,
            FeaturizerMode::GradientBank => self.orientations,
        }
    }
}

/// Shrinks a validity mask by `r` pixels (Chebyshev distance).
fn erode(valid: &[bool], h: usize, w: usize, r: usize) -> Vec<bool> {
    let mut out = valid.to_vec();
    if r == 0 {
        return out;
    }
    for y in 0..h {
        for x in 0..w {
            if !valid[y * w + x] {
                continue;
            }
            let (y0, y1) = (y.saturating_sub(r), (y + r).min(h - 1));
            let (x0, x1) = (x.saturating_sub(r), (x + r).min(w - 1));
            out[y * w + x] = (y0..=y1).all(|yy| (x0..=x1).all(|xx| valid[yy * w + xx]));
        }
    }
    out
}

/// Gray mode copies the image into one channel. Gradient-bank mode blurs with
/// `blur_sigma` and emits `cos(t) d/dx + sin(t) d/dy` for `t = k*pi/orientations`,
/// so channel 0 is the horizontal derivative. If the image carries a validity
/// mask, it is shrunk by the filter support.
pub fn featurize_pixels<T: Scalar>(
    image: &GrayImage,
    cfg: &PixelFeaturizerConfig,
    domain: &str,
) -> Result<FeatureMap<T>> {
    let (h, w) = (image.height, image.width);
    let (planes, support) = match cfg.mode {
        FeaturizerMode::Gray => (vec![image.data.clone()], 0),
        FeaturizerMode::GradientBank => {
            if cfg.orientations == 0 {
                return Err(Error::Config("gradient bank needs at least one orientation".into()));
            }
            let blurred = gaussian_blur(&image.data, h, w, cfg.blur_sigma);
            let (gx, gy) = gradients(&blurred, h, w);
            let planes = (0..cfg.orientations)
                .map(|k| {
                    let t = k as f64 * std::f64::consts::PI / cfg.orientations as f64;
                    let (c, s) = (t.cos(), t.sin());
                    gx.iter().zip(&gy).map(|(x, y)| c * x + s * y).collect()
                })
                .collect();
            let radius = if cfg.blur_sigma > 0.0 {
                (3.0 * cfg.blur_sigma).ceil() as usize
            } else {
                0
            };
            (planes, radius + 1)
        }
    };
    let data: Vec<T> = planes.concat().into_iter().map(T::cast_f64).collect();
    let map = FeatureMap::new(cfg.channels(), h, w, data, domain)?;
    match &image.valid {
        Some(v) => map.with_validity(erode(v, h, w, support)),
        None => Ok(map),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step() -> GrayImage {
        GrayImage::new(6, 8, (0..48).map(|i| if i % 8 >= 4 { 1.0 } else { 0.0 }).collect()).unwrap()
    }

    #[test]
    fn gray_is_identity() {
        let img = step();
        let cfg = PixelFeaturizerConfig {
            mode: FeaturizerMode::Gray,
            ..Default::default()
        };
        let m: FeatureMap<f64> = featurize_pixels(&img, &cfg, "A").unwrap();
        assert_eq!(m.as_slice(), &img.data[..]);
        assert_eq!(m.domain(), "A");
    }

    #[test]
    fn constant_image_has_no_response() {
        let img = GrayImage::new(5, 5, vec![0.4; 25]).unwrap();
        let m: FeatureMap<f64> = featurize_pixels(&img, &PixelFeaturizerConfig::default(), "").unwrap();
        assert!(m.as_slice().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn vertical_edge_excites_horizontal_derivative() {
        let cfg = PixelFeaturizerConfig {
            mode: FeaturizerMode::GradientBank,
            orientations: 2,
            blur_sigma: 0.0,
        };
        let m: FeatureMap<f64> = featurize_pixels(&step(), &cfg, "").unwrap();
        let dx: f64 = m.channel(0).iter().map(|v| v.abs()).sum();
        let dy: f64 = m.channel(1).iter().map(|v| v.abs()).sum();
        assert!(dx > 1.0);
        assert!(dy < 1e-12);
    }

    #[test]
    fn rotation_masks_corners() {
        let img = GrayImage::new(9, 9, vec![0.5; 81]).unwrap();
        let r = img.rotate(30.0).unwrap();
        let v = r.valid.as_ref().unwrap();
        assert!(!v[0]);
        assert!(v[4 * 9 + 4]);
        let m: FeatureMap<f64> = featurize_pixels(&r, &PixelFeaturizerConfig::default(), "").unwrap();
        assert!(m.validity().unwrap().iter().filter(|&&b| b).count() < v.iter().filter(|&&b| b).count());
    }
}
