use std::fmt;
use std::str::FromStr;

use crate::correlate::{ncc_unchecked, ChannelWeights, Scorer};
use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use crate::tensor::{FeatureMap, SupportRegion, DEFAULT_EPSILON};
use crate::whiten::{apply_projection, Projection};

/// Which parameter groups a training run updates, and how the model was initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    /// Fixed projections (usually identity), learned channel weights.
    WeightsOnly,
    /// CCA-fitted projections held fixed, learned channel weights.
    CcaThenWeights,
    /// CCA-initialized projections fine-tuned together with the weights.
    Joint,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::WeightsOnly => "weights",
            Regime::CcaThenWeights => "cca-weights",
            Regime::Joint => "joint",
        })
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weights" | "weights-only" => Ok(Regime::WeightsOnly),
            "cca-weights" | "cca" => Ok(Regime::CcaThenWeights),
            "joint" | "ft" => Ok(Regime::Joint),
            _ => Err(Error::Config(format!(
                "unknown regime '{s}' (expected weights, cca-weights or joint)"
            ))),
        }
    }
}

/// Placement of the bias inside the hinge.
///
/// `Printed` is `max(0, 1 - z*s + b)`: the bias widens or narrows both margins
/// around a decision point fixed at `s = 0`, and its gradient is always
/// non-negative, so it only makes sense frozen. `Margin` is the usual SVM form
/// `max(0, 1 - z*(s - b))`, where `b` acts as a learned decision threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum HingeForm {
    #[default]
    Printed,
    Margin,
}

impl fmt::Display for HingeForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HingeForm::Printed => "printed",
            HingeForm::Margin => "margin",
        })
    }
}

impl FromStr for HingeForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "printed" => Ok(HingeForm::Printed),
            "margin" => Ok(HingeForm::Margin),
            _ => Err(Error::Config(format!(
                "unknown hinge form '{s}' (expected printed or margin)"
            ))),
        }
    }
}

/// Two projections feeding a weighted MCNCC head.
#[derive(Debug, Clone, PartialEq)]
pub struct SiameseModel<T> {
    pub proj_x: Projection<T>,
    pub proj_y: Projection<T>,
    pub weights: ChannelWeights<T>,
    /// L2 coefficient on `W`.
    pub alpha: T,
    /// L2 coefficient on `U` and `V`.
    pub beta: T,
    pub epsilon: T,
    pub hinge: HingeForm,
    pub regime: Regime,
}

impl<T: Scalar> SiameseModel<T> {
    pub fn new(
        proj_x: Projection<T>,
        proj_y: Projection<T>,
        weights: ChannelWeights<T>,
        alpha: T,
        beta: T,
    ) -> Result<Self> {
        if proj_x.rows() != proj_y.rows() {
            return Err(Error::DimensionMismatch(format!(
                "projections output {} and {} channels",
                proj_x.rows(),
                proj_y.rows()
            )));
        }
        if weights.len() != proj_x.rows() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} projected channels",
                weights.len(),
                proj_x.rows()
            )));
        }
        if !(alpha >= T::zero() && beta >= T::zero()) {
            return Err(Error::Config("regularization coefficients must be >= 0".into()));
        }
        Ok(Self {
            proj_x,
            proj_y,
            weights,
            alpha,
            beta,
            epsilon: lit(DEFAULT_EPSILON),
            hinge: HingeForm::default(),
            regime: Regime::WeightsOnly,
        })
    }

    /// Identity projections and uniform weights: scores equal plain MCNCC.
    pub fn identity(channels: usize) -> Self {
        Self::from_projections(
            Projection::identity(channels, ""),
            Projection::identity(channels, ""),
        )
        .expect("consistent identity model")
    }

    /// Uniform weights on top of the given projections.
    pub fn from_projections(proj_x: Projection<T>, proj_y: Projection<T>) -> Result<Self> {
        let k = proj_x.rows();
        Self::new(proj_x, proj_y, ChannelWeights::uniform(k), T::zero(), T::zero())
    }

    pub fn with_regularization(mut self, alpha: T, beta: T) -> Self {
        self.alpha = alpha;
        self.beta = beta;
        self
    }

    pub fn with_epsilon(mut self, epsilon: T) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_hinge(mut self, hinge: HingeForm) -> Self {
        self.hinge = hinge;
        self
    }

    pub fn with_regime(mut self, regime: Regime) -> Self {
        self.regime = regime;
        self
    }

    /// Projected channel count `K`.
    pub fn dim(&self) -> usize {
        self.proj_x.rows()
    }

    /// Number of scalar parameters the given regime trains.
    pub fn parameter_count(&self, train_projections: bool) -> usize {
        let w = self.weights.len() + 1;
        if train_projections {
            w + self.proj_x.matrix().len() + self.proj_y.matrix().len()
        } else {
            w
        }
    }

    /// `alpha/2 ||W||^2 + beta/2 (||U||_F^2 + ||V||_F^2)`.
    pub fn regularizer(&self) -> T {
        let w2: T = self.weights.weights.iter().map(|&w| w * w).sum();
        let half = lit::<T>(0.5);
        half * self.alpha * w2
            + half * self.beta * (self.proj_x.frobenius_sq() + self.proj_y.frobenius_sq())
    }

    pub(crate) fn check_pair(&self, x: &FeatureMap<T>, y: &FeatureMap<T>) -> Result<()> {
        if x.channels() != self.proj_x.cols() || y.channels() != self.proj_y.cols() {
            return Err(Error::DimensionMismatch(format!(
                "model expects {}/{} input channels, pair has {}/{}",
                self.proj_x.cols(),
                self.proj_y.cols(),
                x.channels(),
                y.channels()
            )));
        }
        if x.height() != y.height() || x.width() != y.width() {
            return Err(Error::DimensionMismatch(format!(
                "pair maps are {}x{} and {}x{}",
                x.height(),
                x.width(),
                y.height(),
                y.width()
            )));
        }
        Ok(())
    }

    /// `(U(X - mu_x), V(Y - mu_y))` and the pixels valid in both.
    pub fn project_pair(
        &self,
        x: &FeatureMap<T>,
        y: &FeatureMap<T>,
    ) -> Result<(FeatureMap<T>, FeatureMap<T>, SupportRegion)> {
        self.check_pair(x, y)?;
        let xh = apply_projection(x, &self.proj_x)?;
        let yh = apply_projection(y, &self.proj_y)?;
        let region = SupportRegion::full(&xh).restrict_to(yh.validity(), yh.width());
        region.validate(xh.height(), xh.width())?;
        Ok((xh, yh, region))
    }

    /// Per-channel NCC of the projected pair.
    pub fn channel_scores(&self, x: &FeatureMap<T>, y: &FeatureMap<T>) -> Result<Vec<T>> {
        let (xh, yh, region) = self.project_pair(x, y)?;
        Ok((0..self.dim())
            .map(|k| ncc_unchecked(xh.channel(k), yh.channel(k), xh.width(), &region, self.epsilon))
            .collect())
    }

    /// Weighted MCNCC of the projected pair. The bias is not included.
    pub fn score(&self, x: &FeatureMap<T>, y: &FeatureMap<T>) -> Result<T> {
        let v = self.channel_scores(x, y)?;
        Ok(v.iter().zip(&self.weights.weights).map(|(&n, &w)| n * w).sum())
    }

    /// Hinge argument `1 - z*s + b` (or `1 - z*(s - b)`) for a score `s`.
    pub fn margin(&self, score: T, z: T) -> T {
        match self.hinge {
            HingeForm::Printed => T::one() - z * score + self.weights.bias,
            HingeForm::Margin => T::one() - z * (score - self.weights.bias),
        }
    }

    /// Scorer for searching projected maps with this model's weights.
    pub fn scorer(&self) -> Scorer<T> {
        Scorer::weighted(self.weights.clone()).with_epsilon(self.epsilon)
    }

    /// `U(X - mu_x)` for a query-side map.
    pub fn project_x(&self, x: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        apply_projection(x, &self.proj_x)
    }

    /// `V(Y - mu_y)` for a database-side map.
    pub fn project_y(&self, y: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        apply_projection(y, &self.proj_y)
    }

    /// Same-source decision: the midpoint between the two margins.
    pub fn classify(&self, x: &FeatureMap<T>, y: &FeatureMap<T>) -> Result<bool> {
        let s = self.score(x, y)?;
        Ok(match self.hinge {
            HingeForm::Printed => s > T::zero(),
            HingeForm::Margin => s > self.weights.bias,
        })
    }
}

/// One training pair with its same-source label.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair<T> {
    pub x: FeatureMap<T>,
    pub y: FeatureMap<T>,
    /// `+1` for same source, `-1` otherwise.
    pub z: i8,
}

impl<T> Pair<T> {
    pub fn new(x: FeatureMap<T>, y: FeatureMap<T>, z: i8) -> Result<Self> {
        if z != 1 && z != -1 {
            return Err(Error::Config(format!("pair label must be +1 or -1, got {z}")));
        }
        Ok(Self { x, y, z })
    }
}

/// A nonempty list of labelled pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch<T> {
    pairs: Vec<Pair<T>>,
}

impl<T> PairBatch<T> {
    pub fn new(pairs: Vec<Pair<T>>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Empty("pair batch".into()));
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[Pair<T>] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Pairs at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self>
    where
        T: Clone,
    {
        Self::new(indices.iter().map(|&i| self.pairs[i].clone()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlate::mcncc;

    fn maps() -> (FeatureMap<f64>, FeatureMap<f64>) {
        let x = FeatureMap::from_fn(3, 4, 4, |c, r, col| ((c + 2) * r + col * col) as f64).unwrap();
        let y = FeatureMap::from_fn(3, 4, 4, |c, r, col| ((r * 3 + col + c) % 5) as f64).unwrap();
        (x, y)
    }

    #[test]
    fn identity_model_scores_plain_mcncc() {
        let (x, y) = maps();
        let m = SiameseModel::<f64>::identity(3);
        let r = SupportRegion::full(&x);
        assert!((m.score(&x, &y).unwrap() - mcncc(&x, &y, &r, 1e-5).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn dimension_checks() {
        let u = Projection::<f64>::identity(3, "");
        let v = Projection::<f64>::identity(2, "");
        assert!(SiameseModel::from_projections(u.clone(), v).is_err());
        assert!(SiameseModel::new(u.clone(), u, ChannelWeights::uniform(2), 0.0, 0.0).is_err());
        let (x, _) = maps();
        let small = FeatureMap::<f64>::zeros(3, 2, 2).unwrap();
        assert!(SiameseModel::<f64>::identity(3).score(&x, &small).is_err());
    }

    #[test]
    fn labels_and_batches() {
        let (x, y) = maps();
        assert!(Pair::new(x.clone(), y.clone(), 0).is_err());
        assert!(PairBatch::<f64>::new(vec![]).is_err());
        let b = PairBatch::new(vec![Pair::new(x, y, -1).unwrap()]).unwrap();
        assert_eq!(b.len(), 1);
    }

    #[test]
    fn regime_and_hinge_round_trip() {
        for r in [Regime::WeightsOnly, Regime::CcaThenWeights, Regime::Joint] {
            assert_eq!(r.to_string().parse::<Regime>().unwrap(), r);
        }
        for h in [HingeForm::Printed, HingeForm::Margin] {
            assert_eq!(h.to_string().parse::<HingeForm>().unwrap(), h);
        }
        assert!("svm".parse::<Regime>().is_err());
    }
}
