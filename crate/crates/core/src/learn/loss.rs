use rayon::prelude::*;

use super::gradient::ncc_gradient_unchecked;
use super::model::{HingeForm, Pair, PairBatch, SiameseModel};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::FeatureMap;

/// Gradients of the loss with respect to every parameter group.
/// `proj_x` and `proj_y` are row-major like the projection matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub weights: Vec<T>,
    pub bias: T,
    pub proj_x: Vec<T>,
    pub proj_y: Vec<T>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros(model: &SiameseModel<T>) -> Self {
        Self {
            weights: vec![T::zero(); model.weights.len()],
            bias: T::zero(),
            proj_x: vec![T::zero(); model.proj_x.matrix().len()],
            proj_y: vec![T::zero(); model.proj_y.matrix().len()],
        }
    }

    fn add(&mut self, other: &Self) {
        let acc = |a: &mut [T], b: &[T]| a.iter_mut().zip(b).for_each(|(x, &y)| *x = *x + y);
        acc(&mut self.weights, &other.weights);
        self.bias = self.bias + other.bias;
        acc(&mut self.proj_x, &other.proj_x);
        acc(&mut self.proj_y, &other.proj_y);
    }

    pub(crate) fn scale(&mut self, f: T) {
        for v in self
            .weights
            .iter_mut()
            .chain(&mut self.proj_x)
            .chain(&mut self.proj_y)
        {
            *v = *v * f;
        }
        self.bias = self.bias * f;
    }

    /// Adds `f * (alpha W, 0, beta U, beta V)`.
    pub(crate) fn add_regularizer(&mut self, model: &SiameseModel<T>, f: T) {
        for (g, &w) in self.weights.iter_mut().zip(&model.weights.weights) {
            *g = *g + f * model.alpha * w;
        }
        for (g, &u) in self.proj_x.iter_mut().zip(model.proj_x.matrix()) {
            *g = *g + f * model.beta * u;
        }
        for (g, &v) in self.proj_y.iter_mut().zip(model.proj_y.matrix()) {
            *g = *g + f * model.beta * v;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.bias.is_finite()
            && self
                .weights
                .iter()
                .chain(&self.proj_x)
                .chain(&self.proj_y)
                .all(|v| v.is_finite())
    }
}

fn hinge_of<T: Scalar>(model: &SiameseModel<T>, pair: &Pair<T>) -> Result<T> {
    model.check_pair(&pair.x, &pair.y)?;
    let s = model.score(&pair.x, &pair.y)?;
    Ok(model.margin(s, T::cast_f64(pair.z as f64)).max(T::zero()))
}

/// Sum of hinge terms over `pairs`, computed in parallel and summed in order.
pub(crate) fn data_loss<T: Scalar>(model: &SiameseModel<T>, pairs: &[&Pair<T>]) -> Result<T> {
    let terms: Vec<Result<T>> = pairs.par_iter().map(|p| hinge_of(model, p)).collect();
    let mut total = T::zero();
    for t in terms {
        total = total + t?;
    }
    Ok(total)
}

/// `dL/dM[k][n] = sum_i g_k[i] * (X_n[i] - mu_n)`, accumulated into a row-major buffer.
fn accumulate_projection<T: Scalar>(
    out: &mut [T],
    row: usize,
    upstream: &[T],
    input: &FeatureMap<T>,
    mean: &[T],
) {
    let n = input.channels();
    for c in 0..n {
        let plane = input.channel(c);
        let mu = mean[c];
        let g: T = upstream
            .iter()
            .zip(plane)
            .filter(|(u, _)| **u != T::zero())
            .map(|(&u, &v)| u * (v - mu))
            .sum();
        out[row * n + c] = out[row * n + c] + g;
    }
}

fn pair_backward<T: Scalar>(
    model: &SiameseModel<T>,
    pair: &Pair<T>,
    with_projections: bool,
) -> Result<(T, Gradients<T>)> {
    let (xh, yh, region) = model.project_pair(&pair.x, &pair.y)?;
    let z = T::cast_f64(pair.z as f64);
    let k = model.dim();
    let w = xh.width();
    let mut nccs = Vec::with_capacity(k);
    let mut gx = Vec::with_capacity(k);
    let mut gy = Vec::with_capacity(k);
    for c in 0..k {
        let (g, ncc) = ncc_gradient_unchecked(xh.channel(c), yh.channel(c), w, &region, model.epsilon);
        nccs.push(ncc);
        if with_projections {
            gx.push(g);
            gy.push(ncc_gradient_unchecked(yh.channel(c), xh.channel(c), w, &region, model.epsilon).0);
        }
    }
    let s: T = nccs.iter().zip(&model.weights.weights).map(|(&n, &w)| n * w).sum();
    let margin = model.margin(s, z);
    let mut grads = Gradients::zeros(model);
    // Subgradient at the kink is zero.
    if margin <= T::zero() {
        return Ok((T::zero(), grads));
    }
    for (g, &n) in grads.weights.iter_mut().zip(&nccs) {
        *g = -z * n;
    }
    grads.bias = match model.hinge {
        HingeForm::Printed => T::one(),
        HingeForm::Margin => z,
    };
    if with_projections {
        for c in 0..k {
            let f = -z * model.weights.weights[c];
            let up_x: Vec<T> = gx[c].iter().map(|&g| f * g).collect();
            let up_y: Vec<T> = gy[c].iter().map(|&g| f * g).collect();
            accumulate_projection(&mut grads.proj_x, c, &up_x, &pair.x, model.proj_x.mean());
            accumulate_projection(&mut grads.proj_y, c, &up_y, &pair.y, model.proj_y.mean());
        }
    }
    Ok((margin, grads))
}

/// Data-term loss and gradients over `pairs`; per-pair work runs in parallel and
/// the reduction is sequential in pair order, so results do not depend on the
/// number of worker threads.
pub(crate) fn data_backward<T: Scalar>(
    model: &SiameseModel<T>,
    pairs: &[&Pair<T>],
    with_projections: bool,
) -> Result<(T, Gradients<T>)> {
    let parts: Vec<Result<(T, Gradients<T>)>> = pairs
        .par_iter()
        .map(|p| pair_backward(model, p, with_projections))
        .collect();
    let mut total = T::zero();
    let mut grads = Gradients::zeros(model);
    for part in parts {
        let (l, g) = part?;
        total = total + l;
        grads.add(&g);
    }
    Ok((total, grads))
}

/// `sum max(0, 1 - z*MCNCC_W(U x, V y) + b) + alpha/2 ||W||^2 + beta/2 (||U||^2 + ||V||^2)`.
pub fn loss_forward<T: Scalar>(batch: &PairBatch<T>, model: &SiameseModel<T>) -> Result<T> {
    let refs: Vec<&Pair<T>> = batch.pairs().iter().collect();
    Ok(data_loss(model, &refs)? + model.regularizer())
}

/// Exact (sub)gradients of [`loss_forward`].
pub fn loss_backward<T: Scalar>(batch: &PairBatch<T>, model: &SiameseModel<T>) -> Result<Gradients<T>> {
    let refs: Vec<&Pair<T>> = batch.pairs().iter().collect();
    let (_, mut g) = data_backward(model, &refs, true)?;
    g.add_regularizer(model, T::one());
    Ok(g)
}
