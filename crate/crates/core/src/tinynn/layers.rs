use ndarray::{Array1, Array2, Axis, Zip};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LayerSpec, Mode};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    /// `input x output`.
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
    pub running_mean: Array1<T>,
    pub running_var: Array1<T>,
}

impl<T: Scalar> BatchNorm<T> {
    pub const EPS: f64 = 1e-5;
    /// Weight of the current batch in the running statistics.
    pub const MOMENTUM: f64 = 0.1;

    fn new(features: usize) -> Self {
        BatchNorm {
            gamma: Array1::ones(features),
            beta: Array1::zeros(features),
            running_mean: Array1::zeros(features),
            running_var: Array1::ones(features),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Linear(Linear<T>),
    Dropout(f64),
    BatchNorm(BatchNorm<T>),
    Relu,
    Softmax,
}

/// What a layer remembers from the forward pass for backpropagation.
#[derive(Debug, Clone)]
pub enum LayerCache<T> {
    Input(Array2<T>),
    Mask(Option<Array2<T>>),
    Norm { x_hat: Array2<T>, inv_std: Array1<T> },
    Output(Array2<T>),
}

#[derive(Debug, Clone)]
pub struct Forward<T> {
    pub output: Array2<T>,
    pub caches: Vec<LayerCache<T>>,
}

/// Source of dropout masks in training mode. `Fixed` supplies one mask per
/// dropout layer in order, already scaled by `1 / (1 - p)`.
pub enum Masks<'a, T> {
    Random(&'a mut dyn RngCore),
    Fixed(&'a [Array2<T>]),
    /// Dropout acts as the identity.
    Disabled,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerGrad<T> {
    Linear { weight: Array2<T>, bias: Array1<T> },
    BatchNorm { gamma: Array1<T>, beta: Array1<T> },
    None,
}

/// Gradients for every layer, aligned with [`MlpModel::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<LayerGrad<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Flat views in the same order as [`MlpModel::parameters_mut`].
    pub fn flat(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        for g in &self.layers {
            match g {
                LayerGrad::Linear { weight, bias } => {
                    out.push(weight.as_slice().expect("standard layout"));
                    out.push(bias.as_slice().expect("standard layout"));
                }
                LayerGrad::BatchNorm { gamma, beta } => {
                    out.push(gamma.as_slice().expect("standard layout"));
                    out.push(beta.as_slice().expect("standard layout"));
                }
                LayerGrad::None => {}
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel<T> {
    specs: Vec<LayerSpec>,
    layers: Vec<Layer<T>>,
    input_dim: usize,
    output_dim: usize,
}

fn validate(specs: &[LayerSpec]) -> Result<(usize, usize)> {
    let mut width: Option<usize> = None;
    let mut input_dim = None;
    for (i, spec) in specs.iter().enumerate() {
        let check = |w: Option<usize>, need: usize| match w {
            Some(w) if w != need => Err(Error::Shape(format!(
                "layer {i} expects width {need}, previous layer gives {w}"
            ))),
            _ => Ok(()),
        };
        match *spec {
            LayerSpec::Linear { input, output } => {
                if input == 0 || output == 0 {
                    return Err(Error::Shape(format!("layer {i}: zero-width linear layer")));
                }
                check(width, input)?;
                input_dim.get_or_insert(input);
                width = Some(output);
            }
            LayerSpec::BatchNorm { features } => {
                if features == 0 {
                    return Err(Error::Shape(format!("layer {i}: zero-width batch norm")));
                }
                check(width, features)?;
                input_dim.get_or_insert(features);
                width = Some(features);
            }
            LayerSpec::Dropout { p } => {
                if !(0.0..1.0).contains(&p) {
                    return Err(Error::Shape(format!("layer {i}: dropout p = {p} outside [0, 1)")));
                }
            }
            LayerSpec::Relu => {}
            LayerSpec::Softmax => {
                if i + 1 != specs.len() {
                    return Err(Error::Shape("softmax must be the last layer".into()));
                }
            }
        }
    }
    match (input_dim, width) {
        (Some(i), Some(o)) => Ok((i, o)),
        _ => Err(Error::Shape("network needs a linear or batch-norm layer".into())),
    }
}

impl<T: Scalar> MlpModel<T> {
    /// Builds a network with Glorot-uniform weights, zero biases, unit BN
    /// gains and zero BN shifts.
    pub fn new(specs: &[LayerSpec], seed: u64) -> Result<Self> {
        let (input_dim, output_dim) = validate(specs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = specs
            .iter()
            .map(|spec| match *spec {
                LayerSpec::Linear { input, output } => {
                    let a = (6.0 / (input + output) as f64).sqrt();
                    let weight = Array2::from_shape_simple_fn((input, output), || {
                        T::of(rng.random_range(-a..a))
                    });
                    Layer::Linear(Linear {
                        weight,
                        bias: Array1::zeros(output),
                    })
                }
                LayerSpec::Dropout { p } => Layer::Dropout(p),
                LayerSpec::BatchNorm { features } => Layer::BatchNorm(BatchNorm::new(features)),
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::Softmax => Layer::Softmax,
            })
            .collect();
        Ok(MlpModel {
            specs: specs.to_vec(),
            layers,
            input_dim,
            output_dim,
        })
    }

    pub(crate) fn from_parts(specs: Vec<LayerSpec>, layers: Vec<Layer<T>>) -> Result<Self> {
        let (input_dim, output_dim) = validate(&specs)?;
        Ok(MlpModel {
            specs,
            layers,
            input_dim,
            output_dim,
        })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Trainable parameters (weights, biases, BN gains and shifts) in layer
    /// order. Running statistics are not included.
    pub fn parameters_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Linear(l) => {
                    out.push(l.weight.as_slice_mut().expect("standard layout"));
                    out.push(l.bias.as_slice_mut().expect("standard layout"));
                }
                Layer::BatchNorm(b) => {
                    out.push(b.gamma.as_slice_mut().expect("standard layout"));
                    out.push(b.beta.as_slice_mut().expect("standard layout"));
                }
                _ => {}
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Linear(l) => l.weight.len() + l.bias.len(),
                Layer::BatchNorm(b) => b.gamma.len() + b.beta.len(),
                _ => 0,
            })
            .sum()
    }

    /// Forward pass. In training mode dropout draws masks from `masks` and
    /// batch norm uses batch statistics (and updates its running ones); in
    /// evaluation mode dropout is the identity and batch norm uses the
    /// running statistics.
    pub fn forward(&mut self, x: &Array2<T>, mode: Mode, masks: Masks<'_, T>) -> Result<Forward<T>> {
        if x.ncols() != self.input_dim {
            return Err(Error::Shape(format!(
                "batch has {} features, network expects {}",
                x.ncols(),
                self.input_dim
            )));
        }
        let mut masks = masks;
        let mut fixed_idx = 0;
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &mut self.layers {
            match layer {
                Layer::Linear(l) => {
                    let out = h.dot(&l.weight) + &l.bias;
                    caches.push(LayerCache::Input(std::mem::replace(&mut h, out)));
                }
                Layer::Dropout(p) => {
                    let mask = match (mode, &mut masks) {
                        (Mode::Eval, _) | (_, Masks::Disabled) => None,
                        (Mode::Train, Masks::Random(rng)) => {
                            let keep = 1.0 - *p;
                            let scale = T::of(1.0 / keep);
                            Some(Array2::from_shape_simple_fn(h.raw_dim(), || {
                                if rng.random::<f64>() < keep {
                                    scale
                                } else {
                                    T::zero()
                                }
                            }))
                        }
                        (Mode::Train, Masks::Fixed(list)) => {
                            let m = list.get(fixed_idx).ok_or_else(|| {
                                Error::Shape("not enough fixed dropout masks".into())
                            })?;
                            fixed_idx += 1;
                            if m.dim() != h.dim() {
                                return Err(Error::Shape("fixed dropout mask shape".into()));
                            }
                            Some(m.clone())
                        }
                    };
                    if let Some(m) = &mask {
                        h *= m;
                    }
                    caches.push(LayerCache::Mask(mask));
                }
                Layer::BatchNorm(bn) => {
                    let (x_hat, inv_std) = match mode {
                        Mode::Train => {
                            let n = T::of_usize(h.nrows());
                            let mean = h.mean_axis(Axis(0)).ok_or_else(|| {
                                Error::Shape("batch norm on an empty batch".into())
                            })?;
                            let centered = &h - &mean;
                            let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n;
                            let m = T::of(BatchNorm::<T>::MOMENTUM);
                            let unbiased = if h.nrows() > 1 {
                                &var * (n / (n - T::one()))
                            } else {
                                var.clone()
                            };
                            bn.running_mean = &bn.running_mean * (T::one() - m) + &mean * m;
                            bn.running_var = &bn.running_var * (T::one() - m) + &unbiased * m;
                            let inv_std = var.mapv(|v| T::one() / (v + T::of(BatchNorm::<T>::EPS)).sqrt());
                            (centered * &inv_std, inv_std)
                        }
                        Mode::Eval => {
                            let inv_std = bn
                                .running_var
                                .mapv(|v| T::one() / (v + T::of(BatchNorm::<T>::EPS)).sqrt());
                            ((&h - &bn.running_mean) * &inv_std, inv_std)
                        }
                    };
                    h = &x_hat * &bn.gamma + &bn.beta;
                    caches.push(LayerCache::Norm { x_hat, inv_std });
                }
                Layer::Relu => {
                    let out = h.mapv(|v| if v > T::zero() { v } else { T::zero() });
                    caches.push(LayerCache::Input(std::mem::replace(&mut h, out)));
                }
                Layer::Softmax => {
                    softmax_rows(&mut h);
                    caches.push(LayerCache::Output(h.clone()));
                }
            }
        }
        Ok(Forward { output: h, caches })
    }

    /// Class probabilities (or raw outputs without a softmax head) in
    /// evaluation mode. Does not touch running statistics.
    pub fn predict(&self, x: &Array2<T>) -> Result<Array2<T>> {
        let mut scratch = self.clone();
        Ok(scratch.forward(x, Mode::Eval, Masks::Disabled)?.output)
    }

    /// Backpropagates `grad_out` (gradient of the loss with respect to the
    /// output of layer `upto - 1`) through layers `0..upto`.
    pub fn backward_from(
        &self,
        caches: &[LayerCache<T>],
        grad_out: Array2<T>,
        upto: usize,
        mode: Mode,
    ) -> Result<(Gradients<T>, Array2<T>)> {
        let mut grads = vec![LayerGrad::None; self.layers.len()];
        let mut g = grad_out;
        for i in (0..upto).rev() {
            match (&self.layers[i], &caches[i]) {
                (Layer::Linear(l), LayerCache::Input(x)) => {
                    grads[i] = LayerGrad::Linear {
                        weight: x.t().dot(&g),
                        bias: g.sum_axis(Axis(0)),
                    };
                    g = g.dot(&l.weight.t());
                }
                (Layer::Dropout(_), LayerCache::Mask(mask)) => {
                    if let Some(m) = mask {
                        g *= m;
                    }
                }
                (Layer::BatchNorm(bn), LayerCache::Norm { x_hat, inv_std }) => {
                    grads[i] = LayerGrad::BatchNorm {
                        gamma: (&g * x_hat).sum_axis(Axis(0)),
                        beta: g.sum_axis(Axis(0)),
                    };
                    let dx_hat = &g * &bn.gamma;
                    g = match mode {
                        Mode::Eval => dx_hat * inv_std,
                        Mode::Train => {
                            let n = T::of_usize(g.nrows());
                            let sum = dx_hat.sum_axis(Axis(0));
                            let sum_xh = (&dx_hat * x_hat).sum_axis(Axis(0));
                            let mut dx = &dx_hat * n - &sum - &(x_hat * &sum_xh);
                            dx *= &(inv_std / n);
                            dx
                        }
                    };
                }
                (Layer::Relu, LayerCache::Input(x)) => {
                    Zip::from(&mut g).and(x).for_each(|gv, &xv| {
                        if xv <= T::zero() {
                            *gv = T::zero();
                        }
                    });
                }
                (Layer::Softmax, LayerCache::Output(y)) => {
                    let dot = (&g * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                    g = y * &(&g - &dot);
                }
                _ => return Err(Error::Shape(format!("cache does not match layer {i}"))),
            }
        }
        Ok((Gradients { layers: grads }, g))
    }

    /// Mean softmax cross-entropy over the batch and its gradients. The
    /// last layer must be a softmax; its backward pass is fused with the
    /// loss for numerical stability.
    pub fn loss_and_grads(
        &mut self,
        x: &Array2<T>,
        labels: &[usize],
        masks: Masks<'_, T>,
    ) -> Result<(T, Gradients<T>)> {
        if !matches!(self.layers.last(), Some(Layer::Softmax)) {
            return Err(Error::Shape("cross-entropy needs a softmax output layer".into()));
        }
        if labels.len() != x.nrows() || x.nrows() == 0 {
            return Err(Error::Shape(format!(
                "{} labels for a batch of {} rows",
                labels.len(),
                x.nrows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.output_dim) {
            return Err(Error::Shape(format!("label {bad} out of range")));
        }
        let fwd = self.forward(x, Mode::Train, masks)?;
        let last = self.layers.len() - 1;
        let n = T::of_usize(x.nrows());
        let tiny = T::min_positive_value();
        let mut loss = T::zero();
        let mut grad = fwd.output.clone();
        for (i, &label) in labels.iter().enumerate() {
            let p = fwd.output[[i, label]];
            loss -= if p.is_nan() { p } else { p.max(tiny).ln() };
            grad[[i, label]] -= T::one();
        }
        grad /= n;
        let (grads, _) = self.backward_from(&fwd.caches, grad, last, Mode::Train)?;
        Ok((loss / n, grads))
    }
}

fn softmax_rows<T: Scalar>(h: &mut Array2<T>) {
    for mut row in h.rows_mut() {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}
