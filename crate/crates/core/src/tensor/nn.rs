//! Layer-level helpers over the tape: stored convolution parameters and the
//! residual block used by every scale of the feature extractor.

use rand::Rng;

use super::{Tape, Tensor, Var};
use crate::error::{shape_err, Result};

/// Stored weights of one convolution layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    /// (out_c, in_c, k, k)
    pub weight: Tensor,
    /// (out_c)
    pub bias: Tensor,
    pub stride: usize,
    pub pad: usize,
}

impl ConvParams {
    /// Zero-initialized 3x3 "same" convolution.
    pub fn zeros(in_c: usize, out_c: usize) -> Self {
        Self::zeros_k(in_c, out_c, 3)
    }

    pub fn zeros_k(in_c: usize, out_c: usize, k: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[out_c, in_c, k, k]),
            bias: Tensor::zeros(&[out_c]),
            stride: 1,
            pad: k / 2,
        }
    }

    /// Kaiming-uniform weights (bound `sqrt(6 / fan_in)`), zero bias.
    pub fn kaiming<R: Rng>(in_c: usize, out_c: usize, k: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros_k(in_c, out_c, k);
        let bound = (6.0 / (in_c * k * k) as f64).sqrt();
        for w in p.weight.data_mut() {
            *w = rng.random_range(-bound..bound);
        }
        p
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Registers the weights on a tape.
    pub fn bind<'t>(&self, tape: &'t Tape, requires_grad: bool) -> ConvVars<'t> {
        ConvVars {
            weight: tape.leaf(self.weight.clone(), requires_grad),
            bias: tape.leaf(self.bias.clone(), requires_grad),
            stride: self.stride,
            pad: self.pad,
        }
    }
}

/// Convolution parameters living on a tape.
#[derive(Clone, Copy, Debug)]
pub struct ConvVars<'t> {
    pub weight: Var<'t>,
    pub bias: Var<'t>,
    pub stride: usize,
    pub pad: usize,
}

impl<'t> ConvVars<'t> {
    pub fn apply(&self, x: Var<'t>) -> Result<Var<'t>> {
        x.conv2d(self.weight, self.bias, self.stride, self.pad)
    }
}

/// `x + conv(relu(conv(relu(conv(x)))))`.
pub fn residual_block<'t>(x: Var<'t>, body: &[ConvVars<'t>; 3]) -> Result<Var<'t>> {
    let h = body[0].apply(x)?.relu();
    let h = body[1].apply(h)?.relu();
    let h = body[2].apply(h)?;
    if h.shape() != x.shape() {
        return shape_err(
            "residual_block",
            format!("skip {:?} vs body {:?}", x.shape(), h.shape()),
        );
    }
    x.add(h)
}
