use super::{expect_same_shape, Element, Tensor};
use crate::error::Result;

/// Sigmoid outputs are clamped to `[SIGMOID_CLAMP, 1 - SIGMOID_CLAMP]` so the
/// absolute-error loss never sits on its kink.
pub const SIGMOID_CLAMP: f64 = 1e-7;

#[inline]
fn stable_sigmoid(x: f64) -> f64 {
    let e = (-x.abs()).exp();
    let s = if x >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
    s.clamp(SIGMOID_CLAMP, 1.0 - SIGMOID_CLAMP)
}

pub fn sigmoid<T: Element>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| T::from_f64(stable_sigmoid(v.to_f64())))
}

/// `grad_in = grad_out · y·(1 − y)` from the saved forward output `y`.
pub fn sigmoid_backward<T: Element>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    expect_same_shape("sigmoid gradient", output, grad_out)?;
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(y, g)| {
            let y = y.to_f64();
            T::from_f64(g.to_f64() * y * (1.0 - y))
        })
        .collect();
    Tensor::new(output.shape(), data)
}

pub fn relu<T: Element>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v.to_f64() > 0.0 { v } else { T::default() })
}

/// Passes the gradient where the forward input was strictly positive.
pub fn relu_backward<T: Element>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    expect_same_shape("relu gradient", input, grad_out)?;
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(x, g)| if x.to_f64() > 0.0 { *g } else { T::default() })
        .collect();
    Tensor::new(input.shape(), data)
}
