use crate::error::Result;
use crate::tensor::{expect_same_shape, Element, Tensor};

/// Mean absolute pixel error: for each image, `1/(W·H) Σ |prediction − gt|`,
/// then averaged over the batch.
///
/// Every image has the same pixel count, so this equals the mean over all
/// elements. Accumulates in `f64`.
pub fn l1_loss<T: Element>(prediction: &Tensor<T>, gt: &Tensor<T>) -> Result<f64> {
    expect_same_shape("l1 loss", prediction, gt)?;
    let sum: f64 = prediction
        .data()
        .iter()
        .zip(gt.data())
        .map(|(p, g)| (p.to_f64() - g.to_f64()).abs())
        .sum();
    Ok(sum / prediction.len() as f64)
}

/// `d loss / d prediction = seed · sign(prediction − gt) / (N·H·W)`, with sign(0) = 0.
pub fn l1_loss_backward<T: Element>(prediction: &Tensor<T>, gt: &Tensor<T>, seed: f64) -> Result<Tensor<T>> {
    expect_same_shape("l1 loss gradient", prediction, gt)?;
    let scale = seed / prediction.len() as f64;
    let data = prediction
        .data()
        .iter()
        .zip(gt.data())
        .map(|(p, g)| {
            let r = p.to_f64() - g.to_f64();
            let s = if r > 0.0 {
                1.0
            } else if r < 0.0 {
                -1.0
            } else {
                0.0
            };
            T::from_f64(s * scale)
        })
        .collect();
    Tensor::new(prediction.shape(), data)
}
