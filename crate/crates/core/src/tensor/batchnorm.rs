use super::{Element, Tensor};
use crate::error::{Error, Result};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchNormMode {
    /// Normalize with the statistics of the current batch and update running stats.
    Train,
    /// Normalize with the running statistics.
    Infer,
}

/// Per-channel statistics the backward pass needs.
#[derive(Clone, Debug)]
pub struct BatchNormCache {
    pub mode: BatchNormMode,
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct BatchNormOutput<T: Element> {
    pub output: Tensor<T>,
    /// Updated running statistics (unchanged in infer mode).
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub cache: BatchNormCache,
}

fn check_channels<T: Element>(what: &str, t: &Tensor<T>, c: usize) -> Result<()> {
    if t.len() != c {
        return Err(Error::dim(what, format!("{} values for {c} channels", t.len())));
    }
    Ok(())
}

/// Per-channel normalization over (N, H, W).
///
/// In train mode the running statistics move toward the batch statistics by
/// `momentum`, using the unbiased variance estimate; normalization itself uses
/// the biased batch variance.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm<T: Element>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    mode: BatchNormMode,
    momentum: f64,
    epsilon: f64,
) -> Result<BatchNormOutput<T>> {
    let s = input.shape();
    for (what, t) in [("gamma", gamma), ("beta", beta), ("running_mean", running_mean), ("running_var", running_var)] {
        check_channels(what, t, s.c)?;
    }
    let plane = s.plane();
    let count = (s.n * plane) as f64;
    let (mean, var): (Vec<f64>, Vec<f64>) = match mode {
        BatchNormMode::Train => (0..s.c)
            .map(|c| {
                let vals = || (0..s.n).flat_map(move |n| input.plane(n, c).iter().map(|v| v.to_f64()));
                let m = vals().sum::<f64>() / count;
                let v = vals().map(|x| (x - m) * (x - m)).sum::<f64>() / count;
                (m, v)
            })
            .unzip(),
        BatchNormMode::Infer => (
            running_mean.data().iter().map(|v| v.to_f64()).collect(),
            running_var.data().iter().map(|v| v.to_f64()).collect(),
        ),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + epsilon).sqrt()).collect();

    let mut out = Vec::with_capacity(input.len());
    for n in 0..s.n {
        for c in 0..s.c {
            let (g, b) = (gamma.data()[c].to_f64(), beta.data()[c].to_f64());
            out.extend(
                input
                    .plane(n, c)
                    .iter()
                    .map(|x| T::from_f64((x.to_f64() - mean[c]) * inv_std[c] * g + b)),
            );
        }
    }

    let (new_mean, new_var) = match mode {
        BatchNormMode::Train => {
            let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            let rm = running_mean
                .data()
                .iter()
                .zip(&mean)
                .map(|(r, m)| T::from_f64((1.0 - momentum) * r.to_f64() + momentum * m))
                .collect();
            let rv = running_var
                .data()
                .iter()
                .zip(&var)
                .map(|(r, v)| T::from_f64((1.0 - momentum) * r.to_f64() + momentum * v * unbias))
                .collect();
            (
                Tensor::new(running_mean.shape(), rm)?,
                Tensor::new(running_var.shape(), rv)?,
            )
        }
        BatchNormMode::Infer => (running_mean.clone(), running_var.clone()),
    };

    Ok(BatchNormOutput {
        output: Tensor::new(s, out)?,
        running_mean: new_mean,
        running_var: new_var,
        cache: BatchNormCache { mode, mean, inv_std },
    })
}

/// Returns `(d_input, d_gamma, d_beta)`; the parameter gradients are shaped `[C, 1, 1, 1]`.
pub fn batch_norm_backward<T: Element>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    cache: &BatchNormCache,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    super::expect_same_shape("batch norm gradient", input, grad_out)?;
    let s = input.shape();
    check_channels("gamma", gamma, s.c)?;
    let count = (s.n * s.plane()) as f64;
    let mut gin = vec![T::default(); input.len()];
    let mut dgamma = Vec::with_capacity(s.c);
    let mut dbeta = Vec::with_capacity(s.c);

    for c in 0..s.c {
        let (m, istd, g) = (cache.mean[c], cache.inv_std[c], gamma.data()[c].to_f64());
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for n in 0..s.n {
            for (x, go) in input.plane(n, c).iter().zip(grad_out.plane(n, c)) {
                let xh = (x.to_f64() - m) * istd;
                sum_g += go.to_f64();
                sum_gx += go.to_f64() * xh;
            }
        }
        dgamma.push(T::from_f64(sum_gx));
        dbeta.push(T::from_f64(sum_g));
        for n in 0..s.n {
            let start = s.offset(n, c, 0, 0);
            for i in 0..s.plane() {
                let x = input.data()[start + i].to_f64();
                let go = grad_out.data()[start + i].to_f64();
                let d = match cache.mode {
                    BatchNormMode::Train => {
                        let xh = (x - m) * istd;
                        g * istd / count * (count * go - sum_g - xh * sum_gx)
                    }
                    BatchNormMode::Infer => go * g * istd,
                };
                gin[start + i] = T::from_f64(d);
            }
        }
    }
    Ok((
        Tensor::new(s, gin)?,
        Tensor::new([s.c, 1, 1, 1], dgamma)?,
        Tensor::new([s.c, 1, 1, 1], dbeta)?,
    ))
}
