use super::{Element, Shape, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PoolKind {
    Average,
    Max,
}

impl PoolKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PoolKind::Average => "average",
            PoolKind::Max => "max",
        }
    }
}

impl std::str::FromStr for PoolKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" | "avg" => Ok(PoolKind::Average),
            "max" => Ok(PoolKind::Max),
            other => Err(Error::config("pool_kind", format!("unknown pooling kind {other:?}"))),
        }
    }
}

/// 2×2 window, stride 2.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pool2dSpec {
    pub kind: PoolKind,
}

impl Pool2dSpec {
    pub const WINDOW: usize = 2;

    pub fn output_shape(input: Shape) -> Result<Shape> {
        if input.h % 2 != 0 {
            return Err(Error::dim("h", format!("pooling needs an even height, got {}", input.h)));
        }
        if input.w % 2 != 0 {
            return Err(Error::dim("w", format!("pooling needs an even width, got {}", input.w)));
        }
        Ok(Shape::new(input.n, input.c, input.h / 2, input.w / 2))
    }
}

pub fn avg_pool2d<T: Element>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let out = Pool2dSpec::output_shape(input.shape())?;
    let s = input.shape();
    let d = input.data();
    Ok(Tensor::from_fn(out, |n, c, y, x| {
        let o = s.offset(n, c, 2 * y, 2 * x);
        let sum = d[o].to_f64() + d[o + 1].to_f64() + d[o + s.w].to_f64() + d[o + s.w + 1].to_f64();
        T::from_f64(sum * 0.25)
    }))
}

pub fn avg_pool2d_backward<T: Element>(input_shape: Shape, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let out = Pool2dSpec::output_shape(input_shape)?;
    check_grad(out, grad_out)?;
    Ok(Tensor::from_fn(input_shape, |n, c, y, x| {
        T::from_f64(grad_out.get(n, c, y / 2, x / 2).to_f64() * 0.25)
    }))
}

/// Window maximum. Also returns, per output element, the flat input index
/// that won; ties go to the first element in row-major window order.
pub fn max_pool2d<T: Element>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let out = Pool2dSpec::output_shape(input.shape())?;
    let s = input.shape();
    let d = input.data();
    let mut argmax = Vec::with_capacity(out.len());
    let t = Tensor::from_fn(out, |n, c, y, x| {
        let o = s.offset(n, c, 2 * y, 2 * x);
        let mut best = o;
        for cand in [o + 1, o + s.w, o + s.w + 1] {
            if d[cand] > d[best] {
                best = cand;
            }
        }
        argmax.push(best);
        d[best]
    });
    Ok((t, argmax))
}

pub fn max_pool2d_backward<T: Element>(
    input_shape: Shape,
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let out = Pool2dSpec::output_shape(input_shape)?;
    check_grad(out, grad_out)?;
    let mut gin = Tensor::zeros(input_shape);
    for (&src, g) in argmax.iter().zip(grad_out.data()) {
        gin.data_mut()[src] = *g;
    }
    Ok(gin)
}

fn check_grad<T: Element>(expected: Shape, grad_out: &Tensor<T>) -> Result<()> {
    if grad_out.shape() != expected {
        return Err(Error::dim(
            "grad",
            format!("pool output gradient is {}, expected {expected}", grad_out.shape()),
        ));
    }
    Ok(())
}
