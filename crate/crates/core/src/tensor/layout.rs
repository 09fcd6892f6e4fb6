use super::{Element, Shape, Tensor};
use crate::error::{Error, Result};

/// Grows the spatial extent to `(h, w)` by replicating the last row and column.
pub fn pad_replicate<T: Element>(input: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let s = input.shape();
    if h < s.h || w < s.w {
        return Err(Error::dim("hw", format!("cannot pad {s} down to {h}x{w}")));
    }
    Ok(Tensor::from_fn([s.n, s.c, h, w], |n, c, y, x| {
        input.get(n, c, y.min(s.h - 1), x.min(s.w - 1))
    }))
}

/// Adjoint of [`pad_replicate`]: gradients of replicated pixels fold back onto their source.
pub fn pad_replicate_backward<T: Element>(input_shape: Shape, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let g = grad_out.shape();
    if g.n != input_shape.n || g.c != input_shape.c || g.h < input_shape.h || g.w < input_shape.w {
        return Err(Error::dim("hw", format!("gradient {g} does not pad {input_shape}")));
    }
    let mut acc = vec![0.0f64; input_shape.len()];
    for n in 0..g.n {
        for c in 0..g.c {
            for y in 0..g.h {
                for x in 0..g.w {
                    let o = input_shape.offset(n, c, y.min(input_shape.h - 1), x.min(input_shape.w - 1));
                    acc[o] += grad_out.get(n, c, y, x).to_f64();
                }
            }
        }
    }
    Tensor::new(input_shape, acc.into_iter().map(T::from_f64).collect())
}

/// Keeps the top-left `h × w` window.
pub fn crop<T: Element>(input: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let s = input.shape();
    if h == 0 || w == 0 || h > s.h || w > s.w {
        return Err(Error::dim("hw", format!("cannot crop {s} to {h}x{w}")));
    }
    Ok(Tensor::from_fn([s.n, s.c, h, w], |n, c, y, x| input.get(n, c, y, x)))
}

pub fn crop_backward<T: Element>(input_shape: Shape, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let g = grad_out.shape();
    if g.n != input_shape.n || g.c != input_shape.c || g.h > input_shape.h || g.w > input_shape.w {
        return Err(Error::dim("hw", format!("gradient {g} is not a crop of {input_shape}")));
    }
    let mut out = Tensor::zeros(input_shape);
    for n in 0..g.n {
        for c in 0..g.c {
            for y in 0..g.h {
                for x in 0..g.w {
                    out.set(n, c, y, x, grad_out.get(n, c, y, x));
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replicate_then_crop_is_identity() {
        let x = Tensor::<f32>::from_fn([1, 2, 3, 5], |_, c, y, x| (c * 100 + y * 10 + x) as f32);
        let p = pad_replicate(&x, 8, 8).unwrap();
        assert_eq!(p.get(0, 1, 7, 7), x.get(0, 1, 2, 4));
        assert_eq!(p.get(0, 0, 1, 6), x.get(0, 0, 1, 4));
        assert_eq!(crop(&p, 3, 5).unwrap(), x);
    }

    #[test]
    fn pad_backward_sums_replicas() {
        let g = Tensor::<f32>::full([1, 1, 4, 4], 1.0);
        let back = pad_replicate_backward(Shape::new(1, 1, 2, 3), &g).unwrap();
        // corner (1,2) receives rows 1..4 × cols 2..4 = 3 × 2
        assert_eq!(back.data(), &[1.0, 1.0, 2.0, 3.0, 3.0, 6.0]);
        assert_eq!(back.sum(), 16.0);
    }
}
