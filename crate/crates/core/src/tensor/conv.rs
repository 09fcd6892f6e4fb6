use rayon::prelude::*;

use super::gemm::{dgemm, Strides};
use super::{Element, Shape, Tensor};
use crate::error::{Error, Result};

/// Upper bound on the number of `f64` entries in one im2col block.
const COLS_BLOCK: usize = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    /// Symmetric zero padding on every side.
    pub padding: usize,
}

impl Conv2dSpec {
    pub const fn new(kernel_h: usize, kernel_w: usize, stride: usize, padding: usize) -> Self {
        Conv2dSpec {
            kernel_h,
            kernel_w,
            stride,
            padding,
        }
    }

    /// 3×3, stride 1, padding 1: the size-preserving encoder convolution.
    pub const fn same3x3() -> Self {
        Self::new(3, 3, 1, 1)
    }

    /// 1×1, stride 1, no padding.
    pub const fn pointwise() -> Self {
        Self::new(1, 1, 1, 0)
    }

    pub fn output_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.kernel_h == 0 || self.kernel_w == 0 {
            return Err(Error::dim("kernel", "kernel extents must be positive"));
        }
        if self.stride == 0 {
            return Err(Error::dim("stride", "stride must be positive"));
        }
        let out = |axis: &str, len: usize, k: usize| {
            let padded = len + 2 * self.padding;
            if padded < k {
                Err(Error::dim(
                    axis,
                    format!("padded extent {padded} is smaller than kernel {k}"),
                ))
            } else {
                Ok((padded - k) / self.stride + 1)
            }
        };
        Ok((out("h", h, self.kernel_h)?, out("w", w, self.kernel_w)?))
    }
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    fn block(&self) -> usize {
        (COLS_BLOCK / self.patch()).clamp(1, self.out_plane())
    }
}

fn geometry(input: Shape, kernel: Shape, bias_len: Option<usize>, spec: &Conv2dSpec) -> Result<Geometry> {
    if kernel.c != input.c {
        return Err(Error::dim(
            "c",
            format!("kernel expects {} input channels, input has {}", kernel.c, input.c),
        ));
    }
    if kernel.h != spec.kernel_h || kernel.w != spec.kernel_w {
        return Err(Error::dim(
            "kernel",
            format!(
                "kernel is {}x{} but spec says {}x{}",
                kernel.h, kernel.w, spec.kernel_h, spec.kernel_w
            ),
        ));
    }
    if let Some(b) = bias_len {
        if b != kernel.n {
            return Err(Error::dim(
                "bias",
                format!("{b} bias values for {} output channels", kernel.n),
            ));
        }
    }
    let (ho, wo) = spec.output_dims(input.h, input.w)?;
    Ok(Geometry {
        n: input.n,
        cin: input.c,
        h: input.h,
        w: input.w,
        cout: kernel.n,
        kh: spec.kernel_h,
        kw: spec.kernel_w,
        stride: spec.stride,
        pad: spec.padding,
        ho,
        wo,
    })
}

/// Visits every (patch row, block column) pair of the im2col matrix for output
/// positions `p0..p1`, handing the callback the flat input index or `None`
/// when the tap falls in the zero padding.
#[inline]
fn for_each_tap(g: &Geometry, p0: usize, p1: usize, mut f: impl FnMut(usize, usize, Option<usize>)) {
    let pb = p1 - p0;
    for ci in 0..g.cin {
        for dy in 0..g.kh {
            for dx in 0..g.kw {
                let row = (ci * g.kh + dy) * g.kw + dx;
                let mut p = p0;
                while p < p1 {
                    let y = p / g.wo;
                    let x0 = p % g.wo;
                    let x1 = g.wo.min(x0 + (p1 - p));
                    let iy = (y * g.stride + dy) as isize - g.pad as isize;
                    for x in x0..x1 {
                        let col = p - p0 + (x - x0);
                        let ix = (x * g.stride + dx) as isize - g.pad as isize;
                        let src = if iy >= 0 && (iy as usize) < g.h && ix >= 0 && (ix as usize) < g.w {
                            Some((ci * g.h + iy as usize) * g.w + ix as usize)
                        } else {
                            None
                        };
                        f(row * pb, col, src);
                    }
                    p += x1 - x0;
                }
            }
        }
    }
}

fn im2col<T: Element>(g: &Geometry, image: &[T], p0: usize, p1: usize, cols: &mut [f64]) {
    for_each_tap(g, p0, p1, |row, col, src| {
        cols[row + col] = src.map_or(0.0, |i| image[i].to_f64());
    });
}

fn col2im(g: &Geometry, cols: &[f64], p0: usize, p1: usize, image: &mut [f64]) {
    for_each_tap(g, p0, p1, |row, col, src| {
        if let Some(i) = src {
            image[i] += cols[row + col];
        }
    });
}

fn to_f64<T: Element>(t: &[T]) -> Vec<f64> {
    t.iter().map(|v| v.to_f64()).collect()
}

/// 2-D cross-correlation, `out[n,co,y,x] = bias[co] + Σ in_padded[n,ci,y·s+dy,x·s+dx]·k[co,ci,dy,dx]`.
///
/// `kernel` is `[Cout, Cin, kh, kw]` and `bias` holds `Cout` values in any shape.
/// Products are accumulated in `f64` through an im2col/GEMM formulation.
pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    spec: Conv2dSpec,
) -> Result<Tensor<T>> {
    let g = geometry(input.shape(), kernel.shape(), Some(bias.len()), &spec)?;
    let weights = to_f64(kernel.data());
    let bias: Vec<f64> = to_f64(bias.data());
    let (k, plane) = (g.patch(), g.out_plane());
    let in_per = g.cin * g.h * g.w;
    let out_per = g.cout * plane;
    let mut out = vec![T::default(); g.n * out_per];

    out.par_chunks_mut(out_per)
        .zip(input.data().par_chunks(in_per))
        .for_each(|(dst, image)| {
            let pb = g.block();
            let mut cols = vec![0.0f64; k * pb];
            let mut acc = vec![0.0f64; out_per];
            let mut p0 = 0;
            while p0 < plane {
                let p1 = (p0 + pb).min(plane);
                let width = p1 - p0;
                im2col(&g, image, p0, p1, &mut cols[..k * width]);
                dgemm(
                    g.cout,
                    k,
                    width,
                    &weights,
                    Strides::row_major(k),
                    &cols,
                    Strides::row_major(width),
                    0.0,
                    &mut acc[p0..],
                    Strides::row_major(plane),
                );
                p0 = p1;
            }
            for co in 0..g.cout {
                let row = &acc[co * plane..(co + 1) * plane];
                for (d, a) in dst[co * plane..(co + 1) * plane].iter_mut().zip(row) {
                    *d = T::from_f64(bias[co] + a);
                }
            }
        });
    Tensor::new([g.n, g.cout, g.ho, g.wo], out)
}

/// Straight nested-loop convolution. Slow; kept as an independent reference
/// for the GEMM path.
pub fn conv2d_direct<T: Element>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    spec: Conv2dSpec,
) -> Result<Tensor<T>> {
    let g = geometry(input.shape(), kernel.shape(), Some(bias.len()), &spec)?;
    let mut out = Tensor::zeros([g.n, g.cout, g.ho, g.wo]);
    for n in 0..g.n {
        for co in 0..g.cout {
            for y in 0..g.ho {
                for x in 0..g.wo {
                    let mut acc = bias.data()[co].to_f64();
                    for ci in 0..g.cin {
                        for dy in 0..g.kh {
                            for dx in 0..g.kw {
                                let iy = (y * g.stride + dy) as isize - g.pad as isize;
                                let ix = (x * g.stride + dx) as isize - g.pad as isize;
                                if iy < 0 || ix < 0 || iy as usize >= g.h || ix as usize >= g.w {
                                    continue;
                                }
                                acc += input.get(n, ci, iy as usize, ix as usize).to_f64()
                                    * kernel.get(co, ci, dy, dx).to_f64();
                            }
                        }
                    }
                    out.set(n, co, y, x, T::from_f64(acc));
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct Conv2dGrads<T: Element> {
    pub input: Tensor<T>,
    pub kernel: Tensor<T>,
    /// Shaped `[Cout, 1, 1, 1]`.
    pub bias: Tensor<T>,
}

/// Gradients of [`conv2d`] with respect to input, kernel and bias.
pub fn conv2d_backward<T: Element>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    spec: Conv2dSpec,
    grad_out: &Tensor<T>,
) -> Result<Conv2dGrads<T>> {
    let g = geometry(input.shape(), kernel.shape(), None, &spec)?;
    let expected = Shape::new(g.n, g.cout, g.ho, g.wo);
    super::expect_same_shape("conv2d output gradient", grad_out, &Tensor::<T>::zeros(expected))?;

    let (k, plane) = (g.patch(), g.out_plane());
    let in_per = g.cin * g.h * g.w;
    let out_per = g.cout * plane;
    let weights = to_f64(kernel.data());
    let pb = g.block();
    let mut cols = vec![0.0f64; k * pb];
    let mut dcols = vec![0.0f64; k * pb];
    let mut gw = vec![0.0f64; g.cout * k];
    let mut gb = vec![0.0f64; g.cout];
    let mut gin = vec![T::default(); g.n * in_per];
    let mut gin_acc = vec![0.0f64; in_per];

    for n in 0..g.n {
        let image = &input.data()[n * in_per..(n + 1) * in_per];
        let gout = to_f64(&grad_out.data()[n * out_per..(n + 1) * out_per]);
        for co in 0..g.cout {
            gb[co] += gout[co * plane..(co + 1) * plane].iter().sum::<f64>();
        }
        gin_acc.iter_mut().for_each(|v| *v = 0.0);
        let mut p0 = 0;
        while p0 < plane {
            let p1 = (p0 + pb).min(plane);
            let width = p1 - p0;
            im2col(&g, image, p0, p1, &mut cols[..k * width]);
            // dW += dY[:, p0..p1] · colsᵀ
            dgemm(
                g.cout,
                width,
                k,
                &gout[p0..],
                Strides::row_major(plane),
                &cols,
                Strides::transposed(width),
                1.0,
                &mut gw,
                Strides::row_major(k),
            );
            // dcols = Wᵀ · dY[:, p0..p1]
            dgemm(
                k,
                g.cout,
                width,
                &weights,
                Strides::transposed(k),
                &gout[p0..],
                Strides::row_major(plane),
                0.0,
                &mut dcols,
                Strides::row_major(width),
            );
            col2im(&g, &dcols[..k * width], p0, p1, &mut gin_acc);
            p0 = p1;
        }
        for (d, a) in gin[n * in_per..(n + 1) * in_per].iter_mut().zip(&gin_acc) {
            *d = T::from_f64(*a);
        }
    }

    Ok(Conv2dGrads {
        input: Tensor::new(input.shape(), gin)?,
        kernel: Tensor::new(kernel.shape(), gw.into_iter().map(T::from_f64).collect())?,
        bias: Tensor::new([g.cout, 1, 1, 1], gb.into_iter().map(T::from_f64).collect())?,
    })
}
