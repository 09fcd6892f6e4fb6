use rayon::prelude::*;

use super::gemm::{dgemm, Strides};
use super::{Element, Shape, Tensor};
use crate::error::{Error, Result};

/// Transpose convolution without padding. The decoder uses 2×2 / stride 2,
/// which exactly doubles both spatial extents.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TransposeConv2dSpec {
    pub kernel: usize,
    pub stride: usize,
}

impl Default for TransposeConv2dSpec {
    fn default() -> Self {
        TransposeConv2dSpec { kernel: 2, stride: 2 }
    }
}

impl TransposeConv2dSpec {
    pub fn output_dim(&self, input: usize) -> usize {
        (input - 1) * self.stride + self.kernel
    }
}

#[derive(Clone, Copy)]
struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    s: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    /// Rows of the column matrix: one per (co, dy, dx).
    fn taps(&self) -> usize {
        self.cout * self.k * self.k
    }

    /// Calls `f(col_index, out_index)` for every (tap, input pixel) pair of one image.
    #[inline]
    fn for_each(&self, mut f: impl FnMut(usize, usize)) {
        let hw = self.h * self.w;
        for co in 0..self.cout {
            for dy in 0..self.k {
                for dx in 0..self.k {
                    let row = (co * self.k + dy) * self.k + dx;
                    for y in 0..self.h {
                        let oy = y * self.s + dy;
                        let base = (co * self.ho + oy) * self.wo + dx;
                        for x in 0..self.w {
                            f(row * hw + y * self.w + x, base + x * self.s);
                        }
                    }
                }
            }
        }
    }
}

fn geometry(input: Shape, kernel: Shape, bias_len: Option<usize>, spec: &TransposeConv2dSpec) -> Result<Geometry> {
    if spec.kernel == 0 || spec.stride == 0 {
        return Err(Error::dim("kernel", "kernel and stride must be positive"));
    }
    if kernel.n != input.c {
        return Err(Error::dim(
            "c",
            format!("kernel expects {} input channels, input has {}", kernel.n, input.c),
        ));
    }
    if kernel.h != spec.kernel || kernel.w != spec.kernel {
        return Err(Error::dim(
            "kernel",
            format!("kernel is {}x{} but spec says {}x{}", kernel.h, kernel.w, spec.kernel, spec.kernel),
        ));
    }
    if let Some(b) = bias_len {
        if b != kernel.c {
            return Err(Error::dim("bias", format!("{b} bias values for {} output channels", kernel.c)));
        }
    }
    Ok(Geometry {
        n: input.n,
        cin: input.c,
        h: input.h,
        w: input.w,
        cout: kernel.c,
        k: spec.kernel,
        s: spec.stride,
        ho: spec.output_dim(input.h),
        wo: spec.output_dim(input.w),
    })
}

/// Scatter-add upsampling: every input pixel adds `in[n,ci,y,x]·k[ci,co,dy,dx]`
/// to `out[n,co,y·s+dy,x·s+dx]`. `kernel` is `[Cin, Cout, k, k]`.
pub fn transpose_conv2d<T: Element>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    spec: TransposeConv2dSpec,
) -> Result<Tensor<T>> {
    let g = geometry(input.shape(), kernel.shape(), Some(bias.len()), &spec)?;
    let hw = g.h * g.w;
    let m = g.taps();
    let weights: Vec<f64> = kernel.data().iter().map(|v| v.to_f64()).collect();
    let bias: Vec<f64> = bias.data().iter().map(|v| v.to_f64()).collect();
    let in_per = g.cin * hw;
    let out_per = g.cout * g.ho * g.wo;
    let mut out = vec![T::default(); g.n * out_per];

    out.par_chunks_mut(out_per)
        .zip(input.data().par_chunks(in_per))
        .for_each(|(dst, image)| {
            let image: Vec<f64> = image.iter().map(|v| v.to_f64()).collect();
            let mut cols = vec![0.0f64; m * hw];
            // cols = Kᵀ · X, with K viewed as Cin × (Cout·k·k).
            dgemm(m, g.cin, hw, &weights, Strides::transposed(m), &image, Strides::row_major(hw), 0.0, &mut cols, Strides::row_major(hw));
            let mut acc = vec![0.0f64; out_per];
            g.for_each(|c, o| acc[o] += cols[c]);
            let plane = g.ho * g.wo;
            for co in 0..g.cout {
                for (d, a) in dst[co * plane..(co + 1) * plane].iter_mut().zip(&acc[co * plane..]) {
                    *d = T::from_f64(bias[co] + a);
                }
            }
        });
    Tensor::new([g.n, g.cout, g.ho, g.wo], out)
}

#[derive(Clone, Debug)]
pub struct TransposeConv2dGrads<T: Element> {
    pub input: Tensor<T>,
    pub kernel: Tensor<T>,
    /// Shaped `[Cout, 1, 1, 1]`.
    pub bias: Tensor<T>,
}

pub fn transpose_conv2d_backward<T: Element>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    spec: TransposeConv2dSpec,
    grad_out: &Tensor<T>,
) -> Result<TransposeConv2dGrads<T>> {
    let g = geometry(input.shape(), kernel.shape(), None, &spec)?;
    let expected = Tensor::<T>::zeros([g.n, g.cout, g.ho, g.wo]);
    super::expect_same_shape("transpose conv output gradient", grad_out, &expected)?;
    let hw = g.h * g.w;
    let m = g.taps();
    let in_per = g.cin * hw;
    let out_per = g.cout * g.ho * g.wo;
    let plane = g.ho * g.wo;
    let weights: Vec<f64> = kernel.data().iter().map(|v| v.to_f64()).collect();

    let mut gk = vec![0.0f64; g.cin * m];
    let mut gb = vec![0.0f64; g.cout];
    let mut gin = Vec::with_capacity(g.n * in_per);
    let mut gcols = vec![0.0f64; m * hw];
    let mut gx = vec![0.0f64; in_per];
    for n in 0..g.n {
        let gout = &grad_out.data()[n * out_per..(n + 1) * out_per];
        for co in 0..g.cout {
            gb[co] += gout[co * plane..(co + 1) * plane].iter().map(|v| v.to_f64()).sum::<f64>();
        }
        g.for_each(|c, o| gcols[c] = gout[o].to_f64());
        let image: Vec<f64> = input.data()[n * in_per..(n + 1) * in_per].iter().map(|v| v.to_f64()).collect();
        // dX = K · gcols
        dgemm(g.cin, m, hw, &weights, Strides::row_major(m), &gcols, Strides::row_major(hw), 0.0, &mut gx, Strides::row_major(hw));
        gin.extend(gx.iter().map(|&v| T::from_f64(v)));
        // dK += X · gcolsᵀ
        dgemm(g.cin, hw, m, &image, Strides::row_major(hw), &gcols, Strides::transposed(hw), 1.0, &mut gk, Strides::row_major(m));
    }
    Ok(TransposeConv2dGrads {
        input: Tensor::new(input.shape(), gin)?,
        kernel: Tensor::new(kernel.shape(), gk.into_iter().map(T::from_f64).collect())?,
        bias: Tensor::new([g.cout, 1, 1, 1], gb.into_iter().map(T::from_f64).collect())?,
    })
}
