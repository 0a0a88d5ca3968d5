//! Convolution and transposed convolution kernels (im2col + GEMM).
//!
//! Kernels for `conv2d` have shape `(out, in, f, f)`. Kernels for
//! `conv_transpose2d` have shape `(in, out, f, f)`, so the transposed
//! convolution with kernel `K` is exactly the adjoint of `conv2d` with `K`.
//! Padding is zero padding. Work is split over batch items only; every output
//! element is computed by the same sequence of operations whatever the
//! number of worker threads.

use rayon::prelude::*;

use super::{Real, Shape, Tensor};
use crate::error::{dim_err, Result};

/// Square kernel geometry: filter size, stride and zero padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub const fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        ConvGeometry {
            kernel,
            stride,
            padding,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 {
            return Err(dim_err!(
                "kernel size and stride must be positive, got {:?}",
                self
            ));
        }
        Ok(())
    }

    /// Output extent of a convolution over an input extent of `n`.
    pub fn conv_out(&self, n: usize) -> Result<usize> {
        self.validate()?;
        let padded = n + 2 * self.padding;
        if padded < self.kernel {
            return Err(dim_err!(
                "input extent {n} with padding {} is smaller than kernel {}",
                self.padding,
                self.kernel
            ));
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }

    /// Output extent of a transposed convolution over an input extent of `n`.
    pub fn deconv_out(&self, n: usize) -> Result<usize> {
        self.validate()?;
        let grown = n.saturating_sub(1) * self.stride + self.kernel;
        if n == 0 || grown <= 2 * self.padding {
            return Err(dim_err!(
                "transposed convolution {:?} of extent {n} has nonpositive output size",
                self
            ));
        }
        Ok(grown - 2 * self.padding)
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Spatial bookkeeping shared by im2col and col2im: an image of
/// `channels x height x width` sampled on a grid of `out_h x out_w` windows.
#[derive(Clone, Copy, Debug)]
struct Patches {
    channels: usize,
    height: usize,
    width: usize,
    out_h: usize,
    out_w: usize,
    geom: ConvGeometry,
}

impl Patches {
    fn rows(&self) -> usize {
        self.channels * self.geom.kernel * self.geom.kernel
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Input coordinate touched by output index `o` and kernel tap `k`.
    #[inline]
    fn source(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.geom.stride + k) as isize - self.geom.padding as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }

    fn im2col<T: Real>(&self, image: &[T], cols: &mut [T]) {
        let f = self.geom.kernel;
        let ncols = self.cols();
        for c in 0..self.channels {
            let plane = &image[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ky in 0..f {
                for kx in 0..f {
                    let row = (c * f + ky) * f + kx;
                    let dst = &mut cols[row * ncols..(row + 1) * ncols];
                    for oy in 0..self.out_h {
                        let line = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        match self.source(oy, ky, self.height) {
                            Some(iy) => {
                                let src = &plane[iy * self.width..(iy + 1) * self.width];
                                for (ox, v) in line.iter_mut().enumerate() {
                                    *v = match self.source(ox, kx, self.width) {
                                        Some(ix) => src[ix],
                                        None => T::zero(),
                                    };
                                }
                            }
                            None => line.fill(T::zero()),
                        }
                    }
                }
            }
        }
    }

    /// Scatter-add columns back onto the image (adjoint of `im2col`).
    fn col2im<T: Real>(&self, cols: &[T], image: &mut [T]) {
        let f = self.geom.kernel;
        let ncols = self.cols();
        for c in 0..self.channels {
            let plane =
                &mut image[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ky in 0..f {
                for kx in 0..f {
                    let row = (c * f + ky) * f + kx;
                    let src = &cols[row * ncols..(row + 1) * ncols];
                    for oy in 0..self.out_h {
                        let Some(iy) = self.source(oy, ky, self.height) else {
                            continue;
                        };
                        let dst = &mut plane[iy * self.width..(iy + 1) * self.width];
                        let line = &src[oy * self.out_w..(oy + 1) * self.out_w];
                        for (ox, &v) in line.iter().enumerate() {
                            if let Some(ix) = self.source(ox, kx, self.width) {
                                dst[ix] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn check_rank(shape: &Shape, what: &str) -> Result<()> {
    if shape.contains(&0) {
        return Err(dim_err!("{what} has an empty dimension: {:?}", shape));
    }
    Ok(())
}

fn check_kernel<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: ConvGeometry,
    transposed: bool,
) -> Result<usize> {
    check_rank(&input.shape(), "input")?;
    let [k0, k1, kh, kw] = kernel.shape();
    if kh != geom.kernel || kw != geom.kernel {
        return Err(dim_err!(
            "kernel spatial size {kh}x{kw} does not match geometry {:?}",
            geom
        ));
    }
    let (cin, cout) = if transposed { (k0, k1) } else { (k1, k0) };
    if input.channels() != cin {
        return Err(dim_err!(
            "input has {} channels but kernel {:?} expects {cin}",
            input.channels(),
            kernel.shape()
        ));
    }
    if let Some(b) = bias {
        if b.shape() != [1, cout, 1, 1] {
            return Err(dim_err!(
                "bias shape {:?} does not match {cout} output channels",
                b.shape()
            ));
        }
    }
    Ok(cout)
}

fn add_bias<T: Real>(out: &mut [T], bias: Option<&Tensor<T>>, plane: usize) {
    if let Some(b) = bias {
        for (chunk, &bv) in out.chunks_mut(plane).zip(b.data()) {
            chunk.iter_mut().for_each(|v| *v += bv);
        }
    }
}

fn bias_grad<T: Real>(grad_out: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = grad_out.shape();
    let mut db = Tensor::zeros([1, c, 1, 1]);
    let hw = h * w;
    for item in 0..n {
        for ch in 0..c {
            let s: T = grad_out.data()[(item * c + ch) * hw..(item * c + ch + 1) * hw]
                .iter()
                .copied()
                .sum();
            db.data_mut()[ch] += s;
        }
    }
    db
}

fn sum_in_order<T: Real>(parts: Vec<Vec<T>>, shape: Shape) -> Tensor<T> {
    let mut total = Tensor::zeros(shape);
    for part in parts {
        for (a, b) in total.data_mut().iter_mut().zip(part) {
            *a += b;
        }
    }
    total
}

/// 2-D cross-correlation with zero padding.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: ConvGeometry,
) -> Result<Tensor<T>> {
    let cout = check_kernel(input, kernel, bias, geom, false)?;
    let [n, cin, h, w] = input.shape();
    let (ho, wo) = (geom.conv_out(h)?, geom.conv_out(w)?);
    let patches = Patches {
        channels: cin,
        height: h,
        width: w,
        out_h: ho,
        out_w: wo,
        geom,
    };
    let (k, ncols) = (patches.rows(), patches.cols());
    let mut out = Tensor::zeros([n, cout, ho, wo]);
    out.data_mut()
        .par_chunks_mut(cout * ncols)
        .enumerate()
        .for_each(|(item, dst)| {
            let x = input.item(item);
            let mut buf;
            let cols: &[T] = if geom.is_pointwise() {
                x
            } else {
                buf = vec![T::zero(); k * ncols];
                patches.im2col(x, &mut buf);
                &buf
            };
            T::gemm(
                cout,
                k,
                ncols,
                T::one(),
                kernel.data(),
                k as isize,
                1,
                cols,
                ncols as isize,
                1,
                T::zero(),
                dst,
                ncols as isize,
                1,
            );
            add_bias(dst, bias, ncols);
        });
    Ok(out)
}

/// Gradients of `conv2d` with respect to input, kernel and bias.
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub kernel: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    geom: ConvGeometry,
    need: [bool; 3],
) -> ConvGrads<T> {
    let [n, cin, h, w] = input.shape();
    let [_, cout, ho, wo] = grad_out.shape();
    let patches = Patches {
        channels: cin,
        height: h,
        width: w,
        out_h: ho,
        out_w: wo,
        geom,
    };
    let (k, ncols) = (patches.rows(), patches.cols());
    let [need_x, need_k, need_b] = need;

    let per_item: Vec<(Option<Vec<T>>, Option<Vec<T>>)> = (0..n)
        .into_par_iter()
        .map(|item| {
            let dy = grad_out.item(item);
            let dx = need_x.then(|| {
                let mut dx = vec![T::zero(); cin * h * w];
                if geom.is_pointwise() {
                    T::gemm(
                        k,
                        cout,
                        ncols,
                        T::one(),
                        kernel.data(),
                        1,
                        k as isize,
                        dy,
                        ncols as isize,
                        1,
                        T::zero(),
                        &mut dx,
                        ncols as isize,
                        1,
                    );
                } else {
                    let mut dcols = vec![T::zero(); k * ncols];
                    T::gemm(
                        k,
                        cout,
                        ncols,
                        T::one(),
                        kernel.data(),
                        1,
                        k as isize,
                        dy,
                        ncols as isize,
                        1,
                        T::zero(),
                        &mut dcols,
                        ncols as isize,
                        1,
                    );
                    patches.col2im(&dcols, &mut dx);
                }
                dx
            });
            let dk = need_k.then(|| {
                let x = input.item(item);
                let mut buf;
                let cols: &[T] = if geom.is_pointwise() {
                    x
                } else {
                    buf = vec![T::zero(); k * ncols];
                    patches.im2col(x, &mut buf);
                    &buf
                };
                let mut dk = vec![T::zero(); cout * k];
                T::gemm(
                    cout,
                    ncols,
                    k,
                    T::one(),
                    dy,
                    ncols as isize,
                    1,
                    cols,
                    1,
                    ncols as isize,
                    T::zero(),
                    &mut dk,
                    k as isize,
                    1,
                );
                dk
            });
            (dx, dk)
        })
        .collect();

    let mut dx_parts = Vec::new();
    let mut dk_parts = Vec::new();
    for (dx, dk) in per_item {
        dx_parts.extend(dx);
        dk_parts.extend(dk);
    }
    ConvGrads {
        input: need_x
            .then(|| Tensor::from_vec(input.shape(), dx_parts.concat()).expect("dx shape")),
        kernel: need_k.then(|| sum_in_order(dk_parts, kernel.shape())),
        bias: need_b.then(|| bias_grad(grad_out)),
    }
}

/// Transposed convolution ("deconvolution"), the adjoint of [`conv2d`].
pub fn conv_transpose2d<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: ConvGeometry,
) -> Result<Tensor<T>> {
    let cout = check_kernel(input, kernel, bias, geom, true)?;
    let [n, cin, h, w] = input.shape();
    let (ho, wo) = (geom.deconv_out(h)?, geom.deconv_out(w)?);
    let patches = Patches {
        channels: cout,
        height: ho,
        width: wo,
        out_h: h,
        out_w: w,
        geom,
    };
    let (k, ncols) = (patches.rows(), patches.cols());
    let mut out = Tensor::zeros([n, cout, ho, wo]);
    out.data_mut()
        .par_chunks_mut(cout * ho * wo)
        .enumerate()
        .for_each(|(item, dst)| {
            let x = input.item(item);
            if geom.is_pointwise() {
                T::gemm(
                    k,
                    cin,
                    ncols,
                    T::one(),
                    kernel.data(),
                    1,
                    k as isize,
                    x,
                    ncols as isize,
                    1,
                    T::zero(),
                    dst,
                    ncols as isize,
                    1,
                );
            } else {
                let mut cols = vec![T::zero(); k * ncols];
                T::gemm(
                    k,
                    cin,
                    ncols,
                    T::one(),
                    kernel.data(),
                    1,
                    k as isize,
                    x,
                    ncols as isize,
                    1,
                    T::zero(),
                    &mut cols,
                    ncols as isize,
                    1,
                );
                patches.col2im(&cols, dst);
            }
            add_bias(dst, bias, ho * wo);
        });
    Ok(out)
}

pub fn conv_transpose2d_backward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    geom: ConvGeometry,
    need: [bool; 3],
) -> ConvGrads<T> {
    let [n, cin, h, w] = input.shape();
    let [_, cout, ho, wo] = grad_out.shape();
    let patches = Patches {
        channels: cout,
        height: ho,
        width: wo,
        out_h: h,
        out_w: w,
        geom,
    };
    let (k, ncols) = (patches.rows(), patches.cols());
    let [need_x, need_k, need_b] = need;

    let per_item: Vec<(Option<Vec<T>>, Option<Vec<T>>)> = (0..n)
        .into_par_iter()
        .map(|item| {
            let dy = grad_out.item(item);
            let mut buf;
            let dcols: &[T] = if geom.is_pointwise() {
                dy
            } else {
                buf = vec![T::zero(); k * ncols];
                patches.im2col(dy, &mut buf);
                &buf
            };
            let dx = need_x.then(|| {
                let mut dx = vec![T::zero(); cin * ncols];
                T::gemm(
                    cin,
                    k,
                    ncols,
                    T::one(),
                    kernel.data(),
                    k as isize,
                    1,
                    dcols,
                    ncols as isize,
                    1,
                    T::zero(),
                    &mut dx,
                    ncols as isize,
                    1,
                );
                dx
            });
            let dk = need_k.then(|| {
                let x = input.item(item);
                let mut dk = vec![T::zero(); cin * k];
                T::gemm(
                    cin,
                    ncols,
                    k,
                    T::one(),
                    x,
                    ncols as isize,
                    1,
                    dcols,
                    1,
                    ncols as isize,
                    T::zero(),
                    &mut dk,
                    k as isize,
                    1,
                );
                dk
            });
            (dx, dk)
        })
        .collect();

    let mut dx_parts = Vec::new();
    let mut dk_parts = Vec::new();
    for (dx, dk) in per_item {
        dx_parts.extend(dx);
        dk_parts.extend(dk);
    }
    ConvGrads {
        input: need_x
            .then(|| Tensor::from_vec(input.shape(), dx_parts.concat()).expect("dx shape")),
        kernel: need_k.then(|| sum_in_order(dk_parts, kernel.shape())),
        bias: need_b.then(|| bias_grad(grad_out)),
    }
}
