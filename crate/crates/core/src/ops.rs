//! Forward and backward kernels for the differentiable operations.
//!
//! These are plain functions over [`Tensor`] values; [`crate::autograd::Tape`]
//! records them and calls the matching backward kernel during replay. All
//! reductions run in a fixed loop order so results are bitwise reproducible.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Geometry of a 2-D convolution, resolved from input and kernel shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub stride: usize,
    pub padding: usize,
}

fn output_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if padded < kernel || !(padded - kernel).is_multiple_of(stride) {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

impl ConvGeometry {
    pub fn resolve(input: &[usize], weight: &[usize], bias: &[usize], stride: usize, padding: usize) -> Result<Self> {
        if input.len() != 4 || weight.len() != 4 {
            return Err(Error::shape(
                "conv2d",
                format!("expected rank-4 input and weight, got input {input:?} and weight {weight:?}"),
            ));
        }
        if stride == 0 {
            return Err(Error::shape("conv2d", "stride must be positive"));
        }
        let (batch, in_channels, in_h, in_w) = (input[0], input[1], input[2], input[3]);
        let (out_channels, kernel_c, kernel_h, kernel_w) = (weight[0], weight[1], weight[2], weight[3]);
        if kernel_c != in_channels {
            return Err(Error::shape(
                "conv2d",
                format!("weight {weight:?} expects {kernel_c} input channels but input {input:?} has {in_channels}"),
            ));
        }
        if bias != [out_channels] {
            return Err(Error::shape(
                "conv2d",
                format!("bias {bias:?} does not match weight {weight:?}"),
            ));
        }
        let extent = |size, kernel, axis: &str| {
            output_extent(size, kernel, stride, padding).ok_or_else(|| {
                Error::shape(
                    "conv2d",
                    format!(
                        "{axis} extent {size} with kernel {kernel}, stride {stride}, padding {padding} \
                         does not give an integral output extent (input {input:?}, weight {weight:?})"
                    ),
                )
            })
        };
        let out_h = extent(in_h, kernel_h, "height")?;
        let out_w = extent(in_w, kernel_w, "width")?;
        Ok(ConvGeometry {
            batch,
            in_channels,
            out_channels,
            in_h,
            in_w,
            kernel_h,
            kernel_w,
            out_h,
            out_w,
            stride,
            padding,
        })
    }

    /// Output positions `o` along one axis for which `o * stride + k - padding`
    /// lands inside `[0, size)`.
    fn valid_range(&self, k: usize, size: usize, out: usize) -> (usize, usize) {
        let (s, p) = (self.stride, self.padding);
        let lo = if k >= p { 0 } else { (p - k).div_ceil(s) };
        // largest o with o*s + k - p <= size - 1
        let hi = if size + p < k + 1 {
            0
        } else {
            ((size + p - k - 1) / s + 1).min(out)
        };
        (lo.min(hi), hi)
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.batch, self.out_channels, self.out_h, self.out_w]
    }
}

/// Cross-correlation of `input [N,C,H,W]` with `weight [O,C,kh,kw]`, zero
/// padding, plus a per-output-channel bias.
pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::resolve(input.shape(), weight.shape(), bias.shape(), stride, padding)?;
    let x = input.data();
    let w = weight.data();
    let in_plane = g.in_h * g.in_w;
    let out_plane = g.out_h * g.out_w;
    let mut out = vec![T::zero(); g.batch * g.out_channels * out_plane];

    for n in 0..g.batch {
        for o in 0..g.out_channels {
            let dst = &mut out[(n * g.out_channels + o) * out_plane..][..out_plane];
            dst.fill(bias.data()[o]);
            for c in 0..g.in_channels {
                let src = &x[(n * g.in_channels + c) * in_plane..][..in_plane];
                for ki in 0..g.kernel_h {
                    let (oy0, oy1) = g.valid_range(ki, g.in_h, g.out_h);
                    for kj in 0..g.kernel_w {
                        let wv = w[((o * g.in_channels + c) * g.kernel_h + ki) * g.kernel_w + kj];
                        let (ox0, ox1) = g.valid_range(kj, g.in_w, g.out_w);
                        for oy in oy0..oy1 {
                            let iy = oy * g.stride + ki - g.padding;
                            let row = &src[iy * g.in_w..][..g.in_w];
                            let out_row = &mut dst[oy * g.out_w..][..g.out_w];
                            for ox in ox0..ox1 {
                                out_row[ox] += wv * row[ox * g.stride + kj - g.padding];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(g.output_shape().to_vec(), out)
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let bias_shape = [weight.shape()[0]];
    let g = ConvGeometry::resolve(input.shape(), weight.shape(), &bias_shape, stride, padding)?;
    if grad_out.shape() != g.output_shape() {
        return Err(Error::shape(
            "conv2d backward",
            format!(
                "upstream gradient {:?} does not match output {:?}",
                grad_out.shape(),
                g.output_shape()
            ),
        ));
    }
    let x = input.data();
    let w = weight.data();
    let gy = grad_out.data();
    let in_plane = g.in_h * g.in_w;
    let out_plane = g.out_h * g.out_w;
    let mut gx = vec![T::zero(); x.len()];
    let mut gw = vec![T::zero(); w.len()];
    let mut gb = vec![T::zero(); g.out_channels];

    for n in 0..g.batch {
        for o in 0..g.out_channels {
            let up = &gy[(n * g.out_channels + o) * out_plane..][..out_plane];
            gb[o] += up.iter().fold(T::zero(), |acc, &v| acc + v);
            for c in 0..g.in_channels {
                let base = (n * g.in_channels + c) * in_plane;
                let src = &x[base..][..in_plane];
                let gsrc = &mut gx[base..][..in_plane];
                for ki in 0..g.kernel_h {
                    let (oy0, oy1) = g.valid_range(ki, g.in_h, g.out_h);
                    for kj in 0..g.kernel_w {
                        let widx = ((o * g.in_channels + c) * g.kernel_h + ki) * g.kernel_w + kj;
                        let wv = w[widx];
                        let (ox0, ox1) = g.valid_range(kj, g.in_w, g.out_w);
                        let mut acc = T::zero();
                        for oy in oy0..oy1 {
                            let iy = oy * g.stride + ki - g.padding;
                            let up_row = &up[oy * g.out_w..][..g.out_w];
                            for ox in ox0..ox1 {
                                let ix = iy * g.in_w + ox * g.stride + kj - g.padding;
                                acc += up_row[ox] * src[ix];
                                gsrc[ix] += wv * up_row[ox];
                            }
                        }
                        gw[widx] += acc;
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), gx)?,
        Tensor::new(weight.shape().to_vec(), gw)?,
        Tensor::new(bias_shape.to_vec(), gb)?,
    ))
}

/// Splits a rank-1 or rank-2 operand into `(rows, width)`.
fn linear_rows(op: &'static str, x: &[usize]) -> Result<(usize, usize)> {
    match *x {
        [n] => Ok((1, n)),
        [b, n] => Ok((b, n)),
        _ => Err(Error::shape(op, format!("expected [n] or [B, n] input, got {x:?}"))),
    }
}

/// `weight · x + bias` for `x [n]` or row-wise for `x [B, n]`.
pub fn linear<T: Element>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (rows, n) = linear_rows("linear", x.shape())?;
    let (m, wn) = match *weight.shape() {
        [m, wn] => (m, wn),
        _ => {
            return Err(Error::shape(
                "linear",
                format!("weight must be rank 2, got {:?}", weight.shape()),
            ))
        }
    };
    if wn != n {
        return Err(Error::shape(
            "linear",
            format!("weight {:?} cannot multiply input {:?}", weight.shape(), x.shape()),
        ));
    }
    if bias.shape() != [m] {
        return Err(Error::shape(
            "linear",
            format!("bias {:?} does not match weight {:?}", bias.shape(), weight.shape()),
        ));
    }
    let w = weight.data();
    let mut out = Vec::with_capacity(rows * m);
    for row in x.data().chunks_exact(n) {
        for (i, &b) in bias.data().iter().enumerate() {
            let dot = w[i * n..][..n]
                .iter()
                .zip(row)
                .fold(T::zero(), |acc, (&a, &v)| acc + a * v);
            out.push(dot + b);
        }
    }
    let shape = if x.rank() == 1 { vec![m] } else { vec![rows, m] };
    Tensor::new(shape, out)
}

pub fn linear_backward<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (_, n) = linear_rows("linear backward", x.shape())?;
    let m = weight.shape()[0];
    if grad_out.numel() != x.numel() / n * m {
        return Err(Error::shape(
            "linear backward",
            format!(
                "upstream gradient {:?} does not match input {:?}",
                grad_out.shape(),
                x.shape()
            ),
        ));
    }
    let w = weight.data();
    let mut gx = vec![T::zero(); x.numel()];
    let mut gw = vec![T::zero(); w.len()];
    let mut gb = vec![T::zero(); m];
    for ((row, up), gx_row) in x
        .data()
        .chunks_exact(n)
        .zip(grad_out.data().chunks_exact(m))
        .zip(gx.chunks_exact_mut(n))
    {
        for (i, &g) in up.iter().enumerate() {
            gb[i] += g;
            let w_row = &w[i * n..][..n];
            let gw_row = &mut gw[i * n..][..n];
            for j in 0..n {
                gw_row[j] += g * row[j];
                gx_row[j] += g * w_row[j];
            }
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), gx)?,
        Tensor::new(weight.shape().to_vec(), gw)?,
        Tensor::new(vec![m], gb)?,
    ))
}

pub fn relu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Subgradient 0 at exactly 0.
pub fn relu_backward<T: Element>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("relu backward keeps the input shape")
}

pub fn add<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary("add", a, b, |x, y| x + y)
}

pub fn mul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary("mul", a, b, |x, y| x * y)
}

fn binary<T: Element>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("shapes {:?} and {:?} differ", a.shape(), b.shape()),
        ));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// Joins `parts` along `axis`; every other extent must agree.
pub fn concat<T: Element>(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = parts.first().ok_or_else(|| Error::shape("concat", "no parts given"))?;
    let rank = first.rank();
    if axis >= rank {
        return Err(Error::shape(
            "concat",
            format!("axis {axis} out of range for rank {rank}"),
        ));
    }
    for (i, p) in parts.iter().enumerate().skip(1) {
        let compatible = p.rank() == rank
            && p.shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(ax, (a, b))| ax == axis || a == b);
        if !compatible {
            return Err(Error::shape(
                "concat",
                format!(
                    "part {i} has shape {:?}, incompatible with part 0 shape {:?} along axis {axis}",
                    p.shape(),
                    first.shape()
                ),
            ));
        }
    }
    let outer: usize = first.shape()[..axis].iter().product();
    let inner: usize = first.shape()[axis + 1..].iter().product();
    let total: usize = parts.iter().map(|p| p.shape()[axis]).sum();
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for p in parts {
            let chunk = p.shape()[axis] * inner;
            data.extend_from_slice(&p.data()[o * chunk..][..chunk]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    Tensor::new(shape, data)
}

/// Inverse of [`concat`]: cuts `x` along `axis` into pieces of the given extents.
pub fn split<T: Element>(x: &Tensor<T>, axis: usize, sizes: &[usize]) -> Result<Vec<Tensor<T>>> {
    if axis >= x.rank() {
        return Err(Error::shape(
            "split",
            format!("axis {axis} out of range for shape {:?}", x.shape()),
        ));
    }
    if sizes.iter().sum::<usize>() != x.shape()[axis] || sizes.contains(&0) {
        return Err(Error::shape(
            "split",
            format!("sizes {sizes:?} do not partition axis {axis} of {:?}", x.shape()),
        ));
    }
    let outer: usize = x.shape()[..axis].iter().product();
    let inner: usize = x.shape()[axis + 1..].iter().product();
    let row = x.shape()[axis] * inner;
    let mut pieces = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for &size in sizes {
        let mut data = Vec::with_capacity(outer * size * inner);
        for o in 0..outer {
            data.extend_from_slice(&x.data()[o * row + start * inner..][..size * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = size;
        pieces.push(Tensor::new(shape, data)?);
        start += size;
    }
    Ok(pieces)
}

/// Row-major linearization to a rank-1 tensor.
pub fn flatten<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.reshape(&[x.numel()]).expect("numel is preserved")
}

/// Mean absolute residual over every element.
pub fn l1_loss<T: Element>(pred: &Tensor<T>, truth: &Tensor<T>) -> Result<T> {
    if pred.shape() != truth.shape() {
        return Err(Error::shape(
            "l1_loss",
            format!("prediction {:?} and target {:?} differ", pred.shape(), truth.shape()),
        ));
    }
    let total = pred
        .data()
        .iter()
        .zip(truth.data())
        .fold(T::zero(), |acc, (&p, &t)| acc + (p - t).abs());
    Ok(total / T::from_f64(pred.numel() as f64))
}

/// Gradient of [`l1_loss`] with respect to `pred`, scaled by `upstream`.
/// Uses subgradient 0 where the residual is exactly 0.
pub fn l1_loss_backward<T: Element>(pred: &Tensor<T>, truth: &Tensor<T>, upstream: T) -> Tensor<T> {
    let scale = upstream / T::from_f64(pred.numel() as f64);
    let data = pred
        .data()
        .iter()
        .zip(truth.data())
        .map(|(&p, &t)| {
            let r = p - t;
            if r > T::zero() {
                scale
            } else if r < T::zero() {
                -scale
            } else {
                T::zero()
            }
        })
        .collect();
    Tensor::new(pred.shape().to_vec(), data).expect("same shape as prediction")
}
