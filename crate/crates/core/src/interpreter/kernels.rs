//! Reference kernels over [`DenseTensor`], generic in the element type.
//!
//! Arithmetic kernels take any [`Scalar`]; layout kernels only need `Copy`.
//! Convolutions and softmax accumulate in f64.

use thiserror::Error;

use crate::ir::ConvGeometry;
use crate::scalar::Scalar;
use crate::tensor::{numel, strides, DenseTensor, TensorError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KernelError {
    #[error("{0}")]
    Shape(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

fn shape_err<T>(msg: impl Into<String>) -> Result<T, KernelError> {
    Err(KernelError::Shape(msg.into()))
}

/// Strides that map an output multi-index onto `operand` when it is
/// broadcast against `out` (size-1 and missing leading dims get stride 0).
fn broadcast_strides(operand: &[usize], out: &[usize]) -> Vec<usize> {
    if numel(operand) == 1 {
        return vec![0; out.len()];
    }
    let own = strides(operand);
    let lead = out.len() - operand.len();
    (0..out.len())
        .map(|i| {
            if i < lead || operand[i - lead] == 1 {
                0
            } else {
                own[i - lead]
            }
        })
        .collect()
}

/// Elementwise `f(a, b)` with the restricted broadcasting of the IR.
pub fn binary<T: Copy>(
    a: &DenseTensor<T>,
    b: &DenseTensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<DenseTensor<T>, KernelError> {
    let Some(out_shape) = crate::ir::broadcast_shape(a.shape(), b.shape()) else {
        return shape_err(format!(
            "operands {:?} and {:?} are not broadcast-compatible",
            a.shape(),
            b.shape()
        ));
    };
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Ok(DenseTensor::new(out_shape, data)?);
    }
    let sa = broadcast_strides(a.shape(), &out_shape);
    let sb = broadcast_strides(b.shape(), &out_shape);
    let n = numel(&out_shape);
    let mut index = vec![0usize; out_shape.len()];
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        let ia: usize = index.iter().zip(&sa).map(|(i, s)| i * s).sum();
        let ib: usize = index.iter().zip(&sb).map(|(i, s)| i * s).sum();
        data.push(f(a.data()[ia], b.data()[ib]));
        for d in (0..index.len()).rev() {
            index[d] += 1;
            if index[d] < out_shape[d] {
                break;
            }
            index[d] = 0;
        }
    }
    Ok(DenseTensor::new(out_shape, data)?)
}

pub fn relu<T: Scalar>(x: &DenseTensor<T>) -> DenseTensor<T> {
    x.map(|&v| if v > T::zero() { v } else { T::zero() })
}

pub fn neg<T: Scalar>(x: &DenseTensor<T>) -> DenseTensor<T> {
    x.map(|&v| -v)
}

/// Softmax along `axis`, shifted by the per-slice maximum before exponentiating.
pub fn softmax<T: Scalar>(x: &DenseTensor<T>, axis: usize) -> Result<DenseTensor<T>, KernelError> {
    let shape = x.shape();
    if axis >= shape.len() {
        return shape_err(format!("softmax axis {axis} out of range for {shape:?}"));
    }
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let src = x.data();
    let mut out = vec![T::zero(); src.len()];
    let mut exps = vec![0f64; len];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| o * len * inner + k * inner + i;
            let max = (0..len).map(|k| src[at(k)].widen()).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (k, e) in exps.iter_mut().enumerate() {
                *e = (src[at(k)].widen() - max).exp();
                sum += *e;
            }
            for (k, e) in exps.iter().enumerate() {
                out[at(k)] = T::narrow(e / sum);
            }
        }
    }
    Ok(DenseTensor::new(shape.to_vec(), out)?)
}

fn conv_operand_check<T>(
    x: &DenseTensor<T>,
    w: &DenseTensor<T>,
    bias: Option<&DenseTensor<T>>,
    geometry: &ConvGeometry,
    transposed: bool,
) -> Result<(), KernelError> {
    let g = geometry;
    let w_expect = if transposed {
        [g.in_channels, g.out_channels, g.kernel_h, g.kernel_w]
    } else {
        [g.out_channels, g.in_channels, g.kernel_h, g.kernel_w]
    };
    if x.shape() != [g.batch, g.in_channels, g.in_h, g.in_w] || w.shape() != w_expect {
        return shape_err(format!(
            "convolution operands {:?} / {:?} disagree with geometry",
            x.shape(),
            w.shape()
        ));
    }
    if let Some(b) = bias {
        if b.shape() != [g.out_channels] {
            return shape_err(format!("bias shape {:?}", b.shape()));
        }
    }
    Ok(())
}

/// Direct NCHW convolution, weights `[Cout, Cin, kH, kW]`, symmetric zero padding.
pub fn conv2d<T: Scalar>(
    x: &DenseTensor<T>,
    w: &DenseTensor<T>,
    bias: Option<&DenseTensor<T>>,
    geometry: &ConvGeometry,
) -> Result<DenseTensor<T>, KernelError> {
    conv_operand_check(x, w, bias, geometry, false)?;
    let g = geometry;
    let (xd, wd) = (x.data(), w.data());
    let plane = g.in_h * g.in_w;
    let kplane = g.kernel_h * g.kernel_w;
    let mut out = Vec::with_capacity(g.batch * g.out_channels * g.out_h * g.out_w);
    for n in 0..g.batch {
        let xn = &xd[n * g.in_channels * plane..(n + 1) * g.in_channels * plane];
        for co in 0..g.out_channels {
            let wco = &wd[co * g.in_channels * kplane..(co + 1) * g.in_channels * kplane];
            let b = bias.map_or(0.0, |b| b.data()[co].widen());
            for oh in 0..g.out_h {
                for ow in 0..g.out_w {
                    let mut acc = b;
                    for kh in 0..g.kernel_h {
                        let Some(ih) = (oh * g.stride + kh).checked_sub(g.padding) else {
                            continue;
                        };
                        if ih >= g.in_h {
                            continue;
                        }
                        for kw in 0..g.kernel_w {
                            let Some(iw) = (ow * g.stride + kw).checked_sub(g.padding) else {
                                continue;
                            };
                            if iw >= g.in_w {
                                continue;
                            }
                            for ci in 0..g.in_channels {
                                acc += xn[ci * plane + ih * g.in_w + iw].widen()
                                    * wco[ci * kplane + kh * g.kernel_w + kw].widen();
                            }
                        }
                    }
                    out.push(T::narrow(acc));
                }
            }
        }
    }
    Ok(DenseTensor::new(vec![g.batch, g.out_channels, g.out_h, g.out_w], out)?)
}

/// Transposed NCHW convolution, weights `[Cin, Cout, kH, kW]`.
///
/// Gather form: each output pixel collects the input pixels whose scattered
/// kernel window covers it.
pub fn conv_transpose2d<T: Scalar>(
    x: &DenseTensor<T>,
    w: &DenseTensor<T>,
    bias: Option<&DenseTensor<T>>,
    geometry: &ConvGeometry,
) -> Result<DenseTensor<T>, KernelError> {
    conv_operand_check(x, w, bias, geometry, true)?;
    let g = geometry;
    let (xd, wd) = (x.data(), w.data());
    let plane = g.in_h * g.in_w;
    let kplane = g.kernel_h * g.kernel_w;
    // (input index, kernel index) pairs contributing to output coordinate `o`
    let taps = |o: usize, k: usize, size: usize| -> Vec<(usize, usize)> {
        (0..k)
            .filter_map(|kk| {
                let pos = (o + g.padding).checked_sub(kk)?;
                (pos % g.stride == 0 && pos / g.stride < size).then_some((pos / g.stride, kk))
            })
            .collect()
    };
    let rows: Vec<_> = (0..g.out_h).map(|oh| taps(oh, g.kernel_h, g.in_h)).collect();
    let cols: Vec<_> = (0..g.out_w).map(|ow| taps(ow, g.kernel_w, g.in_w)).collect();
    let mut out = Vec::with_capacity(g.batch * g.out_channels * g.out_h * g.out_w);
    for n in 0..g.batch {
        for co in 0..g.out_channels {
            let b = bias.map_or(0.0, |b| b.data()[co].widen());
            for row in &rows {
                for col in &cols {
                    let mut acc = b;
                    for ci in 0..g.in_channels {
                        let xbase = (n * g.in_channels + ci) * plane;
                        let wbase = (ci * g.out_channels + co) * kplane;
                        for &(ih, kh) in row {
                            for &(iw, kw) in col {
                                acc += xd[xbase + ih * g.in_w + iw].widen() * wd[wbase + kh * g.kernel_w + kw].widen();
                            }
                        }
                    }
                    out.push(T::narrow(acc));
                }
            }
        }
    }
    Ok(DenseTensor::new(vec![g.batch, g.out_channels, g.out_h, g.out_w], out)?)
}

pub fn transpose<T: Copy>(x: &DenseTensor<T>, perm: &[usize]) -> Result<DenseTensor<T>, KernelError> {
    let shape = x.shape();
    if perm.len() != shape.len() {
        return shape_err(format!("perm {perm:?} for shape {shape:?}"));
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides = strides(shape);
    // stride in the source for each output axis
    let walk: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
    let n = x.numel();
    let mut index = vec![0usize; out_shape.len()];
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        let src: usize = index.iter().zip(&walk).map(|(i, s)| i * s).sum();
        data.push(x.data()[src]);
        for d in (0..index.len()).rev() {
            index[d] += 1;
            if index[d] < out_shape[d] {
                break;
            }
            index[d] = 0;
        }
    }
    Ok(DenseTensor::new(out_shape, data)?)
}

pub fn concat<T: Copy>(xs: &[&DenseTensor<T>], axis: usize) -> Result<DenseTensor<T>, KernelError> {
    let Some(first) = xs.first() else {
        return shape_err("concat of nothing");
    };
    let rank = first.rank();
    if axis >= rank {
        return shape_err(format!("concat axis {axis} for rank {rank}"));
    }
    let outer: usize = first.shape()[..axis].iter().product();
    let mut out_shape = first.shape().to_vec();
    out_shape[axis] = 0;
    for x in xs {
        let ok = x.rank() == rank && (0..rank).all(|d| d == axis || x.shape()[d] == first.shape()[d]);
        if !ok {
            return shape_err(format!("cannot concat {:?} with {:?}", first.shape(), x.shape()));
        }
        out_shape[axis] += x.shape()[axis];
    }
    let mut data = Vec::with_capacity(numel(&out_shape));
    for o in 0..outer {
        for x in xs {
            let chunk: usize = x.shape()[axis..].iter().product();
            data.extend_from_slice(&x.data()[o * chunk..(o + 1) * chunk]);
        }
    }
    Ok(DenseTensor::new(out_shape, data)?)
}

/// Copy out the hyper-rectangle `ranges[d] = [start, end)`.
pub fn slice<T: Copy>(x: &DenseTensor<T>, ranges: &[(usize, usize)]) -> Result<DenseTensor<T>, KernelError> {
    let shape = x.shape();
    if ranges.len() != shape.len() || ranges.iter().zip(shape).any(|(&(s, e), &d)| s >= e || e > d) {
        return shape_err(format!("slice {ranges:?} out of bounds for {shape:?}"));
    }
    let out_shape: Vec<usize> = ranges.iter().map(|(s, e)| e - s).collect();
    let src_strides = strides(shape);
    let n = numel(&out_shape);
    let mut index = vec![0usize; shape.len()];
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        let src: usize = index
            .iter()
            .zip(ranges)
            .zip(&src_strides)
            .map(|((i, (s, _)), st)| (i + s) * st)
            .sum();
        data.push(x.data()[src]);
        for d in (0..index.len()).rev() {
            index[d] += 1;
            if index[d] < out_shape[d] {
                break;
            }
            index[d] = 0;
        }
    }
    Ok(DenseTensor::new(out_shape, data)?)
}

/// DCR depth-to-space: channel `(i * b + j) * C + c` moves to pixel offset `(i, j)`.
pub fn depth_to_space<T: Copy>(x: &DenseTensor<T>, block: usize) -> Result<DenseTensor<T>, KernelError> {
    let s = x.shape();
    if s.len() != 4 || block == 0 || !s[1].is_multiple_of(block * block) {
        return shape_err(format!("depth_to_space({block}) on {s:?}"));
    }
    let (n, cin, h, w) = (s[0], s[1], s[2], s[3]);
    let c = cin / (block * block);
    let (oh, ow) = (h * block, w * block);
    let mut data = Vec::with_capacity(x.numel());
    for b in 0..n {
        for ch in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    let (i, j) = (y % block, xx % block);
                    let src_c = (i * block + j) * c + ch;
                    data.push(x.data()[((b * cin + src_c) * h + y / block) * w + xx / block]);
                }
            }
        }
    }
    Ok(DenseTensor::new(vec![n, c, oh, ow], data)?)
}
