//! Raw loops behind the convolution and dense ops.
//!
//! All layouts are row-major: conv1d activations are `[batch, channels, length]`,
//! conv1d kernels `[c_out, c_in, k]`, conv2d activations `[batch, channels, h, w]`
//! and conv2d kernels `[c_out, c_in, kh, kw]`. Convolutions are cross-correlations.

use crate::error::{AutodiffError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding such that `out = ceil(in / stride)`.
    Same,
    /// No padding, `out = (in - k) / stride + 1`.
    Valid,
}

/// Output length and left padding of one spatial axis.
pub fn axis_geometry(
    op: &'static str,
    len: usize,
    k: usize,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize)> {
    if stride == 0 {
        return Err(AutodiffError::invalid(op, "stride must be >= 1"));
    }
    if k % 2 == 0 {
        return Err(AutodiffError::invalid(op, format!("kernel size {k} must be odd")));
    }
    if len == 0 {
        return Err(AutodiffError::shape(op, "input length is zero"));
    }
    match padding {
        Padding::Same => {
            let out = len.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(len);
            Ok((out, total / 2))
        }
        Padding::Valid => {
            if len < k {
                return Err(AutodiffError::shape(
                    op,
                    format!("input length {len} shorter than kernel {k} with valid padding"),
                ));
            }
            Ok(((len - k) / stride + 1, 0))
        }
    }
}

/// Range of output positions `l` with `0 <= l*stride + shift < len`.
#[inline]
fn valid_range(out_len: usize, stride: usize, shift: isize, len: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if shift >= 0 { 0 } else { ((-shift) + s - 1) / s };
    let last = len as isize - 1 - shift;
    if last < 0 {
        return (0, 0);
    }
    let hi = ((last / s) + 1).min(out_len as isize);
    let lo = lo.min(hi);
    (lo as usize, hi as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv1dGeom {
    pub batch: usize,
    pub c_in: usize,
    pub len: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_len: usize,
}

impl Conv1dGeom {
    pub fn new(
        x_shape: &[usize],
        w_shape: &[usize],
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        const OP: &str = "conv1d";
        if x_shape.len() != 3 {
            return Err(AutodiffError::shape(OP, format!("x must be [batch, channels_in, length], got {x_shape:?}")));
        }
        if w_shape.len() != 3 {
            return Err(AutodiffError::shape(OP, format!("w must be [channels_out, channels_in, k], got {w_shape:?}")));
        }
        if x_shape[1] != w_shape[1] {
            return Err(AutodiffError::shape(
                OP,
                format!("channels_in of x ({}) != channels_in of w ({})", x_shape[1], w_shape[1]),
            ));
        }
        let (out_len, pad) = axis_geometry(OP, x_shape[2], w_shape[2], stride, padding)?;
        Ok(Self {
            batch: x_shape[0],
            c_in: x_shape[1],
            len: x_shape[2],
            c_out: w_shape[0],
            k: w_shape[2],
            stride,
            pad,
            out_len,
        })
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.batch, self.c_out, self.out_len]
    }
}

pub fn conv1d_forward(g: &Conv1dGeom, x: &[f64], w: &[f64], b: Option<&[f64]>, out: &mut [f64]) {
    let Conv1dGeom { batch, c_in, len, c_out, k, stride, pad, out_len } = *g;
    for bi in 0..batch {
        for co in 0..c_out {
            let orow = &mut out[(bi * c_out + co) * out_len..][..out_len];
            orow.fill(b.map_or(0.0, |b| b[co]));
            for ci in 0..c_in {
                let xrow = &x[(bi * c_in + ci) * len..][..len];
                let wrow = &w[(co * c_in + ci) * k..][..k];
                for (kk, &wv) in wrow.iter().enumerate() {
                    let shift = kk as isize - pad as isize;
                    let (lo, hi) = valid_range(out_len, stride, shift, len);
                    if lo >= hi {
                        continue;
                    }
                    if stride == 1 {
                        let off = (lo as isize + shift) as usize;
                        for (o, xv) in orow[lo..hi].iter_mut().zip(&xrow[off..off + hi - lo]) {
                            *o += wv * xv;
                        }
                    } else {
                        for (l, o) in orow.iter_mut().enumerate().take(hi).skip(lo) {
                            *o += wv * xrow[(l as isize * stride as isize + shift) as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates input, weight and bias gradients. `dx` may be skipped.
pub fn conv1d_backward(
    g: &Conv1dGeom,
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    mut dx: Option<&mut [f64]>,
    mut dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    let Conv1dGeom { batch, c_in, len, c_out, k, stride, pad, out_len } = *g;
    if let Some(db) = db {
        for bi in 0..batch {
            for co in 0..c_out {
                db[co] += dy[(bi * c_out + co) * out_len..][..out_len].iter().sum::<f64>();
            }
        }
    }
    for bi in 0..batch {
        for co in 0..c_out {
            let drow = &dy[(bi * c_out + co) * out_len..][..out_len];
            for ci in 0..c_in {
                let xoff = (bi * c_in + ci) * len;
                let woff = (co * c_in + ci) * k;
                for kk in 0..k {
                    let shift = kk as isize - pad as isize;
                    let (lo, hi) = valid_range(out_len, stride, shift, len);
                    if lo >= hi {
                        continue;
                    }
                    if stride == 1 {
                        let off = xoff + (lo as isize + shift) as usize;
                        let dseg = &drow[lo..hi];
                        if let Some(dw) = dw.as_deref_mut() {
                            let xseg = &x[off..off + hi - lo];
                            dw[woff + kk] += dseg.iter().zip(xseg).map(|(a, b)| a * b).sum::<f64>();
                        }
                        if let Some(dx) = dx.as_deref_mut() {
                            let wv = w[woff + kk];
                            for (d, g) in dx[off..off + hi - lo].iter_mut().zip(dseg) {
                                *d += wv * g;
                            }
                        }
                    } else {
                        let wv = w[woff + kk];
                        let mut acc = 0.0;
                        for (l, &gv) in drow.iter().enumerate().take(hi).skip(lo) {
                            let xi = xoff + (l as isize * stride as isize + shift) as usize;
                            acc += gv * x[xi];
                            if let Some(dx) = dx.as_deref_mut() {
                                dx[xi] += wv * gv;
                            }
                        }
                        if let Some(dw) = dw.as_deref_mut() {
                            dw[woff + kk] += acc;
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dGeom {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    pub out_h: usize,
    pub out_w: usize,
}

impl Conv2dGeom {
    pub fn new(
        x_shape: &[usize],
        w_shape: &[usize],
        stride: (usize, usize),
        padding: Padding,
    ) -> Result<Self> {
        const OP: &str = "conv2d";
        if x_shape.len() != 4 {
            return Err(AutodiffError::shape(OP, format!("x must be [batch, channels_in, h, w], got {x_shape:?}")));
        }
        if w_shape.len() != 4 {
            return Err(AutodiffError::shape(OP, format!("w must be [channels_out, channels_in, kh, kw], got {w_shape:?}")));
        }
        if x_shape[1] != w_shape[1] {
            return Err(AutodiffError::shape(
                OP,
                format!("channels_in of x ({}) != channels_in of w ({})", x_shape[1], w_shape[1]),
            ));
        }
        let (out_h, pad_h) = axis_geometry(OP, x_shape[2], w_shape[2], stride.0, padding)?;
        let (out_w, pad_w) = axis_geometry(OP, x_shape[3], w_shape[3], stride.1, padding)?;
        Ok(Self {
            batch: x_shape[0],
            c_in: x_shape[1],
            h: x_shape[2],
            w: x_shape[3],
            c_out: w_shape[0],
            kh: w_shape[2],
            kw: w_shape[3],
            stride,
            pad: (pad_h, pad_w),
            out_h,
            out_w,
        })
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.batch, self.c_out, self.out_h, self.out_w]
    }
}

pub fn conv2d_forward(g: &Conv2dGeom, x: &[f64], w: &[f64], b: Option<&[f64]>, out: &mut [f64]) {
    let Conv2dGeom { batch, c_in, h, w: width, c_out, kh, kw, stride, pad, out_h, out_w } = *g;
    let plane = out_h * out_w;
    for bi in 0..batch {
        for co in 0..c_out {
            let oplane = &mut out[(bi * c_out + co) * plane..][..plane];
            oplane.fill(b.map_or(0.0, |b| b[co]));
            for ci in 0..c_in {
                let xplane = &x[(bi * c_in + ci) * h * width..][..h * width];
                for ky in 0..kh {
                    let shift_y = ky as isize - pad.0 as isize;
                    let (ylo, yhi) = valid_range(out_h, stride.0, shift_y, h);
                    for kx in 0..kw {
                        let wv = w[((co * c_in + ci) * kh + ky) * kw + kx];
                        let shift_x = kx as isize - pad.1 as isize;
                        let (xlo, xhi) = valid_range(out_w, stride.1, shift_x, width);
                        if xlo >= xhi {
                            continue;
                        }
                        for oy in ylo..yhi {
                            let iy = (oy as isize * stride.0 as isize + shift_y) as usize;
                            let xrow = &xplane[iy * width..][..width];
                            let orow = &mut oplane[oy * out_w..][..out_w];
                            if stride.1 == 1 {
                                let off = (xlo as isize + shift_x) as usize;
                                for (o, xv) in orow[xlo..xhi].iter_mut().zip(&xrow[off..off + xhi - xlo]) {
                                    *o += wv * xv;
                                }
                            } else {
                                for (ox, o) in orow.iter_mut().enumerate().take(xhi).skip(xlo) {
                                    *o += wv * xrow[(ox as isize * stride.1 as isize + shift_x) as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_backward(
    g: &Conv2dGeom,
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    mut dx: Option<&mut [f64]>,
    mut dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    let Conv2dGeom { batch, c_in, h, w: width, c_out, kh, kw, stride, pad, out_h, out_w } = *g;
    let plane = out_h * out_w;
    if let Some(db) = db {
        for bi in 0..batch {
            for co in 0..c_out {
                db[co] += dy[(bi * c_out + co) * plane..][..plane].iter().sum::<f64>();
            }
        }
    }
    for bi in 0..batch {
        for co in 0..c_out {
            let dplane = &dy[(bi * c_out + co) * plane..][..plane];
            for ci in 0..c_in {
                let xoff = (bi * c_in + ci) * h * width;
                for ky in 0..kh {
                    let shift_y = ky as isize - pad.0 as isize;
                    let (ylo, yhi) = valid_range(out_h, stride.0, shift_y, h);
                    for kx in 0..kw {
                        let widx = ((co * c_in + ci) * kh + ky) * kw + kx;
                        let wv = w[widx];
                        let shift_x = kx as isize - pad.1 as isize;
                        let (xlo, xhi) = valid_range(out_w, stride.1, shift_x, width);
                        if xlo >= xhi {
                            continue;
                        }
                        let mut acc = 0.0;
                        for oy in ylo..yhi {
                            let iy = (oy as isize * stride.0 as isize + shift_y) as usize;
                            let drow = &dplane[oy * out_w..][..out_w];
                            let rowoff = xoff + iy * width;
                            if stride.1 == 1 {
                                let off = rowoff + (xlo as isize + shift_x) as usize;
                                let dseg = &drow[xlo..xhi];
                                acc += dseg.iter().zip(&x[off..off + xhi - xlo]).map(|(a, b)| a * b).sum::<f64>();
                                if let Some(dx) = dx.as_deref_mut() {
                                    for (d, gv) in dx[off..off + xhi - xlo].iter_mut().zip(dseg) {
                                        *d += wv * gv;
                                    }
                                }
                            } else {
                                for (ox, &gv) in drow.iter().enumerate().take(xhi).skip(xlo) {
                                    let xi = rowoff + (ox as isize * stride.1 as isize + shift_x) as usize;
                                    acc += gv * x[xi];
                                    if let Some(dx) = dx.as_deref_mut() {
                                        dx[xi] += wv * gv;
                                    }
                                }
                            }
                        }
                        if let Some(dw) = dw.as_deref_mut() {
                            dw[widx] += acc;
                        }
                    }
                }
            }
        }
    }
}

/// `out[b, o] = sum_i x[b, i] * w[o, i] + bias[o]`.
pub fn dense_forward(batch: usize, n_in: usize, n_out: usize, x: &[f64], w: &[f64], b: Option<&[f64]>, out: &mut [f64]) {
    for bi in 0..batch {
        let xrow = &x[bi * n_in..][..n_in];
        for o in 0..n_out {
            let wrow = &w[o * n_in..][..n_in];
            let dot: f64 = xrow.iter().zip(wrow).map(|(a, b)| a * b).sum();
            out[bi * n_out + o] = dot + b.map_or(0.0, |b| b[o]);
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn dense_backward(
    batch: usize,
    n_in: usize,
    n_out: usize,
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    mut dx: Option<&mut [f64]>,
    mut dw: Option<&mut [f64]>,
    mut db: Option<&mut [f64]>,
) {
    for bi in 0..batch {
        let xrow = &x[bi * n_in..][..n_in];
        for o in 0..n_out {
            let gv = dy[bi * n_out + o];
            if gv == 0.0 {
                continue;
            }
            if let Some(db) = db.as_deref_mut() {
                db[o] += gv;
            }
            if let Some(dw) = dw.as_deref_mut() {
                for (d, xv) in dw[o * n_in..][..n_in].iter_mut().zip(xrow) {
                    *d += gv * xv;
                }
            }
            if let Some(dx) = dx.as_deref_mut() {
                for (d, wv) in dx[bi * n_in..][..n_in].iter_mut().zip(&w[o * n_in..][..n_in]) {
                    *d += gv * wv;
                }
            }
        }
    }
}
