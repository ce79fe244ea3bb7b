//! Layer primitives with hand-derived backward passes.

use super::CnnError;

/// Channel-major, row-major 3-D activation tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl Tensor3 {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        values: Vec<f64>,
    ) -> Result<Self, CnnError> {
        if values.len() != channels * height * width {
            return Err(CnnError::SizeMismatch(format!(
                "{} values for a {channels}x{height}x{width} tensor",
                values.len()
            )));
        }
        Ok(Tensor3 {
            channels,
            height,
            width,
            values,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Tensor3 {
            channels,
            height,
            width,
            values: vec![0.0; channels * height * width],
        }
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.values[(c * self.height + y) * self.width + x]
    }

    fn plane(&self, c: usize) -> &[f64] {
        &self.values[c * self.height * self.width..(c + 1) * self.height * self.width]
    }

    pub fn relu(&self) -> Tensor3 {
        Tensor3 {
            channels: self.channels,
            height: self.height,
            width: self.width,
            values: relu(&self.values),
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }
}

/// Convolution weights `[out][in][kh][kw]` plus one bias per output map.
/// Stride 1, zero "same" padding.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub kernels: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn zeros(in_ch: usize, out_ch: usize, kh: usize, kw: usize) -> Self {
        ConvLayer {
            in_ch,
            out_ch,
            kh,
            kw,
            kernels: vec![0.0; out_ch * in_ch * kh * kw],
            bias: vec![0.0; out_ch],
        }
    }

    pub fn kernel(&self, o: usize, c: usize, u: usize, v: usize) -> f64 {
        self.kernels[((o * self.in_ch + c) * self.kh + u) * self.kw + v]
    }
}

/// Dense layer `W x + bias`, `W` stored row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FcLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl FcLayer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        FcLayer {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

// Four independent partial sums in a fixed order, then combined.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * i + l] * b[4 * i + l];
        }
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Row-major GEMM `c = beta * c + a * b` where `a` is `m x k` and `b` is
/// `k x n`; `a_t` / `b_t` read the stored matrix transposed.
#[allow(clippy::too_many_arguments)]
pub(super) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(
        a.len() >= m * k && b.len() >= k * n && c.len() >= m * n,
        "gemm operands too short"
    );
    let (rsa, csa) = if a_t {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_t {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the strides above address exactly the m*k, k*n and m*n
    // elements checked against the slice lengths.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfolds `x` into a `(channels * kh * kw) x (h * w)` matrix whose column
/// `p` holds the zero-padded receptive field of pixel `p`.
fn im2col(x: &Tensor3, kh: usize, kw: usize) -> Vec<f64> {
    let (h, w) = (x.height, x.width);
    let hw = h * w;
    let (ph, pw) = (kh / 2, kw / 2);
    let mut cols = vec![0.0; x.channels * kh * kw * hw];
    let mut rows = cols.chunks_exact_mut(hw);
    for c in 0..x.channels {
        let plane = x.plane(c);
        for u in 0..kh {
            for v in 0..kw {
                let dst = rows.next().expect("one row per tap");
                let x0 = pw.saturating_sub(v);
                let x1 = (w + pw).saturating_sub(v).min(w);
                for y in 0..h {
                    let sy = y + u;
                    if sy < ph || sy - ph >= h {
                        continue;
                    }
                    let src = &plane[(sy - ph) * w..][..w];
                    dst[y * w + x0..y * w + x1].copy_from_slice(&src[x0 + v - pw..x1 + v - pw]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
fn col2im(cols: &[f64], channels: usize, h: usize, w: usize, kh: usize, kw: usize) -> Tensor3 {
    let hw = h * w;
    let (ph, pw) = (kh / 2, kw / 2);
    let mut out = Tensor3::zeros(channels, h, w);
    let mut rows = cols.chunks_exact(hw);
    for plane in out.values.chunks_exact_mut(hw) {
        for u in 0..kh {
            for v in 0..kw {
                let src = rows.next().expect("one row per tap");
                let x0 = pw.saturating_sub(v);
                let x1 = (w + pw).saturating_sub(v).min(w);
                for y in 0..h {
                    let sy = y + u;
                    if sy < ph || sy - ph >= h {
                        continue;
                    }
                    let dst = &mut plane[(sy - ph) * w..][..w];
                    axpy(
                        1.0,
                        &src[y * w + x0..y * w + x1],
                        &mut dst[x0 + v - pw..x1 + v - pw],
                    );
                }
            }
        }
    }
    out
}

/// "Same" convolution (zero padding, stride 1) of every input channel with
/// every kernel, plus the per-map bias.
pub fn conv2d_forward(x: &Tensor3, layer: &ConvLayer) -> Result<Tensor3, CnnError> {
    if x.channels != layer.in_ch {
        return Err(CnnError::ChannelMismatch {
            expected: layer.in_ch,
            got: x.channels,
        });
    }
    let hw = x.height * x.width;
    let taps = layer.in_ch * layer.kh * layer.kw;
    let cols = im2col(x, layer.kh, layer.kw);
    let mut out = Tensor3::zeros(layer.out_ch, x.height, x.width);
    for (plane, &b) in out.values.chunks_exact_mut(hw).zip(&layer.bias) {
        plane.iter_mut().for_each(|v| *v = b);
    }
    gemm(
        layer.out_ch,
        taps,
        hw,
        &layer.kernels,
        false,
        &cols,
        false,
        1.0,
        &mut out.values,
    );
    Ok(out)
}

/// Accumulates kernel and bias gradients into `dk` / `db`; returns the input
/// gradient when `want_input` is set.
pub fn conv2d_backward(
    x: &Tensor3,
    layer: &ConvLayer,
    dout: &Tensor3,
    dk: &mut [f64],
    db: &mut [f64],
    want_input: bool,
) -> Option<Tensor3> {
    let hw = x.height * x.width;
    let taps = layer.in_ch * layer.kh * layer.kw;
    for (g, d) in dout.values.chunks_exact(hw).zip(db.iter_mut()) {
        *d += g.iter().sum::<f64>();
    }
    let cols = im2col(x, layer.kh, layer.kw);
    gemm(
        layer.out_ch,
        hw,
        taps,
        &dout.values,
        false,
        &cols,
        true,
        1.0,
        dk,
    );
    want_input.then(|| {
        let mut dcols = vec![0.0; taps * hw];
        gemm(
            taps,
            layer.out_ch,
            hw,
            &layer.kernels,
            true,
            &dout.values,
            false,
            0.0,
            &mut dcols,
        );
        col2im(&dcols, layer.in_ch, x.height, x.width, layer.kh, layer.kw)
    })
}

/// Non-overlapping 2x2 max pooling. Returns the pooled tensor and, per
/// output element, the flat input index of the maximum (first in row-major
/// order on ties).
pub fn maxpool2x2(x: &Tensor3) -> Result<(Tensor3, Vec<usize>), CnnError> {
    if !x.height.is_multiple_of(2) || !x.width.is_multiple_of(2) {
        return Err(CnnError::OddDims {
            height: x.height,
            width: x.width,
        });
    }
    let (c, h, w) = x.dims();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor3::zeros(c, oh, ow);
    let mut argmax = vec![0usize; c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            for xo in 0..ow {
                let base = (ch * h + 2 * y) * w + 2 * xo;
                let mut best = base;
                for cand in [base + 1, base + w, base + w + 1] {
                    if x.values[cand] > x.values[best] {
                        best = cand;
                    }
                }
                let o = (ch * oh + y) * ow + xo;
                out.values[o] = x.values[best];
                argmax[o] = best;
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool2x2_backward(
    dout: &Tensor3,
    argmax: &[usize],
    in_dims: (usize, usize, usize),
) -> Tensor3 {
    let (c, h, w) = in_dims;
    let mut dx = Tensor3::zeros(c, h, w);
    for (g, &i) in dout.values.iter().zip(argmax) {
        dx.values[i] += g;
    }
    dx
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// Zeroes gradient entries whose forward ReLU output was not positive.
pub fn relu_backward(grad: &mut [f64], activation: &[f64]) {
    for (g, &a) in grad.iter_mut().zip(activation) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

pub fn fc_forward(x: &[f64], layer: &FcLayer) -> Result<Vec<f64>, CnnError> {
    if x.len() != layer.in_dim {
        return Err(CnnError::DimMismatch {
            expected: layer.in_dim,
            got: x.len(),
        });
    }
    Ok(layer
        .weights
        .chunks_exact(layer.in_dim)
        .zip(&layer.bias)
        .map(|(row, b)| b + dot(row, x))
        .collect())
}

pub fn fc_backward(
    x: &[f64],
    layer: &FcLayer,
    dout: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; layer.in_dim];
    for (i, &g) in dout.iter().enumerate() {
        db[i] += g;
        if g == 0.0 {
            continue;
        }
        axpy(g, x, &mut dw[i * layer.in_dim..(i + 1) * layer.in_dim]);
        axpy(
            g,
            &layer.weights[i * layer.in_dim..(i + 1) * layer.in_dim],
            &mut dx,
        );
    }
    dx
}

/// Max-shifted softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub const CE_FLOOR: f64 = 1e-12;

pub fn cross_entropy(p: &[f64], target: usize) -> Result<f64, CnnError> {
    let pt = *p.get(target).ok_or(CnnError::BadTarget {
        target,
        classes: p.len(),
    })?;
    Ok(-pt.max(CE_FLOOR).ln())
}
