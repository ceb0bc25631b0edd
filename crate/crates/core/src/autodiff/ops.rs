//! Primitive operations: forward construction and backward rules.

use super::{numel, CustomOp, DftBasis, Op, Tape, Tensor, TensorId};
use crate::error::{Error, Result};
use std::sync::Arc;

/// Floor used when taking logs or normalizing near-zero vectors.
pub const EPS_FLOOR: f64 = 1e-8;

fn shape_err(msg: String) -> Error {
    Error::ShapeMismatch(msg)
}

/// Broadcast classification for elementwise binary ops. Supported: equal
/// shapes, a true scalar on either side, and 2-D row/column vectors.
fn bc_out_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a == b {
        return Ok(a.to_vec());
    }
    if numel(b) == 1 {
        return Ok(a.to_vec());
    }
    if numel(a) == 1 {
        return Ok(b.to_vec());
    }
    if a.len() == 2 && b.len() == 2 {
        let (r, c) = (a[0], a[1]);
        if (b[0] == r && b[1] == 1) || (b[0] == 1 && b[1] == c) {
            return Ok(a.to_vec());
        }
        let (r, c) = (b[0], b[1]);
        if (a[0] == r && a[1] == 1) || (a[0] == 1 && a[1] == c) {
            return Ok(b.to_vec());
        }
    }
    Err(shape_err(format!("cannot broadcast {:?} with {:?}", a, b)))
}

/// Expand `vals` of `shape` to `out` (guaranteed broadcast-compatible).
fn bc_expand(vals: &[f64], shape: &[usize], out: &[usize]) -> Vec<f64> {
    if shape == out {
        return vals.to_vec();
    }
    let n = numel(out);
    if vals.len() == 1 {
        return vec![vals[0]; n];
    }
    let (r, c) = (out[0], out[1]);
    let mut res = vec![0.0; n];
    if shape[0] == r && shape[1] == 1 {
        for i in 0..r {
            for j in 0..c {
                res[i * c + j] = vals[i];
            }
        }
    } else {
        for i in 0..r {
            for j in 0..c {
                res[i * c + j] = vals[j];
            }
        }
    }
    res
}

/// Reduce a gradient of `out` shape back to `target` shape by summing over
/// broadcast dimensions.
fn bc_reduce(grad: &[f64], out: &[usize], target: &[usize]) -> Vec<f64> {
    if out == target {
        return grad.to_vec();
    }
    if numel(target) == 1 {
        return vec![grad.iter().sum()];
    }
    let (r, c) = (out[0], out[1]);
    if target[0] == r && target[1] == 1 {
        let mut res = vec![0.0; r];
        for i in 0..r {
            let mut s = 0.0;
            for j in 0..c {
                s += grad[i * c + j];
            }
            res[i] = s;
        }
        res
    } else {
        let mut res = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                res[j] += grad[i * c + j];
            }
        }
        res
    }
}

fn binary_forward(
    a_vals: &[f64],
    a_shape: &[usize],
    b_vals: &[f64],
    b_shape: &[usize],
    out: &[usize],
    f: impl Fn(f64, f64) -> f64,
) -> Vec<f64> {
    if a_shape == b_shape {
        return a_vals.iter().zip(b_vals).map(|(&x, &y)| f(x, y)).collect();
    }
    let ax = bc_expand(a_vals, a_shape, out);
    let bx = bc_expand(b_vals, b_shape, out);
    ax.iter().zip(&bx).map(|(&x, &y)| f(x, y)).collect()
}

impl Tape {
    fn binary(
        &mut self,
        a: TensorId,
        b: TensorId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<TensorId> {
        let out_shape = bc_out_shape(self.shape(a), self.shape(b))?;
        let vals = binary_forward(
            self.values(a),
            self.shape(a),
            self.values(b),
            self.shape(b),
            &out_shape,
            f,
        );
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(vals, out_shape, rg, op))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary(a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// y = scale * x + offset (constants).
    pub fn affine(&mut self, x: TensorId, scale: f64, offset: f64) -> TensorId {
        let vals: Vec<f64> = self.values(x).iter().map(|&v| scale * v + offset).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.requires_grad(x);
        let _ = offset;
        self.push(vals, shape, rg, Op::Affine { x, scale })
    }

    pub fn neg(&mut self, x: TensorId) -> TensorId {
        self.affine(x, -1.0, 0.0)
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err(format!("matmul {:?} x {:?}", sa, sb)));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        {
            let av = self.values(a);
            let bv = self.values(b);
            for i in 0..m {
                let arow = &av[i * k..(i + 1) * k];
                let orow = &mut out[i * n..(i + 1) * n];
                for (p, &apk) in arow.iter().enumerate() {
                    if apk == 0.0 {
                        continue;
                    }
                    let brow = &bv[p * n..(p + 1) * n];
                    for (o, &bpj) in orow.iter_mut().zip(brow) {
                        *o += apk * bpj;
                    }
                }
            }
        }
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(out, vec![m, n], rg, Op::MatMul(a, b)))
    }

    /// C = A * B^T with A [m,k], B [n,k].
    pub fn matmul_nt(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(shape_err(format!("matmul_nt {:?} x {:?}", sa, sb)));
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let mut out = vec![0.0; m * n];
        {
            let av = self.values(a);
            let bv = self.values(b);
            for i in 0..m {
                let arow = &av[i * k..(i + 1) * k];
                for j in 0..n {
                    let brow = &bv[j * k..(j + 1) * k];
                    let mut s = 0.0;
                    for (x, y) in arow.iter().zip(brow) {
                        s += x * y;
                    }
                    out[i * n + j] = s;
                }
            }
        }
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(out, vec![m, n], rg, Op::MatMulNT(a, b)))
    }

    /// input [C,L] conv weight [O,C,K] -> [O,Lo].
    pub fn conv1d(
        &mut self,
        input: TensorId,
        weight: TensorId,
        stride: usize,
        pad: usize,
    ) -> Result<TensorId> {
        let si = self.shape(input).to_vec();
        let sw = self.shape(weight).to_vec();
        if si.len() != 2 || sw.len() != 3 || si[0] != sw[1] {
            return Err(shape_err(format!("conv1d input {:?} weight {:?}", si, sw)));
        }
        let (c_in, l) = (si[0], si[1]);
        let (c_out, k) = (sw[0], sw[2]);
        if l + 2 * pad < k {
            return Err(shape_err("conv1d input shorter than kernel".into()));
        }
        let lo = (l + 2 * pad - k) / stride + 1;
        let mut out = vec![0.0; c_out * lo];
        {
            let iv = self.values(input);
            let wv = self.values(weight);
            for o in 0..c_out {
                for c in 0..c_in {
                    let irow = &iv[c * l..(c + 1) * l];
                    for kk in 0..k {
                        let w = wv[o * c_in * k + c * k + kk];
                        if w == 0.0 {
                            continue;
                        }
                        let orow = &mut out[o * lo..(o + 1) * lo];
                        for (ox, ov) in orow.iter_mut().enumerate() {
                            let ix = (ox * stride + kk) as isize - pad as isize;
                            if ix >= 0 && (ix as usize) < l {
                                *ov += w * irow[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        let rg = self.requires_grad(input) || self.requires_grad(weight);
        Ok(self.push(
            out,
            vec![c_out, lo],
            rg,
            Op::Conv1d {
                input,
                weight,
                stride,
                pad,
            },
        ))
    }

    /// input [C,H,W] conv weight [O,C,KH,KW] -> [O,Ho,Wo].
    pub fn conv2d(
        &mut self,
        input: TensorId,
        weight: TensorId,
        stride: usize,
        pad: usize,
    ) -> Result<TensorId> {
        let si = self.shape(input).to_vec();
        let sw = self.shape(weight).to_vec();
        if si.len() != 3 || sw.len() != 4 || si[0] != sw[1] {
            return Err(shape_err(format!("conv2d input {:?} weight {:?}", si, sw)));
        }
        let (c_in, h, w) = (si[0], si[1], si[2]);
        let (c_out, kh, kw) = (sw[0], sw[2], sw[3]);
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(shape_err("conv2d input smaller than kernel".into()));
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        let mut out = vec![0.0; c_out * ho * wo];
        {
            let iv = self.values(input);
            let wv = self.values(weight);
            conv2d_forward(
                iv, wv, &mut out, c_in, h, w, c_out, kh, kw, stride, pad, ho, wo,
            );
        }
        let rg = self.requires_grad(input) || self.requires_grad(weight);
        Ok(self.push(
            out,
            vec![c_out, ho, wo],
            rg,
            Op::Conv2d {
                input,
                weight,
                stride,
                pad,
            },
        ))
    }

    /// x [C,...] + bias [C], broadcast over trailing dims.
    pub fn bias_add_chan(&mut self, x: TensorId, bias: TensorId) -> Result<TensorId> {
        let sx = self.shape(x).to_vec();
        let sb = self.shape(bias).to_vec();
        if sb.len() != 1 || sx.is_empty() || sx[0] != sb[0] {
            return Err(shape_err(format!("bias_add_chan {:?} + {:?}", sx, sb)));
        }
        let c = sx[0];
        let inner = numel(&sx) / c;
        let mut vals = self.values(x).to_vec();
        {
            let bv = self.values(bias);
            for ch in 0..c {
                let b = bv[ch];
                for v in &mut vals[ch * inner..(ch + 1) * inner] {
                    *v += b;
                }
            }
        }
        let rg = self.requires_grad(x) || self.requires_grad(bias);
        Ok(self.push(vals, sx, rg, Op::BiasAddChan { x, bias }))
    }

    fn unary(&mut self, x: TensorId, f: impl Fn(f64) -> f64, op: Op) -> TensorId {
        let vals: Vec<f64> = self.values(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.requires_grad(x);
        self.push(vals, shape, rg, op)
    }

    pub fn tanh(&mut self, x: TensorId) -> TensorId {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn exp(&mut self, x: TensorId) -> TensorId {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    /// ln(max(x, 1e-8)); the floor guards non-positive input.
    pub fn log(&mut self, x: TensorId) -> TensorId {
        self.unary(x, |v| v.max(EPS_FLOOR).ln(), Op::Log(x))
    }

    pub fn sqrt(&mut self, x: TensorId) -> TensorId {
        self.unary(x, f64::sqrt, Op::Sqrt(x))
    }

    pub fn abs(&mut self, x: TensorId) -> TensorId {
        self.unary(x, f64::abs, Op::Abs(x))
    }

    pub fn leaky_relu(&mut self, x: TensorId, slope: f64) -> TensorId {
        self.unary(
            x,
            |v| if v >= 0.0 { v } else { slope * v },
            Op::LeakyRelu { x, slope },
        )
    }

    pub fn clamp(&mut self, x: TensorId, lo: f64, hi: f64) -> TensorId {
        self.unary(x, |v| v.clamp(lo, hi), Op::Clamp { x, lo, hi })
    }

    pub fn sum(&mut self, x: TensorId) -> TensorId {
        let s: f64 = self.values(x).iter().sum();
        let rg = self.requires_grad(x);
        self.push(vec![s], vec![1], rg, Op::Sum(x))
    }

    pub fn mean(&mut self, x: TensorId) -> TensorId {
        let n = self.values(x).len();
        let s: f64 = self.values(x).iter().sum();
        let rg = self.requires_grad(x);
        self.push(vec![s / n as f64], vec![1], rg, Op::Mean(x))
    }

    pub fn max(&mut self, x: TensorId) -> TensorId {
        let vals = self.values(x);
        let mut best = 0usize;
        for (i, &v) in vals.iter().enumerate() {
            if v > vals[best] {
                best = i;
            }
        }
        let m = vals[best];
        let rg = self.requires_grad(x);
        self.push(vec![m], vec![1], rg, Op::Max { x, argmax: best })
    }

    /// 2-D reduction keeping the reduced axis with size 1.
    pub fn sum_axis(&mut self, x: TensorId, axis: usize) -> Result<TensorId> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || axis > 1 {
            return Err(shape_err(format!("sum_axis on shape {:?} axis {}", s, axis)));
        }
        let (r, c) = (s[0], s[1]);
        let v = self.values(x);
        let (vals, shape) = if axis == 1 {
            let mut out = vec![0.0; r];
            for i in 0..r {
                out[i] = v[i * c..(i + 1) * c].iter().sum();
            }
            (out, vec![r, 1])
        } else {
            let mut out = vec![0.0; c];
            for i in 0..r {
                for j in 0..c {
                    out[j] += v[i * c + j];
                }
            }
            (out, vec![1, c])
        };
        let rg = self.requires_grad(x);
        Ok(self.push(vals, shape, rg, Op::SumAxis { x, axis }))
    }

    /// Concatenate along axis 0. All parts must share trailing dims.
    pub fn concat(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(shape_err("concat of zero tensors".into()));
        }
        let first = self.shape(parts[0]).to_vec();
        let trailing = &first[1..];
        let mut rows = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len() || &s[1..] != trailing {
                return Err(shape_err(format!(
                    "concat mismatch {:?} vs {:?}",
                    first,
                    self.shape(p)
                )));
            }
            rows += s[0];
        }
        let mut vals = Vec::with_capacity(rows * numel(trailing).max(1));
        for &p in parts {
            vals.extend_from_slice(self.values(p));
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(trailing);
        let rg = parts.iter().any(|&p| self.requires_grad(p));
        Ok(self.push(
            vals,
            shape,
            rg,
            Op::Concat {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Slice `len` rows starting at `start` along axis 0.
    pub fn slice_rows(&mut self, x: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let s = self.shape(x).to_vec();
        if s.is_empty() || start + len > s[0] {
            return Err(shape_err(format!(
                "slice_rows {}..{} of shape {:?}",
                start,
                start + len,
                s
            )));
        }
        let inner = numel(&s) / s[0];
        let vals = self.values(x)[start * inner..(start + len) * inner].to_vec();
        let mut shape = vec![len];
        shape.extend_from_slice(&s[1..]);
        let rg = self.requires_grad(x);
        Ok(self.push(vals, shape, rg, Op::SliceRows { x, start }))
    }

    pub fn reshape(&mut self, x: TensorId, new_shape: &[usize]) -> Result<TensorId> {
        if numel(new_shape) != self.values(x).len() {
            return Err(shape_err(format!(
                "reshape {:?} -> {:?}",
                self.shape(x),
                new_shape
            )));
        }
        let vals = self.values(x).to_vec();
        let rg = self.requires_grad(x);
        Ok(self.push(vals, new_shape.to_vec(), rg, Op::Reshape(x)))
    }

    /// Unit-normalize: whole vector for 1-D, per row for 2-D. Norms below
    /// 1e-8 fall back to dividing by the floor.
    pub fn l2_normalize(&mut self, x: TensorId) -> TensorId {
        let shape = self.shape(x).to_vec();
        let v = self.values(x);
        let (rows, cols) = if shape.len() == 2 {
            (shape[0], shape[1])
        } else {
            (1, v.len())
        };
        let mut vals = vec![0.0; v.len()];
        for r in 0..rows {
            let row = &v[r * cols..(r + 1) * cols];
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(EPS_FLOOR);
            for (o, &x) in vals[r * cols..(r + 1) * cols].iter_mut().zip(row) {
                *o = x / norm;
            }
        }
        let rg = self.requires_grad(x);
        self.push(vals, shape, rg, Op::L2Normalize(x))
    }

    /// Inverted dropout: kept activations are scaled by 1/keep so that
    /// evaluation mode (no dropout) is the identity in expectation.
    pub fn dropout(&mut self, x: TensorId, drop_rate: f64, rng: &mut impl rand::Rng) -> TensorId {
        let keep = (1.0 - drop_rate).max(1e-6);
        let mask: Vec<f64> = self
            .values(x)
            .iter()
            .map(|_| {
                if rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let vals: Vec<f64> = self
            .values(x)
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v * m)
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.requires_grad(x);
        self.push(
            vals,
            shape,
            rg,
            Op::Dropout {
                x,
                mask: Arc::new(mask),
            },
        )
    }

    /// STFT as windowed frame extraction followed by multiplication with
    /// fixed DFT basis matrices. Output `[2*frames, bins]`: the first
    /// `frames` rows are the real part, the rest the imaginary part.
    pub fn framed_dft(&mut self, x: TensorId, basis: &Arc<DftBasis>) -> Result<TensorId> {
        let s = self.shape(x).to_vec();
        if s.len() != 1 {
            return Err(shape_err(format!("framed_dft expects 1-D input, got {:?}", s)));
        }
        let n = s[0];
        let w = basis.window.len();
        let frames = basis.frame_count(n);
        if frames == 0 {
            return Err(shape_err(format!(
                "framed_dft input ({} samples) shorter than window ({})",
                n, w
            )));
        }
        let bins = basis.bins;
        let mut out = vec![0.0; 2 * frames * bins];
        {
            let xv = self.values(x);
            let (re, im) = out.split_at_mut(frames * bins);
            for f in 0..frames {
                let seg = &xv[f * basis.hop..f * basis.hop + w];
                let rrow = &mut re[f * bins..(f + 1) * bins];
                let irow = &mut im[f * bins..(f + 1) * bins];
                for (nn, (&xs, &ws)) in seg.iter().zip(&basis.window).enumerate() {
                    let xw = xs * ws;
                    if xw == 0.0 {
                        continue;
                    }
                    let crow = &basis.cos[nn * bins..(nn + 1) * bins];
                    let srow = &basis.sin[nn * bins..(nn + 1) * bins];
                    for k in 0..bins {
                        rrow[k] += xw * crow[k];
                        irow[k] += xw * srow[k];
                    }
                }
            }
        }
        let rg = self.requires_grad(x);
        Ok(self.push(
            out,
            vec![2 * frames, bins],
            rg,
            Op::FramedDft {
                x,
                basis: Arc::clone(basis),
            },
        ))
    }

    /// [C,H,W] -> [C]: mean over the spatial dims.
    pub fn spatial_mean(&mut self, x: TensorId) -> Result<TensorId> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(shape_err(format!("spatial_mean expects [C,H,W], got {:?}", s)));
        }
        let (c, inner) = (s[0], s[1] * s[2]);
        let v = self.values(x);
        let vals: Vec<f64> = (0..c)
            .map(|ch| v[ch * inner..(ch + 1) * inner].iter().sum::<f64>() / inner as f64)
            .collect();
        let rg = self.requires_grad(x);
        Ok(self.push(vals, vec![c], rg, Op::SpatialMean(x)))
    }

    /// Record a custom primitive with caller-supplied forward values and a
    /// backward rule provided by `kernel`.
    pub fn custom(
        &mut self,
        inputs: &[TensorId],
        out_values: Vec<f64>,
        out_shape: &[usize],
        kernel: Arc<dyn CustomOp>,
    ) -> TensorId {
        let rg = inputs.iter().any(|&p| self.requires_grad(p));
        self.push(
            out_values,
            out_shape.to_vec(),
            rg,
            Op::Custom {
                inputs: inputs.to_vec(),
                kernel,
            },
        )
    }

    pub(crate) fn backward_node(&mut self, i: usize) -> Result<()> {
        if matches!(self.tensors[i].op, Op::Leaf) || !self.tensors[i].requires_grad {
            return Ok(());
        }
        let op = self.tensors[i].op.clone();
        let (lo, hi) = self.tensors.split_at_mut(i);
        let node = &hi[0];
        let Some(gout) = node.grad.as_deref() else {
            return Ok(());
        };
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let os = node.shape.clone();
                accumulate(lo, a, &bc_reduce(gout, &os, &lo[a.0].shape.clone()));
                accumulate(lo, b, &bc_reduce(gout, &os, &lo[b.0].shape.clone()));
            }
            Op::Sub(a, b) => {
                let os = node.shape.clone();
                accumulate(lo, a, &bc_reduce(gout, &os, &lo[a.0].shape.clone()));
                let neg: Vec<f64> = gout.iter().map(|g| -g).collect();
                accumulate(lo, b, &bc_reduce(&neg, &os, &lo[b.0].shape.clone()));
            }
            Op::Mul(a, b) => {
                let os = node.shape.clone();
                let bx = bc_expand(&lo[b.0].values, &lo[b.0].shape, &os);
                let da: Vec<f64> = gout.iter().zip(&bx).map(|(g, v)| g * v).collect();
                accumulate(lo, a, &bc_reduce(&da, &os, &lo[a.0].shape.clone()));
                let ax = bc_expand(&lo[a.0].values, &lo[a.0].shape, &os);
                let db: Vec<f64> = gout.iter().zip(&ax).map(|(g, v)| g * v).collect();
                accumulate(lo, b, &bc_reduce(&db, &os, &lo[b.0].shape.clone()));
            }
            Op::Div(a, b) => {
                let os = node.shape.clone();
                let ax = bc_expand(&lo[a.0].values, &lo[a.0].shape, &os);
                let bx = bc_expand(&lo[b.0].values, &lo[b.0].shape, &os);
                let da: Vec<f64> = gout.iter().zip(&bx).map(|(g, v)| g / v).collect();
                accumulate(lo, a, &bc_reduce(&da, &os, &lo[a.0].shape.clone()));
                let db: Vec<f64> = gout
                    .iter()
                    .zip(ax.iter().zip(&bx))
                    .map(|(g, (x, y))| -g * x / (y * y))
                    .collect();
                accumulate(lo, b, &bc_reduce(&db, &os, &lo[b.0].shape.clone()));
            }
            Op::Affine { x, scale, .. } => {
                let dx: Vec<f64> = gout.iter().map(|g| g * scale).collect();
                accumulate(lo, x, &dx);
            }
            Op::MatMul(a, b) => {
                let (m, k) = (lo[a.0].shape[0], lo[a.0].shape[1]);
                let n = lo[b.0].shape[1];
                if lo[a.0].requires_grad {
                    // dA = G * B^T
                    let bv = &lo[b.0].values;
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let grow = &gout[i * n..(i + 1) * n];
                        let drow = &mut da[i * k..(i + 1) * k];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            let mut s = 0.0;
                            for (g, bb) in grow.iter().zip(brow) {
                                s += g * bb;
                            }
                            drow[p] = s;
                        }
                    }
                    accumulate(lo, a, &da);
                }
                if lo[b.0].requires_grad {
                    // dB = A^T * G
                    let av = &lo[a.0].values;
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        let grow = &gout[i * n..(i + 1) * n];
                        let arow = &av[i * k..(i + 1) * k];
                        for (p, &apk) in arow.iter().enumerate() {
                            if apk == 0.0 {
                                continue;
                            }
                            let drow = &mut db[p * n..(p + 1) * n];
                            for (d, g) in drow.iter_mut().zip(grow) {
                                *d += apk * g;
                            }
                        }
                    }
                    accumulate(lo, b, &db);
                }
            }
            Op::MatMulNT(a, b) => {
                let (m, k) = (lo[a.0].shape[0], lo[a.0].shape[1]);
                let n = lo[b.0].shape[0];
                if lo[a.0].requires_grad {
                    // dA = G * B
                    let bv = &lo[b.0].values;
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let grow = &gout[i * n..(i + 1) * n];
                        let drow = &mut da[i * k..(i + 1) * k];
                        for (j, &g) in grow.iter().enumerate() {
                            if g == 0.0 {
                                continue;
                            }
                            let brow = &bv[j * k..(j + 1) * k];
                            for (d, bb) in drow.iter_mut().zip(brow) {
                                *d += g * bb;
                            }
                        }
                    }
                    accumulate(lo, a, &da);
                }
                if lo[b.0].requires_grad {
                    // dB = G^T * A
                    let av = &lo[a.0].values;
                    let mut db = vec![0.0; n * k];
                    for i in 0..m {
                        let grow = &gout[i * n..(i + 1) * n];
                        let arow = &av[i * k..(i + 1) * k];
                        for (j, &g) in grow.iter().enumerate() {
                            if g == 0.0 {
                                continue;
                            }
                            let drow = &mut db[j * k..(j + 1) * k];
                            for (d, aa) in drow.iter_mut().zip(arow) {
                                *d += g * aa;
                            }
                        }
                    }
                    accumulate(lo, b, &db);
                }
            }
            Op::Conv1d {
                input,
                weight,
                stride,
                pad,
            } => {
                let (c_in, l) = (lo[input.0].shape[0], lo[input.0].shape[1]);
                let (c_out, k) = (lo[weight.0].shape[0], lo[weight.0].shape[2]);
                let lo_len = node.shape[1];
                let iv = lo[input.0].values.clone();
                let wv = lo[weight.0].values.clone();
                let mut din = vec![0.0; c_in * l];
                let mut dw = vec![0.0; c_out * c_in * k];
                for o in 0..c_out {
                    let grow = &gout[o * lo_len..(o + 1) * lo_len];
                    for c in 0..c_in {
                        let irow = &iv[c * l..(c + 1) * l];
                        let drow = &mut din[c * l..(c + 1) * l];
                        for kk in 0..k {
                            let w = wv[o * c_in * k + c * k + kk];
                            let mut wg = 0.0;
                            for (ox, &g) in grow.iter().enumerate() {
                                let ix = (ox * stride + kk) as isize - pad as isize;
                                if ix >= 0 && (ix as usize) < l {
                                    let ix = ix as usize;
                                    wg += g * irow[ix];
                                    drow[ix] += g * w;
                                }
                            }
                            dw[o * c_in * k + c * k + kk] += wg;
                        }
                    }
                }
                accumulate(lo, input, &din);
                accumulate(lo, weight, &dw);
            }
            Op::Conv2d {
                input,
                weight,
                stride,
                pad,
            } => {
                let si = lo[input.0].shape.clone();
                let sw = lo[weight.0].shape.clone();
                let (c_in, h, w) = (si[0], si[1], si[2]);
                let (c_out, kh, kw) = (sw[0], sw[2], sw[3]);
                let (ho, wo) = (node.shape[1], node.shape[2]);
                let need_din = lo[input.0].requires_grad;
                let need_dw = lo[weight.0].requires_grad;
                let mut din = vec![0.0; if need_din { c_in * h * w } else { 0 }];
                let mut dw = vec![0.0; if need_dw { c_out * c_in * kh * kw } else { 0 }];
                conv2d_backward(
                    &lo[input.0].values,
                    &lo[weight.0].values,
                    gout,
                    if need_din { Some(&mut din) } else { None },
                    if need_dw { Some(&mut dw) } else { None },
                    c_in,
                    h,
                    w,
                    c_out,
                    kh,
                    kw,
                    stride,
                    pad,
                    ho,
                    wo,
                );
                if need_din {
                    accumulate(lo, input, &din);
                }
                if need_dw {
                    accumulate(lo, weight, &dw);
                }
            }
            Op::BiasAddChan { x, bias } => {
                accumulate(lo, x, gout);
                let c = lo[bias.0].shape[0];
                let inner = gout.len() / c;
                let db: Vec<f64> = (0..c)
                    .map(|ch| gout[ch * inner..(ch + 1) * inner].iter().sum())
                    .collect();
                accumulate(lo, bias, &db);
            }
            Op::Tanh(x) => {
                let dx: Vec<f64> = gout
                    .iter()
                    .zip(&node.values)
                    .map(|(g, y)| g * (1.0 - y * y))
                    .collect();
                accumulate(lo, x, &dx);
            }
            Op::Exp(x) => {
                let dx: Vec<f64> = gout.iter().zip(&node.values).map(|(g, y)| g * y).collect();
                accumulate(lo, x, &dx);
            }
            Op::Log(x) => {
                let dx: Vec<f64> = gout
                    .iter()
                    .zip(&lo[x.0].values)
                    .map(|(g, &v)| if v > EPS_FLOOR { g / v } else { 0.0 })
                    .collect();
                accumulate(lo, x, &dx);
            }
            Op::Sqrt(x) => {
                let dx: Vec<f64> = gout
                    .iter()
                    .zip(&node.values)
                    .map(|(g, &y)| if y > 0.0 { g / (2.0 * y) } else { 0.0 })
                    .collect();
                accumulate(lo, x, &dx);
            }
            Op::Abs(x) => {
                let dx: Vec<f64> = gout
                    .iter()
                    .zip(&lo[x.0].values)
                    .map(|(g, &v)| g * if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 })
                    .collect();
                accumulate(lo, x, &dx);
            }
            Op::LeakyRelu { x, slope } => {
                let dx: Vec<f64> = gout
                    .iter()
                    .zip(&lo[x.0].values)
                    .map(|(g, &v)| if v >= 0.0 { *g } else { g * slope })
                    .collect();
                accumulate(lo, x, &dx);
            }
            Op::Clamp { x, lo: l, hi: h } => {
                let dx: Vec<f64> = gout
                    .iter()
                    .zip(&lo[x.0].values)
                    .map(|(g, &v)| if v > l && v < h { *g } else { 0.0 })
                    .collect();
                accumulate(lo, x, &dx);
            }
            Op::Sum(x) => {
                let g = gout[0];
                let dx = vec![g; lo[x.0].values.len()];
                accumulate(lo, x, &dx);
            }
            Op::Mean(x) => {
                let n = lo[x.0].values.len();
                let g = gout[0] / n as f64;
                let dx = vec![g; n];
                accumulate(lo, x, &dx);
            }
            Op::Max { x, argmax } => {
                if lo[x.0].requires_grad {
                    let g = lo[x.0].grad.as_mut().unwrap();
                    g[argmax] += gout[0];
                }
            }
            Op::SumAxis { x, axis } => {
                let (r, c) = (lo[x.0].shape[0], lo[x.0].shape[1]);
                let mut dx = vec![0.0; r * c];
                if axis == 1 {
                    for i in 0..r {
                        for j in 0..c {
                            dx[i * c + j] = gout[i];
                        }
                    }
                } else {
                    for i in 0..r {
                        for j in 0..c {
                            dx[i * c + j] = gout[j];
                        }
                    }
                }
                accumulate(lo, x, &dx);
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                for p in parts {
                    let n = lo[p.0].values.len();
                    let slice = gout[offset..offset + n].to_vec();
                    accumulate(lo, p, &slice);
                    offset += n;
                }
            }
            Op::SliceRows { x, start } => {
                if lo[x.0].requires_grad {
                    let inner = lo[x.0].values.len() / lo[x.0].shape[0];
                    let g = lo[x.0].grad.as_mut().unwrap();
                    for (k, gv) in gout.iter().enumerate() {
                        g[start * inner + k] += gv;
                    }
                }
            }
            Op::Reshape(x) => {
                accumulate(lo, x, gout);
            }
            Op::L2Normalize(x) => {
                let shape = lo[x.0].shape.clone();
                let (rows, cols) = if shape.len() == 2 {
                    (shape[0], shape[1])
                } else {
                    (1, lo[x.0].values.len())
                };
                let xv = &lo[x.0].values;
                let mut dx = vec![0.0; xv.len()];
                for r in 0..rows {
                    let row = &xv[r * cols..(r + 1) * cols];
                    let norm2: f64 = row.iter().map(|v| v * v).sum();
                    let norm = norm2.sqrt();
                    let grow = &gout[r * cols..(r + 1) * cols];
                    let drow = &mut dx[r * cols..(r + 1) * cols];
                    if norm > EPS_FLOOR {
                        let y: Vec<f64> = row.iter().map(|v| v / norm).collect();
                        let dot: f64 = grow.iter().zip(&y).map(|(g, v)| g * v).sum();
                        for ((d, g), v) in drow.iter_mut().zip(grow).zip(&y) {
                            *d = (g - v * dot) / norm;
                        }
                    } else {
                        for (d, g) in drow.iter_mut().zip(grow) {
                            *d = g / EPS_FLOOR;
                        }
                    }
                }
                accumulate(lo, x, &dx);
            }
            Op::Dropout { x, mask } => {
                let dx: Vec<f64> = gout.iter().zip(mask.iter()).map(|(g, m)| g * m).collect();
                accumulate(lo, x, &dx);
            }
            Op::FramedDft { x, basis } => {
                if lo[x.0].requires_grad {
                    let frames = node.shape[0] / 2;
                    let bins = basis.bins;
                    let w = basis.window.len();
                    let (gre, gim) = gout.split_at(frames * bins);
                    let g = lo[x.0].grad.as_mut().unwrap();
                    for f in 0..frames {
                        let rrow = &gre[f * bins..(f + 1) * bins];
                        let irow = &gim[f * bins..(f + 1) * bins];
                        for nn in 0..w {
                            let crow = &basis.cos[nn * bins..(nn + 1) * bins];
                            let srow = &basis.sin[nn * bins..(nn + 1) * bins];
                            let mut s = 0.0;
                            for k in 0..bins {
                                s += rrow[k] * crow[k] + irow[k] * srow[k];
                            }
                            g[f * basis.hop + nn] += s * basis.window[nn];
                        }
                    }
                }
            }
            Op::SpatialMean(x) => {
                let s = lo[x.0].shape.clone();
                let (c, inner) = (s[0], s[1] * s[2]);
                if lo[x.0].requires_grad {
                    let g = lo[x.0].grad.as_mut().unwrap();
                    for ch in 0..c {
                        let gv = gout[ch] / inner as f64;
                        for v in &mut g[ch * inner..(ch + 1) * inner] {
                            *v += gv;
                        }
                    }
                }
            }
            Op::Custom { inputs, kernel } => {
                let in_refs: Vec<(&[f64], &[usize])> = inputs
                    .iter()
                    .map(|p| (lo[p.0].values.as_slice(), lo[p.0].shape.as_slice()))
                    .collect();
                let grads =
                    kernel.backward(&in_refs, (&node.values, &node.shape), gout)?;
                for (p, g) in inputs.iter().zip(grads) {
                    if let Some(g) = g {
                        accumulate(lo, *p, &g);
                    }
                }
            }
        }
        Ok(())
    }
}

fn accumulate(tensors: &mut [Tensor], id: TensorId, src: &[f64]) {
    let t = &mut tensors[id.0];
    if t.requires_grad {
        let g = t.grad.as_mut().unwrap();
        debug_assert_eq!(g.len(), src.len());
        for (a, b) in g.iter_mut().zip(src) {
            *a += b;
        }
    }
}

/// Patch matrix for im2col convolution: one row of length `c_in*kh*kw` per
/// output position, zeros where the receptive field leaves the input.
#[allow(clippy::too_many_arguments)]
fn im2col(
    input: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Vec<f64> {
    let k = c_in * kh * kw;
    let mut col = vec![0.0; ho * wo * k];
    for oy in 0..ho {
        for ox in 0..wo {
            let row = &mut col[(oy * wo + ox) * k..(oy * wo + ox + 1) * k];
            let mut j = 0;
            for c in 0..c_in {
                let ibase = c * h * w;
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy as usize >= h {
                        j += kw;
                        continue;
                    }
                    let irow = &input[ibase + iy as usize * w..ibase + (iy as usize + 1) * w];
                    for kx in 0..kw {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && (ix as usize) < w {
                            row[j] = irow[ix as usize];
                        }
                        j += 1;
                    }
                }
            }
        }
    }
    col
}

#[allow(clippy::too_many_arguments)]
fn conv2d_forward(
    input: &[f64],
    weight: &[f64],
    out: &mut [f64],
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) {
    let k = c_in * kh * kw;
    let positions = ho * wo;
    let col = im2col(input, c_in, h, w, kh, kw, stride, pad, ho, wo);
    for o in 0..c_out {
        let wrow = &weight[o * k..(o + 1) * k];
        let orow = &mut out[o * positions..(o + 1) * positions];
        for (pos, ov) in orow.iter_mut().enumerate() {
            let crow = &col[pos * k..(pos + 1) * k];
            let mut s = 0.0;
            for (a, b) in wrow.iter().zip(crow) {
                s += a * b;
            }
            *ov += s;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward(
    input: &[f64],
    weight: &[f64],
    gout: &[f64],
    din: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) {
    let k = c_in * kh * kw;
    let positions = ho * wo;
    if let Some(dw) = dw {
        // dW[o] = sum_pos g[o][pos] * col[pos]
        let col = im2col(input, c_in, h, w, kh, kw, stride, pad, ho, wo);
        for o in 0..c_out {
            let grow = &gout[o * positions..(o + 1) * positions];
            let dwrow = &mut dw[o * k..(o + 1) * k];
            for (pos, &g) in grow.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let crow = &col[pos * k..(pos + 1) * k];
                for (d, c) in dwrow.iter_mut().zip(crow) {
                    *d += g * c;
                }
            }
        }
    }
    if let Some(din) = din {
        // dcol[pos] = sum_o g[o][pos] * W[o], then scatter back (col2im)
        let mut dcol = vec![0.0; positions * k];
        for o in 0..c_out {
            let grow = &gout[o * positions..(o + 1) * positions];
            let wrow = &weight[o * k..(o + 1) * k];
            for (pos, &g) in grow.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let drow = &mut dcol[pos * k..(pos + 1) * k];
                for (d, wv) in drow.iter_mut().zip(wrow) {
                    *d += g * wv;
                }
            }
        }
        for oy in 0..ho {
            for ox in 0..wo {
                let row = &dcol[(oy * wo + ox) * k..(oy * wo + ox + 1) * k];
                let mut j = 0;
                for c in 0..c_in {
                    let ibase = c * h * w;
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy as usize >= h {
                            j += kw;
                            continue;
                        }
                        let dirow =
                            &mut din[ibase + iy as usize * w..ibase + (iy as usize + 1) * w];
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && (ix as usize) < w {
                                dirow[ix as usize] += row[j];
                            }
                            j += 1;
                        }
                    }
                }
            }
        }
    }
}
