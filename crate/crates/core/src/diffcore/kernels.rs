//! Forward and backward kernels on plain tensors. The tape in
//! [`super::tape`] wires these together; they are also usable directly.

use serde::{Deserialize, Serialize};

use super::tensor::{index_map, Real, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2dGeom {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Conv2dGeom {
    pub fn new(stride: usize, padding: usize, groups: usize) -> Self {
        Self {
            stride,
            padding,
            groups,
        }
    }

    pub fn out_len(&self, input: usize, kernel: usize) -> Option<usize> {
        let padded = input + 2 * self.padding;
        if padded < kernel || self.stride == 0 {
            return None;
        }
        Some((padded - kernel) / self.stride + 1)
    }
}

struct ConvDims {
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    cin_g: usize,
    cout_g: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

fn conv_dims<T: Real>(x: &Tensor<T>, w: &Tensor<T>, g: &Conv2dGeom) -> Result<ConvDims> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 4 || ws.len() != 4 {
        return Err(Error::shape(
            "conv2d",
            format!("expected 4-D input and weight, got {xs:?} and {ws:?}"),
        ));
    }
    let (batch, c_in, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (c_out, cin_g, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    if g.groups == 0 || c_in % g.groups != 0 || c_out % g.groups != 0 {
        return Err(Error::shape(
            "conv2d",
            format!("channels {c_in}->{c_out} not divisible by groups {}", g.groups),
        ));
    }
    if cin_g != c_in / g.groups {
        return Err(Error::shape(
            "conv2d",
            format!(
                "weight expects {cin_g} input channels per group, input has {}",
                c_in / g.groups
            ),
        ));
    }
    let (oh, ow) = match (g.out_len(h, kh), g.out_len(wd, kw)) {
        (Some(a), Some(b)) if a > 0 && b > 0 => (a, b),
        _ => {
            return Err(Error::shape(
                "conv2d",
                format!("non-positive output size for input {h}x{wd}, kernel {kh}x{kw}"),
            ))
        }
    };
    Ok(ConvDims {
        batch,
        c_in,
        h,
        w: wd,
        c_out,
        cin_g,
        cout_g: c_out / g.groups,
        kh,
        kw,
        oh,
        ow,
    })
}

/// Output positions `o` in `[lo, hi)` with `0 <= o*stride + k - pad < len`.
#[inline]
fn valid_range(out_len: usize, in_len: usize, k: usize, pad: usize, stride: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let limit = in_len + pad; // o*stride + k < in_len + pad
    let hi = if limit > k {
        ((limit - k - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Column matrix of one group: row `(icl*kh + ky)*kw + kx`, column `oy*ow + ox`,
/// zero where the kernel tap falls in the padding.
struct Im2col {
    rows: usize,
    cols: usize,
    ranges_y: Vec<(usize, usize)>,
    ranges_x: Vec<(usize, usize)>,
    /// 1x1, stride 1, no padding: the input plane is already the column matrix.
    identity: bool,
}

impl Im2col {
    fn new(d: &ConvDims, g: &Conv2dGeom) -> Self {
        let (s, p) = (g.stride, g.padding);
        Self {
            rows: d.cin_g * d.kh * d.kw,
            cols: d.oh * d.ow,
            ranges_y: (0..d.kh).map(|k| valid_range(d.oh, d.h, k, p, s)).collect(),
            ranges_x: (0..d.kw).map(|k| valid_range(d.ow, d.w, k, p, s)).collect(),
            identity: d.kh == 1 && d.kw == 1 && s == 1 && p == 0,
        }
    }

    fn gather<T: Real>(&self, d: &ConvDims, g: &Conv2dGeom, x: &[T], col: &mut [T]) {
        let (s, p) = (g.stride, g.padding);
        col.fill(T::zero());
        for icl in 0..d.cin_g {
            let plane = &x[icl * d.h * d.w..(icl + 1) * d.h * d.w];
            for ky in 0..d.kh {
                let (oy0, oy1) = self.ranges_y[ky];
                for kx in 0..d.kw {
                    let (ox0, ox1) = self.ranges_x[kx];
                    let r = (icl * d.kh + ky) * d.kw + kx;
                    let crow = &mut col[r * self.cols..(r + 1) * self.cols];
                    for oy in oy0..oy1 {
                        let xrow = &plane[(oy * s + ky - p) * d.w..];
                        let orow = &mut crow[oy * d.ow..(oy + 1) * d.ow];
                        for ox in ox0..ox1 {
                            orow[ox] = xrow[ox * s + kx - p];
                        }
                    }
                }
            }
        }
    }

    fn scatter_add<T: Real>(&self, d: &ConvDims, g: &Conv2dGeom, col: &[T], gx: &mut [T]) {
        let (s, p) = (g.stride, g.padding);
        for icl in 0..d.cin_g {
            let plane = &mut gx[icl * d.h * d.w..(icl + 1) * d.h * d.w];
            for ky in 0..d.kh {
                let (oy0, oy1) = self.ranges_y[ky];
                for kx in 0..d.kw {
                    let (ox0, ox1) = self.ranges_x[kx];
                    let r = (icl * d.kh + ky) * d.kw + kx;
                    let crow = &col[r * self.cols..(r + 1) * self.cols];
                    for oy in oy0..oy1 {
                        let base = (oy * s + ky - p) * d.w;
                        for ox in ox0..ox1 {
                            plane[base + ox * s + kx - p] += crow[oy * d.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation of `(B, C_in, H, W)` with `(C_out, C_in/groups, kh, kw)`.
pub fn conv2d<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    g: &Conv2dGeom,
) -> Result<Tensor<T>> {
    let d = conv_dims(x, w, g)?;
    if let Some(b) = b {
        if b.shape() != [d.c_out] {
            return Err(Error::shape(
                "conv2d",
                format!("bias shape {:?}, expected [{}]", b.shape(), d.c_out),
            ));
        }
    }
    let ic = Im2col::new(&d, g);
    let groups = g.groups;
    let mut out = vec![T::zero(); d.batch * d.c_out * ic.cols];
    let mut col = vec![T::zero(); if ic.identity { 0 } else { ic.rows * ic.cols }];
    let (xd, wd) = (x.data(), w.data());
    for bi in 0..d.batch {
        for grp in 0..groups {
            let xoff = (bi * d.c_in + grp * d.cin_g) * d.h * d.w;
            let xg = &xd[xoff..xoff + d.cin_g * d.h * d.w];
            let colm: &[T] = if ic.identity {
                xg
            } else {
                ic.gather(&d, g, xg, &mut col);
                &col
            };
            for ocl in 0..d.cout_g {
                let oc = grp * d.cout_g + ocl;
                let orow = &mut out[(bi * d.c_out + oc) * ic.cols..(bi * d.c_out + oc + 1) * ic.cols];
                if let Some(b) = b {
                    orow.fill(b.data()[oc]);
                }
                let wrow = &wd[oc * ic.rows..(oc + 1) * ic.rows];
                for (r, &wv) in wrow.iter().enumerate() {
                    if wv == T::zero() {
                        continue;
                    }
                    for (o, &c) in orow.iter_mut().zip(&colm[r * ic.cols..(r + 1) * ic.cols]) {
                        *o += wv * c;
                    }
                }
            }
        }
    }
    Tensor::new(&[d.batch, d.c_out, d.oh, d.ow], out)
}

/// Gradients of `conv2d` with respect to input, weight and bias.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: &Conv2dGeom,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let d = conv_dims(x, w, g)?;
    let ic = Im2col::new(&d, g);
    let mut gx = vec![T::zero(); x.numel()];
    let mut gw = vec![T::zero(); w.numel()];
    let mut gb = vec![T::zero(); d.c_out];
    let mut col = vec![T::zero(); if ic.identity { 0 } else { ic.rows * ic.cols }];
    let mut gcol = vec![T::zero(); ic.rows * ic.cols];
    let (xd, wd, god) = (x.data(), w.data(), grad_out.data());
    for bi in 0..d.batch {
        for grp in 0..g.groups {
            let xoff = (bi * d.c_in + grp * d.cin_g) * d.h * d.w;
            let xg = &xd[xoff..xoff + d.cin_g * d.h * d.w];
            let colm: &[T] = if ic.identity {
                xg
            } else {
                ic.gather(&d, g, xg, &mut col);
                &col
            };
            gcol.fill(T::zero());
            for ocl in 0..d.cout_g {
                let oc = grp * d.cout_g + ocl;
                let go = &god[(bi * d.c_out + oc) * ic.cols..(bi * d.c_out + oc + 1) * ic.cols];
                gb[oc] += go.iter().copied().sum::<T>();
                for r in 0..ic.rows {
                    let crow = &colm[r * ic.cols..(r + 1) * ic.cols];
                    let mut acc = T::zero();
                    for (&a, &c) in go.iter().zip(crow) {
                        acc += a * c;
                    }
                    gw[oc * ic.rows + r] += acc;
                    let wv = wd[oc * ic.rows + r];
                    if wv != T::zero() {
                        for (gc, &a) in gcol[r * ic.cols..(r + 1) * ic.cols].iter_mut().zip(go) {
                            *gc += wv * a;
                        }
                    }
                }
            }
            let gxg = &mut gx[xoff..xoff + d.cin_g * d.h * d.w];
            if ic.identity {
                for (a, &b) in gxg.iter_mut().zip(&gcol) {
                    *a += b;
                }
            } else {
                ic.scatter_add(&d, g, &gcol, gxg);
            }
        }
    }
    Ok((
        Tensor::new(x.shape(), gx)?,
        Tensor::new(w.shape(), gw)?,
        Tensor::new(&[d.c_out], gb)?,
    ))
}

/// Train-mode batch-norm statistics and the normalized input.
pub struct BatchNormCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    /// Biased batch variance.
    pub var: Vec<T>,
}

fn bn_dims<T: Real>(x: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::shape("batch_norm", format!("expected (B,C,H,W), got {s:?}")));
    }
    Ok((s[0], s[1], s[2] * s[3]))
}

/// Normalizes with batch statistics over (B, H, W) per channel and applies
/// the affine `gamma * xhat + beta`.
pub fn batch_norm_train<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let (b, c, hw) = bn_dims(x)?;
    if b < 2 {
        return Err(Error::InvalidArgument(
            "batch_norm in train mode needs a batch of at least 2".into(),
        ));
    }
    check_affine(gamma, beta, c)?;
    let n = T::lit((b * hw) as f64);
    let xd = x.data();
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for bi in 0..b {
        for ch in 0..c {
            let base = (bi * c + ch) * hw;
            mean[ch] += xd[base..base + hw].iter().copied().sum::<T>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    for bi in 0..b {
        for ch in 0..c {
            let base = (bi * c + ch) * hw;
            for &v in &xd[base..base + hw] {
                let dv = v - mean[ch];
                var[ch] += dv * dv;
            }
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    let inv_std: Vec<T> = var.iter().map(|&v| (v + T::lit(eps)).sqrt().recip()).collect();
    let mut xhat = vec![T::zero(); xd.len()];
    let mut out = vec![T::zero(); xd.len()];
    for bi in 0..b {
        for ch in 0..c {
            let base = (bi * c + ch) * hw;
            let (gm, bt) = (gamma.data()[ch], beta.data()[ch]);
            for i in base..base + hw {
                let xh = (xd[i] - mean[ch]) * inv_std[ch];
                xhat[i] = xh;
                out[i] = gm * xh + bt;
            }
        }
    }
    Ok((
        Tensor::new(x.shape(), out)?,
        BatchNormCache {
            xhat,
            inv_std,
            mean,
            var,
        },
    ))
}

/// Eval-mode batch norm with fixed statistics. Returns output, xhat and inv_std.
pub fn batch_norm_eval<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &[T],
    running_var: &[T],
    eps: f64,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let (b, c, hw) = bn_dims(x)?;
    check_affine(gamma, beta, c)?;
    if running_mean.len() != c || running_var.len() != c {
        return Err(Error::shape("batch_norm", "running statistics length mismatch"));
    }
    let inv_std: Vec<T> = running_var
        .iter()
        .map(|&v| (v + T::lit(eps)).sqrt().recip())
        .collect();
    let xd = x.data();
    let mut xhat = vec![T::zero(); xd.len()];
    let mut out = vec![T::zero(); xd.len()];
    for bi in 0..b {
        for ch in 0..c {
            let base = (bi * c + ch) * hw;
            for i in base..base + hw {
                let xh = (xd[i] - running_mean[ch]) * inv_std[ch];
                xhat[i] = xh;
                out[i] = gamma.data()[ch] * xh + beta.data()[ch];
            }
        }
    }
    Ok((
        Tensor::new(x.shape(), out)?,
        BatchNormCache {
            xhat,
            inv_std,
            mean: running_mean.to_vec(),
            var: running_var.to_vec(),
        },
    ))
}

fn check_affine<T: Real>(gamma: &Tensor<T>, beta: &Tensor<T>, c: usize) -> Result<()> {
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape(
            "batch_norm",
            format!(
                "gamma {:?} / beta {:?} must both be [{c}]",
                gamma.shape(),
                beta.shape()
            ),
        ));
    }
    Ok(())
}

/// Returns (grad_x, grad_gamma, grad_beta). `train` selects whether the
/// statistics depended on `x`.
pub fn batch_norm_backward<T: Real>(
    shape: &[usize],
    gamma: &Tensor<T>,
    cache: &BatchNormCache<T>,
    grad_out: &Tensor<T>,
    train: bool,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (b, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
    let god = grad_out.data();
    let mut gg = vec![T::zero(); c];
    let mut gbeta = vec![T::zero(); c];
    for bi in 0..b {
        for ch in 0..c {
            let base = (bi * c + ch) * hw;
            for i in base..base + hw {
                gg[ch] += god[i] * cache.xhat[i];
                gbeta[ch] += god[i];
            }
        }
    }
    let mut gx = vec![T::zero(); god.len()];
    let n = T::lit((b * hw) as f64);
    for bi in 0..b {
        for ch in 0..c {
            let base = (bi * c + ch) * hw;
            let gm = gamma.data()[ch];
            let is = cache.inv_std[ch];
            for i in base..base + hw {
                gx[i] = if train {
                    // dx = gamma*inv_std/N * (N*dy - sum(dy) - xhat*sum(dy*xhat))
                    gm * is / n * (n * god[i] - gbeta[ch] - cache.xhat[i] * gg[ch])
                } else {
                    gm * is * god[i]
                };
            }
        }
    }
    (
        Tensor::new(shape, gx).expect("shape preserved"),
        Tensor::new(&[c], gg).expect("channel vector"),
        Tensor::new(&[c], gbeta).expect("channel vector"),
    )
}

/// `(outer, len, inner)` decomposition around `axis`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Max-subtracted softmax along `axis`.
pub fn softmax<T: Real>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if axis >= x.rank() {
        return Err(Error::shape("softmax", format!("axis {axis} out of range for {:?}", x.shape())));
    }
    let (outer, len, inner) = axis_split(x.shape(), axis);
    let xd = x.data();
    let mut out = vec![T::zero(); xd.len()];
    for o in 0..outer {
        for j in 0..inner {
            let at = |i: usize| (o * len + i) * inner + j;
            let mut mx = T::neg_infinity();
            for i in 0..len {
                mx = mx.max(xd[at(i)]);
            }
            let mut total = T::zero();
            for i in 0..len {
                let e = (xd[at(i)] - mx).exp();
                out[at(i)] = e;
                total += e;
            }
            for i in 0..len {
                out[at(i)] /= total;
            }
        }
    }
    Tensor::new(x.shape(), out)
}

pub fn softmax_backward<T: Real>(y: &Tensor<T>, grad_out: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, len, inner) = axis_split(y.shape(), axis);
    let (yd, gd) = (y.data(), grad_out.data());
    let mut gx = vec![T::zero(); yd.len()];
    for o in 0..outer {
        for j in 0..inner {
            let at = |i: usize| (o * len + i) * inner + j;
            let dot: T = (0..len).map(|i| yd[at(i)] * gd[at(i)]).sum();
            for i in 0..len {
                gx[at(i)] = yd[at(i)] * (gd[at(i)] - dot);
            }
        }
    }
    Tensor::new(y.shape(), gx).expect("shape preserved")
}

/// `(B, M, K) x (B, K, N) -> (B, M, N)`; 2-D inputs are treated as `B = 1`.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (batch, m, k, n, out_shape) = match (a.shape(), b.shape()) {
        ([m, k], [k2, n]) if k == k2 => (1, *m, *k, *n, vec![*m, *n]),
        ([ba, m, k], [bb, k2, n]) if ba == bb && k == k2 => (*ba, *m, *k, *n, vec![*ba, *m, *n]),
        (sa, sb) => {
            return Err(Error::shape(
                "matmul",
                format!("incompatible shapes {sa:?} x {sb:?}"),
            ))
        }
    };
    let mut out = vec![T::zero(); batch * m * n];
    let (ad, bd) = (a.data(), b.data());
    for bi in 0..batch {
        let (ab, bb, ob) = (bi * m * k, bi * k * n, bi * m * n);
        for i in 0..m {
            let orow = &mut out[ob + i * n..ob + (i + 1) * n];
            for p in 0..k {
                let av = ad[ab + i * k + p];
                if av == T::zero() {
                    continue;
                }
                let brow = &bd[bb + p * n..bb + (p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
    Tensor::new(&out_shape, out)
}

/// Swaps the last two axes.
pub fn transpose_last2<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() < 2 {
        return Err(Error::shape("transpose", format!("need rank >= 2, got {s:?}")));
    }
    let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
    let batch = x.numel() / (r * c).max(1);
    let mut out = vec![T::zero(); x.numel()];
    let xd = x.data();
    for b in 0..batch {
        let base = b * r * c;
        for i in 0..r {
            for j in 0..c {
                out[base + j * r + i] = xd[base + i * c + j];
            }
        }
    }
    let mut shape = s.to_vec();
    let l = shape.len();
    shape.swap(l - 1, l - 2);
    Tensor::new(&shape, out)
}

/// Shape after reducing `axes` with keep-dims.
pub(crate) fn reduced_shape(shape: &[usize], axes: &[usize]) -> Result<Vec<usize>> {
    let mut out = shape.to_vec();
    for &a in axes {
        if a >= shape.len() {
            return Err(Error::shape("reduce", format!("axis {a} out of range for {shape:?}")));
        }
        if shape[a] == 0 {
            return Err(Error::shape("reduce", "cannot reduce an empty axis"));
        }
        out[a] = 1;
    }
    Ok(out)
}

pub fn reduce_mean<T: Real>(x: &Tensor<T>, axes: &[usize]) -> Result<Tensor<T>> {
    let shape = reduced_shape(x.shape(), axes)?;
    let map = index_map(x.shape(), &shape);
    let mut out = Tensor::zeros(&shape);
    let count = T::lit((x.numel() / out.numel()) as f64);
    for (v, &o) in x.data().iter().zip(&map) {
        out.data_mut()[o] += *v;
    }
    out.data_mut().iter_mut().for_each(|v| *v /= count);
    Ok(out)
}

/// Max over `axes` with keep-dims; also returns the flat argmax (first on ties).
pub fn reduce_max<T: Real>(x: &Tensor<T>, axes: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
    let shape = reduced_shape(x.shape(), axes)?;
    let map = index_map(x.shape(), &shape);
    let mut out = Tensor::full(&shape, T::neg_infinity());
    let mut arg = vec![usize::MAX; out.numel()];
    for (i, (v, &o)) in x.data().iter().zip(&map).enumerate() {
        if arg[o] == usize::MAX || *v > out.data()[o] {
            out.data_mut()[o] = *v;
            arg[o] = i;
        }
    }
    Ok((out, arg))
}

/// Mean negative log-likelihood and the softmax probabilities.
pub fn cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let s = logits.shape();
    if s.len() != 2 || s[0] != labels.len() || s[0] == 0 {
        return Err(Error::shape(
            "cross_entropy",
            format!("logits {s:?} vs {} labels", labels.len()),
        ));
    }
    let k = s[1];
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            classes: k,
        });
    }
    let probs = softmax(logits, 1)?;
    let mut loss = T::zero();
    for (row, &l) in logits.data().chunks(k).zip(labels) {
        let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<T>().ln();
        loss += lse - row[l];
    }
    Ok((loss / T::lit(labels.len() as f64), probs))
}
