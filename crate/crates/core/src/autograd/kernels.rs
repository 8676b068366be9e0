//! Forward and backward kernels on flat slices. Shapes are validated by the
//! caller (the tape), so these only index.

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub len: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_len: usize,
}

impl ConvDims {
    /// Output positions `o` for which tap `kk` reads inside the input.
    #[inline]
    fn valid(&self, kk: usize) -> (usize, usize) {
        let pad = self.padding as isize;
        let kk = kk as isize;
        let stride = self.stride as isize;
        let lo = if pad > kk {
            (pad - kk + stride - 1) / stride
        } else {
            0
        };
        let last = self.len as isize - 1 + pad - kk;
        if last < 0 {
            return (0, 0);
        }
        let hi = (last / stride + 1).min(self.out_len as isize);
        let lo = lo.min(hi);
        (lo as usize, hi as usize)
    }

    /// Wide enough that im2col plus a matrix product beats direct loops.
    fn use_gemm(&self) -> bool {
        self.c_out >= 4 && self.c_in * self.kernel >= 8
    }
}

/// Unfolds sample `n` into a `[c_in * kernel, out_len]` matrix, zeros
/// where the window reads padding.
fn im2col<F: Scalar>(x: &[F], n: usize, d: &ConvDims, col: &mut [F]) {
    for ci in 0..d.c_in {
        let xrow = &x[(n * d.c_in + ci) * d.len..][..d.len];
        for kk in 0..d.kernel {
            let crow = &mut col[(ci * d.kernel + kk) * d.out_len..][..d.out_len];
            let (lo, hi) = d.valid(kk);
            crow[..lo].fill(F::zero());
            crow[hi..].fill(F::zero());
            if lo >= hi {
                continue;
            }
            let start = lo * d.stride + kk - d.padding;
            if d.stride == 1 {
                crow[lo..hi].copy_from_slice(&xrow[start..start + hi - lo]);
            } else {
                for (j, c) in crow[lo..hi].iter_mut().enumerate() {
                    *c = xrow[start + j * d.stride];
                }
            }
        }
    }
}

/// Adds an unfolded gradient back onto sample `n` of `dx`.
fn col2im<F: Scalar>(col: &[F], n: usize, d: &ConvDims, dx: &mut [F]) {
    for ci in 0..d.c_in {
        let drow = &mut dx[(n * d.c_in + ci) * d.len..][..d.len];
        for kk in 0..d.kernel {
            let crow = &col[(ci * d.kernel + kk) * d.out_len..][..d.out_len];
            let (lo, hi) = d.valid(kk);
            if lo >= hi {
                continue;
            }
            let start = lo * d.stride + kk - d.padding;
            if d.stride == 1 {
                for (o, &c) in drow[start..start + hi - lo].iter_mut().zip(&crow[lo..hi]) {
                    *o += c;
                }
            } else {
                for (j, &c) in crow[lo..hi].iter().enumerate() {
                    drow[start + j * d.stride] += c;
                }
            }
        }
    }
}

fn conv1d_forward_gemm<F: Scalar>(x: &[F], w: &[F], bias: Option<&[F]>, d: &ConvDims) -> Vec<F> {
    let rows = d.c_in * d.kernel;
    let ol = d.out_len as isize;
    let mut out = vec![F::zero(); d.batch * d.c_out * d.out_len];
    let mut col = vec![F::zero(); rows * d.out_len];
    for n in 0..d.batch {
        im2col(x, n, d, &mut col);
        let o = &mut out[n * d.c_out * d.out_len..][..d.c_out * d.out_len];
        if let Some(b) = bias {
            for (row, &bv) in o.chunks_mut(d.out_len).zip(b) {
                row.fill(bv);
            }
        }
        F::gemm(
            d.c_out,
            rows,
            d.out_len,
            F::one(),
            (w, rows as isize, 1),
            (&col, ol, 1),
            F::one(),
            (o, ol, 1),
        );
    }
    out
}

pub(crate) fn conv1d_forward<F: Scalar>(
    x: &[F],
    w: &[F],
    bias: Option<&[F]>,
    d: &ConvDims,
) -> Vec<F> {
    if d.use_gemm() {
        return conv1d_forward_gemm(x, w, bias, d);
    }
    let mut out = vec![F::zero(); d.batch * d.c_out * d.out_len];
    for n in 0..d.batch {
        for co in 0..d.c_out {
            let orow = &mut out[(n * d.c_out + co) * d.out_len..][..d.out_len];
            if let Some(b) = bias {
                orow.iter_mut().for_each(|o| *o = b[co]);
            }
            for ci in 0..d.c_in {
                let xrow = &x[(n * d.c_in + ci) * d.len..][..d.len];
                let wrow = &w[(co * d.c_in + ci) * d.kernel..][..d.kernel];
                for (kk, &wv) in wrow.iter().enumerate() {
                    if wv == F::zero() {
                        continue;
                    }
                    let (lo, hi) = d.valid(kk);
                    if lo >= hi {
                        continue;
                    }
                    let start = lo * d.stride + kk - d.padding;
                    if d.stride == 1 {
                        for (o, &xv) in orow[lo..hi].iter_mut().zip(&xrow[start..]) {
                            *o += wv * xv;
                        }
                    } else {
                        for (j, o) in orow[lo..hi].iter_mut().enumerate() {
                            *o += wv * xrow[start + j * d.stride];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates input, weight and bias gradients for one conv node.
pub(crate) fn conv1d_backward<F: Scalar>(
    x: &[F],
    w: &[F],
    g: &[F],
    d: &ConvDims,
    mut dx: Option<&mut [F]>,
    mut dw: Option<&mut [F]>,
    db: Option<&mut [F]>,
) {
    if d.use_gemm() {
        conv1d_backward_gemm(x, w, g, d, dx.as_deref_mut(), dw.as_deref_mut());
        bias_grad(g, d, db);
        return;
    }
    for n in 0..d.batch {
        for co in 0..d.c_out {
            let grow = &g[(n * d.c_out + co) * d.out_len..][..d.out_len];
            for ci in 0..d.c_in {
                let base = (n * d.c_in + ci) * d.len;
                let xrow = &x[base..][..d.len];
                let wbase = (co * d.c_in + ci) * d.kernel;
                for kk in 0..d.kernel {
                    let (lo, hi) = d.valid(kk);
                    if lo >= hi {
                        continue;
                    }
                    let start = lo * d.stride + kk - d.padding;
                    if let Some(dw) = dw.as_deref_mut() {
                        let mut acc = F::zero();
                        for (j, &gv) in grow[lo..hi].iter().enumerate() {
                            acc += gv * xrow[start + j * d.stride];
                        }
                        dw[wbase + kk] += acc;
                    }
                    if let Some(dx) = dx.as_deref_mut() {
                        let wv = w[wbase + kk];
                        if wv != F::zero() {
                            let drow = &mut dx[base..][..d.len];
                            for (j, &gv) in grow[lo..hi].iter().enumerate() {
                                drow[start + j * d.stride] += wv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
    bias_grad(g, d, db);
}

fn bias_grad<F: Scalar>(g: &[F], d: &ConvDims, db: Option<&mut [F]>) {
    if let Some(db) = db {
        for n in 0..d.batch {
            for (co, b) in db.iter_mut().enumerate() {
                *b += g[(n * d.c_out + co) * d.out_len..][..d.out_len]
                    .iter()
                    .copied()
                    .sum::<F>();
            }
        }
    }
}

fn conv1d_backward_gemm<F: Scalar>(
    x: &[F],
    w: &[F],
    g: &[F],
    d: &ConvDims,
    mut dx: Option<&mut [F]>,
    mut dw: Option<&mut [F]>,
) {
    let rows = d.c_in * d.kernel;
    let ol = d.out_len as isize;
    let mut col = vec![F::zero(); rows * d.out_len];
    for n in 0..d.batch {
        let gn = &g[n * d.c_out * d.out_len..][..d.c_out * d.out_len];
        if let Some(dw) = dw.as_deref_mut() {
            // dW += G_n col_n^T
            im2col(x, n, d, &mut col);
            F::gemm(
                d.c_out,
                d.out_len,
                rows,
                F::one(),
                (gn, ol, 1),
                (&col, 1, ol),
                F::one(),
                (dw, rows as isize, 1),
            );
        }
        if let Some(dx) = dx.as_deref_mut() {
            // dcol = W^T G_n
            F::gemm(
                rows,
                d.c_out,
                d.out_len,
                F::one(),
                (w, 1, rows as isize),
                (gn, ol, 1),
                F::zero(),
                (&mut col, ol, 1),
            );
            col2im(&col, n, d, dx);
        }
    }
}

/// Per-channel mean and biased variance over the batch and length axes.
pub(crate) fn channel_stats<F: Scalar>(
    x: &[F],
    batch: usize,
    ch: usize,
    len: usize,
) -> (Vec<F>, Vec<F>) {
    let count = F::of_usize(batch * len);
    let mut mean = vec![F::zero(); ch];
    let mut var = vec![F::zero(); ch];
    for c in 0..ch {
        let mut s = F::zero();
        for n in 0..batch {
            s += x[(n * ch + c) * len..][..len].iter().copied().sum::<F>();
        }
        let m = s / count;
        let mut v = F::zero();
        for n in 0..batch {
            for &xv in &x[(n * ch + c) * len..][..len] {
                let d = xv - m;
                v += d * d;
            }
        }
        mean[c] = m;
        var[c] = v / count;
    }
    (mean, var)
}

/// y = gamma * (x - mean) * inv_std + beta; returns (y, xhat).
pub(crate) fn affine_normalize<F: Scalar>(
    x: &[F],
    mean: &[F],
    inv_std: &[F],
    gamma: &[F],
    beta: &[F],
    batch: usize,
    len: usize,
) -> (Vec<F>, Vec<F>) {
    let ch = mean.len();
    let mut y = vec![F::zero(); x.len()];
    let mut xhat = vec![F::zero(); x.len()];
    for n in 0..batch {
        for c in 0..ch {
            let off = (n * ch + c) * len;
            for i in off..off + len {
                let h = (x[i] - mean[c]) * inv_std[c];
                xhat[i] = h;
                y[i] = gamma[c] * h + beta[c];
            }
        }
    }
    (y, xhat)
}

pub(crate) fn avgpool_forward<F: Scalar>(
    x: &[F],
    rows: usize,
    len: usize,
    kernel: usize,
    stride: usize,
    out_len: usize,
) -> Vec<F> {
    let inv = F::one() / F::of_usize(kernel);
    let mut out = vec![F::zero(); rows * out_len];
    for r in 0..rows {
        let xrow = &x[r * len..][..len];
        for (o, y) in out[r * out_len..][..out_len].iter_mut().enumerate() {
            *y = xrow[o * stride..][..kernel].iter().copied().sum::<F>() * inv;
        }
    }
    out
}

pub(crate) fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// Iterates an output of shape `out` together with the flat offsets of two
/// broadcast operands of the same rank.
pub(crate) fn for_each_broadcast(
    out: &[usize],
    a: &[usize],
    b: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let rank = out.len();
    let strides = |s: &[usize]| {
        let mut st = vec![0usize; rank];
        let mut acc = 1;
        for i in (0..rank).rev() {
            st[i] = if s[i] == 1 && out[i] != 1 { 0 } else { acc };
            acc *= s[i];
        }
        st
    };
    let sa = strides(a);
    let sb = strides(b);
    let total: usize = out.iter().product();
    if total == 0 {
        return;
    }
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    for o in 0..total {
        f(o, ia, ib);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            ia += sa[ax];
            ib += sb[ax];
            if idx[ax] < out[ax] {
                break;
            }
            ia -= sa[ax] * out[ax];
            ib -= sb[ax] * out[ax];
            idx[ax] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_range_matches_brute_force() {
        for len in 1..9 {
            for k in 1..=len + 2 {
                for pad in 0..3 {
                    for stride in 1..4 {
                        if len + 2 * pad < k {
                            continue;
                        }
                        let out_len = (len + 2 * pad - k) / stride + 1;
                        let d = ConvDims {
                            batch: 1,
                            c_in: 1,
                            len,
                            c_out: 1,
                            kernel: k,
                            stride,
                            padding: pad,
                            out_len,
                        };
                        for kk in 0..k {
                            let expect: Vec<usize> = (0..out_len)
                                .filter(|&o| {
                                    let p = (o * stride + kk) as isize - pad as isize;
                                    p >= 0 && (p as usize) < len
                                })
                                .collect();
                            let (lo, hi) = d.valid(kk);
                            assert_eq!((lo..hi).collect::<Vec<_>>(), expect);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn gemm_conv_matches_brute_force() {
        for &(c_in, c_out, len, kernel, stride, padding) in
            &[(3, 5, 17, 3, 1, 1), (4, 6, 20, 5, 2, 2), (8, 4, 9, 1, 2, 0), (2, 4, 11, 7, 1, 3)]
        {
            let batch = 2;
            let out_len = (len + 2 * padding - kernel) / stride + 1;
            let d = ConvDims { batch, c_in, len, c_out, kernel, stride, padding, out_len };
            assert!(d.use_gemm());
            let f = |i: usize, s: f64| ((i as f64 * s).sin() * 3.0).round() / 4.0;
            let x: Vec<f64> = (0..batch * c_in * len).map(|i| f(i, 0.7)).collect();
            let w: Vec<f64> = (0..c_out * c_in * kernel).map(|i| f(i, 1.3)).collect();
            let b: Vec<f64> = (0..c_out).map(|i| f(i, 0.4)).collect();
            let g: Vec<f64> = (0..batch * c_out * out_len).map(|i| f(i, 2.1)).collect();
            let tap = |o: usize, kk: usize| {
                let p = (o * stride + kk) as isize - padding as isize;
                (p >= 0 && (p as usize) < len).then_some(p as usize)
            };
            let mut y = vec![0.0; g.len()];
            let (mut dx, mut dw) = (vec![0.0; x.len()], vec![0.0; w.len()]);
            for n in 0..batch {
                for co in 0..c_out {
                    for o in 0..out_len {
                        let yi = (n * c_out + co) * out_len + o;
                        y[yi] = b[co];
                        for ci in 0..c_in {
                            for kk in 0..kernel {
                                if let Some(p) = tap(o, kk) {
                                    let xi = (n * c_in + ci) * len + p;
                                    let wi = (co * c_in + ci) * kernel + kk;
                                    y[yi] += w[wi] * x[xi];
                                    dx[xi] += w[wi] * g[yi];
                                    dw[wi] += x[xi] * g[yi];
                                }
                            }
                        }
                    }
                }
            }
            assert_eq!(conv1d_forward(&x, &w, Some(&b), &d), y);
            let (mut gx, mut gw, mut gb) = (vec![0.0; x.len()], vec![0.0; w.len()], vec![0.0; c_out]);
            conv1d_backward(&x, &w, &g, &d, Some(&mut gx), Some(&mut gw), Some(&mut gb));
            // operands are multiples of 1/4, so sums are exact in any order
            assert_eq!(gx, dx);
            assert_eq!(gw, dw);
        }
    }

    #[test]
    fn broadcast_offsets() {
        let mut seen = Vec::new();
        for_each_broadcast(&[2, 3, 2], &[2, 3, 1], &[2, 1, 2], |o, a, b| seen.push((o, a, b)));
        assert_eq!(seen.len(), 12);
        assert_eq!(seen[0], (0, 0, 0));
        assert_eq!(seen[1], (1, 0, 1));
        assert_eq!(seen[2], (2, 1, 0));
        assert_eq!(seen[7], (7, 3, 3));
    }
}
