use super::{gemm, Float, Tensor, View};

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn k(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.oh * self.ow
    }
}

/// Output columns `ox` whose input column `ox*stride + kx - pad` lies inside `0..w`.
fn valid_cols(g: &ConvGeom, kx: usize) -> (usize, usize) {
    let lo = g.pad.saturating_sub(kx).div_ceil(g.stride);
    let hi = if g.w + g.pad > kx { ((g.w + g.pad - kx - 1) / g.stride + 1).min(g.ow) } else { 0 };
    (lo.min(hi), hi)
}

/// Unfolds one image `[c_in, h, w]` into columns `off..off + oh*ow` of a
/// `[c_in*kh*kw, ld]` matrix.
fn im2col<T: Float>(x: &[T], g: &ConvGeom, cols: &mut [T], ld: usize, off: usize) {
    let p = g.p();
    for ci in 0..g.c_in {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * ld + off..row * ld + off + p];
                let (lo, hi) = valid_cols(g, kx);
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let seg = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        seg.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    seg[..lo].fill(T::zero());
                    seg[hi..].fill(T::zero());
                    if lo == hi {
                        continue;
                    }
                    let start = lo * g.stride + kx - g.pad;
                    if g.stride == 1 {
                        seg[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                    } else {
                        for (d, s) in seg[lo..hi].iter_mut().zip(src[start..].iter().step_by(g.stride)) {
                            *d = *s;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates `cols` back into `dx`.
fn col2im<T: Float>(cols: &[T], g: &ConvGeom, dx: &mut [T], ld: usize, off: usize) {
    let p = g.p();
    for ci in 0..g.c_in {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &cols[row * ld + off..row * ld + off + p];
                let (lo, hi) = valid_cols(g, kx);
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    if lo == hi {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let seg = &src[oy * g.ow + lo..oy * g.ow + hi];
                    let start = lo * g.stride + kx - g.pad;
                    for (d, s) in dst[start..].iter_mut().step_by(g.stride).zip(seg) {
                        *d += *s;
                    }
                }
            }
        }
    }
}

impl<T: Float> Tensor<T> {
    /// 2-D cross-correlation, `self: [b, c_in, h, w]`, `weight: [c_out, c_in, kh, kw]`,
    /// zero padding on all sides.
    pub fn conv2d(&self, weight: &Tensor<T>, bias: Option<&Tensor<T>>, stride: usize, pad: usize) -> Tensor<T> {
        assert_eq!(self.rank(), 4, "conv2d input must be [b, c, h, w], got {:?}", self.shape());
        assert_eq!(weight.rank(), 4, "conv2d weight must be [o, i, kh, kw]");
        let (b, c_in, h, w) = (self.dim(0), self.dim(1), self.dim(2), self.dim(3));
        let (c_out, wc, kh, kw) = (weight.dim(0), weight.dim(1), weight.dim(2), weight.dim(3));
        assert_eq!(c_in, wc, "conv2d channel mismatch: input {c_in}, weight {wc}");
        assert!(stride >= 1);
        assert!(h + 2 * pad >= kh && w + 2 * pad >= kw, "conv2d kernel larger than padded input {:?}", self.shape());
        if let Some(bias) = bias {
            assert_eq!(bias.shape(), &[c_out]);
        }
        let g = ConvGeom {
            c_in,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (w + 2 * pad - kw) / stride + 1,
        };
        let (k, p) = (g.k(), g.p());
        let bp = b * p;
        let x = self.data();
        let wd = weight.data();
        let mut cols = vec![T::zero(); k * bp];
        for bi in 0..b {
            im2col(&x[bi * c_in * h * w..(bi + 1) * c_in * h * w], &g, &mut cols, bp, bi * p);
        }
        let mut yt = vec![T::zero(); c_out * bp];
        gemm(View::row_major(wd, c_out, k), View::row_major(&cols, k, bp), T::zero(), &mut yt);
        let mut out = vec![T::zero(); b * c_out * p];
        let bias_data = bias.map(|t| t.data().to_vec());
        for co in 0..c_out {
            let bv = bias_data.as_ref().map_or(T::zero(), |bd| bd[co]);
            for bi in 0..b {
                let src = &yt[co * bp + bi * p..co * bp + (bi + 1) * p];
                let dst = &mut out[(bi * c_out + co) * p..(bi * c_out + co + 1) * p];
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d = v + bv;
                }
            }
        }
        let saved_cols = weight.requires_grad().then_some(cols);

        let mut inputs = vec![self, weight];
        if let Some(bias) = bias {
            inputs.push(bias);
        }
        Tensor::from_op(out, vec![b, c_out, g.oh, g.ow], &inputs, move |inp, _, gy| {
            let wd = inp[1].data();
            let mut gyt = vec![T::zero(); c_out * bp];
            for co in 0..c_out {
                for bi in 0..b {
                    gyt[co * bp + bi * p..co * bp + (bi + 1) * p].copy_from_slice(&gy[(bi * c_out + co) * p..(bi * c_out + co + 1) * p]);
                }
            }
            let gyv = View::row_major(&gyt, c_out, bp);
            let gx = inp[0].requires_grad().then(|| {
                let mut dcols = vec![T::zero(); k * bp];
                gemm(View::row_major(wd, c_out, k).t(), gyv, T::zero(), &mut dcols);
                let mut gx = vec![T::zero(); b * c_in * h * w];
                for bi in 0..b {
                    col2im(&dcols, &g, &mut gx[bi * c_in * h * w..(bi + 1) * c_in * h * w], bp, bi * p);
                }
                gx
            });
            let gw = inp[1].requires_grad().then(|| {
                let cols = saved_cols.as_ref().expect("columns kept for a tracked weight");
                let mut gw = vec![T::zero(); c_out * k];
                gemm(gyv, View::row_major(cols, k, bp).t(), T::zero(), &mut gw);
                gw
            });
            let mut grads = vec![gx, gw];
            if inp.len() == 3 {
                grads.push(inp[2].requires_grad().then(|| (0..c_out).map(|co| gyt[co * bp..(co + 1) * bp].iter().copied().sum::<T>()).collect()));
            }
            grads
        })
    }

    /// Nearest-neighbour ×2 upsampling of `[b, c, h, w]`.
    pub fn upsample2x(&self) -> Tensor<T> {
        assert_eq!(self.rank(), 4);
        let (b, c, h, w) = (self.dim(0), self.dim(1), self.dim(2), self.dim(3));
        let x = self.data();
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); b * c * oh * ow];
        for plane in 0..b * c {
            let src = &x[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
            for y in 0..oh {
                for xx in 0..ow {
                    dst[y * ow + xx] = src[(y / 2) * w + xx / 2];
                }
            }
        }
        Tensor::from_op(out, vec![b, c, oh, ow], &[self], move |_, _, g| {
            let mut gx = vec![T::zero(); b * c * h * w];
            for plane in 0..b * c {
                let src = &g[plane * oh * ow..(plane + 1) * oh * ow];
                let dst = &mut gx[plane * h * w..(plane + 1) * h * w];
                for y in 0..oh {
                    for xx in 0..ow {
                        dst[(y / 2) * w + xx / 2] += src[y * ow + xx];
                    }
                }
            }
            vec![Some(gx)]
        })
    }

    /// 2×2 average pooling with stride 2 of `[b, c, h, w]` (even `h`, `w`).
    pub fn avg_pool2(&self) -> Tensor<T> {
        assert_eq!(self.rank(), 4);
        let (b, c, h, w) = (self.dim(0), self.dim(1), self.dim(2), self.dim(3));
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even sides, got {h}x{w}");
        let (oh, ow) = (h / 2, w / 2);
        let x = self.data();
        let quarter = T::of(0.25);
        let mut out = vec![T::zero(); b * c * oh * ow];
        for plane in 0..b * c {
            let src = &x[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
            for y in 0..oh {
                for xx in 0..ow {
                    let i = 2 * y * w + 2 * xx;
                    dst[y * ow + xx] = (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]) * quarter;
                }
            }
        }
        Tensor::from_op(out, vec![b, c, oh, ow], &[self], move |_, _, g| {
            let mut gx = vec![T::zero(); b * c * h * w];
            for plane in 0..b * c {
                let src = &g[plane * oh * ow..(plane + 1) * oh * ow];
                let dst = &mut gx[plane * h * w..(plane + 1) * h * w];
                for y in 0..oh {
                    for xx in 0..ow {
                        let v = src[y * ow + xx] * quarter;
                        let i = 2 * y * w + 2 * xx;
                        dst[i] = v;
                        dst[i + 1] = v;
                        dst[i + w] = v;
                        dst[i + w + 1] = v;
                    }
                }
            }
            vec![Some(gx)]
        })
    }

    /// Per-sample, per-channel normalization over the spatial axes (no affine).
    pub fn instance_norm(&self, eps: f64) -> Tensor<T> {
        assert_eq!(self.rank(), 4);
        let planes = self.dim(0) * self.dim(1);
        let n = self.dim(2) * self.dim(3);
        let eps = T::of(eps);
        let nf = T::of(n as f64);
        let x = self.data();
        let mut out = vec![T::zero(); x.len()];
        let mut inv_std = vec![T::zero(); planes];
        for pl in 0..planes {
            let src = &x[pl * n..(pl + 1) * n];
            let mean = src.iter().copied().sum::<T>() / nf;
            let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let is = T::one() / (var + eps).sqrt();
            inv_std[pl] = is;
            for (d, &v) in out[pl * n..(pl + 1) * n].iter_mut().zip(src) {
                *d = (v - mean) * is;
            }
        }
        Tensor::from_op(out, self.shape().to_vec(), &[self], move |_, y, g| {
            let mut gx = vec![T::zero(); g.len()];
            for pl in 0..planes {
                let (yp, gp) = (&y[pl * n..(pl + 1) * n], &g[pl * n..(pl + 1) * n]);
                let gm = gp.iter().copied().sum::<T>() / nf;
                let gym = yp.iter().zip(gp).map(|(&a, &b)| a * b).sum::<T>() / nf;
                for i in 0..n {
                    gx[pl * n + i] = inv_std[pl] * (gp[i] - gm - yp[i] * gym);
                }
            }
            vec![Some(gx)]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;

    fn seq(n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|i| ((i * 37 % 11) as f64 - 5.0) * scale + 0.011 * i as f64).collect()
    }

    /// Direct quadruple loop, independent of im2col.
    fn conv_naive(x: &[f64], xs: [usize; 4], w: &[f64], ws: [usize; 4], bias: Option<&[f64]>, s: usize, p: usize) -> Vec<f64> {
        let [b, ci, h, wd] = xs;
        let [co, _, kh, kw] = ws;
        let oh = (h + 2 * p - kh) / s + 1;
        let ow = (wd + 2 * p - kw) / s + 1;
        let mut out = vec![0.0; b * co * oh * ow];
        for bi in 0..b {
            for o in 0..co {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut acc = bias.map_or(0.0, |bb| bb[o]);
                        for c in 0..ci {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (y * s + ky) as isize - p as isize;
                                    let ix = (xx * s + kx) as isize - p as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        acc += x[((bi * ci + c) * h + iy as usize) * wd + ix as usize]
                                            * w[((o * ci + c) * kh + ky) * kw + kx];
                                    }
                                }
                            }
                        }
                        out[((bi * co + o) * oh + y) * ow + xx] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_loops() {
        for &(k, s, p, h) in &[(4, 2, 1, 8), (3, 1, 1, 5), (1, 1, 0, 4), (4, 2, 1, 2), (3, 2, 0, 7), (3, 3, 2, 7), (5, 2, 3, 6), (2, 3, 1, 5), (3, 1, 2, 2)] {
            let xs = [2, 3, h, h];
            let ws = [4, 3, k, k];
            let x = seq(xs.iter().product(), 0.1);
            let w = seq(ws.iter().product(), 0.05);
            let bias = [0.1, -0.2, 0.3, 0.0];
            let got = Tensor::<f64>::from_vec(x.clone(), &xs).conv2d(
                &Tensor::from_vec(w.clone(), &ws),
                Some(&Tensor::from_vec(bias.to_vec(), &[4])),
                s,
                p,
            );
            let want = conv_naive(&x, xs, &w, ws, Some(&bias), s, p);
            for (a, b) in got.data().iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "k{k} s{s} p{p}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn conv_gradients() {
        for &(k, s, p) in &[(4, 2, 1), (3, 1, 1), (1, 1, 0), (3, 2, 2), (2, 3, 1)] {
            let xs = [2, 2, 6, 6];
            let ws = [3, 2, k, k];
            let w = Tensor::<f64>::from_vec(seq(ws.iter().product(), 0.02), &ws);
            let bias = Tensor::from_vec(vec![0.1, 0.0, -0.1], &[3]);
            let (w1, b1) = (w.clone(), bias.clone());
            gradcheck::check(&move |x| x.conv2d(&w1, Some(&b1), s, p).tanh().sum_all(), &seq(144, 0.1), &xs);
            let x = Tensor::<f64>::from_vec(seq(144, 0.1), &xs);
            let b2 = bias.clone();
            gradcheck::check(&move |w| x.conv2d(w, Some(&b2), s, p).sqr().sum_all(), w.data(), &ws);
            let x = Tensor::<f64>::from_vec(seq(144, 0.1), &xs);
            let w3 = w.clone();
            gradcheck::check(&move |b| x.conv2d(&w3, Some(b), s, p).sqr().sum_all(), bias.data(), &[3]);
        }
    }

    #[test]
    fn pooling_and_upsampling() {
        let x = Tensor::<f64>::from_vec((0..16).map(|v| v as f64).collect(), &[1, 1, 4, 4]);
        assert_eq!(x.avg_pool2().to_vec(), vec![2.5, 4.5, 10.5, 12.5]);
        let u = Tensor::<f64>::from_vec(vec![1.0, 2.0, 3.0, 4.0], &[1, 1, 2, 2]).upsample2x();
        assert_eq!(&u.to_vec()[..8], &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
        gradcheck::check(&|x| x.avg_pool2().sqr().sum_all(), &seq(32, 0.1), &[1, 2, 4, 4]);
        gradcheck::check(&|x| x.upsample2x().sqr().sum_all(), &seq(8, 0.1), &[1, 2, 2, 2]);
    }

    #[test]
    fn instance_norm_normalizes_and_differentiates() {
        let x = Tensor::<f64>::from_vec(seq(32, 0.3), &[2, 1, 4, 4]);
        let y = x.instance_norm(1e-5);
        for pl in 0..2 {
            let s = &y.data()[pl * 16..(pl + 1) * 16];
            let mean: f64 = s.iter().sum::<f64>() / 16.0;
            let var: f64 = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
        let wts = Tensor::from_vec(seq(32, 0.9), &[2, 1, 4, 4]);
        gradcheck::check(&move |x| x.instance_norm(1e-5).mul(&wts).sum_all(), &seq(32, 0.3), &[2, 1, 4, 4]);
    }
}
