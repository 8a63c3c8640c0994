use super::{gemm, numel, Float, GradFn, Tensor, View};

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => panic!("shapes {a:?} and {b:?} do not broadcast"),
        };
    }
    out
}

/// Strides of `shape` laid into the right-aligned `out` shape, 0 on broadcast axes.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides(shape);
    let offset = out.len() - shape.len();
    (0..out.len())
        .map(|i| if i < offset || shape[i - offset] == 1 { 0 } else { own[i - offset] })
        .collect()
}

/// Visits `(out_index, a_index, b_index)` for a broadcast binary op.
fn for_each_broadcast(a: &[usize], b: &[usize], out: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let sa = broadcast_strides(a, out);
    let sb = broadcast_strides(b, out);
    let n = numel(out);
    if n == 0 {
        return;
    }
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    for o in 0..n {
        f(o, ia, ib);
        for d in (0..rank).rev() {
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out[d] {
                break;
            }
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    #[inline]
    fn apply<T: Float>(self, x: T, y: T) -> T {
        match self {
            BinOp::Add => x + y,
            BinOp::Sub => x - y,
            BinOp::Mul => x * y,
            BinOp::Div => x / y,
        }
    }

    /// (d/dx, d/dy) at (x, y).
    #[inline]
    fn partials<T: Float>(self, x: T, y: T) -> (T, T) {
        match self {
            BinOp::Add => (T::one(), T::one()),
            BinOp::Sub => (T::one(), -T::one()),
            BinOp::Mul => (y, x),
            BinOp::Div => (T::one() / y, -x / (y * y)),
        }
    }
}

impl<T: Float> Tensor<T> {
    fn binary(&self, other: &Tensor<T>, op: BinOp) -> Tensor<T> {
        let (sa, sb) = (self.shape().to_vec(), other.shape().to_vec());
        if sa == sb {
            let data = self.data().iter().zip(other.data()).map(|(&x, &y)| op.apply(x, y)).collect();
            return Tensor::from_op(data, sa, &[self, other], move |inp, _, g| {
                let (x, y) = (inp[0].data(), inp[1].data());
                let mut gx = inp[0].requires_grad().then(|| vec![T::zero(); g.len()]);
                let mut gy = inp[1].requires_grad().then(|| vec![T::zero(); g.len()]);
                for i in 0..g.len() {
                    let (dx, dy) = op.partials(x[i], y[i]);
                    if let Some(gx) = gx.as_mut() {
                        gx[i] = g[i] * dx;
                    }
                    if let Some(gy) = gy.as_mut() {
                        gy[i] = g[i] * dy;
                    }
                }
                vec![gx, gy]
            });
        }
        let out_shape = broadcast_shape(&sa, &sb);
        let mut data = vec![T::zero(); numel(&out_shape)];
        {
            let (x, y) = (self.data(), other.data());
            for_each_broadcast(&sa, &sb, &out_shape, |o, i, j| data[o] = op.apply(x[i], y[j]));
        }
        let os = out_shape.clone();
        Tensor::from_op(data, out_shape, &[self, other], move |inp, _, g| {
            let (x, y) = (inp[0].data(), inp[1].data());
            let mut gx = inp[0].requires_grad().then(|| vec![T::zero(); x.len()]);
            let mut gy = inp[1].requires_grad().then(|| vec![T::zero(); y.len()]);
            for_each_broadcast(inp[0].shape(), inp[1].shape(), &os, |o, i, j| {
                let (dx, dy) = op.partials(x[i], y[j]);
                if let Some(gx) = gx.as_mut() {
                    gx[i] += g[o] * dx;
                }
                if let Some(gy) = gy.as_mut() {
                    gy[j] += g[o] * dy;
                }
            });
            vec![gx, gy]
        })
    }

    pub fn add(&self, other: &Tensor<T>) -> Tensor<T> {
        self.binary(other, BinOp::Add)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Tensor<T> {
        self.binary(other, BinOp::Sub)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Tensor<T> {
        self.binary(other, BinOp::Mul)
    }

    pub fn div(&self, other: &Tensor<T>) -> Tensor<T> {
        self.binary(other, BinOp::Div)
    }

    /// Elementwise map with derivative `df(x, y)` where `y = f(x)`.
    fn unary(&self, f: impl Fn(T) -> T, df: impl Fn(T, T) -> T + Send + Sync + 'static) -> Tensor<T> {
        let data: Vec<T> = self.data().iter().map(|&x| f(x)).collect();
        Tensor::from_op(data, self.shape().to_vec(), &[self], move |inp, out, g| {
            let x = inp[0].data();
            vec![Some((0..g.len()).map(|i| g[i] * df(x[i], out[i])).collect())]
        })
    }

    pub fn neg(&self) -> Tensor<T> {
        self.unary(|x| -x, |_, _| -T::one())
    }

    pub fn scale(&self, s: f64) -> Tensor<T> {
        let s = T::of(s);
        self.unary(move |x| x * s, move |_, _| s)
    }

    pub fn add_scalar(&self, s: f64) -> Tensor<T> {
        let s = T::of(s);
        self.unary(move |x| x + s, |_, _| T::one())
    }

    pub fn relu(&self) -> Tensor<T> {
        self.unary(|x| if x > T::zero() { x } else { T::zero() }, |x, _| if x > T::zero() { T::one() } else { T::zero() })
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor<T> {
        let a = T::of(slope);
        self.unary(move |x| if x > T::zero() { x } else { a * x }, move |x, _| if x > T::zero() { T::one() } else { a })
    }

    pub fn tanh(&self) -> Tensor<T> {
        self.unary(|x| x.tanh(), |_, y| T::one() - y * y)
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        self.unary(|x| T::one() / (T::one() + (-x).exp()), |_, y| y * (T::one() - y))
    }

    pub fn exp(&self) -> Tensor<T> {
        self.unary(|x| x.exp(), |_, y| y)
    }

    pub fn ln(&self) -> Tensor<T> {
        self.unary(|x| x.ln(), |x, _| T::one() / x)
    }

    pub fn abs(&self) -> Tensor<T> {
        self.unary(
            |x| x.abs(),
            |x, _| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn sqr(&self) -> Tensor<T> {
        self.unary(|x| x * x, |x, _| x + x)
    }

    pub fn sqrt(&self) -> Tensor<T> {
        self.unary(|x| x.sqrt(), |_, y| T::of(0.5) / y)
    }

    pub fn sum_all(&self) -> Tensor<T> {
        let s = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::from_op(vec![s], vec![], &[self], move |_, _, g| vec![Some(vec![g[0]; n])])
    }

    pub fn mean_all(&self) -> Tensor<T> {
        let n = self.numel();
        self.sum_all().scale(1.0 / n as f64)
    }

    /// Sum over `axis`, keeping it as a size-1 dimension.
    pub fn sum_axis(&self, axis: usize) -> Tensor<T> {
        let shape = self.shape().to_vec();
        assert!(axis < shape.len(), "axis {axis} out of range for {shape:?}");
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let x = self.data();
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let src = &x[(o * len + a) * inner..(o * len + a + 1) * inner];
                let dst = &mut data[o * inner..(o + 1) * inner];
                dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
            }
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = 1;
        Tensor::from_op(data, out_shape, &[self], move |_, _, g| {
            let mut gx = vec![T::zero(); outer * len * inner];
            for o in 0..outer {
                for a in 0..len {
                    gx[(o * len + a) * inner..(o * len + a + 1) * inner].copy_from_slice(&g[o * inner..(o + 1) * inner]);
                }
            }
            vec![Some(gx)]
        })
    }

    pub fn mean_axis(&self, axis: usize) -> Tensor<T> {
        let n = self.dim(axis);
        self.sum_axis(axis).scale(1.0 / n as f64)
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor<T> {
        assert_eq!(numel(shape), self.numel(), "cannot reshape {:?} into {:?}", self.shape(), shape);
        let grad_fn = self.requires_grad().then(|| GradFn {
            inputs: vec![self.clone()],
            backward: Box::new(|_: &[Tensor<T>], _: &[T], g: &[T]| vec![Some(g.to_vec())]),
        });
        self.share_data(shape.to_vec(), grad_fn)
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Tensor<T> {
        let shape = self.shape().to_vec();
        assert_eq!(perm.len(), shape.len(), "permutation rank mismatch");
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let in_strides = strides(&shape);
        let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let gather = permute_index(&out_shape, &src_strides);
        let x = self.data();
        let data: Vec<T> = gather.iter().map(|&i| x[i]).collect();
        Tensor::from_op(data, out_shape, &[self], move |_, _, g| {
            let mut gx = vec![T::zero(); g.len()];
            for (o, &i) in gather.iter().enumerate() {
                gx[i] = g[o];
            }
            vec![Some(gx)]
        })
    }

    /// Swaps the last two axes.
    pub fn t(&self) -> Tensor<T> {
        let r = self.rank();
        assert!(r >= 2);
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 1, r - 2);
        self.permute(&perm)
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Tensor<T> {
        let shape = self.shape().to_vec();
        assert!(start + len <= shape[axis], "narrow {start}+{len} exceeds axis {axis} of {shape:?}");
        let outer: usize = shape[..axis].iter().product();
        let full = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let x = self.data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            data.extend_from_slice(&x[(o * full + start) * inner..(o * full + start + len) * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        Tensor::from_op(data, out_shape, &[self], move |_, _, g| {
            let mut gx = vec![T::zero(); outer * full * inner];
            for o in 0..outer {
                gx[(o * full + start) * inner..(o * full + start + len) * inner]
                    .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(gx)]
        })
    }

    /// Concatenation along `axis`; all other dimensions must agree.
    pub fn cat(parts: &[Tensor<T>], axis: usize) -> Tensor<T> {
        assert!(!parts.is_empty(), "cat of nothing");
        let base = parts[0].shape().to_vec();
        for p in parts {
            assert_eq!(p.rank(), base.len());
            for (d, (&x, &y)) in p.shape().iter().zip(&base).enumerate() {
                assert!(d == axis || x == y, "cat shape mismatch {:?} vs {:?}", p.shape(), base);
            }
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let lens: Vec<usize> = parts.iter().map(|p| p.dim(axis)).collect();
        let total: usize = lens.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &l) in parts.iter().zip(&lens) {
                data.extend_from_slice(&p.data()[o * l * inner..(o + 1) * l * inner]);
            }
        }
        let mut out_shape = base;
        out_shape[axis] = total;
        let refs: Vec<&Tensor<T>> = parts.iter().collect();
        Tensor::from_op(data, out_shape, &refs, move |inp, _, g| {
            let mut grads: Vec<Vec<T>> = lens.iter().map(|&l| Vec::with_capacity(outer * l * inner)).collect();
            for o in 0..outer {
                let mut off = o * total * inner;
                for (gp, &l) in grads.iter_mut().zip(&lens) {
                    gp.extend_from_slice(&g[off..off + l * inner]);
                    off += l * inner;
                }
            }
            grads.into_iter().zip(inp).map(|(gp, t)| t.requires_grad().then_some(gp)).collect()
        })
    }

    /// Picks `x[r, idx[r]]` from a rank-2 tensor.
    pub fn gather_rows(&self, idx: &[usize]) -> Tensor<T> {
        assert_eq!(self.rank(), 2);
        let (rows, cols) = (self.dim(0), self.dim(1));
        assert_eq!(idx.len(), rows, "one index per row");
        assert!(idx.iter().all(|&c| c < cols), "gather index out of range");
        let x = self.data();
        let data = idx.iter().enumerate().map(|(r, &c)| x[r * cols + c]).collect();
        let idx = idx.to_vec();
        Tensor::from_op(data, vec![rows], &[self], move |_, _, g| {
            let mut gx = vec![T::zero(); rows * cols];
            for (r, &c) in idx.iter().enumerate() {
                gx[r * cols + c] = g[r];
            }
            vec![Some(gx)]
        })
    }

    /// Batched matrix product `[.., m, k] x [.., k, n]`, or `a·bᵀ` when
    /// `transpose_rhs` (rhs given as `[.., n, k]`). A rank-2 rhs is shared
    /// across the batch.
    fn matmul_impl(&self, rhs: &Tensor<T>, transpose_rhs: bool) -> Tensor<T> {
        let (sa, sb) = (self.shape().to_vec(), rhs.shape().to_vec());
        assert!(sa.len() >= 2 && sb.len() >= 2, "matmul needs rank >= 2");
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = if transpose_rhs { (sb[sb.len() - 1], sb[sb.len() - 2]) } else { (sb[sb.len() - 2], sb[sb.len() - 1]) };
        assert_eq!(k, kb, "matmul inner dims: {sa:?} x {sb:?} (transpose_rhs={transpose_rhs})");
        let batch: usize = sa[..sa.len() - 2].iter().product();
        let shared_rhs = sb.len() == 2;
        if !shared_rhs {
            assert_eq!(&sa[..sa.len() - 2], &sb[..sb.len() - 2], "matmul batch dims differ");
        }
        // (offset, row stride, col stride) of the logical k×n rhs
        let rhs_view = move |bi: usize| -> (usize, usize, usize) {
            let off = if shared_rhs { 0 } else { bi * k * n };
            if transpose_rhs {
                (off, 1, k)
            } else {
                (off, n, 1)
            }
        };
        let (a, b) = (self.data(), rhs.data());
        let mut out = vec![T::zero(); batch * m * n];
        for bi in 0..batch {
            let (off, rs, cs) = rhs_view(bi);
            let av = View::row_major(&a[bi * m * k..(bi + 1) * m * k], m, k);
            let bv = View { data: &b[off..], rows: k, cols: n, rs, cs };
            gemm(av, bv, T::zero(), &mut out[bi * m * n..(bi + 1) * m * n]);
        }
        let mut out_shape = sa[..sa.len() - 2].to_vec();
        out_shape.extend([m, n]);
        Tensor::from_op(out, out_shape, &[self, rhs], move |inp, _, g| {
            let (a, b) = (inp[0].data(), inp[1].data());
            let ga = inp[0].requires_grad().then(|| {
                // dA = dC · Bᵀ where B is the logical k×n rhs
                let mut ga = vec![T::zero(); batch * m * k];
                for bi in 0..batch {
                    let (off, rs, cs) = rhs_view(bi);
                    let bt = View { data: &b[off..], rows: k, cols: n, rs, cs }.t();
                    let gv = View::row_major(&g[bi * m * n..(bi + 1) * m * n], m, n);
                    gemm(gv, bt, T::zero(), &mut ga[bi * m * k..(bi + 1) * m * k]);
                }
                ga
            });
            let gb = inp[1].requires_grad().then(|| {
                // dB = Aᵀ · dC, stored in the rhs's own layout
                let mut gb = vec![T::zero(); b.len()];
                for bi in 0..batch {
                    let at = View::row_major(&a[bi * m * k..(bi + 1) * m * k], m, k).t();
                    let gv = View::row_major(&g[bi * m * n..(bi + 1) * m * n], m, n);
                    let off = if shared_rhs { 0 } else { bi * k * n };
                    let beta = if shared_rhs && bi > 0 { T::one() } else { T::zero() };
                    if transpose_rhs {
                        // rhs stored n×k: dBᵀ = dCᵀ · A
                        let av = View::row_major(&a[bi * m * k..(bi + 1) * m * k], m, k);
                        gemm(gv.t(), av, beta, &mut gb[off..off + n * k]);
                    } else {
                        gemm(at, gv, beta, &mut gb[off..off + k * n]);
                    }
                }
                gb
            });
            vec![ga, gb]
        })
    }

    pub fn matmul(&self, rhs: &Tensor<T>) -> Tensor<T> {
        self.matmul_impl(rhs, false)
    }

    /// `self · rhsᵀ` over the last two axes.
    pub fn matmul_t(&self, rhs: &Tensor<T>) -> Tensor<T> {
        self.matmul_impl(rhs, true)
    }

    /// `x·wᵀ + b` for `x: [r, in]`, `w: [out, in]`, `b: [out]`.
    pub fn linear(&self, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Tensor<T> {
        let y = self.matmul_t(weight);
        match bias {
            Some(b) => y.add(b),
            None => y,
        }
    }

    fn last_axis_rows(&self) -> (usize, usize) {
        let c = *self.shape().last().expect("rank >= 1");
        (self.numel() / c.max(1), c)
    }

    pub fn softmax_last(&self) -> Tensor<T> {
        let (rows, c) = self.last_axis_rows();
        let x = self.data();
        let mut data = vec![T::zero(); x.len()];
        for r in 0..rows {
            let row = &x[r * c..(r + 1) * c];
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let dst = &mut data[r * c..(r + 1) * c];
            let mut s = T::zero();
            for (d, &v) in dst.iter_mut().zip(row) {
                *d = (v - mx).exp();
                s += *d;
            }
            dst.iter_mut().for_each(|d| *d /= s);
        }
        Tensor::from_op(data, self.shape().to_vec(), &[self], move |_, y, g| {
            let mut gx = vec![T::zero(); g.len()];
            for r in 0..rows {
                let (yr, gr) = (&y[r * c..(r + 1) * c], &g[r * c..(r + 1) * c]);
                let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                for j in 0..c {
                    gx[r * c + j] = yr[j] * (gr[j] - dot);
                }
            }
            vec![Some(gx)]
        })
    }

    pub fn log_softmax_last(&self) -> Tensor<T> {
        let (rows, c) = self.last_axis_rows();
        let x = self.data();
        let mut data = vec![T::zero(); x.len()];
        for r in 0..rows {
            let row = &x[r * c..(r + 1) * c];
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<T>().ln();
            for j in 0..c {
                data[r * c + j] = row[j] - lse;
            }
        }
        Tensor::from_op(data, self.shape().to_vec(), &[self], move |_, y, g| {
            let mut gx = vec![T::zero(); g.len()];
            for r in 0..rows {
                let gsum: T = g[r * c..(r + 1) * c].iter().copied().sum();
                for j in 0..c {
                    gx[r * c + j] = g[r * c + j] - y[r * c + j].exp() * gsum;
                }
            }
            vec![Some(gx)]
        })
    }

    /// Divides every last-axis vector by `(‖v‖ + eps)`.
    pub fn normalize_last(&self, eps: f64) -> Tensor<T> {
        let (rows, c) = self.last_axis_rows();
        let eps = T::of(eps);
        let x = self.data();
        let norms: Vec<T> = (0..rows).map(|r| x[r * c..(r + 1) * c].iter().map(|&v| v * v).sum::<T>().sqrt()).collect();
        let mut data = vec![T::zero(); x.len()];
        for r in 0..rows {
            let d = norms[r] + eps;
            for j in 0..c {
                data[r * c + j] = x[r * c + j] / d;
            }
        }
        Tensor::from_op(data, self.shape().to_vec(), &[self], move |inp, _, g| {
            let x = inp[0].data();
            let mut gx = vec![T::zero(); g.len()];
            for r in 0..rows {
                let (n, d) = (norms[r], norms[r] + eps);
                let (xr, gr) = (&x[r * c..(r + 1) * c], &g[r * c..(r + 1) * c]);
                // d(x/(n+eps)) = g/(n+eps) - x (x·g) / (n (n+eps)^2)
                let xg: T = xr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                let coef = if n > T::zero() { xg / (n * d * d) } else { T::zero() };
                for j in 0..c {
                    gx[r * c + j] = gr[j] / d - xr[j] * coef;
                }
            }
            vec![Some(gx)]
        })
    }
}

fn permute_index(out_shape: &[usize], src_strides: &[usize]) -> Vec<usize> {
    let n = numel(out_shape);
    let rank = out_shape.len();
    let mut gather = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..n {
        gather.push(src);
        for d in (0..rank).rev() {
            idx[d] += 1;
            src += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src -= src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    gather
}
