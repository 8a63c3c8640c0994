use super::{Builder, ParamId, ParamStore};
use crate::tensor::{Float, Tensor};

const IN_EPS: f64 = 1e-5;

/// Conv weights are drawn from N(0, 0.02).
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Act {
    None,
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

impl Act {
    pub fn apply<T: Float>(self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            Act::None => x.clone(),
            Act::Relu => x.relu(),
            Act::LeakyRelu(a) => x.leaky_relu(a),
            Act::Tanh => x.tanh(),
            Act::Sigmoid => x.sigmoid(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: ParamId,
    bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
    pub c_out: usize,
}

impl Conv2d {
    pub fn new<T: Float>(b: &mut Builder<'_, T>, c_in: usize, c_out: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        let weight = b.normal("weight", &[c_out, c_in, kernel, kernel], INIT_STD);
        let bias = Some(b.zeros("bias", &[c_out]));
        Self { weight, bias, stride, pad, c_out }
    }

    pub fn forward<T: Float>(&self, ps: &ParamStore<T>, x: &Tensor<T>) -> Tensor<T> {
        x.conv2d(ps.get(self.weight), self.bias.map(|b| ps.get(b)), self.stride, self.pad)
    }

    pub fn weight_id(&self) -> ParamId {
        self.weight
    }

    pub fn bias_id(&self) -> Option<ParamId> {
        self.bias
    }
}

/// Convolution, optional instance norm, activation.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub conv: Conv2d,
    pub norm: bool,
    pub act: Act,
}

impl ConvBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Float>(
        b: &mut Builder<'_, T>,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        norm: bool,
        act: Act,
    ) -> Self {
        Self { conv: Conv2d::new(&mut b.pp("conv"), c_in, c_out, kernel, stride, pad), norm, act }
    }

    pub fn forward<T: Float>(&self, ps: &ParamStore<T>, x: &Tensor<T>) -> Tensor<T> {
        let y = self.conv.forward(ps, x);
        let y = if self.norm { y.instance_norm(IN_EPS) } else { y };
        self.act.apply(&y)
    }
}

/// `x + IN(conv(relu(IN(conv(x)))))` with 3×3 convolutions.
#[derive(Debug, Clone)]
pub struct ResBlock {
    first: ConvBlock,
    second: ConvBlock,
}

impl ResBlock {
    pub fn new<T: Float>(b: &mut Builder<'_, T>, channels: usize) -> Self {
        Self {
            first: ConvBlock::new(&mut b.pp("0"), channels, channels, 3, 1, 1, true, Act::Relu),
            second: ConvBlock::new(&mut b.pp("1"), channels, channels, 3, 1, 1, true, Act::None),
        }
    }

    pub fn forward<T: Float>(&self, ps: &ParamStore<T>, x: &Tensor<T>) -> Tensor<T> {
        let y = self.second.forward(ps, &self.first.forward(ps, x));
        x.add(&y)
    }
}

/// Nearest ×2 upsampling followed by a conv block.
#[derive(Debug, Clone)]
pub struct UpBlock {
    pub block: ConvBlock,
}

impl UpBlock {
    pub fn new<T: Float>(b: &mut Builder<'_, T>, c_in: usize, c_out: usize, norm: bool, act: Act) -> Self {
        Self { block: ConvBlock::new(b, c_in, c_out, 3, 1, 1, norm, act) }
    }

    pub fn forward<T: Float>(&self, ps: &ParamStore<T>, x: &Tensor<T>) -> Tensor<T> {
        self.block.forward(ps, &x.upsample2x())
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: ParamId,
    bias: ParamId,
}

impl Linear {
    pub fn new<T: Float>(b: &mut Builder<'_, T>, d_in: usize, d_out: usize) -> Self {
        let bound = 1.0 / (d_in as f64).sqrt();
        Self { weight: b.uniform("weight", &[d_out, d_in], bound), bias: b.uniform("bias", &[d_out], bound) }
    }

    pub fn forward<T: Float>(&self, ps: &ParamStore<T>, x: &Tensor<T>) -> Tensor<T> {
        x.linear(ps.get(self.weight), Some(ps.get(self.bias)))
    }
}

/// One LSTM cell with gate order (input, forget, cell, output).
#[derive(Debug, Clone)]
pub struct LstmCell {
    w_ih: ParamId,
    w_hh: ParamId,
    bias: ParamId,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<T: Float>(b: &mut Builder<'_, T>, d_in: usize, hidden: usize) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Self {
            w_ih: b.uniform("w_ih", &[4 * hidden, d_in], bound),
            w_hh: b.uniform("w_hh", &[4 * hidden, hidden], bound),
            bias: b.uniform("bias", &[4 * hidden], bound),
            hidden,
        }
    }

    /// One step on `x: [batch, d_in]` with state `(h, c)`, each `[batch, hidden]`.
    pub fn step<T: Float>(&self, ps: &ParamStore<T>, x: &Tensor<T>, state: Option<(&Tensor<T>, &Tensor<T>)>) -> (Tensor<T>, Tensor<T>) {
        let mut gates = x.linear(ps.get(self.w_ih), Some(ps.get(self.bias)));
        if let Some((h, _)) = state {
            gates = gates.add(&h.matmul_t(ps.get(self.w_hh)));
        }
        let hd = self.hidden;
        let i = gates.narrow(1, 0, hd).sigmoid();
        let f = gates.narrow(1, hd, hd).sigmoid();
        let g = gates.narrow(1, 2 * hd, hd).tanh();
        let o = gates.narrow(1, 3 * hd, hd).sigmoid();
        let c = match state {
            Some((_, c_prev)) => f.mul(c_prev).add(&i.mul(&g)),
            None => i.mul(&g),
        };
        let h = o.mul(&c.tanh());
        (h, c)
    }
}
