use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::{gemm, Param, Tensor};
use super::NeuralError;

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

fn shape_err(msg: String) -> NeuralError {
    NeuralError::ShapeMismatch(msg)
}

/// Kaiming-uniform fan-in draws with the leaky-ReLU slope √5 default, i.e.
/// bound 1/√fan_in. Used for weights and biases alike.
fn kaiming(fan_in: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

/// Valid 2-D convolution over channels-last input `[B, H, W, C]`.
///
/// Weights are stored as a `(kh·kw·cin) × cout` matrix so that the forward
/// pass is one matrix product with the unfolded input.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub kh: usize,
    pub kw: usize,
    pub cin: usize,
    pub cout: usize,
    pub weight: Param,
    pub bias: Param,
    cache: Option<(Vec<usize>, Vec<f64>)>,
}

impl Conv {
    pub fn new(kh: usize, kw: usize, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        let k = kh * kw * cin;
        Self {
            kh,
            kw,
            cin,
            cout,
            weight: Param::new(vec![k, cout], kaiming(k, k * cout, rng)),
            bias: Param::new(vec![cout], kaiming(k, cout, rng)),
            cache: None,
        }
    }

    fn out_shape(&self, s: &[usize]) -> Result<Vec<usize>, NeuralError> {
        if s.len() != 4 || s[3] != self.cin || s[1] < self.kh || s[2] < self.kw {
            return Err(shape_err(format!(
                "conv {}x{} {}->{} cannot take input {s:?}",
                self.kh, self.kw, self.cin, self.cout
            )));
        }
        Ok(vec![s[0], s[1] - self.kh + 1, s[2] - self.kw + 1, self.cout])
    }

    fn unfold(&self, x: &Tensor, oh: usize, ow: usize) -> Vec<f64> {
        let [b, h, w, c] = [x.shape[0], x.shape[1], x.shape[2], x.shape[3]];
        let row = self.kw * c;
        let k = self.kh * row;
        let mut cols = vec![0.0; b * oh * ow * k];
        let mut r = 0;
        for bi in 0..b {
            for y in 0..oh {
                for xo in 0..ow {
                    let dst = &mut cols[r * k..(r + 1) * k];
                    for i in 0..self.kh {
                        let src = ((bi * h + y + i) * w + xo) * c;
                        dst[i * row..(i + 1) * row].copy_from_slice(&x.data[src..src + row]);
                    }
                    r += 1;
                }
            }
        }
        cols
    }

    fn apply(&self, cols: &[f64], out: Vec<usize>) -> Tensor {
        let m = out[0] * out[1] * out[2];
        let mut y = Vec::with_capacity(m * self.cout);
        for _ in 0..m {
            y.extend_from_slice(&self.bias.value);
        }
        gemm(
            m,
            self.kh * self.kw * self.cin,
            self.cout,
            cols,
            false,
            &self.weight.value,
            false,
            1.0,
            &mut y,
        );
        Tensor { shape: out, data: y }
    }

    fn infer(&self, x: &Tensor) -> Result<Tensor, NeuralError> {
        let out = self.out_shape(&x.shape)?;
        let cols = self.unfold(x, out[1], out[2]);
        Ok(self.apply(&cols, out))
    }

    fn forward(&mut self, x: Tensor) -> Result<Tensor, NeuralError> {
        let out = self.out_shape(&x.shape)?;
        let cols = self.unfold(&x, out[1], out[2]);
        let y = self.apply(&cols, out);
        self.cache = Some((x.shape, cols));
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor, need_dx: bool) -> Option<Tensor> {
        let (in_shape, cols) = self.cache.take().expect("backward without forward");
        let k = self.kh * self.kw * self.cin;
        let m = dy.shape[0] * dy.shape[1] * dy.shape[2];
        gemm(
            k,
            m,
            self.cout,
            &cols,
            true,
            &dy.data,
            false,
            1.0,
            &mut self.weight.grad,
        );
        for r in 0..m {
            for (g, d) in self
                .bias
                .grad
                .iter_mut()
                .zip(&dy.data[r * self.cout..(r + 1) * self.cout])
            {
                *g += d;
            }
        }
        if !need_dx {
            return None;
        }
        // reuse the column buffer for d(cols)
        let mut dcols = cols;
        gemm(
            m,
            self.cout,
            k,
            &dy.data,
            false,
            &self.weight.value,
            true,
            0.0,
            &mut dcols,
        );
        let [b, h, w, c] = [in_shape[0], in_shape[1], in_shape[2], in_shape[3]];
        let (oh, ow) = (dy.shape[1], dy.shape[2]);
        let row = self.kw * c;
        let mut dx = vec![0.0; b * h * w * c];
        let mut r = 0;
        for bi in 0..b {
            for y in 0..oh {
                for xo in 0..ow {
                    let src = &dcols[r * k..(r + 1) * k];
                    for i in 0..self.kh {
                        let dst = ((bi * h + y + i) * w + xo) * c;
                        for (d, s) in dx[dst..dst + row].iter_mut().zip(&src[i * row..(i + 1) * row]) {
                            *d += s;
                        }
                    }
                    r += 1;
                }
            }
        }
        Some(Tensor {
            shape: in_shape,
            data: dx,
        })
    }
}

/// Fully connected layer on `[B, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub input: usize,
    pub output: usize,
    pub weight: Param,
    pub bias: Param,
    cache: Option<Tensor>,
}

impl Dense {
    pub fn new(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            input,
            output,
            weight: Param::new(vec![input, output], kaiming(input, input * output, rng)),
            bias: Param::new(vec![output], kaiming(input, output, rng)),
            cache: None,
        }
    }

    fn out_shape(&self, s: &[usize]) -> Result<Vec<usize>, NeuralError> {
        if s.len() != 2 || s[1] != self.input {
            return Err(shape_err(format!(
                "dense {}->{} cannot take input {s:?}",
                self.input, self.output
            )));
        }
        Ok(vec![s[0], self.output])
    }

    fn infer(&self, x: &Tensor) -> Result<Tensor, NeuralError> {
        let out = self.out_shape(&x.shape)?;
        let b = out[0];
        let mut y = Vec::with_capacity(b * self.output);
        for _ in 0..b {
            y.extend_from_slice(&self.bias.value);
        }
        gemm(
            b,
            self.input,
            self.output,
            &x.data,
            false,
            &self.weight.value,
            false,
            1.0,
            &mut y,
        );
        Ok(Tensor { shape: out, data: y })
    }

    fn forward(&mut self, x: Tensor) -> Result<Tensor, NeuralError> {
        let y = self.infer(&x)?;
        self.cache = Some(x);
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor, need_dx: bool) -> Option<Tensor> {
        let x = self.cache.take().expect("backward without forward");
        let b = x.shape[0];
        gemm(
            self.input,
            b,
            self.output,
            &x.data,
            true,
            &dy.data,
            false,
            1.0,
            &mut self.weight.grad,
        );
        for r in 0..b {
            for (g, d) in self
                .bias
                .grad
                .iter_mut()
                .zip(&dy.data[r * self.output..(r + 1) * self.output])
            {
                *g += d;
            }
        }
        if !need_dx {
            return None;
        }
        let mut dx = x;
        gemm(
            b,
            self.output,
            self.input,
            &dy.data,
            false,
            &self.weight.value,
            true,
            0.0,
            &mut dx.data,
        );
        Some(dx)
    }
}

/// Per-channel normalisation over the last axis.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub channels: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    cache: Option<(Vec<f64>, Vec<f64>)>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: Param::new(vec![channels], vec![1.0; channels]),
            beta: Param::new(vec![channels], vec![0.0; channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            cache: None,
        }
    }

    fn check(&self, s: &[usize]) -> Result<(), NeuralError> {
        if s.last() != Some(&self.channels) {
            return Err(shape_err(format!(
                "batchnorm({}) cannot take input {s:?}",
                self.channels
            )));
        }
        Ok(())
    }

    fn infer(&self, x: &Tensor) -> Result<Tensor, NeuralError> {
        self.check(&x.shape)?;
        let c = self.channels;
        let scale: Vec<f64> = (0..c)
            .map(|j| self.gamma.value[j] / (self.running_var[j] + BN_EPS).sqrt())
            .collect();
        let mut y = x.clone();
        for row in y.data.chunks_exact_mut(c) {
            for j in 0..c {
                row[j] = (row[j] - self.running_mean[j]) * scale[j] + self.beta.value[j];
            }
        }
        Ok(y)
    }

    fn forward(&mut self, x: Tensor) -> Result<Tensor, NeuralError> {
        self.check(&x.shape)?;
        let c = self.channels;
        let m = x.len() / c;
        if m < 2 {
            return Err(shape_err(
                "batchnorm needs at least 2 values per channel in training".into(),
            ));
        }
        let mut mean = vec![0.0; c];
        for row in x.data.chunks_exact(c) {
            for j in 0..c {
                mean[j] += row[j];
            }
        }
        mean.iter_mut().for_each(|v| *v /= m as f64);
        let mut var = vec![0.0; c];
        for row in x.data.chunks_exact(c) {
            for j in 0..c {
                let d = row[j] - mean[j];
                var[j] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= m as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = x;
        for row in xhat.data.chunks_exact_mut(c) {
            for j in 0..c {
                row[j] = (row[j] - mean[j]) * inv_std[j];
            }
        }
        let unbias = m as f64 / (m - 1) as f64;
        for j in 0..c {
            self.running_mean[j] = (1.0 - BN_MOMENTUM) * self.running_mean[j] + BN_MOMENTUM * mean[j];
            self.running_var[j] = (1.0 - BN_MOMENTUM) * self.running_var[j] + BN_MOMENTUM * var[j] * unbias;
        }
        let mut y = xhat.clone();
        for row in y.data.chunks_exact_mut(c) {
            for j in 0..c {
                row[j] = row[j] * self.gamma.value[j] + self.beta.value[j];
            }
        }
        self.cache = Some((xhat.data, inv_std));
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (xhat, inv_std) = self.cache.take().expect("backward without forward");
        let c = self.channels;
        let m = (xhat.len() / c) as f64;
        let mut sum_dy = vec![0.0; c];
        let mut sum_dy_xhat = vec![0.0; c];
        for (d, xh) in dy.data.chunks_exact(c).zip(xhat.chunks_exact(c)) {
            for j in 0..c {
                sum_dy[j] += d[j];
                sum_dy_xhat[j] += d[j] * xh[j];
            }
        }
        for j in 0..c {
            self.beta.grad[j] += sum_dy[j];
            self.gamma.grad[j] += sum_dy_xhat[j];
        }
        let mut dx = xhat;
        for (d, xh) in dy.data.chunks_exact(c).zip(dx.chunks_exact_mut(c)) {
            for j in 0..c {
                let g = self.gamma.value[j] * inv_std[j] / m;
                xh[j] = g * (m * d[j] - sum_dy[j] - xh[j] * sum_dy_xhat[j]);
            }
        }
        Tensor {
            shape: dy.shape.clone(),
            data: dx,
        }
    }
}

/// Inverted dropout: kept units are scaled by `1/(1-p)` during training.
#[derive(Debug, Clone, PartialEq)]
pub struct Dropout {
    pub p: f64,
    mask: Option<Vec<f64>>,
}

impl Dropout {
    pub fn new(p: f64) -> Self {
        Self { p, mask: None }
    }

    fn forward(&mut self, mut x: Tensor, rng: &mut ChaCha8Rng) -> Tensor {
        if self.p <= 0.0 {
            self.mask = None;
            return x;
        }
        let keep = 1.0 - self.p;
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        x.data.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
        self.mask = Some(mask);
        x
    }

    fn backward(&mut self, mut dy: Tensor) -> Tensor {
        if let Some(mask) = self.mask.take() {
            dy.data.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
        }
        dy
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2d(Conv),
    /// A convolution with kernel height 1 over `[B, 1, L, C]`.
    Conv1d(Conv),
    Dense(Dense),
    Relu {
        mask: Option<Vec<bool>>,
    },
    BatchNorm(BatchNorm),
    Dropout(Dropout),
    Flatten {
        in_shape: Option<Vec<usize>>,
    },
    Sigmoid {
        out: Option<Vec<f64>>,
    },
}

impl Layer {
    pub fn conv2d(kh: usize, kw: usize, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        Layer::Conv2d(Conv::new(kh, kw, cin, cout, rng))
    }

    pub fn conv1d(k: usize, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        Layer::Conv1d(Conv::new(1, k, cin, cout, rng))
    }

    pub fn dense(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        Layer::Dense(Dense::new(input, output, rng))
    }

    pub fn relu() -> Self {
        Layer::Relu { mask: None }
    }

    pub fn batch_norm(channels: usize) -> Self {
        Layer::BatchNorm(BatchNorm::new(channels))
    }

    pub fn dropout(p: f64) -> Self {
        Layer::Dropout(Dropout::new(p))
    }

    pub fn flatten() -> Self {
        Layer::Flatten { in_shape: None }
    }

    pub fn sigmoid() -> Self {
        Layer::Sigmoid { out: None }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::Conv1d(_) => "conv1d",
            Layer::Dense(_) => "dense",
            Layer::Relu { .. } => "relu",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Dropout(_) => "dropout",
            Layer::Flatten { .. } => "flatten",
            Layer::Sigmoid { .. } => "sigmoid",
        }
    }

    /// Output shape for `input` (including the batch axis).
    pub fn out_shape(&self, input: &[usize]) -> Result<Vec<usize>, NeuralError> {
        match self {
            Layer::Conv2d(c) => c.out_shape(input),
            Layer::Conv1d(c) => {
                if input.len() != 4 || input[1] != 1 {
                    return Err(shape_err(format!("conv1d expects [B, 1, L, C], got {input:?}")));
                }
                c.out_shape(input)
            }
            Layer::Dense(d) => d.out_shape(input),
            Layer::BatchNorm(b) => b.check(input).map(|_| input.to_vec()),
            Layer::Flatten { .. } => Ok(vec![input[0], input[1..].iter().product()]),
            Layer::Relu { .. } | Layer::Dropout(_) | Layer::Sigmoid { .. } => Ok(input.to_vec()),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        match self {
            Layer::Conv2d(c) | Layer::Conv1d(c) => vec![&c.weight, &c.bias],
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            Layer::BatchNorm(b) => vec![&b.gamma, &b.beta],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Conv2d(c) | Layer::Conv1d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::BatchNorm(b) => vec![&mut b.gamma, &mut b.beta],
            _ => Vec::new(),
        }
    }

    /// Inference path: running statistics, no dropout, no caches.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor, NeuralError> {
        match self {
            Layer::Conv2d(c) => c.infer(x),
            Layer::Conv1d(c) => {
                self.out_shape(&x.shape)?;
                c.infer(x)
            }
            Layer::Dense(d) => d.infer(x),
            Layer::BatchNorm(b) => b.infer(x),
            Layer::Relu { .. } => {
                let mut y = x.clone();
                y.data.iter_mut().for_each(|v| *v = v.max(0.0));
                Ok(y)
            }
            Layer::Dropout(_) => Ok(x.clone()),
            Layer::Flatten { .. } => {
                let shape = self.out_shape(&x.shape)?;
                x.clone().reshape(shape)
            }
            Layer::Sigmoid { .. } => {
                let mut y = x.clone();
                y.data.iter_mut().for_each(|v| *v = sigmoid(*v));
                Ok(y)
            }
        }
    }

    /// Training forward pass; caches what `backward` needs.
    pub fn forward(&mut self, x: Tensor, rng: &mut ChaCha8Rng) -> Result<Tensor, NeuralError> {
        match self {
            Layer::Conv2d(c) => c.forward(x),
            Layer::Conv1d(_) => {
                self.out_shape(&x.shape)?;
                let Layer::Conv1d(c) = self else { unreachable!() };
                c.forward(x)
            }
            Layer::Dense(d) => d.forward(x),
            Layer::BatchNorm(b) => b.forward(x),
            Layer::Relu { mask } => {
                let mut y = x;
                let m: Vec<bool> = y.data.iter().map(|&v| v > 0.0).collect();
                y.data.iter_mut().zip(&m).for_each(|(v, &keep)| {
                    if !keep {
                        *v = 0.0
                    }
                });
                *mask = Some(m);
                Ok(y)
            }
            Layer::Dropout(d) => Ok(d.forward(x, rng)),
            Layer::Flatten { in_shape } => {
                let shape = vec![x.shape[0], x.shape[1..].iter().product()];
                *in_shape = Some(x.shape.clone());
                x.reshape(shape)
            }
            Layer::Sigmoid { out } => {
                let mut y = x;
                y.data.iter_mut().for_each(|v| *v = sigmoid(*v));
                *out = Some(y.data.clone());
                Ok(y)
            }
        }
    }

    /// Accumulates parameter gradients and returns the input gradient
    /// (skipped when `need_dx` is false and the layer has parameters).
    pub fn backward(&mut self, dy: Tensor, need_dx: bool) -> Option<Tensor> {
        match self {
            Layer::Conv2d(c) | Layer::Conv1d(c) => c.backward(&dy, need_dx),
            Layer::Dense(d) => d.backward(&dy, need_dx),
            Layer::BatchNorm(b) => Some(b.backward(&dy)),
            Layer::Relu { mask } => {
                let m = mask.take().expect("backward without forward");
                let mut dx = dy;
                dx.data.iter_mut().zip(&m).for_each(|(v, &keep)| {
                    if !keep {
                        *v = 0.0
                    }
                });
                Some(dx)
            }
            Layer::Dropout(d) => Some(d.backward(dy)),
            Layer::Flatten { in_shape } => {
                let s = in_shape.take().expect("backward without forward");
                Some(Tensor {
                    shape: s,
                    data: dy.data,
                })
            }
            Layer::Sigmoid { out } => {
                let y = out.take().expect("backward without forward");
                let mut dx = dy;
                dx.data.iter_mut().zip(&y).for_each(|(d, y)| *d *= y * (1.0 - y));
                Some(dx)
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
