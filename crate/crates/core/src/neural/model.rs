use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::Layer;
use super::tensor::{Param, Tensor};
use super::NeuralError;
use crate::seq::{one_hot_pair, DnaSeq, DEFAULT_N_MAX};

pub const CHECKPOINT_MAGIC: &str = "HYBSEQ-MODEL 1";
pub const MLP_HIDDEN: [usize; 4] = [117, 18, 7, 19];
pub const MLP_DROPOUT: f64 = 0.3296;
/// Extras key marking a sequence model trained on both strand orders.
pub const BOTH_ORDERS_KEY: &str = "pairs.both_orders";
const CNN_DROPOUT: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    Cnn,
    CnnLite,
    Mlp,
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::Cnn => "cnn",
            Arch::CnnLite => "cnn-lite",
            Arch::Mlp => "mlp",
        })
    }
}

impl FromStr for Arch {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cnn" => Ok(Arch::Cnn),
            "cnn-lite" | "cnn_lite" => Ok(Arch::CnnLite),
            "mlp" => Ok(Arch::Mlp),
            _ => Err(format!("unknown model {s:?} (expected cnn, cnn-lite or mlp)")),
        }
    }
}

/// How a pair is laid out on the two input channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Encoding {
    /// `s1` and `s2` as given.
    #[default]
    Raw,
    /// `s2` is replaced by its reverse complement, so complementary bases
    /// line up column by column.
    RcSecond,
}

impl fmt::Display for Encoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Encoding::Raw => "raw",
            Encoding::RcSecond => "rc-second",
        })
    }
}

impl FromStr for Encoding {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw" => Ok(Encoding::Raw),
            "rc-second" => Ok(Encoding::RcSecond),
            _ => Err(format!("unknown encoding {s:?} (expected raw or rc-second)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Pairs as a `[B, 4, n_max, 2]` tensor.
pub fn encode_pairs(pairs: &[(DnaSeq, DnaSeq)], n_max: usize, encoding: Encoding) -> Result<Tensor, NeuralError> {
    let per = 4 * n_max * 2;
    let mut data = vec![0.0; pairs.len() * per];
    for (i, (a, b)) in pairs.iter().enumerate() {
        let rc;
        let b = match encoding {
            Encoding::Raw => b,
            Encoding::RcSecond => {
                rc = b.reverse_complement();
                &rc
            }
        };
        let oh = one_hot_pair(a, b, n_max)?;
        let dst = &mut data[i * per..(i + 1) * per];
        for ch in 0..2 {
            for row in 0..4 {
                for col in 0..n_max {
                    dst[(row * n_max + col) * 2 + ch] = oh.get(ch, row, col);
                }
            }
        }
    }
    Tensor::new(vec![pairs.len(), 4, n_max, 2], data)
}

/// The pairs followed by each pair in the opposite strand order, with
/// targets repeated to match. Yield does not depend on strand order, so
/// this doubles a training set at no labelling cost.
pub fn with_both_orders(pairs: &[(DnaSeq, DnaSeq)], y: &[f64]) -> (Vec<(DnaSeq, DnaSeq)>, Vec<f64>) {
    let mut p = pairs.to_vec();
    p.extend(pairs.iter().map(|(a, b)| (b.clone(), a.clone())));
    let mut t = y.to_vec();
    t.extend_from_slice(y);
    (p, t)
}

/// An ordered layer stack with a fixed per-sample input shape.
#[derive(Debug, Clone)]
pub struct Model {
    pub arch: Arch,
    pub encoding: Encoding,
    input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
    /// Named side arrays carried through checkpoints (e.g. feature scaling).
    pub extras: BTreeMap<String, Vec<f64>>,
    rng: ChaCha8Rng,
}

impl Model {
    /// Checks the shape chain; `input_shape` excludes the batch axis.
    pub fn new(arch: Arch, input_shape: Vec<usize>, layers: Vec<Layer>, seed: u64) -> Result<Self, NeuralError> {
        let m = Self {
            arch,
            encoding: Encoding::Raw,
            input_shape,
            layers,
            extras: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_D80F),
        };
        m.shapes()?;
        Ok(m)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    /// Per-layer output shapes for a batch of one.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>, NeuralError> {
        let mut s: Vec<usize> = std::iter::once(1).chain(self.input_shape.iter().copied()).collect();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            s = l
                .out_shape(&s)
                .map_err(|e| NeuralError::ShapeMismatch(format!("layer {i} ({}): {e}", l.name())))?;
            out.push(s.clone());
        }
        Ok(out)
    }

    /// Width of the first flatten output, if any.
    pub fn flatten_width(&self) -> Option<usize> {
        let shapes = self.shapes().ok()?;
        self.layers
            .iter()
            .position(|l| matches!(l, Layer::Flatten { .. }))
            .map(|i| shapes[i][1])
    }

    /// Whether pair predictions average both strand orders.
    pub fn both_orders(&self) -> bool {
        self.extras
            .get(BOTH_ORDERS_KEY)
            .is_some_and(|v| v.first() == Some(&1.0))
    }

    pub fn set_both_orders(&mut self, on: bool) {
        if on {
            self.extras.insert(BOTH_ORDERS_KEY.to_string(), vec![1.0]);
        } else {
            self.extras.remove(BOTH_ORDERS_KEY);
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub(crate) fn rng_state(&self) -> ChaCha8Rng {
        self.rng.clone()
    }

    pub(crate) fn set_rng(&mut self, rng: ChaCha8Rng) {
        self.rng = rng;
    }

    fn check_input(&self, x: &Tensor) -> Result<(), NeuralError> {
        if x.shape.len() != self.input_shape.len() + 1 || x.shape[1..] != self.input_shape[..] {
            return Err(NeuralError::ShapeMismatch(format!(
                "model expects [B, {:?}], got {:?}",
                self.input_shape, x.shape
            )));
        }
        Ok(())
    }

    /// Eval-mode forward: a pure function of weights and input.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor, NeuralError> {
        self.check_input(x)?;
        let mut h = x.clone();
        for l in &self.layers {
            h = l.infer(&h)?;
        }
        h.check_finite("model output")?;
        Ok(h)
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor, NeuralError> {
        if mode == Mode::Eval {
            return self.infer(x);
        }
        self.check_input(x)?;
        let mut h = x.clone();
        for (i, l) in self.layers.iter_mut().enumerate() {
            h = l.forward(h, &mut self.rng)?;
            h.check_finite(&format!("layer {i} ({})", l.name()))?;
        }
        Ok(h)
    }

    /// Backpropagates `dy` through the last train-mode forward. The input
    /// gradient is only computed when asked for.
    pub fn backward(&mut self, dy: Tensor, input_grad: bool) -> Option<Tensor> {
        let mut g = dy;
        for (i, l) in self.layers.iter_mut().enumerate().rev() {
            g = l.backward(g, i > 0 || input_grad)?;
        }
        Some(g)
    }
}

fn conv_block(layers: &mut Vec<Layer>, conv: Layer, channels: usize) {
    layers.push(conv);
    layers.push(Layer::relu());
    layers.push(Layer::batch_norm(channels));
}

/// Large CNN over `[B, 4, 26, 2]`: flatten width 384.
pub fn build_cnn(seed: u64) -> Result<Model, NeuralError> {
    let r = &mut ChaCha8Rng::seed_from_u64(seed);
    let mut l = Vec::new();
    conv_block(&mut l, Layer::conv2d(4, 9, 2, 512, r), 512);
    l.push(Layer::dropout(CNN_DROPOUT));
    conv_block(&mut l, Layer::conv1d(9, 512, 512, r), 512);
    conv_block(&mut l, Layer::conv1d(3, 512, 128, r), 128);
    l.push(Layer::dropout(CNN_DROPOUT));
    conv_block(&mut l, Layer::conv1d(3, 128, 128, r), 128);
    conv_block(&mut l, Layer::conv1d(1, 128, 64, r), 64);
    l.push(Layer::flatten());
    l.push(Layer::dense(384, 256, r));
    l.push(Layer::relu());
    l.push(Layer::dense(256, 128, r));
    l.push(Layer::relu());
    l.push(Layer::dropout(CNN_DROPOUT));
    l.push(Layer::dense(128, 1, r));
    Model::new(Arch::Cnn, vec![4, DEFAULT_N_MAX, 2], l, seed)
}

/// Small CNN over `[B, 4, 26, 2]`: flatten width 512.
pub fn build_cnn_lite(seed: u64) -> Result<Model, NeuralError> {
    let r = &mut ChaCha8Rng::seed_from_u64(seed);
    let mut l = Vec::new();
    conv_block(&mut l, Layer::conv2d(4, 9, 2, 256, r), 256);
    l.push(Layer::dropout(CNN_DROPOUT));
    conv_block(&mut l, Layer::conv1d(9, 256, 128, r), 128);
    conv_block(&mut l, Layer::conv1d(3, 128, 64, r), 64);
    l.push(Layer::flatten());
    l.push(Layer::dense(512, 256, r));
    l.push(Layer::relu());
    l.push(Layer::dropout(CNN_DROPOUT));
    l.push(Layer::dense(256, 1, r));
    Model::new(Arch::CnnLite, vec![4, DEFAULT_N_MAX, 2], l, seed)
}

/// Feature MLP with a sigmoid output.
pub fn build_mlp(input_dim: usize, seed: u64) -> Result<Model, NeuralError> {
    let r = &mut ChaCha8Rng::seed_from_u64(seed);
    let mut l = Vec::new();
    let mut prev = input_dim;
    for &h in &MLP_HIDDEN {
        l.push(Layer::dense(prev, h, r));
        l.push(Layer::relu());
        l.push(Layer::dropout(MLP_DROPOUT));
        prev = h;
    }
    l.push(Layer::dense(prev, 1, r));
    l.push(Layer::sigmoid());
    Model::new(Arch::Mlp, vec![input_dim], l, seed)
}

fn ckpt_err(msg: impl Into<String>) -> NeuralError {
    NeuralError::Checkpoint(msg.into())
}

/// Every array a checkpoint carries, in a stable order.
fn named_arrays(m: &Model) -> Vec<(String, Vec<usize>, &[f64])> {
    let mut out = Vec::new();
    for (i, l) in m.layers.iter().enumerate() {
        let names: &[&str] = match l {
            Layer::BatchNorm(_) => &["gamma", "beta"],
            _ => &["weight", "bias"],
        };
        for (p, n) in l.params().into_iter().zip(names) {
            out.push((format!("{i}.{n}"), p.shape.clone(), &p.value[..]));
        }
        if let Layer::BatchNorm(b) = l {
            out.push((format!("{i}.running_mean"), vec![b.channels], &b.running_mean[..]));
            out.push((format!("{i}.running_var"), vec![b.channels], &b.running_var[..]));
        }
    }
    for (k, v) in &m.extras {
        out.push((format!("extra.{k}"), vec![v.len()], &v[..]));
    }
    out
}

/// Writes a text manifest (magic, architecture, shape table) followed by
/// the arrays as little-endian `f64`.
pub fn save_checkpoint<W: Write>(m: &Model, mut w: W) -> Result<(), NeuralError> {
    let arrays = named_arrays(m);
    writeln!(w, "{CHECKPOINT_MAGIC}")?;
    writeln!(w, "arch {}", m.arch)?;
    writeln!(w, "encoding {}", m.encoding)?;
    let dims: Vec<String> = m.input_shape.iter().map(|d| d.to_string()).collect();
    writeln!(w, "input {}", dims.join(" "))?;
    writeln!(w, "arrays {}", arrays.len())?;
    for (name, shape, _) in &arrays {
        let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
        writeln!(w, "{name} {}", dims.join(" "))?;
    }
    writeln!(w, "data")?;
    for (_, _, vals) in &arrays {
        for v in *vals {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<R: Read>(r: R) -> Result<Model, NeuralError> {
    let mut r = BufReader::new(r);
    let mut line = String::new();
    let mut next_line = |r: &mut BufReader<R>| -> Result<String, NeuralError> {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(ckpt_err("unexpected end of manifest"));
        }
        Ok(line.trim_end().to_string())
    };
    let magic = next_line(&mut r)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(ckpt_err(format!("bad magic {magic:?}")));
    }
    let field = |l: String, key: &str| -> Result<String, NeuralError> {
        l.strip_prefix(key)
            .and_then(|s| s.strip_prefix(' '))
            .map(str::to_string)
            .ok_or_else(|| ckpt_err(format!("expected `{key}`, got {l:?}")))
    };
    let arch: Arch = field(next_line(&mut r)?, "arch")?.parse().map_err(ckpt_err)?;
    let encoding: Encoding = field(next_line(&mut r)?, "encoding")?.parse().map_err(ckpt_err)?;
    let input: Vec<usize> = field(next_line(&mut r)?, "input")?
        .split_whitespace()
        .map(|d| d.parse().map_err(|_| ckpt_err("bad input shape")))
        .collect::<Result<_, _>>()?;
    let n: usize = field(next_line(&mut r)?, "arrays")?
        .parse()
        .map_err(|_| ckpt_err("bad array count"))?;
    let mut table = Vec::with_capacity(n);
    for _ in 0..n {
        let l = next_line(&mut r)?;
        let mut it = l.split_whitespace();
        let name = it.next().ok_or_else(|| ckpt_err("empty shape line"))?.to_string();
        let shape: Vec<usize> = it
            .map(|d| d.parse().map_err(|_| ckpt_err(format!("bad shape for {name}"))))
            .collect::<Result<_, _>>()?;
        table.push((name, shape));
    }
    if next_line(&mut r)? != "data" {
        return Err(ckpt_err("missing data marker"));
    }
    let mut m = match arch {
        Arch::Cnn => build_cnn(0)?,
        Arch::CnnLite => build_cnn_lite(0)?,
        Arch::Mlp => build_mlp(*input.first().ok_or_else(|| ckpt_err("empty input shape"))?, 0)?,
    };
    if m.input_shape != input {
        return Err(ckpt_err(format!("input shape {input:?} does not match {arch}")));
    }
    m.encoding = encoding;
    let mut values = BTreeMap::new();
    let mut buf = [0u8; 8];
    for (name, shape) in &table {
        let len: usize = shape.iter().product();
        let mut v = Vec::with_capacity(len);
        for _ in 0..len {
            r.read_exact(&mut buf)
                .map_err(|_| ckpt_err(format!("truncated data in {name}")))?;
            v.push(f64::from_le_bytes(buf));
        }
        values.insert(name.clone(), (shape.clone(), v));
    }
    let mut take = |name: String, shape: &[usize]| -> Result<Vec<f64>, NeuralError> {
        let (s, v) = values
            .remove(&name)
            .ok_or_else(|| ckpt_err(format!("missing array {name}")))?;
        if s != shape {
            return Err(ckpt_err(format!("{name}: shape {s:?}, expected {shape:?}")));
        }
        Ok(v)
    };
    for (i, l) in m.layers.iter_mut().enumerate() {
        let bn = matches!(l, Layer::BatchNorm(_));
        let names: &[&str] = if bn { &["gamma", "beta"] } else { &["weight", "bias"] };
        for (p, n) in l.params_mut().into_iter().zip(names) {
            p.value = take(format!("{i}.{n}"), &p.shape)?;
        }
        if let Layer::BatchNorm(b) = l {
            b.running_mean = take(format!("{i}.running_mean"), &[b.channels])?;
            b.running_var = take(format!("{i}.running_var"), &[b.channels])?;
        }
    }
    for (name, (_, v)) in values {
        match name.strip_prefix("extra.") {
            Some(k) => {
                m.extras.insert(k.to_string(), v);
            }
            None => return Err(ckpt_err(format!("unexpected array {name}"))),
        }
    }
    Ok(m)
}

impl Model {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NeuralError> {
        let f = std::fs::File::create(path)?;
        save_checkpoint(self, std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NeuralError> {
        load_checkpoint(std::fs::File::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cnn_shape_chain() {
        let m = build_cnn(1).unwrap();
        assert_eq!(m.flatten_width(), Some(384));
        let widths: Vec<usize> = m
            .shapes()
            .unwrap()
            .iter()
            .zip(&m.layers)
            .filter(|(_, l)| matches!(l, Layer::Conv2d(_) | Layer::Conv1d(_)))
            .map(|(s, _)| s[2])
            .collect();
        assert_eq!(widths, vec![18, 10, 8, 6, 6]);
        let n = m.param_count() as f64;
        assert!((n / 2.8e6 - 1.0).abs() < 0.1, "{n}");
    }

    #[test]
    fn cnn_lite_shape_chain() {
        let m = build_cnn_lite(1).unwrap();
        assert_eq!(m.flatten_width(), Some(512));
        let n = m.param_count();
        assert!((n as f64 / 470e3 - 1.0).abs() < 0.1, "{n}");
        assert!(n < build_cnn(1).unwrap().param_count());
        let x = Tensor::zeros(vec![32, 4, 26, 2]);
        assert_eq!(m.infer(&x).unwrap().shape, vec![32, 1]);
    }

    #[test]
    fn mlp_widths_and_range() {
        let m = build_mlp(9, 3).unwrap();
        let dense: Vec<usize> = m
            .layers
            .iter()
            .filter_map(|l| match l {
                Layer::Dense(d) => Some(d.output),
                _ => None,
            })
            .collect();
        assert_eq!(dense, vec![117, 18, 7, 19, 1]);
        let x = Tensor::new(vec![4, 9], (0..36).map(|i| (i as f64 - 18.0) / 5.0).collect()).unwrap();
        let y = m.infer(&x).unwrap();
        assert!(y.data.iter().all(|&p| p > 0.0 && p < 1.0));
        assert_eq!(y, m.infer(&x).unwrap());
    }

    #[test]
    fn broken_chain_is_rejected() {
        let r = &mut ChaCha8Rng::seed_from_u64(0);
        let layers = vec![Layer::conv2d(4, 9, 2, 8, r), Layer::flatten(), Layer::dense(100, 1, r)];
        assert!(matches!(
            Model::new(Arch::CnnLite, vec![4, 26, 2], layers, 0),
            Err(NeuralError::ShapeMismatch(_))
        ));
        let m = build_cnn_lite(0).unwrap();
        assert!(m.infer(&Tensor::zeros(vec![1, 4, 20, 2])).is_err());
    }

    #[test]
    fn encoding_layout() {
        let a = DnaSeq::parse("ACGT").unwrap();
        let b = DnaSeq::parse("AACG").unwrap();
        let t = encode_pairs(&[(a.clone(), b.clone())], 6, Encoding::Raw).unwrap();
        assert_eq!(t.shape, vec![1, 4, 6, 2]);
        let at = |row: usize, col: usize, ch: usize| t.data[(row * 6 + col) * 2 + ch];
        assert_eq!(at(0, 0, 0), 1.0);
        assert_eq!(at(1, 1, 0), 1.0);
        assert_eq!(at(0, 1, 1), 1.0);
        assert_eq!(at(2, 3, 1), 1.0);
        assert_eq!(t.data.iter().sum::<f64>(), 8.0);
        let rc = encode_pairs(&[(a, b)], 6, Encoding::RcSecond).unwrap();
        // rc(AACG) = CGTT
        assert_eq!(rc.data[(1 * 6) * 2 + 1], 1.0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut m = build_cnn_lite(7).unwrap();
        m.encoding = Encoding::RcSecond;
        m.extras.insert("note".into(), vec![1.5, -2.0]);
        if let Layer::BatchNorm(b) = &mut m.layers[2] {
            b.running_mean[0] = 0.25;
        }
        let mut buf = Vec::new();
        save_checkpoint(&m, &mut buf).unwrap();
        assert!(buf.starts_with(CHECKPOINT_MAGIC.as_bytes()));
        let back = load_checkpoint(&buf[..]).unwrap();
        assert_eq!(back.encoding, Encoding::RcSecond);
        assert_eq!(back.extras["note"], vec![1.5, -2.0]);
        let x = encode_pairs(
            &[(
                DnaSeq::parse("ACGTACGTACGTACGTACGT").unwrap(),
                DnaSeq::parse("TTTTGGGGCCCCAAAATTTT").unwrap(),
            )],
            26,
            Encoding::Raw,
        )
        .unwrap();
        assert_eq!(m.infer(&x).unwrap(), back.infer(&x).unwrap());

        buf.truncate(buf.len() - 8);
        assert!(matches!(load_checkpoint(&buf[..]), Err(NeuralError::Checkpoint(_))));
        assert!(load_checkpoint(&b"NOT A MODEL\n"[..]).is_err());
    }
}
