use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{Mode, Model};
use super::tensor::{Param, Tensor};
use super::NeuralError;
use crate::exec::Exec;

const BCE_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    Mse,
    Bce,
}

impl fmt::Display for Loss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Loss::Mse => "mse",
            Loss::Bce => "bce",
        })
    }
}

impl FromStr for Loss {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mse" => Ok(Loss::Mse),
            "bce" => Ok(Loss::Bce),
            _ => Err(format!("unknown loss {s:?}")),
        }
    }
}

impl Loss {
    /// Mean loss over the batch.
    pub fn value(self, pred: &[f64], target: &[f64]) -> f64 {
        let n = pred.len() as f64;
        match self {
            Loss::Mse => pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n,
            Loss::Bce => {
                pred.iter()
                    .zip(target)
                    .map(|(p, t)| {
                        let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                        -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
                    })
                    .sum::<f64>()
                    / n
            }
        }
    }

    /// Gradient of [`Loss::value`] with respect to each prediction.
    pub fn grad(self, pred: &[f64], target: &[f64]) -> Vec<f64> {
        let n = pred.len() as f64;
        pred.iter()
            .zip(target)
            .map(|(&p, &t)| match self {
                Loss::Mse => 2.0 * (p - t) / n,
                Loss::Bce => {
                    let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                    (p - t) / (p * (1.0 - p)) / n
                }
            })
            .collect()
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut [&mut Param]) -> Result<(), NeuralError> {
        for (i, p) in params.iter().enumerate() {
            if !p.grad.iter().all(|g| g.is_finite()) {
                return Err(NeuralError::NonFiniteGradient(format!("parameter {i}")));
            }
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let step = self.lr / c1;
        for p in params.iter_mut() {
            let Param { value, grad, m, v, .. } = &mut **p;
            for j in 0..value.len() {
                let g = grad[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                value[j] -= step * m[j] / ((v[j] / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub loss: Loss,
    pub patience: usize,
    /// `None` trains until early stopping fires.
    pub max_epochs: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 256,
            loss: Loss::Mse,
            patience: 3,
            max_epochs: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(NeuralError::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.patience == 0 {
            return Err(NeuralError::Config("patience must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(NeuralError::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub improved: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochStats>,
    /// Index into `epochs` of the restored weights.
    pub best_epoch: usize,
}

impl History {
    pub fn best_val_loss(&self) -> f64 {
        self.epochs.get(self.best_epoch).map_or(f64::INFINITY, |e| e.val_loss)
    }
}

fn check_data(x: &Tensor, y: &[f64], what: &str) -> Result<(), NeuralError> {
    if x.is_empty() || x.batch() == 0 {
        return Err(NeuralError::Config(format!("{what} split is empty")));
    }
    if x.batch() != y.len() {
        return Err(NeuralError::ShapeMismatch(format!(
            "{what}: {} inputs but {} targets",
            x.batch(),
            y.len()
        )));
    }
    Ok(())
}

/// Mean eval-mode loss, batched.
fn eval_loss(model: &Model, x: &Tensor, y: &[f64], loss: Loss, batch: usize) -> Result<f64, NeuralError> {
    let pred = raw_predict(model, x, batch, Exec::Sequential)?;
    Ok(loss.value(&pred, y))
}

/// Shuffled mini-batches; a trailing batch of one is merged into its
/// predecessor so batch statistics stay defined.
fn batches(n: usize, size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut out: Vec<Vec<usize>> = idx.chunks(size).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().extend(last);
    }
    out
}

/// One optimisation step on a batch; returns the batch loss.
fn step(model: &mut Model, opt: &mut Adam, x: &Tensor, y: &[f64], loss: Loss) -> Result<f64, NeuralError> {
    model.zero_grad();
    let pred = model.forward(x, Mode::Train)?;
    let l = loss.value(&pred.data, y);
    let dy = Tensor {
        shape: pred.shape,
        data: loss.grad(&pred.data, y),
    };
    model.backward(dy, false);
    opt.step(&mut model.params_mut())?;
    Ok(l)
}

/// Mini-batch Adam with early stopping on validation loss. The weights of
/// the best validation epoch are restored before returning.
pub fn train(
    model: &mut Model,
    train: (&Tensor, &[f64]),
    val: (&Tensor, &[f64]),
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<History, NeuralError> {
    cfg.validate()?;
    check_data(train.0, train.1, "train")?;
    check_data(val.0, val.1, "validation")?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.lr);
    let mut hist = History::default();
    let mut best = (f64::INFINITY, model.layers.clone());
    let mut stale = 0;
    let mut epoch = 0;
    while cfg.max_epochs.is_none_or(|m| epoch < m) {
        let mut total = 0.0;
        for b in batches(train.0.batch(), cfg.batch_size, &mut rng) {
            let x = train.0.gather(&b);
            let y: Vec<f64> = b.iter().map(|&i| train.1[i]).collect();
            total += step(model, &mut opt, &x, &y, cfg.loss)? * b.len() as f64;
        }
        let val_loss = eval_loss(model, val.0, val.1, cfg.loss, cfg.batch_size.max(256))?;
        let improved = val_loss < best.0;
        let stats = EpochStats {
            epoch,
            train_loss: total / train.0.batch() as f64,
            val_loss,
            improved,
        };
        on_epoch(&stats);
        hist.epochs.push(stats);
        if improved {
            best = (val_loss, model.layers.clone());
            hist.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
        epoch += 1;
    }
    model.layers = best.1;
    Ok(hist)
}

fn raw_predict(model: &Model, x: &Tensor, batch: usize, exec: Exec) -> Result<Vec<f64>, NeuralError> {
    let n = x.batch();
    let batch = batch.max(1);
    let chunks = exec.map_range(n.div_ceil(batch), |c| {
        let lo = c * batch;
        model.infer(&x.slice_batch(lo, (lo + batch).min(n)))
    });
    let mut out = Vec::with_capacity(n);
    for c in chunks {
        out.extend(c?.data);
    }
    Ok(out)
}

/// Eval-mode predictions, one per input sample and clamped to `[0, 1]`.
/// Batches may run in parallel; results do not depend on `batch`.
pub fn predict_batch(model: &Model, x: &Tensor, batch: usize, exec: Exec) -> Result<Vec<f64>, NeuralError> {
    Ok(raw_predict(model, x, batch, exec)?
        .into_iter()
        .map(|p| p.clamp(0.0, 1.0))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// `‖g_analytic − g_numeric‖ / (‖g_analytic‖ + ‖g_numeric‖)`.
    pub rel_error: f64,
    pub checked: usize,
}

/// Compares backprop gradients of the train-mode loss with central
/// differences, over every parameter and the input. Dropout masks are
/// replayed identically for every evaluation.
pub fn gradient_check(model: &mut Model, x: &Tensor, y: &[f64], loss: Loss, h: f64) -> Result<GradCheck, NeuralError> {
    let rng0 = model.rng_state();
    let eval = |m: &mut Model, x: &Tensor| -> Result<f64, NeuralError> {
        m.set_rng(rng0.clone());
        let p = m.forward(x, Mode::Train)?;
        Ok(loss.value(&p.data, y))
    };

    model.zero_grad();
    model.set_rng(rng0.clone());
    let pred = model.forward(x, Mode::Train)?;
    let dy = Tensor {
        shape: pred.shape.clone(),
        data: loss.grad(&pred.data, y),
    };
    let dx = model.backward(dy, true).expect("input gradient");
    let analytic: Vec<Vec<f64>> = model.params().iter().map(|p| p.grad.clone()).collect();

    let (mut diff, mut na, mut nn, mut checked) = (0.0, 0.0, 0.0, 0);
    let mut acc = |a: f64, n: f64| {
        diff += (a - n) * (a - n);
        na += a * a;
        nn += n * n;
        checked += 1;
    };
    for (pi, grads) in analytic.iter().enumerate() {
        for (j, &a) in grads.iter().enumerate() {
            let orig = model.params()[pi].value[j];
            model.params_mut()[pi].value[j] = orig + h;
            let up = eval(model, x)?;
            model.params_mut()[pi].value[j] = orig - h;
            let down = eval(model, x)?;
            model.params_mut()[pi].value[j] = orig;
            acc(a, (up - down) / (2.0 * h));
        }
    }
    let mut xp = x.clone();
    for j in 0..x.len() {
        xp.data[j] = x.data[j] + h;
        let up = eval(model, &xp)?;
        xp.data[j] = x.data[j] - h;
        let down = eval(model, &xp)?;
        xp.data[j] = x.data[j];
        acc(dx.data[j], (up - down) / (2.0 * h));
    }
    model.set_rng(rng0);
    let denom = na.sqrt() + nn.sqrt();
    Ok(GradCheck {
        rel_error: if denom > 0.0 { diff.sqrt() / denom } else { 0.0 },
        checked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{build_cnn_lite, build_mlp, Arch, Layer};
    use rand::Rng;

    fn small(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1e-2..1e-2)).collect()).unwrap()
    }

    fn check(layers: Vec<Layer>, input: Vec<usize>, loss: Loss, targets: &[f64]) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut m = Model::new(Arch::CnnLite, input.clone(), layers, 3).unwrap();
        let mut shape = vec![targets.len()];
        shape.extend(input);
        let x = small(&mut rng, shape);
        let g = gradient_check(&mut m, &x, targets, loss, 1e-6).unwrap();
        assert!(g.rel_error < 1e-4, "relative error {}", g.rel_error);
        assert!(g.checked > 0);
    }

    #[test]
    fn gradients_conv2d_relu_batchnorm_dense() {
        let r = &mut ChaCha8Rng::seed_from_u64(1);
        let layers = vec![
            Layer::conv2d(2, 3, 2, 4, r),
            Layer::relu(),
            Layer::batch_norm(4),
            Layer::flatten(),
            Layer::dense(4 * 4, 3, r),
            Layer::relu(),
            Layer::dense(3, 1, r),
        ];
        check(layers, vec![2, 6, 2], Loss::Mse, &[0.1, 0.7, 0.3, 0.0]);
    }

    #[test]
    fn gradients_conv1d_with_dropout() {
        let r = &mut ChaCha8Rng::seed_from_u64(2);
        let layers = vec![
            Layer::conv2d(4, 3, 2, 5, r),
            Layer::dropout(0.3),
            Layer::conv1d(3, 5, 3, r),
            Layer::batch_norm(3),
            Layer::flatten(),
            Layer::dense(3 * 3, 1, r),
        ];
        check(layers, vec![4, 7, 2], Loss::Mse, &[0.2, 0.9, 0.4]);
    }

    #[test]
    fn gradients_mlp_bce() {
        let r = &mut ChaCha8Rng::seed_from_u64(3);
        let layers = vec![
            Layer::dense(5, 6, r),
            Layer::relu(),
            Layer::batch_norm(6),
            Layer::dense(6, 1, r),
            Layer::sigmoid(),
        ];
        check(layers, vec![5], Loss::Bce, &[1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn loss_gradients_match_differences() {
        let pred = [0.3, 0.8, 0.05];
        let t = [0.0, 1.0, 0.5];
        for loss in [Loss::Mse, Loss::Bce] {
            let g = loss.grad(&pred, &t);
            for j in 0..3 {
                let mut up = pred;
                up[j] += 1e-6;
                let mut down = pred;
                down[j] -= 1e-6;
                let num = (loss.value(&up, &t) - loss.value(&down, &t)) / 2e-6;
                assert!(
                    (num - g[j]).abs() < 1e-6 * (1.0 + num.abs()),
                    "{loss}: {num} vs {}",
                    g[j]
                );
            }
        }
    }

    #[test]
    fn batchnorm_train_output_is_standardised() {
        let mut bn = Layer::batch_norm(3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::new(
            vec![64, 3],
            (0..192).map(|i| (i % 7) as f64 * 3.0 + rng.random::<f64>()).collect(),
        )
        .unwrap();
        let y = bn.forward(x, &mut rng).unwrap();
        for c in 0..3 {
            let col: Vec<f64> = y.data.iter().skip(c).step_by(3).copied().collect();
            let mean = col.iter().sum::<f64>() / 64.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 64.0;
            assert!(mean.abs() < 1e-5 && (var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn adam_zero_gradient_or_rate_leaves_params() {
        let mut m = build_mlp(9, 0).unwrap();
        let before: Vec<Vec<f64>> = m.params().iter().map(|p| p.value.clone()).collect();
        m.zero_grad();
        Adam::new(1e-3).step(&mut m.params_mut()).unwrap();
        for p in m.params_mut() {
            p.grad.iter_mut().for_each(|g| *g = 1.0);
        }
        let mut zero = Adam::new(1e-3);
        zero.lr = 0.0;
        zero.step(&mut m.params_mut()).unwrap();
        let after: Vec<Vec<f64>> = m.params().iter().map(|p| p.value.clone()).collect();
        assert_eq!(before, after);
        m.params_mut()[0].grad[0] = f64::NAN;
        assert!(matches!(
            Adam::new(1e-3).step(&mut m.params_mut()),
            Err(NeuralError::NonFiniteGradient(_))
        ));
    }

    #[test]
    fn config_validation() {
        let bad = TrainConfig {
            lr: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            patience: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    fn toy_pairs(n: usize, seed: u64) -> (Tensor, Vec<f64>) {
        use crate::neural::{encode_pairs, Encoding};
        use crate::seq::random_seq;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs: Vec<_> = (0..n)
            .map(|_| {
                let a = random_seq(20, &mut rng).unwrap();
                let b = random_seq(20, &mut rng).unwrap();
                (a, b)
            })
            .collect();
        let y = (0..n).map(|_| rng.random::<f64>()).collect();
        (encode_pairs(&pairs, 26, Encoding::Raw).unwrap(), y)
    }

    #[test]
    fn training_is_deterministic_and_restores_best() {
        let (x, y) = toy_pairs(24, 1);
        let (vx, vy) = toy_pairs(8, 2);
        let cfg = TrainConfig {
            lr: 1e-3,
            batch_size: 8,
            max_epochs: Some(4),
            seed: 9,
            ..TrainConfig::default()
        };
        let run = || {
            let mut m = build_cnn_lite(4).unwrap();
            let h = train(&mut m, (&x, &y), (&vx, &vy), &cfg, |_| {}).unwrap();
            (m, h)
        };
        let (m1, h1) = run();
        let (m2, h2) = run();
        assert_eq!(h1, h2);
        assert!(h1.epochs.len() <= 4);
        let restored = eval_loss(&m1, &vx, &vy, Loss::Mse, 256).unwrap();
        assert!((restored - h1.best_val_loss()).abs() < 1e-12);
        assert_eq!(m1.infer(&vx).unwrap(), m2.infer(&vx).unwrap());
    }

    #[test]
    fn prediction_is_batch_independent_and_clamped() {
        let (x, _) = toy_pairs(37, 3);
        let m = build_cnn_lite(5).unwrap();
        let a = predict_batch(&m, &x, 1, Exec::Sequential).unwrap();
        let b = predict_batch(&m, &x, 512, Exec::default()).unwrap();
        assert_eq!(a.len(), 37);
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-5);
            assert!((0.0..=1.0).contains(p));
        }
        let single = predict_batch(&m, &x.slice_batch(10, 11), 1, Exec::Sequential).unwrap();
        assert_eq!(single[0], a[10]);
    }
}
