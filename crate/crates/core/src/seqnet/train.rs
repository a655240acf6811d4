use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cell::{axpy, dot, HiddenState, SeqCache};
use super::model::{dropout_mask, last_output, LstmEdConfig, LstmEdModel};
use crate::error::{Error, Result};
use crate::synthdrive::{WindowedDataset, N_FEATURES, N_OUTPUTS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Learning rate in the last epoch as a fraction of `learning_rate`;
    /// the rate falls linearly between the two.
    pub final_lr_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub grad_clip_norm: f64,
    /// Initial probability of feeding the true output back to the decoder;
    /// decays linearly to zero over the epochs.
    pub teacher_forcing_ratio: f64,
    /// Windows drawn (without replacement) per epoch; all when `None`.
    pub samples_per_epoch: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            final_lr_fraction: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            grad_clip_norm: 5.0,
            teacher_forcing_ratio: 0.5,
            samples_per_epoch: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "final_lr_fraction must lie in (0, 1], got {}",
                self.final_lr_fraction
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("adam epsilon must be > 0".into()));
        }
        if !(self.grad_clip_norm > 0.0) {
            return Err(Error::Config("grad_clip_norm must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.teacher_forcing_ratio) {
            return Err(Error::Config("teacher_forcing_ratio must lie in [0, 1]".into()));
        }
        if self.samples_per_epoch == Some(0) {
            return Err(Error::Config("samples_per_epoch must be >= 1".into()));
        }
        Ok(())
    }

    /// Teacher-forcing probability in `epoch` (0-based).
    pub fn teacher_forcing_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.teacher_forcing_ratio;
        }
        self.teacher_forcing_ratio * (1.0 - epoch as f64 / (self.epochs - 1) as f64)
    }

    /// Learning rate in `epoch` (0-based).
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.learning_rate;
        }
        let frac = epoch as f64 / (self.epochs - 1) as f64;
        self.learning_rate * (1.0 - (1.0 - self.final_lr_fraction) * frac)
    }
}

/// Random choices for one training sample, drawn up front so that the
/// gradient does not depend on evaluation order.
#[derive(Debug, Clone)]
pub(crate) struct SampleDraw {
    /// Dropout multipliers for the encoder's final hidden state.
    pub mask: Vec<f64>,
    /// `forced[k]`: decoder step `k+1` sees the true output of step `k`.
    pub forced: Vec<bool>,
}

impl SampleDraw {
    pub fn plain(hidden: usize, n_p: usize) -> Self {
        SampleDraw {
            mask: vec![1.0; hidden],
            forced: vec![false; n_p],
        }
    }
}

/// Mean squared error of one window; the gradient is added into `grad`.
pub(crate) fn sample_grad(
    model: &LstmEdModel,
    x: &[[f64; N_FEATURES]],
    y: &[[f64; N_OUTPUTS]],
    draw: &SampleDraw,
    grad: &mut LstmEdModel,
) -> f64 {
    let (enc, dec) = (&model.encoder, &model.decoder);
    let hd = dec.hidden;
    let (n_h, n_p) = (x.len(), y.len());

    let mut enc_cache = SeqCache::with_capacity(n_h, enc.hidden, enc.input);
    let mut st = HiddenState::zeros(enc.hidden);
    for row in x {
        enc.step_cached(row, &mut st, &mut enc_cache);
    }
    for (h, m) in st.h.iter_mut().zip(&draw.mask) {
        *h *= m;
    }

    let mut dec_cache = SeqCache::with_capacity(n_p, hd, dec.input);
    let mut fed = Vec::with_capacity(n_p);
    let mut hs = Vec::with_capacity(n_p * hd);
    let mut preds = Vec::with_capacity(n_p);
    let mut inp = [0.0; N_FEATURES];
    let mut prev = last_output(&x[n_h - 1]);
    for k in 0..n_p {
        fed.push(prev);
        model.bridge.apply(&prev, &mut inp);
        dec.step_cached(&inp, &mut st, &mut dec_cache);
        hs.extend_from_slice(&st.h);
        let mut yk = [0.0; N_OUTPUTS];
        model.head.apply(&st.h, &mut yk);
        preds.push(yk);
        prev = if draw.forced[k] { y[k] } else { yk };
    }

    let denom = (n_p * N_OUTPUTS) as f64;
    let loss = preds
        .iter()
        .zip(y)
        .flat_map(|(p, t)| p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)))
        .sum::<f64>()
        / denom;

    let mut dh = vec![0.0; hd];
    let mut dc = vec![0.0; hd];
    let mut dz = vec![0.0; 4 * hd];
    let mut dx = [0.0; N_FEATURES];
    let mut feedback = [0.0; N_OUTPUTS];
    for k in (0..n_p).rev() {
        let dy: [f64; N_OUTPUTS] = std::array::from_fn(|r| 2.0 * (preds[k][r] - y[k][r]) / denom + feedback[r]);
        let h_k = &hs[k * hd..(k + 1) * hd];
        for r in 0..N_OUTPUTS {
            grad.head.b[r] += dy[r];
            axpy(dy[r], h_k, &mut grad.head.w[r * hd..(r + 1) * hd]);
            axpy(dy[r], &model.head.w[r * hd..(r + 1) * hd], &mut dh);
        }
        dec.step_backward(&dec_cache, k, &mut dh, &mut dc, Some(&mut dx), &mut grad.decoder, &mut dz);
        let bi = model.bridge.inp;
        for r in 0..N_FEATURES {
            grad.bridge.b[r] += dx[r];
            axpy(dx[r], &fed[k], &mut grad.bridge.w[r * bi..(r + 1) * bi]);
        }
        feedback = if k > 0 && !draw.forced[k - 1] {
            std::array::from_fn(|c| (0..N_FEATURES).map(|r| dx[r] * model.bridge.w[r * bi + c]).sum())
        } else {
            [0.0; N_OUTPUTS]
        };
    }

    for (d, m) in dh.iter_mut().zip(&draw.mask) {
        *d *= m;
    }
    for t in (0..n_h).rev() {
        enc.step_backward(&enc_cache, t, &mut dh, &mut dc, None, &mut grad.encoder, &mut dz);
    }
    loss
}

fn add_into(acc: &mut LstmEdModel, g: &LstmEdModel) {
    for (a, b) in acc.tensors_mut().into_iter().zip(g.tensors()) {
        axpy(1.0, b, a);
    }
}

fn scale(g: &mut LstmEdModel, s: f64) {
    for t in g.tensors_mut() {
        t.iter_mut().for_each(|x| *x *= s);
    }
}

fn global_norm(g: &LstmEdModel) -> f64 {
    g.tensors().iter().map(|t| dot(t, t)).sum::<f64>().sqrt()
}

struct Adam {
    m: LstmEdModel,
    v: LstmEdModel,
    t: i32,
}

impl Adam {
    fn new(model: &LstmEdModel) -> Self {
        Adam {
            m: model.zeros_like(),
            v: model.zeros_like(),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut LstmEdModel, grad: &LstmEdModel, cfg: &TrainConfig, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        let params = model.tensors_mut();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, g), m), v) in params.into_iter().zip(grad.tensors()).zip(ms).zip(vs) {
            for j in 0..p.len() {
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
                p[j] -= lr * (m[j] / bc1) / ((v[j] / bc2).sqrt() + cfg.epsilon);
            }
        }
    }
}

/// Samples whose gradients one rayon task accumulates sequentially. Fixed,
/// so the summation order does not depend on the thread count.
const CHUNK: usize = 4;

/// Trained model and per-epoch mean training loss.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: LstmEdModel,
    pub loss_history: Vec<f64>,
}

/// Trains a freshly initialized model (seeded by `tcfg.seed`).
pub fn train(dataset: &WindowedDataset, mcfg: &LstmEdConfig, tcfg: &TrainConfig) -> Result<TrainOutcome> {
    let model = LstmEdModel::new(*mcfg, tcfg.seed)?;
    train_model(model, dataset, tcfg)
}

/// Continues training `model` on `dataset`.
pub fn train_model(mut model: LstmEdModel, dataset: &WindowedDataset, tcfg: &TrainConfig) -> Result<TrainOutcome> {
    tcfg.validate()?;
    model.validate()?;
    let mcfg = model.config;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset("training set has no windows".into()));
    }
    if dataset.n_h() != mcfg.n_h || dataset.n_p() != mcfg.n_p {
        return Err(Error::Shape(format!(
            "dataset windows are {}+{} steps but the model expects {}+{}",
            dataset.n_h(),
            dataset.n_p(),
            mcfg.n_h,
            mcfg.n_p
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    rng.set_stream(1);
    let mut adam = Adam::new(&model);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let per_epoch = tcfg.samples_per_epoch.unwrap_or(usize::MAX).min(dataset.len());
    let mut history = Vec::with_capacity(tcfg.epochs);

    for epoch in 0..tcfg.epochs {
        let tf = tcfg.teacher_forcing_at(epoch);
        let lr = tcfg.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order[..per_epoch].chunks(tcfg.batch_size) {
            let draws: Vec<SampleDraw> = batch
                .iter()
                .map(|_| SampleDraw {
                    mask: dropout_mask(mcfg.n_d, mcfg.dropout_p, &mut rng),
                    forced: (0..mcfg.n_p).map(|_| rng.random::<f64>() < tf).collect(),
                })
                .collect();
            let work: Vec<(usize, &SampleDraw)> = batch.iter().copied().zip(&draws).collect();
            let partial: Vec<(LstmEdModel, f64)> = work
                .par_chunks(CHUNK)
                .map(|chunk| {
                    let mut g = model.zeros_like();
                    let mut l = 0.0;
                    for &(i, draw) in chunk {
                        l += sample_grad(&model, dataset.history(i), &dataset.target(i), draw, &mut g);
                    }
                    (g, l)
                })
                .collect();
            let mut grad = model.zeros_like();
            for (g, l) in &partial {
                add_into(&mut grad, g);
                loss_sum += l;
            }
            scale(&mut grad, 1.0 / batch.len() as f64);
            let norm = global_norm(&grad);
            if !norm.is_finite() {
                return Err(Error::Divergence { epoch, loss: norm });
            }
            if norm > tcfg.grad_clip_norm {
                scale(&mut grad, tcfg.grad_clip_norm / norm);
            }
            adam.step(&mut model, &grad, tcfg, lr);
        }
        let loss = loss_sum / per_epoch as f64;
        if !loss.is_finite() || !model.is_finite() {
            return Err(Error::Divergence { epoch, loss });
        }
        log::info!("epoch {}/{}: loss {loss:.6} (teacher forcing {tf:.2})", epoch + 1, tcfg.epochs);
        history.push(loss);
    }
    Ok(TrainOutcome {
        model,
        loss_history: history,
    })
}

/// Mean squared error of one window in evaluation mode.
pub fn window_loss(model: &LstmEdModel, x: &[[f64; N_FEATURES]], y: &[[f64; N_OUTPUTS]]) -> Result<f64> {
    let pred = model.forward(x)?;
    if pred.len() != y.len() {
        return Err(Error::Shape(format!("{} targets for {} predictions", y.len(), pred.len())));
    }
    let sum: f64 = pred
        .iter()
        .zip(y)
        .flat_map(|(p, t)| p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)))
        .sum();
    Ok(sum / (y.len() * N_OUTPUTS) as f64)
}

/// Analytic gradient of [`window_loss`] (no dropout, no teacher forcing).
pub fn loss_gradient(
    model: &LstmEdModel,
    x: &[[f64; N_FEATURES]],
    y: &[[f64; N_OUTPUTS]],
) -> Result<(f64, LstmEdModel)> {
    model.validate()?;
    if x.len() != model.config.n_h || y.len() != model.config.n_p {
        return Err(Error::Shape(format!(
            "sample is {}+{} steps, model expects {}+{}",
            x.len(),
            y.len(),
            model.config.n_h,
            model.config.n_p
        )));
    }
    let mut grad = model.zeros_like();
    let loss = sample_grad(model, x, y, &SampleDraw::plain(model.decoder.hidden, y.len()), &mut grad);
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdrive::{DriveTrace, FeatureVector, NormStats, WindowConfig};

    fn small(n_h: usize, n_p: usize, hidden: usize) -> LstmEdConfig {
        LstmEdConfig {
            n_e: hidden,
            n_d: hidden,
            n_h,
            n_p,
            dropout_p: 0.0,
            ..Default::default()
        }
    }

    fn sample(n_h: usize, n_p: usize, seed: u64) -> (Vec<[f64; 6]>, Vec<[f64; 2]>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = (0..n_h).map(|_| std::array::from_fn(|_| rng.random::<f64>())).collect();
        let y = (0..n_p).map(|_| std::array::from_fn(|_| rng.random::<f64>())).collect();
        (x, y)
    }

    #[test]
    fn training_loss_matches_eval_loss_without_randomness() {
        let m = LstmEdModel::new(small(5, 4, 4), 8).unwrap();
        let (x, y) = sample(5, 4, 9);
        let (l, _) = loss_gradient(&m, &x, &y).unwrap();
        assert!((l - window_loss(&m, &x, &y).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn teacher_forcing_schedule() {
        let c = TrainConfig {
            epochs: 5,
            ..Default::default()
        };
        let s: Vec<f64> = (0..5).map(|e| c.teacher_forcing_at(e)).collect();
        assert_eq!(s, vec![0.5, 0.375, 0.25, 0.125, 0.0]);
        let one = TrainConfig { epochs: 1, ..c };
        assert_eq!(one.teacher_forcing_at(0), 0.5);

        let d = TrainConfig {
            epochs: 3,
            learning_rate: 1e-2,
            final_lr_fraction: 0.1,
            ..Default::default()
        };
        let r: Vec<f64> = (0..3).map(|e| d.learning_rate_at(e)).collect();
        assert!((r[0] - 1e-2).abs() < 1e-15 && (r[1] - 5.5e-3).abs() < 1e-15 && (r[2] - 1e-3).abs() < 1e-15);
        assert_eq!(c.learning_rate_at(4), c.learning_rate);
    }

    #[test]
    fn train_config_checks() {
        let bad = [
            TrainConfig { learning_rate: 0.0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { teacher_forcing_ratio: 1.5, ..Default::default() },
            TrainConfig { samples_per_epoch: Some(0), ..Default::default() },
            TrainConfig { final_lr_fraction: 0.0, ..Default::default() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Config(_))));
        }
    }

    fn toy_dataset(n_h: usize, n_p: usize, len: usize) -> WindowedDataset {
        let features: Vec<FeatureVector> = (0..len)
            .map(|k| {
                let t = k as f64 * 0.1;
                let v = 10.0 + 4.0 * (0.3 * t).sin();
                FeatureVector {
                    v,
                    acc: 1.2 * (0.3 * t).cos(),
                    d_tl: 500.0 - 3.0 * t,
                    v_ref: 12.0 + (0.1 * t).sin(),
                    tau_sp: if (t as usize) % 6 < 3 { 0.0 } else { 1.0 },
                    err: 12.0 + (0.1 * t).sin() - v,
                }
            })
            .collect();
        let tr = DriveTrace {
            driver_id: "toy".into(),
            dt: 0.1,
            positions: vec![0.0; len],
            features,
        };
        let cfg = WindowConfig {
            t_h: n_h as f64 * 0.1,
            t_p: n_p as f64 * 0.1,
            dt: 0.1,
        };
        let norm = NormStats::from_traces([&tr]).unwrap();
        WindowedDataset::build(&[&tr], &cfg, norm)
    }

    #[test]
    fn zero_epochs_return_initialization() {
        let ds = toy_dataset(8, 3, 20);
        let mcfg = small(8, 3, 4);
        let tcfg = TrainConfig {
            epochs: 0,
            seed: 6,
            ..Default::default()
        };
        let out = train(&ds, &mcfg, &tcfg).unwrap();
        assert_eq!(out.model, LstmEdModel::new(mcfg, 6).unwrap());
        assert!(out.loss_history.is_empty());
    }

    #[test]
    fn seeded_training_is_deterministic() {
        let ds = toy_dataset(8, 3, 40);
        let mcfg = LstmEdConfig {
            dropout_p: 0.2,
            ..small(8, 3, 4)
        };
        let tcfg = TrainConfig {
            epochs: 3,
            batch_size: 7,
            seed: 3,
            ..Default::default()
        };
        let a = train(&ds, &mcfg, &tcfg).unwrap();
        let b = train(&ds, &mcfg, &tcfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.loss_history.len(), 3);
    }

    #[test]
    fn loss_decreases_on_tiny_dataset() {
        let ds = toy_dataset(10, 4, 60);
        let mcfg = small(10, 4, 6);
        let tcfg = TrainConfig {
            epochs: 25,
            batch_size: 8,
            teacher_forcing_ratio: 0.0,
            seed: 1,
            ..Default::default()
        };
        let h = train(&ds, &mcfg, &tcfg).unwrap().loss_history;
        for w in h.windows(2) {
            assert!(w[1] <= w[0] * 1.05, "{h:?}");
        }
        assert!(h[h.len() - 1] < h[0]);
    }

    #[test]
    fn shape_and_empty_errors() {
        let ds = toy_dataset(8, 3, 20);
        let wrong = small(9, 3, 4);
        assert!(matches!(train(&ds, &wrong, &TrainConfig::default()), Err(Error::Shape(_))));
        let empty = toy_dataset(8, 3, 5);
        assert!(matches!(
            train(&empty, &small(8, 3, 4), &TrainConfig::default()),
            Err(Error::EmptyDataset(_))
        ));
    }
}
