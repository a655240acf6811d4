use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cell::{dot, HiddenState, LstmLayerWeights};
use crate::error::{Error, Result};
use crate::synthdrive::{WindowConfig, N_FEATURES, N_OUTPUTS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LstmEdConfig {
    pub n_e: usize,
    pub n_d: usize,
    pub n_in: usize,
    pub n_out: usize,
    pub dropout_p: f64,
    pub n_h: usize,
    pub n_p: usize,
}

impl Default for LstmEdConfig {
    fn default() -> Self {
        let w = WindowConfig::default();
        LstmEdConfig {
            n_e: 64,
            n_d: 64,
            n_in: N_FEATURES,
            n_out: N_OUTPUTS,
            dropout_p: 0.2,
            n_h: w.n_h(),
            n_p: w.n_p(),
        }
    }
}

impl LstmEdConfig {
    /// Sizes `n_h`, `n_p` from a window configuration.
    pub fn with_window(self, w: &WindowConfig) -> Self {
        LstmEdConfig {
            n_h: w.n_h(),
            n_p: w.n_p(),
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_e == 0 || self.n_d == 0 {
            return Err(Error::Config("n_e and n_d must be >= 1".into()));
        }
        // the encoder's final state seeds the decoder directly
        if self.n_e != self.n_d {
            return Err(Error::Config(format!(
                "encoder and decoder widths must match, got n_e={} n_d={}",
                self.n_e, self.n_d
            )));
        }
        if self.n_in != N_FEATURES || self.n_out != N_OUTPUTS {
            return Err(Error::Config(format!(
                "n_in and n_out are fixed at {N_FEATURES} and {N_OUTPUTS}"
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout_p must lie in [0, 1), got {}", self.dropout_p)));
        }
        if self.n_h == 0 || self.n_p == 0 {
            return Err(Error::Config("n_h and n_p must be >= 1".into()));
        }
        Ok(())
    }
}

/// Dense layer `y = W x + b`, `W` row-major `out x inp`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub out: usize,
    pub inp: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Linear {
    pub fn zeros(out: usize, inp: usize) -> Self {
        Linear {
            out,
            inp,
            w: vec![0.0; out * inp],
            b: vec![0.0; out],
        }
    }

    fn init(out: usize, inp: usize, rng: &mut impl Rng) -> Self {
        let k = 1.0 / (inp as f64).sqrt();
        let mut l = Self::zeros(out, inp);
        for x in &mut l.w {
            *x = rng.random_range(-k..=k);
        }
        l
    }

    #[inline]
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (r, yr) in y.iter_mut().enumerate() {
            *yr = self.b[r] + dot(&self.w[r * self.inp..(r + 1) * self.inp], x);
        }
    }

    fn check_shape(&self) -> Result<()> {
        if self.w.len() != self.out * self.inp || self.b.len() != self.out {
            return Err(Error::Shape(format!(
                "linear {}x{} has {} weights and {} biases",
                self.out,
                self.inp,
                self.w.len(),
                self.b.len()
            )));
        }
        Ok(())
    }
}

/// Encoder LSTM over the normalized history, dropout on its final hidden
/// state, decoder LSTM seeded with that state, a linear head to the two
/// outputs, and a linear bridge that maps a fed-back output to a decoder
/// input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmEdModel {
    pub config: LstmEdConfig,
    pub encoder: LstmLayerWeights,
    pub decoder: LstmLayerWeights,
    pub head: Linear,
    pub bridge: Linear,
}

pub const TENSOR_NAMES: [&str; 10] = [
    "encoder.w",
    "encoder.u",
    "encoder.b",
    "decoder.w",
    "decoder.u",
    "decoder.b",
    "head.w",
    "head.b",
    "bridge.w",
    "bridge.b",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    Train(u64),
    Eval,
}

/// Inverted dropout: in training each unit is zeroed with probability `p`
/// and survivors are scaled by `1/(1-p)`; identity in evaluation.
pub fn apply_dropout(h: &[f64], p: f64, mode: DropoutMode) -> Vec<f64> {
    match mode {
        DropoutMode::Eval => h.to_vec(),
        DropoutMode::Train(seed) => {
            let mask = dropout_mask(h.len(), p, &mut ChaCha8Rng::seed_from_u64(seed));
            h.iter().zip(mask).map(|(x, m)| x * m).collect()
        }
    }
}

pub(crate) fn dropout_mask(n: usize, p: f64, rng: &mut impl Rng) -> Vec<f64> {
    if p <= 0.0 {
        return vec![1.0; n];
    }
    let keep = 1.0 / (1.0 - p);
    (0..n)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect()
}

impl LstmEdModel {
    /// Randomly initialized model.
    pub fn new(config: LstmEdConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(LstmEdModel {
            encoder: LstmLayerWeights::init(config.n_e, config.n_in, &mut rng),
            decoder: LstmLayerWeights::init(config.n_d, config.n_in, &mut rng),
            head: Linear::init(config.n_out, config.n_d, &mut rng),
            bridge: Linear::init(config.n_in, config.n_out, &mut rng),
            config,
        })
    }

    pub fn zeros(config: LstmEdConfig) -> Result<Self> {
        config.validate()?;
        Ok(LstmEdModel {
            encoder: LstmLayerWeights::zeros(config.n_e, config.n_in),
            decoder: LstmLayerWeights::zeros(config.n_d, config.n_in),
            head: Linear::zeros(config.n_out, config.n_d),
            bridge: Linear::zeros(config.n_in, config.n_out),
            config,
        })
    }

    /// Same shapes, every entry zero; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        LstmEdModel {
            config: self.config,
            encoder: LstmLayerWeights::zeros(self.encoder.hidden, self.encoder.input),
            decoder: LstmLayerWeights::zeros(self.decoder.hidden, self.decoder.input),
            head: Linear::zeros(self.head.out, self.head.inp),
            bridge: Linear::zeros(self.bridge.out, self.bridge.inp),
        }
    }

    /// Weight tensors in [`TENSOR_NAMES`] order.
    pub fn tensors(&self) -> [&[f64]; 10] {
        [
            &self.encoder.w,
            &self.encoder.u,
            &self.encoder.b,
            &self.decoder.w,
            &self.decoder.u,
            &self.decoder.b,
            &self.head.w,
            &self.head.b,
            &self.bridge.w,
            &self.bridge.b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 10] {
        [
            &mut self.encoder.w,
            &mut self.encoder.u,
            &mut self.encoder.b,
            &mut self.decoder.w,
            &mut self.decoder.u,
            &mut self.decoder.b,
            &mut self.head.w,
            &mut self.head.b,
            &mut self.bridge.w,
            &mut self.bridge.b,
        ]
    }

    /// `(rows, cols)` of each tensor; vectors are `(n, 1)`.
    pub fn tensor_shapes(&self) -> [(usize, usize); 10] {
        let (e, d) = (&self.encoder, &self.decoder);
        [
            (4 * e.hidden, e.input),
            (4 * e.hidden, e.hidden),
            (4 * e.hidden, 1),
            (4 * d.hidden, d.input),
            (4 * d.hidden, d.hidden),
            (4 * d.hidden, 1),
            (self.head.out, self.head.inp),
            (self.head.out, 1),
            (self.bridge.out, self.bridge.inp),
            (self.bridge.out, 1),
        ]
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Checks that every tensor agrees with the config.
    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        self.encoder.check_shape()?;
        self.decoder.check_shape()?;
        self.head.check_shape()?;
        self.bridge.check_shape()?;
        let dims = [
            (self.encoder.hidden, c.n_e),
            (self.encoder.input, c.n_in),
            (self.decoder.hidden, c.n_d),
            (self.decoder.input, c.n_in),
            (self.head.out, c.n_out),
            (self.head.inp, c.n_d),
            (self.bridge.out, c.n_in),
            (self.bridge.inp, c.n_out),
        ];
        if dims.iter().any(|(a, b)| a != b) {
            return Err(Error::Shape("weight shapes disagree with the model config".into()));
        }
        if !self.is_finite() {
            return Err(Error::Domain("model has non-finite weights".into()));
        }
        Ok(())
    }

    /// Runs the encoder over `n_h` normalized feature rows from a zero state.
    pub fn encode(&self, x: &[[f64; N_FEATURES]]) -> Result<HiddenState> {
        if x.len() != self.config.n_h {
            return Err(Error::Shape(format!(
                "encoder expects {} history rows, got {}",
                self.config.n_h,
                x.len()
            )));
        }
        let mut state = HiddenState::zeros(self.encoder.hidden);
        let mut scratch = vec![0.0; 4 * self.encoder.hidden];
        for row in x {
            self.encoder.step_in_place(row, &mut state, &mut scratch);
        }
        Ok(state)
    }

    /// Unrolls the decoder for `n_p` steps from `init`, feeding each
    /// prediction back through the bridge. `last_y` is the last observed
    /// output, already normalized.
    pub fn decode_iterative(
        &self,
        init: &HiddenState,
        last_y: [f64; N_OUTPUTS],
        n_p: usize,
    ) -> Result<Vec<[f64; N_OUTPUTS]>> {
        if n_p == 0 {
            return Err(Error::Domain("n_p must be >= 1".into()));
        }
        if init.h.len() != self.decoder.hidden || init.c.len() != self.decoder.hidden {
            return Err(Error::Shape(format!(
                "decoder of width {} seeded with state of width {}",
                self.decoder.hidden,
                init.h.len()
            )));
        }
        let mut state = init.clone();
        let mut scratch = vec![0.0; 4 * self.decoder.hidden];
        let mut inp = [0.0; N_FEATURES];
        let mut prev = last_y;
        let mut out = Vec::with_capacity(n_p);
        for _ in 0..n_p {
            self.bridge.apply(&prev, &mut inp);
            self.decoder.step_in_place(&inp, &mut state, &mut scratch);
            let mut y = [0.0; N_OUTPUTS];
            self.head.apply(&state.h, &mut y);
            out.push(y);
            prev = y;
        }
        Ok(out)
    }

    /// Evaluation-mode forecast on normalized scale: encode, decode, no
    /// dropout.
    pub fn forward(&self, x: &[[f64; N_FEATURES]]) -> Result<Vec<[f64; N_OUTPUTS]>> {
        let state = self.encode(x)?;
        let last = x.last().expect("encode checked the length");
        self.decode_iterative(&state, last_output(last), self.config.n_p)
    }
}

/// The `[v, err]` part of a normalized feature row.
pub(crate) fn last_output(row: &[f64; N_FEATURES]) -> [f64; N_OUTPUTS] {
    crate::synthdrive::OUTPUT_CHANNELS.map(|c| row[c])
}
