use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One LSTM layer. The four gates are stacked row-wise in the order
/// input, forget, cell candidate, output: `w` is `4H x I`, `u` is `4H x H`,
/// `b` has `4H` entries, all row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayerWeights {
    pub hidden: usize,
    pub input: usize,
    pub w: Vec<f64>,
    pub u: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Cell = 2,
    Output = 3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl HiddenState {
    pub fn zeros(hidden: usize) -> Self {
        HiddenState {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl LstmLayerWeights {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        LstmLayerWeights {
            hidden,
            input,
            w: vec![0.0; 4 * hidden * input],
            u: vec![0.0; 4 * hidden * hidden],
            b: vec![0.0; 4 * hidden],
        }
    }

    /// Uniform weights in `±1/sqrt(H)`, zero biases except the forget gate
    /// at +1.
    pub fn init(hidden: usize, input: usize, rng: &mut impl Rng) -> Self {
        let k = 1.0 / (hidden as f64).sqrt();
        let mut layer = Self::zeros(hidden, input);
        for x in layer.w.iter_mut().chain(layer.u.iter_mut()) {
            *x = rng.random_range(-k..=k);
        }
        layer.gate_bias_mut(Gate::Forget).fill(1.0);
        layer
    }

    pub fn gate_bias_mut(&mut self, gate: Gate) -> &mut [f64] {
        let h = self.hidden;
        &mut self.b[gate as usize * h..(gate as usize + 1) * h]
    }

    /// Row `r` of `w` (length `input`).
    pub fn w_row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.w[r * self.input..(r + 1) * self.input]
    }

    pub fn u_row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.u[r * self.hidden..(r + 1) * self.hidden]
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().chain(&self.u).chain(&self.b).all(|x| x.is_finite())
    }

    pub(crate) fn check_shape(&self) -> Result<()> {
        let (h, i) = (self.hidden, self.input);
        if h == 0 || i == 0 || self.w.len() != 4 * h * i || self.u.len() != 4 * h * h || self.b.len() != 4 * h {
            return Err(Error::Shape(format!(
                "LSTM layer H={h}, I={i} has w {}, u {}, b {} entries",
                self.w.len(),
                self.u.len(),
                self.b.len()
            )));
        }
        Ok(())
    }

    /// Gate activations `[i | f | g | o]` for input `x` and previous `h`.
    #[inline]
    pub(crate) fn gates(&self, x: &[f64], h_prev: &[f64], out: &mut [f64]) {
        let (hd, inp) = (self.hidden, self.input);
        for r in 0..4 * hd {
            let z = self.b[r]
                + dot(&self.w[r * inp..(r + 1) * inp], x)
                + dot(&self.u[r * hd..(r + 1) * hd], h_prev);
            out[r] = if r / hd == Gate::Cell as usize { z.tanh() } else { sigmoid(z) };
        }
    }

    /// Writes the new `c`, `tanh(c)` and `h` from gate activations.
    #[inline]
    pub(crate) fn update(&self, gates: &[f64], c_prev: &[f64], c: &mut [f64], tanh_c: &mut [f64], h: &mut [f64]) {
        let hd = self.hidden;
        for j in 0..hd {
            let (i, f, g, o) = (gates[j], gates[hd + j], gates[2 * hd + j], gates[3 * hd + j]);
            c[j] = f * c_prev[j] + i * g;
            tanh_c[j] = c[j].tanh();
            h[j] = o * tanh_c[j];
        }
    }

    /// Allocation-free step used by inference; `scratch` holds `4H` values.
    pub(crate) fn step_in_place(&self, x: &[f64], state: &mut HiddenState, scratch: &mut [f64]) {
        self.gates(x, &state.h, scratch);
        let hd = self.hidden;
        for j in 0..hd {
            let (i, f, g, o) = (scratch[j], scratch[hd + j], scratch[2 * hd + j], scratch[3 * hd + j]);
            state.c[j] = f * state.c[j] + i * g;
            state.h[j] = o * state.c[j].tanh();
        }
    }
}

/// One LSTM step:
/// `i, f, o = sigmoid(W x + U h + b)`, `g = tanh(W x + U h + b)`,
/// `c' = f * c + i * g`, `h' = o * tanh(c')`.
pub fn lstm_cell_forward(w: &LstmLayerWeights, x: &[f64], prev: &HiddenState) -> Result<HiddenState> {
    w.check_shape()?;
    if x.len() != w.input || prev.h.len() != w.hidden || prev.c.len() != w.hidden {
        return Err(Error::Shape(format!(
            "cell with H={}, I={} got x {}, h {}, c {}",
            w.hidden,
            w.input,
            x.len(),
            prev.h.len(),
            prev.c.len()
        )));
    }
    let mut next = prev.clone();
    let mut gates = vec![0.0; 4 * w.hidden];
    w.step_in_place(x, &mut next, &mut gates);
    Ok(next)
}

/// Everything the backward pass needs from a sequence of cell steps, stored
/// flat: step `t` owns `x[t*I..]`, `h_prev[t*H..]`, `gates[t*4H..]`, ...
#[derive(Debug, Clone, Default)]
pub(crate) struct SeqCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub gates: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

impl SeqCache {
    pub fn with_capacity(steps: usize, hidden: usize, input: usize) -> Self {
        SeqCache {
            x: Vec::with_capacity(steps * input),
            h_prev: Vec::with_capacity(steps * hidden),
            c_prev: Vec::with_capacity(steps * hidden),
            gates: Vec::with_capacity(steps * 4 * hidden),
            tanh_c: Vec::with_capacity(steps * hidden),
        }
    }
}

impl LstmLayerWeights {
    /// Step that records its intermediates into `cache`.
    pub(crate) fn step_cached(&self, x: &[f64], state: &mut HiddenState, cache: &mut SeqCache) {
        let hd = self.hidden;
        cache.x.extend_from_slice(x);
        cache.h_prev.extend_from_slice(&state.h);
        cache.c_prev.extend_from_slice(&state.c);
        let g0 = cache.gates.len();
        cache.gates.resize(g0 + 4 * hd, 0.0);
        self.gates(x, &state.h, &mut cache.gates[g0..]);
        let t0 = cache.tanh_c.len();
        cache.tanh_c.resize(t0 + hd, 0.0);
        let c_prev = &cache.c_prev[cache.c_prev.len() - hd..];
        self.update(&cache.gates[g0..], c_prev, &mut state.c, &mut cache.tanh_c[t0..], &mut state.h);
    }

    /// Backward through step `t` of `cache`. On entry `dh`, `dc` hold the
    /// loss gradient w.r.t. that step's outputs; on exit they hold the
    /// gradient w.r.t. its inputs `h_prev`, `c_prev`. `dx`, when given,
    /// receives the input gradient.
    pub(crate) fn step_backward(
        &self,
        cache: &SeqCache,
        t: usize,
        dh: &mut [f64],
        dc: &mut [f64],
        dx: Option<&mut [f64]>,
        grad: &mut LstmLayerWeights,
        dz: &mut [f64],
    ) {
        let (hd, inp) = (self.hidden, self.input);
        let gates = &cache.gates[t * 4 * hd..(t + 1) * 4 * hd];
        let tanh_c = &cache.tanh_c[t * hd..(t + 1) * hd];
        let c_prev = &cache.c_prev[t * hd..(t + 1) * hd];
        let x = &cache.x[t * inp..(t + 1) * inp];
        let h_prev = &cache.h_prev[t * hd..(t + 1) * hd];

        for j in 0..hd {
            let (i, f, g, o) = (gates[j], gates[hd + j], gates[2 * hd + j], gates[3 * hd + j]);
            let tc = tanh_c[j];
            let d_o = dh[j] * tc;
            let dct = dc[j] + dh[j] * o * (1.0 - tc * tc);
            dz[j] = dct * g * i * (1.0 - i);
            dz[hd + j] = dct * c_prev[j] * f * (1.0 - f);
            dz[2 * hd + j] = dct * i * (1.0 - g * g);
            dz[3 * hd + j] = d_o * o * (1.0 - o);
            dc[j] = dct * f;
        }

        dh.fill(0.0);
        let mut dx = dx;
        if let Some(dx) = dx.as_deref_mut() {
            dx.fill(0.0);
        }
        for r in 0..4 * hd {
            let d = dz[r];
            if d == 0.0 {
                continue;
            }
            grad.b[r] += d;
            axpy(d, x, &mut grad.w[r * inp..(r + 1) * inp]);
            axpy(d, h_prev, &mut grad.u[r * hd..(r + 1) * hd]);
            axpy(d, &self.u[r * hd..(r + 1) * hd], dh);
            if let Some(dx) = dx.as_deref_mut() {
                axpy(d, &self.w[r * inp..(r + 1) * inp], dx);
            }
        }
    }
}
