//! Finite-difference verification of the analytic gradient.
//!
//! The central differences are taken on a separate double-double forward
//! pass. In plain `f64` the difference of two nearly equal losses carries
//! about `1e-16 * loss / eps` of rounding noise, which swamps the relative
//! error of the smallest gradient entries; with double-double arithmetic
//! only the `O(eps^2)` truncation error remains.

use twofloat::TwoFloat;

use super::model::{LstmEdModel, TENSOR_NAMES};
use super::train::loss_gradient;
use crate::error::Result;
use crate::synthdrive::{N_FEATURES, N_OUTPUTS};

type D = TwoFloat;

/// `|a - n| / max(|a| + |n|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-12)
}

/// Largest relative error between analytic and central-difference
/// gradients, per tensor in [`TENSOR_NAMES`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub per_tensor: [(&'static str, f64); 10],
    pub max_rel_error: f64,
    /// Largest `|analytic - numeric|` over all entries.
    pub max_abs_error: f64,
}

/// Compares every analytic gradient entry of the evaluation-mode window
/// loss against a central difference with step `eps`.
pub fn grad_check(
    model: &LstmEdModel,
    x: &[[f64; N_FEATURES]],
    y: &[[f64; N_OUTPUTS]],
    eps: f64,
) -> Result<GradCheck> {
    grad_check_with(model, x, y, eps, |_| {})
}

/// [`grad_check`] with a hook that may alter the analytic gradient before
/// the comparison, for exercising the check itself.
pub fn grad_check_with(
    model: &LstmEdModel,
    x: &[[f64; N_FEATURES]],
    y: &[[f64; N_OUTPUTS]],
    eps: f64,
    tamper: impl FnOnce(&mut LstmEdModel),
) -> Result<GradCheck> {
    let (_, mut grad) = loss_gradient(model, x, y)?;
    tamper(&mut grad);
    let mut probe = WideModel::new(model);
    let encoded = probe.encode(x);
    let mut per_tensor = TENSOR_NAMES.map(|n| (n, 0.0));
    let mut max_abs_error: f64 = 0.0;
    for (ti, ga) in grad.tensors().iter().enumerate() {
        // only the first three tensors belong to the encoder
        let loss = |p: &WideModel| {
            if ti < 3 {
                p.loss(x, y)
            } else {
                p.decode_loss(encoded.clone(), x, y)
            }
        };
        for (j, &a) in ga.iter().enumerate() {
            let orig = probe.tensors[ti][j];
            probe.tensors[ti][j] = orig + eps;
            let up = loss(&probe);
            probe.tensors[ti][j] = orig - eps;
            let down = loss(&probe);
            probe.tensors[ti][j] = orig;
            let numeric = ((up - down) / (2.0 * eps)).hi();
            per_tensor[ti].1 = f64::max(per_tensor[ti].1, relative_error(a, numeric));
            max_abs_error = max_abs_error.max((a - numeric).abs());
        }
    }
    let max_rel_error = per_tensor.iter().map(|p| p.1).fold(0.0, f64::max);
    Ok(GradCheck {
        per_tensor,
        max_rel_error,
        max_abs_error,
    })
}

/// Double-double copy of a model, tensors in [`TENSOR_NAMES`] order.
struct WideModel {
    tensors: Vec<Vec<D>>,
    hidden: usize,
    n_p: usize,
}

/// `e^x` to double-double accuracy: `x = k ln2 + r`, then a Taylor series
/// on `r / 2^8` squared back up. twofloat's own `exp` is only good to
/// about `1e-13`.
fn exp(x: D) -> D {
    const HALVINGS: i32 = 8;
    let k = (x.hi() / std::f64::consts::LN_2).round();
    let r = (x - twofloat::consts::LN_2 * k) / f64::powi(2.0, HALVINGS);
    let mut term = D::from(1.0);
    let mut sum = D::from(1.0);
    // |r| < 1.4e-3, so ten terms reach 1e-35
    for n in 1..=10 {
        term = term * r / n as f64;
        sum += term;
    }
    for _ in 0..HALVINGS {
        sum = sum * sum;
    }
    sum * f64::powi(2.0, k as i32)
}

/// `a / b` by long division with two remainder corrections; twofloat's
/// `TwoFloat / TwoFloat` is only accurate to about `1e-17`.
fn div(a: D, b: D) -> D {
    let q1 = a.hi() / b.hi();
    let r = a - b * q1;
    let q2 = r.hi() / b.hi();
    let r = r - b * q2;
    let q3 = r.hi() / b.hi();
    D::from(q1) + q2 + q3
}

fn sigmoid(z: D) -> D {
    div(D::from(1.0), exp(-z) + 1.0)
}

fn tanh(z: D) -> D {
    // tanh(z) = (1 - e^{-2|z|}) / (1 + e^{-2|z|}), sign restored
    let e = exp(z.abs() * -2.0);
    let t = div(-e + 1.0, e + 1.0);
    if z.hi() < 0.0 {
        -t
    } else {
        t
    }
}

impl WideModel {
    fn new(m: &LstmEdModel) -> Self {
        WideModel {
            tensors: m.tensors().iter().map(|t| t.iter().map(|&v| D::from(v)).collect()).collect(),
            hidden: m.decoder.hidden,
            n_p: m.config.n_p,
        }
    }

    fn step(&self, layer: usize, x: &[D], h: &mut [D], c: &mut [D]) {
        let hd = self.hidden;
        let inp = x.len();
        let (w, u, b) = (
            &self.tensors[3 * layer],
            &self.tensors[3 * layer + 1],
            &self.tensors[3 * layer + 2],
        );
        let mut z = vec![D::from(0.0); 4 * hd];
        for (r, zr) in z.iter_mut().enumerate() {
            let mut acc = b[r];
            for k in 0..inp {
                acc += w[r * inp + k] * x[k];
            }
            for k in 0..hd {
                acc += u[r * hd + k] * h[k];
            }
            *zr = acc;
        }
        for j in 0..hd {
            let i = sigmoid(z[j]);
            let f = sigmoid(z[hd + j]);
            let g = tanh(z[2 * hd + j]);
            let o = sigmoid(z[3 * hd + j]);
            c[j] = f * c[j] + i * g;
            h[j] = o * tanh(c[j]);
        }
    }

    fn linear(&self, wi: usize, x: &[D], out: usize) -> Vec<D> {
        let (w, b) = (&self.tensors[wi], &self.tensors[wi + 1]);
        let inp = x.len();
        (0..out)
            .map(|r| {
                let mut acc = b[r];
                for k in 0..inp {
                    acc += w[r * inp + k] * x[k];
                }
                acc
            })
            .collect()
    }

    fn encode(&self, x: &[[f64; N_FEATURES]]) -> (Vec<D>, Vec<D>) {
        let hd = self.hidden;
        let mut h = vec![D::from(0.0); hd];
        let mut c = vec![D::from(0.0); hd];
        for row in x {
            let xr: Vec<D> = row.iter().map(|&v| D::from(v)).collect();
            self.step(0, &xr, &mut h, &mut c);
        }
        (h, c)
    }

    fn loss(&self, x: &[[f64; N_FEATURES]], y: &[[f64; N_OUTPUTS]]) -> D {
        self.decode_loss(self.encode(x), x, y)
    }

    fn decode_loss(&self, (mut h, mut c): (Vec<D>, Vec<D>), x: &[[f64; N_FEATURES]], y: &[[f64; N_OUTPUTS]]) -> D {
        let last = x[x.len() - 1];
        let mut prev: Vec<D> = crate::synthdrive::OUTPUT_CHANNELS.iter().map(|&ch| D::from(last[ch])).collect();
        let mut sum = D::from(0.0);
        for target in y.iter().take(self.n_p) {
            let inp = self.linear(8, &prev, N_FEATURES);
            self.step(1, &inp, &mut h, &mut c);
            let out = self.linear(6, &h, N_OUTPUTS);
            for (o, t) in out.iter().zip(target) {
                let d = *o - *t;
                sum += d * d;
            }
            prev = out;
        }
        sum / (y.len() * N_OUTPUTS) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqnet::train::window_loss;
    use crate::seqnet::LstmEdConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

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
    fn wide_forward_agrees_with_f64_forward() {
        let m = LstmEdModel::new(small(7, 4, 5), 3).unwrap();
        let (x, y) = sample(7, 4, 4);
        let wide = WideModel::new(&m).loss(&x, &y).hi();
        let narrow = window_loss(&m, &x, &y).unwrap();
        assert!((wide - narrow).abs() < 1e-14 * narrow, "{wide} vs {narrow}");
        for v in [-30.0, -1.0, -1e-3, 0.0, 0.4, 2.5, 20.0] {
            let e = exp(D::from(v)).hi();
            assert!((e - f64::exp(v)).abs() <= 2.0 * f64::EPSILON * f64::exp(v), "exp({v})");
        }
        let one = exp(D::from(1.0));
        assert!((one - twofloat::consts::E).abs().hi() < 1e-30);
        for a in [0.3, -2.2, 5.0] {
            let x = D::from(a) + 1e-20;
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs().hi() < 1e-29);
            let e2 = exp(x * 2.0);
            assert!((tanh(x) - div(e2 - 1.0, e2 + 1.0)).abs().hi() < 1e-29);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..3 {
            let m = LstmEdModel::new(small(6, 4, 5), seed).unwrap();
            let (x, y) = sample(6, 4, 100 + seed);
            let gc = grad_check(&m, &x, &y, 1e-5).unwrap();
            assert!(gc.max_rel_error < 1e-5, "{:?}", gc.per_tensor);
        }
    }

    #[test]
    fn doubled_gradient_is_caught() {
        let m = LstmEdModel::new(small(4, 3, 3), 1).unwrap();
        let (x, y) = sample(4, 3, 2);
        let gc = grad_check_with(&m, &x, &y, 1e-5, |g| g.head.b[0] *= 2.0).unwrap();
        assert!((gc.per_tensor[7].1 - 1.0 / 3.0).abs() < 1e-6, "{:?}", gc.per_tensor[7]);
        assert!(gc.per_tensor[0].1 < 1e-5);
        assert_eq!(relative_error(2.0, 1.0), 1.0 / 3.0);
        assert_eq!(relative_error(0.0, 0.0), 0.0);
    }

    #[test]
    fn zero_loss_point_has_zero_gradient() {
        let m = LstmEdModel::new(small(5, 3, 4), 2).unwrap();
        let (x, _) = sample(5, 3, 3);
        let y = m.forward(&x).unwrap();
        let (loss, g) = loss_gradient(&m, &x, &y).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.tensors().iter().all(|t| t.iter().all(|v| *v == 0.0)));
        // central differences at a minimum are O(eps^2), not zero
        let gc = grad_check(&m, &x, &y, 1e-5).unwrap();
        assert!(gc.max_abs_error < 1e-9, "{}", gc.max_abs_error);
    }
}
