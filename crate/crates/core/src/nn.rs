//! Minimal feedforward neural-network engine: dense layers, Softplus
//! activation after every hidden layer, reverse-mode gradients, and Adam.
//!
//! Networks are small (a handful of layers, widths in the tens to hundreds),
//! so everything is dense `nalgebra` arithmetic with no fused kernels.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("input dimension mismatch: layer expects {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("stale tape: parameters changed since the forward pass")]
    StaleTape,
    #[error("parameter vector has length {got}, network has {expected}")]
    ParamLength { expected: usize, got: usize },
    #[error("corrupt network file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Numerically stable Softplus `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Derivative of Softplus: the logistic sigmoid.
pub fn softplus_prime(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    w: DMatrix<f64>,
    b: DVector<f64>,
}

/// Sequential dense network with Softplus on all layers except the last,
/// which stays linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
    version: u64,
}

/// Activation record from [`Mlp::forward`], consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct Tape {
    input: DVector<f64>,
    /// Pre-activation values per layer.
    pre: Vec<DVector<f64>>,
    /// Post-activation values per layer (last entry equals the output).
    post: Vec<DVector<f64>>,
    version: u64,
}

/// Per-parameter gradients mirroring the network layout.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    w: Vec<DMatrix<f64>>,
    b: Vec<DVector<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            w: net
                .layers
                .iter()
                .map(|l| DMatrix::zeros(l.w.nrows(), l.w.ncols()))
                .collect(),
            b: net.layers.iter().map(|l| DVector::zeros(l.b.len())).collect(),
        }
    }

    pub fn scale(&mut self, s: f64) {
        for w in &mut self.w {
            *w *= s;
        }
        for b in &mut self.b {
            *b *= s;
        }
    }

    pub fn add(&mut self, other: &MlpGrads) {
        for (a, b) in self.w.iter_mut().zip(&other.w) {
            *a += b;
        }
        for (a, b) in self.b.iter_mut().zip(&other.b) {
            *a += b;
        }
    }

    /// Flattens gradients in the same order as [`Mlp::params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.w.iter().zip(&self.b) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

impl Mlp {
    /// Builds a network for the given layer widths `[in, h1, ..., out]` with
    /// uniform Glorot initialization `U(+-sqrt(6/(fan_in+fan_out)))`.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Self {
        assert!(widths.len() >= 2, "need at least input and output widths");
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Dense {
                    w: DMatrix::from_fn(fan_out, fan_in, |_, _| {
                        rng.random_range(-bound..=bound)
                    }),
                    b: DVector::zeros(fan_out),
                }
            })
            .collect();
        Self { layers, version: 0 }
    }

    /// All-zero parameters, mostly for tests.
    pub fn zeros(widths: &[usize]) -> Self {
        assert!(widths.len() >= 2);
        let layers = widths
            .windows(2)
            .map(|w| Dense {
                w: DMatrix::zeros(w[1], w[0]),
                b: DVector::zeros(w[1]),
            })
            .collect();
        Self { layers, version: 0 }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().w.nrows()
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(|l| l.w.nrows()));
        w
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.w.len() + l.b.len())
            .sum()
    }

    /// Flattened parameters: per layer, `W` in column-major order then `b`.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<(), NnError> {
        if params.len() != self.n_params() {
            return Err(NnError::ParamLength {
                expected: self.n_params(),
                got: params.len(),
            });
        }
        let mut off = 0;
        for l in &mut self.layers {
            for v in l.w.iter_mut() {
                *v = params[off];
                off += 1;
            }
            for v in l.b.iter_mut() {
                *v = params[off];
                off += 1;
            }
        }
        self.version += 1;
        Ok(())
    }

    /// Forward pass, recording intermediates for [`Mlp::backward`].
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Tape), NnError> {
        if x.len() != self.input_dim() {
            return Err(NnError::ShapeMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let input = DVector::from_column_slice(x);
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len());
        let mut h = input.clone();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let z = &l.w * &h + &l.b;
            let a = if i < last { z.map(softplus) } else { z.clone() };
            pre.push(z);
            post.push(a.clone());
            h = a;
        }
        Ok((
            h.iter().copied().collect(),
            Tape {
                input,
                pre,
                post,
                version: self.version,
            },
        ))
    }

    /// Reverse-mode gradients of `output . grad_output` with respect to all
    /// weights, biases, and the input. Parameter gradients accumulate into
    /// `grads`; the gradient with respect to the input is returned.
    pub fn backward(
        &self,
        tape: &Tape,
        grad_output: &[f64],
        grads: &mut MlpGrads,
    ) -> Result<Vec<f64>, NnError> {
        if tape.version != self.version {
            return Err(NnError::StaleTape);
        }
        if grad_output.len() != self.output_dim() {
            return Err(NnError::ShapeMismatch {
                expected: self.output_dim(),
                got: grad_output.len(),
            });
        }
        let mut delta = DVector::from_column_slice(grad_output);
        for i in (0..self.layers.len()).rev() {
            // delta currently holds dL/d(post_i); fold in the activation.
            if i < self.layers.len() - 1 {
                let z = &tape.pre[i];
                for (d, &zv) in delta.iter_mut().zip(z.iter()) {
                    *d *= softplus_prime(zv);
                }
            }
            let prev = if i == 0 { &tape.input } else { &tape.post[i - 1] };
            grads.w[i] += &delta * prev.transpose();
            grads.b[i] += &delta;
            delta = self.layers[i].w.transpose() * delta;
        }
        Ok(delta.iter().copied().collect())
    }

    /// Writes the network in the flat binary format: magic, layer shapes,
    /// then little-endian f64 parameters (`W` column-major, then `b`).
    pub fn save<W: Write>(&self, out: &mut W) -> Result<(), NnError> {
        out.write_all(MAGIC)?;
        write_u32(out, self.layers.len() as u32)?;
        for l in &self.layers {
            write_u32(out, l.w.nrows() as u32)?;
            write_u32(out, l.w.ncols() as u32)?;
        }
        for l in &self.layers {
            for &v in l.w.iter() {
                out.write_all(&v.to_le_bytes())?;
            }
            for &v in l.b.iter() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load<R: Read>(input: &mut R) -> Result<Self, NnError> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(NnError::Format("bad magic".into()));
        }
        let n_layers = read_u32(input)? as usize;
        if n_layers == 0 || n_layers > 1024 {
            return Err(NnError::Format(format!("implausible layer count {n_layers}")));
        }
        let mut shapes = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let rows = read_u32(input)? as usize;
            let cols = read_u32(input)? as usize;
            shapes.push((rows, cols));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for (rows, cols) in shapes {
            let mut w = DMatrix::zeros(rows, cols);
            for v in w.iter_mut() {
                *v = read_f64(input)?;
            }
            let mut b = DVector::zeros(rows);
            for v in b.iter_mut() {
                *v = read_f64(input)?;
            }
            layers.push(Dense { w, b });
        }
        for pair in layers.windows(2) {
            if pair[1].w.ncols() != pair[0].w.nrows() {
                return Err(NnError::Format("layer shapes do not compose".into()));
            }
        }
        Ok(Self { layers, version: 0 })
    }
}

const MAGIC: &[u8; 8] = b"LSBOMLP1";

fn write_u32<W: Write>(out: &mut W, v: u32) -> std::io::Result<()> {
    out.write_all(&v.to_le_bytes())
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32, NnError> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64<R: Read>(input: &mut R) -> Result<f64, NnError> {
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

/// Adam optimizer state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update, in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), NnError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(NnError::ParamLength {
                expected: self.m.len(),
                got: params.len().max(grads.len()),
            });
        }
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softplus_values_and_stability() {
        assert_abs_diff_eq!(softplus(0.0), std::f64::consts::LN_2, epsilon = 1e-15);
        assert_abs_diff_eq!(softplus(50.0), 50.0, epsilon = 1e-12);
        assert!(softplus(800.0).is_finite());
        assert!(softplus(-800.0) >= 0.0);
    }

    #[test]
    fn softplus_derivative_matches_finite_differences() {
        let h = 1e-6;
        for i in 0..20 {
            let x = -5.0 + 0.5 * i as f64;
            let fd = (softplus(x + h) - softplus(x - h)) / (2.0 * h);
            assert_abs_diff_eq!(softplus_prime(x), fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[3, 4, 2]);
        let (y, _) = net.forward(&[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(y, vec![0.0, 0.0]);
    }

    #[test]
    fn single_linear_identity_layer_passes_input_through() {
        let mut net = Mlp::zeros(&[3, 3]);
        let mut p = net.params();
        // W = I in column-major layout.
        for i in 0..3 {
            p[i * 3 + i] = 1.0;
        }
        net.set_params(&p).unwrap();
        let x = [0.2, -1.5, 3.0];
        let (y, _) = net.forward(&x).unwrap();
        assert_eq!(y, x.to_vec());
    }

    #[test]
    fn forward_matches_scripted_two_layer_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let net = Mlp::new(&[2, 3, 2], &mut rng);
        let x = [0.7, -0.3];
        let (y, _) = net.forward(&x).unwrap();

        // Independent scripted forward pass over the flattened parameters.
        let p = net.params();
        let (w1, rest) = p.split_at(6);
        let (b1, rest) = rest.split_at(3);
        let (w2, b2) = rest.split_at(6);
        let mut h = [0.0_f64; 3];
        for r in 0..3 {
            // column-major: w1[c * 3 + r]
            let z = b1[r] + w1[r] * x[0] + w1[3 + r] * x[1];
            h[r] = softplus(z);
        }
        for r in 0..2 {
            let z = b2[r] + w2[r] * h[0] + w2[2 + r] * h[1] + w2[4 + r] * h[2];
            assert_abs_diff_eq!(y[r], z, epsilon = 1e-12);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = Mlp::new(&[4, 6, 3], &mut rng);
        let x = [0.1, 0.2, 0.3, 0.4];
        let (a, _) = net.forward(&x).unwrap();
        let (b, _) = net.forward(&x).unwrap();
        assert_eq!(a, b);
    }

    fn loss(net: &Mlp, x: &[f64], g: &[f64]) -> f64 {
        let (y, _) = net.forward(x).unwrap();
        y.iter().zip(g).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn backward_matches_central_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for trial in 0..10 {
            let net = Mlp::new(&[3, 5, 4, 2], &mut rng);
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (_, tape) = net.forward(&x).unwrap();
            let mut grads = MlpGrads::zeros_like(&net);
            let gx = net.backward(&tape, &g, &mut grads).unwrap();
            let flat = grads.flatten();

            let h = 1e-5;
            let mut net_mut = net.clone();
            let base_params = net.params();
            let mut max_rel: f64 = 0.0;
            for i in 0..base_params.len() {
                let mut p = base_params.clone();
                p[i] += h;
                net_mut.set_params(&p).unwrap();
                let fp = loss(&net_mut, &x, &g);
                p[i] -= 2.0 * h;
                net_mut.set_params(&p).unwrap();
                let fm = loss(&net_mut, &x, &g);
                let fd = (fp - fm) / (2.0 * h);
                let denom = fd.abs().max(flat[i].abs()).max(1e-6);
                max_rel = max_rel.max((fd - flat[i]).abs() / denom);
            }
            // Input gradient check.
            for i in 0..x.len() {
                let mut xp = x.clone();
                xp[i] += h;
                let fp = loss(&net, &xp, &g);
                xp[i] -= 2.0 * h;
                let fm = loss(&net, &xp, &g);
                let fd = (fp - fm) / (2.0 * h);
                let denom = fd.abs().max(gx[i].abs()).max(1e-6);
                max_rel = max_rel.max((fd - gx[i]).abs() / denom);
            }
            assert!(max_rel < 1e-4, "trial {trial}: max relative error {max_rel}");
        }
    }

    #[test]
    fn zero_grad_output_yields_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Mlp::new(&[2, 3, 2], &mut rng);
        let (_, tape) = net.forward(&[0.4, 0.6]).unwrap();
        let mut grads = MlpGrads::zeros_like(&net);
        let gx = net.backward(&tape, &[0.0, 0.0], &mut grads).unwrap();
        assert!(grads.flatten().iter().all(|&v| v == 0.0));
        assert!(gx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_layer_gradient_is_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = Mlp::new(&[3, 2], &mut rng);
        let x = [1.0, 2.0, -1.0];
        let g = [0.5, -0.25];
        let (_, tape) = net.forward(&x).unwrap();
        let mut grads = MlpGrads::zeros_like(&net);
        net.backward(&tape, &g, &mut grads).unwrap();
        for r in 0..2 {
            for c in 0..3 {
                assert_abs_diff_eq!(grads.w[0][(r, c)], g[r] * x[c], epsilon = 1e-15);
            }
            assert_abs_diff_eq!(grads.b[0][r], g[r], epsilon = 1e-15);
        }
    }

    #[test]
    fn stale_tape_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut net = Mlp::new(&[2, 2], &mut rng);
        let (_, tape) = net.forward(&[0.1, 0.2]).unwrap();
        let p = net.params();
        net.set_params(&p).unwrap(); // bumps the version
        let mut grads = MlpGrads::zeros_like(&net);
        assert!(matches!(
            net.backward(&tape, &[1.0, 0.0], &mut grads),
            Err(NnError::StaleTape)
        ));
    }

    #[test]
    fn adam_zero_gradient_and_zero_lr_are_identities() {
        let mut params = vec![1.0, -2.0, 3.0];
        let snapshot = params.clone();
        let mut adam = AdamState::new(3, 1e-3);
        adam.step(&mut params, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(params, snapshot);

        let mut adam0 = AdamState::new(3, 0.0);
        adam0.step(&mut params, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(params, snapshot);
    }

    #[test]
    fn adam_first_step_is_bias_corrected() {
        // With constant gradient g and t = 1: m_hat = g, v_hat = g^2, so the
        // update is -lr * g / (|g| + eps) for every coordinate.
        let lr = 1e-3;
        let g = [0.5, -2.0];
        let mut params = vec![0.0, 0.0];
        let mut adam = AdamState::new(2, lr);
        adam.step(&mut params, &g).unwrap();
        for (p, &gi) in params.iter().zip(&g) {
            let expected = -lr * gi / (gi.abs() + 1e-8);
            assert_abs_diff_eq!(*p, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn adam_is_deterministic_from_snapshots() {
        let mut a = AdamState::new(2, 1e-2);
        let mut b = a.clone();
        let mut pa = vec![0.3, 0.4];
        let mut pb = pa.clone();
        a.step(&mut pa, &[0.1, -0.2]).unwrap();
        b.step(&mut pb, &[0.1, -0.2]).unwrap();
        assert_eq!(pa, pb);
    }

    #[test]
    fn save_load_round_trip_is_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let net = Mlp::new(&[5, 4, 3], &mut rng);
        let mut buf = Vec::new();
        net.save(&mut buf).unwrap();
        let loaded = Mlp::load(&mut buf.as_slice()).unwrap();
        assert_eq!(net.params(), loaded.params());
        assert_eq!(net.widths(), loaded.widths());
        let x = [0.1, 0.2, 0.3, 0.4, 0.5];
        assert_eq!(net.forward(&x).unwrap().0, loaded.forward(&x).unwrap().0);
    }
}
