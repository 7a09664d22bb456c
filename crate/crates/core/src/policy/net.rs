//! Residual tanh MLP with hand-written backpropagation over a flat
//! parameter vector.
//!
//! ```text
//! h_0     = tanh(W_in x + b_in)
//! h_{k+1} = h_k + W2_k tanh(W1_k h_k + b1_k) + b2_k
//! out     = W_out h_L + b_out
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::rng::{self, domain};

/// Which output head the network carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// Two outputs: action mean and raw (pre-softplus) scale.
    Policy,
    /// One output: state value.
    Value,
}

impl Head {
    pub fn output_dim(self) -> usize {
        match self {
            Head::Policy => 2,
            Head::Value => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSpec {
    pub input_dim: usize,
    pub hidden_width: usize,
    pub n_residual_blocks: usize,
    pub head: Head,
}

impl NetSpec {
    pub fn new(hidden_width: usize, n_residual_blocks: usize, head: Head) -> Self {
        Self { input_dim: 3, hidden_width, n_residual_blocks, head }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.input_dim >= 1, Validation, "input_dim must be >= 1");
        ensure!(self.hidden_width >= 1, Validation, "hidden_width must be >= 1");
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }

    pub(crate) fn layout(&self) -> Layout {
        let (d, h, o) = (self.input_dim, self.hidden_width, self.head.output_dim());
        let w_in = 0;
        let b_in = h * d;
        let blocks_start = b_in + h;
        let block_len = 2 * (h * h + h);
        let w_out = blocks_start + self.n_residual_blocks * block_len;
        let b_out = w_out + o * h;
        Layout { w_in, b_in, blocks_start, block_len, w_out, b_out, total: b_out + o }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BlockLayout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    w_in: usize,
    b_in: usize,
    blocks_start: usize,
    block_len: usize,
    w_out: usize,
    b_out: usize,
    total: usize,
}

impl Layout {
    fn block(&self, k: usize, h: usize) -> BlockLayout {
        let w1 = self.blocks_start + k * self.block_len;
        BlockLayout { w1, b1: w1 + h * h, w2: w1 + h * h + h, b2: w1 + 2 * h * h + h }
    }
}

/// Network weights: the architecture plus one flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetParams {
    pub spec: NetSpec,
    pub theta: Vec<f64>,
    pub init_seed: u64,
}

/// Activations of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: [f64; MAX_INPUT],
    /// Hidden states `h_0..=h_L`, then block activations `a_0..a_{L-1}`,
    /// each `hidden_width` long.
    acts: Vec<f64>,
    pub output: [f64; 2],
}

const MAX_INPUT: usize = 8;

fn matvec_add(w: &[f64], rows: usize, cols: usize, x: &[f64], bias: &[f64], out: &mut [f64]) {
    for i in 0..rows {
        let row = &w[i * cols..(i + 1) * cols];
        out[i] = bias[i] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

impl NetParams {
    /// Glorot-uniform hidden layers, residual output layers scaled by 1/2,
    /// zero biases. The output head is zero when `zero_head` is set.
    pub fn init(spec: NetSpec, seed: u64, zero_head: bool) -> Result<Self> {
        spec.validate()?;
        ensure!(spec.input_dim <= MAX_INPUT, Validation, "input_dim must be <= {MAX_INPUT}");
        let lay = spec.layout();
        let (d, h, o) = (spec.input_dim, spec.hidden_width, spec.head.output_dim());
        let mut theta = vec![0.0; lay.total];
        let mut rng = rng::stream(seed, domain::NET_INIT, spec.head.output_dim() as u64);
        let mut fill = |slice: &mut [f64], fan_in: usize, fan_out: usize, scale: f64| {
            let lim = scale * (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in slice.iter_mut() {
                *w = rng.gen_range(-lim..lim);
            }
        };
        fill(&mut theta[lay.w_in..lay.w_in + h * d], d, h, 1.0);
        for k in 0..spec.n_residual_blocks {
            let b = lay.block(k, h);
            fill(&mut theta[b.w1..b.w1 + h * h], h, h, 1.0);
            fill(&mut theta[b.w2..b.w2 + h * h], h, h, 0.5);
        }
        if !zero_head {
            fill(&mut theta[lay.w_out..lay.w_out + o * h], h, o, 1.0);
        }
        Ok(Self { spec, theta, init_seed: seed })
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardCache> {
        ensure!(
            x.len() == self.spec.input_dim,
            Validation,
            "expected {} features, got {}",
            self.spec.input_dim,
            x.len()
        );
        Ok(self.forward_unchecked(x))
    }

    pub(crate) fn forward_unchecked(&self, x: &[f64]) -> ForwardCache {
        let lay = self.spec.layout();
        let (d, h, o) = (self.spec.input_dim, self.spec.hidden_width, self.spec.head.output_dim());
        let n_blocks = self.spec.n_residual_blocks;
        let t = &self.theta;
        let mut acts = vec![0.0; (2 * n_blocks + 1) * h];
        let (hidden, inner) = acts.split_at_mut((n_blocks + 1) * h);
        matvec_add(&t[lay.w_in..], h, d, x, &t[lay.b_in..lay.b_in + h], &mut hidden[..h]);
        hidden[..h].iter_mut().for_each(|v| *v = v.tanh());
        for k in 0..n_blocks {
            let b = lay.block(k, h);
            let (done, rest) = hidden.split_at_mut((k + 1) * h);
            let prev = &done[k * h..];
            let a = &mut inner[k * h..(k + 1) * h];
            matvec_add(&t[b.w1..], h, h, prev, &t[b.b1..b.b1 + h], a);
            a.iter_mut().for_each(|v| *v = v.tanh());
            let next = &mut rest[..h];
            matvec_add(&t[b.w2..], h, h, a, &t[b.b2..b.b2 + h], next);
            next.iter_mut().zip(prev).for_each(|(n, p)| *n += p);
        }
        let mut output = [0.0; 2];
        let top = &hidden[n_blocks * h..];
        matvec_add(&t[lay.w_out..], o, h, top, &t[lay.b_out..lay.b_out + o], &mut output[..o]);
        let mut input = [0.0; MAX_INPUT];
        input[..d].copy_from_slice(x);
        ForwardCache { input, acts, output }
    }

    /// Adds `d(output . g_out)/d theta` into `grad`.
    pub fn backward(&self, cache: &ForwardCache, g_out: &[f64], grad: &mut [f64]) {
        let lay = self.spec.layout();
        let (d, h, o) = (self.spec.input_dim, self.spec.hidden_width, self.spec.head.output_dim());
        let n_blocks = self.spec.n_residual_blocks;
        let t = &self.theta;
        let (hidden, inner) = cache.acts.split_at((n_blocks + 1) * h);
        let top = &hidden[n_blocks * h..];
        let mut g_h = vec![0.0; h];
        let mut g_pre = vec![0.0; h];
        for k in 0..o {
            let go = g_out[k];
            if go == 0.0 {
                continue;
            }
            grad[lay.b_out + k] += go;
            let row = lay.w_out + k * h;
            for j in 0..h {
                grad[row + j] += go * top[j];
                g_h[j] += go * t[row + j];
            }
        }
        for idx in (0..n_blocks).rev() {
            let b = lay.block(idx, h);
            let a = &inner[idx * h..(idx + 1) * h];
            let h_in = &hidden[idx * h..(idx + 1) * h];
            g_pre.iter_mut().for_each(|g| *g = 0.0);
            for i in 0..h {
                let gi = g_h[i];
                grad[b.b2 + i] += gi;
                let row = b.w2 + i * h;
                for j in 0..h {
                    grad[row + j] += gi * a[j];
                    g_pre[j] += gi * t[row + j];
                }
            }
            for j in 0..h {
                g_pre[j] *= 1.0 - a[j] * a[j];
            }
            for i in 0..h {
                let gi = g_pre[i];
                if gi == 0.0 {
                    continue;
                }
                grad[b.b1 + i] += gi;
                let row = b.w1 + i * h;
                for j in 0..h {
                    grad[row + j] += gi * h_in[j];
                    g_h[j] += gi * t[row + j];
                }
            }
        }
        let h0 = &hidden[..h];
        for i in 0..h {
            let gz = g_h[i] * (1.0 - h0[i] * h0[i]);
            grad[lay.b_in + i] += gz;
            let row = lay.w_in + i * d;
            for j in 0..d {
                grad[row + j] += gz * cache.input[j];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count_is_a_function_of_the_spec() {
        let spec = NetSpec::new(64, 2, Head::Policy);
        assert_eq!(spec.param_count(), 64 * 3 + 64 + 2 * (2 * (64 * 64 + 64)) + 2 * 64 + 2);
        let p = NetParams::init(spec, 1, true).unwrap();
        assert_eq!(p.theta.len(), spec.param_count());
        assert_eq!(NetSpec::new(8, 0, Head::Value).param_count(), 8 * 3 + 8 + 8 + 1);
    }

    #[test]
    fn zero_head_outputs_zero() {
        let p = NetParams::init(NetSpec::new(16, 2, Head::Policy), 3, true).unwrap();
        let out = p.forward(&[0.3, -1.2, 0.5]).unwrap().output;
        assert_eq!(out, [0.0, 0.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let p = NetParams::init(NetSpec::new(4, 1, Head::Value), 3, true).unwrap();
        assert!(p.forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let spec = NetSpec::new(6, 2, Head::Policy);
        let p = NetParams::init(spec, 9, false).unwrap();
        let x = [0.4, -0.7, 0.2];
        let g_out = [0.8, -1.3];
        let mut grad = vec![0.0; spec.param_count()];
        p.backward(&p.forward(&x).unwrap(), &g_out, &mut grad);
        let f = |theta: &[f64]| {
            let q = NetParams { theta: theta.to_vec(), ..p.clone() };
            let out = q.forward(&x).unwrap().output;
            out[0] * g_out[0] + out[1] * g_out[1]
        };
        let h = 1e-6;
        for i in 0..spec.param_count() {
            let mut up = p.theta.clone();
            let mut dn = p.theta.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (f(&up) - f(&dn)) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-7, "param {i}: fd {fd} vs {}", grad[i]);
        }
    }
}
