//! Toy residual networks from the theory sections.
//!
//! Activations are stored as row-major `N × B` matrices: one column per
//! example, so a block is `H ← H + s·W·φ(H)` with plain matrix products.

use crate::tensor::{fill_gaussian, gemm, MatMut, MatRef, RngStream};

fn matmul_nb(w: &[f64], n_out: usize, n_in: usize, h: &[f64], b: usize, out: &mut [f64], beta: f64) {
    gemm(1.0, MatRef::new(w, n_out, n_in), MatRef::new(h, n_in, b), beta, MatMut::new(out, n_out, b));
}

fn matmul_tn(w: &[f64], n_out: usize, n_in: usize, g: &[f64], b: usize, out: &mut [f64]) {
    gemm(1.0, MatRef::new(w, n_out, n_in).t(), MatRef::new(g, n_out, b), 0.0, MatMut::new(out, n_in, b));
}

/// Linear residual network with two matrices per branch:
/// `h^{ℓ+1} = h^ℓ + s·W₂^ℓ W₁^ℓ h^ℓ` with `s = L^{−α}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyLinearResNet {
    pub width: usize,
    pub depth: usize,
    /// Branch exponent; `0` gives the unscaled (muP) network.
    pub alpha: f64,
    pub w1: Vec<Vec<f64>>,
    pub w2: Vec<Vec<f64>>,
}

impl ToyLinearResNet {
    pub fn new(width: usize, alpha: f64, w1: Vec<Vec<f64>>, w2: Vec<Vec<f64>>) -> Self {
        assert_eq!(w1.len(), w2.len(), "W1 has {} blocks, W2 has {}", w1.len(), w2.len());
        for w in w1.iter().chain(&w2) {
            assert_eq!(w.len(), width * width, "block matrix has {} entries, expected {width}x{width}", w.len());
        }
        ToyLinearResNet { width, depth: w1.len(), alpha, w1, w2 }
    }

    /// Weights with i.i.d. `N(0, 1/N)` entries, one RNG stream per block.
    pub fn init(width: usize, depth: usize, alpha: f64, seed: u64) -> Self {
        let (w1, w2) = (0..depth).map(|k| Self::block_weights(width, seed, k)).unzip();
        ToyLinearResNet { width, depth, alpha, w1, w2 }
    }

    /// `(W₁^k, W₂^k)` as drawn by [`ToyLinearResNet::init`]; lets callers
    /// regenerate a single block without materializing the network.
    pub fn block_weights(width: usize, seed: u64, block: usize) -> (Vec<f64>, Vec<f64>) {
        let mut rng = RngStream::new(seed, block as u64).rng();
        let std = 1.0 / (width as f64).sqrt();
        let mut w1 = vec![0.0; width * width];
        let mut w2 = vec![0.0; width * width];
        fill_gaussian(&mut rng, &mut w1, std);
        fill_gaussian(&mut rng, &mut w2, std);
        (w1, w2)
    }

    pub fn branch_scale(&self) -> f64 {
        (self.depth as f64).powf(-self.alpha)
    }

    /// One block applied to `h` (`N × B`), written into `out`.
    pub fn block(width: usize, scale: f64, w1: &[f64], w2: &[f64], h: &[f64], batch: usize, out: &mut [f64]) {
        let mut t = vec![0.0; width * batch];
        matmul_nb(w1, width, width, h, batch, &mut t, 0.0);
        out.copy_from_slice(h);
        gemm(scale, MatRef::new(w2, width, width), MatRef::new(&t, width, batch), 1.0, MatMut::new(out, width, batch));
    }

    /// All hidden states `h^0..h^L` for input `h0` (`N × B`).
    pub fn forward(&self, h0: &[f64], batch: usize) -> Vec<Vec<f64>> {
        let s = self.branch_scale();
        let mut hs = vec![h0.to_vec()];
        for k in 0..self.depth {
            let mut next = vec![0.0; h0.len()];
            Self::block(self.width, s, &self.w1[k], &self.w2[k], &hs[k], batch, &mut next);
            hs.push(next);
        }
        hs
    }

    /// Gradient of `Σ g_out ⊙ h^{ℓ+1}` with respect to `(W₁^ℓ, W₂^ℓ)` given
    /// block input `h` and output gradient `g_out`.
    pub fn block_grads(&self, layer: usize, h: &[f64], g_out: &[f64], batch: usize) -> (Vec<f64>, Vec<f64>) {
        let n = self.width;
        let s = self.branch_scale();
        let mut w1h = vec![0.0; n * batch];
        matmul_nb(&self.w1[layer], n, n, h, batch, &mut w1h, 0.0);
        let mut w2tg = vec![0.0; n * batch];
        matmul_tn(&self.w2[layer], n, n, g_out, batch, &mut w2tg);
        let mut d1 = vec![0.0; n * n];
        let mut d2 = vec![0.0; n * n];
        gemm(s, MatRef::new(&w2tg, n, batch), MatRef::new(h, n, batch).t(), 0.0, MatMut::new(&mut d1, n, n));
        gemm(s, MatRef::new(g_out, n, batch), MatRef::new(&w1h, n, batch).t(), 0.0, MatMut::new(&mut d2, n, n));
        (d1, d2)
    }

    /// First-order change of block `layer`'s output for weight changes
    /// `(ΔW₁, ΔW₂)`: `s·(W₂ ΔW₁ h + ΔW₂ W₁ h)`.
    pub fn block_linear_change(&self, layer: usize, h: &[f64], batch: usize, dw1: &[f64], dw2: &[f64]) -> Vec<f64> {
        let n = self.width;
        let s = self.branch_scale();
        let mut t = vec![0.0; n * batch];
        matmul_nb(dw1, n, n, h, batch, &mut t, 0.0);
        let mut out = vec![0.0; n * batch];
        gemm(s, MatRef::new(&self.w2[layer], n, n), MatRef::new(&t, n, batch), 0.0, MatMut::new(&mut out, n, batch));
        matmul_nb(&self.w1[layer], n, n, h, batch, &mut t, 0.0);
        gemm(s, MatRef::new(dw2, n, n), MatRef::new(&t, n, batch), 1.0, MatMut::new(&mut out, n, batch));
        out
    }

    /// Second-order (and last) term of the block's Taylor expansion: `s·ΔW₂ ΔW₁ h`.
    pub fn block_quadratic_change(&self, h: &[f64], batch: usize, dw1: &[f64], dw2: &[f64]) -> Vec<f64> {
        let n = self.width;
        let mut t = vec![0.0; n * batch];
        matmul_nb(dw1, n, n, h, batch, &mut t, 0.0);
        let mut out = vec![0.0; n * batch];
        gemm(
            self.branch_scale(),
            MatRef::new(dw2, n, n),
            MatRef::new(&t, n, batch),
            0.0,
            MatMut::new(&mut out, n, batch),
        );
        out
    }
}

/// ReLU residual MLP with one matrix per branch:
/// `h^{ℓ+1} = h^ℓ + s·(W^ℓ φ(h^ℓ) + b^ℓ)` with `s = L^{−α}` and `W ~ N(0, σ_W²/N)`.
/// Biases start at zero and are optional.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyReluResMLP {
    pub width: usize,
    pub depth: usize,
    pub alpha: f64,
    pub sigma_w: f64,
    pub weights: Vec<Vec<f64>>,
    pub biases: Option<Vec<Vec<f64>>>,
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Saved activations of a [`ToyReluResMLP`] forward pass.
#[derive(Debug, Clone)]
pub struct ReluTrace {
    pub hs: Vec<Vec<f64>>,
    pub batch: usize,
}

impl ToyReluResMLP {
    pub fn init(width: usize, depth: usize, alpha: f64, sigma_w: f64, with_bias: bool, seed: u64) -> Self {
        let std = sigma_w / (width as f64).sqrt();
        let weights = (0..depth)
            .map(|k| {
                let mut w = vec![0.0; width * width];
                fill_gaussian(&mut RngStream::new(seed, k as u64).rng(), &mut w, std);
                w
            })
            .collect();
        let biases = with_bias.then(|| vec![vec![0.0; width]; depth]);
        ToyReluResMLP { width, depth, alpha, sigma_w, weights, biases }
    }

    pub fn branch_scale(&self) -> f64 {
        (self.depth as f64).powf(-self.alpha)
    }

    pub fn forward(&self, h0: &[f64], batch: usize) -> ReluTrace {
        let n = self.width;
        assert_eq!(h0.len(), n * batch, "input has {} entries, expected {n}x{batch}", h0.len());
        let s = self.branch_scale();
        let mut hs = vec![h0.to_vec()];
        for k in 0..self.depth {
            let h = &hs[k];
            let phi: Vec<f64> = h.iter().map(|&v| relu(v)).collect();
            let mut next = h.clone();
            gemm(
                s,
                MatRef::new(&self.weights[k], n, n),
                MatRef::new(&phi, n, batch),
                1.0,
                MatMut::new(&mut next, n, batch),
            );
            if let Some(b) = &self.biases {
                for (i, row) in next.chunks_mut(batch).enumerate() {
                    row.iter_mut().for_each(|v| *v += s * b[k][i]);
                }
            }
            hs.push(next);
        }
        ReluTrace { hs, batch }
    }

    /// Gradients of `Σ g_L ⊙ h^L` with respect to every weight and bias.
    pub fn backward(&self, trace: &ReluTrace, g_last: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let (n, batch) = (self.width, trace.batch);
        let s = self.branch_scale();
        let mut g = g_last.to_vec();
        let mut dws = vec![Vec::new(); self.depth];
        let mut dbs = vec![Vec::new(); self.depth];
        let mut tmp = vec![0.0; n * batch];
        for k in (0..self.depth).rev() {
            let h = &trace.hs[k];
            let phi: Vec<f64> = h.iter().map(|&v| relu(v)).collect();
            let mut dw = vec![0.0; n * n];
            gemm(s, MatRef::new(&g, n, batch), MatRef::new(&phi, n, batch).t(), 0.0, MatMut::new(&mut dw, n, n));
            dws[k] = dw;
            dbs[k] = g.chunks(batch).map(|row| s * row.iter().sum::<f64>()).collect();
            matmul_tn(&self.weights[k], n, n, &g, batch, &mut tmp);
            for ((gv, t), hv) in g.iter_mut().zip(&tmp).zip(h) {
                if *hv > 0.0 {
                    *gv += s * t;
                }
            }
        }
        (dws, dbs)
    }

    /// Per-layer normalized squared norms `H^ℓ = ‖h^ℓ‖²/(N·B)`.
    pub fn norms(trace: &ReluTrace) -> Vec<f64> {
        trace.hs.iter().map(|h| h.iter().map(|v| v * v).sum::<f64>() / h.len() as f64).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_linear_toy() {
        let net = ToyLinearResNet::new(1, 1.0, vec![vec![1.0]], vec![vec![1.0]]);
        assert_eq!(net.forward(&[1.0], 1)[1], vec![2.0]);
    }

    #[test]
    fn zero_linear_toy_is_identity() {
        let net = ToyLinearResNet::new(3, 0.5, vec![vec![0.0; 9]; 4], vec![vec![0.0; 9]; 4]);
        let h0 = vec![1.0, -2.0, 0.5, 3.0, 0.0, 7.0];
        assert_eq!(net.forward(&h0, 2)[4], h0);
    }

    #[test]
    fn taylor_terminates_at_second_order() {
        let net = ToyLinearResNet::init(16, 4, 0.5, 3);
        let mut h = vec![0.0; 16 * 3];
        fill_gaussian(&mut RngStream::new(1, 1).rng(), &mut h, 1.0);
        let mut dw1 = vec![0.0; 256];
        let mut dw2 = vec![0.0; 256];
        fill_gaussian(&mut RngStream::new(2, 1).rng(), &mut dw1, 0.1);
        fill_gaussian(&mut RngStream::new(2, 2).rng(), &mut dw2, 0.1);
        let s = net.branch_scale();
        let mut base = vec![0.0; 48];
        ToyLinearResNet::block(16, s, &net.w1[2], &net.w2[2], &h, 3, &mut base);
        let w1: Vec<f64> = net.w1[2].iter().zip(&dw1).map(|(a, b)| a + b).collect();
        let w2: Vec<f64> = net.w2[2].iter().zip(&dw2).map(|(a, b)| a + b).collect();
        let mut moved = vec![0.0; 48];
        ToyLinearResNet::block(16, s, &w1, &w2, &h, 3, &mut moved);
        let lin = net.block_linear_change(2, &h, 3, &dw1, &dw2);
        let quad = net.block_quadratic_change(&h, 3, &dw1, &dw2);
        for i in 0..48 {
            assert!((moved[i] - base[i] - lin[i] - quad[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn relu_mlp_gradients_match_fd() {
        let mut net = ToyReluResMLP::init(8, 3, 0.5, 1.5, true, 4);
        for (k, b) in net.biases.as_mut().unwrap().iter_mut().enumerate() {
            b.iter_mut().enumerate().for_each(|(i, v)| *v = 0.1 * (i as f64 - k as f64));
        }
        let mut h0 = vec![0.0; 16];
        fill_gaussian(&mut RngStream::new(5, 0).rng(), &mut h0, 1.0);
        let mut r = vec![0.0; 16];
        fill_gaussian(&mut RngStream::new(6, 0).rng(), &mut r, 1.0);
        let obj = |net: &ToyReluResMLP| -> f64 {
            let t = net.forward(&h0, 2);
            t.hs[3].iter().zip(&r).map(|(a, b)| a * b).sum()
        };
        let (dw, db) = net.backward(&net.forward(&h0, 2), &r);
        for k in 0..3 {
            for j in [0, 9, 27, 63] {
                let mut p = net.clone();
                let h = 1e-6;
                p.weights[k][j] += h;
                let fp = obj(&p);
                p.weights[k][j] -= 2.0 * h;
                let fm = obj(&p);
                let num = (fp - fm) / (2.0 * h);
                assert!((num - dw[k][j]).abs() < 1e-6 * (1.0 + num.abs()), "{num} vs {}", dw[k][j]);
            }
            let mut p = net.clone();
            p.biases.as_mut().unwrap()[k][3] += 1e-6;
            let fp = obj(&p);
            p.biases.as_mut().unwrap()[k][3] -= 2e-6;
            let fm = obj(&p);
            assert!(((fp - fm) / 2e-6 - db[k][3]).abs() < 1e-6);
        }
    }
}
