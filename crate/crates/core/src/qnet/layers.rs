//! Dense and LSTM layers with explicit forward caches and backward passes.
//!
//! Weight matrices are row-major `n_out × n_in`.

use serde::{Deserialize, Serialize};

/// `out += w·x`
fn matvec_acc(w: &[f64], x: &[f64], out: &mut [f64]) {
    let n_in = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(n_in)) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += wᵀ·dy`
fn affine_transpose_acc(w: &[f64], dy: &[f64], out: &mut [f64]) {
    let n_in = out.len();
    for (row, &d) in w.chunks_exact(n_in).zip(dy) {
        if d == 0.0 {
            continue;
        }
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * d;
        }
    }
}

/// `gw += dy ⊗ x`
fn outer_acc(gw: &mut [f64], dy: &[f64], x: &[f64]) {
    let n_in = x.len();
    for (row, &d) in gw.chunks_exact_mut(n_in).zip(dy) {
        if d == 0.0 {
            continue;
        }
        for (g, xi) in row.iter_mut().zip(x) {
            *g += d * xi;
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            w: vec![0.0; n_in * n_out],
            b: vec![0.0; n_out],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n_in);
        let mut out = self.b.clone();
        matvec_acc(&self.w, x, &mut out);
        out
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense) -> Vec<f64> {
        outer_acc(&mut grad.w, dy, x);
        for (g, d) in grad.b.iter_mut().zip(dy) {
            *g += d;
        }
        let mut dx = vec![0.0; self.n_in];
        affine_transpose_acc(&self.w, dy, &mut dx);
        dx
    }
}

/// LSTM with gate blocks stacked as `[input, forget, candidate, output]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lstm {
    pub n_in: usize,
    pub hidden: usize,
    /// `4H × n_in`
    pub w_ih: Vec<f64>,
    /// `4H × H`
    pub w_hh: Vec<f64>,
    /// `4H`
    pub b: Vec<f64>,
}

/// Activations of one sequence pass, kept for backpropagation through time.
#[derive(Debug, Clone, Default)]
pub struct LstmCache {
    pub inputs: Vec<Vec<f64>>,
    /// Post-activation gates per step, `[i, f, g, o]` stacked.
    gates: Vec<Vec<f64>>,
    cells: Vec<Vec<f64>>,
    tanh_cells: Vec<Vec<f64>>,
    pub hidden: Vec<Vec<f64>>,
}

impl Lstm {
    pub fn zeros(n_in: usize, hidden: usize) -> Self {
        Self {
            n_in,
            hidden,
            w_ih: vec![0.0; 4 * hidden * n_in],
            w_hh: vec![0.0; 4 * hidden * hidden],
            b: vec![0.0; 4 * hidden],
        }
    }

    /// Runs the sequence from zero initial state; returns every hidden state.
    pub fn forward(&self, inputs: Vec<Vec<f64>>) -> LstmCache {
        let h = self.hidden;
        let steps = inputs.len();
        let mut cache = LstmCache {
            gates: Vec::with_capacity(steps),
            cells: Vec::with_capacity(steps),
            tanh_cells: Vec::with_capacity(steps),
            hidden: Vec::with_capacity(steps),
            inputs: Vec::new(),
        };
        let zeros = vec![0.0; h];
        for x in &inputs {
            debug_assert_eq!(x.len(), self.n_in);
            let h_prev = cache.hidden.last().unwrap_or(&zeros);
            let c_prev = cache.cells.last().unwrap_or(&zeros);

            let mut z = self.b.clone();
            matvec_acc(&self.w_ih, x, &mut z);
            matvec_acc(&self.w_hh, h_prev, &mut z);

            let mut c = vec![0.0; h];
            let mut tc = vec![0.0; h];
            let mut hn = vec![0.0; h];
            for k in 0..h {
                z[k] = sigmoid(z[k]);
                z[h + k] = sigmoid(z[h + k]);
                z[2 * h + k] = z[2 * h + k].tanh();
                z[3 * h + k] = sigmoid(z[3 * h + k]);
                c[k] = z[h + k] * c_prev[k] + z[k] * z[2 * h + k];
                tc[k] = c[k].tanh();
                hn[k] = z[3 * h + k] * tc[k];
            }
            cache.gates.push(z);
            cache.cells.push(c);
            cache.tanh_cells.push(tc);
            cache.hidden.push(hn);
        }
        cache.inputs = inputs;
        cache
    }

    /// Backpropagation through time. `dh_ext[t]` is the loss gradient
    /// arriving at hidden state `t` from outside the layer. Accumulates
    /// parameter gradients into `grad` and returns `dL/dx_t` for every step.
    pub fn backward(
        &self,
        cache: &LstmCache,
        dh_ext: &[Vec<f64>],
        grad: &mut Lstm,
    ) -> Vec<Vec<f64>> {
        let h = self.hidden;
        let steps = cache.hidden.len();
        let zeros = vec![0.0; h];
        let mut dx = vec![vec![0.0; self.n_in]; steps];
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut dz = vec![0.0; 4 * h];

        for t in (0..steps).rev() {
            let gates = &cache.gates[t];
            let c_prev = if t > 0 { &cache.cells[t - 1] } else { &zeros };
            let h_prev = if t > 0 { &cache.hidden[t - 1] } else { &zeros };
            let tc = &cache.tanh_cells[t];

            for k in 0..h {
                let (i, f, g, o) = (gates[k], gates[h + k], gates[2 * h + k], gates[3 * h + k]);
                let dh = dh_ext[t][k] + dh_next[k];
                let d_o = dh * tc[k];
                let dc = dh * o * (1.0 - tc[k] * tc[k]) + dc_next[k];
                dz[k] = dc * g * i * (1.0 - i);
                dz[h + k] = dc * c_prev[k] * f * (1.0 - f);
                dz[2 * h + k] = dc * i * (1.0 - g * g);
                dz[3 * h + k] = d_o * o * (1.0 - o);
                dc_next[k] = dc * f;
            }

            outer_acc(&mut grad.w_ih, &dz, &cache.inputs[t]);
            outer_acc(&mut grad.w_hh, &dz, h_prev);
            for (gb, d) in grad.b.iter_mut().zip(&dz) {
                *gb += d;
            }
            affine_transpose_acc(&self.w_ih, &dz, &mut dx[t]);
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            affine_transpose_acc(&self.w_hh, &dz, &mut dh_next);
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_gradient_is_outer_product() {
        let layer = Dense {
            n_in: 3,
            n_out: 2,
            w: vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
            b: vec![0.0, 0.0],
        };
        let x = [0.5, -2.0, 3.0];
        let dy = [1.5, -1.0];
        let mut g = Dense::zeros(3, 2);
        let dx = layer.backward(&x, &dy, &mut g);
        for (r, dyr) in dy.iter().enumerate() {
            for (c, xc) in x.iter().enumerate() {
                assert_eq!(g.w[r * 3 + c], dyr * xc);
            }
        }
        assert_eq!(g.b, dy.to_vec());
        assert_eq!(dx, vec![1.5, -1.0, 0.0]);
    }

    #[test]
    fn single_step_lstm_matches_cell_equations() {
        let mut lstm = Lstm::zeros(2, 1);
        lstm.w_ih = vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6, 0.7, 0.8];
        lstm.w_hh = vec![0.9, -1.0, 1.1, 1.2];
        lstm.b = vec![0.01, 1.0, -0.02, 0.03];
        let x = [0.3, -0.7];
        let cache = lstm.forward(vec![x.to_vec()]);

        let pre = |r: usize| lstm.w_ih[2 * r] * x[0] + lstm.w_ih[2 * r + 1] * x[1] + lstm.b[r];
        let s = |v: f64| 1.0 / (1.0 + (-v).exp());
        let (i, f, g, o) = (s(pre(0)), s(pre(1)), pre(2).tanh(), s(pre(3)));
        let _ = f; // no previous cell
        let c = i * g;
        let h = o * c.tanh();
        assert!((cache.hidden[0][0] - h).abs() < 1e-15);
    }
}
