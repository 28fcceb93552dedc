//! Gated recurrent cell (LSTM). Gate rows are laid out as input, forget,
//! output, candidate, each `hidden` rows tall.

use rand::Rng;

use crate::error::{Error, Result};
use crate::neural::tensor::{axpy, dot, sigmoid};
use crate::neural::{ParamId, ParamStore, Tensor};

#[derive(Clone, Debug)]
pub struct LstmCell {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

/// Everything the backward pass of one step needs.
#[derive(Clone, Debug)]
pub struct StepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    /// Activated gates `[i | f | o | g]`.
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

impl LstmCell {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        init_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let w_x = store.add(&format!("{prefix}.w_x"), Tensor::uniform(&[4 * hidden, input_dim], init_scale, rng))?;
        let w_h = store.add(&format!("{prefix}.w_h"), Tensor::uniform(&[4 * hidden, hidden], init_scale, rng))?;
        let bias = store.add(&format!("{prefix}.bias"), Tensor::uniform(&[4 * hidden], init_scale, rng))?;
        Ok(Self { w_x, w_h, bias, input_dim, hidden })
    }

    /// One recurrent step on dense inputs.
    pub fn step(&self, store: &ParamStore, x: &[f64], h: &[f64], c: &[f64]) -> Result<StepCache> {
        let hd = self.hidden;
        if x.len() != self.input_dim {
            return Err(Error::ShapeMismatch { expected: vec![self.input_dim], got: vec![x.len()] });
        }
        if h.len() != hd || c.len() != hd {
            return Err(Error::ShapeMismatch { expected: vec![hd], got: vec![h.len(), c.len()] });
        }
        let w_x = store.value(self.w_x);
        let w_h = store.value(self.w_h);
        let bias = store.value(self.bias).data();
        let mut gates = vec![0.0; 4 * hd];
        for (r, g) in gates.iter_mut().enumerate() {
            let pre = bias[r] + dot(w_x.row(r), x) + dot(w_h.row(r), h);
            *g = if r < 3 * hd { sigmoid(pre) } else { pre.tanh() };
        }
        let mut c_new = vec![0.0; hd];
        let mut tanh_c = vec![0.0; hd];
        let mut h_new = vec![0.0; hd];
        for k in 0..hd {
            let (i, f, o, g) = (gates[k], gates[hd + k], gates[2 * hd + k], gates[3 * hd + k]);
            c_new[k] = f * c[k] + i * g;
            tanh_c[k] = c_new[k].tanh();
            h_new[k] = o * tanh_c[k];
        }
        Ok(StepCache { x: x.to_vec(), h_prev: h.to_vec(), c_prev: c.to_vec(), gates, c: c_new, tanh_c, h: h_new })
    }

    /// Backpropagates `(dh, dc)` through one step, accumulating parameter
    /// gradients. Returns `(dx, dh_prev, dc_prev)`.
    pub fn backward(
        &self,
        store: &mut ParamStore,
        cache: &StepCache,
        dh: &[f64],
        dc: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let hd = self.hidden;
        let dpre = gate_preactivation_grads(hd, &cache.gates, &cache.tanh_c, &cache.c_prev, dh, dc);
        let mut dc_prev = vec![0.0; hd];
        for k in 0..hd {
            let dct = dc[k] + dh[k] * cache.gates[2 * hd + k] * (1.0 - cache.tanh_c[k] * cache.tanh_c[k]);
            dc_prev[k] = dct * cache.gates[hd + k];
        }
        let (values, grads) = store.split_mut();
        let mut dx = vec![0.0; self.input_dim];
        let mut dh_prev = vec![0.0; hd];
        for (r, &d) in dpre.iter().enumerate() {
            axpy(d, values[self.w_x.0].row(r), &mut dx);
            axpy(d, values[self.w_h.0].row(r), &mut dh_prev);
            axpy(d, &cache.x, grads[self.w_x.0].row_mut(r));
            axpy(d, &cache.h_prev, grads[self.w_h.0].row_mut(r));
            grads[self.bias.0].data_mut()[r] += d;
        }
        (dx, dh_prev, dc_prev)
    }
}

/// Gradients w.r.t. the four gate pre-activations given upstream `(dh, dc)`.
#[inline]
pub(crate) fn gate_preactivation_grads(
    hd: usize,
    gates: &[f64],
    tanh_c: &[f64],
    c_prev: &[f64],
    dh: &[f64],
    dc: &[f64],
) -> Vec<f64> {
    let mut dpre = vec![0.0; 4 * hd];
    write_gate_grads(hd, gates, tanh_c, c_prev, dh, dc, &mut dpre, None);
    dpre
}

/// As [`gate_preactivation_grads`], writing into `dpre` and optionally
/// emitting `dc_prev`.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn write_gate_grads(
    hd: usize,
    gates: &[f64],
    tanh_c: &[f64],
    c_prev: &[f64],
    dh: &[f64],
    dc: &[f64],
    dpre: &mut [f64],
    mut dc_prev: Option<&mut [f64]>,
) {
    for k in 0..hd {
        let i = gates[k];
        let f = gates[hd + k];
        let o = gates[2 * hd + k];
        let g = gates[3 * hd + k];
        let tc = tanh_c[k];
        let d_o = dh[k] * tc;
        let dct = dc[k] + dh[k] * o * (1.0 - tc * tc);
        dpre[k] = dct * g * i * (1.0 - i);
        dpre[hd + k] = dct * c_prev[k] * f * (1.0 - f);
        dpre[2 * hd + k] = d_o * o * (1.0 - o);
        dpre[3 * hd + k] = dct * i * (1.0 - g * g);
        if let Some(out) = dc_prev.as_deref_mut() {
            out[k] = dct * f;
        }
    }
}

/// Free-function form of [`LstmCell::step`].
pub fn recurrent_step(
    cell: &LstmCell,
    store: &ParamStore,
    input: &[f64],
    state: (&[f64], &[f64]),
) -> Result<StepCache> {
    cell.step(store, input, state.0, state.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn cell_with(store: &mut ParamStore, d: usize, h: usize, fill: f64) -> LstmCell {
        let mut rng = crate::RunRng::seed_from_u64(0);
        let cell = LstmCell::new(store, "cell", d, h, 0.1, &mut rng).unwrap();
        for id in [cell.w_x, cell.w_h] {
            store.value_mut(id).fill(fill);
        }
        store.value_mut(cell.bias).fill(0.0);
        cell
    }

    #[test]
    fn zero_everything_gives_zero_state() {
        let mut store = ParamStore::new();
        let cell = cell_with(&mut store, 3, 4, 0.0);
        let out = cell.step(&store, &[0.0; 3], &[0.0; 4], &[0.0; 4]).unwrap();
        assert!(out.h.iter().all(|&v| v == 0.0));
        assert!(out.c.iter().all(|&v| v == 0.0));
        assert!(out.gates[..12].iter().all(|&g| g == 0.5));
        assert!(out.gates[12..].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn scalar_cell_matches_hand_evaluation() {
        // D = H = 1, weights 0.5, biases 0, x = 1, state (0, 0):
        // every pre-activation is 0.5·1 + 0.5·0 = 0.5.
        let mut store = ParamStore::new();
        let cell = cell_with(&mut store, 1, 1, 0.5);
        let out = cell.step(&store, &[1.0], &[0.0], &[0.0]).unwrap();
        let s = 1.0 / (1.0 + (-0.5f64).exp());
        let g = 0.5f64.tanh();
        let c = s * g;
        let h = s * c.tanh();
        assert!((out.c[0] - c).abs() < 1e-15);
        assert!((out.h[0] - h).abs() < 1e-15);
        // frozen numbers for the same evaluation
        assert!((c - 0.287_649_136_644_967_94).abs() < 1e-12, "{c}");
        assert!((h - 0.174_269_718_656_105_08).abs() < 1e-12, "{h}");
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut store = ParamStore::new();
        let cell = cell_with(&mut store, 2, 2, 0.1);
        assert!(cell.step(&store, &[0.0; 3], &[0.0; 2], &[0.0; 2]).is_err());
        assert!(cell.step(&store, &[0.0; 2], &[0.0; 1], &[0.0; 2]).is_err());
    }
}
