//! Batched unrolling of a recurrent policy with prefix sharing.
//!
//! Every recurrent step is identified by its parent node and the tokens fed
//! to each embedding slot. Steps with the same identity are computed once and
//! shared by every episode that reaches them, so a batch of dialogs becomes a
//! forest whose size is bounded by the number of distinct dialog prefixes.
//! Rewards registered against sampled choices are folded into per-output
//! weights and propagated through the forest in a single backward pass; the
//! result equals the sum of the per-episode REINFORCE gradients.
//!
//! New nodes requested together form a block, and each block is evaluated with
//! one matrix product for the recurrent term.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use crate::error::{Error, Result};
use crate::neural::lstm::{write_gate_grads, LstmCell};
use crate::neural::sampling::{check_logits, draw_index, softmax_into, Mode};
use crate::neural::tensor::{axpy, dot, sigmoid};
use crate::neural::{ParamId, ParamStore, Tensor};

pub const MAX_SLOTS: usize = 8;

/// Marks an embedding slot that receives no token (a zero vector).
pub const ABSENT: u16 = u16::MAX;

pub type InputKey = [u16; MAX_SLOTS];

pub const EMPTY_KEY: InputKey = [ABSENT; MAX_SLOTS];

pub type NodeId = u32;

/// The all-zero recurrent state every unroll starts from.
pub const ROOT: NodeId = u32::MAX;

/// An embedding table whose rows are written into the cell input at `offset`.
#[derive(Clone, Debug)]
pub struct EmbeddingSlot {
    pub table: ParamId,
    pub offset: usize,
    pub width: usize,
    pub vocab: usize,
}

/// Linear map from the hidden state to logits.
#[derive(Clone, Debug)]
pub struct Head {
    pub weight: ParamId,
    pub bias: ParamId,
    pub size: usize,
}

/// A recurrent cell fed by embedding slots, with categorical output heads.
#[derive(Clone, Debug)]
pub struct RecurrentNet {
    pub cell: LstmCell,
    pub slots: Vec<EmbeddingSlot>,
    pub heads: Vec<Head>,
}

impl RecurrentNet {
    /// The dense cell input a key stands for.
    pub fn dense_input(&self, store: &ParamStore, key: &InputKey) -> Vec<f64> {
        let mut x = vec![0.0; self.cell.input_dim];
        for (slot, &tok) in self.slots.iter().zip(key) {
            if tok != ABSENT {
                let row = store.value(slot.table).row(tok as usize);
                x[slot.offset..slot.offset + slot.width].copy_from_slice(row);
            }
        }
        x
    }

    pub fn check_key(&self, key: &InputKey) -> Result<()> {
        for (s, &tok) in key.iter().enumerate() {
            if tok == ABSENT {
                continue;
            }
            let vocab = self.slots.get(s).map_or(0, |slot| slot.vocab);
            if tok as usize >= vocab {
                return Err(Error::TokenOutOfRange { token: tok as usize, vocab });
            }
        }
        Ok(())
    }
}

/// A sampled (or greedily chosen) output, as recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChoiceRecord {
    tape: u64,
    output: u32,
    pub index: u16,
    pub mode: Mode,
}

/// The stochastic choices an agent made during one episode.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EpisodeTrace {
    pub mode: Mode,
    pub choices: Vec<ChoiceRecord>,
}

impl EpisodeTrace {
    pub fn new(mode: Mode) -> Self {
        Self { mode, choices: Vec::new() }
    }

    pub fn push(&mut self, choice: ChoiceRecord) {
        self.choices.push(choice);
    }
}

struct Block {
    first: NodeId,
    parents: Vec<NodeId>,
    keys: Vec<InputKey>,
    h: Vec<f64>,
    c: Vec<f64>,
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
    dh: Vec<f64>,
    dc: Vec<f64>,
}

struct HeadOutput {
    node: NodeId,
    head: u8,
    probs: Vec<f64>,
    weight: Vec<f64>,
    total: f64,
}

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

pub struct Tape {
    id: u64,
    hidden: usize,
    proj: Vec<Vec<f64>>,
    index: HashMap<(NodeId, InputKey), NodeId>,
    blocks: Vec<Block>,
    locate: Vec<(u32, u32)>,
    outputs: HashMap<(NodeId, u8), u32>,
    heads: Vec<HeadOutput>,
    zeros: Vec<f64>,
}

impl Tape {
    /// Snapshots the input projections of `net`; the tape is only valid for
    /// the parameter values it was built from.
    pub fn new(net: &RecurrentNet, store: &ParamStore) -> Self {
        let hd = net.cell.hidden;
        let g4 = 4 * hd;
        let w_x = store.value(net.cell.w_x);
        let proj = net
            .slots
            .iter()
            .map(|slot| {
                let table = store.value(slot.table);
                let mut p = vec![0.0; slot.vocab * g4];
                for tok in 0..slot.vocab {
                    let e = table.row(tok);
                    for r in 0..g4 {
                        p[tok * g4 + r] = dot(&w_x.row(r)[slot.offset..slot.offset + slot.width], e);
                    }
                }
                p
            })
            .collect();
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            hidden: hd,
            proj,
            index: HashMap::new(),
            blocks: Vec::new(),
            locate: Vec::new(),
            outputs: HashMap::new(),
            heads: Vec::new(),
            zeros: vec![0.0; hd],
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn num_nodes(&self) -> usize {
        self.locate.len()
    }

    pub fn hidden(&self, node: NodeId) -> &[f64] {
        if node == ROOT {
            return &self.zeros;
        }
        let (b, r) = self.locate[node as usize];
        let hd = self.hidden;
        &self.blocks[b as usize].h[r as usize * hd..(r as usize + 1) * hd]
    }

    pub fn cell_state(&self, node: NodeId) -> &[f64] {
        if node == ROOT {
            return &self.zeros;
        }
        let (b, r) = self.locate[node as usize];
        let hd = self.hidden;
        &self.blocks[b as usize].c[r as usize * hd..(r as usize + 1) * hd]
    }

    /// Advances every `(parent, key)` by one recurrent step, reusing nodes
    /// that already exist.
    pub fn step(
        &mut self,
        net: &RecurrentNet,
        store: &ParamStore,
        requests: &[(NodeId, InputKey)],
    ) -> Result<Vec<NodeId>> {
        for (parent, key) in requests {
            net.check_key(key)?;
            if *parent != ROOT && *parent as usize >= self.locate.len() {
                return Err(Error::Config(format!("unknown parent node {parent}")));
            }
        }
        let first = self.locate.len() as NodeId;
        let block_index = self.blocks.len() as u32;
        let mut parents = Vec::new();
        let mut keys = Vec::new();
        let mut out = Vec::with_capacity(requests.len());
        for &(parent, key) in requests {
            match self.index.entry((parent, key)) {
                Entry::Occupied(e) => out.push(*e.get()),
                Entry::Vacant(e) => {
                    let id = first + parents.len() as NodeId;
                    e.insert(id);
                    self.locate.push((block_index, parents.len() as u32));
                    parents.push(parent);
                    keys.push(key);
                    out.push(id);
                }
            }
        }
        if !parents.is_empty() {
            let block = self.forward_block(net, store, first, parents, keys);
            self.blocks.push(block);
        }
        Ok(out)
    }

    fn forward_block(
        &self,
        net: &RecurrentNet,
        store: &ParamStore,
        first: NodeId,
        parents: Vec<NodeId>,
        keys: Vec<InputKey>,
    ) -> Block {
        let hd = self.hidden;
        let g4 = 4 * hd;
        let n = parents.len();
        let bias = store.value(net.cell.bias).data();
        let mut pre = vec![0.0; n * g4];
        for (row, key) in pre.chunks_exact_mut(g4).zip(&keys) {
            row.copy_from_slice(bias);
            for (s, &tok) in key.iter().enumerate() {
                if tok != ABSENT {
                    axpy(1.0, &self.proj[s][tok as usize * g4..(tok as usize + 1) * g4], row);
                }
            }
        }

        let rec: Vec<usize> = (0..n).filter(|&i| parents[i] != ROOT).collect();
        if !rec.is_empty() {
            let w_h = store.value(net.cell.w_h).data();
            let mut h_prev = vec![0.0; rec.len() * hd];
            for (dst, &i) in h_prev.chunks_exact_mut(hd).zip(&rec) {
                dst.copy_from_slice(self.hidden(parents[i]));
            }
            if rec.len() == n {
                gemm(n, hd, g4, &h_prev, (hd, 1), w_h, (1, hd), 1.0, &mut pre, (g4, 1));
            } else {
                let mut tmp = vec![0.0; rec.len() * g4];
                gemm(rec.len(), hd, g4, &h_prev, (hd, 1), w_h, (1, hd), 0.0, &mut tmp, (g4, 1));
                for (src, &i) in tmp.chunks_exact(g4).zip(&rec) {
                    axpy(1.0, src, &mut pre[i * g4..(i + 1) * g4]);
                }
            }
        }

        let mut gates = pre;
        let mut c = vec![0.0; n * hd];
        let mut tanh_c = vec![0.0; n * hd];
        let mut h = vec![0.0; n * hd];
        for i in 0..n {
            let g = &mut gates[i * g4..(i + 1) * g4];
            for (k, v) in g.iter_mut().enumerate() {
                *v = if k < 3 * hd { sigmoid(*v) } else { v.tanh() };
            }
            let c_prev = self.cell_state(parents[i]);
            for k in 0..hd {
                let ck = g[hd + k] * c_prev[k] + g[k] * g[3 * hd + k];
                let tc = ck.tanh();
                c[i * hd + k] = ck;
                tanh_c[i * hd + k] = tc;
                h[i * hd + k] = g[2 * hd + k] * tc;
            }
        }
        Block { first, parents, keys, h, c, gates, tanh_c, dh: vec![0.0; n * hd], dc: vec![0.0; n * hd] }
    }

    fn output(&mut self, net: &RecurrentNet, store: &ParamStore, node: NodeId, head: usize) -> Result<u32> {
        if let Some(&k) = self.outputs.get(&(node, head as u8)) {
            return Ok(k);
        }
        let spec = &net.heads[head];
        let w = store.value(spec.weight);
        let b = store.value(spec.bias).data();
        let h = self.hidden(node);
        let logits: Vec<f64> = (0..spec.size).map(|k| b[k] + dot(w.row(k), h)).collect();
        check_logits(&logits)?;
        let mut probs = vec![0.0; spec.size];
        softmax_into(&logits, &mut probs);
        let k = self.heads.len() as u32;
        self.heads.push(HeadOutput { node, head: head as u8, probs, weight: vec![0.0; spec.size], total: 0.0 });
        self.outputs.insert((node, head as u8), k);
        Ok(k)
    }

    /// Output distribution of `head` at `node`.
    pub fn probs(&mut self, net: &RecurrentNet, store: &ParamStore, node: NodeId, head: usize) -> Result<&[f64]> {
        let k = self.output(net, store, node, head)?;
        Ok(&self.heads[k as usize].probs)
    }

    /// Samples (train) or takes the argmax (greedy) of `head` at `node`.
    pub fn choose<R: Rng + ?Sized>(
        &mut self,
        net: &RecurrentNet,
        store: &ParamStore,
        node: NodeId,
        head: usize,
        rng: &mut R,
        mode: Mode,
    ) -> Result<ChoiceRecord> {
        let k = self.output(net, store, node, head)?;
        let index = draw_index(&self.heads[k as usize].probs, rng, mode);
        Ok(ChoiceRecord { tape: self.id, output: k, index: index as u16, mode })
    }

    /// Records a given choice as if it had been sampled.
    pub fn force(
        &mut self,
        net: &RecurrentNet,
        store: &ParamStore,
        node: NodeId,
        head: usize,
        index: usize,
    ) -> Result<ChoiceRecord> {
        let size = net.heads[head].size;
        if index >= size {
            return Err(Error::TokenOutOfRange { token: index, vocab: size });
        }
        let k = self.output(net, store, node, head)?;
        Ok(ChoiceRecord { tape: self.id, output: k, index: index as u16, mode: Mode::Train })
    }

    pub fn log_prob(&self, choice: &ChoiceRecord) -> f64 {
        self.heads[choice.output as usize].probs[choice.index as usize].ln()
    }

    /// Node and head a choice was made at.
    pub fn choice_site(&self, choice: &ChoiceRecord) -> (NodeId, usize) {
        let h = &self.heads[choice.output as usize];
        (h.node, h.head as usize)
    }

    /// Registers `reward · ∇ log π(choice)`; applied on the next [`Tape::backward`].
    pub fn reinforce(&mut self, choice: &ChoiceRecord, reward: f64) -> Result<()> {
        if choice.mode == Mode::Greedy {
            return Err(Error::GreedyTrace);
        }
        if choice.tape != self.id {
            return Err(Error::ForeignTrace);
        }
        let out = &mut self.heads[choice.output as usize];
        out.weight[choice.index as usize] += reward;
        out.total += reward;
        Ok(())
    }

    pub fn reinforce_trace(&mut self, trace: &EpisodeTrace, reward: f64) -> Result<()> {
        if trace.mode == Mode::Greedy {
            return Err(Error::GreedyTrace);
        }
        for c in &trace.choices {
            self.reinforce(c, reward)?;
        }
        Ok(())
    }

    /// Registers the trace and immediately backpropagates into `store`.
    pub fn accumulate_reinforce(
        &mut self,
        net: &RecurrentNet,
        store: &mut ParamStore,
        trace: &EpisodeTrace,
        reward: f64,
    ) -> Result<()> {
        self.reinforce_trace(trace, reward)?;
        self.backward(net, store);
        Ok(())
    }

    /// Propagates all registered rewards into the gradient accumulators of
    /// `store` and clears them.
    pub fn backward(&mut self, net: &RecurrentNet, store: &mut ParamStore) {
        let hd = self.hidden;
        let g4 = 4 * hd;
        let (values, grads) = store.split_mut();

        let mut dh_node = vec![0.0; hd];
        for out in &mut self.heads {
            if out.total == 0.0 && out.weight.iter().all(|&w| w == 0.0) {
                continue;
            }
            let spec = &net.heads[out.head as usize];
            let (b, r) = self.locate[out.node as usize];
            let block = &mut self.blocks[b as usize];
            let h = &block.h[r as usize * hd..(r as usize + 1) * hd];
            dh_node.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..spec.size {
                let d = out.weight[k] - out.total * out.probs[k];
                axpy(d, h, grads[spec.weight.0].row_mut(k));
                grads[spec.bias.0].data_mut()[k] += d;
                axpy(d, values[spec.weight.0].row(k), &mut dh_node);
            }
            axpy(1.0, &dh_node, &mut block.dh[r as usize * hd..(r as usize + 1) * hd]);
            out.weight.iter_mut().for_each(|w| *w = 0.0);
            out.total = 0.0;
        }

        let mut slot_grads: Vec<Vec<f64>> = net.slots.iter().map(|s| vec![0.0; s.vocab * g4]).collect();
        let mut slot_used: Vec<Vec<bool>> = net.slots.iter().map(|s| vec![false; s.vocab]).collect();
        let w_h = values[net.cell.w_h.0].data();

        for b in (0..self.blocks.len()).rev() {
            let (earlier, rest) = self.blocks.split_at_mut(b);
            let block = &mut rest[0];
            let n = block.parents.len();
            let mut dpre = vec![0.0; n * g4];
            let mut dc_prev = vec![0.0; n * hd];
            let mut live = vec![false; n];
            for i in 0..n {
                let dh = &block.dh[i * hd..(i + 1) * hd];
                let dc = &block.dc[i * hd..(i + 1) * hd];
                if dh.iter().all(|&v| v == 0.0) && dc.iter().all(|&v| v == 0.0) {
                    continue;
                }
                live[i] = true;
                let parent = block.parents[i];
                let c_prev: &[f64] = if parent == ROOT {
                    &self.zeros
                } else {
                    let (pb, pr) = self.locate[parent as usize];
                    &earlier[pb as usize].c[pr as usize * hd..(pr as usize + 1) * hd]
                };
                write_gate_grads(
                    hd,
                    &block.gates[i * g4..(i + 1) * g4],
                    &block.tanh_c[i * hd..(i + 1) * hd],
                    c_prev,
                    dh,
                    dc,
                    &mut dpre[i * g4..(i + 1) * g4],
                    Some(&mut dc_prev[i * hd..(i + 1) * hd]),
                );
            }
            block.dh.iter_mut().for_each(|v| *v = 0.0);
            block.dc.iter_mut().for_each(|v| *v = 0.0);

            let bias_grad = grads[net.cell.bias.0].data_mut();
            for i in (0..n).filter(|&i| live[i]) {
                let row = &dpre[i * g4..(i + 1) * g4];
                axpy(1.0, row, bias_grad);
                for (s, &tok) in block.keys[i].iter().enumerate() {
                    if tok != ABSENT {
                        let t = tok as usize;
                        slot_used[s][t] = true;
                        axpy(1.0, row, &mut slot_grads[s][t * g4..(t + 1) * g4]);
                    }
                }
            }

            let rec: Vec<usize> = (0..n).filter(|&i| live[i] && block.parents[i] != ROOT).collect();
            if rec.is_empty() {
                continue;
            }
            let m = rec.len();
            let mut h_prev = vec![0.0; m * hd];
            let mut d_sub = vec![0.0; m * g4];
            for (j, &i) in rec.iter().enumerate() {
                let (pb, pr) = self.locate[block.parents[i] as usize];
                h_prev[j * hd..(j + 1) * hd]
                    .copy_from_slice(&earlier[pb as usize].h[pr as usize * hd..(pr as usize + 1) * hd]);
                d_sub[j * g4..(j + 1) * g4].copy_from_slice(&dpre[i * g4..(i + 1) * g4]);
            }
            // dW_h += dpreᵀ · h_prev
            gemm(g4, m, hd, &d_sub, (1, g4), &h_prev, (hd, 1), 1.0, grads[net.cell.w_h.0].data_mut(), (hd, 1));
            // dh_prev = dpre · W_h
            let mut dh_prev = vec![0.0; m * hd];
            gemm(m, g4, hd, &d_sub, (g4, 1), w_h, (hd, 1), 0.0, &mut dh_prev, (hd, 1));
            for (j, &i) in rec.iter().enumerate() {
                let (pb, pr) = self.locate[block.parents[i] as usize];
                let parent = &mut earlier[pb as usize];
                let range = pr as usize * hd..(pr as usize + 1) * hd;
                axpy(1.0, &dh_prev[j * hd..(j + 1) * hd], &mut parent.dh[range.clone()]);
                axpy(1.0, &dc_prev[i * hd..(i + 1) * hd], &mut parent.dc[range]);
            }
        }

        for (s, slot) in net.slots.iter().enumerate() {
            for tok in (0..slot.vocab).filter(|&t| slot_used[s][t]) {
                let g = &slot_grads[s][tok * g4..(tok + 1) * g4];
                let cols = slot.offset..slot.offset + slot.width;
                let mut d_embed = vec![0.0; slot.width];
                {
                    let w_x = &values[net.cell.w_x.0];
                    let e = values[slot.table.0].row(tok);
                    let gw = &mut grads[net.cell.w_x.0];
                    for (r, &gr) in g.iter().enumerate() {
                        if gr != 0.0 {
                            axpy(gr, &w_x.row(r)[cols.clone()], &mut d_embed);
                            axpy(gr, e, &mut gw.row_mut(r)[cols.clone()]);
                        }
                    }
                }
                axpy(1.0, &d_embed, grads[slot.table.0].row_mut(tok));
            }
        }
    }

    /// First node id of every block, in creation order.
    pub fn block_starts(&self) -> Vec<NodeId> {
        self.blocks.iter().map(|b| b.first).collect()
    }
}

/// `C = A·B + beta·C` over strided row-major views; strides are (row, col).
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    beta: f64,
    c: &mut [f64],
    c_strides: (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let span = |rows: usize, cols: usize, (rs, cs): (usize, usize)| (rows - 1) * rs + (cols - 1) * cs + 1;
    if k > 0 {
        assert!(a.len() >= span(m, k, a_strides));
        assert!(b.len() >= span(k, n, b_strides));
    }
    assert!(c.len() >= span(m, n, c_strides));
    // SAFETY: the asserts above keep every strided access inside the slices,
    // and `c` does not alias `a` or `b` (it is borrowed mutably).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            c_strides.0 as isize,
            c_strides.1 as isize,
        );
    }
}

/// Allocates an embedding table and registers it as a slot at `offset`.
pub fn embedding_slot<R: Rng + ?Sized>(
    store: &mut ParamStore,
    name: &str,
    vocab: usize,
    width: usize,
    offset: usize,
    init_scale: f64,
    rng: &mut R,
) -> Result<EmbeddingSlot> {
    let table = store.add(name, Tensor::uniform(&[vocab, width], init_scale, rng))?;
    Ok(EmbeddingSlot { table, offset, width, vocab })
}

pub fn linear_head<R: Rng + ?Sized>(
    store: &mut ParamStore,
    name: &str,
    size: usize,
    hidden: usize,
    init_scale: f64,
    rng: &mut R,
) -> Result<Head> {
    let weight = store.add(&format!("{name}.weight"), Tensor::uniform(&[size, hidden], init_scale, rng))?;
    let bias = store.add(&format!("{name}.bias"), Tensor::uniform(&[size], init_scale, rng))?;
    Ok(Head { weight, bias, size })
}
