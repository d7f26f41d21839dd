use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Binding, Conv2d, ParamStore};
use crate::tensor::{ConvGeom, Graph, Tensor, Var};

/// Learned 1x1 read and write transforms around a set of feature slots.
#[derive(Clone, Debug)]
pub struct Memory {
    slots: usize,
    writes: Vec<Conv2d>,
    reads: Vec<Conv2d>,
}

/// Slot contents for one forward pass.
#[derive(Clone, Debug)]
pub struct MemoryState {
    pub slots: Vec<Var>,
    pub writes: usize,
}

impl Memory {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, channels: usize, slots: usize, shared: bool) -> Self {
        let n = if shared { 1 } else { slots };
        let mut conv = |name: String| Conv2d::new(store, rng, &name, channels, channels, 1, ConvGeom::same(1), false);
        let writes = (0..n).map(|i| conv(format!("mem.write{i}"))).collect();
        let reads = (0..n).map(|j| conv(format!("mem.read{j}"))).collect();
        Memory { slots, writes, reads }
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn init(&self, g: &mut Graph, shape: (usize, usize, usize)) -> MemoryState {
        let (c, h, w) = shape;
        let slots = (0..self.slots).map(|_| g.constant(Tensor::zeros(&[c, h, w]))).collect();
        MemoryState { slots, writes: 0 }
    }

    /// `slot <- slot + W_write(feats)`.
    pub fn write(&self, g: &mut Graph, p: &Binding, state: &mut MemoryState, feats: Var, slot: usize) -> Result<()> {
        if slot >= state.slots.len() {
            return Err(Error::SlotOutOfRange {
                slot,
                slots: state.slots.len(),
            });
        }
        let w = &self.writes[slot % self.writes.len()];
        let v = w.forward(g, p, feats);
        state.slots[slot] = g.add(state.slots[slot], v);
        state.writes += 1;
        Ok(())
    }

    /// Per-pixel softmax over slots of the channel-mean similarity to
    /// `query`, weighting each slot's read transform.
    pub fn read(&self, g: &mut Graph, p: &Binding, state: &MemoryState, query: Var) -> Var {
        let sims: Vec<Var> = state
            .slots
            .iter()
            .map(|&s| {
                let prod = g.mul(query, s);
                g.channel_mean(prod)
            })
            .collect();
        let stacked = g.concat(&sims);
        let weights = g.softmax_channels(stacked);
        let mut out: Option<Var> = None;
        for (j, &s) in state.slots.iter().enumerate() {
            let r = self.reads[j % self.reads.len()].forward(g, p, s);
            let wj = g.slice_channels(weights, j, 1);
            let term = g.mul_mask(r, wj);
            out = Some(match out {
                None => term,
                Some(acc) => g.add(acc, term),
            });
        }
        out.expect("memory has at least one slot")
    }
}
