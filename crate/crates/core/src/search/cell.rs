//! Searchable coupling cell: a DAG whose edges carry mixtures of candidate ops,
//! followed by a fixed 1×1 projection that emits the coupling's `(s, t)`.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ops::{channel_matmul, channel_matmul_backward, OpCache, OpKind, KERNEL_INIT_STD};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// DAG over `nodes` nodes; node 0 is the input, node `nodes - 1` the output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellTopology {
    nodes: usize,
    edges: Vec<(usize, usize)>,
}

impl CellTopology {
    pub fn new(nodes: usize, mut edges: Vec<(usize, usize)>) -> Result<Self> {
        if nodes < 2 {
            return Err(Error::Parameter(format!("cell needs at least 2 nodes, got {nodes}")));
        }
        for &(i, j) in &edges {
            if i >= j || j >= nodes {
                return Err(Error::Parameter(format!(
                    "edge {i}->{j} is not forward in a {nodes}-node cell"
                )));
            }
        }
        edges.sort_by_key(|&(i, j)| (j, i));
        if edges.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Parameter("duplicate cell edge".into()));
        }
        for j in 1..nodes {
            if !edges.iter().any(|&(_, t)| t == j) {
                return Err(Error::Parameter(format!("cell node {j} has no incoming edge")));
            }
        }
        Ok(CellTopology { nodes, edges })
    }

    /// Fully connected forward DAG.
    pub fn dense(nodes: usize) -> Result<Self> {
        let edges = (1..nodes).flat_map(|j| (0..j).map(move |i| (i, j))).collect();
        Self::new(nodes, edges)
    }

    pub fn chain(nodes: usize) -> Result<Self> {
        Self::new(nodes, (1..nodes).map(|j| (j - 1, j)).collect())
    }

    pub fn single_edge() -> Self {
        CellTopology {
            nodes: 2,
            edges: vec![(0, 1)],
        }
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    /// Edges ordered by target node, then source node.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub(crate) fn validate(&self) -> Result<()> {
        Self::new(self.nodes, self.edges.clone()).map(|_| ())
    }
}

impl Default for CellTopology {
    fn default() -> Self {
        CellTopology::dense(4).expect("dense 4-node cell")
    }
}

/// Per-edge mixing weights handed to [`Cell::forward`]; `weights[e]` has one
/// entry per candidate op.
#[derive(Clone, Copy, Debug)]
pub struct EdgeWeights<'a> {
    pub weights: &'a [f64],
    pub num_ops: usize,
    /// Discrete weights skip every op whose weight is zero.
    pub discrete: bool,
}

impl EdgeWeights<'_> {
    fn edge(&self, e: usize) -> &[f64] {
        &self.weights[e * self.num_ops..(e + 1) * self.num_ops]
    }
}

#[derive(Clone, Debug)]
pub struct Cell {
    topology: CellTopology,
    ops: Vec<OpKind>,
    in_channels: usize,
    out_channels: usize,
    op_params: Vec<Vec<f64>>,
    proj_weight: Vec<f64>,
    proj_bias: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct CellCache {
    nodes: Vec<Tensor>,
    /// `[edge][op]`: op output and its cache, when the op was evaluated.
    op_outputs: Vec<Vec<Option<(Tensor, OpCache)>>>,
}

impl Cell {
    /// `in_channels` conditioning channels in, `2 · out_channels` projected out.
    pub fn new(
        topology: CellTopology,
        ops: Vec<OpKind>,
        in_channels: usize,
        out_channels: usize,
        rng: &mut Rng,
    ) -> Self {
        let op_params = topology
            .edges()
            .iter()
            .flat_map(|_| ops.iter().map(|op| op.init_params(in_channels, rng)).collect::<Vec<_>>())
            .collect();
        let normal = Normal::new(0.0, KERNEL_INIT_STD).expect("valid std");
        let proj_weight = (0..2 * out_channels * in_channels)
            .map(|_| normal.sample(rng))
            .collect();
        Cell {
            topology,
            ops,
            in_channels,
            out_channels,
            op_params,
            proj_weight,
            proj_bias: vec![0.0; 2 * out_channels],
        }
    }

    pub fn topology(&self) -> &CellTopology {
        &self.topology
    }

    pub fn ops(&self) -> &[OpKind] {
        &self.ops
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn num_params(&self) -> usize {
        self.op_params.iter().map(Vec::len).sum::<usize>()
            + self.proj_weight.len()
            + self.proj_bias.len()
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        for p in &self.op_params {
            out.extend_from_slice(p);
        }
        out.extend_from_slice(&self.proj_weight);
        out.extend_from_slice(&self.proj_bias);
    }

    /// Reads parameters in [`write_params`](Self::write_params) order; returns the count consumed.
    pub fn read_params(&mut self, src: &[f64]) -> usize {
        let mut at = 0;
        for p in self.op_params.iter_mut().chain([&mut self.proj_weight, &mut self.proj_bias]) {
            let n = p.len();
            p.copy_from_slice(&src[at..at + n]);
            at += n;
        }
        at
    }

    /// Sets the projection to emit constant `(s, t)` regardless of the input.
    pub fn set_constant_output(&mut self, s: f64, t: f64) {
        self.proj_weight.iter_mut().for_each(|w| *w = 0.0);
        let n = self.out_channels;
        self.proj_bias[..n].iter_mut().for_each(|b| *b = s);
        self.proj_bias[n..].iter_mut().for_each(|b| *b = t);
    }

    pub fn projection_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.proj_weight, &mut self.proj_bias)
    }

    /// Runs the cell on the conditioning half `h`. `layer` tags numeric errors.
    pub fn forward(
        &self,
        h: &Tensor,
        weights: EdgeWeights<'_>,
        layer: usize,
    ) -> Result<(Tensor, Tensor, CellCache)> {
        if h.channels() != self.in_channels {
            return Err(Error::Shape(format!(
                "cell expects {} channels, got {}",
                self.in_channels,
                h.channels()
            )));
        }
        let k = self.ops.len();
        if weights.num_ops != k || weights.weights.len() != k * self.topology.num_edges() {
            return Err(Error::Shape(format!(
                "cell has {} edges x {} ops, weights have {} entries",
                self.topology.num_edges(),
                k,
                weights.weights.len()
            )));
        }
        let shape = h.shape();
        let mut nodes: Vec<Tensor> = Vec::with_capacity(self.topology.nodes());
        nodes.push(h.clone());
        for _ in 1..self.topology.nodes() {
            nodes.push(Tensor::zeros(shape));
        }
        let mut op_outputs = Vec::with_capacity(self.topology.num_edges());
        for (e, &(i, j)) in self.topology.edges().iter().enumerate() {
            let w = weights.edge(e);
            let mut mixed = Tensor::zeros(shape);
            let mut outs = Vec::with_capacity(k);
            for (o, op) in self.ops.iter().enumerate() {
                if weights.discrete && w[o] == 0.0 {
                    outs.push(None);
                    continue;
                }
                let (y, cache) = op.forward(&self.op_params[e * k + o], &nodes[i]);
                mixed.add_scaled(&y, w[o]);
                outs.push(Some((y, cache)));
            }
            if !mixed.all_finite() {
                return Err(Error::Numeric {
                    layer,
                    what: format!("cell edge {i}->{j}"),
                });
            }
            nodes[j].add_assign(&mixed);
            op_outputs.push(outs);
        }
        let last = &nodes[self.topology.nodes() - 1];
        let mut st = channel_matmul(last, &self.proj_weight, 2 * self.out_channels);
        let plane = st.plane();
        let two_out = 2 * self.out_channels;
        for (idx, v) in st.data_mut().iter_mut().enumerate() {
            *v += self.proj_bias[(idx / plane) % two_out];
        }
        let s = st.slice_channels(0..self.out_channels);
        let t = st.slice_channels(self.out_channels..two_out);
        Ok((s, t, CellCache { nodes, op_outputs }))
    }

    /// Backward pass. Accumulates parameter gradients into `grad_params`
    /// (layout of [`write_params`](Self::write_params)) and mixing-weight
    /// gradients into `grad_weights` (`edges × ops`), returning `∂/∂h`.
    pub fn backward(
        &self,
        cache: &CellCache,
        weights: EdgeWeights<'_>,
        g_s: &Tensor,
        g_t: &Tensor,
        grad_params: &mut [f64],
        grad_weights: &mut [f64],
    ) -> Tensor {
        let k = self.ops.len();
        let g_st = Tensor::concat_channels(g_s, g_t).expect("s and t share a shape");
        let n_op_params: usize = self.op_params.iter().map(Vec::len).sum();
        let (g_ops, g_proj) = grad_params.split_at_mut(n_op_params);
        let (g_pw, g_pb) = g_proj.split_at_mut(self.proj_weight.len());
        let two_out = 2 * self.out_channels;
        let plane = g_st.plane();
        for (idx, &g) in g_st.data().iter().enumerate() {
            g_pb[(idx / plane) % two_out] += g;
        }
        let last = self.topology.nodes() - 1;
        let mut node_grads: Vec<Tensor> = cache.nodes.iter().map(|n| Tensor::zeros(n.shape())).collect();
        node_grads[last] =
            channel_matmul_backward(&g_st, &cache.nodes[last], &self.proj_weight, two_out, g_pw);

        let mut offsets = Vec::with_capacity(self.op_params.len());
        let mut acc = 0;
        for p in &self.op_params {
            offsets.push(acc);
            acc += p.len();
        }

        for (e, &(i, j)) in self.topology.edges().iter().enumerate().rev() {
            let w = weights.edge(e);
            let g_out = node_grads[j].clone();
            for (o, op) in self.ops.iter().enumerate() {
                let Some((y, op_cache)) = &cache.op_outputs[e][o] else {
                    continue;
                };
                if !weights.discrete {
                    grad_weights[e * k + o] += g_out.dot(y);
                }
                if w[o] == 0.0 {
                    continue;
                }
                let params = &self.op_params[e * k + o];
                let off = offsets[e * k + o];
                let mut g_scaled = g_out.clone();
                g_scaled.data_mut().iter_mut().for_each(|v| *v *= w[o]);
                let gx = op.backward(
                    params,
                    &cache.nodes[i],
                    op_cache,
                    &g_scaled,
                    &mut g_ops[off..off + params.len()],
                );
                node_grads[i].add_assign(&gx);
            }
        }
        node_grads.swap_remove(0)
    }
}
