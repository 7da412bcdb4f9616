//! Minimal dense network engine: a chain of nodes with a sigmoid
//! classification head, hand-written backprop and an Adam optimizer.
//! Deterministic under a seed; f64 throughout.

pub mod adam;
pub mod layers;

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::error::{Error, Result};
pub use adam::AdamState;
pub use layers::{
    activate_vec, bce_grad_logits, bce_loss, hstack, sigmoid, Activation, BatchNorm, Conv1d,
    Dropout, Embedding, LayerNorm, Linear, SIGMOID_EPS,
};
use layers::{BatchNormCache, LayerNormCache, PoolArgmax};

/// Row-major batch of real values, one sample per row.
pub type Tensor2D = Array2<f64>;
/// Batch of fixed-length token sequences, one sample per row.
pub type TokenMatrix = Array2<u32>;

pub fn all_finite(t: &Tensor2D) -> bool {
    t.iter().all(|v| v.is_finite())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Network input: token ids for embedding-first networks, dense features
/// otherwise.
#[derive(Debug, Clone, Copy)]
pub enum BatchInput<'a> {
    Tokens(&'a TokenMatrix),
    Dense(&'a Tensor2D),
}

impl BatchInput<'_> {
    pub fn batch_size(&self) -> usize {
        match self {
            BatchInput::Tokens(t) => t.nrows(),
            BatchInput::Dense(d) => d.nrows(),
        }
    }
}

/// One element of the trunk chain.
pub enum Node {
    Embedding(Embedding),
    /// Parallel 1-D convolutions over the same embedded sequence; their
    /// pooled outputs are concatenated channel-blockwise.
    ConvBank(Vec<Conv1d>),
    Linear(Linear),
    BatchNorm(BatchNorm),
    LayerNorm(LayerNorm),
    Activation(Activation),
    Dropout(Dropout),
}

impl Node {
    fn param_len(&self) -> usize {
        match self {
            Node::Embedding(e) => e.table.len(),
            Node::ConvBank(convs) => convs
                .iter()
                .map(|c| c.weights.len() + c.bias.len())
                .sum(),
            Node::Linear(l) => l.weights.len() + l.bias.len(),
            Node::BatchNorm(b) => b.gamma.len() + b.beta.len(),
            Node::LayerNorm(l) => l.gamma.len() + l.beta.len(),
            Node::Activation(_) | Node::Dropout(_) => 0,
        }
    }
}

enum NodeCache {
    Stateless,
    ConvBank(Vec<PoolArgmax>),
    BatchNorm(BatchNormCache),
    LayerNorm(LayerNormCache),
    Dropout(Tensor2D),
}

/// Cached intermediates from a train-mode forward pass; required by
/// `Network::backward`, which makes "backward before forward" unrepresentable.
pub struct ForwardTrace {
    acts: Vec<Tensor2D>,
    caches: Vec<NodeCache>,
    /// Batch scores after the sigmoid head.
    pub scores: Vec<f64>,
}

impl ForwardTrace {
    pub fn trunk_output(&self) -> Option<&Tensor2D> {
        self.acts.last()
    }
}

/// A trunk of nodes plus a one-unit sigmoid classification head.
pub struct Network {
    pub nodes: Vec<Node>,
    pub head: Linear,
}

impl Network {
    pub fn new(nodes: Vec<Node>, head: Linear) -> Self {
        Network { nodes, head }
    }

    pub fn param_count(&self) -> usize {
        self.nodes.iter().map(Node::param_len).sum::<usize>()
            + self.head.weights.len()
            + self.head.bias.len()
    }

    /// Flattened trainable parameters in declaration order. Batchnorm
    /// running statistics are state, not parameters, and are excluded.
    pub fn collect_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for node in &self.nodes {
            match node {
                Node::Embedding(e) => out.extend(e.table.iter()),
                Node::ConvBank(convs) => {
                    for c in convs {
                        out.extend(c.weights.iter());
                        out.extend(c.bias.iter());
                    }
                }
                Node::Linear(l) => {
                    out.extend(l.weights.iter());
                    out.extend(l.bias.iter());
                }
                Node::BatchNorm(b) => {
                    out.extend(b.gamma.iter());
                    out.extend(b.beta.iter());
                }
                Node::LayerNorm(l) => {
                    out.extend(l.gamma.iter());
                    out.extend(l.beta.iter());
                }
                Node::Activation(_) | Node::Dropout(_) => {}
            }
        }
        out.extend(self.head.weights.iter());
        out.extend(self.head.bias.iter());
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::dimension(
                "set_params",
                self.param_count(),
                params.len(),
            ));
        }
        let mut at = 0;
        let mut take = |n: usize| {
            let s = &params[at..at + n];
            at += n;
            s
        };
        for node in &mut self.nodes {
            match node {
                Node::Embedding(e) => {
                    let n = e.table.len();
                    e.table
                        .as_slice_mut()
                        .expect("contiguous")
                        .copy_from_slice(take(n));
                }
                Node::ConvBank(convs) => {
                    for c in convs {
                        let n = c.weights.len();
                        c.weights
                            .as_slice_mut()
                            .expect("contiguous")
                            .copy_from_slice(take(n));
                        let n = c.bias.len();
                        c.bias.copy_from_slice(take(n));
                    }
                }
                Node::Linear(l) => {
                    let n = l.weights.len();
                    l.weights
                        .as_slice_mut()
                        .expect("contiguous")
                        .copy_from_slice(take(n));
                    let n = l.bias.len();
                    l.bias.copy_from_slice(take(n));
                }
                Node::BatchNorm(b) => {
                    let n = b.gamma.len();
                    b.gamma.copy_from_slice(take(n));
                    b.beta.copy_from_slice(take(n));
                }
                Node::LayerNorm(l) => {
                    let n = l.gamma.len();
                    l.gamma.copy_from_slice(take(n));
                    l.beta.copy_from_slice(take(n));
                }
                Node::Activation(_) | Node::Dropout(_) => {}
            }
        }
        let n = self.head.weights.len();
        self.head
            .weights
            .as_slice_mut()
            .expect("contiguous")
            .copy_from_slice(take(n));
        let n = self.head.bias.len();
        self.head.bias.copy_from_slice(take(n));
        Ok(())
    }

    fn first_node_forward(&self, input: BatchInput<'_>) -> Result<Tensor2D> {
        match (&self.nodes.first(), input) {
            (Some(Node::Embedding(e)), BatchInput::Tokens(ids)) => e.forward(ids),
            (Some(Node::Embedding(_)), BatchInput::Dense(_)) => Err(Error::Input(
                "embedding network requires token input".into(),
            )),
            (_, BatchInput::Tokens(_)) => Err(Error::Input(
                "dense network cannot consume token input".into(),
            )),
            (_, BatchInput::Dense(d)) => Ok(d.clone()),
        }
    }

    /// Eval-mode forward: deterministic, batch-size-invariant, no state
    /// mutation. Returns the trunk output and head scores.
    pub fn eval_forward(&self, input: BatchInput<'_>) -> Result<(Tensor2D, Vec<f64>)> {
        let mut x = self.first_node_forward(input)?;
        let skip_first = matches!(self.nodes.first(), Some(Node::Embedding(_)));
        for node in self.nodes.iter().skip(skip_first as usize) {
            x = match node {
                Node::Embedding(_) => {
                    return Err(Error::Input("embedding must be the first node".into()))
                }
                Node::ConvBank(convs) => {
                    let mut parts = Vec::with_capacity(convs.len());
                    for c in convs {
                        let (pooled, _) = c.forward(&x)?;
                        parts.push(pooled);
                    }
                    hstack(&parts.iter().collect::<Vec<_>>())
                }
                Node::Linear(l) => l.forward(&x)?,
                Node::BatchNorm(b) => b.forward_eval(&x)?,
                Node::LayerNorm(l) => {
                    let (out, _) = l.forward(&x)?;
                    out
                }
                Node::Activation(a) => a.apply(&x),
                Node::Dropout(_) => x, // identity in eval mode
            };
        }
        let logits = self.head.forward(&x)?;
        let scores: Vec<f64> = logits.column(0).iter().map(|&z| sigmoid(z)).collect();
        Ok((x, scores))
    }

    /// Train-mode forward: records the per-node activations and caches
    /// needed by `backward`, updates batchnorm running statistics, and
    /// draws dropout masks from `rng`.
    pub fn train_forward<R: Rng>(
        &mut self,
        input: BatchInput<'_>,
        rng: &mut R,
    ) -> Result<ForwardTrace> {
        let mut acts: Vec<Tensor2D> = Vec::with_capacity(self.nodes.len());
        let mut caches: Vec<NodeCache> = Vec::with_capacity(self.nodes.len());

        let first = self.first_node_forward(input)?;
        let has_embedding = matches!(self.nodes.first(), Some(Node::Embedding(_)));
        let dense_input = if has_embedding {
            acts.push(first);
            caches.push(NodeCache::Stateless);
            None
        } else {
            Some(first)
        };
        let mut x_idx: Option<usize> = if has_embedding { Some(0) } else { None };

        for node in self.nodes.iter_mut().skip(has_embedding as usize) {
            let (out, cache) = {
                let x = match x_idx {
                    Some(i) => &acts[i],
                    None => dense_input.as_ref().expect("dense input"),
                };
                match node {
                    Node::Embedding(_) => {
                        return Err(Error::Input("embedding must be the first node".into()))
                    }
                    Node::ConvBank(convs) => {
                        let mut parts = Vec::with_capacity(convs.len());
                        let mut maxima = Vec::with_capacity(convs.len());
                        for c in convs.iter() {
                            let (pooled, argmax) = c.forward(x)?;
                            parts.push(pooled);
                            maxima.push(argmax);
                        }
                        (
                            hstack(&parts.iter().collect::<Vec<_>>()),
                            NodeCache::ConvBank(maxima),
                        )
                    }
                    Node::Linear(l) => (l.forward(x)?, NodeCache::Stateless),
                    Node::BatchNorm(b) => {
                        let x_owned = x.clone();
                        let (out, cache) = b.forward_train(&x_owned)?;
                        (out, NodeCache::BatchNorm(cache))
                    }
                    Node::LayerNorm(l) => {
                        let (out, cache) = l.forward(x)?;
                        (out, NodeCache::LayerNorm(cache))
                    }
                    Node::Activation(a) => (a.apply(x), NodeCache::Stateless),
                    Node::Dropout(d) => {
                        let (out, mask) = d.forward_train(x, rng);
                        (out, NodeCache::Dropout(mask))
                    }
                }
            };
            acts.push(out);
            caches.push(cache);
            x_idx = Some(acts.len() - 1);
        }

        let trunk = match x_idx {
            Some(i) => &acts[i],
            None => dense_input.as_ref().expect("dense input"),
        };
        let logits = self.head.forward(trunk)?;
        let scores: Vec<f64> = logits.column(0).iter().map(|&z| sigmoid(z)).collect();
        Ok(ForwardTrace {
            acts,
            caches,
            scores,
        })
    }

    /// Backprop of mean BCE through the head and trunk. `d_logits` is the
    /// loss gradient at the pre-sigmoid head output. Returns the flattened
    /// parameter gradient aligned with `collect_params`.
    pub fn backward(
        &self,
        input: BatchInput<'_>,
        trace: &ForwardTrace,
        d_logits: &Array1<f64>,
    ) -> Result<Vec<f64>> {
        let mut grads = vec![0.0; self.param_count()];

        // Per-node start offsets in the flat gradient vector.
        let mut offsets = Vec::with_capacity(self.nodes.len() + 1);
        let mut at = 0;
        for node in &self.nodes {
            offsets.push(at);
            at += node.param_len();
        }
        let head_offset = at;

        let empty = Array2::zeros((0, 0));
        let trunk: &Tensor2D = match trace.acts.last() {
            Some(t) => t,
            None => match input {
                BatchInput::Dense(d) => d,
                BatchInput::Tokens(_) => {
                    return Err(Error::Input("token input with empty trunk".into()))
                }
            },
        };

        let d_out_head =
            Array2::from_shape_vec((d_logits.len(), 1), d_logits.to_vec()).expect("column");
        let (head_w, head_b) = grads[head_offset..].split_at_mut(self.head.weights.len());
        let mut d = self.head.backward(trunk, &d_out_head, head_w, head_b);

        for i in (0..self.nodes.len()).rev() {
            let node_input: &Tensor2D = if i == 0 {
                match input {
                    BatchInput::Dense(dm) => dm,
                    // The embedding arm consumes the gradient without a
                    // dense input; this placeholder is never read.
                    BatchInput::Tokens(_) => &empty,
                }
            } else {
                &trace.acts[i - 1]
            };
            let start = offsets[i];
            let len = self.nodes[i].param_len();
            let gslice = &mut grads[start..start + len];
            d = match (&self.nodes[i], &trace.caches[i]) {
                (Node::Embedding(e), _) => {
                    let ids = match input {
                        BatchInput::Tokens(t) => t,
                        BatchInput::Dense(_) => {
                            return Err(Error::Input("embedding without token input".into()))
                        }
                    };
                    e.backward(ids, &d, gslice);
                    break;
                }
                (Node::ConvBank(convs), NodeCache::ConvBank(maxima)) => {
                    let mut d_in = Array2::zeros(node_input.dim());
                    let mut col = 0;
                    let mut g_at = 0;
                    for (c, argmax) in convs.iter().zip(maxima) {
                        let w_len = c.weights.len();
                        let b_len = c.bias.len();
                        let (gw, rest) = gslice[g_at..g_at + w_len + b_len].split_at_mut(w_len);
                        c.backward(node_input, argmax, &d, col, gw, rest, &mut d_in);
                        col += c.out_channels;
                        g_at += w_len + b_len;
                    }
                    d_in
                }
                (Node::Linear(l), _) => {
                    let (gw, gb) = gslice.split_at_mut(l.weights.len());
                    l.backward(node_input, &d, gw, gb)
                }
                (Node::BatchNorm(b), NodeCache::BatchNorm(cache)) => {
                    let (gg, gb) = gslice.split_at_mut(b.gamma.len());
                    b.backward(cache, &d, gg, gb)
                }
                (Node::LayerNorm(l), NodeCache::LayerNorm(cache)) => {
                    let (gg, gb) = gslice.split_at_mut(l.gamma.len());
                    l.backward(cache, &d, gg, gb)
                }
                (Node::Activation(a), _) => {
                    let y = &trace.acts[i];
                    let mut d_in = d;
                    for (dv, &yv) in d_in.iter_mut().zip(y.iter()) {
                        *dv *= a.derivative_from_output(yv);
                    }
                    d_in
                }
                (Node::Dropout(dr), NodeCache::Dropout(mask)) => dr.backward(mask, &d),
                _ => return Err(Error::State("trace does not match network".into())),
            };
        }
        Ok(grads)
    }

    /// Forward + loss + backward in one call; the gradient is with respect
    /// to mean BCE between the head scores and `targets`.
    pub fn train_step_grads<R: Rng>(
        &mut self,
        input: BatchInput<'_>,
        targets: &[f64],
        rng: &mut R,
    ) -> Result<(f64, Vec<f64>)> {
        if targets.len() != input.batch_size() {
            return Err(Error::dimension(
                "train_step_grads",
                input.batch_size(),
                targets.len(),
            ));
        }
        let trace = self.train_forward(input, rng)?;
        let loss = bce_loss(&trace.scores, targets)?;
        let d_logits = bce_grad_logits(&trace.scores, targets);
        let grads = self.backward(input, &trace, &d_logits)?;
        Ok((loss, grads))
    }
}
