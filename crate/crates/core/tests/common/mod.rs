//! Shared helpers for integration tests: the central finite-difference
//! gradient oracle and small network builders.

use malfusion::nn::{
    bce_grad_logits, bce_loss, Activation, BatchInput, BatchNorm, Conv1d, Dropout, Embedding,
    LayerNorm, Linear, Network, Node, Tensor2D, TokenMatrix,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub enum OwnedInput {
    Tokens(TokenMatrix),
    Dense(Tensor2D),
}

impl OwnedInput {
    pub fn as_batch(&self) -> BatchInput<'_> {
        match self {
            OwnedInput::Tokens(t) => BatchInput::Tokens(t),
            OwnedInput::Dense(d) => BatchInput::Dense(d),
        }
    }
}

/// Train-mode BCE loss at the given parameter vector, on a fresh clone of
/// the network state (batchnorm statistics are not carried across calls).
fn loss_at(net: &Network, params: &[f64], input: &OwnedInput, targets: &[f64]) -> f64 {
    let mut probe = clone_network(net);
    probe.set_params(params).unwrap();
    let trace = probe
        .train_forward(input.as_batch(), &mut rng(0))
        .unwrap();
    bce_loss(&trace.scores, targets).unwrap()
}

/// Networks hold no Clone impl (traces reference them); rebuild via params
/// plus structural copy.
pub fn clone_network(net: &Network) -> Network {
    let nodes = net
        .nodes
        .iter()
        .map(|n| match n {
            Node::Embedding(e) => Node::Embedding(e.clone()),
            Node::ConvBank(cs) => Node::ConvBank(cs.clone()),
            Node::Linear(l) => Node::Linear(l.clone()),
            Node::BatchNorm(b) => Node::BatchNorm(b.clone()),
            Node::LayerNorm(l) => Node::LayerNorm(l.clone()),
            Node::Activation(a) => Node::Activation(*a),
            Node::Dropout(d) => Node::Dropout(d.clone()),
        })
        .collect();
    Network::new(nodes, net.head.clone())
}

/// Central finite-difference check of every parameter gradient.
/// Returns the worst (abs_err, rel_err) pair observed.
pub fn gradient_check(
    net: &Network,
    input: &OwnedInput,
    targets: &[f64],
    perturbation: f64,
) -> (f64, f64) {
    let mut work = clone_network(net);
    let params = work.collect_params();
    let trace = work.train_forward(input.as_batch(), &mut rng(0)).unwrap();
    let d_logits = bce_grad_logits(&trace.scores, targets);
    let analytic = work.backward(input.as_batch(), &trace, &d_logits).unwrap();

    let mut worst_abs = 0.0f64;
    let mut worst_rel = 0.0f64;
    for i in 0..params.len() {
        let mut plus = params.clone();
        plus[i] += perturbation;
        let mut minus = params.clone();
        minus[i] -= perturbation;
        let numeric =
            (loss_at(net, &plus, input, targets) - loss_at(net, &minus, input, targets))
                / (2.0 * perturbation);
        let abs_err = (analytic[i] - numeric).abs();
        let rel_err = abs_err / analytic[i].abs().max(numeric.abs()).max(1e-8);
        if abs_err > worst_abs {
            worst_abs = abs_err;
        }
        if rel_err > worst_rel && abs_err > 1e-5 {
            worst_rel = rel_err;
        }
    }
    (worst_abs, worst_rel)
}

/// Seeded small network containing the requested layer kind, with an input
/// batch and binary targets to drive the check.
pub fn layer_kind_fixture(kind: &str, seed: u64) -> (Network, OwnedInput, Vec<f64>) {
    let mut r = rng(seed);
    let batch = 6;
    let targets: Vec<f64> = (0..batch).map(|_| f64::from(r.gen_range(0..2))).collect();
    match kind {
        "embedding" | "conv1d" => {
            // Rejection-sample until every pooled channel's best window beats
            // the runner-up by a clear margin; otherwise the 1e-4 perturbation
            // can flip the argmax and the finite difference straddles the
            // max-pool kink.
            // A 1e-4 parameter perturbation shifts any window activation by
            // at most ~1e-4 here, so a 2e-3 margin keeps the argmax stable.
            for salt in 0..10_000u64 {
                let mut r = rng(seed.wrapping_mul(1000) + salt);
                let emb = Embedding::new(9, 3, 7, &mut r);
                let convs =
                    vec![Conv1d::new(2, 3, 4, &mut r), Conv1d::new(3, 3, 4, &mut r)];
                // Distinct ids per row: identical windows would tie exactly
                // and no amount of resampling could separate them.
                let mut ids = TokenMatrix::zeros((batch, 7));
                for mut row in ids.rows_mut() {
                    let mut pool: Vec<u32> = (0..9).collect();
                    for slot in row.iter_mut() {
                        let pick = r.gen_range(0..pool.len());
                        *slot = pool.swap_remove(pick);
                    }
                }
                let embedded = emb.forward(&ids).unwrap();
                if pool_margin(&convs, &embedded) > 0.002 {
                    let head = Linear::new(8, 1, &mut r);
                    let net =
                        Network::new(vec![Node::Embedding(emb), Node::ConvBank(convs)], head);
                    return (net, OwnedInput::Tokens(ids), targets);
                }
            }
            panic!("no pooling-separated fixture found for seed {seed}");
        }
        "linear" => {
            let net = Network::new(
                vec![
                    Node::Linear(Linear::new(5, 4, &mut r)),
                    Node::Activation(Activation::Elu),
                    Node::Linear(Linear::new(4, 3, &mut r)),
                    Node::Activation(Activation::Sigmoid),
                ],
                Linear::new(3, 1, &mut r),
            );
            let x = Tensor2D::from_shape_fn((batch, 5), |_| r.gen_range(-1.5..1.5));
            (net, OwnedInput::Dense(x), targets)
        }
        "batchnorm" => {
            let net = Network::new(
                vec![
                    Node::Linear(Linear::new(5, 4, &mut r)),
                    Node::BatchNorm(BatchNorm::new(4)),
                    Node::Activation(Activation::Relu),
                    Node::Dropout(Dropout::new(0.0).unwrap()),
                ],
                Linear::new(4, 1, &mut r),
            );
            let x = Tensor2D::from_shape_fn((batch, 5), |_| r.gen_range(-1.5..1.5));
            (net, OwnedInput::Dense(x), targets)
        }
        "layernorm" => {
            let net = Network::new(
                vec![
                    Node::Linear(Linear::new(5, 6, &mut r)),
                    Node::LayerNorm(LayerNorm::new(6)),
                    Node::Activation(Activation::Elu),
                ],
                Linear::new(6, 1, &mut r),
            );
            let x = Tensor2D::from_shape_fn((batch, 5), |_| r.gen_range(-1.5..1.5));
            (net, OwnedInput::Dense(x), targets)
        }
        other => panic!("unknown layer kind {other}"),
    }
}

pub const LAYER_KINDS: [&str; 5] = ["embedding", "conv1d", "linear", "batchnorm", "layernorm"];

/// Smallest gap between a pooled channel's best and second-best window
/// activation, computed by direct sliding-window convolution.
fn pool_margin(convs: &[Conv1d], embedded: &Tensor2D) -> f64 {
    let mut margin = f64::INFINITY;
    for c in convs {
        let n = embedded.ncols() / c.in_channels;
        let t_out = n - c.kernel_width + 1;
        for b in 0..embedded.nrows() {
            for ch in 0..c.out_channels {
                let mut best = f64::NEG_INFINITY;
                let mut second = f64::NEG_INFINITY;
                for t in 0..t_out {
                    let mut acc = 0.0;
                    for j in 0..c.kernel_width * c.in_channels {
                        acc += embedded[(b, t * c.in_channels + j)] * c.weights[(ch, j)];
                    }
                    if acc > best {
                        second = best;
                        best = acc;
                    } else if acc > second {
                        second = acc;
                    }
                }
                margin = margin.min(best - second);
            }
        }
    }
    margin
}
