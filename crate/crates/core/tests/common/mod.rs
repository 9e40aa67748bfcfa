//! Shared oracle helpers for the integration tests.
//!
//! The finite-difference gradient here is the independent check for the
//! tape's reverse-mode results: it only ever evaluates losses forward,
//! never touching the backward pass it verifies.

#![allow(dead_code)] // each test binary uses a subset of these helpers

use metaheac::model::bce_loss;
use metaheac::params::{BoundParams, ParamSet};
use metaheac::tape::{NodeId, Tape};
use metaheac::tensor::Tensor;
use metaheac::Result;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Central-difference step; balances truncation against rounding in f64.
pub const FD_H: f64 = 1e-5;

/// Forward-only loss evaluation at `theta`.
pub fn loss_value<F>(theta: &ParamSet, build: F) -> f64
where
    F: FnOnce(&mut Tape, &BoundParams) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let bound = theta.bind(&mut tape);
    let root = build(&mut tape, &bound).expect("loss builds");
    tape.value(root).item()
}

/// Central finite differences of `eval` over every scalar in `theta`.
pub fn fd_gradients<F>(theta: &ParamSet, eval: F, h: f64) -> ParamSet
where
    F: Fn(&ParamSet) -> f64,
{
    let mut grads = theta.zeros_like();
    for (name, tensor) in theta.iter() {
        let n = tensor.len();
        for i in 0..n {
            let mut plus = theta.clone();
            plus.get_mut(name).unwrap().data_mut()[i] += h;
            let mut minus = theta.clone();
            minus.get_mut(name).unwrap().data_mut()[i] -= h;
            let df = (eval(&plus) - eval(&minus)) / (2.0 * h);
            grads.get_mut(name).unwrap().data_mut()[i] = df;
        }
    }
    grads
}

/// Worst relative error between two congruent sets, with an absolute
/// floor of 1 in the denominator so near-zero gradients compare absolutely.
pub fn max_rel_err(a: &ParamSet, b: &ParamSet) -> f64 {
    let mut worst: f64 = 0.0;
    for ((_, ta), (_, tb)) in a.iter().zip(b.iter()) {
        for (&x, &y) in ta.data().iter().zip(tb.data()) {
            let denom = 1.0f64.max(x.abs()).max(y.abs());
            worst = worst.max((x - y).abs() / denom);
        }
    }
    worst
}

pub fn random_tensor(rows: usize, cols: usize, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

/// A small two-layer network with a sigmoid hidden layer, so composed
/// objectives stay twice differentiable; used to check meta-gradients
/// against finite differences of the full inner-step composition.
pub struct TwoLayerNet {
    pub inputs_a: Tensor,
    pub labels_a: Vec<f64>,
    pub inputs_b: Tensor,
    pub labels_b: Vec<f64>,
}

impl TwoLayerNet {
    pub fn random(d: usize, h: usize, batch: usize, rng: &mut ChaCha8Rng) -> (ParamSet, Self) {
        let mut theta = ParamSet::new();
        theta
            .insert("w1", random_tensor(d, h, rng, -0.8, 0.8))
            .unwrap();
        theta
            .insert("b1", random_tensor(1, h, rng, -0.3, 0.3))
            .unwrap();
        theta
            .insert("w2", random_tensor(h, 1, rng, -0.8, 0.8))
            .unwrap();
        theta
            .insert("b2", random_tensor(1, 1, rng, -0.3, 0.3))
            .unwrap();
        let net = TwoLayerNet {
            inputs_a: random_tensor(batch, d, rng, -1.5, 1.5),
            labels_a: (0..batch)
                .map(|_| f64::from(rng.gen_range(0..=1)))
                .collect(),
            inputs_b: random_tensor(batch, d, rng, -1.5, 1.5),
            labels_b: (0..batch)
                .map(|_| f64::from(rng.gen_range(0..=1)))
                .collect(),
        };
        (theta, net)
    }

    fn loss_on(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        inputs: &Tensor,
        labels: &[f64],
    ) -> Result<NodeId> {
        let x = tape.constant(inputs.clone());
        let w1 = p.node("w1")?;
        let b1 = p.node("b1")?;
        let w2 = p.node("w2")?;
        let b2 = p.node("b2")?;
        let h = tape.matmul(x, w1)?;
        let h = tape.add_bias(h, b1)?;
        let h = tape.sigmoid(h);
        let z = tape.matmul(h, w2)?;
        let z = tape.add_bias(z, b2)?;
        let probs = tape.sigmoid(z);
        bce_loss(tape, probs, labels, false)
    }

    pub fn loss_a(&self, tape: &mut Tape, p: &BoundParams) -> Result<NodeId> {
        self.loss_on(tape, p, &self.inputs_a, &self.labels_a)
    }

    pub fn loss_b(&self, tape: &mut Tape, p: &BoundParams) -> Result<NodeId> {
        self.loss_on(tape, p, &self.inputs_b, &self.labels_b)
    }
}
