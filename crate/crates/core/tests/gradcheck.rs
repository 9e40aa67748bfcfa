//! Finite-difference verification of the differentiation engine, one
//! primitive at a time and through composed networks.

mod common;

use std::sync::Arc;

use common::{fd_gradients, loss_value, max_rel_err, random_tensor, TwoLayerNet, FD_H};
use metaheac::model::bce_loss;
use metaheac::params::{grad, meta_grad, BoundParams, ParamSet};
use metaheac::rng::rng_for;
use metaheac::tape::{NodeId, Tape};
use metaheac::tensor::Tensor;
use metaheac::Result;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;

/// Uniform in [-2, 2], nudged away from zero so kinked primitives (relu,
/// clamp) are differentiable at every sampled point.
fn random_smooth_input(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let v: f64 = rng.gen_range(-2.0..2.0);
            if v.abs() < 1e-3 {
                v + 2e-3_f64.copysign(if v >= 0.0 { 1.0 } else { -1.0 })
            } else {
                v
            }
        })
        .collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

fn check_case<F>(name: &str, theta: &ParamSet, build: F)
where
    F: Fn(&mut Tape, &BoundParams) -> Result<NodeId> + Copy,
{
    let (_, analytic) = grad(theta, build).unwrap_or_else(|e| panic!("{name}: {e}"));
    let numeric = fd_gradients(theta, |p| loss_value(p, build), FD_H);
    let err = max_rel_err(&analytic, &numeric);
    assert!(err < TOL, "{name}: max relative error {err}");
}

#[test]
fn every_primitive_matches_finite_differences() {
    let mut rng = rng_for(2024, "primitive-fd");

    // Two parameter tensors exercised through each primitive; constants
    // keep the loss scalar.
    let x = random_smooth_input(3, 4, &mut rng);
    let y = random_smooth_input(3, 4, &mut rng);
    let w = random_tensor(4, 2, &mut rng, -1.0, 1.0);
    let bias = random_tensor(1, 4, &mut rng, -1.0, 1.0);
    let mix = random_tensor(3, 4, &mut rng, 0.5, 1.5);

    let mut theta = ParamSet::new();
    theta.insert("x", x).unwrap();
    theta.insert("y", y).unwrap();
    theta.insert("w", w).unwrap();
    theta.insert("bias", bias).unwrap();

    let weighted_sum = move |tape: &mut Tape, node: NodeId| -> Result<NodeId> {
        let c = tape.constant(mix.clone());
        let prod = tape.mul(node, c)?;
        Ok(tape.sum_all(prod))
    };

    check_case("matmul", &theta, |tape, p| {
        let x = p.node("x")?;
        let w = p.node("w")?;
        let out = tape.matmul(x, w)?;
        Ok(tape.sum_all(out))
    });
    check_case("transpose", &theta, |tape, p| {
        let x = p.node("x")?;
        let t = tape.transpose(x);
        let tt = tape.matmul(t, x)?;
        Ok(tape.sum_all(tt))
    });
    check_case("add", &theta, |tape, p| {
        let x = p.node("x")?;
        let y = p.node("y")?;
        let s = tape.add(x, y)?;
        weighted_sum(tape, s)
    });
    check_case("sub_mul", &theta, |tape, p| {
        let x = p.node("x")?;
        let y = p.node("y")?;
        let d = tape.sub(x, y)?;
        let m = tape.mul(d, x)?;
        weighted_sum(tape, m)
    });
    check_case("div", &theta, |tape, p| {
        let x = p.node("x")?;
        let y = p.node("y")?;
        // Keep the denominator away from zero.
        let y2 = tape.mul(y, y)?;
        let denom = tape.add_scalar(y2, 1.0);
        let q = tape.div(x, denom)?;
        weighted_sum(tape, q)
    });
    check_case("add_bias", &theta, |tape, p| {
        let x = p.node("x")?;
        let b = p.node("bias")?;
        let s = tape.add_bias(x, b)?;
        weighted_sum(tape, s)
    });
    check_case("scale_add_scalar", &theta, |tape, p| {
        let x = p.node("x")?;
        let s = tape.scale(x, -1.7);
        let s = tape.add_scalar(s, 0.3);
        weighted_sum(tape, s)
    });
    check_case("relu", &theta, |tape, p| {
        let x = p.node("x")?;
        let r = tape.relu(x);
        weighted_sum(tape, r)
    });
    check_case("sigmoid", &theta, |tape, p| {
        let x = p.node("x")?;
        let s = tape.sigmoid(x);
        weighted_sum(tape, s)
    });
    check_case("softmax_rows", &theta, |tape, p| {
        let x = p.node("x")?;
        let s = tape.softmax_rows(x);
        weighted_sum(tape, s)
    });
    check_case("log", &theta, |tape, p| {
        let x = p.node("x")?;
        let x2 = tape.mul(x, x)?;
        let pos = tape.add_scalar(x2, 0.5);
        let l = tape.log(pos);
        weighted_sum(tape, l)
    });
    check_case("clamp", &theta, |tape, p| {
        let x = p.node("x")?;
        let c = tape.clamp(x, -1.2, 1.2);
        weighted_sum(tape, c)
    });
    check_case("mean_all", &theta, |tape, p| {
        let x = p.node("x")?;
        Ok(tape.mean_all(x))
    });
    check_case("col_row_sums", &theta, |tape, p| {
        let x = p.node("x")?;
        let cs = tape.col_sum(x);
        let rs = tape.row_sum(x);
        let csb = tape.broadcast_rows(cs, 3)?;
        let rsb = tape.broadcast_cols(rs, 4)?;
        let m = tape.mul(csb, rsb)?;
        weighted_sum(tape, m)
    });
    check_case("concat_slice_pad", &theta, |tape, p| {
        let x = p.node("x")?;
        let y = p.node("y")?;
        let cat = tape.concat_cols(&[x, y])?;
        let sl = tape.slice_cols(cat, 2, 4)?;
        let padded = tape.pad_cols(sl, 1, 2);
        let back = tape.slice_cols(padded, 1, 4)?;
        weighted_sum(tape, back)
    });
    check_case("gather_scatter", &theta, |tape, p| {
        let x = p.node("x")?;
        let g = tape.gather_rows(x, Arc::new(vec![2, 0, 2, 1]))?;
        let s = tape.scatter_add_rows(g, Arc::new(vec![0, 1, 1, 2]), 3)?;
        Ok(tape.sum_all(s))
    });
    check_case("segment_mean_spread", &theta, |tape, p| {
        let x = p.node("x")?;
        let m = tape.segment_mean(x, Arc::new(vec![0, 2, 3]))?;
        let sp = tape.segment_spread(m, Arc::new(vec![0, 1, 3]))?;
        Ok(tape.sum_all(sp))
    });
    check_case("reshape", &theta, |tape, p| {
        let x = p.node("x")?;
        let r = tape.reshape(x, 4, 3)?;
        let m = tape.matmul(r, x)?;
        Ok(tape.sum_all(m))
    });
    check_case("bce", &theta, |tape, p| {
        let x = p.node("w")?; // [4, 2] -> 8 scores
        let flat = tape.reshape(x, 8, 1)?;
        let probs = tape.sigmoid(flat);
        bce_loss(tape, probs, &[1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0], false)
    });
}

#[test]
fn meta_gradient_matches_composed_objective_fd() {
    let mut rng = rng_for(7, "meta-fd");
    for case in 0..10 {
        let d = rng.gen_range(2..=4);
        let h = rng.gen_range(2..=3);
        let (theta, net) = TwoLayerNet::random(d, h, 6, &mut rng);
        assert!(theta.numel() <= 50);
        let alpha = 0.05;

        let mg = meta_grad(
            &theta,
            |t, p| net.loss_a(t, p),
            |t, p| net.loss_b(t, p),
            alpha,
            true,
        )
        .unwrap();

        // F(theta) = loss_b(theta - alpha * grad loss_a(theta)), evaluated
        // forward only: the inner gradient is first-order (checked above),
        // the outer difference is numeric.
        let composed = |p: &ParamSet| {
            let (_, ga) = grad(p, |t, b| net.loss_a(t, b)).unwrap();
            let mut adapted = p.clone();
            adapted.add_scaled(&ga, -alpha);
            loss_value(&adapted, |t, b| net.loss_b(t, b))
        };
        let numeric = fd_gradients(&theta, composed, FD_H);
        let err = max_rel_err(&mg.grads, &numeric);
        assert!(err < TOL, "case {case}: meta-gradient error {err}");
    }
}

#[test]
fn first_order_mode_exact_on_linear_inner_loss() {
    let mut rng = rng_for(8, "linear-inner");
    let (theta, net) = TwoLayerNet::random(3, 2, 5, &mut rng);
    // Linear inner loss: a fixed weighted sum of every parameter entry.
    let coeffs: ParamSet = theta
        .iter()
        .map(|(n, t)| {
            (
                n.clone(),
                random_tensor(t.rows(), t.cols(), &mut rng, -1.0, 1.0),
            )
        })
        .collect();
    let linear = |tape: &mut Tape, p: &BoundParams| -> Result<NodeId> {
        let mut acc: Option<NodeId> = None;
        for (name, c) in coeffs.iter() {
            let c = tape.constant(c.clone());
            let x = p.node(name)?;
            let prod = tape.mul(c, x)?;
            let s = tape.sum_all(prod);
            acc = Some(match acc {
                None => s,
                Some(a) => tape.add(a, s)?,
            });
        }
        Ok(acc.unwrap())
    };

    let second = meta_grad(&theta, linear, |t, p| net.loss_b(t, p), 0.03, true).unwrap();
    let first = meta_grad(&theta, linear, |t, p| net.loss_b(t, p), 0.03, false).unwrap();
    for ((_, a), (_, b)) in second.grads.iter().zip(first.grads.iter()) {
        assert_eq!(a.data(), b.data(), "curvature-free inner loss");
    }
}
