//! Forward semantics of every tape operation against literal reference
//! implementations, plus shape and domain error behavior.

mod common;

use common::*;
use photongest_core::tensor::{Mode, RunningStats, Tape};
use photongest_core::{Error, Tensor64};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn tensor_new_rejects_mismatched_data() {
    let err = Tensor64::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
    assert!(matches!(err, Error::Dim(_)), "got {err:?}");
}

#[test]
fn affine_matches_oracle_on_random_shapes() {
    let mut r = rng(101);
    for _ in 0..20 {
        let bs = r.random_range(1..5usize);
        let in_f = r.random_range(1..9usize);
        let out_f = r.random_range(1..9usize);
        let x = rand_tensor(vec![bs, in_f], &mut r, -2.0, 2.0);
        let w = rand_tensor(vec![out_f, in_f], &mut r, -2.0, 2.0);
        let b = rand_tensor(vec![out_f], &mut r, -2.0, 2.0);

        let mut tape = Tape::new();
        let (xi, wi, bi) = (tape.leaf(x.clone()), tape.leaf(w.clone()), tape.leaf(b.clone()));
        let y = tape.affine(xi, wi, bi).unwrap();

        let want = affine_oracle(&x.data, &w.data, &b.data, bs, in_f, out_f);
        assert!(max_abs_diff(tape.data(y), &want) < 1e-12);
        assert_eq!(tape.shape(y), [bs, out_f]);
    }
}

#[test]
fn affine_rejects_mismatched_operands() {
    let mut tape: Tape<f64> = Tape::new();
    let x = tape.leaf(Tensor64::zeros(vec![2, 3]));
    let w = tape.leaf(Tensor64::zeros(vec![4, 5]));
    let b = tape.leaf(Tensor64::zeros(vec![4]));
    assert!(matches!(tape.affine(x, w, b), Err(Error::Dim(_))));
}

#[test]
fn conv2d_matches_oracle_on_random_shapes() {
    let mut r = rng(202);
    for _ in 0..20 {
        let bs = r.random_range(1..3usize);
        let c_in = r.random_range(1..4usize);
        let c_out = r.random_range(1..5usize);
        let k = *[1usize, 2, 3].get(r.random_range(0..3usize)).unwrap();
        let stride = r.random_range(1..3usize);
        let pad = r.random_range(0..2usize);
        let h = r.random_range(k.max(3)..9usize);
        let w = r.random_range(k.max(3)..9usize);

        let x = rand_tensor(vec![bs, c_in, h, w], &mut r, -1.5, 1.5);
        let wt = rand_tensor(vec![c_out, c_in, k, k], &mut r, -1.5, 1.5);
        let b = rand_tensor(vec![c_out], &mut r, -1.0, 1.0);

        let mut tape = Tape::new();
        let (xi, wi, bi) = (tape.leaf(x.clone()), tape.leaf(wt.clone()), tape.leaf(b.clone()));
        let y = tape.conv2d(xi, wi, bi, stride, pad).unwrap();

        let (want, h_out, w_out) =
            conv2d_oracle(&x.data, &wt.data, &b.data, (bs, c_in, h, w), (c_out, k, k), stride, pad);
        assert_eq!(tape.shape(y), [bs, c_out, h_out, w_out]);
        assert!(max_abs_diff(tape.data(y), &want) < 1e-11);
    }
}

#[test]
fn conv2d_rejects_oversized_kernel_and_zero_stride() {
    let mut tape: Tape<f64> = Tape::new();
    let x = tape.leaf(Tensor64::zeros(vec![1, 1, 3, 3]));
    let w = tape.leaf(Tensor64::zeros(vec![1, 1, 5, 5]));
    let b = tape.leaf(Tensor64::zeros(vec![1]));
    assert!(matches!(tape.conv2d(x, w, b, 1, 0), Err(Error::Dim(_))));
    let w3 = tape.leaf(Tensor64::zeros(vec![1, 1, 3, 3]));
    assert!(matches!(tape.conv2d(x, w3, b, 0, 0), Err(Error::Domain(_))));
}

#[test]
fn batchnorm_train_matches_oracle() {
    let mut r = rng(303);
    let dims = (3usize, 4usize, 2usize, 5usize);
    let x = rand_tensor(vec![dims.0, dims.1, dims.2, dims.3], &mut r, -3.0, 3.0);
    let gamma = rand_tensor(vec![dims.1], &mut r, 0.5, 1.5);
    let beta = rand_tensor(vec![dims.1], &mut r, -0.5, 0.5);
    let eps = 1e-5;

    let mut state = RunningStats::identity(dims.1);
    let mut tape = Tape::new();
    let (xi, gi, bi) = (tape.leaf(x.clone()), tape.leaf(gamma.clone()), tape.leaf(beta.clone()));
    let y = tape
        .batchnorm2d(xi, gi, bi, &mut state, Mode::Train, 0.1, eps)
        .unwrap();

    let want = batchnorm_train_oracle(&x.data, &gamma.data, &beta.data, dims, eps);
    assert!(max_abs_diff(tape.data(y), &want) < 1e-10);
}

#[test]
fn batchnorm_running_stats_blend_with_momentum() {
    let dims = (2usize, 1usize, 1usize, 2usize);
    let x = Tensor64::new(vec![2, 1, 1, 2], vec![1.0, 2.0, 3.0, 6.0]).unwrap();
    let gamma = Tensor64::filled(vec![1], 1.0);
    let beta = Tensor64::zeros(vec![1]);

    let mut state = RunningStats::identity(1);
    let mut tape = Tape::new();
    let (xi, gi, bi) = (tape.leaf(x), tape.leaf(gamma), tape.leaf(beta));
    tape.batchnorm2d(xi, gi, bi, &mut state, Mode::Train, 0.1, 1e-5)
        .unwrap();

    // batch mean 3, biased var 3.5, unbiased var 3.5 * 4/3
    let n = (dims.0 * dims.2 * dims.3) as f64;
    let unbiased = 3.5 * n / (n - 1.0);
    assert!((state.mean[0] - (0.9 * 0.0 + 0.1 * 3.0)).abs() < 1e-12);
    assert!((state.var[0] - (0.9 * 1.0 + 0.1 * unbiased)).abs() < 1e-12);
}

#[test]
fn batchnorm_eval_reads_running_stats() {
    let x = Tensor64::new(vec![1, 1, 1, 2], vec![3.0, 7.0]).unwrap();
    let gamma = Tensor64::filled(vec![1], 2.0);
    let beta = Tensor64::filled(vec![1], 1.0);
    let mut state = RunningStats::identity(1);
    state.mean[0] = 5.0;
    state.var[0] = 4.0;

    let mut tape = Tape::new();
    let (xi, gi, bi) = (tape.leaf(x), tape.leaf(gamma), tape.leaf(beta));
    let y = tape
        .batchnorm2d(xi, gi, bi, &mut state, Mode::Eval, 0.1, 0.0)
        .unwrap();
    // (3-5)/2 * 2 + 1 = -1, (7-5)/2 * 2 + 1 = 3
    assert!(max_abs_diff(tape.data(y), &[-1.0, 3.0]) < 1e-12);
    // eval must not move the running stats
    assert_eq!(state.mean[0], 5.0);
    assert_eq!(state.var[0], 4.0);
}

#[test]
fn batchnorm_train_needs_two_values_per_channel() {
    let mut tape: Tape<f64> = Tape::new();
    let x = tape.leaf(Tensor64::zeros(vec![1, 2, 1, 1]));
    let g = tape.leaf(Tensor64::filled(vec![2], 1.0));
    let b = tape.leaf(Tensor64::zeros(vec![2]));
    let mut state = RunningStats::identity(2);
    let err = tape
        .batchnorm2d(x, g, b, &mut state, Mode::Train, 0.1, 1e-5)
        .unwrap_err();
    assert!(matches!(err, Error::Dim(_)));
}

#[test]
fn maxpool_matches_oracle() {
    let mut r = rng(404);
    for window in [1usize, 2, 3] {
        let dims = (2usize, 3usize, 2 * window + window, 2 * window);
        let x = rand_tensor(vec![dims.0, dims.1, dims.2, dims.3], &mut r, -4.0, 4.0);
        let mut tape = Tape::new();
        let xi = tape.leaf(x.clone());
        let y = tape.maxpool2d(xi, window).unwrap();
        let want = maxpool_oracle(&x.data, dims, window);
        assert_eq!(tape.data(y), &want[..]);
    }
}

#[test]
fn maxpool_rejects_non_dividing_extent() {
    let mut tape: Tape<f64> = Tape::new();
    let x = tape.leaf(Tensor64::zeros(vec![1, 1, 5, 4]));
    assert!(matches!(tape.maxpool2d(x, 2), Err(Error::Dim(_))));
}

#[test]
fn relu_clamps_negatives() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor64::new(vec![4], vec![-2.0, -0.0, 0.5, 3.0]).unwrap());
    let y = tape.relu(x).unwrap();
    assert_eq!(tape.data(y), &[0.0, 0.0, 0.5, 3.0]);
}

#[test]
fn softmax_ce_matches_oracle_and_is_shift_invariant() {
    let mut r = rng(505);
    for _ in 0..10 {
        let bs = r.random_range(1..6usize);
        let k = r.random_range(2..7usize);
        let logits = rand_tensor(vec![bs, k], &mut r, -5.0, 5.0);
        let labels: Vec<usize> = (0..bs).map(|_| r.random_range(0..k)).collect();

        let mut tape = Tape::new();
        let li = tape.leaf(logits.clone());
        let loss = tape.softmax_cross_entropy(li, &labels).unwrap();
        let want = softmax_ce_oracle(&logits.data, &labels, bs, k);
        assert!((tape.data(loss)[0] - want).abs() < 1e-12);

        let mut shifted = logits.clone();
        for v in &mut shifted.data {
            *v += 1000.0;
        }
        let mut tape2 = Tape::new();
        let si = tape2.leaf(shifted);
        let loss2 = tape2.softmax_cross_entropy(si, &labels).unwrap();
        assert!((tape2.data(loss2)[0] - want).abs() < 1e-9);
        assert!(tape2.data(loss2)[0].is_finite());
    }
}

#[test]
fn softmax_ce_rejects_bad_labels() {
    let mut tape = Tape::new();
    let l = tape.leaf(Tensor64::zeros(vec![2, 3]));
    assert!(matches!(
        tape.softmax_cross_entropy(l, &[0, 3]),
        Err(Error::Index(_))
    ));
    assert!(matches!(
        tape.softmax_cross_entropy(l, &[0]),
        Err(Error::Dim(_))
    ));
}

#[test]
fn elementwise_ops_follow_their_formulas() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor64::new(vec![3], vec![1.0, -2.0, 3.0]).unwrap());
    let b = tape.leaf(Tensor64::new(vec![3], vec![0.5, 4.0, -1.0]).unwrap());
    let s = tape.add(a, b).unwrap();
    assert_eq!(tape.data(s), &[1.5, 2.0, 2.0]);
    let p = tape.mul(a, b).unwrap();
    assert_eq!(tape.data(p), &[0.5, -8.0, -3.0]);
    let c = tape.scale(a, -2.0).unwrap();
    assert_eq!(tape.data(c), &[-2.0, 4.0, -6.0]);
    let t = tape.sum(a).unwrap();
    assert_eq!(tape.data(t), &[2.0]);

    let bad = tape.leaf(Tensor64::zeros(vec![2]));
    assert!(matches!(tape.add(a, bad), Err(Error::Dim(_))));
}

#[test]
fn reshape_preserves_data_and_checks_numel() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor64::new(vec![2, 3], (0..6).map(|i| i as f64).collect()).unwrap());
    let y = tape.reshape(x, vec![3, 2]).unwrap();
    assert_eq!(tape.shape(y), [3, 2]);
    assert_eq!(tape.data(y), tape.data(x));
    assert!(matches!(tape.reshape(x, vec![4, 2]), Err(Error::Dim(_))));
}

#[test]
fn crop2d_keeps_the_top_left_window() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor64::new(vec![1, 1, 3, 3], (0..9).map(|i| i as f64).collect()).unwrap());
    let y = tape.crop2d(x, 2, 2).unwrap();
    assert_eq!(tape.shape(y), [1, 1, 2, 2]);
    assert_eq!(tape.data(y), &[0.0, 1.0, 3.0, 4.0]);
    assert!(matches!(tape.crop2d(x, 4, 2), Err(Error::Dim(_))));
}

#[test]
fn dropout_mask_is_an_elementwise_product() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor64::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let y = tape.dropout_masked(x, vec![2.0, 0.0, 2.0, 0.0]).unwrap();
    assert_eq!(tape.data(y), &[2.0, 0.0, 6.0, 0.0]);
    assert!(tape.dropout_masked(x, vec![1.0; 3]).is_err());
}

#[test]
fn spike_thresholds_at_v_th_inclusive() {
    let mut tape = Tape::new();
    let h = tape.leaf(Tensor64::new(vec![5], vec![-1.0, 0.99, 1.0, 1.01, 7.0]).unwrap());
    let s = tape.spike(h, 4.0, 1.0).unwrap();
    assert_eq!(tape.data(s), &[0.0, 0.0, 1.0, 1.0, 1.0]);
    assert!(matches!(tape.spike(h, 0.0, 1.0), Err(Error::Domain(_))));
    assert!(matches!(tape.spike(h, f64::NAN, 1.0), Err(Error::Domain(_))));
}

#[test]
fn hard_reset_zeroes_fired_and_keeps_the_rest() {
    let mut tape = Tape::new();
    let h = tape.leaf(Tensor64::new(vec![3], vec![0.4, 1.2, 2.5]).unwrap());
    let s = tape.leaf(Tensor64::new(vec![3], vec![0.0, 1.0, 1.0]).unwrap());
    let v = tape.hard_reset(h, s).unwrap();
    assert!(max_abs_diff(tape.data(v), &[0.4, 0.0, 0.0]) < 1e-15);
}

#[test]
fn backward_runs_once_per_tape() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor64::filled(vec![2], 3.0).with_grad());
    let y = tape.sum(x).unwrap();
    tape.backward(y).unwrap();
    assert!(matches!(tape.backward(y), Err(Error::Contract(_))));
}

#[test]
fn disconnected_trainable_leaves_read_back_zero_grads() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor64::filled(vec![2], 3.0).with_grad());
    let unused = tape.leaf(Tensor64::filled(vec![4], 1.0).with_grad());
    let y = tape.sum(x).unwrap();
    tape.backward(y).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0]);
    assert_eq!(tape.grad(unused).unwrap(), &[0.0; 4]);
}
