mod common;

use common::checks::*;
use uspgnn::diffkernel::{Tape, Tensor};
use uspgnn::objective::{contrastive_loss, predict, recom_loss, total_loss, RecomLoss};

const TOL: f64 = 1e-10;

#[test]
fn ggnn_step_matches_dense() {
    for seed in 0..50 {
        let err = ggnn_error(seed);
        assert!(err < TOL, "seed {seed}: {err:e}");
    }
}

#[test]
fn hetero_step_matches_dense() {
    for seed in 0..50 {
        let err = hetero_error(seed);
        assert!(err < TOL, "seed {seed}: {err:e}");
    }
}

#[test]
fn readout_matches_dense() {
    for seed in 0..50 {
        let err = readout_error(seed);
        assert!(err < TOL, "seed {seed}: {err:e}");
    }
}

#[test]
fn simnet_matches_dense() {
    for seed in 0..50 {
        let err = simnet_error(seed);
        assert!(err < TOL, "seed {seed}: {err:e}");
    }
}

#[test]
fn fuse_matches_dense() {
    for seed in 0..50 {
        let (err, betas) = fuse_error(seed);
        assert!(err < TOL, "seed {seed}: {err:e}");
        assert!(betas.iter().all(|&b| b > 0.0 && b < 1.0));
    }
}

#[test]
fn zero_prediction_vector_is_uniform() {
    let mut tape = Tape::new();
    let s = tape.constant(Tensor::zeros(1, 3));
    let items = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 0.0], vec![4.0, 4.0, 4.0]]));
    let p = predict(&mut tape, s, items).unwrap();
    for &v in tape.value(p).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn three_item_prediction_and_bce() {
    let mut tape = Tape::new();
    // dots (1, 0, 0)
    let s = tape.constant(Tensor::row_vector(&[1.0, 0.0]));
    let items = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]]));
    let p = predict(&mut tape, s, items).unwrap();
    let e = std::f64::consts::E;
    let want = [e / (e + 2.0), 1.0 / (e + 2.0), 1.0 / (e + 2.0)];
    for (got, want) in tape.value(p).data().iter().zip(want) {
        assert!((got - want).abs() < 1e-15);
    }
    assert!((want[0] - 0.5761).abs() < 5e-5 && (want[1] - 0.2119).abs() < 5e-5);

    let logits = tape.matmul_t(s, items).unwrap();
    let l = recom_loss(&mut tape, logits, &vec![0].into(), RecomLoss::BceOverSoftmax).unwrap();
    let oracle = -(want[0].ln() + 2.0 * (1.0 - want[1]).ln());
    assert!((tape.value(l).item() - oracle).abs() < 1e-14);
    assert!((oracle - 1.0278).abs() < 5e-5);

    let ce = recom_loss(&mut tape, logits, &vec![0].into(), RecomLoss::CrossEntropy).unwrap();
    assert!((tape.value(ce).item() + want[0].ln()).abs() < 1e-14);
}

#[test]
fn recom_loss_vanishes_when_target_dominates() {
    let mut tape = Tape::new();
    let logits = tape.constant(Tensor::row_vector(&[60.0, 0.0, 0.0, 0.0]));
    let l = recom_loss(&mut tape, logits, &vec![0].into(), RecomLoss::BceOverSoftmax).unwrap();
    assert!(tape.value(l).item() < 1e-11);
    assert!(recom_loss(&mut tape, logits, &vec![4].into(), RecomLoss::BceOverSoftmax).is_err());
}

#[test]
fn contrastive_examples() {
    let mut tape = Tape::new();
    // anchor and positive identical (cos 1), two orthogonal negatives (cos 0)
    let a = tape.constant(Tensor::row_vector(&[1.0, 0.0, 0.0]));
    let pos = tape.constant(Tensor::row_vector(&[2.0, 0.0, 0.0]));
    let neg = tape.constant(Tensor::from_rows(&[vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 3.0]]));
    let l = contrastive_loss(&mut tape, a, pos, Some((neg, 2)), 0.5).unwrap();
    let e2 = 2f64.exp();
    let oracle = -(e2 / (e2 + 2.0)).ln();
    assert!((tape.value(l).item() - oracle).abs() < 1e-14);
    assert!((oracle - 0.2395).abs() < 5e-5);

    // one negative as similar as the positive
    let same = tape.constant(Tensor::row_vector(&[0.6, 0.8, 0.0]));
    let a2 = tape.constant(Tensor::row_vector(&[1.0, 1.0, 0.0]));
    let neg = tape.constant(Tensor::row_vector(&[1.2, 1.6, 0.0]));
    let l = contrastive_loss(&mut tape, a2, same, Some((neg, 1)), 0.3).unwrap();
    assert!((tape.value(l).item() - 2f64.ln()).abs() < 1e-14);
}

#[test]
fn total_loss_example() {
    let mut tape = Tape::new();
    let r = tape.constant(Tensor::scalar(2.0));
    let c = tape.constant(Tensor::scalar(1.0));
    let t = total_loss(&mut tape, r, c, 0.3).unwrap();
    assert!((tape.value(t).item() - 1.7).abs() < 1e-15);
}
