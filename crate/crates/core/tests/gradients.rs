mod common;

use common::*;
use nsp_core::tensor::{self, AdamState, Tensor};

#[test]
fn every_op_matches_central_differences() {
    for seed in 0..3 {
        for (name, rep) in op_gradient_suite(seed) {
            assert!(rep.passes(), "{name} (seed {seed}): max rel err {:.3e} over {}", rep.max_rel, rep.checked);
        }
    }
}

#[test]
fn l1_gradient_absolute_difference_bound() {
    let mut r = rng(9);
    let pred = uniform(&mut r, 24, 0.0, 1.0);
    let target: Vec<f64> = pred.iter().zip(away_from_zero(&mut r, 24, 0.01)).map(|(p, d)| p + 0.2 * d).collect();
    let p = Tensor::param(&[24], pred.clone()).unwrap();
    let tt = Tensor::new(&[24], target.clone()).unwrap();
    tensor::backward(&tensor::l1_loss(&p, &tt).unwrap()).unwrap();
    let g = p.grad().unwrap();
    for j in 0..24 {
        let f = |x: f64| {
            let mut v = pred.clone();
            v[j] = x;
            v.iter().zip(&target).map(|(a, b)| (a - b).abs()).sum::<f64>() / 24.0
        };
        let numeric = (f(pred[j] + FD_STEP) - f(pred[j] - FD_STEP)) / (2.0 * FD_STEP);
        assert!((g[j] - numeric).abs() <= 1e-4);
    }
}

#[test]
fn two_layer_conv_relu_net() {
    for seed in 0..3 {
        let rep = check_two_layer_net(seed);
        assert!(rep.passes(), "seed {seed}: {rep:?}");
    }
}

#[test]
fn full_model_parameter_gradients() {
    for t in [1, 2] {
        let rep = check_full_model(t, 3);
        assert!(rep.passes(), "t={t}: {rep:?}");
    }
}

#[test]
fn masked_center_gradient_is_exactly_zero_in_a_net() {
    let mut r = rng(4);
    let x = Tensor::new(&[2, 6, 6], uniform(&mut r, 72, -1.0, 1.0)).unwrap();
    let w = Tensor::param(&[3, 2, 3, 3], uniform(&mut r, 54, -1.0, 1.0)).unwrap();
    let b = Tensor::param(&[3], vec![0.1; 3]).unwrap();
    let y = tensor::conv2d(&x, &w, &b, 2, true).unwrap();
    tensor::backward(&weighted_sum(&tensor::relu(&y), 8)).unwrap();
    let g = w.grad().unwrap();
    for o in 0..3 {
        for i in 0..2 {
            assert_eq!(g[(o * 2 + i) * 9 + 4].to_bits(), 0.0f64.to_bits());
        }
    }
}

#[test]
fn forward_backward_and_adam_are_deterministic() {
    let run = || {
        let mut r = rng(11);
        let mut params = vec![
            Tensor::param(&[2, 1, 3, 3], uniform(&mut r, 18, -1.0, 1.0)).unwrap(),
            Tensor::param(&[2], vec![0.0; 2]).unwrap(),
        ];
        let x = Tensor::new(&[1, 5, 5], uniform(&mut r, 25, 0.0, 1.0)).unwrap();
        let target = Tensor::new(&[2, 5, 5], uniform(&mut r, 50, 0.0, 1.0)).unwrap();
        let mut adam = AdamState::for_params(&params, 0.01);
        let mut trace = Vec::new();
        for _ in 0..5 {
            let y = tensor::conv2d(&x, &params[0], &params[1], 1, true).unwrap();
            let loss = tensor::l1_loss(&tensor::relu(&y), &target).unwrap();
            trace.push(loss.item().to_bits());
            tensor::backward(&loss).unwrap();
            adam.step_tensors(&mut params).unwrap();
        }
        trace.extend(params.iter().flat_map(|p| p.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()));
        trace
    };
    assert_eq!(run(), run());
}

#[test]
fn harness_rejects_a_wrong_gradient() {
    let values = vec![vec![0.3, -1.2, 2.0]];
    let f = |v: &[Vec<f64>]| v[0].iter().map(|x| x * x * x).sum::<f64>();
    let exact: Vec<Vec<f64>> = vec![values[0].iter().map(|x| 3.0 * x * x).collect()];
    assert!(fd_compare(&values, &exact, f).passes());
    let mut off = exact.clone();
    off[0][1] *= 1.001;
    assert!(!fd_compare(&values, &off, f).passes());
}
