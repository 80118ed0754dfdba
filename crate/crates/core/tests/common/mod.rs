//! Oracles shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use nsp_core::bsn::{BsnModel, Layer};
use nsp_core::imaging::Image;
use nsp_core::pairing::{PairSet, Strategy};
use nsp_core::tensor::{self, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;
pub const FD_REL_TOL: f64 = 1e-4;
/// Below this magnitude the relative error is measured against the floor
/// instead, so exactly-zero gradients are compared absolutely.
pub const FD_FLOOR: f64 = 1e-3;
pub const KINK_MARGIN: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn random_image(rng: &mut impl Rng, c: usize, h: usize, w: usize) -> Image {
    Image::new(c, h, w, uniform(rng, c * h * w, 0.0, 1.0)).unwrap()
}

#[derive(Debug, Clone, Copy)]
pub struct GradReport {
    pub max_rel: f64,
    pub checked: usize,
}

impl GradReport {
    pub fn passes(&self) -> bool {
        self.checked > 0 && self.max_rel <= FD_REL_TOL
    }

    fn merge(self, other: GradReport) -> GradReport {
        GradReport {
            max_rel: self.max_rel.max(other.max_rel),
            checked: self.checked + other.checked,
        }
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

/// Central differences of `eval` around `values`, compared elementwise with
/// `analytic`.
pub fn fd_compare(values: &[Vec<f64>], analytic: &[Vec<f64>], eval: impl Fn(&[Vec<f64>]) -> f64) -> GradReport {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut probe = values.to_vec();
    for (i, v) in values.iter().enumerate() {
        for j in 0..v.len() {
            probe[i][j] = v[j] + FD_STEP;
            let up = eval(&probe);
            probe[i][j] = v[j] - FD_STEP;
            let down = eval(&probe);
            probe[i][j] = v[j];
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_error(analytic[i][j], numeric));
            checked += 1;
        }
    }
    GradReport { max_rel: worst, checked }
}

/// Gradient check of a scalar function of tensor leaves.
pub fn check_op(leaves: &[(Vec<usize>, Vec<f64>)], f: impl Fn(&[Tensor]) -> Tensor) -> GradReport {
    let params: Vec<Tensor> = leaves.iter().map(|(s, d)| Tensor::param(s, d.clone()).unwrap()).collect();
    let loss = f(&params);
    tensor::backward(&loss).unwrap();
    let analytic: Vec<Vec<f64>> = params.iter().map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()])).collect();
    let values: Vec<Vec<f64>> = leaves.iter().map(|(_, d)| d.clone()).collect();
    fd_compare(&values, &analytic, |vals| {
        let plain: Vec<Tensor> = leaves
            .iter()
            .zip(vals)
            .map(|((s, _), v)| Tensor::new(s, v.clone()).unwrap())
            .collect();
        f(&plain).item()
    })
}

/// Reduces a tensor to a scalar with fixed random weights, so every output
/// element receives a distinct upstream gradient.
pub fn weighted_sum(x: &Tensor, seed: u64) -> Tensor {
    let w = uniform(&mut rng(seed), x.numel(), -1.0, 1.0);
    let w = Tensor::new(x.shape(), w).unwrap();
    tensor::sum(&tensor::mul(x, &w).unwrap())
}

/// Values bounded away from zero by at least `margin`.
pub fn away_from_zero(rng: &mut impl Rng, n: usize, margin: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(margin..1.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect()
}

/// Pre-activation values of every ReLU in `model` on `input`, recomputed
/// layer by layer from the public layer table.
pub fn relu_preactivations(model: &BsnModel, input: &Tensor) -> Vec<f64> {
    let mut out = Vec::new();
    let mut x = input.detach();
    let mut p = model.params().iter();
    for layer in model.layers() {
        x = match *layer {
            Layer::Conv { dilation, masked, .. } => {
                let (w, b) = (p.next().unwrap().detach(), p.next().unwrap().detach());
                tensor::conv2d(&x, &w, &b, dilation, masked).unwrap()
            }
            Layer::Relu => {
                out.extend_from_slice(x.data());
                tensor::relu(&x)
            }
            Layer::PixelShuffle { factor } => tensor::pixel_shuffle(&x, factor).unwrap(),
        };
    }
    out
}

/// Full-model parameter gradient check on an 8×8 input. Biases are
/// randomized so zero-input windows cannot sit exactly on a kink; seeds are
/// redrawn until every ReLU pre-activation clears [`KINK_MARGIN`].
pub fn check_full_model(t: usize, seed: u64) -> GradReport {
    let mut attempt = seed;
    let (model, input, target) = loop {
        let mut model = BsnModel::build(1, t, 8, attempt).unwrap();
        let mut r = rng(attempt ^ 0xA5A5);
        let values: Vec<Vec<f64>> = model
            .params()
            .iter()
            .map(|p| {
                let mut v = p.data().to_vec();
                if p.shape().len() == 1 {
                    v = uniform(&mut r, v.len(), -0.2, 0.2);
                }
                v
            })
            .collect();
        model.load_params(&values).unwrap();
        let input = Tensor::new(&[1, 8, 8], uniform(&mut r, 64, 0.0, 1.0)).unwrap();
        let target = Tensor::new(&[1, 8 * t, 8 * t], uniform(&mut r, 64 * t * t, 0.0, 1.0)).unwrap();
        let clear = relu_preactivations(&model, &input).iter().all(|v| v.abs() >= KINK_MARGIN);
        let out = model.predict(&input).unwrap();
        let l1_clear = out.data().iter().zip(target.data()).all(|(a, b)| (a - b).abs() >= KINK_MARGIN);
        if clear && l1_clear {
            break (model, input, target);
        }
        attempt += 1000;
    };
    let loss = tensor::l1_loss(&model.forward(&input).unwrap(), &target).unwrap();
    tensor::backward(&loss).unwrap();
    let analytic: Vec<Vec<f64>> = model.params().iter().map(|p| p.grad().unwrap()).collect();
    let values: Vec<Vec<f64>> = model.params().iter().map(|p| p.data().to_vec()).collect();
    fd_compare(&values, &analytic, |vals| {
        let mut m = model.clone();
        m.load_params(vals).unwrap();
        tensor::l1_loss(&m.predict(&input).unwrap(), &target).unwrap().item()
    })
}

/// Two-layer conv + relu network; the first layer is dilated and masked.
pub fn check_two_layer_net(seed: u64) -> GradReport {
    let mut attempt = seed;
    loop {
        let mut r = rng(attempt);
        let x = (vec![2, 7, 7], uniform(&mut r, 98, -1.0, 1.0));
        let w1 = (vec![3, 2, 3, 3], uniform(&mut r, 54, -0.5, 0.5));
        let b1 = (vec![3], uniform(&mut r, 3, -0.2, 0.2));
        let w2 = (vec![2, 3, 3, 3], uniform(&mut r, 54, -0.5, 0.5));
        let b2 = (vec![2], uniform(&mut r, 2, -0.2, 0.2));
        let leaves = vec![x, w1, b1, w2, b2];
        let t = |i: usize| Tensor::new(&leaves[i].0, leaves[i].1.clone()).unwrap();
        let h1 = tensor::conv2d(&t(0), &t(1), &t(2), 2, true).unwrap();
        let h2 = tensor::conv2d(&tensor::relu(&h1), &t(3), &t(4), 1, false).unwrap();
        let clear = h1.data().iter().chain(h2.data()).all(|v| v.abs() >= KINK_MARGIN);
        if !clear {
            attempt += 1000;
            continue;
        }
        return check_op(&leaves, |p| {
            let h1 = tensor::relu(&tensor::conv2d(&p[0], &p[1], &p[2], 2, true).unwrap());
            let h2 = tensor::relu(&tensor::conv2d(&h1, &p[3], &p[4], 1, false).unwrap());
            weighted_sum(&h2, 17)
        });
    }
}

/// Per-op gradient checks, one entry per op.
pub fn op_gradient_suite(seed: u64) -> Vec<(&'static str, GradReport)> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    for &(dilation, mask, k) in &[(1, false, 3), (1, true, 3), (2, true, 3), (2, false, 3), (1, false, 1)] {
        let leaves = vec![
            (vec![2, 6, 5], uniform(&mut r, 60, -1.0, 1.0)),
            (vec![3, 2, k, k], uniform(&mut r, 6 * k * k, -1.0, 1.0)),
            (vec![3], uniform(&mut r, 3, -1.0, 1.0)),
        ];
        let rep = check_op(&leaves, |p| weighted_sum(&tensor::conv2d(&p[0], &p[1], &p[2], dilation, mask).unwrap(), 1));
        out.push(("conv2d", rep));
    }
    for &f in &[1, 2, 3] {
        let leaves = vec![(vec![2 * f * f, 3, 2], uniform(&mut r, 12 * f * f, -1.0, 1.0))];
        out.push(("pixel_shuffle", check_op(&leaves, |p| weighted_sum(&tensor::pixel_shuffle(&p[0], f).unwrap(), 2))));
    }
    let leaves = vec![(vec![4, 5], away_from_zero(&mut r, 20, KINK_MARGIN * 10.0))];
    out.push(("relu", check_op(&leaves, |p| weighted_sum(&tensor::relu(&p[0]), 3))));
    let leaves = vec![(vec![3, 4], uniform(&mut r, 12, -1.0, 1.0)), (vec![3, 4], uniform(&mut r, 12, -1.0, 1.0))];
    out.push(("add", check_op(&leaves, |p| weighted_sum(&tensor::add(&p[0], &p[1]).unwrap(), 4))));
    out.push(("mul", check_op(&leaves, |p| weighted_sum(&tensor::mul(&p[0], &p[1]).unwrap(), 5))));
    out.push(("scale", check_op(&leaves[..1], |p| weighted_sum(&tensor::scale(&p[0], -2.5), 6))));
    out.push(("sum", check_op(&leaves[..1], |p| tensor::sum(&p[0]))));
    let pred = uniform(&mut r, 30, 0.0, 1.0);
    let target: Vec<f64> = pred.iter().zip(away_from_zero(&mut r, 30, 0.01)).map(|(p, d)| p + 0.1 * d).collect();
    let leaves = vec![(vec![2, 3, 5], pred)];
    out.push((
        "l1_loss",
        check_op(&leaves, |p| tensor::l1_loss(&p[0], &Tensor::new(&[2, 3, 5], target.clone()).unwrap()).unwrap()),
    ));
    out
}

pub fn suite_summary(reports: &[(&'static str, GradReport)]) -> GradReport {
    reports
        .iter()
        .map(|(_, r)| *r)
        .fold(GradReport { max_rel: 0.0, checked: 0 }, GradReport::merge)
}

/// Image whose every pixel value is distinct, so each sampled value
/// identifies its source coordinate.
pub fn unique_image(c: usize, h: usize, w: usize) -> Image {
    let n = c * h * w;
    Image::new(c, h, w, (0..n).map(|i| (i + 1) as f64 / n as f64).collect()).unwrap()
}

/// Recovers the source coordinate of every input and target pixel by value
/// (on an image from [`unique_image`]) and checks the per-patch partition
/// and cross-scale blocking without trusting the recorded assignment.
pub fn independent_audit(image: &Image, ps: &PairSet) -> Result<(), String> {
    let (c, h, w) = image.dims();
    let (s, t) = (ps.s, ps.t);
    let locate = |ch: usize, v: f64| -> Result<(usize, usize), String> {
        let idx = (v * (c * h * w) as f64).round() as usize - 1;
        let (rest, x) = (idx % (h * w), idx % w);
        if idx / (h * w) != ch || image.get(ch, rest / w, x) != v {
            return Err(format!("value {v} not found in channel {ch}"));
        }
        Ok((rest / w, x))
    };
    let (gr, gc) = (h / s, w / s);
    let mut used = vec![0u8; h * w];
    let mut claim = |owner: u8, pi: usize, pj: usize, ch: usize, v: f64| -> Result<(), String> {
        let (y, x) = locate(ch, v)?;
        if y / s != pi || x / s != pj {
            return Err(format!("pixel ({y},{x}) leaked outside patch ({pi},{pj})"));
        }
        if ch == 0 {
            if used[y * w + x] != 0 {
                return Err(format!("pixel ({y},{x}) used twice"));
            }
            used[y * w + x] = owner;
        }
        Ok(())
    };
    for ch in 0..c {
        for pi in 0..gr {
            for pj in 0..gc {
                for input in &ps.inputs {
                    claim(1, pi, pj, ch, input.get(ch, pi, pj))?;
                }
                for target in &ps.targets {
                    for a in 0..t {
                        for b in 0..t {
                            claim(2, pi, pj, ch, target.get(ch, pi * t + a, pj * t + b))?;
                        }
                    }
                }
            }
        }
    }
    if used.iter().any(|&u| u == 0) {
        return Err("some source pixel was never used".into());
    }
    Ok(())
}

/// Row/column order preservation of every target block, read from values.
pub fn order_preserved(image: &Image, ps: &PairSet) -> bool {
    let (_, h, w) = image.dims();
    let t = ps.t;
    let n = h * w;
    let pos = |v: f64| {
        let idx = (v * n as f64).round() as usize - 1;
        (idx / w, idx % w)
    };
    for target in &ps.targets {
        for pi in 0..ps.grid_rows {
            for pj in 0..ps.grid_cols {
                let cells: Vec<((usize, usize), (usize, usize))> = (0..t * t)
                    .map(|k| ((k / t, k % t), pos(target.get(0, pi * t + k / t, pj * t + k % t))))
                    .collect();
                for &((a1, b1), (y1, x1)) in &cells {
                    for &((a2, b2), (y2, x2)) in &cells {
                        if (y1 < y2 && a1 >= a2) || (x1 < x2 && b1 >= b2) {
                            return false;
                        }
                    }
                }
            }
        }
    }
    true
}

pub fn structured(strategy: Strategy) -> bool {
    matches!(strategy, Strategy::Intersected | Strategy::Consecutive)
}
