mod common;

use common::*;
use nsp_core::bsn::*;
use nsp_core::tensor::Tensor;
use rand::Rng;

fn random_input(seed: u64, c: usize, h: usize, w: usize) -> Tensor {
    Tensor::new(&[c, h, w], uniform(&mut rng(seed), c * h * w, 0.0, 1.0)).unwrap()
}

#[test]
fn blind_spot_holds_on_random_cases() {
    let mut r = rng(77);
    for case in 0..100u64 {
        let t = if case % 2 == 0 { 2 } else { 1 };
        let model = BsnModel::build(1, t, 8, case).unwrap();
        let input = random_input(case + 1000, 1, 12, 12);
        let pixel = (r.random_range(0..12), r.random_range(0..12));
        let delta = r.random_range(-5.0..5.0);
        let effect = perturbation_effect(&model, &input, pixel, delta).unwrap();
        assert!(!effect.block_changed, "case {case}, pixel {pixel:?}");
    }
}

#[test]
fn perturbations_reach_outside_the_block() {
    for seed in 0..5 {
        let model = BsnModel::build(1, 2, 8, seed).unwrap();
        let input = random_input(seed, 1, 10, 10);
        for pixel in [(5, 5), (0, 0), (9, 3)] {
            let effect = perturbation_effect(&model, &input, pixel, 1.0).unwrap();
            assert!(effect.outside_changed, "seed {seed}, pixel {pixel:?}");
            assert!(!effect.block_changed);
        }
    }
}

#[test]
fn zero_perturbation_changes_nothing() {
    let model = BsnModel::build_unmasked(1, 2, 8, 1).unwrap();
    let input = random_input(1, 1, 8, 8);
    let effect = perturbation_effect(&model, &input, (3, 4), 0.0).unwrap();
    assert_eq!(
        effect,
        PerturbationEffect {
            block_changed: false,
            outside_changed: false
        }
    );
}

#[test]
fn multichannel_models_are_blind() {
    let model = BsnModel::build(3, 2, 8, 4).unwrap();
    let input = random_input(4, 3, 9, 9);
    for i in 0..9 {
        for j in 0..9 {
            assert!(verify_blind_spot(&model, &input, (i, j)).unwrap());
        }
    }
}

#[test]
fn unmasked_control_is_not_blind() {
    let model = BsnModel::build_unmasked(1, 2, 8, 2).unwrap();
    let input = random_input(2, 1, 8, 8);
    let blind = (0..8).all(|i| (0..8).all(|j| verify_blind_spot(&model, &input, (i, j)).unwrap()));
    assert!(!blind);
}

#[test]
fn output_shapes() {
    for t in [1, 2] {
        let model = BsnModel::build(1, t, 8, 0).unwrap();
        for (h, w) in [(8, 8), (12, 20), (20, 12)] {
            let out = model.predict(&random_input(0, 1, h, w)).unwrap();
            assert_eq!(out.shape(), &[1, t * h, t * w]);
        }
    }
    let model = BsnModel::build(3, 2, 8, 0).unwrap();
    assert_eq!(model.predict(&random_input(0, 3, 16, 16)).unwrap().shape(), &[3, 32, 32]);
}

#[test]
fn parameter_count_closed_form() {
    for (c, t, b) in [(1, 1, 8), (1, 2, 32), (3, 4, 16)] {
        let model = BsnModel::build(c, t, b, 0).unwrap();
        assert_eq!(model.num_params(), param_count(c, t, b));
    }
    // 3x3 head, three 3x3 body layers, expansion, two tail layers.
    assert_eq!(param_count(1, 2, 8), (8 * 9 + 8) + 3 * (64 * 9 + 8) + (8 * 32 + 32) + (64 + 8) + (8 + 1));
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.nspb");
    let model = BsnModel::build(2, 2, 8, 9).unwrap();
    save_checkpoint(&model, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.layers(), model.layers());
    let input = random_input(3, 2, 10, 11);
    let (a, b) = (model.predict(&input).unwrap(), back.predict(&input).unwrap());
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_eq!(std::fs::read(&path).unwrap(), encode_checkpoint(&back));
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let bytes = encode_checkpoint(&BsnModel::build(1, 2, 8, 0).unwrap());
    let mut flipped = bytes.clone();
    let mid = bytes.len() / 2;
    flipped[mid] ^= 0x40;
    assert!(matches!(decode_checkpoint(&flipped), Err(BsnError::Checksum { .. })));
    for cut in [0, 3, 10, mid, bytes.len() - 1] {
        assert!(matches!(decode_checkpoint(&bytes[..cut]), Err(BsnError::Truncated { .. })), "cut {cut}");
    }
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(decode_checkpoint(&magic), Err(BsnError::BadMagic(_))));
}
