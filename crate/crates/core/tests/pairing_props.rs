mod common;

use std::collections::HashMap;

use common::*;
use nsp_core::imaging::Image;
use nsp_core::pairing::*;
use proptest::prelude::{prop, prop_assert, prop_assert_eq, prop_assume, proptest, ProptestConfig};

fn feasible(strategy: Strategy, n: usize) -> bool {
    !(strategy == Strategy::Consecutive && n == 5)
}

fn strategy_arb() -> impl proptest::strategy::Strategy<Value = Strategy> {
    prop::sample::select(Strategy::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn pu_merge_inverts_pd_split(
        f in prop::sample::select(vec![2usize, 4, 5]),
        c in 1usize..4,
        gh in 1usize..8,
        gw in 1usize..8,
        seed: u64,
    ) {
        let img = random_image(&mut rng(seed), c, gh * f, gw * f);
        let subs = pd_split(&img, f).unwrap();
        prop_assert_eq!(subs.len(), f * f);
        let back = pu_merge(&subs, f).unwrap();
        prop_assert_eq!(back.dims(), img.dims());
        prop_assert!(back.pixels().iter().zip(img.pixels()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn pair_sets_partition_every_patch(
        strategy in strategy_arb(),
        n in 1usize..=5,
        c in 1usize..3,
        gh in 1usize..5,
        gw in 1usize..5,
        seed: u64,
    ) {
        prop_assume!(feasible(strategy, n));
        let img = unique_image(c, gh * 5, gw * 5);
        let ps = construct_pairs(&img, 5, 2, n, strategy, seed).unwrap();
        prop_assert!(ps.audit().is_ok());
        prop_assert_eq!(independent_audit(&img, &ps), Ok(()));
        prop_assert_eq!(ps.inputs.len() * ps.targets.len(), count_pairs(5, 2, n).unwrap());
        prop_assert_eq!(ps.num_pairs(), count_pairs(5, 2, n).unwrap());
    }

    #[test]
    fn structured_strategies_preserve_order(
        strategy in prop::sample::select(vec![Strategy::Intersected, Strategy::Consecutive]),
        s in 3usize..7,
        t in 1usize..3,
        seed: u64,
    ) {
        prop_assume!(t < s);
        let img = unique_image(1, 3 * s, 2 * s);
        let ps = construct_pairs(&img, s, t, 1, strategy, seed).unwrap();
        prop_assert!(order_preserved(&img, &ps));
    }

    #[test]
    fn construction_is_deterministic(strategy in strategy_arb(), n in 1usize..=4, seed: u64) {
        let img = random_image(&mut rng(seed), 1, 20, 15);
        let a = construct_pairs(&img, 5, 2, n, strategy, seed).unwrap();
        let b = construct_pairs(&img, 5, 2, n, strategy, seed).unwrap();
        prop_assert_eq!(&a.assignment, &b.assignment);
        for (x, y) in a.inputs.iter().chain(&a.targets).zip(b.inputs.iter().chain(&b.targets)) {
            prop_assert_eq!(x.pixels(), y.pixels());
        }
    }

    #[test]
    fn general_parameters_partition(s in 2usize..8, t in 1usize..4, seed: u64) {
        prop_assume!(t < s);
        let img = unique_image(1, 2 * s, 3 * s);
        let ps = construct_pairs(&img, s, t, 1, Strategy::Random, seed).unwrap();
        prop_assert_eq!(independent_audit(&img, &ps), Ok(()));
        prop_assert_eq!(ps.inputs.len(), s * s - t * t);
    }
}

#[test]
fn random_and_sorted_do_not_promise_geometric_order() {
    let img = unique_image(1, 50, 50);
    let random = construct_pairs(&img, 5, 2, 1, Strategy::Random, 3).unwrap();
    assert!(!order_preserved(&img, &random));

    // Sorted keeps row-major rank order but not column order.
    let sorted = construct_pairs(&img, 5, 2, 1, Strategy::Sorted, 3).unwrap();
    assert!(!order_preserved(&img, &sorted));
    for a in &sorted.assignment {
        let flat: Vec<usize> = a.targets[0].iter().map(|&(r, c)| r * 5 + c).collect();
        assert!(flat.windows(2).all(|p| p[0] < p[1]));
    }
}

#[test]
fn intersected_draws_are_row_column_products() {
    let mut sampler = TargetSampler::new(5, 2, Strategy::Intersected).unwrap();
    let mut r = rng(0);
    for _ in 0..10_000 {
        let coords = sampler.sample(0, 0, &mut r).unwrap();
        let (r0, r1) = (coords[0].0, coords[2].0);
        let (c0, c1) = (coords[0].1, coords[1].1);
        assert!(r0 < r1 && c0 < c1);
        assert_eq!(coords, vec![(r0, c0), (r0, c1), (r1, c0), (r1, c1)]);
    }
}

#[test]
fn distribute_is_uniform() {
    let remaining = [(0, 1), (2, 3), (4, 0)];
    let mut counts: HashMap<((usize, usize), usize), usize> = HashMap::new();
    let mut r = rng(1);
    let draws = 10_000;
    for _ in 0..draws {
        for (slot, coord) in distribute_coords(&remaining, &mut r).into_iter().enumerate() {
            *counts.entry((coord, slot)).or_default() += 1;
        }
    }
    assert_eq!(counts.len(), 9);
    for (key, count) in counts {
        let freq = count as f64 / draws as f64;
        assert!((0.30..=0.37).contains(&freq), "{key:?}: {freq}");
    }
}

#[test]
fn distribute_is_a_bijection() {
    let patch = unique_image(1, 5, 5);
    let remaining: Vec<(usize, usize)> = (0..25).filter(|k| k % 3 != 0).map(|k| (k / 5, k % 5)).collect();
    let mut r = rng(2);
    let values = distribute(&patch, &remaining, &mut r);
    assert_eq!(values.len(), remaining.len());
    let mut got: Vec<u64> = values.iter().map(|v| v[0].to_bits()).collect();
    let mut want: Vec<u64> = remaining.iter().map(|&(y, x)| patch.get(0, y, x).to_bits()).collect();
    got.sort_unstable();
    want.sort_unstable();
    assert_eq!(got, want);
    assert_eq!(distribute(&patch, &[(3, 3)], &mut r), vec![vec![patch.get(0, 3, 3)]]);
}

#[test]
fn pd_split_preserves_the_pixel_multiset() {
    let img = random_image(&mut rng(4), 3, 30, 20);
    let subs = pd_split(&img, 5).unwrap();
    assert!(subs.iter().all(|s| s.dims() == (3, 6, 4)));
    let mut got: Vec<u64> = subs.iter().flat_map(|s| s.pixels().iter().map(|v| v.to_bits())).collect();
    let mut want: Vec<u64> = img.pixels().iter().map(|v| v.to_bits()).collect();
    got.sort_unstable();
    want.sort_unstable();
    assert_eq!(got, want);
}

#[test]
fn patches_reassemble_the_image() {
    let img = random_image(&mut rng(6), 2, 12, 8);
    let grid = patch_partition(&img, 4).unwrap();
    assert_eq!((grid.rows, grid.cols), (3, 2));
    let mut rebuilt = Image::filled(2, 12, 8, -1.0);
    for i in 0..grid.rows {
        for j in 0..grid.cols {
            let p = grid.patch(i, j);
            for c in 0..2 {
                for y in 0..4 {
                    for x in 0..4 {
                        rebuilt.set(c, i * 4 + y, j * 4 + x, p.get(c, y, x));
                    }
                }
            }
        }
    }
    assert_eq!(rebuilt.pixels(), img.pixels());
}

#[test]
fn sample_target_reads_the_reported_coordinates() {
    let patch = unique_image(2, 5, 5);
    let mut r = rng(8);
    for strategy in Strategy::ALL {
        let occupied = [(0, 0), (4, 4)];
        let (target, coords) = sample_target(&patch, 2, strategy, &occupied, &mut r).unwrap();
        assert_eq!(target.dims(), (2, 2, 2));
        for (cell, &(y, x)) in coords.iter().enumerate() {
            assert!(!occupied.contains(&(y, x)));
            for c in 0..2 {
                assert_eq!(target.get(c, cell / 2, cell % 2), patch.get(c, y, x));
            }
        }
    }
}

#[test]
fn infeasible_requests_are_typed() {
    let img = unique_image(1, 10, 10);
    assert!(matches!(
        construct_pairs(&img, 5, 2, 5, Strategy::Consecutive, 0),
        Err(PairingError::Infeasible { n: 5, .. })
    ));
    assert!(matches!(construct_pairs(&img, 5, 2, 7, Strategy::Random, 0), Err(PairingError::Invalid(_))));
    assert!(matches!(
        construct_pairs(&unique_image(1, 11, 10), 5, 2, 1, Strategy::Random, 0),
        Err(PairingError::NonDivisible { .. })
    ));
}
