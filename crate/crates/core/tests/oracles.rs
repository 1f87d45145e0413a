//! Library results against the brute-force references in `common`.

mod common;

use approx::assert_abs_diff_eq;
use ndarray::Array2;
use rand::Rng;

use common::*;
use spatialnet::eval::{evaluate, EvalOptions};
use spatialnet::nn::{head_cross_entropy, HeadLabels};
use spatialnet::spatial::{density_cost, spatial_gradients, transport_cost, SpatialConfig};
use spatialnet::split::{build_mask, greedy_split, inter_group_weight_mass, masked_forward};
use spatialnet::data::{DualDataset, InputMode, RawDataset, Split, IMAGE_PIXELS};

#[test]
fn forward_matches_per_neuron_loop() {
    let mut r = rng(11);
    for _ in 0..20 {
        let hidden = r.random_range(1..4);
        let input = r.random_range(1..12);
        let sizes = random_sizes(&mut r, input, hidden, 9);
        let net = random_network(&mut r, &sizes, 2.0);
        let x = Array2::from_shape_simple_fn((5, sizes[0]), || r.random::<f64>());
        let logits = net.forward(x.view()).unwrap().logits().to_owned();
        for (row, out) in x.rows().into_iter().zip(logits.rows()) {
            let want = oracle_forward(&net, &row.to_vec(), None);
            for (a, b) in out.iter().zip(&want) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
    }
}

#[test]
fn cross_entropy_matches_reference() {
    let mut r = rng(12);
    for _ in 0..50 {
        let n = r.random_range(1..8);
        let logits = random_matrix(&mut r, n, 20, 8.0);
        let labels: Vec<HeadLabels> = (0..n)
            .map(|i| {
                let a = Some(r.random_range(0..10u8));
                let b = Some(r.random_range(0..10u8));
                match i % 3 {
                    0 => [a, b],
                    1 => [a, None],
                    _ => [None, b],
                }
            })
            .collect();
        let got = head_cross_entropy(logits.view(), &labels).unwrap().loss;
        let mut want = 0.0;
        for (row, l) in logits.rows().into_iter().zip(&labels) {
            let row = row.to_vec();
            for (h, label) in l.iter().enumerate() {
                if let Some(label) = label {
                    want += oracle_head_loss(&row[h * 10..h * 10 + 10], *label as usize);
                }
            }
        }
        want /= n as f64;
        assert_abs_diff_eq!(got, want, epsilon = 1e-10);
    }
}

#[test]
fn penalties_match_double_loops() {
    let mut r = rng(13);
    for _ in 0..25 {
        let input = r.random_range(1..10);
        let sizes = random_sizes(&mut r, input, 3, 12);
        let net = random_network(&mut r, &sizes, 3.0);
        let pos = random_positions(&mut r, &sizes, 2.0);
        for l in 1..sizes.len() {
            assert_abs_diff_eq!(transport_cost(&net, &pos, l).unwrap(), oracle_transport(&net, &pos, l), epsilon = 1e-12);
            assert_abs_diff_eq!(density_cost(&pos, l).unwrap(), oracle_density(&pos, l), epsilon = 1e-12);
        }
    }
}

#[test]
fn penalty_value_in_gradients_matches_references() {
    let mut r = rng(14);
    let sizes = [4, 5, 6, 7, 20];
    let net = random_network(&mut r, &sizes, 1.0);
    let pos = random_positions(&mut r, &sizes, 1.0);
    let cfg = SpatialConfig {
        alpha: 1.0,
        beta: 3.0,
        penalized_layers: vec![2, 3, 4],
        distance_epsilon: 1e-8,
    };
    let g = spatial_gradients(&net, &pos, &cfg).unwrap();
    let want: f64 = [2, 3, 4]
        .iter()
        .map(|&l| oracle_transport(&net, &pos, l) + 3.0 * oracle_density(&pos, l))
        .sum::<f64>()
        / 3.0;
    assert_abs_diff_eq!(g.penalty, want, epsilon = 1e-12);
    assert!(g.weights[0].is_none());
    assert!(g.positions[0].iter().all(|&v| v == 0.0));
}

#[test]
fn split_matches_definition_on_random_networks() {
    let mut r = rng(15);
    for _ in 0..50 {
        let sizes = random_sizes(&mut r, 3, 3, 10);
        let net = random_network(&mut r, &sizes, 1.0);
        let a = greedy_split(&net, 2, &[2, 3, 4]).unwrap();
        assert_eq!(a.group_ids, oracle_split(&net, 2, &[2, 3, 4]));
        let mass = inter_group_weight_mass(&net, &a).unwrap();
        for ((l, m), (lo, mo)) in mass.iter().zip(oracle_inter_group_mass(&net, &a)) {
            assert_eq!(*l, lo);
            assert_abs_diff_eq!(*m, mo, epsilon = 1e-12);
        }
    }
}

#[test]
fn split_with_more_groups() {
    let mut r = rng(16);
    for groups in [4, 5, 10] {
        let net = random_network(&mut r, &[3, 7, 9, 20], 1.0);
        let a = greedy_split(&net, groups, &[1, 2, 3]).unwrap();
        assert_eq!(a.group_ids, oracle_split(&net, groups, &[1, 2, 3]));
    }
}

#[test]
fn masked_forward_matches_loop_with_zeroed_neurons() {
    let mut r = rng(17);
    for _ in 0..10 {
        let sizes = random_sizes(&mut r, 6, 3, 8);
        let net = random_network(&mut r, &sizes, 1.5);
        let a = greedy_split(&net, 2, &[2, 3, 4]).unwrap();
        let x = Array2::from_shape_simple_fn((4, 6), || r.random::<f64>());
        for group in 1..=2 {
            let mask = build_mask(&a, group).unwrap();
            let got = masked_forward(&net, &mask, x.view()).unwrap();
            for (row, out) in x.rows().into_iter().zip(got.rows()) {
                let want = oracle_forward(&net, &row.to_vec(), Some(&mask.keep));
                for (g, w) in out.iter().zip(&want) {
                    assert_abs_diff_eq!(g, w, epsilon = 1e-12);
                }
            }
        }
    }
}

#[test]
fn block_diagonal_network_splits_exactly() {
    let mut r = rng(18);
    let (net, ids) = block_diagonal(&mut r, 5);
    let a = greedy_split(&net, 2, &[1, 2, 3]).unwrap();
    assert_eq!(a.group_ids, ids);
    assert_eq!(inter_group_weight_mass(&net, &a).unwrap(), vec![(2, 0.0), (3, 0.0)]);
    let x = Array2::from_shape_simple_fn((3, 5), || r.random::<f64>());
    let full = net.forward(x.view()).unwrap().logits().to_owned();
    let m1 = masked_forward(&net, &build_mask(&a, 1).unwrap(), x.view()).unwrap();
    let m2 = masked_forward(&net, &build_mask(&a, 2).unwrap(), x.view()).unwrap();
    for i in 0..3 {
        for k in 0..10 {
            assert_abs_diff_eq!(m1[[i, k]], full[[i, k]], epsilon = 1e-12);
            assert_abs_diff_eq!(m2[[i, k + 10]], full[[i, k + 10]], epsilon = 1e-12);
        }
    }
}

fn random_dataset(r: &mut rand_chacha::ChaCha8Rng, n: usize) -> RawDataset {
    let pixels = (0..n * IMAGE_PIXELS).map(|_| r.random::<u8>()).collect();
    let labels = (0..n).map(|_| r.random_range(0..10u8)).collect();
    RawDataset::new(Split::Test, IMAGE_PIXELS, pixels, labels).unwrap()
}

#[test]
fn block_diagonal_accuracy_drop_is_zero_in_every_mode() {
    let mut r = rng(19);
    let test = DualDataset {
        mnist: random_dataset(&mut r, 120),
        fashion: random_dataset(&mut r, 90),
    };
    for mode in [InputMode::Concat, InputMode::Mixed, InputMode::Sequential] {
        let (net, _) = block_diagonal(&mut r, mode.input_dim());
        let a = greedy_split(&net, 2, &[1, 2, 3]).unwrap();
        let report = evaluate(&net, Some(&a), &test, mode, &EvalOptions::default()).unwrap();
        assert_eq!(report.split.unwrap(), report.full, "{mode}");
        assert_eq!(report.drop, Some(0.0));
    }
}
