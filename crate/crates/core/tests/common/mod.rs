//! Shared fixtures and brute-force reference implementations for the
//! integration tests. The references work on plain nested `Vec`s and loops
//! and never call into the library's numeric code.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spatialnet::data::{encode_idx, IdxData, IMAGE_PIXELS};
use spatialnet::split::Assignment;
use spatialnet::{Activation, Network, PositionMap};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || scale * (2.0 * rng.random::<f64>() - 1.0))
}

/// Random network with the given sizes and nonzero biases.
pub fn random_network(rng: &mut ChaCha8Rng, sizes: &[usize], scale: f64) -> Network {
    let weights = sizes.windows(2).map(|p| random_matrix(rng, p[1], p[0], scale)).collect();
    let biases = sizes[1..]
        .iter()
        .map(|&n| Array1::from_shape_simple_fn(n, || 2.0 * rng.random::<f64>() - 1.0))
        .collect();
    Network::from_parts(sizes.to_vec(), weights, biases, Activation::Sigmoid).unwrap()
}

/// Random hidden widths `[input, h.., 20]` with `hidden` hidden layers.
pub fn random_sizes(rng: &mut ChaCha8Rng, input: usize, hidden: usize, max_width: usize) -> Vec<usize> {
    let mut sizes = vec![input];
    sizes.extend((0..hidden).map(|_| rng.random_range(1..=max_width)));
    sizes.push(20);
    sizes
}

pub fn random_positions(rng: &mut ChaCha8Rng, sizes: &[usize], scale: f64) -> PositionMap {
    PositionMap::from_layers(sizes.iter().map(|&n| random_matrix(rng, n, 2, scale)).collect()).unwrap()
}

pub fn to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-neuron forward pass. `keep[l][n] == false` zeroes neuron `n` of layer `l`.
pub fn oracle_forward(net: &Network, input: &[f64], keep: Option<&[Vec<bool>]>) -> Vec<f64> {
    let depth = net.depth();
    let mut current = input.to_vec();
    for k in 0..depth {
        let w = to_rows(&net.weights()[k]);
        let b = net.biases()[k].to_vec();
        let mut next = Vec::with_capacity(w.len());
        for (i, row) in w.iter().enumerate() {
            let mut z = b[i];
            for (j, a) in row.iter().enumerate() {
                z += a * current[j];
            }
            let mut v = if k + 1 == depth { z } else { sigmoid(z) };
            if let Some(keep) = keep {
                if !keep[k + 1][i] {
                    v = 0.0;
                }
            }
            next.push(v);
        }
        current = next;
    }
    current
}

/// Cross-entropy of one 10-wide head: `-ln softmax(z)[label]`.
pub fn oracle_head_loss(z: &[f64], label: usize) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = z.iter().map(|v| (v - m).exp()).sum();
    -((z[label] - m).exp() / denom).ln()
}

pub fn oracle_transport(net: &Network, pos: &PositionMap, layer: usize) -> f64 {
    let w = to_rows(&net.weights()[layer - 1]);
    let mut total = 0.0;
    for (n2, row) in w.iter().enumerate() {
        for (n1, a) in row.iter().enumerate() {
            let [x1, y1] = pos.point(layer - 1, n1);
            let [x2, y2] = pos.point(layer, n2);
            total += a.abs() * ((x1 - x2).powi(2) + (y1 - y2).powi(2)).sqrt();
        }
    }
    total / w.len() as f64
}

pub fn oracle_density(pos: &PositionMap, layer: usize) -> f64 {
    let n = pos.layer(layer).nrows();
    let mut total = 0.0;
    for a in 0..n {
        for b in 0..n {
            if a != b {
                let [x1, y1] = pos.point(layer, a);
                let [x2, y2] = pos.point(layer, b);
                total += (-((x1 - x2).powi(2) + (y1 - y2).powi(2)).sqrt()).exp();
            }
        }
    }
    total / (n * n) as f64
}

/// Greedy backward split computed straight from its definition.
pub fn oracle_split(net: &Network, groups: usize, split_layers: &[usize]) -> Vec<Vec<usize>> {
    let sizes = net.layer_sizes();
    let last = *split_layers.last().unwrap();
    let per_group = sizes[last] / groups;
    let mut ids: Vec<Vec<usize>> = vec![Vec::new(); split_layers.len()];
    ids[split_layers.len() - 1] = (0..sizes[last]).map(|n| n / per_group + 1).collect();
    for idx in (0..split_layers.len() - 1).rev() {
        let layer = split_layers[idx];
        let outgoing = to_rows(&net.weights()[layer]);
        let next = ids[idx + 1].clone();
        ids[idx] = (0..sizes[layer])
            .map(|n| {
                let mut best = (1, f64::NEG_INFINITY);
                for g in 1..=groups {
                    let mass: f64 = (0..next.len()).filter(|&m| next[m] == g).map(|m| outgoing[m][n].abs()).sum();
                    if mass > best.1 {
                        best = (g, mass);
                    }
                }
                best.0
            })
            .collect();
    }
    ids
}

/// Crossing |w| over total |w| for each transition between split layers.
pub fn oracle_inter_group_mass(net: &Network, a: &Assignment) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    for k in 1..a.split_layers.len() {
        let layer = a.split_layers[k];
        let w = to_rows(&net.weights()[layer - 1]);
        let (mut cross, mut total) = (0.0, 0.0);
        for (dst, row) in w.iter().enumerate() {
            for (src, v) in row.iter().enumerate() {
                total += v.abs();
                if a.group_ids[k][dst] != a.group_ids[k - 1][src] {
                    cross += v.abs();
                }
            }
        }
        out.push((layer, cross / total));
    }
    out
}

/// `[inputs, 4, 6, 20]` network whose two upper weight layers connect only
/// within groups `{h1: 0..2, h2: 0..3, out: 0..10}` and the complement.
pub fn block_diagonal(rng: &mut ChaCha8Rng, inputs: usize) -> (Network, Vec<Vec<usize>>) {
    let sizes = [inputs, 4, 6, 20];
    let ids = vec![vec![1, 1, 2, 2], vec![1, 1, 1, 2, 2, 2], (0..20).map(|k| k / 10 + 1).collect::<Vec<_>>()];
    let mut net = random_network(rng, &sizes, 1.0);
    for k in 1..3 {
        let (dst, src) = (&ids[k], &ids[k - 1]);
        for ((i, j), v) in net.weights_mut()[k].indexed_iter_mut() {
            if dst[i] != src[j] {
                *v = 0.0;
            } else if v.abs() < 0.1 {
                *v = 0.1;
            }
        }
    }
    (net, ids)
}

pub fn data_dir() -> PathBuf {
    std::env::var_os("SPATIALNET_DATA")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

/// Panics with a remediation hint when the real datasets are absent.
pub fn require_data() -> PathBuf {
    let dir = data_dir();
    let probe = dir.join("mnist/train-images-idx3-ubyte");
    assert!(
        probe.exists() || dir.join("mnist/train-images-idx3-ubyte.gz").exists(),
        "datasets not found under {}; run `scripts/fetch_data.sh {}` or set SPATIALNET_DATA",
        dir.display(),
        dir.display()
    );
    dir
}

/// Writes a tiny synthetic MNIST/Fashion pair in the standard layout. Labels
/// are `i % 10`; images carry a label-dependent stripe so the task is learnable.
pub fn write_synthetic_data(dir: &Path, train: usize, test: usize) {
    for (sub, shift) in [("mnist", 0usize), ("fashion", 5)] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).unwrap();
        for (prefix, n) in [("train", train), ("t10k", test)] {
            let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
            let mut pixels = vec![0u8; n * IMAGE_PIXELS];
            for (i, &l) in labels.iter().enumerate() {
                let row = (l as usize + shift) % 10 * 2 + 4;
                for c in 0..28 {
                    pixels[i * IMAGE_PIXELS + row * 28 + c] = 200 + ((i * 7 + c) % 50) as u8;
                }
            }
            let images = IdxData::Images {
                rows: 28,
                cols: 28,
                pixels,
            };
            std::fs::write(d.join(format!("{prefix}-images-idx3-ubyte")), encode_idx(&images)).unwrap();
            std::fs::write(d.join(format!("{prefix}-labels-idx1-ubyte")), encode_idx(&IdxData::Labels(labels))).unwrap();
        }
    }
}
