//! Greedy backward split of a trained network into per-task subnetworks.
//!
//! The output layer's assignment is fixed by the heads. Walking backward,
//! every neuron of the next-shallower split layer joins the group whose
//! already-assigned neurons receive the largest total `|weight|` from it.
//! Ties go to the lowest group id.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::{Error, Network, Result};

/// Group ids (1-based) for every neuron of every split layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub groups: usize,
    pub layer_sizes: Vec<usize>,
    /// Ascending neuron-layer indices, ending at the output layer.
    pub split_layers: Vec<usize>,
    /// `group_ids[k][n]` is the group of neuron `n` in `split_layers[k]`.
    pub group_ids: Vec<Vec<usize>>,
}

impl Assignment {
    pub fn layer(&self, layer: usize) -> Option<&[usize]> {
        self.split_layers
            .iter()
            .position(|&l| l == layer)
            .map(|k| self.group_ids[k].as_slice())
    }

    /// Neuron count per group for each split layer.
    pub fn group_sizes(&self) -> Vec<(usize, Vec<usize>)> {
        self.split_layers
            .iter()
            .zip(&self.group_ids)
            .map(|(&l, ids)| {
                let mut counts = vec![0; self.groups];
                for &g in ids {
                    counts[g - 1] += 1;
                }
                (l, counts)
            })
            .collect()
    }

    pub fn validate(&self, net: &Network) -> Result<()> {
        if self.layer_sizes != net.layer_sizes() {
            return Err(Error::Shape(format!(
                "assignment was made for layers {:?}, network has {:?}",
                self.layer_sizes,
                net.layer_sizes()
            )));
        }
        check_split_layers(&self.split_layers, net.depth())?;
        if self.group_ids.len() != self.split_layers.len() {
            return Err(Error::Shape("one group list per split layer required".into()));
        }
        for (&l, ids) in self.split_layers.iter().zip(&self.group_ids) {
            if ids.len() != self.layer_sizes[l] {
                return Err(Error::Shape(format!("layer {l}: {} ids for {} neurons", ids.len(), self.layer_sizes[l])));
            }
            if let Some(&g) = ids.iter().find(|&&g| g == 0 || g > self.groups) {
                return Err(Error::Contract(format!("layer {l}: group id {g} outside 1..={}", self.groups)));
            }
        }
        Ok(())
    }
}

fn check_split_layers(split_layers: &[usize], depth: usize) -> Result<()> {
    match split_layers.last() {
        Some(&last) if last == depth => {}
        _ => {
            return Err(Error::Contract(format!(
                "split layers {split_layers:?} must end at the output layer {depth}"
            )))
        }
    }
    if split_layers[0] == 0 || split_layers.windows(2).any(|w| w[1] != w[0] + 1) {
        return Err(Error::Contract(format!(
            "split layers {split_layers:?} must be contiguous non-input layers"
        )));
    }
    Ok(())
}

/// Per-group sums of `|a_nm|` over outgoing connections `n -> m`, where
/// `outgoing` has shape `(next_width, width)` and `next_groups` holds the
/// (1-based) groups of the next layer.
pub fn outgoing_group_mass(outgoing: ArrayView2<'_, f64>, next_groups: &[usize], groups: usize, n: usize) -> Vec<f64> {
    let mut sums = vec![0.0; groups];
    for (m, &g) in next_groups.iter().enumerate() {
        sums[g - 1] += outgoing[[m, n]].abs();
    }
    sums
}

/// Index (1-based) of the largest entry; the first one wins ties.
fn argmax_group(sums: &[f64]) -> usize {
    let mut best = 0;
    for (g, &s) in sums.iter().enumerate() {
        if s > sums[best] {
            best = g;
        }
    }
    best + 1
}

pub fn greedy_split(net: &Network, groups: usize, split_layers: &[usize]) -> Result<Assignment> {
    let depth = net.depth();
    check_split_layers(split_layers, depth)?;
    let out_width = net.layer_sizes()[depth];
    if groups == 0 || out_width % groups != 0 {
        return Err(Error::Contract(format!(
            "output width {out_width} is not divisible into {groups} groups"
        )));
    }
    let per_group = out_width / groups;
    let mut group_ids = vec![Vec::new(); split_layers.len()];
    *group_ids.last_mut().unwrap() = (0..out_width).map(|k| k / per_group + 1).collect();

    for k in (0..split_layers.len() - 1).rev() {
        let layer = split_layers[k];
        let outgoing = net.weights()[layer].view();
        let next = &group_ids[k + 1];
        group_ids[k] = (0..net.layer_sizes()[layer])
            .map(|n| argmax_group(&outgoing_group_mass(outgoing, next, groups, n)))
            .collect();
    }
    Ok(Assignment {
        groups,
        layer_sizes: net.layer_sizes().to_vec(),
        split_layers: split_layers.to_vec(),
        group_ids,
    })
}

/// Which neurons a subnetwork keeps, for every neuron layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubnetworkMask {
    pub group: usize,
    pub keep: Vec<Vec<bool>>,
}

pub fn build_mask(assignment: &Assignment, group: usize) -> Result<SubnetworkMask> {
    if group == 0 || group > assignment.groups {
        return Err(Error::Contract(format!("group {group} outside 1..={}", assignment.groups)));
    }
    let mut keep: Vec<Vec<bool>> = assignment.layer_sizes.iter().map(|&n| vec![true; n]).collect();
    for (&l, ids) in assignment.split_layers.iter().zip(&assignment.group_ids) {
        keep[l] = ids.iter().map(|&g| g == group).collect();
    }
    Ok(SubnetworkMask { group, keep })
}

/// Output logits with masked-out neurons' post-activations forced to zero,
/// including masked output neurons.
pub fn masked_forward(net: &Network, mask: &SubnetworkMask, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let mut trace = net.forward_with_mask(inputs, Some(&mask.keep))?;
    Ok(trace.activations.pop().expect("non-empty trace"))
}

/// Fraction of `|weight|` on connections between differently assigned
/// neurons, for each transition whose both ends are split layers. Keyed by
/// the receiving layer.
pub fn inter_group_weight_mass(net: &Network, assignment: &Assignment) -> Result<Vec<(usize, f64)>> {
    assignment.validate(net)?;
    let mut out = Vec::new();
    for k in 1..assignment.split_layers.len() {
        let layer = assignment.split_layers[k];
        let (src, dst) = (&assignment.group_ids[k - 1], &assignment.group_ids[k]);
        let w = &net.weights()[layer - 1];
        let (mut crossing, mut total) = (0.0, 0.0);
        for ((i, j), a) in w.indexed_iter() {
            total += a.abs();
            if dst[i] != src[j] {
                crossing += a.abs();
            }
        }
        out.push((layer, if total > 0.0 { crossing / total } else { 0.0 }));
    }
    Ok(out)
}

pub fn mean_inter_group_weight_mass(net: &Network, assignment: &Assignment) -> Result<f64> {
    let per_layer = inter_group_weight_mass(net, assignment)?;
    if per_layer.is_empty() {
        return Ok(0.0);
    }
    Ok(per_layer.iter().map(|(_, m)| m).sum::<f64>() / per_layer.len() as f64)
}
