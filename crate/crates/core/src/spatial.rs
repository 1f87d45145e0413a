//! Neuron positions and the two wiring penalties.
//!
//! For a neuron layer `l` of width `N` with incoming weights `a`:
//!
//! ```text
//! T(l) = (1/N)   * sum over connections n1 -> n2, n2 in l of |a| * ||p(n1) - p(n2)||
//! V(l) = (1/N^2) * sum over ordered pairs n1 != n2 in l of exp(-||p(n1) - p(n2)||)
//! ```
//!
//! and the training objective is `L + (1/|S|) * sum over l in S of (alpha*T(l) + beta*V(l))`
//! for the penalized layer set `S`.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{Error, Network, Result};

/// 2-D coordinates for every neuron of every layer, input and output included.
/// Layer `l` is stored as an `(N_l, 2)` array of `(x, y)` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionMap {
    layers: Vec<Array2<f64>>,
}

impl PositionMap {
    /// Independent standard normal coordinates.
    pub fn gaussian(layer_sizes: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_sizes
            .iter()
            .map(|&n| Array2::from_shape_simple_fn((n, 2), || StandardNormal.sample(&mut rng)))
            .collect();
        Self { layers }
    }

    pub fn from_layers(layers: Vec<Array2<f64>>) -> Result<Self> {
        for (l, p) in layers.iter().enumerate() {
            if p.ncols() != 2 {
                return Err(Error::Shape(format!("layer {l}: positions must have 2 columns")));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("layer {l}: non-finite position")));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Array2<f64>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.layers
    }

    pub fn layer(&self, l: usize) -> &Array2<f64> {
        &self.layers[l]
    }

    pub fn point(&self, l: usize, n: usize) -> [f64; 2] {
        let p = &self.layers[l];
        [p[[n, 0]], p[[n, 1]]]
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(|p| p.nrows()).collect()
    }

    pub fn check_matches(&self, net: &Network) -> Result<()> {
        if self.layer_sizes() != net.layer_sizes() {
            return Err(Error::Shape(format!(
                "position layers {:?} do not match network {:?}",
                self.layer_sizes(),
                net.layer_sizes()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialConfig {
    pub alpha: f64,
    pub beta: f64,
    /// Neuron-layer indices (1 = first hidden layer) whose incoming
    /// connections and positions are penalized.
    pub penalized_layers: Vec<usize>,
    /// Below this distance the direction vector is taken as zero.
    pub distance_epsilon: f64,
}

impl SpatialConfig {
    /// `alpha = 1`, `beta = 3`, penalizing the last three neuron layers.
    pub fn for_depth(depth: usize) -> Self {
        Self {
            alpha: 1.0,
            beta: 3.0,
            penalized_layers: default_penalized_layers(depth),
            distance_epsilon: 1e-8,
        }
    }

    /// Both penalties switched off: the regular baseline.
    pub fn disabled() -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
            penalized_layers: Vec::new(),
            distance_epsilon: 1e-8,
        }
    }

    pub fn is_active(&self) -> bool {
        !self.penalized_layers.is_empty() && (self.alpha != 0.0 || self.beta != 0.0)
    }

    pub fn validate(&self, depth: usize) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be non-negative, got {}", self.beta)));
        }
        if !(self.distance_epsilon > 0.0) {
            return Err(Error::Config("distance_epsilon must be positive".into()));
        }
        if self.penalized_layers.is_empty() && (self.alpha != 0.0 || self.beta != 0.0) {
            return Err(Error::Config(
                "penalized layer set is empty but alpha or beta is nonzero".into(),
            ));
        }
        for (i, &l) in self.penalized_layers.iter().enumerate() {
            if l == 0 || l > depth {
                return Err(Error::Config(format!(
                    "penalized layer {l} is not a non-input layer of a depth-{depth} network"
                )));
            }
            if self.penalized_layers[..i].contains(&l) {
                return Err(Error::Config(format!("penalized layer {l} listed twice")));
            }
        }
        Ok(())
    }
}

/// Third hidden layer onward for the standard 5-weight-layer network, i.e. the
/// last three neuron layers (clamped for shallow networks).
pub fn default_penalized_layers(depth: usize) -> Vec<usize> {
    (depth.saturating_sub(2).max(1)..=depth).collect()
}

fn check_layer(net: &Network, pos: &PositionMap, layer: usize) -> Result<()> {
    if layer == 0 || layer > net.depth() {
        return Err(Error::Contract(format!(
            "layer {layer} out of range 1..={}",
            net.depth()
        )));
    }
    pos.check_matches(net)
}

#[inline]
fn distance(p: &Array2<f64>, i: usize, q: &Array2<f64>, j: usize) -> (f64, f64, f64) {
    let dx = p[[i, 0]] - q[[j, 0]];
    let dy = p[[i, 1]] - q[[j, 1]];
    (dx, dy, (dx * dx + dy * dy).sqrt())
}

/// `T(l)` for neuron layer `layer`.
pub fn transport_cost(net: &Network, pos: &PositionMap, layer: usize) -> Result<f64> {
    check_layer(net, pos, layer)?;
    let w = &net.weights()[layer - 1];
    let (here, prev) = (pos.layer(layer), pos.layer(layer - 1));
    let mut sum = 0.0;
    for ((i, j), a) in w.indexed_iter() {
        sum += a.abs() * distance(here, i, prev, j).2;
    }
    Ok(sum / w.nrows() as f64)
}

/// `V(l)` for neuron layer `layer`, self-pairs excluded.
pub fn density_cost(pos: &PositionMap, layer: usize) -> Result<f64> {
    let p = pos
        .layers
        .get(layer)
        .ok_or_else(|| Error::Contract(format!("layer {layer} out of range")))?;
    let n = p.nrows();
    let mut sum = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            sum += 2.0 * (-distance(p, i, p, j).2).exp();
        }
    }
    Ok(sum / (n * n) as f64)
}

/// The penalty part of the objective, `(1/|S|) * sum(alpha*T + beta*V)`.
pub fn spatial_penalty(net: &Network, pos: &PositionMap, cfg: &SpatialConfig) -> Result<f64> {
    cfg.validate(net.depth())?;
    if cfg.penalized_layers.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for &l in &cfg.penalized_layers {
        sum += cfg.alpha * transport_cost(net, pos, l)? + cfg.beta * density_cost(pos, l)?;
    }
    Ok(sum / cfg.penalized_layers.len() as f64)
}

/// `L + (1/|S|) * sum over S of (alpha*T(l) + beta*V(l))`.
pub fn total_loss(base_loss: f64, net: &Network, pos: &PositionMap, cfg: &SpatialConfig) -> Result<f64> {
    Ok(base_loss + spatial_penalty(net, pos, cfg)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerPenalty {
    pub layer: usize,
    pub transport: f64,
    pub density: f64,
}

/// Penalty value and its gradients. Weight gradients exist only for weight
/// layers feeding a penalized layer; position gradients cover every layer.
#[derive(Debug, Clone)]
pub struct SpatialGradients {
    pub penalty: f64,
    pub per_layer: Vec<LayerPenalty>,
    pub weights: Vec<Option<Array2<f64>>>,
    pub positions: Vec<Array2<f64>>,
}

pub fn spatial_gradients(net: &Network, pos: &PositionMap, cfg: &SpatialConfig) -> Result<SpatialGradients> {
    cfg.validate(net.depth())?;
    pos.check_matches(net)?;
    let mut weights: Vec<Option<Array2<f64>>> = vec![None; net.depth()];
    let mut positions: Vec<Array2<f64>> = pos.layers.iter().map(|p| Array2::zeros(p.dim())).collect();
    let mut per_layer = Vec::with_capacity(cfg.penalized_layers.len());
    let mut penalty = 0.0;
    if cfg.penalized_layers.is_empty() {
        return Ok(SpatialGradients {
            penalty,
            per_layer,
            weights,
            positions,
        });
    }
    let inv_layers = 1.0 / cfg.penalized_layers.len() as f64;
    let eps = cfg.distance_epsilon;

    for &l in &cfg.penalized_layers {
        let w = &net.weights()[l - 1];
        let (here, prev) = (pos.layer(l), pos.layer(l - 1));
        let n = here.nrows();

        // transport
        let scale_t = cfg.alpha * inv_layers / n as f64;
        let mut gw = Array2::zeros(w.dim());
        let mut transport = 0.0;
        {
            let (gp_here, gp_prev) = two_mut(&mut positions, l, l - 1);
            for ((i, j), &a) in w.indexed_iter() {
                let (dx, dy, d) = distance(here, i, prev, j);
                transport += a.abs() * d;
                gw[[i, j]] = scale_t * sign(a) * d;
                if d >= eps {
                    let k = scale_t * a.abs() / d;
                    gp_here[[i, 0]] += k * dx;
                    gp_here[[i, 1]] += k * dy;
                    gp_prev[[j, 0]] -= k * dx;
                    gp_prev[[j, 1]] -= k * dy;
                }
            }
        }
        transport /= n as f64;
        match &mut weights[l - 1] {
            Some(existing) => *existing += &gw,
            slot => *slot = Some(gw),
        }

        // density, each unordered pair standing for both orders
        let scale_v = cfg.beta * inv_layers / (n * n) as f64;
        let mut density = 0.0;
        let gp = &mut positions[l];
        for i in 0..n {
            for j in (i + 1)..n {
                let (dx, dy, d) = distance(here, i, here, j);
                let e = (-d).exp();
                density += 2.0 * e;
                if d >= eps {
                    let k = scale_v * 2.0 * e / d;
                    gp[[i, 0]] -= k * dx;
                    gp[[i, 1]] -= k * dy;
                    gp[[j, 0]] += k * dx;
                    gp[[j, 1]] += k * dy;
                }
            }
        }
        density /= (n * n) as f64;

        penalty += inv_layers * (cfg.alpha * transport + cfg.beta * density);
        per_layer.push(LayerPenalty {
            layer: l,
            transport,
            density,
        });
    }
    Ok(SpatialGradients {
        penalty,
        per_layer,
        weights,
        positions,
    })
}

#[inline]
fn sign(a: f64) -> f64 {
    if a > 0.0 {
        1.0
    } else if a < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn two_mut<T>(v: &mut [T], a: usize, b: usize) -> (&mut T, &mut T) {
    assert!(a != b);
    if a < b {
        let (lo, hi) = v.split_at_mut(b);
        (&mut lo[a], &mut hi[0])
    } else {
        let (lo, hi) = v.split_at_mut(a);
        (&mut hi[0], &mut lo[b])
    }
}
