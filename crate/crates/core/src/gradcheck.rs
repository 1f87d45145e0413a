//! Central finite-difference verification of every analytic gradient.
//!
//! Four scalar objectives are checked separately on small random problems:
//! the task cross-entropy `L`, each `T(l)`, each `V(l)` and the combined
//! objective. Numerical derivatives only use the forward value functions, never
//! the analytic gradient code.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::Serialize;

use crate::data::DualBatch;
use crate::nn::task_cross_entropy;
use crate::spatial::{density_cost, spatial_gradients, total_loss, transport_cost, SpatialConfig};
use crate::train::{loss_and_gradients, Model};
use crate::{Activation, Network, PositionMap, Result, HEAD_WIDTH};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Denominator floor for the relative error, so that two gradients that are
/// both ~0 compare by absolute difference instead.
pub const RELATIVE_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// A small random problem: model, batch and penalty configuration.
#[derive(Debug, Clone)]
pub struct Problem {
    pub model: Model,
    pub batch: DualBatch,
    pub spatial: SpatialConfig,
}

const SMALL_ARCHITECTURES: [[usize; 4]; 3] = [[2, 2, 1, 20], [1, 2, 1, 20], [3, 1, 1, 20]];

/// Random network with at most 49 weights and biases, every layer penalized.
pub fn small_problem(seed: u64) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes = SMALL_ARCHITECTURES[(seed % SMALL_ARCHITECTURES.len() as u64) as usize];
    let unit = Uniform::new(-1.0, 1.0).unwrap();
    // keep |a| away from the kink of |a| at 0
    let weight = |rng: &mut ChaCha8Rng| {
        let v: f64 = unit.sample(rng);
        v.signum() * (0.05 + 0.95 * v.abs())
    };
    let weights: Vec<Array2<f64>> = sizes
        .windows(2)
        .map(|p| Array2::from_shape_simple_fn((p[1], p[0]), || weight(&mut rng)))
        .collect();
    let biases: Vec<Array1<f64>> = sizes[1..]
        .iter()
        .map(|&n| Array1::from_shape_simple_fn(n, || 0.5 * unit.sample(&mut rng)))
        .collect();
    let network = Network::from_parts(sizes.to_vec(), weights, biases, Activation::Sigmoid).unwrap();

    // positions with no near-coincident pairs anywhere
    let positions = loop {
        let layers: Vec<Array2<f64>> = sizes
            .iter()
            .map(|&n| Array2::from_shape_simple_fn((n, 2), || StandardNormal.sample(&mut rng)))
            .collect();
        let all: Vec<[f64; 2]> = layers
            .iter()
            .flat_map(|p| p.rows().into_iter().map(|r| [r[0], r[1]]).collect::<Vec<_>>())
            .collect();
        let separated = all.iter().enumerate().all(|(i, a)| {
            all[i + 1..]
                .iter()
                .all(|b| (a[0] - b[0]).hypot(a[1] - b[1]) > 1e-2)
        });
        if separated {
            break PositionMap::from_layers(layers).unwrap();
        }
    };

    let batch_size = 4;
    let inputs = Array2::from_shape_simple_fn((batch_size, sizes[0]), || rng.random::<f64>());
    let labels = (0..batch_size)
        .map(|i| {
            let a = Some(rng.random_range(0..HEAD_WIDTH as u8));
            let b = Some(rng.random_range(0..HEAD_WIDTH as u8));
            match i % 3 {
                0 => [a, b],
                1 => [a, None],
                _ => [None, b],
            }
        })
        .collect();
    let spatial = SpatialConfig::for_depth(sizes.len() - 1);
    Problem {
        model: Model { network, positions },
        batch: DualBatch { inputs, labels },
        spatial,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Objective {
    Task,
    Transport(usize),
    Density(usize),
    Total,
}

impl Objective {
    fn name(self) -> String {
        match self {
            Objective::Task => "L".into(),
            Objective::Transport(l) => format!("T({l})"),
            Objective::Density(l) => format!("V({l})"),
            Objective::Total => "L_spatial".into(),
        }
    }
}

fn value(p: &Problem, obj: Objective) -> Result<f64> {
    let m = &p.model;
    match obj {
        Objective::Task => Ok(task_cross_entropy(&m.network.forward(p.batch.inputs.view())?, &p.batch.labels)?.loss),
        Objective::Transport(l) => transport_cost(&m.network, &m.positions, l),
        Objective::Density(l) => density_cost(&m.positions, l),
        Objective::Total => {
            let base = task_cross_entropy(&m.network.forward(p.batch.inputs.view())?, &p.batch.labels)?.loss;
            total_loss(base, &m.network, &m.positions, &p.spatial)
        }
    }
}

/// Analytic gradient flattened in model tensor order.
fn analytic(p: &Problem, obj: Objective) -> Result<Vec<f64>> {
    let single = |alpha: f64, beta: f64, l: usize| SpatialConfig {
        alpha,
        beta,
        penalized_layers: vec![l],
        distance_epsilon: p.spatial.distance_epsilon,
    };
    let (net, positions) = match obj {
        Objective::Task => {
            let (_, g) = loss_and_gradients(&p.model, &p.batch, &SpatialConfig::disabled())?;
            (g.network.weights.into_iter().zip(g.network.biases).collect::<Vec<_>>(), g.positions)
        }
        Objective::Total => {
            let (_, g) = loss_and_gradients(&p.model, &p.batch, &p.spatial)?;
            (g.network.weights.into_iter().zip(g.network.biases).collect(), g.positions)
        }
        Objective::Transport(l) | Objective::Density(l) => {
            let cfg = if matches!(obj, Objective::Transport(_)) {
                single(1.0, 0.0, l)
            } else {
                single(0.0, 1.0, l)
            };
            let g = spatial_gradients(&p.model.network, &p.model.positions, &cfg)?;
            let net = g
                .weights
                .into_iter()
                .zip(p.model.network.biases())
                .zip(p.model.network.weights())
                .map(|((gw, b), w)| (gw.unwrap_or_else(|| Array2::zeros(w.dim())), Array1::zeros(b.len())))
                .collect();
            (net, g.positions)
        }
    };
    let mut flat = Vec::new();
    for (w, b) in net {
        flat.extend(w.iter());
        flat.extend(b.iter());
    }
    for p in positions {
        flat.extend(p.iter());
    }
    Ok(flat)
}

/// Mutable reference to coordinate `i` of the flattened model.
fn coordinate(model: &mut Model, mut i: usize) -> &mut f64 {
    let (weights, biases) = model.network.params_mut();
    for (w, b) in weights.iter_mut().zip(biases.iter_mut()) {
        if i < w.len() {
            return &mut w.as_slice_mut().unwrap()[i];
        }
        i -= w.len();
        if i < b.len() {
            return &mut b.as_slice_mut().unwrap()[i];
        }
        i -= b.len();
    }
    for p in model.positions.layers_mut() {
        if i < p.len() {
            return &mut p.as_slice_mut().unwrap()[i];
        }
        i -= p.len();
    }
    panic!("coordinate out of range");
}

#[derive(Debug, Clone, Serialize)]
pub struct ObjectiveCheck {
    pub objective: String,
    pub max_relative_error: f64,
    pub worst_coordinate: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub layer_sizes: Vec<usize>,
    pub parameters: usize,
    pub coordinates: usize,
    pub checks: Vec<ObjectiveCheck>,
    pub max_relative_error: f64,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_relative_error <= tolerance
    }
}

/// Checks every objective on `problem`. `perturb` adds a constant to the first
/// analytic coordinate of every objective (used to exercise the failure path).
pub fn check_problem(problem: &Problem, seed: u64, step: f64, perturb: f64) -> Result<GradCheckReport> {
    let mut objectives = vec![Objective::Task];
    for &l in &problem.spatial.penalized_layers {
        objectives.push(Objective::Transport(l));
        objectives.push(Objective::Density(l));
    }
    objectives.push(Objective::Total);

    let n = problem.model.tensor_lengths().iter().sum();
    let mut checks = Vec::new();
    for obj in objectives {
        let mut grad = analytic(problem, obj)?;
        grad[0] += perturb;
        let mut probe = problem.clone();
        let (mut worst, mut worst_i) = (0.0f64, 0);
        for (i, &a) in grad.iter().enumerate().take(n) {
            let original = *coordinate(&mut probe.model, i);
            *coordinate(&mut probe.model, i) = original + step;
            let plus = value(&probe, obj)?;
            *coordinate(&mut probe.model, i) = original - step;
            let minus = value(&probe, obj)?;
            *coordinate(&mut probe.model, i) = original;
            let numeric = (plus - minus) / (2.0 * step);
            let err = relative_error(a, numeric);
            if err > worst || err.is_nan() {
                worst = if err.is_nan() { f64::INFINITY } else { err };
                worst_i = i;
            }
        }
        checks.push(ObjectiveCheck {
            objective: obj.name(),
            max_relative_error: worst,
            worst_coordinate: worst_i,
        });
    }
    let max_relative_error = checks.iter().map(|c| c.max_relative_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        seed,
        layer_sizes: problem.model.network.layer_sizes().to_vec(),
        parameters: problem.model.network.parameter_count(),
        coordinates: n,
        checks,
        max_relative_error,
    })
}

pub fn run(seed: u64, perturb: f64) -> Result<GradCheckReport> {
    check_problem(&small_problem(seed), seed, DEFAULT_STEP, perturb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_problems_stay_small() {
        for seed in 0..6 {
            let p = small_problem(seed);
            assert!(p.model.network.parameter_count() <= 60);
            assert_eq!(p.spatial.penalized_layers, vec![1, 2, 3]);
        }
    }

    #[test]
    fn passes_on_a_few_seeds() {
        for seed in 0..3 {
            let r = run(seed, 0.0).unwrap();
            assert!(r.passed(DEFAULT_TOLERANCE), "{r:?}");
            assert_eq!(r.checks.len(), 8);
        }
    }

    #[test]
    fn perturbation_fails() {
        let r = run(1, 1e-2).unwrap();
        assert!(!r.passed(DEFAULT_TOLERANCE));
    }
}
