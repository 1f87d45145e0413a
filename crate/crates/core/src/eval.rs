//! Per-task accuracy of the full network and of its split subnetworks.

use ndarray::{s, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{compose, BatchPlan, DualDataset, InputMode, Source};
use crate::split::{build_mask, masked_forward, Assignment, SubnetworkMask};
use crate::{Error, Network, Result, HEAD_WIDTH, NUM_TASKS};

/// Index of the largest logit; the lowest index wins ties.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// Number of rows of `head_logits` (n x 10) whose argmax equals the label.
pub fn correct_count(head_logits: ArrayView2<'_, f64>, labels: &[u8]) -> usize {
    head_logits
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &label)| argmax(&row.to_vec()) == label as usize)
        .count()
}

pub fn task_accuracy(head_logits: ArrayView2<'_, f64>, labels: &[u8]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    correct_count(head_logits, labels) as f64 / labels.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskAccuracies {
    pub mnist: f64,
    pub fashion: f64,
    /// Unweighted mean of the two tasks.
    pub average: f64,
}

impl TaskAccuracies {
    pub fn new(mnist: f64, fashion: f64) -> Self {
        Self {
            mnist,
            fashion,
            average: 0.5 * (mnist + fashion),
        }
    }

    pub fn get(&self, source: Source) -> f64 {
        match source {
            Source::Mnist => self.mnist,
            Source::Fashion => self.fashion,
        }
    }
}

/// One line of the results log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub mode: InputMode,
    pub spatial: Option<bool>,
    pub seed: Option<u64>,
    pub test_pairing_seed: u64,
    pub full: TaskAccuracies,
    /// Each group's masked subnetwork on its own task.
    pub split: Option<TaskAccuracies>,
    /// `full.average - split.average`.
    pub drop: Option<f64>,
    pub inter_group_weight_mass: Option<f64>,
    pub checkpoint: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub test_pairing_seed: u64,
    pub mnist_weight: f64,
    pub batch_size: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            test_pairing_seed: 0,
            mnist_weight: 0.5,
            batch_size: 1000,
        }
    }
}

/// Fixed pairing of the two test sets used by the paired modes.
pub fn test_pairing(test: &DualDataset, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n = test.mnist.len().min(test.fashion.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fashion: Vec<usize> = (0..test.fashion.len()).collect();
    fashion.shuffle(&mut rng);
    fashion.truncate(n);
    ((0..n).collect(), fashion)
}

/// Correct counts per head for one network view (full or masked).
fn count_correct(
    net: &Network,
    mask: Option<&SubnetworkMask>,
    test: &DualDataset,
    mode: InputMode,
    opts: &EvalOptions,
    heads: &[usize],
) -> Result<[(usize, usize); NUM_TASKS]> {
    let mut counts = [(0usize, 0usize); NUM_TASKS];
    let logits_for = |plan: &BatchPlan| -> Result<(ndarray::Array2<f64>, Vec<crate::nn::HeadLabels>)> {
        let batch = compose(test, mode, plan, opts.mnist_weight)?;
        let logits = match mask {
            Some(m) => masked_forward(net, m, batch.inputs.view())?,
            None => net.forward(batch.inputs.view())?.logits().to_owned(),
        };
        Ok((logits, batch.labels))
    };
    let plans: Vec<BatchPlan> = match mode {
        InputMode::Concat | InputMode::Mixed => {
            let (a, b) = test_pairing(test, opts.test_pairing_seed);
            a.chunks(opts.batch_size)
                .zip(b.chunks(opts.batch_size))
                .map(|(a, b)| BatchPlan::Paired {
                    mnist: a.to_vec(),
                    fashion: b.to_vec(),
                })
                .collect()
        }
        InputMode::Sequential => {
            let mut picks = Vec::new();
            for &head in heads {
                let source = Source::from_head(head);
                picks.extend((0..test.dataset(source).len()).map(|i| (source, i)));
            }
            picks
                .chunks(opts.batch_size)
                .map(|c| BatchPlan::Picks(c.to_vec()))
                .collect()
        }
    };
    for plan in &plans {
        let (logits, labels) = logits_for(plan)?;
        for &head in heads {
            let cols = head * HEAD_WIDTH..(head + 1) * HEAD_WIDTH;
            let rows: Vec<usize> = (0..labels.len()).filter(|&r| labels[r][head].is_some()).collect();
            let head_labels: Vec<u8> = rows.iter().map(|&r| labels[r][head].unwrap()).collect();
            let head_logits = logits.select(ndarray::Axis(0), &rows);
            counts[head].0 += correct_count(head_logits.slice(s![.., cols]), &head_labels);
            counts[head].1 += rows.len();
        }
    }
    Ok(counts)
}

fn ratio((correct, total): (usize, usize)) -> f64 {
    if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    }
}

/// Full-network accuracy per task and, given an assignment, the accuracy of
/// group `g`'s subnetwork on task `g`.
pub fn evaluate(
    net: &Network,
    assignment: Option<&Assignment>,
    test: &DualDataset,
    mode: InputMode,
    opts: &EvalOptions,
) -> Result<AccuracyReport> {
    if net.input_dim() != mode.input_dim() {
        return Err(Error::Shape(format!(
            "network input width {} does not fit mode {mode} ({})",
            net.input_dim(),
            mode.input_dim()
        )));
    }
    let all_heads: Vec<usize> = (0..NUM_TASKS).collect();
    let full = count_correct(net, None, test, mode, opts, &all_heads)?;
    let full = TaskAccuracies::new(ratio(full[0]), ratio(full[1]));

    let split = match assignment {
        None => None,
        Some(a) => {
            a.validate(net)?;
            if a.groups != NUM_TASKS {
                return Err(Error::Contract(format!(
                    "evaluation needs {NUM_TASKS} groups, assignment has {}",
                    a.groups
                )));
            }
            let mut acc = [0.0; NUM_TASKS];
            for (head, slot) in acc.iter_mut().enumerate() {
                let mask = build_mask(a, head + 1)?;
                *slot = ratio(count_correct(net, Some(&mask), test, mode, opts, &[head])?[head]);
            }
            Some(TaskAccuracies::new(acc[0], acc[1]))
        }
    };
    Ok(AccuracyReport {
        mode,
        spatial: None,
        seed: None,
        test_pairing_seed: opts.test_pairing_seed,
        full,
        drop: split.map(|s| full.average - s.average),
        split,
        inter_group_weight_mass: None,
        checkpoint: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::fixtures;
    use crate::split::{fixtures::block_diagonal, greedy_split};
    use ndarray::array;

    #[test]
    fn perfect_and_tied_logits() {
        let logits = array![[0.0, 5.0, 1.0], [9.0, 0.0, 0.0]];
        assert_eq!(task_accuracy(logits.view(), &[1, 0]), 1.0);
        let flat = ndarray::Array2::<f64>::zeros((4, 10));
        assert_eq!(task_accuracy(flat.view(), &[0, 0, 0, 0]), 1.0);
        assert_eq!(task_accuracy(flat.view(), &[1, 0, 0, 0]), 0.75);
    }

    #[test]
    fn hand_counted_fixture() {
        let logits = array![
            [0.1, 0.9, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.3, 0.3, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0],
            [-1.0, -2.0, -3.0, -4.0, -5.0, -6.0, -7.0, -8.0, -9.0, -0.5],
            [0.0, 0.0, 0.0, 0.0, 0.0, 4.0, 0.0, 0.0, 0.0, 0.0],
        ];
        // row 0 -> 1 ok, row 1 -> 2 (tie) vs 3 wrong, row 2 -> 9 ok, row 3 -> 9 vs 0 wrong, row 4 -> 5 ok
        assert_eq!(correct_count(logits.view(), &[1, 3, 9, 0, 5]), 3);
    }

    #[test]
    fn untrained_network_is_near_chance() {
        let test = fixtures::dual(400, 400);
        let net = Network::new(&[1568, 32, 20], 5).unwrap();
        let r = evaluate(&net, None, &test, InputMode::Concat, &EvalOptions::default()).unwrap();
        assert!(r.full.average >= 0.0 && r.full.average <= 1.0);
        assert!(r.split.is_none() && r.drop.is_none());
    }

    #[test]
    fn mode_mismatch_is_rejected() {
        let test = fixtures::dual(10, 10);
        let net = Network::new(&[784, 8, 20], 5).unwrap();
        assert!(evaluate(&net, None, &test, InputMode::Concat, &EvalOptions::default()).is_err());
    }

    #[test]
    fn block_diagonal_drop_is_exactly_zero() {
        let test = fixtures::dual(64, 64);
        for mode in [InputMode::Concat, InputMode::Sequential] {
            let (net, _) = block_diagonal(mode.input_dim(), 21);
            let a = greedy_split(&net, 2, &[1, 2, 3]).unwrap();
            let r = evaluate(&net, Some(&a), &test, mode, &EvalOptions::default()).unwrap();
            assert_eq!(r.split.unwrap(), r.full);
            assert_eq!(r.drop, Some(0.0));
        }
    }

    #[test]
    fn pairing_is_fixed_by_seed() {
        let test = fixtures::dual(30, 40);
        assert_eq!(test_pairing(&test, 3), test_pairing(&test, 3));
        assert_ne!(test_pairing(&test, 3).1, test_pairing(&test, 4).1);
        assert_eq!(test_pairing(&test, 3).0.len(), 30);
    }
}
