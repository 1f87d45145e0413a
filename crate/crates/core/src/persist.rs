//! Run configuration, checkpoints and the results log.
//!
//! # Checkpoint layout (version 1)
//!
//! All integers little-endian.
//!
//! | offset        | size  | content                                        |
//! |---------------|-------|------------------------------------------------|
//! | 0             | 8     | magic `SPATNET\0`                              |
//! | 8             | 4     | format version, `u32`                          |
//! | 12            | 4     | header length `H`, `u32`                       |
//! | 16            | H     | UTF-8 JSON header ([`CheckpointHeader`])       |
//! | 16 + H        | 8 * F | `f64` payload, see below                       |
//! | 16 + H + 8F   | 4     | CRC-32 of every preceding byte, `u32`          |
//!
//! The payload holds, in order: for each weight layer its weight matrix
//! (row-major) then its bias vector; for each neuron layer its positions as
//! `x0 y0 x1 y1 ...`; then the optimizer's first moments and second moments,
//! each as one block per tensor in the same order as the parameters above.
//! With `P` weights plus biases and `Q` neurons, `F = 3 * (P + 2Q)`.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::data::{DataLayout, InputMode};
use crate::eval::AccuracyReport;
use crate::optim::{OptimizerConfig, OptimizerKind, OptimizerState};
use crate::spatial::{default_penalized_layers, SpatialConfig};
use crate::split::Assignment;
use crate::{Activation, Error, Network, PositionMap, Result, OUTPUT_WIDTH};

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"SPATNET\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything that defines a training run. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: InputMode,
    /// `false` trains the regular baseline (no transport or density cost).
    pub spatial: bool,
    pub alpha: f64,
    pub beta: f64,
    /// Neuron-layer indices to penalize and split; `null` means the last three.
    pub penalized_layers: Option<Vec<usize>>,
    pub hidden_layers: Vec<usize>,
    pub activation: Activation,
    /// Weights start uniform on `±init_gain / sqrt(fan_in)`.
    pub init_gain: f64,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Weight of the MNIST image in mixed mode; Fashion-MNIST gets the rest.
    pub mnist_weight: f64,
    pub distance_epsilon: f64,
    pub split_groups: usize,
    pub test_pairing_seed: u64,
    pub data_layout: DataLayout,
}

impl Default for RunConfig {
    fn default() -> Self {
        let opt = OptimizerConfig::default();
        Self {
            mode: InputMode::Concat,
            spatial: true,
            alpha: 1.0,
            beta: 3.0,
            penalized_layers: None,
            hidden_layers: vec![128, 128, 128, 256],
            activation: Activation::Sigmoid,
            init_gain: 12.0,
            optimizer: opt.kind,
            learning_rate: opt.learning_rate,
            adam_beta1: opt.beta1,
            adam_beta2: opt.beta2,
            adam_epsilon: opt.epsilon,
            batch_size: 256,
            epochs: 100,
            seed: 1,
            mnist_weight: 0.5,
            distance_epsilon: 1e-8,
            split_groups: 2,
            test_pairing_seed: 0,
            data_layout: DataLayout::default(),
        }
    }
}

impl RunConfig {
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.mode.input_dim()];
        sizes.extend(&self.hidden_layers);
        sizes.push(OUTPUT_WIDTH);
        sizes
    }

    pub fn depth(&self) -> usize {
        self.hidden_layers.len() + 1
    }

    /// Layers that are penalized in spatial runs and split in every run.
    pub fn split_layers(&self) -> Vec<usize> {
        self.penalized_layers
            .clone()
            .unwrap_or_else(|| default_penalized_layers(self.depth()))
    }

    pub fn spatial_config(&self) -> SpatialConfig {
        if self.spatial {
            SpatialConfig {
                alpha: self.alpha,
                beta: self.beta,
                penalized_layers: self.split_layers(),
                distance_epsilon: self.distance_epsilon,
            }
        } else {
            SpatialConfig {
                distance_epsilon: self.distance_epsilon,
                ..SpatialConfig::disabled()
            }
        }
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            kind: self.optimizer,
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        positive("learning_rate", self.learning_rate)?;
        positive("init_gain", self.init_gain)?;
        positive("adam_epsilon", self.adam_epsilon)?;
        positive("distance_epsilon", self.distance_epsilon)?;
        for (name, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.mnist_weight) {
            return Err(Error::Config(format!("mnist_weight must lie in [0, 1], got {}", self.mnist_weight)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.hidden_layers.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        if self.split_groups == 0 || OUTPUT_WIDTH % self.split_groups != 0 {
            return Err(Error::Config(format!(
                "split_groups must divide the output width {OUTPUT_WIDTH}"
            )));
        }
        let layers = self.split_layers();
        SpatialConfig {
            alpha: self.alpha,
            beta: self.beta,
            penalized_layers: layers.clone(),
            distance_epsilon: self.distance_epsilon,
        }
        .validate(self.depth())?;
        if layers.last() != Some(&self.depth()) || layers.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(Error::Config(format!(
                "penalized_layers {layers:?} must be contiguous and end at the output layer {}",
                self.depth()
            )));
        }
        Ok(())
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Pretty JSON with every field present.
pub fn dump_config(cfg: &RunConfig) -> String {
    serde_json::to_string_pretty(cfg).expect("config serializes")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub epochs_completed: usize,
    pub steps: u64,
}

/// Complete training state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub network: Network,
    pub positions: PositionMap,
    pub optimizer: OptimizerState,
    pub progress: Progress,
}

/// JSON header of the checkpoint file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub config: RunConfig,
    pub progress: Progress,
    pub optimizer: OptimizerConfig,
    pub optimizer_step: u64,
    pub optimizer_tensors: Vec<usize>,
    pub payload_f64s: usize,
}

fn push_all(out: &mut Vec<u8>, values: impl IntoIterator<Item = f64>) -> usize {
    let mut n = 0;
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
        n += 1;
    }
    n
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    ckpt.positions.check_matches(&ckpt.network)?;
    let mut payload = Vec::new();
    let mut count = 0;
    for (w, b) in ckpt.network.weights().iter().zip(ckpt.network.biases()) {
        count += push_all(&mut payload, w.iter().copied());
        count += push_all(&mut payload, b.iter().copied());
    }
    for p in ckpt.positions.layers() {
        count += push_all(&mut payload, p.iter().copied());
    }
    for block in ckpt.optimizer.first_moment.iter().chain(&ckpt.optimizer.second_moment) {
        count += push_all(&mut payload, block.iter().copied());
    }
    let header = CheckpointHeader {
        layer_sizes: ckpt.network.layer_sizes().to_vec(),
        activation: ckpt.network.activation(),
        config: ckpt.config.clone(),
        progress: ckpt.progress,
        optimizer: ckpt.optimizer.config,
        optimizer_step: ckpt.optimizer.step,
        optimizer_tensors: ckpt.optimizer.tensor_lengths(),
        payload_f64s: count,
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + header.len() + payload.len() + 4);
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let end = self.pos + 8 * n;
        let chunk = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Checkpoint("payload shorter than header declares".into()))?;
        self.pos = end;
        Ok(chunk
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 20 || bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {version}, this build reads version {CHECKPOINT_VERSION}"
        )));
    }
    let (body, crc) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().unwrap()) {
        return Err(Error::Checkpoint("checksum mismatch (file corrupt)".into()));
    }
    let header_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let header_bytes = body
        .get(16..16 + header_len)
        .ok_or_else(|| Error::Checkpoint("header length exceeds file".into()))?;
    let header: CheckpointHeader =
        serde_json::from_slice(header_bytes).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;

    let mut r = Reader {
        bytes: body,
        pos: 16 + header_len,
    };
    let sizes = &header.layer_sizes;
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for pair in sizes.windows(2) {
        let w = r.f64s(pair[0] * pair[1])?;
        weights.push(Array2::from_shape_vec((pair[1], pair[0]), w).expect("sized"));
        biases.push(Array1::from_vec(r.f64s(pair[1])?));
    }
    let network = Network::from_parts(sizes.clone(), weights, biases, header.activation)?;
    let mut layers = Vec::new();
    for &n in sizes {
        layers.push(Array2::from_shape_vec((n, 2), r.f64s(2 * n)?).expect("sized"));
    }
    let positions = PositionMap::from_layers(layers)?;
    let mut optimizer = OptimizerState::new(header.optimizer, &header.optimizer_tensors);
    optimizer.step = header.optimizer_step;
    for block in optimizer.first_moment.iter_mut().chain(optimizer.second_moment.iter_mut()) {
        let n = block.len();
        *block = r.f64s(n)?;
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing payload bytes",
            body.len() - r.pos
        )));
    }
    Ok(Checkpoint {
        config: header.config,
        network,
        positions,
        optimizer,
        progress: header.progress,
    })
}

/// Writes to a temporary sibling, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", file_name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ckpt)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn save_assignment(path: &Path, assignment: &Assignment) -> Result<()> {
    let json = serde_json::to_vec_pretty(assignment).expect("assignment serializes");
    write_atomic(path, &json)
}

pub fn load_assignment(path: &Path) -> Result<Assignment> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Json {
        path: PathBuf::from(path),
        source,
    })
}

/// Appends the report as one JSON line.
pub fn append_report(path: &Path, report: &AccuracyReport) -> Result<()> {
    append_json_line(path, report)
}

pub fn append_json_line<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut line = serde_json::to_string(value).expect("serializable");
    line.push('\n');
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .and_then(|mut f| f.write_all(line.as_bytes()))
        .map_err(|e| Error::io(path, e))
}
