//! IDX parsing and dual-task batch composition.
//!
//! Three ways of presenting an (MNIST, Fashion-MNIST) pair to one network:
//!
//! - `concat`: `[mnist | fashion]`, 1568 wide, both heads trained;
//! - `mixed`: `c * mnist + (1 - c) * fashion`, 784 wide, both heads trained;
//! - `sequential`: one image from one dataset, 784 wide, only its head trained.

use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::HeadLabels;
use crate::{Error, Result, HEAD_WIDTH};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const IMAGE_PIXELS: usize = 28 * 28;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IdxData {
    Images {
        rows: usize,
        cols: usize,
        /// `count * rows * cols` bytes, row-major per image.
        pixels: Vec<u8>,
    },
    Labels(Vec<u8>),
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Length {
            expected: offset + 4,
            found: bytes.len(),
        })
}

/// Parses an IDX image or label file, gunzipping first if needed.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxData> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut raw = Vec::new();
        GzDecoder::new(bytes)
            .read_to_end(&mut raw)
            .map_err(|e| Error::Format(format!("gzip: {e}")))?;
        return parse_idx(&raw);
    }
    let magic = be_u32(bytes, 0)?;
    match magic {
        IMAGE_MAGIC => {
            let count = be_u32(bytes, 4)? as usize;
            let rows = be_u32(bytes, 8)? as usize;
            let cols = be_u32(bytes, 12)? as usize;
            let len = count * rows * cols;
            let body = take_body(bytes, 16, len)?;
            Ok(IdxData::Images {
                rows,
                cols,
                pixels: body.to_vec(),
            })
        }
        LABEL_MAGIC => {
            let count = be_u32(bytes, 4)? as usize;
            Ok(IdxData::Labels(take_body(bytes, 8, count)?.to_vec()))
        }
        other => Err(Error::Format(format!(
            "unexpected magic 0x{other:08x} (want 0x{IMAGE_MAGIC:08x} or 0x{LABEL_MAGIC:08x})"
        ))),
    }
}

fn take_body(bytes: &[u8], header: usize, len: usize) -> Result<&[u8]> {
    let expected = header + len;
    if bytes.len() < expected {
        return Err(Error::Length {
            expected,
            found: bytes.len(),
        });
    }
    Ok(&bytes[header..expected])
}

/// Serializes images back to an uncompressed IDX payload.
pub fn encode_idx(data: &IdxData) -> Vec<u8> {
    let mut out = Vec::new();
    match data {
        IdxData::Images { rows, cols, pixels } => {
            out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
            out.extend_from_slice(&((pixels.len() / (rows * cols)) as u32).to_be_bytes());
            out.extend_from_slice(&(*rows as u32).to_be_bytes());
            out.extend_from_slice(&(*cols as u32).to_be_bytes());
            out.extend_from_slice(pixels);
        }
        IdxData::Labels(labels) => {
            out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
            out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
            out.extend_from_slice(labels);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Images and labels of one dataset split.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub split: Split,
    pub pixels_per_image: usize,
    images: Vec<u8>,
    labels: Vec<u8>,
}

impl RawDataset {
    pub fn new(split: Split, pixels_per_image: usize, images: Vec<u8>, labels: Vec<u8>) -> Result<Self> {
        if pixels_per_image == 0 || images.len() != labels.len() * pixels_per_image {
            return Err(Error::Data(format!(
                "{} image bytes do not hold {} images of {pixels_per_image} pixels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(i) = labels.iter().position(|&l| l as usize >= HEAD_WIDTH) {
            return Err(Error::Data(format!("label {} at index {i} outside 0..9", labels[i])));
        }
        Ok(Self {
            split,
            pixels_per_image,
            images,
            labels,
        })
    }

    pub fn from_idx(split: Split, images: IdxData, labels: IdxData) -> Result<Self> {
        match (images, labels) {
            (IdxData::Images { rows, cols, pixels }, IdxData::Labels(labels)) => {
                Self::new(split, rows * cols, pixels, labels)
            }
            _ => Err(Error::Format("expected an image file and a label file".into())),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        &self.images[i * self.pixels_per_image..(i + 1) * self.pixels_per_image]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    fn check_index(&self, i: usize, what: &str) -> Result<()> {
        if i >= self.len() {
            return Err(Error::Contract(format!(
                "{what} index {i} out of range for {} examples",
                self.len()
            )));
        }
        Ok(())
    }
}

/// Where the IDX files live under the data directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataLayout {
    pub mnist_dir: String,
    pub fashion_dir: String,
    pub train_images: String,
    pub train_labels: String,
    pub test_images: String,
    pub test_labels: String,
}

impl Default for DataLayout {
    fn default() -> Self {
        Self {
            mnist_dir: "mnist".into(),
            fashion_dir: "fashion".into(),
            train_images: "train-images-idx3-ubyte".into(),
            train_labels: "train-labels-idx1-ubyte".into(),
            test_images: "t10k-images-idx3-ubyte".into(),
            test_labels: "t10k-labels-idx1-ubyte".into(),
        }
    }
}

/// MNIST and Fashion-MNIST for one split.
#[derive(Debug, Clone)]
pub struct DualDataset {
    pub mnist: RawDataset,
    pub fashion: RawDataset,
}

fn read_idx_file(base: &Path) -> Result<IdxData> {
    let gz = PathBuf::from(format!("{}.gz", base.display()));
    let path = if base.exists() || !gz.exists() { base.to_path_buf() } else { gz };
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    parse_idx(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

impl DualDataset {
    pub fn load(data_dir: &Path, layout: &DataLayout, split: Split) -> Result<Self> {
        let (img, lbl) = match split {
            Split::Train => (&layout.train_images, &layout.train_labels),
            Split::Test => (&layout.test_images, &layout.test_labels),
        };
        let load = |sub: &str| -> Result<RawDataset> {
            let dir = data_dir.join(sub);
            RawDataset::from_idx(split, read_idx_file(&dir.join(img))?, read_idx_file(&dir.join(lbl))?)
        };
        Ok(Self {
            mnist: load(&layout.mnist_dir)?,
            fashion: load(&layout.fashion_dir)?,
        })
    }

    pub fn dataset(&self, source: Source) -> &RawDataset {
        match source {
            Source::Mnist => &self.mnist,
            Source::Fashion => &self.fashion,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    Concat,
    Mixed,
    Sequential,
}

impl InputMode {
    pub fn input_dim(self) -> usize {
        match self {
            InputMode::Concat => 2 * IMAGE_PIXELS,
            InputMode::Mixed | InputMode::Sequential => IMAGE_PIXELS,
        }
    }
}

impl fmt::Display for InputMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InputMode::Concat => "concat",
            InputMode::Mixed => "mixed",
            InputMode::Sequential => "sequential",
        })
    }
}

impl std::str::FromStr for InputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat" | "concatenated" => Ok(InputMode::Concat),
            "mixed" | "mixing" => Ok(InputMode::Mixed),
            "sequential" => Ok(InputMode::Sequential),
            other => Err(Error::Config(format!(
                "unknown mode {other:?} (want concat, mixed or sequential)"
            ))),
        }
    }
}

/// Which dataset (and therefore which head) an example comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Mnist,
    Fashion,
}

impl Source {
    pub fn head(self) -> usize {
        match self {
            Source::Mnist => 0,
            Source::Fashion => 1,
        }
    }

    pub fn from_head(head: usize) -> Self {
        if head == 0 {
            Source::Mnist
        } else {
            Source::Fashion
        }
    }
}

/// Composed network inputs plus per-head labels. A head is active for an
/// example exactly when its label is present.
#[derive(Debug, Clone, PartialEq)]
pub struct DualBatch {
    pub inputs: Array2<f64>,
    pub labels: Vec<HeadLabels>,
}

impl DualBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn task_mask(&self) -> Vec<[bool; 2]> {
        self.labels
            .iter()
            .map(|l| [l[0].is_some(), l[1].is_some()])
            .collect()
    }
}

fn check_pairs(mnist: &RawDataset, fashion: &RawDataset, a: &[usize], b: &[usize]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!(
            "index lists differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if mnist.pixels_per_image != IMAGE_PIXELS || fashion.pixels_per_image != IMAGE_PIXELS {
        return Err(Error::Data(format!("images must have {IMAGE_PIXELS} pixels")));
    }
    for &i in a {
        mnist.check_index(i, "mnist")?;
    }
    for &j in b {
        fashion.check_index(j, "fashion")?;
    }
    Ok(())
}

const PIXEL_MAX: f64 = 255.0;

pub fn make_concat_batch(mnist: &RawDataset, fashion: &RawDataset, a: &[usize], b: &[usize]) -> Result<DualBatch> {
    check_pairs(mnist, fashion, a, b)?;
    let mut inputs = Array2::zeros((a.len(), 2 * IMAGE_PIXELS));
    let mut labels = Vec::with_capacity(a.len());
    for (r, (&i, &j)) in a.iter().zip(b).enumerate() {
        let mut row = inputs.row_mut(r);
        for (dst, &px) in row.iter_mut().zip(mnist.image(i).iter().chain(fashion.image(j))) {
            *dst = px as f64 / PIXEL_MAX;
        }
        labels.push([Some(mnist.label(i)), Some(fashion.label(j))]);
    }
    Ok(DualBatch { inputs, labels })
}

/// `mnist_weight * mnist + (1 - mnist_weight) * fashion`, pixels scaled to [0, 1].
pub fn make_mixed_batch(
    mnist: &RawDataset,
    fashion: &RawDataset,
    a: &[usize],
    b: &[usize],
    mnist_weight: f64,
) -> Result<DualBatch> {
    check_pairs(mnist, fashion, a, b)?;
    if !(0.0..=1.0).contains(&mnist_weight) {
        return Err(Error::Config(format!("mixing weight {mnist_weight} outside [0, 1]")));
    }
    let fashion_weight = 1.0 - mnist_weight;
    let mut inputs = Array2::zeros((a.len(), IMAGE_PIXELS));
    let mut labels = Vec::with_capacity(a.len());
    for (r, (&i, &j)) in a.iter().zip(b).enumerate() {
        let mut row = inputs.row_mut(r);
        for ((dst, &pm), &pf) in row.iter_mut().zip(mnist.image(i)).zip(fashion.image(j)) {
            *dst = mnist_weight * (pm as f64 / PIXEL_MAX) + fashion_weight * (pf as f64 / PIXEL_MAX);
        }
        labels.push([Some(mnist.label(i)), Some(fashion.label(j))]);
    }
    Ok(DualBatch { inputs, labels })
}

pub fn make_sequential_batch(
    mnist: &RawDataset,
    fashion: &RawDataset,
    picks: &[(Source, usize)],
) -> Result<DualBatch> {
    let mut inputs = Array2::zeros((picks.len(), IMAGE_PIXELS));
    let mut labels = Vec::with_capacity(picks.len());
    for (r, &(source, i)) in picks.iter().enumerate() {
        let ds = match source {
            Source::Mnist => mnist,
            Source::Fashion => fashion,
        };
        ds.check_index(i, "sequential")?;
        if ds.pixels_per_image != IMAGE_PIXELS {
            return Err(Error::Data(format!("images must have {IMAGE_PIXELS} pixels")));
        }
        for (dst, &px) in inputs.row_mut(r).iter_mut().zip(ds.image(i)) {
            *dst = px as f64 / PIXEL_MAX;
        }
        let mut l = [None, None];
        l[source.head()] = Some(ds.label(i));
        labels.push(l);
    }
    Ok(DualBatch { inputs, labels })
}

/// Example indices making up one batch, before pixels are gathered.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BatchPlan {
    Paired { mnist: Vec<usize>, fashion: Vec<usize> },
    Picks(Vec<(Source, usize)>),
}

impl BatchPlan {
    pub fn len(&self) -> usize {
        match self {
            BatchPlan::Paired { mnist, .. } => mnist.len(),
            BatchPlan::Picks(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(rng);
    v
}

/// Batch plans for one epoch.
///
/// Each epoch draws fresh independent permutations of both datasets from a
/// stream keyed by `(seed, epoch)`. Paired modes zip the two permutations;
/// sequential mode makes `max(len)` picks, choosing the source with
/// probability 1/2 and walking that source's permutation.
pub fn epoch_plan(
    data: &DualDataset,
    mode: InputMode,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<BatchPlan>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    if data.mnist.is_empty() || data.fashion.is_empty() {
        return Err(Error::Data("empty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let perm_a = shuffled(data.mnist.len(), &mut rng);
    let perm_b = shuffled(data.fashion.len(), &mut rng);
    let plans = match mode {
        InputMode::Concat | InputMode::Mixed => {
            let n = perm_a.len().min(perm_b.len());
            (0..n)
                .step_by(batch_size)
                .map(|start| {
                    let end = (start + batch_size).min(n);
                    BatchPlan::Paired {
                        mnist: perm_a[start..end].to_vec(),
                        fashion: perm_b[start..end].to_vec(),
                    }
                })
                .collect()
        }
        InputMode::Sequential => {
            let n = perm_a.len().max(perm_b.len());
            let (mut ca, mut cb) = (0usize, 0usize);
            let picks: Vec<(Source, usize)> = (0..n)
                .map(|_| {
                    if rng.random_bool(0.5) {
                        let p = (Source::Mnist, perm_a[ca % perm_a.len()]);
                        ca += 1;
                        p
                    } else {
                        let p = (Source::Fashion, perm_b[cb % perm_b.len()]);
                        cb += 1;
                        p
                    }
                })
                .collect();
            picks.chunks(batch_size).map(|c| BatchPlan::Picks(c.to_vec())).collect()
        }
    };
    Ok(plans)
}

/// Gathers pixels for a plan.
pub fn compose(data: &DualDataset, mode: InputMode, plan: &BatchPlan, mnist_weight: f64) -> Result<DualBatch> {
    match (mode, plan) {
        (InputMode::Concat, BatchPlan::Paired { mnist, fashion }) => {
            make_concat_batch(&data.mnist, &data.fashion, mnist, fashion)
        }
        (InputMode::Mixed, BatchPlan::Paired { mnist, fashion }) => {
            make_mixed_batch(&data.mnist, &data.fashion, mnist, fashion, mnist_weight)
        }
        (InputMode::Sequential, BatchPlan::Picks(p)) => make_sequential_batch(&data.mnist, &data.fashion, p),
        _ => Err(Error::Contract(format!("batch plan does not fit mode {mode}"))),
    }
}

/// Streams composed batches for one epoch.
pub struct EpochIterator<'a> {
    data: &'a DualDataset,
    mode: InputMode,
    mnist_weight: f64,
    plans: std::vec::IntoIter<BatchPlan>,
}

impl<'a> EpochIterator<'a> {
    pub fn new(
        data: &'a DualDataset,
        mode: InputMode,
        batch_size: usize,
        seed: u64,
        epoch: u64,
        mnist_weight: f64,
    ) -> Result<Self> {
        Ok(Self {
            data,
            mode,
            mnist_weight,
            plans: epoch_plan(data, mode, batch_size, seed, epoch)?.into_iter(),
        })
    }

    pub fn remaining(&self) -> usize {
        self.plans.len()
    }
}

impl Iterator for EpochIterator<'_> {
    type Item = Result<DualBatch>;

    fn next(&mut self) -> Option<Self::Item> {
        let plan = self.plans.next()?;
        Some(compose(self.data, self.mode, &plan, self.mnist_weight))
    }
}
