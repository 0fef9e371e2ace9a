//! Dataset loading, synthesis, stratified sampling and the random-wrong
//! relabeling primitive.
//!
//! Datasets are immutable once constructed; every operation here is pure
//! given its seed. Subsets remember the indices they came from so that
//! downstream code can assert disjointness of splits drawn from one source.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Shape;
use crate::rng::{self, Gaussian};

const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

/// Inputs in `[0, 1]` (row-major per sample) with integer class labels.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    inputs: Vec<f64>,
    labels: Vec<usize>,
    class_count: usize,
    shape: Shape,
    /// Indices into the dataset this one was sampled from, when applicable.
    source_indices: Option<Vec<usize>>,
}

impl LabeledDataset {
    pub fn from_flat(
        inputs: Vec<f64>,
        labels: Vec<usize>,
        class_count: usize,
        shape: Shape,
    ) -> Result<Self> {
        let d = shape.len();
        if d == 0 {
            return Err(Error::InvalidArgument("sample shape must be non-empty".into()));
        }
        if inputs.len() != labels.len() * d {
            return Err(Error::ShapeMismatch(format!(
                "{} input values do not match {} labels of dimension {}",
                inputs.len(),
                labels.len(),
                d
            )));
        }
        if class_count == 0 {
            return Err(Error::InvalidArgument("class_count must be positive".into()));
        }
        for &y in &labels {
            if y >= class_count {
                return Err(Error::LabelOutOfRange { label: y, class_count });
            }
        }
        Ok(LabeledDataset {
            inputs,
            labels,
            class_count,
            shape,
            source_indices: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn input(&self, i: usize) -> &[f64] {
        let d = self.input_dim();
        &self.inputs[i * d..(i + 1) * d]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn inputs_flat(&self) -> &[f64] {
        &self.inputs
    }

    pub fn source_indices(&self) -> Option<&[usize]> {
        self.source_indices.as_deref()
    }

    /// New dataset holding the given rows (in the given order). Provenance
    /// composes: indices always refer to the original root dataset.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let d = self.input_dim();
        let mut inputs = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        let mut provenance = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidArgument(format!(
                    "subset index {i} out of range for {} samples",
                    self.len()
                )));
            }
            inputs.extend_from_slice(self.input(i));
            labels.push(self.labels[i]);
            provenance.push(match &self.source_indices {
                Some(src) => src[i],
                None => i,
            });
        }
        Ok(LabeledDataset {
            inputs,
            labels,
            class_count: self.class_count,
            shape: self.shape,
            source_indices: Some(provenance),
        })
    }

    /// Replaces the label vector (same inputs, same provenance).
    pub(crate) fn with_labels(&self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {} samples",
                labels.len(),
                self.len()
            )));
        }
        for &y in &labels {
            if y >= self.class_count {
                return Err(Error::LabelOutOfRange {
                    label: y,
                    class_count: self.class_count,
                });
            }
        }
        let mut out = self.clone();
        out.labels = labels;
        Ok(out)
    }

    /// Mutable access used by poisoning; callers keep values in `[0, 1]`.
    pub(crate) fn input_mut(&mut self, i: usize) -> &mut [f64] {
        let d = self.input_dim();
        &mut self.inputs[i * d..(i + 1) * d]
    }

    pub(crate) fn set_label(&mut self, i: usize, label: usize) {
        debug_assert!(label < self.class_count);
        self.labels[i] = label;
    }
}

// ---------------------------------------------------------------------------
// IDX files
// ---------------------------------------------------------------------------

fn read_be_u32(bytes: &[u8], offset: usize, what: &str, path: &Path) -> Result<u32> {
    if bytes.len() < offset + 4 {
        return Err(Error::Format(format!(
            "{}: truncated while reading {} (file has {} bytes)",
            path.display(),
            what,
            bytes.len()
        )));
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Parses an IDX image/label pair (big-endian headers, unsigned byte data);
/// pixel values are scaled to `[0, 1]` by `/255`. The class count is the
/// largest label plus one.
pub fn load_idx<P: AsRef<Path>, Q: AsRef<Path>>(
    images_path: P,
    labels_path: Q,
) -> Result<LabeledDataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let img = fs::read(images_path)?;
    let lab = fs::read(labels_path)?;

    let magic = read_be_u32(&img, 0, "image magic", images_path)?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad image magic {:#010x} (expected {:#010x})",
            images_path.display(),
            magic,
            IDX_IMAGE_MAGIC
        )));
    }
    let n_img = read_be_u32(&img, 4, "image count", images_path)? as usize;
    let rows = read_be_u32(&img, 8, "row count", images_path)? as usize;
    let cols = read_be_u32(&img, 12, "column count", images_path)? as usize;
    let expected = 16 + n_img * rows * cols;
    if img.len() != expected {
        return Err(Error::Format(format!(
            "{}: expected {} bytes for {} images of {}x{}, found {}",
            images_path.display(),
            expected,
            n_img,
            rows,
            cols,
            img.len()
        )));
    }

    let magic = read_be_u32(&lab, 0, "label magic", labels_path)?;
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad label magic {:#010x} (expected {:#010x})",
            labels_path.display(),
            magic,
            IDX_LABEL_MAGIC
        )));
    }
    let n_lab = read_be_u32(&lab, 4, "label count", labels_path)? as usize;
    if lab.len() != 8 + n_lab {
        return Err(Error::Format(format!(
            "{}: expected {} bytes for {} labels, found {}",
            labels_path.display(),
            8 + n_lab,
            n_lab,
            lab.len()
        )));
    }
    if n_img != n_lab {
        return Err(Error::Format(format!(
            "count mismatch: {} has {} images, {} has {} labels",
            images_path.display(),
            n_img,
            labels_path.display(),
            n_lab
        )));
    }

    let inputs: Vec<f64> = img[16..].iter().map(|&b| b as f64 / 255.0).collect();
    let labels: Vec<usize> = lab[8..].iter().map(|&b| b as usize).collect();
    let class_count = labels.iter().copied().max().map_or(1, |m| m + 1);
    LabeledDataset::from_flat(
        inputs,
        labels,
        class_count,
        Shape { h: rows, w: cols, c: 1 },
    )
}

// ---------------------------------------------------------------------------
// JSON dataset form
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct DatasetDoc {
    inputs: Vec<Vec<f64>>,
    labels: Vec<usize>,
    class_count: usize,
    shape: [usize; 3],
}

pub fn save_dataset_json<P: AsRef<Path>>(data: &LabeledDataset, path: P) -> Result<()> {
    let doc = DatasetDoc {
        inputs: (0..data.len()).map(|i| data.input(i).to_vec()).collect(),
        labels: data.labels.clone(),
        class_count: data.class_count,
        shape: [data.shape.h, data.shape.w, data.shape.c],
    };
    fs::write(path, serde_json::to_string(&doc)?)?;
    Ok(())
}

pub fn load_dataset_json<P: AsRef<Path>>(path: P) -> Result<LabeledDataset> {
    let doc: DatasetDoc = serde_json::from_str(&fs::read_to_string(path)?)?;
    let shape = Shape {
        h: doc.shape[0],
        w: doc.shape[1],
        c: doc.shape[2],
    };
    let d = shape.len();
    let mut inputs = Vec::with_capacity(doc.inputs.len() * d);
    for (i, row) in doc.inputs.iter().enumerate() {
        if row.len() != d {
            return Err(Error::Format(format!(
                "dataset row {i} has {} values, shape implies {d}",
                row.len()
            )));
        }
        inputs.extend_from_slice(row);
    }
    LabeledDataset::from_flat(inputs, doc.labels, doc.class_count, shape)
}

// ---------------------------------------------------------------------------
// Synthetic blobs
// ---------------------------------------------------------------------------

/// Unit-norm simplex vertices rotated into a fixed random `classes`-dim
/// subspace of `R^dim`, so every coordinate carries class signal. The
/// rotation depends only on `(classes, dim)`: datasets drawn with different
/// seeds share the same class means.
fn simplex_vertices(classes: usize, dim: usize) -> Vec<Vec<f64>> {
    let basis_seed = rng::derive_seed(0x51_4D50_4C45, (classes as u64) << 32 | dim as u64);
    let mut rng = rng::seeded(basis_seed);
    let mut gauss = Gaussian::new();
    let raw = nalgebra::DMatrix::<f64>::from_fn(dim, classes, |_, _| gauss.sample(&mut rng));
    let q = raw.qr().q();
    let centroid = 1.0 / classes as f64;
    let vertex_norm = (1.0 - centroid).sqrt();
    (0..classes)
        .map(|c| {
            // Centered one-hot vertex in simplex coordinates, pushed through Q.
            let mut v = vec![0.0; dim];
            for s in 0..classes {
                let coord = (if s == c { 1.0 - centroid } else { -centroid }) / vertex_norm;
                for j in 0..dim {
                    v[j] += q[(j, s)] * coord;
                }
            }
            v
        })
        .collect()
}

/// Gaussian blobs at fixed simplex vertices scaled by `separation`, affinely
/// rescaled and clamped into `[0, 1]`. Samples are grouped by class,
/// `per_class` each. Requires `classes <= dim`.
pub fn synth_blobs(
    classes: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if classes < 2 {
        return Err(Error::InvalidArgument("synth_blobs needs at least 2 classes".into()));
    }
    if per_class == 0 {
        return Err(Error::InvalidArgument("per_class must be >= 1".into()));
    }
    if dim < classes {
        return Err(Error::InvalidArgument(format!(
            "simplex vertices need dim >= classes ({dim} < {classes})"
        )));
    }
    if separation < 0.0 {
        return Err(Error::InvalidArgument("separation must be >= 0".into()));
    }
    let vertices = simplex_vertices(classes, dim);
    // Affine map into [0, 1]: the rotated vertices spread the class signal
    // thinly across coordinates, so a fixed pixel scale keeps values spanning
    // most of the range (tails clamp) while class distances stay `separation`
    // standard deviations apart.
    let max_coord = vertices
        .iter()
        .flat_map(|v| v.iter())
        .fold(0.0f64, |m, &v| m.max(v.abs()));
    let scale = (0.5 / (separation * max_coord + 3.0)).max(0.15);

    let mut rng = rng::seeded(seed);
    let mut gauss = Gaussian::new();
    let mut inputs = Vec::with_capacity(classes * per_class * dim);
    let mut labels = Vec::with_capacity(classes * per_class);
    for (c, vertex) in vertices.iter().enumerate() {
        for _ in 0..per_class {
            for &vj in vertex.iter() {
                let raw = separation * vj + gauss.sample(&mut rng);
                inputs.push((0.5 + raw * scale).clamp(0.0, 1.0));
            }
            labels.push(c);
        }
    }
    let side = (dim as f64).sqrt() as usize;
    let shape = if side * side == dim {
        Shape { h: side, w: side, c: 1 }
    } else {
        Shape::flat(dim)
    };
    LabeledDataset::from_flat(inputs, labels, classes, shape)
}

// ---------------------------------------------------------------------------
// Sampling and relabeling
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitSpec {
    pub fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

/// Draws a seeded sample and its complement. Stratified mode takes
/// `round(fraction * class_count)` per class (half-up, floor of one); the
/// subset and remainder partition the input exactly.
pub fn stratified_sample(
    data: &LabeledDataset,
    spec: &SplitSpec,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(spec.fraction > 0.0 && spec.fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "fraction must be in (0, 1], got {}",
            spec.fraction
        )));
    }
    if (spec.fraction * data.len() as f64) < 1.0 {
        return Err(Error::InvalidArgument(format!(
            "fraction {} of {} samples selects less than one",
            spec.fraction,
            data.len()
        )));
    }
    let mut rng = rng::seeded(spec.seed);
    let mut selected: Vec<usize> = Vec::new();
    if spec.stratified {
        for c in 0..data.class_count {
            let mut class_indices: Vec<usize> =
                (0..data.len()).filter(|&i| data.labels[i] == c).collect();
            if class_indices.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "class {c} has no samples; cannot draw a stratified split"
                )));
            }
            let want = round_half_up(spec.fraction * class_indices.len() as f64)
                .max(1)
                .min(class_indices.len());
            partial_shuffle(&mut class_indices, want, &mut rng);
            selected.extend_from_slice(&class_indices[..want]);
        }
    } else {
        let mut all: Vec<usize> = (0..data.len()).collect();
        let want = round_half_up(spec.fraction * data.len() as f64)
            .max(1)
            .min(data.len());
        partial_shuffle(&mut all, want, &mut rng);
        selected.extend_from_slice(&all[..want]);
    }
    selected.sort_unstable();
    let mut in_subset = vec![false; data.len()];
    for &i in &selected {
        in_subset[i] = true;
    }
    let rest: Vec<usize> = (0..data.len()).filter(|&i| !in_subset[i]).collect();
    Ok((data.subset(&selected)?, data.subset(&rest)?))
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

fn partial_shuffle<R: Rng>(items: &mut [usize], take: usize, rng: &mut R) {
    let n = items.len();
    for i in 0..take.min(n.saturating_sub(1)) {
        let j = rng.gen_range(i..n);
        items.swap(i, j);
    }
}

/// Assigns every sample a uniformly random label different from its current
/// one. Inputs are untouched; each call is a fresh draw from `seed`.
pub fn relabel_random_wrong(data: &LabeledDataset, seed: u64) -> Result<LabeledDataset> {
    if data.class_count < 2 {
        return Err(Error::InvalidArgument(
            "relabeling needs at least 2 classes".into(),
        ));
    }
    let mut rng = rng::seeded(seed);
    let c = data.class_count;
    let labels = data
        .labels
        .iter()
        .map(|&y| {
            let r = rng.gen_range(0..c - 1);
            if r >= y {
                r + 1
            } else {
                r
            }
        })
        .collect();
    data.with_labels(labels)
}
