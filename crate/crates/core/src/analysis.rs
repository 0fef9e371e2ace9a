//! Evaluation metrics (ACC, ASR, Fidelity) and representation similarity
//! (linear centered kernel alignment).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{evaluate_accuracy, Layer, Network};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc_b: f64,
    pub asr_b: f64,
    pub acc_s: f64,
    pub asr_s: f64,
    pub fid: f64,
}

impl MetricsReport {
    pub fn new(acc_b: f64, asr_b: f64, acc_s: f64, asr_s: f64) -> Result<Self> {
        Ok(MetricsReport {
            acc_b,
            asr_b,
            acc_s,
            asr_s,
            fid: fid(acc_b, acc_s, asr_s)?,
        })
    }
}

/// Normalized gap between post-unlearning accuracy and attack success:
/// `(acc_s - asr_s) / acc_b`.
pub fn fid(acc_b: f64, acc_s: f64, asr_s: f64) -> Result<f64> {
    if !(acc_b > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "fidelity needs a positive pre-unlearning accuracy, got {acc_b}"
        )));
    }
    Ok((acc_s - asr_s) / acc_b)
}

/// Attack success rate: the fraction of a trigger-carrying set classified as
/// its target class. The set must carry a single (target) label, as built by
/// `backdoor::build_asr_set`.
pub fn asr(net: &Network, asr_set: &LabeledDataset) -> Result<f64> {
    if asr_set.is_empty() {
        return Err(Error::EmptyDataset("ASR set is empty".into()));
    }
    let target = asr_set.label(0);
    if asr_set.labels().iter().any(|&y| y != target) {
        return Err(Error::InvalidArgument(
            "ASR set must be uniformly labeled with the target class".into(),
        ));
    }
    evaluate_accuracy(net, asr_set)
}

/// Linear CKA between two activation matrices sharing rows:
/// `||B^T A||_F^2 / (||A^T A||_F ||B^T B||_F)` after centering columns.
/// Returns 0 when either normalizer vanishes.
pub fn linear_cka(acts_a: &DMatrix<f64>, acts_b: &DMatrix<f64>) -> Result<f64> {
    let n = acts_a.nrows();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "CKA needs at least 2 rows, got {n}"
        )));
    }
    if acts_b.nrows() != n {
        return Err(Error::ShapeMismatch(format!(
            "activation row counts differ: {} vs {}",
            n,
            acts_b.nrows()
        )));
    }
    let a = center_columns(acts_a);
    let b = center_columns(acts_b);
    let cross = b.transpose() * &a;
    let num: f64 = cross.iter().map(|v| v * v).sum();
    let gram_a = a.transpose() * &a;
    let gram_b = b.transpose() * &b;
    let den_a: f64 = gram_a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let den_b: f64 = gram_b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if den_a == 0.0 || den_b == 0.0 {
        return Ok(0.0);
    }
    Ok(num / (den_a * den_b))
}

fn center_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    let n = m.nrows() as f64;
    for j in 0..m.ncols() {
        let mean = m.column(j).sum() / n;
        for i in 0..m.nrows() {
            out[(i, j)] -= mean;
        }
    }
    out
}

/// Per-layer CKA values, ordered input to output, plus a short label per
/// layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CkaReport {
    pub layers: Vec<String>,
    pub values: Vec<f64>,
}

/// Collects activations from both networks on the probe set at every
/// parameterized layer (after its ReLU when one follows; the final dense
/// layer contributes its pre-softmax logits) and reports linear CKA per layer.
pub fn layerwise_cka(
    net_a: &Network,
    net_b: &Network,
    probe: &LabeledDataset,
) -> Result<CkaReport> {
    if !net_a.same_arch(net_b) {
        return Err(Error::InvalidArgument(
            "layerwise CKA needs architecturally identical networks".into(),
        ));
    }
    if probe.len() < 2 {
        return Err(Error::EmptyDataset(
            "layerwise CKA needs a probe set of at least 2 samples".into(),
        ));
    }
    if probe.input_dim() != net_a.input_len() {
        return Err(Error::ShapeMismatch(format!(
            "probe dimension {} does not match network input {}",
            probe.input_dim(),
            net_a.input_len()
        )));
    }
    // Boundary index (activation after that many layers) per reported layer.
    let layers = net_a.layers();
    let mut picks: Vec<(usize, String)> = Vec::new();
    for (li, layer) in layers.iter().enumerate() {
        let label = match layer {
            Layer::Dense { in_dim, out_dim, .. } => format!("dense({in_dim}->{out_dim})"),
            Layer::Conv2d { out_ch, kh, kw, .. } => format!("conv2d({out_ch}@{kh}x{kw})"),
            _ => continue,
        };
        let boundary = if matches!(layers.get(li + 1), Some(Layer::Relu)) {
            li + 2
        } else {
            li + 1
        };
        picks.push((boundary, label));
    }
    let n = probe.len();
    let mut mats: Vec<DMatrix<f64>> = picks
        .iter()
        .map(|(b, _)| DMatrix::zeros(n, net_a.boundary_shapes()[*b].len() * 2))
        .collect();
    // Columns 0..p hold net_a activations, p..2p hold net_b's; split later.
    for i in 0..n {
        let acts_a = net_a.forward_cached(probe.input(i));
        let acts_b = net_b.forward_cached(probe.input(i));
        for (slot, (b, _)) in picks.iter().enumerate() {
            let p = acts_a[*b].len();
            for j in 0..p {
                mats[slot][(i, j)] = acts_a[*b][j];
                mats[slot][(i, p + j)] = acts_b[*b][j];
            }
        }
    }
    let mut values = Vec::with_capacity(picks.len());
    for (slot, _) in picks.iter().enumerate() {
        let p = mats[slot].ncols() / 2;
        let a = mats[slot].columns(0, p).into_owned();
        let b = mats[slot].columns(p, p).into_owned();
        values.push(linear_cka(&a, &b)?);
    }
    Ok(CkaReport {
        layers: picks.into_iter().map(|(_, l)| l).collect(),
        values,
    })
}

/// Spearman rank correlation with average ranks on ties; 0 when either
/// sequence is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::ShapeMismatch(format!(
            "sequences differ in length: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::InvalidArgument(
            "rank correlation needs at least 2 points".into(),
        ));
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = xs.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut num = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..xs.len() {
        let dx = rx[i] - mean;
        let dy = ry[i] - mean;
        num += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    if vx == 0.0 || vy == 0.0 {
        return Ok(0.0);
    }
    Ok(num / (vx.sqrt() * vy.sqrt()))
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("non-NaN metric values"));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}
