//! Tangent-kernel analytics: feature matrices, residuals, empirical and
//! kernel-predicted catastrophic forgetting, SVD task similarity, and
//! eigenvalue bound checks.
//!
//! The feature map of an input is the gradient of one pre-softmax logit with
//! respect to all weights, taken at an anchor weight state. Forgetting between
//! two models is measured either directly (summed squared confidence change at
//! the source model's argmax class) or through the kernel closed form
//!
//! ```text
//! || phi(X) phi(X_F)^T [phi(X_F) phi(X_F)^T + lambda I]^-1 y~ ||^2
//! ```
//!
//! whose SVD rewrite exposes the right-singular subspace overlap used as the
//! task-similarity statistic. All linear algebra runs in f64; kernel systems
//! are solved, never explicitly inverted.

mod oracle;

pub use oracle::{linearized_oracle, LinearOracleReport};

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{argmax, Network};

const FEATURE_MAGIC: &[u8; 4] = b"NTKF";

/// Which logit the per-example gradient is taken of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassRule {
    /// One fixed logit for every sample.
    Fixed(usize),
    /// Per sample, the anchor model's own argmax class.
    AnchorArgmax,
}

/// Row-major `n x q` matrix of per-example tangent features at a recorded
/// anchor state.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    pub anchor_id: String,
    pub class_rule: ClassRule,
}

impl FeatureMatrix {
    pub fn from_rows(
        data: Vec<f64>,
        rows: usize,
        cols: usize,
        anchor_id: impl Into<String>,
        class_rule: ClassRule,
    ) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values do not form a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "feature matrix contains non-finite entries".into(),
            ));
        }
        Ok(FeatureMatrix {
            rows,
            cols,
            data,
            anchor_id: anchor_id.into(),
            class_rule,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    /// The `n x n` kernel `phi phi^T`.
    pub fn kernel(&self) -> DMatrix<f64> {
        let m = self.as_dmatrix();
        &m * m.transpose()
    }
}

/// Tangent feature rows for every sample of a dataset, anchored at the given
/// network's current weights.
pub fn feature_matrix(
    anchor: &Network,
    data: &LabeledDataset,
    class_rule: ClassRule,
) -> Result<FeatureMatrix> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("feature matrix needs at least one row".into()));
    }
    if data.input_dim() != anchor.input_len() {
        return Err(Error::ShapeMismatch(format!(
            "dataset dimension {} does not match network input {}",
            data.input_dim(),
            anchor.input_len()
        )));
    }
    let q = anchor.param_count();
    let mut rows = Vec::with_capacity(data.len() * q);
    for i in 0..data.len() {
        let x = data.input(i);
        let k = match class_rule {
            ClassRule::Fixed(k) => k,
            ClassRule::AnchorArgmax => argmax(&anchor.forward_one(x)?),
        };
        rows.extend_from_slice(&anchor.per_example_gradient(x, k)?);
    }
    FeatureMatrix::from_rows(rows, data.len(), q, anchor.fingerprint(), class_rule)
}

// ---------------------------------------------------------------------------
// Residuals
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualRule {
    /// Plain scalar difference `y - f(x)` (one output column).
    ScalarBinary,
    /// `y^(k) - f^(k)(x)` at `k` = the source model's argmax class.
    MulticlassOminus,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Residual {
    pub values: Vec<f64>,
    pub rule: ResidualRule,
}

impl Residual {
    pub fn norm2(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

/// Per-sample residual between assigned labels (one-hot rows) and the source
/// model's predictions.
pub fn residual(
    labels_onehot: &[f64],
    source_predictions: &[f64],
    class_count: usize,
    rule: ResidualRule,
) -> Result<Residual> {
    if class_count == 0 {
        return Err(Error::InvalidArgument("class_count must be positive".into()));
    }
    if labels_onehot.len() != source_predictions.len()
        || labels_onehot.len() % class_count != 0
    {
        return Err(Error::ShapeMismatch(format!(
            "labels ({}) and predictions ({}) must both be n x {class_count}",
            labels_onehot.len(),
            source_predictions.len()
        )));
    }
    if rule == ResidualRule::ScalarBinary && class_count != 1 {
        return Err(Error::InvalidArgument(
            "scalar-binary residual expects one output column".into(),
        ));
    }
    let n = labels_onehot.len() / class_count;
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let y = &labels_onehot[i * class_count..(i + 1) * class_count];
        let f = &source_predictions[i * class_count..(i + 1) * class_count];
        let v = match rule {
            ResidualRule::ScalarBinary => y[0] - f[0],
            ResidualRule::MulticlassOminus => {
                let k = argmax(f);
                y[k] - f[k]
            }
        };
        values.push(v);
    }
    Ok(Residual { values, rule })
}

pub fn onehot_labels(labels: &[usize], class_count: usize) -> Vec<f64> {
    let mut out = vec![0.0; labels.len() * class_count];
    for (i, &y) in labels.iter().enumerate() {
        out[i * class_count + y] = 1.0;
    }
    out
}

/// Residual of a labeled dataset against a source model under the
/// multiclass rule.
pub fn residual_from_model(source: &Network, data: &LabeledDataset) -> Result<Residual> {
    let preds = source.forward(data.inputs_flat())?;
    residual(
        &onehot_labels(data.labels(), source.class_count()),
        &preds,
        source.class_count(),
        ResidualRule::MulticlassOminus,
    )
}

// ---------------------------------------------------------------------------
// Catastrophic forgetting
// ---------------------------------------------------------------------------

/// Measured forgetting between two models on a dataset: the summed squared
/// change of confidence at the source model's argmax class (or the scalar
/// class-1 confidence for the binary rule).
pub fn cf_empirical(
    f_source: &Network,
    f_target: &Network,
    data: &LabeledDataset,
    rule: ResidualRule,
) -> Result<f64> {
    if f_source.class_count() != f_target.class_count() {
        return Err(Error::ShapeMismatch(format!(
            "models disagree on class count: {} vs {}",
            f_source.class_count(),
            f_target.class_count()
        )));
    }
    if rule == ResidualRule::ScalarBinary && f_source.class_count() != 2 {
        return Err(Error::InvalidArgument(
            "scalar-binary forgetting expects 2-class models".into(),
        ));
    }
    let mut total = 0.0;
    for i in 0..data.len() {
        let ps = f_source.forward_one(data.input(i))?;
        let pt = f_target.forward_one(data.input(i))?;
        let d = match rule {
            ResidualRule::ScalarBinary => pt[1] - ps[1],
            ResidualRule::MulticlassOminus => {
                let k = argmax(&ps);
                pt[k] - ps[k]
            }
        };
        total += d * d;
    }
    Ok(total)
}

/// Default ridge term: `1e-3` times the mean kernel diagonal.
pub fn default_lambda(phi: &FeatureMatrix) -> f64 {
    let mean_diag = (0..phi.rows())
        .map(|i| phi.row(i).iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        / phi.rows() as f64;
    1e-3 * mean_diag
}

fn ridge_solve(phi_f: &FeatureMatrix, resid: &Residual, lambda: f64) -> Result<DVector<f64>> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "lambda must be finite and >= 0, got {lambda}"
        )));
    }
    if resid.values.len() != phi_f.rows() {
        return Err(Error::ShapeMismatch(format!(
            "residual has {} entries, feature matrix {} rows",
            resid.values.len(),
            phi_f.rows()
        )));
    }
    let mut a = phi_f.kernel();
    let n = phi_f.rows();
    for i in 0..n {
        a[(i, i)] += lambda;
    }
    let mean_diag = (0..n).map(|i| a[(i, i)]).sum::<f64>() / n as f64;
    let y = DVector::from_column_slice(&resid.values);
    match nalgebra::Cholesky::new(a) {
        Some(chol) => Ok(chol.solve(&y)),
        None => Err(Error::SingularKernel(format!(
            "kernel + {lambda} I is not positive definite (mean diagonal {mean_diag:.3e}); \
             pass a positive lambda to regularize"
        ))),
    }
}

/// Kernel-predicted forgetting:
/// `|| phi(X) phi(X_F)^T [phi(X_F) phi(X_F)^T + lambda I]^-1 y~ ||^2`.
pub fn cf_ntk_predicted(
    phi_x: &FeatureMatrix,
    phi_f: &FeatureMatrix,
    resid: &Residual,
    lambda: f64,
) -> Result<f64> {
    if phi_x.cols() != phi_f.cols() {
        return Err(Error::ShapeMismatch(format!(
            "feature matrices disagree on parameter count: {} vs {}",
            phi_x.cols(),
            phi_f.cols()
        )));
    }
    let z = ridge_solve(phi_f, resid, lambda)?;
    // u = phi_f^T z, then || phi_x u ||^2, streamed row by row.
    let mut u = vec![0.0; phi_f.cols()];
    for i in 0..phi_f.rows() {
        let zi = z[i];
        for (uj, &fj) in u.iter_mut().zip(phi_f.row(i)) {
            *uj += zi * fj;
        }
    }
    let mut total = 0.0;
    for i in 0..phi_x.rows() {
        let dot: f64 = phi_x.row(i).iter().zip(&u).map(|(a, b)| a * b).sum();
        total += dot * dot;
    }
    Ok(total)
}

/// Closed-form ridge weight update `phi^T [phi phi^T + lambda I]^-1 y~`
/// (length `q`). `|| phi(X) update ||^2` reproduces [`cf_ntk_predicted`].
pub fn ntk_weight_update(
    phi_t: &FeatureMatrix,
    resid: &Residual,
    lambda: f64,
) -> Result<Vec<f64>> {
    let z = ridge_solve(phi_t, resid, lambda)?;
    let mut update = vec![0.0; phi_t.cols()];
    for i in 0..phi_t.rows() {
        let zi = z[i];
        for (uj, &fj) in update.iter_mut().zip(phi_t.row(i)) {
            *uj += zi * fj;
        }
    }
    Ok(update)
}

// ---------------------------------------------------------------------------
// SVD task similarity
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SvdFactors {
    /// Left singular vectors, `n x r`.
    pub u: DMatrix<f64>,
    /// Retained singular values, descending.
    pub sigma: Vec<f64>,
    /// Right singular vectors, `q x r`.
    pub v: DMatrix<f64>,
}

/// Similarity between the right-singular subspaces of two feature matrices.
///
/// `overlap_norm2` is the Frobenius norm squared of `O = V_S^T V_T`;
/// `projector_norm2` is `|| V_S V_S^T V_T V_T^T ||_F^2`, which equals
/// `overlap_norm2` by the trace identity and is invariant to the sign and
/// order ambiguity of individual singular vectors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub rank_source: usize,
    pub rank_target: usize,
    pub sigma_source: Vec<f64>,
    pub sigma_target: Vec<f64>,
    pub overlap: Vec<Vec<f64>>,
    pub overlap_norm2: f64,
    pub projector_norm2: f64,
    #[serde(skip)]
    pub factors_source: Option<SvdFactors>,
    #[serde(skip)]
    pub factors_target: Option<SvdFactors>,
}

fn truncated_svd(phi: &FeatureMatrix, tol: f64) -> Result<SvdFactors> {
    let svd = phi.as_dmatrix().svd(true, true);
    let u = svd.u.expect("requested");
    let v_t = svd.v_t.expect("requested");
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if sigma_max <= 0.0 {
        return Err(Error::InvalidArgument(
            "cannot take the SVD similarity of a zero matrix".into(),
        ));
    }
    let cutoff = tol * sigma_max;
    let r = svd
        .singular_values
        .iter()
        .filter(|&&s| s >= cutoff)
        .count()
        .max(1);
    let sigma: Vec<f64> = svd.singular_values.iter().take(r).cloned().collect();
    Ok(SvdFactors {
        u: u.columns(0, r).into_owned(),
        sigma,
        v: v_t.rows(0, r).transpose(),
    })
}

/// Truncated SVDs of both matrices plus the right-subspace overlap statistics.
pub fn svd_similarity(
    phi_s: &FeatureMatrix,
    phi_t: &FeatureMatrix,
    tol: f64,
) -> Result<SimilarityReport> {
    if phi_s.cols() != phi_t.cols() {
        return Err(Error::ShapeMismatch(format!(
            "feature matrices disagree on parameter count: {} vs {}",
            phi_s.cols(),
            phi_t.cols()
        )));
    }
    if !(tol >= 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be >= 0, got {tol}")));
    }
    let fs = truncated_svd(phi_s, tol)?;
    let ft = truncated_svd(phi_t, tol)?;
    let o = fs.v.transpose() * &ft.v;
    let overlap_norm2: f64 = o.iter().map(|v| v * v).sum();
    let overlap: Vec<Vec<f64>> = (0..o.nrows())
        .map(|i| o.row(i).iter().cloned().collect())
        .collect();
    Ok(SimilarityReport {
        rank_source: fs.sigma.len(),
        rank_target: ft.sigma.len(),
        sigma_source: fs.sigma.clone(),
        sigma_target: ft.sigma.clone(),
        overlap,
        overlap_norm2,
        projector_norm2: overlap_norm2,
        factors_source: Some(fs),
        factors_target: Some(ft),
    })
}

/// Assembles the forgetting value from SVD factors:
/// `|| U_S S_S (V_S^T V_T) S_T [S_T^2 + lambda I]^-1 U_T^T y~ ||^2`.
///
/// With untruncated factors this is algebraically identical to
/// [`cf_ntk_predicted`].
pub fn cf_from_svd_factors(
    source: &SvdFactors,
    target: &SvdFactors,
    resid: &Residual,
    lambda: f64,
) -> Result<f64> {
    if source.v.nrows() != target.v.nrows() {
        return Err(Error::ShapeMismatch(
            "SVD factors disagree on parameter count".into(),
        ));
    }
    if resid.values.len() != target.u.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "residual has {} entries, target U has {} rows",
            resid.values.len(),
            target.u.nrows()
        )));
    }
    let y = DVector::from_column_slice(&resid.values);
    let mut a = target.u.transpose() * y; // r_t
    for (ai, &s) in a.iter_mut().zip(&target.sigma) {
        *ai *= s / (s * s + lambda);
    }
    let o = source.v.transpose() * &target.v; // r_s x r_t
    let mut c = o * a; // r_s
    for (ci, &s) in c.iter_mut().zip(&source.sigma) {
        *ci *= s;
    }
    let w = &source.u * c; // n_s
    Ok(w.norm_squared())
}

// ---------------------------------------------------------------------------
// Eigenvalue bound check
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenBoundCheck {
    pub lower: f64,
    pub value: f64,
    pub upper: f64,
    pub holds: bool,
}

/// For symmetric non-singular `M`, checks
/// `min(eig^2) ||v||^2 <= ||M v||^2 <= max(eig^2) ||v||^2`.
pub fn eigen_bound_check(m: &DMatrix<f64>, v: &[f64]) -> Result<EigenBoundCheck> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::ShapeMismatch(format!(
            "matrix is {}x{}, expected square",
            n,
            m.ncols()
        )));
    }
    if v.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "vector has {} entries for a {n}x{n} matrix",
            v.len()
        )));
    }
    let mut asym: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            asym = asym.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    if asym > 1e-10 {
        return Err(Error::InvalidArgument(format!(
            "matrix is not symmetric (max asymmetry {asym:.3e})"
        )));
    }
    let eigen = nalgebra::SymmetricEigen::new(m.clone());
    let abs_eigs: Vec<f64> = eigen.eigenvalues.iter().map(|e| e.abs()).collect();
    let max_abs = abs_eigs.iter().cloned().fold(0.0, f64::max);
    let min_abs = abs_eigs.iter().cloned().fold(f64::INFINITY, f64::min);
    if max_abs == 0.0 || min_abs <= 1e-12 * max_abs {
        return Err(Error::SingularKernel(format!(
            "matrix is singular within tolerance (|eig| range {min_abs:.3e}..{max_abs:.3e})"
        )));
    }
    let vv = DVector::from_column_slice(v);
    let value = (m * &vv).norm_squared();
    let norm2 = vv.norm_squared();
    let lower = min_abs * min_abs * norm2;
    let upper = max_abs * max_abs * norm2;
    let slack = 1e-9 * upper.max(1.0);
    Ok(EigenBoundCheck {
        lower,
        value,
        upper,
        holds: lower - slack <= value && value <= upper + slack,
    })
}

// ---------------------------------------------------------------------------
// Binary export
// ---------------------------------------------------------------------------

/// Writes the raw matrix as little-endian f64, row-major, behind a 16-byte
/// header: magic `NTKF`, `n` (u32 LE), `q` (u32 LE), reserved zero u32.
pub fn save_feature_matrix<P: AsRef<Path>>(phi: &FeatureMatrix, path: P) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    file.write_all(FEATURE_MAGIC)?;
    file.write_all(&(phi.rows() as u32).to_le_bytes())?;
    file.write_all(&(phi.cols() as u32).to_le_bytes())?;
    file.write_all(&0u32.to_le_bytes())?;
    for v in &phi.data {
        file.write_all(&v.to_le_bytes())?;
    }
    file.flush()?;
    Ok(())
}

/// Reads a matrix written by [`save_feature_matrix`]; returns
/// `(values, rows, cols)`. Anchor/rule metadata travels in JSON reports, not
/// in this file.
pub fn load_feature_matrix<P: AsRef<Path>>(path: P) -> Result<(Vec<f64>, usize, usize)> {
    let mut file = BufReader::new(File::open(&path)?);
    let mut header = [0u8; 16];
    file.read_exact(&mut header).map_err(|_| {
        Error::Format(format!(
            "{}: file shorter than the 16-byte header",
            path.as_ref().display()
        ))
    })?;
    if &header[0..4] != FEATURE_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic {:?} (expected \"NTKF\")",
            path.as_ref().display(),
            &header[0..4]
        )));
    }
    let rows = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    if bytes.len() != rows * cols * 8 {
        return Err(Error::Format(format!(
            "{}: expected {} payload bytes for {rows}x{cols}, found {}",
            path.as_ref().display(),
            rows * cols * 8,
            bytes.len()
        )));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((data, rows, cols))
}
