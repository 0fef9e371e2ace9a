//! The two-phase unlearning pipeline: forgetting on randomly-wrong-labeled
//! clean data, then recovery on correctly labeled clean data, both with early
//! stopping.
//!
//! The forgetting loop regenerates random wrong labels every epoch and stops
//! once accuracy on the forgetting set — measured against its TRUE labels —
//! falls below `min(2/C, 0.6)` (the relabeled set changes every epoch, so
//! only true-label accuracy is a stable stopping signal). Recovery stops once
//! accuracy on the recovery set exceeds `0.97` of the input model's baseline
//! accuracy.

use serde::{Deserialize, Serialize};

use crate::data::{relabel_random_wrong, LabeledDataset};
use crate::error::{Error, Result};
use crate::nn::{evaluate_accuracy, sgd_train, Network, TrainConfig};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeamConfig {
    pub max_forget_epochs: usize,
    /// Forgetting stop threshold; `None` uses `min(2/C, 0.6)`.
    pub forget_acc_threshold: Option<f64>,
    pub max_recover_epochs: usize,
    /// Recovery stops above `recover_acc_factor * baseline_acc`.
    pub recover_acc_factor: f64,
    pub forget_train: TrainConfig,
    pub recover_train: TrainConfig,
    /// Seed for the per-epoch random relabeling stream.
    pub seed: u64,
}

impl SeamConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.forget_acc_threshold {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "forget_acc_threshold must be in (0, 1], got {t}"
                )));
            }
        }
        if !(self.recover_acc_factor > 0.0 && self.recover_acc_factor <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "recover_acc_factor must be in (0, 1], got {}",
                self.recover_acc_factor
            )));
        }
        self.forget_train.validate()?;
        self.recover_train.validate()
    }

    pub fn forget_threshold(&self, class_count: usize) -> f64 {
        self.forget_acc_threshold
            .unwrap_or_else(|| (2.0 / class_count as f64).min(0.6))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseReport {
    pub epochs_used: usize,
    /// Per-epoch accuracy after training that epoch: on the forgetting set
    /// under its true labels, or on the recovery set.
    pub acc_history: Vec<f64>,
    pub stop_threshold: f64,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeamReport {
    pub baseline_acc: f64,
    pub forget: PhaseReport,
    pub recover: PhaseReport,
}

/// Forgetting step: each epoch relabels the forgetting set with random wrong
/// labels, trains one epoch on the relabeled copy, then evaluates accuracy on
/// the true labels; stops early once that accuracy drops below the threshold.
pub fn forget(
    net: &Network,
    d_for: &LabeledDataset,
    cfg: &SeamConfig,
) -> Result<(Network, PhaseReport)> {
    cfg.validate()?;
    if d_for.is_empty() {
        return Err(Error::EmptyDataset("forgetting set is empty".into()));
    }
    if d_for.class_count() < 2 {
        return Err(Error::InvalidArgument(
            "forgetting needs at least 2 classes".into(),
        ));
    }
    let threshold = cfg.forget_threshold(net.class_count());
    let mut current = net.clone();
    let mut history = Vec::new();
    let mut stopped_early = false;
    for epoch in 0..cfg.max_forget_epochs {
        let relabeled = relabel_random_wrong(d_for, derive_seed(cfg.seed, epoch as u64))?;
        let epoch_cfg = TrainConfig {
            max_epochs: 1,
            seed: derive_seed(cfg.forget_train.seed, epoch as u64),
            ..cfg.forget_train.clone()
        };
        current = sgd_train(&current, &relabeled, &epoch_cfg)?.0;
        let acc = evaluate_accuracy(&current, d_for)?;
        history.push(acc);
        if acc < threshold {
            stopped_early = true;
            break;
        }
    }
    let report = PhaseReport {
        epochs_used: history.len(),
        acc_history: history,
        stop_threshold: threshold,
        stopped_early,
    };
    Ok((current, report))
}

/// Recovery step: retrains on the correctly labeled recovery set until its
/// accuracy exceeds `recover_acc_factor * baseline_acc` or the epoch budget
/// runs out.
pub fn recover(
    net: &Network,
    d_rec: &LabeledDataset,
    baseline_acc: f64,
    cfg: &SeamConfig,
) -> Result<(Network, PhaseReport)> {
    cfg.validate()?;
    if d_rec.is_empty() {
        return Err(Error::EmptyDataset("recovery set is empty".into()));
    }
    let threshold = cfg.recover_acc_factor * baseline_acc;
    let mut current = net.clone();
    let mut history = Vec::new();
    let mut stopped_early = false;
    for epoch in 0..cfg.max_recover_epochs {
        let epoch_cfg = TrainConfig {
            max_epochs: 1,
            seed: derive_seed(cfg.recover_train.seed, epoch as u64),
            ..cfg.recover_train.clone()
        };
        current = sgd_train(&current, d_rec, &epoch_cfg)?.0;
        let acc = evaluate_accuracy(&current, d_rec)?;
        history.push(acc);
        if acc > threshold {
            stopped_early = true;
            break;
        }
    }
    let report = PhaseReport {
        epochs_used: history.len(),
        acc_history: history,
        stop_threshold: threshold,
        stopped_early,
    };
    Ok((current, report))
}

/// Full pipeline: measures baseline accuracy on `eval_data`, forgets on
/// `d_for`, recovers on `d_rec`. Returns the recovered model, the post-forget
/// model and the combined report. Rejects forgetting/recovery sets that share
/// source samples.
pub fn run_seam(
    net: &Network,
    d_for: &LabeledDataset,
    d_rec: &LabeledDataset,
    eval_data: &LabeledDataset,
    cfg: &SeamConfig,
) -> Result<(Network, Network, SeamReport)> {
    if let (Some(a), Some(b)) = (d_for.source_indices(), d_rec.source_indices()) {
        let set: std::collections::HashSet<usize> = a.iter().copied().collect();
        let shared = b.iter().filter(|i| set.contains(i)).count();
        if shared > 0 {
            return Err(Error::InvalidArgument(format!(
                "forgetting and recovery sets share {shared} source samples"
            )));
        }
    }
    let baseline_acc = evaluate_accuracy(net, eval_data)?;
    let (f_bar, forget_report) = forget(net, d_for, cfg)?;
    let (f_tilde, recover_report) = recover(&f_bar, d_rec, baseline_acc, cfg)?;
    let report = SeamReport {
        baseline_acc,
        forget: forget_report,
        recover: recover_report,
    };
    Ok((f_tilde, f_bar, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{stratified_sample, synth_blobs, SplitSpec};

    fn quick_train(seed: u64) -> (Network, LabeledDataset) {
        let data = synth_blobs(10, 60, 16, 5.0, seed).unwrap();
        let net = Network::mlp(16, &[32], 10, seed).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.5,
            batch_size: 30,
            max_epochs: 40,
            seed,
            shuffle: true,
        };
        let (trained, _) = sgd_train(&net, &data, &cfg).unwrap();
        (trained, data)
    }

    fn seam_cfg(seed: u64) -> SeamConfig {
        let train = TrainConfig {
            learning_rate: 0.3,
            batch_size: 16,
            max_epochs: 1,
            seed,
            shuffle: true,
        };
        SeamConfig {
            max_forget_epochs: 40,
            forget_acc_threshold: None,
            max_recover_epochs: 100,
            recover_acc_factor: 0.97,
            forget_train: train.clone(),
            recover_train: train,
            seed,
        }
    }

    #[test]
    fn default_threshold_is_two_over_c_capped() {
        let cfg = seam_cfg(0);
        assert_eq!(cfg.forget_threshold(10), 0.2);
        assert_eq!(cfg.forget_threshold(2), 0.6);
        assert_eq!(cfg.forget_threshold(3), 0.6);
        assert!((cfg.forget_threshold(4) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn recovery_threshold_arithmetic() {
        // 0.97 of a 0.9916 baseline.
        let threshold: f64 = 0.97 * 0.9916;
        assert!((threshold - 0.961852).abs() < 1e-10);
        assert!((threshold - 0.96185).abs() < 1e-5);
    }

    #[test]
    fn zero_epochs_return_inputs_unchanged() {
        let (net, data) = quick_train(3);
        let mut cfg = seam_cfg(3);
        cfg.max_forget_epochs = 0;
        cfg.max_recover_epochs = 0;
        let (f_bar, rep) = forget(&net, &data, &cfg).unwrap();
        assert_eq!(rep.epochs_used, 0);
        assert_eq!(f_bar.flatten_weights(), net.flatten_weights());
        let (f_tilde, rep) = recover(&net, &data, 0.9, &cfg).unwrap();
        assert_eq!(rep.epochs_used, 0);
        assert_eq!(f_tilde.flatten_weights(), net.flatten_weights());
    }

    #[test]
    fn forgetting_stops_early_below_threshold() {
        let (net, data) = quick_train(7);
        let cfg = seam_cfg(7);
        let (_, report) = forget(&net, &data, &cfg).unwrap();
        assert!(report.stopped_early, "history {:?}", report.acc_history);
        let last = *report.acc_history.last().unwrap();
        assert!(last < report.stop_threshold);
        // Early-stop soundness: every earlier epoch stayed at or above it.
        for &acc in &report.acc_history[..report.acc_history.len() - 1] {
            assert!(acc >= report.stop_threshold);
        }
    }

    #[test]
    fn forgetting_accuracy_trends_down() {
        let (net, data) = quick_train(11);
        let cfg = seam_cfg(11);
        let (_, report) = forget(&net, &data, &cfg).unwrap();
        let h = &report.acc_history;
        for w in h.windows(2) {
            assert!(w[1] <= w[0] + 0.05, "accuracy rebounded: {h:?}");
        }
    }

    #[test]
    fn recovery_stops_above_threshold() {
        let (net, data) = quick_train(5);
        let cfg = seam_cfg(5);
        let (f_bar, _) = forget(&net, &data, &cfg).unwrap();
        let (_, report) = recover(&f_bar, &data, 0.95, &cfg).unwrap();
        assert!(report.stopped_early, "history {:?}", report.acc_history);
        assert!(*report.acc_history.last().unwrap() > report.stop_threshold);
    }

    #[test]
    fn overlapping_splits_are_rejected() {
        let (net, data) = quick_train(9);
        let spec = SplitSpec { fraction: 0.2, seed: 1, stratified: true };
        let (subset, _) = stratified_sample(&data, &spec).unwrap();
        let err = run_seam(&net, &subset, &subset, &data, &seam_cfg(9)).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)), "{err}");
    }

    #[test]
    fn disjoint_splits_run_end_to_end() {
        let (net, data) = quick_train(13);
        let spec = SplitSpec { fraction: 0.05, seed: 2, stratified: true };
        let (d_for, rest) = stratified_sample(&data, &spec).unwrap();
        let spec = SplitSpec { fraction: 0.5, seed: 3, stratified: true };
        let (d_rec, _) = stratified_sample(&rest, &spec).unwrap();
        let (f_tilde, f_bar, report) = run_seam(&net, &d_for, &d_rec, &data, &seam_cfg(13)).unwrap();
        assert!(report.forget.epochs_used <= 40);
        assert!(report.recover.epochs_used <= 100);
        assert!(!f_bar.flatten_weights().is_empty());
        let acc = evaluate_accuracy(&f_tilde, &data).unwrap();
        assert!(acc > 0.8, "recovered accuracy {acc}");
    }
}
