//! Desk-scale end-to-end runs of the forget/recover pipeline against a
//! patch-backdoored classifier on synthetic 8x8 image blobs.

use seamforge_core::analysis::{asr, layerwise_cka, MetricsReport};
use seamforge_core::backdoor::{build_asr_set, poison_dataset, PoisonConfig, TriggerSpec};
use seamforge_core::data::{stratified_sample, synth_blobs, LabeledDataset, SplitSpec};
use seamforge_core::nn::{evaluate_accuracy, sgd_train, Network, TrainConfig};
use seamforge_core::seam::{forget, run_seam, SeamConfig};

const CLASSES: usize = 10;
const DIM: usize = 64;
const SEPARATION: f64 = 4.0;
const TRAIN_PER_CLASS: usize = 500;
const POOL_PER_CLASS: usize = 150;
const EVAL_PER_CLASS: usize = 100;

struct Desk {
    train: LabeledDataset,
    eval: LabeledDataset,
    pool: LabeledDataset,
    trigger: TriggerSpec,
    asr_set: LabeledDataset,
}

fn desk_data(seed: u64) -> Desk {
    let train = synth_blobs(CLASSES, TRAIN_PER_CLASS, DIM, SEPARATION, seed).unwrap();
    let eval = synth_blobs(CLASSES, EVAL_PER_CLASS, DIM, SEPARATION, seed ^ 0xE0E0).unwrap();
    let pool = synth_blobs(CLASSES, POOL_PER_CLASS, DIM, SEPARATION, seed ^ 0x9090).unwrap();
    let trigger = TriggerSpec::default_patch(0);
    let asr_set = build_asr_set(&eval, &trigger).unwrap();
    Desk { train, eval, pool, trigger, asr_set }
}

fn train_backdoored(desk: &Desk, seed: u64) -> Network {
    let (poisoned, _) = poison_dataset(
        &desk.train,
        &desk.trigger,
        &PoisonConfig { rate: 0.1, seed },
    )
    .unwrap();
    let net = Network::mlp(DIM, &[64], CLASSES, seed).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.3,
        batch_size: 32,
        max_epochs: 30,
        seed,
        shuffle: true,
    };
    sgd_train(&net, &poisoned, &cfg).unwrap().0
}

fn desk_seam_cfg(seed: u64) -> SeamConfig {
    SeamConfig {
        max_forget_epochs: 50,
        forget_acc_threshold: None,
        max_recover_epochs: 100,
        recover_acc_factor: 0.97,
        forget_train: TrainConfig {
            learning_rate: 0.3,
            batch_size: 16,
            max_epochs: 1,
            seed,
            shuffle: true,
        },
        recover_train: TrainConfig {
            learning_rate: 0.3,
            batch_size: 32,
            max_epochs: 1,
            seed: seed ^ 1,
            shuffle: true,
        },
        seed,
    }
}

/// D_for sized as 0.1% of the training set (one per class after flooring),
/// D_rec as 10%, both from the clean pool, disjoint by construction.
fn sample_splits(desk: &Desk, seed: u64) -> (LabeledDataset, LabeledDataset) {
    let d_for_count = (0.001 * desk.train.len() as f64).round().max(1.0);
    let spec = SplitSpec {
        fraction: d_for_count / desk.pool.len() as f64,
        seed,
        stratified: true,
    };
    let (d_for, rest) = stratified_sample(&desk.pool, &spec).unwrap();
    let d_rec_count = 0.1 * desk.train.len() as f64;
    let spec = SplitSpec {
        fraction: d_rec_count / rest.len() as f64,
        seed: seed ^ 2,
        stratified: true,
    };
    let (d_rec, _) = stratified_sample(&rest, &spec).unwrap();
    (d_for, d_rec)
}

#[test]
fn backdoored_model_forgets_and_recovers() {
    let seed = 1u64;
    let desk = desk_data(seed);
    let net = train_backdoored(&desk, seed);

    let acc_b = evaluate_accuracy(&net, &desk.eval).unwrap();
    let asr_b = asr(&net, &desk.asr_set).unwrap();
    assert!(acc_b >= 0.95, "baseline accuracy {acc_b}");
    assert!(asr_b >= 0.95, "baseline attack success {asr_b}");

    let (d_for, d_rec) = sample_splits(&desk, seed);
    assert_eq!(d_for.len(), CLASSES); // 0.1% floored to one per class
    let cfg = desk_seam_cfg(seed);
    let (f_tilde, f_bar, report) = run_seam(&net, &d_for, &d_rec, &desk.eval, &cfg).unwrap();

    // After forgetting, both the primary and the backdoor task are gone.
    let acc_f = evaluate_accuracy(&f_bar, &desk.eval).unwrap();
    let asr_f = asr(&f_bar, &desk.asr_set).unwrap();
    assert!(acc_f < 0.2, "post-forget accuracy {acc_f}");
    assert!(asr_f < 0.2, "post-forget attack success {asr_f}");

    // Recovery restores the primary task only.
    let acc_s = evaluate_accuracy(&f_tilde, &desk.eval).unwrap();
    let asr_s = asr(&f_tilde, &desk.asr_set).unwrap();
    assert!(acc_s >= 0.95 * acc_b, "recovered accuracy {acc_s} vs baseline {acc_b}");
    assert!(asr_s <= 0.02, "recovered attack success {asr_s}");
    let metrics = MetricsReport::new(acc_b, asr_b, acc_s, asr_s).unwrap();
    assert!(metrics.fid >= 0.90, "fidelity {}", metrics.fid);
    assert!(report.forget.stopped_early);
    assert!(report.recover.epochs_used <= 100);
}

#[test]
fn clean_model_loses_little_accuracy() {
    let seed = 2u64;
    let desk = desk_data(seed);
    let net = Network::mlp(DIM, &[64], CLASSES, seed).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.3,
        batch_size: 32,
        max_epochs: 30,
        seed,
        shuffle: true,
    };
    let (clean, _) = sgd_train(&net, &desk.train, &cfg).unwrap();
    let acc_before = evaluate_accuracy(&clean, &desk.eval).unwrap();

    let (d_for, d_rec) = sample_splits(&desk, seed);
    let (f_tilde, _, _) =
        run_seam(&clean, &d_for, &d_rec, &desk.eval, &desk_seam_cfg(seed)).unwrap();
    let acc_after = evaluate_accuracy(&f_tilde, &desk.eval).unwrap();
    assert!(
        acc_before - acc_after <= 0.03,
        "clean model dropped {acc_before} -> {acc_after}"
    );
}

#[test]
fn forgetting_preserves_shallow_layers_more_than_deep() {
    let seed = 3u64;
    let desk = desk_data(seed);
    let net = train_backdoored(&desk, seed);
    let (d_for, _) = sample_splits(&desk, seed);
    let (f_bar, _) = forget(&net, &d_for, &desk_seam_cfg(seed)).unwrap();

    let probe_spec = SplitSpec {
        fraction: 256.0 / desk.eval.len() as f64,
        seed,
        stratified: true,
    };
    let (probe, _) = stratified_sample(&desk.eval, &probe_spec).unwrap();
    let report = layerwise_cka(&net, &f_bar, &probe).unwrap();
    assert_eq!(report.values.len(), 2);
    let first = report.values[0];
    let last = *report.values.last().unwrap();
    assert!(
        first - last >= 0.2,
        "CKA gap too small: first hidden {first}, last {last}"
    );
}
