//! Backdoor injection via data poisoning and trigger-carrying evaluation sets.
//!
//! Two trigger families are supported: a small pixel patch stamped at a fixed
//! anchor (bottom-right by default) and a whole-image blend against a fixed
//! overlay. Both operate on `[0, 1]` channel-major images.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::Shape;
use crate::rng;

/// 4x4 patch with 11 white (1) and 5 black (0) cells. The arrangement is
/// fixed so configs and checkpoints reproduce byte-identically.
pub const DEFAULT_PATCH_PATTERN: [[u8; 4]; 4] = [
    [1, 1, 1, 0],
    [1, 0, 1, 1],
    [1, 1, 0, 1],
    [0, 1, 1, 0],
];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Overlay {
    /// Deterministic diagonal gradient, value `(r/(h-1) + c/(w-1)) / 2`.
    DiagonalGradient,
    Image { pixels: Vec<f64>, shape: [usize; 3] },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TriggerKind {
    Patch {
        /// 0 -> black (0.0), 1 -> white (1.0), stamped across all channels.
        pattern: Vec<Vec<u8>>,
        /// `(row, col)` of the patch's top-left corner; bottom-right when absent.
        anchor: Option<(usize, usize)>,
    },
    Blend { overlay: Overlay, alpha: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TriggerSpec {
    #[serde(flatten)]
    pub kind: TriggerKind,
    /// Classes whose samples activate the backdoor; `None` means all classes.
    pub source_classes: Option<BTreeSet<usize>>,
    pub target_class: usize,
}

impl TriggerSpec {
    /// The default TrojanNet-style patch trigger against all source classes.
    pub fn default_patch(target_class: usize) -> Self {
        TriggerSpec {
            kind: TriggerKind::Patch {
                pattern: DEFAULT_PATCH_PATTERN.iter().map(|r| r.to_vec()).collect(),
                anchor: None,
            },
            source_classes: None,
            target_class,
        }
    }

    /// Blended whole-image trigger with the given mixing weight.
    pub fn default_blend(target_class: usize, alpha: f64) -> Self {
        TriggerSpec {
            kind: TriggerKind::Blend {
                overlay: Overlay::DiagonalGradient,
                alpha,
            },
            source_classes: None,
            target_class,
        }
    }

    pub fn validate(&self, shape: Shape, class_count: usize) -> Result<()> {
        if self.target_class >= class_count {
            return Err(Error::LabelOutOfRange {
                label: self.target_class,
                class_count,
            });
        }
        if let Some(sources) = &self.source_classes {
            if sources.is_empty() {
                return Err(Error::InvalidArgument(
                    "source_classes must be non-empty when present".into(),
                ));
            }
            for &s in sources {
                if s >= class_count {
                    return Err(Error::LabelOutOfRange { label: s, class_count });
                }
            }
            if sources.contains(&self.target_class) {
                return Err(Error::InvalidArgument(format!(
                    "target class {} must not be a source class",
                    self.target_class
                )));
            }
        }
        match &self.kind {
            TriggerKind::Patch { pattern, anchor } => {
                let (ph, pw) = pattern_dims(pattern)?;
                let (r, c) = anchor_or_default(*anchor, shape, ph, pw)?;
                if r + ph > shape.h || c + pw > shape.w {
                    return Err(Error::InvalidArgument(format!(
                        "{ph}x{pw} patch at ({r}, {c}) exceeds {}x{} image",
                        shape.h, shape.w
                    )));
                }
            }
            TriggerKind::Blend { overlay, alpha } => {
                if !(0.0..=1.0).contains(alpha) {
                    return Err(Error::InvalidArgument(format!(
                        "blend alpha must be in [0, 1], got {alpha}"
                    )));
                }
                if let Overlay::Image { pixels, shape: os } = overlay {
                    if [shape.h, shape.w, shape.c] != *os || pixels.len() != shape.len() {
                        return Err(Error::ShapeMismatch(format!(
                            "overlay shape {:?} does not match image {}x{}x{}",
                            os, shape.h, shape.w, shape.c
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn is_source(&self, label: usize) -> bool {
        match &self.source_classes {
            Some(set) => set.contains(&label),
            None => true,
        }
    }
}

fn pattern_dims(pattern: &[Vec<u8>]) -> Result<(usize, usize)> {
    let ph = pattern.len();
    if ph == 0 {
        return Err(Error::InvalidArgument("patch pattern is empty".into()));
    }
    let pw = pattern[0].len();
    if pw == 0 || pattern.iter().any(|row| row.len() != pw) {
        return Err(Error::InvalidArgument("patch pattern must be rectangular".into()));
    }
    if pattern.iter().flatten().any(|&v| v > 1) {
        return Err(Error::InvalidArgument("patch pattern values must be 0 or 1".into()));
    }
    Ok((ph, pw))
}

fn anchor_or_default(
    anchor: Option<(usize, usize)>,
    shape: Shape,
    ph: usize,
    pw: usize,
) -> Result<(usize, usize)> {
    match anchor {
        Some(a) => Ok(a),
        None => {
            if shape.h < ph || shape.w < pw {
                return Err(Error::InvalidArgument(format!(
                    "{ph}x{pw} patch does not fit a {}x{} image",
                    shape.h, shape.w
                )));
            }
            Ok((shape.h - ph, shape.w - pw))
        }
    }
}

fn overlay_value(overlay: &Overlay, shape: Shape, r: usize, c: usize, ch: usize) -> f64 {
    match overlay {
        Overlay::DiagonalGradient => {
            let fr = if shape.h > 1 { r as f64 / (shape.h - 1) as f64 } else { 0.0 };
            let fc = if shape.w > 1 { c as f64 / (shape.w - 1) as f64 } else { 0.0 };
            (fr + fc) / 2.0
        }
        Overlay::Image { pixels, .. } => pixels[(ch * shape.h + r) * shape.w + c],
    }
}

/// Stamps or blends the trigger into one image, leaving all other pixels
/// untouched.
pub fn apply_trigger(image: &[f64], shape: Shape, spec: &TriggerSpec) -> Result<Vec<f64>> {
    if image.len() != shape.len() {
        return Err(Error::ShapeMismatch(format!(
            "image has {} values, shape implies {}",
            image.len(),
            shape.len()
        )));
    }
    let mut out = image.to_vec();
    match &spec.kind {
        TriggerKind::Patch { pattern, anchor } => {
            let (ph, pw) = pattern_dims(pattern)?;
            let (ar, ac) = anchor_or_default(*anchor, shape, ph, pw)?;
            if ar + ph > shape.h || ac + pw > shape.w {
                return Err(Error::InvalidArgument(format!(
                    "{ph}x{pw} patch at ({ar}, {ac}) exceeds {}x{} image",
                    shape.h, shape.w
                )));
            }
            for (pr, row) in pattern.iter().enumerate() {
                for (pc, &bit) in row.iter().enumerate() {
                    let v = if bit == 1 { 1.0 } else { 0.0 };
                    for ch in 0..shape.c {
                        out[(ch * shape.h + ar + pr) * shape.w + ac + pc] = v;
                    }
                }
            }
        }
        TriggerKind::Blend { overlay, alpha } => {
            if !(0.0..=1.0).contains(alpha) {
                return Err(Error::InvalidArgument(format!(
                    "blend alpha must be in [0, 1], got {alpha}"
                )));
            }
            for ch in 0..shape.c {
                for r in 0..shape.h {
                    for c in 0..shape.w {
                        let idx = (ch * shape.h + r) * shape.w + c;
                        let ov = overlay_value(overlay, shape, r, c, ch);
                        out[idx] = ((1.0 - alpha) * image[idx] + alpha * ov).clamp(0.0, 1.0);
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoisonConfig {
    pub rate: f64,
    pub seed: u64,
}

/// Poisons exactly `round(rate * n)` seeded samples (from the source classes
/// when source-specific): the trigger is applied and the label is set to the
/// target class. Returns the poisoned dataset and the sorted poisoned indices.
pub fn poison_dataset(
    data: &LabeledDataset,
    spec: &TriggerSpec,
    cfg: &PoisonConfig,
) -> Result<(LabeledDataset, Vec<usize>)> {
    if !(0.0..=1.0).contains(&cfg.rate) {
        return Err(Error::InvalidArgument(format!(
            "poison rate must be in [0, 1], got {}",
            cfg.rate
        )));
    }
    spec.validate(data.shape(), data.class_count())?;
    if cfg.rate == 0.0 {
        return Ok((data.clone(), Vec::new()));
    }
    let want = (cfg.rate * data.len() as f64 + 0.5).floor() as usize;
    if want == 0 {
        return Err(Error::InvalidArgument(format!(
            "poison rate {} of {} samples selects less than one",
            cfg.rate,
            data.len()
        )));
    }
    let mut eligible: Vec<usize> = (0..data.len())
        .filter(|&i| spec.is_source(data.label(i)))
        .collect();
    if eligible.is_empty() {
        return Err(Error::InvalidArgument(
            "no samples from the source classes to poison".into(),
        ));
    }
    if want > eligible.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot poison {want} samples, only {} are from the source classes",
            eligible.len()
        )));
    }
    let mut rng = rng::seeded(cfg.seed);
    for i in 0..want.min(eligible.len() - 1) {
        let j = rng.gen_range(i..eligible.len());
        eligible.swap(i, j);
    }
    let mut chosen: Vec<usize> = eligible[..want].to_vec();
    chosen.sort_unstable();

    let mut poisoned = data.clone();
    let shape = data.shape();
    for &i in &chosen {
        let triggered = apply_trigger(data.input(i), shape, spec)?;
        poisoned.input_mut(i).copy_from_slice(&triggered);
        poisoned.set_label(i, spec.target_class);
    }
    Ok((poisoned, chosen))
}

/// All source-class test samples with the trigger applied and labels set to
/// the target class; samples originally labeled with the target class are
/// excluded.
pub fn build_asr_set(test_data: &LabeledDataset, spec: &TriggerSpec) -> Result<LabeledDataset> {
    spec.validate(test_data.shape(), test_data.class_count())?;
    let indices: Vec<usize> = (0..test_data.len())
        .filter(|&i| {
            let y = test_data.label(i);
            y != spec.target_class && spec.is_source(y)
        })
        .collect();
    if indices.is_empty() {
        return Err(Error::EmptyDataset(
            "no source-class samples available for an ASR set".into(),
        ));
    }
    let mut asr_set = test_data.subset(&indices)?;
    let shape = asr_set.shape();
    for i in 0..asr_set.len() {
        let triggered = apply_trigger(asr_set.input(i), shape, spec)?;
        asr_set.input_mut(i).copy_from_slice(&triggered);
        asr_set.set_label(i, spec.target_class);
    }
    Ok(asr_set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;

    fn image_shape() -> Shape {
        Shape { h: 8, w: 8, c: 1 }
    }

    #[test]
    fn default_pattern_has_eleven_white_five_black() {
        let ones: usize = DEFAULT_PATCH_PATTERN
            .iter()
            .flatten()
            .map(|&v| v as usize)
            .sum();
        assert_eq!(ones, 11);
        assert_eq!(DEFAULT_PATCH_PATTERN.iter().flatten().count() - ones, 5);
    }

    #[test]
    fn patch_overwrites_exactly_the_window() {
        let shape = image_shape();
        let image = vec![0.5; shape.len()];
        let spec = TriggerSpec::default_patch(0);
        let out = apply_trigger(&image, shape, &spec).unwrap();
        let mut changed = 0;
        for r in 0..8 {
            for c in 0..8 {
                let v = out[r * 8 + c];
                if r >= 4 && c >= 4 {
                    let bit = DEFAULT_PATCH_PATTERN[r - 4][c - 4];
                    assert_eq!(v, if bit == 1 { 1.0 } else { 0.0 });
                    changed += 1;
                } else {
                    assert_eq!(v, 0.5);
                }
            }
        }
        assert_eq!(changed, 16);
    }

    #[test]
    fn patch_out_of_bounds_is_rejected() {
        let shape = image_shape();
        let mut spec = TriggerSpec::default_patch(0);
        if let TriggerKind::Patch { anchor, .. } = &mut spec.kind {
            *anchor = Some((6, 6));
        }
        assert!(apply_trigger(&vec![0.0; shape.len()], shape, &spec).is_err());
    }

    #[test]
    fn blend_alpha_extremes() {
        let shape = image_shape();
        let image: Vec<f64> = (0..shape.len()).map(|i| (i % 7) as f64 / 7.0).collect();
        let zero = apply_trigger(&image, shape, &TriggerSpec::default_blend(0, 0.0)).unwrap();
        assert_eq!(zero, image);
        let one = apply_trigger(&image, shape, &TriggerSpec::default_blend(0, 1.0)).unwrap();
        for r in 0..8 {
            for c in 0..8 {
                let expected = (r as f64 / 7.0 + c as f64 / 7.0) / 2.0;
                assert!((one[r * 8 + c] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn poison_count_is_exact_and_labels_flip() {
        let data = synth_blobs(10, 50, 64, 4.0, 3).unwrap();
        let spec = TriggerSpec::default_patch(7);
        let cfg = PoisonConfig { rate: 0.1, seed: 5 };
        let (poisoned, indices) = poison_dataset(&data, &spec, &cfg).unwrap();
        assert_eq!(indices.len(), 50);
        for &i in &indices {
            assert_eq!(poisoned.label(i), 7);
            // Trigger pixels present.
            let img = poisoned.input(i);
            for (pr, row) in DEFAULT_PATCH_PATTERN.iter().enumerate() {
                for (pc, &bit) in row.iter().enumerate() {
                    assert_eq!(img[(4 + pr) * 8 + 4 + pc], bit as f64);
                }
            }
        }
        // Untouched elsewhere.
        let untouched: Vec<usize> = (0..data.len()).filter(|i| !indices.contains(i)).collect();
        for &i in untouched.iter().take(20) {
            assert_eq!(poisoned.input(i), data.input(i));
            assert_eq!(poisoned.label(i), data.label(i));
        }
    }

    #[test]
    fn zero_rate_is_identity() {
        let data = synth_blobs(3, 10, 16, 2.0, 1).unwrap();
        let spec = TriggerSpec::default_patch(0);
        let (poisoned, indices) = poison_dataset(&data, &spec, &PoisonConfig { rate: 0.0, seed: 0 }).unwrap();
        assert!(indices.is_empty());
        assert_eq!(poisoned.inputs_flat(), data.inputs_flat());
    }

    #[test]
    fn source_specific_poisoning_only_touches_sources() {
        let data = synth_blobs(5, 40, 16, 2.0, 1).unwrap();
        let spec = TriggerSpec {
            kind: TriggerKind::Patch {
                pattern: vec![vec![1, 0], vec![0, 1]],
                anchor: Some((0, 0)),
            },
            source_classes: Some([3usize].into_iter().collect()),
            target_class: 1,
        };
        let (_, indices) = poison_dataset(&data, &spec, &PoisonConfig { rate: 0.1, seed: 2 }).unwrap();
        assert_eq!(indices.len(), 20);
        for &i in &indices {
            assert_eq!(data.label(i), 3);
        }
    }

    #[test]
    fn asr_set_excludes_target_class() {
        let test = synth_blobs(10, 100, 64, 3.0, 9).unwrap();
        let spec = TriggerSpec::default_patch(4);
        let asr = build_asr_set(&test, &spec).unwrap();
        assert_eq!(asr.len(), 900);
        assert!(asr.labels().iter().all(|&y| y == 4));
        // Patch kind: difference confined to trigger pixels.
        let src = asr.source_indices().unwrap();
        for k in 0..10 {
            let orig = test.input(src[k]);
            let trig = asr.input(k);
            let l0 = orig
                .iter()
                .zip(trig)
                .filter(|(a, b)| a != b)
                .count();
            assert!(l0 <= 16, "L0 difference {l0}");
        }
    }

    #[test]
    fn asr_set_with_source_class_only() {
        let test = synth_blobs(10, 10, 64, 3.0, 9).unwrap();
        let spec = TriggerSpec {
            source_classes: Some([3usize].into_iter().collect()),
            ..TriggerSpec::default_patch(7)
        };
        let asr = build_asr_set(&test, &spec).unwrap();
        assert_eq!(asr.len(), 10);
        for &i in asr.source_indices().unwrap() {
            assert_eq!(test.label(i), 3);
        }
        assert!(asr.labels().iter().all(|&y| y == 7));
    }

    #[test]
    fn target_in_sources_is_rejected() {
        let spec = TriggerSpec {
            source_classes: Some([2usize, 4].into_iter().collect()),
            ..TriggerSpec::default_patch(2)
        };
        assert!(spec.validate(image_shape(), 10).is_err());
    }
}
