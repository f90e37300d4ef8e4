//! Ingestion, label codec, cross-validation planning, class weights, the
//! binary window cache and the synthetic generator.

mod cache;
mod ingest;
mod labels;
mod split;
mod synth;

pub use cache::{read_cache, read_records, write_cache, write_records, CacheRecord, CACHE_MAGIC, CACHE_VERSION, WINDOW_DIM};
pub use ingest::{
    load_recordings, read_recordings, write_recordings, RawRecording, CSV_HEADER, SAMPLE_PERIOD_MS, SEGMENT_SAMPLES,
    SEGMENT_SECONDS,
};
pub use labels::{
    decode_labels, encode_labels, joint_class, SedentaryLabel, SocialLabel, NUM_JOINT, NUM_SED, NUM_SOC, SED_CLASSES,
    SOC_CLASSES,
};
pub use split::{grouped_kfold, stratified_kfold, FoldSplit, SplitPlan, VAL_FRACTION};
pub use synth::{synth_generate, synth_raw, SynthConfig, SED_FREQS_HZ, SOC_AMPLITUDES, SOC_CARRIER_HZ, SYNTH_PARTICIPANTS};

use serde::{Deserialize, Serialize};

use crate::dsp::windows_from_raw;
use crate::error::{config_err, Result};

/// Sedentary code of `OTHER` windows retained in a cache; never a model class.
pub const SED_OTHER: u8 = NUM_SED as u8;

/// Drops windows whose labels are outside the model classes.
pub fn modeling_windows(windows: Vec<LabeledWindow>) -> Vec<LabeledWindow> {
    windows.into_iter().filter(|w| (w.sed as usize) < NUM_SED && (w.soc as usize) < NUM_SOC).collect()
}

/// One `13×100` window (channel-major) with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledWindow {
    pub features: Vec<f64>,
    pub sed: u8,
    pub soc: u8,
    pub participant_id: String,
    pub source_segment_id: String,
}

/// Runs the conditioning pipeline on each recording and labels its
/// windows. Sedentary `OTHER` recordings are dropped, or kept with
/// sedentary code [`SED_OTHER`] when `keep_other` is set.
pub fn windows_from_recordings(recordings: &[RawRecording], keep_other: bool) -> Result<Vec<LabeledWindow>> {
    let mut out = Vec::new();
    for rec in recordings {
        let (sed, soc) = match encode_labels(rec.sedentary, rec.social) {
            Some(pair) => pair,
            None if keep_other => (SED_OTHER, rec.social.index()),
            None => continue,
        };
        for features in windows_from_raw(&rec.segment)? {
            out.push(LabeledWindow {
                features,
                sed,
                soc,
                participant_id: rec.participant_id.clone(),
                source_segment_id: rec.segment_id.clone(),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub sed: Vec<f64>,
    pub soc: Vec<f64>,
}

impl ClassWeights {
    pub fn uniform() -> Self {
        Self { sed: vec![1.0; NUM_SED], soc: vec![1.0; NUM_SOC] }
    }

    pub fn from_windows<'a>(windows: impl IntoIterator<Item = &'a LabeledWindow>) -> Result<Self> {
        let (sed, soc): (Vec<u8>, Vec<u8>) = windows.into_iter().map(|w| (w.sed, w.soc)).unzip();
        Ok(Self { sed: class_weights(&sed, NUM_SED)?, soc: class_weights(&soc, NUM_SOC)? })
    }
}

/// Balanced inverse frequency `N / (K·n_k)`.
pub fn class_weights(labels: &[u8], num_classes: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; num_classes];
    for &y in labels {
        let slot = counts
            .get_mut(y as usize)
            .ok_or_else(|| config_err!("label {y} out of range for {num_classes} classes"))?;
        *slot += 1;
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(config_err!("class {k} is absent from the training split; cannot weight it"));
    }
    let n = labels.len() as f64;
    Ok(counts.iter().map(|&c| n / (num_classes as f64 * c as f64)).collect())
}
