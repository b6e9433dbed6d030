//! Pseudo-label curation over manifest records: an emotion gate, then an
//! overall-quality (OVLR) gate, then a speaker-change gate. A record is
//! attributed to the first gate it fails.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{records, DatasetRecord};
use crate::rng::FlowRng;

/// Classes emitted by the emotion classifier.
pub const EMOTION_CLASSES: [&str; 9] = [
    "angry",
    "disgusted",
    "fearful",
    "happy",
    "neutral",
    "other",
    "sad",
    "surprised",
    "unknown",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationPolicy {
    /// Retained at any confidence.
    pub keep_emotions_any_conf: BTreeSet<String>,
    /// Retained only at `confidence >= strict_confidence`.
    pub strict_emotions: BTreeSet<String>,
    pub strict_confidence: f64,
    /// Retained only when `ovlr > ovlr_min`.
    pub ovlr_min: f64,
    /// Labels the classifier can emit. Anything else is a validation error
    /// unless `pass_unknown_labels` is set, in which case it is dropped.
    pub known_labels: BTreeSet<String>,
    pub pass_unknown_labels: bool,
}

impl Default for CurationPolicy {
    fn default() -> Self {
        let set = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        Self {
            keep_emotions_any_conf: set(&["angry", "disgusted", "fearful", "sad", "surprised"]),
            strict_emotions: set(&["neutral", "happy"]),
            strict_confidence: 1.0,
            ovlr_min: 3.0,
            known_labels: set(&EMOTION_CLASSES),
            pass_unknown_labels: false,
        }
    }
}

impl CurationPolicy {
    pub fn validate(&self) -> Result<()> {
        if let Some(l) = self
            .keep_emotions_any_conf
            .intersection(&self.strict_emotions)
            .next()
        {
            return Err(Error::Config(format!(
                "label '{l}' is in both the any-confidence and strict sets"
            )));
        }
        if !(0.0..=1.0).contains(&self.strict_confidence) {
            return Err(Error::Config(format!(
                "strict_confidence {} outside [0, 1]",
                self.strict_confidence
            )));
        }
        if self.ovlr_min.is_nan() {
            return Err(Error::Config("ovlr_min is NaN".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Keep,
    Drop,
}

impl Verdict {
    fn from_bool(keep: bool) -> Self {
        if keep {
            Verdict::Keep
        } else {
            Verdict::Drop
        }
    }
}

pub fn emotion_gate(label: &str, confidence: f64, policy: &CurationPolicy) -> Result<Verdict> {
    if !(0.0..=1.0).contains(&confidence) {
        return Err(Error::Validation(format!(
            "emotion confidence {confidence} outside [0, 1]"
        )));
    }
    let known = policy.known_labels.contains(label)
        || policy.keep_emotions_any_conf.contains(label)
        || policy.strict_emotions.contains(label);
    if !known && !policy.pass_unknown_labels {
        return Err(Error::Validation(format!(
            "unknown emotion label '{label}'"
        )));
    }
    if policy.keep_emotions_any_conf.contains(label) {
        return Ok(Verdict::Keep);
    }
    Ok(Verdict::from_bool(
        policy.strict_emotions.contains(label) && confidence >= policy.strict_confidence,
    ))
}

pub fn quality_gate(ovlr: f64, policy: &CurationPolicy) -> Result<Verdict> {
    if !ovlr.is_finite() {
        return Err(Error::Validation(format!(
            "OVLR score {ovlr} is not finite"
        )));
    }
    Ok(Verdict::from_bool(ovlr > policy.ovlr_min))
}

/// `None` is a manifest that omits the field, which is not allowed.
pub fn speaker_gate(speaker_change: Option<bool>) -> Result<Verdict> {
    match speaker_change {
        Some(changed) => Ok(Verdict::from_bool(!changed)),
        None => Err(Error::Validation("speaker_change field is absent".into())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    EmotionGate,
    QualityGate,
    SpeakerGate,
}

/// Outcome for one record; `None` means retained.
pub fn classify(record: &DatasetRecord, policy: &CurationPolicy) -> Result<Option<RejectReason>> {
    if emotion_gate(&record.emotion_label, record.emotion_confidence, policy)? == Verdict::Drop {
        return Ok(Some(RejectReason::EmotionGate));
    }
    if quality_gate(record.ovlr, policy)? == Verdict::Drop {
        return Ok(Some(RejectReason::QualityGate));
    }
    if speaker_gate(Some(record.speaker_change))? == Verdict::Drop {
        return Ok(Some(RejectReason::SpeakerGate));
    }
    Ok(None)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectCounts {
    pub emotion_gate: usize,
    pub quality_gate: usize,
    pub speaker_gate: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationReport {
    pub input: usize,
    pub retained: usize,
    pub rejected: RejectCounts,
    pub retained_by_emotion: BTreeMap<String, usize>,
}

impl CurationReport {
    fn add(&mut self, record: &DatasetRecord, outcome: Option<RejectReason>) {
        self.input += 1;
        match outcome {
            None => {
                self.retained += 1;
                *self
                    .retained_by_emotion
                    .entry(record.emotion_label.clone())
                    .or_default() += 1;
            }
            Some(RejectReason::EmotionGate) => self.rejected.emotion_gate += 1,
            Some(RejectReason::QualityGate) => self.rejected.quality_gate += 1,
            Some(RejectReason::SpeakerGate) => self.rejected.speaker_gate += 1,
        }
    }

    /// Rejections plus retained equals input.
    pub fn is_conserved(&self) -> bool {
        let r = &self.rejected;
        r.emotion_gate + r.quality_gate + r.speaker_gate + self.retained == self.input
            && self.retained_by_emotion.values().sum::<usize>() == self.retained
    }
}

/// Filter a manifest stream record by record, writing retained lines in
/// input order. `source` names the input in error messages.
pub fn run_pipeline<R: BufRead, W: Write>(
    input: R,
    source: &Path,
    output: &mut W,
    policy: &CurationPolicy,
) -> Result<CurationReport> {
    policy.validate()?;
    let mut report = CurationReport::default();
    for item in records(input, source) {
        let (line, record) = item?;
        let outcome = classify(&record, policy).map_err(|e| Error::Manifest {
            path: source.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        if outcome.is_none() {
            writeln!(output, "{}", record.to_line()).map_err(|e| Error::io(source, e))?;
        }
        report.add(&record, outcome);
    }
    Ok(report)
}

/// File-to-file pipeline. Output is written to a temporary sibling and
/// renamed into place only on success.
pub fn run_pipeline_files(
    input: &Path,
    output: &Path,
    policy: &CurationPolicy,
) -> Result<CurationReport> {
    let file = fs::File::open(input).map_err(|e| Error::io(input, e))?;
    let tmp = output.with_extension("partial");
    let result = (|| {
        let out = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(out);
        let report = run_pipeline(BufReader::new(file), input, &mut w, policy)?;
        w.flush().map_err(|e| Error::io(&tmp, e))?;
        Ok(report)
    })();
    match result {
        Ok(report) => {
            fs::rename(&tmp, output).map_err(|e| Error::io(output, e))?;
            Ok(report)
        }
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}

/// Records with random scorer outputs, concentrated around the gate
/// boundaries (confidence exactly 1.0, OVLR exactly 3.0).
pub fn synthetic_records(n: usize, rng: &mut FlowRng) -> Vec<DatasetRecord> {
    (0..n)
        .map(|i| {
            let label = EMOTION_CLASSES[rng.random_range(0..EMOTION_CLASSES.len())];
            let confidence = match rng.random_range(0..4) {
                0 => 1.0,
                1 => 0.0,
                _ => rng.random_range(0.0..1.0),
            };
            let ovlr = match rng.random_range(0..4) {
                0 => 3.0,
                _ => rng.random_range(1.5..4.5),
            };
            let id = format!("rec{i:05}");
            DatasetRecord {
                features_path: format!("{id}.fmat"),
                phonemes_path: format!("{id}.phn"),
                nv_path: format!("{id}.nv.fmat"),
                emo_path: format!("{id}.emo.fmat"),
                id,
                duration_s: rng.random_range(1.0..10.0),
                emotion_label: label.to_string(),
                emotion_confidence: confidence,
                ovlr,
                speaker_change: rng.random_bool(0.2),
            }
        })
        .collect()
}
