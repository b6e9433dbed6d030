//! Dataset manifests: one JSON object per line.

use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::fmat::load_feature_matrix;
use crate::seqmodel::{EMO_DIM, NV_DIM};
use crate::Matrix;

/// One manifest entry. Paths are relative to the manifest's directory
/// unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub id: String,
    pub features_path: String,
    pub phonemes_path: String,
    pub nv_path: String,
    pub emo_path: String,
    pub duration_s: f64,
    pub emotion_label: String,
    pub emotion_confidence: f64,
    pub ovlr: f64,
    pub speaker_change: bool,
}

impl DatasetRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

/// Parse one manifest line. `line_no` is 1-based and only used in errors.
pub fn parse_record(line: &str, path: &Path, line_no: usize) -> Result<DatasetRecord> {
    serde_json::from_str(line).map_err(|e| Error::Manifest {
        path: path.to_path_buf(),
        line: line_no,
        message: e.to_string(),
    })
}

/// Iterate `(line_no, record)` over a manifest stream, skipping blank lines.
pub fn records<'a, R: BufRead + 'a>(
    reader: R,
    path: &'a Path,
) -> impl Iterator<Item = Result<(usize, DatasetRecord)>> + 'a {
    reader.lines().enumerate().filter_map(move |(i, line)| {
        let line_no = i + 1;
        match line {
            Err(e) => Some(Err(Error::io(path, e))),
            Ok(l) if l.trim().is_empty() => None,
            Ok(l) => Some(parse_record(&l, path, line_no).map(|r| (line_no, r))),
        }
    })
}

pub fn read_manifest(path: &Path) -> Result<Vec<DatasetRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    records(std::io::BufReader::new(file), path)
        .map(|r| r.map(|(_, rec)| rec))
        .collect()
}

pub fn write_manifest(path: &Path, records: &[DatasetRecord]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        writeln!(out, "{}", r.to_line()).expect("write to vec");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn resolve(manifest: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        return p.to_path_buf();
    }
    manifest.parent().unwrap_or(Path::new(".")).join(p)
}

/// Phoneme files hold whitespace-separated integer ids, one per frame.
pub fn parse_phonemes(text: &str) -> Result<Vec<u32>> {
    text.split_whitespace()
        .enumerate()
        .map(|(i, tok)| {
            tok.parse::<u32>().map_err(|_| Error::Format {
                field: "phonemes",
                message: format!("token {i} ('{tok}') is not a phoneme id"),
            })
        })
        .collect()
}

pub fn format_phonemes(ids: &[u32]) -> String {
    let mut s = ids.iter().map(u32::to_string).collect::<Vec<_>>().join(" ");
    s.push('\n');
    s
}

pub fn load_phonemes(path: &Path) -> Result<Vec<u32>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_phonemes(&text)
}

/// All streams of one record, loaded and length-checked.
#[derive(Debug, Clone)]
pub struct LoadedRecord {
    pub record: DatasetRecord,
    pub features: Matrix,
    pub phonemes: Vec<u32>,
    pub nv: Matrix,
    pub emo: Matrix,
}

/// Load a record's files. NV and emotion streams whose length differs from
/// the feature frames are linearly interpolated onto the frame grid.
pub fn load_record(manifest: &Path, record: &DatasetRecord) -> Result<LoadedRecord> {
    let features = load_feature_matrix(&resolve(manifest, &record.features_path))?.to_f64();
    let frames = features.ncols();
    let phonemes = load_phonemes(&resolve(manifest, &record.phonemes_path))?;
    if phonemes.len() != frames {
        return Err(Error::Shape(format!(
            "record {}: {} phoneme frames for {frames} feature frames",
            record.id,
            phonemes.len()
        )));
    }
    let nv = load_feature_matrix(&resolve(manifest, &record.nv_path))?.to_f64();
    let emo = load_feature_matrix(&resolve(manifest, &record.emo_path))?.to_f64();
    let nv = fit_stream(nv, NV_DIM, frames, &record.id, "nv")?;
    let emo = fit_stream(emo, EMO_DIM, frames, &record.id, "emo")?;
    if nv.iter().chain(emo.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Validation(format!(
            "record {}: non-finite condition value",
            record.id
        )));
    }
    Ok(LoadedRecord {
        record: record.clone(),
        features,
        phonemes,
        nv,
        emo,
    })
}

fn fit_stream(m: Matrix, rows: usize, frames: usize, id: &str, what: &str) -> Result<Matrix> {
    if m.nrows() != rows {
        return Err(Error::Shape(format!(
            "record {id}: {what} stream has {} rows, expected {rows}",
            m.nrows()
        )));
    }
    if m.ncols() == frames {
        Ok(m)
    } else {
        crate::sampler::interpolate_stream(&m, frames)
    }
}
