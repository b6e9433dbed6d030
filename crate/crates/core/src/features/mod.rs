//! Condition-stream construction and file I/O.

mod fmat;
mod manifest;
mod synth;
mod window;

pub use fmat::{
    load_feature_matrix, store_feature_matrix, FeatureMatrix, FMAT_MAGIC, FMAT_VERSION,
};
pub use manifest::{
    format_phonemes, load_phonemes, load_record, parse_phonemes, parse_record, read_manifest,
    records, resolve, write_manifest, DatasetRecord, LoadedRecord,
};
pub use synth::{
    base_profile, emo_stream, frame_amplitude, nv_stream, pattern_profile, phoneme_stream,
    render_features, synth_condition_oracle, trajectory, OracleExample, SynthKind, PATTERN_GAIN,
};
pub use window::{
    align_to_frames, center_arousal_valence, frames_to_seconds, seconds_to_frames,
    uncenter_arousal_valence, window_count, ChunkSeries, WindowSpec,
};
