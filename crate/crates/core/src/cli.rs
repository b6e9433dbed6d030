//! Command-line front end: `synth`, `train`, `sample`, `curate`, `eval`.
//!
//! Every artifact-producing command writes a provenance record next to its
//! output. Errors are printed to stderr prefixed by their category and map
//! to exit code 1 (2 for usage errors).

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::curate::{run_pipeline_files, CurationPolicy};
use crate::error::{Error, Result};
use crate::features::{
    format_phonemes, load_feature_matrix, load_phonemes, load_record, read_manifest,
    store_feature_matrix, synth_condition_oracle, write_manifest, DatasetRecord, FeatureMatrix,
    SynthKind,
};
use crate::fm_core::PathConfig;
use crate::infill::MaskRatio;
use crate::metrics::{aggregate_seeds, aro_val_sim, frame_cosine_sim};
use crate::rng::{derive, seeded};
use crate::sampler::{assemble_prompt, integrate, GuidanceConfig, Solver, SpeakerPrompt};
use crate::seqmodel::{
    load_checkpoint, save_checkpoint, CheckpointMeta, LossScope, Model, ModelConfig, Parameters,
    EMO_DIM, NV_DIM,
};
use crate::trainer::{train, CorpusExample, Source, TrainConfig};
use crate::Matrix;

pub const PROVENANCE_FILE: &str = "provenance.json";
pub const LOSS_LOG_FILE: &str = "loss.log";

#[derive(Debug, Parser)]
#[command(
    name = "flowcond",
    version,
    about = "Conditional flow matching for sequence infilling"
)]
pub struct Cli {
    /// Worker threads. 1 gives bitwise-reproducible output.
    #[arg(long, global = true, env = "FLOWCOND_THREADS", default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic oracle corpus (manifest plus feature files).
    Synth(SynthArgs),
    /// Train a model from one or more manifests.
    Train(TrainArgs),
    /// Generate features for a text prompt in a speaker prompt's voice.
    Sample(SampleArgs),
    /// Filter a manifest through the curation gates.
    Curate(CurateArgs),
    /// Similarity metrics.
    #[command(subcommand)]
    Eval(EvalCommand),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value = "sinusoid")]
    #[serde(serialize_with = "ser_kind")]
    pub kind: SynthKind,
    #[arg(long)]
    pub count: usize,
    /// Frames per sequence.
    #[arg(long, short = 'T')]
    pub frames: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 8)]
    pub feature_dim: usize,
    #[arg(long, default_value_t = 32)]
    pub n_phonemes: usize,
    #[arg(long, default_value_t = 100.0)]
    pub frame_rate: f32,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Write into a non-empty directory.
    #[arg(long)]
    #[serde(skip)]
    pub force: bool,
}

fn ser_kind<S: serde::Serializer>(k: &SynthKind, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(k.name())
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// TOML run config. Flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training manifest; repeat for several sources.
    #[arg(long = "manifest", required = true)]
    pub manifests: Vec<PathBuf>,
    /// Mixing ratios, one per manifest (default: uniform).
    #[arg(long, value_delimiter = ',')]
    pub ratios: Option<Vec<f64>>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub peak_lr: Option<f64>,
    #[arg(long)]
    pub warmup_steps: Option<u64>,
    #[arg(long)]
    pub batch_frames: Option<usize>,
    #[arg(long)]
    pub crop_frames: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Permit the full-scale preset.
    #[arg(long)]
    pub allow_full_scale: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Speaker prompt features (FMAT, F×T_spk).
    #[arg(long)]
    pub spk_features: PathBuf,
    #[arg(long)]
    pub spk_phonemes: PathBuf,
    #[arg(long)]
    pub spk_nv: Option<PathBuf>,
    #[arg(long)]
    pub spk_emo: Option<PathBuf>,
    /// Frame-level phonemes of the text to generate.
    #[arg(long)]
    pub text_phonemes: PathBuf,
    /// NV stream for the text region (FMAT, 32×K).
    #[arg(long)]
    pub nv: Option<PathBuf>,
    /// Centered arousal/valence stream for the text region (FMAT, 2×K).
    #[arg(long)]
    pub emo: Option<PathBuf>,
    /// Use an all-zero NV stream wherever no NV file is given.
    #[arg(long)]
    pub zero_nv: bool,
    /// Use an all-zero emotion stream wherever no emotion file is given.
    #[arg(long)]
    pub zero_emo: bool,
    #[arg(long, default_value_t = 32)]
    pub nfe: usize,
    #[arg(long, default_value_t = 1.0)]
    pub guidance: f64,
    #[arg(long, default_value = "euler")]
    #[serde(serialize_with = "ser_solver")]
    pub solver: Solver,
    #[arg(long)]
    pub clamp_each_step: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn ser_solver<S: serde::Serializer>(v: &Solver, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(match v {
        Solver::Euler => "euler",
        Solver::Midpoint => "midpoint",
    })
}

#[derive(Debug, Clone, Args)]
pub struct CurateArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3.0)]
    pub ovlr_min: f64,
    #[arg(long, default_value_t = 1.0)]
    pub strict_confidence: f64,
    /// Drop labels outside the classifier vocabulary instead of failing.
    #[arg(long)]
    pub pass_unknown_labels: bool,
    /// Report path (JSON). Printed to stdout when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum EvalCommand {
    /// Frame-wise cosine similarity of two embedding trajectories.
    EmoSim { a: PathBuf, b: PathBuf },
    /// Frame-wise cosine similarity of two centered arousal/valence trajectories.
    AroValSim { a: PathBuf, b: PathBuf },
    /// Aggregate a JSONL list of `{"seed", "a", "b", "metric"}` pairs.
    Report {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Training run settings as read from a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: String,
    pub model: ModelConfig,
    pub path: PathConfig,
    pub steps: u64,
    pub batch_frames: usize,
    pub crop_frames: usize,
    pub peak_lr: f64,
    pub warmup_steps: u64,
    /// Per-manifest mixing ratios; empty means uniform.
    pub mixing: Vec<f64>,
    pub seed: u64,
    pub p_drop: f64,
    pub mask_ratio: MaskRatio,
    pub clip_norm: Option<f64>,
    pub checkpoint_every: u64,
}

/// Keys a config file may set. Absent keys keep the preset value.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfigFile {
    preset: Option<String>,
    model: Option<ModelConfig>,
    sigma_min: Option<f64>,
    steps: Option<u64>,
    batch_frames: Option<usize>,
    crop_frames: Option<usize>,
    peak_lr: Option<f64>,
    warmup_steps: Option<u64>,
    mixing: Option<Vec<f64>>,
    seed: Option<u64>,
    p_drop: Option<f64>,
    mask_lo: Option<f64>,
    mask_hi: Option<f64>,
    clip_norm: Option<f64>,
    checkpoint_every: Option<u64>,
}

impl RunConfig {
    /// Laptop-scale settings.
    pub fn desk() -> Self {
        let t = TrainConfig::default();
        Self {
            preset: "desk".into(),
            model: ModelConfig::desk(),
            path: t.path,
            steps: t.steps,
            batch_frames: t.batch_frames,
            crop_frames: t.crop_frames,
            peak_lr: t.peak_lr,
            warmup_steps: t.warmup_steps,
            mixing: Vec::new(),
            seed: 0,
            p_drop: t.p_drop,
            mask_ratio: t.mask_ratio,
            clip_norm: t.clip_norm,
            checkpoint_every: 500,
        }
    }

    /// Full-scale training regime. Not runnable on a desk machine.
    pub fn full() -> Self {
        Self {
            preset: "full".into(),
            model: ModelConfig::full(),
            steps: 390_000,
            batch_frames: 307_200,
            crop_frames: 1_600,
            peak_lr: 7.5e-5,
            warmup_steps: 20_000,
            mixing: vec![0.5, 0.4, 0.1],
            checkpoint_every: 10_000,
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full()),
            other => Err(Error::Config(format!(
                "unknown preset '{other}' (expected desk or full)"
            ))),
        }
    }

    /// Parse a TOML config on top of its preset (default `desk`).
    pub fn from_toml(text: &str) -> Result<Self> {
        let file: RunConfigFile =
            toml::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))?;
        let mut cfg = Self::preset(file.preset.as_deref().unwrap_or("desk"))?;
        if let Some(m) = file.model {
            cfg.model = m;
        }
        if let Some(s) = file.sigma_min {
            cfg.path = PathConfig::new(s)?;
        }
        macro_rules! take {
            ($($f:ident),*) => { $(if let Some(v) = file.$f { cfg.$f = v; })* };
        }
        take!(
            steps,
            batch_frames,
            crop_frames,
            peak_lr,
            warmup_steps,
            mixing,
            seed,
            p_drop,
            checkpoint_every
        );
        if let Some(lo) = file.mask_lo {
            cfg.mask_ratio.lo = lo;
        }
        if let Some(hi) = file.mask_hi {
            cfg.mask_ratio.hi = hi;
        }
        if file.clip_norm.is_some() {
            cfg.clip_norm = file.clip_norm.filter(|c| *c > 0.0);
        }
        Ok(cfg)
    }

    /// Ratios for `n` sources: the configured ones or uniform.
    pub fn ratios(&self, n: usize) -> Result<Vec<f64>> {
        if n == 0 {
            return Err(Error::Config("no training manifests".into()));
        }
        if self.mixing.is_empty() {
            return Ok(vec![1.0 / n as f64; n]);
        }
        if self.mixing.len() != n {
            return Err(Error::Config(format!(
                "{} mixing ratios for {n} manifests",
                self.mixing.len()
            )));
        }
        let sum: f64 = self.mixing.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || self.mixing.iter().any(|r| r.is_nan() || *r < 0.0) {
            return Err(Error::Config(format!(
                "mixing ratios {:?} must be nonnegative and sum to 1",
                self.mixing
            )));
        }
        Ok(self.mixing.clone())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            path: self.path,
            steps: self.steps,
            batch_frames: self.batch_frames,
            crop_frames: self.crop_frames,
            peak_lr: self.peak_lr,
            warmup_steps: self.warmup_steps,
            mask_ratio: self.mask_ratio,
            p_drop: self.p_drop,
            loss_scope: LossScope::Masked,
            clip_norm: self.clip_norm,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        PathConfig::new(self.path.sigma_min)?;
        if self.crop_frames == 0 || self.batch_frames < self.crop_frames {
            return Err(Error::Config(format!(
                "batch_frames {} must be at least crop_frames {} > 0",
                self.batch_frames, self.crop_frames
            )));
        }
        if !(self.peak_lr >= 0.0 && self.peak_lr.is_finite()) {
            return Err(Error::Config(format!("peak_lr {} invalid", self.peak_lr)));
        }
        if !(0.0..=1.0).contains(&self.p_drop) {
            return Err(Error::Config(format!(
                "p_drop {} outside [0, 1]",
                self.p_drop
            )));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be positive".into()));
        }
        Ok(())
    }
}

/// Parse and run, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("flowcond: {e}");
            1
        }
    }
}

/// Parse `args` (including the program name) and run.
pub fn run_args<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Config(e.to_string()))?;
    run(cli)
}

pub fn run(cli: Cli) -> Result<()> {
    if cli.threads == 0 {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let mut stdout = std::io::stdout();
    pool.install(|| match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Sample(a) => cmd_sample(&a),
        Command::Curate(a) => cmd_curate(&a, &mut stdout),
        Command::Eval(c) => cmd_eval(&c, &mut stdout),
    })
}

fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    match fs::read_dir(dir) {
        Ok(mut entries) => {
            if entries.next().is_some() && !force {
                return Err(Error::Config(format!(
                    "output directory {} is not empty (pass --force to write into it)",
                    dir.display()
                )));
            }
            Ok(())
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
        }
        Err(e) => Err(Error::io(dir, e)),
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    prepare_out_dir(&a.out, a.force)?;
    let mut records = Vec::with_capacity(a.count);
    for i in 0..a.count {
        let mut rng = derive(a.seed, i as u64);
        let ex = synth_condition_oracle(a.kind, a.frames, a.feature_dim, a.n_phonemes, &mut rng)?;
        let id = format!("{}-{i:05}", a.kind.name());
        let rec = DatasetRecord {
            features_path: format!("{id}.fmat"),
            phonemes_path: format!("{id}.phn"),
            nv_path: format!("{id}.nv.fmat"),
            emo_path: format!("{id}.emo.fmat"),
            id,
            duration_s: a.frames as f64 / a.frame_rate as f64,
            emotion_label: "neutral".into(),
            emotion_confidence: 1.0,
            ovlr: 4.0,
            speaker_change: false,
        };
        let fr = a.frame_rate as f64;
        store_feature_matrix(
            &FeatureMatrix::from_f64(&ex.features, fr),
            &a.out.join(&rec.features_path),
        )?;
        store_feature_matrix(
            &FeatureMatrix::from_f64(&ex.nv, fr),
            &a.out.join(&rec.nv_path),
        )?;
        store_feature_matrix(
            &FeatureMatrix::from_f64(&ex.emo, fr),
            &a.out.join(&rec.emo_path),
        )?;
        let phn = a.out.join(&rec.phonemes_path);
        fs::write(&phn, format_phonemes(&ex.phonemes) + "\n").map_err(|e| Error::io(&phn, e))?;
        records.push(rec);
    }
    write_manifest(&a.out.join("manifest.jsonl"), &records)?;
    write_json(
        &a.out.join(PROVENANCE_FILE),
        &json!({
            "command": "synth",
            "version": env!("CARGO_PKG_VERSION"),
            "seed": a.seed,
            "args": a,
        }),
    )
}

fn load_source(manifest: &Path, cfg: &ModelConfig) -> Result<Source> {
    let records = read_manifest(manifest)?;
    let mut examples = Vec::with_capacity(records.len());
    for rec in &records {
        let r = load_record(manifest, rec)?;
        if r.features.nrows() != cfg.feature_dim {
            return Err(Error::Config(format!(
                "{}: record {} has feature dim {} but the model config has feature_dim {}",
                manifest.display(),
                rec.id,
                r.features.nrows(),
                cfg.feature_dim
            )));
        }
        if let Some(p) = r.phonemes.iter().find(|p| **p as usize >= cfg.n_phonemes) {
            return Err(Error::Config(format!(
                "{}: record {} uses phoneme id {p} but the model config has n_phonemes {}",
                manifest.display(),
                rec.id,
                cfg.n_phonemes
            )));
        }
        examples.push(CorpusExample {
            features: r.features,
            phonemes: r.phonemes,
            nv: r.nv,
            emo: r.emo,
        });
    }
    Ok(Source {
        name: manifest.display().to_string(),
        examples,
    })
}

/// Resolve the effective run config: preset, then file, then flags.
pub fn resolve_run_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::from_toml(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => RunConfig::desk(),
    };
    if let Some(name) = &a.preset {
        if *name != cfg.preset {
            let base = RunConfig::preset(name)?;
            cfg = RunConfig {
                seed: cfg.seed,
                ..base
            };
        }
    }
    macro_rules! flag {
        ($($f:ident),*) => { $(if let Some(v) = a.$f { cfg.$f = v; })* };
    }
    flag!(
        steps,
        seed,
        peak_lr,
        warmup_steps,
        batch_frames,
        crop_frames,
        checkpoint_every
    );
    if let Some(r) = &a.ratios {
        cfg.mixing = r.clone();
    }
    cfg.validate()?;
    if cfg.preset == "full" && !a.allow_full_scale {
        return Err(Error::Config(
            "the full preset is not runnable at desk scale (pass --allow-full-scale to force)"
                .into(),
        ));
    }
    Ok(cfg)
}

fn checkpoint_name(step: u64) -> String {
    format!("checkpoint-{step:06}.fmck")
}

/// Train and return the path of the last checkpoint written.
pub fn cmd_train(a: &TrainArgs) -> Result<PathBuf> {
    let cfg = resolve_run_config(a)?;
    let ratios = cfg.ratios(a.manifests.len())?;
    let sources = a
        .manifests
        .iter()
        .map(|m| load_source(m, &cfg.model))
        .collect::<Result<Vec<_>>>()?;
    prepare_out_dir(&a.out, a.force)?;

    let manifests: Vec<_> = a
        .manifests
        .iter()
        .map(|m| Ok(json!({"path": m.display().to_string(), "sha256": sha256_file(m)?})))
        .collect::<Result<_>>()?;
    write_json(
        &a.out.join(PROVENANCE_FILE),
        &json!({
            "command": "train",
            "version": env!("CARGO_PKG_VERSION"),
            "seed": cfg.seed,
            "config": cfg,
            "manifests": manifests,
            "ratios": ratios,
        }),
    )?;

    let mut rng = seeded(cfg.seed);
    let params = Parameters::init(&cfg.model, &mut rng)?;
    let mut model = Model::new(cfg.model.clone(), params)?;
    let meta = |step| CheckpointMeta {
        seed: Some(cfg.seed),
        step,
    };
    let mut last_good = a.out.join(checkpoint_name(0));
    save_checkpoint(&last_good, &cfg.model, model.params(), meta(0))?;

    let log_path = a.out.join(LOSS_LOG_FILE);
    let file = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(file);
    writeln!(log, "# seed {}\n# step loss lr", cfg.seed).map_err(|e| Error::io(&log_path, e))?;

    let tc = cfg.train_config();
    let result = train(&mut model, &sources, &ratios, &tc, &mut rng, |m, s| {
        writeln!(log, "{} {:e} {:e}", s.step, s.loss, s.lr).map_err(|e| Error::io(&log_path, e))?;
        if !m.params().all_finite() {
            return Err(Error::Numeric(format!(
                "non-finite parameters after step {}",
                s.step
            )));
        }
        if s.step % cfg.checkpoint_every == 0 || s.step == tc.steps {
            let path = a.out.join(checkpoint_name(s.step));
            save_checkpoint(&path, &cfg.model, m.params(), meta(s.step))?;
            last_good = path;
        }
        Ok(())
    });
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    match result {
        Ok(()) => Ok(last_good),
        Err(Error::Numeric(msg)) => Err(Error::Numeric(format!(
            "{msg}; training aborted, last good checkpoint is {}",
            last_good.display()
        ))),
        Err(e) => Err(e),
    }
}

fn load_stream(
    path: Option<&PathBuf>,
    rows: usize,
    frames: usize,
    zero_ok: bool,
    what: &str,
    flag: &str,
) -> Result<Matrix> {
    match path {
        Some(p) => {
            let m = load_feature_matrix(p)?.to_f64();
            if m.nrows() != rows {
                return Err(Error::Config(format!(
                    "{what} file {} has {} rows, expected {rows}",
                    p.display(),
                    m.nrows()
                )));
            }
            Ok(m)
        }
        None if zero_ok => Ok(Matrix::zeros((rows, frames))),
        None => Err(Error::Config(format!(
            "no {what} stream given; pass a file or {flag} to use an all-zero placeholder"
        ))),
    }
}

/// Path of the provenance sidecar written next to a sample output.
pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn cmd_sample(a: &SampleArgs) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let cfg = ck.config.clone();
    let spk_fm = load_feature_matrix(&a.spk_features)?;
    if spk_fm.rows() != cfg.feature_dim {
        return Err(Error::Config(format!(
            "speaker prompt has feature dim {} but the checkpoint expects feature_dim {}",
            spk_fm.rows(),
            cfg.feature_dim
        )));
    }
    let spk_features = spk_fm.to_f64();
    let t_spk = spk_features.ncols();
    let spk_phonemes = load_phonemes(&a.spk_phonemes)?;
    let text = load_phonemes(&a.text_phonemes)?;
    let spk_nv = load_stream(
        a.spk_nv.as_ref(),
        NV_DIM,
        t_spk,
        a.zero_nv,
        "speaker NV",
        "--zero-nv",
    )?;
    let spk_emo = load_stream(
        a.spk_emo.as_ref(),
        EMO_DIM,
        t_spk,
        a.zero_emo,
        "speaker emotion",
        "--zero-emo",
    )?;
    let nv = load_stream(
        a.nv.as_ref(),
        NV_DIM,
        text.len(),
        a.zero_nv,
        "NV",
        "--zero-nv",
    )?;
    let emo = load_stream(
        a.emo.as_ref(),
        EMO_DIM,
        text.len(),
        a.zero_emo,
        "emotion",
        "--zero-emo",
    )?;
    let spk = SpeakerPrompt {
        features: spk_features,
        phonemes: spk_phonemes,
        nv: crate::sampler::interpolate_stream(&spk_nv, t_spk)?,
        emo: crate::sampler::interpolate_stream(&spk_emo, t_spk)?,
    };
    let prompt = assemble_prompt(&spk, &text, &nv, &emo)?;
    let gcfg = GuidanceConfig {
        strength: a.guidance,
        nfe: a.nfe,
        solver: a.solver,
        clamp_each_step: a.clamp_each_step,
    };
    let model = Model::new(ck.config, ck.params)?;
    let mut rng = seeded(a.seed);
    let region = integrate(&model, &prompt, &gcfg, &mut rng)?;
    store_feature_matrix(
        &FeatureMatrix::from_f64(&region, spk_fm.frame_rate as f64),
        &a.out,
    )?;
    write_json(
        &sidecar_path(&a.out),
        &json!({
            "command": "sample",
            "version": env!("CARGO_PKG_VERSION"),
            "seed": a.seed,
            "nfe": a.nfe,
            "guidance": a.guidance,
            "checkpoint_sha256": sha256_file(&a.checkpoint)?,
            "args": a,
        }),
    )
}

pub fn cmd_curate<W: Write>(a: &CurateArgs, stdout: &mut W) -> Result<()> {
    let policy = CurationPolicy {
        ovlr_min: a.ovlr_min,
        strict_confidence: a.strict_confidence,
        pass_unknown_labels: a.pass_unknown_labels,
        ..CurationPolicy::default()
    };
    let report = run_pipeline_files(&a.input, &a.out, &policy)?;
    let doc = json!({
        "command": "curate",
        "version": env!("CARGO_PKG_VERSION"),
        "input": a.input.display().to_string(),
        "input_sha256": sha256_file(&a.input)?,
        "output": a.out.display().to_string(),
        "policy": policy,
        "report": report,
    });
    match &a.report {
        Some(p) => write_json(p, &doc),
        None => writeln!(stdout, "{doc:#}").map_err(|e| Error::io("<stdout>", e)),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairLine {
    seed: String,
    a: PathBuf,
    b: PathBuf,
    #[serde(default = "default_metric")]
    metric: String,
}

fn default_metric() -> String {
    "emo".into()
}

fn score(metric: &str, a: &Path, b: &Path) -> Result<f64> {
    let a = load_feature_matrix(a)?.to_f64();
    let b = load_feature_matrix(b)?.to_f64();
    match metric {
        "emo" => frame_cosine_sim(&a, &b),
        "aro-val" => aro_val_sim(&a, &b),
        other => Err(Error::Config(format!(
            "unknown metric '{other}' (expected emo or aro-val)"
        ))),
    }
}

pub fn cmd_eval<W: Write>(c: &EvalCommand, stdout: &mut W) -> Result<()> {
    let out_err = |e| Error::io("<stdout>", e);
    match c {
        EvalCommand::EmoSim { a, b } => {
            writeln!(stdout, "{:?}", score("emo", a, b)?).map_err(out_err)
        }
        EvalCommand::AroValSim { a, b } => {
            writeln!(stdout, "{:?}", score("aro-val", a, b)?).map_err(out_err)
        }
        EvalCommand::Report { pairs, out } => {
            let text = fs::read_to_string(pairs).map_err(|e| Error::io(pairs, e))?;
            let base = pairs.parent().unwrap_or(Path::new(""));
            let mut seeds: Vec<(String, Vec<f64>)> = Vec::new();
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let p: PairLine = serde_json::from_str(line).map_err(|e| Error::Manifest {
                    path: pairs.clone(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
                let s = score(&p.metric, &base.join(&p.a), &base.join(&p.b))?;
                match seeds.iter_mut().find(|(k, _)| *k == p.seed) {
                    Some((_, v)) => v.push(s),
                    None => seeds.push((p.seed, vec![s])),
                }
            }
            let per_seed: Vec<Vec<f64>> = seeds.iter().map(|(_, v)| v.clone()).collect();
            let report = aggregate_seeds(&per_seed)?;
            let doc = json!({
                "seeds": seeds.iter().map(|(k, _)| k).collect::<Vec<_>>(),
                "report": report,
            });
            match out {
                Some(p) => write_json(p, &doc),
                None => writeln!(stdout, "{doc:#}").map_err(out_err),
            }
        }
    }
}
