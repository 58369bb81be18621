//! Synthetic corpora: speech and noise generators, exact-SNR mixing, and
//! on-disk corpora described by a JSON-lines manifest.

mod synth;

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::wav::{quantize, read_wav, write_wav};
use crate::signal::{SignalError, Waveform, SAMPLE_RATE};

pub use synth::{synthesize_noise, synthesize_speech, NoiseKind, TARGET_RMS};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("unknown noise kind '{0}'")]
    UnknownNoiseKind(String),
    #[error("duration must be at least 0.5 s, got {0}")]
    InvalidDuration(f64),
    #[error("clean signal is silent")]
    SilentClean,
    #[error("noise is silent over the active speech region")]
    SilentNoise,
    #[error("SNR must be a number, got {0}")]
    InvalidSnr(f64),
    #[error("invalid corpus config: {0}")]
    InvalidConfig(String),
    #[error("refusing to overwrite existing {0}")]
    PathCollision(PathBuf),
    #[error("manifest line {line}: {source}")]
    Manifest {
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// SNR range mixtures are clamped to.
pub const SNR_RANGE_DB: (f64, f64) = (-10.0, 15.0);

/// Frames whose clean energy is below this fraction of the loudest frame
/// are left out of SNR measurement (-40 dB).
const ACTIVE_FLOOR: f64 = 1e-4;
const ACTIVE_FRAME: usize = 512;
const ACTIVE_HOP: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    pub clean_id: String,
    pub noise_id: String,
    pub noise_kind: NoiseKind,
    /// SNR actually applied, after clamping.
    pub snr_db: f64,
    /// Gain applied to the noise.
    pub gain: f64,
    pub seed: u64,
}

/// Sample mask of the frames where `clean` is active.
fn active_samples(clean: &[f64]) -> Vec<bool> {
    let n = clean.len();
    let starts: Vec<usize> = if n <= ACTIVE_FRAME {
        vec![0]
    } else {
        (0..=(n - ACTIVE_FRAME) / ACTIVE_HOP).map(|i| i * ACTIVE_HOP).collect()
    };
    let energy: Vec<f64> = starts
        .iter()
        .map(|&s| clean[s..(s + ACTIVE_FRAME).min(n)].iter().map(|v| v * v).sum())
        .collect();
    let peak = energy.iter().copied().fold(0.0, f64::max);
    let mut mask = vec![false; n];
    for (&s, &e) in starts.iter().zip(&energy) {
        if e > peak * ACTIVE_FLOOR {
            mask[s..(s + ACTIVE_FRAME).min(n)].iter_mut().for_each(|m| *m = true);
        }
    }
    mask
}

fn masked_power(x: &[f64], mask: &[bool]) -> f64 {
    x.iter().zip(mask).filter(|(_, &m)| m).map(|(v, _)| v * v).sum()
}

/// SNR of `clean` against `noise` over the active-clean region, in dB.
pub fn measured_snr_db(clean: &Waveform, noise: &Waveform) -> Result<f64> {
    let mask = active_samples(clean.samples());
    let pc = masked_power(clean.samples(), &mask);
    let pn = masked_power(noise.samples(), &mask);
    if pc == 0.0 {
        return Err(DataError::SilentClean);
    }
    if pn == 0.0 {
        return Err(DataError::SilentNoise);
    }
    Ok(10.0 * (pc / pn).log10())
}

/// Crops or loops `noise` to `len` samples.
pub fn fit_noise(noise: &Waveform, len: usize) -> Result<Waveform> {
    let s = noise.samples();
    Ok(Waveform::new(
        (0..len).map(|i| s[i % s.len()]).collect(),
        noise.sample_rate(),
    )?)
}

/// Result of [`mix_at_snr`]. `noisy = clean + scaled_noise` sample by sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub noisy: Waveform,
    pub scaled_noise: Waveform,
    pub gain: f64,
    pub snr_db: f64,
}

/// Scales `noise` so the mixture has the requested SNR over active speech.
/// The SNR is clamped to [`SNR_RANGE_DB`].
pub fn mix_at_snr(clean: &Waveform, noise: &Waveform, snr_db: f64) -> Result<Mixture> {
    if snr_db.is_nan() {
        return Err(DataError::InvalidSnr(snr_db));
    }
    let snr_db = snr_db.clamp(SNR_RANGE_DB.0, SNR_RANGE_DB.1);
    let noise = fit_noise(noise, clean.len())?;
    let mask = active_samples(clean.samples());
    let pc = masked_power(clean.samples(), &mask);
    if pc == 0.0 {
        return Err(DataError::SilentClean);
    }
    let pn = masked_power(noise.samples(), &mask);
    if pn == 0.0 {
        return Err(DataError::SilentNoise);
    }
    let gain = (pc / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
    let scaled: Vec<f64> = noise.samples().iter().map(|v| gain * v).collect();
    let noisy = clean.samples().iter().zip(&scaled).map(|(c, d)| c + d).collect();
    Ok(Mixture {
        noisy: Waveform::new(noisy, clean.sample_rate())?,
        scaled_noise: Waveform::new(scaled, clean.sample_rate())?,
        gain,
        snr_db,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub duration_s: f64,
    /// Uniform SNR range for the train and validation splits.
    pub snr_min_db: f64,
    pub snr_max_db: f64,
    /// Fixed SNR for the test split; `None` draws from the range.
    pub test_snr_db: Option<f64>,
    pub noise_kinds: Vec<NoiseKind>,
    pub seed: u64,
}

impl CorpusConfig {
    /// 200 / 40 / 20 utterances of 2 s, white and pink noise, test at 0 dB.
    pub fn toy() -> Self {
        Self {
            train: 200,
            val: 40,
            test: 20,
            duration_s: 2.0,
            snr_min_db: SNR_RANGE_DB.0,
            snr_max_db: SNR_RANGE_DB.1,
            test_snr_db: Some(0.0),
            noise_kinds: vec![NoiseKind::White, NoiseKind::Pink],
            seed: 1,
        }
    }

    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.train + self.val + self.test == 0 {
            return Err(DataError::InvalidConfig("corpus has no utterances".into()));
        }
        if !(self.duration_s.is_finite() && self.duration_s >= 0.5) {
            return Err(DataError::InvalidDuration(self.duration_s));
        }
        if !(self.snr_min_db <= self.snr_max_db) {
            return Err(DataError::InvalidConfig("snr_min_db > snr_max_db".into()));
        }
        if self.noise_kinds.is_empty() {
            return Err(DataError::InvalidConfig("no noise kinds".into()));
        }
        Ok(())
    }
}

/// Seed for utterance `index` of `split`, distinct for every
/// `(split, index, stream)` under one master seed.
pub fn derive_seed(master: u64, split: Split, index: usize, stream: u64) -> u64 {
    let tag = ((split as u64 + 1) << 56) | (stream << 48) | index as u64;
    master.rotate_left(17) ^ tag
}

const STREAM_SPEECH: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_MIX: u64 = 3;

/// One line of the manifest. Paths are relative to the manifest directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub split: Split,
    pub noisy: PathBuf,
    pub clean: PathBuf,
    pub noise: PathBuf,
    pub mix: MixSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// An utterance with its three aligned components.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub clean: Waveform,
    pub noise: Waveform,
    pub noisy: Waveform,
    pub mix: MixSpec,
}

impl Manifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let reader = BufReader::new(fs::File::open(path)?);
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec = serde_json::from_str(&line).map_err(|source| DataError::Manifest { line: i + 1, source })?;
            records.push(rec);
        }
        Ok(Self { root, records })
    }

    /// Reads the WAV files of one record.
    pub fn read(&self, rec: &ManifestRecord) -> Result<Utterance> {
        let rate = Some(SAMPLE_RATE);
        Ok(Utterance {
            id: rec.id.clone(),
            clean: read_wav(self.root.join(&rec.clean), rate)?,
            noise: read_wav(self.root.join(&rec.noise), rate)?,
            noisy: read_wav(self.root.join(&rec.noisy), rate)?,
            mix: rec.mix.clone(),
        })
    }

    pub fn read_split(&self, split: Split) -> Result<Vec<Utterance>> {
        self.split(split).map(|r| self.read(r)).collect()
    }
}

/// Generates one utterance in memory, rounded to 16-bit codes so that the
/// in-memory and on-disk versions agree and `noisy = clean + noise` holds
/// exactly in the stored files.
pub fn generate_utterance(cfg: &CorpusConfig, split: Split, index: usize) -> Result<Utterance> {
    let speech_seed = derive_seed(cfg.seed, split, index, STREAM_SPEECH);
    let noise_seed = derive_seed(cfg.seed, split, index, STREAM_NOISE);
    let mix_seed = derive_seed(cfg.seed, split, index, STREAM_MIX);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed);
    let kind = cfg.noise_kinds[rng.random_range(0..cfg.noise_kinds.len())];
    let snr = match (split, cfg.test_snr_db) {
        (Split::Test, Some(s)) => s,
        _ => rng.random_range(cfg.snr_min_db..=cfg.snr_max_db),
    };
    let clean = round_to_pcm(&synthesize_speech(speech_seed, cfg.duration_s)?)?;
    let noise = synthesize_noise(noise_seed, cfg.duration_s, kind)?;
    let mix = mix_at_snr(&clean, &noise, snr)?;
    let scaled = round_to_pcm(&mix.scaled_noise)?;
    let noisy: Vec<f64> = clean
        .samples()
        .iter()
        .zip(scaled.samples())
        .map(|(c, d)| (c + d).clamp(-1.0, 32767.0 / 32768.0))
        .collect();
    let id = format!("{}_{index:05}", split.name());
    Ok(Utterance {
        clean,
        noise: scaled,
        noisy: Waveform::new(noisy, SAMPLE_RATE)?,
        mix: MixSpec {
            clean_id: format!("speech_{speech_seed:016x}"),
            noise_id: format!("{kind}_{noise_seed:016x}"),
            noise_kind: kind,
            snr_db: mix.snr_db,
            gain: mix.gain,
            seed: mix_seed,
        },
        id,
    })
}

fn round_to_pcm(w: &Waveform) -> Result<Waveform> {
    let s = w.samples().iter().map(|&v| quantize(v) as f64 / 32768.0).collect();
    Ok(Waveform::new(s, w.sample_rate())?)
}

/// Writes every utterance of `cfg` under `out_dir` and the manifest next to
/// them. Refuses to overwrite an existing manifest.
pub fn build_corpus(cfg: &CorpusConfig, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    cfg.validate()?;
    let root = out_dir.as_ref().to_path_buf();
    let manifest_path = root.join(MANIFEST_FILE);
    if manifest_path.exists() {
        return Err(DataError::PathCollision(manifest_path));
    }
    let mut records = Vec::new();
    for split in Split::ALL {
        let dir = root.join(split.name());
        fs::create_dir_all(&dir)?;
        for index in 0..cfg.count(split) {
            let u = generate_utterance(cfg, split, index)?;
            let rel = |part: &str| PathBuf::from(split.name()).join(format!("{}_{part}.wav", u.id));
            let rec = ManifestRecord {
                id: u.id.clone(),
                split,
                noisy: rel("noisy"),
                clean: rel("clean"),
                noise: rel("noise"),
                mix: u.mix.clone(),
            };
            for (path, w) in [(&rec.noisy, &u.noisy), (&rec.clean, &u.clean), (&rec.noise, &u.noise)] {
                let full = root.join(path);
                if full.exists() {
                    return Err(DataError::PathCollision(full));
                }
                write_wav(full, w)?;
            }
            records.push(rec);
        }
    }
    let tmp = root.join(format!("{MANIFEST_FILE}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        for r in &records {
            let line = serde_json::to_string(r).map_err(|source| DataError::Manifest { line: 0, source })?;
            writeln!(f, "{line}")?;
        }
        f.sync_all()?;
    }
    fs::rename(&tmp, &manifest_path)?;
    Ok(Manifest { root, records })
}
