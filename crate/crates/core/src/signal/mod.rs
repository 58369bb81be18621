//! Waveforms, STFT analysis/synthesis, log-power-spectrum features and
//! time-frequency masks.
//!
//! Everything in this module runs in `f64`. The networks consume
//! [`LpsFeatures`] and hand back decoded log-power spectra, which are turned
//! into audio again through [`reconstruct_from_lps`] or through a
//! [`Mask`] applied to the noisy [`ComplexSpectrogram`].

mod stft;
pub mod wav;

use ndarray::{Array2, Zip};
use num_complex::Complex64;
use thiserror::Error;

pub use stft::{istft, stft, EDGE_GAIN_FLOOR};

/// Default sample rate of every waveform the pipeline touches.
pub const SAMPLE_RATE: u32 = 16_000;

/// Floor applied to power values before taking the log.
pub const LPS_FLOOR: f64 = 1e-12;

/// Default exponent of the ideal ratio mask.
pub const IRM_EXPONENT: f64 = 0.5;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("input too short: {len} samples, need at least {need}")]
    InputTooShort { len: usize, need: usize },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("empty waveform")]
    Empty,
    #[error("invalid sample rate {0}")]
    InvalidSampleRate(u32),
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("invalid STFT config: {0}")]
    InvalidConfig(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unsupported WAV format: {0}")]
    UnsupportedWav(String),
    #[error("sample rate mismatch: file has {found} Hz, expected {expected} Hz")]
    SampleRateMismatch { found: u32, expected: u32 },
    #[error("WAV I/O")]
    Wav(#[from] hound::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SignalError>;

/// Mono audio at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(SignalError::Empty);
        }
        if sample_rate == 0 {
            return Err(SignalError::InvalidSampleRate(sample_rate));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(SignalError::NonFinite(i));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// A waveform at [`SAMPLE_RATE`].
    pub fn from_samples(samples: Vec<f64>) -> Result<Self> {
        Self::new(samples, SAMPLE_RATE)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    pub fn rms(&self) -> f64 {
        (self.energy() / self.samples.len() as f64).sqrt()
    }

    /// Zero-pads or truncates to exactly `len` samples.
    pub fn fit_to_len(mut self, len: usize) -> Result<Self> {
        if len == 0 {
            return Err(SignalError::Empty);
        }
        self.samples.resize(len, 0.0);
        Ok(self)
    }
}

/// Analysis window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    /// Periodic Hann, which is constant-overlap-add at 50% overlap.
    Hann,
}

impl Window {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..len)
                .map(|n| {
                    let phase = 2.0 * std::f64::consts::PI * n as f64 / len as f64;
                    0.5 - 0.5 * phase.cos()
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct StftConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub window: Window,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            frame_len: 512,
            hop: 256,
            fft_size: 512,
            window: Window::Hann,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_len == 0 || self.hop == 0 {
            return Err(SignalError::InvalidConfig(
                "frame_len and hop must be positive".into(),
            ));
        }
        if self.hop > self.frame_len {
            return Err(SignalError::InvalidConfig(format!(
                "hop {} exceeds frame_len {}",
                self.hop, self.frame_len
            )));
        }
        if self.fft_size < self.frame_len || !self.fft_size.is_multiple_of(2) {
            return Err(SignalError::InvalidConfig(format!(
                "fft_size {} must be even and >= frame_len {}",
                self.fft_size, self.frame_len
            )));
        }
        Ok(())
    }

    /// One-sided bin count.
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Number of full frames that fit in `len` samples (no centre padding).
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.frame_len {
            0
        } else {
            1 + (len - self.frame_len) / self.hop
        }
    }

    /// Length of the waveform produced by synthesising `frames` frames.
    pub fn synthesis_len(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop + self.frame_len
        }
    }
}

/// Frames x one-sided bins of complex STFT coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    values: Array2<Complex64>,
    config: StftConfig,
}

impl ComplexSpectrogram {
    pub fn new(values: Array2<Complex64>, config: StftConfig) -> Result<Self> {
        config.validate()?;
        if values.ncols() != config.bins() {
            return Err(SignalError::InvalidConfig(format!(
                "spectrogram has {} bins, config implies {}",
                values.ncols(),
                config.bins()
            )));
        }
        if let Some(i) = values
            .iter()
            .position(|c| !(c.re.is_finite() && c.im.is_finite()))
        {
            return Err(SignalError::NonFinite(i));
        }
        Ok(Self { values, config })
    }

    pub fn values(&self) -> &Array2<Complex64> {
        &self.values
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn bins(&self) -> usize {
        self.values.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn magnitude(&self) -> Array2<f64> {
        self.values.mapv(|c| c.norm())
    }
}

/// Natural-log power spectrum, frames x bins.
#[derive(Debug, Clone, PartialEq)]
pub struct LpsFeatures {
    values: Array2<f64>,
    config: StftConfig,
}

impl LpsFeatures {
    pub fn new(values: Array2<f64>, config: StftConfig) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(SignalError::NonFinite(i));
        }
        Ok(Self { values, config })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn bins(&self) -> usize {
        self.values.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }
}

/// Real time-frequency gain in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    values: Array2<f64>,
}

impl Mask {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if let Some(i) = values
            .iter()
            .position(|v| !v.is_finite() || *v < 0.0 || *v > 1.0)
        {
            return Err(SignalError::InvalidParameter(format!(
                "mask value at {i} outside [0, 1]"
            )));
        }
        Ok(Self { values })
    }

    pub fn ones(frames: usize, bins: usize) -> Self {
        Self {
            values: Array2::ones((frames, bins)),
        }
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }
}

fn check_shape(left: (usize, usize), right: (usize, usize)) -> Result<()> {
    if left != right {
        return Err(SignalError::ShapeMismatch { left, right });
    }
    Ok(())
}

/// `ln(max(|s|^2, floor_eps))` per bin.
pub fn lps(s: &ComplexSpectrogram, floor_eps: f64) -> Result<LpsFeatures> {
    if !(floor_eps > 0.0) {
        return Err(SignalError::InvalidParameter(format!(
            "floor_eps must be positive, got {floor_eps}"
        )));
    }
    let values = s.values.mapv(|c| c.norm_sqr().max(floor_eps).ln());
    Ok(LpsFeatures {
        values,
        config: s.config,
    })
}

/// Magnitude `exp(lps / 2)` with the phase of `phase_source`, synthesised.
pub fn reconstruct_from_lps(
    speech_lps: &LpsFeatures,
    phase_source: &ComplexSpectrogram,
) -> Result<Waveform> {
    check_shape(speech_lps.shape(), phase_source.shape())?;
    let mut values = Array2::<Complex64>::zeros(phase_source.shape());
    Zip::from(&mut values)
        .and(&speech_lps.values)
        .and(&phase_source.values)
        .for_each(|out, &l, &p| {
            let mag = (0.5 * l).exp();
            let norm = p.norm();
            *out = if norm > 0.0 {
                p * (mag / norm)
            } else {
                Complex64::new(mag, 0.0)
            };
        });
    let spec = ComplexSpectrogram::new(values, phase_source.config)?;
    istft(&spec)
}

/// `(Px / (Px + Pd))^exponent` with powers recovered from the log spectra.
pub fn ideal_ratio_mask(
    speech_lps: &LpsFeatures,
    noise_lps: &LpsFeatures,
    exponent: f64,
) -> Result<Mask> {
    check_shape(speech_lps.shape(), noise_lps.shape())?;
    if !(exponent > 0.0) {
        return Err(SignalError::InvalidParameter(format!(
            "mask exponent must be positive, got {exponent}"
        )));
    }
    let mut values = Array2::<f64>::zeros(speech_lps.shape());
    Zip::from(&mut values)
        .and(&speech_lps.values)
        .and(&noise_lps.values)
        .for_each(|m, &ls, &ln| {
            // Px / (Px + Pd) = sigmoid(ls - ln); stable for large |ls - ln|.
            let ratio = 1.0 / (1.0 + (ln - ls).exp());
            *m = ratio.powf(exponent).clamp(0.0, 1.0);
        });
    Ok(Mask { values })
}

/// Scales every complex bin by the mask; phase is untouched.
pub fn apply_mask(m: &Mask, noisy: &ComplexSpectrogram) -> Result<ComplexSpectrogram> {
    check_shape(m.shape(), noisy.shape())?;
    let mut values = noisy.values.clone();
    Zip::from(&mut values)
        .and(&m.values)
        .for_each(|c, &g| *c = c.scale(g));
    Ok(ComplexSpectrogram {
        values,
        config: noisy.config,
    })
}
