//! Deterministic stand-ins for recorded speech and noise.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{DataError, Result};
use crate::signal::{Waveform, SAMPLE_RATE};

/// RMS every synthetic signal is normalised to.
pub const TARGET_RMS: f64 = 0.05;

const MIN_DURATION_S: f64 = 0.5;

/// Vowel-like formant triples in Hz.
const VOWELS: [[f64; 3]; 6] = [
    [730.0, 1090.0, 2440.0],
    [530.0, 1840.0, 2480.0],
    [270.0, 2290.0, 3010.0],
    [570.0, 840.0, 2410.0],
    [300.0, 870.0, 2240.0],
    [640.0, 1190.0, 2390.0],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    White,
    Pink,
    /// Several overlapping synthetic talkers.
    Babble,
}

impl NoiseKind {
    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::White => "white",
            NoiseKind::Pink => "pink",
            NoiseKind::Babble => "babble",
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseKind {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "white" => Ok(NoiseKind::White),
            "pink" => Ok(NoiseKind::Pink),
            "babble" => Ok(NoiseKind::Babble),
            other => Err(DataError::UnknownNoiseKind(other.to_string())),
        }
    }
}

fn sample_count(duration_s: f64) -> Result<usize> {
    if !(duration_s.is_finite() && duration_s >= MIN_DURATION_S) {
        return Err(DataError::InvalidDuration(duration_s));
    }
    Ok((duration_s * SAMPLE_RATE as f64).round() as usize)
}

fn normalize_rms(mut x: Vec<f64>) -> Result<Waveform> {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
    if rms > 0.0 {
        let k = TARGET_RMS / rms;
        x.iter_mut().for_each(|v| *v *= k);
    }
    Ok(Waveform::new(x, SAMPLE_RATE)?)
}

/// Two-pole resonator `y[n] = b x[n] + a1 y[n-1] + a2 y[n-2]` with unit
/// gain at its centre frequency.
#[derive(Debug, Clone, Copy, Default)]
struct Resonator {
    b: f64,
    a1: f64,
    a2: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn tune(&mut self, freq: f64, bandwidth: f64) {
        let fs = SAMPLE_RATE as f64;
        let r = (-PI * bandwidth / fs).exp();
        let theta = 2.0 * PI * freq / fs;
        self.a1 = 2.0 * r * theta.cos();
        self.a2 = -r * r;
        // |1 - a1 e^{-jw} - a2 e^{-2jw}| at w = theta.
        let re = 1.0 - self.a1 * theta.cos() - self.a2 * (2.0 * theta).cos();
        let im = self.a1 * theta.sin() + self.a2 * (2.0 * theta).sin();
        self.b = (re * re + im * im).sqrt();
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.b * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Voiced syllables separated by pauses.
///
/// Each syllable has its own vowel formants, a linear pitch glide inside
/// 80..300 Hz and a raised-sine envelope whose length puts the syllable rate
/// between 2 and 8 Hz. Pauses take 5-40% of the signal and carry a faint
/// white recording floor [`SPEECH_FLOOR_DB`] below the speech level.
pub fn synthesize_speech(seed: u64, duration_s: f64) -> Result<Waveform> {
    let n = sample_count(duration_s)?;
    let voiced = normalize_rms(voiced_syllables(seed, n))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let level = TARGET_RMS * 10f64.powf(SPEECH_FLOOR_DB / 20.0);
    let out = voiced
        .samples()
        .iter()
        .map(|v| v + level * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Ok(Waveform::new(out, SAMPLE_RATE)?)
}

/// Level of the recording floor under synthetic speech, in dB re the speech
/// RMS. Without it pauses are digitally silent, which no microphone produces.
pub const SPEECH_FLOOR_DB: f64 = -60.0;

fn voiced_syllables(seed: u64, n: usize) -> Vec<f64> {
    let fs = SAMPLE_RATE as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base_f0: f64 = rng.random_range(100.0..220.0);
    let target_silence = rng.random_range(0.12..0.3);

    let mut out = vec![0.0; n];
    let mut formants = [Resonator::default(); 3];
    let mut phase = 0.0f64;
    let mut pos = (rng.random_range(0.02..0.08) * fs) as usize;
    while pos < n {
        let rate = rng.random_range(2.5..7.5);
        let len = ((fs / rate) as usize).min(n - pos);
        let vowel = VOWELS[rng.random_range(0..VOWELS.len())];
        for (res, f) in formants.iter_mut().zip(vowel) {
            let f = f * rng.random_range(0.9..1.1);
            res.tune(f, rng.random_range(70.0..130.0) + 0.05 * f);
        }
        let f_start = (base_f0 * rng.random_range(0.8..1.25)).clamp(80.0, 300.0);
        let f_end = (base_f0 * rng.random_range(0.8..1.25)).clamp(80.0, 300.0);
        let gain = rng.random_range(0.6..1.0);
        for i in 0..len {
            let frac = i as f64 / len as f64;
            let f0 = f_start + (f_end - f_start) * frac;
            phase = (phase + 2.0 * PI * f0 / fs) % (2.0 * PI);
            let harmonics = (3800.0 / f0) as usize;
            let source: f64 = (1..=harmonics).map(|k| (k as f64 * phase).sin() / k as f64).sum();
            let env = gain * (PI * frac).sin().powi(2);
            let voiced = formants.iter_mut().map(|r| r.step(source)).sum::<f64>();
            out[pos + i] = env * voiced;
        }
        pos += len;
        // Pause length drawn so the expected silence share hits the target.
        let mean_gap = len as f64 * target_silence / (1.0 - target_silence);
        pos += (mean_gap * rng.random_range(0.5..1.5)) as usize;
    }
    out
}

/// Noise of the given kind at [`TARGET_RMS`].
pub fn synthesize_noise(seed: u64, duration_s: f64, kind: NoiseKind) -> Result<Waveform> {
    let n = sample_count(duration_s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = match kind {
        NoiseKind::White => (0..n).map(|_| rng.sample(StandardNormal)).collect(),
        NoiseKind::Pink => pink(n, &mut rng),
        NoiseKind::Babble => {
            let talkers = rng.random_range(4..7);
            let mut acc = vec![0.0; n];
            for _ in 0..talkers {
                let s = synthesize_speech(rng.random(), duration_s)?;
                acc.iter_mut().zip(s.samples()).for_each(|(a, v)| *a += v);
            }
            acc
        }
    };
    normalize_rms(samples)
}

/// White Gaussian noise shaped by `1/sqrt(f)` in the frequency domain.
fn pink(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut buf: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(rng.sample(StandardNormal), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    buf[0] = Complex64::new(0.0, 0.0);
    for k in 1..n {
        let f = k.min(n - k) as f64;
        buf[k] /= f.sqrt();
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}
