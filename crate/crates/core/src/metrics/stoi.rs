//! Short-time objective intelligibility (Taal et al., 2011).

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::{MetricError, Result};
use crate::signal::Waveform;

const FS: u32 = 10_000;
const FRAME: usize = 256;
const HOP: usize = FRAME / 2;
const NFFT: usize = 512;
const BANDS: usize = 15;
const MIN_FREQ: f64 = 150.0;
const SEGMENT: usize = 30;
/// Lower signal-to-distortion bound in dB.
const BETA_DB: f64 = -15.0;
const DYN_RANGE_DB: f64 = 40.0;
const EPS: f64 = f64::EPSILON;

/// Half-length of the resampling filter in input-rate zero crossings.
pub const RESAMPLE_HALF_WIDTH: usize = 10;
const KAISER_BETA: f64 = 5.0;

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Modified Bessel function of the first kind, order 0.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..64 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Rational resampling by `up / down` with a Kaiser-windowed sinc filter,
/// aligned so that output sample `m` sits at input time `m * down / up`.
pub fn resample(x: &[f64], from: u32, to: u32) -> Vec<f64> {
    if from == to {
        return x.to_vec();
    }
    let g = gcd(from, to);
    let (up, down) = ((to / g) as i64, (from / g) as i64);
    let rate = up.max(down);
    let cutoff = 0.5 / rate as f64;
    let half = RESAMPLE_HALF_WIDTH as i64 * rate;
    let norm = bessel_i0(KAISER_BETA);
    let taps: Vec<f64> = (-half..=half)
        .map(|t| {
            let t = t as f64;
            let arg = 2.0 * cutoff * t;
            let sinc = if arg == 0.0 { 1.0 } else { (PI * arg).sin() / (PI * arg) };
            let r = t / half as f64;
            let w = bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / norm;
            up as f64 * 2.0 * cutoff * sinc * w
        })
        .collect();
    let n_out = (x.len() as i64 * up + down - 1) / down;
    (0..n_out)
        .map(|m| {
            let p = m * down;
            // Input samples n with |p - n * up| <= half.
            let lo = ((p - half).max(0) + up - 1) / up;
            let hi = ((p + half) / up).min(x.len() as i64 - 1);
            (lo..=hi)
                .map(|n| x[n as usize] * taps[(p - n * up + half) as usize])
                .sum()
        })
        .collect()
}

/// `np.hanning(n + 2)[1:-1]`.
fn hann_inner(n: usize) -> Vec<f64> {
    (1..=n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n + 1) as f64).cos())
        .collect()
}

fn frame_starts(len: usize) -> Vec<usize> {
    if len <= FRAME {
        return Vec::new();
    }
    (0..len - FRAME).step_by(HOP).collect()
}

/// Drops frames of both signals where the reference is more than 40 dB
/// below its loudest frame, then overlap-adds the kept windowed frames.
fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w = hann_inner(FRAME);
    let starts = frame_starts(x.len());
    let energy: Vec<f64> = starts
        .iter()
        .map(|&s| {
            let e: f64 = (0..FRAME).map(|i| (w[i] * x[s + i]).powi(2)).sum();
            20.0 * (e.sqrt() + EPS).log10()
        })
        .collect();
    let peak = energy.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let kept: Vec<usize> = starts
        .iter()
        .zip(&energy)
        .filter(|(_, &e)| e > peak - DYN_RANGE_DB)
        .map(|(&s, _)| s)
        .collect();
    let out_len = if kept.is_empty() { 0 } else { (kept.len() - 1) * HOP + FRAME };
    let mut xs = vec![0.0; out_len];
    let mut ys = vec![0.0; out_len];
    for (j, &s) in kept.iter().enumerate() {
        for i in 0..FRAME {
            xs[j * HOP + i] += w[i] * x[s + i];
            ys[j * HOP + i] += w[i] * y[s + i];
        }
    }
    (xs, ys)
}

/// Magnitude-squared one-sided STFT, `frames x (NFFT/2 + 1)`.
fn power_stft(x: &[f64]) -> Vec<Vec<f64>> {
    let w = hann_inner(FRAME);
    let fft = FftPlanner::new().plan_fft_forward(NFFT);
    frame_starts(x.len())
        .into_iter()
        .map(|s| {
            let mut buf = vec![Complex64::new(0.0, 0.0); NFFT];
            for i in 0..FRAME {
                buf[i].re = w[i] * x[s + i];
            }
            fft.process(&mut buf);
            buf[..=NFFT / 2].iter().map(|c| c.norm_sqr()).collect()
        })
        .collect()
}

/// Bin ranges `[lo, hi)` of the one-third-octave bands.
fn third_octave_bands() -> Vec<(usize, usize)> {
    let bins = NFFT / 2 + 1;
    let freqs: Vec<f64> = (0..bins).map(|k| k as f64 * FS as f64 / NFFT as f64).collect();
    let nearest = |f: f64| {
        (0..bins)
            .min_by(|&a, &b| (freqs[a] - f).abs().total_cmp(&(freqs[b] - f).abs()))
            .expect("non-empty bins")
    };
    (0..BANDS)
        .map(|k| {
            let lo = MIN_FREQ * 2f64.powf((2 * k) as f64 / 6.0 - 1.0 / 6.0);
            let hi = MIN_FREQ * 2f64.powf((2 * k) as f64 / 6.0 + 1.0 / 6.0);
            (nearest(lo), nearest(hi))
        })
        .collect()
}

/// Band envelopes, `BANDS x frames`.
fn band_envelopes(spec: &[Vec<f64>], bands: &[(usize, usize)]) -> Vec<Vec<f64>> {
    bands
        .iter()
        .map(|&(lo, hi)| spec.iter().map(|f| f[lo..hi].iter().sum::<f64>().sqrt()).collect())
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// STOI of `estimate` against `reference`, in `[0, 1]`.
///
/// Negative correlations, which only occur for estimates unrelated to the
/// reference, are reported as 0.
pub fn stoi(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(MetricError::LengthMismatch(reference.len(), estimate.len()));
    }
    if reference.sample_rate() != estimate.sample_rate() {
        return Err(MetricError::SampleRateMismatch);
    }
    let x = resample(reference.samples(), reference.sample_rate(), FS);
    let y = resample(estimate.samples(), estimate.sample_rate(), FS);
    let (x, y) = remove_silent_frames(&x, &y);
    let bands = third_octave_bands();
    let xb = band_envelopes(&power_stft(&x), &bands);
    let yb = band_envelopes(&power_stft(&y), &bands);
    let frames = xb[0].len();
    if frames < SEGMENT {
        return Err(MetricError::TooShort {
            frames,
            need: SEGMENT,
        });
    }
    let clip = 1.0 + 10f64.powf(-BETA_DB / 20.0);
    let mut total = 0.0;
    let mut count = 0usize;
    for m in SEGMENT..=frames {
        for j in 0..BANDS {
            let xs = &xb[j][m - SEGMENT..m];
            let ys = &yb[j][m - SEGMENT..m];
            let scale = norm(xs) / (norm(ys) + EPS);
            let yc: Vec<f64> = ys
                .iter()
                .zip(xs)
                .map(|(y, x)| (y * scale).min(x * clip))
                .collect();
            let mx = xs.iter().sum::<f64>() / SEGMENT as f64;
            let my = yc.iter().sum::<f64>() / SEGMENT as f64;
            let xc: Vec<f64> = xs.iter().map(|v| v - mx).collect();
            let yc: Vec<f64> = yc.iter().map(|v| v - my).collect();
            let dot: f64 = xc.iter().zip(&yc).map(|(a, b)| a * b).sum();
            total += dot / ((norm(&xc) + EPS) * (norm(&yc) + EPS));
            count += 1;
        }
    }
    Ok((total / count as f64).clamp(0.0, 1.0))
}
