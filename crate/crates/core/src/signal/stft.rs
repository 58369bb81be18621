use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;

use super::{ComplexSpectrogram, Result, SignalError, StftConfig, Waveform};

/// Smallest window sum the synthesis divides by (bounds edge gain to 10x).
pub const EDGE_GAIN_FLOOR: f64 = 0.1;

/// Windowed one-sided STFT. Analysis starts at sample 0 and only full
/// frames are produced.
pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    cfg.validate()?;
    let len = w.len();
    if len < cfg.frame_len {
        return Err(SignalError::InputTooShort {
            len,
            need: cfg.frame_len,
        });
    }
    let frames = cfg.frame_count(len);
    let bins = cfg.bins();
    let window = cfg.window.coefficients(cfg.frame_len);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.fft_size);

    let mut values = Array2::<Complex64>::zeros((frames, bins));
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_size];
    let samples = w.samples();
    for (n, mut row) in values.rows_mut().into_iter().enumerate() {
        let start = n * cfg.hop;
        buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        for (k, (&s, &win)) in samples[start..start + cfg.frame_len]
            .iter()
            .zip(&window)
            .enumerate()
        {
            buf[k] = Complex64::new(s * win, 0.0);
        }
        fft.process(&mut buf);
        row.iter_mut().zip(&buf).for_each(|(dst, src)| *dst = *src);
    }
    ComplexSpectrogram::new(values, *cfg)
}

/// Overlap-add synthesis normalised by the summed analysis window, so that
/// `istft(stft(w)) == w` wherever the window sum reaches [`EDGE_GAIN_FLOOR`].
/// Near the two ends the window sum falls below the floor and the output is
/// attenuated rather than amplified.
pub fn istft(s: &ComplexSpectrogram) -> Result<Waveform> {
    let cfg = s.config();
    let frames = s.frames();
    if frames == 0 {
        return Err(SignalError::Empty);
    }
    let out_len = cfg.synthesis_len(frames);
    let window = cfg.window.coefficients(cfg.frame_len);
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(cfg.fft_size);
    let n_fft = cfg.fft_size;
    let half = n_fft / 2;

    let mut out = vec![0.0; out_len];
    let mut norm = vec![0.0; out_len];
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for (n, row) in s.values().rows().into_iter().enumerate() {
        for k in 0..=half {
            buf[k] = row[k];
        }
        // DC and Nyquist bins must be real for a real signal.
        buf[0].im = 0.0;
        buf[half].im = 0.0;
        for k in 1..half {
            buf[n_fft - k] = row[k].conj();
        }
        ifft.process(&mut buf);
        let start = n * cfg.hop;
        for k in 0..cfg.frame_len {
            let v = buf[k].re / n_fft as f64;
            out[start + k] += v;
            norm[start + k] += window[k];
        }
    }
    for (o, &wsum) in out.iter_mut().zip(&norm) {
        *o /= wsum.max(EDGE_GAIN_FLOOR);
    }
    Waveform::new(out, super::SAMPLE_RATE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn chirp(len: usize) -> Vec<f64> {
        (0..len)
            .map(|n| {
                let t = n as f64 / 16000.0;
                0.3 * (2.0 * PI * (200.0 + 900.0 * t) * t).sin() + 0.05 * ((n * 7919 % 113) as f64 / 113.0 - 0.5)
            })
            .collect()
    }

    #[test]
    fn zero_waveform_gives_zero_spectrogram() {
        let w = Waveform::from_samples(vec![0.0; 1024]).unwrap();
        let s = stft(&w, &StftConfig::default()).unwrap();
        assert_eq!(s.shape(), (3, 257));
        assert!(s.values().iter().all(|c| c.norm() == 0.0));
        let back = istft(&s).unwrap();
        assert!(back.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_short_is_rejected() {
        let w = Waveform::from_samples(vec![0.1; 511]).unwrap();
        assert!(matches!(
            stft(&w, &StftConfig::default()),
            Err(SignalError::InputTooShort { len: 511, need: 512 })
        ));
    }

    #[test]
    fn sinusoid_at_bin_centre_concentrates_energy() {
        // 1 kHz at 16 kHz with a 512-point transform sits on bin 32.
        let x: Vec<f64> = (0..4096)
            .map(|n| (2.0 * PI * 1000.0 * n as f64 / 16000.0).sin())
            .collect();
        let s = stft(&Waveform::from_samples(x).unwrap(), &StftConfig::default()).unwrap();
        for row in s.values().rows() {
            let total: f64 = row.iter().map(|c| c.norm_sqr()).sum();
            let near: f64 = row.iter().skip(31).take(3).map(|c| c.norm_sqr()).sum();
            assert!(near / total >= 0.99, "ratio {}", near / total);
        }
    }

    #[test]
    fn round_trip_interior() {
        let x = chirp(8000);
        let cfg = StftConfig::default();
        let w = Waveform::from_samples(x.clone()).unwrap();
        let back = istft(&stft(&w, &cfg).unwrap()).unwrap();
        let end = back.len().min(x.len()) - cfg.frame_len;
        let err = (cfg.frame_len..end)
            .map(|i| (back.samples()[i] - x[i]).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "max error {err}");
    }

    #[test]
    fn parseval_per_frame() {
        let x = chirp(3000);
        let cfg = StftConfig::default();
        let s = stft(&Waveform::from_samples(x.clone()).unwrap(), &cfg).unwrap();
        let win = cfg.window.coefficients(cfg.frame_len);
        for (n, row) in s.values().rows().into_iter().enumerate() {
            let time: f64 = (0..cfg.frame_len)
                .map(|k| (x[n * cfg.hop + k] * win[k]).powi(2))
                .sum();
            let half = cfg.fft_size / 2;
            let mut freq = row[0].norm_sqr() + row[half].norm_sqr();
            freq += 2.0 * (1..half).map(|k| row[k].norm_sqr()).sum::<f64>();
            freq /= cfg.fft_size as f64;
            assert!((freq - time).abs() <= 1e-6 * time);
        }
    }

    #[test]
    fn single_bin_synthesises_a_tone() {
        let cfg = StftConfig::default();
        let mut v = Array2::<Complex64>::zeros((12, 257));
        for n in 0..12 {
            // Phase advances by 2*pi*32*hop/512 = 16*pi per hop, i.e. coherent.
            v[[n, 32]] = Complex64::new(100.0, 0.0);
        }
        let w = istft(&ComplexSpectrogram::new(v, cfg).unwrap()).unwrap();
        // Inverse-DFT oracle: project the interior onto the 1 kHz tone.
        let xs = &w.samples()[512..w.len() - 512];
        let (mut c, mut s) = (0.0, 0.0);
        for (i, &x) in xs.iter().enumerate() {
            let ph = 2.0 * PI * 1000.0 * (i + 512) as f64 / 16000.0;
            c += x * ph.cos();
            s += x * ph.sin();
        }
        let tone_energy = 2.0 * (c * c + s * s) / xs.len() as f64;
        let total: f64 = xs.iter().map(|x| x * x).sum();
        assert!(tone_energy / total >= 0.99, "ratio {}", tone_energy / total);
    }
}
