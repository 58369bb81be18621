//! 16-bit PCM mono WAV I/O.

use std::path::Path;

use super::{Result, SignalError, Waveform};

/// Reads a mono 16-bit PCM file, scaling samples by 1/32768.
///
/// When `expected_rate` is set, a different file rate is an error.
pub fn read_wav(path: impl AsRef<Path>, expected_rate: Option<u32>) -> Result<Waveform> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(SignalError::UnsupportedWav(format!(
            "{} channels, only mono is supported",
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(SignalError::UnsupportedWav(format!(
            "{:?} {}-bit, only 16-bit PCM is supported",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    if let Some(expected) = expected_rate {
        if spec.sample_rate != expected {
            return Err(SignalError::SampleRateMismatch {
                found: spec.sample_rate,
                expected,
            });
        }
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Waveform::new(samples, spec.sample_rate)
}

/// Writes 16-bit PCM, clamping to the representable range.
pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in w.samples() {
        writer.write_sample(quantize(s))?;
    }
    writer.finalize()?;
    Ok(())
}

/// The 16-bit code a sample is stored as.
pub fn quantize(s: f64) -> i16 {
    (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_quantised() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let w = Waveform::from_samples(vec![0.0, 0.5, -0.25, 0.999, -1.0, 1.5]).unwrap();
        write_wav(&path, &w).unwrap();
        let r = read_wav(&path, Some(16000)).unwrap();
        assert_eq!(r.sample_rate(), 16000);
        let expected = [0.0, 0.5, -0.25, 32735.0 / 32768.0, -1.0, 32767.0 / 32768.0];
        assert_eq!(r.samples(), &expected);
        assert!(matches!(
            read_wav(&path, Some(8000)),
            Err(SignalError::SampleRateMismatch { found: 16000, expected: 8000 })
        ));
    }

    #[test]
    fn stereo_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("st.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut wr = hound::WavWriter::create(&path, spec).unwrap();
        for _ in 0..8 {
            wr.write_sample(0i16).unwrap();
        }
        wr.finalize().unwrap();
        assert!(matches!(
            read_wav(&path, None),
            Err(SignalError::UnsupportedWav(_))
        ));
    }
}
