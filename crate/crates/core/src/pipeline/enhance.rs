use serde::{Deserialize, Serialize};

use super::{PipelineError, Result};
use crate::models::{decode, nsvae_encode, ModelBundle, Role};
use crate::signal::{
    apply_mask, ideal_ratio_mask, istft, lps, reconstruct_from_lps, stft, LpsFeatures, Mask, StftConfig, Waveform,
    IRM_EXPONENT, LPS_FLOOR, SAMPLE_RATE,
};
use crate::tensor::Real;

/// Decoded LPS above this is treated as this, keeping `exp` finite.
const LPS_CEIL: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnhanceMode {
    /// Decoded speech LPS with the noisy phase.
    L,
    /// Ratio mask from decoded speech and noise LPS, applied to the noisy
    /// spectrogram.
    M,
}

impl std::str::FromStr for EnhanceMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "L" | "l" => Ok(EnhanceMode::L),
            "M" | "m" => Ok(EnhanceMode::M),
            other => Err(format!("unknown mode '{other}' (expected L or M)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnhanceOptions {
    pub mode: EnhanceMode,
    /// Debug hook: replace the estimated mask with ones (mode M only).
    pub force_unit_mask: bool,
}

impl From<EnhanceMode> for EnhanceOptions {
    fn from(mode: EnhanceMode) -> Self {
        Self {
            mode,
            force_unit_mask: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Enhanced {
    pub speech: Waveform,
    pub noise: Waveform,
}

/// Speech and noise LPS estimates for a noisy LPS sequence, decoded from the
/// NS-VAE posterior means.
pub fn estimate_lps<T: Real>(bundle: &ModelBundle<T>, noisy: &LpsFeatures) -> Result<(LpsFeatures, LpsFeatures)> {
    let (sx, sd) = nsvae_encode(bundle, noisy)?;
    let speech = decode(bundle, Role::CvaeDec, &sx.mean)?;
    let noise = decode(bundle, Role::NvaeDec, &sd.mean)?;
    let wrap = |m: ndarray::Array2<f64>| -> Result<LpsFeatures> {
        if m.iter().any(|v| v.is_nan()) {
            return Err(PipelineError::Model(crate::models::ModelError::InvalidInput(
                "decoder produced NaN".into(),
            )));
        }
        Ok(LpsFeatures::new(m.mapv(|v| v.min(LPS_CEIL)), *noisy.config())?)
    };
    Ok((wrap(speech.mean)?, wrap(noise.mean)?))
}

pub fn enhance<T: Real>(bundle: &ModelBundle<T>, noisy: &Waveform, mode: EnhanceMode) -> Result<Enhanced> {
    enhance_with(bundle, noisy, mode.into())
}

/// Enhances one utterance. Outputs have the input's length; samples past
/// the last full frame are zero.
pub fn enhance_with<T: Real>(bundle: &ModelBundle<T>, noisy: &Waveform, opts: EnhanceOptions) -> Result<Enhanced> {
    let cfg = StftConfig::default();
    if noisy.sample_rate() != SAMPLE_RATE {
        return Err(PipelineError::SampleRate {
            expected: SAMPLE_RATE,
            found: noisy.sample_rate(),
        });
    }
    if noisy.len() < cfg.frame_len {
        return Err(PipelineError::InputTooShort {
            samples: noisy.len(),
            need: cfg.frame_len,
        });
    }
    if bundle.dims().features != cfg.bins() {
        return Err(PipelineError::InvalidConfig(format!(
            "bundle expects {} bins, analysis gives {}",
            bundle.dims().features,
            cfg.bins()
        )));
    }
    let spec = stft(noisy, &cfg)?;
    let len = noisy.len();
    let (speech, noise) = match (opts.mode, opts.force_unit_mask) {
        (EnhanceMode::M, true) => {
            let (t, f) = spec.shape();
            let speech = istft(&apply_mask(&Mask::ones(t, f), &spec)?)?;
            let silent = Waveform::new(vec![0.0; speech.len()], speech.sample_rate())?;
            (speech, silent)
        }
        (mode, false) | (mode @ EnhanceMode::L, true) => {
            let y = lps(&spec, LPS_FLOOR)?;
            let (sx, sd) = estimate_lps(bundle, &y)?;
            match mode {
                EnhanceMode::L => (reconstruct_from_lps(&sx, &spec)?, reconstruct_from_lps(&sd, &spec)?),
                EnhanceMode::M => {
                    let m_speech = ideal_ratio_mask(&sx, &sd, IRM_EXPONENT)?;
                    let m_noise = ideal_ratio_mask(&sd, &sx, IRM_EXPONENT)?;
                    (
                        istft(&apply_mask(&m_speech, &spec)?)?,
                        istft(&apply_mask(&m_noise, &spec)?)?,
                    )
                }
            }
        }
    };
    Ok(Enhanced {
        speech: speech.fit_to_len(len)?,
        noise: noise.fit_to_len(len)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelDims;

    fn noisy(len: usize) -> Waveform {
        let s = (0..len).map(|n| 0.1 * ((n as f64) * 0.37).sin() + 0.01 * ((n * n) as f64 * 1e-3).cos()).collect();
        Waveform::from_samples(s).unwrap()
    }

    #[test]
    fn unit_mask_reproduces_the_round_trip() {
        let b = ModelBundle::<f64>::new(ModelDims::toy(), false, 1).unwrap();
        let y = noisy(8000);
        let opts = EnhanceOptions {
            mode: EnhanceMode::M,
            force_unit_mask: true,
        };
        let out = enhance_with(&b, &y, opts).unwrap();
        assert_eq!(out.speech.len(), y.len());
        let cfg = StftConfig::default();
        let end = cfg.synthesis_len(cfg.frame_count(y.len()));
        let err = y.samples()[cfg.frame_len..end - cfg.frame_len]
            .iter()
            .zip(&out.speech.samples()[cfg.frame_len..end - cfg.frame_len])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn enhancement_is_deterministic_and_sized() {
        let b = ModelBundle::<f32>::new(ModelDims::toy(), false, 2).unwrap();
        let y = noisy(6000);
        for mode in [EnhanceMode::L, EnhanceMode::M] {
            let a = enhance(&b, &y, mode).unwrap();
            let c = enhance(&b, &y, mode).unwrap();
            assert_eq!(a, c);
            assert_eq!(a.speech.len(), 6000);
            assert_eq!(a.noise.len(), 6000);
        }
    }

    #[test]
    fn mask_output_never_exceeds_noisy_magnitude() {
        let b = ModelBundle::<f64>::new(ModelDims::toy(), false, 4).unwrap();
        let y = noisy(6000);
        let cfg = StftConfig::default();
        let out = enhance(&b, &y, EnhanceMode::M).unwrap();
        let sy = stft(&y, &cfg).unwrap();
        let sx = lps(&sy, LPS_FLOOR).unwrap();
        let (a, d) = estimate_lps(&b, &sx).unwrap();
        let m = ideal_ratio_mask(&a, &d, IRM_EXPONENT).unwrap();
        let masked = apply_mask(&m, &sy).unwrap();
        for (o, n) in masked.magnitude().iter().zip(sy.magnitude().iter()) {
            assert!(*o <= *n + 1e-15);
        }
        assert!(out.speech.samples().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn short_input_is_rejected() {
        let b = ModelBundle::<f32>::new(ModelDims::toy(), false, 2).unwrap();
        assert!(matches!(
            enhance(&b, &noisy(100), EnhanceMode::M),
            Err(PipelineError::InputTooShort { samples: 100, .. })
        ));
    }
}
