use ndarray::{s, Array2};

use super::{PipelineError, Result};
use crate::data::Utterance;
use crate::models::{Domain, FeatureNorm};
use crate::signal::{lps, stft, StftConfig, Waveform, LPS_FLOOR};
use crate::tensor::Real;

/// LPS of a waveform under the default analysis settings.
pub fn lps_of(w: &Waveform) -> Result<Array2<f64>> {
    let spec = stft(w, &StftConfig::default())?;
    Ok(lps(&spec, LPS_FLOOR)?.into_values())
}

/// One fixed-length training window. A domain is `None` when the corpus did
/// not provide that signal.
#[derive(Debug, Clone)]
pub struct Segment {
    feats: [Option<Array2<f32>>; 3],
}

impl Segment {
    pub fn get(&self, d: Domain) -> Result<&Array2<f32>> {
        self.feats[d as usize]
            .as_ref()
            .ok_or(PipelineError::Unpaired(d.name()))
    }
}

/// Fixed-length LPS windows cut from a set of utterances.
#[derive(Debug, Clone)]
pub struct SegmentSet {
    frames: usize,
    features: usize,
    segments: Vec<Segment>,
}

impl SegmentSet {
    /// Cuts each utterance into consecutive `frames`-long windows and drops
    /// the last partial one.
    pub fn from_utterances(utts: &[Utterance], frames: usize) -> Result<Self> {
        let mut set = Self::empty(frames);
        for u in utts {
            let parts = [lps_of(&u.clean)?, lps_of(&u.noise)?, lps_of(&u.noisy)?];
            set.push_windows(parts.map(Some))?;
        }
        Ok(set)
    }

    /// A set holding a single domain, e.g. clean speech only.
    pub fn from_waveforms(domain: Domain, waves: &[Waveform], frames: usize) -> Result<Self> {
        let mut set = Self::empty(frames);
        for w in waves {
            let mut parts: [Option<Array2<f64>>; 3] = [None, None, None];
            parts[domain as usize] = Some(lps_of(w)?);
            set.push_windows(parts)?;
        }
        Ok(set)
    }

    fn empty(frames: usize) -> Self {
        Self {
            frames,
            features: StftConfig::default().bins(),
            segments: Vec::new(),
        }
    }

    fn push_windows(&mut self, parts: [Option<Array2<f64>>; 3]) -> Result<()> {
        if self.frames == 0 {
            return Err(PipelineError::InvalidConfig("segment_frames must be >= 1".into()));
        }
        let total = parts.iter().flatten().map(|p| p.nrows()).min().unwrap_or(0);
        for k in 0..total / self.frames {
            let rows = s![k * self.frames..(k + 1) * self.frames, ..];
            let feats = std::array::from_fn(|i| parts[i].as_ref().map(|p| p.slice(rows).mapv(|v| v as f32)));
            self.segments.push(Segment { feats });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn segment(&self, i: usize) -> &Segment {
        &self.segments[i]
    }

    pub fn has(&self, d: Domain) -> bool {
        !self.segments.is_empty() && self.segments.iter().all(|s| s.feats[d as usize].is_some())
    }

    /// Errors unless every segment carries all of `domains`.
    pub fn require(&self, domains: &[Domain]) -> Result<()> {
        if self.segments.is_empty() {
            return Err(PipelineError::EmptyCorpus);
        }
        match domains.iter().find(|d| !self.has(**d)) {
            Some(d) => Err(PipelineError::Unpaired(d.name())),
            None => Ok(()),
        }
    }

    /// Per-bin mean and standard deviation of one domain.
    pub fn fit_norm<T: Real>(&self, d: Domain) -> Result<FeatureNorm<T>> {
        self.require(&[d])?;
        let f = self.features;
        let mut sum = vec![0.0f64; f];
        let mut sq = vec![0.0f64; f];
        let mut n = 0usize;
        for seg in &self.segments {
            for row in seg.get(d)?.rows() {
                for (j, &v) in row.iter().enumerate() {
                    let v = v as f64;
                    sum[j] += v;
                    sq[j] += v * v;
                }
                n += 1;
            }
        }
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let std: Vec<f64> = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / nf - m * m).max(0.0).sqrt().max(1e-3))
            .collect();
        Ok(FeatureNorm::from_vecs(&mean, &std)?)
    }

    /// Time-major batch (`frames * idx.len() x F`) of one domain.
    pub fn batch<T: Real>(&self, idx: &[usize], d: Domain) -> Result<Array2<T>> {
        let b = idx.len();
        let mut out = Array2::<T>::zeros((self.frames * b, self.features));
        for (k, &i) in idx.iter().enumerate() {
            let seg = self.segments[i].get(d)?;
            for t in 0..self.frames {
                out.row_mut(t * b + k)
                    .iter_mut()
                    .zip(seg.row(t))
                    .for_each(|(o, &v)| *o = T::from_f64(v as f64));
            }
        }
        Ok(out)
    }
}
