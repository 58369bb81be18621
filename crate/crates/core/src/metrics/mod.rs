//! Objective quality measures and their per-condition aggregation.

mod stoi;

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::Waveform;

pub use stoi::{resample, stoi, RESAMPLE_HALF_WIDTH};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("sample rate mismatch")]
    SampleRateMismatch,
    #[error("reference is silent")]
    SilentReference,
    #[error("too little active speech: {frames} frames, need {need}")]
    TooShort { frames: usize, need: usize },
    #[error("no records for {0}")]
    EmptyBucket(String),
}

pub type Result<T> = std::result::Result<T, MetricError>;

/// Upper bound reported by [`si_sdr`].
pub const SI_SDR_CAP_DB: f64 = 100.0;

/// Scale-invariant signal-to-distortion ratio in dB, capped at
/// [`SI_SDR_CAP_DB`].
pub fn si_sdr(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    let (r, e) = (reference.samples(), estimate.samples());
    if r.len() != e.len() {
        return Err(MetricError::LengthMismatch(r.len(), e.len()));
    }
    let rr: f64 = r.iter().map(|v| v * v).sum();
    if rr == 0.0 {
        return Err(MetricError::SilentReference);
    }
    let alpha = r.iter().zip(e).map(|(a, b)| a * b).sum::<f64>() / rr;
    let target = alpha * alpha * rr;
    let residual: f64 = r.iter().zip(e).map(|(a, b)| (b - alpha * a).powi(2)).sum();
    if residual == 0.0 {
        return Ok(SI_SDR_CAP_DB);
    }
    Ok((10.0 * (target / residual).log10()).min(SI_SDR_CAP_DB))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EvalMode {
    #[serde(rename = "noisy")]
    Noisy,
    L,
    M,
    #[serde(rename = "oracle")]
    Oracle,
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalMode::Noisy => "noisy",
            EvalMode::L => "L",
            EvalMode::M => "M",
            EvalMode::Oracle => "oracle",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub utterance_id: String,
    /// Mixing SNR rounded to whole dB.
    pub snr_bucket_db: i32,
    pub si_sdr_db: f64,
    pub stoi: f64,
    pub mode: EvalMode,
}

/// Mean with the half-width of its normal-approximation 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    pub half_width: f64,
}

impl MeanCi {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let half_width = if n < 2 {
            0.0
        } else {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            1.96 * (var / n as f64).sqrt()
        };
        Some(Self { mean, half_width })
    }

    pub fn contains(&self, v: f64) -> bool {
        (v - self.mean).abs() <= self.half_width
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub snr_bucket_db: i32,
    pub mode: EvalMode,
    pub count: usize,
    pub si_sdr_db: MeanCi,
    pub stoi: MeanCi,
}

/// Groups records by `(snr bucket, mode)`.
pub fn aggregate(records: &[EvalRecord]) -> Result<Vec<AggregateRow>> {
    if records.is_empty() {
        return Err(MetricError::EmptyBucket("all conditions".into()));
    }
    let mut groups: BTreeMap<(i32, EvalMode), Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.snr_bucket_db, r.mode)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((bucket, mode), rs)| {
            let sdr: Vec<f64> = rs.iter().map(|r| r.si_sdr_db).collect();
            let st: Vec<f64> = rs.iter().map(|r| r.stoi).collect();
            let empty = || MetricError::EmptyBucket(format!("{bucket} dB / {mode}"));
            Ok(AggregateRow {
                snr_bucket_db: bucket,
                mode,
                count: rs.len(),
                si_sdr_db: MeanCi::of(&sdr).ok_or_else(empty)?,
                stoi: MeanCi::of(&st).ok_or_else(empty)?,
            })
        })
        .collect()
}

/// Plain-text table of [`aggregate`] output.
pub fn render_table(rows: &[AggregateRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:>7}  {:>6}  {:>5}  {:>17}  {:>15}", "SNR dB", "mode", "n", "SI-SDR dB", "STOI");
    for r in rows {
        let _ = writeln!(
            s,
            "{:>7}  {:>6}  {:>5}  {:>8.2} ± {:<6.2}  {:>6.3} ± {:<6.3}",
            r.snr_bucket_db,
            r.mode.to_string(),
            r.count,
            r.si_sdr_db.mean,
            r.si_sdr_db.half_width,
            r.stoi.mean,
            r.stoi.half_width
        );
    }
    s
}
