//! Trajectory autocorrelation, spectrogram export and feature MSE reports.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex;
use rayon::prelude::*;

use crate::dsp::ComplexSpectrogram;
use crate::error::{Error, Result};
use crate::featurize::FeatureMatrix;
use crate::scalar::{CompensatedSum, Real};

pub const DEFAULT_MAX_LAG: usize = 100;

/// Normalized autocorrelation at lags `0..=max_lag`.
#[derive(Debug, Clone, PartialEq)]
pub struct AutocorrCurve<T> {
    pub values: Vec<T>,
}

impl<T: Real> AutocorrCurve<T> {
    pub fn max_lag(&self) -> usize {
        self.values.len().saturating_sub(1)
    }
}

/// Mean-removed autocorrelation of a complex sequence.
///
/// Lag `tau` is `Re sum_n conj(s(n)) s(n + tau)` divided by the geometric mean
/// of the energies of the two overlapping segments, so the value is bounded
/// by 1 and reaches it for a sequence that repeats with period `tau`.
pub fn normalized_autocorr<T: Real>(series: &[Complex<T>], max_lag: usize) -> Result<AutocorrCurve<T>> {
    let s: Vec<Complex<f64>> = series
        .iter()
        .map(|v| Complex::new(v.re.to_f64_lossy(), v.im.to_f64_lossy()))
        .collect();
    let values = autocorr_f64(&s, max_lag)?;
    Ok(AutocorrCurve { values: values.into_iter().map(T::of).collect() })
}

/// Real-valued counterpart of [`normalized_autocorr`].
pub fn normalized_autocorr_real<T: Real>(series: &[T], max_lag: usize) -> Result<AutocorrCurve<T>> {
    let c: Vec<Complex<T>> = series.iter().map(|v| Complex::new(*v, T::zero())).collect();
    normalized_autocorr(&c, max_lag)
}

fn centered(s: &[Complex<f64>]) -> Option<Vec<Complex<f64>>> {
    let n = s.len() as f64;
    let mean = s.iter().sum::<Complex<f64>>() / n;
    let raw: f64 = s.iter().map(|v| v.norm_sqr()).sum();
    let c: Vec<Complex<f64>> = s.iter().map(|v| v - mean).collect();
    let energy: f64 = c.iter().map(|v| v.norm_sqr()).sum();
    if raw == 0.0 || energy <= 1e-20 * raw {
        None
    } else {
        Some(c)
    }
}

fn autocorr_f64(s: &[Complex<f64>], max_lag: usize) -> Result<Vec<f64>> {
    if s.len() <= max_lag {
        return Err(Error::TooShort { needed: max_lag + 1, got: s.len() });
    }
    let c = centered(s).ok_or_else(|| Error::InvalidArgument("constant series has no autocorrelation".into()))?;
    Ok(curve_of_centered(&c, max_lag))
}

fn curve_of_centered(c: &[Complex<f64>], max_lag: usize) -> Vec<f64> {
    let n = c.len();
    // Prefix energies give both overlap segments in O(1) per lag.
    let mut prefix = vec![0.0f64; n + 1];
    for (i, v) in c.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v.norm_sqr();
    }
    (0..=max_lag)
        .map(|tau| {
            if tau == 0 {
                return 1.0;
            }
            let mut acc = CompensatedSum::new();
            for i in 0..n - tau {
                acc.add((c[i].conj() * c[i + tau]).re);
            }
            let head = prefix[n - tau];
            let tail = prefix[n] - prefix[tau];
            let denom = (head * tail).sqrt();
            if denom > 0.0 {
                (acc.value() / denom).clamp(-1.0, 1.0)
            } else {
                0.0
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AutocorrDomain {
    /// Complex STFT values, correlated with conjugation.
    #[default]
    Complex,
    /// STFT magnitudes.
    Magnitude,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AverageAutocorr<T> {
    pub curve: AutocorrCurve<T>,
    pub used: usize,
    /// Trajectories left out because they were constant or shorter than `max_lag + 1`.
    pub skipped: usize,
}

/// Mean of the per-trajectory curves over every bin of every utterance.
///
/// Utterances are processed in parallel; their partial sums are combined in
/// corpus order.
pub fn average_autocorr<T: Real>(
    corpus: &[ComplexSpectrogram<T>],
    max_lag: usize,
    domain: AutocorrDomain,
) -> Result<AverageAutocorr<T>> {
    if corpus.is_empty() {
        return Err(Error::Empty("autocorrelation corpus"));
    }
    let partials: Vec<(Vec<CompensatedSum>, usize, usize)> = corpus
        .par_iter()
        .map(|spec| {
            let mut sums = vec![CompensatedSum::new(); max_lag + 1];
            let (mut used, mut skipped) = (0, 0);
            for b in 0..spec.bins {
                let traj: Vec<Complex<f64>> = spec
                    .trajectory(b)
                    .iter()
                    .map(|v| {
                        let z = Complex::new(v.re.to_f64_lossy(), v.im.to_f64_lossy());
                        match domain {
                            AutocorrDomain::Complex => z,
                            AutocorrDomain::Magnitude => Complex::new(z.norm(), 0.0),
                        }
                    })
                    .collect();
                match (traj.len() > max_lag).then(|| centered(&traj)).flatten() {
                    Some(c) => {
                        for (acc, v) in sums.iter_mut().zip(curve_of_centered(&c, max_lag)) {
                            acc.add(v);
                        }
                        used += 1;
                    }
                    None => skipped += 1,
                }
            }
            (sums, used, skipped)
        })
        .collect();
    let mut totals = vec![CompensatedSum::new(); max_lag + 1];
    let (mut used, mut skipped) = (0, 0);
    for (sums, u, s) in &partials {
        for (t, v) in totals.iter_mut().zip(sums) {
            t.add(v.value());
        }
        used += u;
        skipped += s;
    }
    if used == 0 {
        return Err(Error::Empty("no non-degenerate trajectories"));
    }
    Ok(AverageAutocorr {
        curve: AutocorrCurve { values: totals.iter().map(|t| T::of(t.value() / used as f64)).collect() },
        used,
        skipped,
    })
}

/// Mean of `|r(tau)|` over `from_lag..=max_lag`.
pub fn tail_mass<T: Real>(curve: &AutocorrCurve<T>, from_lag: usize) -> Result<f64> {
    if curve.values.is_empty() || from_lag > curve.max_lag() {
        return Err(Error::InvalidArgument(format!(
            "from_lag {from_lag} beyond max lag {}",
            curve.max_lag()
        )));
    }
    let tail = &curve.values[from_lag..];
    Ok(tail.iter().map(|v| v.to_f64_lossy().abs()).sum::<f64>() / tail.len() as f64)
}

/// `lag,value` CSV.
pub fn write_autocorr_csv<T: Real>(curve: &AutocorrCurve<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from("lag,value\n");
    for (lag, v) in curve.values.iter().enumerate() {
        text.push_str(&format!("{lag},{}\n", v.to_f64_lossy()));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExportFormat {
    /// One line per frame, comma-separated values.
    Csv,
    /// Binary 8-bit graymap (P5); time runs left to right, low rows at the bottom.
    Pgm,
}

/// Frames x bins magnitudes in dB, `10 log10(max(|X|^2, 1e-20))`.
pub fn spectrogram_db<T: Real>(spec: &ComplexSpectrogram<T>) -> Array2<f64> {
    Array2::from_shape_fn((spec.frames, spec.bins), |(n, b)| {
        10.0 * spec.get(n, b).norm_sqr().to_f64_lossy().max(1e-20).log10()
    })
}

pub enum SpectrogramData<'a, T> {
    Complex(&'a ComplexSpectrogram<T>),
    Features(&'a FeatureMatrix<T>),
}

pub fn export_spectrogram<T: Real>(data: SpectrogramData<'_, T>, path: impl AsRef<Path>, format: ExportFormat) -> Result<()> {
    let m = match data {
        SpectrogramData::Complex(s) => spectrogram_db(s),
        SpectrogramData::Features(f) => f.values.mapv(|v| v.to_f64_lossy()),
    };
    export_matrix(&m, path, format)
}

pub fn export_matrix(m: &Array2<f64>, path: impl AsRef<Path>, format: ExportFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = match format {
        ExportFormat::Csv => {
            let mut text = String::new();
            for row in m.outer_iter() {
                let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                text.push_str(&cells.join(","));
                text.push('\n');
            }
            text.into_bytes()
        }
        ExportFormat::Pgm => graymap(m),
    };
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

fn graymap(m: &Array2<f64>) -> Vec<u8> {
    let (frames, rows) = m.dim();
    let lo = m.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = format!("P5\n{frames} {rows}\n255\n").into_bytes();
    for r in (0..rows).rev() {
        for n in 0..frames {
            let v = m[(n, r)];
            let px = if hi > lo { ((v - lo) / (hi - lo) * 255.0).round() } else { 128.0 };
            out.push(px as u8);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct MseRow {
    pub utterance_id: String,
    pub n_frames: usize,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MseReport {
    pub rows: Vec<MseRow>,
    /// Mean of the per-utterance values.
    pub corpus_mean: f64,
}

/// Per-utterance mean squared difference of aligned feature pairs.
pub fn mse_report<T: Real>(pairs: &[(String, FeatureMatrix<T>, FeatureMatrix<T>)]) -> Result<MseReport> {
    if pairs.is_empty() {
        return Err(Error::Empty("MSE pairs"));
    }
    let mut rows = Vec::with_capacity(pairs.len());
    let mut total = CompensatedSum::new();
    for (id, a, b) in pairs {
        if a.values.dim() != b.values.dim() || a.values.is_empty() {
            return Err(Error::ShapeMismatch(format!(
                "utterance {id}: {:?} vs {:?}",
                a.values.dim(),
                b.values.dim()
            )));
        }
        let mut acc = CompensatedSum::new();
        for (x, y) in a.values.iter().zip(b.values.iter()) {
            acc.add((x.to_f64_lossy() - y.to_f64_lossy()).powi(2));
        }
        let mse = acc.value() / a.values.len() as f64;
        total.add(mse);
        rows.push(MseRow { utterance_id: id.clone(), n_frames: a.rows(), mse });
    }
    let corpus_mean = total.value() / rows.len() as f64;
    Ok(MseReport { rows, corpus_mean })
}

/// CSV `utterance_id,n_frames,mse`.
pub fn write_mse_csv(report: &MseReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from("utterance_id,n_frames,mse\n");
    for r in &report.rows {
        text.push_str(&format!("{},{},{}\n", r.utterance_id, r.n_frames, r.mse));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
