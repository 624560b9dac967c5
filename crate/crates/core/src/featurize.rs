//! Log-Mel filter energies, per-utterance MVN and context stacking.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{s, Array2, ArrayView1, Axis};

use crate::dsp::{stft, ComplexSpectrogram, StftConfig, Waveform};
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const DEFAULT_N_MELS: usize = 40;
pub const DEFAULT_RELATIVE_FLOOR: f64 = 1e-10;
const DEGENERATE_VARIANCE: f64 = 1e-12;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Frames x dimensions real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<T> {
    pub values: Array2<T>,
}

/// Log filter energies, one row per frame.
pub type LogMelSeq<T> = FeatureMatrix<T>;

impl<T: Real> FeatureMatrix<T> {
    pub fn new(values: Array2<T>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature matrix"));
        }
        Ok(Self { values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { values: Array2::zeros((rows, cols)) }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::ShapeMismatch("ragged feature rows".into()));
        }
        let flat: Vec<T> = rows.iter().flatten().copied().collect();
        let values = Array2::from_shape_vec((rows.len(), cols), flat)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Self::new(values)
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, n: usize) -> ArrayView1<'_, T> {
        self.values.row(n)
    }

    /// First `rows` frames.
    pub fn truncated(&self, rows: usize) -> Self {
        let rows = rows.min(self.rows());
        Self { values: self.values.slice(s![..rows, ..]).to_owned() }
    }

    pub fn cast<U: Real>(&self) -> FeatureMatrix<U> {
        FeatureMatrix { values: self.values.mapv(|v| U::of(v.to_f64_lossy())) }
    }
}

/// Triangular filters on a Mel-spaced grid, `n_mels x (fft_size/2 + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterBank<T> {
    pub n_mels: usize,
    pub fft_size: usize,
    pub sample_rate: u32,
    pub weights: Array2<T>,
    /// Center frequency of each filter in Hz.
    pub centers: Vec<f64>,
}

impl<T: Real> MelFilterBank<T> {
    pub fn bins(&self) -> usize {
        self.weights.ncols()
    }

    /// Bin index with the largest weight, per filter.
    pub fn peak_bins(&self) -> Vec<usize> {
        self.weights
            .outer_iter()
            .map(|row| {
                let mut best = 0;
                for (b, w) in row.iter().enumerate() {
                    if *w > row[best] {
                        best = b;
                    }
                }
                best
            })
            .collect()
    }
}

/// `n_mels` triangles whose edges and centers are equally spaced in Mel
/// between 0 Hz and Nyquist. Weights peak at 1 at the center frequency.
pub fn mel_bank<T: Real>(fft_size: usize, sample_rate: u32, n_mels: usize) -> Result<MelFilterBank<T>> {
    if n_mels == 0 || fft_size < 2 * n_mels || sample_rate == 0 {
        return Err(Error::InvalidArgument(format!(
            "cannot build {n_mels} Mel filters for fft_size {fft_size} at {sample_rate} Hz"
        )));
    }
    let bins = fft_size / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / fft_size as f64;
    let mut weights = Array2::<T>::zeros((n_mels, bins));
    for k in 0..n_mels {
        let (lo, mid, hi) = (edges[k], edges[k + 1], edges[k + 2]);
        for b in 0..bins {
            let f = b as f64 * bin_hz;
            let w = if f > lo && f <= mid {
                (f - lo) / (mid - lo)
            } else if f > mid && f < hi {
                (hi - f) / (hi - mid)
            } else {
                0.0
            };
            weights[(k, b)] = T::of(w);
        }
    }
    let bank = MelFilterBank {
        n_mels,
        fft_size,
        sample_rate,
        weights,
        centers: edges[1..=n_mels].to_vec(),
    };
    let peaks = bank.peak_bins();
    let empty = bank.weights.outer_iter().any(|r| r.iter().all(|w| *w <= T::zero()));
    if empty || peaks.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::InvalidArgument(format!(
            "{n_mels} Mel filters are narrower than the {bin_hz:.2} Hz bin spacing of a {fft_size}-point FFT"
        )));
    }
    Ok(bank)
}

/// Lower bound applied to filter energies before the logarithm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EnergyFloor {
    Absolute(f64),
    /// Fraction of the utterance's largest filter energy. An all-zero
    /// utterance falls back to the fraction itself as an absolute floor.
    Relative(f64),
}

impl Default for EnergyFloor {
    fn default() -> Self {
        EnergyFloor::Relative(DEFAULT_RELATIVE_FLOOR)
    }
}

/// Filter energies `sum_b w(k,b) |X(n,b)|^2`, frames x filters.
pub fn mel_energies<T: Real>(spec: &ComplexSpectrogram<T>, bank: &MelFilterBank<T>) -> Result<Array2<T>> {
    if spec.bins != bank.bins() {
        return Err(Error::ShapeMismatch(format!(
            "spectrogram has {} bins, filter bank {}",
            spec.bins,
            bank.bins()
        )));
    }
    let power = Array2::from_shape_fn((spec.frames, spec.bins), |(n, b)| spec.get(n, b).norm_sqr());
    Ok(power.dot(&bank.weights.t()))
}

/// Natural-log filter energies, `ln(max(floor, energy))`.
pub fn log_mel<T: Real>(
    spec: &ComplexSpectrogram<T>,
    bank: &MelFilterBank<T>,
    floor: EnergyFloor,
) -> Result<LogMelSeq<T>> {
    let energies = mel_energies(spec, bank)?;
    let floor = match floor {
        EnergyFloor::Absolute(f) => f,
        EnergyFloor::Relative(r) => {
            let peak = energies.iter().fold(0.0f64, |m, v| m.max(v.to_f64_lossy()));
            if peak > 0.0 { r * peak } else { r }
        }
    };
    if !(floor > 0.0) || !floor.is_finite() {
        return Err(Error::InvalidArgument(format!("energy floor must be positive, got {floor}")));
    }
    let floor = T::of(floor);
    FeatureMatrix::new(energies.mapv(|e| e.max(floor).ln()))
}

/// Per-utterance mean and variance normalization of every column.
///
/// Uses the population variance. Columns with variance below 1e-12 are
/// centered but not scaled.
pub fn mvn<T: Real>(seq: &LogMelSeq<T>) -> Result<LogMelSeq<T>> {
    let n = seq.rows();
    if n < 2 {
        return Err(Error::TooShort { needed: 2, got: n });
    }
    let mut out = seq.values.clone();
    for mut col in out.axis_iter_mut(Axis(1)) {
        let mean = col.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v.to_f64_lossy() - mean).powi(2)).sum::<f64>() / n as f64;
        let scale = if var < DEGENERATE_VARIANCE { 1.0 } else { var.sqrt().recip() };
        col.mapv_inplace(|v| T::of((v.to_f64_lossy() - mean) * scale));
    }
    Ok(FeatureMatrix { values: out })
}

/// Frames `n - p ..= n + q` concatenated per row, past first.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextSeq<T> {
    pub p: usize,
    pub q: usize,
    pub features: FeatureMatrix<T>,
}

impl<T: Real> ContextSeq<T> {
    pub fn frames(&self) -> usize {
        self.features.rows()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Columns belonging to the current (unshifted) frame.
    pub fn center(&self) -> FeatureMatrix<T> {
        let d = self.dim() / (self.p + self.q + 1);
        FeatureMatrix {
            values: self.features.values.slice(s![.., self.p * d..(self.p + 1) * d]).to_owned(),
        }
    }
}

/// Stacks `p` past and `q` future frames around each frame; frames outside
/// the utterance are zero vectors.
pub fn stack_context<T: Real>(seq: &FeatureMatrix<T>, p: usize, q: usize) -> ContextSeq<T> {
    let (n, d) = (seq.rows(), seq.cols());
    let width = p + q + 1;
    let mut out = Array2::<T>::zeros((n, width * d));
    for row in 0..n {
        for slot in 0..width {
            let src = row as isize + slot as isize - p as isize;
            if src < 0 || src >= n as isize {
                continue;
            }
            out.slice_mut(s![row, slot * d..(slot + 1) * d])
                .assign(&seq.values.row(src as usize));
        }
    }
    ContextSeq { p, q, features: FeatureMatrix { values: out } }
}

/// Truncates the reverberant sequence to the clean length. Both start at
/// frame 0; no lag search is performed.
pub fn align_pairs<T: Real>(
    reverb: &FeatureMatrix<T>,
    clean: &FeatureMatrix<T>,
) -> Result<(FeatureMatrix<T>, FeatureMatrix<T>)> {
    if clean.rows() > reverb.rows() {
        return Err(Error::ShapeMismatch(format!(
            "clean has {} frames but reverberant only {}",
            clean.rows(),
            reverb.rows()
        )));
    }
    if clean.cols() != reverb.cols() {
        return Err(Error::ShapeMismatch(format!(
            "feature dims differ: reverberant {}, clean {}",
            reverb.cols(),
            clean.cols()
        )));
    }
    Ok((reverb.truncated(clean.rows()), clean.clone()))
}

/// STFT front end plus log-Mel and optional MVN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureConfig {
    pub stft: StftConfig,
    pub n_mels: usize,
    pub floor: EnergyFloor,
    pub mvn: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            stft: StftConfig::default(),
            n_mels: DEFAULT_N_MELS,
            floor: EnergyFloor::default(),
            mvn: true,
        }
    }
}

pub fn extract_features<T: Real>(wave: &Waveform<T>, config: &FeatureConfig) -> Result<LogMelSeq<T>> {
    let spec = stft(wave, &config.stft)?;
    spectrogram_features(&spec, wave.sample_rate, config)
}

pub fn spectrogram_features<T: Real>(
    spec: &ComplexSpectrogram<T>,
    sample_rate: u32,
    config: &FeatureConfig,
) -> Result<LogMelSeq<T>> {
    let bank = mel_bank(config.stft.fft_size, sample_rate, config.n_mels)?;
    let lm = log_mel(spec, &bank, config.floor)?;
    if config.mvn { mvn(&lm) } else { Ok(lm) }
}

const NCFT_MAGIC: &[u8; 4] = b"NCFT";

/// `NCFT`, `u32` rows, `u32` cols, row-major f32 LE.
pub fn write_ncft<T: Real>(m: &FeatureMatrix<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut buf = Vec::with_capacity(12 + 4 * m.values.len());
    buf.extend_from_slice(NCFT_MAGIC);
    buf.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    buf.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for v in m.values.iter() {
        buf.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
    }
    w.write_all(&buf).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_ncft<T: Real>(path: impl AsRef<Path>) -> Result<FeatureMatrix<T>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |reason: String| Error::Format { format: "NCFT", reason };
    if bytes.len() < 12 || &bytes[..4] != NCFT_MAGIC {
        return Err(bad("missing magic".into()));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() != rows * cols * 4 {
        return Err(bad(format!("{rows}x{cols} header but {} payload bytes", body.len())));
    }
    let flat: Vec<T> = body
        .chunks_exact(4)
        .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
        .collect();
    let values = Array2::from_shape_vec((rows, cols), flat).map_err(|e| bad(e.to_string()))?;
    FeatureMatrix::new(values).map_err(|_| bad("non-finite values".into()))
}

/// CSV with a `frame,d0,d1,...` header.
pub fn write_feature_csv<T: Real>(m: &FeatureMatrix<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from("frame");
    for d in 0..m.cols() {
        text.push_str(&format!(",d{d}"));
    }
    text.push('\n');
    for (n, row) in m.values.outer_iter().enumerate() {
        text.push_str(&n.to_string());
        for v in row {
            text.push_str(&format!(",{}", v.to_f64_lossy()));
        }
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
