//! Waveform I/O, STFT analysis/synthesis and linear convolution.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::rir::Rir;
use crate::scalar::Real;

pub const CANONICAL_SAMPLE_RATE: u32 = 16_000;

/// Mono PCM signal in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform<T> {
    pub samples: Vec<T>,
    pub sample_rate: u32,
}

impl<T: Real> Waveform<T> {
    pub fn new(samples: Vec<T>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample_rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("waveform samples"));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowKind {
    /// Periodic Hann, `0.5 - 0.5 cos(2 pi n / L)`.
    HannPeriodic,
}

impl WindowKind {
    pub fn coefficients<T: Real>(self, len: usize) -> Vec<T> {
        match self {
            WindowKind::HannPeriodic => (0..len)
                .map(|n| {
                    let phase = 2.0 * std::f64::consts::PI * n as f64 / len as f64;
                    T::of(0.5 - 0.5 * phase.cos())
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct StftConfig {
    pub frame_len: usize,
    pub frame_shift: usize,
    pub fft_size: usize,
    pub window: WindowKind,
}

impl StftConfig {
    /// 25 ms frames with a 10 ms shift; FFT size is the next power of two
    /// (400/160/512 at 16 kHz).
    pub fn for_sample_rate(sample_rate: u32) -> Self {
        let frame_len = ((0.025 * sample_rate as f64).round() as usize).max(1);
        let frame_shift = ((0.010 * sample_rate as f64).round() as usize).max(1);
        Self {
            frame_len,
            frame_shift,
            fft_size: frame_len.next_power_of_two(),
            window: WindowKind::HannPeriodic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_shift == 0
            || self.frame_shift > self.frame_len
            || self.frame_len > self.fft_size
            || !self.fft_size.is_power_of_two()
        {
            return Err(Error::InvalidArgument(format!(
                "inconsistent STFT config: frame_len={} frame_shift={} fft_size={}",
                self.frame_len, self.frame_shift, self.fft_size
            )));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Number of whole frames that fit in `len` samples (trailing partial frame dropped).
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.frame_len {
            0
        } else {
            1 + (len - self.frame_len) / self.frame_shift
        }
    }
}

impl Default for StftConfig {
    fn default() -> Self {
        Self::for_sample_rate(CANONICAL_SAMPLE_RATE)
    }
}

/// Frame-by-bin matrix of complex STFT values, row-major (`frames x bins`).
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram<T> {
    pub frames: usize,
    pub bins: usize,
    pub values: Vec<Complex<T>>,
    pub config: StftConfig,
}

impl<T: Real> ComplexSpectrogram<T> {
    pub fn zeros(frames: usize, config: StftConfig) -> Self {
        let bins = config.bins();
        Self {
            frames,
            bins,
            values: vec![Complex::new(T::zero(), T::zero()); frames * bins],
            config,
        }
    }

    #[inline]
    pub fn get(&self, frame: usize, bin: usize) -> Complex<T> {
        self.values[frame * self.bins + bin]
    }

    #[inline]
    pub fn set(&mut self, frame: usize, bin: usize, v: Complex<T>) {
        self.values[frame * self.bins + bin] = v;
    }

    pub fn frame(&self, frame: usize) -> &[Complex<T>] {
        &self.values[frame * self.bins..(frame + 1) * self.bins]
    }

    /// Values of one frequency bin across all frames.
    pub fn trajectory(&self, bin: usize) -> Vec<Complex<T>> {
        (0..self.frames).map(|n| self.get(n, bin)).collect()
    }

    pub fn set_trajectory(&mut self, bin: usize, values: &[Complex<T>]) {
        for (n, v) in values.iter().enumerate().take(self.frames) {
            self.set(n, bin, *v);
        }
    }

    /// First `frames` frames.
    pub fn truncated(&self, frames: usize) -> Self {
        let frames = frames.min(self.frames);
        Self {
            frames,
            bins: self.bins,
            values: self.values[..frames * self.bins].to_vec(),
            config: self.config,
        }
    }

    pub fn energy(&self) -> T {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }

    fn check(&self) -> Result<()> {
        self.config.validate()?;
        if self.bins != self.config.bins() || self.values.len() != self.frames * self.bins {
            return Err(Error::InvalidArgument(format!(
                "spectrogram shape {}x{} ({} values) inconsistent with fft_size {}",
                self.frames,
                self.bins,
                self.values.len(),
                self.config.fft_size
            )));
        }
        Ok(())
    }
}

pub fn read_wav<T: Real>(path: impl AsRef<Path>) -> Result<Waveform<T>> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Multichannel(spec.channels));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedEncoding(format!(
            "{}-bit {:?}; only 16-bit PCM is supported",
            spec.bits_per_sample, spec.sample_format
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| T::of(v as f64 / 32768.0)))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| wav_error(path, e))?;
    Waveform::new(samples, spec.sample_rate)
}

pub fn write_wav<T: Real>(wave: &Waveform<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if wave.samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("waveform samples"));
    }
    if wave.sample_rate == 0 {
        return Err(Error::InvalidArgument("sample_rate must be positive".into()));
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
    for s in &wave.samples {
        let q = (s.to_f64_lossy() * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q).map_err(|e| wav_error(path, e))?;
    }
    writer.finalize().map_err(|e| wav_error(path, e))
}

fn wav_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        hound::Error::Unsupported => Error::UnsupportedEncoding("unsupported WAV variant".into()),
        other => Error::Format {
            format: "WAV",
            reason: format!("{}: {other}", path.display()),
        },
    }
}

pub fn stft<T: Real>(wave: &Waveform<T>, config: &StftConfig) -> Result<ComplexSpectrogram<T>> {
    config.validate()?;
    let frames = config.frame_count(wave.len());
    if frames == 0 {
        return Err(Error::TooShort {
            needed: config.frame_len,
            got: wave.len(),
        });
    }
    let window = config.window.coefficients::<T>(config.frame_len);
    let fft = FftPlanner::<T>::new().plan_fft_forward(config.fft_size);
    let bins = config.bins();
    let zero = Complex::new(T::zero(), T::zero());
    let mut buf = vec![zero; config.fft_size];
    let mut scratch = vec![zero; fft.get_inplace_scratch_len()];
    let mut values = Vec::with_capacity(frames * bins);
    for n in 0..frames {
        let start = n * config.frame_shift;
        buf.fill(zero);
        for (i, (b, w)) in buf.iter_mut().zip(&window).enumerate() {
            *b = Complex::new(wave.samples[start + i] * *w, T::zero());
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        values.extend_from_slice(&buf[..bins]);
    }
    Ok(ComplexSpectrogram {
        frames,
        bins,
        values,
        config: *config,
    })
}

/// Weighted overlap-add synthesis, normalized by the summed squared
/// analysis window. Output length is `(frames - 1) * shift + frame_len`.
pub fn istft<T: Real>(spec: &ComplexSpectrogram<T>, sample_rate: u32) -> Result<Waveform<T>> {
    spec.check()?;
    let cfg = spec.config;
    if spec.frames == 0 {
        return Waveform::new(Vec::new(), sample_rate);
    }
    let window = cfg.window.coefficients::<T>(cfg.frame_len);
    let ifft = FftPlanner::<T>::new().plan_fft_inverse(cfg.fft_size);
    let out_len = (spec.frames - 1) * cfg.frame_shift + cfg.frame_len;
    let mut out = vec![T::zero(); out_len];
    let mut wsum = vec![T::zero(); out_len];
    let zero = Complex::new(T::zero(), T::zero());
    let mut buf = vec![zero; cfg.fft_size];
    let mut scratch = vec![zero; ifft.get_inplace_scratch_len()];
    let scale = T::one() / T::of(cfg.fft_size as f64);
    for n in 0..spec.frames {
        let half = spec.frame(n);
        buf[..spec.bins].copy_from_slice(half);
        for k in spec.bins..cfg.fft_size {
            buf[k] = half[cfg.fft_size - k].conj();
        }
        // DC and Nyquist must be real for a real signal.
        buf[0].im = T::zero();
        buf[cfg.fft_size / 2].im = T::zero();
        ifft.process_with_scratch(&mut buf, &mut scratch);
        let start = n * cfg.frame_shift;
        for i in 0..cfg.frame_len {
            let w = window[i];
            out[start + i] += buf[i].re * scale * w;
            wsum[start + i] += w * w;
        }
    }
    let floor = T::of(1e-10);
    for (o, w) in out.iter_mut().zip(&wsum) {
        *o = if *w > floor { *o / *w } else { T::zero() };
    }
    Waveform::new(out, sample_rate)
}

/// Shorter operands than this are convolved by direct summation.
const DIRECT_CONVOLUTION_MAX: usize = 32;

/// Full linear convolution, output length `x + h - 1`. Uses a zero-padded
/// FFT unless one operand is short.
pub fn convolve_slices<T: Real>(x: &[T], h: &[T]) -> Vec<T> {
    if x.is_empty() || h.is_empty() {
        return Vec::new();
    }
    let out_len = x.len() + h.len() - 1;
    if x.len().min(h.len()) <= DIRECT_CONVOLUTION_MAX {
        let mut out = vec![T::zero(); out_len];
        for (i, a) in x.iter().enumerate() {
            for (j, b) in h.iter().enumerate() {
                out[i + j] += *a * *b;
            }
        }
        return out;
    }
    let n = out_len.next_power_of_two();
    let mut planner = FftPlanner::<T>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let zero = Complex::new(T::zero(), T::zero());
    let mut a = vec![zero; n];
    let mut b = vec![zero; n];
    for (d, s) in a.iter_mut().zip(x) {
        d.re = *s;
    }
    for (d, s) in b.iter_mut().zip(h) {
        d.re = *s;
    }
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (u, v) in a.iter_mut().zip(&b) {
        *u *= *v;
    }
    inv.process(&mut a);
    let scale = T::one() / T::of(n as f64);
    a[..out_len].iter().map(|c| c.re * scale).collect()
}

pub fn convolve<T: Real>(x: &Waveform<T>, rir: &Rir<T>) -> Result<Waveform<T>> {
    if x.sample_rate != rir.sample_rate {
        return Err(Error::SampleRateMismatch(x.sample_rate, rir.sample_rate));
    }
    Waveform::new(convolve_slices(&x.samples, &rir.taps), x.sample_rate)
}

const NCSP_MAGIC: &[u8; 4] = b"NCSP";

/// Writes `NCSP`, `u32 frames`, `u32 bins`, then interleaved `(re, im)` f32 LE, row-major.
pub fn write_ncsp<T: Real>(spec: &ComplexSpectrogram<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    put(NCSP_MAGIC)?;
    put(&(spec.frames as u32).to_le_bytes())?;
    put(&(spec.bins as u32).to_le_bytes())?;
    for v in &spec.values {
        put(&(v.re.to_f64_lossy() as f32).to_le_bytes())?;
        put(&(v.im.to_f64_lossy() as f32).to_le_bytes())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_ncsp<T: Real>(path: impl AsRef<Path>, config: StftConfig) -> Result<ComplexSpectrogram<T>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |reason: &str| Error::Format {
        format: "NCSP",
        reason: reason.to_string(),
    };
    if bytes.len() < 12 || &bytes[..4] != NCSP_MAGIC {
        return Err(bad("missing magic"));
    }
    let frames = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let bins = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bins != config.bins() {
        return Err(bad(&format!("{bins} bins but config expects {}", config.bins())));
    }
    let body = &bytes[12..];
    if body.len() != frames * bins * 8 {
        return Err(bad("payload length does not match header"));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes(c[..4].try_into().unwrap());
            let im = f32::from_le_bytes(c[4..].try_into().unwrap());
            Complex::new(T::of(re as f64), T::of(im as f64))
        })
        .collect();
    Ok(ComplexSpectrogram {
        frames,
        bins,
        values,
        config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_wave(len: usize, seed: u64) -> Waveform<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new((0..len).map(|_| rng.gen_range(-0.9..0.9)).collect(), 16_000).unwrap()
    }

    fn direct_convolution(x: &[f64], h: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len() + h.len() - 1];
        for (i, a) in x.iter().enumerate() {
            for (j, b) in h.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        out
    }

    #[test]
    fn framing_arithmetic_at_16k() {
        let cfg = StftConfig::default();
        assert_eq!((cfg.frame_len, cfg.frame_shift, cfg.fft_size), (400, 160, 512));
        let spec = stft(&Waveform::new(vec![0.0f64; 16_000], 16_000).unwrap(), &cfg).unwrap();
        assert_eq!(spec.frames, 98);
        assert_eq!(spec.bins, 257);
        assert!(spec.values.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn short_waveform_is_rejected() {
        let w = Waveform::new(vec![0.0f64; 399], 16_000).unwrap();
        assert!(matches!(stft(&w, &StftConfig::default()), Err(Error::TooShort { .. })));
    }

    #[test]
    fn bin_centred_cosine_concentrates_energy() {
        let cfg = StftConfig::default();
        let k0 = 40usize;
        let samples = (0..4000)
            .map(|n| (2.0 * std::f64::consts::PI * k0 as f64 * n as f64 / 512.0).cos())
            .collect();
        let spec = stft(&Waveform::new(samples, 16_000).unwrap(), &cfg).unwrap();
        for n in 0..spec.frames {
            let row = spec.frame(n);
            let total: f64 = row.iter().map(|v| v.norm_sqr()).sum();
            let near: f64 = row[k0 - 1..=k0 + 1].iter().map(|v| v.norm_sqr()).sum();
            assert!(near >= 0.9 * total, "frame {n}: {near} of {total}");
        }
    }

    #[test]
    fn parseval_per_frame() {
        let cfg = StftConfig::default();
        let wave = random_wave(2000, 3);
        let spec = stft(&wave, &cfg).unwrap();
        let window = cfg.window.coefficients::<f64>(cfg.frame_len);
        for n in 0..spec.frames {
            let time: f64 = (0..cfg.frame_len)
                .map(|i| (wave.samples[n * cfg.frame_shift + i] * window[i]).powi(2))
                .sum();
            let row = spec.frame(n);
            let full: f64 = row[0].norm_sqr()
                + row[spec.bins - 1].norm_sqr()
                + 2.0 * row[1..spec.bins - 1].iter().map(|v| v.norm_sqr()).sum::<f64>();
            let freq = full / cfg.fft_size as f64;
            assert!((time - freq).abs() <= 1e-9 * time);
        }
    }

    #[test]
    fn stft_is_linear() {
        let cfg = StftConfig::default();
        let x = random_wave(3000, 1);
        let y = random_wave(3000, 2);
        let (a, b) = (0.7, -0.3);
        let mix = Waveform::new(
            x.samples.iter().zip(&y.samples).map(|(u, v)| a * u + b * v).collect(),
            16_000,
        )
        .unwrap();
        let (sx, sy, sm) = (stft(&x, &cfg).unwrap(), stft(&y, &cfg).unwrap(), stft(&mix, &cfg).unwrap());
        let scale = sm.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for i in 0..sm.values.len() {
            let expect = sx.values[i] * a + sy.values[i] * b;
            assert!((sm.values[i] - expect).norm() <= 1e-9 * scale);
        }
    }

    #[test]
    fn istft_reconstructs_interior() {
        let cfg = StftConfig::default();
        let x = random_wave(8000, 7);
        let y = istft(&stft(&x, &cfg).unwrap(), 16_000).unwrap();
        let (lo, hi) = (cfg.frame_len, y.len() - cfg.frame_len);
        let err: f64 = (lo..hi).map(|i| (y.samples[i] - x.samples[i]).powi(2)).sum();
        let norm: f64 = (lo..hi).map(|i| x.samples[i].powi(2)).sum();
        assert!((err / norm).sqrt() <= 1e-6);
    }

    #[test]
    fn istft_of_zero_and_single_frame() {
        let cfg = StftConfig::default();
        let z = ComplexSpectrogram::<f64>::zeros(5, cfg);
        let w = istft(&z, 16_000).unwrap();
        assert_eq!(w.len(), 4 * 160 + 400);
        assert!(w.samples.iter().all(|v| *v == 0.0));

        let x = random_wave(400, 9);
        let one = stft(&x, &cfg).unwrap();
        assert_eq!(one.frames, 1);
        let y = istft(&one, 16_000).unwrap();
        // With one frame, overlap-add divides w*x*w by w^2: exact wherever w > 0.
        for i in 1..400 {
            assert!((y.samples[i] - x.samples[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn istft_rejects_inconsistent_config() {
        let mut z = ComplexSpectrogram::<f64>::zeros(2, StftConfig::default());
        z.bins = 100;
        assert!(istft(&z, 16_000).is_err());
    }

    #[test]
    fn convolution_kernels() {
        let x = random_wave(50, 4).samples;
        let id = convolve_slices(&x, &[1.0]);
        for (a, b) in id.iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
        let shifted = convolve_slices(&x, &[0.0, 1.0]);
        assert_eq!(shifted.len(), 51);
        assert!(shifted[0].abs() < 1e-12);
        for i in 0..50 {
            assert!((shifted[i + 1] - x[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn convolution_matches_direct_sum_exhaustively() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for lx in 1..=64usize {
            for lh in [1usize, 2, 3, 8, 17, 64] {
                let x: Vec<f64> = (0..lx).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let h: Vec<f64> = (0..lh).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let fast = convolve_slices(&x, &h);
                let slow = direct_convolution(&x, &h);
                let scale = slow.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
                for (a, b) in fast.iter().zip(&slow) {
                    assert!((a - b).abs() <= 1e-10 * scale);
                }
            }
        }
    }

    #[test]
    fn wav_round_trip_within_one_lsb() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut samples: Vec<f64> = (0..1000).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        samples.push(1.0);
        samples.push(-1.0);
        let w = Waveform::new(samples, 16_000).unwrap();
        write_wav(&w, &path).unwrap();
        let r: Waveform<f64> = read_wav(&path).unwrap();
        assert_eq!(r.sample_rate, 16_000);
        for (a, b) in r.samples.iter().zip(&w.samples) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn wav_edge_cases() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty.wav");
        write_wav(&Waveform::<f64>::new(vec![], 8000).unwrap(), &empty).unwrap();
        let r: Waveform<f64> = read_wav(&empty).unwrap();
        assert!(r.is_empty());
        assert_eq!(r.sample_rate, 8000);

        let nan = Waveform {
            samples: vec![0.0, f64::NAN],
            sample_rate: 16_000,
        };
        assert!(matches!(write_wav(&nan, dir.path().join("n.wav")), Err(Error::NonFinite(_))));

        let silent = dir.path().join("silence.wav");
        write_wav(&Waveform::new(vec![0.0f64; 16_000], 16_000).unwrap(), &silent).unwrap();
        let s: Waveform<f64> = read_wav(&silent).unwrap();
        assert_eq!(s.len(), 16_000);
        assert!(s.samples.iter().all(|v| *v == 0.0));
    }

    fn write_raw(path: &Path, channels: u16, bits: u16, data: &[i32]) {
        let spec = hound::WavSpec {
            channels,
            sample_rate: 16_000,
            bits_per_sample: bits,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for d in data {
            if bits == 8 {
                w.write_sample(*d as i8).unwrap();
            } else {
                w.write_sample(*d as i16).unwrap();
            }
        }
        w.finalize().unwrap();
    }

    #[test]
    fn wav_rejects_unsupported_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let p8 = dir.path().join("eight.wav");
        write_raw(&p8, 1, 8, &[1, 2, 3]);
        let e = read_wav::<f64>(&p8).unwrap_err();
        assert!(matches!(e, Error::UnsupportedEncoding(_)));
        assert!(e.to_string().contains("unsupported encoding"));

        let st = dir.path().join("stereo.wav");
        write_raw(&st, 2, 16, &[1, 2, 3, 4]);
        let e = read_wav::<f64>(&st).unwrap_err();
        assert!(matches!(e, Error::Multichannel(2)));
        assert!(e.to_string().contains('2'));

        assert!(matches!(read_wav::<f64>(dir.path().join("missing.wav")), Err(Error::Io { .. })));
    }

    #[test]
    fn full_scale_square_wave_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sq.wav");
        write_raw(&p, 1, 16, &[32767, -32768, 32767, -32768]);
        let w: Waveform<f64> = read_wav(&p).unwrap();
        assert_eq!(w.samples, vec![32767.0 / 32768.0, -1.0, 32767.0 / 32768.0, -1.0]);
    }

    #[test]
    fn ncsp_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ncsp");
        let cfg = StftConfig::default();
        let spec = stft(&random_wave(1200, 8), &cfg).unwrap();
        write_ncsp(&spec, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"NCSP");
        assert_eq!(bytes.len(), 12 + spec.frames * spec.bins * 8);
        let back: ComplexSpectrogram<f64> = read_ncsp(&p, cfg).unwrap();
        for (a, b) in back.values.iter().zip(&spec.values) {
            assert!((a - b).norm() <= 1e-6 * (1.0 + b.norm()));
        }
    }
}
