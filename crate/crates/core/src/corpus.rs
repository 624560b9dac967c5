//! Synthetic speech-like utterances, RIR assignment and corpus splits.
//!
//! The generator strings together voiced syllables (a glottal pulse train
//! with a drifting pitch, shaped by three formant resonators), unvoiced
//! noise bursts and pauses. It is a stand-in for licensed recordings: the
//! output has speech-like spectral envelopes, harmonic structure and
//! syllabic modulation, which is what the dereverberation pipeline sees.

use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::dsp::{convolve, Waveform};
use crate::error::{Error, Result};
use crate::rir::{indexed_rng, Rir};
use crate::scalar::Real;

/// Vowel-like formant triples (Hz).
const FORMANTS: [[f64; 3]; 8] = [
    [730.0, 1090.0, 2440.0],
    [570.0, 840.0, 2410.0],
    [300.0, 870.0, 2240.0],
    [440.0, 1020.0, 2240.0],
    [270.0, 2290.0, 3010.0],
    [390.0, 1990.0, 2550.0],
    [530.0, 1840.0, 2480.0],
    [660.0, 1720.0, 2410.0],
];
const FORMANT_BANDWIDTHS: [f64; 3] = [80.0, 100.0, 140.0];
const PEAK_LEVEL: f64 = 0.5;
const NOISE_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SynthConfig {
    pub sample_rate: u32,
    pub min_secs: f64,
    pub max_secs: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { sample_rate: 16_000, min_secs: 2.0, max_secs: 3.0 }
    }
}

fn gauss<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Two-pole resonator at `freq` with bandwidth `bw`, input scaled by `1 - r`.
fn resonate(x: &[f64], freq: f64, bw: f64, fs: f64) -> Vec<f64> {
    let r = (-std::f64::consts::PI * bw / fs).exp();
    let theta = 2.0 * std::f64::consts::PI * freq / fs;
    let (a1, a2) = (2.0 * r * theta.cos(), -r * r);
    let gain = 1.0 - r;
    let (mut y1, mut y2) = (0.0, 0.0);
    x.iter()
        .map(|v| {
            let y = gain * v + a1 * y1 + a2 * y2;
            y2 = y1;
            y1 = y;
            y
        })
        .collect()
}

fn envelope(n: usize, attack: usize) -> Vec<f64> {
    let attack = attack.min(n / 2).max(1);
    (0..n)
        .map(|i| {
            let edge = i.min(n - 1 - i);
            if edge >= attack {
                1.0
            } else {
                0.5 - 0.5 * (std::f64::consts::PI * edge as f64 / attack as f64).cos()
            }
        })
        .collect()
}

fn voiced<R: Rng + ?Sized>(rng: &mut R, len: usize, fs: f64) -> Vec<f64> {
    let f0_start = rng.gen_range(90.0..240.0);
    let f0_end = f0_start * rng.gen_range(0.75..1.25);
    let mut phase = rng.gen_range(0.0..1.0);
    let mut source = vec![0.0; len];
    for (i, s) in source.iter_mut().enumerate() {
        let f0 = f0_start + (f0_end - f0_start) * i as f64 / len as f64;
        phase += f0 / fs;
        if phase >= 1.0 {
            phase -= 1.0;
            *s = 1.0;
        }
        *s += 0.02 * gauss(rng);
    }
    let a = FORMANTS[rng.gen_range(0..FORMANTS.len())];
    let b = FORMANTS[rng.gen_range(0..FORMANTS.len())];
    // Formants glide from one vowel target to another across the syllable.
    let mut out = vec![0.0; len];
    let blocks = 8;
    for (k, (fb, bw)) in a.iter().zip(b.iter()).zip(FORMANT_BANDWIDTHS).enumerate() {
        let mut track = vec![0.0; len];
        for blk in 0..blocks {
            let lo = blk * len / blocks;
            let hi = (blk + 1) * len / blocks;
            let t = (blk as f64 + 0.5) / blocks as f64;
            let f = fb.0 + (fb.1 - fb.0) * t;
            let seg = resonate(&source[lo..hi.max(lo)], f, bw, fs);
            track[lo..hi].copy_from_slice(&seg);
        }
        let weight = [1.0, 0.6, 0.3][k];
        for (o, t) in out.iter_mut().zip(&track) {
            *o += weight * t;
        }
    }
    let env = envelope(len, (0.02 * fs) as usize);
    out.iter().zip(env).map(|(v, e)| v * e).collect()
}

fn unvoiced<R: Rng + ?Sized>(rng: &mut R, len: usize, fs: f64) -> Vec<f64> {
    let noise: Vec<f64> = (0..len).map(|_| gauss(rng)).collect();
    let centre = rng.gen_range(2500.0..6000.0);
    let shaped = resonate(&noise, centre, rng.gen_range(800.0..2000.0), fs);
    let env = envelope(len, (0.01 * fs) as usize);
    shaped.iter().zip(env).map(|(v, e)| 0.5 * v * e).collect()
}

/// One utterance of random length in `[min_secs, max_secs]`, peak-normalized.
pub fn synth_utterance<T: Real, R: Rng + ?Sized>(rng: &mut R, config: &SynthConfig) -> Result<Waveform<T>> {
    if !(config.min_secs > 0.0 && config.max_secs >= config.min_secs) || config.sample_rate == 0 {
        return Err(Error::InvalidArgument(format!("bad synthesis config {config:?}")));
    }
    let fs = config.sample_rate as f64;
    let total = (rng.gen_range(config.min_secs..=config.max_secs) * fs) as usize;
    let mut out = Vec::with_capacity(total);
    let lead = (rng.gen_range(0.05..0.15) * fs) as usize;
    out.resize(lead, 0.0);
    while out.len() < total {
        let remaining = total - out.len();
        let roll: f64 = rng.gen();
        let seg = if roll < 0.65 {
            let len = ((rng.gen_range(0.08..0.25) * fs) as usize).min(remaining);
            voiced(rng, len, fs)
        } else if roll < 0.85 {
            let len = ((rng.gen_range(0.04..0.12) * fs) as usize).min(remaining);
            unvoiced(rng, len, fs)
        } else {
            vec![0.0; ((rng.gen_range(0.05..0.3) * fs) as usize).min(remaining)]
        };
        out.extend(seg);
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak > 0.0 { PEAK_LEVEL / peak } else { 1.0 };
    let samples = out
        .iter()
        .map(|v| T::of(v * scale + NOISE_FLOOR * gauss(rng)))
        .collect();
    Waveform::new(samples, config.sample_rate)
}

pub fn utterance_id(index: usize) -> String {
    format!("utt{index:05}")
}

/// `count` utterances; utterance `i` uses its own stream of `seed`.
pub fn synth_corpus<T: Real>(seed: u64, count: usize, config: &SynthConfig) -> Result<Vec<(String, Waveform<T>)>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = indexed_rng(seed ^ 0x5eed_c0de, i as u64);
            Ok((utterance_id(i), synth_utterance(&mut rng, config)?))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// 80/10/10 train/dev/test by hash of the utterance id.
pub fn split_of(utterance_id: &str) -> Split {
    match fnv1a(utterance_id.as_bytes()) % 10 {
        0..=7 => Split::Train,
        8 => Split::Dev,
        _ => Split::Test,
    }
}

/// Index of the RIR assigned to each utterance. With `unique`, no RIR is
/// used twice; otherwise RIRs are reused round-robin over a shuffled order.
pub fn assign_rirs(utterances: usize, rirs: usize, seed: u64, unique: bool) -> Result<Vec<usize>> {
    if rirs == 0 {
        return Err(Error::NotEnoughRirs { rirs, utterances });
    }
    if unique && rirs < utterances {
        return Err(Error::NotEnoughRirs { rirs, utterances });
    }
    let mut order: Vec<usize> = (0..rirs).collect();
    order.shuffle(&mut indexed_rng(seed ^ 0xa551_9e00, 0));
    Ok((0..utterances).map(|i| order[i % rirs]).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub utterance: String,
    pub rir_id: usize,
    pub rt60: f64,
    pub distance: f64,
    pub split: Split,
}

/// CSV `utterance,rir_id,rt60,distance,split`, sorted by utterance id.
pub fn write_manifest(rows: &[ManifestRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut sorted: Vec<&ManifestRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.utterance.cmp(&b.utterance));
    let mut text = String::from("utterance,rir_id,rt60,distance,split\n");
    for r in sorted {
        text.push_str(&format!("{},{},{},{},{}\n", r.utterance, r.rir_id, r.rt60, r.distance, r.split));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRow>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, reason: &str| Error::Format { format: "manifest", reason: format!("line {line}: {reason}") };
    let mut lines = text.lines();
    if lines.next() != Some("utterance,rir_id,rt60,distance,split") {
        return Err(bad(1, "unexpected header"));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad(i + 2, "expected 5 fields"));
            }
            Ok(ManifestRow {
                utterance: f[0].to_string(),
                rir_id: f[1].parse().map_err(|_| bad(i + 2, "rir_id"))?,
                rt60: f[2].parse().map_err(|_| bad(i + 2, "rt60"))?,
                distance: f[3].parse().map_err(|_| bad(i + 2, "distance"))?,
                split: f[4].parse().map_err(|_| bad(i + 2, "split"))?,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct CorpusItem<T> {
    pub id: String,
    pub clean: Waveform<T>,
    pub reverb: Waveform<T>,
    pub rir_id: usize,
    pub split: Split,
}

/// Convolves every clean utterance with its assigned RIR. Output is sorted
/// by utterance id.
pub fn build_corpus<T: Real>(
    clean: &[(String, Waveform<T>)],
    rirs: &[Rir<T>],
    seed: u64,
    unique: bool,
) -> Result<(Vec<CorpusItem<T>>, Vec<ManifestRow>)> {
    if clean.is_empty() {
        return Err(Error::Empty("clean utterances"));
    }
    let mut clean: Vec<&(String, Waveform<T>)> = clean.iter().collect();
    clean.sort_by(|a, b| a.0.cmp(&b.0));
    if clean.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::InvalidArgument("duplicate utterance ids".into()));
    }
    let assignment = assign_rirs(clean.len(), rirs.len(), seed, unique)?;
    let items: Vec<CorpusItem<T>> = clean
        .par_iter()
        .zip(assignment.par_iter())
        .map(|((id, wave), &r)| {
            Ok(CorpusItem {
                id: id.clone(),
                clean: wave.clone(),
                reverb: convolve(wave, &rirs[r])?,
                rir_id: r,
                split: split_of(id),
            })
        })
        .collect::<Result<_>>()?;
    let manifest = items
        .iter()
        .map(|it| ManifestRow {
            utterance: it.id.clone(),
            rir_id: it.rir_id,
            rt60: rirs[it.rir_id].spec.rt60.to_f64_lossy(),
            distance: rirs[it.rir_id].spec.distance().to_f64_lossy(),
            split: it.split,
        })
        .collect();
    Ok((items, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{stft, StftConfig};
    use crate::rir::{make_rir_set_in, RirOptions, NOMINAL_DIMS};

    #[test]
    fn utterances_are_bounded_deterministic_and_varied() {
        let cfg = SynthConfig::default();
        let a: Vec<(String, Waveform<f64>)> = synth_corpus(3, 4, &cfg).unwrap();
        let b: Vec<(String, Waveform<f64>)> = synth_corpus(3, 4, &cfg).unwrap();
        for ((ia, wa), (ib, wb)) in a.iter().zip(&b) {
            assert_eq!(ia, ib);
            assert_eq!(wa, wb);
            assert!(wa.duration_secs() >= 2.0 && wa.duration_secs() <= 3.0);
            assert!(wa.samples.iter().all(|v| v.abs() < 0.6));
        }
        assert_ne!(a[0].1, a[1].1);
        assert_eq!(a[2].0, "utt00002");
    }

    #[test]
    fn utterances_have_syllabic_energy_modulation() {
        let mut rng = indexed_rng(1, 0);
        let w: Waveform<f64> = synth_utterance(&mut rng, &SynthConfig::default()).unwrap();
        let s = stft(&w, &StftConfig::default()).unwrap();
        let frame_db: Vec<f64> = (0..s.frames)
            .map(|n| 10.0 * s.frame(n).iter().map(|v| v.norm_sqr()).sum::<f64>().max(1e-20).log10())
            .collect();
        let max = frame_db.iter().cloned().fold(f64::MIN, f64::max);
        let min = frame_db.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max - min > 30.0, "dynamic range {}", max - min);
    }

    #[test]
    fn split_is_stable_and_roughly_balanced() {
        assert_eq!(split_of("utt00001"), split_of("utt00001"));
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
        let mut counts = [0usize; 3];
        for i in 0..5000 {
            counts[split_of(&utterance_id(i)) as usize] += 1;
        }
        assert!((3800..4200).contains(&counts[0]), "{counts:?}");
        assert!((350..650).contains(&counts[1]) && (350..650).contains(&counts[2]), "{counts:?}");
    }

    #[test]
    fn rir_assignment_rules() {
        let a = assign_rirs(10, 10, 4, true).unwrap();
        let mut sorted = a.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 10);
        assert_eq!(a, assign_rirs(10, 10, 4, true).unwrap());
        assert!(matches!(assign_rirs(10, 5, 4, true), Err(Error::NotEnoughRirs { rirs: 5, utterances: 10 })));
        let reuse = assign_rirs(10, 5, 4, false).unwrap();
        assert!(reuse.iter().all(|r| *r < 5));
    }

    #[test]
    fn corpus_build_and_manifest_round_trip() {
        let clean: Vec<(String, Waveform<f64>)> =
            synth_corpus(5, 3, &SynthConfig { min_secs: 0.5, max_secs: 0.6, ..SynthConfig::default() }).unwrap();
        let rirs = make_rir_set_in(5, 3, NOMINAL_DIMS, 16_000, (0.4, 0.5), RirOptions::default()).unwrap();
        let (items, manifest) = build_corpus(&clean, &rirs, 5, true).unwrap();
        assert_eq!(items.len(), 3);
        for it in &items {
            assert_eq!(it.reverb.len(), it.clean.len() + rirs[it.rir_id].taps.len() - 1);
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("manifest.csv");
        write_manifest(&manifest, &p).unwrap();
        let back = read_manifest(&p).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[0].utterance, "utt00000");
        assert_eq!(back[0].rir_id, manifest[0].rir_id);
        assert_eq!(back[0].rt60, manifest[0].rt60);
    }
}
