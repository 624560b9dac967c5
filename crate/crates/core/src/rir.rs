//! Randomized shoebox rooms and image-method impulse responses.
//!
//! Rooms are drawn around a nominal size with +/-20% per axis; source and
//! microphone are placed at least 1 m from every wall, 1-2 m above the
//! floor and 0.144-2.816 m apart. Walls share one absorption coefficient
//! derived from the target RT60 with Sabine's formula, and the rendered
//! response is high-passed at 100 Hz by default to remove the DC build-up.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const SPEED_OF_SOUND: f64 = 343.0;
pub const NOMINAL_DIMS: [f64; 3] = [7.95, 5.68, 4.5];
pub const DIM_SPREAD: f64 = 0.2;
pub const RT60_RANGE: (f64, f64) = (0.4, 1.99);
pub const DISTANCE_RANGE: (f64, f64) = (0.144, 2.816);
pub const WALL_MARGIN: f64 = 1.0;
pub const HEIGHT_BAND: (f64, f64) = (1.0, 2.0);

const MAX_ROOM_ATTEMPTS: usize = 64;
const MAX_PLACEMENT_ATTEMPTS: usize = 2_000;
const GEOMETRY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoomSpec<T> {
    /// Length, width, height in meters.
    pub dims: [T; 3],
    pub src: [T; 3],
    pub mic: [T; 3],
    pub rt60: T,
    pub sample_rate: u32,
    pub max_rir_len: usize,
}

impl<T: Real> RoomSpec<T> {
    pub fn distance(&self) -> T {
        (0..3)
            .map(|i| (self.src[i] - self.mic[i]).powi(2))
            .sum::<T>()
            .sqrt()
    }

    /// Checks every sampling invariant: wall margins, height band,
    /// source-microphone distance and the RT60 range.
    pub fn check(&self) -> Result<()> {
        let dims = self.dims.map(|v| v.to_f64_lossy());
        for (name, p) in [("source", self.src), ("microphone", self.mic)] {
            let p = p.map(|v| v.to_f64_lossy());
            if !in_placement_box(&dims, &p) {
                return Err(Error::InvalidArgument(format!(
                    "{name} at {p:?} violates wall margins or height band in room {dims:?}"
                )));
            }
        }
        let d = self.distance().to_f64_lossy();
        if d < DISTANCE_RANGE.0 - GEOMETRY_TOL || d > DISTANCE_RANGE.1 + GEOMETRY_TOL {
            return Err(Error::InvalidArgument(format!("source-mic distance {d} out of range")));
        }
        let rt = self.rt60.to_f64_lossy();
        if rt < RT60_RANGE.0 || rt > RT60_RANGE.1 {
            return Err(Error::InvalidArgument(format!("rt60 {rt} out of range")));
        }
        Ok(())
    }

    /// Uniform wall absorption from Sabine's formula, `alpha = 24 ln10 V / (c S T60)`.
    pub fn sabine_absorption(&self) -> f64 {
        let [l, w, h] = self.dims.map(|v| v.to_f64_lossy());
        let volume = l * w * h;
        let surface = 2.0 * (l * w + l * h + w * h);
        24.0 * std::f64::consts::LN_10 * volume / (SPEED_OF_SOUND * surface * self.rt60.to_f64_lossy())
    }
}

/// Default truncation length, `ceil(1.2 * rt60 * fs)`.
pub fn default_rir_len(rt60: f64, sample_rate: u32) -> usize {
    (1.2 * rt60 * sample_rate as f64).ceil() as usize
}

fn placement_bounds(dims: &[f64; 3]) -> [(f64, f64); 3] {
    [
        (WALL_MARGIN, dims[0] - WALL_MARGIN),
        (WALL_MARGIN, dims[1] - WALL_MARGIN),
        (
            HEIGHT_BAND.0.max(WALL_MARGIN),
            HEIGHT_BAND.1.min(dims[2] - WALL_MARGIN),
        ),
    ]
}

fn in_placement_box(dims: &[f64; 3], p: &[f64; 3]) -> bool {
    placement_bounds(dims)
        .iter()
        .zip(p)
        .all(|((lo, hi), v)| *v >= lo - GEOMETRY_TOL && *v <= hi + GEOMETRY_TOL)
}

/// Draws a room around `nominal_dims` plus source/mic positions and an RT60.
///
/// Feasibility is judged on the smallest room the +/-20% draw can produce:
/// if that room leaves no placement volume, every draw is rejected up front.
pub fn sample_room<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    nominal_dims: [T; 3],
    sample_rate: u32,
) -> Result<RoomSpec<T>> {
    sample_room_in(rng, nominal_dims, sample_rate, RT60_RANGE)
}

/// [`sample_room`] with RT60 drawn from a sub-range of the admissible range.
pub fn sample_room_in<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    nominal_dims: [T; 3],
    sample_rate: u32,
    rt60_range: (f64, f64),
) -> Result<RoomSpec<T>> {
    let (rt_lo, rt_hi) = rt60_range;
    if !(rt_lo >= RT60_RANGE.0 && rt_hi <= RT60_RANGE.1 && rt_lo <= rt_hi) {
        return Err(Error::InvalidArgument(format!(
            "rt60 range {rt60_range:?} must lie within {RT60_RANGE:?}"
        )));
    }
    let nominal = nominal_dims.map(|v| v.to_f64_lossy());
    if nominal.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("nominal dims must be positive, got {nominal:?}")));
    }
    let smallest = nominal.map(|v| v * (1.0 - DIM_SPREAD));
    let bounds = placement_bounds(&smallest);
    let extent: Vec<f64> = bounds.iter().map(|(lo, hi)| hi - lo).collect();
    if extent.iter().any(|e| *e <= 0.0) {
        return Err(Error::InfeasibleRoom(format!(
            "nominal room {nominal:?} at -20% leaves no placement volume with 1 m wall margins and a 1-2 m height band"
        )));
    }
    let diag = extent.iter().map(|e| e * e).sum::<f64>().sqrt();
    if diag < DISTANCE_RANGE.0 {
        return Err(Error::InfeasibleRoom(format!(
            "placement volume diagonal {diag:.3} m is below the {} m minimum separation",
            DISTANCE_RANGE.0
        )));
    }

    for _ in 0..MAX_ROOM_ATTEMPTS {
        let dims = nominal.map(|v| rng.gen_range(v * (1.0 - DIM_SPREAD)..=v * (1.0 + DIM_SPREAD)));
        let rt60 = rng.gen_range(rt_lo..=rt_hi);
        let b = placement_bounds(&dims);
        if b.iter().any(|(lo, hi)| hi <= lo) {
            continue;
        }
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let src = [0, 1, 2].map(|i| rng.gen_range(b[i].0..=b[i].1));
            let d = rng.gen_range(DISTANCE_RANGE.0..=DISTANCE_RANGE.1);
            let cos_theta: f64 = rng.gen_range(-1.0..=1.0);
            let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let sin_theta = (1.0 - cos_theta * cos_theta).max(0.0).sqrt();
            let dir = [sin_theta * phi.cos(), sin_theta * phi.sin(), cos_theta];
            let mic = [0, 1, 2].map(|i| src[i] + d * dir[i]);
            if in_placement_box(&dims, &mic) {
                let spec = RoomSpec {
                    dims: dims.map(T::of),
                    src: src.map(T::of),
                    mic: mic.map(T::of),
                    rt60: T::of(rt60),
                    sample_rate,
                    max_rir_len: default_rir_len(rt60, sample_rate),
                };
                if spec.check().is_ok() {
                    return Ok(spec);
                }
            }
        }
    }
    Err(Error::InfeasibleRoom(format!(
        "no valid placement found around nominal room {nominal:?} after bounded retries"
    )))
}

/// Per-index generator derived from `(seed, index)`, independent of scheduling.
pub fn indexed_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `count` independent room draws; draw `i` uses [`indexed_rng`]`(seed, i)`.
pub fn make_rir_specs<T: Real>(
    seed: u64,
    count: usize,
    nominal_dims: [T; 3],
    sample_rate: u32,
) -> Result<Vec<RoomSpec<T>>> {
    make_rir_specs_in(seed, count, nominal_dims, sample_rate, RT60_RANGE)
}

pub fn make_rir_specs_in<T: Real>(
    seed: u64,
    count: usize,
    nominal_dims: [T; 3],
    sample_rate: u32,
    rt60_range: (f64, f64),
) -> Result<Vec<RoomSpec<T>>> {
    if count == 0 {
        return Err(Error::InvalidArgument("RIR count must be at least 1".into()));
    }
    (0..count)
        .into_par_iter()
        .map(|i| sample_room_in(&mut indexed_rng(seed, i as u64), nominal_dims, sample_rate, rt60_range))
        .collect()
}

/// Samples and renders `count` impulse responses.
pub fn make_rir_set<T: Real>(
    seed: u64,
    count: usize,
    nominal_dims: [T; 3],
    sample_rate: u32,
    options: RirOptions,
) -> Result<Vec<Rir<T>>> {
    make_rir_set_in(seed, count, nominal_dims, sample_rate, RT60_RANGE, options)
}

pub fn make_rir_set_in<T: Real>(
    seed: u64,
    count: usize,
    nominal_dims: [T; 3],
    sample_rate: u32,
    rt60_range: (f64, f64),
    options: RirOptions,
) -> Result<Vec<Rir<T>>> {
    make_rir_specs_in(seed, count, nominal_dims, sample_rate, rt60_range)?
        .par_iter()
        .map(|spec| image_method_rir(spec, options))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rir<T> {
    pub taps: Vec<T>,
    pub sample_rate: u32,
    pub spec: RoomSpec<T>,
}

impl<T: Real> Rir<T> {
    pub fn energy(&self) -> T {
        self.taps.iter().map(|v| *v * *v).sum()
    }

    pub fn first_nonzero(&self) -> Option<usize> {
        self.taps.iter().position(|v| *v != T::zero())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RirOptions {
    /// Spread each image over an 8-tap Hann-windowed sinc instead of rounding
    /// its delay to the nearest sample.
    pub fractional_delay: bool,
    /// Remove the DC build-up with a two-pole 100 Hz high-pass. With all
    /// reflection coefficients positive, images landing on the same sample
    /// add coherently at low frequencies and stretch the late decay.
    pub high_pass: bool,
}

impl Default for RirOptions {
    fn default() -> Self {
        RirOptions { fractional_delay: false, high_pass: true }
    }
}

const HIGH_PASS_HZ: f64 = 100.0;

const FRACTIONAL_TAPS: i64 = 8;

/// Image-method RIR for a rectangular room with uniform wall reflection
/// `beta = sqrt(1 - alpha)`. Images are summed while their delay falls
/// inside `max_rir_len`; each contributes `beta^reflections / (4 pi d)`.
pub fn image_method_rir<T: Real>(spec: &RoomSpec<T>, options: RirOptions) -> Result<Rir<T>> {
    let dims = spec.dims.map(|v| v.to_f64_lossy());
    let src = spec.src.map(|v| v.to_f64_lossy());
    let mic = spec.mic.map(|v| v.to_f64_lossy());
    let inside = |p: &[f64; 3]| (0..3).all(|i| p[i] > 0.0 && p[i] < dims[i]);
    if dims.iter().any(|d| !(*d > 0.0)) || !inside(&src) || !inside(&mic) {
        return Err(Error::InvalidArgument("source and microphone must lie strictly inside the room".into()));
    }
    if spec.sample_rate == 0 || spec.max_rir_len == 0 {
        return Err(Error::InvalidArgument("sample_rate and max_rir_len must be positive".into()));
    }
    let rt60 = spec.rt60.to_f64_lossy();
    let alpha = spec.sabine_absorption();
    if !(rt60 > 0.0) || !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::UnreachableRt60 { rt60, absorption: alpha });
    }
    let beta = (1.0 - alpha).sqrt();

    let fs = spec.sample_rate as f64;
    let len = spec.max_rir_len;
    let samples_per_meter = fs / SPEED_OF_SOUND;
    let max_dist = (len as f64 + FRACTIONAL_TAPS as f64) / samples_per_meter;
    let reach = |d: f64| (max_dist / (2.0 * d)).ceil() as i64 + 1;
    let (n1, n2, n3) = (reach(dims[0]), reach(dims[1]), reach(dims[2]));
    let mut h = vec![0.0f64; len];

    for mx in -n1..=n1 {
        for qx in 0..=1i64 {
            let dx = (1 - 2 * qx) as f64 * src[0] + 2.0 * mx as f64 * dims[0] - mic[0];
            if dx.abs() > max_dist {
                continue;
            }
            let rx = (mx - qx).abs() + mx.abs();
            for my in -n2..=n2 {
                for qy in 0..=1i64 {
                    let dy = (1 - 2 * qy) as f64 * src[1] + 2.0 * my as f64 * dims[1] - mic[1];
                    let dxy2 = dx * dx + dy * dy;
                    if dxy2 > max_dist * max_dist {
                        continue;
                    }
                    let ry = (my - qy).abs() + my.abs();
                    for mz in -n3..=n3 {
                        for qz in 0..=1i64 {
                            let dz = (1 - 2 * qz) as f64 * src[2] + 2.0 * mz as f64 * dims[2] - mic[2];
                            let dist = (dxy2 + dz * dz).sqrt();
                            if dist > max_dist {
                                continue;
                            }
                            let rz = (mz - qz).abs() + mz.abs();
                            let gain = beta.powi((rx + ry + rz) as i32) / (4.0 * std::f64::consts::PI * dist);
                            let delay = dist * samples_per_meter;
                            if options.fractional_delay {
                                add_fractional(&mut h, delay, gain);
                            } else {
                                let idx = delay.round() as usize;
                                if idx < len {
                                    h[idx] += gain;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    if h.iter().all(|v| *v == 0.0) {
        return Err(Error::InvalidArgument(format!(
            "max_rir_len {len} too short to contain the direct path"
        )));
    }
    if options.high_pass {
        high_pass(&mut h, fs);
    }
    Ok(Rir {
        taps: h.into_iter().map(T::of).collect(),
        sample_rate: spec.sample_rate,
        spec: *spec,
    })
}

fn high_pass(h: &mut [f64], fs: f64) {
    let w = 2.0 * std::f64::consts::PI * HIGH_PASS_HZ / fs;
    let r1 = (-w).exp();
    let b1 = 2.0 * r1 * w.cos();
    let b2 = -r1 * r1;
    let a1 = -(1.0 + r1);
    let (mut y1, mut y2) = (0.0f64, 0.0f64);
    for v in h.iter_mut() {
        let y0 = b1 * y1 + b2 * y2 + *v;
        *v = y0 + a1 * y1 + r1 * y2;
        y2 = y1;
        y1 = y0;
    }
}

fn add_fractional(h: &mut [f64], delay: f64, gain: f64) {
    let base = delay.floor() as i64;
    let half = FRACTIONAL_TAPS / 2;
    for n in base - half + 1..=base + half {
        if n < 0 || n as usize >= h.len() {
            continue;
        }
        let t = n as f64 - delay;
        let sinc = if t.abs() < 1e-12 {
            1.0
        } else {
            (std::f64::consts::PI * t).sin() / (std::f64::consts::PI * t)
        };
        let window = 0.5 * (1.0 + (std::f64::consts::PI * t / half as f64).cos());
        h[n as usize] += gain * sinc * window;
    }
}

/// Schroeder energy-decay curve in dB (0 dB at the first sample).
pub fn schroeder_curve<T: Real>(taps: &[T]) -> Vec<f64> {
    let mut acc = 0.0f64;
    let mut edc: Vec<f64> = taps
        .iter()
        .rev()
        .map(|v| {
            acc += v.to_f64_lossy().powi(2);
            acc
        })
        .collect();
    edc.reverse();
    let total = edc.first().copied().unwrap_or(0.0);
    edc.into_iter().map(|e| 10.0 * (e / total).log10()).collect()
}

const FIT_START_DB: f64 = -5.0;
const FIT_END_DB: f64 = -35.0;
const MIN_DECAY_DB: f64 = -40.0;
const MIN_FIT_POINTS: usize = 8;

/// RT60 from a least-squares line over the -5..-35 dB span of the
/// Schroeder curve, extrapolated to 60 dB (twice the 30 dB time).
pub fn estimate_rt60<T: Real>(rir: &Rir<T>) -> Result<T> {
    let last = rir
        .taps
        .iter()
        .rposition(|v| *v != T::zero())
        .ok_or_else(|| Error::InsufficientDecay("impulse response is all zeros".into()))?;
    let edc = schroeder_curve(&rir.taps[..=last]);
    let floor = edc[last];
    if floor > MIN_DECAY_DB {
        return Err(Error::InsufficientDecay(format!(
            "decay curve only reaches {floor:.1} dB, need {MIN_DECAY_DB} dB"
        )));
    }
    let fs = rir.sample_rate as f64;
    let pts: Vec<(f64, f64)> = edc
        .iter()
        .enumerate()
        .filter(|(_, v)| **v <= FIT_START_DB && **v >= FIT_END_DB)
        .map(|(i, v)| (i as f64 / fs, *v))
        .collect();
    if pts.len() < MIN_FIT_POINTS {
        return Err(Error::InsufficientDecay(format!(
            "only {} samples between {FIT_START_DB} and {FIT_END_DB} dB",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let md = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - md)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let slope = sxy / sxx;
    if !(slope < 0.0) {
        return Err(Error::InsufficientDecay("decay curve is not decreasing".into()));
    }
    Ok(T::of(2.0 * (-30.0 / slope)))
}

const NCIR_MAGIC: &[u8; 4] = b"NCIR";

/// `NCIR`, `u32` tap count, f32 LE taps, then the room as `key=value` lines.
pub fn write_ncir<T: Real>(rir: &Rir<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(8 + 4 * rir.taps.len() + 256);
    buf.extend_from_slice(NCIR_MAGIC);
    buf.extend_from_slice(&(rir.taps.len() as u32).to_le_bytes());
    for t in &rir.taps {
        buf.extend_from_slice(&(t.to_f64_lossy() as f32).to_le_bytes());
    }
    let s = &rir.spec;
    let f = |v: T| v.to_f64_lossy();
    let text = format!(
        "length={}\nwidth={}\nheight={}\nsrc_x={}\nsrc_y={}\nsrc_z={}\nmic_x={}\nmic_y={}\nmic_z={}\nrt60={}\nsample_rate={}\nmax_rir_len={}\n",
        f(s.dims[0]), f(s.dims[1]), f(s.dims[2]),
        f(s.src[0]), f(s.src[1]), f(s.src[2]),
        f(s.mic[0]), f(s.mic[1]), f(s.mic[2]),
        f(s.rt60), s.sample_rate, s.max_rir_len
    );
    buf.extend_from_slice(text.as_bytes());
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_ncir<T: Real>(path: impl AsRef<Path>) -> Result<Rir<T>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |reason: String| Error::Format { format: "NCIR", reason };
    if bytes.len() < 8 || &bytes[..4] != NCIR_MAGIC {
        return Err(bad("missing magic".into()));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let end = 8 + 4 * n;
    if bytes.len() < end {
        return Err(bad("truncated taps".into()));
    }
    let taps: Vec<T> = bytes[8..end]
        .chunks_exact(4)
        .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
        .collect();
    let text = std::str::from_utf8(&bytes[end..]).map_err(|e| bad(e.to_string()))?;
    let kv: std::collections::HashMap<&str, &str> =
        text.lines().filter_map(|l| l.split_once('=')).collect();
    let num = |k: &str| -> Result<f64> {
        kv.get(k)
            .ok_or_else(|| bad(format!("missing key {k}")))?
            .parse::<f64>()
            .map_err(|e| bad(format!("{k}: {e}")))
    };
    let spec = RoomSpec {
        dims: [T::of(num("length")?), T::of(num("width")?), T::of(num("height")?)],
        src: [T::of(num("src_x")?), T::of(num("src_y")?), T::of(num("src_z")?)],
        mic: [T::of(num("mic_x")?), T::of(num("mic_y")?), T::of(num("mic_z")?)],
        rt60: T::of(num("rt60")?),
        sample_rate: num("sample_rate")? as u32,
        max_rir_len: num("max_rir_len")? as usize,
    };
    Ok(Rir {
        taps,
        sample_rate: spec.sample_rate,
        spec,
    })
}

/// CSV with columns `index,time_s,amplitude`.
pub fn write_rir_csv<T: Real>(rir: &Rir<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "index,time_s,amplitude").map_err(io)?;
    for (i, t) in rir.taps.iter().enumerate() {
        writeln!(w, "{},{},{}", i, i as f64 / rir.sample_rate as f64, t.to_f64_lossy()).map_err(io)?;
    }
    w.flush().map_err(io)
}
