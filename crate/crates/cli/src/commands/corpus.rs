use std::path::Path;

use ncderev::corpus::{build_corpus, synth_corpus, write_manifest, SynthConfig};
use ncderev::dsp::{read_wav, write_wav, Waveform};
use ncderev::rir::{make_rir_set_in, make_rir_specs_in, write_ncir, Rir, RirOptions, NOMINAL_DIMS};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::workdir::{ensure_dir, Workdir};

/// Reverberant waveforms peaking above this are scaled down to it so the
/// 16-bit files do not clip.
const MAX_PEAK: f64 = 0.99;

fn read_clean_dir(dir: &Path, sample_rate: u32) -> Result<Vec<(String, Waveform<f64>)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Data(format!("cannot list {}: {e}", dir.display())))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::Data(e.to_string()))?.path();
        if path.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")) {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Data(format!("no .wav files in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            if id.is_empty() || id.contains(',') || id.contains(char::is_whitespace) {
                return Err(CliError::Data(format!("unusable utterance id from {}", p.display())));
            }
            let wave = read_wav(p)?;
            if wave.sample_rate != sample_rate {
                return Err(ncderev::Error::SampleRateMismatch(wave.sample_rate, sample_rate).into());
            }
            Ok((id, wave))
        })
        .collect()
}

fn limit_peak(mut wave: Waveform<f64>) -> Waveform<f64> {
    let peak = wave.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > MAX_PEAK {
        let g = MAX_PEAK / peak;
        wave.samples.iter_mut().for_each(|v| *v *= g);
    }
    wave
}

pub fn make_corpus(cfg: &ExperimentConfig, wd: &Workdir) -> Result<()> {
    let c = &cfg.corpus;
    let clean = match &c.clean_dir {
        Some(dir) => read_clean_dir(dir, c.sample_rate)?,
        None => synth_corpus(
            cfg.seed,
            c.synthetic_utterances,
            &SynthConfig { sample_rate: c.sample_rate, min_secs: c.min_secs, max_secs: c.max_secs },
        )?,
    };
    let count = cfg.rir.count.unwrap_or(clean.len());
    let range = (cfg.rir.rt60_min, cfg.rir.rt60_max);
    let rirs: Vec<Rir<f64>> = if cfg.rir.identity {
        make_rir_specs_in(cfg.seed, count, NOMINAL_DIMS, c.sample_rate, range)?
            .into_iter()
            .map(|spec| Rir { taps: vec![1.0], sample_rate: c.sample_rate, spec })
            .collect()
    } else {
        let options = RirOptions { fractional_delay: cfg.rir.fractional_delay, high_pass: cfg.rir.high_pass };
        make_rir_set_in(cfg.seed, count, NOMINAL_DIMS, c.sample_rate, range, options)?
    };
    let (items, mut manifest) = build_corpus(&clean, &rirs, cfg.seed, c.unique_rirs)?;
    if cfg.rir.identity {
        for row in &mut manifest {
            row.rt60 = 0.0;
            row.distance = 0.0;
        }
    }

    for sub in ["clean", "reverb", "rirs"] {
        ensure_dir(&wd.root.join(sub))?;
    }
    for item in items {
        write_wav(&item.clean, wd.clean_wav(&item.id))?;
        write_wav(&limit_peak(item.reverb), wd.reverb_wav(&item.id))?;
    }
    let mut used: Vec<usize> = manifest.iter().map(|r| r.rir_id).collect();
    used.sort_unstable();
    used.dedup();
    for id in used {
        write_ncir(&rirs[id], wd.rir(id))?;
    }
    write_manifest(&manifest, wd.manifest())?;
    Ok(())
}
